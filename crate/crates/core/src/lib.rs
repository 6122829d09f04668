//! Stein control variates for policy-gradient estimation.
//!
//! The crate provides Gaussian policies over small dense networks, the
//! action-dependent baseline families (value, linear, quadratic, MLP) with
//! their two fitting objectives, every gradient estimator built on top of
//! them, analytically tractable environments, a KL-penalised PPO loop and
//! the experiment harness behind the `stein-cv` command line tool.

pub mod baseline;
pub mod diffnet;
pub mod envs;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod numdiff;
pub mod optim;
pub mod policy;
pub mod ppo;
pub mod rng;

pub use baseline::{Baseline, BaselineKind, Psi, ValueFunction};
pub use diffnet::{Activation, DenseNet, Layer};
pub use error::{Error, Result};
pub use estimator::{Batch, GradientEstimate, SigmaFormula};
pub use policy::{GaussianPolicy, NoiseRecord};
