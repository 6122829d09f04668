//! Batches, returns and advantages, the policy-gradient estimators, the
//! Stein-identity residual and estimator-variance measurement.
//!
//! All estimators drop the `gamma^t` state weighting and average per-sample
//! terms in step order, so results are bit-reproducible.

pub(crate) mod grads;
mod identity;
mod variance;

pub use grads::{
    grad_qprop_form, grad_reparam, grad_stein, grad_value_baseline, grad_vanilla,
};
pub use identity::{stein_identity_residual, stein_identity_residual_with, BaselinePhi, SteinFunction, VjpFn};
pub use variance::{estimator_variance, variance_of, VarianceSummary};

use crate::baseline::{FitData, ValueFunction};
use crate::envs::Trajectory;
use crate::error::{check_len, Error, Result};
use serde::{Deserialize, Serialize};

/// Discount and GAE mixing used to build advantages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReturnConfig {
    pub gamma: f64,
    pub lambda: f64,
}

impl Default for ReturnConfig {
    fn default() -> Self {
        Self {
            gamma: 0.995,
            lambda: 0.98,
        }
    }
}

/// Discounted reward-to-go `sum_{j >= t} gamma^{j-t} r_j`.
pub fn mc_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

/// GAE from rewards and `values` of length `T + 1`, where `values[T]` is
/// the bootstrap value after the last step (0 for a terminal state).
pub fn gae_from_values(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
    assert_eq!(values.len(), rewards.len() + 1);
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        let delta = rewards[t] + gamma * values[t + 1] - values[t];
        acc = delta + gamma * lambda * acc;
        out[t] = acc;
    }
    out
}

/// GAE for a trajectory. A time-limit truncation bootstraps with
/// `value_fn(final_state)`; a terminal step uses 0.
pub fn gae(
    traj: &Trajectory,
    value_fn: impl Fn(&[f64]) -> Result<f64>,
    gamma: f64,
    lambda: f64,
) -> Result<Vec<f64>> {
    let mut values = traj
        .steps
        .iter()
        .map(|s| value_fn(&s.state))
        .collect::<Result<Vec<f64>>>()?;
    values.push(if traj.truncated() { value_fn(&traj.final_state)? } else { 0.0 });
    Ok(gae_from_values(&traj.rewards(), &values, gamma, lambda))
}

/// A collected batch with its flattened per-step view.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub trajectories: Vec<Trajectory>,
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub noise: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    /// Discounted reward-to-go within each trajectory.
    pub returns: Vec<f64>,
    /// `V(s_t)` of the value function the batch was built with.
    pub values: Vec<f64>,
    pub advantages: Vec<f64>,
    /// `Q_hat_t = A_hat_t + V(s_t)`.
    pub q_hat: Vec<f64>,
    /// Shift and scale applied to residuals by the estimators
    /// (`0` and `1` unless [`normalize_advantages`](Self::normalize_advantages)
    /// was called).
    pub adv_shift: f64,
    pub adv_scale: f64,
}

impl Batch {
    pub fn new(trajectories: Vec<Trajectory>, value: &ValueFunction, ret: &ReturnConfig) -> Result<Self> {
        let mut b = Batch {
            trajectories: Vec::new(),
            states: Vec::new(),
            actions: Vec::new(),
            noise: Vec::new(),
            rewards: Vec::new(),
            returns: Vec::new(),
            values: Vec::new(),
            advantages: Vec::new(),
            q_hat: Vec::new(),
            adv_shift: 0.0,
            adv_scale: 1.0,
        };
        for traj in &trajectories {
            let mut values = traj
                .steps
                .iter()
                .map(|s| value.eval(&s.state))
                .collect::<Result<Vec<f64>>>()?;
            let boot = if traj.truncated() { value.eval(&traj.final_state)? } else { 0.0 };
            values.push(boot);
            let rewards = traj.rewards();
            let adv = gae_from_values(&rewards, &values, ret.gamma, ret.lambda);
            b.returns.extend(mc_returns(&rewards, ret.gamma));
            for (t, step) in traj.steps.iter().enumerate() {
                b.states.push(step.state.clone());
                b.actions.push(step.action.clone());
                b.noise.push(step.noise.clone());
                b.q_hat.push(adv[t] + values[t]);
            }
            b.rewards.extend(rewards);
            values.pop();
            b.values.extend(values);
            b.advantages.extend(adv);
        }
        b.trajectories = trajectories;
        if b.advantages.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                context: "batch advantages".into(),
            });
        }
        Ok(b)
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Replaces `Q_hat` (e.g. by an oracle) and recomputes `A_hat = Q_hat - V`.
    pub fn set_q_hat(&mut self, q_hat: Vec<f64>) -> Result<()> {
        check_len("q_hat", self.len(), q_hat.len())?;
        self.advantages = q_hat.iter().zip(&self.values).map(|(q, v)| q - v).collect();
        self.q_hat = q_hat;
        Ok(())
    }

    /// Standardizes the residuals used by the estimators to zero mean and
    /// unit standard deviation of `A_hat` over the batch.
    pub fn normalize_advantages(&mut self) {
        let n = self.len() as f64;
        if n < 2.0 {
            return;
        }
        let mean = self.advantages.iter().sum::<f64>() / n;
        let var = self.advantages.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
        self.adv_shift = mean;
        self.adv_scale = var.sqrt().max(1e-8);
    }

    pub fn normalized(&self) -> bool {
        self.adv_shift != 0.0 || self.adv_scale != 1.0
    }

    /// `(state, action, noise, Q_hat)` columns for baseline fitting.
    pub fn fit_data(&self) -> FitData<'_> {
        FitData {
            states: &self.states,
            actions: &self.actions,
            noise: &self.noise,
            targets: &self.q_hat,
        }
    }

    /// Mean undiscounted reward sum per trajectory.
    pub fn mean_episode_return(&self) -> f64 {
        if self.trajectories.is_empty() {
            return 0.0;
        }
        self.trajectories.iter().map(|t| t.total_reward()).sum::<f64>() / self.trajectories.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SigmaFormula {
    /// Covariance term from the action score times `grad_a psi`.
    Score,
    /// Covariance term from the action Hessian of `psi`; linear and
    /// quadratic baselines only.
    Hessian,
}

impl SigmaFormula {
    pub fn name(self) -> &'static str {
        match self {
            SigmaFormula::Score => "score",
            SigmaFormula::Hessian => "hessian",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "score" => Ok(SigmaFormula::Score),
            "hessian" => Ok(SigmaFormula::Hessian),
            other => Err(Error::Parse(format!("unknown sigma formula `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Vanilla,
    Value,
    Stein,
    Reparam,
    Qprop,
    Ppo,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Vanilla => "vanilla",
            EstimatorKind::Value => "value",
            EstimatorKind::Stein => "stein",
            EstimatorKind::Reparam => "reparam",
            EstimatorKind::Qprop => "qprop",
            EstimatorKind::Ppo => "ppo",
        }
    }
}

/// A gradient estimate in policy parameter order: the mean-network block
/// `[0, mean_params)` followed by one log-std entry per action coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub values: Vec<f64>,
    pub mean_params: usize,
    pub n_samples: usize,
    pub estimator: EstimatorKind,
    pub sigma_formula: Option<SigmaFormula>,
}

impl GradientEstimate {
    pub fn mean_block(&self) -> &[f64] {
        &self.values[..self.mean_params]
    }

    pub fn log_std_block(&self) -> &[f64] {
        &self.values[self.mean_params..]
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Name of coordinate `i`, e.g. `mean[17]` or `log_std[0]`.
    pub fn coordinate_name(&self, i: usize) -> String {
        if i < self.mean_params {
            format!("mean[{i}]")
        } else {
            format!("log_std[{}]", i - self.mean_params)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn returns_small_cases() {
        assert_eq!(mc_returns(&[1.0, 1.0], 0.5), vec![1.5, 1.0]);
        assert_eq!(mc_returns(&[3.0, -1.0, 2.0], 0.0), vec![3.0, -1.0, 2.0]);
    }

    #[test]
    fn gae_small_cases() {
        assert_eq!(gae_from_values(&[1.0], &[0.0, 0.0], 0.9, 0.5), vec![1.0]);
        // r_t = V(s_t) - gamma V(s_{t+1}) gives zero TD errors.
        let v = [1.0, 2.0, -0.5, 0.25];
        let g = 0.9;
        let r: Vec<f64> = (0..3).map(|t| v[t] - g * v[t + 1]).collect();
        assert!(gae_from_values(&r, &v, g, 0.7).iter().all(|a| a.abs() < 1e-15));
    }

    #[test]
    fn shipped_defaults() {
        let d = ReturnConfig::default();
        assert_eq!((d.gamma, d.lambda), (0.995, 0.98));
    }
}
