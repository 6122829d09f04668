//! Closed-form policy evaluation and Riccati solutions for [`Lqr`].
//!
//! Gains are row-major `d_a x d_s` and describe the policy
//! `a = -K s + sigma ⊙ xi`.

use super::Lqr;
use crate::error::{check_len, Error, Result};
use nalgebra::DMatrix;

const TOL: f64 = 1e-12;
const MAX_ITERS: usize = 10_000_000;

/// `Q(s, a) = s^T Hss s + 2 s^T Hsa a + a^T Haa a + constant`, together with
/// the state value `V(s) = s^T P s + v0` it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticQ {
    pub hss: DMatrix<f64>,
    pub hsa: DMatrix<f64>,
    pub haa: DMatrix<f64>,
    pub constant: f64,
    pub p: DMatrix<f64>,
    pub v0: f64,
}

impl QuadraticQ {
    pub fn eval(&self, s: &[f64], a: &[f64]) -> f64 {
        let s = col(s);
        let a = col(a);
        (s.transpose() * &self.hss * &s)[0] + 2.0 * (s.transpose() * &self.hsa * &a)[0] + (a.transpose() * &self.haa * &a)[0]
            + self.constant
    }

    pub fn value(&self, s: &[f64]) -> f64 {
        let s = col(s);
        (s.transpose() * &self.p * &s)[0] + self.v0
    }

    /// `grad_a Q(s, a)`.
    pub fn action_grad(&self, s: &[f64], a: &[f64]) -> Vec<f64> {
        let g = 2.0 * self.hsa.transpose() * col(s) + 2.0 * &self.haa * col(a);
        g.iter().copied().collect()
    }
}

fn col(v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v)
}

fn mats(lqr: &Lqr) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let (ds, da) = (lqr.state_dim, lqr.action_dim);
    (
        DMatrix::from_row_slice(ds, ds, &lqr.a),
        DMatrix::from_row_slice(ds, da, &lqr.b),
        DMatrix::from_row_slice(ds, ds, &lqr.qc),
        DMatrix::from_row_slice(da, da, &lqr.rc),
    )
}

/// `V(s) = s^T P s + v0` of the discounted infinite-horizon value of the
/// linear-Gaussian policy, by fixed-point iteration of
/// `P <- -(Qc + K^T Rc K) + gamma (A - BK)^T P (A - BK)`.
pub fn lqr_value(lqr: &Lqr, gain: &[f64], sigma: &[f64]) -> Result<(DMatrix<f64>, f64)> {
    lqr.validate()?;
    let (ds, da) = (lqr.state_dim, lqr.action_dim);
    check_len("gain", da * ds, gain.len())?;
    check_len("sigma", da, sigma.len())?;
    let (a, b, qc, rc) = mats(lqr);
    let k = DMatrix::from_row_slice(da, ds, gain);
    let closed = &a - &b * &k;
    let g = lqr.gamma;
    if g >= 1.0 {
        return Err(Error::Divergence("policy evaluation needs gamma < 1".into()));
    }
    let radius = (g.sqrt() * &closed)
        .complex_eigenvalues()
        .iter()
        .fold(0.0f64, |m, z| m.max(z.norm()));
    if radius >= 1.0 {
        return Err(Error::Divergence(format!(
            "spectral radius of sqrt(gamma)(A - BK) is {radius:.6} >= 1"
        )));
    }
    let stage = -(&qc + k.transpose() * &rc * &k);
    let mut p = DMatrix::zeros(ds, ds);
    let mut converged = false;
    for _ in 0..MAX_ITERS {
        let next = &stage + g * closed.transpose() * &p * &closed;
        let delta = (&next - &p).amax();
        p = next;
        if delta < TOL * (1.0 + p.amax()) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Divergence("policy evaluation did not converge".into()));
    }
    let sigma_a = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(da, sigma.iter().map(|s| s * s)));
    let v0 = (-(&rc * &sigma_a).trace() + g * (b.transpose() * &p * &b * &sigma_a).trace()) / (1.0 - g);
    Ok((p, v0))
}

/// Exact `Q^pi(s, a) = r(s, a) + gamma E[V^pi(A s + B a)]` for the policy
/// `a = -K s + sigma ⊙ xi`.
pub fn lqr_q_oracle(lqr: &Lqr, gain: &[f64], sigma: &[f64]) -> Result<QuadraticQ> {
    let (p, v0) = if lqr.gamma == 0.0 {
        lqr.validate()?;
        (DMatrix::zeros(lqr.state_dim, lqr.state_dim), 0.0)
    } else {
        lqr_value(lqr, gain, sigma)?
    };
    let (a, b, qc, rc) = mats(lqr);
    let g = lqr.gamma;
    let (hss, hsa, haa, constant) = if g == 0.0 {
        (-qc, DMatrix::zeros(lqr.state_dim, lqr.action_dim), -rc, 0.0)
    } else {
        (
            -qc + g * a.transpose() * &p * &a,
            g * a.transpose() * &p * &b,
            -rc + g * b.transpose() * &p * &b,
            g * v0,
        )
    };
    Ok(QuadraticQ {
        hss,
        hsa,
        haa,
        constant,
        p,
        v0,
    })
}

/// Optimal deterministic controller. `cost` is the positive cost-to-go
/// matrix (`V(s) = -s^T cost s`) and `expected_return` the optimal return
/// averaged over the initial-state distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    pub gain: Vec<f64>,
    pub cost: DMatrix<f64>,
    pub expected_return: f64,
}

impl RiccatiSolution {
    /// Optimal return from a given initial state, `-s^T cost s`.
    pub fn return_from(&self, s: &[f64]) -> f64 {
        let s = col(s);
        -(s.transpose() * &self.cost * &s)[0]
    }
}

fn riccati_step(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    qc: &DMatrix<f64>,
    rc: &DMatrix<f64>,
    p: &DMatrix<f64>,
    g: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let m = rc + g * b.transpose() * p * b;
    let inv = m
        .try_inverse()
        .ok_or_else(|| Error::Divergence("singular Riccati system".into()))?;
    let k = g * inv * b.transpose() * p * a;
    let closed = a - b * &k;
    let next = qc + k.transpose() * rc * &k + g * closed.transpose() * p * &closed;
    Ok((next, k))
}

/// Undiscounted optimum over the environment's horizon `T` (time-varying
/// gains); `gain` is the first-step gain.
pub fn optimal_finite_horizon(lqr: &Lqr) -> Result<RiccatiSolution> {
    lqr.validate()?;
    let (a, b, qc, rc) = mats(lqr);
    let mut p = DMatrix::zeros(lqr.state_dim, lqr.state_dim);
    let mut k = DMatrix::zeros(lqr.action_dim, lqr.state_dim);
    for _ in 0..lqr.horizon {
        let (next, kk) = riccati_step(&a, &b, &qc, &rc, &p, 1.0)?;
        p = next;
        k = kk;
    }
    let expected_return = -lqr.s0_scale * lqr.s0_scale * p.trace();
    Ok(RiccatiSolution {
        gain: k.transpose().iter().copied().collect(),
        cost: p,
        expected_return,
    })
}

/// Discounted infinite-horizon optimum; `expected_return` is the discounted
/// value averaged over initial states.
pub fn optimal_stationary(lqr: &Lqr) -> Result<RiccatiSolution> {
    lqr.validate()?;
    let (a, b, qc, rc) = mats(lqr);
    let mut p = qc.clone();
    for _ in 0..MAX_ITERS {
        let (next, k) = riccati_step(&a, &b, &qc, &rc, &p, lqr.gamma)?;
        let delta = (&next - &p).amax();
        p = next;
        if !p.amax().is_finite() {
            return Err(Error::Divergence("Riccati iteration diverged".into()));
        }
        if delta < TOL * (1.0 + p.amax()) {
            let expected_return = -lqr.s0_scale * lqr.s0_scale * p.trace();
            return Ok(RiccatiSolution {
                gain: k.transpose().iter().copied().collect(),
                cost: p,
                expected_return,
            });
        }
    }
    Err(Error::Divergence("Riccati iteration did not converge".into()))
}
