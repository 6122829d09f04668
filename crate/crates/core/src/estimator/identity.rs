use crate::baseline::Baseline;
use crate::error::{check_len, Result};
use crate::policy::GaussianPolicy;
use crate::rng::Rng;

/// A scalar function of `(state, action)` with an action gradient.
pub trait SteinFunction {
    fn value(&self, state: &[f64], action: &[f64]) -> Result<f64>;
    fn action_grad(&self, state: &[f64], action: &[f64]) -> Result<Vec<f64>>;
}

/// `phi_w` of a baseline, evaluated against `policy` (needed by the linear
/// kind).
pub struct BaselinePhi<'a> {
    pub baseline: &'a Baseline,
    pub policy: &'a GaussianPolicy,
}

impl SteinFunction for BaselinePhi<'_> {
    fn value(&self, state: &[f64], action: &[f64]) -> Result<f64> {
        self.baseline.phi_eval(state, action, self.policy)
    }

    fn action_grad(&self, state: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        self.baseline.phi_action_grad(state, action, self.policy)
    }
}

/// `(policy, state, noise, v) -> grad_theta f_theta(state, noise) . v`.
pub type VjpFn<'a> = &'a (dyn Fn(&GaussianPolicy, &[f64], &[f64], &[f64]) -> Result<Vec<f64>> + Sync);

/// Relative Monte Carlo residual of
/// `E[grad_theta log pi(a|s) phi(s, a)] = E[grad_theta f_theta(s, xi) grad_a phi(s, a)]`
/// at a fixed state from `n` draws: `|LHS - RHS| / max(|RHS|, 1)`.
pub fn stein_identity_residual(
    policy: &GaussianPolicy,
    phi: &dyn SteinFunction,
    state: &[f64],
    n: usize,
    rng: &mut Rng,
) -> Result<f64> {
    stein_identity_residual_with(policy, phi, state, n, rng, &|p, s, xi, v| p.reparam_vjp(s, xi, v))
}

/// [`stein_identity_residual`] with a caller-supplied pathwise product.
pub fn stein_identity_residual_with(
    policy: &GaussianPolicy,
    phi: &dyn SteinFunction,
    state: &[f64],
    n: usize,
    rng: &mut Rng,
    vjp: VjpFn<'_>,
) -> Result<f64> {
    check_len("state", policy.state_dim(), state.len())?;
    let p = policy.param_count();
    let mut lhs = vec![0.0; p];
    let mut rhs = vec![0.0; p];
    let mean = policy.mean(state)?;
    for _ in 0..n {
        let (action, noise) = policy.sample_action(state, rng)?;
        let f = phi.value(state, &action)?;
        policy.accumulate_score_theta(state, &mean, &action, f, &mut lhs)?;
        let g = phi.action_grad(state, &action)?;
        let r = vjp(policy, state, &noise.0, &g)?;
        check_len("pathwise product", p, r.len())?;
        rhs.iter_mut().zip(&r).for_each(|(acc, v)| *acc += v);
    }
    let inv = 1.0 / n.max(1) as f64;
    let diff = lhs
        .iter()
        .zip(&rhs)
        .map(|(l, r)| ((l - r) * inv).powi(2))
        .sum::<f64>()
        .sqrt();
    let rhs_norm = rhs.iter().map(|r| (r * inv).powi(2)).sum::<f64>().sqrt();
    Ok(diff / rhs_norm.max(1.0))
}
