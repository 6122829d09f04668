use super::{Batch, EstimatorKind, GradientEstimate, SigmaFormula};
use crate::baseline::{Baseline, BaselineKind, ValueFunction};
use crate::error::{check_len, Error, Result};
use crate::policy::GaussianPolicy;

fn check(batch: &Batch, policy: &GaussianPolicy) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    check_len("batch state dim", policy.state_dim(), batch.states[0].len())?;
    check_len("batch action dim", policy.action_dim(), batch.actions[0].len())
}

fn check_baseline(batch: &Batch, policy: &GaussianPolicy, b: &Baseline) -> Result<()> {
    check(batch, policy)?;
    check_len("baseline state dim", policy.state_dim(), b.state_dim())?;
    check_len("baseline action dim", policy.action_dim(), b.action_dim())
}

fn finish(
    mut acc: Vec<f64>,
    policy: &GaussianPolicy,
    n: usize,
    estimator: EstimatorKind,
    sigma_formula: Option<SigmaFormula>,
) -> Result<GradientEstimate> {
    let inv = 1.0 / n as f64;
    acc.iter_mut().for_each(|v| *v *= inv);
    if let Some(i) = acc.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: format!("{} gradient coordinate {i}", estimator.name()),
        });
    }
    Ok(GradientEstimate {
        values: acc,
        mean_params: policy.mean_param_count(),
        n_samples: n,
        estimator,
        sigma_formula,
    })
}

/// `(1/n) sum_t score_theta(s_t, a_t) Q_hat_t`.
pub fn grad_vanilla(batch: &Batch, policy: &GaussianPolicy) -> Result<GradientEstimate> {
    check(batch, policy)?;
    let mut acc = vec![0.0; policy.param_count()];
    for t in 0..batch.len() {
        let (s, a) = (&batch.states[t], &batch.actions[t]);
        let mean = policy.mean(s)?;
        policy.accumulate_score_theta(s, &mean, a, batch.q_hat[t], &mut acc)?;
    }
    finish(acc, policy, batch.len(), EstimatorKind::Vanilla, None)
}

/// `(1/n) sum_t score_theta(s_t, a_t) (Q_hat_t - V(s_t))`.
pub fn grad_value_baseline(batch: &Batch, policy: &GaussianPolicy, value: &ValueFunction) -> Result<GradientEstimate> {
    check(batch, policy)?;
    let mut acc = vec![0.0; policy.param_count()];
    for t in 0..batch.len() {
        let (s, a) = (&batch.states[t], &batch.actions[t]);
        let mean = policy.mean(s)?;
        let rho = (batch.q_hat[t] - value.eval(s)? - batch.adv_shift) / batch.adv_scale;
        policy.accumulate_score_theta(s, &mean, a, rho, &mut acc)?;
    }
    finish(acc, policy, batch.len(), EstimatorKind::Value, None)
}

/// Residual and scaled action derivatives of `psi` for one sample.
pub(crate) struct SteinSample {
    pub mean: Vec<f64>,
    pub rho: f64,
    pub grad_a: Vec<f64>,
}

/// `rho = (Q_hat - phi - shift) / scale` and `grad_a psi / scale`.
pub(crate) fn stein_sample(
    batch: &Batch,
    t: usize,
    policy: &GaussianPolicy,
    b: &Baseline,
) -> Result<SteinSample> {
    let (s, a) = (&batch.states[t], &batch.actions[t]);
    let mean = policy.mean(s)?;
    let ctx: &[f64] = if b.needs_policy_mean() { &mean } else { &[] };
    let (psi, grad) = b.psi_eval_grad_ctx(s, a, ctx)?;
    let phi = b.value_eval(s)? + psi;
    let rho = (batch.q_hat[t] - phi - batch.adv_shift) / batch.adv_scale;
    let grad_a = grad.iter().map(|g| g / batch.adv_scale).collect();
    Ok(SteinSample { mean, rho, grad_a })
}

/// Adds `w * [score_theta * rho + grad_theta f * grad_a psi]` with the
/// covariance block of `grad_theta f * grad_a psi` given by `formula`:
/// `Score` uses `-(grad_a log pi)_i (grad_a psi)_i sigma_i^2 = (a_i - mu_i)
/// (grad_a psi)_i`, `Hessian` uses `(grad_aa psi)_ii sigma_i^2`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn accumulate_stein(
    policy: &GaussianPolicy,
    kind: BaselineKind,
    state: &[f64],
    action: &[f64],
    sample: &SteinSample,
    hess_diag: &[f64],
    formula: SigmaFormula,
    w: f64,
    acc: &mut [f64],
) -> Result<()> {
    policy.accumulate_score_theta(state, &sample.mean, action, w * sample.rho, acc)?;
    if kind == BaselineKind::Value {
        return Ok(());
    }
    let m = policy.mean_param_count();
    policy
        .mean_net()
        .accumulate_param_grad(state, &sample.grad_a, w, &mut acc[..m])?;
    let log_std = policy.log_std();
    for i in 0..policy.action_dim() {
        acc[m + i] += match formula {
            SigmaFormula::Score => w * (action[i] - sample.mean[i]) * sample.grad_a[i],
            SigmaFormula::Hessian => w * hess_diag[i] * (2.0 * log_std[i]).exp(),
        };
    }
    Ok(())
}

/// Scaled `diag(grad_aa psi)` for `Hessian`, or empty for `Score`.
pub(crate) fn hessian_diag(b: &Baseline, formula: SigmaFormula, scale: f64) -> Result<Vec<f64>> {
    match formula {
        SigmaFormula::Score => Ok(Vec::new()),
        SigmaFormula::Hessian => Ok(b.hessian_diag()?.iter().map(|h| h / scale).collect()),
    }
}

/// Stein control-variate estimator in advantage form.
pub fn grad_stein(
    batch: &Batch,
    policy: &GaussianPolicy,
    baseline: &Baseline,
    formula: SigmaFormula,
) -> Result<GradientEstimate> {
    check_baseline(batch, policy, baseline)?;
    let hdiag = hessian_diag(baseline, formula, batch.adv_scale)?;
    let kind = baseline.kind();
    let mut acc = vec![0.0; policy.param_count()];
    for t in 0..batch.len() {
        let sample = stein_sample(batch, t, policy, baseline)?;
        accumulate_stein(
            policy,
            kind,
            &batch.states[t],
            &batch.actions[t],
            &sample,
            &hdiag,
            formula,
            1.0,
            &mut acc,
        )?;
    }
    finish(acc, policy, batch.len(), EstimatorKind::Stein, Some(formula))
}

/// Pathwise estimator `(1/n) sum_t grad_theta f(s_t, xi_t) grad_a phi(s_t, a_t)`.
pub fn grad_reparam(batch: &Batch, policy: &GaussianPolicy, baseline: &Baseline) -> Result<GradientEstimate> {
    check_baseline(batch, policy, baseline)?;
    let mut acc = vec![0.0; policy.param_count()];
    for t in 0..batch.len() {
        let (s, a) = (&batch.states[t], &batch.actions[t]);
        let ctx = baseline.policy_context(policy, s)?;
        let (_, grad) = baseline.psi_eval_grad_ctx(s, a, &ctx)?;
        policy.accumulate_reparam_vjp(s, &batch.noise[t], &grad, 1.0, &mut acc)?;
    }
    finish(acc, policy, batch.len(), EstimatorKind::Reparam, None)
}

/// Q-prop form for a linear baseline: the mean block uses
/// `grad_theta mu(s) grad_a q(s, mu(s))`, and the covariance block has no
/// control-variate correction because a linear `phi` has zero curvature.
pub fn grad_qprop_form(batch: &Batch, policy: &GaussianPolicy, baseline: &Baseline) -> Result<GradientEstimate> {
    check_baseline(batch, policy, baseline)?;
    if baseline.kind() != BaselineKind::Linear {
        return Err(Error::InvalidArgument(format!(
            "q-prop form needs a linear baseline, got {}",
            baseline.kind().name()
        )));
    }
    let m = policy.mean_param_count();
    let mut acc = vec![0.0; policy.param_count()];
    for t in 0..batch.len() {
        let s = &batch.states[t];
        let sample = stein_sample(batch, t, policy, baseline)?;
        policy.accumulate_score_theta(s, &sample.mean, &batch.actions[t], sample.rho, &mut acc)?;
        policy
            .mean_net()
            .accumulate_param_grad(s, &sample.grad_a, 1.0, &mut acc[..m])?;
    }
    finish(acc, policy, batch.len(), EstimatorKind::Qprop, Some(SigmaFormula::Hessian))
}
