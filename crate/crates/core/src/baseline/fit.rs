//! Value regression, FitQ regression and the Gaussian MinVar objective.

use super::{Baseline, ValueFunction};
use crate::error::{check_len, Error, Result};
use crate::optim::Adam;
use crate::policy::GaussianPolicy;
use crate::rng::{self, Rng};
use rand::seq::index;

/// Borrowed column view of a fitting dataset. `actions` and `noise` may be
/// empty for value regression; `noise` is unused by the objectives, which
/// recompute the action score from the policy.
#[derive(Debug, Clone, Copy)]
pub struct FitData<'a> {
    pub states: &'a [Vec<f64>],
    pub actions: &'a [Vec<f64>],
    pub noise: &'a [Vec<f64>],
    pub targets: &'a [f64],
}

impl<'a> FitData<'a> {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    fn check(&self, need_actions: bool) -> Result<()> {
        check_len("fit states", self.targets.len(), self.states.len())?;
        if need_actions {
            check_len("fit actions", self.targets.len(), self.actions.len())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub steps: usize,
    pub lr: f64,
    /// Minibatch size; 0 means the full dataset every step.
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            steps: 500,
            lr: 1e-3,
            batch_size: 0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitReport {
    /// Objective on the full dataset before fitting.
    pub objective_before: f64,
    pub objective_after: f64,
    pub steps: usize,
    /// True when there was nothing to fit.
    pub noop: bool,
}

impl FitReport {
    fn noop(objective: f64) -> Self {
        Self {
            objective_before: objective,
            objective_after: objective,
            steps: 0,
            noop: true,
        }
    }
}

struct Minibatches {
    n: usize,
    size: usize,
    rng: Rng,
    all: Vec<usize>,
}

impl Minibatches {
    fn new(n: usize, opts: &FitOptions) -> Self {
        let size = if opts.batch_size == 0 || opts.batch_size >= n { n } else { opts.batch_size };
        Self {
            n,
            size,
            rng: rng::stream(opts.seed, rng::stream_id(rng::purpose::FIT, 0, 0)),
            all: (0..n).collect(),
        }
    }

    fn next(&mut self) -> Vec<usize> {
        if self.size == self.n {
            self.all.clone()
        } else {
            let mut idx = index::sample(&mut self.rng, self.n, self.size).into_vec();
            idx.sort_unstable();
            idx
        }
    }
}

/// Mean squared error of the value function on `(state, target)` pairs.
pub fn value_objective(b: &Baseline, data: FitData<'_>) -> Result<f64> {
    data.check(false)?;
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (s, t) in data.states.iter().zip(data.targets) {
        let r = b.value_eval(s)? - t;
        total += r * r;
    }
    Ok(total / data.len() as f64)
}

/// Regresses the value function onto the targets. The output map is first
/// re-standardized to the target statistics with outputs preserved, then the
/// network is trained on standardized targets. `psi` is untouched.
pub fn fit_value(b: &Baseline, data: FitData<'_>, opts: &FitOptions) -> Result<(Baseline, FitReport)> {
    data.check(false)?;
    let before = value_objective(b, data)?;
    if opts.steps == 0 || data.is_empty() {
        return Ok((b.clone(), FitReport::noop(before)));
    }
    let n = data.len() as f64;
    let mean = data.targets.iter().sum::<f64>() / n;
    let var = data.targets.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / n;
    let std = if var.sqrt() > 1e-8 { var.sqrt() } else { 1.0 };

    let old = b.value();
    let mut net = old.net().clone();
    {
        // offset + scale * (W h + c) == mean + std * (W' h + c')
        let last = net.layers_mut().last_mut().unwrap();
        let ratio = old.scale() / std;
        last.weights.iter_mut().for_each(|w| *w *= ratio);
        last.bias[0] = (old.offset() + old.scale() * last.bias[0] - mean) / std;
    }
    let normalized: Vec<f64> = data.targets.iter().map(|t| (t - mean) / std).collect();
    {
        // Gradient steps move the output only slowly, and a value function
        // trained on an earlier policy can sit many standard deviations
        // away. Refit the output's scale and shift by least squares first.
        let preds = data
            .states
            .iter()
            .map(|s| net.forward_scalar(s))
            .collect::<Result<Vec<f64>>>()?;
        let pm = preds.iter().sum::<f64>() / n;
        let ym = normalized.iter().sum::<f64>() / n;
        let (mut sxy, mut sxx) = (0.0, 0.0);
        for (p, y) in preds.iter().zip(&normalized) {
            sxy += (p - pm) * (y - ym);
            sxx += (p - pm) * (p - pm);
        }
        let alpha = if sxx > 1e-12 * n { sxy / sxx } else { 0.0 };
        let last = net.layers_mut().last_mut().unwrap();
        last.weights.iter_mut().for_each(|w| *w *= alpha);
        last.bias[0] = alpha * (last.bias[0] - pm) + ym;
    }

    let mut params = net.params();
    let mut opt = Adam::new(params.len(), opts.lr);
    let mut batches = Minibatches::new(data.len(), opts);
    let mut grad = vec![0.0; params.len()];
    for step in 0..opts.steps {
        let idx = batches.next();
        let inv = 1.0 / idx.len() as f64;
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        for &i in &idx {
            net.forward_backward_with(&data.states[i], Some(&mut grad), |out| {
                let r = out[0] - normalized[i];
                loss += r * r;
                vec![2.0 * r * inv]
            })?;
        }
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                context: format!("fit_value step {step}: squared error {loss}"),
            });
        }
        opt.descend(&mut params, &grad);
        net.set_params(&params)?;
    }
    let mut out = b.clone();
    out.set_value(ValueFunction::new(net, mean, std)?)?;
    let after = value_objective(&out, data)?;
    Ok((
        out,
        FitReport {
            objective_before: before,
            objective_after: after,
            steps: opts.steps,
            noop: false,
        },
    ))
}

/// Per-sample quantities that stay fixed while `psi` is fitted.
struct Context {
    value: f64,
    mu_pi: Vec<f64>,
    score: Vec<f64>,
    inv_var: Vec<f64>,
}

fn contexts(b: &Baseline, policy: &GaussianPolicy, data: FitData<'_>, need_score: bool) -> Result<Vec<Context>> {
    let inv_var: Vec<f64> = policy.log_std().iter().map(|l| (-2.0 * l).exp()).collect();
    (0..data.len())
        .map(|i| {
            let s = &data.states[i];
            let a = &data.actions[i];
            check_len("state", b.state_dim(), s.len())?;
            check_len("action", b.action_dim(), a.len())?;
            let mean = if need_score || b.needs_policy_mean() {
                policy.mean(s)?
            } else {
                Vec::new()
            };
            let score = if need_score {
                policy.score_action_from_mean(&mean, a)
            } else {
                Vec::new()
            };
            Ok(Context {
                value: b.value_eval(s)?,
                mu_pi: if b.needs_policy_mean() { mean } else { Vec::new() },
                score,
                inv_var: inv_var.clone(),
            })
        })
        .collect()
}

/// `mean_t (phi(s_t, a_t) - target_t)^2`.
pub fn fitq_objective(b: &Baseline, policy: &GaussianPolicy, data: FitData<'_>) -> Result<f64> {
    data.check(true)?;
    if data.is_empty() {
        return Ok(0.0);
    }
    let ctx = contexts(b, policy, data, false)?;
    let mut total = 0.0;
    for i in 0..data.len() {
        let (psi, _) = b.psi_eval_grad_ctx(&data.states[i], &data.actions[i], &ctx[i].mu_pi)?;
        let r = ctx[i].value + psi - data.targets[i];
        total += r * r;
    }
    Ok(total / data.len() as f64)
}

/// FitQ: least-squares regression of `phi` onto the targets with the value
/// function frozen.
pub fn fit_q(
    b: &Baseline,
    policy: &GaussianPolicy,
    data: FitData<'_>,
    opts: &FitOptions,
) -> Result<(Baseline, FitReport)> {
    data.check(true)?;
    let before = fitq_objective(b, policy, data)?;
    if b.psi_param_count() == 0 || opts.steps == 0 || data.is_empty() {
        return Ok((b.clone(), FitReport::noop(before)));
    }
    let ctx = contexts(b, policy, data, false)?;
    let out = descend(b, data.len(), opts, |bb, step, idx, grad| {
        let loss = fitq_accumulate(bb, &ctx, data, idx, grad)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                context: format!("fit_q step {step}: squared residual {loss}"),
            });
        }
        Ok(())
    })?;
    let after = fitq_objective(&out, policy, data)?;
    Ok((
        out,
        FitReport {
            objective_before: before,
            objective_after: after,
            steps: opts.steps,
            noop: false,
        },
    ))
}

/// Terms of the Gaussian MinVar objective for one sample.
struct MinVarTerms {
    mean_term: f64,
    cov_term: f64,
    /// `dL/d rho`.
    d_rho: f64,
    /// `dL/d (grad_a psi)`.
    d_u: Vec<f64>,
}

/// `L = |g_mu|^2 + |g_Sigma|_F^2` with `rho = target - phi`,
/// `g_mu = -s rho + u`, `g_Sigma = S rho - s u^T / 2`,
/// `S = (-Sigma^{-1} + s s^T) / 2`, `s = grad_a log pi`, `u = grad_a phi`.
fn minvar_terms(rho: f64, score: &[f64], inv_var: &[f64], u: &[f64]) -> MinVarTerms {
    let d = score.len();
    let g_mu: Vec<f64> = (0..d).map(|j| -score[j] * rho + u[j]).collect();
    let mut cov_term = 0.0;
    let mut gs_dot_s = 0.0;
    let mut gst_score = vec![0.0; d];
    for j in 0..d {
        for k in 0..d {
            let diag = if j == k { inv_var[j] } else { 0.0 };
            let s_jk = 0.5 * (score[j] * score[k] - diag);
            let g_jk = s_jk * rho - 0.5 * score[j] * u[k];
            cov_term += g_jk * g_jk;
            gs_dot_s += g_jk * s_jk;
            gst_score[k] += g_jk * score[j];
        }
    }
    let mean_term: f64 = g_mu.iter().map(|g| g * g).sum();
    let d_rho = -2.0 * g_mu.iter().zip(score).map(|(g, s)| g * s).sum::<f64>() + 2.0 * gs_dot_s;
    let d_u = (0..d).map(|k| 2.0 * g_mu[k] - gst_score[k]).collect();
    MinVarTerms {
        mean_term,
        cov_term,
        d_rho,
        d_u,
    }
}

/// Mean Gaussian MinVar objective over the dataset (targets are `Q_hat`).
pub fn minvar_objective(b: &Baseline, policy: &GaussianPolicy, data: FitData<'_>) -> Result<f64> {
    data.check(true)?;
    if data.is_empty() {
        return Ok(0.0);
    }
    let ctx = contexts(b, policy, data, true)?;
    let mut total = 0.0;
    for i in 0..data.len() {
        let (psi, u) = b.psi_eval_grad_ctx(&data.states[i], &data.actions[i], &ctx[i].mu_pi)?;
        let rho = data.targets[i] - ctx[i].value - psi;
        let t = minvar_terms(rho, &ctx[i].score, &ctx[i].inv_var, &u);
        total += t.mean_term + t.cov_term;
    }
    Ok(total / data.len() as f64)
}

/// MinVar: minimizes the Gaussian approximation of the estimator's
/// per-sample squared norm over the `psi` parameters, value function frozen.
pub fn min_var_fit(
    b: &Baseline,
    policy: &GaussianPolicy,
    data: FitData<'_>,
    opts: &FitOptions,
) -> Result<(Baseline, FitReport)> {
    data.check(true)?;
    let before = minvar_objective(b, policy, data)?;
    if !before.is_finite() {
        return Err(Error::NonFinite {
            context: format!("min_var_fit step 0: initial objective {before}"),
        });
    }
    if b.psi_param_count() == 0 || opts.steps == 0 || data.is_empty() {
        return Ok((b.clone(), FitReport::noop(before)));
    }
    let ctx = contexts(b, policy, data, true)?;
    let out = descend(b, data.len(), opts, |bb, step, idx, grad| {
        let (mean_term, cov_term) = minvar_accumulate(bb, &ctx, data, idx, grad)?;
        if !(mean_term.is_finite() && cov_term.is_finite()) {
            return Err(Error::NonFinite {
                context: format!(
                    "min_var_fit step {step}: mean-block term {mean_term:e}, covariance-block term {cov_term:e}"
                ),
            });
        }
        Ok(())
    })?;
    let after = minvar_objective(&out, policy, data)?;
    Ok((
        out,
        FitReport {
            objective_before: before,
            objective_after: after,
            steps: opts.steps,
            noop: false,
        },
    ))
}

/// Adds the gradient of the FitQ objective over `idx` into `grad` and
/// returns the minibatch objective.
fn fitq_accumulate(b: &Baseline, ctx: &[Context], data: FitData<'_>, idx: &[usize], grad: &mut [f64]) -> Result<f64> {
    let inv = 1.0 / idx.len() as f64;
    let zero_v = vec![0.0; b.action_dim()];
    let mut loss = 0.0;
    for &i in idx {
        let (s, a) = (&data.states[i], &data.actions[i]);
        let (psi, _) = b.psi_eval_grad_ctx(s, a, &ctx[i].mu_pi)?;
        let r = ctx[i].value + psi - data.targets[i];
        loss += r * r;
        b.accumulate_psi_combined(s, a, &ctx[i].mu_pi, 2.0 * r * inv, &zero_v, grad)?;
    }
    Ok(loss * inv)
}

/// Adds the gradient of the MinVar objective over `idx` into `grad` and
/// returns the minibatch mean-block and covariance-block terms.
fn minvar_accumulate(
    b: &Baseline,
    ctx: &[Context],
    data: FitData<'_>,
    idx: &[usize],
    grad: &mut [f64],
) -> Result<(f64, f64)> {
    let inv = 1.0 / idx.len() as f64;
    let (mut mean_term, mut cov_term) = (0.0, 0.0);
    for &i in idx {
        let (s, a) = (&data.states[i], &data.actions[i]);
        let c = &ctx[i];
        let (psi, u) = b.psi_eval_grad_ctx(s, a, &c.mu_pi)?;
        let rho = data.targets[i] - c.value - psi;
        let t = minvar_terms(rho, &c.score, &c.inv_var, &u);
        mean_term += t.mean_term;
        cov_term += t.cov_term;
        let v: Vec<f64> = t.d_u.iter().map(|x| x * inv).collect();
        // rho = target - V - psi, so dL/dpsi = -dL/drho.
        b.accumulate_psi_combined(s, a, &c.mu_pi, -t.d_rho * inv, &v, grad)?;
    }
    Ok((mean_term * inv, cov_term * inv))
}

/// Gradient of [`fitq_objective`] with respect to the `psi` parameters.
pub fn fitq_gradient(b: &Baseline, policy: &GaussianPolicy, data: FitData<'_>) -> Result<Vec<f64>> {
    data.check(true)?;
    let mut grad = vec![0.0; b.psi_param_count()];
    if !data.is_empty() {
        let ctx = contexts(b, policy, data, false)?;
        let idx: Vec<usize> = (0..data.len()).collect();
        fitq_accumulate(b, &ctx, data, &idx, &mut grad)?;
    }
    Ok(grad)
}

/// Gradient of [`minvar_objective`] with respect to the `psi` parameters.
pub fn minvar_gradient(b: &Baseline, policy: &GaussianPolicy, data: FitData<'_>) -> Result<Vec<f64>> {
    data.check(true)?;
    let mut grad = vec![0.0; b.psi_param_count()];
    if !data.is_empty() {
        let ctx = contexts(b, policy, data, true)?;
        let idx: Vec<usize> = (0..data.len()).collect();
        minvar_accumulate(b, &ctx, data, &idx, &mut grad)?;
    }
    Ok(grad)
}

/// Adam descent over the `psi` parameters. `grad_fn(baseline, step,
/// minibatch, grad)` accumulates the minibatch gradient.
fn descend(
    b: &Baseline,
    n: usize,
    opts: &FitOptions,
    mut grad_fn: impl FnMut(&Baseline, usize, &[usize], &mut [f64]) -> Result<()>,
) -> Result<Baseline> {
    let mut out = b.clone();
    let mut params = out.psi_params();
    let mut opt = Adam::new(params.len(), opts.lr);
    let mut batches = Minibatches::new(n, opts);
    let mut grad = vec![0.0; params.len()];
    for step in 0..opts.steps {
        let idx = batches.next();
        grad.iter_mut().for_each(|g| *g = 0.0);
        grad_fn(&out, step, &idx, &mut grad)?;
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("psi fit step {step}: non-finite gradient"),
            });
        }
        opt.descend(&mut params, &grad);
        out.set_psi_params(&params)?;
    }
    Ok(out)
}
