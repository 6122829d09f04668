use super::config::ExperimentConfig;
use super::report::{num, CsvReport};
use crate::baseline::{fit_q, fit_value, Baseline, BaselineKind, BaselineShape, FitOptions, ValueFunction};
use crate::diffnet::{Activation, DenseNet};
use crate::envs::{Step, Trajectory};
use crate::error::Result;
use crate::estimator::{
    grad_qprop_form, grad_reparam, grad_stein, grad_value_baseline, stein_identity_residual_with, Batch, BaselinePhi,
    GradientEstimate, ReturnConfig, SigmaFormula, SteinFunction, VjpFn,
};
use crate::numdiff::{directional, gradient, rel_err};
use crate::policy::GaussianPolicy;
use crate::rng::{self, purpose, Rng};
use rand::Rng as _;
use rayon::prelude::*;

const STATE_DIM: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckRow {
    pub name: String,
    pub n: usize,
    pub residual: f64,
    pub threshold: f64,
}

impl CheckRow {
    fn new(name: impl Into<String>, n: usize, residual: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            n,
            residual,
            threshold,
        }
    }

    pub fn pass(&self) -> bool {
        self.residual <= self.threshold
    }
}

fn uniform(r: &mut Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| r.gen_range(-scale..scale)).collect()
}

fn check_rng(seed: u64, major: u32, minor: u32) -> Rng {
    rng::stream(seed, rng::stream_id(purpose::CHECK, major, minor))
}

fn random_policy(r: &mut Rng, da: usize) -> GaussianPolicy {
    let mut p = GaussianPolicy::init(STATE_DIM, da, &[4], 0.0, r);
    let mut v = uniform(r, p.param_count(), 0.6);
    let m = p.mean_param_count();
    v[m..].iter_mut().for_each(|x| *x *= 0.5);
    p.set_params(&v).expect("sizes match");
    p
}

fn random_baseline(r: &mut Rng, kind: BaselineKind, da: usize) -> Baseline {
    let shape = BaselineShape {
        value_hidden: vec![4],
        psi_hidden: vec![6],
        quadratic_scale: 0.8,
    };
    let mut b = Baseline::init(kind, STATE_DIM, da, &shape, r);
    let p = uniform(r, b.psi_param_count(), 0.7);
    b.set_psi_params(&p).expect("sizes match");
    let mut net = b.value().net().clone();
    let vp = uniform(r, net.param_count(), 0.7);
    net.set_params(&vp).expect("sizes match");
    b.set_value(ValueFunction::new(net, 0.0, 1.0).expect("scalar net"))
        .expect("same state dim");
    b
}

/// One-step batch from `policy` with a fixed quadratic reward, so the
/// estimators can be compared without an environment.
fn bandit_batch(r: &mut Rng, policy: &GaussianPolicy, value: &ValueFunction, n: usize) -> Result<Batch> {
    let da = policy.action_dim();
    let mut trajs = Vec::with_capacity(n);
    for _ in 0..n {
        let s: Vec<f64> = rng::standard_normal(r, STATE_DIM);
        let (a, xi) = policy.sample_action(&s, r)?;
        let reward = s[0] * a[0] - (0..da).map(|i| (a[i] - 0.5 * s[i % STATE_DIM]).powi(2)).sum::<f64>();
        trajs.push(Trajectory {
            steps: vec![Step {
                state: s.clone(),
                action: a,
                noise: xi.0,
                reward,
                done: true,
            }],
            final_state: s,
        });
    }
    Batch::new(trajs, value, &ReturnConfig::default())
}

struct Constant(f64);

impl SteinFunction for Constant {
    fn value(&self, _: &[f64], _: &[f64]) -> Result<f64> {
        Ok(self.0)
    }

    fn action_grad(&self, _: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![0.0; action.len()])
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

fn fd_checks(cfg: &ExperimentConfig) -> Vec<CheckRow> {
    let c = &cfg.check;
    let (h, n) = (c.fd_step, c.fd_instances);
    let mut r = check_rng(cfg.experiment.seed, 1, 0);
    let mut worst = [0.0f64; 8];
    for i in 0..n {
        let act = if i % 2 == 0 { Activation::Tanh } else { Activation::Relu };
        let mut net = DenseNet::init(&[3, 6, 5, 2], act, Activation::Identity, &mut r);
        let p = uniform(&mut r, net.param_count(), 0.8);
        net.set_params(&p).expect("sizes match");
        let x = uniform(&mut r, 3, 1.5);
        let up = uniform(&mut r, 2, 1.0);
        let dot = |y: Vec<f64>| y.iter().zip(&up).map(|(a, b)| a * b).sum::<f64>();
        let fd = gradient(|q| dot(net.with_params(q).unwrap().forward(&x).unwrap()), &p, h);
        worst[0] = worst[0].max(rel_err(&net.param_grad(&x, &up).unwrap(), &fd));
        let fd = gradient(|xx| dot(net.forward(xx).unwrap()), &x, h);
        worst[1] = worst[1].max(rel_err(&net.input_grad(&x, &up).unwrap(), &fd));
        // The jvp check uses a smooth net: relu kinks break the difference.
        let mut smooth = DenseNet::init(&[3, 6, 5, 2], Activation::Tanh, Activation::Identity, &mut r);
        smooth.set_params(&p).expect("sizes match");
        let t = uniform(&mut r, 3, 1.0);
        let (dig, dpg) = smooth.input_grad_jvp(&x, &t, &up).unwrap();
        let fd_ig = directional(|xx| smooth.input_grad(xx, &up).unwrap(), &x, &t, h);
        let fd_pg = directional(|xx| smooth.param_grad(xx, &up).unwrap(), &x, &t, h);
        worst[2] = worst[2].max(rel_err(&dig, &fd_ig)).max(rel_err(&dpg, &fd_pg));

        let da = 1 + i % 2;
        let pol = random_policy(&mut r, da);
        let s = uniform(&mut r, STATE_DIM, 1.5);
        let a = uniform(&mut r, da, 2.0);
        let xi = uniform(&mut r, da, 2.0);
        let v = uniform(&mut r, da, 1.0);
        let fd = gradient(|q| pol.with_params(q).unwrap().log_prob(&s, &a).unwrap(), &pol.params(), h);
        worst[3] = worst[3].max(rel_err(&pol.score_theta(&s, &a).unwrap(), &fd));
        let fd = gradient(|aa| pol.log_prob(&s, aa).unwrap(), &a, h);
        worst[4] = worst[4].max(rel_err(&pol.score_action(&s, &a).unwrap(), &fd));
        let f = |q: &[f64]| {
            let act = pol.with_params(q).unwrap().action_from_noise(&s, &xi).unwrap();
            act.iter().zip(&v).map(|(x, y)| x * y).sum::<f64>()
        };
        let fd = gradient(f, &pol.params(), h);
        worst[5] = worst[5].max(rel_err(&pol.reparam_vjp(&s, &xi, &v).unwrap(), &fd));

        let kind = [BaselineKind::Linear, BaselineKind::Quadratic, BaselineKind::Mlp][i % 3];
        let b = random_baseline(&mut r, kind, da);
        let aa = uniform(&mut r, da, 1.5);
        let fd = gradient(|q| b.phi_eval(&s, q, &pol).unwrap(), &aa, h);
        worst[6] = worst[6].max(rel_err(&b.phi_action_grad(&s, &aa, &pol).unwrap(), &fd));
        let qb = random_baseline(&mut r, BaselineKind::Quadratic, da);
        let hess = qb.phi_action_hessian(&s, &aa, &pol).unwrap();
        let mut fd_h = vec![0.0; da * da];
        for j in 0..da {
            let mut e = vec![0.0; da];
            e[j] = 1.0;
            let col = directional(|q| qb.phi_action_grad(&s, q, &pol).unwrap(), &aa, &e, h);
            for (k, v) in col.iter().enumerate() {
                fd_h[k * da + j] = *v;
            }
        }
        worst[7] = worst[7].max(rel_err(&hess, &fd_h));
    }
    let names = [
        "fd_net_param_grad",
        "fd_net_input_grad",
        "fd_net_input_grad_jvp",
        "fd_score_theta",
        "fd_score_action",
        "fd_reparam_vjp",
        "fd_phi_action_grad",
        "fd_phi_action_hessian",
    ];
    names
        .iter()
        .zip(worst)
        .enumerate()
        .map(|(k, (name, w))| {
            let tol = if k == 2 { c.fd_jvp_tolerance } else { c.fd_tolerance };
            CheckRow::new(*name, n, w, tol)
        })
        .collect()
}

/// Mean residual over the configured repeats at each draw count, for an
/// MLP `phi` and action dimension `da`.
pub fn stein_residual_curve(cfg: &ExperimentConfig, da: usize, vjp: VjpFn<'_>) -> Result<Vec<(usize, f64)>> {
    let c = &cfg.check;
    let seed = cfg.experiment.seed;
    let mut r = check_rng(seed, 2, da as u32);
    let policy = random_policy(&mut r, da);
    let phi_b = random_baseline(&mut r, BaselineKind::Mlp, da);
    let state = uniform(&mut r, STATE_DIM, 1.0);
    let phi = BaselinePhi {
        baseline: &phi_b,
        policy: &policy,
    };
    c.stein_sizes
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let total = (0..c.stein_repeats)
                .into_par_iter()
                .map(|rep| {
                    let mut rr = check_rng(seed, 3 + da as u32, (k * c.stein_repeats + rep) as u32);
                    stein_identity_residual_with(&policy, &phi, &state, n, &mut rr, vjp)
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok((n, total.iter().sum::<f64>() / total.len() as f64))
        })
        .collect()
}

/// Least-squares slope of `ln residual` against `ln n`.
pub fn log_log_slope(points: &[(usize, f64)]) -> f64 {
    let xs: Vec<f64> = points.iter().map(|(n, _)| (*n as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|(_, r)| r.ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

fn stein_checks(cfg: &ExperimentConfig, vjp: VjpFn<'_>) -> Result<Vec<CheckRow>> {
    let c = &cfg.check;
    let mut rows = Vec::new();
    for da in [1, 2] {
        let curve = stein_residual_curve(cfg, da, vjp)?;
        for &(n, res) in &curve {
            let tol = c.stein_tolerance * (c.stein_reference_size as f64 / n as f64).sqrt();
            rows.push(CheckRow::new(format!("stein_residual_mlp_da{da}"), n, res, tol));
        }
        if curve.len() >= 2 {
            let slope = log_log_slope(&curve);
            let n = curve.iter().map(|p| p.0).max().unwrap_or(0);
            rows.push(CheckRow::new(format!("stein_slope_offset_da{da}"), n, (slope + 0.5).abs(), 0.15));
        }
    }
    let mut r = check_rng(cfg.experiment.seed, 6, 0);
    let policy = random_policy(&mut r, 1);
    let state = uniform(&mut r, STATE_DIM, 1.0);
    let res = stein_identity_residual_with(&policy, &Constant(1.0), &state, c.constant_size, &mut r, vjp)?;
    rows.push(CheckRow::new("stein_residual_constant", c.constant_size, res, c.constant_tolerance));
    Ok(rows)
}

/// Quadratic baseline fitted by value regression and FitQ on a large
/// bandit batch, so that `phi` tracks the reward.
fn fitted_quadratic(cfg: &ExperimentConfig, r: &mut Rng, policy: &GaussianPolicy) -> Result<Baseline> {
    let c = &cfg.check;
    let b = random_baseline(r, BaselineKind::Quadratic, policy.action_dim());
    let b = b.with_psi(Baseline::init_psi(BaselineKind::Quadratic, STATE_DIM, policy.action_dim(), &BaselineShape {
        value_hidden: vec![],
        psi_hidden: vec![6],
        quadratic_scale: 0.8,
    }, r))?;
    let data = bandit_batch(r, policy, b.value(), c.comparison_fit_size)?;
    let opts = FitOptions {
        steps: c.comparison_fit_steps,
        lr: 1e-2,
        batch_size: 256,
        seed: cfg.experiment.seed,
    };
    let (b, _) = fit_value(&b, data.fit_data(), &opts)?;
    let (b, _) = fit_q(&b, policy, data.fit_data(), &opts)?;
    Ok(b)
}

/// Paired comparison of the two covariance formulas on a fitted quadratic
/// `phi`:
/// the largest per-coordinate `|mean difference| / standard error`, and the
/// ratio of the covariance-block variance traces (hessian over score).
pub fn sigma_formula_comparison(cfg: &ExperimentConfig, da: usize) -> Result<(f64, f64)> {
    let c = &cfg.check;
    let seed = cfg.experiment.seed;
    let mut r = check_rng(seed, 7, da as u32);
    let policy = random_policy(&mut r, da);
    let b = fitted_quadratic(cfg, &mut r, &policy)?;
    let pairs = (0..c.comparison_batches)
        .into_par_iter()
        .map(|i| {
            let mut rr = check_rng(seed, 8 + da as u32, i as u32);
            let batch = bandit_batch(&mut rr, &policy, b.value(), c.comparison_batch_size)?;
            Ok((
                grad_stein(&batch, &policy, &b, SigmaFormula::Score)?,
                grad_stein(&batch, &policy, &b, SigmaFormula::Hessian)?,
            ))
        })
        .collect::<Result<Vec<(GradientEstimate, GradientEstimate)>>>()?;
    let k = pairs.len() as f64;
    let p = policy.param_count();
    let m = policy.mean_param_count();
    let mut z_max = 0.0f64;
    for j in 0..p {
        let d: Vec<f64> = pairs.iter().map(|(a, b)| a.values[j] - b.values[j]).collect();
        let mean = d.iter().sum::<f64>() / k;
        let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0);
        let se = (var / k).sqrt();
        if se > 0.0 {
            z_max = z_max.max(mean.abs() / se);
        } else if mean != 0.0 {
            z_max = f64::INFINITY;
        }
    }
    let block_var = |pick: &dyn Fn(&(GradientEstimate, GradientEstimate)) -> &GradientEstimate| {
        (m..p)
            .map(|j| {
                let x: Vec<f64> = pairs.iter().map(|e| pick(e).values[j]).collect();
                let mean = x.iter().sum::<f64>() / k;
                x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)
            })
            .sum::<f64>()
    };
    let v15 = block_var(&|e| &e.0);
    let v16 = block_var(&|e| &e.1);
    Ok((z_max, v16 / v15))
}

fn reduction_checks(cfg: &ExperimentConfig) -> Result<Vec<CheckRow>> {
    let mut rows = Vec::new();
    let mut r = check_rng(cfg.experiment.seed, 10, 0);
    let n = cfg.check.comparison_batch_size;
    let (mut psi_zero, mut qprop, mut curvature, mut reparam) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for da in [1, 2] {
        let policy = random_policy(&mut r, da);
        let value_only = random_baseline(&mut r, BaselineKind::Value, da);
        let batch = bandit_batch(&mut r, &policy, value_only.value(), n)?;
        for formula in [SigmaFormula::Score, SigmaFormula::Hessian] {
            let a = grad_stein(&batch, &policy, &value_only, formula)?;
            let b = grad_value_baseline(&batch, &policy, value_only.value())?;
            psi_zero = psi_zero.max(max_abs_diff(&a.values, &b.values));
        }

        let linear = random_baseline(&mut r, BaselineKind::Linear, da);
        let batch = bandit_batch(&mut r, &policy, linear.value(), n)?;
        let a = grad_stein(&batch, &policy, &linear, SigmaFormula::Score)?;
        let b = grad_qprop_form(&batch, &policy, &linear)?;
        qprop = qprop.max(max_abs_diff(a.mean_block(), b.mean_block()));
        for (s, act) in batch.states.iter().zip(&batch.actions) {
            let h = linear.phi_action_hessian(s, act, &policy)?;
            curvature = curvature.max(h.iter().fold(0.0f64, |m, x| m.max(x.abs())));
        }

        for kind in [BaselineKind::Linear, BaselineKind::Quadratic, BaselineKind::Mlp] {
            let b = random_baseline(&mut r, kind, da);
            let mut batch = bandit_batch(&mut r, &policy, b.value(), n)?;
            let q = batch
                .states
                .iter()
                .zip(&batch.actions)
                .map(|(s, a)| b.phi_eval(s, a, &policy))
                .collect::<Result<Vec<f64>>>()?;
            batch.set_q_hat(q)?;
            let st = grad_stein(&batch, &policy, &b, SigmaFormula::Score)?;
            let rp = grad_reparam(&batch, &policy, &b)?;
            reparam = reparam.max(max_abs_diff(st.mean_block(), rp.mean_block()));
        }
    }
    rows.push(CheckRow::new("reduction_psi_zero_vs_value", n, psi_zero, 0.0));
    rows.push(CheckRow::new("reduction_linear_vs_qprop_mean", n, qprop, 0.0));
    rows.push(CheckRow::new("reduction_linear_hessian_curvature", n, curvature, 0.0));
    rows.push(CheckRow::new("reduction_zero_residual_vs_reparam_mean", n, reparam, 0.0));
    Ok(rows)
}

/// Every identity check with a caller-supplied pathwise product in the
/// Stein residual rows.
pub fn identity_checks_with(cfg: &ExperimentConfig, vjp: VjpFn<'_>) -> Result<Vec<CheckRow>> {
    cfg.validate()?;
    let mut rows = fd_checks(cfg);
    rows.extend(stein_checks(cfg, vjp)?);
    for da in [1, 2] {
        let (z, ratio) = sigma_formula_comparison(cfg, da)?;
        let n = cfg.check.comparison_batches;
        rows.push(CheckRow::new(format!("score_hessian_mean_z_da{da}"), n, z, 3.0));
        rows.push(CheckRow::new(format!("hessian_over_score_sigma_variance_da{da}"), n, ratio, 1.0));
    }
    rows.extend(reduction_checks(cfg)?);
    Ok(rows)
}

pub fn identity_checks(cfg: &ExperimentConfig) -> Result<Vec<CheckRow>> {
    identity_checks_with(cfg, &|p, s, xi, v| p.reparam_vjp(s, xi, v))
}

pub const CHECK_COLUMNS: [&str; 5] = ["check", "n", "residual", "threshold", "pass"];

pub fn check_report(cfg: &ExperimentConfig, rows: &[CheckRow]) -> CsvReport {
    let mut report = CsvReport::new(&CHECK_COLUMNS, cfg.hash(), cfg.experiment.seed);
    for row in rows {
        report.push(vec![
            row.name.clone(),
            row.n.to_string(),
            num(row.residual),
            num(row.threshold),
            if row.pass() { "pass" } else { "fail" }.to_string(),
        ]);
    }
    report
}

/// Runs the checks; the report's `pass` column says which held.
pub fn run_identity_checks(cfg: &ExperimentConfig) -> Result<CsvReport> {
    Ok(check_report(cfg, &identity_checks(cfg)?))
}
