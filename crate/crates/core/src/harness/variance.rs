use super::config::{EstimatorSpec, ExperimentConfig};
use super::report::{num, CsvReport};
use crate::baseline::{fit_q, fit_value, min_var_fit, Baseline, FitOptions, Psi, ValueFunction};
use crate::envs::collect;
use crate::error::Result;
use crate::estimator::{
    grad_qprop_form, grad_reparam, grad_stein, grad_value_baseline, grad_vanilla, variance_of, Batch, EstimatorKind,
    GradientEstimate, VarianceSummary,
};
use crate::policy::GaussianPolicy;
use crate::ppo::{train, FitMethod, Method, TrainSpec};
use crate::rng::{self, purpose};
use rayon::prelude::*;

/// Fitted baselines and the frozen policy of a variance evaluation.
#[derive(Debug, Clone)]
pub struct FrozenSetup {
    pub policy: GaussianPolicy,
    pub value: ValueFunction,
    /// One fitted baseline per distinct (family, objective) pair, in the
    /// order first seen in the estimator list.
    pub baselines: Vec<(Method, Baseline)>,
}

impl FrozenSetup {
    fn baseline_for(&self, m: &Method) -> Baseline {
        if !matches!(m.baseline, crate::BaselineKind::Value) {
            for (k, b) in &self.baselines {
                if k.baseline == m.baseline && k.fit == m.fit {
                    return b.clone();
                }
            }
        }
        Baseline::new(self.value.clone(), Psi::Zero, self.policy.action_dim()).expect("zero psi")
    }

    pub fn estimate(&self, spec: &EstimatorSpec, batch: &Batch) -> Result<GradientEstimate> {
        let p = &self.policy;
        match spec.kind {
            EstimatorKind::Vanilla => grad_vanilla(batch, p),
            EstimatorKind::Value => grad_value_baseline(batch, p, &self.value),
            EstimatorKind::Stein | EstimatorKind::Ppo => grad_stein(batch, p, &self.baseline_for(&spec.method), spec.method.sigma),
            EstimatorKind::Reparam => grad_reparam(batch, p, &self.baseline_for(&spec.method)),
            EstimatorKind::Qprop => grad_qprop_form(batch, p, &self.baseline_for(&spec.method)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct VarianceRow {
    pub estimator: EstimatorSpec,
    pub n: usize,
    pub summary: VarianceSummary,
}

#[derive(Debug, Clone)]
pub struct VarianceResults {
    pub setup: FrozenSetup,
    pub rows: Vec<VarianceRow>,
}

impl VarianceResults {
    pub fn get(&self, estimator: &str, n: usize) -> Option<&VarianceRow> {
        self.rows.iter().find(|r| r.estimator.name() == estimator && r.n == n)
    }
}

/// Trains PPO+Value up to the freeze point, then fits the value function
/// and every configured baseline on one large hold-out batch.
pub fn freeze_and_fit(cfg: &ExperimentConfig) -> Result<FrozenSetup> {
    cfg.validate()?;
    let seed = cfg.experiment.seed;
    let v = &cfg.variance;
    let shape = cfg.baseline.shape();
    let spec = TrainSpec {
        env: cfg.env.clone(),
        policy_hidden: cfg.policy.hidden.clone(),
        log_std_init: cfg.policy.log_std_init,
        shape: shape.clone(),
        method: Method::VALUE,
        ppo: cfg.ppo.clone(),
        iterations: v.freeze_iterations,
        eval_episodes: 0,
        seed,
    };
    let curve = train(&spec)?;
    let policy = curve.policy;
    let ret = cfg.ppo.returns();
    let mut value = curve.baseline.value().clone();
    if v.holdout_steps == 0 {
        return Ok(FrozenSetup {
            policy,
            value,
            baselines: Vec::new(),
        });
    }

    let trajs = collect(&cfg.env, &policy, v.holdout_steps, seed, purpose::HOLDOUT, 0)?;
    let opts = |steps: usize, lr: f64, stream: u32| FitOptions {
        steps,
        lr,
        batch_size: cfg.baseline.holdout_batch_size,
        seed: seed ^ rng::stream_id(purpose::FIT, u32::MAX, stream),
    };
    let mut vb = curve.baseline.clone();
    for round in 0..cfg.baseline.holdout_value_rounds {
        let batch = Batch::new(trajs.clone(), vb.value(), &ret)?;
        let o = opts(cfg.baseline.holdout_value_steps, cfg.baseline.holdout_value_lr, 1000 + round as u32);
        vb = fit_value(&vb, batch.fit_data(), &o)?.0;
    }
    value = vb.value().clone();
    let holdout = Batch::new(trajs, &value, &ret)?;

    let mut methods: Vec<Method> = Vec::new();
    for e in &v.estimators {
        if e.needs_fit() && !methods.iter().any(|m| m.baseline == e.method.baseline && m.fit == e.method.fit) {
            methods.push(e.method);
        }
    }
    let (ds, da) = (cfg.env.state_dim(), cfg.env.action_dim());
    let baselines = methods
        .par_iter()
        .enumerate()
        .map(|(i, m)| {
            let mut r = rng::stream(seed, rng::stream_id(purpose::INIT, 1, i as u32));
            let mut b = Baseline::init(m.baseline, ds, da, &shape, &mut r);
            b.set_value(value.clone())?;
            let o = opts(cfg.baseline.holdout_fit_steps, cfg.baseline.holdout_fit_lr, 1 + i as u32);
            let (fitted, _) = match m.fit {
                FitMethod::FitQ => fit_q(&b, &policy, holdout.fit_data(), &o)?,
                FitMethod::MinVar => min_var_fit(&b, &policy, holdout.fit_data(), &o)?,
            };
            Ok((*m, fitted))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FrozenSetup {
        policy,
        value,
        baselines,
    })
}

/// Fresh batches of `n` steps from the frozen policy, without advantage
/// normalization. Batch `b` of size index `k` uses rollout round
/// `k * batches + b` of the VARIANCE purpose.
pub fn variance_batches(
    cfg: &ExperimentConfig,
    setup: &FrozenSetup,
    size_index: usize,
    n: usize,
) -> Result<Vec<Batch>> {
    let b = cfg.variance.batches;
    let ret = cfg.ppo.returns();
    (0..b)
        .into_par_iter()
        .map(|i| {
            let round = (size_index * b + i) as u32;
            let trajs = collect(&cfg.env, &setup.policy, n, cfg.experiment.seed, purpose::VARIANCE, round)?;
            Batch::new(trajs, &setup.value, &ret)
        })
        .collect()
}

pub fn variance_eval(cfg: &ExperimentConfig) -> Result<VarianceResults> {
    let setup = freeze_and_fit(cfg)?;
    let v = &cfg.variance;
    let mut per_size = Vec::with_capacity(v.sample_sizes.len());
    for (k, &n) in v.sample_sizes.iter().enumerate() {
        let batches = variance_batches(cfg, &setup, k, n)?;
        let summaries = v
            .estimators
            .iter()
            .map(|e| {
                let est = batches
                    .par_iter()
                    .map(|b| setup.estimate(e, b))
                    .collect::<Result<Vec<_>>>()?;
                variance_of(&est)
            })
            .collect::<Result<Vec<_>>>()?;
        per_size.push(summaries);
    }
    let mut rows = Vec::new();
    for (j, e) in v.estimators.iter().enumerate() {
        for (k, &n) in v.sample_sizes.iter().enumerate() {
            rows.push(VarianceRow {
                estimator: *e,
                n,
                summary: per_size[k][j].clone(),
            });
        }
    }
    Ok(VarianceResults { setup, rows })
}

pub const VARIANCE_COLUMNS: [&str; 5] = ["estimator", "fit_method", "n", "log_variance", "seed"];

pub fn variance_report(cfg: &ExperimentConfig, results: &VarianceResults) -> CsvReport {
    let seed = cfg.experiment.seed;
    let mut report = CsvReport::new(&VARIANCE_COLUMNS, cfg.hash(), seed);
    for r in &results.rows {
        report.push(vec![
            r.estimator.column(),
            r.estimator.fit_column().to_string(),
            r.n.to_string(),
            num(r.summary.log_trace),
            seed.to_string(),
        ]);
    }
    report
}

/// Variance of each configured estimator at each sample size, as
/// `ln(trace of the covariance)` over the configured batch count.
pub fn run_variance_eval(cfg: &ExperimentConfig) -> Result<CsvReport> {
    let results = variance_eval(cfg)?;
    Ok(variance_report(cfg, &results))
}
