use super::config::ExperimentConfig;
use super::report::{num, CsvReport};
use crate::error::Result;
use crate::ppo::{train, LearningCurve, Method, TrainSpec};
use rayon::prelude::*;

#[derive(Debug, Clone)]
pub struct TrainingCell {
    pub method: Method,
    /// Replicate seed as listed in the config.
    pub seed: u64,
    pub curve: LearningCurve,
}

pub fn train_spec(cfg: &ExperimentConfig, method: Method, replicate: u64) -> TrainSpec {
    TrainSpec {
        env: cfg.env.clone(),
        policy_hidden: cfg.policy.hidden.clone(),
        log_std_init: cfg.policy.log_std_init,
        shape: cfg.baseline.shape(),
        method,
        ppo: cfg.ppo.clone(),
        iterations: cfg.train.iterations,
        eval_episodes: cfg.train.eval_episodes,
        seed: cfg.experiment.seed.wrapping_add(replicate),
    }
}

/// One training run per (method, seed) cell; cells run in parallel and come
/// back in method-major config order.
pub fn training_runs(cfg: &ExperimentConfig) -> Result<Vec<TrainingCell>> {
    cfg.validate()?;
    let cells: Vec<(Method, u64)> = cfg
        .train
        .methods
        .iter()
        .flat_map(|m| cfg.train.seeds.iter().map(move |s| (*m, *s)))
        .collect();
    cells
        .par_iter()
        .map(|&(method, seed)| {
            let curve = train(&train_spec(cfg, method, seed))?;
            Ok(TrainingCell { method, seed, curve })
        })
        .collect()
}

pub const TRAINING_COLUMNS: [&str; 4] = ["method", "seed", "env_steps", "mean_return"];

pub fn training_report(cfg: &ExperimentConfig, cells: &[TrainingCell]) -> CsvReport {
    let mut report = CsvReport::new(&TRAINING_COLUMNS, cfg.hash(), cfg.experiment.seed);
    for c in cells {
        for r in &c.curve.records {
            report.push(vec![
                c.method.name(),
                c.seed.to_string(),
                r.env_steps.to_string(),
                num(r.mean_return),
            ]);
        }
    }
    report
}

pub fn run_training(cfg: &ExperimentConfig) -> Result<CsvReport> {
    let cells = training_runs(cfg)?;
    Ok(training_report(cfg, &cells))
}
