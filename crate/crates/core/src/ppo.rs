//! PPO with an adaptive KL penalty and Stein control variates.

use crate::baseline::{fit_q, fit_value, min_var_fit, Baseline, BaselineKind, BaselineShape, FitOptions};
use crate::envs::{collect, evaluate_mean_action, EnvModel};
use crate::error::{Error, Result};
use crate::estimator::grads::{accumulate_stein, hessian_diag, stein_sample};
use crate::estimator::{Batch, EstimatorKind, GradientEstimate, ReturnConfig, SigmaFormula};
use crate::optim::Adam;
use crate::policy::GaussianPolicy;
use crate::rng::{self, purpose};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitMethod {
    FitQ,
    MinVar,
}

impl FitMethod {
    pub fn name(self) -> &'static str {
        match self {
            FitMethod::FitQ => "fitq",
            FitMethod::MinVar => "minvar",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "fitq" => Ok(FitMethod::FitQ),
            "minvar" => Ok(FitMethod::MinVar),
            other => Err(Error::Parse(format!("unknown fit method `{other}`"))),
        }
    }
}

/// Which batch the `psi` fit uses inside an iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitOn {
    Current,
    Previous,
}

/// Baseline family, fitting objective and covariance formula of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Method {
    pub baseline: BaselineKind,
    pub fit: FitMethod,
    pub sigma: SigmaFormula,
}

impl Method {
    pub const VALUE: Method = Method {
        baseline: BaselineKind::Value,
        fit: FitMethod::FitQ,
        sigma: SigmaFormula::Score,
    };

    /// `value`, or `<fit>+<baseline>` with an optional `+hessian` suffix, e.g.
    /// `minvar+mlp`, `fitq+quadratic+hessian`.
    pub fn name(&self) -> String {
        if self.baseline == BaselineKind::Value {
            return "value".into();
        }
        let mut s = format!("{}+{}", self.fit.name(), self.baseline.name());
        if self.sigma == SigmaFormula::Hessian {
            s.push_str("+hessian");
        }
        s
    }

    pub fn parse(s: &str) -> Result<Self> {
        if s == "value" {
            return Ok(Method::VALUE);
        }
        let parts: Vec<&str> = s.split('+').collect();
        let (fit, kind, sigma) = match parts.as_slice() {
            [f, k] => (*f, *k, SigmaFormula::Score),
            [f, k, e] => (*f, *k, SigmaFormula::parse(e)?),
            _ => return Err(Error::Parse(format!("bad method `{s}`"))),
        };
        let baseline = BaselineKind::parse(kind)?;
        if baseline == BaselineKind::Value {
            return Err(Error::Parse(format!("bad method `{s}`: the value baseline is written `value`")));
        }
        let m = Method {
            baseline,
            fit: FitMethod::parse(fit)?,
            sigma,
        };
        if m.sigma == SigmaFormula::Hessian && m.baseline == BaselineKind::Mlp {
            return Err(Error::Parse("the mlp baseline has no hessian covariance term".into()));
        }
        Ok(m)
    }
}

impl TryFrom<String> for Method {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        Method::parse(&s)
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.name()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub steps_per_iter: usize,
    /// Policy ascent steps per iteration (`M`).
    pub policy_steps: usize,
    pub policy_lr: f64,
    /// `psi` fitting steps per iteration (`K`).
    pub baseline_steps: usize,
    pub baseline_lr: f64,
    pub value_steps: usize,
    pub value_lr: f64,
    /// Minibatch size for baseline and value fitting; 0 is the full batch.
    pub fit_batch_size: usize,
    pub kl_target: f64,
    pub kl_alpha: f64,
    pub kl_beta_high: f64,
    pub kl_beta_low: f64,
    pub lambda_init: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub normalize_advantages: bool,
    pub fit_on: FitOn,
}

impl Default for PpoConfig {
    fn default() -> Self {
        let ret = ReturnConfig::default();
        Self {
            steps_per_iter: 2000,
            policy_steps: 10,
            policy_lr: 3e-4,
            baseline_steps: 500,
            baseline_lr: 1e-3,
            value_steps: 500,
            value_lr: 1e-3,
            fit_batch_size: 0,
            kl_target: 0.01,
            kl_alpha: 2.0,
            kl_beta_high: 1.5,
            kl_beta_low: 1.0 / 1.5,
            lambda_init: 1.0,
            lambda_min: 1e-4,
            lambda_max: 1e4,
            gamma: ret.gamma,
            gae_lambda: ret.lambda,
            normalize_advantages: true,
            fit_on: FitOn::Current,
        }
    }
}

impl PpoConfig {
    pub fn returns(&self) -> ReturnConfig {
        ReturnConfig {
            gamma: self.gamma,
            lambda: self.gae_lambda,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.steps_per_iter == 0 {
            return bad("steps_per_iter must be positive");
        }
        if !(self.kl_target > 0.0 && self.kl_alpha > 1.0) {
            return bad("kl_target must be positive and kl_alpha > 1");
        }
        if !(self.kl_beta_low < self.kl_beta_high && self.kl_beta_low > 0.0) {
            return bad("need 0 < kl_beta_low < kl_beta_high");
        }
        if !(0.0 < self.lambda_min && self.lambda_min <= self.lambda_init && self.lambda_init <= self.lambda_max) {
            return bad("need 0 < lambda_min <= lambda_init <= lambda_max");
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gamma and gae_lambda must lie in [0, 1]");
        }
        if !(self.policy_lr >= 0.0 && self.baseline_lr >= 0.0 && self.value_lr >= 0.0) {
            return bad("learning rates must be non-negative");
        }
        Ok(())
    }
}

/// Adaptive KL rule: grow `lambda` by `alpha` above `beta_high * target`,
/// shrink it below `beta_low * target`.
pub fn adapt_kl_coeff(lambda: f64, measured_kl: f64, target: f64, alpha: f64, beta_high: f64, beta_low: f64) -> f64 {
    if measured_kl > beta_high * target {
        lambda * alpha
    } else if measured_kl < beta_low * target {
        lambda / alpha
    } else {
        lambda
    }
}

/// Gradient of the KL-penalized surrogate: importance-weighted Stein terms
/// minus `lambda_kl` times the closed-form KL gradient.
pub fn ppo_surrogate_grad(
    batch: &Batch,
    policy: &GaussianPolicy,
    old_policy: &GaussianPolicy,
    baseline: &Baseline,
    lambda_kl: f64,
    formula: SigmaFormula,
) -> Result<GradientEstimate> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let hdiag = hessian_diag(baseline, formula, batch.adv_scale)?;
    let kind = baseline.kind();
    let mut acc = vec![0.0; policy.param_count()];
    for t in 0..batch.len() {
        let (s, a) = (&batch.states[t], &batch.actions[t]);
        let sample = stein_sample(batch, t, policy, baseline)?;
        let w = (policy.log_prob_from_mean(&sample.mean, a) - old_policy.log_prob(s, a)?).exp();
        if !w.is_finite() {
            return Err(Error::NonFinite {
                context: format!("importance ratio of sample {t}"),
            });
        }
        accumulate_stein(policy, kind, s, a, &sample, &hdiag, formula, w, &mut acc)?;
    }
    let inv = 1.0 / batch.len() as f64;
    acc.iter_mut().for_each(|v| *v *= inv);
    let kl_grad = GaussianPolicy::kl_mean_grad(old_policy, policy, &batch.states)?;
    acc.iter_mut().zip(&kl_grad).for_each(|(v, g)| *v += -lambda_kl * g);
    if let Some(i) = acc.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: format!("surrogate gradient coordinate {i}"),
        });
    }
    Ok(GradientEstimate {
        values: acc,
        mean_params: policy.mean_param_count(),
        n_samples: batch.len(),
        estimator: EstimatorKind::Ppo,
        sigma_formula: Some(formula),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationStats {
    pub iteration: usize,
    /// Environment steps collected so far, including this iteration.
    pub env_steps: usize,
    /// Mean undiscounted episode return of the batch.
    pub mean_return: f64,
    /// Mean-action return over fixed evaluation states, after the update.
    pub eval_return: Option<f64>,
    pub kl: f64,
    pub lambda_kl: f64,
    pub baseline_before: f64,
    pub baseline_after: f64,
    pub value_before: f64,
    pub value_after: f64,
    /// Norm of the first policy-step gradient.
    pub grad_norm: f64,
}

/// Training loop state.
#[derive(Debug, Clone)]
pub struct PpoState {
    pub policy: GaussianPolicy,
    pub old_policy: GaussianPolicy,
    pub baseline: Baseline,
    pub lambda_kl: f64,
    pub iteration: usize,
    pub env_steps: usize,
    pub config: PpoConfig,
    pub method: Method,
    /// Previous iteration's batch and generating policy, for `FitOn::Previous`.
    previous: Option<(Batch, GaussianPolicy)>,
    optimizer: Adam,
}

impl PpoState {
    pub fn new(policy: GaussianPolicy, baseline: Baseline, method: Method, config: PpoConfig) -> Result<Self> {
        config.validate()?;
        if baseline.kind() != method.baseline {
            return Err(Error::InvalidArgument("baseline kind does not match the method".into()));
        }
        if method.sigma == SigmaFormula::Hessian && method.baseline == BaselineKind::Mlp {
            return Err(Error::Unsupported("hessian with the mlp baseline".into()));
        }
        let optimizer = Adam::new(policy.param_count(), config.policy_lr);
        Ok(Self {
            old_policy: policy.clone(),
            policy,
            baseline,
            lambda_kl: config.lambda_init,
            iteration: 0,
            env_steps: 0,
            config,
            method,
            previous: None,
            optimizer,
        })
    }

    /// One iteration: collect, fit `psi`, take the policy steps, adapt the
    /// KL coefficient, refit the value function.
    pub fn iterate(&mut self, env: &EnvModel, seed: u64, eval_episodes: usize) -> Result<IterationStats> {
        let cfg = self.config.clone();
        let round = self.iteration as u32;
        self.old_policy = self.policy.clone();
        let trajs = collect(env, &self.policy, cfg.steps_per_iter, seed, purpose::ROLLOUT, round)?;
        let mut batch = Batch::new(trajs, self.baseline.value(), &cfg.returns())?;
        let mean_return = batch.mean_episode_return();
        if !mean_return.is_finite() {
            return Err(Error::NonFinite {
                context: format!("mean return at iteration {}", self.iteration),
            });
        }

        let fit_opts = FitOptions {
            steps: cfg.baseline_steps,
            lr: cfg.baseline_lr,
            batch_size: cfg.fit_batch_size,
            seed: seed ^ rng::stream_id(purpose::FIT, round, 1),
        };
        let (baseline_before, baseline_after) = if self.method.baseline == BaselineKind::Value {
            (0.0, 0.0)
        } else {
            let (data_batch, data_policy) = match (cfg.fit_on, &self.previous) {
                (FitOn::Previous, Some((b, p))) => (b, p),
                (FitOn::Previous, None) => (&batch, &self.policy),
                (FitOn::Current, _) => (&batch, &self.policy),
            };
            let (fitted, report) = if cfg.fit_on == FitOn::Previous && self.previous.is_none() {
                (self.baseline.clone(), crate::baseline::FitReport {
                    objective_before: 0.0,
                    objective_after: 0.0,
                    steps: 0,
                    noop: true,
                })
            } else {
                match self.method.fit {
                    FitMethod::FitQ => fit_q(&self.baseline, data_policy, data_batch.fit_data(), &fit_opts)?,
                    FitMethod::MinVar => min_var_fit(&self.baseline, data_policy, data_batch.fit_data(), &fit_opts)?,
                }
            };
            self.baseline = fitted;
            (report.objective_before, report.objective_after)
        };

        if cfg.normalize_advantages {
            batch.normalize_advantages();
        }
        let mut params = self.policy.params();
        let mut grad_norm = 0.0;
        for step in 0..cfg.policy_steps {
            let g = ppo_surrogate_grad(
                &batch,
                &self.policy,
                &self.old_policy,
                &self.baseline,
                self.lambda_kl,
                self.method.sigma,
            )?;
            if step == 0 {
                grad_norm = g.norm();
            }
            self.optimizer.ascend(&mut params, &g.values);
            self.policy.set_params(&params)?;
        }
        let kl = GaussianPolicy::kl_mean(&self.old_policy, &self.policy, &batch.states)?;
        self.lambda_kl = adapt_kl_coeff(
            self.lambda_kl,
            kl,
            cfg.kl_target,
            cfg.kl_alpha,
            cfg.kl_beta_high,
            cfg.kl_beta_low,
        )
        .clamp(cfg.lambda_min, cfg.lambda_max);

        let value_opts = FitOptions {
            steps: cfg.value_steps,
            lr: cfg.value_lr,
            batch_size: cfg.fit_batch_size,
            seed: seed ^ rng::stream_id(purpose::FIT, round, 2),
        };
        let (refit, vreport) = fit_value(&self.baseline, batch.fit_data(), &value_opts)?;
        self.baseline = refit;

        self.env_steps += batch.len();
        let eval_return = if eval_episodes > 0 {
            Some(evaluate_mean_action(env, &self.policy, eval_episodes, seed)?)
        } else {
            None
        };
        let stats = IterationStats {
            iteration: self.iteration,
            env_steps: self.env_steps,
            mean_return,
            eval_return,
            kl,
            lambda_kl: self.lambda_kl,
            baseline_before,
            baseline_after,
            value_before: vreport.objective_before,
            value_after: vreport.objective_after,
            grad_norm,
        };
        self.previous = Some((batch, self.old_policy.clone()));
        self.iteration += 1;
        Ok(stats)
    }
}

/// Everything needed to start a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSpec {
    pub env: EnvModel,
    pub policy_hidden: Vec<usize>,
    pub log_std_init: f64,
    pub shape: BaselineShape,
    pub method: Method,
    pub ppo: PpoConfig,
    pub iterations: usize,
    pub eval_episodes: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct LearningCurve {
    pub records: Vec<IterationStats>,
    pub policy: GaussianPolicy,
    pub baseline: Baseline,
}

impl LearningCurve {
    pub fn final_eval_return(&self) -> Option<f64> {
        self.records.last().and_then(|r| r.eval_return)
    }
}

/// Initial policy and baseline for a spec, drawn from the seed's INIT stream.
pub fn initial_state(spec: &TrainSpec) -> Result<PpoState> {
    spec.env.validate()?;
    let mut r = rng::stream(spec.seed, rng::stream_id(purpose::INIT, 0, 0));
    let (ds, da) = (spec.env.state_dim(), spec.env.action_dim());
    let policy = GaussianPolicy::init(ds, da, &spec.policy_hidden, spec.log_std_init, &mut r);
    let baseline = Baseline::init(spec.method.baseline, ds, da, &spec.shape, &mut r);
    PpoState::new(policy, baseline, spec.method, spec.ppo.clone())
}

pub fn train(spec: &TrainSpec) -> Result<LearningCurve> {
    let mut state = initial_state(spec)?;
    let mut records = Vec::with_capacity(spec.iterations);
    for _ in 0..spec.iterations {
        records.push(state.iterate(&spec.env, spec.seed, spec.eval_episodes)?);
    }
    Ok(LearningCurve {
        records,
        policy: state.policy,
        baseline: state.baseline,
    })
}
