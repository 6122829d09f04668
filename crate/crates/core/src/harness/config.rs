use crate::baseline::{BaselineKind, BaselineShape};
use crate::envs::EnvModel;
use crate::error::{Error, Result};
use crate::estimator::EstimatorKind;
use crate::ppo::{Method, PpoConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    VarianceEval,
    Train,
    IdentityCheck,
}

/// A complete experiment description. The text form is TOML with one table
/// per section and scalar or flat-array values only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub env: EnvModel,
    #[serde(default)]
    pub policy: PolicySpec,
    #[serde(default)]
    pub baseline: BaselineSpec,
    #[serde(default)]
    pub ppo: PpoConfig,
    #[serde(default)]
    pub variance: VarianceSpec,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub check: CheckSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub kind: ExperimentKind,
    /// Master seed. Training cells run with `seed + replicate`.
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicySpec {
    /// Hidden widths of the mean network; empty gives a linear mean.
    pub hidden: Vec<usize>,
    pub log_std_init: f64,
}

impl Default for PolicySpec {
    fn default() -> Self {
        Self {
            hidden: Vec::new(),
            log_std_init: 0.0,
        }
    }
}

/// Network shapes plus the options for fitting on a hold-out set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSpec {
    pub value_hidden: Vec<usize>,
    pub psi_hidden: Vec<usize>,
    pub quadratic_scale: f64,
    pub holdout_fit_steps: usize,
    pub holdout_fit_lr: f64,
    /// Value refits on the hold-out batch. Targets are rebuilt from the
    /// current value function before every round.
    pub holdout_value_rounds: usize,
    pub holdout_value_steps: usize,
    pub holdout_value_lr: f64,
    pub holdout_batch_size: usize,
}

impl Default for BaselineSpec {
    fn default() -> Self {
        let shape = BaselineShape::default();
        Self {
            value_hidden: shape.value_hidden,
            psi_hidden: shape.psi_hidden,
            quadratic_scale: shape.quadratic_scale,
            holdout_fit_steps: 1000,
            holdout_fit_lr: 1e-3,
            holdout_value_rounds: 30,
            holdout_value_steps: 200,
            holdout_value_lr: 1e-3,
            holdout_batch_size: 256,
        }
    }
}

impl BaselineSpec {
    pub fn shape(&self) -> BaselineShape {
        BaselineShape {
            value_hidden: self.value_hidden.clone(),
            psi_hidden: self.psi_hidden.clone(),
            quadratic_scale: self.quadratic_scale,
        }
    }
}

/// A gradient estimator together with the baseline it uses.
///
/// Text form: `vanilla`, `value`, or `<stein|reparam|qprop>+<method>` where
/// `<method>` follows [`Method::parse`] (e.g. `stein+minvar+mlp`,
/// `stein+fitq+quadratic+hessian`, `stein+value`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct EstimatorSpec {
    pub kind: EstimatorKind,
    pub method: Method,
}

impl EstimatorSpec {
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || Error::Parse(format!("bad estimator `{s}`"));
        match s {
            "vanilla" => Ok(Self {
                kind: EstimatorKind::Vanilla,
                method: Method::VALUE,
            }),
            "value" => Ok(Self {
                kind: EstimatorKind::Value,
                method: Method::VALUE,
            }),
            _ => {
                let (head, rest) = s.split_once('+').ok_or_else(bad)?;
                let kind = match head {
                    "stein" => EstimatorKind::Stein,
                    "reparam" => EstimatorKind::Reparam,
                    "qprop" => EstimatorKind::Qprop,
                    _ => return Err(bad()),
                };
                let method = Method::parse(rest)?;
                match (kind, method.baseline) {
                    (EstimatorKind::Qprop, BaselineKind::Linear) | (EstimatorKind::Stein, _) => {}
                    (EstimatorKind::Reparam, k) if k != BaselineKind::Value => {}
                    _ => return Err(Error::Parse(format!("estimator `{s}` does not support that baseline"))),
                }
                Ok(Self { kind, method })
            }
        }
    }

    pub fn name(&self) -> String {
        match self.kind {
            EstimatorKind::Vanilla | EstimatorKind::Value => self.kind.name().into(),
            k => format!("{}+{}", k.name(), self.method.name()),
        }
    }

    /// The `estimator` CSV column: estimator and baseline family, without
    /// the fitting objective.
    pub fn column(&self) -> String {
        match self.kind {
            EstimatorKind::Vanilla | EstimatorKind::Value => self.kind.name().into(),
            k => {
                let mut s = format!("{}+{}", k.name(), self.method.baseline.name());
                if k == EstimatorKind::Stein {
                    s.push('+');
                    s.push_str(self.method.sigma.name());
                }
                s
            }
        }
    }

    /// The `fit_method` CSV column; `-` when nothing is fitted.
    pub fn fit_column(&self) -> &'static str {
        if self.needs_fit() {
            self.method.fit.name()
        } else {
            "-"
        }
    }

    pub fn needs_fit(&self) -> bool {
        self.method.baseline != BaselineKind::Value
    }
}

impl TryFrom<String> for EstimatorSpec {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        Self::parse(&s)
    }
}

impl From<EstimatorSpec> for String {
    fn from(e: EstimatorSpec) -> String {
        e.name()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VarianceSpec {
    /// PPO+Value iterations before the policy is frozen.
    pub freeze_iterations: usize,
    pub holdout_steps: usize,
    pub sample_sizes: Vec<usize>,
    /// Independent batches per sample size.
    pub batches: usize,
    pub estimators: Vec<EstimatorSpec>,
}

impl Default for VarianceSpec {
    fn default() -> Self {
        Self {
            freeze_iterations: 50,
            holdout_steps: 100_000,
            sample_sizes: vec![500, 1000, 2000, 4000],
            batches: 100,
            estimators: ["value", "stein+minvar+mlp", "stein+fitq+mlp", "stein+fitq+quadratic", "stein+minvar+quadratic"]
                .iter()
                .map(|s| EstimatorSpec::parse(s).unwrap())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub methods: Vec<Method>,
    /// Replicate seeds; each cell runs with `experiment.seed + s`.
    pub seeds: Vec<u64>,
    pub iterations: usize,
    /// Episodes of the noiseless evaluation after each iteration (0: none).
    pub eval_episodes: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            methods: vec![Method::VALUE, Method::parse("minvar+mlp").unwrap()],
            seeds: vec![1, 2, 3, 4, 5],
            iterations: 50,
            eval_episodes: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckSpec {
    /// Draw counts for the Stein residual rows.
    pub stein_sizes: Vec<usize>,
    /// Independent repeats averaged per draw count.
    pub stein_repeats: usize,
    /// Residual allowed at `stein_reference_size` draws; other sizes scale
    /// it by `sqrt(reference / n)`.
    pub stein_tolerance: f64,
    pub stein_reference_size: usize,
    pub constant_size: usize,
    pub constant_tolerance: f64,
    pub fd_instances: usize,
    pub fd_step: f64,
    pub fd_tolerance: f64,
    pub fd_jvp_tolerance: f64,
    /// Batches and batch size for the covariance-formula comparison.
    pub comparison_batches: usize,
    pub comparison_batch_size: usize,
    /// Bandit samples and steps for fitting the comparison's baseline.
    pub comparison_fit_size: usize,
    pub comparison_fit_steps: usize,
}

impl Default for CheckSpec {
    fn default() -> Self {
        Self {
            stein_sizes: vec![100, 1_000, 10_000, 100_000],
            stein_repeats: 4,
            stein_tolerance: 0.02,
            stein_reference_size: 100_000,
            constant_size: 10_000,
            constant_tolerance: 0.05,
            fd_instances: 50,
            fd_step: 1e-5,
            fd_tolerance: 1e-5,
            fd_jvp_tolerance: 1e-4,
            comparison_batches: 200,
            comparison_batch_size: 500,
            comparison_fit_size: 20_000,
            comparison_fit_steps: 2000,
        }
    }
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind) -> Self {
        Self {
            experiment: ExperimentSection {
                kind,
                seed: 0,
                output: None,
            },
            env: EnvModel::default(),
            policy: PolicySpec::default(),
            baseline: BaselineSpec::default(),
            ppo: PpoConfig::default(),
            variance: VarianceSpec::default(),
            train: TrainSection::default(),
            check: CheckSpec::default(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn render(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of the rendered text.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.render().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        // TOML integers are signed 64-bit.
        let max = i64::MAX as u64;
        if self.experiment.seed > max || self.train.seeds.iter().any(|s| *s > max) {
            return bad(format!("seeds must be at most {max}"));
        }
        self.env.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.ppo.validate()?;
        let v = &self.variance;
        if v.batches < 2 {
            return bad("variance.batches must be at least 2".into());
        }
        if v.sample_sizes.contains(&0) {
            return bad("variance.sample_sizes must be positive".into());
        }
        if v.holdout_steps == 0 && v.estimators.iter().any(|e| e.needs_fit()) {
            return bad("fitted estimators need variance.holdout_steps > 0".into());
        }
        let c = &self.check;
        if c.stein_sizes.contains(&0) || c.stein_repeats == 0 || c.stein_reference_size == 0 {
            return bad("check sizes and repeats must be positive".into());
        }
        if c.comparison_batches < 2 || c.comparison_batch_size == 0 {
            return bad("check.comparison_batches must be at least 2".into());
        }
        if !(c.fd_step > 0.0) {
            return bad("check.fd_step must be positive".into());
        }
        if self.baseline.psi_hidden.is_empty() {
            return bad("baseline.psi_hidden needs at least one width".into());
        }
        Ok(())
    }
}

impl Default for EnvModel {
    fn default() -> Self {
        EnvModel::Lqr(crate::envs::Lqr::scalar())
    }
}
