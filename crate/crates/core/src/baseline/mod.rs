//! Baselines `phi_w(s, a) = V(s) + psi_w(s, a)` with the four `psi`
//! families and their fitting procedures.
//!
//! `psi` parameter order: Linear `[q_net]`, Quadratic `[mean_net; diag_raw]`,
//! Mlp `[encoder; head]`.

mod fit;

pub use fit::{
    fit_q, fit_value, fitq_gradient, fitq_objective, min_var_fit, minvar_gradient, minvar_objective, value_objective, FitData, FitOptions,
    FitReport,
};

use crate::diffnet::{dot, Activation, DenseNet, Layer, ParamSink, FLATTEN_VERSION};
use crate::error::{check_len, Error, Result};
use crate::policy::{parse_values, GaussianPolicy};
use crate::rng::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Value,
    Linear,
    Quadratic,
    Mlp,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 4] = [
        BaselineKind::Value,
        BaselineKind::Linear,
        BaselineKind::Quadratic,
        BaselineKind::Mlp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::Value => "value",
            BaselineKind::Linear => "linear",
            BaselineKind::Quadratic => "quadratic",
            BaselineKind::Mlp => "mlp",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "value" => Ok(BaselineKind::Value),
            "linear" => Ok(BaselineKind::Linear),
            "quadratic" => Ok(BaselineKind::Quadratic),
            "mlp" => Ok(BaselineKind::Mlp),
            other => Err(Error::Parse(format!("unknown baseline kind `{other}`"))),
        }
    }
}

/// State-value approximation `V(s) = offset + scale * net(s)`.
///
/// The affine output map keeps the network regressing onto standardized
/// targets; [`fit_value`] updates it while preserving the current outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueFunction {
    net: DenseNet,
    offset: f64,
    scale: f64,
}

impl ValueFunction {
    pub fn new(net: DenseNet, offset: f64, scale: f64) -> Result<Self> {
        if net.output_dim() != 1 {
            return Err(Error::InvalidArgument("value network must have scalar output".into()));
        }
        if net.layers().last().unwrap().activation != Activation::Identity {
            return Err(Error::InvalidArgument("value network output must be identity".into()));
        }
        if !(scale > 0.0 && scale.is_finite() && offset.is_finite()) {
            return Err(Error::InvalidArgument(format!("bad value output map {offset} + {scale} * net")));
        }
        Ok(Self { net, offset, scale })
    }

    /// Tanh hidden layers, identity output.
    pub fn init(state_dim: usize, hidden: &[usize], rng: &mut Rng) -> Self {
        let mut sizes = vec![state_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let net = DenseNet::init(&sizes, Activation::Tanh, Activation::Identity, rng);
        Self { net, offset: 0.0, scale: 1.0 }
    }

    /// `V == 0` everywhere.
    pub fn zero(state_dim: usize) -> Self {
        let net = DenseNet::new(vec![Layer::zeros(state_dim, 1, Activation::Identity)]).unwrap();
        Self { net, offset: 0.0, scale: 1.0 }
    }

    pub fn net(&self) -> &DenseNet {
        &self.net
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn state_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn eval(&self, state: &[f64]) -> Result<f64> {
        Ok(self.offset + self.scale * self.net.forward(state)?[0])
    }
}

/// MLP `psi`: the state is encoded by one relu layer, concatenated with the
/// action, and passed through a relu layer to a scalar.
#[derive(Debug, Clone, PartialEq)]
pub struct PsiMlp {
    pub encoder: DenseNet,
    pub head: DenseNet,
}

impl PsiMlp {
    pub fn new(encoder: DenseNet, head: DenseNet) -> Result<Self> {
        if head.output_dim() != 1 {
            return Err(Error::InvalidArgument("psi head must have scalar output".into()));
        }
        if head.input_dim() <= encoder.output_dim() {
            return Err(Error::InvalidArgument("psi head input must include the action".into()));
        }
        Ok(Self { encoder, head })
    }

    /// Hidden layers of width `width`; the output layer starts at zero so
    /// `psi == 0` initially.
    pub fn init(state_dim: usize, action_dim: usize, width: usize, rng: &mut Rng) -> Self {
        let encoder = DenseNet::init(&[state_dim, width], Activation::Relu, Activation::Relu, rng);
        let mut head = DenseNet::init(&[width + action_dim, width, 1], Activation::Relu, Activation::Identity, rng);
        zero_last_layer(&mut head);
        Self { encoder, head }
    }

    fn action_dim(&self) -> usize {
        self.head.input_dim() - self.encoder.output_dim()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Psi {
    Zero,
    /// `psi = <grad_a q(s, a)|_{a = mu_pi(s)}, a - mu_pi(s)>`.
    Linear { q_net: DenseNet },
    /// `psi = -(a - m(s))^T diag(softplus(raw))^{-1} (a - m(s))`.
    Quadratic { mean_net: DenseNet, diag_raw: Vec<f64> },
    Mlp(PsiMlp),
}

impl Psi {
    pub fn kind(&self) -> BaselineKind {
        match self {
            Psi::Zero => BaselineKind::Value,
            Psi::Linear { .. } => BaselineKind::Linear,
            Psi::Quadratic { .. } => BaselineKind::Quadratic,
            Psi::Mlp(_) => BaselineKind::Mlp,
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Psi::Zero => 0,
            Psi::Linear { q_net } => q_net.param_count(),
            Psi::Quadratic { mean_net, diag_raw } => mean_net.param_count() + diag_raw.len(),
            Psi::Mlp(m) => m.encoder.param_count() + m.head.param_count(),
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match self {
            Psi::Zero => Vec::new(),
            Psi::Linear { q_net } => q_net.params(),
            Psi::Quadratic { mean_net, diag_raw } => {
                let mut p = mean_net.params();
                p.extend_from_slice(diag_raw);
                p
            }
            Psi::Mlp(m) => {
                let mut p = m.encoder.params();
                p.extend(m.head.params());
                p
            }
        }
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        check_len("psi parameters", self.param_count(), params.len())?;
        match self {
            Psi::Zero => {}
            Psi::Linear { q_net } => q_net.set_params(params)?,
            Psi::Quadratic { mean_net, diag_raw } => {
                let m = mean_net.param_count();
                mean_net.set_params(&params[..m])?;
                diag_raw.copy_from_slice(&params[m..]);
            }
            Psi::Mlp(mlp) => {
                let m = mlp.encoder.param_count();
                mlp.encoder.set_params(&params[..m])?;
                mlp.head.set_params(&params[m..])?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Baseline {
    value: ValueFunction,
    psi: Psi,
    action_dim: usize,
}

/// Layer sizes used by [`Baseline::init`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineShape {
    pub value_hidden: Vec<usize>,
    /// Hidden sizes of the Linear `q_net` and the Quadratic mean network;
    /// the first entry is the Mlp width.
    pub psi_hidden: Vec<usize>,
    /// Initial diagonal of the Quadratic `Sigma_w`.
    pub quadratic_scale: f64,
}

impl Default for BaselineShape {
    fn default() -> Self {
        Self {
            value_hidden: vec![64],
            psi_hidden: vec![64],
            quadratic_scale: 1.0,
        }
    }
}

impl Baseline {
    pub fn new(value: ValueFunction, psi: Psi, action_dim: usize) -> Result<Self> {
        let ds = value.state_dim();
        match &psi {
            Psi::Zero => {}
            Psi::Linear { q_net } => {
                check_len("linear q_net input", ds + action_dim, q_net.input_dim())?;
                check_len("linear q_net output", 1, q_net.output_dim())?;
            }
            Psi::Quadratic { mean_net, diag_raw } => {
                check_len("quadratic mean_net input", ds, mean_net.input_dim())?;
                check_len("quadratic mean_net output", action_dim, mean_net.output_dim())?;
                check_len("quadratic diagonal", action_dim, diag_raw.len())?;
            }
            Psi::Mlp(m) => {
                check_len("mlp encoder input", ds, m.encoder.input_dim())?;
                check_len("mlp head action inputs", action_dim, m.action_dim())?;
            }
        }
        Ok(Self { value, psi, action_dim })
    }

    pub fn init(
        kind: BaselineKind,
        state_dim: usize,
        action_dim: usize,
        shape: &BaselineShape,
        rng: &mut Rng,
    ) -> Self {
        let value = ValueFunction::init(state_dim, &shape.value_hidden, rng);
        let psi = Self::init_psi(kind, state_dim, action_dim, shape, rng);
        Self { value, psi, action_dim }
    }

    pub fn init_psi(
        kind: BaselineKind,
        state_dim: usize,
        action_dim: usize,
        shape: &BaselineShape,
        rng: &mut Rng,
    ) -> Psi {
        match kind {
            BaselineKind::Value => Psi::Zero,
            BaselineKind::Linear => {
                let mut sizes = vec![state_dim + action_dim];
                sizes.extend_from_slice(&shape.psi_hidden);
                sizes.push(1);
                let mut q_net = DenseNet::init(&sizes, Activation::Relu, Activation::Identity, rng);
                zero_last_layer(&mut q_net);
                Psi::Linear { q_net }
            }
            BaselineKind::Quadratic => {
                let mut sizes = vec![state_dim];
                sizes.extend_from_slice(&shape.psi_hidden);
                sizes.push(action_dim);
                let mut mean_net = DenseNet::init(&sizes, Activation::Relu, Activation::Identity, rng);
                zero_last_layer(&mut mean_net);
                let raw = inverse_softplus(shape.quadratic_scale);
                Psi::Quadratic {
                    mean_net,
                    diag_raw: vec![raw; action_dim],
                }
            }
            BaselineKind::Mlp => {
                let width = shape.psi_hidden.first().copied().unwrap_or(64);
                Psi::Mlp(PsiMlp::init(state_dim, action_dim, width, rng))
            }
        }
    }

    pub fn kind(&self) -> BaselineKind {
        self.psi.kind()
    }

    pub fn value(&self) -> &ValueFunction {
        &self.value
    }

    pub fn set_value(&mut self, value: ValueFunction) -> Result<()> {
        check_len("value function state dim", self.state_dim(), value.state_dim())?;
        self.value = value;
        Ok(())
    }

    pub fn psi(&self) -> &Psi {
        &self.psi
    }

    /// Same value function, different `psi`.
    pub fn with_psi(&self, psi: Psi) -> Result<Self> {
        Self::new(self.value.clone(), psi, self.action_dim)
    }

    pub fn state_dim(&self) -> usize {
        self.value.state_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn psi_param_count(&self) -> usize {
        self.psi.param_count()
    }

    pub fn psi_params(&self) -> Vec<f64> {
        self.psi.params()
    }

    pub fn set_psi_params(&mut self, params: &[f64]) -> Result<()> {
        self.psi.set_params(params)
    }

    pub fn with_psi_params(&self, params: &[f64]) -> Result<Self> {
        let mut b = self.clone();
        b.set_psi_params(params)?;
        Ok(b)
    }

    /// Whether `psi` depends on the policy mean (Linear kind).
    pub(crate) fn needs_policy_mean(&self) -> bool {
        matches!(self.psi, Psi::Linear { .. })
    }

    /// Policy mean at `state` when the kind needs it, otherwise empty.
    pub(crate) fn policy_context(&self, policy: &GaussianPolicy, state: &[f64]) -> Result<Vec<f64>> {
        if self.needs_policy_mean() {
            check_len("policy action dim", self.action_dim, policy.action_dim())?;
            policy.mean(state)
        } else {
            Ok(Vec::new())
        }
    }

    fn check_sa(&self, state: &[f64], action: &[f64]) -> Result<()> {
        check_len("state", self.state_dim(), state.len())?;
        check_len("action", self.action_dim, action.len())
    }

    pub fn value_eval(&self, state: &[f64]) -> Result<f64> {
        self.value.eval(state)
    }

    pub fn psi_eval(&self, state: &[f64], action: &[f64], policy: &GaussianPolicy) -> Result<f64> {
        Ok(self.psi_eval_grad(state, action, policy)?.0)
    }

    pub fn phi_eval(&self, state: &[f64], action: &[f64], policy: &GaussianPolicy) -> Result<f64> {
        Ok(self.value_eval(state)? + self.psi_eval(state, action, policy)?)
    }

    /// `grad_a phi(s, a)`, which equals `grad_a psi(s, a)`.
    pub fn phi_action_grad(&self, state: &[f64], action: &[f64], policy: &GaussianPolicy) -> Result<Vec<f64>> {
        Ok(self.psi_eval_grad(state, action, policy)?.1)
    }

    /// `(psi(s, a), grad_a psi(s, a))`.
    pub fn psi_eval_grad(&self, state: &[f64], action: &[f64], policy: &GaussianPolicy) -> Result<(f64, Vec<f64>)> {
        self.check_sa(state, action)?;
        let ctx = self.policy_context(policy, state)?;
        self.psi_eval_grad_ctx(state, action, &ctx)
    }

    pub(crate) fn psi_eval_grad_ctx(&self, state: &[f64], action: &[f64], mu_pi: &[f64]) -> Result<(f64, Vec<f64>)> {
        let da = self.action_dim;
        match &self.psi {
            Psi::Zero => Ok((0.0, vec![0.0; da])),
            Psi::Linear { q_net } => {
                let x = concat(state, mu_pi);
                let ig = q_net.input_grad(&x, &[1.0])?;
                let g = ig[state.len()..].to_vec();
                let diff: Vec<f64> = action.iter().zip(mu_pi).map(|(a, m)| a - m).collect();
                Ok((dot(&g, &diff), g))
            }
            Psi::Quadratic { mean_net, diag_raw } => {
                let m = mean_net.forward(state)?;
                let mut psi = 0.0;
                let mut g = vec![0.0; da];
                for i in 0..da {
                    let d = softplus(diag_raw[i]);
                    let e = action[i] - m[i];
                    psi -= e * e / d;
                    g[i] = -2.0 * e / d;
                }
                Ok((psi, g))
            }
            Psi::Mlp(mlp) => {
                let h = mlp.encoder.forward(state)?;
                let x = concat(&h, action);
                let (out, ig, _) = mlp.head.backward(&x, &[1.0])?;
                Ok((out[0], ig[h.len()..].to_vec()))
            }
        }
    }

    /// `grad_aa phi(s, a)`, row-major `d_a x d_a`. Not available for the Mlp
    /// kind.
    pub fn phi_action_hessian(&self, state: &[f64], action: &[f64], _policy: &GaussianPolicy) -> Result<Vec<f64>> {
        self.check_sa(state, action)?;
        let da = self.action_dim;
        let mut h = vec![0.0; da * da];
        match &self.psi {
            Psi::Zero | Psi::Linear { .. } => {}
            Psi::Quadratic { diag_raw, .. } => {
                for i in 0..da {
                    h[i * da + i] = -2.0 / softplus(diag_raw[i]);
                }
            }
            Psi::Mlp(_) => {
                return Err(Error::Unsupported(
                    "action Hessian of the mlp baseline is not available; use the score covariance term".into(),
                ))
            }
        }
        Ok(h)
    }

    /// Diagonal of [`phi_action_hessian`](Self::phi_action_hessian).
    pub(crate) fn hessian_diag(&self) -> Result<Vec<f64>> {
        match &self.psi {
            Psi::Zero | Psi::Linear { .. } => Ok(vec![0.0; self.action_dim]),
            Psi::Quadratic { diag_raw, .. } => Ok(diag_raw.iter().map(|r| -2.0 / softplus(*r)).collect()),
            Psi::Mlp(_) => Err(Error::Unsupported(
                "the hessian covariance term requires an analytic action Hessian, which the mlp baseline lacks".into(),
            )),
        }
    }

    /// `acc += c * grad_w psi(s, a) + grad_w <v, grad_a psi(s, a)>` over the
    /// `psi` parameters.
    pub(crate) fn accumulate_psi_combined(
        &self,
        state: &[f64],
        action: &[f64],
        mu_pi: &[f64],
        c: f64,
        v: &[f64],
        acc: &mut [f64],
    ) -> Result<()> {
        check_len("psi gradient accumulator", self.psi_param_count(), acc.len())?;
        match &self.psi {
            Psi::Zero => {}
            Psi::Linear { q_net } => {
                // Both terms are directional derivatives of grad_a q at mu_pi.
                let x = concat(state, mu_pi);
                let mut tangent = vec![0.0; x.len()];
                for i in 0..self.action_dim {
                    tangent[state.len() + i] = c * (action[i] - mu_pi[i]) + v[i];
                }
                q_net.second_order_into(
                    &x,
                    &tangent,
                    &[1.0],
                    ParamSink::Combined {
                        acc,
                        grad_scale: 0.0,
                        dir_scale: 1.0,
                    },
                );
            }
            Psi::Quadratic { mean_net, diag_raw } => {
                let m = mean_net.forward(state)?;
                let pm = mean_net.param_count();
                let (acc_net, acc_diag) = acc.split_at_mut(pm);
                let mut upstream = vec![0.0; self.action_dim];
                for i in 0..self.action_dim {
                    let d = softplus(diag_raw[i]);
                    let e = action[i] - m[i];
                    upstream[i] = (2.0 * c * e + 2.0 * v[i]) / d;
                    let d_diag = (c * e * e + 2.0 * v[i] * e) / (d * d);
                    acc_diag[i] += d_diag * sigmoid(diag_raw[i]);
                }
                mean_net.accumulate_param_grad(state, &upstream, 1.0, acc_net)?;
            }
            Psi::Mlp(mlp) => {
                let pe = mlp.encoder.param_count();
                let (acc_enc, acc_head) = acc.split_at_mut(pe);
                let h = mlp.encoder.forward(state)?;
                let x = concat(&h, action);
                let mut tangent = vec![0.0; x.len()];
                tangent[h.len()..].copy_from_slice(v);
                let (_, ig, dig) = mlp.head.second_order_into(
                    &x,
                    &tangent,
                    &[1.0],
                    ParamSink::Combined {
                        acc: acc_head,
                        grad_scale: c,
                        dir_scale: 1.0,
                    },
                );
                let upstream: Vec<f64> = (0..h.len()).map(|j| c * ig[j] + dig[j]).collect();
                mlp.encoder.accumulate_param_grad(state, &upstream, 1.0, acc_enc)?;
            }
        }
        Ok(())
    }

    /// `grad_w psi(s, a)` over the `psi` parameters.
    pub fn psi_param_grad(&self, state: &[f64], action: &[f64], policy: &GaussianPolicy) -> Result<Vec<f64>> {
        self.check_sa(state, action)?;
        let ctx = self.policy_context(policy, state)?;
        let mut acc = vec![0.0; self.psi_param_count()];
        self.accumulate_psi_combined(state, action, &ctx, 1.0, &vec![0.0; self.action_dim], &mut acc)?;
        Ok(acc)
    }

    /// `grad_w <v, grad_a psi(s, a)>` over the `psi` parameters.
    pub fn psi_mixed_grad(
        &self,
        state: &[f64],
        action: &[f64],
        v: &[f64],
        policy: &GaussianPolicy,
    ) -> Result<Vec<f64>> {
        self.check_sa(state, action)?;
        check_len("direction", self.action_dim, v.len())?;
        let ctx = self.policy_context(policy, state)?;
        let mut acc = vec![0.0; self.psi_param_count()];
        self.accumulate_psi_combined(state, action, &ctx, 0.0, v, &mut acc)?;
        Ok(acc)
    }

    /// Text serialization with a kind tag; parameters follow one per line,
    /// value network first.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("stein-cv-baseline {FLATTEN_VERSION}\n"));
        out.push_str(&format!("kind {}\n", self.kind().name()));
        out.push_str(&format!("action_dim {}\n", self.action_dim));
        out.push_str(&format!("value_net {}\n", self.value.net.shape_string()));
        out.push_str(&format!("value_offset {:?}\n", self.value.offset));
        out.push_str(&format!("value_scale {:?}\n", self.value.scale));
        let nets = match &self.psi {
            Psi::Zero => "-".to_string(),
            Psi::Linear { q_net } => q_net.shape_string(),
            Psi::Quadratic { mean_net, .. } => mean_net.shape_string(),
            Psi::Mlp(m) => format!("{};{}", m.encoder.shape_string(), m.head.shape_string()),
        };
        out.push_str(&format!("psi_nets {nets}\n"));
        let mut params = self.value.net.params();
        params.extend(self.psi.params());
        out.push_str(&format!("params {}\n", params.len()));
        for p in params {
            out.push_str(&format!("{p:?}\n"));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let mut header = |key: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| Error::Parse(format!("missing `{key}` line")))?;
            let (k, v) = line
                .split_once(' ')
                .ok_or_else(|| Error::Parse(format!("bad header line `{line}`")))?;
            if k != key {
                return Err(Error::Parse(format!("expected `{key}`, found `{k}`")));
            }
            Ok(v.to_string())
        };
        let num = |s: String, what: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|_| Error::Parse(format!("bad {what} `{s}`")))
        };
        let version = header("stein-cv-baseline")?;
        if version != FLATTEN_VERSION {
            return Err(Error::Parse(format!("unsupported flattening order `{version}`")));
        }
        let kind = BaselineKind::parse(&header("kind")?)?;
        let action_dim: usize = header("action_dim")?
            .parse()
            .map_err(|_| Error::Parse("bad action_dim".into()))?;
        let value_net = DenseNet::from_shape_string(&header("value_net")?)?;
        let offset = num(header("value_offset")?, "value_offset")?;
        let scale = num(header("value_scale")?, "value_scale")?;
        let nets = header("psi_nets")?;
        let psi = match kind {
            BaselineKind::Value => Psi::Zero,
            BaselineKind::Linear => Psi::Linear {
                q_net: DenseNet::from_shape_string(&nets)?,
            },
            BaselineKind::Quadratic => Psi::Quadratic {
                mean_net: DenseNet::from_shape_string(&nets)?,
                diag_raw: vec![0.0; action_dim],
            },
            BaselineKind::Mlp => {
                let (e, h) = nets
                    .split_once(';')
                    .ok_or_else(|| Error::Parse(format!("bad mlp psi shapes `{nets}`")))?;
                Psi::Mlp(PsiMlp::new(
                    DenseNet::from_shape_string(e)?,
                    DenseNet::from_shape_string(h)?,
                )?)
            }
        };
        let count: usize = header("params")?
            .parse()
            .map_err(|_| Error::Parse("bad parameter count".into()))?;
        let params = parse_values(lines, count)?;
        let mut value_net = value_net;
        let vp = value_net.param_count();
        if params.len() < vp {
            return Err(Error::Parse("too few parameters".into()));
        }
        value_net.set_params(&params[..vp])?;
        let mut b = Baseline::new(ValueFunction::new(value_net, offset, scale)?, psi, action_dim)?;
        b.set_psi_params(&params[vp..])?;
        Ok(b)
    }
}

fn zero_last_layer(net: &mut DenseNet) {
    let last = net.layers_mut().last_mut().unwrap();
    last.weights.iter_mut().for_each(|w| *w = 0.0);
    last.bias.iter_mut().for_each(|b| *b = 0.0);
}

fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut x = Vec::with_capacity(a.len() + b.len());
    x.extend_from_slice(a);
    x.extend_from_slice(b);
    x
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn inverse_softplus(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}
