//! Diagonal-Gaussian policy with a network mean and a state-independent
//! log standard deviation.
//!
//! Actions are generated through the reparameterization map
//! `a = mean(s) + exp(log_std) * xi` with `xi ~ N(0, I)`; the draw `xi` is
//! returned alongside the action so estimators can replay it.

use crate::diffnet::{Activation, DenseNet, FLATTEN_VERSION};
use crate::error::{check_len, Error, Result};
use crate::rng::{self, Rng};
use std::f64::consts::PI;

/// The standard-normal draw that produced an action.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseRecord(pub Vec<f64>);

/// `pi(a|s) = N(a; mean_net(s), diag(exp(2 log_std)))`.
///
/// Parameter order: mean network (flattened), then `log_std`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicy {
    mean_net: DenseNet,
    log_std: Vec<f64>,
}

impl GaussianPolicy {
    pub fn new(mean_net: DenseNet, log_std: Vec<f64>) -> Result<Self> {
        check_len("log_std", mean_net.output_dim(), log_std.len())?;
        Ok(Self { mean_net, log_std })
    }

    /// Relu MLP mean with the given hidden sizes (empty for a linear policy)
    /// and a constant initial `log_std`. Output-layer weights are scaled by
    /// 0.01 so the initial mean is close to zero.
    pub fn init(state_dim: usize, action_dim: usize, hidden: &[usize], log_std: f64, rng: &mut Rng) -> Self {
        let mut sizes = vec![state_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(action_dim);
        let mut mean_net = DenseNet::init(&sizes, Activation::Relu, Activation::Identity, rng);
        let last = mean_net.layers_mut().last_mut().unwrap();
        last.weights.iter_mut().for_each(|w| *w *= 0.01);
        Self {
            mean_net,
            log_std: vec![log_std; action_dim],
        }
    }

    /// Linear-gain policy `a = -K s + sigma * xi` with `gain` row-major
    /// `action_dim x state_dim`.
    pub fn linear(gain: &[f64], state_dim: usize, action_dim: usize, log_std: Vec<f64>) -> Result<Self> {
        check_len("gain", state_dim * action_dim, gain.len())?;
        let layer = crate::diffnet::Layer {
            inputs: state_dim,
            outputs: action_dim,
            weights: gain.iter().map(|k| -k).collect(),
            bias: vec![0.0; action_dim],
            activation: Activation::Identity,
        };
        Self::new(DenseNet::new(vec![layer])?, log_std)
    }

    pub fn mean_net(&self) -> &DenseNet {
        &self.mean_net
    }

    pub fn log_std(&self) -> &[f64] {
        &self.log_std
    }

    pub fn state_dim(&self) -> usize {
        self.mean_net.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.log_std.len()
    }

    pub fn mean_param_count(&self) -> usize {
        self.mean_net.param_count()
    }

    pub fn param_count(&self) -> usize {
        self.mean_net.param_count() + self.log_std.len()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = self.mean_net.params();
        p.extend_from_slice(&self.log_std);
        p
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        check_len("policy parameters", self.param_count(), params.len())?;
        let m = self.mean_net.param_count();
        self.mean_net.set_params(&params[..m])?;
        self.log_std.copy_from_slice(&params[m..]);
        Ok(())
    }

    pub fn with_params(&self, params: &[f64]) -> Result<Self> {
        let mut p = self.clone();
        p.set_params(params)?;
        Ok(p)
    }

    pub fn std(&self) -> Vec<f64> {
        self.log_std.iter().map(|l| l.exp()).collect()
    }

    pub fn mean(&self, state: &[f64]) -> Result<Vec<f64>> {
        self.mean_net.forward(state)
    }

    /// `f_theta(s, xi)`.
    pub fn action_from_noise(&self, state: &[f64], noise: &[f64]) -> Result<Vec<f64>> {
        check_len("noise", self.action_dim(), noise.len())?;
        let mean = self.mean(state)?;
        Ok(self.action_from_mean(&mean, noise))
    }

    pub(crate) fn action_from_mean(&self, mean: &[f64], noise: &[f64]) -> Vec<f64> {
        mean.iter()
            .zip(&self.log_std)
            .zip(noise)
            .map(|((m, l), x)| m + l.exp() * x)
            .collect()
    }

    pub fn sample_action(&self, state: &[f64], rng: &mut Rng) -> Result<(Vec<f64>, NoiseRecord)> {
        let noise = rng::standard_normal(rng, self.action_dim());
        let action = self.action_from_noise(state, &noise)?;
        Ok((action, NoiseRecord(noise)))
    }

    pub fn log_prob(&self, state: &[f64], action: &[f64]) -> Result<f64> {
        check_len("action", self.action_dim(), action.len())?;
        let mean = self.mean(state)?;
        Ok(self.log_prob_from_mean(&mean, action))
    }

    pub(crate) fn log_prob_from_mean(&self, mean: &[f64], action: &[f64]) -> f64 {
        let d = self.action_dim() as f64;
        let mut lp = -0.5 * d * (2.0 * PI).ln();
        for ((a, m), l) in action.iter().zip(mean).zip(&self.log_std) {
            let z = (a - m) / l.exp();
            lp -= 0.5 * z * z + l;
        }
        lp
    }

    /// `grad_a log pi(a|s) = -Sigma^{-1} (a - mean)`.
    pub fn score_action(&self, state: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        check_len("action", self.action_dim(), action.len())?;
        let mean = self.mean(state)?;
        Ok(self.score_action_from_mean(&mean, action))
    }

    pub(crate) fn score_action_from_mean(&self, mean: &[f64], action: &[f64]) -> Vec<f64> {
        action
            .iter()
            .zip(mean)
            .zip(&self.log_std)
            .map(|((a, m), l)| -(a - m) * (-2.0 * l).exp())
            .collect()
    }

    /// `grad_theta log pi(a|s)` in parameter order.
    pub fn score_theta(&self, state: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        check_len("action", self.action_dim(), action.len())?;
        let mean = self.mean(state)?;
        let mut out = vec![0.0; self.param_count()];
        self.accumulate_score_theta(state, &mean, action, 1.0, &mut out)?;
        Ok(out)
    }

    /// `acc += scale * grad_theta log pi(a|s)`.
    pub(crate) fn accumulate_score_theta(
        &self,
        state: &[f64],
        mean: &[f64],
        action: &[f64],
        scale: f64,
        acc: &mut [f64],
    ) -> Result<()> {
        let m = self.mean_net.param_count();
        // grad_mu log pi = Sigma^{-1} (a - mu) = -score_action
        let upstream: Vec<f64> = self.score_action_from_mean(mean, action).iter().map(|v| -v).collect();
        self.mean_net.accumulate_param_grad(state, &upstream, scale, &mut acc[..m])?;
        for (i, acc_i) in acc[m..].iter_mut().enumerate() {
            *acc_i += scale * self.log_std_score(mean[i], action[i], i);
        }
        Ok(())
    }

    /// `d log pi / d log_std_i = (a_i - mu_i)^2 / sigma_i^2 - 1`.
    #[inline]
    pub(crate) fn log_std_score(&self, mean: f64, action: f64, i: usize) -> f64 {
        let z = (action - mean) * (-self.log_std[i]).exp();
        z * z - 1.0
    }

    /// `grad_theta f_theta(s, xi) . v`.
    pub fn reparam_vjp(&self, state: &[f64], noise: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        check_len("noise", self.action_dim(), noise.len())?;
        check_len("vjp vector", self.action_dim(), v.len())?;
        let mut out = vec![0.0; self.param_count()];
        self.accumulate_reparam_vjp(state, noise, v, 1.0, &mut out)?;
        Ok(out)
    }

    pub(crate) fn accumulate_reparam_vjp(
        &self,
        state: &[f64],
        noise: &[f64],
        v: &[f64],
        scale: f64,
        acc: &mut [f64],
    ) -> Result<()> {
        let m = self.mean_net.param_count();
        self.mean_net.accumulate_param_grad(state, v, scale, &mut acc[..m])?;
        for (i, acc_i) in acc[m..].iter_mut().enumerate() {
            *acc_i += scale * v[i] * self.log_std[i].exp() * noise[i];
        }
        Ok(())
    }

    /// Closed-form `KL[old(.|s) || new(.|s)]` at one state.
    pub fn kl_at(old: &GaussianPolicy, new: &GaussianPolicy, state: &[f64]) -> Result<f64> {
        let mo = old.mean(state)?;
        let mn = new.mean(state)?;
        Ok(kl_diag(&mo, &old.log_std, &mn, &new.log_std))
    }

    /// KL divergence averaged over `states`.
    pub fn kl_mean(old: &GaussianPolicy, new: &GaussianPolicy, states: &[Vec<f64>]) -> Result<f64> {
        if states.is_empty() {
            return Ok(0.0);
        }
        check_len("policy action dim", old.action_dim(), new.action_dim())?;
        let mut total = 0.0;
        for s in states {
            total += Self::kl_at(old, new, s)?;
        }
        Ok(total / states.len() as f64)
    }

    /// Gradient of [`kl_mean`](Self::kl_mean) with respect to the parameters
    /// of `new`.
    pub fn kl_mean_grad(old: &GaussianPolicy, new: &GaussianPolicy, states: &[Vec<f64>]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; new.param_count()];
        if states.is_empty() {
            return Ok(out);
        }
        let scale = 1.0 / states.len() as f64;
        let m = new.mean_net.param_count();
        let var_new: Vec<f64> = new.log_std.iter().map(|l| (2.0 * l).exp()).collect();
        let var_old: Vec<f64> = old.log_std.iter().map(|l| (2.0 * l).exp()).collect();
        for s in states {
            let mo = old.mean(s)?;
            let mn = new.mean(s)?;
            let upstream: Vec<f64> = mn
                .iter()
                .zip(&mo)
                .zip(&var_new)
                .map(|((n, o), v)| (n - o) / v)
                .collect();
            new.mean_net.accumulate_param_grad(s, &upstream, scale, &mut out[..m])?;
            for i in 0..new.action_dim() {
                let d = mn[i] - mo[i];
                out[m + i] += scale * (1.0 - (var_old[i] + d * d) / var_new[i]);
            }
        }
        Ok(out)
    }

    /// Text serialization: a header (format tag, layer shapes, action dim,
    /// parameter count) followed by one parameter per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("stein-cv-policy {FLATTEN_VERSION}\n"));
        out.push_str(&format!("mean_net {}\n", self.mean_net.shape_string()));
        out.push_str(&format!("log_std {}\n", self.log_std.len()));
        let params = self.params();
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
        let version = header("stein-cv-policy")?;
        if version != FLATTEN_VERSION {
            return Err(Error::Parse(format!("unsupported flattening order `{version}`")));
        }
        let mean_net = DenseNet::from_shape_string(&header("mean_net")?)?;
        let d: usize = header("log_std")?
            .parse()
            .map_err(|_| Error::Parse("bad log_std dim".into()))?;
        let count: usize = header("params")?
            .parse()
            .map_err(|_| Error::Parse("bad parameter count".into()))?;
        let params = parse_values(lines, count)?;
        let mut policy = GaussianPolicy::new(mean_net, vec![0.0; d])?;
        policy.set_params(&params)?;
        Ok(policy)
    }
}

pub(crate) fn parse_values<'a>(lines: impl Iterator<Item = &'a str>, count: usize) -> Result<Vec<f64>> {
    let params: Vec<f64> = lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.trim()
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("bad value `{l}`")))
        })
        .collect::<Result<_>>()?;
    check_len("serialized parameters", count, params.len())?;
    Ok(params)
}

pub(crate) fn kl_diag(mean_old: &[f64], log_std_old: &[f64], mean_new: &[f64], log_std_new: &[f64]) -> f64 {
    let mut kl = 0.0;
    for i in 0..mean_old.len() {
        let var_old = (2.0 * log_std_old[i]).exp();
        let var_new = (2.0 * log_std_new[i]).exp();
        let d = mean_old[i] - mean_new[i];
        kl += log_std_new[i] - log_std_old[i] + (var_old + d * d) / (2.0 * var_new) - 0.5;
    }
    kl
}
