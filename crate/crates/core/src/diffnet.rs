//! Dense feed-forward networks with exact first derivatives and
//! forward-over-reverse second derivatives.
//!
//! Parameters flatten layer by layer; within a layer the weight matrix comes
//! first in row-major order (`out x in`), followed by the bias vector. The
//! order is tagged [`FLATTEN_VERSION`] in serialized files.

use crate::error::{Error, Result};
use crate::rng::Rng;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub const FLATTEN_VERSION: &str = "v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// First and second derivative given the pre-activation `z` and the
    /// output `y = act(z)`. Relu has derivative 0 at the kink and zero
    /// curvature everywhere.
    #[inline]
    fn derivs(self, z: f64, y: f64) -> (f64, f64) {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    (1.0, 0.0)
                } else {
                    (0.0, 0.0)
                }
            }
            Activation::Tanh => {
                let d = 1.0 - y * y;
                (d, -2.0 * y * d)
            }
            Activation::Identity => (1.0, 0.0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::Parse(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs x inputs`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
            activation,
        }
    }

    /// Uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn glorot(inputs: usize, outputs: usize, activation: Activation, rng: &mut Rng) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let weights = (0..inputs * outputs)
            .map(|_| rng.gen_range(-limit..=limit))
            .collect();
        Self {
            inputs,
            outputs,
            weights,
            bias: vec![0.0; outputs],
            activation,
        }
    }

    fn param_count(&self) -> usize {
        self.inputs * self.outputs + self.outputs
    }

    #[inline]
    fn affine(&self, x: &[f64], out: &mut [f64]) {
        for (o, (row, b)) in out
            .iter_mut()
            .zip(self.weights.chunks_exact(self.inputs).zip(&self.bias))
        {
            *o = b + dot(row, x);
        }
    }

    #[inline]
    fn linear(&self, x: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(self.weights.chunks_exact(self.inputs)) {
            *o = dot(row, x);
        }
    }

    /// `out = W^T g`
    #[inline]
    fn transpose_mul(&self, g: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (row, gi) in self.weights.chunks_exact(self.inputs).zip(g) {
            if *gi != 0.0 {
                for (o, w) in out.iter_mut().zip(row) {
                    *o += gi * w;
                }
            }
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A chain of affine layers, each followed by an elementwise activation.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layers: Vec<Layer>,
}

/// Forward-pass cache: input, pre-activations and outputs per layer.
struct Trace {
    /// `acts[0]` is the input; `acts[k + 1]` the output of layer `k`.
    acts: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

/// Everything the forward-over-reverse pass produces.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondOrder {
    pub output: Vec<f64>,
    pub input_grad: Vec<f64>,
    pub param_grad: Vec<f64>,
    /// Directional derivative of `input_grad` along the input tangent.
    pub dir_input_grad: Vec<f64>,
    /// Directional derivative of `param_grad` along the input tangent.
    pub dir_param_grad: Vec<f64>,
}

impl DenseNet {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("network needs at least one layer".into()));
        }
        for (k, layer) in layers.iter().enumerate() {
            if layer.weights.len() != layer.inputs * layer.outputs {
                return Err(Error::LayerDimension {
                    layer: k,
                    expected: layer.inputs * layer.outputs,
                    got: layer.weights.len(),
                });
            }
            if layer.bias.len() != layer.outputs {
                return Err(Error::LayerDimension {
                    layer: k,
                    expected: layer.outputs,
                    got: layer.bias.len(),
                });
            }
            if k > 0 && layers[k - 1].outputs != layer.inputs {
                return Err(Error::LayerDimension {
                    layer: k,
                    expected: layers[k - 1].outputs,
                    got: layer.inputs,
                });
            }
        }
        Ok(Self { layers })
    }

    /// Builds `sizes[0] -> sizes[1] -> ... -> sizes[last]` with `hidden`
    /// activations on every layer but the last, which uses `output`.
    pub fn init(sizes: &[usize], hidden: Activation, output: Activation, rng: &mut Rng) -> Self {
        assert!(sizes.len() >= 2, "need input and output sizes");
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|k| {
                let act = if k + 1 == n { output } else { hidden };
                Layer::glorot(sizes[k], sizes[k + 1], act, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            out.extend_from_slice(&layer.weights);
            out.extend_from_slice(&layer.bias);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        crate::error::check_len("network parameters", self.param_count(), params.len())?;
        let mut offset = 0;
        for layer in &mut self.layers {
            let nw = layer.weights.len();
            layer.weights.copy_from_slice(&params[offset..offset + nw]);
            offset += nw;
            let nb = layer.bias.len();
            layer.bias.copy_from_slice(&params[offset..offset + nb]);
            offset += nb;
        }
        Ok(())
    }

    pub fn with_params(&self, params: &[f64]) -> Result<Self> {
        let mut net = self.clone();
        net.set_params(params)?;
        Ok(net)
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::LayerDimension {
                layer: 0,
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        Ok(())
    }

    fn check_output(&self, what: &'static str, v: &[f64]) -> Result<()> {
        crate::error::check_len(what, self.output_dim(), v.len())
    }

    fn trace(&self, input: &[f64]) -> Trace {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut pre = Vec::with_capacity(self.layers.len());
        acts.push(input.to_vec());
        for layer in &self.layers {
            let mut z = vec![0.0; layer.outputs];
            layer.affine(acts.last().unwrap(), &mut z);
            let y = z.iter().map(|&v| layer.activation.apply(v)).collect();
            pre.push(z);
            acts.push(y);
        }
        Trace { acts, pre }
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut x = input.to_vec();
        for layer in &self.layers {
            let mut z = vec![0.0; layer.outputs];
            layer.affine(&x, &mut z);
            z.iter_mut().for_each(|v| *v = layer.activation.apply(*v));
            x = z;
        }
        Ok(x)
    }

    /// Scalar output of a single-output network.
    pub fn forward_scalar(&self, input: &[f64]) -> Result<f64> {
        if self.output_dim() != 1 {
            return Err(Error::InvalidArgument("network output is not scalar".into()));
        }
        Ok(self.forward(input)?[0])
    }

    /// Reverse pass returning `(output, d/dinput, d/dparams)` of
    /// `upstream . net(input)`.
    pub fn backward(&self, input: &[f64], upstream: &[f64]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        self.check_input(input)?;
        self.check_output("upstream", upstream)?;
        let trace = self.trace(input);
        let mut param_grad = vec![0.0; self.param_count()];
        let input_grad = self.backprop(&trace, upstream, 1.0, Some(&mut param_grad));
        Ok((trace.acts.last().unwrap().clone(), input_grad, param_grad))
    }

    /// Single forward/backward sweep where the upstream vector depends on the
    /// output. Adds `d/dparams (upstream . net(input))` into `acc` when given
    /// and returns `(output, input_grad)`.
    pub(crate) fn forward_backward_with(
        &self,
        input: &[f64],
        acc: Option<&mut [f64]>,
        upstream_of: impl FnOnce(&[f64]) -> Vec<f64>,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_input(input)?;
        let trace = self.trace(input);
        let output = trace.acts.last().unwrap().clone();
        let upstream = upstream_of(&output);
        self.check_output("upstream", &upstream)?;
        let input_grad = self.backprop(&trace, &upstream, 1.0, acc);
        Ok((output, input_grad))
    }

    /// `d/dparams (upstream . net(input))` in flattening order.
    pub fn param_grad(&self, input: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        Ok(self.backward(input, upstream)?.2)
    }

    /// `d/dinput (upstream . net(input))`.
    pub fn input_grad(&self, input: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        self.check_output("upstream", upstream)?;
        let trace = self.trace(input);
        Ok(self.backprop(&trace, upstream, 1.0, None))
    }

    /// Adds `scale * d/dparams (upstream . net(input))` into `acc`.
    pub fn accumulate_param_grad(
        &self,
        input: &[f64],
        upstream: &[f64],
        scale: f64,
        acc: &mut [f64],
    ) -> Result<()> {
        self.check_input(input)?;
        self.check_output("upstream", upstream)?;
        crate::error::check_len("gradient accumulator", self.param_count(), acc.len())?;
        let trace = self.trace(input);
        self.backprop(&trace, upstream, scale, Some(acc));
        Ok(())
    }

    fn backprop(&self, trace: &Trace, upstream: &[f64], scale: f64, mut acc: Option<&mut [f64]>) -> Vec<f64> {
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for layer in &self.layers {
            offsets.push(off);
            off += layer.param_count();
        }
        let mut g = upstream.to_vec();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let z = &trace.pre[k];
            let y = &trace.acts[k + 1];
            let x = &trace.acts[k];
            for (gi, (zi, yi)) in g.iter_mut().zip(z.iter().zip(y)) {
                *gi *= layer.activation.derivs(*zi, *yi).0;
            }
            if let Some(acc) = acc.as_deref_mut() {
                let base = offsets[k];
                let (wacc, bacc) = acc[base..base + layer.param_count()].split_at_mut(layer.weights.len());
                for (row, gi) in wacc.chunks_exact_mut(layer.inputs).zip(&g) {
                    let s = scale * gi;
                    if s != 0.0 {
                        for (r, xi) in row.iter_mut().zip(x) {
                            *r += s * xi;
                        }
                    }
                }
                for (b, gi) in bacc.iter_mut().zip(&g) {
                    *b += scale * gi;
                }
            }
            let mut gin = vec![0.0; layer.inputs];
            layer.transpose_mul(&g, &mut gin);
            g = gin;
        }
        g
    }

    /// Directional derivatives, along `tangent` in input space, of
    /// [`input_grad`](Self::input_grad) and [`param_grad`](Self::param_grad).
    pub fn input_grad_jvp(
        &self,
        input: &[f64],
        tangent: &[f64],
        upstream: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let so = self.second_order(input, tangent, upstream)?;
        Ok((so.dir_input_grad, so.dir_param_grad))
    }

    /// Forward-over-reverse pass: the reverse sweep for
    /// `upstream . net(x + t * tangent)` differentiated in `t` at `t = 0`.
    pub fn second_order(&self, input: &[f64], tangent: &[f64], upstream: &[f64]) -> Result<SecondOrder> {
        self.check_input(input)?;
        crate::error::check_len("tangent", self.input_dim(), tangent.len())?;
        self.check_output("upstream", upstream)?;
        let mut param_grad = vec![0.0; self.param_count()];
        let mut dir_param_grad = vec![0.0; self.param_count()];
        let (output, input_grad, dir_input_grad) = self.second_order_into(
            input,
            tangent,
            upstream,
            ParamSink::Separate {
                grad: &mut param_grad,
                dir: &mut dir_param_grad,
            },
        );
        Ok(SecondOrder {
            output,
            input_grad,
            param_grad,
            dir_input_grad,
            dir_param_grad,
        })
    }

    /// Forward-over-reverse pass writing parameter derivatives into `sink`.
    /// Returns `(output, input_grad, dir_input_grad)`. Inputs must already be
    /// validated.
    pub(crate) fn second_order_into(
        &self,
        input: &[f64],
        tangent: &[f64],
        upstream: &[f64],
        mut sink: ParamSink<'_>,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = self.layers.len();
        let trace = self.trace(input);
        // Forward tangents.
        let mut dacts: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
        let mut dpre: Vec<Vec<f64>> = Vec::with_capacity(n);
        dacts.push(tangent.to_vec());
        for (k, layer) in self.layers.iter().enumerate() {
            let mut dz = vec![0.0; layer.outputs];
            layer.linear(&dacts[k], &mut dz);
            let dy = dz
                .iter()
                .zip(trace.pre[k].iter().zip(&trace.acts[k + 1]))
                .map(|(d, (z, y))| layer.activation.derivs(*z, *y).0 * d)
                .collect();
            dpre.push(dz);
            dacts.push(dy);
        }

        let mut offsets = Vec::with_capacity(n);
        let mut off = 0;
        for layer in &self.layers {
            offsets.push(off);
            off += layer.param_count();
        }

        let mut g = upstream.to_vec();
        let mut dg = vec![0.0; upstream.len()];
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let z = &trace.pre[k];
            let y = &trace.acts[k + 1];
            let x = &trace.acts[k];
            let dx = &dacts[k];
            let dz = &dpre[k];
            for i in 0..layer.outputs {
                let (d1, d2) = layer.activation.derivs(z[i], y[i]);
                let gz = g[i] * d1;
                dg[i] = dg[i] * d1 + g[i] * d2 * dz[i];
                g[i] = gz;
            }
            let range = offsets[k]..offsets[k] + layer.param_count();
            match &mut sink {
                ParamSink::Separate { grad, dir } => {
                    accumulate_layer(&mut grad[range.clone()], layer, x, &[], &g, &[], 1.0, 0.0);
                    accumulate_layer(&mut dir[range], layer, x, dx, &dg, &g, 1.0, 1.0);
                }
                ParamSink::Combined {
                    acc,
                    grad_scale,
                    dir_scale,
                } => {
                    // grad_scale * g x^T + dir_scale * (dg x^T + g dx^T)
                    let mixed: Vec<f64> = g
                        .iter()
                        .zip(&dg)
                        .map(|(gi, dgi)| *grad_scale * gi + *dir_scale * dgi)
                        .collect();
                    accumulate_layer(&mut acc[range], layer, x, dx, &mixed, &g, 1.0, *dir_scale);
                }
            }
            let mut gin = vec![0.0; layer.inputs];
            let mut dgin = vec![0.0; layer.inputs];
            layer.transpose_mul(&g, &mut gin);
            layer.transpose_mul(&dg, &mut dgin);
            g = gin;
            dg = dgin;
        }
        (trace.acts[n].clone(), g, dg)
    }

    /// Textual description of layer shapes, e.g. `4x64:relu,64x2:identity`.
    pub fn shape_string(&self) -> String {
        self.layers
            .iter()
            .map(|l| format!("{}x{}:{}", l.inputs, l.outputs, l.activation.name()))
            .collect::<Vec<_>>()
            .join(",")
    }

    /// Zero-parameter network with the layer shapes described by
    /// [`shape_string`](Self::shape_string).
    pub fn from_shape_string(s: &str) -> Result<Self> {
        let mut layers = Vec::new();
        for part in s.split(',') {
            let (dims, act) = part
                .split_once(':')
                .ok_or_else(|| Error::Parse(format!("bad layer spec `{part}`")))?;
            let (i, o) = dims
                .split_once('x')
                .ok_or_else(|| Error::Parse(format!("bad layer dims `{dims}`")))?;
            let i: usize = i.parse().map_err(|_| Error::Parse(format!("bad dim `{i}`")))?;
            let o: usize = o.parse().map_err(|_| Error::Parse(format!("bad dim `{o}`")))?;
            layers.push(Layer::zeros(i, o, Activation::parse(act)?));
        }
        DenseNet::new(layers)
    }
}

/// Destination for parameter derivatives of the forward-over-reverse pass.
pub(crate) enum ParamSink<'a> {
    /// `grad += param_grad`, `dir += dir_param_grad`.
    Separate { grad: &'a mut [f64], dir: &'a mut [f64] },
    /// `acc += grad_scale * param_grad + dir_scale * dir_param_grad`.
    Combined {
        acc: &'a mut [f64],
        grad_scale: f64,
        dir_scale: f64,
    },
}

/// `acc_w += a_scale * a x^T + b_scale * b dx^T`, `acc_b += a_scale * a`.
#[allow(clippy::too_many_arguments)]
#[inline]
fn accumulate_layer(
    acc: &mut [f64],
    layer: &Layer,
    x: &[f64],
    dx: &[f64],
    a: &[f64],
    b: &[f64],
    a_scale: f64,
    b_scale: f64,
) {
    let (wacc, bacc) = acc.split_at_mut(layer.weights.len());
    let use_b = b_scale != 0.0 && !dx.is_empty();
    for (i, row) in wacc.chunks_exact_mut(layer.inputs).enumerate() {
        let s = a_scale * a[i];
        let t = if use_b { b_scale * b[i] } else { 0.0 };
        if s != 0.0 {
            for (r, xi) in row.iter_mut().zip(x) {
                *r += s * xi;
            }
        }
        if t != 0.0 {
            for (r, dxi) in row.iter_mut().zip(dx) {
                *r += t * dxi;
            }
        }
    }
    for (bv, ai) in bacc.iter_mut().zip(a) {
        *bv += a_scale * ai;
    }
}
