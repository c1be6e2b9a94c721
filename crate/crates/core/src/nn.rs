//! Small dense network kernel: SiLU MLP with hand-written backprop and Adam.
//!
//! Everything is `f64`. Batches are row-major `(batch, features)` matrices.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::sampler::Stream;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `(out, in)`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl DenseLayer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { weight: Array2::zeros((outputs, inputs)), bias: Array1::zeros(outputs) }
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }

    fn zeros_like(&self) -> Self {
        Self::zeros(self.inputs(), self.outputs())
    }

    fn is_finite(&self) -> bool {
        self.weight.iter().chain(self.bias.iter()).all(|v| v.is_finite())
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn silu(z: f64) -> f64 {
    z * sigmoid(z)
}

fn silu_grad(z: f64) -> f64 {
    let s = sigmoid(z);
    s * (1.0 + z * (1.0 - s))
}

/// Affine layers with SiLU between them; the last layer is linear.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
}

/// Activations saved by the forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of each hidden layer.
    pre: Vec<Array2<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<DenseLayer>,
    /// Gradient with respect to the network input, `(batch, in)`.
    pub input: Array2<f64>,
}

impl Gradients {
    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
    }

    pub fn scale(&mut self, k: f64) {
        for l in &mut self.layers {
            l.weight *= k;
            l.bias *= k;
        }
        self.input *= k;
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(DenseLayer::is_finite)
    }
}

impl Mlp {
    /// Uniform `+-sqrt(1 / fan_in)` initialization for weights and biases.
    pub fn new(sizes: &[usize], rng: &mut Stream) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidInput(format!("bad layer sizes {sizes:?}")));
        }
        let layers = sizes
            .windows(2)
            .map(|w| {
                let bound = (1.0 / w[0] as f64).sqrt();
                let weight = Array2::from_shape_simple_fn((w[1], w[0]), || rng.random_range(-bound..bound));
                let bias = Array1::from_shape_simple_fn(w[1], || rng.random_range(-bound..bound));
                DenseLayer { weight, bias }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidInput("network needs at least one layer".into()));
        }
        for w in layers.windows(2) {
            if w[0].outputs() != w[1].inputs() {
                return Err(Error::InvalidInput("consecutive layer shapes disagree".into()));
            }
        }
        if layers.iter().any(|l| l.bias.len() != l.outputs()) {
            return Err(Error::InvalidInput("bias length disagrees with layer width".into()));
        }
        Ok(Self { layers })
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].inputs()];
        s.extend(self.layers.iter().map(|l| l.outputs()));
        s
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().expect("non-empty").outputs()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_width() {
            return Err(Error::WidthMismatch { expected: self.input_width(), got: x.ncols() });
        }
        Ok(())
    }

    fn affine(layer: &DenseLayer, a: &ArrayView2<f64>) -> Array2<f64> {
        let mut z = a.dot(&layer.weight.t());
        z += &layer.bias;
        z
    }

    /// Inference without keeping activations.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let last = self.layers.len() - 1;
        let mut a = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = Self::affine(layer, &a.view());
            if i < last {
                z.mapv_inplace(silu);
            }
            a = z;
        }
        Ok(a)
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, ForwardCache)> {
        self.check_input(&x)?;
        let last = self.layers.len() - 1;
        let mut cache = ForwardCache { inputs: Vec::with_capacity(self.layers.len()), pre: Vec::new() };
        let mut a = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = Self::affine(layer, &a.view());
            cache.inputs.push(a);
            if i < last {
                a = z.mapv(silu);
                cache.pre.push(z);
            } else {
                a = z;
            }
        }
        Ok((a, cache))
    }

    /// Gradients of `sum(output * grad_out)` with respect to every parameter
    /// and to the input. `cache` must come from the matching forward pass.
    pub fn backward(&self, cache: &ForwardCache, grad_out: ArrayView2<f64>) -> Result<Gradients> {
        if grad_out.ncols() != self.output_width() || grad_out.nrows() != cache.inputs[0].nrows() {
            return Err(Error::InvalidInput("grad_out shape does not match the forward pass".into()));
        }
        let mut layers: Vec<DenseLayer> = Vec::with_capacity(self.layers.len());
        let mut delta = grad_out.to_owned();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let a_in = &cache.inputs[i];
            let weight = delta.t().dot(a_in);
            let bias = delta.sum_axis(Axis(0));
            layers.push(DenseLayer { weight, bias });
            let mut upstream = delta.dot(&layer.weight);
            if i > 0 {
                Zip::from(&mut upstream).and(&cache.pre[i - 1]).for_each(|g, &z| *g *= silu_grad(z));
            }
            delta = upstream;
        }
        layers.reverse();
        Ok(Gradients { layers, input: delta })
    }

    pub fn zero_gradients(&self, batch: usize) -> Gradients {
        Gradients {
            layers: self.layers.iter().map(DenseLayer::zeros_like).collect(),
            input: Array2::zeros((batch, self.input_width())),
        }
    }
}

fn as_row(input: &[f64]) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((1, input.len()), input).expect("contiguous row")
}

/// Single-vector forward pass.
pub fn mlp_forward(net: &Mlp, input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
    let (out, cache) = net.forward(as_row(input))?;
    Ok((out.row(0).to_vec(), cache))
}

/// Single-vector backward pass; the input gradient is returned as a `(1, in)` row.
pub fn mlp_backward(net: &Mlp, cache: &ForwardCache, grad_out: &[f64]) -> Result<Gradients> {
    net.backward(cache, as_row(grad_out))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<DenseLayer>,
    pub v: Vec<DenseLayer>,
    pub step_count: u64,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(net: &Mlp, config: AdamConfig) -> Self {
        let zeros: Vec<DenseLayer> = net.layers.iter().map(DenseLayer::zeros_like).collect();
        Self { m: zeros.clone(), v: zeros, step_count: 0, config }
    }
}

/// Bias-corrected Adam update. Parameters are left untouched when any
/// gradient is non-finite.
pub fn adam_step(net: &mut Mlp, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    if !grads.is_finite() {
        return Err(Error::Diverged("non-finite gradient".into()));
    }
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    state.step_count += 1;
    let t = state.step_count as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
    };
    for (((layer, g), m), v) in net.layers.iter_mut().zip(&grads.layers).zip(&mut state.m).zip(&mut state.v) {
        Zip::from(&mut layer.weight)
            .and(&mut m.weight)
            .and(&mut v.weight)
            .and(&g.weight)
            .for_each(|p, m, v, &g| update(p, m, v, g));
        Zip::from(&mut layer.bias)
            .and(&mut m.bias)
            .and(&mut v.bias)
            .and(&g.bias)
            .for_each(|p, m, v, &g| update(p, m, v, g));
    }
    Ok(())
}

/// Sinusoidal step embedding: `sin(t f_k)` then `cos(t f_k)` with
/// `f_k = 10000^(-k / (dim/2))`.
pub fn time_embed(t: usize, dim: usize) -> Result<Vec<f64>> {
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::InvalidInput(format!("embedding width must be even and positive, got {dim}")));
    }
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for k in 0..half {
        let freq = 10000f64.powf(-(k as f64) / half as f64);
        let arg = t as f64 * freq;
        out[k] = arg.sin();
        out[half + k] = arg.cos();
    }
    Ok(out)
}

pub const WEIGHTS_FORMAT: &str = "ydg-weights-v1";

/// JSON header line preceding the little-endian `f64` parameter block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsHeader {
    pub format: String,
    pub layer_sizes: Vec<usize>,
    pub activation: String,
    pub param_count: usize,
    pub shapes_sha256: String,
    pub params_sha256: String,
    /// Caller-defined metadata (schedule, training config, normalizers...).
    pub meta: serde_json::Value,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn shapes_digest(sizes: &[usize]) -> String {
    let mut h = Sha256::new();
    for w in sizes.windows(2) {
        for d in [w[1], w[0], w[1]] {
            h.update((d as u64).to_le_bytes());
        }
    }
    hex(&h.finalize())
}

fn param_bytes(net: &Mlp) -> Vec<u8> {
    let mut out = Vec::with_capacity(net.param_count() * 8);
    for l in &net.layers {
        for v in l.weight.iter().chain(l.bias.iter()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn save_weights(path: &Path, net: &Mlp, meta: serde_json::Value) -> Result<()> {
    let bytes = param_bytes(net);
    let header = WeightsHeader {
        format: WEIGHTS_FORMAT.to_string(),
        layer_sizes: net.sizes(),
        activation: "silu".to_string(),
        param_count: net.param_count(),
        shapes_sha256: shapes_digest(&net.sizes()),
        params_sha256: hex(&Sha256::digest(&bytes)),
        meta,
    };
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

pub fn load_weights(path: &Path) -> Result<(Mlp, WeightsHeader)> {
    let mut raw = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut raw)?;
    let split = raw
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::CorruptWeights("missing header line".into()))?;
    let header: WeightsHeader =
        serde_json::from_slice(&raw[..split]).map_err(|e| Error::CorruptWeights(format!("bad header: {e}")))?;
    if header.format != WEIGHTS_FORMAT {
        return Err(Error::CorruptWeights(format!("unknown format {:?}", header.format)));
    }
    if header.layer_sizes.len() < 2 || shapes_digest(&header.layer_sizes) != header.shapes_sha256 {
        return Err(Error::CorruptWeights("shape checksum mismatch".into()));
    }
    let body = &raw[split + 1..];
    let expected: usize = header.layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
    if expected != header.param_count || body.len() != expected * 8 {
        return Err(Error::CorruptWeights(format!(
            "parameter block holds {} bytes, expected {}",
            body.len(),
            expected * 8
        )));
    }
    if hex(&Sha256::digest(body)) != header.params_sha256 {
        return Err(Error::CorruptWeights("parameter checksum mismatch".into()));
    }
    let mut values = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let mut layers = Vec::new();
    for w in header.layer_sizes.windows(2) {
        let weight = Array2::from_shape_fn((w[1], w[0]), |_| values.next().expect("sized"));
        let bias = Array1::from_shape_fn(w[1], |_| values.next().expect("sized"));
        layers.push(DenseLayer { weight, bias });
    }
    Ok((Mlp::from_layers(layers)?, header))
}

/// Rows `[start, end)` of a batch matrix as an owned array.
pub(crate) fn rows(x: &Array2<f64>, start: usize, end: usize) -> Array2<f64> {
    x.slice(s![start..end, ..]).to_owned()
}
