use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Layer, ModelSpec, PADDING};
use crate::autodiff::{Tape, Var};
use crate::checksum;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Rows evaluated per tape during inference.
const INFER_CHUNK: usize = 128;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Trainable weights of a [`ModelSpec`], one entry per conv or dense layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    layers: Vec<LayerParams>,
}

impl Parameters {
    /// Wraps raw tensors after checking them against `spec`.
    pub fn new(spec: &ModelSpec, layers: Vec<LayerParams>) -> Result<Self> {
        let shapes = spec.param_shapes();
        if shapes.len() != layers.len() {
            return Err(Error::SpecMismatch(format!(
                "spec has {} parametric layers, got {}",
                shapes.len(),
                layers.len()
            )));
        }
        for (i, ((ws, bs), lp)) in shapes.iter().zip(&layers).enumerate() {
            if lp.weight.shape() != ws.as_slice() || lp.bias.shape() != bs.as_slice() {
                return Err(Error::SpecMismatch(format!(
                    "layer {i}: expected weight {ws:?} bias {bs:?}, got {:?} {:?}",
                    lp.weight.shape(),
                    lp.bias.shape()
                )));
            }
            if !lp.weight.all_finite() || !lp.bias.all_finite() {
                return Err(Error::InvalidArgument(format!("layer {i} has non-finite values")));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [LayerParams] {
        &mut self.layers
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().all(Tensor::all_finite)
    }

    /// CRC-64 over every tensor's shape and little-endian payload.
    pub fn checksum(&self) -> u64 {
        let mut d = checksum::digest();
        for t in self.tensors() {
            for &e in t.shape() {
                d.update(&(e as u64).to_le_bytes());
            }
            for v in t.data() {
                d.update(&v.to_le_bytes());
            }
        }
        d.finalize()
    }

    /// Keeps every layer but the classifier, which is freshly initialized
    /// for `target` (a spec differing at most in its class count).
    pub fn with_new_head(&self, target: &ModelSpec, seed: u64) -> Result<Self> {
        let fresh = init_parameters(target, seed);
        let n = fresh.layers.len();
        let mut layers = fresh.layers;
        for (dst, src) in layers[..n - 1].iter_mut().zip(&self.layers) {
            if dst.weight.shape() != src.weight.shape() {
                return Err(Error::SpecMismatch("body layers differ between source and target spec".into()));
            }
            *dst = src.clone();
        }
        Parameters::new(target, layers)
    }
}

/// He-normal weights (std = sqrt(2 / fan_in)) and zero biases, drawn from a
/// ChaCha stream seeded with `seed`.
pub fn init_parameters(spec: &ModelSpec, seed: u64) -> Parameters {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = spec
        .param_shapes()
        .into_iter()
        .map(|(ws, bs)| {
            let fan_in: usize = if ws.len() == 4 { ws[1..].iter().product() } else { ws[0] };
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            let numel = ws.iter().product();
            let data = (0..numel).map(|_| normal.sample(&mut rng)).collect();
            LayerParams { weight: Tensor::new(ws, data).expect("shape from spec"), bias: Tensor::zeros(bs) }
        })
        .collect();
    Parameters { layers }
}

/// Records the forward pass on `tape` and returns the probability node plus
/// the (weight, bias) leaves in layer order. Leaves are trainable when
/// `trainable` is set.
pub fn forward_on_tape(
    spec: &ModelSpec,
    params: &Parameters,
    tape: &mut Tape,
    input: Var,
    trainable: bool,
) -> Result<(Var, Vec<(Var, Var)>)> {
    check_batch(spec, tape.value(input))?;
    let mut leaves = Vec::with_capacity(params.layers.len());
    let mut cur = input;
    let mut pi = 0;
    for layer in spec.layers() {
        cur = match layer {
            Layer::Conv { .. } | Layer::Dense { .. } => {
                let lp = &params.layers[pi];
                pi += 1;
                let (w, b) = if trainable {
                    (tape.param(lp.weight.clone()), tape.param(lp.bias.clone()))
                } else {
                    (tape.constant(lp.weight.clone()), tape.constant(lp.bias.clone()))
                };
                leaves.push((w, b));
                let z = if matches!(layer, Layer::Conv { .. }) {
                    tape.conv2d(cur, w, 1, PADDING)?
                } else {
                    tape.matmul(cur, w)?
                };
                tape.add_bias(z, b)?
            }
            Layer::Relu => tape.relu(cur),
            Layer::MaxPool => tape.max_pool2(cur)?,
            Layer::Flatten => tape.flatten(cur)?,
            Layer::Softmax => tape.softmax(cur)?,
        };
    }
    Ok((cur, leaves))
}

fn check_batch(spec: &ModelSpec, batch: &Tensor) -> Result<()> {
    let s = batch.shape();
    if s.len() != 4 || s[1..] != spec.input_shape() {
        return Err(Error::shape(format!("batch shape {s:?} does not match model input N×{:?}", spec.input_shape())));
    }
    Ok(())
}

/// Class probabilities for an `N×C×H×W` batch.
pub fn forward(spec: &ModelSpec, params: &Parameters, batch: &Tensor) -> Result<Tensor> {
    check_batch(spec, batch)?;
    let n = batch.shape()[0];
    let mut parts = Vec::with_capacity(n.div_ceil(INFER_CHUNK));
    let mut start = 0;
    while start < n {
        let end = (start + INFER_CHUNK).min(n);
        let chunk = if start == 0 && end == n { batch.clone() } else { batch.slice_outer(start, end)? };
        let mut tape = Tape::new();
        let x = tape.constant(chunk);
        let (probs, _) = forward_on_tape(spec, params, &mut tape, x, false)?;
        parts.push(tape.value(probs).clone());
        start = end;
    }
    Tensor::concat_outer(&parts)
}
