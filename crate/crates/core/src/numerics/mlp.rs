use alloc::vec::Vec;

use super::{ensure_finite, ensure_len, Mat64};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
}

/// One affine layer; `weight` is `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Mat64,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            weight: Mat64::zeros(out_dim, in_dim),
            bias: alloc::vec![0.0; out_dim],
        }
    }
}

/// Feedforward network: affine layers with tanh between them and a linear
/// head. An optional stream-mixing matrix is applied to every hidden
/// activation, treating the hidden vector as `streams × (width / streams)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
    pub activation: Activation,
    pub stream_mix: Option<Mat64>,
}

impl MlpParams {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Parameter("network needs at least one layer".into()));
        }
        for layer in &layers {
            ensure_len("layer bias", layer.weight.rows(), layer.bias.len())?;
            ensure_finite(&layer.bias, "layer bias")?;
        }
        for pair in layers.windows(2) {
            ensure_len("layer chain", pair[0].weight.rows(), pair[1].weight.cols())?;
        }
        Ok(Self {
            layers,
            activation: Activation::Tanh,
            stream_mix: None,
        })
    }

    /// Gaussian initialisation scaled by `1/sqrt(fan_in)`, zero biases.
    pub fn init(sizes: &[usize], rng: &mut Rng) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::Parameter("layer size list needs input and output".into()));
        }
        let mut layers = Vec::with_capacity(sizes.len() - 1);
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let scale = 1.0 / libm::sqrt(fan_in.max(1) as f64);
            let data: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| scale * crate::rng::normal(rng))
                .collect();
            layers.push(Layer {
                weight: Mat64::from_vec(fan_out, fan_in, data)?,
                bias: alloc::vec![0.0; fan_out],
            });
        }
        Self::new(layers)
    }

    /// Attach a stream-mixing matrix; every hidden width must split evenly
    /// into `mix.rows()` streams.
    pub fn with_stream_mix(mut self, mix: Mat64) -> Result<Self> {
        if !mix.is_square() || mix.rows() == 0 {
            return Err(Error::Parameter("stream mix must be a non-empty square matrix".into()));
        }
        for layer in &self.layers[..self.layers.len() - 1] {
            if layer.weight.rows() % mix.rows() != 0 {
                return Err(Error::Parameter(alloc::format!(
                    "hidden width {} not divisible into {} streams",
                    layer.weight.rows(),
                    mix.rows()
                )));
            }
        }
        self.stream_mix = Some(mix);
        Ok(self)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].weight.rows()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.as_slice().len() + l.bias.len())
            .sum()
    }

    /// Same shapes, all zeros (used as a gradient accumulator).
    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Layer::zeros(l.weight.rows(), l.weight.cols()))
                .collect(),
            activation: self.activation,
            stream_mix: self.stream_mix.clone(),
        }
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.weight.rows() == b.weight.rows() && a.weight.cols() == b.weight.cols()
            })
    }

    /// `self += scale · other`
    pub fn add_scaled(&mut self, other: &Self, scale: f64) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::Dimension {
                context: "parameter shapes",
                expected: self.param_count(),
                got: other.param_count(),
            });
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weight.as_mut_slice().iter_mut().zip(b.weight.as_slice()) {
                *x += scale * y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += scale * y;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for layer in &mut self.layers {
            for x in layer.weight.as_mut_slice() {
                *x *= factor;
            }
            for x in &mut layer.bias {
                *x *= factor;
            }
        }
    }

    /// Flat view of coordinate `i` (weights of each layer, then its biases).
    pub fn coord(&self, mut i: usize) -> f64 {
        for layer in &self.layers {
            let nw = layer.weight.as_slice().len();
            if i < nw {
                return layer.weight.as_slice()[i];
            }
            i -= nw;
            if i < layer.bias.len() {
                return layer.bias[i];
            }
            i -= layer.bias.len();
        }
        panic!("coordinate out of range");
    }

    pub fn coord_mut(&mut self, mut i: usize) -> &mut f64 {
        for layer in &mut self.layers {
            let nw = layer.weight.as_slice().len();
            if i < nw {
                return &mut layer.weight.as_mut_slice()[i];
            }
            i -= nw;
            if i < layer.bias.len() {
                return &mut layer.bias[i];
            }
            i -= layer.bias.len();
        }
        panic!("coordinate out of range");
    }

    pub fn max_abs(&self) -> f64 {
        (0..self.param_count())
            .map(|i| self.coord(i).abs())
            .fold(0.0, f64::max)
    }
}

/// Activation record for one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input fed to each layer (post-activation, post-mix of the previous one).
    inputs: Vec<Vec<f64>>,
    /// Hidden tanh outputs before stream mixing.
    hidden: Vec<Vec<f64>>,
}

fn mix_streams(mix: &Mat64, h: &[f64], transpose: bool) -> Vec<f64> {
    let streams = mix.rows();
    let width = h.len() / streams;
    let mut out = alloc::vec![0.0; h.len()];
    for i in 0..streams {
        for j in 0..streams {
            let w = if transpose { mix.get(j, i) } else { mix.get(i, j) };
            if w == 0.0 {
                continue;
            }
            let src = &h[j * width..(j + 1) * width];
            for (o, s) in out[i * width..(i + 1) * width].iter_mut().zip(src) {
                *o += w * s;
            }
        }
    }
    out
}

pub fn mlp_forward(params: &MlpParams, x: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
    ensure_len("network input", params.input_dim(), x.len())?;
    ensure_finite(x, "network input")?;
    let depth = params.layers.len();
    let mut inputs = Vec::with_capacity(depth);
    let mut hidden = Vec::with_capacity(depth - 1);
    let mut current = x.to_vec();
    for (i, layer) in params.layers.iter().enumerate() {
        let mut z = layer.weight.matvec(&current);
        for (zi, b) in z.iter_mut().zip(&layer.bias) {
            *zi += b;
        }
        inputs.push(current);
        if i + 1 == depth {
            return Ok((z, ForwardCache { inputs, hidden }));
        }
        let h: Vec<f64> = z.iter().map(|&v| libm::tanh(v)).collect();
        current = match &params.stream_mix {
            Some(mix) => mix_streams(mix, &h, false),
            None => h.clone(),
        };
        hidden.push(h);
    }
    unreachable!("network has at least one layer")
}

/// Backpropagate `d_logits` through the cached pass; returns gradients with
/// the same shapes as `params`.
pub fn mlp_backward(params: &MlpParams, cache: &ForwardCache, d_logits: &[f64]) -> Result<MlpParams> {
    let depth = params.layers.len();
    if cache.inputs.len() != depth || cache.hidden.len() + 1 != depth {
        return Err(Error::Dimension {
            context: "forward cache depth",
            expected: depth,
            got: cache.inputs.len(),
        });
    }
    for (layer, input) in params.layers.iter().zip(&cache.inputs) {
        ensure_len("forward cache layer input", layer.weight.cols(), input.len())?;
    }
    ensure_len("logit gradient", params.output_dim(), d_logits.len())?;

    let mut grads = params.zeros_like();
    let mut delta = d_logits.to_vec();
    for i in (0..depth).rev() {
        let layer = &params.layers[i];
        let input = &cache.inputs[i];
        let g = &mut grads.layers[i];
        for (r, &d) in delta.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            let cols = layer.weight.cols();
            let row = &mut g.weight.as_mut_slice()[r * cols..(r + 1) * cols];
            for (w, &a) in row.iter_mut().zip(input) {
                *w += d * a;
            }
        }
        g.bias.copy_from_slice(&delta);
        if i == 0 {
            break;
        }
        let d_input = layer.weight.matvec_t(&delta);
        let d_hidden = match &params.stream_mix {
            Some(mix) => mix_streams(mix, &d_input, true),
            None => d_input,
        };
        let h = &cache.hidden[i - 1];
        delta = d_hidden
            .iter()
            .zip(h)
            .map(|(&d, &hv)| d * (1.0 - hv * hv))
            .collect();
    }
    Ok(grads)
}
