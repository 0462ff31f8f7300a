//! Layers built on [`Graph`]. Each layer only stores its parameter names and
//! shapes; values live in a [`ParameterStore`].

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::graph::{Graph, Mat, Var};
use crate::nn::params::{uniform_fan_in, ParameterStore};

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    LeakyRelu { slope: f64 },
    Identity,
}

impl Default for Activation {
    fn default() -> Self {
        Activation::LeakyRelu {
            slope: DEFAULT_LEAKY_SLOPE,
        }
    }
}

impl Activation {
    fn apply(self, g: &mut Graph, x: Var) -> Var {
        match self {
            Activation::LeakyRelu { slope } => g.leaky_relu(x, slope),
            Activation::Identity => x,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>) -> Result<Self> {
        let spec = Self {
            widths,
            activation: Activation::default(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::Config(format!(
                "MLP needs at least input and output widths, got {:?}",
                self.widths
            )));
        }
        if self.widths.contains(&0) {
            return Err(Error::Config(format!("MLP widths must be positive: {:?}", self.widths)));
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().expect("validated")
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: String,
    pub bias: String,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(prefix: &str, in_dim: usize, out_dim: usize) -> Self {
        Self {
            weight: format!("{prefix}.w"),
            bias: format!("{prefix}.b"),
            in_dim,
            out_dim,
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParameterStore, rng: &mut R) -> Result<()> {
        store.insert(&self.weight, uniform_fan_in(rng, self.in_dim, self.out_dim))?;
        store.insert(&self.bias, Array2::zeros((1, self.out_dim)))
    }

    pub fn forward(&self, g: &mut Graph, store: &ParameterStore, x: Var) -> Result<Var> {
        if g.value(x).ncols() != self.in_dim {
            return Err(Error::shape(&self.weight, self.in_dim, g.value(x).ncols()));
        }
        let w = g.param(store, &self.weight)?;
        let b = g.param(store, &self.bias)?;
        let y = g.matmul(x, w)?;
        g.add_row(y, b)
    }
}

/// Fully connected network; the activation is applied between layers but not
/// after the last one.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub spec: MlpSpec,
    layers: Vec<Linear>,
}

impl Mlp {
    pub fn new(prefix: &str, spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(&format!("{prefix}.l{i}"), w[0], w[1]))
            .collect();
        Ok(Self { spec, layers })
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParameterStore, rng: &mut R) -> Result<()> {
        self.layers.iter().try_for_each(|l| l.init(store, rng))
    }

    pub fn forward(&self, g: &mut Graph, store: &ParameterStore, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, store, h)?;
            if i + 1 < self.layers.len() {
                h = self.spec.activation.apply(g, h);
            }
        }
        Ok(h)
    }

    /// Evaluates on a plain matrix without recording gradients.
    pub fn eval(&self, store: &ParameterStore, x: &Mat) -> Result<Mat> {
        let mut g = Graph::inference();
        let xv = g.constant(x.clone());
        let y = self.forward(&mut g, store, xv)?;
        Ok(g.value(y).clone())
    }
}

/// Row-wise layer normalization with learned gain and bias.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    gain: String,
    bias: String,
    width: usize,
}

impl LayerNorm {
    pub fn new(prefix: &str, width: usize) -> Self {
        Self {
            gain: format!("{prefix}.gain"),
            bias: format!("{prefix}.bias"),
            width,
        }
    }

    pub fn init(&self, store: &mut ParameterStore) -> Result<()> {
        store.insert(&self.gain, Array2::ones((1, self.width)))?;
        store.insert(&self.bias, Array2::zeros((1, self.width)))
    }

    pub fn forward(&self, g: &mut Graph, store: &ParameterStore, x: Var) -> Result<Var> {
        let n = g.layer_norm(x, LAYER_NORM_EPS);
        let gain = g.param(store, &self.gain)?;
        let bias = g.param(store, &self.bias)?;
        let y = g.mul_row(n, gain)?;
        g.add_row(y, bias)
    }
}

/// Multi-head attention with learned input projections and an output
/// projection: per head `softmax(Q_h K_hᵀ / √d) V_h`, heads concatenated.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub channels: usize,
    pub heads: usize,
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
}

pub struct AttentionOutput {
    pub output: Var,
    /// One `T_q × T_k` weight matrix per head.
    pub weights: Vec<Var>,
}

impl MultiHeadAttention {
    pub fn new(prefix: &str, channels: usize, heads: usize) -> Result<Self> {
        if heads == 0 || channels % heads != 0 {
            return Err(Error::Config(format!(
                "channel width {channels} is not divisible by {heads} heads"
            )));
        }
        Ok(Self {
            channels,
            heads,
            q: Linear::new(&format!("{prefix}.q"), channels, channels),
            k: Linear::new(&format!("{prefix}.k"), channels, channels),
            v: Linear::new(&format!("{prefix}.v"), channels, channels),
            out: Linear::new(&format!("{prefix}.o"), channels, channels),
        })
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParameterStore, rng: &mut R) -> Result<()> {
        for l in [&self.q, &self.k, &self.v, &self.out] {
            l.init(store, rng)?;
        }
        Ok(())
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParameterStore,
        query: Var,
        key: Var,
        value: Var,
    ) -> Result<Var> {
        Ok(self.forward_with_weights(g, store, query, key, value)?.output)
    }

    pub fn forward_with_weights(
        &self,
        g: &mut Graph,
        store: &ParameterStore,
        query: Var,
        key: Var,
        value: Var,
    ) -> Result<AttentionOutput> {
        if g.value(key).nrows() != g.value(value).nrows() {
            return Err(Error::shape(
                "attention keys/values",
                g.value(key).nrows(),
                g.value(value).nrows(),
            ));
        }
        let q = self.q.forward(g, store, query)?;
        let k = self.k.forward(g, store, key)?;
        let v = self.v.forward(g, store, value)?;
        let d = self.channels / self.heads;
        let scale = 1.0 / (d as f64).sqrt();
        let mut heads = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.slice_cols(q, h * d, d)?;
            let kh = g.slice_cols(k, h * d, d)?;
            let vh = g.slice_cols(v, h * d, d)?;
            let kt = g.transpose(kh);
            let scores = g.matmul(qh, kt)?;
            let scores = g.scale(scores, scale);
            let attn = g.softmax_rows(scores);
            weights.push(attn);
            heads.push(g.matmul(attn, vh)?);
        }
        let joined = if heads.len() == 1 {
            heads[0]
        } else {
            g.concat_cols(&heads)?
        };
        let output = self.out.forward(g, store, joined)?;
        Ok(AttentionOutput { output, weights })
    }
}

/// `x ← LN(x + MHA(x, ctx, ctx))`, then `x ← LN(x + FFN(x))`.
#[derive(Clone, Debug)]
pub struct AttentionBlock {
    pub attention: MultiHeadAttention,
    norm1: LayerNorm,
    ffn: Mlp,
    norm2: LayerNorm,
}

impl AttentionBlock {
    pub fn new(prefix: &str, channels: usize, heads: usize, ffn_width: usize) -> Result<Self> {
        Ok(Self {
            attention: MultiHeadAttention::new(&format!("{prefix}.mha"), channels, heads)?,
            norm1: LayerNorm::new(&format!("{prefix}.ln1"), channels),
            ffn: Mlp::new(&format!("{prefix}.ffn"), MlpSpec::new(vec![channels, ffn_width, channels])?)?,
            norm2: LayerNorm::new(&format!("{prefix}.ln2"), channels),
        })
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParameterStore, rng: &mut R) -> Result<()> {
        self.attention.init(store, rng)?;
        self.norm1.init(store)?;
        self.ffn.init(store, rng)?;
        self.norm2.init(store)
    }

    /// Returns the block output and the per-head attention weights.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParameterStore,
        x: Var,
        context: Var,
    ) -> Result<(Var, Vec<Var>)> {
        let att = self
            .attention
            .forward_with_weights(g, store, x, context, context)?;
        let h = g.add(x, att.output)?;
        let h = self.norm1.forward(g, store, h)?;
        let f = self.ffn.forward(g, store, h)?;
        let h2 = g.add(h, f)?;
        Ok((self.norm2.forward(g, store, h2)?, att.weights))
    }
}

/// Sinusoidal position table, `frames × channels`.
pub fn positional_encoding(frames: usize, channels: usize) -> Mat {
    Array2::from_shape_fn((frames, channels), |(t, c)| {
        let i = (c / 2) as f64;
        let rate = 1.0 / 10000f64.powf(2.0 * i / channels as f64);
        let angle = t as f64 * rate;
        if c % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

/// Same-length 1D convolution over the row (time) axis of a `T × in` input.
#[derive(Clone, Debug)]
pub struct TemporalConv {
    linear: Linear,
    kernel: usize,
    in_dim: usize,
}

impl TemporalConv {
    pub fn new(prefix: &str, in_dim: usize, out_dim: usize, kernel: usize) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(Error::Config(format!("temporal kernel must be odd, got {kernel}")));
        }
        Ok(Self {
            linear: Linear::new(prefix, kernel * in_dim, out_dim),
            kernel,
            in_dim,
        })
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParameterStore, rng: &mut R) -> Result<()> {
        self.linear.init(store, rng)
    }

    pub fn forward(&self, g: &mut Graph, store: &ParameterStore, x: Var) -> Result<Var> {
        let (frames, width) = g.value(x).dim();
        if width != self.in_dim {
            return Err(Error::shape("temporal conv input", self.in_dim, width));
        }
        let pad = self.kernel / 2;
        let zeros = g.constant(Array2::zeros((pad, width)));
        let padded = if pad > 0 { g.concat_rows(&[zeros, x, zeros])? } else { x };
        let mut taps = Vec::with_capacity(self.kernel);
        for k in 0..self.kernel {
            taps.push(g.slice_rows(padded, k, frames)?);
        }
        let windows = g.concat_cols(&taps)?;
        self.linear.forward(g, store, windows)
    }
}
