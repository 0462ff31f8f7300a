//! Per-frame MLP autoencoders over hand poses.
//!
//! The single-hand model (45 → C) provides the reference feature space for
//! bilateral disentanglement. The two-hand model φ (90 → C) is the frozen
//! feature extractor behind the perceptual loss, FHD and diversity.

use ndarray::{Array1, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{HandPoseSequence, HAND_DIM, SINGLE_HAND_DIM};
use crate::error::{Error, Result};
use crate::nn::{Adam, Graph, Mat, Mlp, MlpSpec, ParameterStore, Var};

pub const DEFAULT_CHANNELS: usize = 128;
pub const SINGLE_HAND_PREFIX: &str = "ae";
pub const PERCEPTUAL_PREFIX: &str = "phi";

#[derive(Clone, Debug)]
pub struct HandAutoencoder {
    prefix: String,
    input_dim: usize,
    channels: usize,
    encoder: Mlp,
    decoder: Mlp,
}

impl HandAutoencoder {
    pub fn new(prefix: &str, input_dim: usize, channels: usize) -> Result<Self> {
        if input_dim != SINGLE_HAND_DIM && input_dim != HAND_DIM {
            return Err(Error::Config(format!(
                "hand autoencoder input must be {SINGLE_HAND_DIM} or {HAND_DIM} wide, got {input_dim}"
            )));
        }
        Ok(Self {
            prefix: prefix.to_string(),
            input_dim,
            channels,
            encoder: Mlp::new(&format!("{prefix}.enc"), MlpSpec::new(vec![input_dim, channels, channels])?)?,
            decoder: Mlp::new(&format!("{prefix}.dec"), MlpSpec::new(vec![channels, channels, input_dim])?)?,
        })
    }

    pub fn single_hand(channels: usize) -> Result<Self> {
        Self::new(SINGLE_HAND_PREFIX, SINGLE_HAND_DIM, channels)
    }

    pub fn two_hand(channels: usize) -> Result<Self> {
        Self::new(PERCEPTUAL_PREFIX, HAND_DIM, channels)
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn decoder_prefix(&self) -> String {
        format!("{}.dec", self.prefix)
    }

    pub fn init<R: rand::Rng + ?Sized>(&self, store: &mut ParameterStore, rng: &mut R) -> Result<()> {
        self.encoder.init(store, rng)?;
        self.decoder.init(store, rng)
    }

    pub fn encode(&self, g: &mut Graph, store: &ParameterStore, x: Var) -> Result<Var> {
        self.encoder.forward(g, store, x)
    }

    pub fn decode(&self, g: &mut Graph, store: &ParameterStore, f: Var) -> Result<Var> {
        self.decoder.forward(g, store, f)
    }

    /// Encodes N frames (N×input_dim) into N×C features.
    pub fn encode_hand(&self, store: &ParameterStore, frames: &Mat) -> Result<Mat> {
        if frames.ncols() != self.input_dim {
            return Err(Error::shape(format!("{} encoder input", self.prefix), self.input_dim, frames.ncols()));
        }
        self.encoder.eval(store, frames)
    }

    pub fn decode_hand(&self, store: &ParameterStore, features: &Mat) -> Result<Mat> {
        if features.ncols() != self.channels {
            return Err(Error::shape(format!("{} decoder input", self.prefix), self.channels, features.ncols()));
        }
        self.decoder.eval(store, features)
    }

    /// `mean|x − D(E(x))|` as a graph node.
    pub fn reconstruction_loss(&self, g: &mut Graph, store: &ParameterStore, x: Var) -> Result<Var> {
        let f = self.encode(g, store, x)?;
        let y = self.decode(g, store, f)?;
        l1_mean(g, y, x)
    }
}

/// Mean absolute difference of two equally shaped nodes.
pub fn l1_mean(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    let d = g.sub(a, b)?;
    let a = g.abs(d);
    Ok(g.mean(a))
}

/// `mean|F̃ − F| + mean|D(F̃) − D(F)|`. The decoder is supplied by the caller
/// and is expected to bind its parameters as constants.
pub fn disentangle_loss<D>(g: &mut Graph, f_recon: Var, f: Var, mut decode: D) -> Result<Var>
where
    D: FnMut(&mut Graph, Var) -> Result<Var>,
{
    let (a, b) = (g.value(f_recon).dim(), g.value(f).dim());
    if a != b {
        return Err(Error::shape("disentangle loss", format!("{a:?}"), format!("{b:?}")));
    }
    let feature_term = l1_mean(g, f_recon, f)?;
    let dr = decode(g, f_recon)?;
    let df = decode(g, f)?;
    let pose_term = l1_mean(g, dr, df)?;
    g.add(feature_term, pose_term)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 256,
            lr: 1e-3,
            seed: 0,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("pretraining needs positive epochs and batch size".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("pretraining learning rate must be positive, got {}", self.lr)));
        }
        Ok(())
    }
}

/// Trains the autoencoder on the rows of `frames` with an L1 reconstruction
/// loss. Returns the mean loss of each epoch.
pub fn pretrain_autoencoder(
    ae: &HandAutoencoder,
    store: &mut ParameterStore,
    frames: &Mat,
    cfg: &PretrainConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if frames.ncols() != ae.input_dim {
        return Err(Error::shape("pretraining frames", ae.input_dim, frames.ncols()));
    }
    if frames.nrows() == 0 {
        return Err(Error::InsufficientData { required: 1, available: 0 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..frames.nrows()).collect();
    let mut opt = Adam::new(cfg.lr, 0.9, 0.999);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = frames.select(Axis(0), chunk);
            store.zero_grad();
            let mut g = Graph::new();
            let x = g.constant(batch);
            let loss = ae.reconstruction_loss(&mut g, store, x)?;
            let value = g.scalar(loss);
            if !value.is_finite() {
                return Err(Error::NonFiniteGradient { step: epoch });
            }
            let grads = g.backward(loss)?;
            g.accumulate_into(&grads, store)?;
            opt.step(store);
            total += value * chunk.len() as f64;
        }
        history.push(total / frames.nrows() as f64);
    }
    Ok(history)
}

/// A frozen, pre-trained autoencoder used as a per-frame feature extractor.
#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    ae: HandAutoencoder,
    store: ParameterStore,
    trained: bool,
}

impl FeatureExtractor {
    /// Copies the autoencoder's parameters out of `store`. `trained` records
    /// whether they come from pretraining or a checkpoint.
    pub fn new(ae: HandAutoencoder, store: &ParameterStore, trained: bool) -> Result<Self> {
        let mut own = ParameterStore::new();
        own.extend_from(store, &format!("{}.", ae.prefix))?;
        own.freeze();
        let probe = Mat::zeros((1, ae.input_dim));
        ae.encode_hand(&own, &probe)?;
        Ok(Self { ae, store: own, trained })
    }

    pub fn autoencoder(&self) -> &HandAutoencoder {
        &self.ae
    }

    pub fn store(&self) -> &ParameterStore {
        &self.store
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn channels(&self) -> usize {
        self.ae.channels
    }

    fn require_trained(&self) -> Result<()> {
        if self.trained {
            Ok(())
        } else {
            Err(Error::Config(format!("feature extractor `{}` has not been trained", self.ae.prefix)))
        }
    }

    /// Per-frame features of a T×input_dim matrix.
    pub fn encode_frames(&self, frames: &Mat) -> Result<Mat> {
        self.require_trained()?;
        self.ae.encode_hand(&self.store, frames)
    }

    pub fn perceptual_features(&self, hands: &HandPoseSequence) -> Result<Mat> {
        self.encode_frames(hands.frames())
    }

    /// Frame-averaged feature of a sequence.
    pub fn sequence_feature(&self, frames: &Mat) -> Result<Array1<f64>> {
        let f = self.encode_frames(frames)?;
        Ok(f.mean_axis(Axis(0)).expect("sequences are non-empty"))
    }

    /// Encodes inside a training graph with the extractor's weights bound as
    /// constants, so gradients reach `x` but never the extractor.
    pub fn encode_graph(&self, g: &mut Graph, x: Var) -> Result<Var> {
        self.require_trained()?;
        self.ae.encode(g, &self.store, x)
    }
}
