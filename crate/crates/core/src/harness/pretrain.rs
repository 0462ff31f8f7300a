use std::path::Path;

use ndarray::{concatenate, s, Axis};
use serde::Serialize;

use super::checkpoint::Checkpoint;
use super::config::TrainConfig;
use super::{seeded_rng, JsonLog, EPOCH_LOG, PRETRAIN_KIND};
use crate::autoencoder::{pretrain_autoencoder, FeatureExtractor, HandAutoencoder, PERCEPTUAL_PREFIX, SINGLE_HAND_PREFIX};
use crate::data::{generate_synthetic, mirror_frames, DatasetManifest, SINGLE_HAND_DIM};
use crate::error::{Error, Result};
use crate::nn::{Mat, ParameterStore};

/// Offset that keeps held-out synthetic data disjoint from seed-derived data.
const HELD_OUT_SEED_OFFSET: u64 = 0x5eed_0ff5;

/// The two pre-trained autoencoders: the single-hand model used by the
/// disentanglement loss and the two-hand extractor φ.
#[derive(Clone, Debug)]
pub struct Pretrained {
    pub single: HandAutoencoder,
    pub phi: HandAutoencoder,
    pub store: ParameterStore,
}

#[derive(Serialize)]
struct PretrainLogLine {
    epoch: usize,
    single_hand_loss: f64,
    phi_loss: f64,
}

/// Two-hand training frames plus `synthetic_sequences` held-out synthetic
/// sequences, and the pooled single-hand frames (right hands mirrored).
pub fn pretrain_frames(cfg: &TrainConfig, manifest: &DatasetManifest) -> Result<(Mat, Mat)> {
    let mut parts: Vec<Mat> = manifest
        .training_records()
        .iter()
        .map(|r| r.hands.frames().clone())
        .collect();
    if cfg.pretrain.synthetic_sequences > 0 {
        let held_out = generate_synthetic(
            cfg.seed.wrapping_add(HELD_OUT_SEED_OFFSET),
            cfg.pretrain.synthetic_sequences,
            cfg.model.frames,
        );
        parts.extend(held_out.records.iter().map(|r| r.hands.frames().clone()));
    }
    if parts.is_empty() {
        return Err(Error::InsufficientData { required: 1, available: 0 });
    }
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    let two = concatenate(Axis(0), &views).map_err(|e| Error::shape("pretraining frames", "90 columns", e.to_string()))?;
    let left = two.slice(s![.., ..SINGLE_HAND_DIM]).to_owned();
    let right = mirror_frames(&two.slice(s![.., SINGLE_HAND_DIM..]).to_owned());
    let single = concatenate(Axis(0), &[left.view(), right.view()]).expect("equal widths");
    Ok((two, single))
}

impl Pretrained {
    pub fn new(channels: usize) -> Result<Self> {
        Ok(Self {
            single: HandAutoencoder::single_hand(channels)?,
            phi: HandAutoencoder::two_hand(channels)?,
            store: ParameterStore::new(),
        })
    }

    /// Trains both autoencoders; with `out`, writes the per-epoch losses to
    /// `out/epoch_log.jsonl`.
    pub fn train(cfg: &TrainConfig, manifest: &DatasetManifest, out: Option<&Path>) -> Result<Self> {
        cfg.validate()?;
        let mut p = Self::new(cfg.model.channels)?;
        let (two, single) = pretrain_frames(cfg, manifest)?;
        let mut rng = seeded_rng(cfg.seed, 10);
        p.single.init(&mut p.store, &mut rng)?;
        p.phi.init(&mut p.store, &mut rng)?;
        let pcfg = cfg.pretrain_config();
        let single_losses = pretrain_autoencoder(&p.single, &mut p.store, &single, &pcfg)?;
        let phi_losses = pretrain_autoencoder(&p.phi, &mut p.store, &two, &pcfg)?;
        if let Some(dir) = out {
            let mut log = JsonLog::create(&dir.join(EPOCH_LOG))?;
            for (epoch, (a, b)) in single_losses.iter().zip(&phi_losses).enumerate() {
                log.write(&PretrainLogLine {
                    epoch,
                    single_hand_loss: *a,
                    phi_loss: *b,
                })?;
            }
        }
        Ok(p)
    }

    pub fn checkpoint(&self, cfg: &TrainConfig, split_hash: &str) -> Checkpoint {
        let mut ck = Checkpoint::new(PRETRAIN_KIND, cfg.pretrain.epochs as u64, split_hash, cfg.clone());
        ck.add_store(&self.store, &prefixes());
        ck
    }

    /// Restores the autoencoders from any checkpoint that carries them.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let mut p = Self::new(ck.config.model.channels)?;
        let all = ck.to_store()?;
        for pre in prefixes() {
            p.store.extend_from(&all, pre)?;
        }
        // Probe both models so a mismatched checkpoint fails here.
        p.single.encode_hand(&p.store, &Mat::zeros((1, p.single.input_dim())))?;
        p.phi.encode_hand(&p.store, &Mat::zeros((1, p.phi.input_dim())))?;
        Ok(p)
    }

    pub fn phi_extractor(&self) -> Result<FeatureExtractor> {
        FeatureExtractor::new(self.phi.clone(), &self.store, true)
    }

    /// Autoencoder parameters as a frozen store.
    pub fn frozen_store(&self) -> ParameterStore {
        let mut s = self.store.clone();
        s.freeze();
        s
    }
}

/// Tensor name prefixes owned by the autoencoders.
pub fn prefixes() -> [&'static str; 2] {
    // Trailing dots keep `ae.` from matching other names starting with "ae".
    const SINGLE: &str = concat!("ae", ".");
    const PHI: &str = concat!("phi", ".");
    debug_assert!(SINGLE.starts_with(SINGLE_HAND_PREFIX) && PHI.starts_with(PERCEPTUAL_PREFIX));
    [SINGLE, PHI]
}
