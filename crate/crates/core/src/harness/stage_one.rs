use std::path::Path;

use rand::seq::SliceRandom;
use serde::Serialize;

use super::checkpoint::Checkpoint;
use super::config::TrainConfig;
use super::pretrain::{prefixes as ae_prefixes, Pretrained};
use super::{seeded_rng, JsonLog, EPOCH_LOG, PRETRAIN_KIND, STAGE_ONE_KIND};
use crate::autoencoder::{disentangle_loss, FeatureExtractor};
use crate::data::{mirror_frames, BodyPoseSequence, DatasetManifest, HandPoseSequence, SequenceRecord, SINGLE_HAND_DIM};
use crate::error::{Error, Result};
use crate::losses::{loss_adv, loss_perc, loss_rec, loss_total_weighted, LossReport};
use crate::memory::MemoryBank;
use crate::model::{MemoryUpdate, MotionDiscriminator, StageOneModel, STAGE_ONE_PREFIX};
use crate::nn::{Adam, Graph, Mat, ParameterStore};

fn disc_prefix() -> String {
    format!("{}.", crate::model::DISCRIMINATOR_PREFIX)
}

fn generator_prefixes() -> [String; 3] {
    [format!("{STAGE_ONE_PREFIX}."), "srm.".into(), "tmm.".into()]
}

fn gamma_name(bank: &str) -> String {
    format!("{}{}", bank.trim_end_matches(".slots"), super::GAMMA_SUFFIX)
}

/// A trained stage-one model ready for inference.
#[derive(Clone, Debug)]
pub struct StageOneBundle {
    pub config: TrainConfig,
    pub split_hash: String,
    pub model: StageOneModel,
    pub store: ParameterStore,
    pub pretrained: Pretrained,
    pub phi: FeatureExtractor,
}

impl StageOneBundle {
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.kind != STAGE_ONE_KIND {
            return Err(Error::Checkpoint(format!("expected a `{STAGE_ONE_KIND}` checkpoint, found `{}`", ck.kind)));
        }
        let mut model = StageOneModel::new(ck.config.model.clone())?;
        model.set_training(false);
        let all = ck.to_store()?;
        let mut store = ParameterStore::new();
        for pre in generator_prefixes() {
            store.extend_from(&all, &pre)?;
        }
        store.freeze();
        for bank in model.bank_names() {
            let g = ck.scalar(&gamma_name(&bank))?;
            // Validates the stored bank tensor and coefficient together.
            MemoryBank::new(bank.clone(), store.value(&bank)?.clone(), g)?;
        }
        let pretrained = Pretrained::from_checkpoint(ck)?;
        let phi = pretrained.phi_extractor()?;
        Ok(Self {
            config: ck.config.clone(),
            split_hash: ck.split_hash.clone(),
            model,
            store,
            pretrained,
            phi,
        })
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(dir)?)
    }

    pub fn predict(&self, bodies: &[BodyPoseSequence]) -> Result<Vec<HandPoseSequence>> {
        self.model.predict(&self.store, bodies)
    }
}

#[derive(Clone, Debug, Serialize)]
struct EpochLine {
    epoch: usize,
    steps: u64,
    #[serde(flatten)]
    losses: LossReport,
}

/// Alternating generator/discriminator optimization of stage one.
#[derive(Clone, Debug)]
pub struct StageOneTrainer {
    cfg: TrainConfig,
    model: StageOneModel,
    disc: MotionDiscriminator,
    pretrained: Pretrained,
    ae_store: ParameterStore,
    phi: FeatureExtractor,
    gen: ParameterStore,
    disc_store: ParameterStore,
    opt_g: Adam,
    opt_d: Adam,
    steps: u64,
}

impl StageOneTrainer {
    pub fn new(cfg: TrainConfig, pretrained: Pretrained) -> Result<Self> {
        cfg.validate()?;
        if pretrained.single.channels() != cfg.model.channels {
            return Err(Error::Config(format!(
                "pre-trained autoencoders have {} channels, model.channels is {}",
                pretrained.single.channels(),
                cfg.model.channels
            )));
        }
        let model = StageOneModel::new(cfg.model.clone())?;
        let disc = MotionDiscriminator::new(cfg.model.disc_channels, cfg.model.disc_kernel)?;
        let mut rng = seeded_rng(cfg.seed, 1);
        let mut gen = ParameterStore::new();
        model.init(&mut gen, &mut rng)?;
        let mut disc_store = ParameterStore::new();
        disc.init(&mut disc_store, &mut seeded_rng(cfg.seed, 2))?;
        let phi = pretrained.phi_extractor()?;
        let ae_store = pretrained.frozen_store();
        let opt = || Adam::new(cfg.lr, cfg.beta1, cfg.beta2);
        Ok(Self {
            opt_g: opt(),
            opt_d: opt(),
            cfg,
            model,
            disc,
            pretrained,
            ae_store,
            phi,
            gen,
            disc_store,
            steps: 0,
        })
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn model(&self) -> &StageOneModel {
        &self.model
    }

    pub fn generator_store(&self) -> &ParameterStore {
        &self.gen
    }

    pub fn generator_store_mut(&mut self) -> &mut ParameterStore {
        &mut self.gen
    }

    pub fn discriminator_store(&self) -> &ParameterStore {
        &self.disc_store
    }

    /// One generator update, its memory EMA pass and one discriminator
    /// update. On a non-finite loss, gradient or parameter the trainer is
    /// rolled back to its state before the call.
    pub fn train_batch(&mut self, batch: &[&SequenceRecord]) -> Result<LossReport> {
        if batch.is_empty() {
            return Err(Error::InsufficientData { required: 1, available: 0 });
        }
        let snapshot = (self.gen.clone(), self.disc_store.clone(), self.opt_g.clone(), self.opt_d.clone());
        let result = self.try_batch(batch);
        if result.is_err() {
            (self.gen, self.disc_store, self.opt_g, self.opt_d) = snapshot;
        } else {
            self.steps += 1;
        }
        result
    }

    fn single_hand_targets(&self, hands: &Mat) -> Result<[Mat; 2]> {
        let left = hands.slice(ndarray::s![.., ..SINGLE_HAND_DIM]).to_owned();
        let right = mirror_frames(&hands.slice(ndarray::s![.., SINGLE_HAND_DIM..]).to_owned());
        let ae = &self.pretrained.single;
        Ok([ae.encode_hand(&self.ae_store, &left)?, ae.encode_hand(&self.ae_store, &right)?])
    }

    fn try_batch(&mut self, batch: &[&SequenceRecord]) -> Result<LossReport> {
        let scale = 1.0 / batch.len() as f64;
        let (mut rec, mut perc, mut adv_g, mut adv_d, mut dis) = (0.0, 0.0, 0.0, 0.0, 0.0);
        let mut updates = Vec::with_capacity(batch.len());
        let mut predictions = Vec::with_capacity(batch.len());

        self.gen.zero_grad();
        for r in batch {
            let targets = self.single_hand_targets(r.hands.frames())?;
            let mut g = Graph::new();
            g.freeze_prefix(disc_prefix());
            let body = g.constant(r.body.frames().clone());
            let truth = g.constant(r.hands.frames().clone());
            let trace = self.model.forward(&mut g, &self.gen, body)?;
            let l_rec = loss_rec(&mut g, truth, trace.hands)?;
            let l_perc = loss_perc(&mut g, &self.phi, truth, trace.hands)?;
            let d_fake = self.disc.forward(&mut g, &self.disc_store, trace.hands)?;
            let d_real = self.disc.forward(&mut g, &self.disc_store, truth)?;
            let terms = loss_adv(&mut g, d_real, d_fake)?;
            let l_adv = g.scale(terms.generator, -1.0);
            let mut sides = Vec::with_capacity(2);
            for (f, target) in trace.hand_features.iter().zip(targets) {
                let ft = g.constant(target);
                let ae = &self.pretrained.single;
                let ae_store = &self.ae_store;
                sides.push(disentangle_loss(&mut g, *f, ft, |g, x| ae.decode(g, ae_store, x))?);
            }
            let both = g.add(sides[0], sides[1])?;
            let l_dis = g.scale(both, 0.5);
            let total = loss_total_weighted(&mut g, &self.cfg.loss, l_rec, l_adv, l_perc, l_dis)?;
            let scaled = g.scale(total, scale);
            if !g.scalar(total).is_finite() {
                return Err(Error::NonFinite {
                    context: format!("stage-one loss at step {}", self.steps),
                });
            }
            let grads = g.backward(scaled)?;
            g.accumulate_into(&grads, &mut self.gen)?;
            rec += g.scalar(l_rec) * scale;
            perc += g.scalar(l_perc) * scale;
            adv_g += g.scalar(l_adv) * scale;
            dis += g.scalar(l_dis) * scale;
            updates.push(MemoryUpdate::from_trace(&g, &trace));
            predictions.push(g.value(trace.hands).clone());
        }
        self.finish_update(true)?;
        self.model.update_memories(&mut self.gen, &updates)?;

        self.disc_store.zero_grad();
        for (r, fake) in batch.iter().zip(predictions) {
            let mut g = Graph::new();
            let real = g.constant(r.hands.frames().clone());
            let fake = g.constant(fake);
            let d_real = self.disc.forward(&mut g, &self.disc_store, real)?;
            let d_fake = self.disc.forward(&mut g, &self.disc_store, fake)?;
            let terms = loss_adv(&mut g, d_real, d_fake)?;
            let loss = g.scale(terms.discriminator, -scale);
            adv_d += g.scalar(loss);
            let grads = g.backward(loss)?;
            g.accumulate_into(&grads, &mut self.disc_store)?;
        }
        self.finish_update(false)?;
        LossReport::new(rec, perc, adv_g, adv_d, dis)
    }

    fn finish_update(&mut self, generator: bool) -> Result<()> {
        let (store, opt, who) = if generator {
            (&mut self.gen, &mut self.opt_g, "generator")
        } else {
            (&mut self.disc_store, &mut self.opt_d, "discriminator")
        };
        if !store.grad_norm().is_finite() {
            return Err(Error::NonFinite {
                context: format!("{who} gradient at step {}", self.steps),
            });
        }
        store.clip_grad_norm(self.cfg.clip_norm);
        opt.step(store);
        if !store.all_finite() {
            return Err(Error::NonFinite {
                context: format!("{who} parameters at step {}", self.steps),
            });
        }
        Ok(())
    }

    /// Every trained tensor plus the bank EMA coefficients.
    pub fn checkpoint(&self, split_hash: &str) -> Checkpoint {
        let mut ck = Checkpoint::new(STAGE_ONE_KIND, self.steps, split_hash, self.cfg.clone());
        ck.add_store(&self.pretrained.store, &ae_prefixes());
        let gen: Vec<String> = generator_prefixes().into();
        ck.add_store(&self.gen, &gen.iter().map(String::as_str).collect::<Vec<_>>());
        ck.add_store(&self.disc_store, &[disc_prefix().as_str()]);
        for bank in self.model.bank_names() {
            ck.add_scalar(gamma_name(&bank), self.cfg.model.gamma);
        }
        ck
    }

    /// Stage-one predictions from the current parameters.
    pub fn predict(&self, bodies: &[BodyPoseSequence]) -> Result<Vec<HandPoseSequence>> {
        self.model.predict(&self.gen, bodies)
    }
}

fn load_pretrained(cfg: &TrainConfig, manifest: &DatasetManifest) -> Result<Pretrained> {
    match &cfg.pretrained_ckpt {
        Some(path) => Pretrained::from_checkpoint(&Checkpoint::load_kind(path, PRETRAIN_KIND)?),
        None => Pretrained::train(cfg, manifest, None),
    }
}

/// Full stage-one training run. Writes the checkpoint and the per-epoch
/// loss log into `out`. A non-finite step stores the last good parameters
/// in `out` before the error is returned.
pub fn train_stage_one(cfg: &TrainConfig, manifest: &DatasetManifest, out: &Path) -> Result<Checkpoint> {
    cfg.validate()?;
    let records = manifest.training_records();
    if records.is_empty() {
        return Err(Error::InsufficientData { required: 1, available: 0 });
    }
    let split_hash = manifest.split_hash();
    let pretrained = load_pretrained(cfg, manifest)?;
    let mut trainer = StageOneTrainer::new(cfg.clone(), pretrained)?;
    let mut log = JsonLog::create(&out.join(EPOCH_LOG))?;
    let mut order: Vec<usize> = (0..records.len()).collect();
    let mut rng = seeded_rng(cfg.seed, 3);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = LossReport::default();
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&SequenceRecord> = chunk.iter().map(|&i| records[i]).collect();
            let report = match trainer.train_batch(&batch) {
                Ok(r) => r,
                Err(e @ (Error::NonFinite { .. } | Error::NonFiniteGradient { .. })) => {
                    trainer.checkpoint(&split_hash).save(out)?;
                    return Err(e);
                }
                Err(e) => return Err(e),
            };
            let w = chunk.len() as f64 / records.len() as f64;
            sum.rec += w * report.rec;
            sum.perc += w * report.perc;
            sum.adv_g += w * report.adv_g;
            sum.adv_d += w * report.adv_d;
            sum.dis += w * report.dis;
        }
        let losses = LossReport::new(sum.rec, sum.perc, sum.adv_g, sum.adv_d, sum.dis)?;
        log.write(&EpochLine {
            epoch,
            steps: trainer.steps(),
            losses,
        })?;
    }
    let ck = trainer.checkpoint(&split_hash);
    ck.save(out)?;
    Ok(ck)
}
