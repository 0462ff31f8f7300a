use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::RngCore;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::config::TrainConfig;
use super::stage_one::StageOneBundle;
use super::{seeded_rng, JsonLog, EPOCH_LOG, STAGE_ONE_KIND, STAGE_TWO_KIND};
use crate::autoencoder::FeatureExtractor;
use crate::data::{DatasetManifest, SequenceRecord};
use crate::diversify::{
    langevin_posterior, langevin_prior, retrieve_prototypes, stack_batches, stage_two_grad_step, GaussianLikelihood,
    GenerationModel, SamplingHeader, Stage2Batch, GENERATOR_PREFIX, HEADER_PREFIX,
};
use crate::error::{Error, Result};
use crate::memory::{build_prototype_memory, MemoryBank};
use crate::metrics::sequence_features;
use crate::nn::{Adam, Mat, ParameterStore};

pub const PROTO_BANK: &str = "proto.slots";
pub const PROTO_GAMMA: &str = "proto.gamma";

fn stage_two_prefixes() -> [String; 2] {
    [format!("{GENERATOR_PREFIX}."), format!("{HEADER_PREFIX}.")]
}

/// A trained stage-two model ready for sampling.
#[derive(Clone, Debug)]
pub struct StageTwoBundle {
    pub config: TrainConfig,
    pub model: GenerationModel,
    pub header: SamplingHeader,
    pub store: ParameterStore,
    pub bank: MemoryBank,
}

impl StageTwoBundle {
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.kind != STAGE_TWO_KIND {
            return Err(Error::Checkpoint(format!("expected a `{STAGE_TWO_KIND}` checkpoint, found `{}`", ck.kind)));
        }
        let s = &ck.config.stage2;
        let slots = ck.tensor(PROTO_BANK)?.to_mat()?;
        let mut bank = MemoryBank::new(PROTO_BANK, slots, ck.scalar(PROTO_GAMMA)?)?;
        bank.set_training(false);
        let model = GenerationModel::new(bank.dim(), s.w_dim, s.hidden)?;
        let header = SamplingHeader::new(s.w_dim, s.header_hidden, s.sigma_w)?;
        let all = ck.to_store()?;
        let mut store = ParameterStore::new();
        for pre in stage_two_prefixes() {
            store.extend_from(&all, &pre)?;
        }
        store.freeze();
        Ok(Self {
            config: ck.config.clone(),
            model,
            header,
            store,
            bank,
        })
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(dir)?)
    }
}

/// One line of the stage-two epoch log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTwoLogLine {
    pub epoch: usize,
    pub steps: u64,
    /// Mean absolute residual at the posterior perturbations.
    pub loss: f64,
    pub mcmc_steps: usize,
    pub delta_prior: f64,
    pub delta_posterior: f64,
}

/// Alternating posterior/prior sampling and parameter updates of stage two.
#[derive(Clone, Debug)]
pub struct StageTwoTrainer {
    cfg: TrainConfig,
    phi: FeatureExtractor,
    model: GenerationModel,
    header: SamplingHeader,
    store: ParameterStore,
    bank: MemoryBank,
    opt: Adam,
    rng: ChaCha8Rng,
    steps: u64,
}

impl StageTwoTrainer {
    /// Builds the prototype bank from the training sequences' extractor
    /// features and initializes the generator and sampling header.
    pub fn new(cfg: TrainConfig, phi: FeatureExtractor, records: &[&SequenceRecord]) -> Result<Self> {
        cfg.validate()?;
        let hands: Vec<Mat> = records.iter().map(|r| r.hands.frames().clone()).collect();
        if hands.is_empty() {
            return Err(Error::InsufficientData {
                required: cfg.memory.proto_slots,
                available: 0,
            });
        }
        let features = sequence_features(&phi, &hands)?;
        let bank = build_prototype_memory(PROTO_BANK, &features, cfg.memory.proto_slots, cfg.memory.proto_gamma, cfg.seed)?;
        let s = &cfg.stage2;
        let model = GenerationModel::new(bank.dim(), s.w_dim, s.hidden)?;
        let header = SamplingHeader::new(s.w_dim, s.header_hidden, s.sigma_w)?;
        let mut store = ParameterStore::new();
        let mut rng = seeded_rng(cfg.seed, 4);
        model.init(&mut store, &mut rng)?;
        header.init(&mut store, &mut rng)?;
        Ok(Self {
            opt: Adam::new(cfg.lr, cfg.beta1, cfg.beta2),
            rng: seeded_rng(cfg.seed, 5),
            cfg,
            phi,
            model,
            header,
            store,
            bank,
            steps: 0,
        })
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn store(&self) -> &ParameterStore {
        &self.store
    }

    pub fn bank(&self) -> &MemoryBank {
        &self.bank
    }

    pub fn model(&self) -> &GenerationModel {
        &self.model
    }

    pub fn header(&self) -> &SamplingHeader {
        &self.header
    }

    /// Frame batch whose conditioning input and target are the given hands.
    pub fn batch(&self, hands: &[&Mat]) -> Result<Stage2Batch> {
        let parts = hands
            .iter()
            .map(|h| {
                Ok(Stage2Batch {
                    hands: (*h).clone(),
                    prototypes: retrieve_prototypes(&self.bank, &self.phi, h)?,
                    target: (*h).clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        stack_batches(&parts)
    }

    /// Draws one prior and one posterior chain per frame, applies one
    /// optimizer step and refines the prototype slots. Returns the mean
    /// absolute residual at the posterior samples before the update. The
    /// trainer is rolled back if anything becomes non-finite.
    pub fn train_batch(&mut self, records: &[&SequenceRecord]) -> Result<f64> {
        if records.is_empty() {
            return Err(Error::InsufficientData { required: 1, available: 0 });
        }
        let snapshot = (self.store.clone(), self.opt.clone(), self.bank.clone());
        let result = self.try_batch(records);
        match &result {
            Ok(_) => self.steps += 1,
            Err(_) => (self.store, self.opt, self.bank) = snapshot,
        }
        result
    }

    fn try_batch(&mut self, records: &[&SequenceRecord]) -> Result<f64> {
        let hands: Vec<&Mat> = records.iter().map(|r| r.hands.frames()).collect();
        let batch = self.batch(&hands)?;
        let n = batch.len();
        let mcmc = &self.cfg.mcmc;
        let prior_seed = self.rng.next_u64();
        let posterior_seed = self.rng.next_u64();
        let w_minus = langevin_prior(&self.header, &self.store, mcmc, n, prior_seed)?;
        let likelihood = GaussianLikelihood {
            model: &self.model,
            store: &self.store,
            batch: &batch,
            sigma_eps: mcmc.sigma_eps,
        };
        let w_plus = langevin_posterior(&self.header, &self.store, &likelihood, mcmc, n, posterior_seed)?;
        self.store.zero_grad();
        let step = stage_two_grad_step(
            &self.model,
            &self.header,
            &mut self.store,
            &batch,
            &w_minus,
            &w_plus,
            self.cfg.stage2.residual,
            mcmc.sigma_eps,
        )?;
        if !step.loss.is_finite() || !self.store.grad_norm().is_finite() {
            return Err(Error::NonFinite {
                context: format!("stage-two step {}", self.steps),
            });
        }
        self.store.clip_grad_norm(self.cfg.clip_norm);
        self.opt.step(&mut self.store);
        if !self.store.all_finite() {
            return Err(Error::NonFinite {
                context: format!("stage-two parameters at step {}", self.steps),
            });
        }
        if self.cfg.memory.proto_ema {
            for h in hands {
                let q = self.phi.sequence_feature(h)?;
                self.bank.update_slot_ema(q.view())?;
            }
        }
        Ok(step.loss)
    }

    /// Mean absolute residual of every given sequence at `w = 0`.
    pub fn residual_at_zero(&self, records: &[&SequenceRecord]) -> Result<f64> {
        let hands: Vec<&Mat> = records.iter().map(|r| r.hands.frames()).collect();
        let batch = self.batch(&hands)?;
        let w = Array2::zeros((batch.len(), self.model.w_dim()));
        let out = self.model.eval(&self.store, &batch.hands, &batch.prototypes, &w)?;
        Ok((&batch.target - &out).mapv(f64::abs).mean().unwrap_or(0.0))
    }

    pub fn checkpoint(&self, split_hash: &str) -> Checkpoint {
        let mut ck = Checkpoint::new(STAGE_TWO_KIND, self.steps, split_hash, self.cfg.clone());
        let pre = stage_two_prefixes();
        ck.add_store(&self.store, &[pre[0].as_str(), pre[1].as_str()]);
        ck.tensors.insert(PROTO_BANK.into(), super::Tensor::from_mat(self.bank.slots()));
        ck.add_scalar(PROTO_GAMMA, self.bank.gamma());
        ck
    }

    pub fn bundle(&self) -> Result<StageTwoBundle> {
        StageTwoBundle::from_checkpoint(&self.checkpoint(""))
    }
}

/// Full stage-two training run on top of a stage-one checkpoint. The
/// stage-one checkpoint is loaded before anything else happens.
pub fn train_stage_two(cfg: &TrainConfig, manifest: &DatasetManifest, stage1: &Path, out: &Path) -> Result<Checkpoint> {
    let first = Checkpoint::load_kind(stage1, STAGE_ONE_KIND)?;
    cfg.validate()?;
    let bundle = StageOneBundle::from_checkpoint(&first)?;
    let records = manifest.training_records();
    let mut trainer = StageTwoTrainer::new(cfg.clone(), bundle.phi.clone(), &records)?;
    let split_hash = manifest.split_hash();
    let mut log = JsonLog::create(&out.join(EPOCH_LOG))?;
    let mut order: Vec<usize> = (0..records.len()).collect();
    let mut rng = seeded_rng(cfg.seed, 6);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&SequenceRecord> = chunk.iter().map(|&i| records[i]).collect();
            match trainer.train_batch(&batch) {
                Ok(l) => loss += l * chunk.len() as f64 / records.len() as f64,
                Err(e @ (Error::NonFinite { .. } | Error::NonFiniteGradient { .. })) => {
                    trainer.checkpoint(&split_hash).save(out)?;
                    return Err(e);
                }
                Err(e) => return Err(e),
            }
        }
        log.write(&StageTwoLogLine {
            epoch,
            steps: trainer.steps(),
            loss,
            mcmc_steps: cfg.mcmc.steps,
            delta_prior: cfg.mcmc.delta_prior,
            delta_posterior: cfg.mcmc.delta_posterior,
        })?;
    }
    let ck = trainer.checkpoint(&split_hash);
    ck.save(out)?;
    Ok(ck)
}
