//! Training loops, checkpoints, evaluation and sampling runners.

mod checkpoint;
mod config;
mod eval;
mod plot;
mod pretrain;
mod sample;
mod stage_one;
mod stage_two;

pub use checkpoint::{Checkpoint, CheckpointManifest, Tensor, BLOB_MAGIC, FORMAT_VERSION, GAMMA_SUFFIX, MANIFEST_NAME};
pub use config::{MemoryConfig, PretrainSection, Stage2Config, TrainConfig};
pub use eval::{evaluate, evaluate_predictions};
pub use plot::plot_samples;
pub use pretrain::{pretrain_frames, Pretrained};
pub use sample::{sample_diverse, sample_hands};
pub use stage_one::{train_stage_one, StageOneBundle, StageOneTrainer};
pub use stage_two::{train_stage_two, StageTwoBundle, StageTwoTrainer, StageTwoLogLine, PROTO_BANK, PROTO_GAMMA};

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};

pub const PRETRAIN_KIND: &str = "pretrain";
pub const STAGE_ONE_KIND: &str = "stage1";
pub const STAGE_TWO_KIND: &str = "stage2";
/// Per-epoch loss log written next to each checkpoint.
pub const EPOCH_LOG: &str = "epoch_log.jsonl";

/// A ChaCha8 stream derived from the run seed; each consumer gets its own
/// stream so adding draws in one place never shifts another.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// JSON-lines writer that flushes after every record.
pub struct JsonLog {
    out: BufWriter<File>,
    path: std::path::PathBuf,
}

impl JsonLog {
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            out: BufWriter::new(f),
            path: path.to_path_buf(),
        })
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> Result<()> {
        let line = serde_json::to_string(record)?;
        writeln!(self.out, "{line}")
            .and_then(|_| self.out.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}
