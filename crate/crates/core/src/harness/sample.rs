use std::path::{Path, PathBuf};

use super::plot::plot_samples;
use super::stage_one::StageOneBundle;
use super::stage_two::StageTwoBundle;
use crate::data::{load_body, save_sequence, BodyPoseSequence, HandPoseSequence, SequenceRecord};
use crate::diversify::{generate_diverse, langevin_prior, temporal_smooth};
use crate::error::{Error, Result};

/// `k` diversified, smoothed versions of the stage-one prediction for one
/// body sequence. Sample `j` uses the prior chain seeded with `seed + j`.
pub fn sample_hands(
    first: &StageOneBundle,
    second: &StageTwoBundle,
    body: &BodyPoseSequence,
    k: usize,
    seed: u64,
) -> Result<Vec<HandPoseSequence>> {
    if k < 1 {
        return Err(Error::validation("k", "at least one sample is required"));
    }
    let initial = first
        .predict(std::slice::from_ref(body))?
        .pop()
        .expect("one prediction per body");
    let window = second.config.stage2.smooth_window;
    (0..k as u64)
        .map(|j| {
            let w = langevin_prior(&second.header, &second.store, &second.config.mcmc, 1, seed.wrapping_add(j))?;
            let raw = generate_diverse(&second.model, &second.store, &initial, &second.bank, &first.phi, &w)?;
            temporal_smooth(&raw, window)
        })
        .collect()
}

/// Writes `k` sequence files `sample_000.json`, ... into `out` and, with
/// `plot`, a time-series image of the samples. Returns the written files.
pub fn sample_diverse(
    stage1: &Path,
    stage2: &Path,
    body_file: &Path,
    k: usize,
    seed: u64,
    out: &Path,
    plot: Option<&Path>,
) -> Result<Vec<PathBuf>> {
    if k < 1 {
        return Err(Error::validation("k", "at least one sample is required"));
    }
    let first = StageOneBundle::load(stage1)?;
    let second = StageTwoBundle::load(stage2)?;
    let (id, speaker, body) = load_body(body_file)?;
    let samples = sample_hands(&first, &second, &body, k, seed)?;
    let mut files = Vec::with_capacity(k);
    for (j, hands) in samples.iter().enumerate() {
        let record = SequenceRecord::new(format!("{id}_sample{j:03}"), speaker.clone(), body.clone(), hands.clone())?;
        let path = out.join(format!("sample_{j:03}.json"));
        save_sequence(&record, &path)?;
        files.push(path);
    }
    if let Some(p) = plot {
        plot_samples(&samples, p)?;
    }
    Ok(files)
}
