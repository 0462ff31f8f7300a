use crate::autoencoder::FeatureExtractor;
use crate::data::{DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::metrics::{
    diversity_from_features, metric_diversity, metric_fhd, metric_l2, metric_mpjre, sequence_features, DiversityStat,
    MetricReport, PairSampling,
};
use crate::nn::Mat;

use super::checkpoint::Checkpoint;
use super::sample::sample_hands;
use super::stage_one::StageOneBundle;
use super::stage_two::StageTwoBundle;

/// L2 and MPJRE averaged over sequences, FHD between the two sets, and the
/// diversity of `pred` across sequences.
pub fn evaluate_predictions(
    truth: &[Mat],
    pred: &[Mat],
    extractor: &FeatureExtractor,
    pairs: usize,
    seed: u64,
) -> Result<MetricReport> {
    if truth.len() != pred.len() {
        return Err(Error::shape("evaluation sets", truth.len(), pred.len()));
    }
    if truth.is_empty() {
        return Err(Error::InsufficientData { required: 1, available: 0 });
    }
    let n = truth.len() as f64;
    let mut l2 = 0.0;
    let mut mpjre = 0.0;
    for (t, p) in truth.iter().zip(pred) {
        l2 += metric_l2(t, p)? / n;
        mpjre += metric_mpjre(t, p)? / n;
    }
    let fhd = metric_fhd(truth, pred, extractor)?;
    let diversity = if pred.len() >= 2 {
        diversity_from_features(&sequence_features(extractor, pred)?, PairSampling::Random(pairs), seed)?
    } else {
        DiversityStat::default()
    };
    Ok(MetricReport {
        l2,
        fhd,
        mpjre_deg: mpjre,
        diversity,
    })
}

/// Stage-one metrics over `split`. With a stage-two checkpoint the
/// diversity entry is the mean, over inputs, of the diversity among
/// `stage2.samples` samples of each input; otherwise it is the diversity of
/// the stage-one predictions across the split.
pub fn evaluate(stage1: &Checkpoint, stage2: Option<&Checkpoint>, manifest: &DatasetManifest, split: Split) -> Result<MetricReport> {
    let first = StageOneBundle::from_checkpoint(stage1)?;
    let second = stage2.map(StageTwoBundle::from_checkpoint).transpose()?;
    let records = manifest.subset(split);
    if records.is_empty() {
        return Err(Error::validation("split", format!("split `{split:?}` has no sequences")));
    }
    let bodies: Vec<_> = records.iter().map(|r| r.body.clone()).collect();
    let truth: Vec<Mat> = records.iter().map(|r| r.hands.frames().clone()).collect();
    let pred: Vec<Mat> = first.predict(&bodies)?.into_iter().map(|h| h.into_frames()).collect();
    let cfg = &first.config;
    let mut report = evaluate_predictions(&truth, &pred, &first.phi, cfg.stage2.diversity_pairs, cfg.seed)?;
    if let Some(second) = second {
        let k = second.config.stage2.samples;
        let pairs = PairSampling::Random(second.config.stage2.diversity_pairs);
        let mut total = DiversityStat::default();
        for (i, body) in bodies.iter().enumerate() {
            let seed = second.config.seed.wrapping_add((i * k) as u64);
            let samples: Vec<Mat> = sample_hands(&first, &second, body, k, seed)?
                .into_iter()
                .map(|h| h.into_frames())
                .collect();
            let d = if samples.len() >= 2 {
                metric_diversity(&samples, &first.phi, pairs, seed)?
            } else {
                DiversityStat::default()
            };
            total.mean += d.mean / bodies.len() as f64;
            total.ci95 += d.ci95 / bodies.len() as f64;
        }
        report.diversity = total;
    }
    Ok(report)
}
