//! Seeded synthetic body/hand sequences with a learnable body→hands mapping.
//!
//! Body channels are sums of three sinusoids. Hand channels are
//! `0.5 · sin(M b + ρ c)`, where `M` (90×24) and `c` (90) are fixed for every
//! dataset and `ρ` is a small per-record phase.

use std::f64::consts::TAU;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{BodyPoseSequence, DatasetManifest, HandPoseSequence, SequenceRecord, BODY_DIM, HAND_DIM};

pub const SYNTHETIC_FPS: u32 = 30;

/// Seed of the body→hands mapping shared by all synthetic datasets.
const MAPPING_SEED: u64 = 0x4841_4e44_4d41_5031;
const HAND_AMPLITUDE: f64 = 0.5;
const MIX_GAIN: f64 = 1.5;
const MAX_RECORD_PHASE: f64 = 0.15;
const SPEAKERS: u32 = 4;

struct Mapping {
    mix: Array2<f64>,
    phase_dir: Vec<f64>,
}

impl Mapping {
    fn fixed() -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(MAPPING_SEED);
        let scale = MIX_GAIN / (BODY_DIM as f64).sqrt();
        let mix = Array2::from_shape_fn((HAND_DIM, BODY_DIM), |_| {
            rng.sample::<f64, _>(StandardNormal) * scale
        });
        let phase_dir = (0..HAND_DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
        Self { mix, phase_dir }
    }
}

fn synth_body(rng: &mut ChaCha8Rng, frames: usize) -> Array2<f64> {
    let mut body = Array2::zeros((frames, BODY_DIM));
    for c in 0..BODY_DIM {
        for _ in 0..3 {
            let amp: f64 = rng.random_range(0.05..0.2);
            let freq: f64 = rng.random_range(0.2..1.5);
            let phase: f64 = rng.random_range(0.0..TAU);
            for t in 0..frames {
                let time = t as f64 / SYNTHETIC_FPS as f64;
                body[[t, c]] += amp * (TAU * freq * time + phase).sin();
            }
        }
    }
    body
}

/// Generates `n` records of `frames` frames. Output depends only on
/// `(seed, n, frames)`; record `i` uses its own random stream.
pub fn generate_synthetic(seed: u64, n: usize, frames: usize) -> DatasetManifest {
    let mapping = Mapping::fixed();
    let records = (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let body = synth_body(&mut rng, frames);
            let rho: f64 = rng.random_range(-MAX_RECORD_PHASE..MAX_RECORD_PHASE);
            let speaker = rng.random_range(0..SPEAKERS);
            let mut hands = body.dot(&mapping.mix.t());
            for mut row in hands.rows_mut() {
                for (h, dir) in row.iter_mut().zip(&mapping.phase_dir) {
                    *h = HAND_AMPLITUDE * (*h + rho * dir).sin();
                }
            }
            let mut body = BodyPoseSequence::new(body, SYNTHETIC_FPS).expect("finite synthetic body");
            let mut hands = HandPoseSequence::new(hands, SYNTHETIC_FPS).expect("finite synthetic hands");
            body.canonicalize();
            hands.canonicalize();
            SequenceRecord::new(format!("syn{seed}_{i:05}"), format!("spk{speaker}"), body, hands)
                .expect("matching lengths")
        })
        .collect();
    DatasetManifest::new(records)
}
