//! Evaluation metrics over hand pose sequences and extractor features.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autoencoder::FeatureExtractor;
use crate::error::{Error, Result};
use crate::nn::Mat;

/// Eigenvalues below this are treated as zero in covariance square roots.
pub const EIGEN_FLOOR: f64 = 1e-10;
pub const DEFAULT_DIVERSITY_PAIRS: usize = 500;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DiversityStat {
    pub mean: f64,
    pub ci95: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub l2: f64,
    pub fhd: f64,
    pub mpjre_deg: f64,
    pub diversity: DiversityStat,
}

fn same_shape(ctx: &str, a: &Mat, b: &Mat) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::shape(ctx, format!("{:?}", a.dim()), format!("{:?}", b.dim())));
    }
    if a.nrows() == 0 {
        return Err(Error::validation(ctx, "sequence has no frames"));
    }
    Ok(())
}

/// Mean over frames of the Euclidean norm of the per-frame difference.
pub fn metric_l2(truth: &Mat, pred: &Mat) -> Result<f64> {
    same_shape("l2", truth, pred)?;
    let total: f64 = truth
        .rows()
        .into_iter()
        .zip(pred.rows())
        .map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
        .sum();
    Ok(total / truth.nrows() as f64)
}

/// Mean absolute axis-angle component error, in degrees.
pub fn metric_mpjre(truth: &Mat, pred: &Mat) -> Result<f64> {
    same_shape("mpjre", truth, pred)?;
    let total: f64 = truth.iter().zip(pred.iter()).map(|(a, b)| (a - b).abs()).sum();
    Ok((total / truth.len() as f64).to_degrees())
}

fn mean_and_covariance(features: &Mat) -> (DVector<f64>, DMatrix<f64>) {
    let (n, d) = features.dim();
    let mu = features.mean_axis(Axis(0)).expect("non-empty");
    let centered = features - &mu;
    let cov = centered.t().dot(&centered) / (n - 1) as f64;
    (
        DVector::from_iterator(d, mu.iter().copied()),
        DMatrix::from_row_iterator(d, d, cov.iter().copied()),
    )
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|l| if l < EIGEN_FLOOR { 0.0 } else { l.sqrt() });
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Fréchet distance between Gaussians fit to two feature sets (rows are
/// samples): `‖μ₁−μ₂‖² + Tr(Σ₁ + Σ₂ − 2(Σ₁^{½} Σ₂ Σ₁^{½})^{½})`.
pub fn frechet_distance(a: &Mat, b: &Mat) -> Result<f64> {
    if a.ncols() != b.ncols() {
        return Err(Error::shape("fhd features", a.ncols(), b.ncols()));
    }
    for (name, m) in [("real", a), ("generated", b)] {
        if m.nrows() < 2 {
            return Err(Error::InsufficientData {
                required: 2,
                available: m.nrows(),
            });
        }
        if m.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("{name} features"),
            });
        }
    }
    let (mu1, s1) = mean_and_covariance(a);
    let (mu2, s2) = mean_and_covariance(b);
    let root1 = psd_sqrt(&s1);
    let inner = &root1 * &s2 * &root1;
    let inner = (&inner + inner.transpose()) * 0.5;
    // The inner eigenvalues are on the squared scale, so a floor here would
    // drop components the traces keep. Only rounding negatives are zeroed.
    let cross: f64 = SymmetricEigen::new(inner).eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum();
    let d = (mu1 - mu2).norm_squared() + s1.trace() + s2.trace() - 2.0 * cross;
    Ok(d.max(0.0))
}

/// Stacks the frame-mean extractor feature of each sequence.
pub fn sequence_features(extractor: &FeatureExtractor, sequences: &[Mat]) -> Result<Mat> {
    let mut out = Array2::zeros((sequences.len(), extractor.channels()));
    for (mut row, s) in out.rows_mut().into_iter().zip(sequences) {
        row.assign(&extractor.sequence_feature(s)?);
    }
    Ok(out)
}

pub fn metric_fhd(real: &[Mat], generated: &[Mat], extractor: &FeatureExtractor) -> Result<f64> {
    frechet_distance(
        &sequence_features(extractor, real)?,
        &sequence_features(extractor, generated)?,
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairSampling {
    /// `n` pairs of distinct indices, drawn uniformly and independently.
    Random(usize),
    /// Every unordered pair exactly once.
    Exhaustive,
}

/// Mean pairwise Euclidean distance between feature rows, with a normal
/// approximation 95% half-width `1.96·sd/√pairs`.
pub fn diversity_from_features(features: &Mat, sampling: PairSampling, seed: u64) -> Result<DiversityStat> {
    let k = features.nrows();
    if k < 2 {
        return Err(Error::InsufficientData { required: 2, available: k });
    }
    let dist = |i: usize, j: usize| {
        let d = &features.row(i) - &features.row(j);
        d.dot(&d).sqrt()
    };
    let distances: Vec<f64> = match sampling {
        PairSampling::Exhaustive => (0..k).flat_map(|i| (i + 1..k).map(move |j| (i, j))).map(|(i, j)| dist(i, j)).collect(),
        PairSampling::Random(0) => return Err(Error::Config("diversity needs at least one pair".into())),
        PairSampling::Random(n) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..n)
                .map(|_| {
                    let i = rng.random_range(0..k);
                    let mut j = rng.random_range(0..k - 1);
                    if j >= i {
                        j += 1;
                    }
                    dist(i, j)
                })
                .collect()
        }
    };
    let n = distances.len() as f64;
    let mean = distances.iter().sum::<f64>() / n;
    let var = if distances.len() > 1 {
        distances.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(DiversityStat {
        mean,
        ci95: 1.96 * var.sqrt() / n.sqrt(),
    })
}

pub fn metric_diversity(
    samples: &[Mat],
    extractor: &FeatureExtractor,
    sampling: PairSampling,
    seed: u64,
) -> Result<DiversityStat> {
    if samples.len() < 2 {
        return Err(Error::InsufficientData {
            required: 2,
            available: samples.len(),
        });
    }
    diversity_from_features(&sequence_features(extractor, samples)?, sampling, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autoencoder::HandAutoencoder;
    use crate::nn::ParameterStore;
    use ndarray::array;
    use rand_distr::StandardNormal;

    fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
        Array2::from_shape_fn((r, c), |_| rng.sample(StandardNormal))
    }

    #[test]
    fn l2_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = randn(&mut rng, 8, 90);
        assert_eq!(metric_l2(&h, &h).unwrap(), 0.0);
        let v = metric_l2(&h, &(&h + 0.1)).unwrap();
        assert!((v - 0.1 * 90f64.sqrt()).abs() < 1e-9);
        assert!((v - 0.9487).abs() < 1e-4);
        let p = randn(&mut rng, 8, 90);
        let perm = [7, 2, 5, 0, 1, 6, 3, 4];
        let a = metric_l2(&h, &p).unwrap();
        let b = metric_l2(&h.select(Axis(0), &perm), &p.select(Axis(0), &perm)).unwrap();
        assert!((a - b).abs() < 1e-12);
        assert!(metric_l2(&h, &randn(&mut rng, 7, 90)).is_err());
    }

    #[test]
    fn mpjre_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = randn(&mut rng, 8, 90);
        assert_eq!(metric_mpjre(&h, &h).unwrap(), 0.0);
        let v = metric_mpjre(&h, &(&h + 0.01)).unwrap();
        assert!((v - 0.5730).abs() < 1e-4);
        assert!(metric_mpjre(&h, &randn(&mut rng, 8, 90)).unwrap() >= 0.0);
    }

    #[test]
    fn frechet_identical_and_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = randn(&mut rng, 40, 5);
        let b = randn(&mut rng, 30, 5) + 0.5;
        assert!(frechet_distance(&a, &a).unwrap() < 1e-6);
        let (x, y) = (frechet_distance(&a, &b).unwrap(), frechet_distance(&b, &a).unwrap());
        assert!((x - y).abs() < 1e-9);
        // Rank-deficient: more dimensions than samples.
        let c = randn(&mut rng, 4, 10);
        assert!(frechet_distance(&c, &c).unwrap() < 1e-6);
    }

    #[test]
    fn frechet_matches_closed_form_for_diagonal_gaussians() {
        // Two exact samples sets with known moments.
        let a = array![[1.0, 0.0], [-1.0, 0.0], [0.0, 2.0], [0.0, -2.0]];
        let b = &a * 3.0 + 1.0;
        // Σa = diag(2/3, 8/3), Σb = 9Σa, μ difference (1, 1).
        let expected = 2.0 + (2.0 / 3.0 + 8.0 / 3.0) * (1.0 + 9.0 - 2.0 * 3.0);
        assert!((frechet_distance(&a, &b).unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn frechet_rejects_small_sets() {
        let a = Array2::zeros((1, 3));
        let b = Array2::zeros((4, 3));
        assert!(matches!(frechet_distance(&a, &b), Err(Error::InsufficientData { .. })));
    }

    #[test]
    fn diversity_examples() {
        let same = Array2::from_elem((5, 3), 0.4);
        assert_eq!(
            diversity_from_features(&same, PairSampling::Random(500), 1).unwrap(),
            DiversityStat { mean: 0.0, ci95: 0.0 }
        );
        let two = array![[0.0, 0.0], [3.0, 4.0]];
        let d = diversity_from_features(&two, PairSampling::Random(50), 2).unwrap();
        assert!((d.mean - 5.0).abs() < 1e-12 && d.ci95.abs() < 1e-12);

        let four = array![[0.0, 0.0], [1.0, 0.0], [0.0, 2.0], [3.0, 3.0]];
        let mut brute = Vec::new();
        for i in 0..4 {
            for j in 0..4 {
                if i < j {
                    let dx: f64 = four[[i, 0]] - four[[j, 0]];
                    let dy: f64 = four[[i, 1]] - four[[j, 1]];
                    brute.push(dx.hypot(dy));
                }
            }
        }
        let mean = brute.iter().sum::<f64>() / 6.0;
        let d = diversity_from_features(&four, PairSampling::Exhaustive, 0).unwrap();
        assert!((d.mean - mean).abs() < 1e-12);
        let perm = four.select(Axis(0), &[2, 0, 3, 1]);
        let e = diversity_from_features(&perm, PairSampling::Exhaustive, 0).unwrap();
        assert!((d.mean - e.mean).abs() < 1e-12 && (d.ci95 - e.ci95).abs() < 1e-12);
        assert!(diversity_from_features(&Array2::zeros((1, 2)), PairSampling::Exhaustive, 0).is_err());
    }

    #[test]
    fn diversity_is_seeded() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = randn(&mut rng, 10, 3);
        let a = diversity_from_features(&f, PairSampling::Random(500), 9).unwrap();
        assert_eq!(a, diversity_from_features(&f, PairSampling::Random(500), 9).unwrap());
        assert_ne!(a, diversity_from_features(&f, PairSampling::Random(500), 10).unwrap());
    }

    #[test]
    fn extractor_metrics_run_on_sequences() {
        let ae = HandAutoencoder::two_hand(6).unwrap();
        let mut store = ParameterStore::new();
        ae.init(&mut store, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let ex = FeatureExtractor::new(ae, &store, true).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let seqs: Vec<Mat> = (0..4).map(|_| randn(&mut rng, 8, 90)).collect();
        assert!(metric_fhd(&seqs, &seqs, &ex).unwrap() < 1e-6);
        assert!(metric_diversity(&seqs, &ex, PairSampling::Exhaustive, 0).unwrap().mean > 0.0);
        assert!(metric_diversity(&seqs[..1], &ex, PairSampling::Exhaustive, 0).is_err());
    }

    #[test]
    fn report_json_layout() {
        let r = MetricReport {
            l2: 1.0,
            fhd: 2.0,
            mpjre_deg: 3.0,
            diversity: DiversityStat { mean: 4.0, ci95: 0.5 },
        };
        let v: serde_json::Value = serde_json::to_value(r).unwrap();
        assert_eq!(v, serde_json::json!({"l2": 1.0, "fhd": 2.0, "mpjre_deg": 3.0, "diversity": {"mean": 4.0, "ci95": 0.5}}));
    }
}
