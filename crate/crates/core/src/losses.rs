//! Training objectives, built as graph nodes.

use serde::{Deserialize, Serialize};

use crate::autoencoder::{l1_mean, FeatureExtractor};
use crate::error::{Error, Result};
use crate::nn::{Graph, Var};

/// Weight of the disentanglement term in the stage-one objective.
pub const DISENTANGLE_WEIGHT: f64 = 0.5;

/// Scalar values of one stage-one step. `adv_g` and `adv_d` are the losses
/// each player minimizes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub rec: f64,
    pub perc: f64,
    pub adv_g: f64,
    pub adv_d: f64,
    pub dis: f64,
    pub total: f64,
}

impl LossReport {
    pub fn new(rec: f64, perc: f64, adv_g: f64, adv_d: f64, dis: f64) -> Result<Self> {
        let r = Self {
            rec,
            perc,
            adv_g,
            adv_d,
            dis,
            total: total_stage1_value(rec, adv_g, perc, dis),
        };
        if [r.rec, r.perc, r.adv_g, r.adv_d, r.dis, r.total].iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "loss report".into(),
            });
        }
        Ok(r)
    }
}

fn same_shape(g: &Graph, ctx: &str, a: Var, b: Var) -> Result<()> {
    let (x, y) = (g.value(a).dim(), g.value(b).dim());
    if x != y {
        return Err(Error::shape(ctx, format!("{x:?}"), format!("{y:?}")));
    }
    Ok(())
}

/// Mean absolute difference between ground truth and prediction.
pub fn loss_rec(g: &mut Graph, truth: Var, pred: Var) -> Result<Var> {
    same_shape(g, "reconstruction loss", truth, pred)?;
    l1_mean(g, truth, pred)
}

/// Mean absolute difference of the frozen extractor's per-frame features.
pub fn loss_perc(g: &mut Graph, extractor: &FeatureExtractor, truth: Var, pred: Var) -> Result<Var> {
    same_shape(g, "perceptual loss", truth, pred)?;
    let ft = extractor.encode_graph(g, truth)?;
    let fp = extractor.encode_graph(g, pred)?;
    l1_mean(g, ft, fp)
}

/// The two adversarial objectives, both as values to maximize.
#[derive(Clone, Copy, Debug)]
pub struct AdversarialTerms {
    /// `log D(fake)`.
    pub generator: Var,
    /// `log D(real) + log(1 − D(fake))`.
    pub discriminator: Var,
}

/// `d_real` and `d_fake` are clamped discriminator scores (1×1 or N×1).
pub fn loss_adv(g: &mut Graph, d_real: Var, d_fake: Var) -> Result<AdversarialTerms> {
    let log_fake = g.log(d_fake);
    let generator = g.mean(log_fake);
    let log_real = g.log(d_real);
    let real = g.mean(log_real);
    let neg = g.scale(d_fake, -1.0);
    let one_minus = g.add_scalar(neg, 1.0);
    let log_miss = g.log(one_minus);
    let miss = g.mean(log_miss);
    let discriminator = g.add(real, miss)?;
    Ok(AdversarialTerms { generator, discriminator })
}

pub fn total_stage1_value(rec: f64, adv_g: f64, perc: f64, dis: f64) -> f64 {
    rec + adv_g + perc + DISENTANGLE_WEIGHT * dis
}

/// `rec + adv_g + perc + 0.5·dis` as a graph node.
pub fn loss_total_stage1(g: &mut Graph, rec: Var, adv_g: Var, perc: Var, dis: Var) -> Result<Var> {
    let a = g.add(rec, adv_g)?;
    let b = g.add(a, perc)?;
    let d = g.scale(dis, DISENTANGLE_WEIGHT);
    g.add(b, d)
}

/// Per-term weights of the stage-one objective, relative to `rec`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub adversarial: f64,
    pub perceptual: f64,
    pub disentangle: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            adversarial: 1.0,
            perceptual: 1.0,
            disentangle: DISENTANGLE_WEIGHT,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("adversarial", self.adversarial),
            ("perceptual", self.perceptual),
            ("disentangle", self.disentangle),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Config(format!("loss.{name} must be non-negative, got {w}")));
            }
        }
        Ok(())
    }
}

/// `rec + w_adv·adv_g + w_perc·perc + w_dis·dis` as a graph node.
pub fn loss_total_weighted(g: &mut Graph, w: &LossWeights, rec: Var, adv_g: Var, perc: Var, dis: Var) -> Result<Var> {
    let a = g.scale(adv_g, w.adversarial);
    let p = g.scale(perc, w.perceptual);
    let d = g.scale(dis, w.disentangle);
    let x = g.add(rec, a)?;
    let y = g.add(x, p)?;
    g.add(y, d)
}

/// Mean absolute difference between the stage-one hands and the
/// diversification network's reconstruction.
pub fn loss_stage2(g: &mut Graph, h: Var, reconstruction: Var) -> Result<Var> {
    same_shape(g, "stage-two loss", h, reconstruction)?;
    l1_mean(g, h, reconstruction)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autoencoder::HandAutoencoder;
    use crate::nn::{finite_diff_check, GradCheckOptions, Mat, ParameterStore};
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
        Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
    }

    fn eval2(f: impl Fn(&mut Graph, Var, Var) -> Result<Var>, a: &Mat, b: &Mat) -> Result<f64> {
        let mut g = Graph::inference();
        let (x, y) = (g.constant(a.clone()), g.constant(b.clone()));
        let v = f(&mut g, x, y)?;
        Ok(g.scalar(v))
    }

    #[test]
    fn reconstruction_loss_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = rand_mat(&mut rng, 8, 90);
        assert_eq!(eval2(loss_rec, &h, &h).unwrap(), 0.0);
        assert!((eval2(loss_rec, &h, &(&h + 0.1)).unwrap() - 0.1).abs() < 1e-12);
        let p = rand_mat(&mut rng, 8, 90);
        let direct: f64 = h.iter().zip(p.iter()).map(|(a, b)| (a - b).abs()).sum::<f64>() / h.len() as f64;
        assert!((eval2(loss_rec, &h, &p).unwrap() - direct).abs() < 1e-12);
        assert!(eval2(loss_rec, &h, &Array2::zeros((8, 89))).is_err());
    }

    #[test]
    fn stage_two_loss_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = rand_mat(&mut rng, 8, 90);
        assert_eq!(eval2(loss_stage2, &h, &h).unwrap(), 0.0);
        assert!((eval2(loss_stage2, &h, &(&h - 0.2)).unwrap() - 0.2).abs() < 1e-12);
        assert!(eval2(loss_stage2, &h, &rand_mat(&mut rng, 8, 90)).unwrap() >= 0.0);
    }

    fn identity_extractor() -> FeatureExtractor {
        let ae = HandAutoencoder::two_hand(90).unwrap();
        let mut store = ParameterStore::new();
        ae.init(&mut store, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        // Identity encoder: l0 = I, l1 = I, zero biases. Leaky ReLU still
        // bends negative values, so inputs below are kept nonnegative.
        store.set_value("phi.enc.l0.w", Array2::eye(90)).unwrap();
        store.set_value("phi.enc.l1.w", Array2::eye(90)).unwrap();
        FeatureExtractor::new(ae, &store, true).unwrap()
    }

    #[test]
    fn perceptual_loss_examples() {
        let ex = identity_extractor();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = rand_mat(&mut rng, 6, 90).mapv(f64::abs);
        let p = rand_mat(&mut rng, 6, 90).mapv(f64::abs);
        let perc = |g: &mut Graph, a, b| loss_perc(g, &ex, a, b);
        assert_eq!(eval2(perc, &h, &h).unwrap(), 0.0);
        let lp = eval2(perc, &h, &p).unwrap();
        let lr = eval2(loss_rec, &h, &p).unwrap();
        assert!((lp - lr).abs() < 1e-12);
        assert!(lp >= 0.0);

        let untrained = FeatureExtractor::new(ex.autoencoder().clone(), ex.store(), false).unwrap();
        let perc = |g: &mut Graph, a, b| loss_perc(g, &untrained, a, b);
        assert!(eval2(perc, &h, &p).is_err());
    }

    fn adv_values(real: f64, fake: f64) -> (f64, f64) {
        let mut g = Graph::inference();
        let r = g.constant(Array2::from_elem((1, 1), real));
        let f = g.constant(Array2::from_elem((1, 1), fake));
        let t = loss_adv(&mut g, r, f).unwrap();
        (g.scalar(t.generator), g.scalar(t.discriminator))
    }

    #[test]
    fn adversarial_examples() {
        let (_, d) = adv_values(0.5, 0.5);
        assert!((d - 2.0 * 0.5f64.ln()).abs() < 1e-12);
        assert!((d + 1.3863).abs() < 1e-4);
        let (_, d) = adv_values(1.0 - 1e-7, 1e-7);
        assert!(d.abs() < 1e-6);
        let mut last = f64::INFINITY;
        for fake in [0.9, 0.5, 0.1, 1e-3, 1e-7] {
            let (gen, _) = adv_values(0.5, fake);
            assert!(gen < last);
            last = gen;
        }
    }

    #[test]
    fn stage_one_total_weights() {
        assert_eq!(total_stage1_value(1.0, 1.0, 1.0, 1.0), 3.5);
        assert_eq!(total_stage1_value(0.0, 0.0, 0.0, 0.0), 0.0);
        let base = total_stage1_value(0.3, 0.2, 0.1, 0.4);
        assert!((total_stage1_value(0.3, 0.2, 0.1, 1.4) - base - 0.5).abs() < 1e-12);
        assert!((total_stage1_value(1.3, 0.2, 0.1, 0.4) - base - 1.0).abs() < 1e-12);

        let mut g = Graph::inference();
        let parts: Vec<Var> = [1.0, 2.0, 3.0, 4.0]
            .iter()
            .map(|v| g.constant(Array2::from_elem((1, 1), *v)))
            .collect();
        let t = loss_total_stage1(&mut g, parts[0], parts[1], parts[2], parts[3]).unwrap();
        assert_eq!(g.scalar(t), 8.0);
        assert_eq!(LossReport::new(1.0, 3.0, 2.0, 0.0, 4.0).unwrap().total, 8.0);
        assert!(LossReport::new(f64::NAN, 0.0, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn losses_pass_gradient_checks() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ae = HandAutoencoder::two_hand(8).unwrap();
        let mut phi = ParameterStore::new();
        ae.init(&mut phi, &mut rng).unwrap();
        let ex = FeatureExtractor::new(ae, &phi, true).unwrap();
        let truth = rand_mat(&mut rng, 4, 90);
        let mut store = ParameterStore::new();
        store.insert("pred", rand_mat(&mut rng, 4, 90)).unwrap();
        store.insert("real", Array2::from_elem((3, 1), 0.7)).unwrap();
        store.insert("fake", Array2::from_elem((3, 1), 0.3)).unwrap();
        let report = finite_diff_check(&mut store, &GradCheckOptions::default(), |g, s| {
            let p = g.param(s, "pred")?;
            let t = g.constant(truth.clone());
            let rec = loss_rec(g, t, p)?;
            let perc = loss_perc(g, &ex, t, p)?;
            let s2 = loss_stage2(g, t, p)?;
            let real = g.param(s, "real")?;
            let fake = g.param(s, "fake")?;
            let adv = loss_adv(g, real, fake)?;
            let adv_g = g.scale(adv.generator, -1.0);
            let total = loss_total_stage1(g, rec, adv_g, perc, s2)?;
            g.add(total, adv.discriminator)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-3, "{report:?}");
    }

    #[test]
    fn default_weights_reproduce_published_total() {
        let mut g = Graph::new();
        let parts: Vec<Var> = [0.3, 0.2, 0.1, 0.4].iter().map(|v| g.constant(ndarray::array![[*v]])).collect();
        let a = loss_total_stage1(&mut g, parts[0], parts[1], parts[2], parts[3]).unwrap();
        let b = loss_total_weighted(&mut g, &LossWeights::default(), parts[0], parts[1], parts[2], parts[3]).unwrap();
        assert_eq!(g.scalar(a), g.scalar(b));
        let w = LossWeights { adversarial: 0.0, perceptual: 2.0, disentangle: 1.0 };
        let c = loss_total_weighted(&mut g, &w, parts[0], parts[1], parts[2], parts[3]).unwrap();
        assert!((g.scalar(c) - (0.3 + 0.2 + 0.4)).abs() < 1e-12);
        assert!(LossWeights { adversarial: -1.0, ..w }.validate().is_err());
    }
}
