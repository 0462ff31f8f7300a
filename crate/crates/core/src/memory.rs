//! Cosine-addressed memory banks.
//!
//! Reading is soft (softmax over per-slot cosine similarity, then an
//! affinity-weighted sum of slots) so gradients reach both the query and the
//! slots. Writing is a non-differentiable exponential moving average applied
//! to the single best-matching slot.

use ndarray::{Array1, Array2, ArrayView1};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nn::graph::{Graph, NORM_FLOOR};
use crate::nn::{Mat, Mlp, MlpSpec, ParameterStore, Var};

pub const DEFAULT_SLOTS: usize = 512;
pub const DEFAULT_GAMMA: f64 = 0.8;

/// Cosine similarity; zero when either vector has norm below `1e-12`.
pub fn cosine(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na < NORM_FLOOR || nb < NORM_FLOOR {
        return 0.0;
    }
    a.dot(&b) / (na * nb)
}

fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct MemoryBank {
    name: String,
    slots: Array2<f64>,
    gamma: f64,
    training: bool,
}

impl MemoryBank {
    pub fn new(name: impl Into<String>, slots: Array2<f64>, gamma: f64) -> Result<Self> {
        let name = name.into();
        if slots.nrows() == 0 || slots.ncols() == 0 {
            return Err(Error::Config(format!("memory bank `{name}` needs at least one non-empty slot")));
        }
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::Config(format!("EMA coefficient must lie in [0, 1], got {gamma}")));
        }
        if slots.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { context: name });
        }
        Ok(Self {
            name,
            slots,
            gamma,
            training: true,
        })
    }

    /// Unit-variance Gaussian slots, each scaled to unit norm.
    pub fn random<R: Rng + ?Sized>(
        name: impl Into<String>,
        slots: usize,
        dim: usize,
        gamma: f64,
        rng: &mut R,
    ) -> Result<Self> {
        Self::new(name, random_slots(slots, dim, rng), gamma)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn slots(&self) -> &Array2<f64> {
        &self.slots
    }

    pub fn into_slots(self) -> Array2<f64> {
        self.slots
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn len(&self) -> usize {
        self.slots.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.slots.ncols()
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn set_training(&mut self, training: bool) {
        self.training = training;
    }

    fn check_query(&self, query: ArrayView1<f64>) -> Result<()> {
        if query.len() != self.dim() {
            return Err(Error::shape(format!("query for bank `{}`", self.name), self.dim(), query.len()));
        }
        if query.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("query for bank `{}`", self.name),
            });
        }
        Ok(())
    }

    pub fn similarities(&self, query: ArrayView1<f64>) -> Result<Vec<f64>> {
        self.check_query(query)?;
        Ok(self.slots.rows().into_iter().map(|m| cosine(query, m)).collect())
    }

    /// Returns `(aggregate, affinity)`.
    pub fn read_soft(&self, query: ArrayView1<f64>) -> Result<(Array1<f64>, Array1<f64>)> {
        let affinity = Array1::from(softmax(&self.similarities(query)?));
        let aggregate = affinity.dot(&self.slots);
        Ok((aggregate, affinity))
    }

    /// Returns the most similar slot and its index; ties go to the lowest index.
    pub fn read_hard(&self, query: ArrayView1<f64>) -> Result<(Array1<f64>, usize)> {
        let idx = argmax(&self.similarities(query)?);
        Ok((self.slots.row(idx).to_owned(), idx))
    }

    /// `m_r ← γ m_r + (1 − γ) q` for the slot `read_hard(q)` selects.
    pub fn update_slot_ema(&mut self, query: ArrayView1<f64>) -> Result<usize> {
        self.update_slot_toward(query, query)
    }

    /// Selects the slot with `query` and moves it toward `target`.
    pub fn update_slot_toward(&mut self, query: ArrayView1<f64>, target: ArrayView1<f64>) -> Result<usize> {
        if !self.training {
            return Err(Error::FrozenBank(self.name.clone()));
        }
        self.check_query(target)?;
        let (_, idx) = self.read_hard(query)?;
        ema_update(&mut self.slots, idx, target, self.gamma);
        Ok(idx)
    }
}

pub(crate) fn random_slots<R: Rng + ?Sized>(slots: usize, dim: usize, rng: &mut R) -> Array2<f64> {
    let mut m = Array2::from_shape_fn((slots, dim), |_| rng.sample::<f64, _>(StandardNormal));
    for mut row in m.rows_mut() {
        let n = row.dot(&row).sqrt();
        if n > NORM_FLOOR {
            row.mapv_inplace(|x| x / n);
        }
    }
    m
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn ema_update(slots: &mut Array2<f64>, idx: usize, target: ArrayView1<f64>, gamma: f64) {
    let mut row = slots.row_mut(idx);
    ndarray::Zip::from(&mut row)
        .and(&target)
        .for_each(|m, &q| *m = gamma * *m + (1.0 - gamma) * q);
}

/// Differentiable soft read of `queries` (N×D) against `slots` (S×D).
/// Returns `(aggregate N×D, affinity N×S)`.
pub fn read_soft_graph(g: &mut Graph, queries: Var, slots: Var) -> Result<(Var, Var)> {
    if g.value(queries).ncols() != g.value(slots).ncols() {
        return Err(Error::shape("memory read", g.value(slots).ncols(), g.value(queries).ncols()));
    }
    let qn = g.row_normalize(queries);
    let mn = g.row_normalize(slots);
    let mt = g.transpose(mn);
    let sims = g.matmul(qn, mt)?;
    let affinity = g.softmax_rows(sims);
    let aggregate = g.matmul(affinity, slots)?;
    Ok((aggregate, affinity))
}

/// Row-wise softmax of the outer product `f_deltaᵀ ⊗ f_t` (both 1×C): a C×C
/// row-stochastic matrix.
pub fn spatial_dependency(g: &mut Graph, f_delta: Var, f_t: Var) -> Result<Var> {
    let (a, b) = (g.value(f_delta).dim(), g.value(f_t).dim());
    if a.0 != 1 || b.0 != 1 || a.1 != b.1 {
        return Err(Error::shape("spatial dependency", format!("two 1×C rows, got {a:?}"), format!("{b:?}")));
    }
    let col = g.transpose(f_delta);
    let outer = g.matmul(col, f_t)?;
    Ok(g.softmax_rows(outer))
}

/// `f_{t+1} = f_t + f_t · S`.
pub fn srm_next_feature(g: &mut Graph, f_t: Var, dependency: Var) -> Result<Var> {
    let mixed = g.matmul(f_t, dependency)?;
    g.add(f_t, mixed)
}

/// `F ← F + F ⊙ softmax(F_SHM)`: frame `t` is scaled by `1 + a_t` where `a`
/// is the softmax of the T×1 motion embedding over time.
pub fn tmm_enhance(g: &mut Graph, features: Var, motion: Var) -> Result<Var> {
    let frames = g.value(features).nrows();
    if g.value(motion).dim() != (frames, 1) {
        return Err(Error::shape(
            "temporal enhancement",
            format!("({frames}, 1)"),
            format!("{:?}", g.value(motion).dim()),
        ));
    }
    let row = g.transpose(motion);
    let weights = g.softmax_rows(row);
    let col = g.transpose(weights);
    let scaled = g.mul_col(features, col)?;
    g.add(features, scaled)
}

/// Sequence-level motion embedding: channel mean per frame followed by a
/// temporal MLP over the length-T vector. Produces T×1.
#[derive(Clone, Debug)]
pub struct MotionEncoder {
    mlp: Mlp,
    frames: usize,
}

impl MotionEncoder {
    pub fn new(prefix: &str, frames: usize) -> Result<Self> {
        Ok(Self {
            mlp: Mlp::new(prefix, MlpSpec::new(vec![frames, frames, frames])?)?,
            frames,
        })
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParameterStore, rng: &mut R) -> Result<()> {
        self.mlp.init(store, rng)
    }

    pub fn forward(&self, g: &mut Graph, store: &ParameterStore, features: Var) -> Result<Var> {
        let frames = g.value(features).nrows();
        if frames != self.frames {
            return Err(Error::shape("motion encoder frames", self.frames, frames));
        }
        let pooled = g.mean_cols(features);
        let row = g.transpose(pooled);
        let encoded = self.mlp.forward(g, store, row)?;
        Ok(g.transpose(encoded))
    }
}

/// Builds a prototype bank from sequence-level features (one row per
/// sequence) by sampling `slots` distinct rows.
pub fn build_prototype_memory(
    name: impl Into<String>,
    features: &Mat,
    slots: usize,
    gamma: f64,
    seed: u64,
) -> Result<MemoryBank> {
    if features.nrows() < slots {
        return Err(Error::InsufficientData {
            required: slots,
            available: features.nrows(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = index::sample(&mut rng, features.nrows(), slots).into_vec();
    picks.sort_unstable();
    let chosen = features.select(ndarray::Axis(0), &picks);
    MemoryBank::new(name, chosen, gamma)
}
