use ndarray::{concatenate, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::header::SamplingHeader;
use super::langevin::Likelihood;
use crate::autoencoder::FeatureExtractor;
use crate::data::{HandPoseSequence, HAND_DIM};
use crate::error::{Error, Result};
use crate::memory::MemoryBank;
use crate::nn::{Graph, Gradients, Mat, Mlp, MlpSpec, ParameterStore, Var};

pub const GENERATOR_PREFIX: &str = "stage2.r";

/// How the θ-gradient weights the residual `h̃ − R(h, w⁺)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResidualMode {
    /// `sign(r)`, the gradient of the mean absolute error.
    #[default]
    L1,
    /// `r / σ_ε²`, the gradient of a Gaussian log-likelihood.
    Gaussian,
}

/// `R_θ(h, p, w) = wrap(h + MLP([h, p, w]))`, applied per frame.
#[derive(Clone, Debug)]
pub struct GenerationModel {
    mlp: Mlp,
    proto_dim: usize,
    w_dim: usize,
}

impl GenerationModel {
    pub fn new(proto_dim: usize, w_dim: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            mlp: Mlp::new(
                GENERATOR_PREFIX,
                MlpSpec::new(vec![HAND_DIM + proto_dim + w_dim, hidden, hidden, HAND_DIM])?,
            )?,
            proto_dim,
            w_dim,
        })
    }

    pub fn proto_dim(&self) -> usize {
        self.proto_dim
    }

    pub fn w_dim(&self) -> usize {
        self.w_dim
    }

    pub fn init<R: rand::Rng + ?Sized>(&self, store: &mut ParameterStore, rng: &mut R) -> Result<()> {
        self.mlp.init(store, rng)
    }

    pub fn forward(&self, g: &mut Graph, store: &ParameterStore, h: Var, proto: Var, w: Var) -> Result<Var> {
        let n = g.value(h).nrows();
        for (name, v, width) in [("hands", h, HAND_DIM), ("prototype", proto, self.proto_dim), ("perturbation", w, self.w_dim)] {
            if g.value(v).dim() != (n, width) {
                return Err(Error::shape(
                    format!("generation {name}"),
                    format!("({n}, {width})"),
                    format!("{:?}", g.value(v).dim()),
                ));
            }
        }
        let x = g.concat_cols(&[h, proto, w])?;
        let delta = self.mlp.forward(g, store, x)?;
        let out = g.add(h, delta)?;
        g.wrap_axis_angle(out)
    }

    pub fn eval(&self, store: &ParameterStore, h: &Mat, proto: &Mat, w: &Mat) -> Result<Mat> {
        let mut g = Graph::inference();
        let (hv, pv, wv) = (g.constant(h.clone()), g.constant(proto.clone()), g.constant(w.clone()));
        let out = self.forward(&mut g, store, hv, pv, wv)?;
        Ok(g.value(out).clone())
    }
}

/// Per-frame prototype features: each frame's extractor feature soft-reads
/// the prototype bank.
pub fn retrieve_prototypes(bank: &MemoryBank, extractor: &FeatureExtractor, frames: &Mat) -> Result<Mat> {
    if bank.is_empty() {
        return Err(Error::Config("prototype memory is empty".into()));
    }
    let queries = extractor.encode_frames(frames)?;
    let mut out = Array2::zeros((frames.nrows(), bank.dim()));
    for (q, mut row) in queries.rows().into_iter().zip(out.rows_mut()) {
        row.assign(&bank.read_soft(q)?.0);
    }
    Ok(out)
}

/// Frame-level inputs of the generation model.
#[derive(Clone, Debug)]
pub struct Stage2Batch {
    /// Conditioning hands `h`, N×90.
    pub hands: Mat,
    /// Retrieved prototype features, N×C.
    pub prototypes: Mat,
    /// Reconstruction target `h̃`, N×90.
    pub target: Mat,
}

impl Stage2Batch {
    pub fn len(&self) -> usize {
        self.hands.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.hands.nrows() == 0
    }
}

/// `(1/2σ_ε²)‖h̃ − R(h, w)‖²` summed over frames, as a [`Likelihood`].
pub struct GaussianLikelihood<'a> {
    pub model: &'a GenerationModel,
    pub store: &'a ParameterStore,
    pub batch: &'a Stage2Batch,
    pub sigma_eps: f64,
}

impl Likelihood for GaussianLikelihood<'_> {
    fn energy_grad(&self, w: &Mat) -> Result<Mat> {
        let mut g = Graph::inference();
        let h = g.constant(self.batch.hands.clone());
        let p = g.constant(self.batch.prototypes.clone());
        let wv = g.variable(w.clone());
        let out = self.model.forward(&mut g, self.store, h, p, wv)?;
        let seed = (g.value(out) - &self.batch.target) / (self.sigma_eps * self.sigma_eps);
        let grads = g.backward_with_seed(out, seed)?;
        Ok(grads.wrt(wv).cloned().unwrap_or_else(|| Array2::zeros(w.dim())))
    }
}

/// Outcome of one stage-two gradient computation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stage2Step {
    /// Mean absolute residual at `w⁺`.
    pub loss: f64,
}

/// Accumulates into `store` the descent gradients of one alternating step:
///
/// * θ: the residual-weighted vector-Jacobian product
///   `−(1/n) Σ_i ρ(h̃_i − R(h_i, w⁺_i)) ∇_θ R(h_i, w⁺_i)`, where ρ is the
///   configured residual weighting, normalized per element in L1 mode.
/// * α: `mean ∇_α S_α(w⁺) − mean ∇_α S_α(w⁻)`.
#[allow(clippy::too_many_arguments)]
pub fn stage_two_grad_step(
    model: &GenerationModel,
    header: &SamplingHeader,
    store: &mut ParameterStore,
    batch: &Stage2Batch,
    w_minus: &Mat,
    w_plus: &Mat,
    mode: ResidualMode,
    sigma_eps: f64,
) -> Result<Stage2Step> {
    let n = batch.len();
    if n == 0 {
        return Err(Error::InsufficientData { required: 1, available: 0 });
    }
    for (name, w) in [("posterior", w_plus), ("prior", w_minus)] {
        if w.ncols() != model.w_dim || w.nrows() == 0 {
            return Err(Error::shape(
                format!("{name} chains"),
                format!("(N, {})", model.w_dim),
                format!("{:?}", w.dim()),
            ));
        }
    }
    if w_plus.nrows() != n {
        return Err(Error::shape("posterior chains", n, w_plus.nrows()));
    }

    let mut g = Graph::new();
    let h = g.constant(batch.hands.clone());
    let p = g.constant(batch.prototypes.clone());
    let wv = g.constant(w_plus.clone());
    let out = model.forward(&mut g, store, h, p, wv)?;
    let residual = &batch.target - g.value(out);
    let elements = residual.len() as f64;
    let loss = residual.iter().map(|r| r.abs()).sum::<f64>() / elements;
    let ascent = match mode {
        ResidualMode::L1 => residual.mapv(|r| sign(r) / elements),
        ResidualMode::Gaussian => residual / (sigma_eps * sigma_eps * n as f64),
    };
    let grads = g.backward_with_seed(out, -ascent)?;
    g.accumulate_into(&grads, store)?;

    let (gp, plus_graph) = header_mean_score_grad(header, store, w_plus)?;
    let (gm, minus_graph) = header_mean_score_grad(header, store, w_minus)?;
    let mut diff = ParameterStore::new();
    for name in store.names().filter(|n| n.starts_with(super::header::HEADER_PREFIX)) {
        diff.insert(name, Array2::zeros(store.value(name)?.dim()))?;
    }
    plus_graph.accumulate_into(&gp, &mut diff)?;
    let mut minus = diff.clone();
    minus.zero_grad();
    minus_graph.accumulate_into(&gm, &mut minus)?;
    for (name, p) in diff.iter() {
        let d = &p.grad - minus.grad(name)?;
        store.accumulate_grad(name, &d)?;
    }
    Ok(Stage2Step { loss })
}

fn sign(r: f64) -> f64 {
    if r > 0.0 {
        1.0
    } else if r < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn header_mean_score_grad(header: &SamplingHeader, store: &ParameterStore, w: &Mat) -> Result<(Gradients, Graph)> {
    let mut g = Graph::new();
    let wv = g.constant(w.clone());
    let s = header.score(&mut g, store, wv)?;
    let m = g.mean(s);
    Ok((g.backward(m)?, g))
}

/// Diversifies a stage-one prediction. `w` is either one row, shared by
/// every frame, or one row per frame.
pub fn generate_diverse(
    model: &GenerationModel,
    store: &ParameterStore,
    h_init: &HandPoseSequence,
    bank: &MemoryBank,
    extractor: &FeatureExtractor,
    w: &Mat,
) -> Result<HandPoseSequence> {
    let frames = h_init.frames();
    let t = frames.nrows();
    let w = match w.nrows() {
        1 => w.broadcast((t, w.ncols())).expect("single row broadcasts").to_owned(),
        r if r == t => w.clone(),
        r => return Err(Error::shape("perturbation rows", format!("1 or {t}"), r)),
    };
    let proto = retrieve_prototypes(bank, extractor, frames)?;
    let out = model.eval(store, frames, &proto, &w)?;
    HandPoseSequence::new(out, h_init.fps())
}

/// Stacks frame batches from several sequences.
pub fn stack_batches(parts: &[Stage2Batch]) -> Result<Stage2Batch> {
    let cat = |f: fn(&Stage2Batch) -> &Mat| -> Result<Mat> {
        let views: Vec<_> = parts.iter().map(|b| f(b).view()).collect();
        concatenate(Axis(0), &views).map_err(|e| Error::shape("stage-two batch", "matching widths", e.to_string()))
    };
    Ok(Stage2Batch {
        hands: cat(|b| &b.hands)?,
        prototypes: cat(|b| &b.prototypes)?,
        target: cat(|b| &b.target)?,
    })
}
