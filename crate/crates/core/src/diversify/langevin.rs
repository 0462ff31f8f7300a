use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::header::SamplingHeader;
use crate::error::{Error, Result};
use crate::nn::{Mat, ParameterStore};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LangevinConfig {
    pub steps: usize,
    pub delta_prior: f64,
    pub delta_posterior: f64,
    /// Observation noise standard deviation of the posterior likelihood.
    pub sigma_eps: f64,
    /// Multiplies the injected noise; 0 gives deterministic gradient descent.
    pub noise_scale: f64,
}

impl Default for LangevinConfig {
    fn default() -> Self {
        Self {
            steps: 6,
            delta_prior: 0.4,
            delta_posterior: 0.1,
            sigma_eps: 1.0,
            noise_scale: 1.0,
        }
    }
}

impl LangevinConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("mcmc.steps must be at least 1".into()));
        }
        for (name, v) in [
            ("delta_prior", self.delta_prior),
            ("delta_posterior", self.delta_posterior),
            ("sigma_eps", self.sigma_eps),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("mcmc.{name} must be positive, got {v}")));
            }
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::Config("mcmc.noise_scale must be non-negative".into()));
        }
        Ok(())
    }
}

/// Gradient, with respect to each row of `w`, of a negative log-likelihood
/// energy that the posterior chain adds to the prior energy.
pub trait Likelihood {
    fn energy_grad(&self, w: &Mat) -> Result<Mat>;
}

/// One independent random stream per chain, so chain `i` is reproducible
/// regardless of how many chains run alongside it.
pub fn chain_rngs(seed: u64, chains: usize) -> Vec<ChaCha8Rng> {
    (0..chains)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            rng
        })
        .collect()
}

fn fill_normal(out: &mut Mat, rngs: &mut [ChaCha8Rng], scale: f64) {
    for (mut row, rng) in out.rows_mut().into_iter().zip(rngs.iter_mut()) {
        for x in row.iter_mut() {
            *x = scale * rng.sample::<f64, _>(StandardNormal);
        }
    }
}

/// Initial states `w₀ ~ N(0, σ_w² I)`, one row per chain.
pub fn initial_states(header: &SamplingHeader, chains: usize, seed: u64) -> (Mat, Vec<ChaCha8Rng>) {
    let mut rngs = chain_rngs(seed, chains);
    let mut w = Array2::zeros((chains, header.dim()));
    fill_normal(&mut w, &mut rngs, header.sigma_w());
    (w, rngs)
}

fn run_chain<F>(
    mut w: Mat,
    rngs: &mut [ChaCha8Rng],
    steps: usize,
    delta: f64,
    noise_scale: f64,
    mut grad: F,
) -> Result<Mat>
where
    F: FnMut(&Mat) -> Result<Mat>,
{
    let noise_sd = noise_scale * (2.0 * delta).sqrt();
    let mut noise = Array2::zeros(w.dim());
    for step in 0..steps {
        let gw = grad(&w)?;
        if gw.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteGradient { step });
        }
        w.scaled_add(-delta, &gw);
        if noise_sd > 0.0 {
            fill_normal(&mut noise, rngs, noise_sd);
            w += &noise;
        }
    }
    Ok(w)
}

/// Prior chains started from `w0` with the given per-chain streams.
pub fn langevin_prior_from(
    header: &SamplingHeader,
    store: &ParameterStore,
    cfg: &LangevinConfig,
    w0: Mat,
    rngs: &mut [ChaCha8Rng],
) -> Result<Mat> {
    cfg.validate()?;
    check_chains(&w0, rngs.len())?;
    run_chain(w0, rngs, cfg.steps, cfg.delta_prior, cfg.noise_scale, |w| header.energy_grad(store, w))
}

/// `chains` prior samples `w⁻`, one per row.
pub fn langevin_prior(
    header: &SamplingHeader,
    store: &ParameterStore,
    cfg: &LangevinConfig,
    chains: usize,
    seed: u64,
) -> Result<Mat> {
    let (w0, mut rngs) = initial_states(header, chains, seed);
    langevin_prior_from(header, store, cfg, w0, &mut rngs)
}

/// Posterior chains started from `w0`: the prior energy gradient plus the
/// likelihood energy gradient, with the posterior step size.
pub fn langevin_posterior_from(
    header: &SamplingHeader,
    store: &ParameterStore,
    likelihood: &dyn Likelihood,
    cfg: &LangevinConfig,
    w0: Mat,
    rngs: &mut [ChaCha8Rng],
) -> Result<Mat> {
    cfg.validate()?;
    check_chains(&w0, rngs.len())?;
    run_chain(w0, rngs, cfg.steps, cfg.delta_posterior, cfg.noise_scale, |w| {
        let mut gw = header.energy_grad(store, w)?;
        let gl = likelihood.energy_grad(w)?;
        if gl.dim() != gw.dim() {
            return Err(Error::shape("likelihood gradient", format!("{:?}", gw.dim()), format!("{:?}", gl.dim())));
        }
        gw += &gl;
        Ok(gw)
    })
}

/// `chains` posterior samples `w⁺`, one per row.
pub fn langevin_posterior(
    header: &SamplingHeader,
    store: &ParameterStore,
    likelihood: &dyn Likelihood,
    cfg: &LangevinConfig,
    chains: usize,
    seed: u64,
) -> Result<Mat> {
    let (w0, mut rngs) = initial_states(header, chains, seed);
    langevin_posterior_from(header, store, likelihood, cfg, w0, &mut rngs)
}

fn check_chains(w0: &Mat, rngs: usize) -> Result<()> {
    if w0.nrows() != rngs {
        return Err(Error::shape("chain random streams", w0.nrows(), rngs));
    }
    if w0.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite {
            context: "initial perturbation".into(),
        });
    }
    Ok(())
}
