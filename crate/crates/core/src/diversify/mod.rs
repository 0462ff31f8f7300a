//! Stage two: prototype retrieval, Langevin-sampled perturbations and the
//! conditional generation model that turns them into diverse hands.

mod generation;
mod header;
mod langevin;
mod smooth;

pub use generation::{
    generate_diverse, retrieve_prototypes, stack_batches, stage_two_grad_step, GaussianLikelihood, GenerationModel,
    ResidualMode, Stage2Batch, Stage2Step, GENERATOR_PREFIX,
};
pub use header::{sampling_energy, SamplingHeader, HEADER_PREFIX};
pub use langevin::{
    chain_rngs, initial_states, langevin_posterior, langevin_posterior_from, langevin_prior, langevin_prior_from,
    LangevinConfig, Likelihood,
};
pub use smooth::{second_difference_norm, smooth_frames, temporal_smooth, DEFAULT_SMOOTH_WINDOW};
