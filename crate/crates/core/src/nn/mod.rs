//! Differentiable building blocks shared by every learned component.

pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod params;

pub use gradcheck::{finite_diff_check, numeric_gradient, relative_error, GradCheckOptions, GradCheckReport};
pub use graph::{Gradients, Graph, Mat, Var};
pub use layers::{
    positional_encoding, Activation, AttentionBlock, AttentionOutput, LayerNorm, Linear, Mlp, MlpSpec,
    MultiHeadAttention, TemporalConv,
};
pub use params::{Adam, Parameter, ParameterStore};
