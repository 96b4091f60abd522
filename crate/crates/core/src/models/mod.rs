//! Task network f_θ, the attenuator g_φ and checkpoint I/O.

mod attenuator;
mod checkpoint;
mod network;
mod params;

pub use attenuator::{layerwise_grad_mean, Attenuator, Modulation, Scope, Transform, INITIAL_GAMMA_LOGIT, SATURATING_BIAS};
pub use checkpoint::Checkpoint;
pub use network::{init_task_network, mlp_forward, Head, TaskNetwork, REGRESSION_SIZES};
pub use params::{flat_vars, pair_vars, LayerVars, LayeredParams, Linear};

use thiserror::Error;

use crate::autodiff::AutodiffError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("architecture needs at least one layer")]
    EmptyArchitecture,
    #[error("layer {0} has zero width")]
    ZeroSizeLayer(usize),
    #[error("layer {layer}: weight shape {weight:?} does not fit bias shape {bias:?}")]
    LayerShape { layer: usize, weight: Vec<usize>, bias: Vec<usize> },
    #[error("layer {layer}: expected input width {expected}, found {found}")]
    Incompatible { layer: usize, expected: usize, found: usize },
    #[error("expected {expected} layers, found {found}")]
    LayerCount { expected: usize, found: usize },
    #[error("flat parameter vector too short: expected {expected}, found {found}")]
    FlatLength { expected: usize, found: usize },
    #[error("gradient summary: expected shape [{expected}], found {found:?}")]
    SummaryLength { expected: usize, found: Vec<usize> },
    #[error("attenuator: {0}")]
    Attenuator(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}
