//! Analysis instruments: degree of conflict between meta-update
//! directions, loss-landscape probes along inner-loop steps, manual γ
//! sweeps and generated-γ logs. Everything writes plain CSV.

mod conflict;
mod gamma_log;
mod landscape;
mod sweep;

pub use conflict::{
    degree_of_conflict, meta_update_directions, per_layer_conflict, per_task_conflict, within_task_conflict,
    ConflictRecord, ConflictResult, ConflictScope,
};
pub use gamma_log::{gamma_rows, GammaLog, GammaLogRow};
pub use landscape::{
    average_by_step, inner_loop_landscape, landscape_probe, LandscapeRecord, DEFAULT_PROBE_MULTIPLIERS,
};
pub use sweep::{gamma_sweep, sweep_csv, SweepRow};

use thiserror::Error;

use crate::meta::MetaError;

#[derive(Debug, Clone, Error)]
pub enum DiagnosticsError {
    #[error("need at least 2 vectors, got {found}")]
    TooFewVectors { found: usize },
    #[error("vectors have different lengths ({expected} vs {found})")]
    LengthMismatch { expected: usize, found: usize },
    #[error("every vector has zero norm ({skipped} skipped)")]
    NoUsableVectors { skipped: usize },
    #[error("the summed direction has zero norm")]
    DegenerateSum,
    #[error("layer {layer} out of range for a {layers}-layer network")]
    LayerIndex { layer: usize, layers: usize },
    #[error(transparent)]
    Meta(#[from] MetaError),
}

impl From<crate::models::ModelError> for DiagnosticsError {
    fn from(e: crate::models::ModelError) -> Self {
        DiagnosticsError::Meta(e.into())
    }
}

impl From<crate::autodiff::AutodiffError> for DiagnosticsError {
    fn from(e: crate::autodiff::AutodiffError) -> Self {
        DiagnosticsError::Meta(e.into())
    }
}
