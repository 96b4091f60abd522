//! Task distributions: sinusoid regression (standard and non-overlapped)
//! and a synthetic N-way k-shot Gaussian-cluster classification family.

mod classification;
mod rng;
mod sinusoid;

pub use classification::{sample_classification, ClassificationSampler, ClassificationSpec, SyntheticClassTask};
pub use rng::{derive_seed, stream_rng, Stream};
pub use sinusoid::{
    eval_protocol, sample_sinusoid, write_task_dump, DistributionSpec, EvalProtocol, Interval, SinusoidSampler,
    SinusoidTask, INPUT_RANGE,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tensor;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TaskError {
    #[error("empty interval for {name}: [{lo}, {hi}]")]
    EmptyInterval { name: &'static str, lo: f64, hi: f64 },
    #[error("invalid task parameter: {0}")]
    Invalid(String),
}

/// What the network is asked to predict for each input row.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    /// Regression targets, shape `[n, 1]`.
    Values(Tensor),
    /// Class labels, one per row.
    Classes(Vec<usize>),
}

/// Inputs `[n, d]` with their targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub x: Tensor,
    pub target: Target,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.x.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The `i`-th example as a batch of one.
    pub fn example(&self, i: usize) -> Batch {
        let d = self.x.shape()[1];
        let x = Tensor::matrix(1, d, self.x.data()[i * d..(i + 1) * d].to_vec()).expect("row shape");
        let target = match &self.target {
            Target::Values(t) => Target::Values(Tensor::matrix(1, 1, vec![t.data()[i]]).expect("scalar")),
            Target::Classes(c) => Target::Classes(vec![c[i]]),
        };
        Batch { x, target }
    }
}

/// A sampled task: support set D and query set D′.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub support: Batch,
    pub query: Batch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricKind {
    Mse,
    Accuracy,
}

impl MetricKind {
    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Mse => "mse",
            MetricKind::Accuracy => "accuracy",
        }
    }
}

/// Source of training tasks. Samples are pure functions of the indices.
pub trait TaskSampler {
    fn sample(&self, iteration: u64, slot: usize) -> Episode;
}
