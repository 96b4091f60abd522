use serde::{Deserialize, Serialize};

use super::{LayerVars, LayeredParams, ModelError};
use crate::autodiff::{Graph, Var};
use crate::tasks::{stream_rng, Batch, MetricKind, Stream, Target};

/// Regression sizes: 1 → 40 → 40 → 1.
pub const REGRESSION_SIZES: [usize; 4] = [1, 40, 40, 1];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Head {
    /// identity output, mean squared error
    Regression,
    /// logits, softmax cross-entropy
    Classification,
}

impl Head {
    pub fn metric(self) -> MetricKind {
        match self {
            Head::Regression => MetricKind::Mse,
            Head::Classification => MetricKind::Accuracy,
        }
    }
}

/// The task network f_θ: a ReLU MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskNetwork {
    pub params: LayeredParams,
    pub head: Head,
}

/// Deterministic initialization from `seed` (see [`LayeredParams::init`]).
pub fn init_task_network(seed: u64, sizes: &[usize], head: Head) -> Result<TaskNetwork, ModelError> {
    let mut rng = stream_rng(seed, Stream::Init, &[0]);
    Ok(TaskNetwork { params: LayeredParams::init(sizes, &mut rng)?, head })
}

/// ReLU MLP forward pass with an identity last layer.
pub fn mlp_forward<'g>(theta: &[LayerVars<'g>], x: Var<'g>) -> Result<Var<'g>, ModelError> {
    let mut h = x;
    for (j, layer) in theta.iter().enumerate() {
        h = h.linear(layer.weight, layer.bias)?;
        if j + 1 < theta.len() {
            h = h.relu()?;
        }
    }
    Ok(h)
}

impl TaskNetwork {
    pub fn layer_count(&self) -> usize {
        self.params.layer_count()
    }

    /// Forward pass with externally supplied (possibly adapted) parameters.
    pub fn forward<'g>(&self, theta: &[LayerVars<'g>], x: Var<'g>) -> Result<Var<'g>, ModelError> {
        if theta.len() != self.layer_count() {
            return Err(ModelError::LayerCount { expected: self.layer_count(), found: theta.len() });
        }
        mlp_forward(theta, x)
    }

    pub fn loss<'g>(&self, theta: &[LayerVars<'g>], batch: &Batch) -> Result<Var<'g>, ModelError> {
        let graph = theta[0].weight.graph();
        let out = self.forward(theta, graph.constant(batch.x.clone()))?;
        loss_of(graph, out, batch)
    }

    /// Query metric: MSE for regression, accuracy for classification.
    pub fn metric(&self, theta: &[LayerVars<'_>], batch: &Batch) -> Result<f64, ModelError> {
        let graph = theta[0].weight.graph();
        let out = graph.no_grad(|| self.forward(theta, graph.constant(batch.x.clone())))?;
        let value = out.value();
        match &batch.target {
            Target::Values(y) => {
                let n = y.numel() as f64;
                Ok(value.data().iter().zip(y.data()).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / n)
            }
            Target::Classes(labels) => {
                let c = value.shape()[1];
                let hits = value
                    .data()
                    .chunks(c)
                    .zip(labels)
                    .filter(|(row, &label)| argmax(row) == label)
                    .count();
                Ok(hits as f64 / labels.len() as f64)
            }
        }
    }
}

fn loss_of<'g>(graph: &'g Graph, out: Var<'g>, batch: &Batch) -> Result<Var<'g>, ModelError> {
    Ok(match &batch.target {
        Target::Values(y) => out.mse(graph.constant(y.clone()))?,
        Target::Classes(labels) => out.softmax_cross_entropy(labels)?,
    })
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
