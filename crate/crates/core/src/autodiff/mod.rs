//! Reverse-mode automatic differentiation over small dense `f64` tensors.
//!
//! Every backward rule is written in terms of graph operations, so a
//! gradient computed with `create_graph = true` is an ordinary node that can
//! be differentiated again. That is what makes meta-gradients through an
//! inner gradient-descent loop possible.
//!
//! Broadcasting is limited to bias addition ([`Var::add_bias`]) and
//! scalar-times-tensor ([`Var::scale_by_tensor`], [`Var::add_scalar`]);
//! any other shape disagreement is an error.

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::{primitive_sweep, PrimitiveCheck};
pub use graph::{concat, sigmoid, Graph, NodeId, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("gradient requested of a non-scalar output with shape {shape:?}")]
    NonScalarOutput { shape: Vec<usize> },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("{op} received a node from a different graph")]
    ForeignGraph { op: &'static str },
    #[error("{0}")]
    InvalidArgument(String),
}

pub type Result<T, E = AutodiffError> = std::result::Result<T, E>;

/// Central-difference estimate of the gradient of `f` at `point`.
pub fn central_difference<F>(f: &F, point: &[Tensor], epsilon: f64) -> Result<Vec<Tensor>>
where
    F: for<'g> Fn(&'g Graph, &[Var<'g>]) -> Result<Var<'g>>,
{
    if !(epsilon > 0.0) {
        return Err(AutodiffError::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }
    let eval = |inputs: &[Tensor]| -> Result<f64> {
        let graph = Graph::new();
        // params rather than constants so `f` may itself take gradients
        let vars: Vec<_> = inputs.iter().map(|t| graph.param(t.clone())).collect();
        let out = f(&graph, &vars)?;
        let value = out.value().item().ok_or_else(|| AutodiffError::NonScalarOutput { shape: out.shape() })?;
        if value.is_finite() {
            Ok(value)
        } else {
            Err(AutodiffError::NonFinite { op: "finite_difference_check" })
        }
    };

    let mut shifted = point.to_vec();
    let mut result = Vec::with_capacity(point.len());
    for (i, tensor) in point.iter().enumerate() {
        let mut grad = Tensor::zeros(tensor.shape());
        for e in 0..tensor.numel() {
            let x = tensor.data()[e];
            shifted[i].data_mut()[e] = x + epsilon;
            let up = eval(&shifted)?;
            shifted[i].data_mut()[e] = x - epsilon;
            let down = eval(&shifted)?;
            shifted[i].data_mut()[e] = x;
            grad.data_mut()[e] = (up - down) / (2.0 * epsilon);
        }
        result.push(grad);
    }
    Ok(result)
}

/// Compares [`Graph::grad`] against central differences and returns the
/// largest elementwise relative error, using `max(|analytic|, |numeric|, 1e-8)`
/// as the denominator.
pub fn finite_difference_check<F>(f: F, point: &[Tensor], epsilon: f64) -> Result<f64>
where
    F: for<'g> Fn(&'g Graph, &[Var<'g>]) -> Result<Var<'g>>,
{
    let numeric = central_difference(&f, point, epsilon)?;
    let graph = Graph::new();
    let vars: Vec<_> = point.iter().map(|t| graph.param(t.clone())).collect();
    let out = f(&graph, &vars)?;
    let analytic = graph.grad(out, &vars, false)?;
    let mut worst = 0.0f64;
    for (a, n) in analytic.iter().zip(&numeric) {
        for (&av, &nv) in a.value().data().iter().zip(n.data()) {
            let denom = av.abs().max(nv.abs()).max(1e-8);
            worst = worst.max((av - nv).abs() / denom);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests;
