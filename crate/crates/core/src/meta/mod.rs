//! Inner/outer meta-learning loops: MAML and attenuated initializations
//! (task-conditioned or learned), trained jointly with Adam.

mod adam;
mod adapt;
mod config;
mod eval;
mod train;

pub use adam::Adam;
pub use adapt::{
    attenuate, gd_adapt, inner_adapt, meta_loss, modulation, task_gradient, task_query_loss, Adapted, AdaptedParams,
    TaskGradient, TaskOutcome,
};
pub use config::{MetaConfig, Method, Order};
pub use eval::{adapt_and_score, adaptation_start, evaluate, EpisodeResult, EvalTable};
pub use train::{meta_train, meta_train_with, IterationEvent, TrainLog, TrainRecord};

use std::ops::Range;

use thiserror::Error;

use crate::autodiff::{AutodiffError, Graph, Tensor, Var};
use crate::models::{
    flat_vars, init_task_network, Attenuator, Checkpoint, Head, LayerVars, LayeredParams, ModelError, Scope,
    TaskNetwork,
};
use crate::tasks::{stream_rng, Stream, TaskError};

#[derive(Debug, Clone, Error)]
pub enum MetaError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite loss at inner step {step}")]
    NonFiniteLoss { step: usize },
    #[error("task {task}: {source}")]
    Task { task: usize, source: Box<MetaError> },
    #[error("training diverged at iteration {iteration}")]
    Diverged { iteration: u64, last_state: Box<MetaModel> },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tasks(#[from] TaskError),
}

impl From<AutodiffError> for MetaError {
    fn from(e: AutodiffError) -> Self {
        MetaError::Model(ModelError::Autodiff(e))
    }
}

impl MetaError {
    /// True for errors caused by NaN/inf values rather than misuse.
    pub fn is_non_finite(&self) -> bool {
        match self {
            MetaError::NonFiniteLoss { .. } | MetaError::Diverged { .. } => true,
            MetaError::Task { source, .. } => source.is_non_finite(),
            MetaError::Model(ModelError::Autodiff(AutodiffError::NonFinite { .. })) => true,
            _ => false,
        }
    }
}

/// Everything the outer loop updates: θ, plus φ or a learned γ depending
/// on the method.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaModel {
    pub method: Method,
    pub net: TaskNetwork,
    pub attenuator: Option<Attenuator>,
    pub learned_gamma: Option<Tensor>,
}

/// Graph handles for one [`MetaModel`].
#[derive(Debug, Clone)]
pub struct ModelVars<'g> {
    pub theta: Vec<LayerVars<'g>>,
    pub phi: Option<Vec<LayerVars<'g>>>,
    pub gamma: Option<Var<'g>>,
}

impl<'g> ModelVars<'g> {
    /// In [`MetaModel::flatten`] order.
    pub fn all(&self) -> Vec<Var<'g>> {
        let mut out = flat_vars(&self.theta);
        if let Some(phi) = &self.phi {
            out.extend(flat_vars(phi));
        }
        out.extend(self.gamma);
        out
    }
}

impl MetaModel {
    /// θ from the `Init` stream, φ from the `AttenuatorInit` stream, learned γ = 1.
    pub fn new(config: &MetaConfig, sizes: &[usize], head: Head) -> Result<Self, MetaError> {
        config.validate()?;
        let net = init_task_network(config.seed, sizes, head)?;
        let mut model = Self { method: config.method, net, attenuator: None, learned_gamma: None };
        match config.method {
            Method::Maml => {}
            Method::L2f(transform) => {
                let mut rng = stream_rng(config.seed, Stream::AttenuatorInit, &[0]);
                let mut att = Attenuator::new(&model.net.params, Scope::Layer, transform, &mut rng)?;
                if config.gamma_identity {
                    att.force_identity();
                }
                model.attenuator = Some(att);
            }
            Method::LearnedScope(scope) => {
                model.learned_gamma = Some(Tensor::ones(&[scope.group_count(&model.net.params)]));
            }
        }
        Ok(model)
    }

    pub fn theta(&self) -> &LayeredParams {
        &self.net.params
    }

    pub fn param_count(&self) -> usize {
        self.net.params.param_count()
            + self.attenuator.as_ref().map_or(0, |a| a.params.param_count())
            + self.learned_gamma.as_ref().map_or(0, Tensor::numel)
    }

    /// Position of φ inside [`Self::flatten`].
    pub fn phi_range(&self) -> Option<Range<usize>> {
        let start = self.net.params.param_count();
        self.attenuator.as_ref().map(|a| start..start + a.params.param_count())
    }

    /// θ, then φ, then learned γ.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = self.net.params.flatten();
        if let Some(a) = &self.attenuator {
            out.extend(a.params.flatten());
        }
        if let Some(g) = &self.learned_gamma {
            out.extend_from_slice(g.data());
        }
        out
    }

    pub fn assign_flat(&mut self, values: &[f64]) -> Result<(), MetaError> {
        let expected = self.param_count();
        if values.len() != expected {
            return Err(ModelError::FlatLength { expected, found: values.len() }.into());
        }
        let mut offset = self.net.params.assign_flat(values)?;
        if let Some(a) = &mut self.attenuator {
            offset += a.params.assign_flat(&values[offset..])?;
        }
        if let Some(g) = &mut self.learned_gamma {
            g.data_mut().copy_from_slice(&values[offset..]);
        }
        Ok(())
    }

    pub fn to_vars<'g>(&self, graph: &'g Graph, trainable: bool) -> ModelVars<'g> {
        let leaf = |t: &Tensor| if trainable { graph.param(t.clone()) } else { graph.constant(t.clone()) };
        ModelVars {
            theta: self.net.params.to_vars(graph, trainable),
            phi: self.attenuator.as_ref().map(|a| a.params.to_vars(graph, trainable)),
            gamma: self.learned_gamma.as_ref().map(leaf),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.flatten().iter().all(|v| v.is_finite())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::default();
        ck.set_meta("method", self.method);
        ck.set_meta(
            "head",
            match self.net.head {
                Head::Regression => "regression",
                Head::Classification => "classification",
            },
        );
        ck.put_layers("", &self.net.params);
        if let Some(a) = &self.attenuator {
            ck.put_layers("attenuator.", &a.params);
        }
        if let Some(g) = &self.learned_gamma {
            ck.tensors.insert("gamma.learned".into(), g.clone());
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, MetaError> {
        let method: Method = ck.meta("method")?.parse().map_err(ModelError::Checkpoint)?;
        let head = match ck.meta("head")? {
            "regression" => Head::Regression,
            "classification" => Head::Classification,
            other => return Err(ModelError::Checkpoint(format!("unknown head `{other}`")).into()),
        };
        let net = TaskNetwork { params: ck.get_layers("")?, head };
        let mut model = Self { method, net, attenuator: None, learned_gamma: None };
        match method {
            Method::Maml => {}
            Method::L2f(transform) => {
                let params = ck.get_layers("attenuator.")?;
                let l = model.net.params.layer_count();
                let groups = Scope::Layer.group_count(&model.net.params);
                let mut att = Attenuator { params, transform, scope: Scope::Layer, layer_count: l, groups };
                let expected = groups + if transform == crate::models::Transform::Affine { l } else { 0 };
                if att.params.sizes() != [l, l, l, expected] {
                    return Err(ModelError::Checkpoint(format!(
                        "attenuator sizes {:?} do not fit a {l}-layer network",
                        att.params.sizes()
                    ))
                    .into());
                }
                att.layer_count = l;
                model.attenuator = Some(att);
            }
            Method::LearnedScope(scope) => {
                let g = ck.tensor("gamma.learned")?.clone();
                let expected = scope.group_count(&model.net.params);
                if g.shape() != [expected] {
                    return Err(ModelError::Checkpoint(format!(
                        "learned gamma has shape {:?}, expected [{expected}]",
                        g.shape()
                    ))
                    .into());
                }
                model.learned_gamma = Some(g);
            }
        }
        Ok(model)
    }
}
