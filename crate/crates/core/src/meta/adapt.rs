use super::{MetaConfig, MetaError, MetaModel, Method, ModelVars, Order};
use crate::autodiff::{AutodiffError, Graph, Var};
use crate::models::{flat_vars, layerwise_grad_mean, pair_vars, LayerVars, ModelError, Modulation, Scope, TaskNetwork};
use crate::tasks::{Batch, Episode};

/// Parameters after plain gradient descent, with the loss before each step
/// and after the last (length `steps + 1`).
#[derive(Debug, Clone)]
pub struct Adapted<'g> {
    pub params: Vec<Var<'g>>,
    pub losses: Vec<f64>,
}

fn at_step(e: MetaError, step: usize) -> MetaError {
    match e {
        MetaError::Model(ModelError::Autodiff(AutodiffError::NonFinite { .. })) => MetaError::NonFiniteLoss { step },
        other => other,
    }
}

/// `steps` full-batch gradient-descent steps of size `alpha` on `loss`.
///
/// `Order::Second` keeps each step's gradient in the graph so the result
/// is differentiable through the whole trajectory; `Order::First` treats
/// the inner gradients as constants.
pub fn gd_adapt<'g, F>(start: &[Var<'g>], steps: usize, alpha: f64, order: Order, loss: F) -> Result<Adapted<'g>, MetaError>
where
    F: Fn(&[Var<'g>]) -> Result<Var<'g>, MetaError>,
{
    let Some(first) = start.first() else {
        return Err(MetaError::Config("nothing to adapt".into()));
    };
    let graph = first.graph();
    let mut params = start.to_vec();
    let mut losses = Vec::with_capacity(steps + 1);
    for step in 0..=steps {
        let l = loss(&params).map_err(|e| at_step(e, step))?;
        let value = l.item();
        if !value.is_finite() {
            return Err(MetaError::NonFiniteLoss { step });
        }
        losses.push(value);
        if step == steps {
            break;
        }
        let grads = graph.grad(l, &params, order == Order::Second).map_err(|e| at_step(e.into(), step))?;
        params = params
            .iter()
            .zip(grads)
            .map(|(p, g)| p.sub(g.scale(alpha)?))
            .collect::<Result<_, _>>()
            .map_err(|e| at_step(e.into(), step))?;
    }
    Ok(Adapted { params, losses })
}

/// θ′ after `steps` inner steps on the support set.
#[derive(Debug, Clone)]
pub struct AdaptedParams<'g> {
    pub theta: Vec<LayerVars<'g>>,
    pub losses: Vec<f64>,
}

pub fn inner_adapt<'g>(
    net: &TaskNetwork,
    theta_start: &[LayerVars<'g>],
    support: &Batch,
    steps: usize,
    alpha: f64,
    order: Order,
) -> Result<AdaptedParams<'g>, MetaError> {
    let adapted = gd_adapt(&flat_vars(theta_start), steps, alpha, order, |p| Ok(net.loss(&pair_vars(p), support)?))?;
    Ok(AdaptedParams { theta: pair_vars(&adapted.params), losses: adapted.losses })
}

fn group_count(theta: &[LayerVars<'_>], scope: Scope) -> usize {
    let shapes = theta.iter().map(|l| (l.weight.shape(), l.bias.shape()));
    match scope {
        Scope::Parameter => shapes.map(|(w, b)| w.iter().product::<usize>() + b[0]).sum(),
        Scope::Filter => shapes.map(|(w, _)| w[0]).sum(),
        Scope::Layer => theta.len(),
        Scope::Network => 1,
        Scope::None => 0,
    }
}

/// θ̄^j = γ^j ⊙ θ^j (+ δ^j), weight and bias alike.
pub fn attenuate<'g>(theta: &[LayerVars<'g>], m: &Modulation<'g>) -> Result<Vec<LayerVars<'g>>, MetaError> {
    let expected = group_count(theta, m.scope);
    let found = m.gamma.shape();
    if found != [expected] {
        return Err(ModelError::SummaryLength { expected, found }.into());
    }
    if let Some(d) = m.delta {
        if d.shape() != [theta.len()] {
            return Err(ModelError::SummaryLength { expected: theta.len(), found: d.shape() }.into());
        }
    }
    let mut offset = 0;
    let mut out = Vec::with_capacity(theta.len());
    for (j, layer) in theta.iter().enumerate() {
        let (mut weight, mut bias) = (layer.weight, layer.bias);
        match m.scope {
            Scope::None => {}
            Scope::Layer | Scope::Network => {
                let g = m.gamma.select(if m.scope == Scope::Layer { j } else { 0 })?;
                weight = g.scale_by_tensor(weight)?;
                bias = g.scale_by_tensor(bias)?;
            }
            Scope::Filter => {
                let rows = weight.shape()[0];
                let g = m.gamma.slice(offset, rows)?;
                offset += rows;
                weight = weight.scale_rows(g)?;
                bias = bias.mul(g)?;
            }
            Scope::Parameter => {
                let shape = weight.shape();
                let (nw, nb) = (shape.iter().product::<usize>(), bias.shape()[0]);
                weight = weight.mul(m.gamma.slice(offset, nw)?.reshape(&shape)?)?;
                bias = bias.mul(m.gamma.slice(offset + nw, nb)?)?;
                offset += nw + nb;
            }
        }
        if let Some(d) = m.delta {
            let dj = d.select(j)?;
            weight = weight.add_scalar(dj)?;
            bias = bias.add_scalar(dj)?;
        }
        out.push(LayerVars { weight, bias });
    }
    Ok(out)
}

/// The task's modulation: none for MAML, g_φ(support-gradient summary at θ)
/// for the attenuator methods, the shared learned γ otherwise.
pub fn modulation<'g>(
    model: &MetaModel,
    vars: &ModelVars<'g>,
    support: &Batch,
    config: &MetaConfig,
) -> Result<Option<Modulation<'g>>, MetaError> {
    match model.method {
        Method::Maml => Ok(None),
        Method::LearnedScope(scope) => {
            let gamma = vars.gamma.ok_or_else(|| MetaError::Config("learned gamma missing".into()))?;
            Ok(Some(Modulation { gamma, delta: None, scope }))
        }
        Method::L2f(_) => {
            let (att, phi) = match (&model.attenuator, &vars.phi) {
                (Some(a), Some(p)) => (a, p),
                _ => return Err(MetaError::Config("attenuator missing".into())),
            };
            let loss = model.net.loss(&vars.theta, support)?;
            let graph = loss.graph();
            let grads = graph.grad(loss, &flat_vars(&vars.theta), config.order == Order::Second)?;
            let summary = layerwise_grad_mean(&pair_vars(&grads), config.absolute_grad_mean)?;
            Ok(Some(att.generate_gamma(phi, summary)?))
        }
    }
}

/// Query loss of one task after attenuation and `steps` inner steps.
#[derive(Debug, Clone)]
pub struct TaskOutcome<'g> {
    pub query_loss: Var<'g>,
    pub support_losses: Vec<f64>,
    pub gamma: Option<Vec<f64>>,
}

pub fn task_query_loss<'g>(
    model: &MetaModel,
    vars: &ModelVars<'g>,
    episode: &Episode,
    config: &MetaConfig,
    steps: usize,
) -> Result<TaskOutcome<'g>, MetaError> {
    let m = modulation(model, vars, &episode.support, config)?;
    let start = match &m {
        Some(m) => attenuate(&vars.theta, m)?,
        None => vars.theta.clone(),
    };
    let adapted = inner_adapt(&model.net, &start, &episode.support, steps, config.inner_lr, config.order)?;
    Ok(TaskOutcome {
        query_loss: model.net.loss(&adapted.theta, &episode.query)?,
        support_losses: adapted.losses,
        gamma: m.map(|m| m.gamma.value().data().to_vec()),
    })
}

/// Σ_i query loss of task i, as one node differentiable in every model
/// parameter held by `vars`.
pub fn meta_loss<'g>(
    model: &MetaModel,
    vars: &ModelVars<'g>,
    episodes: &[Episode],
    config: &MetaConfig,
) -> Result<Var<'g>, MetaError> {
    let mut total: Option<Var<'g>> = None;
    for (task, episode) in episodes.iter().enumerate() {
        let out = task_query_loss(model, vars, episode, config, config.inner_steps_train)
            .map_err(|e| MetaError::Task { task, source: Box::new(e) })?;
        total = Some(match total {
            None => out.query_loss,
            Some(t) => t.add(out.query_loss)?,
        });
    }
    total.ok_or_else(|| MetaError::Config("empty meta-batch".into()))
}

/// One task's contribution to the meta-gradient, on its own graph.
#[derive(Debug, Clone)]
pub struct TaskGradient {
    pub query_loss: f64,
    /// in [`MetaModel::flatten`] order
    pub grad: Vec<f64>,
    pub gamma: Option<Vec<f64>>,
}

pub fn task_gradient(model: &MetaModel, episode: &Episode, config: &MetaConfig) -> Result<TaskGradient, MetaError> {
    let graph = Graph::new();
    let vars = model.to_vars(&graph, true);
    let out = task_query_loss(model, &vars, episode, config, config.inner_steps_train)?;
    let wrt = vars.all();
    let grads = graph.grad(out.query_loss, &wrt, false)?;
    let mut grad = Vec::with_capacity(model.param_count());
    for g in grads {
        grad.extend_from_slice(g.value().data());
    }
    Ok(TaskGradient { query_loss: out.query_loss.item(), grad, gamma: out.gamma })
}
