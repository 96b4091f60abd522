use std::fmt::Write as _;

use super::{attenuate, modulation, MetaConfig, MetaError, MetaModel};
use crate::autodiff::Graph;
use crate::models::{flat_vars, LayeredParams};
use crate::tasks::{Episode, MetricKind};

/// Mean and 95% interval (1.96 · standard error) of the query metric after
/// each requested number of inner steps.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalTable {
    pub metric: MetricKind,
    pub steps: Vec<usize>,
    pub mean: Vec<f64>,
    pub ci95: Vec<f64>,
    pub count: usize,
}

impl EvalTable {
    pub fn from_results(metric: MetricKind, steps: &[usize], results: &[EpisodeResult]) -> Self {
        let n = results.len();
        let mut mean = Vec::with_capacity(steps.len());
        let mut ci95 = Vec::with_capacity(steps.len());
        for s in 0..steps.len() {
            let xs = results.iter().map(|r| r.metrics[s]);
            let m = xs.clone().sum::<f64>() / n as f64;
            let var = if n > 1 { xs.map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
            mean.push(m);
            ci95.push(1.96 * (var / n as f64).sqrt());
        }
        Self { metric, steps: steps.to_vec(), mean, ci95, count: n }
    }

    pub fn at_steps(&self, steps: usize) -> Option<(f64, f64)> {
        self.steps.iter().position(|&s| s == steps).map(|i| (self.mean[i], self.ci95[i]))
    }

    /// `steps,metric,mean,ci95,count`
    pub fn to_csv(&self) -> String {
        let metric = self.metric.name();
        let mut out = String::from("steps,metric,mean,ci95,count\n");
        for i in 0..self.steps.len() {
            let _ = writeln!(out, "{},{metric},{},{},{}", self.steps[i], self.mean[i], self.ci95[i], self.count);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    /// query metric after each requested step count
    pub metrics: Vec<f64>,
    pub gamma: Option<Vec<f64>>,
}

/// The task's starting point for fast adaptation: θ attenuated once by
/// the method's modulation (plain θ for MAML), plus the γ used.
pub fn adaptation_start(
    model: &MetaModel,
    config: &MetaConfig,
    support: &crate::tasks::Batch,
) -> Result<(LayeredParams, Option<Vec<f64>>), MetaError> {
    let graph = Graph::new();
    let vars = model.to_vars(&graph, true);
    // values only; no need to keep second-order terms
    let first_order = MetaConfig { order: super::Order::First, ..config.clone() };
    Ok(match modulation(model, &vars, support, &first_order)? {
        Some(m) => {
            let start = attenuate(&vars.theta, &m)?;
            (LayeredParams::from_vars(&start)?, Some(m.gamma.value().data().to_vec()))
        }
        None => (model.net.params.clone(), None),
    })
}

/// Attenuates once (if the method does), then runs `max(steps)` plain GD
/// steps on the support set, scoring the query set at each requested count.
pub fn adapt_and_score(
    model: &MetaModel,
    config: &MetaConfig,
    episode: &Episode,
    steps: &[usize],
) -> Result<EpisodeResult, MetaError> {
    let (mut theta, gamma) = adaptation_start(model, config, &episode.support)?;
    let max_steps = steps.iter().copied().max().unwrap_or(0);
    let mut metrics = vec![f64::NAN; steps.len()];
    for step in 0..=max_steps {
        let graph = Graph::new();
        let vars = theta.to_vars(&graph, true);
        if steps.contains(&step) {
            let value = model.net.metric(&vars, &episode.query)?;
            for (i, _) in steps.iter().enumerate().filter(|(_, &s)| s == step) {
                metrics[i] = value;
            }
        }
        if step == max_steps {
            break;
        }
        let loss = model.net.loss(&vars, &episode.support).map_err(|e| non_finite_at(e.into(), step))?;
        let flat = flat_vars(&vars);
        let grads = graph.grad(loss, &flat, false)?;
        let mut values = theta.flatten();
        let mut offset = 0;
        for g in &grads {
            for &gv in g.value().data() {
                values[offset] -= config.inner_lr * gv;
                offset += 1;
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(MetaError::NonFiniteLoss { step: step + 1 });
        }
        theta.assign_flat(&values)?;
    }
    Ok(EpisodeResult { metrics, gamma })
}

fn non_finite_at(e: MetaError, step: usize) -> MetaError {
    if e.is_non_finite() {
        MetaError::NonFiniteLoss { step }
    } else {
        e
    }
}

/// Scores every episode at `config.inner_steps_eval`.
pub fn evaluate<I>(model: &MetaModel, config: &MetaConfig, episodes: I) -> Result<EvalTable, MetaError>
where
    I: IntoIterator<Item = Episode>,
{
    config.validate()?;
    let steps = &config.inner_steps_eval;
    let results = episodes
        .into_iter()
        .enumerate()
        .map(|(task, e)| {
            adapt_and_score(model, config, &e, steps).map_err(|err| MetaError::Task { task, source: Box::new(err) })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EvalTable::from_results(model.net.head.metric(), steps, &results))
}
