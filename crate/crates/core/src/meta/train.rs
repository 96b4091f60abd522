use std::fmt::Write as _;
use std::time::Instant;

use super::{task_gradient, Adam, MetaConfig, MetaError, MetaModel};
use crate::models::Scope;
use crate::tasks::{Episode, TaskSampler};

/// Per-layer (mean, min, max) of the per-task γ layer means.
pub type GammaStats = Vec<(f64, f64, f64)>;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRecord {
    pub iteration: u64,
    pub outer_loss: f64,
    /// empty for MAML
    pub gamma: GammaStats,
    pub wall_time: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub layer_count: usize,
    pub records: Vec<TrainRecord>,
}

impl TrainLog {
    /// `iteration,outer_loss,gamma_l<j>_{mean,min,max}...,wall_time`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,outer_loss");
        for j in 0..self.layer_count {
            let _ = write!(out, ",gamma_l{j}_mean,gamma_l{j}_min,gamma_l{j}_max");
        }
        out.push_str(",wall_time\n");
        for r in &self.records {
            let _ = write!(out, "{},{}", r.iteration, r.outer_loss);
            for j in 0..self.layer_count {
                match r.gamma.get(j) {
                    Some((mean, min, max)) => {
                        let _ = write!(out, ",{mean},{min},{max}");
                    }
                    None => out.push_str(",,,"),
                }
            }
            let _ = writeln!(out, ",{:.3}", r.wall_time);
        }
        out
    }
}

/// State handed to the training hook before each update.
pub struct IterationEvent<'a> {
    pub iteration: u64,
    /// parameters the meta-batch was evaluated at (pre-update)
    pub model: &'a MetaModel,
    pub episodes: &'a [Episode],
    /// Σ of the meta-batch query losses
    pub outer_loss: f64,
    /// per task, the γ used for attenuation
    pub gammas: &'a [Option<Vec<f64>>],
}

fn gamma_stats(model: &MetaModel, gammas: &[Option<Vec<f64>>]) -> GammaStats {
    let scope = match (&model.attenuator, model.method) {
        (Some(a), _) => a.scope,
        (None, super::Method::LearnedScope(s)) => s,
        _ => return Vec::new(),
    };
    let per_task: Vec<Vec<f64>> =
        gammas.iter().flatten().map(|g| scope_means(scope, model, g)).collect();
    if per_task.is_empty() {
        return Vec::new();
    }
    (0..model.net.layer_count())
        .map(|j| {
            let col = per_task.iter().map(|t| t[j]);
            let n = per_task.len() as f64;
            let mean = col.clone().sum::<f64>() / n;
            let min = col.clone().fold(f64::INFINITY, f64::min);
            let max = col.fold(f64::NEG_INFINITY, f64::max);
            (mean, min, max)
        })
        .collect()
}

fn scope_means(scope: Scope, model: &MetaModel, gamma: &[f64]) -> Vec<f64> {
    scope.per_layer_mean(&model.net.params, gamma)
}

pub fn meta_train(config: &MetaConfig, model: &mut MetaModel, sampler: &dyn TaskSampler) -> Result<TrainLog, MetaError> {
    meta_train_with(config, model, sampler, &mut |_| Ok(()))
}

/// Runs `config.iterations` Adam updates of every model parameter jointly.
///
/// Task gradients are computed one task at a time and summed in slot
/// order, so results do not depend on scheduling. On a non-finite loss,
/// gradient or update, `model` is left at the last finite state and
/// [`MetaError::Diverged`] carries a copy of it.
pub fn meta_train_with(
    config: &MetaConfig,
    model: &mut MetaModel,
    sampler: &dyn TaskSampler,
    hook: &mut dyn FnMut(&IterationEvent<'_>) -> Result<(), MetaError>,
) -> Result<TrainLog, MetaError> {
    config.validate()?;
    if model.method != config.method {
        return Err(MetaError::Config(format!("model is `{}` but config says `{}`", model.method, config.method)));
    }
    let start = Instant::now();
    let n = model.param_count();
    let mut adam = Adam::new(n, config.meta_lr, config.adam_beta1, config.adam_beta2, config.adam_eps);
    let frozen = if config.gamma_identity { model.phi_range() } else { None };
    let mut log = TrainLog { layer_count: model.net.layer_count(), records: Vec::new() };
    let mut params = model.flatten();

    for iteration in 0..config.iterations {
        let diverged = |model: &MetaModel| MetaError::Diverged { iteration, last_state: Box::new(model.clone()) };
        let episodes: Vec<Episode> = (0..config.meta_batch_size).map(|slot| sampler.sample(iteration, slot)).collect();
        let mut grad = vec![0.0; n];
        let mut outer_loss = 0.0;
        let mut gammas = Vec::with_capacity(episodes.len());
        for (task, episode) in episodes.iter().enumerate() {
            let tg = match task_gradient(model, episode, config) {
                Ok(tg) => tg,
                Err(e) if e.is_non_finite() => return Err(diverged(model)),
                Err(e) => return Err(MetaError::Task { task, source: Box::new(e) }),
            };
            outer_loss += tg.query_loss;
            grad.iter_mut().zip(&tg.grad).for_each(|(a, g)| *a += g);
            gammas.push(tg.gamma);
        }
        if !outer_loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(diverged(model));
        }
        if let Some(r) = &frozen {
            grad[r.clone()].iter_mut().for_each(|g| *g = 0.0);
        }

        hook(&IterationEvent { iteration, model, episodes: &episodes, outer_loss, gammas: &gammas })?;
        let last = iteration + 1 == config.iterations;
        let every = config.log_every.max(1);
        if iteration == 0 || last || (config.log_every > 0 && iteration % every == 0) {
            log.records.push(TrainRecord {
                iteration,
                outer_loss,
                gamma: gamma_stats(model, &gammas),
                wall_time: start.elapsed().as_secs_f64(),
            });
        }

        adam.step(&mut params, &grad);
        if params.iter().any(|p| !p.is_finite()) {
            return Err(diverged(model));
        }
        model.assign_flat(&params)?;
    }
    Ok(log)
}
