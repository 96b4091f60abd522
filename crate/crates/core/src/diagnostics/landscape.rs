use super::DiagnosticsError;
use crate::autodiff::Graph;
use crate::meta::{adaptation_start, MetaConfig, MetaModel};
use crate::models::{flat_vars, LayeredParams, TaskNetwork};
use crate::tasks::{Batch, Episode};

/// Probe step sizes as multiples of the inner learning rate.
pub const DEFAULT_PROBE_MULTIPLIERS: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 4.0];

/// Loss and gradient behaviour along one descent direction.
#[derive(Debug, Clone, PartialEq)]
pub struct LandscapeRecord {
    pub step: usize,
    pub loss_min: f64,
    pub loss_max: f64,
    /// min/max of ‖∇L(θ_p) − g‖ over the probes
    pub grad_diff_min: f64,
    pub grad_diff_max: f64,
    /// max over probes of ‖∇L(θ_p) − g‖ / ‖θ_p − θ‖
    pub effective_beta: f64,
    /// probes whose loss or gradient was not finite
    pub non_finite: usize,
}

impl LandscapeRecord {
    pub const CSV_HEADER: &'static str =
        "step,loss_min,loss_max,grad_diff_min,grad_diff_max,effective_beta,non_finite";

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.step,
            self.loss_min,
            self.loss_max,
            self.grad_diff_min,
            self.grad_diff_max,
            self.effective_beta,
            self.non_finite
        )
    }
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Probes θ_p = θ − η_p·g for each `η_p` in `step_sizes`. `loss_grad`
/// returns the loss and its gradient at a flat parameter vector; an error
/// or non-finite value marks that probe as flagged instead of aborting.
/// Fields are NaN when no probe is usable.
pub fn landscape_probe<F>(mut loss_grad: F, theta: &[f64], g: &[f64], step_sizes: &[f64]) -> LandscapeRecord
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>), DiagnosticsError>,
{
    let mut rec = LandscapeRecord {
        step: 0,
        loss_min: f64::INFINITY,
        loss_max: f64::NEG_INFINITY,
        grad_diff_min: f64::INFINITY,
        grad_diff_max: f64::NEG_INFINITY,
        effective_beta: 0.0,
        non_finite: 0,
    };
    let mut usable = 0;
    for &eta in step_sizes {
        let probe: Vec<f64> = theta.iter().zip(g).map(|(t, gi)| t - eta * gi).collect();
        let (loss, grad) = match loss_grad(&probe) {
            Ok((l, gr)) if l.is_finite() && gr.iter().all(|v| v.is_finite()) => (l, gr),
            _ => {
                rec.non_finite += 1;
                continue;
            }
        };
        usable += 1;
        let diff = l2(&grad, g);
        rec.loss_min = rec.loss_min.min(loss);
        rec.loss_max = rec.loss_max.max(loss);
        rec.grad_diff_min = rec.grad_diff_min.min(diff);
        rec.grad_diff_max = rec.grad_diff_max.max(diff);
        let dist = l2(&probe, theta);
        if dist > 0.0 {
            rec.effective_beta = rec.effective_beta.max(diff / dist);
        }
    }
    if usable == 0 {
        rec.loss_min = f64::NAN;
        rec.loss_max = f64::NAN;
        rec.grad_diff_min = f64::NAN;
        rec.grad_diff_max = f64::NAN;
        rec.effective_beta = f64::NAN;
    }
    rec
}

fn loss_and_grad(net: &TaskNetwork, shape: &LayeredParams, flat: &[f64], batch: &Batch) -> Result<(f64, Vec<f64>), DiagnosticsError> {
    let mut params = shape.clone();
    params.assign_flat(flat)?;
    let graph = Graph::new();
    let vars = params.to_vars(&graph, true);
    let loss = net.loss(&vars, batch)?;
    let grads = graph.grad(loss, &flat_vars(&vars), false)?;
    let mut out = Vec::with_capacity(flat.len());
    for g in grads {
        out.extend_from_slice(g.value().data());
    }
    Ok((loss.item(), out))
}

/// One record per inner step of fast adaptation on `episode.support`,
/// starting from the method's (attenuated) initialization. Probes use
/// `multipliers · α`.
pub fn inner_loop_landscape(
    model: &MetaModel,
    config: &MetaConfig,
    episode: &Episode,
    steps: usize,
    multipliers: &[f64],
) -> Result<Vec<LandscapeRecord>, DiagnosticsError> {
    let (start, _) = adaptation_start(model, config, &episode.support)?;
    let alpha = config.inner_lr;
    let sizes: Vec<f64> = multipliers.iter().map(|m| m * alpha).collect();
    let mut theta = start.flatten();
    let mut out = Vec::with_capacity(steps);
    for step in 0..steps {
        let (_, g) = loss_and_grad(&model.net, &start, &theta, &episode.support)?;
        let mut rec = landscape_probe(|p| loss_and_grad(&model.net, &start, p, &episode.support), &theta, &g, &sizes);
        rec.step = step;
        out.push(rec);
        theta.iter_mut().zip(&g).for_each(|(t, gi)| *t -= alpha * gi);
        if theta.iter().any(|v| !v.is_finite()) {
            break;
        }
    }
    Ok(out)
}

/// Per-step mean over tasks, ignoring NaN fields.
pub fn average_by_step(per_task: &[Vec<LandscapeRecord>]) -> Vec<LandscapeRecord> {
    let steps = per_task.iter().map(Vec::len).max().unwrap_or(0);
    (0..steps)
        .map(|step| {
            let rows: Vec<&LandscapeRecord> = per_task.iter().filter_map(|t| t.get(step)).collect();
            let mean = |f: fn(&LandscapeRecord) -> f64| {
                let vals: Vec<f64> = rows.iter().map(|r| f(r)).filter(|v| v.is_finite()).collect();
                if vals.is_empty() {
                    f64::NAN
                } else {
                    vals.iter().sum::<f64>() / vals.len() as f64
                }
            };
            LandscapeRecord {
                step,
                loss_min: mean(|r| r.loss_min),
                loss_max: mean(|r| r.loss_max),
                grad_diff_min: mean(|r| r.grad_diff_min),
                grad_diff_max: mean(|r| r.grad_diff_max),
                effective_beta: mean(|r| r.effective_beta),
                non_finite: rows.iter().map(|r| r.non_finite).sum(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meta::Method;
    use crate::models::{Head, REGRESSION_SIZES};
    use crate::tasks::{DistributionSpec, SinusoidSampler, TaskSampler};

    fn quadratic(scale: Vec<f64>) -> impl FnMut(&[f64]) -> Result<(f64, Vec<f64>), DiagnosticsError> {
        move |p| {
            let loss = p.iter().zip(&scale).map(|(x, s)| s * x * x).sum();
            Ok((loss, p.iter().zip(&scale).map(|(x, s)| 2.0 * s * x).collect()))
        }
    }

    #[test]
    fn sum_of_squares_has_beta_two() {
        let theta = vec![0.3, -1.0, 2.0];
        let g: Vec<f64> = theta.iter().map(|x| 2.0 * x).collect();
        let rec = landscape_probe(quadratic(vec![1.0; 3]), &theta, &g, &[0.01, 0.1, 0.3]);
        assert!((rec.effective_beta - 2.0).abs() < 1e-12);
        assert!(rec.loss_min <= rec.loss_max && rec.grad_diff_min <= rec.grad_diff_max);
    }

    #[test]
    fn linear_loss_has_constant_gradient() {
        let c = vec![1.0, -2.0];
        let f = |p: &[f64]| Ok((p[0] - 2.0 * p[1], vec![1.0, -2.0]));
        let rec = landscape_probe(f, &[0.5, 0.5], &c, &[0.1, 1.0]);
        assert_eq!((rec.grad_diff_min, rec.grad_diff_max), (0.0, 0.0));
        assert_eq!(rec.effective_beta, 0.0);
    }

    #[test]
    fn quartic_matches_hand_values() {
        let f = |p: &[f64]| Ok((p[0].powi(4), vec![4.0 * p[0].powi(3)]));
        let rec = landscape_probe(f, &[1.0], &[4.0], &[0.01, 0.1]);
        // θ_p = 0.96 and 0.6
        assert!((rec.loss_max - 0.84934656).abs() < 1e-12);
        assert!((rec.loss_min - 0.1296).abs() < 1e-12);
        assert!((rec.grad_diff_min - 0.461056).abs() < 1e-12);
        assert!((rec.grad_diff_max - 3.136).abs() < 1e-12);
        assert!((rec.effective_beta - 11.5264).abs() < 1e-9);
    }

    #[test]
    fn non_finite_probes_are_flagged() {
        let f = |p: &[f64]| Ok((if p[0] < 0.0 { f64::NAN } else { p[0] * p[0] }, vec![2.0 * p[0]]));
        let rec = landscape_probe(f, &[1.0], &[2.0], &[0.1, 1.0, 2.0]);
        assert_eq!(rec.non_finite, 2);
        assert!((rec.effective_beta - 2.0).abs() < 1e-12);
        let rec = landscape_probe(|_| Err(DiagnosticsError::DegenerateSum), &[1.0], &[2.0], &[0.1]);
        assert_eq!(rec.non_finite, 1);
        assert!(rec.effective_beta.is_nan());
    }

    #[test]
    fn inner_loop_records_one_row_per_step() {
        let cfg = MetaConfig { method: Method::Maml, ..Default::default() };
        let model = MetaModel::new(&cfg, &REGRESSION_SIZES, Head::Regression).unwrap();
        let sampler = SinusoidSampler::new(DistributionSpec::standard(10), 0).unwrap();
        let tasks: Vec<_> = (0..3).map(|i| inner_loop_landscape(&model, &cfg, &sampler.sample(i, 0), 5, &DEFAULT_PROBE_MULTIPLIERS).unwrap()).collect();
        assert!(tasks.iter().all(|t| t.len() == 5));
        let avg = average_by_step(&tasks);
        assert_eq!(avg.len(), 5);
        assert!(avg.iter().all(|r| r.effective_beta.is_finite() && r.effective_beta >= 0.0));
    }
}
