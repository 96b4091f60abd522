use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::DiagnosticsError;
use crate::autodiff::Graph;
use crate::meta::{task_gradient, task_query_loss, MetaConfig, MetaModel};
use crate::models::flat_vars;
use crate::tasks::Episode;

#[derive(Debug, Clone, PartialEq)]
pub struct ConflictResult {
    /// mean angle in radians
    pub mean: f64,
    /// one angle per usable vector, in input order
    pub angles: Vec<f64>,
    /// zero-norm vectors left out
    pub skipped: usize,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Mean |arccos(û_i · v)| with v the normalized sum of all u_i, evaluated
/// as 2·atan2(‖û_i − v‖, ‖û_i + v‖).
///
/// Zero-norm vectors cannot be normalized; they are skipped (but still
/// contribute nothing to the sum) and counted in `skipped`.
pub fn degree_of_conflict(vectors: &[Vec<f64>]) -> Result<ConflictResult, DiagnosticsError> {
    if vectors.len() < 2 {
        return Err(DiagnosticsError::TooFewVectors { found: vectors.len() });
    }
    let dim = vectors[0].len();
    if let Some(v) = vectors.iter().find(|v| v.len() != dim) {
        return Err(DiagnosticsError::LengthMismatch { expected: dim, found: v.len() });
    }
    let mut sum = vec![0.0; dim];
    for v in vectors {
        sum.iter_mut().zip(v).for_each(|(s, x)| *s += x);
    }
    let usable: Vec<(&Vec<f64>, f64)> = vectors.iter().map(|v| (v, norm(v))).filter(|(_, n)| *n > 0.0).collect();
    let skipped = vectors.len() - usable.len();
    if usable.is_empty() {
        return Err(DiagnosticsError::NoUsableVectors { skipped });
    }
    let sum_norm = norm(&sum);
    if sum_norm == 0.0 {
        return Err(DiagnosticsError::DegenerateSum);
    }
    let angles: Vec<f64> = usable
        .iter()
        .map(|(v, n)| {
            // arccos(û·v) loses ~1e-8 near 0 and π; this form does not
            let (mut minus, mut plus) = (0.0, 0.0);
            for (a, b) in v.iter().zip(&sum) {
                let (ua, vb) = (a / n, b / sum_norm);
                minus += (ua - vb) * (ua - vb);
                plus += (ua + vb) * (ua + vb);
            }
            2.0 * minus.sqrt().atan2(plus.sqrt())
        })
        .collect();
    let mean = angles.iter().sum::<f64>() / angles.len() as f64;
    Ok(ConflictResult { mean, angles, skipped })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConflictScope {
    PerLayer,
    PerTask,
    WithinTask,
}

impl ConflictScope {
    pub fn name(self) -> &'static str {
        match self {
            ConflictScope::PerLayer => "per-layer",
            ConflictScope::PerTask => "per-task",
            ConflictScope::WithinTask => "within-task",
        }
    }
}

/// One conflict measurement. `values` are the individual angles.
#[derive(Debug, Clone, PartialEq)]
pub struct ConflictRecord {
    pub scope: ConflictScope,
    pub iteration: u64,
    /// set for per-layer records
    pub layer: Option<usize>,
    pub mean: f64,
    pub values: Vec<f64>,
    pub skipped: usize,
    /// number of tasks the record summarizes
    pub window: usize,
}

impl ConflictRecord {
    pub const CSV_HEADER: &'static str = "scope,iteration,layer,window,mean_angle,skipped,angles";

    /// One CSV line; angles are `;`-separated.
    pub fn csv_line(&self) -> String {
        let mut out = format!(
            "{},{},{},{},{},{},",
            self.scope.name(),
            self.iteration,
            self.layer.map_or(String::new(), |l| l.to_string()),
            self.window,
            self.mean,
            self.skipped
        );
        for (i, a) in self.values.iter().enumerate() {
            if i > 0 {
                out.push(';');
            }
            let _ = write!(out, "{a}");
        }
        out
    }
}

/// u_i = −∇_θ (query loss of task i after adaptation), θ components only.
pub fn meta_update_directions(
    model: &MetaModel,
    config: &MetaConfig,
    episodes: &[Episode],
) -> Result<Vec<Vec<f64>>, DiagnosticsError> {
    let n = model.net.params.param_count();
    episodes
        .iter()
        .map(|e| {
            let tg = task_gradient(model, e, config)?;
            Ok(tg.grad[..n].iter().map(|g| -g).collect())
        })
        .collect()
}

pub fn per_task_conflict(
    model: &MetaModel,
    config: &MetaConfig,
    episodes: &[Episode],
    iteration: u64,
) -> Result<ConflictRecord, DiagnosticsError> {
    let u = meta_update_directions(model, config, episodes)?;
    let r = degree_of_conflict(&u)?;
    Ok(ConflictRecord {
        scope: ConflictScope::PerTask,
        iteration,
        layer: None,
        mean: r.mean,
        values: r.angles,
        skipped: r.skipped,
        window: episodes.len(),
    })
}

/// One record per layer, restricting every u_i to that layer's slice.
pub fn per_layer_conflict(
    model: &MetaModel,
    config: &MetaConfig,
    episodes: &[Episode],
    iteration: u64,
) -> Result<Vec<ConflictRecord>, DiagnosticsError> {
    let u = meta_update_directions(model, config, episodes)?;
    model
        .net
        .params
        .layer_ranges()
        .into_iter()
        .enumerate()
        .map(|(j, range)| {
            let slices: Vec<Vec<f64>> = u.iter().map(|v| v[range.clone()].to_vec()).collect();
            let r = degree_of_conflict(&slices)?;
            Ok(ConflictRecord {
                scope: ConflictScope::PerLayer,
                iteration,
                layer: Some(j),
                mean: r.mean,
                values: r.angles,
                skipped: r.skipped,
                window: episodes.len(),
            })
        })
        .collect()
}

/// Conflict among the per-example meta-update directions of each task's
/// query set; `values` holds one mean angle per task.
pub fn within_task_conflict(
    model: &MetaModel,
    config: &MetaConfig,
    episodes: &[Episode],
    iteration: u64,
) -> Result<ConflictRecord, DiagnosticsError> {
    let n = model.net.params.param_count();
    let mut per_task = Vec::with_capacity(episodes.len());
    let mut skipped = 0;
    for episode in episodes {
        let q = &episode.query;
        let mut dirs = Vec::with_capacity(q.len());
        for i in 0..q.len() {
            let single = Episode { support: episode.support.clone(), query: q.example(i) };
            let graph = Graph::new();
            let vars = model.to_vars(&graph, true);
            let out = task_query_loss(model, &vars, &single, config, config.inner_steps_train)?;
            let grads = graph.grad(out.query_loss, &flat_vars(&vars.theta), false)?;
            let mut u = Vec::with_capacity(n);
            for g in grads {
                u.extend(g.value().data().iter().map(|v| -v));
            }
            dirs.push(u);
        }
        let r = degree_of_conflict(&dirs)?;
        skipped += r.skipped;
        per_task.push(r.mean);
    }
    let mean = per_task.iter().sum::<f64>() / per_task.len().max(1) as f64;
    Ok(ConflictRecord {
        scope: ConflictScope::WithinTask,
        iteration,
        layer: None,
        mean,
        values: per_task,
        skipped,
        window: episodes.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Head, REGRESSION_SIZES};
    use crate::tasks::{DistributionSpec, SinusoidSampler, TaskSampler};
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_4, PI};

    #[test]
    fn identical_vectors_have_no_conflict() {
        let r = degree_of_conflict(&vec![vec![0.3, -1.2, 4.0]; 5]).unwrap();
        assert!(r.mean.abs() < 1e-9);
    }

    #[test]
    fn orthogonal_pair_is_quarter_pi() {
        let r = degree_of_conflict(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!((r.mean - FRAC_PI_4).abs() < 1e-12);
    }

    #[test]
    fn three_vector_example_matches_direct_computation() {
        let u = [vec![1.0, 0.0], vec![-1.0, 1.0], vec![0.0, -2.0]];
        // sum = (0, -1), so v = (0, -1)
        let expected = [PI / 2.0, (-1.0f64 / 2f64.sqrt()).acos(), 0.0];
        let r = degree_of_conflict(&u).unwrap();
        for (a, e) in r.angles.iter().zip(expected) {
            assert!((a - e).abs() < 1e-12);
        }
        assert!((r.mean - expected.iter().sum::<f64>() / 3.0).abs() < 1e-12);
    }

    #[test]
    fn zero_vectors_are_skipped_and_counted() {
        let r = degree_of_conflict(&[vec![1.0, 0.0], vec![0.0, 0.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(r.skipped, 1);
        assert_eq!(r.angles.len(), 2);
        assert!(matches!(degree_of_conflict(&[vec![0.0], vec![0.0]]), Err(DiagnosticsError::NoUsableVectors { skipped: 2 })));
        assert!(matches!(degree_of_conflict(&[vec![1.0], vec![-1.0]]), Err(DiagnosticsError::DegenerateSum)));
        assert!(degree_of_conflict(&[vec![1.0]]).is_err());
        assert!(degree_of_conflict(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    proptest! {
        // Rescaling a single u_i moves the summed direction, so only a common
        // positive factor leaves the measure unchanged.
        #[test]
        fn invariant_to_common_positive_rescaling(
            vs in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 4), 2..6),
            scale in 1e-3f64..1e3,
        ) {
            let base = degree_of_conflict(&vs);
            prop_assume!(base.is_ok());
            let base = base.unwrap();
            let scaled: Vec<Vec<f64>> = vs.iter().map(|v| v.iter().map(|x| x * scale).collect()).collect();
            let r = degree_of_conflict(&scaled).unwrap();
            prop_assert!((r.mean - base.mean).abs() < 1e-9);
            prop_assert!(r.angles.iter().all(|&a| (0.0..=PI).contains(&a)));
        }

        #[test]
        fn copies_of_one_vector_give_zero(v in prop::collection::vec(-5.0f64..5.0, 1..8), n in 2usize..6) {
            prop_assume!(norm(&v) > 1e-6);
            let r = degree_of_conflict(&vec![v; n]).unwrap();
            prop_assert!(r.mean.abs() < 1e-9);
        }
    }

    #[test]
    fn model_level_conflicts_are_angles() {
        let cfg = crate::meta::MetaConfig { method: crate::meta::Method::Maml, ..Default::default() };
        let model = MetaModel::new(&cfg, &REGRESSION_SIZES, Head::Regression).unwrap();
        let sampler = SinusoidSampler::new(DistributionSpec::standard(5), 0).unwrap();
        let episodes: Vec<Episode> = (0..4).map(|s| sampler.sample(0, s)).collect();
        let task = per_task_conflict(&model, &cfg, &episodes, 7).unwrap();
        assert_eq!(task.values.len(), 4);
        assert_eq!(task.iteration, 7);
        let layers = per_layer_conflict(&model, &cfg, &episodes, 7).unwrap();
        assert_eq!(layers.len(), 3);
        let within = within_task_conflict(&model, &cfg, &episodes[..2], 7).unwrap();
        assert_eq!(within.values.len(), 2);
        for r in layers.iter().chain([&task, &within]) {
            assert!(r.values.iter().all(|&a| (0.0..=PI).contains(&a)));
        }
        assert!(task.csv_line().starts_with("per-task,7,,4,"));
    }
}
