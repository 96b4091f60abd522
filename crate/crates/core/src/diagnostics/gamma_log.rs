use std::fmt::Write as _;

use crate::meta::{MetaModel, Method};

#[derive(Debug, Clone, PartialEq)]
pub struct GammaLogRow {
    /// "train" or "eval"
    pub phase: &'static str,
    pub iteration: u64,
    pub task_id: usize,
    pub layer: usize,
    pub gamma: f64,
}

/// One row per (task, layer). Scopes finer than a layer are reduced to the
/// layer mean. MAML yields nothing.
pub fn gamma_rows(
    model: &MetaModel,
    phase: &'static str,
    iteration: u64,
    first_task_id: usize,
    gammas: &[Option<Vec<f64>>],
) -> Vec<GammaLogRow> {
    let scope = match (model.method, &model.attenuator) {
        (Method::Maml, _) => return Vec::new(),
        (_, Some(a)) => a.scope,
        (Method::LearnedScope(s), None) => s,
        (Method::L2f(_), None) => return Vec::new(),
    };
    let mut rows = Vec::new();
    for (i, g) in gammas.iter().enumerate() {
        let Some(g) = g else { continue };
        for (layer, gamma) in scope.per_layer_mean(&model.net.params, g).into_iter().enumerate() {
            rows.push(GammaLogRow { phase, iteration, task_id: first_task_id + i, layer, gamma });
        }
    }
    rows
}

/// Accumulates rows; rendered as `phase,iteration,task_id,layer,gamma`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GammaLog {
    pub rows: Vec<GammaLogRow>,
}

impl GammaLog {
    pub const CSV_HEADER: &'static str = "phase,iteration,task_id,layer,gamma";

    pub fn extend(&mut self, rows: Vec<GammaLogRow>) {
        self.rows.extend(rows);
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{},{}", r.phase, r.iteration, r.task_id, r.layer, r.gamma);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meta::{meta_train_with, MetaConfig};
    use crate::models::{Head, REGRESSION_SIZES};
    use crate::tasks::{DistributionSpec, SinusoidSampler};

    fn run(method: Method) -> GammaLog {
        let cfg = MetaConfig { method, iterations: 10, ..Default::default() };
        let mut model = MetaModel::new(&cfg, &REGRESSION_SIZES, Head::Regression).unwrap();
        let sampler = SinusoidSampler::new(DistributionSpec::standard(5), 0).unwrap();
        let mut log = GammaLog::default();
        meta_train_with(&cfg, &mut model, &sampler, &mut |ev| {
            log.extend(gamma_rows(ev.model, "train", ev.iteration, 0, ev.gammas));
            Ok(())
        })
        .unwrap();
        log
    }

    #[test]
    fn row_counts() {
        assert!(run(Method::Maml).rows.is_empty());
        let log = run("l2f".parse().unwrap());
        assert_eq!(log.rows.len(), 10 * 4 * 3);
        assert!(log.rows.iter().all(|r| r.gamma > 0.0 && r.gamma < 1.0));
        assert_eq!(log.to_csv().lines().count(), 121);
    }
}
