use std::fmt::Write as _;

use super::DiagnosticsError;
use crate::meta::{evaluate, MetaConfig, MetaModel, Method};
use crate::tasks::Episode;

/// Metric table for θ with layer `layer` (weight and bias) scaled by `gamma`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub layer: usize,
    pub gamma: f64,
    pub steps: Vec<usize>,
    pub mean: Vec<f64>,
    pub ci95: Vec<f64>,
    pub count: usize,
}

/// Manual attenuation of a trained initialization, one layer at a time.
/// The attenuator (if any) is ignored: θ is evaluated as plain MAML.
pub fn gamma_sweep(
    model: &MetaModel,
    config: &MetaConfig,
    layers: &[usize],
    gammas: &[f64],
    episodes: &[Episode],
) -> Result<Vec<SweepRow>, DiagnosticsError> {
    let l = model.net.layer_count();
    if let Some(&bad) = layers.iter().find(|&&j| j >= l) {
        return Err(DiagnosticsError::LayerIndex { layer: bad, layers: l });
    }
    let eval_config = MetaConfig { method: Method::Maml, gamma_identity: false, ..config.clone() };
    let mut rows = Vec::with_capacity(layers.len() * gammas.len());
    for &layer in layers {
        for &gamma in gammas {
            let mut scaled = MetaModel { method: Method::Maml, net: model.net.clone(), attenuator: None, learned_gamma: None };
            let target = &mut scaled.net.params.layers_mut()[layer];
            target.weight.data_mut().iter_mut().for_each(|w| *w *= gamma);
            target.bias.data_mut().iter_mut().for_each(|b| *b *= gamma);
            let table = evaluate(&scaled, &eval_config, episodes.iter().cloned())?;
            rows.push(SweepRow { layer, gamma, steps: table.steps, mean: table.mean, ci95: table.ci95, count: table.count });
        }
    }
    Ok(rows)
}

/// `#`-prefixed provenance lines, then
/// `layer,gamma,count,step<s>_mean,step<s>_ci95,...`.
pub fn sweep_csv(rows: &[SweepRow], provenance: &[(String, String)]) -> String {
    let mut out = String::new();
    for (k, v) in provenance {
        let _ = writeln!(out, "# {k}: {v}");
    }
    out.push_str("layer,gamma,count");
    if let Some(first) = rows.first() {
        for s in &first.steps {
            let _ = write!(out, ",step{s}_mean,step{s}_ci95");
        }
    }
    out.push('\n');
    for r in rows {
        let _ = write!(out, "{},{},{}", r.layer, r.gamma, r.count);
        for (m, c) in r.mean.iter().zip(&r.ci95) {
            let _ = write!(out, ",{m},{c}");
        }
        out.push('\n');
    }
    out
}
