use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{mlp_forward, LayerVars, LayeredParams, ModelError};
use crate::autodiff::{concat, Var};

/// How the generator output becomes modulation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Transform {
    /// γ = σ(out), so every γ lies in (0, 1)
    SigmoidGamma,
    /// γ = out, unrestricted
    RawGamma,
    /// (γ, δ) = split(out), applied as γ·θ + δ
    Affine,
}

/// Granularity at which one γ is shared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scope {
    /// one γ per scalar parameter
    Parameter,
    /// one γ per output unit: a weight row plus its bias entry
    Filter,
    /// one γ per layer
    Layer,
    /// a single γ for the whole network
    Network,
    None,
}

impl Scope {
    /// Number of γ values for a network with the given layers.
    pub fn group_count(self, params: &LayeredParams) -> usize {
        match self {
            Scope::Parameter => params.param_count(),
            Scope::Filter => params.layers().iter().map(|l| l.fan_out()).sum(),
            Scope::Layer => params.layer_count(),
            Scope::Network => 1,
            Scope::None => 0,
        }
    }

    /// Layer index owning each γ group.
    pub fn group_layers(self, params: &LayeredParams) -> Vec<usize> {
        let l = params.layer_count();
        match self {
            Scope::Parameter => params
                .layers()
                .iter()
                .enumerate()
                .flat_map(|(j, layer)| std::iter::repeat(j).take(layer.param_count()))
                .collect(),
            Scope::Filter => params
                .layers()
                .iter()
                .enumerate()
                .flat_map(|(j, layer)| std::iter::repeat(j).take(layer.fan_out()))
                .collect(),
            Scope::Layer => (0..l).collect(),
            Scope::Network => vec![0],
            Scope::None => Vec::new(),
        }
    }

    /// Mean γ of each layer's groups. A network-wide γ is reported for every layer.
    pub fn per_layer_mean(self, params: &LayeredParams, gamma: &[f64]) -> Vec<f64> {
        let l = params.layer_count();
        if self == Scope::Network {
            return vec![gamma.first().copied().unwrap_or(f64::NAN); l];
        }
        let mut sums = vec![0.0; l];
        let mut counts = vec![0usize; l];
        for (&j, &g) in self.group_layers(params).iter().zip(gamma) {
            sums[j] += g;
            counts[j] += 1;
        }
        sums.iter().zip(&counts).map(|(s, &c)| if c == 0 { f64::NAN } else { s / c as f64 }).collect()
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scope::Parameter => "parameter",
            Scope::Filter => "filter",
            Scope::Layer => "layer",
            Scope::Network => "network",
            Scope::None => "none",
        })
    }
}

impl FromStr for Scope {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "parameter" | "weight" => Scope::Parameter,
            "filter" => Scope::Filter,
            "layer" => Scope::Layer,
            "network" => Scope::Network,
            "none" => Scope::None,
            other => return Err(format!("unknown scope `{other}`")),
        })
    }
}

/// Modulation parameters for one task.
#[derive(Debug, Clone, Copy)]
pub struct Modulation<'g> {
    /// rank-1, one entry per group of `scope`
    pub gamma: Var<'g>,
    /// rank-1, one additive shift per layer (affine transform only)
    pub delta: Option<Var<'g>>,
    pub scope: Scope,
}

/// Output-layer bias that saturates the sigmoid: σ(40) rounds to exactly 1.0.
/// Output bias at initialization, so training starts from γ ≈ 0.98 rather
/// than halving every weight (sigmoid(0) = 0.5) on the first task.
pub const INITIAL_GAMMA_LOGIT: f64 = 4.0;

pub const SATURATING_BIAS: f64 = 40.0;

/// The generator g_φ: a 3-layer ReLU MLP with `l` hidden units per layer,
/// mapping a per-layer gradient summary to modulation parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Attenuator {
    pub params: LayeredParams,
    pub transform: Transform,
    pub scope: Scope,
    /// `l` of the task network
    pub layer_count: usize,
    /// number of γ groups for `scope`
    pub groups: usize,
}

impl Attenuator {
    pub fn new(
        task_params: &LayeredParams,
        scope: Scope,
        transform: Transform,
        rng: &mut impl Rng,
    ) -> Result<Self, ModelError> {
        if scope == Scope::None {
            return Err(ModelError::Attenuator("an attenuator needs a scope other than `none`".into()));
        }
        let l = task_params.layer_count();
        let groups = scope.group_count(task_params);
        let out = groups + if transform == Transform::Affine { l } else { 0 };
        let mut params = LayeredParams::init(&[l, l, l, out], rng)?;
        let last = params.layers_mut().last_mut().expect("three layers");
        for (i, b) in last.bias.data_mut().iter_mut().enumerate() {
            *b = match transform {
                Transform::SigmoidGamma => INITIAL_GAMMA_LOGIT,
                Transform::RawGamma => 1.0,
                Transform::Affine if i < groups => 1.0,
                Transform::Affine => 0.0,
            };
        }
        Ok(Self { params, transform, scope, layer_count: l, groups })
    }

    pub fn output_dim(&self) -> usize {
        self.params.sizes()[3]
    }

    /// Makes the generator emit γ ≡ 1 (and δ ≡ 0) for every input by zeroing
    /// the output weights and overriding the output bias.
    pub fn force_identity(&mut self) {
        let groups = self.groups;
        let transform = self.transform;
        let last = self.params.layers_mut().last_mut().expect("three layers");
        last.weight.data_mut().iter_mut().for_each(|w| *w = 0.0);
        for (i, b) in last.bias.data_mut().iter_mut().enumerate() {
            *b = match transform {
                Transform::SigmoidGamma => SATURATING_BIAS,
                Transform::RawGamma => 1.0,
                Transform::Affine if i < groups => 1.0,
                Transform::Affine => 0.0,
            };
        }
    }

    /// γ (and δ) from the gradient summary; differentiable in both `phi`
    /// and `summary`.
    pub fn generate_gamma<'g>(&self, phi: &[LayerVars<'g>], summary: Var<'g>) -> Result<Modulation<'g>, ModelError> {
        let shape = summary.shape();
        if shape != [self.layer_count] {
            return Err(ModelError::SummaryLength { expected: self.layer_count, found: shape });
        }
        let input = summary.reshape(&[1, self.layer_count])?;
        let out = mlp_forward(phi, input)?.flatten()?;
        let (gamma, delta) = match self.transform {
            Transform::SigmoidGamma => (out.sigmoid()?, None),
            Transform::RawGamma => (out, None),
            Transform::Affine => (out.slice(0, self.groups)?, Some(out.slice(self.groups, self.layer_count)?)),
        };
        Ok(Modulation { gamma, delta, scope: self.scope })
    }
}

/// Entry `j` is the mean of all gradient components of layer `j`, weight
/// and bias together. With `absolute` the mean of magnitudes is used
/// instead (an opt-in deviation from the signed mean).
pub fn layerwise_grad_mean<'g>(grads: &[LayerVars<'g>], absolute: bool) -> Result<Var<'g>, ModelError> {
    if grads.is_empty() {
        return Err(ModelError::EmptyArchitecture);
    }
    let means = grads
        .iter()
        .map(|l| {
            let (w, b) = if absolute { (l.weight.abs()?, l.bias.abs()?) } else { (l.weight, l.bias) };
            let n = (l.weight.value().numel() + l.bias.value().numel()) as f64;
            w.sum()?.add(b.sum()?)?.scale(1.0 / n)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(concat(&means)?)
}
