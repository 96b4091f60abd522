use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::MetaError;
use crate::models::{Scope, Transform};

/// Which initialization the inner loop starts from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    /// plain θ
    Maml,
    /// θ attenuated by a task-conditioned γ from the attenuator
    L2f(Transform),
    /// θ attenuated by a task-independent learned γ at the given scope
    LearnedScope(Scope),
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Maml,
        Method::L2f(Transform::SigmoidGamma),
        Method::L2f(Transform::RawGamma),
        Method::L2f(Transform::Affine),
        Method::LearnedScope(Scope::Parameter),
        Method::LearnedScope(Scope::Filter),
        Method::LearnedScope(Scope::Layer),
        Method::LearnedScope(Scope::Network),
    ];

    pub fn is_l2f(self) -> bool {
        matches!(self, Method::L2f(_))
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Maml => f.write_str("maml"),
            Method::L2f(Transform::SigmoidGamma) => f.write_str("l2f"),
            Method::L2f(Transform::RawGamma) => f.write_str("l2f-raw"),
            Method::L2f(Transform::Affine) => f.write_str("l2f-affine"),
            Method::LearnedScope(s) => write!(f, "learned-{s}"),
        }
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.to_string() == s)
            .ok_or_else(|| {
                let names: Vec<String> = Method::ALL.iter().map(ToString::to_string).collect();
                format!("unknown method `{s}` (expected one of: {})", names.join(", "))
            })
    }
}

impl TryFrom<String> for Method {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> Self {
        m.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Order {
    /// inner-loop gradients treated as constants
    First,
    /// differentiate through the inner loop
    Second,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetaConfig {
    /// α
    pub inner_lr: f64,
    /// η, the Adam step size
    pub meta_lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub inner_steps_train: usize,
    pub inner_steps_eval: Vec<usize>,
    pub meta_batch_size: usize,
    pub order: Order,
    pub method: Method,
    pub iterations: u64,
    pub seed: u64,
    /// Pin the attenuator output to γ = 1 (δ = 0) and freeze φ.
    pub gamma_identity: bool,
    /// Feed the attenuator mean |gradient| per layer instead of the signed mean.
    pub absolute_grad_mean: bool,
    /// Training-log cadence in iterations (0 logs only the first and last).
    pub log_every: u64,
    /// Conflict-measurement cadence in iterations (0 disables).
    pub conflict_every: u64,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            inner_lr: 0.01,
            meta_lr: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            inner_steps_train: 1,
            inner_steps_eval: vec![1, 2, 5],
            meta_batch_size: 4,
            order: Order::Second,
            method: Method::L2f(Transform::SigmoidGamma),
            iterations: 50_000,
            seed: 0,
            gamma_identity: false,
            absolute_grad_mean: false,
            log_every: 100,
            conflict_every: 0,
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<(), MetaError> {
        let bad = |msg: String| Err(MetaError::Config(msg));
        if !(self.inner_lr > 0.0 && self.inner_lr.is_finite()) {
            return bad(format!("inner_lr must be positive, got {}", self.inner_lr));
        }
        if !(self.meta_lr > 0.0 && self.meta_lr.is_finite()) {
            return bad(format!("meta_lr must be positive, got {}", self.meta_lr));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.adam_eps > 0.0) {
            return bad(format!("adam_eps must be positive, got {}", self.adam_eps));
        }
        if self.meta_batch_size == 0 {
            return bad("meta_batch_size must be at least 1".into());
        }
        if self.inner_steps_eval.is_empty() {
            return bad("inner_steps_eval must list at least one step count".into());
        }
        if self.gamma_identity && !self.method.is_l2f() {
            return bad(format!("gamma_identity needs an l2f method, got `{}`", self.method));
        }
        if self.method == Method::LearnedScope(Scope::None) {
            return bad("learned scope `none` is plain maml".into());
        }
        Ok(())
    }

    pub fn max_eval_steps(&self) -> usize {
        self.inner_steps_eval.iter().copied().max().unwrap_or(0)
    }
}
