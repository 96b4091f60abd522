//! Experiment configuration: shipped defaults, an optional TOML file and
//! command-line overrides, applied in that order.

use std::fmt;
use std::path::{Path, PathBuf};

use metaforget::diagnostics::DEFAULT_PROBE_MULTIPLIERS;
use metaforget::meta::{MetaConfig, Method, Order};
use metaforget::models::{Head, REGRESSION_SIZES};
use metaforget::tasks::{ClassificationSpec, DistributionSpec, EvalProtocol};
use serde::{Deserialize, Serialize};

/// Bad flags, an unreadable config file or an invalid field: exit code 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Sinusoid,
    Classification,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Distribution {
    Standard,
    /// disjoint train / eval parameter ranges
    Nonoverlap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskConfig {
    pub family: Family,
    pub distribution: Distribution,
    /// support points (shots per class for classification)
    pub k: usize,
    /// query points per training task (per class for classification); defaults to k
    pub m: Option<usize>,
    pub classes: usize,
    pub dim: usize,
    pub sigma: f64,
    /// hidden widths of the task network
    pub hidden: Vec<usize>,
}

impl Default for TaskConfig {
    fn default() -> Self {
        let c = ClassificationSpec::default();
        Self {
            family: Family::Sinusoid,
            distribution: Distribution::Standard,
            k: 5,
            m: None,
            classes: c.classes,
            dim: c.dim,
            sigma: c.sigma,
            hidden: REGRESSION_SIZES[1..REGRESSION_SIZES.len() - 1].to_vec(),
        }
    }
}

impl TaskConfig {
    pub fn query_size(&self) -> usize {
        self.m.unwrap_or(self.k)
    }

    pub fn head(&self) -> Head {
        match self.family {
            Family::Sinusoid => Head::Regression,
            Family::Classification => Head::Classification,
        }
    }

    pub fn sizes(&self) -> Vec<usize> {
        let (input, output) = match self.family {
            Family::Sinusoid => (1, 1),
            Family::Classification => (self.dim, self.classes),
        };
        let mut s = vec![input];
        s.extend(&self.hidden);
        s.push(output);
        s
    }

    pub fn train_spec(&self) -> DistributionSpec {
        let base = match self.distribution {
            Distribution::Standard => DistributionSpec::standard(self.k),
            Distribution::Nonoverlap => DistributionSpec::nonoverlap_train(self.k),
        };
        DistributionSpec { m: self.query_size(), ..base }
    }

    pub fn eval_spec(&self) -> DistributionSpec {
        match self.distribution {
            Distribution::Standard => DistributionSpec::standard(self.k),
            Distribution::Nonoverlap => DistributionSpec::nonoverlap_eval(self.k),
        }
    }

    pub fn classification(&self) -> ClassificationSpec {
        ClassificationSpec { classes: self.classes, shots: self.k, queries: self.query_size(), dim: self.dim, sigma: self.sigma }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// sinusoid: distinct curves
    pub curves: usize,
    /// sinusoid: support re-draws per curve
    pub repeats: usize,
    /// sinusoid: query points per evaluation task
    pub query: usize,
    /// classification: number of evaluation tasks
    pub tasks: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        let p = EvalProtocol::default();
        Self { curves: p.curves, repeats: p.repeats, query: p.query, tasks: 1000 }
    }
}

impl EvalConfig {
    pub fn protocol(&self) -> EvalProtocol {
        EvalProtocol { curves: self.curves, repeats: self.repeats, query: self.query }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsConfig {
    /// tasks drawn for conflict, landscape and γ-log diagnostics
    pub tasks: usize,
    /// also measure conflict among query examples of each task
    pub within_task: bool,
    pub landscape_steps: usize,
    /// probe step sizes as multiples of α
    pub probe_multipliers: Vec<f64>,
    pub sweep_layers: Vec<usize>,
    pub sweep_gammas: Vec<f64>,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            tasks: 50,
            within_task: false,
            landscape_steps: 5,
            probe_multipliers: DEFAULT_PROBE_MULTIPLIERS.to_vec(),
            sweep_layers: vec![0, 1, 2],
            sweep_gammas: vec![0.0, 0.25, 0.5, 0.75, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub out_dir: PathBuf,
    /// input checkpoint for eval / diagnose / sweep
    pub checkpoint: Option<PathBuf>,
    pub meta: MetaConfig,
    pub task: TaskConfig,
    pub eval: EvalConfig,
    pub diagnostics: DiagnosticsConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("out"),
            checkpoint: None,
            meta: MetaConfig::default(),
            task: TaskConfig::default(),
            eval: EvalConfig::default(),
            diagnostics: DiagnosticsConfig::default(),
        }
    }
}

/// Command-line values; `None` / `false` leaves the lower layer in place.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// TOML config file (defaults < file < flags)
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Output directory; nothing is written outside it
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// maml, l2f, l2f-raw, l2f-affine, learned-{parameter,filter,layer,network}
    #[arg(long)]
    pub method: Option<Method>,
    #[arg(long)]
    pub iterations: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Inner-loop step size α
    #[arg(long)]
    pub inner_lr: Option<f64>,
    /// Adam step size η
    #[arg(long)]
    pub meta_lr: Option<f64>,
    #[arg(long)]
    pub inner_steps_train: Option<usize>,
    /// Comma-separated eval step counts
    #[arg(long, value_delimiter = ',')]
    pub eval_steps: Option<Vec<usize>>,
    #[arg(long)]
    pub meta_batch_size: Option<usize>,
    #[arg(long, value_parser = parse_order)]
    pub order: Option<Order>,
    /// Pin γ to 1 (l2f methods only)
    #[arg(long)]
    pub gamma_identity: bool,
    /// Feed the attenuator mean |gradient| per layer
    #[arg(long)]
    pub absolute_grad_mean: bool,
    #[arg(long)]
    pub log_every: Option<u64>,
    /// Measure gradient conflict every N training iterations
    #[arg(long)]
    pub conflict_every: Option<u64>,
    /// sinusoid or classification
    #[arg(long, value_parser = parse_family)]
    pub task: Option<Family>,
    /// standard or nonoverlap
    #[arg(long, value_parser = parse_distribution)]
    pub distribution: Option<Distribution>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub curves: Option<usize>,
    #[arg(long)]
    pub repeats: Option<usize>,
    #[arg(long)]
    pub query: Option<usize>,
    /// Classification evaluation tasks
    #[arg(long)]
    pub eval_tasks: Option<usize>,
}

fn kebab<T: for<'de> Deserialize<'de>>(s: &str) -> Result<T, String> {
    T::deserialize(serde::de::value::StrDeserializer::<serde::de::value::Error>::new(s)).map_err(|e| e.to_string())
}

fn parse_order(s: &str) -> Result<Order, String> {
    kebab(s)
}

fn parse_family(s: &str) -> Result<Family, String> {
    kebab(s)
}

fn parse_distribution(s: &str) -> Result<Distribution, String> {
    kebab(s)
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        toml::from_str(text).map_err(|e| usage(format!("config: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    /// Defaults, then `--config`, then flags; validated.
    pub fn resolve(o: &Overrides, checkpoint: Option<PathBuf>) -> anyhow::Result<Self> {
        let mut c = match &o.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
                Self::from_toml(&text)?
            }
            None => Self::default(),
        };
        let m = &mut c.meta;
        macro_rules! set {
            ($dst:expr, $src:expr) => {
                if let Some(v) = $src.clone() {
                    $dst = v;
                }
            };
        }
        set!(c.out_dir, o.out);
        set!(m.method, o.method);
        set!(m.iterations, o.iterations);
        set!(m.seed, o.seed);
        set!(m.inner_lr, o.inner_lr);
        set!(m.meta_lr, o.meta_lr);
        set!(m.inner_steps_train, o.inner_steps_train);
        set!(m.inner_steps_eval, o.eval_steps);
        set!(m.meta_batch_size, o.meta_batch_size);
        set!(m.order, o.order);
        set!(m.log_every, o.log_every);
        set!(m.conflict_every, o.conflict_every);
        m.gamma_identity |= o.gamma_identity;
        m.absolute_grad_mean |= o.absolute_grad_mean;
        set!(c.task.family, o.task);
        set!(c.task.distribution, o.distribution);
        set!(c.task.k, o.k);
        if o.m.is_some() {
            c.task.m = o.m;
        }
        set!(c.eval.curves, o.curves);
        set!(c.eval.repeats, o.repeats);
        set!(c.eval.query, o.query);
        set!(c.eval.tasks, o.eval_tasks);
        if checkpoint.is_some() {
            c.checkpoint = checkpoint;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.meta.validate().map_err(|e| usage(format!("meta: {e}")))?;
        let t = &self.task;
        if t.k == 0 || t.query_size() == 0 {
            return Err(usage("task: k and m must be at least 1"));
        }
        if t.hidden.contains(&0) {
            return Err(usage("task.hidden: widths must be at least 1"));
        }
        match t.family {
            Family::Sinusoid => {
                t.train_spec().validate().map_err(|e| usage(format!("task: {e}")))?;
            }
            Family::Classification => {
                if t.distribution != Distribution::Standard {
                    return Err(usage("task.distribution: only `standard` applies to classification"));
                }
                t.classification().validate().map_err(|e| usage(format!("task: {e}")))?;
            }
        }
        if self.eval.curves == 0 || self.eval.repeats == 0 || self.eval.query == 0 || self.eval.tasks == 0 {
            return Err(usage("eval: curves, repeats, query and tasks must be at least 1"));
        }
        let d = &self.diagnostics;
        if d.tasks < 2 {
            return Err(usage("diagnostics.tasks: conflict needs at least 2 tasks"));
        }
        if d.probe_multipliers.is_empty() || d.probe_multipliers.iter().any(|p| !(*p > 0.0)) {
            return Err(usage("diagnostics.probe_multipliers: need positive multipliers"));
        }
        Ok(())
    }

    /// Writes the resolved config as `<name>` inside the output directory.
    pub fn archive(&self, name: &str) -> anyhow::Result<PathBuf> {
        let path = self.out_path(name);
        std::fs::write(&path, self.to_toml()).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        Ok(path)
    }

    pub fn out_path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    pub fn checkpoint_path(&self) -> anyhow::Result<&Path> {
        self.checkpoint.as_deref().ok_or_else(|| usage("no checkpoint given (use --checkpoint or `checkpoint = ...`)"))
    }
}
