use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{stream_rng, Batch, Episode, Stream, Target, TaskError, TaskSampler};
use crate::autodiff::Tensor;

/// N-way k-shot Gaussian clusters in `R^dim`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationSpec {
    pub classes: usize,
    pub shots: usize,
    pub queries: usize,
    pub dim: usize,
    pub sigma: f64,
}

impl Default for ClassificationSpec {
    fn default() -> Self {
        Self { classes: 5, shots: 5, queries: 5, dim: 8, sigma: 0.05 }
    }
}

impl ClassificationSpec {
    pub fn validate(&self) -> Result<(), TaskError> {
        if self.classes < 2 {
            return Err(TaskError::Invalid(format!("need at least 2 classes, got {}", self.classes)));
        }
        if self.shots == 0 || self.queries == 0 || self.dim == 0 {
            return Err(TaskError::Invalid("shots, queries and dim must be at least 1".into()));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(TaskError::Invalid(format!("sigma must be finite and non-negative, got {}", self.sigma)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticClassTask {
    pub centroids: Vec<Vec<f64>>,
    /// class-major: all points of class 0, then class 1, ...
    pub support: Vec<(Vec<f64>, usize)>,
    pub query: Vec<(Vec<f64>, usize)>,
}

impl SyntheticClassTask {
    pub fn to_episode(&self) -> Episode {
        Episode { support: labeled_batch(&self.support), query: labeled_batch(&self.query) }
    }
}

fn labeled_batch(points: &[(Vec<f64>, usize)]) -> Batch {
    let d = points.first().map_or(0, |p| p.0.len());
    let x = Tensor::matrix(points.len(), d, points.iter().flat_map(|p| p.0.iter().copied()).collect())
        .expect("rows share a dimension");
    Batch { x, target: Target::Classes(points.iter().map(|p| p.1).collect()) }
}

/// Fresh centroids uniform in `[-1, 1]^dim`; points are centroid plus
/// isotropic Gaussian noise with standard deviation `sigma`.
pub fn sample_classification(spec: &ClassificationSpec, rng: &mut impl Rng) -> Result<SyntheticClassTask, TaskError> {
    spec.validate()?;
    let centroids: Vec<Vec<f64>> =
        (0..spec.classes).map(|_| (0..spec.dim).map(|_| rng.gen_range(-1.0..=1.0)).collect()).collect();
    let noise = Normal::new(0.0, spec.sigma).map_err(|e| TaskError::Invalid(e.to_string()))?;
    let draw = |count: usize, rng: &mut _| {
        let mut out = Vec::with_capacity(count * spec.classes);
        for (label, c) in centroids.iter().enumerate() {
            for _ in 0..count {
                out.push((c.iter().map(|&v| v + noise.sample(rng)).collect(), label));
            }
        }
        out
    };
    let support = draw(spec.shots, rng);
    let query = draw(spec.queries, rng);
    Ok(SyntheticClassTask { centroids, support, query })
}

#[derive(Debug, Clone)]
pub struct ClassificationSampler {
    spec: ClassificationSpec,
    seed: u64,
}

impl ClassificationSampler {
    pub fn new(spec: ClassificationSpec, seed: u64) -> Result<Self, TaskError> {
        spec.validate()?;
        Ok(Self { spec, seed })
    }

    pub fn task(&self, iteration: u64, slot: usize) -> SyntheticClassTask {
        let mut rng = stream_rng(self.seed, Stream::TaskSampling, &[iteration, slot as u64]);
        sample_classification(&self.spec, &mut rng).expect("spec validated on construction")
    }
}

impl TaskSampler for ClassificationSampler {
    fn sample(&self, iteration: u64, slot: usize) -> Episode {
        self.task(iteration, slot).to_episode()
    }
}
