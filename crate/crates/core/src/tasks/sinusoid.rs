use std::f64::consts::{FRAC_PI_2, PI};
use std::io::{self, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{stream_rng, Batch, Episode, Stream, Target, TaskError, TaskSampler};
use crate::autodiff::Tensor;

/// Inputs are drawn uniformly from this closed range.
pub const INPUT_RANGE: (f64, f64) = (-5.0, 5.0);

/// A closed interval `[lo, hi]`; serialized as a two-element array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl From<[f64; 2]> for Interval {
    fn from([lo, hi]: [f64; 2]) -> Self {
        Self { lo, hi }
    }
}

impl From<Interval> for [f64; 2] {
    fn from(i: Interval) -> Self {
        [i.lo, i.hi]
    }
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    fn validate(&self, name: &'static str) -> Result<(), TaskError> {
        if self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi {
            Ok(())
        } else {
            Err(TaskError::EmptyInterval { name, lo: self.lo, hi: self.hi })
        }
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.gen_range(self.lo..=self.hi)
        }
    }
}

/// Ranges for amplitude, frequency and phase plus shot and query counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistributionSpec {
    pub amplitude: Interval,
    pub frequency: Interval,
    pub phase: Interval,
    /// support points per task
    pub k: usize,
    /// query points per task
    pub m: usize,
}

impl DistributionSpec {
    /// A ∈ [0.1, 5.0], ω ∈ [0.8, 1.2], b ∈ [0, π]; query size equals `k`.
    pub fn standard(k: usize) -> Self {
        Self {
            amplitude: Interval::new(0.1, 5.0),
            frequency: Interval::new(0.8, 1.2),
            phase: Interval::new(0.0, PI),
            k,
            m: k,
        }
    }

    /// Training side of the non-overlapped split.
    pub fn nonoverlap_train(k: usize) -> Self {
        Self {
            amplitude: Interval::new(0.1, 3.0),
            frequency: Interval::new(0.8, 1.0),
            phase: Interval::new(0.0, FRAC_PI_2),
            k,
            m: k,
        }
    }

    /// Evaluation side of the non-overlapped split. Shares only boundary
    /// points with [`Self::nonoverlap_train`].
    pub fn nonoverlap_eval(k: usize) -> Self {
        Self {
            amplitude: Interval::new(3.0, 5.0),
            frequency: Interval::new(1.0, 1.2),
            phase: Interval::new(FRAC_PI_2, PI),
            k,
            m: k,
        }
    }

    pub fn validate(&self) -> Result<(), TaskError> {
        self.amplitude.validate("amplitude")?;
        self.frequency.validate("frequency")?;
        self.phase.validate("phase")?;
        if self.k == 0 || self.m == 0 {
            return Err(TaskError::Invalid(format!("k and m must be at least 1 (k = {}, m = {})", self.k, self.m)));
        }
        Ok(())
    }
}

/// One curve `y = A·sin(ω·x + b)` with its support and query points.
#[derive(Debug, Clone, PartialEq)]
pub struct SinusoidTask {
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
    pub support: Vec<(f64, f64)>,
    pub query: Vec<(f64, f64)>,
}

impl SinusoidTask {
    pub fn eval(&self, x: f64) -> f64 {
        self.amplitude * (self.frequency * x + self.phase).sin()
    }

    /// Same curve, fresh points.
    pub fn with_points(amplitude: f64, frequency: f64, phase: f64, k: usize, m: usize, rng: &mut impl Rng) -> Self {
        let y = |x: f64| amplitude * (frequency * x + phase).sin();
        let mut draw = |_| {
            let x = rng.gen_range(INPUT_RANGE.0..=INPUT_RANGE.1);
            (x, y(x))
        };
        let support = (0..k).map(&mut draw).collect();
        let query = (0..m).map(&mut draw).collect();
        Self { amplitude, frequency, phase, support, query }
    }

    pub fn to_episode(&self) -> Episode {
        Episode { support: points_batch(&self.support), query: points_batch(&self.query) }
    }
}

fn points_batch(points: &[(f64, f64)]) -> Batch {
    let n = points.len();
    let x = Tensor::matrix(n, 1, points.iter().map(|p| p.0).collect()).expect("column");
    let y = Tensor::matrix(n, 1, points.iter().map(|p| p.1).collect()).expect("column");
    Batch { x, target: Target::Values(y) }
}

/// Draws A, ω, b uniformly from their intervals and `k + m` inputs uniformly
/// from [`INPUT_RANGE`].
pub fn sample_sinusoid(spec: &DistributionSpec, rng: &mut impl Rng) -> Result<SinusoidTask, TaskError> {
    spec.validate()?;
    let amplitude = spec.amplitude.sample(rng);
    let frequency = spec.frequency.sample(rng);
    let phase = spec.phase.sample(rng);
    Ok(SinusoidTask::with_points(amplitude, frequency, phase, spec.k, spec.m, rng))
}

/// Training-task source for sinusoid regression.
#[derive(Debug, Clone)]
pub struct SinusoidSampler {
    spec: DistributionSpec,
    seed: u64,
}

impl SinusoidSampler {
    pub fn new(spec: DistributionSpec, seed: u64) -> Result<Self, TaskError> {
        spec.validate()?;
        Ok(Self { spec, seed })
    }

    pub fn task(&self, iteration: u64, slot: usize) -> SinusoidTask {
        let mut rng = stream_rng(self.seed, Stream::TaskSampling, &[iteration, slot as u64]);
        sample_sinusoid(&self.spec, &mut rng).expect("spec validated on construction")
    }
}

impl TaskSampler for SinusoidSampler {
    fn sample(&self, iteration: u64, slot: usize) -> Episode {
        self.task(iteration, slot).to_episode()
    }
}

/// Evaluation protocol: `curves` random curves, each re-sampled `repeats`
/// times with fresh support points and a fresh `query`-point sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalProtocol {
    pub curves: usize,
    pub repeats: usize,
    pub query: usize,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        Self { curves: 100, repeats: 100, query: 100 }
    }
}

impl EvalProtocol {
    pub fn total(&self) -> usize {
        self.curves * self.repeats
    }
}

/// Stream of `(curve, repeat, task)` triples. Curve parameters depend only
/// on `(seed, curve)`, points only on `(seed, curve, repeat)`.
pub fn eval_protocol(
    spec: &DistributionSpec,
    protocol: &EvalProtocol,
    seed: u64,
) -> Result<impl Iterator<Item = (usize, usize, SinusoidTask)>, TaskError> {
    spec.validate()?;
    if protocol.query == 0 {
        return Err(TaskError::Invalid("evaluation query size must be at least 1".into()));
    }
    let spec = *spec;
    let protocol = *protocol;
    Ok((0..protocol.curves).flat_map(move |c| {
        let mut curve_rng = stream_rng(seed, Stream::EvalCurves, &[c as u64]);
        let a = spec.amplitude.sample(&mut curve_rng);
        let w = spec.frequency.sample(&mut curve_rng);
        let b = spec.phase.sample(&mut curve_rng);
        (0..protocol.repeats).map(move |r| {
            let mut rng = stream_rng(seed, Stream::EvalPoints, &[c as u64, r as u64]);
            (c, r, SinusoidTask::with_points(a, w, b, spec.k, protocol.query, &mut rng))
        })
    }))
}

/// CSV dump with header `task_id,amplitude,frequency,phase,set,x,y`.
pub fn write_task_dump<W: Write>(tasks: &[SinusoidTask], mut out: W) -> io::Result<()> {
    writeln!(out, "task_id,amplitude,frequency,phase,set,x,y")?;
    for (id, t) in tasks.iter().enumerate() {
        for (set, points) in [("support", &t.support), ("query", &t.query)] {
            for (x, y) in points.iter() {
                writeln!(out, "{id},{:e},{:e},{:e},{set},{x:e},{y:e}", t.amplitude, t.frequency, t.phase)?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn degenerate_spec_gives_zero_at_origin() {
        let spec = DistributionSpec {
            amplitude: Interval::new(1.0, 1.0),
            frequency: Interval::new(1.0, 1.0),
            phase: Interval::new(0.0, 0.0),
            k: 1,
            m: 1,
        };
        let task = sample_sinusoid(&spec, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(task.eval(0.0), 0.0);
    }

    #[test]
    fn phase_shift_of_half_pi() {
        let task = SinusoidTask { amplitude: 2.0, frequency: 1.0, phase: FRAC_PI_2, support: vec![], query: vec![] };
        assert_eq!(task.eval(0.0), 2.0);
    }

    #[test]
    fn points_satisfy_the_generator() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let t = sample_sinusoid(&DistributionSpec::standard(10), &mut rng).unwrap();
            for &(x, y) in t.support.iter().chain(&t.query) {
                assert!((-5.0..=5.0).contains(&x));
                assert!((y - t.amplitude * (t.frequency * x + t.phase).sin()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn empty_range_is_rejected() {
        let mut spec = DistributionSpec::standard(5);
        spec.frequency = Interval::new(1.2, 0.8);
        let err = sample_sinusoid(&spec, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
        assert!(matches!(err, TaskError::EmptyInterval { name: "frequency", .. }));
        let mut spec = DistributionSpec::standard(5);
        spec.k = 0;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn protocol_counts_and_determinism() {
        let spec = DistributionSpec::standard(5);
        let protocol = EvalProtocol::default();
        let items: Vec<_> = eval_protocol(&spec, &protocol, 9).unwrap().collect();
        assert_eq!(items.len(), 10_000);
        let again: Vec<_> = eval_protocol(&spec, &protocol, 9).unwrap().take(300).collect();
        assert_eq!(&items[..300], &again[..]);
        let (c0, r0, a) = &items[0];
        let (c1, r1, b) = &items[1];
        assert_eq!((c0, r0, c1, r1), (&0, &0, &0, &1));
        assert_eq!((a.amplitude, a.frequency, a.phase), (b.amplitude, b.frequency, b.phase));
        assert_ne!(a.support, b.support);
        assert_eq!(a.support.len(), 5);
        assert_eq!(a.query.len(), 100);
    }

    #[test]
    fn nonoverlapped_specs_meet_only_at_boundaries() {
        let (tr, ev) = (DistributionSpec::nonoverlap_train(5), DistributionSpec::nonoverlap_eval(5));
        for (a, b) in [(tr.amplitude, ev.amplitude), (tr.frequency, ev.frequency), (tr.phase, ev.phase)] {
            assert_eq!(a.hi, b.lo);
        }
    }

    #[test]
    fn task_dump_has_one_row_per_point() {
        let t = sample_sinusoid(&DistributionSpec::standard(3), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut buf = Vec::new();
        write_task_dump(&[t], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 6);
        assert!(text.lines().nth(1).unwrap().starts_with("0,"));
    }
}
