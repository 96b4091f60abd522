//! Built-in property suites: gradient checks, sampler ranges, determinism
//! and attenuation invariants. Run by the `selftest` command.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{primitive_sweep, Graph, Tensor};
use crate::diagnostics::{degree_of_conflict, landscape_probe};
use crate::meta::{gd_adapt, meta_loss, meta_train, MetaConfig, MetaModel, Method, Order};
use crate::models::{init_task_network, Attenuator, Head, LayeredParams, Linear, Scope, Transform, REGRESSION_SIZES};
use crate::tasks::{
    sample_sinusoid, stream_rng, Batch, DistributionSpec, Episode, SinusoidSampler, Stream, Target, TaskSampler,
    INPUT_RANGE,
};

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SelftestReport {
    pub suites: Vec<SuiteResult>,
}

impl SelftestReport {
    pub fn all_passed(&self) -> bool {
        self.suites.iter().all(|s| s.passed)
    }
}

type Outcome = Result<String, String>;

fn check(cond: bool, ok: String, fail: String) -> Outcome {
    if cond {
        Ok(ok)
    } else {
        Err(fail)
    }
}

pub fn suites() -> Vec<(&'static str, fn() -> Outcome)> {
    vec![
        ("autodiff-primitives", primitives as fn() -> Outcome),
        ("meta-gradient", meta_gradient),
        ("scalar-closed-form", scalar_closed_form),
        ("sampler-ranges", sampler_ranges),
        ("determinism", determinism),
        ("gamma-unit-interval", gamma_interval),
        ("identity-attenuation", identity_attenuation),
        ("diagnostic-oracles", diagnostic_oracles),
    ]
}

/// Runs every suite; `filter` keeps suites whose name contains it.
pub fn run(filter: Option<&str>) -> SelftestReport {
    let mut report = SelftestReport::default();
    for (name, suite) in suites() {
        if filter.is_some_and(|f| !name.contains(f)) {
            continue;
        }
        let start = Instant::now();
        let outcome = suite();
        let seconds = start.elapsed().as_secs_f64();
        let (passed, detail) = match outcome {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        report.suites.push(SuiteResult { name, passed, detail, seconds });
    }
    report
}

fn primitives() -> Outcome {
    let report = primitive_sweep(2024, 100, 10).map_err(|e| e.to_string())?;
    let worst1 = report.iter().map(|r| r.first_order).fold(0.0, f64::max);
    let worst2 = report.iter().map(|r| r.second_order).fold(0.0, f64::max);
    match report.iter().find(|r| r.first_order >= 1e-5 || r.second_order >= 1e-4) {
        Some(r) => Err(format!("{}: errors {:.2e} / {:.2e}", r.name, r.first_order, r.second_order)),
        None => Ok(format!("{} primitives, worst relative error {worst1:.1e} (1st) {worst2:.1e} (2nd)", report.len())),
    }
}

fn line_task(slope: f64, shift: f64) -> Episode {
    let batch = |xs: &[f64]| Batch {
        x: Tensor::matrix(xs.len(), 1, xs.to_vec()).expect("column"),
        target: Target::Values(
            Tensor::matrix(xs.len(), 1, xs.iter().map(|x| slope * x + shift).collect()).expect("column"),
        ),
    };
    Episode { support: batch(&[-1.0, 0.5, 2.0]), query: batch(&[-2.0, 0.0, 1.0, 3.0]) }
}

/// A 4-parameter 1-1-1 ReLU net with its hidden unit active on every input.
pub fn tiny_maml_model() -> (MetaModel, MetaConfig) {
    let cfg = MetaConfig { method: Method::Maml, inner_steps_train: 2, inner_lr: 0.1, order: Order::Second, ..Default::default() };
    let mut model = MetaModel::new(&cfg, &[1, 1, 1], Head::Regression).expect("valid sizes");
    model.net.params = LayeredParams::new(vec![
        Linear { weight: Tensor::matrix(1, 1, vec![0.7]).expect("1x1"), bias: Tensor::vector(vec![2.5]) },
        Linear { weight: Tensor::matrix(1, 1, vec![-0.4]).expect("1x1"), bias: Tensor::vector(vec![0.3]) },
    ])
    .expect("compatible layers");
    (model, cfg)
}

/// Max relative error between the meta-gradient and central differences
/// of the meta-loss over a fixed pair of line-fitting tasks.
pub fn meta_gradient_error(model: &MetaModel, cfg: &MetaConfig) -> Result<f64, String> {
    let episodes = [line_task(1.5, -0.5), line_task(-0.8, 1.0)];
    let loss_at = |values: &[f64]| -> Result<f64, String> {
        let mut m = model.clone();
        m.assign_flat(values).map_err(|e| e.to_string())?;
        let g = Graph::new();
        let vars = m.to_vars(&g, true);
        Ok(meta_loss(&m, &vars, &episodes, cfg).map_err(|e| e.to_string())?.item())
    };
    let g = Graph::new();
    let vars = model.to_vars(&g, true);
    let loss = meta_loss(model, &vars, &episodes, cfg).map_err(|e| e.to_string())?;
    let analytic: Vec<f64> = g
        .grad(loss, &vars.all(), false)
        .map_err(|e| e.to_string())?
        .iter()
        .flat_map(|t| t.value().data().to_vec())
        .collect();
    let point = model.flatten();
    let eps = 1e-6;
    let mut worst = 0.0f64;
    for i in 0..point.len() {
        let (mut up, mut down) = (point.clone(), point.clone());
        up[i] += eps;
        down[i] -= eps;
        let numeric = (loss_at(&up)? - loss_at(&down)?) / (2.0 * eps);
        worst = worst.max((analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(1e-8));
    }
    Ok(worst)
}

fn meta_gradient() -> Outcome {
    let (model, cfg) = tiny_maml_model();
    let err = meta_gradient_error(&model, &cfg)?;
    check(err < 1e-4, format!("relative error {err:.2e}"), format!("relative error {err:.2e} >= 1e-4"))
}

/// |engine − 2(θ′−q)(1−2α)| maximized over `draws` random scalar problems.
pub fn scalar_closed_form_error(draws: usize, seed: u64) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..draws {
        let (theta0, s, q): (f64, f64, f64) = (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
        let alpha: f64 = rng.gen_range(0.001..0.2);
        let g = Graph::new();
        let theta = g.param(Tensor::scalar(theta0));
        let adapted = gd_adapt(&[theta], 1, alpha, Order::Second, |p| Ok(p[0].add_const(-s)?.square()?))
            .map_err(|e| e.to_string())?;
        let query = adapted.params[0].add_const(-q).and_then(|v| v.square()).map_err(|e| e.to_string())?;
        let grad = g.grad(query, &[theta], false).map_err(|e| e.to_string())?[0].item();
        let prime = theta0 - 2.0 * alpha * (theta0 - s);
        worst = worst.max((grad - 2.0 * (prime - q) * (1.0 - 2.0 * alpha)).abs());
    }
    Ok(worst)
}

fn scalar_closed_form() -> Outcome {
    let err = scalar_closed_form_error(100, 11)?;
    check(err <= 1e-10, format!("max deviation {err:.1e}"), format!("max deviation {err:.1e} > 1e-10"))
}

fn sampler_ranges() -> Outcome {
    let specs = [
        ("standard", DistributionSpec::standard(5)),
        ("nonoverlap-train", DistributionSpec::nonoverlap_train(5)),
        ("nonoverlap-eval", DistributionSpec::nonoverlap_eval(5)),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (name, spec) in specs {
        for _ in 0..100_000 {
            let t = sample_sinusoid(&spec, &mut rng).map_err(|e| e.to_string())?;
            let inside = spec.amplitude.contains(t.amplitude) && spec.frequency.contains(t.frequency) && spec.phase.contains(t.phase);
            let points_ok = t.support.iter().chain(&t.query).all(|&(x, y)| {
                (INPUT_RANGE.0..=INPUT_RANGE.1).contains(&x) && (y - t.eval(x)).abs() < 1e-12
            });
            if !inside || !points_ok {
                return Err(format!("{name}: out-of-range task {t:?}"));
            }
        }
    }
    Ok("3 specs x 100000 draws inside their intervals".into())
}

fn determinism() -> Outcome {
    let a = init_task_network(7, &REGRESSION_SIZES, Head::Regression).map_err(|e| e.to_string())?;
    let b = init_task_network(7, &REGRESSION_SIZES, Head::Regression).map_err(|e| e.to_string())?;
    if a != b {
        return Err("initialization differs between identical seeds".into());
    }
    let sampler = SinusoidSampler::new(DistributionSpec::standard(5), 3).map_err(|e| e.to_string())?;
    if sampler.sample(12, 1) != sampler.sample(12, 1) {
        return Err("sampler differs between identical indices".into());
    }
    let cfg = MetaConfig { iterations: 5, ..Default::default() };
    let train = || -> Result<Vec<u64>, String> {
        let mut m = MetaModel::new(&cfg, &REGRESSION_SIZES, Head::Regression).map_err(|e| e.to_string())?;
        meta_train(&cfg, &mut m, &sampler).map_err(|e| e.to_string())?;
        Ok(m.flatten().iter().map(|v| v.to_bits()).collect())
    };
    check(train()? == train()?, "init, sampling and training bit-identical".into(), "training not reproducible".into())
}

fn gamma_interval() -> Outcome {
    let params = LayeredParams::zeros(&REGRESSION_SIZES).map_err(|e| e.to_string())?;
    let mut rng = stream_rng(0, Stream::Diagnostics, &[1]);
    for _ in 0..1000 {
        let mut att = Attenuator::new(&params, Scope::Layer, Transform::SigmoidGamma, &mut rng).map_err(|e| e.to_string())?;
        let mut flat = att.params.flatten();
        flat.iter_mut().for_each(|v| *v += rng.gen_range(-1.0..1.0));
        att.params.assign_flat(&flat).map_err(|e| e.to_string())?;
        let g = Graph::new();
        let phi = att.params.to_vars(&g, false);
        let input: Vec<f64> = (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let m = att.generate_gamma(&phi, g.constant(Tensor::vector(input))).map_err(|e| e.to_string())?;
        if !m.gamma.value().data().iter().all(|&v| v > 0.0 && v < 1.0) {
            return Err(format!("gamma outside (0, 1): {:?}", m.gamma.value().data()));
        }
    }
    Ok("1000 random generators, every gamma in (0, 1)".into())
}

/// Largest per-parameter gap between MAML and γ ≡ 1 L2F after
/// `iterations` outer steps on the same tasks.
pub fn identity_trajectory_gap(iterations: u64, seed: u64) -> Result<f64, String> {
    let sampler = SinusoidSampler::new(DistributionSpec::standard(5), seed).map_err(|e| e.to_string())?;
    let maml_cfg = MetaConfig { method: Method::Maml, iterations: 1, seed, ..Default::default() };
    let l2f_cfg = MetaConfig { method: Method::L2f(Transform::SigmoidGamma), gamma_identity: true, ..maml_cfg.clone() };
    let mut maml = MetaModel::new(&maml_cfg, &REGRESSION_SIZES, Head::Regression).map_err(|e| e.to_string())?;
    let mut l2f = MetaModel::new(&l2f_cfg, &REGRESSION_SIZES, Head::Regression).map_err(|e| e.to_string())?;
    // one iteration at a time, so the gap is checked along the whole trajectory
    let mut worst = 0.0f64;
    for it in 0..iterations {
        let shifted = Shifted { inner: &sampler, offset: it };
        meta_train(&maml_cfg, &mut maml, &shifted).map_err(|e| e.to_string())?;
        meta_train(&l2f_cfg, &mut l2f, &shifted).map_err(|e| e.to_string())?;
        let gap = maml.net.params.flatten().iter().zip(l2f.net.params.flatten()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst = worst.max(gap);
    }
    Ok(worst)
}

struct Shifted<'a> {
    inner: &'a SinusoidSampler,
    offset: u64,
}

impl TaskSampler for Shifted<'_> {
    fn sample(&self, iteration: u64, slot: usize) -> Episode {
        self.inner.sample(iteration + self.offset, slot)
    }
}

fn identity_attenuation() -> Outcome {
    let gap = identity_trajectory_gap(10, 0)?;
    check(gap <= 1e-10, format!("10 iterations, max gap {gap:.1e}"), format!("max gap {gap:.1e} > 1e-10"))
}

fn diagnostic_oracles() -> Outcome {
    let same = degree_of_conflict(&vec![vec![0.4, -2.0, 1.0]; 4]).map_err(|e| e.to_string())?.mean;
    let orth = degree_of_conflict(&[vec![1.0, 0.0], vec![0.0, 1.0]]).map_err(|e| e.to_string())?.mean;
    if same.abs() > 1e-9 || (orth - std::f64::consts::FRAC_PI_4).abs() > 1e-9 {
        return Err(format!("conflict oracles: identical {same:e}, orthogonal {orth}"));
    }
    let theta = [1.0, -0.5];
    let g = [2.0, -1.0];
    let rec = landscape_probe(|p| Ok((p[0] * p[0] + p[1] * p[1], vec![2.0 * p[0], 2.0 * p[1]])), &theta, &g, &[0.01, 0.1]);
    check(
        (rec.effective_beta - 2.0).abs() < 1e-9,
        "conflict and landscape oracles hold".into(),
        format!("effective beta {} != 2", rec.effective_beta),
    )
}
