//! The subcommands. Each writes only into the configured output directory.

use std::fmt::Write as _;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use metaforget::diagnostics::{
    average_by_step, gamma_rows, gamma_sweep, inner_loop_landscape, per_layer_conflict, per_task_conflict,
    sweep_csv, within_task_conflict, ConflictRecord, GammaLog, LandscapeRecord,
};
use metaforget::meta::{adaptation_start, evaluate, meta_train_with, EvalTable, MetaConfig, MetaError, MetaModel};
use metaforget::models::Checkpoint;
use metaforget::selftest;
use metaforget::tasks::{
    derive_seed, eval_protocol, ClassificationSampler, Episode, SinusoidSampler, Stream, TaskSampler,
};

use crate::config::{ExperimentConfig, Family};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Diagnostic {
    Conflict,
    Landscape,
    GammaLog,
}

fn prepare_out(cfg: &ExperimentConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.out_dir).with_context(|| format!("creating {}", cfg.out_dir.display()))
}

fn write(cfg: &ExperimentConfig, name: &str, body: &str) -> Result<()> {
    let path = cfg.out_path(name);
    std::fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn train_sampler(cfg: &ExperimentConfig) -> Result<Box<dyn TaskSampler>> {
    let seed = cfg.meta.seed;
    Ok(match cfg.task.family {
        Family::Sinusoid => Box::new(SinusoidSampler::new(cfg.task.train_spec(), seed)?),
        Family::Classification => Box::new(ClassificationSampler::new(cfg.task.classification(), seed)?),
    })
}

/// Evaluation set: the curve × repeat protocol for sinusoids, or
/// `eval.tasks` fresh tasks for classification.
pub fn eval_episodes(cfg: &ExperimentConfig) -> Result<Vec<Episode>> {
    let seed = cfg.meta.seed;
    Ok(match cfg.task.family {
        Family::Sinusoid => {
            eval_protocol(&cfg.task.eval_spec(), &cfg.eval.protocol(), seed)?.map(|(_, _, t)| t.to_episode()).collect()
        }
        Family::Classification => {
            let s = ClassificationSampler::new(cfg.task.classification(), derive_seed(seed, Stream::EvalCurves, &[]))?;
            (0..cfg.eval.tasks).map(|i| s.sample(i as u64, 0)).collect()
        }
    })
}

/// Held-out tasks for diagnostics, on their own stream.
fn diagnostic_episodes(cfg: &ExperimentConfig) -> Result<Vec<Episode>> {
    let seed = derive_seed(cfg.meta.seed, Stream::Diagnostics, &[]);
    let s: Box<dyn TaskSampler> = match cfg.task.family {
        Family::Sinusoid => Box::new(SinusoidSampler::new(cfg.task.eval_spec(), seed)?),
        Family::Classification => Box::new(ClassificationSampler::new(cfg.task.classification(), seed)?),
    };
    Ok((0..cfg.diagnostics.tasks).map(|i| s.sample(i as u64, 0)).collect())
}

fn conflict_csv(records: &[ConflictRecord]) -> String {
    let mut out = format!("{}\n", ConflictRecord::CSV_HEADER);
    for r in records {
        out.push_str(&r.csv_line());
        out.push('\n');
    }
    out
}

/// Loads a checkpoint, checks it against the task, and returns it with the
/// meta config adjusted to the stored method.
fn load_model(cfg: &ExperimentConfig) -> Result<(MetaModel, MetaConfig)> {
    let path = cfg.checkpoint_path()?;
    let ck = Checkpoint::load(path)?;
    let model = MetaModel::from_checkpoint(&ck).with_context(|| format!("loading {}", path.display()))?;
    let expected = cfg.task.sizes();
    let found = model.net.params.sizes();
    if found != expected || model.net.head != cfg.task.head() {
        bail!(
            "checkpoint architecture {found:?} ({:?} head) does not match the task: expected {expected:?} ({:?} head)",
            model.net.head,
            cfg.task.head()
        );
    }
    if model.method != cfg.meta.method {
        eprintln!("note: evaluating as `{}` (from the checkpoint), not `{}`", model.method, cfg.meta.method);
    }
    let meta = MetaConfig { method: model.method, gamma_identity: false, ..cfg.meta.clone() };
    Ok((model, meta))
}

pub fn run_train(cfg: &ExperimentConfig) -> Result<()> {
    prepare_out(cfg)?;
    cfg.archive("train-config.toml")?;
    let meta = &cfg.meta;
    let mut model = MetaModel::new(meta, &cfg.task.sizes(), cfg.task.head())?;
    let sampler = train_sampler(cfg)?;
    let mut conflicts = Vec::new();
    let mut gammas = GammaLog::default();
    let start = Instant::now();
    let mut hook = |ev: &metaforget::meta::IterationEvent<'_>| -> Result<(), MetaError> {
        if meta.conflict_every > 0 && ev.iteration % meta.conflict_every == 0 {
            let measured = per_layer_conflict(ev.model, meta, ev.episodes, ev.iteration).and_then(|mut layers| {
                layers.push(per_task_conflict(ev.model, meta, ev.episodes, ev.iteration)?);
                Ok(layers)
            });
            match measured {
                Ok(records) => conflicts.extend(records),
                Err(e) => eprintln!("warning: conflict at iteration {}: {e}", ev.iteration),
            }
        }
        let logged = if meta.log_every == 0 { ev.iteration == 0 } else { ev.iteration % meta.log_every == 0 };
        if logged || ev.iteration + 1 == meta.iterations {
            gammas.extend(gamma_rows(ev.model, "train", ev.iteration, 0, ev.gammas));
            eprintln!("iteration {:>6}  outer loss {:.5}  ({:.1}s)", ev.iteration, ev.outer_loss, start.elapsed().as_secs_f64());
        }
        Ok(())
    };
    let result = meta_train_with(meta, &mut model, sampler.as_ref(), &mut hook);
    if !conflicts.is_empty() {
        write(cfg, "conflict_train.csv", &conflict_csv(&conflicts))?;
    }
    if !gammas.rows.is_empty() {
        write(cfg, "gamma_train.csv", &gammas.to_csv())?;
    }
    match result {
        Ok(log) => {
            write(cfg, "train.csv", &log.to_csv())?;
            let mut ck = model.to_checkpoint();
            ck.set_meta("iterations", meta.iterations);
            ck.set_meta("seed", meta.seed);
            let path = cfg.out_path("checkpoint.txt");
            ck.save(&path)?;
            eprintln!("wrote {}", path.display());
            Ok(())
        }
        Err(MetaError::Diverged { iteration, last_state }) => {
            let mut ck = last_state.to_checkpoint();
            ck.set_meta("iterations", iteration);
            ck.set_meta("seed", meta.seed);
            let path = cfg.out_path("checkpoint.partial.txt");
            ck.save(&path)?;
            bail!("training diverged at iteration {iteration}; last finite state saved to {}", path.display())
        }
        Err(e) => Err(e.into()),
    }
}

pub fn format_table(table: &EvalTable) -> String {
    let mut out = format!("{:>6}  {:>12}  {:>10}  {:>7}\n", "steps", table.metric.name(), "95% CI", "count");
    for (i, s) in table.steps.iter().enumerate() {
        let _ = writeln!(out, "{s:>6}  {:>12.5}  {:>10.5}  {:>7}", table.mean[i], table.ci95[i], table.count);
    }
    out
}

pub fn run_eval(cfg: &ExperimentConfig) -> Result<EvalTable> {
    let (model, meta) = load_model(cfg)?;
    prepare_out(cfg)?;
    cfg.archive("eval-config.toml")?;
    let episodes = eval_episodes(cfg)?;
    let table = evaluate(&model, &meta, episodes)?;
    write(cfg, "eval.csv", &table.to_csv())?;
    print!("{}", format_table(&table));
    Ok(table)
}

pub fn run_diagnose(cfg: &ExperimentConfig, which: &[Diagnostic]) -> Result<()> {
    if which.is_empty() {
        eprintln!("warning: no diagnostics selected (use --which conflict,landscape,gamma-log); nothing to do");
        return Ok(());
    }
    let (model, meta) = load_model(cfg)?;
    prepare_out(cfg)?;
    cfg.archive("diagnose-config.toml")?;
    let episodes = diagnostic_episodes(cfg)?;
    let d = &cfg.diagnostics;
    let mut which = which.to_vec();
    which.dedup();
    for kind in which {
        match kind {
            Diagnostic::Conflict => {
                let mut records = per_layer_conflict(&model, &meta, &episodes, 0)?;
                records.push(per_task_conflict(&model, &meta, &episodes, 0)?);
                if d.within_task {
                    records.push(within_task_conflict(&model, &meta, &episodes, 0)?);
                }
                write(cfg, "conflict.csv", &conflict_csv(&records))?;
            }
            Diagnostic::Landscape => {
                let per_task = episodes
                    .iter()
                    .map(|e| inner_loop_landscape(&model, &meta, e, d.landscape_steps, &d.probe_multipliers))
                    .collect::<Result<Vec<_>, _>>()?;
                let mut out = format!("{}\n", LandscapeRecord::CSV_HEADER);
                for r in average_by_step(&per_task) {
                    out.push_str(&r.csv_line());
                    out.push('\n');
                }
                write(cfg, "landscape.csv", &out)?;
            }
            Diagnostic::GammaLog => {
                let gammas = episodes
                    .iter()
                    .map(|e| adaptation_start(&model, &meta, &e.support).map(|(_, g)| g))
                    .collect::<Result<Vec<_>, _>>()?;
                let mut log = GammaLog::default();
                log.extend(gamma_rows(&model, "eval", 0, 0, &gammas));
                if log.rows.is_empty() {
                    eprintln!("warning: `{}` has no attenuation; gamma log is empty", model.method);
                }
                write(cfg, "gamma_log.csv", &log.to_csv())?;
            }
        }
    }
    Ok(())
}

pub fn run_sweep(cfg: &ExperimentConfig) -> Result<()> {
    let (model, meta) = load_model(cfg)?;
    prepare_out(cfg)?;
    cfg.archive("sweep-config.toml")?;
    let episodes = eval_episodes(cfg)?;
    let d = &cfg.diagnostics;
    let rows = gamma_sweep(&model, &meta, &d.sweep_layers, &d.sweep_gammas, &episodes)?;
    let provenance = vec![
        ("checkpoint".to_string(), cfg.checkpoint_path()?.display().to_string()),
        ("method".to_string(), model.method.to_string()),
        ("seed".to_string(), meta.seed.to_string()),
        ("inner_lr".to_string(), meta.inner_lr.to_string()),
        ("episodes".to_string(), episodes.len().to_string()),
        ("config".to_string(), "sweep-config.toml".to_string()),
    ];
    write(cfg, "sweep.csv", &sweep_csv(&rows, &provenance))
}

/// Prints one line per suite; `Ok(false)` if any failed.
pub fn run_selftest(filter: Option<&str>) -> Result<bool> {
    let start = Instant::now();
    let report = selftest::run(filter);
    if report.suites.is_empty() {
        bail!("no selftest suite matches `{}`", filter.unwrap_or(""));
    }
    for s in &report.suites {
        println!("{} {:<22} {:>7.2}s  {}", if s.passed { "PASS" } else { "FAIL" }, s.name, s.seconds, s.detail);
    }
    let passed = report.suites.iter().filter(|s| s.passed).count();
    println!("{passed}/{} suites passed in {:.1}s", report.suites.len(), start.elapsed().as_secs_f64());
    Ok(report.all_passed())
}
