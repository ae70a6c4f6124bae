use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use chipheat::anneal::{sa_optimize, ModeEvaluator, SaConfig};
use chipheat::domain::{ChipStack, Mesh, PowerSpec};
use chipheat::fd::{assemble, gmres, reference_solve, Ilu0, SolveStats};
use chipheat::field::TemperatureField;
use chipheat::hybrid::{EvalMode, HybridEvaluator};
use chipheat::io::{atomic_write, write_ppm_slice};
use chipheat::operator::OperatorModel;
use chipheat::spectral::{fit_decay_rates, run_gradient_flow, write_rates, SpectralTarget};
use chipheat::training::{
    mape, DesignSampler, PhysicsProblem, SamplerSpec, Trainer, LOSS_CSV_HEADER,
};
use chipheat::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{require, EvaluateSection, HybridSection, RunConfig, DEFAULT_ALPHA};

/// Environment variable capping worker threads (default: available cores).
pub const THREADS_ENV: &str = "CHIPHEAT_THREADS";

/// Command result that is not an error but must surface as a distinct exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Done,
    NotConverged,
}

pub fn thread_count() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::Config(format!(
                "{THREADS_ENV} must be a positive integer, got {v:?}"
            ))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    atomic_write(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)?;
        Ok(())
    })
}

fn write_resolved(cfg: &RunConfig) -> Result<()> {
    write_json(&cfg.output_dir().join("resolved_config.json"), cfg)
}

fn write_field(path: &Path, field: &TemperatureField) -> Result<()> {
    atomic_write(path, |w| field.write_to(w))
}

fn write_heatmap(cfg: &RunConfig, field: &TemperatureField) -> Result<()> {
    if let Some(l) = cfg.heatmap_slice {
        atomic_write(&cfg.output_dir().join("heatmap.ppm"), |w| {
            write_ppm_slice(w, field, l)
        })?;
    }
    Ok(())
}

pub struct Checkpoint {
    pub model: OperatorModel,
    /// Mesh nodes per axis the model was trained on, if recorded.
    pub mesh: Option<[usize; 3]>,
    pub sampler: Option<SamplerSpec>,
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = File::open(path)
        .map_err(|e| Error::Config(format!("cannot open checkpoint {}: {e}", path.display())))?;
    let (model, blobs) = OperatorModel::load(BufReader::new(file))?;
    let extra = &blobs.meta["extra"];
    let mesh = serde_json::from_value(extra["mesh"].clone()).ok();
    let sampler = serde_json::from_value(extra["train"]["sampler"].clone()).ok();
    Ok(Checkpoint {
        model,
        mesh,
        sampler,
    })
}

/// Stack and mesh of a model-backed command: geometry comes from the
/// checkpoint, the mesh defaults to the training mesh, and any explicit
/// setting must agree with the checkpoint.
fn model_geometry(cfg: &mut RunConfig, ck: &Checkpoint) -> Result<(ChipStack, Mesh)> {
    let stack = ck.model.stack.clone();
    if cfg.geometry.is_some() && cfg.stack()? != stack {
        return Err(Error::Config(
            "configured geometry differs from the checkpoint's chip stack".into(),
        ));
    }
    match (cfg.mesh, ck.mesh) {
        (Some(m), Some(t)) if m != t => {
            return Err(Error::Config(format!(
                "configured mesh {m:?} differs from the checkpoint's training mesh {t:?}"
            )));
        }
        (None, Some(t)) => cfg.mesh = Some(t),
        _ => {}
    }
    let mesh = cfg.mesh_for(&stack)?;
    Ok((stack, mesh))
}

pub fn solve(cfg: &RunConfig) -> Result<Outcome> {
    let stack = cfg.stack()?;
    let mesh = cfg.mesh_for(&stack)?;
    let power = require(&cfg.power, "power")?;
    let sys = assemble(&mesh, &stack, power)?;
    let (field, stats) = match &cfg.gmres {
        Some(params) => {
            let ilu = Ilu0::new(&sys.a)?;
            gmres(&sys, None, params, Some(&ilu))?
        }
        None => reference_solve(&sys)?,
    };
    let out = cfg.output_dir();
    write_resolved(cfg)?;
    write_field(&out.join("field.bin"), &field)?;
    atomic_write(&out.join("solve_stats.csv"), |w| {
        writeln!(w, "{}", SolveStats::CSV_HEADER)?;
        writeln!(w, "{}", stats.csv_row())?;
        Ok(())
    })?;
    write_heatmap(cfg, &field)?;
    println!(
        "solved {} unknowns: T in [{:.6}, {:.6}] K, relative residual {:.3e}",
        sys.n(),
        field.min(),
        field.max(),
        stats.final_relative_residual
    );
    Ok(if stats.converged {
        Outcome::Done
    } else {
        Outcome::NotConverged
    })
}

pub fn train(cfg: &mut RunConfig, resume: bool) -> Result<Outcome> {
    let stack = cfg.stack()?;
    let mesh = cfg.mesh_for(&stack)?;
    let mut tc = require(&cfg.train, "train")?.clone();
    if let Some(seed) = cfg.seed {
        tc.seed = seed;
    }
    cfg.seed = Some(tc.seed);
    cfg.train = Some(tc.clone());
    let spec = cfg.model.get_or_insert_with(Default::default).clone();
    let out = cfg.output_dir();
    let ck_path = out.join("checkpoint.bin");
    let csv_path = out.join("loss.csv");
    let problem = PhysicsProblem::new(mesh, stack)?;

    let (mut trainer, mut csv) = if resume {
        let file = File::open(&ck_path)
            .map_err(|e| Error::Config(format!("cannot resume from {}: {e}", ck_path.display())))?;
        let trainer = Trainer::resume(BufReader::new(file), problem, tc)?;
        // Keep the rows up to the checkpointed iteration.
        let previous = std::fs::read_to_string(&csv_path).unwrap_or_default();
        let mut csv = format!("{LOSS_CSV_HEADER}\n").into_bytes();
        for line in previous.lines().skip(1).take(trainer.iteration()) {
            writeln!(csv, "{line}")?;
        }
        (trainer, csv)
    } else {
        (
            Trainer::init(spec, problem, tc)?,
            format!("{LOSS_CSV_HEADER}\n").into_bytes(),
        )
    };
    write_resolved(cfg)?;
    let result = trainer.run(Some(&mut csv), Some(&ck_path));
    atomic_write(&csv_path, |w| Ok(w.write_all(&csv)?))?;
    let history = result?;
    if let Some(last) = history.last() {
        println!(
            "iteration {}: loss {:.6e} (residual {:.3e}, boundary {:.3e})",
            last.iteration, last.loss, last.residual, last.boundary
        );
    }
    Ok(Outcome::Done)
}

pub fn predict(cfg: &mut RunConfig, checkpoint: &Path) -> Result<Outcome> {
    let ck = load_checkpoint(checkpoint)?;
    let (_, mesh) = model_geometry(cfg, &ck)?;
    let power = require(&cfg.power, "power")?;
    let field = ck
        .model
        .eval_grid(&ck.model.encode(power)?, [&mesh.x, &mesh.y, &mesh.z])?;
    write_resolved(cfg)?;
    write_field(&cfg.output_dir().join("field.bin"), &field)?;
    write_heatmap(cfg, &field)?;
    println!("predicted T in [{:.6}, {:.6}] K", field.min(), field.max());
    Ok(Outcome::Done)
}

#[derive(Debug, Serialize)]
struct EvaluateSummary {
    n_designs: usize,
    mean_mape: f64,
    max_mape: f64,
    threads: usize,
}

pub fn evaluate(cfg: &mut RunConfig, checkpoint: &Path) -> Result<Outcome> {
    let ck = load_checkpoint(checkpoint)?;
    let (stack, mesh) = model_geometry(cfg, &ck)?;
    let section = require(&cfg.evaluate, "evaluate")?.clone();
    if section.n_designs == 0 {
        return Err(Error::Config("n_designs must be at least 1".into()));
    }
    let spec = section
        .sampler
        .clone()
        .or(ck.sampler.clone())
        .ok_or_else(|| {
            Error::Config("no sampler configured and none recorded in the checkpoint".into())
        })?;
    let sampler = DesignSampler::new(&spec)?;
    let seed = cfg.seed.unwrap_or(0);
    cfg.seed = Some(seed);
    cfg.evaluate = Some(EvaluateSection {
        n_designs: section.n_designs,
        sampler: Some(spec),
    });
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let designs = (0..section.n_designs)
        .map(|_| sampler.sample(&mut rng))
        .collect::<Result<Vec<_>>>()?;

    let threads = thread_count()?.min(designs.len());
    let chunk = designs.len().div_ceil(threads);
    let model = &ck.model;
    let (mesh_ref, stack_ref) = (&mesh, &stack);
    let results: Vec<Result<(f64, bool)>> = std::thread::scope(|s| {
        let handles: Vec<_> = designs
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    part.iter()
                        .map(|d| score_design(model, mesh_ref, stack_ref, d))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("evaluation worker panicked"))
            .collect()
    });
    let mut mapes = Vec::with_capacity(results.len());
    let mut all_converged = true;
    for r in results {
        let (m, converged) = r?;
        mapes.push(m);
        all_converged &= converged;
    }

    let out = cfg.output_dir();
    write_resolved(cfg)?;
    atomic_write(&out.join("mape.csv"), |w| {
        writeln!(w, "design,mape")?;
        for (i, m) in mapes.iter().enumerate() {
            writeln!(w, "{i},{m:.17e}")?;
        }
        Ok(())
    })?;
    let summary = EvaluateSummary {
        n_designs: mapes.len(),
        mean_mape: mapes.iter().sum::<f64>() / mapes.len() as f64,
        max_mape: mapes.iter().copied().fold(0.0, f64::max),
        threads,
    };
    write_json(&out.join("summary.json"), &summary)?;
    println!(
        "mean MAPE {:.6}% over {} designs",
        summary.mean_mape, summary.n_designs
    );
    Ok(if all_converged {
        Outcome::Done
    } else {
        Outcome::NotConverged
    })
}

fn score_design(
    model: &OperatorModel,
    mesh: &Mesh,
    stack: &ChipStack,
    design: &PowerSpec,
) -> Result<(f64, bool)> {
    let (reference, stats) = reference_solve(&assemble(mesh, stack, design)?)?;
    let pred = model.eval_grid(&model.encode(design)?, [&mesh.x, &mesh.y, &mesh.z])?;
    Ok((mape(&pred, &reference)?, stats.converged))
}

#[derive(Debug, Serialize)]
struct OptimizeSummary {
    mode: EvalMode,
    best_objective: f64,
    best_peak: f64,
    evaluations: usize,
    refinements: usize,
    refinement_fraction: f64,
    fd_solves: usize,
    failures: usize,
    wall_time: f64,
}

pub fn optimize(
    cfg: &mut RunConfig,
    mode: Option<EvalMode>,
    checkpoint: Option<&PathBuf>,
) -> Result<Outcome> {
    let mut sa: SaConfig = require(&cfg.sa, "sa")?.clone();
    if let Some(m) = mode {
        sa.mode = m;
    }
    if let Some(seed) = cfg.seed {
        sa.seed = seed;
    }
    cfg.seed = Some(sa.seed);
    cfg.sa = Some(sa.clone());
    let initial = require(&cfg.floorplan, "floorplan")?.clone();
    let alpha = cfg
        .hybrid
        .get_or_insert(HybridSection {
            alpha: DEFAULT_ALPHA,
        })
        .alpha;

    // The fd mode never touches the model, even when one is given.
    let ck = if sa.mode.needs_model() {
        let path = checkpoint.ok_or_else(|| {
            Error::Config(format!("mode {} needs --checkpoint", sa.mode.as_str()))
        })?;
        Some(load_checkpoint(path)?)
    } else {
        None
    };
    let (stack, mesh) = match &ck {
        Some(ck) => model_geometry(cfg, ck)?,
        None => {
            let stack = cfg.stack()?;
            let mesh = cfg.mesh_for(&stack)?;
            (stack, mesh)
        }
    };
    let evaluator = HybridEvaluator::new(ck.as_ref().map(|c| &c.model), &mesh, &stack, alpha)?;
    write_resolved(cfg)?;
    let outcome = sa_optimize(
        &sa,
        &mut ModeEvaluator {
            evaluator: &evaluator,
            mode: sa.mode,
        },
        &initial,
    )?;

    let out = cfg.output_dir();
    atomic_write(&out.join("trace.csv"), |w| outcome.write_trace(w))?;
    write_json(&out.join("best_floorplan.json"), &outcome.best)?;
    let summary = OptimizeSummary {
        mode: sa.mode,
        best_objective: outcome.best_objective,
        best_peak: outcome.best_peak,
        evaluations: outcome.evaluations,
        refinements: outcome.refinements,
        refinement_fraction: outcome.refinement_fraction(),
        fd_solves: outcome.fd_solves,
        failures: outcome.failures,
        wall_time: outcome.wall_time,
    };
    write_json(&out.join("summary.json"), &summary)?;
    println!(
        "best objective {:.6} K (peak {:.6} K) after {} evaluations",
        summary.best_objective, summary.best_peak, summary.evaluations
    );
    if sa.mode == EvalMode::Hybrid {
        println!(
            "refinement fraction {:.4} ({} of {})",
            summary.refinement_fraction, summary.refinements, summary.evaluations
        );
    }
    Ok(Outcome::Done)
}

pub fn ntk(cfg: &RunConfig) -> Result<Outcome> {
    let n = require(&cfg.ntk, "ntk")?;
    let target = SpectralTarget::new(n.coeffs.clone(), n.order)?;
    let traj = run_gradient_flow(&target, n.eta, n.steps, n.dt, n.record_every)?;
    let fits = fit_decay_rates(&traj);
    let out = cfg.output_dir();
    write_resolved(cfg)?;
    atomic_write(&out.join("rates.csv"), |w| write_rates(w, &fits, n.eta))?;
    atomic_write(&out.join("trajectories.csv"), |w| {
        let modes: Vec<String> = (0..traj.errors.len()).map(|k| format!("e{k}")).collect();
        writeln!(w, "t,{}", modes.join(","))?;
        for (s, t) in traj.times.iter().enumerate() {
            let row: Vec<String> = traj.errors.iter().map(|e| format!("{:e}", e[s])).collect();
            writeln!(w, "{t:e},{}", row.join(","))?;
        }
        Ok(())
    })?;
    for f in &fits {
        match f.rate {
            Some(r) => println!("mode {}: rate {r:.6}", f.mode),
            None => println!(
                "mode {}: skipped ({})",
                f.mode,
                f.note.as_deref().unwrap_or("")
            ),
        }
    }
    Ok(Outcome::Done)
}
