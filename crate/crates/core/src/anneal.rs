//! Simulated-annealing floorplan optimisation with an adaptive neighbourhood.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{overlap_tiles, Floorplan, PowerSpec};
use crate::error::{Error, Result};
use crate::field::TemperatureField;
use crate::hybrid::{EvalMode, HybridEvaluator};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaConfig {
    #[serde(default = "default_t0")]
    pub initial_temperature: f64,
    #[serde(default = "default_cooling")]
    pub cooling_rate: f64,
    pub iterations: usize,
    #[serde(default = "default_w_base")]
    pub base_neighborhood: usize,
    /// K per overlapped tile.
    #[serde(default = "default_penalty")]
    pub penalty_weight: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_mode")]
    pub mode: EvalMode,
}

fn default_t0() -> f64 {
    0.5
}
fn default_cooling() -> f64 {
    0.997
}
fn default_w_base() -> usize {
    25
}
fn default_penalty() -> f64 {
    0.01
}
fn default_mode() -> EvalMode {
    EvalMode::Hybrid
}

impl SaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cooling_rate > 0.0 && self.cooling_rate < 1.0) {
            return Err(Error::Config(format!(
                "cooling rate must lie in (0, 1), got {}",
                self.cooling_rate
            )));
        }
        if self.iterations == 0 {
            return Err(Error::Config("annealing needs at least one step".into()));
        }
        if self.base_neighborhood == 0 {
            return Err(Error::Config(
                "base neighbourhood must be at least 1".into(),
            ));
        }
        if !(self.penalty_weight >= 0.0 && self.penalty_weight.is_finite()) {
            return Err(Error::Config(format!(
                "penalty weight must be non-negative, got {}",
                self.penalty_weight
            )));
        }
        if !(self.initial_temperature > 0.0 && self.initial_temperature.is_finite()) {
            return Err(Error::Config(
                "initial annealing temperature must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Annealing temperature after `step` cooling steps.
    pub fn temperature_at(&self, step: usize) -> f64 {
        self.initial_temperature * self.cooling_rate.powi(step as i32)
    }
}

/// Peak temperature plus the overlap penalty; `+∞` for an invalid field.
pub fn objective(
    field: &TemperatureField,
    fp: &Floorplan,
    penalty_weight: f64,
    valid: bool,
) -> f64 {
    if !valid {
        return f64::INFINITY;
    }
    field.max() + penalty_weight * overlap_tiles(fp) as f64
}

pub fn neighborhood_width(t_sa: f64, t0: f64, w_base: usize) -> usize {
    ((w_base as f64 * (t_sa / t0)).floor() as usize).max(1)
}

/// Resamples every component position uniformly within `±width` tiles of
/// its current position, clipped to the grid.
pub fn propose_neighbor<R: Rng>(
    current: &Floorplan,
    t_sa: f64,
    t0: f64,
    w_base: usize,
    rng: &mut R,
) -> Floorplan {
    let width = neighborhood_width(t_sa, t0, w_base);
    let mut next = current.clone();
    for c in &mut next.components {
        let (x_max, y_max) = (current.grid_w - c.width, current.grid_h - c.height);
        c.x = rng.random_range(c.x.saturating_sub(width)..=(c.x + width).min(x_max));
        c.y = rng.random_range(c.y.saturating_sub(width)..=(c.y + width).min(y_max));
    }
    next
}

/// Metropolis rule: downhill always, uphill with probability `exp(−Δ/T)`.
pub fn metropolis_accept<R: Rng>(f_curr: f64, f_new: f64, t_sa: f64, rng: &mut R) -> bool {
    if f_new <= f_curr {
        return true;
    }
    if !f_new.is_finite() {
        return false;
    }
    ((f_curr - f_new) / t_sa).exp() > rng.random::<f64>()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub field: TemperatureField,
    pub valid: bool,
    pub refined: bool,
    /// Linear solves run to a solver tolerance (reference or refinement).
    pub fd_solves: usize,
}

pub trait FloorplanEvaluator {
    fn evaluate(&mut self, fp: &Floorplan) -> Result<Evaluation>;
}

/// Adapts a [`HybridEvaluator`] in a fixed mode.
pub struct ModeEvaluator<'a, 'm> {
    pub evaluator: &'a HybridEvaluator<'m>,
    pub mode: EvalMode,
}

impl FloorplanEvaluator for ModeEvaluator<'_, '_> {
    fn evaluate(&mut self, fp: &Floorplan) -> Result<Evaluation> {
        let (field, report) = self
            .evaluator
            .evaluate(&PowerSpec::Floorplan(fp.clone()), self.mode)?;
        Ok(Evaluation {
            field,
            valid: report.converged,
            refined: report.refined,
            fd_solves: usize::from(report.gmres_stats.is_some()),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaStep {
    pub step: usize,
    pub f_curr: f64,
    pub f_best: f64,
    pub t_sa: f64,
    pub accepted: bool,
    pub refined: bool,
}

impl SaStep {
    pub const CSV_HEADER: &'static str = "step,f_curr,f_best,T_sa,accepted,refined";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:e},{},{}",
            self.step, self.f_curr, self.f_best, self.t_sa, self.accepted, self.refined
        )
    }
}

#[derive(Debug, Clone)]
pub struct SaOutcome {
    pub best: Floorplan,
    pub best_objective: f64,
    /// Peak temperature of the best design as seen by the evaluator.
    pub best_peak: f64,
    pub trace: Vec<SaStep>,
    pub evaluations: usize,
    pub refinements: usize,
    pub fd_solves: usize,
    pub failures: usize,
    /// seconds
    pub wall_time: f64,
}

impl SaOutcome {
    pub fn refinement_fraction(&self) -> f64 {
        self.refinements as f64 / self.evaluations.max(1) as f64
    }

    pub fn write_trace<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "{}", SaStep::CSV_HEADER)?;
        for s in &self.trace {
            writeln!(w, "{}", s.csv_row())?;
        }
        Ok(())
    }
}

/// Runs the annealing chain from `initial`. Step 0 of the trace is the
/// initial design; a failed candidate evaluation rejects the candidate.
pub fn sa_optimize<E: FloorplanEvaluator + ?Sized>(
    config: &SaConfig,
    evaluator: &mut E,
    initial: &Floorplan,
) -> Result<SaOutcome> {
    config.validate()?;
    initial.validate()?;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let first = evaluator.evaluate(initial)?;
    let mut out = SaOutcome {
        best: initial.clone(),
        best_objective: objective(&first.field, initial, config.penalty_weight, first.valid),
        best_peak: first.field.max(),
        trace: Vec::with_capacity(config.iterations + 1),
        evaluations: 1,
        refinements: usize::from(first.refined),
        fd_solves: first.fd_solves,
        failures: 0,
        wall_time: 0.0,
    };
    let mut current = initial.clone();
    let mut f_curr = out.best_objective;
    out.trace.push(SaStep {
        step: 0,
        f_curr,
        f_best: f_curr,
        t_sa: config.initial_temperature,
        accepted: true,
        refined: first.refined,
    });
    for step in 1..=config.iterations {
        let t_sa = config.temperature_at(step - 1);
        let candidate = propose_neighbor(
            &current,
            t_sa,
            config.initial_temperature,
            config.base_neighborhood,
            &mut rng,
        );
        let (f_new, refined, peak) = match evaluator.evaluate(&candidate) {
            Ok(ev) => {
                out.evaluations += 1;
                out.refinements += usize::from(ev.refined);
                out.fd_solves += ev.fd_solves;
                if !ev.valid {
                    out.failures += 1;
                }
                (
                    objective(&ev.field, &candidate, config.penalty_weight, ev.valid),
                    ev.refined,
                    ev.field.max(),
                )
            }
            Err(_) => {
                out.failures += 1;
                (f64::INFINITY, false, f64::NAN)
            }
        };
        let accepted = metropolis_accept(f_curr, f_new, t_sa, &mut rng);
        if accepted {
            current = candidate;
            f_curr = f_new;
            if f_new < out.best_objective {
                out.best_objective = f_new;
                out.best = current.clone();
                out.best_peak = peak;
            }
        }
        out.trace.push(SaStep {
            step,
            f_curr,
            f_best: out.best_objective,
            t_sa: config.temperature_at(step),
            accepted,
            refined,
        });
    }
    out.wall_time = start.elapsed().as_secs_f64();
    Ok(out)
}
