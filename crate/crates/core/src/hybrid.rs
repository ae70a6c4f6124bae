//! Trust-gated evaluation: operator prediction, residual confidence score,
//! and GMRES refinement warm-started from the prediction.
//!
//! The confidence score is the relative residual of the prediction in the
//! excess-temperature system, `‖b − A·θ‖/‖b‖` with `θ = T − T_amb`, so `b`
//! holds only the power terms and the score measures error against the
//! design's own heat load.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{ChipStack, Mesh, PowerSpec};
use crate::error::{Error, Result};
use crate::fd::{
    gmres, gmres_raw, reference_solve, Assembler, GmresParams, SolveStats, SparseSystem,
};
use crate::field::TemperatureField;
use crate::linalg::norm2;
use crate::operator::OperatorModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    OperatorOnly,
    FdOnly,
    Hybrid,
}

impl EvalMode {
    pub fn as_str(self) -> &'static str {
        match self {
            EvalMode::OperatorOnly => "operator_only",
            EvalMode::FdOnly => "fd_only",
            EvalMode::Hybrid => "hybrid",
        }
    }

    pub fn needs_model(self) -> bool {
        self != EvalMode::FdOnly
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceReport {
    /// Relative residual of the operator prediction (of the returned field
    /// in `fd_only` mode).
    pub rel_residual: f64,
    pub alpha: f64,
    pub refined: bool,
    /// Stats of the refinement (hybrid) or reference solve (fd_only).
    pub gmres_stats: Option<SolveStats>,
    pub mode: EvalMode,
    /// False when a solve stopped before its tolerance; the field must then
    /// be treated as invalid.
    pub converged: bool,
}

impl ConfidenceReport {
    pub const CSV_HEADER: &'static str =
        "design,mode,rel_residual,alpha,refined,iterations,converged";

    pub fn csv_row(&self, design: &str) -> String {
        let iters = self.gmres_stats.as_ref().map_or(0, |s| s.iterations);
        format!(
            "{design},{},{:e},{:e},{},{iters},{}",
            self.mode.as_str(),
            self.rel_residual,
            self.alpha,
            self.refined,
            self.converged
        )
    }
}

/// Evaluator bound to one geometry. Borrowing the model keeps evaluation
/// `&self`, so distinct designs can be evaluated concurrently.
#[derive(Debug, Clone)]
pub struct HybridEvaluator<'m> {
    model: Option<&'m OperatorModel>,
    assembler: Assembler,
    t_ref: f64,
    pub alpha: f64,
    pub refinement: GmresParams,
}

impl<'m> HybridEvaluator<'m> {
    pub fn new(
        model: Option<&'m OperatorModel>,
        mesh: &Mesh,
        stack: &ChipStack,
        alpha: f64,
    ) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(Error::Config(format!(
                "residual threshold must be positive, got {alpha}"
            )));
        }
        if let Some(m) = model {
            if m.stack != *stack {
                return Err(Error::Config(
                    "model was trained on a different chip stack".into(),
                ));
            }
        }
        let assembler = Assembler::new(mesh, stack)?;
        let t_ref = stack.reference_temperature().ok_or_else(|| {
            Error::Config("stack has no convective face to reference temperatures to".into())
        })?;
        Ok(Self {
            model,
            assembler,
            t_ref,
            alpha,
            refinement: GmresParams::REFINEMENT,
        })
    }

    pub fn mesh(&self) -> &Mesh {
        self.assembler.mesh()
    }

    pub fn assembler(&self) -> &Assembler {
        &self.assembler
    }

    pub fn system(&self, design: &PowerSpec) -> Result<SparseSystem> {
        Ok(self
            .assembler
            .excess_system(design)?
            .excess_form(self.t_ref))
    }

    pub fn predict(&self, design: &PowerSpec) -> Result<TemperatureField> {
        let model = self
            .model
            .ok_or_else(|| Error::Config("this evaluation mode needs a trained model".into()))?;
        let mesh = self.assembler.mesh();
        model.eval_grid(&model.encode(design)?, [&mesh.x, &mesh.y, &mesh.z])
    }

    /// Relative residual; a zero-power design scores 0 only for the exact
    /// ambient field and infinity otherwise.
    pub fn score(&self, sys: &SparseSystem, field: &TemperatureField) -> Result<f64> {
        let x = sys.to_unknowns(field)?;
        let mut r = vec![0.0; sys.n()];
        sys.a.residual(&x, &sys.b, &mut r);
        let (rn, bn) = (norm2(&r), norm2(&sys.b));
        Ok(if bn > 0.0 {
            rn / bn
        } else if rn == 0.0 {
            0.0
        } else {
            f64::INFINITY
        })
    }

    pub fn evaluate(
        &self,
        design: &PowerSpec,
        mode: EvalMode,
    ) -> Result<(TemperatureField, ConfidenceReport)> {
        let sys = self.system(design)?;
        if mode == EvalMode::FdOnly {
            let (field, stats) = reference_solve(&sys)?;
            let report = ConfidenceReport {
                rel_residual: stats.final_relative_residual,
                alpha: self.alpha,
                refined: false,
                converged: stats.converged,
                gmres_stats: Some(stats),
                mode,
            };
            return Ok((field, report));
        }
        let pred = self.predict(design)?;
        let r = self.score(&sys, &pred)?;
        if !r.is_finite() && norm2(&sys.b) > 0.0 {
            return Err(Error::Numeric(format!(
                "operator prediction has non-finite residual {r}"
            )));
        }
        let mut report = ConfidenceReport {
            rel_residual: r,
            alpha: self.alpha,
            refined: false,
            gmres_stats: None,
            mode,
            converged: true,
        };
        if mode == EvalMode::OperatorOnly || r < self.alpha {
            return Ok((pred, report));
        }
        let (refined, stats) = gmres(&sys, Some(&pred), &self.refinement, None)?;
        report.refined = true;
        report.converged = stats.converged;
        report.gmres_stats = Some(stats);
        Ok((refined, report))
    }
}

/// `q`-quantile (linear interpolation between order statistics).
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Config("quantile of an empty sample".into()));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Config(format!("quantile level {q} outside [0, 1]")));
    }
    let mut v = values.to_vec();
    if v.iter().any(|x| x.is_nan()) {
        return Err(Error::Numeric("NaN in quantile sample".into()));
    }
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(v[lo] + (pos - lo as f64) * (v[hi] - v[lo]))
}

/// Threshold at which a fraction `1 − level` of held-out designs would be
/// refined.
pub fn calibrate_alpha(
    evaluator: &HybridEvaluator<'_>,
    designs: &[PowerSpec],
    level: f64,
) -> Result<f64> {
    let mut scores = Vec::with_capacity(designs.len());
    for d in designs {
        let sys = evaluator.system(d)?;
        scores.push(evaluator.score(&sys, &evaluator.predict(d)?)?);
    }
    quantile(&scores, level)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WarmStartRow {
    pub design: usize,
    pub cold_zero: SolveStats,
    pub cold_random: SolveStats,
    pub warm: SolveStats,
}

impl WarmStartRow {
    pub const CSV_HEADER: &'static str =
        "design,cold_zero_iters,cold_random_iters,warm_iters,warm_initial_residual,ratio_zero,ratio_random";

    pub fn ratio(&self) -> f64 {
        self.warm.iterations as f64 / self.cold_zero.iterations.max(1) as f64
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:e},{:.6},{:.6}",
            self.design,
            self.cold_zero.iterations,
            self.cold_random.iterations,
            self.warm.iterations,
            self.warm.history.first().copied().unwrap_or(0.0),
            self.ratio(),
            self.warm.iterations as f64 / self.cold_random.iterations.max(1) as f64
        )
    }
}

/// Iterations to `params.tol` from three initial guesses per design: ambient
/// (zero excess), a random excess field with the prediction's range, and
/// the operator prediction.
pub fn warmstart_study<R: Rng>(
    evaluator: &HybridEvaluator<'_>,
    designs: &[PowerSpec],
    params: &GmresParams,
    rng: &mut R,
) -> Result<Vec<WarmStartRow>> {
    let mut rows = Vec::with_capacity(designs.len());
    for (i, d) in designs.iter().enumerate() {
        let sys = evaluator.system(d)?;
        let pred = sys.to_unknowns(&evaluator.predict(d)?)?;
        let span = pred.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
        let random: Vec<f64> = (0..sys.n()).map(|_| rng.random_range(0.0..span)).collect();
        let zero = vec![0.0; sys.n()];
        let (_, cold_zero) = gmres_raw(&sys.a, &sys.b, &zero, params, None)?;
        let (_, cold_random) = gmres_raw(&sys.a, &sys.b, &random, params, None)?;
        let (_, warm) = gmres_raw(&sys.a, &sys.b, &pred, params, None)?;
        rows.push(WarmStartRow {
            design: i,
            cold_zero,
            cold_random,
            warm,
        });
    }
    Ok(rows)
}

/// Summary CSV plus per-iteration residual trajectories
/// (`design,start,iteration,rel_residual`).
pub fn write_warmstart<W: Write, T: Write>(
    rows: &[WarmStartRow],
    summary: &mut W,
    trajectories: &mut T,
) -> Result<()> {
    writeln!(summary, "{}", WarmStartRow::CSV_HEADER)?;
    writeln!(trajectories, "design,start,iteration,rel_residual")?;
    for row in rows {
        writeln!(summary, "{}", row.csv_row())?;
        for (name, stats) in [
            ("zero", &row.cold_zero),
            ("random", &row.cold_random),
            ("warm", &row.warm),
        ] {
            for (it, r) in stats.history.iter().enumerate() {
                writeln!(trajectories, "{},{name},{it},{r:e}", row.design)?;
            }
        }
    }
    Ok(())
}
