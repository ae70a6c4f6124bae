//! Gradient-flow dynamics of a single Chebyshev layer `f(y) = Σ a_k C_k(y)`
//! fitted to a target series under the Chebyshev measure `dy/√(1−y²)`.
//!
//! The kernel is diagonal in the Chebyshev basis with eigenvalues
//! `κ_0 = π`, `κ_k = π/2`, so each coefficient error decays as
//! `e_k(0)·exp(−η·κ_k·t)`.

use std::f64::consts::PI;
use std::io::Write;

use crate::error::{Error, Result};
use crate::nn::chebyshev_t;

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralTarget {
    /// Target coefficients `b_0..=b_{K_target}`.
    pub coeffs: Vec<f64>,
    /// Model order `K ≤ K_target`.
    pub order: usize,
}

impl SpectralTarget {
    pub fn new(coeffs: Vec<f64>, order: usize) -> Result<Self> {
        if coeffs.is_empty() || order + 1 > coeffs.len() {
            return Err(Error::Config(format!(
                "model order {order} exceeds target order {}",
                coeffs.len().saturating_sub(1)
            )));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::Numeric("non-finite target coefficient".into()));
        }
        Ok(Self { coeffs, order })
    }
}

/// Kernel eigenvalue of mode `k`.
pub fn kappa(k: usize) -> f64 {
    if k == 0 {
        PI
    } else {
        PI / 2.0
    }
}

/// `n`-point Gauss–Chebyshev nodes and (equal) weights `π/n`.
pub fn gauss_chebyshev(n: usize) -> (Vec<f64>, f64) {
    let nodes = (1..=n)
        .map(|j| ((2 * j - 1) as f64 * PI / (2 * n) as f64).cos())
        .collect();
    (nodes, PI / n as f64)
}

/// `Θ(y_i, y_j) = Σ_k C_k(y_i)·C_k(y_j)` on the given nodes, row-major.
pub fn ntk_matrix(order: usize, nodes: &[f64]) -> Vec<f64> {
    let basis: Vec<Vec<f64>> = nodes.iter().map(|&y| chebyshev_t(y, order)).collect();
    let n = nodes.len();
    let mut theta = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            theta[i * n + j] = basis[i].iter().zip(&basis[j]).map(|(a, b)| a * b).sum();
        }
    }
    theta
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeTrajectory {
    pub eta: f64,
    pub dt: f64,
    pub times: Vec<f64>,
    /// `errors[k][s]` = `a_k − b_k` at `times[s]`.
    pub errors: Vec<Vec<f64>>,
}

impl ModeTrajectory {
    pub fn closed_form(&self, k: usize, s: usize) -> f64 {
        self.errors[k][0] * (-self.eta * kappa(k) * self.times[s]).exp()
    }
}

/// Explicit-Euler gradient flow `da_k/dt = −η ∫ (f − f*) C_k dμ` from
/// `a = 0`, with the integral evaluated by Gauss–Chebyshev quadrature.
/// Records every `record_every` steps (and the last step).
pub fn run_gradient_flow(
    target: &SpectralTarget,
    eta: f64,
    steps: usize,
    dt: f64,
    record_every: usize,
) -> Result<ModeTrajectory> {
    if !(eta > 0.0 && dt > 0.0) {
        return Err(Error::Config(
            "learning rate and time step must be positive".into(),
        ));
    }
    if eta * PI * dt >= 2.0 {
        return Err(Error::Config(format!(
            "unstable step: η·π·dt = {} violates η·π·dt < 2",
            eta * PI * dt
        )));
    }
    let k_model = target.order;
    let k_target = target.coeffs.len() - 1;
    // Exact for the degree-(K + K_target) integrands.
    let n = (4 * k_model.max(1)).max(k_model + k_target + 1);
    let (nodes, w) = gauss_chebyshev(n);
    let basis: Vec<Vec<f64>> = nodes
        .iter()
        .map(|&y| chebyshev_t(y, k_target.max(k_model)))
        .collect();
    let f_star: Vec<f64> = basis
        .iter()
        .map(|c| c.iter().zip(&target.coeffs).map(|(c, b)| c * b).sum())
        .collect();

    let mut a = vec![0.0; k_model + 1];
    let record_every = record_every.max(1);
    let mut traj = ModeTrajectory {
        eta,
        dt,
        times: vec![0.0],
        errors: (0..=k_model).map(|k| vec![-target.coeffs[k]]).collect(),
    };
    let initial_norm: f64 = target.coeffs[..=k_model]
        .iter()
        .map(|b| b * b)
        .sum::<f64>()
        .sqrt();
    let mut resid = vec![0.0; n];
    for step in 1..=steps {
        for (j, r) in resid.iter_mut().enumerate() {
            *r = basis[j][..=k_model]
                .iter()
                .zip(&a)
                .map(|(c, a)| c * a)
                .sum::<f64>()
                - f_star[j];
        }
        for (k, ak) in a.iter_mut().enumerate() {
            let g: f64 = (0..n).map(|j| w * resid[j] * basis[j][k]).sum();
            *ak -= dt * eta * g;
        }
        if step % record_every == 0 || step == steps {
            traj.times.push(step as f64 * dt);
            let mut norm = 0.0;
            for k in 0..=k_model {
                let e = a[k] - target.coeffs[k];
                norm += e * e;
                traj.errors[k].push(e);
            }
            if !norm.is_finite() || norm.sqrt() > 2.0 * initial_norm.max(f64::MIN_POSITIVE) {
                return Err(Error::Numeric(format!(
                    "gradient flow diverged at step {step}; the step size must satisfy η·π·dt < 2"
                )));
            }
        }
    }
    Ok(traj)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeFit {
    pub mode: usize,
    /// Fitted decay rate (negated log-slope); `None` when skipped.
    pub rate: Option<f64>,
    pub note: Option<String>,
}

/// Least-squares slope of `log|e_k(t)|` for every mode.
pub fn fit_decay_rates(traj: &ModeTrajectory) -> Vec<ModeFit> {
    traj.errors
        .iter()
        .enumerate()
        .map(|(k, e)| {
            if e.iter().any(|v| *v == 0.0 || !v.is_finite()) {
                return ModeFit {
                    mode: k,
                    rate: None,
                    note: Some("zero or non-finite error; log fit skipped".into()),
                };
            }
            if e.len() < 2 {
                return ModeFit {
                    mode: k,
                    rate: None,
                    note: Some("fewer than two samples".into()),
                };
            }
            let n = e.len() as f64;
            let logs: Vec<f64> = e.iter().map(|v| v.abs().ln()).collect();
            let tm = traj.times.iter().sum::<f64>() / n;
            let lm = logs.iter().sum::<f64>() / n;
            let (mut sxy, mut sxx) = (0.0, 0.0);
            for (t, l) in traj.times.iter().zip(&logs) {
                sxy += (t - tm) * (l - lm);
                sxx += (t - tm) * (t - tm);
            }
            ModeFit {
                mode: k,
                rate: Some(-sxy / sxx),
                note: None,
            }
        })
        .collect()
}

/// `mode,fitted_rate,theory_rate,rel_error` rows.
pub fn write_rates<W: Write>(w: &mut W, fits: &[ModeFit], eta: f64) -> Result<()> {
    writeln!(w, "mode,fitted_rate,theory_rate,rel_error")?;
    for f in fits {
        let theory = eta * kappa(f.mode);
        match f.rate {
            Some(r) => writeln!(
                w,
                "{},{r:.9},{theory:.9},{:e}",
                f.mode,
                ((r - theory) / theory).abs()
            )?,
            None => writeln!(w, "{},,{theory:.9},", f.mode)?,
        }
    }
    Ok(())
}
