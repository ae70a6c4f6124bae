//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! `cargo test -p chipheat --test acceptance` runs everything; criterion
//! numbers after `--` select a subset. Failures are reported but only fail
//! the process under `--strict`, so a workspace test run still reaches the
//! other test targets.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::Instant;

use chipheat::anneal::{metropolis_accept, sa_optimize, ModeEvaluator, SaConfig};
use chipheat::domain::{
    benchmark_components, build_mesh, BoundaryCondition, ChipStack, FaceConditions, Layer,
    PowerSpec, SurfaceTiles, VolumetricPower, DEFAULT_TILE_UNIT_POWER,
};
use chipheat::fd::{
    assemble, dense_lu_solve, gmres_raw, jacobi_precondition, reference_solve, Assembler,
    GmresParams, ResolvedPower, SparseSystem,
};
use chipheat::hybrid::{calibrate_alpha, warmstart_study, EvalMode, HybridEvaluator};
use chipheat::nn::AdamConfig;
use chipheat::operator::{Encoding, Layout, ModelSpec, OperatorModel, TrunkSpec};
use chipheat::spectral::{fit_decay_rates, run_gradient_flow, SpectralTarget};
use chipheat::training::{
    block_pattern, iteration_designs, mape, sample_floorplan, sample_grf, DesignSampler,
    GrfSampler, LossWeights, PhysicsProblem, SamplerSpec, TrainConfig, Trainer,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const T_AMB: f64 = 298.15;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

// ---------------------------------------------------------------- 1, 2, 3

fn slab(q: f64) -> ChipStack {
    let conv = BoundaryCondition::Convection {
        htc: 0.5,
        t_amb: T_AMB,
    };
    let layers = vec![Layer {
        thickness: 0.5,
        conductivity: 0.1,
    }];
    ChipStack::new(
        1.0,
        1.0,
        layers,
        FaceConditions::with_sides(
            BoundaryCondition::Adiabatic,
            conv,
            BoundaryCondition::Neumann { flux: q },
        ),
    )
    .unwrap()
}

fn no_power() -> PowerSpec {
    PowerSpec::SurfaceTiles(SurfaceTiles::uniform(1, 0.0, 0.0).unwrap())
}

/// Max nodal error of the uniform-flux slab against T = T_amb + q/h + q·z/k.
fn slab_error(nz: usize) -> f64 {
    let q = 0.02;
    let stack = slab(q);
    let mesh = build_mesh(&stack, (2, 2, nz)).unwrap();
    let (field, _) = reference_solve(&assemble(&mesh, &stack, &no_power()).unwrap()).unwrap();
    let mut err = 0.0f64;
    for (l, z) in mesh.z.iter().enumerate() {
        let exact = T_AMB + q / 0.5 + q * z / 0.1;
        for (i, j) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            err = err.max((field.get(i, j, l) - exact).abs());
        }
    }
    err
}

/// Same material and faces with top flux q0·cos(πx): the exact solution is
/// cos(πx)(cosh(πz) + B sinh(πz)) up to scale, so truncation error shows.
fn cosine_error(n: usize) -> f64 {
    let (k, h, q0) = (0.1, 0.5, 0.05);
    let stack = slab(0.0);
    let mesh = build_mesh(&stack, (n, 2, n)).unwrap();
    let flux: Vec<f64> = mesh
        .x
        .iter()
        .flat_map(|x| [q0 * (PI * x).cos(); 2])
        .collect();
    let sys = Assembler::new(&mesh, &stack)
        .unwrap()
        .system_resolved(
            &ResolvedPower {
                top_flux: Some(flux),
                layer_power: None,
            },
            T_AMB,
        )
        .unwrap();
    let x = if sys.n() <= 2000 {
        dense_lu_solve(&sys.a, &sys.b).unwrap()
    } else {
        let params = GmresParams {
            restart: 200,
            tol: 1e-13,
            max_iter: 200_000,
        };
        let jac = jacobi_precondition(&sys.a).unwrap();
        gmres_raw(&sys.a, &sys.b, &vec![0.0; sys.n()], &params, Some(&jac))
            .unwrap()
            .0
    };
    let b = h / (k * PI);
    let amp = q0 / (k * PI * ((PI * 0.5).sinh() + b * (PI * 0.5).cosh()));
    let mut err = 0.0f64;
    for (i, xx) in mesh.x.iter().enumerate() {
        for (l, z) in mesh.z.iter().enumerate() {
            let exact = amp * (PI * xx).cos() * ((PI * z).cosh() + b * (PI * z).sinh());
            err = err.max((x[mesh.index(i, 0, l)] - exact).abs());
        }
    }
    err
}

fn criterion_1() -> Verdict {
    let (e51, e101) = (slab_error(51), slab_error(101));
    let e: Vec<f64> = [11, 21, 41].iter().map(|&n| cosine_error(n)).collect();
    let (r1, r2) = (e[0] / e[1], e[1] / e[2]);
    verdict(
        e101 <= 1e-6 && r1 >= 3.5 && r2 >= 3.5,
        format!(
            "slab max error {e101:.1e} K at 101 z-nodes ({e51:.1e} K at 51; the exact solution is linear, so the \
             scheme is exact to roundoff); cos-flux errors {:.2e}/{:.2e}/{:.2e} K at h, h/2, h/4, ratios {r1:.2}, {r2:.2}",
            e[0], e[1], e[2]
        ),
    )
}

fn criterion_2() -> Verdict {
    let stack = ChipStack::surface_benchmark();
    let mesh = build_mesh(&stack, (21, 21, 11)).unwrap();
    let power =
        PowerSpec::SurfaceTiles(SurfaceTiles::uniform(20, 0.0, DEFAULT_TILE_UNIT_POWER).unwrap());
    let sys = assemble(&mesh, &stack, &power).unwrap();
    // The exact solution is the constant field.
    let constant = vec![T_AMB; sys.n()];
    let r: Vec<f64> = sys
        .a
        .mul_vec(&constant)
        .iter()
        .zip(&sys.b)
        .map(|(ax, b)| b - ax)
        .collect();
    let exact_residual = norm(&r) / norm(&sys.b);
    let (field, stats) = reference_solve(&sys).unwrap();
    let dev: Vec<f64> = field.values().iter().map(|t| t - T_AMB).collect();
    let rel = norm(&dev) / norm(&constant);
    let max = dev.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    let tol = GmresParams::REFERENCE.tol;
    verdict(
        stats.converged && exact_residual <= 1e-14 && rel <= tol,
        format!(
            "relative deviation from 298.15 K {rel:.1e} (solver tolerance {tol:.0e}; max {max:.1e} K); solver \
             residual {:.1e}; residual of the constant field {exact_residual:.1e}",
            stats.final_relative_residual
        ),
    )
}

fn random_system(seed: u64) -> SparseSystem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let conv = BoundaryCondition::Convection {
        htc: rng.random_range(0.1..2.0),
        t_amb: T_AMB,
    };
    let layers = (0..3)
        .map(|_| Layer {
            thickness: rng.random_range(0.05..0.3),
            conductivity: rng.random_range(0.1..20.0),
        })
        .collect();
    let bc = FaceConditions::with_sides(
        BoundaryCondition::Adiabatic,
        conv,
        BoundaryCondition::Neumann { flux: 0.01 },
    );
    let stack = ChipStack::new(1.0, 1.0, layers, bc).unwrap();
    let mesh = build_mesh(&stack, (8, 8, 8)).unwrap();
    let values = (0..64).map(|_| rng.random_range(0.0..0.1)).collect();
    assemble(
        &mesh,
        &stack,
        &PowerSpec::Volumetric(VolumetricPower {
            layer: 1,
            nx: 8,
            ny: 8,
            values,
        }),
    )
    .unwrap()
}

fn criterion_3() -> Verdict {
    let params = GmresParams {
        restart: 100,
        tol: 1e-10,
        max_iter: 10_000,
    };
    let mut worst = 0.0f64;
    let mut converged = true;
    for seed in 0..10 {
        let sys = random_system(seed);
        let exact = dense_lu_solve(&sys.a, &sys.b).unwrap();
        let (x, stats) = gmres_raw(&sys.a, &sys.b, &vec![0.0; sys.n()], &params, None).unwrap();
        converged &= stats.converged;
        let diff: Vec<f64> = x.iter().zip(&exact).map(|(a, b)| a - b).collect();
        worst = worst.max(norm(&diff) / norm(&exact));
    }
    verdict(
        converged && worst <= 1e-8,
        format!("10 random 8x8x8 systems, worst relative deviation {worst:.1e}"),
    )
}

// ---------------------------------------------------------------- 4, 5

fn small_model(seed: u64, trunk: TrunkSpec, stack: ChipStack) -> OperatorModel {
    let spec = ModelSpec {
        rank: 8,
        branch_hidden: vec![16],
        trunk,
        layout: Layout::Separable,
        output_scale: 10.0,
    };
    let enc = Encoding {
        sensors: [5, 5],
        power_scale: 2.5,
    };
    OperatorModel::new(spec, stack, enc, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn small_kan() -> TrunkSpec {
    TrunkSpec::Kan {
        hidden: vec![8, 8],
        order: 3,
    }
}

fn random_axis(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn criterion_4() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for seed in 0..100 {
        let trunk = if seed % 2 == 0 {
            small_kan()
        } else {
            TrunkSpec::Mlp {
                hidden: vec![8, 8],
                fourier: None,
            }
        };
        let stack = if seed % 3 == 0 {
            ChipStack::three_layer_benchmark()
        } else {
            ChipStack::surface_benchmark()
        };
        let h = stack.height();
        let model = small_model(seed, trunk, stack);
        let enc: Vec<f64> = (0..25).map(|_| rng.random_range(0.0..1.0)).collect();
        let axes = [
            random_axis(&mut rng, 5, 0.0, 1.0),
            random_axis(&mut rng, 5, 0.0, 1.0),
            random_axis(&mut rng, 5, 0.0, h),
        ];
        let grid = model
            .eval_grid(&enc, [&axes[0], &axes[1], &axes[2]])
            .unwrap();
        let mut pts = Vec::with_capacity(125);
        for &x in &axes[0] {
            for &y in &axes[1] {
                pts.extend(axes[2].iter().map(|&z| [x, y, z]));
            }
        }
        let vals = model.eval_points(&enc, &pts).unwrap();
        // Relative to the field's excess over the reference temperature.
        let scale = vals
            .iter()
            .map(|v| (v - model.t_ref()).abs())
            .fold(0.0, f64::max);
        for (g, p) in grid.values().iter().zip(&vals) {
            worst = worst.max((g - p).abs() / scale);
        }
    }
    verdict(
        worst <= 1e-12,
        format!("100 models on 5x5x5 grids, worst relative deviation {worst:.1e}"),
    )
}

fn shifted(axes: &[Vec<f64>; 3], axis: usize, dh: f64) -> [Vec<f64>; 3] {
    let mut a = axes.clone();
    a[axis].iter_mut().for_each(|v| *v += dh);
    a
}

/// Worst normalised error of the first and second spatial derivatives on a
/// 10x10x10 grid of random interior points.
fn derivative_error(model: &OperatorModel, enc: &[f64], axes: &[Vec<f64>; 3]) -> f64 {
    let eval = |a: &[Vec<f64>; 3]| {
        model
            .eval_grid(enc, [&a[0], &a[1], &a[2]])
            .unwrap()
            .into_values()
    };
    let mut worst = 0.0f64;
    for axis in 0..3 {
        let h = 1e-3 * if axis == 2 { model.stack.height() } else { 1.0 };
        let f: Vec<Vec<f64>> = [2.0, 1.0, 0.0, -1.0, -2.0]
            .iter()
            .map(|k| eval(&shifted(axes, axis, k * h)))
            .collect();
        let d = model
            .derivative_grids(enc, [&axes[0], &axes[1], &axes[2]], &[(axis, 1), (axis, 2)])
            .unwrap();
        let mean = |v: &[f64]| v.iter().map(|x| x.abs()).sum::<f64>() / v.len() as f64;
        let (m1, m2) = (mean(&d[0]), mean(&d[1]));
        for p in 0..d[0].len() {
            let fd1 = (-f[0][p] + 8.0 * f[1][p] - 8.0 * f[3][p] + f[4][p]) / (12.0 * h);
            let fd2 = (-f[0][p] + 16.0 * f[1][p] - 30.0 * f[2][p] + 16.0 * f[3][p] - f[4][p])
                / (12.0 * h * h);
            worst = worst.max((fd1 - d[0][p]).abs() / d[0][p].abs().max(m1));
            worst = worst.max((fd2 - d[1][p]).abs() / d[1][p].abs().max(m2));
        }
    }
    worst
}

fn set_param(model: &mut OperatorModel, mut at: usize, value: f64) {
    for s in model.param_slices_mut() {
        if at < s.len() {
            s[at] = value;
            return;
        }
        at -= s.len();
    }
}

/// Worst relative error of 20 sampled physics-loss gradient entries.
fn gradient_error(problem: &PhysicsProblem, sampler: &SamplerSpec, seed: u64) -> f64 {
    let sampler = DesignSampler::new(sampler).unwrap();
    let [nx, ny, _] = problem.mesh().dims();
    let enc = Encoding {
        sensors: [nx, ny],
        power_scale: sampler.power_scale(problem.stack()),
    };
    let spec = ModelSpec {
        rank: 6,
        branch_hidden: vec![12],
        trunk: small_kan(),
        layout: Layout::Separable,
        output_scale: 10.0,
    };
    let mut model = OperatorModel::new(
        spec,
        problem.stack().clone(),
        enc,
        &mut ChaCha8Rng::seed_from_u64(seed),
    )
    .unwrap();
    let batch = problem
        .prepare(&model, &iteration_designs(&sampler, seed, 1, 2).unwrap())
        .unwrap();
    let w = LossWeights::default();
    let (_, grad) = problem.loss(&model, &batch, w).unwrap();
    let base: Vec<f64> = model
        .param_slices_mut()
        .iter()
        .flat_map(|s| s.iter().copied())
        .collect();
    let gmax = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let p = rng.random_range(0..base.len());
        let h = 1e-5 * base[p].abs().max(0.1);
        let mut at = |delta: f64| {
            set_param(&mut model, p, base[p] + delta);
            let l = problem.loss(&model, &batch, w).unwrap().0.total;
            set_param(&mut model, p, base[p]);
            l
        };
        let fd = (-at(2.0 * h) + 8.0 * at(h) - 8.0 * at(-h) + at(-2.0 * h)) / (12.0 * h);
        worst = worst.max((fd - grad[p]).abs() / grad[p].abs().max(1e-3 * gmax));
    }
    worst
}

fn criterion_5() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut deriv = 0.0f64;
    for (seed, stack) in [
        (1, ChipStack::surface_benchmark()),
        (2, ChipStack::three_layer_benchmark()),
    ] {
        // A 1 K ambient: eval_grid adds the reference temperature, whose
        // rounding would otherwise swamp the second differences.
        let mut stack = stack;
        for bc in [&mut stack.bc.bottom, &mut stack.bc.top] {
            if let BoundaryCondition::Convection { t_amb, .. } = bc {
                *t_amb = 1.0;
            }
        }
        let model = small_model(seed, small_kan(), stack.clone());
        let enc: Vec<f64> = (0..25).map(|_| rng.random_range(0.0..1.0)).collect();
        // The stencil must stay inside one material layer.
        let (zlo, zhi) = if stack.layers.len() == 1 {
            (0.01, 0.49)
        } else {
            (0.16, 0.54)
        };
        let axes = [
            random_axis(&mut rng, 10, 0.01, 0.99),
            random_axis(&mut rng, 10, 0.01, 0.99),
            random_axis(&mut rng, 10, zlo, zhi),
        ];
        deriv = deriv.max(derivative_error(&model, &enc, &axes));
    }
    let surface = ChipStack::surface_benchmark();
    let grf = SamplerSpec::Grf {
        tiles: 4,
        length_scale: 0.3,
        unit_power: 0.01,
    };
    let g1 = gradient_error(
        &PhysicsProblem::new(build_mesh(&surface, (5, 5, 6)).unwrap(), surface).unwrap(),
        &grf,
        7,
    );
    let layered = ChipStack::three_layer_benchmark();
    let mut comps = benchmark_components(1);
    comps.truncate(3);
    let fp = SamplerSpec::Floorplan {
        grid: [4, 4],
        layer: 1,
        components: comps,
    };
    let g2 = gradient_error(
        &PhysicsProblem::new(build_mesh(&layered, (5, 5, 9)).unwrap(), layered).unwrap(),
        &fp,
        8,
    );
    let grad = g1.max(g2);
    verdict(
        deriv <= 1e-5 && grad <= 1e-4,
        format!("spatial derivatives worst {deriv:.1e} over 2x1000 points; loss gradient worst {grad:.1e} over 2x20 parameters"),
    )
}

// ---------------------------------------------------------------- 6, 7, 8

const DESK_ITERATIONS: usize = 2000;

fn desk_spec(trunk: TrunkSpec) -> ModelSpec {
    ModelSpec {
        trunk,
        output_scale: 10.0,
        branch_hidden: vec![256; 3],
        ..ModelSpec::default()
    }
}

fn desk_config(sampler: SamplerSpec) -> TrainConfig {
    TrainConfig {
        iterations: DESK_ITERATIONS,
        batch: 8,
        adam: AdamConfig {
            lr: 3e-4,
            ..AdamConfig::default()
        },
        weights: LossWeights::default(),
        sampler,
        seed: 1,
        checkpoint_every: 0,
    }
}

fn train(spec: ModelSpec, problem: PhysicsProblem, config: TrainConfig) -> (OperatorModel, f64) {
    let start = Instant::now();
    let mut trainer = Trainer::init(spec, problem, config).unwrap();
    while trainer.iteration() < trainer.config().iterations {
        trainer.step().unwrap();
    }
    (trainer.into_model(), start.elapsed().as_secs_f64())
}

struct Surface {
    stack: ChipStack,
    problem: PhysicsProblem,
}

impl Surface {
    fn new() -> Self {
        let stack = ChipStack::surface_benchmark();
        let problem =
            PhysicsProblem::new(build_mesh(&stack, (21, 21, 11)).unwrap(), stack.clone()).unwrap();
        Self { stack, problem }
    }

    fn mesh(&self) -> &chipheat::domain::Mesh {
        self.problem.mesh()
    }

    fn train(&self, trunk: TrunkSpec) -> (OperatorModel, f64) {
        let sampler = SamplerSpec::Grf {
            tiles: 20,
            length_scale: 0.3,
            unit_power: DEFAULT_TILE_UNIT_POWER,
        };
        train(desk_spec(trunk), self.problem.clone(), desk_config(sampler))
    }

    /// Held-out GRF maps drawn from a seed the trainer never uses.
    fn grf_designs(&self, n: usize, seed: u64) -> Vec<PowerSpec> {
        let grf = GrfSampler::new(20, 0.3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                PowerSpec::SurfaceTiles(
                    sample_grf(&grf, DEFAULT_TILE_UNIT_POWER, &mut rng).unwrap(),
                )
            })
            .collect()
    }
}

/// Mean MAPE and mean max-error/peak-rise against reference solves.
fn accuracy(model: &OperatorModel, surface: &Surface, designs: &[PowerSpec]) -> (f64, f64) {
    let mesh = surface.mesh();
    let (mut m, mut rel) = (0.0, 0.0);
    for d in designs {
        let (reference, _) = reference_solve(&assemble(mesh, &surface.stack, d).unwrap()).unwrap();
        let pred = model
            .eval_grid(&model.encode(d).unwrap(), [&mesh.x, &mesh.y, &mesh.z])
            .unwrap();
        m += mape(&pred, &reference).unwrap();
        let err = pred
            .values()
            .iter()
            .zip(reference.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        rel += err / (reference.max() - T_AMB);
    }
    (m / designs.len() as f64, rel / designs.len() as f64)
}

fn criterion_6(surface: &Surface, kan: &(OperatorModel, f64)) -> Verdict {
    let (mlp, mlp_secs) = surface.train(TrunkSpec::mlp_default());
    let mut designs = surface.grf_designs(10, 12345);
    let mut rng = ChaCha8Rng::seed_from_u64(54321);
    designs.extend((0..5).map(|_| {
        PowerSpec::SurfaceTiles(block_pattern(20, DEFAULT_TILE_UNIT_POWER, &mut rng).unwrap())
    }));
    let (kan_mape, kan_rel) = accuracy(&kan.0, surface, &designs);
    let (mlp_mape, mlp_rel) = accuracy(&mlp, surface, &designs);
    verdict(
        kan_mape <= 1.0 && kan_mape <= mlp_mape,
        format!(
            "MAPE KAN {kan_mape:.3}% vs MLP {mlp_mape:.3}% over 10 GRF + 5 block maps (max error / peak rise {kan_rel:.2} \
             vs {mlp_rel:.2}; training {:.0} s and {mlp_secs:.0} s)",
            kan.1
        ),
    )
}

fn criterion_7(surface: &Surface, kan: &OperatorModel) -> Verdict {
    let ev = HybridEvaluator::new(Some(kan), surface.mesh(), &surface.stack, 1.0).unwrap();
    let designs = surface.grf_designs(20, 777);
    let rows = warmstart_study(
        &ev,
        &designs,
        &GmresParams::REFINEMENT,
        &mut ChaCha8Rng::seed_from_u64(7),
    )
    .unwrap();
    let ratios: Vec<f64> = rows.iter().map(|r| r.ratio()).collect();
    let cold: Vec<f64> = rows.iter().map(|r| r.cold_zero.iterations as f64).collect();
    let warm: Vec<f64> = rows.iter().map(|r| r.warm.iterations as f64).collect();
    let random: Vec<f64> = rows
        .iter()
        .map(|r| r.cold_random.iterations as f64)
        .collect();
    let initial: Vec<f64> = rows.iter().map(|r| r.warm.history[0]).collect();
    let med = median(&ratios);
    verdict(
        med <= 0.1,
        format!(
            "median warm/cold iteration ratio {med:.3} over 20 designs at tol 0.05 (median iterations: cold {} / \
             random start {} / warm {}; median initial warm residual {:.3})",
            median(&cold),
            median(&random),
            median(&warm),
            median(&initial)
        ),
    )
}

fn criterion_8(surface: &Surface, kan: &OperatorModel) -> Verdict {
    let mut ev = HybridEvaluator::new(Some(kan), surface.mesh(), &surface.stack, 1.0).unwrap();
    // Calibrated on designs disjoint from the evaluation set.
    ev.alpha = calibrate_alpha(&ev, &surface.grf_designs(400, 808), 0.7).unwrap();
    let mut refined = 0;
    let mut unsound = 0;
    let mut worst_refined = 0.0f64;
    for d in surface.grf_designs(200, 909) {
        let (_, report) = ev.evaluate(&d, EvalMode::Hybrid).unwrap();
        if report.refined {
            refined += 1;
            let stats = report.gmres_stats.as_ref().unwrap();
            worst_refined = worst_refined.max(stats.final_relative_residual);
            if !(stats.converged && stats.final_relative_residual <= 0.05) {
                unsound += 1;
            }
        } else if !(report.rel_residual < ev.alpha) {
            unsound += 1;
        }
    }
    let rate = refined as f64 / 200.0;
    verdict(
        unsound == 0 && (rate - 0.3).abs() <= 0.05,
        format!(
            "alpha {:.4} (70th percentile of 400 held-out scores); refined {refined}/200 = {:.1}%; unsound outputs \
             {unsound}; worst refined residual {worst_refined:.3}",
            ev.alpha,
            100.0 * rate
        ),
    )
}

// ---------------------------------------------------------------- 9

fn sa_config(mode: EvalMode) -> SaConfig {
    SaConfig {
        initial_temperature: 0.5,
        cooling_rate: 0.997,
        iterations: 300,
        base_neighborhood: 25,
        penalty_weight: 0.01,
        seed: 9,
        mode,
    }
}

fn criterion_9() -> Verdict {
    let stack = ChipStack::three_layer_benchmark();
    let mesh = build_mesh(&stack, (41, 41, 23)).unwrap();
    let problem = PhysicsProblem::new(mesh.clone(), stack.clone()).unwrap();
    let components = benchmark_components(8);
    let sampler = SamplerSpec::Floorplan {
        grid: [40, 40],
        layer: 1,
        components: components.clone(),
    };
    let (model, train_secs) = train(
        desk_spec(TrunkSpec::kan_default()),
        problem,
        desk_config(sampler),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(9000);
    let held_out: Vec<PowerSpec> = (0..100)
        .map(|_| PowerSpec::Floorplan(sample_floorplan(&components, 40, 40, 1, &mut rng).unwrap()))
        .collect();
    let mut ev = HybridEvaluator::new(Some(&model), &mesh, &stack, 1.0).unwrap();
    ev.alpha = calibrate_alpha(&ev, &held_out, 0.7).unwrap();
    let (mut sum_mape, mut sum_err) = (0.0, 0.0);
    for d in &held_out[..5] {
        let (reference, _) = reference_solve(&assemble(&mesh, &stack, d).unwrap()).unwrap();
        let pred = model
            .eval_grid(&model.encode(d).unwrap(), [&mesh.x, &mesh.y, &mesh.z])
            .unwrap();
        sum_mape += mape(&pred, &reference).unwrap();
        sum_err += pred.max() - reference.max();
    }

    let initial =
        sample_floorplan(&components, 40, 40, 1, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let mut peak = std::collections::HashMap::new();
    let mut solves = std::collections::HashMap::new();
    let mut notes = Vec::new();
    for mode in [EvalMode::FdOnly, EvalMode::OperatorOnly, EvalMode::Hybrid] {
        let start = Instant::now();
        let out = sa_optimize(
            &sa_config(mode),
            &mut ModeEvaluator {
                evaluator: &ev,
                mode,
            },
            &initial,
        )
        .unwrap();
        // Every mode's best design is re-solved at the reference tolerance.
        let (field, _) = reference_solve(
            &assemble(&mesh, &stack, &PowerSpec::Floorplan(out.best.clone())).unwrap(),
        )
        .unwrap();
        notes.push(format!(
            "{}: peak {:.2} K (own estimate {:.2} K), {} solves, {:.0} s",
            mode.as_str(),
            field.max(),
            out.best_peak,
            out.fd_solves,
            start.elapsed().as_secs_f64()
        ));
        peak.insert(mode.as_str(), field.max());
        solves.insert(mode.as_str(), out.fd_solves as f64);
    }
    let (fd, op, hy) = (peak["fd_only"], peak["operator_only"], peak["hybrid"]);
    let share = solves["hybrid"] / solves["fd_only"];
    verdict(
        hy <= op && hy - fd <= 0.5 && share <= 0.35,
        format!(
            "verified peaks fd {fd:.2} / operator {op:.2} / hybrid {hy:.2} K; hybrid solves {:.0}% of fd mode's \
             [{}]; model: {train_secs:.0} s training, held-out MAPE {:.2}%, mean peak error {:+.2} K, alpha {:.3}",
            100.0 * share,
            notes.join("; "),
            sum_mape / 5.0,
            sum_err / 5.0,
            ev.alpha
        ),
    )
}

// ---------------------------------------------------------------- 10, 11

fn criterion_10() -> Verdict {
    let target = SpectralTarget::new(vec![0.9, -0.7, 0.5, 0.4, -0.3, 0.2, 0.1], 6).unwrap();
    let eta = 1.0;
    let dt = 1e-3;
    assert!(eta * PI * dt <= 0.1);
    let steps = 2000;
    let runs: Vec<_> = [1, 2, 4]
        .iter()
        .map(|&m| run_gradient_flow(&target, eta, m * steps, dt / m as f64, 20 * m).unwrap())
        .collect();
    let coarse = &runs[0];
    let rates: Vec<f64> = fit_decay_rates(coarse)
        .iter()
        .map(|f| f.rate.unwrap())
        .collect();
    let common = rates[1..].iter().sum::<f64>() / (rates.len() - 1) as f64;
    let ratio = rates[0] / common;
    let (lo, hi) = rates[1..]
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &r| {
            (lo.min(r), hi.max(r))
        });
    let spread = hi / lo - 1.0;
    // Explicit Euler has an error expansion in powers of dt; two Richardson
    // levels over dt, dt/2, dt/4 cancel the first- and second-order terms.
    let mut traj = 0.0f64;
    for k in 0..coarse.errors.len() {
        for s in 0..coarse.times.len() {
            let [a, b, c] = [0, 1, 2].map(|r| runs[r].errors[k][s]);
            let ext = (8.0 * c - 6.0 * b + a) / 3.0;
            let exact = coarse.closed_form(k, s);
            traj = traj.max((ext - exact).abs() / exact.abs());
        }
    }
    verdict(
        (ratio / 2.0 - 1.0).abs() <= 0.05 && spread <= 0.05 && traj <= 1e-6,
        format!(
            "rate(mode 0) = {:.4}, common rate = {common:.4}, ratio {ratio:.4}; spread of modes 1-6 {:.2}%; \
             extrapolated trajectories within {traj:.1e} of closed form",
            rates[0],
            100.0 * spread
        ),
    )
}

fn criterion_11() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (delta, t, n): (f64, f64, usize) = (0.3, 0.5, 10_000);
    let p = (-delta / t).exp();
    let hits = (0..n)
        .filter(|_| metropolis_accept(1.0, 1.0 + delta, t, &mut rng))
        .count();
    let sigma = (n as f64 * p * (1.0 - p)).sqrt();
    let z = (hits as f64 - n as f64 * p) / sigma;
    verdict(
        z.abs() <= 3.0,
        format!(
            "{hits}/{n} accepted, expected {:.1} (z = {z:.2})",
            n as f64 * p
        ),
    )
}

// ----------------------------------------------------------------

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let strict = args.iter().any(|a| a == "--strict");
    let selected: Vec<usize> = args.iter().filter_map(|a| a.parse().ok()).collect();
    let wanted = |c: usize| selected.is_empty() || selected.contains(&c);
    let mut failed = 0;
    let mut report = |id: usize, name: &str, run: &mut dyn FnMut() -> Verdict| {
        if !wanted(id) {
            return;
        }
        let start = Instant::now();
        let v = run();
        let tag = if v.pass { "PASS" } else { "FAIL" };
        println!(
            "{tag} criterion {id:>2} ({name}, {:.1} s): {}",
            start.elapsed().as_secs_f64(),
            v.detail
        );
        failed += usize::from(!v.pass);
    };
    report(1, "FD correctness", &mut criterion_1);
    report(2, "FD equilibrium", &mut criterion_2);
    report(3, "GMRES vs dense LU", &mut criterion_3);
    report(4, "separable equivalence", &mut criterion_4);
    report(5, "derivative fidelity", &mut criterion_5);
    if [6, 7, 8].iter().any(|&c| wanted(c)) {
        let surface = Surface::new();
        let kan = surface.train(TrunkSpec::kan_default());
        report(6, "desk-scale accuracy", &mut || {
            criterion_6(&surface, &kan)
        });
        report(7, "warm-start benefit", &mut || {
            criterion_7(&surface, &kan.0)
        });
        report(8, "hybrid gate soundness", &mut || {
            criterion_8(&surface, &kan.0)
        });
    }
    report(9, "desk-scale optimisation", &mut criterion_9);
    report(10, "NTK decay rates", &mut criterion_10);
    report(11, "Metropolis statistics", &mut criterion_11);
    println!("{failed} failed");
    if strict && failed > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
