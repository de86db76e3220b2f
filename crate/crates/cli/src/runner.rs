//! Subcommand drivers: each one runs the toolkit on a parsed config and
//! writes a deterministic output bundle (CSV fields, `key = value` reports,
//! and a digest manifest written last).

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use ac_control::{
    adjoint_gradient_part, audit_domination, audit_sparsity_pattern, continuity_test,
    control_norm, estimate_separation, estimate_vanishing_threshold, eval_smooth_cost, optimize,
    quadratic_form_d2j, quadratic_growth_probe, sample_coercivity, singular_blowup_probe,
    smooth_directional_derivative, solve_adjoint, solve_linearized, solve_state,
    solve_state_with_stats, taylor_test_ds, verify_first_order, ConeSpec, ControlPair,
    CostWeights, FirstOrderReport, Mesh, OptimizationReport, PotentialKind, PotentialSpec,
    Problem, SolveStats, SparsityReport, StopReason, TimeGrid,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::io::{
    fmt_float, render_adjoint_boundary, render_adjoint_bulk, render_control_boundary,
    render_control_bulk, render_report, render_trajectory_boundary, render_trajectory_bulk,
    OutputWriter, TimeConvention,
};

/// The six subcommands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubcommandKind {
    SolveState,
    Optimize,
    CheckGradient,
    CheckSoc,
    SweepAlpha,
    AuditAssumptions,
}

impl SubcommandKind {
    fn name(self) -> &'static str {
        match self {
            SubcommandKind::SolveState => "solve-state",
            SubcommandKind::Optimize => "optimize",
            SubcommandKind::CheckGradient => "check-gradient",
            SubcommandKind::CheckSoc => "check-soc",
            SubcommandKind::SweepAlpha => "sweep-alpha",
            SubcommandKind::AuditAssumptions => "audit-assumptions",
        }
    }
}

/// Everything a subcommand run needs besides the subcommand itself.
pub struct RunContext {
    pub config: RunConfig,
    pub out: PathBuf,
    pub seed: u64,
    pub threads: usize,
}

/// Runs one subcommand end to end.
pub fn run(kind: SubcommandKind, ctx: &RunContext) -> Result<(), CliError> {
    let started = Instant::now();
    let mut writer = OutputWriter::create(&ctx.out)?;
    writer.write("config_echo.txt", &ctx.config.raw)?;

    match kind {
        SubcommandKind::SolveState => solve_state_cmd(ctx, &mut writer)?,
        SubcommandKind::Optimize => optimize_cmd(ctx, &mut writer)?,
        SubcommandKind::CheckGradient => check_gradient_cmd(ctx, &mut writer)?,
        SubcommandKind::CheckSoc => check_soc_cmd(ctx, &mut writer)?,
        SubcommandKind::SweepAlpha => sweep_alpha_cmd(ctx, &mut writer)?,
        SubcommandKind::AuditAssumptions => audit_assumptions_cmd(ctx, &mut writer)?,
    }

    let mut config_digest = String::with_capacity(64);
    for b in Sha256::digest(ctx.config.raw.as_bytes()) {
        config_digest.push_str(&format!("{b:02x}"));
    }
    writer.finish(&[
        ("tool", format!("acctl {}", env!("CARGO_PKG_VERSION"))),
        ("subcommand", kind.name().to_string()),
        ("seed", ctx.seed.to_string()),
        ("threads", ctx.threads.to_string()),
        ("config_sha256", config_digest),
        ("elapsed_ms", started.elapsed().as_millis().to_string()),
    ])?;
    Ok(())
}

fn stop_name(stop: StopReason) -> &'static str {
    match stop {
        StopReason::Converged => "converged",
        StopReason::MaxIters => "max_iters",
        StopReason::StepUnderflow => "step_underflow",
    }
}

/// Seeded Gaussian direction of unit control norm.
fn unit_direction(mesh: &Mesh, grid: &TimeGrid, rng: &mut ChaCha8Rng) -> ControlPair {
    let mut d = ControlPair::zeros(mesh, grid);
    loop {
        for s in 0..grid.n_t() {
            for x in d.bulk[s].values_mut() {
                let u1: f64 = 1.0 - rng.gen::<f64>();
                let u2: f64 = rng.gen::<f64>();
                *x = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
            }
            for x in d.boundary[s].values_mut() {
                let u1: f64 = 1.0 - rng.gen::<f64>();
                let u2: f64 = rng.gen::<f64>();
                *x = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
            }
        }
        let norm = control_norm(&d, mesh, grid);
        if norm > 0.0 {
            d.scale(1.0 / norm);
            return d;
        }
    }
}

fn solve_stats_pairs(stats: &SolveStats) -> Vec<(&'static str, String)> {
    vec![
        ("newton_iters_total", stats.newton_iters_total.to_string()),
        ("max_newton_iters", stats.max_newton_iters.to_string()),
        ("guard_rejections", stats.guard_rejections.to_string()),
        ("min_separation", fmt_float(stats.min_separation)),
        ("weak_residual", fmt_float(stats.weak_residual)),
    ]
}

fn solve_state_cmd(ctx: &RunContext, writer: &mut OutputWriter) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let mesh = cfg.build_mesh()?;
    let grid = cfg.build_grid()?;
    let y0 = cfg.build_initial(&mesh);
    let u = cfg.build_control(&mesh, &grid);
    if !cfg.bounds.contains(&u) {
        return Err(CliError::config(format!(
            "the configured control ({}, {}) lies outside the control box",
            cfg.control.0, cfg.control.1
        )));
    }

    let (traj, stats) = solve_state_with_stats(&mesh, &grid, &cfg.potentials, &y0, &u, &cfg.solver)?;
    let sep = estimate_separation(&traj);

    writer.write_field(
        "state_bulk",
        "bulk",
        TimeConvention::Levels,
        &mesh,
        &grid,
        &render_trajectory_bulk(&mesh, &traj),
    )?;
    writer.write_field(
        "state_boundary",
        "boundary",
        TimeConvention::Levels,
        &mesh,
        &grid,
        &render_trajectory_boundary(&mesh, &traj),
    )?;

    let mut pairs = vec![("subcommand", "solve-state".to_string())];
    pairs.extend(solve_stats_pairs(&stats));
    pairs.extend([
        ("min_value", fmt_float(sep.min_value)),
        ("max_value", fmt_float(sep.max_value)),
        ("wall_margin", fmt_float(sep.wall_margin())),
        ("terminal_max_abs", fmt_float(traj.terminal().max_abs())),
    ]);
    writer.write("solve_report.txt", &render_report(&pairs))?;
    Ok(())
}

/// Report lines shared by `optimize` and each sweep entry.
fn optimize_report_pairs(
    report: &OptimizationReport,
    fo: &FirstOrderReport,
    sparsity: Option<&SparsityReport>,
) -> Vec<(&'static str, String)> {
    let mut pairs = vec![
        ("stop", stop_name(report.stop).to_string()),
        ("iterations", report.iterations.to_string()),
        ("cost", fmt_float(report.cost)),
        ("smooth_total", fmt_float(report.smooth.total)),
        ("distributed_bulk", fmt_float(report.smooth.distributed_bulk)),
        ("distributed_surface", fmt_float(report.smooth.distributed_surface)),
        ("terminal_bulk", fmt_float(report.smooth.terminal_bulk)),
        ("terminal_surface", fmt_float(report.smooth.terminal_surface)),
        ("control_bulk_cost", fmt_float(report.smooth.control_bulk)),
        ("control_surface_cost", fmt_float(report.smooth.control_surface)),
        ("sparsity_cost", fmt_float(report.sparsity_cost)),
        ("residual", fmt_float(report.residual)),
        ("control_max_abs", fmt_float(report.control.max_abs())),
        ("vi_min", fmt_float(fo.vi_min)),
        ("max_interior_gradient", fmt_float(fo.max_interior_gradient)),
        ("n_lower_active", fo.n_lower_active.to_string()),
        ("n_upper_active", fo.n_upper_active.to_string()),
        ("n_interior", fo.n_interior.to_string()),
    ];
    pairs.extend(solve_stats_pairs(&report.forward_stats));
    if let Some(sp) = sparsity {
        pairs.extend([
            ("support_measure_bulk", fmt_float(sp.support_measure_bulk)),
            ("support_measure_boundary", fmt_float(sp.support_measure_boundary)),
            ("violation_measure_bulk", fmt_float(sp.violation_measure_bulk)),
            ("violation_measure_boundary", fmt_float(sp.violation_measure_boundary)),
            ("domain_measure_bulk", fmt_float(sp.domain_measure_bulk)),
            ("domain_measure_boundary", fmt_float(sp.domain_measure_boundary)),
            ("relative_band", fmt_float(sp.relative_band)),
        ]);
    }
    pairs
}

fn render_history_csv(report: &OptimizationReport) -> String {
    let mut out = String::from("iter,cost,smooth_cost,sparsity_cost,residual,step,backtracks\n");
    for rec in &report.history {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            rec.iter,
            fmt_float(rec.cost),
            fmt_float(rec.smooth_cost),
            fmt_float(rec.sparsity_cost),
            fmt_float(rec.residual),
            fmt_float(rec.step),
            rec.backtracks
        ));
    }
    out
}

/// Runs the optimizer and the post-run audits for one problem instance.
fn optimize_and_audit(
    problem: &Problem,
    cfg: &RunConfig,
    initial: Option<&ControlPair>,
) -> Result<(OptimizationReport, FirstOrderReport, Option<SparsityReport>), CliError> {
    let opts = cfg.optimize_options();
    let report = optimize(problem, &opts, initial)?;
    let fo = verify_first_order(
        &problem.mesh,
        &problem.grid,
        &report.control,
        &report.adjoint_part,
        &report.lambda,
        &problem.weights,
        &problem.bounds,
        opts.opt_tol,
    );
    let sparsity = if problem.mode.is_sparse() {
        Some(audit_sparsity_pattern(
            &problem.mesh,
            &problem.grid,
            problem.mode,
            &report.control,
            &report.adjoint_part,
            problem.weights.alpha,
            problem.weights.alpha_gamma,
            cfg.band,
        )?)
    } else {
        None
    };
    Ok((report, fo, sparsity))
}

fn optimize_cmd(ctx: &RunContext, writer: &mut OutputWriter) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let mesh = cfg.build_mesh()?;
    let grid = cfg.build_grid()?;
    let problem = cfg.build_problem(&mesh, &grid)?;
    let initial = cfg.build_control(&mesh, &grid);

    let (report, fo, sparsity) = optimize_and_audit(&problem, cfg, Some(&initial))?;

    writer.write_field(
        "control_bulk",
        "bulk",
        TimeConvention::Slabs,
        &mesh,
        &grid,
        &render_control_bulk(&mesh, &report.control),
    )?;
    writer.write_field(
        "control_boundary",
        "boundary",
        TimeConvention::Slabs,
        &mesh,
        &grid,
        &render_control_boundary(&mesh, &report.control),
    )?;
    writer.write_field(
        "state_bulk",
        "bulk",
        TimeConvention::Levels,
        &mesh,
        &grid,
        &render_trajectory_bulk(&mesh, &report.trajectory),
    )?;
    writer.write_field(
        "state_boundary",
        "boundary",
        TimeConvention::Levels,
        &mesh,
        &grid,
        &render_trajectory_boundary(&mesh, &report.trajectory),
    )?;
    writer.write_field(
        "adjoint_bulk",
        "bulk",
        TimeConvention::SlabsPlusTerminal,
        &mesh,
        &grid,
        &render_adjoint_bulk(&mesh, &report.adjoint),
    )?;
    writer.write_field(
        "adjoint_boundary",
        "boundary",
        TimeConvention::SlabsPlusTerminal,
        &mesh,
        &grid,
        &render_adjoint_boundary(&mesh, &report.adjoint),
    )?;
    writer.write("history.csv", &render_history_csv(&report))?;

    let mut pairs = vec![("subcommand", "optimize".to_string())];
    pairs.extend(optimize_report_pairs(&report, &fo, sparsity.as_ref()));
    writer.write("optimize_report.txt", &render_report(&pairs))?;
    Ok(())
}

const FD_STEPS: [f64; 3] = [1e-3, 1e-4, 1e-5];

fn check_gradient_cmd(ctx: &RunContext, writer: &mut OutputWriter) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let mesh = cfg.build_mesh()?;
    let grid = cfg.build_grid()?;
    let problem = cfg.build_problem(&mesh, &grid)?;
    let u0 = cfg.build_control(&mesh, &grid);
    let opts = &cfg.solver;

    let base = solve_state(&mesh, &grid, &problem.potentials, &problem.y0, &u0, opts)?;
    let adj = solve_adjoint(
        &mesh,
        &grid,
        &problem.potentials,
        &base,
        &problem.targets,
        &problem.weights,
        opts,
    )?;
    let p = adjoint_gradient_part(&mesh, &grid, &adj);
    let mut grad = p;
    for s in 0..grid.n_t() {
        grad.bulk[s].axpy(problem.weights.nu, &u0.bulk[s]);
        grad.boundary[s].axpy(problem.weights.nu_gamma, &u0.boundary[s]);
    }
    let j0 = eval_smooth_cost(&mesh, &grid, &base, &u0, &problem.targets, &problem.weights)?.total;

    let smooth_at = |u: &ControlPair| -> Result<f64, CliError> {
        let traj = solve_state(&mesh, &grid, &problem.potentials, &problem.y0, u, opts)?;
        Ok(eval_smooth_cost(&mesh, &grid, &traj, u, &problem.targets, &problem.weights)?.total)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let mut grad_csv = String::from("direction,step,exact,finite_difference,rel_error\n");
    let mut second_csv = String::from("direction,step,exact,finite_difference,rel_error\n");
    let mut worst_best_grad = 0.0_f64;
    let mut worst_best_second = 0.0_f64;

    for k in 0..cfg.check.directions {
        let d = unit_direction(&mesh, &grid, &mut rng);
        let exact1 = smooth_directional_derivative(&grad, &d, &mesh, &grid);
        let phi = solve_linearized(&mesh, &grid, &problem.potentials, &base, &d, None, opts)?;
        let exact2 = quadratic_form_d2j(
            &mesh,
            &grid,
            &problem.potentials,
            &base,
            &adj,
            &problem.weights,
            &d,
            &phi,
            &d,
            &phi,
        )?;

        let mut best1 = f64::INFINITY;
        let mut best2 = f64::INFINITY;
        for &eps in FD_STEPS.iter() {
            let mut up = u0.clone();
            up.axpy(eps, &d);
            let mut um = u0.clone();
            um.axpy(-eps, &d);
            let jp = smooth_at(&up)?;
            let jm = smooth_at(&um)?;

            let fd1 = (jp - jm) / (2.0 * eps);
            let rel1 = (fd1 - exact1).abs() / exact1.abs().max(1e-14);
            grad_csv.push_str(&format!(
                "{k},{},{},{},{}\n",
                fmt_float(eps),
                fmt_float(exact1),
                fmt_float(fd1),
                fmt_float(rel1)
            ));
            best1 = best1.min(rel1);

            let fd2 = (jp - 2.0 * j0 + jm) / (eps * eps);
            let rel2 = (fd2 - exact2).abs() / exact2.abs().max(1e-14);
            second_csv.push_str(&format!(
                "{k},{},{},{},{}\n",
                fmt_float(eps),
                fmt_float(exact2),
                fmt_float(fd2),
                fmt_float(rel2)
            ));
            best2 = best2.min(rel2);
        }
        worst_best_grad = worst_best_grad.max(best1);
        worst_best_second = worst_best_second.max(best2);
    }

    writer.write("gradient_table.csv", &grad_csv)?;
    writer.write("second_form_table.csv", &second_csv)?;
    writer.write(
        "check_gradient_report.txt",
        &render_report(&[
            ("subcommand", "check-gradient".to_string()),
            ("directions", cfg.check.directions.to_string()),
            (
                "steps",
                FD_STEPS
                    .iter()
                    .map(|v| fmt_float(*v))
                    .collect::<Vec<_>>()
                    .join(", "),
            ),
            ("smooth_cost", fmt_float(j0)),
            ("gradient_worst_best_rel_error", fmt_float(worst_best_grad)),
            ("second_form_worst_best_rel_error", fmt_float(worst_best_second)),
        ]),
    )?;
    Ok(())
}

const TAYLOR_STEPS: [f64; 4] = [0.3, 0.1, 0.03, 0.01];
const CONTINUITY_DELTAS: [f64; 4] = [0.4, 0.2, 0.1, 0.05];
const GROWTH_RADII: [f64; 2] = [0.1, 0.01];

fn check_soc_cmd(ctx: &RunContext, writer: &mut OutputWriter) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let mesh = cfg.build_mesh()?;
    let grid = cfg.build_grid()?;
    let problem = cfg.build_problem(&mesh, &grid)?;
    let initial = cfg.build_control(&mesh, &grid);

    // Probe at a stationary point: run the optimizer first.
    let (report, fo, _) = optimize_and_audit(&problem, cfg, Some(&initial))?;
    let u_star = &report.control;

    let mut cone = ConeSpec::scaled(
        problem.weights.alpha.max(problem.weights.alpha_gamma),
        problem.weights.nu.max(problem.weights.nu_gamma),
        u_star.max_abs(),
    );
    if cfg.check.larger_cone {
        cone = cone.enlarged();
    }
    let coercivity = sample_coercivity(
        &problem,
        u_star,
        &cone,
        cfg.check.samples,
        ctx.seed,
        &cfg.solver,
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let h = unit_direction(&mesh, &grid, &mut rng);
    let taylor = taylor_test_ds(
        &mesh,
        &grid,
        &problem.potentials,
        &problem.y0,
        u_star,
        &h,
        &TAYLOR_STEPS,
        &cfg.solver,
    )?;
    let continuity = continuity_test(&problem, u_star, &h, &CONTINUITY_DELTAS, &cfg.solver)?;
    let growth = quadratic_growth_probe(
        &problem,
        u_star,
        &GROWTH_RADII,
        cfg.check.samples,
        ctx.seed.wrapping_add(1),
        &cfg.solver,
    )?;

    let mut rayleigh_csv = String::from("sample,rayleigh\n");
    for (i, r) in coercivity.rayleigh.iter().enumerate() {
        rayleigh_csv.push_str(&format!("{i},{}\n", fmt_float(*r)));
    }
    writer.write("rayleigh_samples.csv", &rayleigh_csv)?;

    let mut taylor_csv = String::from("tau,r1,r2\n");
    for i in 0..taylor.taus.len() {
        taylor_csv.push_str(&format!(
            "{},{},{}\n",
            fmt_float(taylor.taus[i]),
            fmt_float(taylor.r1[i]),
            fmt_float(taylor.r2[i])
        ));
    }
    writer.write("taylor_table.csv", &taylor_csv)?;

    let mut cont_csv = String::from("delta,adjoint_gap,dj,d2j\n");
    for i in 0..continuity.deltas.len() {
        cont_csv.push_str(&format!(
            "{},{},{},{}\n",
            fmt_float(continuity.deltas[i]),
            fmt_float(continuity.adjoint_gaps[i]),
            fmt_float(continuity.dj[i]),
            fmt_float(continuity.d2j[i])
        ));
    }
    writer.write("continuity_table.csv", &cont_csv)?;

    let mut growth_csv = String::from("radius,min_ratio\n");
    for i in 0..growth.radii.len() {
        growth_csv.push_str(&format!(
            "{},{}\n",
            fmt_float(growth.radii[i]),
            fmt_float(growth.min_ratio[i])
        ));
    }
    writer.write("growth_table.csv", &growth_csv)?;

    writer.write(
        "soc_report.txt",
        &render_report(&[
            ("subcommand", "check-soc".to_string()),
            ("optimizer_stop", stop_name(report.stop).to_string()),
            ("optimizer_iterations", report.iterations.to_string()),
            ("optimizer_residual", fmt_float(report.residual)),
            ("vi_min", fmt_float(fo.vi_min)),
            ("cone_tol_act", fmt_float(cone.tol_act)),
            ("larger_cone", cone.larger_cone.to_string()),
            ("n_samples", coercivity.n_samples.to_string()),
            ("n_zero_projections", coercivity.n_zero_projections.to_string()),
            ("min_rayleigh", fmt_float(coercivity.min_rayleigh)),
            ("max_rayleigh", fmt_float(coercivity.max_rayleigh)),
            ("mean_rayleigh", fmt_float(coercivity.mean_rayleigh)),
            (
                "oracle_rel_error",
                coercivity
                    .oracle_rel_err
                    .map(fmt_float)
                    .unwrap_or_else(|| "none".to_string()),
            ),
            (
                "all_projections_zero",
                coercivity.all_projections_zero.to_string(),
            ),
            ("taylor_slope1", fmt_float(taylor.slope1)),
            ("taylor_slope2", fmt_float(taylor.slope2)),
            ("dj_limit", fmt_float(continuity.dj_limit)),
            ("d2j_limit", fmt_float(continuity.d2j_limit)),
            ("growth_f_star", fmt_float(growth.f_star)),
        ]),
    )?;
    Ok(())
}

struct SweepEntry {
    index: usize,
    alpha: f64,
    alpha_gamma: f64,
    report: OptimizationReport,
    fo: FirstOrderReport,
    sparsity: SparsityReport,
}

fn sweep_alpha_cmd(ctx: &RunContext, writer: &mut OutputWriter) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let sweep = cfg.sweep.as_ref().ok_or_else(|| {
        CliError::config("sweep-alpha needs a sweep.alpha list in the config")
    })?;
    if !cfg.mode.is_sparse() {
        return Err(CliError::config(
            "sweep-alpha requires sparsity.mode = full or time",
        ));
    }
    let mesh = cfg.build_mesh()?;
    let grid = cfg.build_grid()?;
    let base_problem = cfg.build_problem(&mesh, &grid)?;

    // The vanishing check: certify the zero-control threshold once.
    let threshold = estimate_vanishing_threshold(
        &mesh,
        &grid,
        &base_problem.potentials,
        &base_problem.y0,
        &base_problem.targets,
        &base_problem.weights,
        base_problem.mode,
        &base_problem.bounds,
        cfg.probes,
        ctx.seed,
        &cfg.solver,
    )?;

    let n_entries = sweep.alpha.len();
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<SweepEntry, CliError>>>> =
        Mutex::new((0..n_entries).map(|_| None).collect());

    let worker = |_worker_id: usize| {
        loop {
            let k = next.fetch_add(1, Ordering::SeqCst);
            if k >= n_entries {
                break;
            }
            let mut problem = base_problem.clone();
            problem.weights.alpha = sweep.alpha[k];
            problem.weights.alpha_gamma = sweep.alpha_gamma[k];
            let result = optimize_and_audit(&problem, cfg, None).map(|(report, fo, sparsity)| {
                SweepEntry {
                    index: k,
                    alpha: sweep.alpha[k],
                    alpha_gamma: sweep.alpha_gamma[k],
                    report,
                    fo,
                    // Sparse mode is enforced above, so the audit is present.
                    sparsity: sparsity.expect("sparse mode produces a sparsity audit"),
                }
            });
            results.lock().unwrap()[k] = Some(result);
        }
    };

    let n_workers = ctx.threads.max(1).min(n_entries);
    if n_workers <= 1 {
        worker(0);
    } else {
        let worker = &worker;
        std::thread::scope(|scope| {
            for w in 0..n_workers {
                scope.spawn(move || worker(w));
            }
        });
    }

    let mut entries = Vec::with_capacity(n_entries);
    for slot in results.into_inner().unwrap() {
        entries.push(slot.expect("every sweep entry is computed")?);
    }

    let mut summary = String::from(
        "index,alpha,alpha_gamma,support_bulk,support_boundary,violation_bulk,violation_boundary,cost,residual,iterations,control_max_abs\n",
    );
    for e in &entries {
        summary.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            e.index,
            fmt_float(e.alpha),
            fmt_float(e.alpha_gamma),
            fmt_float(e.sparsity.support_measure_bulk),
            fmt_float(e.sparsity.support_measure_boundary),
            fmt_float(e.sparsity.violation_measure_bulk),
            fmt_float(e.sparsity.violation_measure_boundary),
            fmt_float(e.report.cost),
            fmt_float(e.report.residual),
            e.report.iterations,
            fmt_float(e.report.control.max_abs())
        ));

        let dir = format!("alpha_{:02}", e.index);
        writer.write_field(
            &format!("{dir}/control_bulk"),
            "bulk",
            TimeConvention::Slabs,
            &mesh,
            &grid,
            &render_control_bulk(&mesh, &e.report.control),
        )?;
        writer.write_field(
            &format!("{dir}/control_boundary"),
            "boundary",
            TimeConvention::Slabs,
            &mesh,
            &grid,
            &render_control_boundary(&mesh, &e.report.control),
        )?;
        let mut pairs = vec![
            ("subcommand", "sweep-alpha".to_string()),
            ("index", e.index.to_string()),
            ("alpha", fmt_float(e.alpha)),
            ("alpha_gamma", fmt_float(e.alpha_gamma)),
        ];
        pairs.extend(optimize_report_pairs(&e.report, &e.fo, Some(&e.sparsity)));
        writer.write(&format!("{dir}/optimize_report.txt"), &render_report(&pairs))?;
    }
    writer.write("sweep_summary.csv", &summary)?;

    let last = entries.last().expect("a nonempty sweep");
    writer.write(
        "threshold_report.txt",
        &render_report(&[
            ("subcommand", "sweep-alpha".to_string()),
            ("mode", format!("{:?}", cfg.mode)),
            ("at_zero_bulk", fmt_float(threshold.at_zero_bulk)),
            ("at_zero_boundary", fmt_float(threshold.at_zero_boundary)),
            ("probe_bulk", fmt_float(threshold.probe_bulk)),
            ("probe_boundary", fmt_float(threshold.probe_boundary)),
            ("n_probes", threshold.n_probes.to_string()),
            ("final_alpha", fmt_float(last.alpha)),
            ("final_alpha_gamma", fmt_float(last.alpha_gamma)),
            (
                "final_support_bulk",
                fmt_float(last.sparsity.support_measure_bulk),
            ),
            (
                "final_support_boundary",
                fmt_float(last.sparsity.support_measure_boundary),
            ),
            (
                "final_control_max_abs",
                fmt_float(last.report.control.max_abs()),
            ),
            (
                "final_alpha_above_threshold",
                (last.alpha > threshold.at_zero_bulk
                    && last.alpha_gamma > threshold.at_zero_boundary)
                    .to_string(),
            ),
        ]),
    )?;
    Ok(())
}

/// Central-difference check of one analytic derivative order at one point.
fn derivative_check_rows(
    spec: &PotentialSpec,
    component: &str,
    points: &[f64],
    csv: &mut String,
    worst: &mut f64,
) -> Result<(), CliError> {
    let h = 1e-5;
    for &r in points {
        for order in 1..=3u32 {
            let analytic = spec.eval_derivative(order, r)?;
            let plus = spec.eval_derivative(order - 1, r + h)?;
            let minus = spec.eval_derivative(order - 1, r - h)?;
            let fd = (plus - minus) / (2.0 * h);
            let rel = (fd - analytic).abs() / analytic.abs().max(1.0);
            csv.push_str(&format!(
                "{component},{order},{},{},{},{}\n",
                fmt_float(r),
                fmt_float(analytic),
                fmt_float(fd),
                fmt_float(rel)
            ));
            *worst = worst.max(rel);
        }
    }
    Ok(())
}

fn audit_assumptions_cmd(ctx: &RunContext, writer: &mut OutputWriter) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let mesh = cfg.build_mesh()?;
    let grid = cfg.build_grid()?;
    let y0 = cfg.build_initial(&mesh);
    let pots = &cfg.potentials;

    // (A1): analytic derivative orders against central differences at
    // seeded interior points.
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let mut points: Vec<f64> = vec![-0.9, -0.5, 0.0, 0.5, 0.9];
    for _ in 0..8 {
        points.push(rng.gen_range(-0.9..0.9));
    }
    let mut derivative_csv = String::from("component,order,r,analytic,finite_difference,rel_error\n");
    let mut worst_rel = 0.0_f64;
    derivative_check_rows(&pots.bulk, "bulk", &points, &mut derivative_csv, &mut worst_rel)?;
    derivative_check_rows(&pots.surface, "surface", &points, &mut derivative_csv, &mut worst_rel)?;
    writer.write("derivative_check.csv", &derivative_csv)?;
    let derivatives_pass = worst_rel <= 1e-6;

    // (A1): domination of the bulk singular part by the surface one, and
    // the wall blow-up that powers the separation property.
    let both_logarithmic = pots.bulk.kind() == PotentialKind::Logarithmic
        && pots.surface.kind() == PotentialKind::Logarithmic;
    let (domination_pairs, blowup_line) = if both_logarithmic {
        let sample: Vec<f64> = (0..41).map(|i| -0.99 + 0.0495 * i as f64).collect();
        let audit = audit_domination(pots, &sample)?;
        let blowup = singular_blowup_probe(&pots.bulk, &[1e-1, 1e-2, 1e-3, 1e-4])?;
        (
            vec![
                ("a1_domination_m1", fmt_float(audit.m1)),
                ("a1_domination_m2", fmt_float(audit.m2)),
                ("a1_domination_feasible", audit.feasible.to_string()),
                ("a1_domination_worst_slack", fmt_float(audit.worst_slack)),
            ],
            blowup
                .iter()
                .map(|v| fmt_float(*v))
                .collect::<Vec<_>>()
                .join(", "),
        )
    } else {
        (
            vec![("a1_domination", "not_applicable".to_string())],
            "not_applicable".to_string(),
        )
    };

    // (A2): quantitative interiority of the initial datum.
    let margin = 1.0
        - pots
            .bulk
            .safe_margin()
            .max(pots.surface.safe_margin());

    // Separation spot check: solve the state at the configured control and
    // report how far the trajectory stays from the walls.
    let u = cfg.build_control(&mesh, &grid);
    let (traj, stats) = solve_state_with_stats(&mesh, &grid, pots, &y0, &u, &cfg.solver)?;
    let sep = estimate_separation(&traj);

    let w: &CostWeights = &cfg.weights;
    let mut pairs = vec![
        ("subcommand", "audit-assumptions".to_string()),
        ("a1_derivative_points", points.len().to_string()),
        ("a1_derivative_max_rel_error", fmt_float(worst_rel)),
        (
            "a1_derivatives",
            if derivatives_pass { "pass" } else { "fail" }.to_string(),
        ),
    ];
    pairs.extend(domination_pairs);
    pairs.push(("a1_blowup_probe", blowup_line));
    pairs.extend([
        ("a2_initial_max_abs", fmt_float(y0.max_abs())),
        ("a2_required_below", fmt_float(margin)),
        (
            "a2",
            if y0.max_abs() <= margin { "pass" } else { "fail" }.to_string(),
        ),
        (
            "a3_bound_radius",
            fmt_float(
                cfg.bounds
                    .rho_min
                    .abs()
                    .max(cfg.bounds.rho_max.abs())
                    .max(cfg.bounds.rho_gamma_min.abs())
                    .max(cfg.bounds.rho_gamma_max.abs()),
            ),
        ),
        ("a3", "pass".to_string()),
        (
            "a4_beta_sum",
            fmt_float(w.beta1 + w.beta2 + w.beta3 + w.beta4),
        ),
        ("a4_nu", fmt_float(w.nu)),
        ("a4_nu_gamma", fmt_float(w.nu_gamma)),
        ("a4", "pass".to_string()),
        ("a5", "pass".to_string()),
        ("a6_beta3", fmt_float(w.beta3)),
        ("a6_beta4", fmt_float(w.beta4)),
        ("a6", "pass".to_string()),
        (
            "a7_satisfied",
            (w.beta3 == 0.0 && w.beta4 == 0.0).to_string(),
        ),
        ("separation_min_value", fmt_float(sep.min_value)),
        ("separation_max_value", fmt_float(sep.max_value)),
        ("separation_wall_margin", fmt_float(sep.wall_margin())),
        (
            "separation_guard_rejections",
            stats.guard_rejections.to_string(),
        ),
        ("separation_min_observed", fmt_float(stats.min_separation)),
    ]);
    writer.write("audit_report.txt", &render_report(&pairs))?;
    Ok(())
}
