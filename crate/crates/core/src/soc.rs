//! Second-order sufficiency probes at a candidate stationary point.
//!
//! Nonconvex problems need more than a vanishing first-order residual. The
//! tools here sample the exact second variation `D^2 J` over the critical
//! cone of the candidate — the directions along which the first-order
//! conditions leave the objective flat — and report Rayleigh quotients,
//! quadratic-growth ratios of the full nonsmooth objective, Taylor
//! remainders of the control-to-state map, and adjoint-continuity tables.
//! None of these constitute a proof; they are falsification probes, and a
//! single negative Rayleigh quotient is a definite counterexample.
//!
//! The critical cone is built pointwise from the smooth gradient density
//! `d = nu u + p`. Sign conditions tied to the sparsity threshold
//! (`d = +-alpha` at vanished control values) apply only when a sparsity
//! penalty is active; with `alpha = 0` the cone is the classical one of the
//! box constraint, and at an unconstrained interior point it is the whole
//! space.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::ModelError;
use crate::geometry::{dot_bulk, dot_boundary, Mesh};
use crate::objective::{
    adjoint_gradient_part, eval_smooth_cost, quadratic_form_d2j, CostWeights,
};
use crate::optimizer::Problem;
use crate::pde::{
    control_inner, control_norm, solve_adjoint, solve_bilinearized, solve_linearized, solve_state,
    trajectory_norm, BoxBounds, ControlPair, SolverOptions, TimeGrid, Trajectory,
};
use crate::potentials::PotentialPair;
use crate::sparsity::{eval_sparsity, SparsityMode};

/// How the critical cone is carved out numerically.
#[derive(Debug, Clone, Copy)]
pub struct ConeSpec {
    /// Absolute tolerance deciding whether the gradient density sits on the
    /// sparsity threshold (`|d| = alpha`) or strictly away from it.
    pub tol_act: f64,
    /// Use the enlarged cone: directions at vanished control values whose
    /// gradient density is strictly below the threshold stay free instead
    /// of being zeroed. Sufficiency over the larger cone is a strictly
    /// stronger property.
    pub larger_cone: bool,
}

impl ConeSpec {
    /// Default activity tolerance, scaled to the problem:
    /// `1e-4 * max(alpha, nu |u|_inf, 1)`.
    pub fn scaled(alpha: f64, nu: f64, u_max: f64) -> Self {
        ConeSpec {
            tol_act: 1e-4 * alpha.max(nu * u_max).max(1.0),
            larger_cone: false,
        }
    }

    /// Same tolerance, enlarged cone.
    pub fn enlarged(self) -> Self {
        ConeSpec {
            larger_cone: true,
            ..self
        }
    }
}

fn project_pointwise(
    v: &mut [f64],
    u: &[f64],
    p: &[f64],
    nu: f64,
    alpha: f64,
    lo: f64,
    hi: f64,
    spec: &ConeSpec,
) {
    let tol = spec.tol_act;
    for k in 0..v.len() {
        let d = nu * u[k] + p[k];
        let at_lo = u[k] == lo;
        let at_hi = u[k] == hi;
        if at_lo && at_hi {
            v[k] = 0.0;
        } else if at_lo {
            if d > alpha + tol {
                v[k] = 0.0;
            } else {
                v[k] = v[k].max(0.0);
            }
        } else if at_hi {
            if d < -(alpha + tol) {
                v[k] = 0.0;
            } else {
                v[k] = v[k].min(0.0);
            }
        } else if alpha > 0.0 && u[k] == 0.0 {
            if (d - alpha).abs() <= tol {
                v[k] = v[k].min(0.0);
            } else if (d + alpha).abs() <= tol {
                v[k] = v[k].max(0.0);
            } else if spec.larger_cone && d.abs() < alpha - tol {
                // Enlarged cone: keep the direction.
            } else {
                v[k] = 0.0;
            }
        }
        // Interior support values constrain nothing.
    }
}

/// Projects a direction onto the critical cone of `(u, p)` in place.
///
/// `p` holds the adjoint slab fields in control layout. Full (and
/// no-sparsity) cones act pointwise; the time-directional cone applies the
/// box sign rules pointwise and then the group rules slab by slab: a
/// vanished slab keeps only its multiple of `-d_s` when the slab norm of
/// `d` sits on the threshold, and dies entirely when the norm is strictly
/// below it (unless the enlarged cone keeps it).
pub fn project_to_critical_cone(
    mesh: &Mesh,
    grid: &TimeGrid,
    mode: SparsityMode,
    v: &mut ControlPair,
    u: &ControlPair,
    p: &ControlPair,
    weights: &CostWeights,
    bounds: &BoxBounds,
    spec: &ConeSpec,
) -> Result<(), ModelError> {
    if !v.conforms(mesh, grid) || !u.conforms(mesh, grid) || !p.conforms(mesh, grid) {
        return Err(ModelError::InvalidArgument(
            "cone projection inputs do not match the mesh/grid".into(),
        ));
    }
    match mode {
        SparsityMode::NoSparsity | SparsityMode::Full => {
            let (alpha, alpha_g) = if mode.is_sparse() {
                (weights.alpha, weights.alpha_gamma)
            } else {
                (0.0, 0.0)
            };
            for s in 0..grid.n_t() {
                project_pointwise(
                    v.bulk[s].values_mut(),
                    u.bulk[s].values(),
                    p.bulk[s].values(),
                    weights.nu,
                    alpha,
                    bounds.rho_min,
                    bounds.rho_max,
                    spec,
                );
                project_pointwise(
                    v.boundary[s].values_mut(),
                    u.boundary[s].values(),
                    p.boundary[s].values(),
                    weights.nu_gamma,
                    alpha_g,
                    bounds.rho_gamma_min,
                    bounds.rho_gamma_max,
                    spec,
                );
            }
        }
        SparsityMode::TimeDirectional => {
            // Box sign rules first, then the slab group rules.
            for s in 0..grid.n_t() {
                project_pointwise(
                    v.bulk[s].values_mut(),
                    u.bulk[s].values(),
                    p.bulk[s].values(),
                    weights.nu,
                    0.0,
                    bounds.rho_min,
                    bounds.rho_max,
                    spec,
                );
                project_pointwise(
                    v.boundary[s].values_mut(),
                    u.boundary[s].values(),
                    p.boundary[s].values(),
                    weights.nu_gamma,
                    0.0,
                    bounds.rho_gamma_min,
                    bounds.rho_gamma_max,
                    spec,
                );
            }
            let tol = spec.tol_act;
            let mut d = vec![0.0; mesh.n_nodes()];
            for s in 0..grid.n_t() {
                {
                    let uv = u.bulk[s].values();
                    let pv = p.bulk[s].values();
                    let u_norm = dot_bulk(mesh, uv, uv).sqrt();
                    if u_norm == 0.0 {
                        for k in 0..d.len() {
                            d[k] = weights.nu * uv[k] + pv[k];
                        }
                        let dn = dot_bulk(mesh, &d, &d).sqrt();
                        let vv = v.bulk[s].values_mut();
                        if (dn - weights.alpha).abs() <= tol && dn > 0.0 {
                            let along = dot_bulk(mesh, &d, vv);
                            let t = (-along / (dn * dn)).max(0.0);
                            for k in 0..vv.len() {
                                vv[k] = -t * d[k];
                            }
                        } else if !(spec.larger_cone && dn < weights.alpha - tol) {
                            vv.fill(0.0);
                        }
                    }
                }
                let uv = u.boundary[s].values();
                let pv = p.boundary[s].values();
                let u_norm = dot_boundary(mesh, uv, uv).sqrt();
                if u_norm == 0.0 {
                    let mut dg = vec![0.0; uv.len()];
                    for k in 0..dg.len() {
                        dg[k] = weights.nu_gamma * uv[k] + pv[k];
                    }
                    let dn = dot_boundary(mesh, &dg, &dg).sqrt();
                    let vv = v.boundary[s].values_mut();
                    if (dn - weights.alpha_gamma).abs() <= tol && dn > 0.0 {
                        let along = dot_boundary(mesh, &dg, vv);
                        let t = (-along / (dn * dn)).max(0.0);
                        for k in 0..vv.len() {
                            vv[k] = -t * dg[k];
                        }
                    } else if !(spec.larger_cone && dn < weights.alpha_gamma - tol) {
                        vv.fill(0.0);
                    }
                }
            }
        }
    }
    Ok(())
}

/// Sampled Rayleigh quotients of `D^2 J` over the critical cone.
#[derive(Debug, Clone)]
pub struct CoercivityReport {
    /// Random directions drawn.
    pub n_samples: usize,
    /// Draws annihilated by the cone projection.
    pub n_zero_projections: usize,
    /// Rayleigh quotient of each surviving draw, in draw order.
    pub rayleigh: Vec<f64>,
    /// Smallest Rayleigh quotient observed (`NaN` when nothing survived).
    pub min_rayleigh: f64,
    /// Largest Rayleigh quotient observed.
    pub max_rayleigh: f64,
    /// Mean Rayleigh quotient over the surviving draws.
    pub mean_rayleigh: f64,
    /// Largest relative gap between `D^2 J[v, v]` and a central second
    /// difference of the smooth cost, checked on every surviving draw.
    pub oracle_rel_err: Option<f64>,
    /// True when every draw was projected to zero (degenerate cone; the
    /// sample then certifies nothing).
    pub all_projections_zero: bool,
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; u1 is pushed away from zero so the log is finite.
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn random_direction(mesh: &Mesh, grid: &TimeGrid, rng: &mut ChaCha8Rng) -> ControlPair {
    let mut v = ControlPair::zeros(mesh, grid);
    for s in 0..grid.n_t() {
        for x in v.bulk[s].values_mut() {
            *x = standard_normal(rng);
        }
        for x in v.boundary[s].values_mut() {
            *x = standard_normal(rng);
        }
    }
    v
}

/// Draws seeded Gaussian directions, projects them onto the critical cone
/// of `u`, and evaluates the exact second variation on every survivor.
/// Each survivor is cross-checked against a central second difference of
/// the smooth cost (two extra forward solves per draw).
pub fn sample_coercivity(
    problem: &Problem,
    u: &ControlPair,
    spec: &ConeSpec,
    n_samples: usize,
    seed: u64,
    opts: &SolverOptions,
) -> Result<CoercivityReport, ModelError> {
    problem.validate()?;
    if n_samples == 0 {
        return Err(ModelError::InvalidArgument(
            "coercivity sampling needs at least one draw".into(),
        ));
    }
    let (mesh, grid) = (&problem.mesh, &problem.grid);
    let base = solve_state(mesh, grid, &problem.potentials, &problem.y0, u, opts)?;
    let adj = solve_adjoint(
        mesh,
        grid,
        &problem.potentials,
        &base,
        &problem.targets,
        &problem.weights,
        opts,
    )?;
    let p = adjoint_gradient_part(mesh, grid, &adj);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut n_zero = 0usize;
    let mut min_rq = f64::INFINITY;
    let mut max_rq = f64::NEG_INFINITY;
    let mut sum_rq = 0.0;
    let mut rayleigh = Vec::new();
    let mut oracle_rel_err = None;

    for _ in 0..n_samples {
        let mut v = random_direction(mesh, grid, &mut rng);
        project_to_critical_cone(
            mesh,
            grid,
            problem.mode,
            &mut v,
            u,
            &p,
            &problem.weights,
            &problem.bounds,
            spec,
        )?;
        let n2 = control_inner(&v, &v, mesh, grid);
        if n2 == 0.0 {
            n_zero += 1;
            continue;
        }
        let phi = solve_linearized(mesh, grid, &problem.potentials, &base, &v, None, opts)?;
        let d2 = quadratic_form_d2j(
            mesh,
            grid,
            &problem.potentials,
            &base,
            &adj,
            &problem.weights,
            &v,
            &phi,
            &v,
            &phi,
        )?;
        let rq = d2 / n2;
        min_rq = min_rq.min(rq);
        max_rq = max_rq.max(rq);
        sum_rq += rq;
        rayleigh.push(rq);

        let eval = |tau: f64| -> Result<f64, ModelError> {
            let mut u_t = u.clone();
            u_t.axpy(tau, &v);
            let traj = solve_state(mesh, grid, &problem.potentials, &problem.y0, &u_t, opts)?;
            Ok(eval_smooth_cost(
                mesh,
                grid,
                &traj,
                &u_t,
                &problem.targets,
                &problem.weights,
            )?
            .total)
        };
        let eps = 1e-3;
        let fd2 = (eval(eps)? - 2.0 * eval(0.0)? + eval(-eps)?) / (eps * eps);
        let rel = (d2 - fd2).abs() / d2.abs().max(1e-12);
        oracle_rel_err = Some(oracle_rel_err.map_or(rel, |m: f64| m.max(rel)));
    }

    let survivors = rayleigh.len();
    Ok(CoercivityReport {
        n_samples,
        n_zero_projections: n_zero,
        min_rayleigh: if survivors > 0 { min_rq } else { f64::NAN },
        max_rayleigh: if survivors > 0 { max_rq } else { f64::NAN },
        mean_rayleigh: if survivors > 0 {
            sum_rq / survivors as f64
        } else {
            f64::NAN
        },
        rayleigh,
        oracle_rel_err,
        all_projections_zero: n_zero == n_samples,
    })
}

/// Quadratic-growth ratios of the full nonsmooth objective around a
/// candidate minimizer.
#[derive(Debug, Clone)]
pub struct GrowthReport {
    /// Probe radii in the control norm.
    pub radii: Vec<f64>,
    /// Per radius, the smallest observed `(F(u) - F(u*)) / |u - u*|^2`.
    pub min_ratio: Vec<f64>,
    /// Draws per radius.
    pub n_samples: usize,
    /// Objective value at the candidate.
    pub f_star: f64,
}

/// Samples box-feasible perturbations of `u_star` at the given control-norm
/// radii and reports the worst quadratic-growth ratio per radius. A
/// minimizer with quadratic growth `sigma` keeps every ratio at or above
/// `sigma`; in the purely quadratic regime (all tracking weights zero at
/// the zero control) the exact modulus is `min(nu, nu_gamma)/2`.
pub fn quadratic_growth_probe(
    problem: &Problem,
    u_star: &ControlPair,
    radii: &[f64],
    n_samples: usize,
    seed: u64,
    opts: &SolverOptions,
) -> Result<GrowthReport, ModelError> {
    problem.validate()?;
    if radii.is_empty() || radii.iter().any(|r| !r.is_finite() || *r <= 0.0) {
        return Err(ModelError::InvalidArgument(
            "growth probe needs positive finite radii".into(),
        ));
    }
    if n_samples == 0 {
        return Err(ModelError::InvalidArgument(
            "growth probe needs at least one draw".into(),
        ));
    }
    let (mesh, grid) = (&problem.mesh, &problem.grid);
    let traj_star = solve_state(mesh, grid, &problem.potentials, &problem.y0, u_star, opts)?;
    let f_star = eval_smooth_cost(
        mesh,
        grid,
        &traj_star,
        u_star,
        &problem.targets,
        &problem.weights,
    )?
    .total
        + eval_sparsity(
            mesh,
            grid,
            problem.mode,
            u_star,
            problem.weights.alpha,
            problem.weights.alpha_gamma,
        );

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut min_ratio = Vec::with_capacity(radii.len());
    for &radius in radii {
        let mut worst = f64::INFINITY;
        for _ in 0..n_samples {
            let mut delta = random_direction(mesh, grid, &mut rng);
            let norm = control_norm(&delta, mesh, grid);
            if norm == 0.0 {
                continue;
            }
            delta.scale(radius / norm);
            let mut u = u_star.clone();
            u.axpy(1.0, &delta);
            problem.bounds.project(&mut u);
            let mut d = u.clone();
            d.axpy(-1.0, u_star);
            let dn2 = control_inner(&d, &d, mesh, grid);
            if dn2 == 0.0 {
                continue;
            }
            let traj = solve_state(mesh, grid, &problem.potentials, &problem.y0, &u, opts)?;
            let f = eval_smooth_cost(mesh, grid, &traj, &u, &problem.targets, &problem.weights)?
                .total
                + eval_sparsity(
                    mesh,
                    grid,
                    problem.mode,
                    &u,
                    problem.weights.alpha,
                    problem.weights.alpha_gamma,
                );
            worst = worst.min((f - f_star) / dn2);
        }
        min_ratio.push(worst);
    }

    Ok(GrowthReport {
        radii: radii.to_vec(),
        min_ratio,
        n_samples,
        f_star,
    })
}

/// Taylor remainders of the control-to-state map along one direction.
#[derive(Debug, Clone)]
pub struct TaylorReport {
    /// Step sizes, largest first.
    pub taus: Vec<f64>,
    /// First-order remainders `|S(u + tau h) - S(u) - tau DS h|`.
    pub r1: Vec<f64>,
    /// Second-order remainders subtracting also `tau^2/2 D^2S[h, h]`.
    pub r2: Vec<f64>,
    /// Least-squares slope of `log r1` against `log tau` (2 for an exact
    /// first-order expansion).
    pub slope1: f64,
    /// Least-squares slope of `log r2` (3 for an exact second-order
    /// expansion).
    pub slope2: f64,
}

fn fit_slope(taus: &[f64], rs: &[f64]) -> f64 {
    // Least squares for log r = a + slope * log tau. Remainders at roundoff
    // level are floored to keep the logs finite; slopes then overshoot,
    // which is the harmless direction for a lower-bound check.
    let xs: Vec<f64> = taus.iter().map(|t| t.ln()).collect();
    let ys: Vec<f64> = rs.iter().map(|r| r.max(1e-300).ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var = 0.0;
    for k in 0..xs.len() {
        cov += (xs[k] - mx) * (ys[k] - my);
        var += (xs[k] - mx) * (xs[k] - mx);
    }
    cov / var
}

/// Runs the Taylor test of the solution map at `u` along `h`: solves the
/// perturbed forward problems at every step in `taus` and fits the decay
/// orders of the first- and second-order remainders. An exact linearization
/// chain yields slopes near 2 and 3.
pub fn taylor_test_ds(
    mesh: &Mesh,
    grid: &TimeGrid,
    pots: &PotentialPair,
    y0: &crate::geometry::CoupledField,
    u: &ControlPair,
    h: &ControlPair,
    taus: &[f64],
    opts: &SolverOptions,
) -> Result<TaylorReport, ModelError> {
    if taus.len() < 2 || taus.iter().any(|t| !t.is_finite() || *t <= 0.0) {
        return Err(ModelError::InvalidArgument(
            "taylor test needs at least two positive steps".into(),
        ));
    }
    let base = solve_state(mesh, grid, pots, y0, u, opts)?;
    let xi = solve_linearized(mesh, grid, pots, &base, h, None, opts)?;
    let eta = solve_bilinearized(mesh, grid, pots, &base, &xi, &xi, opts)?;

    let mut r1 = Vec::with_capacity(taus.len());
    let mut r2 = Vec::with_capacity(taus.len());
    for &tau in taus {
        let mut u_t = u.clone();
        u_t.axpy(tau, h);
        let traj = solve_state(mesh, grid, pots, y0, &u_t, opts)?;
        let mut first = Vec::with_capacity(grid.n_t() + 1);
        let mut second = Vec::with_capacity(grid.n_t() + 1);
        for n in 0..=grid.n_t() {
            let mut d = traj.states[n].bulk().clone();
            d.axpy(-1.0, base.states[n].bulk());
            d.axpy(-tau, xi.states[n].bulk());
            let mut d2 = d.clone();
            d2.axpy(-0.5 * tau * tau, eta.states[n].bulk());
            first.push(crate::geometry::CoupledField::from_bulk(d));
            second.push(crate::geometry::CoupledField::from_bulk(d2));
        }
        r1.push(trajectory_norm(&Trajectory { states: first }, mesh, grid));
        r2.push(trajectory_norm(&Trajectory { states: second }, mesh, grid));
    }

    Ok(TaylorReport {
        slope1: fit_slope(taus, &r1),
        slope2: fit_slope(taus, &r2),
        taus: taus.to_vec(),
        r1,
        r2,
    })
}

/// Adjoint-continuity table along a control path `u* + delta h`.
#[derive(Debug, Clone)]
pub struct ContinuityReport {
    /// Path parameters, largest first.
    pub deltas: Vec<f64>,
    /// Control-norm gaps between the path adjoints and the limit adjoint.
    pub adjoint_gaps: Vec<f64>,
    /// Smooth directional derivatives `DJ(u_k)[h]` along the path.
    pub dj: Vec<f64>,
    /// Second variations `D^2 J(u_k)[h, h]` along the path.
    pub d2j: Vec<f64>,
    /// Directional derivative at the limit point.
    pub dj_limit: f64,
    /// Second variation at the limit point.
    pub d2j_limit: f64,
}

/// Walks `u_k = u_star + delta_k h` toward `u_star` and tabulates the
/// adjoint gap together with first and second derivatives of the smooth
/// cost, demonstrating the continuity of the whole differential chain. The
/// deltas must be positive and strictly decreasing.
pub fn continuity_test(
    problem: &Problem,
    u_star: &ControlPair,
    h: &ControlPair,
    deltas: &[f64],
    opts: &SolverOptions,
) -> Result<ContinuityReport, ModelError> {
    problem.validate()?;
    if deltas.len() < 2
        || deltas.windows(2).any(|w| w[0] <= w[1])
        || deltas.iter().any(|d| !d.is_finite() || *d <= 0.0)
    {
        return Err(ModelError::InvalidArgument(
            "continuity test needs positive strictly decreasing deltas".into(),
        ));
    }
    let (mesh, grid) = (&problem.mesh, &problem.grid);

    let derivatives_at = |u: &ControlPair| -> Result<(ControlPair, f64, f64), ModelError> {
        let base = solve_state(mesh, grid, &problem.potentials, &problem.y0, u, opts)?;
        let adj = solve_adjoint(
            mesh,
            grid,
            &problem.potentials,
            &base,
            &problem.targets,
            &problem.weights,
            opts,
        )?;
        let p = adjoint_gradient_part(mesh, grid, &adj);
        let mut grad = p.clone();
        for s in 0..grid.n_t() {
            grad.bulk[s].axpy(problem.weights.nu, &u.bulk[s]);
            grad.boundary[s].axpy(problem.weights.nu_gamma, &u.boundary[s]);
        }
        let dj = control_inner(&grad, h, mesh, grid);
        let phi = solve_linearized(mesh, grid, &problem.potentials, &base, h, None, opts)?;
        let d2j = quadratic_form_d2j(
            mesh,
            grid,
            &problem.potentials,
            &base,
            &adj,
            &problem.weights,
            h,
            &phi,
            h,
            &phi,
        )?;
        Ok((p, dj, d2j))
    };

    let (p_star, dj_limit, d2j_limit) = derivatives_at(u_star)?;

    let mut adjoint_gaps = Vec::with_capacity(deltas.len());
    let mut dj = Vec::with_capacity(deltas.len());
    let mut d2j = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        let mut u = u_star.clone();
        u.axpy(delta, h);
        let (p, dj_k, d2j_k) = derivatives_at(&u)?;
        let mut gap = p.clone();
        gap.axpy(-1.0, &p_star);
        adjoint_gaps.push(control_norm(&gap, mesh, grid));
        dj.push(dj_k);
        d2j.push(d2j_k);
    }

    Ok(ContinuityReport {
        deltas: deltas.to_vec(),
        adjoint_gaps,
        dj,
        d2j,
        dj_limit,
        d2j_limit,
    })
}
