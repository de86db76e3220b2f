//! Forward, linearized, bilinearized, and adjoint time-stepping.
//!
//! All four integrators share the same step matrix
//! `E^n = I/dt + L + diag(f''(base^n))`:
//!
//! * the forward solve builds it at the current Newton iterate;
//! * the linearized and bilinearized solves freeze it at the stored base
//!   states (the exact derivative of the discrete step map);
//! * the adjoint solve uses its transpose, so the discrete chain
//!   state -> linearized -> adjoint is one exact transposition and the
//!   resulting gradients hold to machine precision, not just to `O(dt)`.
//!
//! The adjoint recursion integrates the trapezoid-weighted tracking misfits
//! backward: with `G^n` the weighted misfit load of level `n` and `G_T` the
//! terminal load,
//!
//! ```text
//! (E^{n_t})^T pi^{n_t} = w_{n_t} G^{n_t} + G_T,
//! (E^n)^T    pi^n     = pi^{n+1}/dt + w_n G^n ,     n = n_t-1, ..., 1,
//! ```
//!
//! and the slab fields are `p^n = pi^n / (dt * w_node)`. Slab `s` of the
//! result pairs with control slab `s`; the terminal entry stores the
//! pointwise datum `beta3 (y(T) - target)` / `beta4 (y_G(T) - target_G)`
//! exactly.

use crate::error::ModelError;
use crate::geometry::{BulkField, CoupledField, Mesh};
use crate::objective::{CostWeights, Targets};
use crate::potentials::PotentialPair;

use super::linalg::{bicgstab, BandedLu, BandedMatrix};
use super::operator::{
    apply_operator, assemble_step_matrix, nodal_potential_derivative, node_weight,
};
use super::{AdjointTrajectory, ControlPair, LinearKernel, SolverOptions, TimeGrid, Trajectory};

/// Diagnostics of one forward solve.
#[derive(Debug, Clone, Copy)]
pub struct SolveStats {
    /// Newton iterations summed over all time steps.
    pub newton_iters_total: usize,
    /// Largest Newton iteration count of any single step.
    pub max_newton_iters: usize,
    /// Number of damping halvings forced by the separation guard. Zero means
    /// the guard never had to reject an iterate.
    pub guard_rejections: usize,
    /// Smallest distance `1 - |value|` of any accepted state value at a node
    /// governed by a logarithmic potential; infinite when no such node exists.
    pub min_separation: f64,
    /// Largest quadrature-weighted norm of the accepted step residuals (the
    /// discrete weak-form defect).
    pub weak_residual: f64,
}

impl SolveStats {
    fn new() -> Self {
        SolveStats {
            newton_iters_total: 0,
            max_newton_iters: 0,
            guard_rejections: 0,
            min_separation: f64::INFINITY,
            weak_residual: 0.0,
        }
    }
}

/// Extremes of a trajectory, used to audit the strict separation of the
/// phase variable from the potential walls.
#[derive(Debug, Clone, Copy)]
pub struct Separation {
    /// Smallest nodal value over all levels.
    pub min_value: f64,
    /// Largest nodal value over all levels.
    pub max_value: f64,
}

impl Separation {
    /// Distance of the trajectory range to the walls `-1` and `+1`
    /// (negative when the range leaves `[-1, 1]`).
    pub fn wall_margin(&self) -> f64 {
        (1.0 + self.min_value).min(1.0 - self.max_value)
    }
}

/// Reports the range of a trajectory.
pub fn estimate_separation(traj: &Trajectory) -> Separation {
    let mut min_value = f64::INFINITY;
    let mut max_value = f64::NEG_INFINITY;
    for state in &traj.states {
        for &v in state.values() {
            min_value = min_value.min(v);
            max_value = max_value.max(v);
        }
    }
    Separation {
        min_value,
        max_value,
    }
}

/// One assembled implicit step, behind either linear kernel.
enum StepSolver {
    Direct(BandedLu),
    Iterative {
        mat: BandedMatrix,
        diag: Vec<f64>,
        tol: f64,
    },
}

impl StepSolver {
    fn build(mesh: &Mesh, inv_dt: f64, lambda: &[f64], opts: &SolverOptions) -> Result<Self, ModelError> {
        let mat = assemble_step_matrix(mesh, inv_dt, lambda);
        let use_banded = match opts.kernel {
            LinearKernel::Banded => true,
            LinearKernel::Iterative => false,
            // Band storage is (6 n_x + 1) * N doubles; switch to the
            // matrix-free kernel when that grows past ~100 MB.
            LinearKernel::Auto => mesh.n_nodes() * (6 * mesh.n_x() + 1) <= 12_500_000,
        };
        if use_banded {
            Ok(StepSolver::Direct(mat.factorize()?))
        } else {
            let diag = mat.diagonal();
            Ok(StepSolver::Iterative {
                mat,
                diag,
                tol: opts.lin_tol,
            })
        }
    }

    fn solve(&self, rhs: &mut [f64]) -> Result<(), ModelError> {
        match self {
            StepSolver::Direct(lu) => {
                lu.solve(rhs);
                Ok(())
            }
            StepSolver::Iterative { mat, diag, tol } => {
                let b = rhs.to_vec();
                for (x, d) in rhs.iter_mut().zip(diag.iter()) {
                    *x /= d;
                }
                bicgstab(|v, out| mat.apply(v, out), diag, &b, rhs, *tol, 5000)?;
                Ok(())
            }
        }
    }

    fn solve_transpose(&self, rhs: &mut [f64]) -> Result<(), ModelError> {
        match self {
            StepSolver::Direct(lu) => {
                lu.solve_transpose(rhs);
                Ok(())
            }
            StepSolver::Iterative { mat, diag, tol } => {
                let b = rhs.to_vec();
                for (x, d) in rhs.iter_mut().zip(diag.iter()) {
                    *x /= d;
                }
                bicgstab(|v, out| mat.apply_transpose(v, out), diag, &b, rhs, *tol, 5000)?;
                Ok(())
            }
        }
    }
}

/// Checks that a nodal iterate respects the separation margins of the
/// singular potentials (per node: the potential governing that node's row).
fn guard_ok(mesh: &Mesh, pots: &PotentialPair, z: &[f64]) -> bool {
    let n_x = mesh.n_x();
    let m = mesh.top_row();
    if pots.bulk.is_singular() {
        let cap = 1.0 - pots.bulk.newton_margin();
        for j in 1..m {
            for i in 0..n_x {
                if z[j * n_x + i].abs() > cap {
                    return false;
                }
            }
        }
    }
    if pots.surface.is_singular() {
        let cap = 1.0 - pots.surface.newton_margin();
        for i in 0..n_x {
            if z[i].abs() > cap || z[m * n_x + i].abs() > cap {
                return false;
            }
        }
    }
    true
}

/// Smallest wall distance of guarded nodes (infinite when nothing is
/// guarded).
fn separation_margin(mesh: &Mesh, pots: &PotentialPair, z: &[f64]) -> f64 {
    let n_x = mesh.n_x();
    let m = mesh.top_row();
    let mut margin = f64::INFINITY;
    if pots.bulk.is_singular() {
        for j in 1..m {
            for i in 0..n_x {
                margin = margin.min(1.0 - z[j * n_x + i].abs());
            }
        }
    }
    if pots.surface.is_singular() {
        for i in 0..n_x {
            margin = margin.min(1.0 - z[i].abs());
            margin = margin.min(1.0 - z[m * n_x + i].abs());
        }
    }
    margin
}

/// Expands a control slab into a nodal forcing vector: bulk control on the
/// interior rows, boundary control on the two rings. Bulk values on the
/// boundary rows are carried in the control space but do not force the
/// dynamics.
fn slab_forcing(mesh: &Mesh, control: &ControlPair, slab: usize, out: &mut [f64]) {
    let n_x = mesh.n_x();
    let m = mesh.top_row();
    let bulk = control.bulk[slab].values();
    let bnd = control.boundary[slab].values();
    for j in 1..m {
        for i in 0..n_x {
            out[j * n_x + i] = bulk[j * n_x + i];
        }
    }
    for i in 0..n_x {
        out[i] = bnd[i];
        out[m * n_x + i] = bnd[n_x + i];
    }
}

/// Strong residual of the implicit step at iterate `z`:
/// `(z - prev)/dt + L z + f'(z) - forcing`.
fn step_residual(
    mesh: &Mesh,
    pots: &PotentialPair,
    inv_dt: f64,
    prev: &[f64],
    forcing: &[f64],
    z: &[f64],
    lz: &mut [f64],
    reaction: &mut [f64],
    out: &mut [f64],
) {
    apply_operator(mesh, z, lz);
    nodal_potential_derivative(mesh, pots, 1, z, reaction);
    for k in 0..z.len() {
        out[k] = (z[k] - prev[k]) * inv_dt + lz[k] + reaction[k] - forcing[k];
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m: f64, x| m.max(x.abs()))
}

fn validate_forward_inputs(
    mesh: &Mesh,
    grid: &TimeGrid,
    pots: &PotentialPair,
    y0: &CoupledField,
    control: &ControlPair,
) -> Result<(), ModelError> {
    if !y0.conforms(mesh) {
        return Err(ModelError::ShapeMismatch {
            context: "solve_state initial datum",
            expected: (mesh.rows(), mesh.n_x()),
            got: (y0.bulk().rows(), y0.bulk().n_x()),
        });
    }
    if !control.conforms(mesh, grid) {
        return Err(ModelError::InvalidArgument(format!(
            "control pair does not match the mesh/grid: {} slabs expected",
            grid.n_t()
        )));
    }
    // Singular potentials need the initial datum strictly separated from the
    // walls at the nodes they govern.
    let n_x = mesh.n_x();
    let m = mesh.top_row();
    let vals = y0.values();
    if pots.bulk.is_singular() {
        let cap = 1.0 - pots.bulk.safe_margin();
        for j in 1..m {
            for i in 0..n_x {
                if vals[j * n_x + i].abs() > cap {
                    return Err(ModelError::InvalidInitial(format!(
                        "initial datum reaches {} at node ({i},{j}); the logarithmic potential needs values strictly inside (-1, 1)",
                        vals[j * n_x + i]
                    )));
                }
            }
        }
    }
    if pots.surface.is_singular() {
        let cap = 1.0 - pots.surface.safe_margin();
        for i in 0..n_x {
            for &(ii, jj) in &[(i, 0), (i, m)] {
                if vals[jj * n_x + ii].abs() > cap {
                    return Err(ModelError::InvalidInitial(format!(
                        "initial boundary datum reaches {} at node ({ii},{jj}); the logarithmic potential needs values strictly inside (-1, 1)",
                        vals[jj * n_x + ii]
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Integrates the coupled system forward with implicit Euler and damped
/// Newton steps. See [`solve_state_with_stats`] for the diagnostics variant.
pub fn solve_state(
    mesh: &Mesh,
    grid: &TimeGrid,
    pots: &PotentialPair,
    y0: &CoupledField,
    control: &ControlPair,
    opts: &SolverOptions,
) -> Result<Trajectory, ModelError> {
    solve_state_with_stats(mesh, grid, pots, y0, control, opts).map(|(t, _)| t)
}

/// Forward solve returning the trajectory together with Newton/guard
/// diagnostics.
///
/// Each step is solved by Newton's method warm-started from the previous
/// level. A trial iterate is halved whenever it would leave the separation
/// region of a logarithmic potential or fail to reduce the residual;
/// exhausting the halvings yields [`ModelError::SeparationViolation`] or
/// [`ModelError::NewtonDivergence`] respectively.
pub fn solve_state_with_stats(
    mesh: &Mesh,
    grid: &TimeGrid,
    pots: &PotentialPair,
    y0: &CoupledField,
    control: &ControlPair,
    opts: &SolverOptions,
) -> Result<(Trajectory, SolveStats), ModelError> {
    validate_forward_inputs(mesh, grid, pots, y0, control)?;
    let n = mesh.n_nodes();
    let inv_dt = 1.0 / grid.dt();
    let mut stats = SolveStats::new();

    let mut states = Vec::with_capacity(grid.n_t() + 1);
    states.push(y0.clone());

    let mut forcing = vec![0.0; n];
    let mut lz = vec![0.0; n];
    let mut reaction = vec![0.0; n];
    let mut residual = vec![0.0; n];
    let mut residual_try = vec![0.0; n];
    let mut lambda = vec![0.0; n];
    let mut z_try = vec![0.0; n];

    for step in 1..=grid.n_t() {
        let prev: Vec<f64> = states[step - 1].values().to_vec();
        slab_forcing(mesh, control, step - 1, &mut forcing);

        // Warm start from the previous level (already guarded).
        let mut z = prev.clone();
        step_residual(
            mesh, pots, inv_dt, &prev, &forcing, &z, &mut lz, &mut reaction, &mut residual,
        );
        let mut rn = max_abs(&residual);

        let mut converged = rn <= opts.newton_tol;
        let mut iters = 0;
        let mut last_halvings = 0_u32;
        while !converged {
            if iters >= opts.newton_max_iters {
                return Err(ModelError::NewtonDivergence {
                    step,
                    residual: rn,
                    halvings: last_halvings,
                });
            }
            iters += 1;
            stats.newton_iters_total += 1;

            nodal_potential_derivative(mesh, pots, 2, &z, &mut lambda);
            let solver = StepSolver::build(mesh, inv_dt, &lambda, opts)?;
            let mut delta = residual.clone();
            for d in delta.iter_mut() {
                *d = -*d;
            }
            solver.solve(&mut delta)?;

            // Damped update: halve on guard violations and on failure to
            // reduce the residual.
            let mut s = 1.0_f64;
            let mut halvings = 0_u32;
            let mut guard_fired = false;
            loop {
                if halvings > opts.max_halvings {
                    return Err(if guard_fired {
                        ModelError::SeparationViolation { step }
                    } else {
                        ModelError::NewtonDivergence {
                            step,
                            residual: rn,
                            halvings,
                        }
                    });
                }
                for k in 0..n {
                    z_try[k] = z[k] + s * delta[k];
                }
                if !guard_ok(mesh, pots, &z_try) {
                    stats.guard_rejections += 1;
                    guard_fired = true;
                    halvings += 1;
                    s *= 0.5;
                    continue;
                }
                step_residual(
                    mesh,
                    pots,
                    inv_dt,
                    &prev,
                    &forcing,
                    &z_try,
                    &mut lz,
                    &mut reaction,
                    &mut residual_try,
                );
                let rn_try = max_abs(&residual_try);
                if rn_try <= opts.newton_tol || rn_try <= (1.0 - 1e-4 * s) * rn {
                    z.copy_from_slice(&z_try);
                    residual.copy_from_slice(&residual_try);
                    rn = rn_try;
                    break;
                }
                halvings += 1;
                s *= 0.5;
            }
            last_halvings = halvings;
            converged = rn <= opts.newton_tol;
        }

        stats.max_newton_iters = stats.max_newton_iters.max(iters);
        stats.min_separation = stats.min_separation.min(separation_margin(mesh, pots, &z));
        let mut weak = 0.0;
        for j in 0..mesh.rows() {
            let w = node_weight(mesh, j);
            for i in 0..mesh.n_x() {
                let r = residual[mesh.idx(i, j)];
                weak += w * r * r;
            }
        }
        stats.weak_residual = stats.weak_residual.max(weak.sqrt());

        states.push(CoupledField::from_bulk(BulkField::from_values(
            mesh,
            z.clone(),
        )?));
    }

    Ok((Trajectory { states }, stats))
}

fn validate_base(
    mesh: &Mesh,
    grid: &TimeGrid,
    pots: &PotentialPair,
    base: &Trajectory,
) -> Result<(), ModelError> {
    if !base.conforms(mesh, grid) {
        return Err(ModelError::InvalidArgument(format!(
            "base trajectory must store {} levels on the mesh",
            grid.n_t() + 1
        )));
    }
    // The frozen curvature f''(base) must be evaluable everywhere.
    let n_x = mesh.n_x();
    let m = mesh.top_row();
    for state in &base.states {
        let vals = state.values();
        if pots.bulk.is_singular() {
            let cap = 1.0 - pots.bulk.safe_margin();
            for j in 1..m {
                for i in 0..n_x {
                    if vals[j * n_x + i].abs() > cap {
                        return Err(ModelError::DomainError {
                            order: 2,
                            r: vals[j * n_x + i],
                        });
                    }
                }
            }
        }
        if pots.surface.is_singular() {
            let cap = 1.0 - pots.surface.safe_margin();
            for i in 0..n_x {
                if vals[i].abs() > cap || vals[m * n_x + i].abs() > cap {
                    return Err(ModelError::DomainError {
                        order: 2,
                        r: vals[i],
                    });
                }
            }
        }
    }
    Ok(())
}

/// Solves the linearized system along `base`: backward Euler with the frozen
/// curvature `f''(base^n)`, forced by the direction `h`. `initial` is the
/// datum at level 0 (`None` means zero, the variational case).
///
/// This is the exact derivative of the discrete step map: for the forward
/// map `S`, `solve_linearized(base = S(u), h)` computes `DS(u) h`.
pub fn solve_linearized(
    mesh: &Mesh,
    grid: &TimeGrid,
    pots: &PotentialPair,
    base: &Trajectory,
    h: &ControlPair,
    initial: Option<&CoupledField>,
    opts: &SolverOptions,
) -> Result<Trajectory, ModelError> {
    validate_base(mesh, grid, pots, base)?;
    if !h.conforms(mesh, grid) {
        return Err(ModelError::InvalidArgument(
            "direction pair does not match the mesh/grid".into(),
        ));
    }
    if let Some(f) = initial {
        if !f.conforms(mesh) {
            return Err(ModelError::ShapeMismatch {
                context: "solve_linearized initial datum",
                expected: (mesh.rows(), mesh.n_x()),
                got: (f.bulk().rows(), f.bulk().n_x()),
            });
        }
    }

    let n = mesh.n_nodes();
    let inv_dt = 1.0 / grid.dt();
    let mut states = Vec::with_capacity(grid.n_t() + 1);
    states.push(initial.cloned().unwrap_or_else(|| CoupledField::zeros(mesh)));

    let mut lambda = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    let mut forcing = vec![0.0; n];

    for step in 1..=grid.n_t() {
        nodal_potential_derivative(mesh, pots, 2, base.states[step].values(), &mut lambda);
        let solver = StepSolver::build(mesh, inv_dt, &lambda, opts)?;
        slab_forcing(mesh, h, step - 1, &mut forcing);
        let prev = states[step - 1].values();
        for k in 0..n {
            rhs[k] = prev[k] * inv_dt + forcing[k];
        }
        solver.solve(&mut rhs)?;
        states.push(CoupledField::from_bulk(BulkField::from_values(
            mesh,
            rhs.clone(),
        )?));
    }
    Ok(Trajectory { states })
}

/// Solves the bilinearized system along `base` for directions with
/// linearized states `phi` and `psi`: same frozen-coefficient steps, forced
/// by the curvature source `-f'''(base) * phi * psi` (bulk potential at
/// interior nodes, surface potential on the rings), zero initial datum.
///
/// For the forward map `S`, this computes the second derivative
/// `D^2 S(u)[h1, h2]` when `phi = DS(u) h1` and `psi = DS(u) h2`.
pub fn solve_bilinearized(
    mesh: &Mesh,
    grid: &TimeGrid,
    pots: &PotentialPair,
    base: &Trajectory,
    phi: &Trajectory,
    psi: &Trajectory,
    opts: &SolverOptions,
) -> Result<Trajectory, ModelError> {
    validate_base(mesh, grid, pots, base)?;
    if !phi.conforms(mesh, grid) || !psi.conforms(mesh, grid) {
        return Err(ModelError::InvalidArgument(
            "linearized factors must store n_t + 1 levels on the mesh".into(),
        ));
    }

    let n = mesh.n_nodes();
    let inv_dt = 1.0 / grid.dt();
    let mut states = Vec::with_capacity(grid.n_t() + 1);
    states.push(CoupledField::zeros(mesh));

    let mut lambda = vec![0.0; n];
    let mut third = vec![0.0; n];
    let mut rhs = vec![0.0; n];

    for step in 1..=grid.n_t() {
        let base_vals = base.states[step].values();
        nodal_potential_derivative(mesh, pots, 2, base_vals, &mut lambda);
        nodal_potential_derivative(mesh, pots, 3, base_vals, &mut third);
        let solver = StepSolver::build(mesh, inv_dt, &lambda, opts)?;
        let prev = states[step - 1].values();
        let phi_n = phi.states[step].values();
        let psi_n = psi.states[step].values();
        for k in 0..n {
            rhs[k] = prev[k] * inv_dt - third[k] * phi_n[k] * psi_n[k];
        }
        solver.solve(&mut rhs)?;
        states.push(CoupledField::from_bulk(BulkField::from_values(
            mesh,
            rhs.clone(),
        )?));
    }
    Ok(Trajectory { states })
}

/// Weighted misfit load of level `n`: `beta1 * W_H * (y - y_Q)` at every
/// node plus `beta2 * W_G * (y_G - y_Sigma)` on the boundary rows.
fn tracking_load(
    mesh: &Mesh,
    base: &Trajectory,
    targets: &Targets,
    weights: &CostWeights,
    level: usize,
    out: &mut [f64],
) {
    let n_x = mesh.n_x();
    let m = mesh.top_row();
    let y = base.states[level].values();
    let yq = targets.y_q[level].values();
    let ys = targets.y_sigma[level].values();
    for j in 0..=m {
        let w = mesh.bulk_weight(j);
        for i in 0..n_x {
            let k = j * n_x + i;
            out[k] = weights.beta1 * w * (y[k] - yq[k]);
        }
    }
    let wg = mesh.ring_weight();
    for i in 0..n_x {
        out[i] += weights.beta2 * wg * (y[i] - ys[i]);
        let k = m * n_x + i;
        out[k] += weights.beta2 * wg * (y[k] - ys[n_x + i]);
    }
}

/// Terminal misfit load: `beta3 * W_H * (y(T) - y_OmegaT)` at every node
/// plus `beta4 * W_G * (y_G(T) - y_GammaT)` on the boundary rows.
fn terminal_load(
    mesh: &Mesh,
    base: &Trajectory,
    targets: &Targets,
    weights: &CostWeights,
    out: &mut [f64],
) {
    let n_x = mesh.n_x();
    let m = mesh.top_row();
    let y = base.terminal().values();
    let yt = targets.y_omega_t.values();
    let yg = targets.y_gamma_t.values();
    for j in 0..=m {
        let w = mesh.bulk_weight(j);
        for i in 0..n_x {
            let k = j * n_x + i;
            out[k] = weights.beta3 * w * (y[k] - yt[k]);
        }
    }
    let wg = mesh.ring_weight();
    for i in 0..n_x {
        out[i] += weights.beta4 * wg * (y[i] - yg[i]);
        let k = m * n_x + i;
        out[k] += weights.beta4 * wg * (y[k] - yg[n_x + i]);
    }
}

/// Solves the exact discrete adjoint backward along `base`.
///
/// The returned trajectory is in slab layout: entry `s` pairs with control
/// slab `s` (so `control_inner` of the result against a direction is exactly
/// the derivative of the discrete tracking cost), and the last entry stores
/// the pointwise terminal datum `beta3 (y(T) - y_OmegaT)` on the interior,
/// `beta4 (y_G(T) - y_GammaT)` on the rings.
pub fn solve_adjoint(
    mesh: &Mesh,
    grid: &TimeGrid,
    pots: &PotentialPair,
    base: &Trajectory,
    targets: &Targets,
    weights: &CostWeights,
    opts: &SolverOptions,
) -> Result<AdjointTrajectory, ModelError> {
    validate_base(mesh, grid, pots, base)?;
    targets.check_shapes(mesh, grid)?;

    let n = mesh.n_nodes();
    let n_t = grid.n_t();
    let inv_dt = 1.0 / grid.dt();
    let dt = grid.dt();

    let mut lambda = vec![0.0; n];
    let mut load = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    let mut pi = vec![0.0; n];

    // Backward sweep; slab fields are collected in reverse and flipped once.
    let mut slabs_rev: Vec<CoupledField> = Vec::with_capacity(n_t);

    for step in (1..=n_t).rev() {
        tracking_load(mesh, base, targets, weights, step, &mut load);
        let theta = grid.level_weight(step);
        if step == n_t {
            let mut term = vec![0.0; n];
            terminal_load(mesh, base, targets, weights, &mut term);
            for k in 0..n {
                rhs[k] = theta * load[k] + term[k];
            }
        } else {
            for k in 0..n {
                rhs[k] = pi[k] * inv_dt + theta * load[k];
            }
        }
        nodal_potential_derivative(mesh, pots, 2, base.states[step].values(), &mut lambda);
        let solver = StepSolver::build(mesh, inv_dt, &lambda, opts)?;
        solver.solve_transpose(&mut rhs)?;
        pi.copy_from_slice(&rhs);

        // Scale the multiplier back to a field: p = pi / (dt * w_node).
        let mut field = vec![0.0; n];
        for j in 0..mesh.rows() {
            let w = dt * node_weight(mesh, j);
            for i in 0..mesh.n_x() {
                let k = mesh.idx(i, j);
                field[k] = pi[k] / w;
            }
        }
        slabs_rev.push(CoupledField::from_bulk(BulkField::from_values(mesh, field)?));
    }

    let mut states: Vec<CoupledField> = slabs_rev.into_iter().rev().collect();

    // Pointwise terminal datum, stored exactly.
    let mut datum = vec![0.0; n];
    let y = base.terminal().values();
    let yt = targets.y_omega_t.values();
    let yg = targets.y_gamma_t.values();
    let m = mesh.top_row();
    let n_x = mesh.n_x();
    for j in 0..=m {
        for i in 0..n_x {
            let k = j * n_x + i;
            datum[k] = weights.beta3 * (y[k] - yt[k]);
        }
    }
    for i in 0..n_x {
        datum[i] = weights.beta4 * (y[i] - yg[i]);
        datum[m * n_x + i] = weights.beta4 * (y[m * n_x + i] - yg[n_x + i]);
    }
    states.push(CoupledField::from_bulk(BulkField::from_values(mesh, datum)?));

    Ok(AdjointTrajectory { states })
}
