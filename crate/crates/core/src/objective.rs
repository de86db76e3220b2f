//! The smooth part of the control objective: tracking plus quadratic
//! control costs, their exact discrete gradient, and the exact second
//! variation.
//!
//! Everything here is differentiated *after* discretization. The gradient is
//! assembled from the transposed step matrices of the forward solve (see
//! `pde::solve_adjoint`), so finite-difference checks of the returned
//! quantities are limited only by the Newton tolerance and floating-point
//! roundoff — there is no `O(dt)` discretization mismatch to hide behind.

use crate::error::ModelError;
use crate::geometry::{BoundaryField, BulkField, Mesh};
use crate::pde::{
    control_inner, solve_adjoint, AdjointTrajectory, ControlPair, SolverOptions, TimeGrid,
    Trajectory,
};
use crate::potentials::PotentialPair;

/// Weights of the cost functional: `beta1..beta4` scale the distributed and
/// terminal tracking terms (bulk and surface), `nu`/`nu_gamma` the quadratic
/// control costs, and `alpha`/`alpha_gamma` the sparsity terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostWeights {
    /// Distributed bulk tracking weight.
    pub beta1: f64,
    /// Distributed surface tracking weight.
    pub beta2: f64,
    /// Terminal bulk tracking weight.
    pub beta3: f64,
    /// Terminal surface tracking weight.
    pub beta4: f64,
    /// Quadratic cost of the distributed control.
    pub nu: f64,
    /// Quadratic cost of the boundary control.
    pub nu_gamma: f64,
    /// Sparsity weight of the distributed control.
    pub alpha: f64,
    /// Sparsity weight of the boundary control.
    pub alpha_gamma: f64,
}

impl CostWeights {
    /// Checks the standing structural requirements: finite nonnegative
    /// tracking and sparsity weights, strictly positive quadratic costs, and
    /// equal terminal weights (the two terminal terms must carry the same
    /// weight for the terminal adjoint datum to be a single field).
    pub fn validate(&self) -> Result<(), ModelError> {
        let named = [
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("beta3", self.beta3),
            ("beta4", self.beta4),
            ("alpha", self.alpha),
            ("alpha_gamma", self.alpha_gamma),
        ];
        for (name, v) in named {
            if !v.is_finite() || v < 0.0 {
                return Err(ModelError::InvalidArgument(format!(
                    "{name} must be finite and nonnegative, got {v}"
                )));
            }
        }
        for (name, v) in [("nu", self.nu), ("nu_gamma", self.nu_gamma)] {
            if !v.is_finite() || v <= 0.0 {
                return Err(ModelError::InvalidArgument(format!(
                    "{name} must be finite and strictly positive, got {v}"
                )));
            }
        }
        if self.beta3 != self.beta4 {
            return Err(ModelError::InvalidArgument(format!(
                "terminal weights must match: beta3 = {} but beta4 = {}",
                self.beta3, self.beta4
            )));
        }
        Ok(())
    }

    /// True when every tracking weight vanishes (the purely quadratic
    /// regime, where the objective is strongly convex with known modulus).
    pub fn all_beta_zero(&self) -> bool {
        self.beta1 == 0.0 && self.beta2 == 0.0 && self.beta3 == 0.0 && self.beta4 == 0.0
    }
}

/// Tracking targets: distributed bulk/surface histories on the time levels
/// and terminal bulk/surface data.
#[derive(Debug, Clone)]
pub struct Targets {
    /// Distributed bulk target, one field per time level (`n_t + 1` entries).
    pub y_q: Vec<BulkField>,
    /// Distributed surface target, one field per time level.
    pub y_sigma: Vec<BoundaryField>,
    /// Terminal bulk target.
    pub y_omega_t: BulkField,
    /// Terminal surface target.
    pub y_gamma_t: BoundaryField,
}

impl Targets {
    /// All-zero targets.
    pub fn zeros(mesh: &Mesh, grid: &TimeGrid) -> Self {
        Targets {
            y_q: vec![BulkField::zeros(mesh); grid.n_t() + 1],
            y_sigma: vec![BoundaryField::zeros(mesh); grid.n_t() + 1],
            y_omega_t: BulkField::zeros(mesh),
            y_gamma_t: BoundaryField::zeros(mesh),
        }
    }

    /// Spatially and temporally constant targets.
    pub fn constant(
        mesh: &Mesh,
        grid: &TimeGrid,
        bulk: f64,
        surface: f64,
    ) -> Result<Self, ModelError> {
        if !bulk.is_finite() || !surface.is_finite() {
            return Err(ModelError::InvalidArgument(format!(
                "target values must be finite, got ({bulk}, {surface})"
            )));
        }
        Ok(Targets {
            y_q: vec![BulkField::constant(mesh, bulk); grid.n_t() + 1],
            y_sigma: vec![BoundaryField::constant(mesh, surface); grid.n_t() + 1],
            y_omega_t: BulkField::constant(mesh, bulk),
            y_gamma_t: BoundaryField::constant(mesh, surface),
        })
    }

    /// Targets equal to an existing trajectory (hence exactly reachable).
    pub fn from_trajectory(
        mesh: &Mesh,
        grid: &TimeGrid,
        traj: &Trajectory,
    ) -> Result<Self, ModelError> {
        if !traj.conforms(mesh, grid) {
            return Err(ModelError::InvalidArgument(
                "trajectory must store n_t + 1 levels on the mesh".into(),
            ));
        }
        let y_q: Vec<BulkField> = traj.states.iter().map(|s| s.bulk().clone()).collect();
        let y_sigma: Vec<BoundaryField> = traj.states.iter().map(|s| s.boundary(mesh)).collect();
        Ok(Targets {
            y_omega_t: traj.terminal().bulk().clone(),
            y_gamma_t: traj.terminal().boundary(mesh),
            y_q,
            y_sigma,
        })
    }

    /// Validates every stored field against the mesh and grid.
    pub fn check_shapes(&self, mesh: &Mesh, grid: &TimeGrid) -> Result<(), ModelError> {
        let levels = grid.n_t() + 1;
        if self.y_q.len() != levels || self.y_sigma.len() != levels {
            return Err(ModelError::InvalidArgument(format!(
                "targets must store {levels} levels, got {} bulk / {} surface",
                self.y_q.len(),
                self.y_sigma.len()
            )));
        }
        let ok = self.y_q.iter().all(|f| f.conforms(mesh))
            && self.y_sigma.iter().all(|f| f.conforms(mesh))
            && self.y_omega_t.conforms(mesh)
            && self.y_gamma_t.conforms(mesh);
        if !ok {
            return Err(ModelError::InvalidArgument(
                "target fields do not match the mesh".into(),
            ));
        }
        Ok(())
    }

    /// Largest gap between the terminal bulk target on the boundary rows and
    /// the terminal surface target. A nonzero gap is legal but means the two
    /// terminal terms pull the boundary trace toward different data.
    pub fn terminal_trace_gap(&self, mesh: &Mesh) -> f64 {
        let n_x = mesh.n_x();
        let m = mesh.top_row();
        let yg = self.y_gamma_t.values();
        let mut gap = 0.0_f64;
        for i in 0..n_x {
            gap = gap.max((self.y_omega_t.at(i, 0) - yg[i]).abs());
            gap = gap.max((self.y_omega_t.at(i, m) - yg[n_x + i]).abs());
        }
        gap
    }
}

/// The smooth cost split into its six terms. All entries already carry
/// their `beta/2` or `nu/2` factors, so `total` is their plain sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CostBreakdown {
    /// `(beta1/2) * |y - y_Q|^2` integrated over the space-time cylinder.
    pub distributed_bulk: f64,
    /// `(beta2/2) * |y_G - y_Sigma|^2` integrated over the boundary cylinder.
    pub distributed_surface: f64,
    /// `(beta3/2) * |y(T) - y_OmegaT|^2` over the bulk.
    pub terminal_bulk: f64,
    /// `(beta4/2) * |y_G(T) - y_GammaT|^2` over the boundary.
    pub terminal_surface: f64,
    /// `(nu/2) * |u|^2` over the space-time cylinder.
    pub control_bulk: f64,
    /// `(nu_gamma/2) * |u_G|^2` over the boundary cylinder.
    pub control_surface: f64,
    /// Sum of all six terms.
    pub total: f64,
}

/// Evaluates the smooth cost of a trajectory/control pair. Tracking terms
/// use the trapezoid rule over levels; control terms use the slab sums that
/// define the discrete control space.
pub fn eval_smooth_cost(
    mesh: &Mesh,
    grid: &TimeGrid,
    traj: &Trajectory,
    control: &ControlPair,
    targets: &Targets,
    weights: &CostWeights,
) -> Result<CostBreakdown, ModelError> {
    if !traj.conforms(mesh, grid) {
        return Err(ModelError::InvalidArgument(
            "trajectory must store n_t + 1 levels on the mesh".into(),
        ));
    }
    if !control.conforms(mesh, grid) {
        return Err(ModelError::InvalidArgument(
            "control pair does not match the mesh/grid".into(),
        ));
    }
    targets.check_shapes(mesh, grid)?;

    let n_x = mesh.n_x();
    let m = mesh.top_row();
    let wg = mesh.ring_weight();

    let mut db = 0.0;
    let mut ds = 0.0;
    for level in 0..=grid.n_t() {
        let theta = grid.level_weight(level);
        let y = traj.states[level].values();
        let yq = targets.y_q[level].values();
        let ys = targets.y_sigma[level].values();
        let mut acc_b = 0.0;
        for j in 0..mesh.rows() {
            let w = mesh.bulk_weight(j);
            for i in 0..n_x {
                let k = j * n_x + i;
                let d = y[k] - yq[k];
                acc_b += w * d * d;
            }
        }
        let mut acc_s = 0.0;
        for i in 0..n_x {
            let d0 = y[i] - ys[i];
            let d1 = y[m * n_x + i] - ys[n_x + i];
            acc_s += wg * (d0 * d0 + d1 * d1);
        }
        db += theta * acc_b;
        ds += theta * acc_s;
    }

    let mut tb = 0.0;
    let mut ts = 0.0;
    {
        let y = traj.terminal().values();
        let yt = targets.y_omega_t.values();
        let yg = targets.y_gamma_t.values();
        for j in 0..mesh.rows() {
            let w = mesh.bulk_weight(j);
            for i in 0..n_x {
                let k = j * n_x + i;
                let d = y[k] - yt[k];
                tb += w * d * d;
            }
        }
        for i in 0..n_x {
            let d0 = y[i] - yg[i];
            let d1 = y[m * n_x + i] - yg[n_x + i];
            ts += wg * (d0 * d0 + d1 * d1);
        }
    }

    let mut cb = 0.0;
    let mut cs = 0.0;
    for s in 0..grid.n_t() {
        cb += grid.dt() * crate::geometry::dot_bulk(mesh, control.bulk[s].values(), control.bulk[s].values());
        cs += grid.dt()
            * crate::geometry::dot_boundary(mesh, control.boundary[s].values(), control.boundary[s].values());
    }

    let mut out = CostBreakdown {
        distributed_bulk: 0.5 * weights.beta1 * db,
        distributed_surface: 0.5 * weights.beta2 * ds,
        terminal_bulk: 0.5 * weights.beta3 * tb,
        terminal_surface: 0.5 * weights.beta4 * ts,
        control_bulk: 0.5 * weights.nu * cb,
        control_surface: 0.5 * weights.nu_gamma * cs,
        total: 0.0,
    };
    out.total = out.distributed_bulk
        + out.distributed_surface
        + out.terminal_bulk
        + out.terminal_surface
        + out.control_bulk
        + out.control_surface;
    Ok(out)
}

/// Copies the adjoint slab fields into the control space: interior bulk
/// entries carry the adjoint, bulk entries on the boundary rows are zero
/// (they do not force the dynamics), and the ring entries carry the
/// boundary adjoint. Pairing this against a direction with `control_inner`
/// gives exactly the derivative of the discrete tracking cost.
pub fn adjoint_gradient_part(
    mesh: &Mesh,
    grid: &TimeGrid,
    adj: &AdjointTrajectory,
) -> ControlPair {
    let n_x = mesh.n_x();
    let m = mesh.top_row();
    let mut out = ControlPair::zeros(mesh, grid);
    for s in 0..grid.n_t() {
        let p = adj.slab(s).values();
        {
            let bulk = out.bulk[s].values_mut();
            for j in 1..m {
                for i in 0..n_x {
                    let k = j * n_x + i;
                    bulk[k] = p[k];
                }
            }
        }
        let bnd = out.boundary[s].values_mut();
        for i in 0..n_x {
            bnd[i] = p[i];
            bnd[n_x + i] = p[m * n_x + i];
        }
    }
    out
}

/// Gradient of the smooth cost at `control`, with the adjoint trajectory it
/// was assembled from. `base` must be the forward solve of `control`.
///
/// Interior bulk entries are `nu * u + p`, boundary-row bulk entries are
/// `nu * u` (the adjoint does not act on non-forcing entries), and ring
/// entries are `nu_gamma * u_G + p_G`.
pub fn smooth_gradient(
    mesh: &Mesh,
    grid: &TimeGrid,
    pots: &PotentialPair,
    base: &Trajectory,
    control: &ControlPair,
    targets: &Targets,
    weights: &CostWeights,
    opts: &SolverOptions,
) -> Result<(ControlPair, AdjointTrajectory), ModelError> {
    if !control.conforms(mesh, grid) {
        return Err(ModelError::InvalidArgument(
            "control pair does not match the mesh/grid".into(),
        ));
    }
    let adj = solve_adjoint(mesh, grid, pots, base, targets, weights, opts)?;
    let mut grad = adjoint_gradient_part(mesh, grid, &adj);
    for s in 0..grid.n_t() {
        grad.bulk[s].axpy(weights.nu, &control.bulk[s]);
        grad.boundary[s].axpy(weights.nu_gamma, &control.boundary[s]);
    }
    Ok((grad, adj))
}

/// Directional derivative of the smooth cost: `<grad, h>` in the control
/// inner product.
pub fn smooth_directional_derivative(
    grad: &ControlPair,
    h: &ControlPair,
    mesh: &Mesh,
    grid: &TimeGrid,
) -> f64 {
    control_inner(grad, h, mesh, grid)
}

/// Exact second variation of the smooth reduced cost,
/// `D^2 J(u)[v, w]`, given the linearized states `phi = DS(u) v` and
/// `psi = DS(u) w` and the adjoint of the base point.
///
/// The three groups of terms are the tracking curvature (products of the
/// linearized states), the quadratic control cost, and the potential
/// curvature `-p * f'''(y) * phi * psi` integrated against the adjoint; the
/// curvature of slab `s` is evaluated at level `s + 1`, matching the
/// implicit stepping.
pub fn quadratic_form_d2j(
    mesh: &Mesh,
    grid: &TimeGrid,
    pots: &PotentialPair,
    base: &Trajectory,
    adj: &AdjointTrajectory,
    weights: &CostWeights,
    v: &ControlPair,
    phi: &Trajectory,
    w: &ControlPair,
    psi: &Trajectory,
) -> Result<f64, ModelError> {
    if !phi.conforms(mesh, grid) || !psi.conforms(mesh, grid) {
        return Err(ModelError::InvalidArgument(
            "linearized states must store n_t + 1 levels on the mesh".into(),
        ));
    }
    if !v.conforms(mesh, grid) || !w.conforms(mesh, grid) {
        return Err(ModelError::InvalidArgument(
            "direction pairs do not match the mesh/grid".into(),
        ));
    }
    if adj.n_slabs() != grid.n_t() {
        return Err(ModelError::InvalidArgument(format!(
            "adjoint must store {} slabs, got {}",
            grid.n_t(),
            adj.n_slabs()
        )));
    }

    let n_x = mesh.n_x();
    let m = mesh.top_row();
    let wg = mesh.ring_weight();
    let dt = grid.dt();
    let mut total = 0.0;

    // Tracking curvature over the levels plus the terminal terms.
    for level in 0..=grid.n_t() {
        let theta = grid.level_weight(level);
        let a = phi.states[level].values();
        let b = psi.states[level].values();
        let mut acc_b = 0.0;
        for j in 0..mesh.rows() {
            let wj = mesh.bulk_weight(j);
            for i in 0..n_x {
                let k = j * n_x + i;
                acc_b += wj * a[k] * b[k];
            }
        }
        let mut acc_s = 0.0;
        for i in 0..n_x {
            acc_s += wg * (a[i] * b[i] + a[m * n_x + i] * b[m * n_x + i]);
        }
        total += theta * (weights.beta1 * acc_b + weights.beta2 * acc_s);
    }
    {
        let a = phi.terminal().values();
        let b = psi.terminal().values();
        let mut acc_b = 0.0;
        for j in 0..mesh.rows() {
            let wj = mesh.bulk_weight(j);
            for i in 0..n_x {
                let k = j * n_x + i;
                acc_b += wj * a[k] * b[k];
            }
        }
        let mut acc_s = 0.0;
        for i in 0..n_x {
            acc_s += wg * (a[i] * b[i] + a[m * n_x + i] * b[m * n_x + i]);
        }
        total += weights.beta3 * acc_b + weights.beta4 * acc_s;
    }

    // Quadratic control cost.
    for s in 0..grid.n_t() {
        total += dt
            * (weights.nu * crate::geometry::dot_bulk(mesh, v.bulk[s].values(), w.bulk[s].values())
                + weights.nu_gamma
                    * crate::geometry::dot_boundary(
                        mesh,
                        v.boundary[s].values(),
                        w.boundary[s].values(),
                    ));
    }

    // Potential curvature against the adjoint; slab s pairs with level s+1.
    let mut third = vec![0.0; mesh.n_nodes()];
    for s in 0..grid.n_t() {
        let level = s + 1;
        crate::pde::operator::nodal_potential_derivative(
            mesh,
            pots,
            3,
            base.states[level].values(),
            &mut third,
        );
        let p = adj.slab(s).values();
        let a = phi.states[level].values();
        let b = psi.states[level].values();
        let mut acc = 0.0;
        for j in 1..m {
            for i in 0..n_x {
                let k = j * n_x + i;
                acc += mesh.dx() * mesh.dy() * p[k] * third[k] * a[k] * b[k];
            }
        }
        for i in 0..n_x {
            acc += wg * p[i] * third[i] * a[i] * b[i];
            let k = m * n_x + i;
            acc += wg * p[k] * third[k] * a[k] * b[k];
        }
        total -= dt * acc;
    }

    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_mesh, CoupledField};
    use crate::pde::{solve_linearized, solve_state, LinearKernel};
    use crate::potentials::PotentialSpec;

    fn desk() -> (Mesh, TimeGrid) {
        (
            build_mesh(8, 4, 1.0, 1.0).unwrap(),
            TimeGrid::new(0.25, 8).unwrap(),
        )
    }

    fn tight_opts() -> SolverOptions {
        let mut opts = SolverOptions::default();
        opts.newton_tol = 1e-13;
        opts.kernel = LinearKernel::Banded;
        opts
    }

    #[test]
    fn weights_validation_catches_bad_values() {
        let good = CostWeights {
            beta1: 1.0,
            beta2: 0.5,
            beta3: 0.2,
            beta4: 0.2,
            nu: 0.1,
            nu_gamma: 0.1,
            alpha: 0.0,
            alpha_gamma: 0.0,
        };
        assert!(good.validate().is_ok());
        assert!(!good.all_beta_zero());

        let mut w = good;
        w.nu = 0.0;
        assert!(w.validate().is_err());
        let mut w = good;
        w.beta2 = -1.0;
        assert!(w.validate().is_err());
        let mut w = good;
        w.beta4 = 0.3;
        assert!(w.validate().is_err());

        let quad = CostWeights {
            beta1: 0.0,
            beta2: 0.0,
            beta3: 0.0,
            beta4: 0.0,
            ..good
        };
        assert!(quad.all_beta_zero());
    }

    #[test]
    fn cost_breakdown_matches_hand_integrals() {
        // Zero state against constant targets: every tracking term is an
        // explicit product of weight, measure, and squared misfit.
        let (mesh, grid) = desk();
        let states = vec![CoupledField::zeros(&mesh); grid.n_t() + 1];
        let traj = Trajectory { states };
        let control = ControlPair::zeros(&mesh, &grid);
        let targets = Targets::constant(&mesh, &grid, 1.0, 1.0).unwrap();
        let weights = CostWeights {
            beta1: 2.0,
            beta2: 4.0,
            beta3: 1.0,
            beta4: 3.0,
            nu: 0.1,
            nu_gamma: 0.1,
            alpha: 0.0,
            alpha_gamma: 0.0,
        };
        // Note beta3 != beta4 is fine for plain evaluation.
        let cost = eval_smooth_cost(&mesh, &grid, &traj, &control, &targets, &weights).unwrap();

        // T = 0.25, |Omega| = 1, |Gamma| = 2.
        assert!((cost.distributed_bulk - 0.25).abs() < 1e-14);
        assert!((cost.distributed_surface - 1.0).abs() < 1e-14);
        assert!((cost.terminal_bulk - 0.5).abs() < 1e-14);
        assert!((cost.terminal_surface - 3.0).abs() < 1e-14);
        assert_eq!(cost.control_bulk, 0.0);
        assert_eq!(cost.control_surface, 0.0);
        assert!((cost.total - 4.75).abs() < 1e-13);
    }

    #[test]
    fn control_cost_matches_hand_integrals() {
        let (mesh, grid) = desk();
        let states = vec![CoupledField::zeros(&mesh); grid.n_t() + 1];
        let traj = Trajectory { states };
        let control = ControlPair::constant(&mesh, &grid, 2.0, -1.0);
        let targets = Targets::zeros(&mesh, &grid);
        let weights = CostWeights {
            beta1: 0.0,
            beta2: 0.0,
            beta3: 0.0,
            beta4: 0.0,
            nu: 0.2,
            nu_gamma: 0.4,
            alpha: 0.0,
            alpha_gamma: 0.0,
        };
        let cost = eval_smooth_cost(&mesh, &grid, &traj, &control, &targets, &weights).unwrap();
        // (nu/2) * T * |Omega| * 4 and (nu_gamma/2) * T * |Gamma| * 1.
        assert!((cost.control_bulk - 0.1).abs() < 1e-14);
        assert!((cost.control_surface - 0.1).abs() < 1e-14);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let (mesh, grid) = desk();
        let pots = PotentialPair::matched(PotentialSpec::logarithmic(1.0, 2.0).unwrap());
        let opts = tight_opts();
        let y0 = CoupledField::from_fn(&mesh, |x, y| 0.15 * (6.28318 * x).cos() + 0.05 * y);
        let u = ControlPair::constant(&mesh, &grid, 0.2, -0.1);
        let targets = Targets::constant(&mesh, &grid, 0.1, -0.2).unwrap();
        let weights = CostWeights {
            beta1: 1.0,
            beta2: 0.6,
            beta3: 0.3,
            beta4: 0.3,
            nu: 0.15,
            nu_gamma: 0.25,
            alpha: 0.0,
            alpha_gamma: 0.0,
        };

        let base = solve_state(&mesh, &grid, &pots, &y0, &u, &opts).unwrap();
        let (grad, _) =
            smooth_gradient(&mesh, &grid, &pots, &base, &u, &targets, &weights, &opts).unwrap();

        let mut h = ControlPair::zeros(&mesh, &grid);
        for s in 0..grid.n_t() {
            for (k, v) in h.bulk[s].values_mut().iter_mut().enumerate() {
                *v = ((k + 3 * s) as f64 * 0.37).sin();
            }
            for (k, v) in h.boundary[s].values_mut().iter_mut().enumerate() {
                *v = ((k as f64) * 0.61 + s as f64).cos();
            }
        }
        let predicted = smooth_directional_derivative(&grad, &h, &mesh, &grid);

        let eps = 1e-4;
        let eval = |tau: f64| -> f64 {
            let mut u_t = u.clone();
            u_t.axpy(tau, &h);
            let traj = solve_state(&mesh, &grid, &pots, &y0, &u_t, &opts).unwrap();
            eval_smooth_cost(&mesh, &grid, &traj, &u_t, &targets, &weights)
                .unwrap()
                .total
        };
        let fd = (eval(eps) - eval(-eps)) / (2.0 * eps);
        assert!(
            (predicted - fd).abs() <= 5e-6 * predicted.abs().max(1.0),
            "directional derivative {predicted} vs central difference {fd}"
        );

        // Non-forcing bulk entries on the boundary rows reduce to the plain
        // quadratic cost: gradient = nu * u there.
        let m = mesh.top_row();
        for s in 0..grid.n_t() {
            let g = grad.bulk[s].values();
            let uv = u.bulk[s].values();
            for i in 0..mesh.n_x() {
                for &j in &[0, m] {
                    let k = j * mesh.n_x() + i;
                    assert!((g[k] - weights.nu * uv[k]).abs() <= 1e-14);
                }
            }
        }
    }

    #[test]
    fn quadratic_form_matches_second_differences_and_is_symmetric() {
        let (mesh, grid) = desk();
        let pots = PotentialPair::matched(PotentialSpec::quartic());
        let opts = tight_opts();
        let y0 = CoupledField::from_fn(&mesh, |x, _| 0.3 * (6.28318 * x).sin());
        let u = ControlPair::constant(&mesh, &grid, 0.1, -0.05);
        let targets = Targets::constant(&mesh, &grid, 0.2, 0.0).unwrap();
        let weights = CostWeights {
            beta1: 1.0,
            beta2: 0.7,
            beta3: 0.4,
            beta4: 0.4,
            nu: 0.1,
            nu_gamma: 0.1,
            alpha: 0.0,
            alpha_gamma: 0.0,
        };

        let base = solve_state(&mesh, &grid, &pots, &y0, &u, &opts).unwrap();
        let (_, adj) =
            smooth_gradient(&mesh, &grid, &pots, &base, &u, &targets, &weights, &opts).unwrap();

        let mut h = ControlPair::zeros(&mesh, &grid);
        for s in 0..grid.n_t() {
            for (k, v) in h.bulk[s].values_mut().iter_mut().enumerate() {
                *v = ((k as f64) * 0.21 - s as f64 * 0.5).cos();
            }
            for (k, v) in h.boundary[s].values_mut().iter_mut().enumerate() {
                *v = ((k + s) as f64 * 0.43).sin();
            }
        }
        let phi = solve_linearized(&mesh, &grid, &pots, &base, &h, None, &opts).unwrap();
        let d2 = quadratic_form_d2j(
            &mesh, &grid, &pots, &base, &adj, &weights, &h, &phi, &h, &phi,
        )
        .unwrap();

        let eval = |tau: f64| -> f64 {
            let mut u_t = u.clone();
            u_t.axpy(tau, &h);
            let traj = solve_state(&mesh, &grid, &pots, &y0, &u_t, &opts).unwrap();
            eval_smooth_cost(&mesh, &grid, &traj, &u_t, &targets, &weights)
                .unwrap()
                .total
        };
        let eps = 1e-3;
        let fd2 = (eval(eps) - 2.0 * eval(0.0) + eval(-eps)) / (eps * eps);
        assert!(
            (d2 - fd2).abs() <= 1e-4 * d2.abs().max(1.0),
            "second variation {d2} vs second difference {fd2}"
        );

        // Symmetry of the bilinear form in its two argument pairs.
        let mut h2 = ControlPair::zeros(&mesh, &grid);
        for s in 0..grid.n_t() {
            for (k, v) in h2.bulk[s].values_mut().iter_mut().enumerate() {
                *v = ((k as f64) * 0.17 + s as f64 * 0.9).sin();
            }
        }
        let phi2 = solve_linearized(&mesh, &grid, &pots, &base, &h2, None, &opts).unwrap();
        let a = quadratic_form_d2j(
            &mesh, &grid, &pots, &base, &adj, &weights, &h, &phi, &h2, &phi2,
        )
        .unwrap();
        let b = quadratic_form_d2j(
            &mesh, &grid, &pots, &base, &adj, &weights, &h2, &phi2, &h, &phi,
        )
        .unwrap();
        assert!((a - b).abs() <= 1e-13 * a.abs().max(1.0));
    }

    #[test]
    fn terminal_trace_gap_reports_mismatch() {
        let (mesh, grid) = desk();
        let matched = Targets::constant(&mesh, &grid, 0.3, 0.3).unwrap();
        assert_eq!(matched.terminal_trace_gap(&mesh), 0.0);
        let split = Targets::constant(&mesh, &grid, 0.3, 0.1).unwrap();
        assert!((split.terminal_trace_gap(&mesh) - 0.2).abs() < 1e-15);
    }
}
