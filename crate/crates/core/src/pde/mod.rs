//! Time discretization and the coupled implicit-Euler solvers.
//!
//! Time is split into `n_t` uniform slabs of width `dt = T / n_t`, with state
//! levels at `t_n = n * dt` for `n = 0..n_t`. States (forward, linearized,
//! bilinearized) live on the `n_t + 1` levels; controls and adjoint fields
//! live on the `n_t` slabs, slab `s` covering `(t_s, t_{s+1}]`. Control-time
//! integrals use the rectangle rule over slabs, state-tracking integrals use
//! the trapezoid rule over levels; this pairing is what makes the discrete
//! adjoint gradient exact (see [`crate::objective`]).
//!
//! All four systems are advanced by backward Euler. The nonlinear forward
//! step is solved by a damped Newton iteration whose iterates are confined to
//! the open spinodal interval when a logarithmic potential is present; the
//! linearized, bilinearized, and adjoint systems reuse the same step matrix
//! (respectively its transpose) at the stored base states, so the whole chain
//! is one consistent discrete linearization.

pub mod linalg;
pub(crate) mod operator;
mod solvers;

pub use solvers::{
    estimate_separation, solve_adjoint, solve_bilinearized, solve_linearized, solve_state,
    solve_state_with_stats, Separation, SolveStats,
};

use crate::error::ModelError;
use crate::geometry::{BoundaryField, BulkField, CoupledField, Mesh};

/// Uniform time grid on `[0, T]` with `n_t` slabs.
#[derive(Debug, Clone, Copy)]
pub struct TimeGrid {
    t_final: f64,
    n_t: usize,
    dt: f64,
}

impl TimeGrid {
    /// Builds the grid; requires a positive finite horizon and `n_t >= 2`.
    pub fn new(t_final: f64, n_t: usize) -> Result<Self, ModelError> {
        if !(t_final.is_finite() && t_final > 0.0) {
            return Err(ModelError::InvalidArgument(format!(
                "time horizon must be positive and finite, got {t_final}"
            )));
        }
        if n_t < 2 {
            return Err(ModelError::InvalidArgument(format!(
                "need at least 2 time slabs, got {n_t}"
            )));
        }
        Ok(TimeGrid {
            t_final,
            n_t,
            dt: t_final / n_t as f64,
        })
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Time of level `n`.
    pub fn t(&self, n: usize) -> f64 {
        n as f64 * self.dt
    }

    /// Trapezoid weight of level `n`: `dt/2` at the endpoints, `dt` inside.
    pub fn level_weight(&self, n: usize) -> f64 {
        if n == 0 || n == self.n_t {
            0.5 * self.dt
        } else {
            self.dt
        }
    }
}

/// State trajectory: one coupled field per time level, `states[n]` at
/// `t = n * dt`, including the initial datum at index 0.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<CoupledField>,
}

impl Trajectory {
    /// Number of stored levels (`n_t + 1` for a complete trajectory).
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Terminal state `y(T)`.
    pub fn terminal(&self) -> &CoupledField {
        self.states.last().expect("empty trajectory")
    }

    /// Largest absolute nodal value over all levels.
    pub fn max_abs(&self) -> f64 {
        self.states.iter().fold(0.0, |m, s| m.max(s.max_abs()))
    }

    pub fn conforms(&self, mesh: &Mesh, grid: &TimeGrid) -> bool {
        self.states.len() == grid.n_t() + 1 && self.states.iter().all(|s| s.conforms(mesh))
    }
}

/// Adjoint trajectory in slab layout.
///
/// For `0 <= k <= n_t - 1`, `states[k]` is the adjoint field paired with
/// control slab `k` (the backward-Euler multiplier of the step ending at
/// level `k + 1`, scaled back to a field). `states[n_t]` is the terminal
/// adjoint datum: `beta3 * (y(T) - target)` at interior nodes and
/// `beta4 * (y_Gamma(T) - target_Gamma)` on the boundary rows, stored exactly.
#[derive(Debug, Clone)]
pub struct AdjointTrajectory {
    pub states: Vec<CoupledField>,
}

impl AdjointTrajectory {
    /// Adjoint field paired with control slab `s`.
    pub fn slab(&self, s: usize) -> &CoupledField {
        &self.states[s]
    }

    /// Terminal adjoint datum `p(T)`.
    pub fn terminal_datum(&self) -> &CoupledField {
        self.states.last().expect("empty adjoint trajectory")
    }

    /// Number of slab fields (excluding the terminal datum).
    pub fn n_slabs(&self) -> usize {
        self.states.len() - 1
    }
}

/// Control pair `(u, u_Gamma)` on the `n_t` time slabs.
///
/// Bulk controls carry a value on every node (the boundary-row values have
/// `L^2` weight but do not force the dynamics; the boundary equation is
/// forced by the boundary control alone), boundary controls one value per
/// ring node.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlPair {
    pub bulk: Vec<BulkField>,
    pub boundary: Vec<BoundaryField>,
}

impl ControlPair {
    /// Zero control on every slab.
    pub fn zeros(mesh: &Mesh, grid: &TimeGrid) -> Self {
        ControlPair {
            bulk: vec![BulkField::zeros(mesh); grid.n_t()],
            boundary: vec![BoundaryField::zeros(mesh); grid.n_t()],
        }
    }

    /// Constant-in-time-and-space control.
    pub fn constant(mesh: &Mesh, grid: &TimeGrid, bulk: f64, boundary: f64) -> Self {
        ControlPair {
            bulk: vec![BulkField::constant(mesh, bulk); grid.n_t()],
            boundary: vec![BoundaryField::constant(mesh, boundary); grid.n_t()],
        }
    }

    pub fn n_slabs(&self) -> usize {
        self.bulk.len()
    }

    pub fn conforms(&self, mesh: &Mesh, grid: &TimeGrid) -> bool {
        self.bulk.len() == grid.n_t()
            && self.boundary.len() == grid.n_t()
            && self.bulk.iter().all(|f| f.conforms(mesh))
            && self.boundary.iter().all(|f| f.conforms(mesh))
    }

    /// In-place `self += scale * other`.
    pub fn axpy(&mut self, scale: f64, other: &ControlPair) {
        debug_assert_eq!(self.bulk.len(), other.bulk.len());
        for (a, b) in self.bulk.iter_mut().zip(other.bulk.iter()) {
            a.axpy(scale, b);
        }
        for (a, b) in self.boundary.iter_mut().zip(other.boundary.iter()) {
            a.axpy(scale, b);
        }
    }

    /// In-place multiplication by a scalar.
    pub fn scale(&mut self, scale: f64) {
        for f in self.bulk.iter_mut() {
            f.scale(scale);
        }
        for f in self.boundary.iter_mut() {
            f.scale(scale);
        }
    }

    /// Largest absolute entry over both components and all slabs.
    pub fn max_abs(&self) -> f64 {
        let b = self.bulk.iter().fold(0.0_f64, |m, f| m.max(f.max_abs()));
        let g = self.boundary.iter().fold(0.0_f64, |m, f| m.max(f.max_abs()));
        b.max(g)
    }
}

/// Box constraints for the two controls: `rho_min <= u <= rho_max` in the
/// bulk, `rho_gamma_min <= u_Gamma <= rho_gamma_max` on the boundary.
#[derive(Debug, Clone, Copy)]
pub struct BoxBounds {
    pub rho_min: f64,
    pub rho_max: f64,
    pub rho_gamma_min: f64,
    pub rho_gamma_max: f64,
}

impl BoxBounds {
    pub fn new(
        rho_min: f64,
        rho_max: f64,
        rho_gamma_min: f64,
        rho_gamma_max: f64,
    ) -> Result<Self, ModelError> {
        for (name, v) in [
            ("rho_min", rho_min),
            ("rho_max", rho_max),
            ("rho_gamma_min", rho_gamma_min),
            ("rho_gamma_max", rho_gamma_max),
        ] {
            if !v.is_finite() {
                return Err(ModelError::InvalidBounds(format!("{name} must be finite, got {v}")));
            }
        }
        if rho_min > rho_max {
            return Err(ModelError::InvalidBounds(format!(
                "rho_min = {rho_min} exceeds rho_max = {rho_max}"
            )));
        }
        if rho_gamma_min > rho_gamma_max {
            return Err(ModelError::InvalidBounds(format!(
                "rho_gamma_min = {rho_gamma_min} exceeds rho_gamma_max = {rho_gamma_max}"
            )));
        }
        Ok(BoxBounds {
            rho_min,
            rho_max,
            rho_gamma_min,
            rho_gamma_max,
        })
    }

    /// Symmetric box `[-r, r] x [-r_gamma, r_gamma]`.
    pub fn symmetric(r: f64, r_gamma: f64) -> Result<Self, ModelError> {
        BoxBounds::new(-r, r, -r_gamma, r_gamma)
    }

    /// Whether zero is strictly interior to both boxes (needed by the
    /// sparsity theory and the proximal tie-break).
    pub fn zero_strictly_interior(&self) -> bool {
        self.rho_min < 0.0 && 0.0 < self.rho_max && self.rho_gamma_min < 0.0 && 0.0 < self.rho_gamma_max
    }

    pub fn clamp_bulk(&self, v: f64) -> f64 {
        v.clamp(self.rho_min, self.rho_max)
    }

    pub fn clamp_boundary(&self, v: f64) -> f64 {
        v.clamp(self.rho_gamma_min, self.rho_gamma_max)
    }

    /// Projects a control pair onto the box, componentwise.
    pub fn project(&self, u: &mut ControlPair) {
        for f in u.bulk.iter_mut() {
            for v in f.values_mut() {
                *v = v.clamp(self.rho_min, self.rho_max);
            }
        }
        for f in u.boundary.iter_mut() {
            for v in f.values_mut() {
                *v = v.clamp(self.rho_gamma_min, self.rho_gamma_max);
            }
        }
    }

    /// Whether every entry of the pair lies in the box.
    pub fn contains(&self, u: &ControlPair) -> bool {
        u.bulk.iter().all(|f| {
            f.values()
                .iter()
                .all(|&v| v >= self.rho_min && v <= self.rho_max)
        }) && u.boundary.iter().all(|f| {
            f.values()
                .iter()
                .all(|&v| v >= self.rho_gamma_min && v <= self.rho_gamma_max)
        })
    }
}

/// How the implicit steps solve their linear systems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LinearKernel {
    /// Banded LU unless the band storage would be excessive.
    #[default]
    Auto,
    /// Always the banded direct kernel.
    Banded,
    /// Always the Jacobi-preconditioned BiCGSTAB kernel.
    Iterative,
}

/// Tolerances and limits for the implicit time steps.
#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    /// Newton convergence threshold on the max-norm of the strong residual.
    pub newton_tol: f64,
    /// Maximum Newton iterations per time step.
    pub newton_max_iters: usize,
    /// Maximum step halvings inside one Newton iteration.
    pub max_halvings: u32,
    /// Relative tolerance of the iterative linear kernel.
    pub lin_tol: f64,
    /// Linear kernel selection.
    pub kernel: LinearKernel,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            newton_tol: 1e-11,
            newton_max_iters: 30,
            max_halvings: 60,
            lin_tol: 1e-12,
            kernel: LinearKernel::Auto,
        }
    }
}

/// Weighted `L^2(0,T; L^2 x L^2)` norm of a trajectory: trapezoid in time,
/// bulk and ring quadrature in space.
pub fn trajectory_norm(traj: &Trajectory, mesh: &Mesh, grid: &TimeGrid) -> f64 {
    debug_assert!(traj.conforms(mesh, grid));
    let mut total = 0.0;
    for (n, state) in traj.states.iter().enumerate() {
        let w = grid.level_weight(n);
        let vals = state.values();
        let mut bulk = 0.0;
        for j in 0..mesh.rows() {
            let wj = mesh.bulk_weight(j);
            for i in 0..mesh.n_x() {
                let v = vals[mesh.idx(i, j)];
                bulk += wj * v * v;
            }
        }
        let mut ring = 0.0;
        for i in 0..mesh.n_x() {
            let b = vals[mesh.idx(i, 0)];
            let t = vals[mesh.idx(i, mesh.top_row())];
            ring += mesh.ring_weight() * (b * b + t * t);
        }
        total += w * (bulk + ring);
    }
    total.sqrt()
}

/// Control-space inner product: rectangle rule over slabs, bulk weights for
/// `u`, ring weights for `u_Gamma`. This is the Riesz geometry in which the
/// smooth gradient is reported.
pub fn control_inner(a: &ControlPair, b: &ControlPair, mesh: &Mesh, grid: &TimeGrid) -> f64 {
    debug_assert!(a.conforms(mesh, grid) && b.conforms(mesh, grid));
    let dt = grid.dt();
    let mut total = 0.0;
    for s in 0..grid.n_t() {
        total += dt * crate::geometry::dot_bulk(mesh, a.bulk[s].values(), b.bulk[s].values());
        total +=
            dt * crate::geometry::dot_boundary(mesh, a.boundary[s].values(), b.boundary[s].values());
    }
    total
}

/// Control-space norm induced by [`control_inner`].
pub fn control_norm(u: &ControlPair, mesh: &Mesh, grid: &TimeGrid) -> f64 {
    control_inner(u, u, mesh, grid).sqrt()
}
