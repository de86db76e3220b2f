//! Sparsity penalties: proximal maps under box constraints, subgradient
//! selection, stationarity residuals, and structure audits.
//!
//! Two nonsmooth penalties are supported on top of the quadratic control
//! cost. The *full* penalty is the weighted space-time L1 norm
//! `alpha |u|_{L1(Q)} + alpha_G |u_G|_{L1(Sigma)}`; its prox acts node by
//! node, so optimal controls vanish on the set where the adjoint stays
//! strictly below the threshold `alpha`. The *time-directional* penalty
//! integrates the spatial L2 norms over time,
//! `alpha int |u(t)|_{L2} dt + alpha_G int |u_G(t)|_{L2} dt`; its prox acts
//! slab by slab, so whole time slabs switch off at once.
//!
//! All maps here are exact minimizers of their defining problems (closed
//! form pointwise, a monotone bisection for the slab groups under a box),
//! which is what makes the stationarity residual a trustworthy optimality
//! certificate.

use rand::distributions::Uniform;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::ModelError;
use crate::geometry::{dot_bulk, dot_boundary, Mesh};
use crate::objective::{adjoint_gradient_part, CostWeights, Targets};
use crate::pde::{solve_adjoint, solve_state, BoxBounds, ControlPair, SolverOptions, TimeGrid};
use crate::potentials::PotentialPair;

/// Which sparsity penalty is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SparsityMode {
    /// No nonsmooth term; the objective is smooth with box constraints.
    #[default]
    NoSparsity,
    /// Space-time L1 penalty: pointwise sparsity.
    Full,
    /// Time integral of spatial L2 norms: whole slabs switch off.
    TimeDirectional,
}

impl SparsityMode {
    /// True when a nonsmooth term is present.
    pub fn is_sparse(&self) -> bool {
        !matches!(self, SparsityMode::NoSparsity)
    }
}

/// Pointwise prox of `tau |.|` under the box `[lo, hi]`: soft threshold,
/// then clamp. Exact for every box (the objective is convex in one
/// variable, so clamping the unconstrained minimizer is the constrained
/// minimizer).
pub fn prox_l1_box(w: f64, tau: f64, lo: f64, hi: f64) -> f64 {
    let soft = if w > tau {
        w - tau
    } else if w < -tau {
        w + tau
    } else {
        0.0
    };
    soft.clamp(lo, hi)
}

fn weighted_norm(values: &[f64], node_weights: &[f64]) -> f64 {
    values
        .iter()
        .zip(node_weights.iter())
        .map(|(v, w)| w * v * v)
        .sum::<f64>()
        .sqrt()
}

/// Prox of `tau |.|_W` (the weighted L2 group norm) under the box
/// `[lo, hi]`, in place, for one slab.
///
/// The slab is set to zero exactly when `|w|_W <= tau`. Otherwise the
/// minimizer has the form `v = clamp(w * t)` with `t = sigma/(sigma+tau)`
/// and `sigma = |v|_W`; the scalar fixed point is found by bisection, which
/// is monotone and deterministic. Requires `lo < 0 < hi` (zero strictly
/// inside the box), the regime in which the vanishing law above holds.
pub fn prox_group_time_box(
    values: &mut [f64],
    node_weights: &[f64],
    tau: f64,
    lo: f64,
    hi: f64,
) -> Result<(), ModelError> {
    if values.len() != node_weights.len() {
        return Err(ModelError::InvalidArgument(format!(
            "group prox: {} values but {} weights",
            values.len(),
            node_weights.len()
        )));
    }
    if node_weights.iter().any(|w| !w.is_finite() || *w <= 0.0) {
        return Err(ModelError::InvalidArgument(
            "group prox: node weights must be positive and finite".into(),
        ));
    }
    if !tau.is_finite() || tau < 0.0 {
        return Err(ModelError::InvalidArgument(format!(
            "group prox: threshold must be finite and nonnegative, got {tau}"
        )));
    }
    if !(lo < 0.0 && 0.0 < hi) {
        return Err(ModelError::InvalidBounds(format!(
            "group prox needs zero strictly inside the box, got [{lo}, {hi}]"
        )));
    }

    if tau == 0.0 {
        for v in values.iter_mut() {
            *v = v.clamp(lo, hi);
        }
        return Ok(());
    }
    if weighted_norm(values, node_weights) <= tau {
        values.fill(0.0);
        return Ok(());
    }

    // sigma -> |clamp(w * sigma/(sigma+tau))|_W - sigma changes sign on
    // (0, |clamp(w)|_W]; bisect to the fixed point.
    let clamped_norm = {
        let clamped: Vec<f64> = values.iter().map(|v| v.clamp(lo, hi)).collect();
        weighted_norm(&clamped, node_weights)
    };
    let gap = |sigma: f64| -> f64 {
        let t = sigma / (sigma + tau);
        let norm = values
            .iter()
            .zip(node_weights.iter())
            .map(|(v, w)| {
                let c = (v * t).clamp(lo, hi);
                w * c * c
            })
            .sum::<f64>()
            .sqrt();
        norm - sigma
    };
    let mut a = 0.0_f64;
    let mut b = clamped_norm;
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if gap(mid) > 0.0 {
            a = mid;
        } else {
            b = mid;
        }
        if b - a <= 1e-12 * clamped_norm.max(1.0) {
            break;
        }
    }
    let sigma = 0.5 * (a + b);
    let t = sigma / (sigma + tau);
    for v in values.iter_mut() {
        *v = (*v * t).clamp(lo, hi);
    }
    Ok(())
}

fn bulk_node_weights(mesh: &Mesh) -> Vec<f64> {
    let mut w = vec![0.0; mesh.n_nodes()];
    for j in 0..mesh.rows() {
        let wj = mesh.bulk_weight(j);
        for i in 0..mesh.n_x() {
            w[mesh.idx(i, j)] = wj;
        }
    }
    w
}

fn boundary_node_weights(mesh: &Mesh) -> Vec<f64> {
    vec![mesh.ring_weight(); 2 * mesh.n_x()]
}

/// Proximal step of the active penalty under the box, applied to the whole
/// control pair: `argmin j(v) + |v - w|^2 / (2 step)` over the box. `step`
/// is the gradient step length, so the thresholds are `step * alpha`.
pub fn prox_control(
    mesh: &Mesh,
    grid: &TimeGrid,
    mode: SparsityMode,
    w: &ControlPair,
    step: f64,
    alpha: f64,
    alpha_gamma: f64,
    bounds: &BoxBounds,
) -> Result<ControlPair, ModelError> {
    if !w.conforms(mesh, grid) {
        return Err(ModelError::InvalidArgument(
            "prox input does not match the mesh/grid".into(),
        ));
    }
    if !step.is_finite() || step <= 0.0 {
        return Err(ModelError::InvalidArgument(format!(
            "prox step must be positive, got {step}"
        )));
    }
    let mut out = w.clone();
    match mode {
        SparsityMode::NoSparsity => {
            bounds.project(&mut out);
        }
        SparsityMode::Full => {
            let (tau, tau_g) = (step * alpha, step * alpha_gamma);
            for s in 0..grid.n_t() {
                for v in out.bulk[s].values_mut() {
                    *v = prox_l1_box(*v, tau, bounds.rho_min, bounds.rho_max);
                }
                for v in out.boundary[s].values_mut() {
                    *v = prox_l1_box(*v, tau_g, bounds.rho_gamma_min, bounds.rho_gamma_max);
                }
            }
        }
        SparsityMode::TimeDirectional => {
            let wb = bulk_node_weights(mesh);
            let wg = boundary_node_weights(mesh);
            let (tau, tau_g) = (step * alpha, step * alpha_gamma);
            for s in 0..grid.n_t() {
                prox_group_time_box(
                    out.bulk[s].values_mut(),
                    &wb,
                    tau,
                    bounds.rho_min,
                    bounds.rho_max,
                )?;
                prox_group_time_box(
                    out.boundary[s].values_mut(),
                    &wg,
                    tau_g,
                    bounds.rho_gamma_min,
                    bounds.rho_gamma_max,
                )?;
            }
        }
    }
    Ok(out)
}

/// Value of the active sparsity penalty.
pub fn eval_sparsity(
    mesh: &Mesh,
    grid: &TimeGrid,
    mode: SparsityMode,
    u: &ControlPair,
    alpha: f64,
    alpha_gamma: f64,
) -> f64 {
    let dt = grid.dt();
    match mode {
        SparsityMode::NoSparsity => 0.0,
        SparsityMode::Full => {
            let mut l1_b = 0.0;
            let mut l1_g = 0.0;
            for s in 0..grid.n_t() {
                let vals = u.bulk[s].values();
                for j in 0..mesh.rows() {
                    let w = mesh.bulk_weight(j);
                    for i in 0..mesh.n_x() {
                        l1_b += dt * w * vals[mesh.idx(i, j)].abs();
                    }
                }
                for v in u.boundary[s].values() {
                    l1_g += dt * mesh.ring_weight() * v.abs();
                }
            }
            alpha * l1_b + alpha_gamma * l1_g
        }
        SparsityMode::TimeDirectional => {
            let (nb, ng) = group_norms(mesh, u);
            let sum_b: f64 = nb.iter().sum();
            let sum_g: f64 = ng.iter().sum();
            dt * (alpha * sum_b + alpha_gamma * sum_g)
        }
    }
}

/// Per-slab weighted L2 norms of the two control components.
pub fn group_norms(mesh: &Mesh, u: &ControlPair) -> (Vec<f64>, Vec<f64>) {
    let mut bulk = Vec::with_capacity(u.n_slabs());
    let mut boundary = Vec::with_capacity(u.n_slabs());
    for s in 0..u.n_slabs() {
        bulk.push(dot_bulk(mesh, u.bulk[s].values(), u.bulk[s].values()).sqrt());
        boundary.push(dot_boundary(mesh, u.boundary[s].values(), u.boundary[s].values()).sqrt());
    }
    (bulk, boundary)
}

/// Picks the penalty subgradient `lambda` that certifies stationarity:
/// `sign(u)` (or `u/|u|_W` per slab) on the support, and the minimal-norm
/// selection driven by the adjoint where the control vanishes.
///
/// `p` holds the adjoint slab fields in control layout (see
/// `adjoint_gradient_part`). Sparse modes with a zero weight are rejected:
/// the selection `clamp(-p/alpha)` is undefined at `alpha = 0`.
pub fn select_subgradient(
    mesh: &Mesh,
    grid: &TimeGrid,
    mode: SparsityMode,
    u: &ControlPair,
    p: &ControlPair,
    alpha: f64,
    alpha_gamma: f64,
) -> Result<ControlPair, ModelError> {
    if !u.conforms(mesh, grid) || !p.conforms(mesh, grid) {
        return Err(ModelError::InvalidArgument(
            "subgradient inputs do not match the mesh/grid".into(),
        ));
    }
    let mut lambda = ControlPair::zeros(mesh, grid);
    match mode {
        SparsityMode::NoSparsity => {}
        SparsityMode::Full => {
            if alpha <= 0.0 || alpha_gamma <= 0.0 {
                return Err(ModelError::SubgradientConfig(format!(
                    "full sparsity needs positive weights, got alpha = {alpha}, alpha_gamma = {alpha_gamma}"
                )));
            }
            for s in 0..grid.n_t() {
                let lb = lambda.bulk[s].values_mut();
                let (uv, pv) = (u.bulk[s].values(), p.bulk[s].values());
                for k in 0..lb.len() {
                    lb[k] = if uv[k] != 0.0 {
                        uv[k].signum()
                    } else {
                        (-pv[k] / alpha).clamp(-1.0, 1.0)
                    };
                }
                let lg = lambda.boundary[s].values_mut();
                let (uv, pv) = (u.boundary[s].values(), p.boundary[s].values());
                for k in 0..lg.len() {
                    lg[k] = if uv[k] != 0.0 {
                        uv[k].signum()
                    } else {
                        (-pv[k] / alpha_gamma).clamp(-1.0, 1.0)
                    };
                }
            }
        }
        SparsityMode::TimeDirectional => {
            if alpha <= 0.0 || alpha_gamma <= 0.0 {
                return Err(ModelError::SubgradientConfig(format!(
                    "time-directional sparsity needs positive weights, got alpha = {alpha}, alpha_gamma = {alpha_gamma}"
                )));
            }
            let (nb, ng) = group_norms(mesh, u);
            for s in 0..grid.n_t() {
                {
                    let lb = lambda.bulk[s].values_mut();
                    let (uv, pv) = (u.bulk[s].values(), p.bulk[s].values());
                    if nb[s] > 0.0 {
                        for k in 0..lb.len() {
                            lb[k] = uv[k] / nb[s];
                        }
                    } else {
                        let pn = dot_bulk(mesh, pv, pv).sqrt();
                        let scale = alpha.max(pn);
                        for k in 0..lb.len() {
                            lb[k] = -pv[k] / scale;
                        }
                    }
                }
                let lg = lambda.boundary[s].values_mut();
                let (uv, pv) = (u.boundary[s].values(), p.boundary[s].values());
                if ng[s] > 0.0 {
                    for k in 0..lg.len() {
                        lg[k] = uv[k] / ng[s];
                    }
                } else {
                    let pn = dot_boundary(mesh, pv, pv).sqrt();
                    let scale = alpha_gamma.max(pn);
                    for k in 0..lg.len() {
                        lg[k] = -pv[k] / scale;
                    }
                }
            }
        }
    }
    Ok(lambda)
}

/// Norm of the projected stationarity defect
/// `u - clamp(-(p + alpha lambda)/nu, box)`, one control-space norm per
/// component, summed. Zero exactly at stationary points of the full
/// objective, for both penalties (with the matching `lambda` selection).
pub fn stationarity_residual(
    mesh: &Mesh,
    grid: &TimeGrid,
    u: &ControlPair,
    p: &ControlPair,
    lambda: &ControlPair,
    weights: &CostWeights,
    bounds: &BoxBounds,
) -> f64 {
    let dt = grid.dt();
    let mut sq_b = 0.0;
    let mut sq_g = 0.0;
    let mut diff_b = vec![0.0; mesh.n_nodes()];
    let mut diff_g = vec![0.0; 2 * mesh.n_x()];
    for s in 0..grid.n_t() {
        let (uv, pv, lv) = (
            u.bulk[s].values(),
            p.bulk[s].values(),
            lambda.bulk[s].values(),
        );
        for k in 0..uv.len() {
            let target = bounds.clamp_bulk(-(pv[k] + weights.alpha * lv[k]) / weights.nu);
            diff_b[k] = uv[k] - target;
        }
        sq_b += dt * dot_bulk(mesh, &diff_b, &diff_b);

        let (uv, pv, lv) = (
            u.boundary[s].values(),
            p.boundary[s].values(),
            lambda.boundary[s].values(),
        );
        for k in 0..uv.len() {
            let target =
                bounds.clamp_boundary(-(pv[k] + weights.alpha_gamma * lv[k]) / weights.nu_gamma);
            diff_g[k] = uv[k] - target;
        }
        sq_g += dt * dot_boundary(mesh, &diff_g, &diff_g);
    }
    sq_b.sqrt() + sq_g.sqrt()
}

/// Measured sparsity structure of a control/adjoint pair.
#[derive(Debug, Clone, Copy)]
pub struct SparsityReport {
    /// Space-time measure of the bulk support `{u != 0}`.
    pub support_measure_bulk: f64,
    /// Space-time measure of the boundary support.
    pub support_measure_boundary: f64,
    /// Measure where the support law fails outside the tolerance band.
    pub violation_measure_bulk: f64,
    /// Boundary analogue of the violation measure.
    pub violation_measure_boundary: f64,
    /// Measure of the whole bulk cylinder `T * |Omega|`.
    pub domain_measure_bulk: f64,
    /// Measure of the whole boundary cylinder `T * |Gamma|`.
    pub domain_measure_boundary: f64,
    /// Relative half-width of the band around the threshold.
    pub relative_band: f64,
}

/// Audits the support law of a stationary pair: the control may be nonzero
/// only where the adjoint has reached the threshold. Full mode checks
/// `u != 0  =>  |p| >= alpha (1 - band)` and
/// `u == 0  =>  |p| <= alpha (1 + band)` node by node; time-directional
/// mode checks the same implications slab by slab with weighted L2 norms.
/// Violating cells are accumulated in the space-time measure.
pub fn audit_sparsity_pattern(
    mesh: &Mesh,
    grid: &TimeGrid,
    mode: SparsityMode,
    u: &ControlPair,
    p: &ControlPair,
    alpha: f64,
    alpha_gamma: f64,
    relative_band: f64,
) -> Result<SparsityReport, ModelError> {
    if !mode.is_sparse() {
        return Err(ModelError::InvalidArgument(
            "sparsity audit needs an active sparsity mode".into(),
        ));
    }
    if alpha <= 0.0 || alpha_gamma <= 0.0 {
        return Err(ModelError::SubgradientConfig(format!(
            "sparsity audit needs positive weights, got alpha = {alpha}, alpha_gamma = {alpha_gamma}"
        )));
    }
    if !u.conforms(mesh, grid) || !p.conforms(mesh, grid) {
        return Err(ModelError::InvalidArgument(
            "audit inputs do not match the mesh/grid".into(),
        ));
    }
    if !(0.0..1.0).contains(&relative_band) {
        return Err(ModelError::InvalidArgument(format!(
            "relative band must lie in [0, 1), got {relative_band}"
        )));
    }

    let dt = grid.dt();
    let mut report = SparsityReport {
        support_measure_bulk: 0.0,
        support_measure_boundary: 0.0,
        violation_measure_bulk: 0.0,
        violation_measure_boundary: 0.0,
        domain_measure_bulk: grid.t_final() * mesh.area(),
        domain_measure_boundary: grid.t_final() * mesh.boundary_length(),
        relative_band,
    };

    match mode {
        SparsityMode::NoSparsity => unreachable!("rejected above"),
        SparsityMode::Full => {
            let (lo_b, hi_b) = (alpha * (1.0 - relative_band), alpha * (1.0 + relative_band));
            let (lo_g, hi_g) = (
                alpha_gamma * (1.0 - relative_band),
                alpha_gamma * (1.0 + relative_band),
            );
            for s in 0..grid.n_t() {
                let (uv, pv) = (u.bulk[s].values(), p.bulk[s].values());
                for j in 0..mesh.rows() {
                    let w = dt * mesh.bulk_weight(j);
                    for i in 0..mesh.n_x() {
                        let k = mesh.idx(i, j);
                        let on = uv[k] != 0.0;
                        if on {
                            report.support_measure_bulk += w;
                        }
                        let bad = (on && pv[k].abs() < lo_b) || (!on && pv[k].abs() > hi_b);
                        if bad {
                            report.violation_measure_bulk += w;
                        }
                    }
                }
                let (uv, pv) = (u.boundary[s].values(), p.boundary[s].values());
                let w = dt * mesh.ring_weight();
                for k in 0..uv.len() {
                    let on = uv[k] != 0.0;
                    if on {
                        report.support_measure_boundary += w;
                    }
                    let bad = (on && pv[k].abs() < lo_g) || (!on && pv[k].abs() > hi_g);
                    if bad {
                        report.violation_measure_boundary += w;
                    }
                }
            }
        }
        SparsityMode::TimeDirectional => {
            let (nu_b, nu_g) = group_norms(mesh, u);
            let (np_b, np_g) = group_norms(mesh, p);
            for s in 0..grid.n_t() {
                let on = nu_b[s] > 0.0;
                if on {
                    report.support_measure_bulk += dt * mesh.area();
                }
                if (on && np_b[s] < alpha * (1.0 - relative_band))
                    || (!on && np_b[s] > alpha * (1.0 + relative_band))
                {
                    report.violation_measure_bulk += dt * mesh.area();
                }
                let on = nu_g[s] > 0.0;
                if on {
                    report.support_measure_boundary += dt * mesh.boundary_length();
                }
                if (on && np_g[s] < alpha_gamma * (1.0 - relative_band))
                    || (!on && np_g[s] > alpha_gamma * (1.0 + relative_band))
                {
                    report.violation_measure_boundary += dt * mesh.boundary_length();
                }
            }
        }
    }
    Ok(report)
}

/// Estimated sparsity weights above which the zero control is stationary.
#[derive(Debug, Clone, Copy)]
pub struct ThresholdEstimate {
    /// Threshold certified at `u = 0`: the largest adjoint magnitude (full
    /// mode) or slab norm (time mode) of the uncontrolled trajectory, bulk
    /// component.
    pub at_zero_bulk: f64,
    /// Boundary component of the certified threshold.
    pub at_zero_boundary: f64,
    /// Largest bulk value seen over the random admissible probes (an
    /// audit of how much the adjoint can grow over the box).
    pub probe_bulk: f64,
    /// Boundary analogue of the probe maximum.
    pub probe_boundary: f64,
    /// Number of random probes drawn.
    pub n_probes: usize,
}

fn adjoint_extremes(
    mesh: &Mesh,
    grid: &TimeGrid,
    mode: SparsityMode,
    p: &ControlPair,
) -> (f64, f64) {
    match mode {
        SparsityMode::Full => {
            let mut mb = 0.0_f64;
            let mut mg = 0.0_f64;
            for s in 0..grid.n_t() {
                for &v in p.bulk[s].values() {
                    mb = mb.max(v.abs());
                }
                for &v in p.boundary[s].values() {
                    mg = mg.max(v.abs());
                }
            }
            (mb, mg)
        }
        _ => {
            let (nb, ng) = group_norms(mesh, p);
            (
                nb.iter().fold(0.0_f64, |m, v| m.max(*v)),
                ng.iter().fold(0.0_f64, |m, v| m.max(*v)),
            )
        }
    }
}

/// Estimates the weights `(alpha, alpha_gamma)` above which the optimizer
/// stays at `u = 0`.
///
/// At `u = 0` the zero control is stationary exactly when the adjoint of
/// the uncontrolled trajectory stays below the threshold: pointwise
/// `|p| <= alpha` in full mode, slabwise `|p_s|_W <= alpha` in
/// time-directional mode. The `at_zero` entries report those maxima. The
/// seeded probes re-solve the adjoint at random box-feasible controls and
/// report the worst case, auditing the margin over the whole admissible
/// set. Full mode requires both terminal tracking weights to vanish; the
/// pointwise threshold law does not survive terminal observation.
pub fn estimate_vanishing_threshold(
    mesh: &Mesh,
    grid: &TimeGrid,
    pots: &PotentialPair,
    y0: &crate::geometry::CoupledField,
    targets: &Targets,
    weights: &CostWeights,
    mode: SparsityMode,
    bounds: &BoxBounds,
    n_probes: usize,
    seed: u64,
    opts: &SolverOptions,
) -> Result<ThresholdEstimate, ModelError> {
    if !mode.is_sparse() {
        return Err(ModelError::InvalidArgument(
            "threshold estimation needs an active sparsity mode".into(),
        ));
    }
    if mode == SparsityMode::Full && (weights.beta3 != 0.0 || weights.beta4 != 0.0) {
        return Err(ModelError::FullModeRequiresA7);
    }

    let adjoint_of = |control: &ControlPair| -> Result<ControlPair, ModelError> {
        let traj = solve_state(mesh, grid, pots, y0, control, opts)?;
        let adj = solve_adjoint(mesh, grid, pots, &traj, targets, weights, opts)?;
        Ok(adjoint_gradient_part(mesh, grid, &adj))
    };

    let zero = ControlPair::zeros(mesh, grid);
    let p0 = adjoint_of(&zero)?;
    let (at_zero_bulk, at_zero_boundary) = adjoint_extremes(mesh, grid, mode, &p0);

    let mut probe_bulk = at_zero_bulk;
    let mut probe_boundary = at_zero_boundary;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist_b = Uniform::new_inclusive(bounds.rho_min, bounds.rho_max);
    let dist_g = Uniform::new_inclusive(bounds.rho_gamma_min, bounds.rho_gamma_max);
    for _ in 0..n_probes {
        let mut probe = ControlPair::zeros(mesh, grid);
        for s in 0..grid.n_t() {
            for v in probe.bulk[s].values_mut() {
                *v = rng.sample(dist_b);
            }
            for v in probe.boundary[s].values_mut() {
                *v = rng.sample(dist_g);
            }
        }
        let p = adjoint_of(&probe)?;
        let (mb, mg) = adjoint_extremes(mesh, grid, mode, &p);
        probe_bulk = probe_bulk.max(mb);
        probe_boundary = probe_boundary.max(mg);
    }

    Ok(ThresholdEstimate {
        at_zero_bulk,
        at_zero_boundary,
        probe_bulk,
        probe_boundary,
        n_probes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_mesh, CoupledField};
    use crate::pde::TimeGrid;
    use crate::potentials::PotentialSpec;
    use proptest::prelude::*;

    fn desk() -> (Mesh, TimeGrid) {
        (
            build_mesh(8, 4, 1.0, 1.0).unwrap(),
            TimeGrid::new(0.25, 8).unwrap(),
        )
    }

    #[test]
    fn pointwise_prox_table() {
        // Soft threshold, then clamp.
        assert_eq!(prox_l1_box(3.0, 1.0, -1.0, 1.0), 1.0);
        assert_eq!(prox_l1_box(3.0, 1.0, -5.0, 5.0), 2.0);
        assert_eq!(prox_l1_box(0.5, 1.0, -1.0, 1.0), 0.0);
        assert_eq!(prox_l1_box(-3.0, 1.0, -1.0, 1.0), -1.0);
        assert_eq!(prox_l1_box(-0.9, 1.0, -1.0, 1.0), 0.0);
        // Boxes that exclude zero still minimize correctly.
        assert_eq!(prox_l1_box(0.5, 1.0, 1.0, 2.0), 1.0);
        assert_eq!(prox_l1_box(0.0, 1.0, -2.0, -1.0), -1.0);
    }

    proptest! {
        #[test]
        fn pointwise_prox_minimizes_its_objective(
            w in -5.0_f64..5.0,
            tau in 0.0_f64..3.0,
            lo in -4.0_f64..-0.01,
            hi in 0.01_f64..4.0,
        ) {
            let p = prox_l1_box(w, tau, lo, hi);
            prop_assert!(p >= lo && p <= hi);
            let obj = |v: f64| tau * v.abs() + 0.5 * (v - w) * (v - w);
            // Sample the box densely; the prox must beat every candidate.
            for k in 0..=200 {
                let v = lo + (hi - lo) * (k as f64) / 200.0;
                prop_assert!(obj(p) <= obj(v) + 1e-12);
            }
            prop_assert!(obj(p) <= obj(0.0) + 1e-12);
        }
    }

    #[test]
    fn group_prox_matches_block_soft_threshold_without_active_box() {
        // Wide box: the closed form (1 - tau/|w|) w must come out exactly.
        let weights = [0.5, 1.0, 2.0, 0.25];
        let w = [1.0, -2.0, 0.5, 3.0];
        let norm = weighted_norm(&w, &weights);
        let tau = 0.4 * norm;
        let mut v = w;
        prox_group_time_box(&mut v, &weights, tau, -100.0, 100.0).unwrap();
        for k in 0..w.len() {
            let expected = (1.0 - tau / norm) * w[k];
            assert!((v[k] - expected).abs() <= 1e-9 * expected.abs().max(1.0));
        }

        // At or below the threshold the slab dies exactly.
        let mut v = w;
        prox_group_time_box(&mut v, &weights, norm, -100.0, 100.0).unwrap();
        assert!(v.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn group_prox_with_box_is_a_constrained_minimizer() {
        // Deterministic pseudo-random data; verify optimality against many
        // feasible perturbations of the returned point (the objective is
        // convex, so local optimality is global).
        let n = 12;
        let weights: Vec<f64> = (0..n).map(|k| 0.3 + 0.1 * (k as f64)).collect();
        let w: Vec<f64> = (0..n).map(|k| 2.0 * ((k as f64) * 1.7).sin()).collect();
        let (lo, hi) = (-0.8, 1.1);
        let tau = 0.6;
        let mut v = w.clone();
        prox_group_time_box(&mut v, &weights, tau, lo, hi).unwrap();
        assert!(v.iter().all(|x| *x >= lo && *x <= hi));

        let obj = |z: &[f64]| -> f64 {
            let mut quad = 0.0;
            for k in 0..n {
                quad += weights[k] * (z[k] - w[k]) * (z[k] - w[k]);
            }
            tau * weighted_norm(z, &weights) + 0.5 * quad
        };
        let base = obj(&v);
        let mut trial = vec![0.0; n];
        for probe in 0..400 {
            for k in 0..n {
                let t = (((probe * 31 + k * 17) % 101) as f64) / 100.0;
                let scale = if probe % 2 == 0 { 1e-3 } else { 1.0 };
                let delta = scale * (2.0 * t - 1.0);
                trial[k] = (v[k] + delta).clamp(lo, hi);
            }
            assert!(
                base <= obj(&trial) + 1e-10,
                "prox is not optimal against probe {probe}"
            );
        }
        assert!(base <= obj(&vec![0.0; n]) + 1e-10);
    }

    #[test]
    fn group_prox_validates_inputs() {
        let mut v = [1.0, 2.0];
        assert!(matches!(
            prox_group_time_box(&mut v, &[1.0], 0.1, -1.0, 1.0),
            Err(ModelError::InvalidArgument(_))
        ));
        assert!(matches!(
            prox_group_time_box(&mut v, &[1.0, 1.0], 0.1, 0.0, 1.0),
            Err(ModelError::InvalidBounds(_))
        ));
        assert!(matches!(
            prox_group_time_box(&mut v, &[1.0, -1.0], 0.1, -1.0, 1.0),
            Err(ModelError::InvalidArgument(_))
        ));
    }

    #[test]
    fn sparsity_values_match_hand_integrals() {
        let (mesh, grid) = desk();
        let u = ControlPair::constant(&mesh, &grid, 2.0, -1.0);
        // Full: alpha * T * |Omega| * 2 + alpha_g * T * |Gamma| * 1.
        let full = eval_sparsity(&mesh, &grid, SparsityMode::Full, &u, 0.05, 0.1);
        assert!((full - (0.05 * 0.25 * 2.0 + 0.1 * 0.25 * 2.0)).abs() < 1e-14);
        // Time-directional: alpha * T * 2 sqrt(|Omega|) + alpha_g * T * sqrt(|Gamma|).
        let time = eval_sparsity(&mesh, &grid, SparsityMode::TimeDirectional, &u, 0.05, 0.1);
        let expected = 0.05 * 0.25 * 2.0 + 0.1 * 0.25 * 2.0_f64.sqrt();
        assert!((time - expected).abs() < 1e-13);
        // No penalty.
        assert_eq!(
            eval_sparsity(&mesh, &grid, SparsityMode::NoSparsity, &u, 0.05, 0.1),
            0.0
        );
    }

    #[test]
    fn subgradient_selection_follows_the_minimal_section() {
        let (mesh, grid) = desk();
        let alpha = 0.2;
        let mut u = ControlPair::zeros(&mesh, &grid);
        let mut p = ControlPair::zeros(&mesh, &grid);
        u.bulk[0].values_mut()[3] = 0.7; // on the support: sign
        p.bulk[0].values_mut()[5] = 0.1; // off support, small: -p/alpha
        p.bulk[0].values_mut()[7] = 0.5; // off support, large: clamped

        let lambda =
            select_subgradient(&mesh, &grid, SparsityMode::Full, &u, &p, alpha, alpha).unwrap();
        let lv = lambda.bulk[0].values();
        assert_eq!(lv[3], 1.0);
        assert!((lv[5] - (-0.5)).abs() < 1e-15);
        assert_eq!(lv[7], -1.0);

        // Zero weight in a sparse mode is a configuration error.
        assert!(matches!(
            select_subgradient(&mesh, &grid, SparsityMode::Full, &u, &p, 0.0, alpha),
            Err(ModelError::SubgradientConfig(_))
        ));

        // Time mode: unit group norm on the support, scaled adjoint off it.
        let lambda = select_subgradient(
            &mesh,
            &grid,
            SparsityMode::TimeDirectional,
            &u,
            &p,
            alpha,
            alpha,
        )
        .unwrap();
        let n0 = dot_bulk(&mesh, lambda.bulk[0].values(), lambda.bulk[0].values()).sqrt();
        assert!((n0 - 1.0).abs() < 1e-12, "support slab norm {n0}");
        for s in 1..grid.n_t() {
            let ns = dot_bulk(&mesh, lambda.bulk[s].values(), lambda.bulk[s].values()).sqrt();
            assert!(ns <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn stationarity_residual_certifies_constructed_points() {
        let (mesh, grid) = desk();
        let weights = CostWeights {
            beta1: 1.0,
            beta2: 1.0,
            beta3: 0.0,
            beta4: 0.0,
            nu: 0.5,
            nu_gamma: 0.5,
            alpha: 0.2,
            alpha_gamma: 0.2,
        };
        let bounds = BoxBounds::symmetric(1.0, 1.0).unwrap();

        // Build (u, p) satisfying the full-mode fixed point exactly:
        // interior support u = -(p + alpha sign u)/nu, off-support |p| <= alpha.
        let mut u = ControlPair::zeros(&mesh, &grid);
        let mut p = ControlPair::zeros(&mesh, &grid);
        for s in 0..grid.n_t() {
            let uv = u.bulk[s].values_mut();
            let pv = p.bulk[s].values_mut();
            uv[2] = 0.6;
            pv[2] = -(weights.nu * 0.6 + weights.alpha); // supports u > 0
            uv[4] = 1.0; // at the upper bound with slack
            pv[4] = -(weights.nu * 1.0 + weights.alpha) - 0.3;
            pv[6] = 0.15; // off support, below threshold
        }
        let lambda =
            select_subgradient(&mesh, &grid, SparsityMode::Full, &u, &p, 0.2, 0.2).unwrap();
        let res = stationarity_residual(&mesh, &grid, &u, &p, &lambda, &weights, &bounds);
        assert!(res <= 1e-14, "constructed stationary point has residual {res}");

        // Breaking the threshold on an off-support node must show up.
        p.bulk[1].values_mut()[6] = 0.5;
        let lambda =
            select_subgradient(&mesh, &grid, SparsityMode::Full, &u, &p, 0.2, 0.2).unwrap();
        let res = stationarity_residual(&mesh, &grid, &u, &p, &lambda, &weights, &bounds);
        assert!(res > 1e-4, "violated point reported residual {res}");
    }

    #[test]
    fn pattern_audit_counts_violating_cells() {
        let (mesh, grid) = desk();
        let alpha = 0.2;
        let mut u = ControlPair::zeros(&mesh, &grid);
        let mut p = ControlPair::zeros(&mesh, &grid);
        // Consistent support: u nonzero where |p| = alpha.
        u.bulk[0].values_mut()[10] = 0.5;
        p.bulk[0].values_mut()[10] = -alpha;
        let report = audit_sparsity_pattern(
            &mesh,
            &grid,
            SparsityMode::Full,
            &u,
            &p,
            alpha,
            alpha,
            1e-3,
        )
        .unwrap();
        assert_eq!(report.violation_measure_bulk, 0.0);
        assert_eq!(report.violation_measure_boundary, 0.0);
        let cell = grid.dt() * mesh.bulk_weight(1);
        assert!((report.support_measure_bulk - cell).abs() < 1e-15);

        // A nonzero control with zero adjoint violates the support law.
        u.bulk[1].values_mut()[12] = 0.3;
        let report = audit_sparsity_pattern(
            &mesh,
            &grid,
            SparsityMode::Full,
            &u,
            &p,
            alpha,
            alpha,
            1e-3,
        )
        .unwrap();
        assert!((report.violation_measure_bulk - cell).abs() < 1e-15);
        assert!(report.domain_measure_bulk > 0.0);
    }

    #[test]
    fn vanishing_threshold_certifies_the_zero_control() {
        let (mesh, grid) = desk();
        let pots = PotentialPair::matched(PotentialSpec::logarithmic(1.0, 2.0).unwrap());
        let opts = SolverOptions::default();
        let y0 = CoupledField::from_fn(&mesh, |x, _| 0.2 * (6.28318 * x).cos());
        let targets = Targets::constant(&mesh, &grid, 0.3, 0.3).unwrap();
        let weights = CostWeights {
            beta1: 1.0,
            beta2: 0.5,
            beta3: 0.0,
            beta4: 0.0,
            nu: 0.1,
            nu_gamma: 0.1,
            alpha: 0.0,
            alpha_gamma: 0.0,
        };
        let bounds = BoxBounds::symmetric(1.0, 1.0).unwrap();

        let est = estimate_vanishing_threshold(
            &mesh,
            &grid,
            &pots,
            &y0,
            &targets,
            &weights,
            SparsityMode::Full,
            &bounds,
            3,
            7,
            &opts,
        )
        .unwrap();
        assert!(est.at_zero_bulk > 0.0 && est.at_zero_boundary > 0.0);
        assert!(est.probe_bulk >= est.at_zero_bulk);
        assert!(est.probe_boundary >= est.at_zero_boundary);

        // Above the certified threshold, u = 0 is exactly stationary.
        let alpha = 1.1 * est.at_zero_bulk;
        let alpha_g = 1.1 * est.at_zero_boundary;
        let zero = ControlPair::zeros(&mesh, &grid);
        let traj = solve_state(&mesh, &grid, &pots, &y0, &zero, &opts).unwrap();
        let adj = solve_adjoint(&mesh, &grid, &pots, &traj, &targets, &weights, &opts).unwrap();
        let p = adjoint_gradient_part(&mesh, &grid, &adj);
        let lambda =
            select_subgradient(&mesh, &grid, SparsityMode::Full, &zero, &p, alpha, alpha_g)
                .unwrap();
        let mut w = weights;
        w.alpha = alpha;
        w.alpha_gamma = alpha_g;
        let res = stationarity_residual(&mesh, &grid, &zero, &p, &lambda, &w, &bounds);
        // The subgradient entry is -p/alpha, so `p + alpha * lambda` leaves
        // a remainder of a couple of ulps after the product rounds; the
        // residual is stationary to roundoff, not bit-exactly zero.
        assert!(res <= 1e-14, "zero control must be stationary to roundoff, residual {res}");

        // Below the threshold it is not.
        let alpha = 0.5 * est.at_zero_bulk;
        let alpha_g = 0.5 * est.at_zero_boundary;
        let lambda =
            select_subgradient(&mesh, &grid, SparsityMode::Full, &zero, &p, alpha, alpha_g)
                .unwrap();
        w.alpha = alpha;
        w.alpha_gamma = alpha_g;
        let res = stationarity_residual(&mesh, &grid, &zero, &p, &lambda, &w, &bounds);
        assert!(res > 0.0);
    }

    #[test]
    fn full_mode_threshold_requires_zero_terminal_weights() {
        let (mesh, grid) = desk();
        let pots = PotentialPair::matched(PotentialSpec::quartic());
        let y0 = CoupledField::zeros(&mesh);
        let targets = Targets::zeros(&mesh, &grid);
        let weights = CostWeights {
            beta1: 1.0,
            beta2: 1.0,
            beta3: 0.5,
            beta4: 0.5,
            nu: 0.1,
            nu_gamma: 0.1,
            alpha: 0.0,
            alpha_gamma: 0.0,
        };
        let bounds = BoxBounds::symmetric(1.0, 1.0).unwrap();
        let err = estimate_vanishing_threshold(
            &mesh,
            &grid,
            &pots,
            &y0,
            &targets,
            &weights,
            SparsityMode::Full,
            &bounds,
            0,
            1,
            &SolverOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, ModelError::FullModeRequiresA7));

        // Time-directional mode carries no such restriction.
        let est = estimate_vanishing_threshold(
            &mesh,
            &grid,
            &pots,
            &y0,
            &targets,
            &weights,
            SparsityMode::TimeDirectional,
            &bounds,
            0,
            1,
            &SolverOptions::default(),
        );
        assert!(est.is_ok());
    }
}
