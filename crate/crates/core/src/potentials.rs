//! Double-well potentials driving the phase dynamics.
//!
//! The reaction term in both the bulk and the surface equation is the
//! derivative of a double-well potential `f = f1 + f2`, split into a convex
//! part `f1` and a smooth concave perturbation `f2`. Three kinds are
//! supported:
//!
//! * `Logarithmic`: `f(r) = c1 ((1+r) ln(1+r) + (1-r) ln(1-r)) - c2 r^2` on
//!   `[-1, 1]`, the singular entropy well. Here `f1` is the entropy term and
//!   `f2(r) = -c2 r^2`; the well is nonconvex iff `c2 > c1`, and `f1'` blows
//!   up at the walls `r = +-1`, which is what keeps trajectories strictly
//!   separated from `+-1`.
//! * `RegularAsPrinted`: `f(r) = (1/4) (r - 1)^2`, a convex single well with
//!   `f1 = 0`; kept exactly as stated, quadratic rather than quartic.
//! * `Quartic`: `f(r) = (1/4) (r^2 - 1)^2`, the classical smooth double well
//!   with `f1 = 0` and minima at `+-1`.
//!
//! Derivatives up to fourth order are available through
//! [`PotentialSpec::eval_derivative`]; the solvers use orders 1-3 and the
//! curvature audits use order 4.

use crate::error::ModelError;

/// Which double-well potential a [`PotentialSpec`] describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PotentialKind {
    Logarithmic,
    RegularAsPrinted,
    Quartic,
}

/// A double-well potential together with its guard parameters.
///
/// `safe_margin` is the evaluation guard radius for the singular kind:
/// derivative orders >= 1 of the logarithmic well must stay at distance
/// `safe_margin` from the walls. `newton_margin` is the (larger) separation
/// margin the implicit time-stepping enforces on its iterates.
#[derive(Debug, Clone, Copy)]
pub struct PotentialSpec {
    kind: PotentialKind,
    c1: f64,
    c2: f64,
    safe_margin: f64,
    newton_margin: f64,
}

impl PotentialSpec {
    /// Logarithmic well with entropy weight `c1 > 0` and quadratic pull
    /// `c2 > 0`.
    pub fn logarithmic(c1: f64, c2: f64) -> Result<Self, ModelError> {
        if !(c1.is_finite() && c1 > 0.0) {
            return Err(ModelError::InvalidArgument(format!(
                "logarithmic potential needs c1 > 0, got {c1}"
            )));
        }
        if !(c2.is_finite() && c2 > 0.0) {
            return Err(ModelError::InvalidArgument(format!(
                "logarithmic potential needs c2 > 0, got {c2}"
            )));
        }
        Ok(PotentialSpec {
            kind: PotentialKind::Logarithmic,
            c1,
            c2,
            safe_margin: 1e-9,
            newton_margin: 1e-6,
        })
    }

    /// Convex single well `(1/4)(r - 1)^2`.
    pub fn regular_as_printed() -> Self {
        PotentialSpec {
            kind: PotentialKind::RegularAsPrinted,
            c1: 0.0,
            c2: 0.0,
            safe_margin: 1e-9,
            newton_margin: 1e-6,
        }
    }

    /// Smooth double well `(1/4)(r^2 - 1)^2`.
    pub fn quartic() -> Self {
        PotentialSpec {
            kind: PotentialKind::Quartic,
            c1: 0.0,
            c2: 0.0,
            safe_margin: 1e-9,
            newton_margin: 1e-6,
        }
    }

    /// Replaces the evaluation guard radius (must lie in `(0, 0.5)`).
    pub fn with_safe_margin(mut self, safe_margin: f64) -> Result<Self, ModelError> {
        if !(safe_margin.is_finite() && safe_margin > 0.0 && safe_margin < 0.5) {
            return Err(ModelError::InvalidArgument(format!(
                "safe_margin must lie in (0, 0.5), got {safe_margin}"
            )));
        }
        self.safe_margin = safe_margin;
        Ok(self)
    }

    /// Replaces the Newton separation margin (must lie in `(0, 0.5)`).
    pub fn with_newton_margin(mut self, newton_margin: f64) -> Result<Self, ModelError> {
        if !(newton_margin.is_finite() && newton_margin > 0.0 && newton_margin < 0.5) {
            return Err(ModelError::InvalidArgument(format!(
                "newton_margin must lie in (0, 0.5), got {newton_margin}"
            )));
        }
        self.newton_margin = newton_margin;
        Ok(self)
    }

    pub fn kind(&self) -> PotentialKind {
        self.kind
    }

    /// Entropy weight `c1` (logarithmic kind only; zero otherwise).
    pub fn c1(&self) -> f64 {
        self.c1
    }

    /// Quadratic pull `c2` (logarithmic kind only; zero otherwise).
    pub fn c2(&self) -> f64 {
        self.c2
    }

    pub fn safe_margin(&self) -> f64 {
        self.safe_margin
    }

    pub fn newton_margin(&self) -> f64 {
        self.newton_margin
    }

    /// Whether the iterate guard applies: only the logarithmic kind confines
    /// values to `(-1, 1)`.
    pub fn is_singular(&self) -> bool {
        self.kind == PotentialKind::Logarithmic
    }

    /// Whether the well is nonconvex: `f'' < 0` somewhere.
    pub fn is_nonconvex(&self) -> bool {
        match self.kind {
            // f''(0) = 2 c1 - 2 c2.
            PotentialKind::Logarithmic => self.c2 > self.c1,
            PotentialKind::RegularAsPrinted => false,
            // f''(0) = -1.
            PotentialKind::Quartic => true,
        }
    }

    /// `d^order f / dr^order` at `r`, orders 0 through 4.
    ///
    /// For the logarithmic kind, order 0 is defined on the closed interval
    /// `[-1, 1]` (with the finite limit `2 c1 ln 2 - c2` at the walls), while
    /// orders >= 1 require `|r| <= 1 - safe_margin`; violations yield
    /// [`ModelError::DomainError`]. The smooth kinds are entire.
    pub fn eval_derivative(&self, order: u32, r: f64) -> Result<f64, ModelError> {
        if order > 4 {
            return Err(ModelError::InvalidOrder(order));
        }
        if !r.is_finite() {
            return Err(ModelError::DomainError { order, r });
        }
        match self.kind {
            PotentialKind::Logarithmic => {
                if order == 0 {
                    if r.abs() > 1.0 {
                        return Err(ModelError::DomainError { order, r });
                    }
                } else if r.abs() > 1.0 - self.safe_margin {
                    return Err(ModelError::DomainError { order, r });
                }
                Ok(self.log_derivative(order, r))
            }
            PotentialKind::RegularAsPrinted => Ok(match order {
                0 => 0.25 * (r - 1.0) * (r - 1.0),
                1 => 0.5 * (r - 1.0),
                2 => 0.5,
                _ => 0.0,
            }),
            PotentialKind::Quartic => Ok(match order {
                0 => 0.25 * (r * r - 1.0) * (r * r - 1.0),
                1 => r * r * r - r,
                2 => 3.0 * r * r - 1.0,
                3 => 6.0 * r,
                _ => 6.0,
            }),
        }
    }

    fn log_derivative(&self, order: u32, r: f64) -> f64 {
        let (c1, c2) = (self.c1, self.c2);
        let one_minus = 1.0 - r * r;
        match order {
            0 => {
                // (1 +- r) ln(1 +- r) extends continuously by 0 at the walls.
                let plus = if 1.0 + r > 0.0 {
                    (1.0 + r) * (1.0 + r).ln()
                } else {
                    0.0
                };
                let minus = if 1.0 - r > 0.0 {
                    (1.0 - r) * (1.0 - r).ln()
                } else {
                    0.0
                };
                c1 * (plus + minus) - c2 * r * r
            }
            1 => c1 * ((1.0 + r) / (1.0 - r)).ln() - 2.0 * c2 * r,
            2 => 2.0 * c1 / one_minus - 2.0 * c2,
            3 => 4.0 * c1 * r / (one_minus * one_minus),
            _ => 4.0 * c1 * (1.0 + 3.0 * r * r) / (one_minus * one_minus * one_minus),
        }
    }

    /// Derivative of the convex part `f1` alone. Zero for the smooth kinds
    /// (their `f1` vanishes); the entropy derivative
    /// `c1 ln((1+r)/(1-r))` for the logarithmic kind.
    pub fn convex_part_derivative(&self, r: f64) -> Result<f64, ModelError> {
        match self.kind {
            PotentialKind::Logarithmic => {
                if !r.is_finite() || r.abs() > 1.0 - self.safe_margin {
                    return Err(ModelError::DomainError { order: 1, r });
                }
                Ok(self.c1 * ((1.0 + r) / (1.0 - r)).ln())
            }
            _ => Ok(0.0),
        }
    }

    // Unchecked fast paths for the time-stepping inner loops. The solvers
    // guard their iterates before calling these.

    #[inline]
    pub(crate) fn d1(&self, r: f64) -> f64 {
        match self.kind {
            PotentialKind::Logarithmic => self.log_derivative(1, r),
            PotentialKind::RegularAsPrinted => 0.5 * (r - 1.0),
            PotentialKind::Quartic => r * r * r - r,
        }
    }

    #[inline]
    pub(crate) fn d2(&self, r: f64) -> f64 {
        match self.kind {
            PotentialKind::Logarithmic => self.log_derivative(2, r),
            PotentialKind::RegularAsPrinted => 0.5,
            PotentialKind::Quartic => 3.0 * r * r - 1.0,
        }
    }

    #[inline]
    pub(crate) fn d3(&self, r: f64) -> f64 {
        match self.kind {
            PotentialKind::Logarithmic => self.log_derivative(3, r),
            PotentialKind::RegularAsPrinted => 0.0,
            PotentialKind::Quartic => 6.0 * r,
        }
    }
}

/// Bulk and surface potentials as a pair; the two equations may use different
/// wells (subject to the domination audit below).
#[derive(Debug, Clone, Copy)]
pub struct PotentialPair {
    pub bulk: PotentialSpec,
    pub surface: PotentialSpec,
}

impl PotentialPair {
    /// The same well in the bulk and on the boundary.
    pub fn matched(spec: PotentialSpec) -> Self {
        PotentialPair {
            bulk: spec,
            surface: spec,
        }
    }
}

/// Result of [`audit_domination`]: least-squares constants for the growth
/// bound `|f1'(r)| <= M1 + M2 |f_{Gamma,1}'(r)|` and whether the bound holds
/// on every sample with those constants.
#[derive(Debug, Clone)]
pub struct DominationAudit {
    pub m1: f64,
    pub m2: f64,
    pub feasible: bool,
    /// Largest violation `|f1'| - (M1 + M2 |f_{Gamma,1}'|)` over the sample
    /// (negative when feasible with slack).
    pub worst_slack: f64,
}

/// Evaluates the wall blow-up of the convex-part derivative of a logarithmic
/// well: returns `f1'(1 - delta)` for each `delta` in the sequence.
///
/// The sequence must be strictly decreasing with every entry in `(0, 0.5)`;
/// the returned values are strictly increasing and diverge as `delta -> 0`,
/// which is the mechanism behind the strict separation of trajectories from
/// the walls.
pub fn singular_blowup_probe(
    spec: &PotentialSpec,
    deltas: &[f64],
) -> Result<Vec<f64>, ModelError> {
    if spec.kind() != PotentialKind::Logarithmic {
        return Err(ModelError::KindMismatch(
            "singular_blowup_probe applies to the logarithmic kind only".into(),
        ));
    }
    if deltas.is_empty() {
        return Err(ModelError::InvalidArgument(
            "singular_blowup_probe needs a nonempty delta sequence".into(),
        ));
    }
    for w in deltas.windows(2) {
        if !(w[1] < w[0]) {
            return Err(ModelError::InvalidArgument(
                "delta sequence must be strictly decreasing".into(),
            ));
        }
    }
    let mut out = Vec::with_capacity(deltas.len());
    for &d in deltas {
        if !(d.is_finite() && d > 0.0 && d < 0.5) {
            return Err(ModelError::InvalidArgument(format!(
                "each delta must lie in (0, 0.5), got {d}"
            )));
        }
        // f1'(1 - d) = c1 ln((2 - d) / d); bypasses safe_margin deliberately,
        // the probe exists to look at the wall.
        out.push(spec.c1() * ((2.0 - d) / d).ln());
    }
    Ok(out)
}

/// Fits nonnegative constants `(M1, M2)` for the domination bound
/// `|f1'(r)| <= M1 + M2 |f_{Gamma,1}'(r)|` by least squares over the sample
/// and reports whether the fitted bound actually holds on every sample point.
///
/// Both potentials must be logarithmic (the smooth kinds have `f1 = 0` and
/// dominate trivially). For two entropy wells the ratio `f1'/f_{Gamma,1}'` is
/// exactly `c1_bulk / c1_surface`, so the fit returns `(0, ratio)` up to
/// roundoff and is feasible; as `c1_surface -> 0` the required `M2` blows up,
/// demonstrating that no fixed pair of constants works uniformly.
pub fn audit_domination(
    pair: &PotentialPair,
    sample: &[f64],
) -> Result<DominationAudit, ModelError> {
    if pair.bulk.kind() != PotentialKind::Logarithmic
        || pair.surface.kind() != PotentialKind::Logarithmic
    {
        return Err(ModelError::KindMismatch(
            "audit_domination compares the singular convex parts; both potentials must be logarithmic"
                .into(),
        ));
    }
    if sample.len() < 2 {
        return Err(ModelError::InvalidArgument(
            "audit_domination needs at least two sample points".into(),
        ));
    }
    let mut xs = Vec::with_capacity(sample.len());
    let mut ys = Vec::with_capacity(sample.len());
    for &r in sample {
        ys.push(pair.bulk.convex_part_derivative(r)?.abs());
        xs.push(pair.surface.convex_part_derivative(r)?.abs());
    }

    let (m1, m2) = nonnegative_affine_fit(&xs, &ys);

    let mut worst_slack = f64::NEG_INFINITY;
    for (x, y) in xs.iter().zip(ys.iter()) {
        worst_slack = worst_slack.max(y - (m1 + m2 * x));
    }
    let scale = ys.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    let feasible = worst_slack <= 1e-9 * scale;
    Ok(DominationAudit {
        m1,
        m2,
        feasible,
        worst_slack,
    })
}

/// Least-squares fit of `y ~ m1 + m2 x` constrained to `m1, m2 >= 0`.
///
/// Solves the unconstrained normal equations first; if a coefficient comes
/// out negative, refits with that coefficient pinned to zero and keeps the
/// admissible candidate with the smaller residual.
fn nonnegative_affine_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(ys.iter()).map(|(x, y)| x * y).sum();

    let sse = |m1: f64, m2: f64| -> f64 {
        xs.iter()
            .zip(ys.iter())
            .map(|(x, y)| {
                let r = y - m1 - m2 * x;
                r * r
            })
            .sum()
    };

    let det = n * sxx - sx * sx;
    let mut candidates: Vec<(f64, f64)> = Vec::new();
    if det.abs() > 1e-300 {
        let m2 = (n * sxy - sx * sy) / det;
        let m1 = (sy - m2 * sx) / n;
        if m1 >= 0.0 && m2 >= 0.0 {
            return (m1, m2);
        }
    }
    // Pin m1 = 0: slope through the origin.
    if sxx > 0.0 {
        candidates.push((0.0, (sxy / sxx).max(0.0)));
    }
    // Pin m2 = 0: constant fit.
    candidates.push(((sy / n).max(0.0), 0.0));

    candidates
        .into_iter()
        .min_by(|a, b| {
            sse(a.0, a.1)
                .partial_cmp(&sse(b.0, b.1))
                .unwrap_or(std::cmp::Ordering::Equal)
        })
        .unwrap_or((0.0, 0.0))
}
