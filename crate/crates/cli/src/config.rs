//! Line-oriented configuration files.
//!
//! A config is plain text, one `section.key = value` per line; `#` starts a
//! comment and blank lines are ignored. Every key is optional except where a
//! subcommand states otherwise; defaults give the benchmark desk problem.
//! Unknown keys, duplicate keys, and malformed lines are rejected with their
//! line number.
//!
//! Parsing ends with a full semantic validation of the modelling
//! assumptions (A1)-(A7) documented in the README; violations are reported
//! by assumption name, e.g. `A6: beta3 != beta4`.

use std::collections::BTreeMap;

use ac_control::{
    build_mesh, BoundaryField, BoxBounds, BulkField, ControlPair, CostWeights, CoupledField,
    LinearKernel, Mesh, OptimizeOptions, PotentialPair, PotentialSpec, Problem, SolverOptions,
    SparsityMode, Targets, TimeGrid,
};

use crate::error::CliError;

/// How the initial datum is synthesized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialKind {
    /// `y0 = value` everywhere.
    Constant,
    /// `y0(x, y) = offset + amplitude * cos(2 pi wavenumber x / L)`.
    Cosine,
}

/// Initial-datum settings (`initial.*`).
#[derive(Debug, Clone, Copy)]
pub struct InitialConfig {
    pub kind: InitialKind,
    pub value: f64,
    pub amplitude: f64,
    pub wavenumber: u32,
    pub offset: f64,
}

/// Constant target levels (`targets.*`).
#[derive(Debug, Clone, Copy)]
pub struct TargetConfig {
    pub y_q: f64,
    pub y_sigma: f64,
    pub y_omega: f64,
    pub y_gamma: f64,
}

/// Verification-subcommand knobs (`check.*`).
#[derive(Debug, Clone, Copy)]
pub struct CheckConfig {
    /// Random directions for the finite-difference tables.
    pub directions: usize,
    /// Random draws for coercivity sampling and the growth probe.
    pub samples: usize,
    /// Probe the enlarged critical cone instead of the standard one.
    pub larger_cone: bool,
}

/// Sweep definition (`sweep.*`), required by `sweep-alpha`.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub alpha: Vec<f64>,
    pub alpha_gamma: Vec<f64>,
}

/// A fully parsed and validated run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    /// Verbatim config text, echoed into the output bundle.
    pub raw: String,
    pub n_x: usize,
    pub n_y: usize,
    pub length: f64,
    pub height: f64,
    pub t_final: f64,
    pub n_t: usize,
    pub potentials: PotentialPair,
    pub initial: InitialConfig,
    pub targets: TargetConfig,
    pub weights: CostWeights,
    pub mode: SparsityMode,
    /// Relative tolerance band of the sparsity-pattern audit.
    pub band: f64,
    /// Random probes for the vanishing-threshold estimate.
    pub probes: usize,
    pub bounds: BoxBounds,
    /// Constant initial control (bulk, boundary): the control of
    /// `solve-state` and the starting point of `optimize`.
    pub control: (f64, f64),
    pub solver: SolverOptions,
    pub max_iters: usize,
    pub opt_tol: f64,
    pub check: CheckConfig,
    pub sweep: Option<SweepConfig>,
}

struct Reader {
    entries: BTreeMap<String, (String, usize, bool)>,
}

impl Reader {
    fn parse(text: &str) -> Result<Self, CliError> {
        let mut entries: BTreeMap<String, (String, usize, bool)> = BTreeMap::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw_line.find('#') {
                Some(pos) => &raw_line[..pos],
                None => raw_line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(CliError::Config {
                line: Some(line_no),
                message: format!("expected `section.key = value`, got `{line}`"),
            })?;
            let key = key.trim();
            let value = value.trim();
            if key.is_empty() || !key.contains('.') {
                return Err(CliError::Config {
                    line: Some(line_no),
                    message: format!("key `{key}` must look like `section.key`"),
                });
            }
            if value.is_empty() {
                return Err(CliError::Config {
                    line: Some(line_no),
                    message: format!("key `{key}` has an empty value"),
                });
            }
            if let Some((_, first_line, _)) = entries.get(key) {
                return Err(CliError::Config {
                    line: Some(line_no),
                    message: format!("duplicate key `{key}` (first set on line {first_line})"),
                });
            }
            entries.insert(key.to_string(), (value.to_string(), line_no, false));
        }
        Ok(Reader { entries })
    }

    fn take(&mut self, key: &str) -> Option<(String, usize)> {
        self.entries.get_mut(key).map(|(v, l, used)| {
            *used = true;
            (v.clone(), *l)
        })
    }

    fn f64(&mut self, key: &str, default: f64) -> Result<f64, CliError> {
        match self.take(key) {
            None => Ok(default),
            Some((v, line)) => v.parse::<f64>().map_err(|_| CliError::Config {
                line: Some(line),
                message: format!("key `{key}`: `{v}` is not a number"),
            }),
        }
    }

    fn usize(&mut self, key: &str, default: usize) -> Result<usize, CliError> {
        match self.take(key) {
            None => Ok(default),
            Some((v, line)) => v.parse::<usize>().map_err(|_| CliError::Config {
                line: Some(line),
                message: format!("key `{key}`: `{v}` is not a nonnegative integer"),
            }),
        }
    }

    fn u32(&mut self, key: &str, default: u32) -> Result<u32, CliError> {
        match self.take(key) {
            None => Ok(default),
            Some((v, line)) => v.parse::<u32>().map_err(|_| CliError::Config {
                line: Some(line),
                message: format!("key `{key}`: `{v}` is not a nonnegative integer"),
            }),
        }
    }

    fn bool(&mut self, key: &str, default: bool) -> Result<bool, CliError> {
        match self.take(key) {
            None => Ok(default),
            Some((v, line)) => match v.as_str() {
                "true" => Ok(true),
                "false" => Ok(false),
                _ => Err(CliError::Config {
                    line: Some(line),
                    message: format!("key `{key}`: expected true or false, got `{v}`"),
                }),
            },
        }
    }

    fn choice(&mut self, key: &str, options: &[&str], default: &str) -> Result<String, CliError> {
        match self.take(key) {
            None => Ok(default.to_string()),
            Some((v, line)) => {
                if options.contains(&v.as_str()) {
                    Ok(v)
                } else {
                    Err(CliError::Config {
                        line: Some(line),
                        message: format!(
                            "key `{key}`: expected one of {}, got `{v}`",
                            options.join(" | ")
                        ),
                    })
                }
            }
        }
    }

    fn float_list(&mut self, key: &str) -> Result<Option<Vec<f64>>, CliError> {
        match self.take(key) {
            None => Ok(None),
            Some((v, line)) => {
                let mut out = Vec::new();
                for item in v.split(',') {
                    let item = item.trim();
                    out.push(item.parse::<f64>().map_err(|_| CliError::Config {
                        line: Some(line),
                        message: format!("key `{key}`: `{item}` is not a number"),
                    })?);
                }
                Ok(Some(out))
            }
        }
    }

    fn finish(self) -> Result<(), CliError> {
        let mut unknown: Vec<(usize, String)> = self
            .entries
            .into_iter()
            .filter(|(_, (_, _, used))| !used)
            .map(|(k, (_, line, _))| (line, k))
            .collect();
        unknown.sort();
        if let Some((line, key)) = unknown.into_iter().next() {
            return Err(CliError::Config {
                line: Some(line),
                message: format!("unknown key `{key}`"),
            });
        }
        Ok(())
    }
}

fn potential_spec(
    reader: &mut Reader,
    kind_key: &str,
    c1_key: &str,
    c2_key: &str,
) -> Result<PotentialSpec, CliError> {
    let kind = reader.choice(kind_key, &["logarithmic", "regular", "quartic"], "logarithmic")?;
    let c1 = reader.f64(c1_key, 1.0)?;
    let c2 = reader.f64(c2_key, 2.0)?;
    match kind.as_str() {
        "logarithmic" => PotentialSpec::logarithmic(c1, c2).map_err(|e| CliError::Config {
            line: None,
            message: format!("A1: {e}"),
        }),
        "regular" => Ok(PotentialSpec::regular_as_printed()),
        _ => Ok(PotentialSpec::quartic()),
    }
}

/// Parses and validates a configuration.
pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    let mut r = Reader::parse(text)?;

    let n_x = r.usize("mesh.n_x", 16)?;
    let n_y = r.usize("mesh.n_y", 8)?;
    let length = r.f64("mesh.length", 1.0)?;
    let height = r.f64("mesh.height", 1.0)?;

    let t_final = r.f64("time.t_final", 0.5)?;
    let n_t = r.usize("time.n_t", 32)?;

    let bulk = potential_spec(&mut r, "potential.bulk_kind", "potential.bulk_c1", "potential.bulk_c2")?;
    let surface = potential_spec(
        &mut r,
        "potential.surface_kind",
        "potential.surface_c1",
        "potential.surface_c2",
    )?;
    let potentials = PotentialPair { bulk, surface };

    let initial = InitialConfig {
        kind: match r.choice("initial.kind", &["constant", "cosine"], "cosine")?.as_str() {
            "constant" => InitialKind::Constant,
            _ => InitialKind::Cosine,
        },
        value: r.f64("initial.value", 0.0)?,
        amplitude: r.f64("initial.amplitude", 0.2)?,
        wavenumber: r.u32("initial.wavenumber", 1)?,
        offset: r.f64("initial.offset", 0.0)?,
    };

    let targets = TargetConfig {
        y_q: r.f64("targets.y_q", 0.3)?,
        y_sigma: r.f64("targets.y_sigma", 0.3)?,
        y_omega: r.f64("targets.y_omega", 0.0)?,
        y_gamma: r.f64("targets.y_gamma", 0.0)?,
    };

    let mode = match r.choice("sparsity.mode", &["none", "full", "time"], "none")?.as_str() {
        "full" => SparsityMode::Full,
        "time" => SparsityMode::TimeDirectional,
        _ => SparsityMode::NoSparsity,
    };
    let weights = CostWeights {
        beta1: r.f64("cost.beta1", 1.0)?,
        beta2: r.f64("cost.beta2", 0.5)?,
        beta3: r.f64("cost.beta3", 0.0)?,
        beta4: r.f64("cost.beta4", 0.0)?,
        nu: r.f64("cost.nu", 0.1)?,
        nu_gamma: r.f64("cost.nu_gamma", 0.1)?,
        alpha: r.f64("sparsity.alpha", 0.0)?,
        alpha_gamma: r.f64("sparsity.alpha_gamma", 0.0)?,
    };
    let band = r.f64("sparsity.band", 1e-3)?;
    let probes = r.usize("sparsity.probes", 8)?;

    let lower = r.f64("bounds.lower", -1.0)?;
    let upper = r.f64("bounds.upper", 1.0)?;
    let lower_gamma = r.f64("bounds.lower_gamma", -1.0)?;
    let upper_gamma = r.f64("bounds.upper_gamma", 1.0)?;

    let control = (r.f64("control.bulk", 0.0)?, r.f64("control.boundary", 0.0)?);

    let mut solver = SolverOptions::default();
    solver.newton_tol = r.f64("solver.newton_tol", solver.newton_tol)?;
    solver.newton_max_iters = r.usize("solver.newton_max_iters", solver.newton_max_iters)?;
    solver.max_halvings = r.u32("solver.max_halvings", solver.max_halvings)?;
    solver.lin_tol = r.f64("solver.lin_tol", solver.lin_tol)?;
    solver.kernel = match r.choice("solver.kernel", &["auto", "banded", "iterative"], "auto")?.as_str()
    {
        "banded" => LinearKernel::Banded,
        "iterative" => LinearKernel::Iterative,
        _ => LinearKernel::Auto,
    };

    let max_iters = r.usize("optimizer.max_iters", 400)?;
    let opt_tol = r.f64("optimizer.tol", 1e-6)?;

    let check = CheckConfig {
        directions: r.usize("check.directions", 10)?,
        samples: r.usize("check.samples", 8)?,
        larger_cone: r.bool("check.larger_cone", false)?,
    };

    let sweep = match r.float_list("sweep.alpha")? {
        None => {
            if r.float_list("sweep.alpha_gamma")?.is_some() {
                return Err(CliError::config(
                    "sweep.alpha_gamma given without sweep.alpha",
                ));
            }
            None
        }
        Some(alpha) => {
            let alpha_gamma = r.float_list("sweep.alpha_gamma")?.unwrap_or_else(|| alpha.clone());
            if alpha_gamma.len() != alpha.len() {
                return Err(CliError::config(format!(
                    "sweep.alpha has {} entries but sweep.alpha_gamma has {}",
                    alpha.len(),
                    alpha_gamma.len()
                )));
            }
            Some(SweepConfig { alpha, alpha_gamma })
        }
    };

    r.finish()?;

    let config = RunConfig {
        raw: text.to_string(),
        n_x,
        n_y,
        length,
        height,
        t_final,
        n_t,
        potentials,
        initial,
        targets,
        weights,
        mode,
        band,
        probes,
        bounds: BoxBounds {
            rho_min: lower,
            rho_max: upper,
            rho_gamma_min: lower_gamma,
            rho_gamma_max: upper_gamma,
        },
        control,
        solver,
        max_iters,
        opt_tol,
        check,
        sweep,
    };
    config.validate_semantics()?;
    Ok(config)
}

impl RunConfig {
    /// Semantic validation beyond syntax: the modelling assumptions.
    fn validate_semantics(&self) -> Result<(), CliError> {
        // Mesh and grid are validated by their constructors.
        let mesh = self.build_mesh()?;
        let grid = self.build_grid()?;

        // (A2): the initial datum must start strictly inside the potential
        // domain when a singular well is active.
        let y0 = self.build_initial(&mesh);
        let margin = 1.0
            - self
                .potentials
                .bulk
                .safe_margin()
                .max(self.potentials.surface.safe_margin());
        if (self.potentials.bulk.is_singular() || self.potentials.surface.is_singular())
            && y0.max_abs() > margin
        {
            return Err(CliError::config(format!(
                "A2: the initial datum must stay strictly inside (-1, 1); max |y0| = {} exceeds {}",
                y0.max_abs(),
                margin
            )));
        }

        // (A5): target levels are plain constants here, so regularity
        // reduces to finiteness.
        for (name, v) in [
            ("targets.y_q", self.targets.y_q),
            ("targets.y_sigma", self.targets.y_sigma),
            ("targets.y_omega", self.targets.y_omega),
            ("targets.y_gamma", self.targets.y_gamma),
        ] {
            if !v.is_finite() {
                return Err(CliError::config(format!("A5: {name} must be finite, got {v}")));
            }
        }

        // (A4): nonnegative tracking weights, not all zero; positive Tikhonov
        // weights; positive sparsity weights whenever a sparsity mode is on.
        let w = &self.weights;
        for (name, v) in [
            ("cost.beta1", w.beta1),
            ("cost.beta2", w.beta2),
            ("cost.beta3", w.beta3),
            ("cost.beta4", w.beta4),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(CliError::config(format!(
                    "A4: {name} must be finite and nonnegative, got {v}"
                )));
            }
        }
        if w.beta1 == 0.0 && w.beta2 == 0.0 && w.beta3 == 0.0 && w.beta4 == 0.0 {
            return Err(CliError::config(
                "A4: the tracking weights beta1..beta4 must not all be zero",
            ));
        }
        if !(w.nu.is_finite() && w.nu > 0.0 && w.nu_gamma.is_finite() && w.nu_gamma > 0.0) {
            return Err(CliError::config(format!(
                "A4: cost.nu and cost.nu_gamma must be positive, got {} and {}",
                w.nu, w.nu_gamma
            )));
        }
        match self.mode {
            SparsityMode::NoSparsity => {
                if w.alpha != 0.0 || w.alpha_gamma != 0.0 {
                    return Err(CliError::config(
                        "sparsity.alpha and sparsity.alpha_gamma must be 0 when sparsity.mode = none",
                    ));
                }
            }
            _ => {
                if !(w.alpha.is_finite() && w.alpha > 0.0)
                    || !(w.alpha_gamma.is_finite() && w.alpha_gamma > 0.0)
                {
                    return Err(CliError::config(format!(
                        "A4: sparsity.alpha and sparsity.alpha_gamma must be positive in mode {:?}, got {} and {}",
                        self.mode, w.alpha, w.alpha_gamma
                    )));
                }
            }
        }

        // (A6): equal terminal weights.
        if w.beta3 != w.beta4 {
            return Err(CliError::config(format!(
                "A6: beta3 != beta4 (got {} and {})",
                w.beta3, w.beta4
            )));
        }

        // (A3): the admissible set must be bounded, i.e. finite box bounds.
        let b = &self.bounds;
        for (name, v) in [
            ("bounds.lower", b.rho_min),
            ("bounds.upper", b.rho_max),
            ("bounds.lower_gamma", b.rho_gamma_min),
            ("bounds.upper_gamma", b.rho_gamma_max),
        ] {
            if !v.is_finite() {
                return Err(CliError::config(format!(
                    "A3: {name} must be finite so the admissible set is bounded, got {v}"
                )));
            }
        }
        if b.rho_min > b.rho_max || b.rho_gamma_min > b.rho_gamma_max {
            return Err(CliError::config(
                "A3: each lower bound must not exceed its upper bound",
            ));
        }
        if self.mode.is_sparse() && !self.bounds.zero_strictly_interior() {
            return Err(CliError::config(format!(
                "sparsity.mode = {:?} requires 0 strictly inside both control boxes",
                self.mode
            )));
        }

        // Initial control must be admissible for solve-state; optimize
        // projects, but a config asking for an infeasible constant is a slip.
        if !self.control.0.is_finite() || !self.control.1.is_finite() {
            return Err(CliError::config("control.bulk and control.boundary must be finite"));
        }

        if !(self.band.is_finite() && (0.0..1.0).contains(&self.band)) {
            return Err(CliError::config(format!(
                "sparsity.band must lie in [0, 1), got {}",
                self.band
            )));
        }
        if self.check.directions == 0 || self.check.samples == 0 {
            return Err(CliError::config(
                "check.directions and check.samples must be at least 1",
            ));
        }
        if !(self.opt_tol.is_finite() && self.opt_tol > 0.0) || self.max_iters == 0 {
            return Err(CliError::config(
                "optimizer.tol must be positive and optimizer.max_iters at least 1",
            ));
        }
        if let Some(sweep) = &self.sweep {
            for &a in sweep.alpha.iter().chain(sweep.alpha_gamma.iter()) {
                if !(a.is_finite() && a > 0.0) {
                    return Err(CliError::config(format!(
                        "A4: every sweep alpha must be positive, got {a}"
                    )));
                }
            }
        }

        // Everything the core validates again stays validated here, so the
        // subcommands can assume a constructible problem.
        let _ = self.build_problem(&mesh, &grid)?;
        Ok(())
    }

    /// Builds the spatial mesh.
    pub fn build_mesh(&self) -> Result<Mesh, CliError> {
        build_mesh(self.n_x, self.n_y, self.length, self.height).map_err(CliError::Model)
    }

    /// Builds the time grid.
    pub fn build_grid(&self) -> Result<TimeGrid, CliError> {
        TimeGrid::new(self.t_final, self.n_t).map_err(CliError::Model)
    }

    /// Synthesizes the initial datum on `mesh`.
    pub fn build_initial(&self, mesh: &Mesh) -> CoupledField {
        match self.initial.kind {
            InitialKind::Constant => CoupledField::constant(mesh, self.initial.value),
            InitialKind::Cosine => {
                let k = self.initial.wavenumber as f64;
                let length = self.length;
                let amplitude = self.initial.amplitude;
                let offset = self.initial.offset;
                CoupledField::from_fn(mesh, |x, _| {
                    offset + amplitude * (2.0 * std::f64::consts::PI * k * x / length).cos()
                })
            }
        }
    }

    /// Builds the constant target tuple on `mesh` x `grid`.
    pub fn build_targets(&self, mesh: &Mesh, grid: &TimeGrid) -> Targets {
        Targets {
            y_q: vec![BulkField::constant(mesh, self.targets.y_q); grid.n_t() + 1],
            y_sigma: vec![BoundaryField::constant(mesh, self.targets.y_sigma); grid.n_t() + 1],
            y_omega_t: BulkField::constant(mesh, self.targets.y_omega),
            y_gamma_t: BoundaryField::constant(mesh, self.targets.y_gamma),
        }
    }

    /// Builds the constant initial/probe control.
    pub fn build_control(&self, mesh: &Mesh, grid: &TimeGrid) -> ControlPair {
        ControlPair::constant(mesh, grid, self.control.0, self.control.1)
    }

    /// Assembles the full problem instance.
    pub fn build_problem(&self, mesh: &Mesh, grid: &TimeGrid) -> Result<Problem, CliError> {
        let problem = Problem {
            mesh: mesh.clone(),
            grid: *grid,
            potentials: self.potentials,
            y0: self.build_initial(mesh),
            targets: self.build_targets(mesh, grid),
            weights: self.weights,
            bounds: self.bounds,
            mode: self.mode,
        };
        problem.validate()?;
        Ok(problem)
    }

    /// Optimizer options per the config.
    pub fn optimize_options(&self) -> OptimizeOptions {
        OptimizeOptions {
            max_iters: self.max_iters,
            opt_tol: self.opt_tol,
            solver: self.solver,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ac_control::PotentialKind;

    #[test]
    fn minimal_config_gets_the_documented_defaults() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg.n_x, 16);
        assert_eq!(cfg.n_y, 8);
        assert_eq!(cfg.n_t, 32);
        assert_eq!(cfg.t_final, 0.5);
        assert_eq!(cfg.mode, SparsityMode::NoSparsity);
        assert_eq!(cfg.weights.beta1, 1.0);
        assert_eq!(cfg.weights.alpha, 0.0);
        assert_eq!(cfg.potentials.bulk.kind(), PotentialKind::Logarithmic);
        assert!(cfg.sweep.is_none());
    }

    #[test]
    fn comments_blank_lines_and_spacing_are_tolerated() {
        let cfg = parse_config(
            "# a comment\n\n  mesh.n_x   =  8   # trailing comment\ntime.n_t=16\n",
        )
        .unwrap();
        assert_eq!(cfg.n_x, 8);
        assert_eq!(cfg.n_t, 16);
    }

    #[test]
    fn syntax_errors_carry_line_numbers() {
        let err = parse_config("mesh.n_x = 8\nnot a key value line\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2"), "{msg}");

        let err = parse_config("mesh.n_x = 8\nmesh.n_x = 9\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2") && msg.contains("duplicate"), "{msg}");

        let err = parse_config("mesh.sides = 3\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("unknown key `mesh.sides`"), "{msg}");

        let err = parse_config("mesh.n_x = eight\n").unwrap_err();
        assert!(err.to_string().contains("not a nonnegative integer"));
    }

    #[test]
    fn violated_assumptions_are_named() {
        let err = parse_config("cost.beta3 = 0.5\n").unwrap_err();
        assert!(err.to_string().contains("A6: beta3 != beta4"), "{err}");

        let err = parse_config("initial.kind = constant\ninitial.value = 1.0\n").unwrap_err();
        assert!(err.to_string().starts_with("A2:"), "{err}");

        let err = parse_config("cost.beta1 = 0\ncost.beta2 = 0\n").unwrap_err();
        assert!(err.to_string().starts_with("A4:"), "{err}");

        let err = parse_config("cost.nu = 0\n").unwrap_err();
        assert!(err.to_string().starts_with("A4:"), "{err}");

        let err = parse_config("bounds.upper = inf\n").unwrap_err();
        assert!(err.to_string().starts_with("A3:"), "{err}");

        let err =
            parse_config("sparsity.mode = full\nsparsity.alpha = 0.05\nsparsity.alpha_gamma = 0\n")
                .unwrap_err();
        assert!(err.to_string().starts_with("A4:"), "{err}");

        let err = parse_config("potential.bulk_c1 = -1\n").unwrap_err();
        assert!(err.to_string().starts_with("A1:"), "{err}");
    }

    #[test]
    fn sparse_mode_requires_an_interior_zero() {
        let err = parse_config(
            "sparsity.mode = full\nsparsity.alpha = 0.05\nsparsity.alpha_gamma = 0.05\nbounds.lower = 0.0\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("0 strictly inside"), "{err}");
    }

    #[test]
    fn sweep_lists_parse_and_must_align() {
        let cfg = parse_config("sweep.alpha = 0.01, 0.02, 0.04\n").unwrap();
        let sweep = cfg.sweep.unwrap();
        assert_eq!(sweep.alpha, vec![0.01, 0.02, 0.04]);
        assert_eq!(sweep.alpha_gamma, vec![0.01, 0.02, 0.04]);

        let err = parse_config("sweep.alpha = 0.01, 0.02\nsweep.alpha_gamma = 0.01\n").unwrap_err();
        assert!(err.to_string().contains("2 entries"), "{err}");
    }

    #[test]
    fn a_valid_config_builds_a_problem() {
        let cfg = parse_config(
            "sparsity.mode = full\nsparsity.alpha = 0.05\nsparsity.alpha_gamma = 0.05\n",
        )
        .unwrap();
        let mesh = cfg.build_mesh().unwrap();
        let grid = cfg.build_grid().unwrap();
        let problem = cfg.build_problem(&mesh, &grid).unwrap();
        assert_eq!(problem.mode, SparsityMode::Full);
        assert_eq!(problem.y0.max_abs(), 0.2);
    }
}
