//! Builds the scheme inputs from a configuration, runs the scheme and the
//! verification battery.

use std::path::Path;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use dnflow::algebra::{boundary_mass_coefficients, check_lemma_inequalities, derive_lemma_constant, LemmaConstant, LemmaId};
use dnflow::check::{worst, CheckOutcome};
use dnflow::exact::{error_norms, support_hull_family, ErrorNorms, ExactSolution};
use dnflow::geometry::{inner_parallel_set, measure_density_estimate, DomainFamily, FatnessReport, Lattice, SpatialMask};
use dnflow::grid::{Field, Trajectory};
use dnflow::integrand::{self_check, Integrand, IntegrandSpec};
use dnflow::minimizer::SolverSettings;
use dnflow::mollify::{check_finite_integration_by_parts, check_mollifier_bound, check_mollifier_convexity, landes_mollify, lq1_norm, ode_residual};
use dnflow::scheme::{
    boundary_conformance, check_dissipation_bound, check_energy_estimates, dissipation_lemma_constant, dissipation_lhs, run, SchemeConfig,
    SchemeError, SchemeRun,
};
use dnflow::verify::{
    continuity_modulus, default_test_basis, dual_norm_estimate, initial_condition_check, parabolic_minimizer_residual, variational_residual,
    ComparisonMap, DualEstimate,
};

use crate::config::{ConfigError, ExperimentConfig};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Setup(String),
    #[error("domain family must be nondecreasing in time: slice {slice} drops node {node} that an earlier slice contains")]
    Shrinking { slice: usize, node: usize },
    #[error("scheme failed: {0}")]
    Scheme(String),
    #[error("i/o error at {path}: {msg}")]
    Io { path: String, msg: String },
}

impl RunError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Shrinking { .. } => 2,
            _ => 1,
        }
    }
}

fn setup(e: impl std::fmt::Display) -> RunError {
    RunError::Setup(e.to_string())
}

fn read(path: &Path) -> Result<String, RunError> {
    std::fs::read_to_string(path).map_err(|e| RunError::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    })
}

/// Everything the scheme needs, assembled from a configuration.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub lattice: Lattice,
    pub family: DomainFamily,
    pub integrand: Arc<IntegrandSpec>,
    pub u_o: Field,
    pub u_star: Field,
    pub exact: Option<ExactSolution>,
}

fn center(list: &[f64]) -> [f64; 2] {
    [list[0], list.get(1).copied().unwrap_or(0.0)]
}

fn constant_field(l: Lattice, nc: usize, v: &[f64], key: &'static str) -> Result<Field, RunError> {
    match v.len() {
        1 => Ok(Field::constant(l, &vec![v[0]; nc])),
        n if n == nc => Ok(Field::constant(l, v)),
        n => Err(ConfigError::Invalid {
            key,
            msg: format!("{n} values for {nc} components"),
        }
        .into()),
    }
}

fn csv_field(c: &ExperimentConfig, key: &'static str, l: Lattice, nc: Option<usize>) -> Result<Field, RunError> {
    let path = c.path(key).ok_or(ConfigError::Invalid { key, msg: "path required".into() })?;
    let f = Field::from_csv_str(&read(&path)?, l).map_err(|e| setup(format!("{}: {e}", path.display())))?;
    if let Some(nc) = nc {
        if f.components() != nc {
            return Err(setup(format!("{}: expected {nc} components", path.display())));
        }
    }
    Ok(f)
}

impl Experiment {
    pub fn build(config: &ExperimentConfig) -> Result<Self, RunError> {
        let c = config;
        let n = c.int("grid.dim");
        let l = Lattice::cube(n, c.int("grid.cells") + 1, c.float("grid.lo"), c.float("grid.hi")).map_err(setup)?;
        let ell = c.int("scheme.ell");
        let horizon = c.float("scheme.T");
        let q = c.float("scheme.q");
        let p = c.float("integrand.p");
        let nc = c.int("field.components");
        let times = DomainFamily::scheme_times(ell, horizon);

        let exact = match c.string("exact.kind") {
            "none" => None,
            "heat" => Some(ExactSolution::heat(n)),
            "barenblatt_pme" => Some(
                ExactSolution::barenblatt_pme(n, q, c.float("exact.t0"), c.float("exact.r0"), center(c.list("exact.center"))).map_err(setup)?,
            ),
            _ => Some(
                ExactSolution::barenblatt_plaplace(n, p, c.float("exact.t0"), c.float("exact.r0"), center(c.list("exact.center")))
                    .map_err(setup)?,
            ),
        }
        .map(|s| s.embedded(nc, 0));
        if let Some(s) = &exact {
            if (s.q - q).abs() > 1e-12 || (s.p - p).abs() > 1e-12 {
                return Err(setup(format!("exact solution needs q = {} and p = {}", s.q, s.p)));
            }
        }

        let dc = center(c.list("domain.center"));
        let (r0, r1) = (c.float("domain.r0"), c.float("domain.r1"));
        let radius = move |t: f64| r0 + (r1 - r0) * t / horizon;
        let family = match c.string("domain.kind") {
            "cylinder" => DomainFamily::cylinder(SpatialMask::full(l), horizon),
            "expanding_ball" => DomainFamily::expanding_ball(l, dc, radius, times, horizon),
            "expanding_rectangle" => DomainFamily::expanding_rectangle(l, dc, |t| [radius(t); 2], times, horizon),
            "barenblatt_hull" => {
                let s = exact
                    .as_ref()
                    .filter(|s| s.is_compactly_supported())
                    .ok_or_else(|| setup("domain.kind = barenblatt_hull needs a Barenblatt exact.kind"))?;
                return Self::finish(c, l, support_hull_family(s, l, c.float("domain.margin"), times, horizon).map_err(setup)?, exact);
            }
            _ => {
                let path = c.path("domain.csv").ok_or(ConfigError::Invalid {
                    key: "domain.csv",
                    msg: "path required".into(),
                })?;
                DomainFamily::from_csv_str(&read(&path)?, l, horizon)
            }
        }
        .map_err(setup)?;
        Self::finish(c, l, family, exact)
    }

    fn finish(c: &ExperimentConfig, l: Lattice, family: DomainFamily, exact: Option<ExactSolution>) -> Result<Self, RunError> {
        let nc = c.int("field.components");
        let mut spec = IntegrandSpec::p_dirichlet(c.float("integrand.p")).map_err(setup)?;
        match c.string("integrand.kind") {
            "lower_order" => spec = spec.with_lower_order(c.float("integrand.lambda")),
            "coefficient" => {
                let a = csv_field(c, "integrand.coefficient_csv", l, Some(1))?;
                spec = spec.with_coefficient(a.values().to_vec()).map_err(setup)?;
            }
            _ => {}
        }
        if c.string("integrand.kind") != "lower_order" && c.float("integrand.lambda") != 0.0 {
            return Err(ConfigError::Invalid {
                key: "integrand.lambda",
                msg: "only used with integrand.kind = lower_order".into(),
            }
            .into());
        }
        if c.path("integrand.g_csv").is_some() {
            let g = csv_field(c, "integrand.g_csv", l, Some(1))?;
            spec = spec.with_growth_offset(g.values().to_vec());
        }
        if let Some(eps) = c.opt_float("integrand.eps_reg") {
            spec = spec.with_eps(eps);
        }
        if let Some(nu) = c.opt_float("integrand.nu") {
            spec = spec.with_declared_nu(nu);
        }
        spec.validate_len(l.len()).map_err(setup)?;

        let u_o = match c.string("initial.kind") {
            "zero" => Field::zeros(l, nc),
            "constant" => constant_field(l, nc, c.list("initial.value"), "initial.value")?,
            "exact" => exact
                .as_ref()
                .ok_or_else(|| setup("initial.kind = exact needs exact.kind"))?
                .field(l, 0.0)
                .map_err(setup)?,
            _ => csv_field(c, "initial.csv", l, Some(nc))?,
        };
        let u_star = match c.string("boundary.kind") {
            "zero" => Field::zeros(l, nc),
            "constant" => constant_field(l, nc, c.list("boundary.value"), "boundary.value")?,
            _ => csv_field(c, "boundary.csv", l, Some(nc))?,
        };
        Ok(Experiment {
            config: c.clone(),
            lattice: l,
            family,
            integrand: Arc::new(spec),
            u_o,
            u_star,
            exact,
        })
    }

    pub fn scheme_config(&self) -> SchemeConfig {
        let c = &self.config;
        SchemeConfig {
            ell: c.int("scheme.ell"),
            horizon: c.float("scheme.T"),
            q: c.float("scheme.q"),
            family: self.family.clone(),
            integrand: self.integrand.clone(),
            u_o: self.u_o.clone(),
            u_star: self.u_star.clone(),
            settings: SolverSettings {
                tol_obj: c.float("solver.tol_obj"),
                tol_step: c.float("solver.tol_step"),
                max_iters: c.int("solver.max_iters"),
                ..SolverSettings::default()
            },
            competitors: c.int("verify.competitors"),
            seed: c.int("seed") as u64,
        }
    }

    /// Runs the scheme; a shrinking family maps to [`RunError::Shrinking`].
    pub fn run_scheme(&self) -> Result<SchemeRun, RunError> {
        run(&self.scheme_config()).map_err(|e| match e {
            SchemeError::Shrinking { slice, node } => RunError::Shrinking { slice, node },
            other => RunError::Scheme(other.to_string()),
        })
    }
}

/// Scalar diagnostics that are reported but not asserted.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub nonconverged_steps: Vec<usize>,
    pub dissipation_lhs: Option<f64>,
    pub dual: Option<DualEstimate>,
    pub initial_sequence: Vec<f64>,
    pub continuity_modulus: f64,
    pub ode_residual: Option<f64>,
    pub ibp_delta1: Option<f64>,
    pub ibp_delta2: Option<f64>,
    pub errors: Option<ErrorNorms>,
    /// Per-step `(t_i, ‖u_i - u(t_i)‖_{L^{q+1}}, relative)`.
    pub error_series: Vec<(f64, f64, f64)>,
    pub lipschitz_c_hat: f64,
    /// `n = 1` lies outside the setting the theory assumes (`n >= 2`).
    pub outside_hypotheses: bool,
    /// Boundary-adjacent share of the final slice.
    pub boundary_cell_fraction: f64,
    /// Measure-density estimate of the final slice's complement.
    pub fatness: FatnessReport,
    /// Coercivity shift induced by the gradient regularization.
    pub coercivity_shift: f64,
    /// `max_i ‖(v_i - v_{i-1})/h‖_{L^{q+1}}` per comparison map.
    pub comparison_time_derivative: Vec<(String, f64)>,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub run: SchemeRun,
    pub checks: Vec<CheckOutcome>,
    pub constants: Vec<LemmaConstant>,
    pub diagnostics: Diagnostics,
}

impl Outcome {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failed(&self) -> Vec<&CheckOutcome> {
        self.checks.iter().filter(|c| !c.pass).collect()
    }

    /// 0 when everything passed, 3 on nonconverged steps unless allowed,
    /// 4 on any failed check.
    pub fn exit_code(&self, allow_flagged: bool) -> i32 {
        if !allow_flagged && !self.diagnostics.nonconverged_steps.is_empty() {
            3
        } else if !self.all_passed() {
            4
        } else {
            0
        }
    }
}

/// Lemma constants for the run exponent, each derived on one seed and
/// re-checked on a disjoint one.
pub fn lemma_suite(q: f64, components: usize, samples: usize, seed: u64) -> Result<(Vec<LemmaConstant>, Vec<CheckOutcome>), RunError> {
    let mut constants = Vec::new();
    let mut checks = Vec::new();
    for id in LemmaId::ALL {
        let param = id.parameter_for_q(q);
        if id == LemmaId::DifferencePower && param <= 1.0 {
            continue;
        }
        let derived = derive_lemma_constant(id, param, components, samples, seed).map_err(setup)?;
        let check = check_lemma_inequalities(id, param, derived.c_hat, components, samples, seed.wrapping_add(0x5EED)).map_err(setup)?;
        checks.push(CheckOutcome::flag(
            format!("lemma_{}_q{q}_n{components}", id.name()),
            check.worst_ratio,
            1.0,
            check.passed(),
        ));
        constants.push(derived);
    }
    if q == 1.0 {
        let (c1, c2) = boundary_mass_coefficients(q);
        checks.push(CheckOutcome::flag("lemma_boundary_mass_coefficients_q1", c1 + c2, 6.0, c1 == 2.0 && c2 == 4.0));
        let lower = constants.iter().find(|c| c.lemma == LemmaId::BoundaryLower).map(|c| c.c_hat);
        checks.push(CheckOutcome::flag("lemma_boundary_lower_exact_q1", lower.unwrap_or(f64::NAN), 2.0, lower == Some(2.0)));
    }
    Ok((constants, checks))
}

fn flag_check(name: &str, pass: bool) -> CheckOutcome {
    CheckOutcome::flag(name, if pass { 0.0 } else { 1.0 }, 0.0, pass)
}

/// Runs the scheme and every enabled check.
pub fn execute(exp: &Experiment) -> Result<Outcome, RunError> {
    let c = &exp.config;
    let seed = c.int("seed") as u64;
    let nc = exp.u_o.components();
    let n = exp.lattice.n;
    let q = c.float("scheme.q");
    let f: &dyn Integrand = exp.integrand.as_ref();
    let mut checks = Vec::new();

    let sc = self_check(f, exp.lattice.len(), nc, n, c.int("verify.self_check_samples"), seed);
    checks.push(flag_check("integrand_self_check", sc.passed()));

    let run = exp.run_scheme()?;
    let u = &run.trajectory;
    let ledger = &run.ledger;
    let ell = u.ell();
    let horizon = u.horizon();
    let dx = exp.lattice.min_spacing();
    let tols: Vec<f64> = ledger.entries.iter().map(|e| e.achieved_tol).collect();

    let samples = c.int("verify.lemma_samples");
    let (constants, lemma_checks) = lemma_suite(q, nc, samples, seed)?;
    checks.extend(lemma_checks);

    if let Some(w) = worst(ledger.minimality.iter().cloned()) {
        checks.push(CheckOutcome { name: "step_minimality".into(), ..w });
    }
    checks.push(flag_check("boundary_conformance", boundary_conformance(u).is_none()));

    if c.boolean("verify.energy") {
        let e = check_energy_estimates(ledger, true);
        checks.extend([e.mass, e.combined, e.gradient]);
    }

    let mut dissipation = None;
    let mut comparison_time_derivative = Vec::new();
    if c.boolean("verify.dissipation") {
        let eps = c.float("verify.epsilon") * horizon;
        let c_hat = dissipation_lemma_constant(q, nc, samples, seed).map_err(setup)?;
        dissipation = Some(dissipation_lhs(ledger, eps, c_hat));
        match check_dissipation_bound(ledger, eps, c_hat) {
            Ok(o) => checks.push(o),
            Err(SchemeError::EpsilonTooSmall { .. }) => {}
            Err(e) => return Err(setup(e)),
        }
    }

    if c.boolean("verify.variational") {
        let h_landes = c.opt_float("verify.landes_h").unwrap_or(2.0 * u.h);
        let maps = [
            ComparisonMap::stationary_boundary(u),
            ComparisonMap::stationary_mollified_initial(u, &u.steps[0], c.float("verify.mollify_cells") * dx).map_err(setup)?,
            ComparisonMap::landes_of_solution(u, h_landes).map_err(setup)?,
        ];
        for m in &maps {
            checks.push(variational_residual(u, m, f, &tols).map_err(setup)?);
            let v = &m.trajectory;
            let d = (1..v.steps.len())
                .map(|i| Ok(lq1_norm(&v.steps[i].combine(1.0 / u.h, &v.steps[i - 1], -1.0 / u.h).map_err(setup)?, q)))
                .collect::<Result<Vec<f64>, RunError>>()?;
            comparison_time_derivative.push((m.kind.name().to_string(), d.into_iter().fold(0.0, f64::max)));
        }
    }

    let mut dual = None;
    if c.boolean("verify.parabolic") {
        let s = c.list("verify.sigma_cells");
        let sigmas = [s[0] * dx, s.get(1).copied().unwrap_or(2.0 * s[0]) * dx];
        let basis = default_test_basis(u, sigmas).map_err(setup)?;
        for phi in &basis {
            for sign in [1.0, -1.0] {
                let mut o = parabolic_minimizer_residual(u, &phi.scaled(sign), f, &tols).map_err(setup)?;
                o.name = format!("parabolic_{}_{}", phi.name, if sign > 0.0 { "plus" } else { "minus" });
                checks.push(o);
            }
        }
        dual = Some(dual_norm_estimate(u, &basis, f).map_err(setup)?);
    }

    let (mut ode, mut d1, mut d2) = (None, None, None);
    if c.boolean("verify.mollifier") {
        let h_landes = c.opt_float("verify.landes_h").unwrap_or(2.0 * u.h);
        let mut stat = u.clone();
        stat.steps = vec![u.u_star.clone(); u.steps.len()];
        let fixed = landes_mollify(&stat, h_landes, &u.u_star).map_err(setup)?;
        checks.push(flag_check(
            "mollifier_fixed_point",
            fixed.steps.iter().all(|s| s.values() == u.u_star.values()),
        ));
        let m = landes_mollify(u, h_landes, &u.steps[0]).map_err(setup)?;
        ode = Some(ode_residual(u, &m, h_landes));
        for r in [q + 1.0, f64::INFINITY] {
            let mut o = check_mollifier_bound(u, h_landes, &u.steps[0], r).map_err(setup)?;
            o.name = format!("mollifier_bound_r{r}");
            checks.push(o);
        }
        checks.push(check_mollifier_convexity(u, h_landes, f, &u.steps[0]).map_err(setup)?);
        let k = c.int("verify.ibp_k").clamp(1, ell);
        let ibp = check_finite_integration_by_parts(u, &m, k).map_err(setup)?;
        d1 = Some(ibp.delta1);
        d2 = Some(ibp.delta2);
        checks.push(ibp.outcome);
    }

    let mut initial_sequence = Vec::new();
    if c.boolean("verify.initial") {
        let k_set = inner_parallel_set(u.mask(0), c.float("verify.k_sigma_cells") * dx).map_err(setup)?;
        // Windows shorter than one step hold no steps and are dropped.
        let h_list: Vec<f64> = c
            .list("verify.h_list")
            .iter()
            .map(|d| horizon / d)
            .filter(|&big_h| big_h >= u.h * (1.0 - 1e-12))
            .collect();
        initial_sequence = initial_condition_check(u, &u.steps[0], &k_set, &h_list).map_err(setup)?;
        if initial_sequence.len() >= 2 {
            let decreasing = !k_set.is_empty() && initial_sequence.windows(2).all(|w| w[1] < w[0]);
            checks.push(flag_check("initial_condition_decreasing", decreasing));
        }
    }

    let (mut errors, mut error_series) = (None, Vec::new());
    if let Some(sol) = &exp.exact {
        let e = error_norms(u, sol).map_err(setup)?;
        if let Some(limit) = c.opt_float("verify.max_relative_error") {
            checks.push(CheckOutcome::new("exact_relative_error", e.space_time_relative, limit, 0.0, 0.0));
        }
        errors = Some(e);
        error_series = exact_error_series(u, sol)?;
    }

    Ok(Outcome {
        diagnostics: Diagnostics {
            nonconverged_steps: ledger.nonconverged_steps(),
            dissipation_lhs: dissipation,
            dual,
            initial_sequence,
            continuity_modulus: continuity_modulus(u),
            ode_residual: ode,
            ibp_delta1: d1,
            ibp_delta2: d2,
            errors,
            error_series,
            lipschitz_c_hat: sc.lipschitz_c_hat,
            outside_hypotheses: n == 1,
            boundary_cell_fraction: u.mask(ell).boundary_cell_fraction(),
            fatness: measure_density_estimate(u.mask(ell), 64, seed),
            coercivity_shift: f.coercivity_shift(),
            comparison_time_derivative,
        },
        run,
        checks,
        constants,
    })
}

/// `(t_i, ‖u_i - u(t_i)‖_{L^{q+1}}, relative)` for `i = 0..ℓ`.
pub fn exact_error_series(u: &Trajectory, sol: &ExactSolution) -> Result<Vec<(f64, f64, f64)>, RunError> {
    let l = *u.lattice();
    (0..u.steps.len())
        .map(|i| {
            let ex = sol.field(l, u.time(i)).map_err(setup)?;
            let diff = u.steps[i].combine(1.0, &ex, -1.0).map_err(setup)?;
            let e = lq1_norm(&diff, u.q);
            let r = lq1_norm(&ex, u.q);
            Ok((u.time(i), e, if r > 0.0 { e / r } else { 0.0 }))
        })
        .collect()
}
