//! Minimizing-movements driver: iterates the step problem over the scheme
//! times, glues the minimizers into a piecewise-constant trajectory and keeps
//! the energy bookkeeping needed by the a-posteriori estimates.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algebra::{derive_lemma_constant, dissipation_term, AlgebraError, LemmaId};
use crate::check::{worst, CheckOutcome};
use crate::geometry::{DomainFamily, GeometryError};
use crate::grid::{clamp_to_boundary, gradient_lp_integral, lp_integral, ordered_sum, Field, Trajectory};
use crate::integrand::{energy_integral, Integrand};
use crate::minimizer::{crucial_inequality, minimize_step, verify_step_minimality, MinimizerError, SolverSettings, StepProblem};

/// Relative tolerance of the energy and dissipation estimates.
pub const ESTIMATE_REL_TOL: f64 = 1e-8;

#[derive(Debug, Error, PartialEq)]
pub enum SchemeError {
    #[error("domain family shrinks at slice {slice} (node {node} leaves the domain); the scheme needs nondecreasing domains")]
    Shrinking { slice: usize, node: usize },
    #[error("invalid scheme configuration: {0}")]
    Config(String),
    #[error("dissipation bound needs ell > 4T/epsilon (ell = {ell}, T = {horizon}, epsilon = {epsilon})")]
    EpsilonTooSmall { ell: usize, horizon: f64, epsilon: f64 },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Minimizer(#[from] MinimizerError),
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
}

#[derive(Debug, Clone)]
pub struct SchemeConfig {
    pub ell: usize,
    pub horizon: f64,
    pub q: f64,
    pub family: DomainFamily,
    pub integrand: Arc<dyn Integrand>,
    pub u_o: Field,
    pub u_star: Field,
    pub settings: SolverSettings,
    /// Competitors per step for the minimality check; 0 skips it.
    pub competitors: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub i: usize,
    pub t: f64,
    pub energy_f: f64,
    pub lq1_mass: f64,
    pub dissipation: f64,
    /// Worst minimality headroom of the step (margin plus slack).
    pub step_margin: f64,
    pub converged: bool,
    pub iterations: usize,
    pub achieved_tol: f64,
    pub gradient_p: f64,
    /// Slack of the step inequality against `u_*`.
    pub slack_star: f64,
    /// Slack of the step inequality against the previous step.
    pub slack_prev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyLedger {
    pub entries: Vec<LedgerEntry>,
    pub q: f64,
    pub p: f64,
    pub h: f64,
    pub nu: f64,
    pub coercivity_shift: f64,
    pub omega_volume: f64,
    /// `∫ f(x, u_*, Du_*)`.
    pub e_star: f64,
    /// `∫ |u_o|^{q+1}` of the extended initial datum.
    pub m0: f64,
    /// `∫ |u_*|^{q+1}`.
    pub m_star: f64,
    pub minimality: Vec<CheckOutcome>,
}

impl EnergyLedger {
    pub fn ell(&self) -> usize {
        self.entries.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        self.h * self.ell() as f64
    }

    pub fn all_converged(&self) -> bool {
        self.entries.iter().all(|e| e.converged)
    }

    pub fn nonconverged_steps(&self) -> Vec<usize> {
        self.entries.iter().filter(|e| !e.converged).map(|e| e.i).collect()
    }

    pub fn to_csv_string(&self) -> String {
        let mut s = String::from("i,t,energy_f,lq1_mass,dissipation,step_margin,converged\n");
        for e in &self.entries {
            s.push_str(&format!(
                "{},{:e},{:e},{:e},{:e},{:e},{}\n",
                e.i, e.t, e.energy_f, e.lq1_mass, e.dissipation, e.step_margin, e.converged
            ));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeRun {
    pub trajectory: Trajectory,
    pub ledger: EnergyLedger,
}

fn entry(i: usize, t: f64, u: &Field, f: &dyn Integrand, q: f64) -> LedgerEntry {
    LedgerEntry {
        i,
        t,
        energy_f: energy_integral(f, u),
        lq1_mass: lp_integral(u, q + 1.0),
        dissipation: 0.0,
        step_margin: 0.0,
        converged: true,
        iterations: 0,
        achieved_tol: 0.0,
        gradient_p: gradient_lp_integral(u, f.p()),
        slack_star: 0.0,
        slack_prev: 0.0,
    }
}

/// Runs the scheme; shrinking families are rejected before the first step.
pub fn run(config: &SchemeConfig) -> Result<SchemeRun, SchemeError> {
    if config.ell == 0 {
        return Err(SchemeError::Config("ell must be at least 1".into()));
    }
    if !(config.horizon > 0.0) || !(config.q > 0.0) {
        return Err(SchemeError::Config("horizon and q must be positive".into()));
    }
    if (config.family.horizon() - config.horizon).abs() > 1e-12 * config.horizon {
        return Err(SchemeError::Config("family horizon differs from T".into()));
    }
    let lattice = *config.family.lattice();
    if config.u_o.lattice() != &lattice || !config.u_o.same_shape(&config.u_star) {
        return Err(SchemeError::Config("initial and boundary data must share the family lattice".into()));
    }
    if let Some((slice, node)) = config.family.first_shrinking()? {
        return Err(SchemeError::Shrinking { slice, node });
    }
    let f = config.integrand.as_ref();
    let q = config.q;
    let h = config.horizon / config.ell as f64;
    let masks: Vec<_> = (0..=config.ell)
        .map(|i| config.family.slice_mask((i as f64 * h).min(config.horizon)).cloned())
        .collect::<Result<_, _>>()?;
    let u0 = clamp_to_boundary(&config.u_o, &masks[0], &config.u_star).map_err(|e| SchemeError::Config(e.to_string()))?;
    let mut ledger = EnergyLedger {
        entries: vec![entry(0, 0.0, &u0, f, q)],
        q,
        p: f.p(),
        h,
        nu: f.nu(),
        coercivity_shift: f.coercivity_shift(),
        omega_volume: lattice.len() as f64 * lattice.cell_volume(),
        e_star: energy_integral(f, &config.u_star),
        m0: lp_integral(&u0, q + 1.0),
        m_star: lp_integral(&config.u_star, q + 1.0),
        minimality: Vec::new(),
    };
    let mut steps = vec![u0];
    let mut settings = config.settings;
    for i in 1..=config.ell {
        let prev = steps[i - 1].clone();
        let problem = StepProblem {
            mask: &masks[i],
            u_prev: &prev,
            u_star: &config.u_star,
            integrand: f,
            h,
            q,
        };
        let res = minimize_step(&problem, &prev, &settings)?;
        settings.lipschitz_hint = Some(res.lipschitz);
        let mut e = entry(i, i as f64 * h, &res.field, f, q);
        e.converged = res.converged;
        e.iterations = res.iterations;
        e.achieved_tol = res.achieved_tol;
        e.dissipation = ordered_sum(lattice.len(), |k| dissipation_term(prev.at(k), res.field.at(k), q)) * lattice.cell_volume();
        e.slack_star = crucial_inequality(&problem, &res.field, res.achieved_tol, &config.u_star, "star")?.slack;
        if i >= 2 {
            e.slack_prev = crucial_inequality(&problem, &res.field, res.achieved_tol, &prev, "prev")?.slack;
        }
        if config.competitors > 0 {
            let m = verify_step_minimality(&problem, &res, config.competitors, config.seed ^ (i as u64).wrapping_mul(0x9E37_79B9))?;
            e.step_margin = m.worst.headroom();
            let mut w = m.worst;
            w.name = format!("step_{i}_{}", w.name);
            ledger.minimality.push(w);
        }
        ledger.entries.push(e);
        steps.push(res.field);
    }
    let trajectory = Trajectory {
        steps,
        h,
        family: config.family.clone(),
        q,
        p: f.p(),
        u_star: config.u_star.clone(),
    };
    Ok(SchemeRun { trajectory, ledger })
}

/// Right-hand side of the energy estimate at step `m`:
/// `m h E* + 2q/(q+1) M0 + (2^q+1)/(q+1) M*`, optionally without the `u_*`
/// terms.
pub fn energy_rhs(ledger: &EnergyLedger, m: usize, with_boundary_terms: bool) -> f64 {
    let q = ledger.q;
    let star = if with_boundary_terms {
        m as f64 * ledger.h * ledger.e_star + (2f64.powf(q) + 1.0) / (q + 1.0) * ledger.m_star
    } else {
        0.0
    };
    star + 2.0 * q / (q + 1.0) * ledger.m0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    /// Mass estimate, worst over `m`.
    pub mass: CheckOutcome,
    /// Combined energy plus mass estimate, worst over `m`.
    pub combined: CheckOutcome,
    /// Gradient estimate at `m = ell`.
    pub gradient: CheckOutcome,
}

impl EnergyReport {
    pub fn passed(&self) -> bool {
        self.mass.pass && self.combined.pass && self.gradient.pass
    }
}

/// Energy estimates with explicit constants, each carrying the accumulated
/// step slack and a relative tolerance of [`ESTIMATE_REL_TOL`].
pub fn check_energy_estimates(ledger: &EnergyLedger, with_boundary_terms: bool) -> EnergyReport {
    let q = ledger.q;
    let c_mass = q / (2.0 * (q + 1.0));
    let mut mass = Vec::new();
    let mut combined = Vec::new();
    let mut energy_sum = 0.0;
    let mut slack = 0.0;
    for m in 1..=ledger.ell() {
        let e = &ledger.entries[m];
        energy_sum += ledger.h * e.energy_f;
        slack += ledger.h * e.slack_star;
        let rhs = energy_rhs(ledger, m, with_boundary_terms);
        mass.push(CheckOutcome::new(format!("energy_mass_m{m}"), c_mass * e.lq1_mass, rhs, slack, ESTIMATE_REL_TOL));
        combined.push(CheckOutcome::new(
            format!("energy_combined_m{m}"),
            energy_sum + c_mass * e.lq1_mass,
            rhs,
            slack,
            ESTIMATE_REL_TOL,
        ));
    }
    let ell = ledger.ell();
    let grad: f64 = ledger.entries[1..].iter().map(|e| ledger.h * e.gradient_p).sum();
    let shift = ledger.coercivity_shift * ledger.omega_volume * ledger.horizon();
    let gradient = CheckOutcome::new(
        "energy_gradient",
        ledger.nu * grad,
        energy_rhs(ledger, ell, with_boundary_terms) + shift,
        slack,
        ESTIMATE_REL_TOL,
    );
    let none = || CheckOutcome::flag("energy_empty", 0.0, 0.0, true);
    EnergyReport {
        mass: worst(mass).unwrap_or_else(none),
        combined: worst(combined).unwrap_or_else(none),
        gradient,
    }
}

/// `c_hat` of the dissipation lower bound `|A|^2 <= c b[u, v]` for `q`:
/// exact at `q = 1`, otherwise sampled.
pub fn dissipation_lemma_constant(q: f64, components: usize, samples: usize, seed: u64) -> Result<f64, SchemeError> {
    if let Some(c) = LemmaId::BoundaryLower.exact_constant(q) {
        return Ok(c);
    }
    Ok(derive_lemma_constant(LemmaId::BoundaryLower, q, components, samples, seed)?.c_hat)
}

/// `c(q) Σ_{t_i > ε} (1/h) ∫ |[u_i]^{(q+1)/2} - [u_{i-1}]^{(q+1)/2}|^2`,
/// with `c(q) = 1 / c_hat`.
pub fn dissipation_lhs(ledger: &EnergyLedger, epsilon: f64, c_hat: f64) -> f64 {
    let h = ledger.h;
    ledger.entries[1..]
        .iter()
        .filter(|e| e.t > epsilon + 1e-9 * h)
        .map(|e| e.dissipation / h)
        .sum::<f64>()
        / c_hat
}

/// Time-derivative bound after `ε`; needs `ell > 4T/ε`.
pub fn check_dissipation_bound(ledger: &EnergyLedger, epsilon: f64, c_hat: f64) -> Result<CheckOutcome, SchemeError> {
    let ell = ledger.ell();
    let horizon = ledger.horizon();
    if !(epsilon > 0.0) || !(ell as f64 > 4.0 * horizon / epsilon) {
        return Err(SchemeError::EpsilonTooSmall { ell, horizon, epsilon });
    }
    let q = ledger.q;
    let h = ledger.h;
    let c_hat_energy = (2.0 * q / (q + 1.0)).max((2f64.powf(q) + 1.0) / (q + 1.0));
    let inv = 1.0 / (epsilon - 2.0 * h);
    let rhs = inv * (horizon * ledger.e_star + c_hat_energy * (ledger.m0 + ledger.m_star));
    let slack = ledger.entries[2..].iter().map(|e| e.slack_prev).sum::<f64>()
        + inv * ledger.entries[1..].iter().map(|e| h * e.slack_star).sum::<f64>();
    Ok(CheckOutcome::new(
        "dissipation_bound",
        dissipation_lhs(ledger, epsilon, c_hat),
        rhs,
        slack,
        ESTIMATE_REL_TOL,
    ))
}

/// Per-step energy monotonicity `∫f(u_i) <= ∫f(u_{i-1}) + slack_i`, `i >= 2`.
pub fn check_energy_monotonicity(ledger: &EnergyLedger) -> CheckOutcome {
    let outcomes = ledger.entries.windows(2).skip(1).map(|w| {
        let slack = w[1].slack_prev + 1e-12 * w[0].energy_f.abs();
        CheckOutcome::new(format!("energy_monotone_{}", w[1].i), w[1].energy_f, w[0].energy_f, slack, 0.0)
    });
    worst(outcomes).unwrap_or_else(|| CheckOutcome::flag("energy_monotone", 0.0, 0.0, true))
}

/// First step and node where the trajectory differs from `u_*` off the
/// slice.
pub fn boundary_conformance(traj: &Trajectory) -> Option<(usize, usize)> {
    for (i, u) in traj.steps.iter().enumerate() {
        if let Some(k) = crate::grid::first_unclamped(u, traj.mask(i), &traj.u_star) {
            return Some((i, k));
        }
    }
    None
}
