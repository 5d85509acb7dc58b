//! A-posteriori certification of the computed trajectory: the variational
//! inequality against comparison maps, parabolic minimality against test
//! functions, the dual-norm estimate of the time derivative, recovery of the
//! initial datum, the time-continuity modulus and a discrete Hardy ratio.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algebra::{b_term, norm, power_into, powr};
use crate::check::{worst, CheckOutcome};
use crate::geometry::{cutoff_eta_sigma, distance_to_complement, mollify_initial_datum, GeometryError, SpatialMask};
use crate::grid::{first_unclamped, gradient_lp_integral, l1_distance, lp_integral, ordered_sum, vp_norm, Field, Trajectory};
use crate::integrand::{energy_integral, Integrand};
use crate::mollify::{landes_mollify, MollifyError};

#[derive(Debug, Error, PartialEq)]
pub enum VerifyError {
    #[error("comparison map differs from u_* at step {step}, node {node} outside the slice")]
    Inadmissible { step: usize, node: usize },
    #[error("test function is nonzero at step {step}, node {node} outside its support set")]
    Support { step: usize, node: usize },
    #[error("test function must vanish at t = 0 and t = T")]
    Endpoints,
    #[error("empty test basis")]
    EmptyBasis,
    #[error("compact set K is not inside the initial slice (node {0})")]
    NotInside(usize),
    #[error("field is nonzero at node {0} outside the mask")]
    NotVanishing(usize),
    #[error("shapes do not match")]
    Mismatch,
    #[error("need one solver tolerance per step: got {got}, expected {expected}")]
    Tolerances { got: usize, expected: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Mollify(#[from] MollifyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ComparisonKind {
    StationaryBoundary,
    StationaryMollifiedInitial,
    LandesOfSolution,
    UserCsv,
}

impl ComparisonKind {
    pub fn name(self) -> &'static str {
        match self {
            ComparisonKind::StationaryBoundary => "stationary_boundary",
            ComparisonKind::StationaryMollifiedInitial => "stationary_mollified_initial",
            ComparisonKind::LandesOfSolution => "landes_of_solution",
            ComparisonKind::UserCsv => "user_csv",
        }
    }
}

/// A comparison map `v` sampled at the scheme times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonMap {
    pub kind: ComparisonKind,
    pub trajectory: Trajectory,
}

impl ComparisonMap {
    fn stationary(kind: ComparisonKind, u: &Trajectory, field: Field) -> Self {
        let mut trajectory = u.clone();
        trajectory.steps = vec![field; u.steps.len()];
        ComparisonMap { kind, trajectory }
    }

    /// `v ≡ u_*`.
    pub fn stationary_boundary(u: &Trajectory) -> Self {
        Self::stationary(ComparisonKind::StationaryBoundary, u, u.u_star.clone())
    }

    /// `v ≡` the initial datum mollified in space at scale `eps`.
    pub fn stationary_mollified_initial(u: &Trajectory, u_o: &Field, eps: f64) -> Result<Self, VerifyError> {
        let f = mollify_initial_datum(u_o, &u.u_star, u.mask(0), eps)?;
        Ok(Self::stationary(ComparisonKind::StationaryMollifiedInitial, u, f))
    }

    /// `v = [u]_h` started from `u(0)`.
    pub fn landes_of_solution(u: &Trajectory, h: f64) -> Result<Self, VerifyError> {
        Ok(ComparisonMap {
            kind: ComparisonKind::LandesOfSolution,
            trajectory: landes_mollify(u, h, &u.steps[0])?,
        })
    }

    pub fn user(u: &Trajectory, steps: Vec<Field>) -> Result<Self, VerifyError> {
        if steps.len() != u.steps.len() || steps.iter().any(|s| !s.same_shape(&u.steps[0])) {
            return Err(VerifyError::Mismatch);
        }
        let mut trajectory = u.clone();
        trajectory.steps = steps;
        Ok(ComparisonMap {
            kind: ComparisonKind::UserCsv,
            trajectory,
        })
    }

    /// `v(t_i) = u_*` off slice `i` for `i >= 1`.
    pub fn check_admissible(&self, u: &Trajectory) -> Result<(), VerifyError> {
        for i in 1..self.trajectory.steps.len() {
            if let Some(node) = first_unclamped(&self.trajectory.steps[i], u.mask(i), &u.u_star) {
                return Err(VerifyError::Inadmissible { step: i, node });
            }
        }
        Ok(())
    }
}

fn check_tols(u: &Trajectory, tols: &[f64]) -> Result<(), VerifyError> {
    if tols.len() != u.steps.len() {
        return Err(VerifyError::Tolerances {
            got: tols.len(),
            expected: u.steps.len(),
        });
    }
    Ok(())
}

fn power_values(f: &Field, q: f64) -> Vec<f64> {
    let nc = f.components();
    let mut out = vec![0.0; f.values().len()];
    for k in 0..f.lattice().len() {
        power_into(f.at(k), q, &mut out[k * nc..(k + 1) * nc]);
    }
    out
}

/// `(Σ, Σ|.|)` of a node-wise expression, times the cell volume.
fn integrate(f: &Field, term: impl Fn(usize) -> f64 + Sync) -> (f64, f64) {
    let l = f.lattice();
    let s = ordered_sum(l.len(), &term) * l.cell_volume();
    let a = ordered_sum(l.len(), |k| term(k).abs()) * l.cell_volume();
    (s, a)
}

/// Variational inequality at every scheme time `τ = t_m`, `m = 1..ℓ`:
///
/// `Σ_{i≤m} h∫f(u_i) <= Σ_{i≤m} h∫f(v_i) + Σ_{i≤m} ∫(v_i - v_{i-1}).([v_i]^q - [u_{i-1}]^q)
///  - ∫b[u_m, v_m] + ∫b[u_0, v_0] - Σ_{i≤m} ∫(b[v_i, v_{i-1}] + b[u_{i-1}, u_i])`
///
/// up to `Σ h tol_i ‖v_i - u_i‖_{L^1}`. `tols[i]` is the solver residual of
/// step `i` (`tols[0]` unused).
pub fn variational_residuals(
    u: &Trajectory,
    v: &ComparisonMap,
    f: &dyn Integrand,
    tols: &[f64],
) -> Result<Vec<CheckOutcome>, VerifyError> {
    check_tols(u, tols)?;
    if v.trajectory.steps.len() != u.steps.len() || !v.trajectory.steps[0].same_shape(&u.steps[0]) {
        return Err(VerifyError::Mismatch);
    }
    v.check_admissible(u)?;
    let q = u.q;
    let h = u.h;
    let nc = u.steps[0].components();
    let vs = &v.trajectory.steps;
    let (b0, b0a) = integrate(&u.steps[0], |k| b_term(u.steps[0].at(k), vs[0].at(k), q));
    let mut pu_prev = power_values(&u.steps[0], q);
    let (mut lhs, mut rhs_acc, mut scale, mut slack) = (0.0, 0.0, b0a, 0.0);
    let mut out = Vec::with_capacity(u.ell());
    for i in 1..=u.ell() {
        let pv = power_values(&vs[i], q);
        let fu = energy_integral(f, &u.steps[i]);
        let fv = energy_integral(f, &vs[i]);
        lhs += h * fu;
        rhs_acc += h * fv;
        scale += h * (fu.abs() + fv.abs());
        let (pair, pair_a) = integrate(&u.steps[i], |k| {
            (0..nc)
                .map(|c| {
                    let j = k * nc + c;
                    (vs[i].values()[j] - vs[i - 1].values()[j]) * (pv[j] - pu_prev[j])
                })
                .sum()
        });
        let (bb, bba) = integrate(&u.steps[i], |k| {
            b_term(vs[i].at(k), vs[i - 1].at(k), q) + b_term(u.steps[i - 1].at(k), u.steps[i].at(k), q)
        });
        rhs_acc += pair - bb;
        scale += pair_a + bba;
        slack += h * tols[i] * l1_distance(&vs[i], &u.steps[i]);
        let (bm, bma) = integrate(&u.steps[i], |k| b_term(u.steps[i].at(k), vs[i].at(k), q));
        let rhs = rhs_acc - bm + b0;
        out.push(CheckOutcome::new(
            format!("variational_{}_t{i}", v.kind.name()),
            lhs,
            rhs,
            slack + 1e-12 * (scale + bma),
            0.0,
        ));
        pu_prev = power_values(&u.steps[i], q);
    }
    Ok(out)
}

/// Worst of [`variational_residuals`] over all scheme times.
pub fn variational_residual(u: &Trajectory, v: &ComparisonMap, f: &dyn Integrand, tols: &[f64]) -> Result<CheckOutcome, VerifyError> {
    let all = variational_residuals(u, v, f, tols)?;
    Ok(worst(all).unwrap_or_else(|| CheckOutcome::flag("variational", 0.0, 0.0, true)))
}

/// A test function sampled at the scheme times, vanishing at both ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    pub name: String,
    pub steps: Vec<Field>,
}

impl TestFunction {
    pub fn scaled(&self, s: f64) -> TestFunction {
        let steps = self
            .steps
            .iter()
            .map(|f| {
                let mut g = f.clone();
                g.values_mut().iter_mut().for_each(|x| *x *= s);
                g
            })
            .collect();
        TestFunction {
            name: format!("{}*{s}", self.name),
            steps,
        }
    }

    /// Zero at `t = 0`, `t = T` and off `supports[i]` for each step.
    pub fn validate(&self, supports: &[SpatialMask]) -> Result<(), VerifyError> {
        let last = self.steps.len() - 1;
        if self.steps[0].values().iter().any(|&x| x != 0.0) || self.steps[last].values().iter().any(|&x| x != 0.0) {
            return Err(VerifyError::Endpoints);
        }
        for (i, (phi, mask)) in self.steps.iter().zip(supports).enumerate() {
            let l = phi.lattice();
            if let Some(node) = (0..l.len()).find(|&k| !mask.contains(k) && phi.at(k).iter().any(|&x| x != 0.0)) {
                return Err(VerifyError::Support { step: i, node });
            }
        }
        Ok(())
    }

    /// `(Σ_{i≥1} h ∫|Dφ|^p)^{1/p} + (Σ_{i≥1} h ∫|φ|^p)^{1/p}`.
    pub fn vp_norm(&self, u: &Trajectory) -> f64 {
        let mut t = u.clone();
        t.steps = self.steps.clone();
        vp_norm(&t)
    }
}

/// Eight test functions `η_σ (1 or bump) θ(t)` for two cutoff widths and the
/// temporal profiles `hat` and `sin²`, each normalized to unit `V^p` norm.
/// The cutoffs use the first active slice, contained in every later one.
pub fn default_test_basis(u: &Trajectory, sigmas: [f64; 2]) -> Result<Vec<TestFunction>, VerifyError> {
    let l = *u.lattice();
    let ell = u.ell();
    let mask = u.mask(1.min(ell));
    let nc = u.steps[0].components();
    let dist = distance_to_complement(mask);
    let (mut cx, mut cy, mut cnt) = (0.0, 0.0, 0.0);
    for k in 0..l.len() {
        if mask.contains(k) {
            let x = l.coord(k);
            cx += x[0];
            cy += x[1];
            cnt += 1.0;
        }
    }
    let center = if cnt > 0.0 { [cx / cnt, cy / cnt] } else { l.center() };
    let rho = dist.iter().cloned().fold(0.0, f64::max).max(l.min_spacing());
    let bump: Vec<f64> = (0..l.len())
        .map(|k| {
            let s = l.dist(l.coord(k), center).powi(2) / (rho * rho);
            if s < 1.0 {
                (1.0 - s).powi(2)
            } else {
                0.0
            }
        })
        .collect();
    let horizon = u.horizon();
    let profiles: [(&str, Box<dyn Fn(f64) -> f64>); 2] = [
        ("hat", Box::new(move |t: f64| 1.0 - (2.0 * t / horizon - 1.0).abs())),
        ("sin2", Box::new(move |t: f64| (std::f64::consts::PI * t / horizon).sin().powi(2))),
    ];
    let mut basis = Vec::new();
    for (si, &sigma) in sigmas.iter().enumerate() {
        let eta = cutoff_eta_sigma(mask, sigma)?;
        for (bi, use_bump) in [false, true].into_iter().enumerate() {
            for (name, theta) in &profiles {
                let steps: Vec<Field> = (0..=ell)
                    .map(|i| {
                        let th = if i == 0 || i == ell { 0.0 } else { theta(u.time(i)) };
                        let mut f = Field::zeros(l, nc);
                        for k in 0..l.len() {
                            let s = eta[k] * if use_bump { bump[k] } else { 1.0 };
                            f.values_mut()[k * nc] = th * s;
                        }
                        f
                    })
                    .collect();
                let mut phi = TestFunction {
                    name: format!("sigma{si}_{}_{name}", if bi == 0 { "cutoff" } else { "bump" }),
                    steps,
                };
                let nrm = phi.vp_norm(u);
                if nrm > 0.0 {
                    phi = TestFunction {
                        name: phi.name.clone(),
                        ..phi.scaled(1.0 / nrm)
                    };
                }
                basis.push(phi);
            }
        }
    }
    Ok(basis)
}

/// Discrete `∬ [u]^q ∂_t φ = Σ_{i<ℓ} ∫ [u_i]^q.(φ_{i+1} - φ_i)`, with its
/// absolute counterpart.
fn pairing(u: &Trajectory, phi: &TestFunction) -> (f64, f64) {
    let q = u.q;
    let nc = u.steps[0].components();
    let (mut s, mut a) = (0.0, 0.0);
    for i in 0..u.ell() {
        let pu = power_values(&u.steps[i], q);
        let (x, y) = integrate(&u.steps[i], |k| {
            (0..nc)
                .map(|c| {
                    let j = k * nc + c;
                    pu[j] * (phi.steps[i + 1].values()[j] - phi.steps[i].values()[j])
                })
                .sum()
        });
        s += x;
        a += y;
    }
    (s, a)
}

/// `Σ h∫f(u+φ) - Σ h∫f(u) - Σ ∫[u_i]^q.(φ_{i+1} - φ_i) >= -Σ h tol_i ‖φ_i‖_{L^1}`.
pub fn parabolic_minimizer_residual(
    u: &Trajectory,
    phi: &TestFunction,
    f: &dyn Integrand,
    tols: &[f64],
) -> Result<CheckOutcome, VerifyError> {
    check_tols(u, tols)?;
    if phi.steps.len() != u.steps.len() || !phi.steps[0].same_shape(&u.steps[0]) {
        return Err(VerifyError::Mismatch);
    }
    let supports: Vec<SpatialMask> = (0..u.steps.len()).map(|i| u.mask(i).clone()).collect();
    phi.validate(&supports)?;
    let h = u.h;
    let (mut lhs, mut rhs, mut slack, mut scale) = (0.0, 0.0, 0.0, 0.0);
    for i in 1..=u.ell() {
        let sum = u.steps[i].combine(1.0, &phi.steps[i], 1.0).map_err(|_| VerifyError::Mismatch)?;
        let fu = energy_integral(f, &u.steps[i]);
        let fp = energy_integral(f, &sum);
        lhs += h * fu;
        rhs += h * fp;
        scale += h * (fu.abs() + fp.abs());
        let zero = Field::zeros(*u.lattice(), u.steps[0].components());
        slack += h * tols[i] * l1_distance(&phi.steps[i], &zero);
    }
    let (p, pa) = pairing(u, phi);
    lhs += p;
    Ok(CheckOutcome::new(
        format!("parabolic_{}", phi.name),
        lhs,
        rhs,
        slack + 1e-12 * (scale + pa),
        0.0,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualEstimate {
    pub lower_bound: f64,
    pub rhs_bound: f64,
    pub ratio: f64,
    pub pairings: Vec<f64>,
}

/// `max_φ |∬ [u]^q ∂_t φ|` over a normalized basis against
/// `[‖u‖^p_{V^p} + ‖G‖_{L^1(Ω_T)}]^{(p-1)/p}`, with
/// `‖u‖^p_{V^p} = Σ h ∫ (|Du|^p + |u|^p)`.
pub fn dual_norm_estimate(u: &Trajectory, basis: &[TestFunction], f: &dyn Integrand) -> Result<DualEstimate, VerifyError> {
    if basis.is_empty() {
        return Err(VerifyError::EmptyBasis);
    }
    let pairings: Vec<f64> = basis.iter().map(|phi| pairing(u, phi).0).collect();
    let lower_bound = pairings.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let p = u.p;
    let l = *u.lattice();
    let vp: f64 = u.steps[1..]
        .iter()
        .map(|s| u.h * (gradient_lp_integral(s, p) + lp_integral(s, p)))
        .sum();
    let g = u.horizon() * ordered_sum(l.len(), |k| f.g_at(k).abs()) * l.cell_volume();
    let rhs_bound = (vp + g).powf((p - 1.0) / p);
    Ok(DualEstimate {
        lower_bound,
        rhs_bound,
        ratio: if rhs_bound > 0.0 { lower_bound / rhs_bound } else { 0.0 },
        pairings,
    })
}

/// `(1/H) Σ_{0 < t_i <= H} h ‖u_i - u_o‖^{q+1}_{L^{q+1}(K)}` for each `H`.
pub fn initial_condition_check(u: &Trajectory, u_o: &Field, k_set: &SpatialMask, h_list: &[f64]) -> Result<Vec<f64>, VerifyError> {
    if let Some(node) = k_set.first_excess_over(u.mask(0)) {
        return Err(VerifyError::NotInside(node));
    }
    if !u_o.same_shape(&u.steps[0]) {
        return Err(VerifyError::Mismatch);
    }
    let r = u.q + 1.0;
    let l = *u.lattice();
    let devs: Vec<f64> = u
        .steps
        .iter()
        .map(|s| {
            ordered_sum(l.len(), |k| {
                if !k_set.contains(k) {
                    return 0.0;
                }
                let d: f64 = s.at(k).iter().zip(u_o.at(k)).map(|(a, b)| (a - b).powi(2)).sum();
                powr(d.sqrt(), r)
            }) * l.cell_volume()
        })
        .collect();
    Ok(h_list
        .iter()
        .map(|&big_h| {
            let s: f64 = (1..=u.ell())
                .filter(|&i| u.time(i) <= big_h * (1.0 + 1e-12))
                .map(|i| u.h * devs[i])
                .sum();
            s / big_h
        })
        .collect())
}

/// `max_i ‖u_i - u_{i-1}‖_{L^{q+1}(Ω)}`.
pub fn continuity_modulus(u: &Trajectory) -> f64 {
    let r = u.q + 1.0;
    let l = *u.lattice();
    u.steps
        .windows(2)
        .map(|w| {
            let s = ordered_sum(l.len(), |k| {
                let d: f64 = w[1].at(k).iter().zip(w[0].at(k)).map(|(a, b)| (a - b).powi(2)).sum();
                powr(d.sqrt(), r)
            }) * l.cell_volume();
            s.powf(1.0 / r)
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HardyRatio {
    pub numerator: f64,
    pub denominator: f64,
    /// `None` for the degenerate `0/0`; infinite for a constant nonzero field.
    pub ratio: Option<f64>,
}

/// `∫ (|u|/dist(x, complement))^p / ∫ |Du|^p` for `u` vanishing off `mask`.
pub fn hardy_check(field: &Field, mask: &SpatialMask, p: f64) -> Result<HardyRatio, VerifyError> {
    let l = *field.lattice();
    if mask.lattice() != &l {
        return Err(VerifyError::Mismatch);
    }
    if let Some(k) = (0..l.len()).find(|&k| !mask.contains(k) && field.at(k).iter().any(|&x| x != 0.0)) {
        return Err(VerifyError::NotVanishing(k));
    }
    let dist = distance_to_complement(mask);
    let numerator = ordered_sum(l.len(), |k| {
        if mask.contains(k) && dist[k] > 0.0 {
            powr(norm(field.at(k)) / dist[k], p)
        } else {
            0.0
        }
    }) * l.cell_volume();
    let denominator = gradient_lp_integral(field, p);
    let ratio = if denominator > 0.0 {
        Some(numerator / denominator)
    } else if numerator > 0.0 {
        Some(f64::INFINITY)
    } else {
        None
    };
    Ok(HardyRatio {
        numerator,
        denominator,
        ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{DomainFamily, Lattice};
    use crate::integrand::IntegrandSpec;
    use crate::scheme::{run, SchemeConfig};
    use crate::minimizer::SolverSettings;
    use std::sync::Arc;

    fn heat_run(nodes: usize, ell: usize) -> (Trajectory, Vec<f64>, IntegrandSpec) {
        let l = Lattice::unit(2, nodes).unwrap();
        let f = IntegrandSpec::p_dirichlet(2.0).unwrap();
        let c = SchemeConfig {
            ell,
            horizon: 0.05,
            q: 1.0,
            family: DomainFamily::cylinder(SpatialMask::full(l), 0.05).unwrap(),
            integrand: Arc::new(f.clone()),
            u_o: Field::from_fn(l, 1, |x, o| {
                o[0] = (std::f64::consts::PI * x[0]).sin() * (std::f64::consts::PI * x[1]).sin()
            }),
            u_star: Field::zeros(l, 1),
            settings: SolverSettings::default(),
            competitors: 0,
            seed: 1,
        };
        let r = run(&c).unwrap();
        let tols = r.ledger.entries.iter().map(|e| e.achieved_tol).collect();
        (r.trajectory, tols, f)
    }

    #[test]
    fn variational_inequality_for_three_maps() {
        let (u, tols, f) = heat_run(17, 8);
        let maps = [
            ComparisonMap::stationary_boundary(&u),
            ComparisonMap::stationary_mollified_initial(&u, &u.steps[0], 2.5 / 16.0).unwrap(),
            ComparisonMap::landes_of_solution(&u, 0.01).unwrap(),
        ];
        for m in &maps {
            let o = variational_residual(&u, m, &f, &tols).unwrap();
            assert!(o.pass, "{o:?}");
        }
    }

    #[test]
    fn self_comparison_vanishes() {
        let (u, tols, f) = heat_run(9, 4);
        let v = ComparisonMap::user(&u, u.steps.clone()).unwrap();
        for o in variational_residuals(&u, &v, &f, &tols).unwrap() {
            assert!(o.margin.abs() < 1e-13 * o.lhs.abs().max(1.0), "{o:?}");
        }
    }

    #[test]
    fn inadmissible_map_is_rejected() {
        let (u, tols, f) = heat_run(9, 2);
        let mut steps = u.steps.clone();
        steps[1].values_mut()[0] = 1.0;
        let v = ComparisonMap::user(&u, steps).unwrap();
        assert_eq!(
            variational_residual(&u, &v, &f, &tols),
            Err(VerifyError::Inadmissible { step: 1, node: 0 })
        );
    }

    #[test]
    fn parabolic_residual_sign_flip_and_scaling() {
        let (u, tols, f) = heat_run(17, 8);
        let basis = default_test_basis(&u, [2.0 / 16.0, 4.0 / 16.0]).unwrap();
        assert_eq!(basis.len(), 8);
        for phi in &basis {
            for s in [1.0, -1.0] {
                let o = parabolic_minimizer_residual(&u, &phi.scaled(s), &f, &tols).unwrap();
                assert!(o.pass, "{o:?}");
            }
        }
        let phi = &basis[3];
        let ratios: Vec<f64> = [1.0, 0.5, 0.25]
            .iter()
            .map(|&s| parabolic_minimizer_residual(&u, &phi.scaled(s), &f, &tols).unwrap().margin / s)
            .collect();
        assert!(ratios.iter().all(|r| r.is_finite() && r.abs() <= ratios[0].abs() + 1e-9));
        let zero = phi.scaled(0.0);
        assert_eq!(parabolic_minimizer_residual(&u, &zero, &f, &tols).unwrap().margin, 0.0);
    }

    #[test]
    fn pairing_is_linear_and_vanishes_for_stationary() {
        let (u, _, f) = heat_run(9, 4);
        let basis = default_test_basis(&u, [0.125, 0.25]).unwrap();
        let a = pairing(&u, &basis[1]).0;
        let b = pairing(&u, &basis[1].scaled(2.5)).0;
        assert!((b - 2.5 * a).abs() <= 1e-12 * b.abs().max(1e-300));
        let mut stat = u.clone();
        stat.steps = vec![u.steps[2].clone(); u.steps.len()];
        let d = dual_norm_estimate(&stat, &basis, &f).unwrap();
        assert!(d.lower_bound < 1e-15, "{}", d.lower_bound);
        assert!(matches!(dual_norm_estimate(&u, &[], &f), Err(VerifyError::EmptyBasis)));
    }

    #[test]
    fn initial_condition_sequence_decreases() {
        let (u, _, _) = heat_run(17, 16);
        let k = crate::geometry::inner_parallel_set(u.mask(0), 4.0 / 16.0).unwrap();
        let seq = initial_condition_check(&u, &u.steps[0], &k, &[0.05 / 4.0, 0.05 / 8.0, 0.05 / 16.0]).unwrap();
        assert!(seq[0] > seq[1] && seq[1] > seq[2], "{seq:?}");
        let mut stat = u.clone();
        stat.steps = vec![u.steps[0].clone(); u.steps.len()];
        assert!(initial_condition_check(&stat, &u.steps[0], &k, &[0.01]).unwrap()[0] == 0.0);
    }

    #[test]
    fn continuity_modulus_shrinks() {
        let (a, _, _) = heat_run(9, 4);
        let (b, _, _) = heat_run(9, 8);
        assert!(continuity_modulus(&b) < continuity_modulus(&a));
    }

    #[test]
    fn hardy_ratios() {
        let l = Lattice::unit(2, 33).unwrap();
        let mask = SpatialMask::ball(l, [0.5, 0.5], 0.4);
        let eta = cutoff_eta_sigma(&mask, 0.05).unwrap();
        let field = Field::from_values(l, 1, eta).unwrap();
        let r = hardy_check(&field, &mask, 2.0).unwrap();
        assert!(r.ratio.unwrap().is_finite());
        let zero = Field::zeros(l, 1);
        assert_eq!(hardy_check(&zero, &mask, 2.0).unwrap().ratio, None);
        let one = Field::constant(l, &[1.0]);
        assert!(hardy_check(&one, &mask, 2.0).is_err());
    }
}
