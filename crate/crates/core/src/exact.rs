//! Closed-form reference solutions: separable heat modes, porous-medium
//! Barenblatt profiles (through `v = [u]^q`, `m = 1/q`) and parabolic
//! p-Laplace Barenblatt profiles.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algebra::{norm, powr};
use crate::geometry::{DomainFamily, GeometryError, Lattice, SpatialMask};
use crate::grid::{ordered_sum, Field, Trajectory};

#[derive(Debug, Error, PartialEq)]
pub enum ExactError {
    #[error("{kind:?} needs {requirement}")]
    Regime { kind: ExactKind, requirement: &'static str },
    #[error("evaluation time {t} precedes the profile start")]
    BeforeStart { t: f64 },
    #[error("margin must be positive, got {0}")]
    BadMargin(f64),
    #[error("trajectory lattice does not match")]
    Mismatch,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExactKind {
    HeatSeparable,
    BarenblattPme,
    BarenblattPLaplace,
}

/// A reference solution in scheme time `t >= 0`; Barenblatt kinds evaluate
/// the self-similar profile at `t0 + t`. The scalar profile sits in
/// `component` of an `components`-vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactSolution {
    pub kind: ExactKind,
    pub q: f64,
    pub p: f64,
    pub n: usize,
    pub t0: f64,
    pub center: [f64; 2],
    pub components: usize,
    pub component: usize,
    alpha: f64,
    beta: f64,
    k: f64,
    c: f64,
}

impl ExactSolution {
    /// `e^{-n π² t} Π sin(π x_d)` on the unit cube, `q = 1`, `p = 2`.
    pub fn heat(n: usize) -> Self {
        ExactSolution {
            kind: ExactKind::HeatSeparable,
            q: 1.0,
            p: 2.0,
            n,
            t0: 0.0,
            center: [0.5, 0.5],
            components: 1,
            component: 0,
            alpha: 0.0,
            beta: 0.0,
            k: 0.0,
            c: 0.0,
        }
    }

    /// Porous-medium Barenblatt profile for `q < 1` and `p = 2`, with
    /// support radius `r0` at `t0`.
    pub fn barenblatt_pme(n: usize, q: f64, t0: f64, r0: f64, center: [f64; 2]) -> Result<Self, ExactError> {
        if !(q > 0.0 && q < 1.0) {
            return Err(ExactError::Regime {
                kind: ExactKind::BarenblattPme,
                requirement: "0 < q < 1",
            });
        }
        let m = 1.0 / q;
        let nf = n as f64;
        let alpha = nf / (nf * (m - 1.0) + 2.0);
        let beta = alpha / nf;
        let k = alpha * (m - 1.0) / (2.0 * m * nf);
        let c = k * r0 * r0 * t0.powf(-2.0 * beta);
        Ok(ExactSolution {
            kind: ExactKind::BarenblattPme,
            q,
            p: 2.0,
            n,
            t0,
            center,
            components: 1,
            component: 0,
            alpha,
            beta,
            k,
            c,
        })
    }

    /// Parabolic p-Laplace Barenblatt profile for `q = 1` and `p > 2`, with
    /// support radius `r0` at `t0`.
    pub fn barenblatt_plaplace(n: usize, p: f64, t0: f64, r0: f64, center: [f64; 2]) -> Result<Self, ExactError> {
        if !(p > 2.0) {
            return Err(ExactError::Regime {
                kind: ExactKind::BarenblattPLaplace,
                requirement: "p > 2",
            });
        }
        let nf = n as f64;
        let alpha = nf / (nf * (p - 2.0) + p);
        let beta = alpha / nf;
        let k = (p - 2.0) / p * beta.powf(1.0 / (p - 1.0));
        let c = k * (r0 * t0.powf(-beta)).powf(p / (p - 1.0));
        Ok(ExactSolution {
            kind: ExactKind::BarenblattPLaplace,
            q: 1.0,
            p,
            n,
            t0,
            center,
            components: 1,
            component: 0,
            alpha,
            beta,
            k,
            c,
        })
    }

    /// Embeds the scalar profile into component `component` of `components`.
    pub fn embedded(mut self, components: usize, component: usize) -> Self {
        self.components = components.max(1);
        self.component = component.min(self.components - 1);
        self
    }

    pub fn is_compactly_supported(&self) -> bool {
        self.kind != ExactKind::HeatSeparable
    }

    fn scalar(&self, x: [f64; 2], t: f64) -> f64 {
        match self.kind {
            ExactKind::HeatSeparable => {
                let mut v = (-(self.n as f64) * std::f64::consts::PI.powi(2) * t).exp();
                for d in 0..self.n {
                    v *= (std::f64::consts::PI * x[d]).sin();
                }
                v
            }
            ExactKind::BarenblattPme => {
                let tau = self.t0 + t;
                let r2 = self.radius_sq(x);
                let inner = self.c - self.k * r2 * tau.powf(-2.0 * self.beta);
                if inner <= 0.0 {
                    return 0.0;
                }
                let m = 1.0 / self.q;
                let v = tau.powf(-self.alpha) * inner.powf(1.0 / (m - 1.0));
                powr(v, m)
            }
            ExactKind::BarenblattPLaplace => {
                let tau = self.t0 + t;
                let p = self.p;
                let xi = self.radius_sq(x).sqrt() * tau.powf(-self.beta);
                let inner = self.c - self.k * xi.powf(p / (p - 1.0));
                if inner <= 0.0 {
                    return 0.0;
                }
                tau.powf(-self.alpha) * inner.powf((p - 1.0) / (p - 2.0))
            }
        }
    }

    fn radius_sq(&self, x: [f64; 2]) -> f64 {
        (0..self.n).map(|d| (x[d] - self.center[d]).powi(2)).sum()
    }

    pub fn evaluate(&self, x: [f64; 2], t: f64) -> Result<Vec<f64>, ExactError> {
        if self.is_compactly_supported() && !(self.t0 + t > 0.0) {
            return Err(ExactError::BeforeStart { t });
        }
        let mut out = vec![0.0; self.components];
        out[self.component] = self.scalar(x, t);
        Ok(out)
    }

    pub fn field(&self, lattice: Lattice, t: f64) -> Result<Field, ExactError> {
        if self.is_compactly_supported() && !(self.t0 + t > 0.0) {
            return Err(ExactError::BeforeStart { t });
        }
        let c = self.component;
        Ok(Field::from_fn(lattice, self.components, |x, o| o[c] = self.scalar(x, t)))
    }

    /// Radius of the support at scheme time `t`.
    pub fn support_radius(&self, t: f64) -> Result<f64, ExactError> {
        let tau = self.t0 + t;
        match self.kind {
            ExactKind::HeatSeparable => Err(ExactError::Regime {
                kind: self.kind,
                requirement: "a compactly supported profile",
            }),
            ExactKind::BarenblattPme => Ok((self.c / self.k).sqrt() * tau.powf(self.beta)),
            ExactKind::BarenblattPLaplace => {
                Ok((self.c / self.k).powf((self.p - 1.0) / self.p) * tau.powf(self.beta))
            }
        }
    }

    /// `∫ [u]^q` on the lattice, conserved by both Barenblatt flows.
    pub fn q_mass(&self, lattice: Lattice, t: f64) -> Result<f64, ExactError> {
        let f = self.field(lattice, t)?;
        Ok(ordered_sum(lattice.len(), |k| powr(norm(f.at(k)), self.q)) * lattice.cell_volume())
    }
}

/// Balls of radius `support_radius(t) + margin` at `times`.
pub fn support_hull_family(
    sol: &ExactSolution,
    lattice: Lattice,
    margin: f64,
    times: Vec<f64>,
    horizon: f64,
) -> Result<DomainFamily, ExactError> {
    if !(margin > 0.0) {
        return Err(ExactError::BadMargin(margin));
    }
    let radii = times.iter().map(|&t| sol.support_radius(t)).collect::<Result<Vec<_>, _>>()?;
    let slices = radii
        .iter()
        .map(|&r| SpatialMask::ball(lattice, sol.center, r + margin))
        .collect();
    Ok(DomainFamily::new(times, slices, horizon)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorNorms {
    /// `‖u_ℓ - u‖_{L^{q+1}(Ω_T)}` over the scheme times `t_1..t_ℓ`.
    pub space_time: f64,
    pub space_time_relative: f64,
    /// `max_i ‖u_{ℓ,i} - u(t_i)‖_{L^{q+1}(Ω)}`.
    pub sup_time: f64,
    /// `max_i ‖u_{ℓ,i} - u(t_i)‖ / ‖u(t_i)‖`.
    pub sup_time_relative: f64,
}

pub fn error_norms(traj: &Trajectory, sol: &ExactSolution) -> Result<ErrorNorms, ExactError> {
    let l = *traj.lattice();
    if traj.steps[0].components() != sol.components {
        return Err(ExactError::Mismatch);
    }
    let r = traj.q + 1.0;
    let (mut err_acc, mut ref_acc) = (0.0, 0.0);
    let (mut sup, mut sup_rel) = (0.0f64, 0.0f64);
    for (i, u) in traj.steps.iter().enumerate().skip(1) {
        let exact = sol.field(l, traj.time(i))?;
        let e = ordered_sum(l.len(), |k| {
            let d: f64 = u.at(k).iter().zip(exact.at(k)).map(|(a, b)| (a - b).powi(2)).sum();
            powr(d.sqrt(), r)
        }) * l.cell_volume();
        let n = ordered_sum(l.len(), |k| powr(norm(exact.at(k)), r)) * l.cell_volume();
        err_acc += traj.h * e;
        ref_acc += traj.h * n;
        let (e1, n1) = (e.powf(1.0 / r), n.powf(1.0 / r));
        sup = sup.max(e1);
        if n1 > 0.0 {
            sup_rel = sup_rel.max(e1 / n1);
        }
    }
    let space_time = err_acc.powf(1.0 / r);
    let reference = ref_acc.powf(1.0 / r);
    Ok(ErrorNorms {
        space_time,
        space_time_relative: if reference > 0.0 { space_time / reference } else { 0.0 },
        sup_time: sup,
        sup_time_relative: sup_rel,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heat_initial_slice() {
        let s = ExactSolution::heat(2);
        let v = s.evaluate([0.25, 0.5], 0.0).unwrap()[0];
        assert!((v - (std::f64::consts::PI * 0.25).sin()).abs() < 1e-15);
        let later = s.evaluate([0.5, 0.5], 0.1).unwrap()[0];
        assert!((later - (-2.0 * std::f64::consts::PI.powi(2) * 0.1).exp()).abs() < 1e-15);
    }

    #[test]
    fn pme_parameters_for_m_two() {
        let s = ExactSolution::barenblatt_pme(2, 0.5, 0.1, 0.35, [0.0, 0.0]).unwrap();
        assert_eq!((s.alpha, s.beta, s.k), (0.5, 0.25, 1.0 / 16.0));
        assert!((s.support_radius(0.0).unwrap() - 0.35).abs() < 1e-14);
        assert_eq!(s.evaluate([0.36, 0.0], 0.0).unwrap()[0], 0.0);
        assert!(s.evaluate([0.34, 0.0], 0.0).unwrap()[0] > 0.0);
    }

    #[test]
    fn pme_radius_matches_profile_zero_crossing() {
        let s = ExactSolution::barenblatt_pme(2, 0.5, 0.1, 0.35, [0.0, 0.0]).unwrap();
        for &t in &[0.0, 0.1, 0.3] {
            let r = s.support_radius(t).unwrap();
            // bisection on the radial profile
            let (mut lo, mut hi) = (0.0, 2.0);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if s.evaluate([mid, 0.0], t).unwrap()[0] > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            assert!((lo - r).abs() < 1e-12, "{lo} vs {r}");
        }
        assert!(s.support_radius(0.3).unwrap() > s.support_radius(0.1).unwrap());
    }

    #[test]
    fn pme_mass_is_conserved() {
        let s = ExactSolution::barenblatt_pme(2, 0.5, 0.1, 0.35, [0.0, 0.0]).unwrap();
        let l = Lattice::cube(2, 257, -1.0, 1.0).unwrap();
        let m0 = s.q_mass(l, 0.0).unwrap();
        let m1 = s.q_mass(l, 0.1).unwrap();
        assert!(((m1 - m0) / m0).abs() < 5e-3, "{m0} {m1}");
    }

    #[test]
    fn plaplace_profile_radius() {
        let s = ExactSolution::barenblatt_plaplace(2, 3.0, 0.1, 0.3, [0.0, 0.0]).unwrap();
        let r = s.support_radius(0.0).unwrap();
        assert!((r - 0.3).abs() < 1e-13);
        assert!(s.evaluate([0.29, 0.0], 0.0).unwrap()[0] > 0.0);
        assert_eq!(s.evaluate([0.31, 0.0], 0.0).unwrap()[0], 0.0);
        // mass of u is conserved for q = 1
        let l = Lattice::cube(2, 257, -1.0, 1.0).unwrap();
        let m0 = s.q_mass(l, 0.0).unwrap();
        let m1 = s.q_mass(l, 0.1).unwrap();
        assert!(((m1 - m0) / m0).abs() < 5e-3, "{m0} {m1}");
    }

    #[test]
    fn regimes_are_enforced() {
        assert!(ExactSolution::barenblatt_pme(2, 2.0, 0.1, 0.3, [0.0; 2]).is_err());
        assert!(ExactSolution::barenblatt_plaplace(2, 1.5, 0.1, 0.3, [0.0; 2]).is_err());
        assert!(ExactSolution::heat(2).support_radius(0.0).is_err());
    }

    #[test]
    fn radial_symmetry() {
        let s = ExactSolution::barenblatt_pme(2, 0.5, 0.1, 0.35, [0.0, 0.0]).unwrap();
        for &r in &[0.05, 0.2, 0.3] {
            let a = s.evaluate([r, 0.0], 0.05).unwrap()[0];
            let th: f64 = 0.7;
            let b = s.evaluate([r * th.cos(), r * th.sin()], 0.05).unwrap()[0];
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-300));
        }
    }

    #[test]
    fn hull_family_is_nondecreasing() {
        let s = ExactSolution::barenblatt_pme(2, 0.5, 0.1, 0.35, [0.0, 0.0]).unwrap();
        let l = Lattice::cube(2, 65, -1.0, 1.0).unwrap();
        let times = DomainFamily::scheme_times(16, 0.4);
        let fam = support_hull_family(&s, l, 0.1, times, 0.4).unwrap();
        assert!(fam.check_nondecreasing().unwrap());
        let one = support_hull_family(&s, l, 0.1, vec![0.0], 0.4).unwrap();
        assert_eq!(one.slices().len(), 1);
        let big = support_hull_family(&s, l, 3.0, vec![0.0], 0.4).unwrap();
        assert_eq!(big.slices()[0], SpatialMask::full(l));
        assert!(matches!(support_hull_family(&ExactSolution::heat(2), l, 0.1, vec![0.0], 0.4), Err(ExactError::Regime { .. })));
    }

    #[test]
    fn sampled_trajectory_has_zero_error() {
        let s = ExactSolution::heat(2);
        let l = Lattice::unit(2, 17).unwrap();
        let steps = (0..=4).map(|i| s.field(l, i as f64 * 0.01).unwrap()).collect();
        let traj = Trajectory {
            steps,
            h: 0.01,
            family: DomainFamily::cylinder(SpatialMask::full(l), 0.04).unwrap(),
            q: 1.0,
            p: 2.0,
            u_star: Field::zeros(l, 1),
        };
        let e = error_norms(&traj, &s).unwrap();
        assert_eq!(e.space_time, 0.0);
        assert_eq!(e.sup_time, 0.0);
    }

    #[test]
    fn embedding_in_vector_component() {
        let s = ExactSolution::heat(2).embedded(3, 1);
        let v = s.evaluate([0.5, 0.5], 0.0).unwrap();
        assert_eq!(v.len(), 3);
        assert_eq!((v[0], v[2]), (0.0, 0.0));
        assert!((v[1] - 1.0).abs() < 1e-15);
    }
}
