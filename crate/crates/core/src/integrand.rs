//! Convex integrands `f(x, u, ξ)` with p-growth, their derivatives and
//! empirical hypothesis checks.

use std::fmt::Debug;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algebra::powr;
use crate::grid::{cell_gradient, ordered_sum, Field};

#[derive(Debug, Error, PartialEq)]
pub enum IntegrandError {
    #[error("growth exponent must exceed 1, got {0}")]
    BadExponent(f64),
    #[error("derivative undefined at the origin for p = {p} < 2 without regularization")]
    NonDifferentiable { p: f64 },
    #[error("coefficient field must be positive, found {0}")]
    NonPositiveCoefficient(f64),
    #[error("field has {got} nodes, expected {expected}")]
    SizeMismatch { expected: usize, got: usize },
    #[error("declared constants violate nu <= L ({nu} > {l})")]
    InconsistentConstants { nu: f64, l: f64 },
}

/// Contract for integrands plugged into the scheme. `xi` has layout
/// `xi[c * n + d] = ∂_d u_c`.
pub trait Integrand: Send + Sync + Debug {
    fn p(&self) -> f64;
    /// Coercivity constant `ν`.
    fn nu(&self) -> f64;
    /// Growth constant `L`.
    fn big_l(&self) -> f64;
    /// Growth offset `G(x) >= 0`.
    fn g_at(&self, node: usize) -> f64;
    /// Admissible lower deviation from `ν |ξ|^p` (regularization shift).
    fn coercivity_shift(&self) -> f64 {
        0.0
    }
    fn eval(&self, node: usize, u: &[f64], xi: &[f64]) -> f64;
    fn grad_u(&self, node: usize, u: &[f64], xi: &[f64], out: &mut [f64]) -> Result<(), IntegrandError>;
    fn grad_xi(&self, node: usize, u: &[f64], xi: &[f64], out: &mut [f64]) -> Result<(), IntegrandError>;

    /// Value and both gradients in one pass.
    fn eval_with_grads(
        &self,
        node: usize,
        u: &[f64],
        xi: &[f64],
        gu: &mut [f64],
        gxi: &mut [f64],
    ) -> Result<f64, IntegrandError> {
        self.grad_u(node, u, xi, gu)?;
        self.grad_xi(node, u, xi, gxi)?;
        Ok(self.eval(node, u, xi))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IntegrandKind {
    PDirichlet,
    LowerOrder,
    Coefficient,
}

/// Built-in family
/// `a(x)/p ((|ξ|²+ε²)^{p/2} - ε^p) + λ/p ((|u|²+ε²)^{p/2} - ε^p)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegrandSpec {
    pub p: f64,
    pub lambda: f64,
    pub eps_reg: f64,
    coefficient: Option<Vec<f64>>,
    g: Option<Vec<f64>>,
    declared_nu: Option<f64>,
    a_min: f64,
    a_max: f64,
}

/// Default regularization for `p < 2`.
pub const DEFAULT_EPS_SUBQUADRATIC: f64 = 1e-8;

impl IntegrandSpec {
    pub fn p_dirichlet(p: f64) -> Result<Self, IntegrandError> {
        if !(p > 1.0) || !p.is_finite() {
            return Err(IntegrandError::BadExponent(p));
        }
        Ok(IntegrandSpec {
            p,
            lambda: 0.0,
            eps_reg: if p < 2.0 { DEFAULT_EPS_SUBQUADRATIC } else { 0.0 },
            coefficient: None,
            g: None,
            declared_nu: None,
            a_min: 1.0,
            a_max: 1.0,
        })
    }

    pub fn with_lower_order(mut self, lambda: f64) -> Self {
        self.lambda = lambda.max(0.0);
        self
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps_reg = eps.max(0.0);
        self
    }

    pub fn with_coefficient(mut self, a: Vec<f64>) -> Result<Self, IntegrandError> {
        if let Some(&bad) = a.iter().find(|&&x| !(x > 0.0)) {
            return Err(IntegrandError::NonPositiveCoefficient(bad));
        }
        self.a_min = a.iter().cloned().fold(f64::INFINITY, f64::min);
        self.a_max = a.iter().cloned().fold(0.0, f64::max);
        self.coefficient = Some(a);
        Ok(self)
    }

    pub fn with_growth_offset(mut self, g: Vec<f64>) -> Self {
        self.g = Some(g);
        self
    }

    /// Overrides the derived `ν = min(a)/p`; only the self-check sees the
    /// consequences of an inconsistent value.
    pub fn with_declared_nu(mut self, nu: f64) -> Self {
        self.declared_nu = Some(nu);
        self
    }

    pub fn kind(&self) -> IntegrandKind {
        if self.coefficient.is_some() {
            IntegrandKind::Coefficient
        } else if self.lambda > 0.0 {
            IntegrandKind::LowerOrder
        } else {
            IntegrandKind::PDirichlet
        }
    }

    /// Checks per-node fields against a lattice size.
    pub fn validate_len(&self, nodes: usize) -> Result<(), IntegrandError> {
        for f in [&self.coefficient, &self.g].into_iter().flatten() {
            if f.len() != nodes {
                return Err(IntegrandError::SizeMismatch {
                    expected: nodes,
                    got: f.len(),
                });
            }
        }
        if self.nu() > self.big_l() {
            return Err(IntegrandError::InconsistentConstants {
                nu: self.nu(),
                l: self.big_l(),
            });
        }
        Ok(())
    }

    #[inline]
    fn a(&self, node: usize) -> f64 {
        self.coefficient.as_ref().map_or(1.0, |a| a[node])
    }

    /// `((s² + ε²)^{p/2} - ε^p) / p` and the factor `(s² + ε²)^{(p-2)/2}`.
    #[inline]
    fn radial(&self, s2: f64) -> (f64, Option<f64>) {
        let p = self.p;
        let e2 = self.eps_reg * self.eps_reg;
        let t = s2 + e2;
        if p == 2.0 {
            return (0.5 * s2, Some(1.0));
        }
        let val = (powr(t, 0.5 * p) - powr(e2, 0.5 * p)) / p;
        let factor = if t == 0.0 {
            if p > 2.0 {
                Some(0.0)
            } else {
                None
            }
        } else {
            Some(powr(t, 0.5 * p - 1.0))
        };
        (val, factor)
    }
}

impl Integrand for IntegrandSpec {
    fn p(&self) -> f64 {
        self.p
    }

    fn nu(&self) -> f64 {
        self.declared_nu.unwrap_or(self.a_min / self.p)
    }

    fn big_l(&self) -> f64 {
        self.a_max.max(self.lambda) * 2f64.powf((0.5 * self.p - 1.0).max(0.0)) / self.p
    }

    fn g_at(&self, node: usize) -> f64 {
        self.g
            .as_ref()
            .map_or_else(|| powr(self.eps_reg, self.p), |g| g[node])
    }

    fn coercivity_shift(&self) -> f64 {
        if self.p < 2.0 {
            self.a_max * powr(self.eps_reg, self.p) / self.p
        } else {
            0.0
        }
    }

    fn eval(&self, node: usize, u: &[f64], xi: &[f64]) -> f64 {
        let s2: f64 = xi.iter().map(|x| x * x).sum();
        let mut v = self.a(node) * self.radial(s2).0;
        if self.lambda > 0.0 {
            let r2: f64 = u.iter().map(|x| x * x).sum();
            v += self.lambda * self.radial(r2).0;
        }
        v
    }

    fn grad_u(&self, _node: usize, u: &[f64], _xi: &[f64], out: &mut [f64]) -> Result<(), IntegrandError> {
        if self.lambda == 0.0 {
            out.iter_mut().for_each(|o| *o = 0.0);
            return Ok(());
        }
        let r2: f64 = u.iter().map(|x| x * x).sum();
        let f = self
            .radial(r2)
            .1
            .ok_or(IntegrandError::NonDifferentiable { p: self.p })?;
        for (o, x) in out.iter_mut().zip(u) {
            *o = self.lambda * f * x;
        }
        Ok(())
    }

    fn grad_xi(&self, node: usize, _u: &[f64], xi: &[f64], out: &mut [f64]) -> Result<(), IntegrandError> {
        let s2: f64 = xi.iter().map(|x| x * x).sum();
        let f = self
            .radial(s2)
            .1
            .ok_or(IntegrandError::NonDifferentiable { p: self.p })?;
        let a = self.a(node);
        for (o, x) in out.iter_mut().zip(xi) {
            *o = a * f * x;
        }
        Ok(())
    }

    fn eval_with_grads(
        &self,
        node: usize,
        u: &[f64],
        xi: &[f64],
        gu: &mut [f64],
        gxi: &mut [f64],
    ) -> Result<f64, IntegrandError> {
        let s2: f64 = xi.iter().map(|x| x * x).sum();
        let (val, f) = self.radial(s2);
        let f = f.ok_or(IntegrandError::NonDifferentiable { p: self.p })?;
        let a = self.a(node);
        for (o, x) in gxi.iter_mut().zip(xi) {
            *o = a * f * x;
        }
        let mut v = a * val;
        if self.lambda > 0.0 {
            let r2: f64 = u.iter().map(|x| x * x).sum();
            let (val_u, fu) = self.radial(r2);
            let fu = fu.ok_or(IntegrandError::NonDifferentiable { p: self.p })?;
            for (o, x) in gu.iter_mut().zip(u) {
                *o = self.lambda * fu * x;
            }
            v += self.lambda * val_u;
        } else {
            gu.iter_mut().for_each(|o| *o = 0.0);
        }
        Ok(v)
    }
}

/// `∫ f(x, u, Du)`: cells use the forward gradient, nodes without a full
/// stencil contribute `f(x, u, 0)`.
pub fn energy_integral(integrand: &dyn Integrand, field: &Field) -> f64 {
    let l = *field.lattice();
    let w = field.components() * l.n;
    ordered_sum(l.len(), |k| {
        let mut xi = [0.0; 16];
        if l.has_cell(k) {
            cell_gradient(field, k, &mut xi[..w]);
        }
        integrand.eval(k, field.at(k), &xi[..w])
    }) * l.cell_volume()
}

/// `f` at each node (cell value where a cell exists).
pub fn energy_density(integrand: &dyn Integrand, field: &Field) -> Vec<f64> {
    let l = *field.lattice();
    let w = field.components() * l.n;
    (0..l.len())
        .map(|k| {
            let mut xi = [0.0; 16];
            if l.has_cell(k) {
                cell_gradient(field, k, &mut xi[..w]);
            }
            integrand.eval(k, field.at(k), &xi[..w])
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisOutcome {
    pub name: String,
    pub samples: usize,
    pub violations: usize,
    /// Sample `(node, u, ξ)` of the first violation.
    pub witness: Option<(usize, Vec<f64>, Vec<f64>)>,
}

impl HypothesisOutcome {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfCheckReport {
    pub convexity: HypothesisOutcome,
    pub coercivity: HypothesisOutcome,
    pub growth: HypothesisOutcome,
    pub lipschitz: HypothesisOutcome,
    /// Empirical constant of the local Lipschitz bound.
    pub lipschitz_c_hat: f64,
    pub coercivity_shift: f64,
}

impl SelfCheckReport {
    pub fn passed(&self) -> bool {
        self.convexity.passed() && self.coercivity.passed() && self.growth.passed() && self.lipschitz.passed()
    }
}

fn random_point(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let mag = 10f64.powf(rng.gen_range(-3.0..3.0));
    let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let r = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.into_iter().map(|x| x * mag / r).collect()
}

fn outcome(name: &str, samples: usize) -> HypothesisOutcome {
    HypothesisOutcome {
        name: name.into(),
        samples,
        violations: 0,
        witness: None,
    }
}

fn record(o: &mut HypothesisOutcome, node: usize, u: &[f64], xi: &[f64]) {
    o.violations += 1;
    if o.witness.is_none() {
        o.witness = Some((node, u.to_vec(), xi.to_vec()));
    }
}

/// Samples convexity, coercivity, p-growth and the local Lipschitz bound.
/// The Lipschitz constant is fitted on one half of the sample and checked
/// on the other.
pub fn self_check(
    integrand: &dyn Integrand,
    nodes: usize,
    components: usize,
    n: usize,
    samples: usize,
    seed: u64,
) -> SelfCheckReport {
    let p = integrand.p();
    let (nu, big_l) = (integrand.nu(), integrand.big_l());
    let shift = integrand.coercivity_shift();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dxi = components * n;
    let mut convexity = outcome("convexity", samples);
    let mut coercivity = outcome("coercivity", samples);
    let mut growth = outcome("growth", samples);
    let mut lipschitz = outcome("lipschitz", samples / 2);
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut lip_ratios = Vec::with_capacity(samples);
    for _ in 0..samples {
        let node = rng.gen_range(0..nodes);
        let (u1, x1) = (random_point(&mut rng, components), random_point(&mut rng, dxi));
        let (u2, x2) = if rng.gen_bool(0.5) {
            (random_point(&mut rng, components), random_point(&mut rng, dxi))
        } else {
            let s = 10f64.powf(rng.gen_range(-4.0..0.0));
            let du = random_point(&mut rng, components);
            let dx = random_point(&mut rng, dxi);
            (
                u1.iter().zip(&du).map(|(a, b)| a + s * b).collect::<Vec<_>>(),
                x1.iter().zip(&dx).map(|(a, b)| a + s * b).collect::<Vec<_>>(),
            )
        };
        let f1 = integrand.eval(node, &u1, &x1);
        let f2 = integrand.eval(node, &u2, &x2);
        let um: Vec<f64> = u1.iter().zip(&u2).map(|(a, b)| 0.5 * (a + b)).collect();
        let xm: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| 0.5 * (a + b)).collect();
        let fm = integrand.eval(node, &um, &xm);
        if fm > 0.5 * (f1 + f2) + 1e-12 * (f1.abs() + f2.abs()) {
            record(&mut convexity, node, &um, &xm);
        }
        let s1 = norm(&x1);
        if nu * powr(s1, p) - shift > f1 * (1.0 + 1e-12) + 1e-300 {
            record(&mut coercivity, node, &u1, &x1);
        }
        let g = integrand.g_at(node);
        if f1 > big_l * (powr(s1, p) + powr(norm(&u1), p) + g) * (1.0 + 1e-12) {
            record(&mut growth, node, &u1, &x1);
        }
        let scale = powr(norm(&x1) + norm(&x2) + norm(&u1) + norm(&u2), p - 1.0)
            + powr(g, (p - 1.0) / p);
        let dist = norm(&u1.iter().zip(&u2).map(|(a, b)| a - b).collect::<Vec<_>>())
            + norm(&x1.iter().zip(&x2).map(|(a, b)| a - b).collect::<Vec<_>>());
        let denom = scale * dist;
        let ratio = if denom > 0.0 { (f1 - f2).abs() / denom } else { 0.0 };
        lip_ratios.push((ratio, node, u1, x1));
    }
    let half = lip_ratios.len() / 2;
    let c_hat = 1.1 * lip_ratios[..half].iter().map(|r| r.0).fold(0.0, f64::max);
    for (ratio, node, u, x) in &lip_ratios[half..] {
        if *ratio > c_hat {
            record(&mut lipschitz, *node, u, x);
        }
    }
    SelfCheckReport {
        convexity,
        coercivity,
        growth,
        lipschitz,
        lipschitz_c_hat: c_hat,
        coercivity_shift: shift,
    }
}

/// `sup { f(x, u, ξ) : |u| <= M, |ξ| <= M }` over nodes, radii on a uniform
/// grid up to `M` and axis-aligned plus diagonal directions.
pub fn growth_envelope(integrand: &dyn Integrand, nodes: usize, components: usize, n: usize, m: f64) -> f64 {
    let dxi = components * n;
    let dirs = |dim: usize| -> Vec<Vec<f64>> {
        let mut d: Vec<Vec<f64>> = (0..dim)
            .map(|k| {
                let mut e = vec![0.0; dim];
                e[k] = 1.0;
                e
            })
            .collect();
        d.push(vec![1.0 / (dim as f64).sqrt(); dim]);
        d
    };
    let (du, dx) = (dirs(components), dirs(dxi));
    let radii: Vec<f64> = (0..=16).map(|k| m * k as f64 / 16.0).collect();
    let mut best = 0.0f64;
    for node in 0..nodes {
        for ru in &radii {
            for eu in &du {
                let u: Vec<f64> = eu.iter().map(|x| x * ru).collect();
                for rx in &radii {
                    for ex in &dx {
                        let xi: Vec<f64> = ex.iter().map(|x| x * rx).collect();
                        best = best.max(integrand.eval(node, &u, &xi));
                    }
                }
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn quadratic_case_values() {
        let f = IntegrandSpec::p_dirichlet(2.0).unwrap();
        assert_eq!(f.eval(0, &[3.0], &[1.0, 2.0]), 2.5);
        let mut g = [0.0; 2];
        f.grad_xi(0, &[3.0], &[1.0, 2.0], &mut g).unwrap();
        assert_eq!(g, [1.0, 2.0]);
        assert_eq!(f.nu(), 0.5);
    }

    #[test]
    fn p4_without_regularization_passes_checks() {
        let f = IntegrandSpec::p_dirichlet(4.0).unwrap();
        assert_eq!(f.eps_reg, 0.0);
        let rep = self_check(&f, 1, 1, 2, 1000, 1);
        assert!(rep.convexity.passed() && rep.coercivity.passed(), "{rep:?}");
        assert!(rep.growth.passed() && rep.lipschitz.passed(), "{rep:?}");
        assert_eq!(f.nu(), 0.25);
    }

    #[test]
    fn subquadratic_origin_needs_regularization() {
        let f = IntegrandSpec::p_dirichlet(1.5).unwrap().with_eps(0.0);
        let mut g = [0.0; 2];
        assert_eq!(
            f.grad_xi(0, &[0.0], &[0.0, 0.0], &mut g),
            Err(IntegrandError::NonDifferentiable { p: 1.5 })
        );
        let r = IntegrandSpec::p_dirichlet(1.5).unwrap();
        assert_eq!(r.eps_reg, DEFAULT_EPS_SUBQUADRATIC);
        assert!(r.grad_xi(0, &[0.0], &[0.0, 0.0], &mut g).is_ok());
        let rep = self_check(&r, 1, 1, 2, 1000, 2);
        assert!(rep.passed(), "{rep:?}");
        assert!(rep.coercivity_shift > 0.0);
    }

    #[test]
    fn coefficient_below_declared_nu_is_caught() {
        let f = IntegrandSpec::p_dirichlet(2.0)
            .unwrap()
            .with_coefficient(vec![1.0, 0.2, 1.0])
            .unwrap()
            .with_declared_nu(0.4);
        let rep = self_check(&f, 3, 1, 2, 2000, 3);
        assert!(!rep.coercivity.passed());
        let (node, _, _) = rep.coercivity.witness.clone().unwrap();
        assert_eq!(node, 1);
    }

    #[test]
    fn lower_order_gradient() {
        let f = IntegrandSpec::p_dirichlet(3.0).unwrap().with_lower_order(2.0);
        let mut g = [0.0; 1];
        f.grad_u(0, &[-2.0], &[0.0], &mut g).unwrap();
        assert!((g[0] + 8.0).abs() < 1e-12);
    }

    #[test]
    fn growth_envelope_quadratic() {
        let f = IntegrandSpec::p_dirichlet(2.0).unwrap();
        assert!((growth_envelope(&f, 1, 1, 2, 1.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let f = IntegrandSpec::p_dirichlet(3.0).unwrap().with_lower_order(0.7);
        let u = [0.4, -1.1];
        let xi = [0.3, -0.2, 1.5, 0.9];
        let mut gu = [0.0; 2];
        let mut gx = [0.0; 4];
        f.eval_with_grads(0, &u, &xi, &mut gu, &mut gx).unwrap();
        let h = 1e-6;
        for k in 0..4 {
            let mut a = xi;
            let mut b = xi;
            a[k] += h;
            b[k] -= h;
            let fd = (f.eval(0, &u, &a) - f.eval(0, &u, &b)) / (2.0 * h);
            assert!((fd - gx[k]).abs() < 1e-6);
        }
        for k in 0..2 {
            let mut a = u;
            let mut b = u;
            a[k] += h;
            b[k] -= h;
            let fd = (f.eval(0, &a, &xi) - f.eval(0, &b, &xi)) / (2.0 * h);
            assert!((fd - gu[k]).abs() < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn envelope_monotone_in_m(m1 in 0.0f64..5.0, m2 in 0.0f64..5.0, p in 1.2f64..4.0) {
            let f = IntegrandSpec::p_dirichlet(p).unwrap().with_lower_order(0.5);
            let (lo, hi) = if m1 < m2 { (m1, m2) } else { (m2, m1) };
            prop_assert!(growth_envelope(&f, 1, 1, 2, lo) <= growth_envelope(&f, 1, 1, 2, hi));
        }

        #[test]
        fn midpoint_convex(
            a in prop::collection::vec(-10.0f64..10.0, 3),
            b in prop::collection::vec(-10.0f64..10.0, 3),
            p in 1.1f64..5.0,
        ) {
            let f = IntegrandSpec::p_dirichlet(p).unwrap().with_lower_order(1.0);
            let m: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
            let fa = f.eval(0, &a[..1], &a[1..]);
            let fb = f.eval(0, &b[..1], &b[1..]);
            let fm = f.eval(0, &m[..1], &m[1..]);
            prop_assert!(fm <= 0.5 * (fa + fb) + 1e-12 * (fa + fb).abs());
        }
    }
}
