//! Power maps, the boundary term `b[u, v]` and the algebraic inequalities
//! relating them, with empirically certified constants.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AlgebraError {
    #[error("exponent must be positive, got {0}")]
    NonPositiveExponent(f64),
    #[error("{lemma} requires exponent > 1, got {alpha}")]
    ExponentTooSmall { lemma: LemmaId, alpha: f64 },
    #[error("vector lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("{lemma}: ratio unbounded over samples (worst {ratio:e} at sample {index})")]
    Unbounded {
        lemma: LemmaId,
        ratio: f64,
        index: usize,
    },
    #[error("{lemma}: explicit constant {c} violated, sup ratio {sup}")]
    ExplicitConstantViolated { lemma: LemmaId, c: f64, sup: f64 },
    #[error("sample count must be positive")]
    NoSamples,
}

/// `s^alpha` for `s >= 0`, with exact fast paths for common exponents.
#[inline]
pub fn powr(s: f64, alpha: f64) -> f64 {
    if alpha == 1.0 {
        s
    } else if alpha == 2.0 {
        s * s
    } else if alpha == 0.5 {
        s.sqrt()
    } else if alpha == 1.5 {
        s * s.sqrt()
    } else if alpha == 3.0 {
        s * s * s
    } else if alpha == 0.75 {
        (s * s.sqrt()).sqrt()
    } else if s == 0.0 {
        0.0
    } else {
        s.powf(alpha)
    }
}

#[inline]
pub fn norm(u: &[f64]) -> f64 {
    u.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[inline]
fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

/// `[u]^alpha = |u|^(alpha-1) u`, with `[0]^alpha = 0`, written into `out`.
pub fn power_into(u: &[f64], alpha: f64, out: &mut [f64]) {
    let r = norm(u);
    if r == 0.0 {
        out.iter_mut().for_each(|o| *o = 0.0);
        return;
    }
    let s = if alpha == 1.0 { 1.0 } else { powr(r, alpha - 1.0) };
    for (o, x) in out.iter_mut().zip(u) {
        *o = s * x;
    }
}

pub fn power(u: &[f64], alpha: f64) -> Result<Vec<f64>, AlgebraError> {
    if !(alpha > 0.0) {
        return Err(AlgebraError::NonPositiveExponent(alpha));
    }
    let mut out = vec![0.0; u.len()];
    power_into(u, alpha, &mut out);
    Ok(out)
}

/// Scale factor `|u|^(alpha-1)` of the power map, zero at the origin.
#[inline]
pub fn power_scale(r: f64, alpha: f64) -> f64 {
    if r == 0.0 {
        0.0
    } else if alpha == 1.0 {
        1.0
    } else {
        powr(r, alpha - 1.0)
    }
}

/// `sum_{k>=2} binom(a, k) y^k`, for `|y| < 0.1`.
fn binomial_tail(a: f64, y: f64) -> f64 {
    let mut coeff = a * (a - 1.0) / 2.0;
    let mut yk = y * y;
    let mut sum = 0.0;
    for k in 2..40 {
        let term = coeff * yk;
        sum += term;
        if term.abs() <= 1e-18 * sum.abs() {
            break;
        }
        coeff *= (a - k as f64) / (k as f64 + 1.0);
        yk *= y;
    }
    sum
}

/// Boundary term `b[u, v] = |v|^(q+1)/(q+1) + q/(q+1) |u|^(q+1) - [u]^q . v`.
///
/// Evaluated without cancellation for nearby arguments; the result is
/// clamped at zero.
pub fn b_term(u: &[f64], v: &[f64], q: f64) -> f64 {
    debug_assert_eq!(u.len(), v.len());
    if q == 1.0 {
        let d2: f64 = u.iter().zip(v).map(|(a, b)| (b - a) * (b - a)).sum();
        return 0.5 * d2;
    }
    let r2 = dot(u, u);
    let qp1 = q + 1.0;
    if r2 == 0.0 {
        return powr(norm(v), qp1) / qp1;
    }
    let mut dd = 0.0;
    let mut ud = 0.0;
    for (a, b) in u.iter().zip(v) {
        let d = b - a;
        dd += d * d;
        ud += a * d;
    }
    let y = (2.0 * ud + dd) / r2;
    let value = if y.abs() <= 0.5 {
        let a = 0.5 * qp1;
        let tail = if y.abs() < 0.1 {
            binomial_tail(a, y) / qp1
        } else {
            (a * y.ln_1p()).exp_m1() / qp1 - 0.5 * y
        };
        powr(r2.sqrt(), qp1) * (tail + 0.5 * dd / r2)
    } else {
        let r = r2.sqrt();
        powr(norm(v), qp1) / qp1 + q / qp1 * powr(r, qp1) - power_scale(r, q) * dot(u, v)
    };
    value.max(0.0)
}

/// `|[v]^((q+1)/2) - [u]^((q+1)/2)|^2`.
pub fn dissipation_term(u: &[f64], v: &[f64], q: f64) -> f64 {
    let a = 0.5 * (q + 1.0);
    let su = power_scale(norm(u), a);
    let sv = power_scale(norm(v), a);
    u.iter()
        .zip(v)
        .map(|(x, y)| {
            let d = sv * y - su * x;
            d * d
        })
        .sum()
}

/// The algebraic inequalities used by the scheme analysis. Each reads
/// `lhs <= c * rhs`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LemmaId {
    /// `|[v]^a - [u]^a| <= c (|u|+|v|)^(a-1) |v-u|`
    PowerDiffUpper,
    /// `(|u|+|v|)^(a-1) |v-u| <= c |[v]^a - [u]^a|`
    PowerDiffLower,
    /// `|v-u|^a <= c |[v]^a - [u]^a|`, `a > 1`
    DifferencePower,
    /// `|u-v|^(q+1) <= c (|u|^((q+1)/2) + |v|^((q+1)/2)) |[u]^((q+1)/2) - [v]^((q+1)/2)|`
    HalfPowerProduct,
    /// `|[u]^((q+1)/2) - [v]^((q+1)/2)|^2 <= c b[u,v]`
    BoundaryLower,
    /// `b[u,v] <= c ([v]^q - [u]^q).(v-u)`
    BoundaryUpper,
    /// `|v|^(q+1)/(q+1) <= 2 b[u,v] + 2^(2+1/q) q/(q+1) |u|^(q+1)`, explicit.
    BoundaryMass,
}

impl LemmaId {
    pub const ALL: [LemmaId; 7] = [
        LemmaId::PowerDiffUpper,
        LemmaId::PowerDiffLower,
        LemmaId::DifferencePower,
        LemmaId::HalfPowerProduct,
        LemmaId::BoundaryLower,
        LemmaId::BoundaryUpper,
        LemmaId::BoundaryMass,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LemmaId::PowerDiffUpper => "power_diff_upper",
            LemmaId::PowerDiffLower => "power_diff_lower",
            LemmaId::DifferencePower => "difference_power",
            LemmaId::HalfPowerProduct => "half_power_product",
            LemmaId::BoundaryLower => "boundary_lower",
            LemmaId::BoundaryUpper => "boundary_upper",
            LemmaId::BoundaryMass => "boundary_mass",
        }
    }

    pub fn parse(s: &str) -> Option<LemmaId> {
        LemmaId::ALL.iter().copied().find(|l| l.name() == s)
    }

    /// Exponent fed to this inequality when the scheme runs with `q`.
    pub fn parameter_for_q(self, q: f64) -> f64 {
        match self {
            LemmaId::PowerDiffUpper | LemmaId::PowerDiffLower | LemmaId::DifferencePower => q + 1.0,
            _ => q,
        }
    }

    fn validate(self, param: f64) -> Result<(), AlgebraError> {
        if !(param > 0.0) || !param.is_finite() {
            return Err(AlgebraError::NonPositiveExponent(param));
        }
        if self == LemmaId::DifferencePower && param <= 1.0 {
            return Err(AlgebraError::ExponentTooSmall {
                lemma: self,
                alpha: param,
            });
        }
        Ok(())
    }

    /// Constant known in closed form, if any.
    pub fn exact_constant(self, param: f64) -> Option<f64> {
        match self {
            LemmaId::BoundaryLower if param == 1.0 => Some(2.0),
            LemmaId::BoundaryUpper | LemmaId::BoundaryMass => Some(1.0),
            _ => None,
        }
    }
}

impl fmt::Display for LemmaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Coefficients `(2, 2^(2+1/q) q/(q+1))` of the explicit mass inequality.
pub fn boundary_mass_coefficients(q: f64) -> (f64, f64) {
    (2.0, 2f64.powf(2.0 + 1.0 / q) * q / (q + 1.0))
}

/// `(lhs, rhs)` with the inequality reading `lhs <= c * rhs`.
pub fn lemma_sides(id: LemmaId, param: f64, u: &[f64], v: &[f64]) -> (f64, f64) {
    let a = param;
    match id {
        LemmaId::PowerDiffUpper | LemmaId::PowerDiffLower => {
            let su = power_scale(norm(u), a);
            let sv = power_scale(norm(v), a);
            let pd: f64 = u
                .iter()
                .zip(v)
                .map(|(x, y)| (sv * y - su * x).powi(2))
                .sum::<f64>()
                .sqrt();
            let s = norm(u) + norm(v);
            let d: f64 = u.iter().zip(v).map(|(x, y)| (y - x).powi(2)).sum::<f64>().sqrt();
            let mid = if s == 0.0 { 0.0 } else { powr(s, a - 1.0) * d };
            if id == LemmaId::PowerDiffUpper {
                (pd, mid)
            } else {
                (mid, pd)
            }
        }
        LemmaId::DifferencePower => {
            let su = power_scale(norm(u), a);
            let sv = power_scale(norm(v), a);
            let pd: f64 = u
                .iter()
                .zip(v)
                .map(|(x, y)| (sv * y - su * x).powi(2))
                .sum::<f64>()
                .sqrt();
            let d: f64 = u.iter().zip(v).map(|(x, y)| (y - x).powi(2)).sum::<f64>().sqrt();
            (powr(d, a), pd)
        }
        LemmaId::HalfPowerProduct => {
            let q = param;
            let h = 0.5 * (q + 1.0);
            let d: f64 = u.iter().zip(v).map(|(x, y)| (y - x).powi(2)).sum::<f64>().sqrt();
            let rhs = (powr(norm(u), h) + powr(norm(v), h)) * dissipation_term(u, v, q).sqrt();
            (powr(d, q + 1.0), rhs)
        }
        LemmaId::BoundaryLower => (dissipation_term(u, v, param), b_term(u, v, param)),
        LemmaId::BoundaryUpper => {
            let q = param;
            let su = power_scale(norm(u), q);
            let sv = power_scale(norm(v), q);
            let rhs: f64 = u.iter().zip(v).map(|(x, y)| (sv * y - su * x) * (y - x)).sum();
            (b_term(u, v, q), rhs)
        }
        LemmaId::BoundaryMass => {
            let q = param;
            let (c1, c2) = boundary_mass_coefficients(q);
            let lhs = powr(norm(v), q + 1.0) / (q + 1.0);
            (lhs, c1 * b_term(u, v, q) + c2 * powr(norm(u), q + 1.0))
        }
    }
}

/// Deterministic sample `(u, v)` number `index` for `seed`.
///
/// Magnitudes are log-uniform over `[1e-3, 1e3]`; the stream mixes generic
/// pairs with equal, antipodal, axis-aligned, nearby and zero pairs.
pub fn sample_pair(seed: u64, index: u64, components: usize) -> (Vec<f64>, Vec<f64>) {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&index.to_le_bytes());
    key[16..24].copy_from_slice(&(components as u64).to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    let mag = |rng: &mut ChaCha8Rng| 10f64.powf(rng.gen_range(-3.0..3.0));
    let dir = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        loop {
            let d: Vec<f64> = (0..components).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let r = norm(&d);
            if r > 1e-3 && r <= 1.0 {
                return d.into_iter().map(|x| x / r).collect();
            }
        }
    };
    let scaled = |d: &[f64], s: f64| d.iter().map(|x| x * s).collect::<Vec<f64>>();
    let u_dir = dir(&mut rng);
    let u = scaled(&u_dir, mag(&mut rng));
    match index % 50 {
        0 => (vec![0.0; components], scaled(&dir(&mut rng), mag(&mut rng))),
        25 => (u, vec![0.0; components]),
        k => match k % 10 {
            6 => (u.clone(), u),
            7 => {
                let s = if rng.gen_bool(0.5) { 1.0 } else { mag(&mut rng) };
                let v = scaled(&u, -s);
                (u, v)
            }
            8 => {
                let axis = rng.gen_range(0..components);
                let mut a = vec![0.0; components];
                let mut b = vec![0.0; components];
                a[axis] = mag(&mut rng) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                b[axis] = mag(&mut rng) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                (a, b)
            }
            9 => {
                let rel = 10f64.powf(rng.gen_range(-6.0..0.0));
                let delta = scaled(&dir(&mut rng), norm(&u) * rel);
                let v = u.iter().zip(&delta).map(|(a, b)| a + b).collect();
                (u, v)
            }
            _ => {
                let v = scaled(&dir(&mut rng), mag(&mut rng));
                (u, v)
            }
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaConstant {
    pub lemma: LemmaId,
    pub param: f64,
    pub components: usize,
    pub c_hat: f64,
    pub sup_ratio: f64,
    pub samples: usize,
    pub seed: u64,
    /// True when `c_hat` is a closed-form constant rather than sampled.
    pub exact: bool,
}

pub const SAFETY_FACTOR: f64 = 1.1;

const UNBOUNDED_RATIO: f64 = 1e12;

/// Largest `lhs / rhs` over the sample stream, with its index. Pairs with
/// `lhs == rhs == 0` are skipped.
fn sup_ratio(
    id: LemmaId,
    param: f64,
    components: usize,
    samples: usize,
    seed: u64,
) -> (f64, usize) {
    (0..samples)
        .into_par_iter()
        .map(|i| {
            let (u, v) = sample_pair(seed, i as u64, components);
            let (lhs, rhs) = lemma_sides(id, param, &u, &v);
            let r = if lhs == 0.0 {
                0.0
            } else if rhs == 0.0 || !lhs.is_finite() || !rhs.is_finite() {
                f64::INFINITY
            } else {
                lhs / rhs
            };
            (r, i)
        })
        .reduce(
            || (0.0, usize::MAX),
            |a, b| {
                if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) {
                    b
                } else {
                    a
                }
            },
        )
}

/// Empirical constant: `1.1 * sup(lhs/rhs)` over a deterministic sample,
/// or the closed-form value where one is known (after confirming it).
pub fn derive_lemma_constant(
    id: LemmaId,
    param: f64,
    components: usize,
    samples: usize,
    seed: u64,
) -> Result<LemmaConstant, AlgebraError> {
    id.validate(param)?;
    if samples == 0 {
        return Err(AlgebraError::NoSamples);
    }
    let (sup, index) = sup_ratio(id, param, components, samples, seed);
    if !(sup < UNBOUNDED_RATIO) {
        return Err(AlgebraError::Unbounded {
            lemma: id,
            ratio: sup,
            index,
        });
    }
    let (c_hat, exact) = match id.exact_constant(param) {
        Some(c) => {
            if sup > c * (1.0 + 1e-12) {
                return Err(AlgebraError::ExplicitConstantViolated { lemma: id, c, sup });
            }
            (c, true)
        }
        None => (SAFETY_FACTOR * sup, false),
    };
    Ok(LemmaConstant {
        lemma: id,
        param,
        components,
        c_hat,
        sup_ratio: sup,
        samples,
        seed,
        exact,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaCheck {
    pub lemma: LemmaId,
    pub param: f64,
    pub c: f64,
    pub samples: usize,
    pub violations: usize,
    /// Largest `lhs / (c rhs)`; at most one when there are no violations.
    pub worst_ratio: f64,
    pub worst_index: usize,
}

impl LemmaCheck {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Counts samples with `lhs > c * rhs` beyond a relative rounding allowance
/// of `1e-12`.
pub fn check_lemma_inequalities(
    id: LemmaId,
    param: f64,
    c: f64,
    components: usize,
    samples: usize,
    seed: u64,
) -> Result<LemmaCheck, AlgebraError> {
    id.validate(param)?;
    let results: Vec<(bool, f64)> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let (u, v) = sample_pair(seed, i as u64, components);
            let (lhs, rhs) = lemma_sides(id, param, &u, &v);
            let bound = c * rhs;
            let violated = !(lhs <= bound * (1.0 + 1e-12));
            let ratio = if lhs == 0.0 {
                0.0
            } else if bound == 0.0 {
                f64::INFINITY
            } else {
                lhs / bound
            };
            (violated, ratio)
        })
        .collect();
    let violations = results.iter().filter(|r| r.0).count();
    let (worst_index, worst_ratio) = results
        .iter()
        .enumerate()
        .fold((0, 0.0), |acc, (i, r)| if r.1 > acc.1 { (i, r.1) } else { acc });
    Ok(LemmaCheck {
        lemma: id,
        param,
        c,
        samples,
        violations,
        worst_ratio,
        worst_index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b_direct(u: &[f64], v: &[f64], q: f64) -> f64 {
        let ru = norm(u);
        norm(v).powf(q + 1.0) / (q + 1.0) + q / (q + 1.0) * ru.powf(q + 1.0)
            - power_scale(ru, q) * dot(u, v)
    }

    #[test]
    fn power_examples() {
        assert!((power(&[-8.0], 1.0 / 3.0).unwrap()[0] + 2.0).abs() < 1e-15);
        let p = power(&[3.0, 4.0], 2.0).unwrap();
        assert!((p[0] - 15.0).abs() < 1e-12 && (p[1] - 20.0).abs() < 1e-12);
        assert_eq!(power(&[0.0, 0.0], 0.5).unwrap(), vec![0.0, 0.0]);
        assert_eq!(
            power(&[1.0], 0.0),
            Err(AlgebraError::NonPositiveExponent(0.0))
        );
    }

    #[test]
    fn b_term_examples() {
        assert!((b_term(&[1.0], &[1.0], 2.0)).abs() < 1e-15);
        assert!((b_term(&[0.0], &[2.0], 1.0) - 2.0).abs() < 1e-15);
        // q = 1 collapses to half the squared distance
        assert_eq!(b_term(&[1.0, -2.0], &[4.0, 2.0], 1.0), 12.5);
    }

    #[test]
    fn b_term_matches_direct_formula_away_from_cancellation() {
        for &q in &[0.3, 0.5, 2.0, 5.0] {
            for i in 0..2000 {
                let (u, v) = sample_pair(7, i, 2);
                let d = norm(&u.iter().zip(&v).map(|(a, b)| a - b).collect::<Vec<_>>());
                if d < 1e-2 * (norm(&u) + norm(&v)) {
                    continue;
                }
                let a = b_term(&u, &v, q);
                let e = b_direct(&u, &v, q);
                let scale = norm(&u).powf(q + 1.0) + norm(&v).powf(q + 1.0);
                assert!((a - e).abs() <= 1e-10 * scale, "q={q} u={u:?} v={v:?} {a} {e}");
            }
        }
    }

    #[test]
    fn b_term_near_diagonal_matches_second_order_expansion() {
        // b[u, u+d] ~ q |u|^(q-1) d^2 / 2 for scalar u > 0
        for &q in &[0.3, 0.5, 2.0, 5.0] {
            let u = 1.7f64;
            let d = 1e-7;
            let expect = q * u.powf(q - 1.0) * d * d / 2.0;
            let got = b_term(&[u], &[u + d], q);
            assert!((got / expect - 1.0).abs() < 1e-5, "q={q} {got} {expect}");
        }
    }

    #[test]
    fn dissipation_term_q1_is_squared_distance() {
        assert_eq!(dissipation_term(&[1.0, 2.0], &[2.0, 0.0], 1.0), 5.0);
    }

    #[test]
    fn boundary_lower_exact_at_q1() {
        let c = derive_lemma_constant(LemmaId::BoundaryLower, 1.0, 2, 10_000, 1).unwrap();
        assert!(c.exact);
        assert_eq!(c.c_hat, 2.0);
        assert!((c.sup_ratio - 2.0).abs() < 1e-12);
    }

    #[test]
    fn boundary_upper_with_unit_constant_q1() {
        let chk = check_lemma_inequalities(LemmaId::BoundaryUpper, 1.0, 1.0, 1, 10_000, 3).unwrap();
        assert!(chk.passed());
        assert!((chk.worst_ratio - 0.5).abs() < 1e-12);
    }

    #[test]
    fn difference_power_alpha3() {
        let c = derive_lemma_constant(LemmaId::DifferencePower, 3.0, 1, 10_000, 5).unwrap();
        assert!(c.c_hat.is_finite() && c.c_hat > 0.0);
        let chk = check_lemma_inequalities(LemmaId::DifferencePower, 3.0, c.c_hat, 1, 100_000, 6)
            .unwrap();
        assert!(chk.passed(), "{chk:?}");
    }

    #[test]
    fn difference_power_rejects_small_alpha() {
        assert!(matches!(
            derive_lemma_constant(LemmaId::DifferencePower, 1.0, 1, 100, 1),
            Err(AlgebraError::ExponentTooSmall { .. })
        ));
    }

    #[test]
    fn near_zero_pairs_pass_after_rescaling() {
        let c = derive_lemma_constant(LemmaId::BoundaryLower, 0.5, 2, 10_000, 11).unwrap();
        for i in 0..5000u64 {
            let (u, v) = sample_pair(99, i, 2);
            let s = 1e-9;
            let u: Vec<f64> = u.iter().map(|x| x * s).collect();
            let v: Vec<f64> = v.iter().map(|x| x * s).collect();
            let (lhs, rhs) = lemma_sides(LemmaId::BoundaryLower, 0.5, &u, &v);
            assert!(lhs <= c.c_hat * rhs * (1.0 + 1e-12));
        }
    }

    #[test]
    fn boundary_mass_coefficients_q1() {
        assert_eq!(boundary_mass_coefficients(1.0), (2.0, 4.0));
    }

    #[test]
    fn sampler_is_deterministic() {
        assert_eq!(sample_pair(4, 17, 3), sample_pair(4, 17, 3));
        assert_ne!(sample_pair(4, 17, 3), sample_pair(5, 17, 3));
    }

    proptest! {
        #[test]
        fn b_term_nonnegative_and_zero_on_diagonal(
            u in prop::collection::vec(-1e3f64..1e3, 1..4),
            w in prop::collection::vec(-1e3f64..1e3, 4),
            q in prop::sample::select(vec![0.3, 0.5, 1.0, 2.0, 5.0]),
        ) {
            let v: Vec<f64> = w[..u.len()].to_vec();
            prop_assert!(b_term(&u, &v, q) >= 0.0);
            prop_assert!(b_term(&u, &u, q) <= 1e-12 * norm(&u).powf(q + 1.0).max(1e-300));
        }

        #[test]
        fn power_is_odd_and_homogeneous(
            u in prop::collection::vec(-1e2f64..1e2, 1..4),
            a in 0.1f64..4.0,
            s in 0.1f64..10.0,
        ) {
            let p = power(&u, a).unwrap();
            let neg: Vec<f64> = u.iter().map(|x| -x).collect();
            let pn = power(&neg, a).unwrap();
            let scaled: Vec<f64> = u.iter().map(|x| s * x).collect();
            let ps = power(&scaled, a).unwrap();
            for k in 0..u.len() {
                prop_assert!((p[k] + pn[k]).abs() <= 1e-12 * p[k].abs().max(1e-300));
                let e = s.powf(a) * p[k];
                prop_assert!((ps[k] - e).abs() <= 1e-10 * e.abs().max(1e-300));
            }
        }

        #[test]
        fn boundary_mass_holds_pointwise(
            u in prop::collection::vec(-1e3f64..1e3, 1..4),
            w in prop::collection::vec(-1e3f64..1e3, 4),
            q in prop::sample::select(vec![0.3, 0.5, 1.0, 2.0, 5.0]),
        ) {
            let v: Vec<f64> = w[..u.len()].to_vec();
            let (lhs, rhs) = lemma_sides(LemmaId::BoundaryMass, q, &u, &v);
            prop_assert!(lhs <= rhs * (1.0 + 1e-12));
        }

        #[test]
        fn boundary_upper_holds_with_unit_constant(
            u in prop::collection::vec(-1e3f64..1e3, 1..4),
            w in prop::collection::vec(-1e3f64..1e3, 4),
            q in prop::sample::select(vec![0.3, 0.5, 1.0, 2.0, 5.0]),
        ) {
            let v: Vec<f64> = w[..u.len()].to_vec();
            let (lhs, rhs) = lemma_sides(LemmaId::BoundaryUpper, q, &u, &v);
            prop_assert!(lhs <= rhs * (1.0 + 1e-10) + 1e-300);
        }
    }
}
