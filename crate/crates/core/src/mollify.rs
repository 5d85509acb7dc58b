//! Landes time mollification, finite difference quotients in time and the
//! finite integration-by-parts inequality with its error terms.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algebra::{b_term, norm, power_into, powr};
use crate::check::{worst, CheckOutcome};
use crate::grid::{cell_gradient, lp_integral, ordered_sum, Field, Trajectory};
use crate::integrand::Integrand;

#[derive(Debug, Error, PartialEq)]
pub enum MollifyError {
    #[error("mollification parameter must be positive, got {0}")]
    BadParameter(f64),
    #[error("difference step {k} outside 1..={ell}")]
    StepOutOfRange { k: usize, ell: usize },
    #[error("exponent r must lie in [1, inf], got {0}")]
    BadExponent(f64),
    #[error("trajectories do not share lattice, components and step count")]
    Mismatch,
}

/// `[v]_h` at the scheme times by exact integration against the
/// piecewise-constant input, starting from `[v]_h(0) = v_o`.
pub fn landes_mollify(traj: &Trajectory, h: f64, v_o: &Field) -> Result<Trajectory, MollifyError> {
    if !(h > 0.0) {
        return Err(MollifyError::BadParameter(h));
    }
    if !v_o.same_shape(&traj.steps[0]) {
        return Err(MollifyError::Mismatch);
    }
    let w = -(-traj.h / h).exp_m1();
    let mut steps = Vec::with_capacity(traj.steps.len());
    steps.push(v_o.clone());
    for u in &traj.steps[1..] {
        let mut next = steps.last().unwrap().clone();
        for (a, b) in next.values_mut().iter_mut().zip(u.values()) {
            *a += w * (b - *a);
        }
        steps.push(next);
    }
    Ok(Trajectory {
        steps,
        ..traj_shell(traj)
    })
}

fn traj_shell(traj: &Trajectory) -> Trajectory {
    Trajectory {
        steps: Vec::new(),
        h: traj.h,
        family: traj.family.clone(),
        q: traj.q,
        p: traj.p,
        u_star: traj.u_star.clone(),
    }
}

/// `max_i sup |([v]_i - [v]_{i-1})/Δt + ([v]_i - v_i)/h|`, the discrete
/// residual of `∂_t [v]_h = -([v]_h - v)/h`.
pub fn ode_residual(traj: &Trajectory, mollified: &Trajectory, h: f64) -> f64 {
    let dt = traj.h;
    let mut r = 0.0f64;
    for i in 1..traj.steps.len() {
        let (a, b, v) = (&mollified.steps[i - 1], &mollified.steps[i], &traj.steps[i]);
        for k in 0..a.values().len() {
            let x = (b.values()[k] - a.values()[k]) / dt + (b.values()[k] - v.values()[k]) / h;
            r = r.max(x.abs());
        }
    }
    r
}

/// Gauss-Legendre nodes and weights on `[0, 1]`.
fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out.push((0.5 * (1.0 - x), 0.5 * w));
    }
    out
}

const QUAD_POINTS: usize = 16;

/// `‖[v]_h‖_{L^r(0,t_o;X)} <= ‖v‖_{L^r(0,t_o;X)} + [(h/r)(1 - e^{-t_o r/h})]^{1/r} ‖v_o‖_X`
/// at every scheme time `t_o`, with `X = L^{q+1}(Ω)`. `r = ∞` is passed as
/// `f64::INFINITY`.
pub fn check_mollifier_bound(traj: &Trajectory, h: f64, v_o: &Field, r: f64) -> Result<CheckOutcome, MollifyError> {
    if !(r >= 1.0) {
        return Err(MollifyError::BadExponent(r));
    }
    let m = landes_mollify(traj, h, v_o)?;
    let s = traj.q + 1.0;
    let x_norm = |f: &Field| lp_integral(f, s).powf(1.0 / s);
    let dt = traj.h;
    let quad = gauss_legendre(QUAD_POINTS);
    let v_o_norm = x_norm(v_o);
    let mut outcomes = Vec::new();
    let (mut lhs_acc, mut rhs_acc) = (0.0f64, 0.0f64);
    let mut scratch = v_o.clone();
    for i in 1..traj.steps.len() {
        let (a, u) = (&m.steps[i - 1], &traj.steps[i]);
        let mut at = |theta: f64| {
            let w = -(-theta * dt / h).exp_m1();
            for ((o, x), y) in scratch.values_mut().iter_mut().zip(a.values()).zip(u.values()) {
                *o = x + w * (y - x);
            }
            x_norm(&scratch)
        };
        let vn = x_norm(u);
        if r.is_infinite() {
            let mut sup = at(1.0);
            for &(t, _) in &quad {
                sup = sup.max(at(t));
            }
            lhs_acc = lhs_acc.max(sup);
            rhs_acc = rhs_acc.max(vn);
        } else {
            lhs_acc += quad.iter().map(|&(t, w)| w * dt * at(t).powf(r)).sum::<f64>();
            rhs_acc += dt * vn.powf(r);
        }
        let t_o = i as f64 * dt;
        let (lhs, rhs) = if r.is_infinite() {
            (lhs_acc, rhs_acc + v_o_norm)
        } else {
            let bracket = (h / r * -(-t_o * r / h).exp_m1()).powf(1.0 / r);
            (lhs_acc.powf(1.0 / r), rhs_acc.powf(1.0 / r) + bracket * v_o_norm)
        };
        outcomes.push(CheckOutcome::new(format!("mollifier_bound_t{i}"), lhs, rhs, 0.0, 1e-10));
    }
    Ok(worst(outcomes).unwrap_or_else(|| CheckOutcome::flag("mollifier_bound", 0.0, 0.0, true)))
}

fn node_energy(f: &dyn Integrand, u: &Field) -> Vec<f64> {
    let l = *u.lattice();
    let w = u.components() * l.n;
    (0..l.len())
        .map(|k| {
            let mut xi = [0.0; 16];
            if l.has_cell(k) {
                cell_gradient(u, k, &mut xi[..w]);
            }
            f.eval(k, u.at(k), &xi[..w])
        })
        .collect()
}

/// Node- and time-wise `f(x, [v]_h, D[v]_h) <= [f(x, v, Dv)]_h`, the scalar
/// trajectory mollified from `f(x, v_o, Dv_o)`.
pub fn check_mollifier_convexity(
    traj: &Trajectory,
    h: f64,
    f: &dyn Integrand,
    v_o: &Field,
) -> Result<CheckOutcome, MollifyError> {
    let m = landes_mollify(traj, h, v_o)?;
    let w = -(-traj.h / h).exp_m1();
    let mut g = node_energy(f, v_o);
    let mut outcomes = Vec::new();
    for i in 1..traj.steps.len() {
        let gi = node_energy(f, &traj.steps[i]);
        for (a, b) in g.iter_mut().zip(&gi) {
            *a += w * (b - *a);
        }
        let lhs = node_energy(f, &m.steps[i]);
        let node_checks = lhs.iter().zip(&g).enumerate().map(|(k, (&l, &r))| {
            CheckOutcome::new(format!("mollifier_convexity_t{i}_node{k}"), l, r, 1e-12 * r.abs().max(1.0), 0.0)
        });
        outcomes.extend(worst(node_checks));
    }
    Ok(worst(outcomes).unwrap_or_else(|| CheckOutcome::flag("mollifier_convexity", 0.0, 0.0, true)))
}

/// Discrete time samples `values[j]` at times `(first + j) Δt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub first: usize,
    pub dt: f64,
    pub values: Vec<Field>,
}

impl TimeSeries {
    pub fn at(&self, i: usize) -> Option<&Field> {
        i.checked_sub(self.first).and_then(|j| self.values.get(j))
    }
}

/// `(v(t+h) - v(t))/h` (forward) or `(v(t) - v(t-h))/h` (backward) with
/// `h = k Δt`. Forward quotients exist for `i <= ℓ - k`; backward ones for
/// every `i`, using `v(t) = v(0)` for `t <= 0`.
pub fn difference_quotient(traj: &Trajectory, k: usize, backward: bool) -> Result<TimeSeries, MollifyError> {
    let ell = traj.ell();
    if k == 0 || k > ell {
        return Err(MollifyError::StepOutOfRange { k, ell });
    }
    let h = k as f64 * traj.h;
    let quot = |a: &Field, b: &Field| {
        let mut out = b.clone();
        for (o, x) in out.values_mut().iter_mut().zip(a.values()) {
            *o = (*o - x) / h;
        }
        out
    };
    let values = if backward {
        (0..=ell).map(|i| quot(&traj.steps[i.saturating_sub(k)], &traj.steps[i])).collect()
    } else {
        (0..=ell - k).map(|i| quot(&traj.steps[i], &traj.steps[i + k])).collect()
    };
    Ok(TimeSeries {
        first: 0,
        dt: traj.h,
        values,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegrationByParts {
    pub lhs: f64,
    pub rhs: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub outcome: CheckOutcome,
}

/// Finite integration by parts with `h = k Δt` for piecewise-constant `u`,
/// `v`, extended by `u(t) = u(0)`, `v(t) = v(0)` for `t <= 0` and
/// `v(t) = v(T)` for `t > T`:
///
/// `∬ Δ_{-h}[u]^q.(v-u) <= ∬ Δ_h v.([v]^q-[u]^q) - (1/h)∬_{(T-h,T)} b[u(t),v(t+h)]
///  + ∫ b[u(0),v(0)] + δ₁ + δ₂`.
pub fn check_finite_integration_by_parts(u: &Trajectory, v: &Trajectory, k: usize) -> Result<IntegrationByParts, MollifyError> {
    let ell = u.ell();
    if v.ell() != ell || !u.steps[0].same_shape(&v.steps[0]) {
        return Err(MollifyError::Mismatch);
    }
    if k == 0 || k > ell {
        return Err(MollifyError::StepOutOfRange { k, ell });
    }
    let q = u.q;
    let nc = u.steps[0].components();
    let l = *u.lattice();
    let vol = l.cell_volume();
    let dt = u.h;
    let h = k as f64 * dt;
    let pw = |f: &Field| {
        let mut out = vec![0.0; f.values().len()];
        for node in 0..l.len() {
            power_into(f.at(node), q, &mut out[node * nc..(node + 1) * nc]);
        }
        out
    };
    let pu: Vec<Vec<f64>> = u.steps.iter().map(pw).collect();
    let pv: Vec<Vec<f64>> = v.steps.iter().map(pw).collect();
    let idx = |j: i64| j.clamp(0, ell as i64) as usize;
    // returns (sum, sum of absolute values) of a node-wise expression
    let integrate = |term: &(dyn Fn(usize) -> f64 + Sync)| {
        let s = ordered_sum(l.len(), term) * vol;
        let a = ordered_sum(l.len(), |n| term(n).abs()) * vol;
        (s, a)
    };
    let dotc = |a: &[f64], b: &[f64], c: &[f64], d: &[f64], node: usize| {
        (0..nc)
            .map(|c_| {
                let i = node * nc + c_;
                (a[i] - b[i]) * (c[i] - d[i])
            })
            .sum::<f64>()
    };
    let mut scale = 0.0;
    let mut lhs = 0.0;
    let mut rhs = 0.0;
    let mut delta1 = 0.0;
    for j in 1..=ell as i64 {
        let (uj, uk) = (idx(j), idx(j - k as i64));
        let (s, a) = integrate(&|n| dotc(&pu[uj], &pu[uk], v.steps[uj].values(), u.steps[uj].values(), n));
        lhs += dt * s / h;
        scale += dt * a / h;
        let vk = idx(j + k as i64);
        let (s, a) = integrate(&|n| dotc(v.steps[vk].values(), v.steps[uj].values(), &pv[uj], &pu[uj], n));
        rhs += dt * s / h;
        scale += dt * a / h;
        let (s, _) = integrate(&|n| b_term(v.steps[uj].at(n), v.steps[vk].at(n), q));
        delta1 += dt * s / h;
        if j > (ell - k) as i64 {
            let (s, _) = integrate(&|n| b_term(u.steps[uj].at(n), v.steps[vk].at(n), q));
            rhs -= dt * s / h;
            scale += dt * s / h;
        }
    }
    let (b0, _) = integrate(&|n| b_term(u.steps[0].at(n), v.steps[0].at(n), q));
    rhs += b0;
    let mut delta2 = 0.0;
    for j in (-(k as i64) + 1)..=0 {
        let vk = idx(j + k as i64);
        let (s, a) = integrate(&|n| dotc(v.steps[vk].values(), v.steps[0].values(), &pv[vk], &pu[0], n));
        delta2 += dt * s / h;
        scale += dt * a / h;
    }
    scale += b0 + delta1;
    let total = rhs + delta1 + delta2;
    let outcome = CheckOutcome::new(format!("integration_by_parts_k{k}"), lhs, total, 1e-12 * scale, 0.0);
    Ok(IntegrationByParts {
        lhs,
        rhs,
        delta1,
        delta2,
        outcome,
    })
}

/// `‖v‖_{L^{q+1}}` helper for reports.
pub fn lq1_norm(f: &Field, q: f64) -> f64 {
    let l = f.lattice();
    let s = ordered_sum(l.len(), |k| powr(norm(f.at(k)), q + 1.0)) * l.cell_volume();
    s.powf(1.0 / (q + 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{DomainFamily, Lattice, SpatialMask};
    use crate::integrand::IntegrandSpec;
    use proptest::prelude::*;

    fn traj_from(values: Vec<Vec<f64>>, dt: f64, q: f64) -> Trajectory {
        let l = Lattice::unit(1, values[0].len()).unwrap();
        let steps: Vec<Field> = values.into_iter().map(|v| Field::from_values(l, 1, v).unwrap()).collect();
        let ell = steps.len() - 1;
        Trajectory {
            steps,
            h: dt,
            family: DomainFamily::cylinder(SpatialMask::full(l), dt * ell as f64).unwrap(),
            q,
            p: 2.0,
            u_star: Field::zeros(l, 1),
        }
    }

    fn smooth_traj(ell: usize, q: f64) -> Trajectory {
        let dt = 1.0 / ell as f64;
        let vals = (0..=ell)
            .map(|i| {
                let t = i as f64 * dt;
                (0..9).map(|k| ((k as f64) * 0.7 + 3.0 * t).sin() * (1.0 + t)).collect()
            })
            .collect();
        traj_from(vals, dt, q)
    }

    #[test]
    fn constant_is_fixed_point() {
        let t = traj_from(vec![vec![0.3, -1.0, 2.0]; 6], 0.1, 1.0);
        let m = landes_mollify(&t, 0.05, &t.steps[0]).unwrap();
        assert!(m.steps.iter().all(|s| s == &t.steps[0]));
    }

    #[test]
    fn unit_input_from_zero() {
        let mut v = vec![vec![1.0, 1.0]; 11];
        v[0] = vec![0.0, 0.0];
        let t = traj_from(v, 0.1, 1.0);
        let h = 0.3;
        let m = landes_mollify(&t, h, &Field::zeros(*t.lattice(), 1)).unwrap();
        for i in 0..=10 {
            let expect = 1.0 - (-(i as f64) * 0.1 / h).exp();
            assert!((m.steps[i].values()[0] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn matches_dense_quadrature() {
        let t = smooth_traj(10, 1.0);
        let h = 0.17;
        let v_o = Field::from_fn(*t.lattice(), 1, |x, o| o[0] = x[0] - 0.5);
        let m = landes_mollify(&t, h, &v_o).unwrap();
        // composite Simpson rule, 100 panels per step interval
        for i in [3usize, 7, 10] {
            let t_end = i as f64 * t.h;
            for node in 0..9 {
                let mut acc = (-t_end / h).exp() * v_o.values()[node];
                for step in 1..=i {
                    let (a, n) = ((step - 1) as f64 * t.h, 100);
                    let ds = t.h / n as f64;
                    let kern = |s: f64| ((s - t_end) / h).exp() / h;
                    let mut sum = kern(a) + kern(a + t.h);
                    for j in 1..n {
                        sum += if j % 2 == 1 { 4.0 } else { 2.0 } * kern(a + j as f64 * ds);
                    }
                    acc += sum * ds / 3.0 * t.steps[step].values()[node];
                }
                assert!((acc - m.steps[i].values()[node]).abs() < 1e-10, "{acc}");
            }
        }
    }

    #[test]
    fn ode_residual_is_first_order() {
        let h = 0.2;
        let mut prev = f64::INFINITY;
        for ell in [10usize, 20, 40, 80] {
            let t = smooth_traj(ell, 1.0);
            let m = landes_mollify(&t, h, &t.steps[0]).unwrap();
            let r = ode_residual(&t, &m, h);
            assert!(r < prev * 0.6, "{r} vs {prev}");
            prev = r;
        }
    }

    #[test]
    fn commutes_with_truncation() {
        let t = smooth_traj(10, 1.0);
        let m = landes_mollify(&t, 0.1, &t.steps[0]).unwrap();
        let mut short = t.clone();
        short.steps.truncate(6);
        let ms = landes_mollify(&short, 0.1, &t.steps[0]).unwrap();
        assert_eq!(&m.steps[..6], &ms.steps[..]);
    }

    #[test]
    fn bound_and_contraction() {
        let t = smooth_traj(12, 1.0);
        for &r in &[1.0, 2.0, 3.5, f64::INFINITY] {
            let zero = Field::zeros(*t.lattice(), 1);
            assert!(check_mollifier_bound(&t, 0.1, &zero, r).unwrap().pass);
            let v_o = Field::constant(*t.lattice(), &[4.0]);
            assert!(check_mollifier_bound(&t, 0.1, &v_o, r).unwrap().pass);
        }
    }

    #[test]
    fn constant_bound_is_tight() {
        // v = v_o constant: [v]_h = v and the bound holds with the bracket slack
        let t = traj_from(vec![vec![0.0, 1.0, 2.0]; 5], 0.25, 1.0);
        let o = check_mollifier_bound(&t, 0.5, &t.steps[0], 2.0).unwrap();
        assert!(o.pass);
        let norm_v = lq1_norm(&t.steps[0], 1.0);
        let bracket = (0.25 * -(-1.0f64).exp_m1()).sqrt();
        assert!((o.margin - bracket * norm_v).abs() < 1e-12 * norm_v);
    }

    #[test]
    fn convexity_holds_and_is_strict_for_linear_in_time() {
        let f = IntegrandSpec::p_dirichlet(2.0).unwrap();
        let vals = (0..=8).map(|i| vec![0.0, i as f64 * 0.1, 0.0]).collect();
        let t = traj_from(vals, 0.125, 1.0);
        let o = check_mollifier_convexity(&t, 0.2, &f, &t.steps[0]).unwrap();
        assert!(o.pass, "{o:?}");
        // strict at the node whose cell carries the time-varying slope
        let m = landes_mollify(&t, 0.2, &t.steps[0]).unwrap();
        let w = -(-0.125f64 / 0.2).exp_m1();
        let mut g = 0.0;
        for i in 1..=8 {
            g += w * (node_energy(&f, &t.steps[i])[0] - g);
            assert!(node_energy(&f, &m.steps[i])[0] < g);
        }
        let c = traj_from(vec![vec![1.0, 2.0, 0.5]; 4], 0.1, 1.0);
        let o = check_mollifier_convexity(&c, 0.2, &f, &c.steps[0]).unwrap();
        assert!(o.pass && o.margin.abs() < 1e-12);
    }

    #[test]
    fn difference_quotient_examples() {
        let vals = (0..=6).map(|i| vec![i as f64 * 0.5; 2]).collect();
        let t = traj_from(vals, 0.5, 1.0);
        let fwd = difference_quotient(&t, 2, false).unwrap();
        assert_eq!(fwd.values.len(), 5);
        assert!(fwd.values.iter().all(|f| (f.values()[0] - 1.0).abs() < 1e-15));
        let bwd = difference_quotient(&t, 1, true).unwrap();
        assert_eq!(bwd.values[0].values()[0], 0.0);
        assert!(bwd.values[1..].iter().all(|f| (f.values()[0] - 1.0).abs() < 1e-15));
        assert!(difference_quotient(&t, 7, true).is_err());
    }

    #[test]
    fn quotient_matches_interpolant() {
        let t = smooth_traj(8, 1.0);
        let k = 3;
        let fwd = difference_quotient(&t, k, false).unwrap();
        for i in 0..=5 {
            let tt = i as f64 * t.h;
            let a = t.interpolant_at(tt).unwrap();
            let b = t.interpolant_at(tt + k as f64 * t.h).unwrap();
            for n in 0..9 {
                let d = (b.values()[n] - a.values()[n]) / (k as f64 * t.h);
                assert!((d - fwd.at(i).unwrap().values()[n]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ibp_constant_pair_is_zero() {
        let t = traj_from(vec![vec![1.0, -2.0, 0.5]; 5], 0.25, 0.5);
        let r = check_finite_integration_by_parts(&t, &t, 2).unwrap();
        assert_eq!((r.lhs, r.rhs, r.delta1, r.delta2), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn ibp_linear_v_delta1_closed_form() {
        // q = 1: b[a, b] = |a-b|^2/2, so δ₁ = (1/h) Σ_j Δt |v_j - v_{j+k}|^2/2
        let ell = 8;
        let u = traj_from(vec![vec![0.7, 0.7]; ell + 1], 1.0 / ell as f64, 1.0);
        let vals = (0..=ell).map(|i| vec![i as f64 / ell as f64; 2]).collect();
        let v = traj_from(vals, 1.0 / ell as f64, 1.0);
        let k = 2;
        let r = check_finite_integration_by_parts(&u, &v, k).unwrap();
        assert!(r.outcome.pass);
        let dt = 1.0 / ell as f64;
        let h = k as f64 * dt;
        let vol = u.lattice().cell_volume() * 2.0;
        let mut d1 = 0.0;
        for j in 1..=ell {
            let a = j as f64 * dt;
            let b = ((j + k).min(ell)) as f64 * dt;
            d1 += dt * (a - b).powi(2) / 2.0 * vol / h;
        }
        assert!((r.delta1 - d1).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn ibp_holds_for_random_trajectories(seed in 0u64..200, q in prop::sample::select(vec![0.3, 0.5, 1.0, 2.0, 5.0])) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let ell = rng.gen_range(2..10);
            let k = rng.gen_range(1..=ell);
            let gen = |rng: &mut rand_chacha::ChaCha8Rng| (0..=ell).map(|_| (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect::<Vec<Vec<f64>>>();
            let u = traj_from(gen(&mut rng), 0.1, q);
            let v = traj_from(gen(&mut rng), 0.1, q);
            let r = check_finite_integration_by_parts(&u, &v, k).unwrap();
            prop_assert!(r.outcome.pass, "{:?}", r.outcome);
        }
    }
}
