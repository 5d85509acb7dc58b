//! One minimizing-movement step: minimize
//! `F[w] = ∫ f(x, w, Dw) + (1/h) ∫ b[ū, w]` over `w = u_*` off the slice.
//!
//! The solver is an accelerated proximal-gradient method: the integrand part
//! is handled by gradient steps with backtracking, the separable boundary
//! term by its exact per-node proximal map, and momentum restarts whenever
//! it stops helping.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algebra::{b_term, norm, power_into, power_scale, powr};
use crate::check::{worst, CheckOutcome};
use crate::geometry::SpatialMask;
use crate::grid::{clamp_to_boundary, first_unclamped, l1_distance, ordered_sum, Field, CHUNK};
use crate::integrand::{energy_integral, Integrand, IntegrandError};

#[derive(Debug, Error, PartialEq)]
pub enum MinimizerError {
    #[error("candidate differs from u_* at node {0} outside the slice")]
    NotClamped(usize),
    #[error("field shapes do not match the step problem")]
    Mismatch,
    #[error("step size h must be positive, got {0}")]
    BadStep(f64),
    #[error(transparent)]
    Integrand(#[from] IntegrandError),
    #[error("line search failed to find a descent step")]
    LineSearch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub tol_obj: f64,
    pub tol_step: f64,
    pub max_iters: usize,
    /// Step shrink factor of the backtracking line search, in `(0, 1)`.
    pub backtrack: f64,
    /// Starting curvature estimate; reused across steps by the scheme.
    pub lipschitz_hint: Option<f64>,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            tol_obj: 1e-10,
            tol_step: 1e-9,
            max_iters: 20_000,
            backtrack: 0.5,
            lipschitz_hint: None,
        }
    }
}

/// Data of one step; `mask` marks the free nodes.
#[derive(Debug, Clone, Copy)]
pub struct StepProblem<'a> {
    pub mask: &'a SpatialMask,
    pub u_prev: &'a Field,
    pub u_star: &'a Field,
    pub integrand: &'a dyn Integrand,
    pub h: f64,
    pub q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub field: Field,
    pub iterations: usize,
    /// Sup-norm over free nodes of the objective gradient per unit volume.
    pub achieved_tol: f64,
    pub converged: bool,
    pub objective: f64,
    pub lipschitz: f64,
}

impl<'a> StepProblem<'a> {
    fn validate(&self) -> Result<(), MinimizerError> {
        if !(self.h > 0.0) {
            return Err(MinimizerError::BadStep(self.h));
        }
        if !self.u_prev.same_shape(self.u_star) || self.mask.lattice() != self.u_prev.lattice() {
            return Err(MinimizerError::Mismatch);
        }
        Ok(())
    }

    fn check_clamped(&self, w: &Field) -> Result<(), MinimizerError> {
        if !w.same_shape(self.u_star) {
            return Err(MinimizerError::Mismatch);
        }
        match first_unclamped(w, self.mask, self.u_star) {
            Some(k) => Err(MinimizerError::NotClamped(k)),
            None => Ok(()),
        }
    }
}

/// `F[w]` with the boundary term evaluated exactly.
pub fn step_objective(problem: &StepProblem, w: &Field) -> Result<f64, MinimizerError> {
    problem.validate()?;
    problem.check_clamped(w)?;
    let l = w.lattice();
    let b = ordered_sum(l.len(), |k| b_term(problem.u_prev.at(k), w.at(k), problem.q));
    Ok(energy_integral(problem.integrand, w) + b * l.cell_volume() / problem.h)
}

struct Workspace<'a> {
    p: StepProblem<'a>,
    nc: usize,
    wdim: usize,
    vol: f64,
    inv_dx: [f64; 2],
    free: Vec<bool>,
    /// `[ū]^q` per node.
    prev_pow: Vec<f64>,
    flux: Vec<f64>,
    gu: Vec<f64>,
}

impl<'a> Workspace<'a> {
    fn new(p: StepProblem<'a>) -> Self {
        let l = *p.u_prev.lattice();
        let nc = p.u_prev.components();
        let wdim = nc * l.n;
        let mut prev_pow = vec![0.0; l.len() * nc];
        for k in 0..l.len() {
            power_into(p.u_prev.at(k), p.q, &mut prev_pow[k * nc..(k + 1) * nc]);
        }
        Workspace {
            p,
            nc,
            wdim,
            vol: l.cell_volume(),
            inv_dx: [1.0 / l.spacing[0], 1.0 / l.spacing[1]],
            free: p.mask.occupied().to_vec(),
            prev_pow,
            flux: vec![0.0; l.len() * wdim],
            gu: vec![0.0; l.len() * nc],
        }
    }

    fn lattice(&self) -> &crate::geometry::Lattice {
        self.p.u_prev.lattice()
    }

    fn xi_at(&self, w: &[f64], k: usize, xi: &mut [f64]) {
        let l = self.lattice();
        let nc = self.nc;
        let n = l.n;
        for d in 0..n {
            let m = l.forward(k, d);
            for c in 0..nc {
                xi[c * n + d] = (w[m * nc + c] - w[k * nc + c]) * self.inv_dx[d];
            }
        }
    }

    /// `∫ f(x, w, Dw)` only.
    fn smooth_value(&self, w: &[f64]) -> f64 {
        let l = *self.lattice();
        let (nc, wd) = (self.nc, self.wdim);
        ordered_sum(l.len(), |k| {
            let mut xi = [0.0; 16];
            if l.has_cell(k) {
                self.xi_at(w, k, &mut xi[..wd]);
            }
            self.p.integrand.eval(k, &w[k * nc..(k + 1) * nc], &xi[..wd])
        }) * self.vol
    }

    /// `∫ f(x, w, Dw)` and its gradient per unit volume on free nodes.
    fn smooth_grad(&mut self, w: &[f64], grad: &mut [f64]) -> Result<f64, MinimizerError> {
        let l = *self.lattice();
        let (nc, wd) = (self.nc, self.wdim);
        let integrand = self.p.integrand;
        let mut flux = std::mem::take(&mut self.flux);
        let mut gu = std::mem::take(&mut self.gu);
        let this = &*self;
        let xi_at = |k: usize, xi: &mut [f64]| this.xi_at(w, k, xi);
        let partial: Vec<Result<f64, IntegrandError>> = flux
            .par_chunks_mut(CHUNK * wd)
            .zip(gu.par_chunks_mut(CHUNK * nc))
            .enumerate()
            .map(|(ci, (fl, g))| {
                let base = ci * CHUNK;
                let mut s = 0.0;
                let mut xi = [0.0; 16];
                for off in 0..g.len() / nc {
                    let k = base + off;
                    let u = &w[k * nc..(k + 1) * nc];
                    let gk = &mut g[off * nc..(off + 1) * nc];
                    let fk = &mut fl[off * wd..(off + 1) * wd];
                    if l.has_cell(k) {
                        xi_at(k, &mut xi[..wd]);
                        s += integrand.eval_with_grads(k, u, &xi[..wd], gk, fk)?;
                    } else {
                        xi[..wd].iter_mut().for_each(|x| *x = 0.0);
                        integrand.grad_u(k, u, &xi[..wd], gk)?;
                        s += integrand.eval(k, u, &xi[..wd]);
                        fk.iter_mut().for_each(|x| *x = 0.0);
                    }
                }
                Ok(s)
            })
            .collect();
        let mut value = 0.0;
        for r in partial {
            value += r?;
        }
        let n = l.n;
        let free = &self.free;
        let inv_dx = self.inv_dx;
        {
            let flux = &flux;
            let gu = &gu;
            grad.par_chunks_mut(CHUNK * nc).enumerate().for_each(|(ci, g)| {
                let base = ci * CHUNK;
                for off in 0..g.len() / nc {
                    let k = base + off;
                    let gk = &mut g[off * nc..(off + 1) * nc];
                    if !free[k] {
                        gk.iter_mut().for_each(|x| *x = 0.0);
                        continue;
                    }
                    for c in 0..nc {
                        let mut s = gu[k * nc + c];
                        for d in 0..n {
                            s -= flux[k * wd + c * n + d] * inv_dx[d];
                            if let Some(m) = l.backward(k, d) {
                                s += flux[m * wd + c * n + d] * inv_dx[d];
                            }
                        }
                        gk[c] = s;
                    }
                }
            });
        }
        self.flux = flux;
        self.gu = gu;
        Ok(value * self.vol)
    }

    /// `(1/h) ∫ (|w|^{q+1}/(q+1) - [ū]^q . w)`: the boundary term without
    /// its `w`-independent part.
    fn b_value(&self, w: &[f64]) -> f64 {
        let nc = self.nc;
        let q = self.p.q;
        ordered_sum(self.lattice().len(), |k| {
            let wk = &w[k * nc..(k + 1) * nc];
            let pk = &self.prev_pow[k * nc..(k + 1) * nc];
            let dotp: f64 = wk.iter().zip(pk).map(|(a, b)| a * b).sum();
            powr(norm(wk), q + 1.0) / (q + 1.0) - dotp
        }) * self.vol
            / self.p.h
    }

    fn b_constant(&self) -> f64 {
        let q = self.p.q;
        ordered_sum(self.lattice().len(), |k| {
            q / (q + 1.0) * powr(norm(self.p.u_prev.at(k)), q + 1.0)
        }) * self.vol
            / self.p.h
    }

    /// Exact proximal map of the boundary term at step `1/lip`, applied to
    /// `y - g/lip` on free nodes.
    fn prox_step(&self, y: &[f64], g: &[f64], lip: f64, out: &mut [f64]) {
        let nc = self.nc;
        let inv_h = 1.0 / self.p.h;
        let q = self.p.q;
        let free = &self.free;
        let prev_pow = &self.prev_pow;
        out.par_chunks_mut(CHUNK * nc).enumerate().for_each(|(ci, o)| {
            let base = ci * CHUNK;
            let mut z = [0.0; 8];
            for off in 0..o.len() / nc {
                let k = base + off;
                let ok = &mut o[off * nc..(off + 1) * nc];
                if !free[k] {
                    ok.copy_from_slice(&y[k * nc..(k + 1) * nc]);
                    continue;
                }
                let mut zn = 0.0;
                for c in 0..nc {
                    let yc = y[k * nc + c] - g[k * nc + c] / lip;
                    z[c] = lip * yc + inv_h * prev_pow[k * nc + c];
                    zn += z[c] * z[c];
                }
                let zn = zn.sqrt();
                if zn == 0.0 {
                    ok.iter_mut().for_each(|x| *x = 0.0);
                    continue;
                }
                let s = prox_radius(lip, inv_h, q, zn);
                for c in 0..nc {
                    ok[c] = s * z[c] / zn;
                }
            }
        });
    }

    fn residual(&mut self, x: &[f64], grad: &mut [f64]) -> Result<f64, MinimizerError> {
        self.smooth_grad(x, grad)?;
        let nc = self.nc;
        let inv_h = 1.0 / self.p.h;
        let q = self.p.q;
        let mut r = 0.0f64;
        for k in 0..self.lattice().len() {
            if !self.free[k] {
                continue;
            }
            let xk = &x[k * nc..(k + 1) * nc];
            let s = power_scale(norm(xk), q);
            for c in 0..nc {
                let g = grad[k * nc + c] + inv_h * (s * xk[c] - self.prev_pow[k * nc + c]);
                r = r.max(g.abs());
            }
        }
        Ok(r)
    }
}

/// Root `s >= 0` of `lip s + s^q / h = z`.
pub fn prox_radius(lip: f64, inv_h: f64, q: f64, z: f64) -> f64 {
    if q == 1.0 {
        return z / (lip + inv_h);
    }
    if q == 0.5 {
        let r = 2.0 * z / (inv_h + (inv_h * inv_h + 4.0 * lip * z).sqrt());
        return r * r;
    }
    if q == 2.0 {
        return 2.0 * z / (lip + (lip * lip + 4.0 * inv_h * z).sqrt());
    }
    let phi = |s: f64| lip * s + inv_h * powr(s, q) - z;
    let (mut lo, mut hi) = (0.0f64, z / lip);
    let mut s = hi;
    for _ in 0..200 {
        let f = phi(s);
        if f > 0.0 {
            hi = s;
        } else {
            lo = s;
        }
        let d = lip + if s > 0.0 { q * inv_h * powr(s, q - 1.0) } else { f64::INFINITY };
        let mut next = s - f / d;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - s).abs() <= 1e-16 * s.max(1e-300) || hi - lo <= 1e-16 * hi {
            return next;
        }
        s = next;
    }
    s
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Minimizes the step functional from `init` (clamped first).
pub fn minimize_step(
    problem: &StepProblem,
    init: &Field,
    settings: &SolverSettings,
) -> Result<StepResult, MinimizerError> {
    problem.validate()?;
    if !init.same_shape(problem.u_star) {
        return Err(MinimizerError::Mismatch);
    }
    let start = clamp_to_boundary(init, problem.mask, problem.u_star).map_err(|_| MinimizerError::Mismatch)?;
    let lattice = *start.lattice();
    let mut ws = Workspace::new(*problem);
    let constant = ws.b_constant();
    let len = start.values().len();
    let mut x = start.values().to_vec();
    let mut x_prev = x.clone();
    let mut y = x.clone();
    let mut z = vec![0.0; len];
    let mut gy = vec![0.0; len];
    let mut fx = ws.smooth_value(&x) + ws.b_value(&x);
    let mut lip = settings.lipschitz_hint.unwrap_or(1.0).max(1e-12);
    let beta = settings.backtrack.clamp(0.05, 0.95);
    let mut theta = 1.0f64;
    let mut hits = 0usize;
    let mut converged = false;
    let mut iterations = 0usize;
    let mut y_is_x = true;
    while iterations < settings.max_iters {
        iterations += 1;
        let sy = ws.smooth_grad(&y, &mut gy)?;
        let sz = loop {
            ws.prox_step(&y, &gy, lip, &mut z);
            let sz = ws.smooth_value(&z);
            let mut lin = 0.0;
            let mut quad = 0.0;
            for k in 0..len {
                let d = z[k] - y[k];
                lin += gy[k] * d;
                quad += d * d;
            }
            let model = sy + ws.vol * (lin + 0.5 * lip * quad);
            if sz <= model + 1e-13 * sy.abs().max(sz.abs()) {
                break sz;
            }
            lip /= beta;
            if !lip.is_finite() || lip > 1e300 {
                return Err(MinimizerError::LineSearch);
            }
        };
        let bz = ws.b_value(&z);
        let fz = sz + bz;
        let allowance = 1e-14 * (sz.abs() + bz.abs() + constant.abs());
        if fz <= fx + allowance {
            let step = sup_diff(&z, &x);
            let dec = (fx - fz) / (fz + constant).abs().max(1e-300);
            std::mem::swap(&mut x_prev, &mut x);
            x.copy_from_slice(&z);
            fx = fz;
            let mut restart = 0.0;
            for k in 0..len {
                restart += (y[k] - x[k]) * (x[k] - x_prev[k]);
            }
            if restart > 0.0 {
                theta = 1.0;
                y.copy_from_slice(&x);
                y_is_x = true;
            } else {
                let theta_next = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
                let m = (theta - 1.0) / theta_next;
                for k in 0..len {
                    y[k] = x[k] + m * (x[k] - x_prev[k]);
                }
                theta = theta_next;
                y_is_x = m == 0.0;
            }
            if dec < settings.tol_obj && step < settings.tol_step {
                hits += 1;
                if hits >= 2 {
                    converged = true;
                    break;
                }
            } else {
                hits = 0;
            }
            if iterations % 25 == 0 && ws.residual(&x, &mut gy)? < settings.tol_obj {
                converged = true;
                break;
            }
        } else if y_is_x {
            // a plain proximal step no longer decreases: rounding floor
            converged = sup_diff(&z, &x) < settings.tol_step;
            break;
        } else {
            theta = 1.0;
            y.copy_from_slice(&x);
            y_is_x = true;
        }
        lip *= 0.95;
    }
    let achieved_tol = ws.residual(&x, &mut gy)?;
    let field = Field::from_values(lattice, start.components(), x).map_err(|_| MinimizerError::Mismatch)?;
    Ok(StepResult {
        field,
        iterations,
        achieved_tol,
        converged,
        objective: fx + constant,
        lipschitz: lip,
    })
}

/// Per-step inequality for one competitor `w`:
/// `∫ f(w*) <= ∫ f(w) + (1/h) ∫ ([w*]^q - [ū]^q) . (w - w*)`, with slack
/// `achieved_tol * ||w - w*||_{L^1}` plus a relative rounding allowance.
pub fn crucial_inequality(
    problem: &StepProblem,
    w_star: &Field,
    achieved_tol: f64,
    w: &Field,
    name: &str,
) -> Result<CheckOutcome, MinimizerError> {
    problem.check_clamped(w)?;
    let l = *w.lattice();
    let nc = w.components();
    let q = problem.q;
    let lhs = energy_integral(problem.integrand, w_star);
    let fw = energy_integral(problem.integrand, w);
    let terms = |k: usize| {
        let mut a = vec![0.0; nc];
        let mut b = vec![0.0; nc];
        power_into(w_star.at(k), q, &mut a);
        power_into(problem.u_prev.at(k), q, &mut b);
        (0..nc)
            .map(|c| (a[c] - b[c]) * (w.at(k)[c] - w_star.at(k)[c]))
            .sum::<f64>()
    };
    let pairing = ordered_sum(l.len(), terms) * l.cell_volume() / problem.h;
    let pairing_abs = ordered_sum(l.len(), |k| terms(k).abs()) * l.cell_volume() / problem.h;
    let rhs = fw + pairing;
    let slack = achieved_tol * l1_distance(w, w_star) + 1e-12 * (lhs.abs() + fw.abs() + pairing_abs);
    Ok(CheckOutcome::new(name, lhs, rhs, slack, 0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMinimality {
    pub worst: CheckOutcome,
    pub competitors: usize,
    pub failures: usize,
}

impl StepMinimality {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Random clamped perturbation of `base`: node noise for odd `j`, a smooth
/// sine mode for even `j`.
fn perturbation(problem: &StepProblem, base: &Field, j: usize, rng: &mut ChaCha8Rng) -> Field {
    let l = *base.lattice();
    let nc = base.components();
    let scale = base
        .values()
        .iter()
        .chain(problem.u_star.values())
        .fold(1e-3f64, |a, &b| a.max(b.abs()));
    let amp = scale * 10f64.powf(rng.gen_range(-4.0..0.0));
    let lo = l.origin;
    let up = l.upper();
    let kx = rng.gen_range(1..6) as f64;
    let ky = rng.gen_range(1..6) as f64;
    let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let mut out = base.clone();
    for k in 0..l.len() {
        if !problem.mask.contains(k) {
            continue;
        }
        let x = l.coord(k);
        for c in 0..nc {
            let delta = if j % 2 == 1 {
                rng.gen_range(-1.0..1.0)
            } else {
                let sx = (kx * std::f64::consts::PI * (x[0] - lo[0]) / (up[0] - lo[0]) + phase).sin();
                let sy = if l.n == 2 {
                    (ky * std::f64::consts::PI * (x[1] - lo[1]) / (up[1] - lo[1])).sin()
                } else {
                    1.0
                };
                sx * sy
            };
            out.values_mut()[k * nc + c] += amp * delta;
        }
    }
    out
}

/// Checks the per-step inequality against `ū`, `u_*` and random clamped
/// perturbations of the minimizer, `competitors` in total.
pub fn verify_step_minimality(
    problem: &StepProblem,
    result: &StepResult,
    competitors: usize,
    seed: u64,
) -> Result<StepMinimality, MinimizerError> {
    problem.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let warm = clamp_to_boundary(problem.u_prev, problem.mask, problem.u_star).map_err(|_| MinimizerError::Mismatch)?;
    let mut outcomes = Vec::with_capacity(competitors);
    for j in 0..competitors {
        let (w, name) = match j {
            0 => (warm.clone(), "previous"),
            1 => (problem.u_star.clone(), "boundary_datum"),
            _ => (perturbation(problem, &result.field, j, &mut rng), "perturbation"),
        };
        outcomes.push(crucial_inequality(problem, &result.field, result.achieved_tol, &w, name)?);
    }
    let failures = outcomes.iter().filter(|o| !o.pass).count();
    let worst = worst(outcomes).unwrap_or_else(|| CheckOutcome::flag("none", 0.0, 0.0, true));
    Ok(StepMinimality {
        worst,
        competitors,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Lattice;
    use crate::integrand::IntegrandSpec;
    use nalgebra::{DMatrix, DVector};

    fn heat_problem_1d(nodes: usize) -> (SpatialMask, Field, Field, IntegrandSpec) {
        let l = Lattice::unit(1, nodes).unwrap();
        let mask = SpatialMask::full(l);
        let prev = Field::from_fn(l, 1, |x, o| o[0] = (std::f64::consts::PI * x[0]).sin() + 0.3);
        let star = Field::from_fn(l, 1, |x, o| o[0] = 0.3 + 0.2 * x[0]);
        let prev = clamp_to_boundary(&prev, &mask, &star).unwrap();
        (mask, prev, star, IntegrandSpec::p_dirichlet(2.0).unwrap())
    }

    #[test]
    fn quadratic_step_matches_linear_solve() {
        let (mask, prev, star, f) = heat_problem_1d(5);
        let h = 0.01;
        let p = StepProblem {
            mask: &mask,
            u_prev: &prev,
            u_star: &star,
            integrand: &f,
            h,
            q: 1.0,
        };
        let res = minimize_step(&p, &prev, &SolverSettings::default()).unwrap();
        assert!(res.converged);
        // oracle: (I/h + A) w = ū/h + boundary contributions
        let dx = 0.25;
        let m = 3;
        let mut a = DMatrix::<f64>::zeros(m, m);
        let mut rhs = DVector::<f64>::zeros(m);
        for i in 0..m {
            a[(i, i)] = 1.0 / h + 2.0 / (dx * dx);
            if i > 0 {
                a[(i, i - 1)] = -1.0 / (dx * dx);
            }
            if i + 1 < m {
                a[(i, i + 1)] = -1.0 / (dx * dx);
            }
            rhs[i] = prev.values()[i + 1] / h;
        }
        rhs[0] += star.values()[0] / (dx * dx);
        rhs[m - 1] += star.values()[4] / (dx * dx);
        let w = a.lu().solve(&rhs).unwrap();
        for i in 0..m {
            assert!((res.field.values()[i + 1] - w[i]).abs() < 1e-9, "{} {}", res.field.values()[i + 1], w[i]);
        }
    }

    #[test]
    fn objective_rejects_unclamped_input() {
        let (mask, prev, star, f) = heat_problem_1d(9);
        let p = StepProblem {
            mask: &mask,
            u_prev: &prev,
            u_star: &star,
            integrand: &f,
            h: 0.1,
            q: 1.0,
        };
        let mut w = prev.clone();
        w.values_mut()[0] += 1.0;
        assert_eq!(step_objective(&p, &w), Err(MinimizerError::NotClamped(0)));
    }

    #[test]
    fn stationary_data_is_fixed_point() {
        // u_prev = u_* affine, p = 2: the affine field is the minimizer
        let l = Lattice::unit(2, 9).unwrap();
        let mask = SpatialMask::full(l);
        let star = Field::from_fn(l, 1, |x, o| o[0] = 1.0 + x[0] - 0.5 * x[1]);
        let f = IntegrandSpec::p_dirichlet(2.0).unwrap();
        for &q in &[0.5, 1.0, 2.0] {
            let p = StepProblem {
                mask: &mask,
                u_prev: &star,
                u_star: &star,
                integrand: &f,
                h: 0.05,
                q,
            };
            let res = minimize_step(&p, &star, &SolverSettings::default()).unwrap();
            assert!(res.field.sup_distance(&star) < 1e-12, "q={q}");
            assert!(res.converged);
        }
    }

    #[test]
    fn two_initializations_agree() {
        let l = Lattice::unit(2, 17).unwrap();
        let mask = SpatialMask::ball(l, [0.5, 0.5], 0.4);
        let star = Field::zeros(l, 1);
        let prev = clamp_to_boundary(
            &Field::from_fn(l, 1, |x, o| o[0] = (6.0 * x[0]).sin() * x[1]),
            &mask,
            &star,
        )
        .unwrap();
        let f = IntegrandSpec::p_dirichlet(2.0).unwrap();
        let p = StepProblem {
            mask: &mask,
            u_prev: &prev,
            u_star: &star,
            integrand: &f,
            h: 0.01,
            q: 1.0,
        };
        let s = SolverSettings::default();
        let a = minimize_step(&p, &prev, &s).unwrap();
        let b = minimize_step(&p, &star, &s).unwrap();
        let tol = 10.0 * a.achieved_tol.max(b.achieved_tol);
        assert!(a.field.sup_distance(&b.field) <= tol, "{} vs {tol}", a.field.sup_distance(&b.field));
    }

    #[test]
    fn prox_radius_solves_scalar_equation() {
        for &q in &[0.3, 0.5, 0.7, 1.0, 2.0, 3.5] {
            for &z in &[1e-12, 1e-3, 0.7, 5.0, 1e4] {
                let (lip, inv_h) = (37.0, 12.0);
                let s = prox_radius(lip, inv_h, q, z);
                let r = lip * s + inv_h * s.powf(q) - z;
                assert!(r.abs() <= 1e-10 * z, "q={q} z={z} r={r}");
            }
        }
    }

    #[test]
    fn minimality_holds_for_degenerate_exponent() {
        let l = Lattice::unit(2, 21).unwrap();
        let mask = SpatialMask::ball(l, [0.5, 0.5], 0.45);
        let star = Field::zeros(l, 1);
        let prev = clamp_to_boundary(
            &Field::from_fn(l, 1, |x, o| o[0] = (0.04 - (x[0] - 0.5).powi(2) - (x[1] - 0.5).powi(2)).max(0.0)),
            &mask,
            &star,
        )
        .unwrap();
        let f = IntegrandSpec::p_dirichlet(2.0).unwrap();
        let p = StepProblem {
            mask: &mask,
            u_prev: &prev,
            u_star: &star,
            integrand: &f,
            h: 0.01,
            q: 0.5,
        };
        let res = minimize_step(&p, &prev, &SolverSettings::default()).unwrap();
        assert!(res.converged, "{} {}", res.iterations, res.achieved_tol);
        let v = verify_step_minimality(&p, &res, 60, 4).unwrap();
        assert!(v.passed(), "{:?}", v.worst);
        let obj = step_objective(&p, &res.field).unwrap();
        for comp in [&prev, &star] {
            assert!(obj <= step_objective(&p, comp).unwrap() + 1e-12);
        }
    }

    #[test]
    fn p_laplacian_step_converges() {
        let l = Lattice::unit(2, 17).unwrap();
        let mask = SpatialMask::full(l);
        let star = Field::zeros(l, 1);
        let prev = clamp_to_boundary(
            &Field::from_fn(l, 1, |x, o| o[0] = (3.0 * x[0]).sin() * (2.0 * x[1]).sin()),
            &mask,
            &star,
        )
        .unwrap();
        let f = IntegrandSpec::p_dirichlet(3.0).unwrap().with_lower_order(0.5);
        let p = StepProblem {
            mask: &mask,
            u_prev: &prev,
            u_star: &star,
            integrand: &f,
            h: 0.01,
            q: 1.0,
        };
        let res = minimize_step(&p, &prev, &SolverSettings::default()).unwrap();
        assert!(res.converged);
        let v = verify_step_minimality(&p, &res, 40, 9).unwrap();
        assert!(v.passed(), "{:?}", v.worst);
    }
}
