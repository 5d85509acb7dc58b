//! Node fields, forward-difference gradients, discrete norms and the
//! trajectory container.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{DomainFamily, Lattice, SpatialMask};

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("axis {0} has a single node; no forward differences exist")]
    SingleNodeAxis(usize),
    #[error("lattice or component count mismatch")]
    Mismatch,
    #[error("time {t} outside (-{h}, {horizon}]")]
    TimeOutOfRange { t: f64, h: f64, horizon: f64 },
    #[error("trajectory has no steps")]
    Empty,
    #[error("exponent must be at least 1, got {0}")]
    BadExponent(f64),
    #[error("csv line {line}: {msg}")]
    Csv { line: usize, msg: String },
}

/// Chunk length for reductions. Partial sums are formed per chunk and then
/// added in index order, so results do not depend on the thread count.
pub const CHUNK: usize = 2048;

/// `sum_{k < n} f(k)` with a fixed summation order.
pub fn ordered_sum<F: Fn(usize) -> f64 + Sync>(n: usize, f: F) -> f64 {
    let chunks = n.div_ceil(CHUNK);
    let partial: Vec<f64> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(n);
            let mut s = 0.0;
            for k in lo..hi {
                s += f(k);
            }
            s
        })
        .collect();
    partial.iter().sum()
}

/// `max_{k < n} f(k)` (order-free), zero for empty ranges.
pub fn par_max<F: Fn(usize) -> f64 + Sync + Send>(n: usize, f: F) -> f64 {
    (0..n).into_par_iter().map(f).reduce(|| 0.0, f64::max)
}

/// `N`-component values at every lattice node, stored node-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Field {
    lattice: Lattice,
    components: usize,
    values: Vec<f64>,
}

impl Field {
    pub fn zeros(lattice: Lattice, components: usize) -> Self {
        Field {
            lattice,
            components,
            values: vec![0.0; lattice.len() * components],
        }
    }

    pub fn from_values(lattice: Lattice, components: usize, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != lattice.len() * components || components == 0 {
            return Err(GridError::Mismatch);
        }
        Ok(Field {
            lattice,
            components,
            values,
        })
    }

    pub fn from_fn(lattice: Lattice, components: usize, mut f: impl FnMut([f64; 2], &mut [f64])) -> Self {
        let mut field = Field::zeros(lattice, components);
        for k in 0..lattice.len() {
            let x = lattice.coord(k);
            f(x, &mut field.values[k * components..(k + 1) * components]);
        }
        field
    }

    pub fn constant(lattice: Lattice, value: &[f64]) -> Self {
        Field::from_fn(lattice, value.len(), |_, o| o.copy_from_slice(value))
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn at(&self, node: usize) -> &[f64] {
        &self.values[node * self.components..(node + 1) * self.components]
    }

    pub fn same_shape(&self, other: &Field) -> bool {
        self.lattice == other.lattice && self.components == other.components
    }

    /// `a * self + b * other`
    pub fn combine(&self, a: f64, other: &Field, b: f64) -> Result<Field, GridError> {
        if !self.same_shape(other) {
            return Err(GridError::Mismatch);
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| a * x + b * y)
            .collect();
        Ok(Field {
            lattice: self.lattice,
            components: self.components,
            values,
        })
    }

    pub fn sup_distance(&self, other: &Field) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Header `x1[,x2],c1..cN`, one row per node in index order. Values use
    /// the shortest round-trip representation.
    pub fn to_csv_string(&self) -> String {
        let n = self.lattice.n;
        let mut s = String::new();
        let head: Vec<String> = (1..=n)
            .map(|d| format!("x{d}"))
            .chain((1..=self.components).map(|c| format!("c{c}")))
            .collect();
        s.push_str(&head.join(","));
        s.push('\n');
        for k in 0..self.lattice.len() {
            let x = self.lattice.coord(k);
            let row: Vec<String> = x[..n]
                .iter()
                .chain(self.at(k))
                .map(|v| format!("{v:e}"))
                .collect();
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }

    /// Inverse of [`Field::to_csv_string`]; coordinates are checked against
    /// the lattice.
    pub fn from_csv_str(text: &str, lattice: Lattice) -> Result<Field, GridError> {
        let n = lattice.n;
        let mut lines = text.lines();
        let header = lines.next().ok_or(GridError::Csv { line: 1, msg: "empty".into() })?;
        let cols = header.split(',').count();
        if cols <= n {
            return Err(GridError::Csv { line: 1, msg: "no component columns".into() });
        }
        let components = cols - n;
        let mut values = Vec::with_capacity(lattice.len() * components);
        let mut k = 0;
        for (idx, line) in lines.enumerate() {
            let lineno = idx + 2;
            if line.trim().is_empty() {
                continue;
            }
            let row: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| GridError::Csv { line: lineno, msg: e.to_string() })?;
            if row.len() != cols {
                return Err(GridError::Csv { line: lineno, msg: format!("expected {cols} columns") });
            }
            if k >= lattice.len() {
                return Err(GridError::Csv { line: lineno, msg: "more rows than nodes".into() });
            }
            let x = lattice.coord(k);
            let tol = 1e-9 * lattice.min_spacing();
            if (0..n).any(|d| (row[d] - x[d]).abs() > tol) {
                return Err(GridError::Csv { line: lineno, msg: "coordinates do not match the lattice".into() });
            }
            values.extend_from_slice(&row[n..]);
            k += 1;
        }
        if k != lattice.len() {
            return Err(GridError::Csv { line: k + 2, msg: format!("expected {} rows, got {k}", lattice.len()) });
        }
        Field::from_values(lattice, components, values)
    }
}

/// Forward-difference gradient at a cell anchor, layout `xi[c * n + d]`.
#[inline]
pub fn cell_gradient(field: &Field, node: usize, out: &mut [f64]) {
    let l = field.lattice();
    let nc = field.components();
    let n = l.n;
    let v = field.values();
    for d in 0..n {
        let m = l.forward(node, d);
        let inv = 1.0 / l.spacing[d];
        for c in 0..nc {
            out[c * n + d] = (v[m * nc + c] - v[node * nc + c]) * inv;
        }
    }
}

/// Gradients at all nodes; nodes without a full forward stencil get zero.
pub fn discrete_gradient(field: &Field) -> Result<Vec<f64>, GridError> {
    let l = field.lattice();
    if let Some(d) = (0..l.n).find(|&d| l.dims[d] < 2) {
        return Err(GridError::SingleNodeAxis(d));
    }
    let w = field.components() * l.n;
    let mut out = vec![0.0; l.len() * w];
    for k in 0..l.len() {
        if l.has_cell(k) {
            cell_gradient(field, k, &mut out[k * w..(k + 1) * w]);
        }
    }
    Ok(out)
}

/// Norm value together with an empty-mask flag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskedNorm {
    pub value: f64,
    pub empty_mask: bool,
}

fn node_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `||u||_{L^p}` over masked nodes (all nodes for `None`), `p` finite `>= 1`
/// or infinite.
pub fn lp_space_norm(field: &Field, mask: Option<&SpatialMask>, p: f64) -> Result<MaskedNorm, GridError> {
    if !(p >= 1.0) {
        return Err(GridError::BadExponent(p));
    }
    let l = field.lattice();
    if let Some(m) = mask {
        if m.lattice() != l {
            return Err(GridError::Mismatch);
        }
        if m.is_empty() {
            return Ok(MaskedNorm {
                value: 0.0,
                empty_mask: true,
            });
        }
    }
    let inside = |k: usize| mask.map_or(true, |m| m.contains(k));
    let value = if p.is_infinite() {
        par_max(l.len(), |k| if inside(k) { node_norm(field.at(k)) } else { 0.0 })
    } else {
        let s = ordered_sum(l.len(), |k| {
            if inside(k) {
                crate::algebra::powr(node_norm(field.at(k)), p)
            } else {
                0.0
            }
        });
        (s * l.cell_volume()).powf(1.0 / p)
    };
    Ok(MaskedNorm {
        value,
        empty_mask: false,
    })
}

/// `∫ |u|^p` over all nodes.
pub fn lp_integral(field: &Field, p: f64) -> f64 {
    let l = field.lattice();
    ordered_sum(l.len(), |k| crate::algebra::powr(node_norm(field.at(k)), p)) * l.cell_volume()
}

/// `∫ |Du|^p` over cells (Frobenius norm of the gradient).
pub fn gradient_lp_integral(field: &Field, p: f64) -> f64 {
    let l = *field.lattice();
    let w = field.components() * l.n;
    ordered_sum(l.len(), |k| {
        if !l.has_cell(k) {
            return 0.0;
        }
        let mut xi = [0.0; 16];
        cell_gradient(field, k, &mut xi[..w]);
        crate::algebra::powr(node_norm(&xi[..w]), p)
    }) * l.cell_volume()
}

/// `∫ |u - v|` over all nodes.
pub fn l1_distance(a: &Field, b: &Field) -> f64 {
    let l = a.lattice();
    let nc = a.components();
    ordered_sum(l.len(), |k| {
        let mut s = 0.0;
        for c in 0..nc {
            let d = a.values()[k * nc + c] - b.values()[k * nc + c];
            s += d * d;
        }
        s.sqrt()
    }) * l.cell_volume()
}

/// Copy of `field` with every node outside `mask` set to `u_star`.
pub fn clamp_to_boundary(field: &Field, mask: &SpatialMask, u_star: &Field) -> Result<Field, GridError> {
    if !field.same_shape(u_star) || mask.lattice() != field.lattice() {
        return Err(GridError::Mismatch);
    }
    let nc = field.components();
    let mut out = field.clone();
    for k in 0..field.lattice().len() {
        if !mask.contains(k) {
            out.values[k * nc..(k + 1) * nc].copy_from_slice(u_star.at(k));
        }
    }
    Ok(out)
}

/// First node outside `mask` where `field` differs from `u_star`.
pub fn first_unclamped(field: &Field, mask: &SpatialMask, u_star: &Field) -> Option<usize> {
    (0..field.lattice().len()).find(|&k| !mask.contains(k) && field.at(k) != u_star.at(k))
}

/// Minimizing-movement sequence `u_{ℓ,0..ℓ}` with its step size, domain and
/// boundary datum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<Field>,
    pub h: f64,
    pub family: DomainFamily,
    pub q: f64,
    pub p: f64,
    pub u_star: Field,
}

impl Trajectory {
    pub fn ell(&self) -> usize {
        self.steps.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        self.h * self.ell() as f64
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.h
    }

    pub fn lattice(&self) -> &Lattice {
        self.steps[0].lattice()
    }

    pub fn mask(&self, i: usize) -> &SpatialMask {
        self.family
            .slice_mask(self.time(i).min(self.family.horizon()))
            .expect("scheme times lie in the family horizon")
    }

    /// Index of the step active at time `t` for the piecewise-constant
    /// interpolant (`steps[0]` for `t <= 0`).
    pub fn step_index(&self, t: f64) -> Result<usize, GridError> {
        let horizon = self.horizon();
        let tol = 1e-9 * self.h;
        if !(t > -self.h - tol && t <= horizon + tol) {
            return Err(GridError::TimeOutOfRange {
                t,
                h: self.h,
                horizon,
            });
        }
        if t <= tol {
            return Ok(0);
        }
        Ok(((t / self.h - 1e-9).ceil() as usize).min(self.ell()))
    }

    pub fn interpolant_at(&self, t: f64) -> Result<&Field, GridError> {
        Ok(&self.steps[self.step_index(t)?])
    }
}

/// `(Σ_i h ||D u_i||_p^p)^{1/p} + (Σ_i h ||u_i||_p^p)^{1/p}` over `i = 1..ℓ`.
pub fn vp_norm(traj: &Trajectory) -> f64 {
    let p = traj.p;
    let (mut g, mut v) = (0.0, 0.0);
    for u in &traj.steps[1..] {
        g += traj.h * gradient_lp_integral(u, p);
        v += traj.h * lp_integral(u, p);
    }
    g.powf(1.0 / p) + v.powf(1.0 / p)
}

/// `||u||_{L^{q+1}(Ω_T)}` of the interpolant.
pub fn lq1_space_time_norm(traj: &Trajectory) -> f64 {
    let r = traj.q + 1.0;
    let s: f64 = traj.steps[1..].iter().map(|u| traj.h * lp_integral(u, r)).sum();
    s.powf(1.0 / r)
}
