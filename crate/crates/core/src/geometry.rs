//! Lattices, rasterized space-time domains and the geometric quantities the
//! scheme needs: distances, inner parallel sets, cutoffs, fatness probes and
//! the mollified initial datum.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Field;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("lattice dimension must be 1 or 2, got {0}")]
    BadDimension(usize),
    #[error("lattice needs at least one node per axis and positive spacing")]
    BadLattice,
    #[error("mask has {got} cells, lattice has {expected} nodes")]
    SizeMismatch { expected: usize, got: usize },
    #[error("node {0} lies on the bounding box but is marked occupied")]
    OccupiedBoundary(usize),
    #[error("slice times must start at 0, increase strictly and stay within the horizon")]
    BadTimes,
    #[error("domain family has no slices")]
    EmptyFamily,
    #[error("time {t} outside [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },
    #[error("slices {0} and {1} live on different lattices")]
    ResolutionMismatch(usize, usize),
    #[error("negative parallel-set width {0}")]
    NegativeSigma(f64),
    #[error("cutoff width must be positive, got {0}")]
    NonPositiveSigma(f64),
    #[error("complementary excess needs s <= t, got s = {s}, t = {t}")]
    ReversedTimes { s: f64, t: f64 },
    #[error("mollifier radius {eps} is below one lattice spacing {spacing}")]
    DegenerateKernel { eps: f64, spacing: f64 },
    #[error("field lattice or component count does not match")]
    FieldMismatch,
    #[error("csv line {line}: {msg}")]
    Csv { line: usize, msg: String },
}

/// Regular node lattice covering the box `origin + [0, (dims-1) spacing]`.
/// Nodes are indexed row-major with the first axis fastest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    pub n: usize,
    pub dims: [usize; 2],
    pub spacing: [f64; 2],
    pub origin: [f64; 2],
}

impl Lattice {
    pub fn new(
        n: usize,
        dims: [usize; 2],
        spacing: [f64; 2],
        origin: [f64; 2],
    ) -> Result<Self, GeometryError> {
        if n != 1 && n != 2 {
            return Err(GeometryError::BadDimension(n));
        }
        let dims = if n == 1 { [dims[0], 1] } else { dims };
        let spacing = if n == 1 { [spacing[0], 1.0] } else { spacing };
        if dims[..n].iter().any(|&d| d == 0) || spacing[..n].iter().any(|&s| !(s > 0.0)) {
            return Err(GeometryError::BadLattice);
        }
        Ok(Lattice {
            n,
            dims,
            spacing,
            origin: if n == 1 { [origin[0], 0.0] } else { origin },
        })
    }

    /// `nodes` per axis covering `[lo, hi]^n`.
    pub fn cube(n: usize, nodes: usize, lo: f64, hi: f64) -> Result<Self, GeometryError> {
        if nodes < 2 {
            return Err(GeometryError::BadLattice);
        }
        let dx = (hi - lo) / (nodes - 1) as f64;
        Lattice::new(n, [nodes, nodes], [dx, dx], [lo, lo])
    }

    pub fn unit(n: usize, nodes: usize) -> Result<Self, GeometryError> {
        Lattice::cube(n, nodes, 0.0, 1.0)
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `Δx_1 ... Δx_n`
    pub fn cell_volume(&self) -> f64 {
        self.spacing[..self.n].iter().product()
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacing[..self.n].iter().cloned().fold(f64::INFINITY, f64::min)
    }

    #[inline]
    pub fn ij(&self, node: usize) -> (usize, usize) {
        (node % self.dims[0], node / self.dims[0])
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.dims[0] + i
    }

    #[inline]
    pub fn coord(&self, node: usize) -> [f64; 2] {
        let (i, j) = self.ij(node);
        [
            self.origin[0] + i as f64 * self.spacing[0],
            if self.n == 2 {
                self.origin[1] + j as f64 * self.spacing[1]
            } else {
                0.0
            },
        ]
    }

    pub fn upper(&self) -> [f64; 2] {
        [
            self.origin[0] + (self.dims[0] - 1) as f64 * self.spacing[0],
            self.origin[1] + (self.dims[1] - 1) as f64 * self.spacing[1],
        ]
    }

    pub fn center(&self) -> [f64; 2] {
        let up = self.upper();
        [
            0.5 * (self.origin[0] + up[0]),
            if self.n == 2 { 0.5 * (self.origin[1] + up[1]) } else { 0.0 },
        ]
    }

    pub fn diameter(&self) -> f64 {
        (0..self.n)
            .map(|d| ((self.dims[d] - 1) as f64 * self.spacing[d]).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    #[inline]
    pub fn is_boundary(&self, node: usize) -> bool {
        let (i, j) = self.ij(node);
        i == 0 || i + 1 == self.dims[0] || (self.n == 2 && (j == 0 || j + 1 == self.dims[1]))
    }

    /// True when every forward neighbor exists, i.e. a cell is anchored here.
    #[inline]
    pub fn has_cell(&self, node: usize) -> bool {
        let (i, j) = self.ij(node);
        i + 1 < self.dims[0] && (self.n == 1 || j + 1 < self.dims[1])
    }

    /// Forward neighbor along `axis`.
    #[inline]
    pub fn forward(&self, node: usize, axis: usize) -> usize {
        if axis == 0 {
            node + 1
        } else {
            node + self.dims[0]
        }
    }

    /// Backward neighbor along `axis`, if any.
    #[inline]
    pub fn backward(&self, node: usize, axis: usize) -> Option<usize> {
        let (i, j) = self.ij(node);
        if axis == 0 {
            (i > 0).then(|| node - 1)
        } else {
            (j > 0).then(|| node - self.dims[0])
        }
    }

    pub fn dist(&self, a: [f64; 2], b: [f64; 2]) -> f64 {
        (0..self.n).map(|d| (a[d] - b[d]).powi(2)).sum::<f64>().sqrt()
    }
}

/// Occupancy of one time slice `E^t` on a lattice. Occupied nodes lie
/// strictly inside the bounding box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialMask {
    lattice: Lattice,
    occupied: Vec<bool>,
}

impl SpatialMask {
    pub fn new(lattice: Lattice, occupied: Vec<bool>) -> Result<Self, GeometryError> {
        if occupied.len() != lattice.len() {
            return Err(GeometryError::SizeMismatch {
                expected: lattice.len(),
                got: occupied.len(),
            });
        }
        if let Some(node) = (0..lattice.len()).find(|&k| occupied[k] && lattice.is_boundary(k)) {
            return Err(GeometryError::OccupiedBoundary(node));
        }
        Ok(SpatialMask { lattice, occupied })
    }

    /// Interior nodes whose coordinates satisfy `pred`.
    pub fn from_fn(lattice: Lattice, mut pred: impl FnMut([f64; 2]) -> bool) -> Self {
        let occupied = (0..lattice.len())
            .map(|k| !lattice.is_boundary(k) && pred(lattice.coord(k)))
            .collect();
        SpatialMask { lattice, occupied }
    }

    /// Every interior node.
    pub fn full(lattice: Lattice) -> Self {
        SpatialMask::from_fn(lattice, |_| true)
    }

    pub fn ball(lattice: Lattice, center: [f64; 2], radius: f64) -> Self {
        SpatialMask::from_fn(lattice, |x| lattice.dist(x, center) < radius)
    }

    pub fn rectangle(lattice: Lattice, lo: [f64; 2], hi: [f64; 2]) -> Self {
        SpatialMask::from_fn(lattice, |x| {
            (0..lattice.n).all(|d| x[d] > lo[d] && x[d] < hi[d])
        })
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    #[inline]
    pub fn contains(&self, node: usize) -> bool {
        self.occupied[node]
    }

    pub fn occupied(&self) -> &[bool] {
        &self.occupied
    }

    pub fn count(&self) -> usize {
        self.occupied.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn is_subset_of(&self, other: &SpatialMask) -> bool {
        self.occupied
            .iter()
            .zip(&other.occupied)
            .all(|(&a, &b)| !a || b)
    }

    /// First node occupied here but not in `other`.
    pub fn first_excess_over(&self, other: &SpatialMask) -> Option<usize> {
        (0..self.occupied.len()).find(|&k| self.occupied[k] && !other.occupied[k])
    }

    fn axis_neighbors(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        let l = &self.lattice;
        let (i, j) = l.ij(node);
        let mut out = [None; 4];
        if i > 0 {
            out[0] = Some(node - 1);
        }
        if i + 1 < l.dims[0] {
            out[1] = Some(node + 1);
        }
        if l.n == 2 {
            if j > 0 {
                out[2] = Some(node - l.dims[0]);
            }
            if j + 1 < l.dims[1] {
                out[3] = Some(node + l.dims[0]);
            }
        }
        out.into_iter().flatten()
    }

    /// Occupied nodes with at least one unoccupied axis neighbor.
    pub fn boundary_cell_fraction(&self) -> f64 {
        let total = self.count();
        if total == 0 {
            return 0.0;
        }
        let edge = (0..self.occupied.len())
            .filter(|&k| self.occupied[k] && self.axis_neighbors(k).any(|m| !self.occupied[m]))
            .count();
        edge as f64 / total as f64
    }

    /// Occupied nodes plus their eight (two in 1D) lattice neighbors, kept
    /// strictly inside the box.
    pub fn dilate_one(&self) -> SpatialMask {
        let l = self.lattice;
        let mut occ = self.occupied.clone();
        let rj: i64 = if l.n == 2 { 1 } else { 0 };
        for k in (0..occ.len()).filter(|&k| self.occupied[k]) {
            let (i, j) = l.ij(k);
            for dj in -rj..=rj {
                for di in -1i64..=1 {
                    let (ii, jj) = (i as i64 + di, j as i64 + dj);
                    if ii < 0 || jj < 0 || ii as usize >= l.dims[0] || jj as usize >= l.dims[1] {
                        continue;
                    }
                    let m = l.index(ii as usize, jj as usize);
                    occ[m] = occ[m] || !l.is_boundary(m);
                }
            }
        }
        SpatialMask {
            lattice: l,
            occupied: occ,
        }
    }
}

/// Space-time domain as slices `E^{t_i}` on a common lattice, with
/// right-continuous step interpolation in time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainFamily {
    times: Vec<f64>,
    slices: Vec<SpatialMask>,
    horizon: f64,
}

fn time_tol(horizon: f64) -> f64 {
    1e-9 * horizon.abs().max(1e-300)
}

impl DomainFamily {
    pub fn new(
        times: Vec<f64>,
        slices: Vec<SpatialMask>,
        horizon: f64,
    ) -> Result<Self, GeometryError> {
        if slices.is_empty() || times.len() != slices.len() {
            return Err(GeometryError::EmptyFamily);
        }
        let tol = time_tol(horizon);
        if !(horizon > 0.0)
            || times[0].abs() > tol
            || times.windows(2).any(|w| !(w[1] > w[0]))
            || *times.last().unwrap() > horizon + tol
        {
            return Err(GeometryError::BadTimes);
        }
        Ok(DomainFamily {
            times,
            slices,
            horizon,
        })
    }

    /// Time-independent domain `E = E^0 x (0, T)`.
    pub fn cylinder(mask: SpatialMask, horizon: f64) -> Result<Self, GeometryError> {
        DomainFamily::new(vec![0.0], vec![mask], horizon)
    }

    /// Slices produced by `gen` at `times`.
    pub fn from_generator(
        times: Vec<f64>,
        horizon: f64,
        gen: impl Fn(f64) -> SpatialMask,
    ) -> Result<Self, GeometryError> {
        let slices = times.iter().map(|&t| gen(t)).collect();
        DomainFamily::new(times, slices, horizon)
    }

    /// Ball of radius `radius(t)` around `center`.
    pub fn expanding_ball(
        lattice: Lattice,
        center: [f64; 2],
        radius: impl Fn(f64) -> f64,
        times: Vec<f64>,
        horizon: f64,
    ) -> Result<Self, GeometryError> {
        DomainFamily::from_generator(times, horizon, |t| {
            SpatialMask::ball(lattice, center, radius(t))
        })
    }

    /// Box `center ± half(t)`.
    pub fn expanding_rectangle(
        lattice: Lattice,
        center: [f64; 2],
        half: impl Fn(f64) -> [f64; 2],
        times: Vec<f64>,
        horizon: f64,
    ) -> Result<Self, GeometryError> {
        DomainFamily::from_generator(times, horizon, |t| {
            let h = half(t);
            SpatialMask::rectangle(
                lattice,
                [center[0] - h[0], center[1] - h[1]],
                [center[0] + h[0], center[1] + h[1]],
            )
        })
    }

    /// `ell + 1` equally spaced times on `[0, horizon]`.
    pub fn scheme_times(ell: usize, horizon: f64) -> Vec<f64> {
        (0..=ell).map(|i| i as f64 * horizon / ell as f64).collect()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn slices(&self) -> &[SpatialMask] {
        &self.slices
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn lattice(&self) -> &Lattice {
        self.slices[0].lattice()
    }

    /// Slice with the largest `t_i <= t`.
    pub fn slice_mask(&self, t: f64) -> Result<&SpatialMask, GeometryError> {
        let tol = time_tol(self.horizon);
        if !(t >= -tol && t <= self.horizon + tol) {
            return Err(GeometryError::TimeOutOfRange {
                t,
                horizon: self.horizon,
            });
        }
        let k = self.times.partition_point(|&ti| ti <= t + tol);
        Ok(&self.slices[k.max(1) - 1])
    }

    /// `E^{t_i} ⊆ E^{t_j}` for all `i < j`.
    pub fn check_nondecreasing(&self) -> Result<bool, GeometryError> {
        Ok(self.first_shrinking()?.is_none())
    }

    /// First `(slice index, node)` where a node leaves the domain.
    pub fn first_shrinking(&self) -> Result<Option<(usize, usize)>, GeometryError> {
        let l0 = self.slices[0].lattice();
        for (i, s) in self.slices.iter().enumerate() {
            if s.lattice() != l0 {
                return Err(GeometryError::ResolutionMismatch(0, i));
            }
        }
        for i in 1..self.slices.len() {
            if let Some(node) = self.slices[i - 1].first_excess_over(&self.slices[i]) {
                return Ok(Some((i, node)));
            }
        }
        Ok(None)
    }

    /// Parses rows `t,c_0,...,c_{K-1}` of 0/1 cells after a header line.
    pub fn from_csv_str(text: &str, lattice: Lattice, horizon: f64) -> Result<Self, GeometryError> {
        let mut times = Vec::new();
        let mut slices = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if lineno == 0 || line.is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let t: f64 = parts
                .next()
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| GeometryError::Csv {
                    line: lineno + 1,
                    msg: "bad time".into(),
                })?;
            let occ: Result<Vec<bool>, GeometryError> = parts
                .map(|s| match s.trim() {
                    "0" => Ok(false),
                    "1" => Ok(true),
                    other => Err(GeometryError::Csv {
                        line: lineno + 1,
                        msg: format!("cell value {other:?} is not 0/1"),
                    }),
                })
                .collect();
            let occ = occ?;
            let mask = SpatialMask::new(lattice, occ).map_err(|e| GeometryError::Csv {
                line: lineno + 1,
                msg: e.to_string(),
            })?;
            times.push(t);
            slices.push(mask);
        }
        DomainFamily::new(times, slices, horizon)
    }

    pub fn to_csv_string(&self) -> String {
        let k = self.lattice().len();
        let mut s = String::from("t");
        for c in 0..k {
            s.push_str(&format!(",c{c}"));
        }
        s.push('\n');
        for (t, m) in self.times.iter().zip(&self.slices) {
            s.push_str(&format!("{t}"));
            for &b in m.occupied() {
                s.push_str(if b { ",1" } else { ",0" });
            }
            s.push('\n');
        }
        s
    }
}

const BRUTE_FORCE_LIMIT: usize = 64 * 64;

/// Euclidean distance from each node to the nearest unoccupied node (zero on
/// unoccupied nodes).
pub fn distance_to_complement(mask: &SpatialMask) -> Vec<f64> {
    if mask.lattice().len() < BRUTE_FORCE_LIMIT {
        distance_brute_force(mask)
    } else {
        distance_two_pass(mask)
    }
}

pub fn distance_brute_force(mask: &SpatialMask) -> Vec<f64> {
    let l = mask.lattice();
    let comp: Vec<[f64; 2]> = (0..l.len())
        .filter(|&k| !mask.contains(k))
        .map(|k| l.coord(k))
        .collect();
    (0..l.len())
        .map(|k| {
            if !mask.contains(k) {
                return 0.0;
            }
            let x = l.coord(k);
            comp.iter()
                .map(|&y| l.dist(x, y))
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

/// Lower envelope of parabolas along one line (squared distances).
fn envelope_1d(f: &[f64], d: f64, out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let Some(first) = f.iter().position(|x| x.is_finite()) else {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    };
    let pos = |q: usize| q as f64 * d;
    let cross = |q: usize, r: usize| {
        ((f[q] + pos(q) * pos(q)) - (f[r] + pos(r) * pos(r))) / (2.0 * (pos(q) - pos(r)))
    };
    let mut k = 0usize;
    v[0] = first;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in first + 1..n {
        if !f[q].is_finite() {
            continue;
        }
        let mut s = cross(q, v[k]);
        while s <= z[k] {
            k -= 1;
            s = cross(q, v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (p, o) in out.iter_mut().enumerate() {
        while z[k + 1] < pos(p) {
            k += 1;
        }
        let dp = pos(p) - pos(v[k]);
        *o = dp * dp + f[v[k]];
    }
}

/// Exact Euclidean distance transform by separable parabola envelopes.
pub fn distance_two_pass(mask: &SpatialMask) -> Vec<f64> {
    let l = *mask.lattice();
    let (nx, ny) = (l.dims[0], l.dims[1]);
    let m = nx.max(ny);
    let mut v = vec![0usize; m];
    let mut z = vec![0f64; m + 1];
    let mut g = vec![0f64; l.len()];
    let mut line = vec![0f64; m];
    let mut out = vec![0f64; m];
    for j in 0..ny {
        for i in 0..nx {
            line[i] = if mask.contains(l.index(i, j)) {
                f64::INFINITY
            } else {
                0.0
            };
        }
        envelope_1d(&line[..nx], l.spacing[0], &mut out[..nx], &mut v, &mut z);
        for i in 0..nx {
            g[l.index(i, j)] = out[i];
        }
    }
    if l.n == 2 {
        for i in 0..nx {
            for j in 0..ny {
                line[j] = g[l.index(i, j)];
            }
            envelope_1d(&line[..ny], l.spacing[1], &mut out[..ny], &mut v, &mut z);
            for j in 0..ny {
                g[l.index(i, j)] = out[j];
            }
        }
    }
    g.into_iter().map(f64::sqrt).collect()
}

/// `{x in E^t : dist(x, complement) > sigma}`.
pub fn inner_parallel_set(mask: &SpatialMask, sigma: f64) -> Result<SpatialMask, GeometryError> {
    if sigma < 0.0 || sigma.is_nan() {
        return Err(GeometryError::NegativeSigma(sigma));
    }
    let dist = distance_to_complement(mask);
    Ok(SpatialMask {
        lattice: *mask.lattice(),
        occupied: dist.iter().map(|&d| d > sigma).collect(),
    })
}

/// Smallest probed ratio `|complement ∩ B_r(x)| / |B_r(x)|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FatnessReport {
    pub delta_hat: f64,
    pub probes: usize,
    /// `(node, radius)` attaining the minimum.
    pub worst_probe: Option<(usize, f64)>,
    /// Probe radii are capped at the box diameter.
    pub radius_cap: f64,
    /// The complement was empty, so the estimate carries no information.
    pub vacuous: bool,
    /// One-dimensional lattices sit outside the intended setting.
    pub one_dimensional: bool,
}

/// Counts lattice points of the unbounded lattice in `B_r(x)` and those
/// outside the mask; points beyond the box count as complement.
fn density_at(mask: &SpatialMask, node: usize, r: f64) -> f64 {
    let l = mask.lattice();
    let (i0, j0) = l.ij(node);
    let ri = (r / l.spacing[0]).floor() as i64;
    let rj = if l.n == 2 {
        (r / l.spacing[1]).floor() as i64
    } else {
        0
    };
    let mut total = 0u64;
    let mut outside = 0u64;
    for dj in -rj..=rj {
        for di in -ri..=ri {
            let dx = di as f64 * l.spacing[0];
            let dy = if l.n == 2 { dj as f64 * l.spacing[1] } else { 0.0 };
            if dx * dx + dy * dy > r * r {
                continue;
            }
            total += 1;
            let (i, j) = (i0 as i64 + di, j0 as i64 + dj);
            let inside_box =
                i >= 0 && j >= 0 && (i as usize) < l.dims[0] && (j as usize) < l.dims[1];
            if !inside_box || !mask.contains(l.index(i as usize, j as usize)) {
                outside += 1;
            }
        }
    }
    outside as f64 / total as f64
}

/// Probes the measure density of the complement from a deterministic probe
/// sequence. Centers cycle through complement nodes adjacent to the domain
/// (all complement nodes if none are adjacent); radii are log-uniform
/// between one spacing and the box diameter.
pub fn measure_density_estimate(mask: &SpatialMask, probes: usize, seed: u64) -> FatnessReport {
    let l = *mask.lattice();
    let cap = l.diameter().max(l.min_spacing());
    let comp: Vec<usize> = (0..l.len()).filter(|&k| !mask.contains(k)).collect();
    if comp.is_empty() {
        return FatnessReport {
            delta_hat: 0.0,
            probes: 0,
            worst_probe: None,
            radius_cap: cap,
            vacuous: true,
            one_dimensional: l.n == 1,
        };
    }
    if mask.is_empty() {
        return FatnessReport {
            delta_hat: 1.0,
            probes,
            worst_probe: None,
            radius_cap: cap,
            vacuous: false,
            one_dimensional: l.n == 1,
        };
    }
    let interface: Vec<usize> = comp
        .iter()
        .copied()
        .filter(|&k| mask.axis_neighbors(k).any(|m| mask.contains(m)))
        .collect();
    let centers = if interface.is_empty() { &comp } else { &interface };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lo = l.min_spacing().ln();
    let hi = cap.ln();
    let mut best = (f64::INFINITY, None);
    for k in 0..probes {
        let node = centers[k % centers.len()];
        let r = if hi > lo {
            rng.gen_range(lo..=hi).exp()
        } else {
            cap
        };
        let d = density_at(mask, node, r);
        if d < best.0 {
            best = (d, Some((node, r)));
        }
    }
    FatnessReport {
        delta_hat: best.0.min(1.0),
        probes,
        worst_probe: best.1,
        radius_cap: cap,
        vacuous: false,
        one_dimensional: l.n == 1,
    }
}

/// `sup_{x in Ω \ E^t} dist(x, Ω \ E^s)` for `s <= t`.
pub fn complementary_excess(family: &DomainFamily, s: f64, t: f64) -> Result<f64, GeometryError> {
    if s > t {
        return Err(GeometryError::ReversedTimes { s, t });
    }
    let es = family.slice_mask(s)?;
    let et = family.slice_mask(t)?;
    let dist = distance_to_complement(es);
    Ok((0..dist.len())
        .filter(|&k| !et.contains(k))
        .map(|k| dist[k])
        .fold(0.0, f64::max))
}

/// Piecewise-linear cutoff: 0 on `(-inf, 1]`, `r - 1` on `(1, 2)`, 1 after.
#[inline]
pub fn eta_tilde(r: f64) -> f64 {
    (r - 1.0).clamp(0.0, 1.0)
}

/// `η_σ(x) = eta_tilde(dist(x, Ω \ E^t) / σ)` at every node.
pub fn cutoff_eta_sigma(mask: &SpatialMask, sigma: f64) -> Result<Vec<f64>, GeometryError> {
    if !(sigma > 0.0) {
        return Err(GeometryError::NonPositiveSigma(sigma));
    }
    Ok(distance_to_complement(mask)
        .into_iter()
        .map(|d| eta_tilde(d / sigma))
        .collect())
}

/// Normalized discrete bump kernel `exp(-1/(1-|y/ε|^2))` on lattice offsets
/// with `|y| < ε`, as `(di, dj, weight)`.
pub fn bump_kernel(lattice: &Lattice, eps: f64) -> Result<Vec<(i64, i64, f64)>, GeometryError> {
    if eps < lattice.min_spacing() {
        return Err(GeometryError::DegenerateKernel {
            eps,
            spacing: lattice.min_spacing(),
        });
    }
    let ri = (eps / lattice.spacing[0]).ceil() as i64;
    let rj = if lattice.n == 2 {
        (eps / lattice.spacing[1]).ceil() as i64
    } else {
        0
    };
    let mut k = Vec::new();
    for dj in -rj..=rj {
        for di in -ri..=ri {
            let y0 = di as f64 * lattice.spacing[0];
            let y1 = if lattice.n == 2 { dj as f64 * lattice.spacing[1] } else { 0.0 };
            let s = (y0 * y0 + y1 * y1) / (eps * eps);
            if s < 1.0 {
                k.push((di, dj, (-1.0 / (1.0 - s)).exp()));
            }
        }
    }
    let total: f64 = k.iter().map(|w| w.2).sum();
    k.iter_mut().for_each(|w| w.2 /= total);
    Ok(k)
}

/// `u_* + ((u_o - u_*) χ_{E^{0,2ε}}) * φ_ε`.
pub fn mollify_initial_datum(
    u_o: &Field,
    u_star: &Field,
    mask0: &SpatialMask,
    eps: f64,
) -> Result<Field, GeometryError> {
    let l = *mask0.lattice();
    if u_o.lattice() != &l || u_star.lattice() != &l || u_o.components() != u_star.components() {
        return Err(GeometryError::FieldMismatch);
    }
    let kernel = bump_kernel(&l, eps)?;
    let inner = inner_parallel_set(mask0, 2.0 * eps)?;
    let nc = u_o.components();
    let mut src = vec![0.0; l.len() * nc];
    for k in 0..l.len() {
        if inner.contains(k) {
            for c in 0..nc {
                src[k * nc + c] = u_o.values()[k * nc + c] - u_star.values()[k * nc + c];
            }
        }
    }
    let mut out = u_star.clone();
    for node in 0..l.len() {
        let (i, j) = l.ij(node);
        let mut acc = vec![0.0; nc];
        for &(di, dj, w) in &kernel {
            let (ii, jj) = (i as i64 - di, j as i64 - dj);
            if ii < 0 || jj < 0 || ii as usize >= l.dims[0] || jj as usize >= l.dims[1] {
                continue;
            }
            let m = l.index(ii as usize, jj as usize);
            if !inner.contains(m) {
                continue;
            }
            for c in 0..nc {
                acc[c] += w * src[m * nc + c];
            }
        }
        for c in 0..nc {
            out.values_mut()[node * nc + c] += acc[c];
        }
    }
    Ok(out)
}
