//! Signed-distance level sets: fast-marching construction and
//! redistancing, curvature, and the semi-implicit AOS geodesic step.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::field::ScalarField;

/// Level-set function, negative inside the segmented region.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSet {
    pub phi: ScalarField,
    pub band_eps: f64,
}

impl LevelSet {
    pub fn new(phi: ScalarField, band_eps: f64) -> Self {
        Self { phi, band_eps }
    }

    /// Binary indicator of `{phi <= 0}`.
    pub fn mask(&self) -> ScalarField {
        inside_mask(&self.phi)
    }

    pub fn area(&self) -> usize {
        self.phi.data().iter().filter(|&&p| p <= 0.0).count()
    }
}

pub fn inside_mask(phi: &ScalarField) -> ScalarField {
    phi.map(|p| if p <= 0.0 { 1.0 } else { 0.0 })
}

/// Exact signed distance to a circle (negative inside).
pub fn disk_signed_distance(rows: usize, cols: usize, center_row: f64, center_col: f64, radius: f64) -> Result<ScalarField> {
    ScalarField::from_fn(rows, cols, |r, c| {
        (r as f64 - center_row).hypot(c as f64 - center_col) - radius
    })
}

#[derive(Clone, Copy, PartialEq)]
struct Trial {
    dist: f64,
    index: usize,
}

impl Eq for Trial {}

impl Ord for Trial {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on distance
        other.dist.total_cmp(&self.dist).then_with(|| other.index.cmp(&self.index))
    }
}

impl PartialOrd for Trial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// First-order, 4-neighbour fast marching of unsigned distances from the
/// seeded pixels outward over the whole grid.
fn fast_march(rows: usize, cols: usize, h: f64, seeds: &[(usize, f64)]) -> Vec<f64> {
    let n = rows * cols;
    let mut dist = vec![f64::INFINITY; n];
    let mut known = vec![false; n];
    let mut heap = BinaryHeap::new();
    for &(i, d) in seeds {
        if d < dist[i] {
            dist[i] = d;
        }
    }
    for &(i, _) in seeds {
        known[i] = true;
    }

    let solve = |dist: &[f64], known: &[bool], i: usize| -> f64 {
        let (r, c) = (i / cols, i % cols);
        let pick = |j: Option<usize>| j.filter(|&j| known[j]).map_or(f64::INFINITY, |j| dist[j]);
        let a = pick(c.checked_sub(1).map(|cc| r * cols + cc))
            .min(pick((c + 1 < cols).then(|| r * cols + c + 1)));
        let b = pick(r.checked_sub(1).map(|rr| rr * cols + c))
            .min(pick((r + 1 < rows).then(|| (r + 1) * cols + c)));
        if (a - b).abs() >= h {
            a.min(b) + h
        } else {
            0.5 * (a + b + (2.0 * h * h - (a - b) * (a - b)).sqrt())
        }
    };

    let neighbours = |i: usize| {
        let (r, c) = (i / cols, i % cols);
        [
            (r > 0).then(|| i - cols),
            (r + 1 < rows).then(|| i + cols),
            (c > 0).then(|| i - 1),
            (c + 1 < cols).then(|| i + 1),
        ]
    };

    for &(i, _) in seeds {
        for j in neighbours(i).into_iter().flatten() {
            if !known[j] {
                let d = solve(&dist, &known, j);
                if d < dist[j] {
                    dist[j] = d;
                    heap.push(Trial { dist: d, index: j });
                }
            }
        }
    }

    while let Some(Trial { dist: d, index: i }) = heap.pop() {
        if known[i] || d > dist[i] {
            continue;
        }
        known[i] = true;
        for j in neighbours(i).into_iter().flatten() {
            if !known[j] {
                let nd = solve(&dist, &known, j);
                if nd < dist[j] {
                    dist[j] = nd;
                    heap.push(Trial { dist: nd, index: j });
                }
            }
        }
    }
    dist
}

/// Rebuilds `phi` as a signed distance function with the same zero level set.
///
/// Pixels adjacent to a sign change are seeded with the sub-pixel distance to
/// the linearly interpolated crossing; the rest is filled by fast marching.
pub fn redistance_field(phi: &ScalarField) -> Result<ScalarField> {
    let (rows, cols) = (phi.rows(), phi.cols());
    let h = phi.spacing();
    let p = phi.data();
    let inside = |v: f64| v <= 0.0;
    let mut seeds = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            let v = p[i];
            if v == 0.0 {
                seeds.push((i, 0.0));
                continue;
            }
            // Per axis: the slope towards the nearest crossing if there is one,
            // otherwise a plain difference. Distance is |phi| / |slope|.
            let axis = |prev: Option<usize>, next: Option<usize>| -> (f64, bool) {
                let mut best: Option<(f64, f64)> = None;
                for j in [prev, next].into_iter().flatten() {
                    let w = p[j];
                    if inside(w) != inside(v) {
                        let theta = v / (v - w);
                        if best.map_or(true, |(t, _)| theta < t) {
                            best = Some((theta, (w - v) / h));
                        }
                    }
                }
                match (best, prev, next) {
                    (Some((_, slope)), _, _) => (slope, true),
                    (None, Some(a), Some(b)) => ((p[b] - p[a]) / (2.0 * h), false),
                    (None, Some(a), None) => ((v - p[a]) / h, false),
                    (None, None, Some(b)) => ((p[b] - v) / h, false),
                    (None, None, None) => (0.0, false),
                }
            };
            let (gx, cx) = axis(c.checked_sub(1).map(|cc| r * cols + cc), (c + 1 < cols).then(|| i + 1));
            let (gy, cy) = axis(r.checked_sub(1).map(|rr| rr * cols + c), (r + 1 < rows).then(|| i + cols));
            if !cx && !cy {
                continue;
            }
            seeds.push((i, v.abs() / gx.hypot(gy)));
        }
    }
    if seeds.is_empty() {
        return Err(Error::ContourVanished);
    }
    let dist = fast_march(rows, cols, h, &seeds);
    let data = p
        .iter()
        .zip(&dist)
        .map(|(&v, &d)| if inside(v) { -d } else { d })
        .collect();
    Ok(phi.like(data))
}

pub fn redistance(ls: &LevelSet) -> Result<LevelSet> {
    Ok(LevelSet { phi: redistance_field(&ls.phi)?, band_eps: ls.band_eps })
}

/// Signed distance of a binary mask's boundary, negative inside.
/// The interface sits halfway between inside and outside pixel centres.
pub fn signed_distance_from_mask(mask: &ScalarField, band_eps: f64) -> Result<LevelSet> {
    let inside = mask.data().iter().filter(|&&m| m > 0.5).count();
    if inside == 0 || inside == mask.len() {
        return Err(Error::param("mask must contain both inside and outside pixels"));
    }
    let phi0 = mask.map(|m| if m > 0.5 { -1.0 } else { 1.0 });
    Ok(LevelSet { phi: redistance_field(&phi0)?, band_eps })
}

/// Curvature `div(grad phi / |grad phi|)` by central differences.
///
/// Positive on convex boundaries of regions where `phi` is negative inside
/// (`1/r` on a circle). Pixels with `|grad phi| <= 1e-8` get zero; their
/// count is returned alongside the field.
pub fn curvature_with_count(phi: &ScalarField) -> (ScalarField, usize) {
    let (rows, cols) = (phi.rows() as isize, phi.cols() as isize);
    let h = phi.spacing();
    let mut out = Vec::with_capacity(phi.len());
    let mut degenerate = 0;
    for r in 0..rows {
        for c in 0..cols {
            let f = |dr: isize, dc: isize| phi.get_clamped(r + dr, c + dc);
            let v = f(0, 0);
            let px = (f(0, 1) - f(0, -1)) / (2.0 * h);
            let py = (f(1, 0) - f(-1, 0)) / (2.0 * h);
            let pxx = (f(0, 1) - 2.0 * v + f(0, -1)) / (h * h);
            let pyy = (f(1, 0) - 2.0 * v + f(-1, 0)) / (h * h);
            let pxy = (f(1, 1) - f(1, -1) - f(-1, 1) + f(-1, -1)) / (4.0 * h * h);
            let g2 = px * px + py * py;
            if g2.sqrt() <= 1e-8 {
                degenerate += 1;
                out.push(0.0);
                continue;
            }
            out.push((pxx * py * py - 2.0 * px * py * pxy + pyy * px * px) / (g2 * g2.sqrt()));
        }
    }
    (phi.like(out), degenerate)
}

pub fn curvature(phi: &ScalarField) -> ScalarField {
    curvature_with_count(phi).0
}

/// Solves a tridiagonal system in place (Thomas algorithm).
/// `lower[0]` and `upper[n-1]` are ignored.
pub(crate) fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &mut [f64], scratch: &mut [f64]) {
    let n = diag.len();
    let mut beta = diag[0];
    rhs[0] /= beta;
    for i in 1..n {
        scratch[i] = upper[i - 1] / beta;
        beta = diag[i] - lower[i] * scratch[i];
        rhs[i] = (rhs[i] - lower[i] * rhs[i - 1]) / beta;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= scratch[i + 1] * rhs[i + 1];
    }
}

/// Implicit 1-D diffusion `(I - tau A(g))^{-1} line` with Neumann ends and
/// arithmetic-mean face diffusivities.
fn implicit_line(line: &mut [f64], g: &[f64], tau: f64, lower: &mut [f64], diag: &mut [f64], upper: &mut [f64], scratch: &mut [f64]) {
    let n = line.len();
    for i in 0..n {
        let left = if i > 0 { 0.5 * (g[i - 1] + g[i]) } else { 0.0 };
        let right = if i + 1 < n { 0.5 * (g[i] + g[i + 1]) } else { 0.0 };
        lower[i] = -tau * left;
        upper[i] = -tau * right;
        diag[i] = 1.0 + tau * (left + right);
    }
    solve_tridiagonal(lower, diag, upper, line, scratch);
}

/// One AOS step of `phi_t = div(g grad phi)`:
/// `phi <- 1/2 sum_axis (I - 2 dt A_axis(g))^{-1} phi`.
pub fn aos_geodesic_step(phi: &ScalarField, g: &ScalarField, dt: f64) -> Result<ScalarField> {
    phi.check_same_shape(g)?;
    if !(dt.is_finite() && dt >= 0.0) {
        return Err(Error::param(format!("dt must be non-negative, got {dt}")));
    }
    if g.data().iter().any(|&v| !(v > 0.0)) {
        return Err(Error::param("edge detector must be strictly positive"));
    }
    if dt == 0.0 {
        return Ok(phi.clone());
    }
    let (rows, cols) = (phi.rows(), phi.cols());
    let tau = 2.0 * dt / (phi.spacing() * phi.spacing());
    let n = rows.max(cols);
    let (mut lo, mut di, mut up, mut sc) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);

    let mut along_x = phi.data().to_vec();
    for r in 0..rows {
        let span = r * cols..(r + 1) * cols;
        implicit_line(&mut along_x[span.clone()], &g.data()[span], tau, &mut lo, &mut di, &mut up, &mut sc);
    }

    let mut out = along_x;
    let mut col = vec![0.0; rows];
    let mut gcol = vec![0.0; rows];
    for c in 0..cols {
        for r in 0..rows {
            col[r] = phi.get(r, c);
            gcol[r] = g.get(r, c);
        }
        implicit_line(&mut col, &gcol, tau, &mut lo[..rows], &mut di[..rows], &mut up[..rows], &mut sc[..rows]);
        for r in 0..rows {
            let i = r * cols + c;
            out[i] = 0.5 * (out[i] + col[r]);
        }
    }
    Ok(phi.like(out))
}

/// Sub-pixel zero crossings of `phi` along grid edges, as `(row, col)` points.
pub fn zero_crossings(phi: &ScalarField) -> Vec<(f64, f64)> {
    let (rows, cols) = (phi.rows(), phi.cols());
    let mut pts = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let v = phi.get(r, c);
            if c + 1 < cols {
                let w = phi.get(r, c + 1);
                if (v <= 0.0) != (w <= 0.0) {
                    pts.push((r as f64, c as f64 + v / (v - w)));
                }
            }
            if r + 1 < rows {
                let w = phi.get(r + 1, c);
                if (v <= 0.0) != (w <= 0.0) {
                    pts.push((r as f64 + v / (v - w), c as f64));
                }
            }
        }
    }
    pts
}
