//! Dense 2-D scalar fields and the finite-difference calculus built on them.
//!
//! Indexing is `(row, col)`; the `x` axis runs along columns and the `y`
//! axis along rows. All stencils clamp (replicate) at the image border.

use crate::error::{Error, Result};

/// Smallest grid accepted by the stencils.
pub const MIN_DIM: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    rows: usize,
    cols: usize,
    spacing: f64,
    data: Vec<f64>,
}

impl ScalarField {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::with_spacing(rows, cols, 1.0, data)
    }

    pub fn with_spacing(rows: usize, cols: usize, spacing: f64, data: Vec<f64>) -> Result<Self> {
        if rows < MIN_DIM || cols < MIN_DIM {
            return Err(Error::InvalidField(format!(
                "grid must be at least {MIN_DIM}x{MIN_DIM}, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::InvalidField(format!(
                "expected {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(Error::InvalidField(format!("spacing must be positive, got {spacing}")));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidField(format!("non-finite value at index {i}")));
        }
        Ok(Self { rows, cols, spacing, data })
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Result<Self> {
        Self::new(rows, cols, vec![value; rows * cols])
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self::new(rows, cols, data)
    }

    /// Builds a field with the same shape and spacing as `self`.
    /// The caller guarantees `data` is finite and correctly sized.
    pub(crate) fn like(&self, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), self.data.len());
        Self { rows: self.rows, cols: self.cols, spacing: self.spacing, data }
    }

    pub fn zeros_like(&self) -> Self {
        self.like(vec![0.0; self.data.len()])
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access to the raw values. Callers must keep them finite.
    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn idx(&self, r: usize, c: usize) -> usize {
        r * self.cols + c
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        let i = self.idx(r, c);
        self.data[i] = v;
    }

    /// Copy of the `rows x cols` block whose top-left corner is `(r0, c0)`.
    pub fn crop(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 || r0 + rows > self.rows || c0 + cols > self.cols {
            return Err(Error::InvalidField(format!(
                "crop {rows}x{cols} at ({r0}, {c0}) exceeds {}x{}",
                self.rows, self.cols
            )));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in r0..r0 + rows {
            data.extend_from_slice(&self.data[r * self.cols + c0..r * self.cols + c0 + cols]);
        }
        Self::with_spacing(rows, cols, self.spacing, data)
    }

    /// Overwrites the block at `(r0, c0)` with `block`.
    pub fn paste(&mut self, block: &ScalarField, r0: usize, c0: usize) -> Result<()> {
        if r0 + block.rows > self.rows || c0 + block.cols > self.cols {
            return Err(Error::InvalidField(format!(
                "paste {}x{} at ({r0}, {c0}) exceeds {}x{}",
                block.rows, block.cols, self.rows, self.cols
            )));
        }
        for r in 0..block.rows {
            let dst = (r0 + r) * self.cols + c0;
            self.data[dst..dst + block.cols].copy_from_slice(&block.data[r * block.cols..(r + 1) * block.cols]);
        }
        Ok(())
    }

    /// Value at a possibly out-of-range index, replicating the border.
    #[inline]
    pub fn get_clamped(&self, r: isize, c: isize) -> f64 {
        let r = r.clamp(0, self.rows as isize - 1) as usize;
        let c = c.clamp(0, self.cols as isize - 1) as usize;
        self.data[r * self.cols + c]
    }

    pub fn same_shape(&self, other: &ScalarField) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    pub fn check_same_shape(&self, other: &ScalarField) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                left_rows: self.rows,
                left_cols: self.cols,
                right_rows: other.rows,
                right_cols: other.cols,
            })
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        self.like(self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_same_shape(other)?;
        Ok(self.like(self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect()))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn dot(&self, other: &ScalarField) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Stack of equally-sized feature channels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureImage {
    channels: Vec<ScalarField>,
}

impl FeatureImage {
    pub fn new(channels: Vec<ScalarField>) -> Result<Self> {
        let first = channels
            .first()
            .ok_or_else(|| Error::InvalidField("feature image needs at least one channel".into()))?;
        for ch in &channels[1..] {
            first.check_same_shape(ch)?;
        }
        Ok(Self { channels })
    }

    pub fn depth(&self) -> usize {
        self.channels.len()
    }

    pub fn channels(&self) -> &[ScalarField] {
        &self.channels
    }

    pub fn channel(&self, k: usize) -> &ScalarField {
        &self.channels[k]
    }

    pub fn rows(&self) -> usize {
        self.channels[0].rows()
    }

    pub fn cols(&self) -> usize {
        self.channels[0].cols()
    }
}

/// First derivative along one axis: central differences inside, one-sided at the border.
fn diff_axis(f: &ScalarField, along_cols: bool) -> ScalarField {
    let (rows, cols) = (f.rows, f.cols);
    let h = f.spacing;
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let (n, i) = if along_cols { (cols, c) } else { (rows, r) };
            let at = |k: usize| if along_cols { f.get(r, k) } else { f.get(k, c) };
            out[r * cols + c] = if i == 0 {
                (at(1) - at(0)) / h
            } else if i == n - 1 {
                (at(n - 1) - at(n - 2)) / h
            } else {
                (at(i + 1) - at(i - 1)) / (2.0 * h)
            };
        }
    }
    f.like(out)
}

/// Returns `(d/dx, d/dy)`.
pub fn gradient(f: &ScalarField) -> (ScalarField, ScalarField) {
    (diff_axis(f, true), diff_axis(f, false))
}

pub fn divergence(vx: &ScalarField, vy: &ScalarField) -> Result<ScalarField> {
    vx.check_same_shape(vy)?;
    let dx = diff_axis(vx, true);
    let dy = diff_axis(vy, false);
    Ok(dx.like(dx.data.iter().zip(&dy.data).map(|(a, b)| a + b).collect()))
}

/// Five-point Laplacian with replicated borders.
pub fn laplacian(f: &ScalarField) -> ScalarField {
    let (rows, cols) = (f.rows as isize, f.cols as isize);
    let h2 = f.spacing * f.spacing;
    let mut out = Vec::with_capacity(f.len());
    for r in 0..rows {
        for c in 0..cols {
            let v = f.get_clamped(r, c);
            let s = f.get_clamped(r - 1, c)
                + f.get_clamped(r + 1, c)
                + f.get_clamped(r, c - 1)
                + f.get_clamped(r, c + 1);
            out.push((s - 4.0 * v) / h2);
        }
    }
    f.like(out)
}

/// Compactly supported cosine approximation of the Dirac delta.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothedDelta {
    eps: f64,
}

impl SmoothedDelta {
    pub fn new(eps: f64) -> Result<Self> {
        if !(eps.is_finite() && eps > 0.0) {
            return Err(Error::param(format!("eps must be positive, got {eps}")));
        }
        Ok(Self { eps })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        if x.abs() > self.eps {
            0.0
        } else {
            (1.0 + (std::f64::consts::PI * x / self.eps).cos()) / (2.0 * self.eps)
        }
    }

    #[inline]
    pub fn derivative(&self, x: f64) -> f64 {
        if x.abs() > self.eps {
            0.0
        } else {
            let pi = std::f64::consts::PI;
            -(pi / (2.0 * self.eps * self.eps)) * (pi * x / self.eps).sin()
        }
    }

    /// Antiderivative of [`value`](Self::value): a smoothed step from 0 to 1.
    #[inline]
    pub fn heaviside(&self, x: f64) -> f64 {
        if x <= -self.eps {
            0.0
        } else if x >= self.eps {
            1.0
        } else {
            let pi = std::f64::consts::PI;
            0.5 * (1.0 + x / self.eps + (pi * x / self.eps).sin() / pi)
        }
    }
}

pub fn delta_eps(x: f64, eps: f64) -> Result<f64> {
    Ok(SmoothedDelta::new(eps)?.value(x))
}

/// Unit step with `H(0) = 1/2`, so that `H(x) + H(-x) = 1` everywhere.
#[inline]
pub fn heaviside(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        0.0
    } else {
        0.5
    }
}

/// Bilinear interpolation at column coordinate `x` and row coordinate `y`
/// (grid units). Coordinates outside the grid are clamped to the border.
pub fn bilinear_sample(f: &ScalarField, x: f64, y: f64) -> f64 {
    let x = if x.is_nan() { 0.0 } else { x.clamp(0.0, (f.cols - 1) as f64) };
    let y = if y.is_nan() { 0.0 } else { y.clamp(0.0, (f.rows - 1) as f64) };
    let c0 = (x.floor() as usize).min(f.cols - 2);
    let r0 = (y.floor() as usize).min(f.rows - 2);
    let tx = x - c0 as f64;
    let ty = y - r0 as f64;
    let v00 = f.get(r0, c0);
    let v01 = f.get(r0, c0 + 1);
    let v10 = f.get(r0 + 1, c0);
    let v11 = f.get(r0 + 1, c0 + 1);
    let top = v00 + (v01 - v00) * tx;
    let bottom = v10 + (v11 - v10) * tx;
    top + (bottom - top) * ty
}

fn gaussian_taps(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as usize;
    let mut taps: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= s);
    taps
}

/// Separable Gaussian blur (pixel units), replicated borders. `sigma <= 0` is the identity.
pub fn gaussian_blur(f: &ScalarField, sigma: f64) -> ScalarField {
    if sigma <= 0.0 {
        return f.clone();
    }
    let taps = gaussian_taps(sigma);
    let radius = (taps.len() / 2) as isize;
    let (rows, cols) = (f.rows as isize, f.cols as isize);
    let mut tmp = vec![0.0; f.len()];
    for r in 0..rows {
        for c in 0..cols {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                acc += t * f.get_clamped(r, c + k as isize - radius);
            }
            tmp[(r * cols + c) as usize] = acc;
        }
    }
    let tmp = f.like(tmp);
    let mut out = vec![0.0; f.len()];
    for r in 0..rows {
        for c in 0..cols {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                acc += t * tmp.get_clamped(r + k as isize - radius, c);
            }
            out[(r * cols + c) as usize] = acc;
        }
    }
    f.like(out)
}
