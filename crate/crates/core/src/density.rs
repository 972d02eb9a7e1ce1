//! Kernel density estimates over weighted regions, Bhattacharyya
//! coefficients and the trained target model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{FeatureImage, ScalarField, SmoothedDelta};

/// Kernel support in bandwidths.
pub const KERNEL_SUPPORT: f64 = 4.0;
/// `exp(-KERNEL_SUPPORT^2 / 2)`.
const TAIL: f64 = 3.354_626_279_025_118_4e-4;
/// Integral of the tapered profile over `[-4, 4]`.
const TAPERED_MASS: f64 = 2.489_472_725_423_396_6;
/// Floor added to empirical pdf bins before taking target/empirical ratios.
pub const PDF_FLOOR: f64 = 1e-12;
pub const MIN_BINS: usize = 16;
/// Tolerance on the trapezoidal integral of every stored pdf.
pub const NORMALIZATION_TOL: f64 = 1e-6;

/// Uniform grid of `n_bins` nodes spanning `[z_min, z_max]` inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinGrid {
    pub z_min: f64,
    pub z_max: f64,
    pub n_bins: usize,
}

impl BinGrid {
    pub fn new(z_min: f64, z_max: f64, n_bins: usize) -> Result<Self> {
        let g = Self { z_min, z_max, n_bins };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_bins < MIN_BINS {
            return Err(Error::param(format!("need at least {MIN_BINS} bins, got {}", self.n_bins)));
        }
        if !(self.z_min.is_finite() && self.z_max.is_finite() && self.z_max > self.z_min) {
            return Err(Error::param(format!(
                "bin range must satisfy z_max > z_min, got [{}, {}]",
                self.z_min, self.z_max
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn step(&self) -> f64 {
        (self.z_max - self.z_min) / (self.n_bins - 1) as f64
    }

    #[inline]
    pub fn node(&self, i: usize) -> f64 {
        self.z_min + i as f64 * self.step()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_bins).map(|i| self.node(i)).collect()
    }

    /// Trapezoidal quadrature weights (already multiplied by the step).
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let h = self.step();
        let mut w = vec![h; self.n_bins];
        w[0] = 0.5 * h;
        w[self.n_bins - 1] = 0.5 * h;
        w
    }

    pub fn integrate(&self, values: &[f64]) -> f64 {
        let h = self.step();
        let n = values.len();
        let inner: f64 = values[1..n - 1].iter().sum();
        h * (inner + 0.5 * (values[0] + values[n - 1]))
    }

    /// Linear interpolation of grid samples at `z`, clamped to the grid ends.
    pub fn interpolate(&self, values: &[f64], z: f64) -> f64 {
        let t = (z - self.z_min) / self.step();
        if !(t > 0.0) {
            return values[0];
        }
        let last = self.n_bins - 1;
        if t >= last as f64 {
            return values[last];
        }
        let i = t.floor() as usize;
        let f = t - i as f64;
        values[i] + f * (values[i + 1] - values[i])
    }

    pub fn check_same(&self, other: &BinGrid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::BinGridMismatch(format!(
                "[{}, {}]x{} vs [{}, {}]x{}",
                self.z_min, self.z_max, self.n_bins, other.z_min, other.z_max, other.n_bins
            )))
        }
    }
}

/// Probability density sampled on a [`BinGrid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pdf1D {
    pub z_min: f64,
    pub z_max: f64,
    pub n_bins: usize,
    pub values: Vec<f64>,
}

impl Pdf1D {
    /// Wraps already-normalized samples, checking every invariant.
    pub fn new(grid: BinGrid, values: Vec<f64>) -> Result<Self> {
        let pdf = Self { z_min: grid.z_min, z_max: grid.z_max, n_bins: grid.n_bins, values };
        pdf.validate()?;
        Ok(pdf)
    }

    /// Normalizes arbitrary non-negative samples to unit trapezoidal mass.
    pub fn from_unnormalized(grid: BinGrid, mut values: Vec<f64>) -> Result<Self> {
        grid.validate()?;
        if values.len() != grid.n_bins {
            return Err(Error::LengthMismatch { expected: grid.n_bins, got: values.len() });
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::param("pdf samples must be finite and non-negative"));
        }
        let mass = grid.integrate(&values);
        if !(mass > 0.0) {
            return Err(Error::param("no probability mass falls on the bin grid"));
        }
        values.iter_mut().for_each(|v| *v /= mass);
        Ok(Self { z_min: grid.z_min, z_max: grid.z_max, n_bins: grid.n_bins, values })
    }

    pub fn grid(&self) -> BinGrid {
        BinGrid { z_min: self.z_min, z_max: self.z_max, n_bins: self.n_bins }
    }

    pub fn integral(&self) -> f64 {
        self.grid().integrate(&self.values)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid().validate()?;
        if self.values.len() != self.n_bins {
            return Err(Error::LengthMismatch { expected: self.n_bins, got: self.values.len() });
        }
        if self.values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::param("pdf values must be finite and non-negative"));
        }
        let mass = self.integral();
        if (mass - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::param(format!("pdf integrates to {mass}, expected 1")));
        }
        Ok(())
    }

    /// Trapezoidal mass over the nodes with `lo <= z <= hi`.
    pub fn mass_between(&self, lo: f64, hi: f64) -> f64 {
        let g = self.grid();
        let w = g.trapezoid_weights();
        (0..self.n_bins)
            .filter(|&i| {
                let z = g.node(i);
                z >= lo && z <= hi
            })
            .map(|i| w[i] * self.values[i])
            .sum()
    }

    pub fn mode(&self) -> f64 {
        let (i, _) = self
            .values
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
        self.grid().node(i)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Gaussian,
}

/// Smoothing kernel `K`: a Gaussian truncated at four bandwidths and
/// rescaled so it still integrates to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub bandwidth: f64,
}

impl KernelSpec {
    pub fn gaussian(bandwidth: f64) -> Result<Self> {
        let k = Self { kind: KernelKind::Gaussian, bandwidth };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth.is_finite() && self.bandwidth > 0.0) {
            return Err(Error::param(format!("kernel bandwidth must be positive, got {}", self.bandwidth)));
        }
        Ok(())
    }

    #[inline]
    pub fn support(&self) -> f64 {
        KERNEL_SUPPORT * self.bandwidth
    }

    #[inline]
    pub fn eval(&self, u: f64) -> f64 {
        let h = self.bandwidth;
        if u.abs() > KERNEL_SUPPORT * h {
            return 0.0;
        }
        let s = u / h;
        // Gaussian minus a quadratic so that value and slope vanish at the
        // support edge; keeps pdfs differentiable as samples move.
        ((-0.5 * s * s).exp() - TAIL * (9.0 - 0.5 * s * s)) / (h * TAPERED_MASS)
    }

    /// `K'(u)`.
    #[inline]
    pub fn derivative(&self, u: f64) -> f64 {
        let h = self.bandwidth;
        if u.abs() > KERNEL_SUPPORT * h {
            return 0.0;
        }
        let s = u / h;
        s * (TAIL - (-0.5 * s * s).exp()) / (h * h * TAPERED_MASS)
    }

    /// Index range of grid nodes within the kernel support around `v`.
    #[inline]
    pub(crate) fn node_range(&self, grid: &BinGrid, v: f64) -> Option<(usize, usize)> {
        let step = grid.step();
        let lo = ((v - self.support() - grid.z_min) / step).ceil().max(0.0);
        let hi = ((v + self.support() - grid.z_min) / step).floor().min((grid.n_bins - 1) as f64);
        if !(lo <= hi) {
            return None;
        }
        Some((lo as usize, hi as usize))
    }
}

/// Weighted KDE of `values` on `grid`, renormalized to unit mass.
pub fn kde_weighted(values: &[f64], weights: &[f64], kernel: &KernelSpec, grid: &BinGrid) -> Result<Pdf1D> {
    kernel.validate()?;
    grid.validate()?;
    if values.len() != weights.len() {
        return Err(Error::LengthMismatch { expected: values.len(), got: weights.len() });
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::param("region weights must be finite and non-negative"));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::EmptyRegion);
    }
    let mut acc = vec![0.0; grid.n_bins];
    for (&v, &w) in values.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        if let Some((lo, hi)) = kernel.node_range(grid, v) {
            for (i, slot) in acc.iter_mut().enumerate().take(hi + 1).skip(lo) {
                *slot += w * kernel.eval(grid.node(i) - v);
            }
        }
    }
    acc.iter_mut().for_each(|a| *a /= total);
    Pdf1D::from_unnormalized(*grid, acc)
}

/// Empirical pdf of one feature channel over the region described by
/// `region_indicator` (e.g. `H(-phi)` or a binary mask).
pub fn kde_region(
    channel: &ScalarField,
    region_indicator: &ScalarField,
    kernel: &KernelSpec,
    grid: &BinGrid,
) -> Result<Pdf1D> {
    channel.check_same_shape(region_indicator)?;
    kde_weighted(channel.data(), region_indicator.data(), kernel, grid)
}

/// `delta_eps(phi)` as a field.
pub fn band_weights(phi: &ScalarField, eps: f64) -> Result<ScalarField> {
    let delta = SmoothedDelta::new(eps)?;
    Ok(phi.map(|p| delta.value(p)))
}

/// Curvature pdf over the smoothed band around the zero level set of `phi`.
pub fn kde_curvature_band(
    kappa: &ScalarField,
    phi: &ScalarField,
    eps: f64,
    kernel: &KernelSpec,
    grid: &BinGrid,
) -> Result<Pdf1D> {
    kappa.check_same_shape(phi)?;
    let w = band_weights(phi, eps)?;
    match kde_weighted(kappa.data(), w.data(), kernel, grid) {
        Err(Error::EmptyRegion) => Err(Error::EmptyBand),
        other => other,
    }
}

/// Trapezoidal Bhattacharyya coefficient of two pdfs on the same grid.
pub fn bhattacharyya(p: &Pdf1D, q: &Pdf1D) -> Result<f64> {
    p.grid().check_same(&q.grid())?;
    let prod: Vec<f64> = p.values.iter().zip(&q.values).map(|(a, b)| (a * b).sqrt()).collect();
    Ok(p.grid().integrate(&prod))
}

/// Target pdfs learned from delineated training images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetModel {
    pub version: u32,
    /// Kernel shared by all feature channels.
    pub kernel: KernelSpec,
    pub curvature_kernel: KernelSpec,
    pub feature_pdfs: Vec<Pdf1D>,
    pub curvature_pdf: Pdf1D,
    pub feature_names: Vec<String>,
}

pub const MODEL_VERSION: u32 = 1;

impl TargetModel {
    pub fn depth(&self) -> usize {
        self.feature_pdfs.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != MODEL_VERSION {
            return Err(Error::Format(format!("unsupported model version {}", self.version)));
        }
        self.kernel.validate()?;
        self.curvature_kernel.validate()?;
        if self.feature_pdfs.is_empty() {
            return Err(Error::param("model has no feature pdfs"));
        }
        if self.feature_names.len() != self.feature_pdfs.len() {
            return Err(Error::LengthMismatch {
                expected: self.feature_pdfs.len(),
                got: self.feature_names.len(),
            });
        }
        for p in &self.feature_pdfs {
            p.validate()?;
        }
        self.curvature_pdf.validate()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// `B = prod_k B_k` together with the individual factors.
pub fn joint_bhattacharyya(model: &TargetModel, empirical: &[Pdf1D]) -> Result<(f64, Vec<f64>)> {
    if empirical.len() != model.depth() {
        return Err(Error::LengthMismatch { expected: model.depth(), got: empirical.len() });
    }
    let factors = model
        .feature_pdfs
        .iter()
        .zip(empirical)
        .map(|(t, e)| bhattacharyya(t, e))
        .collect::<Result<Vec<_>>>()?;
    Ok((factors.iter().product(), factors))
}

/// One delineated training image, already prepared for density estimation.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub features: FeatureImage,
    /// Binary mask of the delineated object.
    pub mask: ScalarField,
    /// Signed distance of the delineation; selects the curvature band.
    pub phi: ScalarField,
    /// Curvature of the regularized level set.
    pub kappa: ScalarField,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub feature_kernel: KernelSpec,
    pub feature_grids: Vec<BinGrid>,
    pub curvature_kernel: KernelSpec,
    pub curvature_grid: BinGrid,
    pub eps: f64,
    pub feature_names: Vec<String>,
}

pub const DEFAULT_BINS: usize = 128;
/// Curvature bandwidth used when the training band is empty or constant.
pub const DEFAULT_CURVATURE_BANDWIDTH: f64 = 0.05;
pub const DEFAULT_CURVATURE_RANGE: f64 = 0.3;
pub const DEFAULT_CURVATURE_BINS: usize = 256;

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let f = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] + f * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

/// Silverman's rule of thumb, `0.9 min(sd, IQR/1.34) n^(-1/5)`.
pub fn silverman_bandwidth(values: &[f64], n_eff: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * n_eff.max(1.0).powf(-0.2)
}

/// Derives kernels and bin grids from the training pool: the shared feature
/// bandwidth follows Silverman's rule on the in-mask values (with the mean
/// in-mask pixel count as sample size), and is floored at two bin widths;
/// each feature grid spans the whole-image pool range padded by `3h`. The
/// curvature bandwidth follows the same rule on curvatures within `eps` of
/// the delineations (one sample per delineation), on a fixed symmetric grid.
pub fn default_training_config(examples: &[TrainingExample], eps: f64) -> Result<TrainingConfig> {
    let first = examples.first().ok_or_else(|| Error::param("no training examples"))?;
    let depth = first.features.depth();
    let mut inside = Vec::new();
    let mut inside_count = 0usize;
    let mut ranges = vec![(f64::INFINITY, f64::NEG_INFINITY); depth];
    for ex in examples {
        if ex.features.depth() != depth {
            return Err(Error::LengthMismatch { expected: depth, got: ex.features.depth() });
        }
        for (k, ch) in ex.features.channels().iter().enumerate() {
            ranges[k].0 = ranges[k].0.min(ch.min());
            ranges[k].1 = ranges[k].1.max(ch.max());
            for (&v, &m) in ch.data().iter().zip(ex.mask.data()) {
                if m > 0.5 {
                    inside.push(v);
                }
            }
        }
        inside_count += ex.mask.data().iter().filter(|&&m| m > 0.5).count();
    }
    let n_eff = inside_count as f64 / examples.len() as f64;

    let band: Vec<f64> = examples
        .iter()
        .flat_map(|ex| {
            ex.kappa.data().iter().zip(ex.phi.data()).filter(|(_, p)| p.abs() <= eps).map(|(&k, _)| k)
        })
        .filter(|k| k.abs() <= DEFAULT_CURVATURE_RANGE)
        .collect();
    let curvature_grid = BinGrid::new(-DEFAULT_CURVATURE_RANGE, DEFAULT_CURVATURE_RANGE, DEFAULT_CURVATURE_BINS)?;
    // curvatures along one delineation are strongly correlated, so each
    // training curve counts as one sample
    let mut hc = silverman_bandwidth(&band, examples.len() as f64);
    if !(hc > 0.0) {
        hc = DEFAULT_CURVATURE_BANDWIDTH;
    }
    hc = hc.max(2.0 * curvature_grid.step());

    let mut h = silverman_bandwidth(&inside, n_eff);
    let widest = ranges.iter().map(|(lo, hi)| hi - lo).fold(0.0, f64::max);
    let floor = 2.0 * widest / (DEFAULT_BINS - 1 - 12) as f64;
    h = h.max(floor);
    if !(h > 0.0) {
        h = 1.0;
    }
    let feature_grids = ranges
        .iter()
        .map(|&(lo, hi)| BinGrid::new(lo - 3.0 * h, hi + 3.0 * h, DEFAULT_BINS))
        .collect::<Result<Vec<_>>>()?;
    let feature_names = if depth == 2 {
        vec!["gray".to_string(), "srad".to_string()]
    } else {
        (0..depth).map(|k| format!("feature{k}")).collect()
    };
    Ok(TrainingConfig {
        feature_kernel: KernelSpec::gaussian(h)?,
        feature_grids,
        curvature_kernel: KernelSpec::gaussian(hc)?,
        curvature_grid,
        eps,
        feature_names,
    })
}

fn average_pdfs(pdfs: &[Pdf1D], grid: BinGrid) -> Result<Pdf1D> {
    let mut mean = vec![0.0; grid.n_bins];
    for p in pdfs {
        for (m, v) in mean.iter_mut().zip(&p.values) {
            *m += v;
        }
    }
    let n = pdfs.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Pdf1D::from_unnormalized(grid, mean)
}

/// Averages per-image feature and curvature pdfs into a [`TargetModel`].
pub fn train_target(examples: &[TrainingExample], cfg: &TrainingConfig) -> Result<TargetModel> {
    if examples.is_empty() {
        return Err(Error::param("no training examples"));
    }
    let depth = cfg.feature_grids.len();
    if cfg.feature_names.len() != depth {
        return Err(Error::LengthMismatch { expected: depth, got: cfg.feature_names.len() });
    }
    let mut per_feature: Vec<Vec<Pdf1D>> = vec![Vec::with_capacity(examples.len()); depth];
    let mut curvature = Vec::with_capacity(examples.len());
    for (index, ex) in examples.iter().enumerate() {
        let wrap = |e: Error| Error::TrainingPair { index, source: Box::new(e) };
        if ex.features.depth() != depth {
            return Err(wrap(Error::LengthMismatch { expected: depth, got: ex.features.depth() }));
        }
        if ex.mask.data().iter().any(|&m| m != 0.0 && m != 1.0) {
            return Err(wrap(Error::param("mask must be binary")));
        }
        for (k, grid) in cfg.feature_grids.iter().enumerate() {
            let pdf = kde_region(ex.features.channel(k), &ex.mask, &cfg.feature_kernel, grid).map_err(wrap)?;
            per_feature[k].push(pdf);
        }
        curvature.push(
            kde_curvature_band(&ex.kappa, &ex.phi, cfg.eps, &cfg.curvature_kernel, &cfg.curvature_grid)
                .map_err(wrap)?,
        );
    }
    let feature_pdfs = per_feature
        .iter()
        .zip(&cfg.feature_grids)
        .map(|(pdfs, grid)| average_pdfs(pdfs, *grid))
        .collect::<Result<Vec<_>>>()?;
    Ok(TargetModel {
        version: MODEL_VERSION,
        kernel: cfg.feature_kernel,
        curvature_kernel: cfg.curvature_kernel,
        feature_pdfs,
        curvature_pdf: average_pdfs(&curvature, cfg.curvature_grid)?,
        feature_names: cfg.feature_names.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force_kde(values: &[f64], weights: &[f64], h: f64, grid: &BinGrid) -> Vec<f64> {
        // Independent reference: C1-tapered truncated Gaussian written out
        // longhand; the overall constant cancels in the renormalization.
        let norm = h;
        let total: f64 = weights.iter().sum();
        let mut out = Vec::with_capacity(grid.n_bins);
        for i in 0..grid.n_bins {
            let z = grid.z_min + i as f64 * (grid.z_max - grid.z_min) / (grid.n_bins - 1) as f64;
            let mut s = 0.0;
            for (v, w) in values.iter().zip(weights) {
                let u = z - v;
                if u.abs() <= 4.0 * h {
                    let q = u * u / (h * h);
                    s += w * ((-0.5 * q).exp() - (-8.0f64).exp() * (9.0 - 0.5 * q)) / norm;
                }
            }
            out.push(s / total);
        }
        let dz = (grid.z_max - grid.z_min) / (grid.n_bins - 1) as f64;
        let mut mass = 0.0;
        for i in 0..grid.n_bins {
            let t = if i == 0 || i == grid.n_bins - 1 { 0.5 } else { 1.0 };
            mass += t * out[i] * dz;
        }
        out.iter().map(|v| v / mass).collect()
    }

    #[test]
    fn kernel_derivative_and_edge_continuity() {
        let k = KernelSpec::gaussian(0.7).unwrap();
        for i in -40..=40 {
            let u = i as f64 * 0.07 + 0.013;
            let fd = (k.eval(u + 1e-6) - k.eval(u - 1e-6)) / 2e-6;
            assert!((fd - k.derivative(u)).abs() < 1e-7);
        }
        let edge = k.support();
        assert!(k.eval(edge - 1e-9).abs() < 1e-12);
        assert!(k.derivative(edge - 1e-9).abs() < 1e-8);
        assert!(k.eval(0.0) > k.eval(0.5) && k.eval(0.5) > k.eval(2.0));
    }

    #[test]
    fn kernel_integrates_to_one() {
        let k = KernelSpec::gaussian(0.3).unwrap();
        let grid = BinGrid::new(-2.0, 2.0, 4001).unwrap();
        let vals: Vec<f64> = grid.nodes().iter().map(|&z| k.eval(z)).collect();
        assert!((grid.integrate(&vals) - 1.0).abs() < 1e-6);
        assert!(KernelSpec::gaussian(0.0).is_err());
    }

    #[test]
    fn single_valued_region_gives_centered_kernel() {
        let ch = ScalarField::filled(8, 8, 5.0).unwrap();
        let w = ScalarField::filled(8, 8, 1.0).unwrap();
        let k = KernelSpec::gaussian(0.5).unwrap();
        let grid = BinGrid::new(0.0, 10.0, 101).unwrap();
        let p = kde_region(&ch, &w, &k, &grid).unwrap();
        assert!((p.mode() - 5.0).abs() < 1e-12);
        assert!((p.integral() - 1.0).abs() < 1e-12);
        let direct: Vec<f64> = grid.nodes().iter().map(|z| k.eval(z - 5.0)).collect();
        let mass = grid.integrate(&direct);
        for (v, d) in p.values.iter().zip(&direct) {
            assert!((v - d / mass).abs() < 1e-12);
        }
    }

    #[test]
    fn two_valued_region_is_bimodal_with_equal_mass() {
        let ch = ScalarField::from_fn(10, 10, |_, c| if c < 5 { 0.0 } else { 10.0 }).unwrap();
        let w = ScalarField::filled(10, 10, 1.0).unwrap();
        let k = KernelSpec::gaussian(0.3).unwrap();
        let grid = BinGrid::new(-2.0, 12.0, 281).unwrap();
        let p = kde_region(&ch, &w, &k, &grid).unwrap();
        assert!((p.mass_between(-2.0, 5.0) - 0.5).abs() < 1e-3);
        assert!((p.mass_between(5.0, 12.0) - 0.5).abs() < 1e-3);
    }

    #[test]
    fn kde_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ch = ScalarField::from_fn(32, 32, |_, _| rng.gen_range(0.0..4.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = ScalarField::from_fn(32, 32, |_, _| rng.gen_range(0.0..1.0)).unwrap();
        let grid = BinGrid::new(-1.0, 5.0, 128).unwrap();
        let k = KernelSpec::gaussian(0.2).unwrap();
        let p = kde_region(&ch, &w, &k, &grid).unwrap();
        let oracle = brute_force_kde(ch.data(), w.data(), 0.2, &grid);
        for (a, b) in p.values.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn empty_region_is_rejected() {
        let ch = ScalarField::filled(5, 5, 1.0).unwrap();
        let w = ScalarField::filled(5, 5, 0.0).unwrap();
        let k = KernelSpec::gaussian(0.2).unwrap();
        let grid = BinGrid::new(0.0, 2.0, 32).unwrap();
        assert!(matches!(kde_region(&ch, &w, &k, &grid), Err(Error::EmptyRegion)));
        let phi = ScalarField::filled(5, 5, 10.0).unwrap();
        assert!(matches!(kde_curvature_band(&ch, &phi, 2.0, &k, &grid), Err(Error::EmptyBand)));
    }

    #[test]
    fn curvature_band_equals_weighted_region() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let kappa = ScalarField::from_fn(20, 20, |_, _| rng.gen_range(-0.2..0.2)).unwrap();
        let phi = ScalarField::from_fn(20, 20, |r, _| r as f64 - 9.5).unwrap();
        let k = KernelSpec::gaussian(0.05).unwrap();
        let grid = BinGrid::new(-0.5, 0.5, 128).unwrap();
        let a = kde_curvature_band(&kappa, &phi, 2.0, &k, &grid).unwrap();
        let w = band_weights(&phi, 2.0).unwrap();
        let b = kde_region(&kappa, &w, &k, &grid).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bhattacharyya_examples() {
        let grid = BinGrid::new(-6.0, 7.0, 512).unwrap();
        let gauss = |m: f64| {
            let v = grid
                .nodes()
                .iter()
                .map(|z| (-(z - m) * (z - m) / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt())
                .collect();
            Pdf1D::from_unnormalized(grid, v).unwrap()
        };
        let p = gauss(0.0);
        let q = gauss(1.0);
        assert!((bhattacharyya(&p, &p).unwrap() - 1.0).abs() < 1e-6);
        assert!((bhattacharyya(&p, &q).unwrap() - (-0.125f64).exp()).abs() < 1e-3);

        let half = |left: bool| {
            let v = grid.nodes().iter().map(|&z| if (z < 0.5) == left { 1.0 } else { 0.0 }).collect();
            Pdf1D::from_unnormalized(grid, v).unwrap()
        };
        assert_eq!(bhattacharyya(&half(true), &half(false)).unwrap(), 0.0);

        let other = Pdf1D::from_unnormalized(BinGrid::new(-6.0, 7.0, 256).unwrap(), vec![1.0; 256]).unwrap();
        assert!(matches!(bhattacharyya(&p, &other), Err(Error::BinGridMismatch(_))));
    }

    fn random_pdf(grid: BinGrid, seed: u64) -> Pdf1D {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Pdf1D::from_unnormalized(grid, (0..grid.n_bins).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
    }

    fn model_with(pdfs: Vec<Pdf1D>) -> TargetModel {
        let grid = BinGrid::new(-0.5, 0.5, 32).unwrap();
        TargetModel {
            version: MODEL_VERSION,
            kernel: KernelSpec::gaussian(0.1).unwrap(),
            curvature_kernel: KernelSpec::gaussian(0.05).unwrap(),
            feature_names: (0..pdfs.len()).map(|k| format!("f{k}")).collect(),
            feature_pdfs: pdfs,
            curvature_pdf: Pdf1D::from_unnormalized(grid, vec![1.0; 32]).unwrap(),
        }
    }

    #[test]
    fn joint_coefficient_is_product_of_factors() {
        let grid = BinGrid::new(0.0, 1.0, 64).unwrap();
        let targets: Vec<Pdf1D> = (0..3).map(|s| random_pdf(grid, s)).collect();
        let emp: Vec<Pdf1D> = (10..13).map(|s| random_pdf(grid, s)).collect();
        let model = model_with(targets.clone());
        let (b, factors) = joint_bhattacharyya(&model, &emp).unwrap();
        let expected: f64 = targets.iter().zip(&emp).map(|(t, e)| bhattacharyya(t, e).unwrap()).product();
        assert!((b - expected).abs() < 1e-12);
        assert_eq!(factors.len(), 3);

        let (one, _) = joint_bhattacharyya(&model, &targets).unwrap();
        assert!((one - 1.0).abs() < 1e-6);
        assert!(joint_bhattacharyya(&model, &emp[..2]).is_err());
    }

    #[test]
    fn model_json_roundtrip_and_validation() {
        let grid = BinGrid::new(0.0, 1.0, 64).unwrap();
        let model = model_with(vec![random_pdf(grid, 1), random_pdf(grid, 2)]);
        let text = model.to_json().unwrap();
        assert!(text.contains("\"kind\": \"gaussian\""));
        let back = TargetModel::from_json(&text).unwrap();
        assert_eq!(back, model);

        let mut broken = model.clone();
        broken.curvature_pdf.values[3] += 1.0;
        let text = broken.to_json().unwrap();
        assert!(TargetModel::from_json(&text).is_err());
        assert!(TargetModel::from_json(&text.replace("\"version\"", "\"extra\": 1, \"version\"")).is_err());
    }

    fn example_from(values: &ScalarField, mask: &ScalarField) -> TrainingExample {
        let phi = mask.map(|m| if m > 0.5 { -1.0 } else { 1.0 });
        TrainingExample {
            features: FeatureImage::new(vec![values.clone()]).unwrap(),
            mask: mask.clone(),
            phi,
            kappa: values.zeros_like(),
        }
    }

    fn single_feature_cfg() -> TrainingConfig {
        TrainingConfig {
            feature_kernel: KernelSpec::gaussian(0.3).unwrap(),
            feature_grids: vec![BinGrid::new(0.0, 10.0, 128).unwrap()],
            curvature_kernel: KernelSpec::gaussian(0.05).unwrap(),
            curvature_grid: BinGrid::new(-0.5, 0.5, 128).unwrap(),
            eps: 2.0,
            feature_names: vec!["gray".into()],
        }
    }

    #[test]
    fn training_on_one_image_reproduces_its_pdfs() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let u = ScalarField::from_fn(16, 16, |_, _| rng.gen_range(2.0..8.0)).unwrap();
        let mask = ScalarField::from_fn(16, 16, |r, c| if r > 3 && c > 3 && r < 12 && c < 12 { 1.0 } else { 0.0 })
            .unwrap();
        let ex = example_from(&u, &mask);
        let cfg = single_feature_cfg();
        let model = train_target(&[ex.clone()], &cfg).unwrap();
        let direct = kde_region(&u, &mask, &cfg.feature_kernel, &cfg.feature_grids[0]).unwrap();
        for (a, b) in model.feature_pdfs[0].values.iter().zip(&direct.values) {
            assert!((a - b).abs() < 1e-12);
        }
        let curv = kde_curvature_band(&ex.kappa, &ex.phi, 2.0, &cfg.curvature_kernel, &cfg.curvature_grid).unwrap();
        assert_eq!(model.curvature_pdf.values.len(), curv.values.len());
        for (a, b) in model.curvature_pdf.values.iter().zip(&curv.values) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn training_two_disjoint_levels_is_bimodal() {
        let mask = ScalarField::from_fn(12, 12, |r, _| if r < 6 { 1.0 } else { 0.0 }).unwrap();
        let a = example_from(&ScalarField::filled(12, 12, 2.0).unwrap(), &mask);
        let b = example_from(&ScalarField::filled(12, 12, 8.0).unwrap(), &mask);
        let model = train_target(&[a, b], &single_feature_cfg()).unwrap();
        let p = &model.feature_pdfs[0];
        assert!((p.mass_between(0.0, 5.0) - 0.5).abs() < 1e-3);
        assert!((p.mass_between(5.0, 10.0) - 0.5).abs() < 1e-3);
    }

    #[test]
    fn averaging_commutes_with_normalization() {
        let grid = BinGrid::new(0.0, 1.0, 40).unwrap();
        let pdfs: Vec<Pdf1D> = (0..5).map(|s| random_pdf(grid, 100 + s)).collect();
        let avg = average_pdfs(&pdfs, grid).unwrap();
        let mut plain = vec![0.0; grid.n_bins];
        for p in &pdfs {
            for (m, v) in plain.iter_mut().zip(&p.values) {
                *m += v / 5.0;
            }
        }
        for (a, b) in avg.values.iter().zip(&plain) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_training_mask_names_the_pair() {
        let u = ScalarField::filled(8, 8, 3.0).unwrap();
        let good = example_from(&u, &ScalarField::from_fn(8, 8, |r, _| (r < 4) as u8 as f64).unwrap());
        let bad = example_from(&u, &ScalarField::filled(8, 8, 0.0).unwrap());
        match train_target(&[good, bad], &single_feature_cfg()) {
            Err(Error::TrainingPair { index, .. }) => assert_eq!(index, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    proptest::proptest! {
        #[test]
        fn bhattacharyya_bounded_and_symmetric(s1 in 0u64..1000, s2 in 0u64..1000) {
            let grid = BinGrid::new(-1.0, 1.0, 48).unwrap();
            let p = random_pdf(grid, s1);
            let q = random_pdf(grid, s2 + 1000);
            let a = bhattacharyya(&p, &q).unwrap();
            let b = bhattacharyya(&q, &p).unwrap();
            proptest::prop_assert!(a >= 0.0 && a <= 1.0 + 1e-6);
            proptest::prop_assert!((a - b).abs() < 1e-15);
        }

        #[test]
        fn kde_is_invariant_to_weight_scaling(seed in 0u64..500, scale in 0.01f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let vals: Vec<f64> = (0..64).map(|_| rng.gen_range(0.0..1.0)).collect();
            let w: Vec<f64> = (0..64).map(|_| rng.gen_range(0.0..1.0)).collect();
            let ws: Vec<f64> = w.iter().map(|v| v * scale).collect();
            let k = KernelSpec::gaussian(0.08).unwrap();
            let grid = BinGrid::new(-0.5, 1.5, 64).unwrap();
            let a = kde_weighted(&vals, &w, &k, &grid).unwrap();
            let b = kde_weighted(&vals, &ws, &k, &grid).unwrap();
            for (x, y) in a.values.iter().zip(&b.values) {
                proptest::prop_assert!((x - y).abs() < 1e-12 * x.abs().max(1.0));
            }
            proptest::prop_assert!((a.integral() - 1.0).abs() < 1e-6);
            proptest::prop_assert!(a.values.iter().all(|v| *v >= 0.0));
        }
    }
}
