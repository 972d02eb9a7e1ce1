//! Velocity fields that raise the Bhattacharyya coefficients of the
//! feature pdfs (photometric) and of the curvature pdf (shape).
//!
//! Both are the first variations of the discrete coefficients as they are
//! actually computed: pdfs are weighted KDEs renormalized by their trapezoid
//! mass, so the kernel's discrete mass `m(z) = sum_j t_j K(z_j - z)` appears
//! next to each coefficient. It is 1 up to quadrature error, and makes the
//! velocities vanish exactly when the pdfs match.

use serde::{Deserialize, Serialize};

use crate::density::{bhattacharyya, kde_curvature_band, kde_weighted, BinGrid, KernelSpec, Pdf1D, TargetModel, PDF_FLOOR};
use crate::error::{Error, Result};
use crate::field::{FeatureImage, ScalarField, SmoothedDelta};
use crate::filters::{diffusion_operator, tangent_projector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhotometricDiagnostics {
    /// Joint coefficient `B = prod_k B_k`.
    pub b: f64,
    pub factors: Vec<f64>,
    /// Total region weight (pixel count for a hard indicator).
    pub area: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeDiagnostics {
    pub b_kappa: f64,
    /// `sum delta_eps(phi)`.
    pub band_mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocityDiagnostics {
    pub b: f64,
    pub factors: Vec<f64>,
    pub b_kappa: f64,
    pub area: f64,
    pub band_mass: f64,
}

impl VelocityDiagnostics {
    pub fn combine(p: &PhotometricDiagnostics, s: &ShapeDiagnostics) -> Self {
        Self { b: p.b, factors: p.factors.clone(), b_kappa: s.b_kappa, area: p.area, band_mass: s.band_mass }
    }
}

/// `out_i = sum_j t_j f_j K(z_i - z_j)` on the bin grid.
fn grid_convolve(kernel: &KernelSpec, grid: &BinGrid, t: &[f64], f: &[f64]) -> Vec<f64> {
    (0..grid.n_bins)
        .map(|i| {
            let zi = grid.node(i);
            match kernel.node_range(grid, zi) {
                Some((lo, hi)) => (lo..=hi).map(|j| t[j] * f[j] * kernel.eval(zi - grid.node(j))).sum(),
                None => 0.0,
            }
        })
        .collect()
}

/// Square-root likelihood ratio `sqrt(target / (p + floor))` per node.
fn ratio(target: &Pdf1D, p: &Pdf1D) -> Vec<f64> {
    target.values.iter().zip(&p.values).map(|(t, q)| (t / (q + PDF_FLOOR)).sqrt()).collect()
}

/// Photometric velocity with the hard region `{phi <= 0}`.
pub fn velocity_photometric(
    features: &FeatureImage,
    phi: &ScalarField,
    model: &TargetModel,
) -> Result<(ScalarField, PhotometricDiagnostics)> {
    let w = phi.map(|p| if p <= 0.0 { 1.0 } else { 0.0 });
    velocity_photometric_weighted(features, &w, model)
}

/// Photometric velocity for an arbitrary non-negative region weight field
/// `w`. The returned field `V` satisfies `dB = sum_x V(x) (-dw(x))`; with
/// `w = H(-phi)` this is `dB = <delta(phi) V, dphi>`.
pub fn velocity_photometric_weighted(
    features: &FeatureImage,
    weights: &ScalarField,
    model: &TargetModel,
) -> Result<(ScalarField, PhotometricDiagnostics)> {
    if features.depth() != model.depth() {
        return Err(Error::LengthMismatch { expected: model.depth(), got: features.depth() });
    }
    features.channel(0).check_same_shape(weights)?;
    let kernel = &model.kernel;
    let area: f64 = weights.data().iter().sum();

    let mut factors = Vec::with_capacity(model.depth());
    let mut per_channel = Vec::with_capacity(model.depth());
    for (k, target) in model.feature_pdfs.iter().enumerate() {
        let grid = target.grid();
        let channel = features.channel(k);
        let p = kde_weighted(channel.data(), weights.data(), kernel, &grid)?;
        let bk = bhattacharyya(target, &p)?;
        let t = grid.trapezoid_weights();
        let conv = grid_convolve(kernel, &grid, &t, &ratio(target, &p));
        let mass = grid_convolve(kernel, &grid, &t, &vec![1.0; grid.n_bins]);
        // S_k: total raw KDE mass, sum_x w(x) m(I(x))
        let s: f64 = channel
            .data()
            .iter()
            .zip(weights.data())
            .filter(|(_, &w)| w > 0.0)
            .map(|(&z, &w)| w * grid.interpolate(&mass, z))
            .sum();
        if !(s > 0.0) {
            return Err(Error::EmptyRegion);
        }
        factors.push(bk);
        per_channel.push((grid, conv, mass, s));
    }

    let mut v = vec![0.0; weights.len()];
    for (k, (grid, conv, mass, s)) in per_channel.iter().enumerate() {
        let alpha: f64 = factors.iter().enumerate().filter(|(i, _)| *i != k).map(|(_, b)| b).product();
        let scale = alpha / (2.0 * s);
        let bk = factors[k];
        for (out, &z) in v.iter_mut().zip(features.channel(k).data()) {
            *out += scale * (bk * grid.interpolate(mass, z) - grid.interpolate(conv, z));
        }
    }
    let b = factors.iter().product();
    Ok((weights.like(v), PhotometricDiagnostics { b, factors, area }))
}

/// Shape velocity: first variation of `B_kappa` with respect to `phi`,
/// assuming `|grad phi| = 1`. The curvature perturbation of `phi + psi` is
/// then the tangential Laplacian `div(P grad psi)`, `P = I - n n^T`, which
/// equals the plain Laplacian for perturbations constant along normals.
/// `kappa` is the curvature of `phi` with the `+1/r` sign convention.
///
/// `V_C = (1/2S) [ delta'(phi) ([L*K](kappa) - B m(kappa))
///                 - div(P grad( delta(phi) ([L*K'](kappa) - B m'(kappa)) )) ]`
/// with `L = sqrt(C_t / C)` and `S` the raw band KDE mass.
pub fn velocity_shape(
    phi: &ScalarField,
    kappa: &ScalarField,
    model: &TargetModel,
    eps: f64,
) -> Result<(ScalarField, ShapeDiagnostics)> {
    let (band, curv, diag) = velocity_shape_split(phi, kappa, model, eps)?;
    Ok((band.zip_map(&curv, |a, b| a + b)?, diag))
}

/// [`velocity_shape`] as two parts: the term from moving the band and the
/// term from changing curvature. When `kappa` is computed from a smoothed
/// copy `R phi`, the second part should be passed through `R^T`.
pub fn velocity_shape_split(
    phi: &ScalarField,
    kappa: &ScalarField,
    model: &TargetModel,
    eps: f64,
) -> Result<(ScalarField, ScalarField, ShapeDiagnostics)> {
    phi.check_same_shape(kappa)?;
    let delta = SmoothedDelta::new(eps)?;
    let kernel = &model.curvature_kernel;
    let target = &model.curvature_pdf;
    let grid = target.grid();
    let c = kde_curvature_band(kappa, phi, eps, kernel, &grid)?;
    let b_kappa = bhattacharyya(target, &c)?;
    let t = grid.trapezoid_weights();
    let l = ratio(target, &c);

    let n = phi.len();
    let mut inner = vec![0.0; n];
    let mut outer = vec![0.0; n];
    let mut s = 0.0;
    let mut band_mass = 0.0;
    for i in 0..n {
        let p = phi.data()[i];
        let w = delta.value(p);
        if w == 0.0 {
            continue;
        }
        band_mass += w;
        let k = kappa.data()[i];
        let (mut lk, mut m, mut lkd, mut md) = (0.0, 0.0, 0.0, 0.0);
        if let Some((lo, hi)) = kernel.node_range(&grid, k) {
            for j in lo..=hi {
                let u = grid.node(j) - k;
                let kv = t[j] * kernel.eval(u);
                let kd = t[j] * kernel.derivative(u);
                lk += l[j] * kv;
                m += kv;
                lkd += l[j] * kd;
                md += kd;
            }
        }
        s += w * m;
        inner[i] = w * (lkd - b_kappa * md);
        outer[i] = delta.derivative(p) * (lk - b_kappa * m);
    }
    if !(s > 0.0) {
        return Err(Error::EmptyBand);
    }
    let tangential = diffusion_operator(&tangent_projector(phi), &phi.like(inner))?;
    let scale = 1.0 / (2.0 * s);
    let band = outer.iter().map(|o| scale * o).collect();
    let curv = tangential.map(|t| scale * t);
    Ok((phi.like(band), curv, ShapeDiagnostics { b_kappa, band_mass }))
}
