//! The segmentation loop: feature extraction, regularization, velocities,
//! the explicit update, the geodesic AOS step, and redistancing.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{default_training_config, train_target, TargetModel, TrainingExample};
use crate::error::{Error, Result};
use crate::field::{gaussian_blur, FeatureImage, ScalarField, SmoothedDelta};
use crate::filters::{edge_detector, srad, tangent_regularize_tracked, Regularization, SradParams};
use crate::io::{save_grd1, save_pgm, save_ppm, to_gray_bytes, GrayMapping};
use crate::levelset::{
    aos_geodesic_step, curvature, disk_signed_distance, inside_mask, redistance_field,
    LevelSet,
};
use crate::velocity::{velocity_photometric, velocity_shape_split};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegParams {
    pub alpha: f64,
    pub beta: f64,
    pub eps: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub reg_iters: usize,
    pub reg_dtau: f64,
    /// Gaussian scale of the structure tensor in the regularizer.
    pub tensor_sigma: f64,
    pub dt: f64,
    pub aos_dt: f64,
    /// Largest per-iteration explicit change of phi, in pixels.
    pub max_step: f64,
    pub conv_tol: f64,
    pub max_iters: usize,
    pub srad: SradParams,
}

impl Default for SegParams {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: 2.5,
            eps: 2.0,
            lambda: 3.0,
            gamma: 0.1,
            reg_iters: 4,
            reg_dtau: 10.0,
            tensor_sigma: 1.0,
            dt: 1.0,
            aos_dt: 0.3,
            max_step: 1.0,
            conv_tol: 1e-4,
            max_iters: 500,
            srad: SradParams::default(),
        }
    }
}

impl SegParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("alpha", self.alpha),
            ("eps", self.eps),
            ("lambda", self.lambda),
            ("gamma", self.gamma),
            ("reg_dtau", self.reg_dtau),
            ("tensor_sigma", self.tensor_sigma),
            ("dt", self.dt),
            ("aos_dt", self.aos_dt),
            ("max_step", self.max_step),
            ("conv_tol", self.conv_tol),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::param(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::param(format!("beta must be non-negative, got {}", self.beta)));
        }
        if self.gamma > 1.0 {
            return Err(Error::param("gamma must lie in (0, 1]"));
        }
        if self.conv_tol >= 1.0 {
            return Err(Error::param("conv_tol must be below 1"));
        }
        if self.reg_iters == 0 {
            return Err(Error::param("reg_iters must be at least 1"));
        }
        self.srad.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub b: f64,
    /// Absent when the shape prior is disabled.
    pub b_kappa: Option<f64>,
    pub delta: f64,
    pub area: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegResult {
    pub level_set: LevelSet,
    pub mask: ScalarField,
    pub iterations: usize,
    pub trace: Vec<TraceRow>,
    pub converged: bool,
    /// Set when the contour vanished; `level_set` is then the last valid one.
    pub failed: bool,
}

/// `[u, srad(u)]`.
pub fn extract_features(u: &ScalarField, params: &SegParams) -> Result<FeatureImage> {
    let filtered = srad(u, &params.srad)?;
    FeatureImage::new(vec![u.clone(), filtered])
}

/// Signed distance of a centred disk with radius `0.25 min(rows, cols)`.
pub fn default_init(u: &ScalarField) -> Result<LevelSet> {
    let (rows, cols) = (u.rows(), u.cols());
    let radius = 0.25 * rows.min(cols) as f64;
    let phi = disk_signed_distance(rows, cols, rows as f64 / 2.0, cols as f64 / 2.0, radius)?;
    Ok(LevelSet::new(phi, 2.0))
}

/// Regularized curvature used both in training and in the loop.
pub fn regularized_curvature(phi: &ScalarField, params: &SegParams) -> Result<ScalarField> {
    Ok(curvature(&regularize_near_band(phi, params)?.phi))
}

/// Pixels kept beyond the delta band when regularizing; the diffusion
/// length of the default regularizer is about 6.
const REG_MARGIN: f64 = 12.0;

/// The regularizer restricted to the bounding box of the pixels within
/// `eps + REG_MARGIN` of the contour, and the identity outside it.
struct BandRegularization {
    r0: usize,
    c0: usize,
    inner: Regularization,
    phi: ScalarField,
}

impl BandRegularization {
    fn adjoint(&self, v: &ScalarField) -> Result<ScalarField> {
        let (rows, cols) = (self.inner.phi.rows(), self.inner.phi.cols());
        let inner = self.inner.adjoint(&v.crop(self.r0, self.c0, rows, cols)?)?;
        let mut out = v.clone();
        out.paste(&inner, self.r0, self.c0)?;
        Ok(out)
    }
}

fn regularize_near_band(phi: &ScalarField, params: &SegParams) -> Result<BandRegularization> {
    let reach = params.eps + REG_MARGIN;
    let (mut r_lo, mut r_hi, mut c_lo, mut c_hi) = (usize::MAX, 0, usize::MAX, 0);
    for r in 0..phi.rows() {
        for c in 0..phi.cols() {
            if phi.get(r, c).abs() <= reach {
                r_lo = r_lo.min(r);
                r_hi = r_hi.max(r);
                c_lo = c_lo.min(c);
                c_hi = c_hi.max(c);
            }
        }
    }
    if r_lo == usize::MAX {
        (r_lo, r_hi, c_lo, c_hi) = (0, phi.rows() - 1, 0, phi.cols() - 1);
    }
    // the field type needs at least 3x3
    let grow = |lo: usize, hi: usize, n: usize| {
        let hi = hi.max(lo + 2).min(n - 1);
        (hi.saturating_sub(2).min(lo), hi)
    };
    let (r_lo, r_hi) = grow(r_lo, r_hi, phi.rows());
    let (c_lo, c_hi) = grow(c_lo, c_hi, phi.cols());
    let sub = phi.crop(r_lo, c_lo, r_hi - r_lo + 1, c_hi - c_lo + 1)?;
    let inner = tangent_regularize_tracked(&sub, params.gamma, params.reg_iters, params.reg_dtau, params.tensor_sigma)?;
    let mut out = phi.clone();
    out.paste(&inner.phi, r_lo, c_lo)?;
    Ok(BandRegularization { r0: r_lo, c0: c_lo, inner, phi: out })
}

/// Signed distance to the half level of the Gaussian-smoothed mask. Unlike
/// [`crate::levelset::signed_distance_from_mask`] the contour does not follow pixel stairs,
/// so its curvature reflects the delineated shape rather than the grid.
pub fn delineation_level_set(mask: &ScalarField, eps: f64) -> Result<LevelSet> {
    let smooth = gaussian_blur(mask, DELINEATION_SMOOTHING);
    let phi = redistance_field(&smooth.map(|m| 0.5 - m))?;
    Ok(LevelSet::new(phi, eps))
}

const DELINEATION_SMOOTHING: f64 = 2.0;

/// Builds a training example from an image and its delineation, with the
/// same feature extractor and curvature pipeline the loop uses.
pub fn training_example(u: &ScalarField, mask: &ScalarField, params: &SegParams) -> Result<TrainingExample> {
    let features = extract_features(u, params)?;
    let ls = delineation_level_set(mask, params.eps)?;
    let kappa = regularized_curvature(&ls.phi, params)?;
    Ok(TrainingExample { features, mask: mask.clone(), phi: ls.phi, kappa })
}

/// Trains a target model from delineated images with the default density
/// settings. Examples are prepared in parallel; a failure names its pair.
pub fn train_model(pairs: &[(&ScalarField, &ScalarField)], params: &SegParams) -> Result<TargetModel> {
    if pairs.is_empty() {
        return Err(Error::param("no training pairs"));
    }
    let examples = pairs
        .par_iter()
        .enumerate()
        .map(|(index, (u, m))| {
            training_example(u, m, params).map_err(|e| Error::TrainingPair { index, source: Box::new(e) })
        })
        .collect::<Result<Vec<_>>>()?;
    let cfg = default_training_config(&examples, params.eps)?;
    train_target(&examples, &cfg)
}

fn band_change(old: &ScalarField, new: &ScalarField, eps: f64) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for (a, b) in old.data().iter().zip(new.data()) {
        if a.abs() <= 2.0 * eps {
            sum += (a - b).abs();
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn vanished(e: &Error) -> bool {
    matches!(e, Error::ContourVanished | Error::EmptyRegion | Error::EmptyBand)
}

/// Runs the segmentation loop on precomputed features.
///
/// Each iteration: regularize phi and take its curvature, evaluate the
/// photometric and shape velocities, apply
/// `phi += dt (alpha delta_eps(phi) V_B + beta V_C)`, take one AOS step of
/// the geodesic term, and redistance. Velocities are used in units of their
/// region size (`2 S V`), which makes them dimensionless; the explicit
/// change is capped at `max_step` pixels.
pub fn segment_features(
    features: &FeatureImage,
    model: &TargetModel,
    phi0: &LevelSet,
    params: &SegParams,
) -> Result<SegResult> {
    params.validate()?;
    model.validate()?;
    if features.depth() != model.depth() {
        return Err(Error::LengthMismatch { expected: model.depth(), got: features.depth() });
    }
    features.channel(0).check_same_shape(&phi0.phi)?;
    if !phi0.phi.is_finite() {
        return Err(Error::InvalidField("initial level set is not finite".into()));
    }
    let edge_channel = features.channel(features.depth() - 1);
    let g = edge_detector(edge_channel, params.lambda)?;
    let delta = SmoothedDelta::new(params.eps)?;

    let mut phi = phi0.phi.clone();
    let mut trace = Vec::new();
    let mut converged = false;
    let mut failed = false;

    for iter in 1..=params.max_iters {
        match step(features, model, &phi, &g, &delta, params, iter) {
            Ok((next, b, b_kappa)) => {
                let d = band_change(&phi, &next, params.eps);
                phi = next;
                let area = phi.data().iter().filter(|&&p| p <= 0.0).count();
                trace.push(TraceRow { iter, b, b_kappa, delta: d, area });
                if d <= params.conv_tol {
                    converged = true;
                    break;
                }
            }
            Err(e) if vanished(&e) => {
                failed = true;
                break;
            }
            Err(e) => return Err(e),
        }
    }
    let mask = inside_mask(&phi);
    Ok(SegResult {
        level_set: LevelSet::new(phi, params.eps),
        mask,
        iterations: trace.len(),
        trace,
        converged,
        failed,
    })
}

fn step(
    features: &FeatureImage,
    model: &TargetModel,
    phi: &ScalarField,
    g: &ScalarField,
    delta: &SmoothedDelta,
    params: &SegParams,
    iter: usize,
) -> Result<(ScalarField, f64, Option<f64>)> {
    let (vb, photo) = velocity_photometric(features, phi, model)?;
    let mut update: Vec<f64> = vb
        .data()
        .iter()
        .zip(phi.data())
        .map(|(v, &p)| params.alpha * delta.value(p) * 2.0 * photo.area * v)
        .collect();
    let mut b_kappa = None;
    if params.beta > 0.0 {
        // extreme curvatures pile up at the grid ends instead of vanishing
        let grid = model.curvature_pdf.grid();
        let margin = model.curvature_kernel.support();
        let (lo, hi) = (grid.z_min + margin, grid.z_max - margin);
        let reg = regularize_near_band(phi, params)?;
        let kappa = curvature(&reg.phi).map(|k| k.clamp(lo, hi));
        let (band, curv, shape) = velocity_shape_split(phi, &kappa, model, params.eps)?;
        let vc = band.zip_map(&reg.adjoint(&curv)?, |a, b| a + b)?;
        let scale = params.beta * 2.0 * shape.band_mass;
        for (u, v) in update.iter_mut().zip(vc.data()) {
            *u += scale * v;
        }
        b_kappa = Some(shape.b_kappa);
    }
    if update.iter().any(|u| !u.is_finite()) {
        return Err(Error::NonFiniteVelocity { iteration: iter });
    }
    let cap = params.max_step;
    let moved = phi.zip_map(&phi.like(update), |p, u| p + (params.dt * u).clamp(-cap, cap))?;
    let smoothed = aos_geodesic_step(&moved, g, params.aos_dt)?;
    let next = redistance_field(&smoothed)?;
    Ok((next, photo.b, b_kappa))
}

/// Extracts features from `u` and runs [`segment_features`].
pub fn segment(u: &ScalarField, model: &TargetModel, phi0: &LevelSet, params: &SegParams) -> Result<SegResult> {
    params.validate()?;
    let features = extract_features(u, params)?;
    segment_features(&features, model, phi0, params)
}

impl SegResult {
    /// CSV with header `iter,B,B_kappa,delta,area`.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("iter,B,B_kappa,delta,area\n");
        for r in &self.trace {
            let bk = r.b_kappa.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{},{}", r.iter, r.b, bk, r.delta, r.area);
        }
        out
    }

    /// Writes `mask.pgm`, `phi.grd1` and `trace.csv` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        save_pgm(dir.join("mask.pgm"), &self.mask, GrayMapping::Mask)?;
        save_grd1(dir.join("phi.grd1"), &self.level_set.phi)?;
        std::fs::write(dir.join("trace.csv"), self.trace_csv())?;
        Ok(())
    }
}

/// Grayscale image with the zero level of `phi` drawn in red.
pub fn overlay_rgb(u: &ScalarField, phi: &ScalarField) -> Result<Vec<[u8; 3]>> {
    u.check_same_shape(phi)?;
    let gray = to_gray_bytes(u, GrayMapping::Stretch);
    let (rows, cols) = (u.rows(), u.cols());
    let mut rgb: Vec<[u8; 3]> = gray.iter().map(|&v| [v, v, v]).collect();
    for r in 0..rows {
        for c in 0..cols {
            let p = phi.get(r, c);
            let crosses = [(-1isize, 0isize), (1, 0), (0, -1), (0, 1)]
                .iter()
                .any(|&(dr, dc)| phi.get_clamped(r as isize + dr, c as isize + dc) > 0.0);
            if crosses && p <= 0.0 {
                rgb[r * cols + c] = [255, 0, 0];
            }
        }
    }
    Ok(rgb)
}

pub fn save_overlay(path: impl AsRef<Path>, u: &ScalarField, phi: &ScalarField) -> Result<()> {
    let rgb = overlay_rgb(u, phi)?;
    save_ppm(path, u.rows(), u.cols(), &rgb)
}
