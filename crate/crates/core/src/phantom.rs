//! Synthetic transrectal-ultrasound phantoms: a warped prostate-like
//! profile, speckle reflectivity with a given inside:outside variance ratio,
//! acoustic shadow sectors, PSF convolution and envelope detection.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::io::{save_grd1, save_pgm, GrayMapping};

const MAX_ATTEMPTS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShapeSpec {
    /// Lateral (column) semi-axis as a fraction of the image width.
    pub semi_axis_lateral: f64,
    /// Axial (row) semi-axis as a fraction of the image height.
    pub semi_axis_axial: f64,
    /// Relative amplitude of the 2- and 3-lobed radial perturbation.
    pub lobe_amplitude: f64,
    /// Relative per-sample jitter of the semi-axes and centre.
    pub jitter: f64,
}

impl Default for ShapeSpec {
    fn default() -> Self {
        Self { semi_axis_lateral: 0.2, semi_axis_axial: 0.16, lobe_amplitude: 0.1, jitter: 0.03 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ElasticSpec {
    /// Control points per axis of the cubic B-spline displacement grid.
    pub control_points: usize,
    pub max_displacement: f64,
}

impl Default for ElasticSpec {
    fn default() -> Self {
        Self { control_points: 6, max_displacement: 5.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShadowSpec {
    pub count: usize,
    /// Full angular width of each sector in radians.
    pub angular_width: f64,
    /// Fraction of the signal removed inside a sector.
    pub attenuation: f64,
}

impl Default for ShadowSpec {
    fn default() -> Self {
        Self { count: 1, angular_width: 0.25, attenuation: 0.9 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PsfSpec {
    /// Axial carrier frequency in cycles per pixel.
    pub center_frequency: f64,
    /// Standard deviation of the axial Gaussian window in pixels.
    pub axial_sigma: f64,
    /// Standard deviation of the lateral Gaussian in pixels.
    pub lateral_sigma: f64,
}

impl Default for PsfSpec {
    fn default() -> Self {
        Self { center_frequency: 0.25, axial_sigma: 1.5, lateral_sigma: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub rows: usize,
    pub cols: usize,
    /// Reflectivity variance ratio inside:outside.
    pub contrast_ratio: f64,
    #[serde(default)]
    pub shape: ShapeSpec,
    #[serde(default)]
    pub elastic: ElasticSpec,
    #[serde(default)]
    pub shadow: ShadowSpec,
    #[serde(default)]
    pub psf: PsfSpec,
    pub seed: u64,
}

impl PhantomSpec {
    pub fn new(rows: usize, cols: usize, contrast_ratio: f64, seed: u64) -> Self {
        Self {
            rows,
            cols,
            contrast_ratio,
            shape: ShapeSpec::default(),
            elastic: ElasticSpec::default(),
            shadow: ShadowSpec::default(),
            psf: PsfSpec::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows < 16 || self.cols < 16 {
            return Err(Error::param("phantom must be at least 16x16"));
        }
        if !(self.contrast_ratio.is_finite() && self.contrast_ratio > 1.0) {
            return Err(Error::param(format!("contrast ratio must be > 1, got {}", self.contrast_ratio)));
        }
        let s = &self.shape;
        if !(s.semi_axis_lateral > 0.0 && s.semi_axis_lateral < 0.5 && s.semi_axis_axial > 0.0 && s.semi_axis_axial < 0.5) {
            return Err(Error::param("semi-axes must lie in (0, 0.5) of the image size"));
        }
        if !(s.lobe_amplitude >= 0.0 && s.lobe_amplitude < 0.5 && s.jitter >= 0.0 && s.jitter < 0.5) {
            return Err(Error::param("lobe amplitude and jitter must lie in [0, 0.5)"));
        }
        let e = &self.elastic;
        if e.control_points < 2 {
            return Err(Error::param("elastic grid needs at least 2 control points per axis"));
        }
        if !(e.max_displacement >= 0.0 && e.max_displacement < self.rows.min(self.cols) as f64 / 8.0) {
            return Err(Error::param("max displacement must be below min(rows, cols)/8"));
        }
        let sh = &self.shadow;
        if !(sh.attenuation >= 0.0 && sh.attenuation < 1.0) {
            return Err(Error::param("shadow attenuation must lie in [0, 1)"));
        }
        if !(sh.angular_width >= 0.0 && sh.angular_width < PI) {
            return Err(Error::param("shadow angular width must lie in [0, pi)"));
        }
        let p = &self.psf;
        if !(p.center_frequency > 0.0 && p.center_frequency < 0.5 && p.axial_sigma > 0.0 && p.lateral_sigma > 0.0) {
            return Err(Error::param("psf needs 0 < f0 < 0.5 and positive widths"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSample {
    pub envelope: ScalarField,
    pub truth_mask: ScalarField,
    /// Reflectivity before shadowing.
    pub reflectivity: ScalarField,
    /// Multiplicative shadow gain (1 outside all sectors).
    pub shadow_gain: ScalarField,
    pub rf: ScalarField,
}

struct Profile {
    center: (f64, f64),
    axes: (f64, f64),
    lobes: [f64; 4],
}

impl Profile {
    fn draw(spec: &PhantomSpec, rng: &mut ChaCha8Rng) -> Self {
        let s = &spec.shape;
        let mut jit = || 1.0 + s.jitter * rng.gen_range(-1.0..1.0);
        let axes = (s.semi_axis_axial * spec.rows as f64 * jit(), s.semi_axis_lateral * spec.cols as f64 * jit());
        let center = (
            spec.rows as f64 * (0.5 + 0.5 * s.jitter * rng.gen_range(-1.0..1.0)),
            spec.cols as f64 * (0.5 + 0.5 * s.jitter * rng.gen_range(-1.0..1.0)),
        );
        let mut lobes = [0.0; 4];
        for l in lobes.iter_mut() {
            *l = rng.gen_range(-1.0..1.0);
        }
        Self { center, axes, lobes }
    }

    /// Positive outside, negative inside (normalized radial coordinate).
    fn level(&self, r: f64, c: f64, lobe_amplitude: f64) -> f64 {
        let y = (r - self.center.0) / self.axes.0;
        let x = (c - self.center.1) / self.axes.1;
        let th = y.atan2(x);
        let l = &self.lobes;
        let rho = 1.0
            + 0.5 * lobe_amplitude
                * (l[0] * (2.0 * th).cos() + l[1] * (2.0 * th).sin() + l[2] * (3.0 * th).cos() + l[3] * (3.0 * th).sin());
        x.hypot(y) - rho
    }
}

/// Uniform cubic B-spline basis weights for fractional offset `t`.
fn bspline_weights(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        (1.0 - t).powi(3) / 6.0,
        (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0,
        (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0,
        t3 / 6.0,
    ]
}

/// Smooth displacement field from a random control grid.
struct Displacement {
    dr: ScalarField,
    dc: ScalarField,
}

impl Displacement {
    fn draw(spec: &PhantomSpec, rng: &mut ChaCha8Rng) -> Result<Self> {
        let g = spec.elastic.control_points;
        let m = spec.elastic.max_displacement;
        let mut ctrl = vec![(0.0, 0.0); g * g];
        for c in ctrl.iter_mut() {
            *c = (m * rng.gen_range(-1.0..1.0), m * rng.gen_range(-1.0..1.0));
        }
        let (rows, cols) = (spec.rows, spec.cols);
        let at = |i: isize, j: isize| ctrl[(i.clamp(0, g as isize - 1) as usize) * g + j.clamp(0, g as isize - 1) as usize];
        let mut dr = vec![0.0; rows * cols];
        let mut dc = vec![0.0; rows * cols];
        for r in 0..rows {
            let u = r as f64 / (rows - 1) as f64 * (g - 1) as f64;
            let iu = (u.floor() as isize).min(g as isize - 2);
            let wu = bspline_weights(u - iu as f64);
            for c in 0..cols {
                let v = c as f64 / (cols - 1) as f64 * (g - 1) as f64;
                let iv = (v.floor() as isize).min(g as isize - 2);
                let wv = bspline_weights(v - iv as f64);
                let (mut sr, mut sc) = (0.0, 0.0);
                for (a, wa) in wu.iter().enumerate() {
                    for (b, wb) in wv.iter().enumerate() {
                        let p = at(iu + a as isize - 1, iv + b as isize - 1);
                        sr += wa * wb * p.0;
                        sc += wa * wb * p.1;
                    }
                }
                dr[r * cols + c] = sr;
                dc[r * cols + c] = sc;
            }
        }
        Ok(Self { dr: ScalarField::new(rows, cols, dr)?, dc: ScalarField::new(rows, cols, dc)? })
    }

    /// Minimum Jacobian determinant of `x -> x + d(x)`.
    fn min_jacobian(&self) -> f64 {
        let (rows, cols) = (self.dr.rows() as isize, self.dr.cols() as isize);
        let mut worst = f64::INFINITY;
        for r in 0..rows {
            for c in 0..cols {
                let d = |f: &ScalarField, dr: isize, dc: isize| {
                    (f.get_clamped(r + dr, c + dc) - f.get_clamped(r - dr, c - dc)) / 2.0
                };
                let j = (1.0 + d(&self.dr, 1, 0)) * (1.0 + d(&self.dc, 0, 1)) - d(&self.dr, 0, 1) * d(&self.dc, 1, 0);
                worst = worst.min(j);
            }
        }
        worst
    }
}

/// Per-column analytic-signal magnitude (rows are the axial direction).
pub fn envelope_detect(rf: &ScalarField) -> ScalarField {
    let (rows, cols) = (rf.rows(), rf.cols());
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(rows);
    let inv = planner.plan_fft_inverse(rows);
    let mut out = vec![0.0; rows * cols];
    let mut buf = vec![Complex::new(0.0, 0.0); rows];
    for c in 0..cols {
        for r in 0..rows {
            buf[r] = Complex::new(rf.get(r, c), 0.0);
        }
        fwd.process(&mut buf);
        // keep DC (and Nyquist), double positive frequencies, drop negative ones
        let half = rows / 2;
        for (k, v) in buf.iter_mut().enumerate() {
            if k == 0 || (rows % 2 == 0 && k == half) {
                continue;
            }
            if k < (rows + 1) / 2 {
                *v *= 2.0;
            } else {
                *v = Complex::new(0.0, 0.0);
            }
        }
        inv.process(&mut buf);
        for r in 0..rows {
            out[r * cols + c] = buf[r].norm() / rows as f64;
        }
    }
    rf.like(out)
}

fn convolve_psf(f: &ScalarField, psf: &PsfSpec) -> ScalarField {
    let (rows, cols) = (f.rows() as isize, f.cols() as isize);
    let ra = (4.0 * psf.axial_sigma).ceil() as isize;
    let rl = (4.0 * psf.lateral_sigma).ceil() as isize;
    let axial: Vec<f64> = (-ra..=ra)
        .map(|k| {
            let x = k as f64;
            (-0.5 * x * x / (psf.axial_sigma * psf.axial_sigma)).exp() * (2.0 * PI * psf.center_frequency * x).cos()
        })
        .collect();
    let lateral: Vec<f64> = (-rl..=rl)
        .map(|k| {
            let x = k as f64;
            (-0.5 * x * x / (psf.lateral_sigma * psf.lateral_sigma)).exp()
        })
        .collect();
    // zero padding outside the image
    let mut tmp = vec![0.0; f.len()];
    for r in 0..rows {
        for c in 0..cols {
            let mut s = 0.0;
            for (i, w) in lateral.iter().enumerate() {
                let cc = c + i as isize - rl;
                if (0..cols).contains(&cc) {
                    s += w * f.get(r as usize, cc as usize);
                }
            }
            tmp[(r * cols + c) as usize] = s;
        }
    }
    let mut out = vec![0.0; f.len()];
    for r in 0..rows {
        for c in 0..cols {
            let mut s = 0.0;
            for (i, w) in axial.iter().enumerate() {
                let rr = r + i as isize - ra;
                if (0..rows).contains(&rr) {
                    s += w * tmp[(rr * cols + c) as usize];
                }
            }
            out[(r * cols + c) as usize] = s;
        }
    }
    f.like(out)
}

/// Shadow sectors anchored at the bottom-centre transducer position. Each
/// sector starts inside the object and extends away from the transducer.
fn shadow_gain(spec: &PhantomSpec, profile: &Profile, mask: &ScalarField, rng: &mut ChaCha8Rng) -> ScalarField {
    let anchor = (spec.rows as f64 - 1.0, 0.5 * (spec.cols as f64 - 1.0));
    let to_center = (profile.center.0 - anchor.0, profile.center.1 - anchor.1);
    let base_angle = to_center.1.atan2(-to_center.0);
    let dist_center = to_center.0.hypot(to_center.1);
    // half the angle the object subtends, roughly
    let half_span = (profile.axes.1 / dist_center.max(1.0)).atan();
    let mut gain = vec![1.0; spec.rows * spec.cols];
    for _ in 0..spec.shadow.count {
        let angle = base_angle + 0.6 * half_span * rng.gen_range(-1.0..1.0);
        let start = dist_center + profile.axes.0 * rng.gen_range(0.2..0.7);
        for r in 0..spec.rows {
            for c in 0..spec.cols {
                let (dy, dx) = (r as f64 - anchor.0, c as f64 - anchor.1);
                let a = dx.atan2(-dy);
                if (a - angle).abs() <= 0.5 * spec.shadow.angular_width && dx.hypot(dy) >= start {
                    gain[r * spec.cols + c] = 1.0 - spec.shadow.attenuation;
                }
            }
        }
    }
    mask.like(gain)
}

fn try_generate(spec: &PhantomSpec, rng: &mut ChaCha8Rng) -> Result<Option<PhantomSample>> {
    let (rows, cols) = (spec.rows, spec.cols);
    let profile = Profile::draw(spec, rng);
    let disp = Displacement::draw(spec, rng)?;
    if disp.min_jacobian() <= 0.0 {
        return Ok(None);
    }
    let mask = ScalarField::from_fn(rows, cols, |r, c| {
        let i = r * cols + c;
        let (wr, wc) = (r as f64 + disp.dr.data()[i], c as f64 + disp.dc.data()[i]);
        if profile.level(wr, wc, spec.shape.lobe_amplitude) <= 0.0 {
            1.0
        } else {
            0.0
        }
    })?;
    let frac = mask.sum() / mask.len() as f64;
    if !(0.05..=0.6).contains(&frac) {
        return Ok(None);
    }
    let inside_amp = spec.contrast_ratio.sqrt();
    let reflectivity = ScalarField::from_fn(rows, cols, |r, c| {
        let n: f64 = rng.sample(StandardNormal);
        n * if mask.get(r, c) > 0.5 { inside_amp } else { 1.0 }
    })?;
    let gain = shadow_gain(spec, &profile, &mask, rng);
    let shadowed = reflectivity.zip_map(&gain, |a, b| a * b)?;
    let rf = convolve_psf(&shadowed, &spec.psf);
    let envelope = envelope_detect(&rf);
    Ok(Some(PhantomSample { envelope, truth_mask: mask, reflectivity, shadow_gain: gain, rf }))
}

pub fn generate(spec: &PhantomSpec) -> Result<PhantomSample> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for _ in 0..MAX_ATTEMPTS {
        if let Some(s) = try_generate(spec, &mut rng)? {
            return Ok(s);
        }
    }
    Err(Error::DegeneratePhantom { attempts: MAX_ATTEMPTS })
}

/// Number of training samples for a split fraction.
pub fn training_count(n: usize, split: f64) -> usize {
    ((split * n as f64).ceil() as usize).clamp(1, n - 1)
}

/// `n` samples with seeds `template.seed + i`; the first `ceil(split * n)`
/// are the training set.
pub fn generate_dataset(template: &PhantomSpec, n: usize, split: f64) -> Result<(Vec<PhantomSample>, Vec<PhantomSample>)> {
    if n < 2 {
        return Err(Error::param("dataset needs at least 2 samples"));
    }
    if !(split > 0.0 && split < 1.0) {
        return Err(Error::param("split must lie in (0, 1)"));
    }
    let mut all: Vec<PhantomSample> = (0..n)
        .into_par_iter()
        .map(|i| generate(&PhantomSpec { seed: template.seed.wrapping_add(i as u64), ..*template }))
        .collect::<Result<_>>()?;
    let test = all.split_off(training_count(n, split));
    Ok((all, test))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub index: usize,
    pub seed: u64,
    pub split: String,
    pub envelope: String,
    pub mask: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub template: PhantomSpec,
    pub n: usize,
    pub split: f64,
    pub samples: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(dir.as_ref().join("manifest.json"))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn entries(&self, split: &str) -> impl Iterator<Item = &ManifestEntry> {
        let split = split.to_string();
        self.samples.iter().filter(move |e| e.split == split)
    }
}

/// Generates a dataset and writes `NNN_envelope.grd1`, `NNN_mask.pgm` and
/// `manifest.json` into `dir`.
pub fn write_dataset(dir: impl AsRef<Path>, template: &PhantomSpec, n: usize, split: f64) -> Result<Manifest> {
    let dir = dir.as_ref();
    let (train, test) = generate_dataset(template, n, split)?;
    fs::create_dir_all(dir)?;
    let mut samples = Vec::with_capacity(n);
    for (i, s) in train.iter().chain(&test).enumerate() {
        let envelope = format!("{i:03}_envelope.grd1");
        let mask = format!("{i:03}_mask.pgm");
        save_grd1(dir.join(&envelope), &s.envelope)?;
        save_pgm(dir.join(&mask), &s.truth_mask, GrayMapping::Mask)?;
        let split = if i < train.len() { "train" } else { "test" };
        samples.push(ManifestEntry { index: i, seed: template.seed.wrapping_add(i as u64), split: split.into(), envelope, mask });
    }
    let manifest = Manifest { template: *template, n, split, samples };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn var_ratio(s: &PhantomSample) -> f64 {
        let (mut si, mut ni, mut so, mut no) = (0.0, 0.0, 0.0, 0.0);
        for (v, m) in s.reflectivity.data().iter().zip(s.truth_mask.data()) {
            if *m > 0.5 {
                si += v * v;
                ni += 1.0;
            } else {
                so += v * v;
                no += 1.0;
            }
        }
        (si / ni) / (so / no)
    }

    #[test]
    fn deterministic_given_seed() {
        let spec = PhantomSpec::new(64, 64, 3.0, 42);
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a, b);
        let c = generate(&PhantomSpec { seed: 43, ..spec }).unwrap();
        assert_ne!(a.truth_mask, c.truth_mask);
    }

    #[test]
    fn variance_ratio_matches_contrast() {
        for seed in 0..5 {
            let s = generate(&PhantomSpec::new(128, 128, 4.0, seed)).unwrap();
            let ratio = var_ratio(&s);
            assert!((3.5..=4.5).contains(&ratio), "{ratio}");
        }
    }

    #[test]
    fn sample_invariants() {
        for seed in 0..4 {
            let s = generate(&PhantomSpec::new(96, 112, 2.0, seed)).unwrap();
            assert!(s.envelope.data().iter().all(|&v| v >= 0.0));
            assert!(s.truth_mask.data().iter().all(|&v| v == 0.0 || v == 1.0));
            let frac = s.truth_mask.sum() / s.truth_mask.len() as f64;
            assert!((0.05..=0.6).contains(&frac));
            assert_eq!((s.envelope.rows(), s.envelope.cols()), (96, 112));
        }
    }

    #[test]
    fn shadow_darkens_envelope() {
        let mut spec = PhantomSpec::new(128, 128, 4.0, 7);
        spec.shadow.attenuation = 0.9;
        let s = generate(&spec).unwrap();
        // boundary band: pixels with a 4-neighbour of the other label, dilated
        let m = &s.truth_mask;
        let near_boundary = |r: usize, c: usize| {
            let (r, c) = (r as isize, c as isize);
            (-3..=3).any(|dr| (-3..=3).any(|dc| m.get_clamped(r + dr, c + dc) != m.get_clamped(r, c)))
        };
        let (mut sh, mut nsh, mut un, mut nun) = (0.0, 0.0, 0.0, 0.0);
        for r in 0..128 {
            for c in 0..128 {
                let v = s.envelope.get(r, c);
                if s.shadow_gain.get(r, c) < 1.0 {
                    sh += v;
                    nsh += 1.0;
                } else if near_boundary(r, c) {
                    un += v;
                    nun += 1.0;
                }
            }
        }
        assert!(nsh > 0.0);
        assert!(sh / nsh <= 0.4 * un / nun, "{} vs {}", sh / nsh, un / nun);
        // the sector crosses the boundary
        let shadowed_inside = (0..m.len()).filter(|&i| s.shadow_gain.data()[i] < 1.0 && m.data()[i] > 0.5).count();
        let shadowed_outside = (0..m.len()).filter(|&i| s.shadow_gain.data()[i] < 1.0 && m.data()[i] < 0.5).count();
        assert!(shadowed_inside > 0 && shadowed_outside > 0);
    }

    #[test]
    fn elastic_warp_is_diffeomorphic() {
        let spec = PhantomSpec::new(128, 128, 3.0, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let d = Displacement::draw(&spec, &mut rng).unwrap();
            assert!(d.min_jacobian() > 0.0);
            assert!(d.dr.max_abs() <= spec.elastic.max_displacement + 1e-9);
        }
    }

    #[test]
    fn envelope_of_modulated_gaussian() {
        let f0 = 0.2;
        let rf = ScalarField::from_fn(128, 3, |r, _| {
            let x = r as f64 - 64.0;
            (-x * x / 50.0).exp() * (2.0 * PI * f0 * x).cos()
        })
        .unwrap();
        let env = envelope_detect(&rf);
        for r in 40..88 {
            let x = r as f64 - 64.0;
            assert!((env.get(r, 1) - (-x * x / 50.0).exp()).abs() < 1e-3);
        }
    }

    #[test]
    fn spec_validation() {
        assert!(PhantomSpec::new(64, 64, 0.5, 0).validate().is_err());
        assert!(PhantomSpec::new(64, 64, 1.0, 0).validate().is_err());
        let mut s = PhantomSpec::new(64, 64, 2.0, 0);
        s.elastic.max_displacement = 8.0;
        assert!(s.validate().is_err());
        let mut s = PhantomSpec::new(64, 64, 2.0, 0);
        s.shadow.attenuation = 1.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn dataset_split_and_distinct_masks() {
        assert_eq!(training_count(200, 0.5), 100);
        assert_eq!(training_count(2, 0.5), 1);
        let (train, test) = generate_dataset(&PhantomSpec::new(48, 48, 3.0, 100), 6, 0.5).unwrap();
        assert_eq!((train.len(), test.len()), (3, 3));
        let hashes: HashSet<Vec<u8>> = train
            .iter()
            .chain(&test)
            .map(|s| s.truth_mask.data().iter().map(|&v| v as u8).collect())
            .collect();
        assert_eq!(hashes.len(), 6);
        assert!(generate_dataset(&PhantomSpec::new(48, 48, 3.0, 0), 1, 0.5).is_err());
    }

    #[test]
    fn dataset_directory_is_reproducible() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let spec = PhantomSpec::new(48, 48, 3.0, 9);
        let ma = write_dataset(a.path(), &spec, 4, 0.5).unwrap();
        write_dataset(b.path(), &spec, 4, 0.5).unwrap();
        for name in ["manifest.json", "000_envelope.grd1", "003_mask.pgm"] {
            assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap());
        }
        assert_eq!(Manifest::load(a.path()).unwrap(), ma);
        assert_eq!(ma.entries("train").count(), 2);
    }
}
