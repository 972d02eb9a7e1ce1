//! Mask metrics and the with/without shape-prior comparison over contrasts.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::TargetModel;
use crate::engine::{default_init, segment, SegParams, TraceRow};
use crate::error::{Error, Result};
use crate::field::ScalarField;

fn binary_counts(truth: &ScalarField, estimate: &ScalarField) -> Result<(f64, f64, f64)> {
    truth.check_same_shape(estimate)?;
    let (mut t, mut e, mut both) = (0.0, 0.0, 0.0);
    for (&a, &b) in truth.data().iter().zip(estimate.data()) {
        let (a, b) = (a > 0.5, b > 0.5);
        t += a as u8 as f64;
        e += b as u8 as f64;
        both += (a && b) as u8 as f64;
    }
    Ok((t, e, both))
}

/// `||M - M_hat||_F^2 / ||M||_F^2` for binary masks.
pub fn nmse(truth: &ScalarField, estimate: &ScalarField) -> Result<f64> {
    let (t, e, both) = binary_counts(truth, estimate)?;
    if t == 0.0 {
        return Err(Error::param("nmse: truth mask is empty"));
    }
    Ok((t + e - 2.0 * both) / t)
}

/// `2 |M & M_hat| / (|M| + |M_hat|)`.
pub fn dice(truth: &ScalarField, estimate: &ScalarField) -> Result<f64> {
    let (t, e, both) = binary_counts(truth, estimate)?;
    if t + e == 0.0 {
        return Err(Error::param("dice: both masks are empty"));
    }
    Ok(2.0 * both / (t + e))
}

/// One held-out image with its delineation.
#[derive(Debug, Clone)]
pub struct TestImage {
    pub index: usize,
    pub envelope: ScalarField,
    pub truth: ScalarField,
}

/// Test images of one contrast level and the model trained for it.
#[derive(Debug, Clone)]
pub struct ContrastSet {
    pub contrast: f64,
    pub model: TargetModel,
    pub test: Vec<TestImage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageResult {
    pub contrast: f64,
    pub with_prior: bool,
    pub index: usize,
    pub nmse: f64,
    pub dice: f64,
    pub iterations: usize,
    pub converged: bool,
    /// The contour vanished or the run aborted; excluded from aggregates.
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub contrast: f64,
    pub with_prior: bool,
    pub count: usize,
    pub excluded: usize,
    pub mean_nmse: f64,
    /// Sample standard deviation (n - 1); zero for a single image.
    pub std_nmse: f64,
    pub mean_dice: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub images: Vec<ImageResult>,
    pub conditions: Vec<ConditionSummary>,
}

/// Per-iteration trace of one evaluated image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTrace {
    pub contrast: f64,
    pub with_prior: bool,
    pub index: usize,
    pub rows: Vec<TraceRow>,
}

fn summarize(contrast: f64, with_prior: bool, rows: &[&ImageResult]) -> ConditionSummary {
    let kept: Vec<&&ImageResult> = rows.iter().filter(|r| !r.failed).collect();
    let n = kept.len();
    let (mean_nmse, std_nmse, mean_dice) = if n == 0 {
        (f64::NAN, f64::NAN, f64::NAN)
    } else {
        let mean = kept.iter().map(|r| r.nmse).sum::<f64>() / n as f64;
        let var = if n > 1 { kept.iter().map(|r| (r.nmse - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
        let md = kept.iter().map(|r| r.dice).sum::<f64>() / n as f64;
        (mean, var.sqrt(), md)
    };
    ConditionSummary { contrast, with_prior, count: n, excluded: rows.len() - n, mean_nmse, std_nmse, mean_dice }
}

impl EvalReport {
    /// Groups per-image rows by (contrast, prior setting) in first-seen
    /// order and computes the aggregates.
    pub fn from_images(images: Vec<ImageResult>) -> Self {
        let mut keys: Vec<(f64, bool)> = Vec::new();
        for r in &images {
            if !keys.iter().any(|&(c, w)| c == r.contrast && w == r.with_prior) {
                keys.push((r.contrast, r.with_prior));
            }
        }
        let conditions = keys
            .into_iter()
            .map(|(c, w)| {
                let rows: Vec<&ImageResult> =
                    images.iter().filter(|r| r.contrast == c && r.with_prior == w).collect();
                summarize(c, w, &rows)
            })
            .collect();
        Self { images, conditions }
    }

    pub fn condition(&self, contrast: f64, with_prior: bool) -> Option<&ConditionSummary> {
        self.conditions.iter().find(|s| s.contrast == contrast && s.with_prior == with_prior)
    }

    /// One row per image.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("contrast,with_prior,index,nmse,dice,iterations,converged,failed\n");
        for r in &self.images {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.contrast, r.with_prior, r.index, r.nmse, r.dice, r.iterations, r.converged, r.failed
            );
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Contrast rows, one column per prior setting, cells `mean ± std`.
    pub fn table(&self) -> String {
        let mut contrasts: Vec<f64> = Vec::new();
        for s in &self.conditions {
            if !contrasts.contains(&s.contrast) {
                contrasts.push(s.contrast);
            }
        }
        let with = self.conditions.iter().any(|s| s.with_prior);
        let without = self.conditions.iter().any(|s| !s.with_prior);
        let cell = |c: f64, w: bool| match self.condition(c, w) {
            Some(s) if s.excluded > 0 => format!("{:.3} ± {:.3} ({} failed)", s.mean_nmse, s.std_nmse, s.excluded),
            Some(s) => format!("{:.3} ± {:.3}", s.mean_nmse, s.std_nmse),
            None => "-".to_string(),
        };
        let mut out = format!("{:<10}", "contrast");
        if with {
            let _ = write!(out, "{:>26}", "with shape priors");
        }
        if without {
            let _ = write!(out, "{:>26}", "without shape priors");
        }
        out.push('\n');
        for c in contrasts {
            let _ = write!(out, "{:<10}", format!("{c}:1"));
            if with {
                let _ = write!(out, "{:>26}", cell(c, true));
            }
            if without {
                let _ = write!(out, "{:>26}", cell(c, false));
            }
            out.push('\n');
        }
        out
    }
}

/// Trace rows of all images of one condition as CSV.
pub fn traces_csv(traces: &[ImageTrace]) -> String {
    let mut out = String::from("index,iter,B,B_kappa,delta,area\n");
    for t in traces {
        for r in &t.rows {
            let bk = r.b_kappa.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{},{},{}", t.index, r.iter, r.b, bk, r.delta, r.area);
        }
    }
    out
}

fn evaluate_one(set: &ContrastSet, img: &TestImage, params: &SegParams, with_prior: bool) -> Result<(ImageResult, ImageTrace)> {
    let p = SegParams { beta: if with_prior { params.beta } else { 0.0 }, ..*params };
    let phi0 = default_init(&img.envelope)?;
    let (mask, iterations, converged, failed, rows) = match segment(&img.envelope, &set.model, &phi0, &p) {
        Ok(r) => (r.mask, r.iterations, r.converged, r.failed, r.trace),
        Err(Error::NonFiniteVelocity { iteration }) => {
            (img.truth.map(|_| 0.0), iteration, false, true, Vec::new())
        }
        Err(e) => return Err(e),
    };
    let result = ImageResult {
        contrast: set.contrast,
        with_prior,
        index: img.index,
        nmse: nmse(&img.truth, &mask)?,
        dice: dice(&img.truth, &mask).unwrap_or(0.0),
        iterations,
        converged,
        failed,
    };
    let trace = ImageTrace { contrast: set.contrast, with_prior, index: img.index, rows };
    Ok((result, trace))
}

/// Segments every test image from the default initialization under each
/// requested prior setting (`true` uses `params.beta`, `false` uses 0).
/// Images run in parallel; results are ordered by contrast, setting, then
/// image.
pub fn run_conditions(
    sets: &[ContrastSet],
    params: &SegParams,
    settings: &[bool],
) -> Result<(EvalReport, Vec<ImageTrace>)> {
    params.validate()?;
    if sets.iter().any(|s| s.test.is_empty()) {
        return Err(Error::param("every contrast needs at least one test image"));
    }
    let jobs: Vec<(&ContrastSet, bool, &TestImage)> = sets
        .iter()
        .flat_map(|s| settings.iter().flat_map(move |&w| s.test.iter().map(move |t| (s, w, t))))
        .collect();
    let done = jobs
        .par_iter()
        .map(|&(s, w, t)| evaluate_one(s, t, params, w))
        .collect::<Result<Vec<_>>>()?;
    let (images, traces) = done.into_iter().unzip();
    Ok((EvalReport::from_images(images), traces))
}

/// Both prior settings at every contrast.
pub fn run_table1(sets: &[ContrastSet], params: &SegParams) -> Result<(EvalReport, Vec<ImageTrace>)> {
    run_conditions(sets, params, &[true, false])
}
