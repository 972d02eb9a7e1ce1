//! Run configuration: built-in defaults, then an optional JSON file, then
//! command-line flags.

use std::path::Path;

use anyhow::{bail, Context, Result};
use levelseg::engine::SegParams;
use levelseg::phantom::{ElasticSpec, PhantomSpec, PsfSpec, ShadowSpec, ShapeSpec};
use serde::{Deserialize, Serialize};

/// Phantom settings shared by every contrast; contrast and seed are chosen
/// per dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomTemplate {
    pub rows: usize,
    pub cols: usize,
    pub shape: ShapeSpec,
    pub elastic: ElasticSpec,
    pub shadow: ShadowSpec,
    pub psf: PsfSpec,
}

impl Default for PhantomTemplate {
    fn default() -> Self {
        let s = PhantomSpec::new(128, 128, 4.0, 0);
        Self { rows: s.rows, cols: s.cols, shape: s.shape, elastic: s.elastic, shadow: s.shadow, psf: s.psf }
    }
}

impl PhantomTemplate {
    pub fn spec(&self, contrast_ratio: f64, seed: u64) -> PhantomSpec {
        PhantomSpec {
            rows: self.rows,
            cols: self.cols,
            contrast_ratio,
            shape: self.shape,
            elastic: self.elastic,
            shadow: self.shadow,
            psf: self.psf,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub params: SegParams,
    pub phantom: PhantomTemplate,
    /// Base seed; sample `i` of a dataset uses `seed + i`.
    pub seed: u64,
    /// Images per contrast.
    pub n: usize,
    /// Fraction of each dataset used for training.
    pub split: f64,
    pub contrasts: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            params: SegParams::default(),
            phantom: PhantomTemplate::default(),
            seed: 1,
            n: 40,
            split: 0.5,
            contrasts: vec![4.0, 3.0, 2.0],
        }
    }
}

/// Values given on the command line; `None` leaves the lower layers alone.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub eps: Option<f64>,
    pub lambda: Option<f64>,
    pub dt: Option<f64>,
    pub aos_dt: Option<f64>,
    pub max_iters: Option<usize>,
    pub conv_tol: Option<f64>,
    pub no_shape_prior: bool,
    pub seed: Option<u64>,
    pub n: Option<usize>,
    pub split: Option<f64>,
    pub size: Option<usize>,
    pub contrasts: Option<Vec<f64>>,
}

pub fn validate_contrast(c: f64) -> Result<()> {
    if !(c.is_finite() && c > 1.0) {
        bail!("contrast ratio must be greater than 1 (inside:outside variance), got {c}");
    }
    Ok(())
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Defaults, then `file` if given, then `flags`.
    pub fn resolve(file: Option<&Path>, flags: &Overrides) -> Result<Self> {
        let mut cfg = match file {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        cfg.apply(flags);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        let p = &mut self.params;
        macro_rules! set {
            ($dst:expr, $src:expr) => {
                if let Some(v) = $src.clone() {
                    $dst = v;
                }
            };
        }
        set!(p.alpha, o.alpha);
        set!(p.beta, o.beta);
        set!(p.eps, o.eps);
        set!(p.lambda, o.lambda);
        set!(p.dt, o.dt);
        set!(p.aos_dt, o.aos_dt);
        set!(p.max_iters, o.max_iters);
        set!(p.conv_tol, o.conv_tol);
        if o.no_shape_prior {
            p.beta = 0.0;
        }
        set!(self.seed, o.seed);
        set!(self.n, o.n);
        set!(self.split, o.split);
        set!(self.contrasts, o.contrasts);
        if let Some(s) = o.size {
            self.phantom.rows = s;
            self.phantom.cols = s;
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        for &c in &self.contrasts {
            validate_contrast(c)?;
        }
        if self.n < 2 {
            bail!("a dataset needs at least 2 images, got {}", self.n);
        }
        if !(self.split > 0.0 && self.split < 1.0) {
            bail!("split must lie in (0, 1), got {}", self.split);
        }
        self.phantom.spec(self.contrasts.first().copied().unwrap_or(4.0), self.seed).validate()?;
        Ok(())
    }
}
