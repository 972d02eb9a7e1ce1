use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use levelseg::density::TargetModel;
use levelseg::engine::{self, default_init, save_overlay, train_model, SegParams};
use levelseg::eval::{run_conditions, traces_csv, ContrastSet, EvalReport, ImageTrace, TestImage};
use levelseg::field::ScalarField;
use levelseg::io::{load_grd1, load_mask_pgm, load_pgm};
use levelseg::phantom::{write_dataset, Manifest};

use crate::config::{Overrides, RunConfig};
use crate::{EvaluateArgs, ReportArgs, SegmentArgs, SimulateArgs, TrainArgs};

pub fn contrast_dir(root: &Path, contrast: f64) -> PathBuf {
    root.join(format!("contrast-{contrast}"))
}

pub fn simulate(cfg: Option<&Path>, a: &SimulateArgs) -> Result<()> {
    let flags = Overrides {
        seed: a.seed,
        n: a.n,
        split: a.split,
        size: a.size,
        contrasts: a.contrast.map(|c| vec![c]),
        ..Default::default()
    };
    let cfg = RunConfig::resolve(cfg, &flags)?;
    let targets: Vec<(f64, PathBuf)> = match (&a.out, &a.root) {
        (Some(out), _) => vec![(cfg.contrasts.first().copied().unwrap_or(4.0), out.clone())],
        (None, Some(root)) => cfg.contrasts.iter().map(|&c| (c, contrast_dir(root, c))).collect(),
        (None, None) => bail!("either --out or --root is required"),
    };
    // every contrast shares the base seed, so the geometry is paired
    for (c, dir) in targets {
        let spec = cfg.phantom.spec(c, cfg.seed);
        let m = write_dataset(&dir, &spec, cfg.n, cfg.split)
            .with_context(|| format!("writing dataset {}", dir.display()))?;
        let train = m.entries("train").count();
        println!("{}: contrast {c}:1, {} images ({train} train / {} test)", dir.display(), m.n, m.n - train);
    }
    Ok(())
}

fn load_split(dir: &Path, m: &Manifest, split: &str) -> Result<Vec<(usize, ScalarField, ScalarField)>> {
    m.entries(split)
        .map(|e| {
            let u = load_grd1(dir.join(&e.envelope)).with_context(|| format!("loading {}", e.envelope))?;
            let mask = load_mask_pgm(dir.join(&e.mask)).with_context(|| format!("loading {}", e.mask))?;
            Ok((e.index, u, mask))
        })
        .collect()
}

fn load_manifest(dir: &Path) -> Result<Manifest> {
    Manifest::load(dir).with_context(|| format!("reading dataset manifest in {}", dir.display()))
}

fn train_from(dir: &Path, params: &SegParams) -> Result<TargetModel> {
    let m = load_manifest(dir)?;
    let train = load_split(dir, &m, "train")?;
    if train.is_empty() {
        bail!("dataset {} has no training images", dir.display());
    }
    let pairs: Vec<(&ScalarField, &ScalarField)> = train.iter().map(|(_, u, k)| (u, k)).collect();
    Ok(train_model(&pairs, params)?)
}

pub fn train(cfg: Option<&Path>, a: &TrainArgs) -> Result<()> {
    let cfg = RunConfig::resolve(cfg, &a.params.overrides())?;
    let model = train_from(&a.dataset, &cfg.params)?;
    let out = a.out.clone().unwrap_or_else(|| a.dataset.join("model.json"));
    model.save(&out).with_context(|| format!("writing {}", out.display()))?;
    let count = load_manifest(&a.dataset)?.entries("train").count();
    println!("trained on {count} images, d = {}", model.depth());
    for (name, p) in model.feature_names.iter().zip(&model.feature_pdfs) {
        let g = p.grid();
        println!("  {name}: [{:.4}, {:.4}] x {} bins, bandwidth {:.4}", g.z_min, g.z_max, g.n_bins, model.kernel.bandwidth);
    }
    let g = model.curvature_pdf.grid();
    println!(
        "  curvature: [{:.3}, {:.3}] x {} bins, bandwidth {:.4}",
        g.z_min, g.z_max, g.n_bins, model.curvature_kernel.bandwidth
    );
    println!("wrote {}", out.display());
    Ok(())
}

fn load_image(path: &Path) -> Result<ScalarField> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    match ext {
        "grd1" => Ok(load_grd1(path)?),
        "pgm" => Ok(load_pgm(path)?),
        _ => bail!("unsupported image format {:?}; expected .grd1 or .pgm", path.display()),
    }
}

pub fn segment(cfg: Option<&Path>, a: &SegmentArgs) -> Result<()> {
    let cfg = RunConfig::resolve(cfg, &a.params.overrides())?;
    let model = TargetModel::load(&a.model).with_context(|| format!("loading model {}", a.model.display()))?;
    let u = load_image(&a.image)?;
    let phi0 = default_init(&u)?;
    let res = engine::segment(&u, &model, &phi0, &cfg.params)?;
    res.save(&a.out)?;
    save_overlay(a.out.join("overlay.ppm"), &u, &res.level_set.phi)?;
    println!(
        "{} iterations, converged {}, area {} px",
        res.iterations,
        res.converged,
        res.mask.data().iter().filter(|&&m| m > 0.5).count()
    );
    if res.failed {
        bail!("contour vanished after {} iterations; outputs hold the last valid state", res.iterations);
    }
    Ok(())
}

fn contrast_set(dir: &Path, model_path: Option<&Path>, params: &SegParams) -> Result<ContrastSet> {
    let m = load_manifest(dir)?;
    let default_model = dir.join("model.json");
    let model = match model_path {
        Some(p) => TargetModel::load(p).with_context(|| format!("loading model {}", p.display()))?,
        None if default_model.exists() => TargetModel::load(&default_model)?,
        None => train_from(dir, params)?,
    };
    let test = load_split(dir, &m, "test")?
        .into_iter()
        .map(|(index, envelope, truth)| TestImage { index, envelope, truth })
        .collect();
    Ok(ContrastSet { contrast: m.template.contrast_ratio, model, test })
}

fn write_report(out: &Path, name: &str, report: &EvalReport) -> Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join(format!("{name}.csv")), report.to_csv())?;
    fs::write(out.join(format!("{name}.json")), report.to_json()? + "\n")?;
    fs::write(out.join(format!("{name}.txt")), report.table())?;
    Ok(())
}

fn write_traces(out: &Path, traces: &[ImageTrace]) -> Result<()> {
    let mut keys: Vec<(f64, bool)> = Vec::new();
    for t in traces {
        if !keys.contains(&(t.contrast, t.with_prior)) {
            keys.push((t.contrast, t.with_prior));
        }
    }
    for (c, w) in keys {
        let group: Vec<ImageTrace> =
            traces.iter().filter(|t| t.contrast == c && t.with_prior == w).cloned().collect();
        let tag = if w { "with" } else { "without" };
        fs::write(out.join(format!("trace_contrast-{c}_{tag}.csv")), traces_csv(&group))?;
    }
    Ok(())
}

pub fn evaluate(cfg: Option<&Path>, a: &EvaluateArgs) -> Result<()> {
    let cfg = RunConfig::resolve(cfg, &a.params.overrides())?;
    let set = contrast_set(&a.dataset, a.model.as_deref(), &cfg.params)?;
    let with_prior = cfg.params.beta > 0.0;
    let (report, traces) = run_conditions(&[set], &cfg.params, &[with_prior])?;
    write_report(&a.out, "evaluation", &report)?;
    write_traces(&a.out, &traces)?;
    print!("{}", report.table());
    Ok(())
}

pub fn report(cfg: Option<&Path>, a: &ReportArgs) -> Result<()> {
    let flags = Overrides { contrasts: (!a.contrast.is_empty()).then(|| a.contrast.clone()), ..a.params.overrides() };
    let cfg = RunConfig::resolve(cfg, &flags)?;
    let dirs: Vec<PathBuf> = cfg.contrasts.iter().map(|&c| contrast_dir(&a.root, c)).collect();
    let missing: Vec<String> = dirs
        .iter()
        .filter(|d| !d.join("manifest.json").is_file())
        .map(|d| d.display().to_string())
        .collect();
    if !missing.is_empty() {
        bail!("missing datasets (run `levelseg simulate --root`):\n  {}", missing.join("\n  "));
    }
    let sets = dirs.iter().map(|d| contrast_set(d, None, &cfg.params)).collect::<Result<Vec<_>>>()?;
    let settings: &[bool] = if cfg.params.beta == 0.0 {
        &[false]
    } else if a.only_with_priors {
        &[true]
    } else {
        &[true, false]
    };
    let (report, traces) = run_conditions(&sets, &cfg.params, settings)?;
    write_report(&a.out, "table1", &report)?;
    write_traces(&a.out, &traces)?;
    print!("{}", report.table());
    Ok(())
}
