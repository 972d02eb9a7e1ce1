use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use levelseg::engine::{default_init, save_overlay};
use levelseg::eval::nmse;
use levelseg::io::{load_grd1, load_mask_pgm};

fn levelseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_levelseg")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = levelseg(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn simulate(dir: &Path, contrast: &str) {
    ok(&["simulate", "--out", p(dir), "--contrast", contrast, "--n", "4", "--size", "64", "--seed", "7"]);
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|f| (f.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&f).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn help_lists_flags_with_defaults() {
    let help = ok(&["segment", "--help"]);
    for flag in ["--alpha", "--beta", "--eps", "--lambda", "--dt", "--aos-dt", "--max-iters", "--conv-tol", "--no-shape-prior", "--config"] {
        assert!(help.contains(flag), "missing {flag}:\n{help}");
    }
    assert!(help.contains("[default: 2.5]"), "{help}");
    let help = ok(&["simulate", "--help"]);
    assert!(help.contains("--contrast") && help.contains("[default: 40]"), "{help}");
}

#[test]
fn simulate_is_reproducible_and_validates_contrast() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    simulate(&a, "3");
    simulate(&b, "3");
    let files = dir_bytes(&a);
    assert_eq!(files.len(), 4 * 2 + 1);
    assert_eq!(files, dir_bytes(&b));

    let out = levelseg(&["simulate", "--out", p(&tmp.path().join("c")), "--contrast", "0.5"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("greater than 1"));
}

#[test]
fn train_segment_and_zero_iteration_overlay() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = tmp.path().join("ds");
    simulate(&ds, "4");
    let text = ok(&["train", "--dataset", p(&ds)]);
    assert!(text.contains("trained on 2 images, d = 2"), "{text}");
    let first = fs::read(ds.join("model.json")).unwrap();
    let again = tmp.path().join("again.json");
    ok(&["train", "--dataset", p(&ds), "--out", p(&again)]);
    assert_eq!(first, fs::read(&again).unwrap());

    let image = ds.join("003_envelope.grd1");
    let model = ds.join("model.json");
    let out = tmp.path().join("seg");
    ok(&["segment", "--model", p(&model), "--image", p(&image), "--out", p(&out), "--max-iters", "20"]);
    for f in ["mask.pgm", "phi.grd1", "trace.csv", "overlay.ppm"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    assert_eq!(fs::read_to_string(out.join("trace.csv")).unwrap().lines().count(), 21);

    let zero = tmp.path().join("zero");
    ok(&["segment", "--model", p(&model), "--image", p(&image), "--out", p(&zero), "--max-iters", "0"]);
    let u = load_grd1(&image).unwrap();
    let expected = tmp.path().join("init.ppm");
    save_overlay(&expected, &u, &default_init(&u).unwrap().phi).unwrap();
    assert_eq!(fs::read(zero.join("overlay.ppm")).unwrap(), fs::read(expected).unwrap());
}

#[test]
fn report_cells_rows_and_missing_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("root");
    simulate(&root.join("contrast-4"), "4");

    let missing = levelseg(&["report", "--root", p(&root), "--out", p(&tmp.path().join("r0"))]);
    assert!(!missing.status.success());
    let err = String::from_utf8_lossy(&missing.stderr);
    assert!(err.contains("contrast-3") && err.contains("contrast-2") && !err.contains("contrast-4"), "{err}");

    let out = tmp.path().join("r1");
    let table = ok(&["report", "--root", p(&root), "--out", p(&out), "--contrast", "4", "--only-with-priors", "--max-iters", "10"]);
    assert!(table.contains("4:1") && table.contains("with shape priors") && !table.contains("without"), "{table}");
    let csv = fs::read_to_string(out.join("table1.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2);

    let out = tmp.path().join("r2");
    ok(&["report", "--root", p(&root), "--out", p(&out), "--contrast", "4", "--max-iters", "10"]);
    let csv = fs::read_to_string(out.join("table1.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 2);
    for f in ["table1.json", "table1.txt", "trace_contrast-4_with.csv", "trace_contrast-4_without.csv"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
}

#[test]
fn shape_prior_lowers_nmse_on_a_shadowed_phantom() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = tmp.path().join("ds");
    // the default 4:1 dataset; image 20 is the first test image
    ok(&["simulate", "--out", p(&ds), "--contrast", "4"]);
    ok(&["train", "--dataset", p(&ds)]);
    let model = ds.join("model.json");
    let image = ds.join("020_envelope.grd1");
    let truth = load_mask_pgm(ds.join("020_mask.pgm")).unwrap();
    let score = |name: &str, extra: &[&str]| {
        let out = tmp.path().join(name);
        let mut args = vec!["segment", "--model", p(&model), "--image", p(&image), "--out", p(&out), "--max-iters", "250"];
        args.extend_from_slice(extra);
        ok(&args);
        nmse(&truth, &load_mask_pgm(out.join("mask.pgm")).unwrap()).unwrap()
    };
    let with = score("with", &[]);
    let without = score("without", &["--no-shape-prior"]);
    assert!(with < without, "with {with} vs without {without}");
}
