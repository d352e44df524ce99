//! End-to-end runs of the `seiswass` binary.
//!
//! Golden files under `tests/fixtures/golden` were produced by these same
//! commands at the pinned seeds and settings below. Set `UPDATE_GOLDEN=1` to
//! regenerate them after an intended change of output.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn seiswass(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seiswass"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Path, args: &[&str]) {
    let o = seiswass(out, args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    assert!(o.stdout.is_empty(), "data goes to files only");
}

fn blob(name: &str) -> String {
    fixtures().join(name).to_string_lossy().into_owned()
}

fn golden(dir: &Path, file: &str, name: &str) {
    let got = std::fs::read(dir.join(file)).unwrap();
    let path = fixtures().join("golden").join(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, &got).unwrap();
    }
    let want = std::fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert!(got == want, "{name} differs from its golden copy");
}

fn json(dir: &Path, file: &str) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(dir.join(file)).unwrap()).unwrap()
}

#[test]
fn w2_translated_blob_golden() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["w2", &blob("blob_f.csv"), &blob("blob_g.csv")]);
    golden(d.path(), "w2.json", "w2_blob.json");
    // Shift of 0.1 along x1.
    let w2 = json(d.path(), "w2.json")["w2_squared"].as_f64().unwrap();
    assert!((w2 - 0.01).abs() < 0.002, "{w2}");
}

#[test]
fn w2_of_identical_files_vanishes() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["w2", &blob("blob_f.csv"), &blob("blob_f.csv")]);
    let v = json(d.path(), "w2.json");
    assert!(v["w2_squared"].as_f64().unwrap() <= 1e-6);
    assert_eq!(v["l2_squared"].as_f64().unwrap(), 0.0);
    assert!(v["solver_report"]["plus"]["report"]["residual_history"].is_array());
}

#[test]
fn register_golden() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["register", &blob("blob_f.csv"), &blob("blob_g.csv")]);
    golden(d.path(), "displacement.csv", "displacement_blob.csv");
    let text = std::fs::read_to_string(d.path().join("displacement.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("x1,x2,d1,d2,f_value"));
    // Where the blob carries real mass, vectors point along +x1 by about 0.1.
    let mut checked = 0;
    for l in lines {
        let v: Vec<f64> = l.split(',').map(|s| s.parse().unwrap()).collect();
        if v[4] > 0.5 {
            assert!((v[2] - 0.1).abs() < 0.03 && v[3].abs() < 0.03, "{l}");
            checked += 1;
        }
    }
    assert!(checked > 0);
}

#[test]
fn synth_golden_with_seeded_noise() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["--seed", "7", "synth", "--model", "1,0.5,1,1.5", "--noise-rel", "0.1"]);
    golden(d.path(), "panel.csv", "panel_noisy_seed7.csv");
    assert_eq!(json(d.path(), "model.json"), serde_json::json!({"d1": 1.0, "d2": 0.5, "v1": 1.0, "v2": 1.5}));
}

#[test]
fn wavelet_sweep_golden() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["wavelet-sweep", "--s-min", "-2", "--s-max", "2", "--count", "9", "--noise", "both"]);
    golden(d.path(), "sweep.csv", "sweep_both_seed42.csv");
}

#[test]
fn clean_sweep_is_zero_at_zero_shift() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["wavelet-sweep", "--s-min", "-1", "--s-max", "1", "--count", "5"]);
    let text = std::fs::read_to_string(d.path().join("sweep.csv")).unwrap();
    let row: Vec<f64> = text.lines().nth(3).unwrap().split(',').map(|s| s.parse().unwrap()).collect();
    assert_eq!(row[0], 0.0);
    assert!(row[1].abs() < 1e-12 && row[2].abs() < 1e-12, "{row:?}");
}

#[test]
fn surface_golden() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["--jobs", "2", "surface", "--axis1", "d1:0.9:1.1:2", "--axis2", "v1:1:1.2:2"]);
    golden(d.path(), "surface.csv", "surface_2x2.csv");
}

#[test]
fn invert_golden() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["invert", "--max-evals", "12"]);
    golden(d.path(), "invert.json", "invert_12_evals.json");
    let v = json(d.path(), "invert.json");
    assert_eq!(v["converged"], serde_json::Value::Bool(false));
    assert_eq!(v["x_min"].as_array().unwrap().len(), 4);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        ok(d.path(), &["--seed", "3", "wavelet-sweep", "--count", "7", "--noise", "source"]);
        ok(d.path(), &["w2", &blob("blob_g.csv"), &blob("blob_f.csv")]);
    }
    for f in ["sweep.csv", "w2.json"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn flags_override_the_config_file() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("run.cfg");
    std::fs::write(&cfg, "# fails on purpose\nmax_iters = 1\ntol = 1e-12\n").unwrap();
    let cfg = cfg.to_string_lossy().into_owned();
    let o = seiswass(d.path(), &["--config", &cfg, "w2", &blob("blob_f.csv"), &blob("blob_g.csv")]);
    assert_eq!(o.status.code(), Some(1), "one Newton step cannot reach 1e-12");
    assert!(!o.stderr.is_empty());
    // A looser flag tolerance wins over the file.
    let o = seiswass(d.path(), &["--config", &cfg, "--tol", "1", "w2", &blob("blob_f.csv"), &blob("blob_g.csv")]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn input_errors_exit_2() {
    let d = tempfile::tempdir().unwrap();
    let o = seiswass(d.path(), &["w2", "missing.csv", &blob("blob_f.csv")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.csv"));

    let bad = d.path().join("bad.csv");
    std::fs::write(&bad, "4,4,0,1,0,1\n0,0,0,0\n0,x,0,0\n").unwrap();
    let o = seiswass(d.path(), &["w2", &bad.to_string_lossy(), &blob("blob_f.csv")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"), "{}", String::from_utf8_lossy(&o.stderr));

    let cfg = d.path().join("bad.cfg");
    std::fs::write(&cfg, "theta_rel = 0.1\ncolour = blue\n").unwrap();
    let o = seiswass(d.path(), &["--config", &cfg.to_string_lossy(), "synth"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));

    let o = seiswass(d.path(), &["synth", "--model", "1,0.5,1"]);
    assert_eq!(o.status.code(), Some(2));
}
