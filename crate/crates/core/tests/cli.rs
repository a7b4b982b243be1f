use std::path::Path;
use std::process::{Command, Output};

use rtglmm::distributions::Family;
use rtglmm::glmm::{ErrorVarianceMode, FittedGlmm};

fn rtglmm(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rtglmm"))
        .args(args)
        .current_dir(dir)
        .env_remove("RTGLMM_OUT_DIR")
        .output()
        .unwrap()
}

fn ok(args: &[&str], dir: &Path) -> String {
    let out = rtglmm(args, dir);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn simulate_writes_requested_rows_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path();
    let args = [
        "simulate", "--family", "ig", "--mu", "2", "--phi", "1", "--n", "1000", "--seed", "7",
    ];
    ok(&[&args[..], &["--out-dir", "a"]].concat(), w);
    ok(&[&args[..], &["--out-dir", "b"]].concat(), w);
    let a = std::fs::read(w.join("a/sample.csv")).unwrap();
    assert_eq!(a, std::fs::read(w.join("b/sample.csv")).unwrap());
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 1001);
    assert!(w.join("a/manifest.json").exists());
}

#[test]
fn exit_codes_by_failure_class() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path();
    let code = |args: &[&str]| rtglmm(args, w).status.code().unwrap();

    assert_eq!(
        code(&["simulate", "--family", "ig", "--mu", "2", "--phi", "1", "--n", "0"]),
        2
    );
    assert_eq!(
        code(&["simulate", "--family", "ig", "--mu", "-2", "--phi", "1", "--n", "10"]),
        2
    );
    assert_eq!(
        code(&[
            "fit",
            "--data",
            "missing.csv",
            "--levels",
            "3",
            "--family",
            "gamma",
            "--response",
            "r"
        ]),
        5
    );

    std::fs::write(
        w.join("bad.csv"),
        "subject_id,level_id,block,response,rt_seconds\ns1,1,1,r,-1\n",
    )
    .unwrap();
    assert_eq!(
        code(&[
            "fit",
            "--data",
            "bad.csv",
            "--levels",
            "1",
            "--family",
            "gamma",
            "--response",
            "r"
        ]),
        3
    );
}

#[test]
fn fit_reports_labels_and_node_sensitivity() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path();
    ok(
        &[
            "synthesize",
            "--family",
            "gamma",
            "--levels",
            "3",
            "--subjects",
            "25",
            "--reps",
            "5",
            "--beta",
            "-0.3,0,0.3",
            "--tau2",
            "0.15",
            "--phi",
            "0.5",
            "--labels",
            "happy,sad",
            "--probs",
            "0.6,0.4",
            "--seed",
            "4",
            "--out-dir",
            "syn",
        ],
        w,
    );
    let missing = rtglmm(
        &[
            "fit",
            "--data",
            "syn/trials.csv",
            "--levels",
            "3",
            "--family",
            "gamma",
            "--response",
            "angry",
        ],
        w,
    );
    assert_eq!(missing.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&missing.stderr);
    assert!(
        stderr.contains("happy") && stderr.contains("sad"),
        "{stderr}"
    );

    let stdout = ok(
        &[
            "fit",
            "--data",
            "syn/trials.csv",
            "--levels",
            "3",
            "--family",
            "gamma",
            "--response",
            "happy",
            "--nagq",
            "1",
            "--compare-nagq",
            "15",
            "--out-dir",
            "fit",
        ],
        w,
    );
    assert!(stdout.contains("loglik(nagq=15)"), "{stdout}");
    let model = json(&w.join("fit/model.json"));
    assert_eq!(model["converged"], true);
    assert!(model["aic"].as_f64().unwrap().is_finite());
}

#[test]
fn reconstruct_known_model() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path();
    // tau2 = 0, mean e^beta = 2, variance phi * 2^3 = 8
    let mut model = FittedGlmm::from_parameters(
        Family::InverseGaussian,
        vec![2f64.ln()],
        0.0,
        1.0,
        ErrorVarianceMode::Exact,
    )
    .unwrap();
    model.save(&w.join("ig.json")).unwrap();
    ok(
        &[
            "reconstruct",
            "--model",
            "ig.json",
            "--level",
            "1",
            "--seed",
            "2",
            "--out-dir",
            "rec",
        ],
        w,
    );
    let rec = json(&w.join("rec/reconstruction.json"));
    assert!((rec["diffusion"]["start"]["a"].as_f64().unwrap() - 1.0).abs() < 1e-14);
    assert!((rec["diffusion"]["drift"].as_f64().unwrap() - 0.5).abs() < 1e-14);
    assert_eq!(rec["diffusion"]["delta"], 0.01);
    let fht = std::fs::read_to_string(w.join("rec/fht.csv")).unwrap();
    assert_eq!(fht.lines().count(), 501);

    model.converged = false;
    model.save(&w.join("stale.json")).unwrap();
    let out = rtglmm(
        &[
            "reconstruct",
            "--model",
            "stale.json",
            "--level",
            "1",
            "--out-dir",
            "rec2",
        ],
        w,
    );
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn end_to_end_pipeline_is_not_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path();
    ok(
        &[
            "synthesize",
            "--family",
            "ig",
            "--levels",
            "3",
            "--subjects",
            "60",
            "--reps",
            "7",
            "--beta",
            "-0.4,0,0.3",
            "--tau2",
            "0.1",
            "--phi",
            "0.5",
            "--seed",
            "12",
            "--out-dir",
            "syn",
        ],
        w,
    );
    let label = std::fs::read_to_string(w.join("syn/trials.csv"))
        .unwrap()
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .nth(3)
        .unwrap()
        .to_string();
    ok(
        &[
            "fit",
            "--data",
            "syn/trials.csv",
            "--levels",
            "3",
            "--family",
            "ig",
            "--response",
            &label,
            "--out-dir",
            "fit",
        ],
        w,
    );
    ok(
        &[
            "reconstruct",
            "--model",
            "fit/model.json",
            "--level",
            "2",
            "--delta",
            "0.001",
            "--seed",
            "5",
            "--out-dir",
            "rec",
        ],
        w,
    );
    let gof = json(&w.join("rec/gof/gof.json"));
    assert!(gof["ks_pvalue"].as_f64().unwrap() > 0.01, "{gof}");
}
