use std::fs;
use std::path::Path;
use std::process::Command;

use acca::io::{read_matrix_csv, write_matrix_csv};
use acca::Matrix;
use acca_cli::{cmd_eval, cmd_fit, cmd_generate, cmd_sweep, exit_code, Cli};
use clap::Parser;

fn parse(args: &[&str]) -> Cli {
    Cli::try_parse_from(std::iter::once("acca").chain(args.iter().copied())).unwrap()
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_acca"))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn generate_writes_consistent_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("g");
    let cli = parse(&["generate", "--seed", "3", "--out", s(&out)]);
    acca_cli::run(cli).unwrap();
    let x = read_matrix_csv(&out.join("X.csv")).unwrap();
    let y = read_matrix_csv(&out.join("Y.csv")).unwrap();
    let p = read_matrix_csv(&out.join("P_true.csv")).unwrap();
    assert_eq!(x.shape(), (15, 20));
    assert_eq!(y.shape(), (10, 20));
    assert_eq!(p.shape(), (20, 20));
    let inst = acca::generate(&acca::GenConfig::default().with_seed(3)).unwrap();
    assert_eq!(x, inst.data.x);
    assert_eq!(y, inst.data.y);
    assert_eq!(p, inst.p_true);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["seed"], 3);
}

#[test]
fn fit_from_files_matches_synthetic_fit() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("g");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    acca_cli::run(parse(&["generate", "--seed", "1", "--out", s(&g)])).unwrap();
    acca_cli::run(parse(&[
        "fit",
        "--x",
        s(&g.join("X.csv")),
        "--y",
        s(&g.join("Y.csv")),
        "--p-true",
        s(&g.join("P_true.csv")),
        "--seed",
        "1",
        "--out",
        s(&a),
    ]))
    .unwrap();
    acca_cli::run(parse(&["fit", "--synthetic", "--seed", "1", "--out", s(&b)])).unwrap();
    // file input is re-centered, which perturbs the views at rounding level
    let pa = read_matrix_csv(&a.join("P_est.csv")).unwrap();
    let pb = read_matrix_csv(&b.join("P_est.csv")).unwrap();
    assert!((pa - pb).amax() < 1e-8);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("report.json")).unwrap()).unwrap();
    let synth: serde_json::Value = serde_json::from_str(&fs::read_to_string(b.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["topk"], synth["topk"]);
    assert_eq!(report["hyperparams"]["d"], 7);
    assert_eq!(report["hyperparams"]["lambda"], 0.1);
    assert_eq!(report["topk"]["k_values"].as_array().unwrap().len(), 5);
    assert!(b.join("P_true.pgm").exists());
    assert!(!a.join("P_true.pgm").exists());
}

#[test]
fn fit_reports_are_rerun_stable() {
    let dir = tempfile::tempdir().unwrap();
    let runs: Vec<_> = (0..2).map(|i| dir.path().join(format!("r{i}"))).collect();
    for out in &runs {
        acca_cli::run(parse(&[
            "fit",
            "--synthetic",
            "--seed",
            "9",
            "--lambda",
            "0.5",
            "--out",
            s(out),
        ]))
        .unwrap();
    }
    for name in ["report.json", "loss_trace.csv", "P_est.csv", "P_est.pgm"] {
        assert_eq!(
            fs::read(runs[0].join(name)).unwrap(),
            fs::read(runs[1].join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn eval_scores_a_known_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let truth = Matrix::identity(4, 4);
    // rows 0 and 1 are right at k=1; row 2 at k=2; row 3 never in top 2
    let est = Matrix::from_row_slice(
        4,
        4,
        &[
            0.7, 0.1, 0.1, 0.1, 0.1, 0.7, 0.1, 0.1, 0.5, 0.1, 0.3, 0.1, 0.4, 0.3, 0.2, 0.1,
        ],
    );
    write_matrix_csv(&dir.path().join("t.csv"), &truth).unwrap();
    write_matrix_csv(&dir.path().join("e.csv"), &est).unwrap();
    let cli = parse(&[
        "eval",
        "--p-est",
        s(&dir.path().join("e.csv")),
        "--p-true",
        s(&dir.path().join("t.csv")),
        "--k",
        "1,2,4",
    ]);
    let acca_cli::Command::Eval(args) = cli.command else {
        unreachable!()
    };
    cmd_eval(&args).unwrap();
    let csv = fs::read_to_string(dir.path().join("eval.csv")).unwrap();
    assert_eq!(csv, "k,accuracy,baseline\n1,0.5,0.25\n2,0.75,0.5\n4,1.0,1.0\n");
}

#[test]
fn sweep_writes_per_lambda_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sw");
    let cli = parse(&[
        "sweep",
        "--lambdas",
        "0.5,1",
        "--replicates",
        "2",
        "--n",
        "8",
        "--out",
        s(&out),
    ]);
    let acca_cli::Command::Sweep(args) = cli.command else {
        unreachable!()
    };
    cmd_sweep(&args).unwrap();
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "lambda,k,mean,std,baseline");
    assert_eq!(lines.len(), 1 + 2 * 5);
    assert!(lines[1].starts_with("0.5,1,"));
    for f in [
        "P_lambda_0.5.pgm",
        "P_lambda_1.0.pgm",
        "P_true.pgm",
        "topk_lambda_1.0.csv",
        "loss_lambda_0.5.csv",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn validation_errors_map_to_exit_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let cli = parse(&["fit", "--synthetic", "--lambda", "3.5", "--out", s(dir.path())]);
    let acca_cli::Command::Fit(args) = cli.command else {
        unreachable!()
    };
    let err = cmd_fit(&args).unwrap_err();
    assert_eq!(exit_code(&err), 2);
    assert!(err.to_string().contains("ln N"), "{err}");

    let cli = parse(&["generate", "--dbar", "11", "--out", s(dir.path())]);
    let acca_cli::Command::Generate(args) = cli.command else {
        unreachable!()
    };
    let err = cmd_generate(&args).unwrap_err();
    assert_eq!(exit_code(&err), 2);
}

#[test]
fn sample_count_mismatch_names_both_shapes() {
    let dir = tempfile::tempdir().unwrap();
    write_matrix_csv(&dir.path().join("x.csv"), &Matrix::from_fn(3, 6, |i, j| (i * j) as f64)).unwrap();
    write_matrix_csv(&dir.path().join("y.csv"), &Matrix::from_fn(2, 5, |i, j| (i + j) as f64)).unwrap();
    let out = bin()
        .args(["fit", "--x"])
        .arg(dir.path().join("x.csv"))
        .arg("--y")
        .arg(dir.path().join("y.csv"))
        .arg("--out")
        .arg(dir.path().join("o"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("3x6") && err.contains("2x5"), "{err}");
}

#[test]
fn io_and_parse_errors_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["eval", "--p-est"])
        .arg(dir.path().join("missing.csv"))
        .arg("--p-true")
        .arg(dir.path().join("missing.csv"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));

    fs::write(dir.path().join("bad.csv"), "1,2\n3,oops\n").unwrap();
    let out = bin()
        .args(["eval", "--p-est"])
        .arg(dir.path().join("bad.csv"))
        .arg("--p-true")
        .arg(dir.path().join("bad.csv"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn binary_runs_generate() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["generate", "--n", "6", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("15x6"));
}
