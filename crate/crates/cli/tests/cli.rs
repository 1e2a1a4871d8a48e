use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn dcalike(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dcalike"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn synth(dir: &Path, n: usize) -> String {
    let path = dir.join("data.csv");
    let out = dcalike(&[
        "synth",
        "--out",
        path.to_str().unwrap(),
        "--n",
        &n.to_string(),
        "--dim",
        "5",
        "--spread",
        "1",
    ]);
    assert!(out.status.success(), "{out:?}");
    path.to_str().unwrap().to_string()
}

#[test]
fn run_writes_embedding_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let input = synth(dir.path(), 50);
    let out_dir = dir.path().join("out");
    let out = dcalike(&[
        "run",
        "--input",
        &input,
        "--variant",
        "adca-like",
        "--max-iter",
        "40",
        "--seeds",
        "3,4",
        "--out",
        out_dir.to_str().unwrap(),
        "--no-timing",
    ]);
    assert!(out.status.success(), "{out:?}");
    for seed in [3, 4] {
        let trace =
            fs::read_to_string(out_dir.join(format!("adca-like-seed{seed}.trace.csv"))).unwrap();
        assert!(trace.starts_with(
            "iter,elapsed_sec,objective,mu,step_norm,backtracks,extrapolation_accepted\n"
        ));
        let emb =
            fs::read_to_string(out_dir.join(format!("adca-like-seed{seed}.emb.csv"))).unwrap();
        assert_eq!(emb.lines().count(), 50);
    }
    assert_eq!(stdout(&out).lines().count(), 2);
}

#[test]
fn bench_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let input = synth(dir.path(), 40);
    let out_dir = dir.path().join("bench");
    let out = dcalike(&[
        "bench",
        "--input",
        &input,
        "--max-iter",
        "30",
        "--seeds",
        "1,2",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{out:?}");
    let report = fs::read_to_string(out_dir.join("report.csv")).unwrap();
    assert!(report.starts_with("variant,metric,mean,median,stddev,n_seeds\n"));
    for variant in ["dca", "dca-like", "adca-like"] {
        assert!(
            report.contains(&format!("{variant},iterations,")),
            "{report}"
        );
    }
    assert!(out_dir.join("report.txt").is_file());
    assert!(out_dir.join("runs.csv").is_file());
}

#[test]
fn check_passes() {
    let out = dcalike(&["check", "--seed", "2"]);
    assert!(out.status.success(), "{}", stdout(&out));
    let text = stdout(&out);
    assert!(text.lines().count() >= 7);
    assert!(text.lines().all(|l| l.starts_with("PASS")), "{text}");
}

#[test]
fn bad_inputs_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.csv");
    let out = dcalike(&[
        "run",
        "--input",
        missing.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.csv"));

    let ragged = dir.path().join("ragged.csv");
    fs::write(&ragged, "1,2\n3\n").unwrap();
    let out = dcalike(&[
        "run",
        "--input",
        ragged.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    let out = dcalike(&[
        "run",
        "--input",
        ragged.to_str().unwrap(),
        "--variant",
        "sgd",
    ]);
    assert!(!out.status.success());
}
