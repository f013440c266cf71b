mod common;

use std::path::Path;
use std::process::{Command, Output};

fn iam(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_iam"));
    cmd.args(args).env_remove("IAM_THREADS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn det(out: &Path, extra: &[&str], env: &[(&str, &str)]) -> Output {
    let calib = common::calib_path();
    let mut args = vec![
        "solve-det",
        "--calib",
        calib.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend(extra);
    iam(&args, env)
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .map(|e| {
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    v.sort();
    v
}

#[test]
fn usage_and_config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let calib = common::calib_path();
    let calib = calib.to_str().unwrap();
    let bad_mode = iam(&["solve-everything", "--calib", calib, "--out", out], &[]);
    assert_eq!(code(&bad_mode), 2);
    assert!(String::from_utf8_lossy(&bad_mode.stderr).contains("usage: iam"));
    let rec: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("error.json")).unwrap()).unwrap();
    assert_eq!(rec["exit_code"], 2);

    assert_eq!(code(&iam(&["solve-det", "--out", out], &[])), 2);
    assert_eq!(
        code(&iam(&["solve-det", "--calib", "/no/such/file.toml", "--out", out], &[])),
        2
    );
    assert_eq!(code(&iam(&["regret", "--calib", calib, "--out", out], &[])), 2);
    assert_eq!(
        code(&iam(
            &["solve-det", "--calib", calib, "--out", out, "--horizon", "ten"],
            &[]
        )),
        2
    );
    assert_eq!(code(&det(dir.path(), &[], &[("IAM_THREADS", "zero")])), 2);
}

#[test]
fn broken_carbon_matrix_names_key_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let src = std::fs::read_to_string(common::calib_path()).unwrap();
    let bad = src.replacen("0.88, 0.196, 0.0", "0.90, 0.196, 0.0", 1);
    assert_ne!(bad, src);
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, bad).unwrap();
    let o = iam(
        &[
            "solve-det",
            "--calib",
            path.to_str().unwrap(),
            "--out",
            dir.path().to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(code(&o), 2);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("phi_m") && err.contains("line"), "{err}");
}

#[test]
fn unconverged_solve_exits_one_with_best_iterate() {
    let dir = tempfile::tempdir().unwrap();
    let o = det(dir.path(), &["--tol", "1e-30", "--horizon", "30"], &[]);
    assert_eq!(code(&o), 1);
    let rec: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("error.json")).unwrap()).unwrap();
    assert_eq!(rec["kind"], "not_converged");
    assert_eq!(rec["best_iterate"].as_array().unwrap().len(), 60);
}

#[test]
fn repeated_runs_are_byte_identical_whatever_the_thread_count() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    assert_eq!(code(&det(a.path(), &[], &[])), 0);
    assert_eq!(code(&det(b.path(), &[], &[])), 0);
    assert_eq!(code(&det(c.path(), &[], &[("IAM_THREADS", "1")])), 0);
    let (fa, fb, fc) = (files(a.path()), files(b.path()), files(c.path()));
    let names: Vec<_> = fa.iter().map(|f| f.0.as_str()).collect();
    assert_eq!(names, ["manifest.json", "trajectory.csv"]);
    let strip = |f: &[(String, Vec<u8>)]| -> Vec<Vec<u8>> {
        f.iter()
            .filter(|x| x.0.ends_with(".csv"))
            .map(|x| x.1.clone())
            .collect()
    };
    assert_eq!(strip(&fa), strip(&fb));
    assert_eq!(strip(&fa), strip(&fc));
    let manifest = |d: &Path| {
        let mut m: serde_json::Value =
            serde_json::from_slice(&std::fs::read(d.join("manifest.json")).unwrap()).unwrap();
        m["command"]["out"] = serde_json::Value::Null;
        m
    };
    assert_eq!(manifest(a.path()), manifest(b.path()));
}

#[test]
fn csv_floats_round_trip_with_seventeen_digits() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&det(dir.path(), &["--horizon", "20"], &[])), 0);
    let text = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "t,year,K,M_AT,M_UO,M_DO,T_AT,T_OC,C,mu,E,SCC,tax"
    );
    for line in lines {
        for cell in line.split(',').skip(1) {
            let v: f64 = cell.parse().unwrap();
            let (mantissa, _) = cell.split_once('e').unwrap();
            assert_eq!(mantissa.trim_start_matches('-').replace('.', "").len(), 17, "{cell}");
            assert_eq!(format!("{v:.16e}"), cell);
        }
    }
}

#[test]
fn manifest_records_outputs_and_inputs() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&det(dir.path(), &["--horizon", "40"], &[])), 0);
    let m: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["passed"], true);
    assert_eq!(m["command"]["horizon"], 40);
    assert_eq!(m["settings"]["det"]["periods"], 40);
    assert_eq!(m["calibration"]["fnv1a"].as_str().unwrap().len(), 16);
    let outs = m["outputs"].as_array().unwrap();
    let traj = std::fs::read(dir.path().join("trajectory.csv")).unwrap();
    assert_eq!(outs[0]["file"], "trajectory.csv");
    assert_eq!(outs[0]["bytes"], traj.len());
    assert!(m["checks"].as_array().unwrap().iter().all(|c| c["passed"] == true));
}

#[test]
fn base_inheritance_overrides_single_keys() {
    let dir = tempfile::tempdir().unwrap();
    let child = dir.path().join("child.toml");
    std::fs::write(
        &child,
        format!(
            "base = {:?}\n[params]\npi2 = 0.004\n[run.det]\nperiods = 30\n",
            common::calib_path().to_str().unwrap()
        ),
    )
    .unwrap();
    let base_out = dir.path().join("base");
    let child_out = dir.path().join("child");
    assert_eq!(code(&det(&base_out, &["--horizon", "30"], &[])), 0);
    let o = iam(
        &[
            "scc",
            "--calib",
            child.to_str().unwrap(),
            "--out",
            child_out.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let scc = |p: &Path| -> f64 {
        let text = std::fs::read_to_string(p.join("trajectory.csv")).unwrap();
        let row = text.lines().nth(1).unwrap();
        row.split(',').nth(11).unwrap().parse().unwrap()
    };
    assert!(scc(&child_out) > 1.5 * scc(&base_out));
    assert_eq!(
        std::fs::read_to_string(child_out.join("trajectory.csv"))
            .unwrap()
            .lines()
            .count(),
        31
    );

    let cycle = dir.path().join("cycle.toml");
    std::fs::write(&cycle, "base = \"cycle.toml\"\n").unwrap();
    assert_eq!(
        code(&iam(
            &[
                "solve-det",
                "--calib",
                cycle.to_str().unwrap(),
                "--out",
                child_out.to_str().unwrap()
            ],
            &[]
        )),
        2
    );
}

#[test]
fn summarize_reads_an_ensemble() {
    let dir = tempfile::tempdir().unwrap();
    let mut ens = String::from("path,t,variable,value\n");
    for p in 0..20 {
        for t in 0..3 {
            ens.push_str(&format!("{p},{t},SCC,{}\n", (p * 10 + t) as f64));
        }
    }
    let input = dir.path().join("ens.csv");
    std::fs::write(&input, ens).unwrap();
    let o = iam(
        &[
            "summarize",
            "--input",
            input.to_str().unwrap(),
            "--out",
            dir.path().to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let q = std::fs::read_to_string(dir.path().join("quantiles.csv")).unwrap();
    let lines: Vec<_> = q.lines().collect();
    assert_eq!(lines[0], "t,variable,q05,q25,q50,q75,q95");
    assert_eq!(lines.len(), 4);
    let med: f64 = lines[1].split(',').nth(4).unwrap().parse().unwrap();
    assert!((med - 95.0).abs() < 1e-9, "{med}");
}

#[test]
fn robust_modes_write_matrices() {
    let dir = tempfile::tempdir().unwrap();
    let calib = common::configs().join("robust.toml");
    for (mode, criterion) in [
        ("regret", "min_max_regret"),
        ("maxmin", "max_min"),
        ("expected", "expected_welfare"),
    ] {
        let out = dir.path().join(mode);
        let o = iam(
            &[
                mode,
                "--calib",
                calib.to_str().unwrap(),
                "--horizon",
                "5",
                "--out",
                out.to_str().unwrap(),
            ],
            &[],
        );
        assert_eq!(code(&o), 0, "{mode}: {}", String::from_utf8_lossy(&o.stderr));
        let regret = std::fs::read_to_string(out.join("regret_matrix.csv")).unwrap();
        assert_eq!(
            regret.lines().next().unwrap(),
            format!("scenario,opt:low,opt:central,opt:high,{criterion}")
        );
        assert_eq!(regret.lines().count(), 4);
    }
}
