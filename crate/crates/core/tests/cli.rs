//! End-to-end tests of the `morley` binary.

use std::process::{Command, Output};

use morley::analysis::{read_csv, CSV_HEADER};

fn morley(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_morley")).args(args).output().unwrap()
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn solve_reports_errors() {
    let out = morley(&["solve", "--dim", "2", "--mesh", "uniform:16", "--problem", "sinsin"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert!(v["err_l2"].as_f64().unwrap() > 0.0);
    assert_eq!(v["ndof"], 833);
    assert_eq!(v["solver"]["converged"], true);
}

#[test]
fn solve_rejects_invalid_config() {
    assert_eq!(morley(&["solve", "--dim", "2", "--mesh", "uniform:0"]).status.code(), Some(2));
    assert_eq!(morley(&["solve", "--mesh", "uniform:4", "--problem", "nope"]).status.code(), Some(2));
    assert_eq!(morley(&["solve", "--mesh", "uniform:4", "--tol", "0"]).status.code(), Some(2));
    assert_eq!(morley(&["solve"]).status.code(), Some(2));
}

#[test]
fn zero_problem_has_zero_error() {
    let out = morley(&["solve", "--mesh", "uniform:4", "--problem", "zero"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(json(&out)["err_l2"].as_f64().unwrap() <= 1e-12);
}

#[test]
fn non_convergence_exit_code() {
    let out = morley(&["solve", "--mesh", "pattern:1-4,level=4", "--max-iter", "1"]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(json(&out)["solver"]["converged"], false);
}

#[test]
fn study_csv_contract_and_determinism() {
    let args = ["study", "--dim", "2", "--mesh", "uniform:4", "--problem", "sinsin", "--levels", "5"];
    let a = morley(&args);
    assert_eq!(a.status.code(), Some(0));
    let text = String::from_utf8(a.stdout.clone()).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), CSV_HEADER.join(","));
    let rows = read_csv(text.as_bytes()).unwrap();
    assert_eq!(rows.len(), 5);
    assert!(rows[0].rate_l2.is_none() && rows[0].rate_h1.is_none());
    assert!(rows[1..].iter().all(|r| r.rate_l2.is_some()));
    let b = morley(&args);
    assert_eq!(a.stdout, b.stdout);
    let single = Command::new(env!("CARGO_BIN_EXE_morley"))
        .args(args)
        .env("MORLEY_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(a.stdout, single.stdout);
    let multi = Command::new(env!("CARGO_BIN_EXE_morley"))
        .args(args)
        .env("MORLEY_THREADS", "3")
        .output()
        .unwrap();
    assert_eq!(a.stdout, multi.stdout);
    assert_eq!(morley(&["study", "--mesh", "uniform:4", "--levels", "1"]).status.code(), Some(2));
}

#[test]
fn study_writes_files() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("s.csv");
    let js = dir.path().join("s.json");
    let out = morley(&[
        "study",
        "--mesh",
        "divisional:split=0.3,counts=1:2",
        "--levels",
        "2",
        "--csv",
        csv.to_str().unwrap(),
        "--output",
        js.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(read_csv(std::fs::File::open(&csv).unwrap()).unwrap().len(), 2);
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&js).unwrap()).unwrap();
    assert_eq!(doc["metadata"]["problem"], "sinsin");
    assert_eq!(doc["metadata"]["quad_points"], 5);
    assert!(doc["metadata"]["wall_time_s"].as_f64().is_some());
    assert_eq!(doc["records"].as_array().unwrap().len(), 2);
}

#[test]
fn verify_passes_and_lists_every_lemma() {
    let out = morley(&["verify", "--dims", "2,3", "--trials", "10"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    let reports = v["reports"].as_array().unwrap();
    for dim in [2, 3] {
        let mine: Vec<_> = reports.iter().filter(|r| r["dim"] == dim).collect();
        let mut names: Vec<&str> = mine.iter().map(|r| r["lemma"].as_str().unwrap()).collect();
        let n = names.len();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), n, "one entry per lemma");
        assert!(names.contains(&"unisolvence") && names.contains(&"conformity"));
        for r in mine {
            for key in ["lemma", "dim", "trials", "seed", "tolerance", "max_residual", "pass"] {
                assert!(r.get(key).is_some(), "missing {key}");
            }
        }
    }
}

#[test]
fn verify_detects_injected_fault() {
    let out = morley(&["verify", "--dims", "2", "--trials", "5", "--inject-fault"]);
    assert_eq!(out.status.code(), Some(1));
    let v = json(&out);
    let conf = v["reports"].as_array().unwrap().iter().find(|r| r["lemma"] == "conformity").unwrap();
    assert_eq!(conf["pass"], false);
}

#[test]
fn saved_config_reproduces_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = morley(&["solve", "--mesh", "pattern:1-4,level=2", "--problem", "bubble"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, serde_json::to_string(&v["config"]).unwrap()).unwrap();
    let again = morley(&["run", cfg.to_str().unwrap()]);
    assert_eq!(again.status.code(), Some(0));
    assert_eq!(out.stdout, again.stdout);
}

#[test]
fn mesh_from_file_and_solution_output() {
    let dir = tempfile::tempdir().unwrap();
    let mesh = dir.path().join("mesh.json");
    std::fs::write(
        &mesh,
        r#"{"dim": 2, "family": "explicit", "breakpoints": [[0, 0.25, 1], [0, 0.5, 0.75, 1]]}"#,
    )
    .unwrap();
    let sol = dir.path().join("uh.json");
    let spec = format!("file:{}", mesh.display());
    let out = morley(&["solve", "--mesh", &spec, "--solution", sol.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&out)["ndof"], 12 + 9 + 8);
    let uh = morley::space::FeFunction::from_json(&std::fs::read_to_string(&sol).unwrap()).unwrap();
    assert_eq!(uh.mesh().cells_per_axis(), vec![2, 3]);
    assert_eq!(morley(&["solve", "--dim", "3", "--mesh", &spec]).status.code(), Some(2));
}
