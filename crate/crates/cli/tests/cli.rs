use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dosedesign::NamedDesignKind;
use dosedesign_cli::{evaluation_report, EvaluationReport, RunManifest};
use tempfile::TempDir;

fn dosedesign(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dosedesign"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures")
        .join(name)
}

fn construct(dir: &TempDir, name: &str, n: usize, file: &str) -> PathBuf {
    let path = dir.path().join(file);
    let out = dosedesign(&[
        "construct",
        name,
        "--n",
        &n.to_string(),
        "--out",
        path_str(&path),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    path
}

fn evaluate(path: &Path) -> (EvaluationReport, String) {
    let out = dosedesign(&["evaluate", path_str(path), "--format", "json"]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    (serde_json::from_str(&text).unwrap(), text)
}

#[test]
fn construct_then_evaluate_matches_in_memory() {
    let dir = TempDir::new().unwrap();
    for (name, kind) in [
        ("senn", NamedDesignKind::Senn),
        ("uniform-extended", NamedDesignKind::UniformlyExtendedSenn),
        (
            "highest-dose-extended",
            NamedDesignKind::HighestDoseExtendedSenn,
        ),
    ] {
        for n in [2, 4] {
            let json = construct(&dir, name, n, &format!("{name}{n}.json"));
            let csv = construct(&dir, name, n, &format!("{name}{n}.csv"));
            let (from_json, json_text) = evaluate(&json);
            let (_, csv_text) = evaluate(&csv);
            let memory = evaluation_report(&kind.build(n).unwrap()).unwrap();
            assert_eq!(from_json, memory);
            assert_eq!(
                json_text,
                serde_json::to_string_pretty(&memory).unwrap() + "\n"
            );
            assert_eq!(json_text, csv_text);
        }
    }
}

#[test]
fn senn_report_values() {
    let dir = TempDir::new().unwrap();
    let (r, _) = evaluate(&construct(&dir, "senn", 4, "s.json"));
    assert_eq!(r.e, Some(0.0625));
    assert!((r.mv.unwrap() - 16.0).abs() <= 1e-10);
    for v in r.lv.unwrap() {
        assert!((v - 16.0).abs() <= 1e-9);
    }
    assert_eq!(r.is_e_optimal_standard, Some(true));
    assert_eq!(r.named_design.as_deref(), Some("senn"));
}

#[test]
fn manifest_records_the_run() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("a.json");
    let status = dosedesign(&[
        "optimize",
        "--n",
        "4",
        "--class",
        "e-optimal",
        "--objective",
        "a",
        "--seed",
        "7",
        "--out",
        path_str(&out),
    ]);
    assert_eq!(status.status.code(), Some(0));
    let manifest: RunManifest = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("a.json.manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest.command, "optimize");
    assert_eq!(manifest.seed, 7);
    assert_eq!(manifest.tool_version, env!("CARGO_PKG_VERSION"));
    assert!(manifest.inputs.contains_key("config"));
    for p in &manifest.outputs {
        assert!(Path::new(p).exists(), "{p}");
    }
    assert!(dir.path().join("a.json.log.csv").exists());
}

#[test]
fn seeded_optimization_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let run = |file: &str| {
        let out = dir.path().join(file);
        let status = dosedesign(&[
            "optimize",
            "--n",
            "3",
            "--objective",
            "d",
            "--starts",
            "4",
            "--seed",
            "11",
            "--out",
            path_str(&out),
        ]);
        assert_eq!(status.status.code(), Some(0));
        (
            std::fs::read_to_string(&out).unwrap(),
            std::fs::read_to_string(dir.path().join(format!("{file}.log.csv"))).unwrap(),
        )
    };
    assert_eq!(run("x.json"), run("y.json"));
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let senn = construct(&dir, "senn", 3, "senn.json");
    let highest = construct(&dir, "highest-dose-extended", 3, "h.json");
    assert_eq!(
        dosedesign(&["certify", path_str(&senn), "--claim", "e"])
            .status
            .code(),
        Some(0)
    );
    assert_eq!(
        dosedesign(&["certify", path_str(&highest), "--claim", "c:dose=3"])
            .status
            .code(),
        Some(0)
    );
    assert_eq!(
        dosedesign(&["certify", path_str(&highest), "--claim", "e"])
            .status
            .code(),
        Some(2)
    );
    let starved = dosedesign(&[
        "optimize",
        "--n",
        "4",
        "--objective",
        "a",
        "--max-iters",
        "2",
    ]);
    assert_eq!(starved.status.code(), Some(2));

    let missing = dir.path().join("missing.json");
    assert_eq!(
        dosedesign(&["evaluate", path_str(&missing)]).status.code(),
        Some(3)
    );
    let garbage = dir.path().join("bad.csv");
    std::fs::write(&garbage, "i\\k,1,2\n0,1/2,oops\n").unwrap();
    assert_eq!(
        dosedesign(&["evaluate", path_str(&garbage)]).status.code(),
        Some(3)
    );
    assert_eq!(
        dosedesign(&["certify", path_str(&senn), "--claim", "q"])
            .status
            .code(),
        Some(3)
    );
    assert_eq!(
        dosedesign(&["construct", "senn", "--n", "1"]).status.code(),
        Some(3)
    );
    assert_eq!(dosedesign(&["oracle", "--n", "5"]).status.code(), Some(3));
    assert_eq!(dosedesign(&["frobnicate"]).status.code(), Some(3));
    assert_eq!(dosedesign(&["--help"]).status.code(), Some(0));
}

#[test]
fn table_fixture_is_recognized() {
    let (r, _) = evaluate(&fixture("e_class_a_optimal_n4.csv"));
    assert_eq!(r.is_e_optimal_extended, Some(true));
    assert!((r.e.unwrap() - 0.0625).abs() <= 1e-10);
}

#[test]
fn infeasible_design_reports_nulls() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("placebo.csv");
    std::fs::write(&path, "i\\k,1,2\n0,1/2,1/2\n1,0,0\n2,0,0\n").unwrap();
    let (r, text) = evaluate(&path);
    assert!(!r.feasible);
    assert!(r.e.is_none() && r.a.is_none() && r.lv.is_none());
    assert!(text.contains("\"e\": null"));
}
