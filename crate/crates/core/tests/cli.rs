use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn pflow(args: &[&str], seed: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_pflow"));
    cmd.args(args).env_remove("PFLOW_SEED");
    if let Some(s) = seed {
        cmd.env("PFLOW_SEED", s);
    }
    cmd.output().expect("spawn pflow")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("pflow-cli-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    dir
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

fn csv(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect()
}

#[test]
fn example2_exponent_table() {
    let dir = scratch("ex2");
    let out = pflow(
        &["preset", "example2", "--analyses", "decompose,selgrade,exponents", "--out", dir.to_str().unwrap()],
        None,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));

    let rep = report(&dir);
    assert_eq!(rep["passed"], Value::Bool(true));
    let kinds: Vec<&str> = rep["analyses"].as_array().unwrap().iter().map(|a| a["kind"].as_str().unwrap()).collect();
    assert_eq!(kinds, ["decompose", "selgrade", "exponents"]);

    let exps: Vec<f64> = csv(&dir.join("decompose.csv")).iter().map(|r| r[1].parse().unwrap()).collect();
    assert_eq!(exps, [2.0, 1.0, -1.0]);

    let rows = csv(&dir.join("exponents.csv"));
    let mut theory: Vec<f64> = rows.iter().map(|r| r[2].parse().unwrap()).collect();
    theory.sort_by(f64::total_cmp);
    assert_eq!(theory, [-2.0, -1.0, 1.0]);
    for r in &rows {
        let th: f64 = r[2].parse().unwrap();
        let fwd: f64 = r[3].parse().unwrap();
        assert!((fwd - th).abs() <= 0.05, "{r:?}");
    }
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn example4_orbit_and_portrait() {
    let dir = scratch("ex4");
    let out = pflow(&["preset", "example4", "--analyses", "sphere-sim", "--out", dir.to_str().unwrap()], None);
    assert!(out.status.success());
    let svg = fs::read_to_string(dir.join("portrait_example4.svg")).unwrap();
    assert!(svg.starts_with("<svg") || svg.starts_with("<?xml"));
    assert!(svg.contains("class=\"trajectory\""));

    let rep = report(&dir);
    let rt = rep["analyses"][0]["results"]["trajectories"][0]["return_time"].as_f64().unwrap();
    assert!((rt - std::f64::consts::TAU).abs() < 1e-3, "{rt}");
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn runs_are_byte_identical() {
    let a = scratch("det-a");
    let b = scratch("det-b");
    let args = |d: &Path| {
        vec![
            "preset".to_owned(),
            "example1".to_owned(),
            "--analyses".to_owned(),
            "decompose,sphere-sim,limits,portrait".to_owned(),
            "--out".to_owned(),
            d.to_str().unwrap().to_owned(),
        ]
    };
    for d in [&a, &b] {
        let v = args(d);
        let v: Vec<&str> = v.iter().map(String::as_str).collect();
        assert!(pflow(&v, None).status.success());
    }
    let mut names: Vec<_> = fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".csv") || n.ends_with(".svg"))
        .collect();
    names.sort();
    assert!(names.contains(&"limits.csv".to_owned()));
    assert!(names.contains(&"portrait_example1.svg".to_owned()));
    for n in &names {
        assert_eq!(fs::read(a.join(n)).unwrap(), fs::read(b.join(n)).unwrap(), "{n} differs");
    }
    fs::remove_dir_all(&a).unwrap();
    fs::remove_dir_all(&b).unwrap();
}

#[test]
fn seed_override_is_recorded() {
    let dir = scratch("seed");
    let out = pflow(&["preset", "example2", "--analyses", "limits", "--out", dir.to_str().unwrap()], Some("7"));
    assert!(out.status.success());
    assert_eq!(report(&dir)["seed"], Value::from(7));

    let bad = pflow(&["preset", "example2", "--analyses", "limits", "--out", dir.to_str().unwrap()], Some("x"));
    assert_eq!(bad.status.code(), Some(2));
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn bad_scenarios_exit_with_a_path() {
    let dir = scratch("bad");
    fs::create_dir_all(&dir).unwrap();
    let file = dir.join("s.json");
    fs::write(
        &file,
        r#"{"name": "t", "system": {"a": [[1, 0], [0, -1]], "b": [[1], [1]], "u": {"type": "box", "lower": [-1], "upper": [1]}},
            "analyses": [{"kind": "reach", "cels": 11}]}"#,
    )
    .unwrap();
    let out = pflow(&["run", file.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("analyses[0]"), "{err}");

    let out = pflow(&["preset", "example9"], None);
    assert_eq!(out.status.code(), Some(2));
    let out = pflow(&["preset", "example1", "--analyses", "nonsense"], None);
    assert_eq!(out.status.code(), Some(2));
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn list_presets_names_all_five() {
    let out = pflow(&["list-presets"], None);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for k in 1..=5 {
        assert!(text.contains(&format!("example{k}")));
    }
}
