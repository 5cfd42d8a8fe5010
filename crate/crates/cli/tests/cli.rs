use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nck_cli::manifest::config_hash;
use nck_core::evolution::RunConfig;
use serde_json::Value;

const EQUILIBRIUM: &str = r#"
n = 8
tau_end = 0.3
dtau = 0.01

[initial_data]
kind = "bose_einstein"
beta = 2.0
"#;

// N = 1, E = 0.2: far below the decay threshold, so the decay checks are gated off.
const CONDENSING: &str = r#"
n = 8
tau_end = 0.3
dtau = 0.01

[initial_data]
kind = "maxwellian"
N = 1.0
E = 0.2
condensate_fraction = 0.5
"#;

fn nck(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nck")).args(args).current_dir(dir).env_remove("NCK_OUT_DIR").output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(files_under(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

fn verdicts(bounds: &Path) -> Vec<(String, String)> {
    let doc: Value = serde_json::from_str(&fs::read_to_string(bounds).unwrap()).unwrap();
    doc["reports"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| (r["name"].as_str().unwrap().to_string(), r["verdict"].as_str().unwrap().to_string()))
        .collect()
}

#[test]
fn missing_tau_end_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "bad.toml", &EQUILIBRIUM.replace("tau_end = 0.3\n", ""));
    let o = nck(&["run", "--config", cfg.to_str().unwrap(), "--out-dir", "out"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("tau_end"), "{}", stderr(&o));
}

#[test]
fn invalid_field_value_names_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "bad.toml", &EQUILIBRIUM.replace("dtau = 0.01", "dtau = -1.0"));
    let o = nck(&["run", "--config", cfg.to_str().unwrap(), "--out-dir", "out"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("dtau"), "{}", stderr(&o));
}

#[test]
fn equilibrium_run_passes_and_stamps_every_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "eq.toml", EQUILIBRIUM);
    let o = nck(&["run", "--config", cfg.to_str().unwrap(), "--out-dir", "out"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = tmp.path().join("out");
    let v = verdicts(&out.join("bounds.json"));
    assert!(v.iter().all(|(_, s)| s != "FAIL"), "{v:?}");
    assert!(v.iter().filter(|(_, s)| s == "PASS").count() >= 10);

    let hash = config_hash(&toml::from_str::<RunConfig>(EQUILIBRIUM).unwrap());
    let files = files_under(&out);
    for name in ["trajectory.csv", "run.json", "bounds.json", "plots/condensate.gp"] {
        assert!(files.contains(&out.join(name)), "missing {name}");
    }
    for f in &files {
        assert!(fs::read_to_string(f).unwrap().contains(&hash), "{} lacks the manifest hash", f.display());
    }
    let run: Value = serde_json::from_str(&fs::read_to_string(out.join("run.json")).unwrap()).unwrap();
    assert_eq!(run["manifest"]["config_hash"], hash.as_str());
    assert_eq!(run["status"], "PASSED");
}

#[test]
fn decay_checks_are_gated_below_threshold() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", CONDENSING);
    let o = nck(&["run", "--config", cfg.to_str().unwrap(), "--out-dir", "out"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v = verdicts(&tmp.path().join("out/bounds.json"));
    for name in ["moment_decay", "condensate_decay", "decay_integral"] {
        let (_, s) = v.iter().find(|(n, _)| n == name).unwrap();
        assert_eq!(s, "NOT_APPLICABLE", "{name}");
    }
}

#[test]
fn out_dir_falls_back_to_env() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "eq.toml", EQUILIBRIUM);
    let o = Command::new(env!("CARGO_BIN_EXE_nck"))
        .args(["run", "--config", cfg.to_str().unwrap()])
        .current_dir(tmp.path())
        .env("NCK_OUT_DIR", tmp.path().join("from_env"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(tmp.path().join("from_env/trajectory.csv").exists());
}

#[test]
fn tight_slack_turns_checks_into_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "eq.toml", EQUILIBRIUM);
    // Slack far below 1 breaks the envelope checks that are tight at tau = 0.
    let o = nck(&["run", "--config", cfg.to_str().unwrap(), "--out-dir", "out", "--slack", "0.5"], tmp.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn identical_configs_give_identical_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "eq.toml", EQUILIBRIUM);
    // Same document with its keys in another order: same hash, same bytes.
    let reordered = "dtau = 0.01\ntau_end = 0.3\nn = 8\n\n[initial_data]\nbeta = 2.0\nkind = \"bose_einstein\"\n";
    let cfg2 = write(tmp.path(), "eq2.toml", reordered);
    for (c, d) in [(&cfg, "a"), (&cfg2, "b")] {
        let o = nck(&["run", "--config", c.to_str().unwrap(), "--out-dir", d, "--threads", "2"], tmp.path());
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    for name in ["trajectory.csv", "bounds.json"] {
        let a = fs::read(tmp.path().join("a").join(name)).unwrap();
        let b = fs::read(tmp.path().join("b").join(name)).unwrap();
        assert!(a == b, "{name} differs");
    }
}

#[test]
fn two_by_two_sweep_makes_four_cells() {
    let tmp = tempfile::tempdir().unwrap();
    let sweep = format!(
        "[base]\n{}\n[axes]\nn = [6, 8]\ndtau = [0.01, 0.02]\n",
        EQUILIBRIUM.replace("[initial_data]", "[base.initial_data]")
    );
    let cfg = write(tmp.path(), "sweep.toml", &sweep);
    let o = nck(&["sweep", "--config", cfg.to_str().unwrap(), "--out-dir", "sw"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let root = tmp.path().join("sw");
    let mut cells: Vec<String> = fs::read_dir(&root)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| e.path().is_dir())
        .map(|e| e.file_name().into_string().unwrap())
        .collect();
    cells.sort();
    assert_eq!(cells, ["cell_000", "cell_001", "cell_002", "cell_003"]);
    let summary = fs::read_to_string(root.join("summary.csv")).unwrap();
    let rows: Vec<&str> = summary.lines().filter(|l| l.starts_with("cell_")).collect();
    assert_eq!(rows.len(), 4);
    // Each cell's files carry that cell's own hash.
    for row in rows {
        let f: Vec<&str> = row.split(',').collect();
        assert_eq!(f[6], "PASSED", "{row}");
        for file in files_under(&root.join(f[0])) {
            assert!(fs::read_to_string(&file).unwrap().contains(f[5]), "{}", file.display());
        }
    }
}

#[test]
fn check_suites_rerun_persisted_trajectories() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "eq.toml", EQUILIBRIUM);
    assert_eq!(nck(&["run", "--config", cfg.to_str().unwrap(), "--out-dir", "out"], tmp.path()).status.code(), Some(0));
    let o = Command::new(env!("CARGO_BIN_EXE_nck-check"))
        .args(["out/trajectory.csv", "--suite", "conservation", "--out-dir", "chk"])
        .current_dir(tmp.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let names: Vec<String> = verdicts(&tmp.path().join("chk/bounds.json")).into_iter().map(|v| v.0).collect();
    assert_eq!(names, ["energy_conservation", "mass_of_H", "energy_of_H"]);

    let o = nck(&["check", "out/trajectory.csv", "--suite", "full", "--out-dir", "full"], tmp.path());
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(verdicts(&tmp.path().join("full/bounds.json")), verdicts(&tmp.path().join("out/bounds.json")));
}

#[test]
fn functionals_trivial_cases() {
    let tmp = tempfile::tempdir().unwrap();
    let m = write(tmp.path(), "m.json", r#"{"version":"nck-measure/1","atom0":0.0,"atoms":[[0.5,1.0],[2.0,0.25]]}"#);
    let o = nck(&["functionals", "--measure", m.to_str().unwrap(), "--phi", "x", "--phi", "one"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let docs: Vec<Value> = serde_json::from_slice(&o.stdout).unwrap();
    let f = |d: &Value, k: &str| d[k].as_f64().unwrap();
    for k in ["q3", "q3_tilde", "q3_quadratic", "q3_linear", "q3_linear_tilde"] {
        assert!(f(&docs[0], k).abs() < 1e-14, "x: {k}");
    }
    assert_eq!(f(&docs[0], "q3"), 0.0);
    let half = 0.5f64.sqrt() + 0.25 * 2f64.sqrt();
    assert!(f(&docs[1], "q3").abs() < 1e-14);
    // 𝓛(1)(x) = -x, so the tilde form is +M_{1/2}.
    assert!((f(&docs[1], "q3_tilde") - half).abs() < 1e-14);
    assert!((f(&docs[1], "half_moment") - half).abs() < 1e-14);
}

#[test]
fn malformed_measure_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    let m = write(tmp.path(), "m.json", r#"{"version":"nck-measure/1","atom0":-1.0}"#);
    let o = nck(&["functionals", "--measure", m.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    let m = write(tmp.path(), "m2.json", "{not json");
    assert_eq!(nck(&["functionals", "--measure", m.to_str().unwrap()], tmp.path()).status.code(), Some(1));
}

#[test]
fn constants_reproduce_the_critical_ratio() {
    let tmp = tempfile::tempdir().unwrap();
    let o = nck(&["constants", "--json"], tmp.path());
    assert_eq!(o.status.code(), Some(0));
    let t: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((t["limit_ratio"].as_f64().unwrap() - 4.48403).abs() < 1e-3);
    assert!(t["uniform"].as_array().unwrap().iter().all(|r| r["c"].as_f64().unwrap() > 0.0));
}

#[test]
fn hash_ignores_key_order_and_formatting() {
    let a: RunConfig = toml::from_str(EQUILIBRIUM).unwrap();
    let b: RunConfig =
        serde_json::from_str(r#"{"initial_data":{"beta":2.0,"kind":"bose_einstein"},"dtau":0.01,"tau_end":0.3,"n":8}"#)
            .unwrap();
    assert_eq!(config_hash(&a), config_hash(&b));
    let mut c = a.clone();
    c.tau_end = 0.31;
    assert_ne!(config_hash(&a), config_hash(&c));
}
