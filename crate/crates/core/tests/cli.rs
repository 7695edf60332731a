use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn pdeinfo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pdeinfo"))
        .args(args)
        .env_remove("PDEINFO_SEED")
        .env_remove("PDEINFO_WORKERS")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const FISHER: &str = r#"
[model]
kind = "heat"
[noise]
family = "gaussian"
variance = 0.25
[task]
name = "fisher"
mc_samples = 2000
"#;

#[test]
fn fisher_report_for_sigma_half() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "fisher.toml", FISHER);
    let out = dir.path().join("out");
    let o = pdeinfo(&["run", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report: Value = serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["task"], "fisher");
    assert_eq!(report["pass"], true);
    assert_eq!(report["schema_version"], 1);
    assert!((report["results"]["fisher"][0][0].as_f64().unwrap() - 4.0).abs() < 4e-8);
    for c in report["checks"].as_array().unwrap() {
        assert!(c.get("value").is_some() && c.get("tolerance").is_some() && c.get("pass").is_some());
    }
    // the resolved config reruns as-is
    let resolved = out.join("config.resolved.json");
    let again = dir.path().join("again");
    let o = pdeinfo(&["run", resolved.to_str().unwrap(), "--out", again.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn malformed_config_exits_2_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", "[model]\nkind = \"heat\"\n[task]\nname = \"fisher\"\n");
    let out = dir.path().join("out");
    let o = pdeinfo(&["run", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&o.stderr).unwrap();
    assert!(err["message"].as_str().unwrap().contains("noise"));
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1, "only the config may remain");

    let unknown = write(dir.path(), "unknown.toml", &FISHER.replace("variance = 0.25", "variance = 0.25\nsd = 0.5"));
    assert_eq!(pdeinfo(&["validate", &unknown]).status.code(), Some(2));
    assert_eq!(pdeinfo(&["validate", "/nonexistent/config.toml"]).status.code(), Some(2));
}

#[test]
fn numerical_failure_exits_3_with_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "u.toml", &FISHER.replace("family = \"gaussian\"\nvariance = 0.25", "family = \"uniform\"\nlower = -1.0\nupper = 1.0"));
    let out = dir.path().join("out");
    let o = pdeinfo(&["run", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    let err: Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["error"], "numerical");
    assert!(!out.exists());
}

#[test]
fn failing_checks_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let toml = "[model]\nkind = \"heat\"\n[noise]\nfamily = \"gaussian\"\nvariance = 1.0\n[task]\nname = \"snorm\"\npsi = { kind = \"unit\", index = 1 }\nexpect = 70.0\n";
    let cfg = write(dir.path(), "s.toml", toml);
    let out = dir.path().join("out");
    let o = pdeinfo(&["run", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL  s-norm-sq"));
    let report: Value = serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["pass"], false);
    assert!(out.join("snorm_trace.csv").exists());
}

#[test]
fn json_config_and_env_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let json = r#"{"seed": 5, "model": {"kind": "heat"}, "noise": {"family": "laplace", "scale": 1.0},
                   "task": {"name": "fisher", "mc_samples": 1000}}"#;
    let cfg = write(dir.path(), "c.json", json);
    let o = Command::new(env!("CARGO_BIN_EXE_pdeinfo"))
        .args(["validate", &cfg])
        .env("PDEINFO_SEED", "99")
        .env("PDEINFO_WORKERS", "3")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    let resolved: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(resolved["seed"], 99);
    assert_eq!(resolved["workers"], 3);
    assert_eq!(resolved["numerics"]["kmax"], 4);
    let bad = Command::new(env!("CARGO_BIN_EXE_pdeinfo")).args(["validate", &cfg]).env("PDEINFO_SEED", "x").output().unwrap();
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn shipped_configs_run_and_pass() {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let dir = tempfile::tempdir().unwrap();
    let mut seen = 0;
    for entry in fs::read_dir(&configs).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_none_or(|e| e != "toml") {
            continue;
        }
        seen += 1;
        let out = dir.path().join(path.file_stem().unwrap());
        let o = pdeinfo(&["run", path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}: {}{}", path.display(), String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr));
    }
    assert!(seen >= 5);
}
