use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn kwc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kwc")).args(args).output().expect("binary runs")
}

fn config(dir: &TempDir, name: &str, body: &str) -> PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, body).unwrap();
    p
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn run_to(cfg: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    kwc(&args)
}

fn csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

#[test]
fn verify_on_default_config_passes() {
    let dir = TempDir::new().unwrap();
    let cfg = config(&dir, "v.json", r#"{"mode": "state", "cells": 16}"#);
    let out = dir.path().join("out");
    let o = kwc(&["verify", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (header, rows) = csv_rows(&out.join("verify_report.csv"));
    assert_eq!(header, ["check", "status", "margin", "tolerance"]);
    assert!(rows.len() >= 8);
    assert!(rows.iter().all(|r| r[1] == "pass"), "{rows:?}");
    assert!(!out.join("error.txt").exists());
}

#[test]
fn config_errors_exit_with_two() {
    let dir = TempDir::new().unwrap();
    let weights = config(
        &dir,
        "w.json",
        r#"{"mode": "state", "weights": {"K": -1, "K_Gamma": 1, "Lambda": 1, "L": 1, "L_Gamma": 1, "M": 1}}"#,
    );
    let o = run_to(&weights, &dir.path().join("w"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("K = -1") && stderr(&o).contains("nonnegative"), "{}", stderr(&o));

    let material = config(&dir, "m.json", r#"{"mode": "state", "material": {"name": "steel"}}"#);
    let o = run_to(&material, &dir.path().join("m"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("default, varying_alpha0"), "{}", stderr(&o));

    let broken = config(&dir, "b.json", "{\n  \"mode\": \"state\",\n  \"cells\": 8,\n}");
    let o = run_to(&broken, &dir.path().join("b"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 4"), "{}", stderr(&o));

    let o = run_to(&dir.path().join("missing.json"), &dir.path().join("x"), &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn solver_failure_leaves_diagnostic() {
    let dir = TempDir::new().unwrap();
    let cfg = config(&dir, "l.json", r#"{"mode": "linear", "cells": 8, "tau": 0.9}"#);
    let out = dir.path().join("out");
    let o = run_to(&cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(1));
    let msg = fs::read_to_string(out.join("error.txt")).unwrap();
    assert!(msg.contains("stability bound"), "{msg}");
}

#[test]
fn inverse_crime_history_is_monotone() {
    let dir = TempDir::new().unwrap();
    let cfg = config(
        &dir,
        "o.json",
        r#"{"mode": "optimize", "benchmark": "inverse-crime", "cells": 8, "tau": 0.5, "optimizer": {"max_iters": 25}}"#,
    );
    let out = dir.path().join("out");
    let o = run_to(&cfg, &out, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (header, rows) = csv_rows(&out.join("history.csv"));
    assert_eq!(header, ["iter", "eps", "cost", "grad_norm", "step", "optimality_residual"]);
    let cost: Vec<f64> = rows.iter().map(|r| r[2].parse().unwrap()).collect();
    assert!(cost.len() > 2);
    assert!(cost.windows(2).all(|w| w[1] <= w[0]), "{cost:?}");
    assert!(cost[cost.len() - 1] < cost[0]);
    for f in ["trajectory.csv", "boundary.csv", "energy.csv", "controls.csv", "controls_boundary.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn same_seed_gives_identical_csvs() {
    let dir = TempDir::new().unwrap();
    let cfg = config(&dir, "s.json", r#"{"mode": "verify", "cells": 8, "tau": 0.05, "eps": 0, "seed": 3}"#);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(run_to(&cfg, &a, &[]).status.success());
    assert!(run_to(&cfg, &b, &[]).status.success());
    assert_eq!(fs::read(a.join("verify_report.csv")).unwrap(), fs::read(b.join("verify_report.csv")).unwrap());

    let cfg = config(&dir, "t.json", r#"{"mode": "state", "cells": 8, "tau": 0.05, "eps": 0}"#);
    let (a, b) = (dir.path().join("c"), dir.path().join("d"));
    assert!(run_to(&cfg, &a, &[]).status.success());
    assert!(run_to(&cfg, &b, &[]).status.success());
    for f in ["trajectory.csv", "boundary.csv", "energy.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn overrides_and_resolved_config_round_trip() {
    let dir = TempDir::new().unwrap();
    let cfg = config(&dir, "s.json", r#"{"mode": "state"}"#);
    let out = dir.path().join("out");
    let o = run_to(&cfg, &out, &["--cells", "8", "--tau", "0.125", "--seed", "7"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let resolved = fs::read_to_string(out.join("resolved_config.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&resolved).unwrap();
    assert_eq!(v["cells"], 8);
    assert_eq!(v["tau"], 0.125);
    assert_eq!(v["seed"], 7);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"], v);
    assert!(manifest["timings"]["total"].as_f64().unwrap() >= 0.0);
    assert!(manifest["version"].is_string());

    let again = dir.path().join("again");
    let o = run_to(&out.join("resolved_config.json"), &again, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut second: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(again.join("resolved_config.json")).unwrap()).unwrap();
    second["out"] = v["out"].clone();
    assert_eq!(second, v);
    assert_eq!(fs::read(out.join("trajectory.csv")).unwrap(), fs::read(again.join("trajectory.csv")).unwrap());
}

#[test]
fn every_mode_writes_its_tables() {
    let dir = TempDir::new().unwrap();
    let cases: [(&str, &[(&str, &[&str])]); 4] = [
        (r#"{"mode": "state", "cells": 8, "tau": 0.05}"#, &[("trajectory.csv", &["t", "x", "eta", "theta"]), ("boundary.csv", &["t", "eta_Gamma_0", "eta_Gamma_1"]), ("energy.csv", &["t", "phi", "ghat", "work", "dissipation"])]),
        (r#"{"mode": "linear", "cells": 8}"#, &[("linear_trajectory.csv", &["t", "x", "p", "z"]), ("linear_boundary.csv", &["t", "p_Gamma_0", "p_Gamma_1"])]),
        (r#"{"mode": "adjoint", "cells": 8, "tau": 0.05}"#, &[("adjoint.csv", &["t", "x", "p", "z"]), ("gradient.csv", &["t", "x", "g_u", "g_v"]), ("gradient_boundary.csv", &["t", "g_u_Gamma_0", "g_u_Gamma_1"])]),
        (
            r#"{"mode": "continuation", "benchmark": "facet", "cells": 8, "optimizer": {"max_iters": 3}}"#,
            &[("certificate.csv", &["t", "x", "nu_circ", "xi_circ", "sgn_residual"]), ("history.csv", &["iter", "eps", "cost", "grad_norm", "step", "optimality_residual"])],
        ),
    ];
    for (k, (body, tables)) in cases.iter().enumerate() {
        let cfg = config(&dir, &format!("c{k}.json"), body);
        let out = dir.path().join(format!("o{k}"));
        let o = run_to(&cfg, &out, &[]);
        assert!(o.status.success(), "{body}: {}", stderr(&o));
        for (file, header) in tables.iter() {
            let (h, rows) = csv_rows(&out.join(file));
            assert_eq!(&h, header, "{file}");
            assert!(!rows.is_empty(), "{file}");
            // 17 significant digits
            assert!(rows[0][2].contains('e') && rows[0][2].split('e').next().unwrap().len() >= 18, "{:?}", rows[0]);
        }
    }
}
