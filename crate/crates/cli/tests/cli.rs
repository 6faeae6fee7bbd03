use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn preset(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../presets")
        .join(format!("{name}.json"))
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crt-hte"))
        .args(args)
        .env_remove("CRT_HTE_THREADS")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(args: &[&str]) -> Value {
    serde_json::from_str(&ok(args)).unwrap()
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

/// Header row after the `# params_sha256=` line.
fn header(csv: &str) -> &str {
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("# params_sha256="));
    lines.next().unwrap()
}

const SMALL: &str =
    r#"{"sizes": [8, 8, 12, 12, 16, 16, 20, 20], "i1": 4, "theta": [0.5], "sigma_eps": 1.0}"#;

#[test]
fn golden_headers() {
    let p = preset("pattern_q1");
    let p = p.to_str().unwrap();
    assert_eq!(
        header(&ok(&["simulate", "--table", "1", "--replicates", "0"])),
        "table,q,theta,delta,rate,rho,m_bar,psi,cse,predicted_power,esd,se_bar,type1,power,replicates,failed,seed"
    );
    assert_eq!(
        header(&ok(&["casestudy", "recode"])),
        "study,variant,delta,power,required_m_bar,required_rounded"
    );
    assert_eq!(
        header(&ok(&["casestudy", "epic", "--variant", "theta-sweep"])),
        "theta,delta,power,required_m_bar"
    );
    assert_eq!(
        header(&ok(&["power", "--config", p, "--sweep", "0.1:0.5:0.1"])),
        "delta,power"
    );
}

#[test]
fn psi_methods() {
    let p = preset("pattern_q1");
    let v = json(&["psi", "--config", p.to_str().unwrap(), "--method", "series"]);
    assert!((v["psi"].as_f64().unwrap() - 4.380022).abs() < 1e-6);
    let v = json(&["psi", "--config", preset("equal").to_str().unwrap()]);
    assert_eq!(v["psi"].as_f64().unwrap(), 4.0);
    assert_eq!(v["method"], "exact");
    let v = json(&[
        "psi",
        "--config",
        preset("recode_extreme").to_str().unwrap(),
    ]);
    assert_eq!(v["method"], "series");
    assert!((v["psi"].as_f64().unwrap() - 9.6577).abs() < 1e-3);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(
        dir.path(),
        "bad.json",
        r#"{"sizes": [5, 5, 5, 5], "i1": 2, "theta": [0.5], "sigma_eps": 1.0}"#,
    );
    assert_eq!(
        run(&["power", "--config", &bad, "--delta", "0.3"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(run(&["power", "--delta", "0.3"]).status.code(), Some(2));
    let big = preset("recode_extreme");
    let out = run(&[
        "psi",
        "--config",
        big.to_str().unwrap(),
        "--method",
        "exact",
    ]);
    assert_eq!(out.status.code(), Some(3));
    let tiny = write_config(
        dir.path(),
        "tiny.json",
        r#"{"sizes": [2, 2, 2, 2], "i1": 2, "theta": [0.5], "sigma_eps": 1.0}"#,
    );
    let out = run(&[
        "simulate",
        "--custom",
        "--config",
        &tiny,
        "--delta",
        "0.3",
        "--rate",
        "0.75",
        "--rho",
        "0.1",
        "--replicates",
        "100",
    ]);
    assert_eq!(
        out.status.code(),
        Some(4),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn sizing_examples() {
    let p = preset("pattern_q1");
    let p = p.to_str().unwrap();
    let v = json(&[
        "samplesize",
        "--config",
        p,
        "--delta",
        "0.45",
        "--round",
        "4",
    ]);
    assert_eq!(v["m_bar"], 84);
    for (rate, delta, round, m, phi) in [
        ("0.2", "0.25", "10", 340, 0.7936),
        ("0.25", "0.35", "4", 188, 0.7980),
        ("0.3", "0.45", "10", 120, 0.7893),
    ] {
        let v = json(&[
            "dropout", "--config", p, "--rate", rate, "--delta", delta, "--round", round,
        ]);
        assert_eq!(v["m_bar"], m);
        assert!((v["predicted_power"].as_f64().unwrap() - phi).abs() < 5e-5);
    }
    let v = json(&[
        "power",
        "--config",
        preset("recode_equal").to_str().unwrap(),
        "--delta",
        "0.177",
    ]);
    assert!((v["power"].as_f64().unwrap() - 0.8).abs() < 2e-3);
}

#[test]
fn thresholds_and_alias() {
    let a = json(&["casestudy", "dropout", "--threshold"]);
    let b = json(&["casestudy", "epic", "--variant", "equal", "--threshold"]);
    assert_eq!(a["exact"], b["exact"]);
    assert_eq!(b["reported"].as_f64().unwrap(), 6.13);
    let n = json(&["casestudy", "epic", "--variant", "nodropout", "--threshold"]);
    assert_eq!(n["reported"].as_f64().unwrap(), 5.91);
    assert_eq!(
        run(&["casestudy", "recode", "--variant", "nodropout"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn simulation_is_deterministic_and_replayable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.json", SMALL);
    let out_a = dir.path().join("a.csv");
    let args = [
        "simulate",
        "--custom",
        "--config",
        &cfg,
        "--delta",
        "0.5",
        "--replicates",
        "120",
        "--seed",
        "9",
    ];
    let mut with_out = args.to_vec();
    with_out.extend(["--out", out_a.to_str().unwrap()]);
    ok(&with_out);
    let a = std::fs::read_to_string(&out_a).unwrap();
    assert_eq!(a, ok(&args));

    let single = Command::new(env!("CARGO_BIN_EXE_crt-hte"))
        .args(args)
        .env("CRT_HTE_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(a.as_bytes(), single.stdout);

    let manifest = dir.path().join("a.csv.manifest.json");
    let m: Value = serde_json::from_str(&std::fs::read_to_string(&manifest).unwrap()).unwrap();
    assert_eq!(
        a.lines().next().unwrap(),
        format!("# params_sha256={}", m["params_sha256"].as_str().unwrap())
    );
    std::fs::remove_file(&cfg).unwrap();
    assert_eq!(ok(&["replay", manifest.to_str().unwrap()]), a);
}

#[test]
fn icc_perturbation_leaves_empirical_sd() {
    let dir = tempfile::tempdir().unwrap();
    let esd = |rho: &str| {
        let body = SMALL.replace("}", &format!(r#", "rho": {rho}}}"#));
        let cfg = write_config(dir.path(), &format!("rho{rho}.json"), &body);
        let csv = ok(&[
            "simulate",
            "--custom",
            "--config",
            &cfg,
            "--delta",
            "0.5",
            "--replicates",
            "150",
            "--seed",
            "4",
        ]);
        let row: Vec<String> = csv
            .lines()
            .nth(2)
            .unwrap()
            .split(',')
            .map(String::from)
            .collect();
        (
            csv.lines().next().unwrap().to_string(),
            row[10].parse::<f64>().unwrap(),
            row[5].clone(),
        )
    };
    let (h1, e1, r1) = esd("0.2");
    let (h2, e2, r2) = esd("0.7");
    assert_eq!((r1.as_str(), r2.as_str()), ("0.2", "0.7"));
    assert_ne!(h1, h2);
    assert!(((e1 - e2) / e1).abs() < 1e-10, "{e1} vs {e2}");
}

#[test]
fn unknown_config_fields_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "x.json",
        r#"{"sizes": [4, 4, 4, 4], "i1": 2, "theta": [0.5], "sigma_eps": 1.0, "icc": 0.1}"#,
    );
    let out = run(&["psi", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("icc"));
}
