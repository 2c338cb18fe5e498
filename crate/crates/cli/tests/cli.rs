use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_qarima"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn csvs(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(dir)
        .map(|r| r.filter_map(|e| e.ok()?.file_name().into_string().ok()).filter(|n| n.ends_with(".csv")).collect())
        .unwrap_or_default();
    v.sort();
    v
}

#[test]
fn run_on_white_noise_writes_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("wn");
    let cfg = configs().join("white_noise.toml");
    let o = run(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--shots", "analytic"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("d* = 0"), "{stdout}");
    let files = csvs(&out);
    for f in ["d_order.csv", "qacf.csv", "qpacf.csv", "metrics.csv", "forecasts.csv", "arma_models.csv"] {
        assert!(files.iter().any(|n| n == f), "missing {f} in {files:?}");
    }
    assert!(out.join("manifest.json").exists());

    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    let arma = std::fs::read_to_string(out.join("arma_models.csv")).unwrap();
    // One metrics row per quantum model plus the classical comparator.
    assert_eq!(metrics.lines().count(), arma.lines().count() + 1, "{metrics}\n{arma}");
    assert!(metrics.starts_with("Model,N,MSE,MAPE"));

    let ev = tmp.path().join("ev");
    let o = run(&["evaluate", "--forecasts", out.join("forecasts.csv").to_str().unwrap(), "--out", ev.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_to_string(ev.join("metrics.csv")).unwrap(), metrics);

    let rep = tmp.path().join("rep");
    let o = run(&["report", "--manifest", out.join("manifest.json").to_str().unwrap(), "--out", rep.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in &files {
        assert_eq!(std::fs::read(rep.join(f)).ok(), std::fs::read(out.join(f)).ok(), "{f} differs after report");
    }
}

#[test]
fn missing_dataset_exits_3_without_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    std::fs::write(&cfg, "[data]\npath = \"nope.csv\"\ntrain = 10\n").unwrap();
    let out = tmp.path().join("o");
    let o = run(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(csvs(&out).is_empty());
}

#[test]
fn bad_config_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    std::fs::write(&cfg, "[data]\npath = \"x.csv\"\ntrain = 10\n[bogus]\nk = 1\n").unwrap();
    let o = run(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["diagnose", "--config", cfg.to_str().unwrap(), "--shots", "many"]);
    assert_eq!(o.status.code(), Some(2));
}
