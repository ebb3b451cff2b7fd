//! End-to-end run of the command-line verbs on a small simulated cohort.

use std::path::Path;
use std::process::Command;

fn teleoscale(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_teleoscale")).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "teleoscale {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

const CONFIG: &str = r#"
[cohort]
size = 3
seed = 7
scales = [0.2, 0.5, 1.0]
delays = [0.0, 0.5]
trials_per_cell = 2
target_count = 5

[analysis]
fine_grid = false
model_metrics = ["WP", "TP"]
"#;

#[test]
fn run_fit_optimize_stats_export() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("run.toml");
    std::fs::write(&cfg, CONFIG).unwrap();
    let cfg = path(&cfg);

    let run = d.join("run");
    let msg = teleoscale(&["--config", cfg, "run", "--out", path(&run)]);
    assert!(msg.starts_with("3 operators, 36 trials"), "{msg}");
    assert!(run.join("summary.csv").exists());

    let fit = d.join("fit");
    teleoscale(&["--config", cfg, "fit", "--logs", path(&run.join("sessions")), "--out", path(&fit)]);
    let summary = std::fs::read_to_string(fit.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 36);
    // refitting the logs reproduces the headless summary
    assert_eq!(summary, std::fs::read_to_string(run.join("summary.csv")).unwrap());
    let models = fit.join("models").join("weighted_performance");
    let mut docs: Vec<_> = std::fs::read_dir(&models).unwrap().map(|e| e.unwrap().path()).collect();
    docs.sort();
    assert_eq!(docs.len(), 3);
    assert_eq!(
        std::fs::read(&docs[0]).unwrap(),
        std::fs::read(run.join("models/weighted_performance").join(docs[0].file_name().unwrap())).unwrap()
    );

    let curve = teleoscale(&["--config", cfg, "optimize", "--model", path(&docs[0]), "--max-delay", "0.5", "--delay-step", "0.25"]);
    let lines: Vec<&str> = curve.lines().collect();
    assert_eq!(lines.len(), 4, "{curve}");
    for l in &lines[1..] {
        let scale: f64 = l.split(',').nth(1).unwrap().parse().unwrap();
        assert!([0.1, 0.15, 0.2, 0.4, 0.7, 1.0].contains(&scale), "{l}");
    }

    let measured = teleoscale(&["optimize", "--summary", path(&fit.join("summary.csv")), "--metric", "total_error"]);
    assert_eq!(measured.lines().count(), 3, "{measured}");
    for l in measured.lines().skip(1) {
        let scale: f64 = l.split(',').nth(1).unwrap().parse().unwrap();
        assert!([0.2, 0.5, 1.0].contains(&scale), "{l}");
    }

    let report = teleoscale(&["stats", "--summary", path(&fit.join("summary.csv")), "--metric", "TP,WP"]);
    assert!(report.lines().count() > 2, "{report}");

    let export = d.join("export");
    teleoscale(&[
        "--config", cfg, "export", "--summary", path(&fit.join("summary.csv")),
        "--models", path(&fit.join("models")), "--out", path(&export),
    ]);
    assert!(export.join("heatmaps/throughput.csv").exists());
    assert!(export.join("curves/weighted_performance").join(docs[0].file_name().unwrap()).with_extension("csv").exists());
}

#[test]
fn bad_config_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[cohort]\nsise = 3\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_teleoscale"))
        .args(["--config", path(&cfg), "run"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}
