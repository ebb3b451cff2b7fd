//! A reduced headless experiment written to a temporary directory.

use teleoscale::metrics::MetricKind;
use teleoscale::model::PriorSearchOptions;
use teleoscale::session::{run_headless_experiment, HeadlessConfig};
use teleoscale::synth::CohortConfig;

fn main() {
    let out = tempfile::tempdir().unwrap();
    let config = HeadlessConfig {
        cohort: CohortConfig {
            size: 4,
            ..CohortConfig::default()
        },
        model_metrics: vec![MetricKind::WeightedPerformance],
        prior_search: PriorSearchOptions {
            restarts: 2,
            ..PriorSearchOptions::default()
        },
        ..HeadlessConfig::default()
    };
    let report = run_headless_experiment(&config, out.path()).expect("headless run");
    println!("{} sessions, {} trials", report.records.len(), report.trial_count());
    for n in &report.notices {
        println!("notice: {n}");
    }
    let mut files: Vec<_> = walk(out.path()).into_iter().filter(|p| !p.contains("/logs/")).collect();
    files.sort();
    for f in files {
        println!("  {f}");
    }
    let curve = std::fs::read_to_string(out.path().join("curves/weighted_performance/op00.csv")).unwrap();
    println!("\nop00 curve:\n{}", curve.lines().take(6).collect::<Vec<_>>().join("\n"));
}

fn walk(root: &std::path::Path) -> Vec<String> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().display().to_string());
            }
        }
    }
    out
}
