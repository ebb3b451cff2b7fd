//! Simulates one trial, writes it in the log format, reads it back and
//! computes its metrics.

use teleoscale::metrics::{overshoot_distance, MetricNormalization};
use teleoscale::synth::{run_trial, OperatorParams};
use teleoscale::trial_log::{self, LogHeader};
use teleoscale::{MetricSet, RawMetrics, TrialConfig};

fn main() {
    let config = TrialConfig::default().with_cell(0.4, 0.5);
    let log = run_trial(&OperatorParams::default(), &config).expect("trial runs");

    let text = trial_log::to_string(&LogHeader::new(config), &log);
    println!("log: {} lines; first two:", text.lines().count());
    for line in text.lines().take(2) {
        println!("  {line}");
    }
    let (_, parsed) = trial_log::from_str(&text).expect("log parses");
    assert_eq!(parsed, log);

    let raw = RawMetrics::from_log(&parsed).expect("complete trial");
    println!("throughput        {:.4} bits/s", raw.throughput);
    println!("target deviation  {:.4}", raw.target_deviation);
    println!("overshoot         {:.4}", overshoot_distance(&parsed));
    println!("total error       {:.4}", raw.total_error());

    for (name, norms) in [
        ("raw units", MetricNormalization::RAW),
        ("fixed ranges", MetricNormalization::fixed(6.0, 0.5)),
    ] {
        let m = MetricSet::new(raw, 0.5, &norms).unwrap();
        println!("WP (w = 0.5, {name}) {:.4}", m.weighted_performance);
    }
}
