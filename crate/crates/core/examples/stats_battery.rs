//! Paired t-tests of total error against unit scale, and the two-way ANOVA
//! of throughput, on a simulated cohort.

use teleoscale::experiment::summary_rows;
use teleoscale::metrics::MetricKind;
use teleoscale::stats::{anova_by_cell, battery, paired_against_reference, report_csv, Alternative};
use teleoscale::synth::{generate_cohort, CohortConfig};

fn main() {
    let cohort = generate_cohort(&CohortConfig::default()).expect("cohort");
    let rows = summary_rows(&cohort, 0.5).unwrap();

    println!("total error vs scale 1.0 (alternative: less)");
    for (cell, result) in paired_against_reference(&rows, MetricKind::TotalError, 1.0, Alternative::Less) {
        match result {
            Ok(t) => println!("  s = {:<4} d = {:<4}  t = {:+7.3}  p = {:.4}", cell.scale, cell.delay_s, t.t, t.p),
            Err(e) => println!("  s = {:<4} d = {:<4}  {e}", cell.scale, cell.delay_s),
        }
    }

    let table = anova_by_cell(&rows, MetricKind::Throughput).unwrap();
    println!("\nthroughput ANOVA");
    for (name, r) in table.rows() {
        println!("  {name:<12} SS = {:8.3}  df = {}  F = {:8.2}  p = {:.3e}", r.sum_sq, r.df, r.f, r.p);
    }
    println!("  residual     SS = {:8.3}  df = {}", table.residual_sum_sq, table.residual_df);

    let report = battery(&rows, &[MetricKind::TotalError], 1.0);
    println!("\n{} report rows; first lines:", report.len());
    for line in report_csv(&report).lines().take(4) {
        println!("  {line}");
    }
}
