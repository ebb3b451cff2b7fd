//! Simulated operators over the 6 × 4 scale/delay grid: drawn parameters and
//! the cohort-mean heatmaps of throughput and total error.

use teleoscale::experiment::summary_rows;
use teleoscale::metrics::{summarize, MetricKind};
use teleoscale::synth::{generate_cohort, CohortConfig};

fn main() {
    let config = CohortConfig::default();
    let cohort = generate_cohort(&config).expect("cohort");
    println!("id    reaction  gain   alpha  noise");
    for op in &cohort {
        let p = &op.params;
        println!(
            "{}  {:.3}     {:.2}   {:.2}   {:.3}",
            op.id, p.reaction_delay_s, p.gain, p.scale_compensation, p.noise
        );
    }
    println!("{} trials", cohort.iter().map(|o| o.trials.len()).sum::<usize>());

    let sets: Vec<_> = cohort.iter().flat_map(|op| op.metric_sets(0.5).unwrap()).collect();
    let table = summarize(sets.iter().map(|(c, m)| (c, m))).unwrap();
    for kind in [MetricKind::Throughput, MetricKind::TotalError] {
        println!("\n{kind} (rows: scale, columns: delay)");
        print!("{}", table.heatmap_csv(kind));
    }
    let rows = summary_rows(&cohort, 0.5).unwrap();
    println!("\n{} summary rows", rows.len());
}
