//! Optimal scale against delay for one operator, by predictive mean and by a
//! pessimistic lower quantile.

use teleoscale::metrics::MetricKind;
use teleoscale::model::{ModelDocument, NigParams, PriorKind};
use teleoscale::optimizer::{curve_csv, delay_sweep, model_curve, Criterion, ScaleGrid};
use teleoscale::synth::{generate_cohort, CohortConfig};
use teleoscale::FeatureTransform;

fn main() {
    let cohort = generate_cohort(&CohortConfig {
        size: 1,
        seed: 3,
        ..CohortConfig::default()
    })
    .unwrap();
    let data = cohort[0]
        .dataset(MetricKind::WeightedPerformance, 0.5, FeatureTransform::default())
        .unwrap();
    let doc = ModelDocument::fit(&data, NigParams::noninformative(), PriorKind::Noninformative).unwrap();

    let delays = delay_sweep(0.75, 0.125);
    let mean = model_curve(&doc, &delays, &ScaleGrid::fine(), Criterion::Mean).unwrap();
    let cautious = model_curve(&doc, &delays, &ScaleGrid::fine(), Criterion::Quantile(0.1)).unwrap();
    println!("delay  best by mean  best by 10% quantile");
    for (m, c) in mean.iter().zip(&cautious) {
        println!("{:<5}  {:<12}  {}", m.delay_s, m.optimal_scale, c.optimal_scale);
    }
    print!("\n{}", curve_csv(&mean));
}
