//! Fits one simulated operator's weighted-performance model from the
//! noninformative prior and queries its predictive distribution.

use teleoscale::metrics::MetricKind;
use teleoscale::model::{ModelDocument, NigParams, PriorKind};
use teleoscale::synth::{generate_cohort, CohortConfig};
use teleoscale::FeatureTransform;

fn main() {
    let cohort = generate_cohort(&CohortConfig {
        size: 1,
        ..CohortConfig::default()
    })
    .expect("cohort");
    let data = cohort[0]
        .dataset(MetricKind::WeightedPerformance, 0.5, FeatureTransform::default())
        .unwrap();
    let doc = ModelDocument::fit(&data, NigParams::noninformative(), PriorKind::Noninformative).expect("full-rank data");
    let post = &doc.posterior;
    println!("{} rows, posterior dof {}, E[σ²] = {:.5}", doc.rows, post.dof, post.noise_variance_mean());
    println!("coefficients {:.4?}", post.mean.as_slice());

    println!("scale  delay  mean     90% interval");
    for (s, d) in [(0.1, 0.0), (1.0, 0.0), (0.2, 0.75), (1.0, 0.75)] {
        let p = doc.predictive(s, d).unwrap();
        let (lo, hi) = p.interval(0.9);
        println!("{s:<5}  {d:<5}  {:+.4}  [{lo:+.4}, {hi:+.4}]", p.mean());
    }

    let json = doc.to_json();
    assert_eq!(ModelDocument::from_json(&json).unwrap(), doc);
    println!("model document: {} bytes of JSON", json.len());
}
