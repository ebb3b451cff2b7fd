//! Fits an empirical-Bayes prior on nine operators, applies it to the tenth,
//! and compares held-out error against the flat prior on small training sets.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use teleoscale::experiment::{compare_priors, datasets, leave_one_out_prior};
use teleoscale::metrics::MetricKind;
use teleoscale::model::PriorSearchOptions;
use teleoscale::synth::{generate_cohort, CohortConfig};
use teleoscale::FeatureTransform;

fn main() {
    let cohort = generate_cohort(&CohortConfig::default()).expect("cohort");
    let data = datasets(&cohort, MetricKind::WeightedPerformance, 0.5, FeatureTransform::default()).unwrap();
    let opts = PriorSearchOptions::default();

    let priors: Vec<_> = (0..data.len())
        .map(|i| leave_one_out_prior(&data, i, &opts).expect("prior search"))
        .collect();
    let p = &priors[0];
    println!(
        "prior for {}: log-likelihood {:.2} over {} evaluations, converged {}",
        data[0].operator, p.log_likelihood, p.evals, p.converged
    );
    println!("  mean {:.3?}", p.prior.mean.as_slice());
    println!("  a = {:.4}, b = {:.3}", p.prior.sum_sq, p.prior.dof);

    let priors: Vec<_> = priors.into_iter().map(|f| f.prior).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    println!("N   informed MSE  flat MSE");
    for n in [7, 8, 10, 14] {
        let c = compare_priors(&data, &priors, n, &mut rng).unwrap();
        println!("{n:<3} {:.5}       {:.5}", c.informed_mse, c.flat_mse);
    }
}
