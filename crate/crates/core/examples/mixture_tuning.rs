//! Choosing the mixture variance τ² from a prior guess of effect sizes, and
//! the sample-size arithmetic around it.
//!
//! ```text
//! cargo run --example mixture_tuning
//! ```

use alwaysvalid::mixopt::{
    asymptotic_power_constants, expected_runtime_leading, fixed_horizon_sample_size, optimal_mixture_general,
    optimal_tau_normal, EffectPrior, ExpFamilySpec, MixtureFamily, PriorSpec, TruncationSet,
};

pub fn run_example() -> anyhow::Result<Vec<(f64, f64)>> {
    let prior = PriorSpec::new(1.0)?;
    let mut table = Vec::new();
    println!("{:>8} {:>8} {:>12} {:>14}", "alpha", "n", "tau² closed", "tau² numeric");
    for alpha in [0.001, 0.01, 0.1] {
        let trunc = TruncationSet::new(alpha, 10_000)?;
        let closed = optimal_tau_normal(&prior, &trunc)?;
        let grid: Vec<f64> = (-16..=4).map(|k| 10f64.powf(k as f64 / 4.0)).collect();
        let numeric = optimal_mixture_general(
            &EffectPrior::normal(prior),
            &ExpFamilySpec::normal_unit_variance(),
            &MixtureFamily::normal_by_variance(),
            &trunc,
            &grid,
        )?;
        println!("{alpha:>8} {:>8} {closed:>12.5} {:>14.5}", 10_000, numeric.refined);
        table.push((alpha, closed));
    }

    let n = fixed_horizon_sample_size(0.1, 0.05, 0.2, 1.0)?;
    println!("fixed-horizon n for MDE 0.1, α 0.05, power 0.8: {n}");
    for alpha in [0.2, 0.1, 0.05] {
        let (cf, cs) = asymptotic_power_constants(alpha)?;
        println!("α={alpha}: C_f={cf:.4} C_S={cs:.4}");
    }
    println!("leading-order E[T] at θ=0.2, α=0.01: {:.1}", expected_runtime_leading(0.2, 0.01)?);
    Ok(table)
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example().map(|_| ())
}
