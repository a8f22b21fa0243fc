//! Fit the two-component lognormal delay mixture by MCMC and compare it with
//! a single lognormal on held-out delays.
//!
//! cargo run --release --example delay_mixture

use trainrel::delay::{
    elpd, fit_mcmc, posterior_predictive_sample, qq_points, Components, DelayFeatures, DelayObservation, FeatureSet,
    McmcConfig,
};
use trainrel::rng::seeded;
use trainrel::synth::{sample_delays, DelayTruth, SynthConfig};

fn observations(world: &SynthConfig, n: usize, stream: u64) -> Vec<DelayObservation> {
    let features = DelayFeatures {
        total_runtime: 1.0,
        mid_day_afternoon_intercity: false,
        evening_night_intercity: false,
    };
    sample_delays(world, &vec![features; n], stream)
        .into_iter()
        .map(|delay| DelayObservation { delay, features })
        .collect()
}

fn main() -> trainrel::Result<()> {
    let world = SynthConfig {
        delay: DelayTruth::reference_intercepts(),
        ..SynthConfig::default()
    };
    let fit_data = observations(&world, 4000, 0);
    let holdout = observations(&world, 4000, 1);

    let two = fit_mcmc(
        &fit_data,
        &McmcConfig {
            feature_set: FeatureSet::InterceptOnly,
            ..McmcConfig::default()
        },
    )?;
    println!("two components (accepted: {})", two.accepted);
    for p in &two.diagnostics {
        println!(
            "  {:<24} mean {:>7.3}  95% [{:>7.3}, {:>7.3}]  R-hat {:.4}  ESS {:>6.0}",
            p.name, p.mean, p.q025, p.q975, p.rhat, p.ess
        );
    }

    let one = fit_mcmc(
        &fit_data,
        &McmcConfig {
            feature_set: FeatureSet::InterceptOnly,
            components: Components::One,
            ..McmcConfig::default()
        },
    )?;

    println!("\nheld-out ELPD: two {:.1}, one {:.1}", elpd(&two, &holdout), elpd(&one, &holdout));

    let observed: Vec<f64> = holdout.iter().map(|o| o.delay).collect();
    let mut rng = seeded(1);
    for (label, post) in [("two", &two), ("one", &one)] {
        let predicted = posterior_predictive_sample(post, &holdout[0].features, 20_000, &mut rng);
        let worst = qq_points(&observed, &predicted, 99)
            .into_iter()
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        println!("max QQ deviation ({label} component): {worst:.2} min");
    }
    Ok(())
}
