//! Train the transfer-miss classifier on synthetic labelled transfers and
//! score it on a fresh sample.
//!
//! cargo run --release --example transfer_model

use trainrel::gbt::{train, transfer_monotone_spec, Dataset, TrainConfig};
use trainrel::metrics::{auroc, calibration_bins};
use trainrel::synth::{bayes_ceiling_auroc, generate_labeled_transfers, SynthConfig};

fn main() -> trainrel::Result<()> {
    let world = SynthConfig::default();
    let (train_records, _) = generate_labeled_transfers(&world, 20_000, 0)?;
    let (test_records, truth) = generate_labeled_transfers(&world, 20_000, 1)?;
    let (train_set, test_set) = (Dataset::from_transfers(&train_records)?, Dataset::from_transfers(&test_records)?);

    let config = TrainConfig {
        nrounds: 250,
        max_depth: 4,
        eta: 0.05,
        min_child_weight: 50.0,
        lambda: 50.0,
        ..TrainConfig::default()
    };
    let model = train(&train_set, &config, &transfer_monotone_spec())?;

    let labels: Vec<bool> = test_set.labels().collect();
    let scores = model.predict_dataset(&test_set);
    println!("miss rate      {:.3}", labels.iter().filter(|&&l| l).count() as f64 / labels.len() as f64);
    println!("AUROC          {:.4}", auroc(&scores, &labels)?);
    println!("Bayes ceiling  {:.4}", bayes_ceiling_auroc(&truth, &labels));

    println!("\ncalibration");
    for bin in calibration_bins(&scores, &labels, 10)?.bins.iter().filter(|b| !b.is_empty()) {
        println!(
            "  [{:.1}, {:.1})  n = {:>6}  predicted {:.3}  observed {:.3}",
            bin.lower,
            bin.upper,
            bin.count,
            bin.mean_predicted.unwrap_or(f64::NAN),
            bin.observed_frequency.unwrap_or(f64::NAN)
        );
    }

    println!("\ngain importance");
    let mut importance = model.feature_importance();
    importance.sort_by(|a, b| b.1.total_cmp(&a.1));
    for (name, gain) in importance {
        println!("  {name:<22} {gain:>10.1}");
    }

    // One test transfer with its planned time swept across the window.
    let mut x = test_set.row(0);
    print!("\nP(miss) by PTT:");
    for ptt in [3.0, 5.0, 10.0, 20.0, 40.0, 60.0] {
        x[0] = ptt;
        print!("  {ptt}: {:.3}", model.predict_miss_probability(&x)?);
    }
    println!();
    Ok(())
}
