//! Generate a synthetic stop-event corpus, run the ingestion filter and
//! enumerate the transfers it contains.
//!
//! cargo run --release --example synthetic_corpus

use trainrel::data::{filter_events, FilterConfig};
use trainrel::metrics::summary_stats;
use trainrel::synth::{generate_events, SynthConfig};
use trainrel::transfers::build_transfer_dataset;

fn main() -> trainrel::Result<()> {
    let world = SynthConfig::default();
    let events = generate_events(&world, 7)?;
    println!("{} stop events over 7 days", events.len());

    let filter = FilterConfig::default();
    let (kept, report) = filter_events(events, &filter);
    println!("kept {} of {}, dropped {:?}", report.kept, report.input, report.dropped);

    let delays: Vec<f64> = kept
        .iter()
        .filter_map(|e| e.arrival_delay().ok())
        .map(|d| d.minutes())
        .collect();
    let s = summary_stats(&delays)?;
    println!(
        "arrival delay: n {} mean {:.2} median {:.2} max {:.1} skewness {:.2} kurtosis {:.2}",
        s.n,
        s.mean,
        s.median,
        s.max,
        s.skewness.unwrap_or(f64::NAN),
        s.kurtosis.unwrap_or(f64::NAN)
    );

    let transfers = build_transfer_dataset(&kept, &filter.rules);
    let first = transfers.iter().filter(|t| t.features.prev_ptt_diff.is_none()).count();
    let missed = transfers.iter().filter(|t| t.reached() == Some(false)).count();
    println!(
        "{} transfers ({} first attempts, {} alternatives), {:.1}% missed",
        transfers.len(),
        first,
        transfers.len() - first,
        100.0 * missed as f64 / transfers.len() as f64
    );
    Ok(())
}
