//! Monte Carlo reliability of a planned three-leg journey on a synthetic
//! timetable, with re-planning onto later trains after a missed transfer.
//!
//! cargo run --release --example journey_reliability

use chrono::NaiveDate;
use trainrel::data::RuleSet;
use trainrel::delay::{FeatureSet, MixtureCoefficients, MixturePosterior};
use trainrel::journey::{sample_many, ConstantTransfer, JourneySpec, NextTrainAlternatives, Timetable};
use trainrel::metrics::{reliability_report, summary_stats};
use trainrel::synth::{generate_events, SynthConfig};
use trainrel::transfers::{MAX_PTT, MIN_PTT};

fn main() -> trainrel::Result<()> {
    let world = SynthConfig::default();
    let events = generate_events(&world, 1)?;
    let rules = RuleSet::default();
    let timetable = Timetable::from_events(&events, &rules);
    let day: NaiveDate = world.start_date;

    // Greedy: from the first morning leg, keep taking the earliest onward
    // train that goes somewhere new.
    let mut legs = vec![timetable
        .legs()
        .filter(|l| l.departure.service_date() == day && l.departure.clock_hour() >= 8)
        .min_by_key(|l| (l.departure, l.train_id.clone(), l.alight.clone()))
        .expect("timetable has morning legs")
        .clone()];
    while legs.len() < 3 {
        let last = legs.last().unwrap();
        let visited: Vec<&str> = legs.iter().map(|l| l.board.as_str()).collect();
        let next = timetable
            .legs()
            .filter(|l| {
                let ptt = l.departure.minutes_since(&last.arrival);
                l.board == last.alight
                    && l.train_id != last.train_id
                    && !visited.contains(&l.alight.as_str())
                    && (MIN_PTT + 2.0..=MAX_PTT).contains(&ptt)
            })
            .min_by_key(|l| (l.departure, l.train_id.clone(), l.alight.clone()));
        match next {
            Some(l) => legs.push(l.clone()),
            None => break,
        }
    }
    let plan = JourneySpec::new(legs)?;
    println!("planned: {}", plan.signature());
    for leg in plan.legs() {
        println!(
            "  {:<8} {} {} -> {} {}",
            leg.train_id,
            leg.board,
            leg.departure.clock_string(),
            leg.alight,
            leg.arrival.clock_string()
        );
    }

    // Arrival delays from the reference intercept-only mixture.
    let delays = MixturePosterior::point_mass(
        MixtureCoefficients::intercept_only(0.28, 2.03, -0.45, 1.79, -1.64),
        6.0,
        FeatureSet::InterceptOnly,
    );
    let alternatives = NextTrainAlternatives { timetable };
    for p in [0.99, 0.9, 0.7] {
        let set = sample_many(&plan, &ConstantTransfer(p), &delays, &alternatives, 1000, 7);
        let report = reliability_report(&set);
        let done: Vec<f64> = set.samples.iter().filter_map(|s| s.delay).collect();
        let stats = summary_stats(&done)?;
        println!(
            "\nP(reach) = {p}: rating {:.3}, RBT {:?}, abandoned {:.1}%",
            report.reliability_rating,
            report.reliability_buffer_time.map(|v| (v * 10.0).round() / 10.0),
            100.0 * report.na_fraction
        );
        println!("  delay median {:.1}, mean {:.1}, max {:.1} min", stats.median, stats.mean, stats.max);
    }
    Ok(())
}
