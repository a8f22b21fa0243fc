//! The whole command pipeline in-process: synthetic corpus, both models,
//! a journey forecast and held-out evaluation, written to a temp directory.
//!
//! cargo run --release --example pipeline_run

use trainrel::config::RunConfig;
use trainrel::pipeline::{Command, Run};

fn main() -> trainrel::Result<()> {
    let mut config = RunConfig::from_toml(
        r#"
        seed = 42
        [synth]
        days = 7
        [transfer]
        cross_validate = false
        "#,
    )?;
    config.out_dir = std::env::temp_dir().join("trainrel-pipeline");
    let run = Run::new(&config)?;
    println!("config hash {}", run.hash);
    for command in Command::ALL {
        let start = std::time::Instant::now();
        let files = run.execute(command)?;
        println!("{command:<16} {:>6.1}s", start.elapsed().as_secs_f64());
        for f in files {
            println!("    {}", f.display());
        }
    }
    let report = std::fs::read_to_string(run.config.out_dir.join(trainrel::pipeline::RELIABILITY_REPORT))
        .expect("report written");
    println!("\n{report}");
    Ok(())
}
