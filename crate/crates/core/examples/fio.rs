//! Concurrent random-overwrite writers, with and without FlashAlloc.
//!
//! `cargo run --release --example fio -- 32` uses the 32-writer scenario.

use fasim::metrics::{tail_throughput, tail_waf};
use fasim::{sim, Mode, RunOptions, ScenarioConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let text = match std::env::args().nth(1).as_deref() {
        Some("32") => include_str!("../scenarios/fio32.toml"),
        _ => include_str!("../scenarios/fio8.toml"),
    };
    let cfg = ScenarioConfig::from_toml(text)?;
    println!("{:<11} {:>9} {:>10} {:>10} {:>14}", "mode", "end WAF", "steady WAF", "copybacks", "pages/s (end)");
    for mode in [Mode::Vanilla, Mode::Flashalloc] {
        let out = sim::run(&cfg.clone().with_mode(mode), &RunOptions::default())?;
        println!(
            "{:<11} {:>9.3} {:>10.3} {:>10} {:>14.0}",
            mode.to_string(),
            out.end_waf(),
            tail_waf(&out.samples, 0.25).unwrap_or(0.0),
            out.report.counters.copyback_programs,
            tail_throughput(&out.samples, 0.25).unwrap_or(0.0)
        );
    }
    Ok(())
}
