//! Records a FlashAlloc run as a text trace, then replays the same trace
//! with the allocations stripped to isolate their effect.

use fasim::trace::read_trace;
use fasim::{sim, Mode, RunOptions, ScenarioConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ScenarioConfig::from_toml(include_str!("../scenarios/journal.toml"))?.with_mode(Mode::Flashalloc);
    let mut buf = Vec::new();
    let recorded = sim::record(&cfg, &RunOptions::default(), &mut buf)?;
    let text = String::from_utf8(buf)?;
    println!("trace: {} lines, {} bytes; head:", text.lines().count(), text.len());
    for line in text.lines().take(7) {
        println!("  {line}");
    }

    let trace = read_trace(text.as_bytes())?;
    let same = sim::replay(&trace, None, &RunOptions::default())?;
    let stripped = sim::replay(&trace, Some(Mode::Vanilla), &RunOptions::default())?;
    println!("recorded  WAF {:.3}", recorded.steady_waf());
    println!("replayed  WAF {:.3} (csv identical: {})", same.steady_waf(), same.csv() == recorded.csv());
    println!("stripped  WAF {:.3}", stripped.steady_waf());
    match sim::check(&trace, None) {
        Ok(d) => println!("reference model agrees, digest {d}"),
        Err(d) => println!("reference model diverges at {}: {}", d.index, d.detail),
    }
    Ok(())
}
