//! Double-write journal beside a random-write tablespace. Only the journal
//! ring is FlashAlloc-ed; the tablespace stays on the normal path.

use fasim::{sim, Mode, RunOptions, ScenarioConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ScenarioConfig::from_toml(include_str!("../scenarios/journal.toml"))?;
    for mode in [Mode::Vanilla, Mode::Flashalloc] {
        let out = sim::run(&cfg.clone().with_mode(mode), &RunOptions::default())?;
        let c = &out.report.counters;
        println!(
            "{mode:<10} steady WAF {:.3}  copybacks {:>6}  trims by erase {:>3}  trims by invalidation {:>6}",
            out.steady_waf(),
            c.copyback_programs,
            c.trim_block_erases,
            c.trim_page_invalidations
        );
    }
    Ok(())
}
