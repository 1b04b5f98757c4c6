//! Leveled LSM tables on a shared device: running WAF over time and the
//! block-utilization histogram late in the run.

use fasim::{sim, Mode, RunOptions, ScenarioConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ScenarioConfig::from_toml(include_str!("../scenarios/lsm.toml"))?;
    for mode in [Mode::Vanilla, Mode::Flashalloc] {
        let out = sim::run(&cfg.clone().with_mode(mode), &RunOptions::default())?;
        println!("{mode}: end WAF {:.3}", out.end_waf());
        // WAF per twelfth of the run
        let step = (out.samples.len() / 12).max(1);
        let trend: Vec<String> = out
            .samples
            .chunks(step)
            .map(|w| {
                let (l, p) = w.iter().fold((0, 0), |(l, p), s| (l + s.logical_pages, p + s.physical_pages));
                format!("{:.2}", p as f64 / l as f64)
            })
            .collect();
        println!("  WAF trend    {}", trend.join(" "));
        if let Some(snap) = &out.report.snapshot {
            println!("  utilization  {:?}  mid mass {:.3}", snap.histogram, snap.mid_mass);
            println!("  regions      fa {} normal {} free {}", snap.regions.fa_blocks, snap.regions.normal_blocks, snap.regions.free_blocks);
        }
    }
    Ok(())
}
