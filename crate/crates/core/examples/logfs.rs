//! Multi-head log with segment cleaning, swept over the number of heads.

use fasim::config::WorkloadSpec;
use fasim::workloads::LogFsConfig;
use fasim::{sim, Mode, RunOptions, ScenarioConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    println!("{:>5} {:>12} {:>8}", "heads", "vanilla WAF", "FA WAF");
    for heads in [2, 4, 6] {
        let cfg = ScenarioConfig::new(WorkloadSpec::Logfs(LogFsConfig { active_heads: heads, ..LogFsConfig::default() }))
            .with_seed(1);
        let v = sim::run(&cfg.clone().with_mode(Mode::Vanilla), &RunOptions::default())?;
        let f = sim::run(&cfg.with_mode(Mode::Flashalloc), &RunOptions::default())?;
        println!("{heads:>5} {:>12.3} {:>8.3}", v.steady_waf(), f.steady_waf());
    }
    Ok(())
}
