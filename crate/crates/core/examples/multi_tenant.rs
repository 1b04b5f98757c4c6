//! An LSM store and a journaling database sharing one device; the per-tenant
//! throughput includes the garbage collection each tenant's writes trigger.

use fasim::{sim, Mode, RunOptions, ScenarioConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ScenarioConfig::from_toml(include_str!("../scenarios/multi_tenant.toml"))?;
    for mode in [Mode::Vanilla, Mode::Flashalloc] {
        let out = sim::run(&cfg.clone().with_mode(mode), &RunOptions::default())?;
        println!("{mode}: device steady WAF {:.3}", out.steady_waf());
        for t in &out.report.tenants {
            println!("  tenant {}  {:>6} pages  {:>8.0} pages/s", t.tenant_id, t.logical_pages, t.throughput_proxy);
        }
    }
    Ok(())
}
