//! Several tenants sharing one device.

use crate::host::TenantId;

use super::{Program, WorkloadError};

/// Merges per-tenant programs into one, renumbering streams so that every
/// tenant keeps its own streams and op order.
pub fn compose_tenants(programs: Vec<Program>) -> Result<Program, WorkloadError> {
    let mut merged = Program::default();
    let mut seen: Vec<TenantId> = Vec::new();
    for prog in programs {
        for t in &prog.tenants {
            if seen.contains(&t.tenant_id) {
                return Err(WorkloadError::ConfigInvalid(format!("tenant id {} used twice", t.tenant_id)));
            }
            if let Some(other) = merged.tenants.iter().find(|o| o.region.overlaps(&t.region)) {
                return Err(WorkloadError::RegionOverlap(other.tenant_id, t.tenant_id));
            }
            seen.push(t.tenant_id);
        }
        merged.tenants.extend(prog.tenants);
        for mut s in prog.streams {
            s.stream_id = merged.streams.len() as u32;
            merged.streams.push(s);
        }
    }
    Ok(merged)
}
