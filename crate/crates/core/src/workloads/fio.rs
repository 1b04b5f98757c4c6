//! Random large-unit overwrites, one writer per private file.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::flashalloc::Chunk;
use crate::host::HostOp;

use super::{invalid, Program, Target, WorkloadError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FioConfig {
    pub writers: u32,
    /// Pages in each writer's file.
    pub region_pages: u64,
    /// Pages per overwrite, a multiple of the block size.
    pub overwrite_unit: u64,
    /// Total host writes; defaults to three passes over all files.
    pub total_logical_writes: Option<u64>,
}

impl Default for FioConfig {
    fn default() -> Self {
        FioConfig {
            writers: 8,
            region_pages: 12 * 512,
            overwrite_unit: 512,
            total_logical_writes: None,
        }
    }
}

impl FioConfig {
    pub fn total(&self) -> u64 {
        self.total_logical_writes
            .unwrap_or(3 * self.writers as u64 * self.region_pages)
    }
}

/// Each writer repeatedly picks a random aligned unit of its file and rewrites
/// it sequentially, preceded by a FlashAlloc of the unit in FA mode.
pub fn gen_fio(cfg: &FioConfig, target: &Target, seed: u64) -> Result<Program, WorkloadError> {
    let ppb = target.pages_per_block;
    if cfg.writers == 0 {
        return invalid("fio needs at least one writer");
    }
    if cfg.overwrite_unit == 0 || !cfg.overwrite_unit.is_multiple_of(ppb) {
        return invalid(format!("overwrite_unit {} is not a multiple of {ppb}", cfg.overwrite_unit));
    }
    if cfg.region_pages == 0 || !cfg.region_pages.is_multiple_of(cfg.overwrite_unit) {
        return invalid("overwrite_unit must divide region_pages");
    }
    if cfg.writers as u64 * cfg.region_pages > target.region.pages {
        return invalid(format!(
            "{} writers x {} pages exceed the {}-page region",
            cfg.writers, cfg.region_pages, target.region.pages
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = Program::with_streams(target, cfg.writers);
    let units = cfg.region_pages / cfg.overwrite_unit;
    let mut remaining = cfg.total();
    let mut w = 0usize;
    while remaining > 0 {
        let len = cfg.overwrite_unit.min(remaining);
        let unit = rng.gen_range(0..units);
        let lba = target.region.base + w as u64 * cfg.region_pages + unit * cfg.overwrite_unit;
        if target.mode.is_fa() && len == cfg.overwrite_unit {
            p.push(w, HostOp::FlashAlloc { chunks: vec![Chunk::new(lba, len)] });
        }
        p.push(w, HostOp::Write { lba, len });
        remaining -= len;
        w = (w + 1) % cfg.writers as usize;
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workloads::{Mode, Region};

    fn target(mode: Mode) -> Target {
        Target { region: Region::new(0, 58880), pages_per_block: 512, mode, tenant_id: 0 }
    }

    #[test]
    fn rejects_bad_units() {
        let cfg = FioConfig { overwrite_unit: 100, ..FioConfig::default() };
        assert!(gen_fio(&cfg, &target(Mode::Vanilla), 1).is_err());
        let cfg = FioConfig { region_pages: 700, ..FioConfig::default() };
        assert!(gen_fio(&cfg, &target(Mode::Vanilla), 1).is_err());
        let cfg = FioConfig { writers: 20, ..FioConfig::default() };
        assert!(gen_fio(&cfg, &target(Mode::Vanilla), 1).is_err());
    }

    #[test]
    fn fa_allocates_each_unit_before_writing_it() {
        let p = gen_fio(&FioConfig::default(), &target(Mode::Flashalloc), 3).unwrap();
        for s in &p.streams {
            for pair in s.ops.chunks(2) {
                match (&pair[0], &pair[1]) {
                    (HostOp::FlashAlloc { chunks }, HostOp::Write { lba, len }) => {
                        assert_eq!(chunks, &vec![Chunk::new(*lba, *len)]);
                        assert_eq!(lba % 512, 0);
                    }
                    other => panic!("unexpected op pair {other:?}"),
                }
            }
        }
        assert_eq!(p.write_pages(), 3 * 8 * 6144);
    }

    #[test]
    fn vanilla_has_no_flashalloc() {
        let p = gen_fio(&FioConfig::default(), &target(Mode::Vanilla), 3).unwrap();
        assert!(p.ops().all(|op| matches!(op, HostOp::Write { .. })));
    }

    #[test]
    fn writers_stay_in_their_files() {
        let p = gen_fio(&FioConfig::default(), &target(Mode::Vanilla), 9).unwrap();
        for (w, s) in p.streams.iter().enumerate() {
            for op in &s.ops {
                if let HostOp::Write { lba, len } = op {
                    assert_eq!(lba / 6144, w as u64);
                    assert_eq!((lba + len - 1) / 6144, w as u64);
                }
            }
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = FioConfig::default();
        let t = target(Mode::Flashalloc);
        assert_eq!(gen_fio(&cfg, &t, 5).unwrap().digest(), gen_fio(&cfg, &t, 5).unwrap().digest());
        assert_ne!(gen_fio(&cfg, &t, 5).unwrap().digest(), gen_fio(&cfg, &t, 6).unwrap().digest());
    }
}
