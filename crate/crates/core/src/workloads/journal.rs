//! Database double-write journal next to a random-write tablespace.
//!
//! Every batch of dirty pages is first appended to a small cyclic journal and
//! then written in place to random tablespace pages, so the journal carries
//! half of all writes. In FA mode the journal ring is one FlashAlloc object
//! that is trimmed and re-allocated whenever the append position wraps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::flashalloc::Chunk;
use crate::host::HostOp;

use super::{invalid, Program, Target, WorkloadError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JournalConfig {
    pub journal_pages: u64,
    pub batch_pages: u64,
    /// Tablespace size; defaults to 60% of the region.
    pub tablespace_pages: Option<u64>,
    /// Defaults to enough batches for three region volumes of writes.
    pub batches: Option<u64>,
}

impl Default for JournalConfig {
    fn default() -> Self {
        JournalConfig {
            journal_pages: 512,
            batch_pages: 64,
            tablespace_pages: None,
            batches: None,
        }
    }
}

const JOURNAL: usize = 0;
const TABLESPACE: usize = 1;

pub fn gen_journal(cfg: &JournalConfig, target: &Target, seed: u64) -> Result<Program, WorkloadError> {
    let ppb = target.pages_per_block;
    if cfg.journal_pages == 0 || !cfg.journal_pages.is_multiple_of(ppb) {
        return invalid("journal_pages must be a positive multiple of the block size");
    }
    if cfg.batch_pages == 0 {
        return invalid("batch_pages must be at least 1");
    }
    let room = target.region.pages.saturating_sub(cfg.journal_pages);
    let table_pages = cfg.tablespace_pages.unwrap_or(room * 3 / 5);
    if table_pages == 0 || table_pages > room {
        return invalid(format!("tablespace of {table_pages} pages does not fit next to the journal"));
    }
    let batches = cfg
        .batches
        .unwrap_or(3 * target.region.pages / (2 * cfg.batch_pages));

    let mut p = Program::with_streams(target, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ring = target.region.base;
    let table_base = ring + cfg.journal_pages;
    let fa = target.mode.is_fa();
    let mut pos = 0u64;
    let mut wrapped = false;

    for _ in 0..batches {
        let mut left = cfg.batch_pages;
        while left > 0 {
            if pos == 0 {
                if fa {
                    if wrapped {
                        p.push(JOURNAL, HostOp::Trim { lba: ring, len: cfg.journal_pages });
                    }
                    p.push(JOURNAL, HostOp::FlashAlloc { chunks: vec![Chunk::new(ring, cfg.journal_pages)] });
                }
                wrapped = true;
            }
            let len = left.min(cfg.journal_pages - pos);
            p.push(JOURNAL, HostOp::Write { lba: ring + pos, len });
            pos = (pos + len) % cfg.journal_pages;
            left -= len;
        }
        for _ in 0..cfg.batch_pages {
            let lba = table_base + rng.gen_range(0..table_pages);
            p.push(TABLESPACE, HostOp::Write { lba, len: 1 });
        }
        // pages reach the tablespace only after their journal copy is durable
        p.barrier();
    }
    Ok(p)
}
