//! Leveled LSM-tree table lifecycle.
//!
//! Only object timing is modelled: tables are block-multiple files that are
//! created by flushes and compactions, written once, and deleted (trimmed
//! whole) when a later compaction consumes them. Work proceeds in rounds; the
//! jobs of one round run concurrently on separate compaction streams and a
//! barrier closes the round.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::flashalloc::Chunk;
use crate::host::HostOp;
use crate::media::Lba;

use super::{invalid, Program, Target, WorkloadError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LsmConfig {
    pub compaction_streams: u32,
    pub sstable_pages: u64,
    pub levels: u32,
    pub level_fanout: u32,
    /// Next-level tables merged with each compaction victim.
    pub overlap_tables: u32,
    pub metadata_write_fraction: f64,
    pub metadata_pages: u64,
    /// Live table volume the last level is held to, as a share of the region.
    pub fill_target: f64,
    pub total_logical_writes: Option<u64>,
}

impl Default for LsmConfig {
    fn default() -> Self {
        LsmConfig {
            compaction_streams: 4,
            sstable_pages: 2048,
            levels: 3,
            level_fanout: 10,
            overlap_tables: 1,
            metadata_write_fraction: 0.05,
            metadata_pages: 512,
            fill_target: 0.72,
            total_logical_writes: None,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Table {
    slot: u64,
    level: u32,
}

struct Job {
    inputs: Vec<usize>,
    out_level: u32,
    outputs: usize,
}

struct Lsm<'a> {
    cfg: &'a LsmConfig,
    target: &'a Target,
    rng: ChaCha8Rng,
    tables: Vec<Table>,
    free_slots: Vec<u64>,
    table_base: Lba,
}

impl Lsm<'_> {
    fn slot_lba(&self, slot: u64) -> Lba {
        self.table_base + slot * self.cfg.sstable_pages
    }

    fn level_limit(&self, level: u32) -> usize {
        (self.cfg.level_fanout as usize).pow(level)
    }

    fn level_members(&self, level: u32, taken: &[usize]) -> Vec<usize> {
        (0..self.tables.len())
            .filter(|i| self.tables[*i].level == level && !taken.contains(i))
            .collect()
    }

    fn take_slot(&mut self) -> Result<u64, WorkloadError> {
        if self.free_slots.is_empty() {
            return invalid("region too small for the live tables; lower fill_target");
        }
        let i = self.rng.gen_range(0..self.free_slots.len());
        Ok(self.free_slots.swap_remove(i))
    }

    /// Plans this round's compactions, at most `streams` of them.
    fn plan(&mut self, streams: usize, target_tables: usize) -> Vec<Job> {
        let last = self.cfg.levels - 1;
        let mut jobs = Vec::new();
        let mut taken: Vec<usize> = Vec::new();
        for level in 0..last {
            loop {
                if jobs.len() == streams {
                    return jobs;
                }
                let members = self.level_members(level, &taken);
                if members.len() <= self.level_limit(level) {
                    break;
                }
                let victim = *members.choose(&mut self.rng).expect("level over limit is non-empty");
                let mut inputs = vec![victim];
                let mut next = self.level_members(level + 1, &taken);
                next.shuffle(&mut self.rng);
                inputs.extend(next.into_iter().take(self.cfg.overlap_tables as usize));
                taken.extend(&inputs);
                let mut outputs = inputs.len();
                if level + 1 == last {
                    // the last level absorbs updates: drop duplicate keys until the tree is back at target
                    let live = self.tables.len();
                    let excess = live.saturating_sub(target_tables);
                    outputs -= excess.min(inputs.len() - 1);
                }
                jobs.push(Job { inputs, out_level: level + 1, outputs });
            }
        }
        jobs
    }

    fn emit_table(&mut self, p: &mut Program, stream: usize, level: u32) -> Result<u64, WorkloadError> {
        let slot = self.take_slot()?;
        let lba = self.slot_lba(slot);
        let len = self.cfg.sstable_pages;
        if self.target.mode.is_fa() {
            p.push(stream, HostOp::FlashAlloc { chunks: vec![Chunk::new(lba, len)] });
        }
        p.push(stream, HostOp::Write { lba, len });
        self.tables.push(Table { slot, level });
        Ok(len)
    }
}

/// Flushes one L0 table per round and compacts any level holding more than
/// `fanout^level` tables; the metadata stream adds small random writes.
pub fn gen_lsm(cfg: &LsmConfig, target: &Target, seed: u64) -> Result<Program, WorkloadError> {
    let ppb = target.pages_per_block;
    if cfg.compaction_streams == 0 {
        return invalid("lsm needs at least one compaction stream");
    }
    if cfg.sstable_pages < ppb || !cfg.sstable_pages.is_multiple_of(ppb) {
        return invalid(format!("sstable_pages {} must be a positive multiple of {ppb}", cfg.sstable_pages));
    }
    if cfg.levels < 2 || cfg.level_fanout < 2 {
        return invalid("lsm needs at least 2 levels and fanout 2");
    }
    if !(0.0..1.0).contains(&cfg.metadata_write_fraction) {
        return invalid("metadata_write_fraction must be in [0, 1)");
    }
    if cfg.metadata_write_fraction > 0.0 && cfg.metadata_pages == 0 {
        return invalid("metadata traffic needs metadata_pages > 0");
    }
    if !(cfg.fill_target > 0.0 && cfg.fill_target < 1.0) {
        return invalid("fill_target must be in (0, 1)");
    }
    let meta_pages = if cfg.metadata_write_fraction > 0.0 { cfg.metadata_pages } else { 0 };
    let table_pages = target.region.pages.saturating_sub(meta_pages);
    let slots = table_pages / cfg.sstable_pages;
    let target_tables = ((cfg.fill_target * table_pages as f64) / cfg.sstable_pages as f64).floor() as usize;
    // one flush plus the outputs of the other streams' compactions
    let concurrent = 1 + (cfg.compaction_streams as usize - 1) * (1 + cfg.overlap_tables as usize);
    if target_tables < 2 || (target_tables + concurrent) as u64 > slots {
        return invalid(format!(
            "{slots} table slots cannot hold {target_tables} live tables plus {concurrent} in flight"
        ));
    }

    let streams = cfg.compaction_streams as usize;
    let meta_stream = streams;
    let mut p = Program::with_streams(target, cfg.compaction_streams + 1);
    let mut lsm = Lsm {
        cfg,
        target,
        rng: ChaCha8Rng::seed_from_u64(seed),
        tables: Vec::new(),
        free_slots: (0..slots).collect(),
        table_base: target.region.base + meta_pages,
    };
    let total = cfg.total_logical_writes.unwrap_or(3 * target.region.pages);
    let meta_ratio = cfg.metadata_write_fraction / (1.0 - cfg.metadata_write_fraction);
    let mut meta_owed = 0.0;
    let mut written = 0u64;
    let mut round = 0usize;

    while written < total {
        let jobs = lsm.plan(streams - 1, target_tables);
        let mut round_pages = 0;
        // the flush rotates over the streams; compactions take the others
        let flush_stream = round % streams;
        round_pages += lsm.emit_table(&mut p, flush_stream, 0)?;
        let mut consumed = Vec::new();
        for (k, job) in jobs.iter().enumerate() {
            let stream = (flush_stream + 1 + k) % streams;
            for _ in 0..job.outputs {
                round_pages += lsm.emit_table(&mut p, stream, job.out_level)?;
            }
            for &i in &job.inputs {
                let lba = lsm.slot_lba(lsm.tables[i].slot);
                p.push(stream, HostOp::Trim { lba, len: cfg.sstable_pages });
                consumed.push(i);
            }
        }
        meta_owed += round_pages as f64 * meta_ratio;
        while meta_owed >= 1.0 {
            let lba = target.region.base + lsm.rng.gen_range(0..meta_pages);
            p.push(meta_stream, HostOp::Write { lba, len: 1 });
            meta_owed -= 1.0;
            round_pages += 1;
        }
        consumed.sort_unstable();
        for i in consumed.into_iter().rev() {
            let t = lsm.tables.swap_remove(i);
            lsm.free_slots.push(t.slot);
        }
        lsm.free_slots.sort_unstable();
        p.barrier();
        written += round_pages;
        round += 1;
    }
    Ok(p)
}
