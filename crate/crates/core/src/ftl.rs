//! Page-mapping FTL.
//!
//! Normal writes follow stream-writes-by-time: each page goes to the open
//! frontier block of the next channel in round-robin arrival order, so pages
//! of concurrently written objects end up side by side in the same blocks.
//! Writes whose lba falls in an active FlashAlloc instance bypass the
//! frontiers and are appended to the instance's dedicated blocks instead.
//!
//! Garbage collection is greedy (fewest valid pages, lowest id on ties) and
//! type-aware: GC for normal writes only merges normal blocks, and relocated
//! pages are always appended to the normal frontiers, never to FlashAlloc-ed
//! blocks.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flashalloc::{FaRegistry, InstanceId};
use crate::media::{
    BlockId, BlockKind, FlashMedia, Geometry, GeometryError, Lba, MediaError, PageState,
    PhysPageAddr, Token,
};
use crate::metrics::{CostModel, Counters};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FtlError {
    #[error("range {start}+{len} outside logical capacity {capacity}")]
    OutOfRange { start: Lba, len: u64, capacity: u64 },
    #[error("lba {0} is unmapped")]
    Unmapped(Lba),
    #[error("device wedged: free pool empty and no block has an invalid page")]
    DeviceWedged,
    #[error("no victim block with an invalid page")]
    NoVictim,
    #[error("cannot secure {requested} clean blocks")]
    InsufficientSpace { requested: u32 },
    #[error("chunk list overlaps active instance {0}")]
    OverlapWithActiveInstance(InstanceId),
    #[error("malformed chunk list: {0}")]
    MalformedChunks(String),
    #[error("unknown instance {0}")]
    UnknownInstance(InstanceId),
    #[error(transparent)]
    Media(#[from] MediaError),
}

impl FtlError {
    /// Variant name, used to compare error positions against the reference model.
    pub fn kind(&self) -> &'static str {
        match self {
            FtlError::OutOfRange { .. } => "OutOfRange",
            FtlError::Unmapped(_) => "Unmapped",
            FtlError::DeviceWedged => "DeviceWedged",
            FtlError::NoVictim => "NoVictim",
            FtlError::InsufficientSpace { .. } => "InsufficientSpace",
            FtlError::OverlapWithActiveInstance(_) => "OverlapWithActiveInstance",
            FtlError::MalformedChunks(_) => "MalformedChunks",
            FtlError::UnknownInstance(_) => "UnknownInstance",
            FtlError::Media(_) => "Media",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Striping {
    /// One frontier per channel, pages dealt round-robin in arrival order.
    #[default]
    PerChannel,
    /// A single frontier; ablation of the striping effect.
    SingleFrontier,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FtlConfig {
    /// GC runs before a host write would take a free block while the pool
    /// holds this many blocks or fewer.
    pub reserve_threshold: u32,
    #[serde(default)]
    pub striping: Striping,
    #[serde(default)]
    pub cost: CostModel,
}

impl FtlConfig {
    pub fn for_geometry(g: &Geometry) -> Self {
        FtlConfig {
            reserve_threshold: 2 + g.channels,
            striping: Striping::PerChannel,
            cost: CostModel::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MappingEntry {
    pub ppa: Option<PhysPageAddr>,
    /// Set while the lba is covered by an active FlashAlloc instance.
    pub fa_flag: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WriteReceipt {
    pub programs: u64,
    pub copybacks_triggered: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TrimReceipt {
    pub pages_invalidated: u64,
    pub blocks_erased: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VictimClass {
    /// Normal blocks only: GC on behalf of normal writes.
    Normal,
    /// Normal blocks and orphaned FlashAlloc-ed blocks: merges that secure
    /// clean blocks for a new instance.
    FlashAllocEligible,
}

#[derive(Debug, Clone)]
pub struct Ftl {
    media: FlashMedia,
    cfg: FtlConfig,
    pub(crate) map: Vec<MappingEntry>,
    free: BTreeSet<BlockId>,
    frontier: Vec<Option<BlockId>>,
    stripe_cursor: u64,
    fa_cursor: u64,
    pub(crate) registry: FaRegistry,
    counters: Counters,
}

impl Ftl {
    pub fn new(geometry: Geometry, cfg: FtlConfig) -> Result<Self, GeometryError> {
        geometry.validate()?;
        let frontiers = match cfg.striping {
            Striping::PerChannel => geometry.channels as usize,
            Striping::SingleFrontier => 1,
        };
        Ok(Ftl {
            media: FlashMedia::new(geometry),
            cfg,
            map: vec![MappingEntry::default(); geometry.logical_capacity_pages() as usize],
            free: (0..geometry.total_blocks).collect(),
            frontier: vec![None; frontiers],
            stripe_cursor: 0,
            fa_cursor: 0,
            registry: FaRegistry::default(),
            counters: Counters::default(),
        })
    }

    pub fn geometry(&self) -> &Geometry {
        self.media.geometry()
    }

    pub fn config(&self) -> &FtlConfig {
        &self.cfg
    }

    pub fn media(&self) -> &FlashMedia {
        &self.media
    }

    pub fn counters(&self) -> &Counters {
        &self.counters
    }

    pub fn logical_capacity(&self) -> u64 {
        self.map.len() as u64
    }

    pub fn mapping(&self, lba: Lba) -> MappingEntry {
        self.map[lba as usize]
    }

    pub fn free_blocks(&self) -> usize {
        self.free.len()
    }

    pub fn frontiers(&self) -> &[Option<BlockId>] {
        &self.frontier
    }

    fn check_range(&self, start: Lba, len: u64) -> Result<(), FtlError> {
        let capacity = self.logical_capacity();
        if start.checked_add(len).is_none_or(|end| end > capacity) {
            return Err(FtlError::OutOfRange { start, len, capacity });
        }
        Ok(())
    }

    pub fn host_write(
        &mut self,
        lba_start: Lba,
        length: u64,
        content_base: Token,
    ) -> Result<WriteReceipt, FtlError> {
        self.check_range(lba_start, length)?;
        let copybacks_before = self.counters.copyback_programs;
        for i in 0..length {
            let lba = lba_start + i;
            let token = content_base + i;
            match self.registry.probe(lba) {
                Some(id) => {
                    self.fa_append(id, lba, token)?;
                }
                None => self.normal_write(lba, token)?,
            }
        }
        Ok(WriteReceipt {
            programs: length,
            copybacks_triggered: self.counters.copyback_programs - copybacks_before,
        })
    }

    pub fn host_read(&mut self, lba: Lba) -> Result<Token, FtlError> {
        self.check_range(lba, 1)?;
        let ppa = self.map[lba as usize].ppa.ok_or(FtlError::Unmapped(lba))?;
        self.counters.sim_time_us += self.cfg.cost.read_us;
        Ok(self.media.block(ppa.block)?.content(ppa.offset))
    }

    /// Invalidates and unmaps every mapped page in the range. A FlashAlloc-ed
    /// block left with no valid page by the trim is erased on the spot.
    pub fn host_trim(&mut self, lba_start: Lba, length: u64) -> Result<TrimReceipt, FtlError> {
        self.check_range(lba_start, length)?;
        let mut receipt = TrimReceipt::default();
        for lba in lba_start..lba_start + length {
            let entry = &mut self.map[lba as usize];
            let Some(ppa) = entry.ppa.take() else {
                continue;
            };
            self.media.invalidate_page(ppa)?;
            receipt.pages_invalidated += 1;
            self.counters.trim_page_invalidations += 1;
            if self.reclaim_if_empty_orphan(ppa.block)? {
                receipt.blocks_erased += 1;
                self.counters.trim_block_erases += 1;
            }
            // the flag follows instance coverage, which a trim does not end
            self.map[lba as usize].fa_flag = self.registry.probe(lba).is_some();
        }
        Ok(receipt)
    }

    fn normal_write(&mut self, lba: Lba, token: Token) -> Result<(), FtlError> {
        self.invalidate_lba(lba)?;
        let slot = self.next_frontier_slot();
        let block = self.frontier_for_host(slot)?;
        self.program_host(block, lba, token)?;
        self.retire_full_frontier(slot);
        Ok(())
    }

    /// Programs a host page and updates the mapping and counters.
    pub(crate) fn program_host(
        &mut self,
        block: BlockId,
        lba: Lba,
        token: Token,
    ) -> Result<PhysPageAddr, FtlError> {
        let ppa = self.media.program_page(block, lba, token)?;
        self.map[lba as usize].ppa = Some(ppa);
        self.counters.logical_pages_written += 1;
        self.counters.physical_programs += 1;
        self.counters.sim_time_us += self.cfg.cost.program_us;
        Ok(ppa)
    }

    /// Drops the current copy of `lba`, if any, and reclaims its block when that
    /// leaves an orphaned FlashAlloc-ed block empty.
    pub(crate) fn invalidate_lba(&mut self, lba: Lba) -> Result<(), FtlError> {
        if let Some(old) = self.map[lba as usize].ppa.take() {
            self.media.invalidate_page(old)?;
            self.reclaim_if_empty_orphan(old.block)?;
        }
        Ok(())
    }

    fn is_orphan(&self, block: BlockId) -> bool {
        let b = &self.media.blocks()[block as usize];
        b.kind() == BlockKind::Fa && b.fa_owner().is_none_or(|id| !self.registry.is_active(id))
    }

    /// Returns a FlashAlloc-ed block whose instance is gone and whose pages are
    /// all invalid to the free pool. Reports whether an erase happened.
    pub(crate) fn reclaim_if_empty_orphan(&mut self, block: BlockId) -> Result<bool, FtlError> {
        if !self.is_orphan(block) || self.media.blocks()[block as usize].valid_count() > 0 {
            return Ok(false);
        }
        let erased = if self.media.blocks()[block as usize].write_ptr() == 0 {
            self.media.release(block)?;
            false
        } else {
            self.erase(block)?;
            true
        };
        self.free.insert(block);
        Ok(erased)
    }

    fn erase(&mut self, block: BlockId) -> Result<(), FtlError> {
        self.media.erase_block(block)?;
        self.counters.erases += 1;
        self.counters.sim_time_us += self.cfg.cost.erase_us;
        Ok(())
    }

    fn next_frontier_slot(&mut self) -> usize {
        let slot = (self.stripe_cursor % self.frontier.len() as u64) as usize;
        self.stripe_cursor += 1;
        slot
    }

    fn slot_channel(&self, slot: usize) -> u32 {
        slot as u32
    }

    fn retire_full_frontier(&mut self, slot: usize) {
        if let Some(b) = self.frontier[slot] {
            if self.media.blocks()[b as usize].is_full() {
                self.frontier[slot] = None;
            }
        }
    }

    /// Lowest free block on `channel`, else the lowest free block overall.
    fn pick_free(&self, channel: u32, exclude: &[BlockId]) -> Option<BlockId> {
        let g = self.geometry();
        let usable = |b: &&BlockId| !exclude.contains(b);
        self.free
            .iter()
            .filter(usable)
            .find(|b| g.channel_of(**b) == channel)
            .or_else(|| self.free.iter().find(usable))
            .copied()
    }

    pub(crate) fn claim_free(
        &mut self,
        block: BlockId,
        kind: BlockKind,
        owner: Option<InstanceId>,
    ) -> Result<(), FtlError> {
        let removed = self.free.remove(&block);
        debug_assert!(removed, "block {block} not in free pool");
        self.media.claim(block, kind, owner)?;
        Ok(())
    }

    fn open_frontier(&mut self, slot: usize) -> Result<BlockId, FtlError> {
        let b = self
            .pick_free(self.slot_channel(slot), &[])
            .ok_or(FtlError::DeviceWedged)?;
        self.claim_free(b, BlockKind::Normal, None)?;
        self.frontier[slot] = Some(b);
        Ok(b)
    }

    /// Frontier block for a host page. Host writes never take the last
    /// `reserve_threshold` free blocks: when the slot needs a new block and the
    /// pool is at or below the reserve, GC merges victims until the pool is
    /// above it again. Only relocations may dip into the reserve.
    fn frontier_for_host(&mut self, slot: usize) -> Result<BlockId, FtlError> {
        if let Some(b) = self.frontier[slot] {
            return Ok(b);
        }
        while self.free.len() <= self.cfg.reserve_threshold as usize {
            let victim = self
                .select_victim(VictimClass::Normal)
                .or_else(|_| self.select_victim(VictimClass::FlashAllocEligible));
            match victim {
                Ok(v) => {
                    self.merge_victim(v)?;
                }
                Err(_) => break,
            }
        }
        match self.frontier[slot] {
            // a relocation may have opened this slot's block meanwhile
            Some(b) => Ok(b),
            None => self.open_frontier(slot),
        }
    }

    /// Frontier block for a relocated page; never triggers GC itself.
    fn frontier_for_relocation(&mut self, slot: usize) -> Result<BlockId, FtlError> {
        match self.frontier[slot] {
            Some(b) => Ok(b),
            None => self.open_frontier(slot),
        }
    }

    fn is_frontier(&self, block: BlockId) -> bool {
        self.frontier.contains(&Some(block))
    }

    fn eligible(&self, block: BlockId, class: VictimClass) -> bool {
        let b = &self.media.blocks()[block as usize];
        if b.invalid_count() == 0 || self.is_frontier(block) {
            return false;
        }
        match (class, b.kind()) {
            (_, BlockKind::Free) => false,
            (_, BlockKind::Normal) => true,
            (VictimClass::Normal, BlockKind::Fa) => false,
            (VictimClass::FlashAllocEligible, BlockKind::Fa) => self.is_orphan(block),
        }
    }

    /// Greedy victim: fewest valid pages among eligible blocks with at least
    /// one invalid page, ties to the lowest block id.
    pub fn select_victim(&self, class: VictimClass) -> Result<BlockId, FtlError> {
        self.media
            .blocks()
            .iter()
            .filter(|b| self.eligible(b.id(), class))
            .min_by_key(|b| (b.valid_count(), b.id()))
            .map(|b| b.id())
            .ok_or(FtlError::NoVictim)
    }

    /// Relocates the victim's valid pages to the normal frontiers, erases it and
    /// returns it to the pool. Returns the number of copybacks.
    fn merge_victim(&mut self, victim: BlockId) -> Result<u64, FtlError> {
        let pages: Vec<(u32, Lba)> = self.media.blocks()[victim as usize].valid_pages().collect();
        for &(offset, lba) in &pages {
            let token = self.media.blocks()[victim as usize].content(offset);
            let slot = self.next_frontier_slot();
            let dest = self.frontier_for_relocation(slot)?;
            let ppa = self.media.program_page(dest, lba, token)?;
            self.media.invalidate_page(PhysPageAddr { block: victim, offset })?;
            self.map[lba as usize].ppa = Some(ppa);
            self.counters.copyback_programs += 1;
            self.counters.physical_programs += 1;
            self.counters.sim_time_us += self.cfg.cost.read_us + self.cfg.cost.program_us;
            self.retire_full_frontier(slot);
        }
        self.erase(victim)?;
        self.free.insert(victim);
        Ok(pages.len() as u64)
    }

    /// GC on behalf of a normal write: returns a usable normal frontier block,
    /// reclaiming a victim first if the pool is at the reserve.
    pub fn gc_for_normal_write(&mut self) -> Result<BlockId, FtlError> {
        let slot = self.next_frontier_slot();
        self.frontier_for_host(slot)
    }

    /// Merges victims until `n` fully clean blocks can be handed out while
    /// keeping the reserve, then returns the blocks (still in the free pool),
    /// dealt round-robin over channels.
    pub fn secure_clean_blocks(&mut self, n: u32) -> Result<Vec<BlockId>, FtlError> {
        let target = n as usize + self.cfg.reserve_threshold as usize;
        while self.free.len() < target {
            let victim = self
                .select_victim(VictimClass::FlashAllocEligible)
                .map_err(|_| FtlError::InsufficientSpace { requested: n })?;
            self.merge_victim(victim)?;
        }
        let mut picked = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let channel = (self.fa_cursor % self.geometry().channels as u64) as u32;
            self.fa_cursor += 1;
            let b = self
                .pick_free(channel, &picked)
                .expect("pool holds at least n blocks");
            picked.push(b);
        }
        Ok(picked)
    }

    /// Full consistency audit; returns the first violated invariant.
    pub fn audit(&self) -> Result<(), String> {
        self.media.audit()?;
        let c = &self.counters;
        if c.physical_programs != c.logical_pages_written + c.copyback_programs {
            return Err(format!("conservation broken: {c:?}"));
        }
        if c.physical_programs != self.media.physical_programs() {
            return Err("counter drift between FTL and media".into());
        }
        // the scan answer for every lba, built once by walking all instances
        let mut scan: Vec<Option<InstanceId>> = vec![None; self.map.len()];
        for inst in self.registry.active() {
            for lba in inst.chunks.iter().flat_map(|c| c.lbas()) {
                if let Some(other) = scan[lba as usize].replace(inst.id) {
                    return Err(format!("lba {lba} covered by {other} and {}", inst.id));
                }
            }
        }
        let mut mapped = 0u64;
        for (lba, e) in self.map.iter().enumerate() {
            let lba = lba as Lba;
            if let Some(ppa) = e.ppa {
                mapped += 1;
                let b = &self.media.blocks()[ppa.block as usize];
                if b.page_state(ppa.offset) != PageState::Valid {
                    return Err(format!("lba {lba} maps to non-valid page {ppa}"));
                }
                if b.resident_lba(ppa.offset) != Some(lba) {
                    return Err(format!("page {ppa} resident lba differs from {lba}"));
                }
            }
            let probe = self.registry.probe(lba);
            if probe != scan[lba as usize] {
                return Err(format!("probe/scan mismatch at lba {lba}"));
            }
            if e.fa_flag != probe.is_some() {
                return Err(format!("fa_flag at lba {lba} disagrees with probe"));
            }
        }
        let valid: u64 = self.media.blocks().iter().map(|b| b.valid_count() as u64).sum();
        if valid != mapped {
            return Err(format!("{valid} valid pages but {mapped} mapped lbas"));
        }
        for b in self.media.blocks() {
            let in_pool = self.free.contains(&b.id());
            if in_pool != (b.kind() == BlockKind::Free) {
                return Err(format!("block {} pool membership/kind mismatch", b.id()));
            }
        }
        for b in self.frontier.iter().flatten() {
            let blk = &self.media.blocks()[*b as usize];
            if blk.kind() != BlockKind::Normal || blk.is_full() {
                return Err(format!("frontier {b} is not an open normal block"));
            }
        }
        for inst in self.registry.active() {
            for &b in &inst.dedicated_blocks {
                let blk = &self.media.blocks()[b as usize];
                if blk.kind() != BlockKind::Fa || blk.fa_owner() != Some(inst.id) {
                    return Err(format!("{} block {b} lost its owner tag", inst.id));
                }
                for (_, lba) in blk.valid_pages() {
                    if !inst.contains(lba) {
                        return Err(format!("{} block {b} holds foreign lba {lba}", inst.id));
                    }
                }
            }
            if inst.clean_start {
                for lba in inst.chunks.iter().flat_map(|c| c.lbas()) {
                    if let Some(ppa) = self.map[lba as usize].ppa {
                        if !inst.dedicated_blocks.contains(&ppa.block) {
                            return Err(format!("{} lba {lba} valid outside its blocks", inst.id));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flashalloc::Chunk;

    fn geometry(total_blocks: u32, ppb: u32, channels: u32, op: f64) -> Geometry {
        Geometry {
            total_blocks,
            pages_per_block: ppb,
            page_size: 4096,
            channels,
            op_fraction: op,
        }
    }

    fn ftl_with(g: Geometry, reserve: u32) -> Ftl {
        let mut cfg = FtlConfig::for_geometry(&g);
        cfg.reserve_threshold = reserve;
        Ftl::new(g, cfg).unwrap()
    }

    #[test]
    fn single_write_on_empty_device() {
        let mut f = ftl_with(geometry(16, 512, 8, 0.25), 10);
        let r = f.host_write(0, 1, 7).unwrap();
        assert_eq!(r, WriteReceipt { programs: 1, copybacks_triggered: 0 });
        assert_eq!(f.counters().waf(), Some(1.0));
        f.audit().unwrap();
    }

    #[test]
    fn overwrite_invalidates_previous_copy() {
        let mut f = ftl_with(geometry(16, 512, 8, 0.25), 10);
        f.host_write(3, 1, 1).unwrap();
        f.host_write(3, 1, 2).unwrap();
        assert_eq!(f.counters().physical_programs, 2);
        let valid: u32 = f.media().blocks().iter().map(|b| b.valid_count()).sum();
        assert_eq!(valid, 1);
        assert_eq!(f.host_read(3).unwrap(), 2);
    }

    #[test]
    fn read_paths() {
        let mut f = ftl_with(geometry(16, 512, 8, 0.25), 10);
        assert_eq!(f.host_read(5), Err(FtlError::Unmapped(5)));
        f.host_write(5, 1, 11).unwrap();
        assert_eq!(f.host_read(5).unwrap(), 11);
        f.host_trim(5, 1).unwrap();
        assert_eq!(f.host_read(5), Err(FtlError::Unmapped(5)));
        let cap = f.logical_capacity();
        assert!(matches!(f.host_read(cap), Err(FtlError::OutOfRange { .. })));
        assert!(matches!(f.host_write(cap - 1, 2, 0), Err(FtlError::OutOfRange { .. })));
    }

    #[test]
    fn interleaved_writers_share_frontier_blocks() {
        let mut f = ftl_with(geometry(16, 512, 2, 0.25), 4);
        // two 8-page writers, split into 2-page chunks and alternated A,B,A,B
        let (a, b) = (0u64, 1000u64);
        for step in 0..4u64 {
            f.host_write(a + 2 * step, 2, 0).unwrap();
            f.host_write(b + 2 * step, 2, 0).unwrap();
        }
        let mixed = f.media().blocks().iter().filter(|blk| {
            let lbas: Vec<Lba> = blk.valid_pages().map(|(_, l)| l).collect();
            lbas.iter().any(|l| *l < 8) && lbas.iter().any(|l| *l >= 1000)
        });
        assert!(mixed.count() > 0, "both writers should be resident in one block");
        f.audit().unwrap();
    }

    #[test]
    fn trim_receipts() {
        let mut f = ftl_with(geometry(16, 512, 8, 0.25), 10);
        f.host_write(0, 4, 0).unwrap();
        assert_eq!(
            f.host_trim(2, 1).unwrap(),
            TrimReceipt { pages_invalidated: 1, blocks_erased: 0 }
        );
        assert_eq!(f.host_trim(100, 50).unwrap(), TrimReceipt::default());
    }

    #[test]
    fn trim_is_idempotent() {
        let mut f = ftl_with(geometry(16, 16, 2, 0.25), 4);
        f.flash_alloc(&[Chunk::new(0, 16)]).unwrap();
        f.host_write(0, 16, 0).unwrap();
        f.host_write(40, 20, 100).unwrap();
        let mut once = f.clone();
        once.host_trim(0, 50).unwrap();
        let mut twice = once.clone();
        assert_eq!(twice.host_trim(0, 50).unwrap(), TrimReceipt::default());
        assert_eq!(crate::refcheck::digest_ftl(&once), crate::refcheck::digest_ftl(&twice));
    }

    /// Places a full normal block with the given valid count by writing and trimming.
    fn build_blocks(f: &mut Ftl, valid: &[u32]) -> Vec<BlockId> {
        let ppb = f.geometry().pages_per_block as u64;
        let mut next_lba = 0;
        let mut blocks = vec![];
        for &v in valid {
            f.host_write(next_lba, ppb, next_lba).unwrap();
            let blk = f.mapping(next_lba).ppa.unwrap().block;
            f.host_trim(next_lba + v as u64, ppb - v as u64).unwrap();
            blocks.push(blk);
            next_lba += ppb;
        }
        blocks
    }

    #[test]
    fn greedy_victim_and_tie_break() {
        let g = Geometry { channels: 1, ..geometry(8, 8, 1, 0.0) };
        let mut f = ftl_with(g, 0);
        let blocks = build_blocks(&mut f, &[5, 0, 3]);
        assert_eq!(f.select_victim(VictimClass::Normal).unwrap(), blocks[1]);

        let mut f = ftl_with(g, 0);
        let blocks = build_blocks(&mut f, &[2, 2]);
        assert_eq!(f.select_victim(VictimClass::Normal).unwrap(), blocks[0].min(blocks[1]));
    }

    #[test]
    fn normal_gc_never_picks_fa_blocks() {
        let g = geometry(8, 8, 1, 0.0);
        let mut f = ftl_with(g, 0);
        f.flash_alloc(&[Chunk::new(0, 8)]).unwrap();
        f.host_write(0, 8, 0).unwrap();
        f.host_trim(0, 3).unwrap();
        assert_eq!(f.select_victim(VictimClass::Normal), Err(FtlError::NoVictim));
        assert!(f.select_victim(VictimClass::FlashAllocEligible).is_ok());
    }

    #[test]
    fn gc_victim_with_valid_pages_costs_exactly_that_many_copybacks() {
        // 4 blocks of 8 pages, one channel, reserve 1
        let g = geometry(4, 8, 1, 0.0);
        let mut f = ftl_with(g, 1);
        build_blocks(&mut f, &[3, 8]);
        f.host_write(16, 8, 500).unwrap();
        assert_eq!(f.free_blocks(), 1);
        assert_eq!(f.counters().copyback_programs, 0);
        let before = *f.counters();
        // frontier full and pool at the reserve: the 3-valid block is merged
        f.host_write(24, 1, 900).unwrap();
        let after = *f.counters();
        assert_eq!(after.copyback_programs - before.copyback_programs, 3);
        assert_eq!(after.erases - before.erases, 1);
        assert_eq!(f.host_read(1).unwrap(), 1);
        f.audit().unwrap();
    }

    #[test]
    fn fully_invalid_victim_costs_no_copyback() {
        let g = geometry(4, 8, 1, 0.0);
        let mut f = ftl_with(g, 1);
        build_blocks(&mut f, &[0, 8, 8]);
        let before = *f.counters();
        f.host_write(24, 8, 0).unwrap();
        let after = *f.counters();
        assert_eq!(after.copyback_programs, before.copyback_programs);
        assert_eq!(after.erases - before.erases, 1);
    }

    #[test]
    fn secure_from_pool_without_gc() {
        let g = geometry(4, 8, 1, 0.0);
        let mut f = ftl_with(g, 1);
        f.host_write(0, 8, 0).unwrap();
        assert_eq!(f.free_blocks(), 3);
        let blocks = f.secure_clean_blocks(2).unwrap();
        assert_eq!(blocks.len(), 2);
        assert_eq!(f.counters().erases, 0);
        assert_eq!(f.counters().copyback_programs, 0);
    }

    #[test]
    fn secure_beyond_slack_fails() {
        let g = geometry(4, 8, 1, 0.0);
        let mut f = ftl_with(g, 0);
        assert_eq!(
            f.secure_clean_blocks(5),
            Err(FtlError::InsufficientSpace { requested: 5 })
        );
    }

    #[test]
    fn device_wedges_when_nothing_is_reclaimable() {
        let g = geometry(2, 4, 1, 0.0);
        let mut f = ftl_with(g, 0);
        f.host_write(0, 8, 0).unwrap();
        // every page valid, pool empty: an overwrite cannot find room
        assert_eq!(f.host_write(0, 1, 1), Err(FtlError::DeviceWedged));
    }
}
