//! FlashAlloc instances: a logical address range bound to dedicated flash blocks.
//!
//! The registry answers "which active instance owns this lba" through an ordered
//! interval map keyed by chunk start; [`FaRegistry::probe_linear`] keeps the
//! scan-every-instance answer around so the two can be compared.
//!
//! The device-side operations (`flash_alloc`, `fa_append`, `destruct_instance`)
//! live here as an extension of [`Ftl`].

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ftl::{Ftl, FtlError};
use crate::media::{BlockId, BlockKind, Lba, PhysPageAddr, Token};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct InstanceId(pub u64);

impl fmt::Display for InstanceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "fa#{}", self.0)
    }
}

/// A contiguous logical extent `[lba, lba + len)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Chunk {
    pub lba: Lba,
    pub len: u64,
}

impl Chunk {
    pub fn new(lba: Lba, len: u64) -> Self {
        Chunk { lba, len }
    }
    pub fn end(&self) -> Lba {
        self.lba + self.len
    }
    pub fn contains(&self, lba: Lba) -> bool {
        lba >= self.lba && lba < self.end()
    }
    pub fn lbas(&self) -> std::ops::Range<Lba> {
        self.lba..self.end()
    }
}

/// Chunks must be non-empty, inside the logical space, and pairwise neither
/// overlapping nor adjacent (adjacent chunks should have been one chunk).
pub fn validate_chunks(chunks: &[Chunk], capacity: u64) -> Result<(), FtlError> {
    if chunks.is_empty() {
        return Err(FtlError::MalformedChunks("empty chunk list".into()));
    }
    let mut sorted = chunks.to_vec();
    sorted.sort();
    for c in &sorted {
        if c.len == 0 {
            return Err(FtlError::MalformedChunks(format!("zero-length chunk at {}", c.lba)));
        }
        if c.end() > capacity {
            return Err(FtlError::MalformedChunks(format!(
                "chunk {}+{} beyond capacity {capacity}",
                c.lba, c.len
            )));
        }
    }
    for w in sorted.windows(2) {
        if w[1].lba <= w[0].end() {
            return Err(FtlError::MalformedChunks(format!(
                "chunks {}+{} and {}+{} overlap or touch",
                w[0].lba, w[0].len, w[1].lba, w[1].len
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct FaInstance {
    pub id: InstanceId,
    pub chunks: Vec<Chunk>,
    /// Dedicated blocks in striping order.
    pub dedicated_blocks: Vec<BlockId>,
    pub pages_written: u64,
    /// Allocated capacity, the object size rounded up to whole blocks.
    pub total_pages: u64,
    /// No lba of the range was mapped when the instance was created.
    pub clean_start: bool,
}

impl FaInstance {
    pub fn object_pages(&self) -> u64 {
        self.chunks.iter().map(|c| c.len).sum()
    }

    pub fn contains(&self, lba: Lba) -> bool {
        self.chunks.iter().any(|c| c.contains(lba))
    }

    /// `(index into dedicated_blocks, page offset)` of the next append.
    ///
    /// Consecutive appends rotate over the dedicated blocks so a multi-block
    /// instance is striped across channels.
    pub fn next_write_ptr(&self) -> (usize, u32) {
        let n = self.dedicated_blocks.len() as u64;
        ((self.pages_written % n) as usize, (self.pages_written / n) as u32)
    }

    pub fn is_full(&self) -> bool {
        self.pages_written >= self.total_pages
    }
}

#[derive(Debug, Clone, Default)]
pub struct FaRegistry {
    active: BTreeMap<InstanceId, FaInstance>,
    /// chunk start → (chunk end, owner)
    index: BTreeMap<Lba, (Lba, InstanceId)>,
    next_id: u64,
}

impl FaRegistry {
    pub fn probe(&self, lba: Lba) -> Option<InstanceId> {
        self.index
            .range(..=lba)
            .next_back()
            .filter(|(_, (end, _))| lba < *end)
            .map(|(_, (_, id))| *id)
    }

    /// Scans every active instance; the reference answer for [`Self::probe`].
    pub fn probe_linear(&self, lba: Lba) -> Option<InstanceId> {
        self.active
            .values()
            .find(|inst| inst.contains(lba))
            .map(|inst| inst.id)
    }

    /// First active instance whose range intersects any of `chunks`.
    pub fn overlapping(&self, chunks: &[Chunk]) -> Option<InstanceId> {
        chunks.iter().find_map(|c| {
            // an indexed chunk starting before c.end that also ends after c.lba
            self.index
                .range(..c.end())
                .next_back()
                .filter(|(_, (end, _))| *end > c.lba)
                .map(|(_, (_, id))| *id)
        })
    }

    pub fn get(&self, id: InstanceId) -> Option<&FaInstance> {
        self.active.get(&id)
    }

    pub(crate) fn get_mut(&mut self, id: InstanceId) -> Option<&mut FaInstance> {
        self.active.get_mut(&id)
    }

    pub fn is_active(&self, id: InstanceId) -> bool {
        self.active.contains_key(&id)
    }

    pub fn active(&self) -> impl Iterator<Item = &FaInstance> {
        self.active.values()
    }

    pub fn len(&self) -> usize {
        self.active.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    pub(crate) fn allocate_id(&mut self) -> InstanceId {
        let id = InstanceId(self.next_id);
        self.next_id += 1;
        id
    }

    pub(crate) fn insert(&mut self, inst: FaInstance) {
        for c in &inst.chunks {
            self.index.insert(c.lba, (c.end(), inst.id));
        }
        self.active.insert(inst.id, inst);
    }

    pub(crate) fn remove(&mut self, id: InstanceId) -> Option<FaInstance> {
        let inst = self.active.remove(&id)?;
        for c in &inst.chunks {
            self.index.remove(&c.lba);
        }
        Some(inst)
    }
}

impl Ftl {
    /// Creates an instance over `chunks` and synchronously dedicates
    /// `ceil(pages / pages_per_block)` clean blocks to it.
    pub fn flash_alloc(&mut self, chunks: &[Chunk]) -> Result<InstanceId, FtlError> {
        validate_chunks(chunks, self.logical_capacity())?;
        if let Some(other) = self.registry.overlapping(chunks) {
            return Err(FtlError::OverlapWithActiveInstance(other));
        }
        let object_pages: u64 = chunks.iter().map(|c| c.len).sum();
        let nblocks = self.geometry().blocks_for(object_pages) as u32;
        let blocks = self.secure_clean_blocks(nblocks)?;

        let id = self.registry.allocate_id();
        for &b in &blocks {
            self.claim_free(b, BlockKind::Fa, Some(id))?;
        }
        let mut clean_start = true;
        for c in chunks {
            for lba in c.lbas() {
                let entry = &mut self.map[lba as usize];
                clean_start &= entry.ppa.is_none();
                entry.fa_flag = true;
            }
        }
        let ppb = self.geometry().pages_per_block as u64;
        self.registry.insert(FaInstance {
            id,
            chunks: chunks.to_vec(),
            dedicated_blocks: blocks,
            pages_written: 0,
            total_pages: nblocks as u64 * ppb,
            clean_start,
        });
        Ok(id)
    }

    /// Matching active instance for `lba`, if any.
    pub fn probe(&self, lba: Lba) -> Option<InstanceId> {
        self.registry.probe(lba)
    }

    /// Appends one page of an active instance at its next write pointer.
    pub(crate) fn fa_append(
        &mut self,
        id: InstanceId,
        lba: Lba,
        content: Token,
    ) -> Result<PhysPageAddr, FtlError> {
        self.invalidate_lba(lba)?;
        let inst = self
            .registry
            .get(id)
            .ok_or(FtlError::UnknownInstance(id))?;
        debug_assert!(inst.contains(lba));
        let (idx, offset) = inst.next_write_ptr();
        let block = inst.dedicated_blocks[idx];
        let ppa = self.program_host(block, lba, content)?;
        debug_assert_eq!(ppa.offset, offset);
        self.map[lba as usize].fa_flag = true;

        let inst = self.registry.get_mut(id).expect("checked above");
        inst.pages_written += 1;
        if inst.is_full() {
            self.destruct_instance(id)?;
        }
        Ok(ppa)
    }

    /// Removes an instance. Its blocks stay FlashAlloc-ed with their valid
    /// pages until trimmed or overwritten; blocks already empty are reclaimed now.
    pub fn destruct_instance(&mut self, id: InstanceId) -> Result<(), FtlError> {
        let inst = self
            .registry
            .remove(id)
            .ok_or(FtlError::UnknownInstance(id))?;
        for c in &inst.chunks {
            for lba in c.lbas() {
                self.map[lba as usize].fa_flag = false;
            }
        }
        for &b in &inst.dedicated_blocks {
            self.reclaim_if_empty_orphan(b)?;
        }
        Ok(())
    }

    pub fn fa_registry(&self) -> &FaRegistry {
        &self.registry
    }

    /// Block population by type; the three counts always sum to `total_blocks`.
    pub fn gc_region_report(&self) -> RegionReport {
        let mut r = RegionReport::default();
        for b in self.media().blocks() {
            match b.kind() {
                BlockKind::Free => r.free_blocks += 1,
                BlockKind::Normal => r.normal_blocks += 1,
                BlockKind::Fa => r.fa_blocks += 1,
            }
        }
        r
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionReport {
    pub fa_blocks: u32,
    pub normal_blocks: u32,
    pub free_blocks: u32,
}
