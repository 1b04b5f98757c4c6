//! Raw flash geometry and the physical page/block state machine.
//!
//! Blocks are append-only: pages are programmed strictly in offset order and
//! can only return to `Clean` through a whole-block erase.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flashalloc::InstanceId;

pub type BlockId = u32;
pub type Lba = u64;
/// Content stand-in: the monotone write sequence number of the host write.
pub type Token = u64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Geometry {
    pub total_blocks: u32,
    pub pages_per_block: u32,
    pub page_size: u32,
    pub channels: u32,
    /// Share of `total_blocks` hidden from the logical address space.
    pub op_fraction: f64,
}

impl Default for Geometry {
    /// 256 MiB of 2 MiB blocks, 4 KiB pages, 8 channels, 10% over-provisioning.
    fn default() -> Self {
        Geometry {
            total_blocks: 128,
            pages_per_block: 512,
            page_size: 4096,
            channels: 8,
            op_fraction: 0.10,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("geometry needs at least one block, page and channel")]
    Empty,
    #[error("op_fraction {0} outside [0, 1)")]
    OpFraction(f64),
    #[error("{channels} channels do not divide {total_blocks} blocks evenly")]
    UnevenChannels { total_blocks: u32, channels: u32 },
    #[error("over-provisioning leaves no logical capacity")]
    NoLogicalCapacity,
}

impl Geometry {
    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.total_blocks == 0 || self.pages_per_block == 0 || self.channels == 0 {
            return Err(GeometryError::Empty);
        }
        if !(0.0..1.0).contains(&self.op_fraction) {
            return Err(GeometryError::OpFraction(self.op_fraction));
        }
        if !self.total_blocks.is_multiple_of(self.channels) {
            return Err(GeometryError::UnevenChannels {
                total_blocks: self.total_blocks,
                channels: self.channels,
            });
        }
        if self.logical_blocks() == 0 {
            return Err(GeometryError::NoLogicalCapacity);
        }
        Ok(())
    }

    /// Blocks' worth of logical address space, `floor(total × (1 − op))`.
    pub fn logical_blocks(&self) -> u64 {
        // the epsilon keeps e.g. 10 × 0.9 from flooring to 8
        ((self.total_blocks as f64) * (1.0 - self.op_fraction) + 1e-9).floor() as u64
    }

    pub fn logical_capacity_pages(&self) -> u64 {
        self.logical_blocks() * self.pages_per_block as u64
    }

    pub fn total_pages(&self) -> u64 {
        self.total_blocks as u64 * self.pages_per_block as u64
    }

    /// Blocks are assigned to channels round-robin by id.
    pub fn channel_of(&self, block: BlockId) -> u32 {
        block % self.channels
    }

    /// Number of blocks needed to hold `pages` pages.
    pub fn blocks_for(&self, pages: u64) -> u64 {
        pages.div_ceil(self.pages_per_block as u64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PhysPageAddr {
    pub block: BlockId,
    pub offset: u32,
}

impl std::fmt::Display for PhysPageAddr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.block, self.offset)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BlockKind {
    Free,
    Normal,
    /// Dedicated to a FlashAlloc instance (the FA-BLK flag).
    Fa,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PageState {
    Clean,
    Valid,
    Invalid,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MediaError {
    #[error("block {0} does not exist")]
    NoSuchBlock(BlockId),
    #[error("block {0} is full")]
    BlockFull(BlockId),
    #[error("block {0} must be claimed before programming")]
    Unclaimed(BlockId),
    #[error("block {0} is already claimed")]
    AlreadyClaimed(BlockId),
    #[error("erase of block {block} with {valid} valid pages")]
    EraseWithValidPages { block: BlockId, valid: u32 },
    #[error("block {0} has programmed pages and cannot be released without erase")]
    ReleaseWritten(BlockId),
    #[error("page {0} is not valid")]
    NotValid(PhysPageAddr),
    #[error("block {0} is free")]
    FreeBlock(BlockId),
}

#[derive(Debug, Clone)]
pub struct Block {
    id: BlockId,
    kind: BlockKind,
    fa_owner: Option<InstanceId>,
    write_ptr: u32,
    pages: Vec<PageState>,
    resident: Vec<Option<Lba>>,
    content: Vec<Token>,
    valid_count: u32,
    erase_count: u64,
    programs: u64,
}

impl Block {
    fn new(id: BlockId, pages_per_block: u32) -> Self {
        let n = pages_per_block as usize;
        Block {
            id,
            kind: BlockKind::Free,
            fa_owner: None,
            write_ptr: 0,
            pages: vec![PageState::Clean; n],
            resident: vec![None; n],
            content: vec![0; n],
            valid_count: 0,
            erase_count: 0,
            programs: 0,
        }
    }

    pub fn id(&self) -> BlockId {
        self.id
    }
    pub fn kind(&self) -> BlockKind {
        self.kind
    }
    pub fn fa_owner(&self) -> Option<InstanceId> {
        self.fa_owner
    }
    pub fn write_ptr(&self) -> u32 {
        self.write_ptr
    }
    pub fn valid_count(&self) -> u32 {
        self.valid_count
    }
    pub fn invalid_count(&self) -> u32 {
        self.write_ptr - self.valid_count
    }
    pub fn erase_count(&self) -> u64 {
        self.erase_count
    }
    /// Pages programmed into this block since boot.
    pub fn programs(&self) -> u64 {
        self.programs
    }
    pub fn page_state(&self, offset: u32) -> PageState {
        self.pages[offset as usize]
    }
    pub fn page_states(&self) -> &[PageState] {
        &self.pages
    }
    /// Logical page stored at `offset`, if the page was ever programmed since the last erase.
    pub fn resident_lba(&self, offset: u32) -> Option<Lba> {
        self.resident[offset as usize]
    }
    pub fn content(&self, offset: u32) -> Token {
        self.content[offset as usize]
    }
    pub fn is_full(&self) -> bool {
        self.write_ptr as usize == self.pages.len()
    }
    /// Offsets of Valid pages together with their resident lba, in offset order.
    pub fn valid_pages(&self) -> impl Iterator<Item = (u32, Lba)> + '_ {
        self.pages
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == PageState::Valid)
            .map(|(i, _)| (i as u32, self.resident[i].expect("valid page has an lba")))
    }
}

/// The array of flash blocks plus the global program counter.
#[derive(Debug, Clone)]
pub struct FlashMedia {
    geometry: Geometry,
    blocks: Vec<Block>,
    physical_programs: u64,
}

impl FlashMedia {
    pub fn new(geometry: Geometry) -> Self {
        let blocks = (0..geometry.total_blocks)
            .map(|id| Block::new(id, geometry.pages_per_block))
            .collect();
        FlashMedia {
            geometry,
            blocks,
            physical_programs: 0,
        }
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block(&self, id: BlockId) -> Result<&Block, MediaError> {
        self.blocks.get(id as usize).ok_or(MediaError::NoSuchBlock(id))
    }

    fn block_mut(&mut self, id: BlockId) -> Result<&mut Block, MediaError> {
        self.blocks
            .get_mut(id as usize)
            .ok_or(MediaError::NoSuchBlock(id))
    }

    pub fn physical_programs(&self) -> u64 {
        self.physical_programs
    }

    /// Takes a free block out of the pool for normal or FlashAlloc-ed use.
    pub fn claim(
        &mut self,
        id: BlockId,
        kind: BlockKind,
        owner: Option<InstanceId>,
    ) -> Result<(), MediaError> {
        let block = self.block_mut(id)?;
        if block.kind != BlockKind::Free {
            return Err(MediaError::AlreadyClaimed(id));
        }
        debug_assert!(kind != BlockKind::Free);
        debug_assert_eq!(owner.is_some(), kind == BlockKind::Fa);
        block.kind = kind;
        block.fa_owner = owner;
        Ok(())
    }

    /// Returns a claimed but never-programmed block to the free state without an erase.
    pub fn release(&mut self, id: BlockId) -> Result<(), MediaError> {
        let block = self.block_mut(id)?;
        if block.write_ptr != 0 {
            return Err(MediaError::ReleaseWritten(id));
        }
        block.kind = BlockKind::Free;
        block.fa_owner = None;
        Ok(())
    }

    pub fn program_page(
        &mut self,
        id: BlockId,
        lba: Lba,
        content: Token,
    ) -> Result<PhysPageAddr, MediaError> {
        let block = self.block_mut(id)?;
        if block.kind == BlockKind::Free {
            return Err(MediaError::Unclaimed(id));
        }
        if block.is_full() {
            return Err(MediaError::BlockFull(id));
        }
        let offset = block.write_ptr;
        let i = offset as usize;
        block.pages[i] = PageState::Valid;
        block.resident[i] = Some(lba);
        block.content[i] = content;
        block.valid_count += 1;
        block.write_ptr += 1;
        block.programs += 1;
        self.physical_programs += 1;
        Ok(PhysPageAddr { block: id, offset })
    }

    pub fn invalidate_page(&mut self, ppa: PhysPageAddr) -> Result<(), MediaError> {
        let block = self.block_mut(ppa.block)?;
        match block.pages.get(ppa.offset as usize) {
            Some(PageState::Valid) => {
                block.pages[ppa.offset as usize] = PageState::Invalid;
                block.valid_count -= 1;
                Ok(())
            }
            _ => Err(MediaError::NotValid(ppa)),
        }
    }

    pub fn erase_block(&mut self, id: BlockId) -> Result<(), MediaError> {
        let block = self.block_mut(id)?;
        if block.valid_count > 0 {
            return Err(MediaError::EraseWithValidPages {
                block: id,
                valid: block.valid_count,
            });
        }
        block.pages.fill(PageState::Clean);
        block.resident.fill(None);
        block.content.fill(0);
        block.write_ptr = 0;
        block.kind = BlockKind::Free;
        block.fa_owner = None;
        block.erase_count += 1;
        Ok(())
    }

    pub fn block_utilization(&self, id: BlockId) -> Result<f64, MediaError> {
        let block = self.block(id)?;
        if block.kind == BlockKind::Free {
            return Err(MediaError::FreeBlock(id));
        }
        Ok(block.valid_count as f64 / self.geometry.pages_per_block as f64)
    }

    /// Checks the per-block state machine invariants; returns a description of the first violation.
    pub fn audit(&self) -> Result<(), String> {
        let mut programs = 0u64;
        for b in &self.blocks {
            let (mut clean, mut valid, mut invalid) = (0u32, 0u32, 0u32);
            for (i, s) in b.pages.iter().enumerate() {
                let below = (i as u32) < b.write_ptr;
                match (s, below) {
                    (PageState::Clean, false) => clean += 1,
                    (PageState::Valid, true) => valid += 1,
                    (PageState::Invalid, true) => invalid += 1,
                    _ => return Err(format!("block {} page {i} is {s:?} with write_ptr {}", b.id, b.write_ptr)),
                }
            }
            if clean + valid + invalid != self.geometry.pages_per_block {
                return Err(format!("block {} page count mismatch", b.id));
            }
            if valid != b.valid_count {
                return Err(format!("block {} valid_count {} != {valid}", b.id, b.valid_count));
            }
            if b.kind == BlockKind::Free && b.write_ptr != 0 {
                return Err(format!("free block {} is not clean", b.id));
            }
            if b.fa_owner.is_some() != (b.kind == BlockKind::Fa) {
                return Err(format!("block {} owner/kind mismatch", b.id));
            }
            programs += b.programs;
        }
        if programs != self.physical_programs {
            return Err(format!(
                "per-block programs {programs} != global counter {}",
                self.physical_programs
            ));
        }
        Ok(())
    }
}
