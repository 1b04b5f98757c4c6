//! Brute-force reference FTL used as an equivalence oracle.
//!
//! [`RefFtl`] re-implements the device with the same decision rules as
//! [`Ftl`](crate::ftl::Ftl) but none of its machinery: no interval index, no
//! free-block set, no cached valid counts. Everything is recomputed by
//! scanning. The only shared pieces are the geometry constants and the
//! [`StateHasher`] that turns either engine's state into a [`StateDigest`].

use std::fmt;

use sha2::{Digest, Sha256};

use crate::flashalloc::Chunk;
use crate::ftl::{Ftl, FtlConfig, FtlError, Striping};
use crate::host::Command;
use crate::media::{BlockKind, Geometry, PageState};

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct StateDigest(pub [u8; 32]);

impl fmt::Display for StateDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for StateDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "StateDigest({self})")
    }
}

/// Canonical serialization of observable device state.
///
/// Feed the mapping table in lba order, then blocks in id order, then the counters.
pub struct StateHasher(Sha256);

impl Default for StateHasher {
    fn default() -> Self {
        Self::new()
    }
}

impl StateHasher {
    pub fn new() -> Self {
        StateHasher(Sha256::new())
    }

    fn u64(&mut self, v: u64) {
        self.0.update(v.to_le_bytes());
    }

    pub fn mapping_entry(&mut self, ppa: Option<(u32, u32)>, fa_flag: bool) {
        match ppa {
            Some((b, o)) => {
                self.u64(1);
                self.u64(b as u64);
                self.u64(o as u64);
            }
            None => self.u64(0),
        }
        self.u64(fa_flag as u64);
    }

    /// `pages` yields `(state, resident lba, content token)` per offset.
    pub fn block(
        &mut self,
        kind: BlockKind,
        owner: Option<u64>,
        erase_count: u64,
        pages: impl Iterator<Item = (PageState, Option<u64>, u64)>,
    ) {
        self.u64(match kind {
            BlockKind::Free => 0,
            BlockKind::Normal => 1,
            BlockKind::Fa => 2,
        });
        self.u64(owner.map_or(u64::MAX, |o| o));
        self.u64(erase_count);
        for (state, lba, token) in pages {
            match state {
                PageState::Clean => self.u64(0),
                PageState::Valid => {
                    self.u64(1);
                    self.u64(lba.unwrap_or(u64::MAX));
                    self.u64(token);
                }
                PageState::Invalid => {
                    self.u64(2);
                    self.u64(lba.unwrap_or(u64::MAX));
                }
            }
        }
    }

    /// Logical, physical, copyback, erase, trim-invalidation and trim-erase totals.
    pub fn counters(&mut self, totals: [u64; 6]) {
        for v in totals {
            self.u64(v);
        }
    }

    pub fn finish(self) -> StateDigest {
        StateDigest(self.0.finalize().into())
    }
}

/// Digest of the main engine's state.
pub fn digest_ftl(ftl: &Ftl) -> StateDigest {
    let mut h = StateHasher::new();
    for lba in 0..ftl.logical_capacity() {
        let e = ftl.mapping(lba);
        h.mapping_entry(e.ppa.map(|p| (p.block, p.offset)), e.fa_flag);
    }
    for b in ftl.media().blocks() {
        h.block(
            b.kind(),
            b.fa_owner().map(|id| id.0),
            b.erase_count(),
            (0..ftl.geometry().pages_per_block).map(|o| (b.page_state(o), b.resident_lba(o), b.content(o))),
        );
    }
    let c = ftl.counters();
    h.counters([
        c.logical_pages_written,
        c.physical_programs,
        c.copyback_programs,
        c.erases,
        c.trim_page_invalidations,
        c.trim_block_erases,
    ]);
    h.finish()
}

/// Deliberate rule changes that make the oracle diverge; used to show that a
/// digest comparison can actually fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Perturbation {
    #[default]
    None,
    /// Break greedy ties towards the highest block id.
    TieBreakHighestId,
}

#[derive(Debug, Clone)]
struct RefPage {
    state: PageState,
    lba: Option<u64>,
    token: u64,
}

#[derive(Debug, Clone)]
struct RefBlock {
    kind: BlockKind,
    owner: Option<u64>,
    erase_count: u64,
    pages: Vec<RefPage>,
}

impl RefBlock {
    fn written(&self) -> usize {
        self.pages.iter().take_while(|p| p.state != PageState::Clean).count()
    }
    fn valid(&self) -> usize {
        self.pages.iter().filter(|p| p.state == PageState::Valid).count()
    }
    fn invalid(&self) -> usize {
        self.pages.iter().filter(|p| p.state == PageState::Invalid).count()
    }
}

#[derive(Debug, Clone)]
struct RefInstance {
    id: u64,
    chunks: Vec<(u64, u64)>,
    blocks: Vec<u32>,
    written: u64,
}

impl RefInstance {
    fn covers(&self, lba: u64) -> bool {
        self.chunks.iter().any(|&(s, l)| lba >= s && lba < s + l)
    }
}

type RefResult<T> = Result<T, &'static str>;

#[derive(Debug, Clone)]
pub struct RefFtl {
    geometry: Geometry,
    reserve: usize,
    slots: usize,
    perturb: Perturbation,
    blocks: Vec<RefBlock>,
    map: Vec<Option<(u32, u32)>>,
    flags: Vec<bool>,
    instances: Vec<RefInstance>,
    next_id: u64,
    frontier: Vec<Option<u32>>,
    stripe: u64,
    fa_cursor: u64,
    logical: u64,
    physical: u64,
    copybacks: u64,
    erases: u64,
    trim_invalidations: u64,
    trim_erases: u64,
}

impl RefFtl {
    pub fn new(geometry: Geometry, cfg: &FtlConfig) -> Self {
        Self::with_perturbation(geometry, cfg, Perturbation::None)
    }

    pub fn with_perturbation(geometry: Geometry, cfg: &FtlConfig, perturb: Perturbation) -> Self {
        let ppb = geometry.pages_per_block as usize;
        let slots = match cfg.striping {
            Striping::PerChannel => geometry.channels as usize,
            Striping::SingleFrontier => 1,
        };
        let capacity = geometry.logical_capacity_pages() as usize;
        RefFtl {
            geometry,
            reserve: cfg.reserve_threshold as usize,
            slots,
            perturb,
            blocks: (0..geometry.total_blocks)
                .map(|_| RefBlock {
                    kind: BlockKind::Free,
                    owner: None,
                    erase_count: 0,
                    pages: vec![RefPage { state: PageState::Clean, lba: None, token: 0 }; ppb],
                })
                .collect(),
            map: vec![None; capacity],
            flags: vec![false; capacity],
            instances: Vec::new(),
            next_id: 0,
            frontier: vec![None; slots],
            stripe: 0,
            fa_cursor: 0,
            logical: 0,
            physical: 0,
            copybacks: 0,
            erases: 0,
            trim_invalidations: 0,
            trim_erases: 0,
        }
    }

    pub fn digest(&self) -> StateDigest {
        let mut h = StateHasher::new();
        for lba in 0..self.map.len() {
            h.mapping_entry(self.map[lba], self.flags[lba]);
        }
        for b in &self.blocks {
            h.block(b.kind, b.owner, b.erase_count, b.pages.iter().map(|p| (p.state, p.lba, p.token)));
        }
        h.counters([
            self.logical,
            self.physical,
            self.copybacks,
            self.erases,
            self.trim_invalidations,
            self.trim_erases,
        ]);
        h.finish()
    }

    /// Applies one device command, reporting failures by error-variant name.
    pub fn apply(&mut self, cmd: &Command) -> RefResult<()> {
        match cmd {
            Command::Write { lba, len, content_base } => self.write(*lba, *len, *content_base),
            Command::Trim { lba, len } => self.trim(*lba, *len),
            Command::FlashAlloc { chunks } => self.flash_alloc(chunks),
        }
    }

    fn in_range(&self, lba: u64, len: u64) -> RefResult<()> {
        match lba.checked_add(len) {
            Some(end) if end <= self.map.len() as u64 => Ok(()),
            _ => Err("OutOfRange"),
        }
    }

    fn free_ids(&self) -> Vec<u32> {
        (0..self.blocks.len() as u32)
            .filter(|&b| self.blocks[b as usize].kind == BlockKind::Free)
            .collect()
    }

    fn owner_active(&self, owner: Option<u64>) -> bool {
        owner.is_some_and(|o| self.instances.iter().any(|i| i.id == o))
    }

    fn probe(&self, lba: u64) -> Option<usize> {
        self.instances.iter().position(|i| i.covers(lba))
    }

    fn write(&mut self, lba: u64, len: u64, base: u64) -> RefResult<()> {
        self.in_range(lba, len)?;
        for i in 0..len {
            let l = lba + i;
            match self.probe(l) {
                Some(idx) => self.append_to_instance(idx, l, base + i)?,
                None => self.write_normal(l, base + i)?,
            }
        }
        Ok(())
    }

    fn drop_copy(&mut self, lba: u64) -> RefResult<()> {
        if let Some((b, o)) = self.map[lba as usize].take() {
            self.blocks[b as usize].pages[o as usize].state = PageState::Invalid;
            self.reclaim_orphan(b);
        }
        Ok(())
    }

    /// Erases (or releases, if never written) an FA block of a dead instance with no valid page.
    fn reclaim_orphan(&mut self, b: u32) -> bool {
        let blk = &self.blocks[b as usize];
        if blk.kind != BlockKind::Fa || self.owner_active(blk.owner) || blk.valid() > 0 {
            return false;
        }
        if blk.written() == 0 {
            let blk = &mut self.blocks[b as usize];
            blk.kind = BlockKind::Free;
            blk.owner = None;
            false
        } else {
            self.erase(b);
            true
        }
    }

    fn erase(&mut self, b: u32) {
        let blk = &mut self.blocks[b as usize];
        for p in &mut blk.pages {
            *p = RefPage { state: PageState::Clean, lba: None, token: 0 };
        }
        blk.kind = BlockKind::Free;
        blk.owner = None;
        blk.erase_count += 1;
        self.erases += 1;
    }

    fn program(&mut self, b: u32, lba: u64, token: u64) -> (u32, u32) {
        let blk = &mut self.blocks[b as usize];
        let off = blk.written();
        blk.pages[off] = RefPage { state: PageState::Valid, lba: Some(lba), token };
        self.physical += 1;
        (b, off as u32)
    }

    fn next_slot(&mut self) -> usize {
        let s = (self.stripe % self.slots as u64) as usize;
        self.stripe += 1;
        s
    }

    fn pick_free(&self, channel: u32, skip: &[u32]) -> Option<u32> {
        let free: Vec<u32> = self.free_ids().into_iter().filter(|b| !skip.contains(b)).collect();
        free.iter()
            .copied()
            .find(|b| b % self.geometry.channels == channel)
            .or_else(|| free.first().copied())
    }

    fn open_frontier(&mut self, slot: usize) -> RefResult<u32> {
        let b = self.pick_free(slot as u32, &[]).ok_or("DeviceWedged")?;
        self.blocks[b as usize].kind = BlockKind::Normal;
        self.frontier[slot] = Some(b);
        Ok(b)
    }

    fn close_if_full(&mut self, slot: usize) {
        if let Some(b) = self.frontier[slot] {
            if self.blocks[b as usize].written() == self.blocks[b as usize].pages.len() {
                self.frontier[slot] = None;
            }
        }
    }

    fn write_normal(&mut self, lba: u64, token: u64) -> RefResult<()> {
        self.drop_copy(lba)?;
        let slot = self.next_slot();
        let b = match self.frontier[slot] {
            Some(b) => b,
            None => {
                while self.free_ids().len() <= self.reserve {
                    let Some(v) = self.victim(false).or_else(|| self.victim(true)) else {
                        break;
                    };
                    self.merge(v)?;
                }
                match self.frontier[slot] {
                    Some(b) => b,
                    None => self.open_frontier(slot)?,
                }
            }
        };
        let ppa = self.program(b, lba, token);
        self.map[lba as usize] = Some(ppa);
        self.logical += 1;
        self.close_if_full(slot);
        Ok(())
    }

    fn victim(&self, allow_orphans: bool) -> Option<u32> {
        let mut best: Option<(usize, u32)> = None;
        for (id, blk) in self.blocks.iter().enumerate() {
            let id = id as u32;
            if self.frontier.contains(&Some(id)) || blk.invalid() == 0 {
                continue;
            }
            let ok = match blk.kind {
                BlockKind::Free => false,
                BlockKind::Normal => true,
                BlockKind::Fa => allow_orphans && !self.owner_active(blk.owner),
            };
            if !ok {
                continue;
            }
            let v = blk.valid();
            let better = match best {
                None => true,
                Some((bv, bid)) => match self.perturb {
                    Perturbation::None => v < bv || (v == bv && id < bid),
                    Perturbation::TieBreakHighestId => v < bv || (v == bv && id > bid),
                },
            };
            if better {
                best = Some((v, id));
            }
        }
        best.map(|(_, id)| id)
    }

    fn merge(&mut self, victim: u32) -> RefResult<()> {
        let live: Vec<(usize, u64, u64)> = self.blocks[victim as usize]
            .pages
            .iter()
            .enumerate()
            .filter(|(_, p)| p.state == PageState::Valid)
            .map(|(o, p)| (o, p.lba.unwrap(), p.token))
            .collect();
        for (off, lba, token) in live {
            let slot = self.next_slot();
            let dest = match self.frontier[slot] {
                Some(b) => b,
                None => self.open_frontier(slot)?,
            };
            let ppa = self.program(dest, lba, token);
            self.blocks[victim as usize].pages[off].state = PageState::Invalid;
            self.map[lba as usize] = Some(ppa);
            self.copybacks += 1;
            self.close_if_full(slot);
        }
        self.erase(victim);
        Ok(())
    }

    fn append_to_instance(&mut self, idx: usize, lba: u64, token: u64) -> RefResult<()> {
        self.drop_copy(lba)?;
        let inst = &self.instances[idx];
        let n = inst.blocks.len() as u64;
        let b = inst.blocks[(inst.written % n) as usize];
        let ppa = self.program(b, lba, token);
        self.map[lba as usize] = Some(ppa);
        self.flags[lba as usize] = true;
        self.logical += 1;
        let ppb = self.geometry.pages_per_block as u64;
        let inst = &mut self.instances[idx];
        inst.written += 1;
        if inst.written == n * ppb {
            let dead = self.instances.remove(idx);
            for &(s, l) in &dead.chunks {
                for x in s..s + l {
                    self.flags[x as usize] = false;
                }
            }
            for &b in &dead.blocks {
                self.reclaim_orphan(b);
            }
        }
        Ok(())
    }

    fn trim(&mut self, lba: u64, len: u64) -> RefResult<()> {
        self.in_range(lba, len)?;
        for l in lba..lba + len {
            if let Some((b, o)) = self.map[l as usize].take() {
                self.blocks[b as usize].pages[o as usize].state = PageState::Invalid;
                self.trim_invalidations += 1;
                if self.reclaim_orphan(b) {
                    self.trim_erases += 1;
                }
                self.flags[l as usize] = self.probe(l).is_some();
            }
        }
        Ok(())
    }

    fn flash_alloc(&mut self, chunks: &[Chunk]) -> RefResult<()> {
        if chunks.is_empty() {
            return Err("MalformedChunks");
        }
        let cap = self.map.len() as u64;
        for (i, a) in chunks.iter().enumerate() {
            if a.len == 0 || a.lba.checked_add(a.len).is_none_or(|e| e > cap) {
                return Err("MalformedChunks");
            }
            for b in &chunks[i + 1..] {
                // overlapping or touching
                if a.lba <= b.lba + b.len && b.lba <= a.lba + a.len {
                    return Err("MalformedChunks");
                }
            }
        }
        for c in chunks {
            for lba in c.lba..c.lba + c.len {
                if self.probe(lba).is_some() {
                    return Err("OverlapWithActiveInstance");
                }
            }
        }
        let pages: u64 = chunks.iter().map(|c| c.len).sum();
        let ppb = self.geometry.pages_per_block as u64;
        let n = pages.div_ceil(ppb) as usize;
        while self.free_ids().len() < n + self.reserve {
            let v = self.victim(true).ok_or("InsufficientSpace")?;
            self.merge(v)?;
        }
        let mut picked = Vec::new();
        for _ in 0..n {
            let ch = (self.fa_cursor % self.geometry.channels as u64) as u32;
            self.fa_cursor += 1;
            picked.push(self.pick_free(ch, &picked).expect("enough free blocks"));
        }
        let id = self.next_id;
        self.next_id += 1;
        for &b in &picked {
            self.blocks[b as usize].kind = BlockKind::Fa;
            self.blocks[b as usize].owner = Some(id);
        }
        for c in chunks {
            for lba in c.lba..c.lba + c.len {
                self.flags[lba as usize] = true;
            }
        }
        self.instances.push(RefInstance {
            id,
            chunks: chunks.iter().map(|c| (c.lba, c.len)).collect(),
            blocks: picked,
            written: 0,
        });
        Ok(())
    }
}

/// Applies a command to the main engine, mirroring [`RefFtl::apply`].
pub fn apply_to_ftl(ftl: &mut Ftl, cmd: &Command) -> Result<(), FtlError> {
    match cmd {
        Command::Write { lba, len, content_base } => ftl.host_write(*lba, *len, *content_base).map(|_| ()),
        Command::Trim { lba, len } => ftl.host_trim(*lba, *len).map(|_| ()),
        Command::FlashAlloc { chunks } => ftl.flash_alloc(chunks).map(|_| ()),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Divergence {
    /// Index of the first command after which the engines disagree.
    pub index: usize,
    pub detail: String,
}

/// Runs both engines over `commands`, comparing outcomes positionally.
///
/// With `every_step` the digests are compared after each command; otherwise
/// only error positions are compared along the way and digests at the end.
pub fn replay_both(
    geometry: Geometry,
    cfg: &FtlConfig,
    commands: &[Command],
    perturb: Perturbation,
    every_step: bool,
) -> Result<StateDigest, Divergence> {
    let mut main = Ftl::new(geometry, *cfg).map_err(|e| Divergence { index: 0, detail: e.to_string() })?;
    let mut oracle = RefFtl::with_perturbation(geometry, cfg, perturb);
    for (i, cmd) in commands.iter().enumerate() {
        let a = apply_to_ftl(&mut main, cmd).map_err(|e| e.kind());
        let b = oracle.apply(cmd);
        if a != b {
            return Err(Divergence {
                index: i,
                detail: format!("main {a:?} vs oracle {b:?} on {cmd:?}"),
            });
        }
        if every_step && digest_ftl(&main) != oracle.digest() {
            return Err(Divergence { index: i, detail: "state digest".into() });
        }
    }
    let (d_main, d_oracle) = (digest_ftl(&main), oracle.digest());
    if d_main != d_oracle {
        return Err(Divergence {
            index: commands.len(),
            detail: format!("final digest {d_main} vs {d_oracle}"),
        });
    }
    Ok(d_main)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> (Geometry, FtlConfig) {
        let g = Geometry {
            total_blocks: 16,
            pages_per_block: 8,
            page_size: 4096,
            channels: 2,
            op_fraction: 0.25,
        };
        (g, FtlConfig::for_geometry(&g))
    }

    #[test]
    fn fresh_devices_agree() {
        let (g, cfg) = small();
        let main = Ftl::new(g, cfg).unwrap();
        assert_eq!(digest_ftl(&main), RefFtl::new(g, &cfg).digest());
    }

    #[test]
    fn simple_sequence_agrees() {
        let (g, cfg) = small();
        let cmds = vec![
            Command::FlashAlloc { chunks: vec![Chunk::new(0, 8)] },
            Command::Write { lba: 0, len: 8, content_base: 1 },
            Command::Write { lba: 20, len: 30, content_base: 9 },
            Command::Write { lba: 20, len: 30, content_base: 39 },
            Command::Trim { lba: 0, len: 8 },
            Command::Trim { lba: 25, len: 3 },
            Command::Write { lba: 60, len: 4, content_base: 69 },
        ];
        replay_both(g, &cfg, &cmds, Perturbation::None, true).unwrap();
    }

    #[test]
    fn digest_sees_content() {
        let (g, cfg) = small();
        let mut a = Ftl::new(g, cfg).unwrap();
        let mut b = Ftl::new(g, cfg).unwrap();
        a.host_write(0, 1, 1).unwrap();
        b.host_write(0, 1, 2).unwrap();
        assert_ne!(digest_ftl(&a), digest_ftl(&b));
    }
}
