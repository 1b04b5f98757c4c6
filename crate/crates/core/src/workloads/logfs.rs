//! Multi-head log-structured file system with greedy segment cleaning.
//!
//! The file system keeps a fixed set of live user pages. Every update appends
//! the page to the open segment of a head chosen by the page's hotness, which
//! leaves the previous copy dead inside its old segment. When free segments
//! run low the cleaner picks the full segment with the fewest live pages,
//! re-appends those pages through its own head and trims the segment. The
//! re-appends are ordinary host writes, so the device sees log-on-log traffic.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::flashalloc::Chunk;
use crate::host::HostOp;
use crate::media::Lba;

use super::{invalid, Program, Target, WorkloadError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogFsConfig {
    /// Append heads for user data; the cleaner gets one more.
    pub active_heads: u32,
    pub segment_pages: u64,
    /// Share of updates that go to the hot page set.
    pub hot_fraction: f64,
    /// Size of the hot page set relative to all live pages.
    pub hot_set: f64,
    /// Live user data as a share of the region.
    pub live_fraction: f64,
    /// Cleaning starts when fewer than this share of segments is free.
    pub clean_threshold: f64,
    /// User updates after the initial fill; defaults to three region volumes.
    pub update_count: Option<u64>,
    /// Updates per round between cleaning checks.
    pub round_updates: u64,
}

impl Default for LogFsConfig {
    fn default() -> Self {
        LogFsConfig {
            active_heads: 6,
            segment_pages: 512,
            hot_fraction: 0.8,
            hot_set: 0.2,
            live_fraction: 0.4,
            clean_threshold: 0.15,
            update_count: None,
            round_updates: 1024,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SegState {
    Free,
    Open,
    Full,
}

struct Segment {
    state: SegState,
    /// Live user page stored at each offset.
    slots: Vec<Option<u64>>,
    live: u64,
    written: u64,
}

struct Head {
    stream: usize,
    seg: Option<usize>,
    /// Pending contiguous run in the open segment.
    run: Option<(Lba, u64)>,
}

struct Fs<'a> {
    cfg: &'a LogFsConfig,
    target: &'a Target,
    segs: Vec<Segment>,
    location: Vec<Option<(usize, u64)>>,
    heads: Vec<Head>,
    free: usize,
}

impl Fs<'_> {
    fn seg_lba(&self, seg: usize) -> Lba {
        self.target.region.base + seg as u64 * self.cfg.segment_pages
    }

    fn flush_run(&mut self, h: usize, p: &mut Program) {
        if let Some((lba, len)) = self.heads[h].run.take() {
            p.push(self.heads[h].stream, HostOp::Write { lba, len });
        }
    }

    fn open_segment(&mut self, h: usize, p: &mut Program) -> Result<usize, WorkloadError> {
        let seg = self
            .segs
            .iter()
            .position(|s| s.state == SegState::Free)
            .ok_or_else(|| super::WorkloadError::ConfigInvalid("log ran out of free segments".into()))?;
        self.segs[seg].state = SegState::Open;
        self.free -= 1;
        if self.target.mode.is_fa() {
            let lba = self.seg_lba(seg);
            p.push(self.heads[h].stream, HostOp::FlashAlloc { chunks: vec![Chunk::new(lba, self.cfg.segment_pages)] });
        }
        self.heads[h].seg = Some(seg);
        Ok(seg)
    }

    fn append(&mut self, h: usize, page: u64, p: &mut Program) -> Result<(), WorkloadError> {
        if let Some((seg, off)) = self.location[page as usize].take() {
            let s = &mut self.segs[seg];
            s.slots[off as usize] = None;
            s.live -= 1;
        }
        let seg = match self.heads[h].seg {
            Some(s) => s,
            None => self.open_segment(h, p)?,
        };
        let s = &mut self.segs[seg];
        let off = s.written;
        s.slots[off as usize] = Some(page);
        s.live += 1;
        s.written += 1;
        let full = s.written == self.cfg.segment_pages;
        self.location[page as usize] = Some((seg, off));
        let lba = self.seg_lba(seg) + off;
        self.heads[h].run = match self.heads[h].run {
            Some((start, len)) if start + len == lba => Some((start, len + 1)),
            other => {
                debug_assert!(other.is_none());
                Some((lba, 1))
            }
        };
        if full {
            self.flush_run(h, p);
            self.segs[seg].state = SegState::Full;
            self.heads[h].seg = None;
        }
        Ok(())
    }

    fn flush_all(&mut self, p: &mut Program) {
        for h in 0..self.heads.len() {
            self.flush_run(h, p);
        }
    }

    /// Cleans full segments until enough are free; returns whether any was cleaned.
    fn clean(&mut self, min_free: usize, p: &mut Program) -> Result<bool, WorkloadError> {
        let cleaner = self.heads.len() - 1;
        let mut cleaned = false;
        while self.free < min_free {
            let victim = (0..self.segs.len())
                .filter(|&i| self.segs[i].state == SegState::Full)
                .min_by_key(|&i| (self.segs[i].live, i))
                .ok_or_else(|| super::WorkloadError::ConfigInvalid("nothing to clean".into()))?;
            if self.segs[victim].live == self.cfg.segment_pages {
                return invalid("every segment is fully live; lower live_fraction");
            }
            let live: Vec<u64> = self.segs[victim].slots.iter().flatten().copied().collect();
            for page in live {
                self.append(cleaner, page, p)?;
            }
            self.flush_run(cleaner, p);
            let lba = self.seg_lba(victim);
            p.push(self.heads[cleaner].stream, HostOp::Trim { lba, len: self.cfg.segment_pages });
            let s = &mut self.segs[victim];
            s.state = SegState::Free;
            s.slots.iter_mut().for_each(|x| *x = None);
            s.live = 0;
            s.written = 0;
            self.free += 1;
            cleaned = true;
        }
        Ok(cleaned)
    }
}

/// Initial sequential fill of all live pages, then rounds of hot/cold updates
/// with greedy cleaning between rounds.
pub fn gen_logfs(cfg: &LogFsConfig, target: &Target, seed: u64) -> Result<Program, WorkloadError> {
    if cfg.active_heads == 0 {
        return invalid("logfs needs at least one head");
    }
    if cfg.segment_pages == 0 || !cfg.segment_pages.is_multiple_of(target.pages_per_block) {
        return invalid("segment_pages must be a positive multiple of the block size");
    }
    if !(0.0..=1.0).contains(&cfg.hot_fraction) || !(cfg.hot_set > 0.0 && cfg.hot_set < 1.0) {
        return invalid("hot_fraction must be in [0, 1] and hot_set in (0, 1)");
    }
    if !(cfg.live_fraction > 0.0 && cfg.live_fraction < 0.9) {
        return invalid("live_fraction must be in (0, 0.9)");
    }
    if cfg.round_updates == 0 {
        return invalid("round_updates must be at least 1");
    }
    let n_segs = (target.region.pages / cfg.segment_pages) as usize;
    let live_pages = (cfg.live_fraction * (n_segs as u64 * cfg.segment_pages) as f64) as u64;
    let heads = cfg.active_heads as usize;
    let min_free = ((cfg.clean_threshold * n_segs as f64).ceil() as usize).max(heads + 2);
    let used_at_threshold = n_segs - min_free;
    if live_pages + (heads as u64 + 1) * cfg.segment_pages >= used_at_threshold as u64 * cfg.segment_pages {
        return invalid("live data does not fit below the cleaning threshold");
    }

    let mut p = Program::with_streams(target, cfg.active_heads + 1);
    let mut fs = Fs {
        cfg,
        target,
        segs: (0..n_segs)
            .map(|_| Segment {
                state: SegState::Free,
                slots: vec![None; cfg.segment_pages as usize],
                live: 0,
                written: 0,
            })
            .collect(),
        location: vec![None; live_pages as usize],
        heads: (0..=heads).map(|stream| Head { stream, seg: None, run: None }).collect(),
        free: n_segs,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hot_pages = ((cfg.hot_set * live_pages as f64) as u64).max(1);
    // hot pages share the first half of the user heads, cold ones the rest
    let hot_heads = heads.div_ceil(2);
    let head_for = |page: u64| -> usize {
        if page < hot_pages || heads == 1 {
            (page % hot_heads as u64) as usize
        } else {
            hot_heads + (page % (heads - hot_heads) as u64) as usize
        }
    };

    for page in 0..live_pages {
        fs.append(head_for(page), page, &mut p)?;
    }
    fs.flush_all(&mut p);
    p.barrier();

    let updates = cfg.update_count.unwrap_or(3 * target.region.pages);
    let mut done = 0u64;
    while done < updates {
        let n = cfg.round_updates.min(updates - done);
        for _ in 0..n {
            let page = if rng.gen_bool(cfg.hot_fraction) {
                rng.gen_range(0..hot_pages)
            } else {
                rng.gen_range(hot_pages.min(live_pages - 1)..live_pages)
            };
            fs.append(head_for(page), page, &mut p)?;
        }
        fs.flush_all(&mut p);
        p.barrier();
        if fs.clean(min_free, &mut p)? {
            p.barrier();
        }
        done += n;
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workloads::testutil::trims_follow_writes;
    use crate::workloads::{Mode, Region};

    fn target(mode: Mode) -> Target {
        Target { region: Region::new(0, 58880), pages_per_block: 512, mode, tenant_id: 0 }
    }

    fn small() -> LogFsConfig {
        LogFsConfig { update_count: Some(60_000), ..LogFsConfig::default() }
    }

    #[test]
    fn segments_are_allocated_whole_before_use() {
        let p = gen_logfs(&small(), &target(Mode::Flashalloc), 1).unwrap();
        for s in &p.streams {
            let mut open: Option<(Lba, Lba)> = None;
            let mut next: Lba = 0;
            for op in &s.ops {
                match op {
                    HostOp::FlashAlloc { chunks } => {
                        assert_eq!(chunks.len(), 1);
                        assert_eq!(chunks[0].len, 512);
                        assert_eq!(chunks[0].lba % 512, 0);
                        assert!(open.is_none() || next == open.unwrap().1, "segment reallocated before filled");
                        open = Some((chunks[0].lba, chunks[0].end()));
                        next = chunks[0].lba;
                    }
                    HostOp::Write { lba, len } => {
                        let (start, end) = open.expect("write outside an allocated segment");
                        assert!(*lba >= start && lba + len <= end);
                        assert_eq!(*lba, next, "segment appends are sequential");
                        next = lba + len;
                    }
                    _ => {}
                }
            }
        }
    }

    #[test]
    fn trims_cover_written_segments() {
        let p = gen_logfs(&small(), &target(Mode::Vanilla), 2).unwrap();
        let trims = p.ops().filter(|op| matches!(op, HostOp::Trim { len: 512, .. })).count();
        assert!(trims > 0);
        trims_follow_writes(&p);
    }

    #[test]
    fn short_run_needs_no_cleaning() {
        let cfg = LogFsConfig { update_count: Some(2_000), ..LogFsConfig::default() };
        let p = gen_logfs(&cfg, &target(Mode::Flashalloc), 3).unwrap();
        assert!(p.ops().all(|op| !matches!(op, HostOp::Trim { .. })));
    }

    #[test]
    fn rejects_overfull() {
        let cfg = LogFsConfig { live_fraction: 0.85, ..LogFsConfig::default() };
        assert!(gen_logfs(&cfg, &target(Mode::Vanilla), 1).is_err());
    }
}
