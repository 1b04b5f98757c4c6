//! Random command streams shared by the oracle and fuzz tests.

#![allow(dead_code)]

use fasim::host::Command;
use fasim::{Chunk, FtlConfig, Geometry};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// The small device the oracle and fuzz suites run on.
pub fn fuzz_geometry() -> Geometry {
    Geometry { total_blocks: 64, pages_per_block: 16, page_size: 4096, channels: 4, op_fraction: 0.25 }
}

pub fn fuzz_config() -> FtlConfig {
    FtlConfig::for_geometry(&fuzz_geometry())
}

/// Mixed writes, trims and FlashAllocs. Most allocations are block
/// multiples and are then written and trimmed as objects, so the FA paths
/// see realistic traffic; a few commands are deliberately malformed.
pub struct CommandGen {
    rng: ChaCha8Rng,
    capacity: u64,
    ppb: u64,
    objects: Vec<(u64, u64)>,
    token: u64,
}

impl CommandGen {
    pub fn new(seed: u64, g: &Geometry) -> Self {
        CommandGen {
            rng: ChaCha8Rng::seed_from_u64(seed),
            capacity: g.logical_capacity_pages(),
            ppb: g.pages_per_block as u64,
            objects: Vec::new(),
            token: 1,
        }
    }

    fn range(&mut self, max_len: u64) -> (u64, u64) {
        let lba = self.rng.gen_range(0..self.capacity);
        let len = self.rng.gen_range(1..=max_len).min(self.capacity - lba);
        (lba, len)
    }

    fn write(&mut self, lba: u64, len: u64) -> Command {
        let content_base = self.token;
        self.token += len;
        Command::Write { lba, len, content_base }
    }

    pub fn next_command(&mut self) -> Command {
        let roll = self.rng.gen_range(0..100);
        match roll {
            0..=34 => {
                let (lba, len) = self.range(2 * self.ppb);
                self.write(lba, len)
            }
            35..=59 if !self.objects.is_empty() => {
                // append into a recent object, usually in order
                let i = self.rng.gen_range(0..self.objects.len());
                let (base, len) = self.objects[i];
                let off = self.rng.gen_range(0..len);
                let n = self.rng.gen_range(1..=self.ppb).min(len - off);
                self.write(base + off, n)
            }
            60..=74 => {
                let blocks = self.rng.gen_range(1..=3);
                let len = if self.rng.gen_bool(0.8) { blocks * self.ppb } else { self.rng.gen_range(1..blocks * self.ppb) };
                let base = self.rng.gen_range(0..self.capacity.saturating_sub(len).max(1));
                let mut chunks = vec![Chunk::new(base, len)];
                if self.rng.gen_bool(0.1) {
                    // second chunk; may touch or overlap the first
                    let (l2, n2) = self.range(self.ppb);
                    chunks.push(Chunk::new(l2, n2));
                }
                self.objects.push((base, len));
                if self.objects.len() > 8 {
                    self.objects.remove(0);
                }
                Command::FlashAlloc { chunks }
            }
            75..=89 if !self.objects.is_empty() => {
                let i = self.rng.gen_range(0..self.objects.len());
                let (lba, len) = self.objects.swap_remove(i);
                Command::Trim { lba, len }
            }
            90..=97 => {
                let (lba, len) = self.range(3 * self.ppb);
                Command::Trim { lba, len }
            }
            _ => match self.rng.gen_range(0..3) {
                0 => Command::Write { lba: self.capacity, len: 1, content_base: 0 },
                1 => Command::Trim { lba: self.capacity - 1, len: 2 },
                _ => Command::FlashAlloc { chunks: vec![] },
            },
        }
    }

    pub fn take(mut self, n: usize) -> Vec<Command> {
        (0..n).map(|_| self.next_command()).collect()
    }
}
