//! Host-side serialization of concurrent writers into one device command stream.
//!
//! Each writer stream keeps its ops in program order. On every pick the
//! scheduler takes one stream by policy and issues a single `split_unit`-sized
//! piece of that stream's head write, so long sequential writes from different
//! streams reach the device interleaved, the way kernel request splitting and
//! IO scheduling interleave them on a real host.
//!
//! Tenants share the device fairly: each pick goes to the tenant that has
//! issued the fewest write pages so far, and the policy chooses among that
//! tenant's streams.
//!
//! `Barrier` ops synchronize the streams of one tenant: a stream at a barrier
//! waits until every other non-empty stream of its tenant is at a barrier too.
//! Workload generators use them to order object deletion after the writes of
//! the objects being deleted.

use std::collections::{BTreeMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flashalloc::Chunk;
use crate::media::{Lba, Token};

pub type StreamId = u32;
pub type TenantId = u32;

/// What a host writer asks for.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HostOp {
    Write { lba: Lba, len: u64 },
    Trim { lba: Lba, len: u64 },
    FlashAlloc { chunks: Vec<Chunk> },
    Barrier,
}

/// What the device receives.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Command {
    Write { lba: Lba, len: u64, content_base: Token },
    Trim { lba: Lba, len: u64 },
    FlashAlloc { chunks: Vec<Chunk> },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IssuedCommand {
    pub seq: u64,
    pub stream_id: StreamId,
    pub tenant_id: TenantId,
    pub command: Command,
}

pub trait CommandSink {
    type Error;
    fn issue(&mut self, cmd: &IssuedCommand) -> Result<(), Self::Error>;
}

impl CommandSink for Vec<IssuedCommand> {
    type Error = std::convert::Infallible;
    fn issue(&mut self, cmd: &IssuedCommand) -> Result<(), Self::Error> {
        self.push(cmd.clone());
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    #[default]
    RoundRobin,
    SeededRandom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterleaveConfig {
    /// Pages per issued write piece.
    pub split_unit: u64,
    #[serde(default)]
    pub policy: Policy,
    #[serde(default)]
    pub seed: u64,
}

impl Default for InterleaveConfig {
    fn default() -> Self {
        InterleaveConfig {
            split_unit: 64,
            policy: Policy::RoundRobin,
            seed: 0,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HostError {
    #[error("unknown stream {0}")]
    UnknownStream(StreamId),
    #[error("stream {0} already exists")]
    DuplicateStream(StreamId),
    #[error("split_unit must be at least 1")]
    ZeroSplitUnit,
}

#[derive(Debug, Clone)]
pub struct WriterStream {
    pub stream_id: StreamId,
    pub tenant_id: TenantId,
    queue: VecDeque<HostOp>,
}

impl WriterStream {
    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    fn at_barrier(&self) -> bool {
        matches!(self.queue.front(), Some(HostOp::Barrier))
    }

    fn runnable(&self) -> bool {
        !self.queue.is_empty() && !self.at_barrier()
    }
}

#[derive(Debug, Clone)]
pub struct HostModel {
    cfg: InterleaveConfig,
    streams: Vec<WriterStream>,
    rr_next: usize,
    rng: ChaCha8Rng,
    next_token: Token,
    next_seq: u64,
    /// Write pages issued per tenant, for tenant fairness.
    issued: BTreeMap<TenantId, u64>,
}

impl HostModel {
    pub fn new(cfg: InterleaveConfig) -> Result<Self, HostError> {
        if cfg.split_unit == 0 {
            return Err(HostError::ZeroSplitUnit);
        }
        Ok(HostModel {
            cfg,
            streams: Vec::new(),
            rr_next: 0,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            next_token: 1,
            next_seq: 1,
            issued: BTreeMap::new(),
        })
    }

    pub fn add_stream(&mut self, stream_id: StreamId, tenant_id: TenantId) -> Result<(), HostError> {
        match self.streams.binary_search_by_key(&stream_id, |s| s.stream_id) {
            Ok(_) => Err(HostError::DuplicateStream(stream_id)),
            Err(pos) => {
                self.streams.insert(
                    pos,
                    WriterStream {
                        stream_id,
                        tenant_id,
                        queue: VecDeque::new(),
                    },
                );
                Ok(())
            }
        }
    }

    pub fn submit(&mut self, stream_id: StreamId, op: HostOp) -> Result<(), HostError> {
        let pos = self
            .streams
            .binary_search_by_key(&stream_id, |s| s.stream_id)
            .map_err(|_| HostError::UnknownStream(stream_id))?;
        self.streams[pos].queue.push_back(op);
        Ok(())
    }

    pub fn streams(&self) -> &[WriterStream] {
        &self.streams
    }

    pub fn is_idle(&self) -> bool {
        self.streams.iter().all(|s| s.queue.is_empty())
    }

    /// Lifts barriers for every tenant whose non-empty streams all wait at one.
    fn release_barriers(&mut self) -> bool {
        let mut released = false;
        let tenants: Vec<TenantId> = {
            let mut t: Vec<TenantId> = self.streams.iter().map(|s| s.tenant_id).collect();
            t.sort_unstable();
            t.dedup();
            t
        };
        for t in tenants {
            let mut members = self
                .streams
                .iter()
                .filter(|s| s.tenant_id == t && !s.queue.is_empty());
            if members.clone().next().is_some() && members.all(|s| s.at_barrier()) {
                for s in self.streams.iter_mut().filter(|s| s.tenant_id == t) {
                    if s.at_barrier() {
                        s.queue.pop_front();
                    }
                }
                released = true;
            }
        }
        released
    }

    /// Chooses the tenant that has issued the fewest write pages so far,
    /// then one of its runnable streams by policy.
    fn pick(&mut self) -> Option<usize> {
        while self.release_barriers() {}
        let mut best: Option<(u64, TenantId)> = None;
        for s in self.streams.iter().filter(|s| s.runnable()) {
            let key = (self.issued.get(&s.tenant_id).copied().unwrap_or(0), s.tenant_id);
            if best.is_none_or(|b| key < b) {
                best = Some(key);
            }
        }
        let (_, tenant) = best?;
        let ok = |s: &WriterStream| s.tenant_id == tenant && s.runnable();
        Some(match self.cfg.policy {
            Policy::RoundRobin => {
                let n = self.streams.len();
                let i = (0..n)
                    .map(|k| (self.rr_next + k) % n)
                    .find(|i| ok(&self.streams[*i]))
                    .expect("tenant has a runnable stream");
                self.rr_next = (i + 1) % n;
                i
            }
            Policy::SeededRandom => {
                let runnable: Vec<usize> = (0..self.streams.len()).filter(|&i| ok(&self.streams[i])).collect();
                runnable[self.rng.gen_range(0..runnable.len())]
            }
        })
    }

    /// Takes the next device command off stream `i`, splitting its head write.
    fn next_command(&mut self, i: usize) -> Command {
        let split = self.cfg.split_unit;
        let stream = &mut self.streams[i];
        let head = stream.queue.front_mut().expect("picked stream is non-empty");
        match head {
            HostOp::Write { lba, len } => {
                let piece = (*len).min(split);
                let cmd = Command::Write {
                    lba: *lba,
                    len: piece,
                    content_base: self.next_token,
                };
                self.next_token += piece;
                *lba += piece;
                *len -= piece;
                if *len == 0 {
                    stream.queue.pop_front();
                }
                cmd
            }
            HostOp::Trim { lba, len } => {
                let cmd = Command::Trim { lba: *lba, len: *len };
                stream.queue.pop_front();
                cmd
            }
            HostOp::FlashAlloc { chunks } => {
                let cmd = Command::FlashAlloc {
                    chunks: std::mem::take(chunks),
                };
                stream.queue.pop_front();
                cmd
            }
            HostOp::Barrier => unreachable!("barrier heads are never picked"),
        }
    }

    /// Issues commands until every stream is empty; returns how many were issued.
    pub fn drain<S: CommandSink>(&mut self, sink: &mut S) -> Result<usize, S::Error> {
        let mut issued = 0;
        while let Some(i) = self.pick() {
            // zero-length writes are dropped without a device command
            if let Some(HostOp::Write { len: 0, .. }) = self.streams[i].queue.front() {
                self.streams[i].queue.pop_front();
                continue;
            }
            let command = self.next_command(i);
            let cmd = IssuedCommand {
                seq: self.next_seq,
                stream_id: self.streams[i].stream_id,
                tenant_id: self.streams[i].tenant_id,
                command,
            };
            self.next_seq += 1;
            if let Command::Write { len, .. } = cmd.command {
                *self.issued.entry(cmd.tenant_id).or_default() += len;
            }
            sink.issue(&cmd)?;
            issued += 1;
        }
        Ok(issued)
    }
}
