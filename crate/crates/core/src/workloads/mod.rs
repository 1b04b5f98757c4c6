//! Seeded generators for the four multiplexing scenarios.
//!
//! A generator turns a config and a seed into a [`Program`]: per-stream op
//! lists that the [`HostModel`](crate::host::HostModel) later interleaves.
//! Generators are pure, so the same inputs always give the same
//! [`Program::digest`]. In [`Mode::Vanilla`] they never emit FlashAlloc ops;
//! in [`Mode::Flashalloc`] each object's range is allocated right before it
//! is first written.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::host::{HostError, HostModel, HostOp, StreamId, TenantId};
use crate::media::Lba;

pub mod fio;
pub mod journal;
pub mod logfs;
pub mod lsm;
pub mod tenants;

pub use fio::{gen_fio, FioConfig};
pub use journal::{gen_journal, JournalConfig};
pub use logfs::{gen_logfs, LogFsConfig};
pub use lsm::{gen_lsm, LsmConfig};
pub use tenants::compose_tenants;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Vanilla,
    Flashalloc,
}

impl Mode {
    pub fn is_fa(self) -> bool {
        self == Mode::Flashalloc
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Vanilla => "vanilla",
            Mode::Flashalloc => "flashalloc",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "vanilla" => Ok(Mode::Vanilla),
            "flashalloc" | "fa" => Ok(Mode::Flashalloc),
            other => Err(format!("unknown mode {other:?} (expected vanilla or flashalloc)")),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WorkloadError {
    #[error("invalid workload config: {0}")]
    ConfigInvalid(String),
    #[error("tenant regions overlap: {0} and {1}")]
    RegionOverlap(TenantId, TenantId),
}

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T, WorkloadError> {
    Err(WorkloadError::ConfigInvalid(msg.into()))
}

/// A contiguous logical range owned by one workload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub base: Lba,
    pub pages: u64,
}

impl Region {
    pub fn new(base: Lba, pages: u64) -> Self {
        Region { base, pages }
    }

    pub fn end(&self) -> Lba {
        self.base + self.pages
    }

    pub fn overlaps(&self, other: &Region) -> bool {
        self.base < other.end() && other.base < self.end()
    }
}

/// Where a generator writes and how.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Target {
    pub region: Region,
    pub pages_per_block: u64,
    pub mode: Mode,
    pub tenant_id: TenantId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamProgram {
    pub stream_id: StreamId,
    pub tenant_id: TenantId,
    pub ops: Vec<HostOp>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TenantRegion {
    pub tenant_id: TenantId,
    pub region: Region,
}

/// Host-side op lists of one or more tenants, ready for the host model.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Program {
    pub tenants: Vec<TenantRegion>,
    pub streams: Vec<StreamProgram>,
}

impl Program {
    pub(crate) fn with_streams(target: &Target, n: u32) -> Self {
        Program {
            tenants: vec![TenantRegion { tenant_id: target.tenant_id, region: target.region }],
            streams: (0..n)
                .map(|stream_id| StreamProgram { stream_id, tenant_id: target.tenant_id, ops: Vec::new() })
                .collect(),
        }
    }

    pub(crate) fn push(&mut self, stream: usize, op: HostOp) {
        self.streams[stream].ops.push(op);
    }

    /// Appends a barrier to every stream.
    pub(crate) fn barrier(&mut self) {
        for s in &mut self.streams {
            s.ops.push(HostOp::Barrier);
        }
    }

    pub fn is_empty(&self) -> bool {
        self.streams.iter().all(|s| s.ops.iter().all(|op| matches!(op, HostOp::Barrier)))
    }

    /// Total host write volume in pages.
    pub fn write_pages(&self) -> u64 {
        self.ops()
            .map(|op| match op {
                HostOp::Write { len, .. } => *len,
                _ => 0,
            })
            .sum()
    }

    pub fn write_pages_of(&self, tenant: TenantId) -> u64 {
        self.streams
            .iter()
            .filter(|s| s.tenant_id == tenant)
            .flat_map(|s| &s.ops)
            .map(|op| match op {
                HostOp::Write { len, .. } => *len,
                _ => 0,
            })
            .sum()
    }

    pub fn ops(&self) -> impl Iterator<Item = &HostOp> {
        self.streams.iter().flat_map(|s| &s.ops)
    }

    /// Stable hash of every stream's op list.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for s in &self.streams {
            h.update(format!("stream {} tenant {}\n", s.stream_id, s.tenant_id));
            for op in &s.ops {
                h.update(format!("{op:?}\n"));
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn load_into(&self, host: &mut HostModel) -> Result<(), HostError> {
        for s in &self.streams {
            host.add_stream(s.stream_id, s.tenant_id)?;
        }
        for s in &self.streams {
            for op in &s.ops {
                host.submit(s.stream_id, op.clone())?;
            }
        }
        Ok(())
    }
}
