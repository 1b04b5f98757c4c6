//! Deterministic SSD simulator for comparing stream-writes-by-time placement
//! against per-object FlashAlloc write streaming.

pub mod config;
pub mod flashalloc;
pub mod ftl;
pub mod host;
pub mod media;
pub mod metrics;
pub mod refcheck;
pub mod sim;
pub mod trace;
pub mod workloads;

pub use flashalloc::{Chunk, InstanceId};
pub use ftl::{Ftl, FtlConfig, FtlError, Striping};
pub use media::{Geometry, Lba};
pub use metrics::{Counters, CostModel, MetricSample};
pub use config::ScenarioConfig;
pub use sim::{RunOptions, RunOutcome, RunReport};
pub use workloads::Mode;
