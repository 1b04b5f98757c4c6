//! Scenario files.
//!
//! A scenario is a TOML document that fully determines a run:
//!
//! ```toml
//! schema_version = 1
//! name = "fio-8"
//! mode = "flashalloc"          # or "vanilla"
//! seed = 42
//! # window_pages = 920         # default: logical capacity / 64
//!
//! [geometry]                   # optional, defaults shown
//! total_blocks = 128
//! pages_per_block = 512
//! page_size = 4096
//! channels = 8
//! op_fraction = 0.1
//!
//! [ftl]                        # optional
//! reserve_threshold = 10       # default: 2 + channels
//! striping = "per-channel"
//!
//! [interleave]                 # optional
//! split_unit = 64
//! policy = "round_robin"
//!
//! [workload]
//! kind = "fio"                 # fio | lsm | logfs | journal | multi_tenant
//! writers = 8
//!
//! [output]
//! dir = "out/fio-8"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ftl::{FtlConfig, Striping};
use crate::host::InterleaveConfig;
use crate::media::{Geometry, GeometryError};
use crate::metrics::CostModel;
use crate::workloads::{
    compose_tenants, gen_fio, gen_journal, gen_logfs, gen_lsm, FioConfig, JournalConfig, LogFsConfig, LsmConfig,
    Mode, Program, Region, Target, WorkloadError,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed scenario: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unsupported schema_version {0} (expected {SCHEMA_VERSION})")]
    Schema(u32),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error("{0}")]
    Invalid(String),
}

/// FTL knobs; anything left out takes the geometry-dependent default.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FtlSection {
    pub reserve_threshold: Option<u32>,
    pub striping: Striping,
    pub read_us: Option<u64>,
    pub program_us: Option<u64>,
    pub erase_us: Option<u64>,
}

impl FtlSection {
    pub fn resolve(&self, g: &Geometry) -> FtlConfig {
        let mut cfg = FtlConfig::for_geometry(g);
        if let Some(r) = self.reserve_threshold {
            cfg.reserve_threshold = r;
        }
        cfg.striping = self.striping;
        let d = CostModel::default();
        cfg.cost = CostModel {
            read_us: self.read_us.unwrap_or(d.read_us),
            program_us: self.program_us.unwrap_or(d.program_us),
            erase_us: self.erase_us.unwrap_or(d.erase_us),
        };
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WorkloadSpec {
    Fio(FioConfig),
    Lsm(LsmConfig),
    Logfs(LogFsConfig),
    Journal(JournalConfig),
    MultiTenant(MultiTenantConfig),
}

impl WorkloadSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            WorkloadSpec::Fio(_) => "fio",
            WorkloadSpec::Lsm(_) => "lsm",
            WorkloadSpec::Logfs(_) => "logfs",
            WorkloadSpec::Journal(_) => "journal",
            WorkloadSpec::MultiTenant(_) => "multi_tenant",
        }
    }
}

/// One tenant of a shared device. Tenants get consecutive, block-aligned
/// slices of the logical space in proportion to `share`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TenantSpec {
    pub share: f64,
    pub workload: SingleWorkload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SingleWorkload {
    Fio(FioConfig),
    Lsm(LsmConfig),
    Logfs(LogFsConfig),
    Journal(JournalConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultiTenantConfig {
    pub tenants: Vec<TenantSpec>,
}

impl Default for MultiTenantConfig {
    fn default() -> Self {
        MultiTenantConfig {
            tenants: vec![
                TenantSpec {
                    share: 0.5,
                    workload: SingleWorkload::Lsm(LsmConfig { sstable_pages: 1024, ..LsmConfig::default() }),
                },
                TenantSpec { share: 0.5, workload: SingleWorkload::Journal(JournalConfig::default()) },
            ],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub window_pages: Option<u64>,
    #[serde(default)]
    pub geometry: Geometry,
    #[serde(default)]
    pub ftl: FtlSection,
    #[serde(default)]
    pub interleave: InterleaveConfig,
    pub workload: WorkloadSpec,
    #[serde(default)]
    pub output: OutputSection,
}

impl ScenarioConfig {
    pub fn new(workload: WorkloadSpec) -> Self {
        ScenarioConfig {
            schema_version: SCHEMA_VERSION,
            name: None,
            mode: Mode::default(),
            seed: 0,
            window_pages: None,
            geometry: Geometry::default(),
            ftl: FtlSection::default(),
            interleave: InterleaveConfig::default(),
            workload,
            output: OutputSection::default(),
        }
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config always serializes")
    }

    pub fn name(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.workload.kind().to_string())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::Schema(self.schema_version));
        }
        self.geometry.validate()?;
        if self.interleave.split_unit == 0 {
            return Err(ConfigError::Invalid("interleave.split_unit must be at least 1".into()));
        }
        if self.window_pages == Some(0) {
            return Err(ConfigError::Invalid("window_pages must be at least 1".into()));
        }
        let ftl = self.ftl_config();
        if ftl.reserve_threshold as u64 + 1 >= self.geometry.total_blocks as u64 {
            return Err(ConfigError::Invalid("reserve_threshold leaves no room for data".into()));
        }
        Ok(())
    }

    pub fn ftl_config(&self) -> FtlConfig {
        self.ftl.resolve(&self.geometry)
    }

    pub fn window_pages(&self) -> u64 {
        self.window_pages
            .unwrap_or_else(|| (self.geometry.logical_capacity_pages() / 64).max(1))
    }

    /// Generates the host program for this scenario.
    pub fn build_program(&self) -> Result<Program, ConfigError> {
        let g = &self.geometry;
        let ppb = g.pages_per_block as u64;
        let whole = Region::new(0, g.logical_capacity_pages());
        let target = |region, tenant_id| Target { region, pages_per_block: ppb, mode: self.mode, tenant_id };
        let single = |w: &SingleWorkload, t: &Target, seed: u64| -> Result<Program, WorkloadError> {
            match w {
                SingleWorkload::Fio(c) => gen_fio(c, t, seed),
                SingleWorkload::Lsm(c) => gen_lsm(c, t, seed),
                SingleWorkload::Logfs(c) => gen_logfs(c, t, seed),
                SingleWorkload::Journal(c) => gen_journal(c, t, seed),
            }
        };
        let program = match &self.workload {
            WorkloadSpec::Fio(c) => gen_fio(c, &target(whole, 0), self.seed)?,
            WorkloadSpec::Lsm(c) => gen_lsm(c, &target(whole, 0), self.seed)?,
            WorkloadSpec::Logfs(c) => gen_logfs(c, &target(whole, 0), self.seed)?,
            WorkloadSpec::Journal(c) => gen_journal(c, &target(whole, 0), self.seed)?,
            WorkloadSpec::MultiTenant(m) => {
                let regions = tenant_regions(m, g)?;
                let mut progs = Vec::new();
                for (i, (spec, region)) in m.tenants.iter().zip(regions).enumerate() {
                    let seed = self.seed.wrapping_add(i as u64 * 0x9e37_79b9_7f4a_7c15);
                    progs.push(single(&spec.workload, &target(region, i as u32), seed)?);
                }
                compose_tenants(progs)?
            }
        };
        Ok(program)
    }
}

/// Block-aligned consecutive slices of the logical space, one per tenant.
pub fn tenant_regions(m: &MultiTenantConfig, g: &Geometry) -> Result<Vec<Region>, ConfigError> {
    if m.tenants.is_empty() {
        return Err(ConfigError::Invalid("multi_tenant needs at least one tenant".into()));
    }
    let total: f64 = m.tenants.iter().map(|t| t.share).sum();
    if m.tenants.iter().any(|t| t.share.is_nan() || t.share <= 0.0) || total > 1.0 + 1e-9 {
        return Err(ConfigError::Invalid("tenant shares must be positive and sum to at most 1".into()));
    }
    let ppb = g.pages_per_block as u64;
    let blocks = g.logical_blocks();
    let mut base = 0;
    let mut out = Vec::new();
    for t in &m.tenants {
        let pages = (t.share * blocks as f64 + 1e-9).floor() as u64 * ppb;
        out.push(Region::new(base, pages));
        base += pages;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_uses_defaults() {
        let cfg = ScenarioConfig::from_toml("schema_version = 1\n[workload]\nkind = \"fio\"\n").unwrap();
        assert_eq!(cfg.geometry, Geometry::default());
        assert_eq!(cfg.window_pages(), 920);
        assert_eq!(cfg.ftl_config().reserve_threshold, 10);
        assert_eq!(cfg.workload, WorkloadSpec::Fio(FioConfig::default()));
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = ScenarioConfig::new(WorkloadSpec::MultiTenant(MultiTenantConfig::default()))
            .with_mode(Mode::Flashalloc)
            .with_seed(7);
        let back = ScenarioConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_bad_files() {
        assert!(matches!(
            ScenarioConfig::from_toml("schema_version = 2\n[workload]\nkind = \"fio\"\n"),
            Err(ConfigError::Schema(2))
        ));
        assert!(matches!(
            ScenarioConfig::from_toml("schema_version = 1\n[workload]\nkind = \"fio\"\nthreads = 3\n"),
            Err(ConfigError::Parse(_))
        ));
        assert!(matches!(
            ScenarioConfig::from_toml("schema_version = 1\n[geometry]\ntotal_blocks = 0\n[workload]\nkind = \"fio\"\n"),
            Err(ConfigError::Parse(_) | ConfigError::Geometry(_))
        ));
    }

    #[test]
    fn tenant_regions_are_disjoint_and_aligned() {
        let g = Geometry::default();
        let r = tenant_regions(&MultiTenantConfig::default(), &g).unwrap();
        assert_eq!(r[0], Region::new(0, 57 * 512));
        assert_eq!(r[1], Region::new(57 * 512, 57 * 512));
        assert!(r[1].end() <= g.logical_capacity_pages());
    }
}
