//! Drives host programs or recorded traces through the FTL and collects the
//! per-window series and the final report.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, ScenarioConfig};
use crate::ftl::{Ftl, FtlConfig, FtlError};
use crate::host::{Command, CommandSink, HostError, HostModel, InterleaveConfig, IssuedCommand, TenantId};
use crate::media::Geometry;
use crate::metrics::{self, Counters, MetricSample, UtilizationSnapshot, WindowRecorder};
use crate::refcheck::{self, digest_ftl, Divergence, Perturbation, StateDigest};
use crate::trace::{Trace, TraceHeader, TraceWriter};
use crate::workloads::Mode;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("command {seq} failed: {source}")]
    Device { seq: u64, source: FtlError },
    #[error("invariant violated after command {seq}: {msg}")]
    Audit { seq: u64, msg: String },
    #[error(transparent)]
    Host(#[from] HostError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl SimError {
    /// Sequence number of the command that failed, if a command did.
    pub fn seq(&self) -> Option<u64> {
        match self {
            SimError::Device { seq, .. } | SimError::Audit { seq, .. } => Some(*seq),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Run the full FTL audit after every command. Slow; meant for tests.
    pub audit: bool,
    /// Logical volume at which to snapshot block utilization. Defaults to
    /// three quarters of the run's host write volume.
    pub snapshot_at: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TenantReport {
    pub tenant_id: TenantId,
    pub logical_pages: u64,
    /// Device time spent on the tenant's commands, including the garbage
    /// collection they triggered.
    pub busy_us: u64,
    pub throughput_proxy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub mode: Mode,
    pub seed: u64,
    pub commands: u64,
    /// Cumulative WAF at the end of the run.
    pub end_waf: f64,
    /// WAF over the last quarter of the windows.
    pub steady_waf: f64,
    /// WAF over the first quarter of the windows.
    pub early_waf: f64,
    pub counters: Counters,
    pub throughput_proxy: f64,
    pub window_pages: u64,
    pub windows: u64,
    pub csv_path: Option<PathBuf>,
    pub tenants: Vec<TenantReport>,
    pub snapshot: Option<UtilizationSnapshot>,
    pub state_digest: String,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub report: RunReport,
    pub samples: Vec<MetricSample>,
    pub ftl: Ftl,
}

impl RunOutcome {
    pub fn end_waf(&self) -> f64 {
        self.report.end_waf
    }

    pub fn steady_waf(&self) -> f64 {
        self.report.steady_waf
    }

    pub fn tenant(&self, id: TenantId) -> Option<&TenantReport> {
        self.report.tenants.iter().find(|t| t.tenant_id == id)
    }

    /// The windows.csv bytes.
    pub fn csv(&self) -> Vec<u8> {
        let mut out = Vec::new();
        metrics::write_csv(&mut out, &self.samples).expect("writing to memory");
        out
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct TenantProgress {
    pages: u64,
    busy: u64,
}

/// Applies issued commands to an [`Ftl`], feeding the window recorder and an
/// optional trace writer.
pub struct Simulator<W: Write = io::Sink> {
    ftl: Ftl,
    recorder: WindowRecorder,
    trace: Option<TraceWriter<W>>,
    audit: bool,
    tenants: BTreeMap<TenantId, TenantProgress>,
    commands: u64,
}

impl<W: Write> Simulator<W> {
    pub fn new(ftl: Ftl, recorder: WindowRecorder, trace: Option<TraceWriter<W>>, audit: bool) -> Self {
        Simulator { ftl, recorder, trace, audit, tenants: BTreeMap::new(), commands: 0 }
    }

    pub fn ftl(&self) -> &Ftl {
        &self.ftl
    }

    fn finish(self, scenario: String, mode: Mode, seed: u64) -> Result<RunOutcome, SimError> {
        if let Some(t) = self.trace {
            t.finish()?;
        }
        let window_pages = self.recorder.window_pages();
        let (samples, snapshot) = self.recorder.finish(&self.ftl);
        let c = *self.ftl.counters();
        let tenants = self
            .tenants
            .iter()
            .map(|(&tenant_id, p)| TenantReport {
                tenant_id,
                logical_pages: p.pages,
                busy_us: p.busy,
                throughput_proxy: if p.busy == 0 { 0.0 } else { p.pages as f64 * 1e6 / p.busy as f64 },
            })
            .collect();
        let report = RunReport {
            scenario,
            mode,
            seed,
            commands: self.commands,
            end_waf: c.waf().unwrap_or(0.0),
            steady_waf: metrics::tail_waf(&samples, 0.25).unwrap_or(0.0),
            early_waf: metrics::head_waf(&samples, 0.25).unwrap_or(0.0),
            counters: c,
            throughput_proxy: metrics::throughput_proxy(&c).unwrap_or(0.0),
            window_pages,
            windows: samples.len() as u64,
            csv_path: None,
            tenants,
            snapshot,
            state_digest: digest_ftl(&self.ftl).to_string(),
        };
        Ok(RunOutcome { report, samples, ftl: self.ftl })
    }
}

impl<W: Write> CommandSink for Simulator<W> {
    type Error = SimError;

    fn issue(&mut self, cmd: &IssuedCommand) -> Result<(), SimError> {
        if let Some(t) = &mut self.trace {
            t.record(cmd)?;
        }
        let before = *self.ftl.counters();
        refcheck::apply_to_ftl(&mut self.ftl, &cmd.command)
            .map_err(|source| SimError::Device { seq: cmd.seq, source })?;
        self.commands += 1;
        let c = self.ftl.counters();
        let t = self.tenants.entry(cmd.tenant_id).or_default();
        t.pages += c.logical_pages_written - before.logical_pages_written;
        t.busy += c.sim_time_us - before.sim_time_us;
        self.recorder.observe(&self.ftl);
        if self.audit {
            self.ftl
                .audit()
                .map_err(|msg| SimError::Audit { seq: cmd.seq, msg })?;
        }
        Ok(())
    }
}

fn recorder(window_pages: u64, snapshot_at: u64) -> WindowRecorder {
    WindowRecorder::new(window_pages).with_snapshot_at(snapshot_at.max(1))
}

fn host_for(cfg: &ScenarioConfig) -> Result<HostModel, HostError> {
    HostModel::new(InterleaveConfig { seed: cfg.interleave.seed ^ cfg.seed, ..cfg.interleave })
}

fn run_with<W: Write>(cfg: &ScenarioConfig, opts: &RunOptions, trace: Option<W>) -> Result<RunOutcome, SimError> {
    cfg.validate()?;
    let program = cfg.build_program()?;
    let ftl_cfg = cfg.ftl_config();
    let ftl = Ftl::new(cfg.geometry, ftl_cfg).map_err(ConfigError::from)?;
    let header = TraceHeader { geometry: cfg.geometry, ftl: ftl_cfg, window_pages: cfg.window_pages() };
    let writer = trace.map(|w| TraceWriter::new(w, &header)).transpose()?;
    let snapshot_at = opts.snapshot_at.unwrap_or(program.write_pages() * 3 / 4);
    let mut sim = Simulator::new(ftl, recorder(cfg.window_pages(), snapshot_at), writer, opts.audit);
    let mut host = host_for(cfg)?;
    program.load_into(&mut host)?;
    host.drain(&mut sim)?;
    sim.finish(cfg.name(), cfg.mode, cfg.seed)
}

/// Generates the scenario's program and runs it.
pub fn run(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<RunOutcome, SimError> {
    run_with::<io::Sink>(cfg, opts, None)
}

/// Like [`run`], also writing every issued command to `trace`.
pub fn record<W: Write>(cfg: &ScenarioConfig, opts: &RunOptions, trace: W) -> Result<RunOutcome, SimError> {
    run_with(cfg, opts, Some(trace))
}

/// Commands of `trace` as replayed under `mode`: vanilla drops FlashAlloc records.
pub fn replay_commands(trace: &Trace, mode: Option<Mode>) -> impl Iterator<Item = &IssuedCommand> {
    trace
        .records
        .iter()
        .filter(move |r| !(mode == Some(Mode::Vanilla) && matches!(r.command, Command::FlashAlloc { .. })))
}

/// Re-executes a recorded trace. With `Some(Mode::Vanilla)` FlashAlloc
/// records are skipped, so the same writes and trims run without per-object
/// placement.
pub fn replay(trace: &Trace, mode: Option<Mode>, opts: &RunOptions) -> Result<RunOutcome, SimError> {
    let h = &trace.header;
    let ftl = Ftl::new(h.geometry, h.ftl).map_err(ConfigError::from)?;
    let volume: u64 = trace
        .records
        .iter()
        .map(|r| match r.command {
            Command::Write { len, .. } => len,
            _ => 0,
        })
        .sum();
    let snapshot_at = opts.snapshot_at.unwrap_or(volume * 3 / 4);
    let mut sim: Simulator = Simulator::new(ftl, recorder(h.window_pages, snapshot_at), None, opts.audit);
    for r in replay_commands(trace, mode) {
        sim.issue(r)?;
    }
    let has_fa = replay_commands(trace, mode).any(|r| matches!(r.command, Command::FlashAlloc { .. }));
    sim.finish("replay".into(), if has_fa { Mode::Flashalloc } else { Mode::Vanilla }, 0)
}

/// Replays the trace through both the engine and the reference model and
/// compares error positions and the final state digest.
pub fn check(trace: &Trace, mode: Option<Mode>) -> Result<StateDigest, Divergence> {
    let cmds: Vec<Command> = replay_commands(trace, mode).map(|r| r.command.clone()).collect();
    check_commands(trace.header.geometry, &trace.header.ftl, &cmds)
}

pub fn check_commands(g: Geometry, cfg: &FtlConfig, cmds: &[Command]) -> Result<StateDigest, Divergence> {
    refcheck::replay_both(g, cfg, cmds, Perturbation::None, false)
}

pub const REPORT_FILE: &str = "report.json";
pub const CSV_FILE: &str = "windows.csv";

/// Writes `windows.csv` and `report.json` into `dir`.
pub fn write_outputs(outcome: &mut RunOutcome, dir: &Path) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    let csv = dir.join(CSV_FILE);
    let mut out = BufWriter::new(fs::File::create(&csv)?);
    metrics::write_csv(&mut out, &outcome.samples)?;
    out.flush()?;
    outcome.report.csv_path = Some(csv);
    let json = serde_json::to_string_pretty(&outcome.report).map_err(io::Error::other)?;
    fs::write(dir.join(REPORT_FILE), json + "\n")
}
