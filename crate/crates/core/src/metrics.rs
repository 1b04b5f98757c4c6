//! Counters, windowed WAF series and block-utilization statistics.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flashalloc::RegionReport;
use crate::ftl::Ftl;
use crate::media::{BlockKind, FlashMedia};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("window has no logical writes")]
    EmptyWindow,
    #[error("window has no simulated time; cost model is all zeros")]
    DivByZeroGuard,
    #[error("histogram needs at least 2 bins, got {0}")]
    TooFewBins(usize),
}

/// Device-lifetime event counters. `physical_programs` always equals
/// `logical_pages_written + copyback_programs`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub logical_pages_written: u64,
    pub physical_programs: u64,
    pub copyback_programs: u64,
    pub erases: u64,
    pub trim_page_invalidations: u64,
    pub trim_block_erases: u64,
    /// Simulated device busy time under the cost model.
    pub sim_time_us: u64,
}

impl Counters {
    /// Physical programs per logical page written, `None` before any write.
    pub fn waf(&self) -> Option<f64> {
        (self.logical_pages_written > 0)
            .then(|| self.physical_programs as f64 / self.logical_pages_written as f64)
    }

    /// Counter growth since `earlier`.
    pub fn since(&self, earlier: &Counters) -> Counters {
        Counters {
            logical_pages_written: self.logical_pages_written - earlier.logical_pages_written,
            physical_programs: self.physical_programs - earlier.physical_programs,
            copyback_programs: self.copyback_programs - earlier.copyback_programs,
            erases: self.erases - earlier.erases,
            trim_page_invalidations: self.trim_page_invalidations - earlier.trim_page_invalidations,
            trim_block_erases: self.trim_block_erases - earlier.trim_block_erases,
            sim_time_us: self.sim_time_us - earlier.sim_time_us,
        }
    }
}

/// Per-operation latencies feeding the throughput proxy. Typical MLC
/// magnitudes; they only scale the proxy and never affect placement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostModel {
    pub read_us: u64,
    pub program_us: u64,
    pub erase_us: u64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            read_us: 50,
            program_us: 600,
            erase_us: 3000,
        }
    }
}

pub fn running_waf(window: &Counters) -> Result<f64, MetricsError> {
    window.waf().ok_or(MetricsError::EmptyWindow)
}

/// Logical pages per simulated second over the window.
pub fn throughput_proxy(window: &Counters) -> Result<f64, MetricsError> {
    if window.sim_time_us == 0 {
        return Err(MetricsError::DivByZeroGuard);
    }
    Ok(window.logical_pages_written as f64 * 1e6 / window.sim_time_us as f64)
}

fn utilizations(media: &FlashMedia) -> impl Iterator<Item = f64> + '_ {
    let ppb = media.geometry().pages_per_block as f64;
    media
        .blocks()
        .iter()
        .filter(|b| b.kind() != BlockKind::Free)
        .map(move |b| b.valid_count() as f64 / ppb)
}

/// Counts of non-free blocks by valid-page ratio; bin `i` covers
/// `[i/bins, (i+1)/bins)` and the last bin also takes ratio 1.0.
pub fn utilization_histogram(media: &FlashMedia, bins: usize) -> Result<Vec<u64>, MetricsError> {
    histogram(utilizations(media), bins)
}

pub fn histogram(values: impl IntoIterator<Item = f64>, bins: usize) -> Result<Vec<u64>, MetricsError> {
    if bins < 2 {
        return Err(MetricsError::TooFewBins(bins));
    }
    let mut h = vec![0u64; bins];
    for u in values {
        let i = ((u * bins as f64).floor() as usize).min(bins - 1);
        h[i] += 1;
    }
    Ok(h)
}

/// Share of values strictly inside (0.2, 0.8); 0 for an empty set.
pub fn mid_mass(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut mid, mut n) = (0u64, 0u64);
    for u in values {
        n += 1;
        if u > 0.2 && u < 0.8 {
            mid += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        mid as f64 / n as f64
    }
}

/// Fraction of non-free blocks whose utilization is neither low nor high.
pub fn bimodality_mid_mass(media: &FlashMedia) -> f64 {
    mid_mass(utilizations(media))
}

/// WAF over the last `fraction` of the windows (at least one), the
/// steady-state value at the end of a run.
pub fn tail_waf(samples: &[MetricSample], fraction: f64) -> Option<f64> {
    let tail = tail(samples, fraction);
    let logical: u64 = tail.iter().map(|s| s.logical_pages).sum();
    let physical: u64 = tail.iter().map(|s| s.physical_pages).sum();
    (logical > 0).then(|| physical as f64 / logical as f64)
}

/// WAF over the first `fraction` of the windows.
pub fn head_waf(samples: &[MetricSample], fraction: f64) -> Option<f64> {
    let n = ((samples.len() as f64 * fraction).round() as usize).clamp(1, samples.len().max(1));
    let head = &samples[..n.min(samples.len())];
    let logical: u64 = head.iter().map(|s| s.logical_pages).sum();
    let physical: u64 = head.iter().map(|s| s.physical_pages).sum();
    (logical > 0).then(|| physical as f64 / logical as f64)
}

/// Throughput proxy over the last `fraction` of the windows: their logical
/// pages divided by their combined device time.
pub fn tail_throughput(samples: &[MetricSample], fraction: f64) -> Option<f64> {
    let tail = tail(samples, fraction);
    let logical: f64 = tail.iter().map(|s| s.logical_pages as f64).sum();
    let secs: f64 = tail
        .iter()
        .filter(|s| s.throughput_proxy > 0.0)
        .map(|s| s.logical_pages as f64 / s.throughput_proxy)
        .sum();
    (secs > 0.0).then(|| logical / secs)
}

fn tail(samples: &[MetricSample], fraction: f64) -> &[MetricSample] {
    let n = ((samples.len() as f64 * fraction).round() as usize).clamp(1, samples.len().max(1));
    &samples[samples.len().saturating_sub(n)..]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSample {
    pub window: u64,
    pub logical_pages: u64,
    pub physical_pages: u64,
    pub copybacks: u64,
    pub running_waf: f64,
    pub cumulative_waf: f64,
    pub throughput_proxy: f64,
    pub fa_blocks: u32,
    pub normal_blocks: u32,
    pub free_blocks: u32,
    pub mid_mass: f64,
}

pub const CSV_HEADER: &str = "window,logical_pages,physical_pages,copybacks,running_waf,cumulative_waf,throughput_proxy,fa_blocks,normal_blocks,free_blocks,mid_mass";

impl MetricSample {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:.6},{:.6},{:.3},{},{},{},{:.6}",
            self.window,
            self.logical_pages,
            self.physical_pages,
            self.copybacks,
            self.running_waf,
            self.cumulative_waf,
            self.throughput_proxy,
            self.fa_blocks,
            self.normal_blocks,
            self.free_blocks,
            self.mid_mass
        )
    }
}

pub fn write_csv<W: Write>(mut out: W, samples: &[MetricSample]) -> io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for s in samples {
        writeln!(out, "{}", s.csv_row())?;
    }
    Ok(())
}

/// Block-utilization snapshot taken at a chosen point of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilizationSnapshot {
    pub logical_pages: u64,
    pub histogram: Vec<u64>,
    pub mid_mass: f64,
    pub regions: RegionReport,
}

/// Cuts the run into windows of a fixed logical-write volume.
#[derive(Debug, Clone)]
pub struct WindowRecorder {
    window_pages: u64,
    start: Counters,
    samples: Vec<MetricSample>,
    snapshot_at: Option<u64>,
    snapshot: Option<UtilizationSnapshot>,
}

pub const SNAPSHOT_BINS: usize = 10;

impl WindowRecorder {
    pub fn new(window_pages: u64) -> Self {
        assert!(window_pages > 0, "window must cover at least one page");
        WindowRecorder {
            window_pages,
            start: Counters::default(),
            samples: Vec::new(),
            snapshot_at: None,
            snapshot: None,
        }
    }

    /// Also capture a utilization snapshot once this many logical pages were written.
    pub fn with_snapshot_at(mut self, logical_pages: u64) -> Self {
        self.snapshot_at = Some(logical_pages);
        self
    }

    pub fn window_pages(&self) -> u64 {
        self.window_pages
    }

    /// Call after every device command.
    pub fn observe(&mut self, ftl: &Ftl) {
        let now = *ftl.counters();
        if let Some(at) = self.snapshot_at {
            if self.snapshot.is_none() && now.logical_pages_written >= at {
                self.snapshot = Some(Self::snapshot(ftl));
            }
        }
        if now.logical_pages_written - self.start.logical_pages_written >= self.window_pages {
            self.close(ftl);
        }
    }

    fn snapshot(ftl: &Ftl) -> UtilizationSnapshot {
        UtilizationSnapshot {
            logical_pages: ftl.counters().logical_pages_written,
            histogram: utilization_histogram(ftl.media(), SNAPSHOT_BINS).expect("bins >= 2"),
            mid_mass: bimodality_mid_mass(ftl.media()),
            regions: ftl.gc_region_report(),
        }
    }

    fn close(&mut self, ftl: &Ftl) {
        let now = *ftl.counters();
        let delta = now.since(&self.start);
        let regions = ftl.gc_region_report();
        self.samples.push(MetricSample {
            window: self.samples.len() as u64,
            logical_pages: delta.logical_pages_written,
            physical_pages: delta.physical_programs,
            copybacks: delta.copyback_programs,
            running_waf: running_waf(&delta).unwrap_or(0.0),
            cumulative_waf: now.waf().unwrap_or(0.0),
            throughput_proxy: throughput_proxy(&delta).unwrap_or(0.0),
            fa_blocks: regions.fa_blocks,
            normal_blocks: regions.normal_blocks,
            free_blocks: regions.free_blocks,
            mid_mass: bimodality_mid_mass(ftl.media()),
        });
        self.start = now;
    }

    /// Closes the trailing partial window, if it saw any logical write.
    pub fn finish(mut self, ftl: &Ftl) -> (Vec<MetricSample>, Option<UtilizationSnapshot>) {
        if ftl.counters().logical_pages_written > self.start.logical_pages_written {
            self.close(ftl);
        }
        (self.samples, self.snapshot)
    }
}
