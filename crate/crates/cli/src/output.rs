//! Plot-ready CSV files and TOML summaries.

use std::fs;
use std::io;
use std::path::Path;

use chaos_bandit::config::ExperimentConfig;
use chaos_bandit::environment::ChannelId;
use chaos_bandit::harness::{RunResult, BUILD_ID};
use chaos_bandit::signal::CalibrationStats;
use serde::Serialize;

pub const CSR_CURVE: &str = "csr_curve.csv";
pub const SELECTION_LOG: &str = "selection_log.csv";
pub const CHANNEL_CURVE: &str = "channel_curve.csv";
pub const ACF: &str = "acf.csv";
pub const SUMMARY: &str = "summary.toml";

fn csv_writer(path: &Path) -> csv::Result<csv::Writer<fs::File>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
}

fn write_rows<I, R>(path: &Path, header: &[&str], rows: I) -> csv::Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut w = csv_writer(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csr_curve(path: &Path, result: &RunResult) -> csv::Result<()> {
    write_rows(
        path,
        &["cycle", "mean_csr"],
        result
            .per_cycle_csr
            .iter()
            .enumerate()
            .map(|(t, csr)| [t.to_string(), csr.to_string()]),
    )
}

pub fn write_selection_log(path: &Path, result: &RunResult) -> csv::Result<()> {
    write_rows(
        path,
        &["cycle", "channel", "throughput_mbps", "reward"],
        result.selection_log.iter().map(|r| {
            [
                r.cycle.to_string(),
                r.channel.to_string(),
                r.throughput_mbps.to_string(),
                u8::from(r.reward).to_string(),
            ]
        }),
    )
}

/// Best-channel selection rate and mean throughput per cycle, across repetitions.
pub fn write_channel_curve(path: &Path, result: &RunResult) -> csv::Result<()> {
    write_rows(
        path,
        &["cycle", "best_channel_rate", "mean_throughput_mbps"],
        result
            .per_cycle_csr
            .iter()
            .zip(&result.per_cycle_mean_mbps)
            .enumerate()
            .map(|(t, (rate, mbps))| [t.to_string(), rate.to_string(), mbps.to_string()]),
    )
}

pub fn write_acf(path: &Path, acf: &[f64]) -> csv::Result<()> {
    write_rows(
        path,
        &["lag", "autocorrelation"],
        acf.iter()
            .enumerate()
            .map(|(i, r)| [(i + 1).to_string(), r.to_string()]),
    )
}

#[derive(Debug, Serialize)]
pub struct BanditSummary<'a> {
    pub average_csr: f64,
    pub repetitions: usize,
    pub master_seed: u64,
    pub build: &'a str,
    pub calibration: &'a CalibrationStats,
    pub config: &'a ExperimentConfig,
}

impl<'a> BanditSummary<'a> {
    pub fn new(result: &'a RunResult) -> Self {
        Self {
            average_csr: result.average_csr,
            repetitions: result.metadata.repetitions,
            master_seed: result.metadata.master_seed,
            build: BUILD_ID,
            calibration: &result.metadata.calibration,
            config: &result.metadata.config,
        }
    }
}

/// Statistics over the settled second half of one congestion block.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockSummary {
    pub block: usize,
    pub best_channel: ChannelId,
    pub first_cycle: u64,
    pub last_cycle: u64,
    pub best_channel_rate: f64,
    pub mean_throughput_mbps: f64,
}

#[derive(Debug, Serialize)]
pub struct ChannelSummary<'a> {
    pub best_channel_rate: f64,
    pub mean_throughput_mbps: f64,
    pub repetitions: usize,
    pub master_seed: u64,
    pub build: &'a str,
    pub calibration: &'a CalibrationStats,
    pub blocks: Vec<BlockSummary>,
    pub config: &'a ExperimentConfig,
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Per-block statistics over cycles `[start + L/2, start + L)` of every full block.
pub fn settled_blocks(result: &RunResult) -> Vec<BlockSummary> {
    let model = &result.metadata.config.channel;
    let length = model.block_length as usize;
    let cycles = result.per_cycle_csr.len();
    (0..model.best_sequence.len())
        .filter(|b| (b + 1) * length <= cycles)
        .map(|b| {
            let start = b * length + length / 2;
            let end = (b + 1) * length;
            BlockSummary {
                block: b,
                best_channel: model.best_sequence[b],
                first_cycle: start as u64,
                last_cycle: end as u64 - 1,
                best_channel_rate: mean(&result.per_cycle_csr[start..end]),
                mean_throughput_mbps: mean(&result.per_cycle_mean_mbps[start..end]),
            }
        })
        .collect()
}

impl<'a> ChannelSummary<'a> {
    pub fn new(result: &'a RunResult) -> Self {
        Self {
            best_channel_rate: result.average_csr,
            mean_throughput_mbps: mean(&result.per_cycle_mean_mbps),
            repetitions: result.metadata.repetitions,
            master_seed: result.metadata.master_seed,
            build: BUILD_ID,
            calibration: &result.metadata.calibration,
            blocks: settled_blocks(result),
            config: &result.metadata.config,
        }
    }
}

pub fn write_summary<T: Serialize>(path: &Path, summary: &T) -> io::Result<()> {
    let text = toml::to_string(summary).map_err(io::Error::other)?;
    fs::write(path, text)
}
