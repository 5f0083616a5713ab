//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Each export is a thin wrapper over a plain function so the logic can be
//! tested natively.

use chaos_bandit::config::ExperimentConfig;
use chaos_bandit::decision::OmegaMode;
use chaos_bandit::harness::{self, Execution};
use chaos_bandit::signal::{Generator, SourceSpec};
use wasm_bindgen::prelude::*;

/// Browser runs are kept small enough to finish in well under a second.
pub const MAX_WORK: u64 = 20_000_000;

fn check_budget(repetitions: usize, cycles: u64) -> Result<(), String> {
    if (repetitions as u64).saturating_mul(cycles) > MAX_WORK {
        return Err(format!("repetitions x cycles must not exceed {MAX_WORK}"));
    }
    Ok(())
}

/// Per-cycle correct selection rate of the two-armed switching bandit.
pub fn bandit_curve(
    p0: f64,
    p1: f64,
    alpha: f64,
    flexible: bool,
    repetitions: usize,
    cycles: u64,
    seed: u64,
) -> Result<Vec<f64>, String> {
    check_budget(repetitions, cycles)?;
    let mut config = ExperimentConfig::bandit();
    config.bandit.probs = [p0, p1];
    config.alpha = alpha;
    config.omega.mode = if flexible { OmegaMode::Flexible } else { OmegaMode::Fixed };
    config.repetitions = repetitions;
    config.cycles = cycles;
    config.master_seed = seed;
    config.validate().map_err(|e| e.to_string())?;
    let run = harness::run_experiment(&config, Execution::sequential()).map_err(|e| e.to_string())?;
    Ok(run.per_cycle_csr)
}

/// Channel scenario: the first repetition's selections plus averages over all repetitions.
#[wasm_bindgen]
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRun {
    selected: Vec<u32>,
    throughput: Vec<f64>,
    best_rate: Vec<f64>,
    mean_throughput: Vec<f64>,
}

#[wasm_bindgen]
impl ChannelRun {
    /// Channel chosen at each cycle of the first repetition.
    pub fn selected(&self) -> Vec<u32> {
        self.selected.clone()
    }

    /// Throughput observed at each cycle of the first repetition.
    pub fn throughput(&self) -> Vec<f64> {
        self.throughput.clone()
    }

    /// Fraction of repetitions on the best channel, per cycle.
    #[wasm_bindgen(js_name = bestRate)]
    pub fn best_rate(&self) -> Vec<f64> {
        self.best_rate.clone()
    }

    #[wasm_bindgen(js_name = meanThroughput)]
    pub fn mean_throughput(&self) -> Vec<f64> {
        self.mean_throughput.clone()
    }
}

pub fn channel_run(alpha: f64, noise_std_mbps: f64, repetitions: usize, seed: u64) -> Result<ChannelRun, String> {
    let mut config = ExperimentConfig::channel();
    check_budget(repetitions, config.cycles)?;
    config.alpha = alpha;
    config.channel.noise_std_mbps = noise_std_mbps;
    config.repetitions = repetitions;
    config.master_seed = seed;
    config.validate().map_err(|e| e.to_string())?;
    let run = harness::run_experiment(&config, Execution::sequential()).map_err(|e| e.to_string())?;
    Ok(ChannelRun {
        selected: run.selection_log.iter().map(|r| r.channel).collect(),
        throughput: run.selection_log.iter().map(|r| r.throughput_mbps).collect(),
        best_rate: run.per_cycle_csr,
        mean_throughput: run.per_cycle_mean_mbps,
    })
}

/// Autocorrelation at lags `1..=max_lag` of a synthetic source.
///
/// `kind` is one of `ar1`, `logistic`, `tent`, `uniform`; `parameter` is
/// phi, r or the slope respectively and is ignored for `uniform`.
pub fn signal_acf(kind: &str, parameter: f64, n: usize, max_lag: usize, seed: u64) -> Result<Vec<f64>, String> {
    if n as u64 > MAX_WORK {
        return Err(format!("n must not exceed {MAX_WORK}"));
    }
    let generator = match kind {
        "ar1" => Generator::Ar1 { phi: parameter, noise_std: 1.0 },
        "logistic" => Generator::Logistic { r: parameter },
        "tent" => Generator::Tent { slope: parameter },
        "uniform" => Generator::Uniform {},
        other => return Err(format!("unknown generator `{other}`")),
    };
    let source = SourceSpec::new(generator).open(seed).map_err(|e| e.to_string())?;
    source.autocorrelation(n, max_lag).map_err(|e| e.to_string())
}

fn js(e: String) -> JsError {
    JsError::new(&e)
}

#[wasm_bindgen(js_name = simulateBandit)]
pub fn simulate_bandit(
    p0: f64,
    p1: f64,
    alpha: f64,
    flexible: bool,
    repetitions: u32,
    cycles: u32,
    seed: u32,
) -> Result<Vec<f64>, JsError> {
    bandit_curve(p0, p1, alpha, flexible, repetitions as usize, cycles.into(), seed.into()).map_err(js)
}

#[wasm_bindgen(js_name = simulateChannel)]
pub fn simulate_channel(alpha: f64, noise_std_mbps: f64, repetitions: u32, seed: u32) -> Result<ChannelRun, JsError> {
    channel_run(alpha, noise_std_mbps, repetitions as usize, seed.into()).map_err(js)
}

#[wasm_bindgen]
pub fn autocorrelation(kind: &str, parameter: f64, n: u32, max_lag: u32, seed: u32) -> Result<Vec<f64>, JsError> {
    signal_acf(kind, parameter, n as usize, max_lag as usize, seed.into()).map_err(js)
}
