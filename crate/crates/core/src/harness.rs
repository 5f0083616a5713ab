//! Reproducible experiment runs.
//!
//! Each repetition owns its signal source, threshold tree, environment and
//! generator, all seeded from `derive_seed(master_seed, repetition)`. Results
//! are merged by repetition index with integer counts, so the output does not
//! depend on how many threads ran the repetitions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig, ExperimentKind};
use crate::decision::{DecisionError, OmegaMode, ThresholdTree};
use crate::environment::{ChannelEnv, ChannelId, EnvironmentError, RewardRule, SwitchingBernoulliEnv};
use crate::signal::{CalibrationStats, SignalError, SignalSource};

pub use crate::config::{BanditParams, FULL_SCALE_REPETITIONS};

/// Identifies the code that produced a result.
pub const BUILD_ID: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;
/// Seed stream used for calibration, kept apart from every repetition index.
const CALIBRATION_STREAM: u64 = u64::MAX;
const SOURCE_STREAM: u64 = 0;
const ENVIRONMENT_STREAM: u64 = 1;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Decision(#[from] DecisionError),
    #[error(transparent)]
    Environment(#[from] EnvironmentError),
    #[error("experiment kind is {actual:?}, expected {expected:?}")]
    WrongKind {
        expected: ExperimentKind,
        actual: ExperimentKind,
    },
    #[error("configurations must differ only in omega.mode")]
    Incomparable,
    #[error("failed to build thread pool: {0}")]
    ThreadPool(String),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

/// SplitMix64 finalizer; a bijection on `u64`.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of repetition `index` under `master_seed`.
///
/// Injective in each argument separately: for a fixed master the map is
/// `mix64(c + index * odd)`, and for a fixed index it is a composition of
/// bijections of the master.
pub fn derive_seed(master_seed: u64, index: u64) -> u64 {
    mix64(mix64(master_seed).wrapping_add(index.wrapping_mul(GOLDEN_GAMMA)))
}

/// How repetitions are scheduled. Never affects results.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Execution {
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl Execution {
    pub fn sequential() -> Self {
        Self { threads: Some(1) }
    }

    pub fn with_threads(threads: usize) -> Self {
        Self {
            threads: Some(threads),
        }
    }

    #[cfg(feature = "parallel")]
    fn map<T, F>(&self, count: usize, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(usize) -> Result<T> + Sync + Send,
    {
        use rayon::prelude::*;
        let run = || (0..count).into_par_iter().map(&f).collect::<Result<Vec<T>>>();
        match self.threads {
            Some(1) => (0..count).map(&f).collect(),
            Some(n) => rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| HarnessError::ThreadPool(e.to_string()))?
                .install(run),
            None => run(),
        }
    }

    #[cfg(not(feature = "parallel"))]
    fn map<T, F>(&self, count: usize, f: F) -> Result<Vec<T>>
    where
        F: Fn(usize) -> Result<T>,
    {
        (0..count).map(f).collect()
    }
}

/// One logged cycle of a channel-selection run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SelectionRecord {
    pub cycle: u64,
    pub arm: usize,
    pub channel: ChannelId,
    pub throughput_mbps: f64,
    pub reward: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetadata {
    pub build: String,
    pub master_seed: u64,
    pub repetitions: usize,
    pub calibration: CalibrationStats,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunResult {
    /// Fraction of repetitions whose cycle-`t` choice was the best one.
    pub per_cycle_csr: Vec<f64>,
    /// Mean of `per_cycle_csr`.
    pub average_csr: f64,
    /// Each repetition's own correct-selection rate over all cycles.
    pub per_repetition_csr: Vec<f64>,
    /// Channel runs: mean throughput at each cycle across repetitions.
    pub per_cycle_mean_mbps: Vec<f64>,
    /// Channel runs: the cycle-by-cycle log of repetition 0.
    pub selection_log: Vec<SelectionRecord>,
    pub metadata: RunMetadata,
}

struct Setup {
    levels: CalibrationStats,
    base: SignalSource,
}

impl Setup {
    fn new(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let base = config
            .source
            .open(derive_seed(config.master_seed, CALIBRATION_STREAM))?;
        let levels = base.calibrate_with(config.calibration_samples, &config.level_grid)?;
        Ok(Self { levels, base })
    }

    /// Source, tree and environment generator for one repetition.
    fn repetition(&self, config: &ExperimentConfig, index: usize) -> Result<(SignalSource, ThresholdTree, ChaCha8Rng)> {
        let seed = derive_seed(config.master_seed, index as u64);
        let source = if config.uses_trace() {
            self.base.fresh()
        } else {
            config.source.open(derive_seed(seed, SOURCE_STREAM))?
        };
        let tree = ThresholdTree::new(config.depth, config.alpha, self.levels)?;
        let rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, ENVIRONMENT_STREAM));
        Ok((source, tree, rng))
    }

    fn metadata(&self, config: &ExperimentConfig) -> RunMetadata {
        RunMetadata {
            build: BUILD_ID.to_string(),
            master_seed: config.master_seed,
            repetitions: config.repetitions,
            calibration: self.levels,
            config: config.clone(),
        }
    }
}

struct Repetition {
    correct: Vec<bool>,
    throughput: Vec<f64>,
    log: Vec<SelectionRecord>,
}

fn bandit_repetition(config: &ExperimentConfig, setup: &Setup, index: usize) -> Result<Repetition> {
    let (mut source, mut tree, mut rng) = setup.repetition(config, index)?;
    let mut estimates = config.estimator.build(tree.arms())?;
    let mut env = SwitchingBernoulliEnv::new(config.bandit.probs, config.bandit.swap_period)?;
    let flexible = config.omega.mode == OmegaMode::Flexible;
    let mut correct = Vec::with_capacity(config.cycles as usize);
    for t in 0..config.cycles {
        let decision = tree.decide(&mut source)?;
        correct.push(env.best_arm_at(t).is_none_or(|best| best == decision.arm()));
        let rewarded = env.pull(decision.arm(), &mut rng)?;
        tree.update(&decision, rewarded, &config.omega, &estimates)?;
        if flexible {
            estimates.update(decision.arm(), rewarded)?;
        }
    }
    Ok(Repetition {
        correct,
        throughput: Vec::new(),
        log: Vec::new(),
    })
}

fn channel_repetition(config: &ExperimentConfig, setup: &Setup, index: usize) -> Result<Repetition> {
    let (mut source, mut tree, mut rng) = setup.repetition(config, index)?;
    let mut estimates = config.estimator.build(tree.arms())?;
    let mut env = ChannelEnv::new(config.channel.clone())?;
    let mut rule = RewardRule::new(config.reward_averaging)?;
    let flexible = config.omega.mode == OmegaMode::Flexible;
    let cycles = config.cycles as usize;
    let mut correct = Vec::with_capacity(cycles);
    let mut throughput = Vec::with_capacity(cycles);
    let mut log = Vec::with_capacity(if index == 0 { cycles } else { 0 });
    for t in 0..config.cycles {
        let decision = tree.decide(&mut source)?;
        let channel = config.arm_to_channel[decision.arm()];
        correct.push(channel == config.channel.best_channel_at(t));
        let sample = env.step_channel(channel, &mut rng)?;
        let rewarded = rule.reward_from_throughput(&sample);
        tree.update(&decision, rewarded, &config.omega, &estimates)?;
        if flexible {
            estimates.update(decision.arm(), rewarded)?;
        }
        throughput.push(sample.mbps);
        if index == 0 {
            log.push(SelectionRecord {
                cycle: t,
                arm: decision.arm(),
                channel,
                throughput_mbps: sample.mbps,
                reward: rewarded,
            });
        }
    }
    Ok(Repetition {
        correct,
        throughput,
        log,
    })
}

fn aggregate(config: &ExperimentConfig, setup: &Setup, mut reps: Vec<Repetition>) -> RunResult {
    let cycles = config.cycles as usize;
    let count = reps.len() as f64;
    let mut hits = vec![0u64; cycles];
    let mut mbps = vec![0.0; if config.experiment == ExperimentKind::Channel { cycles } else { 0 }];
    let mut per_repetition_csr = Vec::with_capacity(reps.len());
    for rep in &reps {
        for (h, &c) in hits.iter_mut().zip(&rep.correct) {
            *h += u64::from(c);
        }
        for (m, &x) in mbps.iter_mut().zip(&rep.throughput) {
            *m += x;
        }
        let own = rep.correct.iter().filter(|&&c| c).count();
        per_repetition_csr.push(own as f64 / cycles as f64);
    }
    let per_cycle_csr: Vec<f64> = hits.iter().map(|&h| h as f64 / count).collect();
    let average_csr = per_cycle_csr.iter().sum::<f64>() / cycles as f64;
    RunResult {
        per_cycle_csr,
        average_csr,
        per_repetition_csr,
        per_cycle_mean_mbps: mbps.into_iter().map(|m| m / count).collect(),
        selection_log: std::mem::take(&mut reps[0].log),
        metadata: setup.metadata(config),
    }
}

fn expect_kind(config: &ExperimentConfig, expected: ExperimentKind) -> Result<()> {
    if config.experiment == expected {
        Ok(())
    } else {
        Err(HarnessError::WrongKind {
            expected,
            actual: config.experiment,
        })
    }
}

pub fn run_bandit_experiment(config: &ExperimentConfig) -> Result<RunResult> {
    run_bandit_experiment_with(config, Execution::default())
}

pub fn run_bandit_experiment_with(config: &ExperimentConfig, execution: Execution) -> Result<RunResult> {
    expect_kind(config, ExperimentKind::Bandit)?;
    let setup = Setup::new(config)?;
    let reps = execution.map(config.repetitions, |r| bandit_repetition(config, &setup, r))?;
    Ok(aggregate(config, &setup, reps))
}

pub fn run_channel_experiment(config: &ExperimentConfig) -> Result<RunResult> {
    run_channel_experiment_with(config, Execution::default())
}

pub fn run_channel_experiment_with(config: &ExperimentConfig, execution: Execution) -> Result<RunResult> {
    expect_kind(config, ExperimentKind::Channel)?;
    let setup = Setup::new(config)?;
    let reps = execution.map(config.repetitions, |r| channel_repetition(config, &setup, r))?;
    Ok(aggregate(config, &setup, reps))
}

/// Runs whichever experiment `config` describes.
pub fn run_experiment(config: &ExperimentConfig, execution: Execution) -> Result<RunResult> {
    match config.experiment {
        ExperimentKind::Bandit => run_bandit_experiment_with(config, execution),
        ExperimentKind::Channel => run_channel_experiment_with(config, execution),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StrategyComparison {
    pub first_mode: OmegaMode,
    pub first_csr: f64,
    pub second_mode: OmegaMode,
    pub second_csr: f64,
    /// `first_csr - second_csr`.
    pub difference: f64,
    /// Standard error of the difference from paired per-repetition rates.
    pub standard_error: f64,
}

impl StrategyComparison {
    /// Difference in units of its standard error.
    pub fn z_score(&self) -> f64 {
        self.difference / self.standard_error
    }
}

/// Runs two configurations that differ only in `omega.mode` and compares
/// their average correct selection rates.
pub fn compare_strategies(
    first: &ExperimentConfig,
    second: &ExperimentConfig,
    execution: Execution,
) -> Result<StrategyComparison> {
    let mut aligned = second.clone();
    aligned.omega.mode = first.omega.mode;
    if first.omega.mode == second.omega.mode || &aligned != first {
        return Err(HarnessError::Incomparable);
    }
    let a = run_experiment(first, execution)?;
    let b = run_experiment(second, execution)?;
    let diffs: Vec<f64> = a
        .per_repetition_csr
        .iter()
        .zip(&b.per_repetition_csr)
        .map(|(x, y)| x - y)
        .collect();
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let variance = if diffs.len() > 1 {
        diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(StrategyComparison {
        first_mode: first.omega.mode,
        first_csr: a.average_csr,
        second_mode: second.omega.mode,
        second_csr: b.average_csr,
        difference: a.average_csr - b.average_csr,
        standard_error: (variance / n).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{Generator, SourceSpec};

    fn small_bandit() -> ExperimentConfig {
        ExperimentConfig {
            cycles: 2000,
            repetitions: 40,
            calibration_samples: 20_000,
            ..ExperimentConfig::bandit()
        }
    }

    #[test]
    fn derive_seed_is_pure_and_spreads() {
        assert_eq!(derive_seed(5, 9), derive_seed(5, 9));
        assert_ne!(derive_seed(5, 0), derive_seed(5, 1));
        assert_ne!(derive_seed(5, 0), derive_seed(6, 0));
    }

    #[test]
    fn derive_seed_has_no_collisions() {
        use std::collections::HashSet;
        let n = 1_000_000u64;
        let by_index: HashSet<u64> = (0..n).map(|i| derive_seed(0xdead_beef, i)).collect();
        assert_eq!(by_index.len() as u64, n);
        let by_master: HashSet<u64> = (0..n).map(|s| derive_seed(s.wrapping_mul(0x1234_5678_9abc_def1), 7)).collect();
        assert_eq!(by_master.len() as u64, n);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..n {
            let s: u64 = rand::Rng::random(&mut rng);
            assert_ne!(derive_seed(s, 0), derive_seed(s, 1));
            assert_ne!(derive_seed(s, 3), derive_seed(s ^ 1, 3));
        }
    }

    #[test]
    fn average_matches_curve_mean() {
        let r = run_bandit_experiment(&small_bandit()).unwrap();
        let mean = r.per_cycle_csr.iter().sum::<f64>() / r.per_cycle_csr.len() as f64;
        assert!((r.average_csr - mean).abs() < 1e-12);
        assert!(r.per_cycle_csr.iter().all(|c| (0.0..=1.0).contains(c)));
        assert_eq!(r.per_repetition_csr.len(), 40);
        assert!(r.selection_log.is_empty());
    }

    #[test]
    fn equal_probabilities_count_as_correct() {
        let mut config = small_bandit();
        config.bandit.probs = [0.5, 0.5];
        assert_eq!(run_bandit_experiment(&config).unwrap().average_csr, 1.0);
    }

    #[test]
    fn results_ignore_thread_count() {
        let config = small_bandit();
        let one = run_bandit_experiment_with(&config, Execution::sequential()).unwrap();
        let four = run_bandit_experiment_with(&config, Execution::with_threads(4)).unwrap();
        assert_eq!(one, four);
        let mut channel = ExperimentConfig::channel();
        channel.repetitions = 12;
        let one = run_channel_experiment_with(&channel, Execution::sequential()).unwrap();
        let three = run_channel_experiment_with(&channel, Execution::with_threads(3)).unwrap();
        assert_eq!(one, three);
    }

    #[test]
    fn seeds_change_results() {
        let a = run_bandit_experiment(&small_bandit()).unwrap();
        let mut config = small_bandit();
        config.master_seed = 2;
        let b = run_bandit_experiment(&config).unwrap();
        assert_ne!(a.per_repetition_csr, b.per_repetition_csr);
    }

    #[test]
    fn wrong_kind_is_rejected() {
        assert!(matches!(
            run_channel_experiment(&small_bandit()),
            Err(HarnessError::WrongKind { .. })
        ));
        let mut bad = small_bandit();
        bad.repetitions = 0;
        assert!(matches!(run_bandit_experiment(&bad), Err(HarnessError::Config(_))));
    }

    #[test]
    fn channel_log_has_one_row_per_cycle() {
        let mut config = ExperimentConfig::channel();
        config.repetitions = 3;
        let r = run_channel_experiment(&config).unwrap();
        assert_eq!(r.selection_log.len(), 200);
        assert_eq!(r.per_cycle_mean_mbps.len(), 200);
        assert!(r.selection_log.iter().enumerate().all(|(i, rec)| rec.cycle == i as u64));
    }

    #[test]
    fn first_channel_decision_is_rewarded() {
        let mut config = ExperimentConfig::channel();
        config.cycles = 1;
        config.repetitions = 8;
        config.channel.noise_std_mbps = 0.0;
        config.source = SourceSpec::new(Generator::Uniform {});
        let r = run_channel_experiment(&config).unwrap();
        assert!(r.selection_log[0].reward);
    }

    #[test]
    fn comparison_requires_different_modes() {
        let config = small_bandit();
        assert!(matches!(
            compare_strategies(&config, &config, Execution::default()),
            Err(HarnessError::Incomparable)
        ));
        let mut other = config.clone();
        other.omega.mode = OmegaMode::Flexible;
        other.alpha = 0.99;
        assert!(matches!(
            compare_strategies(&config, &other, Execution::default()),
            Err(HarnessError::Incomparable)
        ));
        other.alpha = config.alpha;
        let cmp = compare_strategies(&config, &other, Execution::default()).unwrap();
        assert!((cmp.difference - (cmp.first_csr - cmp.second_csr)).abs() < 1e-15);
        assert!(cmp.standard_error > 0.0);
    }
}
