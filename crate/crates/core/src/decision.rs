//! Threshold-cascade decision maker.
//!
//! A `2^M`-armed choice is made one bit at a time, most significant bit first.
//! Level `l` of the cascade compares one fresh signal sample with the threshold
//! of the node addressed by the bits already chosen: `s <= threshold` gives bit
//! 0, anything above gives bit 1. After the reward is known, every node on the
//! chosen path decays by the forgetting factor `alpha` and is pushed toward the
//! taken bit on reward or away from it on a miss.
//!
//! Thresholds are stored as real numbers but compared through five quantized
//! levels: `clamp(round(TH), -2, 2)` indexes a [`CalibrationStats`] grid.

use arrayvec::ArrayVec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal::{CalibrationStats, SignalError, SignalSample, SignalSource, LEVEL_COUNT};

/// Deepest supported cascade (65,536 arms).
pub const MAX_DEPTH: usize = 16;
const MAX_LEVEL: f64 = (LEVEL_COUNT / 2) as f64;

#[derive(Debug, Error)]
pub enum DecisionError {
    #[error("depth must lie in 1..={MAX_DEPTH}, got {0}")]
    Depth(usize),
    #[error("alpha must lie in (0, 1], got {0}")]
    Alpha(f64),
    #[error("invalid omega strategy: {0}")]
    Omega(String),
    #[error("flexible omega is undefined when both estimates equal 1")]
    DegenerateEstimates,
    #[error("estimate update rate beta must lie in (0, 1], got {0}")]
    Beta(f64),
    #[error("arm {arm} out of range for {arms} arms")]
    Arm { arm: usize, arms: usize },
    #[error("decision has depth {decision} but tree has depth {tree}")]
    DepthMismatch { decision: usize, tree: usize },
    #[error(transparent)]
    Signal(#[from] SignalError),
}

pub type Result<T> = std::result::Result<T, DecisionError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OmegaMode {
    /// Constant penalty magnitude, no reward-probability estimation.
    #[default]
    Fixed,
    /// Penalty magnitude `(p0 + p1) / (2 - (p0 + p1))` from running estimates.
    Flexible,
}

/// How large the penalty-side threshold step is.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OmegaStrategy {
    #[serde(default)]
    pub mode: OmegaMode,
    #[serde(default = "default_fixed_value")]
    pub fixed_value: f64,
    #[serde(default = "default_omega_max")]
    pub omega_max: f64,
}

fn default_fixed_value() -> f64 {
    1.0
}

fn default_omega_max() -> f64 {
    20.0
}

impl Default for OmegaStrategy {
    fn default() -> Self {
        Self::fixed()
    }
}

impl OmegaStrategy {
    pub fn fixed() -> Self {
        Self {
            mode: OmegaMode::Fixed,
            fixed_value: default_fixed_value(),
            omega_max: default_omega_max(),
        }
    }

    pub fn flexible() -> Self {
        Self {
            mode: OmegaMode::Flexible,
            ..Self::fixed()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fixed_value > 0.0 && self.fixed_value.is_finite()) {
            return Err(DecisionError::Omega(format!(
                "fixed_value must be positive, got {}",
                self.fixed_value
            )));
        }
        if !(self.omega_max >= self.fixed_value && self.omega_max.is_finite()) {
            return Err(DecisionError::Omega(format!(
                "omega_max ({}) must be at least fixed_value ({})",
                self.omega_max, self.fixed_value
            )));
        }
        Ok(())
    }

    /// Penalty magnitude for a node whose two alternatives have estimates `p0`, `p1`.
    pub fn omega(&self, p0: f64, p1: f64) -> Result<f64> {
        match self.mode {
            OmegaMode::Fixed => Ok(self.fixed_value),
            OmegaMode::Flexible => {
                let sum = p0 + p1;
                if sum >= 2.0 {
                    return Err(DecisionError::DegenerateEstimates);
                }
                Ok((sum / (2.0 - sum)).min(self.omega_max))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    /// Exponentially weighted average with rate `beta`, updated per pull.
    #[default]
    Ewma,
    /// Wins divided by plays since the start of the run.
    Cumulative,
}

/// Estimator settings as they appear in an experiment configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    #[serde(default)]
    pub kind: EstimatorKind,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_initial")]
    pub initial: f64,
}

fn default_beta() -> f64 {
    0.05
}

fn default_initial() -> f64 {
    0.5
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            kind: EstimatorKind::default(),
            beta: default_beta(),
            initial: default_initial(),
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(DecisionError::Beta(self.beta));
        }
        if !(0.0..=1.0).contains(&self.initial) {
            return Err(DecisionError::Omega(format!(
                "initial estimate must lie in [0, 1], got {}",
                self.initial
            )));
        }
        Ok(())
    }

    pub fn build(&self, arms: usize) -> Result<RewardEstimates> {
        self.validate()?;
        Ok(RewardEstimates {
            kind: self.kind,
            p_hat: vec![self.initial; arms],
            wins: vec![0; arms],
            plays: vec![0; arms],
            beta: self.beta,
        })
    }
}

/// Per-arm reward probability estimates `p_hat`.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardEstimates {
    kind: EstimatorKind,
    p_hat: Vec<f64>,
    wins: Vec<u64>,
    plays: Vec<u64>,
    beta: f64,
}

impl RewardEstimates {
    /// EWMA estimates with every arm starting at `initial`.
    pub fn new(arms: usize, beta: f64, initial: f64) -> Result<Self> {
        EstimatorConfig {
            kind: EstimatorKind::Ewma,
            beta,
            initial,
        }
        .build(arms)
    }

    /// Estimates pinned to the given values; updates are still applied normally.
    pub fn from_values(p_hat: Vec<f64>, beta: f64) -> Result<Self> {
        if p_hat.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(DecisionError::Omega("estimates must lie in [0, 1]".into()));
        }
        let arms = p_hat.len();
        let mut estimates = Self::new(arms, beta, 0.5)?;
        estimates.p_hat = p_hat;
        Ok(estimates)
    }

    pub fn p_hat(&self) -> &[f64] {
        &self.p_hat
    }

    pub fn arms(&self) -> usize {
        self.p_hat.len()
    }

    pub fn update(&mut self, arm: usize, rewarded: bool) -> Result<()> {
        let arms = self.arms();
        let p = self
            .p_hat
            .get_mut(arm)
            .ok_or(DecisionError::Arm { arm, arms })?;
        let hit = if rewarded { 1.0 } else { 0.0 };
        self.plays[arm] += 1;
        self.wins[arm] += u64::from(rewarded);
        *p = match self.kind {
            EstimatorKind::Ewma => ((1.0 - self.beta) * *p + self.beta * hit).clamp(0.0, 1.0),
            EstimatorKind::Cumulative => self.wins[arm] as f64 / self.plays[arm] as f64,
        };
        Ok(())
    }

    /// Largest estimate among `arms`.
    fn max_over(&self, arms: std::ops::Range<usize>) -> f64 {
        self.p_hat[arms].iter().copied().fold(0.0, f64::max)
    }
}

/// Functional form of [`RewardEstimates::update`].
pub fn update_estimates(
    mut estimates: RewardEstimates,
    arm: usize,
    rewarded: bool,
) -> Result<RewardEstimates> {
    estimates.update(arm, rewarded)?;
    Ok(estimates)
}

/// One cascade outcome: the selected arm and the samples that produced it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decision {
    arm: usize,
    samples: ArrayVec<SignalSample, MAX_DEPTH>,
}

impl Decision {
    pub fn arm(&self) -> usize {
        self.arm
    }

    pub fn depth(&self) -> usize {
        self.samples.len()
    }

    /// Bit taken at cascade level `level` (0 is the MSB).
    pub fn bit(&self, level: usize) -> bool {
        (self.arm >> (self.depth() - 1 - level)) & 1 == 1
    }

    /// Bits `D1 D2 ...`, MSB first.
    pub fn bits(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.depth()).map(|level| self.bit(level))
    }

    pub fn samples(&self) -> &[SignalSample] {
        &self.samples
    }
}

/// Heap-ordered cascade of real-valued thresholds.
///
/// Node 0 is the root (`TH1`); the children of node `i` are `2i + 1` (bit 0)
/// and `2i + 2` (bit 1), so the level-`l` node reached by prefix `p` sits at
/// `2^l - 1 + p`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdTree {
    depth: usize,
    nodes: Vec<f64>,
    alpha: f64,
    levels: CalibrationStats,
}

impl ThresholdTree {
    /// All thresholds start at 0, the median level.
    pub fn new(depth: usize, alpha: f64, levels: CalibrationStats) -> Result<Self> {
        if depth == 0 || depth > MAX_DEPTH {
            return Err(DecisionError::Depth(depth));
        }
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(DecisionError::Alpha(alpha));
        }
        Ok(Self {
            depth,
            nodes: vec![0.0; (1 << depth) - 1],
            alpha,
            levels,
        })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn arms(&self) -> usize {
        1 << self.depth
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn levels(&self) -> &CalibrationStats {
        &self.levels
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.nodes
    }

    pub fn set_threshold(&mut self, node: usize, value: f64) {
        self.nodes[node] = value;
    }

    pub fn node_index(level: usize, prefix: usize) -> usize {
        (1 << level) - 1 + prefix
    }

    /// Quantized level of `node` in `-2..=2`; `f64::round` breaks ties away from zero.
    pub fn level_of(&self, node: usize) -> i32 {
        self.nodes[node].round().clamp(-MAX_LEVEL, MAX_LEVEL) as i32
    }

    pub fn effective_threshold(&self, node: usize) -> f64 {
        self.levels.level(self.level_of(node))
    }

    /// Draws one sample per level from `source` and walks the cascade.
    pub fn decide(&self, source: &mut SignalSource) -> Result<Decision> {
        let mut samples = ArrayVec::new();
        let mut prefix = 0;
        for level in 0..self.depth {
            let sample = source.next_sample()?;
            let node = Self::node_index(level, prefix);
            let bit = sample.value() > self.effective_threshold(node);
            prefix = (prefix << 1) | usize::from(bit);
            samples.push(sample);
        }
        Ok(Decision {
            arm: prefix,
            samples,
        })
    }

    /// Applies the forgetting update to every node on the decision's path.
    pub fn update(
        &mut self,
        decision: &Decision,
        rewarded: bool,
        strategy: &OmegaStrategy,
        estimates: &RewardEstimates,
    ) -> Result<()> {
        if decision.depth() != self.depth {
            return Err(DecisionError::DepthMismatch {
                decision: decision.depth(),
                tree: self.depth,
            });
        }
        let mut prefix = 0;
        for level in 0..self.depth {
            let node = Self::node_index(level, prefix);
            let bit = decision.bit(level);
            let step = if rewarded {
                1.0
            } else {
                match strategy.mode {
                    OmegaMode::Fixed => strategy.fixed_value,
                    OmegaMode::Flexible => {
                        let (p0, p1) = self.alternatives(level, prefix, estimates);
                        // Both estimates at 1: the penalty diverges, so saturate.
                        match strategy.omega(p0, p1) {
                            Err(DecisionError::DegenerateEstimates) => strategy.omega_max,
                            other => other?,
                        }
                    }
                }
            };
            // Reward pulls the threshold toward the taken bit, a miss pushes it away.
            let toward_zero = rewarded != bit;
            let delta = if toward_zero { step } else { -step };
            self.nodes[node] = self.alpha * self.nodes[node] + delta;
            prefix = (prefix << 1) | usize::from(bit);
        }
        Ok(())
    }

    /// Best estimate in the bit-0 and bit-1 subtrees below a node.
    fn alternatives(&self, level: usize, prefix: usize, estimates: &RewardEstimates) -> (f64, f64) {
        let span = 1 << (self.depth - level - 1);
        let left = (prefix << 1) * span;
        let right = left + span;
        (
            estimates.max_over(left..right),
            estimates.max_over(right..right + span),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{Trace, WrapPolicy};
    use proptest::prelude::*;

    fn sixths() -> CalibrationStats {
        CalibrationStats::new([42.0, 85.0, 127.0, 170.0, 213.0], 1000).unwrap()
    }

    fn replay(bytes: &[u8]) -> SignalSource {
        let trace = Trace::from_bytes(bytes.to_vec(), 10).unwrap();
        SignalSource::from_trace(&trace, 1, WrapPolicy::Wrap).unwrap()
    }

    fn estimates(arms: usize) -> RewardEstimates {
        RewardEstimates::new(arms, 0.02, 0.5).unwrap()
    }

    fn decision(tree: &ThresholdTree, bytes: &[u8]) -> Decision {
        tree.decide(&mut replay(bytes)).unwrap()
    }

    #[test]
    fn omega_fixed_and_flexible_values() {
        let flex = OmegaStrategy::flexible();
        assert!((flex.omega(0.5, 0.5).unwrap() - 1.0).abs() < 1e-12);
        assert!((flex.omega(0.5, 0.9).unwrap() - 1.4 / 0.6).abs() < 1e-12);
        assert!((flex.omega(0.5, 0.9).unwrap() - 2.33).abs() < 0.005);
        assert!((flex.omega(0.3, 0.2).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(flex.omega(0.99, 0.99).unwrap(), 20.0);
        assert!(matches!(flex.omega(1.0, 1.0), Err(DecisionError::DegenerateEstimates)));
        assert_eq!(OmegaStrategy::fixed().omega(0.1, 0.1).unwrap(), 1.0);
    }

    #[test]
    fn omega_strategy_validation() {
        let mut s = OmegaStrategy::fixed();
        s.fixed_value = 0.0;
        assert!(s.validate().is_err());
        s.fixed_value = 30.0;
        assert!(s.validate().is_err());
        assert!(OmegaStrategy::flexible().validate().is_ok());
    }

    #[test]
    fn effective_threshold_rounds_and_clamps() {
        let mut tree = ThresholdTree::new(1, 0.9, sixths()).unwrap();
        let q = *sixths().quantiles();
        for (th, expected) in [(0.4, q[2]), (7.3, q[4]), (-1.6, q[0]), (-1.4, q[1]), (1.5, q[4]), (-0.5, q[1])] {
            tree.set_threshold(0, th);
            assert_eq!(tree.effective_threshold(0), expected, "TH = {th}");
        }
    }

    #[test]
    fn median_ties_give_bit_zero() {
        let tree = ThresholdTree::new(2, 0.9, sixths()).unwrap();
        let d = decision(&tree, &[127, 127]);
        assert_eq!(d.arm(), 0);
        assert_eq!(d.bits().collect::<Vec<_>>(), vec![false, false]);
    }

    #[test]
    fn samples_above_top_level_give_all_ones() {
        let mut tree = ThresholdTree::new(2, 0.9, sixths()).unwrap();
        for node in 0..3 {
            tree.set_threshold(node, 2.0);
        }
        let d = decision(&tree, &[250, 214]);
        assert_eq!(d.arm(), 3);
        assert_eq!(d.samples().len(), 2);
    }

    #[test]
    fn decide_consumes_exactly_depth_samples() {
        let tree = ThresholdTree::new(3, 0.9, sixths()).unwrap();
        let mut source = replay(&[1, 2, 3, 4, 5, 6, 7]);
        let d = tree.decide(&mut source).unwrap();
        assert_eq!(d.samples().iter().map(|s| s.raw()).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert_eq!(source.next_sample().unwrap().raw(), 4);
    }

    #[test]
    fn reward_and_penalty_updates() {
        let strategy = OmegaStrategy::fixed();
        let est = estimates(2);
        let mut tree = ThresholdTree::new(1, 0.9, sixths()).unwrap();

        let zero = decision(&tree, &[0]);
        tree.update(&zero, true, &strategy, &est).unwrap();
        assert_eq!(tree.thresholds()[0], 1.0);

        tree.set_threshold(0, 2.0);
        let one = decision(&tree, &[255]);
        tree.update(&one, true, &strategy, &est).unwrap();
        assert!((tree.thresholds()[0] - 0.8).abs() < 1e-12);

        tree.set_threshold(0, -1.0);
        let zero = decision(&tree, &[0]);
        tree.update(&zero, false, &strategy, &est).unwrap();
        assert!((tree.thresholds()[0] + 1.9).abs() < 1e-12);

        tree.set_threshold(0, 0.0);
        let one = decision(&tree, &[255]);
        tree.update(&one, false, &strategy, &est).unwrap();
        assert_eq!(tree.thresholds()[0], 1.0);
    }

    #[test]
    fn off_path_nodes_are_untouched() {
        let mut tree = ThresholdTree::new(2, 0.9, sixths()).unwrap();
        tree.set_threshold(2, 0.7);
        let d = decision(&tree, &[0, 255]);
        assert_eq!(d.arm(), 1);
        tree.update(&d, true, &OmegaStrategy::fixed(), &estimates(4)).unwrap();
        assert_eq!(tree.thresholds()[2], 0.7);
        assert_eq!(tree.thresholds()[0], 1.0);
        assert_eq!(tree.thresholds()[1], -1.0);
    }

    #[test]
    fn flexible_penalty_uses_subtree_maxima() {
        let mut tree = ThresholdTree::new(2, 1.0, sixths()).unwrap();
        let est = RewardEstimates::from_values(vec![0.1, 0.3, 0.2, 0.4], 0.02).unwrap();
        let d = decision(&tree, &[0, 0]);
        tree.update(&d, false, &OmegaStrategy::flexible(), &est).unwrap();
        // root alternatives: max(0.1, 0.3) and max(0.2, 0.4)
        let root = 0.7 / 1.3;
        // leaf alternatives: arms 0 and 1
        let leaf = 0.4 / 1.6;
        assert!((tree.thresholds()[0] + root).abs() < 1e-12);
        assert!((tree.thresholds()[1] + leaf).abs() < 1e-12);
    }

    #[test]
    fn saturated_estimates_use_the_clamp() {
        let mut tree = ThresholdTree::new(1, 1.0, sixths()).unwrap();
        let est = RewardEstimates::from_values(vec![1.0, 1.0], 0.02).unwrap();
        let d = decision(&tree, &[0]);
        tree.update(&d, false, &OmegaStrategy::flexible(), &est).unwrap();
        assert_eq!(tree.thresholds()[0], -20.0);
    }

    #[test]
    fn mismatched_depth_is_rejected() {
        let shallow = ThresholdTree::new(1, 0.9, sixths()).unwrap();
        let mut deep = ThresholdTree::new(2, 0.9, sixths()).unwrap();
        let d = decision(&shallow, &[0]);
        assert!(deep.update(&d, true, &OmegaStrategy::fixed(), &estimates(4)).is_err());
        assert!(ThresholdTree::new(0, 0.9, sixths()).is_err());
        assert!(ThresholdTree::new(1, 0.0, sixths()).is_err());
    }

    #[test]
    fn estimate_updates() {
        let mut est = estimates(2);
        est.update(0, true).unwrap();
        assert!((est.p_hat()[0] - 0.51).abs() < 1e-12);
        assert_eq!(est.p_hat()[1], 0.5);
        let est = update_estimates(RewardEstimates::from_values(vec![1.0, 0.0], 0.02).unwrap(), 0, true).unwrap();
        assert_eq!(est.p_hat()[0], 1.0);
        assert!(estimates(2).update(2, true).is_err());

        let mut cum = EstimatorConfig {
            kind: EstimatorKind::Cumulative,
            ..EstimatorConfig::default()
        }
        .build(2)
        .unwrap();
        for r in [true, false, false, true] {
            cum.update(1, r).unwrap();
        }
        assert_eq!(cum.p_hat(), &[0.5, 0.5]);
        cum.update(1, true).unwrap();
        assert!((cum.p_hat()[1] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn ewma_tracks_stationary_rate() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let mut est = estimates(1);
        for _ in 0..100_000 {
            est.update(0, rng.random_bool(0.3)).unwrap();
        }
        assert!((est.p_hat()[0] - 0.3).abs() < 0.05, "{}", est.p_hat()[0]);
    }

    proptest! {
        #[test]
        fn thresholds_stay_bounded(
            depth in 1usize..=3,
            steps in prop::collection::vec((any::<[u8; 3]>(), any::<bool>()), 1..400),
        ) {
            let mut tree = ThresholdTree::new(depth, 0.9, sixths()).unwrap();
            let est = estimates(1 << depth);
            for (bytes, rewarded) in steps {
                let d = decision(&tree, &bytes[..depth]);
                tree.update(&d, rewarded, &OmegaStrategy::fixed(), &est).unwrap();
                for th in tree.thresholds() {
                    prop_assert!(th.abs() <= 10.0 + 1e-9);
                }
            }
        }

        #[test]
        fn update_touches_only_the_path(
            start in prop::collection::vec(-5.0f64..5.0, 7),
            bytes in any::<[u8; 3]>(),
            rewarded in any::<bool>(),
        ) {
            let mut tree = ThresholdTree::new(3, 0.9, sixths()).unwrap();
            for (node, v) in start.iter().enumerate() {
                tree.set_threshold(node, *v);
            }
            let d = decision(&tree, &bytes);
            let path: Vec<usize> = (0..3)
                .map(|level| ThresholdTree::node_index(level, d.arm() >> (3 - level)))
                .collect();
            tree.update(&d, rewarded, &OmegaStrategy::fixed(), &estimates(8)).unwrap();
            for (node, (now, before)) in tree.thresholds().iter().zip(&start).enumerate() {
                if path.contains(&node) {
                    prop_assert_ne!(now.to_bits(), before.to_bits());
                } else {
                    prop_assert_eq!(now.to_bits(), before.to_bits());
                }
            }
        }

        #[test]
        fn effective_threshold_is_a_grid_value(th in -50.0f64..50.0) {
            let mut tree = ThresholdTree::new(1, 0.9, sixths()).unwrap();
            tree.set_threshold(0, th);
            prop_assert!(sixths().quantiles().contains(&tree.effective_threshold(0)));
        }

        #[test]
        fn estimates_stay_in_unit_interval(
            beta in 0.001f64..=1.0,
            rewards in prop::collection::vec(any::<bool>(), 1..200),
        ) {
            let mut est = RewardEstimates::new(1, beta, 0.5).unwrap();
            for r in rewards {
                est.update(0, r).unwrap();
                prop_assert!((0.0..=1.0).contains(&est.p_hat()[0]));
            }
        }
    }
}
