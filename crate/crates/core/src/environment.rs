//! Simulated reward worlds.

use std::collections::VecDeque;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EnvironmentError {
    #[error("arm {0} is not available in a two-armed bandit")]
    Arm(usize),
    #[error("unknown channel {0}")]
    UnknownChannel(ChannelId),
    #[error("invalid environment parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, EnvironmentError>;

/// Two-armed Bernoulli bandit whose reward probabilities trade places every
/// `swap_period` cycles.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchingBernoulliEnv {
    probs: [f64; 2],
    swap_period: u64,
    cycle: u64,
}

impl SwitchingBernoulliEnv {
    pub fn new(probs: [f64; 2], swap_period: u64) -> Result<Self> {
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(EnvironmentError::InvalidParameter(format!(
                "reward probabilities must lie in [0, 1], got {probs:?}"
            )));
        }
        if swap_period == 0 {
            return Err(EnvironmentError::InvalidParameter(
                "swap_period must be positive".into(),
            ));
        }
        Ok(Self {
            probs,
            swap_period,
            cycle: 0,
        })
    }

    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    /// Probabilities in force at cycle `t`.
    pub fn effective_probs(&self, t: u64) -> [f64; 2] {
        if (t / self.swap_period).is_multiple_of(2) {
            self.probs
        } else {
            [self.probs[1], self.probs[0]]
        }
    }

    /// Arm with the strictly higher probability at `t`; `None` on a tie.
    pub fn best_arm_at(&self, t: u64) -> Option<usize> {
        let [p0, p1] = self.effective_probs(t);
        if p0 > p1 {
            Some(0)
        } else if p1 > p0 {
            Some(1)
        } else {
            None
        }
    }

    /// Bernoulli draw for `arm` at the current cycle, then advances one cycle.
    pub fn pull<R: Rng + ?Sized>(&mut self, arm: usize, rng: &mut R) -> Result<bool> {
        let p = *self
            .effective_probs(self.cycle)
            .get(arm)
            .ok_or(EnvironmentError::Arm(arm))?;
        self.cycle += 1;
        Ok(rng.random::<f64>() < p)
    }
}

pub type ChannelId = u32;

/// Rotating-congestion throughput model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelModel {
    #[serde(default = "default_channels")]
    pub channels: Vec<ChannelId>,
    #[serde(default = "default_best_sequence")]
    pub best_sequence: Vec<ChannelId>,
    #[serde(default = "default_block_length")]
    pub block_length: u64,
    #[serde(default = "default_vacant")]
    pub vacant_mbps: f64,
    #[serde(default = "default_congested")]
    pub congested_mbps: f64,
    #[serde(default = "default_noise")]
    pub noise_std_mbps: f64,
}

fn default_channels() -> Vec<ChannelId> {
    vec![36, 40, 44, 48]
}

fn default_best_sequence() -> Vec<ChannelId> {
    vec![48, 44, 40, 36]
}

fn default_block_length() -> u64 {
    50
}

fn default_vacant() -> f64 {
    14.0
}

fn default_congested() -> f64 {
    4.0
}

fn default_noise() -> f64 {
    1.0
}

impl Default for ChannelModel {
    fn default() -> Self {
        Self {
            channels: default_channels(),
            best_sequence: default_best_sequence(),
            block_length: default_block_length(),
            vacant_mbps: default_vacant(),
            congested_mbps: default_congested(),
            noise_std_mbps: default_noise(),
        }
    }
}

impl ChannelModel {
    pub fn validate(&self) -> Result<()> {
        let invalid = |msg: String| Err(EnvironmentError::InvalidParameter(msg));
        if self.channels.is_empty() {
            return invalid("channels must not be empty".into());
        }
        if self.best_sequence.is_empty() {
            return invalid("best_sequence must not be empty".into());
        }
        if let Some(c) = self.best_sequence.iter().find(|c| !self.channels.contains(c)) {
            return Err(EnvironmentError::UnknownChannel(*c));
        }
        if self.block_length == 0 {
            return invalid("block_length must be positive".into());
        }
        if !(self.vacant_mbps > 0.0 && self.vacant_mbps.is_finite()) {
            return invalid(format!("vacant_mbps must be positive, got {}", self.vacant_mbps));
        }
        if !(self.congested_mbps > 0.0 && self.congested_mbps.is_finite()) {
            return invalid(format!("congested_mbps must be positive, got {}", self.congested_mbps));
        }
        if !(self.noise_std_mbps >= 0.0 && self.noise_std_mbps.is_finite()) {
            return invalid(format!(
                "noise_std_mbps must be non-negative, got {}",
                self.noise_std_mbps
            ));
        }
        Ok(())
    }

    /// Best channel at cycle `t`; the last entry persists once the sequence runs out.
    pub fn best_channel_at(&self, t: u64) -> ChannelId {
        let block = (t / self.block_length).min(self.best_sequence.len() as u64 - 1);
        self.best_sequence[block as usize]
    }

    pub fn mean_mbps(&self, channel: ChannelId, t: u64) -> f64 {
        if channel == self.best_channel_at(t) {
            self.vacant_mbps
        } else {
            self.congested_mbps
        }
    }
}

/// One throughput measurement on the chosen channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThroughputSample {
    pub channel: ChannelId,
    pub mbps: f64,
    pub cycle: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelEnv {
    model: ChannelModel,
    cycle: u64,
}

impl ChannelEnv {
    pub fn new(model: ChannelModel) -> Result<Self> {
        model.validate()?;
        Ok(Self { model, cycle: 0 })
    }

    pub fn model(&self) -> &ChannelModel {
        &self.model
    }

    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    /// Measures `channel` at the current cycle and advances.
    pub fn step_channel<R: Rng + ?Sized>(
        &mut self,
        channel: ChannelId,
        rng: &mut R,
    ) -> Result<ThroughputSample> {
        if !self.model.channels.contains(&channel) {
            return Err(EnvironmentError::UnknownChannel(channel));
        }
        let mean = self.model.mean_mbps(channel, self.cycle);
        let noise: f64 = StandardNormal.sample(rng);
        let sample = ThroughputSample {
            channel,
            mbps: (mean + self.model.noise_std_mbps * noise).max(0.0),
            cycle: self.cycle,
        };
        self.cycle += 1;
        Ok(sample)
    }
}

/// Horizon of the throughput average that rewards are judged against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode", deny_unknown_fields)]
pub enum Averaging {
    /// Every observation so far.
    #[default]
    Cumulative,
    /// The most recent `window` observations.
    Windowed { window: usize },
}

/// Rewards an observation that beats the average of everything before it.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardRule {
    averaging: Averaging,
    sum: f64,
    count: u64,
    recent: VecDeque<f64>,
}

impl RewardRule {
    pub fn new(averaging: Averaging) -> Result<Self> {
        if averaging == (Averaging::Windowed { window: 0 }) {
            return Err(EnvironmentError::InvalidParameter(
                "averaging window must be positive".into(),
            ));
        }
        Ok(Self {
            averaging,
            sum: 0.0,
            count: 0,
            recent: VecDeque::new(),
        })
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// Mean of the observations in the current horizon, if any.
    pub fn history_mean(&self) -> Option<f64> {
        match self.averaging {
            Averaging::Cumulative => (self.count > 0).then(|| self.sum / self.count as f64),
            Averaging::Windowed { .. } => (!self.recent.is_empty())
                .then(|| self.recent.iter().sum::<f64>() / self.recent.len() as f64),
        }
    }

    /// Strictly-greater comparison with the prior mean; an empty history rewards.
    pub fn reward_from_throughput(&mut self, obs: &ThroughputSample) -> bool {
        let rewarded = self.history_mean().is_none_or(|mean| obs.mbps > mean);
        self.sum += obs.mbps;
        self.count += 1;
        if let Averaging::Windowed { window } = self.averaging {
            if self.recent.len() == window {
                self.recent.pop_front();
            }
            self.recent.push_back(obs.mbps);
        }
        rewarded
    }
}
