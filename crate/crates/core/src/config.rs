//! Experiment configuration documents.
//!
//! A configuration is one TOML document. Omitted keys take the defaults of the
//! experiment kind named by the top-level `experiment` key, and dotted-path
//! overrides (`omega.mode=flexible`) are applied on top before validation.

use serde::{Deserialize, Serialize};
use thiserror::Error;
use toml::{Table, Value};

use crate::decision::{EstimatorConfig, OmegaStrategy, MAX_DEPTH};
use crate::environment::{Averaging, ChannelId, ChannelModel};
use crate::signal::{Generator, SourceSpec, LEVEL_COUNT, MIN_CALIBRATION_SAMPLES, RANGE_GRID};

/// Repetition count of the full-scale study.
pub const FULL_SCALE_REPETITIONS: usize = 12_000;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{0}")]
    Parse(String),
    #[error("invalid value for `{key}`: {message}")]
    Invalid { key: String, message: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("malformed override `{0}`: expected key=value")]
    Override(String),
}

pub type Result<T> = std::result::Result<T, ConfigError>;

fn invalid(key: &str, message: impl ToString) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        message: message.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    /// Two-armed switching Bernoulli bandit, scored by correct selection rate.
    Bandit,
    /// Four-channel throughput selection.
    Channel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BanditParams {
    pub probs: [f64; 2],
    pub swap_period: u64,
}

impl Default for BanditParams {
    fn default() -> Self {
        Self {
            probs: [0.1, 0.9],
            swap_period: 2500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub depth: usize,
    pub alpha: f64,
    pub cycles: u64,
    pub repetitions: usize,
    pub master_seed: u64,
    pub calibration_samples: usize,
    /// Cumulative probabilities of the five threshold levels.
    pub level_grid: [f64; LEVEL_COUNT],
    /// Channel identity of each arm, indexed by arm number.
    pub arm_to_channel: Vec<ChannelId>,
    pub source: SourceSpec,
    pub omega: OmegaStrategy,
    pub estimator: EstimatorConfig,
    pub bandit: BanditParams,
    pub channel: ChannelModel,
    pub reward_averaging: Averaging,
}

impl ExperimentConfig {
    pub fn bandit() -> Self {
        Self {
            experiment: ExperimentKind::Bandit,
            depth: 1,
            alpha: 0.9,
            cycles: 10_000,
            repetitions: 1000,
            master_seed: 1,
            calibration_samples: 100_000,
            level_grid: RANGE_GRID,
            arm_to_channel: vec![36, 40, 44, 48],
            source: SourceSpec::default(),
            omega: OmegaStrategy::fixed(),
            estimator: EstimatorConfig::default(),
            bandit: BanditParams::default(),
            channel: ChannelModel::default(),
            reward_averaging: Averaging::Cumulative,
        }
    }

    pub fn channel() -> Self {
        Self {
            experiment: ExperimentKind::Channel,
            depth: 2,
            cycles: 200,
            repetitions: 100,
            ..Self::bandit()
        }
    }

    pub fn default_for(kind: ExperimentKind) -> Self {
        match kind {
            ExperimentKind::Bandit => Self::bandit(),
            ExperimentKind::Channel => Self::channel(),
        }
    }

    pub fn arms(&self) -> usize {
        1 << self.depth
    }

    /// Parses a document, fills defaults and applies `key=value` overrides.
    pub fn from_toml_str<S: AsRef<str>>(text: &str, overrides: &[S]) -> Result<Self> {
        let mut user: Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        for assignment in overrides {
            apply_override(&mut user, assignment.as_ref())?;
        }
        let kind = match user.get("experiment") {
            Some(v) => ExperimentKind::deserialize(v.clone())
                .map_err(|e| invalid("experiment", e.message()))?,
            None => return Err(invalid("experiment", "missing; expected \"bandit\" or \"channel\"")),
        };
        let mut merged = Self::default_for(kind).to_table();
        merge(&mut merged, user);
        let config = Self::deserialize(Value::Table(merged))
            .map_err(|e| ConfigError::Parse(e.message().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_table(&self) -> Table {
        Table::try_from(self).expect("config serializes to a table")
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.depth > MAX_DEPTH {
            return Err(invalid("depth", format!("must lie in 1..={MAX_DEPTH}")));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(invalid("alpha", "must lie in (0, 1]"));
        }
        if self.cycles == 0 {
            return Err(invalid("cycles", "must be at least 1"));
        }
        if self.repetitions == 0 {
            return Err(invalid("repetitions", "must be at least 1"));
        }
        if self.calibration_samples < MIN_CALIBRATION_SAMPLES {
            return Err(invalid(
                "calibration_samples",
                format!("must be at least {MIN_CALIBRATION_SAMPLES}"),
            ));
        }
        if self.level_grid.iter().any(|p| !(0.0..=1.0).contains(p))
            || self.level_grid.windows(2).any(|w| w[0] > w[1])
        {
            return Err(invalid("level_grid", "must be non-decreasing probabilities in [0, 1]"));
        }
        self.source.validate().map_err(|e| invalid("source", e))?;
        self.omega.validate().map_err(|e| invalid("omega", e))?;
        self.estimator.validate().map_err(|e| invalid("estimator", e))?;
        match self.experiment {
            ExperimentKind::Bandit => {
                if self.depth != 1 {
                    return Err(invalid("depth", "the two-armed bandit requires depth = 1"));
                }
                if self.bandit.probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
                    return Err(invalid("bandit.probs", "probabilities must lie in [0, 1]"));
                }
                if self.bandit.swap_period == 0 {
                    return Err(invalid("bandit.swap_period", "must be positive"));
                }
            }
            ExperimentKind::Channel => {
                if self.channel.channels.len() != self.arms() {
                    return Err(invalid(
                        "channel.channels",
                        format!(
                            "{} channels given but depth {} selects among {}",
                            self.channel.channels.len(),
                            self.depth,
                            self.arms()
                        ),
                    ));
                }
                self.channel.validate().map_err(|e| invalid("channel", e))?;
                if self.arm_to_channel.len() != self.arms() {
                    return Err(invalid(
                        "arm_to_channel",
                        format!("needs exactly {} entries", self.arms()),
                    ));
                }
                if let Some(c) = self
                    .arm_to_channel
                    .iter()
                    .find(|c| !self.channel.channels.contains(c))
                {
                    return Err(invalid("arm_to_channel", format!("channel {c} is not in channel.channels")));
                }
                if let Averaging::Windowed { window: 0 } = self.reward_averaging {
                    return Err(invalid("reward_averaging.window", "must be positive"));
                }
            }
        }
        Ok(())
    }

    /// Whether the source replays a file rather than running a generator.
    pub fn uses_trace(&self) -> bool {
        matches!(self.source.generator, Generator::Trace { .. })
    }
}

/// Reads the `[source]` table of a document (any other tables are ignored),
/// falling back to the default source for missing keys.
pub fn source_from_toml_str<S: AsRef<str>>(text: &str, overrides: &[S]) -> Result<SourceSpec> {
    let mut user: Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
    for assignment in overrides {
        apply_override(&mut user, assignment.as_ref())?;
    }
    let mut merged = Table::try_from(SourceSpec::default()).expect("source serializes");
    if let Some(source) = user.remove("source") {
        let source = match source {
            Value::Table(t) => t,
            _ => return Err(invalid("source", "must be a table")),
        };
        merge(&mut merged, source);
    }
    let spec = SourceSpec::deserialize(Value::Table(merged))
        .map_err(|e| ConfigError::Parse(e.message().to_string()))?;
    spec.validate().map_err(|e| invalid("source", e))?;
    Ok(spec)
}

/// Sets `path.to.key = value` in `table`, creating intermediate tables.
///
/// The value is parsed as a TOML value; anything that does not parse is taken
/// as a bare string, so `omega.mode=flexible` works without quoting.
pub fn apply_override(table: &mut Table, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| ConfigError::Override(assignment.to_string()))?;
    let path = path.trim();
    let raw = raw.trim();
    if path.is_empty() || path.split('.').any(str::is_empty) {
        return Err(ConfigError::Override(assignment.to_string()));
    }
    let value = format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));

    let mut keys: Vec<&str> = path.split('.').collect();
    let leaf = keys.pop().expect("non-empty path");
    let mut cursor = table;
    for key in keys {
        let entry = cursor
            .entry(key.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        cursor = entry
            .as_table_mut()
            .ok_or_else(|| ConfigError::UnknownKey(path.to_string()))?;
    }
    if leaf == "kind" && cursor.get("kind") != Some(&value) {
        // Switching generator kind discards the previous kind's parameters.
        cursor.clear();
    }
    cursor.insert(leaf.to_string(), value);
    Ok(())
}

/// Deep-merges `overlay` into `base`. A table whose `kind` differs replaces
/// the base table wholesale.
fn merge(base: &mut Table, overlay: Table) {
    for (key, value) in overlay {
        match (base.get_mut(&key), value) {
            (Some(Value::Table(existing)), Value::Table(incoming))
                if existing.get("kind").is_none()
                    || incoming.get("kind").is_none()
                    || existing.get("kind") == incoming.get("kind") =>
            {
                merge(existing, incoming);
            }
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decision::OmegaMode;

    const NONE: [&str; 0] = [];

    #[test]
    fn defaults_fill_missing_keys() {
        let config = ExperimentConfig::from_toml_str("experiment = \"bandit\"", &NONE).unwrap();
        assert_eq!(config, ExperimentConfig::bandit());
        let config = ExperimentConfig::from_toml_str("experiment = \"channel\"", &NONE).unwrap();
        assert_eq!(config, ExperimentConfig::channel());
        assert_eq!(config.cycles, 200);
        assert_eq!(config.depth, 2);
    }

    #[test]
    fn round_trips_through_toml() {
        let config = ExperimentConfig::channel();
        let text = config.to_toml_string();
        assert_eq!(ExperimentConfig::from_toml_str(&text, &NONE).unwrap(), config);
    }

    #[test]
    fn overrides_use_dotted_paths() {
        let config = ExperimentConfig::from_toml_str(
            "experiment = \"bandit\"\n[bandit]\nprobs = [0.5, 0.9]\n",
            &["omega.mode=flexible", "alpha = 0.99", "source.generator.kind=uniform"],
        )
        .unwrap();
        assert_eq!(config.omega.mode, OmegaMode::Flexible);
        assert_eq!(config.alpha, 0.99);
        assert_eq!(config.bandit.probs, [0.5, 0.9]);
        assert_eq!(config.source.generator, Generator::Uniform {});
    }

    #[test]
    fn replacing_generator_kind_in_file() {
        let config = ExperimentConfig::from_toml_str(
            "experiment = \"bandit\"\n[source.generator]\nkind = \"logistic\"\n",
            &NONE,
        )
        .unwrap();
        assert_eq!(config.source.generator, Generator::Logistic { r: 4.0 });
    }

    #[test]
    fn invalid_values_name_the_key() {
        let err = ExperimentConfig::from_toml_str("experiment = \"bandit\"\nrepetitions = 0", &NONE)
            .unwrap_err();
        assert!(err.to_string().contains("repetitions"), "{err}");
        let err = ExperimentConfig::from_toml_str("experiment = \"bandit\"", &["alpha=1.5"]).unwrap_err();
        assert!(err.to_string().contains("alpha"), "{err}");
        let err = ExperimentConfig::from_toml_str(
            "experiment = \"channel\"\n[channel]\nchannels = [36, 40, 44]\nbest_sequence = [44]\n",
            &NONE,
        )
        .unwrap_err();
        assert!(err.to_string().contains("channel.channels"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ExperimentConfig::from_toml_str("experiment = \"bandit\"\nbogus = 3", &NONE).unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
        let err = ExperimentConfig::from_toml_str("experiment = \"bandit\"", &["omega.speed=2"]).unwrap_err();
        assert!(err.to_string().contains("speed"), "{err}");
        assert!(ExperimentConfig::from_toml_str("alpha = 0.9", &NONE).is_err());
        assert!(matches!(
            ExperimentConfig::from_toml_str("experiment = \"bandit\"", &["alpha"]),
            Err(ConfigError::Override(_))
        ));
    }

    #[test]
    fn source_documents() {
        assert_eq!(source_from_toml_str("", &NONE).unwrap(), SourceSpec::default());
        let spec = source_from_toml_str(
            "experiment = \"bandit\"\n[source]\nstride = 3\n",
            &["source.generator.phi=-0.3"],
        )
        .unwrap();
        assert_eq!(spec.stride, 3);
        assert_eq!(spec.generator, Generator::Ar1 { phi: -0.3, noise_std: 1.0 });
        assert!(source_from_toml_str("", &["source.generator.phi=1.0"]).is_err());
    }

    #[test]
    fn bandit_requires_two_arms() {
        let err = ExperimentConfig::from_toml_str("experiment = \"bandit\"\ndepth = 2", &NONE).unwrap_err();
        assert!(err.to_string().contains("depth"));
    }
}
