//! Decision-driving signal sources.
//!
//! Every source emits 8-bit amplitude codes, whether it replays a recorded
//! trace or runs a synthetic generator. Synthetic outputs are rescaled affinely
//! onto `[0, 255]` from the generator's analytic range and rounded half-up, so
//! recorded and synthetic sources are interchangeable downstream.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Bit depth of every recorded or synthesized sample.
pub const RESOLUTION_BITS: u32 = 8;
/// Largest amplitude code.
pub const CODE_MAX: u8 = u8::MAX;
/// Number of quantized threshold levels.
pub const LEVEL_COUNT: usize = 5;
/// Smallest sample count accepted by [`SignalSource::calibrate`].
pub const MIN_CALIBRATION_SAMPLES: usize = 1000;

/// Level grid spanning the observed signal range: minimum, quartiles, maximum.
///
/// At the outermost levels the comparison becomes (almost) deterministic, so
/// a saturated threshold commits to one branch.
pub const RANGE_GRID: [f64; LEVEL_COUNT] = [0.0, 0.25, 0.5, 0.75, 1.0];
/// Equal-mass grid at cumulative probabilities 1/6 .. 5/6.
pub const SIXTHS_GRID: [f64; LEVEL_COUNT] = [1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0, 4.0 / 6.0, 5.0 / 6.0];

/// Stationary standard deviations kept by the AR(1) amplitude mapping.
const AR1_CLIP_SIGMAS: f64 = 4.0;
/// Oscilloscope sampling interval of the recorded traces (100 GS/s).
pub const DEFAULT_SAMPLE_INTERVAL_PS: u64 = 10;

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("failed to access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed trace header {path}: {message}")]
    Header { path: PathBuf, message: String },
    #[error("trace header declares {declared} samples but payload holds {actual}")]
    LengthMismatch { declared: u64, actual: u64 },
    #[error("trace resolution must be {RESOLUTION_BITS} bits, got {0}")]
    Resolution(u32),
    #[error("trace is empty")]
    EmptyTrace,
    #[error("invalid source parameter: {0}")]
    InvalidParameter(String),
    #[error("trace exhausted after {length} samples")]
    Exhausted { length: usize },
    #[error("signal has zero variance over {0} samples")]
    ZeroVariance(usize),
    #[error("need at least {min} samples, got {got}")]
    TooFewSamples { min: usize, got: usize },
}

pub type Result<T> = std::result::Result<T, SignalError>;

/// One amplitude code `s(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SignalSample(u8);

impl SignalSample {
    pub const fn new(raw: u8) -> Self {
        Self(raw)
    }

    pub const fn raw(self) -> u8 {
        self.0
    }

    pub fn value(self) -> f64 {
        f64::from(self.0)
    }
}

impl From<u8> for SignalSample {
    fn from(raw: u8) -> Self {
        Self(raw)
    }
}

/// Sidecar metadata stored next to a `.chaos` payload as `<name>.chaos.meta`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceHeader {
    pub sample_interval_ps: u64,
    pub resolution_bits: u32,
    pub length: u64,
}

impl TraceHeader {
    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        toml::from_str(text).map_err(|e| e.message().to_string())
    }

    pub fn to_meta_string(&self) -> String {
        toml::to_string(self).expect("header serializes")
    }

    /// Checks the header against a payload of `payload_len` bytes.
    pub fn check(&self, payload_len: usize) -> Result<()> {
        if self.resolution_bits != RESOLUTION_BITS {
            return Err(SignalError::Resolution(self.resolution_bits));
        }
        if self.sample_interval_ps == 0 {
            return Err(SignalError::InvalidParameter(
                "sample_interval_ps must be positive".into(),
            ));
        }
        if self.length != payload_len as u64 {
            return Err(SignalError::LengthMismatch {
                declared: self.length,
                actual: payload_len as u64,
            });
        }
        if payload_len == 0 {
            return Err(SignalError::EmptyTrace);
        }
        Ok(())
    }
}

/// Path of the sidecar header for a trace payload.
pub fn meta_path(payload: &Path) -> PathBuf {
    let mut name = payload.as_os_str().to_owned();
    name.push(".meta");
    PathBuf::from(name)
}

/// A recorded 8-bit trace held in memory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    header: TraceHeader,
    data: Arc<[u8]>,
}

impl Trace {
    pub fn from_bytes(data: impl Into<Arc<[u8]>>, sample_interval_ps: u64) -> Result<Self> {
        let data = data.into();
        let header = TraceHeader {
            sample_interval_ps,
            resolution_bits: RESOLUTION_BITS,
            length: data.len() as u64,
        };
        header.check(data.len())?;
        Ok(Self { header, data })
    }

    /// Builds a trace whose payload must agree with an externally declared header.
    pub fn with_header(data: impl Into<Arc<[u8]>>, header: TraceHeader) -> Result<Self> {
        let data = data.into();
        header.check(data.len())?;
        Ok(Self { header, data })
    }

    /// Loads `<path>` and its `<path>.meta` sidecar.
    pub fn load(path: &Path) -> Result<Self> {
        let meta = meta_path(path);
        let text = fs::read_to_string(&meta).map_err(|source| SignalError::Io {
            path: meta.clone(),
            source,
        })?;
        let header = TraceHeader::parse(&text).map_err(|message| SignalError::Header {
            path: meta.clone(),
            message,
        })?;
        let data = fs::read(path).map_err(|source| SignalError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::with_header(data, header)
    }

    /// Writes the payload verbatim plus its sidecar header.
    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, &self.data[..]).map_err(|source| SignalError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let meta = meta_path(path);
        fs::write(&meta, self.header.to_meta_string())
            .map_err(|source| SignalError::Io { path: meta, source })
    }

    pub fn header(&self) -> &TraceHeader {
        &self.header
    }

    pub fn bytes(&self) -> &[u8] {
        &self.data
    }
}

/// Generator behind a [`SourceSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Generator {
    /// Replay of a recorded `.chaos` file.
    Trace { path: PathBuf },
    /// Logistic map `x <- r x (1 - x)`.
    Logistic {
        #[serde(default = "default_logistic_r")]
        r: f64,
    },
    /// Tent map `x <- slope * min(x, 1 - x)`.
    Tent {
        #[serde(default = "default_tent_slope")]
        slope: f64,
    },
    /// Gaussian AR(1) process `x <- phi x + noise`.
    Ar1 {
        phi: f64,
        #[serde(default = "default_noise_std")]
        noise_std: f64,
    },
    /// Independent uniform codes.
    Uniform {},
}

fn default_logistic_r() -> f64 {
    4.0
}

fn default_tent_slope() -> f64 {
    1.9999
}

fn default_noise_std() -> f64 {
    1.0
}

/// What happens when a trace replay runs past its last sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WrapPolicy {
    #[default]
    Wrap,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub generator: Generator,
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default)]
    pub wrap_policy: WrapPolicy,
}

fn default_stride() -> usize {
    1
}

impl Default for SourceSpec {
    /// Negatively autocorrelated AR(1) surrogate for laser chaos.
    fn default() -> Self {
        Self::new(Generator::Ar1 {
            phi: -0.6,
            noise_std: 1.0,
        })
    }
}

impl SourceSpec {
    pub fn new(generator: Generator) -> Self {
        Self {
            generator,
            stride: 1,
            wrap_policy: WrapPolicy::Wrap,
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_wrap_policy(mut self, wrap_policy: WrapPolicy) -> Self {
        self.wrap_policy = wrap_policy;
        self
    }

    /// Checks parameter ranges without touching the filesystem.
    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(SignalError::InvalidParameter("stride must be at least 1".into()));
        }
        match self.generator {
            Generator::Trace { .. } | Generator::Uniform {} => Ok(()),
            Generator::Logistic { r } => {
                if r > 0.0 && r <= 4.0 {
                    Ok(())
                } else {
                    Err(SignalError::InvalidParameter(format!(
                        "logistic r must lie in (0, 4], got {r}"
                    )))
                }
            }
            Generator::Tent { slope } => {
                if slope > 0.0 && slope <= 2.0 {
                    Ok(())
                } else {
                    Err(SignalError::InvalidParameter(format!(
                        "tent slope must lie in (0, 2], got {slope}"
                    )))
                }
            }
            Generator::Ar1 { phi, noise_std } => {
                if phi.is_nan() || phi.abs() >= 1.0 {
                    return Err(SignalError::InvalidParameter(format!(
                        "ar1 coefficient must satisfy |phi| < 1, got {phi}"
                    )));
                }
                if !(noise_std > 0.0 && noise_std.is_finite()) {
                    return Err(SignalError::InvalidParameter(format!(
                        "ar1 noise_std must be positive, got {noise_std}"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Opens the source, loading the trace file when the generator is a replay.
    pub fn open(&self, seed: u64) -> Result<SignalSource> {
        self.validate()?;
        match &self.generator {
            Generator::Trace { path } => {
                let trace = Trace::load(path)?;
                SignalSource::from_trace(&trace, self.stride, self.wrap_policy)
            }
            _ => Ok(SignalSource::synthetic(self, seed)),
        }
    }
}

/// Opens `spec` deterministically from `seed`.
pub fn open_source(spec: &SourceSpec, seed: u64) -> Result<SignalSource> {
    spec.open(seed)
}

#[derive(Debug, Clone)]
enum Engine {
    Replay {
        data: Arc<[u8]>,
        cursor: usize,
        wrap: WrapPolicy,
    },
    Logistic {
        x: f64,
        r: f64,
        rng: ChaCha8Rng,
    },
    Tent {
        x: f64,
        slope: f64,
        rng: ChaCha8Rng,
    },
    Ar1 {
        x: f64,
        phi: f64,
        noise_std: f64,
        clip: f64,
        rng: ChaCha8Rng,
    },
    Uniform {
        rng: ChaCha8Rng,
    },
}

/// Rescales `x` from `[lo, hi]` onto the code range and rounds half-up.
fn to_code(x: f64, lo: f64, hi: f64) -> u8 {
    let scaled = (x.clamp(lo, hi) - lo) / (hi - lo) * f64::from(CODE_MAX);
    (scaled + 0.5).floor().min(f64::from(CODE_MAX)) as u8
}

/// Draws a map state strictly inside (0, 1).
fn interior_point(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let x: f64 = rng.random();
        if x > 0.0 {
            return x;
        }
    }
}

impl Engine {
    fn current(&self) -> Result<u8> {
        Ok(match self {
            Engine::Replay { data, cursor, .. } => match data.get(*cursor) {
                Some(&b) => b,
                None => return Err(SignalError::Exhausted { length: data.len() }),
            },
            Engine::Logistic { x, .. } | Engine::Tent { x, .. } => to_code(*x, 0.0, 1.0),
            Engine::Ar1 { x, clip, .. } => to_code(*x, -*clip, *clip),
            Engine::Uniform { .. } => unreachable!("uniform codes are drawn in advance"),
        })
    }

    fn advance(&mut self, steps: usize) {
        match self {
            Engine::Replay { data, cursor, wrap } => {
                *cursor = match wrap {
                    WrapPolicy::Wrap => (*cursor + steps) % data.len(),
                    WrapPolicy::Error => cursor.saturating_add(steps),
                };
            }
            Engine::Logistic { x, r, rng } => {
                for _ in 0..steps {
                    *x = *r * *x * (1.0 - *x);
                    // Floating-point orbits can land on the absorbing point 0.
                    if !(*x > 0.0 && *x < 1.0) {
                        *x = interior_point(rng);
                    }
                }
            }
            Engine::Tent { x, slope, rng } => {
                for _ in 0..steps {
                    *x = *slope * x.min(1.0 - *x);
                    if !(*x > 0.0 && *x < 1.0) {
                        *x = interior_point(rng);
                    }
                }
            }
            Engine::Ar1 {
                x,
                phi,
                noise_std,
                rng,
                ..
            } => {
                for _ in 0..steps {
                    let eps: f64 = StandardNormal.sample(rng);
                    *x = *phi * *x + *noise_std * eps;
                }
            }
            Engine::Uniform { .. } => {}
        }
    }
}

/// Stateful sample stream. Cloning yields an independent copy at the same cursor.
#[derive(Debug, Clone)]
pub struct SignalSource {
    initial: Engine,
    engine: Engine,
    stride: usize,
}

impl SignalSource {
    /// Replays `trace` from its first sample.
    pub fn from_trace(trace: &Trace, stride: usize, wrap: WrapPolicy) -> Result<Self> {
        if stride == 0 {
            return Err(SignalError::InvalidParameter("stride must be at least 1".into()));
        }
        let engine = Engine::Replay {
            data: Arc::clone(&trace.data),
            cursor: 0,
            wrap,
        };
        Ok(Self {
            initial: engine.clone(),
            engine,
            stride,
        })
    }

    fn synthetic(spec: &SourceSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let engine = match spec.generator {
            Generator::Logistic { r } => Engine::Logistic {
                x: interior_point(&mut rng),
                r,
                rng,
            },
            Generator::Tent { slope } => Engine::Tent {
                x: interior_point(&mut rng),
                slope,
                rng,
            },
            Generator::Ar1 { phi, noise_std } => {
                let sd = noise_std / (1.0 - phi * phi).sqrt();
                let start: f64 = StandardNormal.sample(&mut rng);
                Engine::Ar1 {
                    x: sd * start,
                    phi,
                    noise_std,
                    clip: AR1_CLIP_SIGMAS * sd,
                    rng,
                }
            }
            Generator::Uniform {} => Engine::Uniform { rng },
            Generator::Trace { .. } => unreachable!("trace sources are loaded from disk"),
        };
        Self {
            initial: engine.clone(),
            engine,
            stride: spec.stride,
        }
    }

    /// A copy rewound to the state the source was opened in.
    pub fn fresh(&self) -> Self {
        Self {
            initial: self.initial.clone(),
            engine: self.initial.clone(),
            stride: self.stride,
        }
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    /// Emits the sample under the cursor, then advances by `stride`.
    pub fn next_sample(&mut self) -> Result<SignalSample> {
        if let Engine::Uniform { rng } = &mut self.engine {
            let mut code: u8 = rng.random();
            for _ in 1..self.stride {
                code = rng.random();
            }
            return Ok(SignalSample(code));
        }
        let code = self.engine.current()?;
        self.engine.advance(self.stride);
        Ok(SignalSample(code))
    }

    /// Reads `n` samples from a fresh copy; `self` is not advanced.
    pub fn preview(&self, n: usize) -> Result<Vec<u8>> {
        let mut copy = self.fresh();
        (0..n).map(|_| copy.next_sample().map(SignalSample::raw)).collect()
    }

    /// Five-level calibration on the range-spanning grid.
    pub fn calibrate(&self, n: usize) -> Result<CalibrationStats> {
        self.calibrate_with(n, &RANGE_GRID)
    }

    pub fn calibrate_with(&self, n: usize, grid: &[f64; LEVEL_COUNT]) -> Result<CalibrationStats> {
        if n < MIN_CALIBRATION_SAMPLES {
            return Err(SignalError::TooFewSamples {
                min: MIN_CALIBRATION_SAMPLES,
                got: n,
            });
        }
        CalibrationStats::from_codes(&self.preview(n)?, grid)
    }

    /// Sample autocorrelation at lags `1..=max_lag` over `n` samples of a fresh copy.
    pub fn autocorrelation(&self, n: usize, max_lag: usize) -> Result<Vec<f64>> {
        if max_lag == 0 || n <= 10 * max_lag {
            return Err(SignalError::TooFewSamples {
                min: 10 * max_lag + 1,
                got: n,
            });
        }
        let values: Vec<f64> = self.preview(n)?.into_iter().map(f64::from).collect();
        autocorrelation(&values, max_lag)
    }
}

/// Normalized sample autocorrelation at lags `1..=max_lag`.
///
/// Each lag-k cross moment is averaged over its `n - k` overlapping pairs and
/// divided by the lag-0 variance, so a strictly alternating sequence gives
/// exactly -1 at lag 1.
pub fn autocorrelation(values: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let n = values.len();
    if max_lag >= n {
        return Err(SignalError::TooFewSamples {
            min: max_lag + 1,
            got: n,
        });
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = values.iter().map(|v| v - mean).collect();
    let variance = centered.iter().map(|c| c * c).sum::<f64>() / n as f64;
    if variance == 0.0 {
        return Err(SignalError::ZeroVariance(n));
    }
    Ok((1..=max_lag)
        .map(|lag| {
            let cross: f64 = centered
                .iter()
                .zip(&centered[lag..])
                .map(|(a, b)| a * b)
                .sum();
            cross / (n - lag) as f64 / variance
        })
        .collect())
}

/// Signal values at the five threshold levels, lowest first.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationStats {
    quantiles: [f64; LEVEL_COUNT],
    sample_count: usize,
}

impl CalibrationStats {
    pub fn new(quantiles: [f64; LEVEL_COUNT], sample_count: usize) -> Result<Self> {
        if quantiles.iter().any(|q| !q.is_finite()) {
            return Err(SignalError::InvalidParameter("quantiles must be finite".into()));
        }
        if quantiles.windows(2).any(|w| w[0] > w[1]) {
            return Err(SignalError::InvalidParameter(
                "quantiles must be non-decreasing".into(),
            ));
        }
        if sample_count == 0 {
            return Err(SignalError::InvalidParameter("sample_count must be positive".into()));
        }
        Ok(Self {
            quantiles,
            sample_count,
        })
    }

    /// Nearest-rank quantiles of `codes` at the cumulative probabilities in `grid`.
    pub fn from_codes(codes: &[u8], grid: &[f64; LEVEL_COUNT]) -> Result<Self> {
        let n = codes.len();
        if n == 0 {
            return Err(SignalError::TooFewSamples { min: 1, got: 0 });
        }
        let mut histogram = [0usize; 256];
        for &c in codes {
            histogram[usize::from(c)] += 1;
        }
        if histogram.iter().filter(|&&count| count > 0).count() < 2 {
            return Err(SignalError::ZeroVariance(n));
        }
        let mut quantiles = [0.0; LEVEL_COUNT];
        for (q, &p) in quantiles.iter_mut().zip(grid) {
            let rank = ((p * n as f64).ceil() as usize).clamp(1, n);
            let mut seen = 0;
            for (code, &count) in histogram.iter().enumerate() {
                seen += count;
                if seen >= rank {
                    *q = code as f64;
                    break;
                }
            }
        }
        Self::new(quantiles, n)
    }

    pub fn quantiles(&self) -> &[f64; LEVEL_COUNT] {
        &self.quantiles
    }

    /// Signal value of `level` in `-2..=2`.
    pub fn level(&self, level: i32) -> f64 {
        let half = (LEVEL_COUNT / 2) as i32;
        self.quantiles[(level.clamp(-half, half) + half) as usize]
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }
}
