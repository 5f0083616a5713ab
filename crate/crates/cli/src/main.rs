use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chaos_bandit::config::{self, ConfigError, ExperimentConfig, ExperimentKind, FULL_SCALE_REPETITIONS};
use chaos_bandit::harness::{self, Execution, HarnessError};
use chaos_bandit::signal::{SignalError, Trace, TraceHeader, DEFAULT_SAMPLE_INTERVAL_PS, RESOLUTION_BITS};
use clap::{Args, Parser, Subcommand};
use thiserror::Error;

mod output;

#[derive(Debug, Parser)]
#[command(name = "chaos-bandit", version, about = "Chaos-signal threshold cascade bandit experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the two-armed switching Bernoulli study and write csr_curve.csv.
    SimulateBandit(RunArgs),
    /// Run the four-channel throughput scenario and write selection_log.csv.
    SimulateChannel(RunArgs),
    /// Write the sample autocorrelation of a signal source to acf.csv.
    AnalyzeSignal(AnalyzeArgs),
    /// Wrap raw 8-bit samples into a .chaos payload plus .chaos.meta header.
    ConvertTrace(ConvertArgs),
    /// Check a config document and print it with all defaults filled in.
    ValidateConfig(ValidateArgs),
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// TOML config document; built-in defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key by dotted path, e.g. `omega.mode=flexible`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Override `master_seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Use the full repetition count of 12000.
    #[arg(long)]
    full_scale: bool,
    /// Worker threads; outputs do not depend on this.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    /// Only the `[source]` table of the document is read.
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Number of samples to analyse.
    #[arg(long, default_value_t = 100_000)]
    n: usize,
    #[arg(long, default_value_t = 20)]
    max_lag: usize,
}

#[derive(Debug, Args)]
struct ConvertArgs {
    /// Raw file of 8-bit samples.
    #[arg(long)]
    input: PathBuf,
    /// Destination payload; the header goes to `<output>.meta`.
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SAMPLE_INTERVAL_PS)]
    sample_interval_ps: u64,
    /// Expected sample count; conversion fails if the payload disagrees.
    #[arg(long)]
    length: Option<u64>,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<SignalError> for CliError {
    fn from(e: SignalError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Config(e) => e.into(),
            e @ HarnessError::WrongKind { .. } => CliError::Config(format!("invalid value for `experiment`: {e}")),
            e => CliError::Runtime(e.to_string()),
        }
    }
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

type Result<T> = std::result::Result<T, CliError>;

fn read_document(args: &ConfigArgs) -> Result<Option<String>> {
    match &args.config {
        Some(path) => fs::read_to_string(path)
            .map(Some)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display()))),
        None => Ok(None),
    }
}

fn load_config(args: &ConfigArgs, kind: Option<ExperimentKind>) -> Result<ExperimentConfig> {
    let mut overrides = args.overrides.clone();
    if let Some(seed) = args.seed {
        overrides.push(format!("master_seed={seed}"));
    }
    let text = match read_document(args)? {
        Some(text) => text,
        None => {
            let kind = kind.ok_or_else(|| CliError::Config("`--config` is required".into()))?;
            ExperimentConfig::default_for(kind).to_toml_string()
        }
    };
    let config = ExperimentConfig::from_toml_str(&text, &overrides)?;
    if let Some(kind) = kind {
        if config.experiment != kind {
            return Err(CliError::Config(format!(
                "invalid value for `experiment`: expected {kind:?}, found {:?}",
                config.experiment
            )));
        }
    }
    Ok(config)
}

fn prepare_out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))
}

fn execution(threads: Option<usize>) -> Execution {
    threads.map_or_else(Execution::default, Execution::with_threads)
}

fn simulate(args: &RunArgs, kind: ExperimentKind) -> Result<()> {
    let mut config = load_config(&args.config, Some(kind))?;
    if args.full_scale {
        config.repetitions = FULL_SCALE_REPETITIONS;
    }
    prepare_out_dir(&args.out_dir)?;
    let result = harness::run_experiment(&config, execution(args.threads))?;
    let dir = &args.out_dir;
    let summary = dir.join(output::SUMMARY);
    match kind {
        ExperimentKind::Bandit => {
            let path = dir.join(output::CSR_CURVE);
            output::write_csr_curve(&path, &result).map_err(|e| io_error(&path, e))?;
            output::write_summary(&summary, &output::BanditSummary::new(&result))
                .map_err(|e| io_error(&summary, e))?;
            println!("average_csr = {}", result.average_csr);
        }
        ExperimentKind::Channel => {
            let path = dir.join(output::SELECTION_LOG);
            output::write_selection_log(&path, &result).map_err(|e| io_error(&path, e))?;
            let path = dir.join(output::CHANNEL_CURVE);
            output::write_channel_curve(&path, &result).map_err(|e| io_error(&path, e))?;
            let report = output::ChannelSummary::new(&result);
            output::write_summary(&summary, &report).map_err(|e| io_error(&summary, e))?;
            println!("best_channel_rate = {}", report.best_channel_rate);
            println!("mean_throughput_mbps = {}", report.mean_throughput_mbps);
        }
    }
    Ok(())
}

fn analyze(args: &AnalyzeArgs) -> Result<()> {
    let text = read_document(&args.config)?.unwrap_or_default();
    let spec = config::source_from_toml_str(&text, &args.config.overrides)?;
    if args.max_lag == 0 || args.max_lag >= args.n {
        return Err(CliError::Config(format!(
            "invalid value for `max_lag`: must lie in 1..{}",
            args.n
        )));
    }
    let seed = args.config.seed.unwrap_or(1);
    let source = spec.open(seed)?;
    let acf = source.autocorrelation(args.n, args.max_lag)?;
    prepare_out_dir(&args.out_dir)?;
    let path = args.out_dir.join(output::ACF);
    output::write_acf(&path, &acf).map_err(|e| io_error(&path, e))?;
    println!("lag1_autocorrelation = {}", acf[0]);
    Ok(())
}

fn convert(args: &ConvertArgs) -> Result<()> {
    let data = fs::read(&args.input).map_err(|e| io_error(&args.input, e))?;
    let header = TraceHeader {
        sample_interval_ps: args.sample_interval_ps,
        resolution_bits: RESOLUTION_BITS,
        length: args.length.unwrap_or(data.len() as u64),
    };
    let trace = Trace::with_header(data, header)?;
    if let Some(parent) = args.output.parent().filter(|p| !p.as_os_str().is_empty()) {
        prepare_out_dir(parent)?;
    }
    trace.write(&args.output)?;
    println!("length = {}", trace.header().length);
    Ok(())
}

fn validate(args: &ValidateArgs) -> Result<()> {
    let config = load_config(&args.config, None)?;
    if config.uses_trace() {
        config.source.open(0)?;
    }
    print!("{}", config.to_toml_string());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SimulateBandit(args) => simulate(&args, ExperimentKind::Bandit),
        Command::SimulateChannel(args) => simulate(&args, ExperimentKind::Channel),
        Command::AnalyzeSignal(args) => analyze(&args),
        Command::ConvertTrace(args) => convert(&args),
        Command::ValidateConfig(args) => validate(&args),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
