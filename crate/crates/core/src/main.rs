use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::AtomicBool;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use kline_corpus::config::{BackendKind, PipelineConfig, StageSelection};
use kline_corpus::dataset::{compute_stats, load_records};
use kline_corpus::pipeline::{build_backend, run_pipeline};
use kline_corpus::synth::synthetic_csv;
use kline_corpus::trend::{read_predictions, score_corpus};
use kline_corpus::validate::validate_corpus;

/// Build chart-image + dialog instruction-tuning corpora from daily OHLCV history.
#[derive(Parser)]
#[command(name = "kline-corpus", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate (or resume) a corpus.
    Generate(Box<GenerateArgs>),
    /// Print per-stage word-count statistics for a corpus.
    Stats {
        corpus: PathBuf,
        #[arg(long, value_enum, default_value_t = StatsFormat::Table)]
        format: StatsFormat,
    },
    /// Re-check every record, image and manifest count of a corpus.
    Validate { corpus: PathBuf },
    /// Score direction predictions against the corpus trend labels.
    EvalTrend {
        corpus: PathBuf,
        /// Two-column file: record_id,direction (up/down/flat, empty to abstain).
        #[arg(long)]
        predictions: PathBuf,
    },
    /// Write a synthetic OHLCV CSV for trying the pipeline out.
    SampleData {
        #[arg(long, default_value = "sample.csv")]
        output: PathBuf,
        #[arg(long, default_value_t = 5)]
        symbols: usize,
        #[arg(long, default_value_t = 500)]
        days: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Print the default configuration as TOML.
    DefaultConfig,
}

#[derive(Clone, Copy, ValueEnum)]
enum StatsFormat {
    Table,
    Csv,
    Json,
}

#[derive(Args)]
struct GenerateArgs {
    /// TOML configuration file; flags below override its keys.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Input CSV files (replace the configured list).
    #[arg(long = "input", short)]
    inputs: Vec<PathBuf>,
    #[arg(long, short)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    ticker_map: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    stage: Option<StageSelection>,
    #[arg(long)]
    pretrain_count: Option<usize>,
    #[arg(long)]
    instruct_count: Option<usize>,
    #[arg(long)]
    chunk_size: Option<usize>,
    /// Re-send records quarantined by an earlier run.
    #[arg(long)]
    reannotate_rejects: bool,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long, value_enum)]
    backend: Option<BackendKind>,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    /// Name of the environment variable holding the API key.
    #[arg(long)]
    api_key_env: Option<String>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    max_in_flight: Option<usize>,
    #[arg(long)]
    prompts_dir: Option<PathBuf>,
}

impl GenerateArgs {
    fn into_config(self) -> Result<PipelineConfig> {
        let mut c = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        if !self.inputs.is_empty() {
            c.inputs = self.inputs;
        }
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = self.$flag { c.$($field).+ = v; })*
            };
        }
        set!(
            output_dir => output_dir,
            seed => seed,
            stage => stage,
            pretrain_count => pretrain_count,
            instruct_count => instruct_count,
            chunk_size => chunk_size,
            epsilon => trend_epsilon,
            backend => backend.kind,
            endpoint => backend.http.endpoint,
            model => backend.http.model,
            api_key_env => backend.http.api_key_env,
            temperature => backend.http.temperature,
            max_in_flight => backend.max_in_flight,
        );
        if self.reannotate_rejects {
            c.reannotate_rejects = true;
        }
        if self.ticker_map.is_some() {
            c.ticker_map = self.ticker_map;
        }
        if self.prompts_dir.is_some() {
            c.prompts.dir = self.prompts_dir;
        }
        if c.inputs.is_empty() {
            bail!("no input files: pass --input or set `inputs` in the config");
        }
        c.validate()?;
        Ok(c)
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn load_corpus(dir: &Path) -> Result<Vec<kline_corpus::dataset::DatasetRecord>> {
    load_records(dir).with_context(|| format!("reading corpus in {}", dir.display()))
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Generate(args) => {
            let config = (*args).into_config()?;
            let backend = build_backend(&config)?;
            let summary = run_pipeline(&config, backend.as_ref(), &AtomicBool::new(false))?;
            print_json(&summary)?;
            if let Some(reason) = &summary.aborted {
                eprintln!("error: {reason}");
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Stats { corpus, format } => {
            let stats = compute_stats(&load_corpus(&corpus)?)?;
            match format {
                StatsFormat::Table => print!("{}", stats.render_table()),
                StatsFormat::Csv => print!("{}", stats.render_csv()),
                StatsFormat::Json => print_json(&stats)?,
            }
        }
        Command::Validate { corpus } => {
            let report = validate_corpus(&corpus)?;
            for v in &report.violations {
                eprintln!("{v}");
            }
            print_json(&report)?;
            if !report.is_clean() {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::EvalTrend { corpus, predictions } => {
            let records = load_corpus(&corpus)?;
            let preds = read_predictions(&predictions)?;
            let known: std::collections::HashSet<_> = records.iter().map(|r| &r.id).collect();
            let unknown = preds.keys().filter(|id| !known.contains(id)).count();
            if unknown > 0 {
                log::warn!("{unknown} prediction(s) name records that are not in the corpus");
            }
            print_json(&score_corpus(&records, &preds)?)?;
        }
        Command::SampleData {
            output,
            symbols,
            days,
            seed,
        } => {
            let tickers: Vec<String> = (0..symbols).map(|i| format!("{:06}", 600_000 + i)).collect();
            let refs: Vec<&str> = tickers.iter().map(String::as_str).collect();
            std::fs::write(&output, synthetic_csv(&refs, days, seed))
                .with_context(|| format!("writing {}", output.display()))?;
            eprintln!("wrote {} rows to {}", symbols * days, output.display());
        }
        Command::DefaultConfig => print!("{}", PipelineConfig::default().to_toml()),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
