use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use streamres::ingest::FileFormat;
use streamres_cli::bench::{self, BenchGrid};
use streamres_cli::config::PipelineConfig;
use streamres_cli::pipeline::{self, StageFailure};

/// Stream sampling, clustering, event detection and knowledge-graph export.
#[derive(Parser)]
#[command(name = "streamres", version, about)]
struct Cli {
    /// Pipeline config file (JSON; see docs/config.md).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config `out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Chatty progress on stderr.
    #[arg(long, global = true)]
    verbose: bool,
    /// Config overrides as dotted.path=value, repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Full pipeline: ingest, sample, cluster, detect, export.
    Run,
    /// Ingest + budgeted sampling only; writes sampled.jsonl and pool.json.
    Sample,
    /// Windowed clustering of a record file; writes windows.jsonl.
    Cluster(RecordsArg),
    /// Outlier detection for persisted windows; writes events.jsonl.
    Detect(DetectArgs),
    /// Knowledge-graph serialization of persisted windows + events.
    Export(ExportArgs),
    /// Sampling micro-benchmark grid (CSV + aligned table).
    Bench(BenchArgs),
    /// Writes the configured synthetic source to a record file.
    Generate(GenerateArgs),
}

#[derive(Args)]
struct RecordsArg {
    /// Record file produced by `sample` or `generate`.
    #[arg(long)]
    records: PathBuf,
    /// Record file format.
    #[arg(long, value_enum, default_value = "jsonl")]
    format: CliFormat,
}

#[derive(Args)]
struct DetectArgs {
    #[command(flatten)]
    records: RecordsArg,
    /// windows.jsonl produced by `cluster` or `run`.
    #[arg(long)]
    windows: PathBuf,
}

#[derive(Args)]
struct ExportArgs {
    /// windows.jsonl produced by `cluster` or `run`.
    #[arg(long)]
    windows: PathBuf,
    /// events.jsonl produced by `detect` or `run`.
    #[arg(long)]
    events: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Timed loops per cell.
    #[arg(long, default_value_t = 7)]
    repeats: usize,
    /// Comma-separated K values.
    #[arg(long, value_delimiter = ',', default_values_t = [100usize, 4500, 9000])]
    ks: Vec<usize>,
}

#[derive(Args)]
struct GenerateArgs {
    /// Output record file.
    #[arg(long = "file")]
    file: PathBuf,
    /// Output format.
    #[arg(long, value_enum, default_value = "csv")]
    format: CliFormat,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum CliFormat {
    Csv,
    Jsonl,
}

impl From<CliFormat> for FileFormat {
    fn from(f: CliFormat) -> FileFormat {
        match f {
            CliFormat::Csv => FileFormat::Csv,
            CliFormat::Jsonl => FileFormat::Jsonl,
        }
    }
}

fn load_config(cli: &Cli, stage: &'static str) -> Result<PipelineConfig, StageFailure> {
    let Some(path) = &cli.config else {
        return Err(StageFailure {
            stage,
            error: anyhow::anyhow!("--config is required for this command"),
        });
    };
    let mut config = PipelineConfig::load(path, &cli.sets).map_err(|error| StageFailure {
        stage,
        error,
    })?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.out = out.clone();
    }
    Ok(config)
}

fn write_bench_outputs(out: &PathBuf, rows: &[bench::BenchRow]) -> std::io::Result<()> {
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("bench.csv"), bench::render_csv(rows))?;
    std::fs::write(out.join("bench.txt"), bench::render_text(rows))
}

fn dispatch(cli: &Cli) -> Result<(), StageFailure> {
    match &cli.command {
        Command::Run => {
            let config = load_config(cli, "run")?;
            let summary = pipeline::cmd_run(&config, &config.out)?;
            if cli.verbose {
                eprintln!(
                    "run: {} records in, {} sampled, {} windows, {} events",
                    summary.records_ingested,
                    summary.records_sampled,
                    summary.windows,
                    summary.events
                );
            }
            Ok(())
        }
        Command::Sample => {
            let config = load_config(cli, "sample")?;
            pipeline::cmd_sample(&config, &config.out)
        }
        Command::Cluster(args) => {
            let config = load_config(cli, "cluster")?;
            pipeline::cmd_cluster(&config, &args.records, args.format.into(), &config.out)
        }
        Command::Detect(args) => {
            let config = load_config(cli, "detect")?;
            pipeline::cmd_detect(
                &config,
                &args.records.records,
                args.records.format.into(),
                &args.windows,
                &config.out,
            )
        }
        Command::Export(args) => {
            let out = cli
                .out
                .clone()
                .or_else(|| {
                    cli.config
                        .as_ref()
                        .and_then(|p| PipelineConfig::load(p, &cli.sets).ok())
                        .map(|c| c.out)
                })
                .unwrap_or_else(|| PathBuf::from("out"));
            pipeline::cmd_export(&args.windows, &args.events, &out)
        }
        Command::Bench(args) => {
            let grid = BenchGrid {
                ks: args.ks.clone(),
                repeats: args.repeats,
                ..BenchGrid::default()
            };
            let seed = cli.seed.unwrap_or(0);
            let rows = bench::run_grid(&grid, seed).map_err(|error| StageFailure {
                stage: "bench",
                error,
            })?;
            print!("{}", bench::render_text(&rows));
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
            write_bench_outputs(&out, &rows).map_err(|e| StageFailure {
                stage: "bench",
                error: e.into(),
            })
        }
        Command::Generate(args) => {
            let config = load_config(cli, "generate")?;
            pipeline::cmd_generate(&config, &args.file, args.format.into())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("{failure}");
            ExitCode::from(1)
        }
    }
}
