use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use qgadmm::harness::{self, Algorithm, ExperimentConfig, HarnessError, SeedSummary, SweepSpec};

#[derive(Parser)]
#[command(name = "qgadmm", version, about = "Run Q-GADMM and baseline experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat key = value configuration file.
    #[arg(short, long)]
    config: Option<PathBuf>,
    #[arg(long)]
    algo: Option<Algorithm>,
    /// A single seed or a list such as `0..20` or `1,4,9`.
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    rho: Option<f64>,
    /// Bit width, or `adaptive:<initial>:<floor>`.
    #[arg(long)]
    bits: Option<String>,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one algorithm over the configured seeds.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(short, long, default_value = "out")]
        out: PathBuf,
    },
    /// Run a grid over algorithms, ρ, bit widths and worker counts.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        algos: Vec<Algorithm>,
        #[arg(long, value_delimiter = ',')]
        rhos: Vec<f64>,
        #[arg(long = "bit-widths", value_delimiter = ',')]
        bit_widths: Vec<u32>,
        #[arg(long, value_delimiter = ',')]
        workers: Vec<usize>,
        #[arg(short, long, default_value = "sweep.csv")]
        out: PathBuf,
    },
    /// Turn one or more summary.json files into an energy CDF.
    Cdf {
        #[arg(required = true)]
        summaries: Vec<PathBuf>,
        #[arg(short, long, default_value = "cdf.csv")]
        out: PathBuf,
    },
}

fn load(common: &Common) -> Result<ExperimentConfig, HarnessError> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(algo) = common.algo {
        config.algorithm = algo;
    }
    if let Some(seed) = &common.seed {
        config.set("seeds", seed)?;
    }
    if let Some(rho) = common.rho {
        config.rho = rho;
    }
    if let Some(bits) = &common.bits {
        config.set("bits", bits)?;
    }
    for kv in &common.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| HarnessError::Config(format!("override {kv:?} is not key=value")))?;
        config.set(k, v)?;
    }
    config.validate()?;
    Ok(config)
}

fn run(command: Command) -> Result<(), HarnessError> {
    match command {
        Command::Run { common, out } => {
            let config = load(&common)?;
            info!("running {} over {} seed(s)", config.algorithm, config.seeds.len());
            let outputs = harness::run_experiment(&config)?;
            for o in &outputs {
                match o.summary.iterations_to_target {
                    Some(k) => info!("seed {}: target reached at iteration {k}", o.summary.seed),
                    None => warn!("seed {}: target not reached in {} iterations", o.summary.seed, o.summary.records),
                }
            }
            harness::write_outputs(&out, &outputs)?;
            println!("wrote {} run(s) to {}", outputs.len(), out.display());
        }
        Command::Sweep {
            common,
            algos,
            rhos,
            bit_widths,
            workers,
            out,
        } => {
            let config = load(&common)?;
            let spec = SweepSpec {
                algorithms: algos,
                rhos,
                bits: bit_widths,
                workers,
            };
            let rows = harness::sweep(&config, &spec)?;
            let mut writer = csv::Writer::from_path(&out)?;
            for row in &rows {
                writer.serialize(row)?;
            }
            writer.flush()?;
            println!("wrote {} row(s) to {}", rows.len(), out.display());
        }
        Command::Cdf { summaries, out } => {
            let mut all: Vec<SeedSummary> = Vec::new();
            for path in &summaries {
                let text = std::fs::read_to_string(path)?;
                all.extend(serde_json::from_str::<Vec<SeedSummary>>(&text)?);
            }
            let points = harness::energy_cdf(&all)?;
            let mut writer = csv::Writer::from_path(&out)?;
            writer.write_record(["energy_j", "quantile"])?;
            for (e, q) in points {
                writer.write_record([e.to_string(), q.to_string()])?;
            }
            writer.flush()?;
            println!("wrote CDF to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
