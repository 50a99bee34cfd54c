use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use emc_probe::runner::report::{report, Metric};
use emc_probe::runner::{load_records, run_sweep, ExperimentConfig, Pairing};
use emc_probe::Error;

const EXIT_CONFIG: u8 = 1;
const EXIT_PARTIAL: u8 = 2;
const EXIT_IO: u8 = 3;

#[derive(Parser)]
#[command(name = "emc-probe", version, about = "Measure effective model complexity of small networks")]
struct Cli {
    /// Worker threads (overrides the config).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Global seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Skip grid points whose record already exists.
    #[arg(long, global = true)]
    resume: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the sweep described by a config file.
    Run { config: PathBuf },
    /// Summarize the records in an output directory.
    Report {
        dir: PathBuf,
        #[arg(long, value_enum, default_value = "curve")]
        metric: MetricArg,
        /// Variant holding semantic labels.
        #[arg(long, default_value = "semantic")]
        semantic: String,
        /// Variant holding random labels.
        #[arg(long, default_value = "random")]
        random: String,
    },
    /// Parse and check a config without running anything.
    Validate { config: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Curve,
    Avglog,
    Gap,
    Pearson,
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Curve => Metric::Curve,
            MetricArg::Avglog => Metric::Avglog,
            MetricArg::Gap => Metric::Gap,
            MetricArg::Pearson => Metric::Pearson,
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } | Error::Format { .. } | Error::Truncated { .. } | Error::Csv(_) => EXIT_IO,
        _ => EXIT_CONFIG,
    }
}

fn load(path: &PathBuf, cli: &Cli) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(j) = cli.jobs {
        cfg.jobs = j;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Validate { config } => load(config, &cli).map(|cfg| {
            let n = cfg.model_specs().map(|s| s.len()).unwrap_or(0) * cfg.variants.len() * cfg.reparams.len() * cfg.repeats;
            println!("{}: ok ({n} runs)", cfg.name);
            0
        }),
        Command::Run { config } => load(config, &cli).and_then(|cfg| {
            let out = run_sweep(&cfg, cli.resume)?;
            println!(
                "{}: {} records ({} computed, {} failed) in {}",
                cfg.name,
                out.records.len(),
                out.computed,
                out.failed,
                cfg.output_dir.display()
            );
            Ok(if out.failed > 0 { EXIT_PARTIAL } else { 0 })
        }),
        Command::Report { dir, metric, semantic, random } => load_records(dir).and_then(|records| {
            let pairing = Pairing { semantic: semantic.clone(), random: random.clone() };
            print!("{}", report(&records, (*metric).into(), &pairing)?);
            Ok(0)
        }),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
