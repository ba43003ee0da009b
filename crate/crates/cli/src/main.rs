use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use omnibeam::config::{ExperimentConfig, Scheme};
use omnibeam::experiment::{self, CdfColumn, TrialRecord};
use omnibeam::{Error, Result};

#[derive(Parser)]
#[command(name = "omnibeam", version, about = "Anti-jamming beamforming with simultaneously transmitting and reflecting surfaces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte-Carlo run of one or more schemes.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// ios, irs_signal, irs_jam, no_ris, a comma list of them, or all.
        #[arg(long)]
        scheme: Option<String>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Repeat a run over several element counts or codebook resolutions.
    Sweep {
        #[arg(long, value_enum)]
        param: Param,
        /// Comma separated. For b, 0 or "c" means continuous phases.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-scheme empirical CDF of a column of a results CSV.
    Cdf {
        #[arg(long = "in")]
        input: PathBuf,
        /// jamming_power, rate or sinr_db.
        #[arg(long, default_value = "jamming_power")]
        column: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Param {
    #[value(name = "M")]
    M,
    #[value(name = "b")]
    B,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            eprintln!("error kind=usage message={}", one_line(&e.kind().to_string()));
            eprint!("{e}");
            return ExitCode::from(2);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error kind={} message={}", e.kind(), one_line(&e.to_string()));
            ExitCode::FAILURE
        }
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Run { config, scheme, trials, seed, out } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = scheme {
                cfg.run.schemes = Scheme::parse_list(&s)?;
            }
            if let Some(t) = trials {
                cfg.run.trials = t;
            }
            if let Some(s) = seed {
                cfg.run.seed = s;
            }
            if out.is_some() {
                cfg.run.output = out;
            }
            let res = experiment::monte_carlo(&cfg)?;
            report(&res.records);
            Ok(())
        }
        Command::Sweep { param, values, config, out } => sweep(param, &values, &config, &out),
        Command::Cdf { input, column, out } => {
            let column: CdfColumn = column.parse()?;
            let rows = experiment::read_csv(&input)?;
            let points = experiment::cdf_by_scheme(&rows, column)?;
            experiment::write_cdf(&out, &points)?;
            println!("wrote {} points to {}", points.len(), out.display());
            Ok(())
        }
    }
}

fn sweep(param: Param, values: &[String], config: &Path, out: &Path) -> Result<()> {
    let base = ExperimentConfig::load(config)?;
    let mut all = Vec::new();
    for v in values {
        let mut cfg = base.clone();
        cfg.run.output = None;
        match param {
            Param::M => cfg.scenario.elements = parse_value(v)?,
            Param::B => {
                // an explicit codebook would pin the resolution
                cfg.scenario.codebook = None;
                cfg.scenario.bits = match v.trim() {
                    "0" | "c" | "cont" | "continuous" => None,
                    s => Some(parse_value(s)?),
                };
            }
        }
        println!("{} = {}", param_name(param), v.trim());
        let res = experiment::monte_carlo(&cfg)?;
        report(&res.records);
        all.extend(res.records);
    }
    experiment::write_csv(out, &all)
}

fn param_name(p: Param) -> &'static str {
    match p {
        Param::M => "M",
        Param::B => "b",
    }
}

fn parse_value<T: std::str::FromStr>(v: &str) -> Result<T> {
    v.trim().parse().map_err(|_| Error::Config(format!("cannot parse sweep value '{v}'")))
}

fn report(records: &[TrialRecord]) {
    for s in experiment::summarize(records) {
        println!("{:<10} trials={:<4} mean_sum_rate={:.4} std={:.4}", s.scheme.name(), s.trials, s.mean_sum_rate, s.std_sum_rate);
    }
}
