use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ills_core::experiment::{self, Outcome};
use ills_core::{dataset, Error, ExperimentConfig, Mode, Result};

#[derive(Parser)]
#[command(name = "ills", version, about = "Spreading + local least squares top-N recommender")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline and write report.json, metrics.csv and trace.json.
    Run(Flags),
    /// Write the train/probe split and its sidecar.
    Split(Flags),
    /// Write the NRMSE-versus-K curve to k_sweep.csv.
    SweepK(Flags),
    /// Print dataset and spreading statistics as JSON.
    Stats(Flags),
}

#[derive(Args, Default)]
struct Flags {
    /// JSON config file with flat keys; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    /// Field separator; `tab` and `\t` mean a tab.
    #[arg(long)]
    delimiter: Option<String>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    ratio: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// probs-only, ills or raw-ills.
    #[arg(long)]
    mode: Option<String>,
    /// Comma-separated K fractions of the user count.
    #[arg(long, value_delimiter = ',')]
    k_grid: Option<Vec<f64>>,
    #[arg(long)]
    full_k_scan: bool,
    #[arg(long)]
    baseline_k: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    mask_fraction: Option<f64>,
    /// Comma-separated list lengths.
    #[arg(long, value_delimiter = ',')]
    lists: Option<Vec<usize>>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Subsample links down to this density before splitting.
    #[arg(long)]
    subsample_density: Option<f64>,
    /// Also dump the final score matrix.
    #[arg(long)]
    dump_scores: bool,
}

impl Flags {
    fn resolve(self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_json_file(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = self.input {
            cfg.input = v;
        }
        if let Some(v) = self.delimiter {
            cfg.delimiter = parse_delimiter(&v)?;
        }
        if let Some(v) = self.threshold {
            cfg.threshold = v;
        }
        if let Some(v) = self.ratio {
            cfg.ratio = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.mode {
            cfg.mode = v.parse::<Mode>()?;
        }
        if let Some(v) = self.k_grid {
            cfg.k_grid = v;
        }
        cfg.full_k_scan |= self.full_k_scan;
        if let Some(v) = self.baseline_k {
            cfg.baseline_k = v;
        }
        if let Some(v) = self.max_iters {
            cfg.max_iters = v;
        }
        if let Some(v) = self.tol {
            cfg.tol = v;
        }
        if let Some(v) = self.mask_fraction {
            cfg.mask_fraction = v;
        }
        if let Some(v) = self.lists {
            cfg.lists = v;
        }
        if let Some(v) = self.out {
            cfg.out = v;
        }
        if self.subsample_density.is_some() {
            cfg.subsample_density = self.subsample_density;
        }
        cfg.dump_scores |= self.dump_scores;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_delimiter(raw: &str) -> Result<char> {
    match raw {
        "tab" | "\\t" => Ok('\t'),
        "space" => Ok(' '),
        _ => {
            let mut chars = raw.chars();
            match (chars.next(), chars.next()) {
                (Some(c), None) => Ok(c),
                _ => Err(Error::Config(format!("delimiter must be one character, got {raw:?}"))),
            }
        }
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Run(flags) => {
            let cfg = flags.resolve()?;
            let (split, _) = experiment::load_split(&cfg)?;
            let outcome: Outcome = experiment::run_on_split(&cfg, split)?;
            experiment::write_outcome(&cfg, &outcome)?;
            println!("{}", serde_json::to_string_pretty(&outcome.report)?);
        }
        Command::Split(flags) => {
            let cfg = flags.resolve()?;
            let (split, map) = experiment::load_split(&cfg)?;
            dataset::write_split(&split, &map, &cfg.out)?;
            println!(
                "training {} probe {} -> {}",
                split.training.len(),
                split.probe.len(),
                cfg.out.display()
            );
        }
        Command::SweepK(flags) => {
            let cfg = flags.resolve()?;
            let curve = experiment::sweep_k(&cfg)?;
            print!("{}", experiment::k_curve_csv(&curve));
        }
        Command::Stats(flags) => {
            let cfg = flags.resolve()?;
            let stats = experiment::dataset_stats(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&stats)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
