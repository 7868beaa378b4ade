//! End-to-end experiment driver: ingest, split, spread, impute, evaluate
//! and write the result files.

use std::fmt::Write as _;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{self, DataSplit, IndexMap, LinkSet};
use crate::error::{Error, Result};
use crate::evaluation::{build_report, MetricsReport};
use crate::imputation::{
    self, default_k_grid, IllsConfig, IllsTrace, KPoint, PassOptions, RegressionRows, SimilarityBasis,
};
use crate::spreading::{self, ScoreMatrix, SpreadStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Spreading only.
    ProbsOnly,
    /// Spreading followed by iterative local least squares.
    Ills,
    /// Local least squares straight on the binary matrix, fixed K.
    RawIlls,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::ProbsOnly => "probs-only",
            Mode::Ills => "ills",
            Mode::RawIlls => "raw-ills",
        }
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "probs-only" => Ok(Mode::ProbsOnly),
            "ills" => Ok(Mode::Ills),
            "raw-ills" => Ok(Mode::RawIlls),
            other => Err(Error::Config(format!(
                "unknown mode {other:?} (expected probs-only, ills or raw-ills)"
            ))),
        }
    }
}

/// Every knob of an experiment. Keys match the command line flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct ExperimentConfig {
    pub input: PathBuf,
    pub delimiter: char,
    pub threshold: f64,
    pub ratio: f64,
    pub seed: u64,
    pub mode: Mode,
    pub k_grid: Vec<f64>,
    pub full_k_scan: bool,
    pub baseline_k: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub mask_fraction: f64,
    pub lists: Vec<usize>,
    pub out: PathBuf,
    /// Subsample links (before splitting) down to this density.
    pub subsample_density: Option<f64>,
    /// Also write the final score matrix as binary dumps.
    pub dump_scores: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            input: PathBuf::from("data/ml-100k/u.data"),
            delimiter: '\t',
            threshold: 3.0,
            ratio: 0.1,
            seed: 0,
            mode: Mode::Ills,
            k_grid: default_k_grid(),
            full_k_scan: false,
            baseline_k: 0.3,
            max_iters: 10,
            tol: 1e-4,
            mask_fraction: 0.02,
            lists: vec![10, 20, 50, 100],
            out: PathBuf::from("results"),
            subsample_density: None,
            dump_scores: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !self.threshold.is_finite() {
            return bad(format!("threshold {} is not finite", self.threshold));
        }
        if !(self.ratio > 0.0 && self.ratio < 1.0) {
            return bad(format!("ratio {} must lie in (0, 1)", self.ratio));
        }
        if !(self.baseline_k > 0.0 && self.baseline_k <= 1.0) {
            return bad(format!("baseline-k {} must lie in (0, 1]", self.baseline_k));
        }
        if self.lists.is_empty() || self.lists.contains(&0) {
            return bad("lists must be non-empty positive lengths".into());
        }
        if let Some(d) = self.subsample_density {
            if !(d > 0.0 && d <= 1.0) {
                return bad(format!("subsample-density {d} must lie in (0, 1]"));
            }
        }
        self.ills_config().validate()
    }

    pub fn ills_config(&self) -> IllsConfig {
        IllsConfig {
            k_grid: self.k_grid.clone(),
            full_k_scan: self.full_k_scan,
            max_iterations: self.max_iters,
            convergence_tol: self.tol,
            mask_fraction: self.mask_fraction,
            seed: self.seed,
            regression_rows: RegressionRows::SpreadOnly,
        }
    }
}

/// Binarized (and optionally subsampled) links with their raw identifiers.
pub fn load_links(config: &ExperimentConfig) -> Result<(LinkSet, IndexMap)> {
    let file = fs::File::open(&config.input)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", config.input.display())))?;
    let records = dataset::parse_ratings(BufReader::new(file), config.delimiter)?;
    let (links, map) = dataset::binarize(&records, config.threshold)?;
    match config.subsample_density {
        Some(target) => {
            let sub = dataset::subsample_to_density(&links, target, config.seed)?;
            let map = sub.remap(&map);
            Ok((sub.links, map))
        }
        None => Ok((links, map)),
    }
}

pub fn load_split(config: &ExperimentConfig) -> Result<(DataSplit, IndexMap)> {
    let (links, map) = load_links(config)?;
    Ok((dataset::split_train_probe(&links, config.ratio, config.seed)?, map))
}

/// Everything one run produces.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub report: MetricsReport,
    pub trace: Option<IllsTrace>,
    pub spread_stats: Option<SpreadStats>,
    pub scores: ScoreMatrix,
    pub split: DataSplit,
}

/// Runs the configured mode on an existing split without touching disk.
pub fn run_on_split(config: &ExperimentConfig, split: DataSplit) -> Result<Outcome> {
    config.validate()?;
    let graph = dataset::build_graph(&split.training);
    let (scores, trace, spread_stats) = match config.mode {
        Mode::ProbsOnly => {
            let scores = spreading::densify(&graph);
            let stats = spreading::spread_stats(&scores);
            (scores, None, Some(stats))
        }
        Mode::Ills => {
            let dense = spreading::densify(&graph);
            let stats = spreading::spread_stats(&dense);
            let (scores, trace) = imputation::run_ills(&dense, &config.ills_config())?;
            (scores, Some(trace), Some(stats))
        }
        Mode::RawIlls => {
            let binary = ScoreMatrix::from_graph_binary(&graph);
            let k = ((config.baseline_k * graph.user_count() as f64).round() as usize).max(1);
            let scores = imputation::impute_iteration(
                &binary,
                PassOptions {
                    k,
                    basis: SimilarityBasis::Adjacency,
                    rows: RegressionRows::AllKnown,
                },
            )?;
            let trace = IllsTrace {
                chosen_k: k,
                nrmse_per_iteration: Vec::new(),
                iterations_run: 1,
                converged: true,
            };
            (scores, Some(trace), None)
        }
    };
    let mut report = build_report(&scores, &split, &config.lists, trace.as_ref())?;
    report.config.mode = Some(config.mode.as_str().to_string());
    report.config.threshold = Some(config.threshold);
    Ok(Outcome {
        report,
        trace,
        spread_stats,
        scores,
        split,
    })
}

/// Full pipeline. Writes `report.json`, `metrics.csv` and, when a trace
/// exists, `trace.json` to the output directory.
pub fn run_experiment(config: &ExperimentConfig) -> Result<MetricsReport> {
    config.validate()?;
    let (split, _) = load_split(config)?;
    let outcome = run_on_split(config, split)?;
    write_outcome(config, &outcome)?;
    Ok(outcome.report)
}

pub fn write_outcome(config: &ExperimentConfig, outcome: &Outcome) -> Result<()> {
    fs::create_dir_all(&config.out)?;
    fs::write(config.out.join("report.json"), serde_json::to_string_pretty(&outcome.report)? + "\n")?;
    fs::write(config.out.join("metrics.csv"), outcome.report.to_csv())?;
    if let Some(trace) = &outcome.trace {
        fs::write(config.out.join("trace.json"), serde_json::to_string_pretty(trace)? + "\n")?;
    }
    if config.dump_scores {
        outcome
            .scores
            .write_dump(&config.out.join("scores.f64"), &config.out.join("provenance.u8"))?;
    }
    Ok(())
}

/// NRMSE against K on the validation mask, without iterating. Writes
/// `k_sweep.csv` (`K,K_fraction,NRMSE`).
pub fn sweep_k(config: &ExperimentConfig) -> Result<Vec<KPoint>> {
    config.validate()?;
    if config.mode != Mode::Ills {
        return Err(Error::Config("sweep-k requires mode ills".into()));
    }
    let (split, _) = load_split(config)?;
    let curve = sweep_k_on_split(config, &split)?;
    fs::create_dir_all(&config.out)?;
    fs::write(config.out.join("k_sweep.csv"), k_curve_csv(&curve))?;
    Ok(curve)
}

pub fn sweep_k_on_split(config: &ExperimentConfig, split: &DataSplit) -> Result<Vec<KPoint>> {
    let dense = spreading::densify(&dataset::build_graph(&split.training));
    let ills = config.ills_config();
    let (masked, mask) = imputation::make_validation_mask(&dense, ills.mask_fraction, ills.seed)?;
    imputation::k_curve(&masked, &mask, &ills)
}

pub fn k_curve_csv(curve: &[KPoint]) -> String {
    let mut out = String::from("K,K_fraction,NRMSE\n");
    for p in curve {
        let _ = writeln!(out, "{},{},{}", p.k, p.fraction, p.nrmse);
    }
    out
}

/// Density report of a dataset and its training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub users: usize,
    pub items: usize,
    pub links: usize,
    pub density: f64,
    pub training_links: usize,
    pub probe_links: usize,
    pub spread: SpreadStats,
}

pub fn dataset_stats(config: &ExperimentConfig) -> Result<DatasetStats> {
    let (links, _) = load_links(config)?;
    let split = dataset::split_train_probe(&links, config.ratio, config.seed)?;
    let dense = spreading::densify(&dataset::build_graph(&split.training));
    let mut spread = spreading::spread_stats(&dense);
    spread.per_user_mass.clear();
    Ok(DatasetStats {
        users: links.user_count(),
        items: links.item_count(),
        links: links.len(),
        density: dataset::density(&links),
        training_links: split.training.len(),
        probe_links: split.probe.len(),
        spread,
    })
}
