//! File-based front end: run configuration, dataset/model/trace formats and
//! the `simulate`, `fit`, `sweep`, `evaluate` and `clusters` commands.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::clusters::{
    ccp, constant_similarity_matrix, cosine_similarity_matrix, export_graph, from_state,
    ClusterGraph,
};
use crate::error::{Error, Result};
use crate::eval::{crps, predictions, quantile_residuals, report};
use crate::init::{initialize, InitConfig};
use crate::model::{Dataset, ParameterSet, SimilarityMatrix};
use crate::simgen::{generate, reference_truth, Partition, SimConfig};
use crate::solver::{fit, AdmmState, FitConfig, FitResult, IterationRecord};

pub const MODEL_FORMAT: &str = "fmr-cluster-model";

// ---------------------------------------------------------------- config

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub simulate: SimulateSection,
    pub model: ModelSection,
    pub fit: FitConfig,
    pub init: InitConfig,
    pub sweep: SweepSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub n: usize,
    pub p: usize,
    pub block_sizes: Vec<usize>,
    pub varrho: f64,
    pub var: f64,
    pub seed: u64,
    /// Generating parameters; the two-component reference truth when absent.
    pub truth: Option<ParamsFile>,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            n: 1000,
            p: 10,
            block_sizes: vec![5, 5],
            varrho: 0.9,
            var: 0.04,
            seed: 1,
            truth: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub components: usize,
    /// `cosine`, `constant:<value>` or `file:<path>`.
    pub similarity: String,
    pub standardize: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { components: 2, similarity: "cosine".into(), standardize: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub grid: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self { grid: vec![0.0, 4.0, 8.0, 12.0, 16.0, 20.0] }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        let prefix = |section: &'static str| {
            move |e: Error| match e {
                Error::Config(msg) => Error::Config(format!("{section}.{msg}")),
                other => other,
            }
        };
        self.fit.validate().map_err(prefix("fit"))?;
        self.init.validate().map_err(prefix("init"))?;
        if self.model.components < 1 {
            return Err(Error::Config("model.components: must be at least 1".into()));
        }
        self.model.similarity.parse::<SimilaritySpec>()?;
        Ok(())
    }

    pub fn sim_config(&self) -> Result<SimConfig> {
        let s = &self.simulate;
        let truth = match &s.truth {
            Some(t) => t.to_params().map_err(|e| Error::Config(format!("simulate.truth: {e}")))?,
            None => reference_truth(),
        };
        let cfg = SimConfig {
            n: s.n,
            p: s.p,
            block_sizes: s.block_sizes.clone(),
            varrho: s.varrho,
            var: s.var,
            truth,
            seed: s.seed,
        };
        cfg.validate().map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("simulate.{msg}")),
            other => other,
        })?;
        Ok(cfg)
    }
}

/// Prior similarity source.
#[derive(Debug, Clone, PartialEq)]
pub enum SimilaritySpec {
    Cosine,
    Constant(f64),
    File(PathBuf),
}

impl FromStr for SimilaritySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "cosine" {
            return Ok(Self::Cosine);
        }
        if let Some(v) = s.strip_prefix("constant:") {
            let value: f64 =
                v.parse().map_err(|_| Error::Config(format!("similarity: bad constant '{v}'")))?;
            if !(value >= 0.0 && value.is_finite()) {
                return Err(Error::Config(format!(
                    "similarity: constant must be nonnegative, got {value}"
                )));
            }
            return Ok(Self::Constant(value));
        }
        if let Some(p) = s.strip_prefix("file:") {
            return Ok(Self::File(PathBuf::from(p)));
        }
        Err(Error::Config(format!(
            "similarity: expected cosine, constant:<value> or file:<path>, got '{s}'"
        )))
    }
}

impl SimilaritySpec {
    pub fn build(&self, design: &DMatrix<f64>) -> Result<SimilarityMatrix> {
        match self {
            Self::Cosine => cosine_similarity_matrix(design),
            Self::Constant(v) => constant_similarity_matrix(design.ncols(), *v),
            Self::File(path) => {
                let s = read_similarity(path)?;
                if s.p() != design.ncols() {
                    return Err(Error::Dimension(format!(
                        "{}: similarity matrix is {p}x{p} but the data has p = {}",
                        path.display(),
                        design.ncols(),
                        p = s.p()
                    )));
                }
                Ok(s)
            }
        }
    }
}

// ---------------------------------------------------------------- files

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), line, message: message.into() }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    parse_err(path, line, e.to_string())
}

/// Reads a dataset CSV: header row, first column `y`, remaining columns
/// covariates.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    if headers.get(0).map(str::trim) != Some("y") {
        return Err(parse_err(path, 1, "first column must be named 'y'"));
    }
    let names: Vec<String> = headers.iter().skip(1).map(|h| h.trim().to_string()).collect();
    let p = names.len();
    let mut ys = Vec::new();
    let mut xs = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != p + 1 {
            return Err(parse_err(
                path,
                line,
                format!("expected {} fields, got {}", p + 1, record.len()),
            ));
        }
        for (c, field) in record.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                parse_err(path, line, format!("column {}: not a number: '{field}'", c + 1))
            })?;
            if c == 0 {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(parse_err(
                        path,
                        line,
                        format!("response must be positive, got {v}"),
                    ));
                }
                ys.push(v);
            } else {
                if !v.is_finite() {
                    return Err(parse_err(
                        path,
                        line,
                        format!("column {}: non-finite value", c + 1),
                    ));
                }
                xs.push(v);
            }
        }
    }
    if ys.is_empty() {
        return Err(parse_err(path, 2, "no data rows"));
    }
    let n = ys.len();
    Dataset::new(DVector::from_vec(ys), DMatrix::from_row_slice(n, p, &xs), names)
}

pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let mut out = String::from("y");
    for name in data.names() {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for i in 0..data.n() {
        out.push_str(&data.responses()[i].to_string());
        for j in 0..data.p() {
            out.push(',');
            out.push_str(&data.design()[(i, j)].to_string());
        }
        out.push('\n');
    }
    write_file(path, &out)
}

/// A `p x p` numeric CSV without header. The diagonal is ignored.
pub fn read_similarity(path: &Path) -> Result<SimilarityMatrix> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(false).from_reader(file);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let row = record
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| parse_err(path, line, e.to_string()))?;
        rows.push(row);
    }
    let p = rows.len();
    if let Some((i, _)) = rows.iter().enumerate().find(|(_, r)| r.len() != p) {
        return Err(parse_err(
            path,
            i as u64 + 1,
            format!("expected {p} columns for a square matrix"),
        ));
    }
    SimilarityMatrix::with_zeroed_diagonal(DMatrix::from_fn(p, p, |j, k| rows[j][k]))
}

/// Parameters in plain arrays; `coefficients[h]` is component `h`'s vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsFile {
    pub weights: Vec<f64>,
    pub intercepts: Vec<f64>,
    pub coefficients: Vec<Vec<f64>>,
    pub dispersions: Vec<f64>,
}

impl ParamsFile {
    pub fn from_params(params: &ParameterSet) -> Self {
        Self {
            weights: params.weights.iter().copied().collect(),
            intercepts: params.intercepts.iter().copied().collect(),
            coefficients: params
                .coefficients
                .column_iter()
                .map(|c| c.iter().copied().collect())
                .collect(),
            dispersions: params.dispersions.iter().copied().collect(),
        }
    }

    pub fn to_params(&self) -> Result<ParameterSet> {
        let h = self.weights.len();
        if self.intercepts.len() != h || self.coefficients.len() != h || self.dispersions.len() != h
        {
            return Err(Error::Format(format!(
                "parameter arrays disagree on the number of components ({h} weights)"
            )));
        }
        let p = self.coefficients.first().map_or(0, Vec::len);
        if self.coefficients.iter().any(|c| c.len() != p) {
            return Err(Error::Format("coefficient vectors have different lengths".into()));
        }
        ParameterSet::new(
            DVector::from_vec(self.weights.clone()),
            DVector::from_vec(self.intercepts.clone()),
            DMatrix::from_fn(p, h, |j, c| self.coefficients[c][j]),
            DVector::from_vec(self.dispersions.clone()),
        )
    }
}

/// Column centring and scaling applied before fitting. Columns holding only
/// 0/1 values are left as they are.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Standardization {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

impl Standardization {
    pub fn from_design(design: &DMatrix<f64>) -> Self {
        let n = design.nrows() as f64;
        let mut means = Vec::with_capacity(design.ncols());
        let mut scales = Vec::with_capacity(design.ncols());
        for col in design.column_iter() {
            let binary = col.iter().all(|&v| v == 0.0 || v == 1.0);
            let mean = col.sum() / n;
            let sd =
                (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
            if binary || sd == 0.0 {
                means.push(0.0);
                scales.push(1.0);
            } else {
                means.push(mean);
                scales.push(sd);
            }
        }
        Self { means, scales }
    }

    pub fn apply(&self, data: &Dataset) -> Result<Dataset> {
        if self.means.len() != data.p() || self.scales.len() != data.p() {
            return Err(Error::Dimension(format!(
                "standardization stored for p = {} but the data has p = {}",
                self.means.len(),
                data.p()
            )));
        }
        let design = DMatrix::from_fn(data.n(), data.p(), |i, j| {
            (data.design()[(i, j)] - self.means[j]) / self.scales[j]
        });
        Dataset::new(data.responses().clone(), design, data.names().to_vec())
    }
}

/// Everything needed to reuse a fit: parameters, ADMM state, configuration
/// and column names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format: String,
    pub version: String,
    pub names: Vec<String>,
    pub params: ParamsFile,
    /// `z[h][j][k]`.
    pub z: Vec<Vec<Vec<f64>>>,
    /// `r[h][j][k]`.
    pub r: Vec<Vec<Vec<f64>>>,
    pub similarity: String,
    pub fit: FitConfig,
    pub init: InitConfig,
    pub standardization: Option<Standardization>,
    pub em_iterations: usize,
    pub converged: bool,
}

fn matrices_to_nested(m: &[DMatrix<f64>]) -> Vec<Vec<Vec<f64>>> {
    m.iter().map(|mat| mat.row_iter().map(|row| row.iter().copied().collect()).collect()).collect()
}

fn nested_to_matrices(v: &[Vec<Vec<f64>>], p: usize) -> Result<Vec<DMatrix<f64>>> {
    v.iter()
        .map(|rows| {
            if rows.len() != p || rows.iter().any(|r| r.len() != p) {
                return Err(Error::Format(format!("ADMM state must be {p}x{p} per component")));
            }
            Ok(DMatrix::from_fn(p, p, |j, k| rows[j][k]))
        })
        .collect()
}

impl ModelFile {
    pub fn new(
        result: &FitResult,
        names: &[String],
        config: &RunConfig,
        standardization: Option<Standardization>,
    ) -> Self {
        Self {
            format: MODEL_FORMAT.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            names: names.to_vec(),
            params: ParamsFile::from_params(&result.params),
            z: matrices_to_nested(&result.state.z),
            r: matrices_to_nested(&result.state.r),
            similarity: config.model.similarity.clone(),
            fit: config.fit,
            init: config.init,
            standardization,
            em_iterations: result.em_iterations,
            converged: result.converged,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: Self = serde_json::from_str(&text)
            .map_err(|e| parse_err(path, e.line() as u64, e.to_string()))?;
        if model.format != MODEL_FORMAT {
            return Err(parse_err(
                path,
                1,
                format!("not a model file (format '{}')", model.format),
            ));
        }
        model.params()?;
        model.state()?;
        Ok(model)
    }

    pub fn params(&self) -> Result<ParameterSet> {
        let params = self.params.to_params()?;
        if self.names.len() != params.n_covariates() {
            return Err(Error::Format(format!(
                "{} column names for p = {}",
                self.names.len(),
                params.n_covariates()
            )));
        }
        Ok(params)
    }

    pub fn state(&self) -> Result<AdmmState> {
        let p = self.names.len();
        let h = self.params.weights.len();
        if self.z.len() != h || self.r.len() != h {
            return Err(Error::Format(format!("ADMM state must hold {h} components")));
        }
        Ok(AdmmState { z: nested_to_matrices(&self.z, p)?, r: nested_to_matrices(&self.r, p)? })
    }
}

/// Record written next to every command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: RunConfig,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    /// Wall-clock seconds per stage.
    pub timings: BTreeMap<String, f64>,
}

impl RunManifest {
    fn new(command: &str, config: &RunConfig, seed: u64) -> Self {
        Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed,
            config: config.clone(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            timings: BTreeMap::new(),
        }
    }

    fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.timings.insert(stage.into(), start.elapsed().as_secs_f64());
        out
    }

    fn finish(mut self, out: &Path) -> Result<Self> {
        let path = out.join("manifest.json");
        self.outputs.push(path.clone());
        write_file(&path, &(serde_json::to_string_pretty(&self).expect("serializable") + "\n"))?;
        Ok(self)
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_file(path, &(serde_json::to_string_pretty(value).expect("serializable") + "\n"))
}

/// One row per EM iteration.
pub fn trace_csv(trace: &[IterationRecord]) -> String {
    let h = trace.first().map_or(0, |t| t.weights.len());
    let mut out =
        String::from("iteration,objective,log_likelihood,coefficient_change,responsibility_error");
    for c in 1..=h {
        for col in [
            "weight",
            "admm_iterations",
            "primal_residual",
            "dual_residual",
            "admm_converged",
            "frozen",
        ] {
            out.push_str(&format!(",{col}_{c}"));
        }
    }
    out.push('\n');
    for rec in trace {
        out.push_str(&format!(
            "{},{},{},{},{}",
            rec.iteration,
            rec.objective,
            rec.log_likelihood,
            rec.coefficient_change,
            rec.responsibility_error
        ));
        for (w, comp) in rec.weights.iter().zip(&rec.components) {
            out.push_str(&format!(
                ",{w},{},{},{},{},{}",
                comp.admm_iterations,
                comp.primal_residual,
                comp.dual_residual,
                comp.admm_converged,
                comp.frozen
            ));
        }
        out.push('\n');
    }
    out
}

/// `block,covariate_index,covariate` with 1-based block and index.
pub fn partition_csv(partition: &Partition, names: &[String]) -> String {
    let mut out = String::from("block,covariate_index,covariate\n");
    for (b, block) in partition.iter().enumerate() {
        for &j in block {
            out.push_str(&format!("{},{},{}\n", b + 1, j + 1, names[j]));
        }
    }
    out
}

pub fn read_partition(path: &Path) -> Result<Partition> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let mut blocks: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| -> Result<usize> {
            record
                .get(i)
                .and_then(|f| f.trim().parse::<usize>().ok())
                .filter(|&v| v >= 1)
                .ok_or_else(|| {
                    parse_err(path, line, format!("field {} must be a positive integer", i + 1))
                })
        };
        blocks.entry(field(0)?).or_default().push(field(1)? - 1);
    }
    Ok(blocks.into_values().collect())
}

/// Component, block and covariate for every covariate of every component.
pub fn clusters_csv(graph: &ClusterGraph, names: &[String]) -> String {
    let mut out = String::from("component,block,covariate_index,covariate\n");
    for (h, comp) in graph.components.iter().enumerate() {
        for (b, block) in comp.blocks.iter().enumerate() {
            for &j in block {
                out.push_str(&format!("{},{},{},{}\n", h + 1, b + 1, j + 1, names[j]));
            }
        }
    }
    out
}

// ---------------------------------------------------------------- commands

#[derive(Debug, Parser)]
#[command(
    name = "fmr-cluster",
    version,
    about = "Mixture Gamma regression with covariate clustering"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a dataset from the simulation design.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Fit the penalized mixture to a dataset.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Fit along a grid of fusion strengths, warm-starting each from the last.
    Sweep {
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated fusion strengths.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
        /// True covariate partition, for a CCP table.
        #[arg(long)]
        partition: Option<PathBuf>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Score a saved model on a dataset.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Export covariate clusters of a saved model.
    Clusters {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// cosine, constant:<value> or file:<path>.
    #[arg(long)]
    pub similarity: Option<String>,
    /// Number of mixture components.
    #[arg(long = "H")]
    pub components: Option<usize>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub v: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub max_em: Option<usize>,
    #[arg(long)]
    pub max_admm: Option<usize>,
    #[arg(long)]
    pub eps_pri: Option<f64>,
    #[arg(long)]
    pub eps_dual: Option<f64>,
    #[arg(long)]
    pub eps_em: Option<f64>,
    /// Centre and scale non-binary covariates before fitting.
    #[arg(long)]
    pub standardize: bool,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

impl CommonArgs {
    /// Defaults, then the config file, then flags.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.simulate.seed = seed;
            cfg.fit.seed = seed;
            cfg.init.seed = seed;
        }
        if let Some(s) = &self.similarity {
            cfg.model.similarity = s.clone();
        }
        if let Some(h) = self.components {
            cfg.model.components = h;
        }
        if self.standardize {
            cfg.model.standardize = true;
        }
        let f = &mut cfg.fit;
        f.gamma = self.gamma.unwrap_or(f.gamma);
        f.v = self.v.unwrap_or(f.v);
        f.rho = self.rho.unwrap_or(f.rho);
        f.max_em = self.max_em.unwrap_or(f.max_em);
        f.max_admm = self.max_admm.unwrap_or(f.max_admm);
        f.eps_pri = self.eps_pri.unwrap_or(f.eps_pri);
        f.eps_dual = self.eps_dual.unwrap_or(f.eps_dual);
        f.eps_em = self.eps_em.unwrap_or(f.eps_em);
        cfg.validate()?;
        Ok(cfg)
    }

    fn out_dir(&self) -> Result<&Path> {
        fs::create_dir_all(&self.out).map_err(|e| Error::io(&self.out, e))?;
        Ok(&self.out)
    }
}

pub fn run(cli: &Cli) -> Result<RunManifest> {
    match &cli.command {
        Command::Simulate { common } => cmd_simulate(common),
        Command::Fit { data, common } => cmd_fit(data, common),
        Command::Sweep { data, grid, partition, common } => {
            cmd_sweep(data, grid.as_deref(), partition.as_deref(), common)
        }
        Command::Evaluate { data, model, common } => cmd_evaluate(data, model, common),
        Command::Clusters { model, common } => cmd_clusters(model, common),
    }
}

/// Writes `data.csv`, `truth.json`, `partition.csv` and `manifest.json`.
pub fn cmd_simulate(args: &CommonArgs) -> Result<RunManifest> {
    let cfg = args.resolve()?;
    let sim_cfg = cfg.sim_config()?;
    let out = args.out_dir()?;
    let mut manifest = RunManifest::new("simulate", &cfg, sim_cfg.seed);
    manifest.inputs.extend(args.config.clone());
    let sim = manifest.time("generate", || generate(&sim_cfg))?;

    let data_path = out.join("data.csv");
    write_dataset(&data_path, &sim.data)?;
    let truth_path = out.join("truth.json");
    write_json(&truth_path, &ParamsFile::from_params(&sim_cfg.truth))?;
    let partition_path = out.join("partition.csv");
    write_file(&partition_path, &partition_csv(&sim.truth_partition, sim.data.names()))?;
    manifest.outputs.extend([data_path, truth_path, partition_path]);
    manifest.finish(out)
}

struct Prepared {
    data: Dataset,
    sim: SimilarityMatrix,
    standardization: Option<Standardization>,
}

fn prepare(data_path: &Path, cfg: &RunConfig) -> Result<Prepared> {
    let raw = read_dataset(data_path)?;
    let (data, standardization) = if cfg.model.standardize {
        let s = Standardization::from_design(raw.design());
        (s.apply(&raw)?, Some(s))
    } else {
        (raw, None)
    };
    let sim = cfg.model.similarity.parse::<SimilaritySpec>()?.build(data.design())?;
    Ok(Prepared { data, sim, standardization })
}

/// Writes `model.json`, `trace.csv` and `manifest.json`. On a solver failure
/// the partial trace is still written.
pub fn cmd_fit(data_path: &Path, args: &CommonArgs) -> Result<RunManifest> {
    let cfg = args.resolve()?;
    let prep = prepare(data_path, &cfg)?;
    let out = args.out_dir()?;
    let mut manifest = RunManifest::new("fit", &cfg, cfg.fit.seed);
    manifest.inputs.push(data_path.to_path_buf());
    manifest.inputs.extend(args.config.clone());

    let h = cfg.model.components;
    let init = manifest.time("init", || initialize(&prep.data, h, &cfg.init))?;
    let trace_path = out.join("trace.csv");
    let result = match manifest.time("fit", || fit(&prep.data, &prep.sim, h, &cfg.fit, &init)) {
        Ok(r) => r,
        Err(e) => {
            if let Error::FitAborted { trace, .. } = &e {
                write_file(&trace_path, &trace_csv(trace))?;
            }
            return Err(e);
        }
    };
    let model_path = out.join("model.json");
    write_json(
        &model_path,
        &ModelFile::new(&result, prep.data.names(), &cfg, prep.standardization),
    )?;
    write_file(&trace_path, &trace_csv(&result.trace))?;
    manifest.outputs.extend([model_path, trace_path]);
    manifest.finish(out)
}

/// Writes `path.csv` (v, component, covariate, coefficient), `sweep.csv`
/// (per-v status) and, given a true partition, `ccp.csv`.
pub fn cmd_sweep(
    data_path: &Path,
    grid: Option<&[f64]>,
    partition: Option<&Path>,
    args: &CommonArgs,
) -> Result<RunManifest> {
    let mut cfg = args.resolve()?;
    if let Some(g) = grid {
        cfg.sweep.grid = g.to_vec();
    }
    if cfg.sweep.grid.is_empty() {
        return Err(Error::Config("sweep.grid: must not be empty".into()));
    }
    if let Some(v) = cfg.sweep.grid.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
        return Err(Error::Config(format!("sweep.grid: values must be nonnegative, got {v}")));
    }
    let mut grid = cfg.sweep.grid.clone();
    grid.sort_by(f64::total_cmp);

    let prep = prepare(data_path, &cfg)?;
    let truth = partition.map(read_partition).transpose()?;
    let out = args.out_dir()?;
    let mut manifest = RunManifest::new("sweep", &cfg, cfg.fit.seed);
    manifest.inputs.push(data_path.to_path_buf());
    manifest.inputs.extend(partition.map(Path::to_path_buf));
    manifest.inputs.extend(args.config.clone());

    let h = cfg.model.components;
    let mut start = manifest.time("init", || initialize(&prep.data, h, &cfg.init))?;
    let names = prep.data.names();
    let mut path_csv = String::from("v,component,covariate,coefficient\n");
    let mut status_csv = String::from("v,status,em_iterations,converged,message\n");
    let mut ccp_csv = String::from("v,component,ccp,blocks\n");
    let sweep_start = Instant::now();
    for &v in &grid {
        let fit_cfg = FitConfig { v, ..cfg.fit };
        match fit(&prep.data, &prep.sim, h, &fit_cfg, &start) {
            Ok(result) => {
                for c in 0..h {
                    for (j, name) in names.iter().enumerate() {
                        path_csv.push_str(&format!(
                            "{v},{},{name},{}\n",
                            c + 1,
                            result.params.coefficients[(j, c)]
                        ));
                    }
                }
                if let Some(truth) = &truth {
                    let graph = from_state(&result.state);
                    for (c, comp) in graph.components.iter().enumerate() {
                        ccp_csv.push_str(&format!(
                            "{v},{},{},{}\n",
                            c + 1,
                            ccp(&comp.blocks, truth)?,
                            comp.blocks.len()
                        ));
                    }
                }
                status_csv
                    .push_str(&format!("{v},ok,{},{},\n", result.em_iterations, result.converged));
                start = result.params;
            }
            Err(e) => {
                log::warn!("sweep at v = {v} failed: {e}");
                let msg = e.to_string().replace(['"', '\n'], " ");
                status_csv.push_str(&format!("{v},failed,,,\"{msg}\"\n"));
            }
        }
    }
    manifest.timings.insert("sweep".into(), sweep_start.elapsed().as_secs_f64());

    let path_path = out.join("path.csv");
    write_file(&path_path, &path_csv)?;
    let status_path = out.join("sweep.csv");
    write_file(&status_path, &status_csv)?;
    manifest.outputs.extend([path_path, status_path]);
    if truth.is_some() {
        let ccp_path = out.join("ccp.csv");
        write_file(&ccp_path, &ccp_csv)?;
        manifest.outputs.push(ccp_path);
    }
    manifest.finish(out)
}

/// Writes `metrics.json`, `predictions.csv` (y, yhat, crps,
/// quantile_residual) and `manifest.json`.
pub fn cmd_evaluate(data_path: &Path, model_path: &Path, args: &CommonArgs) -> Result<RunManifest> {
    let cfg = args.resolve()?;
    let model = ModelFile::load(model_path)?;
    let params = model.params()?;
    let raw = read_dataset(data_path)?;
    if raw.p() != params.n_covariates() {
        return Err(Error::Dimension(format!(
            "dataset has p = {} covariates but the model has p = {}",
            raw.p(),
            params.n_covariates()
        )));
    }
    let data = match &model.standardization {
        Some(s) => s.apply(&raw)?,
        None => raw,
    };
    let out = args.out_dir()?;
    let mut manifest = RunManifest::new("evaluate", &cfg, model.fit.seed);
    manifest.inputs.extend([data_path.to_path_buf(), model_path.to_path_buf()]);

    let metrics = manifest.time("metrics", || report(&data, &params))?;
    let yhat = predictions(&data, &params)?;
    let resid = quantile_residuals(&data, &params)?;
    let mut csv_text = String::from("y,yhat,crps,quantile_residual\n");
    for i in 0..data.n() {
        let y = data.responses()[i];
        let score = crps(y, &data.row(i), &params)?;
        csv_text.push_str(&format!("{y},{},{score},{}\n", yhat[i], resid[i]));
    }
    let metrics_path = out.join("metrics.json");
    write_json(&metrics_path, &metrics)?;
    let pred_path = out.join("predictions.csv");
    write_file(&pred_path, &csv_text)?;
    manifest.outputs.extend([metrics_path, pred_path]);
    manifest.finish(out)
}

/// Writes `graph.csv` (edge list with block lines), `clusters.csv` and
/// `manifest.json`.
pub fn cmd_clusters(model_path: &Path, args: &CommonArgs) -> Result<RunManifest> {
    let cfg = args.resolve()?;
    let model = ModelFile::load(model_path)?;
    let graph = from_state(&model.state()?);
    let out = args.out_dir()?;
    let mut manifest = RunManifest::new("clusters", &cfg, model.fit.seed);
    manifest.inputs.push(model_path.to_path_buf());

    let graph_path = out.join("graph.csv");
    write_file(&graph_path, &export_graph(&graph))?;
    let clusters_path = out.join("clusters.csv");
    write_file(&clusters_path, &clusters_csv(&graph, &model.names))?;
    manifest.outputs.extend([graph_path, clusters_path]);
    manifest.finish(out)
}
