//! Command parameters. Each `*Args` struct doubles as the flag set of its
//! subcommand and as the matching table of the TOML config file; `resolve`
//! merges the two (flags first) and fills defaults.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum GenerateKind {
    Synthetic,
    ContextSynthetic,
    GpmDraw,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum SplitChoice {
    Train,
    Val,
    Test,
    All,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum PlotKind {
    Bar,
    Beeswarm,
}

/// The config file: global keys plus one optional table per subcommand.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    #[serde(default)]
    pub generate: GenerateArgs,
    #[serde(default)]
    pub train: TrainArgs,
    #[serde(default)]
    pub evaluate: EvaluateArgs,
    #[serde(default)]
    pub explain: ExplainArgs,
    #[serde(default)]
    pub plot: PlotArgs,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::input(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::input(format!("invalid config {}: {e}", path.display())))
    }
}

fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

fn required<T>(flag: Option<T>, file: Option<T>, name: &str) -> Result<T, CliError> {
    flag.or(file)
        .ok_or_else(|| CliError::input(format!("missing required parameter '{name}' (flag or config file)")))
}

#[derive(Clone, Debug, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateArgs {
    /// Generator to run.
    #[arg(long, value_enum)]
    pub kind: Option<GenerateKind>,
    #[arg(long)]
    pub n_items: Option<usize>,
    #[arg(long)]
    pub n_matches: Option<usize>,
    /// Number of distinct contexts (context_synthetic only).
    #[arg(long)]
    pub n_contexts: Option<usize>,
    /// 1000 items and 40000 matches unless sizes are given explicitly.
    #[arg(long)]
    #[serde(default)]
    pub full_scale: bool,
    /// Output directory for the CSV files.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Generate {
    pub kind: GenerateKind,
    pub n_items: usize,
    pub n_matches: usize,
    pub n_contexts: usize,
    pub out: PathBuf,
}

impl GenerateArgs {
    pub fn resolve(self, file: GenerateArgs) -> Result<Generate, CliError> {
        let full = self.full_scale || file.full_scale;
        let (items, matches) = if full { (1000, 40_000) } else { (300, 8000) };
        let kind = pick(self.kind, file.kind, GenerateKind::Synthetic);
        let matches = match kind {
            GenerateKind::GpmDraw if !full => prefshap::data::GPM_DRAW_DEFAULT_MATCHES,
            _ => matches,
        };
        Ok(Generate {
            kind,
            n_items: pick(self.n_items, file.n_items, items),
            n_matches: pick(self.n_matches, file.n_matches, matches),
            n_contexts: pick(self.n_contexts, file.n_contexts, 4),
            out: required(self.out, file.out, "out")?,
        })
    }
}

#[derive(Clone, Debug, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainArgs {
    /// Model family: upm, gpm or cgpm.
    #[arg(long)]
    pub kind: Option<String>,
    /// Dataset directory (items.csv, matches.csv, optional contexts.csv).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory for model.json and metrics.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub ridge: Option<f64>,
    #[arg(long)]
    pub max_newton_its: Option<usize>,
    #[arg(long)]
    pub grad_tol: Option<f64>,
    /// Multiplier on the median-heuristic item lengthscales.
    #[arg(long)]
    pub lengthscale_scale: Option<f64>,
    /// Multiplier on the median-heuristic context lengthscales.
    #[arg(long)]
    pub context_lengthscale_scale: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Train {
    pub kind: prefshap::ModelKind,
    pub data: PathBuf,
    pub out: PathBuf,
    pub train: prefshap::TrainConfig,
}

impl TrainArgs {
    pub fn resolve(self, file: TrainArgs, seed: u64) -> Result<Train, CliError> {
        let kind: prefshap::ModelKind = required(self.kind, file.kind, "kind")?.parse()?;
        let d = prefshap::TrainConfig::default();
        let train = prefshap::TrainConfig {
            ridge: pick(self.ridge, file.ridge, d.ridge),
            max_newton_its: pick(self.max_newton_its, file.max_newton_its, d.max_newton_its),
            grad_tol: pick(self.grad_tol, file.grad_tol, d.grad_tol),
            split_seed: seed,
            lengthscale_scale: pick(self.lengthscale_scale, file.lengthscale_scale, d.lengthscale_scale),
            context_lengthscale_scale: pick(
                self.context_lengthscale_scale,
                file.context_lengthscale_scale,
                d.context_lengthscale_scale,
            ),
            kernel_item: None,
            kernel_ctx: None,
        };
        train.validate()?;
        Ok(Train {
            kind,
            data: required(self.data, file.data, "data")?,
            out: required(self.out, file.out, "out")?,
            train,
        })
    }
}

#[derive(Clone, Debug, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Directory for metrics.json; printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Evaluate {
    pub model: PathBuf,
    pub data: PathBuf,
    pub out: Option<PathBuf>,
}

impl EvaluateArgs {
    pub fn resolve(self, file: EvaluateArgs) -> Result<Evaluate, CliError> {
        Ok(Evaluate {
            model: required(self.model, file.model, "model")?,
            data: required(self.data, file.data, "data")?,
            out: self.out.or(file.out),
        })
    }
}

#[derive(Clone, Debug, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplainArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// pair, item_avg, context_pair, context_avg, upm or concat_naive.
    #[arg(long)]
    pub mode: Option<String>,
    /// Which part of the model's train/val/test split to explain.
    #[arg(long, value_enum)]
    pub split: Option<SplitChoice>,
    /// Keep only matches between two item groups, e.g. `A,B`.
    #[arg(long, value_delimiter = ',')]
    pub clusters: Option<Vec<String>>,
    /// Explain at most this many of the selected matches.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Item ids to explain in item_avg mode; defaults to the selected matches' items.
    #[arg(long, value_delimiter = ',')]
    pub items: Option<Vec<String>>,
    #[arg(long)]
    pub n_coalitions: Option<usize>,
    /// Diagonal shift of the item conditioning system.
    #[arg(long)]
    pub ridge_items: Option<f64>,
    /// Diagonal shift of the context conditioning system.
    #[arg(long)]
    pub ridge_ctx: Option<f64>,
    /// cholesky or batched_cg.
    #[arg(long)]
    pub solver: Option<String>,
    /// conditional or marginal.
    #[arg(long)]
    pub reference: Option<String>,
    #[arg(long)]
    pub concat_reference_size: Option<usize>,
    /// Output directory for explanations.csv and explanations.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Explain {
    pub model: PathBuf,
    pub data: PathBuf,
    pub mode: prefshap::ExplainMode,
    pub split: SplitChoice,
    pub clusters: Option<Vec<String>>,
    pub limit: Option<usize>,
    pub items: Option<Vec<String>>,
    pub explain: prefshap::ExplainConfig,
    pub out: PathBuf,
}

fn parse_json_enum<T: serde::de::DeserializeOwned>(value: &str, what: &str) -> Result<T, CliError> {
    serde_json::from_value(serde_json::Value::String(value.to_string()))
        .map_err(|_| CliError::input(format!("unknown {what} '{value}'")))
}

impl ExplainArgs {
    pub fn resolve(self, file: ExplainArgs, seed: u64) -> Result<Explain, CliError> {
        let mode: prefshap::ExplainMode = required(self.mode, file.mode, "mode")?.parse()?;
        let clusters = self.clusters.or(file.clusters);
        if let Some(c) = &clusters {
            if c.len() != 2 {
                return Err(CliError::input(format!("--clusters takes two groups, got {}", c.len())));
            }
        }
        let d = prefshap::ExplainConfig::default();
        let mut cme = d.cme.clone();
        cme.ridge_items = pick(self.ridge_items, file.ridge_items, cme.ridge_items);
        cme.ridge_ctx = pick(self.ridge_ctx, file.ridge_ctx, cme.ridge_ctx);
        if let Some(s) = self.solver.or(file.solver) {
            cme.solver = parse_json_enum(&s, "solver")?;
        }
        if let Some(r) = self.reference.or(file.reference) {
            cme.reference = parse_json_enum(&r, "reference")?;
        }
        cme.validate()?;
        Ok(Explain {
            model: required(self.model, file.model, "model")?,
            data: required(self.data, file.data, "data")?,
            mode,
            split: pick(self.split, file.split, SplitChoice::Test),
            clusters,
            limit: self.limit.or(file.limit),
            items: self.items.or(file.items),
            explain: prefshap::ExplainConfig {
                cme,
                n_coalitions: self.n_coalitions.or(file.n_coalitions),
                seed,
                concat_reference_size: pick(
                    self.concat_reference_size,
                    file.concat_reference_size,
                    d.concat_reference_size,
                ),
            },
            out: required(self.out, file.out, "out")?,
        })
    }
}

#[derive(Clone, Debug, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlotArgs {
    /// explanations.json or explanations.csv.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub kind: Option<PlotKind>,
    /// Output SVG path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Plot {
    pub input: PathBuf,
    pub kind: PlotKind,
    pub out: PathBuf,
}

impl PlotArgs {
    pub fn resolve(self, file: PlotArgs) -> Result<Plot, CliError> {
        Ok(Plot {
            input: required(self.input, file.input, "input")?,
            kind: pick(self.kind, file.kind, PlotKind::Bar),
            out: required(self.out, file.out, "out")?,
        })
    }
}

/// What gets echoed to `run_config.json`.
#[derive(Serialize)]
pub struct RunConfig<'a, T: Serialize> {
    pub format_version: u32,
    pub command: &'a str,
    pub seed: u64,
    pub threads: usize,
    pub config_file: Option<&'a Path>,
    pub params: &'a T,
}
