//! Command-line grammar and parsing of compound flag values.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use weaksup::kernel::KernelSpec;
use weaksup::problem::WeightMode;
use weaksup_harness::synthetic::Shape;

#[derive(Debug, Parser)]
#[command(name = "weaksup", version, about = "Convex relaxation of the soft-max loss for weakly supervised learning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Discriminative clustering of one unlabeled bag.
    Cluster(RunArgs),
    /// Semi-supervised learning; a lambda grid runs the fixed-labeled protocol.
    Ssl(RunArgs),
    /// Multiple-instance learning; a lambda grid runs the 10-split protocol.
    Mil(RunArgs),
    /// Experiment on generated data (`task=` key of --synth picks the task).
    Synth(RunArgs),
    /// Cross-validation protocol selected by --protocol.
    Crossval(RunArgs),
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("source").args(["data", "synth"]).required(true))]
#[command(group = clap::ArgGroup::new("lambdas").args(["lambda", "lambda_grid"]).required(true))]
pub struct RunArgs {
    /// Dataset CSV (for a precomputed kernel: the instance manifest).
    #[arg(long, value_name = "PATH")]
    pub data: Option<PathBuf>,
    /// Synthetic data, e.g. `k=3,n=300,noise_dims=10`.
    #[arg(long, value_name = "KEY=VAL,...")]
    pub synth: Option<String>,
    /// `linear`, `rbf` (median-distance width), `rbf:SIGMA` or `precomputed:PATH`.
    #[arg(long, default_value = "linear")]
    pub kernel: String,
    #[arg(long, value_name = "X")]
    pub lambda: Option<f64>,
    #[arg(long, value_name = "X,Y,Z", value_delimiter = ',')]
    pub lambda_grid: Option<Vec<f64>>,
    /// Ridge weight of the EM classifier.
    #[arg(long, value_name = "X", default_value_t = 1e-2)]
    pub em_lambda: f64,
    /// `uniform` or `bag`.
    #[arg(long, default_value = "uniform")]
    pub weights: String,
    #[arg(long, default_value_t = 1e-3)]
    pub gap_tol: f64,
    #[arg(long, default_value_t = 1e-9)]
    pub inner_tol: f64,
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// `ours`, `ours_no_intercept`, `em_random` or `kmeans`.
    #[arg(long, default_value = "ours")]
    pub mode: String,
    #[arg(long, value_name = "DIR", default_value = "weaksup-out")]
    pub out: PathBuf,
    /// Also write the relaxed matrix as Z.csv.
    #[arg(long)]
    pub emit_z: bool,
    /// Relax on M k-means centers (clustering only).
    #[arg(long, value_name = "M")]
    pub prequantize: Option<usize>,
    /// Number of latent classes for clustering data read with --data.
    #[arg(long, value_name = "K")]
    pub classes: Option<usize>,
    /// `mil` or `ssl:L` (crossval only; defaults follow the task).
    #[arg(long, value_name = "NAME")]
    pub protocol: Option<String>,
    /// Labeled instances per split of the semi-supervised protocol.
    #[arg(long, value_name = "L")]
    pub labeled: Option<usize>,
}

/// A validation failure naming the offending flag.
#[derive(Debug)]
pub struct Invalid(pub String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

fn invalid<T>(flag: &str, msg: impl std::fmt::Display) -> Result<T, Invalid> {
    Err(Invalid(format!("{flag}: {msg}")))
}

/// Kernel flag; `rbf` without a width returns `None` for the width so the
/// caller can apply the median heuristic.
pub enum KernelArg {
    Ready(KernelSpec),
    RbfMedian,
}

pub fn parse_kernel(s: &str) -> Result<KernelArg, Invalid> {
    let (name, arg) = match s.split_once(':') {
        Some((n, a)) => (n, Some(a)),
        None => (s, None),
    };
    match (name, arg) {
        ("linear", None) => Ok(KernelArg::Ready(KernelSpec::Linear)),
        ("rbf", None) => Ok(KernelArg::RbfMedian),
        ("rbf", Some(w)) => match w.parse::<f64>() {
            Ok(width) if width > 0.0 && width.is_finite() => Ok(KernelArg::Ready(KernelSpec::Gaussian { width })),
            _ => invalid("--kernel", format!("rbf width must be a positive number, got {w:?}")),
        },
        ("precomputed", Some(p)) if !p.is_empty() => Ok(KernelArg::Ready(KernelSpec::Precomputed { path: Some(PathBuf::from(p)) })),
        _ => invalid("--kernel", format!("expected linear, rbf, rbf:SIGMA or precomputed:PATH, got {s:?}")),
    }
}

pub fn parse_weights(s: &str) -> Result<WeightMode, Invalid> {
    match s {
        "uniform" => Ok(WeightMode::Uniform),
        "bag" => Ok(WeightMode::PerBag),
        _ => invalid("--weights", format!("expected uniform or bag, got {s:?}")),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProtocolArg {
    Mil,
    Ssl(Option<usize>),
}

pub fn parse_protocol(s: &str) -> Result<ProtocolArg, Invalid> {
    match s.split_once(':') {
        None if s == "mil" => Ok(ProtocolArg::Mil),
        None if s == "ssl" => Ok(ProtocolArg::Ssl(None)),
        Some(("ssl", l)) => match l.parse::<usize>() {
            Ok(l) if l > 0 => Ok(ProtocolArg::Ssl(Some(l))),
            _ => invalid("--protocol", format!("ssl:L needs a positive count, got {l:?}")),
        },
        _ => invalid("--protocol", format!("expected mil, ssl or ssl:L, got {s:?}")),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SynthTask {
    Cluster,
    Ssl,
    Mil,
}

/// Parsed `--synth` description with every key resolved to a value.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthArgs {
    pub task: Option<SynthTask>,
    pub n: usize,
    pub k: usize,
    pub separation: f64,
    pub sigma: f64,
    pub noise_dims: usize,
    pub noise_sigma: f64,
    pub shape: Shape,
    pub seed: Option<u64>,
    pub labeled: Option<usize>,
    pub pos_bags: usize,
    pub neg_bags: usize,
    pub bag_size: usize,
    pub witness: f64,
    pub dim: usize,
}

impl Default for SynthArgs {
    fn default() -> Self {
        Self {
            task: None,
            n: 150,
            k: 3,
            separation: 4.0,
            sigma: 1.0,
            noise_dims: 0,
            noise_sigma: 1.0,
            shape: Shape::GaussianBlobs,
            seed: None,
            labeled: None,
            pos_bags: 8,
            neg_bags: 8,
            bag_size: 10,
            witness: 0.5,
            dim: 2,
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, Invalid> {
    v.parse::<T>()
        .map_err(|_| Invalid(format!("--synth: value {v:?} for key {key} is not a valid number")))
}

pub fn parse_synth(s: &str) -> Result<SynthArgs, Invalid> {
    let mut out = SynthArgs::default();
    for pair in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let Some((key, v)) = pair.split_once('=') else {
            return invalid("--synth", format!("expected KEY=VAL, got {pair:?}"));
        };
        let (key, v) = (key.trim(), v.trim());
        match key {
            "task" => {
                out.task = Some(match v {
                    "cluster" => SynthTask::Cluster,
                    "ssl" => SynthTask::Ssl,
                    "mil" => SynthTask::Mil,
                    _ => return invalid("--synth", format!("task must be cluster, ssl or mil, got {v:?}")),
                })
            }
            "n" => out.n = num(key, v)?,
            "k" => out.k = num(key, v)?,
            "sep" | "separation" => out.separation = num(key, v)?,
            "sigma" => out.sigma = num(key, v)?,
            "noise_dims" => out.noise_dims = num(key, v)?,
            "noise_sigma" => out.noise_sigma = num(key, v)?,
            "shape" => {
                out.shape = match v {
                    "blobs" | "gaussian_blobs" => Shape::GaussianBlobs,
                    "rings" => Shape::Rings,
                    "offcenter" | "off_center" => Shape::OffCenter,
                    _ => return invalid("--synth", format!("shape must be blobs, rings or offcenter, got {v:?}")),
                }
            }
            "seed" => out.seed = Some(num(key, v)?),
            "labeled" => out.labeled = Some(num(key, v)?),
            "pos_bags" => out.pos_bags = num(key, v)?,
            "neg_bags" => out.neg_bags = num(key, v)?,
            "bag_size" => out.bag_size = num(key, v)?,
            "witness" | "witness_rate" => out.witness = num(key, v)?,
            "dim" => out.dim = num(key, v)?,
            _ => return invalid("--synth", format!("unknown key {key:?}")),
        }
    }
    Ok(out)
}
