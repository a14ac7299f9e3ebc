//! Command-line definitions. The parsed [`Cli`] is the run configuration
//! serialized into every output file.

use std::path::PathBuf;

use catapult_core::data::Preprocess;
use catapult_core::experiments::{Decay, PhysTime, Side, StopRule};
use catapult_core::mlp::{Activation, Parameterization};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Clone, Parser, Serialize)]
#[command(name = "catapult", version, about = "Large-learning-rate phase experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize)]
#[serde(tag = "subcommand", rename_all = "lowercase")]
pub enum Command {
    /// Train the warmup model `f = u.v / sqrt(n)` on `(x, y) = (1, 0)`.
    Warmup(WarmupArgs),
    /// Learning-rate sweep with phase labels for every `(eta, seed)`.
    Sweep(SweepArgs),
    /// Convergence-time exponent of the warmup model around `eta * lambda0 = 2`.
    Critexp(CritexpArgs),
    /// Bisection for the largest learning rate that does not diverge.
    Maxlr(MaxlrArgs),
    /// A single MLP training run with NTK eigenvalue tracking.
    Mlp(MlpRunArgs),
    /// Compare an MLP with its linearization at an early step.
    Linearize(LinearizeArgs),
    /// Loss and kernel of the warmup model on a 2D slice of parameter space.
    Surface(SurfaceArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct WarmupArgs {
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long)]
    pub eta: f64,
    #[arg(long, default_value_t = 10_000)]
    pub steps: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-10)]
    pub conv_tol: f64,
    /// Write the eigenvalue on every k-th row of the CSV.
    #[arg(long, default_value_t = 1)]
    pub eig_every: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Warmup,
    Linear,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    /// The MNIST subset under `$CATAPULT_DATA_DIR` (IDX files).
    Mnist,
    /// Gaussian inputs with balanced one-hot classes.
    Gaussian,
}

/// Network and data flags shared by every MLP subcommand.
#[derive(Debug, Clone, Args, Serialize)]
pub struct MlpArgs {
    #[arg(long, value_enum, default_value_t = DatasetKind::Mnist)]
    pub dataset: DatasetKind,
    #[arg(long, default_value_t = 512)]
    pub train_size: usize,
    /// Test samples (0 for none).
    #[arg(long, default_value_t = 0)]
    pub test_size: usize,
    /// Keep only these classes (relabelled in the given order).
    #[arg(long, value_delimiter = ',')]
    pub classes: Vec<u8>,
    /// Seed of the class-balanced subset (and of Gaussian data).
    #[arg(long, default_value_t = 0)]
    pub data_seed: u64,
    /// Input dimension and class count of the Gaussian dataset.
    #[arg(long, default_value_t = 32)]
    pub gaussian_dim: usize,
    #[arg(long, default_value_t = 10)]
    pub gaussian_classes: usize,
    /// `raw`, or `center:T` (subtract the training mean, rescale to mean squared norm T).
    #[arg(long, default_value = "center:25", value_parser = parse_preprocess)]
    pub preprocess: Preprocess,
    #[arg(long, value_delimiter = ',', default_value = "512,512,512")]
    pub hidden: Vec<usize>,
    #[arg(long, default_value = "relu")]
    pub activation: Activation,
    #[arg(long, default_value = "ntk")]
    pub param: Parameterization,
    #[arg(long, default_value_t = std::f64::consts::SQRT_2)]
    pub sigma_w: f64,
    #[arg(long, default_value_t = 0.0)]
    pub sigma_b: f64,
    /// Minibatch size (0 for full batch).
    #[arg(long, default_value_t = 0)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.0)]
    pub momentum: f64,
    #[arg(long, default_value_t = 0.0)]
    pub l2: f64,
    #[arg(long, default_value_t = 0.0)]
    pub label_smoothing: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub eig_tol: f64,
}

/// Which model a sweep or bisection runs, with its size flags.
#[derive(Debug, Clone, Args, Serialize)]
pub struct ModelArgs {
    #[arg(long, value_enum, default_value_t = ModelKind::Warmup)]
    pub model: ModelKind,
    /// Width of the warmup or linear model.
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    /// Samples and input dimension of the linear model's Gaussian data
    /// (`m <= d` lets the model interpolate).
    #[arg(long, default_value_t = 8)]
    pub m: usize,
    #[arg(long, default_value_t = 16)]
    pub d: usize,
    #[arg(long, default_value_t = 1e-10)]
    pub conv_tol: f64,
    #[command(flatten)]
    pub mlp: MlpArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SweepArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Comma-separated, strictly increasing learning rates.
    #[arg(long, value_delimiter = ',', conflicts_with = "eta_log")]
    pub eta: Vec<f64>,
    /// `lo,hi,count`: log-spaced learning rates.
    #[arg(long, value_delimiter = ',')]
    pub eta_log: Vec<f64>,
    /// Learning rates are given in units of `1/lambda0` of each seed.
    #[arg(long)]
    pub scaled: bool,
    /// `steps:N`, `phys:T` (t*eta = T), `phys-scaled:T` (t*eta*lambda0 = T) or `acc1:N`.
    #[arg(long, default_value = "steps:10000", value_parser = parse_stop)]
    pub stop: StopRule,
    /// `ETA:STEPS`: after the stop rule, train STEPS more at ETA (grid units).
    #[arg(long, value_parser = parse_decay)]
    pub decay: Option<Decay>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub seeds: Vec<u64>,
    /// Eigenvalue cadence of MLP runs (warmup and linear models measure every step).
    #[arg(long)]
    pub eig_every: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Also write the trace of every run under `traces/`.
    #[arg(long)]
    pub write_traces: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SideArg {
    Below,
    Above,
    Both,
}

impl SideArg {
    pub fn sides(self) -> Vec<Side> {
        match self {
            SideArg::Below => vec![Side::Below],
            SideArg::Above => vec![Side::Above],
            SideArg::Both => vec![Side::Below, Side::Above],
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CritexpArgs {
    #[arg(long, default_value_t = 16_000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_delimiter = ',', default_value = "0.04,0.08,0.16,0.32")]
    pub eps: Vec<f64>,
    #[arg(long, value_enum, default_value_t = SideArg::Both)]
    pub side: SideArg,
    #[arg(long, default_value_t = 10_000_000)]
    pub max_steps: u64,
    #[arg(long, default_value_t = 1e-8)]
    pub conv_tol: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct MaxlrArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 100)]
    pub probe_steps: u64,
    /// `lo,hi` in units of `1/lambda0`.
    #[arg(long, value_delimiter = ',', default_values_t = [1.0, 30.0])]
    pub bracket: Vec<f64>,
    #[arg(long, default_value_t = 0.02)]
    pub rel_tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// A learning rate, absolute or in units of `1/lambda0`.
#[derive(Debug, Clone, Args, Serialize)]
#[group(required = true, multiple = false)]
pub struct EtaArg {
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub eta_scaled: Option<f64>,
}

impl EtaArg {
    pub fn resolve(&self, lambda0: f64) -> f64 {
        match (self.eta, self.eta_scaled) {
            (Some(e), _) => e,
            (None, Some(s)) => s / lambda0,
            (None, None) => unreachable!("clap requires one of --eta, --eta-scaled"),
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct MlpRunArgs {
    #[command(flatten)]
    pub mlp: MlpArgs,
    #[command(flatten)]
    pub eta: EtaArg,
    #[arg(long, default_value_t = 1000)]
    pub steps: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub eig_every: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct LinearizeArgs {
    #[command(flatten)]
    pub mlp: MlpArgs,
    #[command(flatten)]
    pub eta: EtaArg,
    #[arg(long, default_value_t = 100)]
    pub steps: u64,
    /// Step at which the model is linearized.
    #[arg(long, default_value_t = 10)]
    pub t_lin: u64,
    /// Also report the relative kernel change between `t_lin` and this step.
    #[arg(long)]
    pub kernel_t_end: Option<u64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SurfaceArgs {
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_values_t = [-2.0, 2.0, 101.0])]
    pub a: Vec<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_values_t = [-2.0, 2.0, 101.0])]
    pub b: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    pub r_seed: u64,
    #[arg(long, default_value_t = 1)]
    pub s_seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn parse_preprocess(s: &str) -> Result<Preprocess, String> {
    match s.split_once(':') {
        None if s == "raw" => Ok(Preprocess::Raw),
        Some(("center", t)) => t
            .parse()
            .map(|target| Preprocess::CenterScale { target })
            .map_err(|e| format!("bad target norm `{t}`: {e}")),
        _ => Err(format!("expected `raw` or `center:T`, got `{s}`")),
    }
}

pub fn parse_stop(s: &str) -> Result<StopRule, String> {
    let (kind, value) = s.split_once(':').ok_or_else(|| format!("expected KIND:VALUE, got `{s}`"))?;
    let int = || value.parse::<u64>().map_err(|e| format!("bad step count `{value}`: {e}"));
    let real = || value.parse::<f64>().map_err(|e| format!("bad physical time `{value}`: {e}"));
    match kind {
        "steps" => Ok(StopRule::FixedSteps(int()?)),
        "acc1" => Ok(StopRule::TrainAccuracyOne { max_steps: int()? }),
        "phys" => Ok(StopRule::FixedPhysicalTime(PhysTime::Absolute(real()?))),
        "phys-scaled" => Ok(StopRule::FixedPhysicalTime(PhysTime::Scaled(real()?))),
        _ => Err(format!("unknown stop rule `{kind}` (steps, phys, phys-scaled, acc1)")),
    }
}

pub fn parse_decay(s: &str) -> Result<Decay, String> {
    let (eta, steps) = s.split_once(':').ok_or_else(|| format!("expected ETA:STEPS, got `{s}`"))?;
    Ok(Decay {
        eta_final: eta.parse().map_err(|e| format!("bad learning rate `{eta}`: {e}"))?,
        extra_steps: steps.parse().map_err(|e| format!("bad step count `{steps}`: {e}"))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn parsers() {
        assert_eq!(parse_preprocess("raw").unwrap(), Preprocess::Raw);
        assert_eq!(parse_preprocess("center:20").unwrap(), Preprocess::CenterScale { target: 20.0 });
        assert!(parse_preprocess("scale:2").is_err());
        assert_eq!(parse_stop("steps:5").unwrap(), StopRule::FixedSteps(5));
        assert_eq!(
            parse_stop("phys-scaled:60").unwrap(),
            StopRule::FixedPhysicalTime(PhysTime::Scaled(60.0))
        );
        assert!(parse_stop("phys:x").is_err());
        assert_eq!(
            parse_decay("0.5:100").unwrap(),
            Decay {
                eta_final: 0.5,
                extra_steps: 100
            }
        );
    }
}
