use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use sahash::objective::{PicGrad, PicMode};
use sahash::TrainConfig;

use crate::CliError;

#[derive(Parser, Debug)]
#[command(name = "sahash", version, about = "Self-adaptive hashing on precomputed features")]
#[command(arg_required_else_help = true)]
pub struct Cli {
    /// Worker threads; 0 uses the machine's parallelism.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// key=value file of training options; explicit flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate clustered synthetic features, labels and a hold-out split.
    Synth(SynthArgs),
    /// Build the initial similarity graph and report its statistics.
    Graph(GraphArgs),
    /// Train a hash head.
    Train(TrainArgs),
    /// Encode with a checkpoint and compute retrieval metrics.
    Eval(EvalArgs),
    /// Train and evaluate every cell of a PIC-mode x refinement grid.
    Ablate(AblateArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 5)]
    pub clusters: usize,
    #[arg(long, default_value_t = 200)]
    pub per_cluster: usize,
    #[arg(long, default_value_t = 32)]
    pub d: usize,
    #[arg(long, default_value_t = 0.15)]
    pub spread: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fraction of samples held out as queries.
    #[arg(long, default_value_t = 0.1)]
    pub query_frac: f64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

impl Switch {
    pub fn enabled(self) -> bool {
        self == Switch::On
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum PicArg {
    Pic,
    Pic0,
    Picminus,
}

impl From<PicArg> for PicMode {
    fn from(p: PicArg) -> Self {
        match p {
            PicArg::Pic => PicMode::Pic,
            PicArg::Pic0 => PicMode::Pic0,
            PicArg::Picminus => PicMode::PicMinus,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum PicGradArg {
    Frozen,
    Through,
}

impl From<PicGradArg> for PicGrad {
    fn from(p: PicGradArg) -> Self {
        match p {
            PicGradArg::Frozen => PicGrad::Frozen,
            PicGradArg::Through => PicGrad::Through,
        }
    }
}

/// Input files shared by every data-consuming subcommand.
#[derive(Args, Debug)]
pub struct DataArgs {
    #[arg(long)]
    pub features: PathBuf,
    /// Labels; only used for graph quality and metrics.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Split file; without one every sample is used for training.
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// Graph construction options.
#[derive(Args, Debug, Default)]
pub struct GraphOpts {
    #[arg(long)]
    pub k1: Option<usize>,
    #[arg(long)]
    pub k2: Option<usize>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long, value_enum)]
    pub symmetrize: Option<Switch>,
}

/// Optimisation options.
#[derive(Args, Debug, Default)]
pub struct HyperOpts {
    #[arg(long)]
    pub bits: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub pic_grad: Option<PicGradArg>,
}

#[derive(Args, Debug)]
pub struct GraphArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub graph: GraphOpts,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub graph: GraphOpts,
    #[command(flatten)]
    pub hyper: HyperOpts,
    #[arg(long, value_enum)]
    pub pic: Option<PicArg>,
    #[arg(long = "and", value_enum)]
    pub and_update: Option<Switch>,
}

/// Retrieval metric options.
#[derive(Args, Debug)]
pub struct MetricOpts {
    /// MAP cutoff; 0 ranks the whole database.
    #[arg(long, default_value_t = 5000)]
    pub map_n: usize,
    #[arg(long, default_value_t = 100)]
    pub prec_n: usize,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub split: PathBuf,
    #[command(flatten)]
    pub metrics: MetricOpts,
    /// Also write precision and recall at every rank up to this one.
    #[arg(long)]
    pub pr_rank: Option<usize>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub split: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub graph: GraphOpts,
    #[command(flatten)]
    pub hyper: HyperOpts,
    #[command(flatten)]
    pub metrics: MetricOpts,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "pic0,pic,picminus")]
    pub grid: Vec<PicArg>,
    #[arg(long = "and", value_enum, value_delimiter = ',', default_value = "on,off")]
    pub and_grid: Vec<Switch>,
}

const CONFIG_KEYS: &[&str] = &[
    "bits", "hidden", "k1", "k2", "tau", "lambda", "gamma", "rounds", "epochs", "batch", "eta", "seed",
    "pic", "pic-grad", "and", "symmetrize",
];

/// Options read from a `--config` file.
#[derive(Debug, Default)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut values = BTreeMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("config line {}: expected key = value", no + 1)))?;
            let key = key.trim().replace('_', "-");
            if !CONFIG_KEYS.contains(&key.as_str()) {
                return Err(CliError::Usage(format!("config line {}: unknown key '{key}'", no + 1)));
            }
            let value = value.trim().trim_matches('"').to_string();
            values.insert(key, value);
        }
        Ok(Self { values })
    }

    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        self.values
            .get(key)
            .map(|v| {
                v.parse()
                    .map_err(|_| CliError::Usage(format!("config key '{key}': cannot parse '{v}'")))
            })
            .transpose()
    }

    fn switch(&self, key: &str) -> Result<Option<bool>, CliError> {
        match self.values.get(key).map(String::as_str) {
            None => Ok(None),
            Some("on" | "true" | "1") => Ok(Some(true)),
            Some("off" | "false" | "0") => Ok(Some(false)),
            Some(v) => Err(CliError::Usage(format!("config key '{key}': expected on/off, got '{v}'"))),
        }
    }
}

/// Flag value, else file value, else the library default.
fn pick<T: std::str::FromStr>(flag: Option<T>, file: &ConfigFile, key: &str, default: T) -> Result<T, CliError> {
    Ok(match flag {
        Some(v) => v,
        None => file.get(key)?.unwrap_or(default),
    })
}

pub fn resolve(
    graph: &GraphOpts,
    hyper: &HyperOpts,
    pic: Option<PicArg>,
    and_update: Option<Switch>,
    file: &ConfigFile,
) -> Result<TrainConfig, CliError> {
    let d = TrainConfig::default();
    let pic_mode = match pic {
        Some(p) => p.into(),
        None => file.get::<PicMode>("pic")?.unwrap_or(d.pic_mode),
    };
    let pic_grad = match hyper.pic_grad {
        Some(p) => p.into(),
        None => file.get::<PicGrad>("pic-grad")?.unwrap_or(d.pic_grad),
    };
    let and_enabled = match and_update {
        Some(s) => s.enabled(),
        None => file.switch("and")?.unwrap_or(d.and_enabled),
    };
    let symmetrize = match graph.symmetrize {
        Some(s) => s.enabled(),
        None => file.switch("symmetrize")?.unwrap_or(d.symmetrize),
    };
    Ok(TrainConfig {
        bits: pick(hyper.bits, file, "bits", d.bits)?,
        hidden: pick(hyper.hidden, file, "hidden", d.hidden)?,
        k1: graph.k1.or(file.get("k1")?),
        k2: graph.k2.or(file.get("k2")?),
        tau: pick(hyper.tau, file, "tau", d.tau)?,
        lambda: pick(hyper.lambda, file, "lambda", d.lambda)?,
        gamma: pick(graph.gamma, file, "gamma", d.gamma)?,
        rounds: pick(hyper.rounds, file, "rounds", d.rounds)?,
        epochs: pick(hyper.epochs, file, "epochs", d.epochs)?,
        batch: pick(hyper.batch, file, "batch", d.batch)?,
        eta: pick(hyper.eta, file, "eta", d.eta)?,
        seed: pick(hyper.seed, file, "seed", d.seed)?,
        pic_mode,
        pic_grad,
        and_enabled,
        symmetrize,
    })
}
