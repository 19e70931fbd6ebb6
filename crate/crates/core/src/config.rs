//! Experiment configuration documents (JSON).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::algebra::ZeroSearchConfig;
use crate::data::{synthetic_dataset, Dataset, SyntheticSpec};
use crate::error::{Error, Result};
use crate::experiments::{ActivationChoice, Bench, BranchConfig, FlatnessConfig, StagedSgdConfig, SweepConfig};
use crate::io::cifar::{load_cifar10, load_cifar10_split, standard_paths};
use crate::mds::Metric;
use crate::rng::derive_seed;
use crate::trainer::OptimizerConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; every random stream derives from it.
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub data: DataSource,
    #[serde(default)]
    pub network: NetworkChoice,
    pub protocol: Protocol,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic {
        n: usize,
        #[serde(default)]
        test_n: usize,
        dims: Vec<usize>,
        classes: usize,
        #[serde(default = "default_separation")]
        separation: f64,
        #[serde(default)]
        random_labels: bool,
    },
    /// An extracted `cifar-10-batches-bin` directory.
    Cifar10 {
        dir: PathBuf,
        /// Class-balanced training subset; all 50,000 records when absent.
        #[serde(default)]
        train_subset: Option<usize>,
        #[serde(default)]
        test_subset: Option<usize>,
        #[serde(default)]
        random_labels: bool,
    },
}

fn default_separation() -> f64 {
    0.3
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic {
            n: 500,
            test_n: 500,
            dims: vec![3, 8, 8],
            classes: 10,
            separation: 0.3,
            random_labels: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkChoice {
    /// Output channels of each conv block.
    pub widths: Vec<usize>,
    pub activation: ActivationChoice,
}

impl Default for NetworkChoice {
    fn default() -> Self {
        NetworkChoice {
            widths: vec![16, 32, 32],
            activation: ActivationChoice::Relu,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Protocol {
    Train {
        optimizer: OptimizerConfig,
    },
    StageSgd(StagedSgdConfig),
    BranchBgd(BranchConfig),
    Flatness(FlatnessParams),
    Interpolate {
        a: PathBuf,
        b: PathBuf,
        #[serde(default = "default_ratios")]
        ratios: Vec<f64>,
    },
    Mds(MdsParams),
    Algebra(AlgebraParams),
    Sweep(SweepConfig),
    Report {
        input: PathBuf,
    },
}

fn default_ratios() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

impl Protocol {
    pub fn name(&self) -> &'static str {
        match self {
            Protocol::Train { .. } => "train",
            Protocol::StageSgd(_) => "stage-sgd",
            Protocol::BranchBgd(_) => "branch-bgd",
            Protocol::Flatness(_) => "flatness",
            Protocol::Interpolate { .. } => "interpolate",
            Protocol::Mds(_) => "mds",
            Protocol::Algebra(_) => "algebra",
            Protocol::Sweep(_) => "sweep",
            Protocol::Report { .. } => "report",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlatnessParams {
    /// Zero-error model to probe; trained from the setup when absent.
    pub model: Option<PathBuf>,
    /// BGD budget for reaching zero training error.
    pub pretrain_epochs: u64,
    /// Extra BGD epochs after the first zero-error epoch.
    pub margin_epochs: u64,
    pub lr: f64,
    pub probe: FlatnessConfig,
    pub volume: Option<VolumeParams>,
}

impl Default for FlatnessParams {
    fn default() -> Self {
        FlatnessParams {
            model: None,
            pretrain_epochs: 400,
            margin_epochs: 50,
            lr: 0.2,
            probe: FlatnessConfig::default(),
            volume: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeParams {
    pub radii: Vec<f64>,
    pub threshold: f64,
    #[serde(default = "default_volume_samples")]
    pub samples: usize,
}

fn default_volume_samples() -> usize {
    crate::experiments::MIN_VOLUME_SAMPLES
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdsParams {
    /// Directory searched recursively for `.rllsnap` files.
    pub input: PathBuf,
    /// Layer numbers counted from the input as layer 1; empty means all.
    #[serde(default)]
    pub layers: Vec<usize>,
    #[serde(default = "default_metric")]
    pub metric: Metric,
}

fn default_metric() -> Metric {
    Metric::OneMinusCosine
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlgebraParams {
    pub summary: Option<SummaryArgs>,
    pub system: Option<MicroSystem>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SummaryArgs {
    pub l: u64,
    pub d: u64,
    pub n: u64,
    pub k: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MicroNet {
    SingleUnit,
    SingleUnitBias,
    ThreeNode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MicroSystem {
    pub net: MicroNet,
    /// Activation coefficients, lowest degree first.
    pub activation: Vec<f64>,
    /// `(x, y)` pairs.
    pub data: Vec<(Vec<f64>, f64)>,
    #[serde(default)]
    pub search: ZeroSearchConfig,
    #[serde(default = "default_starts")]
    pub consistency_starts: usize,
}

fn default_starts() -> usize {
    32
}

fn check_exists(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} `{}` does not exist", path.display())))
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config `{}`: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Checks that every referenced path exists.
    pub fn validate(&self) -> Result<()> {
        if let DataSource::Cifar10 { dir, .. } = &self.data {
            check_exists(dir, "CIFAR-10 directory")?;
        }
        match &self.protocol {
            Protocol::Interpolate { a, b, .. } => {
                check_exists(a, "snapshot")?;
                check_exists(b, "snapshot")?;
            }
            Protocol::Flatness(FlatnessParams { model: Some(m), .. }) => check_exists(m, "snapshot")?,
            Protocol::Mds(p) => check_exists(&p.input, "snapshot directory")?,
            Protocol::Report { input } => check_exists(input, "result directory")?,
            _ => {}
        }
        Ok(())
    }

    /// Canonical JSON without the output directory, so the same experiment
    /// written to two places hashes the same.
    pub fn canonical_json(&self) -> Result<String> {
        let mut c = self.clone();
        c.output = None;
        Ok(serde_json::to_string_pretty(&c)?)
    }

    pub fn datasets(&self) -> Result<(Dataset, Option<Dataset>)> {
        match &self.data {
            DataSource::Synthetic {
                n,
                test_n,
                dims,
                classes,
                separation,
                random_labels,
            } => synthetic_dataset(&SyntheticSpec {
                seed: derive_seed(self.seed, &[1]),
                n: *n,
                test_n: *test_n,
                dims: dims.clone(),
                classes: *classes,
                separation: *separation,
                random_labels: *random_labels,
            }),
            DataSource::Cifar10 {
                dir,
                train_subset,
                test_subset,
                random_labels,
            } => {
                let (train_path, test_path) = standard_paths(dir);
                let seed = derive_seed(self.seed, &[3]);
                let (mut train, stats) = load_cifar10(&train_path, *train_subset, seed)?;
                if *random_labels {
                    train.shuffle_labels(seed);
                }
                let test = if test_path.exists() {
                    Some(load_cifar10_split(&test_path, *test_subset, seed, &stats)?)
                } else {
                    None
                };
                Ok((train, test))
            }
        }
    }

    pub fn bench(&self) -> Result<Bench> {
        let (train, test) = self.datasets()?;
        Bench::new(
            train,
            test,
            &self.network.widths,
            &self.network.activation,
            derive_seed(self.seed, &[2]),
        )
    }
}
