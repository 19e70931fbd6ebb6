//! Experiment protocols: staged parallel SGD, BGD branching with
//! interpolation, flatness probes, similarity matrices, sublevel-volume
//! sampling, and the width/size sweep.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{synthetic_dataset, Dataset, SyntheticSpec};
use crate::error::{Error, Result};
use crate::nn::{loss, forward, recalibrate_batch_norm, Activation, Mode, NetworkSpec, PerturbMode, WeightSnapshot};
use crate::poly::{fit_network_activations, FitMethod, PolyActivation};
use crate::rng::derive_seed;
use crate::trainer::{correctness, evaluate, perturb, train, OptimizerConfig, OptimizerKind, Trajectory};

/// Samples used to calibrate fitted activations.
const CALIBRATION_SAMPLES: usize = 500;
pub const MIN_VOLUME_SAMPLES: usize = 200;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ActivationChoice {
    Relu,
    /// ReLU replaced by a fitted polynomial of the given degree, with the
    /// interval calibrated on the initial network.
    Polynomial {
        degree: usize,
        #[serde(default = "default_fit")]
        method: FitMethod,
    },
}

fn default_fit() -> FitMethod {
    FitMethod::UniformGridLeastMax
}

/// Synthetic data plus a conv-BN stack, the unit every protocol runs on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeskSetup {
    pub data: SyntheticSpec,
    pub widths: Vec<usize>,
    pub activation: ActivationChoice,
    pub init_seed: u64,
}

impl DeskSetup {
    /// 500 training and 500 test samples of shape 3x8x8 in 10 classes, and
    /// a three-block ReLU stack of 14,586 parameters.
    pub fn desk(seed: u64) -> Self {
        DeskSetup {
            data: SyntheticSpec {
                seed,
                n: 500,
                test_n: 500,
                dims: vec![3, 8, 8],
                classes: 10,
                separation: 0.3,
                random_labels: false,
            },
            widths: vec![16, 32, 32],
            activation: ActivationChoice::Relu,
            init_seed: derive_seed(seed, &[0x1417]),
        }
    }

    pub fn prepare(&self) -> Result<Bench> {
        let (train, test) = synthetic_dataset(&self.data)?;
        Bench::new(train, test, &self.widths, &self.activation, self.init_seed)
    }
}

/// A prepared setup: network, initial weights and data.
#[derive(Clone, Debug)]
pub struct Bench {
    pub spec: NetworkSpec,
    pub init: WeightSnapshot,
    pub init_seed: u64,
    pub train: Dataset,
    pub test: Option<Dataset>,
    pub fitted: Vec<PolyActivation>,
}

impl Bench {
    /// Conv-BN stack sized for the data. With a polynomial activation the
    /// initial weights are those of the ReLU twin, and each layer's fit
    /// interval comes from that twin's pre-activations.
    pub fn new(
        train: Dataset,
        test: Option<Dataset>,
        widths: &[usize],
        activation: &ActivationChoice,
        init_seed: u64,
    ) -> Result<Self> {
        let relu = relu_stack(train.sample_shape(), widths, train.classes)?;
        let init = WeightSnapshot::init(&relu, init_seed)?;
        let (spec, fitted) = match activation {
            ActivationChoice::Relu => (relu, Vec::new()),
            ActivationChoice::Polynomial { degree, method } => {
                let k = train.len().min(CALIBRATION_SAMPLES);
                let batch = train.inputs.select(&(0..k).collect::<Vec<_>>());
                fit_network_activations(&relu, &init, &batch, *degree, *method)?
            }
        };
        Ok(Bench {
            spec,
            init,
            init_seed,
            train,
            test,
            fitted,
        })
    }
}

pub fn relu_stack(sample_shape: &[usize], widths: &[usize], classes: usize) -> Result<NetworkSpec> {
    let dims: [usize; 3] = sample_shape.try_into().map_err(|_| {
        Error::Config(format!("conv stack needs [C, H, W] input, got {sample_shape:?}"))
    })?;
    if widths.is_empty() || widths.contains(&0) {
        return Err(Error::Config("conv widths must be nonempty and positive".into()));
    }
    let spec = NetworkSpec::conv_stack(dims, widths, classes, Activation::Relu);
    spec.layer_shapes()?;
    Ok(spec)
}

fn tagged(w: &WeightSnapshot, run_id: String, protocol: &str, stage: u32) -> WeightSnapshot {
    let mut w = w.clone();
    w.meta.run_id = run_id;
    w.meta.protocol = protocol.to_string();
    w.meta.stage = stage;
    w
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StagedSgdConfig {
    pub stages: u32,
    pub trajectories_per_stage: u32,
    pub epochs_per_stage: u64,
    pub lr: f64,
    pub batch: usize,
    pub restart_c: f64,
    pub snapshot_every: u64,
    pub seed: u64,
}

impl Default for StagedSgdConfig {
    fn default() -> Self {
        StagedSgdConfig {
            stages: 12,
            trajectories_per_stage: 8,
            epochs_per_stage: 10,
            lr: 0.01,
            batch: 100,
            restart_c: 0.01,
            snapshot_every: 1,
            seed: 0,
        }
    }
}

/// Optimizer seed of trajectory `t` in stage `s`.
pub fn staged_seed(master: u64, stage: u32, t: u32) -> u64 {
    derive_seed(master, &[0x57a9e, stage as u64, t as u64])
}

/// Stages of parallel SGD. In each stage the first half of the
/// trajectories (rounded up) restart from the stage's start model `P` and
/// the rest from `perturb(P, restart_c)`; the next `P` is the final model
/// of the first trajectory that did not diverge.
pub fn staged_parallel_sgd(
    spec: &NetworkSpec,
    init: &WeightSnapshot,
    train_data: &Dataset,
    test_data: Option<&Dataset>,
    cfg: &StagedSgdConfig,
) -> Result<Vec<Trajectory>> {
    if cfg.stages == 0 || cfg.trajectories_per_stage == 0 || cfg.epochs_per_stage == 0 {
        return Err(Error::Config("stages, trajectories and epochs must all be >= 1".into()));
    }
    let clean = cfg.trajectories_per_stage.div_ceil(2);
    let mut start = init.clone();
    start.meta.lr = None;
    let mut out = Vec::new();
    for stage in 0..cfg.stages {
        let runs: Vec<Result<Trajectory>> = (0..cfg.trajectories_per_stage)
            .into_par_iter()
            .map(|t| {
                let seed = staged_seed(cfg.seed, stage, t);
                let from = if t < clean {
                    start.clone()
                } else {
                    perturb(&start, cfg.restart_c, PerturbMode::LayerStd, derive_seed(seed, &[1]))?
                };
                let from = tagged(&from, format!("s{stage:02}-t{t:02}"), "stage-sgd", stage);
                let mut opt = OptimizerConfig::sgd(cfg.lr, cfg.epochs_per_stage, seed);
                opt.kind = OptimizerKind::Sgd { batch: cfg.batch };
                opt.snapshot_every = cfg.snapshot_every.max(1);
                train(spec, &from, train_data, test_data, &opt)
            })
            .collect();
        let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
        let next = runs
            .iter()
            .find(|r| !r.diverged)
            .ok_or_else(|| Error::Precondition(format!("every trajectory of stage {stage} diverged")))?;
        start = next.last_snapshot().clone();
        start.meta.perturbation = None;
        out.extend(runs);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterpPoint {
    pub ratio: f64,
    pub error_pct: f64,
    pub loss: f64,
}

/// Evaluates `(1 - r) a + r b` on `data` for each ratio. Interpolants that
/// differ from both endpoints get their batch-norm statistics re-estimated
/// with one pass over `data`; an interpolant equal to an endpoint is that
/// endpoint and keeps its statistics.
pub fn interpolate(
    spec: &NetworkSpec,
    a: &WeightSnapshot,
    b: &WeightSnapshot,
    ratios: &[f64],
    data: &Dataset,
) -> Result<Vec<InterpPoint>> {
    a.check_against(spec)?;
    b.check_against(spec)?;
    let same_weights = |x: &WeightSnapshot, y: &WeightSnapshot| {
        x.trainable().zip(y.trainable()).all(|(p, q)| p.data == q.data)
    };
    ratios
        .iter()
        .map(|&r| {
            let mut m = WeightSnapshot::lerp(a, b, r)?;
            if same_weights(&m, a) {
                m = a.clone();
            } else if same_weights(&m, b) {
                m = b.clone();
            } else {
                recalibrate_batch_norm(spec, &mut m, &data.inputs)?;
            }
            let e = evaluate(spec, &m, data)?;
            Ok(InterpPoint {
                ratio: r,
                error_pct: e.error_pct,
                loss: e.loss,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BranchConfig {
    pub epochs: u64,
    pub lr: f64,
    pub branch_epochs: Vec<u64>,
    pub multipliers: Vec<f64>,
    pub mode: PerturbMode,
    /// Epoch spacing of the branch/main interpolation grid.
    pub interp_every: u64,
    pub ratios: Vec<f64>,
    pub seed: u64,
}

impl Default for BranchConfig {
    fn default() -> Self {
        BranchConfig {
            epochs: 200,
            lr: 0.2,
            branch_epochs: vec![0, 10, 50, 200],
            multipliers: vec![0.25, 0.5, 1.0],
            mode: PerturbMode::LayerStd,
            interp_every: 10,
            ratios: vec![0.5],
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InterpRow {
    pub epoch: u64,
    pub points: Vec<InterpPoint>,
}

#[derive(Clone, Debug)]
pub struct BranchRecord {
    pub parent: String,
    pub branch_epoch: u64,
    pub c: f64,
    pub trajectory: Trajectory,
    pub interpolation: Vec<InterpRow>,
}

#[derive(Clone, Debug)]
pub struct BranchingResult {
    pub main: Trajectory,
    pub branches: Vec<BranchRecord>,
}

/// Main BGD run plus one branch per (branch epoch, multiplier): the main
/// snapshot at that epoch is perturbed and BGD continues to the main run's
/// final epoch. At every shared snapshot epoch the branch and main models
/// are interpolated on the training set.
pub fn bgd_branching(
    spec: &NetworkSpec,
    init: &WeightSnapshot,
    train_data: &Dataset,
    test_data: Option<&Dataset>,
    cfg: &BranchConfig,
) -> Result<BranchingResult> {
    if cfg.interp_every == 0 {
        return Err(Error::Config("interp_every must be >= 1".into()));
    }
    if let Some(e) = cfg.branch_epochs.iter().find(|&&e| e > cfg.epochs) {
        return Err(Error::Config(format!(
            "branch epoch {e} is past the main run length {}",
            cfg.epochs
        )));
    }
    let mut opt = OptimizerConfig::bgd(cfg.epochs, cfg.seed);
    opt.lr = cfg.lr;
    opt.snapshot_every = cfg.interp_every;
    let mut from = tagged(init, "main".into(), "branch-bgd", 0);
    from.meta.lr = None;
    let main = train(spec, &from, train_data, test_data, &opt)?;
    let end = main.last_snapshot().meta.epoch;

    let jobs: Vec<(u64, usize, f64)> = cfg
        .branch_epochs
        .iter()
        .flat_map(|&e| cfg.multipliers.iter().enumerate().map(move |(i, &c)| (e, i, c)))
        .collect();
    let branches = jobs
        .par_iter()
        .map(|&(e, i, c)| {
            let at = main.snapshot_at(e).ok_or_else(|| {
                Error::Config(format!(
                    "branch epoch {e} has no main snapshot (snapshots every {} epochs)",
                    cfg.interp_every
                ))
            })?;
            let p = perturb(at, c, cfg.mode, derive_seed(cfg.seed, &[0xb4a, e, i as u64]))?;
            let p = tagged(&p, format!("b{e:04}-c{i}"), "branch-bgd", 0);
            let mut bopt = opt.clone();
            bopt.epochs = end.saturating_sub(e);
            let trajectory = train(spec, &p, train_data, test_data, &bopt)?;
            let interpolation = trajectory
                .snapshots
                .iter()
                .filter_map(|s| main.snapshot_at(s.meta.epoch).map(|m| (s, m)))
                .map(|(s, m)| {
                    Ok(InterpRow {
                        epoch: s.meta.epoch,
                        points: interpolate(spec, m, s, &cfg.ratios, train_data)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(BranchRecord {
                parent: main.id.clone(),
                branch_epoch: e,
                c,
                trajectory,
                interpolation,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BranchingResult { main, branches })
}

/// Conditional-correctness matrices. `p_cc[i][j]` is the fraction of
/// samples model `j` gets right among those model `i` gets right, and
/// `p_ii[i][j]` the same for wrong answers. `None` marks an empty
/// conditioning event.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrices {
    pub models: Vec<String>,
    pub p_cc: Vec<Vec<Option<f64>>>,
    pub p_ii: Vec<Vec<Option<f64>>>,
}

pub fn similarity_from_correctness(models: Vec<String>, correct: &[Vec<bool>]) -> Result<SimilarityMatrices> {
    if correct.len() < 2 || models.len() != correct.len() {
        return Err(Error::Precondition("similarity needs at least two named models".into()));
    }
    let n = correct[0].len();
    if n == 0 || correct.iter().any(|c| c.len() != n) {
        return Err(Error::Precondition("correctness vectors must be nonempty and equal length".into()));
    }
    let cond = |i: usize, j: usize, want: bool| {
        let (mut given, mut both) = (0usize, 0usize);
        for (a, b) in correct[i].iter().zip(&correct[j]) {
            if *a == want {
                given += 1;
                both += usize::from(*b == want);
            }
        }
        (given > 0).then(|| both as f64 / given as f64)
    };
    let k = correct.len();
    let grid = |want: bool| {
        (0..k)
            .map(|i| (0..k).map(|j| cond(i, j, want)).collect())
            .collect()
    };
    Ok(SimilarityMatrices {
        models,
        p_cc: grid(true),
        p_ii: grid(false),
    })
}

pub fn similarity_matrices(
    spec: &NetworkSpec,
    models: &[(String, WeightSnapshot)],
    data: &Dataset,
) -> Result<SimilarityMatrices> {
    if data.is_empty() {
        return Err(Error::Precondition("similarity dataset is empty".into()));
    }
    let correct = models
        .par_iter()
        .map(|(_, w)| correctness(spec, w, data))
        .collect::<Result<Vec<_>>>()?;
    similarity_from_correctness(models.iter().map(|(n, _)| n.clone()).collect(), &correct)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlatnessConfig {
    pub c: f64,
    pub mode: PerturbMode,
    pub repeats: u32,
    pub epochs: u64,
    pub lr: f64,
    pub seed: u64,
}

impl Default for FlatnessConfig {
    fn default() -> Self {
        FlatnessConfig {
            c: 0.1,
            mode: PerturbMode::LayerStd,
            repeats: 4,
            epochs: 100,
            lr: 0.2,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FlatnessResult {
    pub trajectories: Vec<Trajectory>,
    /// Retrained models followed by a random reference model, compared on
    /// the test set when one is given, else on the training set.
    pub similarity: SimilarityMatrices,
}

/// Perturbs `model` `repeats` times with distinct seeds and retrains each
/// copy with BGD.
pub fn flatness_probe(
    spec: &NetworkSpec,
    model: &WeightSnapshot,
    train_data: &Dataset,
    test_data: Option<&Dataset>,
    cfg: &FlatnessConfig,
) -> Result<FlatnessResult> {
    if cfg.repeats == 0 {
        return Err(Error::Config("flatness probe needs at least one repeat".into()));
    }
    let trajectories = (0..cfg.repeats)
        .into_par_iter()
        .map(|r| {
            let p = perturb(model, cfg.c, cfg.mode, derive_seed(cfg.seed, &[0xf1a7, r as u64]))?;
            let p = tagged(&p, format!("r{r}"), "flatness", 0);
            let mut opt = OptimizerConfig::bgd(cfg.epochs, cfg.seed);
            opt.lr = cfg.lr;
            opt.snapshot_every = cfg.epochs.max(1);
            train(spec, &p, train_data, test_data, &opt)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut reference = WeightSnapshot::init(spec, derive_seed(cfg.seed, &[0x4ef]))?;
    recalibrate_batch_norm(spec, &mut reference, &train_data.inputs)?;
    let mut models: Vec<(String, WeightSnapshot)> = trajectories
        .iter()
        .map(|t| (t.id.clone(), t.last_snapshot().clone()))
        .collect();
    models.push(("reference".into(), reference));
    let similarity = similarity_matrices(spec, &models, test_data.unwrap_or(train_data))?;
    Ok(FlatnessResult {
        trajectories,
        similarity,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumePoint {
    pub radius: f64,
    pub samples: usize,
    pub accepted: usize,
    pub fraction: f64,
}

/// For each radius, the fraction of `samples` layer-std perturbations at
/// `c = radius` whose eval-mode training loss is below `threshold`.
pub fn sublevel_volume_probe(
    spec: &NetworkSpec,
    model: &WeightSnapshot,
    data: &Dataset,
    radii: &[f64],
    threshold: f64,
    samples: usize,
    seed: u64,
) -> Result<Vec<VolumePoint>> {
    if samples < MIN_VOLUME_SAMPLES {
        return Err(Error::Config(format!(
            "volume probe needs at least {MIN_VOLUME_SAMPLES} samples per radius"
        )));
    }
    if radii.iter().any(|r| !(*r > 0.0)) || radii.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("radii must be positive and ascending".into()));
    }
    let targets = data.targets();
    radii
        .iter()
        .enumerate()
        .map(|(ri, &radius)| {
            let hits = (0..samples)
                .into_par_iter()
                .map(|s| {
                    let p = perturb(model, radius, PerturbMode::LayerStd, derive_seed(seed, &[ri as u64, s as u64]))?;
                    let value = match forward(spec, &p, &data.inputs, Mode::Eval) {
                        Ok(out) => loss(&out, &targets, spec.loss)?,
                        Err(Error::NumericOverflow { .. }) => f64::INFINITY,
                        Err(e) => return Err(e),
                    };
                    Ok(value < threshold)
                })
                .collect::<Result<Vec<bool>>>()?;
            let accepted = hits.iter().filter(|&&h| h).count();
            Ok(VolumePoint {
                radius,
                samples,
                accepted,
                fraction: accepted as f64 / samples as f64,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub width_multipliers: Vec<usize>,
    pub train_sizes: Vec<usize>,
    pub epochs: u64,
    pub lr: f64,
    pub random_labels: bool,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            width_multipliers: vec![1, 4],
            train_sizes: vec![500],
            epochs: 300,
            lr: 0.2,
            random_labels: false,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub width_multiplier: usize,
    pub train_size: usize,
    pub parameters: usize,
    pub random_labels: bool,
    pub epochs_run: u64,
    pub train_error_pct: f64,
    pub val_error_pct: f64,
}

/// Trains every (width multiplier, train size) pair with BGD for a fixed
/// budget on the first `size` samples of the bench's training set. With
/// `random_labels` the training labels are permuted before training.
pub fn generalization_sweep(bench: &Bench, cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    if cfg.width_multipliers.len() < 2 || cfg.width_multipliers.contains(&0) {
        return Err(Error::Precondition("sweep needs at least two positive width multipliers".into()));
    }
    if cfg.train_sizes.is_empty() || cfg.train_sizes.contains(&0) {
        return Err(Error::Precondition("train sizes must be nonempty and positive".into()));
    }
    if let Some(s) = cfg.train_sizes.iter().find(|&&s| s > bench.train.len()) {
        return Err(Error::Precondition(format!(
            "train size {s} exceeds the {} available samples",
            bench.train.len()
        )));
    }
    let val = bench
        .test
        .as_ref()
        .ok_or_else(|| Error::Config("sweep needs a held-out set (test_n > 0)".into()))?;
    let jobs: Vec<(usize, usize)> = cfg
        .width_multipliers
        .iter()
        .flat_map(|&m| cfg.train_sizes.iter().map(move |&n| (m, n)))
        .collect();
    jobs.par_iter()
        .map(|&(m, n)| {
            let spec = bench.spec.widen(m)?;
            let init = WeightSnapshot::init(&spec, derive_seed(bench.init_seed, &[m as u64]))?;
            let mut data = bench.train.subset(&(0..n).collect::<Vec<_>>());
            if cfg.random_labels {
                data.shuffle_labels(derive_seed(cfg.seed, &[n as u64]));
            }
            let mut opt = OptimizerConfig::bgd(cfg.epochs, cfg.seed);
            opt.lr = cfg.lr;
            opt.snapshot_every = cfg.epochs.max(1);
            opt.stop_at_zero_error = true;
            let init = tagged(&init, format!("w{m}-n{n}"), "sweep", 0);
            let traj = train(&spec, &init, &data, Some(val), &opt)?;
            let last = traj.last_record();
            Ok(SweepRow {
                width_multiplier: m,
                train_size: n,
                parameters: spec.count_parameters()?,
                random_labels: cfg.random_labels,
                epochs_run: last.epoch,
                train_error_pct: last.train.error_pct,
                val_error_pct: last.test.map(|t| t.error_pct).unwrap_or(f64::NAN),
            })
        })
        .collect()
}
