//! Plain SGD and full-batch gradient descent with snapshot recording, plus
//! the two perturbation conventions.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{
    forward, loss, loss_and_gradients, predictions, update_running_stats, Mode, NetworkSpec,
    PerturbMode, PerturbationRecord, WeightSnapshot,
};
use crate::rng::derived_rng;
use crate::tensor::Tensor;

/// Samples per eval-mode forward chunk.
const EVAL_CHUNK: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd {
        #[serde(default = "default_batch")]
        batch: usize,
    },
    /// Every step uses the whole training set.
    Bgd,
}

fn default_batch() -> usize {
    100
}

fn default_true() -> bool {
    true
}

fn default_snapshot_every() -> u64 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub epochs: u64,
    pub seed: u64,
    /// Record a snapshot whenever the absolute epoch is a multiple of this.
    #[serde(default = "default_snapshot_every")]
    pub snapshot_every: u64,
    /// Full-batch only: halve the step until the loss does not increase.
    #[serde(default = "default_true")]
    pub halve_on_increase: bool,
    /// End the run at the first epoch with zero training error.
    #[serde(default)]
    pub stop_at_zero_error: bool,
}

impl OptimizerConfig {
    pub fn sgd(lr: f64, epochs: u64, seed: u64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Sgd { batch: 100 },
            lr,
            epochs,
            seed,
            snapshot_every: 1,
            halve_on_increase: true,
            stop_at_zero_error: false,
        }
    }

    /// Full-batch descent with the default step 0.05.
    pub fn bgd(epochs: u64, seed: u64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Bgd,
            lr: 0.05,
            epochs,
            seed,
            snapshot_every: 1,
            halve_on_increase: true,
            stop_at_zero_error: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("learning rate {} must be >= 0", self.lr)));
        }
        if self.snapshot_every == 0 {
            return Err(Error::Config("snapshot_every must be >= 1".into()));
        }
        if let OptimizerKind::Sgd { batch } = self.kind {
            if batch == 0 {
                return Err(Error::Config("SGD batch size must be >= 1".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Misclassification percentage in `[0, 100]`.
    pub error_pct: f64,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u64,
    pub train: Evaluation,
    pub test: Option<Evaluation>,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub id: String,
    pub protocol: String,
    pub stage: u32,
    pub snapshots: Vec<WeightSnapshot>,
    pub records: Vec<EpochRecord>,
    pub diverged: bool,
}

impl Trajectory {
    pub fn last_snapshot(&self) -> &WeightSnapshot {
        self.snapshots.last().expect("trajectory always holds its first snapshot")
    }

    pub fn last_record(&self) -> &EpochRecord {
        self.records.last().expect("trajectory always holds its first record")
    }

    pub fn snapshot_at(&self, epoch: u64) -> Option<&WeightSnapshot> {
        self.snapshots.iter().find(|s| s.meta.epoch == epoch)
    }
}

/// Eval-mode error and mean loss over the whole dataset.
pub fn evaluate(spec: &NetworkSpec, snapshot: &WeightSnapshot, data: &Dataset) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::Precondition("cannot evaluate on an empty dataset".into()));
    }
    let mut wrong = 0usize;
    let mut loss_sum = 0.0;
    for chunk in eval_chunks(data.len()) {
        let part = data.subset(&chunk);
        let out = forward(spec, snapshot, &part.inputs, Mode::Eval)?;
        loss_sum += loss(&out, &part.targets(), spec.loss)? * chunk.len() as f64;
        wrong += predictions(&out)
            .iter()
            .zip(&part.labels)
            .filter(|(p, l)| p != l)
            .count();
    }
    Ok(Evaluation {
        error_pct: 100.0 * wrong as f64 / data.len() as f64,
        loss: loss_sum / data.len() as f64,
    })
}

/// Per-sample eval-mode correctness.
pub fn correctness(spec: &NetworkSpec, snapshot: &WeightSnapshot, data: &Dataset) -> Result<Vec<bool>> {
    let mut out = Vec::with_capacity(data.len());
    for chunk in eval_chunks(data.len()) {
        let part = data.subset(&chunk);
        let y = forward(spec, snapshot, &part.inputs, Mode::Eval)?;
        out.extend(predictions(&y).iter().zip(&part.labels).map(|(p, l)| p == l));
    }
    Ok(out)
}

fn eval_chunks(n: usize) -> impl Iterator<Item = Vec<usize>> {
    (0..n).step_by(EVAL_CHUNK).map(move |s| (s..(s + EVAL_CHUNK).min(n)).collect())
}

fn record(
    spec: &NetworkSpec,
    w: &WeightSnapshot,
    epoch: u64,
    lr: f64,
    train: &Dataset,
    test: Option<&Dataset>,
) -> Result<EpochRecord> {
    Ok(EpochRecord {
        epoch,
        train: evaluate(spec, w, train)?,
        test: test.map(|t| evaluate(spec, w, t)).transpose()?,
        lr,
    })
}

/// Outcome of a single update: `None` when the loss went non-finite.
fn bgd_step(
    spec: &NetworkSpec,
    w: &WeightSnapshot,
    inputs: &Tensor,
    data: &Dataset,
    lr: &mut f64,
    min_lr: f64,
    halve: bool,
) -> Result<Option<WeightSnapshot>> {
    let targets = data.targets();
    let lg = match loss_and_gradients(spec, w, inputs, &targets) {
        Ok(lg) => lg,
        Err(Error::NumericOverflow { .. }) => return Ok(None),
        Err(e) => return Err(e),
    };
    if !lg.loss.is_finite() || !lg.grads.norm().is_finite() {
        return Ok(None);
    }
    let mut candidate = loop {
        let mut cand = w.clone();
        cand.apply_step(&lg.grads, *lr);
        if !halve || *lr <= min_lr {
            break cand;
        }
        let new_loss = match forward(spec, &cand, inputs, Mode::Train) {
            Ok(out) => loss(&out, &targets, spec.loss)?,
            Err(Error::NumericOverflow { .. }) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        if new_loss <= lg.loss {
            break cand;
        }
        *lr = (*lr * 0.5).max(min_lr);
    };
    if *lr > 0.0 {
        update_running_stats(&mut candidate, &lg.batch_stats, spec.bn_momentum);
    }
    Ok(Some(candidate))
}

fn sgd_epoch(
    spec: &NetworkSpec,
    w: &mut WeightSnapshot,
    data: &Dataset,
    batch: usize,
    lr: f64,
    seed: u64,
    epoch: u64,
) -> Result<bool> {
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut derived_rng(seed, &[0x5fd, epoch]));
    let min_batch = if spec.has_batch_norm() { 2 } else { 1 };
    for idx in order.chunks(batch) {
        if idx.len() < min_batch {
            continue;
        }
        let part = data.subset(idx);
        let lg = match loss_and_gradients(spec, w, &part.inputs, &part.targets()) {
            Ok(lg) => lg,
            Err(Error::NumericOverflow { .. }) => return Ok(false),
            Err(e) => return Err(e),
        };
        if !lg.loss.is_finite() || !lg.grads.norm().is_finite() {
            return Ok(false);
        }
        if lr > 0.0 {
            w.apply_step(&lg.grads, lr);
            update_running_stats(w, &lg.batch_stats, spec.bn_momentum);
        }
    }
    Ok(w.all_finite())
}

/// Trains from `init` for `opt.epochs` epochs.
///
/// Epoch numbers continue from `init.meta.epoch`, and the starting step size
/// is `init.meta.lr` when present, so training resumed from a saved snapshot
/// reproduces an uninterrupted run bitwise. Shuffling for epoch `e` derives
/// from `(opt.seed, e)` only.
pub fn train(
    spec: &NetworkSpec,
    init: &WeightSnapshot,
    train_data: &Dataset,
    test_data: Option<&Dataset>,
    opt: &OptimizerConfig,
) -> Result<Trajectory> {
    opt.validate()?;
    init.check_against(spec)?;
    if train_data.is_empty() {
        return Err(Error::Precondition("training set is empty".into()));
    }
    let start = init.meta.epoch;
    let mut lr = init.meta.lr.unwrap_or(opt.lr);
    let min_lr = opt.lr * 2f64.powi(-20);
    let mut w = init.clone();
    w.meta.seed = opt.seed;
    w.meta.lr = Some(lr);

    let mut traj = Trajectory {
        id: init.meta.run_id.clone(),
        protocol: init.meta.protocol.clone(),
        stage: init.meta.stage,
        snapshots: vec![w.clone()],
        records: vec![record(spec, &w, start, lr, train_data, test_data)?],
        diverged: false,
    };

    for epoch in start + 1..=start + opt.epochs {
        let next = match opt.kind {
            OptimizerKind::Bgd => bgd_step(
                spec,
                &w,
                &train_data.inputs,
                train_data,
                &mut lr,
                min_lr,
                opt.halve_on_increase,
            )?,
            OptimizerKind::Sgd { batch } => {
                let mut cand = w.clone();
                sgd_epoch(spec, &mut cand, train_data, batch, lr, opt.seed, epoch)?.then_some(cand)
            }
        };
        let Some(mut next) = next else {
            log::warn!("run `{}` diverged at epoch {epoch}", traj.id);
            traj.diverged = true;
            break;
        };
        next.meta.epoch = epoch;
        next.meta.lr = Some(lr);
        w = next;
        let rec = match record(spec, &w, epoch, lr, train_data, test_data) {
            Ok(r) if r.train.loss.is_finite() => r,
            Ok(_) | Err(Error::NumericOverflow { .. }) => {
                traj.diverged = true;
                break;
            }
            Err(e) => return Err(e),
        };
        let done = opt.stop_at_zero_error && rec.train.error_pct == 0.0;
        traj.records.push(rec);
        if epoch % opt.snapshot_every == 0 || epoch == start + opt.epochs || done {
            traj.snapshots.push(w.clone());
        }
        if done {
            break;
        }
    }
    if traj.diverged && traj.last_snapshot().meta.epoch != w.meta.epoch {
        traj.snapshots.push(w);
    }
    Ok(traj)
}

fn std_and_mean_abs(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let mean_abs = values.iter().map(|v| v.abs()).sum::<f64>() / n;
    (var.sqrt(), mean_abs)
}

/// Adds i.i.d. Gaussian noise to every trainable array, layer by layer, with
/// `sigma = c * S_layer` (layer-std) or `sigma = c * m_layer`
/// (mean-magnitude), the statistic taken over that layer's trainable
/// values. Batch-norm running statistics are left untouched.
pub fn perturb(snapshot: &WeightSnapshot, c: f64, mode: PerturbMode, seed: u64) -> Result<WeightSnapshot> {
    if !(c >= 0.0) || !c.is_finite() {
        return Err(Error::Precondition(format!("noise multiplier {c} must be >= 0")));
    }
    let mut out = snapshot.clone();
    out.meta.perturbation = Some(PerturbationRecord { c, mode, seed });
    if c == 0.0 {
        return Ok(out);
    }
    let mut layers: Vec<usize> = out.trainable().filter_map(|a| a.layer()).collect();
    layers.dedup();
    for layer in layers {
        let values: Vec<f64> = snapshot
            .trainable()
            .filter(|a| a.layer() == Some(layer))
            .flat_map(|a| a.data.iter().copied())
            .collect();
        let (std, mean_abs) = std_and_mean_abs(&values);
        let sigma = c * match mode {
            PerturbMode::LayerStd => std,
            PerturbMode::MeanMagnitude => mean_abs,
        };
        if !(sigma > 0.0) {
            continue;
        }
        let normal = Normal::new(0.0, sigma).expect("positive sigma");
        let mut rng = derived_rng(seed, &[0xbe55, layer as u64]);
        for arr in out.arrays.iter_mut().filter(|a| a.trainable() && a.layer() == Some(layer)) {
            for v in &mut arr.data {
                *v += normal.sample(&mut rng);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, NetworkSpec};

    fn spec() -> NetworkSpec {
        NetworkSpec::conv_stack([3, 8, 8], &[16, 32], 10, Activation::Relu)
    }

    #[test]
    fn zero_noise_is_identity() {
        let w = WeightSnapshot::init(&spec(), 1).unwrap();
        let p = perturb(&w, 0.0, PerturbMode::LayerStd, 9).unwrap();
        assert_eq!(p.arrays, w.arrays);
        assert_eq!(p.meta.perturbation.unwrap().c, 0.0);
    }

    #[test]
    fn layer_std_noise_has_requested_scale() {
        let spec = spec();
        let w = WeightSnapshot::init(&spec, 1).unwrap();
        let p = perturb(&w, 0.1, PerturbMode::LayerStd, 3).unwrap();
        for layer in spec.weight_layers() {
            let before = w.flatten_layers(Some(&[layer]));
            if before.len() < 1000 {
                continue;
            }
            let after = p.flatten_layers(Some(&[layer]));
            let diff: Vec<f64> = after.iter().zip(&before).map(|(a, b)| a - b).collect();
            let (s_diff, _) = std_and_mean_abs(&diff);
            let (s_layer, _) = std_and_mean_abs(&before);
            assert!((s_diff / (0.1 * s_layer) - 1.0).abs() < 0.05, "layer {layer}");
        }
    }

    #[test]
    fn different_seeds_give_different_outputs() {
        let w = WeightSnapshot::init(&spec(), 1).unwrap();
        let a = perturb(&w, 0.1, PerturbMode::MeanMagnitude, 1).unwrap();
        let b = perturb(&w, 0.1, PerturbMode::MeanMagnitude, 2).unwrap();
        assert_ne!(a.arrays, b.arrays);
    }

    #[test]
    fn negative_noise_rejected() {
        let w = WeightSnapshot::init(&spec(), 1).unwrap();
        assert!(perturb(&w, -0.1, PerturbMode::LayerStd, 1).is_err());
    }
}
