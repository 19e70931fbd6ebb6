use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::spec::{parse_param_name, NetworkSpec, ParamRole};
use crate::rng::rng_from;
use rand_distr::{Distribution, Normal};

/// How perturbation noise is scaled per layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbMode {
    /// sigma = c * (standard deviation of the layer's weights)
    LayerStd,
    /// sigma = c * (mean absolute value of the layer's weights)
    MeanMagnitude,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationRecord {
    pub c: f64,
    pub mode: PerturbMode,
    pub seed: u64,
}

/// Provenance attached to every snapshot.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SnapshotMeta {
    pub epoch: u64,
    #[serde(default)]
    pub run_id: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub stage: u32,
    #[serde(default)]
    pub protocol: String,
    /// Current learning rate of the run that produced the snapshot, so a
    /// resumed run continues with the same step size.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<PerturbationRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl ParamArray {
    pub fn layer(&self) -> Option<usize> {
        parse_param_name(&self.name).map(|(l, _)| l)
    }

    pub fn role(&self) -> Option<ParamRole> {
        parse_param_name(&self.name).map(|(_, r)| r)
    }

    pub fn trainable(&self) -> bool {
        self.role().is_some_and(ParamRole::trainable)
    }
}

/// Complete, ordered parameter state of a network at one instant: trainable
/// weights and biases plus batch-norm running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightSnapshot {
    pub arrays: Vec<ParamArray>,
    pub meta: SnapshotMeta,
}

/// Derivatives of the loss, one array per trainable array of the snapshot
/// and in the same order.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet {
    pub arrays: Vec<ParamArray>,
}

impl GradientSet {
    pub fn get(&self, name: &str) -> Option<&ParamArray> {
        self.arrays.iter().find(|a| a.name == name)
    }

    pub fn norm(&self) -> f64 {
        self.arrays
            .iter()
            .flat_map(|a| a.data.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }
}

impl WeightSnapshot {
    /// He-style initialisation: weights ~ N(0, 2 / fan_in), zero biases,
    /// running mean 0 and running variance 1.
    pub fn init(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        let mut rng = rng_from(seed);
        let mut arrays = Vec::new();
        for slot in spec.param_layout()? {
            let len = slot.len();
            let data = match slot.role {
                ParamRole::Weight => {
                    let normal = Normal::new(0.0, (2.0 / slot.fan_in as f64).sqrt())
                        .expect("positive std");
                    (0..len).map(|_| normal.sample(&mut rng)).collect()
                }
                ParamRole::Bias | ParamRole::RunningMean => vec![0.0; len],
                ParamRole::RunningVar => vec![1.0; len],
            };
            arrays.push(ParamArray {
                name: slot.name(),
                shape: slot.shape.clone(),
                data,
            });
        }
        Ok(WeightSnapshot {
            arrays,
            meta: SnapshotMeta {
                seed,
                ..SnapshotMeta::default()
            },
        })
    }

    pub fn get(&self, name: &str) -> Option<&ParamArray> {
        self.arrays.iter().find(|a| a.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamArray> {
        self.arrays.iter_mut().find(|a| a.name == name)
    }

    pub(crate) fn array(&self, layer: usize, role: ParamRole) -> Option<&[f64]> {
        self.arrays
            .iter()
            .find(|a| parse_param_name(&a.name) == Some((layer, role)))
            .map(|a| a.data.as_slice())
    }

    /// Checks names, order and shapes against the spec's layout, naming the
    /// first mismatching array.
    pub fn check_against(&self, spec: &NetworkSpec) -> Result<()> {
        let layout = spec.param_layout()?;
        for (i, slot) in layout.iter().enumerate() {
            let name = slot.name();
            let Some(arr) = self.arrays.get(i) else {
                return Err(Error::SnapshotMismatch {
                    name,
                    detail: "missing from snapshot".into(),
                });
            };
            if arr.name != name {
                return Err(Error::SnapshotMismatch {
                    name,
                    detail: format!("found `{}` in its position", arr.name),
                });
            }
            if arr.shape != slot.shape || arr.data.len() != slot.len() {
                return Err(Error::SnapshotMismatch {
                    name,
                    detail: format!("shape {:?}, expected {:?}", arr.shape, slot.shape),
                });
            }
        }
        if let Some(extra) = self.arrays.get(layout.len()) {
            return Err(Error::SnapshotMismatch {
                name: extra.name.clone(),
                detail: "not part of the spec".into(),
            });
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.arrays
            .iter()
            .all(|a| a.data.iter().all(|v| v.is_finite()))
    }

    pub fn trainable(&self) -> impl Iterator<Item = &ParamArray> {
        self.arrays.iter().filter(|a| a.trainable())
    }

    /// Takes `weights -= lr * grads` over the trainable arrays.
    pub fn apply_step(&mut self, grads: &GradientSet, lr: f64) {
        let mut g = grads.arrays.iter();
        for arr in self.arrays.iter_mut().filter(|a| a.trainable()) {
            let grad = g.next().expect("gradient set congruent with snapshot");
            debug_assert_eq!(grad.name, arr.name);
            for (w, d) in arr.data.iter_mut().zip(&grad.data) {
                *w -= lr * d;
            }
        }
    }

    /// Concatenation of the trainable arrays of the selected layers.
    /// `layers` holds indices into the spec's layer list; `None` selects all.
    pub fn flatten_layers(&self, layers: Option<&[usize]>) -> Vec<f64> {
        self.trainable()
            .filter(|a| match (layers, a.layer()) {
                (None, _) => true,
                (Some(sel), Some(l)) => sel.contains(&l),
                (Some(_), None) => false,
            })
            .flat_map(|a| a.data.iter().copied())
            .collect()
    }

    /// Per-parameter affine combination `(1 - r) * a + r * b`, applied to
    /// every stored array including running statistics.
    pub fn lerp(a: &WeightSnapshot, b: &WeightSnapshot, r: f64) -> Result<WeightSnapshot> {
        if a.arrays.len() != b.arrays.len() {
            return Err(Error::SnapshotMismatch {
                name: "<snapshot>".into(),
                detail: format!("{} arrays vs {}", a.arrays.len(), b.arrays.len()),
            });
        }
        let mut arrays = Vec::with_capacity(a.arrays.len());
        for (x, y) in a.arrays.iter().zip(&b.arrays) {
            if x.name != y.name || x.shape != y.shape {
                return Err(Error::SnapshotMismatch {
                    name: x.name.clone(),
                    detail: format!("paired with `{}` {:?}", y.name, y.shape),
                });
            }
            let data = if r == 0.0 {
                x.data.clone()
            } else if r == 1.0 {
                y.data.clone()
            } else {
                x.data
                    .iter()
                    .zip(&y.data)
                    .map(|(p, q)| (1.0 - r) * p + r * q)
                    .collect()
            };
            arrays.push(ParamArray {
                name: x.name.clone(),
                shape: x.shape.clone(),
                data,
            });
        }
        Ok(WeightSnapshot {
            arrays,
            meta: a.meta.clone(),
        })
    }
}
