//! Labelled datasets and the Gaussian class-cluster generator.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Targets;
use crate::rng::derived_rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(inputs: Tensor, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if inputs.batch() != labels.len() {
            return Err(Error::Precondition(format!(
                "{} inputs but {} labels",
                inputs.batch(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes,
            });
        }
        Ok(Dataset {
            inputs,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.inputs.shape()[1..]
    }

    pub fn targets(&self) -> Targets {
        Targets::Classes(self.labels.clone())
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            inputs: self.inputs.select(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Replaces the labels by a seeded permutation of themselves, keeping
    /// the label marginals exactly.
    pub fn shuffle_labels(&mut self, seed: u64) {
        let mut rng = derived_rng(seed, &[0x1abe1]);
        self.labels.shuffle(&mut rng);
    }
}

/// Parameters of the Gaussian class-cluster generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub seed: u64,
    /// Training samples.
    pub n: usize,
    #[serde(default)]
    pub test_n: usize,
    /// Per-sample shape, e.g. `[3, 8, 8]`.
    pub dims: Vec<usize>,
    pub classes: usize,
    /// Scale of the class means relative to unit within-class noise.
    #[serde(default = "default_separation")]
    pub separation: f64,
    #[serde(default)]
    pub random_labels: bool,
}

fn default_separation() -> f64 {
    0.5
}

fn cluster_samples(
    means: &[Vec<f64>],
    n: usize,
    dims: &[usize],
    seed: u64,
    stream: u64,
) -> Result<Dataset> {
    let classes = means.len();
    let d = means[0].len();
    let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    let mut rng = derived_rng(seed, &[stream, 0]);
    labels.shuffle(&mut rng);
    let mut rng = derived_rng(seed, &[stream, 1]);
    let mut data = Vec::with_capacity(n * d);
    for &l in &labels {
        for mu in &means[l] {
            let noise: f64 = StandardNormal.sample(&mut rng);
            data.push(mu + noise);
        }
    }
    let mut shape = vec![n];
    shape.extend_from_slice(dims);
    Dataset::new(Tensor::new(shape, data)?, labels, classes)
}

/// Class means drawn once per seed; samples are mean plus unit Gaussian
/// noise; class counts are balanced (they differ by at most one).
pub fn synthetic_dataset(spec: &SyntheticSpec) -> Result<(Dataset, Option<Dataset>)> {
    if spec.classes < 2 || spec.n < spec.classes {
        return Err(Error::Precondition(format!(
            "synthetic data needs classes >= 2 and n >= classes (classes {}, n {})",
            spec.classes, spec.n
        )));
    }
    if spec.dims.is_empty() || spec.dims.contains(&0) {
        return Err(Error::Precondition(format!("bad sample shape {:?}", spec.dims)));
    }
    let d: usize = spec.dims.iter().product();
    let mut rng = derived_rng(spec.seed, &[0x3ea7]);
    let means: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| {
            (0..d)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    spec.separation * z
                })
                .collect()
        })
        .collect();
    let mut train = cluster_samples(&means, spec.n, &spec.dims, spec.seed, 1)?;
    let mut test = if spec.test_n > 0 {
        Some(cluster_samples(&means, spec.test_n, &spec.dims, spec.seed, 2)?)
    } else {
        None
    };
    if spec.random_labels {
        train.shuffle_labels(spec.seed);
        if let Some(t) = test.as_mut() {
            t.shuffle_labels(spec.seed ^ 0x7e57);
        }
    }
    Ok((train, test))
}
