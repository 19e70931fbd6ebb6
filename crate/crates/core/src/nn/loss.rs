use crate::error::{Error, Result};
use crate::nn::spec::LossKind;
use crate::tensor::Tensor;

/// Supervision for a batch: class indices, or explicit target rows (one per
/// sample, same width as the output). Under cross-entropy, target rows are
/// read as probability distributions.
#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    Classes(Vec<usize>),
    Values(Tensor),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes(c) => c.len(),
            Targets::Values(t) => t.batch(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, indices: &[usize]) -> Targets {
        match self {
            Targets::Classes(c) => Targets::Classes(indices.iter().map(|&i| c[i]).collect()),
            Targets::Values(t) => Targets::Values(t.select(indices)),
        }
    }

    fn row(&self, i: usize, width: usize, out: &mut [f64]) -> Result<()> {
        match self {
            Targets::Classes(c) => {
                if c[i] >= width {
                    return Err(Error::LabelOutOfRange {
                        label: c[i],
                        classes: width,
                    });
                }
                out.iter_mut().for_each(|v| *v = 0.0);
                out[c[i]] = 1.0;
            }
            Targets::Values(t) => out.copy_from_slice(t.sample(i)),
        }
        Ok(())
    }
}

/// Mean loss over the batch together with its derivative with respect to
/// the outputs.
///
/// Square loss is `sum_o (f_o - y_o)^2` per sample; cross-entropy applies a
/// softmax to the outputs first.
pub fn loss_and_output_grad(
    outputs: &Tensor,
    targets: &Targets,
    kind: LossKind,
) -> Result<(f64, Vec<f64>)> {
    let n = outputs.batch();
    let width = outputs.sample_len();
    if targets.len() != n {
        return Err(Error::Precondition(format!(
            "{} outputs but {} targets",
            n,
            targets.len()
        )));
    }
    if let Targets::Values(t) = targets {
        if t.sample_len() != width {
            return Err(Error::Precondition(format!(
                "target width {} does not match output width {width}",
                t.sample_len()
            )));
        }
    }
    let inv_n = 1.0 / n as f64;
    let mut total = 0.0;
    let mut grad = vec![0.0; n * width];
    let mut y = vec![0.0; width];
    for i in 0..n {
        targets.row(i, width, &mut y)?;
        let f = outputs.sample(i);
        let g = &mut grad[i * width..(i + 1) * width];
        match kind {
            LossKind::SquareLoss => {
                for o in 0..width {
                    let r = f[o] - y[o];
                    total += r * r;
                    g[o] = 2.0 * r * inv_n;
                }
            }
            LossKind::CrossEntropy => {
                let max = f.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let sum_exp: f64 = f.iter().map(|v| (v - max).exp()).sum();
                let log_z = max + sum_exp.ln();
                let y_sum: f64 = y.iter().sum();
                for o in 0..width {
                    let log_p = f[o] - log_z;
                    total -= y[o] * log_p;
                    g[o] = (log_p.exp() * y_sum - y[o]) * inv_n;
                }
            }
        }
    }
    Ok((total * inv_n, grad))
}

pub fn loss(outputs: &Tensor, targets: &Targets, kind: LossKind) -> Result<f64> {
    Ok(loss_and_output_grad(outputs, targets, kind)?.0)
}

/// Index of the largest output per sample (first index on ties).
pub fn predictions(outputs: &Tensor) -> Vec<usize> {
    (0..outputs.batch())
        .map(|i| {
            let row = outputs.sample(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
