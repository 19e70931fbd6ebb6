//! Pairwise dissimilarities between weight snapshots and classical
//! (Torgerson) multidimensional scaling.
//!
//! Layers are numbered the way the figures number them: the input counts
//! as layer 1, so the first convolution is layer 2 and the k-th
//! weight-bearing layer is layer `k + 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ParamRole, WeightSnapshot};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    #[serde(alias = "cosine")]
    OneMinusCosine,
    Euclidean,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerSelection {
    All,
    /// Figure-style layer numbers (input = 1).
    Numbered(Vec<usize>),
}

impl LayerSelection {
    /// Maps figure-style numbers to indices into the spec's layer list.
    pub fn resolve(&self, snapshot: &WeightSnapshot) -> Result<Option<Vec<usize>>> {
        let LayerSelection::Numbered(numbers) = self else {
            return Ok(None);
        };
        let weight_layers: Vec<usize> = snapshot
            .arrays
            .iter()
            .filter(|a| a.role() == Some(ParamRole::Weight))
            .filter_map(|a| a.layer())
            .collect();
        if numbers.is_empty() {
            return Err(Error::Precondition("layer selection is empty".into()));
        }
        numbers
            .iter()
            .map(|&k| {
                k.checked_sub(2)
                    .and_then(|i| weight_layers.get(i).copied())
                    .ok_or_else(|| {
                        Error::Precondition(format!(
                            "layer {k} does not exist (valid: 2..={})",
                            weight_layers.len() + 1
                        ))
                    })
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }
}

/// Symmetric `n x n` matrix; `None` marks an undefined entry (a zero-norm
/// vector under the cosine metric).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DissimilarityMatrix {
    pub n: usize,
    pub metric: Metric,
    pub selection: LayerSelection,
    pub entries: Vec<Option<f64>>,
}

impl DissimilarityMatrix {
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.entries[i * self.n + j]
    }

    /// Builds a matrix from explicit values (used for planted tests and the
    /// C interface).
    pub fn from_values(n: usize, values: &[f64], metric: Metric) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::Precondition(format!("{} values for a {n}x{n} matrix", values.len())));
        }
        Ok(DissimilarityMatrix {
            n,
            metric,
            selection: LayerSelection::All,
            entries: values.iter().map(|&v| Some(v)).collect(),
        })
    }

    fn defined_values(&self) -> Result<Vec<f64>> {
        self.entries
            .iter()
            .enumerate()
            .map(|(k, e)| e.ok_or(Error::UndefinedDissimilarity(k / self.n, k % self.n)))
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn pair_dissimilarity(a: &[f64], b: &[f64], metric: Metric) -> Option<f64> {
    if a == b {
        return Some(0.0);
    }
    match metric {
        Metric::Euclidean => Some(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()),
        Metric::OneMinusCosine => {
            let na = dot(a, a).sqrt();
            let nb = dot(b, b).sqrt();
            if na == 0.0 || nb == 0.0 {
                return None;
            }
            let cos = dot(a, b) / na / nb;
            Some((1.0 - cos).clamp(0.0, 2.0))
        }
    }
}

pub fn dissimilarity_matrix(
    snapshots: &[WeightSnapshot],
    selection: &LayerSelection,
    metric: Metric,
) -> Result<DissimilarityMatrix> {
    if snapshots.len() < 2 {
        return Err(Error::Precondition("need at least two snapshots".into()));
    }
    let layers = selection.resolve(&snapshots[0])?;
    let vectors: Vec<Vec<f64>> = snapshots
        .iter()
        .map(|s| s.flatten_layers(layers.as_deref()))
        .collect();
    if vectors[0].is_empty() {
        return Err(Error::Precondition("selected layers hold no weights".into()));
    }
    if let Some(bad) = vectors.iter().position(|v| v.len() != vectors[0].len()) {
        return Err(Error::SnapshotMismatch {
            name: format!("snapshot {bad}"),
            detail: "selected weights differ in size from snapshot 0".into(),
        });
    }
    let n = snapshots.len();
    let mut entries = vec![Some(0.0); n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = pair_dissimilarity(&vectors[i], &vectors[j], metric);
            entries[i * n + j] = d;
            entries[j * n + i] = d;
        }
    }
    Ok(DissimilarityMatrix {
        n,
        metric,
        selection: selection.clone(),
        entries,
    })
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues in descending order and the matching unit
/// eigenvectors (as rows of the second value).
pub fn jacobi_eigen(matrix: &[f64], n: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut a = matrix.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let frob: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|p| (p + 1..n).map(move |q| (p, q)))
            .map(|(p, q)| a[p * n + q] * a[p * n + q])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * frob || frob == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| a[i * n + i]).collect();
    let vectors = order
        .iter()
        .map(|&i| (0..n).map(|k| v[k * n + i]).collect())
        .collect();
    (values, vectors)
}

/// Low-dimensional image of a dissimilarity matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    /// One row of `dim` coordinates per item.
    pub points: Vec<Vec<f64>>,
    /// Full spectrum of the double-centred matrix, descending.
    pub eigenvalues: Vec<f64>,
    /// `||B - X X^T||_F / ||B||_F`: spectrum mass not represented by the
    /// embedding, including truncated negative eigenvalues.
    pub strain: f64,
}

/// Classical scaling: double-centre `-1/2 D∘D`, keep the top `dim`
/// eigenpairs, scale by the square root of the (clamped) eigenvalues.
/// Each eigenvector is signed so that its largest-magnitude entry (first on
/// ties) is positive.
pub fn classical_mds(d: &DissimilarityMatrix, dim: usize) -> Result<Embedding> {
    let n = d.n;
    let values = d.defined_values()?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Precondition("dissimilarities must be finite".into()));
    }
    if dim == 0 {
        return Err(Error::Precondition("embedding dimension must be >= 1".into()));
    }
    let sq: Vec<f64> = values.iter().map(|v| v * v).collect();
    let row_mean: Vec<f64> = (0..n).map(|i| sq[i * n..(i + 1) * n].iter().sum::<f64>() / n as f64).collect();
    let col_mean: Vec<f64> = (0..n).map(|j| (0..n).map(|i| sq[i * n + j]).sum::<f64>() / n as f64).collect();
    let grand = row_mean.iter().sum::<f64>() / n as f64;
    let mut b = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            b[i * n + j] = -0.5 * (sq[i * n + j] - row_mean[i] - col_mean[j] + grand);
        }
    }
    // Symmetrize away rounding asymmetry from the centring.
    for i in 0..n {
        for j in i + 1..n {
            let m = 0.5 * (b[i * n + j] + b[j * n + i]);
            b[i * n + j] = m;
            b[j * n + i] = m;
        }
    }
    let (eigenvalues, vectors) = jacobi_eigen(&b, n);
    let total: f64 = eigenvalues.iter().map(|l| l * l).sum();
    let mut points = vec![vec![0.0; dim]; n];
    let mut captured = 0.0;
    for (k, (lambda, vec)) in eigenvalues.iter().zip(&vectors).take(dim).enumerate() {
        if *lambda <= 0.0 {
            continue;
        }
        captured += lambda * lambda;
        let pivot = vec
            .iter()
            .enumerate()
            .fold(0, |best, (i, x)| if x.abs() > vec[best].abs() * (1.0 + 1e-9) { i } else { best });
        let sign = if vec[pivot] < 0.0 { -1.0 } else { 1.0 };
        let scale = sign * lambda.sqrt();
        for (p, x) in points.iter_mut().zip(vec) {
            p[k] = scale * x;
        }
    }
    let strain = if total > 0.0 {
        ((total - captured).max(0.0) / total).sqrt()
    } else {
        0.0
    };
    Ok(Embedding {
        points,
        eigenvalues,
        strain,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, NetworkSpec};

    fn snap(seed: u64) -> WeightSnapshot {
        let spec = NetworkSpec::conv_stack([3, 8, 8], &[4, 8], 3, Activation::Relu);
        WeightSnapshot::init(&spec, seed).unwrap()
    }

    #[test]
    fn identical_snapshots_are_at_zero() {
        let s = snap(1);
        for metric in [Metric::OneMinusCosine, Metric::Euclidean] {
            let d = dissimilarity_matrix(&[s.clone(), s.clone(), s.clone()], &LayerSelection::All, metric).unwrap();
            assert!(d.entries.iter().all(|e| *e == Some(0.0)));
        }
    }

    #[test]
    fn cosine_ignores_positive_scaling() {
        let a = snap(1);
        let mut b = a.clone();
        for arr in &mut b.arrays {
            arr.data.iter_mut().for_each(|v| *v *= 2.5);
        }
        let d = dissimilarity_matrix(&[a, b], &LayerSelection::All, Metric::OneMinusCosine).unwrap();
        assert!(d.get(0, 1).unwrap().abs() <= 1e-12);
    }

    #[test]
    fn orthogonal_vectors_are_at_one() {
        assert_eq!(pair_dissimilarity(&[1.0, 0.0], &[0.0, 3.0], Metric::OneMinusCosine), Some(1.0));
        assert_eq!(pair_dissimilarity(&[0.0, 0.0], &[0.0, 3.0], Metric::OneMinusCosine), None);
    }

    #[test]
    fn zero_norm_flags_undefined_entry() {
        let a = snap(1);
        let mut z = a.clone();
        for arr in &mut z.arrays {
            arr.data.iter_mut().for_each(|v| *v = 0.0);
        }
        let d = dissimilarity_matrix(&[a, z], &LayerSelection::All, Metric::OneMinusCosine).unwrap();
        assert_eq!(d.get(0, 1), None);
        assert!(matches!(classical_mds(&d, 2), Err(Error::UndefinedDissimilarity(0, 1))));
    }

    #[test]
    fn figure_numbering_selects_first_conv_as_layer_two() {
        let s = snap(1);
        assert_eq!(LayerSelection::Numbered(vec![2]).resolve(&s).unwrap(), Some(vec![0]));
        assert_eq!(LayerSelection::Numbered(vec![3, 4]).resolve(&s).unwrap(), Some(vec![3, 6]));
        assert!(LayerSelection::Numbered(vec![1]).resolve(&s).is_err());
        assert!(LayerSelection::Numbered(vec![5]).resolve(&s).is_err());
    }

    #[test]
    fn two_points_are_placed_at_their_distance() {
        let d = DissimilarityMatrix::from_values(2, &[0.0, 0.7, 0.7, 0.0], Metric::Euclidean).unwrap();
        let e = classical_mds(&d, 2).unwrap();
        let dist = ((e.points[0][0] - e.points[1][0]).powi(2) + (e.points[0][1] - e.points[1][1]).powi(2)).sqrt();
        assert!((dist - 0.7).abs() < 1e-12);
        assert!(e.strain < 1e-12);
    }

    #[test]
    fn all_zero_matrix_collapses_to_origin() {
        let d = DissimilarityMatrix::from_values(3, &[0.0; 9], Metric::Euclidean).unwrap();
        let e = classical_mds(&d, 2).unwrap();
        assert!(e.points.iter().flatten().all(|&x| x == 0.0));
        assert_eq!(e.strain, 0.0);
    }

    #[test]
    fn equilateral_dissimilarities_give_equilateral_triangle() {
        let d = 1.3;
        let vals = [0.0, d, d, d, 0.0, d, d, d, 0.0];
        let e = classical_mds(&DissimilarityMatrix::from_values(3, &vals, Metric::Euclidean).unwrap(), 2).unwrap();
        for i in 0..3 {
            for j in i + 1..3 {
                let dist = ((e.points[i][0] - e.points[j][0]).powi(2) + (e.points[i][1] - e.points[j][1]).powi(2)).sqrt();
                assert!((dist - d).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn jacobi_reconstructs_matrix() {
        let n = 5;
        let m: Vec<f64> = (0..n * n)
            .map(|k| {
                let (i, j) = (k / n, k % n);
                ((i + j) as f64 * 0.7).sin() + if i == j { 2.0 } else { 0.0 }
            })
            .collect();
        let (vals, vecs) = jacobi_eigen(&m, n);
        for i in 0..n {
            for j in 0..n {
                let r: f64 = (0..n).map(|k| vals[k] * vecs[k][i] * vecs[k][j]).sum();
                assert!((r - m[i * n + j]).abs() < 1e-12);
            }
        }
        assert!(vals.windows(2).all(|w| w[0] >= w[1]));
    }
}
