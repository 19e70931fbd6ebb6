//! Univariate polynomial approximations of ReLU in the sup norm.
//!
//! Two fitting methods are offered: a discrete Remez exchange on a uniform
//! grid of [`GRID_POINTS`] points (the minimax fit) and the truncated
//! Legendre series (the L2 projection). Both solve in the normalized
//! variable `t = z / B` and convert to monomial coefficients in `z`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{forward_trace, Activation, Layer, Mode, NetworkSpec, WeightSnapshot};
use crate::tensor::Tensor;

/// Uniform grid density used for both fitting and sup-error measurement.
/// Odd, so `0` and both interval ends are grid points.
pub const GRID_POINTS: usize = 20_001;

const MAX_EXCHANGE_ITERATIONS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitMethod {
    UniformGridLeastMax,
    LegendreProjection,
}

/// A fitted polynomial stand-in for ReLU on `[-bound, bound]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolyActivation {
    /// `c_0 .. c_l`, lowest degree first.
    pub coefficients: Vec<f64>,
    pub bound: f64,
    pub sup_error: f64,
    pub method: FitMethod,
    /// False when the exchange hit its iteration limit; the coefficients are
    /// then the best iterate seen.
    pub converged: bool,
}

#[inline]
pub fn horner(coefficients: &[f64], z: f64) -> f64 {
    coefficients.iter().rev().fold(0.0, |acc, &c| acc * z + c)
}

fn relu(z: f64) -> f64 {
    z.max(0.0)
}

fn grid_t(j: usize) -> f64 {
    -1.0 + 2.0 * j as f64 / (GRID_POINTS - 1) as f64
}

/// Largest `|P(z) - max(0, z)|` over the uniform grid on `[-bound, bound]`.
pub fn sup_error_of(coefficients: &[f64], bound: f64) -> f64 {
    (0..GRID_POINTS)
        .map(|j| {
            let z = bound * grid_t(j);
            (horner(coefficients, z) - relu(z)).abs()
        })
        .fold(0.0, f64::max)
}

impl PolyActivation {
    pub fn degree(&self) -> usize {
        self.coefficients.len().saturating_sub(1)
    }

    /// Horner evaluation. No clamping: outside `[-bound, bound]` the
    /// approximation guarantee is void.
    pub fn evaluate(&self, z: f64) -> f64 {
        if z.abs() > self.bound {
            log::debug!("polynomial activation evaluated at {z} outside [-{0}, {0}]", self.bound);
        }
        horner(&self.coefficients, z)
    }

    /// Recomputes the sup-norm error on the fitting grid.
    pub fn sup_error(&self) -> f64 {
        sup_error_of(&self.coefficients, self.bound)
    }

    pub fn to_activation(&self) -> Activation {
        Activation::Polynomial {
            coefficients: self.coefficients.clone(),
        }
    }
}

/// Converts coefficients in `t = z / bound` into coefficients in `z`.
fn rescale(t_coeffs: &[f64], bound: f64) -> Vec<f64> {
    let mut scale = 1.0;
    t_coeffs
        .iter()
        .map(|a| {
            let c = a / scale;
            scale *= bound;
            c
        })
        .collect()
}

pub fn fit_relu_polynomial(degree: usize, bound: f64, method: FitMethod) -> Result<PolyActivation> {
    if degree == 0 {
        return Err(Error::Precondition("polynomial degree must be at least 1".into()));
    }
    if !(bound > 0.0) || !bound.is_finite() {
        return Err(Error::Precondition(format!("interval half-width {bound} must be positive")));
    }
    let (t_coeffs, converged) = match method {
        FitMethod::UniformGridLeastMax => remez_exchange(degree, bound),
        FitMethod::LegendreProjection => (legendre_projection(degree, bound), true),
    };
    let coefficients = rescale(&t_coeffs, bound);
    let sup_error = sup_error_of(&coefficients, bound);
    if !converged {
        log::warn!("exchange for degree {degree} on [-{bound}, {bound}] did not converge; best iterate kept");
    }
    Ok(PolyActivation {
        coefficients,
        bound,
        sup_error,
        method,
        converged,
    })
}

/// Solves the levelled-error system on `reference` and returns
/// `(coefficients in t, levelled error)`.
fn solve_reference(reference: &[usize], degree: usize, target: &[f64]) -> Option<(Vec<f64>, f64)> {
    let m = degree + 2;
    let mut a = DMatrix::<f64>::zeros(m, m);
    let mut b = DVector::<f64>::zeros(m);
    for (i, &j) in reference.iter().enumerate() {
        let t = grid_t(j);
        let mut p = 1.0;
        for k in 0..=degree {
            a[(i, k)] = p;
            p *= t;
        }
        a[(i, degree + 1)] = if i % 2 == 0 { 1.0 } else { -1.0 };
        b[i] = target[j];
    }
    let x = a.lu().solve(&b)?;
    Some((x.iter().take(degree + 1).copied().collect(), x[degree + 1]))
}

/// Alternating extremal points of `err`: one per maximal same-sign run,
/// trimmed from the ends (dropping the smaller end) down to `want` points.
fn alternation_points(err: &[f64], want: usize) -> Vec<usize> {
    let mut points: Vec<usize> = Vec::new();
    let mut run_sign = 0.0;
    for (j, &e) in err.iter().enumerate() {
        let s = if e > 0.0 {
            1.0
        } else if e < 0.0 {
            -1.0
        } else {
            run_sign
        };
        if s != run_sign || points.is_empty() {
            points.push(j);
            run_sign = s;
        } else if e.abs() > err[*points.last().unwrap()].abs() {
            *points.last_mut().unwrap() = j;
        }
    }
    while points.len() > want {
        let first = err[points[0]].abs();
        let last = err[*points.last().unwrap()].abs();
        if first < last {
            points.remove(0);
        } else {
            points.pop();
        }
    }
    points
}

fn remez_exchange(degree: usize, bound: f64) -> (Vec<f64>, bool) {
    let target: Vec<f64> = (0..GRID_POINTS).map(|j| relu(bound * grid_t(j))).collect();
    let m = degree + 2;
    let last = (GRID_POINTS - 1) as f64;
    let mut reference: Vec<usize> = (0..m)
        .map(|i| {
            let t = -(std::f64::consts::PI * i as f64 / (m - 1) as f64).cos();
            ((t + 1.0) / 2.0 * last).round() as usize
        })
        .collect();
    reference.dedup();

    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut err = vec![0.0; GRID_POINTS];
    for _ in 0..MAX_EXCHANGE_ITERATIONS {
        let Some((coeffs, level)) = solve_reference(&reference, degree, &target) else {
            break;
        };
        let mut max_err = 0.0f64;
        for (j, e) in err.iter_mut().enumerate() {
            *e = horner(&coeffs, grid_t(j)) - target[j];
            max_err = max_err.max(e.abs());
        }
        if best.as_ref().is_none_or(|(_, b)| max_err < *b) {
            best = Some((coeffs.clone(), max_err));
        }
        if max_err - level.abs() <= 1e-13 * max_err.max(f64::MIN_POSITIVE) {
            return (best.unwrap().0, true);
        }
        let next = alternation_points(&err, m);
        if next.len() < m || next == reference {
            // No further exchange possible on this grid: the discrete
            // optimum is reached up to grid resolution.
            return (best.unwrap().0, next == reference);
        }
        reference = next;
    }
    match best {
        Some((c, _)) => (c, false),
        None => (legendre_projection(degree, bound), false),
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out
}

/// Monomial coefficients of the Legendre polynomials `P_0 .. P_degree`.
fn legendre_monomials(degree: usize) -> Vec<Vec<f64>> {
    let mut polys = vec![vec![1.0]];
    if degree >= 1 {
        polys.push(vec![0.0, 1.0]);
    }
    for k in 1..degree {
        let mut next = vec![0.0; k + 2];
        for (i, c) in polys[k].iter().enumerate() {
            next[i + 1] += (2 * k + 1) as f64 * c / (k + 1) as f64;
        }
        for (i, c) in polys[k - 1].iter().enumerate() {
            next[i] -= k as f64 * c / (k + 1) as f64;
        }
        polys.push(next);
    }
    polys
}

fn legendre_projection(degree: usize, bound: f64) -> Vec<f64> {
    let basis = legendre_monomials(degree);
    // The integrand vanishes on [-1, 0] and is a polynomial on [0, 1], so a
    // Gauss rule on [0, 1] with enough nodes is exact.
    let nodes = gauss_legendre(degree / 2 + 8);
    let mut coeffs = vec![0.0; degree + 1];
    for (k, pk) in basis.iter().enumerate() {
        let integral: f64 = nodes
            .iter()
            .map(|&(x, w)| {
                let t = 0.5 * (x + 1.0);
                0.5 * w * relu(bound * t) * horner(pk, t)
            })
            .sum();
        let a = (2 * k + 1) as f64 / 2.0 * integral;
        for (i, c) in pk.iter().enumerate() {
            coeffs[i] += a * c;
        }
    }
    coeffs
}

/// Default interval half-width: three standard deviations of the observed
/// pre-activations (1 if they are constant).
pub fn calibration_bound(preactivations: &[f64]) -> f64 {
    let n = preactivations.len() as f64;
    if n == 0.0 {
        return 1.0;
    }
    let mean = preactivations.iter().sum::<f64>() / n;
    let var = preactivations.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let b = 3.0 * var.sqrt();
    if b > 0.0 && b.is_finite() {
        b
    } else {
        1.0
    }
}

/// Replaces every activation of `spec` by a polynomial fitted on an
/// interval calibrated from one batch of pre-activations at that layer.
pub fn fit_network_activations(
    spec: &NetworkSpec,
    weights: &WeightSnapshot,
    calibration_batch: &Tensor,
    degree: usize,
    method: FitMethod,
) -> Result<(NetworkSpec, Vec<PolyActivation>)> {
    let trace = forward_trace(spec, weights, calibration_batch, Mode::Train)?;
    let mut fitted = Vec::new();
    let mut out = spec.clone();
    for (layer, inputs) in trace.activation_inputs() {
        let act = fit_relu_polynomial(degree, calibration_bound(inputs), method)?;
        out.layers[layer] = Layer::Activation {
            activation: act.to_activation(),
        };
        fitted.push(act);
    }
    Ok((out, fitted))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Brute-force minimax line for ReLU: scan slopes and intercepts on a
    /// fine lattice and keep the smallest dense-grid error.
    fn brute_force_line(bound: f64) -> f64 {
        let zs: Vec<f64> = (0..=2000).map(|j| -bound + 2.0 * bound * j as f64 / 2000.0).collect();
        let mut best = f64::INFINITY;
        for si in 0..=200 {
            let slope = si as f64 / 200.0;
            for ii in 0..=200 {
                let intercept = bound * ii as f64 / 400.0;
                let e = zs
                    .iter()
                    .map(|&z| (slope * z + intercept - z.max(0.0)).abs())
                    .fold(0.0, f64::max);
                best = best.min(e);
            }
        }
        best
    }

    #[test]
    fn degree_one_matches_brute_force_line() {
        let oracle = brute_force_line(1.0);
        let fit = fit_relu_polynomial(1, 1.0, FitMethod::UniformGridLeastMax).unwrap();
        assert!(fit.converged);
        // The lattice contains slope 1/2, intercept 1/4 exactly.
        assert!((oracle - 0.25).abs() < 1e-12);
        assert!((fit.sup_error - oracle).abs() < 1e-9, "{} vs {oracle}", fit.sup_error);
    }

    #[test]
    fn degree_two_error_is_one_sixteenth() {
        let fit = fit_relu_polynomial(2, 1.0, FitMethod::UniformGridLeastMax).unwrap();
        assert!((fit.sup_error - 0.0625).abs() < 1e-9, "{}", fit.sup_error);
        // ReLU = (z + |z|)/2 and |z| ~ z^2 + 1/8.
        let want = [0.0625, 0.5, 0.5];
        for (c, w) in fit.coefficients.iter().zip(want) {
            assert!((c - w).abs() < 1e-9);
        }
    }

    #[test]
    fn error_scales_linearly_with_interval() {
        let a = fit_relu_polynomial(2, 1.0, FitMethod::UniformGridLeastMax).unwrap();
        let b = fit_relu_polynomial(2, 2.0, FitMethod::UniformGridLeastMax).unwrap();
        assert!((b.sup_error / a.sup_error - 2.0).abs() < 1e-9);
    }

    #[test]
    fn sup_error_is_monotone_in_degree() {
        for method in [FitMethod::UniformGridLeastMax, FitMethod::LegendreProjection] {
            let mut prev = f64::INFINITY;
            for degree in 1..=6 {
                let fit = fit_relu_polynomial(degree, 1.0, method).unwrap();
                assert!(fit.sup_error > 0.0);
                if method == FitMethod::UniformGridLeastMax {
                    assert!(fit.sup_error <= prev + 1e-12, "degree {degree}: {} > {prev}", fit.sup_error);
                }
                prev = fit.sup_error;
            }
        }
    }

    #[test]
    fn minimax_beats_projection() {
        for degree in 1..=6 {
            let mm = fit_relu_polynomial(degree, 1.0, FitMethod::UniformGridLeastMax).unwrap();
            let lp = fit_relu_polynomial(degree, 1.0, FitMethod::LegendreProjection).unwrap();
            assert!(mm.sup_error <= lp.sup_error + 1e-12);
        }
    }

    #[test]
    fn legendre_projection_of_degree_two() {
        // L2 projection of max(0, t) onto P0..P2: 1/4 P0 + 1/2 P1 + 5/16 P2.
        let lp = fit_relu_polynomial(2, 1.0, FitMethod::LegendreProjection).unwrap();
        let want = [0.25 - 5.0 / 32.0, 0.5, 15.0 / 32.0];
        for (c, w) in lp.coefficients.iter().zip(want) {
            assert!((c - w).abs() < 1e-12, "{c} vs {w}");
        }
    }

    #[test]
    fn scale_covariance() {
        for method in [FitMethod::UniformGridLeastMax, FitMethod::LegendreProjection] {
            for &bound in &[0.5, 3.0, 7.0] {
                let unit = fit_relu_polynomial(4, 1.0, method).unwrap();
                let scaled = fit_relu_polynomial(4, bound, method).unwrap();
                for (k, (c, u)) in scaled.coefficients.iter().zip(&unit.coefficients).enumerate() {
                    let want = bound * u / bound.powi(k as i32);
                    assert!((c - want).abs() < 1e-9, "k={k} bound={bound}: {c} vs {want}");
                }
            }
        }
    }

    #[test]
    fn evaluate_examples() {
        let sq = PolyActivation {
            coefficients: vec![0.0, 0.0, 1.0],
            bound: 5.0,
            sup_error: 0.0,
            method: FitMethod::LegendreProjection,
            converged: true,
        };
        assert_eq!(sq.evaluate(3.0), 9.0);
        let id = PolyActivation {
            coefficients: vec![0.0, 1.0],
            ..sq.clone()
        };
        for z in [-2.5, 0.0, 1.0, 4.25] {
            assert_eq!(id.evaluate(z), z);
        }
        let fit = fit_relu_polynomial(2, 1.0, FitMethod::UniformGridLeastMax).unwrap();
        assert!(fit.evaluate(0.0).abs() <= fit.sup_error);
    }

    #[test]
    fn half_line_error_is_one_half() {
        assert_eq!(sup_error_of(&[0.0, 0.5], 1.0), 0.5);
    }

    #[test]
    fn fit_report_matches_remeasurement() {
        for degree in 1..=5 {
            let fit = fit_relu_polynomial(degree, 2.5, FitMethod::UniformGridLeastMax).unwrap();
            assert!((fit.sup_error() - fit.sup_error).abs() <= 1e-9);
        }
    }

    #[test]
    fn degree_zero_and_bad_interval_rejected() {
        assert!(fit_relu_polynomial(0, 1.0, FitMethod::UniformGridLeastMax).is_err());
        assert!(fit_relu_polynomial(2, 0.0, FitMethod::LegendreProjection).is_err());
        assert!(fit_relu_polynomial(2, -1.0, FitMethod::LegendreProjection).is_err());
    }

    #[test]
    fn calibration_bound_is_three_sigma() {
        let xs = [-1.0, 1.0, -1.0, 1.0];
        assert!((calibration_bound(&xs) - 3.0).abs() < 1e-15);
        assert_eq!(calibration_bound(&[2.0, 2.0]), 1.0);
    }
}
