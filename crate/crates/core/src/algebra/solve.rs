use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::algebra::mpoly::MPoly;
use crate::algebra::system::PolySystem;
use crate::error::{Error, Result};
use crate::rng::derived_rng;

pub const MAX_GRID_VARS: usize = 4;
pub const ON_SYSTEM_TOL: f64 = 1e-8;
pub const RANK_REL_TOL: f64 = 1e-8;
pub const CONSISTENT_TOL: f64 = 1e-10;
const FD_STEP: f64 = 1e-6;
const CONTINUUM_MIN: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ZeroSearchConfig {
    /// Search box is `[-radius, radius]^K`.
    pub radius: f64,
    /// Seeds per axis.
    pub grid: usize,
    pub max_iter: usize,
    /// Residual norm at which a Newton run counts as converged.
    pub tol: f64,
    pub distinct_tol: f64,
}

impl Default for ZeroSearchConfig {
    fn default() -> Self {
        ZeroSearchConfig {
            radius: 2.0,
            grid: 9,
            max_iter: 100,
            tol: 1e-12,
            distinct_tol: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZeroSearch {
    pub zeros: Vec<Vec<f64>>,
    /// Jacobian nullity at each zero.
    pub nullities: Vec<usize>,
    pub seeds: usize,
    /// Seeds whose Newton run did not converge inside the box.
    pub dropped: usize,
    pub continuum: bool,
}

impl ZeroSearch {
    pub fn count(&self) -> usize {
        self.zeros.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Degeneracy {
    pub rank: usize,
    pub nullity: usize,
    pub degenerate: bool,
    pub singular_values: Vec<f64>,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Consistency {
    /// Heuristic verdict. `false` means no zero was found, not a proof.
    pub consistent: bool,
    /// Smallest sum of squared residuals over all starts.
    pub best_residual: f64,
    pub best_point: Vec<f64>,
    pub starts: usize,
}

fn eval_jacobian(jac: &[Vec<MPoly>], x: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(jac.len(), x.len(), |i, j| jac[i][j].eval(x))
}

fn residual_vec(system: &PolySystem, x: &[f64]) -> DVector<f64> {
    DVector::from_vec(system.residuals(x))
}

fn rank_of(j: &DMatrix<f64>) -> (usize, Vec<f64>) {
    let sv: Vec<f64> = j.clone().svd(false, false).singular_values.iter().copied().collect();
    let smax = sv.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 {
        return (0, sv);
    }
    (sv.iter().filter(|&&s| s > RANK_REL_TOL * smax).count(), sv)
}

/// Minimum-norm Newton step `-J^+ r`, or `None` when `J` vanishes.
fn newton_step(j: &DMatrix<f64>, r: &DVector<f64>) -> Option<DVector<f64>> {
    let svd = j.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if !(smax > 0.0) {
        return None;
    }
    let pinv = svd.pseudo_inverse(1e-14 * smax).ok()?;
    Some(-(pinv * r))
}

fn newton(system: &PolySystem, jac: &[Vec<MPoly>], seed: Vec<f64>, cfg: &ZeroSearchConfig) -> Option<Vec<f64>> {
    let mut x = seed;
    let mut r = residual_vec(system, &x);
    let mut norm = r.norm();
    let mut iter = 0;
    while norm > cfg.tol {
        if iter == cfg.max_iter || !norm.is_finite() {
            return None;
        }
        let step = newton_step(&eval_jacobian(jac, &x), &r)?;
        x.iter_mut().zip(step.iter()).for_each(|(a, s)| *a += s);
        r = residual_vec(system, &x);
        norm = r.norm();
        iter += 1;
    }
    // Keep polishing while it helps, so runs from different seeds land on
    // the same point even at singular zeros.
    for _ in 0..cfg.max_iter {
        if norm == 0.0 {
            break;
        }
        let Some(step) = newton_step(&eval_jacobian(jac, &x), &r) else {
            break;
        };
        let cand: Vec<f64> = x.iter().zip(step.iter()).map(|(a, s)| a + s).collect();
        let cr = residual_vec(system, &cand);
        if cr.norm() >= norm {
            break;
        }
        x = cand;
        r = cr;
        norm = r.norm();
    }
    Some(x)
}

fn grid_seeds(k: usize, radius: f64, g: usize) -> Vec<Vec<f64>> {
    let axis: Vec<f64> = if g == 1 {
        vec![0.0]
    } else {
        (0..g)
            .map(|i| -radius + 2.0 * radius * i as f64 / (g - 1) as f64)
            .collect()
    };
    let mut seeds = vec![Vec::new()];
    for _ in 0..k {
        seeds = seeds
            .into_iter()
            .flat_map(|s| {
                axis.iter().map(move |&a| {
                    let mut t = s.clone();
                    t.push(a);
                    t
                })
            })
            .collect();
    }
    seeds
}

/// Grid-seeded Newton search for real zeros inside a box.
pub fn find_real_zeros(system: &PolySystem, cfg: &ZeroSearchConfig) -> Result<ZeroSearch> {
    let k = system.num_vars();
    if k == 0 || k > MAX_GRID_VARS {
        return Err(Error::Precondition(format!(
            "grid search supports 1..={MAX_GRID_VARS} variables, system has {k}"
        )));
    }
    if cfg.grid == 0 || !(cfg.radius > 0.0) {
        return Err(Error::Config("zero search needs a positive radius and grid".into()));
    }
    let jac = system.jacobian_polys();
    let seeds = grid_seeds(k, cfg.radius, cfg.grid);
    let mut zeros: Vec<Vec<f64>> = Vec::new();
    let mut dropped = 0;
    for seed in &seeds {
        match newton(system, &jac, seed.clone(), cfg) {
            Some(z) if z.iter().all(|v| v.abs() <= cfg.radius + cfg.distinct_tol) => {
                let dup = zeros.iter().any(|q| {
                    q.iter().zip(&z).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
                        <= cfg.distinct_tol
                });
                if !dup {
                    zeros.push(z);
                }
            }
            _ => dropped += 1,
        }
    }
    zeros.sort_by(|a, b| a.partial_cmp(b).expect("finite zeros"));
    let nullities: Vec<usize> = zeros
        .iter()
        .map(|z| k - rank_of(&eval_jacobian(&jac, z)).0)
        .collect();
    let continuum = nullities.iter().filter(|&&n| n >= 1).count() >= CONTINUUM_MIN;
    log::debug!(
        "zero search: {} seeds, {} zeros, {} dropped, continuum {continuum}",
        seeds.len(),
        zeros.len(),
        dropped
    );
    Ok(ZeroSearch {
        zeros,
        nullities,
        seeds: seeds.len(),
        dropped,
        continuum,
    })
}

/// Rank of the finite-difference Jacobian at a zero of the system.
pub fn degeneracy_check(system: &PolySystem, point: &[f64]) -> Result<Degeneracy> {
    let k = system.num_vars();
    if point.len() != k {
        return Err(Error::ShapeMismatch {
            layer: 0,
            detail: format!("point of length {} for {k} variables", point.len()),
        });
    }
    let residual = system.max_residual(point);
    if !(residual <= ON_SYSTEM_TOL) {
        return Err(Error::NotOnSystem { residual });
    }
    let mut j = DMatrix::zeros(system.num_equations(), k);
    let mut x = point.to_vec();
    for c in 0..k {
        x[c] = point[c] + FD_STEP;
        let plus = system.residuals(&x);
        x[c] = point[c] - FD_STEP;
        let minus = system.residuals(&x);
        x[c] = point[c];
        for (i, (p, m)) in plus.iter().zip(&minus).enumerate() {
            j[(i, c)] = (p - m) / (2.0 * FD_STEP);
        }
    }
    let (rank, singular_values) = rank_of(&j);
    Ok(Degeneracy {
        rank,
        nullity: k - rank,
        degenerate: rank < k,
        singular_values,
        residual,
    })
}

fn levenberg_marquardt(system: &PolySystem, jac: &[Vec<MPoly>], mut x: Vec<f64>, iters: usize) -> (Vec<f64>, f64) {
    let k = x.len();
    let mut r = residual_vec(system, &x);
    let mut cost = r.norm_squared();
    let mut mu = 1e-3;
    for _ in 0..iters {
        // Keep polishing while the cost falls so found zeros are accurate
        // well past the consistency tolerance.
        if cost == 0.0 || !cost.is_finite() {
            break;
        }
        let j = eval_jacobian(jac, &x);
        let jt = j.transpose();
        let g = &jt * &r;
        let h = &jt * &j;
        let mut improved = false;
        for _ in 0..30 {
            let a = &h + DMatrix::identity(k, k) * mu;
            let Some(step) = a.lu().solve(&(-&g)) else {
                mu *= 10.0;
                continue;
            };
            let cand: Vec<f64> = x.iter().zip(step.iter()).map(|(a, s)| a + s).collect();
            let cr = residual_vec(system, &cand);
            let cc = cr.norm_squared();
            if cc < cost {
                x = cand;
                r = cr;
                cost = cc;
                mu = (mu / 3.0).max(1e-15);
                improved = true;
                break;
            }
            mu *= 4.0;
        }
        if !improved {
            break;
        }
    }
    (x, cost)
}

/// Multistart least-squares search for a common real zero. A failure to
/// find one is reported as "possibly inconsistent", never as a proof.
pub fn consistency_probe(system: &PolySystem, starts: usize, radius: f64, seed: u64) -> Result<Consistency> {
    let k = system.num_vars();
    if starts == 0 || !(radius > 0.0) {
        return Err(Error::Config("consistency probe needs starts and a positive radius".into()));
    }
    let jac = system.jacobian_polys();
    let mut rng = derived_rng(seed, &[k as u64]);
    let mut best = (vec![0.0; k], f64::INFINITY);
    for _ in 0..starts {
        let x0: Vec<f64> = (0..k).map(|_| rng.random_range(-radius..=radius)).collect();
        let (x, cost) = levenberg_marquardt(system, &jac, x0, 500);
        if cost < best.1 {
            best = (x, cost);
        }
        if best.1 <= CONSISTENT_TOL * 1e-6 {
            break;
        }
    }
    Ok(Consistency {
        consistent: best.1 <= CONSISTENT_TOL,
        best_residual: best.1,
        best_point: best.0,
        starts,
    })
}
