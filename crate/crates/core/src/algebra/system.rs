use num_bigint::BigUint;
use serde::{Deserialize, Serialize};

use crate::algebra::mpoly::MPoly;
use crate::algebra::net::TinyPolyNet;
use crate::error::{Error, Result};

pub const MAX_DEPTH: usize = 3;
pub const MAX_WEIGHTS: usize = 8;
pub const MAX_POINTS: usize = 4;
/// Cap on the dense monomial count of one expanded equation.
pub const MAX_TERMS: u128 = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    ZeroError,
    CriticalPoint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolySystem {
    pub variables: Vec<String>,
    pub equations: Vec<MPoly>,
    pub provenance: Provenance,
    /// Variables of the innermost weight layer, if known.
    pub first_layer: Vec<usize>,
}

impl PolySystem {
    pub fn new(variables: Vec<String>, equations: Vec<MPoly>, provenance: Provenance) -> Result<Self> {
        if let Some(e) = equations.iter().find(|e| e.nvars() != variables.len()) {
            return Err(Error::InvalidSpec(format!(
                "equation over {} variables in a system of {}",
                e.nvars(),
                variables.len()
            )));
        }
        Ok(PolySystem {
            variables,
            equations,
            provenance,
            first_layer: Vec::new(),
        })
    }

    pub fn num_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn num_equations(&self) -> usize {
        self.equations.len()
    }

    pub fn degrees(&self) -> Vec<u32> {
        self.equations.iter().map(MPoly::total_degree).collect()
    }

    /// Degree of each equation in the innermost layer weights alone.
    pub fn first_layer_degrees(&self) -> Vec<u32> {
        self.equations
            .iter()
            .map(|e| e.degree_in(&self.first_layer))
            .collect()
    }

    /// Product of total degrees.
    pub fn bezout_product(&self) -> BigUint {
        self.degrees()
            .into_iter()
            .fold(BigUint::from(1u32), |acc, d| acc * BigUint::from(d))
    }

    pub fn residuals(&self, point: &[f64]) -> Vec<f64> {
        self.equations.iter().map(|e| e.eval(point)).collect()
    }

    pub fn max_residual(&self, point: &[f64]) -> f64 {
        self.residuals(point)
            .into_iter()
            .fold(0.0, |m: f64, r| m.max(r.abs()))
    }

    /// Jacobian rows per equation, differentiated symbolically.
    pub fn jacobian_polys(&self) -> Vec<Vec<MPoly>> {
        self.equations
            .iter()
            .map(|e| (0..self.num_vars()).map(|k| e.derivative(k)).collect())
            .collect()
    }
}

fn binomial(n: u128, k: u128) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul(n - i) / (i + 1);
    }
    acc
}

fn check_budget(net: &TinyPolyNet, points: usize, critical: bool) -> Result<()> {
    let k = net.num_weights();
    let mut degree = net.degree_bound() as u128;
    if critical {
        degree *= 2;
    }
    let estimate = binomial(k as u128 + degree, degree);
    let refuse = |limit: u128, detail: String| Error::BudgetExceeded {
        estimate,
        limit,
        detail,
    };
    if net.depth() > MAX_DEPTH {
        return Err(refuse(MAX_DEPTH as u128, format!("depth {} exceeds {MAX_DEPTH}", net.depth())));
    }
    if k > MAX_WEIGHTS {
        return Err(refuse(MAX_WEIGHTS as u128, format!("{k} weights exceed {MAX_WEIGHTS}")));
    }
    if points > MAX_POINTS {
        return Err(refuse(MAX_POINTS as u128, format!("{points} data points exceed {MAX_POINTS}")));
    }
    if estimate > MAX_TERMS {
        return Err(refuse(
            MAX_TERMS,
            format!("up to {estimate} monomials per equation of degree {degree} in {k} weights"),
        ));
    }
    Ok(())
}

fn check_data(net: &TinyPolyNet, data: &[(Vec<f64>, f64)]) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Precondition("system needs at least one data point".into()));
    }
    if let Some((x, _)) = data.iter().find(|(x, _)| x.len() != net.inputs) {
        return Err(Error::ShapeMismatch {
            layer: 0,
            detail: format!("data point of length {} for a net with {} inputs", x.len(), net.inputs),
        });
    }
    Ok(())
}

/// One equation `f(x_i) - y_i = 0` per data point.
pub fn build_zero_system(net: &TinyPolyNet, data: &[(Vec<f64>, f64)]) -> Result<PolySystem> {
    check_data(net, data)?;
    check_budget(net, data.len(), false)?;
    let k = net.num_weights();
    let equations = data
        .iter()
        .map(|(x, y)| &net.expand(x) - &MPoly::constant(k, *y))
        .collect();
    let mut sys = PolySystem::new(net.weights.clone(), equations, Provenance::ZeroError)?;
    sys.first_layer = net.first_layer.clone();
    Ok(sys)
}

/// Stationarity of the summed square loss: for each weight `w_k`,
/// `sum_i 2 (f(x_i) - y_i) df(x_i)/dw_k = 0`.
pub fn build_critical_system(net: &TinyPolyNet, data: &[(Vec<f64>, f64)]) -> Result<PolySystem> {
    check_data(net, data)?;
    check_budget(net, data.len(), true)?;
    let zero = build_zero_system(net, data)?;
    let k = net.num_weights();
    let equations = (0..k)
        .map(|v| {
            zero.equations.iter().fold(MPoly::zero(k), |acc, r| {
                &acc + &(r * &r.derivative(v)).scale(2.0)
            })
        })
        .collect();
    let mut sys = PolySystem::new(net.weights.clone(), equations, Provenance::CriticalPoint)?;
    sys.first_layer = net.first_layer.clone();
    Ok(sys)
}
