use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

/// Sparse multivariate polynomial with `f64` coefficients: a map from
/// exponent vectors (one entry per variable) to coefficients. Zero
/// coefficients are never stored.
#[derive(Clone, Debug, PartialEq)]
pub struct MPoly {
    nvars: usize,
    terms: BTreeMap<Vec<u32>, f64>,
}

/// Serialized form: `[[exponents...], coefficient]` pairs.
#[derive(Serialize, Deserialize)]
struct MPolyRepr {
    nvars: usize,
    terms: Vec<(Vec<u32>, f64)>,
}

impl Serialize for MPoly {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        MPolyRepr {
            nvars: self.nvars,
            terms: self.terms.iter().map(|(e, c)| (e.clone(), *c)).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for MPoly {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let repr = MPolyRepr::deserialize(d)?;
        let mut p = MPoly::zero(repr.nvars);
        for (e, c) in repr.terms {
            if e.len() != repr.nvars {
                return Err(serde::de::Error::custom("exponent vector length mismatch"));
            }
            p.add_term(e, c);
        }
        Ok(p)
    }
}

impl MPoly {
    pub fn zero(nvars: usize) -> Self {
        MPoly {
            nvars,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(nvars: usize, c: f64) -> Self {
        let mut p = Self::zero(nvars);
        p.add_term(vec![0; nvars], c);
        p
    }

    pub fn var(nvars: usize, i: usize) -> Self {
        let mut e = vec![0; nvars];
        e[i] = 1;
        let mut p = Self::zero(nvars);
        p.add_term(e, 1.0);
        p
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn terms(&self) -> impl Iterator<Item = (&[u32], f64)> {
        self.terms.iter().map(|(e, &c)| (e.as_slice(), c))
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn add_term(&mut self, exponents: Vec<u32>, c: f64) {
        debug_assert_eq!(exponents.len(), self.nvars);
        if c == 0.0 {
            return;
        }
        match self.terms.entry(exponents) {
            Entry::Vacant(v) => {
                v.insert(c);
            }
            Entry::Occupied(mut o) => {
                *o.get_mut() += c;
                if *o.get() == 0.0 {
                    o.remove();
                }
            }
        }
    }

    pub fn coefficient(&self, exponents: &[u32]) -> f64 {
        self.terms.get(exponents).copied().unwrap_or(0.0)
    }

    /// Total degree; the zero polynomial has degree 0.
    pub fn total_degree(&self) -> u32 {
        self.terms
            .keys()
            .map(|e| e.iter().sum::<u32>())
            .max()
            .unwrap_or(0)
    }

    /// Degree in the subset of variables `vars`, treating the others as
    /// coefficients.
    pub fn degree_in(&self, vars: &[usize]) -> u32 {
        self.terms
            .keys()
            .map(|e| vars.iter().map(|&v| e[v]).sum::<u32>())
            .max()
            .unwrap_or(0)
    }

    pub fn scale(&self, k: f64) -> Self {
        let mut out = Self::zero(self.nvars);
        for (e, c) in &self.terms {
            out.add_term(e.clone(), c * k);
        }
        out
    }

    pub fn pow(&self, k: u32) -> Self {
        let mut out = Self::constant(self.nvars, 1.0);
        for _ in 0..k {
            out = &out * self;
        }
        out
    }

    /// `sum_k coefficients[k] * self^k`, by Horner's rule.
    pub fn compose(&self, coefficients: &[f64]) -> Self {
        let mut acc = Self::zero(self.nvars);
        for &c in coefficients.iter().rev() {
            acc = &(&acc * self) + &Self::constant(self.nvars, c);
        }
        acc
    }

    pub fn derivative(&self, var: usize) -> Self {
        let mut out = Self::zero(self.nvars);
        for (e, c) in &self.terms {
            if e[var] > 0 {
                let mut d = e.clone();
                d[var] -= 1;
                out.add_term(d, c * e[var] as f64);
            }
        }
        out
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(e, c)| {
                c * e
                    .iter()
                    .zip(x)
                    .map(|(&p, &v)| v.powi(p as i32))
                    .product::<f64>()
            })
            .sum()
    }
}

impl Add for &MPoly {
    type Output = MPoly;
    fn add(self, rhs: &MPoly) -> MPoly {
        let mut out = self.clone();
        for (e, c) in &rhs.terms {
            out.add_term(e.clone(), *c);
        }
        out
    }
}

impl Sub for &MPoly {
    type Output = MPoly;
    fn sub(self, rhs: &MPoly) -> MPoly {
        self + &(-rhs)
    }
}

impl Neg for &MPoly {
    type Output = MPoly;
    fn neg(self) -> MPoly {
        self.scale(-1.0)
    }
}

impl Mul for &MPoly {
    type Output = MPoly;
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn mul(self, rhs: &MPoly) -> MPoly {
        let mut out = MPoly::zero(self.nvars);
        for (ea, ca) in &self.terms {
            for (eb, cb) in &rhs.terms {
                let e: Vec<u32> = ea.iter().zip(eb).map(|(a, b)| a + b).collect();
                out.add_term(e, ca * cb);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_of_sum() {
        let s = &MPoly::var(2, 0) + &MPoly::var(2, 1);
        let sq = s.pow(2);
        assert_eq!(sq.coefficient(&[2, 0]), 1.0);
        assert_eq!(sq.coefficient(&[1, 1]), 2.0);
        assert_eq!(sq.coefficient(&[0, 2]), 1.0);
        assert_eq!(sq.num_terms(), 3);
        assert_eq!(sq.total_degree(), 2);
    }

    #[test]
    fn cancellation_removes_terms() {
        let x = MPoly::var(1, 0);
        assert!((&x - &x).is_zero());
    }

    #[test]
    fn compose_and_derivative() {
        // P(z) = 1 + 2z + 3z^2 at z = x: derivative 2 + 6x.
        let p = MPoly::var(1, 0).compose(&[1.0, 2.0, 3.0]);
        assert_eq!(p.eval(&[2.0]), 17.0);
        assert_eq!(p.derivative(0).eval(&[2.0]), 14.0);
    }

    #[test]
    fn serde_round_trip() {
        let p = (&MPoly::var(3, 0) * &MPoly::var(3, 2)).compose(&[0.5, 0.0, -1.0]);
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(serde_json::from_str::<MPoly>(&s).unwrap(), p);
    }
}
