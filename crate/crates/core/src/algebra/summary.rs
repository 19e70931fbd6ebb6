use num_bigint::BigUint;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Degree and dimension counts for a zero-error system with `n` equations
/// in `k` weights, each of degree `l^d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolySystemSummary {
    pub l: u64,
    pub d: u64,
    pub n: u64,
    pub k: u64,
    pub per_equation_degree_log2: f64,
    /// `l^d` when it fits in 128 bits.
    pub per_equation_degree: Option<u128>,
    pub bezout_log2: f64,
    /// Exact `l^(N d)`, present when `bezout_log2 <= 64`.
    #[serde(with = "opt_biguint")]
    pub bezout_exact: Option<BigUint>,
    pub shub_smale_log2: f64,
    /// Exact `l^(N d / 2)`, present when the bound is exact and `N d` is even.
    #[serde(with = "opt_biguint")]
    pub shub_smale_exact: Option<BigUint>,
    pub solution_dim: i128,
}

pub fn summarize(l: u64, d: u64, n: u64, k: u64) -> Result<PolySystemSummary> {
    if l == 0 || d == 0 || n == 0 || k == 0 {
        return Err(Error::Precondition(format!(
            "summary needs positive l, d, N, K (got {l}, {d}, {n}, {k})"
        )));
    }
    let log_l = (l as f64).log2();
    let per_equation_degree_log2 = d as f64 * log_l;
    let bezout_log2 = n as f64 * d as f64 * log_l;
    let nd = n.checked_mul(d);
    let exact = |e: u64| {
        u32::try_from(e)
            .ok()
            .map(|e| BigUint::from(l).pow(e))
    };
    let bezout_exact = match nd {
        Some(nd) if bezout_log2 <= 64.0 => exact(nd),
        _ => None,
    };
    let shub_smale_exact = match nd {
        Some(nd) if bezout_exact.is_some() && nd % 2 == 0 => exact(nd / 2),
        _ => None,
    };
    let per_equation_degree = u32::try_from(d)
        .ok()
        .and_then(|d| (l as u128).checked_pow(d));
    Ok(PolySystemSummary {
        l,
        d,
        n,
        k,
        per_equation_degree_log2,
        per_equation_degree,
        bezout_log2,
        bezout_exact,
        shub_smale_log2: bezout_log2 / 2.0,
        shub_smale_exact,
        solution_dim: k as i128 - n as i128,
    })
}

mod opt_biguint {
    use num_bigint::BigUint;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<BigUint>, s: S) -> Result<S::Ok, S::Error> {
        v.as_ref().map(|b| b.to_string()).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<BigUint>, D::Error> {
        let s: Option<String> = Option::deserialize(d)?;
        s.map(|s| s.parse().map_err(serde::de::Error::custom))
            .transpose()
    }
}
