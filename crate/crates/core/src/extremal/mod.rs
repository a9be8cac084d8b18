//! Exhaustive certification of the extremal structure of protecting sets.
//!
//! Everything here is brute force over subsets of a small ball, with the
//! protection test delegated to [`crate::dynamics`]. A [`Budget`] caps the
//! number of subsets any single operation may visit.

mod classify;
mod joint;
mod lemmas;
mod sweep;

use num_bigint::BigUint;
use num_traits::ToPrimitive;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{DynamicsError, Rule};
use crate::lattice::{LatticeError, Site};

pub use classify::{classify, classify_protected, Classification};
pub use joint::{exact_joint, exact_joint_brute, rho2_table, JointPolynomial};
pub use lemmas::{
    check_key_lemma, check_layer_bounds, count_components_band, ComponentReport,
    ConfigurationSpec, KeyLemmaCheck, KeyLemmaContext, LayerBound, LayerReport,
    LemmaPrecondition,
};
pub use sweep::{
    count_min_certificates, count_near_minimal, exact_rho1, min_protecting_size,
    min_search_estimate, Combinations,
};

/// Default cap on visited subsets.
pub const DEFAULT_MAX_SUBSETS: u64 = 100_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    pub max_subsets: u64,
}

impl Default for Budget {
    fn default() -> Self {
        Budget {
            max_subsets: DEFAULT_MAX_SUBSETS,
        }
    }
}

impl Budget {
    pub fn unlimited() -> Self {
        Budget {
            max_subsets: u64::MAX,
        }
    }

    pub(crate) fn check(&self, estimate: u128) -> Result<(), ExtremalError> {
        if estimate > self.max_subsets as u128 {
            Err(ExtremalError::BudgetExceeded {
                estimate,
                budget: self.max_subsets,
            })
        } else {
            Ok(())
        }
    }
}

fn show_estimate(e: u128) -> String {
    if e == u128::MAX {
        "2^128 or more".to_string()
    } else {
        e.to_string()
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExtremalError {
    #[error("enumeration needs about {} subset tests, budget is {budget}", show_estimate(*.estimate))]
    BudgetExceeded { estimate: u128, budget: u64 },
    #[error("no subset of the ball protects the origin")]
    NoProtectingSet,
    #[error("offset {offset} has norm above 2t + 1 = {max}")]
    OffsetTooFar { offset: Site, max: u64 },
    #[error("offset must be nonzero")]
    ZeroOffset,
    #[error("ball has {0} sites; at most 63 are supported")]
    BallTooLarge(usize),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

/// A set of initially uninfected sites in B_t that protects the origin.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Certificate {
    pub d: usize,
    pub t: u32,
    pub rule: Rule,
    pub uninfected: Vec<Site>,
    pub size: usize,
    pub classification: Classification,
}

/// Exact counts N_u of u-element uninfected subsets of B_t protecting the
/// origin, so that ρ₁(q) = Σ_u N_u q^u (1 − q)^{|B_t| − u}.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RhoPolynomial {
    pub d: usize,
    pub t: u32,
    pub rule: Rule,
    pub ball_size: usize,
    #[serde(with = "decimal_vec")]
    pub counts: Vec<BigUint>,
}

impl RhoPolynomial {
    /// ρ₁(q).
    pub fn evaluate(&self, q: f64) -> f64 {
        evaluate_counts(&self.counts, self.ball_size, q)
    }

    /// Smallest u with N_u > 0.
    pub fn min_size(&self) -> Option<usize> {
        self.counts.iter().position(|c| *c != BigUint::default())
    }

    /// N_u as u64 (panics if it does not fit, which the budget rules out).
    pub fn count(&self, u: usize) -> u64 {
        self.counts
            .get(u)
            .map_or(0, |c| c.to_u64().expect("count fits in u64"))
    }
}

pub(crate) fn evaluate_counts(counts: &[BigUint], total: usize, q: f64) -> f64 {
    let p = 1.0 - q;
    counts
        .iter()
        .enumerate()
        .filter(|(_, c)| **c != BigUint::default())
        .map(|(u, c)| {
            c.to_f64().unwrap_or(f64::INFINITY) * q.powi(u as i32) * p.powi((total - u) as i32)
        })
        .sum()
}

/// Serialises big integers as decimal strings so JSON consumers never round
/// them through a double.
pub(crate) mod decimal_vec {
    use num_bigint::BigUint;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[BigUint], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|c| c.to_str_radix(10)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<BigUint>, D::Error> {
        let raw = Vec::<String>::deserialize(d)?;
        raw.iter()
            .map(|s| {
                BigUint::parse_bytes(s.as_bytes(), 10)
                    .ok_or_else(|| D::Error::custom(format!("not a decimal integer: {s}")))
            })
            .collect()
    }
}

pub(crate) use decimal_vec as decimal_serde;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rho_polynomial_json_round_trip() {
        let p = RhoPolynomial {
            d: 2,
            t: 1,
            rule: Rule::d_neighbour(2),
            ball_size: 5,
            counts: vec![0u32, 0, 0, 0, 4, 1].into_iter().map(BigUint::from).collect(),
        };
        let json = serde_json::to_string(&p).unwrap();
        assert!(json.contains(r#""counts":["0","0","0","0","4","1"]"#), "{json}");
        let back: RhoPolynomial = serde_json::from_str(&json).unwrap();
        assert_eq!(back, p);
        assert_eq!(p.min_size(), Some(4));
        assert_eq!(p.evaluate(0.5), 0.15625);
    }

    #[test]
    fn budget_refuses_large_estimates() {
        let b = Budget { max_subsets: 10 };
        assert!(b.check(10).is_ok());
        assert_eq!(
            b.check(11),
            Err(ExtremalError::BudgetExceeded {
                estimate: 11,
                budget: 10
            })
        );
    }
}
