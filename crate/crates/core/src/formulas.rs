//! Closed-form quantities: column sizes ℓ and m, the (d, r)-canonical size,
//! leading-order means and threshold probabilities, the Barbour–Eagleson
//! bound, Poisson pmf and total variation distance.
//!
//! Integer quantities are exact. Real quantities that drop a (1 + o(1))
//! factor are called "leading-order" in their names and in CLI output.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_factorial;
use thiserror::Error;

use crate::dynamics::Rule;
use crate::lattice::{dependency_offsets, enumerate_ball, LatticeError, Site};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormulaError {
    #[error("alpha must lie strictly between 0 and 1, got {0}")]
    Alpha(f64),
    #[error("probability must lie in [0, 1], got {0}")]
    Probability(f64),
    #[error("r = {r} outside 2..={d}")]
    Threshold { r: usize, d: usize },
    #[error("{0} has no closed form here; only the d-neighbour and modified rules do")]
    UnsupportedRule(String),
    #[error("missing joint probability for offset {0}")]
    MissingOffset(Site),
    #[error("invalid parameter: {0}")]
    Invalid(String),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

/// Exact C(n, k) in u128 with C(n, k) = 0 for k > n; saturates at
/// `u128::MAX` when the value does not fit.
pub fn binom(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc = 1u128;
    for i in 0..k {
        // acc·(n − i) is divisible by i + 1; cancel first to stay in range.
        let den = (i + 1) as u128;
        let g = gcd(acc, den);
        let num = (n - i) as u128 / (den / g);
        match (acc / g).checked_mul(num) {
            Some(v) => acc = v,
            None => return u128::MAX,
        }
    }
    acc
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// ℓ_{t,d} = Σ_{i=0}^{t} C(d, i): protected sites forced on layer S_t.
pub fn ell(t: u64, d: u64) -> u128 {
    (0..=t.min(d)).map(|i| binom(d, i)).sum()
}

/// m_{t,d} = Σ_{r=0}^{t} ℓ_{r,d}: size of the column C_t.
pub fn m(t: u64, d: u64) -> u128 {
    (0..=t).map(|r| ell(r, d)).sum()
}

/// Size of a (d, r)-canonical set of radius t with the constrained axes and
/// orientations given explicitly: sites x ∈ B_t with x_i ∈ {0, ε_i} for each
/// constrained axis i.
pub fn m_general_with(
    t: u32,
    d: usize,
    constrained: &[(usize, i64)],
) -> Result<u128, FormulaError> {
    let ball = enumerate_ball(d, t)?;
    Ok(ball
        .sites()
        .iter()
        .filter(|x| {
            constrained
                .iter()
                .all(|&(axis, eps)| x.0[axis] == 0 || x.0[axis] == eps)
        })
        .count() as u128)
}

/// m_t(d, r): lattice-point count of a (d, r)-canonical set, using the first
/// r − 1 axes with positive orientation.
pub fn m_general(t: u32, d: usize, r: usize) -> Result<u128, FormulaError> {
    if r < 2 || r > d {
        return Err(FormulaError::Threshold { r, d });
    }
    let constrained: Vec<(usize, i64)> = (0..r - 1).map(|i| (i, 1)).collect();
    m_general_with(t, d, &constrained)
}

/// Number of minimal protecting configurations: d³2^{d−1} for the
/// d-neighbour rule and d for the modified rule.
pub fn extremal_count(d: usize, rule: Rule) -> Result<u128, FormulaError> {
    let d128 = d as u128;
    match rule {
        Rule::Standard { r } if r == d => Ok(d128.pow(3) << (d - 1)),
        Rule::Modified => Ok(d128),
        other => Err(FormulaError::UnsupportedRule(other.label())),
    }
}

/// Exponent of q in the leading term: m_{t,d} or 2t + 1.
pub fn extremal_size(t: u32, d: usize, rule: Rule) -> Result<u128, FormulaError> {
    match rule {
        Rule::Standard { r } if r == d => Ok(m(t as u64, d as u64)),
        Rule::Modified => Ok(2 * t as u128 + 1),
        other => Err(FormulaError::UnsupportedRule(other.label())),
    }
}

fn check_q(q: f64) -> Result<(), FormulaError> {
    if (0.0..=1.0).contains(&q) {
        Ok(())
    } else {
        Err(FormulaError::Probability(q))
    }
}

/// Leading-order mean of F_t: d³2^{d−1} n^d q^{m_t} (d-neighbour) or
/// d n^d q^{2t+1} (modified).
pub fn lambda_leading(n: u64, d: usize, t: u32, q: f64, rule: Rule) -> Result<f64, FormulaError> {
    check_q(q)?;
    let count = extremal_count(d, rule)? as f64;
    let exponent = extremal_size(t, d, rule)? as i32;
    Ok(count * (n as f64).powi(d as i32) * q.powi(exponent))
}

/// Inverse of [`lambda_leading`] in q.
pub fn q_for_lambda(n: u64, d: usize, t: u32, lambda: f64, rule: Rule) -> Result<f64, FormulaError> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(FormulaError::Invalid(format!("lambda = {lambda}")));
    }
    let count = extremal_count(d, rule)? as f64;
    let exponent = extremal_size(t, d, rule)? as f64;
    let q = (lambda / (count * (n as f64).powi(d as i32))).powf(1.0 / exponent);
    check_q(q)?;
    Ok(q)
}

/// Parameters for the leading-order threshold p_α(t).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdQuery {
    pub d: usize,
    pub n: u64,
    pub t: u32,
    pub alpha: f64,
    pub rule: Rule,
}

/// Leading-order p_α(t) = 1 − (ln(1/α) / (c n^d))^{1/e} where (c, e) is
/// (d³2^{d−1}, m_{t,d}) or (d, 2t + 1).
pub fn p_alpha(query: &ThresholdQuery) -> Result<f64, FormulaError> {
    let ThresholdQuery { d, n, t, alpha, rule } = *query;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(FormulaError::Alpha(alpha));
    }
    if d < 2 || n < 2 {
        return Err(FormulaError::Invalid(format!("d = {d}, n = {n}")));
    }
    let q = q_for_lambda(n, d, t, (1.0 / alpha).ln(), rule)?;
    Ok(1.0 - q)
}

/// Barbour–Eagleson upper bound on d_TV(F_t, Po(λ)) for a translation
/// invariant family: min{1, 1/λ} · n^d · (|B_{2t+1}| ρ₁² + Σ_{o≠0} ρ₂(o)),
/// with λ = n^d ρ₁. Every nonzero offset of norm ≤ 2t + 1 must be present in
/// `rho2_by_offset`.
pub fn stein_chen_rhs(
    n: u64,
    d: usize,
    t: u32,
    rho1: f64,
    rho2_by_offset: &BTreeMap<Site, f64>,
) -> Result<f64, FormulaError> {
    check_q(rho1)?;
    let offsets = dependency_offsets(d, t)?;
    let mut rho2_sum = 0.0;
    for o in &offsets {
        rho2_sum += *rho2_by_offset
            .get(o)
            .ok_or_else(|| FormulaError::MissingOffset(o.clone()))?;
    }
    if rho1 == 0.0 {
        return Ok(0.0);
    }
    let volume = (n as f64).powi(d as i32);
    let lambda = volume * rho1;
    let neighbourhood = (offsets.len() + 1) as f64;
    Ok((1.0f64).min(1.0 / lambda) * volume * (neighbourhood * rho1 * rho1 + rho2_sum))
}

/// P(Po(λ) = k).
pub fn poisson_pmf(k: u64, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    if k == 0 {
        return (-lambda).exp();
    }
    (k as f64 * lambda.ln() - lambda - ln_factorial(k)).exp()
}

/// ½ Σ_k |P(k) − Q(k)| for distributions on 0, 1, 2, …; missing entries are 0.
pub fn tv_distance(p: &[f64], q: &[f64]) -> f64 {
    let len = p.len().max(q.len());
    0.5 * (0..len)
        .map(|k| (p.get(k).copied().unwrap_or(0.0) - q.get(k).copied().unwrap_or(0.0)).abs())
        .sum::<f64>()
}
