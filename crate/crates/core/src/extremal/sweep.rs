//! Size-major subset sweep over B_t.
//!
//! Subsets of a fixed size are visited in colexicographic order and the rank
//! range is cut into fixed chunks, each processed independently; chunk
//! results are merged in chunk order, so the output does not depend on the
//! number of worker threads.

use std::sync::Arc;

use num_bigint::BigUint;
use rayon::prelude::*;

use super::{classify_protected, Budget, Certificate, ExtremalError, RhoPolynomial};
use crate::dynamics::{protected_mask, InfectionState, ProtectionTester, Rule, Topology};
use crate::formulas::{binom, extremal_size, m, m_general};

/// Subsets per parallel work item.
const CHUNK: u128 = 1 << 14;

/// k-subsets of `0..n` in colex order, starting from a given rank.
#[derive(Clone, Debug)]
pub struct Combinations {
    n: usize,
    current: Vec<usize>,
    remaining: u128,
}

impl Combinations {
    /// All k-subsets of `0..n`.
    pub fn new(n: usize, k: usize) -> Self {
        Self::ranked(n, k, 0, binom(n as u64, k as u64))
    }

    /// `count` subsets starting at colex rank `start`.
    pub fn ranked(n: usize, k: usize, start: u128, count: u128) -> Self {
        let total = binom(n as u64, k as u64);
        let count = count.min(total.saturating_sub(start));
        let mut current = vec![0; k];
        if count > 0 {
            // Greedy unranking: the i-th element is the largest c with C(c, i+1) ≤ rank.
            let mut rank = start;
            let mut upper = n;
            for i in (0..k).rev() {
                let mut c = i;
                while c + 1 < upper && binom((c + 1) as u64, (i + 1) as u64) <= rank {
                    c += 1;
                }
                rank -= binom(c as u64, (i + 1) as u64);
                current[i] = c;
                upper = c;
            }
        }
        Combinations {
            n,
            current,
            remaining: count,
        }
    }

    /// Calls `f` on every subset in the range.
    pub fn for_each(mut self, mut f: impl FnMut(&[usize])) {
        while self.remaining > 0 {
            f(&self.current);
            self.remaining -= 1;
            if self.remaining > 0 && !self.advance() {
                break;
            }
        }
    }

    fn advance(&mut self) -> bool {
        let k = self.current.len();
        for j in 0..k {
            let limit = if j + 1 < k { self.current[j + 1] } else { self.n };
            if self.current[j] + 1 < limit {
                self.current[j] += 1;
                for (i, slot) in self.current[..j].iter_mut().enumerate() {
                    *slot = i;
                }
                return true;
            }
        }
        false
    }
}

struct Sweep {
    d: usize,
    t: u32,
    rule: Rule,
    topology: Arc<Topology>,
}

struct SizeResult {
    count: u64,
    subsets: Vec<Vec<usize>>,
}

impl Sweep {
    fn new(d: usize, t: u32, rule: Rule) -> Result<Self, ExtremalError> {
        rule.validate(d)?;
        let topology = Topology::ball(d, t)?;
        Ok(Sweep { d, t, rule, topology })
    }

    fn n(&self) -> usize {
        self.topology.len()
    }

    /// Protecting subsets of size `u`; collects them when `collect` is set.
    /// The origin (index 0) must itself be uninfected, so only the other
    /// u − 1 elements are enumerated.
    fn size(&self, u: usize, collect: bool) -> SizeResult {
        if u == 0 {
            return SizeResult {
                count: 0,
                subsets: Vec::new(),
            };
        }
        let rest = self.n() - 1;
        let total = binom(rest as u64, (u - 1) as u64);
        let chunks = total.div_ceil(CHUNK) as u64;
        let parts: Vec<SizeResult> = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut tester = ProtectionTester::new(Arc::clone(&self.topology), self.rule)
                    .expect("ball topology");
                let mut part = SizeResult {
                    count: 0,
                    subsets: Vec::new(),
                };
                let mut subset = vec![0; u];
                Combinations::ranked(rest, u - 1, c as u128 * CHUNK, CHUNK).for_each(|s| {
                    for (slot, &i) in subset[1..].iter_mut().zip(s) {
                        *slot = i + 1;
                    }
                    if tester.origin_protected(&subset) {
                        part.count += 1;
                        if collect {
                            part.subsets.push(subset.clone());
                        }
                    }
                });
                part
            })
            .collect();
        let mut out = SizeResult {
            count: 0,
            subsets: Vec::new(),
        };
        for p in parts {
            out.count += p.count;
            out.subsets.extend(p.subsets);
        }
        out
    }

    fn certificate(&self, subset: &[usize]) -> Certificate {
        let ball = self.topology.ball_index().expect("ball");
        let state = InfectionState::with_uninfected_indices(Arc::clone(&self.topology), subset.iter().copied());
        let protected = protected_mask(&state, self.rule).expect("ball domain");
        Certificate {
            d: self.d,
            t: self.t,
            rule: self.rule,
            uninfected: subset.iter().map(|&i| ball.site(i).clone()).collect(),
            size: subset.len(),
            classification: classify_protected(ball, &protected),
        }
    }

    /// Upper bound on the minimal size, used for the work estimate.
    fn candidate(&self) -> usize {
        let by_formula = match self.rule {
            Rule::Standard { r } if r >= 2 && r <= self.d => m_general(self.t, self.d, r).ok(),
            Rule::Modified => extremal_size(self.t, self.d, self.rule).ok(),
            _ => None,
        };
        by_formula.map_or(self.n(), |c| (c as usize).min(self.n()))
    }

    fn min_size(&self, budget: &Budget) -> Result<usize, ExtremalError> {
        budget.check(min_search_estimate_for(self.n(), self.candidate()))?;
        let mut spent: u128 = 0;
        for u in 0..=self.n() {
            spent = spent.saturating_add(binom(self.n() as u64, u as u64));
            budget.check(spent)?;
            if self.size(u, false).count > 0 {
                return Ok(u);
            }
        }
        Err(ExtremalError::NoProtectingSet)
    }
}

fn min_search_estimate_for(n: usize, candidate: usize) -> u128 {
    (0..=candidate).fold(0u128, |acc, u| acc.saturating_add(binom(n as u64, u as u64)))
}

/// Subsets visited by [`min_protecting_size`] when the minimum equals its
/// closed-form candidate (the whole power set when no formula applies).
pub fn min_search_estimate(d: usize, t: u32, rule: Rule) -> Result<u128, ExtremalError> {
    let sweep = Sweep::new(d, t, rule)?;
    Ok(min_search_estimate_for(sweep.n(), sweep.candidate()))
}

/// Smallest number of initially uninfected sites in B_t that keeps the
/// origin uninfected up to time t.
pub fn min_protecting_size(d: usize, t: u32, rule: Rule, budget: &Budget) -> Result<usize, ExtremalError> {
    Sweep::new(d, t, rule)?.min_size(budget)
}

/// All protecting sets of minimal size, classified.
pub fn count_min_certificates(
    d: usize,
    t: u32,
    rule: Rule,
    budget: &Budget,
) -> Result<(usize, Vec<Certificate>), ExtremalError> {
    let sweep = Sweep::new(d, t, rule)?;
    let size = sweep.min_size(budget)?;
    let found = sweep.size(size, true);
    let certs = found.subsets.iter().map(|s| sweep.certificate(s)).collect::<Vec<_>>();
    Ok((certs.len(), certs))
}

/// Exact N_u for every u, visiting all 2^{|B_t|} subsets size by size.
pub fn exact_rho1(d: usize, t: u32, rule: Rule, budget: &Budget) -> Result<RhoPolynomial, ExtremalError> {
    let sweep = Sweep::new(d, t, rule)?;
    let n = sweep.n();
    budget.check(1u128.checked_shl(n as u32).unwrap_or(u128::MAX))?;
    let counts = (0..=n).map(|u| BigUint::from(sweep.size(u, false).count)).collect();
    Ok(RhoPolynomial {
        d,
        t,
        rule,
        ball_size: n,
        counts,
    })
}

/// g_t(k) = N_{m_t + k} for the d-neighbour rule.
pub fn count_near_minimal(d: usize, t: u32, k: usize, budget: &Budget) -> Result<u64, ExtremalError> {
    let sweep = Sweep::new(d, t, Rule::d_neighbour(d))?;
    let u = m(t as u64, d as u64) as usize + k;
    if u > sweep.n() {
        return Ok(0);
    }
    budget.check(binom(sweep.n() as u64, u as u64))?;
    Ok(sweep.size(u, false).count)
}
