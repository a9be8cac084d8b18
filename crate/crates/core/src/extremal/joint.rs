//! Joint protection of the origin and a second site.
//!
//! Protection of x at time t depends only on the initial states in B_t(x),
//! so the event {0 protected} ∩ {y protected} is a function of the states on
//! U = B_t(0) ∪ B_t(y). Conditioning on the overlap I = B_t(0) ∩ B_t(y)
//! makes the two events independent, and the joint count polynomial is
//!
//!   Σ_{states of I} z^{|uninfected in I|} · f₀(z) · f_y(z)
//!
//! where f₀, f_y count protecting states of the private parts. The cost is
//! 2^{|I|}·(2^{|B_t(0) ∖ I|} + 2^{|B_t(y) ∖ I|}) instead of 2^{|U|}.

use std::collections::BTreeMap;
use std::sync::Arc;

use num_bigint::BigUint;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{evaluate_counts, Budget, ExtremalError};
use crate::dynamics::{ProtectionTester, Rule, Topology};
use crate::lattice::{dependency_offsets, Site};

/// Counts c_u of u-element uninfected subsets of B_t(0) ∪ B_t(offset) under
/// which both the origin and `offset` are protected.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointPolynomial {
    pub d: usize,
    pub t: u32,
    pub offset: Site,
    pub rule: Rule,
    pub union_size: usize,
    #[serde(with = "super::decimal_serde")]
    pub counts: Vec<BigUint>,
}

impl JointPolynomial {
    /// P(0 and offset both protected) at uninfected probability q.
    pub fn evaluate(&self, q: f64) -> f64 {
        evaluate_counts(&self.counts, self.union_size, q)
    }

    /// Smallest number of uninfected sites in the union protecting both.
    pub fn min_size(&self) -> Option<usize> {
        self.counts.iter().position(|c| *c != BigUint::default())
    }
}

/// How the two balls overlap, in ball indices of each frame.
struct Overlap {
    topology: Arc<Topology>,
    /// (index in the origin's ball, index in the offset's ball)
    shared: Vec<(usize, usize)>,
    private0: Vec<usize>,
    private1: Vec<usize>,
}

impl Overlap {
    fn new(d: usize, t: u32, offset: &Site) -> Result<Self, ExtremalError> {
        if offset.dim() != d {
            return Err(crate::lattice::LatticeError::DimensionMismatch {
                expected: d,
                got: offset.dim(),
            }
            .into());
        }
        if offset.is_origin() {
            return Err(ExtremalError::ZeroOffset);
        }
        let max = 2 * t as u64 + 1;
        if offset.norm() > max {
            return Err(ExtremalError::OffsetTooFar {
                offset: offset.clone(),
                max,
            });
        }
        let topology = Topology::ball(d, t)?;
        let ball = topology.ball_index().expect("ball");
        let mut shared = Vec::new();
        let mut private0 = Vec::new();
        for (i, x) in ball.sites().iter().enumerate() {
            match ball.index_of(&(x - offset)) {
                Some(j) => shared.push((i, j)),
                None => private0.push(i),
            }
        }
        let private1 = (0..ball.len())
            .filter(|&j| ball.index_of(&(ball.site(j) + offset)).is_none())
            .collect();
        Ok(Overlap {
            topology,
            shared,
            private0,
            private1,
        })
    }

    fn union_size(&self) -> usize {
        self.shared.len() + self.private0.len() + self.private1.len()
    }

    fn work(&self) -> u128 {
        let pow = |k: usize| 1u128.checked_shl(k as u32).unwrap_or(u128::MAX);
        pow(self.shared.len()).saturating_mul(pow(self.private0.len()).saturating_add(pow(self.private1.len())))
    }
}

/// Protecting-state counts by size for one private part, given which
/// shared sites (in that ball's own indices) are uninfected.
fn private_counts(tester: &mut ProtectionTester, shared_uninfected: &[usize], private: &[usize]) -> Vec<u64> {
    let mut counts = vec![0u64; private.len() + 1];
    let mut list = Vec::with_capacity(shared_uninfected.len() + private.len());
    for mask in 0u64..(1u64 << private.len()) {
        list.clear();
        list.extend_from_slice(shared_uninfected);
        list.extend(
            private
                .iter()
                .enumerate()
                .filter(|(b, _)| mask >> b & 1 == 1)
                .map(|(_, &i)| i),
        );
        if list.contains(&0) && tester.origin_protected(&list) {
            counts[mask.count_ones() as usize] += 1;
        }
    }
    counts
}

/// Exact joint protection polynomial for the origin and `offset`.
pub fn exact_joint(
    d: usize,
    t: u32,
    offset: &Site,
    rule: Rule,
    budget: &Budget,
) -> Result<JointPolynomial, ExtremalError> {
    rule.validate(d)?;
    let ov = Overlap::new(d, t, offset)?;
    budget.check(ov.work())?;
    if ov.private0.len() >= 64 || ov.shared.len() >= 64 {
        return Err(ExtremalError::BallTooLarge(ov.topology.len()));
    }
    let union = ov.union_size();
    let shared = ov.shared.len();
    let parts: Vec<Vec<u64>> = (0u64..(1u64 << shared))
        .into_par_iter()
        .map_init(
            || {
                (
                    ProtectionTester::new(Arc::clone(&ov.topology), rule).expect("ball"),
                    ProtectionTester::new(Arc::clone(&ov.topology), rule).expect("ball"),
                )
            },
            |(t0, t1), mask| {
                let on: Vec<usize> = (0..shared).filter(|b| mask >> b & 1 == 1).collect();
                let in0: Vec<usize> = on.iter().map(|&b| ov.shared[b].0).collect();
                let in1: Vec<usize> = on.iter().map(|&b| ov.shared[b].1).collect();
                let f0 = private_counts(t0, &in0, &ov.private0);
                let mut out = vec![0u64; union + 1];
                if f0.iter().all(|&c| c == 0) {
                    return out;
                }
                let f1 = private_counts(t1, &in1, &ov.private1);
                for (a, &c0) in f0.iter().enumerate().filter(|(_, c)| **c > 0) {
                    for (b, &c1) in f1.iter().enumerate().filter(|(_, c)| **c > 0) {
                        out[on.len() + a + b] += c0 * c1;
                    }
                }
                out
            },
        )
        .collect();
    let mut counts = vec![BigUint::default(); union + 1];
    for part in parts {
        for (slot, c) in counts.iter_mut().zip(part) {
            *slot += c;
        }
    }
    Ok(JointPolynomial {
        d,
        t,
        offset: offset.clone(),
        rule,
        union_size: union,
        counts,
    })
}

/// The same polynomial by direct enumeration of all 2^{|U|} states of the
/// union, each event tested on its own ball. A cross-check at tiny sizes.
pub fn exact_joint_brute(d: usize, t: u32, offset: &Site, rule: Rule) -> Result<JointPolynomial, ExtremalError> {
    rule.validate(d)?;
    let ov = Overlap::new(d, t, offset)?;
    let union = ov.union_size();
    if union > 30 {
        return Err(ExtremalError::BallTooLarge(union));
    }
    let ball = ov.topology.ball_index().expect("ball");
    // Union sites listed in Z^d coordinates.
    let mut sites: Vec<Site> = ball.sites().to_vec();
    for &j in &ov.private1 {
        sites.push(ball.site(j) + offset);
    }
    let in0: Vec<Option<usize>> = sites.iter().map(|s| ball.index_of(s)).collect();
    let in1: Vec<Option<usize>> = sites.iter().map(|s| ball.index_of(&(s - offset))).collect();
    let mut t0 = ProtectionTester::new(Arc::clone(&ov.topology), rule)?;
    let mut t1 = ProtectionTester::new(Arc::clone(&ov.topology), rule)?;
    let mut counts = vec![BigUint::default(); union + 1];
    let mut l0 = Vec::new();
    let mut l1 = Vec::new();
    for mask in 0u64..(1u64 << union) {
        l0.clear();
        l1.clear();
        for b in (0..union).filter(|b| mask >> b & 1 == 1) {
            l0.extend(in0[b]);
            l1.extend(in1[b]);
        }
        if l0.contains(&0) && l1.contains(&0) && t0.origin_protected(&l0) && t1.origin_protected(&l1) {
            counts[mask.count_ones() as usize] += 1u32;
        }
    }
    Ok(JointPolynomial {
        d,
        t,
        offset: offset.clone(),
        rule,
        union_size: union,
        counts,
    })
}

/// ρ₂(offset) at q for every nonzero offset in B_{2t+1}.
pub fn rho2_table(
    d: usize,
    t: u32,
    rule: Rule,
    q: f64,
    budget: &Budget,
) -> Result<BTreeMap<Site, f64>, ExtremalError> {
    let mut out = BTreeMap::new();
    for offset in dependency_offsets(d, t)? {
        let joint = exact_joint(d, t, &offset, rule, budget)?;
        out.insert(offset, joint.evaluate(q));
    }
    Ok(out)
}
