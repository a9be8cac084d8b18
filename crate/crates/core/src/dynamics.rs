//! Synchronous bootstrap dynamics on a torus or on a ball whose exterior is
//! permanently infected.
//!
//! The ball domain is exact for questions about a site's state at time `s`:
//! that state depends only on the initial states inside the radius-`s` ball
//! around it, and for every protected-status question asked here that ball
//! lies inside B_t.

use std::sync::Arc;

use fixedbitset::FixedBitSet;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::{enumerate_ball, BallIndex, LatticeError, Site, TorusSpec};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DynamicsError {
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error("threshold r = {r} is outside 1..={max} for dimension {d}")]
    Threshold { r: usize, d: usize, max: usize },
    #[error("site {0} is not in the domain")]
    SiteOutsideDomain(Site),
    #[error("operation requires a {expected} domain")]
    WrongDomain { expected: &'static str },
}

/// Update rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    /// Infect an uninfected site with at least `r` infected neighbours.
    Standard { r: usize },
    /// Infect an uninfected site with an infected neighbour along every axis.
    Modified,
}

impl Rule {
    /// The d-neighbour rule.
    pub fn d_neighbour(d: usize) -> Self {
        Rule::Standard { r: d }
    }

    pub fn validate(&self, d: usize) -> Result<(), DynamicsError> {
        match *self {
            Rule::Standard { r } if r == 0 || r > 2 * d => Err(DynamicsError::Threshold {
                r,
                d,
                max: 2 * d,
            }),
            _ => Ok(()),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Rule::Standard { r } => format!("standard-r{r}"),
            Rule::Modified => "modified".to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Domain {
    Torus(TorusSpec),
    /// B_t^d with every site outside it infected at all times.
    Ball { d: usize, t: u32 },
}

const EXTERIOR: u32 = u32::MAX;

/// Precomputed adjacency of a domain. Each site has `2d` neighbour slots in
/// the order `+e_0, −e_0, +e_1, −e_1, …`; a slot may point outside a ball
/// domain (always infected) and on an n = 2 torus both slots of an axis
/// point at the same site, which then counts twice.
#[derive(Debug)]
pub struct Topology {
    domain: Domain,
    d: usize,
    len: usize,
    neighbors: Vec<u32>,
    ball: Option<BallIndex>,
}

impl Topology {
    pub fn torus(spec: TorusSpec) -> Result<Arc<Self>, DynamicsError> {
        let len = spec.volume()?;
        if len >= EXTERIOR as u64 {
            return Err(LatticeError::Overflow {
                what: "torus index",
            }
            .into());
        }
        let len = len as usize;
        let d = spec.dim();
        let n = spec.side();
        // Stride of axis i in the row-major layout (axis 0 most significant).
        let strides: Vec<usize> = (0..d).map(|i| n.pow((d - 1 - i) as u32)).collect();
        let mut neighbors = Vec::with_capacity(len * 2 * d);
        for idx in 0..len {
            for &stride in &strides {
                let coord = (idx / stride) % n;
                let up = if coord + 1 == n { idx + stride - n * stride } else { idx + stride };
                let down = if coord == 0 { idx + (n - 1) * stride } else { idx - stride };
                neighbors.push(up as u32);
                neighbors.push(down as u32);
            }
        }
        Ok(Arc::new(Topology {
            domain: Domain::Torus(spec),
            d,
            len,
            neighbors,
            ball: None,
        }))
    }

    pub fn ball(d: usize, t: u32) -> Result<Arc<Self>, DynamicsError> {
        let ball = enumerate_ball(d, t)?;
        let len = ball.len();
        let mut neighbors = Vec::with_capacity(len * 2 * d);
        for site in ball.sites() {
            for axis in 0..d {
                for sign in [1, -1] {
                    let nb = site.shifted(axis, sign);
                    neighbors.push(ball.index_of(&nb).map_or(EXTERIOR, |i| i as u32));
                }
            }
        }
        Ok(Arc::new(Topology {
            domain: Domain::Ball { d, t },
            d,
            len,
            neighbors,
            ball: Some(ball),
        }))
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Ball enumeration, for ball domains.
    pub fn ball_index(&self) -> Option<&BallIndex> {
        self.ball.as_ref()
    }

    pub fn index_of(&self, site: &Site) -> Option<usize> {
        match &self.domain {
            Domain::Torus(spec) => (site.dim() == self.d).then(|| spec.index_of(site)),
            Domain::Ball { .. } => self.ball.as_ref()?.index_of(site),
        }
    }

    pub fn site(&self, index: usize) -> Site {
        match &self.domain {
            Domain::Torus(spec) => spec.site_at(index),
            Domain::Ball { .. } => self.ball.as_ref().expect("ball").site(index).clone(),
        }
    }

    /// In-domain neighbours of a site, in slot order (repeated on an n = 2
    /// torus, exterior slots of a ball skipped).
    pub fn neighbor_indices(&self, index: usize) -> impl Iterator<Item = usize> + '_ {
        self.slots(index)
            .iter()
            .filter(|&&s| s != EXTERIOR)
            .map(|&s| s as usize)
    }

    fn slots(&self, index: usize) -> &[u32] {
        &self.neighbors[index * 2 * self.d..(index + 1) * 2 * self.d]
    }

    /// Whether the uninfected site `index` becomes infected given `infected`.
    #[inline]
    fn gets_infected(&self, rule: Rule, infected: &FixedBitSet, index: usize) -> bool {
        let is_inf = |slot: u32| slot == EXTERIOR || infected.contains(slot as usize);
        let slots = self.slots(index);
        match rule {
            Rule::Standard { r } => slots.iter().filter(|&&s| is_inf(s)).count() >= r,
            Rule::Modified => slots.chunks_exact(2).all(|pair| is_inf(pair[0]) || is_inf(pair[1])),
        }
    }

    /// Writes A_{t+1} into `next` and returns the number of newly infected
    /// sites. `next` is resized as needed.
    pub fn step_into(&self, rule: Rule, cur: &FixedBitSet, next: &mut FixedBitSet) -> usize {
        next.clone_from(cur);
        let mut newly = 0;
        for idx in cur.zeroes() {
            if self.gets_infected(rule, cur, idx) {
                next.insert(idx);
                newly += 1;
            }
        }
        newly
    }
}

/// Infected set A_t over a domain, together with the step counter.
#[derive(Clone, Debug)]
pub struct InfectionState {
    topology: Arc<Topology>,
    infected: FixedBitSet,
    time: u64,
}

impl PartialEq for InfectionState {
    fn eq(&self, other: &Self) -> bool {
        self.topology.domain == other.topology.domain
            && self.infected == other.infected
            && self.time == other.time
    }
}

impl InfectionState {
    pub fn all_infected(topology: Arc<Topology>) -> Self {
        let mut infected = FixedBitSet::with_capacity(topology.len());
        infected.insert_range(..);
        InfectionState {
            topology,
            infected,
            time: 0,
        }
    }

    pub fn none_infected(topology: Arc<Topology>) -> Self {
        let infected = FixedBitSet::with_capacity(topology.len());
        InfectionState {
            topology,
            infected,
            time: 0,
        }
    }

    /// Everything infected except the listed site indices.
    pub fn with_uninfected_indices(
        topology: Arc<Topology>,
        uninfected: impl IntoIterator<Item = usize>,
    ) -> Self {
        let mut s = Self::all_infected(topology);
        for i in uninfected {
            s.infected.set(i, false);
        }
        s
    }

    /// Everything infected except the listed sites.
    pub fn with_uninfected_sites<'a>(
        topology: Arc<Topology>,
        uninfected: impl IntoIterator<Item = &'a Site>,
    ) -> Result<Self, DynamicsError> {
        let idx = uninfected
            .into_iter()
            .map(|s| {
                topology
                    .index_of(s)
                    .ok_or_else(|| DynamicsError::SiteOutsideDomain(s.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::with_uninfected_indices(topology, idx))
    }

    pub fn from_bits(topology: Arc<Topology>, infected: FixedBitSet) -> Self {
        assert_eq!(infected.len(), topology.len(), "bit length must equal domain size");
        InfectionState {
            topology,
            infected,
            time: 0,
        }
    }

    pub fn topology(&self) -> &Arc<Topology> {
        &self.topology
    }

    pub fn infected(&self) -> &FixedBitSet {
        &self.infected
    }

    pub fn time(&self) -> u64 {
        self.time
    }

    pub fn is_infected(&self, index: usize) -> bool {
        self.infected.contains(index)
    }

    pub fn uninfected_count(&self) -> usize {
        self.topology.len() - self.infected.count_ones(..)
    }

    pub fn is_fully_infected(&self) -> bool {
        self.infected.is_full()
    }

    pub fn uninfected_sites(&self) -> Vec<Site> {
        self.infected.zeroes().map(|i| self.topology.site(i)).collect()
    }

    /// A_{t+1}.
    pub fn step(&self, rule: Rule) -> InfectionState {
        let mut next = FixedBitSet::with_capacity(self.topology.len());
        self.topology.step_into(rule, &self.infected, &mut next);
        InfectionState {
            topology: Arc::clone(&self.topology),
            infected: next,
            time: self.time + 1,
        }
    }

    /// Advances in place; returns the number of newly infected sites.
    pub fn advance(&mut self, rule: Rule, scratch: &mut FixedBitSet) -> usize {
        let newly = self.topology.step_into(rule, &self.infected, scratch);
        std::mem::swap(&mut self.infected, scratch);
        self.time += 1;
        newly
    }

    /// Site-wise `self ⊆ other` for the infected sets.
    pub fn infected_subset_of(&self, other: &InfectionState) -> bool {
        self.infected.is_subset(&other.infected)
    }
}

/// Outcome of running the process to a fixpoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReport {
    Percolated { time: u64 },
    Stuck { t_stable: u64, uninfected: u64 },
}

impl StopReport {
    /// Percolation time, `None` when stuck (treated as +∞ in comparisons).
    pub fn time(&self) -> Option<u64> {
        match *self {
            StopReport::Percolated { time } => Some(time),
            StopReport::Stuck { .. } => None,
        }
    }
}

/// Runs from `initial` until full infection or a fixpoint below it.
pub fn percolation_time(initial: &InfectionState, rule: Rule) -> StopReport {
    let mut state = initial.clone();
    let mut scratch = FixedBitSet::with_capacity(state.topology.len());
    let mut uninfected = state.uninfected_count() as u64;
    loop {
        if uninfected == 0 {
            return StopReport::Percolated { time: state.time };
        }
        let newly = state.advance(rule, &mut scratch) as u64;
        if newly == 0 {
            return StopReport::Stuck {
                t_stable: state.time - 1,
                uninfected,
            };
        }
        uninfected -= newly;
    }
}

/// |V| − |A_t|: number of uninfected sites after `t` steps.
pub fn uninfected_count_at(initial: &InfectionState, rule: Rule, t: u64) -> u64 {
    let mut state = initial.clone();
    let mut scratch = FixedBitSet::with_capacity(state.topology.len());
    let mut uninfected = state.uninfected_count() as u64;
    for _ in 0..t {
        if uninfected == 0 {
            break;
        }
        let newly = state.advance(rule, &mut scratch) as u64;
        if newly == 0 {
            break;
        }
        uninfected -= newly;
    }
    uninfected
}

fn ball_radius(state: &InfectionState) -> Result<u32, DynamicsError> {
    match state.topology.domain {
        Domain::Ball { t, .. } => Ok(t),
        Domain::Torus(_) => Err(DynamicsError::WrongDomain { expected: "ball" }),
    }
}

/// Protected sites as a bit mask over ball indices: site x is protected when
/// it is still uninfected at time `t − ‖x‖`.
pub fn protected_mask(initial: &InfectionState, rule: Rule) -> Result<FixedBitSet, DynamicsError> {
    let t = ball_radius(initial)?;
    let ball = initial.topology.ball_index().expect("ball domain");
    let mut protected = FixedBitSet::with_capacity(ball.len());
    let mut state = initial.clone();
    let mut scratch = FixedBitSet::with_capacity(ball.len());
    for s in 0..=t {
        for idx in ball.layer_range(t - s) {
            if !state.infected.contains(idx) {
                protected.insert(idx);
            }
        }
        if s < t {
            state.advance(rule, &mut scratch);
        }
    }
    Ok(protected)
}

/// The protected sites of a ball-domain state, in ball order.
pub fn protected_set(initial: &InfectionState, rule: Rule) -> Result<Vec<Site>, DynamicsError> {
    let mask = protected_mask(initial, rule)?;
    let ball = initial.topology.ball_index().expect("ball domain");
    Ok(mask.ones().map(|i| ball.site(i).clone()).collect())
}

/// Whether the origin is still uninfected at time t.
pub fn is_origin_protected(initial: &InfectionState, rule: Rule) -> Result<bool, DynamicsError> {
    let mut tester = ProtectionTester::new(Arc::clone(&initial.topology), rule)?;
    Ok(tester.origin_survives(&initial.infected))
}

/// Reusable scratch space for testing origin protection many times over the
/// same ball, without reallocating per test.
pub struct ProtectionTester {
    topology: Arc<Topology>,
    rule: Rule,
    t: u32,
    cur: FixedBitSet,
    next: FixedBitSet,
}

impl ProtectionTester {
    pub fn new(topology: Arc<Topology>, rule: Rule) -> Result<Self, DynamicsError> {
        let t = match topology.domain {
            Domain::Ball { t, .. } => t,
            Domain::Torus(_) => return Err(DynamicsError::WrongDomain { expected: "ball" }),
        };
        let len = topology.len();
        Ok(ProtectionTester {
            topology,
            rule,
            t,
            cur: FixedBitSet::with_capacity(len),
            next: FixedBitSet::with_capacity(len),
        })
    }

    pub fn topology(&self) -> &Arc<Topology> {
        &self.topology
    }

    /// Origin protected when exactly the listed ball indices start uninfected.
    pub fn origin_protected(&mut self, uninfected: &[usize]) -> bool {
        self.cur.insert_range(..);
        for &i in uninfected {
            self.cur.set(i, false);
        }
        self.run()
    }

    /// Origin protected from an explicit infected mask.
    pub fn origin_survives(&mut self, infected: &FixedBitSet) -> bool {
        self.cur.clone_from(infected);
        self.run()
    }

    fn run(&mut self) -> bool {
        for _ in 0..self.t {
            if self.cur.contains(0) {
                return false;
            }
            if self.topology.step_into(self.rule, &self.cur, &mut self.next) == 0 {
                break;
            }
            std::mem::swap(&mut self.cur, &mut self.next);
        }
        !self.cur.contains(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn torus(d: usize, n: usize) -> Arc<Topology> {
        Topology::torus(TorusSpec::new(d, n).unwrap()).unwrap()
    }

    fn sites(v: &[&[i64]]) -> Vec<Site> {
        v.iter().map(|c| Site::new(c.to_vec())).collect()
    }

    #[test]
    fn full_state_is_a_fixpoint() {
        let s = InfectionState::all_infected(torus(2, 5));
        let next = s.step(Rule::d_neighbour(2));
        assert_eq!(next.infected(), s.infected());
        assert_eq!(next.time(), 1);
        assert_eq!(percolation_time(&s, Rule::Modified), StopReport::Percolated { time: 0 });
    }

    #[test]
    fn single_hole_fills_in_one_step() {
        let topo = torus(2, 6);
        let s = InfectionState::with_uninfected_indices(Arc::clone(&topo), [7]);
        assert!(s.step(Rule::d_neighbour(2)).is_fully_infected());
        assert_eq!(uninfected_count_at(&s, Rule::d_neighbour(2), 0), 1);
        assert_eq!(uninfected_count_at(&s, Rule::d_neighbour(2), 1), 0);
    }

    #[test]
    fn modified_needs_every_axis() {
        let topo = Topology::ball(2, 1).unwrap();
        let s = InfectionState::with_uninfected_sites(
            Arc::clone(&topo),
            &sites(&[&[0, 0], &[1, 0], &[-1, 0]]),
        )
        .unwrap();
        let next = s.step(Rule::Modified);
        assert!(!next.is_infected(0));
    }

    #[test]
    fn empty_initial_set_is_stuck() {
        let topo = torus(2, 5);
        let s = InfectionState::none_infected(topo);
        assert_eq!(
            percolation_time(&s, Rule::d_neighbour(2)),
            StopReport::Stuck {
                t_stable: 0,
                uninfected: 25
            }
        );
        assert_eq!(uninfected_count_at(&s, Rule::d_neighbour(2), 5), 25);
    }

    /// The column C_2 in d = 2 is {(0,r) : |r| ≤ 2} ∪ {(1,r) : |r| ≤ 1}.
    fn column_2d_t2() -> Vec<Site> {
        sites(&[
            &[0, -2],
            &[0, -1],
            &[0, 0],
            &[0, 1],
            &[0, 2],
            &[1, -1],
            &[1, 0],
            &[1, 1],
        ])
    }

    #[test]
    fn column_on_torus_hand_stepped() {
        // Hand simulation, rule r = 2:
        // t=0 → t=1: (1,±1) each see 2 infected ((2,±1),(1,±2)) and fall;
        //            (0,±2) see 3 infected and fall. Left: (0,-1),(0,0),(0,1),(1,0).
        // t=1 → t=2: (0,±1) now see (−1,±1),(1,±1),(0,±2) infected; (1,0) sees
        //            (2,0),(1,±1); all three fall. Left: the origin.
        // t=2 → t=3: origin falls.
        let topo = torus(2, 11);
        let s = InfectionState::with_uninfected_sites(Arc::clone(&topo), &column_2d_t2()).unwrap();
        let rule = Rule::d_neighbour(2);
        assert_eq!(uninfected_count_at(&s, rule, 1), 4);
        assert_eq!(uninfected_count_at(&s, rule, 2), 1);
        assert_eq!(percolation_time(&s, rule), StopReport::Percolated { time: 3 });
    }

    #[test]
    fn protection_examples() {
        let rule = Rule::d_neighbour(2);
        let full = Topology::ball(2, 2).unwrap();
        let everything = InfectionState::none_infected(Arc::clone(&full));
        assert_eq!(protected_set(&everything, rule).unwrap().len(), 13);

        let col = InfectionState::with_uninfected_sites(Arc::clone(&full), &column_2d_t2()).unwrap();
        let p = protected_set(&col, rule).unwrap();
        assert!(p.contains(&Site::origin(2)));
        assert!(is_origin_protected(&col, rule).unwrap());

        let small = Topology::ball(2, 1).unwrap();
        let s = InfectionState::with_uninfected_sites(
            small,
            &sites(&[&[0, 0], &[1, 0], &[0, 1], &[-1, 0]]),
        )
        .unwrap();
        assert!(is_origin_protected(&s, rule).unwrap());
    }

    #[test]
    fn protected_set_rejects_torus() {
        let s = InfectionState::all_infected(torus(2, 4));
        assert!(protected_set(&s, Rule::Modified).is_err());
    }

    #[test]
    fn degenerate_torus_counts_multiplicity() {
        // n = 2: site (0,0) has (1,0) and (0,1) each adjacent twice.
        let topo = torus(2, 2);
        let s = InfectionState::with_uninfected_sites(
            Arc::clone(&topo),
            &sites(&[&[0, 0], &[0, 1], &[1, 1]]),
        )
        .unwrap();
        // Only (1,0) infected: it contributes 2 to the count of (0,0).
        let next = s.step(Rule::Standard { r: 2 });
        assert!(next.is_infected(topo.index_of(&Site::new([0, 0])).unwrap()));
        let next3 = s.step(Rule::Standard { r: 3 });
        assert!(!next3.is_infected(topo.index_of(&Site::new([0, 0])).unwrap()));
    }

    #[test]
    fn rule_validation() {
        assert!(Rule::Standard { r: 0 }.validate(2).is_err());
        assert!(Rule::Standard { r: 5 }.validate(2).is_err());
        assert!(Rule::Standard { r: 4 }.validate(2).is_ok());
        assert!(Rule::Modified.validate(3).is_ok());
    }

    #[test]
    fn tester_agrees_with_protected_set() {
        let topo = Topology::ball(2, 2).unwrap();
        let mut tester = ProtectionTester::new(Arc::clone(&topo), Rule::d_neighbour(2)).unwrap();
        for mask in 0u32..(1 << 13) {
            let unin: Vec<usize> = (0..13).filter(|i| mask >> i & 1 == 1).collect();
            let s = InfectionState::with_uninfected_indices(Arc::clone(&topo), unin.iter().copied());
            let via_set = protected_mask(&s, Rule::d_neighbour(2)).unwrap().contains(0);
            assert_eq!(tester.origin_protected(&unin), via_set);
        }
    }
}
