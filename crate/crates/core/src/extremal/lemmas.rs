//! Checkers for the structural lemmas about protected sets.
//!
//! These evaluate the statements on concrete configurations; they prove
//! nothing in general but make any counterexample visible.

use std::collections::VecDeque;

use fixedbitset::FixedBitSet;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{protected_mask, Domain, InfectionState, Rule};
use crate::formulas::{binom, ell};
use crate::lattice::{BallIndex, Site};

/// A sign per axis: +1 positively constrained, −1 negatively constrained,
/// 0 free. y is C-compatible with x when (y_i − x_i)·C_i ≥ 0 on every axis.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConfigurationSpec {
    pub signs: Vec<i8>,
}

impl ConfigurationSpec {
    pub fn new(signs: Vec<i8>) -> Self {
        assert!(signs.iter().all(|s| (-1..=1).contains(s)), "signs must be in {{-1, 0, 1}}");
        ConfigurationSpec { signs }
    }

    pub fn free(d: usize) -> Self {
        ConfigurationSpec { signs: vec![0; d] }
    }

    /// sign(x_i) on each axis: look outward from x.
    pub fn natural_for(x: &Site) -> Self {
        ConfigurationSpec {
            signs: x.coords().iter().map(|c| c.signum() as i8).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.signs.len()
    }

    /// a = |F(C)|.
    pub fn free_count(&self) -> usize {
        self.signs.iter().filter(|&&s| s == 0).count()
    }

    /// True when every C-compatible step from x moves away from the origin:
    /// axes where x is nonzero are constrained with the sign of x_i. The key
    /// lemma's counting silently assumes this; without it an inward neighbour
    /// can be counted and the bound fails.
    pub fn looks_outward(&self, x: &Site) -> bool {
        self.signs
            .iter()
            .zip(x.coords())
            .all(|(&c, &xi)| xi == 0 || c as i64 == xi.signum())
    }

    /// Keeps the choice on axes where x is zero and forces sign(x_i) elsewhere.
    pub fn outward_for(&self, x: &Site) -> Self {
        ConfigurationSpec {
            signs: self
                .signs
                .iter()
                .zip(x.coords())
                .map(|(&c, &xi)| if xi == 0 { c } else { xi.signum() as i8 })
                .collect(),
        }
    }

    pub fn compatible(&self, x: &Site, y: &Site) -> bool {
        self.signs
            .iter()
            .zip(x.coords().iter().zip(y.coords()))
            .all(|(&c, (&xi, &yi))| (yi - xi) * c as i64 >= 0)
    }
}

/// Why a lemma check could not be applied.
#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum LemmaPrecondition {
    #[error("the initial state is not on a ball domain")]
    WrongDomain,
    #[error("site {0} is outside the ball")]
    XNotInBall(Site),
    #[error("site {0} is not protected")]
    XNotProtected(Site),
    #[error("k = {k} exceeds t − ‖x‖ = {max}")]
    KTooLarge { k: u32, max: u32 },
    #[error("configuration {0:?} lets compatible sites move inward from x")]
    InwardConfiguration(Vec<i8>),
    #[error("configuration has {got} axes, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyLemmaCheck {
    /// |P_k^C(x)|
    pub count: u64,
    /// Σ_{i ≤ k} C(a, i)
    pub bound: u64,
    pub holds: bool,
}

/// A ball configuration with its protected set computed once, for running
/// many lemma checks against it.
pub struct KeyLemmaContext {
    ball: BallIndex,
    protected: FixedBitSet,
}

impl KeyLemmaContext {
    pub fn new(initial: &InfectionState, rule: Rule) -> Result<Self, LemmaPrecondition> {
        if !matches!(initial.topology().domain(), Domain::Ball { .. }) {
            return Err(LemmaPrecondition::WrongDomain);
        }
        let protected = protected_mask(initial, rule).map_err(|_| LemmaPrecondition::WrongDomain)?;
        let ball = initial.topology().ball_index().expect("ball").clone();
        Ok(KeyLemmaContext { ball, protected })
    }

    pub fn ball(&self) -> &BallIndex {
        &self.ball
    }

    pub fn protected(&self) -> &FixedBitSet {
        &self.protected
    }

    pub fn is_protected(&self, x: &Site) -> bool {
        self.ball.index_of(x).is_some_and(|i| self.protected.contains(i))
    }

    /// Compares |P_k^C(x)| with Σ_{i ≤ k} C(a, i), a the number of free axes.
    /// C must look outward from x (see [`ConfigurationSpec::looks_outward`]).
    pub fn check(&self, x: &Site, c: &ConfigurationSpec, k: u32) -> Result<KeyLemmaCheck, LemmaPrecondition> {
        let r = self.check_unrestricted(x, c, k)?;
        if !c.looks_outward(x) {
            return Err(LemmaPrecondition::InwardConfiguration(c.signs.clone()));
        }
        Ok(r)
    }

    /// The same comparison without the outward requirement on C.
    pub fn check_unrestricted(
        &self,
        x: &Site,
        c: &ConfigurationSpec,
        k: u32,
    ) -> Result<KeyLemmaCheck, LemmaPrecondition> {
        let d = self.ball.dim();
        if c.dim() != d {
            return Err(LemmaPrecondition::DimensionMismatch {
                expected: d,
                got: c.dim(),
            });
        }
        let xi = self
            .ball
            .index_of(x)
            .ok_or_else(|| LemmaPrecondition::XNotInBall(x.clone()))?;
        if !self.protected.contains(xi) {
            return Err(LemmaPrecondition::XNotProtected(x.clone()));
        }
        let max = self.ball.radius() - self.ball.norm_of(xi);
        if k > max {
            return Err(LemmaPrecondition::KTooLarge { k, max });
        }
        let count = self
            .protected
            .ones()
            .map(|i| self.ball.site(i))
            .filter(|y| x.distance(y) == k as u64 && c.compatible(x, y))
            .count() as u64;
        let a = c.free_count() as u64;
        let bound: u128 = (0..=k as u64).map(|i| binom(a, i)).sum();
        let bound = bound as u64;
        Ok(KeyLemmaCheck {
            count,
            bound,
            holds: count >= bound,
        })
    }
}

/// One-off form of [`KeyLemmaContext::check`].
pub fn check_key_lemma(
    initial: &InfectionState,
    rule: Rule,
    x: &Site,
    c: &ConfigurationSpec,
    k: u32,
) -> Result<KeyLemmaCheck, LemmaPrecondition> {
    KeyLemmaContext::new(initial, rule)?.check(x, c, k)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerBound {
    pub k: u32,
    /// |P(S_k)|
    pub protected: u64,
    /// ℓ_{k,d}
    pub bound: u64,
    pub satisfied: bool,
    /// |P(S_k)| = ℓ_k
    pub minimal: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerReport {
    pub origin_protected: bool,
    pub layers: Vec<LayerBound>,
}

impl LayerReport {
    pub fn all_satisfied(&self) -> bool {
        self.layers.iter().all(|l| l.satisfied)
    }

    pub fn is_minimal(&self, k: u32) -> bool {
        self.layers.iter().any(|l| l.k == k && l.minimal)
    }
}

fn layer_report(ctx: &KeyLemmaContext) -> LayerReport {
    let ball = &ctx.ball;
    let d = ball.dim() as u64;
    let layers = (1..=ball.radius())
        .map(|k| {
            let protected = ball.layer_range(k).filter(|&i| ctx.protected.contains(i)).count() as u64;
            let bound = ell(k as u64, d) as u64;
            LayerBound {
                k,
                protected,
                bound,
                satisfied: protected >= bound,
                minimal: protected == bound,
            }
        })
        .collect();
    LayerReport {
        origin_protected: ctx.protected.contains(0),
        layers,
    }
}

/// |P(S_k)| against ℓ_k for k = 1..=t. The bounds are only promised when the
/// origin is protected, which the report records.
pub fn check_layer_bounds(initial: &InfectionState, rule: Rule) -> Result<LayerReport, LemmaPrecondition> {
    Ok(layer_report(&KeyLemmaContext::new(initial, rule)?))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentReport {
    pub components: usize,
    /// Hypotheses of the two-component bound that do not hold here.
    pub failures: Vec<String>,
    /// Whether the count is covered by the bound (no failures).
    pub guaranteed: bool,
}

/// Connected components of initially uninfected sites in B_{r2} ∖ B_{r1−1}
/// that meet S_mid. With r1 ≥ d, r2 = r1 + 2d + 2s for some s ≥ d/2,
/// mid = r1 + d + s, r2 ≤ t, the origin protected and every layer in
/// r1..=r2 minimal, there are at most two.
pub fn count_components_band(
    initial: &InfectionState,
    rule: Rule,
    r1: u32,
    r2: u32,
    mid: u32,
) -> Result<ComponentReport, LemmaPrecondition> {
    let ctx = KeyLemmaContext::new(initial, rule)?;
    let ball = &ctx.ball;
    let d = ball.dim() as u32;
    let t = ball.radius();

    let mut failures = Vec::new();
    if r1 < d {
        failures.push(format!("r1 = {r1} is below d = {d}"));
    }
    if r2 > t {
        failures.push(format!("r2 = {r2} exceeds t = {t}"));
    }
    let width = r2 as i64 - r1 as i64 - 2 * d as i64;
    if width < 0 || width % 2 != 0 {
        failures.push(format!("r2 − r1 − 2d = {width} is not a non-negative even number"));
    } else {
        let s = width / 2;
        if 2 * s < d as i64 {
            failures.push(format!("s = {s} is below d/2"));
        }
        if mid as i64 != r1 as i64 + d as i64 + s {
            failures.push(format!("mid = {mid} differs from r1 + d + s = {}", r1 as i64 + d as i64 + s));
        }
    }
    let report = layer_report(&ctx);
    if !report.origin_protected {
        failures.push("origin is not protected".to_string());
    }
    for k in r1..=r2.min(t) {
        if !report.is_minimal(k) {
            failures.push(format!("layer {k} is not minimal"));
        }
    }

    let topo = initial.topology();
    let lo = r1.saturating_sub(1);
    let in_band = |i: usize| {
        let k = ball.norm_of(i);
        (r1 == 0 || k > lo) && k <= r2 && !initial.is_infected(i)
    };
    let mut seen = FixedBitSet::with_capacity(ball.len());
    let mut components = 0;
    let mut queue = VecDeque::new();
    for start in ball.layer_range(mid.min(t)) {
        if mid > t || seen.contains(start) || !in_band(start) {
            continue;
        }
        components += 1;
        seen.insert(start);
        queue.push_back(start);
        while let Some(v) = queue.pop_front() {
            for w in topo.neighbor_indices(v) {
                if !seen.contains(w) && in_band(w) {
                    seen.insert(w);
                    queue.push_back(w);
                }
            }
        }
    }
    let guaranteed = failures.is_empty();
    Ok(ComponentReport {
        components,
        failures,
        guaranteed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::Topology;
    use crate::lattice::enumerate_ball;

    fn column(d: usize, t: u32) -> Vec<Site> {
        enumerate_ball(d, t)
            .unwrap()
            .sites()
            .iter()
            .filter(|x| x.0[..d - 1].iter().all(|&c| c == 0 || c == 1))
            .cloned()
            .collect()
    }

    fn state(d: usize, t: u32, unin: &[Site]) -> InfectionState {
        InfectionState::with_uninfected_sites(Topology::ball(d, t).unwrap(), unin).unwrap()
    }

    #[test]
    fn column_is_tight_for_free_configuration() {
        for (d, t) in [(2, 3), (3, 2), (3, 3)] {
            let s = state(d, t, &column(d, t));
            let rule = Rule::d_neighbour(d);
            let r = check_key_lemma(&s, rule, &Site::origin(d), &ConfigurationSpec::free(d), t).unwrap();
            assert_eq!(r.count as u128, ell(t as u64, d as u64));
            assert_eq!(r.count, r.bound);
        }
    }

    #[test]
    fn inward_configuration_is_outside_the_lemma() {
        // (0,1) falls at time 1 through (±1,1), which shields (0,2) until
        // time 2. The free configuration then counts the inward (0,1).
        let unin: Vec<Site> = [(0, 1), (0, 2), (1, 2), (-1, 2)].iter().map(|&(a, b)| Site::new([a, b])).collect();
        let ctx = KeyLemmaContext::new(&state(2, 3, &unin), Rule::d_neighbour(2)).unwrap();
        let x = Site::new([0, 2]);
        assert!(ctx.is_protected(&x));
        let free = ConfigurationSpec::free(2);
        // (0,1) is compatible under the free configuration but lies inward and
        // is not protected, so only (±1,2) count.
        let r = ctx.check_unrestricted(&x, &free, 1).unwrap();
        assert_eq!((r.count, r.bound, r.holds), (2, 3, false));
        assert_eq!(
            ctx.check(&x, &free, 1),
            Err(LemmaPrecondition::InwardConfiguration(vec![0, 0]))
        );
        let outward = free.outward_for(&x);
        assert_eq!(outward.signs, vec![0, 1]);
        assert!(ctx.check(&x, &outward, 1).unwrap().holds);
    }

    #[test]
    fn outward_projection() {
        let x = Site::new([2, 0, -1]);
        let c = ConfigurationSpec::new(vec![-1, -1, 0]);
        assert!(!c.looks_outward(&x));
        let o = c.outward_for(&x);
        assert_eq!(o.signs, vec![1, -1, -1]);
        assert!(o.looks_outward(&x));
        assert!(ConfigurationSpec::natural_for(&x).looks_outward(&x));
    }

    #[test]
    fn full_ball_has_slack() {
        let s = InfectionState::none_infected(Topology::ball(2, 3).unwrap());
        let ctx = KeyLemmaContext::new(&s, Rule::d_neighbour(2)).unwrap();
        let x = Site::new([1, 0]);
        for c in [ConfigurationSpec::free(2), ConfigurationSpec::natural_for(&x), ConfigurationSpec::new(vec![-1, 1])] {
            for k in 0..=2 {
                let r = ctx.check_unrestricted(&x, &c, k).unwrap();
                assert!(r.holds);
            }
        }
        let r = ctx.check_unrestricted(&x, &ConfigurationSpec::free(2), 2).unwrap();
        assert!(r.count > r.bound);
    }

    #[test]
    fn preconditions_are_reported() {
        let s = state(2, 2, &column(2, 2));
        let ctx = KeyLemmaContext::new(&s, Rule::d_neighbour(2)).unwrap();
        let free = ConfigurationSpec::free(2);
        assert_eq!(
            ctx.check(&Site::new([3, 0]), &free, 0),
            Err(LemmaPrecondition::XNotInBall(Site::new([3, 0])))
        );
        assert_eq!(
            ctx.check(&Site::new([-1, 0]), &free, 0),
            Err(LemmaPrecondition::XNotProtected(Site::new([-1, 0])))
        );
        assert_eq!(
            ctx.check(&Site::new([0, 1]), &free, 2),
            Err(LemmaPrecondition::KTooLarge { k: 2, max: 1 })
        );
        let torus = InfectionState::all_infected(
            Topology::torus(crate::lattice::TorusSpec::new(2, 4).unwrap()).unwrap(),
        );
        assert!(matches!(
            KeyLemmaContext::new(&torus, Rule::Modified),
            Err(LemmaPrecondition::WrongDomain)
        ));
    }

    #[test]
    fn compatibility() {
        let c = ConfigurationSpec::new(vec![1, -1, 0]);
        let x = Site::new([1, 1, 1]);
        assert!(c.compatible(&x, &Site::new([2, 0, -5])));
        assert!(!c.compatible(&x, &Site::new([0, 0, 0])));
        assert!(!c.compatible(&x, &Site::new([1, 2, 0])));
        assert_eq!(c.free_count(), 1);
        assert_eq!(ConfigurationSpec::natural_for(&Site::new([0, -3, 2])).signs, vec![0, -1, 1]);
    }

    #[test]
    fn layer_bounds() {
        let s = state(3, 3, &column(3, 3));
        let rep = check_layer_bounds(&s, Rule::d_neighbour(3)).unwrap();
        assert!(rep.origin_protected);
        assert!(rep.layers.iter().all(|l| l.minimal && l.satisfied));

        let full = InfectionState::none_infected(Topology::ball(2, 3).unwrap());
        let rep = check_layer_bounds(&full, Rule::d_neighbour(2)).unwrap();
        assert!(rep.layers.iter().all(|l| !l.minimal && l.satisfied));
    }

    #[test]
    fn column_band_has_two_arms() {
        // d = 2, t = 8, r1 = 2, s = 1: r2 = 8, mid = 5.
        let s = state(2, 8, &column(2, 8));
        let rep = count_components_band(&s, Rule::d_neighbour(2), 2, 8, 5).unwrap();
        assert_eq!(rep.components, 2);
        assert!(rep.guaranteed, "{:?}", rep.failures);
    }

    #[test]
    fn band_without_hypotheses_is_flagged() {
        let s = state(2, 4, &column(2, 4));
        let rep = count_components_band(&s, Rule::d_neighbour(2), 1, 4, 2).unwrap();
        assert!(!rep.guaranteed);
        assert!(!rep.failures.is_empty());

        let everything = InfectionState::none_infected(Topology::ball(2, 8).unwrap());
        let rep = count_components_band(&everything, Rule::d_neighbour(2), 2, 8, 5).unwrap();
        assert_eq!(rep.components, 1);
        assert!(!rep.guaranteed);
    }
}
