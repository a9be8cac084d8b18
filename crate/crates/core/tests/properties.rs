use std::sync::Arc;

use bootperc::dynamics::{percolation_time, uninfected_count_at, InfectionState, ProtectionTester, Rule, Topology};
use bootperc::extremal::{exact_joint, exact_rho1, Budget};
use bootperc::formulas::{ell, m};
use bootperc::lattice::{enumerate_ball, Site, TorusSpec};
use bootperc::montecarlo::{run_trials_f, run_trials_t, ExperimentConfig};
use fixedbitset::FixedBitSet;
use proptest::prelude::*;

fn torus(d: usize, n: usize) -> Arc<Topology> {
    Topology::torus(TorusSpec::new(d, n).unwrap()).unwrap()
}

fn state_from(topo: &Arc<Topology>, bits: &[bool]) -> InfectionState {
    let mut infected = FixedBitSet::with_capacity(topo.len());
    for (i, &b) in bits.iter().enumerate() {
        infected.set(i, b);
    }
    InfectionState::from_bits(Arc::clone(topo), infected)
}

fn rule_strategy(d: usize) -> impl Strategy<Value = Rule> {
    prop_oneof![(1..=2 * d).prop_map(|r| Rule::Standard { r }), Just(Rule::Modified)]
}

/// Straightforward bootstrap step on Z^d restricted to B_t, everything
/// outside the ball infected. Written independently of the library.
fn naive_origin_survives(d: usize, t: u32, rule: Rule, uninfected: &[Site]) -> bool {
    let ball = enumerate_ball(d, t).unwrap();
    let sites = ball.sites().to_vec();
    let mut infected: Vec<bool> = sites.iter().map(|s| !uninfected.contains(s)).collect();
    let lookup = |s: &Site, inf: &[bool]| match sites.iter().position(|x| x == s) {
        Some(i) => inf[i],
        None => true,
    };
    for _ in 0..t {
        let next: Vec<bool> = sites
            .iter()
            .enumerate()
            .map(|(i, s)| {
                if infected[i] {
                    return true;
                }
                let per_axis: Vec<(bool, bool)> = (0..d)
                    .map(|a| (lookup(&s.shifted(a, 1), &infected), lookup(&s.shifted(a, -1), &infected)))
                    .collect();
                match rule {
                    Rule::Standard { r } => {
                        per_axis.iter().map(|&(p, q)| p as usize + q as usize).sum::<usize>() >= r
                    }
                    Rule::Modified => per_axis.iter().all(|&(p, q)| p || q),
                }
            })
            .collect();
        infected = next;
    }
    !infected[ball.index_of(&Site::origin(d)).unwrap()]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn infection_only_grows(bits in prop::collection::vec(prop::bool::weighted(0.7), 64), rule in rule_strategy(2)) {
        let topo = torus(2, 8);
        let mut s = state_from(&topo, &bits);
        for _ in 0..6 {
            let next = s.step(rule);
            prop_assert!(s.infected_subset_of(&next));
            s = next;
        }
    }

    #[test]
    fn more_initial_infection_never_slows_things(
        bits in prop::collection::vec(prop::bool::weighted(0.6), 125),
        extra in prop::collection::vec(prop::bool::weighted(0.2), 125),
        rule in rule_strategy(3),
    ) {
        let topo = torus(3, 5);
        let mut a = state_from(&topo, &bits);
        let more: Vec<bool> = bits.iter().zip(&extra).map(|(&x, &y)| x || y).collect();
        let mut b = state_from(&topo, &more);
        for _ in 0..5 {
            prop_assert!(a.infected_subset_of(&b));
            a = a.step(rule);
            b = b.step(rule);
        }
        let (ta, tb) = (percolation_time(&a, rule).time(), percolation_time(&b, rule).time());
        if let Some(ta) = ta {
            prop_assert!(tb.is_some_and(|tb| tb <= ta));
        }
    }

    #[test]
    fn modified_rule_is_dominated_by_d_neighbour(bits in prop::collection::vec(prop::bool::weighted(0.75), 100)) {
        let topo = torus(2, 10);
        let mut modified = state_from(&topo, &bits);
        let mut standard = modified.clone();
        for _ in 0..8 {
            modified = modified.step(Rule::Modified);
            standard = standard.step(Rule::d_neighbour(2));
            prop_assert!(modified.infected_subset_of(&standard));
        }
    }

    // The origin's state at time t on a large torus depends only on B_t.
    #[test]
    fn light_cone(bits in prop::collection::vec(prop::bool::weighted(0.6), 144), t in 1u32..=3, rule in rule_strategy(2)) {
        let n = 12;
        let topo = torus(2, n);
        let mut s = state_from(&topo, &bits);
        let spec = TorusSpec::new(2, n).unwrap();
        let ball = Topology::ball(2, t).unwrap();
        let bi = ball.ball_index().unwrap();
        let mut local = FixedBitSet::with_capacity(bi.len());
        for (i, site) in bi.sites().iter().enumerate() {
            local.set(i, bits[spec.index_of(site)]);
        }
        let mut tester = ProtectionTester::new(Arc::clone(&ball), rule).unwrap();
        let survives = tester.origin_survives(&local);
        for _ in 0..t {
            s = s.step(rule);
        }
        let origin = spec.index_of(&Site::origin(2));
        prop_assert_eq!(survives, !s.is_infected(origin));
    }

    #[test]
    fn protection_matches_naive_oracle(mask in 0u32..(1 << 13), rule in rule_strategy(2)) {
        let ball = enumerate_ball(2, 2).unwrap();
        let unin: Vec<Site> = (0..13).filter(|i| mask >> i & 1 == 1).map(|i| ball.site(i).clone()).collect();
        let topo = Topology::ball(2, 2).unwrap();
        let idx: Vec<usize> = unin.iter().map(|s| topo.index_of(s).unwrap()).collect();
        let mut tester = ProtectionTester::new(topo, rule).unwrap();
        prop_assert_eq!(tester.origin_protected(&idx), naive_origin_survives(2, 2, rule, &unin));
    }

    #[test]
    fn protection_is_monotone_in_uninfected_set(a in 0u32..(1 << 13), b in 0u32..(1 << 13), rule in rule_strategy(2)) {
        let topo = Topology::ball(2, 2).unwrap();
        let mut tester = ProtectionTester::new(topo, rule).unwrap();
        let small: Vec<usize> = (0..13).filter(|i| a >> i & 1 == 1).collect();
        let big: Vec<usize> = (0..13).filter(|i| (a | b) >> i & 1 == 1).collect();
        if tester.origin_protected(&small) {
            prop_assert!(tester.origin_protected(&big));
        }
    }

    #[test]
    fn closed_forms_increase(t in 0u64..12, d in 1u64..10) {
        prop_assert!(ell(t + 1, d) >= ell(t, d));
        prop_assert!(ell(t, d + 1) >= ell(t, d));
        prop_assert!(m(t + 1, d) > m(t, d));
        prop_assert!(m(t, d + 1) >= m(t, d));
        prop_assert!(ell(t, d) <= 1u128 << d);
    }

    #[test]
    fn far_pairs_are_independent(q in 0.01f64..0.99, which in 0usize..4) {
        let rule = Rule::d_neighbour(2);
        let offsets = [[3, 0], [2, 1], [-1, -2], [0, -3]];
        let budget = Budget::default();
        let joint = exact_joint(2, 1, &Site::new(offsets[which]), rule, &budget).unwrap();
        let rho1 = exact_rho1(2, 1, rule, &budget).unwrap().evaluate(q);
        prop_assert!((joint.evaluate(q) - rho1 * rho1).abs() < 1e-12);
    }
}

#[test]
fn protecting_counts_match_naive_enumeration() {
    for rule in [Rule::d_neighbour(2), Rule::Modified, Rule::Standard { r: 1 }] {
        let ball = enumerate_ball(2, 2).unwrap();
        let n = ball.len();
        let mut counts = vec![0u64; n + 1];
        for mask in 0u32..(1 << n) {
            let unin: Vec<Site> = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ball.site(i).clone()).collect();
            if naive_origin_survives(2, 2, rule, &unin) {
                counts[unin.len()] += 1;
            }
        }
        let poly = exact_rho1(2, 2, rule, &Budget::default()).unwrap();
        let got: Vec<u64> = poly.counts.iter().map(|c| u64::try_from(c).unwrap()).collect();
        assert_eq!(got, counts, "{rule:?}");
    }
}

#[test]
fn protecting_counts_are_rotation_invariant() {
    // A quarter turn about the origin maps protecting sets to protecting sets.
    let ball = enumerate_ball(2, 2).unwrap();
    let topo = Topology::ball(2, 2).unwrap();
    let rule = Rule::d_neighbour(2);
    let mut tester = ProtectionTester::new(Arc::clone(&topo), rule).unwrap();
    let rot = |s: &Site| Site::new([-s.0[1], s.0[0]]);
    for mask in 0u32..(1 << 13) {
        let idx: Vec<usize> = (0..13).filter(|i| mask >> i & 1 == 1).collect();
        let rotated: Vec<usize> = idx.iter().map(|&i| ball.index_of(&rot(ball.site(i))).unwrap()).collect();
        assert_eq!(tester.origin_protected(&idx), tester.origin_protected(&rotated));
    }
}

fn config(threads: usize) -> ExperimentConfig {
    ExperimentConfig {
        d: 2,
        n: 24,
        rule: Rule::d_neighbour(2),
        q: 0.25,
        t_horizon: 2,
        trials: 60,
        master_seed: 1234,
        threads,
    }
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let one = run_trials_t(&config(1)).unwrap();
    for threads in [2, 5] {
        assert_eq!(run_trials_t(&config(threads)).unwrap(), one);
        assert_eq!(run_trials_f(&config(threads), 1).unwrap(), run_trials_f(&config(1), 1).unwrap());
    }
}

#[test]
fn initial_uninfected_count_is_binomial() {
    let mut c = config(2);
    c.trials = 400;
    c.n = 16;
    c.q = 0.3;
    let dist = run_trials_f(&c, 0).unwrap();
    let sites = 256.0;
    let (mean, var) = (sites * c.q, sites * c.q * (1.0 - c.q));
    // Five standard errors on the mean, and a loose band on the variance.
    assert!((dist.mean() - mean).abs() < 5.0 * (var / c.trials as f64).sqrt(), "mean {}", dist.mean());
    assert!((dist.variance() / var - 1.0).abs() < 0.3, "variance {}", dist.variance());
    assert_eq!(dist.stuck_count, 0);
}

#[test]
fn f_at_time_zero_counts_the_initial_set() {
    let c = config(1);
    let topo = c.topology().unwrap();
    for i in 0..10 {
        let s = bootperc::montecarlo::sample_initial(&c, &topo, i);
        assert_eq!(uninfected_count_at(&s, c.rule, 0), s.uninfected_count() as u64);
    }
}
