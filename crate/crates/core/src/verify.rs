//! The acceptance criteria as runnable checks, grouped into suites.
//!
//! Each check returns a [`CriterionReport`] with what was measured and what
//! was required; nothing here panics on a failed criterion.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::dynamics::{InfectionState, Rule, Topology};
use crate::extremal::{
    count_min_certificates, exact_joint, exact_joint_brute, exact_rho1, min_protecting_size, rho2_table,
    Budget, Classification, ConfigurationSpec, KeyLemmaContext,
};
use crate::formulas::{ell, extremal_count, extremal_size, m, m_general, q_for_lambda, stein_chen_rhs};
use crate::lattice::dependency_offsets;
use crate::montecarlo::{
    coupled_monotonicity, run_trials_f, run_trials_t, trial_seed, tv_report, EmpiricalDistribution,
    ExperimentConfig,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Extremal,
    Formulas,
    Dynamics,
    Poisson,
    Concentration,
}

impl Suite {
    pub const ALL: [Suite; 5] = [
        Suite::Extremal,
        Suite::Formulas,
        Suite::Dynamics,
        Suite::Poisson,
        Suite::Concentration,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Suite::Extremal => "extremal",
            Suite::Formulas => "formulas",
            Suite::Dynamics => "dynamics",
            Suite::Poisson => "poisson",
            Suite::Concentration => "concentration",
        }
    }

    pub fn parse(name: &str) -> Option<Suite> {
        Suite::ALL.into_iter().find(|s| s.name() == name)
    }

    pub fn criteria(&self) -> &'static [u8] {
        match self {
            Suite::Extremal => &[1, 2, 3, 5],
            Suite::Formulas => &[6],
            Suite::Dynamics => &[4, 9],
            Suite::Poisson => &[7],
            Suite::Concentration => &[8, 10],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriterionReport {
    pub id: u8,
    pub name: String,
    pub passed: bool,
    pub measured: Value,
    pub expected: String,
}

impl CriterionReport {
    /// One human-readable line.
    pub fn line(&self) -> String {
        format!(
            "[{}] criterion {:>2} {}: {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.measured
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub threads: usize,
    pub master_seed: u64,
    pub budget: Budget,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            threads: rayon::current_num_threads(),
            master_seed: 20_240_601,
            budget: Budget::default(),
        }
    }
}

fn report(id: u8, name: &str, passed: bool, measured: Value, expected: &str) -> CriterionReport {
    CriterionReport {
        id,
        name: name.to_string(),
        passed,
        measured,
        expected: expected.to_string(),
    }
}

fn failed(id: u8, name: &str, err: impl std::fmt::Display, expected: &str) -> CriterionReport {
    report(id, name, false, json!({ "error": err.to_string() }), expected)
}

pub fn run_criterion(id: u8, opts: &VerifyOptions) -> CriterionReport {
    match id {
        1 => criterion_1(opts),
        2 => criterion_2(opts),
        3 => criterion_3(opts),
        4 => criterion_4(opts),
        5 => criterion_5(opts),
        6 => criterion_6(),
        7 => criterion_7(opts),
        8 => criterion_8(opts),
        9 => criterion_9(opts),
        10 => criterion_10(opts),
        _ => failed(id, "unknown", "no such criterion", "1..=10"),
    }
}

pub fn run_suite(suite: Suite, opts: &VerifyOptions) -> Vec<CriterionReport> {
    suite.criteria().iter().map(|&id| run_criterion(id, opts)).collect()
}

const SMALL: [(usize, u32); 5] = [(2, 1), (2, 2), (2, 3), (3, 1), (3, 2)];

pub fn criterion_1(opts: &VerifyOptions) -> CriterionReport {
    let name = "minimal protecting sizes";
    let expected = "m(t,d) for the d-neighbour rule and 2t+1 for the modified rule";
    let mut rows = Vec::new();
    let mut ok = true;
    for (d, t) in SMALL {
        for rule in [Rule::d_neighbour(d), Rule::Modified] {
            let want = extremal_size(t, d, rule).expect("supported rule") as usize;
            match min_protecting_size(d, t, rule, &opts.budget) {
                Ok(got) => {
                    ok &= got == want;
                    rows.push(json!({"d": d, "t": t, "rule": rule.label(), "size": got, "expected": want}));
                }
                Err(e) => return failed(1, name, e, expected),
            }
        }
    }
    report(1, name, ok, Value::Array(rows), expected)
}

pub fn criterion_2(opts: &VerifyOptions) -> CriterionReport {
    let name = "minimal certificate counts";
    let expected = "16 at (2,2),(2,3); 108 at (3,2); d for the modified rule; no Other classification";
    let mut rows = Vec::new();
    let mut ok = true;
    for (d, t) in [(2usize, 2u32), (2, 3), (3, 2)] {
        for rule in [Rule::d_neighbour(d), Rule::Modified] {
            let want = extremal_count(d, rule).expect("supported rule") as usize;
            match count_min_certificates(d, t, rule, &opts.budget) {
                Ok((count, certs)) => {
                    let other = certs
                        .iter()
                        .filter(|c| c.classification == Classification::Other)
                        .count();
                    let good = count == want && (rule == Rule::Modified || other == 0);
                    ok &= good;
                    rows.push(json!({
                        "d": d, "t": t, "rule": rule.label(),
                        "count": count, "expected": want, "other": other,
                    }));
                }
                Err(e) => return failed(2, name, e, expected),
            }
        }
    }
    report(2, name, ok, Value::Array(rows), expected)
}

pub fn criterion_3(opts: &VerifyOptions) -> CriterionReport {
    let name = "rho1 leading coefficient";
    let expected = "N_u = 0 for u < 8 and N_8 = 16 at (2,2); 0.21875 modified and 0.15625 standard at (2,1), q = 1/2";
    let run = || -> Result<(bool, Value), crate::extremal::ExtremalError> {
        let r22 = exact_rho1(2, 2, Rule::d_neighbour(2), &opts.budget)?;
        let low_zero = (0..8).all(|u| r22.count(u) == 0);
        let n8 = r22.count(8);
        let modified = exact_rho1(2, 1, Rule::Modified, &opts.budget)?.evaluate(0.5);
        let standard = exact_rho1(2, 1, Rule::d_neighbour(2), &opts.budget)?.evaluate(0.5);
        let ok = low_zero && n8 == 16 && modified == 0.21875 && standard == 0.15625;
        Ok((
            ok,
            json!({"below_8_zero": low_zero, "n8": n8, "modified_half": modified, "standard_half": standard}),
        ))
    };
    match run() {
        Ok((ok, v)) => report(3, name, ok, v, expected),
        Err(e) => failed(3, name, e, expected),
    }
}

/// Configurations sampled for the key-lemma suite.
pub const KEY_LEMMA_SAMPLES: usize = 10_000;

#[derive(Default)]
struct LemmaTally {
    configurations: u64,
    rejected: u64,
    checks: u64,
    natural_violations: u64,
    random_violations: u64,
    layer_violations: u64,
    first_violation: Option<String>,
    // Draws of C that point inward from x: outside the lemma, tallied only.
    inward_checks: u64,
    inward_failures: u64,
}

impl LemmaTally {
    fn merge(mut self, other: LemmaTally) -> LemmaTally {
        self.configurations += other.configurations;
        self.rejected += other.rejected;
        self.checks += other.checks;
        self.natural_violations += other.natural_violations;
        self.random_violations += other.random_violations;
        self.layer_violations += other.layer_violations;
        self.first_violation = self.first_violation.or(other.first_violation);
        self.inward_checks += other.inward_checks;
        self.inward_failures += other.inward_failures;
        self
    }
}

/// Draws an origin-protected configuration on B_t by rejection sampling.
/// Each attempt uses its own q in [0.4, 0.75].
fn sample_protected(
    topo: &Arc<Topology>,
    rule: Rule,
    rng: &mut ChaCha8Rng,
    rejected: &mut u64,
) -> (InfectionState, KeyLemmaContext) {
    loop {
        let q: f64 = rng.random_range(0.4..0.75);
        let unin: Vec<usize> = (0..topo.len()).filter(|_| rng.random::<f64>() < q).collect();
        let state = InfectionState::with_uninfected_indices(Arc::clone(topo), unin);
        let ctx = KeyLemmaContext::new(&state, rule).expect("ball domain");
        if ctx.protected().contains(0) {
            return (state, ctx);
        }
        *rejected += 1;
    }
}

fn random_configuration(d: usize, rng: &mut ChaCha8Rng) -> ConfigurationSpec {
    ConfigurationSpec::new((0..d).map(|_| rng.random_range(-1i8..=1)).collect())
}

fn lemma_sample(d: usize, t: u32, topo: &Arc<Topology>, seed: u64) -> LemmaTally {
    let rule = Rule::d_neighbour(d);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tally = LemmaTally {
        configurations: 1,
        ..LemmaTally::default()
    };
    let (_, ctx) = sample_protected(topo, rule, &mut rng, &mut tally.rejected);
    let ball = ctx.ball();
    for k in 1..=t {
        let protected = ball.layer_range(k).filter(|&i| ctx.protected().contains(i)).count() as u128;
        if protected < ell(k as u64, d as u64) {
            tally.layer_violations += 1;
        }
    }
    let randoms: Vec<ConfigurationSpec> = (0..10).map(|_| random_configuration(d, &mut rng)).collect();
    for xi in ctx.protected().ones() {
        let x = ball.site(xi);
        let max_k = t - ball.norm_of(xi);
        for c in randoms.iter().filter(|c| !c.looks_outward(x)) {
            for k in 0..=max_k {
                let r = ctx.check_unrestricted(x, c, k).expect("preconditions hold by construction");
                tally.inward_checks += 1;
                tally.inward_failures += u64::from(!r.holds);
            }
        }
        let natural = ConfigurationSpec::natural_for(x);
        let outward: Vec<ConfigurationSpec> = randoms.iter().map(|c| c.outward_for(x)).collect();
        for (is_natural, c) in std::iter::once((true, &natural)).chain(outward.iter().map(|c| (false, c))) {
            for k in 0..=max_k {
                let r = ctx.check(x, c, k).expect("preconditions hold by construction");
                tally.checks += 1;
                if !r.holds {
                    if is_natural {
                        tally.natural_violations += 1;
                    } else {
                        tally.random_violations += 1;
                    }
                    tally.first_violation.get_or_insert_with(|| {
                        format!(
                            "d={d} t={t} x={x} C={:?} k={k}: |P|={} < {}; protected={:?}",
                            c.signs,
                            r.count,
                            r.bound,
                            ctx.protected().ones().map(|i| ball.site(i).to_string()).collect::<Vec<_>>()
                        )
                    });
                }
            }
        }
    }
    tally
}

pub fn criterion_4(opts: &VerifyOptions) -> CriterionReport {
    let name = "key lemma on random protected configurations";
    let expected = "zero violations over 10^4 configurations (natural C plus 10 random C each, each C restricted to axes where x is zero), layer bounds included";
    let cases: Vec<(usize, u32)> = [2usize, 3].iter().flat_map(|&d| [2u32, 3, 4].map(|t| (d, t))).collect();
    let per_case = KEY_LEMMA_SAMPLES.div_ceil(cases.len());
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(opts.threads).build() {
        Ok(p) => p,
        Err(e) => return failed(4, name, e, expected),
    };
    let mut rows = Vec::new();
    let mut total = LemmaTally::default();
    for (case, &(d, t)) in cases.iter().enumerate() {
        let topo = Topology::ball(d, t).expect("small ball");
        let base = trial_seed(opts.master_seed, 4_000 + case as u64);
        let tally = pool.install(|| {
            (0..per_case as u64)
                .into_par_iter()
                .map(|i| lemma_sample(d, t, &topo, trial_seed(base, i)))
                .collect::<Vec<_>>()
                .into_iter()
                .fold(LemmaTally::default(), LemmaTally::merge)
        });
        rows.push(json!({
            "d": d, "t": t, "configurations": tally.configurations, "rejected": tally.rejected,
            "checks": tally.checks, "natural_violations": tally.natural_violations,
            "random_violations": tally.random_violations, "layer_violations": tally.layer_violations,
            "inward_checks": tally.inward_checks, "inward_failures": tally.inward_failures,
        }));
        total = total.merge(tally);
    }
    let ok = total.natural_violations + total.random_violations + total.layer_violations == 0;
    let mut measured = json!({
        "configurations": total.configurations,
        "checks": total.checks,
        "natural_violations": total.natural_violations,
        "random_violations": total.random_violations,
        "layer_violations": total.layer_violations,
        "inward_checks_not_counted": total.inward_checks,
        "inward_failures_not_counted": total.inward_failures,
        "cases": rows,
    });
    if let Some(v) = total.first_violation {
        measured["first_violation"] = json!(v);
    }
    report(4, name, ok, measured, expected)
}

pub fn criterion_5(opts: &VerifyOptions) -> CriterionReport {
    let name = "two protected sites need m_1 + 1 uninfected";
    let expected = "every offset with 0 < |offset| <= 2 at d=2, t=1: at least 5 uninfected sites in the union";
    let need = m(1, 2) as usize + 1;
    let mut rows = Vec::new();
    let mut ok = true;
    for offset in dependency_offsets(2, 1).expect("small").into_iter().filter(|o| o.norm() <= 2) {
        let rule = Rule::d_neighbour(2);
        let brute = match exact_joint_brute(2, 1, &offset, rule) {
            Ok(j) => j,
            Err(e) => return failed(5, name, e, expected),
        };
        let fast = match exact_joint(2, 1, &offset, rule, &opts.budget) {
            Ok(j) => j,
            Err(e) => return failed(5, name, e, expected),
        };
        let min = brute.min_size();
        let good = min.is_some_and(|u| u >= need) && brute == fast;
        ok &= good;
        rows.push(json!({"offset": offset.coords(), "min_uninfected": min, "agrees": brute == fast}));
    }
    report(5, name, ok, Value::Array(rows), expected)
}

pub fn criterion_6() -> CriterionReport {
    let name = "closed-form identities";
    let expected = "sum_{r<d} ell(r,d) = d 2^{d-1}; m(d+s,d) = (s+1)2^d + d 2^{d-1}; m_general(t,d,d) = m(t,d)";
    let mut failures = Vec::new();
    let mut checked = 0;
    for d in 2u64..=10 {
        checked += 1;
        let lhs: u128 = (0..d).map(|r| ell(r, d)).sum();
        if lhs != d as u128 * (1u128 << (d - 1)) {
            failures.push(format!("ell identity at d={d}"));
        }
    }
    for d in 2u64..=8 {
        for s in 0u64..=5 {
            checked += 1;
            let want = (s as u128 + 1) * (1u128 << d) + d as u128 * (1u128 << (d - 1));
            if m(d + s, d) != want {
                failures.push(format!("m identity at d={d} s={s}"));
            }
        }
    }
    for t in 0u32..=6 {
        for d in 2usize..=6 {
            checked += 1;
            if m_general(t, d, d).ok() != Some(m(t as u64, d as u64)) {
                failures.push(format!("m_general at t={t} d={d}"));
            }
        }
    }
    report(
        6,
        name,
        failures.is_empty(),
        json!({"checked": checked, "failures": failures}),
        expected,
    )
}

/// The λ = 2 regime at d = 2, t = 2, n = 512.
pub struct PoissonRegime {
    pub n: usize,
    pub q: f64,
    pub rho1: f64,
    pub lambda_exact: f64,
}

pub fn poisson_regime(budget: &Budget) -> Result<PoissonRegime, crate::extremal::ExtremalError> {
    let n = 512usize;
    let rule = Rule::d_neighbour(2);
    let q = q_for_lambda(n as u64, 2, 2, 2.0, rule).expect("valid regime");
    let rho1 = exact_rho1(2, 2, rule, budget)?.evaluate(q);
    Ok(PoissonRegime {
        n,
        q,
        rho1,
        lambda_exact: (n * n) as f64 * rho1,
    })
}

fn poisson_config(regime: &PoissonRegime, trials: u64, seed: u64, threads: usize) -> ExperimentConfig {
    ExperimentConfig {
        d: 2,
        n: regime.n,
        rule: Rule::d_neighbour(2),
        q: regime.q,
        t_horizon: 2,
        trials,
        master_seed: seed,
        threads,
    }
}

fn f2_histogram(opts: &VerifyOptions, regime: &PoissonRegime) -> Result<EmpiricalDistribution, String> {
    let config = poisson_config(regime, 2000, opts.master_seed.wrapping_add(7), opts.threads);
    run_trials_f(&config, 2).map_err(|e| e.to_string())
}

pub fn criterion_7(opts: &VerifyOptions) -> CriterionReport {
    let name = "Poisson approximation of F_2";
    let expected = "TV(empirical, Po(lambda_exact)) <= 0.05 and <= Stein-Chen bound + 0.03";
    let regime = match poisson_regime(&opts.budget) {
        Ok(r) => r,
        Err(e) => return failed(7, name, e, expected),
    };
    let rho2 = match rho2_table(2, 2, Rule::d_neighbour(2), regime.q, &opts.budget) {
        Ok(r) => r,
        Err(e) => return failed(7, name, e, expected),
    };
    let bound = stein_chen_rhs(regime.n as u64, 2, 2, regime.rho1, &rho2).expect("complete table");
    let dist = match f2_histogram(opts, &regime) {
        Ok(d) => d,
        Err(e) => return failed(7, name, e, expected),
    };
    let tv = tv_report(&dist, regime.lambda_exact);
    let ok = tv <= 0.05 && tv <= bound + 0.03;
    report(
        7,
        name,
        ok,
        json!({
            "q": regime.q, "lambda_exact": regime.lambda_exact, "tv": tv,
            "stein_chen_bound": bound, "mean_f2": dist.mean(), "trials": dist.trials,
        }),
        expected,
    )
}

fn t_histograms(
    opts: &VerifyOptions,
    regime: &PoissonRegime,
) -> Result<(EmpiricalDistribution, EmpiricalDistribution, f64, f64), String> {
    let standard = poisson_config(regime, 1000, opts.master_seed.wrapping_add(8), opts.threads);
    let t_std = run_trials_t(&standard).map_err(|e| e.to_string())?;

    let n = 512usize;
    let rule = Rule::Modified;
    let q_mod = q_for_lambda(n as u64, 2, 1, 2.0, rule).map_err(|e| e.to_string())?;
    let rho_mod = exact_rho1(2, 1, rule, &opts.budget).map_err(|e| e.to_string())?;
    let lambda_mod = (n * n) as f64 * rho_mod.evaluate(q_mod);
    let modified = ExperimentConfig {
        d: 2,
        n,
        rule,
        q: q_mod,
        t_horizon: 1,
        trials: 1000,
        master_seed: opts.master_seed.wrapping_add(88),
        threads: opts.threads,
    };
    let t_mod = run_trials_t(&modified).map_err(|e| e.to_string())?;
    Ok((t_std, t_mod, lambda_mod, q_mod))
}

pub fn criterion_8(opts: &VerifyOptions) -> CriterionReport {
    let name = "concentration of the percolation time";
    let expected = "freq(T in {t,t+1}) >= 0.95 and |P(T=t) - exp(-lambda_exact)| <= 0.05, both rules";
    let regime = match poisson_regime(&opts.budget) {
        Ok(r) => r,
        Err(e) => return failed(8, name, e, expected),
    };
    let (t_std, t_mod, lambda_mod, q_mod) = match t_histograms(opts, &regime) {
        Ok(v) => v,
        Err(e) => return failed(8, name, e, expected),
    };
    let std_window = t_std.frequency(|t| t == 2 || t == 3);
    let std_p = t_std.frequency(|t| t == 2);
    let std_target = (-regime.lambda_exact).exp();
    let mod_window = t_mod.frequency(|t| t == 1 || t == 2);
    let mod_p = t_mod.frequency(|t| t == 1);
    let mod_target = (-lambda_mod).exp();
    let ok = std_window >= 0.95
        && (std_p - std_target).abs() <= 0.05
        && mod_window >= 0.95
        && (mod_p - mod_target).abs() <= 0.05;
    report(
        8,
        name,
        ok,
        json!({
            "standard": {"q": regime.q, "lambda_exact": regime.lambda_exact, "freq_T_2_or_3": std_window,
                          "p_T_eq_2": std_p, "exp_minus_lambda": std_target},
            "modified": {"q": q_mod, "lambda_exact": lambda_mod, "freq_T_1_or_2": mod_window,
                          "p_T_eq_1": mod_p, "exp_minus_lambda": mod_target},
        }),
        expected,
    )
}

fn coupling_pairs(opts: &VerifyOptions) -> Result<Vec<(Option<u64>, Option<u64>)>, String> {
    let config = ExperimentConfig {
        d: 2,
        n: 128,
        rule: Rule::d_neighbour(2),
        q: 0.2,
        t_horizon: 2,
        trials: 500,
        master_seed: opts.master_seed.wrapping_add(9),
        threads: opts.threads,
    };
    coupled_monotonicity(&config, 0.1, 0.2).map_err(|e| e.to_string())
}

/// Stuck is +∞.
fn time_le(a: Option<u64>, b: Option<u64>) -> bool {
    match (a, b) {
        (_, None) => true,
        (None, Some(_)) => false,
        (Some(x), Some(y)) => x <= y,
    }
}

pub fn criterion_9(opts: &VerifyOptions) -> CriterionReport {
    let name = "monotone coupling";
    let expected = "T(q=0.1) <= T(q=0.2) in all 500 coupled pairs";
    match coupling_pairs(opts) {
        Ok(pairs) => {
            let bad = pairs.iter().filter(|(a, b)| !time_le(*a, *b)).count();
            let mut low = BTreeMap::new();
            let mut high = BTreeMap::new();
            for (a, b) in &pairs {
                *low.entry(format!("{a:?}")).or_insert(0u64) += 1;
                *high.entry(format!("{b:?}")).or_insert(0u64) += 1;
            }
            report(
                9,
                name,
                bad == 0,
                json!({"pairs": pairs.len(), "violations": bad, "t_low": low, "t_high": high}),
                expected,
            )
        }
        Err(e) => failed(9, name, e, expected),
    }
}

/// Serialised histograms of the criterion 7–9 experiments at a thread count.
pub fn experiment_fingerprint(opts: &VerifyOptions, threads: usize) -> Result<String, String> {
    let opts = VerifyOptions {
        threads,
        ..opts.clone()
    };
    let regime = poisson_regime(&opts.budget).map_err(|e| e.to_string())?;
    let f2 = f2_histogram(&opts, &regime)?;
    let (t_std, t_mod, _, _) = t_histograms(&opts, &regime)?;
    let pairs = coupling_pairs(&opts)?;
    let mut out = String::new();
    out.push_str(&f2.to_csv());
    out.push_str(&t_std.to_csv());
    out.push_str(&t_mod.to_csv());
    out.push_str(&serde_json::to_string(&pairs).expect("serialisable"));
    Ok(out)
}

pub fn criterion_10(opts: &VerifyOptions) -> CriterionReport {
    let name = "determinism across thread counts";
    let expected = "byte-identical histograms for criteria 7-9 with 1, 4 and 8 threads";
    let mut prints = Vec::new();
    for threads in [1usize, 4, 8] {
        match experiment_fingerprint(opts, threads) {
            Ok(p) => prints.push(p),
            Err(e) => return failed(10, name, e, expected),
        }
    }
    let same = prints.windows(2).all(|w| w[0] == w[1]);
    report(
        10,
        name,
        same,
        json!({"thread_counts": [1, 4, 8], "identical": same, "bytes": prints[0].len()}),
        expected,
    )
}

