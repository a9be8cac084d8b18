//! Seeded Monte Carlo runs on the torus.
//!
//! Trial `i` draws one uniform per site, in site index order, from a
//! ChaCha8 stream seeded with `trial_seed(master_seed, i)`; a site starts
//! uninfected iff its uniform is below q. Trials run on a private rayon pool
//! and their outcomes are collected in trial order before being merged, so
//! results never depend on the thread count.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use fixedbitset::FixedBitSet;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::dynamics::{percolation_time, uninfected_count_at, DynamicsError, InfectionState, Rule, Topology};
use crate::formulas::poisson_pmf;
use crate::lattice::{LatticeError, TorusSpec};

#[derive(Debug, Error)]
pub enum MonteCarloError {
    #[error("trials must be at least 1")]
    NoTrials,
    #[error("q = {0} is not a probability")]
    Probability(f64),
    #[error("q_low = {low} exceeds q_high = {high}")]
    CouplingOrder { low: f64, high: f64 },
    #[error("side n = {n} is below 4·t_horizon + 4 = {min}")]
    SideTooSmall { n: usize, min: u64 },
    #[error("threads must be at least 1")]
    NoThreads,
    #[error("could not build the worker pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub d: usize,
    pub n: usize,
    pub rule: Rule,
    /// Probability that a site starts uninfected.
    pub q: f64,
    pub t_horizon: u32,
    pub trials: u64,
    pub master_seed: u64,
    pub threads: usize,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), MonteCarloError> {
        if self.trials == 0 {
            return Err(MonteCarloError::NoTrials);
        }
        check_q(self.q)?;
        if self.threads == 0 {
            return Err(MonteCarloError::NoThreads);
        }
        let min = 4 * self.t_horizon as u64 + 4;
        if (self.n as u64) < min {
            return Err(MonteCarloError::SideTooSmall { n: self.n, min });
        }
        TorusSpec::new(self.d, self.n)?.volume()?;
        self.rule.validate(self.d)?;
        Ok(())
    }

    pub fn topology(&self) -> Result<Arc<Topology>, MonteCarloError> {
        self.validate()?;
        Ok(Topology::torus(TorusSpec::new(self.d, self.n)?)?)
    }

    fn pool(&self) -> Result<rayon::ThreadPool, MonteCarloError> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.threads)
            .build()
            .map_err(|e| MonteCarloError::Pool(e.to_string()))
    }
}

fn check_q(q: f64) -> Result<(), MonteCarloError> {
    if (0.0..=1.0).contains(&q) {
        Ok(())
    } else {
        Err(MonteCarloError::Probability(q))
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of trial `index`: splitmix64(splitmix64(master_seed) ⊕ index).
pub fn trial_seed(master_seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master_seed) ^ index)
}

/// Per-site uniforms of one trial, in site index order.
fn site_uniforms(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random::<f64>()).collect()
}

fn threshold(topology: &Arc<Topology>, uniforms: &[f64], q: f64) -> InfectionState {
    let mut infected = FixedBitSet::with_capacity(uniforms.len());
    for (i, &u) in uniforms.iter().enumerate() {
        if u >= q {
            infected.insert(i);
        }
    }
    InfectionState::from_bits(Arc::clone(topology), infected)
}

/// Initial state of trial `index`.
pub fn sample_initial(
    config: &ExperimentConfig,
    topology: &Arc<Topology>,
    trial_index: u64,
) -> InfectionState {
    let uniforms = site_uniforms(topology.len(), trial_seed(config.master_seed, trial_index));
    threshold(topology, &uniforms, config.q)
}

/// Histogram of a non-negative integer outcome. Trials ending in a fixpoint
/// below full infection are counted in `stuck_count` and nowhere else.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmpiricalDistribution {
    pub histogram: BTreeMap<u64, u64>,
    pub trials: u64,
    pub stuck_count: u64,
}

impl EmpiricalDistribution {
    pub fn from_outcomes(outcomes: impl IntoIterator<Item = Option<u64>>) -> Self {
        let mut dist = EmpiricalDistribution::default();
        for o in outcomes {
            dist.trials += 1;
            match o {
                Some(v) => *dist.histogram.entry(v).or_insert(0) += 1,
                None => dist.stuck_count += 1,
            }
        }
        dist
    }

    pub fn count(&self, outcome: u64) -> u64 {
        self.histogram.get(&outcome).copied().unwrap_or(0)
    }

    /// Fraction of all trials whose outcome satisfies `pred` (stuck never does).
    pub fn frequency(&self, pred: impl Fn(u64) -> bool) -> f64 {
        let hits: u64 = self.histogram.iter().filter(|(&k, _)| pred(k)).map(|(_, &c)| c).sum();
        hits as f64 / self.trials as f64
    }

    /// Empirical pmf on 0..=max outcome (stuck mass excluded).
    pub fn pmf(&self) -> Vec<f64> {
        let len = self.histogram.keys().next_back().map_or(0, |&k| k as usize + 1);
        let mut out = vec![0.0; len];
        for (&k, &c) in &self.histogram {
            out[k as usize] = c as f64 / self.trials as f64;
        }
        out
    }

    pub fn mean(&self) -> f64 {
        let total: f64 = self.histogram.iter().map(|(&k, &c)| k as f64 * c as f64).sum();
        total / (self.trials - self.stuck_count) as f64
    }

    pub fn variance(&self) -> f64 {
        let mean = self.mean();
        let n = (self.trials - self.stuck_count) as f64;
        let ss: f64 = self.histogram.iter().map(|(&k, &c)| c as f64 * (k as f64 - mean).powi(2)).sum();
        ss / (n - 1.0)
    }

    /// `outcome,count` rows, LF line endings, ascending outcomes, then a
    /// `stuck` row when any trial got stuck.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("outcome,count\n");
        for (k, c) in &self.histogram {
            writeln!(out, "{k},{c}").expect("string write");
        }
        if self.stuck_count > 0 {
            writeln!(out, "stuck,{}", self.stuck_count).expect("string write");
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateWithCI {
    pub point: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub level: f64,
}

/// Wilson score interval for `hits` successes out of `trials`.
pub fn wilson_interval(hits: u64, trials: u64, level: f64) -> EstimateWithCI {
    assert!(trials > 0 && hits <= trials, "need 0 ≤ hits ≤ trials, trials > 0");
    assert!(level > 0.0 && level < 1.0, "level must be in (0, 1)");
    let z = Normal::standard().inverse_cdf(0.5 + level / 2.0);
    let n = trials as f64;
    let p = hits as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    EstimateWithCI {
        point: p,
        ci_low: (centre - half).max(0.0).min(p),
        ci_high: (centre + half).min(1.0).max(p),
        level,
    }
}

/// P(T ≤ t) from a distribution of percolation times, stuck trials counting
/// as T = ∞.
pub fn estimate_p_t_le_t(dist: &EmpiricalDistribution, t: u64, level: f64) -> EstimateWithCI {
    let hits = dist.histogram.range(..=t).map(|(_, &c)| c).sum();
    wilson_interval(hits, dist.trials, level)
}

fn run_in_pool<T: Send>(
    config: &ExperimentConfig,
    f: impl Fn(u64) -> T + Sync + Send,
) -> Result<Vec<T>, MonteCarloError> {
    let pool = config.pool()?;
    Ok(pool.install(|| (0..config.trials).into_par_iter().map(f).collect()))
}

/// Distribution of the percolation time T.
pub fn run_trials_t(config: &ExperimentConfig) -> Result<EmpiricalDistribution, MonteCarloError> {
    let topo = config.topology()?;
    let outcomes = run_in_pool(config, |i| {
        let init = sample_initial(config, &topo, i);
        percolation_time(&init, config.rule).time()
    })?;
    Ok(EmpiricalDistribution::from_outcomes(outcomes))
}

/// Distribution of F_t, the number of sites still uninfected at time t.
pub fn run_trials_f(config: &ExperimentConfig, t: u64) -> Result<EmpiricalDistribution, MonteCarloError> {
    let topo = config.topology()?;
    let outcomes = run_in_pool(config, |i| {
        let init = sample_initial(config, &topo, i);
        Some(uninfected_count_at(&init, config.rule, t))
    })?;
    Ok(EmpiricalDistribution::from_outcomes(outcomes))
}

/// Percolation times (None = stuck) of paired runs at q_low and q_high
/// driven by the same site uniforms, so the q_low run starts with a
/// superset of the q_high run's infected sites. `config.q` is ignored.
pub fn coupled_monotonicity(
    config: &ExperimentConfig,
    q_low: f64,
    q_high: f64,
) -> Result<Vec<(Option<u64>, Option<u64>)>, MonteCarloError> {
    check_q(q_low)?;
    check_q(q_high)?;
    if q_low > q_high {
        return Err(MonteCarloError::CouplingOrder { low: q_low, high: q_high });
    }
    let topo = config.topology()?;
    run_in_pool(config, |i| {
        let uniforms = site_uniforms(topo.len(), trial_seed(config.master_seed, i));
        let low = threshold(&topo, &uniforms, q_low);
        let high = threshold(&topo, &uniforms, q_high);
        (
            percolation_time(&low, config.rule).time(),
            percolation_time(&high, config.rule).time(),
        )
    })
}

/// d_TV between the empirical distribution and Po(λ). Poisson mass beyond
/// the largest observed outcome and the empirical stuck mass both count.
pub fn tv_report(dist: &EmpiricalDistribution, lambda: f64) -> f64 {
    let emp = dist.pmf();
    let mut covered = 0.0;
    let mut diff = 0.0;
    for (k, &p) in emp.iter().enumerate() {
        let q = poisson_pmf(k as u64, lambda);
        covered += q;
        diff += (p - q).abs();
    }
    let tail = (1.0 - covered).max(0.0);
    let stuck = dist.stuck_count as f64 / dist.trials as f64;
    0.5 * (diff + tail + stuck)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(q: f64) -> ExperimentConfig {
        ExperimentConfig {
            d: 2,
            n: 16,
            rule: Rule::d_neighbour(2),
            q,
            t_horizon: 2,
            trials: 20,
            master_seed: 7,
            threads: 2,
        }
    }

    #[test]
    fn extreme_q() {
        let c = config(0.0);
        let topo = c.topology().unwrap();
        assert!(sample_initial(&c, &topo, 3).is_fully_infected());
        let c1 = config(1.0);
        assert_eq!(sample_initial(&c1, &topo, 3).uninfected_count(), 256);

        let t = run_trials_t(&c).unwrap();
        assert_eq!(t.histogram, BTreeMap::from([(0, 20)]));
        let t1 = run_trials_t(&c1).unwrap();
        assert_eq!(t1.stuck_count, 20);
        assert!(t1.histogram.is_empty());
        let f = run_trials_f(&c, 2).unwrap();
        assert_eq!(f.histogram, BTreeMap::from([(0, 20)]));
    }

    #[test]
    fn sampling_is_reproducible() {
        let c = config(0.4);
        let topo = c.topology().unwrap();
        assert_eq!(sample_initial(&c, &topo, 5), sample_initial(&c, &topo, 5));
        assert_ne!(sample_initial(&c, &topo, 5), sample_initial(&c, &topo, 6));
    }

    #[test]
    fn validation() {
        let mut c = config(0.5);
        c.trials = 0;
        assert!(matches!(c.validate(), Err(MonteCarloError::NoTrials)));
        let mut c = config(1.5);
        assert!(matches!(c.validate(), Err(MonteCarloError::Probability(_))));
        c.q = 0.5;
        c.n = 11;
        assert!(matches!(c.validate(), Err(MonteCarloError::SideTooSmall { min: 12, .. })));
    }

    #[test]
    fn wilson_examples() {
        let all = wilson_interval(10, 10, 0.95);
        assert_eq!(all.point, 1.0);
        let none = wilson_interval(0, 1000, 0.95);
        assert_eq!(none.point, 0.0);
        assert!(none.ci_high > 0.0);
        // Reference values from statsmodels' proportion_confint(method="wilson").
        let e = wilson_interval(135, 1000, 0.95);
        assert_eq!(e.point, 0.135);
        assert!((e.ci_low - 0.115_211_378_491_660_2).abs() < 1e-12, "{e:?}");
        assert!((e.ci_high - 0.157_582_155_202_795_1).abs() < 1e-12, "{e:?}");
    }

    #[test]
    fn tv_examples() {
        let point = EmpiricalDistribution::from_outcomes([Some(0); 10]);
        assert!((tv_report(&point, 2f64.ln()) - 0.5).abs() < 1e-12);
        assert!(tv_report(&point, 0.0).abs() < 1e-15);
        let stuck = EmpiricalDistribution::from_outcomes([None, Some(0)]);
        assert!((tv_report(&stuck, 0.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn csv_layout() {
        let d = EmpiricalDistribution::from_outcomes([Some(2), Some(3), Some(2), None]);
        assert_eq!(d.to_csv(), "outcome,count\n2,2\n3,1\nstuck,1\n");
    }

    #[test]
    fn coupling_equal_q_gives_equal_times() {
        let c = config(0.0);
        for (a, b) in coupled_monotonicity(&c, 0.3, 0.3).unwrap() {
            assert_eq!(a, b);
        }
        for (a, _) in coupled_monotonicity(&c, 0.0, 0.3).unwrap() {
            assert_eq!(a, Some(0));
        }
        assert!(coupled_monotonicity(&c, 0.4, 0.3).is_err());
    }
}
