//! The `experiment` subcommand: a versioned JSON config in, histograms and a
//! report out.

use std::path::Path;

use anyhow::Result;
use bootperc::dynamics::Rule;
use bootperc::extremal::{exact_rho1, Budget};
use bootperc::formulas::{lambda_leading, poisson_pmf, q_for_lambda};
use bootperc::montecarlo::{
    estimate_p_t_le_t, run_trials_f, run_trials_t, tv_report, EmpiricalDistribution, ExperimentConfig,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::manifest::RunRecorder;
use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

pub fn path_error(e: &serde_path_to_error::Error<serde_json::Error>) -> String {
    match e.path().to_string().as_str() {
        "." => e.inner().to_string(),
        path => format!("{path}: {}", e.inner()),
    }
}

fn default_true() -> bool {
    true
}

fn default_level() -> f64 {
    0.95
}

/// On-disk experiment description. Exactly one of `q` and `lambda` is set;
/// `lambda` picks q from the leading-order mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    pub schema: u32,
    pub d: usize,
    pub n: usize,
    pub rule: Rule,
    #[serde(default)]
    pub q: Option<f64>,
    #[serde(default)]
    pub lambda: Option<f64>,
    pub t_horizon: u32,
    pub trials: u64,
    pub master_seed: u64,
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default = "default_true")]
    pub percolation_time: bool,
    #[serde(default = "default_true")]
    pub uninfected_count: bool,
    #[serde(default = "default_level")]
    pub level: f64,
}

impl ExperimentFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let file: ExperimentFile = serde_path_to_error::deserialize(de)
            .map_err(|e| CliError::Schema(path_error(&e)))?;
        file.check()?;
        Ok(file)
    }

    fn check(&self) -> Result<(), CliError> {
        let bad = |field: &str, msg: String| Err(CliError::Schema(format!("{field}: {msg}")));
        if self.schema != SCHEMA_VERSION {
            return bad("schema", format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema));
        }
        if self.trials == 0 {
            return bad("trials", "must be at least 1".into());
        }
        match (self.q, self.lambda) {
            (Some(_), Some(_)) | (None, None) => return bad("q", "give exactly one of q and lambda".into()),
            (Some(q), None) if !(0.0..=1.0).contains(&q) => return bad("q", format!("{q} is not a probability")),
            (None, Some(l)) if !(l >= 0.0 && l.is_finite()) => return bad("lambda", format!("{l} is not a mean")),
            _ => {}
        }
        if self.threads == Some(0) {
            return bad("threads", "must be at least 1".into());
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return bad("level", "must lie in (0, 1)".into());
        }
        if !self.percolation_time && !self.uninfected_count {
            return bad("percolation_time", "nothing to measure".into());
        }
        Ok(())
    }

    pub fn resolve(&self, default_threads: usize) -> Result<ExperimentConfig, CliError> {
        let q = match (self.q, self.lambda) {
            (Some(q), _) => q,
            (None, Some(l)) => q_for_lambda(self.n as u64, self.d, self.t_horizon, l, self.rule)
                .map_err(|e| CliError::Schema(format!("lambda: {e}")))?,
            (None, None) => unreachable!("checked"),
        };
        let config = ExperimentConfig {
            d: self.d,
            n: self.n,
            rule: self.rule,
            q,
            t_horizon: self.t_horizon,
            trials: self.trials,
            master_seed: self.master_seed,
            threads: self.threads.unwrap_or(default_threads),
        };
        config.validate().map_err(|e| CliError::Schema(e.to_string()))?;
        Ok(config)
    }
}

/// Exact mean of F_t when ρ₁ is cheap enough to enumerate.
fn lambda_exact(config: &ExperimentConfig, budget: &Budget) -> Option<f64> {
    let rho = exact_rho1(config.d, config.t_horizon, config.rule, budget).ok()?;
    Some((config.n as f64).powi(config.d as i32) * rho.evaluate(config.q))
}

fn summarise(dist: &EmpiricalDistribution) -> Value {
    json!({
        "trials": dist.trials,
        "stuck": dist.stuck_count,
        "histogram": dist.histogram,
    })
}

pub fn run(file: &ExperimentFile, config: &ExperimentConfig, out: &Path, budget: &Budget) -> Result<Value> {
    let params = json!({ "file": file, "resolved": config });
    let mut rec = RunRecorder::start(out, "experiment", params, Some(config.master_seed))?;
    let t = config.t_horizon as u64;
    let exact = lambda_exact(config, budget);
    let leading = lambda_leading(config.n as u64, config.d, config.t_horizon, config.q, config.rule).ok();
    let lambda = exact.or(leading);

    // Thread count cannot change results, so it stays out of the report.
    let mut shown = json!(config);
    shown.as_object_mut().expect("struct").remove("threads");
    let mut report = json!({
        "config": shown,
        "lambda_exact": exact,
        "lambda_leading_order": leading,
    });
    if file.percolation_time {
        let dist = run_trials_t(config)?;
        rec.write("T_hist.csv", &dist.to_csv())?;
        let est = estimate_p_t_le_t(&dist, t, file.level);
        report["percolation_time"] = summarise(&dist);
        report["p_t_le_horizon"] = json!(est);
        report["p_t_eq_horizon"] = json!(dist.frequency(|x| x == t));
        report["p_t_in_window"] = json!(dist.frequency(|x| x == t || x == t + 1));
        if let Some(l) = lambda {
            report["poisson_p_t_le_horizon"] = json!(poisson_pmf(0, l));
        }
    }
    if file.uninfected_count {
        let dist = run_trials_f(config, t)?;
        rec.write("F_hist.csv", &dist.to_csv())?;
        report["uninfected_count"] = summarise(&dist);
        report["uninfected_mean"] = json!(dist.mean());
        if let Some(l) = lambda {
            report["tv_to_poisson"] = json!(tv_report(&dist, l));
            report["tv_lambda_source"] = json!(if exact.is_some() { "exact" } else { "leading-order" });
        }
    }
    rec.write_json("report.json", &report)?;
    rec.finish()?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> Value {
        json!({
            "schema": 1, "d": 2, "n": 16, "rule": {"standard": {"r": 2}},
            "q": 0.1, "t_horizon": 2, "trials": 5, "master_seed": 3
        })
    }

    #[test]
    fn parses_minimal_config() {
        let f = ExperimentFile::parse(&base().to_string()).unwrap();
        assert_eq!(f.rule, Rule::d_neighbour(2));
        assert!(f.percolation_time && f.uninfected_count);
        assert_eq!(f.resolve(3).unwrap().threads, 3);
    }

    #[test]
    fn schema_errors_name_the_field() {
        let mut v = base();
        v["trials"] = json!(0);
        let e = ExperimentFile::parse(&v.to_string()).unwrap_err().to_string();
        assert!(e.contains("trials"), "{e}");

        let mut v = base();
        v["bogus"] = json!(1);
        let e = ExperimentFile::parse(&v.to_string()).unwrap_err().to_string();
        assert!(e.contains("bogus"), "{e}");

        let mut v = base();
        v["n"] = json!("big");
        let e = ExperimentFile::parse(&v.to_string()).unwrap_err().to_string();
        assert!(e.starts_with("schema error: n"), "{e}");

        let mut v = base();
        v["schema"] = json!(2);
        assert!(ExperimentFile::parse(&v.to_string()).is_err());

        let mut v = base();
        v["lambda"] = json!(2.0);
        assert!(ExperimentFile::parse(&v.to_string()).is_err());
    }

    #[test]
    fn lambda_selects_q() {
        let mut v = base();
        v.as_object_mut().unwrap().remove("q");
        v["lambda"] = json!(2.0);
        v["n"] = json!(512);
        let f = ExperimentFile::parse(&v.to_string()).unwrap();
        let q = f.resolve(1).unwrap().q;
        assert!((16.0 * 512f64.powi(2) * q.powi(8) - 2.0).abs() < 1e-9);
    }
}
