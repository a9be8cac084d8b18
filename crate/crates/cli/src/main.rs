mod experiment;
mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{Context, Result};
use bootperc::dynamics::{percolation_time, Rule, StopReport};
use bootperc::extremal::{
    count_min_certificates, count_near_minimal, exact_joint, exact_rho1, Budget,
    Classification, ExtremalError, DEFAULT_MAX_SUBSETS,
};
use bootperc::formulas::{ell, lambda_leading, m, m_general, p_alpha, q_for_lambda, ThresholdQuery};
use bootperc::lattice::Site;
use bootperc::montecarlo::{sample_initial, ExperimentConfig};
use bootperc::verify::{run_suite, Suite, VerifyOptions};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use thiserror::Error;

use crate::experiment::ExperimentFile;
use crate::manifest::{read_manifest, RunRecorder};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("budget refused: {0}")]
    Budget(String),
    #[error("verification failed: {0}")]
    Verification(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Schema(_) => 2,
            CliError::Budget(_) => 3,
            CliError::Verification(_) => 4,
        }
    }
}

fn extremal_err(e: ExtremalError) -> anyhow::Error {
    match e {
        ExtremalError::BudgetExceeded { .. } => CliError::Budget(e.to_string()).into(),
        other => anyhow::Error::new(other),
    }
}

#[derive(Parser, Debug)]
#[command(name = "bootperc", version, about = "Bootstrap percolation: formulas, exhaustive certificates, Monte Carlo experiments")]
struct Cli {
    /// Worker threads for parallel work (defaults to all cores).
    #[arg(long, global = true, env = "BOOTPERC_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Closed-form quantities, printed as JSON.
    Formulas {
        #[command(subcommand)]
        quantity: Quantity,
    },
    /// Exhaustive enumeration over subsets of a small ball.
    Extremal {
        #[command(subcommand)]
        op: ExtremalOp,
    },
    /// One seeded run on the torus.
    Simulate(SimulateArgs),
    /// Monte Carlo experiment from a JSON config.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an acceptance suite; exits 4 if any criterion fails.
    Verify {
        #[arg(value_enum)]
        suite: SuiteArg,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-run a recorded run and compare its outputs byte for byte.
    Replay {
        manifest: PathBuf,
        /// Where the new outputs go (defaults to `<run dir>/replay`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum RuleKind {
    Standard,
    Modified,
}

#[derive(Args, Debug, Clone, Copy)]
struct RuleArgs {
    #[arg(long, value_enum, default_value = "standard")]
    rule: RuleKind,
    /// Threshold for the standard rule (defaults to d).
    #[arg(long)]
    r: Option<usize>,
}

impl RuleArgs {
    fn rule(&self, d: usize) -> Rule {
        match self.rule {
            RuleKind::Standard => Rule::Standard { r: self.r.unwrap_or(d) },
            RuleKind::Modified => Rule::Modified,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Quantity {
    Ell {
        #[arg(long)]
        d: u64,
        #[arg(long)]
        t: u64,
    },
    M {
        #[arg(long)]
        d: u64,
        #[arg(long)]
        t: u64,
    },
    MGeneral {
        #[arg(long)]
        d: usize,
        #[arg(long)]
        t: u32,
        #[arg(long)]
        r: usize,
    },
    LambdaLeading {
        #[arg(long)]
        n: u64,
        #[arg(long)]
        d: usize,
        #[arg(long)]
        t: u32,
        #[arg(long)]
        q: f64,
        #[command(flatten)]
        rule: RuleArgs,
    },
    PAlpha {
        #[arg(long)]
        d: usize,
        #[arg(long)]
        n: u64,
        #[arg(long)]
        t: u32,
        #[arg(long)]
        alpha: f64,
        #[command(flatten)]
        rule: RuleArgs,
    },
    QForLambda {
        #[arg(long)]
        n: u64,
        #[arg(long)]
        d: usize,
        #[arg(long)]
        t: u32,
        #[arg(long)]
        lambda: f64,
        #[command(flatten)]
        rule: RuleArgs,
    },
}

#[derive(Args, Debug, Clone)]
struct InstanceArgs {
    #[arg(long)]
    d: usize,
    #[arg(long)]
    t: u32,
    #[command(flatten)]
    rule: RuleArgs,
    /// Maximum number of subsets to test.
    #[arg(long, default_value_t = DEFAULT_MAX_SUBSETS)]
    budget: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum ExtremalOp {
    /// Minimal protecting sets: size, count, classification.
    Min(InstanceArgs),
    /// Exact counts N_u of protecting subsets by size.
    Rho1 {
        #[command(flatten)]
        inst: InstanceArgs,
        /// Also evaluate ρ₁ at this q.
        #[arg(long)]
        q: Option<f64>,
    },
    /// g_t(k): protecting sets with m_t + k uninfected sites (d-neighbour rule).
    Near {
        #[arg(long)]
        d: usize,
        #[arg(long)]
        t: u32,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = DEFAULT_MAX_SUBSETS)]
        budget: u64,
    },
    /// Joint protection polynomial of the origin and an offset.
    Joint {
        #[command(flatten)]
        inst: InstanceArgs,
        /// Comma-separated coordinates, e.g. `1,0`.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        offset: Vec<i64>,
        #[arg(long)]
        q: Option<f64>,
    },
}

#[derive(Args, Debug, Clone, serde::Serialize, serde::Deserialize)]
struct SimulateArgs {
    #[arg(long)]
    d: usize,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    q: f64,
    #[arg(long, value_enum, default_value = "standard")]
    #[serde(skip)]
    rule_kind: Option<RuleKind>,
    #[arg(long)]
    r: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    trial: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SuiteArg {
    Extremal,
    Formulas,
    Dynamics,
    Poisson,
    Concentration,
    All,
}

fn print_json(v: &Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn formulas(q: &Quantity) -> Result<Value> {
    let schema = |e: bootperc::formulas::FormulaError| -> anyhow::Error { CliError::Schema(e.to_string()).into() };
    let (name, params, value, leading) = match *q {
        Quantity::Ell { d, t } => ("ell", json!({"d": d, "t": t}), json!(ell(t, d)), false),
        Quantity::M { d, t } => ("m", json!({"d": d, "t": t}), json!(m(t, d)), false),
        Quantity::MGeneral { d, t, r } => (
            "m-general",
            json!({"d": d, "t": t, "r": r}),
            json!(m_general(t, d, r).map_err(schema)?),
            false,
        ),
        Quantity::LambdaLeading { n, d, t, q, rule } => {
            let rule = rule.rule(d);
            (
                "lambda-leading",
                json!({"n": n, "d": d, "t": t, "q": q, "rule": rule}),
                json!(lambda_leading(n, d, t, q, rule).map_err(schema)?),
                true,
            )
        }
        Quantity::PAlpha { d, n, t, alpha, rule } => {
            let rule = rule.rule(d);
            let query = ThresholdQuery { d, n, t, alpha, rule };
            (
                "p-alpha",
                json!(query),
                json!(p_alpha(&query).map_err(schema)?),
                true,
            )
        }
        Quantity::QForLambda { n, d, t, lambda, rule } => {
            let rule = rule.rule(d);
            (
                "q-for-lambda",
                json!({"n": n, "d": d, "t": t, "lambda": lambda, "rule": rule}),
                json!(q_for_lambda(n, d, t, lambda, rule).map_err(schema)?),
                true,
            )
        }
    };
    // u128 values go out as JSON numbers; all closed forms here fit easily.
    Ok(json!({"quantity": name, "params": params, "value": value, "leading_order": leading}))
}

fn class_counts(certs: &[bootperc::extremal::Certificate]) -> (usize, usize, usize) {
    let mut c = (0, 0, 0);
    for cert in certs {
        match cert.classification {
            Classification::Canonical { .. } => c.0 += 1,
            Classification::SemiCanonical { .. } => c.1 += 1,
            Classification::Other => c.2 += 1,
        }
    }
    c
}

fn extremal(op: &ExtremalOp) -> Result<Value> {
    match op {
        ExtremalOp::Min(inst) => {
            let rule = inst.rule.rule(inst.d);
            let budget = Budget { max_subsets: inst.budget };
            let params = json!({"op": "min", "d": inst.d, "t": inst.t, "rule": rule, "budget": inst.budget});
            let (count, certs) = count_min_certificates(inst.d, inst.t, rule, &budget).map_err(extremal_err)?;
            let size = certs.first().map_or(0, |c| c.size);
            let (canonical, semi, other) = class_counts(&certs);
            let summary = json!({
                "d": inst.d, "t": inst.t, "rule": rule, "size": size, "count": count,
                "canonical": canonical, "semi_canonical": semi, "other": other,
                "all_semi_canonical": other == 0,
            });
            if let Some(out) = &inst.out {
                let mut rec = RunRecorder::start(out, "extremal", params, None)?;
                rec.write_json("certificates.json", &certs)?;
                rec.write(
                    "summary.csv",
                    &format!(
                        "d,t,rule,size,count,canonical,semi_canonical,other\n{},{},{},{},{},{},{},{}\n",
                        inst.d,
                        inst.t,
                        rule.label(),
                        size,
                        count,
                        canonical,
                        semi,
                        other
                    ),
                )?;
                rec.finish()?;
            }
            Ok(summary)
        }
        ExtremalOp::Rho1 { inst, q } => {
            let rule = inst.rule.rule(inst.d);
            let budget = Budget { max_subsets: inst.budget };
            let poly = exact_rho1(inst.d, inst.t, rule, &budget).map_err(extremal_err)?;
            let mut v = serde_json::to_value(&poly)?;
            if let Some(q) = q {
                v["q"] = json!(q);
                v["value"] = json!(poly.evaluate(*q));
            }
            if let Some(out) = &inst.out {
                let params = json!({"op": "rho1", "d": inst.d, "t": inst.t, "rule": rule, "budget": inst.budget, "q": q});
                let mut rec = RunRecorder::start(out, "extremal", params, None)?;
                rec.write_json("rho1.json", &v)?;
                rec.finish()?;
            }
            Ok(v)
        }
        ExtremalOp::Near { d, t, k, budget } => {
            let g = count_near_minimal(*d, *t, *k, &Budget { max_subsets: *budget }).map_err(extremal_err)?;
            Ok(json!({"d": d, "t": t, "k": k, "size": m(*t as u64, *d as u64) + *k as u128, "count": g}))
        }
        ExtremalOp::Joint { inst, offset, q } => {
            let rule = inst.rule.rule(inst.d);
            let offset = Site::new(offset.clone());
            let joint = exact_joint(inst.d, inst.t, &offset, rule, &Budget { max_subsets: inst.budget })
                .map_err(|e| match e {
                    ExtremalError::BudgetExceeded { .. } => CliError::Budget(e.to_string()).into(),
                    ExtremalError::OffsetTooFar { .. } | ExtremalError::ZeroOffset | ExtremalError::Lattice(_) => {
                        CliError::Schema(e.to_string()).into()
                    }
                    other => anyhow::Error::new(other),
                })?;
            let mut v = serde_json::to_value(&joint)?;
            if let Some(q) = q {
                v["q"] = json!(q);
                v["value"] = json!(joint.evaluate(*q));
            }
            Ok(v)
        }
    }
}

fn simulate(args: &SimulateArgs, threads: usize) -> Result<Value> {
    let rule = match args.rule_kind.unwrap_or(RuleKind::Standard) {
        RuleKind::Standard => Rule::Standard { r: args.r.unwrap_or(args.d) },
        RuleKind::Modified => Rule::Modified,
    };
    let config = ExperimentConfig {
        d: args.d,
        n: args.n,
        rule,
        q: args.q,
        t_horizon: 0,
        trials: 1,
        master_seed: args.seed,
        threads,
    };
    let topo = config.topology().map_err(|e| CliError::Schema(e.to_string()))?;
    let initial = sample_initial(&config, &topo, args.trial);
    let mut uninfected = vec![initial.uninfected_count() as u64];
    let mut state = initial.clone();
    let stop = percolation_time(&initial, rule);
    let steps = match stop {
        StopReport::Percolated { time } => time,
        StopReport::Stuck { t_stable, .. } => t_stable,
    };
    for _ in 0..steps {
        state = state.step(rule);
        uninfected.push(state.uninfected_count() as u64);
    }
    let result = json!({
        "d": args.d, "n": args.n, "q": args.q, "rule": rule, "seed": args.seed, "trial": args.trial,
        "outcome": stop, "uninfected_by_time": uninfected,
    });
    if let Some(out) = &args.out {
        let params = json!({
            "d": args.d, "n": args.n, "q": args.q, "rule": rule, "seed": args.seed, "trial": args.trial,
        });
        let mut rec = RunRecorder::start(out, "simulate", params, Some(args.seed))?;
        let mut csv = String::from("time,uninfected\n");
        for (t, u) in uninfected.iter().enumerate() {
            csv.push_str(&format!("{t},{u}\n"));
        }
        rec.write("trajectory.csv", &csv)?;
        rec.write_json("outcome.json", &result)?;
        rec.finish()?;
    }
    let _ = Arc::clone(initial.topology());
    Ok(result)
}

fn run_experiment(config_path: &Path, out: &Path, threads: usize) -> Result<Value> {
    let text = fs::read_to_string(config_path).with_context(|| format!("reading {}", config_path.display()))?;
    let file = ExperimentFile::parse(&text)?;
    let config = file.resolve(threads)?;
    experiment::run(&file, &config, out, &Budget::default())
}

fn verify(suite: SuiteArg, seed: Option<u64>, out: Option<&Path>, threads: usize) -> Result<Value> {
    let mut opts = VerifyOptions {
        threads,
        ..VerifyOptions::default()
    };
    if let Some(s) = seed {
        opts.master_seed = s;
    }
    let suites: Vec<Suite> = match suite {
        SuiteArg::All => Suite::ALL.to_vec(),
        SuiteArg::Extremal => vec![Suite::Extremal],
        SuiteArg::Formulas => vec![Suite::Formulas],
        SuiteArg::Dynamics => vec![Suite::Dynamics],
        SuiteArg::Poisson => vec![Suite::Poisson],
        SuiteArg::Concentration => vec![Suite::Concentration],
    };
    let mut reports = Vec::new();
    for s in suites {
        for r in run_suite(s, &opts) {
            eprintln!("{}", r.line());
            reports.push(r);
        }
    }
    let passed = reports.iter().all(|r| r.passed);
    let v = json!({"passed": passed, "master_seed": opts.master_seed, "criteria": reports});
    if let Some(out) = out {
        let mut rec = RunRecorder::start(out, "verify", json!({"suite": format!("{suite:?}").to_lowercase()}), Some(opts.master_seed))?;
        rec.write_json("verify.json", &v)?;
        rec.finish()?;
    }
    print_json(&v)?;
    if !passed {
        let failed: Vec<String> = reports.iter().filter(|r| !r.passed).map(|r| r.id.to_string()).collect();
        return Err(CliError::Verification(format!("criteria {}", failed.join(", "))).into());
    }
    Ok(Value::Null)
}

fn replay(manifest_path: &Path, out: Option<&Path>, threads: usize) -> Result<Value> {
    let manifest = read_manifest(manifest_path)?;
    let run_dir = manifest_path.parent().unwrap_or(Path::new("."));
    let target = out.map_or_else(|| run_dir.join("replay"), Path::to_path_buf);
    let p = &manifest.params;
    match manifest.subcommand.as_str() {
        "experiment" => {
            let file: ExperimentFile = serde_json::from_value(p["file"].clone())
                .map_err(|e| CliError::Schema(format!("params.file: {e}")))?;
            let resolved: ExperimentConfig = serde_json::from_value(p["resolved"].clone())
                .map_err(|e| CliError::Schema(format!("params.resolved: {e}")))?;
            // Thread count never changes results; use the caller's.
            let config = ExperimentConfig { threads, ..resolved };
            experiment::run(&file, &config, &target, &Budget::default())?;
        }
        "extremal" => {
            let d = p["d"].as_u64().context("params.d")? as usize;
            let t = p["t"].as_u64().context("params.t")? as u32;
            let rule: Rule = serde_json::from_value(p["rule"].clone())?;
            let budget = p["budget"].as_u64().context("params.budget")?;
            let (rule_kind, r) = match rule {
                Rule::Standard { r } => (RuleKind::Standard, Some(r)),
                Rule::Modified => (RuleKind::Modified, None),
            };
            let inst = InstanceArgs {
                d,
                t,
                rule: RuleArgs { rule: rule_kind, r },
                budget,
                out: Some(target.clone()),
            };
            match p["op"].as_str() {
                Some("min") => extremal(&ExtremalOp::Min(inst))?,
                Some("rho1") => extremal(&ExtremalOp::Rho1 { inst, q: p["q"].as_f64() })?,
                other => return Err(CliError::Schema(format!("params.op: unknown {other:?}")).into()),
            };
        }
        "simulate" => {
            let rule: Rule = serde_json::from_value(p["rule"].clone())?;
            let (rule_kind, r) = match rule {
                Rule::Standard { r } => (RuleKind::Standard, Some(r)),
                Rule::Modified => (RuleKind::Modified, None),
            };
            let args = SimulateArgs {
                d: p["d"].as_u64().context("params.d")? as usize,
                n: p["n"].as_u64().context("params.n")? as usize,
                q: p["q"].as_f64().context("params.q")?,
                rule_kind: Some(rule_kind),
                r,
                seed: p["seed"].as_u64().context("params.seed")?,
                trial: p["trial"].as_u64().context("params.trial")?,
                out: Some(target.clone()),
            };
            simulate(&args, threads)?;
        }
        other => return Err(CliError::Schema(format!("subcommand {other} cannot be replayed")).into()),
    }
    let mut mismatched = Vec::new();
    for name in &manifest.outputs {
        let a = fs::read(run_dir.join(name)).with_context(|| format!("reading original {name}"))?;
        let b = fs::read(target.join(name)).with_context(|| format!("reading replayed {name}"))?;
        if a != b {
            mismatched.push(name.clone());
        }
    }
    let v = json!({"replayed_into": target, "outputs": manifest.outputs, "mismatched": mismatched});
    if !mismatched.is_empty() {
        print_json(&v)?;
        return Err(CliError::Verification(format!("outputs differ: {}", mismatched.join(", "))).into());
    }
    Ok(v)
}

fn run(cli: Cli) -> Result<()> {
    let threads = cli.threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if threads == 0 {
        return Err(CliError::Schema("--threads must be at least 1".into()).into());
    }
    // The global pool serves the exhaustive sweeps; experiments build their own.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    let out = match &cli.command {
        Command::Formulas { quantity } => formulas(quantity)?,
        Command::Extremal { op } => extremal(op)?,
        Command::Simulate(args) => simulate(args, threads)?,
        Command::Experiment { config, out } => run_experiment(config, out, threads)?,
        Command::Verify { suite, seed, out } => verify(*suite, *seed, out.as_deref(), threads)?,
        Command::Replay { manifest, out } => replay(manifest, out.as_deref(), threads)?,
    };
    if !out.is_null() {
        print_json(&out)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<CliError>().map_or(1, CliError::exit_code);
            ExitCode::from(code)
        }
    }
}
