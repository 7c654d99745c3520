//! Command-line front end. Every subcommand writes JSON (and, where useful,
//! CSV) into the output directory; failures print one JSON object on stderr.
//!
//! Exit codes: 0 success, 1 rejected input, 2 runtime failure.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::dp::diagnostics::{invariant_checks, polynomial_bound_diagnostics, probe_checks};
use crate::dp::{backward_induction, extract_and_simulate, DpOptions, DpSolution, NVariant, MIN_GRID};
use crate::error::{Error, Result};
use crate::noarb::{certify_tree, CertificateRecord};
use crate::oracle::{brute_force_value, StrategyGrid};
use crate::scalar::norm;
use crate::tree::load_tree;
use crate::utility::{certify_ae, detect_illposed, growth_constant, load_utility, IllPosedVerdict};
use crate::{Tree, Utility};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
/// Environment variable capping the worker threads.
pub const THREADS_ENV: &str = "NCU_THREADS";

#[derive(Debug, Parser)]
#[command(name = "ncu", version, about = "Optimal portfolios for non-concave utilities on scenario trees")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// No-arbitrage certificates for every internal node.
    CheckNa {
        #[arg(long)]
        tree: PathBuf,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Asymptotic-elasticity certificate and growth constant of a utility.
    CertifyUtility {
        #[arg(long)]
        utility: PathBuf,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Expected utility of ever larger positions in the one-step ±1 market.
    IllposedDemo {
        #[arg(long)]
        utility: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        n_max: usize,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Backward induction, policy simulation and invariant checks.
    Solve(SolveArgs),
    /// `solve` followed by brute-force enumeration on the same instance.
    OracleCompare {
        #[command(flatten)]
        solve: SolveArgs,
        #[arg(long, default_value_t = 2.0)]
        oracle_bound: f64,
        #[arg(long, default_value_t = 4001)]
        oracle_resolution: usize,
    },
}

#[derive(Debug, Args)]
struct OutputArgs {
    #[arg(long, default_value = ".")]
    output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum NVariantArg {
    Max,
    Markov,
}

#[derive(Debug, Args)]
struct SolveArgs {
    #[arg(long)]
    tree: PathBuf,
    #[arg(long)]
    utility: PathBuf,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    x0: f64,
    /// Wealth window as `LO,HI`.
    #[arg(long, default_value = "-5,5", allow_hyphen_values = true, value_parser = parse_window)]
    window: (f64, f64),
    #[arg(long, default_value_t = 1001)]
    grid: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random probes per node and check; 0 disables them.
    #[arg(long, default_value_t = 1000)]
    probes: usize,
    #[arg(long, value_enum, default_value_t = NVariantArg::Max)]
    n_variant: NVariantArg,
    #[command(flatten)]
    out: OutputArgs,
}

fn parse_window(s: &str) -> std::result::Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(',').ok_or_else(|| format!("expected LO,HI, got {s:?}"))?;
    let lo: f64 = lo.trim().parse().map_err(|e| format!("{lo:?}: {e}"))?;
    let hi: f64 = hi.trim().parse().map_err(|e| format!("{hi:?}: {e}"))?;
    Ok((lo, hi))
}

/// Settings of a `solve` run; everything that determines the report.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub tree: PathBuf,
    pub utility: PathBuf,
    pub x0: f64,
    pub window: (f64, f64),
    pub grid: usize,
    pub n_variant: NVariant,
    pub probes: usize,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<StrategyGrid>,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.window;
        if !(lo < hi) {
            return Err(Error::Config(format!("window [{lo}, {hi}] is empty")));
        }
        if !(self.x0 >= lo && self.x0 <= hi) {
            return Err(Error::Config(format!("x0 = {} outside the window [{lo}, {hi}]", self.x0)));
        }
        if self.grid < MIN_GRID {
            return Err(Error::Config(format!("grid size {} below {MIN_GRID}", self.grid)));
        }
        Ok(())
    }
}

impl SolveArgs {
    fn config(&self, oracle: Option<StrategyGrid>) -> RunConfig {
        RunConfig {
            tree: self.tree.clone(),
            utility: self.utility.clone(),
            x0: self.x0,
            window: self.window,
            grid: self.grid,
            n_variant: match self.n_variant {
                NVariantArg::Max => NVariant::Max,
                NVariantArg::Markov => NVariant::Markov,
            },
            probes: self.probes,
            seed: self.seed,
            oracle,
        }
    }
}

/// SHA-256 over the serialized settings and the bytes of every input file.
pub fn config_hash(settings: &impl Serialize, inputs: &[&Path]) -> Result<String> {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(settings)?);
    for p in inputs {
        h.update(fs::read(p)?);
    }
    Ok(hex::encode(h.finalize()))
}

fn write_json(dir: &Path, name: &str, value: &Value) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(dir.join(name), text)?;
    Ok(())
}

fn envelope(report: Value, hash: &str) -> Value {
    let mut head = json!({ "tool": "ncu", "version": VERSION, "config_hash": hash });
    if let (Value::Object(h), Value::Object(body)) = (&mut head, report) {
        h.extend(body);
    }
    head
}

/// An error that still carries extra fields for the stderr object.
struct Failure {
    error: Error,
    extra: Value,
}

impl<E: Into<Error>> From<E> for Failure {
    fn from(error: E) -> Self {
        Self { error: error.into(), extra: Value::Null }
    }
}

type CliResult = std::result::Result<(), Failure>;

fn check_na(tree_path: &Path, out: &Path) -> CliResult {
    let tree: Tree = load_tree(tree_path)?;
    let hash = config_hash(&json!({ "command": "check-na" }), &[tree_path])?;
    let certs: Vec<CertificateRecord> = certify_tree(&tree)?.iter().map(|c| c.record(&tree)).collect();
    let bad = certs.iter().find(|c| !c.na_ok).cloned();
    let report = json!({ "command": "check-na", "na_ok": bad.is_none(), "certificates": certs });
    write_json(out, "check_na.json", &envelope(report, &hash))?;
    match bad {
        None => Ok(()),
        Some(c) => {
            let witness = c.witness.clone().unwrap_or_default();
            Err(Failure {
                error: Error::Arbitrage { node: c.id.clone(), witness: witness.clone() },
                extra: json!({ "node": c.id, "witness": witness }),
            })
        }
    }
}

fn certify_utility(path: &Path, out: &Path) -> CliResult {
    let u: Utility = load_utility(path)?;
    let hash = config_hash(&json!({ "command": "certify-utility" }), &[path])?;
    let cert = certify_ae(&u);
    let report = json!({
        "command": "certify-utility",
        "family": u.family_name(),
        "ae": u.ae,
        "certified": cert.is_ok(),
        "certificate": cert.as_ref().ok(),
        "reason": cert.as_ref().err().map(|e| e.to_string()),
        "growth_constant": growth_constant(&u).c,
        "bounded_above": u.is_bounded_above(),
    });
    write_json(out, "certify_utility.json", &envelope(report, &hash))?;
    cert.map(|_| ()).map_err(Failure::from)
}

fn illposed_demo(path: &Path, n_max: usize, out: &Path) -> CliResult {
    let u: Utility = load_utility(path)?;
    let hash = config_hash(&json!({ "command": "illposed-demo", "n_max": n_max }), &[path])?;
    let ill = detect_illposed(&u, n_max)?;
    fs::create_dir_all(out)?;
    let mut w = csv::Writer::from_path(out.join("illposed.csv"))?;
    w.write_record(["n", "expected_utility"])?;
    for (n, v) in &ill.series {
        w.write_record([n.to_string(), v.to_string()])?;
    }
    w.flush()?;
    let report = json!({
        "command": "illposed-demo",
        "verdict": ill.verdict,
        "alpha": ill.alpha,
        "beta": ill.beta,
        "p": ill.p,
        "terms": ill.series.len(),
        "increasing_from": ill.increasing_from,
        "last": ill.series.last().map(|s| s.1),
        "diverges": ill.verdict == IllPosedVerdict::Diverges,
    });
    write_json(out, "illposed.json", &envelope(report, &hash))?;
    Ok(())
}

fn node_rows(tree: &Tree, sol: &DpSolution<f64>) -> Vec<Value> {
    sol.nodes
        .values()
        .map(|s| {
            let n = tree.node(s.node);
            json!({
                "id": n.id,
                "depth": n.depth,
                "dim": s.basis.dim(),
                "constants": s.constants,
                "downside_check": s.downside_check,
                "nprime_check": s.nprime_check,
                "extrapolated_points": s.extrapolated_points,
                "clipped": s.clipped,
            })
        })
        .collect()
}

/// Interval of wealths reachable with positions inside the search radii.
fn reachable_envelope(tree: &Tree, sol: &DpSolution<f64>, x0: f64) -> (f64, f64) {
    let mut spread = 0.0f64;
    for depth in 0..tree.horizon() {
        spread += tree
            .at_depth(depth)
            .iter()
            .map(|&n| {
                let k = sol.nodes[&n].constants.k;
                let step = tree.children(n).iter().map(|&c| norm(&tree.increment(c))).fold(0.0, f64::max);
                k * step
            })
            .fold(0.0, f64::max);
    }
    (x0 - spread, x0 + spread)
}

fn write_slices(out: &Path, tree: &Tree, sol: &DpSolution<f64>) -> Result<()> {
    fs::create_dir_all(out)?;
    let mut w = csv::Writer::from_path(out.join("slices.csv"))?;
    let mut header = vec!["node".to_string(), "x".into(), "value".into()];
    header.extend((1..=tree.dim()).map(|i| format!("xi_{i}")));
    w.write_record(&header)?;
    for s in sol.nodes.values() {
        let id = &tree.node(s.node).id;
        for (i, (&x, &v)) in s.slice.grid().iter().zip(s.slice.values()).enumerate() {
            let mut row = vec![id.clone(), x.to_string(), v.to_string()];
            row.extend(s.xi(i).iter().map(|c| c.to_string()));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

struct Solved {
    tree: Tree,
    utility: Utility,
    sol: DpSolution<f64>,
    report: Value,
    certified: bool,
    breach: bool,
}

fn run_solve(cfg: &RunConfig) -> Result<Solved> {
    cfg.validate()?;
    let tree: Tree = load_tree(&cfg.tree)?;
    let utility: Utility = load_utility(&cfg.utility)?;
    let opts = DpOptions { n_variant: cfg.n_variant, ..Default::default() };
    let sol = backward_induction(&tree, &utility, cfg.window, cfg.grid, &opts)?;
    let sim = extract_and_simulate(&tree, &sol, cfg.x0)?;
    let invariants = invariant_checks(&sol);
    let probes = if cfg.probes > 0 { Some(probe_checks(&tree, &sol, cfg.probes, cfg.seed)?) } else { None };
    let poly = polynomial_bound_diagnostics(&tree, &sol);
    let certs: Vec<CertificateRecord> = certify_tree(&tree)?.iter().map(|c| c.record(&tree)).collect();

    let nodes_ok = sol.nodes.values().all(|s| s.downside_check.ok && s.nprime_check.ok);
    let probes_ok = probes.as_ref().is_none_or(|p| p.dominated.violations == 0 && p.bound.violations == 0);
    let certified = sim.certified && invariants.ok && probes_ok && nodes_ok && sim.expected_terminal_utility.is_finite();
    let (lo, hi) = reachable_envelope(&tree, &sol, cfg.x0);
    let report = json!({
        "command": "solve",
        "config": cfg,
        "u0": sim.u0,
        "expected_terminal_utility": sim.expected_terminal_utility,
        "certified": certified,
        "wellposed": sol.wellposed,
        "growth_constant": sol.growth,
        "reachable_envelope": [lo, hi],
        "certificates": certs,
        "nodes": node_rows(&tree, &sol),
        "simulation": sim,
        "invariants": invariants,
        "probes": probes,
        "polynomial_bounds": poly,
    });
    let breach = report["simulation"]["window_breach"].as_bool().unwrap_or(false);
    Ok(Solved { tree, utility, sol, report, certified, breach })
}

fn uncertified(breach: bool) -> Failure {
    let msg = if breach { "wealth left the window on the optimal path" } else { "a consistency check failed; see the report" };
    Failure { error: Error::Unsupported(msg.into()), extra: json!({ "kind": "uncertified" }) }
}

fn solve(args: &SolveArgs) -> CliResult {
    let cfg = args.config(None);
    cfg.validate()?;
    let hash = config_hash(&cfg, &[&cfg.tree, &cfg.utility])?;
    let s = run_solve(&cfg)?;
    write_json(&args.out.output, "solve.json", &envelope(s.report, &hash))?;
    write_slices(&args.out.output, &s.tree, &s.sol)?;
    if s.certified {
        Ok(())
    } else {
        Err(uncertified(s.breach))
    }
}

fn oracle_compare(args: &SolveArgs, bound: f64, resolution: usize) -> CliResult {
    let grid = StrategyGrid::new(bound, resolution)?;
    let cfg = args.config(Some(grid));
    cfg.validate()?;
    let hash = config_hash(&cfg, &[&cfg.tree, &cfg.utility])?;
    let s = run_solve(&cfg)?;
    let oracle = brute_force_value(&s.tree, &s.utility, cfg.x0, &grid)?;
    let dp = s.report["u0"].as_f64().unwrap_or(f64::NAN);
    let diff = dp - oracle.value;
    let report = json!({
        "command": "oracle-compare",
        "config": cfg,
        "dp_value": dp,
        "oracle_value": oracle.value,
        "difference": diff,
        "relative_difference": diff.abs() / oracle.value.abs().max(f64::MIN_POSITIVE),
        "oracle_strategy": oracle.strategy,
        "oracle_evaluations": oracle.evaluations.to_string(),
        "solve": s.report,
    });
    write_json(&args.out.output, "oracle_compare.json", &envelope(report, &hash))?;
    if s.certified {
        Ok(())
    } else {
        Err(uncertified(s.breach))
    }
}

fn error_object(f: &Failure) -> Value {
    let mut obj = json!({
        "kind": f.error.kind(),
        "message": f.error.to_string(),
        "exit_code": f.error.exit_code(),
    });
    if let (Value::Object(o), Value::Object(extra)) = (&mut obj, &f.extra) {
        for (k, v) in extra {
            o.insert(k.clone(), v.clone());
        }
    }
    json!({ "error": obj })
}

fn exit_code(f: &Failure) -> i32 {
    match f.extra.get("kind").and_then(Value::as_str) {
        Some("uncertified") => 2,
        _ => f.error.exit_code(),
    }
}

fn dispatch(cli: Cli) -> CliResult {
    match cli.command {
        Command::CheckNa { tree, out } => check_na(&tree, &out.output),
        Command::CertifyUtility { utility, out } => certify_utility(&utility, &out.output),
        Command::IllposedDemo { utility, n_max, out } => illposed_demo(&utility, n_max, &out.output),
        Command::Solve(args) => solve(&args),
        Command::OracleCompare { solve, oracle_bound, oracle_resolution } => {
            oracle_compare(&solve, oracle_bound, oracle_resolution)
        }
    }
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .map_err(|_| Error::Config(format!("{THREADS_ENV}={v:?} is not a thread count")))?;
        b = b.num_threads(n);
    }
    b.build().map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if !e.use_stderr() {
                // --help and --version.
                let _ = e.print();
                return 0;
            }
            let f = Failure::from(Error::Config(e.to_string().trim_end().to_string()));
            eprintln!("{}", error_object(&f));
            return 1;
        }
    };
    let result = thread_pool().map_err(Failure::from).and_then(|pool| pool.install(|| dispatch(cli)));
    match result {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("{}", error_object(&f));
            exit_code(&f)
        }
    }
}
