//! Batch front end: load a tree, an operator and a payoff, run one command
//! and render its report.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::axioms::{self, AxiomReport, BrokenOperator};
use crate::error::{Error, Result};
use crate::evaluation::{Capabilities, Evaluation, OperatorSpec, TwoIndexOperator};
use crate::multistop::{
    check_supermartingale, solve_cascade_additive, solve_d, verify_necessary, MultiSolution, NecessaryCertificate,
    SolveOptions, SupermartingaleReport,
};
use crate::oracle::{brute_force_value, check_directed_upwards, DirectedReport, EnumerationBudget, PairSampling};
use crate::payoff::{EtaSpec, PayoffFamily, PayoffSpec, Strike};
use crate::report::{families_to_csv, to_json, NodeMap};
use crate::snell::snell_envelope;
use crate::space::{build_tree, BinomialSpec, ScenarioTree, StoppingTime, TreeSpec};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_VIOLATION: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

/// Identity `V = d v̄` for additive rewards under the linear evaluation.
pub const IDENTITY_TOL: f64 = 1e-12;

#[derive(Debug, Parser)]
#[command(name = "multistop", version, about = "Exact non-linear multiple stopping on scenario trees")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Solve,
    Oracle,
    Verify,
    Axioms,
    Swing,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Value, auxiliary families and an optimal tuple.
    Solve(RunArgs),
    /// Brute-force maximum over all tuples of stopping times.
    Oracle(RunArgs),
    /// Solver against oracle, plus necessary-condition, supermartingale
    /// and pasting certificates.
    Verify(RunArgs),
    /// Randomized law and capability checks for an operator.
    Axioms(RunArgs),
    /// Swing contract preset on an equidistant binomial grid.
    Swing(RunArgs),
}

impl Command {
    pub fn into_config(self) -> RunConfig {
        let (command, args) = match self {
            Command::Solve(a) => (CommandKind::Solve, a),
            Command::Oracle(a) => (CommandKind::Oracle, a),
            Command::Verify(a) => (CommandKind::Verify, a),
            Command::Axioms(a) => (CommandKind::Axioms, a),
            Command::Swing(a) => (CommandKind::Swing, a),
        };
        RunConfig { command, args }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Tree specification file (binomial or explicit nodes).
    #[arg(long)]
    pub tree: Option<PathBuf>,
    /// Operator: JSON, a file, or `linear`, `entropic:G`, `g:discount:R`,
    /// `g:zabs:K`, `robust`, `broken`.
    #[arg(long, default_value = "linear")]
    pub op: String,
    /// Payoff: JSON, a file, or `additive`, `multiplicative`,
    /// `additive:call:K`, `constant:C`.
    #[arg(long, default_value = "additive")]
    pub payoff: String,
    /// Number of exercise rights.
    #[arg(long, default_value_t = 2)]
    pub d: usize,
    /// Starting time: `root`, `terminal`, `stage:K` or `nodes:ID,ID`.
    #[arg(long, default_value = "root")]
    pub start: String,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long, default_value_t = axioms::DEFAULT_SEED)]
    pub seed: u64,
    /// Random samples for the sampled checks.
    #[arg(long, default_value_t = axioms::DEFAULT_SAMPLES)]
    pub samples: usize,
    /// Report file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
}

impl Default for RunArgs {
    fn default() -> Self {
        Self {
            tree: None,
            op: "linear".into(),
            payoff: "additive".into(),
            d: 2,
            start: "root".into(),
            tol: 1e-10,
            seed: axioms::DEFAULT_SEED,
            samples: axioms::DEFAULT_SAMPLES,
            out: None,
            format: Format::Json,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub command: CommandKind,
    pub args: RunArgs,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub code: i32,
    /// Rendered report, empty on configuration errors.
    pub report: String,
    pub message: Option<String>,
}

/// Binomial tree of the swing preset: four quarterly exercise dates.
pub fn swing_tree_spec() -> BinomialSpec {
    BinomialSpec { n: 4, p: 0.5, root: 100.0, up: 1.1, down: 0.9, dt: Some(0.25) }
}

pub const SWING_STRIKE: f64 = 100.0;

/// The tree used when `--tree` is omitted by `axioms`.
fn default_tree_spec() -> BinomialSpec {
    BinomialSpec { n: 2, p: 0.5, root: 1.0, up: 2.0, down: 0.5, dt: None }
}

fn read_arg(text: &str) -> Result<String> {
    let t = text.trim();
    if !t.starts_with('{') && Path::new(t).is_file() {
        return std::fs::read_to_string(t).map_err(|e| Error::Config(format!("cannot read `{t}`: {e}")));
    }
    Ok(t.to_string())
}

pub fn load_tree(path: &Path) -> Result<ScenarioTree> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read `{}`: {e}", path.display())))?;
    let spec: TreeSpec =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("tree `{}`: {e}", path.display())))?;
    build_tree(&spec)
}

pub fn parse_start(tree: &ScenarioTree, text: &str) -> Result<StoppingTime> {
    let t = text.trim();
    match t.split_once(':') {
        None if t == "root" => Ok(StoppingTime::immediate(tree)),
        None if t == "terminal" => Ok(StoppingTime::terminal(tree)),
        Some(("stage", k)) => {
            let k: usize = k.parse().map_err(|_| Error::Config(format!("bad stage `{k}`")))?;
            if k > tree.stages() {
                return Err(Error::Config(format!("stage {k} beyond the last stage {}", tree.stages())));
            }
            Ok(StoppingTime::at_stage(tree, k))
        }
        Some(("nodes", ids)) => {
            let nodes = ids.split(',').map(|id| tree.index_of(id.trim())).collect::<Result<Vec<_>>>()?;
            Ok(StoppingTime::from_stop_nodes(tree, &nodes))
        }
        _ => Err(Error::Config(format!("unknown start `{t}`"))),
    }
}

#[derive(Debug, Serialize)]
struct TreeSummary {
    nodes: usize,
    stages: usize,
    scenarios: usize,
    dates: Vec<f64>,
}

impl TreeSummary {
    fn of(tree: &ScenarioTree) -> Self {
        Self {
            nodes: tree.len(),
            stages: tree.stages(),
            scenarios: tree.leaves().len(),
            dates: tree.grid().dates().to_vec(),
        }
    }
}

#[derive(Debug, Serialize)]
struct Families {
    value: NodeMap<f64>,
    phi: NodeMap<f64>,
    /// Value with each slot exercised at the node itself.
    auxiliary: Vec<NodeMap<f64>>,
}

#[derive(Debug, Serialize)]
struct SolveReport {
    command: &'static str,
    tree: TreeSummary,
    operator: String,
    capabilities: Capabilities,
    payoff: String,
    d: usize,
    start: Vec<String>,
    value: NodeMap<f64>,
    families: Families,
    theta_star: Vec<String>,
    partition: Vec<Vec<String>>,
    /// Stop decision per node for each right.
    policies: Vec<NodeMap<bool>>,
    plug_in_gap: f64,
}

impl SolveReport {
    fn new(tree: &ScenarioTree, ev: &Evaluation, payoff: &str, s: &StoppingTime, sol: &MultiSolution) -> Self {
        let frontier = s.frontier(tree);
        Self {
            command: "solve",
            tree: TreeSummary::of(tree),
            operator: ev.label().to_string(),
            capabilities: ev.capabilities(),
            payoff: payoff.to_string(),
            d: sol.d,
            start: s.describe(tree),
            value: NodeMap::at(tree, &frontier, sol.value.values()),
            families: Families {
                value: NodeMap::family(tree, sol.value.values()),
                phi: NodeMap::family(tree, sol.phi.values()),
                auxiliary: sol.u_aux.iter().map(|f| NodeMap::family(tree, f.values())).collect(),
            },
            theta_star: sol.theta_star.describe(tree),
            partition: sol.partition.iter().map(|p| p.iter().map(|&m| tree.id(m).to_string()).collect()).collect(),
            policies: sol.tuple.iter().map(|t| NodeMap::policy(tree, t)).collect(),
            plug_in_gap: sol.plug_in_gap,
        }
    }
}

fn solution_csv(tree: &ScenarioTree, sol: &MultiSolution) -> Result<String> {
    let names: Vec<String> = (1..=sol.d).map(|i| format!("aux{i}")).collect();
    let mut cols: Vec<(&str, &[f64])> = vec![("value", sol.value.values()), ("phi", sol.phi.values())];
    cols.extend(names.iter().zip(&sol.u_aux).map(|(n, f)| (n.as_str(), f.values())));
    families_to_csv(tree, &cols)
}

/// Cap on argmax tuples listed in oracle reports.
const ARGMAX_LISTED: usize = 64;

#[derive(Debug, Serialize)]
struct OracleReport {
    command: &'static str,
    tree: TreeSummary,
    operator: String,
    payoff: String,
    d: usize,
    start: Vec<String>,
    value: NodeMap<f64>,
    count: u128,
    argmax_total: usize,
    /// Each tuple as the stop nodes of its components.
    argmax: Vec<Vec<Vec<String>>>,
}

#[derive(Debug, Serialize)]
struct OracleCheck {
    value: NodeMap<f64>,
    count: u128,
    max_gap: f64,
    passed: bool,
}

#[derive(Debug, Serialize)]
struct VerifyReport {
    command: &'static str,
    tree: TreeSummary,
    operator: String,
    capabilities: Capabilities,
    payoff: String,
    d: usize,
    start: Vec<String>,
    tolerance: f64,
    solver_value: NodeMap<f64>,
    plug_in_gap: f64,
    oracle: OracleCheck,
    necessary: NecessaryCertificate,
    supermartingale: SupermartingaleReport,
    directed_upwards: DirectedReport,
    passed: bool,
}

#[derive(Debug, Serialize)]
struct AxiomsReport {
    command: &'static str,
    tree: TreeSummary,
    samples: usize,
    axioms: AxiomReport,
}

#[derive(Debug, Serialize)]
struct SwingReport {
    command: &'static str,
    tree: TreeSummary,
    operator: String,
    strike: f64,
    d: usize,
    value: f64,
    oracle_value: f64,
    oracle_gap: f64,
    single_right_value: f64,
    /// `V - d v̄` at the root; only meaningful for the linear evaluation.
    identity_gap: f64,
    cascade_value: Option<f64>,
    theta_star: Vec<String>,
    policies: Vec<NodeMap<bool>>,
    passed: bool,
}

struct Loaded {
    tree: ScenarioTree,
    ev: Evaluation,
    psi: PayoffFamily,
    payoff_label: String,
    start: StoppingTime,
}

fn validate(args: &RunArgs) -> Result<()> {
    if args.d == 0 {
        return Err(Error::Config("--d must be at least 1".into()));
    }
    if !(args.tol > 0.0) {
        return Err(Error::Config("--tol must be positive".into()));
    }
    if let Some(t) = &args.tree {
        if !t.is_file() {
            return Err(Error::Config(format!("tree file `{}` does not exist", t.display())));
        }
    }
    Ok(())
}

fn tree_or(args: &RunArgs, fallback: BinomialSpec) -> Result<ScenarioTree> {
    match &args.tree {
        Some(p) => load_tree(p),
        None => build_tree(&TreeSpec::Binomial { binomial: fallback }),
    }
}

fn load(args: &RunArgs, tree: ScenarioTree) -> Result<Loaded> {
    let ev = OperatorSpec::parse(&read_arg(&args.op)?)?.build()?;
    let payoff_label = read_arg(&args.payoff)?;
    let psi = PayoffSpec::parse(&payoff_label)?.build(&tree, args.d)?;
    let start = parse_start(&tree, &args.start)?;
    Ok(Loaded { tree, ev, psi, payoff_label, start })
}

fn require_tree(args: &RunArgs) -> Result<ScenarioTree> {
    match &args.tree {
        Some(p) => load_tree(p),
        None => Err(Error::Config("--tree is required".into())),
    }
}

fn opts(args: &RunArgs) -> SolveOptions {
    SolveOptions { plug_tol: args.tol, ..SolveOptions::default() }
}

fn run_solve(args: &RunArgs) -> Result<(i32, String)> {
    let l = load(args, require_tree(args)?)?;
    let sol = solve_d(&l.ev, &l.tree, &l.psi, &l.start, &opts(args))?;
    let text = match args.format {
        Format::Json => to_json(&SolveReport::new(&l.tree, &l.ev, &l.payoff_label, &l.start, &sol)),
        Format::Csv => solution_csv(&l.tree, &sol)?,
    };
    Ok((EXIT_PASS, text))
}

fn run_oracle(args: &RunArgs) -> Result<(i32, String)> {
    let l = load(args, require_tree(args)?)?;
    let bf = brute_force_value(&l.ev, &l.tree, &l.psi, &l.start, &EnumerationBudget::from_env()?)?;
    let text = match args.format {
        Format::Json => to_json(&OracleReport {
            command: "oracle",
            tree: TreeSummary::of(&l.tree),
            operator: l.ev.label().to_string(),
            payoff: l.payoff_label.clone(),
            d: l.psi.d(),
            start: l.start.describe(&l.tree),
            value: NodeMap(bf.frontier.iter().zip(&bf.value).map(|(&m, &v)| (l.tree.id(m).to_string(), v)).collect()),
            count: bf.count,
            argmax_total: bf.argmax.len(),
            argmax: bf
                .argmax
                .iter()
                .take(ARGMAX_LISTED)
                .map(|t| bf.tuple(t).iter().map(|x| x.describe(&l.tree)).collect())
                .collect(),
        }),
        Format::Csv => {
            let mut v = vec![f64::NAN; l.tree.len()];
            for (&m, &x) in bf.frontier.iter().zip(&bf.value) {
                v[m] = x;
            }
            families_to_csv(&l.tree, &[("value", &v)])?
        }
    };
    Ok((EXIT_PASS, text))
}

fn run_verify(args: &RunArgs) -> Result<(i32, String)> {
    if args.format != Format::Json {
        return Err(Error::Config("verify reports are JSON only".into()));
    }
    let l = load(args, require_tree(args)?)?;
    let budget = EnumerationBudget::from_env()?;
    let sol = solve_d(&l.ev, &l.tree, &l.psi, &l.start, &opts(args))?;
    let bf = brute_force_value(&l.ev, &l.tree, &l.psi, &l.start, &budget)?;
    let max_gap = bf.frontier.iter().zip(&bf.value).map(|(&m, &v)| (v - sol.value.at(m)).abs()).fold(0.0, f64::max);
    let oracle = OracleCheck {
        value: NodeMap(bf.frontier.iter().zip(&bf.value).map(|(&m, &v)| (l.tree.id(m).to_string(), v)).collect()),
        count: bf.count,
        max_gap,
        passed: max_gap <= args.tol,
    };
    let necessary = verify_necessary(&l.ev, &l.tree, &l.psi, &sol.tuple, &l.start, args.tol)?;
    let supermartingale = check_supermartingale(&l.ev, &l.tree, &sol.value, &budget, args.samples, args.seed)?;
    let directed = check_directed_upwards(
        &l.ev,
        &l.tree,
        &l.psi,
        &l.start,
        PairSampling::Random { samples: args.samples, seed: args.seed },
        &budget,
    )?;
    let passed = oracle.passed && necessary.passed && supermartingale.passed && directed.passed;
    let report = VerifyReport {
        command: "verify",
        tree: TreeSummary::of(&l.tree),
        operator: l.ev.label().to_string(),
        capabilities: l.ev.capabilities(),
        payoff: l.payoff_label,
        d: l.psi.d(),
        start: l.start.describe(&l.tree),
        tolerance: args.tol,
        solver_value: NodeMap::at(&l.tree, &l.start.frontier(&l.tree), sol.value.values()),
        plug_in_gap: sol.plug_in_gap,
        oracle,
        necessary,
        supermartingale,
        directed_upwards: directed,
        passed,
    };
    Ok((if passed { EXIT_PASS } else { EXIT_VIOLATION }, to_json(&report)))
}

fn run_axioms(args: &RunArgs) -> Result<(i32, String)> {
    if args.format != Format::Json {
        return Err(Error::Config("axiom reports are JSON only".into()));
    }
    if args.samples == 0 {
        return Err(Error::Config("--samples must be at least 1".into()));
    }
    let tree = tree_or(args, default_tree_spec())?;
    let spec = OperatorSpec::parse(&read_arg(&args.op)?)?;
    let broken;
    let built;
    let op: &dyn TwoIndexOperator = if spec == OperatorSpec::Broken {
        broken = BrokenOperator::new();
        &broken
    } else {
        built = spec.build()?;
        &built
    };
    let payoff = PayoffSpec::parse(&read_arg(&args.payoff)?)?;
    let tuple = payoff.build(&tree, args.d)?;
    let pair = if tuple.d() == 2 { tuple.clone() } else { axioms::default_pair_payoff(&tree) };
    let report = axioms::check_all(op, &tree, &pair, &tuple, args.samples, args.seed)?;
    let code = if report.passed { EXIT_PASS } else { EXIT_VIOLATION };
    Ok((
        code,
        to_json(&AxiomsReport {
            command: "axioms",
            tree: TreeSummary::of(&tree),
            samples: args.samples,
            axioms: report,
        }),
    ))
}

fn run_swing(args: &RunArgs) -> Result<(i32, String)> {
    let tree = tree_or(args, swing_tree_spec())?;
    let ev = OperatorSpec::parse(&read_arg(&args.op)?)?.build()?;
    let eta = EtaSpec::Call { call: Strike { strike: SWING_STRIKE } }.family(&tree)?;
    let psi = PayoffFamily::additive(eta.clone(), args.d)?;
    let s = StoppingTime::immediate(&tree);
    let sol = solve_d(&ev, &tree, &psi, &s, &opts(args))?;
    let bf = brute_force_value(&ev, &tree, &psi, &s, &EnumerationBudget::from_env()?)?;
    let value = sol.value.at(tree.root());
    let oracle_gap = (bf.value[0] - value).abs();
    let single = snell_envelope(&ev, &tree, &eta)?.u.at(tree.root());
    let identity_gap = value - args.d as f64 * single;
    let cascade_value = solve_cascade_additive(&ev, &tree, &eta, args.d).ok().map(|c| c.value.at(tree.root()));
    let linear = ev.label() == "linear";
    let passed = oracle_gap <= args.tol && (!linear || identity_gap.abs() <= IDENTITY_TOL * (1.0 + value.abs()));
    let text = match args.format {
        Format::Json => to_json(&SwingReport {
            command: "swing",
            tree: TreeSummary::of(&tree),
            operator: ev.label().to_string(),
            strike: SWING_STRIKE,
            d: args.d,
            value,
            oracle_value: bf.value[0],
            oracle_gap,
            single_right_value: single,
            identity_gap,
            cascade_value,
            theta_star: sol.theta_star.describe(&tree),
            policies: sol.tuple.iter().map(|t| NodeMap::policy(&tree, t)).collect(),
            passed,
        }),
        Format::Csv => solution_csv(&tree, &sol)?,
    };
    Ok((if passed { EXIT_PASS } else { EXIT_VIOLATION }, text))
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::PlugIn { .. } => EXIT_VIOLATION,
        _ => EXIT_CONFIG,
    }
}

/// Runs one command. Reports are deterministic given the config and seed.
pub fn run(config: &RunConfig) -> Outcome {
    let args = &config.args;
    let result = validate(args).and_then(|_| match config.command {
        CommandKind::Solve => run_solve(args),
        CommandKind::Oracle => run_oracle(args),
        CommandKind::Verify => run_verify(args),
        CommandKind::Axioms => run_axioms(args),
        CommandKind::Swing => run_swing(args),
    });
    match result {
        Ok((code, report)) => Outcome { code, report, message: None },
        Err(e) => Outcome { code: exit_code(&e), report: String::new(), message: Some(e.to_string()) },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binomial_tree_file(dir: &tempfile::TempDir) -> PathBuf {
        let p = dir.path().join("binomial.json");
        std::fs::write(&p, r#"{"binomial":{"n":2,"p":0.5,"root":1,"up":2,"down":0.5}}"#).unwrap();
        p
    }

    fn config(command: CommandKind, args: RunArgs) -> RunConfig {
        RunConfig { command, args }
    }

    #[test]
    fn solve_reports_binomial_tree_value() {
        let dir = tempfile::tempdir().unwrap();
        let args = RunArgs { tree: Some(binomial_tree_file(&dir)), ..RunArgs::default() };
        let out = run(&config(CommandKind::Solve, args));
        assert_eq!(out.code, 0, "{:?}", out.message);
        let v: serde_json::Value = serde_json::from_str(&out.report).unwrap();
        assert_eq!(v["value"]["root"].as_f64(), Some(3.125));
        assert_eq!(v["policies"].as_array().unwrap().len(), 2);
    }

    #[test]
    fn config_errors_exit_2() {
        let out = run(&config(CommandKind::Solve, RunArgs::default()));
        assert_eq!(out.code, 2);
        let dir = tempfile::tempdir().unwrap();
        let bad_d = RunArgs { tree: Some(binomial_tree_file(&dir)), d: 0, ..RunArgs::default() };
        assert_eq!(run(&config(CommandKind::Solve, bad_d)).code, 2);
        let bad_op = RunArgs { tree: Some(binomial_tree_file(&dir)), op: "nope".into(), ..RunArgs::default() };
        assert_eq!(run(&config(CommandKind::Oracle, bad_op)).code, 2);
        let broken = RunArgs { tree: Some(binomial_tree_file(&dir)), op: "broken".into(), ..RunArgs::default() };
        assert_eq!(run(&config(CommandKind::Solve, broken)).code, 2);
    }

    #[test]
    fn start_specs() {
        let t = build_tree(&TreeSpec::Binomial { binomial: default_tree_spec() }).unwrap();
        assert_eq!(parse_start(&t, "stage:1").unwrap(), StoppingTime::at_stage(&t, 1));
        assert_eq!(parse_start(&t, "nodes:u,d").unwrap(), StoppingTime::at_stage(&t, 1));
        assert!(parse_start(&t, "stage:3").is_err());
        assert!(parse_start(&t, "nodes:zz").is_err());
    }
}
