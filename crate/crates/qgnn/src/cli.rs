//! Command-line front end.
//!
//! Exit codes: 0 valid / sat / success, 1 invalid / unsat / disagreement,
//! 2 usage or input error, 3 unknown.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::arith::{Activation, ArithmeticSpec};
use crate::compile::compile_lvp;
use crate::formula::Formula;
use crate::fuzz::{run_fuzz, AggFlavor, FuzzConfig};
use crate::gnn::{gnn_eval, GnnDoc, GnnModel, LvpDoc, LvpInstance};
use crate::graph::{schema_err, GraphDoc, PointedGraph};
use crate::semantics::{brute_force_sat, OracleLimits, Verdict};
use crate::tableau::{solve_with_stats, verify_lvp, DeltaMode, Limits, LvpVerdict};

pub const EXIT_OK: i32 = 0;
pub const EXIT_NEGATIVE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_UNKNOWN: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "qgnn", version, about = "Verify quantized GNNs and decide their logic")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum, PartialEq, Eq)]
enum Output {
    Text,
    Json,
}

#[derive(Args, Debug)]
struct Common {
    /// Arithmetic, `satint:<a>` or `fixed:<bits>:<decimals>`.
    #[arg(long)]
    arith: Option<String>,
    /// Out-degree bound, `unary:<k>`, `binary:<k>` or `inf`.
    #[arg(long)]
    delta: Option<String>,
    /// Wall-clock limit in seconds (default: $QGNN_TIME_LIMIT).
    #[arg(long)]
    time: Option<f64>,
    /// Branch states explored before giving up.
    #[arg(long)]
    nodes: Option<u64>,
    /// Out-degree ceiling for binary and unbounded modes.
    #[arg(long)]
    arity_cap: Option<u64>,
    #[arg(long, value_enum, default_value = "text")]
    output: Output,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Decide an LVP instance; a counterexample is printed when it is invalid.
    Verify {
        lvp: PathBuf,
        #[command(flatten)]
        common: Common,
        /// Write the counterexample as DOT.
        #[arg(long)]
        emit_dot: Option<PathBuf>,
    },
    /// Decide satisfiability of a formula (file path or inline text).
    Sat {
        formula: String,
        #[command(flatten)]
        common: Common,
        /// Activation `alpha` stands for.
        #[arg(long, default_value = "relu")]
        alpha: String,
        #[arg(long)]
        emit_dot: Option<PathBuf>,
    },
    /// Print the formula an LVP instance compiles to.
    Compile {
        lvp: PathBuf,
        #[arg(long)]
        arith: Option<String>,
    },
    /// Run a GNN on a pointed graph.
    Eval {
        gnn: PathBuf,
        graph: PathBuf,
        #[arg(long)]
        arith: Option<String>,
        #[arg(long, value_enum, default_value = "text")]
        output: Output,
    },
    /// Exhaustive reference procedures.
    Oracle {
        #[command(subcommand)]
        command: OracleCommand,
    },
    /// Compare tableau and oracle verdicts on seeded random formulas.
    Fuzz {
        #[arg(long, default_value_t = 500)]
        cases: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma-separated satint ranges to draw from.
        #[arg(long, default_value = "2,3", value_delimiter = ',')]
        ranges: Vec<i64>,
        #[arg(long, default_value_t = 2)]
        max_delta: u64,
        #[arg(long, default_value_t = 2)]
        max_agg_depth: usize,
        /// Comma-separated aggregation kinds: sum, mean, max, weighted.
        #[arg(long, default_value = "sum", value_delimiter = ',')]
        aggs: Vec<String>,
        /// Skip the unary/binary mode comparison.
        #[arg(long)]
        no_binary: bool,
    },
}

#[derive(Subcommand, Debug)]
enum OracleCommand {
    /// Brute-force satisfiability over trees of bounded depth and arity.
    Sat {
        formula: String,
        #[arg(long)]
        arith: Option<String>,
        /// Arity bound, as `unary:<k>` or a bare number.
        #[arg(long)]
        delta: Option<String>,
        #[arg(long, default_value = "relu")]
        alpha: String,
        #[arg(long, default_value_t = OracleLimits::default().max_evaluations)]
        max_evals: u64,
        #[arg(long, value_enum, default_value = "text")]
        output: Output,
    },
}

struct Failure(String);

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(e.to_string())
    }
}

type Outcome = Result<i32, Failure>;

/// Parses `argv` and runs the command, writing results to `out`.
pub fn run<I, T>(argv: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(code) => code,
        Err(Failure(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> Outcome {
    match cmd {
        Command::Verify { lvp, common, emit_dot } => verify(&lvp, &common, emit_dot.as_deref(), out),
        Command::Sat { formula, common, alpha, emit_dot } => sat(&formula, &common, &alpha, emit_dot.as_deref(), out),
        Command::Compile { lvp, arith } => {
            let inst = load_lvp(&lvp, arith.as_deref(), None)?;
            let c = compile_lvp(&inst)?;
            writeln!(out, "{}", c.formula.print())?;
            Ok(EXIT_OK)
        }
        Command::Eval { gnn, graph, arith, output } => eval(&gnn, &graph, arith.as_deref(), output, out),
        Command::Oracle { command: OracleCommand::Sat { formula, arith, delta, alpha, max_evals, output } } => {
            oracle(&formula, arith.as_deref(), delta.as_deref(), &alpha, max_evals, output, out)
        }
        Command::Fuzz { cases, seed, ranges, max_delta, max_agg_depth, aggs, no_binary } => {
            let flavors = aggs
                .iter()
                .map(|a| match a.as_str() {
                    "sum" => Ok(AggFlavor::Sum),
                    "mean" => Ok(AggFlavor::Mean),
                    "max" => Ok(AggFlavor::Max),
                    "weighted" => Ok(AggFlavor::Weighted),
                    other => Err(Failure(format!("unknown aggregation `{other}`"))),
                })
                .collect::<Result<Vec<_>, _>>()?;
            if ranges.iter().any(|&a| a < 1) {
                return Err(Failure("ranges must be positive".into()));
            }
            let cfg = FuzzConfig { cases, seed, ranges, max_delta, max_agg_depth, flavors, binary: !no_binary };
            let started = Instant::now();
            let report = run_fuzz(&cfg);
            for d in &report.disagreements {
                writeln!(
                    out,
                    "case {} [{} δ={}]: tableau {} / oracle {} / binary {}\n  {}",
                    d.case, d.spec, d.delta, d.tableau, d.oracle, d.binary, d.formula
                )?;
            }
            writeln!(
                out,
                "{} cases, {} sat, {} unsat, {} disagreements in {:.1}s",
                report.cases,
                report.sat,
                report.unsat,
                report.disagreements.len(),
                started.elapsed().as_secs_f64()
            )?;
            Ok(if report.disagreements.is_empty() { EXIT_OK } else { EXIT_NEGATIVE })
        }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure(format!("{}: {e}", path.display())))
}

fn parse_spec(s: &str) -> Result<ArithmeticSpec, Failure> {
    s.parse::<ArithmeticSpec>().map_err(|e| Failure(format!("--arith: {e}")))
}

fn parse_delta(s: &str) -> Result<DeltaMode, Failure> {
    s.parse::<DeltaMode>().map_err(|e| Failure(format!("--delta: {e}")))
}

fn load_lvp(path: &Path, arith: Option<&str>, delta: Option<&str>) -> Result<LvpInstance, Failure> {
    let text = read(path)?;
    let mut doc: LvpDoc =
        serde_json::from_str(&text).map_err(|e| Failure(format!("{}: {}", path.display(), schema_err("$", e.to_string()))))?;
    if let Some(a) = arith {
        doc.gnn.arith = parse_spec(a)?.to_string();
    }
    let mut inst = LvpInstance::from_doc(&doc).map_err(|e| Failure(format!("{}: {e}", path.display())))?;
    if let Some(d) = delta {
        inst.delta = parse_delta(d)?;
    }
    Ok(inst)
}

fn limits(common: &Common) -> Result<Limits, Failure> {
    let mut l = Limits::default();
    let secs = match common.time {
        Some(t) => Some(t),
        None => match std::env::var("QGNN_TIME_LIMIT") {
            Ok(v) => Some(v.parse::<f64>().map_err(|_| Failure(format!("QGNN_TIME_LIMIT: bad number `{v}`")))?),
            Err(_) => None,
        },
    };
    if let Some(s) = secs {
        if !(s.is_finite() && s > 0.0) {
            return Err(Failure("time limit must be positive".into()));
        }
        l.time = Some(Duration::from_secs_f64(s));
    }
    if let Some(n) = common.nodes {
        l.max_nodes = n;
    }
    if let Some(c) = common.arity_cap {
        l.arity_cap = c;
    }
    Ok(l)
}

fn emit_dot(path: Option<&Path>, g: &PointedGraph) -> Result<(), Failure> {
    if let Some(p) = path {
        std::fs::write(p, g.to_dot()).map_err(|e| Failure(format!("{}: {e}", p.display())))?;
    }
    Ok(())
}

fn verify(path: &Path, common: &Common, dot: Option<&Path>, out: &mut dyn Write) -> Outcome {
    let inst = load_lvp(path, common.arith.as_deref(), common.delta.as_deref())?;
    let limits = limits(common)?;
    let verdict = verify_lvp(&inst, &limits)?;
    let json = common.output == Output::Json;
    match verdict {
        LvpVerdict::Valid => {
            if json {
                writeln!(out, "{}", json!({"verdict": "valid"}))?;
            } else {
                writeln!(out, "valid")?;
            }
            Ok(EXIT_OK)
        }
        LvpVerdict::Invalid { counterexample, outputs } => {
            emit_dot(dot, &counterexample)?;
            let outs: Vec<String> = outputs.iter().map(|v| v.to_string()).collect();
            if json {
                let doc = json!({
                    "verdict": "invalid",
                    "counterexample": counterexample.to_doc(),
                    "outputs": outs,
                });
                writeln!(out, "{}", serde_json::to_string_pretty(&doc)?)?;
            } else {
                writeln!(out, "invalid")?;
                writeln!(out, "outputs: ({})", outs.join(", "))?;
                writeln!(out, "counterexample:\n{}", counterexample.save_json())?;
            }
            Ok(EXIT_NEGATIVE)
        }
        LvpVerdict::Unknown(r) => {
            if json {
                writeln!(out, "{}", json!({"verdict": "unknown", "reason": r.to_string()}))?;
            } else {
                writeln!(out, "unknown ({r})")?;
            }
            Ok(EXIT_UNKNOWN)
        }
    }
}

fn load_formula(arg: &str, spec: ArithmeticSpec, alpha: &str) -> Result<Formula, Failure> {
    let alpha: Activation = alpha.parse().map_err(|e| Failure(format!("--alpha: {e}")))?;
    let path = Path::new(arg);
    let (text, origin) = if path.is_file() { (read(path)?, path.display().to_string()) } else { (arg.to_string(), "<formula>".into()) };
    Formula::parse_with(&text, spec, alpha).map_err(|e| Failure(format!("{origin}: {e}")))
}

fn report_verdict(v: &Verdict, output: Output, dot: Option<&Path>, out: &mut dyn Write) -> Outcome {
    let code = match v {
        Verdict::Sat(_) => EXIT_OK,
        Verdict::Unsat => EXIT_NEGATIVE,
        Verdict::Unknown(_) => EXIT_UNKNOWN,
    };
    if let Verdict::Sat(m) = v {
        emit_dot(dot, m)?;
    }
    match (output, v) {
        (Output::Json, Verdict::Sat(m)) => {
            writeln!(out, "{}", serde_json::to_string_pretty(&json!({"verdict": "sat", "model": m.to_doc()}))?)?
        }
        (Output::Json, Verdict::Unknown(r)) => {
            writeln!(out, "{}", json!({"verdict": "unknown", "reason": r.to_string()}))?
        }
        (Output::Json, Verdict::Unsat) => writeln!(out, "{}", json!({"verdict": "unsat"}))?,
        (Output::Text, Verdict::Sat(m)) => writeln!(out, "sat\n{}", m.save_json())?,
        (Output::Text, other) => writeln!(out, "{}", other.label())?,
    }
    Ok(code)
}

fn require<'a>(v: Option<&'a str>, flag: &str) -> Result<&'a str, Failure> {
    v.ok_or_else(|| Failure(format!("{flag} is required")))
}

fn sat(formula: &str, common: &Common, alpha: &str, dot: Option<&Path>, out: &mut dyn Write) -> Outcome {
    let spec = parse_spec(require(common.arith.as_deref(), "--arith")?)?;
    let delta = parse_delta(require(common.delta.as_deref(), "--delta")?)?;
    let f = load_formula(formula, spec, alpha)?;
    let (v, _) = solve_with_stats(&f, delta, &limits(common)?);
    report_verdict(&v, common.output, dot, out)
}

fn oracle(
    formula: &str,
    arith: Option<&str>,
    delta: Option<&str>,
    alpha: &str,
    max_evals: u64,
    output: Output,
    out: &mut dyn Write,
) -> Outcome {
    let spec = parse_spec(require(arith, "--arith")?)?;
    let d = require(delta, "--delta")?;
    let bound = match d.parse::<u64>() {
        Ok(k) => k,
        Err(_) => match parse_delta(d)? {
            DeltaMode::Unary(k) | DeltaMode::Binary(k) => k,
            DeltaMode::Infinite => return Err(Failure("the oracle needs a finite arity bound".into())),
        },
    };
    let f = load_formula(formula, spec, alpha)?;
    let v = brute_force_sat(&f, bound as usize, None, OracleLimits { max_evaluations: max_evals });
    report_verdict(&v, output, None, out)
}

fn eval(gnn: &Path, graph: &Path, arith: Option<&str>, output: Output, out: &mut dyn Write) -> Outcome {
    let mut doc: GnnDoc = serde_json::from_str(&read(gnn)?)
        .map_err(|e| Failure(format!("{}: {}", gnn.display(), schema_err("$", e.to_string()))))?;
    if let Some(a) = arith {
        doc.arith = parse_spec(a)?.to_string();
    }
    let model = GnnModel::from_doc(&doc).map_err(|e| Failure(format!("{}: {e}", gnn.display())))?;
    let gdoc: GraphDoc = serde_json::from_str(&read(graph)?)
        .map_err(|e| Failure(format!("{}: {}", graph.display(), schema_err("$", e.to_string()))))?;
    let p = PointedGraph::from_doc(&gdoc, model.spec).map_err(|e| Failure(format!("{}: {e}", graph.display())))?;
    let ys = gnn_eval(&model, &p)?;
    let ys: Vec<String> = ys.iter().map(|v| v.to_string()).collect();
    match output {
        Output::Json => writeln!(out, "{}", json!({"outputs": ys}))?,
        Output::Text => writeln!(out, "({})", ys.join(", "))?,
    }
    Ok(EXIT_OK)
}
