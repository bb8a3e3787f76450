use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use oasis_core::constructor::{construct_with_workers, ConstructionPlan, VerifyParams};
use oasis_core::estimators::{self as est, EstimatorResult, FindLOptions, IgnitionOptions, SamplingPlan, ThresholdBase};
use oasis_core::graph::{build_hat_graph, build_segment, build_tilde_graph, build_truncated_tree};
use oasis_core::oracle::{self, GeneratorModel, OracleConfig};
use oasis_core::simulator::{run, RunOptions};
use oasis_core::{AugmentationSpec, Configuration, GraphicalField, LazyField, RootedGraph};

mod config;
mod selftest;

const UNITS: &str = "Units: time is measured in mean recovery times (every infected vertex recovers at rate 1); \
lambda is the transmission rate per directed edge.";

#[derive(Parser, Debug)]
#[command(name = "oasis", version, about = "Contact process on finite graphs: builders, simulation, exact oracle, estimators")]
#[command(after_help = UNITS)]
struct Cli {
    /// JSON file with subcommand arguments; inline flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a segment, truncated tree, or augmented (hat/tilde) graph.
    #[command(after_help = UNITS)]
    BuildGraph(BuildGraphArgs),
    /// Run one trajectory on a sampled graphical field.
    #[command(after_help = UNITS)]
    Simulate(SimulateArgs),
    /// Exact hitting, extinction and survival quantities on small graphs.
    #[command(after_help = UNITS)]
    Oracle(OracleArgs),
    /// Monte Carlo estimators.
    #[command(after_help = UNITS)]
    Estimate(EstimateArgs),
    /// Search for the desert length L.
    #[command(after_help = UNITS)]
    FindL(FindLArgs),
    /// Run an iterated construction plan.
    #[command(after_help = UNITS)]
    Construct(ConstructArgs),
    /// Check one augmentation step on shared fields.
    #[command(after_help = UNITS)]
    VerifyLevel(VerifyLevelArgs),
    /// Run the built-in sanity suite.
    Selftest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    Json,
    Csv,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct OutputArgs {
    /// Output file (stdout when absent).
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct GraphArgs {
    /// Graph JSON file.
    #[arg(long, value_name = "FILE")]
    graph: Option<PathBuf>,
    /// Truncated d-ary tree of height h, e.g. `--tree d=2 h=3`.
    #[arg(long, num_args = 2, value_names = ["d=D", "h=H"])]
    tree: Vec<String>,
    /// Segment with ELL edges.
    #[arg(long, value_name = "ELL")]
    segment: Option<usize>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct SamplingArgs {
    /// Master seed; every replica's field is derived from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Fixed number of replicas (default 10000 when no width is given).
    #[arg(long)]
    n: Option<usize>,
    /// Double the sample until the interval is at most this wide.
    #[arg(long)]
    target_ci_width: Option<f64>,
    /// Replica budget for adaptive sampling.
    #[arg(long)]
    max_n: Option<usize>,
    #[arg(long)]
    confidence: Option<f64>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct SpecArgs {
    /// Base graph JSON (default: a single vertex).
    #[arg(long, value_name = "FILE")]
    base: Option<PathBuf>,
    /// Tree branching number.
    #[arg(long)]
    d: Option<u32>,
    /// Tree height.
    #[arg(long)]
    h: Option<u32>,
    /// Tolerance standing in for the reciprocal of the persistence scale.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Length of the truncated tail in the hat graph.
    #[arg(long)]
    ell_max: Option<usize>,
}

#[derive(Args, Debug, Serialize, Deserialize)]
struct BuildGraphArgs {
    #[command(flatten)]
    #[serde(flatten)]
    graph: GraphArgs,
    /// Augment the base (given by --graph, default single vertex) into the hat graph.
    #[arg(long)]
    hat: bool,
    /// Augment the base into the tilde graph with desert length L.
    #[arg(long, value_name = "L")]
    tilde: Option<usize>,
    #[arg(long)]
    d: Option<u32>,
    #[arg(long)]
    h: Option<u32>,
    #[arg(long)]
    ell_max: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug, Serialize, Deserialize)]
struct SimulateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    graph: GraphArgs,
    #[arg(long)]
    lambda: Option<f64>,
    /// Largest arrow label in the field (default: lambda).
    #[arg(long)]
    lambda_max: Option<f64>,
    /// `root`, `all`, `none` or a comma list of vertices.
    #[arg(long)]
    initial: Option<String>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma list of snapshot times.
    #[arg(long, value_delimiter = ',')]
    snapshots: Vec<f64>,
    /// Include every infection and recovery in the output.
    #[arg(long)]
    record_log: bool,
    #[arg(long)]
    stop_on_hit: Option<usize>,
    /// Also write the sampled field as JSON lines.
    #[arg(long, value_name = "FILE")]
    dump_field: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug, Serialize, Deserialize)]
struct OracleArgs {
    #[command(flatten)]
    #[serde(flatten)]
    graph: GraphArgs,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    initial: Option<String>,
    /// Probability that this vertex is ever infected.
    #[arg(long, value_name = "V")]
    hit: Option<usize>,
    /// Expected extinction time.
    #[arg(long)]
    extinction: bool,
    /// Probability of being alive at time T.
    #[arg(long, value_name = "T")]
    survival_at: Option<f64>,
    /// Probability that vertex V is infected by --time.
    #[arg(long, value_name = "V")]
    hit_by: Option<usize>,
    #[arg(long, value_name = "T")]
    time: Option<f64>,
    /// Gauss-Seidel solver for larger graphs.
    #[arg(long)]
    sparse: bool,
    /// Largest vertex count accepted by the dense solver.
    #[arg(long)]
    cap: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum EstimateKind {
    Survival,
    Crossing,
    PLine,
    Extinction,
    Decay,
    Ignition,
    WindowBound,
}

#[derive(Args, Debug, Serialize, Deserialize)]
struct EstimateArgs {
    kind: EstimateKind,
    #[command(flatten)]
    #[serde(flatten)]
    graph: GraphArgs,
    #[command(flatten)]
    #[serde(flatten)]
    spec: SpecArgs,
    #[arg(long)]
    lambda: Option<f64>,
    /// p-line only: second rate for a paired log-ratio over --ells.
    #[arg(long)]
    lambda_high: Option<f64>,
    #[arg(long)]
    initial: Option<String>,
    #[arg(long)]
    horizon: Option<f64>,
    /// Tail position (crossing), segment length (p-line, window-bound).
    #[arg(long)]
    ell: Option<usize>,
    /// p-line paired mode: comma list of lengths.
    #[arg(long, value_delimiter = ',')]
    ells: Vec<usize>,
    #[arg(long)]
    margin: Option<usize>,
    /// decay: comma list of times.
    #[arg(long, value_delimiter = ',')]
    grid: Vec<f64>,
    /// ignition: desert length of the augmented graph.
    #[arg(long)]
    desert_length: Option<usize>,
    /// ignition: conditioning occupation time of the old root.
    #[arg(long)]
    t_cond: Option<f64>,
    /// ignition: `half-m` (default) or `full-m`.
    #[arg(long, value_enum)]
    threshold_base: Option<ThresholdArg>,
    #[arg(long)]
    min_accepted: Option<usize>,
    /// window-bound: length of the source window.
    #[arg(long, value_name = "T")]
    window: Option<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    sampling: SamplingArgs,
    #[command(flatten)]
    #[serde(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum ThresholdArg {
    HalfM,
    FullM,
}

#[derive(Args, Debug, Serialize, Deserialize)]
struct FindLArgs {
    #[command(flatten)]
    #[serde(flatten)]
    spec: SpecArgs,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    margin: Option<usize>,
    /// Report an unresolved cell as inconclusive.
    #[arg(long)]
    strict: bool,
    #[command(flatten)]
    #[serde(flatten)]
    sampling: SamplingArgs,
    #[command(flatten)]
    #[serde(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug, Serialize, Deserialize)]
struct ConstructArgs {
    /// Construction plan JSON.
    #[arg(long, value_name = "FILE")]
    plan: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Where to write the construction log (default: stdout).
    #[arg(long, value_name = "FILE")]
    log: Option<PathBuf>,
    /// Where to write the final graph.
    #[command(flatten)]
    #[serde(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug, Serialize, Deserialize)]
struct VerifyLevelArgs {
    /// Graph before the step (default: a single vertex).
    #[arg(long, value_name = "FILE")]
    base: Option<PathBuf>,
    /// Graph after the step.
    #[arg(long, value_name = "FILE")]
    graph: Option<PathBuf>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    lambda_prime: Option<f64>,
    #[arg(long)]
    d: Option<u32>,
    #[arg(long)]
    h: Option<u32>,
    /// Inferred from the vertex counts when absent.
    #[arg(long)]
    desert_length: Option<usize>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    t_cond: Option<f64>,
    #[arg(long)]
    occupation_threshold: Option<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    sampling: SamplingArgs,
    #[command(flatten)]
    #[serde(flatten)]
    output: OutputArgs,
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Core(oasis_core::Error),
    /// The result was written but is inconclusive.
    Inconclusive(String),
    Internal(String),
}

impl From<oasis_core::Error> for CliError {
    fn from(e: oasis_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use oasis_core::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Inconclusive(_) => 3,
            CliError::Internal(_) => 1,
            CliError::Core(e) if e.is_inconclusive() => 3,
            CliError::Core(E::SingularSystem | E::Io(_)) => 1,
            CliError::Core(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Inconclusive(m) => write!(f, "inconclusive: {m}"),
            CliError::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("oasis: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn dispatch(cli: Cli) -> CliResult {
    let cfg = cli.config.as_deref();
    match cli.command {
        Command::BuildGraph(a) => build_graph(config::merge(&a, cfg)?),
        Command::Simulate(a) => simulate(config::merge(&a, cfg)?),
        Command::Oracle(a) => run_oracle(config::merge(&a, cfg)?),
        Command::Estimate(a) => estimate(config::merge(&a, cfg)?),
        Command::FindL(a) => find_l(config::merge(&a, cfg)?),
        Command::Construct(a) => construct(config::merge(&a, cfg)?),
        Command::VerifyLevel(a) => verify_level(config::merge(&a, cfg)?),
        Command::Selftest => selftest::run(),
    }
}

fn required<T>(value: Option<T>, name: &str) -> CliResult<T> {
    value.ok_or_else(|| CliError::Config(format!("missing required parameter `{name}`")))
}

fn write_output(output: &OutputArgs, text: &str) -> CliResult {
    write_to(output.out.as_deref(), text)
}

fn write_to(path: Option<&Path>, text: &str) -> CliResult {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::Internal(format!("writing {}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn pretty(value: &impl Serialize) -> CliResult<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn json_only(output: &OutputArgs, what: &str) -> CliResult {
    if output.format == Some(Format::Csv) {
        return Err(CliError::Config(format!("{what} output is JSON only")));
    }
    Ok(())
}

fn read_graph(path: &Path) -> CliResult<RootedGraph> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("reading {}: {e}", path.display())))?;
    Ok(RootedGraph::from_json(&text)?)
}

fn parse_tree(values: &[String]) -> CliResult<(u32, u32)> {
    let (mut d, mut h) = (None, None);
    for v in values {
        let (key, num) = v
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("tree parameter `{v}` is not key=value")))?;
        let num: u32 = num.parse().map_err(|_| CliError::Config(format!("tree parameter `{v}` is not an integer")))?;
        match key {
            "d" => d = Some(num),
            "h" => h = Some(num),
            _ => return Err(CliError::Config(format!("unknown tree parameter `{key}`"))),
        }
    }
    Ok((required(d, "tree d")?, required(h, "tree h")?))
}

fn load_graph(args: &GraphArgs) -> CliResult<Option<RootedGraph>> {
    let given = usize::from(args.graph.is_some()) + usize::from(!args.tree.is_empty()) + usize::from(args.segment.is_some());
    if given > 1 {
        return Err(CliError::Config("give only one of --graph, --tree, --segment".into()));
    }
    if let Some(p) = &args.graph {
        return Ok(Some(read_graph(p)?));
    }
    if !args.tree.is_empty() {
        let (d, h) = parse_tree(&args.tree)?;
        return Ok(Some(build_truncated_tree(d, h)?));
    }
    Ok(args.segment.map(build_segment))
}

fn require_graph(args: &GraphArgs) -> CliResult<RootedGraph> {
    load_graph(args)?.ok_or_else(|| CliError::Config("a graph is required (--graph, --tree or --segment)".into()))
}

fn load_base(path: &Option<PathBuf>) -> CliResult<RootedGraph> {
    match path {
        Some(p) => read_graph(p),
        None => Ok(RootedGraph::single_vertex()),
    }
}

fn parse_initial(text: Option<&str>, g: &RootedGraph) -> CliResult<Configuration> {
    let text = text.unwrap_or("root").trim();
    match text {
        "root" => Ok(Configuration::singleton(g.root().ok_or(oasis_core::Error::MissingRoot)?)),
        "all" => Ok(Configuration::all(g.vertex_count())),
        "none" | "" => Ok(Configuration::empty()),
        list => {
            let set = list
                .split(',')
                .map(|s| s.trim().parse::<usize>())
                .collect::<Result<Configuration, _>>()
                .map_err(|_| CliError::Config(format!("initial set `{list}` is not a vertex list")))?;
            if set.max_vertex().is_some_and(|v| v >= g.vertex_count()) {
                return Err(CliError::Config("initial set has a vertex outside the graph".into()));
            }
            Ok(set)
        }
    }
}

fn sampling_plan(args: &SamplingArgs) -> CliResult<SamplingPlan> {
    let seed = required(args.seed, "seed")?;
    let mut plan = match (args.n, args.target_ci_width) {
        (Some(_), Some(_)) => return Err(CliError::Config("give n or target_ci_width, not both".into())),
        (Some(n), None) => SamplingPlan::fixed(n, seed),
        (None, Some(w)) => SamplingPlan::adaptive(w, args.max_n.unwrap_or(100_000), seed),
        (None, None) => SamplingPlan::fixed(10_000, seed),
    };
    if let Some(c) = args.confidence {
        plan.confidence = c;
    }
    plan.workers = args.workers;
    Ok(plan)
}

fn augmentation(spec: &SpecArgs, lambda: f64) -> CliResult<AugmentationSpec> {
    let s = AugmentationSpec {
        d: required(spec.d, "d")?,
        h: required(spec.h, "h")?,
        lambda,
        epsilon: spec.epsilon.unwrap_or(0.05),
        ell_max: required(spec.ell_max, "ell_max")?,
    };
    s.validate()?;
    Ok(s)
}

fn build_graph(a: BuildGraphArgs) -> CliResult {
    json_only(&a.output, "build-graph")?;
    let loaded = load_graph(&a.graph)?;
    let graph = if a.hat || a.tilde.is_some() {
        if a.hat && a.tilde.is_some() {
            return Err(CliError::Config("give only one of --hat, --tilde".into()));
        }
        let base = loaded.unwrap_or_else(RootedGraph::single_vertex);
        let spec = AugmentationSpec {
            d: required(a.d, "d")?,
            h: required(a.h, "h")?,
            lambda: 1.0,
            epsilon: 0.5,
            ell_max: a.ell_max.unwrap_or(1),
        };
        match a.tilde {
            Some(l) => build_tilde_graph(&base, &spec, l)?.0,
            None => build_hat_graph(&base, &AugmentationSpec { ell_max: required(a.ell_max, "ell_max")?, ..spec })?.0,
        }
    } else {
        loaded.ok_or_else(|| CliError::Config("nothing to build".into()))?
    };
    write_output(&a.output, &graph.to_json())
}

fn simulate(a: SimulateArgs) -> CliResult {
    json_only(&a.output, "simulate")?;
    let g = require_graph(&a.graph)?;
    let lambda = required(a.lambda, "lambda")?;
    let horizon = required(a.horizon, "horizon")?;
    let seed = required(a.seed, "seed")?;
    let initial = parse_initial(a.initial.as_deref(), &g)?;
    let lambda_max = a.lambda_max.unwrap_or(lambda);
    let opts = RunOptions {
        snapshots: a.snapshots.clone(),
        record_log: a.record_log,
        stop_on_hit: a.stop_on_hit,
        ..Default::default()
    };
    let tr = if let Some(path) = &a.dump_field {
        let field = GraphicalField::sample(&g, lambda_max, horizon, seed)?;
        let file = std::fs::File::create(path).map_err(|e| CliError::Internal(format!("{}: {e}", path.display())))?;
        field.write_json_lines(std::io::BufWriter::new(file))?;
        run(&field, lambda, &initial, &opts)?
    } else {
        run(&LazyField::new(&g, lambda_max, horizon, seed)?, lambda, &initial, &opts)?
    };
    let mut out = json!({
        "graph_hash": g.content_hash(),
        "seed": seed,
        "horizon": horizon,
        "initial": initial,
    });
    let map = out.as_object_mut().unwrap();
    if let Value::Object(t) = tr.to_json() {
        map.extend(t);
    }
    map.insert("final_infected".into(), json!(tr.final_infected));
    map.insert(
        "snapshots".into(),
        Value::Array(tr.snapshots.iter().map(|(t, c)| json!({"time": t, "infected": c})).collect()),
    );
    if let Some(log) = &tr.log {
        map.insert(
            "log".into(),
            Value::Array(log.iter().map(|(t, v, inf)| json!({"time": t, "vertex": v, "infected": inf})).collect()),
        );
    }
    write_output(&a.output, &pretty(&out)?)
}

fn run_oracle(a: OracleArgs) -> CliResult {
    json_only(&a.output, "oracle")?;
    let g = require_graph(&a.graph)?;
    let lambda = required(a.lambda, "lambda")?;
    let initial = parse_initial(a.initial.as_deref(), &g)?;
    let mut cfg = OracleConfig::default();
    cfg.sparse = a.sparse;
    if let Some(c) = a.cap {
        cfg.cap = c;
        cfg.sparse_cap = cfg.sparse_cap.max(c);
    }
    let model = GeneratorModel::with_config(&g, lambda, cfg)?;
    let asked = usize::from(a.hit.is_some()) + usize::from(a.extinction) + usize::from(a.survival_at.is_some()) + usize::from(a.hit_by.is_some());
    if asked != 1 {
        return Err(CliError::Config("give exactly one of --hit, --extinction, --survival-at, --hit-by".into()));
    }
    let value = if let Some(v) = a.hit {
        oracle::exact_hit_probability(&model, &initial, v)?
    } else if a.extinction {
        oracle::exact_expected_extinction(&model, &initial)?
    } else if let Some(t) = a.survival_at {
        oracle::exact_survival_at(&model, &initial, t)?
    } else {
        let v = a.hit_by.unwrap();
        oracle::exact_hit_by(&model, &initial, v, required(a.time, "time")?)?
    };
    write_output(&a.output, &pretty(&value)?)
}

fn emit_results(output: &OutputArgs, json_value: &impl Serialize, rows: &[EstimatorResult]) -> CliResult {
    match output.format.unwrap_or(Format::Json) {
        Format::Json => write_output(output, &pretty(json_value)?),
        Format::Csv => {
            let mut s = String::from(EstimatorResult::CSV_HEADER);
            s.push('\n');
            for r in rows {
                s.push_str(&r.csv_row());
                s.push('\n');
            }
            write_output(output, &s)
        }
    }
}

fn estimate(a: EstimateArgs) -> CliResult {
    let plan = sampling_plan(&a.sampling)?;
    let horizon = || required(a.horizon, "horizon");
    let lambda = || required(a.lambda, "lambda");
    match a.kind {
        EstimateKind::Survival => {
            let g = require_graph(&a.graph)?;
            let init = parse_initial(a.initial.as_deref(), &g)?;
            let r = est::estimate_survival(&g, lambda()?, &init, horizon()?, &plan)?;
            emit_results(&a.output, &r, std::slice::from_ref(&r))
        }
        EstimateKind::Extinction => {
            let g = require_graph(&a.graph)?;
            let init = parse_initial(a.initial.as_deref(), &g)?;
            let r = est::estimate_extinction_mean(&g, lambda()?, &init, horizon()?, &plan)?;
            emit_results(&a.output, &r, std::slice::from_ref(&r))
        }
        EstimateKind::Crossing => {
            let base = load_base(&a.spec.base)?;
            let spec = augmentation(&a.spec, lambda()?)?;
            let ell = required(a.ell, "ell")?;
            let margin = a.margin.unwrap_or(est::DEFAULT_MARGIN);
            let r = est::estimate_crossing_p_with_margin(&base, &spec, ell, horizon()?, &plan, margin)?;
            emit_results(&a.output, &r, std::slice::from_ref(&r))
        }
        EstimateKind::PLine => match a.lambda_high {
            None => {
                let r = est::estimate_p_line(required(a.ell, "ell")?, lambda()?, horizon()?, &plan)?;
                emit_results(&a.output, &r, std::slice::from_ref(&r))
            }
            Some(high) => {
                let ells = if a.ells.is_empty() { vec![required(a.ell, "ells")?] } else { a.ells.clone() };
                let rep = est::estimate_line_ratio(&ells, lambda()?, high, horizon()?, &plan, 30)?;
                let rows: Vec<_> = rep.low.iter().chain(&rep.high).cloned().collect();
                emit_results(&a.output, &rep, &rows)
            }
        },
        EstimateKind::Decay => {
            let g = require_graph(&a.graph)?;
            let init = parse_initial(a.initial.as_deref(), &g)?;
            let lambda = lambda()?;
            if a.grid.is_empty() {
                return Err(CliError::Config("decay needs --grid".into()));
            }
            let fit = est::fit_decay(&g, lambda, &init, &a.grid, &plan)?;
            let rows: Vec<_> = fit
                .grid
                .iter()
                .map(|p| {
                    let mut metadata = serde_json::Map::new();
                    metadata.insert("graph_hash".into(), json!(g.content_hash()));
                    metadata.insert("lambda".into(), json!(lambda));
                    metadata.insert("time".into(), json!(p.time));
                    EstimatorResult {
                        estimator: "survival_at".into(),
                        point: p.point,
                        ci_low: p.ci_low,
                        ci_high: p.ci_high,
                        n: fit.n,
                        seed: fit.seed,
                        metadata,
                        flags: Vec::new(),
                    }
                })
                .collect();
            emit_results(&a.output, &fit, &rows)
        }
        EstimateKind::Ignition => {
            let base = load_base(&a.spec.base)?;
            let spec = augmentation(&a.spec, lambda()?)?;
            let init = parse_initial(a.initial.as_deref().or(Some("all")), &base)?;
            let options = IgnitionOptions {
                threshold_base: match a.threshold_base {
                    Some(ThresholdArg::FullM) => ThresholdBase::FullM,
                    _ => ThresholdBase::HalfM,
                },
                min_accepted: a.min_accepted.unwrap_or(IgnitionOptions::default().min_accepted),
            };
            let r = est::estimate_ignition(
                &base,
                &spec,
                required(a.desert_length, "desert_length")?,
                &init,
                required(a.t_cond, "t_cond")?,
                horizon()?,
                &plan,
                &options,
            )?;
            emit_results(&a.output, &r, std::slice::from_ref(&r))
        }
        EstimateKind::WindowBound => {
            let b = est::estimate_bound_exp_decay(required(a.ell, "ell")?, lambda()?, required(a.window, "window")?, horizon()?, &plan)?;
            emit_results(&a.output, &b, &[b.lhs.clone(), b.rhs.clone()])
        }
    }
}

fn find_l(a: FindLArgs) -> CliResult {
    let plan = sampling_plan(&a.sampling)?;
    let plan = SamplingPlan {
        n: None,
        target_ci_width: Some(1.0),
        initial_n: plan.n.unwrap_or(plan.initial_n),
        max_n: a.sampling.max_n.unwrap_or(plan.n.unwrap_or(plan.initial_n) * 8),
        ..plan
    };
    let base = load_base(&a.spec.base)?;
    let spec = augmentation(&a.spec, required(a.lambda, "lambda")?)?;
    let options = FindLOptions {
        margin: a.margin.unwrap_or(est::DEFAULT_MARGIN),
        strict: a.strict,
    };
    let out = est::find_l(&base, &spec, required(a.horizon, "horizon")?, &plan, &options)?;
    for w in &out.warnings {
        log::warn!("{w}");
    }
    match a.output.format.unwrap_or(Format::Json) {
        Format::Json => write_output(&a.output, &pretty(&out)?)?,
        Format::Csv => {
            let mut s = String::from("ell,point,ci_low,ci_high,n,decision\n");
            for p in &out.diagnostics {
                let decision = serde_json::to_value(p.decision).unwrap();
                s.push_str(&format!("{},{},{},{},{},{}\n", p.ell, p.point, p.ci_low, p.ci_high, p.n, decision.as_str().unwrap()));
            }
            write_output(&a.output, &s)?;
        }
    }
    match &out.inconclusive {
        Some(m) => Err(CliError::Inconclusive(m.clone())),
        None => Ok(()),
    }
}

fn construct(a: ConstructArgs) -> CliResult {
    json_only(&a.output, "construct")?;
    let path = required(a.plan.clone(), "plan")?;
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::Config(format!("reading {}: {e}", path.display())))?;
    let plan: ConstructionPlan = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("plan: {e}")))?;
    let seed = required(a.seed, "seed")?;
    let (graph, log) = construct_with_workers(&plan, seed, a.workers)?;
    write_output(&a.output, &graph.to_json())?;
    match &a.log {
        Some(p) => write_to(Some(p), &pretty(&log)?)?,
        None if a.output.out.is_some() => write_to(None, &pretty(&log)?)?,
        None => {}
    }
    match &log.aborted {
        Some(m) => Err(CliError::Inconclusive(m.clone())),
        None => Ok(()),
    }
}

fn verify_level(a: VerifyLevelArgs) -> CliResult {
    let g_n = load_base(&a.base)?;
    let g_n1 = read_graph(&required(a.graph.clone(), "graph")?)?;
    let d = required(a.d, "d")?;
    let h = required(a.h, "h")?;
    let desert_length = match a.desert_length {
        Some(l) => l,
        None => {
            let tree = build_truncated_tree(d, h)?.vertex_count();
            (g_n1.vertex_count())
                .checked_sub(g_n.vertex_count() + tree + 1)
                .filter(|&l| l >= 1)
                .ok_or_else(|| CliError::Config("graph sizes do not fit an augmentation with this d and h".into()))?
        }
    };
    let plan = sampling_plan(&a.sampling)?;
    let params = VerifyParams {
        lambda: required(a.lambda, "lambda")?,
        lambda_prime: required(a.lambda_prime, "lambda_prime")?,
        d,
        h,
        desert_length,
        horizon: required(a.horizon, "horizon")?,
        t_cond: a.t_cond.unwrap_or(1.0),
        occupation_threshold: a.occupation_threshold,
        n: plan.n.unwrap_or(10_000),
        confidence: plan.confidence,
        workers: plan.workers,
    };
    let report = oasis_core::constructor::verify_level(&g_n, &g_n1, &params, plan.seed)?;
    let mut rows = vec![report.crossing_lower.clone(), report.crossing_target.clone()];
    rows.extend(report.pass_given_ignition.clone());
    emit_results(&a.output, &report, &rows)
}
