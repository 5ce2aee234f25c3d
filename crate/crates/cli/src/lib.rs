//! The `disclosure` command: config-driven simulation, sweeps, graph export and
//! behavior compliance checks.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use disclosure_core::analysis::{fit_curves, run_cell, CellResult};
use disclosure_core::behavior::{check_assumption_compliance, BehaviorConfig};
use disclosure_core::config::{ExperimentConfig, OutputFormat};
use disclosure_core::engine::{run_batch, TraceSummary};
use disclosure_core::error::Error;
use disclosure_core::graph::{export_dot, DotOptions};
use disclosure_core::seeding::derive_seed;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub const EXIT_OK: i32 = 0;
pub const EXIT_NONCOMPLIANT: i32 = 1;
pub const EXIT_SCHEMA: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

pub const CSV_HEADER: &str = "policy,T,delta,seed,regret";

#[derive(Debug, Parser)]
#[command(
    name = "disclosure",
    version,
    about = "Simulate order-based disclosure policies for bandit social learning"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run every policy once per seed and write per-run summaries.
    Simulate(RunArgs),
    /// Run a horizon or gap grid and fit regret exponents.
    Sweep(RunArgs),
    /// Build the configured policy's info-graph and export it.
    Graph(GraphArgs),
    /// Fuzz a behavior against the estimate band and anonymity requirements.
    Check(CheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
    Dot,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Experiment config (JSON)
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (overrides the config).
    #[arg(long, env = "DISCLOSURE_OUT")]
    pub out: Option<PathBuf>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, env = "DISCLOSURE_THREADS")]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: Common,
    /// Only write this format.
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Share tapes across policies and add per-seed difference columns.
    #[arg(long)]
    pub paired_tapes: bool,
}

#[derive(Debug, Args)]
pub struct GraphArgs {
    #[command(flatten)]
    pub common: Common,
    /// Write only graph.dot
    #[arg(long)]
    pub dot: bool,
    /// Write only graph_summary.json
    #[arg(long)]
    pub summary: bool,
    /// Collapse blocks into one node per structural group.
    #[arg(long)]
    pub collapse: bool,
    /// Drop edges implied by transitivity.
    #[arg(long)]
    pub reduce: bool,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[command(flatten)]
    pub common: Common,
    /// Number of random statistics to test.
    #[arg(long, default_value_t = 10_000)]
    pub fuzz: u64,
}

/// A failure with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Schema { .. } | Error::Config(_) => EXIT_SCHEMA,
            Error::Range { .. } | Error::Contract(_) => EXIT_RUNTIME,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure {
        code: EXIT_RUNTIME,
        message: format!("{}: {e}", path.display()),
    }
}

type CmdResult = Result<i32, Failure>;

/// Parses arguments and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_SCHEMA } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn dispatch(cmd: Command) -> CmdResult {
    let threads = match &cmd {
        Command::Simulate(a) | Command::Sweep(a) => a.common.threads,
        Command::Graph(a) => a.common.threads,
        Command::Check(a) => a.common.threads,
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| Failure {
        code: EXIT_RUNTIME,
        message: format!("thread pool: {e}"),
    })?;
    pool.install(|| match cmd {
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::Graph(a) => cmd_graph(&a),
        Command::Check(a) => cmd_check(&a),
    })
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure {
        code: EXIT_SCHEMA,
        message: format!("cannot read config {}: {e}", path.display()),
    })
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, Failure> {
    let text = read(path)?;
    ExperimentConfig::from_json(&text).map_err(|e| {
        let mut f = Failure::from(e);
        f.message = format!("{}: {}", path.display(), f.message);
        f
    })
}

struct Output {
    dir: PathBuf,
    formats: Vec<OutputFormat>,
}

impl Output {
    fn new(common: &Common, cfg: &ExperimentConfig, only: Option<Format>) -> Result<Self, Failure> {
        let dir = common
            .out
            .clone()
            .unwrap_or_else(|| cfg.outputs.dir.clone());
        fs::create_dir_all(&dir).map_err(|e| io_failure(&dir, e))?;
        let formats = match only {
            Some(Format::Csv) => vec![OutputFormat::Csv],
            Some(Format::Json) => vec![OutputFormat::Json],
            Some(Format::Dot) => vec![OutputFormat::Dot],
            None => cfg.outputs.formats.clone(),
        };
        Ok(Self { dir, formats })
    }

    fn wants(&self, f: OutputFormat) -> bool {
        self.formats.contains(&f)
    }

    fn write(&self, name: &str, contents: &str) -> Result<(), Failure> {
        let path = self.dir.join(name);
        fs::write(&path, contents).map_err(|e| io_failure(&path, e))?;
        log::info!("wrote {}", path.display());
        Ok(())
    }
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn provenance(cfg: &ExperimentConfig, command: &str) -> Value {
    json!({
        "tool": "disclosure",
        "version": VERSION,
        "command": command,
        "config_digest": cfg.digest(),
    })
}

/// Tape seed for `policy_index` under `seed`; shared across policies when paired.
fn tape_seed(seed: u64, policy_index: usize, paired: bool) -> u64 {
    if paired || policy_index == 0 {
        seed
    } else {
        derive_seed(&[seed, policy_index as u64])
    }
}

fn csv_rows(cells: &[Vec<CellResult>], paired: bool) -> String {
    let mut s = String::from(CSV_HEADER);
    if paired {
        s.push_str(",paired_diff");
    }
    s.push('\n');
    for group in cells {
        let base = &group[0];
        for c in group {
            for (i, (&seed, &r)) in c.seeds.iter().zip(&c.regrets).enumerate() {
                let _ = write!(s, "{},{},{},{},{}", c.policy, c.horizon, c.delta, seed, r);
                if paired {
                    let _ = write!(s, ",{}", r - base.regrets[i]);
                }
                s.push('\n');
            }
        }
    }
    s
}

/// Runs every policy at one grid point; `cells[i]` belongs to policy `i`.
fn run_point(
    cfg: &ExperimentConfig,
    horizon: u64,
    delta: Option<f64>,
    paired: bool,
) -> Result<Vec<CellResult>, Failure> {
    let inst = cfg.instance.build(horizon, delta)?;
    let base = cfg.seeds.seeds();
    let labels = cfg.labels();
    cfg.policy_list()
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            let seeds: Vec<u64> = base.iter().map(|&s| tape_seed(s, i, paired)).collect();
            let mut cell = run_cell(spec, &inst, &cfg.behavior, &seeds, cfg.path_len())?;
            cell.policy = labels[i].clone();
            if let Some(d) = delta {
                cell.delta = d;
            }
            Ok(cell)
        })
        .collect()
}

pub fn cmd_simulate(a: &RunArgs) -> CmdResult {
    let cfg = load_config(&a.common.config)?;
    let horizon = cfg.instance.horizon.ok_or_else(|| Failure {
        code: EXIT_SCHEMA,
        message: "instance.horizon: missing field `horizon`".into(),
    })?;
    let paired = a.paired_tapes || cfg.paired_tapes;
    let out = Output::new(&a.common, &cfg, a.format)?;
    let inst = cfg.instance.build(horizon, None)?;
    let digest = cfg.digest();
    let mut lines = String::new();
    let mut cells = Vec::new();
    let mut failed = 0usize;
    let labels = cfg.labels();
    for (i, spec) in cfg.policy_list().iter().enumerate() {
        let policy = spec.build(horizon, cfg.path_len())?;
        let seeds: Vec<u64> = cfg
            .seeds
            .seeds()
            .iter()
            .map(|&s| tape_seed(s, i, paired))
            .collect();
        let mut ok: Vec<TraceSummary> = Vec::new();
        for (seed, r) in
            seeds
                .iter()
                .zip(run_batch(&inst, &policy, &labels[i], &cfg.behavior, &seeds))
        {
            match r {
                Ok(s) => ok.push(s),
                Err(e) => {
                    failed += 1;
                    log::error!("seed {seed}: {e}");
                }
            }
        }
        for s in &ok {
            let mut v = serde_json::to_value(s).expect("serializable");
            v["run_digest"] = v["config_digest"].take();
            v["config_digest"] = json!(digest);
            v["version"] = json!(VERSION);
            lines.push_str(&serde_json::to_string(&v).expect("serializable"));
            lines.push('\n');
        }
        let regrets: Vec<f64> = ok.iter().map(|s| s.regret).collect();
        let (mean, se) = disclosure_core::engine::mean_se(&regrets);
        cells.push(CellResult {
            policy: labels[i].clone(),
            horizon,
            delta: inst.gap(),
            seeds: ok.iter().map(|s| s.seed).collect(),
            regrets,
            herded: ok.iter().map(|s| s.herded).collect(),
            mean,
            se,
        });
    }
    if failed > 0 {
        return Err(Failure {
            code: EXIT_RUNTIME,
            message: format!("{failed} runs failed"),
        });
    }
    if out.wants(OutputFormat::Csv) {
        out.write("regret.csv", &csv_rows(&[cells.clone()], paired))?;
    }
    if out.wants(OutputFormat::Json) {
        out.write("traces.jsonl", &lines)?;
        out.write("manifest.json", &to_json(&provenance(&cfg, "simulate")))?;
    }
    for c in &cells {
        println!(
            "{}: T={} mean regret {:.4} (se {:.4}, {} reps)",
            c.policy,
            c.horizon,
            c.mean,
            c.se,
            c.regrets.len()
        );
    }
    Ok(EXIT_OK)
}

pub fn cmd_sweep(a: &RunArgs) -> CmdResult {
    let cfg = load_config(&a.common.config)?;
    let sweep = cfg.sweep.clone().ok_or_else(|| Failure {
        code: EXIT_SCHEMA,
        message: "sweep: missing field `sweep`".into(),
    })?;
    let paired = a.paired_tapes || cfg.paired_tapes;
    let out = Output::new(&a.common, &cfg, a.format)?;
    let mut points: Vec<Vec<CellResult>> = Vec::new();
    let mut grid = "horizons";
    if let Some(hs) = &sweep.horizons {
        let mut hs = hs.clone();
        hs.sort_unstable();
        hs.dedup();
        for t in hs {
            points.push(run_point(&cfg, t, None, paired)?);
        }
    } else if let Some(ds) = &sweep.deltas {
        grid = "deltas";
        let horizon = cfg.instance.horizon.expect("validated");
        for &d in ds {
            points.push(run_point(&cfg, horizon, Some(d), paired)?);
        }
    }
    let flat: Vec<CellResult> = points.iter().flatten().cloned().collect();
    let mut summary = provenance(&cfg, "sweep");
    summary["grid"] = json!(grid);
    summary["cells"] = flat
        .iter()
        .map(|c| json!({"policy": c.policy, "T": c.horizon, "delta": c.delta, "mean": c.mean, "se": c.se, "reps": c.regrets.len()}))
        .collect();
    if grid == "horizons" {
        let mut fits = serde_json::Map::new();
        let mut first = Value::Null;
        for (name, fit) in fit_curves(&flat) {
            let v = match fit {
                Ok(f) => {
                    println!(
                        "{name}: exponent {:.4} (residual {:.4})",
                        f.slope, f.residual
                    );
                    json!({"exponent": f.slope, "intercept": f.intercept, "residual": f.residual, "excluded": f.excluded})
                }
                Err(e) => {
                    log::warn!("{name}: {e}");
                    json!({"exponent": null, "error": e.to_string()})
                }
            };
            if first.is_null() {
                first = v["exponent"].clone();
            }
            fits.insert(name, v);
        }
        summary["exponent"] = first;
        summary["fits"] = Value::Object(fits);
    }
    if paired {
        let mut diffs = Vec::new();
        for group in &points {
            for c in &group[1..] {
                let d: Vec<f64> = c
                    .regrets
                    .iter()
                    .zip(&group[0].regrets)
                    .map(|(x, y)| x - y)
                    .collect();
                let (m, se) = disclosure_core::engine::mean_se(&d);
                diffs.push(json!({"policy": c.policy, "baseline": group[0].policy, "T": c.horizon, "delta": c.delta, "mean_diff": m, "se": se}));
            }
        }
        summary["paired_differences"] = Value::Array(diffs);
    }
    if out.wants(OutputFormat::Csv) {
        out.write("sweep.csv", &csv_rows(&points, paired))?;
    }
    if out.wants(OutputFormat::Json) {
        out.write("summary.json", &to_json(&summary))?;
    }
    Ok(EXIT_OK)
}

pub fn cmd_graph(a: &GraphArgs) -> CmdResult {
    let cfg = load_config(&a.common.config)?;
    let horizon = cfg.instance.horizon.ok_or_else(|| Failure {
        code: EXIT_SCHEMA,
        message: "instance.horizon: missing field `horizon`".into(),
    })?;
    let spec = &cfg.policy_list()[0];
    let graph = spec
        .graph(horizon, cfg.path_len())?
        .ok_or_else(|| Failure {
            code: EXIT_SCHEMA,
            message: "policy: constant policies have no info-graph".into(),
        })?;
    let out = Output::new(&a.common, &cfg, a.format)?;
    let (mut dot, mut summary) = (a.dot, a.summary);
    match a.format {
        Some(Format::Dot) => dot = true,
        Some(Format::Json) => summary = true,
        Some(Format::Csv) => {
            return Err(Failure {
                code: EXIT_SCHEMA,
                message: "graph output is dot or json".into(),
            })
        }
        None => {}
    }
    if !dot && !summary {
        dot = true;
        summary = true;
    }
    if dot {
        let opts = DotOptions {
            collapse_groups: a.collapse,
            transitive_reduction: a.reduce,
        };
        let mut text = format!("// disclosure {VERSION} config_digest={}\n", cfg.digest());
        text.push_str(&export_dot(&graph, opts));
        out.write("graph.dot", &text)?;
    }
    if summary {
        let mut v = serde_json::to_value(graph.summary()).expect("serializable");
        let p = provenance(&cfg, "graph");
        v["version"] = p["version"].clone();
        v["config_digest"] = p["config_digest"].clone();
        out.write("graph_summary.json", &to_json(&v))?;
    }
    Ok(EXIT_OK)
}

/// Reads a behavior config, either bare or as the `behavior` field of an experiment.
pub fn load_behavior(path: &Path) -> Result<BehaviorConfig, Failure> {
    let text = read(path)?;
    let schema = |p: String, m: String| Failure {
        code: EXIT_SCHEMA,
        message: format!("{}: schema error at {p}: {m}", path.display()),
    };
    let doc: Value = serde_json::from_str(&text).map_err(|e| schema(".".into(), e.to_string()))?;
    let (doc, prefix) = match doc.get("behavior") {
        Some(b) => (b.clone(), "behavior."),
        None => (doc, ""),
    };
    let cfg: BehaviorConfig = serde_path_to_error::deserialize(doc)
        .map_err(|e| schema(format!("{prefix}{}", e.path()), e.into_inner().to_string()))?;
    cfg.validate()
        .map_err(|e| schema(prefix.trim_end_matches('.').to_string(), e.to_string()))?;
    Ok(cfg)
}

pub fn cmd_check(a: &CheckArgs) -> CmdResult {
    let cfg = load_behavior(&a.common.config)?;
    let report = check_assumption_compliance(&cfg, a.fuzz);
    let mut v = serde_json::to_value(&report).expect("serializable");
    v["version"] = json!(VERSION);
    v["compliant"] = json!(report.is_compliant());
    let text = to_json(&v);
    if let Some(dir) = &a.common.out {
        fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
        let path = dir.join("compliance.json");
        fs::write(&path, &text).map_err(|e| io_failure(&path, e))?;
    }
    print!("{text}");
    if report.is_compliant() {
        Ok(EXIT_OK)
    } else {
        for viol in &report.violations {
            eprintln!(
                "violation: {:?} arm {} n={} sum={} estimate {} vs {} (bound {})",
                viol.check, viol.arm, viol.n, viol.sum, viol.estimate, viol.reference, viol.bound
            );
        }
        Ok(EXIT_NONCOMPLIANT)
    }
}
