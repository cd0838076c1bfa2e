//! Command implementations behind the `pccc` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use pccc::assign_solver::{CommandBackend, Solver};
use pccc::constraint_gen::{self, GenMode, GenSpec};
use pccc::engine::{self, initialize_centers, EngineError};
use pccc::instance_io::{
    load_constraints, load_dataset, read_report, write_constraints, write_report, ConstraintSet,
    Dataset, Hardness, InitMethod, PenaltyMode, QSetting, Report, RunConfig,
};
use pccc::metrics;
use pccc::model::build_model;
use pccc::preprocess::preprocess;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Exit code for infeasible instances.
pub const EXIT_INFEASIBLE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "pccc",
    version,
    about = "Constrained clustering with hard and soft pairwise constraints"
)]
pub struct Cli {
    /// Log progress to standard error (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Cluster a dataset.
    Run(RunArgs),
    /// Generate a constraint set from ground-truth labels.
    Gen(GenArgs),
    /// Evaluate a labeling.
    Metrics(MetricsArgs),
    /// Run a benchmark plan.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Dataset CSV or binary matrix.
    #[arg(long)]
    pub data: PathBuf,
    /// Ground-truth column: header name, 0-based index, or `last`.
    #[arg(long)]
    pub label_column: Option<String>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub constraints: Option<PathBuf>,
    #[arg(long)]
    pub k: usize,
    /// Candidate clusters per object: an integer or `full`.
    #[arg(long, default_value = "full")]
    pub q: QSetting,
    /// `auto`, `max-dist`, or a positive number.
    #[arg(long, default_value = "auto")]
    pub penalty: PenaltyMode,
    #[arg(long, default_value = "kmeans++")]
    pub init: InitMethod,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub repetitions: usize,
    #[arg(long, default_value_t = 100)]
    pub max_iterations: usize,
    /// Wall-clock limit for the whole run, in seconds.
    #[arg(long, default_value_t = 1800.0)]
    pub time_limit: f64,
    /// Limit per assignment solve, in seconds.
    #[arg(long, default_value_t = 30.0)]
    pub solver_time_limit: f64,
    /// Repositionings per repetition (default 2k).
    #[arg(long)]
    pub reposition_limit: Option<usize>,
    #[arg(long, default_value_t = 500)]
    pub gamma: usize,
    #[arg(long, default_value_t = 10)]
    pub delta: usize,
    #[arg(long)]
    pub ml_mode: Option<Mode>,
    #[arg(long)]
    pub cl_mode: Option<Mode>,
    /// Directory for `report.json` and `labels.txt`; without it the report
    /// goes to standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write the assignment model of the first iteration in LP format.
    #[arg(long)]
    pub export_lp: Option<PathBuf>,
    /// Write the contracted graph as JSON.
    #[arg(long)]
    pub dump_graph: Option<PathBuf>,
    /// External MILP command; `{lp}` and `{sol}` are replaced by file paths.
    #[arg(long)]
    pub lp_solver: Option<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Mode {
    Hard,
    Soft,
}

impl From<Mode> for Hardness {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Hard => Hardness::Hard,
            Mode::Soft => Hardness::Soft,
        }
    }
}

impl RunArgs {
    pub fn config(&self) -> RunConfig {
        RunConfig {
            k: self.k,
            q: self.q,
            penalty: self.penalty,
            init: self.init,
            seed: self.seed,
            repetitions: self.repetitions,
            max_iterations: self.max_iterations,
            time_limit_s: self.time_limit,
            solver_time_limit_s: self.solver_time_limit,
            reposition_limit: self.reposition_limit,
            gamma: self.gamma,
            delta: self.delta,
            ml_mode: self.ml_mode.map(Into::into),
            cl_mode: self.cl_mode.map(Into::into),
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum GenModeArg {
    NoiseFree,
    Noisy,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub fraction: f64,
    #[arg(long, value_enum, default_value = "noise-free")]
    pub mode: GenModeArg,
    /// Lower bound of the confidence distribution (noisy mode).
    #[arg(long, default_value_t = 1.0)]
    pub lower_bound: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Constraint CSV to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Manifest JSON (default: `<out>.manifest.json`).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// One label per line.
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub constraints: Option<PathBuf>,
    /// Penalty factor used for `penalty_total`.
    #[arg(long, default_value_t = 1.0)]
    pub penalty: f64,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Plan JSON.
    #[arg(long)]
    pub plan: PathBuf,
    /// Concurrent runs.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Override the time limit of every job, in seconds.
    #[arg(long)]
    pub time_limit: Option<f64>,
    /// Only rebuild the aggregate from existing reports.
    #[arg(long)]
    pub aggregate_only: bool,
}

/// Failure of a command, carrying its exit code.
#[derive(Debug)]
pub struct Exit {
    pub code: i32,
    pub error: anyhow::Error,
}

impl<E: Into<anyhow::Error>> From<E> for Exit {
    fn from(e: E) -> Self {
        Self {
            code: 1,
            error: e.into(),
        }
    }
}

pub fn execute(cli: Cli) -> Result<(), Exit> {
    match cli.command {
        Command::Run(args) => cmd_run(&args),
        Command::Gen(args) => cmd_gen(&args).map_err(Exit::from),
        Command::Metrics(args) => cmd_metrics(&args).map_err(Exit::from),
        Command::Bench(args) => cmd_bench(&args).map_err(Exit::from),
    }
}

fn load_data(args: &DataArgs) -> Result<Dataset> {
    load_dataset(&args.data, args.label_column.as_deref())
        .with_context(|| format!("loading {}", args.data.display()))
}

fn load_cs(path: Option<&Path>, n: usize) -> Result<ConstraintSet> {
    match path {
        Some(p) => load_constraints(p, n).with_context(|| format!("loading {}", p.display())),
        None => Ok(ConstraintSet::default()),
    }
}

fn write_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut text = String::with_capacity(labels.len() * 3);
    for l in labels {
        text.push_str(&l.to_string());
        text.push('\n');
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            l.trim()
                .parse()
                .with_context(|| format!("line {}: bad label {l:?}", i + 1))
        })
        .collect()
}

/// Labels, metrics and report for one engine run; failures become reports
/// with the sentinel metric values.
pub fn run_to_report(
    dataset: &Dataset,
    constraints: &ConstraintSet,
    config: &RunConfig,
    solver: &Solver,
) -> (Report, Option<EngineError>) {
    let start = Instant::now();
    match engine::run_with_solver(dataset, constraints, config, solver) {
        Ok(outcome) => {
            let sol = &outcome.solution;
            let mut bundle =
                metrics::evaluate(dataset, &sol.labels, &outcome.constraints, sol.penalty);
            // keep the engine's own penalty_total (identical by construction)
            bundle.penalty_total = sol.penalty_total;
            let mut report =
                Report::from_solution(sol, &bundle, config, start.elapsed().as_secs_f64());
            if sol.stats.repetitions.iter().any(|r| r.timed_out) {
                report.status = "time_limit".into();
            }
            (report, None)
        }
        Err(e) => {
            let report = Report::failure(
                e.status(),
                e.to_string(),
                config,
                start.elapsed().as_secs_f64(),
            );
            (report, Some(e))
        }
    }
}

pub fn cmd_run(args: &RunArgs) -> Result<(), Exit> {
    if args.k == 0 {
        return Err(anyhow::anyhow!("--k must be at least 1").into());
    }
    let config = args.config();
    config.validate()?;
    let dataset = load_data(&args.data)?;
    let constraints = load_cs(args.constraints.as_deref(), dataset.n())?;

    if args.export_lp.is_some() || args.dump_graph.is_some() {
        let cs = constraints.with_modes(config.ml_mode, config.cl_mode);
        match preprocess(&dataset, &cs) {
            Ok(graph) => {
                if let Some(path) = &args.dump_graph {
                    fs::write(path, serde_json::to_string_pretty(&graph)?)?;
                }
                if let Some(path) = &args.export_lp {
                    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                    let centers = initialize_centers(&graph, config.k, config.init, &mut rng)?;
                    let q = match config.q {
                        QSetting::Nearest(q) if !graph.cl_edges.is_empty() => QSetting::Nearest(
                            q.max(pccc::model::minimum_feasible_q(&graph, config.k)),
                        ),
                        q => q,
                    };
                    build_model(&graph, &centers, q, config.penalty)?.export_model(path)?;
                }
            }
            Err(e) => tracing::warn!("skipping exports: {e}"),
        }
    }

    let mut solver = Solver::builtin();
    if let Some(cmd) = &args.lp_solver {
        let backend = CommandBackend::parse(cmd).context("empty --lp-solver command")?;
        solver.attach_backend(&backend.program.clone(), Box::new(backend))?;
    }

    let (report, err) = run_to_report(&dataset, &constraints, &config, &solver);
    let json = serde_json::to_string_pretty(&report)?;
    match &args.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            write_report(&report, dir.join("report.json"))?;
            if report.labels.len() == dataset.n() {
                write_labels(&dir.join("labels.txt"), &report.labels)?;
            }
            println!("{}", dir.join("report.json").display());
        }
        None => println!("{json}"),
    }
    match err {
        None => Ok(()),
        Some(e @ (EngineError::HardConflict(_) | EngineError::InfeasibleModel { .. })) => {
            Err(Exit {
                code: EXIT_INFEASIBLE,
                error: e.into(),
            })
        }
        Some(e) => Err(e.into()),
    }
}

pub fn cmd_gen(args: &GenArgs) -> Result<()> {
    let dataset = load_data(&args.data)?;
    let spec = GenSpec {
        fraction: args.fraction,
        lower: args.lower_bound,
        seed: args.seed,
        mode: match args.mode {
            GenModeArg::NoiseFree => GenMode::NoiseFree,
            GenModeArg::Noisy => GenMode::Noisy,
        },
    };
    let (cs, manifest) = constraint_gen::generate(&dataset, &spec)?;
    write_constraints(&args.out, &cs)?;
    let manifest_path = args
        .manifest
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}.manifest.json", args.out.display())));
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(&manifest_path, format!("{json}\n"))?;
    println!("{json}");
    Ok(())
}

pub fn cmd_metrics(args: &MetricsArgs) -> Result<()> {
    let dataset = load_data(&args.data)?;
    let labels = read_labels(&args.labels)?;
    if labels.len() != dataset.n() {
        bail!("{} labels for {} objects", labels.len(), dataset.n());
    }
    let constraints = load_cs(args.constraints.as_deref(), dataset.n())?;
    let bundle = metrics::evaluate(&dataset, &labels, &constraints, args.penalty);
    println!("{}", serde_json::to_string_pretty(&bundle)?);
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchJob {
    pub name: String,
    pub data: PathBuf,
    #[serde(default)]
    pub label_column: Option<String>,
    #[serde(default)]
    pub constraints: Option<PathBuf>,
    pub config: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchPlan {
    pub output_dir: PathBuf,
    pub repetitions: usize,
    pub jobs: Vec<BenchJob>,
}

impl BenchPlan {
    /// Read a plan; relative paths resolve against the plan's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut plan: BenchPlan =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut plan.output_dir);
        for job in &mut plan.jobs {
            resolve(&mut job.data);
            if let Some(c) = &mut job.constraints {
                resolve(c);
            }
        }
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            bail!("repetitions must be at least 1");
        }
        let mut names: Vec<&str> = self.jobs.iter().map(|j| j.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            bail!("job names must be distinct");
        }
        Ok(())
    }

    pub fn report_path(&self, job: &str, rep: usize) -> PathBuf {
        self.output_dir.join(job).join(format!("rep{rep}.json"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub job: String,
    pub runs: usize,
    pub failures: usize,
    pub mean_ari: f64,
    pub mean_silhouette: f64,
    /// Mean over successful runs; absent when every run failed.
    pub mean_inertia: Option<f64>,
    pub mean_runtime_s: f64,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    (count > 0).then(|| sum / count as f64)
}

/// Fold reports of one job into an aggregate row. Failed runs count as
/// ARI 0 and Silhouette -1.
pub fn aggregate(job: &str, reports: &[Report]) -> AggregateRow {
    let ok = |r: &&Report| r.is_success();
    AggregateRow {
        job: job.to_string(),
        runs: reports.len(),
        failures: reports.iter().filter(|r| !r.is_success()).count(),
        mean_ari: mean(reports.iter().map(|r| {
            if r.is_success() {
                r.ari.unwrap_or(0.0)
            } else {
                0.0
            }
        }))
        .unwrap_or(0.0),
        mean_silhouette: mean(reports.iter().map(|r| {
            if r.is_success() {
                r.silhouette.unwrap_or(-1.0)
            } else {
                -1.0
            }
        }))
        .unwrap_or(-1.0),
        mean_inertia: mean(reports.iter().filter(ok).filter_map(|r| r.inertia)),
        mean_runtime_s: mean(reports.iter().map(|r| r.runtime_s)).unwrap_or(0.0),
    }
}

pub fn write_aggregate(path: &Path, rows: &[AggregateRow]) -> Result<()> {
    let mut text =
        String::from("job,runs,failures,mean_ari,mean_silhouette,mean_inertia,mean_runtime_s\n");
    for r in rows {
        text.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.job,
            r.runs,
            r.failures,
            r.mean_ari,
            r.mean_silhouette,
            r.mean_inertia.map_or(String::new(), |v| v.to_string()),
            r.mean_runtime_s
        ));
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn run_job_rep(job: &BenchJob, rep: usize, time_limit: Option<f64>) -> Report {
    let mut config = job.config.clone();
    config.seed = config.seed.wrapping_add(rep as u64);
    config.repetitions = 1;
    if let Some(t) = time_limit {
        config.time_limit_s = t;
    }
    let loaded = load_dataset(&job.data, job.label_column.as_deref())
        .map_err(anyhow::Error::from)
        .and_then(|ds| load_cs(job.constraints.as_deref(), ds.n()).map(|cs| (ds, cs)));
    let (dataset, constraints) = match loaded {
        Ok(x) => x,
        Err(e) => return Report::failure("invalid_input", format!("{e:#}"), &config, 0.0),
    };
    let (mut report, _) = run_to_report(&dataset, &constraints, &config, &Solver::builtin());
    if report.status == "time_limit" {
        // a run that hit the limit counts as failed in the aggregate
        report.ari = Some(0.0);
        report.silhouette = Some(-1.0);
    }
    report
}

pub fn cmd_bench(args: &BenchArgs) -> Result<()> {
    let plan = BenchPlan::load(&args.plan)?;
    fs::create_dir_all(&plan.output_dir)?;
    if !args.aggregate_only {
        let tasks: Vec<(usize, usize)> = (0..plan.jobs.len())
            .flat_map(|j| (0..plan.repetitions).map(move |r| (j, r)))
            .collect();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(args.jobs.max(1))
            .build()?;
        pool.install(|| {
            tasks.par_iter().try_for_each(|&(j, r)| -> Result<()> {
                let job = &plan.jobs[j];
                let report = run_job_rep(job, r, args.time_limit);
                if !report.is_success() {
                    tracing::warn!(job = %job.name, rep = r, status = %report.status, "run failed");
                }
                let path = plan.report_path(&job.name, r);
                fs::create_dir_all(path.parent().unwrap())?;
                write_report(&report, &path)?;
                Ok(())
            })
        })?;
    }
    let mut rows = Vec::new();
    for job in &plan.jobs {
        let reports = (0..plan.repetitions)
            .map(|r| read_report(plan.report_path(&job.name, r)).map_err(anyhow::Error::from))
            .collect::<Result<Vec<_>>>()?;
        rows.push(aggregate(&job.name, &reports));
    }
    let path = plan.output_dir.join("aggregate.csv");
    write_aggregate(&path, &rows)?;
    println!("{}", serde_json::to_string_pretty(&rows)?);
    Ok(())
}
