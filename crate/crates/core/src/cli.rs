//! Command-line front end. The binary only forwards `std::env::args` to
//! [`main_with_args`].

use std::collections::{BTreeMap, HashMap};
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use crate::baselines::majority_vote;
use crate::error::{Error, Result};
use crate::eval::{self, monte_carlo, RunOutcome};
use crate::generator::{generate, GenConfig};
use crate::io::{self, Assignment, AgentEstimate, Dataset, EventEstimate, GenMeta, InferenceReport, Metrics, SCHEMA_VERSION};
use crate::linalg::SpdMatrix;
use crate::model::{GroundTruth, Hyperparameters, ObservationSet, SocialGraph, VariationalState};
use crate::rng::RngStream;
use crate::special::argmax;
use crate::svisit::{run_svisit, StepSchedule, SvisitOptions};
use crate::visit::{estimate_states, run_visit, Trace, VisitOptions};

#[derive(Debug, Parser)]
#[command(name = "commtruth", version, about = "Community-aware Bayesian truth discovery")]
pub struct Cli {
    /// error, warn, info, debug or trace; RUST_LOG overrides it.
    #[arg(long, global = true, default_value = "warn")]
    pub log_level: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a synthetic dataset.
    Generate(GenerateArgs),
    /// Estimate event states from report files.
    Infer(InferArgs),
    /// Score a report against ground truth.
    Evaluate(EvaluateArgs),
    /// Monte Carlo sweep over sparsity levels.
    Experiment(ExperimentArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Paper,
    Blocks,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Visit,
    Svisit,
    Majority,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Visit => "visit",
            Method::Svisit => "svisit",
            Method::Majority => "majority",
        }
    }
}

#[derive(Clone, Debug, Args)]
pub struct DataArgs {
    #[arg(long, value_enum, default_value = "paper")]
    pub preset: Preset,
    /// Agents (blocks preset).
    #[arg(long)]
    pub n: Option<usize>,
    /// Events (blocks preset).
    #[arg(long)]
    pub l: Option<usize>,
    /// Communities (blocks preset).
    #[arg(long)]
    pub k: Option<usize>,
    /// States (blocks preset).
    #[arg(long)]
    pub r: Option<usize>,
    /// Comma-separated community diagonals (blocks preset).
    #[arg(long, value_delimiter = ',')]
    pub diag: Option<Vec<f64>>,
    /// Draw each agent's community independently per event.
    #[arg(long)]
    pub switching: bool,
}

impl DataArgs {
    pub fn config(&self, sparsity: f64) -> Result<GenConfig> {
        let mut cfg = match self.preset {
            Preset::Paper => {
                if self.n.is_some() || self.l.is_some() || self.k.is_some() || self.r.is_some() || self.diag.is_some() {
                    return Err(Error::Invalid("--n/--l/--k/--r/--diag need --preset blocks".into()));
                }
                GenConfig::paper(sparsity)
            }
            Preset::Blocks => {
                let (Some(n), Some(l), Some(k), Some(r), Some(diag)) = (self.n, self.l, self.k, self.r, self.diag.clone()) else {
                    return Err(Error::Invalid("--preset blocks needs --n, --l, --k, --r and --diag".into()));
                };
                GenConfig::blocks(n, l, k, r, diag, sparsity)
            }
        };
        cfg.switching = self.switching;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 0.7)]
    pub sparsity: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

/// Model hyperparameters. M and V accept a scalar (broadcast, or times I)
/// or the full vector / `;`-separated matrix rows.
#[derive(Clone, Debug, Args)]
pub struct HyperArgs {
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    pub g0: f64,
    #[arg(long, default_value_t = 1.0)]
    pub h0: f64,
    #[arg(long, default_value = "2")]
    pub m: String,
    #[arg(long, default_value = "0.7")]
    pub v: String,
    #[arg(long, default_value_t = 0.05)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 10)]
    pub ks: usize,
}

fn parse_floats(s: &str, what: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|_| Error::Invalid(format!("bad number {x:?} in --{what}"))))
        .collect()
}

impl HyperArgs {
    pub fn build(&self, r: usize) -> Result<Hyperparameters> {
        let m = parse_floats(&self.m, "m")?;
        let m = match m.len() {
            1 => vec![m[0]; r],
            _ => m,
        };
        let v = if self.v.contains(';') || self.v.contains(',') {
            let rows: Vec<Vec<f64>> = self.v.split(';').map(|row| parse_floats(row, "v")).collect::<Result<_>>()?;
            SpdMatrix::from_rows(&rows)?
        } else {
            SpdMatrix::scaled_identity(r, parse_floats(&self.v, "v")?[0])?
        };
        let h = Hyperparameters { alpha: self.alpha, g0: self.g0, h0: self.h0, m, v, epsilon: self.epsilon, ks: self.ks, r };
        h.validate()?;
        Ok(h)
    }
}

#[derive(Clone, Debug, Args)]
pub struct MethodArgs {
    /// Iteration cap (default 200 for visit, 1000 for svisit).
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub gamma_tol: f64,
    /// Update agent blocks in parallel from an iteration-start snapshot.
    #[arg(long)]
    pub parallel: bool,
    #[arg(long)]
    pub agent_batch: Option<usize>,
    #[arg(long)]
    pub pair_batch: Option<usize>,
    #[arg(long, default_value_t = 0.7)]
    pub kappa: f64,
    #[arg(long, default_value_t = 1.0)]
    pub tau: f64,
    #[arg(long, default_value_t = 10)]
    pub inner_mu_steps: usize,
    #[arg(long, default_value_t = 0.9)]
    pub smoothing: f64,
    /// Use (N−1)/|S_p| and N_l/|S_n ∩ observers| scaling.
    #[arg(long)]
    pub unbiased_scaling: bool,
}

impl MethodArgs {
    pub fn visit(&self, seed: u64) -> VisitOptions {
        VisitOptions {
            max_iters: self.max_iters.unwrap_or(200),
            tol: self.tol,
            gamma_tol: self.gamma_tol,
            parallel_sweep: self.parallel,
            seed,
            ..Default::default()
        }
    }

    pub fn svisit(&self, seed: u64) -> Result<SvisitOptions> {
        Ok(SvisitOptions {
            agent_batch: self.agent_batch,
            pair_batch: self.pair_batch,
            schedule: StepSchedule::new(self.tau, self.kappa)?,
            max_iters: self.max_iters.unwrap_or(1000),
            tol: self.tol,
            gamma_tol: self.gamma_tol,
            smoothing: self.smoothing,
            inner_mu_steps: self.inner_mu_steps,
            unbiased_pair_scaling: self.unbiased_scaling,
            seed,
            ..Default::default()
        })
    }
}

#[derive(Clone, Debug, Args)]
pub struct InferArgs {
    #[arg(long, value_enum, default_value = "visit")]
    pub method: Method,
    #[arg(long)]
    pub observations: PathBuf,
    #[arg(long)]
    pub network: Option<PathBuf>,
    /// State arity; defaults to the largest label plus one.
    #[arg(long)]
    pub n_states: Option<usize>,
    /// Truth file, needed only for --flip-fraction.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Give this fraction of agents a wrong report on each event they did
    /// not report (binary data only).
    #[arg(long)]
    pub flip_fraction: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub flip_seed: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "report.json")]
    pub out: PathBuf,
    /// Record wall-clock times (makes the output non-reproducible).
    #[arg(long)]
    pub timing: bool,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[command(flatten)]
    pub method_opts: MethodArgs,
}

#[derive(Clone, Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    /// gen_meta.json with ground-truth confusion matrices, for the MSE.
    #[arg(long)]
    pub meta: Option<PathBuf>,
    #[arg(long, default_value = "metrics.json")]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args)]
pub struct ExperimentArgs {
    /// `sparsity=a,b,…`
    #[arg(long, default_value = "sparsity=0.7,0.75,0.8,0.85,0.9")]
    pub sweep: String,
    /// Monte Carlo runs per sweep point.
    #[arg(long, default_value_t = 50)]
    pub mc: usize,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "visit,svisit,majority")]
    pub methods: Vec<Method>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "sweep.csv")]
    pub out: PathBuf,
    /// Add a seconds column (makes the output non-reproducible).
    #[arg(long)]
    pub timing: bool,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[command(flatten)]
    pub method_opts: MethodArgs,
}

fn default_experiment() -> ExperimentArgs {
    match Cli::parse_from(["commtruth", "experiment"]).command {
        Command::Experiment(a) => a,
        _ => unreachable!(),
    }
}

/// The command-line defaults.
impl Default for HyperArgs {
    fn default() -> Self {
        default_experiment().hyper
    }
}

impl Default for MethodArgs {
    fn default() -> Self {
        default_experiment().method_opts
    }
}

/// Output of one method on one dataset.
#[derive(Clone, Debug)]
pub struct MethodResult {
    pub states: Vec<usize>,
    /// Per-event distributions: ν, or vote shares for majority voting.
    pub distributions: Vec<Vec<f64>>,
    pub state: Option<VariationalState>,
    pub trace: Option<Trace>,
}

pub fn run_method(
    method: Method,
    obs: &ObservationSet,
    graph: &SocialGraph,
    hyper: &Hyperparameters,
    opts: &MethodArgs,
    seed: u64,
) -> Result<MethodResult> {
    let (state, trace) = match method {
        Method::Majority => {
            let mv = majority_vote(obs)?;
            let r = mv.n_states;
            let distributions = (0..obs.n_events())
                .map(|l| {
                    let v = mv.votes(l);
                    let total: u32 = v.iter().sum();
                    v.iter().map(|&c| c as f64 / total.max(1) as f64).collect::<Vec<f64>>()
                })
                .collect::<Vec<_>>();
            debug_assert!(distributions.iter().all(|d| d.len() == r));
            return Ok(MethodResult { states: mv.states, distributions, state: None, trace: None });
        }
        Method::Visit => run_visit(obs, graph, hyper, &opts.visit(seed))?,
        Method::Svisit => run_svisit(obs, graph, hyper, &opts.svisit(seed)?)?,
    };
    let states = estimate_states(&state.nu, state.r);
    let distributions = state.nu.chunks(state.r).map(<[f64]>::to_vec).collect();
    Ok(MethodResult { states, distributions, state: Some(state), trace: Some(trace) })
}

fn strip_timing(trace: &mut Trace) {
    trace.records.iter_mut().for_each(|r| r.wall_seconds = 0.0);
}

pub fn build_report(method: Method, seed: u64, data: &Dataset, result: &MethodResult, wall: Option<f64>) -> InferenceReport {
    let events = result
        .states
        .iter()
        .zip(&result.distributions)
        .enumerate()
        .map(|(l, (&state, d))| EventEstimate { id: data.events.id(l).to_owned(), state, distribution: d.clone() })
        .collect();
    let mut report = InferenceReport {
        schema_version: SCHEMA_VERSION,
        method: method.name().into(),
        seed,
        n_states: data.obs.n_states(),
        events,
        agents: Vec::new(),
        assignments: Vec::new(),
        lambda: Vec::new(),
        trace: result.trace.clone(),
        dropped_edges: data.dropped_edges,
        wall_seconds: wall,
    };
    if wall.is_none() {
        if let Some(t) = report.trace.as_mut() {
            strip_timing(t);
        }
    }
    let Some(state) = &result.state else { return report };
    let obs = &data.obs;
    report.assignments = obs
        .reports()
        .iter()
        .enumerate()
        .map(|(i, rep)| Assignment { agent: rep.agent, event: rep.event, community: argmax(state.psi(i)) })
        .collect();
    let fixed = eval::fixed_community_estimates(state, obs);
    report.agents = (0..state.n_agents)
        .map(|n| {
            let mut by_k = BTreeMap::new();
            for &i in obs.agent_reports(n) {
                let k = report.assignments[i].community;
                by_k.entry(k).or_insert_with(|| state.expected_omega(n, k));
            }
            let mut mass = vec![0.0; state.ks];
            for &i in obs.agent_reports(n) {
                mass.iter_mut().zip(state.psi(i)).for_each(|(m, p)| *m += p);
            }
            AgentEstimate {
                id: data.agents.id(n).to_owned(),
                community: argmax(&mass),
                omega: fixed[n].clone(),
                gamma: state.gamma(n).to_vec(),
                omega_by_community: by_k,
            }
        })
        .collect();
    report.lambda = state.lambda.clone();
    report
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<()> {
    let cfg = args.data.config(args.sparsity)?;
    let (obs, graph, truth) = generate(&cfg, &RngStream::new(args.seed))?;
    info!("generated {} reports and {} edges", obs.len(), graph.n_edges());
    let meta = GenMeta { schema_version: SCHEMA_VERSION, seed: args.seed, config: cfg, truth };
    io::write_generated(&args.out, &obs, &graph, &meta)
}

pub fn cmd_infer(args: &InferArgs) -> Result<()> {
    let flip = args.flip_fraction.map(|f| (f, args.flip_seed));
    let data = if flip.is_some() {
        if args.n_states.is_some_and(|r| r != 2) {
            return Err(Error::Invalid("--flip-fraction needs binary states".into()));
        }
        io::load_real_dataset(&args.observations, args.network.as_deref(), args.truth.as_deref(), flip)?
    } else {
        io::load_dataset(&args.observations, args.network.as_deref(), args.n_states)?
    };
    let hyper = args.hyper.build(data.obs.n_states())?;
    let start = Instant::now();
    let result = run_method(args.method, &data.obs, &data.graph, &hyper, &args.method_opts, args.seed)?;
    let wall = args.timing.then(|| start.elapsed().as_secs_f64());
    if let Some(t) = &result.trace {
        info!("{} finished after {} iterations (converged: {})", args.method.name(), t.iterations(), t.converged);
    }
    io::write_json(&args.out, &build_report(args.method, args.seed, &data, &result, wall))
}

/// Indices of `ids` in a ground-truth table addressed by integer IDs.
fn truth_index(id: &str, bound: usize, what: &str) -> Result<usize> {
    id.parse::<usize>()
        .ok()
        .filter(|&i| i < bound)
        .ok_or_else(|| Error::Invalid(format!("{what} {id:?} is not in the ground truth")))
}

pub fn evaluate_report(report: &InferenceReport, truth: &[(String, usize)], meta: Option<&GroundTruth>) -> Result<Metrics> {
    let table: HashMap<&str, usize> = truth.iter().map(|(id, s)| (id.as_str(), *s)).collect();
    let mut est = Vec::with_capacity(report.events.len());
    let mut tru = Vec::with_capacity(report.events.len());
    for e in &report.events {
        match table.get(e.id.as_str()) {
            Some(&s) => {
                est.push(e.state);
                tru.push(s);
            }
            None => return Err(Error::Invalid(format!("event {:?} of the report is missing from the truth file", e.id))),
        }
    }
    if est.is_empty() {
        return Err(Error::Invalid("report and truth share no events".into()));
    }
    let accuracy = eval::accuracy(&est, &tru)?;
    let (mut mse, mut mse_fixed) = (None, None);
    if let Some(gt) = meta.filter(|_| !report.agents.is_empty()) {
        let r = gt.n_states;
        if r != report.n_states {
            return Err(Error::Dimension(format!("report has {} states, ground truth {r}", report.n_states)));
        }
        let agent_idx: Vec<usize> =
            report.agents.iter().map(|a| truth_index(&a.id, gt.n_agents, "agent")).collect::<Result<_>>()?;
        let event_idx: Vec<usize> =
            report.events.iter().map(|e| truth_index(&e.id, gt.n_events, "event")).collect::<Result<_>>()?;
        let mut total = 0.0;
        for a in &report.assignments {
            let est = report.agents[a.agent]
                .omega_by_community
                .get(&a.community)
                .ok_or_else(|| Error::Invalid("assignment without a matching matrix".into()))?;
            let target = gt.matrix_for(agent_idx[a.agent], event_idx[a.event]);
            total += est.iter().zip(target).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
        }
        if !report.assignments.is_empty() {
            mse = Some(total / (report.assignments.len() * r * r) as f64);
        }
        let total: f64 = report
            .agents
            .iter()
            .zip(&agent_idx)
            .map(|(a, &n)| a.omega.iter().zip(gt.agent_matrix(n)).map(|(x, y)| (x - y).powi(2)).sum::<f64>())
            .sum();
        mse_fixed = Some(total / (report.agents.len() * r * r) as f64);
    }
    Ok(Metrics {
        schema_version: SCHEMA_VERSION,
        method: report.method.clone(),
        accuracy,
        mse,
        mse_fixed,
        runs: 1,
        events_evaluated: est.len(),
    })
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let report: InferenceReport = io::read_json(&args.report)?;
    let truth = io::read_truth(&args.truth)?;
    let meta: Option<GenMeta> = args.meta.as_deref().map(io::read_json).transpose()?;
    let metrics = evaluate_report(&report, &truth, meta.as_ref().map(|m| &m.truth))?;
    io::write_json(&args.out, &metrics)
}

pub fn parse_sweep(spec: &str) -> Result<Vec<f64>> {
    let Some(values) = spec.strip_prefix("sparsity=") else {
        return Err(Error::Invalid(format!("sweep must look like sparsity=a,b,…, got {spec:?}")));
    };
    let values = parse_floats(values, "sweep")?;
    if values.iter().any(|s| !(0.0..1.0).contains(s)) {
        return Err(Error::Invalid("sparsity values must lie in [0, 1)".into()));
    }
    Ok(values)
}

/// One CSV row of a sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub method: Method,
    pub sparsity: f64,
    /// `None` for the aggregate row.
    pub run: Option<usize>,
    pub accuracy: f64,
    pub mse: Option<f64>,
    pub accuracy_std: Option<f64>,
    pub mse_std: Option<f64>,
    pub seconds: f64,
}

/// Runs every method on the same `mc` datasets per sparsity. Run `i` uses
/// the dataset drawn from split `i` of `seed`, so different sparsities share
/// θ, s, z and the network.
pub fn run_experiment(
    data: &DataArgs,
    sparsities: &[f64],
    methods: &[Method],
    mc: usize,
    seed: u64,
    hyper: &HyperArgs,
    opts: &MethodArgs,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &method in methods {
        for &sparsity in sparsities {
            let cfg = data.config(sparsity)?;
            let h = hyper.build(cfg.n_states)?;
            let report = monte_carlo(mc, seed, |_, stream| {
                let (obs, graph, truth) = generate(&cfg, &stream.split(0))?;
                let start = Instant::now();
                let res = run_method(method, &obs, &graph, &h, opts, stream.split(1).seed())?;
                let seconds = start.elapsed().as_secs_f64();
                let mse = res.state.as_ref().map(|st| eval::mse_switching(st, &obs, &truth)).transpose()?;
                Ok(RunOutcome { estimated: res.states, truth: truth.theta, mse, seconds })
            })?;
            for r in &report.runs {
                rows.push(SweepRow {
                    method,
                    sparsity,
                    run: Some(r.run),
                    accuracy: r.accuracy,
                    mse: r.mse,
                    accuracy_std: None,
                    mse_std: None,
                    seconds: r.seconds,
                });
            }
            rows.push(SweepRow {
                method,
                sparsity,
                run: None,
                accuracy: report.accuracy,
                mse: report.mse,
                accuracy_std: Some(report.accuracy_std),
                mse_std: report.mse_std,
                seconds: report.runs.iter().map(|r| r.seconds).sum::<f64>() / report.mc_runs as f64,
            });
        }
    }
    Ok(rows)
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn sweep_csv(rows: &[SweepRow], timing: bool) -> String {
    let mut out = String::from("method,sparsity,run,accuracy,mse,accuracy_std,mse_std");
    out += if timing { ",seconds\n" } else { "\n" };
    for r in rows {
        let run = r.run.map_or_else(|| "mean".to_owned(), |i| i.to_string());
        let _ = write!(
            out,
            "{},{},{},{},{},{},{}",
            r.method.name(),
            r.sparsity,
            run,
            r.accuracy,
            opt(r.mse),
            opt(r.accuracy_std),
            opt(r.mse_std)
        );
        if timing {
            let _ = write!(out, ",{}", r.seconds);
        }
        out.push('\n');
    }
    out
}

pub fn cmd_experiment(args: &ExperimentArgs) -> Result<()> {
    let sparsities = parse_sweep(&args.sweep)?;
    if args.methods.is_empty() {
        return Err(Error::Invalid("--methods is empty".into()));
    }
    let rows = run_experiment(&args.data, &sparsities, &args.methods, args.mc, args.seed, &args.hyper, &args.method_opts)?;
    write_text(&args.out, &sweep_csv(&rows, args.timing))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Infer(a) => cmd_infer(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Experiment(a) => cmd_experiment(a),
    }
}

fn init_logging(level: &str) {
    let _ = env_logger::Builder::new().parse_filters(level).parse_env("RUST_LOG").try_init();
}

/// Parses arguments, runs the command and returns the process exit code:
/// 0 on success, 1 for invalid input, 2 for runtime failures.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    init_logging(&cli.log_level);
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}
