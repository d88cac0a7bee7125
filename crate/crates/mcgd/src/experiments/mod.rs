//! Experiment drivers behind the `mcgd` command line.
//!
//! Every command is a pure function of its [`ExperimentConfig`]: output file
//! names and contents depend only on the config, so reruns are byte-identical.

mod config;

use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::Serialize;

pub use config::{
    setting_of, ChainSection, ExperimentConfig, ExperimentKind, MixingSection, NoiseSection, ObjectiveSection,
    ScheduleFamily, ScheduleSection, SgdtSection,
};

use crate::builders::{build_chain_pair, ChainPair};
use crate::data::{make_noisy_node_dataset, ARStream, NodeDataset};
use crate::error::Error;
use crate::markov::{classify_chain, TransitionMatrix};
use crate::mixing::{deviation_series, mixing_constants, spectral_profile, MixingConstants};
use crate::objectives::{
    assemble_finite_sum, reference_minimum, Component, FeasibleSet, FiniteSumObjective, LogisticLoss,
    SigmoidSquaredLoss,
};
use crate::solver::{
    gap_series, run_ar_mcgd, run_ar_sgdt, run_mcgd, run_sgdt, validate_noise, validate_schedule, Condition, Loss,
    RunOptions, RunRecord, Setting, Validity,
};

/// Fractions of the initial metric used by the samples-to-target summary.
pub const TARGET_FRACTIONS: [f64; 3] = [1e-1, 1e-2, 1e-3];

pub const SUMMARY_HEADER: &str = "experiment,loss,method,seed,status,iterations,samples_consumed,metric,\
initial_value,final_value,samples_to_1e-1,samples_to_1e-2,samples_to_1e-3";
pub const PLOT_HEADER: &str = "experiment,loss,method,seed,samples_consumed,metric,value";
pub const MIXING_HEADER: &str = "k,deviation_inf_norm,bound_value,fitted_rate,lambda_P,psi_P";

// Salt separating the held-out AR sample stream from the training stream.
const HOLDOUT_SALT: u64 = 0x05ee_d0f4_e1d0_u64;

/// A command failure, split by exit code.
#[derive(Debug, Clone, PartialEq)]
pub enum Failure {
    /// Bad input or a violated convergence condition (exit 1).
    Validation(String),
    /// Anything that went wrong while computing or writing (exit 2).
    Runtime(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Validation(m) => write!(f, "validation failed: {m}"),
            Failure::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NonSquare { .. }
            | Error::EmptyMatrix
            | Error::NegativeEntry { .. }
            | Error::RowSumViolation { .. }
            | Error::StateOutOfRange { .. }
            | Error::NotErgodic
            | Error::DimensionMismatch { .. }
            | Error::PreconditionViolation(_)
            | Error::InvalidArgument(_)
            | Error::Parse(_) => Failure::Validation(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

pub type CmdResult<T> = std::result::Result<T, Failure>;

fn write_file(dir: &Path, name: &str, contents: &str) -> CmdResult<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}

fn to_json<T: Serialize>(value: &T) -> CmdResult<String> {
    serde_json::to_string_pretty(value)
        .map(|mut s| {
            s.push('\n');
            s
        })
        .map_err(|e| Failure::Runtime(e.to_string()))
}

fn load_matrix(path: &Path) -> CmdResult<TransitionMatrix> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Validation(format!("cannot read {}: {e}", path.display())))?;
    Ok(TransitionMatrix::from_text(&text)?)
}

#[derive(Serialize)]
struct ChainMeta {
    seed: u64,
    n: usize,
    edge_count: usize,
    d_max: usize,
    w0: f64,
    cycles: Vec<Vec<usize>>,
    lambda2_p: f64,
    lambda2_q: f64,
    reversible_p: bool,
    reversible_q: bool,
    stationary_p: Option<Vec<f64>>,
    stationary_q: Option<Vec<f64>>,
    eigen_moduli_p: Vec<f64>,
    eigen_moduli_q: Vec<f64>,
}

fn chain_meta(pair: &ChainPair, seed: u64) -> crate::error::Result<ChainMeta> {
    let cp = classify_chain(&pair.p);
    let cq = classify_chain(&pair.q);
    Ok(ChainMeta {
        seed,
        n: pair.graph.n(),
        edge_count: pair.graph.edge_count(),
        d_max: pair.graph.d_max(),
        w0: pair.overlay.w0,
        cycles: pair.overlay.cycles.clone(),
        lambda2_p: pair.lambda2_p,
        lambda2_q: pair.lambda2_q,
        reversible_p: cp.reversible,
        reversible_q: cq.reversible,
        stationary_p: cp.stationary,
        stationary_q: cq.stationary,
        eigen_moduli_p: spectral_profile(&pair.p)?.eigen_moduli,
        eigen_moduli_q: spectral_profile(&pair.q)?.eigen_moduli,
    })
}

/// Writes `P_seed{s}.txt`, `Q_seed{s}.txt` and `chain_seed{s}.json` for every
/// configured seed.
pub fn cmd_build_chain(cfg: &ExperimentConfig, out: &Path) -> CmdResult<Vec<PathBuf>> {
    cfg.check_shape()?;
    let mut files = Vec::new();
    for &seed in &cfg.seeds {
        let pair = build_chain_pair(&cfg.chain.pair_config(), seed)?;
        files.push(write_file(out, &format!("P_seed{seed}.txt"), &pair.p.to_text())?);
        files.push(write_file(out, &format!("Q_seed{seed}.txt"), &pair.q.to_text())?);
        let meta = chain_meta(&pair, seed)?;
        files.push(write_file(out, &format!("chain_seed{seed}.json"), &to_json(&meta)?)?);
    }
    Ok(files)
}

#[derive(Serialize)]
struct MixingMeta {
    matrix: String,
    k_max: usize,
    constants: MixingConstants,
    lambda2_modulus: f64,
    lambda_p: f64,
    psi_p: f64,
    symmetric: bool,
    reversible: bool,
    stationary: Option<Vec<f64>>,
}

/// Deviation norms `‖Π* − Pᵏ‖∞` for `k = 0..=k_max` against the certified
/// bound, written to `mixing.csv` with a `mixing.json` sidecar.
pub fn cmd_analyze_mixing(cfg: &ExperimentConfig, out: &Path) -> CmdResult<Vec<PathBuf>> {
    let path = cfg
        .chain
        .matrix
        .as_ref()
        .ok_or_else(|| Failure::Validation("analyze-mixing needs chain.matrix".into()))?;
    let p = load_matrix(path)?;
    let class = classify_chain(&p);
    if !class.is_ergodic() {
        return Err(Failure::Validation(format!("{} violated: {}", Condition::ErgodicChain, Error::NotErgodic)));
    }
    let k_max = cfg.mixing.k_max;
    let profile = spectral_profile(&p)?;
    let constants = mixing_constants(&p, k_max)?;
    let devs = deviation_series(&p, k_max)?;
    let mut csv = String::from(MIXING_HEADER);
    csv.push('\n');
    for (k, dev) in devs.iter().enumerate() {
        let _ = writeln!(
            csv,
            "{k},{dev},{},{},{},{}",
            constants.bound(k as u64),
            constants.rate,
            profile.lambda_p,
            profile.psi_p
        );
    }
    let meta = MixingMeta {
        matrix: path.display().to_string(),
        k_max,
        constants,
        lambda2_modulus: profile.lambda2_modulus,
        lambda_p: profile.lambda_p,
        psi_p: profile.psi_p,
        symmetric: profile.symmetric,
        reversible: class.reversible,
        stationary: class.stationary,
    };
    Ok(vec![write_file(out, "mixing.csv", &csv)?, write_file(out, "mixing.json", &to_json(&meta)?)?])
}

/// Outcome of `validate`: one line per checked condition.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub lines: Vec<String>,
    pub first_violation: Option<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.first_violation.is_none()
    }

    fn record(&mut self, label: &str, v: Validity) {
        match v {
            Validity::Valid => self.lines.push(format!("ok       {label}")),
            Validity::Invalid { condition, reason } => {
                let msg = format!("{condition}: {reason}");
                self.lines.push(format!("INVALID  {label}: {msg}"));
                self.first_violation.get_or_insert(msg);
            }
        }
    }

    fn fail(&mut self, label: &str, msg: String) {
        self.lines.push(format!("INVALID  {label}: {msg}"));
        self.first_violation.get_or_insert(msg);
    }
}

fn chain_validity(p: &TransitionMatrix) -> Validity {
    let c = classify_chain(p);
    if c.is_ergodic() {
        return Validity::Valid;
    }
    let reason = if !c.irreducible { "chain is reducible" } else { "chain is periodic" };
    Validity::Invalid { condition: Condition::ErgodicChain, reason: reason.into() }
}

/// Classifies the schedule and noise for every setting the experiment uses,
/// then checks the finite chains it would run on.
pub fn cmd_validate(cfg: &ExperimentConfig) -> ValidationReport {
    let mut report = ValidationReport { lines: Vec::new(), first_violation: None };
    if let Err(e) = cfg.check_shape() {
        report.fail("config", e.to_string());
    }
    let steps = cfg.step_schedule();
    let noise = cfg.noise_schedule();
    for setting in cfg.settings() {
        let name = match setting {
            Setting::Convex => "convex",
            Setting::Nonconvex => "nonconvex",
        };
        report.record(&format!("{name} step sizes {steps}"), validate_schedule(&steps, setting));
        report.record(&format!("{name} noise {noise}"), validate_noise(&noise, &steps, setting));
    }
    if let Some(path) = &cfg.chain.matrix {
        match load_matrix(path) {
            Ok(p) => report.record(&format!("chain {}", path.display()), chain_validity(&p)),
            Err(e) => report.fail("chain", e.to_string()),
        }
    } else if cfg.experiment == ExperimentKind::ArComparison {
        report.lines.push("ok       chain: autoregressive stream, no finite chain to check".into());
    } else {
        let seed = cfg.seeds.first().copied().unwrap_or(0);
        match build_chain_pair(&cfg.chain.pair_config(), seed) {
            Ok(pair) => {
                report.record(&format!("chain P (seed {seed})"), chain_validity(&pair.p));
                report.record(&format!("chain Q (seed {seed})"), chain_validity(&pair.q));
            }
            Err(e) => report.fail("chain", e.to_string()),
        }
    }
    report
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Method {
    Mcgd,
    Sgdt(usize),
}

impl Method {
    fn name(&self) -> String {
        match self {
            Method::Mcgd => "mcgd".into(),
            Method::Sgdt(t) => format!("sgd{t}"),
        }
    }
}

// One per problem, so the size gap is irrelevant.
#[allow(clippy::large_enum_variant)]
enum Source {
    Stream(ARStream),
    Chain(Arc<TransitionMatrix>),
}

struct Problem {
    seed: u64,
    loss: Loss,
    chain_id: String,
    eval: FiniteSumObjective,
    f_star: Option<f64>,
    source: Source,
}

fn loss_name(loss: Loss) -> &'static str {
    match loss {
        Loss::Logistic => "logistic",
        Loss::SigmoidSq => "sigmoid_sq",
        Loss::LeastSquares => "least_squares",
    }
}

fn experiment_name(kind: ExperimentKind) -> &'static str {
    match kind {
        ExperimentKind::ArComparison => "ar",
        ExperimentKind::ChainComparison => "chain",
        ExperimentKind::Custom => "custom",
    }
}

fn sample_components(samples: &[(crate::objectives::Vector, f64)], loss: Loss) -> Vec<Arc<dyn Component>> {
    samples
        .iter()
        .map(|(xi, y)| -> Arc<dyn Component> {
            match loss {
                Loss::Logistic => Arc::new(LogisticLoss { features: xi.clone(), label: *y }),
                Loss::SigmoidSq => Arc::new(SigmoidSquaredLoss { features: xi.clone(), label: *y }),
                Loss::LeastSquares => Arc::new(crate::objectives::LeastSquaresRow { features: xi.clone(), target: *y }),
            }
        })
        .collect()
}

fn feasible_set(cfg: &ExperimentConfig, loss: Loss, dimension: usize) -> crate::error::Result<FeasibleSet> {
    match setting_of(loss) {
        Setting::Convex => FeasibleSet::centered_ball(dimension, cfg.objective.radius),
        Setting::Nonconvex => Ok(FeasibleSet::FullSpace),
    }
}

fn finish_problem(
    cfg: &ExperimentConfig,
    seed: u64,
    loss: Loss,
    chain_id: String,
    components: Vec<Arc<dyn Component>>,
    source: Source,
) -> crate::error::Result<Problem> {
    let dimension = components.first().map_or(0, |c| c.dimension());
    let eval = assemble_finite_sum(components, feasible_set(cfg, loss, dimension)?)?;
    let f_star = if setting_of(loss) == Setting::Convex { Some(reference_minimum(&eval)?.1) } else { None };
    Ok(Problem { seed, loss, chain_id, eval, f_star, source })
}

/// The reported AR objective averages the loss over held-out samples drawn
/// from an independent copy of the stream after it has become stationary.
fn ar_problem(cfg: &ExperimentConfig, seed: u64, loss: Loss) -> crate::error::Result<Problem> {
    let d = cfg.objective.ar_dimension;
    let stream = ARStream::new(d, seed)?;
    let mut holdout = ARStream::from_parts(
        stream.subdiagonal().to_vec(),
        stream.u().clone(),
        stream.flip_prob(),
        seed ^ HOLDOUT_SALT,
    )?;
    // A is nilpotent of order d, so the state is stationary after d steps.
    for _ in 0..d {
        holdout.next_sample();
    }
    let samples: Vec<_> = (0..cfg.objective.eval_samples).map(|_| holdout.next_sample()).collect();
    finish_problem(cfg, seed, loss, "ar_stream".into(), sample_components(&samples, loss), Source::Stream(stream))
}

fn node_components(data: &NodeDataset, loss: Loss) -> Vec<Arc<dyn Component>> {
    match loss {
        Loss::LeastSquares => data.components(),
        _ => {
            let labelled: Vec<_> = data
                .features
                .iter()
                .map(|x| (x.clone(), if x.dot(&data.beta_star) > 0.0 { 1.0 } else { 0.0 }))
                .collect();
            sample_components(&labelled, loss)
        }
    }
}

fn node_problem(
    cfg: &ExperimentConfig,
    seed: u64,
    loss: Loss,
    chain_id: String,
    chain: Arc<TransitionMatrix>,
) -> crate::error::Result<Problem> {
    let data = make_noisy_node_dataset(chain.size(), cfg.objective.features, cfg.objective.noise_std, seed)?;
    finish_problem(cfg, seed, loss, chain_id, node_components(&data, loss), Source::Chain(chain))
}

struct Cell {
    problem: usize,
    method: Method,
    file: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub file: String,
    pub experiment: String,
    pub loss: String,
    pub method: String,
    pub chain_id: String,
    pub seed: u64,
    pub status: String,
    pub iterations: u64,
    pub samples_consumed: u64,
    pub metric: String,
    pub initial_value: f64,
    pub final_value: f64,
    /// Samples consumed when the metric first fell to each target fraction.
    pub samples_to_target: Vec<Option<u64>>,
    pub step_bound_violations: usize,
    pub clipped_gaps: usize,
}

#[derive(Debug, Clone, Serialize)]
struct ProblemMeta {
    seed: u64,
    loss: String,
    chain_id: String,
    f_star: Option<f64>,
    grad_bound_d: Option<f64>,
    value_bound_h: Option<f64>,
    lipschitz_grad_l: Option<f64>,
}

#[derive(Serialize)]
struct RunMeta<'a> {
    experiment: &'a str,
    config: &'a ExperimentConfig,
    target_fractions: [f64; 3],
    chains: Vec<ChainMeta>,
    problems: Vec<ProblemMeta>,
    runs: &'a [RunSummary],
    total_samples: u64,
    total_iterations: u64,
    failures: Vec<String>,
}

/// What `run` produced; `failures` lists runs that errored while the rest of
/// the batch completed.
#[derive(Debug, Clone)]
pub struct BatchOutcome {
    pub files: Vec<PathBuf>,
    pub runs: Vec<RunSummary>,
    pub failures: Vec<String>,
}

fn gate(cfg: &ExperimentConfig) -> CmdResult<()> {
    cfg.check_shape()?;
    if cfg.unsafe_schedule {
        return Ok(());
    }
    let steps = cfg.step_schedule();
    let noise = cfg.noise_schedule();
    for setting in cfg.settings() {
        for v in [validate_schedule(&steps, setting), validate_noise(&noise, &steps, setting)] {
            if let Validity::Invalid { condition, reason } = v {
                return Err(Failure::Validation(format!("{condition}: {reason}")));
            }
        }
    }
    Ok(())
}

fn run_cell(cfg: &ExperimentConfig, p: &Problem, method: Method) -> crate::error::Result<RunRecord> {
    let opts = RunOptions {
        setting: setting_of(p.loss),
        iterations: cfg.iterations,
        x0: None,
        start_state: 0,
        seed: p.seed,
        log_every: cfg.log_every,
        unsafe_schedule: cfg.unsafe_schedule,
        chain_id: p.chain_id.clone(),
    };
    let steps = cfg.step_schedule();
    let noise = cfg.noise_schedule();
    match (&p.source, method) {
        (Source::Stream(s), Method::Mcgd) => run_ar_mcgd(&p.eval, s.clone(), p.loss, &steps, &noise, &opts),
        (Source::Stream(s), Method::Sgdt(t)) => run_ar_sgdt(&p.eval, s, p.loss, t, &steps, &opts),
        (Source::Chain(c), Method::Mcgd) => run_mcgd(&p.eval, c, &steps, &noise, &opts),
        (Source::Chain(c), Method::Sgdt(t)) => run_sgdt(&p.eval, c, t, &steps, &opts),
    }
}

// (samples_consumed, metric) per logged row plus the initial value.
fn metric_series(p: &Problem, rec: &RunRecord) -> (&'static str, f64, Vec<(u64, f64)>, usize) {
    match p.f_star {
        Some(f_star) => {
            let gaps = gap_series(rec, f_star);
            let pts = gaps.points.iter().map(|g| (g.samples_consumed, g.ergodic_gap)).collect();
            ("ergodic_gap", (rec.initial_f - f_star).max(0.0), pts, gaps.clipped)
        }
        None => {
            let pts = rec.rows.iter().map(|r| (r.samples_consumed, r.min_grad_norm_sq)).collect();
            ("min_grad_norm_sq", rec.initial_grad_norm.powi(2), pts, 0)
        }
    }
}

fn opt_cell(v: Option<u64>) -> String {
    v.map_or(String::new(), |s| s.to_string())
}

/// Runs the configured batch. Each (problem, method) cell is isolated: a
/// failing cell is reported in the summary while the others still run.
pub fn cmd_run(cfg: &ExperimentConfig, out: &Path) -> CmdResult<BatchOutcome> {
    gate(cfg)?;
    let exp = experiment_name(cfg.experiment);
    let mut failures = Vec::new();
    let mut chains = Vec::new();
    let mut problems = Vec::new();
    let mut methods = vec![Method::Mcgd];
    if cfg.experiment != ExperimentKind::ChainComparison {
        methods.extend(cfg.sgdt.t_list.iter().map(|&t| Method::Sgdt(t)));
    }
    let custom_chain = match (&cfg.chain.matrix, cfg.experiment) {
        (Some(path), ExperimentKind::Custom) => Some(Arc::new(load_matrix(path)?)),
        _ => None,
    };
    if let Some(chain) = &custom_chain {
        if let Validity::Invalid { condition, reason } = chain_validity(chain) {
            return Err(Failure::Validation(format!("{condition}: {reason}")));
        }
    }

    for &seed in &cfg.seeds {
        let built: crate::error::Result<Vec<Problem>> = (|| match cfg.experiment {
            ExperimentKind::ArComparison => cfg.losses().into_iter().map(|l| ar_problem(cfg, seed, l)).collect(),
            ExperimentKind::ChainComparison => {
                let pair = build_chain_pair(&cfg.chain.pair_config(), seed)?;
                chains.push(chain_meta(&pair, seed)?);
                let p = node_problem(cfg, seed, Loss::LeastSquares, "P".into(), Arc::new(pair.p))?;
                let q = node_problem(cfg, seed, Loss::LeastSquares, "Q".into(), Arc::new(pair.q))?;
                Ok(vec![p, q])
            }
            ExperimentKind::Custom => {
                let chain = match &custom_chain {
                    Some(c) => c.clone(),
                    None => Arc::new(build_chain_pair(&cfg.chain.pair_config(), seed)?.p),
                };
                let id = if custom_chain.is_some() { "matrix" } else { "P" };
                Ok(vec![node_problem(cfg, seed, cfg.objective.loss, id.into(), chain)?])
            }
        })();
        match built {
            Ok(ps) => problems.extend(ps),
            Err(e) => failures.push(format!("seed {seed}: setup failed: {e}")),
        }
    }

    let mut cells = Vec::new();
    for (i, p) in problems.iter().enumerate() {
        for &m in &methods {
            let file = match cfg.experiment {
                ExperimentKind::ChainComparison => format!("{exp}_{}_seed{}.csv", p.chain_id, p.seed),
                _ => format!("{exp}_{}_{}_seed{}.csv", loss_name(p.loss), m.name(), p.seed),
            };
            cells.push(Cell { problem: i, method: m, file });
        }
    }

    let results: Vec<Mutex<Option<crate::error::Result<RunRecord>>>> = cells.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(cells.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(cell) = cells.get(i) else { break };
                let r = run_cell(cfg, &problems[cell.problem], cell.method);
                *results[i].lock().unwrap_or_else(|e| e.into_inner()) = Some(r);
            });
        }
    });

    let mut files = Vec::new();
    let mut runs = Vec::new();
    let mut plot = String::from(PLOT_HEADER);
    plot.push('\n');
    for (cell, slot) in cells.iter().zip(results) {
        let p = &problems[cell.problem];
        let result = slot.into_inner().unwrap_or_else(|e| e.into_inner()).expect("every cell runs");
        let mut summary = RunSummary {
            file: cell.file.clone(),
            experiment: exp.into(),
            loss: loss_name(p.loss).into(),
            method: cell.method.name(),
            chain_id: p.chain_id.clone(),
            seed: p.seed,
            status: "ok".into(),
            iterations: 0,
            samples_consumed: 0,
            metric: String::new(),
            initial_value: f64::NAN,
            final_value: f64::NAN,
            samples_to_target: vec![None; TARGET_FRACTIONS.len()],
            step_bound_violations: 0,
            clipped_gaps: 0,
        };
        match result {
            Err(e) => {
                summary.status = "failed".into();
                failures.push(format!("{}: {e}", cell.file));
            }
            Ok(rec) => {
                files.push(write_file(out, &cell.file, &rec.to_csv())?);
                let (metric, initial, series, clipped) = metric_series(p, &rec);
                for &(s, v) in &series {
                    let _ = writeln!(plot, "{exp},{},{},{},{s},{metric},{v}", summary.loss, summary.method, p.seed);
                }
                summary.iterations = rec.iterations();
                summary.samples_consumed = rec.samples_consumed();
                summary.metric = metric.into();
                summary.initial_value = initial;
                summary.final_value = series.last().map_or(f64::NAN, |s| s.1);
                summary.samples_to_target = TARGET_FRACTIONS
                    .iter()
                    .map(|f| series.iter().find(|(_, v)| *v <= f * initial).map(|(s, _)| *s))
                    .collect();
                summary.step_bound_violations = rec.step_bound_violations;
                summary.clipped_gaps = clipped;
            }
        }
        runs.push(summary);
    }

    let mut csv = String::from(SUMMARY_HEADER);
    csv.push('\n');
    for r in &runs {
        let ok = r.status == "ok";
        let num = |v: f64| if ok { v.to_string() } else { String::new() };
        let int = |v: u64| if ok { v.to_string() } else { String::new() };
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.experiment,
            r.loss,
            r.method,
            r.seed,
            r.status,
            int(r.iterations),
            int(r.samples_consumed),
            r.metric,
            num(r.initial_value),
            num(r.final_value),
            opt_cell(r.samples_to_target[0]),
            opt_cell(r.samples_to_target[1]),
            opt_cell(r.samples_to_target[2]),
        );
    }
    files.push(write_file(out, "summary.csv", &csv)?);
    files.push(write_file(out, "plot_data.csv", &plot)?);

    let mut echoed = cfg.clone();
    echoed.output_dir = None;
    let meta = RunMeta {
        experiment: exp,
        config: &echoed,
        target_fractions: TARGET_FRACTIONS,
        chains,
        problems: problems
            .iter()
            .map(|p| ProblemMeta {
                seed: p.seed,
                loss: loss_name(p.loss).into(),
                chain_id: p.chain_id.clone(),
                f_star: p.f_star,
                grad_bound_d: p.eval.grad_bound_d,
                value_bound_h: p.eval.value_bound_h,
                lipschitz_grad_l: p.eval.lipschitz_grad_l,
            })
            .collect(),
        runs: &runs,
        total_samples: runs.iter().map(|r| r.samples_consumed).sum(),
        total_iterations: runs.iter().map(|r| r.iterations).sum(),
        failures: failures.clone(),
    };
    files.push(write_file(out, "metadata.json", &to_json(&meta)?)?);
    Ok(BatchOutcome { files, runs, failures })
}
