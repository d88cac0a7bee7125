//! Markov chain gradient descent and the SGD-T baseline.
//!
//! One iteration is
//!
//! ```text
//! x^k = Proj_X( x^{k-1} − γ_k (∇f_{j_k}(x^{k-1}) + e^k) ),   k = 1, 2, …
//! ```
//!
//! where `j_k` is the next state of a single chain trajectory (MCGD) or the
//! `T`-th state of a fresh trajectory (SGD-T), and `e^k` is an optional
//! gradient error. On the full space the projection is the identity.

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::data::ARStream;
use crate::error::{Error, Result};
use crate::markov::{classify_chain, sgdt_sample_with, ChainWalker, TransitionMatrix};
use crate::objectives::{
    least_squares_component, logistic_component, project, sigmoid_sq_component, FeasibleSet, FiniteSumObjective,
    Vector,
};
use crate::rng::{self, RepoRng};

// Stream ids: 0 drives the MCGD walker, SGDT_STREAM + k the fresh trajectory
// of SGD-T iteration k, NOISE_STREAM the noise directions.
const SGDT_STREAM: u64 = 1 << 32;
const NOISE_STREAM: u64 = 1 << 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    Convex,
    Nonconvex,
}

/// `γ_k = a·k^{−q}` or `γ_k = a`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum StepSchedule {
    Power { a: f64, q: f64 },
    Constant { a: f64 },
}

impl StepSchedule {
    pub fn power(a: f64, q: f64) -> Self {
        StepSchedule::Power { a, q }
    }

    pub fn gamma(&self, k: u64) -> f64 {
        match *self {
            StepSchedule::Power { a, q } => a * (k as f64).powf(-q),
            StepSchedule::Constant { a } => a,
        }
    }

    fn scale(&self) -> f64 {
        match *self {
            StepSchedule::Power { a, .. } | StepSchedule::Constant { a } => a,
        }
    }

    // Decay exponent: Σγ_k k^{-s} converges iff exponent + s > 1.
    fn exponent(&self) -> f64 {
        match *self {
            StepSchedule::Power { q, .. } => q,
            StepSchedule::Constant { .. } => 0.0,
        }
    }

    /// `Σγ_k = ∞` and `Σ ln k · γ_k² < ∞`.
    pub fn satisfies_convex(&self) -> bool {
        self.satisfies_step_conditions()
    }

    /// `Σγ_k = ∞` and `Σ ln²k · γ_k² < ∞`.
    pub fn satisfies_nonconvex(&self) -> bool {
        self.satisfies_step_conditions()
    }

    // Integral test: Σ k^{-q} diverges iff q <= 1; Σ lnʲk · k^{-2q} converges
    // iff 2q > 1 for any fixed power j of the log.
    fn satisfies_step_conditions(&self) -> bool {
        let q = self.exponent();
        self.scale() > 0.0 && q <= 1.0 && 2.0 * q > 1.0
    }
}

impl fmt::Display for StepSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StepSchedule::Power { a, q } => write!(f, "power(a={a}, q={q})"),
            StepSchedule::Constant { a } => write!(f, "constant(a={a})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseDirection {
    SeededRandomUnit,
    Fixed(Vec<f64>),
}

/// Gradient error with `‖e^k‖ = c·k^{−p}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum NoiseSchedule {
    None,
    Power { c: f64, p: f64, direction: NoiseDirection },
}

impl NoiseSchedule {
    pub fn power(c: f64, p: f64) -> Self {
        NoiseSchedule::Power { c, p, direction: NoiseDirection::SeededRandomUnit }
    }

    pub fn magnitude(&self, k: u64) -> f64 {
        match *self {
            NoiseSchedule::None => 0.0,
            NoiseSchedule::Power { c, p, .. } => c * (k as f64).powf(-p),
        }
    }

    pub fn is_none(&self) -> bool {
        match self {
            NoiseSchedule::None => true,
            NoiseSchedule::Power { c, .. } => *c == 0.0,
        }
    }

    /// `Σ ‖e^k‖² / ln k < ∞`, i.e. `p > 1/2`.
    pub fn satisfies_convex(&self) -> bool {
        match *self {
            _ if self.is_none() => true,
            NoiseSchedule::Power { p, .. } => 2.0 * p > 1.0,
            NoiseSchedule::None => true,
        }
    }

    /// `Σ γ_k ‖e^k‖ < ∞`, i.e. `p + q > 1` for power families.
    pub fn satisfies_nonconvex(&self, steps: &StepSchedule) -> bool {
        match *self {
            _ if self.is_none() => true,
            NoiseSchedule::Power { p, .. } => p + steps.exponent() > 1.0,
            NoiseSchedule::None => true,
        }
    }
}

impl fmt::Display for NoiseSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NoiseSchedule::None => write!(f, "none"),
            NoiseSchedule::Power { c, p, .. } => write!(f, "power(c={c}, p={p})"),
        }
    }
}

/// A named convergence condition that a configuration can violate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    /// Irreducible and aperiodic time-homogeneous chain.
    ErgodicChain,
    ConvexStepSize,
    NonconvexStepSize,
    ConvexNoise,
    NonconvexNoise,
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let text = match self {
            Condition::ErgodicChain => "ergodic chain (irreducible and aperiodic)",
            Condition::ConvexStepSize => "convex step-size condition (sum gamma_k = inf, sum ln(k) gamma_k^2 < inf)",
            Condition::NonconvexStepSize => {
                "nonconvex step-size condition (sum gamma_k = inf, sum ln^2(k) gamma_k^2 < inf)"
            }
            Condition::ConvexNoise => "convex noise condition (sum |e^k|^2 / ln(k) < inf)",
            Condition::NonconvexNoise => "nonconvex noise condition (sum gamma_k |e^k| < inf)",
        };
        f.write_str(text)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Validity {
    Valid,
    Invalid { condition: Condition, reason: String },
}

impl Validity {
    pub fn is_valid(&self) -> bool {
        matches!(self, Validity::Valid)
    }
}

pub fn validate_schedule(s: &StepSchedule, setting: Setting) -> Validity {
    let (ok, condition) = match setting {
        Setting::Convex => (s.satisfies_convex(), Condition::ConvexStepSize),
        Setting::Nonconvex => (s.satisfies_nonconvex(), Condition::NonconvexStepSize),
    };
    if ok {
        return Validity::Valid;
    }
    let reason = match *s {
        StepSchedule::Constant { .. } => "constant steps are summable in square only if zero".to_string(),
        StepSchedule::Power { a, .. } if !(a > 0.0) => format!("scale a = {a} must be positive"),
        StepSchedule::Power { q, .. } if q > 1.0 => format!("q = {q} > 1 makes sum gamma_k finite"),
        StepSchedule::Power { q, .. } => format!("q = {q} <= 1/2 makes the log-weighted square sum diverge"),
    };
    Validity::Invalid { condition, reason }
}

pub fn validate_noise(noise: &NoiseSchedule, steps: &StepSchedule, setting: Setting) -> Validity {
    let (ok, condition) = match setting {
        Setting::Convex => (noise.satisfies_convex(), Condition::ConvexNoise),
        Setting::Nonconvex => (noise.satisfies_nonconvex(steps), Condition::NonconvexNoise),
    };
    if ok {
        Validity::Valid
    } else {
        Validity::Invalid { condition, reason: format!("noise {noise} with steps {steps}") }
    }
}

/// Run parameters shared by every solver entry point.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub setting: Setting,
    pub iterations: usize,
    /// Defaults to the zero vector.
    pub x0: Option<Vector>,
    pub start_state: usize,
    pub seed: u64,
    pub log_every: usize,
    /// Skip the step-size and noise gates.
    pub unsafe_schedule: bool,
    pub chain_id: String,
}

impl RunOptions {
    pub fn new(setting: Setting, iterations: usize, seed: u64) -> Self {
        RunOptions {
            setting,
            iterations,
            x0: None,
            start_state: 0,
            seed,
            log_every: 1,
            unsafe_schedule: false,
            chain_id: String::new(),
        }
    }
}

/// One logged iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub k: u64,
    pub samples_consumed: u64,
    pub f_value: f64,
    pub ergodic_f_value: f64,
    pub grad_norm: f64,
    pub min_grad_norm_sq: f64,
    pub step_norm: f64,
    pub gamma_k: f64,
}

pub const RUN_CSV_HEADER: &str = "k,samples_consumed,f_value,ergodic_f_value,grad_norm,min_grad_norm_sq,step_norm,gamma_k";

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub method: String,
    pub chain_id: String,
    pub seed: u64,
    pub schedule: StepSchedule,
    pub noise: NoiseSchedule,
    pub samples_per_iteration: u64,
    pub initial_f: f64,
    pub initial_grad_norm: f64,
    pub rows: Vec<RunRow>,
    pub iterates_logged: Vec<Vector>,
    pub ergodic_logged: Vec<Vector>,
    pub final_x: Vector,
    pub final_ergodic: Vector,
    /// Iterations where `‖Δ^k‖ > D·γ_k` (only checked without noise).
    pub step_bound_violations: usize,
}

impl RunRecord {
    pub fn iterations(&self) -> u64 {
        self.rows.last().map_or(0, |r| r.k)
    }

    pub fn samples_consumed(&self) -> u64 {
        self.rows.last().map_or(0, |r| r.samples_consumed)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.rows.len() + 1));
        out.push_str(RUN_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.k,
                r.samples_consumed,
                r.f_value,
                r.ergodic_f_value,
                r.grad_norm,
                r.min_grad_norm_sq,
                r.step_norm,
                r.gamma_k
            );
        }
        out
    }
}

/// Parses the CSV written by [`RunRecord::to_csv`].
pub fn parse_run_csv(text: &str) -> Result<Vec<RunRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == RUN_CSV_HEADER => {}
        other => return Err(Error::Parse(format!("unexpected header {other:?}"))),
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != 8 {
                return Err(Error::Parse(format!("row {i}: expected 8 columns, found {}", cells.len())));
            }
            let int = |s: &str| s.parse::<u64>().map_err(|_| Error::Parse(format!("row {i}: bad integer {s:?}")));
            let num = |s: &str| s.parse::<f64>().map_err(|_| Error::Parse(format!("row {i}: bad number {s:?}")));
            Ok(RunRow {
                k: int(cells[0])?,
                samples_consumed: int(cells[1])?,
                f_value: num(cells[2])?,
                ergodic_f_value: num(cells[3])?,
                grad_norm: num(cells[4])?,
                min_grad_norm_sq: num(cells[5])?,
                step_norm: num(cells[6])?,
                gamma_k: num(cells[7])?,
            })
        })
        .collect()
}

/// Which per-sample loss a streamed run applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    Logistic,
    SigmoidSq,
    LeastSquares,
}

impl Loss {
    pub fn gradient(&self, x: &Vector, features: &Vector, label: f64) -> Vector {
        match self {
            Loss::Logistic => logistic_component(x, features, label).1,
            Loss::SigmoidSq => sigmoid_sq_component(x, features, label).1,
            Loss::LeastSquares => least_squares_component(x, features, label).1,
        }
    }

    pub fn is_convex(&self) -> bool {
        !matches!(self, Loss::SigmoidSq)
    }
}

// Produces the stochastic gradient of iteration k.
trait GradientSource {
    fn next_gradient(&mut self, k: u64, x: &Vector) -> Vector;
    fn samples_per_iteration(&self) -> u64;
}

struct ChainTrajectorySource<'a> {
    obj: &'a FiniteSumObjective,
    walker: ChainWalker<'a>,
}

impl GradientSource for ChainTrajectorySource<'_> {
    fn next_gradient(&mut self, _k: u64, x: &Vector) -> Vector {
        let j = self.walker.step();
        self.obj.component_grad(j, x)
    }
    fn samples_per_iteration(&self) -> u64 {
        1
    }
}

struct FreshChainSource<'a> {
    obj: &'a FiniteSumObjective,
    chain: &'a TransitionMatrix,
    start: usize,
    t: usize,
    seed: u64,
}

impl GradientSource for FreshChainSource<'_> {
    fn next_gradient(&mut self, k: u64, x: &Vector) -> Vector {
        let mut rng = rng::substream(self.seed, SGDT_STREAM + k);
        let j = sgdt_sample_with(self.chain, self.start, self.t, &mut rng);
        self.obj.component_grad(j, x)
    }
    fn samples_per_iteration(&self) -> u64 {
        self.t as u64
    }
}

struct StreamSource {
    stream: ARStream,
    loss: Loss,
}

impl GradientSource for StreamSource {
    fn next_gradient(&mut self, _k: u64, x: &Vector) -> Vector {
        let (xi, y) = self.stream.next_sample();
        self.loss.gradient(x, &xi, y)
    }
    fn samples_per_iteration(&self) -> u64 {
        1
    }
}

struct FreshStreamSource<'a> {
    stream: &'a ARStream,
    loss: Loss,
    t: usize,
    seed: u64,
}

impl GradientSource for FreshStreamSource<'_> {
    fn next_gradient(&mut self, k: u64, x: &Vector) -> Vector {
        let mut rng = rng::substream(self.seed, SGDT_STREAM + k);
        let (xi, y) = self.stream.fresh_sample(self.t, &mut rng);
        self.loss.gradient(x, &xi, y)
    }
    fn samples_per_iteration(&self) -> u64 {
        self.t as u64
    }
}

struct NoiseGenerator {
    schedule: NoiseSchedule,
    rng: RepoRng,
}

impl NoiseGenerator {
    fn sample(&mut self, k: u64, dimension: usize) -> Option<Vector> {
        if self.schedule.is_none() {
            return None;
        }
        let magnitude = self.schedule.magnitude(k);
        let NoiseSchedule::Power { direction, .. } = &self.schedule else { return None };
        let dir = match direction {
            NoiseDirection::Fixed(v) => Vector::from_column_slice(v),
            NoiseDirection::SeededRandomUnit => loop {
                let v = Vector::from_fn(dimension, |_, _| rng::standard_normal(&mut self.rng));
                if v.norm() > 0.0 {
                    break v;
                }
            },
        };
        let n = dir.norm();
        Some(if n > 0.0 { dir * (magnitude / n) } else { dir })
    }
}

fn check_preconditions(
    eval: &FiniteSumObjective,
    schedule: &StepSchedule,
    noise: &NoiseSchedule,
    opts: &RunOptions,
) -> Result<()> {
    if opts.iterations == 0 {
        return Err(Error::PreconditionViolation("iterations must be at least 1".into()));
    }
    if opts.log_every == 0 {
        return Err(Error::PreconditionViolation("log_every must be at least 1".into()));
    }
    if let Some(x0) = &opts.x0 {
        if x0.len() != eval.dimension() {
            return Err(Error::DimensionMismatch { expected: eval.dimension(), found: x0.len() });
        }
    }
    match opts.setting {
        Setting::Convex => {
            if !eval.convex {
                return Err(Error::PreconditionViolation("convex setting needs convex components".into()));
            }
            if !eval.set.is_compact() {
                return Err(Error::PreconditionViolation("convex setting needs a compact feasible set".into()));
            }
        }
        Setting::Nonconvex => {
            if eval.set.is_compact() {
                return Err(Error::PreconditionViolation("nonconvex setting runs on the full space".into()));
            }
            if eval.grad_bound_d.is_none() {
                return Err(Error::PreconditionViolation("nonconvex setting needs a gradient bound D".into()));
            }
        }
    }
    if !opts.unsafe_schedule {
        for v in [validate_schedule(schedule, opts.setting), validate_noise(noise, schedule, opts.setting)] {
            if let Validity::Invalid { condition, reason } = v {
                return Err(Error::PreconditionViolation(format!("{condition}: {reason}")));
            }
        }
    }
    Ok(())
}

fn check_chain(chain: &TransitionMatrix, obj: &FiniteSumObjective, start: usize) -> Result<()> {
    if chain.size() != obj.m() {
        return Err(Error::DimensionMismatch { expected: obj.m(), found: chain.size() });
    }
    if start >= chain.size() {
        return Err(Error::StateOutOfRange { index: start, size: chain.size() });
    }
    if !classify_chain(chain).is_ergodic() {
        return Err(Error::PreconditionViolation(format!("{}", Condition::ErgodicChain)));
    }
    Ok(())
}

fn drive<S: GradientSource>(
    method: String,
    eval: &FiniteSumObjective,
    mut source: S,
    schedule: &StepSchedule,
    noise: &NoiseSchedule,
    opts: &RunOptions,
) -> Result<RunRecord> {
    let set: &FeasibleSet = &eval.set;
    let dim = eval.dimension();
    let mut x = project(set, &opts.x0.clone().unwrap_or_else(|| Vector::zeros(dim)))?;
    let initial_f = eval.value(&x);
    let initial_grad_norm = eval.gradient(&x).norm();
    let mut noise_gen = NoiseGenerator { schedule: noise.clone(), rng: rng::substream(opts.seed, NOISE_STREAM) };
    let check_steps = noise.is_none();
    let d_bound = eval.grad_bound_d;

    let mut weighted = Vector::zeros(dim);
    let mut gamma_sum = 0.0;
    let mut samples = 0u64;
    let mut min_grad_sq = f64::INFINITY;
    let mut rows = Vec::new();
    let mut iterates_logged = Vec::new();
    let mut ergodic_logged = Vec::new();
    let mut violations = 0;
    let n = opts.iterations as u64;

    for k in 1..=n {
        let gamma = schedule.gamma(k);
        let mut g = source.next_gradient(k, &x);
        if let Some(e) = noise_gen.sample(k, dim) {
            g += e;
        }
        let mut next = &x - g * gamma;
        set.project_in_place(&mut next);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteIterate { k: k as usize });
        }
        let step = (&next - &x).norm();
        if check_steps {
            if let Some(d) = d_bound {
                if step > d * gamma * (1.0 + 1e-12) + 1e-300 {
                    violations += 1;
                }
            }
        }
        x = next;
        weighted.axpy(gamma, &x, 1.0);
        gamma_sum += gamma;
        samples += source.samples_per_iteration();

        if k == 1 || k % opts.log_every as u64 == 0 || k == n {
            let ergodic = &weighted / gamma_sum;
            let grad_norm = eval.gradient(&x).norm();
            min_grad_sq = min_grad_sq.min(grad_norm * grad_norm);
            rows.push(RunRow {
                k,
                samples_consumed: samples,
                f_value: eval.value(&x),
                ergodic_f_value: eval.value(&ergodic),
                grad_norm,
                min_grad_norm_sq: min_grad_sq,
                step_norm: step,
                gamma_k: gamma,
            });
            iterates_logged.push(x.clone());
            ergodic_logged.push(ergodic);
        }
    }
    let final_ergodic = &weighted / gamma_sum;
    Ok(RunRecord {
        method,
        chain_id: opts.chain_id.clone(),
        seed: opts.seed,
        schedule: *schedule,
        noise: noise.clone(),
        samples_per_iteration: source.samples_per_iteration(),
        initial_f,
        initial_grad_norm,
        rows,
        iterates_logged,
        ergodic_logged,
        final_x: x,
        final_ergodic,
        step_bound_violations: violations,
    })
}

/// MCGD on a finite-sum objective: `j_k` follows one trajectory of `chain`
/// from `opts.start_state`.
pub fn run_mcgd(
    obj: &FiniteSumObjective,
    chain: &TransitionMatrix,
    schedule: &StepSchedule,
    noise: &NoiseSchedule,
    opts: &RunOptions,
) -> Result<RunRecord> {
    check_chain(chain, obj, opts.start_state)?;
    check_preconditions(obj, schedule, noise, opts)?;
    let walker = ChainWalker::new(chain, opts.start_state, rng::seeded(opts.seed))?;
    drive("mcgd".into(), obj, ChainTrajectorySource { obj, walker }, schedule, noise, opts)
}

/// SGD-T: each `j_k` is the `T`-th state of a fresh trajectory from
/// `opts.start_state`, charging `T` samples per iteration.
pub fn run_sgdt(
    obj: &FiniteSumObjective,
    chain: &TransitionMatrix,
    t: usize,
    schedule: &StepSchedule,
    opts: &RunOptions,
) -> Result<RunRecord> {
    if t == 0 {
        return Err(Error::PreconditionViolation("T must be at least 1".into()));
    }
    check_chain(chain, obj, opts.start_state)?;
    let noise = NoiseSchedule::None;
    check_preconditions(obj, schedule, &noise, opts)?;
    let source = FreshChainSource { obj, chain, start: opts.start_state, t, seed: opts.seed };
    drive(format!("sgd{t}"), obj, source, schedule, &noise, opts)
}

fn check_stream(eval: &FiniteSumObjective, stream: &ARStream) -> Result<()> {
    if stream.dimension() != eval.dimension() {
        return Err(Error::DimensionMismatch { expected: eval.dimension(), found: stream.dimension() });
    }
    Ok(())
}

/// MCGD on the autoregressive stream, one stream sample per iteration.
/// `eval` only supplies the reported metrics and the feasible set.
pub fn run_ar_mcgd(
    eval: &FiniteSumObjective,
    stream: ARStream,
    loss: Loss,
    schedule: &StepSchedule,
    noise: &NoiseSchedule,
    opts: &RunOptions,
) -> Result<RunRecord> {
    check_stream(eval, &stream)?;
    check_preconditions(eval, schedule, noise, opts)?;
    drive("mcgd".into(), eval, StreamSource { stream, loss }, schedule, noise, opts)
}

/// SGD-T on the autoregressive stream: every iteration restarts from
/// `ξ¹₀ = 0` and uses the `T`-th sample.
pub fn run_ar_sgdt(
    eval: &FiniteSumObjective,
    stream: &ARStream,
    loss: Loss,
    t: usize,
    schedule: &StepSchedule,
    opts: &RunOptions,
) -> Result<RunRecord> {
    if t == 0 {
        return Err(Error::PreconditionViolation("T must be at least 1".into()));
    }
    check_stream(eval, stream)?;
    let noise = NoiseSchedule::None;
    check_preconditions(eval, schedule, &noise, opts)?;
    let source = FreshStreamSource { stream, loss, t, seed: opts.seed };
    drive(format!("sgd{t}"), eval, source, schedule, &noise, opts)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapPoint {
    pub k: u64,
    pub samples_consumed: u64,
    pub gap: f64,
    pub ergodic_gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapSeries {
    pub points: Vec<GapPoint>,
    /// Negative gaps that were clipped to zero.
    pub clipped: usize,
}

/// `f(x^k) − f*` and `f(x̄^k) − f*` against samples consumed.
pub fn gap_series(record: &RunRecord, f_star: f64) -> GapSeries {
    let mut clipped = 0;
    let mut clip = |v: f64| {
        if v < 0.0 {
            clipped += 1;
            0.0
        } else {
            v
        }
    };
    let points = record
        .rows
        .iter()
        .map(|r| GapPoint {
            k: r.k,
            samples_consumed: r.samples_consumed,
            gap: clip(r.f_value - f_star),
            ergodic_gap: clip(r.ergodic_f_value - f_star),
        })
        .collect();
    GapSeries { points, clipped }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares of `ln value` on `ln k` over the trailing half of
/// `series` (pairs `(k, value)`).
pub fn rate_fit(series: &[(f64, f64)]) -> Result<RateFit> {
    if series.len() < 10 {
        return Err(Error::InsufficientData { needed: 10, got: series.len() });
    }
    if series.iter().any(|&(k, v)| !(v > 0.0) || !(k > 0.0)) {
        return Err(Error::NonPositiveValues);
    }
    let tail = &series[series.len() / 2..];
    let pts: Vec<(f64, f64)> = tail.iter().map(|&(k, v)| (k.ln(), v.ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::InsufficientData { needed: 2, got: 1 });
    }
    let slope = sxy / sxx;
    let r_squared = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    Ok(RateFit { slope, intercept: my - slope * mx, r_squared })
}
