//! Finite-state, time-homogeneous Markov chains.
//!
//! A [`TransitionMatrix`] is validated once at construction and immutable
//! afterwards, so it can be shared freely between threads. Sampling carries
//! its own generator state in a [`ChainWalker`].

use std::collections::VecDeque;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{self, RepoRng};

/// Absolute tolerance on each row sum.
pub const ROW_SUM_TOL: f64 = 1e-12;
/// Absolute tolerance for detailed balance `π_i P_ij = π_j P_ji`.
pub const DETAILED_BALANCE_TOL: f64 = 1e-10;

const STATIONARY_TOL: f64 = 1e-13;
const STATIONARY_MAX_ITERS: usize = 1_000_000;

/// Row-stochastic matrix with `P[i][j] = Prob(next = j | current = i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    entries: DMatrix<f64>,
    // Row-wise cumulative sums for inverse-CDF sampling.
    cumulative: DMatrix<f64>,
}

impl TransitionMatrix {
    /// Validates a dense row-major array of probabilities.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.len();
        if m == 0 {
            return Err(Error::EmptyMatrix);
        }
        if let Some(bad) = rows.iter().find(|r| r.len() != m) {
            return Err(Error::NonSquare { rows: m, cols: bad.len() });
        }
        Self::new(DMatrix::from_fn(m, m, |i, j| rows[i][j]))
    }

    /// Validates an `nalgebra` matrix.
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        let (rows, cols) = entries.shape();
        if rows != cols {
            return Err(Error::NonSquare { rows, cols });
        }
        if rows == 0 {
            return Err(Error::EmptyMatrix);
        }
        for i in 0..rows {
            for j in 0..cols {
                let v = entries[(i, j)];
                if !(v >= 0.0) || !v.is_finite() {
                    return Err(Error::NegativeEntry { row: i, col: j, value: v });
                }
            }
            let sum: f64 = entries.row(i).iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::RowSumViolation { row: i, sum });
            }
        }
        let mut cumulative = entries.clone();
        for i in 0..rows {
            let mut acc = 0.0;
            for j in 0..cols {
                acc += entries[(i, j)];
                cumulative[(i, j)] = acc;
            }
        }
        Ok(TransitionMatrix { entries, cumulative })
    }

    pub fn size(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        let m = self.size();
        (0..m).all(|i| (0..i).all(|j| (self.entries[(i, j)] - self.entries[(j, i)]).abs() <= tol))
    }

    /// Draws the successor of `state` by inverse-CDF sampling.
    pub fn next_state<R: Rng + ?Sized>(&self, state: usize, rng: &mut R) -> usize {
        let u = rng::uniform(rng);
        let m = self.size();
        let row = self.cumulative.row(state);
        let mut lo = 0;
        let mut hi = m;
        // First column whose cumulative sum exceeds u.
        while lo < hi {
            let mid = (lo + hi) / 2;
            if row[mid] > u {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        if lo >= m {
            // u landed in the rounding slack above the final cumulative sum.
            lo = m - 1;
        }
        while self.entries[(state, lo)] == 0.0 {
            lo = if lo == 0 { m - 1 } else { lo - 1 };
        }
        lo
    }

    /// Parses the plain-text format: `M` on the first line, then `M` rows of
    /// `M` whitespace-separated probabilities.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let header = lines.next().ok_or_else(|| Error::Parse("empty input".into()))?;
        let m: usize = header
            .parse()
            .map_err(|_| Error::Parse(format!("bad size line {header:?}")))?;
        if m == 0 {
            return Err(Error::EmptyMatrix);
        }
        let mut rows = Vec::with_capacity(m);
        for (i, line) in lines.enumerate() {
            if i >= m {
                return Err(Error::Parse(format!("more than {m} rows")));
            }
            let row = line
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| Error::Parse(format!("bad number {t:?} on row {i}"))))
                .collect::<Result<Vec<f64>>>()?;
            if row.len() != m {
                return Err(Error::NonSquare { rows: m, cols: row.len() });
            }
            rows.push(row);
        }
        if rows.len() != m {
            return Err(Error::Parse(format!("expected {m} rows, found {}", rows.len())));
        }
        Self::from_rows(&rows)
    }

    /// Serializes with shortest round-trip float formatting.
    pub fn to_text(&self) -> String {
        let m = self.size();
        let mut out = format!("{m}\n");
        for i in 0..m {
            for j in 0..m {
                if j > 0 {
                    out.push(' ');
                }
                let _ = write!(out, "{}", self.entries[(i, j)]);
            }
            out.push('\n');
        }
        out
    }
}

/// Structural and stationary properties of a chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainClassification {
    pub irreducible: bool,
    pub aperiodic: bool,
    /// Detailed balance against `stationary`; always false when the chain is
    /// not ergodic.
    pub reversible: bool,
    /// `None` when the chain is reducible or periodic.
    pub stationary: Option<Vec<f64>>,
    /// Period of each state; 0 marks a state with no return path.
    pub period_per_state: Vec<usize>,
}

impl ChainClassification {
    pub fn is_ergodic(&self) -> bool {
        self.irreducible && self.aperiodic
    }
}

fn successors(p: &TransitionMatrix) -> Vec<Vec<usize>> {
    let m = p.size();
    (0..m).map(|i| (0..m).filter(|&j| p.get(i, j) > 0.0).collect()).collect()
}

fn bfs_levels(adj: &[Vec<usize>], source: usize) -> Vec<Option<usize>> {
    let mut level = vec![None; adj.len()];
    level[source] = Some(0);
    let mut queue = VecDeque::from([source]);
    while let Some(u) = queue.pop_front() {
        let next = level[u].unwrap() + 1;
        for &v in &adj[u] {
            if level[v].is_none() {
                level[v] = Some(next);
                queue.push_back(v);
            }
        }
    }
    level
}

fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Classifies irreducibility, periodicity and reversibility.
///
/// Periods use the BFS-level method: inside the strongly connected class of
/// state `i`, the period is the gcd of `level(u) + 1 - level(v)` over every
/// edge `u -> v` of that class.
pub fn classify_chain(p: &TransitionMatrix) -> ChainClassification {
    let m = p.size();
    let adj = successors(p);
    let reach: Vec<Vec<bool>> = (0..m)
        .map(|i| bfs_levels(&adj, i).into_iter().map(|l| l.is_some()).collect())
        .collect();
    let irreducible = (0..m).all(|j| reach[0][j] && reach[j][0]);

    let mut period_per_state = vec![0usize; m];
    for i in 0..m {
        let in_class: Vec<bool> = (0..m).map(|j| reach[i][j] && reach[j][i]).collect();
        let level = bfs_levels(&adj, i);
        let mut g = 0usize;
        for u in (0..m).filter(|&u| in_class[u]) {
            let lu = level[u].unwrap();
            for &v in adj[u].iter().filter(|&&v| in_class[v]) {
                let lv = level[v].unwrap();
                g = gcd(g, (lu + 1).abs_diff(lv));
            }
        }
        period_per_state[i] = g;
    }
    let aperiodic = period_per_state.iter().all(|&d| d == 1);

    let stationary = if irreducible && aperiodic { stationary_distribution(p).ok() } else { None };
    let reversible = stationary.as_deref().is_some_and(|pi| satisfies_detailed_balance(p, pi, DETAILED_BALANCE_TOL));
    ChainClassification { irreducible, aperiodic, reversible, stationary, period_per_state }
}

/// Direct double-loop check of `|π_i P_ij − π_j P_ji| <= tol`.
pub fn satisfies_detailed_balance(p: &TransitionMatrix, pi: &[f64], tol: f64) -> bool {
    let m = p.size();
    (0..m).all(|i| (0..m).all(|j| (pi[i] * p.get(i, j) - pi[j] * p.get(j, i)).abs() <= tol))
}

fn stationary_residual(p: &TransitionMatrix, v: &DVector<f64>) -> f64 {
    let vp = p.entries().tr_mul(v);
    (vp - v).abs().sum()
}

fn stationary_by_power(p: &TransitionMatrix) -> Option<DVector<f64>> {
    let m = p.size();
    let pt = p.entries().transpose();
    let mut v = DVector::from_element(m, 1.0 / m as f64);
    for _ in 0..STATIONARY_MAX_ITERS {
        let mut next = &pt * &v;
        let s = next.sum();
        next /= s;
        let diff = (&next - &v).abs().sum();
        v = next;
        if diff <= STATIONARY_TOL {
            return Some(v);
        }
    }
    None
}

fn stationary_by_solve(p: &TransitionMatrix) -> Option<DVector<f64>> {
    let m = p.size();
    let mut a = p.entries().transpose() - DMatrix::identity(m, m);
    for j in 0..m {
        a[(m - 1, j)] = 1.0;
    }
    let mut b = DVector::zeros(m);
    b[m - 1] = 1.0;
    let mut v = a.lu().solve(&b)?;
    if v.iter().any(|x| !x.is_finite() || *x < -1e-12) {
        return None;
    }
    v.apply(|x| *x = x.max(0.0));
    let s = v.sum();
    Some(v / s)
}

/// Stationary distribution of an irreducible aperiodic chain.
///
/// Power iteration on `v ↦ vP` runs to an ℓ₁ step below 1e-13; the direct
/// solve of `(Pᵀ − I)v = 0, Σv = 1` serves as fallback and as a polish, and
/// whichever candidate has the smaller residual `‖vP − v‖₁` is returned.
pub fn stationary_distribution(p: &TransitionMatrix) -> Result<Vec<f64>> {
    let class = structural(p);
    if !class {
        return Err(Error::NotErgodic);
    }
    let candidates = [stationary_by_power(p), stationary_by_solve(p)];
    let best = candidates
        .into_iter()
        .flatten()
        .map(|v| (stationary_residual(p, &v), v))
        .min_by(|a, b| a.0.total_cmp(&b.0));
    match best {
        Some((res, v)) if res <= 1e-10 => Ok(v.iter().copied().collect()),
        Some((res, _)) => Err(Error::NoConvergence(format!("stationary residual {res:e}"))),
        None => Err(Error::NoConvergence("stationary distribution".into())),
    }
}

// Irreducible and aperiodic, without computing the stationary vector.
fn structural(p: &TransitionMatrix) -> bool {
    let m = p.size();
    let adj = successors(p);
    let from0 = bfs_levels(&adj, 0);
    if from0.iter().any(Option::is_none) {
        return false;
    }
    let mut rev = vec![Vec::new(); m];
    for (u, vs) in adj.iter().enumerate() {
        for &v in vs {
            rev[v].push(u);
        }
    }
    if bfs_levels(&rev, 0).iter().any(Option::is_none) {
        return false;
    }
    // Irreducible: one class, so a single BFS gives the period.
    let mut g = 0;
    for (u, vs) in adj.iter().enumerate() {
        for &v in vs {
            g = gcd(g, (from0[u].unwrap() + 1).abs_diff(from0[v].unwrap()));
        }
    }
    g == 1
}

/// `P^k` by repeated squaring; `P^0` is the identity.
pub fn matrix_power(p: &TransitionMatrix, k: u64) -> DMatrix<f64> {
    power_of(p.entries(), k)
}

pub(crate) fn power_of(a: &DMatrix<f64>, mut k: u64) -> DMatrix<f64> {
    let m = a.nrows();
    let mut result = DMatrix::identity(m, m);
    let mut base = a.clone();
    while k > 0 {
        if k & 1 == 1 {
            result = &result * &base;
        }
        k >>= 1;
        if k > 0 {
            base = &base * &base;
        }
    }
    result
}

/// States `j_1 … j_L` visited after `start_state`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trajectory {
    pub states: Vec<usize>,
    pub start_state: usize,
    pub seed: u64,
    pub length: usize,
}

/// A chain position plus the generator that advances it.
#[derive(Debug, Clone)]
pub struct ChainWalker<'a> {
    chain: &'a TransitionMatrix,
    state: usize,
    rng: RepoRng,
}

impl<'a> ChainWalker<'a> {
    pub fn new(chain: &'a TransitionMatrix, start: usize, rng: RepoRng) -> Result<Self> {
        check_state(chain, start)?;
        Ok(ChainWalker { chain, state: start, rng })
    }

    pub fn state(&self) -> usize {
        self.state
    }

    pub fn step(&mut self) -> usize {
        self.state = self.chain.next_state(self.state, &mut self.rng);
        self.state
    }
}

fn check_state(p: &TransitionMatrix, index: usize) -> Result<()> {
    if index >= p.size() {
        return Err(Error::StateOutOfRange { index, size: p.size() });
    }
    Ok(())
}

pub fn sample_trajectory(p: &TransitionMatrix, start: usize, length: usize, seed: u64) -> Result<Trajectory> {
    let mut walker = ChainWalker::new(p, start, rng::seeded(seed))?;
    let states = (0..length).map(|_| walker.step()).collect();
    Ok(Trajectory { states, start_state: start, seed, length })
}

/// The `T`-th state of a fresh trajectory from `start`, drawn with `rng`.
/// Consumes exactly `t` chain steps.
pub fn sgdt_sample_with<R: Rng + ?Sized>(p: &TransitionMatrix, start: usize, t: usize, rng: &mut R) -> usize {
    let mut s = start;
    for _ in 0..t {
        s = p.next_state(s, rng);
    }
    s
}

pub fn sgdt_sample(p: &TransitionMatrix, start: usize, t: usize, seed: u64) -> Result<usize> {
    check_state(p, start)?;
    if t == 0 {
        return Err(Error::InvalidArgument("T must be at least 1".into()));
    }
    Ok(sgdt_sample_with(p, start, t, &mut rng::seeded(seed)))
}
