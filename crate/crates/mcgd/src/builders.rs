//! Random graphs, Metropolis–Hastings walks and non-reversible cycle lifts.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::markov::TransitionMatrix;
use crate::mixing::spectral_profile;
use crate::rng::{self, RepoRng};

const MAX_GRAPH_REDRAWS: usize = 1000;
const MAX_CYCLE_ATTEMPTS: usize = 100_000;
// Node expansions allowed in one randomized depth-first search.
const DFS_BUDGET: usize = 2_000;
// Stream ids at and above this value are reserved for cycle search.
const CYCLE_STREAM: u64 = 1 << 40;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UndirectedGraph {
    n: usize,
    adjacency: Vec<Vec<bool>>,
}

impl UndirectedGraph {
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adjacency = vec![vec![false; n]; n];
        for &(u, v) in edges {
            if u >= n || v >= n || u == v {
                return Err(Error::InvalidArgument(format!("bad edge ({u}, {v}) for {n} nodes")));
            }
            adjacency[u][v] = true;
            adjacency[v][u] = true;
        }
        Ok(UndirectedGraph { n, adjacency })
    }

    pub fn complete(n: usize) -> Self {
        let adjacency = (0..n).map(|i| (0..n).map(|j| i != j).collect()).collect();
        UndirectedGraph { n, adjacency }
    }

    pub fn path(n: usize) -> Self {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        Self::from_edges(n, &edges).expect("path edges are valid")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.adjacency[u][v]
    }

    pub fn degree(&self, u: usize) -> usize {
        self.adjacency[u].iter().filter(|&&e| e).count()
    }

    pub fn d_max(&self) -> usize {
        (0..self.n).map(|u| self.degree(u)).max().unwrap_or(0)
    }

    pub fn neighbors(&self, u: usize) -> Vec<usize> {
        (0..self.n).filter(|&v| self.adjacency[u][v]).collect()
    }

    pub fn edge_count(&self) -> usize {
        (0..self.n).map(|u| self.degree(u)).sum::<usize>() / 2
    }

    pub fn is_connected(&self) -> bool {
        if self.n == 0 {
            return true;
        }
        let mut seen = vec![false; self.n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for v in self.neighbors(u) {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// Erdős–Rényi graph with independent edges at `edge_prob`, redrawn on a new
/// substream until connected.
pub fn random_connected_graph(n: usize, edge_prob: f64, seed: u64) -> Result<UndirectedGraph> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 nodes, got {n}")));
    }
    if !(edge_prob > 0.0 && edge_prob <= 1.0) {
        return Err(Error::InvalidArgument(format!("edge probability {edge_prob} outside (0, 1]")));
    }
    for attempt in 0..MAX_GRAPH_REDRAWS {
        let mut rng = rng::substream(seed, attempt as u64);
        let mut edges = Vec::new();
        for u in 0..n {
            for v in (u + 1)..n {
                if rng::uniform(&mut rng) < edge_prob {
                    edges.push((u, v));
                }
            }
        }
        let g = UndirectedGraph::from_edges(n, &edges)?;
        if g.is_connected() {
            return Ok(g);
        }
    }
    Err(Error::ConnectivityTimeout { attempts: MAX_GRAPH_REDRAWS })
}

/// `P_ij = 1/d_max` on edges, `P_ii = 1 − deg(i)/d_max`.
pub fn metropolis_hastings(g: &UndirectedGraph) -> Result<TransitionMatrix> {
    let n = g.n();
    let d_max = g.d_max();
    if d_max == 0 {
        return Err(Error::InvalidArgument("graph has no edges".into()));
    }
    let w = 1.0 / d_max as f64;
    let p = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0 - g.degree(i) as f64 / d_max as f64
        } else if g.has_edge(i, j) {
            w
        } else {
            0.0
        }
    });
    TransitionMatrix::new(p)
}

/// Directed cycles laid over graph edges, weighted by `w0`.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleOverlay {
    v: Vec<Vec<bool>>,
    pub cycles: Vec<Vec<usize>>,
    pub w0: f64,
}

impl CycleOverlay {
    pub fn empty(n: usize, w0: f64) -> Self {
        CycleOverlay { v: vec![vec![false; n]; n], cycles: Vec::new(), w0 }
    }

    /// Orients each listed cycle `c[0] → c[1] → … → c[0]`.
    pub fn from_cycles(g: &UndirectedGraph, cycles: Vec<Vec<usize>>, w0: f64) -> Result<Self> {
        let mut overlay = Self::empty(g.n(), w0);
        for c in cycles {
            if !overlay.accepts(g, &c) {
                return Err(Error::InvalidArgument(format!("cycle {c:?} is not usable on this graph")));
            }
            overlay.insert(c);
        }
        Ok(overlay)
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.v[i][j]
    }

    pub fn edge_count(&self) -> usize {
        self.v.iter().map(|r| r.iter().filter(|&&e| e).count()).sum()
    }

    pub fn n(&self) -> usize {
        self.v.len()
    }

    fn cycle_edges(c: &[usize]) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..c.len()).map(move |i| (c[i], c[(i + 1) % c.len()]))
    }

    // A closed simple cycle on graph edges, sharing no edge (in either
    // direction) with the cycles already placed.
    fn accepts(&self, g: &UndirectedGraph, c: &[usize]) -> bool {
        if c.len() < 3 || c.iter().any(|&u| u >= g.n()) {
            return false;
        }
        let mut seen = vec![false; g.n()];
        for &u in c {
            if seen[u] {
                return false;
            }
            seen[u] = true;
        }
        Self::cycle_edges(c).all(|(u, v)| g.has_edge(u, v) && !self.v[u][v] && !self.v[v][u])
    }

    fn insert(&mut self, c: Vec<usize>) {
        for (u, v) in Self::cycle_edges(&c) {
            self.v[u][v] = true;
        }
        self.cycles.push(c);
    }
}

// Depth-first search for a simple path of `len` nodes starting at `path[0]`
// whose last node is adjacent to the first, with shuffled neighbor order.
fn random_cycle_dfs(g: &UndirectedGraph, len: usize, path: &mut Vec<usize>, budget: &mut usize, rng: &mut RepoRng) -> bool {
    if *budget == 0 {
        return false;
    }
    *budget -= 1;
    let last = *path.last().unwrap();
    if path.len() == len {
        return g.has_edge(last, path[0]);
    }
    let mut next = g.neighbors(last);
    next.shuffle(rng);
    for v in next {
        if path.contains(&v) {
            continue;
        }
        path.push(v);
        if random_cycle_dfs(g, len, path, budget, rng) {
            return true;
        }
        path.pop();
    }
    false
}

/// Places `num_cycles` edge-disjoint directed cycles of length `cycle_len`
/// on edges of `g`.
pub fn add_cycles(g: &UndirectedGraph, num_cycles: usize, cycle_len: usize, w0: f64, seed: u64) -> Result<CycleOverlay> {
    if cycle_len < 3 {
        return Err(Error::InvalidArgument(format!("cycle length {cycle_len} < 3")));
    }
    if !(w0 >= 0.0) {
        return Err(Error::InvalidArgument(format!("cycle weight {w0} must be non-negative")));
    }
    let mut overlay = CycleOverlay::empty(g.n(), w0);
    let mut rng = rng::substream(seed, CYCLE_STREAM);
    let mut attempts = 0;
    while overlay.cycles.len() < num_cycles {
        if attempts == MAX_CYCLE_ATTEMPTS {
            return Err(Error::CycleSearchTimeout { attempts });
        }
        attempts += 1;
        let start = rng.gen_range(0..g.n());
        let mut path = vec![start];
        let mut budget = DFS_BUDGET;
        if random_cycle_dfs(g, cycle_len, &mut path, &mut budget, &mut rng) && overlay.accepts(g, &path) {
            overlay.insert(path);
        }
    }
    Ok(overlay)
}

/// `Q_ij = W_ij / Σ_l W_il` with `W = d_max·P + w0·V`.
pub fn nonreversible_lift(p: &TransitionMatrix, overlay: &CycleOverlay, d_max: usize) -> Result<TransitionMatrix> {
    let n = p.size();
    if overlay.n() != n {
        return Err(Error::DimensionMismatch { expected: n, found: overlay.n() });
    }
    let scale = d_max as f64;
    let w = DMatrix::from_fn(n, n, |i, j| scale * p.get(i, j) + if overlay.has_edge(i, j) { overlay.w0 } else { 0.0 });
    let mut q = w.clone();
    for i in 0..n {
        let s: f64 = w.row(i).iter().sum();
        if !(s > 0.0) {
            return Err(Error::ZeroRow(i));
        }
        for j in 0..n {
            q[(i, j)] = w[(i, j)] / s;
        }
    }
    TransitionMatrix::new(q)
}

/// Parameters of the reversible / non-reversible chain pair.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ChainPairConfig {
    pub n: usize,
    pub edge_prob: f64,
    pub num_cycles: usize,
    pub cycle_len: usize,
    /// `w0 = w0_factor · d_max`.
    pub w0_factor: f64,
}

impl Default for ChainPairConfig {
    fn default() -> Self {
        ChainPairConfig { n: 20, edge_prob: 0.3, num_cycles: 5, cycle_len: 4, w0_factor: 0.5 }
    }
}

#[derive(Debug, Clone)]
pub struct ChainPair {
    pub graph: UndirectedGraph,
    pub overlay: CycleOverlay,
    pub p: TransitionMatrix,
    pub q: TransitionMatrix,
    pub lambda2_p: f64,
    pub lambda2_q: f64,
}

pub fn build_chain_pair(config: &ChainPairConfig, seed: u64) -> Result<ChainPair> {
    let graph = random_connected_graph(config.n, config.edge_prob, seed)?;
    let p = metropolis_hastings(&graph)?;
    let d_max = graph.d_max();
    let overlay = add_cycles(&graph, config.num_cycles, config.cycle_len, config.w0_factor * d_max as f64, seed)?;
    let q = nonreversible_lift(&p, &overlay, d_max)?;
    let lambda2_p = spectral_profile(&p)?.lambda2_modulus;
    let lambda2_q = spectral_profile(&q)?.lambda2_modulus;
    Ok(ChainPair { graph, overlay, p, q, lambda2_p, lambda2_q })
}

/// Reversible Metropolis–Hastings chain `P` on a random graph and its lift
/// `Q` by five directed 4-cycles at weight `d_max / 2`.
pub fn build_benchmark_chain_pair(n: usize, seed: u64) -> Result<ChainPair> {
    if n < 8 {
        return Err(Error::InvalidArgument(format!("need at least 8 nodes, got {n}")));
    }
    build_chain_pair(&ChainPairConfig { n, ..Default::default() }, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov::classify_chain;
    use approx::assert_abs_diff_eq;

    #[test]
    fn forced_graphs() {
        let g = random_connected_graph(2, 1.0, 3).unwrap();
        assert_eq!(g.edge_count(), 1);
        assert_eq!(g.d_max(), 1);
        let k6 = random_connected_graph(6, 1.0, 3).unwrap();
        assert_eq!(k6, UndirectedGraph::complete(6));
        assert_eq!(k6.d_max(), 5);
    }

    #[test]
    fn random_graph_is_connected_and_reproducible() {
        let a = random_connected_graph(20, 0.3, 11).unwrap();
        assert!(a.is_connected());
        assert_eq!(a, random_connected_graph(20, 0.3, 11).unwrap());
        assert!(random_connected_graph(1, 0.3, 0).is_err());
    }

    #[test]
    fn mh_path_and_complete() {
        let p = metropolis_hastings(&UndirectedGraph::path(3)).unwrap();
        let expected = [[0.5, 0.5, 0.0], [0.5, 0.0, 0.5], [0.0, 0.5, 0.5]];
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(p.get(i, j), expected[i][j], epsilon = 1e-15);
            }
        }
        let k3 = metropolis_hastings(&UndirectedGraph::complete(3)).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(k3.get(i, j), if i == j { 0.0 } else { 0.5 }, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn single_edge_is_periodic() {
        let p = metropolis_hastings(&UndirectedGraph::path(2)).unwrap();
        assert_eq!(p.get(0, 1), 1.0);
        let c = classify_chain(&p);
        assert!(c.irreducible && !c.aperiodic);
    }

    #[test]
    fn triangle_cycle_and_lift() {
        let g = UndirectedGraph::complete(3);
        let overlay = add_cycles(&g, 1, 3, 1.0, 5).unwrap();
        assert_eq!(overlay.edge_count(), 3);
        for i in 0..3 {
            for j in 0..3 {
                assert!(!(overlay.has_edge(i, j) && overlay.has_edge(j, i)));
            }
        }
        let fixed = CycleOverlay::from_cycles(&g, vec![vec![0, 1, 2]], 1.0).unwrap();
        let p = metropolis_hastings(&g).unwrap();
        let q = nonreversible_lift(&p, &fixed, g.d_max()).unwrap();
        let expected = [[0.0, 2.0 / 3.0, 1.0 / 3.0], [1.0 / 3.0, 0.0, 2.0 / 3.0], [2.0 / 3.0, 1.0 / 3.0, 0.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(q.get(i, j), expected[i][j], epsilon = 1e-15);
            }
        }
        let prof = spectral_profile(&q).unwrap();
        assert_abs_diff_eq!(prof.lambda2_modulus, 1.0 / 3f64.sqrt(), epsilon = 1e-12);
        assert!(!classify_chain(&q).reversible);
    }

    #[test]
    fn tree_has_no_cycles() {
        let g = UndirectedGraph::path(4);
        assert!(matches!(add_cycles(&g, 1, 3, 1.0, 0), Err(Error::CycleSearchTimeout { .. })));
    }

    #[test]
    fn empty_overlay_keeps_p() {
        let g = random_connected_graph(12, 0.4, 2).unwrap();
        let p = metropolis_hastings(&g).unwrap();
        let q = nonreversible_lift(&p, &CycleOverlay::empty(12, 3.0), g.d_max()).unwrap();
        for i in 0..12 {
            for j in 0..12 {
                assert!((p.get(i, j) - q.get(i, j)).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn benchmark_configuration_overlay() {
        let pair = build_benchmark_chain_pair(20, 7).unwrap();
        assert_eq!(pair.overlay.cycles.len(), 5);
        assert_eq!(pair.overlay.edge_count(), 20);
        for c in &pair.overlay.cycles {
            for k in 0..c.len() {
                assert!(pair.graph.has_edge(c[k], c[(k + 1) % c.len()]));
            }
        }
        assert!(classify_chain(&pair.p).reversible);
        assert!(!classify_chain(&pair.q).reversible);
    }

    #[test]
    fn zero_weight_lift_matches_spectrum() {
        let cfg = ChainPairConfig { w0_factor: 0.0, ..Default::default() };
        let pair = build_chain_pair(&cfg, 4).unwrap();
        assert!((pair.lambda2_p - pair.lambda2_q).abs() <= 1e-12);
    }
}
