//! Seeded generators for the autoregressive data stream and the per-node
//! least-squares data.

use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::objectives::{Component, LeastSquaresRow, Vector};
use crate::rng::{self, RepoRng};

pub const DEFAULT_AR_DIMENSION: usize = 50;
pub const DEFAULT_FLIP_PROB: f64 = 0.2;

const SETUP_STREAM: u64 = 0;
const NOISE_STREAM: u64 = 1;

/// `ξ¹_t = A ξ¹_{t−1} + e₁ W_t` with a strictly subdiagonal `A`, labelled by
/// the sign of `⟨u, ξ¹_t⟩` and flipped with probability `flip_prob`.
#[derive(Debug, Clone)]
pub struct ARStream {
    /// `A[i][i−1]` for `i = 1..d`.
    subdiagonal: Vec<f64>,
    u: Vector,
    flip_prob: f64,
    seed: u64,
    current: Vector,
    rng: RepoRng,
}

fn normal_vector(d: usize, rng: &mut RepoRng) -> Vector {
    Vector::from_fn(d, |_, _| rng::standard_normal(rng))
}

impl ARStream {
    /// Subdiagonal entries `U[0.8, 0.99]`, `u` uniform on the unit sphere,
    /// `ξ¹₀ = 0`.
    pub fn new(d: usize, seed: u64) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidArgument("AR dimension must be at least 1".into()));
        }
        let mut setup = rng::substream(seed, SETUP_STREAM);
        let subdiagonal = (1..d).map(|_| setup.gen_range(0.8..0.99)).collect();
        let mut u = normal_vector(d, &mut setup);
        while u.norm() == 0.0 {
            u = normal_vector(d, &mut setup);
        }
        let u = u.normalize();
        Self::from_parts(subdiagonal, u, DEFAULT_FLIP_PROB, seed)
    }

    pub fn from_parts(subdiagonal: Vec<f64>, u: Vector, flip_prob: f64, seed: u64) -> Result<Self> {
        let d = u.len();
        if subdiagonal.len() + 1 != d {
            return Err(Error::DimensionMismatch { expected: d.saturating_sub(1), found: subdiagonal.len() });
        }
        if !(0.0..=1.0).contains(&flip_prob) {
            return Err(Error::InvalidArgument(format!("flip probability {flip_prob} outside [0, 1]")));
        }
        Ok(ARStream {
            subdiagonal,
            u,
            flip_prob,
            seed,
            current: Vector::zeros(d),
            rng: rng::substream(seed, NOISE_STREAM),
        })
    }

    pub fn dimension(&self) -> usize {
        self.u.len()
    }

    pub fn u(&self) -> &Vector {
        &self.u
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn flip_prob(&self) -> f64 {
        self.flip_prob
    }

    pub fn subdiagonal(&self) -> &[f64] {
        &self.subdiagonal
    }

    pub fn a_matrix(&self) -> DMatrix<f64> {
        let d = self.dimension();
        DMatrix::from_fn(d, d, |i, j| if i >= 1 && j + 1 == i { self.subdiagonal[j] } else { 0.0 })
    }

    /// Advances the stream one step and returns `(ξ¹_t, ξ²_t)`.
    pub fn next_sample(&mut self) -> (Vector, f64) {
        advance(&self.subdiagonal, &mut self.current, &mut self.rng);
        let label = label(&self.u, self.flip_prob, &self.current, &mut self.rng);
        (self.current.clone(), label)
    }

    /// The `t`-th sample of a fresh trajectory started from `ξ¹₀ = 0`, drawn
    /// with `rng`; the stream itself is not advanced.
    pub fn fresh_sample<R: Rng + ?Sized>(&self, t: usize, rng: &mut R) -> (Vector, f64) {
        let mut xi = Vector::zeros(self.dimension());
        let mut label = 0.0;
        for _ in 0..t {
            advance(&self.subdiagonal, &mut xi, rng);
            label = self::label(&self.u, self.flip_prob, &xi, rng);
        }
        (xi, label)
    }
}

fn advance<R: Rng + ?Sized>(subdiagonal: &[f64], xi: &mut Vector, rng: &mut R) {
    for i in (1..xi.len()).rev() {
        xi[i] = subdiagonal[i - 1] * xi[i - 1];
    }
    xi[0] = rng::standard_normal(rng);
}

fn label<R: Rng + ?Sized>(u: &Vector, flip_prob: f64, xi: &Vector, rng: &mut R) -> f64 {
    let clean = if u.dot(xi) > 0.0 { 1.0 } else { 0.0 };
    if rng::uniform(rng) < flip_prob {
        1.0 - clean
    } else {
        clean
    }
}

/// Convenience constructor with the default flip probability.
pub fn make_ar_stream(d: usize, seed: u64) -> Result<ARStream> {
    ARStream::new(d, seed)
}

/// Per-node regression data `yᵢ = xᵢᵀβ* (+ noise)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeDataset {
    pub features: Vec<Vector>,
    pub labels: Vec<f64>,
    pub beta_star: Vector,
    pub noise_std: f64,
    pub seed: u64,
}

impl NodeDataset {
    pub fn n(&self) -> usize {
        self.features.len()
    }

    pub fn d(&self) -> usize {
        self.beta_star.len()
    }

    pub fn components(&self) -> Vec<Arc<dyn Component>> {
        self.features
            .iter()
            .zip(&self.labels)
            .map(|(x, &y)| Arc::new(LeastSquaresRow { features: x.clone(), target: y }) as Arc<dyn Component>)
            .collect()
    }

    /// One row per node: `node,y,x_0,…,x_{d−1}`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("node,y");
        for j in 0..self.d() {
            let _ = write!(out, ",x_{j}");
        }
        out.push('\n');
        for (i, (x, y)) in self.features.iter().zip(&self.labels).enumerate() {
            let _ = write!(out, "{i},{y}");
            for v in x.iter() {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

/// `β* ~ N(0, I_d)`, `xᵢ ~ N(0, I_d)`, `yᵢ = xᵢᵀβ*`.
pub fn make_node_dataset(n: usize, d: usize, seed: u64) -> Result<NodeDataset> {
    make_noisy_node_dataset(n, d, 0.0, seed)
}

/// As [`make_node_dataset`] with `N(0, noise_std²)` added to every label.
pub fn make_noisy_node_dataset(n: usize, d: usize, noise_std: f64, seed: u64) -> Result<NodeDataset> {
    if n == 0 || d == 0 {
        return Err(Error::InvalidArgument(format!("need n, d >= 1, got n={n}, d={d}")));
    }
    let mut rng = rng::seeded(seed);
    let beta_star = normal_vector(d, &mut rng);
    let features: Vec<Vector> = (0..n).map(|_| normal_vector(d, &mut rng)).collect();
    let labels = features
        .iter()
        .map(|x| {
            let clean = x.dot(&beta_star);
            if noise_std > 0.0 {
                clean + noise_std * rng::standard_normal(&mut rng)
            } else {
                clean
            }
        })
        .collect();
    Ok(NodeDataset { features, labels, beta_star, noise_std, seed })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ar_structure() {
        let s = make_ar_stream(50, 4).unwrap();
        let a = s.a_matrix();
        let nonzero: Vec<_> = a.iter().filter(|v| **v != 0.0).collect();
        assert_eq!(nonzero.len(), 49);
        assert!(nonzero.iter().all(|v| (0.8..=0.99).contains(*v)));
        for i in 1..50 {
            assert!(a[(i, i - 1)] >= 0.8);
        }
        assert!((s.u().norm() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn ar_unit_dimension() {
        let mut s = make_ar_stream(1, 2).unwrap();
        assert_eq!(s.a_matrix(), DMatrix::zeros(1, 1));
        let mut w = rng::substream(2, NOISE_STREAM);
        let (xi, _) = s.next_sample();
        assert_eq!(xi[0], rng::standard_normal(&mut w));
    }

    #[test]
    fn unit_u_for_many_seeds() {
        for seed in 0..100 {
            assert!((make_ar_stream(7, seed).unwrap().u().norm() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn degenerate_label_is_sign_of_noise() {
        let mut u = Vector::zeros(3);
        u[0] = 1.0;
        let mut s = ARStream::from_parts(vec![0.0, 0.0], u, 0.0, 9).unwrap();
        for _ in 0..1000 {
            let (xi, y) = s.next_sample();
            assert_eq!(y, if xi[0] > 0.0 { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn replay() {
        let mut a = make_ar_stream(5, 3).unwrap();
        let mut b = make_ar_stream(5, 3).unwrap();
        for _ in 0..100 {
            assert_eq!(a.next_sample(), b.next_sample());
        }
    }

    #[test]
    fn node_dataset_is_consistent() {
        let data = make_node_dataset(20, 10, 5).unwrap();
        assert_eq!(data, make_node_dataset(20, 10, 5).unwrap());
        for (x, y) in data.features.iter().zip(&data.labels) {
            assert_eq!(*y, x.dot(&data.beta_star));
        }
        let csv = data.to_csv();
        assert_eq!(csv.lines().count(), 21);
        assert!(csv.starts_with("node,y,x_0,"));
    }
}
