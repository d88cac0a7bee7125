//! Finite-sum objectives `f(x) = (1/M) Σᵢ fᵢ(x)` with per-component
//! (sub)gradient oracles, feasible sets and reference minima.

use std::fmt::Debug;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Vector = DVector<f64>;

/// Number of low-discrepancy points used to estimate `D`, `H` and `L`.
pub const CONSTANT_SAMPLES: usize = 1000;
/// Half-width of the sampling cube used for unbounded feasible sets.
pub const FULL_SPACE_SAMPLING_RADIUS: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub enum FeasibleSet {
    FullSpace,
    Ball { center: Vector, radius: f64 },
    Box { lower: Vector, upper: Vector },
}

impl FeasibleSet {
    pub fn ball(center: Vector, radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::InvalidArgument(format!("ball radius {radius} must be positive")));
        }
        Ok(FeasibleSet::Ball { center, radius })
    }

    pub fn centered_ball(dimension: usize, radius: f64) -> Result<Self> {
        Self::ball(Vector::zeros(dimension), radius)
    }

    pub fn boxed(lower: Vector, upper: Vector) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch { expected: lower.len(), found: upper.len() });
        }
        if lower.iter().zip(upper.iter()).any(|(l, u)| !(l <= u)) {
            return Err(Error::InvalidArgument("box lower bound exceeds upper bound".into()));
        }
        Ok(FeasibleSet::Box { lower, upper })
    }

    pub fn dimension(&self) -> Option<usize> {
        match self {
            FeasibleSet::FullSpace => None,
            FeasibleSet::Ball { center, .. } => Some(center.len()),
            FeasibleSet::Box { lower, .. } => Some(lower.len()),
        }
    }

    pub fn is_compact(&self) -> bool {
        !matches!(self, FeasibleSet::FullSpace)
    }

    fn check_dimension(&self, n: usize) -> Result<()> {
        match self.dimension() {
            Some(d) if d != n => Err(Error::DimensionMismatch { expected: d, found: n }),
            _ => Ok(()),
        }
    }

    pub fn contains(&self, x: &Vector, tol: f64) -> bool {
        match self {
            FeasibleSet::FullSpace => true,
            FeasibleSet::Ball { center, radius } => (x - center).norm() <= radius + tol,
            FeasibleSet::Box { lower, upper } => {
                x.iter().zip(lower.iter().zip(upper.iter())).all(|(v, (l, u))| *v >= l - tol && *v <= u + tol)
            }
        }
    }

    /// In-place Euclidean projection; the caller guarantees dimensions.
    pub(crate) fn project_in_place(&self, x: &mut Vector) {
        match self {
            FeasibleSet::FullSpace => {}
            FeasibleSet::Ball { center, radius } => {
                let dist = (&*x - center).norm();
                if dist > *radius {
                    let t = radius / dist;
                    x.zip_apply(center, |v, c| *v = c + (*v - c) * t);
                }
            }
            FeasibleSet::Box { lower, upper } => {
                for i in 0..x.len() {
                    x[i] = x[i].clamp(lower[i], upper[i]);
                }
            }
        }
    }
}

/// Euclidean projection onto `set`.
pub fn project(set: &FeasibleSet, x: &Vector) -> Result<Vector> {
    set.check_dimension(x.len())?;
    let mut y = x.clone();
    set.project_in_place(&mut y);
    Ok(y)
}

/// `σ(t) = 1 / (1 + e^{−t})`, evaluated without overflow.
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

// ln(1 + e^t)
fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

/// Logistic loss `−y ln σ(t) − (1−y) ln(1−σ(t))`, `t = ⟨x, ξ¹⟩`, and its
/// gradient `(σ(t) − y) ξ¹`.
pub fn logistic_component(x: &Vector, xi1: &Vector, xi2: f64) -> (f64, Vector) {
    let t = x.dot(xi1);
    // −y ln σ(t) − (1−y) ln σ(−t) = softplus(t) − y t
    let value = softplus(t) - xi2 * t;
    (value, xi1 * (sigmoid(t) - xi2))
}

/// `½ (σ(⟨x, ξ¹⟩) − y)²` and its gradient `(σ − y) σ (1 − σ) ξ¹`.
pub fn sigmoid_sq_component(x: &Vector, xi1: &Vector, xi2: f64) -> (f64, Vector) {
    let s = sigmoid(x.dot(xi1));
    let r = s - xi2;
    (0.5 * r * r, xi1 * (r * s * (1.0 - s)))
}

/// `½ (xᵢᵀβ − yᵢ)²` and its gradient `(xᵢᵀβ − yᵢ) xᵢ`.
pub fn least_squares_component(beta: &Vector, x_i: &Vector, y_i: f64) -> (f64, Vector) {
    let r = x_i.dot(beta) - y_i;
    (0.5 * r * r, x_i * r)
}

/// One summand `fᵢ` of a finite-sum objective.
pub trait Component: Debug + Send + Sync {
    fn dimension(&self) -> usize;
    fn value(&self, x: &Vector) -> f64;
    fn gradient(&self, x: &Vector) -> Vector;
    fn is_convex(&self) -> bool;

    /// Upper bound on `‖∇fᵢ‖` over `set`, when one is known in closed form.
    fn gradient_bound(&self, _set: &FeasibleSet) -> Option<f64> {
        None
    }

    /// Global Lipschitz constant of `∇fᵢ`, when known in closed form.
    fn lipschitz_bound(&self) -> Option<f64> {
        None
    }

    /// `(a, b)` when `fᵢ(x) = ½ (aᵀx − b)²`.
    fn linear_row(&self) -> Option<(&Vector, f64)> {
        None
    }
}

/// `max_{x ∈ set} |aᵀx − b|`, or `None` on an unbounded set.
fn max_abs_affine(a: &Vector, b: f64, set: &FeasibleSet) -> Option<f64> {
    match set {
        FeasibleSet::FullSpace => None,
        FeasibleSet::Ball { center, radius } => Some((a.dot(center) - b).abs() + a.norm() * radius),
        FeasibleSet::Box { lower, upper } => {
            let mid = (lower + upper) * 0.5;
            let spread: f64 = a.iter().zip(upper.iter().zip(lower.iter())).map(|(ai, (u, l))| ai.abs() * (u - l) * 0.5).sum();
            Some((a.dot(&mid) - b).abs() + spread)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticLoss {
    pub features: Vector,
    pub label: f64,
}

impl Component for LogisticLoss {
    fn dimension(&self) -> usize {
        self.features.len()
    }
    fn value(&self, x: &Vector) -> f64 {
        logistic_component(x, &self.features, self.label).0
    }
    fn gradient(&self, x: &Vector) -> Vector {
        logistic_component(x, &self.features, self.label).1
    }
    fn is_convex(&self) -> bool {
        true
    }
    fn gradient_bound(&self, _set: &FeasibleSet) -> Option<f64> {
        Some(self.features.norm())
    }
    fn lipschitz_bound(&self) -> Option<f64> {
        Some(self.features.norm_squared() / 4.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SigmoidSquaredLoss {
    pub features: Vector,
    pub label: f64,
}

impl Component for SigmoidSquaredLoss {
    fn dimension(&self) -> usize {
        self.features.len()
    }
    fn value(&self, x: &Vector) -> f64 {
        sigmoid_sq_component(x, &self.features, self.label).0
    }
    fn gradient(&self, x: &Vector) -> Vector {
        sigmoid_sq_component(x, &self.features, self.label).1
    }
    fn is_convex(&self) -> bool {
        false
    }
    fn gradient_bound(&self, _set: &FeasibleSet) -> Option<f64> {
        // |σ − y| ≤ 1 and σ(1 − σ) ≤ 1/4.
        Some(self.features.norm() / 4.0)
    }
    fn lipschitz_bound(&self) -> Option<f64> {
        // |d/dt (σ−y)σ(1−σ)| ≤ max σ'² + max |σ''| < 1/16 + 0.0963.
        Some(0.16 * self.features.norm_squared())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeastSquaresRow {
    pub features: Vector,
    pub target: f64,
}

impl Component for LeastSquaresRow {
    fn dimension(&self) -> usize {
        self.features.len()
    }
    fn value(&self, x: &Vector) -> f64 {
        least_squares_component(x, &self.features, self.target).0
    }
    fn gradient(&self, x: &Vector) -> Vector {
        least_squares_component(x, &self.features, self.target).1
    }
    fn is_convex(&self) -> bool {
        true
    }
    fn gradient_bound(&self, set: &FeasibleSet) -> Option<f64> {
        max_abs_affine(&self.features, self.target, set).map(|r| r * self.features.norm())
    }
    fn lipschitz_bound(&self) -> Option<f64> {
        Some(self.features.norm_squared())
    }
    fn linear_row(&self) -> Option<(&Vector, f64)> {
        Some((&self.features, self.target))
    }
}

/// `(w/2) ‖x − c‖²`.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadratic {
    pub center: Vector,
    pub weight: f64,
}

impl Component for Quadratic {
    fn dimension(&self) -> usize {
        self.center.len()
    }
    fn value(&self, x: &Vector) -> f64 {
        0.5 * self.weight * (x - &self.center).norm_squared()
    }
    fn gradient(&self, x: &Vector) -> Vector {
        (x - &self.center) * self.weight
    }
    fn is_convex(&self) -> bool {
        self.weight >= 0.0
    }
    fn gradient_bound(&self, set: &FeasibleSet) -> Option<f64> {
        let w = self.weight.abs();
        match set {
            FeasibleSet::FullSpace => None,
            FeasibleSet::Ball { center, radius } => Some(w * ((center - &self.center).norm() + radius)),
            FeasibleSet::Box { lower, upper } => {
                let far = Vector::from_fn(lower.len(), |i, _| {
                    (lower[i] - self.center[i]).abs().max((upper[i] - self.center[i]).abs())
                });
                Some(w * far.norm())
            }
        }
    }
    fn lipschitz_bound(&self) -> Option<f64> {
        Some(self.weight.abs())
    }
}

/// Neumaier-compensated sum.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

#[derive(Debug, Clone)]
pub struct FiniteSumObjective {
    components: Vec<Arc<dyn Component>>,
    dimension: usize,
    pub set: FeasibleSet,
    pub convex: bool,
    pub lipschitz_grad_l: Option<f64>,
    pub grad_bound_d: Option<f64>,
    pub value_bound_h: Option<f64>,
}

impl FiniteSumObjective {
    pub fn m(&self) -> usize {
        self.components.len()
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn component(&self, i: usize) -> &dyn Component {
        self.components[i].as_ref()
    }

    pub fn component_eval(&self, i: usize, x: &Vector) -> f64 {
        self.components[i].value(x)
    }

    pub fn component_grad(&self, i: usize, x: &Vector) -> Vector {
        self.components[i].gradient(x)
    }

    /// `(1/M) Σᵢ fᵢ(x)` with compensated summation.
    pub fn value(&self, x: &Vector) -> f64 {
        compensated_sum(self.components.iter().map(|c| c.value(x))) / self.m() as f64
    }

    pub fn gradient(&self, x: &Vector) -> Vector {
        let mut g = Vector::zeros(self.dimension);
        for c in &self.components {
            g += c.gradient(x);
        }
        g / self.m() as f64
    }

    /// Least-squares design `(A, y)` when every component is a linear row.
    pub fn linear_system(&self) -> Option<(DMatrix<f64>, Vector)> {
        let rows: Option<Vec<(&Vector, f64)>> = self.components.iter().map(|c| c.linear_row()).collect();
        let rows = rows?;
        let a = DMatrix::from_fn(rows.len(), self.dimension, |i, j| rows[i].0[j]);
        let y = Vector::from_iterator(rows.len(), rows.iter().map(|r| r.1));
        Some((a, y))
    }
}

fn first_primes(count: usize) -> Vec<u64> {
    let mut primes = Vec::with_capacity(count);
    let mut candidate = 2u64;
    while primes.len() < count {
        if primes.iter().take_while(|&&p| p * p <= candidate).all(|&p| !candidate.is_multiple_of(p)) {
            primes.push(candidate);
        }
        candidate += 1;
    }
    primes
}

fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut scale = inv;
    let mut result = 0.0;
    while index > 0 {
        result += (index % base) as f64 * scale;
        index /= base;
        scale *= inv;
    }
    result
}

/// Halton points in the unit cube `[0, 1)^dimension`, skipping index 0.
pub fn halton_points(dimension: usize, count: usize) -> Vec<Vector> {
    let primes = first_primes(dimension);
    (1..=count as u64)
        .map(|idx| Vector::from_iterator(dimension, primes.iter().map(|&b| radical_inverse(idx, b))))
        .collect()
}

/// Halton points spread over the bounding cube of `set`, then projected
/// into it, so both the interior and the boundary get sampled.
pub fn sample_feasible(set: &FeasibleSet, dimension: usize, count: usize) -> Vec<Vector> {
    let (lo, hi) = match set {
        FeasibleSet::FullSpace => (
            Vector::from_element(dimension, -FULL_SPACE_SAMPLING_RADIUS),
            Vector::from_element(dimension, FULL_SPACE_SAMPLING_RADIUS),
        ),
        FeasibleSet::Ball { center, radius } => (center.add_scalar(-radius), center.add_scalar(*radius)),
        FeasibleSet::Box { lower, upper } => (lower.clone(), upper.clone()),
    };
    halton_points(dimension, count)
        .into_iter()
        .map(|u| {
            let mut x = Vector::from_fn(dimension, |i, _| lo[i] + u[i] * (hi[i] - lo[i]));
            set.project_in_place(&mut x);
            x
        })
        .collect()
}

/// Builds the uniform-weight finite sum and estimates its constants.
///
/// `D` is the larger of the sampled maximum gradient norm and any closed-form
/// component bound; `H` is the widest sampled spread `max fᵢ − min fᵢ`; `L`
/// is the larger of the sampled gradient-difference ratio and any closed-form
/// component constant.
pub fn assemble_finite_sum(components: Vec<Arc<dyn Component>>, set: FeasibleSet) -> Result<FiniteSumObjective> {
    let first = components.first().ok_or(Error::EmptyComponents)?;
    let dimension = first.dimension();
    for c in &components {
        if c.dimension() != dimension {
            return Err(Error::DimensionMismatch { expected: dimension, found: c.dimension() });
        }
    }
    set.check_dimension(dimension)?;
    let convex = components.iter().all(|c| c.is_convex());

    let points = sample_feasible(&set, dimension, CONSTANT_SAMPLES);
    let mut d_est: f64 = 0.0;
    let mut h_est: f64 = 0.0;
    let mut l_est: f64 = 0.0;
    for c in &components {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut prev: Option<(&Vector, Vector)> = None;
        for x in &points {
            let v = c.value(x);
            lo = lo.min(v);
            hi = hi.max(v);
            let g = c.gradient(x);
            d_est = d_est.max(g.norm());
            if let Some((px, pg)) = &prev {
                let dx = (x - *px).norm();
                if dx > 0.0 {
                    l_est = l_est.max((&g - pg).norm() / dx);
                }
            }
            prev = Some((x, g));
        }
        h_est = h_est.max(hi - lo);
        if let Some(b) = c.gradient_bound(&set) {
            d_est = d_est.max(b);
        }
        if let Some(b) = c.lipschitz_bound() {
            l_est = l_est.max(b);
        }
    }
    let positive = |v: f64| if v > 0.0 && v.is_finite() { Some(v) } else { None };
    Ok(FiniteSumObjective {
        components,
        dimension,
        set,
        convex,
        lipschitz_grad_l: positive(l_est),
        grad_bound_d: positive(d_est),
        value_bound_h: positive(h_est),
    })
}

/// Minimizer and minimum value of `f` over its feasible set.
///
/// Least-squares objectives use the normal equations (minimum-norm solution)
/// when that point is feasible; everything else runs accelerated projected
/// gradient with step `1/L` and gradient-based restarts until a step shorter
/// than 1e-12.
pub fn reference_minimum(obj: &FiniteSumObjective) -> Result<(Vector, f64)> {
    if let Some((a, y)) = obj.linear_system() {
        let ata = a.tr_mul(&a);
        let aty = a.tr_mul(&y);
        if let Ok(x) = ata.svd(true, true).solve(&aty, 1e-12) {
            if obj.set.contains(&x, 1e-12) {
                let v = obj.value(&x);
                return Ok((x, v));
            }
        }
    }
    if !obj.convex {
        return Err(Error::PreconditionViolation("reference minimum needs a convex objective".into()));
    }
    let step = 1.0 / obj.lipschitz_grad_l.unwrap_or(1.0);
    let mut x = project(&obj.set, &Vector::zeros(obj.dimension()))?;
    let mut y = x.clone();
    let mut t = 1.0f64;
    for _ in 0..1_000_000 {
        let mut next = &y - obj.gradient(&y) * step;
        obj.set.project_in_place(&mut next);
        let moved = (&next - &y).norm();
        if moved <= 1e-12 {
            let v = obj.value(&next);
            return Ok((next, v));
        }
        // Restart the momentum when it points uphill.
        if (&y - &next).dot(&(&next - &x)) > 0.0 {
            t = 1.0;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = &next + (&next - &x) * ((t - 1.0) / t_next);
        x = next;
        t = t_next;
    }
    Err(Error::NoConvergence("accelerated projected gradient hit 10^6 iterations".into()))
}
