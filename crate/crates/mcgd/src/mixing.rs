//! Spectral diagnostics and geometric deviation bounds.
//!
//! The central quantity is the deviation matrix `δᵏ = Π* − Pᵏ`, where every
//! row of `Π*` is the stationary distribution, measured in the entrywise
//! maximum norm. For an ergodic chain it decays geometrically, and the
//! constants returned here certify `‖δᵏ‖∞ ≤ c · rateᵏ` for `k ≥ k_floor`.
//!
//! Three routes produce such constants:
//!
//! * symmetric chains: `c = M^{3/2}`, `rate = |λ₂|`, valid from `k = 0`;
//! * diagonalizable chains: `c = √(M−1)·‖U‖_F·‖U⁻¹‖_F` with `U` the
//!   eigenvector matrix and `rate = λ(P)`;
//! * anything else: a least-squares fit to the observed decay, inflated until
//!   the bound holds on every sampled `k`.
//!
//! [`deviation_norm`] is the brute-force reference for all of them. It uses
//! the identity `Pᵏ − Π* = (P − Π*)ᵏ` for `k ≥ 1`, which keeps full relative
//! precision long after the naive difference of two nearly equal matrices
//! would have collapsed into rounding noise.

use nalgebra::{DMatrix, DVector, Schur};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::markov::{classify_chain, power_of, stationary_distribution, TransitionMatrix};

/// `‖P − Pᵀ‖∞` threshold for treating a chain as symmetric.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Largest eigenvector condition estimate accepted by [`analytic_constants`].
pub const CONDITION_LIMIT: f64 = 1e8;
// Floor for decay rates; keeps `rateᵏ` representable when |λ₂| is ~0.
const RATE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralProfile {
    /// Eigenvalues sorted by modulus descending, ties by real part descending.
    pub eigenvalues: Vec<Complex64>,
    pub eigen_moduli: Vec<f64>,
    pub lambda2_modulus: f64,
    pub lambda_m_modulus: f64,
    /// `λ(P) = (max{|λ₂|, |λ_M|} + 1) / 2`.
    pub lambda_p: f64,
    /// `ψ(P) = max{1, 1/ln(1/λ(P))}`.
    pub psi_p: f64,
    pub symmetric: bool,
    /// Set when `|λ₂| = 1`, i.e. the chain is not ergodic.
    pub degenerate: bool,
}

pub fn lambda_of(lambda2_modulus: f64, lambda_m_modulus: f64) -> f64 {
    (lambda2_modulus.max(lambda_m_modulus) + 1.0) / 2.0
}

pub fn psi_of(lambda_p: f64) -> f64 {
    let inv_log = 1.0 / (1.0 / lambda_p).ln();
    if inv_log.is_nan() {
        return f64::INFINITY;
    }
    inv_log.max(1.0)
}

fn sort_spectrum(values: &mut [Complex64]) {
    values.sort_by(|a, b| b.norm().total_cmp(&a.norm()).then(b.re.total_cmp(&a.re)));
}

/// Complex spectrum of `P`, sorted as in [`SpectralProfile::eigenvalues`].
pub fn eigenvalues(p: &TransitionMatrix) -> Result<Vec<Complex64>> {
    let a = p.entries().clone();
    let mut values: Vec<Complex64> = if p.is_symmetric(SYMMETRY_TOL) {
        let eig = nalgebra::SymmetricEigen::try_new(a, f64::EPSILON, 10_000)
            .ok_or_else(|| Error::EigSolverFailure("symmetric QR did not converge".into()))?;
        eig.eigenvalues.iter().map(|&v| Complex64::new(v, 0.0)).collect()
    } else {
        let schur = Schur::try_new(a, f64::EPSILON, 10_000)
            .ok_or_else(|| Error::EigSolverFailure("Schur iteration did not converge".into()))?;
        schur.complex_eigenvalues().iter().copied().collect()
    };
    if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::EigSolverFailure("non-finite eigenvalue".into()));
    }
    sort_spectrum(&mut values);
    Ok(values)
}

pub fn spectral_profile(p: &TransitionMatrix) -> Result<SpectralProfile> {
    let eigenvalues = eigenvalues(p)?;
    let eigen_moduli: Vec<f64> = eigenvalues.iter().map(|v| v.norm()).collect();
    let m = eigen_moduli.len();
    let lambda2_modulus = if m > 1 { eigen_moduli[1] } else { 0.0 };
    let lambda_m_modulus = if m > 1 { eigen_moduli[m - 1] } else { 0.0 };
    let lambda_p = lambda_of(lambda2_modulus, lambda_m_modulus);
    Ok(SpectralProfile {
        eigenvalues,
        eigen_moduli,
        lambda2_modulus,
        lambda_m_modulus,
        lambda_p,
        psi_p: psi_of(lambda_p),
        symmetric: p.is_symmetric(SYMMETRY_TOL),
        degenerate: lambda2_modulus >= 1.0 - 1e-9,
    })
}

/// Entrywise maximum absolute value.
pub fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

fn stationary_projector(p: &TransitionMatrix) -> Result<DMatrix<f64>> {
    let pi = stationary_distribution(p)?;
    let m = p.size();
    Ok(DMatrix::from_fn(m, m, |_, j| pi[j]))
}

/// `δᵏ = Π* − Pᵏ`.
pub fn deviation_matrix(p: &TransitionMatrix, k: u64) -> Result<DMatrix<f64>> {
    let pi = stationary_projector(p)?;
    Ok(deviation_from(p, &pi, k))
}

fn deviation_from(p: &TransitionMatrix, pi: &DMatrix<f64>, k: u64) -> DMatrix<f64> {
    let m = p.size();
    if k == 0 {
        return pi - DMatrix::identity(m, m);
    }
    -power_of(&(p.entries() - pi), k)
}

/// `‖Π* − Pᵏ‖∞`, the entrywise maximum.
pub fn deviation_norm(p: &TransitionMatrix, k: u64) -> Result<f64> {
    Ok(max_abs(&deviation_matrix(p, k)?))
}

/// `‖δᵏ‖∞` for `k = 0..=k_max`.
pub fn deviation_series(p: &TransitionMatrix, k_max: usize) -> Result<Vec<f64>> {
    let pi = stationary_projector(p)?;
    let m = p.size();
    let centered = p.entries() - &pi;
    let mut out = Vec::with_capacity(k_max + 1);
    out.push(max_abs(&(&pi - DMatrix::identity(m, m))));
    let mut acc = DMatrix::identity(m, m);
    for _ in 1..=k_max {
        acc = &acc * &centered;
        out.push(max_abs(&acc));
    }
    Ok(out)
}

/// `M^{3/2} · |λ₂|ᵏ`, an upper bound on both `‖δᵏ‖∞` and `‖δᵏ‖_F` for
/// symmetric chains.
pub fn symmetric_deviation_bound(p: &TransitionMatrix, k: u64) -> Result<f64> {
    if !p.is_symmetric(SYMMETRY_TOL) {
        return Err(Error::NotSymmetric);
    }
    let profile = spectral_profile(p)?;
    let m = p.size() as f64;
    Ok(m.powf(1.5) * profile.lambda2_modulus.powi(k.min(i32::MAX as u64) as i32))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstantsMethod {
    AnalyticDiagonalizable,
    SymmetricExact,
    EmpiricalFit,
}

/// Certifies `‖δᵏ‖∞ ≤ c_value · rateᵏ` for every `k ≥ k_floor`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct MixingConstants {
    pub c_value: f64,
    pub k_floor: u64,
    pub rate: f64,
    pub method: ConstantsMethod,
}

impl MixingConstants {
    pub fn bound(&self, k: u64) -> f64 {
        self.c_value * self.rate.powf(k as f64)
    }
}

fn require_ergodic(p: &TransitionMatrix) -> Result<()> {
    if classify_chain(p).is_ergodic() {
        Ok(())
    } else {
        Err(Error::NotErgodic)
    }
}

/// Eigenvector of `a` for the (approximate) eigenvalue `lambda`, by shifted
/// inverse iteration from a deterministic start vector.
fn eigenvector(a: &DMatrix<Complex64>, lambda: Complex64, salt: usize) -> Option<DVector<Complex64>> {
    let m = a.nrows();
    let scale = 1.0 + lambda.norm();
    let mut v = DVector::from_fn(m, |i, _| {
        let t = ((i + 1) * (salt + 3)) as f64;
        Complex64::new((t * 0.618_033_988_749).fract() + 0.1, (t * 0.414_213_562).fract() - 0.5)
    });
    v /= Complex64::new(v.norm(), 0.0);
    for shift in [1e-10, 1e-8, 1e-6] {
        let shifted = a - DMatrix::from_diagonal_element(m, m, lambda + Complex64::new(shift * scale, 0.0));
        let lu = shifted.lu();
        let mut w = v.clone();
        let mut ok = true;
        for _ in 0..4 {
            match lu.solve(&w) {
                Some(next) if next.iter().all(|z| z.re.is_finite() && z.im.is_finite()) => {
                    let n = next.norm();
                    if n == 0.0 {
                        ok = false;
                        break;
                    }
                    w = next / Complex64::new(n, 0.0);
                }
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            return Some(w);
        }
    }
    None
}

/// Frobenius condition estimate `‖U‖_F · ‖U⁻¹‖_F` of the unit-column
/// eigenvector matrix, or `None` when `U` is numerically singular.
pub fn eigenvector_condition(p: &TransitionMatrix) -> Result<Option<f64>> {
    let values = eigenvalues(p)?;
    let m = p.size();
    let a = p.entries().map(|x| Complex64::new(x, 0.0));
    let mut u = DMatrix::<Complex64>::zeros(m, m);
    for (idx, &lambda) in values.iter().enumerate() {
        let col = if idx == 0 {
            // Row-stochastic: the all-ones vector is the Perron eigenvector.
            DVector::from_element(m, Complex64::new(1.0 / (m as f64).sqrt(), 0.0))
        } else {
            match eigenvector(&a, lambda, idx) {
                Some(v) => v,
                None => return Ok(None),
            }
        };
        u.set_column(idx, &col);
    }
    let u_norm = u.norm();
    match u.try_inverse() {
        Some(inv) if inv.iter().all(|z| z.re.is_finite() && z.im.is_finite()) => Ok(Some(u_norm * inv.norm())),
        _ => Ok(None),
    }
}

/// Closed-form constants for symmetric or diagonalizable chains.
pub fn analytic_constants(p: &TransitionMatrix) -> Result<MixingConstants> {
    require_ergodic(p)?;
    let profile = spectral_profile(p)?;
    let m = p.size() as f64;
    if profile.symmetric {
        return Ok(MixingConstants {
            c_value: m.powf(1.5),
            k_floor: 0,
            rate: profile.lambda2_modulus.max(RATE_FLOOR),
            method: ConstantsMethod::SymmetricExact,
        });
    }
    let condition = eigenvector_condition(p)?.unwrap_or(f64::INFINITY);
    if !(condition < CONDITION_LIMIT) {
        return Err(Error::Defective { condition });
    }
    // All Jordan blocks have size one, so the block-size sum is M − 1 and
    // the lookback floor vanishes.
    Ok(MixingConstants {
        c_value: (m - 1.0).sqrt() * condition,
        k_floor: 0,
        rate: profile.lambda_p,
        method: ConstantsMethod::AnalyticDiagonalizable,
    })
}

fn least_squares_line(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, my - slope * mx)
}

/// Fits `ln‖δᵏ‖∞ ≈ ln c + k ln rate` on `k ≤ k_max`, then inflates `c` so
/// the bound holds at every sampled `k`.
pub fn fit_mixing_constants(p: &TransitionMatrix, k_max: usize) -> Result<MixingConstants> {
    if k_max < 10 {
        return Err(Error::InvalidArgument(format!("k_max must be at least 10, got {k_max}")));
    }
    require_ergodic(p)?;
    let devs = deviation_series(p, k_max)?;
    let last = devs[k_max];
    if last >= 1e-3 {
        return Err(Error::InsufficientDecay { k_max, last });
    }
    let points: Vec<(f64, f64)> = devs
        .iter()
        .enumerate()
        .filter(|(_, &d)| d > 1e-14)
        .map(|(k, &d)| (k as f64, d.ln()))
        .collect();

    let log_rate = if points.len() >= 2 {
        let (slope, intercept) = least_squares_line(&points);
        // Drop the pre-asymptotic head: start where the data come within a
        // factor of ten of the first-pass trend.
        let start = points
            .iter()
            .position(|&(k, y)| (y - (intercept + slope * k)).abs() <= 10f64.ln())
            .unwrap_or(0);
        let tail = &points[start..];
        if tail.len() >= 2 {
            least_squares_line(tail).0
        } else {
            slope
        }
    } else {
        // Decay below 1e-14 within one step.
        (devs[1].max(RATE_FLOOR) / devs[0]).ln()
    };
    let rate = log_rate.exp().clamp(RATE_FLOOR, 1.0 - 1e-12);

    let log_c = devs
        .iter()
        .enumerate()
        .filter(|(_, &d)| d > 0.0)
        .map(|(k, &d)| d.ln() - k as f64 * rate.ln())
        .fold(f64::NEG_INFINITY, f64::max);
    // One ulp-scale nudge so the bound also holds after recomputation.
    let c_value = log_c.exp() * (1.0 + 1e-12);
    if !c_value.is_finite() {
        return Err(Error::NoConvergence("fitted constant overflowed".into()));
    }
    Ok(MixingConstants { c_value, k_floor: 0, rate, method: ConstantsMethod::EmpiricalFit })
}

/// Analytic constants when available, otherwise the empirical fit on
/// `k ≤ k_max`.
pub fn mixing_constants(p: &TransitionMatrix, k_max: usize) -> Result<MixingConstants> {
    match analytic_constants(p) {
        Err(Error::Defective { .. }) => fit_mixing_constants(p, k_max),
        other => other,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexKind {
    /// Convex lookback, plugged with `H`.
    ConvexJ,
    /// Nonconvex lookback, plugged with `D²`.
    NonconvexT,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct MixingIndex {
    pub k: u64,
    pub value: u64,
    pub constant_h: f64,
    pub provenance: IndexKind,
}

/// `min{ max{ ⌈ln(k / (2 c H)) / ln(1/rate)⌉, k_floor }, k }`.
pub fn mixing_index(k: u64, constants: &MixingConstants, h: f64, kind: IndexKind) -> Result<MixingIndex> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if !(constants.rate < 1.0) || !(h > 0.0) {
        return Err(Error::InvalidArgument("rate must be < 1 and H positive".into()));
    }
    let raw = ((k as f64) / (2.0 * constants.c_value * h)).ln() / (1.0 / constants.rate).ln();
    let lookback = if raw.is_finite() && raw > 0.0 { raw.ceil() as u64 } else { 0 };
    let value = lookback.max(constants.k_floor).min(k);
    Ok(MixingIndex { k, value, constant_h: h, provenance: kind })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn tm(rows: &[&[f64]]) -> TransitionMatrix {
        TransitionMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn two_state() -> TransitionMatrix {
        tm(&[&[0.7, 0.3], &[0.3, 0.7]])
    }

    #[test]
    fn two_state_profile() {
        let prof = spectral_profile(&two_state()).unwrap();
        assert_abs_diff_eq!(prof.eigen_moduli[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(prof.lambda2_modulus, 0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(prof.lambda_p, 0.7, epsilon = 1e-12);
        assert_abs_diff_eq!(prof.psi_p, 1.0 / (1.0f64 / 0.7).ln(), epsilon = 1e-10);
        assert_abs_diff_eq!(prof.psi_p, 2.8037, epsilon = 1e-4);
        assert!(prof.symmetric && !prof.degenerate);
    }

    #[test]
    fn permutation_is_degenerate() {
        let prof = spectral_profile(&tm(&[&[0.0, 1.0], &[1.0, 0.0]])).unwrap();
        assert_abs_diff_eq!(prof.eigen_moduli[1], 1.0, epsilon = 1e-12);
        assert!(prof.degenerate);
    }

    #[test]
    fn psi_boundary() {
        assert_eq!(psi_of((-1.0f64).exp()), 1.0);
        assert_eq!(psi_of(0.2), 1.0);
        assert!(psi_of(0.9) > psi_of(0.8));
    }

    #[test]
    fn two_state_deviation() {
        let p = two_state();
        assert_abs_diff_eq!(deviation_norm(&p, 0).unwrap(), 0.5, epsilon = 1e-15);
        for k in 0..=40u64 {
            let expected = 0.5 * 0.4f64.powi(k as i32);
            assert!((deviation_norm(&p, k).unwrap() - expected).abs() <= 1e-12 * expected.max(1e-300) + 1e-300);
        }
        let series = deviation_series(&p, 40).unwrap();
        for (k, d) in series.iter().enumerate() {
            assert_abs_diff_eq!(*d, deviation_norm(&p, k as u64).unwrap(), epsilon = 1e-15);
        }
    }

    #[test]
    fn symmetric_bound_examples() {
        let p = two_state();
        let b0 = symmetric_deviation_bound(&p, 0).unwrap();
        assert_abs_diff_eq!(b0, 2f64.powf(1.5), epsilon = 1e-12);
        let b5 = symmetric_deviation_bound(&p, 5).unwrap();
        assert_abs_diff_eq!(b5, 2f64.powf(1.5) * 0.4f64.powi(5), epsilon = 1e-12);
        assert!(b5 >= 0.5 * 0.4f64.powi(5));
        let q = tm(&[&[0.0, 2.0 / 3.0, 1.0 / 3.0], &[1.0 / 3.0, 0.0, 2.0 / 3.0], &[2.0 / 3.0, 1.0 / 3.0, 0.0]]);
        assert_eq!(symmetric_deviation_bound(&q, 3), Err(Error::NotSymmetric));
    }

    #[test]
    fn analytic_symmetric_constants() {
        let c = analytic_constants(&two_state()).unwrap();
        assert_eq!(c.method, ConstantsMethod::SymmetricExact);
        assert_abs_diff_eq!(c.c_value, 2f64.powf(1.5), epsilon = 1e-12);
        assert_abs_diff_eq!(c.rate, 0.4, epsilon = 1e-12);
        assert_eq!(c.k_floor, 0);
    }

    #[test]
    fn defective_chain_is_rejected() {
        // Uniform projector plus a rank-one nilpotent: spectrum {1, 0, 0}
        // with a 2x2 Jordan block at zero.
        let p = tm(&[&[0.5, 0.5, 0.0], &[1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0], &[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]]);
        assert!(matches!(analytic_constants(&p), Err(Error::Defective { .. })));
        let c = mixing_constants(&p, 20).unwrap();
        assert_eq!(c.method, ConstantsMethod::EmpiricalFit);
        for (k, d) in deviation_series(&p, 20).unwrap().iter().enumerate() {
            assert!(*d <= c.bound(k as u64));
        }
    }

    #[test]
    fn nonsymmetric_analytic_bound_holds() {
        let q = tm(&[&[0.0, 2.0 / 3.0, 1.0 / 3.0], &[1.0 / 3.0, 0.0, 2.0 / 3.0], &[2.0 / 3.0, 1.0 / 3.0, 0.0]]);
        let c = analytic_constants(&q).unwrap();
        assert_eq!(c.method, ConstantsMethod::AnalyticDiagonalizable);
        let devs = deviation_series(&q, 100).unwrap();
        for (k, d) in devs.iter().enumerate() {
            assert!(*d <= c.bound(k as u64), "k={k}");
        }
    }

    #[test]
    fn fit_two_state() {
        let c = fit_mixing_constants(&two_state(), 50).unwrap();
        assert_abs_diff_eq!(c.rate, 0.4, epsilon = 1e-6);
        assert!((c.c_value - 0.5).abs() <= 0.05);
        let devs = deviation_series(&two_state(), 50).unwrap();
        for (k, d) in devs.iter().enumerate() {
            assert!(*d <= c.bound(k as u64));
        }
    }

    #[test]
    fn fit_guards() {
        let flip = tm(&[&[0.0, 1.0], &[1.0, 0.0]]);
        assert_eq!(fit_mixing_constants(&flip, 50), Err(Error::NotErgodic));
        let slow = tm(&[&[0.999, 0.001], &[0.001, 0.999]]);
        assert!(matches!(fit_mixing_constants(&slow, 50), Err(Error::InsufficientDecay { .. })));
        assert!(matches!(fit_mixing_constants(&two_state(), 5), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn index_examples() {
        let c = MixingConstants { c_value: 1.0, k_floor: 0, rate: 0.5, method: ConstantsMethod::EmpiricalFit };
        assert_eq!(mixing_index(8, &c, 0.5, IndexKind::ConvexJ).unwrap().value, 3);
        assert_eq!(mixing_index(1, &c, 0.5, IndexKind::ConvexJ).unwrap().value, 0);
        let slow = MixingConstants { c_value: 100.0, k_floor: 0, rate: 0.99, method: ConstantsMethod::EmpiricalFit };
        // 2 / 200 < 1: the log is negative and the floor of zero applies.
        assert_eq!(mixing_index(2, &slow, 0.5, IndexKind::NonconvexT).unwrap().value, 0);
        let tiny = MixingConstants { c_value: 1e-6, k_floor: 0, rate: 0.99, method: ConstantsMethod::EmpiricalFit };
        assert_eq!(mixing_index(2, &tiny, 0.5, IndexKind::NonconvexT).unwrap().value, 2);
        let floored = MixingConstants { k_floor: 5, ..c };
        assert_eq!(mixing_index(3, &floored, 0.5, IndexKind::ConvexJ).unwrap().value, 3);
        assert_eq!(mixing_index(100, &floored, 0.5, IndexKind::ConvexJ).unwrap().value, 7);
    }
}
