//! Numerical checks of the intermediate inequalities: the window bounds for
//! `E|uX + v|^p` and the tail bounds for `‖Σ vᵢRᵢ‖^p`.

use serde::{Deserialize, Serialize};

use crate::assumptions::{LargePCertificate, SmallPCertificate};
use crate::dist::{abs_pow, DistributionSpec};
use crate::error::{Error, Result};
use crate::montecarlo::{lhs_distribution, CoefficientSet};

/// Default grid of tail levels.
pub const TAIL_LEVELS: [f64; 4] = [1.0, 2.0, 4.0, 8.0];
/// Default grid for the scalars `u, v`.
pub const UV_GRID: [f64; 5] = [-2.0, -1.0, 0.0, 1.0, 2.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub t: f64,
    /// The level compared against `‖Σ vᵢRᵢ‖^p`.
    pub threshold: f64,
    pub prob: f64,
    pub bound: f64,
    pub holds: bool,
}

fn weighted_sum(coeffs: &CoefficientSet, p: f64, lambda: f64) -> f64 {
    coeffs.norms_pow(p).iter().enumerate().map(|(i, w)| lambda.powi(i as i32) * w).sum()
}

fn tail_rows(
    spec: &DistributionSpec,
    coeffs: &CoefficientSet,
    p: f64,
    levels: &[f64],
    threshold: impl Fn(f64) -> f64,
    bound: impl Fn(f64) -> f64,
) -> Result<Vec<TailRow>> {
    let dist = lhs_distribution(spec, coeffs)?;
    Ok(levels
        .iter()
        .map(|&t| {
            let th = threshold(t);
            let prob: f64 = dist.iter().filter(|o| abs_pow(o.norm, p) >= th).map(|o| o.prob).sum();
            let b = bound(t);
            TailRow { t, threshold: th, prob, bound: b, holds: prob <= b + 1e-12 }
        })
        .collect())
}

fn require_normalised(spec: &DistributionSpec, p: f64) -> Result<()> {
    let m = spec.abs_moment(p)?.value;
    if (m - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!("spec must satisfy E|X|^p = 1, got {m}")));
    }
    Ok(())
}

/// `P(‖Σ vᵢRᵢ‖^p ≥ t Σλⁱ‖vᵢ‖^p) ≤ (1−λ)^{(1−p)q/p} t^{−q/p}` for a
/// normalised spec with `(E|X|^q)^{1/q} ≤ λ`.
pub fn tail_bound_large_p(
    spec: &DistributionSpec,
    coeffs: &CoefficientSet,
    cert: &LargePCertificate,
    levels: &[f64],
) -> Result<Vec<TailRow>> {
    let (p, q, l) = (cert.p, cert.q, cert.lambda);
    require_normalised(spec, p)?;
    let w = weighted_sum(coeffs, p, l);
    tail_rows(spec, coeffs, p, levels, |t| t * w, |t| (1.0 - l).powf((1.0 - p) * q / p) * t.powf(-q / p))
}

/// `P(‖Σ vᵢRᵢ‖^p ≥ (t/(1−λ)) Σλⁱ‖vᵢ‖^p) ≤ t^{−1/2}` for a normalised spec
/// with `E|X|^{p/2} ≤ λ`.
pub fn tail_bound_small_p(
    spec: &DistributionSpec,
    coeffs: &CoefficientSet,
    cert: &SmallPCertificate,
    levels: &[f64],
) -> Result<Vec<TailRow>> {
    let (p, l) = (cert.p, cert.lambda);
    require_normalised(spec, p)?;
    let w = weighted_sum(coeffs, p, l);
    tail_rows(spec, coeffs, p, levels, |t| t * w / (1.0 - l), |t| t.powf(-0.5))
}

/// Smallest slack of `E|uX+v|^p 1{|X| ≤ A} − μ^p/8^p min(1, (E|X|)^{−p}) max(|u|^p, |v|^p)`
/// over the `(u, v)` grid, by finite sums.
pub fn window_bound_large_p(spec: &DistributionSpec, cert: &LargePCertificate, grid: &[f64]) -> Result<f64> {
    let atoms = spec.atoms().ok_or(Error::NotFiniteSupport)?;
    let p = cert.p;
    let factor = cert.mu.powf(p) / 8f64.powf(p) * 1f64.min(cert.mean_abs.powf(-p));
    let mut worst = f64::INFINITY;
    for &u in grid {
        for &v in grid {
            let lhs: f64 = atoms
                .iter()
                .filter(|a| a.value.abs() <= cert.a_param)
                .map(|a| a.prob * abs_pow(u * a.value + v, p))
                .sum();
            worst = worst.min(lhs - factor * abs_pow(u, p).max(abs_pow(v, p)));
        }
    }
    Ok(worst)
}

/// Smallest slack of `E|uX+v|^p 1{|X|^p ≤ A} − δ max(|u|^p, |v|^p)` over the grid.
pub fn window_bound_small_p(spec: &DistributionSpec, cert: &SmallPCertificate, grid: &[f64]) -> Result<f64> {
    let atoms = spec.atoms().ok_or(Error::NotFiniteSupport)?;
    let p = cert.p;
    let mut worst = f64::INFINITY;
    for &u in grid {
        for &v in grid {
            let lhs: f64 = atoms
                .iter()
                .filter(|a| abs_pow(a.value, p) <= cert.a_param)
                .map(|a| a.prob * abs_pow(u * a.value + v, p))
                .sum();
            worst = worst.min(lhs - cert.delta * abs_pow(u, p).max(abs_pow(v, p)));
        }
    }
    Ok(worst)
}
