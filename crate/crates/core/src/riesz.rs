//! Riesz products `R̄ᵢ(t) = Π_{j≤i}(1 + cos(n_j t))` on the torus and their
//! comparison with products of independent `1 + cos U` factors.

use std::f64::consts::PI;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::{abs_pow, DistributionSpec, RandomSource};
use crate::error::{Error, Result};
use crate::montecarlo::{estimate_lhs, CoefficientSet, EstimateWithCI};
use crate::quad::pairwise_sum;

pub const MAX_FREQUENCY: u64 = 1 << 20;
pub const MIN_POINTS: usize = 4096;
/// Grid points per unit of the largest frequency.
pub const POINTS_PER_FREQUENCY: usize = 64;
const BLOCK: usize = 4096;
/// Offset separating coefficient-draw seeds from replication seeds.
const DRAW_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LacunarySequence {
    pub terms: Vec<u64>,
    pub ratios: Vec<f64>,
    /// `None` for a single term.
    pub min_ratio: Option<f64>,
    /// `Σ n_k/n_{k+1}` over the prefix.
    pub tail_sum: f64,
    pub lacunary: bool,
}

impl LacunarySequence {
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn max_frequency(&self) -> u64 {
        *self.terms.last().expect("nonempty")
    }

    /// Smallest admissible grid size.
    pub fn min_points(&self) -> usize {
        MIN_POINTS.max(POINTS_PER_FREQUENCY * self.max_frequency() as usize)
    }
}

pub fn check_lacunary(terms: &[u64]) -> Result<LacunarySequence> {
    if terms.is_empty() {
        return Err(Error::InvalidParameter("sequence must be nonempty".into()));
    }
    if terms[0] == 0 {
        return Err(Error::InvalidParameter("frequencies must be positive".into()));
    }
    if let Some(i) = terms.windows(2).position(|w| w[1] <= w[0]) {
        return Err(Error::NotIncreasing(i + 1));
    }
    let top = *terms.last().unwrap();
    if top > MAX_FREQUENCY {
        return Err(Error::InvalidParameter(format!("largest frequency {top} exceeds {MAX_FREQUENCY}")));
    }
    let ratios: Vec<f64> = terms.windows(2).map(|w| w[1] as f64 / w[0] as f64).collect();
    let min_ratio = ratios.iter().copied().reduce(f64::min);
    let tail_sum = ratios.iter().map(|r| 1.0 / r).sum();
    Ok(LacunarySequence {
        terms: terms.to_vec(),
        ratios,
        min_ratio,
        tail_sum,
        lacunary: min_ratio.is_none_or(|r| r >= 3.0),
    })
}

/// `R̄ᵢ(t)`; `R̄₀ ≡ 1`.
pub fn riesz_eval(seq: &LacunarySequence, i: usize, t: f64) -> f64 {
    seq.terms[..i].iter().map(|&n| 1.0 + (n as f64 * t).cos()).product()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RieszCombination {
    pub seq: LacunarySequence,
    /// `a₀..aₙ`, `a₀` multiplying `R̄₀ ≡ 1`.
    pub coeffs: Vec<f64>,
}

impl RieszCombination {
    pub fn new(seq: LacunarySequence, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.is_empty() || coeffs.len() > seq.len() + 1 {
            return Err(Error::DimensionMismatch(format!(
                "{} coefficients for a sequence of length {}",
                coeffs.len(),
                seq.len()
            )));
        }
        if coeffs.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidParameter("coefficients must be finite".into()));
        }
        Ok(RieszCombination { seq, coeffs })
    }

    /// Coefficient vector selecting the single term `R̄ᵢ`.
    pub fn single_term(seq: LacunarySequence, i: usize) -> Result<Self> {
        let mut coeffs = vec![0.0; i + 1];
        coeffs[i] = 1.0;
        Self::new(seq, coeffs)
    }

    /// `Σ aᵢR̄ᵢ` at the grid point `k` of an `N`-point grid. Angles are
    /// reduced exactly as `(n_j·k mod N)/N` before scaling by `2π`.
    fn at_grid(&self, k: u64, n_points: u64) -> f64 {
        let mut r = 1.0;
        let mut acc = self.coeffs[0];
        for (a, &n) in self.coeffs[1..].iter().zip(&self.seq.terms) {
            let phase = ((n as u128 * k as u128) % n_points as u128) as f64 / n_points as f64;
            r *= 1.0 + (2.0 * PI * phase).cos();
            acc += a * r;
        }
        acc
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TorusIntegral {
    pub value: f64,
    /// `|I_N − I_{N/2}|`, with `I_{N/2}` from the even grid points.
    pub richardson_error: f64,
    pub n_points: usize,
}

/// `∫|Σ aᵢR̄ᵢ|^p dm` by the uniform trapezoid rule on `N` points.
pub fn riesz_lp_norm(comb: &RieszCombination, p: f64, n_points: usize) -> Result<TorusIntegral> {
    if !(p >= 1.0) || !p.is_finite() {
        return Err(Error::InvalidParameter(format!("torus norms need p >= 1, got {p}")));
    }
    let need = comb.seq.min_points();
    if n_points < need {
        return Err(Error::TooFewPoints { need, got: n_points });
    }
    if !n_points.is_multiple_of(2) {
        return Err(Error::InvalidParameter(format!("grid size must be even, got {n_points}")));
    }
    let n = n_points as u64;
    let blocks = n_points.div_ceil(BLOCK);
    // Each block returns (sum over all points, sum over even points).
    let partial: Vec<(f64, f64)> = (0..blocks)
        .into_par_iter()
        .map(|blk| {
            let lo = blk * BLOCK;
            let hi = (lo + BLOCK).min(n_points);
            let vals: Vec<f64> = (lo..hi).map(|k| abs_pow(comb.at_grid(k as u64, n), p)).collect();
            let evens: Vec<f64> = vals.iter().step_by(2).copied().collect();
            (pairwise_sum(&vals), pairwise_sum(&evens))
        })
        .collect();
    let all: Vec<f64> = partial.iter().map(|x| x.0).collect();
    let even: Vec<f64> = partial.iter().map(|x| x.1).collect();
    let full = pairwise_sum(&all) / n_points as f64;
    let half = pairwise_sum(&even) / (n_points / 2) as f64;
    Ok(TorusIntegral { value: full, richardson_error: (full - half).abs(), n_points })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub p: f64,
    pub coeffs: Vec<f64>,
    pub torus: TorusIntegral,
    /// `E|Σ aᵢRᵢ|^p` with `Rᵢ` products of independent `1 + cos U`.
    pub probabilistic: EstimateWithCI,
    /// `|aᵢ|^p ∫R̄ᵢ^p dm` per term.
    pub per_term_torus: Vec<f64>,
    /// `|aᵢ|^p (E(1 + cos U)^p)^i` per term.
    pub per_term_probabilistic: Vec<f64>,
    pub ratio: f64,
}

/// Both sides of the torus/probability comparison for one combination.
/// The probabilistic side is exact for a single nonzero term and for `p = 1`
/// with nonnegative coefficients, and Monte Carlo otherwise.
pub fn comparison_check(
    comb: &RieszCombination,
    p: f64,
    reps: usize,
    n_points: Option<usize>,
    src: RandomSource,
) -> Result<ComparisonReport> {
    if !comb.seq.lacunary {
        return Err(Error::NotLacunary(comb.seq.min_ratio.unwrap_or(f64::NAN)));
    }
    let n_points = n_points.unwrap_or_else(|| comb.seq.min_points().next_power_of_two());
    let torus = riesz_lp_norm(comb, p, n_points)?;
    let factor = DistributionSpec::RieszFactor;
    let m = factor.abs_moment(p)?.value;
    let per_term_probabilistic: Vec<f64> =
        comb.coeffs.iter().enumerate().map(|(i, a)| abs_pow(*a, p) * m.powi(i as i32)).collect();
    let mut per_term_torus = Vec::with_capacity(comb.coeffs.len());
    for (i, a) in comb.coeffs.iter().enumerate() {
        if *a == 0.0 {
            per_term_torus.push(0.0);
            continue;
        }
        let single = RieszCombination::single_term(comb.seq.clone(), i)?;
        per_term_torus.push(abs_pow(*a, p) * riesz_lp_norm(&single, p, n_points)?.value);
    }
    let nonzero: Vec<usize> = (0..comb.coeffs.len()).filter(|&i| comb.coeffs[i] != 0.0).collect();
    let probabilistic = if nonzero.len() <= 1 {
        EstimateWithCI::exact(nonzero.first().map(|&i| per_term_probabilistic[i]).unwrap_or(0.0))
    } else if p == 1.0 && comb.coeffs.iter().all(|a| *a >= 0.0) {
        EstimateWithCI::exact(comb.coeffs.iter().sum())
    } else {
        let cs = CoefficientSet::scalars(&comb.coeffs)?;
        estimate_lhs(&factor, &cs, p, reps, src)?
    };
    Ok(ComparisonReport {
        p,
        coeffs: comb.coeffs.clone(),
        torus,
        probabilistic,
        per_term_torus,
        per_term_probabilistic,
        ratio: torus.value / probabilistic.mean,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonDraws {
    pub p: f64,
    pub draws: Vec<ComparisonReport>,
    pub min_ratio: f64,
    pub max_ratio: f64,
    /// `max_ratio / min_ratio`.
    pub band: f64,
}

/// Repeats [`comparison_check`] over `n_draws` coefficient vectors
/// `a₀..a_m` with entries uniform on `[−1, 1]`.
pub fn comparison_draws(
    seq: &LacunarySequence,
    p: f64,
    n_draws: usize,
    reps: usize,
    n_points: Option<usize>,
    src: RandomSource,
) -> Result<ComparisonDraws> {
    if n_draws == 0 {
        return Err(Error::InvalidParameter("need at least one draw".into()));
    }
    let mut draws = Vec::with_capacity(n_draws);
    for d in 0..n_draws {
        let mut rng = RandomSource { seed: src.seed ^ DRAW_SEED_SALT, stream_id: d as u64 }.rng();
        let coeffs: Vec<f64> = (0..=seq.len()).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
        let comb = RieszCombination::new(seq.clone(), coeffs)?;
        let draw_src = RandomSource::new(src.seed.wrapping_add(d as u64));
        draws.push(comparison_check(&comb, p, reps, n_points, draw_src)?);
    }
    let min_ratio = draws.iter().map(|r| r.ratio).fold(f64::INFINITY, f64::min);
    let max_ratio = draws.iter().map(|r| r.ratio).fold(f64::NEG_INFINITY, f64::max);
    Ok(ComparisonDraws { p, draws, min_ratio, max_ratio, band: max_ratio / min_ratio })
}
