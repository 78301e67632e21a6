//! Sandwich checks for `E‖Σ vᵢRᵢ‖^p`: seeded Monte Carlo with 3σ intervals,
//! and exact enumeration for finitely supported laws.
//!
//! Replication `r` always draws from stream `r` of the seed, and per-rep
//! values are reduced by a fixed-shape pairwise sum, so results do not depend
//! on the number of worker threads.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assumptions::{JointAtom, PairSpec};
use crate::constants::{self, ConstantBundle};
use crate::dist::{abs_pow, DistributionSpec, RandomSource};
use crate::error::{Error, Result};
use crate::norm::Norm;
use crate::quad::par_pairwise_sum;

pub const MIN_REPS: usize = 1000;
/// Largest outcome count exact enumeration will attempt.
pub const ENUM_LIMIT: f64 = 1e7;
/// Above this many outcomes enumeration splits on the first factor.
pub const ENUM_SPLIT: f64 = 1e5;
/// Largest outcome count for which the full outcome list is materialised.
pub const DISTRIBUTION_LIMIT: f64 = (1u64 << 20) as f64;
pub const CI_SIGMAS: f64 = 3.0;
pub const VERDICT_REL_TOL: f64 = 1e-9;
/// Goldie rows switch from enumeration to Monte Carlo above this count.
pub const GOLDIE_EXACT_LIMIT: f64 = 1e5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSet {
    pub dim: usize,
    pub vectors: Vec<Vec<f64>>,
    #[serde(default)]
    pub norm: Norm,
}

impl CoefficientSet {
    pub fn new(vectors: Vec<Vec<f64>>, norm: Norm) -> Result<Self> {
        let dim = vectors.first().map(|v| v.len()).unwrap_or(0);
        let set = CoefficientSet { dim, vectors, norm };
        set.validate()?;
        Ok(set)
    }

    /// Scalar coefficients `v₀..vₙ`.
    pub fn scalars(values: &[f64]) -> Result<Self> {
        Self::new(values.iter().map(|v| vec![*v]).collect(), Norm::L2)
    }

    /// Splits a flat list into vectors of length `dim`.
    pub fn from_flat(values: &[f64], dim: usize, norm: Norm) -> Result<Self> {
        if dim == 0 || values.is_empty() || !values.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch(format!(
                "{} values do not split into vectors of dimension {dim}",
                values.len()
            )));
        }
        Self::new(values.chunks(dim).map(|c| c.to_vec()).collect(), norm)
    }

    pub fn validate(&self) -> Result<()> {
        if self.vectors.is_empty() || self.dim == 0 {
            return Err(Error::DimensionMismatch("need at least one vector of positive dimension".into()));
        }
        if let Some(i) = self.vectors.iter().position(|v| v.len() != self.dim) {
            return Err(Error::DimensionMismatch(format!(
                "vector {i} has dimension {}, expected {}",
                self.vectors[i].len(),
                self.dim
            )));
        }
        if self.vectors.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("coefficients must be finite".into()));
        }
        Ok(())
    }

    /// Number of random factors, `n`.
    pub fn n(&self) -> usize {
        self.vectors.len() - 1
    }

    pub fn scaled(&self, t: f64) -> Self {
        CoefficientSet {
            dim: self.dim,
            vectors: self.vectors.iter().map(|v| v.iter().map(|x| x * t).collect()).collect(),
            norm: self.norm,
        }
    }

    pub fn with_norm(&self, norm: Norm) -> Self {
        CoefficientSet { norm, ..self.clone() }
    }

    /// `‖vᵢ‖^p` for each `i`.
    pub fn norms_pow(&self, p: f64) -> Vec<f64> {
        self.vectors.iter().map(|v| abs_pow(self.norm.of(v), p)).collect()
    }
}

/// `count` vectors of dimension `dim` with entries uniform on `[−scale, scale]`.
pub fn random_coefficients(count: usize, dim: usize, scale: f64, seed: u64, norm: Norm) -> Result<CoefficientSet> {
    if count == 0 || dim == 0 || !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "random coefficients need count, dim >= 1 and scale > 0 (got {count}, {dim}, {scale})"
        )));
    }
    let mut rng = RandomSource::new(seed).rng();
    let vectors = (0..count)
        .map(|_| (0..dim).map(|_| scale * (2.0 * rng.random::<f64>() - 1.0)).collect())
        .collect();
    CoefficientSet::new(vectors, norm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateWithCI {
    pub mean: f64,
    pub std_error: f64,
    pub replications: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub exact: bool,
}

impl EstimateWithCI {
    pub fn exact(value: f64) -> Self {
        EstimateWithCI { mean: value, std_error: 0.0, replications: 0, seed: None, exact: true }
    }

    pub fn interval(&self, sigmas: f64) -> (f64, f64) {
        (self.mean - sigmas * self.std_error, self.mean + sigmas * self.std_error)
    }

    pub fn scaled(&self, t: f64) -> Self {
        EstimateWithCI { mean: self.mean * t, std_error: self.std_error * t.abs(), ..*self }
    }
}

fn check_reps(reps: usize) -> Result<()> {
    if reps < MIN_REPS {
        return Err(Error::TooFewReplications { min: MIN_REPS, got: reps });
    }
    Ok(())
}

/// Runs `f` once per replication on its own stream; returns the estimate
/// and the per-replication values in replication order.
pub fn monte_carlo<F>(reps: usize, src: RandomSource, f: F) -> (EstimateWithCI, Vec<f64>)
where
    F: Fn(&mut ChaCha8Rng) -> f64 + Sync,
{
    let values: Vec<f64> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = src.with_stream(r as u64).rng();
            f(&mut rng)
        })
        .collect();
    let n = reps as f64;
    let mean = par_pairwise_sum(&values) / n;
    let dev: Vec<f64> = values.par_iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = if reps > 1 { par_pairwise_sum(&dev) / (n - 1.0) } else { 0.0 };
    let est = EstimateWithCI { mean, std_error: (var / n).sqrt(), replications: reps, seed: Some(src.seed), exact: false };
    (est, values)
}

fn sum_path<R: Rng + ?Sized>(spec: &DistributionSpec, coeffs: &CoefficientSet, rng: &mut R, s: &mut [f64]) {
    s.copy_from_slice(&coeffs.vectors[0]);
    let mut r = 1.0;
    for v in &coeffs.vectors[1..] {
        r *= spec.sample(rng);
        for (acc, c) in s.iter_mut().zip(v) {
            *acc += c * r;
        }
    }
}

/// Monte Carlo estimate of `E‖Σ vᵢRᵢ‖^p` and the per-replication values.
pub fn estimate_lhs_samples(
    spec: &DistributionSpec,
    coeffs: &CoefficientSet,
    p: f64,
    reps: usize,
    src: RandomSource,
) -> Result<(EstimateWithCI, Vec<f64>)> {
    check_reps(reps)?;
    spec.validate()?;
    coeffs.validate()?;
    if coeffs.n() == 0 {
        return Ok((EstimateWithCI::exact(abs_pow(coeffs.norm.of(&coeffs.vectors[0]), p)), Vec::new()));
    }
    let norm = coeffs.norm;
    Ok(monte_carlo(reps, src, |rng| {
        let mut s = vec![0.0; coeffs.dim];
        sum_path(spec, coeffs, rng, &mut s);
        abs_pow(norm.of(&s), p)
    }))
}

pub fn estimate_lhs(
    spec: &DistributionSpec,
    coeffs: &CoefficientSet,
    p: f64,
    reps: usize,
    src: RandomSource,
) -> Result<EstimateWithCI> {
    Ok(estimate_lhs_samples(spec, coeffs, p, reps, src)?.0)
}

/// Compensated (Neumaier) running sum.
#[derive(Debug, Clone, Copy, Default)]
struct Compensated {
    sum: f64,
    c: f64,
}

impl Compensated {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.c += (self.sum - t) + x;
        } else {
            self.c += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn merge(&mut self, other: Compensated) {
        self.add(other.sum);
        self.add(other.c);
    }

    fn value(&self) -> f64 {
        self.sum + self.c
    }
}

enum Walk<'a> {
    /// `R ← R·x`, then `S ← S + v_depth·R`.
    Sandwich(&'a [Vec<f64>]),
    /// `S ← S + R·b`, then `R ← R·x`.
    Perpetuity,
}

struct Enumerator<'a> {
    atoms: Vec<JointAtom>,
    levels: usize,
    walk: Walk<'a>,
    dim: usize,
}

impl Enumerator<'_> {
    fn outcomes(&self) -> f64 {
        (self.atoms.len() as f64).powi(self.levels as i32)
    }

    fn step(&self, depth: usize, atom: &JointAtom, r: f64, from: &[f64], to: &mut [f64]) -> f64 {
        match self.walk {
            Walk::Sandwich(v) => {
                let rn = r * atom.x;
                for ((t, f), c) in to.iter_mut().zip(from).zip(&v[depth + 1]) {
                    *t = f + c * rn;
                }
                rn
            }
            Walk::Perpetuity => {
                for ((t, f), b) in to.iter_mut().zip(from).zip(&atom.b) {
                    *t = f + r * b;
                }
                r * atom.x
            }
        }
    }

    fn dfs<V: FnMut(f64, &[f64])>(&self, depth: usize, r: f64, prob: f64, stack: &mut [Vec<f64>], visit: &mut V) {
        if depth == self.levels {
            visit(prob, &stack[depth]);
            return;
        }
        for atom in &self.atoms {
            let (head, tail) = stack.split_at_mut(depth + 1);
            let rn = self.step(depth, atom, r, &head[depth], &mut tail[0]);
            self.dfs(depth + 1, rn, prob * atom.prob, stack, visit);
        }
    }

    /// Visits every outcome in lexicographic order. Branches of the first
    /// factor run in parallel when the tree is large; `fold` results are
    /// returned per branch, in order.
    fn run<T, F, V>(&self, init: &[f64], make: F, visit: V) -> Vec<T>
    where
        T: Send,
        F: Fn() -> T + Sync,
        V: Fn(&mut T, f64, &[f64]) + Sync,
    {
        let fresh_stack = || {
            let mut stack = vec![vec![0.0; self.dim]; self.levels + 1];
            stack[0].copy_from_slice(init);
            stack
        };
        if self.levels == 0 || self.outcomes() <= ENUM_SPLIT {
            let mut acc = make();
            let mut stack = fresh_stack();
            self.dfs(0, 1.0, 1.0, &mut stack, &mut |pr, s| visit(&mut acc, pr, s));
            return vec![acc];
        }
        self.atoms
            .par_iter()
            .map(|atom| {
                let mut acc = make();
                let mut stack = fresh_stack();
                let (head, tail) = stack.split_at_mut(1);
                let r = self.step(0, atom, 1.0, &head[0], &mut tail[0]);
                self.dfs(1, r, atom.prob, &mut stack, &mut |pr, s| visit(&mut acc, pr, s));
                acc
            })
            .collect()
    }
}

fn sandwich_enumerator<'a>(spec: &DistributionSpec, coeffs: &'a CoefficientSet, limit: f64) -> Result<Enumerator<'a>> {
    let atoms = spec.atoms().ok_or(Error::NotFiniteSupport)?;
    let e = Enumerator {
        atoms: atoms.iter().map(|a| JointAtom { prob: a.prob, x: a.value, b: Vec::new() }).collect(),
        levels: coeffs.n(),
        walk: Walk::Sandwich(&coeffs.vectors),
        dim: coeffs.dim,
    };
    if e.outcomes() > limit {
        return Err(Error::TooLarge { outcomes: e.outcomes(), limit });
    }
    Ok(e)
}

/// Exact `E‖Σ vᵢRᵢ‖^p` by enumerating all `sⁿ` outcomes.
pub fn brute_force_lhs(spec: &DistributionSpec, coeffs: &CoefficientSet, p: f64) -> Result<EstimateWithCI> {
    coeffs.validate()?;
    let e = sandwich_enumerator(spec, coeffs, ENUM_LIMIT)?;
    let norm = coeffs.norm;
    let parts = e.run(&coeffs.vectors[0], Compensated::default, |acc, pr, s| acc.add(pr * abs_pow(norm.of(s), p)));
    let mut total = Compensated::default();
    for part in parts {
        total.merge(part);
    }
    Ok(EstimateWithCI::exact(total.value()))
}

/// One enumerated outcome: probability and `‖Σ vᵢRᵢ‖`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub prob: f64,
    pub norm: f64,
}

/// The full law of `‖Σ vᵢRᵢ‖` for a finitely supported spec, in
/// lexicographic outcome order.
pub fn lhs_distribution(spec: &DistributionSpec, coeffs: &CoefficientSet) -> Result<Vec<Outcome>> {
    coeffs.validate()?;
    let e = sandwich_enumerator(spec, coeffs, DISTRIBUTION_LIMIT)?;
    let norm = coeffs.norm;
    let parts = e.run(&coeffs.vectors[0], Vec::new, |acc: &mut Vec<Outcome>, pr, s| {
        acc.push(Outcome { prob: pr, norm: norm.of(s) })
    });
    Ok(parts.into_iter().flatten().collect())
}

/// `Σ ‖vᵢ‖^p (E|X|^p)^i`.
pub fn rhs_sum(spec: &DistributionSpec, coeffs: &CoefficientSet, p: f64) -> Result<f64> {
    let m = spec.abs_moment(p)?.value;
    let mut total = Compensated::default();
    let mut mi = 1.0;
    for w in coeffs.norms_pow(p) {
        total.add(w * mi);
        mi *= m;
    }
    Ok(total.value())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

/// Compares the 3σ interval of `est` with `[lower·scale − tol, upper·scale + tol]`,
/// `tol = 1e−9·scale`.
pub fn bracket_verdict(est: &EstimateWithCI, lower: f64, upper: f64, scale: f64) -> (Verdict, [f64; 2]) {
    let tol = VERDICT_REL_TOL * scale.abs();
    let lo_b = lower * scale - tol;
    let hi_b = upper * scale + tol;
    let (lo, hi) = est.interval(CI_SIGMAS);
    let verdict = if lo >= lo_b && hi <= hi_b {
        Verdict::Pass
    } else if hi < lo_b || lo > hi_b {
        Verdict::Fail
    } else {
        Verdict::Inconclusive
    };
    (verdict, [lower * scale, upper * scale])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichReport {
    pub p: f64,
    pub n: usize,
    pub dim: usize,
    pub norm: Norm,
    pub coefficients: Vec<Vec<f64>>,
    pub lhs: EstimateWithCI,
    pub rhs_sum: f64,
    pub ratio: f64,
    /// `[lower_c·rhs_sum, upper_C·rhs_sum]`.
    pub bracket: [f64; 2],
    pub lower_c: f64,
    pub upper_c: f64,
    pub verdict: Verdict,
}

/// Exact verdict when enumeration is feasible, Monte Carlo otherwise.
pub fn run_sandwich_samples(
    spec: &DistributionSpec,
    p: f64,
    coeffs: &CoefficientSet,
    bundle: &ConstantBundle,
    reps: usize,
    src: RandomSource,
) -> Result<(SandwichReport, Vec<f64>)> {
    bundle.check_regime(p)?;
    let rhs = rhs_sum(spec, coeffs, p)?;
    let (lhs, samples) = match brute_force_lhs(spec, coeffs, p) {
        Ok(e) => (e, Vec::new()),
        Err(Error::NotFiniteSupport | Error::TooLarge { .. }) => estimate_lhs_samples(spec, coeffs, p, reps, src)?,
        Err(e) => return Err(e),
    };
    let (verdict, bracket) = bracket_verdict(&lhs, bundle.lower_c, bundle.upper_c, rhs);
    let report = SandwichReport {
        p,
        n: coeffs.n(),
        dim: coeffs.dim,
        norm: coeffs.norm,
        coefficients: coeffs.vectors.clone(),
        lhs,
        rhs_sum: rhs,
        ratio: lhs.mean / rhs,
        bracket,
        lower_c: bundle.lower_c,
        upper_c: bundle.upper_c,
        verdict,
    };
    Ok((report, samples))
}

pub fn run_sandwich(
    spec: &DistributionSpec,
    p: f64,
    coeffs: &CoefficientSet,
    bundle: &ConstantBundle,
    reps: usize,
    src: RandomSource,
) -> Result<SandwichReport> {
    Ok(run_sandwich_samples(spec, p, coeffs, bundle, reps, src)?.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KhintchineReport {
    pub n: usize,
    pub p: f64,
    pub estimate: EstimateWithCI,
    /// Known value of `E|Σᵢ₌₁ⁿ Rᵢ|^p`, when available.
    pub exact: Option<f64>,
    /// `(estimate − exact)/std_error`.
    pub z_score: Option<f64>,
    pub rhs_sum: f64,
    pub ratio: f64,
}

/// `E|Σᵢ₌₁ⁿ Rᵢ|^p` for random signs, against the would-be right side `n`.
pub fn khintchine_counterexample(n: usize, p: f64, reps: usize, src: RandomSource) -> Result<KhintchineReport> {
    if n == 0 {
        return Err(Error::InvalidParameter("n must be at least 1".into()));
    }
    let spec = DistributionSpec::RademacherSign;
    let mut scalars = vec![1.0; n + 1];
    scalars[0] = 0.0;
    let coeffs = CoefficientSet::scalars(&scalars)?;
    let nf = n as f64;
    let exact = if p == 2.0 {
        Some(nf)
    } else if p == 4.0 {
        Some(3.0 * nf * nf - 2.0 * nf)
    } else if n <= 20 {
        Some(brute_force_lhs(&spec, &coeffs, p)?.mean)
    } else {
        None
    };
    let estimate = estimate_lhs(&spec, &coeffs, p, reps, src)?;
    let z_score = exact.map(|e| if estimate.std_error > 0.0 { (estimate.mean - e) / estimate.std_error } else { 0.0 });
    Ok(KhintchineReport { n, p, estimate, exact, z_score, rhs_sum: nf, ratio: estimate.mean / nf })
}

fn perpetuity_path<R: Rng + ?Sized>(pair: &PairSpec, n: usize, rng: &mut R, s: &mut [f64], b: &mut [f64]) {
    s.iter_mut().for_each(|x| *x = 0.0);
    let mut r = 1.0;
    for _ in 0..n {
        let x = pair.sample_into(rng, b);
        for (acc, bi) in s.iter_mut().zip(b.iter()) {
            *acc += r * bi;
        }
        r *= x;
    }
}

/// Monte Carlo estimate of `E‖Σᵢ₌₁ⁿ Rᵢ₋₁Bᵢ‖^p` and the per-replication values.
pub fn perpetuity_lhs_samples(
    pair: &PairSpec,
    n: usize,
    p: f64,
    reps: usize,
    src: RandomSource,
) -> Result<(EstimateWithCI, Vec<f64>)> {
    check_reps(reps)?;
    pair.validate()?;
    let d = pair.dim();
    let norm = pair.norm;
    Ok(monte_carlo(reps, src, |rng| {
        let mut s = vec![0.0; d];
        let mut b = vec![0.0; d];
        perpetuity_path(pair, n, rng, &mut s, &mut b);
        abs_pow(norm.of(&s), p)
    }))
}

pub fn perpetuity_lhs(pair: &PairSpec, n: usize, p: f64, reps: usize, src: RandomSource) -> Result<EstimateWithCI> {
    Ok(perpetuity_lhs_samples(pair, n, p, reps, src)?.0)
}

fn perpetuity_enumerator(pair: &PairSpec, n: usize, limit: f64) -> Result<Enumerator<'static>> {
    let atoms = pair.joint_atoms().ok_or(Error::NotFiniteSupport)?;
    let e = Enumerator { atoms, levels: n, walk: Walk::Perpetuity, dim: pair.dim() };
    if e.outcomes() > limit {
        return Err(Error::TooLarge { outcomes: e.outcomes(), limit });
    }
    Ok(e)
}

/// Exact `E‖Σᵢ₌₁ⁿ Rᵢ₋₁Bᵢ‖^p` by joint enumeration of `(X, B)` outcomes.
pub fn perpetuity_exact(pair: &PairSpec, n: usize, p: f64) -> Result<EstimateWithCI> {
    pair.validate()?;
    let e = perpetuity_enumerator(pair, n, ENUM_LIMIT)?;
    let norm = pair.norm;
    let init = vec![0.0; pair.dim()];
    let parts = e.run(&init, Compensated::default, |acc, pr, s| acc.add(pr * abs_pow(norm.of(s), p)));
    let mut total = Compensated::default();
    for part in parts {
        total.merge(part);
    }
    Ok(EstimateWithCI::exact(total.value()))
}

/// Constants for the bracket `[lower·E‖B‖^p, upper·E‖B‖^p]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldieConstants {
    /// Certified only for independent couplings.
    pub lower_c: Option<f64>,
    pub upper_c: f64,
    pub bundle: ConstantBundle,
}

/// Derives the bracket constants from the law of `X`, which must satisfy
/// `E X^p = 1`.
pub fn goldie_constants(pair: &PairSpec, p: f64) -> Result<GoldieConstants> {
    pair.validate()?;
    let m = pair.x.abs_moment(p)?.value;
    if (m - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!("X must be normalised to E X^p = 1, got {m}")));
    }
    if p <= 1.0 {
        let opt = constants::optimize_small_p(&pair.x, p, &crate::assumptions::DEFAULT_A_GRID_SMALL)?;
        let lower = pair.is_independent().then_some(opt.bundle.lower_c);
        return Ok(GoldieConstants { lower_c: lower, upper_c: 1.0, bundle: opt.bundle });
    }
    let opt = constants::optimize_large_p(
        &pair.x,
        p,
        &crate::assumptions::DEFAULT_A_GRID_LARGE,
        &crate::assumptions::default_q_grid(p),
    )?;
    if pair.is_independent() {
        Ok(GoldieConstants { lower_c: Some(opt.bundle.lower_c), upper_c: opt.bundle.upper_c, bundle: opt.bundle })
    } else {
        let upper = constants::upper_constant_perpetuity(p, &opt.certificate.lambda_chain)?;
        Ok(GoldieConstants { lower_c: None, upper_c: upper, bundle: opt.bundle })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldieRow {
    pub n: usize,
    /// `(1/n) E‖Sₙ‖^p`.
    pub middle: EstimateWithCI,
    pub lower: Option<f64>,
    pub upper: f64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldieReport {
    pub p: f64,
    pub b_moment: f64,
    pub b_moment_exact: bool,
    pub lower_c: Option<f64>,
    pub upper_c: f64,
    pub rows: Vec<GoldieRow>,
}

/// Checks `lower·E‖B‖^p ≤ (1/n)E‖Sₙ‖^p ≤ upper·E‖B‖^p` for each `n`, exactly
/// when the joint outcome tree is small and by Monte Carlo otherwise.
pub fn goldie_bracket(
    pair: &PairSpec,
    p: f64,
    n_list: &[usize],
    consts: &GoldieConstants,
    reps: usize,
    src: RandomSource,
) -> Result<GoldieReport> {
    consts.bundle.check_regime(p)?;
    let (b_moment, b_moment_exact) = match pair.b_norm_moment(p)? {
        Some(m) => (m.value, true),
        None => (perpetuity_lhs(pair, 1, p, reps, src)?.mean, false),
    };
    let mut rows = Vec::with_capacity(n_list.len());
    for &n in n_list {
        if n == 0 {
            return Err(Error::InvalidParameter("n must be at least 1".into()));
        }
        let total = match perpetuity_enumerator(pair, n, GOLDIE_EXACT_LIMIT) {
            Ok(_) => perpetuity_exact(pair, n, p)?,
            Err(Error::NotFiniteSupport | Error::TooLarge { .. }) => perpetuity_lhs(pair, n, p, reps, src)?,
            Err(e) => return Err(e),
        };
        let middle = total.scaled(1.0 / n as f64);
        let (verdict, _) = bracket_verdict(&middle, consts.lower_c.unwrap_or(0.0), consts.upper_c, b_moment);
        rows.push(GoldieRow {
            n,
            middle,
            lower: consts.lower_c.map(|c| c * b_moment),
            upper: consts.upper_c * b_moment,
            verdict,
        });
    }
    Ok(GoldieReport { p, b_moment, b_moment_exact, lower_c: consts.lower_c, upper_c: consts.upper_c, rows })
}

/// First `n ≥ 1` with `f(n) < target`, for `f` unimodal (rising then
/// falling) with `f(n) ≤ cap/n`.
fn first_exit(f: impl Fn(u64) -> f64, target: f64, cap: f64) -> u64 {
    if f(1) < target {
        return 1;
    }
    let mut top = ((cap / target).ceil().min(1e18) as u64).max(2);
    while f(top) >= target {
        top = top.saturating_mul(2);
    }
    // peak: first n with f(n+1) < f(n); everything before it is >= f(1)
    let (mut a, mut b) = (0u64, top);
    while b - a > 1 {
        let m = a + (b - a) / 2;
        if f(m + 1) < f(m) {
            b = m;
        } else {
            a = m;
        }
    }
    // f decreases on [peak, top]
    let (mut a, mut b) = (b.max(1), top);
    while b - a > 1 {
        let m = a + (b - a) / 2;
        if f(m) < target {
            b = m;
        } else {
            a = m;
        }
    }
    if f(a) < target { a } else { b }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPointRow {
    pub n: usize,
    /// `Sₙ = v(1 − xⁿ)`.
    pub s_n: f64,
    /// `|Sₙ|^p / n`.
    pub middle: f64,
    /// The same quantity by enumeration of the (single-outcome) pair.
    pub enumerated: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BracketExit {
    pub lower_c: f64,
    /// First `n` with `|Sₙ|^p/n < lower_c·|b|^p`.
    pub n_exit: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPointDemo {
    pub x: f64,
    pub b: f64,
    pub p: f64,
    /// The common fixed point `v = b/(1 − x)`.
    pub v: f64,
    pub rows: Vec<FixedPointRow>,
    pub exits: Vec<BracketExit>,
}

/// `X ≡ x`, `B ≡ b`: every `Sₙ` stays below `|v|`, so `(1/n)|Sₙ|^p → 0` and
/// leaves any bracket with a positive lower end.
pub fn fixed_point_demo(x: f64, b: f64, p: f64, n_list: &[usize], lower_cs: &[f64]) -> Result<FixedPointDemo> {
    if !(0.0..1.0).contains(&x) || b == 0.0 || !b.is_finite() || !(p > 0.0) {
        return Err(Error::InvalidParameter(format!("need 0 <= x < 1, b != 0, p > 0 (got {x}, {b}, {p})")));
    }
    let v = b / (1.0 - x);
    let pair = PairSpec::new(
        DistributionSpec::constant(x)?,
        crate::assumptions::BLaw::Independent { components: vec![DistributionSpec::constant(b)?] },
        Norm::L2,
    )?;
    let mut rows = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let s_n = v * (1.0 - x.powi(n as i32));
        let enumerated = perpetuity_exact(&pair, n, p)?.mean / n as f64;
        rows.push(FixedPointRow { n, s_n, middle: abs_pow(s_n, p) / n as f64, enumerated });
    }
    let bp = abs_pow(b, p);
    let exits = lower_cs
        .iter()
        .map(|&c| {
            let target = c * bp;
            BracketExit { lower_c: c, n_exit: first_exit(|n| abs_pow(v * (1.0 - x.powf(n as f64)), p) / n as f64, target, abs_pow(v, p)) }
        })
        .collect();
    Ok(FixedPointDemo { x, b, p, v, rows, exits })
}
