//! Fitting and certifying the hypothesis parameters for a given law of `X`.
//!
//! A certificate stores the fitted parameters together with the moment values
//! they were derived from and the slack of every inequality. Parameters are
//! pushed away from the exact moment ratios by at least [`CERT_SLACK`] (more
//! when the quadrature error is larger), so each inequality holds with a
//! recorded, positive margin. Only deterministic moments enter a certificate.

mod pair;

pub use pair::{
    check_pair_nondegeneracy, BLaw, JointAtom, MonotoneMap, NondegeneracyReport, NondegeneracyVerdict, PairSpec,
};

use serde::{Deserialize, Serialize};

use crate::dist::{abs_pow, DistributionSpec, MomentMethod};
use crate::error::{Error, Result};

/// Minimum absolute slack of every certified inequality.
pub const CERT_SLACK: f64 = 1e-9;
/// Tolerance used when re-verifying a stored certificate.
pub const REVERIFY_TOL: f64 = 1e-10;
const DEGENERATE_LAMBDA: f64 = 1.0 - 1e-9;
const DEGENERATE_MU: f64 = 1e-9;

pub const DEFAULT_A_GRID_SMALL: [f64; 7] = [1.1, 1.25, 1.5, 2.0, 3.0, 5.0, 10.0];
pub const DEFAULT_A_GRID_LARGE: [f64; 6] = [1.5, 2.0, 3.0, 5.0, 10.0, 20.0];

/// Nine equispaced points strictly inside `(max(p - 1, 1), p)`.
pub fn default_q_grid(p: f64) -> Vec<f64> {
    let lo = (p - 1.0).max(1.0);
    (1..=9).map(|j| lo + (p - lo) * j as f64 / 10.0).collect()
}

/// One certified inequality `lhs ≤ rhs`, with `slack = rhs - lhs`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Margin {
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
}

impl Margin {
    fn new(lhs: f64, rhs: f64) -> Self {
        Margin { lhs, rhs, slack: rhs - lhs }
    }

    /// Unchecked placeholder for certificates built from raw parameters.
    fn unchecked() -> Self {
        Margin { lhs: f64::NAN, rhs: f64::NAN, slack: f64::NAN }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmallPCertificate {
    pub p: f64,
    /// `E|X|^{p/2} ≤ λ (E|X|^p)^{1/2}`.
    pub lambda: f64,
    /// `E(|X|^p − m) 1{m ≤ |X|^p ≤ A m} ≥ δ m`, `m = E|X|^p`.
    pub delta: f64,
    pub a_param: f64,
    pub moment_p: f64,
    pub moment_half: f64,
    pub lambda_margin: Margin,
    pub delta_margin: Margin,
}

impl SmallPCertificate {
    /// Certificate from raw parameter values, with no distribution behind it.
    pub fn from_parameters(p: f64, lambda: f64, delta: f64, a_param: f64) -> Result<Self> {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::InvalidParameter(format!("small-p regime needs p in (0, 1], got {p}")));
        }
        if !(lambda > 0.0 && lambda < 1.0) || !(delta > 0.0 && delta <= 1.0) || !(a_param > 1.0) {
            return Err(Error::InvalidParameter(format!(
                "need 0 < lambda < 1, 0 < delta <= 1, A > 1; got lambda={lambda}, delta={delta}, A={a_param}"
            )));
        }
        Ok(SmallPCertificate {
            p,
            lambda,
            delta,
            a_param,
            moment_p: f64::NAN,
            moment_half: f64::NAN,
            lambda_margin: Margin::unchecked(),
            delta_margin: Margin::unchecked(),
        })
    }

    /// Recomputes both inequalities from the moment oracle and checks they
    /// hold with the recorded slack.
    pub fn verify(&self, spec: &DistributionSpec) -> Result<bool> {
        let m = spec.abs_moment(self.p)?.value;
        let half = spec.abs_moment(self.p / 2.0)?.value;
        let window = window_mass(spec, self.p, m, self.a_param).value;
        let lam = Margin::new(half, self.lambda * m.sqrt());
        let del = Margin::new(self.delta * m, window);
        Ok(lam.slack >= self.lambda_margin.slack - REVERIFY_TOL
            && del.slack >= self.delta_margin.slack - REVERIFY_TOL
            && lam.slack > 0.0
            && del.slack > 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LargePCertificate {
    pub p: f64,
    /// `E||X| − E|X|| ≥ μ (E|X|^p)^{1/p}`.
    pub mu: f64,
    /// Tail cut: `E||X| − E|X|| 1{|X| > A (E|X|^p)^{1/p}} ≤ μ/4 (E|X|^p)^{1/p}`.
    pub a_param: f64,
    pub q: f64,
    /// `(E|X|^q)^{1/q} ≤ λ (E|X|^p)^{1/p}`.
    pub lambda: f64,
    /// `λ_k` for `k = 1..⌈p⌉−1`.
    pub lambda_chain: Vec<f64>,
    pub mean_abs: f64,
    pub norm_p: f64,
    pub mu_margin: Margin,
    pub tail_margin: Margin,
    pub lambda_margin: Margin,
    pub chain_margins: Vec<Margin>,
}

impl LargePCertificate {
    pub fn from_parameters(p: f64, mu: f64, a_param: f64, q: f64, lambda: f64, lambda_chain: Vec<f64>) -> Result<Self> {
        if !(p > 1.0) {
            return Err(Error::InvalidParameter(format!("large-p regime needs p > 1, got {p}")));
        }
        if !(mu > 0.0) || !(lambda > 0.0 && lambda < 1.0) || !(a_param > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "need mu > 0, 0 < lambda < 1, A > 0; got mu={mu}, lambda={lambda}, A={a_param}"
            )));
        }
        if !(q > (p - 1.0).max(1.0)) {
            return Err(Error::InvalidParameter(format!("q = {q} must exceed max(p - 1, 1)")));
        }
        let chain_margins = vec![Margin::unchecked(); lambda_chain.len()];
        Ok(LargePCertificate {
            p,
            mu,
            a_param,
            q,
            lambda,
            lambda_chain,
            mean_abs: f64::NAN,
            norm_p: f64::NAN,
            mu_margin: Margin::unchecked(),
            tail_margin: Margin::unchecked(),
            lambda_margin: Margin::unchecked(),
            chain_margins,
        })
    }

    pub fn verify(&self, spec: &DistributionSpec) -> Result<bool> {
        let mo = LargePMoments::compute(spec, self.p)?;
        let mu = Margin::new(self.mu * mo.norm_p, mo.mad);
        let tail = Margin::new(mo.tail(spec, self.a_param), 0.25 * self.mu * mo.norm_p);
        let lq = spec.abs_moment(self.q)?.value.powf(1.0 / self.q);
        let lam = Margin::new(lq, self.lambda * mo.norm_p);
        let mut ok = mu.slack >= self.mu_margin.slack - REVERIFY_TOL
            && tail.slack >= self.tail_margin.slack - REVERIFY_TOL
            && lam.slack >= self.lambda_margin.slack - REVERIFY_TOL;
        for (k, (lk, stored)) in self.lambda_chain.iter().zip(&self.chain_margins).enumerate() {
            let (lo, hi) = chain_norms(spec, self.p, k + 1)?;
            let m = Margin::new(lo, lk * hi);
            ok &= m.slack >= stored.slack - REVERIFY_TOL && m.slack > 0.0;
        }
        Ok(ok && mu.slack > 0.0 && tail.slack >= 0.0 && lam.slack > 0.0)
    }
}

fn slack_for(abs_error: f64) -> f64 {
    CERT_SLACK.max(10.0 * abs_error)
}

fn refuse_monte_carlo(method: MomentMethod) -> Result<()> {
    if method == MomentMethod::MonteCarlo {
        return Err(Error::InvalidParameter("Monte Carlo moments cannot enter a certificate".into()));
    }
    Ok(())
}

/// `E(|X|^p − m) 1{m ≤ |X|^p ≤ A m}`.
fn window_mass(spec: &DistributionSpec, p: f64, m: f64, a: f64) -> crate::dist::Expectation {
    let lo = m.powf(1.0 / p);
    let hi = (a * m).powf(1.0 / p);
    spec.expect(
        |x| {
            let y = abs_pow(x, p);
            if y >= m && y <= a * m {
                y - m
            } else {
                0.0
            }
        },
        &[-hi, -lo, lo, hi],
    )
}

/// `δ(A) = E(|X|^p − m) 1{m ≤ |X|^p ≤ A m} / m`, the raw window ratio.
pub fn window_ratio(spec: &DistributionSpec, p: f64, a: f64) -> Result<f64> {
    let m = spec.abs_moment(p)?.value;
    Ok(window_mass(spec, p, m, a).value / m)
}

/// Fits `(λ, δ)` at the given window parameter `A`.
pub fn fit_small_p(spec: &DistributionSpec, p: f64, a_param: f64) -> Result<SmallPCertificate> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidParameter(format!("small-p regime needs p in (0, 1], got {p}")));
    }
    if !(a_param > 1.0) {
        return Err(Error::InvalidParameter(format!("A must exceed 1, got {a_param}")));
    }
    let m = spec.abs_moment(p)?;
    let half = spec.abs_moment(p / 2.0)?;
    refuse_monte_carlo(m.method)?;
    refuse_monte_carlo(half.method)?;
    if m.value <= 0.0 {
        return Err(Error::DegenerateZero);
    }
    let root_m = m.value.sqrt();
    let exact_lambda = half.value / root_m;
    if exact_lambda >= DEGENERATE_LAMBDA {
        return Err(Error::DegenerateModulus(format!(
            "E|X|^(p/2) / (E|X|^p)^(1/2) = {exact_lambda} is not below 1"
        )));
    }
    let s_lam = slack_for(half.abs_error + m.abs_error);
    let lambda = (half.value + s_lam) / root_m;
    let lambda_margin = Margin::new(half.value, lambda * root_m);

    let window = window_mass(spec, p, m.value, a_param);
    let s_del = slack_for(window.abs_error + m.abs_error);
    let delta = (window.value - s_del) / m.value;
    if !(delta > 0.0) {
        return Err(Error::EmptyWindow { scanned: vec![a_param] });
    }
    let delta_margin = Margin::new(delta * m.value, window.value);
    Ok(SmallPCertificate {
        p,
        lambda,
        delta: delta.min(1.0),
        a_param,
        moment_p: m.value,
        moment_half: half.value,
        lambda_margin,
        delta_margin,
    })
}

/// Moments shared by every large-p certificate of one law.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LargePMoments {
    pub mean_abs: f64,
    pub mad: f64,
    pub mad_err: f64,
    pub norm_p: f64,
}

impl LargePMoments {
    pub(crate) fn compute(spec: &DistributionSpec, p: f64) -> Result<Self> {
        let m = spec.abs_moment(p)?;
        let e1 = spec.abs_moment(1.0)?;
        refuse_monte_carlo(m.method)?;
        refuse_monte_carlo(e1.method)?;
        if m.value <= 0.0 {
            return Err(Error::DegenerateZero);
        }
        let c = e1.value;
        let mad = spec.expect(|x| (x.abs() - c).abs(), &[-c, c]);
        Ok(LargePMoments {
            mean_abs: c,
            mad: mad.value,
            mad_err: mad.abs_error + e1.abs_error,
            norm_p: m.value.powf(1.0 / p),
        })
    }

    /// `E||X| − E|X|| 1{|X| > A (E|X|^p)^{1/p}}`.
    pub(crate) fn tail(&self, spec: &DistributionSpec, a: f64) -> f64 {
        let c = self.mean_abs;
        let cut = a * self.norm_p;
        spec.expect(
            |x| {
                let ax = x.abs();
                if ax > cut {
                    (ax - c).abs()
                } else {
                    0.0
                }
            },
            &[-cut, -c, c, cut],
        )
        .value
    }
}

/// `((E|X|^{p−k})^{1/(p−k)}, (E|X|^{p−k+1})^{1/(p−k+1)})`.
fn chain_norms(spec: &DistributionSpec, p: f64, k: usize) -> Result<(f64, f64)> {
    let lo_order = p - k as f64;
    let hi_order = lo_order + 1.0;
    let lo = spec.abs_moment(lo_order)?.value.powf(1.0 / lo_order);
    let hi = spec.abs_moment(hi_order)?.value.powf(1.0 / hi_order);
    Ok((lo, hi))
}

/// Length of the λ-chain at order `p`: `⌈p⌉ − 1`.
pub fn chain_len(p: f64) -> usize {
    if p <= 1.0 {
        0
    } else {
        p.ceil() as usize - 1
    }
}

/// Exact moment ratios `λ_k`, `k = 1..⌈p⌉−1`, with margins, plus their
/// certified (slackened) values.
fn fit_chain(spec: &DistributionSpec, p: f64) -> Result<(Vec<f64>, Vec<Margin>)> {
    let mut chain = Vec::new();
    let mut margins = Vec::new();
    for k in 1..=chain_len(p) {
        let (lo, hi) = chain_norms(spec, p, k)?;
        let ratio = lo / hi;
        if ratio >= DEGENERATE_LAMBDA {
            return Err(Error::DegenerateModulus(format!("lambda_{k} = {ratio} is not below 1")));
        }
        let s = slack_for(1e-12 * hi);
        let lk = (lo + s) / hi;
        chain.push(lk);
        margins.push(Margin::new(lo, lk * hi));
    }
    Ok((chain, margins))
}

/// `λ(q) = (E|X|^q)^{1/q} / (E|X|^p)^{1/p}`.
pub fn lambda_of_q(spec: &DistributionSpec, p: f64, q: f64) -> Result<f64> {
    let norm_p = spec.abs_moment(p)?.value.powf(1.0 / p);
    Ok(spec.abs_moment(q)?.value.powf(1.0 / q) / norm_p)
}

pub(crate) fn valid_q(p: f64, q_grid: &[f64]) -> Result<Vec<f64>> {
    let lo = (p - 1.0).max(1.0);
    let qs: Vec<f64> = q_grid.iter().copied().filter(|q| *q > lo && *q < p).collect();
    if qs.is_empty() {
        return Err(Error::NoValidQ { lo, hi: p });
    }
    Ok(qs)
}

/// Fits the large-p certificate: best `μ`, smallest admissible `A` of the
/// grid, and the `q` of the grid with smallest `λ(q)`.
pub fn fit_large_p(spec: &DistributionSpec, p: f64, q_grid: &[f64], a_grid: &[f64]) -> Result<LargePCertificate> {
    if !(p > 1.0) {
        return Err(Error::InvalidParameter(format!("large-p regime needs p > 1, got {p}")));
    }
    let qs = valid_q(p, q_grid)?;
    let mo = LargePMoments::compute(spec, p)?;
    let mut best_q = qs[0];
    let mut best_l = f64::INFINITY;
    for &q in &qs {
        let l = spec.abs_moment(q)?.value.powf(1.0 / q) / mo.norm_p;
        if l < best_l {
            best_l = l;
            best_q = q;
        }
    }
    let mut a_sorted = a_grid.to_vec();
    a_sorted.sort_by(f64::total_cmp);
    for &a in &a_sorted {
        match certify_large_p_at(spec, p, best_q, a, &mo) {
            Ok(cert) => return Ok(cert),
            Err(Error::NoValidA { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::NoValidA { scanned: a_sorted })
}

/// Certificate at fixed `(q, A)`; `NoValidA` when the tail condition fails.
pub(crate) fn certify_large_p_at(
    spec: &DistributionSpec,
    p: f64,
    q: f64,
    a: f64,
    mo: &LargePMoments,
) -> Result<LargePCertificate> {
    let exact_mu = mo.mad / mo.norm_p;
    if exact_mu < DEGENERATE_MU {
        return Err(Error::DegenerateModulus(format!("E||X| - E|X|| / ||X||_p = {exact_mu}")));
    }
    let s_mu = slack_for(mo.mad_err);
    let mu = (mo.mad - s_mu) / mo.norm_p;
    let mu_margin = Margin::new(mu * mo.norm_p, mo.mad);

    let tail = mo.tail(spec, a);
    let tail_margin = Margin::new(tail, 0.25 * mu * mo.norm_p);
    if tail_margin.slack < CERT_SLACK {
        return Err(Error::NoValidA { scanned: vec![a] });
    }

    let mq = spec.abs_moment(q)?;
    refuse_monte_carlo(mq.method)?;
    let lq = mq.value.powf(1.0 / q);
    if lq / mo.norm_p >= DEGENERATE_LAMBDA {
        return Err(Error::DegenerateModulus(format!("lambda(q = {q}) = {} is not below 1", lq / mo.norm_p)));
    }
    let s_l = slack_for(mq.abs_error);
    let lambda = (lq + s_l) / mo.norm_p;
    let lambda_margin = Margin::new(lq, lambda * mo.norm_p);

    let (lambda_chain, chain_margins) = fit_chain(spec, p)?;
    Ok(LargePCertificate {
        p,
        mu,
        a_param: a,
        q,
        lambda,
        lambda_chain,
        mean_abs: mo.mean_abs,
        norm_p: mo.norm_p,
        mu_margin,
        tail_margin,
        lambda_margin,
        chain_margins,
    })
}
