//! Explicit lower and upper constants, the integer `k` searches, and grid
//! optimisation of the free parameters.
//!
//! Everything that can overflow or underflow is evaluated in the log domain
//! and exponentiated once at the end.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::assumptions::{
    self, certify_large_p_at, chain_len, fit_small_p, valid_q, LargePCertificate, LargePMoments, SmallPCertificate,
};
use crate::dist::DistributionSpec;
use crate::error::{Error, Result};

/// Largest `k` the integer search will consider.
pub const K_CAP: u64 = 1_000_000_000;
/// Log-domain tolerance for the k-minimality witness.
pub const K_LOG_TOL: f64 = 1e-12;

/// One step of a constant derivation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub id: String,
    pub inputs: Vec<(String, f64)>,
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl TraceStep {
    fn new(id: &str, inputs: &[(&str, f64)], value: f64) -> Self {
        TraceStep {
            id: id.to_string(),
            inputs: inputs.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            value,
            note: None,
        }
    }

    fn with_note(mut self, note: &str) -> Self {
        self.note = Some(note.to_string());
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    SmallP,
    LargeP,
}

/// The inequality `ln k + slope·k + offset ≤ ln_rhs` defining `k`.
///
/// Small p: `k λ^{2k−2} ≤ rhs`, so `slope = 2 ln λ`, `offset = −2 ln λ`.
/// Large p: `k λ^{pk} ≤ rhs`, so `slope = p ln λ`, `offset = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KInequality {
    pub slope: f64,
    pub offset: f64,
    pub ln_rhs: f64,
}

impl KInequality {
    pub fn ln_lhs(&self, k: u64) -> f64 {
        (k as f64).ln() + self.slope * k as f64 + self.offset
    }

    pub fn holds(&self, k: u64) -> bool {
        self.ln_lhs(k) <= self.ln_rhs
    }

    /// Smallest `k ≥ 1` satisfying the inequality.
    ///
    /// `ln k + slope·k` is concave, so past its peak at `−1/slope` it is
    /// strictly decreasing and the first crossing can be bisected.
    pub fn minimal_k(&self, lambda: f64) -> Result<u64> {
        if self.holds(1) {
            return Ok(1);
        }
        if !(self.slope < 0.0) {
            return Err(self.too_large(lambda));
        }
        let peak = (-1.0 / self.slope).ceil();
        if peak >= K_CAP as f64 || !self.holds(K_CAP) {
            return Err(self.too_large(lambda));
        }
        let mut lo = (peak as u64).max(1);
        if self.holds(lo) {
            // Only reachable when the peak sits at k = 1.
            return Ok(lo);
        }
        let mut hi = K_CAP;
        // invariant: !holds(lo), holds(hi)
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if self.holds(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(hi)
    }

    fn too_large(&self, lambda: f64) -> Error {
        let trace = vec![
            TraceStep::new("k_slope", &[("lambda", lambda)], self.slope),
            TraceStep::new("k_ln_rhs", &[], self.ln_rhs),
            TraceStep::new("k_ln_lhs_at_cap", &[("k", K_CAP as f64)], self.ln_lhs(K_CAP)),
        ];
        Error::KTooLarge { cap: K_CAP, lambda, trace }
    }

    pub fn witness(&self, k: u64) -> KWitness {
        KWitness {
            k,
            inequality: *self,
            ln_lhs_k: self.ln_lhs(k),
            ln_lhs_prev: (k > 1).then(|| self.ln_lhs(k - 1)),
        }
    }
}

/// Evidence that `k` is minimal: `k` satisfies the inequality, `k − 1`
/// violates it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KWitness {
    pub k: u64,
    pub inequality: KInequality,
    pub ln_lhs_k: f64,
    pub ln_lhs_prev: Option<f64>,
}

impl KWitness {
    pub fn check(&self) -> bool {
        let rhs = self.inequality.ln_rhs;
        let ok_k = self.ln_lhs_k <= rhs + K_LOG_TOL;
        let ok_prev = match self.ln_lhs_prev {
            Some(prev) => prev > rhs - K_LOG_TOL,
            None => self.k == 1,
        };
        ok_k && ok_prev
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantBundle {
    pub p: f64,
    pub regime: Regime,
    pub lower_c: f64,
    pub ln_lower_c: f64,
    /// True when `lower_c` underflowed and was reported as zero.
    pub lower_c_underflow: bool,
    /// Upper constant used in sandwich checks. For large p this is the
    /// smaller of the two upper forms.
    pub upper_c: f64,
    pub upper_c_product: f64,
    pub upper_c_recursive: f64,
    pub k: u64,
    pub k_witness: KWitness,
    pub c0: Option<f64>,
    pub ln_c0: Option<f64>,
    pub eps0: f64,
    pub eps1: f64,
    pub trace: Vec<TraceStep>,
}

impl ConstantBundle {
    pub fn check_regime(&self, p: f64) -> Result<()> {
        if self.p != p {
            return Err(Error::RegimeMismatch { bundle_p: self.p, p });
        }
        Ok(())
    }
}

fn exp_or_underflow(ln: f64) -> (f64, bool) {
    let v = ln.exp();
    if v < f64::MIN_POSITIVE {
        (0.0, true)
    } else {
        (v, false)
    }
}

/// Lower constant `δ³/(16k)` with `k` minimal such that
/// `k λ^{2k−2} ≤ δ³(1−λ)²/(2¹² A)`.
pub fn lower_constant_small_p(cert: &SmallPCertificate) -> Result<ConstantBundle> {
    let SmallPCertificate { p, lambda, delta, a_param, .. } = *cert;
    if !(lambda > 0.0 && lambda < 1.0 && delta > 0.0 && delta <= 1.0 && a_param > 1.0) {
        return Err(Error::InvalidParameter(format!(
            "certificate out of range: lambda={lambda}, delta={delta}, A={a_param}"
        )));
    }
    let ln_l = lambda.ln();
    let ln_rhs = 3.0 * delta.ln() + 2.0 * (1.0 - lambda).ln() - 12.0 * LN_2 - a_param.ln();
    let ineq = KInequality { slope: 2.0 * ln_l, offset: -2.0 * ln_l, ln_rhs };
    let k = ineq.minimal_k(lambda)?;
    let ln_c = 3.0 * delta.ln() - 16f64.ln() - (k as f64).ln();
    let (lower_c, underflow) = exp_or_underflow(ln_c);
    let eps0 = delta / 8.0;
    let eps1 = delta.powi(3) / 8.0;
    let trace = vec![
        TraceStep::new("k_rhs", &[("delta", delta), ("lambda", lambda), ("A", a_param)], ln_rhs.exp())
            .with_note("delta^3 (1-lambda)^2 / (2^12 A)"),
        TraceStep::new("k", &[("lambda", lambda), ("ln_rhs", ln_rhs)], k as f64)
            .with_note("minimal k with k lambda^(2k-2) <= k_rhs"),
        TraceStep::new("lower_c", &[("delta", delta), ("k", k as f64)], lower_c).with_note("delta^3 / (16 k)"),
        TraceStep::new("eps0", &[("delta", delta)], eps0).with_note("delta / 8"),
        TraceStep::new("eps1", &[("delta", delta)], eps1).with_note("delta^3 / 8"),
        TraceStep::new("upper_C", &[("p", p)], 1.0),
    ];
    Ok(ConstantBundle {
        p,
        regime: Regime::SmallP,
        lower_c,
        ln_lower_c: ln_c,
        lower_c_underflow: underflow,
        upper_c: 1.0,
        upper_c_product: 1.0,
        upper_c_recursive: 1.0,
        k,
        k_witness: ineq.witness(k),
        c0: None,
        ln_c0: None,
        eps0,
        eps1,
        trace,
    })
}

/// `ln C₀` for the large-p lower constant.
pub fn ln_c0(p: f64, lambda: f64, a_param: f64, q: f64) -> f64 {
    (1.0 - p) * (1.0 - lambda).ln()
        + p * (2.0 * a_param / (3.0 * lambda)).ln()
        + (p / q) * (2.0 * p / ((q + 1.0 - p) * LN_2)).ln()
        + 2.0 * p * p / (p - 1.0).min(1.0) * 48f64.ln()
}

/// Lower constant `μ^{3p}/(8k·2^{10p}·3^p)` with `k` minimal such that
/// `k λ^{pk} ≤ (1−λ) μ^{3p}/(8 C₀ 2^{10p} 3^p)`, plus both upper constants.
pub fn lower_constant_large_p(cert: &LargePCertificate) -> Result<ConstantBundle> {
    let LargePCertificate { p, mu, a_param, q, lambda, .. } = *cert;
    if !(p > 1.0 && mu > 0.0 && lambda > 0.0 && lambda < 1.0 && a_param > 0.0 && q > (p - 1.0).max(1.0)) {
        return Err(Error::InvalidParameter(format!(
            "certificate out of range: p={p}, mu={mu}, lambda={lambda}, A={a_param}, q={q}"
        )));
    }
    let (upper_product, upper_recursive) = upper_constant_large_p(p, &cert.lambda_chain)?;

    let lc0 = ln_c0(p, lambda, a_param, q);
    let ln_core = 3.0 * p * mu.ln() - 8f64.ln() - 10.0 * p * LN_2 - p * 3f64.ln();
    let ln_rhs = (1.0 - lambda).ln() + ln_core - lc0;
    let ineq = KInequality { slope: p * lambda.ln(), offset: 0.0, ln_rhs };
    let k = ineq.minimal_k(lambda)?;
    let ln_c = ln_core - (k as f64).ln();
    let (lower_c, underflow) = exp_or_underflow(ln_c);

    let ln_eps0 = (-(4f64.ln()) - p * 3f64.ln()).min(p * mu.ln() - 8f64.ln() - p * 24f64.ln());
    let ln_eps1 = (p * mu.ln() - p * 8f64.ln()).min(2.0 * p * mu.ln() - (p - 1.0) * LN_2 - p * 64f64.ln()) + ln_eps0;
    let eps0 = ln_eps0.exp();
    let eps1 = ln_eps1.exp();

    let trace = vec![
        TraceStep::new("c0", &[("p", p), ("lambda", lambda), ("A", a_param), ("q", q)], lc0.exp()).with_note(
            "(1-lambda)^(1-p) (2A/(3 lambda))^p (2p/((q+1-p) ln 2))^(p/q) 48^(2p^2/min(p-1,1))",
        ),
        TraceStep::new("k_rhs", &[("lambda", lambda), ("mu", mu), ("ln_c0", lc0)], ln_rhs.exp())
            .with_note("(1-lambda) mu^(3p) / (8 C0 2^(10p) 3^p)"),
        TraceStep::new("k", &[("lambda", lambda), ("ln_rhs", ln_rhs)], k as f64)
            .with_note("minimal k with k lambda^(pk) <= k_rhs"),
        TraceStep::new("lower_c", &[("mu", mu), ("k", k as f64)], lower_c).with_note("mu^(3p) / (8k 2^(10p) 3^p)"),
        TraceStep::new("eps0", &[("p", p), ("mu", mu)], eps0).with_note("min(1/(4 3^p), mu^p/(8 24^p))"),
        TraceStep::new("eps1", &[("p", p), ("mu", mu), ("eps0", eps0)], eps1)
            .with_note("min(mu^p/8^p, mu^(2p)/(2^(p-1) 64^p)) eps0"),
        TraceStep::new("upper_C_product", &chain_inputs(p, &cert.lambda_chain), upper_product)
            .with_note("2^(p(p+1)/2) prod_j 1/(1-lambda_j^(p-j))"),
        TraceStep::new("upper_C_recursive", &chain_inputs(p, &cert.lambda_chain), upper_recursive).with_note(
            "C(p) = 2^p (1 + C(p-1) l^(p-1)/(1-l^(p-1))), l = lambda_1; C(p-1) uses the chain shifted by one",
        ),
    ];
    Ok(ConstantBundle {
        p,
        regime: Regime::LargeP,
        lower_c,
        ln_lower_c: ln_c,
        lower_c_underflow: underflow,
        upper_c: upper_product.min(upper_recursive),
        upper_c_product: upper_product,
        upper_c_recursive: upper_recursive,
        k,
        k_witness: ineq.witness(k),
        c0: Some(lc0.exp()),
        ln_c0: Some(lc0),
        eps0,
        eps1,
        trace,
    })
}

fn chain_inputs(p: f64, chain: &[f64]) -> Vec<(&'static str, f64)> {
    const NAMES: [&str; 8] =
        ["lambda_1", "lambda_2", "lambda_3", "lambda_4", "lambda_5", "lambda_6", "lambda_7", "lambda_8"];
    let mut v = vec![("p", p)];
    v.extend(chain.iter().zip(NAMES.iter()).map(|(l, n)| (*n, *l)));
    v
}

fn check_chain(p: f64, chain: &[f64]) -> Result<()> {
    let expected = chain_len(p);
    if chain.len() != expected {
        return Err(Error::ChainLengthMismatch { expected, got: chain.len() });
    }
    if let Some(l) = chain.iter().find(|l| !(**l > 0.0 && **l < 1.0)) {
        return Err(Error::InvalidParameter(format!("chain entries must lie in (0, 1), got {l}")));
    }
    Ok(())
}

/// Upper constants for `p > 0`: `(product form, recursive form)`.
pub fn upper_constant_large_p(p: f64, lambda_chain: &[f64]) -> Result<(f64, f64)> {
    if !(p > 0.0) {
        return Err(Error::InvalidOrder(p));
    }
    check_chain(p, lambda_chain)?;
    if p <= 1.0 {
        return Ok((1.0, 1.0));
    }
    let mut ln_prod = p * (p + 1.0) / 2.0 * LN_2;
    for (j, l) in lambda_chain.iter().enumerate() {
        let e = p - (j + 1) as f64;
        ln_prod -= (-l.powf(e)).ln_1p();
    }
    let recursive = recursive_upper(p, lambda_chain, |l, e| l.powf(e));
    Ok((ln_prod.exp(), recursive))
}

fn recursive_upper(p: f64, chain: &[f64], numer: impl Fn(f64, f64) -> f64 + Copy) -> f64 {
    if p <= 1.0 {
        return 1.0;
    }
    let l = chain[0];
    let e = p - 1.0;
    let le = l.powf(e);
    let inner = recursive_upper(p - 1.0, &chain[1..], numer);
    2f64.powf(p) * (1.0 + inner * numer(l, e) / (1.0 - le))
}

/// Upper constant for `E‖Σ R_{i−1} B_i‖^p` when `B_i` may depend on `X_i`:
/// `C(p) = 2^p (1 + C(p−1)/(1 − λ₁^{p−1}))`, `C(p) = 1` for `p ≤ 1`, with the
/// chain shifted by one per level.
pub fn upper_constant_perpetuity(p: f64, lambda_chain: &[f64]) -> Result<f64> {
    if !(p > 0.0) {
        return Err(Error::InvalidOrder(p));
    }
    check_chain(p, lambda_chain)?;
    Ok(recursive_upper(p, lambda_chain, |_, _| 1.0))
}

/// One point of a parameter scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanEntry {
    pub a_param: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ln_lower_c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejected: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmallPOptimum {
    pub bundle: ConstantBundle,
    pub certificate: SmallPCertificate,
    pub scan: Vec<ScanEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LargePOptimum {
    pub bundle: ConstantBundle,
    pub certificate: LargePCertificate,
    pub scan: Vec<ScanEntry>,
}

/// Scans `A` over the grid and keeps the largest lower constant. Grid points
/// with an empty window or an oversized `k` are recorded and skipped.
pub fn optimize_small_p(spec: &DistributionSpec, p: f64, a_grid: &[f64]) -> Result<SmallPOptimum> {
    let mut best: Option<(ConstantBundle, SmallPCertificate)> = None;
    let mut scan = Vec::with_capacity(a_grid.len());
    let mut last_k_err = None;
    for &a in a_grid {
        let attempt = fit_small_p(spec, p, a).and_then(|cert| lower_constant_small_p(&cert).map(|b| (b, cert)));
        match attempt {
            Ok((bundle, cert)) => {
                scan.push(ScanEntry {
                    a_param: a,
                    q: None,
                    ln_lower_c: Some(bundle.ln_lower_c),
                    k: Some(bundle.k),
                    rejected: None,
                });
                if best.as_ref().is_none_or(|(b, _)| bundle.ln_lower_c > b.ln_lower_c) {
                    best = Some((bundle, cert));
                }
            }
            Err(e @ (Error::EmptyWindow { .. } | Error::KTooLarge { .. })) => {
                scan.push(ScanEntry { a_param: a, q: None, ln_lower_c: None, k: None, rejected: Some(e.to_string()) });
                if matches!(e, Error::KTooLarge { .. }) {
                    last_k_err = Some(e);
                }
            }
            Err(e) => return Err(e),
        }
    }
    match best {
        Some((mut bundle, certificate)) => {
            bundle.trace.push(TraceStep::new("selected_A", &[("grid_size", a_grid.len() as f64)], certificate.a_param));
            Ok(SmallPOptimum { bundle, certificate, scan })
        }
        None => Err(last_k_err.unwrap_or(Error::EmptyWindow { scanned: a_grid.to_vec() })),
    }
}

/// Joint scan over `(q, A)`; keeps the largest lower constant.
pub fn optimize_large_p(spec: &DistributionSpec, p: f64, a_grid: &[f64], q_grid: &[f64]) -> Result<LargePOptimum> {
    if !(p > 1.0) {
        return Err(Error::InvalidParameter(format!("large-p regime needs p > 1, got {p}")));
    }
    let qs = valid_q(p, q_grid)?;
    let mo = LargePMoments::compute(spec, p)?;
    let mut best: Option<(ConstantBundle, LargePCertificate)> = None;
    let mut scan = Vec::with_capacity(qs.len() * a_grid.len());
    let mut last_k_err = None;
    for &q in &qs {
        for &a in a_grid {
            let attempt =
                certify_large_p_at(spec, p, q, a, &mo).and_then(|c| lower_constant_large_p(&c).map(|b| (b, c)));
            match attempt {
                Ok((bundle, cert)) => {
                    scan.push(ScanEntry {
                        a_param: a,
                        q: Some(q),
                        ln_lower_c: Some(bundle.ln_lower_c),
                        k: Some(bundle.k),
                        rejected: None,
                    });
                    if best.as_ref().is_none_or(|(b, _)| bundle.ln_lower_c > b.ln_lower_c) {
                        best = Some((bundle, cert));
                    }
                }
                Err(e @ (Error::NoValidA { .. } | Error::KTooLarge { .. })) => {
                    scan.push(ScanEntry {
                        a_param: a,
                        q: Some(q),
                        ln_lower_c: None,
                        k: None,
                        rejected: Some(e.to_string()),
                    });
                    if matches!(e, Error::KTooLarge { .. }) {
                        last_k_err = Some(e);
                    }
                }
                Err(e) => return Err(e),
            }
        }
    }
    match best {
        Some((mut bundle, certificate)) => {
            bundle.trace.push(TraceStep::new("selected_A", &[], certificate.a_param));
            bundle.trace.push(TraceStep::new("selected_q", &[], certificate.q));
            Ok(LargePOptimum { bundle, certificate, scan })
        }
        None => Err(last_k_err.unwrap_or(Error::NoValidA { scanned: a_grid.to_vec() })),
    }
}

/// Certifies and optimises on the default grids, dispatching on the regime.
/// The spec is used as given; callers normalise first.
pub fn certify_default(spec: &DistributionSpec, p: f64) -> Result<ConstantBundle> {
    if p <= 1.0 {
        Ok(optimize_small_p(spec, p, &assumptions::DEFAULT_A_GRID_SMALL)?.bundle)
    } else {
        Ok(optimize_large_p(spec, p, &assumptions::DEFAULT_A_GRID_LARGE, &assumptions::default_q_grid(p))?.bundle)
    }
}
