//! Laws of the factors `X`, their absolute moments and seeded sampling.
//!
//! Every family can evaluate expectations `E f(X)` deterministically: finite
//! families by a weighted sum, continuous ones by adaptive Gauss–Legendre
//! quadrature on a family-specific parametrisation. Callers that integrate
//! indicator functions pass the jump locations as breakpoints so that each
//! quadrature panel sees a smooth integrand.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::quad;

/// Relative tolerance for quadrature-backed moments.
const QUAD_REL_TOL: f64 = 1e-13;
/// Probabilities of a finite law must sum to one within this.
const PROB_SUM_TOL: f64 = 1e-12;
/// `(E|X|^{p/2})^2 >= (1 - DEGENERACY_TOL) E|X|^p` declares |X| degenerate.
pub const DEGENERACY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub value: f64,
    pub prob: f64,
}

impl Atom {
    pub fn new(value: f64, prob: f64) -> Self {
        Atom { value, prob }
    }
}

/// Parametric law of a real random variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum DistributionSpec {
    TwoPoint { a: f64, b: f64, prob_a: f64 },
    FinitelySupported { atoms: Vec<Atom> },
    Uniform { lo: f64, hi: f64 },
    LogNormal { mu: f64, sigma: f64 },
    Exponential { rate: f64 },
    /// Gaussian; the only signed continuous family.
    Normal { mean: f64, sd: f64 },
    /// Law of `1 + cos U` with `U` uniform on `[0, 2π]`.
    RieszFactor,
    /// `±1` with probability one half each.
    RademacherSign,
    ScaledCopy { base: Box<DistributionSpec>, scale: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentMethod {
    ClosedForm,
    Quadrature,
    MonteCarlo,
    FiniteSum,
}

/// A value of `E|X|^q` together with how it was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub q: f64,
    pub value: f64,
    pub abs_error: f64,
    pub method: MomentMethod,
}

/// Deterministic expectation `E f(X)` with an error bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Expectation {
    pub value: f64,
    pub abs_error: f64,
    pub method: MomentMethod,
}

/// Seed plus stream selector for a ChaCha8 generator. Equal pairs give equal
/// sample sequences; different streams share no state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RandomSource {
    pub seed: u64,
    pub stream_id: u64,
}

impl RandomSource {
    pub fn new(seed: u64) -> Self {
        RandomSource { seed, stream_id: 0 }
    }

    pub fn with_stream(self, stream_id: u64) -> Self {
        RandomSource { stream_id, ..self }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be positive and finite, got {v}")))
    }
}

fn check_finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be finite, got {v}")))
    }
}

#[inline]
pub(crate) fn abs_pow(x: f64, q: f64) -> f64 {
    let a = x.abs();
    if q == 1.0 {
        a
    } else if q == 2.0 {
        a * a
    } else {
        a.powf(q)
    }
}

fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

impl DistributionSpec {
    pub fn two_point(a: f64, b: f64, prob_a: f64) -> Result<Self> {
        let d = DistributionSpec::TwoPoint { a, b, prob_a };
        d.validate()?;
        Ok(d)
    }

    pub fn finite(atoms: Vec<Atom>) -> Result<Self> {
        let d = DistributionSpec::FinitelySupported { atoms };
        d.validate()?;
        Ok(d)
    }

    /// Point mass at `c`.
    pub fn constant(c: f64) -> Result<Self> {
        Self::finite(vec![Atom::new(c, 1.0)])
    }

    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        let d = DistributionSpec::Uniform { lo, hi };
        d.validate()?;
        Ok(d)
    }

    pub fn lognormal(mu: f64, sigma: f64) -> Result<Self> {
        let d = DistributionSpec::LogNormal { mu, sigma };
        d.validate()?;
        Ok(d)
    }

    pub fn exponential(rate: f64) -> Result<Self> {
        let d = DistributionSpec::Exponential { rate };
        d.validate()?;
        Ok(d)
    }

    pub fn normal(mean: f64, sd: f64) -> Result<Self> {
        let d = DistributionSpec::Normal { mean, sd };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        use DistributionSpec::*;
        match self {
            TwoPoint { a, b, prob_a } => {
                check_finite("a", *a)?;
                check_finite("b", *b)?;
                if !(0.0..=1.0).contains(prob_a) {
                    return Err(Error::InvalidParameter(format!("prob_a must lie in [0, 1], got {prob_a}")));
                }
                Ok(())
            }
            FinitelySupported { atoms } => {
                if atoms.is_empty() {
                    return Err(Error::InvalidParameter("finite law needs at least one atom".into()));
                }
                let mut total = 0.0;
                for at in atoms {
                    check_finite("atom value", at.value)?;
                    if !(at.prob >= 0.0 && at.prob.is_finite()) {
                        return Err(Error::InvalidParameter(format!("negative probability {}", at.prob)));
                    }
                    total += at.prob;
                }
                if (total - 1.0).abs() > PROB_SUM_TOL {
                    return Err(Error::InvalidParameter(format!("probabilities sum to {total}, not 1")));
                }
                Ok(())
            }
            Uniform { lo, hi } => {
                check_finite("lo", *lo)?;
                check_finite("hi", *hi)?;
                if lo < hi {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter(format!("uniform needs lo < hi, got [{lo}, {hi}]")))
                }
            }
            LogNormal { mu, sigma } => {
                check_finite("mu", *mu)?;
                check_positive("sigma", *sigma)
            }
            Exponential { rate } => check_positive("rate", *rate),
            Normal { mean, sd } => {
                check_finite("mean", *mean)?;
                check_positive("sd", *sd)
            }
            RieszFactor | RademacherSign => Ok(()),
            ScaledCopy { base, scale } => {
                check_positive("scale", *scale)?;
                base.validate()
            }
        }
    }

    /// `scale · X`. Scaling a scaled copy multiplies the scales.
    pub fn scaled(&self, scale: f64) -> DistributionSpec {
        match self {
            DistributionSpec::ScaledCopy { base, scale: s } => {
                DistributionSpec::ScaledCopy { base: base.clone(), scale: s * scale }
            }
            other => DistributionSpec::ScaledCopy { base: Box::new(other.clone()), scale },
        }
    }

    /// The atoms with positive probability, for finitely supported laws.
    pub fn atoms(&self) -> Option<Vec<Atom>> {
        use DistributionSpec::*;
        let raw = match self {
            TwoPoint { a, b, prob_a } => vec![Atom::new(*a, *prob_a), Atom::new(*b, 1.0 - prob_a)],
            FinitelySupported { atoms } => atoms.clone(),
            RademacherSign => vec![Atom::new(-1.0, 0.5), Atom::new(1.0, 0.5)],
            ScaledCopy { base, scale } => base
                .atoms()?
                .into_iter()
                .map(|at| Atom::new(at.value * scale, at.prob))
                .collect(),
            Uniform { .. } | LogNormal { .. } | Exponential { .. } | Normal { .. } | RieszFactor => {
                return None
            }
        };
        Some(raw.into_iter().filter(|at| at.prob > 0.0).collect())
    }

    pub fn is_finitely_supported(&self) -> bool {
        self.atoms().is_some()
    }

    /// Whether `X ≥ 0` almost surely.
    pub fn is_nonnegative(&self) -> bool {
        use DistributionSpec::*;
        match self {
            Uniform { lo, .. } => *lo >= 0.0,
            LogNormal { .. } | Exponential { .. } | RieszFactor => true,
            Normal { .. } => false,
            ScaledCopy { base, .. } => base.is_nonnegative(),
            _ => self.atoms().map(|a| a.iter().all(|at| at.value >= 0.0)).unwrap_or(false),
        }
    }

    /// Structural test: is `|X|` almost surely constant?
    pub fn has_degenerate_modulus(&self) -> bool {
        match self.atoms() {
            Some(atoms) => {
                let first = atoms[0].value.abs();
                atoms
                    .iter()
                    .all(|at| (at.value.abs() - first).abs() <= 1e-12 * first.max(1.0))
            }
            None => false,
        }
    }

    /// Moment-based degeneracy test at order `p`: the equality case of
    /// Cauchy–Schwarz, `(E|X|^{p/2})² ≥ (1 − 1e−9) E|X|^p`.
    pub fn modulus_degenerate_at(&self, p: f64) -> Result<bool> {
        let half = self.abs_moment(p / 2.0)?.value;
        let full = self.abs_moment(p)?.value;
        Ok(half * half >= (1.0 - DEGENERACY_TOL) * full)
    }

    /// `E f(X)`. `breaks` lists points (in the value space of `X`) where `f`
    /// may jump or have a kink.
    pub fn expect<F: Fn(f64) -> f64>(&self, f: F, breaks: &[f64]) -> Expectation {
        self.expect_dyn(&f, breaks)
    }

    fn expect_dyn(&self, f: &dyn Fn(f64) -> f64, breaks: &[f64]) -> Expectation {
        use DistributionSpec::*;
        if let Some(atoms) = self.atoms() {
            let mut value = 0.0;
            let mut mag = 0.0;
            for at in &atoms {
                let t = at.prob * f(at.value);
                value += t;
                mag += t.abs();
            }
            return Expectation {
                value,
                abs_error: mag * f64::EPSILON * atoms.len() as f64,
                method: MomentMethod::FiniteSum,
            };
        }
        let integral = match self {
            Uniform { lo, hi } => {
                let mut b: Vec<f64> = breaks.to_vec();
                b.push(0.0);
                let r = quad::integrate(f, *lo, *hi, &b, QUAD_REL_TOL);
                let w = 1.0 / (hi - lo);
                quad::Integral { value: r.value * w, abs_error: r.abs_error * w }
            }
            LogNormal { mu, sigma } => {
                let mut b: Vec<f64> = breaks
                    .iter()
                    .filter(|x| **x > 0.0)
                    .map(|x| (x.ln() - mu) / sigma)
                    .collect();
                b.extend_from_slice(&[-8.0, -4.0, 0.0, 4.0, 8.0, 16.0]);
                quad::integrate(
                    |z| {
                        let w = std_normal_pdf(z);
                        if w == 0.0 {
                            0.0
                        } else {
                            f((mu + sigma * z).exp()) * w
                        }
                    },
                    -38.5,
                    38.5,
                    &b,
                    QUAD_REL_TOL,
                )
            }
            Normal { mean, sd } => {
                let mut b: Vec<f64> = breaks.iter().map(|x| (x - mean) / sd).collect();
                b.extend_from_slice(&[-8.0, -4.0, 0.0, 4.0, 8.0]);
                b.push(-mean / sd);
                quad::integrate(
                    |z| {
                        let w = std_normal_pdf(z);
                        if w == 0.0 {
                            0.0
                        } else {
                            f(mean + sd * z) * w
                        }
                    },
                    -38.5,
                    38.5,
                    &b,
                    QUAD_REL_TOL,
                )
            }
            Exponential { rate } => {
                let mut b: Vec<f64> = breaks.to_vec();
                b.extend([1.0, 4.0, 16.0, 64.0, 256.0].iter().map(|c| c / rate));
                quad::integrate(
                    |x| {
                        let w = rate * (-rate * x).exp();
                        if w == 0.0 {
                            0.0
                        } else {
                            f(x) * w
                        }
                    },
                    0.0,
                    745.0 / rate,
                    &b,
                    QUAD_REL_TOL,
                )
            }
            RieszFactor => {
                // X = 1 + cos u; the law is symmetric in u about π.
                let b: Vec<f64> = breaks
                    .iter()
                    .filter(|x| **x > 0.0 && **x < 2.0)
                    .map(|x| (x - 1.0).acos())
                    .collect();
                let r = quad::integrate(|u| f(1.0 + u.cos()), 0.0, PI, &b, QUAD_REL_TOL);
                quad::Integral { value: r.value / PI, abs_error: r.abs_error / PI }
            }
            ScaledCopy { base, scale } => {
                let b: Vec<f64> = breaks.iter().map(|x| x / scale).collect();
                let e = base.expect_dyn(&|y| f(scale * y), &b);
                quad::Integral { value: e.value, abs_error: e.abs_error }
            }
            TwoPoint { .. } | FinitelySupported { .. } | RademacherSign => unreachable!(),
        };
        Expectation {
            value: integral.value,
            abs_error: integral.abs_error,
            method: MomentMethod::Quadrature,
        }
    }

    /// `E|X|^q`.
    pub fn abs_moment(&self, q: f64) -> Result<MomentEstimate> {
        use DistributionSpec::*;
        if !(q > 0.0) || !q.is_finite() {
            return Err(Error::InvalidOrder(q));
        }
        self.validate()?;
        let closed = |value: f64| MomentEstimate { q, value, abs_error: 0.0, method: MomentMethod::ClosedForm };
        let est = match self {
            Uniform { lo, hi } => {
                let qp1 = q + 1.0;
                let mass = if *lo >= 0.0 {
                    hi.powf(qp1) - lo.powf(qp1)
                } else if *hi <= 0.0 {
                    (-lo).powf(qp1) - (-hi).powf(qp1)
                } else {
                    (-lo).powf(qp1) + hi.powf(qp1)
                };
                closed(mass / (qp1 * (hi - lo)))
            }
            LogNormal { mu, sigma } => closed((q * mu + 0.5 * q * q * sigma * sigma).exp()),
            Exponential { rate } => closed((ln_gamma(q + 1.0) - q * rate.ln()).exp()),
            Normal { mean, sd } if *mean == 0.0 => closed(
                (q * sd.ln() + 0.5 * q * std::f64::consts::LN_2 + ln_gamma(0.5 * (q + 1.0)) - 0.5 * PI.ln()).exp(),
            ),
            ScaledCopy { base, scale } => {
                let b = base.abs_moment(q)?;
                let s = scale.powf(q);
                MomentEstimate { q, value: b.value * s, abs_error: b.abs_error * s, method: b.method }
            }
            _ => {
                let e = self.expect(|x| abs_pow(x, q), &[]);
                MomentEstimate { q, value: e.value, abs_error: e.abs_error, method: e.method }
            }
        };
        if !est.value.is_finite() {
            return Err(Error::NonfiniteMoment(q));
        }
        Ok(est)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        use DistributionSpec::*;
        match self {
            TwoPoint { a, b, prob_a } => {
                if rng.random::<f64>() < *prob_a {
                    *a
                } else {
                    *b
                }
            }
            FinitelySupported { atoms } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for at in atoms {
                    acc += at.prob;
                    if u < acc {
                        return at.value;
                    }
                }
                atoms.iter().rev().find(|a| a.prob > 0.0).map(|a| a.value).unwrap_or(atoms[0].value)
            }
            Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
            LogNormal { mu, sigma } => rand_distr::LogNormal::new(*mu, *sigma).expect("validated").sample(rng),
            Exponential { rate } => Exp::new(*rate).expect("validated").sample(rng),
            Normal { mean, sd } => rand_distr::Normal::new(*mean, *sd).expect("validated").sample(rng),
            RieszFactor => 1.0 + (2.0 * PI * rng.random::<f64>()).cos(),
            RademacherSign => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            ScaledCopy { base, scale } => scale * base.sample(rng),
        }
    }
}

/// `E|X|^q` for a distribution spec.
pub fn abs_moment(spec: &DistributionSpec, q: f64) -> Result<MomentEstimate> {
    spec.abs_moment(q)
}

/// Rescales `spec` so that `E|sX|^p = 1`; returns the scaled law and `s`.
pub fn normalize_unit_p_moment(spec: &DistributionSpec, p: f64) -> Result<(DistributionSpec, f64)> {
    let m = spec.abs_moment(p)?.value;
    if m <= 0.0 {
        return Err(Error::DegenerateZero);
    }
    let scale = m.powf(-1.0 / p);
    if scale == 1.0 {
        return Ok((spec.clone(), 1.0));
    }
    Ok((spec.scaled(scale), scale))
}

/// Product path `R_0 = 1, R_i = R_{i-1} X_i`, `i = 1..=n`.
pub fn sample_products(spec: &DistributionSpec, n: usize, src: RandomSource) -> Vec<f64> {
    let mut rng = src.rng();
    sample_products_with(spec, n, &mut rng)
}

pub(crate) fn sample_products_with<R: Rng + ?Sized>(spec: &DistributionSpec, n: usize, rng: &mut R) -> Vec<f64> {
    let mut path = Vec::with_capacity(n + 1);
    let mut r = 1.0;
    path.push(r);
    for _ in 0..n {
        r *= spec.sample(rng);
        path.push(r);
    }
    path
}

fn fmt_list(values: impl Iterator<Item = f64>) -> String {
    values.map(|v| v.to_string()).collect::<Vec<_>>().join("|")
}

impl fmt::Display for DistributionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use DistributionSpec::*;
        match self {
            TwoPoint { a, b, prob_a } => write!(f, "twopoint:a={a},b={b},pa={prob_a}"),
            FinitelySupported { atoms } => write!(
                f,
                "finite:values={},probs={}",
                fmt_list(atoms.iter().map(|a| a.value)),
                fmt_list(atoms.iter().map(|a| a.prob))
            ),
            Uniform { lo, hi } => write!(f, "uniform:lo={lo},hi={hi}"),
            LogNormal { mu, sigma } => write!(f, "lognormal:mu={mu},sigma={sigma}"),
            Exponential { rate } => write!(f, "exponential:rate={rate}"),
            Normal { mean, sd } => write!(f, "normal:mean={mean},sd={sd}"),
            RieszFactor => write!(f, "riesz"),
            RademacherSign => write!(f, "rademacher"),
            ScaledCopy { base, scale } => write!(f, "scaled:s={scale}/{base}"),
        }
    }
}

struct Params<'a> {
    input: &'a str,
    pairs: Vec<(&'a str, &'a str)>,
}

impl<'a> Params<'a> {
    fn parse(input: &'a str, body: &'a str) -> Result<Self> {
        let mut pairs = Vec::new();
        for part in body.split(',').filter(|s| !s.trim().is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::parse(input, format!("expected key=value, got `{part}`")))?;
            pairs.push((k.trim(), v.trim()));
        }
        Ok(Params { input, pairs })
    }

    fn raw(&self, key: &str) -> Result<&'a str> {
        self.pairs
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| *v)
            .ok_or_else(|| Error::parse(self.input, format!("missing parameter `{key}`")))
    }

    fn num(&self, key: &str) -> Result<f64> {
        let raw = self.raw(key)?;
        parse_num(self.input, raw)
    }

    fn list(&self, key: &str) -> Result<Vec<f64>> {
        self.raw(key)?.split('|').map(|s| parse_num(self.input, s.trim())).collect()
    }

    fn only(&self, keys: &[&str]) -> Result<()> {
        for (k, _) in &self.pairs {
            if !keys.contains(k) {
                return Err(Error::parse(self.input, format!("unknown parameter `{k}`")));
            }
        }
        Ok(())
    }
}

fn parse_num(input: &str, raw: &str) -> Result<f64> {
    raw.parse::<f64>()
        .map_err(|_| Error::parse(input, format!("`{raw}` is not a number")))
}

impl FromStr for DistributionSpec {
    type Err = Error;

    /// Parses `family:key=value,...`, e.g. `twopoint:a=0.5,b=1.5,pa=0.5`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (family, body) = s.split_once(':').unwrap_or((s, ""));
        let spec = match family.to_ascii_lowercase().as_str() {
            "twopoint" => {
                let p = Params::parse(s, body)?;
                p.only(&["a", "b", "pa"])?;
                DistributionSpec::TwoPoint { a: p.num("a")?, b: p.num("b")?, prob_a: p.num("pa")? }
            }
            "finite" => {
                let p = Params::parse(s, body)?;
                p.only(&["values", "probs"])?;
                let values = p.list("values")?;
                let probs = p.list("probs")?;
                if values.len() != probs.len() {
                    return Err(Error::parse(s, "values and probs differ in length"));
                }
                DistributionSpec::FinitelySupported {
                    atoms: values.into_iter().zip(probs).map(|(v, q)| Atom::new(v, q)).collect(),
                }
            }
            "const" => {
                let p = Params::parse(s, body)?;
                p.only(&["c"])?;
                DistributionSpec::FinitelySupported { atoms: vec![Atom::new(p.num("c")?, 1.0)] }
            }
            "uniform" => {
                let p = Params::parse(s, body)?;
                p.only(&["lo", "hi"])?;
                DistributionSpec::Uniform { lo: p.num("lo")?, hi: p.num("hi")? }
            }
            "lognormal" => {
                let p = Params::parse(s, body)?;
                p.only(&["mu", "sigma"])?;
                DistributionSpec::LogNormal { mu: p.num("mu")?, sigma: p.num("sigma")? }
            }
            "exponential" => {
                let p = Params::parse(s, body)?;
                p.only(&["rate"])?;
                DistributionSpec::Exponential { rate: p.num("rate")? }
            }
            "normal" => {
                let p = Params::parse(s, body)?;
                p.only(&["mean", "sd"])?;
                DistributionSpec::Normal { mean: p.num("mean")?, sd: p.num("sd")? }
            }
            "riesz" if body.is_empty() => DistributionSpec::RieszFactor,
            "rademacher" if body.is_empty() => DistributionSpec::RademacherSign,
            "scaled" => {
                let (head, base) = body
                    .split_once('/')
                    .ok_or_else(|| Error::parse(s, "expected scaled:s=<scale>/<base spec>"))?;
                let p = Params::parse(s, head)?;
                p.only(&["s"])?;
                let base: DistributionSpec = base.parse()?;
                DistributionSpec::ScaledCopy { base: Box::new(base), scale: p.num("s")? }
            }
            other => return Err(Error::parse(s, format!("unknown family `{other}`"))),
        };
        spec.validate().map_err(|e| Error::parse(s, e.to_string()))?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tp(a: f64, b: f64, pa: f64) -> DistributionSpec {
        DistributionSpec::two_point(a, b, pa).unwrap()
    }

    #[test]
    fn two_point_first_moment() {
        let m = tp(0.5, 1.5, 0.5).abs_moment(1.0).unwrap();
        assert_eq!(m.value, 1.0);
        assert_eq!(m.method, MomentMethod::FiniteSum);
    }

    #[test]
    fn uniform_closed_form_matches_quadrature() {
        let u = DistributionSpec::uniform(0.0, 1.0).unwrap();
        let m = u.abs_moment(2.0).unwrap();
        assert_eq!(m.method, MomentMethod::ClosedForm);
        assert!((m.value - 1.0 / 3.0).abs() < 1e-15);
        for &(lo, hi, q) in &[(0.0, 2.0, 0.5), (-1.0, 3.0, 1.7), (-4.0, -1.0, 2.5)] {
            let u = DistributionSpec::uniform(lo, hi).unwrap();
            let closed = u.abs_moment(q).unwrap().value;
            let quad = u.expect(|x| x.abs().powf(q), &[]).value;
            assert!((closed - quad).abs() <= 1e-12 * closed, "{lo} {hi} {q}: {closed} vs {quad}");
        }
    }

    /// E(1 + cos U)^q = 2^q Γ(q + 1/2) / (√π Γ(q + 1)).
    fn riesz_moment_oracle(q: f64) -> f64 {
        (q * std::f64::consts::LN_2 + ln_gamma(q + 0.5) - 0.5 * PI.ln() - ln_gamma(q + 1.0)).exp()
    }

    #[test]
    fn riesz_moments_by_quadrature() {
        let r = DistributionSpec::RieszFactor;
        let m2 = r.abs_moment(2.0).unwrap();
        assert_eq!(m2.method, MomentMethod::Quadrature);
        assert!((m2.value - 1.5).abs() < 1e-12);
        assert!((r.abs_moment(1.0).unwrap().value - 1.0).abs() < 1e-12);
        for &q in &[0.1, 0.3, 0.5, 1.3, 3.0, 4.7] {
            let m = r.abs_moment(q).unwrap();
            let want = riesz_moment_oracle(q);
            assert!((m.value - want).abs() <= 1e-10 * want, "q={q}: {} vs {want}", m.value);
            assert!(m.abs_error <= 1e-10 * m.value);
        }
    }

    #[test]
    fn lognormal_and_exponential_closed_forms_agree_with_quadrature() {
        let ln = DistributionSpec::lognormal(0.2, 0.5).unwrap();
        for &q in &[0.5, 1.0, 2.5] {
            let closed = ln.abs_moment(q).unwrap().value;
            let quad = ln.expect(|x| x.abs().powf(q), &[]).value;
            assert!((closed - quad).abs() < 1e-11 * closed);
        }
        let ex = DistributionSpec::exponential(2.0).unwrap();
        for &q in &[0.5, 1.0, 3.0] {
            let closed = ex.abs_moment(q).unwrap().value;
            let quad = ex.expect(|x| x.abs().powf(q), &[]).value;
            assert!((closed - quad).abs() < 1e-11 * closed, "{closed} {quad}");
        }
        let nm = DistributionSpec::normal(0.0, 1.3).unwrap();
        let quad = nm.expect(|x| x.abs().powf(1.5), &[]).value;
        assert!((nm.abs_moment(1.5).unwrap().value - quad).abs() < 1e-11);
    }

    #[test]
    fn invalid_order_is_rejected() {
        assert!(matches!(tp(0.5, 1.5, 0.5).abs_moment(0.0), Err(Error::InvalidOrder(_))));
        assert!(matches!(tp(0.5, 1.5, 0.5).abs_moment(-1.0), Err(Error::InvalidOrder(_))));
    }

    #[test]
    fn invalid_parameters() {
        assert!(DistributionSpec::uniform(1.0, 1.0).is_err());
        assert!(DistributionSpec::lognormal(0.0, 0.0).is_err());
        assert!(DistributionSpec::exponential(-1.0).is_err());
        assert!(DistributionSpec::finite(vec![Atom::new(1.0, 0.5), Atom::new(2.0, 0.4)]).is_err());
        assert!(DistributionSpec::finite(vec![Atom::new(1.0, 1.2), Atom::new(2.0, -0.2)]).is_err());
    }

    #[test]
    fn normalization_examples() {
        let (_, s) = normalize_unit_p_moment(&tp(1.0, 3.0, 0.5), 1.0).unwrap();
        assert_eq!(s, 0.5);
        let (n, s) = normalize_unit_p_moment(&DistributionSpec::RieszFactor, 2.0).unwrap();
        assert!((s - 1.5f64.powf(-0.5)).abs() < 1e-12);
        assert!((n.abs_moment(2.0).unwrap().value - 1.0).abs() < 1e-10);
        let (_, s) = normalize_unit_p_moment(&DistributionSpec::RademacherSign, 7.0).unwrap();
        assert_eq!(s, 1.0);
        let zero = DistributionSpec::constant(0.0).unwrap();
        assert_eq!(normalize_unit_p_moment(&zero, 1.0).unwrap_err(), Error::DegenerateZero);
    }

    #[test]
    fn scaled_copies_compose() {
        let s = DistributionSpec::RieszFactor.scaled(2.0).scaled(3.0);
        match &s {
            DistributionSpec::ScaledCopy { base, scale } => {
                assert_eq!(**base, DistributionSpec::RieszFactor);
                assert_eq!(*scale, 6.0);
            }
            _ => panic!(),
        }
    }

    #[test]
    fn product_paths() {
        let src = RandomSource::new(11);
        assert_eq!(sample_products(&tp(0.5, 1.5, 0.5), 0, src), vec![1.0]);
        let path = sample_products(&DistributionSpec::RademacherSign, 50, src);
        assert!(path.iter().all(|r| r.abs() == 1.0));
        let path = sample_products(&tp(0.5, 1.5, 0.5), 6, src.with_stream(3));
        for w in path.windows(2) {
            let ratio = w[1] / w[0];
            assert!(ratio == 0.5 || ratio == 1.5);
        }
    }

    #[test]
    fn mean_of_two_step_product_by_enumeration() {
        // four equiprobable outcomes of X1 X2
        let vals = [0.5, 1.5];
        let mean: f64 = vals.iter().flat_map(|a| vals.iter().map(move |b| a * b)).sum::<f64>() / 4.0;
        assert_eq!(mean, 1.0);
        let atoms = tp(0.5, 1.5, 0.5).atoms().unwrap();
        let by_atoms: f64 = atoms
            .iter()
            .flat_map(|a| atoms.iter().map(move |b| a.prob * b.prob * a.value * b.value))
            .sum();
        assert_eq!(by_atoms, mean);
    }

    #[test]
    fn sampling_is_deterministic_per_stream() {
        let d = DistributionSpec::lognormal(0.0, 0.5).unwrap();
        let a = sample_products(&d, 20, RandomSource { seed: 5, stream_id: 9 });
        let b = sample_products(&d, 20, RandomSource { seed: 5, stream_id: 9 });
        let c = sample_products(&d, 20, RandomSource { seed: 5, stream_id: 10 });
        assert_eq!(a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), b.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        assert_ne!(a, c);
    }

    #[test]
    fn degeneracy() {
        assert!(DistributionSpec::RademacherSign.has_degenerate_modulus());
        assert!(DistributionSpec::RademacherSign.modulus_degenerate_at(1.0).unwrap());
        assert!(tp(-2.0, 2.0, 0.3).has_degenerate_modulus());
        assert!(!tp(0.5, 1.5, 0.5).has_degenerate_modulus());
        assert!(!tp(0.5, 1.5, 0.5).modulus_degenerate_at(1.0).unwrap());
        assert!(!DistributionSpec::RieszFactor.modulus_degenerate_at(2.0).unwrap());
    }

    #[test]
    fn parse_examples() {
        let d: DistributionSpec = "twopoint:a=0.5,b=1.5,pa=0.5".parse().unwrap();
        assert_eq!(d, tp(0.5, 1.5, 0.5));
        let d: DistributionSpec = "lognormal:mu=0,sigma=0.5".parse().unwrap();
        assert_eq!(d, DistributionSpec::LogNormal { mu: 0.0, sigma: 0.5 });
        assert_eq!("riesz".parse::<DistributionSpec>().unwrap(), DistributionSpec::RieszFactor);
        let d: DistributionSpec = "scaled:s=2/finite:values=1|3,probs=0.25|0.75".parse().unwrap();
        assert_eq!(d.atoms().unwrap()[1].value, 6.0);
        assert!("twopoint:a=0.5,b=1.5".parse::<DistributionSpec>().is_err());
        assert!("bogus:x=1".parse::<DistributionSpec>().is_err());
        assert!("uniform:lo=2,hi=1".parse::<DistributionSpec>().is_err());
        assert!("twopoint:a=x,b=1,pa=0.5".parse::<DistributionSpec>().is_err());
    }

    fn arb_base() -> impl Strategy<Value = DistributionSpec> {
        prop_oneof![
            (-5.0..5.0f64, -5.0..5.0f64, 0.0..1.0f64).prop_map(|(a, b, pa)| DistributionSpec::TwoPoint { a, b, prob_a: pa }),
            (-5.0..0.0f64, 0.1..5.0f64).prop_map(|(lo, w)| DistributionSpec::Uniform { lo, hi: lo + w }),
            (-2.0..2.0f64, 0.01..2.0f64).prop_map(|(mu, sigma)| DistributionSpec::LogNormal { mu, sigma }),
            (0.01..10.0f64).prop_map(|rate| DistributionSpec::Exponential { rate }),
            Just(DistributionSpec::RieszFactor),
            Just(DistributionSpec::RademacherSign),
        ]
    }

    proptest! {
        #[test]
        fn text_form_round_trips(base in arb_base(), s in 0.01..100.0f64, wrap in any::<bool>()) {
            let spec = if wrap { base.scaled(s) } else { base };
            let text = spec.to_string();
            let back: DistributionSpec = text.parse().unwrap();
            prop_assert_eq!(back, spec);
        }

        /// Strict Lyapunov for nondegenerate moduli.
        #[test]
        fn lyapunov_is_strict(a in 0.05..0.95f64, b in 1.05..4.0f64, pa in 0.05..0.95f64, q in 0.2..2.0f64, dr in 0.2..2.0f64) {
            let d = DistributionSpec::TwoPoint { a, b, prob_a: pa };
            let r = q + dr;
            let lq = d.abs_moment(q).unwrap().value.powf(1.0 / q);
            let lr = d.abs_moment(r).unwrap().value.powf(1.0 / r);
            prop_assert!(lr - lq > 1e-9, "{} {}", lq, lr);
        }

        #[test]
        fn moments_multiply_along_products(a in 0.05..0.95f64, b in 1.05..4.0f64, pa in 0.05..0.95f64, p in 0.3..3.0f64) {
            let d = DistributionSpec::TwoPoint { a, b, prob_a: pa };
            let m = d.abs_moment(p).unwrap().value;
            let atoms = d.atoms().unwrap();
            // E|R_i|^p by enumeration of all 2^i outcomes
            for i in 0..=8u32 {
                let mut total = 0.0;
                for mask in 0..(1u32 << i) {
                    let mut prob = 1.0;
                    let mut r = 1.0;
                    for j in 0..i {
                        let at = atoms[((mask >> j) & 1) as usize];
                        prob *= at.prob;
                        r *= at.value;
                    }
                    total += prob * r.abs().powf(p);
                }
                let want = m.powi(i as i32);
                prop_assert!((total - want).abs() <= 1e-12 * want.max(1.0), "i={} {} {}", i, total, want);
            }
        }
    }

    #[test]
    fn lyapunov_for_continuous_families() {
        let specs = [
            DistributionSpec::RieszFactor,
            DistributionSpec::uniform(0.0, 2.0).unwrap(),
            DistributionSpec::lognormal(0.0, 0.5).unwrap(),
            DistributionSpec::exponential(1.0).unwrap(),
        ];
        for d in &specs {
            let mut prev = 0.0;
            for k in 1..=10 {
                let q = 0.3 * k as f64;
                let l = d.abs_moment(q).unwrap().value.powf(1.0 / q);
                assert!(l - prev > 1e-9, "{d}: q={q}");
                prev = l;
            }
        }
    }
}
