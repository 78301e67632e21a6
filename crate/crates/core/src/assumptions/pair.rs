//! Pairs `(X, B)` driving the recursion `S = XS + B`, and the advisory
//! check for a common fixed point.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dist::{abs_pow, DistributionSpec, MomentEstimate, MomentMethod, RandomSource};
use crate::error::{Error, Result};
use crate::norm::Norm;

/// Nondecreasing map `g` with `B = g(X)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MonotoneMap {
    /// `offset + slope·x`, `slope ≥ 0`.
    Affine { offset: f64, slope: f64 },
    /// `scale·x^exponent` on `x ≥ 0`, `exponent > 0`.
    Power { scale: f64, exponent: f64 },
}

impl MonotoneMap {
    pub fn apply(&self, x: f64) -> f64 {
        match *self {
            MonotoneMap::Affine { offset, slope } => offset + slope * x,
            MonotoneMap::Power { scale, exponent } => scale * x.max(0.0).powf(exponent),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            MonotoneMap::Affine { offset, slope } => offset.is_finite() && slope.is_finite() && slope >= 0.0,
            MonotoneMap::Power { scale, exponent } => scale.is_finite() && exponent.is_finite() && exponent > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("map {self} is not a finite monotone map")))
        }
    }
}

impl fmt::Display for MonotoneMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MonotoneMap::Affine { offset, slope } => write!(f, "affine:offset={offset},slope={slope}"),
            MonotoneMap::Power { scale, exponent } => write!(f, "power:scale={scale},exponent={exponent}"),
        }
    }
}

fn key_values<'a>(input: &'a str, body: &'a str, keys: &[&str]) -> Result<Vec<f64>> {
    let mut out = vec![None; keys.len()];
    for part in body.split(',').filter(|s| !s.trim().is_empty()) {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| Error::parse(input, format!("expected key=value, got `{part}`")))?;
        let idx = keys
            .iter()
            .position(|x| *x == k.trim())
            .ok_or_else(|| Error::parse(input, format!("unknown parameter `{}`", k.trim())))?;
        let v: f64 = v.trim().parse().map_err(|_| Error::parse(input, format!("`{v}` is not a number")))?;
        out[idx] = Some(v);
    }
    keys.iter()
        .zip(out)
        .map(|(k, v)| v.ok_or_else(|| Error::parse(input, format!("missing parameter `{k}`"))))
        .collect()
}

impl FromStr for MonotoneMap {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (kind, body) = s.split_once(':').unwrap_or((s, ""));
        let map = match kind {
            "affine" => {
                let v = key_values(s, body, &["offset", "slope"])?;
                MonotoneMap::Affine { offset: v[0], slope: v[1] }
            }
            "power" => {
                let v = key_values(s, body, &["scale", "exponent"])?;
                MonotoneMap::Power { scale: v[0], exponent: v[1] }
            }
            other => return Err(Error::parse(s, format!("unknown map `{other}`"))),
        };
        map.validate().map_err(|e| Error::parse(s, e.to_string()))?;
        Ok(map)
    }
}

/// Law of `B` and how it is coupled to `X`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "coupling", rename_all = "snake_case")]
pub enum BLaw {
    /// Components independent of each other and of `X`.
    Independent { components: Vec<DistributionSpec> },
    /// Scalar `B = g(X)`.
    ComonotoneScalar { map: MonotoneMap },
}

impl BLaw {
    /// Builds the law from the CLI forms: components separated by `;`, and a
    /// coupling `independent`, `affine:...` or `power:...`.
    pub fn from_parts(components: Option<&str>, coupling: &str) -> Result<Self> {
        let coupling = coupling.trim();
        if coupling == "independent" {
            let text = components.ok_or_else(|| Error::parse(coupling, "independent coupling needs a law for B"))?;
            let comps = text.split(';').map(|c| c.parse()).collect::<Result<Vec<DistributionSpec>>>()?;
            return Ok(BLaw::Independent { components: comps });
        }
        if components.is_some() {
            return Err(Error::parse(coupling, "a comonotone coupling determines B; drop the law for B"));
        }
        Ok(BLaw::ComonotoneScalar { map: coupling.parse()? })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSpec {
    pub x: DistributionSpec,
    pub b: BLaw,
    #[serde(default)]
    pub norm: Norm,
}

/// One outcome of a finitely supported pair.
#[derive(Debug, Clone, PartialEq)]
pub struct JointAtom {
    pub prob: f64,
    pub x: f64,
    pub b: Vec<f64>,
}

impl PairSpec {
    pub fn new(x: DistributionSpec, b: BLaw, norm: Norm) -> Result<Self> {
        let pair = PairSpec { x, b, norm };
        pair.validate()?;
        Ok(pair)
    }

    pub fn validate(&self) -> Result<()> {
        self.x.validate()?;
        if !self.x.is_nonnegative() {
            return Err(Error::InvalidParameter(format!("X must be nonnegative, got {}", self.x)));
        }
        match &self.b {
            BLaw::Independent { components } => {
                if components.is_empty() {
                    return Err(Error::InvalidParameter("B needs at least one component".into()));
                }
                components.iter().try_for_each(|c| c.validate())
            }
            BLaw::ComonotoneScalar { map } => map.validate(),
        }
    }

    pub fn dim(&self) -> usize {
        match &self.b {
            BLaw::Independent { components } => components.len(),
            BLaw::ComonotoneScalar { .. } => 1,
        }
    }

    pub fn is_independent(&self) -> bool {
        matches!(self.b, BLaw::Independent { .. })
    }

    /// Draws `(X, B)`, writing `B` into `b`.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, b: &mut [f64]) -> f64 {
        let x = self.x.sample(rng);
        match &self.b {
            BLaw::Independent { components } => {
                for (slot, c) in b.iter_mut().zip(components) {
                    *slot = c.sample(rng);
                }
            }
            BLaw::ComonotoneScalar { map } => b[0] = map.apply(x),
        }
        x
    }

    /// All outcomes of a finitely supported pair in lexicographic order
    /// (X first, then the components of B).
    pub fn joint_atoms(&self) -> Option<Vec<JointAtom>> {
        let xs = self.x.atoms()?;
        match &self.b {
            BLaw::ComonotoneScalar { map } => Some(
                xs.iter()
                    .map(|a| JointAtom { prob: a.prob, x: a.value, b: vec![map.apply(a.value)] })
                    .collect(),
            ),
            BLaw::Independent { components } => {
                let comp_atoms = components.iter().map(|c| c.atoms()).collect::<Option<Vec<_>>>()?;
                let mut bs: Vec<(f64, Vec<f64>)> = vec![(1.0, Vec::new())];
                for atoms in &comp_atoms {
                    bs = bs
                        .into_iter()
                        .flat_map(|(p, v)| {
                            atoms.iter().map(move |a| {
                                let mut w = v.clone();
                                w.push(a.value);
                                (p * a.prob, w)
                            })
                        })
                        .collect();
                }
                let mut out = Vec::with_capacity(xs.len() * bs.len());
                for a in &xs {
                    for (pb, b) in &bs {
                        out.push(JointAtom { prob: a.prob * pb, x: a.value, b: b.clone() });
                    }
                }
                Some(out)
            }
        }
    }

    /// `E‖B‖^p` when it can be computed deterministically.
    pub fn b_norm_moment(&self, p: f64) -> Result<Option<MomentEstimate>> {
        if !(p > 0.0) {
            return Err(Error::InvalidOrder(p));
        }
        match &self.b {
            BLaw::ComonotoneScalar { map } => {
                let e = self.x.expect(|x| abs_pow(map.apply(x), p), &[]);
                Ok(Some(MomentEstimate { q: p, value: e.value, abs_error: e.abs_error, method: e.method }))
            }
            BLaw::Independent { components } if components.len() == 1 => Ok(Some(components[0].abs_moment(p)?)),
            BLaw::Independent { components } => {
                let atoms = match components.iter().map(|c| c.atoms()).collect::<Option<Vec<_>>>() {
                    Some(a) => a,
                    None => return Ok(None),
                };
                let mut value = 0.0;
                let mut idx = vec![0usize; atoms.len()];
                let mut v = vec![0.0; atoms.len()];
                loop {
                    let mut prob = 1.0;
                    for (j, &i) in idx.iter().enumerate() {
                        prob *= atoms[j][i].prob;
                        v[j] = atoms[j][i].value;
                    }
                    value += prob * abs_pow(self.norm.of(&v), p);
                    // odometer
                    let mut j = atoms.len();
                    loop {
                        if j == 0 {
                            return Ok(Some(MomentEstimate {
                                q: p,
                                value,
                                abs_error: value * 1e-15,
                                method: MomentMethod::FiniteSum,
                            }));
                        }
                        j -= 1;
                        idx[j] += 1;
                        if idx[j] < atoms[j].len() {
                            break;
                        }
                        idx[j] = 0;
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum NondegeneracyVerdict {
    NoViolationDetected,
    ViolationSuspected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NondegeneracyReport {
    pub samples: usize,
    /// Most frequent value of `B/(1−X)`, if any sample defines one.
    pub candidate: Option<Vec<f64>>,
    /// Empirical `P(Xv + B = v)` at the candidate.
    pub fixed_point_mass: f64,
    /// `1 − fixed_point_mass`.
    pub margin: f64,
    /// Largest coordinate standard deviation of `B/(1−X)`.
    pub dispersion: f64,
    pub verdict: NondegeneracyVerdict,
}

const SAME_POINT_REL: f64 = 1e-9;
const MARGIN_FLOOR: f64 = 1e-9;

fn close(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= SAME_POINT_REL * (1.0 + x.abs().max(y.abs())))
}

/// Looks for a point `v` with `Xv + B = v` almost surely by checking whether
/// samples of `B/(1−X)` pile up on one value. Samples with `X = 1` and
/// `B = 0` are consistent with every `v`. This is evidence, not a proof.
pub fn check_pair_nondegeneracy(pair: &PairSpec, samples: usize, src: RandomSource) -> NondegeneracyReport {
    let d = pair.dim();
    let mut rng = src.rng();
    let mut b = vec![0.0; d];
    let mut points: Vec<Vec<f64>> = Vec::with_capacity(samples);
    let mut universal = 0usize;
    for _ in 0..samples {
        let x = pair.sample_into(&mut rng, &mut b);
        let gap = 1.0 - x;
        if gap.abs() <= 1e-12 {
            if b.iter().all(|c| c.abs() <= 1e-12) {
                universal += 1;
            }
        } else {
            points.push(b.iter().map(|c| c / gap).collect());
        }
    }
    points.sort_by(|u, v| {
        u.iter()
            .zip(v)
            .map(|(a, b)| a.total_cmp(b))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut best = 0usize;
    let mut candidate = None;
    let mut i = 0;
    while i < points.len() {
        let mut j = i + 1;
        while j < points.len() && close(&points[i], &points[j]) {
            j += 1;
        }
        if j - i > best {
            best = j - i;
            candidate = Some(points[i].clone());
        }
        i = j;
    }
    let dispersion = if points.len() > 1 {
        (0..d)
            .map(|k| {
                let n = points.len() as f64;
                let mean = points.iter().map(|v| v[k]).sum::<f64>() / n;
                (points.iter().map(|v| (v[k] - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            })
            .fold(0.0, f64::max)
    } else {
        0.0
    };
    let mass = if samples == 0 { 0.0 } else { (best + universal) as f64 / samples as f64 };
    let margin = 1.0 - mass;
    let verdict = if samples > 0 && margin <= MARGIN_FLOOR {
        NondegeneracyVerdict::ViolationSuspected
    } else {
        NondegeneracyVerdict::NoViolationDetected
    };
    NondegeneracyReport { samples, candidate, fixed_point_mass: mass, margin, dispersion, verdict }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(c: f64) -> DistributionSpec {
        DistributionSpec::constant(c).unwrap()
    }

    #[test]
    fn constant_pair_has_fixed_point() {
        let pair = PairSpec::new(
            constant(0.5),
            BLaw::Independent { components: vec![constant(1.0), constant(1.0)] },
            Norm::L2,
        )
        .unwrap();
        let r = check_pair_nondegeneracy(&pair, 1000, RandomSource::new(1));
        assert_eq!(r.verdict, NondegeneracyVerdict::ViolationSuspected);
        assert_eq!(r.candidate, Some(vec![2.0, 2.0]));
        assert_eq!(r.margin, 0.0);
    }

    #[test]
    fn continuous_pair_is_dispersed() {
        let pair = PairSpec::new(
            DistributionSpec::uniform(0.0, 1.0).unwrap(),
            BLaw::Independent { components: vec![DistributionSpec::normal(0.0, 1.0).unwrap()] },
            Norm::L2,
        )
        .unwrap();
        let r = check_pair_nondegeneracy(&pair, 10_000, RandomSource::new(2));
        assert_eq!(r.verdict, NondegeneracyVerdict::NoViolationDetected);
        assert!(r.margin > 0.99);
        assert!(r.dispersion > 0.1);
    }

    #[test]
    fn zero_b_is_fixed_at_origin() {
        let pair = PairSpec::new(
            DistributionSpec::two_point(0.5, 1.5, 0.5).unwrap(),
            BLaw::Independent { components: vec![constant(0.0)] },
            Norm::L2,
        )
        .unwrap();
        let r = check_pair_nondegeneracy(&pair, 1000, RandomSource::new(3));
        assert_eq!(r.verdict, NondegeneracyVerdict::ViolationSuspected);
        assert_eq!(r.candidate, Some(vec![0.0]));
    }

    #[test]
    fn signed_x_is_rejected() {
        let r = PairSpec::new(
            DistributionSpec::RademacherSign,
            BLaw::Independent { components: vec![constant(1.0)] },
            Norm::L2,
        );
        assert!(r.is_err());
    }

    #[test]
    fn comonotone_moment_and_atoms() {
        let x = DistributionSpec::two_point(0.5, 1.5, 0.5).unwrap();
        let b = BLaw::from_parts(None, "affine:offset=1,slope=2").unwrap();
        let pair = PairSpec::new(x, b, Norm::L2).unwrap();
        let atoms = pair.joint_atoms().unwrap();
        assert_eq!(atoms[0].b, vec![2.0]);
        assert_eq!(atoms[1].b, vec![4.0]);
        assert_eq!(pair.b_norm_moment(2.0).unwrap().unwrap().value, 10.0);
    }

    #[test]
    fn independent_vector_moment_by_enumeration() {
        let b = BLaw::from_parts(Some("twopoint:a=0,b=1,pa=0.5;twopoint:a=0,b=1,pa=0.5"), "independent").unwrap();
        let pair = PairSpec::new(constant(0.5), b, Norm::L1).unwrap();
        // ‖B‖_1 ∈ {0, 1, 1, 2}
        assert_eq!(pair.b_norm_moment(1.0).unwrap().unwrap().value, 1.0);
        assert_eq!(pair.joint_atoms().unwrap().len(), 4);
    }

    #[test]
    fn map_text_round_trips() {
        for s in ["affine:offset=1,slope=0.5", "power:scale=2,exponent=1.5"] {
            assert_eq!(s.parse::<MonotoneMap>().unwrap().to_string(), s);
        }
        assert!("affine:offset=1,slope=-1".parse::<MonotoneMap>().is_err());
        assert!("affine:offset=1".parse::<MonotoneMap>().is_err());
    }
}
