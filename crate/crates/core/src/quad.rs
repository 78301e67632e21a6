//! Adaptive composite Gauss–Legendre quadrature and deterministic summation.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::OnceLock;

const GL_ORDER: usize = 20;
const MAX_PANELS: usize = 4096;

/// Gauss–Legendre nodes and weights on [-1, 1], computed once by Newton
/// iteration on the Legendre recurrence.
fn gauss_legendre() -> &'static [(f64, f64)] {
    static RULE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    RULE.get_or_init(|| legendre_rule(GL_ORDER))
}

pub(crate) fn legendre_rule(n: usize) -> Vec<(f64, f64)> {
    let mut rule = Vec::with_capacity(n);
    for i in 0..n {
        // Chebyshev-like starting guess, then Newton.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut deriv = 0.0;
        for _ in 0..100 {
            let (p, dp) = legendre_with_derivative(n, x);
            deriv = dp;
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(n, x);
        if dp != 0.0 {
            deriv = dp;
        }
        let w = 2.0 / ((1.0 - x * x) * deriv * deriv);
        rule.push((x, w));
    }
    rule.sort_by(|a, b| a.0.total_cmp(&b.0));
    rule
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

fn gl_panel<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> f64 {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut acc = 0.0;
    for &(x, w) in gauss_legendre() {
        acc += w * f(mid + half * x);
    }
    acc * half
}

/// Result of an adaptive integration: value and accumulated error estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integral {
    pub value: f64,
    pub abs_error: f64,
}

/// Integrates `f` over `[a, b]`, splitting first at every breakpoint that
/// falls strictly inside the interval. The panel with the largest error
/// estimate is bisected until the summed estimate drops below `rel_tol` of
/// the global magnitude or the panel budget runs out.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, breaks: &[f64], rel_tol: f64) -> Integral {
    if !(b > a) {
        return Integral { value: 0.0, abs_error: 0.0 };
    }
    let mut cuts: Vec<f64> = breaks
        .iter()
        .copied()
        .filter(|x| x.is_finite() && *x > a && *x < b)
        .collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut edges = Vec::with_capacity(cuts.len() + 2);
    edges.push(a);
    edges.extend(cuts);
    edges.push(b);

    let mut heap: BinaryHeap<Panel> = edges.windows(2).map(|w| Panel::new(&f, w[0], w[1])).collect();
    loop {
        let err: f64 = heap.iter().map(|p| p.err).sum();
        let scale: f64 = heap.iter().map(|p| p.abs).sum::<f64>().max(f64::MIN_POSITIVE);
        if err <= rel_tol * scale || heap.len() >= MAX_PANELS {
            break;
        }
        let worst = heap.pop().expect("nonempty");
        let mid = 0.5 * (worst.a + worst.b);
        if !(mid > worst.a && mid < worst.b) || worst.err == 0.0 {
            // cannot split further; freeze its error
            heap.push(Panel { err: 0.0, ..worst });
            if heap.iter().all(|p| p.err == 0.0) {
                break;
            }
            continue;
        }
        heap.push(Panel::new(&f, worst.a, mid));
        heap.push(Panel::new(&f, mid, worst.b));
    }
    let mut panels: Vec<Panel> = heap.into_vec();
    panels.sort_by(|x, y| x.a.total_cmp(&y.a));
    let values: Vec<f64> = panels.iter().map(|p| p.value).collect();
    Integral { value: pairwise_sum(&values), abs_error: panels.iter().map(|p| p.err).sum() }
}

#[derive(Debug, Clone, Copy)]
struct Panel {
    a: f64,
    b: f64,
    value: f64,
    abs: f64,
    err: f64,
}

impl Panel {
    fn new<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Self {
        let mid = 0.5 * (a + b);
        let whole = gl_panel(f, a, b);
        let (l, r) = (gl_panel(f, a, mid), gl_panel(f, mid, b));
        let value = l + r;
        let err = (value - whole).abs();
        Panel { a, b, value, abs: l.abs() + r.abs(), err: if err.is_finite() { err } else { f64::INFINITY } }
    }
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.err.total_cmp(&other.err).then_with(|| other.a.total_cmp(&self.a))
    }
}

/// Pairwise (tree) summation with fixed split points, so the result depends
/// only on the input order and never on how the work was scheduled.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 64;
    if values.len() <= BLOCK {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Parallel pairwise summation; bitwise identical to [`pairwise_sum`].
pub fn par_pairwise_sum(values: &[f64]) -> f64 {
    const SERIAL: usize = 1 << 14;
    if values.len() <= SERIAL {
        return pairwise_sum(values);
    }
    let mid = values.len() / 2;
    let (a, b) = rayon::join(|| par_pairwise_sum(&values[..mid]), || par_pairwise_sum(&values[mid..]));
    a + b
}
