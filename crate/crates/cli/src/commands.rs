use std::fmt::Write as _;

use momsand_core::assumptions::{default_q_grid, NondegeneracyVerdict, DEFAULT_A_GRID_LARGE, DEFAULT_A_GRID_SMALL};
use momsand_core::constants::{optimize_large_p, optimize_small_p, ScanEntry};
use momsand_core::montecarlo::{
    fixed_point_demo, goldie_bracket, goldie_constants, khintchine_counterexample, random_coefficients,
    run_sandwich_samples,
};
use momsand_core::riesz::{comparison_check, comparison_draws, riesz_lp_norm};
use momsand_core::{
    check_lacunary, check_pair_nondegeneracy, normalize_unit_p_moment, BLaw, CoefficientSet, ConstantBundle,
    DistributionSpec, Norm, PairSpec, RandomSource, RieszCombination, Verdict,
};
use serde_json::{json, Value};

use crate::{CliError, CoeffSource, ExperimentConfig, Outcome, RunReport, Summary, EXIT_FAIL};

const DEFAULT_REPS: usize = 10_000;
const COUNTEREXAMPLE_REPS: usize = 1_000_000;
const NONDEGENERACY_SAMPLES: usize = 10_000;
const DEFAULT_VERIFY_N: usize = 8;
const DEFAULT_RIESZ_DRAWS: usize = 20;

fn need<T: Clone>(v: &Option<T>, name: &str) -> Result<T, CliError> {
    v.clone().ok_or_else(|| CliError::Usage(format!("--{name} is required")))
}

fn parse_dist(s: &str) -> Result<DistributionSpec, CliError> {
    let spec: DistributionSpec = s.parse()?;
    spec.validate()?;
    Ok(spec)
}

fn parse_norm(s: &Option<String>) -> Result<Norm, CliError> {
    match s {
        None => Ok(Norm::default()),
        Some(t) => t.parse().map_err(|_| CliError::Usage(format!("unknown norm `{t}`"))),
    }
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serialisable")
}

fn tally(summary: &mut Summary, verdict: Verdict) {
    match verdict {
        Verdict::Pass => summary.passed += 1,
        Verdict::Fail => summary.failed += 1,
        Verdict::Inconclusive => summary.inconclusive += 1,
    }
}

fn track_ratio(summary: &mut Summary, r: f64) {
    summary.min_ratio = Some(summary.min_ratio.map_or(r, |m| m.min(r)));
    summary.max_ratio = Some(summary.max_ratio.map_or(r, |m| m.max(r)));
}

pub fn moments(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let dist = need(&cfg.dist, "dist")?;
    let spec = parse_dist(&dist)?;
    let qs = cfg.q.clone().unwrap_or_else(|| vec![1.0, 2.0]);
    let resolved = ExperimentConfig { q: Some(qs.clone()), ..cfg.clone() };
    let mut report = RunReport::new(resolved);
    let mut lines = vec![format!("{spec}"), format!("{:>8}  {:>22}  {:>10}  method", "q", "E|X|^q", "error")];
    for q in qs {
        let m = spec.abs_moment(q)?;
        lines.push(format!("{:>8}  {:>22.15}  {:>10.1e}  {}", q, m.value, m.abs_error, to_value(&m.method).as_str().unwrap_or("")));
        report.reports.push(to_value(&m));
        report.summary.passed += 1;
    }
    Ok(Outcome { report, lines })
}

/// A normalised spec with its fitted certificate and constants.
pub struct Certified {
    pub spec: DistributionSpec,
    pub scale: f64,
    pub certificate: Value,
    pub bundle: ConstantBundle,
    pub scan: Vec<ScanEntry>,
}

/// Normalises to `E|X|^p = 1`, fits the hypothesis certificate and picks
/// the best constants on the grids.
pub fn certify_spec(spec: &DistributionSpec, p: f64, grid_a: &[f64], grid_q: &[f64]) -> Result<Certified, CliError> {
    if !(p > 0.0 && p.is_finite()) {
        return Err(CliError::Usage(format!("p must be positive, got {p}")));
    }
    let (normed, scale) = normalize_unit_p_moment(spec, p)?;
    if p <= 1.0 {
        let opt = optimize_small_p(&normed, p, grid_a)?;
        Ok(Certified { spec: normed, scale, certificate: to_value(&opt.certificate), bundle: opt.bundle, scan: opt.scan })
    } else {
        let opt = optimize_large_p(&normed, p, grid_a, grid_q)?;
        Ok(Certified { spec: normed, scale, certificate: to_value(&opt.certificate), bundle: opt.bundle, scan: opt.scan })
    }
}

fn grids(cfg: &ExperimentConfig, p: f64) -> (Vec<f64>, Vec<f64>) {
    let a = cfg.grid_a.clone().unwrap_or_else(|| {
        if p <= 1.0 { DEFAULT_A_GRID_SMALL.to_vec() } else { DEFAULT_A_GRID_LARGE.to_vec() }
    });
    let q = cfg.grid_q.clone().unwrap_or_else(|| if p <= 1.0 { Vec::new() } else { default_q_grid(p) });
    (a, q)
}

fn certified_report(report: &mut RunReport, c: &Certified) {
    report.certificates.push(json!({
        "spec": c.spec.to_string(),
        "normalising_scale": c.scale,
        "certificate": c.certificate,
    }));
    report.bundles.push(c.bundle.clone());
}

fn bundle_lines(lines: &mut Vec<String>, b: &ConstantBundle) {
    lines.push(format!("regime {:?}, p = {}", b.regime, b.p));
    lines.push(format!("lower c = {:e} (ln c = {})", b.lower_c, b.ln_lower_c));
    lines.push(format!("upper C = {} (product {}, recursive {})", b.upper_c, b.upper_c_product, b.upper_c_recursive));
    let w = &b.k_witness;
    let mut s = format!("k = {} : ln lhs(k) = {} <= ln rhs = {}", w.k, w.ln_lhs_k, w.inequality.ln_rhs);
    if let Some(prev) = w.ln_lhs_prev {
        let _ = write!(s, "; ln lhs(k-1) = {prev} > ln rhs");
    }
    lines.push(s);
}

pub fn certify(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let spec = parse_dist(&need(&cfg.dist, "dist")?)?;
    let p = need(&cfg.p, "p")?;
    let (ga, gq) = grids(cfg, p);
    let c = certify_spec(&spec, p, &ga, &gq)?;
    let resolved = ExperimentConfig {
        grid_a: Some(ga),
        grid_q: if gq.is_empty() { None } else { Some(gq) },
        ..cfg.clone()
    };
    let mut report = RunReport::new(resolved);
    certified_report(&mut report, &c);
    report.reports.push(json!({ "scan": c.scan }));
    report.summary.passed = 1;
    let mut lines = vec![format!("normalised spec {} (scale {})", c.spec, c.scale)];
    bundle_lines(&mut lines, &c.bundle);
    Ok(Outcome { report, lines })
}

fn coefficient_draw(src: &CoeffSource, draw: usize, dim: usize, norm: Norm) -> Result<CoefficientSet, CliError> {
    Ok(match src {
        CoeffSource::Explicit(v) => CoefficientSet::from_flat(v, dim, norm)?,
        CoeffSource::Random { count, scale, seed } => {
            random_coefficients(*count, dim, *scale, seed.wrapping_add(draw as u64), norm)?
        }
    })
}

fn source_string(src: &CoeffSource) -> String {
    match src {
        CoeffSource::Explicit(v) => v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","),
        CoeffSource::Random { count, scale, seed } => format!("random:count={count},scale={scale},seed={seed}"),
    }
}

pub fn verify(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let spec = parse_dist(&need(&cfg.dist, "dist")?)?;
    let p = need(&cfg.p, "p")?;
    let dim = cfg.dim.unwrap_or(1);
    let norm = parse_norm(&cfg.norm)?;
    let seed = cfg.seed.unwrap_or(0);
    let reps = cfg.reps.unwrap_or(DEFAULT_REPS);
    let draws = cfg.draws.unwrap_or(1);
    let n = cfg.n.as_ref().and_then(|v| v.first().copied()).unwrap_or(DEFAULT_VERIFY_N);
    let source: CoeffSource = match &cfg.coeffs {
        Some(s) => s.parse()?,
        None => CoeffSource::Random { count: n + 1, scale: 1.0, seed },
    };
    if matches!(source, CoeffSource::Explicit(_)) && draws > 1 {
        return Err(CliError::Usage("several draws need a random coefficient source".into()));
    }
    if draws == 0 {
        return Err(CliError::Usage("--draws must be at least 1".into()));
    }
    let (ga, gq) = grids(cfg, p);
    let c = certify_spec(&spec, p, &ga, &gq)?;
    let resolved = ExperimentConfig {
        dim: Some(dim),
        norm: Some(norm.to_string()),
        seed: Some(seed),
        reps: Some(reps),
        draws: Some(draws),
        coeffs: Some(source_string(&source)),
        grid_a: Some(ga),
        grid_q: if gq.is_empty() { None } else { Some(gq) },
        ..cfg.clone()
    };
    let mut report = RunReport::new(resolved);
    certified_report(&mut report, &c);
    let mut lines = Vec::new();
    bundle_lines(&mut lines, &c.bundle);
    let mut csv = String::new();
    for d in 0..draws {
        let coeffs = coefficient_draw(&source, d, dim, norm)?;
        let src = RandomSource::new(seed.wrapping_add(d as u64));
        let (r, samples) = run_sandwich_samples(&c.spec, p, &coeffs, &c.bundle, reps, src)?;
        for (i, v) in samples.iter().enumerate() {
            let _ = writeln!(csv, "{d},{i},{v}");
        }
        lines.push(format!(
            "draw {d}: n = {}, lhs = {} ({}), rhs_sum = {}, ratio = {}, {:?}",
            r.n,
            r.lhs.mean,
            if r.lhs.exact { "exact" } else { "monte carlo" },
            r.rhs_sum,
            r.ratio,
            r.verdict
        ));
        tally(&mut report.summary, r.verdict);
        track_ratio(&mut report.summary, r.ratio);
        report.reports.push(to_value(&r));
    }
    if let Some(path) = &cfg.csv {
        std::fs::write(path, format!("draw,rep,value\n{csv}")).map_err(|e| CliError::Io(format!("{path}: {e}")))?;
    }
    if report.summary.failed > 0 {
        report.exit_code = EXIT_FAIL;
    }
    Ok(Outcome { report, lines })
}

pub fn riesz(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let terms = need(&cfg.seq, "seq")?;
    let p = need(&cfg.p, "p")?;
    let seed = cfg.seed.unwrap_or(0);
    let reps = cfg.reps.unwrap_or(DEFAULT_REPS);
    let seq = check_lacunary(&terms)?;
    let points = cfg.points.unwrap_or_else(|| seq.min_points().next_power_of_two());
    let src = RandomSource::new(seed);
    let mut resolved = ExperimentConfig { seed: Some(seed), reps: Some(reps), points: Some(points), ..cfg.clone() };
    let mut lines = vec![format!(
        "sequence {:?}: min ratio {:?}, lacunary {}, tail sum {}",
        seq.terms, seq.min_ratio, seq.lacunary, seq.tail_sum
    )];
    let mut reports = vec![json!({ "sequence": seq })];
    let mut summary = Summary::default();

    if let Some(term) = cfg.term {
        let comb = RieszCombination::single_term(seq.clone(), term)?;
        let torus = riesz_lp_norm(&comb, p, points)?;
        lines.push(format!("integral of R_{term}^{p} over the torus = {} (richardson {:e})", torus.value, torus.richardson_error));
        reports.push(json!({ "term": term, "torus": torus }));
        if seq.lacunary {
            let r = comparison_check(&comb, p, reps, Some(points), src)?;
            lines.push(format!("probabilistic side {}, ratio {}", r.probabilistic.mean, r.ratio));
            track_ratio(&mut summary, r.ratio);
            reports.push(to_value(&r));
        }
        summary.passed += 1;
    } else if let Some(text) = &cfg.coeffs {
        let coeffs = match text.parse::<CoeffSource>()? {
            CoeffSource::Explicit(v) => v,
            CoeffSource::Random { .. } => {
                return Err(CliError::Usage("riesz takes explicit coefficients or --draws".into()));
            }
        };
        let comb = RieszCombination::new(seq.clone(), coeffs)?;
        let r = comparison_check(&comb, p, reps, Some(points), src)?;
        lines.push(format!("torus {}, probabilistic {}, ratio {}", r.torus.value, r.probabilistic.mean, r.ratio));
        track_ratio(&mut summary, r.ratio);
        summary.passed += 1;
        reports.push(to_value(&r));
    } else {
        let draws = cfg.draws.unwrap_or(DEFAULT_RIESZ_DRAWS);
        resolved.draws = Some(draws);
        let r = comparison_draws(&seq, p, draws, reps, Some(points), src)?;
        lines.push(format!("{draws} draws: ratios in [{}, {}], band factor {}", r.min_ratio, r.max_ratio, r.band));
        summary.min_ratio = Some(r.min_ratio);
        summary.max_ratio = Some(r.max_ratio);
        summary.passed += draws;
        reports.push(to_value(&r));
    }
    let mut report = RunReport::new(resolved);
    report.reports = reports;
    report.summary = summary;
    Ok(Outcome { report, lines })
}

pub fn perpetuity(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let p = need(&cfg.p, "p")?;
    if cfg.fixed_point_demo.unwrap_or(false) {
        return fixed_point(cfg, p);
    }
    let seed = cfg.seed.unwrap_or(0);
    let reps = cfg.reps.unwrap_or(DEFAULT_REPS);
    let norm = parse_norm(&cfg.norm)?;
    let ns = cfg.n.clone().unwrap_or_else(|| (1..=6).collect());
    let coupling = cfg.coupling.clone().unwrap_or_else(|| "independent".into());
    let x = parse_dist(&need(&cfg.dist, "dist")?)?;
    let b = BLaw::from_parts(cfg.bdist.as_deref(), &coupling)?;
    // Scaling X leaves an independent B untouched; a coupled B = g(X) would change.
    let (x, scale) = match b {
        BLaw::Independent { .. } => normalize_unit_p_moment(&x, p)?,
        BLaw::ComonotoneScalar { .. } => (x, 1.0),
    };
    let pair = PairSpec::new(x, b, norm)?;
    let src = RandomSource::new(seed);
    let nondeg = check_pair_nondegeneracy(&pair, NONDEGENERACY_SAMPLES, src);
    let consts = goldie_constants(&pair, p)?;
    let g = goldie_bracket(&pair, p, &ns, &consts, reps, src)?;

    let resolved = ExperimentConfig {
        seed: Some(seed),
        reps: Some(reps),
        norm: Some(norm.to_string()),
        n: Some(ns),
        coupling: Some(coupling),
        ..cfg.clone()
    };
    let mut report = RunReport::new(resolved);
    report.certificates.push(json!({ "pair": pair, "normalising_scale": scale, "nondegeneracy": nondeg }));
    report.bundles.push(consts.bundle.clone());
    let mut lines = vec![format!(
        "E|B|^p = {}{}; bracket constants lower {:?}, upper {}",
        g.b_moment,
        if g.b_moment_exact { "" } else { " (monte carlo)" },
        g.lower_c,
        g.upper_c
    )];
    if nondeg.verdict == NondegeneracyVerdict::ViolationSuspected {
        lines.push(format!("warning: X v + B = v looks almost sure (mass {})", nondeg.fixed_point_mass));
    }
    for row in &g.rows {
        lines.push(format!(
            "n = {}: (1/n) E|S_n|^p = {}{} in [{:?}, {}]: {:?}",
            row.n,
            row.middle.mean,
            if row.middle.exact { "" } else { " (monte carlo)" },
            row.lower,
            row.upper,
            row.verdict
        ));
        tally(&mut report.summary, row.verdict);
        track_ratio(&mut report.summary, row.middle.mean / g.b_moment);
    }
    report.reports.push(to_value(&g));
    if report.summary.failed > 0 {
        report.exit_code = EXIT_FAIL;
    }
    Ok(Outcome { report, lines })
}

fn fixed_point(cfg: &ExperimentConfig, p: f64) -> Result<Outcome, CliError> {
    let ns = cfg.n.clone().unwrap_or_else(|| vec![1, 2, 5, 10, 100, 1000]);
    let lower = cfg.lower_c.clone().unwrap_or_else(|| vec![1e-1, 1e-2, 1e-3]);
    let demo = fixed_point_demo(0.5, 1.0, p, &ns, &lower)?;
    let resolved = ExperimentConfig { n: Some(ns), lower_c: Some(lower), ..cfg.clone() };
    let mut report = RunReport::new(resolved);
    let mut lines = vec![format!("X = {}, B = {}, fixed point v = {}", demo.x, demo.b, demo.v)];
    for r in &demo.rows {
        lines.push(format!("n = {}: S_n = {}, |S_n|^p / n = {}", r.n, r.s_n, r.middle));
    }
    for e in &demo.exits {
        lines.push(format!("leaves a bracket with lower constant {} at n = {}", e.lower_c, e.n_exit));
        report.summary.passed += 1;
    }
    report.reports.push(to_value(&demo));
    Ok(Outcome { report, lines })
}

/// Random signs violate the hypothesis; the ratio against `Σ E|Rᵢ|^p = n`
/// grows like `n^{p/2−1}`, so any fixed upper constant eventually fails.
pub fn counterexample(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let p = cfg.p.unwrap_or(4.0);
    let ns = cfg.n.clone().unwrap_or_else(|| vec![100]);
    let reps = cfg.reps.unwrap_or(COUNTEREXAMPLE_REPS);
    let seed = cfg.seed.unwrap_or(0);
    let resolved = ExperimentConfig { p: Some(p), n: Some(ns.clone()), reps: Some(reps), seed: Some(seed), ..cfg.clone() };
    let mut report = RunReport::new(resolved);
    let mut lines = Vec::new();
    for n in ns {
        let r = khintchine_counterexample(n, p, reps, RandomSource::new(seed))?;
        let mut s = format!("n = {n}: E|sum R_i|^{p} = {} +- {}", r.estimate.mean, r.estimate.std_error);
        if let (Some(e), Some(z)) = (r.exact, r.z_score) {
            let _ = write!(s, " (exact {e}, z = {z:.2})");
        }
        let _ = write!(s, "; ratio to sum E|R_i|^p = {}", r.ratio);
        lines.push(s);
        report.summary.failed += 1;
        track_ratio(&mut report.summary, r.ratio);
        report.reports.push(to_value(&r));
    }
    report.exit_code = EXIT_FAIL;
    Ok(Outcome { report, lines })
}
