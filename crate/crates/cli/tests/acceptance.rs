//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any failed.

use std::path::PathBuf;
use std::process::Command;
use std::time::{Duration, Instant};

use momsand_cli::commands::{certify_spec, Certified};
use momsand_core::assumptions::{chain_len, default_q_grid, DEFAULT_A_GRID_LARGE, DEFAULT_A_GRID_SMALL};
use momsand_core::constants::ln_c0;
use momsand_core::lemmas::{tail_bound_large_p, tail_bound_small_p, TAIL_LEVELS};
use momsand_core::montecarlo::{
    brute_force_lhs, fixed_point_demo, goldie_bracket, goldie_constants, khintchine_counterexample, rhs_sum,
};
use momsand_core::riesz::{comparison_check, comparison_draws, riesz_lp_norm};
use momsand_core::{
    check_lacunary, lower_constant_large_p, lower_constant_small_p, upper_constant_large_p, BLaw, CoefficientSet,
    DistributionSpec, LargePCertificate, Norm, PairSpec, RandomSource, RieszCombination, SmallPCertificate, Verdict,
};
use rand::Rng;

// Pinned tolerances and limits.
const SANDWICH_REL_TOL: f64 = 1e-9;
const EQUALITY_REL_TOL: f64 = 1e-12;
const KHINTCHINE_SIGMAS: f64 = 3.0;
const KHINTCHINE_MIN_RATIO: f64 = 250.0;
const RIESZ_MEAN_TOL: f64 = 1e-8;
const RIESZ_SECOND_TOL: f64 = 1e-6;
const RIESZ_DOUBLING_REL: f64 = 1e-9;
const SINGLE_TERM_RATIO_TOL: f64 = 1e-6;
const COMPARISON_BAND: f64 = 10.0;
const K_TUPLES: usize = 1000;
const K_LOG_TOL: f64 = 1e-12;
const RECURSIVE_C_15: f64 = 9.657;
const PRODUCT_C_15: f64 = 12.52;
const REFERENCE_ABS_TOL: f64 = 5e-3;
const GOLDIE_MC_REPS: usize = 100_000;
const LIMIT_SMALL_P: Duration = Duration::from_secs(60);
const LIMIT_LARGE_P: Duration = Duration::from_secs(120);
const LIMIT_RIESZ: Duration = Duration::from_secs(30);

const N_SPECS: usize = 20;
const N_COEFF_SETS: usize = 10;
const SMALL_PS: [f64; 3] = [0.3, 0.5, 1.0];
const LARGE_PS: [f64; 3] = [1.5, 2.0, 2.5];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn random_two_points(seed: u64) -> Vec<DistributionSpec> {
    let mut rng = RandomSource::new(seed).rng();
    (0..N_SPECS)
        .map(|_| {
            let a = rng.random_range(0.05..0.95);
            let b = rng.random_range(1.05..3.0);
            let pa = rng.random_range(0.1..0.9);
            DistributionSpec::two_point(a, b, pa).unwrap()
        })
        .collect()
}

/// Mixed-sign coefficient sets with at most 12 random terms after `v₀` and
/// dimension at most 3.
fn random_coefficient_sets(seed: u64) -> Vec<CoefficientSet> {
    let mut rng = RandomSource::new(seed).rng();
    (0..N_COEFF_SETS)
        .map(|i| {
            let n = rng.random_range(1..=12usize);
            let dim = rng.random_range(1..=3usize);
            let norm = [Norm::L2, Norm::L1, Norm::Sup][i % 3];
            let vectors = (0..=n).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            CoefficientSet::new(vectors, norm).unwrap()
        })
        .collect()
}

struct CertifiedCase {
    spec_index: usize,
    p: f64,
    cert: Result<Certified, String>,
}

fn certify_all(specs: &[DistributionSpec], ps: &[f64]) -> Vec<CertifiedCase> {
    let mut out = Vec::new();
    for (spec_index, spec) in specs.iter().enumerate() {
        for &p in ps {
            let (ga, gq) =
                if p <= 1.0 { (DEFAULT_A_GRID_SMALL.to_vec(), vec![]) } else { (DEFAULT_A_GRID_LARGE.to_vec(), default_q_grid(p)) };
            let cert = certify_spec(spec, p, &ga, &gq).map_err(|e| e.to_string());
            out.push(CertifiedCase { spec_index, p, cert });
        }
    }
    out
}

fn sandwich(cases: &[CertifiedCase], coeffs: &[CoefficientSet], use_min_upper: bool) -> (usize, Vec<String>) {
    let mut checks = 0;
    let mut failures = Vec::new();
    for case in cases {
        let c = match &case.cert {
            Ok(c) => c,
            Err(e) => {
                failures.push(format!("spec {} p={}: certify failed: {e}", case.spec_index, case.p));
                continue;
            }
        };
        let upper = if use_min_upper {
            c.bundle.upper_c_recursive.min(c.bundle.upper_c_product)
        } else {
            c.bundle.upper_c
        };
        for (j, cs) in coeffs.iter().enumerate() {
            checks += 1;
            let lhs = brute_force_lhs(&c.spec, cs, case.p).unwrap().mean;
            let rhs = rhs_sum(&c.spec, cs, case.p).unwrap();
            let tol = SANDWICH_REL_TOL * rhs;
            if !(lhs >= c.bundle.lower_c * rhs - tol && lhs <= upper * rhs + tol) {
                failures.push(format!(
                    "spec {} p={} set {j}: lhs {lhs} outside [{}, {}]",
                    case.spec_index,
                    case.p,
                    c.bundle.lower_c * rhs,
                    upper * rhs
                ));
            }
        }
    }
    (checks, failures)
}

fn timed_sandwich(cases: &[CertifiedCase], coeffs: &[CoefficientSet], min_upper: bool, limit: Duration, spent: Duration) -> Outcome {
    let start = Instant::now();
    let (checks, failures) = sandwich(cases, coeffs, min_upper);
    let elapsed = spent + start.elapsed();
    let pass = failures.is_empty() && elapsed < limit;
    let mut d = format!("{checks} checks, {} failures, {:.2}s (limit {}s)", failures.len(), elapsed.as_secs_f64(), limit.as_secs());
    if let Some(f) = failures.first() {
        d.push_str(&format!("; first: {f}"));
    }
    outcome(pass, d)
}

fn criterion_3() -> Outcome {
    let mut rng = RandomSource::new(303).rng();
    let mut worst: f64 = 0.0;
    let mut checks = 0;
    for _ in 0..N_SPECS {
        let a = rng.random_range(0.0..1.0);
        let b = a + rng.random_range(0.1..2.0);
        let spec = DistributionSpec::two_point(a, b, rng.random_range(0.1..0.9)).unwrap();
        for _ in 0..N_COEFF_SETS {
            let n = rng.random_range(1..=12usize);
            let scalars: Vec<f64> = (0..=n).map(|_| rng.random_range(0.0..2.0)).collect();
            let cs = CoefficientSet::scalars(&scalars).unwrap();
            let lhs = brute_force_lhs(&spec, &cs, 1.0).unwrap().mean;
            let rhs = rhs_sum(&spec, &cs, 1.0).unwrap();
            worst = worst.max((lhs - rhs).abs() / rhs);
            checks += 1;
        }
    }
    outcome(worst <= EQUALITY_REL_TOL, format!("{checks} checks, worst relative gap {worst:e} (tol {EQUALITY_REL_TOL:e})"))
}

fn criterion_4() -> Outcome {
    match khintchine_counterexample(100, 4.0, 1_000_000, RandomSource::new(4)) {
        Ok(r) => {
            let exact = r.exact.unwrap_or(f64::NAN);
            let z = r.z_score.unwrap_or(f64::INFINITY);
            let pass = exact == 29800.0 && z.abs() <= KHINTCHINE_SIGMAS && r.ratio > KHINTCHINE_MIN_RATIO;
            outcome(pass, format!("estimate {} +- {}, exact {exact}, z = {z:.3}, ratio {}", r.estimate.mean, r.estimate.std_error, r.ratio))
        }
        Err(e) => outcome(false, e.to_string()),
    }
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let seq = check_lacunary(&[4, 16, 64, 256, 1024]).unwrap();
    let n = 1usize << 17;
    let mut worst_mean: f64 = 0.0;
    let mut worst_second: f64 = 0.0;
    let mut worst_doubling: f64 = 0.0;
    for i in 0..=5 {
        let comb = RieszCombination::single_term(seq.clone(), i).unwrap();
        for (p, target) in [(1.0, 1.0), (2.0, 1.5f64.powi(i as i32))] {
            let v = riesz_lp_norm(&comb, p, n).unwrap().value;
            let v2 = riesz_lp_norm(&comb, p, 2 * n).unwrap().value;
            if p == 1.0 {
                worst_mean = worst_mean.max((v - target).abs());
            } else {
                worst_second = worst_second.max((v - target).abs());
            }
            worst_doubling = worst_doubling.max((v2 - v).abs() / v.abs());
        }
    }
    let elapsed = start.elapsed();
    let pass = worst_mean <= RIESZ_MEAN_TOL
        && worst_second <= RIESZ_SECOND_TOL
        && worst_doubling < RIESZ_DOUBLING_REL
        && elapsed < LIMIT_RIESZ;
    outcome(
        pass,
        format!(
            "max |mean - 1| = {worst_mean:e}, max |second - 1.5^i| = {worst_second:e}, doubling change {worst_doubling:e}, {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_6() -> Outcome {
    let seq = check_lacunary(&[4, 16, 64, 256, 1024]).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..=seq.len() {
        let comb = RieszCombination::single_term(seq.clone(), i).unwrap();
        let r = comparison_check(&comb, 2.0, 1000, None, RandomSource::new(6)).unwrap();
        worst = worst.max((r.ratio - 1.0).abs());
    }
    let draws = comparison_draws(&seq, 3.0, 20, 20_000, None, RandomSource::new(66)).unwrap();
    let pass = worst <= SINGLE_TERM_RATIO_TOL && draws.band <= COMPARISON_BAND;
    outcome(
        pass,
        format!(
            "p=2 single-term max |ratio - 1| = {worst:e}; p=3 ratios in [{:.4}, {:.4}], band {:.4}",
            draws.min_ratio, draws.max_ratio, draws.band
        ),
    )
}

fn criterion_7() -> Outcome {
    let mut rng = RandomSource::new(707).rng();
    let mut bad = Vec::new();
    for t in 0..K_TUPLES {
        let p = rng.random_range(0.1..=1.0);
        let lambda: f64 = rng.random_range(0.05..0.99);
        let delta: f64 = rng.random_range(0.01..=1.0);
        let a: f64 = rng.random_range(1.1..10.0);
        let cert = SmallPCertificate::from_parameters(p, lambda, delta, a).unwrap();
        match lower_constant_small_p(&cert) {
            Ok(b) => {
                let ln_rhs = 3.0 * delta.ln() + 2.0 * (1.0 - lambda).ln() - 12.0 * std::f64::consts::LN_2 - a.ln();
                let lhs = |k: u64| (k as f64).ln() + (2 * k - 2) as f64 * lambda.ln();
                let ok = lhs(b.k) <= ln_rhs + K_LOG_TOL && (b.k == 1 || lhs(b.k - 1) > ln_rhs - K_LOG_TOL);
                if !(ok && b.k_witness.check()) {
                    bad.push(format!("small tuple {t}: k = {}", b.k));
                }
            }
            Err(e) => bad.push(format!("small tuple {t}: {e}")),
        }
    }
    for t in 0..K_TUPLES {
        let p: f64 = rng.random_range(1.05..4.0);
        let lambda: f64 = rng.random_range(0.05..0.95);
        let mu: f64 = rng.random_range(0.05..1.5);
        let a: f64 = rng.random_range(1.5..20.0);
        let q_lo = (p - 1.0).max(1.0);
        let q = q_lo + (p - q_lo) * rng.random_range(0.05..0.95);
        let chain = (0..chain_len(p)).map(|_| rng.random_range(0.05..0.95)).collect();
        let cert = LargePCertificate::from_parameters(p, mu, a, q, lambda, chain).unwrap();
        match lower_constant_large_p(&cert) {
            Ok(b) => {
                let ln_rhs = (1.0 - lambda).ln() + 3.0 * p * mu.ln()
                    - 8f64.ln()
                    - 10.0 * p * std::f64::consts::LN_2
                    - p * 3f64.ln()
                    - ln_c0(p, lambda, a, q);
                let lhs = |k: u64| (k as f64).ln() + p * k as f64 * lambda.ln();
                let ok = lhs(b.k) <= ln_rhs + K_LOG_TOL && (b.k == 1 || lhs(b.k - 1) > ln_rhs - K_LOG_TOL);
                if !(ok && b.k_witness.check()) {
                    bad.push(format!("large tuple {t}: k = {}", b.k));
                }
            }
            Err(e) => bad.push(format!("large tuple {t}: {e}")),
        }
    }
    let reference = lower_constant_small_p(&SmallPCertificate::from_parameters(1.0, 0.5, 0.5, 2.0).unwrap()).unwrap();
    let ref_ok = reference.k == 12 && (reference.lower_c - 1.0 / 1536.0).abs() <= 1e-15;
    let (product, recursive) = upper_constant_large_p(1.5, &[0.5]).unwrap();
    let upper_ok = (recursive - RECURSIVE_C_15).abs() <= REFERENCE_ABS_TOL
        && (product - PRODUCT_C_15).abs() <= REFERENCE_ABS_TOL
        && recursive <= product;
    let pass = bad.is_empty() && ref_ok && upper_ok;
    let mut d = format!(
        "{} tuples, {} failures; k = {}, c = {}; recursive C = {recursive:.4}, product C = {product:.4}",
        2 * K_TUPLES,
        bad.len(),
        reference.k,
        reference.lower_c
    );
    if let Some(f) = bad.first() {
        d.push_str(&format!("; first: {f}"));
    }
    outcome(pass, d)
}

fn criterion_8() -> Outcome {
    let p = 2.0;
    let x = momsand_core::normalize_unit_p_moment(&DistributionSpec::two_point(0.5, 1.5, 0.4).unwrap(), p).unwrap().0;
    let b = DistributionSpec::two_point(-1.0, 2.0, 0.3).unwrap();
    let pair = PairSpec::new(x, BLaw::Independent { components: vec![b] }, Norm::L2).unwrap();
    let consts = match goldie_constants(&pair, p) {
        Ok(c) => c,
        Err(e) => return outcome(false, e.to_string()),
    };
    let exact = goldie_bracket(&pair, p, &[1, 2, 3, 4, 5, 6], &consts, GOLDIE_MC_REPS, RandomSource::new(8)).unwrap();
    let mc = goldie_bracket(&pair, p, &[10, 25, 50], &consts, GOLDIE_MC_REPS, RandomSource::new(88)).unwrap();
    let exact_ok = exact.rows.iter().all(|r| r.middle.exact && r.verdict == Verdict::Pass);
    let mc_ok = mc.rows.iter().all(|r| !r.middle.exact && r.verdict == Verdict::Pass);
    let n1_ok = (exact.rows[0].middle.mean - exact.b_moment).abs() <= 1e-12 * exact.b_moment;
    let lower = consts.lower_c.unwrap_or(0.0);
    let demo = fixed_point_demo(0.5, 1.0, p, &[1, 2, 10, 100, 1000, 10_000], &[lower]).unwrap();
    let decays = demo.rows.windows(2).skip(1).all(|w| w[1].middle < w[0].middle) && demo.rows.last().unwrap().middle < 1e-3;
    let exit = demo.exits[0].n_exit;
    let exit_ok = lower > 0.0 && {
        let f = |n: u64| (2.0 * (1.0 - 0.5f64.powf(n as f64))).powi(2) / n as f64;
        f(exit) < lower && f(exit - 1) >= lower
    };
    let pass = exact_ok && mc_ok && n1_ok && decays && exit_ok;
    outcome(
        pass,
        format!(
            "bracket [{:e}, {}] x E|B|^p = {}; exact n<=6 in bracket: {exact_ok}; MC n in {{10,25,50}} in bracket: {mc_ok}; \
             fixed point leaves lower bracket at n = {exit}",
            lower, consts.upper_c, exact.b_moment
        ),
    )
}

fn criterion_9(small: &[CertifiedCase], large: &[CertifiedCase], coeffs: &[CoefficientSet]) -> Outcome {
    let mut checks = 0;
    let mut bad = Vec::new();
    for case in small.iter().chain(large) {
        let Ok(c) = &case.cert else {
            bad.push(format!("spec {} p={}: not certified", case.spec_index, case.p));
            continue;
        };
        for cs in coeffs {
            let rows = if case.p <= 1.0 {
                let cert: SmallPCertificate = serde_json::from_value(c.certificate.clone()).unwrap();
                tail_bound_small_p(&c.spec, cs, &cert, &TAIL_LEVELS)
            } else {
                let cert: LargePCertificate = serde_json::from_value(c.certificate.clone()).unwrap();
                tail_bound_large_p(&c.spec, cs, &cert, &TAIL_LEVELS)
            };
            match rows {
                Ok(rows) => {
                    for r in rows {
                        checks += 1;
                        if !r.holds {
                            bad.push(format!("spec {} p={} t={}: P = {} > {}", case.spec_index, case.p, r.t, r.prob, r.bound));
                        }
                    }
                }
                Err(e) => bad.push(e.to_string()),
            }
        }
    }
    let mut d = format!("{checks} tail checks, {} violations", bad.len());
    if let Some(f) = bad.first() {
        d.push_str(&format!("; first: {f}"));
    }
    outcome(bad.is_empty(), d)
}

fn run_binary(args: &[&str], config: &str, threads: &str, dir: &std::path::Path, tag: &str) -> Result<String, String> {
    let cfg_path = dir.join(format!("{tag}.config.json"));
    std::fs::write(&cfg_path, config).map_err(|e| e.to_string())?;
    let out_path = dir.join(format!("{tag}.t{threads}.json"));
    let status = Command::new(env!("CARGO_BIN_EXE_momsand"))
        .args(args)
        .arg("--config")
        .arg(&cfg_path)
        .arg("--out")
        .arg(&out_path)
        .env("MOMSAND_THREADS", threads)
        .stderr(std::process::Stdio::null())
        .status()
        .map_err(|e| e.to_string())?;
    if status.code().is_none() {
        return Err(format!("{tag}: killed"));
    }
    let text = std::fs::read_to_string(&out_path).map_err(|e| format!("{tag}: {e}"))?;
    Ok(text.lines().filter(|l| !l.trim_start().starts_with("\"wall_time_s\"")).collect::<Vec<_>>().join("\n"))
}

fn criterion_10() -> Outcome {
    let dir: PathBuf = std::env::temp_dir().join(format!("momsand-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let runs: [(&str, &[&str], &str); 6] = [
        ("certify", &["certify"], r#"{"dist":"twopoint:a=0.4,b=1.7,pa=0.45","p":2.5}"#),
        (
            "verify_exact",
            &["verify"],
            r#"{"dist":"twopoint:a=0.3,b=1.6,pa=0.5","p":0.5,"n":[10],"dim":2,"draws":5,"seed":11}"#,
        ),
        (
            "verify_mc",
            &["verify"],
            r#"{"dist":"lognormal:mu=0,sigma=0.5","p":2,"n":[30],"dim":3,"draws":3,"reps":50000,"seed":12}"#,
        ),
        ("riesz", &["riesz"], r#"{"seq":[4,16,64,256],"p":3,"draws":5,"reps":20000,"seed":13}"#),
        (
            "perpetuity",
            &["perpetuity"],
            r#"{"dist":"twopoint:a=0.5,b=1.5,pa=0.4","bdist":"uniform:lo=-1,hi=2","p":2,"n":[1,5,20],"reps":50000,"seed":14}"#,
        ),
        ("counterexample", &["counterexample"], r#"{"n":[10,100],"reps":200000,"seed":15}"#),
    ];
    let mut bad = Vec::new();
    for (tag, args, cfg) in runs {
        match (run_binary(args, cfg, "1", &dir, tag), run_binary(args, cfg, "4", &dir, tag)) {
            (Ok(a), Ok(b)) if a == b && !a.is_empty() => {}
            (Ok(_), Ok(_)) => bad.push(format!("{tag}: reports differ")),
            (Err(e), _) | (_, Err(e)) => bad.push(e),
        }
    }
    let _ = std::fs::remove_dir_all(&dir);
    let mut d = format!("{} commands, {} mismatches (threads 1 vs 4)", runs.len(), bad.len());
    if let Some(f) = bad.first() {
        d.push_str(&format!("; first: {f}"));
    }
    outcome(bad.is_empty(), d)
}

fn report(id: usize, name: &str, o: &Outcome) -> bool {
    println!("criterion {id:>2} {:<34} {}  {}", name, if o.pass { "PASS" } else { "FAIL" }, o.detail);
    o.pass
}

fn main() {
    let specs = random_two_points(2024);
    let coeffs = random_coefficient_sets(4242);

    let t = Instant::now();
    let small = certify_all(&specs, &SMALL_PS);
    let small_certify = t.elapsed();
    let t = Instant::now();
    let large = certify_all(&specs, &LARGE_PS);
    let large_certify = t.elapsed();

    let mut all = true;
    all &= report(1, "sandwich, small p, exact", &timed_sandwich(&small, &coeffs, false, LIMIT_SMALL_P, small_certify));
    all &= report(2, "sandwich, large p, exact", &timed_sandwich(&large, &coeffs, true, LIMIT_LARGE_P, large_certify));
    all &= report(3, "p = 1 nonnegative equality", &criterion_3());
    all &= report(4, "random-sign counterexample", &criterion_4());
    all &= report(5, "Riesz product integrals", &criterion_5());
    all &= report(6, "torus vs product-path coherence", &criterion_6());
    all &= report(7, "constant formulas and k-minimality", &criterion_7());
    all &= report(8, "perpetuity bracket", &criterion_8());
    all &= report(9, "tail bounds", &criterion_9(&small, &large, &coeffs));
    all &= report(10, "determinism across thread counts", &criterion_10());
    if !all {
        std::process::exit(1);
    }
}
