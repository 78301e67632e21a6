use std::process::{Command, Output};

use momsand_cli::{run, CommandKind, ExperimentConfig, RunReport};
use proptest::prelude::*;
use serde_json::Value;

fn momsand(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_momsand")).args(args).output().expect("binary runs")
}

fn report(out: &Output) -> RunReport {
    serde_json::from_slice(&out.stdout).expect("json report on stdout")
}

#[test]
fn moments_examples() {
    let out = momsand(&["moments", "--dist", "riesz", "--q", "1,2"]);
    assert_eq!(out.status.code(), Some(0));
    let r = report(&out);
    let vals: Vec<f64> = r.reports.iter().map(|m| m["value"].as_f64().unwrap()).collect();
    assert!((vals[0] - 1.0).abs() < 1e-12 && (vals[1] - 1.5).abs() < 1e-12, "{vals:?}");

    let out = momsand(&["moments", "--dist", "twopoint:a=0.5,b=1.5,pa=0.5", "--q", "1"]);
    assert_eq!(report(&out).reports[0]["value"].as_f64().unwrap(), 1.0);
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(momsand(&["moments", "--dist", "twopoint:a=0.5"]).status.code(), Some(2));
    assert_eq!(momsand(&["moments", "--dist", "cauchy:x=1"]).status.code(), Some(2));
    assert_eq!(momsand(&["certify", "--dist", "riesz"]).status.code(), Some(2));
    assert_eq!(momsand(&["verify", "--p", "2", "--dist", "riesz", "--norm", "l7"]).status.code(), Some(2));
    assert_eq!(momsand(&["frobnicate"]).status.code(), Some(2));
    let bad_threads = Command::new(env!("CARGO_BIN_EXE_momsand"))
        .args(["moments", "--dist", "riesz"])
        .env("MOMSAND_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(bad_threads.status.code(), Some(2));
}

#[test]
fn certify_small_p_has_unit_upper_constant() {
    let out = momsand(&["certify", "--dist", "twopoint:a=0.5,b=1.5,pa=0.5", "--p", "0.5"]);
    assert_eq!(out.status.code(), Some(0));
    let r = report(&out);
    assert_eq!(r.bundles[0].upper_c, 1.0);
    assert!(r.bundles[0].lower_c > 0.0);
}

#[test]
fn certify_degenerate_exits_three() {
    let out = momsand(&["certify", "--dist", "rademacher", "--p", "0.5"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("degenerate"));
    assert_eq!(momsand(&["verify", "--dist", "rademacher", "--p", "4"]).status.code(), Some(3));
}

#[test]
fn certify_large_p_prints_witness() {
    let out = momsand(&["certify", "--dist", "twopoint:a=0.4,b=1.7,pa=0.45", "--p", "2.5"]);
    assert_eq!(out.status.code(), Some(0));
    let r = report(&out);
    let w = &r.bundles[0].k_witness;
    assert!(w.check());
    if w.k > 1 {
        assert!(w.ln_lhs_prev.unwrap() > w.inequality.ln_rhs);
    }
    assert!(String::from_utf8_lossy(&out.stderr).contains("ln lhs(k-1)"));
}

#[test]
fn verify_twenty_draws_all_pass() {
    let out = momsand(&["verify", "--dist", "twopoint:a=0.5,b=1.5,pa=0.5", "--p", "0.5", "--draws", "20"]);
    assert_eq!(out.status.code(), Some(0));
    let r = report(&out);
    assert_eq!(r.summary.passed, 20);
    assert!(r.summary.min_ratio.unwrap() >= r.bundles[0].lower_c);
    assert_eq!(r.config.coeffs.as_deref(), Some("random:count=9,scale=1,seed=0"));
}

#[test]
fn verify_single_term_ratio_is_one() {
    let out = momsand(&["verify", "--dist", "twopoint:a=0.5,b=1.5,pa=0.5", "--p", "2", "--n", "0"]);
    assert_eq!(out.status.code(), Some(0));
    let r = report(&out);
    assert_eq!(r.summary.passed, 1);
    assert!((r.summary.min_ratio.unwrap() - 1.0).abs() < 1e-15);
}

#[test]
fn verify_explicit_coefficients_and_csv() {
    let dir = std::env::temp_dir().join(format!("momsand-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let csv = dir.join("samples.csv");
    let out = momsand(&[
        "verify",
        "--dist",
        "lognormal:mu=0,sigma=0.3",
        "--p",
        "2",
        "--dim",
        "2",
        "--coeffs",
        "-1,0.5,0.25,2,1,-1",
        "--reps",
        "2000",
        "--csv",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(&out);
    assert_eq!(r.reports[0]["n"], 2);
    assert_eq!(r.reports[0]["coefficients"].as_array().unwrap().len(), 3);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("draw,rep,value\n"));
    assert_eq!(text.lines().count(), 2001);
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn counterexample_is_a_documented_failure() {
    let out = momsand(&["counterexample", "--n", "10,40", "--reps", "100000"]);
    assert_eq!(out.status.code(), Some(1));
    let r = report(&out);
    let ratios: Vec<f64> = r.reports.iter().map(|x| x["ratio"].as_f64().unwrap()).collect();
    assert!(ratios[1] > 3.0 * ratios[0], "{ratios:?}");
}

#[test]
fn riesz_single_term() {
    let out = momsand(&["riesz", "--seq", "4,16,64", "--p", "2", "--term", "2"]);
    assert_eq!(out.status.code(), Some(0));
    let r = report(&out);
    let v = r.reports[1]["torus"]["value"].as_f64().unwrap();
    assert!((v - 2.25).abs() < 1e-12, "{v}");
}

#[test]
fn riesz_rejects_non_lacunary_for_comparison() {
    let out = momsand(&["riesz", "--seq", "2,4,8", "--p", "2", "--draws", "2"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn perpetuity_first_term_is_b_moment() {
    let out = momsand(&[
        "perpetuity",
        "--dist",
        "twopoint:a=0.5,b=1.5,pa=0.4",
        "--bdist",
        "twopoint:a=-1,b=2,pa=0.3",
        "--p",
        "2",
        "--n",
        "1",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let r = report(&out);
    let g = &r.reports[0];
    let middle = g["rows"][0]["middle"]["mean"].as_f64().unwrap();
    assert!((middle - g["b_moment"].as_f64().unwrap()).abs() < 1e-12);
    assert!((middle - 3.1).abs() < 1e-12);
}

#[test]
fn perpetuity_fixed_point_demo() {
    let out = momsand(&["perpetuity", "--fixed-point-demo", "--p", "2", "--lower-c", "0.01"]);
    assert_eq!(out.status.code(), Some(0));
    let r = report(&out);
    let demo = &r.reports[0];
    assert_eq!(demo["v"].as_f64().unwrap(), 2.0);
    assert_eq!(demo["exits"][0]["n_exit"], 401);
}

#[test]
fn flags_override_config_file() {
    let dir = std::env::temp_dir().join(format!("momsand-cfg-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("c.json");
    std::fs::write(&cfg, r#"{"dist":"riesz","q":[1,3]}"#).unwrap();
    let out = momsand(&["moments", "--config", cfg.to_str().unwrap(), "--q", "2"]);
    let r = report(&out);
    assert_eq!(r.config.q, Some(vec![2.0]));
    assert_eq!(r.config.dist.as_deref(), Some("riesz"));
    assert_eq!(r.config.command, Some(CommandKind::Moments));
    std::fs::write(&cfg, r#"{"dist":"riesz","colour":"red"}"#).unwrap();
    assert_eq!(momsand(&["moments", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn report_replays_from_its_own_config() {
    let cfg = ExperimentConfig {
        command: Some(CommandKind::Verify),
        dist: Some("twopoint:a=0.3,b=1.6,pa=0.5".into()),
        p: Some(1.5),
        draws: Some(3),
        ..Default::default()
    };
    let first = run(&cfg).unwrap().report;
    let replay = run(&first.config).unwrap().report;
    let strip = |r: &RunReport| {
        let mut v: Value = serde_json::to_value(r).unwrap();
        v.as_object_mut().unwrap().remove("wall_time_s");
        v
    };
    assert_eq!(strip(&first), strip(&replay));
}

fn opt<T: std::fmt::Debug + Clone>(s: impl Strategy<Value = T>) -> impl Strategy<Value = Option<T>> {
    proptest::option::of(s)
}

fn config_strategy() -> impl Strategy<Value = ExperimentConfig> {
    let kinds = prop_oneof![
        Just(CommandKind::Moments),
        Just(CommandKind::Certify),
        Just(CommandKind::Verify),
        Just(CommandKind::Riesz),
        Just(CommandKind::Perpetuity),
        Just(CommandKind::Counterexample),
    ];
    (
        (opt(kinds), opt("[a-z:=.,0-9]{0,20}"), opt(any::<f64>().prop_filter("finite", |x| x.is_finite()))),
        (opt(proptest::collection::vec(0usize..1000, 0..5)), opt(1usize..4), opt(any::<u64>())),
        (opt(proptest::collection::vec(-1e6f64..1e6, 0..4)), opt(proptest::collection::vec(1u64..1 << 20, 0..6))),
        (opt(any::<bool>()), opt(".{0,12}"), opt(0usize..10)),
    )
        .prop_map(|((command, dist, p), (n, dim, seed), (grid_a, seq), (fixed_point_demo, coeffs, term))| {
            ExperimentConfig {
                command,
                dist,
                p,
                n,
                dim,
                seed,
                grid_a,
                seq,
                fixed_point_demo,
                coeffs,
                term,
                ..Default::default()
            }
        })
}

proptest! {
    #[test]
    fn config_canonical_round_trip(cfg in config_strategy()) {
        let s = cfg.to_canonical();
        let back = ExperimentConfig::from_canonical(&s).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.to_canonical(), s);
    }
}
