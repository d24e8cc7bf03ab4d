mod common;

use std::process::Command;

use common::*;
use ibia::driver::{estimate_log_pr, estimate_with_evidence, Options};
use ibia::harness::{brute_force_log_pr, to_log10};
use ibia::model::to_uai;
use ibia::{Evidence, IbiaError, Model};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn generous_bound_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    for _ in 0..40 {
        let m = random_model(&mut rng, &SMALL);
        let est = estimate_log_pr(&m, &Options::with_bounds(m.num_vars() as f64 + 1.0, 3.0)).unwrap();
        assert_eq!(est.num_ctfs(), 1);
        let exact = to_log10(brute_force_log_pr(&m, 1 << 20).unwrap());
        assert!(close_log10(est.log10_pr, exact, 1e-9), "{} vs {exact}", est.log10_pr);
    }
}

#[test]
fn tight_bounds_end_in_one_tree() {
    let mut rng = ChaCha8Rng::seed_from_u64(52);
    for _ in 0..40 {
        let m = random_model(&mut rng, &SMALL);
        let opts = Options { verify: true, ..Options::with_bounds(5.0, 3.0) };
        let est = estimate_log_pr(&m, &opts).unwrap();
        let last = est.components[0].trace.records.last().unwrap();
        assert_eq!(last.trees, 1);
        assert_eq!(last.deferred, 0);
        let exact = brute_force_log_pr(&m, 1 << 20).unwrap();
        assert!(est.log10_pr.is_finite() || exact == f64::NEG_INFINITY, "exact {exact}");
    }
}

#[test]
fn evidence_and_components_combine() {
    let mut rng = ChaCha8Rng::seed_from_u64(53);
    for _ in 0..30 {
        let m = random_model(&mut rng, &SMALL);
        let mut ev = Evidence::new();
        for v in 0..m.num_vars() {
            if rng.random_bool(0.25) {
                ev = ev.observe(v, rng.random_range(0..m.cards()[v]));
            }
        }
        let est = estimate_with_evidence(&m, &ev, &Options::with_bounds(16.0, 3.0)).unwrap();
        let reduced = ibia::model::apply_evidence(&m, &ev).unwrap();
        let exact = to_log10(brute_force_log_pr(&reduced, 1 << 20).unwrap());
        assert!(close_log10(est.log10_pr, exact, 1e-9), "{} vs {exact}", est.log10_pr);
    }
}

#[test]
fn running_example_takes_two_forests() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let m = running_example(&mut rng);
    let opts = Options { verify: true, ..Options::with_bounds(4.0, 3.0) };
    let est = estimate_log_pr(&m, &opts).unwrap();
    assert_eq!(est.num_ctfs(), 2);
    let first = &est.components[0].trace.records[0];
    assert_eq!(first.deferred, 1);
    assert_eq!(first.interface_vars, scope_of("klo"));
}

#[test]
fn escalation_rescues_an_infeasible_bound() {
    // A 5-cycle of pairwise factors cannot close within size 2.
    let mut rng = ChaCha8Rng::seed_from_u64(54);
    let cards = vec![2; 5];
    let fs = (0..5).map(|i| random_factor(&mut rng, vec![i, (i + 1) % 5], &cards, 0.0)).collect();
    let m = Model::new(cards, fs).unwrap();
    let tight = Options::with_bounds(2.0, 1.0);
    assert!(matches!(estimate_log_pr(&m, &tight), Err(IbiaError::Infeasible(_))));
    let est = estimate_log_pr(&m, &Options { escalate: true, ..tight }).unwrap();
    assert_eq!(est.components[0].final_mcs_p, 3.0);
    let exact = to_log10(brute_force_log_pr(&m, 1 << 10).unwrap());
    assert!(est.log10_pr.is_finite() && (est.log10_pr - exact).abs() < 1.0);
}

#[test]
fn identical_runs_give_identical_traces() {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    for heuristic in [ibia::approx::Heuristic::MaxMi, ibia::approx::Heuristic::Random] {
        let m = random_model(&mut rng, &SMALL);
        let opts = Options { heuristic, seed: 9, ..Options::with_bounds(5.0, 3.0) };
        let a = estimate_log_pr(&m, &opts).unwrap().trace_json();
        let b = estimate_log_pr(&m, &opts).unwrap().trace_json();
        assert_eq!(a, b);
    }
}

fn ibia(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_ibia")).args(args).output().unwrap()
}

#[test]
fn cli_reports_and_exits_by_error_kind() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(56);
    let m = random_model(&mut rng, &SMALL);
    let model = dir.path().join("m.uai");
    std::fs::write(&model, to_uai(&m)).unwrap();
    let model = model.to_str().unwrap();
    let json = dir.path().join("out.json");

    let out = ibia(&["infer", model, "--mcs-p", "20", "--mcs-im", "3", "--json", json.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    let exact = to_log10(brute_force_log_pr(&m, 1 << 20).unwrap());
    assert!(close_log10(report["log10_pr"].as_f64().unwrap(), exact, 1e-9));
    assert!(report["wall_time_secs"].is_number());

    let oracle = ibia(&["oracle", model]);
    assert!(String::from_utf8_lossy(&oracle.stdout).contains(&format!("{exact:.6}")));

    let broken = dir.path().join("bad.uai");
    std::fs::write(&broken, "MARKOV\n2\n2 two\n").unwrap();
    assert_eq!(ibia(&["infer", broken.to_str().unwrap()]).status.code(), Some(3));
    assert_eq!(ibia(&["infer", model, "--mcs-p", "1", "--mcs-im", "0"]).status.code(), Some(4));

    let refs = dir.path().join("ref.csv");
    std::fs::write(&refs, format!("name,log10_pr\nm.uai,{exact}\n")).unwrap();
    let bench = ibia(&["bench", dir.path().to_str().unwrap(), "--ref", refs.to_str().unwrap(), "--mcs-p", "20"]);
    let table = String::from_utf8_lossy(&bench.stdout);
    assert!(table.lines().any(|l| l.starts_with("m.uai,") && l.contains(",0.000,")), "{table}");
}
