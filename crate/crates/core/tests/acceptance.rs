//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line per
//! criterion and exits non-zero when any criterion fails.
//!
//! Run alone with `cargo test -p setcal-core --test acceptance`.

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use setcal::calibration::{calibrate_threshold, compute_mrl, prediction_set, set_loss, LambdaGrid};
use setcal::evaluation::{
    deduplicate_set, evaluate, split_records, sweep_budget, trial_seed, EvalConfig,
};
use setcal::scoring::{
    avg_similarity, base_quality, cluster_candidates, consensus_strength, prescored, z_normalize,
    ScoringConfig,
};
use setcal::synthetic::{brute_force_lambda, brute_force_mrl, generate, OracleConfig, ScoreModel};
use setcal::{AdmissionRule, Candidate, CandidateRecord, ScoredRecord};

const SEED: u64 = 10;

struct Verdict {
    ok: bool,
    detail: String,
}

impl Verdict {
    fn new(ok: bool, detail: impl Into<String>) -> Self {
        Self {
            ok,
            detail: detail.into(),
        }
    }
}

fn oracle(n: usize, k: usize, p_adm: f64, seed: u64) -> Vec<ScoredRecord> {
    let cfg = OracleConfig {
        n_records: n,
        k,
        p_adm,
        score_model: ScoreModel::PrescoredBeta,
        seed,
        ..Default::default()
    };
    prescored(generate(&cfg).expect("valid oracle config")).expect("prescored records")
}

fn alphas_tenth_to_half() -> Vec<f64> {
    (2..=10).map(|i| i as f64 / 20.0).collect()
}

fn within_runtime(start: Instant, limit: Duration, v: Verdict) -> Verdict {
    let elapsed = start.elapsed();
    Verdict::new(
        v.ok && elapsed < limit,
        format!(
            "{}; {:.2}s (limit {}s)",
            v.detail,
            elapsed.as_secs_f64(),
            limit.as_secs()
        ),
    )
}

/// Fresh exchangeable draws per trial: 500 calibration + 500 test records.
fn theorem_monte_carlo() -> Verdict {
    let start = Instant::now();
    let rule = AdmissionRule::default();
    let grid = LambdaGrid::default();
    let alphas = alphas_tenth_to_half();
    let trials = 100;

    // per trial, per alpha: Some(test miscoverage) when alpha >= alpha_feasible
    let per_trial: Vec<Vec<Option<f64>>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let recs = oracle(1000, 20, 0.35, trial_seed(SEED, t));
            let (cal, test) = split_records(&recs, 0.5, trial_seed(SEED ^ 0xA5A5, t)).unwrap();
            alphas
                .iter()
                .map(|&alpha| {
                    let out = calibrate_threshold(&cal, alpha, &grid, &rule).unwrap();
                    if alpha < out.alpha_feasible {
                        return None;
                    }
                    let lam = out.lambda_hat.expect("feasible by alpha_feasible");
                    let misses: usize = test.iter().map(|r| set_loss(r, lam, &rule) as usize).sum();
                    Some(misses as f64 / test.len() as f64)
                })
                .collect()
        })
        .collect();

    let mut ok = true;
    let mut parts = Vec::new();
    for (ai, &alpha) in alphas.iter().enumerate() {
        let tested: Vec<f64> = per_trial.iter().filter_map(|row| row[ai]).collect();
        if tested.is_empty() {
            continue;
        }
        let mean = tested.iter().sum::<f64>() / tested.len() as f64;
        ok &= mean <= alpha + 0.02;
        parts.push(format!("α={alpha:.2}:{mean:.4}"));
    }
    ok &= !parts.is_empty();
    within_runtime(
        start,
        Duration::from_secs(30),
        Verdict::new(ok, format!("mean test miscoverage {}", parts.join(" "))),
    )
}

fn infeasible_regime() -> Verdict {
    let start = Instant::now();
    // (1 - p)^20 = 0.3
    let p_adm = 1.0 - 0.3f64.powf(1.0 / 20.0);
    let recs = oracle(1000, 20, p_adm, SEED);
    let cfg = EvalConfig {
        alpha_grid: vec![0.1],
        trials: 100,
        ..Default::default()
    };
    let report = evaluate(&recs, &cfg).unwrap();
    let all_infeasible = report
        .rows
        .iter()
        .all(|r| !r.feasible && r.lambda_hat.is_none());
    let s = report.summary_for(0.1).unwrap();
    let target = 1.0 - s.alpha_l.mean;
    let cov = s.coverage.mean;
    let ok = all_infeasible && (cov - target).abs() <= 0.03 && cov < 1.0 - 0.1;
    within_runtime(
        start,
        Duration::from_secs(30),
        Verdict::new(
            ok,
            format!(
                "infeasible in {}/{} trials; mean coverage {cov:.4} vs 1-α_l {target:.4}, 1-α 0.9",
                report.rows.iter().filter(|r| !r.feasible).count(),
                report.rows.len()
            ),
        ),
    )
}

fn mrl_closed_form() -> Verdict {
    let start = Instant::now();
    let recs = oracle(2000, 10, 0.2, SEED);
    let rule = AdmissionRule::default();
    let alpha_l = compute_mrl(&recs, &rule).unwrap().alpha_l;
    let q = 0.8f64.powi(10);
    let tol = 3.0 * (q * (1.0 - q) / 2000.0).sqrt();
    within_runtime(
        start,
        Duration::from_secs(5),
        Verdict::new(
            (alpha_l - q).abs() <= tol,
            format!("α_l {alpha_l:.5} vs {q:.5} ± {tol:.5}"),
        ),
    )
}

fn random_fixture(rng: &mut ChaCha8Rng) -> Vec<ScoredRecord> {
    let n = rng.random_range(1..=50);
    (0..n)
        .map(|i| {
            let k = rng.random_range(1..=5);
            // scores on a 0.01 lattice so that thresholds tie exactly
            let cands = (0..k)
                .map(|_| {
                    Candidate::with_score(
                        rng.random_range(0..=100) as f64 / 100.0,
                        rng.random_range(0..=100) as f64 / 100.0,
                    )
                })
                .collect();
            ScoredRecord::from_prescored(CandidateRecord::new(format!("f{i}"), cands)).unwrap()
        })
        .collect()
}

fn oracle_equivalence() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let grid = LambdaGrid::default();
    let fixtures = 500;
    let mut mismatches = 0;
    let mut infeasible = 0;
    for _ in 0..fixtures {
        let fx = random_fixture(&mut rng);
        let raw: Vec<CandidateRecord> = fx.iter().map(|r| r.record().clone()).collect();
        let rule = AdmissionRule::new(rng.random_range(1..=9) as f64 / 10.0).unwrap();
        let alpha = rng.random_range(1..=99) as f64 / 100.0;
        let fast = calibrate_threshold(&fx, alpha, &grid, &rule).unwrap();
        let slow = brute_force_lambda(&raw, alpha, &grid, &rule);
        infeasible += usize::from(slow.is_none());
        if fast.lambda_hat != slow
            || compute_mrl(&fx, &rule).unwrap().alpha_l != brute_force_mrl(&raw, &rule)
        {
            mismatches += 1;
        }
    }
    within_runtime(
        start,
        Duration::from_secs(5),
        Verdict::new(
            mismatches == 0,
            format!("{fixtures} fixtures ({infeasible} infeasible), {mismatches} mismatches"),
        ),
    )
}

fn scored_record_strategy() -> impl Strategy<Value = ScoredRecord> {
    (1usize..=6).prop_flat_map(|k| {
        prop::collection::vec((0u32..=100, 0u32..=100), k).prop_map(|v| {
            let cands = v
                .into_iter()
                .map(|(s, f)| Candidate::with_score(s as f64 / 100.0, f as f64 / 100.0))
                .collect();
            ScoredRecord::from_prescored(CandidateRecord::new("m", cands)).unwrap()
        })
    })
}

fn run_property<S: Strategy>(
    name: &str,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    let mut runner = TestRunner::new(Config {
        cases: 1000,
        failure_persistence: None,
        ..Config::default()
    });
    runner
        .run(&strategy, test)
        .map_err(|e| format!("{name}: {e}"))
}

fn monotonicity_suite() -> Verdict {
    let rule = AdmissionRule::default();
    let grid = LambdaGrid::default();
    let lambda = || (0u32..=100).prop_map(|i| i as f64 / 100.0);
    let mut failures = Vec::new();

    let nesting = run_property(
        "set nesting",
        (scored_record_strategy(), lambda(), lambda()),
        |(r, a, b)| {
            let (lo, hi) = (a.min(b), a.max(b));
            let small = prediction_set(&r, lo, &rule);
            let big = prediction_set(&r, hi, &rule);
            prop_assert!(small.indices.iter().all(|j| big.indices.contains(j)));
            Ok(())
        },
    );
    let loss = run_property(
        "set_loss non-increasing",
        (scored_record_strategy(), lambda(), lambda()),
        |(r, a, b)| {
            let (lo, hi) = (a.min(b), a.max(b));
            prop_assert!(set_loss(&r, lo, &rule) >= set_loss(&r, hi, &rule));
            Ok(())
        },
    );
    let lambda_hat = run_property(
        "λ̂ non-increasing in α",
        (
            prop::collection::vec(scored_record_strategy(), 1..40),
            0.01f64..0.99,
            0.01f64..0.99,
        ),
        |(recs, a, b)| {
            let (lo, hi) = (a.min(b), a.max(b));
            let l1 = calibrate_threshold(&recs, lo, &grid, &rule)
                .unwrap()
                .lambda_hat;
            let l2 = calibrate_threshold(&recs, hi, &grid, &rule)
                .unwrap()
                .lambda_hat;
            if let (Some(l1), Some(l2)) = (l1, l2) {
                prop_assert!(l1 >= l2);
            }
            // feasibility is monotone too
            prop_assert!(l1.is_none() || l2.is_some());
            Ok(())
        },
    );
    let apss = run_property(
        "APSS non-increasing in α",
        (
            prop::collection::vec(scored_record_strategy(), 4..30),
            0.01f64..0.99,
            0.01f64..0.99,
            any::<u64>(),
        ),
        |(recs, a, b, seed)| {
            prop_assume!(a != b);
            let cfg = EvalConfig {
                alpha_grid: vec![a.min(b), a.max(b)],
                trials: 1,
                seed,
                ..Default::default()
            };
            let rep = evaluate(&recs, &cfg).unwrap();
            prop_assert!(rep.rows[0].apss >= rep.rows[1].apss);
            Ok(())
        },
    );
    let attain = run_property(
        "attainability non-decreasing in K",
        prop::collection::vec(
            prop::collection::vec(0u32..=100, 6).prop_map(|v| {
                CandidateRecord::new(
                    "k",
                    v.into_iter()
                        .map(|s| Candidate::new(s as f64 / 100.0))
                        .collect(),
                )
            }),
            1..30,
        ),
        |recs| {
            let sweep = sweep_budget(&recs, &EvalConfig::default(), &[1, 2, 3, 4, 5, 6]).unwrap();
            let att: Vec<f64> = sweep.values().map(|p| p.attainability).collect();
            prop_assert!(att.windows(2).all(|w| w[0] <= w[1]));
            let al: Vec<f64> = sweep.values().map(|p| p.alpha_l).collect();
            prop_assert!(al.windows(2).all(|w| w[0] >= w[1]));
            Ok(())
        },
    );
    for r in [nesting, loss, lambda_hat, apss, attain] {
        if let Err(e) = r {
            failures.push(e);
        }
    }
    Verdict::new(
        failures.is_empty(),
        if failures.is_empty() {
            "5 properties x 1000 cases, 0 counterexamples".to_string()
        } else {
            failures.join("; ")
        },
    )
}

fn scoring_unit_vector() -> Verdict {
    let tol = 1e-4;
    let s = vec![
        vec![1.0, 0.4, 0.6],
        vec![0.4, 1.0, 0.2],
        vec![0.6, 0.2, 1.0],
    ];
    let avg = avg_similarity(&s).unwrap();
    let avg_ok = avg
        .iter()
        .zip([0.5, 0.3, 0.4])
        .all(|(g, e)| (g - e).abs() <= tol);

    let z = z_normalize(&[1.0, 2.0, 3.0], 1e-8);
    let z_ok = (z[0] + 1.2247).abs() <= tol && z[1].abs() <= tol && (z[2] - 1.2247).abs() <= tol;

    let q = base_quality(&[z[2]], &[0.0], &ScoringConfig::default()).unwrap()[0];
    let q_ok = (q - 0.6485).abs() <= tol;

    let mut e: Vec<Vec<bool>> = (0..4).map(|j| (0..4).map(|c| j == c).collect()).collect();
    for (a, b) in [(0, 1), (1, 2)] {
        e[a][b] = true;
        e[b][a] = true;
    }
    let cs = consensus_strength(&cluster_candidates(&e).unwrap(), 1.0)[3];
    let cs_ok = (cs - 1.0 / 3.0).abs() <= tol;

    let f = cs * q;
    let f_ok = (f - 0.2162).abs() <= tol;
    Verdict::new(
        avg_ok && z_ok && q_ok && cs_ok && f_ok,
        format!(
            "AvgSim {avg:.4?}, z {:.4}/{:.4}, Q {q:.4}, CS {cs:.4}, F {f:.4}",
            z[0], z[2]
        ),
    )
}

fn deduplication() -> Verdict {
    // hand fixture: A~B at 0.95, f(A) = 0.8 > f(B) = 0.7, C apart
    let mut rec = CandidateRecord::new(
        "abc",
        vec![
            Candidate::with_score(1.0, 0.8),
            Candidate::with_score(0.0, 0.7),
            Candidate::with_score(0.0, 0.6),
        ],
    );
    rec.sim_matrix = Some(vec![
        vec![1.0, 0.95, 0.2],
        vec![0.95, 1.0, 0.3],
        vec![0.2, 0.3, 1.0],
    ]);
    let abc = ScoredRecord::from_prescored(rec).unwrap();
    let hand_ok = deduplicate_set(&abc, &[0, 1, 2], 0.9).unwrap() == vec![0, 2];

    // full-feature oracle, scored, evaluated with dedup at 0.9
    let cfg = OracleConfig {
        n_records: 400,
        k: 10,
        p_adm: 0.3,
        score_model: ScoreModel::FullFeature,
        noise: 0.15,
        seed: SEED,
        ..Default::default()
    };
    let recs = setcal::scoring::score_records(&generate(&cfg).unwrap(), &ScoringConfig::default())
        .unwrap();
    let eval = EvalConfig {
        alpha_grid: alphas_tenth_to_half(),
        trials: 20,
        dedup_threshold: Some(0.9),
        ..Default::default()
    };
    let rep = evaluate(&recs, &eval).unwrap();
    let rows_ok = rep
        .rows
        .iter()
        .all(|r| r.apss_dedup.is_some_and(|d| d <= r.apss));

    let rule = AdmissionRule::default();
    let mut nonempty_ok = true;
    let mut checked = 0usize;
    for r in &recs {
        for &lam in &[0.2, 0.5, 0.8, 1.0] {
            let set = prediction_set(r, lam, &rule);
            let kept = deduplicate_set(r, &set.indices, 0.9).unwrap();
            nonempty_ok &= kept.is_empty() == set.is_empty() && kept.len() <= set.len();
            checked += 1;
        }
    }
    let mean_apss: f64 =
        rep.summaries.iter().map(|s| s.apss.mean).sum::<f64>() / rep.summaries.len() as f64;
    let mean_dd: f64 = rep
        .summaries
        .iter()
        .map(|s| s.apss_dedup.unwrap().mean)
        .sum::<f64>()
        / rep.summaries.len() as f64;
    Verdict::new(
        hand_ok && rows_ok && nonempty_ok,
        format!(
            "hand {{A,B,C}}->{{A,C}}: {hand_ok}; {} rows apss_dedup<=apss: {rows_ok}; {checked} sets non-empty preserved: {nonempty_ok}; mean APSS {mean_apss:.3} -> {mean_dd:.3}",
            rep.rows.len()
        ),
    )
}

fn determinism_and_split_robustness() -> Verdict {
    let start = Instant::now();
    let recs = oracle(4000, 20, 0.35, SEED);
    let base = EvalConfig {
        alpha_grid: alphas_tenth_to_half(),
        trials: 100,
        ..Default::default()
    };
    let first = evaluate(&recs, &base).unwrap().to_csv();
    let second = evaluate(&recs, &base).unwrap();
    let identical = first.as_bytes() == second.to_csv().as_bytes();

    let tenth = evaluate(
        &recs,
        &EvalConfig {
            split_ratio: 0.1,
            ..base.clone()
        },
    )
    .unwrap();
    let mut worst = 0.0f64;
    let mut common = 0;
    let mut diffs = BTreeMap::new();
    for (a, b) in second.summaries.iter().zip(&tenth.summaries) {
        // common feasible regime: every trial feasible under both ratios
        if a.feasible_trials == a.trials && b.feasible_trials == b.trials {
            let d = (a.coverage.mean - b.coverage.mean).abs();
            worst = worst.max(d);
            common += 1;
            diffs.insert(format!("{:.2}", a.alpha), format!("{d:.4}"));
        }
    }
    within_runtime(
        start,
        Duration::from_secs(60),
        Verdict::new(
            identical && common > 0 && worst <= 0.03,
            format!(
                "byte-identical CSVs: {identical}; ratio 0.5 vs 0.1 max |Δcoverage| {worst:.4} over {common} α"
            ),
        ),
    )
}

fn main() -> ExitCode {
    let criteria: Vec<(&str, fn() -> Verdict)> = vec![
        ("coverage guarantee (Monte Carlo)", theorem_monte_carlo),
        ("infeasible-regime violation", infeasible_regime),
        ("risk floor closed form", mrl_closed_form),
        ("oracle equivalence", oracle_equivalence),
        ("monotonicity suite", monotonicity_suite),
        ("scoring worked example", scoring_unit_vector),
        ("deduplication", deduplication),
        (
            "determinism and split-ratio robustness",
            determinism_and_split_robustness,
        ),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let v = run();
        failed += usize::from(!v.ok);
        println!(
            "[{}] {name}: {}",
            if v.ok { "PASS" } else { "FAIL" },
            v.detail
        );
    }
    if failed == 0 {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failed} criteria failed");
        ExitCode::FAILURE
    }
}
