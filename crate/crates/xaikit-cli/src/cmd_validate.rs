//! `xaikit validate`: the built-in oracle suite. Exact-Shapley cross-checks,
//! the exhaustive-grid counterfactual oracle, the linear-model saliency
//! ranking oracle, and the metric identities. Nonzero exit on any failure.
//!
//! Setting `XAIKIT_VALIDATE_CORRUPT=1` injects a corrupted kernel weight
//! into the Shapley cross-check (a negative control proving the check can
//! fail).

use std::path::PathBuf;
use std::time::Instant;

use clap::Args;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use xaikit::counterfactual::{self, CfGoal, SolverConfig};
use xaikit::lime::{self, LimeConfig};
use xaikit::metrics;
use xaikit::model::{
    predict_checked, CountingModel, Dataset, FeatureDomain, FeatureSpec, FeatureVector,
    OutputVector,
};
use xaikit::models::{LinearModel, SumModel};
use xaikit::shap::{self, ShapConfig};

use crate::common::{runtime, to_value, CliResult, Report};

#[derive(Args, Debug)]
pub struct ValidateArgs {
    /// Report file (stdout table is always printed)
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Serialize)]
struct OracleResult {
    name: String,
    passed: bool,
    detail: String,
}

fn fv(values: &[f64]) -> FeatureVector {
    FeatureVector::from_numeric_slice(values).unwrap()
}

fn numeric_dataset(rows: Vec<Vec<f64>>, lo: f64, hi: f64) -> Dataset {
    let m = rows[0].len();
    let schema = FeatureDomain::new(
        (0..m)
            .map(|i| FeatureSpec::numeric(format!("f{i}"), lo, hi))
            .collect(),
    )
    .unwrap();
    Dataset::new(schema, rows.iter().map(|r| fv(r)).collect(), None).unwrap()
}

fn shapley_cross_check(seed: u64, corrupt: bool) -> OracleResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let m = rng.random_range(2..=5usize);
        let model = LinearModel::new(
            (0..m).map(|_| rng.random_range(-3.0..3.0)).collect(),
            rng.random_range(-1.0..1.0),
        );
        let x = fv(&(0..m).map(|_| rng.random_range(-4.0..4.0)).collect::<Vec<_>>());
        let rows: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..m).map(|_| rng.random_range(-4.0..4.0)).collect())
            .collect();
        let bg = numeric_dataset(rows, -10.0, 10.0);
        let kernel = match shap::explain(&model, &x, &bg, &ShapConfig::default()) {
            Ok(e) => e,
            Err(e) => {
                return OracleResult {
                    name: "exact-shapley-cross-check".into(),
                    passed: false,
                    detail: format!("kernel solver failed: {e}"),
                }
            }
        };
        let mut phi = kernel.outputs[0].phi.clone();
        if corrupt {
            // Test fixture: simulate a broken kernel weight.
            phi[0] *= 1.5;
        }
        let exact = match metrics::ground_truth_shapley(&model, &x, &bg, 0) {
            Ok(v) => v,
            Err(e) => {
                return OracleResult {
                    name: "exact-shapley-cross-check".into(),
                    passed: false,
                    detail: format!("permutation oracle failed: {e}"),
                }
            }
        };
        for (a, b) in phi.iter().zip(&exact) {
            worst = worst.max((a - b).abs());
        }
    }
    OracleResult {
        name: "exact-shapley-cross-check".into(),
        passed: worst <= 1e-6,
        detail: format!("max |kernel - permutation| = {worst:.3e}"),
    }
}

fn grid_cf_oracle(seed: u64) -> OracleResult {
    // Two bounded 2-feature problems scanned exhaustively with hand-rolled
    // scoring, compared against the tabu search at the desk budget.
    struct Problem {
        model: LinearModel,
        x: [f64; 2],
        goal: f64,
        epsilon: f64,
    }
    let problems = [
        Problem {
            model: LinearModel::new(vec![1.0, 1.0], 0.0),
            x: [8.0, 8.0],
            goal: 4.0,
            epsilon: 0.05,
        },
        Problem {
            model: LinearModel::new(vec![2.0, -1.0], 0.0),
            x: [2.8, 9.0],
            goal: 0.0,
            epsilon: 0.1,
        },
    ];
    for (idx, p) in problems.iter().enumerate() {
        let mut best = f64::NEG_INFINITY;
        for i in 0..100 {
            for j in 0..100 {
                let a = i as f64 * 0.1;
                let b = j as f64 * 0.1;
                let f = p.model.raw(&[a, b]);
                if (f - p.goal).abs() > p.epsilon {
                    continue;
                }
                let d0 = (a - p.x[0]).abs();
                let d1 = (b - p.x[1]).abs();
                let changed = (d0 > 1e-9) as u32 + (d1 > 1e-9) as u32;
                best = best.max(-(d0 + d1) - changed as f64);
            }
        }
        let domain = FeatureDomain::numeric(&[("f0", 0.0, 10.0), ("f1", 0.0, 10.0)]).unwrap();
        let goal = CfGoal::new(OutputVector::single("y", p.goal), p.epsilon);
        let result = counterfactual::search(
            &p.model,
            &fv(&p.x),
            &domain,
            &goal,
            &SolverConfig {
                seed,
                stall_window: 10_000,
                ..SolverConfig::desk()
            },
            None,
        );
        let failed = match result {
            Ok(r) => !r.valid || r.score.soft < 1.05 * best,
            Err(_) => true,
        };
        if failed {
            return OracleResult {
                name: "grid-cf-oracle".into(),
                passed: false,
                detail: format!("problem {idx}: search missed the grid optimum {best:.3}"),
            };
        }
    }
    OracleResult {
        name: "grid-cf-oracle".into(),
        passed: true,
        detail: "2 problems within 5% of the exhaustive-grid optimum".into(),
    }
}

fn lime_ranking_oracle(seed: u64) -> OracleResult {
    let model = LinearModel::new(vec![5.0, 0.0, 1.0], 0.0);
    let x = fv(&[2.0, 2.1, 1.9]);
    let domain = FeatureDomain::numeric(&[
        ("f0", -1e6, 1e6),
        ("f1", -1e6, 1e6),
        ("f2", -1e6, 1e6),
    ])
    .unwrap();
    let mut hits = 0;
    for s in 0..20 {
        let config = LimeConfig::with_seed(seed + s);
        match lime::explain(&model, &x, 0, &config, &domain) {
            Ok(saliency) if saliency.ranking() == vec![0, 2, 1] => hits += 1,
            _ => {}
        }
    }
    OracleResult {
        name: "lime-linear-ranking".into(),
        passed: hits >= 17,
        detail: format!("coefficient-magnitude ranking correct in {hits}/20 runs"),
    }
}

fn metric_identities() -> OracleResult {
    let model = LinearModel::new(vec![3.0, 1.0, 2.0], 0.5);
    let data = numeric_dataset(
        vec![vec![1.0, 4.0, 2.0], vec![3.0, 0.0, 5.0], vec![2.0, 2.0, 1.0]],
        -100.0,
        100.0,
    );
    let x = fv(&[5.0, 1.0, 7.0]);
    let means = data.column_means().unwrap();
    let w: Vec<f64> = (0..3)
        .map(|i| model.weights[i] * (x.numeric(i).unwrap() - means[i]))
        .collect();
    let faithful = metrics::faithfulness(
        &w,
        &model,
        &x,
        metrics::MarginalEstimator::Exclusion(metrics::Replacement::DatasetMean),
        &data,
    );
    let domain = FeatureDomain::numeric(&[
        ("f0", -100.0, 100.0),
        ("f1", -100.0, 100.0),
        ("f2", -100.0, 100.0),
    ])
    .unwrap();
    let infid = metrics::infidelity(
        &model.weights.clone(),
        &model,
        &x,
        &domain,
        &metrics::InfidelityConfig::default(),
    );
    let sparsity = metrics::cf_sparsity(&[(x.clone(), x.clone())]);
    let passed = matches!(faithful, Ok(r) if (r - 1.0).abs() <= 1e-9)
        && matches!(infid, Ok(v) if v <= 1e-9)
        && matches!(sparsity, Ok(v) if v == 1.0);
    OracleResult {
        name: "metric-identities".into(),
        passed,
        detail: "faithfulness = 1, linear infidelity = 0, trivial sparsity = 1".into(),
    }
}

fn summation_probe() -> OracleResult {
    let x = fv(&[1.0, 2.0, 3.0, 4.0]);
    let bg = numeric_dataset(vec![vec![0.0; 4]], -10.0, 10.0);
    let counting = CountingModel::new(&SumModel);
    let ok = match shap::explain(&counting, &x, &bg, &ShapConfig::default()) {
        Ok(e) => {
            let out = &e.outputs[0];
            out.null_output.abs() <= 1e-6
                && out
                    .phi
                    .iter()
                    .zip([1.0, 2.0, 3.0, 4.0])
                    .all(|(p, want)| (p - want).abs() <= 1e-6)
        }
        Err(_) => false,
    };
    let _ = predict_checked(&counting, std::slice::from_ref(&x));
    OracleResult {
        name: "summation-zero-background".into(),
        passed: ok,
        detail: "null output 0, phi = input values".into(),
    }
}

pub fn run_validate(args: &ValidateArgs) -> CliResult<()> {
    let start = Instant::now();
    let seed = crate::common::resolve_seed(args.seed, &serde_json::Value::Null);
    let corrupt = std::env::var("XAIKIT_VALIDATE_CORRUPT").is_ok();

    let results = vec![
        summation_probe(),
        shapley_cross_check(seed, corrupt),
        grid_cf_oracle(seed),
        lime_ranking_oracle(seed),
        metric_identities(),
    ];

    println!("{:<32} {:<6} detail", "oracle", "status");
    for r in &results {
        println!(
            "{:<32} {:<6} {}",
            r.name,
            if r.passed { "PASS" } else { "FAIL" },
            r.detail
        );
    }
    let all_passed = results.iter().all(|r| r.passed);

    let report = Report::new(
        "validate",
        serde_json::json!({ "seed": seed, "corrupt_fixture": corrupt }),
        Vec::new(),
        serde_json::json!({
            "oracles": to_value(&results),
            "all_passed": all_passed,
        }),
        start.elapsed().as_millis(),
    );
    if args.out.is_some() {
        report.write(&args.out)?;
    }
    if all_passed {
        Ok(())
    } else {
        Err(runtime("oracle suite failed"))
    }
}
