//! Release acceptance suite. Each test covers one criterion at its stated
//! tolerance and prints a single PASS line (visible with `--nocapture`);
//! failures abort with the offending numbers.

use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use xaikit::counterfactual::{self, CfGoal, SearchStrategy, SolverConfig};
use xaikit::lime::{self, LimeConfig};
use xaikit::metrics;
use xaikit::model::{
    predict_checked, BlackBoxModel, Dataset, Feature, FeatureDomain, FeatureSpec, FeatureVector,
    OutputVector,
};
use xaikit::models::{
    Activation, ConstantModel, CreditScorerModel, FixedMlpModel, LinearModel, MlpLayer, SumModel,
};
use xaikit::shap::{self, CfBackgroundConfig, ShapConfig};

fn fv(values: &[f64]) -> FeatureVector {
    FeatureVector::from_numeric_slice(values).unwrap()
}

fn wide_domain(m: usize) -> FeatureDomain {
    FeatureDomain::new(
        (0..m)
            .map(|i| FeatureSpec::numeric(format!("f{i}"), -1e6, 1e6))
            .collect(),
    )
    .unwrap()
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

fn report(id: &str, start: Instant, limit_secs: f64) {
    let elapsed = start.elapsed().as_secs_f64();
    assert!(
        elapsed < limit_secs,
        "criterion {id} exceeded its runtime budget: {elapsed:.1}s >= {limit_secs}s"
    );
    println!("criterion {id}: PASS ({elapsed:.2}s)");
}

#[test]
fn criterion_01_shap_zero_background_exactness() {
    let start = Instant::now();
    let x = fv(&[1.0, 2.0, 3.0, 4.0]);
    let bg = numeric_dataset(vec![vec![0.0, 0.0, 0.0, 0.0]], -10.0, 10.0);
    let explanation = shap::explain(&SumModel, &x, &bg, &ShapConfig::default()).unwrap();
    let out = &explanation.outputs[0];
    assert!(out.null_output.abs() <= 1e-6);
    for (phi, want) in out.phi.iter().zip([1.0, 2.0, 3.0, 4.0]) {
        assert!((phi - want).abs() <= 1e-6, "phi {phi} want {want}");
    }
    report("01 shap-zero-background", start, 1.0);
}

#[test]
fn criterion_02_shap_uniform_background_structure() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let rows: Vec<Vec<f64>> = (0..100)
        .map(|_| (0..4).map(|_| rng.random_range(0.0..10.0)).collect())
        .collect();
    let bg = numeric_dataset(rows, -1.0, 11.0);
    let x = fv(&[1.0, 2.0, 3.0, 4.0]);
    let explanation = shap::explain(&SumModel, &x, &bg, &ShapConfig::default()).unwrap();
    let out = &explanation.outputs[0];

    let means = bg.column_means().unwrap();
    let grand_total: f64 = means.iter().sum();
    assert!((out.null_output - grand_total).abs() <= 1e-6);
    assert!(
        out.null_output > 15.0 && out.null_output < 25.0,
        "null output {} should sit near 20",
        out.null_output
    );
    for i in 0..4 {
        let want = x.numeric(i).unwrap() - means[i];
        assert!((out.phi[i] - want).abs() <= 1e-6);
        assert!(out.phi[i] < 0.0, "phi[{i}] = {} should be negative", out.phi[i]);
    }
    report("02 shap-uniform-background", start, 5.0);
}

fn random_mlp(m: usize, rng: &mut ChaCha8Rng) -> FixedMlpModel {
    let hidden = rng.random_range(2..=4usize);
    let outputs = rng.random_range(1..=2usize);
    FixedMlpModel::new(vec![
        MlpLayer {
            rows: hidden,
            cols: m,
            weights: (0..hidden * m).map(|_| rng.random_range(-1.5..1.5)).collect(),
            bias: (0..hidden).map(|_| rng.random_range(-0.5..0.5)).collect(),
            activation: Activation::LeakyRelu,
        },
        MlpLayer {
            rows: outputs,
            cols: hidden,
            weights: (0..outputs * hidden)
                .map(|_| rng.random_range(-1.5..1.5))
                .collect(),
            bias: (0..outputs).map(|_| rng.random_range(-0.5..0.5)).collect(),
            activation: Activation::Logistic,
        },
    ])
    .unwrap()
}

#[test]
fn criterion_03_exact_shapley_equivalence() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..50 {
        let m = rng.random_range(2..=6usize);
        let model: Box<dyn BlackBoxModel> = if trial % 2 == 0 {
            Box::new(LinearModel::new(
                (0..m).map(|_| rng.random_range(-3.0..3.0)).collect(),
                rng.random_range(-1.0..1.0),
            ))
        } else {
            Box::new(random_mlp(m, &mut rng))
        };
        let x = fv(&(0..m).map(|_| rng.random_range(-4.0..4.0)).collect::<Vec<_>>());
        let rows: Vec<Vec<f64>> = (0..rng.random_range(3..=5usize))
            .map(|_| (0..m).map(|_| rng.random_range(-4.0..4.0)).collect())
            .collect();
        let bg = numeric_dataset(rows, -10.0, 10.0);

        let kernel = shap::explain(model.as_ref(), &x, &bg, &ShapConfig::default()).unwrap();
        for (o, out) in kernel.outputs.iter().enumerate() {
            let exact = metrics::ground_truth_shapley(model.as_ref(), &x, &bg, o).unwrap();
            for (a, b) in out.phi.iter().zip(&exact) {
                assert!(
                    (a - b).abs() <= 1e-6,
                    "trial {trial} output {o}: kernel {a} vs exact {b}"
                );
            }
        }
    }
    report("03 exact-shapley-equivalence", start, 60.0);
}

#[test]
fn criterion_04_local_accuracy_across_strategies() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for case in 0..200 {
        let m = rng.random_range(2..=4usize);
        let model: Box<dyn BlackBoxModel> = match case % 3 {
            0 => Box::new(SumModel),
            1 => Box::new(LinearModel::new(
                (0..m).map(|_| rng.random_range(-2.0..2.0)).collect(),
                rng.random_range(-1.0..1.0),
            )),
            _ => Box::new(random_mlp(m, &mut rng)),
        };
        let rows: Vec<Vec<f64>> = (0..15)
            .map(|_| (0..m).map(|_| rng.random_range(-5.0..5.0)).collect())
            .collect();
        let data = numeric_dataset(rows, -5.0, 5.0);
        let x = fv(&(0..m).map(|_| rng.random_range(-5.0..4.99)).collect::<Vec<_>>());

        let background = match case % 4 {
            0 => shap::background_random(&data, 6, case as u64).unwrap(),
            1 => shap::background_kmeans(&data, 4, case as u64).unwrap(),
            2 => {
                let reference = predict_checked(model.as_ref(), &data.rows()[..1])
                    .unwrap()
                    .remove(0);
                let mut config = CfBackgroundConfig::new(0.5);
                config.solver.max_evaluations = 1500;
                config.solver.seed = case as u64;
                shap::background_counterfactual(model.as_ref(), &data, &reference, 1, 2, &config)
                    .unwrap()
                    .dataset
            }
            _ => data.clone(),
        };

        let explanation =
            shap::explain(model.as_ref(), &x, &background, &ShapConfig::with_seed(case as u64))
                .unwrap();
        for out in &explanation.outputs {
            let total = out.null_output + out.phi.iter().sum::<f64>();
            assert!(
                (total - out.prediction).abs() <= 1e-6,
                "case {case}: local accuracy residual {}",
                (total - out.prediction).abs()
            );
        }
    }
    report("04 local-accuracy", start, 60.0);
}

#[test]
fn criterion_05_counterfactual_background_reference() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let rows: Vec<Vec<f64>> = (0..40)
        .map(|_| (0..3).map(|_| rng.random_range(0.0..10.0)).collect())
        .collect();
    let data = numeric_dataset(rows, 0.0, 10.0);
    let outputs = predict_checked(&SumModel, data.rows()).unwrap();
    let values: Vec<f64> = outputs.iter().map(|o| o.value(0)).collect();
    let range = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - values.iter().cloned().fold(f64::INFINITY, f64::min);
    let tolerance = 0.01 * range;
    let reference = OutputVector::single("sum", 5.0);

    for seed in 0..10 {
        let mut config = CfBackgroundConfig::new(tolerance);
        config.solver.seed = seed * 7919;
        let bg =
            shap::background_counterfactual(&SumModel, &data, &reference, 2, 3, &config).unwrap();
        let x = fv(&[9.0, 9.0, 9.0]);
        let explanation = shap::explain(&SumModel, &x, &bg.dataset, &ShapConfig::default()).unwrap();
        let phi0 = explanation.outputs[0].null_output;
        assert!(
            (phi0 - 5.0).abs() <= tolerance + 1e-9,
            "seed {seed}: phi0 {phi0} vs reference 5 (tolerance {tolerance})"
        );
    }
    report("05 cf-background-reference", start, 60.0);
}

#[test]
fn criterion_06_lime_oracle_ranking_and_penalty_spots() {
    let start = Instant::now();
    let model = LinearModel::new(vec![5.0, 0.0, 1.0], 0.0);
    let x = fv(&[2.0, 2.1, 1.9]);
    let domain = wide_domain(3);
    let mut hits = 0;
    for seed in 0..100 {
        let config = LimeConfig::with_seed(seed);
        let saliency = lime::explain(&model, &x, 0, &config, &domain).unwrap();
        if saliency.ranking() == vec![0, 2, 1] {
            hits += 1;
        }
    }
    assert!(hits >= 90, "ranking correct in only {hits}/100 seeded runs");

    // Balance penalty spot values, hand-evaluated.
    let bits = vec![vec![true], vec![true], vec![true], vec![true]];
    let classes = vec![true, false, true, false];
    let eta = lime::balance_penalty(&bits, &classes, 1, 0.01, 10.0);
    assert!((eta[0] - (0.11_f64).tanh()).abs() <= 1e-9);
    let bits = vec![vec![false; 10], vec![false; 10]];
    let classes = vec![true, false];
    let eta = lime::balance_penalty(&bits, &classes, 10, 0.01, 10.0);
    assert!((eta[0] - (2.01_f64).tanh()).abs() <= 1e-9);

    report("06 lime-oracle-ranking", start, 120.0);
}

#[test]
fn criterion_07_lime_adaptive_loop() {
    let start = Instant::now();
    let constant = ConstantModel::new(vec![1.0]);
    let x = fv(&[1.0, 2.0, 3.0, 4.0]);
    let config = LimeConfig {
        samples: 20,
        ..LimeConfig::with_seed(7)
    };
    let domain = wide_domain(4);
    let ds = lime::adaptive_sample(&constant, &x, 0, &config, &domain).unwrap();
    assert_eq!(ds.doublings, config.max_variance_rounds);
    assert!(ds.nonseparable);
    assert_eq!(ds.samples.len(), 20 << config.max_variance_rounds);

    // Determinism under the seed.
    let again = lime::adaptive_sample(&constant, &x, 0, &config, &domain).unwrap();
    assert_eq!(again.samples.len(), ds.samples.len());
    for (a, b) in ds.samples.iter().zip(&again.samples) {
        assert_eq!(a.raw, b.raw);
        assert_eq!(a.proximity, b.proximity);
    }

    // Boundary-balanced classifier passes in round one.
    let boundary = LinearModel::new(vec![1.0], 0.0);
    let ds = lime::adaptive_sample(
        &boundary,
        &fv(&[0.0]),
        0,
        &LimeConfig::with_seed(7),
        &wide_domain(1),
    )
    .unwrap();
    assert_eq!(ds.doublings, 0);
    assert!(!ds.nonseparable);

    report("07 lime-adaptive-loop", start, 60.0);
}

struct GridProblem {
    name: &'static str,
    model: Box<dyn BlackBoxModel>,
    x: Vec<f64>,
    goal: f64,
    epsilon: f64,
    bounds: (f64, f64),
    immutable_first: bool,
}

fn grid_problems() -> Vec<GridProblem> {
    vec![
        GridProblem {
            name: "sum-descend",
            model: Box::new(SumModel),
            x: vec![8.0, 8.0],
            goal: 4.0,
            epsilon: 0.05,
            bounds: (0.0, 10.0),
            immutable_first: false,
        },
        GridProblem {
            name: "linear-mixed-signs",
            model: Box::new(LinearModel::new(vec![2.0, -1.0], 0.0)),
            x: vec![2.8, 9.0],
            goal: 0.0,
            epsilon: 0.1,
            bounds: (0.0, 10.0),
            immutable_first: false,
        },
        GridProblem {
            name: "sum-ascend",
            model: Box::new(SumModel),
            x: vec![2.0, 2.0],
            goal: 10.0,
            epsilon: 0.1,
            bounds: (0.0, 6.0),
            immutable_first: false,
        },
        GridProblem {
            name: "linear-offset",
            model: Box::new(LinearModel::new(vec![1.0, 3.0], -2.0)),
            x: vec![5.0, 5.0],
            goal: 12.0,
            epsilon: 0.05,
            bounds: (0.0, 10.0),
            immutable_first: false,
        },
        GridProblem {
            name: "sum-immutable",
            model: Box::new(SumModel),
            x: vec![3.0, 4.0],
            goal: 5.0,
            epsilon: 0.05,
            bounds: (0.0, 10.0),
            immutable_first: true,
        },
    ]
}

/// Exhaustive-grid oracle: best feasible soft score, computed with its own
/// arithmetic (hand-rolled L1 + sparsity), independent of the search code.
fn grid_optimum(problem: &GridProblem) -> f64 {
    let (lo, hi) = problem.bounds;
    let step = (hi - lo) / 100.0;
    let grid: Vec<f64> = (0..100).map(|i| lo + i as f64 * step).collect();
    let f0_values: Vec<f64> = if problem.immutable_first {
        vec![problem.x[0]]
    } else {
        grid.clone()
    };
    let mut best = f64::NEG_INFINITY;
    let mut cells = Vec::new();
    for &a in &f0_values {
        for &b in &grid {
            cells.push(fv(&[a, b]));
        }
    }
    let outputs = problem.model.predict(&cells);
    for (cell, out) in cells.iter().zip(&outputs) {
        if (out.value(0) - problem.goal).abs() > problem.epsilon {
            continue;
        }
        let d0 = (cell.numeric(0).unwrap() - problem.x[0]).abs();
        let d1 = (cell.numeric(1).unwrap() - problem.x[1]).abs();
        let changed = (d0 > 1e-9) as u32 + (d1 > 1e-9) as u32;
        let soft = -(d0 + d1) - changed as f64;
        if soft > best {
            best = soft;
        }
    }
    assert!(best.is_finite(), "{}: no feasible grid cell", problem.name);
    best
}

#[test]
fn criterion_08_cf_grid_oracle_optimality() {
    let start = Instant::now();
    for problem in grid_problems() {
        let optimum = grid_optimum(&problem);
        let (lo, hi) = problem.bounds;
        let mut specs = vec![
            FeatureSpec::numeric("f0", lo, hi),
            FeatureSpec::numeric("f1", lo, hi),
        ];
        if problem.immutable_first {
            specs[0] = FeatureSpec::numeric("f0", lo, hi).immutable();
        }
        let domain = FeatureDomain::new(specs).unwrap();
        let x = fv(&problem.x);
        let goal = CfGoal::new(OutputVector::single("y", problem.goal), problem.epsilon);
        // SumModel names its output "sum"; the goal only uses positions.
        let goal = CfGoal {
            desired: OutputVector::single(
                problem.model.output_names()[0].clone(),
                problem.goal,
            ),
            ..goal
        };

        // Let diversification restarts use the whole desk budget rather than
        // stalling in the first feasible basin.
        let tabu = counterfactual::search(
            problem.model.as_ref(),
            &x,
            &domain,
            &goal,
            &SolverConfig {
                seed: 8,
                stall_window: 10_000,
                ..SolverConfig::desk()
            },
            None,
        )
        .unwrap();
        assert!(tabu.valid, "{}: tabu found no feasible solution", problem.name);
        assert!(
            tabu.score.soft >= 1.05 * optimum,
            "{}: tabu soft {} vs grid optimum {}",
            problem.name,
            tabu.score.soft,
            optimum
        );

        let hill = counterfactual::search(
            problem.model.as_ref(),
            &x,
            &domain,
            &goal,
            &SolverConfig {
                strategy: SearchStrategy::HillClimbing,
                seed: 8,
                stall_window: 10_000,
                ..SolverConfig::desk()
            },
            None,
        )
        .unwrap();
        assert_eq!(
            tabu.valid, hill.valid,
            "{}: tabu and hill climbing disagree on validity",
            problem.name
        );
    }
    report("08 cf-grid-oracle", start, 60.0);
}

fn credit_input(rng: &mut ChaCha8Rng) -> FeatureVector {
    CreditScorerModel::domain().sample_uniform(rng)
}

#[test]
fn criterion_09_cf_stability_protocol() {
    let start = Instant::now();
    let domain = CreditScorerModel::domain();
    let goal = CfGoal::new(OutputVector::single("approved", 1.0), 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(9);

    let mut rejected = Vec::new();
    while rejected.len() < 200 {
        let x = credit_input(&mut rng);
        if predict_checked(&CreditScorerModel, std::slice::from_ref(&x)).unwrap()[0].value(0)
            == 0.0
        {
            rejected.push(x);
        }
    }

    let mut valid = 0usize;
    let mut single_feature = 0usize;
    let mut distances = Vec::new();
    for (i, x) in rejected.iter().enumerate() {
        let config = SolverConfig {
            numeric_step_fraction: 0.1,
            seed: 900 + i as u64,
            ..SolverConfig::desk()
        };
        let result =
            counterfactual::search(&CreditScorerModel, x, &domain, &goal, &config, None).unwrap();
        if result.valid {
            valid += 1;
            if result.changed_features.len() == 1 {
                single_feature += 1;
            }
            distances.push(result.score.s1);
        }
    }

    let success = valid as f64 / 200.0;
    assert!(success >= 0.95, "valid counterfactuals for only {success:.3} of inputs");
    let singles = single_feature as f64 / valid as f64;
    assert!(singles > 0.5, "single-feature fraction {singles:.3} <= 0.5");

    // Distance histogram: the mode must be the lowest bin.
    let max = distances.iter().cloned().fold(0.0_f64, f64::max);
    let mut bins = [0usize; 10];
    for d in &distances {
        let slot = ((d / max * 10.0) as usize).min(9);
        bins[slot] += 1;
    }
    assert!(
        bins[1..].iter().all(|&b| b < bins[0]),
        "lowest bin is not the mode: {bins:?}"
    );
    report("09 cf-stability", start, 300.0);
}

#[test]
fn criterion_10_cf_nearest_change_point() {
    let start = Instant::now();
    let domain = CreditScorerModel::domain();
    let goal = CfGoal::new(OutputVector::single("approved", 1.0), 0.0);
    let x = FeatureVector::new(vec![
        Feature::numeric("Age", 21.0),
        Feature::numeric("Debt", 3.5),
        Feature::numeric("YearsEmployed", 5.0),
        Feature::numeric("Income", 100.0),
    ])
    .unwrap();

    let mut near_side = 0;
    for seed in 0..20 {
        let config = SolverConfig {
            numeric_step_fraction: 0.1,
            seed,
            ..SolverConfig::desk()
        };
        let result =
            counterfactual::search(&CreditScorerModel, &x, &domain, &goal, &config, None).unwrap();
        if !result.valid {
            continue;
        }
        let debt = result.counterfactual.numeric(1).unwrap();
        if (debt - CreditScorerModel::DEBT_HIGH_CHANGE_POINT).abs()
            < (debt - CreditScorerModel::DEBT_LOW_CHANGE_POINT).abs()
        {
            near_side += 1;
        }
    }
    assert!(
        near_side >= 18,
        "nearer change point selected in only {near_side}/20 runs"
    );
    report("10 cf-nearest-change-point", start, 120.0);
}

#[test]
fn criterion_11_metric_identities() {
    let start = Instant::now();

    // Faithfulness of attribution-proportional contributions is exactly 1.
    let model = LinearModel::new(vec![3.0, 1.0, 2.0], 0.5);
    let data = numeric_dataset(
        vec![
            vec![1.0, 4.0, 2.0],
            vec![3.0, 0.0, 5.0],
            vec![2.0, 2.0, 1.0],
        ],
        -100.0,
        100.0,
    );
    let x = fv(&[5.0, 1.0, 7.0]);
    let means = data.column_means().unwrap();
    let w: Vec<f64> = (0..3)
        .map(|i| model.weights[i] * (x.numeric(i).unwrap() - means[i]))
        .collect();
    let r = metrics::faithfulness(
        &w,
        &model,
        &x,
        metrics::MarginalEstimator::Exclusion(metrics::Replacement::DatasetMean),
        &data,
    )
    .unwrap();
    assert!((r - 1.0).abs() <= 1e-9);

    // Infidelity of the exact weights on a linear model is zero.
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
    )
    .unwrap();
    assert!(infid <= 1e-9, "infidelity {infid}");

    // Efficiency of exact Shapley values.
    let bg = numeric_dataset(vec![vec![0.5, 0.5, 0.5], vec![1.5, 0.0, 2.0]], -10.0, 10.0);
    let phi = metrics::ground_truth_shapley(&model, &x, &bg, 0).unwrap();
    let fx = predict_checked(&model, std::slice::from_ref(&x)).unwrap()[0].value(0);
    let mean_f = predict_checked(&model, bg.rows())
        .unwrap()
        .iter()
        .map(|o| o.value(0))
        .sum::<f64>()
        / bg.len() as f64;
    assert!((phi.iter().sum::<f64>() - (fx - mean_f)).abs() <= 1e-9);

    // Counterfactual metric trivial cases are exact.
    let pairs_same = vec![(x.clone(), x.clone())];
    assert_eq!(metrics::cf_sparsity(&pairs_same).unwrap(), 1.0);
    let mad_data = numeric_dataset(
        vec![vec![1.0], vec![2.0], vec![3.0], vec![4.0], vec![5.0]],
        -100.0,
        100.0,
    );
    let a = fv(&[2.0]);
    let b = fv(&[3.0]);
    assert_eq!(
        metrics::cf_proximity(&[(a.clone(), a.clone())], &mad_data).unwrap(),
        0.0
    );
    assert!((metrics::cf_proximity(&[(a, b)], &mad_data).unwrap() + 1.0).abs() <= 1e-12);

    report("11 metric-identities", start, 10.0);
}
