//! `xaikit benchmark <protocol>`: reproducible experiment runs with
//! machine-readable reports and plot-data CSVs. Trials derive their seeds as
//! `seed + trial_index` and may run concurrently up to `--jobs`; report
//! assembly is order-independent.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use rayon::prelude::*;
use serde::Serialize;

use xaikit::counterfactual::{self, CfGoal, SolverConfig};
use xaikit::lime::{self, LimeConfig};
use xaikit::metrics;
use xaikit::model::{
    predict_checked, BlackBoxModel, CountingModel, Dataset, FeatureDomain, FeatureVector, Output,
    OutputVector,
};
use xaikit::shap::{self, CfBackgroundConfig, ShapConfig};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::common::{
    load_config_file, load_model, parse_bounds, resolve_seed, runtime, to_value, usage, CliResult,
    LoadedModel, Report,
};

#[derive(Args, Debug)]
pub struct BenchCommonArgs {
    /// Model spec (defaults per protocol)
    #[arg(long)]
    pub model: Option<String>,
    /// Numeric bounds lo:hi per feature for models without a built-in domain
    #[arg(long)]
    pub bounds: Option<String>,
    /// JSON config file; command-line flags override its keys
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for report.json, summary.csv and plot CSVs
    #[arg(long, default_value = "xaikit-bench")]
    pub out: PathBuf,
    /// Concurrent trials
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

impl BenchCommonArgs {
    fn resolve(
        &self,
        default_model: &str,
    ) -> CliResult<(LoadedModel, FeatureDomain, u64, serde_json::Value)> {
        let config = load_config_file(&self.config)?;
        let spec = self
            .model
            .clone()
            .or_else(|| crate::common::config_str(&config, "model"))
            .unwrap_or_else(|| default_model.to_string());
        let model = load_model(&spec)?;
        let bounds = self
            .bounds
            .clone()
            .or_else(|| crate::common::config_str(&config, "bounds"));
        let domain = match (&bounds, &model.builtin_domain) {
            (Some(text), _) => {
                let probe: Vec<String> = text
                    .split(',')
                    .enumerate()
                    .map(|(i, _)| format!("f{i}"))
                    .collect();
                parse_bounds(text, &probe)?
            }
            (None, Some(d)) => d.clone(),
            (None, None) => {
                return Err(usage(
                    "this model has no built-in domain; pass --bounds lo:hi,...",
                ))
            }
        };
        let seed = resolve_seed(self.seed, &config);
        Ok((model, domain, seed, config))
    }
}

fn opt_usize(flag: Option<usize>, config: &serde_json::Value, key: &str, default: usize) -> usize {
    flag.or_else(|| crate::common::config_u64(config, key).map(|v| v as usize))
        .unwrap_or(default)
}

fn opt_f64(flag: Option<f64>, config: &serde_json::Value, key: &str, default: f64) -> f64 {
    flag.or_else(|| crate::common::config_f64(config, key))
        .unwrap_or(default)
}

fn run_indexed<T: Send, F: Fn(usize) -> T + Sync + Send>(jobs: usize, n: usize, f: F) -> Vec<T> {
    if jobs <= 1 {
        (0..n).map(f).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .expect("thread pool");
        pool.install(|| (0..n).into_par_iter().map(f).collect())
    }
}

fn write_csv(dir: &Path, name: &str, header: &str, rows: &[String]) -> CliResult<()> {
    let mut text = String::with_capacity(rows.len() * 24 + header.len() + 1);
    text.push_str(header);
    text.push('\n');
    for row in rows {
        text.push_str(row);
        text.push('\n');
    }
    std::fs::write(dir.join(name), text)
        .map_err(|e| runtime(format!("cannot write {name}: {e}")))
}

fn metric_report(name: impl Into<String>, value: f64, n: usize) -> metrics::MetricReport {
    metrics::MetricReport {
        name: name.into(),
        value,
        n,
        config: serde_json::Value::Null,
    }
}

/// Writes the protocol summary as `metric,value,n` rows; the full records
/// (including the config snapshot) go into the report payload.
fn write_summary(
    dir: &Path,
    reports: &mut [metrics::MetricReport],
    settings: &serde_json::Value,
) -> CliResult<()> {
    for r in reports.iter_mut() {
        r.config = settings.clone();
    }
    let rows: Vec<String> = reports
        .iter()
        .map(|r| format!("{},{},{}", r.name, r.value, r.n))
        .collect();
    write_csv(dir, "summary.csv", "metric,value,n", &rows)
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64;
    (mean, var.sqrt())
}

fn sample_inputs(domain: &FeatureDomain, n: usize, seed: u64) -> Vec<FeatureVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| domain.sample_uniform(&mut rng)).collect()
}

/// Uniform-random inputs whose first output differs from `want` (the
/// "rejected" pool of the stability protocols).
fn sample_rejected(
    model: &dyn BlackBoxModel,
    domain: &FeatureDomain,
    want: f64,
    n: usize,
    seed: u64,
) -> CliResult<Vec<FeatureVector>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0;
    while out.len() < n {
        attempts += 1;
        if attempts > n * 1000 {
            return Err(runtime(format!(
                "could not find {n} rejected inputs (model may never emit != {want})"
            )));
        }
        let x = domain.sample_uniform(&mut rng);
        let y = predict_checked(model, std::slice::from_ref(&x))
            .map_err(|e| runtime(e.to_string()))?[0]
            .value(0);
        if y != want {
            out.push(x);
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// impact-score-sweep
// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct ImpactSweepArgs {
    #[command(flatten)]
    pub common: BenchCommonArgs,
    /// Inputs per repeat (default 20)
    #[arg(long)]
    pub m: Option<usize>,
    /// Sweep k = 1..=k_max (default: the feature count)
    #[arg(long)]
    pub k_max: Option<usize>,
    /// Repeats (default 10)
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Surrogate sample count (default 300)
    #[arg(long)]
    pub samples: Option<usize>,
    /// Perturbation strength (default 0.5)
    #[arg(long)]
    pub noise_ratio: Option<f64>,
    /// Replacement for removed features: midpoint | mean
    #[arg(long)]
    pub replacement: Option<String>,
}

#[derive(Serialize)]
struct ImpactSweepSettings {
    model: String,
    m: usize,
    k_max: usize,
    repeats: usize,
    samples: usize,
    noise_ratio: f64,
    replacement: String,
    seed: u64,
}

pub fn run_impact_sweep(args: &ImpactSweepArgs) -> CliResult<()> {
    let start = Instant::now();
    let (loaded, domain, seed, config) = args.common.resolve("credit")?;
    let m = opt_usize(args.m, &config, "m", 20);
    let repeats = opt_usize(args.repeats, &config, "repeats", 10);
    let samples = opt_usize(args.samples, &config, "samples", 300);
    let noise_ratio = opt_f64(args.noise_ratio, &config, "noise_ratio", 0.5);
    let k_max = match opt_usize(args.k_max, &config, "k_max", 0) {
        0 => domain.len(),
        k => k.min(domain.len()),
    };
    let replacement_name = args
        .replacement
        .clone()
        .or_else(|| crate::common::config_str(&config, "replacement"))
        .unwrap_or_else(|| "midpoint".into());
    let replacement = match replacement_name.as_str() {
        "midpoint" => metrics::Replacement::DomainMidpoint,
        "mean" => metrics::Replacement::DatasetMean,
        other => return Err(usage(format!("unknown replacement '{other}'"))),
    };

    let inputs = sample_inputs(&domain, m, seed);
    let data = Dataset::new(domain.clone(), inputs.clone(), None)
        .map_err(|e| runtime(e.to_string()))?;
    let counting = CountingModel::new(loaded.model.as_ref());

    // grid[repeat][k-1] = mean indicator over inputs.
    let grid: Vec<Vec<f64>> = run_indexed(args.common.jobs, repeats, |r| {
        let mut hits = vec![0usize; k_max];
        let mut usable = 0usize;
        for (i, x) in inputs.iter().enumerate() {
            let trial = (r * inputs.len() + i) as u64;
            let lime_config = LimeConfig {
                samples,
                noise_ratio,
                rng_seed: seed + trial,
                ..LimeConfig::default()
            };
            let Ok(saliency) = lime::explain(&counting, x, 0, &lime_config, &domain) else {
                continue; // failed trial recorded by omission
            };
            usable += 1;
            for k in 1..=k_max {
                if let Ok(true) = metrics::impact_indicator(
                    &saliency.adjusted_weights,
                    &counting,
                    x,
                    k,
                    replacement,
                    &data,
                ) {
                    hits[k - 1] += 1;
                }
            }
        }
        hits.iter()
            .map(|&h| {
                if usable == 0 {
                    0.0
                } else {
                    h as f64 / usable as f64
                }
            })
            .collect()
    });

    let settings = to_value(&ImpactSweepSettings {
        model: loaded.spec.clone(),
        m,
        k_max,
        repeats,
        samples,
        noise_ratio,
        replacement: replacement_name,
        seed,
    });
    let mut plot_rows = Vec::with_capacity(k_max);
    let mut summary = Vec::new();
    for k in 1..=k_max {
        let column: Vec<f64> = grid.iter().map(|row| row[k - 1]).collect();
        let (mean, sd) = mean_sd(&column);
        plot_rows.push(format!("{k},{mean},{sd}"));
        summary.push(metric_report(format!("impact_score_mean_k{k}"), mean, repeats));
        summary.push(metric_report(format!("impact_score_sd_k{k}"), sd, repeats));
    }

    std::fs::create_dir_all(&args.common.out)
        .map_err(|e| runtime(format!("cannot create output dir: {e}")))?;
    write_csv(&args.common.out, "is_vs_k.csv", "k,mean_is,sd_is", &plot_rows)?;
    write_summary(&args.common.out, &mut summary, &settings)?;

    let report = Report::new(
        "benchmark-impact-score-sweep",
        settings,
        vec![("protocol".into(), counting.count())],
        serde_json::json!({ "grid": grid, "k_max": k_max, "summary": to_value(&summary) }),
        start.elapsed().as_millis(),
    );
    report.write(&Some(args.common.out.join("report.json")))
}

// ---------------------------------------------------------------------------
// stability
// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct StabilityArgs {
    #[command(flatten)]
    pub common: BenchCommonArgs,
    /// Explained inputs (default 5)
    #[arg(long)]
    pub inputs: Option<usize>,
    /// Explainer runs per input (default 10)
    #[arg(long)]
    pub runs: Option<usize>,
    /// Top-set size for the variable index (default 2)
    #[arg(long)]
    pub top_k: Option<usize>,
    /// Relative coefficient-agreement band (default 0.1)
    #[arg(long)]
    pub band: Option<f64>,
    /// Surrogate sample count (default 300)
    #[arg(long)]
    pub samples: Option<usize>,
    /// Perturbation strength (default 0.5)
    #[arg(long)]
    pub noise_ratio: Option<f64>,
}

#[derive(Serialize)]
struct StabilitySettings {
    model: String,
    inputs: usize,
    runs: usize,
    top_k: usize,
    band: f64,
    samples: usize,
    noise_ratio: f64,
    seed: u64,
}

pub fn run_stability(args: &StabilityArgs) -> CliResult<()> {
    let start = Instant::now();
    let (loaded, domain, seed, config) = args.common.resolve("credit")?;
    let n_inputs = opt_usize(args.inputs, &config, "inputs", 5);
    let runs = opt_usize(args.runs, &config, "runs", 10);
    let top_k = opt_usize(args.top_k, &config, "top_k", 2);
    let band = opt_f64(args.band, &config, "band", metrics::CSI_DEFAULT_BAND);
    let samples = opt_usize(args.samples, &config, "samples", 300);
    let noise_ratio = opt_f64(args.noise_ratio, &config, "noise_ratio", 0.5);
    let inputs = sample_inputs(&domain, n_inputs, seed);
    let counting = CountingModel::new(loaded.model.as_ref());

    let indices: Vec<Result<(f64, f64), String>> =
        run_indexed(args.common.jobs, inputs.len(), |i| {
            let x = &inputs[i];
            metrics::stability_indices(
                |run| {
                    let lime_config = LimeConfig {
                        samples,
                        noise_ratio,
                        rng_seed: seed + (i * runs + run) as u64,
                        ..LimeConfig::default()
                    };
                    lime::explain(&counting, x, 0, &lime_config, &domain)
                        .map(|s| s.adjusted_weights)
                },
                runs,
                top_k,
                band,
            )
            .map_err(|e| e.to_string())
        });

    let mut plot_rows = Vec::new();
    let mut vsi_values = Vec::new();
    let mut csi_values = Vec::new();
    for (i, r) in indices.iter().enumerate() {
        match r {
            Ok((vsi, csi)) => {
                plot_rows.push(format!("{i},{vsi},{csi}"));
                vsi_values.push(*vsi);
                csi_values.push(*csi);
            }
            Err(_) => plot_rows.push(format!("{i},,")),
        }
    }
    if vsi_values.is_empty() {
        return Err(runtime("every stability trial failed"));
    }
    let settings = to_value(&StabilitySettings {
        model: loaded.spec.clone(),
        inputs: n_inputs,
        runs,
        top_k,
        band,
        samples,
        noise_ratio,
        seed,
    });
    let (vsi_mean, vsi_sd) = mean_sd(&vsi_values);
    let (csi_mean, csi_sd) = mean_sd(&csi_values);
    let mut summary = vec![
        metric_report("vsi_mean", vsi_mean, vsi_values.len()),
        metric_report("vsi_sd", vsi_sd, vsi_values.len()),
        metric_report("csi_mean", csi_mean, csi_values.len()),
        metric_report("csi_sd", csi_sd, csi_values.len()),
    ];

    std::fs::create_dir_all(&args.common.out)
        .map_err(|e| runtime(format!("cannot create output dir: {e}")))?;
    write_csv(&args.common.out, "stability.csv", "input_index,vsi,csi", &plot_rows)?;
    write_summary(&args.common.out, &mut summary, &settings)?;

    let trials: Vec<serde_json::Value> = indices
        .iter()
        .enumerate()
        .map(|(i, r)| match r {
            Ok((vsi, csi)) => serde_json::json!({"input": i, "vsi": vsi, "csi": csi}),
            Err(e) => serde_json::json!({"input": i, "failed": e}),
        })
        .collect();
    Report::new(
        "benchmark-stability",
        settings,
        vec![("protocol".into(), counting.count())],
        serde_json::json!({ "trials": trials, "summary": to_value(&summary) }),
        start.elapsed().as_millis(),
    )
    .write(&Some(args.common.out.join("report.json")))
}

// ---------------------------------------------------------------------------
// cf-stability and cf-quality
// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct CfStabilityArgs {
    #[command(flatten)]
    pub common: BenchCommonArgs,
    /// Rejected inputs to search from (default 200)
    #[arg(long)]
    pub n: Option<usize>,
    /// Evaluation budget per search (default 10000)
    #[arg(long)]
    pub budget: Option<usize>,
    /// Numeric step fraction (default 0.1)
    #[arg(long)]
    pub step_fraction: Option<f64>,
    /// Desired first-output value (default 1)
    #[arg(long)]
    pub goal: Option<f64>,
    /// Validity tolerance (default 0: exact label match)
    #[arg(long)]
    pub epsilon: Option<f64>,
}

#[derive(Serialize)]
struct CfStabilitySettings {
    model: String,
    n: usize,
    budget: usize,
    step_fraction: f64,
    goal: f64,
    epsilon: f64,
    seed: u64,
}

#[derive(Serialize, Clone)]
struct CfTrial {
    index: usize,
    valid: bool,
    distance: f64,
    changed_features: usize,
    iterations: usize,
}

fn run_cf_protocol(
    model: &dyn BlackBoxModel,
    domain: &FeatureDomain,
    inputs: &[FeatureVector],
    goal_value: f64,
    epsilon: f64,
    budget: usize,
    step_fraction: f64,
    seed: u64,
    jobs: usize,
) -> (Vec<CfTrial>, Vec<(FeatureVector, FeatureVector)>) {
    let name = model.output_names()[0].clone();
    let goal = CfGoal::new(
        OutputVector::new(vec![Output::new(name, goal_value)]),
        epsilon,
    );
    let trials: Vec<(CfTrial, Option<(FeatureVector, FeatureVector)>)> =
        run_indexed(jobs, inputs.len(), |i| {
            let config = SolverConfig {
                max_evaluations: budget,
                numeric_step_fraction: step_fraction,
                seed: seed + i as u64,
                ..SolverConfig::desk()
            };
            match counterfactual::search(model, &inputs[i], domain, &goal, &config, None) {
                Ok(result) => {
                    let trial = CfTrial {
                        index: i,
                        valid: result.valid,
                        distance: result.score.s1,
                        changed_features: result.changed_features.len(),
                        iterations: result.iterations_used,
                    };
                    let pair = result
                        .valid
                        .then(|| (inputs[i].clone(), result.counterfactual));
                    (trial, pair)
                }
                Err(_) => (
                    CfTrial {
                        index: i,
                        valid: false,
                        distance: f64::NAN,
                        changed_features: 0,
                        iterations: 0,
                    },
                    None,
                ),
            }
        });
    let pairs = trials.iter().filter_map(|(_, p)| p.clone()).collect();
    (trials.into_iter().map(|(t, _)| t).collect(), pairs)
}

pub fn run_cf_stability(args: &CfStabilityArgs) -> CliResult<()> {
    let start = Instant::now();
    let (loaded, domain, seed, config) = args.common.resolve("credit")?;
    let n = opt_usize(args.n, &config, "n", 200);
    let budget = opt_usize(args.budget, &config, "budget", 10_000);
    let step_fraction = opt_f64(args.step_fraction, &config, "step_fraction", 0.1);
    let goal = opt_f64(args.goal, &config, "goal", 1.0);
    let epsilon = opt_f64(args.epsilon, &config, "epsilon", 0.0);
    let counting = CountingModel::new(loaded.model.as_ref());
    let inputs = sample_rejected(&counting, &domain, goal, n, seed)?;
    let (trials, _pairs) = run_cf_protocol(
        &counting,
        &domain,
        &inputs,
        goal,
        epsilon,
        budget,
        step_fraction,
        seed,
        args.common.jobs,
    );

    let valid: Vec<&CfTrial> = trials.iter().filter(|t| t.valid).collect();
    let success_fraction = valid.len() as f64 / trials.len() as f64;
    let single_fraction = if valid.is_empty() {
        0.0
    } else {
        valid.iter().filter(|t| t.changed_features == 1).count() as f64 / valid.len() as f64
    };
    let distances: Vec<f64> = valid.iter().map(|t| t.distance).collect();
    let mean_distance = if distances.is_empty() {
        0.0
    } else {
        distances.iter().sum::<f64>() / distances.len() as f64
    };

    // Distance histogram over ten equal bins up to the maximum.
    let max = distances.iter().cloned().fold(0.0_f64, f64::max).max(1e-12);
    let mut bins = [0usize; 10];
    for d in &distances {
        bins[((d / max * 10.0) as usize).min(9)] += 1;
    }
    let hist_rows: Vec<String> = bins
        .iter()
        .enumerate()
        .map(|(i, count)| {
            format!(
                "{},{},{count}",
                i as f64 * max / 10.0,
                (i + 1) as f64 * max / 10.0
            )
        })
        .collect();
    let max_changed = trials.iter().map(|t| t.changed_features).max().unwrap_or(0);
    let sparsity_rows: Vec<String> = (0..=max_changed)
        .map(|c| {
            let count = valid.iter().filter(|t| t.changed_features == c).count();
            format!("{c},{count}")
        })
        .collect();

    std::fs::create_dir_all(&args.common.out)
        .map_err(|e| runtime(format!("cannot create output dir: {e}")))?;
    write_csv(
        &args.common.out,
        "cf_distance_hist.csv",
        "bin_lo,bin_hi,count",
        &hist_rows,
    )?;
    write_csv(
        &args.common.out,
        "cf_sparsity_hist.csv",
        "changed_features,count",
        &sparsity_rows,
    )?;
    let settings = to_value(&CfStabilitySettings {
        model: loaded.spec.clone(),
        n,
        budget,
        step_fraction,
        goal,
        epsilon,
        seed,
    });
    let mut summary = vec![
        metric_report("success_fraction", success_fraction, trials.len()),
        metric_report("single_change_fraction", single_fraction, valid.len()),
        metric_report("mean_distance", mean_distance, distances.len()),
    ];
    write_summary(&args.common.out, &mut summary, &settings)?;

    Report::new(
        "benchmark-cf-stability",
        settings,
        vec![("protocol".into(), counting.count())],
        serde_json::json!({
            "success_fraction": success_fraction,
            "single_change_fraction": single_fraction,
            "trials": to_value(&trials),
            "summary": to_value(&summary),
        }),
        start.elapsed().as_millis(),
    )
    .write(&Some(args.common.out.join("report.json")))
}

#[derive(Args, Debug)]
pub struct CfQualityArgs {
    #[command(flatten)]
    pub common: BenchCommonArgs,
    /// Rejected inputs to search from (default 20)
    #[arg(long)]
    pub n: Option<usize>,
    /// Evaluation budget per search (default 10000)
    #[arg(long)]
    pub budget: Option<usize>,
    /// Numeric step fraction (default 0.1)
    #[arg(long)]
    pub step_fraction: Option<f64>,
    /// Desired first-output value (default 1)
    #[arg(long)]
    pub goal: Option<f64>,
    /// Validity tolerance (default 0: exact label match)
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Synthetic rows used to estimate per-feature MAD (default 200)
    #[arg(long)]
    pub mad_rows: Option<usize>,
}

#[derive(Serialize)]
struct CfQualitySettings {
    model: String,
    n: usize,
    budget: usize,
    step_fraction: f64,
    goal: f64,
    epsilon: f64,
    mad_rows: usize,
    seed: u64,
}

pub fn run_cf_quality(args: &CfQualityArgs) -> CliResult<()> {
    let start = Instant::now();
    let (loaded, domain, seed, config) = args.common.resolve("credit")?;
    let n = opt_usize(args.n, &config, "n", 20);
    let budget = opt_usize(args.budget, &config, "budget", 10_000);
    let step_fraction = opt_f64(args.step_fraction, &config, "step_fraction", 0.1);
    let goal = opt_f64(args.goal, &config, "goal", 1.0);
    let epsilon = opt_f64(args.epsilon, &config, "epsilon", 0.0);
    let mad_rows = opt_usize(args.mad_rows, &config, "mad_rows", 200);
    let counting = CountingModel::new(loaded.model.as_ref());
    let inputs = sample_rejected(&counting, &domain, goal, n, seed)?;
    let (trials, pairs) = run_cf_protocol(
        &counting,
        &domain,
        &inputs,
        goal,
        epsilon,
        budget,
        step_fraction,
        seed,
        args.common.jobs,
    );
    if pairs.is_empty() {
        return Err(runtime("no valid counterfactuals; nothing to score"));
    }

    let mad_data = Dataset::new(
        domain.clone(),
        sample_inputs(&domain, mad_rows, seed.wrapping_add(1)),
        None,
    )
    .map_err(|e| runtime(e.to_string()))?;
    let proximity =
        metrics::cf_proximity(&pairs, &mad_data).map_err(|e| runtime(e.to_string()))?;
    let sparsity = metrics::cf_sparsity(&pairs).map_err(|e| runtime(e.to_string()))?;
    let valid_fraction = pairs.len() as f64 / trials.len() as f64;

    std::fs::create_dir_all(&args.common.out)
        .map_err(|e| runtime(format!("cannot create output dir: {e}")))?;
    let plot_rows: Vec<String> = trials
        .iter()
        .map(|t| {
            format!(
                "{},{},{},{}",
                t.index, t.valid, t.distance, t.changed_features
            )
        })
        .collect();
    write_csv(
        &args.common.out,
        "cf_quality.csv",
        "index,valid,l1_distance,changed_features",
        &plot_rows,
    )?;
    let settings = to_value(&CfQualitySettings {
        model: loaded.spec.clone(),
        n,
        budget,
        step_fraction,
        goal,
        epsilon,
        mad_rows,
        seed,
    });
    let mut summary = vec![
        metric_report("proximity", proximity, pairs.len()),
        metric_report("sparsity", sparsity, pairs.len()),
        metric_report("valid_fraction", valid_fraction, trials.len()),
    ];
    write_summary(&args.common.out, &mut summary, &settings)?;

    Report::new(
        "benchmark-cf-quality",
        settings,
        vec![("protocol".into(), counting.count())],
        serde_json::json!({
            "proximity": proximity,
            "sparsity": sparsity,
            "valid_fraction": valid_fraction,
            "trials": to_value(&trials),
            "summary": to_value(&summary),
        }),
        start.elapsed().as_millis(),
    )
    .write(&Some(args.common.out.join("report.json")))
}

// ---------------------------------------------------------------------------
// shap-background-compare
// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct ShapCompareArgs {
    #[command(flatten)]
    pub common: BenchCommonArgs,
    /// Synthetic data pool size (default 300)
    #[arg(long)]
    pub pool: Option<usize>,
    /// Trials for the stochastic strategies (default 10)
    #[arg(long)]
    pub trials: Option<usize>,
    /// Rows per random background (default 50)
    #[arg(long)]
    pub random_size: Option<usize>,
    /// Cluster count for the k-means background (default 8)
    #[arg(long)]
    pub kmeans_k: Option<usize>,
    /// Counterfactual background seeds (default 2)
    #[arg(long)]
    pub cf_seeds: Option<usize>,
    /// Counterfactuals per seed (default 5)
    #[arg(long)]
    pub cf_per_seed: Option<usize>,
    /// Explained input; defaults to a seeded domain sample
    #[arg(long)]
    pub input: Option<String>,
}

#[derive(Serialize)]
struct ShapCompareSettings {
    model: String,
    pool: usize,
    trials: usize,
    random_size: usize,
    kmeans_k: usize,
    cf_seeds: usize,
    cf_per_seed: usize,
    input: Vec<f64>,
    seed: u64,
}

#[derive(Serialize)]
struct StrategyRun {
    strategy: String,
    trial: usize,
    ok: bool,
    null_output: f64,
    phi: Vec<f64>,
}

pub fn run_shap_compare(args: &ShapCompareArgs) -> CliResult<()> {
    let start = Instant::now();
    let (loaded, domain, seed, config) = {
        // SumModel has no built-in domain: default to [0, 10) per feature
        // when neither bounds nor a domain exist.
        let resolved = args.common.resolve("sum");
        match resolved {
            Ok(v) => v,
            Err(_) if args.common.model.as_deref().unwrap_or("sum") == "sum" => {
                let config = load_config_file(&args.common.config)?;
                let model = load_model("sum")?;
                let domain = FeatureDomain::numeric(&[
                    ("f0", 0.0, 10.0),
                    ("f1", 0.0, 10.0),
                    ("f2", 0.0, 10.0),
                    ("f3", 0.0, 10.0),
                ])
                .map_err(|e| runtime(e.to_string()))?;
                let seed = resolve_seed(args.common.seed, &config);
                (model, domain, seed, config)
            }
            Err(e) => return Err(e),
        }
    };
    if domain.len() > 12 {
        return Err(usage("shap-background-compare needs M <= 12 (exhaustive mode)"));
    }
    let pool_size = opt_usize(args.pool, &config, "pool", 300);
    let trials = opt_usize(args.trials, &config, "trials", 10);
    let random_size = opt_usize(args.random_size, &config, "random_size", 50);
    let kmeans_k = opt_usize(args.kmeans_k, &config, "kmeans_k", 8);
    let cf_seeds = opt_usize(args.cf_seeds, &config, "cf_seeds", 2);
    let cf_per_seed = opt_usize(args.cf_per_seed, &config, "cf_per_seed", 5);
    let counting = CountingModel::new(loaded.model.as_ref());

    let pool = Dataset::new(
        domain.clone(),
        sample_inputs(&domain, pool_size, seed),
        None,
    )
    .map_err(|e| runtime(e.to_string()))?;
    let x = match &args.input {
        Some(text) => crate::common::parse_inline_input(text, Some(&domain))?,
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(17));
            domain.sample_uniform(&mut rng)
        }
    };

    // Reference for counterfactual backgrounds: the per-output minimum over
    // the pool, mirroring a "cheapest outcome" anchor.
    let outputs = predict_checked(&counting, pool.rows()).map_err(|e| runtime(e.to_string()))?;
    let arity = outputs[0].len();
    let reference = OutputVector::new(
        (0..arity)
            .map(|o| {
                let min = outputs
                    .iter()
                    .map(|ov| ov.value(o))
                    .fold(f64::INFINITY, f64::min);
                Output::new(counting.output_names()[o].clone(), min)
            })
            .collect(),
    );
    let range = (0..arity)
        .map(|o| {
            let vals: Vec<f64> = outputs.iter().map(|ov| ov.value(o)).collect();
            vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                - vals.iter().cloned().fold(f64::INFINITY, f64::min)
        })
        .fold(0.0_f64, f64::max);

    let mut jobs_list: Vec<(String, usize)> = vec![("full".into(), 0), ("kmeans".into(), 0)];
    for t in 0..trials {
        jobs_list.push(("random".into(), t));
    }
    for t in 0..trials {
        jobs_list.push(("counterfactual".into(), t));
    }

    let runs: Vec<StrategyRun> = run_indexed(args.common.jobs, jobs_list.len(), |j| {
        let (strategy, trial) = &jobs_list[j];
        let trial = *trial;
        let trial_seed = seed + j as u64;
        let background = match strategy.as_str() {
            "full" => Ok(pool.clone()),
            "kmeans" => shap::background_kmeans(&pool, kmeans_k, trial_seed),
            "random" => shap::background_random(&pool, random_size.min(pool.len()), trial_seed),
            _ => {
                let mut cf_config = CfBackgroundConfig::new((0.01 * range).max(1e-6));
                cf_config.solver.seed = trial_seed;
                shap::background_counterfactual(
                    &counting,
                    &pool,
                    &reference,
                    cf_seeds,
                    cf_per_seed,
                    &cf_config,
                )
                .map(|b| b.dataset)
            }
        };
        let explanation = background
            .and_then(|bg| shap::explain(&counting, &x, &bg, &ShapConfig::with_seed(trial_seed)));
        match explanation {
            Ok(e) => StrategyRun {
                strategy: strategy.clone(),
                trial,
                ok: true,
                null_output: e.outputs[0].null_output,
                phi: e.outputs[0].phi.clone(),
            },
            Err(_) => StrategyRun {
                strategy: strategy.clone(),
                trial,
                ok: false,
                null_output: f64::NAN,
                phi: Vec::new(),
            },
        }
    });

    let settings = to_value(&ShapCompareSettings {
        model: loaded.spec.clone(),
        pool: pool_size,
        trials,
        random_size,
        kmeans_k,
        cf_seeds,
        cf_per_seed,
        input: x.numerics().unwrap_or_default(),
        seed,
    });
    let names: Vec<String> = domain.specs().iter().map(|s| s.name.clone()).collect();
    let mut plot_rows = Vec::new();
    let mut summary = Vec::new();
    for strategy in ["full", "kmeans", "random", "counterfactual"] {
        let ok_runs: Vec<&StrategyRun> = runs
            .iter()
            .filter(|r| r.strategy == strategy && r.ok)
            .collect();
        summary.push(metric_report(
            format!("{strategy}_successful_trials"),
            ok_runs.len() as f64,
            runs.iter().filter(|r| r.strategy == strategy).count(),
        ));
        if ok_runs.is_empty() {
            continue;
        }
        let phi0: Vec<f64> = ok_runs.iter().map(|r| r.null_output).collect();
        let (phi0_mean, _) = mean_sd(&phi0);
        summary.push(metric_report(
            format!("{strategy}_null_output_mean"),
            phi0_mean,
            phi0.len(),
        ));
        for (f, name) in names.iter().enumerate() {
            let values: Vec<f64> = ok_runs.iter().map(|r| r.phi[f]).collect();
            let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let (mean, _) = mean_sd(&values);
            plot_rows.push(format!(
                "{strategy},{},{name},{min},{mean},{max}",
                counting.output_names()[0]
            ));
        }
    }

    std::fs::create_dir_all(&args.common.out)
        .map_err(|e| runtime(format!("cannot create output dir: {e}")))?;
    write_csv(
        &args.common.out,
        "shap_backgrounds.csv",
        "strategy,output,feature,phi_min,phi_mean,phi_max",
        &plot_rows,
    )?;
    write_summary(&args.common.out, &mut summary, &settings)?;

    Report::new(
        "benchmark-shap-background-compare",
        settings,
        vec![("protocol".into(), counting.count())],
        serde_json::json!({ "runs": to_value(&runs), "summary": to_value(&summary) }),
        start.elapsed().as_millis(),
    )
    .write(&Some(args.common.out.join("report.json")))
}
