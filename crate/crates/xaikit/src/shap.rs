//! Kernel SHAP: additive feature attributions solved by kernel-weighted
//! constrained least squares over coalition samples, plus background
//! generation strategies (random, k-means, counterfactual, explicit).

use std::collections::HashSet;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::counterfactual::{self, CfGoal, SolverConfig};
use crate::error::{Error, Result};
use crate::kmeans;
use crate::lime;
use crate::linalg;
use crate::model::{
    predict_checked, BlackBoxModel, Dataset, Feature, FeatureVector, OutputVector,
};

#[derive(Debug, Clone, Serialize)]
pub struct ShapConfig {
    /// Coalition budget when sampling (ignored in exhaustive mode).
    pub n_samples: usize,
    /// Enumerate all proper coalitions when `M` is at most this.
    pub exhaustive_cap: usize,
    pub seed: u64,
    /// Allowed residual on the local-accuracy identity.
    pub tolerance: f64,
}

impl Default for ShapConfig {
    fn default() -> Self {
        ShapConfig {
            n_samples: 2048,
            exhaustive_cap: 12,
            seed: 0,
            tolerance: 1e-6,
        }
    }
}

impl ShapConfig {
    pub fn with_seed(seed: u64) -> Self {
        ShapConfig {
            seed,
            ..ShapConfig::default()
        }
    }
}

/// Attribution for a single model output: `prediction = null_output + sum(phi)`.
#[derive(Debug, Clone, Serialize)]
pub struct OutputAttribution {
    pub output_name: String,
    pub null_output: f64,
    pub phi: Vec<f64>,
    pub prediction: f64,
}

/// Per-output itemized receipt of feature contributions.
#[derive(Debug, Clone, Serialize)]
pub struct ShapExplanation {
    pub feature_names: Vec<String>,
    pub outputs: Vec<OutputAttribution>,
    /// Number of proper coalitions evaluated against the model.
    pub coalitions_evaluated: usize,
}

/// The SHAP kernel `(M - 1) / (C(M, |z|) * |z| * (M - |z|))`. Defined only
/// for proper coalitions; the empty and full coalitions carry infinite
/// weight and are handled analytically by the solver.
pub fn shap_kernel(m: usize, size: usize) -> Result<f64> {
    if size == 0 || size >= m {
        return Err(Error::InfiniteKernelWeight { size, m });
    }
    let mut choose = 1.0_f64;
    for i in 0..size {
        choose *= (m - i) as f64 / (i + 1) as f64;
    }
    Ok((m as f64 - 1.0) / (choose * size as f64 * (m - size) as f64))
}

/// One synthetic vector per background row: feature `i` keeps `x_i` when the
/// mask includes it, otherwise takes the background row's value.
pub fn synthesize(x: &FeatureVector, mask: &[bool], background: &Dataset) -> Vec<FeatureVector> {
    background
        .rows()
        .iter()
        .map(|row| {
            let features: Vec<Feature> = (0..x.len())
                .map(|i| Feature {
                    name: x.name(i).to_string(),
                    value: if mask[i] {
                        x.value(i).clone()
                    } else {
                        row.value(i).clone()
                    },
                })
                .collect();
            FeatureVector::from_features_unchecked(features)
        })
        .collect()
}

fn mean_outputs(outputs: &[OutputVector]) -> Vec<f64> {
    let arity = outputs[0].len();
    let mut sums = vec![0.0; arity];
    for o in outputs {
        for (s, out) in sums.iter_mut().zip(o.outputs()) {
            *s += out.value;
        }
    }
    sums.iter().map(|s| s / outputs.len() as f64).collect()
}

fn enumerate_masks(m: usize) -> Vec<Vec<bool>> {
    let full = (1u64 << m) - 1;
    (1..full)
        .map(|bits| (0..m).map(|i| bits & (1 << i) != 0).collect())
        .collect()
}

fn sample_masks(m: usize, n_samples: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<bool>> {
    // Size distribution proportional to the total kernel weight per size,
    // kernel(M, s) * C(M, s) = (M - 1) / (s * (M - s)).
    let size_weights: Vec<f64> = (1..m)
        .map(|s| (m as f64 - 1.0) / ((s * (m - s)) as f64))
        .collect();
    let total: f64 = size_weights.iter().sum();

    let mut seen: HashSet<Vec<bool>> = HashSet::with_capacity(n_samples);
    let mut masks = Vec::with_capacity(n_samples);
    let mut attempts = 0;
    while masks.len() < n_samples && attempts < n_samples * 20 {
        attempts += 1;
        let mut target = rng.random_range(0.0..total);
        let mut size = m - 1;
        for (idx, w) in size_weights.iter().enumerate() {
            if target < *w {
                size = idx + 1;
                break;
            }
            target -= w;
        }
        let picks = rand::seq::index::sample(rng, m, size);
        let mut mask = vec![false; m];
        for i in picks.iter() {
            mask[i] = true;
        }
        if seen.insert(mask.clone()) {
            masks.push(mask);
        }
    }
    masks
}

/// Kernel SHAP for every model output. The null output is the mean
/// prediction over the background; local accuracy
/// `phi0 + sum(phi) = f(x)` is enforced exactly by eliminating one
/// attribution through the sum constraint.
pub fn explain(
    model: &dyn BlackBoxModel,
    x: &FeatureVector,
    background: &Dataset,
    config: &ShapConfig,
) -> Result<ShapExplanation> {
    let m = x.len();
    if background.n_features() != m {
        return Err(Error::SchemaMismatch(format!(
            "background has {} features, input has {m}",
            background.n_features()
        )));
    }
    for i in 0..m {
        if background.schema().spec(i).name != x.name(i) {
            return Err(Error::SchemaMismatch(format!(
                "background feature {i} is '{}', input has '{}'",
                background.schema().spec(i).name,
                x.name(i)
            )));
        }
    }

    let fx = predict_checked(model, std::slice::from_ref(x))?.remove(0);
    let arity = fx.len();
    let phi0 = mean_outputs(&predict_checked(model, background.rows())?);

    if m == 1 {
        let outputs = (0..arity)
            .map(|o| OutputAttribution {
                output_name: fx.outputs()[o].name.clone(),
                null_output: phi0[o],
                phi: vec![fx.value(o) - phi0[o]],
                prediction: fx.value(o),
            })
            .collect();
        return Ok(ShapExplanation {
            feature_names: x.names(),
            outputs,
            coalitions_evaluated: 0,
        });
    }

    let masks = if m <= config.exhaustive_cap {
        enumerate_masks(m)
    } else {
        if config.n_samples < m {
            return Err(Error::Underdetermined {
                n_samples: config.n_samples,
                m,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        sample_masks(m, config.n_samples, &mut rng)
    };

    // Coalition values: mean model output over the background replacements.
    let mut coalition_values = Vec::with_capacity(masks.len());
    let mut weights = Vec::with_capacity(masks.len());
    for mask in &masks {
        let synthetic = synthesize(x, mask, background);
        let outputs = predict_checked(model, &synthetic)?;
        coalition_values.push(mean_outputs(&outputs));
        let size = mask.iter().filter(|&&b| b).count();
        weights.push(shap_kernel(m, size)?);
    }

    // Eliminate phi_{m-1} via the constraint sum(phi) = f(x) - phi0.
    let design: Vec<Vec<f64>> = masks
        .iter()
        .map(|mask| {
            let last = if mask[m - 1] { 1.0 } else { 0.0 };
            (0..m - 1)
                .map(|i| (if mask[i] { 1.0 } else { 0.0 }) - last)
                .collect()
        })
        .collect();

    let mut outputs = Vec::with_capacity(arity);
    for o in 0..arity {
        let excess = fx.value(o) - phi0[o];
        let targets: Vec<f64> = masks
            .iter()
            .enumerate()
            .map(|(row, mask)| {
                let last = if mask[m - 1] { 1.0 } else { 0.0 };
                coalition_values[row][o] - phi0[o] - last * excess
            })
            .collect();
        let head = linalg::weighted_least_squares(&design, &targets, &weights);
        let mut phi = head;
        let tail = excess - phi.iter().sum::<f64>();
        phi.push(tail);

        let residual = (phi0[o] + phi.iter().sum::<f64>() - fx.value(o)).abs();
        if residual > config.tolerance {
            return Err(Error::SolverTolerance { residual });
        }
        outputs.push(OutputAttribution {
            output_name: fx.outputs()[o].name.clone(),
            null_output: phi0[o],
            phi,
            prediction: fx.value(o),
        });
    }

    Ok(ShapExplanation {
        feature_names: x.names(),
        outputs,
        coalitions_evaluated: masks.len(),
    })
}

/// Uniform sample of dataset rows without replacement, seed-deterministic.
pub fn background_random(data: &Dataset, size: usize, seed: u64) -> Result<Dataset> {
    if size == 0 {
        return Err(Error::InvalidConfig("background size must be positive".into()));
    }
    if size > data.len() {
        return Err(Error::BackgroundTooLarge {
            size,
            rows: data.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = rand::seq::index::sample(&mut rng, data.len(), size);
    let rows: Vec<FeatureVector> = picks.iter().map(|i| data.rows()[i].clone()).collect();
    Dataset::new(data.schema().clone(), rows, None)
}

/// K-means cluster centers of the dataset taken as background rows.
/// Restricted to all-numeric schemas.
pub fn background_kmeans(data: &Dataset, k: usize, seed: u64) -> Result<Dataset> {
    if let Some(spec) = data
        .schema()
        .specs()
        .iter()
        .find(|s| !matches!(s.kind, crate::model::DomainKind::Numeric { .. }))
    {
        return Err(Error::KMeansOnCategorical(spec.name.clone()));
    }
    if k == 0 || k > data.len() {
        return Err(Error::InvalidConfig(format!(
            "k = {k} outside 1..={}",
            data.len()
        )));
    }
    let points: Vec<Vec<f64>> = data
        .rows()
        .iter()
        .map(|r| r.numerics())
        .collect::<Result<_>>()?;
    let result = kmeans::lloyd(&points, k, seed, 100, 1e-6);
    let names: Vec<String> = data
        .schema()
        .specs()
        .iter()
        .map(|s| s.name.clone())
        .collect();
    let rows: Vec<FeatureVector> = result
        .centers
        .iter()
        .map(|c| {
            FeatureVector::from_features_unchecked(
                names
                    .iter()
                    .zip(c)
                    .map(|(n, &v)| Feature::numeric(n.clone(), v))
                    .collect(),
            )
        })
        .collect();
    Dataset::new(data.schema().clone(), rows, None)
}

/// Settings for counterfactual background generation.
#[derive(Debug, Clone, Serialize)]
pub struct CfBackgroundConfig {
    /// Output tolerance for `f(x_cf) ~ reference`.
    pub tolerance: f64,
    pub solver: SolverConfig,
    /// Perturbation strength applied to each seed before searching.
    pub noise_ratio: f64,
}

impl CfBackgroundConfig {
    pub fn new(tolerance: f64) -> Self {
        CfBackgroundConfig {
            tolerance,
            solver: SolverConfig::desk(),
            noise_ratio: 0.01,
        }
    }
}

/// Background rows generated by counterfactual search, plus the success
/// accounting (failed searches are dropped, not retried).
#[derive(Debug, Clone)]
pub struct CfBackground {
    pub dataset: Dataset,
    pub attempted: usize,
    pub succeeded: usize,
}

/// Picks the `s` dataset rows whose outputs sit nearest the reference,
/// perturbs each seed `n` times, and runs a counterfactual search from every
/// perturbed copy towards the reference output.
pub fn background_counterfactual(
    model: &dyn BlackBoxModel,
    data: &Dataset,
    reference: &OutputVector,
    s: usize,
    n: usize,
    config: &CfBackgroundConfig,
) -> Result<CfBackground> {
    if s == 0 || n == 0 {
        return Err(Error::InvalidConfig("need s >= 1 seeds and n >= 1 per seed".into()));
    }
    if s > data.len() {
        return Err(Error::BackgroundTooLarge {
            size: s,
            rows: data.len(),
        });
    }
    let outputs = predict_checked(model, data.rows())?;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let dist = |o: &OutputVector| -> f64 {
        o.outputs()
            .iter()
            .zip(reference.outputs())
            .map(|(got, want)| (got.value - want.value) * (got.value - want.value))
            .sum()
    };
    order.sort_by(|&a, &b| {
        dist(&outputs[a])
            .partial_cmp(&dist(&outputs[b]))
            .unwrap()
            .then(a.cmp(&b))
    });

    let goal = CfGoal::new(reference.clone(), config.tolerance);
    let mut rows = Vec::new();
    let mut attempted = 0;
    for (slot, &row_idx) in order[..s].iter().enumerate() {
        let seed_row = &data.rows()[row_idx];
        for attempt in 0..n {
            attempted += 1;
            let derived = config
                .solver
                .seed
                .wrapping_add((slot * n + attempt + 1) as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(derived);
            let perturbed = lime::perturb(
                seed_row,
                1,
                1,
                config.noise_ratio,
                data.schema(),
                &mut rng,
            )?
            .remove(0);
            let solver = SolverConfig {
                seed: derived,
                ..config.solver.clone()
            };
            let result =
                counterfactual::search(model, &perturbed, data.schema(), &goal, &solver, None)?;
            if result.valid {
                rows.push(result.counterfactual);
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::NoBackgroundGenerated);
    }
    let succeeded = rows.len();
    Ok(CfBackground {
        dataset: Dataset::new(data.schema().clone(), rows, None)?,
        attempted,
        succeeded,
    })
}

/// Which background strategy to run.
#[derive(Debug, Clone)]
pub enum BackgroundSpec {
    Random {
        size: usize,
        seed: u64,
    },
    KMeans {
        k: usize,
        seed: u64,
    },
    Counterfactual {
        reference: OutputVector,
        seeds: usize,
        per_seed: usize,
        config: CfBackgroundConfig,
    },
    Explicit(Dataset),
}

pub fn generate_background(
    spec: &BackgroundSpec,
    model: &dyn BlackBoxModel,
    data: &Dataset,
) -> Result<Dataset> {
    match spec {
        BackgroundSpec::Random { size, seed } => background_random(data, *size, *seed),
        BackgroundSpec::KMeans { k, seed } => background_kmeans(data, *k, *seed),
        BackgroundSpec::Counterfactual {
            reference,
            seeds,
            per_seed,
            config,
        } => Ok(background_counterfactual(model, data, reference, *seeds, *per_seed, config)?.dataset),
        BackgroundSpec::Explicit(ds) => Ok(ds.clone()),
    }
}
