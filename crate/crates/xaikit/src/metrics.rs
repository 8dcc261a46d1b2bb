//! Evaluation metrics for feature attributions and counterfactuals:
//! faithfulness, monotonicity, remove-and-retrain variants, exact Shapley
//! ground truth, infidelity, impact score, stability indices, and the
//! counterfactual proximity/sparsity pair.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{
    mad_per_feature, predict_checked, BlackBoxModel, Dataset, FeatureDomain, FeatureValue,
    FeatureVector,
};
use crate::models::{retrain_without_feature, LinearModel};
use crate::shap::synthesize;
use crate::stats::pearson;

/// How a "removed" feature's value is filled in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Replacement {
    DatasetMean,
    DomainMidpoint,
}

/// How marginal contributions are estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginalEstimator {
    Exclusion(Replacement),
    /// Requires a retrain-capable model; see [`roar_variants`].
    Retrain,
}

/// A named metric value with its sample count and configuration snapshot.
#[derive(Debug, Clone, Serialize)]
pub struct MetricReport {
    pub name: String,
    pub value: f64,
    pub n: usize,
    pub config: serde_json::Value,
}

fn replacement_value(replacement: Replacement, data: &Dataset, index: usize) -> Result<f64> {
    match replacement {
        Replacement::DatasetMean => {
            let col = data.column_numeric(index)?;
            Ok(col.iter().sum::<f64>() / col.len() as f64)
        }
        Replacement::DomainMidpoint => data.schema().midpoint(index),
    }
}

/// Approximate marginal contribution of each feature at `x` for output 0:
/// `c_i = f(x) - f(x with feature i replaced)`, the replacement being the
/// dataset mean (averaged over all supplied rows) or the domain midpoint.
pub fn marginal_contributions(
    model: &dyn BlackBoxModel,
    x: &FeatureVector,
    estimator: MarginalEstimator,
    data: &Dataset,
) -> Result<Vec<f64>> {
    let replacement = match estimator {
        MarginalEstimator::Exclusion(r) => r,
        MarginalEstimator::Retrain => {
            return Err(Error::InvalidConfig(
                "retrain estimator needs a retrainable linear model; use roar_variants".into(),
            ))
        }
    };
    let m = x.len();
    let mut batch = Vec::with_capacity(m + 1);
    batch.push(x.clone());
    for i in 0..m {
        let v = replacement_value(replacement, data, i)?;
        batch.push(x.with_value(i, FeatureValue::Numeric(v)));
    }
    let outputs = predict_checked(model, &batch)?;
    let fx = outputs[0].value(0);
    Ok((0..m).map(|i| fx - outputs[i + 1].value(0)).collect())
}

/// Pearson correlation between attributions and marginal contributions.
pub fn faithfulness(
    w: &[f64],
    model: &dyn BlackBoxModel,
    x: &FeatureVector,
    estimator: MarginalEstimator,
    data: &Dataset,
) -> Result<f64> {
    let c = marginal_contributions(model, x, estimator, data)?;
    pearson(w, &c)
}

/// Fraction of adjacent attribution-sorted pairs whose marginal
/// contributions strictly decrease. Sorting is by `w` descending with ties
/// broken by feature index.
pub fn monotonicity_of(w: &[f64], c: &[f64]) -> f64 {
    assert!(w.len() >= 2, "monotonicity needs at least two features");
    let mut idx: Vec<usize> = (0..w.len()).collect();
    idx.sort_by(|&a, &b| w[b].partial_cmp(&w[a]).unwrap().then(a.cmp(&b)));
    let decreasing = idx
        .windows(2)
        .filter(|pair| c[pair[0]] > c[pair[1]])
        .count();
    decreasing as f64 / (idx.len() - 1) as f64
}

pub fn monotonicity(
    w: &[f64],
    model: &dyn BlackBoxModel,
    x: &FeatureVector,
    estimator: MarginalEstimator,
    data: &Dataset,
) -> Result<f64> {
    let c = marginal_contributions(model, x, estimator, data)?;
    Ok(monotonicity_of(w, &c))
}

/// Remove-and-retrain marginal contributions:
/// `c_i = E[f(x)] - E[f*_i(x)]` over the dataset, with `f*_i` a fresh
/// closed-form refit excluding feature `i`.
pub fn roar_marginals(
    model: &LinearModel,
    data: &Dataset,
    labels: &[f64],
) -> Result<Vec<f64>> {
    let base = predict_checked(model, data.rows())?;
    let base_mean = base.iter().map(|o| o.value(0)).sum::<f64>() / base.len() as f64;
    (0..data.n_features())
        .map(|i| {
            let refit = retrain_without_feature(model, data, labels, i)?;
            let preds = predict_checked(&refit, data.rows())?;
            let refit_mean = preds.iter().map(|o| o.value(0)).sum::<f64>() / preds.len() as f64;
            Ok(base_mean - refit_mean)
        })
        .collect()
}

/// Faithfulness and monotonicity computed against retrain-based marginals.
pub fn roar_variants(
    w: &[f64],
    model: &LinearModel,
    data: &Dataset,
    labels: &[f64],
) -> Result<(f64, f64)> {
    let c = roar_marginals(model, data, labels)?;
    Ok((pearson(w, &c)?, monotonicity_of(w, &c)))
}

fn next_permutation(arr: &mut [usize]) -> bool {
    if arr.len() < 2 {
        return false;
    }
    let mut i = arr.len() - 1;
    while i > 0 && arr[i - 1] >= arr[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = arr.len() - 1;
    while arr[j] <= arr[i - 1] {
        j -= 1;
    }
    arr.swap(i - 1, j);
    arr[i..].reverse();
    true
}

const EXACT_SHAPLEY_CAP: usize = 10;

/// Exact Shapley values for one output by walking every feature ordering
/// and accumulating marginal background-replacement gains. Coalition values
/// are memoised, so the model sees each of the `2^M` coalitions once.
pub fn ground_truth_shapley(
    model: &dyn BlackBoxModel,
    x: &FeatureVector,
    background: &Dataset,
    output_index: usize,
) -> Result<Vec<f64>> {
    let m = x.len();
    if m > EXACT_SHAPLEY_CAP {
        return Err(Error::ShapleyCapExceeded {
            m,
            cap: EXACT_SHAPLEY_CAP,
        });
    }
    let mut cache: Vec<Option<f64>> = vec![None; 1 << m];
    let mut coalition_value = |mask: usize| -> Result<f64> {
        if let Some(v) = cache[mask] {
            return Ok(v);
        }
        let bits: Vec<bool> = (0..m).map(|i| mask & (1 << i) != 0).collect();
        let synthetic = synthesize(x, &bits, background);
        let outputs = predict_checked(model, &synthetic)?;
        let v = outputs.iter().map(|o| o.value(output_index)).sum::<f64>()
            / outputs.len() as f64;
        cache[mask] = Some(v);
        Ok(v)
    };

    let mut perm: Vec<usize> = (0..m).collect();
    let mut phi = vec![0.0; m];
    let mut orderings = 0u64;
    loop {
        let mut mask = 0usize;
        let mut prev = coalition_value(0)?;
        for &idx in &perm {
            mask |= 1 << idx;
            let cur = coalition_value(mask)?;
            phi[idx] += cur - prev;
            prev = cur;
        }
        orderings += 1;
        if !next_permutation(&mut perm) {
            break;
        }
    }
    for p in phi.iter_mut() {
        *p /= orderings as f64;
    }
    Ok(phi)
}

/// Pearson correlation against the exact Shapley values.
pub fn shapley_correlation(w: &[f64], exact: &[f64]) -> Result<f64> {
    pearson(w, exact)
}

/// Mean squared error against the exact Shapley values.
pub fn shapley_mse(w: &[f64], exact: &[f64]) -> f64 {
    w.iter()
        .zip(exact)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / w.len() as f64
}

#[derive(Debug, Clone, Serialize)]
pub struct InfidelityConfig {
    /// Perturbation sigma as a fraction of each feature's domain range.
    pub noise_scale: f64,
    pub n_perturbations: usize,
    pub seed: u64,
}

impl Default for InfidelityConfig {
    fn default() -> Self {
        InfidelityConfig {
            noise_scale: 0.1,
            n_perturbations: 100,
            seed: 0,
        }
    }
}

/// `E[((dx . w) - (f(x) - f(x - dx)))^2]` under Gaussian perturbations of
/// the input, clamped to the domain (the realized `dx` is used).
pub fn infidelity(
    w: &[f64],
    model: &dyn BlackBoxModel,
    x: &FeatureVector,
    domain: &FeatureDomain,
    config: &InfidelityConfig,
) -> Result<f64> {
    let m = x.len();
    let values = x.numerics()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let fx = predict_checked(model, std::slice::from_ref(x))?[0].value(0);

    let mut perturbed = Vec::with_capacity(config.n_perturbations);
    let mut deltas = Vec::with_capacity(config.n_perturbations);
    for _ in 0..config.n_perturbations {
        let mut candidate = x.clone();
        let mut dx = vec![0.0; m];
        for i in 0..m {
            let sigma = config.noise_scale * domain.range(i)?;
            let draw = if sigma > 0.0 {
                Normal::new(0.0, sigma)
                    .map_err(|e| Error::InvalidConfig(e.to_string()))?
                    .sample(&mut rng)
            } else {
                0.0
            };
            let moved = domain.clamp_numeric(i, values[i] - draw);
            dx[i] = values[i] - moved;
            candidate = candidate.with_value(i, FeatureValue::Numeric(moved));
        }
        perturbed.push(candidate);
        deltas.push(dx);
    }
    let outputs = predict_checked(model, &perturbed)?;
    let mut total = 0.0;
    for (dx, out) in deltas.iter().zip(&outputs) {
        let projected: f64 = dx.iter().zip(w).map(|(d, wi)| d * wi).sum();
        let observed = fx - out.value(0);
        total += (projected - observed) * (projected - observed);
    }
    Ok(total / config.n_perturbations as f64)
}

/// Ranks features by `|w|` (ties by index), replaces the top `k` in `x`,
/// re-predicts, and reports whether the prediction flipped or its score at
/// least halved. For models exposing a confidence the score is the
/// confidence and a label change counts; for plain regressors only the
/// score-halving test applies.
pub fn impact_indicator(
    w: &[f64],
    model: &dyn BlackBoxModel,
    x: &FeatureVector,
    k: usize,
    replacement: Replacement,
    data: &Dataset,
) -> Result<bool> {
    let m = x.len();
    assert!(k >= 1 && k <= m, "k must be in 1..=M");
    let mut ranked: Vec<usize> = (0..m).collect();
    ranked.sort_by(|&a, &b| w[b].abs().partial_cmp(&w[a].abs()).unwrap().then(a.cmp(&b)));

    let mut masked = x.clone();
    for &i in ranked.iter().take(k) {
        let v = replacement_value(replacement, data, i)?;
        masked = masked.with_value(i, FeatureValue::Numeric(v));
    }
    let outputs = predict_checked(model, &[x.clone(), masked])?;
    let (before, after) = (&outputs[0], &outputs[1]);
    match before.confidence(0) {
        Some(z) => {
            let label_changed = after.value(0) != before.value(0);
            let z_after = after.confidence(0).unwrap_or(0.0);
            Ok(label_changed || z_after <= 0.5 * z)
        }
        None => {
            let z = before.value(0);
            Ok(after.value(0) <= 0.5 * z)
        }
    }
}

/// Mean of per-input impact indicators.
pub fn impact_score(indicators: &[bool]) -> f64 {
    if indicators.is_empty() {
        return 0.0;
    }
    indicators.iter().filter(|&&b| b).count() as f64 / indicators.len() as f64
}

/// Default relative band for coefficient agreement in [`stability_indices`].
pub const CSI_DEFAULT_BAND: f64 = 0.1;

/// Runs the explainer `runs` times (the closure receives the run index and
/// returns one coefficient vector) and reports:
///
/// - VSI: mean pairwise Jaccard similarity of the top-`k` feature sets,
/// - CSI: mean over features of the fraction of run pairs whose
///   coefficients agree within `band` of that feature's coefficient range.
pub fn stability_indices<F>(
    mut run: F,
    runs: usize,
    top_k: usize,
    band: f64,
) -> Result<(f64, f64)>
where
    F: FnMut(usize) -> Result<Vec<f64>>,
{
    if runs < 2 {
        return Err(Error::InvalidConfig("stability needs at least 2 runs".into()));
    }
    let mut coefficient_runs = Vec::with_capacity(runs);
    for r in 0..runs {
        coefficient_runs.push(run(r)?);
    }
    let m = coefficient_runs[0].len();
    if top_k == 0 || top_k > m {
        return Err(Error::InvalidConfig(format!("top_k {top_k} outside 1..={m}")));
    }

    let top_sets: Vec<Vec<usize>> = coefficient_runs
        .iter()
        .map(|coefs| {
            let mut idx: Vec<usize> = (0..m).collect();
            idx.sort_by(|&a, &b| {
                coefs[b]
                    .abs()
                    .partial_cmp(&coefs[a].abs())
                    .unwrap()
                    .then(a.cmp(&b))
            });
            let mut top: Vec<usize> = idx.into_iter().take(top_k).collect();
            top.sort_unstable();
            top
        })
        .collect();

    let mut jaccard_sum = 0.0;
    let mut pairs = 0usize;
    for a in 0..runs {
        for b in (a + 1)..runs {
            let inter = top_sets[a]
                .iter()
                .filter(|i| top_sets[b].contains(i))
                .count();
            let union = top_k * 2 - inter;
            jaccard_sum += inter as f64 / union as f64;
            pairs += 1;
        }
    }
    let vsi = jaccard_sum / pairs as f64;

    let mut csi_sum = 0.0;
    for feature in 0..m {
        let column: Vec<f64> = coefficient_runs.iter().map(|c| c[feature]).collect();
        let lo = column.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = column.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let tolerance = band * (hi - lo);
        let mut agree = 0usize;
        for a in 0..runs {
            for b in (a + 1)..runs {
                if (column[a] - column[b]).abs() <= tolerance {
                    agree += 1;
                }
            }
        }
        csi_sum += agree as f64 / pairs as f64;
    }
    let csi = csi_sum / m as f64;
    Ok((vsi, csi))
}

/// Negated mean MAD-weighted L1 distance over `(x, x')` pairs; 0 when every
/// counterfactual equals its original, negative otherwise.
pub fn cf_proximity(pairs: &[(FeatureVector, FeatureVector)], data: &Dataset) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mad = mad_per_feature(data)?;
    let mut total = 0.0;
    for (x, x_prime) in pairs {
        let m = x.len() as f64;
        let mut d = 0.0;
        for p in 0..x.len() {
            d += (x.numeric(p)? - x_prime.numeric(p)?).abs() / mad[p];
        }
        total += d / m;
    }
    Ok(-(total / pairs.len() as f64))
}

/// `1 -` the mean changed-feature fraction over pairs; numeric changes are
/// detected with a `1e-9` tolerance.
pub fn cf_sparsity(pairs: &[(FeatureVector, FeatureVector)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut changed_fraction = 0.0;
    for (x, x_prime) in pairs {
        let changed = (0..x.len())
            .filter(|&i| match (x.value(i), x_prime.value(i)) {
                (FeatureValue::Numeric(a), FeatureValue::Numeric(b)) => (a - b).abs() > 1e-9,
                (FeatureValue::Categorical(a), FeatureValue::Categorical(b)) => a != b,
                _ => true,
            })
            .count();
        changed_fraction += changed as f64 / x.len() as f64;
    }
    Ok(1.0 - changed_fraction / pairs.len() as f64)
}
