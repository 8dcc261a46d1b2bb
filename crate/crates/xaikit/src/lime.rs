//! Training-data-free local saliency explanations.
//!
//! The pipeline: perturb the input without any training data, escalate the
//! perturbation variance until the sampled predictions separate, encode the
//! samples into closeness bits, filter by proximity, fit a weighted linear
//! surrogate, and damp poorly balanced features with a tanh penalty.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{
    predict_checked, BlackBoxModel, DomainKind, FeatureDomain, FeatureValue, FeatureVector,
    OutputVector,
};
use crate::stats;

/// All tunables of the explainer. Defaults follow the reference settings:
/// `balance_tau = 0.01`, `balance_rho = 10`, `proximity_kappa = 0.8`,
/// `noise_ratio = 0.01`.
#[derive(Debug, Clone, Serialize)]
pub struct LimeConfig {
    /// Initial sampling dataset size `z`.
    pub samples: usize,
    /// Minimum number of features perturbed per sample.
    pub min_perturbed: usize,
    pub balance_tau: f64,
    pub balance_rho: f64,
    pub proximity_kappa: f64,
    /// The class balance must land strictly inside
    /// `(threshold, 1 - threshold)` for a sampling round to count as
    /// separable.
    pub separability_threshold: f64,
    /// Gaussian sigma as a fraction of the perturbed value's magnitude.
    pub noise_ratio: f64,
    /// Maximum number of dataset doublings after the initial round.
    pub max_variance_rounds: usize,
    pub rng_seed: u64,
}

impl Default for LimeConfig {
    fn default() -> Self {
        LimeConfig {
            samples: 300,
            min_perturbed: 1,
            balance_tau: 0.01,
            balance_rho: 10.0,
            proximity_kappa: 0.8,
            separability_threshold: 0.1,
            noise_ratio: 0.01,
            max_variance_rounds: 6,
            rng_seed: 0,
        }
    }
}

impl LimeConfig {
    pub fn with_seed(seed: u64) -> Self {
        LimeConfig {
            rng_seed: seed,
            ..LimeConfig::default()
        }
    }

    fn validate(&self, m: usize) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::InvalidConfig("samples must be positive".into()));
        }
        if self.min_perturbed == 0 || self.min_perturbed > m {
            return Err(Error::InvalidConfig(format!(
                "min_perturbed {} outside 1..={m}",
                self.min_perturbed
            )));
        }
        if !(0.0..=1.0).contains(&self.proximity_kappa) {
            return Err(Error::InvalidConfig(
                "proximity_kappa must be in [0, 1]".into(),
            ));
        }
        if self.noise_ratio <= 0.0 {
            return Err(Error::InvalidConfig("noise_ratio must be positive".into()));
        }
        if !(self.separability_threshold > 0.0 && self.separability_threshold < 0.5) {
            return Err(Error::InvalidConfig(
                "separability_threshold must be in (0, 0.5)".into(),
            ));
        }
        Ok(())
    }
}

/// A perturbed sample in sparse (encoded) and raw form.
#[derive(Debug, Clone)]
pub struct SparseSample {
    /// Closeness bit per feature: 1 when the sample stayed within one scaled
    /// sigma of the original value.
    pub encoded: Vec<bool>,
    pub raw: FeatureVector,
    pub output: OutputVector,
    /// `exp(-||x - s||^2 / M)` over standard-scaled features, 1 at `x`.
    pub proximity: f64,
}

/// Final sampling dataset produced by the adaptive-variance loop.
#[derive(Debug, Clone)]
pub struct AdaptiveDataset {
    pub samples: Vec<SparseSample>,
    /// Binarized output class per sample: agreement with the original
    /// prediction, or (for continuous outputs) a deviation within the median
    /// absolute deviation from it.
    pub classes: Vec<bool>,
    /// Fraction of samples in the `true` class on the final round.
    pub class_balance: f64,
    /// Set when even the last escalation failed the separability check.
    pub nonseparable: bool,
    /// Number of failed rounds; each one doubled the dataset and raised
    /// `min_perturbed` by one (capped at `M - 1`).
    pub doublings: usize,
    pub final_min_perturbed: usize,
}

/// Per-feature saliency: raw regression weight `w`, balance penalty `eta`,
/// and the reported weight `w' = w * eta`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Saliency {
    pub output_name: String,
    pub feature_names: Vec<String>,
    pub weights: Vec<f64>,
    pub penalties: Vec<f64>,
    pub adjusted_weights: Vec<f64>,
    pub nonseparable: bool,
    pub filter_fallback: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SaliencyRow {
    pub feature: String,
    pub weight: f64,
    pub penalty: f64,
    pub adjusted_weight: f64,
    pub rank: usize,
}

impl Saliency {
    /// Feature indices ordered by `|w'|` descending; ties break by feature
    /// index ascending.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.adjusted_weights.len()).collect();
        idx.sort_by(|&a, &b| {
            self.adjusted_weights[b]
                .abs()
                .partial_cmp(&self.adjusted_weights[a].abs())
                .unwrap()
                .then(a.cmp(&b))
        });
        idx
    }

    pub fn report(&self) -> Vec<SaliencyRow> {
        let ranking = self.ranking();
        let mut rank_of = vec![0; ranking.len()];
        for (rank, &feature) in ranking.iter().enumerate() {
            rank_of[feature] = rank;
        }
        (0..self.feature_names.len())
            .map(|i| SaliencyRow {
                feature: self.feature_names[i].clone(),
                weight: self.weights[i],
                penalty: self.penalties[i],
                adjusted_weight: self.adjusted_weights[i],
                rank: rank_of[i],
            })
            .collect()
    }
}

/// Draws `count` perturbed copies of `x`. Each copy perturbs a uniformly
/// chosen subset of at least `min_perturbed` features: numeric values are
/// redrawn from `Normal(v, noise_ratio * |v|)` clamped to the domain (sigma
/// falls back to `noise_ratio` when `v = 0`), categorical values are
/// resampled uniformly from the domain excluding the current symbol.
pub fn perturb<R: Rng>(
    x: &FeatureVector,
    count: usize,
    min_perturbed: usize,
    noise_ratio: f64,
    domain: &FeatureDomain,
    rng: &mut R,
) -> Result<Vec<FeatureVector>> {
    let m = x.len();
    if min_perturbed == 0 || min_perturbed > m {
        return Err(Error::InvalidConfig(format!(
            "min_perturbed {min_perturbed} outside 1..={m}"
        )));
    }
    if count == 0 {
        return Err(Error::InvalidConfig("sample count must be positive".into()));
    }
    // The subset is uniform over all subsets of size >= min_perturbed:
    // size drawn with binomial weights, then a uniform subset of that size.
    // Size-first sampling would anti-correlate the per-feature bits and
    // confound the surrogate fit.
    let size_weights: Vec<f64> = (min_perturbed..=m).map(|k| binomial(m, k)).collect();
    let total_weight: f64 = size_weights.iter().sum();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut target = rng.random_range(0.0..total_weight);
        let mut k = m;
        for (offset, w) in size_weights.iter().enumerate() {
            if target < *w {
                k = min_perturbed + offset;
                break;
            }
            target -= w;
        }
        let chosen = rand::seq::index::sample(rng, m, k);
        let mut sample = x.clone();
        for i in chosen.iter() {
            match x.value(i) {
                FeatureValue::Numeric(v) => {
                    let sigma = if *v == 0.0 {
                        noise_ratio
                    } else {
                        noise_ratio * v.abs()
                    };
                    let dist = Normal::new(*v, sigma)
                        .map_err(|e| Error::InvalidConfig(format!("bad perturbation: {e}")))?;
                    let drawn = dist.sample(rng);
                    sample =
                        sample.with_value(i, FeatureValue::Numeric(domain.clamp_numeric(i, drawn)));
                }
                FeatureValue::Categorical(current) => {
                    if let DomainKind::Categorical { values } = &domain.spec(i).kind {
                        let others: Vec<&String> =
                            values.iter().filter(|v| *v != current).collect();
                        if !others.is_empty() {
                            let pick = others[rng.random_range(0..others.len())].clone();
                            sample = sample.with_value(i, FeatureValue::Categorical(pick));
                        }
                    }
                }
            }
        }
        out.push(sample);
    }
    Ok(out)
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    let mut acc = 1.0_f64;
    for i in 0..k {
        acc *= (n - i) as f64 / (i + 1) as f64;
    }
    acc
}

enum ScaledColumn {
    /// Standard-scaled original value and per-sample values.
    Numeric { scaled_x: f64, scaled: Vec<f64> },
    /// Equality with the original symbol, per sample.
    Categorical { matches: Vec<bool> },
    /// Zero-variance column: every sample equals the original value.
    Constant,
}

fn scaled_columns(x: &FeatureVector, samples: &[FeatureVector]) -> Result<Vec<ScaledColumn>> {
    let m = x.len();
    for s in samples {
        if s.len() != m {
            return Err(Error::SchemaMismatch(
                "perturbed sample width differs from input".into(),
            ));
        }
    }
    let mut cols = Vec::with_capacity(m);
    for p in 0..m {
        match x.value(p) {
            FeatureValue::Numeric(xv) => {
                let mut column = Vec::with_capacity(samples.len() + 1);
                column.push(*xv);
                for s in samples {
                    column.push(s.numeric(p)?);
                }
                let mean = stats::mean(&column);
                let sd = stats::std_dev(&column);
                if sd <= 1e-300 {
                    cols.push(ScaledColumn::Constant);
                } else {
                    let scaled: Vec<f64> = column[1..].iter().map(|v| (v - mean) / sd).collect();
                    cols.push(ScaledColumn::Numeric {
                        scaled_x: (xv - mean) / sd,
                        scaled,
                    });
                }
            }
            FeatureValue::Categorical(xv) => {
                let matches = samples
                    .iter()
                    .map(|s| match s.value(p) {
                        FeatureValue::Categorical(sv) => sv == xv,
                        FeatureValue::Numeric(_) => false,
                    })
                    .collect();
                cols.push(ScaledColumn::Categorical { matches });
            }
        }
    }
    Ok(cols)
}

/// Sparse-encodes samples against the original input. Per numeric feature
/// the column of `{x} U samples` is standard-scaled, a Gaussian kernel is
/// centred on the scaled original, and the bit is 1 iff the kernel value at
/// the sample stays within one scaled sigma of the kernel's peak value.
/// Categorical features encode equality. A zero-variance column encodes as
/// all ones.
pub fn encode(x: &FeatureVector, samples: &[FeatureVector]) -> Result<Vec<Vec<bool>>> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let cols = scaled_columns(x, samples)?;
    let cutoff = 1.0 - (-0.5_f64).exp();
    let mut bits = vec![vec![false; x.len()]; samples.len()];
    for (p, col) in cols.iter().enumerate() {
        match col {
            ScaledColumn::Numeric { scaled_x, scaled } => {
                let theta = gaussian_kernel(*scaled_x, *scaled_x);
                for (i, sv) in scaled.iter().enumerate() {
                    bits[i][p] = (gaussian_kernel(*sv, *scaled_x) - theta).abs() <= cutoff * theta;
                }
            }
            ScaledColumn::Categorical { matches } => {
                for (i, &same) in matches.iter().enumerate() {
                    bits[i][p] = same;
                }
            }
            ScaledColumn::Constant => {
                for row in bits.iter_mut() {
                    row[p] = true;
                }
            }
        }
    }
    Ok(bits)
}

fn gaussian_kernel(t: f64, mu: f64) -> f64 {
    (-(t - mu) * (t - mu) / 2.0).exp()
}

fn proximities(x: &FeatureVector, samples: &[FeatureVector]) -> Result<Vec<f64>> {
    let m = x.len() as f64;
    let cols = scaled_columns(x, samples)?;
    let mut sq = vec![0.0; samples.len()];
    for col in &cols {
        match col {
            ScaledColumn::Numeric { scaled_x, scaled } => {
                for (i, sv) in scaled.iter().enumerate() {
                    let d = sv - scaled_x;
                    sq[i] += d * d;
                }
            }
            ScaledColumn::Categorical { matches } => {
                // A symbol flip embeds at half the one-sigma encoding
                // radius; a full sigma would push every flipped sample
                // below kappa = 0.8 for small M and blind the surrogate to
                // categorical features.
                for (i, &same) in matches.iter().enumerate() {
                    if !same {
                        sq[i] += 0.25;
                    }
                }
            }
            ScaledColumn::Constant => {}
        }
    }
    Ok(sq.iter().map(|d| (-d / m).exp()).collect())
}

/// Binarizes sampled outputs against the original prediction. Outputs taking
/// at most two distinct values classify by exact agreement with the
/// original; continuous outputs split at the median absolute deviation from
/// it.
fn binarize_outputs(values: &[f64], origin: f64) -> Vec<bool> {
    let mut distinct: Vec<f64> = values
        .iter()
        .copied()
        .chain(std::iter::once(origin))
        .collect();
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    distinct.dedup();
    if distinct.len() <= 2 {
        values.iter().map(|v| *v == origin).collect()
    } else {
        let devs: Vec<f64> = values.iter().map(|v| (v - origin).abs()).collect();
        let h = stats::median(&devs);
        devs.iter().map(|d| *d <= h).collect()
    }
}

/// Generates the sampling dataset, escalating the perturbation variance
/// while the class balance fails the separability check: each failed round
/// doubles the dataset size and perturbs one more feature per sample
/// (capped at `M - 1`). Never fails on nonseparable data; after the cap the
/// last dataset is returned with `nonseparable` set.
pub fn adaptive_sample(
    model: &dyn BlackBoxModel,
    x: &FeatureVector,
    output_index: usize,
    config: &LimeConfig,
    domain: &FeatureDomain,
) -> Result<AdaptiveDataset> {
    let m = x.len();
    config.validate(m)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let origin = predict_checked(model, std::slice::from_ref(x))?[0].value(output_index);

    let omega_cap = m.saturating_sub(1).max(1);
    let mut z = config.samples;
    let mut omega = config.min_perturbed.min(omega_cap);
    let mut doublings = 0;
    loop {
        let raw = perturb(x, z, omega, config.noise_ratio, domain, &mut rng)?;
        let outputs = predict_checked(model, &raw)?;
        let values: Vec<f64> = outputs.iter().map(|o| o.value(output_index)).collect();
        let classes = binarize_outputs(&values, origin);
        let balance = classes.iter().filter(|&&c| c).count() as f64 / classes.len() as f64;
        let separable = balance > config.separability_threshold
            && balance < 1.0 - config.separability_threshold;

        if separable || doublings == config.max_variance_rounds {
            let bits = encode(x, &raw)?;
            let prox = proximities(x, &raw)?;
            let samples = raw
                .into_iter()
                .zip(outputs)
                .zip(bits)
                .zip(&prox)
                .map(|(((raw, output), encoded), &proximity)| SparseSample {
                    encoded,
                    raw,
                    output,
                    proximity,
                })
                .collect();
            return Ok(AdaptiveDataset {
                samples,
                classes,
                class_balance: balance,
                nonseparable: !separable,
                doublings,
                final_min_perturbed: omega,
            });
        }
        doublings += 1;
        z *= 2;
        omega = (omega + 1).min(omega_cap);
    }
}

fn filter_indices(prox: &[f64], min_keep: usize, kappa: f64) -> (Vec<usize>, bool) {
    let keep: Vec<usize> = (0..prox.len()).filter(|&i| prox[i] >= kappa).collect();
    if keep.len() >= min_keep {
        return (keep, false);
    }
    let mut order: Vec<usize> = (0..prox.len()).collect();
    order.sort_by(|&a, &b| prox[b].partial_cmp(&prox[a]).unwrap().then(a.cmp(&b)));
    let mut chosen: Vec<usize> = order.into_iter().take(min_keep.min(prox.len())).collect();
    chosen.sort_unstable();
    (chosen, true)
}

/// Keeps samples with proximity at least `kappa`. When fewer than `M + 1`
/// survive, falls back to the `M + 1` highest-proximity samples and reports
/// the fallback in the second return value.
pub fn proximity_filter(samples: &[SparseSample], kappa: f64) -> (Vec<SparseSample>, bool) {
    if samples.is_empty() {
        return (Vec::new(), false);
    }
    let m = samples[0].encoded.len();
    let prox: Vec<f64> = samples.iter().map(|s| s.proximity).collect();
    let (idx, fallback) = filter_indices(&prox, m + 1, kappa);
    (
        idx.into_iter().map(|i| samples[i].clone()).collect(),
        fallback,
    )
}

/// Penalty `eta_k` damping features whose bits are balanced across the two
/// output classes. With both classes present:
/// `b_{o,k} = (1/|E|) * sum of feature-k bits over class-o samples`,
/// `d_{o,k} = |0.5 - b_{o,k}|`, and
/// `eta_k = tanh(tau + d_{0,k} + d_{1,k} + M / rho)`.
/// With a class missing, the maximal-distance case `tanh(tau + 1 + M / rho)`
/// applies.
pub fn balance_penalty(
    bits: &[Vec<bool>],
    classes: &[bool],
    m: usize,
    tau: f64,
    rho: f64,
) -> Vec<f64> {
    assert_eq!(bits.len(), classes.len(), "one class per encoded sample");
    let n = bits.len() as f64;
    let has_false = classes.iter().any(|c| !c);
    let has_true = classes.iter().any(|c| *c);
    (0..m)
        .map(|k| {
            if !(has_false && has_true) {
                return (tau + 1.0 + m as f64 / rho).tanh();
            }
            let mut b0 = 0.0;
            let mut b1 = 0.0;
            for (row, &class) in bits.iter().zip(classes) {
                if row[k] {
                    if class {
                        b1 += 1.0;
                    } else {
                        b0 += 1.0;
                    }
                }
            }
            let d0 = (0.5 - b0 / n).abs();
            let d1 = (0.5 - b1 / n).abs();
            (tau + d0 + d1 + m as f64 / rho).tanh()
        })
        .collect()
}

/// Runs the full pipeline for one output and returns the per-feature
/// saliency. Deterministic for a fixed `config.rng_seed`.
///
/// The surrogate is a proximity-weighted least-squares fit of the model
/// output on the standard-scaled feature values (closeness bits for
/// categorical features); the encoded bits drive the balance penalty.
pub fn explain(
    model: &dyn BlackBoxModel,
    x: &FeatureVector,
    output_index: usize,
    config: &LimeConfig,
    domain: &FeatureDomain,
) -> Result<Saliency> {
    let m = x.len();
    let dataset = adaptive_sample(model, x, output_index, config, domain)?;
    let prox: Vec<f64> = dataset.samples.iter().map(|s| s.proximity).collect();
    let (kept, filter_fallback) = filter_indices(&prox, m + 1, config.proximity_kappa);
    if kept.len() < m + 1 {
        return Err(Error::InsufficientSamples {
            got: kept.len(),
            need: m + 1,
        });
    }

    let raws: Vec<FeatureVector> = dataset.samples.iter().map(|s| s.raw.clone()).collect();
    let design_cols = scaled_columns(x, &raws)?;

    let mut rows = Vec::with_capacity(kept.len());
    let mut targets = Vec::with_capacity(kept.len());
    let mut weights = Vec::with_capacity(kept.len());
    let mut kept_bits = Vec::with_capacity(kept.len());
    let mut kept_classes = Vec::with_capacity(kept.len());
    for &i in &kept {
        let s = &dataset.samples[i];
        let mut row = Vec::with_capacity(m + 1);
        row.push(1.0);
        for col in &design_cols {
            row.push(match col {
                ScaledColumn::Numeric { scaled, .. } => scaled[i],
                ScaledColumn::Categorical { matches } => {
                    if matches[i] {
                        1.0
                    } else {
                        0.0
                    }
                }
                ScaledColumn::Constant => 0.0,
            });
        }
        rows.push(row);
        targets.push(s.output.value(output_index));
        weights.push(s.proximity);
        kept_bits.push(s.encoded.clone());
        kept_classes.push(dataset.classes[i]);
    }

    let beta = linalg::weighted_least_squares(&rows, &targets, &weights);
    let w = beta[1..].to_vec();
    let eta = balance_penalty(
        &kept_bits,
        &kept_classes,
        m,
        config.balance_tau,
        config.balance_rho,
    );
    let adjusted: Vec<f64> = w.iter().zip(&eta).map(|(wk, ek)| wk * ek).collect();

    Ok(Saliency {
        output_name: model.output_names()[output_index].clone(),
        feature_names: x.names(),
        weights: w,
        penalties: eta,
        adjusted_weights: adjusted,
        nonseparable: dataset.nonseparable,
        filter_fallback,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Feature, FeatureSpec};
    use crate::models::{ConstantModel, LinearModel, SumModel};

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

    #[test]
    fn perturb_matches_target_gaussian_statistics() {
        let x = fv(&[100.0]);
        let domain = FeatureDomain::numeric(&[("f0", -1e6, 1e6)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let samples = perturb(&x, 1000, 1, 0.01, &domain, &mut rng).unwrap();
        let values: Vec<f64> = samples.iter().map(|s| s.numeric(0).unwrap()).collect();
        let mean = stats::mean(&values);
        let sd = stats::std_dev(&values);
        assert!((mean - 100.0).abs() < 1.0, "mean {mean}");
        assert!((0.5..=2.0).contains(&sd), "sd {sd}");
    }

    #[test]
    fn perturb_zero_value_uses_absolute_fallback_sigma() {
        let x = fv(&[0.0]);
        let domain = FeatureDomain::numeric(&[("f0", -10.0, 10.0)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let samples = perturb(&x, 50, 1, 0.01, &domain, &mut rng).unwrap();
        assert!(samples.iter().any(|s| s.numeric(0).unwrap() != 0.0));
    }

    #[test]
    fn perturb_two_symbol_categorical_is_forced_to_the_other() {
        let x = FeatureVector::new(vec![Feature::categorical("c", "A")]).unwrap();
        let domain =
            FeatureDomain::new(vec![FeatureSpec::categorical("c", vec!["A", "B"])]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for s in perturb(&x, 30, 1, 0.01, &domain, &mut rng).unwrap() {
            assert_eq!(s.value(0), &FeatureValue::Categorical("B".into()));
        }
    }

    #[test]
    fn perturb_rejects_min_perturbed_above_m() {
        let x = fv(&[1.0, 2.0]);
        let domain = wide_domain(2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(perturb(&x, 10, 3, 0.01, &domain, &mut rng).is_err());
    }

    #[test]
    fn encode_of_the_input_itself_is_all_ones() {
        let x = fv(&[1.0, 2.0, 3.0]);
        let bits = encode(&x, std::slice::from_ref(&x)).unwrap();
        assert_eq!(bits, vec![vec![true, true, true]]);
    }

    #[test]
    fn encode_distant_sample_clears_the_bit() {
        let x = fv(&[0.0]);
        // Cluster of close samples plus one far outlier: the outlier sits
        // several scaled sigmas away, so its kernel value falls outside the
        // one-sigma closeness band.
        let mut samples: Vec<FeatureVector> = [0.1, -0.1, 0.05, -0.05, 0.02]
            .iter()
            .map(|&v| fv(&[v]))
            .collect();
        samples.push(fv(&[50.0]));
        let bits = encode(&x, &samples).unwrap();
        assert!(bits[..5].iter().all(|b| b[0]));
        assert!(!bits[5][0]);
    }

    #[test]
    fn encode_categorical_is_equality() {
        let x = FeatureVector::new(vec![Feature::categorical("c", "A")]).unwrap();
        let same = FeatureVector::new(vec![Feature::categorical("c", "A")]).unwrap();
        let diff = FeatureVector::new(vec![Feature::categorical("c", "B")]).unwrap();
        let bits = encode(&x, &[same, diff]).unwrap();
        assert_eq!(bits, vec![vec![true], vec![false]]);
    }

    #[test]
    fn adaptive_loop_escalates_to_the_cap_on_a_constant_model() {
        let model = ConstantModel::new(vec![1.0]);
        let x = fv(&[1.0, 2.0, 3.0, 4.0]);
        let config = LimeConfig {
            samples: 10,
            max_variance_rounds: 3,
            ..LimeConfig::with_seed(7)
        };
        let ds = adaptive_sample(&model, &x, 0, &config, &wide_domain(4)).unwrap();
        assert!(ds.nonseparable);
        assert_eq!(ds.doublings, 3);
        assert_eq!(ds.samples.len(), 10 * 8);
        assert_eq!(ds.final_min_perturbed, 3);
        assert_eq!(ds.class_balance, 1.0);
    }

    #[test]
    fn adaptive_loop_passes_round_one_at_a_linear_boundary() {
        let model = LinearModel::new(vec![1.0], 0.0);
        let x = fv(&[0.0]);
        let config = LimeConfig::with_seed(11);
        let ds = adaptive_sample(&model, &x, 0, &config, &wide_domain(1)).unwrap();
        assert!(!ds.nonseparable);
        assert_eq!(ds.doublings, 0);
        assert_eq!(ds.samples.len(), 300);
    }

    #[test]
    fn adaptive_loop_caps_min_perturbed_at_m_minus_one() {
        let model = ConstantModel::new(vec![1.0]);
        let x = fv(&[1.0, 2.0]);
        let config = LimeConfig {
            samples: 5,
            max_variance_rounds: 4,
            ..LimeConfig::with_seed(2)
        };
        let ds = adaptive_sample(&model, &x, 0, &config, &wide_domain(2)).unwrap();
        assert_eq!(ds.final_min_perturbed, 1);
    }

    fn sparse(prox: f64, bits: usize) -> SparseSample {
        SparseSample {
            encoded: vec![true; bits],
            raw: fv(&vec![0.0; bits]),
            output: OutputVector::single("y", 0.0),
            proximity: prox,
        }
    }

    #[test]
    fn proximity_filter_keeps_the_close_points() {
        let samples = vec![sparse(1.0, 1), sparse(0.9, 1), sparse(0.3, 1)];
        let (kept, fallback) = proximity_filter(&samples, 0.8);
        assert_eq!(kept.len(), 2);
        assert!(!fallback);
        assert!(kept.iter().all(|s| s.proximity >= 0.8));
    }

    #[test]
    fn proximity_filter_with_zero_kappa_keeps_everything() {
        let samples: Vec<SparseSample> = (0..10).map(|i| sparse(i as f64 / 10.0, 2)).collect();
        let (kept, fallback) = proximity_filter(&samples, 0.0);
        assert_eq!(kept.len(), 10);
        assert!(!fallback);
    }

    #[test]
    fn proximity_filter_falls_back_to_top_m_plus_one() {
        let samples: Vec<SparseSample> = (0..10).map(|i| sparse(i as f64 / 100.0, 2)).collect();
        let (kept, fallback) = proximity_filter(&samples, 0.9);
        assert_eq!(kept.len(), 3);
        assert!(fallback);
        assert!((kept.last().unwrap().proximity - 0.09).abs() < 1e-12);
    }

    #[test]
    fn seeded_filter_count_sits_strictly_between_bounds() {
        let x = fv(&[10.0, 20.0, 30.0, 40.0]);
        let config = LimeConfig::with_seed(5);
        let ds = adaptive_sample(&SumModel, &x, 0, &config, &wide_domain(4)).unwrap();
        let (kept, _) = proximity_filter(&ds.samples, 0.8);
        assert!(kept.len() > 5, "kept {}", kept.len());
        assert!(kept.len() < 300, "kept {}", kept.len());
    }

    #[test]
    fn balance_penalty_matches_hand_evaluated_spots() {
        // Perfectly balanced single feature (b0 = b1 = 0.5):
        // tanh(0.01 + 0 + 0 + 1/10).
        let bits = vec![vec![true], vec![true], vec![true], vec![true]];
        let classes = vec![true, false, true, false];
        let eta = balance_penalty(&bits, &classes, 1, 0.01, 10.0);
        assert!((eta[0] - (0.11_f64).tanh()).abs() < 1e-9);

        // Maximal distances with ten features: tanh(0.01 + 0.5 + 0.5 + 1).
        let bits = vec![vec![false; 10], vec![false; 10]];
        let classes = vec![true, false];
        let eta = balance_penalty(&bits, &classes, 10, 0.01, 10.0);
        assert!((eta[0] - (2.01_f64).tanh()).abs() < 1e-9);
    }

    #[test]
    fn balance_penalty_grows_with_feature_count() {
        let bits = vec![vec![true, true], vec![false, false]];
        let classes = vec![true, false];
        let small = balance_penalty(&bits, &classes, 2, 0.01, 10.0)[0];
        let bits10 = vec![vec![true; 10], vec![false; 10]];
        let large = balance_penalty(&bits10, &classes, 10, 0.01, 10.0)[0];
        assert!(large > small);
    }

    #[test]
    fn balance_penalty_single_class_uses_maximal_distance() {
        let bits = vec![vec![true], vec![false]];
        let classes = vec![true, true];
        let eta = balance_penalty(&bits, &classes, 1, 0.01, 10.0);
        assert!((eta[0] - (0.01_f64 + 1.0 + 0.1).tanh()).abs() < 1e-12);
    }

    #[test]
    fn penalties_stay_strictly_inside_unit_interval() {
        let x = fv(&[3.0, 1.0, 2.0]);
        let saliency = explain(&SumModel, &x, 0, &LimeConfig::with_seed(9), &wide_domain(3)).unwrap();
        for (w, (eta, w2)) in saliency
            .weights
            .iter()
            .zip(saliency.penalties.iter().zip(&saliency.adjusted_weights))
        {
            assert!(*eta > 0.0 && *eta < 1.0);
            assert!(w2.abs() <= w.abs());
        }
    }

    #[test]
    fn linear_model_ranking_follows_coefficient_magnitudes() {
        let model = LinearModel::new(vec![5.0, 0.0, 1.0], 0.0);
        let x = fv(&[2.0, 2.1, 1.9]);
        let domain = wide_domain(3);
        let mut hits = 0;
        for seed in 0..20 {
            let config = LimeConfig {
                samples: 4000,
                rng_seed: seed,
                ..LimeConfig::default()
            };
            let saliency = explain(&model, &x, 0, &config, &domain).unwrap();
            if saliency.ranking() == vec![0, 2, 1] {
                hits += 1;
            }
        }
        assert!(hits >= 17, "ranking correct in only {hits}/20 runs");
    }

    #[test]
    fn monotone_model_yields_nonnegative_adjusted_weights() {
        let x = fv(&[4.0, 2.0, 3.0]);
        let config = LimeConfig {
            samples: 2000,
            ..LimeConfig::with_seed(13)
        };
        let saliency = explain(&SumModel, &x, 0, &config, &wide_domain(3)).unwrap();
        for w in &saliency.adjusted_weights {
            assert!(*w >= -1e-9, "negative weight {w}");
        }
    }

    #[test]
    fn constant_model_explains_to_zero_weights() {
        let model = ConstantModel::new(vec![1.0]);
        let x = fv(&[1.0, 2.0]);
        let config = LimeConfig {
            samples: 50,
            max_variance_rounds: 2,
            ..LimeConfig::with_seed(21)
        };
        let saliency = explain(&model, &x, 0, &config, &wide_domain(2)).unwrap();
        assert!(saliency.nonseparable);
        for w in &saliency.adjusted_weights {
            assert!(w.abs() < 1e-9);
        }
    }

    struct SymbolDrivenModel;

    impl BlackBoxModel for SymbolDrivenModel {
        fn predict(&self, batch: &[FeatureVector]) -> Vec<OutputVector> {
            batch
                .iter()
                .map(|x| {
                    let label = match x.value(1) {
                        FeatureValue::Categorical(c) if c == "on" => 1.0,
                        _ => 0.0,
                    };
                    OutputVector::single("y", label)
                })
                .collect()
        }

        fn output_names(&self) -> Vec<String> {
            vec!["y".into()]
        }
    }

    #[test]
    fn categorical_driver_dominates_the_saliency() {
        let domain = FeatureDomain::new(vec![
            FeatureSpec::numeric("amount", 0.0, 100.0),
            FeatureSpec::categorical("switch", vec!["on", "off"]),
        ])
        .unwrap();
        let x = FeatureVector::new(vec![
            Feature::numeric("amount", 50.0),
            Feature::categorical("switch", "on"),
        ])
        .unwrap();
        let config = LimeConfig {
            samples: 600,
            ..LimeConfig::with_seed(19)
        };
        let saliency = explain(&SymbolDrivenModel, &x, 0, &config, &domain).unwrap();
        assert_eq!(saliency.ranking()[0], 1, "the switch must rank first");
        assert!(saliency.adjusted_weights[1].abs() > 10.0 * saliency.adjusted_weights[0].abs());
    }

    #[test]
    fn explain_is_bit_deterministic_under_a_fixed_seed() {
        let model = LinearModel::new(vec![2.0, -1.0], 0.5);
        let x = fv(&[1.0, 3.0]);
        let config = LimeConfig::with_seed(77);
        let domain = wide_domain(2);
        let a = explain(&model, &x, 0, &config, &domain).unwrap();
        let b = explain(&model, &x, 0, &config, &domain).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn explain_errors_when_samples_cannot_cover_m_plus_one() {
        let x = fv(&[1.0, 2.0, 3.0, 4.0]);
        let config = LimeConfig {
            samples: 3,
            max_variance_rounds: 0,
            ..LimeConfig::with_seed(1)
        };
        let err = explain(&SumModel, &x, 0, &config, &wide_domain(4)).unwrap_err();
        assert!(matches!(err, Error::InsufficientSamples { .. }));
    }

    #[test]
    fn saliency_report_rows_carry_the_expected_fields() {
        let model = LinearModel::new(vec![2.0, -1.0], 0.0);
        let x = fv(&[1.0, 3.0]);
        let saliency =
            explain(&model, &x, 0, &LimeConfig::with_seed(4), &wide_domain(2)).unwrap();
        let rows = saliency.report();
        assert_eq!(rows.len(), 2);
        let json = serde_json::to_value(&rows[0]).unwrap();
        for key in ["feature", "weight", "penalty", "adjusted_weight", "rank"] {
            assert!(json.get(key).is_some(), "missing report key {key}");
        }
        let mut ranks: Vec<usize> = rows.iter().map(|r| r.rank).collect();
        ranks.sort_unstable();
        assert_eq!(ranks, vec![0, 1]);
    }

    #[test]
    fn adaptive_dataset_is_deterministic() {
        let x = fv(&[5.0, 6.0]);
        let config = LimeConfig::with_seed(3);
        let domain = wide_domain(2);
        let a = adaptive_sample(&SumModel, &x, 0, &config, &domain).unwrap();
        let b = adaptive_sample(&SumModel, &x, 0, &config, &domain).unwrap();
        assert_eq!(a.samples.len(), b.samples.len());
        for (s, t) in a.samples.iter().zip(&b.samples) {
            assert_eq!(s.raw, t.raw);
            assert_eq!(s.encoded, t.encoded);
            assert_eq!(s.proximity, t.proximity);
        }
    }
}
