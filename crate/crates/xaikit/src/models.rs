//! Deterministic built-in models used as explanation targets and test
//! oracles.
//!
//! These replace trained gradient-boosting / neural models at desk scale:
//! they are pure, cheap, and their attributions can be derived by hand.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{
    BlackBoxModel, Dataset, FeatureDomain, FeatureSpec, FeatureVector, Output, OutputVector,
};

fn numeric_input(x: &FeatureVector) -> Vec<f64> {
    x.numerics()
        .expect("built-in reference models require numeric features")
}

/// `f(x) = sum(x_i)`, exactly.
#[derive(Debug, Clone, Copy)]
pub struct SumModel;

impl BlackBoxModel for SumModel {
    fn predict(&self, batch: &[FeatureVector]) -> Vec<OutputVector> {
        batch
            .iter()
            .map(|x| OutputVector::single("sum", numeric_input(x).iter().sum()))
            .collect()
    }

    fn output_names(&self) -> Vec<String> {
        vec!["sum".into()]
    }
}

/// Fixed-output model, handy as a degenerate explanation target.
#[derive(Debug, Clone)]
pub struct ConstantModel {
    values: Vec<f64>,
}

impl ConstantModel {
    pub fn new(values: Vec<f64>) -> Self {
        ConstantModel { values }
    }
}

impl BlackBoxModel for ConstantModel {
    fn predict(&self, batch: &[FeatureVector]) -> Vec<OutputVector> {
        batch
            .iter()
            .map(|_| {
                OutputVector::new(
                    self.values
                        .iter()
                        .enumerate()
                        .map(|(i, &v)| Output::new(format!("out_{i}"), v))
                        .collect(),
                )
            })
            .collect()
    }

    fn output_names(&self) -> Vec<String> {
        (0..self.values.len()).map(|i| format!("out_{i}")).collect()
    }
}

/// `f(x) = bias + w . x`; with the logistic link enabled the output also
/// carries `confidence = 1 / (1 + exp(-f(x)))`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    #[serde(default)]
    pub logistic: bool,
}

impl LinearModel {
    pub fn new(weights: Vec<f64>, bias: f64) -> Self {
        LinearModel {
            weights,
            bias,
            logistic: false,
        }
    }

    pub fn with_logistic_link(mut self) -> Self {
        self.logistic = true;
        self
    }

    pub fn raw(&self, values: &[f64]) -> f64 {
        assert_eq!(
            values.len(),
            self.weights.len(),
            "linear model expects {} features",
            self.weights.len()
        );
        self.bias
            + self
                .weights
                .iter()
                .zip(values)
                .map(|(w, v)| w * v)
                .sum::<f64>()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| Error::ModelFormat(e.to_string()))
    }
}

impl BlackBoxModel for LinearModel {
    fn predict(&self, batch: &[FeatureVector]) -> Vec<OutputVector> {
        batch
            .iter()
            .map(|x| {
                let v = self.raw(&numeric_input(x));
                if self.logistic {
                    OutputVector::new(vec![Output::with_confidence(
                        "y",
                        v,
                        1.0 / (1.0 + (-v).exp()),
                    )])
                } else {
                    OutputVector::single("y", v)
                }
            })
            .collect()
    }

    fn output_names(&self) -> Vec<String> {
        vec!["y".into()]
    }
}

/// Closed-form least-squares refit of a [`LinearModel`] with one feature
/// column dropped; the excluded coefficient is fixed at zero.
pub fn retrain_without_feature(
    model: &LinearModel,
    data: &Dataset,
    labels: &[f64],
    excluded: usize,
) -> Result<LinearModel> {
    let m = data.n_features();
    assert!(excluded < m, "excluded feature index out of range");
    if labels.len() != data.len() {
        return Err(Error::SchemaMismatch(format!(
            "{} labels for {} rows",
            labels.len(),
            data.len()
        )));
    }
    if data.len() < m {
        return Err(Error::DegenerateDesign);
    }
    let kept: Vec<usize> = (0..m).filter(|&i| i != excluded).collect();
    let p = kept.len() + 1;
    let mut xtx = vec![vec![0.0; p]; p];
    let mut xty = vec![0.0; p];
    for (row, &y) in data.rows().iter().zip(labels) {
        let mut design = Vec::with_capacity(p);
        design.push(1.0);
        for &j in &kept {
            design.push(row.numeric(j)?);
        }
        for i in 0..p {
            xty[i] += design[i] * y;
            for j in 0..p {
                xtx[i][j] += design[i] * design[j];
            }
        }
    }
    let beta = linalg::solve_strict(xtx, xty).ok_or(Error::DegenerateDesign)?;
    let mut weights = vec![0.0; m];
    for (slot, &j) in kept.iter().enumerate() {
        weights[j] = beta[slot + 1];
    }
    Ok(LinearModel {
        weights,
        bias: beta[0],
        logistic: model.logistic,
    })
}

/// Hand-authored piecewise credit-approval scorer over
/// `{Age, Debt, YearsEmployed, Income}`.
///
/// The marginal over Debt (other features fixed) is deliberately
/// non-monotone: a high-approval zone below a low debt threshold, a denial
/// band, and a second moderate-approval zone past an upper change point
/// whose position shifts with the other features. Emits a 0/1 label and a
/// confidence for the emitted label in `[0.5, 0.98]`.
#[derive(Debug, Clone, Copy)]
pub struct CreditScorerModel;

impl CreditScorerModel {
    pub const DEBT_LOW_CHANGE_POINT: f64 = 0.7;

    /// Upper Debt change point for the reference probe input
    /// `(21, 3.5, 5, 100)`.
    pub const DEBT_HIGH_CHANGE_POINT: f64 = 4.0;

    /// Search ranges for the four features, all mutable.
    pub fn domain() -> FeatureDomain {
        FeatureDomain::new(vec![
            FeatureSpec::numeric("Age", 18.0, 80.0),
            FeatureSpec::numeric("Debt", 0.0, 7.0),
            FeatureSpec::numeric("YearsEmployed", 0.0, 30.0),
            FeatureSpec::numeric("Income", 0.0, 300.0),
        ])
        .unwrap()
    }

    /// Approval probability; the decision boundary sits at 0.5.
    pub fn approval_score(age: f64, debt: f64, years: f64, income: f64) -> f64 {
        let upper = (4.0 - 0.09 * (years - 5.0) - 0.006 * (income - 100.0)
            + 0.01 * (age - 21.0))
            .clamp(1.2, 6.8);
        let base = if debt < Self::DEBT_LOW_CHANGE_POINT {
            0.74
        } else if debt < upper {
            0.38
        } else {
            0.56
        };
        let mut bonus = 0.0_f64;
        if years >= 10.0 {
            bonus += 0.04;
        }
        if income >= 200.0 {
            bonus += 0.03;
        }
        if age >= 45.0 {
            bonus += 0.02;
        }
        if years < 1.0 {
            bonus -= 0.06;
        }
        if income < 15.0 {
            bonus -= 0.05;
        }
        (base + bonus).clamp(0.02, 0.98)
    }
}

impl BlackBoxModel for CreditScorerModel {
    fn predict(&self, batch: &[FeatureVector]) -> Vec<OutputVector> {
        batch
            .iter()
            .map(|x| {
                let v = numeric_input(x);
                assert_eq!(v.len(), 4, "credit scorer expects 4 features");
                let score = Self::approval_score(v[0], v[1], v[2], v[3]);
                let label = if score >= 0.5 { 1.0 } else { 0.0 };
                let confidence = score.max(1.0 - score);
                OutputVector::new(vec![Output::with_confidence("approved", label, confidence)])
            })
            .collect()
    }

    fn output_names(&self) -> Vec<String> {
        vec!["approved".into()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    /// Slope fixed at 0.01.
    LeakyRelu,
    Logistic,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::LeakyRelu => {
                if v >= 0.0 {
                    v
                } else {
                    0.01 * v
                }
            }
            Activation::Logistic => 1.0 / (1.0 + (-v).exp()),
        }
    }
}

/// One dense layer: `rows x cols` weight matrix (row-major) plus bias,
/// followed by the layer's activation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpLayer {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

/// Inference-only multilayer perceptron with weights loaded from file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixedMlpModel {
    pub layers: Vec<MlpLayer>,
}

impl FixedMlpModel {
    pub fn new(layers: Vec<MlpLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::ModelFormat("mlp declares no layers".into()));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.rows == 0 || layer.cols == 0 {
                return Err(Error::ModelFormat(format!("layer {i} has a zero dimension")));
            }
            if layer.weights.len() != layer.rows * layer.cols {
                return Err(Error::ModelFormat(format!(
                    "layer {i}: {} weights for a {}x{} matrix",
                    layer.weights.len(),
                    layer.rows,
                    layer.cols
                )));
            }
            if layer.bias.len() != layer.rows {
                return Err(Error::ModelFormat(format!(
                    "layer {i}: {} bias terms for {} rows",
                    layer.bias.len(),
                    layer.rows
                )));
            }
        }
        for i in 1..layers.len() {
            if layers[i].cols != layers[i - 1].rows {
                return Err(Error::LayerMismatch {
                    first: i - 1,
                    first_dim: layers[i - 1].rows,
                    second: i,
                    second_dim: layers[i].cols,
                });
            }
        }
        Ok(FixedMlpModel { layers })
    }

    pub fn input_arity(&self) -> usize {
        self.layers[0].cols
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        assert_eq!(
            input.len(),
            self.input_arity(),
            "mlp expects {} inputs",
            self.input_arity()
        );
        let mut current = input.to_vec();
        for layer in &self.layers {
            let mut next = Vec::with_capacity(layer.rows);
            for r in 0..layer.rows {
                let mut acc = layer.bias[r];
                for c in 0..layer.cols {
                    acc += layer.weights[r * layer.cols + c] * current[c];
                }
                next.push(layer.activation.apply(acc));
            }
            current = next;
        }
        current
    }
}

impl BlackBoxModel for FixedMlpModel {
    fn predict(&self, batch: &[FeatureVector]) -> Vec<OutputVector> {
        batch
            .iter()
            .map(|x| {
                let out = self.forward(&numeric_input(x));
                OutputVector::new(
                    out.iter()
                        .enumerate()
                        .map(|(i, &v)| Output::new(format!("out_{i}"), v))
                        .collect(),
                )
            })
            .collect()
    }

    fn output_names(&self) -> Vec<String> {
        (0..self.layers.last().unwrap().rows)
            .map(|i| format!("out_{i}"))
            .collect()
    }
}

/// Parses the JSON weight file documented in the repository README:
/// `{"layers": [{"rows", "cols", "weights", "bias", "activation"}]}`.
pub fn load_mlp(path: &Path) -> Result<FixedMlpModel> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let parsed: FixedMlpModel =
        serde_json::from_str(&text).map_err(|e| Error::ModelFormat(e.to_string()))?;
    FixedMlpModel::new(parsed.layers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::predict_checked;
    use rand::Rng;
    use rand::SeedableRng;
    use std::io::Write;

    fn fv(values: &[f64]) -> FeatureVector {
        FeatureVector::from_numeric_slice(values).unwrap()
    }

    #[test]
    fn one_layer_identity_relu() {
        let mlp = FixedMlpModel::new(vec![MlpLayer {
            rows: 2,
            cols: 2,
            weights: vec![1.0, 0.0, 0.0, 1.0],
            bias: vec![0.0, 0.0],
            activation: Activation::Relu,
        }])
        .unwrap();
        assert_eq!(mlp.forward(&[1.0, -2.0]), vec![1.0, 0.0]);
    }

    #[test]
    fn mismatched_layers_name_both_layers() {
        let err = FixedMlpModel::new(vec![
            MlpLayer {
                rows: 3,
                cols: 4,
                weights: vec![0.0; 12],
                bias: vec![0.0; 3],
                activation: Activation::Relu,
            },
            MlpLayer {
                rows: 2,
                cols: 5,
                weights: vec![0.0; 10],
                bias: vec![0.0; 2],
                activation: Activation::Relu,
            },
        ])
        .unwrap_err();
        match err {
            Error::LayerMismatch {
                first,
                first_dim,
                second,
                second_dim,
            } => {
                assert_eq!((first, first_dim, second, second_dim), (0, 3, 1, 5));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    /// Independent nested-loop forward pass used as the oracle below.
    fn brute_force_forward(mlp: &FixedMlpModel, input: &[f64]) -> Vec<f64> {
        let mut current = input.to_vec();
        for layer in &mlp.layers {
            let mut next = vec![0.0; layer.rows];
            for r in 0..layer.rows {
                next[r] = layer.bias[r];
                for c in 0..layer.cols {
                    next[r] += layer.weights[r * layer.cols + c] * current[c];
                }
                next[r] = match layer.activation {
                    Activation::Relu => next[r].max(0.0),
                    Activation::LeakyRelu => {
                        if next[r] >= 0.0 {
                            next[r]
                        } else {
                            0.01 * next[r]
                        }
                    }
                    Activation::Logistic => 1.0 / (1.0 + (-next[r]).exp()),
                };
            }
            current = next;
        }
        current
    }

    #[test]
    fn two_layer_net_matches_manual_product() {
        let mlp = FixedMlpModel::new(vec![
            MlpLayer {
                rows: 2,
                cols: 2,
                weights: vec![1.0, 2.0, 0.0, -1.0],
                bias: vec![0.5, -0.5],
                activation: Activation::Relu,
            },
            MlpLayer {
                rows: 1,
                cols: 2,
                weights: vec![1.0, 1.0],
                bias: vec![0.25],
                activation: Activation::Logistic,
            },
        ])
        .unwrap();
        let input = [1.0, 2.0];
        // Layer 1: [1*1 + 2*2 + 0.5, 0*1 - 1*2 - 0.5] = [5.5, -2.5] -> relu [5.5, 0]
        // Layer 2: 5.5 + 0 + 0.25 = 5.75 -> logistic
        let expected = 1.0 / (1.0 + (-5.75_f64).exp());
        let got = mlp.forward(&input);
        assert!((got[0] - expected).abs() < 1e-12);
        let oracle = brute_force_forward(&mlp, &input);
        assert!((got[0] - oracle[0]).abs() < 1e-12);
    }

    #[test]
    fn random_small_nets_match_brute_force() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let depth = rng.random_range(1..=3usize);
            let mut dims: Vec<usize> = (0..depth).map(|_| rng.random_range(1..=4usize)).collect();
            dims.push(rng.random_range(1..=3usize));
            let mut layers = Vec::new();
            for w in dims.windows(2) {
                let (cols, rows) = (w[0], w[1]);
                layers.push(MlpLayer {
                    rows,
                    cols,
                    weights: (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect(),
                    bias: (0..rows).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    activation: [Activation::Relu, Activation::LeakyRelu, Activation::Logistic]
                        [rng.random_range(0..3usize)],
                });
            }
            let mlp = FixedMlpModel::new(layers).unwrap();
            let input: Vec<f64> = (0..mlp.input_arity())
                .map(|_| rng.random_range(-3.0..3.0))
                .collect();
            let got = mlp.forward(&input);
            let want = brute_force_forward(&mlp, &input);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn load_mlp_round_trips_through_json() {
        let mlp = FixedMlpModel::new(vec![MlpLayer {
            rows: 1,
            cols: 2,
            weights: vec![2.0, 3.0],
            bias: vec![1.0],
            activation: Activation::Relu,
        }])
        .unwrap();
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(serde_json::to_string(&mlp).unwrap().as_bytes())
            .unwrap();
        let loaded = load_mlp(f.path()).unwrap();
        assert_eq!(loaded.forward(&[1.0, 1.0]), vec![6.0]);
    }

    fn four_row_dataset() -> (Dataset, Vec<f64>) {
        let rows = vec![
            fv(&[0.0, 1.0]),
            fv(&[1.0, -1.0]),
            fv(&[2.0, 1.0]),
            fv(&[3.0, -1.0]),
        ];
        let labels: Vec<f64> = rows
            .iter()
            .map(|r| 2.0 * r.numeric(0).unwrap() + 3.0 * r.numeric(1).unwrap())
            .collect();
        let schema = FeatureDomain::numeric(&[("f0", -10.0, 10.0), ("f1", -10.0, 10.0)]).unwrap();
        (Dataset::new(schema, rows, None).unwrap(), labels)
    }

    #[test]
    fn retrain_excluding_informative_feature_matches_hand_solution() {
        // Normal equations on the 4-row design by hand:
        // X'X = [[4, 6], [6, 14]], X'y = [12, 22] => bias 1.8, slope 0.8.
        let (data, labels) = four_row_dataset();
        let model = LinearModel::new(vec![2.0, 3.0], 0.0);
        let refit = retrain_without_feature(&model, &data, &labels, 1).unwrap();
        assert!((refit.bias - 1.8).abs() < 1e-9);
        assert!((refit.weights[0] - 0.8).abs() < 1e-9);
        assert_eq!(refit.weights[1], 0.0);
        // Residual is nonzero because x1 is not constant.
        let residual: f64 = data
            .rows()
            .iter()
            .zip(&labels)
            .map(|(r, y)| (refit.raw(&r.numerics().unwrap()) - y).powi(2))
            .sum();
        assert!(residual > 1.0);
    }

    #[test]
    fn retrain_excluding_zero_weight_feature_changes_nothing() {
        let rows = vec![
            fv(&[0.0, 5.0]),
            fv(&[1.0, -2.0]),
            fv(&[2.0, 3.0]),
            fv(&[3.0, 0.5]),
        ];
        let labels: Vec<f64> = rows.iter().map(|r| 4.0 * r.numeric(0).unwrap() + 1.0).collect();
        let schema = FeatureDomain::numeric(&[("f0", -10.0, 10.0), ("f1", -10.0, 10.0)]).unwrap();
        let data = Dataset::new(schema, rows, None).unwrap();
        let model = LinearModel::new(vec![4.0, 0.0], 1.0);
        let refit = retrain_without_feature(&model, &data, &labels, 1).unwrap();
        assert!((refit.weights[0] - 4.0).abs() < 1e-9);
        assert!((refit.bias - 1.0).abs() < 1e-9);
    }

    #[test]
    fn retrain_single_feature_model_collapses_to_label_mean() {
        let rows = vec![fv(&[1.0]), fv(&[2.0]), fv(&[3.0])];
        let labels = vec![2.0, 4.0, 9.0];
        let schema = FeatureDomain::numeric(&[("f0", 0.0, 10.0)]).unwrap();
        let data = Dataset::new(schema, rows, None).unwrap();
        let model = LinearModel::new(vec![1.0], 0.0);
        let refit = retrain_without_feature(&model, &data, &labels, 0).unwrap();
        assert!((refit.bias - 5.0).abs() < 1e-9);
        assert_eq!(refit.weights, vec![0.0]);
    }

    #[test]
    fn retrain_on_constant_column_is_degenerate() {
        let rows = vec![fv(&[1.0, 1.0]), fv(&[1.0, 2.0]), fv(&[1.0, 3.0])];
        let schema = FeatureDomain::numeric(&[("f0", 0.0, 10.0), ("f1", 0.0, 10.0)]).unwrap();
        let data = Dataset::new(schema, rows, None).unwrap();
        let model = LinearModel::new(vec![1.0, 1.0], 0.0);
        // Excluding f1 leaves the constant f0 column, collinear with the intercept.
        let err = retrain_without_feature(&model, &data, &[1.0, 2.0, 3.0], 1).unwrap_err();
        assert!(matches!(err, Error::DegenerateDesign));
    }

    #[test]
    fn logistic_link_reports_sigmoid_confidence() {
        let model = LinearModel::new(vec![1.0], 0.0).with_logistic_link();
        let out = predict_checked(&model, &[fv(&[2.0])]).unwrap();
        assert_eq!(out[0].value(0), 2.0);
        let expected = 1.0 / (1.0 + (-2.0_f64).exp());
        assert!((out[0].confidence(0).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn credit_scorer_emits_binary_label_and_calibrated_confidence() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let domain = CreditScorerModel::domain();
        for _ in 0..500 {
            let x = domain.sample_uniform(&mut rng);
            let out = predict_checked(&CreditScorerModel, &[x]).unwrap();
            let label = out[0].value(0);
            let conf = out[0].confidence(0).unwrap();
            assert!(label == 0.0 || label == 1.0);
            assert!((0.5..=1.0).contains(&conf));
        }
    }

    #[test]
    fn debt_marginal_crosses_the_decision_boundary_at_least_twice() {
        // Sweep Debt with the other features fixed at the probe input.
        let mut labels = Vec::new();
        for step in 0..700 {
            let debt = step as f64 * 0.01;
            let x = FeatureVector::new(vec![
                crate::model::Feature::numeric("Age", 21.0),
                crate::model::Feature::numeric("Debt", debt),
                crate::model::Feature::numeric("YearsEmployed", 5.0),
                crate::model::Feature::numeric("Income", 100.0),
            ])
            .unwrap();
            labels.push(CreditScorerModel.predict(&[x])[0].value(0));
        }
        let crossings = labels.windows(2).filter(|w| w[0] != w[1]).count();
        assert!(crossings >= 2, "expected >= 2 change points, got {crossings}");
    }

    #[test]
    fn probe_input_is_denied_with_expected_confidence() {
        let x = FeatureVector::new(vec![
            crate::model::Feature::numeric("Age", 21.0),
            crate::model::Feature::numeric("Debt", 3.5),
            crate::model::Feature::numeric("YearsEmployed", 5.0),
            crate::model::Feature::numeric("Income", 100.0),
        ])
        .unwrap();
        let out = CreditScorerModel.predict(&[x]);
        assert_eq!(out[0].value(0), 0.0);
        assert!((out[0].confidence(0).unwrap() - 0.62).abs() < 1e-12);
    }
}
