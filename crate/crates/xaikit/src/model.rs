//! Features, datasets, the black-box model contract, and CSV ingestion.
//!
//! Every other module depends only on the types defined here. All types are
//! immutable after construction and safe to share across threads.

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A single feature value: a finite real or a symbol from a finite set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FeatureValue {
    Numeric(f64),
    Categorical(String),
}

impl FeatureValue {
    pub fn as_numeric(&self) -> Option<f64> {
        match self {
            FeatureValue::Numeric(v) => Some(*v),
            FeatureValue::Categorical(_) => None,
        }
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self, FeatureValue::Numeric(_))
    }
}

/// A named feature inside a [`FeatureVector`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feature {
    pub name: String,
    pub value: FeatureValue,
}

impl Feature {
    pub fn numeric(name: impl Into<String>, value: f64) -> Self {
        Feature {
            name: name.into(),
            value: FeatureValue::Numeric(value),
        }
    }

    pub fn categorical(name: impl Into<String>, value: impl Into<String>) -> Self {
        Feature {
            name: name.into(),
            value: FeatureValue::Categorical(value.into()),
        }
    }
}

/// An ordered, named input point. Names are unique and order-stable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    features: Vec<Feature>,
}

impl FeatureVector {
    pub fn new(features: Vec<Feature>) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::SchemaMismatch(
                "feature vector must hold at least one feature".into(),
            ));
        }
        for (i, f) in features.iter().enumerate() {
            if let FeatureValue::Numeric(v) = f.value {
                if !v.is_finite() {
                    return Err(Error::DomainViolation(format!(
                        "feature '{}' has non-finite value {v}",
                        f.name
                    )));
                }
            }
            if features[..i].iter().any(|g| g.name == f.name) {
                return Err(Error::SchemaMismatch(format!(
                    "duplicate feature name '{}'",
                    f.name
                )));
            }
        }
        Ok(FeatureVector { features })
    }

    /// Builds a vector of numeric features named `f0..f{n-1}`.
    pub fn from_numeric_slice(values: &[f64]) -> Result<Self> {
        FeatureVector::new(
            values
                .iter()
                .enumerate()
                .map(|(i, &v)| Feature::numeric(format!("f{i}"), v))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    pub fn value(&self, index: usize) -> &FeatureValue {
        &self.features[index].value
    }

    pub fn name(&self, index: usize) -> &str {
        &self.features[index].name
    }

    pub fn names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }

    pub fn numeric(&self, index: usize) -> Result<f64> {
        self.features[index].value.as_numeric().ok_or_else(|| {
            Error::SchemaMismatch(format!(
                "feature '{}' is categorical, expected numeric",
                self.features[index].name
            ))
        })
    }

    pub fn numerics(&self) -> Result<Vec<f64>> {
        (0..self.len()).map(|i| self.numeric(i)).collect()
    }

    /// Returns a copy with feature `index` replaced.
    pub fn with_value(&self, index: usize, value: FeatureValue) -> Self {
        let mut features = self.features.clone();
        features[index].value = value;
        FeatureVector { features }
    }

    pub(crate) fn from_features_unchecked(features: Vec<Feature>) -> Self {
        FeatureVector { features }
    }
}

/// The admissible range of one feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DomainKind {
    /// Half-open interval `[lower, upper)`.
    Numeric { lower: f64, upper: f64 },
    /// Finite, non-empty candidate set.
    Categorical { values: Vec<String> },
}

/// Per-feature domain declaration plus mutability for counterfactual search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: DomainKind,
    #[serde(default = "default_mutable")]
    pub mutable: bool,
}

fn default_mutable() -> bool {
    true
}

impl FeatureSpec {
    pub fn numeric(name: impl Into<String>, lower: f64, upper: f64) -> Self {
        FeatureSpec {
            name: name.into(),
            kind: DomainKind::Numeric { lower, upper },
            mutable: true,
        }
    }

    pub fn categorical<S: Into<String>>(name: impl Into<String>, values: Vec<S>) -> Self {
        FeatureSpec {
            name: name.into(),
            kind: DomainKind::Categorical {
                values: values.into_iter().map(Into::into).collect(),
            },
            mutable: true,
        }
    }

    pub fn immutable(mut self) -> Self {
        self.mutable = false;
        self
    }
}

/// Declares the feature space: bounds, candidate sets, and mutability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDomain {
    features: Vec<FeatureSpec>,
}

impl FeatureDomain {
    pub fn new(features: Vec<FeatureSpec>) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::SchemaMismatch("domain declares no features".into()));
        }
        for (i, spec) in features.iter().enumerate() {
            if features[..i].iter().any(|g| g.name == spec.name) {
                return Err(Error::SchemaMismatch(format!(
                    "duplicate feature name '{}' in domain",
                    spec.name
                )));
            }
            match &spec.kind {
                DomainKind::Numeric { lower, upper } => {
                    if !lower.is_finite() || !upper.is_finite() || lower >= upper {
                        return Err(Error::DomainViolation(format!(
                            "feature '{}': bounds [{lower}, {upper}) are invalid",
                            spec.name
                        )));
                    }
                }
                DomainKind::Categorical { values } => {
                    if values.is_empty() {
                        return Err(Error::DomainViolation(format!(
                            "feature '{}': empty candidate set",
                            spec.name
                        )));
                    }
                }
            }
        }
        Ok(FeatureDomain { features })
    }

    /// All-numeric domain from `(name, lower, upper)` triples.
    pub fn numeric(specs: &[(&str, f64, f64)]) -> Result<Self> {
        FeatureDomain::new(
            specs
                .iter()
                .map(|&(name, lo, hi)| FeatureSpec::numeric(name, lo, hi))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn spec(&self, index: usize) -> &FeatureSpec {
        &self.features[index]
    }

    pub fn specs(&self) -> &[FeatureSpec] {
        &self.features
    }

    pub fn all_numeric(&self) -> bool {
        self.features
            .iter()
            .all(|s| matches!(s.kind, DomainKind::Numeric { .. }))
    }

    pub fn mutable_indices(&self) -> Vec<usize> {
        self.features
            .iter()
            .enumerate()
            .filter(|(_, s)| s.mutable)
            .map(|(i, _)| i)
            .collect()
    }

    /// Width of a numeric feature's interval.
    pub fn range(&self, index: usize) -> Result<f64> {
        match self.features[index].kind {
            DomainKind::Numeric { lower, upper } => Ok(upper - lower),
            DomainKind::Categorical { .. } => Err(Error::SchemaMismatch(format!(
                "feature '{}' is categorical, has no numeric range",
                self.features[index].name
            ))),
        }
    }

    pub fn midpoint(&self, index: usize) -> Result<f64> {
        match self.features[index].kind {
            DomainKind::Numeric { lower, upper } => Ok(lower + (upper - lower) / 2.0),
            DomainKind::Categorical { .. } => Err(Error::SchemaMismatch(format!(
                "feature '{}' is categorical, has no midpoint",
                self.features[index].name
            ))),
        }
    }

    /// Clamps a numeric value into `[lower, upper)`.
    pub fn clamp_numeric(&self, index: usize, v: f64) -> f64 {
        match self.features[index].kind {
            DomainKind::Numeric { lower, upper } => {
                let top = prev_below(upper);
                v.max(lower).min(top)
            }
            DomainKind::Categorical { .. } => v,
        }
    }

    /// Checks that a vector conforms: names, order, kinds, bounds, candidate sets.
    pub fn check(&self, x: &FeatureVector) -> Result<()> {
        if x.len() != self.len() {
            return Err(Error::SchemaMismatch(format!(
                "vector has {} features, domain declares {}",
                x.len(),
                self.len()
            )));
        }
        for (i, spec) in self.features.iter().enumerate() {
            if x.name(i) != spec.name {
                return Err(Error::SchemaMismatch(format!(
                    "feature {i} is named '{}', domain declares '{}'",
                    x.name(i),
                    spec.name
                )));
            }
            match (&spec.kind, x.value(i)) {
                (DomainKind::Numeric { lower, upper }, FeatureValue::Numeric(v)) => {
                    if !(*v >= *lower && *v < *upper) {
                        return Err(Error::DomainViolation(format!(
                            "feature '{}': value {v} outside [{lower}, {upper})",
                            spec.name
                        )));
                    }
                }
                (DomainKind::Categorical { values }, FeatureValue::Categorical(v)) => {
                    if !values.iter().any(|c| c == v) {
                        return Err(Error::DomainViolation(format!(
                            "feature '{}': symbol '{v}' not in declared domain",
                            spec.name
                        )));
                    }
                }
                _ => {
                    return Err(Error::SchemaMismatch(format!(
                        "feature '{}': value kind does not match domain kind",
                        spec.name
                    )));
                }
            }
        }
        Ok(())
    }

    /// Draws a uniform point from the domain.
    pub fn sample_uniform<R: rand::Rng>(&self, rng: &mut R) -> FeatureVector {
        let features = self
            .features
            .iter()
            .map(|spec| Feature {
                name: spec.name.clone(),
                value: match &spec.kind {
                    DomainKind::Numeric { lower, upper } => {
                        FeatureValue::Numeric(rng.random_range(*lower..*upper))
                    }
                    DomainKind::Categorical { values } => {
                        let i = rng.random_range(0..values.len());
                        FeatureValue::Categorical(values[i].clone())
                    }
                },
            })
            .collect();
        FeatureVector::from_features_unchecked(features)
    }
}

/// Largest double strictly below `v`, used to keep clamped values inside
/// half-open intervals.
fn prev_below(v: f64) -> f64 {
    f64::from_bits(if v > 0.0 {
        v.to_bits() - 1
    } else if v < 0.0 {
        v.to_bits() + 1
    } else {
        (-f64::MIN_POSITIVE).to_bits()
    })
}

/// One model output: a finite value plus an optional confidence in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Output {
    pub name: String,
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
}

impl Output {
    pub fn new(name: impl Into<String>, value: f64) -> Self {
        Output {
            name: name.into(),
            value,
            confidence: None,
        }
    }

    pub fn with_confidence(name: impl Into<String>, value: f64, confidence: f64) -> Self {
        Output {
            name: name.into(),
            value,
            confidence: Some(confidence),
        }
    }
}

/// Ordered model outputs for one input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputVector {
    outputs: Vec<Output>,
}

impl OutputVector {
    pub fn new(outputs: Vec<Output>) -> Self {
        OutputVector { outputs }
    }

    pub fn single(name: impl Into<String>, value: f64) -> Self {
        OutputVector::new(vec![Output::new(name, value)])
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    pub fn outputs(&self) -> &[Output] {
        &self.outputs
    }

    pub fn value(&self, index: usize) -> f64 {
        self.outputs[index].value
    }

    pub fn values(&self) -> Vec<f64> {
        self.outputs.iter().map(|o| o.value).collect()
    }

    pub fn confidence(&self, index: usize) -> Option<f64> {
        self.outputs[index].confidence
    }

    fn validate(&self, batch_index: usize) -> Result<()> {
        for o in &self.outputs {
            if !o.value.is_finite() {
                return Err(Error::NonFiniteOutput {
                    index: batch_index,
                    output: o.name.clone(),
                });
            }
            if let Some(c) = o.confidence {
                if !(c.is_finite() && (0.0..=1.0).contains(&c)) {
                    return Err(Error::NonFiniteOutput {
                        index: batch_index,
                        output: o.name.clone(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// The sole model contract: a pure batch map from feature vectors to output
/// vectors. `predict` must be deterministic for fixed inputs and callable
/// concurrently; output arity is constant across calls.
pub trait BlackBoxModel: Send + Sync {
    fn predict(&self, batch: &[FeatureVector]) -> Vec<OutputVector>;

    fn output_names(&self) -> Vec<String>;

    fn output_arity(&self) -> usize {
        self.output_names().len()
    }
}

impl<M: BlackBoxModel + ?Sized> BlackBoxModel for &M {
    fn predict(&self, batch: &[FeatureVector]) -> Vec<OutputVector> {
        (**self).predict(batch)
    }

    fn output_names(&self) -> Vec<String> {
        (**self).output_names()
    }
}

/// Delegates to the model and validates the output invariants: result length
/// equals batch length, values finite, confidences in range.
///
/// A violation signals a broken model, not a toolkit bug.
pub fn predict_checked(
    model: &dyn BlackBoxModel,
    batch: &[FeatureVector],
) -> Result<Vec<OutputVector>> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let m = batch[0].len();
    for v in batch {
        if v.len() != m {
            return Err(Error::SchemaMismatch(
                "batch mixes feature vectors of different lengths".into(),
            ));
        }
    }
    let out = model.predict(batch);
    if out.len() != batch.len() {
        return Err(Error::SchemaMismatch(format!(
            "model returned {} outputs for a batch of {}",
            out.len(),
            batch.len()
        )));
    }
    for (i, o) in out.iter().enumerate() {
        o.validate(i)?;
    }
    Ok(out)
}

/// Wraps a model and counts how many individual predictions it served.
pub struct CountingModel<'a> {
    inner: &'a dyn BlackBoxModel,
    count: AtomicU64,
}

impl<'a> CountingModel<'a> {
    pub fn new(inner: &'a dyn BlackBoxModel) -> Self {
        CountingModel {
            inner,
            count: AtomicU64::new(0),
        }
    }

    pub fn count(&self) -> u64 {
        self.count.load(Ordering::Relaxed)
    }

    pub fn reset(&self) -> u64 {
        self.count.swap(0, Ordering::Relaxed)
    }
}

impl BlackBoxModel for CountingModel<'_> {
    fn predict(&self, batch: &[FeatureVector]) -> Vec<OutputVector> {
        self.count.fetch_add(batch.len() as u64, Ordering::Relaxed);
        self.inner.predict(batch)
    }

    fn output_names(&self) -> Vec<String> {
        self.inner.output_names()
    }
}

/// Rows conforming to one schema, with optional labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    schema: FeatureDomain,
    rows: Vec<FeatureVector>,
    labels: Option<Vec<OutputVector>>,
}

impl Dataset {
    pub fn new(
        schema: FeatureDomain,
        rows: Vec<FeatureVector>,
        labels: Option<Vec<OutputVector>>,
    ) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyDataset);
        }
        for row in &rows {
            schema.check(row)?;
        }
        if let Some(l) = &labels {
            if l.len() != rows.len() {
                return Err(Error::SchemaMismatch(format!(
                    "{} labels for {} rows",
                    l.len(),
                    rows.len()
                )));
            }
        }
        Ok(Dataset {
            schema,
            rows,
            labels,
        })
    }

    pub fn schema(&self) -> &FeatureDomain {
        &self.schema
    }

    pub fn rows(&self) -> &[FeatureVector] {
        &self.rows
    }

    pub fn labels(&self) -> Option<&[OutputVector]> {
        self.labels.as_deref()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.schema.len()
    }

    /// Values of one numeric column, in row order.
    pub fn column_numeric(&self, index: usize) -> Result<Vec<f64>> {
        self.rows.iter().map(|r| r.numeric(index)).collect()
    }

    pub fn column_means(&self) -> Result<Vec<f64>> {
        (0..self.n_features())
            .map(|p| {
                let col = self.column_numeric(p)?;
                Ok(col.iter().sum::<f64>() / col.len() as f64)
            })
            .collect()
    }

    /// Serializes rows back to RFC-4180 CSV. Numeric cells use the shortest
    /// representation that round-trips exactly.
    pub fn to_csv_string(&self, include_header: bool) -> String {
        let mut wtr = csv::WriterBuilder::new().from_writer(Vec::new());
        if include_header {
            let names: Vec<&str> = self.schema.specs().iter().map(|s| s.name.as_str()).collect();
            wtr.write_record(&names).expect("write to Vec cannot fail");
        }
        for row in &self.rows {
            let record: Vec<String> = row
                .features()
                .iter()
                .map(|f| match &f.value {
                    FeatureValue::Numeric(v) => format!("{v}"),
                    FeatureValue::Categorical(s) => s.clone(),
                })
                .collect();
            wtr.write_record(&record).expect("write to Vec cannot fail");
        }
        String::from_utf8(wtr.into_inner().expect("flush to Vec cannot fail"))
            .expect("csv output is utf-8")
    }
}

/// Reads a comma-separated UTF-8 file into a [`Dataset`], validating every
/// cell against the schema. Numeric parsing is locale-independent (dot
/// decimal separator). Row and column numbers in errors are 1-based over
/// data rows.
pub fn ingest_csv(path: &Path, schema: &FeatureDomain, has_header: bool) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(false)
        .from_reader(file);

    let mut rows = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let row_no = row_idx + 1;
        let record = record.map_err(|e| Error::CsvParse {
            row: row_no,
            col: 0,
            message: e.to_string(),
        })?;
        if record.len() != schema.len() {
            return Err(Error::CsvParse {
                row: row_no,
                col: record.len(),
                message: format!(
                    "found {} columns, schema declares {}",
                    record.len(),
                    schema.len()
                ),
            });
        }
        let mut features = Vec::with_capacity(schema.len());
        for (col_idx, cell) in record.iter().enumerate() {
            let spec = schema.spec(col_idx);
            let value = match &spec.kind {
                DomainKind::Numeric { .. } => {
                    let v: f64 = cell.trim().parse().map_err(|_| Error::CsvParse {
                        row: row_no,
                        col: col_idx + 1,
                        message: format!("cell '{cell}' is not a number"),
                    })?;
                    if !v.is_finite() {
                        return Err(Error::CsvParse {
                            row: row_no,
                            col: col_idx + 1,
                            message: format!("cell '{cell}' is not finite"),
                        });
                    }
                    FeatureValue::Numeric(v)
                }
                DomainKind::Categorical { .. } => FeatureValue::Categorical(cell.to_string()),
            };
            features.push(Feature {
                name: spec.name.clone(),
                value,
            });
        }
        let row = FeatureVector::from_features_unchecked(features);
        schema.check(&row)?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Dataset::new(schema.clone(), rows, None)
}

/// Per-feature mean absolute deviation: `median(|x_p - median(x_p)|)`.
///
/// A deviation of exactly 0 (constant column) is reported as 1 so that
/// MAD-weighted distances stay defined.
pub fn mad_per_feature(data: &Dataset) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    (0..data.n_features())
        .map(|p| {
            if !matches!(data.schema().spec(p).kind, DomainKind::Numeric { .. }) {
                return Err(Error::MadOnCategorical(data.schema().spec(p).name.clone()));
            }
            let col = data.column_numeric(p)?;
            let med = crate::stats::median(&col);
            let devs: Vec<f64> = col.iter().map(|v| (v - med).abs()).collect();
            let mad = crate::stats::median(&devs);
            Ok(if mad == 0.0 { 1.0 } else { mad })
        })
        .collect()
}
