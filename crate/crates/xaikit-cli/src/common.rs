//! Shared plumbing: model specs, inputs, domains, seeds, and report files.

use std::path::{Path, PathBuf};
use std::time::SystemTime;

use serde::Serialize;
use serde_json::Value;

use xaikit::model::{
    ingest_csv, BlackBoxModel, Dataset, Feature, FeatureDomain, FeatureSpec, FeatureVector,
};
use xaikit::models::{load_mlp, CreditScorerModel, LinearModel, SumModel};

/// Exit code semantics: 2 for usage/config problems, 1 for runtime failures.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => m,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

pub fn runtime(msg: impl Into<String>) -> CliError {
    CliError::Runtime(msg.into())
}

/// Seed resolution order: flag, config file, `XAIKIT_SEED`, then 42.
pub fn resolve_seed(flag: Option<u64>, config: &Value) -> u64 {
    flag.or_else(|| config.get("seed").and_then(Value::as_u64))
        .or_else(|| {
            std::env::var("XAIKIT_SEED")
                .ok()
                .and_then(|s| s.parse().ok())
        })
        .unwrap_or(42)
}

pub fn load_config_file(path: &Option<PathBuf>) -> CliResult<Value> {
    match path {
        None => Ok(Value::Object(Default::default())),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| usage(format!("cannot read config file {}: {e}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| usage(format!("config file {} is not valid JSON: {e}", p.display())))
        }
    }
}

pub fn config_u64(config: &Value, key: &str) -> Option<u64> {
    config.get(key).and_then(Value::as_u64)
}

pub fn config_f64(config: &Value, key: &str) -> Option<f64> {
    config.get(key).and_then(Value::as_f64)
}

pub fn config_str(config: &Value, key: &str) -> Option<String> {
    config.get(key).and_then(Value::as_str).map(String::from)
}

/// A loaded model plus its built-in domain when it has one.
pub struct LoadedModel {
    pub model: Box<dyn BlackBoxModel>,
    pub builtin_domain: Option<FeatureDomain>,
    pub spec: String,
}

/// Model specs: `sum`, `credit`, `linear:<file>`, `mlp:<file>`.
pub fn load_model(spec: &str) -> CliResult<LoadedModel> {
    if spec == "sum" {
        return Ok(LoadedModel {
            model: Box::new(SumModel),
            builtin_domain: None,
            spec: spec.to_string(),
        });
    }
    if spec == "credit" {
        return Ok(LoadedModel {
            model: Box::new(CreditScorerModel),
            builtin_domain: Some(CreditScorerModel::domain()),
            spec: spec.to_string(),
        });
    }
    if let Some(path) = spec.strip_prefix("linear:") {
        let model = LinearModel::load(Path::new(path))
            .map_err(|e| usage(format!("cannot load linear model from {path}: {e}")))?;
        return Ok(LoadedModel {
            model: Box::new(model),
            builtin_domain: None,
            spec: spec.to_string(),
        });
    }
    if let Some(path) = spec.strip_prefix("mlp:") {
        let model = load_mlp(Path::new(path))
            .map_err(|e| usage(format!("cannot load mlp model from {path}: {e}")))?;
        return Ok(LoadedModel {
            model: Box::new(model),
            builtin_domain: None,
            spec: spec.to_string(),
        });
    }
    Err(usage(format!(
        "unknown model spec '{spec}' (expected sum, credit, linear:<file>, or mlp:<file>)"
    )))
}

/// Parses `--input 1,2,3` into a numeric vector, naming features from the
/// domain when one is known.
pub fn parse_inline_input(
    text: &str,
    domain: Option<&FeatureDomain>,
) -> CliResult<FeatureVector> {
    let values: Vec<f64> = text
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| usage(format!("--input cell '{t}' is not a number")))
        })
        .collect::<CliResult<_>>()?;
    if values.is_empty() {
        return Err(usage("--input must hold at least one value"));
    }
    match domain {
        Some(d) => {
            if d.len() != values.len() {
                return Err(usage(format!(
                    "--input has {} values, domain declares {}",
                    values.len(),
                    d.len()
                )));
            }
            FeatureVector::new(
                d.specs()
                    .iter()
                    .zip(&values)
                    .map(|(spec, &v)| Feature::numeric(spec.name.clone(), v))
                    .collect(),
            )
            .map_err(|e| usage(e.to_string()))
        }
        None => FeatureVector::from_numeric_slice(&values).map_err(|e| usage(e.to_string())),
    }
}

/// Parses `--bounds 0:10,0:7` into a numeric domain named after the input.
pub fn parse_bounds(text: &str, names: &[String]) -> CliResult<FeatureDomain> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != names.len() {
        return Err(usage(format!(
            "--bounds declares {} ranges for {} features",
            parts.len(),
            names.len()
        )));
    }
    let mut specs = Vec::with_capacity(parts.len());
    for (part, name) in parts.iter().zip(names) {
        let (lo, hi) = part
            .split_once(':')
            .ok_or_else(|| usage(format!("--bounds entry '{part}' is not lo:hi")))?;
        let lo: f64 = lo
            .trim()
            .parse()
            .map_err(|_| usage(format!("--bounds lower '{lo}' is not a number")))?;
        let hi: f64 = hi
            .trim()
            .parse()
            .map_err(|_| usage(format!("--bounds upper '{hi}' is not a number")))?;
        specs.push(FeatureSpec::numeric(name.clone(), lo, hi));
    }
    FeatureDomain::new(specs).map_err(|e| usage(e.to_string()))
}

/// Wide fallback bounds around an input point, always containing zero so
/// that zero backgrounds stay in-domain.
pub fn derived_bounds(x: &FeatureVector) -> CliResult<FeatureDomain> {
    let specs = x
        .features()
        .iter()
        .map(|f| {
            let v = f
                .value
                .as_numeric()
                .ok_or_else(|| usage("derived bounds need numeric features; pass --schema"))?;
            let span = 10.0 * v.abs().max(1.0);
            Ok(FeatureSpec::numeric(
                f.name.clone(),
                (v - span).min(-1.0),
                (v + span).max(1.0),
            ))
        })
        .collect::<CliResult<Vec<_>>>()?;
    FeatureDomain::new(specs).map_err(|e| usage(e.to_string()))
}

/// Loads `--schema file.json` (the serialized [`FeatureDomain`] shape) and
/// re-validates it.
pub fn load_schema(path: &Path) -> CliResult<FeatureDomain> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read schema {}: {e}", path.display())))?;
    let parsed: FeatureDomain = serde_json::from_str(&text)
        .map_err(|e| usage(format!("schema {} is not valid: {e}", path.display())))?;
    FeatureDomain::new(parsed.specs().to_vec()).map_err(|e| usage(e.to_string()))
}

pub fn load_dataset(
    data: &Path,
    schema: &FeatureDomain,
    has_header: bool,
) -> CliResult<Dataset> {
    ingest_csv(data, schema, has_header).map_err(|e| {
        usage(format!(
            "cannot ingest dataset {}: {e}",
            data.display()
        ))
    })
}

/// The report envelope: a deterministic payload plus wall-clock metadata
/// kept outside it.
#[derive(Serialize)]
pub struct Report {
    pub payload: Payload,
    pub meta: Meta,
}

#[derive(Serialize)]
pub struct Payload {
    pub command: String,
    pub toolkit_version: String,
    pub config: Value,
    /// Model evaluations consumed, per phase.
    pub model_evaluations: Vec<(String, u64)>,
    pub result: Value,
}

#[derive(Serialize)]
pub struct Meta {
    pub timestamp_unix_ms: u128,
    pub duration_ms: u128,
}

impl Report {
    pub fn new(
        command: &str,
        config: Value,
        model_evaluations: Vec<(String, u64)>,
        result: Value,
        duration_ms: u128,
    ) -> Self {
        Report {
            payload: Payload {
                command: command.to_string(),
                toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
                config,
                model_evaluations,
                result,
            },
            meta: Meta {
                timestamp_unix_ms: SystemTime::now()
                    .duration_since(SystemTime::UNIX_EPOCH)
                    .map(|d| d.as_millis())
                    .unwrap_or(0),
                duration_ms,
            },
        }
    }

    pub fn write(&self, out: &Option<PathBuf>) -> CliResult<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| runtime(format!("cannot serialize report: {e}")))?;
        match out {
            Some(path) => std::fs::write(path, text)
                .map_err(|e| runtime(format!("cannot write {}: {e}", path.display()))),
            None => {
                println!("{text}");
                Ok(())
            }
        }
    }
}

pub fn to_value<T: Serialize>(value: &T) -> Value {
    serde_json::to_value(value).expect("report types serialize")
}
