//! `xaikit explain {lime|shap|cf}`: one prediction, one report.

use std::path::PathBuf;
use std::time::Instant;

use clap::Args;
use serde::Serialize;
use serde_json::Value;

use xaikit::counterfactual::{self, CfGoal, SearchStrategy, SolverConfig};
use xaikit::lime::{self, LimeConfig};
use xaikit::model::{
    BlackBoxModel, CountingModel, Dataset, FeatureDomain, FeatureVector, Output, OutputVector,
};
use xaikit::shap::{self, CfBackgroundConfig, ShapConfig};

use crate::common::{
    config_f64, config_str, config_u64, derived_bounds, load_config_file, load_dataset,
    load_model, load_schema, parse_bounds, parse_inline_input, resolve_seed, runtime, to_value,
    usage, CliResult, Report,
};

#[derive(Args, Debug)]
pub struct CommonExplainArgs {
    /// Model spec: sum | credit | linear:FILE | mlp:FILE
    #[arg(long)]
    pub model: Option<String>,
    /// Inline input, comma-separated numeric values
    #[arg(long)]
    pub input: Option<String>,
    /// Row index into --data used as the input
    #[arg(long)]
    pub input_index: Option<usize>,
    /// CSV dataset (requires --schema unless the model has a built-in domain)
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Feature domain JSON file
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Numeric bounds lo:hi per feature, comma-separated
    #[arg(long)]
    pub bounds: Option<String>,
    /// The data file starts with a header row
    #[arg(long, default_value_t = false)]
    pub has_header: bool,
    /// JSON config file; command-line flags override its keys
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Report file (stdout when omitted)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub struct ResolvedInput {
    pub model: crate::common::LoadedModel,
    pub x: FeatureVector,
    pub domain: FeatureDomain,
    pub data: Option<Dataset>,
    pub seed: u64,
    pub config: Value,
}

impl CommonExplainArgs {
    pub fn resolve(&self) -> CliResult<ResolvedInput> {
        let config = load_config_file(&self.config)?;
        let model_spec = self
            .model
            .clone()
            .or_else(|| config_str(&config, "model"))
            .ok_or_else(|| usage("--model is required"))?;
        let model = load_model(&model_spec)?;

        let schema = match &self.schema {
            Some(path) => Some(load_schema(path)?),
            None => None,
        };
        let base_domain = schema.clone().or_else(|| model.builtin_domain.clone());

        let data = match &self.data {
            Some(path) => {
                let schema = base_domain.clone().ok_or_else(|| {
                    usage("--data needs --schema or a model with a built-in domain")
                })?;
                Some(load_dataset(path, &schema, self.has_header)?)
            }
            None => None,
        };

        let input_text = self.input.clone().or_else(|| config_str(&config, "input"));
        let x = match (&input_text, self.input_index) {
            (Some(text), None) => parse_inline_input(text, base_domain.as_ref())?,
            (None, Some(idx)) => {
                let data = data
                    .as_ref()
                    .ok_or_else(|| usage("--input-index needs --data"))?;
                data.rows()
                    .get(idx)
                    .cloned()
                    .ok_or_else(|| usage(format!("--input-index {idx} outside dataset")))?
            }
            (Some(_), Some(_)) => {
                return Err(usage("pass either --input or --input-index, not both"))
            }
            (None, None) => return Err(usage("an input is required (--input or --input-index)")),
        };

        let domain = match (&self.bounds, base_domain) {
            (Some(text), _) => parse_bounds(text, &x.names())?,
            (None, Some(d)) => d,
            (None, None) => derived_bounds(&x)?,
        };
        domain
            .check(&x)
            .map_err(|e| usage(format!("input does not conform to the domain: {e}")))?;

        let seed = resolve_seed(self.seed, &config);
        Ok(ResolvedInput {
            model,
            x,
            domain,
            data,
            seed,
            config,
        })
    }
}

#[derive(Args, Debug)]
pub struct LimeArgs {
    #[command(flatten)]
    pub common: CommonExplainArgs,
    #[arg(long)]
    pub output_index: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub noise_ratio: Option<f64>,
}

#[derive(Serialize)]
struct LimeResolvedConfig {
    model: String,
    input: Vec<f64>,
    output_index: usize,
    seed: u64,
    lime: LimeConfig,
}

pub fn run_lime(args: &LimeArgs) -> CliResult<()> {
    let start = Instant::now();
    let resolved = args.common.resolve()?;
    let output_index = args
        .output_index
        .or_else(|| config_u64(&resolved.config, "output_index").map(|v| v as usize))
        .unwrap_or(0);
    let mut lime_config = LimeConfig::with_seed(resolved.seed);
    if let Some(s) = args
        .samples
        .or_else(|| config_u64(&resolved.config, "samples").map(|v| v as usize))
    {
        lime_config.samples = s;
    }
    if let Some(r) = args
        .noise_ratio
        .or_else(|| config_f64(&resolved.config, "noise_ratio"))
    {
        lime_config.noise_ratio = r;
    }

    let counting = CountingModel::new(resolved.model.model.as_ref());
    let saliency = lime::explain(
        &counting,
        &resolved.x,
        output_index,
        &lime_config,
        &resolved.domain,
    )
    .map_err(|e| runtime(format!("lime explanation failed: {e}")))?;

    let config = to_value(&LimeResolvedConfig {
        model: resolved.model.spec.clone(),
        input: resolved.x.numerics().unwrap_or_default(),
        output_index,
        seed: resolved.seed,
        lime: lime_config,
    });
    let result = serde_json::json!({
        "saliency": to_value(&saliency),
        "report_rows": to_value(&saliency.report()),
    });
    Report::new(
        "explain-lime",
        config,
        vec![("explain".into(), counting.count())],
        result,
        start.elapsed().as_millis(),
    )
    .write(&args.common.out)
}

#[derive(Args, Debug)]
pub struct ShapArgs {
    #[command(flatten)]
    pub common: CommonExplainArgs,
    /// Background strategy: zeros | full | random:N | kmeans:K |
    /// counterfactual:SEEDS,PER_SEED
    #[arg(long)]
    pub background: Option<String>,
    /// Reference output values for counterfactual backgrounds
    #[arg(long)]
    pub reference: Option<String>,
    #[arg(long)]
    pub n_samples: Option<usize>,
}

#[derive(Serialize)]
struct ShapResolvedConfig {
    model: String,
    input: Vec<f64>,
    background: String,
    seed: u64,
    shap: ShapConfig,
}

fn zeros_background(x: &FeatureVector, domain: &FeatureDomain) -> CliResult<Dataset> {
    let zeros = FeatureVector::new(
        x.features()
            .iter()
            .map(|f| xaikit::model::Feature::numeric(f.name.clone(), 0.0))
            .collect(),
    )
    .map_err(|e| usage(e.to_string()))?;
    domain
        .check(&zeros)
        .map_err(|_| usage("zeros background needs a domain containing the origin"))?;
    Dataset::new(domain.clone(), vec![zeros], None).map_err(|e| runtime(e.to_string()))
}

pub fn run_shap(args: &ShapArgs) -> CliResult<()> {
    let start = Instant::now();
    let resolved = args.common.resolve()?;
    let background_spec = args
        .background
        .clone()
        .or_else(|| config_str(&resolved.config, "background"))
        .unwrap_or_else(|| "zeros".into());
    let mut shap_config = ShapConfig::with_seed(resolved.seed);
    if let Some(n) = args
        .n_samples
        .or_else(|| config_u64(&resolved.config, "n_samples").map(|v| v as usize))
    {
        shap_config.n_samples = n;
    }

    let counting = CountingModel::new(resolved.model.model.as_ref());
    let need_data = |what: &str| {
        usage(format!(
            "background '{what}' needs --data (and --schema unless the model has a domain)"
        ))
    };
    let background_evals;
    let background = if background_spec == "zeros" {
        background_evals = 0;
        zeros_background(&resolved.x, &resolved.domain)?
    } else if background_spec == "full" {
        background_evals = 0;
        resolved.data.clone().ok_or_else(|| need_data("full"))?
    } else if let Some(n) = background_spec.strip_prefix("random:") {
        let n: usize = n
            .parse()
            .map_err(|_| usage(format!("random:<n> size '{n}' is not a number")))?;
        background_evals = 0;
        let data = resolved.data.as_ref().ok_or_else(|| need_data("random"))?;
        shap::background_random(data, n, resolved.seed).map_err(|e| runtime(e.to_string()))?
    } else if let Some(k) = background_spec.strip_prefix("kmeans:") {
        let k: usize = k
            .parse()
            .map_err(|_| usage(format!("kmeans:<k> size '{k}' is not a number")))?;
        background_evals = 0;
        let data = resolved.data.as_ref().ok_or_else(|| need_data("kmeans"))?;
        shap::background_kmeans(data, k, resolved.seed).map_err(|e| runtime(e.to_string()))?
    } else if let Some(spec) = background_spec.strip_prefix("counterfactual:") {
        let (s, n) = spec
            .split_once(',')
            .ok_or_else(|| usage("counterfactual background wants <seeds>,<per_seed>"))?;
        let s: usize = s.trim().parse().map_err(|_| usage("bad seed count"))?;
        let n: usize = n.trim().parse().map_err(|_| usage("bad per-seed count"))?;
        let data = resolved
            .data
            .as_ref()
            .ok_or_else(|| need_data("counterfactual"))?;

        let outputs = xaikit::model::predict_checked(&counting, data.rows())
            .map_err(|e| runtime(e.to_string()))?;
        let arity = outputs[0].len();
        let reference = match args
            .reference
            .clone()
            .or_else(|| config_str(&resolved.config, "reference"))
        {
            Some(text) => {
                let values: Vec<f64> = text
                    .split(',')
                    .map(|t| {
                        t.trim()
                            .parse()
                            .map_err(|_| usage(format!("--reference cell '{t}' is not a number")))
                    })
                    .collect::<CliResult<_>>()?;
                if values.len() != arity {
                    return Err(usage(format!(
                        "--reference has {} values, the model emits {arity}",
                        values.len()
                    )));
                }
                OutputVector::new(
                    counting
                        .output_names()
                        .iter()
                        .zip(&values)
                        .map(|(name, &v)| Output::new(name.clone(), v))
                        .collect(),
                )
            }
            None => {
                // Default reference: the per-output minimum over the data.
                OutputVector::new(
                    (0..arity)
                        .map(|o| {
                            let min = outputs
                                .iter()
                                .map(|ov| ov.value(o))
                                .fold(f64::INFINITY, f64::min);
                            Output::new(counting.output_names()[o].clone(), min)
                        })
                        .collect(),
                )
            }
        };
        let ranges: Vec<f64> = (0..arity)
            .map(|o| {
                let values: Vec<f64> = outputs.iter().map(|ov| ov.value(o)).collect();
                values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                    - values.iter().cloned().fold(f64::INFINITY, f64::min)
            })
            .collect();
        let tolerance = (0.01 * ranges.iter().cloned().fold(0.0_f64, f64::max)).max(1e-9);
        let mut cf_config = CfBackgroundConfig::new(tolerance);
        cf_config.solver.seed = resolved.seed;
        let generated = shap::background_counterfactual(&counting, data, &reference, s, n, &cf_config)
            .map_err(|e| runtime(e.to_string()))?;
        background_evals = counting.reset();
        generated.dataset
    } else {
        return Err(usage(format!(
            "unknown background '{background_spec}' (zeros, full, random:<n>, kmeans:<k>, counterfactual:<s>,<n>)"
        )));
    };

    let explanation = shap::explain(&counting, &resolved.x, &background, &shap_config)
        .map_err(|e| runtime(format!("shap explanation failed: {e}")))?;

    let config = to_value(&ShapResolvedConfig {
        model: resolved.model.spec.clone(),
        input: resolved.x.numerics().unwrap_or_default(),
        background: background_spec,
        seed: resolved.seed,
        shap: shap_config,
    });
    Report::new(
        "explain-shap",
        config,
        vec![
            ("background".into(), background_evals),
            ("explain".into(), counting.count()),
        ],
        to_value(&explanation),
        start.elapsed().as_millis(),
    )
    .write(&args.common.out)
}

#[derive(Args, Debug)]
pub struct CfArgs {
    #[command(flatten)]
    pub common: CommonExplainArgs,
    /// Desired output values, comma-separated
    #[arg(long)]
    pub goal: Option<String>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Search strategy: tabu | hill
    #[arg(long)]
    pub search: Option<String>,
    /// Evaluation budget
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long)]
    pub step_fraction: Option<f64>,
    /// Scale the distance by per-feature MAD computed from --data
    #[arg(long, default_value_t = false)]
    pub mad_scaled: bool,
}

#[derive(Serialize)]
struct CfResolvedConfig {
    model: String,
    input: Vec<f64>,
    goal: Vec<f64>,
    epsilon: f64,
    seed: u64,
    solver: SolverConfig,
    mad_scaled: bool,
}

pub fn run_cf(args: &CfArgs) -> CliResult<()> {
    let start = Instant::now();
    let resolved = args.common.resolve()?;
    let goal_text = args
        .goal
        .clone()
        .or_else(|| config_str(&resolved.config, "goal"))
        .ok_or_else(|| usage("--goal is required"))?;
    let goal_values: Vec<f64> = goal_text
        .split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| usage(format!("--goal cell '{t}' is not a number")))
        })
        .collect::<CliResult<_>>()?;
    let names = resolved.model.model.output_names();
    if goal_values.len() != names.len() {
        return Err(usage(format!(
            "--goal has {} values, the model emits {}",
            goal_values.len(),
            names.len()
        )));
    }
    let desired = OutputVector::new(
        names
            .iter()
            .zip(&goal_values)
            .map(|(n, &v)| Output::new(n.clone(), v))
            .collect(),
    );
    let epsilon = args
        .epsilon
        .or_else(|| config_f64(&resolved.config, "epsilon"))
        .unwrap_or(1e-3);
    let goal = CfGoal::new(desired, epsilon);

    let mut solver = SolverConfig {
        seed: resolved.seed,
        ..SolverConfig::desk()
    };
    if let Some(b) = args
        .budget
        .or_else(|| config_u64(&resolved.config, "budget").map(|v| v as usize))
    {
        solver.max_evaluations = b;
    }
    if let Some(f) = args
        .step_fraction
        .or_else(|| config_f64(&resolved.config, "step_fraction"))
    {
        solver.numeric_step_fraction = f;
    }
    match args
        .search
        .clone()
        .or_else(|| config_str(&resolved.config, "search"))
        .as_deref()
    {
        None | Some("tabu") => {}
        Some("hill") => solver.strategy = SearchStrategy::HillClimbing,
        Some(other) => return Err(usage(format!("unknown search strategy '{other}'"))),
    }

    let mad = if args.mad_scaled {
        let data = resolved
            .data
            .as_ref()
            .ok_or_else(|| usage("--mad-scaled needs --data"))?;
        Some(xaikit::model::mad_per_feature(data).map_err(|e| runtime(e.to_string()))?)
    } else {
        None
    };

    let counting = CountingModel::new(resolved.model.model.as_ref());
    let result = counterfactual::search(
        &counting,
        &resolved.x,
        &resolved.domain,
        &goal,
        &solver,
        mad.as_deref(),
    )
    .map_err(|e| runtime(format!("counterfactual search failed: {e}")))?;

    let config = to_value(&CfResolvedConfig {
        model: resolved.model.spec.clone(),
        input: resolved.x.numerics().unwrap_or_default(),
        goal: goal_values,
        epsilon,
        seed: resolved.seed,
        solver,
        mad_scaled: args.mad_scaled,
    });
    Report::new(
        "explain-cf",
        config,
        vec![("search".into(), counting.count())],
        to_value(&result),
        start.elapsed().as_millis(),
    )
    .write(&args.common.out)
}
