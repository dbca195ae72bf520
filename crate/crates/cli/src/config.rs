//! Run configuration: a single JSON document, validated field by field so
//! that every problem is reported at once.

use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{Map, Value};

use bayeshead_core::data::DataFormat;
use bayeshead_core::laplace::{OptimizerConfig, DEFAULT_MC_SAMPLES, DEFAULT_PRECISION_FLOOR};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    IrisHmc,
    HeadHmc,
    HeadLaplace,
    Compare,
}

impl Experiment {
    pub const ALL: [(&'static str, Experiment); 4] = [
        ("iris-hmc", Experiment::IrisHmc),
        ("head-hmc", Experiment::HeadHmc),
        ("head-laplace", Experiment::HeadLaplace),
        ("compare", Experiment::Compare),
    ];

    pub fn name(self) -> &'static str {
        Self::ALL.iter().find(|(_, e)| *e == self).unwrap().0
    }

    pub fn is_iris(self) -> bool {
        self == Experiment::IrisHmc
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DataConfig {
    /// `None` selects the bundled dataset for the experiment.
    pub path: Option<PathBuf>,
    pub format: Option<String>,
    pub train_fraction: f64,
    pub standardize: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelConfig {
    pub hidden: usize,
    pub prior_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SamplerConfig {
    pub algorithm: String,
    pub n_chains: usize,
    pub n_warmup: usize,
    pub n_samples: usize,
    pub target_accept: f64,
    pub max_tree_depth: usize,
    pub mass: String,
    /// Fixed-trajectory HMC only.
    pub step_size: f64,
    pub n_leapfrog: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LaplaceConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub tol: f64,
    pub precision_floor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlotsConfig {
    /// Row ids (indices into the full dataset) that get a predictive bar chart.
    pub entries: Vec<usize>,
    /// Parameters that get a prior-vs-posterior plot.
    pub marginals: Vec<String>,
    /// Parameter pairs searched for the least and most correlated 2-D marginal.
    pub candidates: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub sampler: SamplerConfig,
    pub laplace: LaplaceConfig,
    pub s_mc: usize,
    pub tau: f64,
    pub plots: PlotsConfig,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn optimizer(&self) -> OptimizerConfig {
        OptimizerConfig {
            learning_rate: self.laplace.learning_rate,
            steps: self.laplace.steps,
            batch_size: self.laplace.batch_size,
            tol: self.laplace.tol,
            seed: self.seed,
        }
    }

    pub fn data_format(&self) -> DataFormat {
        match (&self.data.format, &self.data.path) {
            (Some(f), _) => f.parse().unwrap_or(DataFormat::Csv),
            (None, Some(p)) => DataFormat::from_extension(p).unwrap_or(DataFormat::Csv),
            (None, None) => {
                if self.experiment.is_iris() {
                    DataFormat::Csv
                } else {
                    DataFormat::FeatureBinary
                }
            }
        }
    }
}

/// Candidate pairs for the 2-D marginals of an MLP with `hidden` units: each
/// unit's first input weight against its second input weight and against its
/// first output weight.
pub fn default_candidates(hidden: usize) -> Vec<(String, String)> {
    (0..hidden)
        .flat_map(|i| {
            [
                (format!("W1[{i},0]"), format!("W1[{i},1]")),
                (format!("W1[{i},0]"), format!("W2[0,{i}]")),
            ]
        })
        .collect()
}

struct Fields<'a> {
    map: Option<&'a Map<String, Value>>,
    path: String,
}

impl<'a> Fields<'a> {
    fn new(value: Option<&'a Value>, path: &str, known: &[&str], errors: &mut Vec<String>) -> Self {
        let map = match value {
            None | Some(Value::Null) => None,
            Some(Value::Object(m)) => {
                for key in m.keys() {
                    if !known.contains(&key.as_str()) {
                        errors.push(format!(
                            "{}: unknown field (expected one of: {})",
                            join(path, key),
                            known.join(", ")
                        ));
                    }
                }
                Some(m)
            }
            Some(_) => {
                errors.push(format!("{}: expected an object", display_path(path)));
                None
            }
        };
        Fields {
            map,
            path: path.to_string(),
        }
    }

    fn get(&self, key: &str) -> Option<&'a Value> {
        self.map.and_then(|m| m.get(key)).filter(|v| !v.is_null())
    }

    fn at(&self, key: &str) -> String {
        join(&self.path, key)
    }

    fn f64(&self, key: &str, default: f64, errors: &mut Vec<String>) -> f64 {
        match self.get(key) {
            None => default,
            Some(v) => v.as_f64().unwrap_or_else(|| {
                errors.push(format!("{}: expected a number, got {v}", self.at(key)));
                default
            }),
        }
    }

    fn u64(&self, key: &str, default: u64, errors: &mut Vec<String>) -> u64 {
        match self.get(key) {
            None => default,
            Some(v) => v.as_u64().unwrap_or_else(|| {
                errors.push(format!("{}: expected a non-negative integer, got {v}", self.at(key)));
                default
            }),
        }
    }

    fn usize(&self, key: &str, default: usize, errors: &mut Vec<String>) -> usize {
        self.u64(key, default as u64, errors) as usize
    }

    fn bool(&self, key: &str, default: bool, errors: &mut Vec<String>) -> bool {
        match self.get(key) {
            None => default,
            Some(v) => v.as_bool().unwrap_or_else(|| {
                errors.push(format!("{}: expected true or false, got {v}", self.at(key)));
                default
            }),
        }
    }

    fn string(&self, key: &str, errors: &mut Vec<String>) -> Option<String> {
        match self.get(key) {
            None => None,
            Some(Value::String(s)) => Some(s.clone()),
            Some(v) => {
                errors.push(format!("{}: expected a string, got {v}", self.at(key)));
                None
            }
        }
    }

    fn choice(&self, key: &str, default: &str, allowed: &[&str], errors: &mut Vec<String>) -> String {
        let s = self.string(key, errors).unwrap_or_else(|| default.to_string());
        if !allowed.contains(&s.as_str()) {
            errors.push(format!(
                "{}: `{s}` is not one of {}",
                self.at(key),
                allowed.join(", ")
            ));
        }
        s
    }
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

fn display_path(path: &str) -> &str {
    if path.is_empty() {
        "<root>"
    } else {
        path
    }
}

fn check(cond: bool, errors: &mut Vec<String>, msg: impl FnOnce() -> String) {
    if !cond {
        errors.push(msg());
    }
}

/// Parses and validates a config document. Relative paths are resolved
/// against `base_dir`. Returns every problem found, each prefixed with its
/// field path.
pub fn parse_config(text: &str, base_dir: &Path) -> Result<RunConfig, Vec<String>> {
    let root: Value = serde_json::from_str(text).map_err(|e| vec![format!("invalid JSON: {e}")])?;
    let mut errors = Vec::new();
    let top = Fields::new(
        Some(&root),
        "",
        &["experiment", "seed", "data", "model", "sampler", "laplace", "s_mc", "tau", "plots", "out"],
        &mut errors,
    );

    let experiment = match top.string("experiment", &mut errors) {
        None => {
            errors.push("experiment: required field is missing".to_string());
            Experiment::IrisHmc
        }
        Some(name) => match Experiment::ALL.iter().find(|(n, _)| *n == name) {
            Some((_, e)) => *e,
            None => {
                let names: Vec<&str> = Experiment::ALL.iter().map(|(n, _)| *n).collect();
                errors.push(format!("experiment: `{name}` is not one of {}", names.join(", ")));
                Experiment::IrisHmc
            }
        },
    };
    let iris = experiment.is_iris();

    let seed = match top.get("seed") {
        None => {
            errors.push("seed: required field is missing (runs never fall back to a clock seed)".to_string());
            0
        }
        Some(_) => top.u64("seed", 0, &mut errors),
    };

    let d = Fields::new(
        top.get("data"),
        "data",
        &["path", "format", "train_fraction", "standardize"],
        &mut errors,
    );
    let path = d.string("path", &mut errors).map(|p| base_dir.join(p));
    if let Some(p) = &path {
        if !p.is_file() {
            let hint = if iris {
                String::new()
            } else {
                format!(
                    "; produce it with `embed-extract --input qa.jsonl --model <encoder> --output {}` or omit data.path to use the bundled toy-QA features",
                    p.display()
                )
            };
            errors.push(format!("data.path: file {} does not exist{hint}", p.display()));
        }
    }
    let format = d.string("format", &mut errors);
    if let Some(f) = &format {
        if f.parse::<DataFormat>().is_err() {
            errors.push(format!("data.format: `{f}` is not one of csv, feature-binary"));
        }
    }
    let data = DataConfig {
        path,
        format,
        train_fraction: d.f64("train_fraction", if iris { 0.8 } else { 0.7 }, &mut errors),
        standardize: d.bool("standardize", iris, &mut errors),
    };
    check(data.train_fraction > 0.0 && data.train_fraction < 1.0, &mut errors, || {
        format!("data.train_fraction: {} is outside (0, 1)", data.train_fraction)
    });

    let m = Fields::new(top.get("model"), "model", &["hidden", "prior_std"], &mut errors);
    let model = ModelConfig {
        hidden: m.usize("hidden", 8, &mut errors),
        prior_std: m.f64("prior_std", 1.0, &mut errors),
    };
    check(model.hidden >= 1, &mut errors, || "model.hidden: must be at least 1".into());
    check(model.prior_std > 0.0 && model.prior_std.is_finite(), &mut errors, || {
        format!("model.prior_std: {} must be positive", model.prior_std)
    });

    let s = Fields::new(
        top.get("sampler"),
        "sampler",
        &[
            "algorithm",
            "n_chains",
            "n_warmup",
            "n_samples",
            "target_accept",
            "max_tree_depth",
            "mass",
            "step_size",
            "n_leapfrog",
        ],
        &mut errors,
    );
    let draws = if iris { 1000 } else { 500 };
    let sampler = SamplerConfig {
        algorithm: s.choice("algorithm", "nuts", &["nuts", "hmc"], &mut errors),
        n_chains: s.usize("n_chains", 1, &mut errors),
        n_warmup: s.usize("n_warmup", draws, &mut errors),
        n_samples: s.usize("n_samples", draws, &mut errors),
        target_accept: s.f64("target_accept", 0.8, &mut errors),
        max_tree_depth: s.usize("max_tree_depth", 10, &mut errors),
        mass: s.choice("mass", "diagonal", &["diagonal", "identity"], &mut errors),
        step_size: s.f64("step_size", 0.1, &mut errors),
        n_leapfrog: s.usize("n_leapfrog", 20, &mut errors),
    };
    check(sampler.n_chains >= 1, &mut errors, || "sampler.n_chains: must be at least 1".into());
    check(sampler.n_samples >= 4, &mut errors, || {
        "sampler.n_samples: need at least 4 draws for diagnostics".into()
    });
    check(sampler.target_accept > 0.0 && sampler.target_accept < 1.0, &mut errors, || {
        format!("sampler.target_accept: {} is outside (0, 1)", sampler.target_accept)
    });
    check(sampler.max_tree_depth >= 1, &mut errors, || "sampler.max_tree_depth: must be at least 1".into());
    check(sampler.step_size > 0.0 && sampler.step_size.is_finite(), &mut errors, || {
        format!("sampler.step_size: {} must be positive", sampler.step_size)
    });
    check(sampler.n_leapfrog >= 1, &mut errors, || "sampler.n_leapfrog: must be at least 1".into());

    let defaults = OptimizerConfig::default();
    let l = Fields::new(
        top.get("laplace"),
        "laplace",
        &["learning_rate", "steps", "batch_size", "tol", "precision_floor"],
        &mut errors,
    );
    let laplace = LaplaceConfig {
        learning_rate: l.f64("learning_rate", defaults.learning_rate, &mut errors),
        steps: l.usize("steps", defaults.steps, &mut errors),
        batch_size: l.usize("batch_size", defaults.batch_size, &mut errors),
        tol: l.f64("tol", defaults.tol, &mut errors),
        precision_floor: l.f64("precision_floor", DEFAULT_PRECISION_FLOOR, &mut errors),
    };
    check(laplace.learning_rate > 0.0, &mut errors, || {
        format!("laplace.learning_rate: {} must be positive", laplace.learning_rate)
    });
    check(laplace.batch_size >= 1, &mut errors, || "laplace.batch_size: must be at least 1".into());
    check(laplace.tol >= 0.0, &mut errors, || format!("laplace.tol: {} must be >= 0", laplace.tol));
    check(laplace.precision_floor > 0.0, &mut errors, || {
        format!("laplace.precision_floor: {} must be positive", laplace.precision_floor)
    });

    let s_mc = top.usize("s_mc", DEFAULT_MC_SAMPLES, &mut errors);
    check(s_mc >= 1, &mut errors, || "s_mc: must be at least 1".into());
    let tau = top.f64("tau", 0.5, &mut errors);
    check((0.0..=1.0).contains(&tau), &mut errors, || format!("tau: {tau} is outside [0, 1]"));

    let p = Fields::new(top.get("plots"), "plots", &["entries", "marginals", "candidates"], &mut errors);
    let entries = match p.get("entries") {
        None => {
            if iris {
                vec![0, 50, 100]
            } else {
                vec![0, 2, 3]
            }
        }
        Some(Value::Array(a)) => a
            .iter()
            .enumerate()
            .filter_map(|(i, v)| {
                let id = v.as_u64().map(|v| v as usize);
                if id.is_none() {
                    errors.push(format!("plots.entries[{i}]: expected a row id, got {v}"));
                }
                id
            })
            .collect(),
        Some(v) => {
            errors.push(format!("plots.entries: expected an array of row ids, got {v}"));
            vec![]
        }
    };
    let marginals = match p.get("marginals") {
        None => {
            if iris {
                vec!["W1[0,1]".to_string(), "b2[1]".to_string()]
            } else {
                vec!["W[0,0]".to_string(), "b[1]".to_string()]
            }
        }
        Some(Value::Array(a)) => a
            .iter()
            .enumerate()
            .filter_map(|(i, v)| {
                let s = v.as_str().map(str::to_string);
                if s.is_none() {
                    errors.push(format!("plots.marginals[{i}]: expected a parameter name, got {v}"));
                }
                s
            })
            .collect(),
        Some(v) => {
            errors.push(format!("plots.marginals: expected an array of names, got {v}"));
            vec![]
        }
    };
    let candidates = match p.get("candidates") {
        None => {
            if iris {
                default_candidates(model.hidden)
            } else {
                vec![
                    ("W[0,0]".to_string(), "W[1,0]".to_string()),
                    ("W[0,0]".to_string(), "W[0,1]".to_string()),
                    ("W[0,0]".to_string(), "b[0]".to_string()),
                ]
            }
        }
        Some(Value::Array(a)) => a
            .iter()
            .enumerate()
            .filter_map(|(i, v)| match v.as_array().map(Vec::as_slice) {
                Some([Value::String(x), Value::String(y)]) => Some((x.clone(), y.clone())),
                _ => {
                    errors.push(format!("plots.candidates[{i}]: expected a pair of names, got {v}"));
                    None
                }
            })
            .collect(),
        Some(v) => {
            errors.push(format!("plots.candidates: expected an array of name pairs, got {v}"));
            vec![]
        }
    };

    let out = top.string("out", &mut errors).map(|o| base_dir.join(o));

    if !errors.is_empty() {
        return Err(errors);
    }
    Ok(RunConfig {
        experiment,
        seed,
        data,
        model,
        sampler,
        laplace,
        s_mc,
        tau,
        plots: PlotsConfig {
            entries,
            marginals,
            candidates,
        },
        out,
    })
}

/// Reads and validates a config file.
pub fn validate_config(path: &Path) -> Result<RunConfig, Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| vec![format!("{}: {e}", path.display())])?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_config(&text, base)
}
