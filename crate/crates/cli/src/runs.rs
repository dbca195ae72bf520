//! The experiments: load and split data, fit a posterior, predict on the test
//! split, and write metrics, CSVs and figures into one directory.

use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use bayeshead_core::bundled;
use bayeshead_core::data::{load_dataset, split, Dataset, SplitSpec, Standardization};
use bayeshead_core::eval::{self, MethodReport, DEFAULT_BINS};
use bayeshead_core::laplace::{
    empirical_fisher_diag, laplace_posterior, sample_gaussian, train_map, PRECISION_FORMULA,
};
use bayeshead_core::model::{Architecture, Model, ModelPosterior, Prior};
use bayeshead_core::predict::{batch_predict, decide, point_chain, posterior_predictive, summaries_to_csv, Outcome, PredictiveSummary};
use bayeshead_core::report::{
    marginal_1d, marginal_2d, render_coverage, render_entry, render_marginal_1d, render_marginal_2d,
    render_reliability, select_pairs, Figure, CONTOUR_METHOD,
};
use bayeshead_core::sampler::{diagnostics, Diagnostics};
use bayeshead_core::sampler::{sample_chains, Algorithm, HmcConfig, MassMatrix, SampleChain};
use bayeshead_core::{Error, Execution, Result};

use crate::config::{Experiment, RunConfig};

pub const CONFIDENCE_DEFINITION: &str = "largest entry of the mean predictive probability vector";

/// What a run produced.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub out_dir: PathBuf,
    /// File names relative to `out_dir`, in write order.
    pub files: Vec<String>,
    pub metrics: Value,
    /// Human-readable summary lines.
    pub summary: Vec<String>,
}

struct Artifacts {
    dir: PathBuf,
    files: Vec<String>,
}

impl Artifacts {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn text(&mut self, name: &str, content: &str) -> Result<()> {
        let path = self.path(name);
        std::fs::write(&path, content).map_err(|e| Error::Io { path, source: e })?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn figure(&mut self, name: &str, fig: &Figure) -> Result<()> {
        let sidecar = fig.write(&self.path(name))?;
        self.files.push(name.to_string());
        self.files
            .push(sidecar.file_name().unwrap().to_string_lossy().into_owned());
        Ok(())
    }

    fn chain(&mut self, name: &str, chain: &SampleChain) -> Result<()> {
        chain.save(&self.path(name))?;
        self.files.push(name.to_string());
        Ok(())
    }
}

/// `W1[0,1]` -> `W1_0_1`, safe in file names.
fn file_stem(param: &str) -> String {
    param
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect::<String>()
        .trim_end_matches('_')
        .to_string()
}

struct Prepared {
    /// Every row, transformed like the training split.
    full: Dataset,
    train: Dataset,
    test: Dataset,
    standardization: Option<Standardization>,
    source: String,
}

fn load(config: &RunConfig) -> Result<(Dataset, String)> {
    match &config.data.path {
        Some(p) => Ok((load_dataset(p, config.data_format())?, p.display().to_string())),
        None if config.experiment.is_iris() => Ok((bundled::iris()?, "bundled iris.csv".into())),
        None => Ok((
            bundled::toyqa()?,
            "bundled toyqa.bhft (stand-in hashed n-gram features, not a pretrained encoder)".into(),
        )),
    }
}

fn prepare(config: &RunConfig) -> Result<Prepared> {
    let (raw, source) = load(config)?;
    let spec = SplitSpec {
        train_fraction: config.data.train_fraction,
        seed: config.seed,
    };
    let (train, test) = split(&raw, spec)?;
    if config.data.standardize {
        let stats = Standardization::fit(&train)?;
        Ok(Prepared {
            full: stats.apply(&raw)?,
            train: stats.apply(&train)?,
            test: stats.apply(&test)?,
            standardization: Some(stats),
            source,
        })
    } else {
        Ok(Prepared {
            full: raw,
            train,
            test,
            standardization: None,
            source,
        })
    }
}

fn architecture(config: &RunConfig, ds: &Dataset) -> Result<Architecture> {
    if config.experiment.is_iris() {
        Architecture::mlp(ds.n_features(), config.model.hidden, ds.n_classes())
    } else {
        Architecture::head(ds.n_features(), ds.n_classes())
    }
}

fn sampler_seed(config: &RunConfig) -> u64 {
    config.seed.wrapping_add(1)
}

fn laplace_seed(config: &RunConfig) -> u64 {
    config.seed.wrapping_add(2)
}

fn hmc_config(config: &RunConfig) -> HmcConfig {
    let s = &config.sampler;
    let base = HmcConfig {
        n_warmup: s.n_warmup,
        n_samples: s.n_samples,
        seed: sampler_seed(config),
        target_accept: s.target_accept,
        max_tree_depth: s.max_tree_depth,
        algorithm: Algorithm::Nuts,
        mass: if s.mass == "identity" {
            MassMatrix::Identity
        } else {
            MassMatrix::Diagonal
        },
    };
    if s.algorithm == "hmc" {
        HmcConfig {
            algorithm: Algorithm::HmcFixed {
                n_leapfrog: s.n_leapfrog,
                step_size: s.step_size,
            },
            ..base
        }
    } else {
        base
    }
}

struct Posterior {
    chains: Vec<SampleChain>,
    pooled: SampleChain,
    diagnostics: Diagnostics,
}

fn run_sampler(config: &RunConfig, arch: &Architecture, train: &Dataset) -> Result<Posterior> {
    let prior = Prior::new(config.model.prior_std)?;
    let target = ModelPosterior::new(arch, train, prior)?;
    let chains: Vec<SampleChain> = sample_chains(
        &target,
        config.sampler.n_chains,
        None,
        &hmc_config(config),
        Execution::default(),
    )?
    .into_iter()
    .map(|c| c.with_layout(arch.layout()))
    .collect::<Result<_>>()?;
    let refs: Vec<&SampleChain> = chains.iter().collect();
    let diagnostics = diagnostics(&refs)?;
    let pooled = pool(&chains);
    Ok(Posterior {
        chains,
        pooled,
        diagnostics,
    })
}

/// Concatenates chains, in chain order, into one set of draws.
fn pool(chains: &[SampleChain]) -> SampleChain {
    let first = &chains[0];
    SampleChain {
        draws: chains.iter().flat_map(|c| c.draws.iter().copied()).collect(),
        n_samples: chains.iter().map(|c| c.n_samples).sum(),
        n_params: first.n_params,
        accept_stats: chains.iter().flat_map(|c| c.accept_stats.iter().copied()).collect(),
        divergences: chains.iter().map(|c| c.divergences).sum(),
        step_size_final: first.step_size_final,
        seed: first.seed,
        layout: first.layout.clone(),
    }
}

fn diagnostics_block(post: &Posterior, config: &RunConfig) -> Value {
    let d = &post.diagnostics;
    let mut block = json!({
        "algorithm": config.sampler.algorithm,
        "n_chains": d.n_chains,
        "draws_per_chain": d.n_draws,
        "n_warmup": config.sampler.n_warmup,
        "mean_accept": d.mean_accept,
        "divergences": d.divergences,
        "max_split_rhat": d.max_rhat(),
        "min_ess": d.min_ess(),
        "final_step_sizes": post.chains.iter().map(|c| c.step_size_final).collect::<Vec<_>>(),
    });
    if d.split_rhat.len() <= 100 {
        let layout = &post.pooled.layout;
        let per: serde_json::Map<String, Value> = (0..d.split_rhat.len())
            .map(|j| {
                (
                    layout.label(j),
                    json!({"split_rhat": d.split_rhat[j], "ess": d.ess[j]}),
                )
            })
            .collect();
        block["per_parameter"] = Value::Object(per);
    }
    block
}

fn method_block(summaries: &[PredictiveSummary], labels: &[usize], tau: f64) -> Result<Value> {
    let report = MethodReport::new(summaries, labels, DEFAULT_BINS)?;
    let half = report.coverage.at_coverage(0.5).cloned();
    let (mut answered, mut correct) = (0usize, 0usize);
    for (s, &y) in summaries.iter().zip(labels) {
        if let Outcome::Answer(k) = decide(s, tau)?.outcome {
            answered += 1;
            correct += usize::from(k == y);
        }
    }
    let mut block = serde_json::to_value(&report).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    block["at_half_coverage"] = serde_json::to_value(half).unwrap_or(Value::Null);
    block["abstention"] = json!({
        "tau": tau,
        "answered": answered,
        "abstained": summaries.len() - answered,
        "selective_accuracy": if answered > 0 { Some(correct as f64 / answered as f64) } else { None },
    });
    Ok(block)
}

fn entry_block(id: usize, summary: &PredictiveSummary, label: usize) -> Value {
    json!({
        "row_id": id,
        "mean_probs": summary.mean_probs,
        "std_probs": summary.std_probs,
        "predicted": summary.predicted,
        "confidence": summary.confidence,
        "truth": label,
    })
}

fn class_names(ds: &Dataset, id: usize, iris: bool) -> Option<Vec<String>> {
    if iris {
        return Some(bundled::IRIS_CLASSES.iter().map(|s| s.to_string()).collect());
    }
    ds.meta().map(|m| m[id].options.clone())
}

/// Predictive bars for the configured rows; returns their metrics.
fn entries(
    art: &mut Artifacts,
    config: &RunConfig,
    prep: &Prepared,
    arch: &Architecture,
    methods: &[(&str, &SampleChain)],
) -> Result<Value> {
    let ds = &prep.full;
    let mut out = serde_json::Map::new();
    let mut rows = Vec::new();
    for &(name, chain) in methods {
        let mut list = Vec::new();
        let mut summaries = Vec::new();
        for &id in &config.plots.entries {
            if id >= ds.len() {
                return Err(Error::InvalidArgument(format!(
                    "plots.entries: row {id} is out of range for {} rows",
                    ds.len()
                )));
            }
            let s = posterior_predictive(arch, chain, ds.row(id))?;
            let label = ds.label(id);
            let suffix = if methods.len() > 1 { format!("_{name}") } else { String::new() };
            let names = class_names(ds, id, config.experiment.is_iris());
            art.figure(&format!("entry_{id}{suffix}.svg"), &render_entry(id, &s, label, names.as_deref())?)?;
            list.push(entry_block(id, &s, label));
            summaries.push(s);
        }
        let labels: Vec<usize> = config.plots.entries.iter().map(|&i| ds.label(i)).collect();
        rows.push((name, summaries, labels));
        out.insert(name.to_string(), Value::Array(list));
    }
    let mut csv = String::new();
    for (name, summaries, labels) in rows {
        let body = summaries_to_csv(&summaries, &config.plots.entries, &labels)?;
        let mut lines = body.lines();
        let header = lines.next().unwrap_or_default();
        if csv.is_empty() {
            csv.push_str("method,");
            csv.push_str(header);
            csv.push('\n');
        }
        for l in lines {
            csv.push_str(name);
            csv.push(',');
            csv.push_str(l);
            csv.push('\n');
        }
    }
    if !config.plots.entries.is_empty() {
        art.text("entries.csv", &csv)?;
    }
    Ok(Value::Object(out))
}

fn predictions(
    art: &mut Artifacts,
    name: &str,
    arch: &Architecture,
    chain: &SampleChain,
    test: &Dataset,
) -> Result<Vec<PredictiveSummary>> {
    let summaries = batch_predict(arch, chain, test)?;
    art.text(name, &summaries_to_csv(&summaries, test.row_ids(), test.labels())?)?;
    Ok(summaries)
}

fn curves(
    art: &mut Artifacts,
    series: &[(&str, &[PredictiveSummary])],
    labels: &[usize],
) -> Result<()> {
    let rel: Vec<(&str, eval::ReliabilityBins)> = series
        .iter()
        .map(|(n, s)| Ok((*n, eval::reliability(s, labels, DEFAULT_BINS)?)))
        .collect::<Result<_>>()?;
    let cov: Vec<(&str, eval::CoverageCurve)> = series
        .iter()
        .map(|(n, s)| Ok((*n, eval::accuracy_coverage(s, labels, None)?)))
        .collect::<Result<_>>()?;
    let rel_refs: Vec<(&str, &eval::ReliabilityBins)> = rel.iter().map(|(n, r)| (*n, r)).collect();
    let cov_refs: Vec<(&str, &eval::CoverageCurve)> = cov.iter().map(|(n, c)| (*n, c)).collect();
    art.figure("reliability.svg", &render_reliability(&rel_refs)?)?;
    art.figure("coverage.svg", &render_coverage(&cov_refs)?)?;
    Ok(())
}

/// Prior-vs-posterior plots for the configured parameters plus the least and
/// most correlated candidate pair.
fn marginals(art: &mut Artifacts, config: &RunConfig, chain: &SampleChain, with_pairs: bool) -> Result<Value> {
    let prior = Prior::new(config.model.prior_std)?;
    let mut one = serde_json::Map::new();
    for name in &config.plots.marginals {
        let m = marginal_1d(chain, name, prior)?;
        let xs = chain.coordinate(chain.layout.resolve(name)?);
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let sd = (xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / xs.len() as f64).sqrt();
        art.figure(&format!("marginal_{}.svg", file_stem(name)), &render_marginal_1d(&m)?)?;
        one.insert(m.name.clone(), json!({"posterior_mean": mean, "posterior_std": sd, "prior_std": prior.std_dev}));
    }
    let mut block = json!({ "one_d": one });
    if with_pairs && !config.plots.candidates.is_empty() {
        let (lo, hi) = select_pairs(chain, &config.plots.candidates)?;
        let mut pairs = serde_json::Map::new();
        for (kind, (x, y, r)) in [("near_independent", lo), ("correlated", hi)] {
            let h = marginal_2d(chain, &x, &y)?;
            art.figure(&format!("marginal2d_{kind}.svg"), &render_marginal_2d(&h)?)?;
            pairs.insert(
                kind.to_string(),
                json!({
                    "x": x,
                    "y": y,
                    "correlation": r,
                    "levels": h.levels,
                }),
            );
        }
        block["two_d"] = Value::Object(pairs);
    }
    Ok(block)
}

fn data_block(prep: &Prepared) -> Value {
    json!({
        "source": prep.source,
        "n_rows": prep.full.len(),
        "n_features": prep.full.n_features(),
        "n_classes": prep.full.n_classes(),
        "n_train": prep.train.len(),
        "n_test": prep.test.len(),
        "test_row_ids": prep.test.row_ids(),
        "standardization": prep.standardization,
    })
}

fn decisions(config: &RunConfig, laplace: bool) -> Value {
    let mut d = json!({
        "confidence": CONFIDENCE_DEFINITION,
        "tie_break": "lowest class index",
        "predictive_std": "population standard deviation across draws",
        "reliability_bins": DEFAULT_BINS,
        "ece": "sum over occupied equal-width bins of (count/N) * |accuracy - mean confidence|",
        "coverage_grid": "sorted unique confidences",
        "half_coverage_point": "largest threshold whose coverage is at least 0.5",
        "evaluation_split": "test",
        "prior": format!("isotropic Gaussian N(0, {}^2), normalizing constant omitted", config.model.prior_std),
        "seeds": {
            "split": config.seed,
            "sampler": sampler_seed(config),
            "map_shuffle": config.seed,
            "laplace_draws": laplace_seed(config),
        },
    });
    if config.experiment.is_iris() {
        d["contours"] = json!(CONTOUR_METHOD);
    }
    if laplace {
        d["laplace_precision"] = json!(PRECISION_FORMULA);
        d["fisher"] = json!("empirical Fisher diagonal on the training split: mean of squared per-example log-likelihood gradients at the MAP");
        d["s_mc"] = json!(config.s_mc);
    }
    d
}

/// Runs the configured experiment, writing into `out_dir` (which must exist).
pub fn run(config: &RunConfig, out_dir: &Path) -> Result<RunOutput> {
    let mut art = Artifacts {
        dir: out_dir.to_path_buf(),
        files: Vec::new(),
    };
    let prep = prepare(config)?;
    let arch = architecture(config, &prep.full)?;
    let labels = prep.test.labels().to_vec();
    let mut summary = vec![
        format!("experiment: {}", config.experiment.name()),
        format!("model: {arch}, parameters: {}", arch.n_params()),
        format!("data: {} rows ({} train / {} test)", prep.full.len(), prep.train.len(), prep.test.len()),
    ];
    if !config.experiment.is_iris() {
        summary.push(format!("head parameters: {}", arch.n_params()));
    }

    let mut metrics = json!({
        "experiment": config.experiment.name(),
        "seed": config.seed,
        "config": config,
        "decisions": decisions(config, matches!(config.experiment, Experiment::HeadLaplace | Experiment::Compare)),
        "data": data_block(&prep),
        "model": {"architecture": arch, "n_params": arch.n_params()},
    });

    let needs_hmc = matches!(config.experiment, Experiment::IrisHmc | Experiment::HeadHmc | Experiment::Compare);
    let needs_laplace = matches!(config.experiment, Experiment::HeadLaplace | Experiment::Compare);

    let hmc = if needs_hmc {
        let post = run_sampler(config, &arch, &prep.train)?;
        for (k, c) in post.chains.iter().enumerate() {
            art.chain(&format!("chain-{k}.bhsc"), c)?;
        }
        summary.push(format!(
            "sampler: {} chains x {} draws, max split-R-hat {:.4}, min ESS {:.1}, divergences {}",
            post.diagnostics.n_chains,
            post.diagnostics.n_draws,
            post.diagnostics.max_rhat(),
            post.diagnostics.min_ess(),
            post.diagnostics.divergences
        ));
        metrics["sampler"] = diagnostics_block(&post, config);
        Some(post)
    } else {
        None
    };

    let laplace = if needs_laplace {
        let prior = Prior::new(config.model.prior_std)?;
        let map = train_map(&arch, &prep.train, &prior, &config.optimizer())?;
        let fisher = empirical_fisher_diag(&arch, &map.theta.values, &prep.train)?;
        let post = laplace_posterior(&map.theta, &fisher, &prior, prep.train.len(), config.laplace.precision_floor)?;
        let draws = sample_gaussian(&post, config.s_mc, laplace_seed(config))?;
        map.theta.save(&art.path("map.bhpv"))?;
        art.files.push("map.bhpv".into());
        post.save(&art.path("laplace.bhgp"))?;
        art.files.push("laplace.bhgp".into());
        art.chain("laplace-draws.bhsc", &draws)?;
        let var = &post.variance;
        metrics["laplace"] = json!({
            "optimizer": {
                "steps": map.n_steps,
                "stop": map.stop,
                "grad_norm": map.grad_norm,
                "final_neg_log_posterior": map.trace.last(),
            },
            "s_mc": config.s_mc,
            "n_train": prep.train.len(),
            "variance_min": var.iter().copied().fold(f64::INFINITY, f64::min),
            "variance_max": var.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            "variance_mean": var.iter().sum::<f64>() / var.len() as f64,
        });
        summary.push(format!(
            "MAP: {} Adam steps ({:?}), Laplace with S_MC = {}",
            map.n_steps, map.stop, config.s_mc
        ));
        Some((point_chain(&map.theta), draws))
    } else {
        None
    };

    let mut results = serde_json::Map::new();
    let mut series: Vec<(&str, Vec<PredictiveSummary>)> = Vec::new();
    if let Some((map_chain, draws)) = &laplace {
        series.push(("map", predictions(&mut art, "predictions-map.csv", &arch, map_chain, &prep.test)?));
        series.push(("laplace", predictions(&mut art, "predictions-laplace.csv", &arch, draws, &prep.test)?));
    }
    if let Some(post) = &hmc {
        let name = if laplace.is_some() { "predictions-hmc.csv" } else { "predictions.csv" };
        series.push(("hmc", predictions(&mut art, name, &arch, &post.pooled, &prep.test)?));
    }
    for (name, s) in &series {
        results.insert(name.to_string(), method_block(s, &labels, config.tau)?);
    }
    if laplace.is_some() {
        let cmp = eval::compare(&series[0].1, &series[1].1, &labels)?;
        let deltas = &cmp.confidence_deltas;
        results.insert(
            "laplace_vs_map".into(),
            json!({
                "confidence_deltas": deltas,
                "mean_confidence_delta": deltas.iter().sum::<f64>() / deltas.len() as f64,
                "ece_delta": cmp.bayes.ece - cmp.map.ece,
            }),
        );
    }
    for (name, s) in &series {
        let block = &results[*name];
        summary.push(format!(
            "{name}: test accuracy {:.4}, ECE {:.4}, mean confidence {:.4}",
            block["accuracy"].as_f64().unwrap_or(f64::NAN),
            block["ece"].as_f64().unwrap_or(f64::NAN),
            eval::mean_confidence(s)
        ));
    }
    metrics["results"] = Value::Object(results);

    let refs: Vec<(&str, &[PredictiveSummary])> = series.iter().map(|(n, s)| (*n, s.as_slice())).collect();
    curves(&mut art, &refs, &labels)?;

    let mut methods: Vec<(&str, &SampleChain)> = Vec::new();
    if let Some((map_chain, draws)) = &laplace {
        methods.push(("map", map_chain));
        methods.push(("laplace", draws));
    }
    if let Some(post) = &hmc {
        methods.push(("hmc", &post.pooled));
    }
    metrics["entries"] = entries(&mut art, config, &prep, &arch, &methods)?;

    let marginal_source = hmc.as_ref().map(|p| &p.pooled).or(laplace.as_ref().map(|l| &l.1));
    if let Some(chain) = marginal_source {
        metrics["marginals"] = marginals(&mut art, config, chain, config.experiment.is_iris())?;
    }

    art.files.push("metrics.json".into());
    metrics["files"] = json!(art.files);
    let text = serde_json::to_string_pretty(&metrics).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let path = art.path("metrics.json");
    std::fs::write(&path, text + "\n").map_err(|e| Error::Io { path, source: e })?;

    Ok(RunOutput {
        out_dir: out_dir.to_path_buf(),
        files: art.files,
        metrics,
        summary,
    })
}
