//! Monte Carlo posterior predictive and the abstention rule.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{softmax_in_place, Model, ParamVector};
use crate::sampler::SampleChain;

/// Predictive distribution for one input, averaged over posterior draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveSummary {
    pub mean_probs: Vec<f64>,
    /// Population standard deviation of each class probability across draws.
    pub std_probs: Vec<f64>,
    pub predicted: usize,
    /// Largest mean class probability.
    pub confidence: f64,
    pub n_samples: usize,
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

impl PredictiveSummary {
    pub fn from_probabilities(per_sample: &[Vec<f64>]) -> Result<Self> {
        let s = per_sample.len();
        if s == 0 {
            return Err(Error::invalid("posterior predictive needs at least one draw"));
        }
        let c = per_sample[0].len();
        let sf = s as f64;
        let mut mean = vec![0.0; c];
        for p in per_sample {
            for (m, v) in mean.iter_mut().zip(p) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= sf);
        let mut var = vec![0.0; c];
        for p in per_sample {
            for ((acc, v), m) in var.iter_mut().zip(p).zip(&mean) {
                *acc += (v - m) * (v - m);
            }
        }
        let std_probs = var.iter().map(|v| (v / sf).sqrt()).collect();
        let predicted = argmax(&mean);
        Ok(PredictiveSummary {
            confidence: mean[predicted],
            mean_probs: mean,
            std_probs,
            predicted,
            n_samples: s,
        })
    }

    pub fn entropy(&self) -> f64 {
        entropy(&self.mean_probs)
    }
}

pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>()
}

/// Softmax output of every draw in `samples` at `x`.
pub fn per_sample_probabilities<M: Model + ?Sized>(
    model: &M,
    samples: &SampleChain,
    x: &[f64],
) -> Result<Vec<Vec<f64>>> {
    if samples.n_params != model.n_params() {
        return Err(Error::Dimension {
            context: "posterior draws",
            expected: model.n_params(),
            got: samples.n_params,
        });
    }
    if x.len() != model.input_dim() {
        return Err(Error::Dimension {
            context: "input features",
            expected: model.input_dim(),
            got: x.len(),
        });
    }
    Ok(samples
        .draws_iter()
        .map(|theta| {
            let mut z = vec![0.0; model.n_classes()];
            model.logits_into(theta, x, &mut z);
            softmax_in_place(&mut z);
            z
        })
        .collect())
}

/// `mean = (1/S) sum_s softmax(f(x; theta_s))` with per-class population std.
pub fn posterior_predictive<M: Model + ?Sized>(
    model: &M,
    samples: &SampleChain,
    x: &[f64],
) -> Result<PredictiveSummary> {
    let probs = per_sample_probabilities(model, samples, x)?;
    let summary = PredictiveSummary::from_probabilities(&probs)?;
    if summary.mean_probs.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "predictive probability",
            index: 0,
        });
    }
    Ok(summary)
}

pub fn batch_predict<M: Model + ?Sized>(
    model: &M,
    samples: &SampleChain,
    ds: &Dataset,
) -> Result<Vec<PredictiveSummary>> {
    batch_predict_with(model, samples, ds, Execution::default())
}

/// Row-wise [`posterior_predictive`], order preserving.
pub fn batch_predict_with<M: Model + ?Sized>(
    model: &M,
    samples: &SampleChain,
    ds: &Dataset,
    exec: Execution,
) -> Result<Vec<PredictiveSummary>> {
    exec.map(ds.len(), |i| {
        posterior_predictive(model, samples, ds.row(i)).map_err(|e| match e {
            Error::NonFinite { what, .. } => Error::NonFinite { what, index: i },
            other => other,
        })
    })
    .into_iter()
    .collect()
}

/// Single-draw "chain" at a point estimate, so MAP predictions go through the
/// same predictive path.
pub fn point_chain(theta: &ParamVector) -> SampleChain {
    SampleChain {
        draws: theta.values.clone(),
        n_samples: 1,
        n_params: theta.values.len(),
        accept_stats: vec![1.0],
        divergences: 0,
        step_size_final: 0.0,
        seed: 0,
        layout: theta.layout.clone(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "class", rename_all = "snake_case")]
pub enum Outcome {
    Answer(usize),
    Abstain,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub outcome: Outcome,
    pub threshold: f64,
}

/// Answers with the predicted class when `confidence >= threshold`, otherwise
/// abstains.
pub fn decide(summary: &PredictiveSummary, threshold: f64) -> Result<Decision> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::invalid(format!(
            "abstention threshold must lie in [0, 1], got {threshold}"
        )));
    }
    let outcome = if summary.confidence >= threshold {
        Outcome::Answer(summary.predicted)
    } else {
        Outcome::Abstain
    };
    Ok(Decision { outcome, threshold })
}

/// `row_id, mean_p0.., std_p0.., predicted, confidence, label`.
pub fn summaries_to_csv(summaries: &[PredictiveSummary], row_ids: &[usize], labels: &[usize]) -> Result<String> {
    if summaries.len() != row_ids.len() || summaries.len() != labels.len() {
        return Err(Error::invalid("summaries, row ids and labels differ in length"));
    }
    let c = summaries.first().map_or(0, |s| s.mean_probs.len());
    let mut header = vec!["row_id".to_string()];
    header.extend((0..c).map(|k| format!("mean_p{k}")));
    header.extend((0..c).map(|k| format!("std_p{k}")));
    header.extend(["predicted", "confidence", "label"].map(String::from));
    let mut out = header.join(",");
    out.push('\n');
    for ((s, id), y) in summaries.iter().zip(row_ids).zip(labels) {
        let mut cells = vec![id.to_string()];
        cells.extend(s.mean_probs.iter().map(|v| v.to_string()));
        cells.extend(s.std_probs.iter().map(|v| v.to_string()));
        cells.push(s.predicted.to_string());
        cells.push(s.confidence.to_string());
        cells.push(y.to_string());
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    Ok(out)
}
