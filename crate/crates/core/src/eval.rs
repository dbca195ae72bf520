//! Calibration and selective-prediction metrics over predictive summaries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predict::PredictiveSummary;

pub const DEFAULT_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// `None` for empty bins.
    pub mean_confidence: Option<f64>,
    pub accuracy: Option<f64>,
}

/// Equal-width confidence bins over `[0, 1]`; the last bin is closed on the right.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBins {
    pub n_bins: usize,
    pub n_total: usize,
    pub bins: Vec<Bin>,
}

fn check_aligned(summaries: &[PredictiveSummary], labels: &[usize]) -> Result<()> {
    if summaries.len() != labels.len() {
        return Err(Error::Dimension {
            context: "labels vs predictive summaries",
            expected: summaries.len(),
            got: labels.len(),
        });
    }
    if summaries.is_empty() {
        return Err(Error::invalid("no predictions to evaluate"));
    }
    Ok(())
}

pub fn bin_index(confidence: f64, n_bins: usize) -> usize {
    ((confidence * n_bins as f64).floor().max(0.0) as usize).min(n_bins - 1)
}

pub fn reliability(summaries: &[PredictiveSummary], labels: &[usize], n_bins: usize) -> Result<ReliabilityBins> {
    check_aligned(summaries, labels)?;
    if n_bins == 0 {
        return Err(Error::invalid("reliability needs at least one bin"));
    }
    let mut count = vec![0usize; n_bins];
    let mut conf = vec![0.0; n_bins];
    let mut correct = vec![0usize; n_bins];
    for (s, &y) in summaries.iter().zip(labels) {
        let b = bin_index(s.confidence, n_bins);
        count[b] += 1;
        conf[b] += s.confidence;
        correct[b] += usize::from(s.predicted == y);
    }
    let bins = (0..n_bins)
        .map(|b| {
            let n = count[b];
            Bin {
                lo: b as f64 / n_bins as f64,
                hi: (b + 1) as f64 / n_bins as f64,
                count: n,
                mean_confidence: (n > 0).then(|| conf[b] / n as f64),
                accuracy: (n > 0).then(|| correct[b] as f64 / n as f64),
            }
        })
        .collect();
    Ok(ReliabilityBins {
        n_bins,
        n_total: summaries.len(),
        bins,
    })
}

/// `sum_b (n_b / N) |acc_b - conf_b|` over occupied bins.
pub fn ece(bins: &ReliabilityBins) -> Result<f64> {
    if bins.n_total == 0 {
        return Err(Error::invalid("ECE of an empty prediction set"));
    }
    let n = bins.n_total as f64;
    Ok(bins
        .bins
        .iter()
        .filter_map(|b| match (b.accuracy, b.mean_confidence) {
            (Some(a), Some(c)) => Some(b.count as f64 / n * (a - c).abs()),
            _ => None,
        })
        .sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoveragePoint {
    pub threshold: f64,
    pub coverage: f64,
    pub n_answered: usize,
    /// Undefined when nothing is answered.
    pub selective_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageCurve {
    pub points: Vec<CoveragePoint>,
}

impl CoverageCurve {
    /// The point with the largest threshold that still answers at least
    /// `target` of the inputs.
    pub fn at_coverage(&self, target: f64) -> Option<&CoveragePoint> {
        self.points
            .iter()
            .filter(|p| p.coverage >= target)
            .max_by(|a, b| a.threshold.total_cmp(&b.threshold))
    }
}

/// Sorted unique confidences; thresholding at these yields the exact step curve.
pub fn default_thresholds(summaries: &[PredictiveSummary]) -> Vec<f64> {
    let mut t: Vec<f64> = summaries.iter().map(|s| s.confidence).collect();
    t.sort_by(f64::total_cmp);
    t.dedup();
    t
}

pub fn accuracy_coverage(
    summaries: &[PredictiveSummary],
    labels: &[usize],
    thresholds: Option<&[f64]>,
) -> Result<CoverageCurve> {
    check_aligned(summaries, labels)?;
    let grid = match thresholds {
        Some(t) => {
            if let Some(bad) = t.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::invalid(format!("threshold {bad} outside [0, 1]")));
            }
            if t.windows(2).any(|w| w[0] > w[1]) {
                return Err(Error::invalid("thresholds must be sorted ascending"));
            }
            t.to_vec()
        }
        None => default_thresholds(summaries),
    };
    let n = summaries.len() as f64;
    let points = grid
        .into_iter()
        .map(|tau| {
            let (mut answered, mut correct) = (0usize, 0usize);
            for (s, &y) in summaries.iter().zip(labels) {
                if s.confidence >= tau {
                    answered += 1;
                    correct += usize::from(s.predicted == y);
                }
            }
            CoveragePoint {
                threshold: tau,
                coverage: answered as f64 / n,
                n_answered: answered,
                selective_accuracy: (answered > 0).then(|| correct as f64 / answered as f64),
            }
        })
        .collect();
    Ok(CoverageCurve { points })
}

pub fn accuracy(summaries: &[PredictiveSummary], labels: &[usize]) -> Result<f64> {
    check_aligned(summaries, labels)?;
    let hits = summaries.iter().zip(labels).filter(|(s, &y)| s.predicted == y).count();
    Ok(hits as f64 / summaries.len() as f64)
}

pub fn mean_confidence(summaries: &[PredictiveSummary]) -> f64 {
    summaries.iter().map(|s| s.confidence).sum::<f64>() / summaries.len() as f64
}

/// All metrics for one set of predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub accuracy: f64,
    pub mean_confidence: f64,
    pub ece: f64,
    pub reliability: ReliabilityBins,
    pub coverage: CoverageCurve,
}

impl MethodReport {
    pub fn new(summaries: &[PredictiveSummary], labels: &[usize], n_bins: usize) -> Result<Self> {
        let reliability = reliability(summaries, labels, n_bins)?;
        Ok(MethodReport {
            accuracy: accuracy(summaries, labels)?,
            mean_confidence: mean_confidence(summaries),
            ece: ece(&reliability)?,
            reliability,
            coverage: accuracy_coverage(summaries, labels, None)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub map: MethodReport,
    pub bayes: MethodReport,
    /// `confidence_bayes - confidence_map` per example.
    pub confidence_deltas: Vec<f64>,
}

pub fn compare(
    map_summaries: &[PredictiveSummary],
    bayes_summaries: &[PredictiveSummary],
    labels: &[usize],
) -> Result<ComparisonReport> {
    if map_summaries.len() != bayes_summaries.len() {
        return Err(Error::Dimension {
            context: "MAP vs Bayesian summaries",
            expected: map_summaries.len(),
            got: bayes_summaries.len(),
        });
    }
    Ok(ComparisonReport {
        map: MethodReport::new(map_summaries, labels, DEFAULT_BINS)?,
        bayes: MethodReport::new(bayes_summaries, labels, DEFAULT_BINS)?,
        confidence_deltas: map_summaries
            .iter()
            .zip(bayes_summaries)
            .map(|(m, b)| b.confidence - m.confidence)
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn summary(probs: Vec<f64>) -> PredictiveSummary {
        PredictiveSummary::from_probabilities(&[probs]).unwrap()
    }

    fn conf(c: f64, predicted: usize) -> PredictiveSummary {
        PredictiveSummary {
            mean_probs: vec![],
            std_probs: vec![],
            predicted,
            confidence: c,
            n_samples: 1,
        }
    }

    #[test]
    fn confident_and_correct() {
        let s = vec![summary(vec![1.0, 0.0]); 4];
        let bins = reliability(&s, &[0; 4], 10).unwrap();
        assert_eq!(bins.bins[9].count, 4);
        assert_eq!(bins.bins[9].accuracy, Some(1.0));
        assert_eq!(bins.bins.iter().map(|b| b.count).sum::<usize>(), 4);
        assert_eq!(ece(&bins).unwrap(), 0.0);
        let one = reliability(&s[..1], &[0], 10).unwrap();
        assert_eq!(ece(&one).unwrap(), 0.0);
    }

    #[test]
    fn maximal_miscalibration() {
        let s = vec![summary(vec![1.0, 0.0]); 10];
        let labels = [0, 1, 0, 1, 0, 1, 0, 1, 0, 1];
        let bins = reliability(&s, &labels, 10).unwrap();
        assert_eq!(bins.bins[9].accuracy, Some(0.5));
        assert_eq!(bins.bins[9].mean_confidence, Some(1.0));
        assert_eq!(ece(&bins).unwrap(), 0.5);
    }

    #[test]
    fn bin_edges() {
        assert_eq!(bin_index(0.0, 10), 0);
        assert_eq!(bin_index(0.0999, 10), 0);
        assert_eq!(bin_index(0.1, 10), 1);
        assert_eq!(bin_index(1.0, 10), 9);
        let bins = reliability(&[conf(0.5, 0)], &[0], 4).unwrap();
        assert_eq!(bins.bins[2].count, 1);
        assert_eq!(bins.bins[3].hi, 1.0);
    }

    #[test]
    fn errors() {
        assert!(reliability(&[conf(0.5, 0)], &[0, 1], 10).is_err());
        assert!(reliability(&[], &[], 10).is_err());
        assert!(accuracy_coverage(&[conf(0.5, 0)], &[], None).is_err());
        assert!(accuracy_coverage(&[conf(0.5, 0)], &[0], Some(&[0.2, 0.1])).is_err());
        assert!(accuracy_coverage(&[conf(0.5, 0)], &[0], Some(&[1.5])).is_err());
        let empty = ReliabilityBins { n_bins: 10, n_total: 0, bins: vec![] };
        assert!(ece(&empty).is_err());
    }

    #[test]
    fn hand_computed_coverage() {
        let s = [conf(0.9, 0), conf(0.6, 0), conf(0.3, 0)];
        let labels = [0, 1, 0];
        let curve = accuracy_coverage(&s, &labels, Some(&[0.0, 0.7, 0.95])).unwrap();
        assert_eq!(curve.points[0].coverage, 1.0);
        assert_eq!(curve.points[0].selective_accuracy, Some(2.0 / 3.0));
        assert_eq!(curve.points[1].coverage, 1.0 / 3.0);
        assert_eq!(curve.points[1].selective_accuracy, Some(1.0));
        assert_eq!(curve.points[2].coverage, 0.0);
        assert_eq!(curve.points[2].selective_accuracy, None);

        let exact = accuracy_coverage(&s, &labels, None).unwrap();
        let taus: Vec<f64> = exact.points.iter().map(|p| p.threshold).collect();
        assert_eq!(taus, vec![0.3, 0.6, 0.9]);
        assert_eq!(exact.at_coverage(0.5).unwrap().threshold, 0.6);
        assert_eq!(exact.at_coverage(1.0).unwrap().threshold, 0.3);
    }

    #[test]
    fn compare_identity_and_deltas() {
        let s = vec![summary(vec![0.7, 0.3]), summary(vec![0.2, 0.8])];
        let r = compare(&s, &s, &[0, 0]).unwrap();
        assert_eq!(r.map, r.bayes);
        assert!(r.confidence_deltas.iter().all(|d| *d == 0.0));
        assert!(compare(&s, &s[..1], &[0, 0]).is_err());
        let smooth = vec![summary(vec![0.6, 0.4]), summary(vec![0.3, 0.7])];
        let r = compare(&s, &smooth, &[0, 0]).unwrap();
        assert!((r.confidence_deltas[0] + 0.1).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn coverage_monotone_and_counts_sum(
            items in prop::collection::vec((0.0f64..=1.0, 0usize..3, 0usize..3), 1..60)
        ) {
            let s: Vec<_> = items.iter().map(|&(c, p, _)| conf(c, p)).collect();
            let labels: Vec<_> = items.iter().map(|&(_, _, y)| y).collect();
            let curve = accuracy_coverage(&s, &labels, None).unwrap();
            for w in curve.points.windows(2) {
                prop_assert!(w[1].coverage <= w[0].coverage);
            }
            prop_assert_eq!(curve.points[0].coverage, 1.0);
            let bins = reliability(&s, &labels, 10).unwrap();
            prop_assert_eq!(bins.bins.iter().map(|b| b.count).sum::<usize>(), s.len());
            let e = ece(&bins).unwrap();
            prop_assert!((0.0..=1.0).contains(&e));
            let mut rs = s.clone();
            let mut rl = labels.clone();
            rs.reverse();
            rl.reverse();
            let e2 = ece(&reliability(&rs, &rl, 10).unwrap()).unwrap();
            prop_assert!((e - e2).abs() < 1e-12);
        }
    }
}
