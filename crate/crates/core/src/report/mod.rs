//! Histogram summaries of posterior draws and SVG figures built from them.

mod svg;

pub use svg::{
    render_coverage, render_entry, render_marginal_1d, render_marginal_2d, render_reliability, Figure,
    MAX_SVG_BYTES,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Prior;
use crate::sampler::SampleChain;

pub const BINS_1D: usize = 40;
pub const BINS_2D: usize = 60;
pub const CREDIBLE_MASSES: [f64; 3] = [0.683, 0.954, 0.997];
pub const CONTOUR_METHOD: &str = "60x60 histogram over the padded bounding box; each region is the smallest set of highest-count bins holding the stated mass";

/// Posterior histogram of one coordinate next to its analytic prior density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Marginal1d {
    pub name: String,
    pub prior_std: f64,
    /// `BINS_1D + 1` edges.
    pub edges: Vec<f64>,
    /// Normalized so that `sum(density * width) == 1`.
    pub density: Vec<f64>,
    pub prior_x: Vec<f64>,
    pub prior_y: Vec<f64>,
}

pub fn normal_pdf(x: f64, std: f64) -> f64 {
    (-0.5 * (x / std).powi(2)).exp() / (std * (2.0 * std::f64::consts::PI).sqrt())
}

fn bounds(xs: &[f64]) -> (f64, f64) {
    xs.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

fn bin_of(v: f64, lo: f64, width: f64, n: usize) -> usize {
    (((v - lo) / width).floor().max(0.0) as usize).min(n - 1)
}

fn check_finite(xs: &[f64], what: &'static str) -> Result<()> {
    match xs.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { what, index }),
        None => Ok(()),
    }
}

pub fn marginal_1d(chain: &SampleChain, name: &str, prior: Prior) -> Result<Marginal1d> {
    let j = chain.layout.resolve(name)?;
    let xs = chain.coordinate(j);
    if xs.is_empty() {
        return Err(Error::invalid("marginal of an empty chain"));
    }
    check_finite(&xs, "posterior draw")?;
    let (mut lo, mut hi) = bounds(&xs);
    if hi <= lo {
        lo -= 0.5;
        hi += 0.5;
    }
    let width = (hi - lo) / BINS_1D as f64;
    let mut counts = vec![0usize; BINS_1D];
    for &v in &xs {
        counts[bin_of(v, lo, width, BINS_1D)] += 1;
    }
    let norm = xs.len() as f64 * width;
    let prior_x = linspace(-6.0 * prior.std_dev, 6.0 * prior.std_dev, 241);
    Ok(Marginal1d {
        name: chain.layout.label(j),
        prior_std: prior.std_dev,
        edges: linspace(lo, hi, BINS_1D + 1),
        density: counts.iter().map(|&c| c as f64 / norm).collect(),
        prior_y: prior_x.iter().map(|&x| normal_pdf(x, prior.std_dev)).collect(),
        prior_x,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CredibleLevel {
    pub mass: f64,
    /// Bins with at least this many draws form the region.
    pub count_threshold: usize,
    pub density_threshold: f64,
    pub enclosed_mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram2D {
    pub x_name: String,
    pub y_name: String,
    pub x_edges: Vec<f64>,
    pub y_edges: Vec<f64>,
    /// Row-major in y: `counts[iy * nx + ix]`.
    pub counts: Vec<usize>,
    pub levels: Vec<CredibleLevel>,
}

impl Histogram2D {
    pub fn nx(&self) -> usize {
        self.x_edges.len() - 1
    }

    pub fn ny(&self) -> usize {
        self.y_edges.len() - 1
    }

    pub fn count(&self, ix: usize, iy: usize) -> usize {
        self.counts[iy * self.nx() + ix]
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Bin indices of a point, or `None` outside the histogram range.
    pub fn locate(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let find = |edges: &[f64], v: f64| {
            let n = edges.len() - 1;
            if v < edges[0] || v > edges[n] {
                return None;
            }
            Some(bin_of(v, edges[0], (edges[n] - edges[0]) / n as f64, n))
        };
        Some((find(&self.x_edges, x)?, find(&self.y_edges, y)?))
    }
}

fn padded(xs: &[f64]) -> (f64, f64) {
    let (lo, hi) = bounds(xs);
    let span = hi - lo;
    if span > 0.0 {
        (lo - 0.1 * span, hi + 0.1 * span)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

/// Density thresholds for each mass in `masses`, found by sorting bin counts
/// from the highest down and accumulating until the mass is reached.
pub fn credible_levels(counts: &[usize], bin_area: f64, masses: &[f64]) -> Vec<CredibleLevel> {
    let total: usize = counts.iter().sum();
    let mut sorted: Vec<usize> = counts.iter().copied().filter(|&c| c > 0).collect();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    masses
        .iter()
        .map(|&mass| {
            let need = mass * total as f64;
            let mut acc = 0usize;
            let mut threshold = sorted.last().copied().unwrap_or(0);
            for &c in &sorted {
                acc += c;
                if acc as f64 >= need {
                    threshold = c;
                    break;
                }
            }
            // ties at the threshold are all inside the region
            let enclosed: usize = counts.iter().filter(|&&c| c >= threshold && c > 0).sum();
            CredibleLevel {
                mass,
                count_threshold: threshold,
                density_threshold: threshold as f64 / (total as f64 * bin_area),
                enclosed_mass: if total > 0 { enclosed as f64 / total as f64 } else { 0.0 },
            }
        })
        .collect()
}

pub fn marginal_2d(chain: &SampleChain, name_x: &str, name_y: &str) -> Result<Histogram2D> {
    let jx = chain.layout.resolve(name_x)?;
    let jy = chain.layout.resolve(name_y)?;
    if jx == jy {
        return Err(Error::invalid(format!(
            "2-D marginal needs two distinct parameters, got {name_x} twice"
        )));
    }
    let xs = chain.coordinate(jx);
    let ys = chain.coordinate(jy);
    if xs.is_empty() {
        return Err(Error::invalid("marginal of an empty chain"));
    }
    check_finite(&xs, "posterior draw")?;
    check_finite(&ys, "posterior draw")?;
    let (xlo, xhi) = padded(&xs);
    let (ylo, yhi) = padded(&ys);
    let (wx, wy) = ((xhi - xlo) / BINS_2D as f64, (yhi - ylo) / BINS_2D as f64);
    let mut counts = vec![0usize; BINS_2D * BINS_2D];
    for (&x, &y) in xs.iter().zip(&ys) {
        counts[bin_of(y, ylo, wy, BINS_2D) * BINS_2D + bin_of(x, xlo, wx, BINS_2D)] += 1;
    }
    Ok(Histogram2D {
        x_name: chain.layout.label(jx),
        y_name: chain.layout.label(jy),
        x_edges: linspace(xlo, xhi, BINS_2D + 1),
        y_edges: linspace(ylo, yhi, BINS_2D + 1),
        levels: credible_levels(&counts, wx * wy, &CREDIBLE_MASSES),
        counts,
    })
}

/// Pearson correlation of two coordinates of a chain.
pub fn sample_correlation(chain: &SampleChain, jx: usize, jy: usize) -> f64 {
    let xs = chain.coordinate(jx);
    let ys = chain.coordinate(jy);
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(&ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

/// Picks the least and the most correlated pair (by absolute sample
/// correlation) from `candidates`. Earlier candidates win ties.
pub fn select_pairs(
    chain: &SampleChain,
    candidates: &[(String, String)],
) -> Result<((String, String, f64), (String, String, f64))> {
    if candidates.is_empty() {
        return Err(Error::invalid("no candidate parameter pairs"));
    }
    let mut scored = Vec::with_capacity(candidates.len());
    for (a, b) in candidates {
        let (ja, jb) = (chain.layout.resolve(a)?, chain.layout.resolve(b)?);
        if ja == jb {
            return Err(Error::invalid(format!("candidate pair repeats {a}")));
        }
        scored.push((a.clone(), b.clone(), sample_correlation(chain, ja, jb)));
    }
    let mut lo = 0;
    let mut hi = 0;
    for (i, s) in scored.iter().enumerate() {
        if s.2.abs() < scored[lo].2.abs() {
            lo = i;
        }
        if s.2.abs() > scored[hi].2.abs() {
            hi = i;
        }
    }
    Ok((scored[lo].clone(), scored[hi].clone()))
}
