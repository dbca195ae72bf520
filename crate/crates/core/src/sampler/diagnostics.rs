//! Split-R̂ and effective sample size across one or more chains.

use serde::{Deserialize, Serialize};

use super::SampleChain;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub n_chains: usize,
    pub n_draws: usize,
    pub mean_accept: f64,
    pub divergences: usize,
    pub split_rhat: Vec<f64>,
    pub ess: Vec<f64>,
}

impl Diagnostics {
    pub fn max_rhat(&self) -> f64 {
        self.split_rhat.iter().copied().fold(f64::NAN, f64::max)
    }

    pub fn min_ess(&self) -> f64 {
        self.ess.iter().copied().fold(f64::NAN, f64::min)
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_var(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Potential scale reduction with each chain split in half (the middle draw is
/// dropped for odd lengths). Returns `+inf` when within-chain variance is zero
/// but chain means differ, and NaN when every draw is identical.
pub fn split_rhat(chains: &[&[f64]]) -> Result<f64> {
    check_chains(chains)?;
    let n = chains[0].len() / 2;
    let halves: Vec<&[f64]> = chains
        .iter()
        .flat_map(|c| [&c[..n], &c[c.len() - n..]])
        .collect();
    let nf = n as f64;
    let means: Vec<f64> = halves.iter().map(|h| mean(h)).collect();
    let w = mean(&halves.iter().map(|h| sample_var(h)).collect::<Vec<_>>());
    let b = nf * sample_var(&means);
    if w == 0.0 {
        return Ok(if b == 0.0 { f64::NAN } else { f64::INFINITY });
    }
    let var_plus = (nf - 1.0) / nf * w + b / nf;
    Ok((var_plus / w).sqrt())
}

fn check_chains(chains: &[&[f64]]) -> Result<()> {
    let first = chains
        .first()
        .ok_or_else(|| Error::invalid("diagnostics need at least one chain"))?;
    if first.len() < 4 {
        return Err(Error::invalid(format!(
            "diagnostics need at least 4 draws per chain, got {}",
            first.len()
        )));
    }
    if chains.iter().any(|c| c.len() != first.len()) {
        return Err(Error::invalid("chains have different lengths"));
    }
    Ok(())
}

/// Biased autocovariance at `lag` (divides by `n`).
fn autocov(xs: &[f64], m: f64, lag: usize) -> f64 {
    let n = xs.len();
    xs[..n - lag]
        .iter()
        .zip(&xs[lag..])
        .map(|(a, b)| (a - m) * (b - m))
        .sum::<f64>()
        / n as f64
}

/// Multi-chain effective sample size with Geyer's initial positive sequence,
/// made monotone. Values above the total draw count (antithetic chains) are
/// returned as computed.
pub fn effective_sample_size(chains: &[&[f64]]) -> Result<f64> {
    check_chains(chains)?;
    let m = chains.len();
    let n = chains[0].len();
    let nf = n as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let acov = |lag: usize| -> f64 {
        chains
            .iter()
            .zip(&means)
            .map(|(c, &mu)| autocov(c, mu, lag))
            .sum::<f64>()
            / m as f64
    };
    let mean_var = acov(0) * nf / (nf - 1.0);
    let mut var_plus = mean_var * (nf - 1.0) / nf;
    if m > 1 {
        var_plus += sample_var(&means);
    }
    if var_plus <= 0.0 || !var_plus.is_finite() {
        return Ok(f64::NAN);
    }
    let rho = |lag: usize| 1.0 - (mean_var - acov(lag)) / var_plus;

    let mut rho_hat = vec![0.0; n];
    rho_hat[0] = 1.0;
    let mut even = 1.0;
    let mut odd = rho(1);
    rho_hat[1] = odd;
    let mut s = 1;
    while s < n.saturating_sub(4) && even + odd > 0.0 {
        even = rho(s + 1);
        odd = rho(s + 2);
        if even + odd >= 0.0 {
            rho_hat[s + 1] = even;
            rho_hat[s + 2] = odd;
        }
        s += 2;
    }
    let max_s = s;
    if even > 0.0 && max_s + 1 < n {
        rho_hat[max_s + 1] = even;
    }
    let mut k = 1;
    while k + 3 <= max_s {
        let prev = rho_hat[k - 1] + rho_hat[k];
        if rho_hat[k + 1] + rho_hat[k + 2] > prev {
            rho_hat[k + 1] = prev / 2.0;
            rho_hat[k + 2] = prev / 2.0;
        }
        k += 2;
    }
    let tail = if max_s + 1 < n { rho_hat[max_s + 1] } else { 0.0 };
    let tau = -1.0 + 2.0 * rho_hat[..max_s].iter().sum::<f64>() + tail;
    Ok(m as f64 * nf / tau)
}

/// Acceptance, split-R̂ and ESS for every coordinate of one or more chains.
pub fn diagnostics(chains: &[&SampleChain]) -> Result<Diagnostics> {
    let first = chains
        .first()
        .ok_or_else(|| Error::invalid("diagnostics need at least one chain"))?;
    if chains
        .iter()
        .any(|c| c.n_params != first.n_params || c.n_samples != first.n_samples)
    {
        return Err(Error::invalid("chains differ in shape"));
    }
    if first.n_samples < 4 {
        return Err(Error::invalid(format!(
            "diagnostics need at least 4 draws per chain, got {}",
            first.n_samples
        )));
    }
    let mut split = Vec::with_capacity(first.n_params);
    let mut ess = Vec::with_capacity(first.n_params);
    for j in 0..first.n_params {
        let cols: Vec<Vec<f64>> = chains.iter().map(|c| c.coordinate(j)).collect();
        let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
        split.push(split_rhat(&refs)?);
        ess.push(effective_sample_size(&refs)?);
    }
    Ok(Diagnostics {
        n_chains: chains.len(),
        n_draws: first.n_samples,
        mean_accept: chains.iter().map(|c| c.mean_accept()).sum::<f64>() / chains.len() as f64,
        divergences: chains.iter().map(|c| c.divergences).sum(),
        split_rhat: split,
        ess,
    })
}
