//! Text summary of saved sample chains.

use std::fmt::Write;
use std::path::Path;

use bayeshead_core::sampler::{diagnostics, SampleChain};
use bayeshead_core::Result;

/// Parameters listed individually before the table is truncated.
const MAX_ROWS: usize = 20;

pub fn inspect(paths: &[&Path]) -> Result<String> {
    let chains: Vec<SampleChain> = paths.iter().map(|p| SampleChain::load(p)).collect::<Result<_>>()?;
    let mut out = String::new();
    for (p, c) in paths.iter().zip(&chains) {
        writeln!(out, "{}", p.display()).unwrap();
        writeln!(out, "  draws: {}", c.n_samples).unwrap();
        writeln!(out, "  parameters: {}", c.n_params).unwrap();
        let tensors: Vec<String> = c
            .layout
            .entries()
            .iter()
            .map(|t| format!("{}{:?}", t.name, t.shape))
            .collect();
        writeln!(out, "  layout: {}", tensors.join(" ")).unwrap();
        writeln!(out, "  seed: {}", c.seed).unwrap();
        writeln!(out, "  final step size: {}", c.step_size_final).unwrap();
        writeln!(out, "  mean accept: {:.4}", c.mean_accept()).unwrap();
        writeln!(out, "  divergences: {}", c.divergences).unwrap();
    }
    let refs: Vec<&SampleChain> = chains.iter().collect();
    let d = diagnostics(&refs)?;
    writeln!(out, "chains: {}, draws per chain: {}", d.n_chains, d.n_draws).unwrap();
    writeln!(out, "max split-R-hat: {:.4}", d.max_rhat()).unwrap();
    writeln!(out, "min ESS: {:.1}", d.min_ess()).unwrap();
    writeln!(out, "{:<14} {:>12} {:>12} {:>10} {:>10}", "parameter", "mean", "std", "R-hat", "ESS").unwrap();
    let layout = &chains[0].layout;
    for j in 0..d.split_rhat.len().min(MAX_ROWS) {
        let xs: Vec<f64> = chains.iter().flat_map(|c| c.coordinate(j)).collect();
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let s = (xs.iter().map(|v| (v - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt();
        writeln!(
            out,
            "{:<14} {:>12.5} {:>12.5} {:>10.4} {:>10.1}",
            layout.label(j),
            m,
            s,
            d.split_rhat[j],
            d.ess[j]
        )
        .unwrap();
    }
    if d.split_rhat.len() > MAX_ROWS {
        writeln!(out, "... {} more parameters", d.split_rhat.len() - MAX_ROWS).unwrap();
    }
    Ok(out)
}
