//! Hamiltonian Monte Carlo: fixed-length HMC and the No-U-Turn sampler, with
//! dual-averaging step-size adaptation and optional diagonal mass estimation
//! during warmup.

mod adapt;
mod diagnostics;
mod leapfrog;
mod nuts;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::io::{read_file, ByteReader, ByteWriter};
use crate::model::{log_posterior_and_grad, Layout, Model, ModelPosterior};

pub use adapt::{DualAveraging, RunningVariance, WarmupSchedule};
pub use diagnostics::{diagnostics, effective_sample_size, split_rhat, Diagnostics};
pub use leapfrog::{kinetic_energy, leapfrog, leapfrog_step, PhasePoint};

/// Energy error above which a trajectory is declared divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1000.0;

/// A differentiable (unnormalized) log-density.
pub trait Target: Sync {
    fn dim(&self) -> usize;

    /// Writes the gradient into `grad` and returns the log-density.
    fn log_density_and_grad(&self, theta: &[f64], grad: &mut [f64]) -> Result<f64>;
}

/// Target assembled from a log-density closure and a gradient closure.
pub struct FnTarget<L, G> {
    dim: usize,
    log_density: L,
    grad: G,
}

impl<L, G> FnTarget<L, G>
where
    L: Fn(&[f64]) -> f64 + Sync,
    G: Fn(&[f64], &mut [f64]) + Sync,
{
    pub fn new(dim: usize, log_density: L, grad: G) -> Self {
        FnTarget {
            dim,
            log_density,
            grad,
        }
    }
}

impl<L, G> Target for FnTarget<L, G>
where
    L: Fn(&[f64]) -> f64 + Sync,
    G: Fn(&[f64], &mut [f64]) + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density_and_grad(&self, theta: &[f64], grad: &mut [f64]) -> Result<f64> {
        (self.grad)(theta, grad);
        Ok((self.log_density)(theta))
    }
}

impl<M: Model + ?Sized> Target for ModelPosterior<'_, M> {
    fn dim(&self) -> usize {
        self.model.n_params()
    }

    fn log_density_and_grad(&self, theta: &[f64], grad: &mut [f64]) -> Result<f64> {
        let (lp, g) = log_posterior_and_grad(self.model, theta, self.data, &self.prior, self.exec)?;
        grad.copy_from_slice(&g);
        Ok(lp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Algorithm {
    /// Fixed trajectory of `n_leapfrog` steps. `step_size` is the initial
    /// value; it is adapted during warmup unless `n_warmup` is 0.
    HmcFixed { n_leapfrog: usize, step_size: f64 },
    Nuts,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MassMatrix {
    Identity,
    /// Diagonal, estimated from warmup draws.
    Diagonal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HmcConfig {
    pub n_warmup: usize,
    pub n_samples: usize,
    pub seed: u64,
    pub target_accept: f64,
    pub max_tree_depth: usize,
    pub algorithm: Algorithm,
    pub mass: MassMatrix,
}

impl HmcConfig {
    pub fn nuts(n_warmup: usize, n_samples: usize, seed: u64) -> Self {
        HmcConfig {
            n_warmup,
            n_samples,
            seed,
            target_accept: 0.8,
            max_tree_depth: 10,
            algorithm: Algorithm::Nuts,
            mass: MassMatrix::Diagonal,
        }
    }

    pub fn hmc(n_warmup: usize, n_samples: usize, seed: u64, n_leapfrog: usize, step_size: f64) -> Self {
        HmcConfig {
            algorithm: Algorithm::HmcFixed {
                n_leapfrog,
                step_size,
            },
            ..HmcConfig::nuts(n_warmup, n_samples, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::invalid("n_samples must be >= 1"));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::invalid(format!(
                "target_accept must lie in (0, 1), got {}",
                self.target_accept
            )));
        }
        match self.algorithm {
            Algorithm::Nuts if self.max_tree_depth == 0 => Err(Error::invalid(
                "max_tree_depth must be >= 1; depth 0 allows no trajectory",
            )),
            Algorithm::HmcFixed {
                n_leapfrog,
                step_size,
            } if n_leapfrog == 0 || !(step_size > 0.0 && step_size.is_finite()) => Err(
                Error::invalid("fixed HMC needs n_leapfrog >= 1 and a positive step size"),
            ),
            _ => Ok(()),
        }
    }
}

/// Posterior draws plus per-draw sampler statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleChain {
    /// Row-major `n_samples x n_params`.
    pub draws: Vec<f64>,
    pub n_samples: usize,
    pub n_params: usize,
    pub accept_stats: Vec<f64>,
    pub divergences: usize,
    pub step_size_final: f64,
    pub seed: u64,
    pub layout: Layout,
}

const CHAIN_MAGIC: &[u8; 4] = b"BHSC";

impl SampleChain {
    pub fn draw(&self, s: usize) -> &[f64] {
        &self.draws[s * self.n_params..(s + 1) * self.n_params]
    }

    pub fn draws_iter(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.draws.chunks_exact(self.n_params.max(1))
    }

    /// All draws of one coordinate.
    pub fn coordinate(&self, j: usize) -> Vec<f64> {
        self.draws_iter().map(|d| d[j]).collect()
    }

    pub fn mean_accept(&self) -> f64 {
        self.accept_stats.iter().sum::<f64>() / self.accept_stats.len().max(1) as f64
    }

    pub fn with_layout(mut self, layout: Layout) -> Result<Self> {
        if layout.len() != self.n_params {
            return Err(Error::Dimension {
                context: "chain layout",
                expected: self.n_params,
                got: layout.len(),
            });
        }
        self.layout = layout;
        Ok(self)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = ByteWriter::with_header(CHAIN_MAGIC);
        w.len_u32(self.n_samples)?;
        w.len_u32(self.n_params)?;
        w.layout(&self.layout)?;
        w.f64s(&self.draws);
        w.f64s(&self.accept_stats);
        w.len_u32(self.divergences)?;
        w.f64(self.step_size_final);
        w.u64(self.seed);
        Ok(w.into_bytes())
    }

    pub fn from_bytes(bytes: &[u8], origin: &str) -> Result<Self> {
        let mut r = ByteReader::new(bytes, origin);
        r.header(CHAIN_MAGIC)?;
        let n_samples = r.u32()? as usize;
        let n_params = r.u32()? as usize;
        let layout = r.layout()?;
        if layout.len() != n_params {
            return Err(r.err("layout does not match parameter count"));
        }
        let draws = r.f64s(n_samples * n_params)?;
        let accept_stats = r.f64s(n_samples)?;
        let divergences = r.u32()? as usize;
        let step_size_final = r.f64()?;
        let seed = r.u64()?;
        r.finish()?;
        Ok(SampleChain {
            draws,
            n_samples,
            n_params,
            accept_stats,
            divergences,
            step_size_final,
            seed,
            layout,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?, &path.display().to_string())
    }

    /// One row per draw, columns named by the layout.
    pub fn to_csv(&self) -> String {
        let mut out: Vec<String> = (0..self.n_params).map(|j| self.layout.label(j)).collect();
        let mut s = out.join(",");
        s.push('\n');
        for d in self.draws_iter() {
            out.clear();
            out.extend(d.iter().map(|v| format!("{v:e}")));
            s.push_str(&out.join(","));
            s.push('\n');
        }
        s
    }
}

/// Outcome of one MCMC transition.
#[derive(Debug, Clone)]
pub(crate) struct Transition {
    pub point: PhasePoint,
    pub accept_stat: f64,
    pub diverged: bool,
}

pub(crate) fn sample_momentum<R: Rng>(rng: &mut R, inv_mass: &[f64], out: &mut [f64]) {
    for (r, m) in out.iter_mut().zip(inv_mass) {
        let z: f64 = rng.sample(StandardNormal);
        *r = z / m.sqrt();
    }
}

/// Fixed-length HMC transition with a Metropolis correction.
/// Fixed-length trajectories draw their step size uniformly from
/// `step * [1 - STEP_JITTER, 1 + STEP_JITTER]`; an exact constant length
/// resonates with near-Gaussian targets.
pub const STEP_JITTER: f64 = 0.2;

fn hmc_transition<T: Target + ?Sized, R: Rng>(
    target: &T,
    current: &PhasePoint,
    step_size: f64,
    n_leapfrog: usize,
    inv_mass: &[f64],
    rng: &mut R,
) -> Transition {
    let mut start = current.clone();
    sample_momentum(rng, inv_mass, &mut start.momentum);
    let h0 = start.hamiltonian(inv_mass);
    let u: f64 = rng.random();
    let eps = step_size * (1.0 + STEP_JITTER * (2.0 * rng.random::<f64>() - 1.0));
    let end = leapfrog(target, &start, eps, n_leapfrog, inv_mass);
    let (accept_stat, diverged, proposal) = match end {
        Some(p) => {
            let dh = p.hamiltonian(inv_mass) - h0;
            if !dh.is_finite() || dh > DIVERGENCE_THRESHOLD {
                (0.0, true, None)
            } else {
                ((-dh).exp().min(1.0), false, Some(p))
            }
        }
        None => (0.0, true, None),
    };
    let point = match proposal {
        Some(p) if u < accept_stat => p,
        _ => start,
    };
    Transition {
        point,
        accept_stat,
        diverged,
    }
}

/// Step-size heuristic: doubles or halves from `initial` until the one-step
/// acceptance probability crosses 1/2.
fn find_initial_step<T: Target + ?Sized, R: Rng>(
    target: &T,
    current: &PhasePoint,
    initial: f64,
    inv_mass: &[f64],
    rng: &mut R,
) -> f64 {
    let mut start = current.clone();
    sample_momentum(rng, inv_mass, &mut start.momentum);
    let h0 = start.hamiltonian(inv_mass);
    let log_accept = |eps: f64| match leapfrog(target, &start, eps, 1, inv_mass) {
        Some(p) => {
            let v = h0 - p.hamiltonian(inv_mass);
            if v.is_nan() {
                f64::NEG_INFINITY
            } else {
                v
            }
        }
        None => f64::NEG_INFINITY,
    };
    let mut eps = initial;
    let dir = if log_accept(eps) > 0.5f64.ln() { 1.0 } else { -1.0 };
    for _ in 0..100 {
        let la = log_accept(eps);
        if dir * la <= -dir * 2f64.ln() {
            break;
        }
        eps *= 2f64.powf(dir);
        if !(1e-12..=1e6).contains(&eps) {
            break;
        }
    }
    eps.clamp(1e-12, 1e6)
}

/// Default initialization: `N(0, 0.1^2)` per coordinate, from a stream
/// separate from the transition stream.
pub fn default_init(dim: usize, seed: u64, chain: u64) -> Vec<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream((1u64 << 32) | chain);
    (0..dim)
        .map(|_| 0.1 * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn run_chain<T: Target + ?Sized>(
    target: &T,
    init: &[f64],
    config: &HmcConfig,
    stream: u64,
) -> Result<SampleChain> {
    config.validate()?;
    let dim = target.dim();
    if dim == 0 {
        return Err(Error::invalid("target has no parameters"));
    }
    if init.len() != dim {
        return Err(Error::Dimension {
            context: "initial point",
            expected: dim,
            got: init.len(),
        });
    }
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    rng.set_stream(stream);

    let mut current = PhasePoint::at(target, init.to_vec())?;
    if !current.is_finite() {
        return Err(Error::Sampler(
            "log-density or gradient is non-finite at the initial point".into(),
        ));
    }
    let mut inv_mass = vec![1.0; dim];

    let initial_step = match config.algorithm {
        Algorithm::HmcFixed { step_size, .. } => step_size,
        Algorithm::Nuts => find_initial_step(target, &current, 1.0, &inv_mass, &mut rng),
    };
    let mut step = initial_step;
    let mut adapter = DualAveraging::new(step, config.target_accept);
    let schedule = WarmupSchedule::new(config.n_warmup, config.mass == MassMatrix::Diagonal);
    let mut window = RunningVariance::new(dim);

    let transition = |current: &PhasePoint, step: f64, inv_mass: &[f64], rng: &mut ChaCha20Rng| {
        match config.algorithm {
            Algorithm::HmcFixed { n_leapfrog, .. } => {
                hmc_transition(target, current, step, n_leapfrog, inv_mass, rng)
            }
            Algorithm::Nuts => {
                nuts::transition(target, current, step, config.max_tree_depth, inv_mass, rng)
            }
        }
    };

    let mut warmup_divergences = 0;
    for i in 0..config.n_warmup {
        let t = transition(&current, step, &inv_mass, &mut rng);
        warmup_divergences += usize::from(t.diverged);
        current = t.point;
        adapter.update(t.accept_stat);
        step = adapter.current();
        if schedule.in_slow_window(i) {
            window.push(&current.position);
        }
        if schedule.ends_window(i) {
            inv_mass = window.regularized_variance();
            window = RunningVariance::new(dim);
            step = find_initial_step(target, &current, step, &inv_mass, &mut rng);
            adapter.restart(step);
        }
    }
    if config.n_warmup > 0 && warmup_divergences == config.n_warmup {
        return Err(Error::Sampler(format!(
            "every warmup transition diverged (initial step size {initial_step:.3e}); \
             retry with a smaller initial step size"
        )));
    }
    if config.n_warmup > 0 {
        step = adapter.final_step();
    }

    let mut draws = Vec::with_capacity(config.n_samples * dim);
    let mut accept_stats = Vec::with_capacity(config.n_samples);
    let mut divergences = 0;
    for _ in 0..config.n_samples {
        let t = transition(&current, step, &inv_mass, &mut rng);
        divergences += usize::from(t.diverged);
        accept_stats.push(t.accept_stat);
        current = t.point;
        draws.extend_from_slice(&current.position);
    }

    Ok(SampleChain {
        draws,
        n_samples: config.n_samples,
        n_params: dim,
        accept_stats,
        divergences,
        step_size_final: step,
        seed: config.seed,
        layout: Layout::flat(dim),
    })
}

/// Samples with fixed-length HMC. `config.algorithm` must be `HmcFixed`.
pub fn hmc_sample<T: Target + ?Sized>(target: &T, init: &[f64], config: &HmcConfig) -> Result<SampleChain> {
    if !matches!(config.algorithm, Algorithm::HmcFixed { .. }) {
        return Err(Error::invalid("hmc_sample needs Algorithm::HmcFixed"));
    }
    run_chain(target, init, config, 0)
}

/// Samples with the No-U-Turn sampler, ignoring `config.algorithm`.
pub fn nuts_sample<T: Target + ?Sized>(target: &T, init: &[f64], config: &HmcConfig) -> Result<SampleChain> {
    let config = HmcConfig {
        algorithm: Algorithm::Nuts,
        ..*config
    };
    run_chain(target, init, &config, 0)
}

/// Runs the algorithm named in `config`.
pub fn sample<T: Target + ?Sized>(target: &T, init: &[f64], config: &HmcConfig) -> Result<SampleChain> {
    run_chain(target, init, config, 0)
}

/// Independent chains, chain `k` on random stream `k` of `config.seed`.
/// Chain 0 reproduces [`sample`] with the same config. With `inits = None`,
/// each chain starts from [`default_init`].
pub fn sample_chains<T: Target + ?Sized>(
    target: &T,
    n_chains: usize,
    inits: Option<&[Vec<f64>]>,
    config: &HmcConfig,
    exec: Execution,
) -> Result<Vec<SampleChain>> {
    if let Some(inits) = inits {
        if inits.len() != n_chains {
            return Err(Error::Dimension {
                context: "chain initial points",
                expected: n_chains,
                got: inits.len(),
            });
        }
    }
    exec.map(n_chains, |k| {
        let init = match inits {
            Some(v) => v[k].clone(),
            None => default_init(target.dim(), config.seed, k as u64),
        };
        run_chain(target, &init, config, k as u64)
    })
    .into_iter()
    .collect()
}
