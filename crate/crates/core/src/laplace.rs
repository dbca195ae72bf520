//! Diagonal Laplace approximation: MAP training, the diagonal empirical
//! Fisher, and a Gaussian posterior centred at the MAP.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::exec::{kahan_add_into, Execution};
use crate::io::{read_file, ByteReader, ByteWriter};
use crate::model::{loglik_and_grad_rows, Model, ParamVector, Prior};
use crate::sampler::{default_init, SampleChain};

/// Monte Carlo draws used for the Laplace posterior predictive.
pub const DEFAULT_MC_SAMPLES: usize = 30;

/// Lower bound applied to the posterior precision before inversion.
pub const DEFAULT_PRECISION_FLOOR: f64 = 1e-8;

/// Human-readable form of the precision used by [`laplace_posterior`]; echoed
/// into run metadata.
pub const PRECISION_FORMULA: &str =
    "precision_j = N * mean_i(g_ij^2) + 1/prior_std^2; variance_j = 1/max(precision_j, floor)";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub steps: usize,
    /// Datasets with at most this many rows are trained full-batch.
    pub batch_size: usize,
    /// Stop once the full-data gradient norm falls to this value.
    pub tol: f64,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 1e-2,
            steps: 2000,
            batch_size: 1024,
            tol: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    BudgetExhausted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapEstimate {
    pub theta: ParamVector,
    pub grad_norm: f64,
    pub n_steps: usize,
    /// Negative log-posterior on the full data, once per epoch.
    pub trace: Vec<f64>,
    pub stop: StopReason,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(dim: usize, lr: f64) -> Self {
        Adam {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
            lr,
        }
    }

    /// Ascent step along `grad`.
    fn step(&mut self, theta: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for (((q, g), m), v) in theta
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
            *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
            *q += self.lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Log-posterior on `rows` with the likelihood rescaled to the full dataset.
fn objective<M: Model + ?Sized>(
    model: &M,
    theta: &[f64],
    ds: &Dataset,
    rows: &[usize],
    prior: &Prior,
    exec: Execution,
    grad: &mut [f64],
) -> Result<f64> {
    let scale = ds.len() as f64 / rows.len() as f64;
    let ll = loglik_and_grad_rows(model, theta, ds, rows, scale, exec, grad)?;
    prior.add_grad(theta, grad);
    Ok(ll + prior.log_density(theta))
}

/// Maximizes the log-posterior with Adam from `init`.
pub fn train_map_from<M: Model + ?Sized>(
    model: &M,
    ds: &Dataset,
    prior: &Prior,
    config: &OptimizerConfig,
    init: Vec<f64>,
) -> Result<MapEstimate> {
    if ds.is_empty() {
        return Err(Error::invalid("MAP training needs a nonempty dataset"));
    }
    if init.len() != model.n_params() {
        return Err(Error::Dimension {
            context: "MAP initial point",
            expected: model.n_params(),
            got: init.len(),
        });
    }
    if !(config.learning_rate > 0.0) || config.batch_size == 0 {
        return Err(Error::invalid("learning_rate must be > 0 and batch_size >= 1"));
    }
    let exec = Execution::default();
    let n = ds.len();
    let all: Vec<usize> = (0..n).collect();
    let full_batch = n <= config.batch_size;
    let mut theta = init;
    let mut grad = vec![0.0; theta.len()];
    let mut adam = Adam::new(theta.len(), config.learning_rate);
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let mut trace = Vec::new();
    let mut step = 0;
    let mut stop = StopReason::BudgetExhausted;

    let full_eval = |theta: &[f64], grad: &mut [f64], step: usize| -> Result<f64> {
        let lp = objective(model, theta, ds, &all, prior, exec, grad)
            .map_err(|_| Error::Optimizer { step })?;
        if !lp.is_finite() {
            return Err(Error::Optimizer { step });
        }
        Ok(lp)
    };

    if full_batch {
        while step < config.steps {
            let lp = full_eval(&theta, &mut grad, step)?;
            trace.push(-lp);
            if norm(&grad) <= config.tol {
                stop = StopReason::Converged;
                break;
            }
            adam.step(&mut theta, &grad);
            step += 1;
        }
    } else {
        let mut order = all.clone();
        'epochs: while step < config.steps {
            order.shuffle(&mut rng);
            for batch in order.chunks(config.batch_size) {
                if step >= config.steps {
                    break;
                }
                objective(model, &theta, ds, batch, prior, exec, &mut grad)
                    .map_err(|_| Error::Optimizer { step })?;
                adam.step(&mut theta, &grad);
                step += 1;
            }
            let lp = full_eval(&theta, &mut grad, step)?;
            trace.push(-lp);
            if norm(&grad) <= config.tol {
                stop = StopReason::Converged;
                break 'epochs;
            }
        }
    }

    full_eval(&theta, &mut grad, step)?;
    let grad_norm = norm(&grad);
    if grad_norm <= config.tol {
        stop = StopReason::Converged;
    }
    Ok(MapEstimate {
        theta: ParamVector::new(theta, model.layout())?,
        grad_norm,
        n_steps: step,
        trace,
        stop,
    })
}

/// MAP training from the default `N(0, 0.1^2)` initialization for
/// `config.seed`.
pub fn train_map<M: Model + ?Sized>(
    model: &M,
    ds: &Dataset,
    prior: &Prior,
    config: &OptimizerConfig,
) -> Result<MapEstimate> {
    let init = default_init(model.n_params(), config.seed, 0);
    train_map_from(model, ds, prior, config, init)
}

/// `F_jj = (1/N) sum_i (d/dtheta_j log p(y_i | x_i, theta))^2`.
pub fn empirical_fisher_diag<M: Model + ?Sized>(model: &M, theta: &[f64], ds: &Dataset) -> Result<Vec<f64>> {
    empirical_fisher_diag_with(model, theta, ds, Execution::default())
}

pub fn empirical_fisher_diag_with<M: Model + ?Sized>(
    model: &M,
    theta: &[f64],
    ds: &Dataset,
    exec: Execution,
) -> Result<Vec<f64>> {
    if ds.is_empty() {
        return Err(Error::invalid("Fisher needs a nonempty dataset"));
    }
    let p = model.n_params();
    if theta.len() != p {
        return Err(Error::Dimension {
            context: "parameter vector",
            expected: p,
            got: theta.len(),
        });
    }
    if ds.n_features() != model.input_dim() {
        return Err(Error::Dimension {
            context: "dataset features",
            expected: model.input_dim(),
            got: ds.n_features(),
        });
    }
    let blocks = exec.map_blocks(ds.len(), |rows| {
        let mut acc = vec![0.0; p];
        let mut g = vec![0.0; p];
        for i in rows {
            g.iter_mut().for_each(|v| *v = 0.0);
            model.loglik_grad_into(theta, ds.row(i), ds.label(i), &mut g);
            if g.iter().any(|v| !v.is_finite()) {
                return Err(i);
            }
            for (a, v) in acc.iter_mut().zip(&g) {
                *a += v * v;
            }
        }
        Ok(acc)
    });
    let mut total = vec![0.0; p];
    let mut comp = vec![0.0; p];
    for b in blocks {
        let acc = b.map_err(|i| Error::NonFinite {
            what: "per-example gradient",
            index: i,
        })?;
        kahan_add_into(&mut total, &mut comp, &acc);
    }
    let n = ds.len() as f64;
    Ok(total.iter().zip(&comp).map(|(t, c)| (t + c) / n).collect())
}

/// Diagonal Gaussian posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPosterior {
    pub mean: ParamVector,
    pub variance: Vec<f64>,
}

const GAUSSIAN_MAGIC: &[u8; 4] = b"BHGP";

impl GaussianPosterior {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = ByteWriter::with_header(GAUSSIAN_MAGIC);
        w.len_u32(self.variance.len())?;
        w.layout(&self.mean.layout)?;
        w.f64s(&self.mean.values);
        w.f64s(&self.variance);
        Ok(w.into_bytes())
    }

    pub fn from_bytes(bytes: &[u8], origin: &str) -> Result<Self> {
        let mut r = ByteReader::new(bytes, origin);
        r.header(GAUSSIAN_MAGIC)?;
        let p = r.u32()? as usize;
        let layout = r.layout()?;
        if layout.len() != p {
            return Err(r.err("layout does not match parameter count"));
        }
        let mean = r.f64s(p)?;
        let variance = r.f64s(p)?;
        r.finish()?;
        if variance.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(r.err("variance entries must be positive and finite"));
        }
        Ok(GaussianPosterior {
            mean: ParamVector::new(mean, layout)?,
            variance,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?, &path.display().to_string())
    }
}

/// Gaussian at `theta_map` with per-coordinate precision
/// `n * fisher_j + 1/sigma_prior^2`, floored at `floor` before inversion.
pub fn laplace_posterior(
    theta_map: &ParamVector,
    fisher_diag: &[f64],
    prior: &Prior,
    n: usize,
    floor: f64,
) -> Result<GaussianPosterior> {
    if fisher_diag.len() != theta_map.values.len() {
        return Err(Error::Dimension {
            context: "Fisher diagonal",
            expected: theta_map.values.len(),
            got: fisher_diag.len(),
        });
    }
    if let Some(j) = fisher_diag.iter().position(|f| !(*f >= 0.0 && f.is_finite())) {
        return Err(Error::invalid(format!(
            "Fisher entry {j} is {}; entries must be finite and >= 0",
            fisher_diag[j]
        )));
    }
    if !(floor > 0.0) {
        return Err(Error::invalid("precision floor must be positive"));
    }
    let prior_precision = prior.precision();
    let variance = fisher_diag
        .iter()
        .map(|f| 1.0 / (n as f64 * f + prior_precision).max(floor))
        .collect();
    Ok(GaussianPosterior {
        mean: theta_map.clone(),
        variance,
    })
}

/// `S` independent draws `mean + sqrt(variance) * z`.
pub fn sample_gaussian(posterior: &GaussianPosterior, n_samples: usize, seed: u64) -> Result<SampleChain> {
    if n_samples == 0 {
        return Err(Error::invalid("need at least one sample"));
    }
    let p = posterior.variance.len();
    let sd: Vec<f64> = posterior.variance.iter().map(|v| v.sqrt()).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut draws = Vec::with_capacity(n_samples * p);
    for _ in 0..n_samples {
        for (m, s) in posterior.mean.values.iter().zip(&sd) {
            let z: f64 = rng.sample(StandardNormal);
            draws.push(m + s * z);
        }
    }
    Ok(SampleChain {
        draws,
        n_samples,
        n_params: p,
        accept_stats: vec![1.0; n_samples],
        divergences: 0,
        step_size_final: 0.0,
        seed,
        layout: posterior.mean.layout.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{per_example_grad_loglik, Architecture, Layout};

    fn two_class() -> Dataset {
        Dataset::new(
            vec![2.0, 1.0, 1.5, 2.0, -1.0, -2.0, -2.0, -0.5],
            2,
            vec![0, 0, 1, 1],
            2,
        )
        .unwrap()
    }

    #[test]
    fn strong_prior_keeps_map_small() {
        let arch = Architecture::head(2, 2).unwrap();
        let est = train_map(&arch, &two_class(), &Prior::new(0.1).unwrap(), &OptimizerConfig::default()).unwrap();
        assert!(est.theta.values.iter().all(|v| v.is_finite()));
        assert!(norm(&est.theta.values) < 0.5);
        assert!(!est.trace.is_empty());
    }

    #[test]
    fn zero_steps_returns_initialization() {
        let arch = Architecture::head(2, 2).unwrap();
        let cfg = OptimizerConfig {
            steps: 0,
            ..Default::default()
        };
        let init = vec![0.3, -0.1, 0.2, 0.0, 0.1, -0.2];
        let est = train_map_from(&arch, &two_class(), &Prior::default(), &cfg, init.clone()).unwrap();
        assert_eq!(est.theta.values, init);
        assert_eq!(est.n_steps, 0);
        let g = crate::model::grad_log_posterior(&arch, &init, &two_class(), &Prior::default()).unwrap();
        assert!((est.grad_norm - norm(&g)).abs() < 1e-12);
        assert_eq!(est.stop, StopReason::BudgetExhausted);
    }

    #[test]
    fn minibatch_training_is_deterministic() {
        let arch = Architecture::head(2, 2).unwrap();
        let cfg = OptimizerConfig {
            batch_size: 3,
            steps: 40,
            seed: 5,
            ..Default::default()
        };
        let a = train_map(&arch, &two_class(), &Prior::default(), &cfg).unwrap();
        let b = train_map(&arch, &two_class(), &Prior::default(), &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n_steps, 40);
        assert_eq!(a.trace.len(), 20);
    }

    #[test]
    fn fisher_single_example_is_squared_gradient() {
        let arch = Architecture::mlp(2, 3, 2).unwrap();
        let theta: Vec<f64> = (0..arch.n_params()).map(|k| (k as f64 * 0.7).cos() * 0.5).collect();
        let ds = two_class().select(&[2]);
        let f = empirical_fisher_diag(&arch, &theta, &ds).unwrap();
        let g = per_example_grad_loglik(&arch, &theta, ds.row(0), ds.label(0)).unwrap();
        for (a, b) in f.iter().zip(&g) {
            assert!((a - b * b).abs() < 1e-15);
        }
    }

    #[test]
    fn fisher_vanishes_when_saturated() {
        let arch = Architecture::head(2, 2).unwrap();
        // class 0 on x0 + x1 > 0, scaled far into saturation
        let theta = [200.0, 200.0, -200.0, -200.0, 0.0, 0.0];
        let f = empirical_fisher_diag(&arch, &theta, &two_class()).unwrap();
        assert!(f.iter().all(|v| *v < 1e-100), "{f:?}");
    }

    #[test]
    fn fisher_invariant_to_row_duplication() {
        let arch = Architecture::head(2, 2).unwrap();
        let theta = [0.1, -0.2, 0.3, 0.4, 0.0, 0.1];
        let ds = two_class();
        let doubled = ds.select(&[0, 1, 2, 3, 0, 1, 2, 3]);
        let a = empirical_fisher_diag(&arch, &theta, &ds).unwrap();
        let b = empirical_fisher_diag(&arch, &theta, &doubled).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn laplace_limits() {
        let mean = ParamVector::new(vec![0.5, -0.5], Layout::flat(2)).unwrap();
        let prior = Prior::new(2.0).unwrap();
        let post = laplace_posterior(&mean, &[0.0, 0.0], &prior, 10, 1e-8).unwrap();
        assert_eq!(post.variance, vec![4.0, 4.0]);
        assert_eq!(post.mean, mean);

        let wide = Prior::new(1e8).unwrap();
        let post = laplace_posterior(&mean, &[0.5, 2.0], &wide, 40, 1e-8).unwrap();
        assert!((post.variance[0] - 1.0 / 20.0).abs() < 1e-12);
        assert!((post.variance[1] - 1.0 / 80.0).abs() < 1e-12);

        // floor guards the no-data, flat-prior corner
        let post = laplace_posterior(&mean, &[0.0, 0.0], &Prior::new(1e10).unwrap(), 5, 1e-8).unwrap();
        assert_eq!(post.variance, vec![1e8, 1e8]);
        assert!(laplace_posterior(&mean, &[-1.0, 0.0], &prior, 5, 1e-8).is_err());
    }

    #[test]
    fn laplace_variance_monotone_in_n_and_fisher() {
        let mean = ParamVector::new(vec![0.0; 3], Layout::flat(3)).unwrap();
        let prior = Prior::default();
        let f = [0.1, 0.5, 2.0];
        let mut prev: Option<Vec<f64>> = None;
        for n in [1, 5, 50, 500] {
            let v = laplace_posterior(&mean, &f, &prior, n, 1e-8).unwrap().variance;
            assert!(v.windows(2).all(|w| w[1] <= w[0]));
            if let Some(p) = &prev {
                assert!(v.iter().zip(p).all(|(a, b)| a <= b));
            }
            prev = Some(v);
        }
    }

    #[test]
    fn gaussian_sampling_moments_and_degenerate_spread() {
        let mean = ParamVector::new(vec![1.0, -2.0, 0.0], Layout::flat(3)).unwrap();
        let post = GaussianPosterior {
            mean: mean.clone(),
            variance: vec![0.25, 4.0, 1.0],
        };
        let chain = sample_gaussian(&post, 10_000, 17).unwrap();
        for j in 0..3 {
            let xs = chain.coordinate(j);
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64;
            assert!((v / post.variance[j] - 1.0).abs() < 0.1);
        }
        let tight = GaussianPosterior {
            mean,
            variance: vec![1e-20; 3],
        };
        let chain = sample_gaussian(&tight, 5, 1).unwrap();
        for d in chain.draws_iter() {
            assert!((d[0] - 1.0).abs() < 1e-8 && (d[1] + 2.0).abs() < 1e-8);
        }
        assert_eq!(sample_gaussian(&tight, 5, 1).unwrap(), chain);
        assert!(sample_gaussian(&tight, 0, 1).is_err());
    }

    #[test]
    fn gaussian_posterior_binary_round_trip() {
        let post = GaussianPosterior {
            mean: ParamVector::new(vec![1.0, 2.0], Layout::flat(2)).unwrap(),
            variance: vec![0.5, 0.25],
        };
        let bytes = post.to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"BHGP");
        assert_eq!(GaussianPosterior::from_bytes(&bytes, "m").unwrap(), post);
    }
}
