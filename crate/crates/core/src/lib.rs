//! Bayesian posteriors for small classifiers: an MLP and a multinomial
//! logistic head, sampled with HMC/NUTS or approximated by a diagonal
//! empirical-Fisher Laplace posterior, plus calibration and selective
//! prediction metrics and SVG figures.

pub mod bundled;
pub mod data;
pub mod error;
pub mod eval;
pub mod exec;
mod io;
pub mod laplace;
pub mod model;
pub mod predict;
pub mod report;
pub mod sampler;

pub use data::{load_dataset, save_dataset, split, standardize, DataFormat, Dataset, SplitSpec};
pub use error::{Error, Result};
pub use exec::Execution;
pub use laplace::{empirical_fisher_diag, laplace_posterior, train_map, GaussianPosterior, OptimizerConfig};
pub use model::{Architecture, Layout, Model, ModelPosterior, ParamVector, Prior};
pub use predict::{batch_predict, decide, posterior_predictive, Decision, Outcome, PredictiveSummary};
pub use sampler::{sample, sample_chains, HmcConfig, SampleChain, Target};
