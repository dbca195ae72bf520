//! Parametric classifiers, their log-posterior under an isotropic Gaussian
//! prior, and exact gradients.
//!
//! Parameters live in one flat vector. A [`Layout`] maps it back to named
//! tensors (`W1`, `b1`, `W2`, `b2` for the MLP; `W`, `b` for the linear head),
//! stored row-major with weight matrices shaped `[out, in]`.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::exec::{kahan_add_into, Execution, KahanSum};
use crate::io::{read_file, ByteReader, ByteWriter};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl TensorSpec {
    pub fn new(name: &str, shape: &[usize]) -> Self {
        TensorSpec {
            name: name.to_string(),
            shape: shape.to_vec(),
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Named tensors packed into a flat vector, in entry order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    entries: Vec<TensorSpec>,
    offsets: Vec<usize>,
    len: usize,
}

impl Layout {
    pub fn new(entries: Vec<TensorSpec>) -> Result<Self> {
        let mut offsets = Vec::with_capacity(entries.len());
        let mut len = 0usize;
        for (i, t) in entries.iter().enumerate() {
            if t.name.is_empty() || entries[..i].iter().any(|o| o.name == t.name) {
                return Err(Error::invalid(format!(
                    "layout entry `{}` is empty or duplicated",
                    t.name
                )));
            }
            offsets.push(len);
            len += t.numel();
        }
        Ok(Layout {
            entries,
            offsets,
            len,
        })
    }

    /// Single unnamed-vector layout, `theta[P]`.
    pub fn flat(p: usize) -> Self {
        Layout::new(vec![TensorSpec::new("theta", &[p])]).unwrap()
    }

    pub fn entries(&self) -> &[TensorSpec] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn offset(&self, name: &str) -> Option<usize> {
        self.entries
            .iter()
            .position(|t| t.name == name)
            .map(|i| self.offsets[i])
    }

    /// Resolves an element label such as `W1[0,1]` or `b2[1]` to a flat index.
    pub fn resolve(&self, label: &str) -> Result<usize> {
        let unknown = || Error::UnknownParameter {
            name: label.to_string(),
            valid: self.describe(),
        };
        let (name, rest) = label.split_once('[').ok_or_else(unknown)?;
        let idx_str = rest.strip_suffix(']').ok_or_else(unknown)?;
        let idx: Vec<usize> = idx_str
            .split(',')
            .map(|s| s.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| unknown())?;
        let k = self
            .entries
            .iter()
            .position(|t| t.name == name)
            .ok_or_else(unknown)?;
        let t = &self.entries[k];
        if idx.len() != t.shape.len() || idx.iter().zip(&t.shape).any(|(i, d)| i >= d) {
            return Err(unknown());
        }
        let flat = idx
            .iter()
            .zip(&t.shape)
            .fold(0usize, |acc, (&i, &d)| acc * d + i);
        Ok(self.offsets[k] + flat)
    }

    /// Element label for a flat index, inverse of [`Layout::resolve`].
    pub fn label(&self, index: usize) -> String {
        let k = match self.offsets.iter().rposition(|&o| o <= index) {
            Some(k) if index < self.len => k,
            _ => return format!("theta[{index}]"),
        };
        let t = &self.entries[k];
        let mut rem = index - self.offsets[k];
        let mut idx = vec![0; t.shape.len()];
        for (slot, &d) in idx.iter_mut().zip(&t.shape).rev() {
            *slot = rem % d;
            rem /= d;
        }
        let parts: Vec<String> = idx.iter().map(|i| i.to_string()).collect();
        format!("{}[{}]", t.name, parts.join(","))
    }

    fn describe(&self) -> String {
        self.entries
            .iter()
            .map(|t| {
                let dims: Vec<String> = t.shape.iter().map(|d| format!("0..{d}")).collect();
                format!("{}[{}]", t.name, dims.join(","))
            })
            .collect::<Vec<_>>()
            .join(", ")
    }
}

/// Flat parameter vector with its layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub values: Vec<f64>,
    pub layout: Layout,
}

const PARAM_MAGIC: &[u8; 4] = b"BHPV";

impl ParamVector {
    pub fn new(values: Vec<f64>, layout: Layout) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::Dimension {
                context: "parameter vector",
                expected: layout.len(),
                got: values.len(),
            });
        }
        Ok(ParamVector { values, layout })
    }

    pub fn zeros(layout: Layout) -> Self {
        ParamVector {
            values: vec![0.0; layout.len()],
            layout,
        }
    }

    pub fn get(&self, label: &str) -> Result<f64> {
        Ok(self.values[self.layout.resolve(label)?])
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        let off = self.layout.offset(name)?;
        let n = self
            .layout
            .entries()
            .iter()
            .find(|t| t.name == name)?
            .numel();
        Some(&self.values[off..off + n])
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = ByteWriter::with_header(PARAM_MAGIC);
        w.len_u32(self.values.len())?;
        w.layout(&self.layout)?;
        w.f64s(&self.values);
        Ok(w.into_bytes())
    }

    pub fn from_bytes(bytes: &[u8], origin: &str) -> Result<Self> {
        let mut r = ByteReader::new(bytes, origin);
        r.header(PARAM_MAGIC)?;
        let p = r.u32()? as usize;
        let layout = r.layout()?;
        if layout.len() != p {
            return Err(r.err(format!("layout covers {} values, header says {p}", layout.len())));
        }
        let values = r.f64s(p)?;
        r.finish()?;
        Ok(ParamVector { values, layout })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?, &path.display().to_string())
    }
}

/// Isotropic Gaussian prior `N(0, std_dev^2 I)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prior {
    pub std_dev: f64,
}

impl Prior {
    pub fn new(std_dev: f64) -> Result<Self> {
        if !(std_dev > 0.0 && std_dev.is_finite()) {
            return Err(Error::invalid(format!(
                "prior std_dev must be positive and finite, got {std_dev}"
            )));
        }
        Ok(Prior { std_dev })
    }

    pub fn precision(&self) -> f64 {
        1.0 / (self.std_dev * self.std_dev)
    }

    /// `-|theta|^2 / (2 sigma^2)`; the normalizing constant is dropped.
    pub fn log_density(&self, theta: &[f64]) -> f64 {
        let sq: KahanSum = theta.iter().map(|t| t * t).collect();
        -0.5 * self.precision() * sq.value()
    }

    pub fn add_grad(&self, theta: &[f64], grad: &mut [f64]) {
        let prec = self.precision();
        for (g, t) in grad.iter_mut().zip(theta) {
            *g -= prec * t;
        }
    }
}

impl Default for Prior {
    fn default() -> Self {
        Prior { std_dev: 1.0 }
    }
}

/// A classifier mapping a feature vector to class logits.
///
/// `loglik_grad_into` adds the gradient of `log p(y | x, theta)` into `grad`
/// and returns the log-probability; implementations must not assume `grad` is
/// zeroed.
pub trait Model: Sync + Send {
    fn input_dim(&self) -> usize;
    fn n_classes(&self) -> usize;
    fn layout(&self) -> Layout;

    fn n_params(&self) -> usize {
        self.layout().len()
    }

    fn logits_into(&self, theta: &[f64], x: &[f64], out: &mut [f64]);

    fn loglik_grad_into(&self, theta: &[f64], x: &[f64], y: usize, grad: &mut [f64]) -> f64;

    fn loglik(&self, theta: &[f64], x: &[f64], y: usize) -> f64 {
        let mut z = vec![0.0; self.n_classes()];
        self.logits_into(theta, x, &mut z);
        z[y] - log_sum_exp(&z)
    }
}

/// One hidden tanh layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpArchitecture {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub n_classes: usize,
}

/// Multinomial logistic regression over concatenated option embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadArchitecture {
    pub input_dim: usize,
    pub n_classes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    Mlp(MlpArchitecture),
    Head(HeadArchitecture),
}

impl Architecture {
    pub fn mlp(input_dim: usize, hidden_dim: usize, n_classes: usize) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 || n_classes == 0 {
            return Err(Error::invalid("MLP dimensions must all be >= 1"));
        }
        Ok(Architecture::Mlp(MlpArchitecture {
            input_dim,
            hidden_dim,
            n_classes,
        }))
    }

    pub fn head(input_dim: usize, n_classes: usize) -> Result<Self> {
        if input_dim == 0 || n_classes == 0 {
            return Err(Error::invalid("head dimensions must all be >= 1"));
        }
        Ok(Architecture::Head(HeadArchitecture {
            input_dim,
            n_classes,
        }))
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Architecture::Mlp(a) => write!(
                f,
                "mlp(D={}, H={}, C={})",
                a.input_dim, a.hidden_dim, a.n_classes
            ),
            Architecture::Head(a) => write!(f, "head(D={}, C={})", a.input_dim, a.n_classes),
        }
    }
}

impl Model for Architecture {
    fn input_dim(&self) -> usize {
        match self {
            Architecture::Mlp(a) => a.input_dim,
            Architecture::Head(a) => a.input_dim,
        }
    }

    fn n_classes(&self) -> usize {
        match self {
            Architecture::Mlp(a) => a.n_classes,
            Architecture::Head(a) => a.n_classes,
        }
    }

    fn n_params(&self) -> usize {
        match *self {
            Architecture::Mlp(MlpArchitecture {
                input_dim: d,
                hidden_dim: h,
                n_classes: c,
            }) => h * d + h + c * h + c,
            Architecture::Head(HeadArchitecture {
                input_dim: d,
                n_classes: c,
            }) => c * d + c,
        }
    }

    fn layout(&self) -> Layout {
        let specs = match *self {
            Architecture::Mlp(a) => vec![
                TensorSpec::new("W1", &[a.hidden_dim, a.input_dim]),
                TensorSpec::new("b1", &[a.hidden_dim]),
                TensorSpec::new("W2", &[a.n_classes, a.hidden_dim]),
                TensorSpec::new("b2", &[a.n_classes]),
            ],
            Architecture::Head(a) => vec![
                TensorSpec::new("W", &[a.n_classes, a.input_dim]),
                TensorSpec::new("b", &[a.n_classes]),
            ],
        };
        Layout::new(specs).expect("static layout")
    }

    fn logits_into(&self, theta: &[f64], x: &[f64], out: &mut [f64]) {
        match *self {
            Architecture::Head(a) => {
                let (w, b) = theta.split_at(a.n_classes * a.input_dim);
                for (c, z) in out.iter_mut().enumerate() {
                    *z = dot(&w[c * a.input_dim..(c + 1) * a.input_dim], x) + b[c];
                }
            }
            Architecture::Mlp(a) => {
                let mut hidden = vec![0.0; a.hidden_dim];
                mlp_hidden(&a, theta, x, &mut hidden);
                mlp_output(&a, theta, &hidden, out);
            }
        }
    }

    fn loglik_grad_into(&self, theta: &[f64], x: &[f64], y: usize, grad: &mut [f64]) -> f64 {
        match *self {
            Architecture::Head(a) => {
                let (d, c_n) = (a.input_dim, a.n_classes);
                let mut z = vec![0.0; c_n];
                self.logits_into(theta, x, &mut z);
                let lse = log_sum_exp(&z);
                let ll = z[y] - lse;
                let (gw, gb) = grad.split_at_mut(c_n * d);
                for c in 0..c_n {
                    let delta = f64::from(u8::from(c == y)) - (z[c] - lse).exp();
                    axpy(delta, x, &mut gw[c * d..(c + 1) * d]);
                    gb[c] += delta;
                }
                ll
            }
            Architecture::Mlp(a) => {
                let (d, h_n, c_n) = (a.input_dim, a.hidden_dim, a.n_classes);
                let mut hidden = vec![0.0; h_n];
                let mut z = vec![0.0; c_n];
                mlp_hidden(&a, theta, x, &mut hidden);
                mlp_output(&a, theta, &hidden, &mut z);
                let lse = log_sum_exp(&z);
                let ll = z[y] - lse;

                let w2_off = h_n * d + h_n;
                let w2 = &theta[w2_off..w2_off + c_n * h_n];
                let mut d_hidden = vec![0.0; h_n];
                {
                    let (_, rest) = grad.split_at_mut(w2_off);
                    let (gw2, gb2) = rest.split_at_mut(c_n * h_n);
                    for c in 0..c_n {
                        let delta = f64::from(u8::from(c == y)) - (z[c] - lse).exp();
                        axpy(delta, &hidden, &mut gw2[c * h_n..(c + 1) * h_n]);
                        gb2[c] += delta;
                        axpy(delta, &w2[c * h_n..(c + 1) * h_n], &mut d_hidden);
                    }
                }
                let (gw1, rest) = grad.split_at_mut(h_n * d);
                let gb1 = &mut rest[..h_n];
                for j in 0..h_n {
                    let da = d_hidden[j] * (1.0 - hidden[j] * hidden[j]);
                    axpy(da, x, &mut gw1[j * d..(j + 1) * d]);
                    gb1[j] += da;
                }
                ll
            }
        }
    }
}

fn mlp_hidden(a: &MlpArchitecture, theta: &[f64], x: &[f64], hidden: &mut [f64]) {
    let d = a.input_dim;
    let w1 = &theta[..a.hidden_dim * d];
    let b1 = &theta[a.hidden_dim * d..a.hidden_dim * d + a.hidden_dim];
    for (j, h) in hidden.iter_mut().enumerate() {
        *h = (dot(&w1[j * d..(j + 1) * d], x) + b1[j]).tanh();
    }
}

fn mlp_output(a: &MlpArchitecture, theta: &[f64], hidden: &[f64], out: &mut [f64]) {
    let h_n = a.hidden_dim;
    let off = h_n * a.input_dim + h_n;
    let w2 = &theta[off..off + a.n_classes * h_n];
    let b2 = &theta[off + a.n_classes * h_n..];
    for (c, z) in out.iter_mut().enumerate() {
        *z = dot(&w2[c * h_n..(c + 1) * h_n], hidden) + b2[c];
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Numerically stable softmax (shifted by the maximum logit).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    out
}

pub fn softmax_in_place(z: &mut [f64]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in z.iter_mut() {
        *v /= s;
    }
}

fn check_theta<M: Model + ?Sized>(model: &M, theta: &[f64]) -> Result<()> {
    let p = model.n_params();
    if theta.len() != p {
        return Err(Error::Dimension {
            context: "parameter vector",
            expected: p,
            got: theta.len(),
        });
    }
    Ok(())
}

fn check_input<M: Model + ?Sized>(model: &M, x: &[f64]) -> Result<()> {
    if x.len() != model.input_dim() {
        return Err(Error::Dimension {
            context: "input features",
            expected: model.input_dim(),
            got: x.len(),
        });
    }
    Ok(())
}

fn check_dataset<M: Model + ?Sized>(model: &M, ds: &Dataset) -> Result<()> {
    if ds.is_empty() {
        return Err(Error::invalid("dataset is empty"));
    }
    if ds.n_features() != model.input_dim() {
        return Err(Error::Dimension {
            context: "dataset features",
            expected: model.input_dim(),
            got: ds.n_features(),
        });
    }
    if ds.n_classes() != model.n_classes() {
        return Err(Error::Dimension {
            context: "dataset classes",
            expected: model.n_classes(),
            got: ds.n_classes(),
        });
    }
    Ok(())
}

pub fn forward<M: Model + ?Sized>(model: &M, theta: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    check_theta(model, theta)?;
    check_input(model, x)?;
    let mut z = vec![0.0; model.n_classes()];
    model.logits_into(theta, x, &mut z);
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "logit",
            index: 0,
        });
    }
    Ok(z)
}

/// Gradient of `log p(y | x, theta)` alone (no prior term).
pub fn per_example_grad_loglik<M: Model + ?Sized>(
    model: &M,
    theta: &[f64],
    x: &[f64],
    y: usize,
) -> Result<Vec<f64>> {
    check_theta(model, theta)?;
    check_input(model, x)?;
    if y >= model.n_classes() {
        return Err(Error::invalid(format!("label {y} out of range")));
    }
    let mut g = vec![0.0; theta.len()];
    model.loglik_grad_into(theta, x, y, &mut g);
    Ok(g)
}

/// Log-likelihood summed over rows, with a compensated reduction in fixed
/// block order.
pub fn log_likelihood<M: Model + ?Sized>(
    model: &M,
    theta: &[f64],
    ds: &Dataset,
    exec: Execution,
) -> Result<f64> {
    check_theta(model, theta)?;
    check_dataset(model, ds)?;
    let blocks = exec.map_blocks(ds.len(), |rows| {
        let mut acc = KahanSum::default();
        for i in rows {
            let ll = model.loglik(theta, ds.row(i), ds.label(i));
            if !ll.is_finite() {
                return Err(i);
            }
            acc.add(ll);
        }
        Ok(acc.value())
    });
    let mut total = KahanSum::default();
    for b in blocks {
        total.add(b.map_err(|i| Error::NonFinite {
            what: "log-likelihood",
            index: i,
        })?);
    }
    Ok(total.value())
}

/// `sum_i log softmax(f(x_i))[y_i] - |theta|^2 / (2 sigma^2)`. The Gaussian
/// normalizing constant is omitted.
pub fn log_posterior<M: Model + ?Sized>(
    model: &M,
    theta: &[f64],
    ds: &Dataset,
    prior: &Prior,
) -> Result<f64> {
    Ok(log_likelihood(model, theta, ds, Execution::default())? + prior.log_density(theta))
}

/// Log-likelihood and its gradient over `rows`, each scaled by `scale`.
pub(crate) fn loglik_and_grad_rows<M: Model + ?Sized>(
    model: &M,
    theta: &[f64],
    ds: &Dataset,
    rows: &[usize],
    scale: f64,
    exec: Execution,
    grad: &mut [f64],
) -> Result<f64> {
    let p = theta.len();
    let blocks = exec.map_blocks(rows.len(), |range| {
        let mut g = vec![0.0; p];
        let mut acc = KahanSum::default();
        for &i in &rows[range] {
            let ll = model.loglik_grad_into(theta, ds.row(i), ds.label(i), &mut g);
            if !ll.is_finite() {
                return Err(i);
            }
            acc.add(ll);
        }
        Ok((acc.value(), g))
    });
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut comp = vec![0.0; p];
    let mut total = KahanSum::default();
    for b in blocks {
        let (ll, g) = b.map_err(|i| Error::NonFinite {
            what: "log-likelihood",
            index: i,
        })?;
        total.add(ll);
        kahan_add_into(grad, &mut comp, &g);
    }
    for (g, c) in grad.iter_mut().zip(&comp) {
        *g = (*g + c) * scale;
    }
    if let Some(j) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            what: "gradient",
            index: j,
        });
    }
    Ok(total.value() * scale)
}

/// Log-posterior and its exact gradient in one pass.
pub fn log_posterior_and_grad<M: Model + ?Sized>(
    model: &M,
    theta: &[f64],
    ds: &Dataset,
    prior: &Prior,
    exec: Execution,
) -> Result<(f64, Vec<f64>)> {
    check_theta(model, theta)?;
    check_dataset(model, ds)?;
    let rows: Vec<usize> = (0..ds.len()).collect();
    let mut grad = vec![0.0; theta.len()];
    let ll = loglik_and_grad_rows(model, theta, ds, &rows, 1.0, exec, &mut grad)?;
    prior.add_grad(theta, &mut grad);
    Ok((ll + prior.log_density(theta), grad))
}

pub fn grad_log_posterior<M: Model + ?Sized>(
    model: &M,
    theta: &[f64],
    ds: &Dataset,
    prior: &Prior,
) -> Result<Vec<f64>> {
    Ok(log_posterior_and_grad(model, theta, ds, prior, Execution::default())?.1)
}

/// Posterior density of a model given data, usable as a sampling target or
/// optimization objective.
#[derive(Debug, Clone)]
pub struct ModelPosterior<'a, M: Model + ?Sized> {
    pub model: &'a M,
    pub data: &'a Dataset,
    pub prior: Prior,
    pub exec: Execution,
}

impl<'a, M: Model + ?Sized> ModelPosterior<'a, M> {
    pub fn new(model: &'a M, data: &'a Dataset, prior: Prior) -> Result<Self> {
        check_dataset(model, data)?;
        Ok(ModelPosterior {
            model,
            data,
            prior,
            exec: Execution::default(),
        })
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }
}
