//! Row-block execution with a rayon backend and a sequential fallback.
//!
//! Work over dataset rows is split into fixed-size blocks. Each block is
//! reduced independently and the block results are combined in block order,
//! so the parallel and sequential paths produce bit-identical output.

/// Rows per reduction block. Part of the numeric contract: changing it changes
/// the floating-point reduction order.
pub const BLOCK_ROWS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Execution {
    Sequential,
    /// Uses the rayon thread pool when the `parallel` feature is enabled,
    /// otherwise identical to `Sequential`.
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

impl Execution {
    /// Maps `f` over `0..n` and returns the results in index order.
    pub fn map<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel if n > 1 => {
                use rayon::prelude::*;
                (0..n).into_par_iter().map(f).collect()
            }
            _ => (0..n).map(f).collect(),
        }
    }

    /// Maps `f` over consecutive row blocks of `0..n_rows`.
    pub fn map_blocks<T, F>(self, n_rows: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(std::ops::Range<usize>) -> T + Sync + Send,
    {
        let n_blocks = n_rows.div_ceil(BLOCK_ROWS);
        self.map(n_blocks, |b| {
            let start = b * BLOCK_ROWS;
            f(start..(start + BLOCK_ROWS).min(n_rows))
        })
    }
}

/// Neumaier-compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl std::iter::FromIterator<f64> for KahanSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = KahanSum::default();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}

/// Compensated element-wise accumulation of `src` into `dst` (with `comp` as
/// the running compensation buffer).
pub(crate) fn kahan_add_into(dst: &mut [f64], comp: &mut [f64], src: &[f64]) {
    for ((d, c), &x) in dst.iter_mut().zip(comp.iter_mut()).zip(src) {
        let t = *d + x;
        if d.abs() >= x.abs() {
            *c += (*d - t) + x;
        } else {
            *c += (x - t) + *d;
        }
        *d = t;
    }
}
