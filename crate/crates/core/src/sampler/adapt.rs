/// Nesterov dual averaging of `log(step_size)` toward a target acceptance
/// statistic, with the usual constants `gamma = 0.05`, `t0 = 10`,
/// `kappa = 0.75`.
#[derive(Debug, Clone)]
pub struct DualAveraging {
    target: f64,
    mu: f64,
    log_step: f64,
    log_step_bar: f64,
    h_bar: f64,
    count: f64,
}

const GAMMA: f64 = 0.05;
const T0: f64 = 10.0;
const KAPPA: f64 = 0.75;

impl DualAveraging {
    pub fn new(initial_step: f64, target_accept: f64) -> Self {
        DualAveraging {
            target: target_accept,
            mu: (10.0 * initial_step).ln(),
            log_step: initial_step.ln(),
            log_step_bar: 0.0,
            h_bar: 0.0,
            count: 0.0,
        }
    }

    /// Restarts around `step` (used after a mass-matrix update).
    pub fn restart(&mut self, step: f64) {
        *self = DualAveraging::new(step, self.target);
    }

    pub fn update(&mut self, accept_stat: f64) {
        let accept_stat = if accept_stat.is_finite() { accept_stat } else { 0.0 };
        self.count += 1.0;
        let eta = 1.0 / (self.count + T0);
        self.h_bar = (1.0 - eta) * self.h_bar + eta * (self.target - accept_stat);
        self.log_step = self.mu - self.count.sqrt() / GAMMA * self.h_bar;
        let w = self.count.powf(-KAPPA);
        self.log_step_bar = w * self.log_step + (1.0 - w) * self.log_step_bar;
    }

    /// Step size to use for the next warmup transition.
    pub fn current(&self) -> f64 {
        self.log_step.exp()
    }

    /// Averaged step size to freeze after warmup.
    pub fn final_step(&self) -> f64 {
        if self.count == 0.0 {
            self.current()
        } else {
            self.log_step_bar.exp()
        }
    }
}

/// Welford running variance per coordinate.
#[derive(Debug, Clone)]
pub struct RunningVariance {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl RunningVariance {
    pub fn new(dim: usize) -> Self {
        RunningVariance {
            n: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn push(&mut self, x: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let d = v - *m;
            *m += d / n;
            *s += d * (v - *m);
        }
    }

    pub fn count(&self) -> usize {
        self.n
    }

    /// Sample variance shrunk toward `1e-3` as in common practice:
    /// `n/(n+5) * var + 1e-3 * 5/(n+5)`.
    pub fn regularized_variance(&self) -> Vec<f64> {
        let n = self.n as f64;
        self.m2
            .iter()
            .map(|s| {
                let var = if self.n > 1 { s / (n - 1.0) } else { 1.0 };
                (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
            })
            .collect()
    }
}

/// Warmup phases: an initial fast interval (step size only), slow windows of
/// doubling length that estimate the diagonal mass, and a terminal fast
/// interval.
#[derive(Debug, Clone)]
pub struct WarmupSchedule {
    window_ends: Vec<usize>,
    window_start: usize,
}

impl WarmupSchedule {
    pub fn new(n_warmup: usize, adapt_mass: bool) -> Self {
        if !adapt_mass || n_warmup < 20 {
            return WarmupSchedule {
                window_ends: Vec::new(),
                window_start: n_warmup,
            };
        }
        let (init, term, base) = if n_warmup < 150 {
            let init = (0.15 * n_warmup as f64) as usize;
            let term = (0.1 * n_warmup as f64) as usize;
            (init, term, n_warmup - init - term)
        } else {
            (75, 50, 25)
        };
        let slow_end = n_warmup - term;
        let mut ends = Vec::new();
        let mut start = init;
        let mut size = base;
        while start < slow_end {
            let mut end = start + size;
            // extend the last window if the next one would not fit
            if end + 2 * size > slow_end {
                end = slow_end;
            }
            ends.push(end);
            start = end;
            size *= 2;
        }
        WarmupSchedule {
            window_ends: ends,
            window_start: init,
        }
    }

    /// Whether warmup iteration `i` (0-based) contributes to the mass estimate.
    pub fn in_slow_window(&self, i: usize) -> bool {
        i >= self.window_start && self.window_ends.last().is_some_and(|&e| i < e)
    }

    /// Whether a slow window ends after iteration `i`.
    pub fn ends_window(&self, i: usize) -> bool {
        self.window_ends.contains(&(i + 1))
    }
}
