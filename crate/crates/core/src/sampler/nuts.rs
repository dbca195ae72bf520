//! Multinomial NUTS transition: trajectory doubling in a random direction,
//! uniform sampling inside subtrees, biased progressive sampling at the top
//! level, and the generalized no-U-turn criterion checked across the merged
//! trajectory and across adjacent subtrees.

use rand::Rng;

use super::leapfrog::{kinetic_energy, leapfrog_step, PhasePoint};
use super::{sample_momentum, Target, Transition, DIVERGENCE_THRESHOLD};

/// Momentum summary of a time-ordered trajectory segment.
#[derive(Debug, Clone)]
struct Span {
    rho: Vec<f64>,
    first_momentum: Vec<f64>,
    first_sharp: Vec<f64>,
    last_momentum: Vec<f64>,
    last_sharp: Vec<f64>,
}

impl Span {
    fn single(momentum: &[f64], inv_mass: &[f64]) -> Self {
        let sharp: Vec<f64> = momentum.iter().zip(inv_mass).map(|(r, m)| r * m).collect();
        Span {
            rho: momentum.to_vec(),
            first_momentum: momentum.to_vec(),
            first_sharp: sharp.clone(),
            last_momentum: momentum.to_vec(),
            last_sharp: sharp,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn no_u_turn(sharp_minus: &[f64], sharp_plus: &[f64], rho: &[f64]) -> bool {
    dot(sharp_plus, rho) > 0.0 && dot(sharp_minus, rho) > 0.0
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// Joins `early` and `late` (in time order). Returns the merged span and
/// whether the merged trajectory still satisfies the no-U-turn criterion.
fn merge(early: Span, late: Span) -> (Span, bool) {
    let rho = add(&early.rho, &late.rho);
    let mut ok = no_u_turn(&early.first_sharp, &late.last_sharp, &rho);
    ok &= no_u_turn(
        &early.first_sharp,
        &late.first_sharp,
        &add(&early.rho, &late.first_momentum),
    );
    ok &= no_u_turn(
        &early.last_sharp,
        &late.last_sharp,
        &add(&late.rho, &early.last_momentum),
    );
    (
        Span {
            rho,
            first_momentum: early.first_momentum,
            first_sharp: early.first_sharp,
            last_momentum: late.last_momentum,
            last_sharp: late.last_sharp,
        },
        ok,
    )
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

struct Subtree {
    span: Span,
    log_weight: f64,
    sample: PhasePoint,
}

enum Built {
    Valid(Subtree),
    Turning,
    Divergent,
}

struct Builder<'a, T: ?Sized, R> {
    target: &'a T,
    inv_mass: &'a [f64],
    step: f64,
    h0: f64,
    rng: &'a mut R,
    sum_accept: f64,
    n_steps: usize,
}

impl<T: Target + ?Sized, R: Rng> Builder<'_, T, R> {
    /// Extends `edge` by `2^depth` steps in direction `dir` (+1 or -1).
    fn build(&mut self, edge: &mut PhasePoint, depth: usize, dir: f64) -> Built {
        if depth == 0 {
            self.n_steps += 1;
            if !leapfrog_step(self.target, edge, dir * self.step, self.inv_mass) {
                return Built::Divergent;
            }
            let h = -edge.log_density + kinetic_energy(&edge.momentum, self.inv_mass);
            let dh = h - self.h0;
            if !dh.is_finite() || dh > DIVERGENCE_THRESHOLD {
                return Built::Divergent;
            }
            self.sum_accept += (-dh).exp().min(1.0);
            return Built::Valid(Subtree {
                span: Span::single(&edge.momentum, self.inv_mass),
                log_weight: -dh,
                sample: edge.clone(),
            });
        }
        let first = match self.build(edge, depth - 1, dir) {
            Built::Valid(t) => t,
            other => return other,
        };
        let second = match self.build(edge, depth - 1, dir) {
            Built::Valid(t) => t,
            other => return other,
        };
        let log_weight = log_add_exp(first.log_weight, second.log_weight);
        let take_second = self.rng.random::<f64>().ln() < second.log_weight - log_weight;
        let (early, late) = if dir > 0.0 {
            (first.span, second.span)
        } else {
            (second.span, first.span)
        };
        let (span, ok) = merge(early, late);
        if !ok {
            return Built::Turning;
        }
        Built::Valid(Subtree {
            span,
            log_weight,
            sample: if take_second { second.sample } else { first.sample },
        })
    }
}

pub(crate) fn transition<T: Target + ?Sized, R: Rng>(
    target: &T,
    current: &PhasePoint,
    step: f64,
    max_depth: usize,
    inv_mass: &[f64],
    rng: &mut R,
) -> Transition {
    let mut start = current.clone();
    sample_momentum(rng, inv_mass, &mut start.momentum);
    let h0 = start.hamiltonian(inv_mass);

    let mut span = Span::single(&start.momentum, inv_mass);
    let mut log_weight = 0.0;
    let mut sample = start.clone();
    let mut minus = start.clone();
    let mut plus = start;
    let mut diverged = false;

    let mut builder = Builder {
        target,
        inv_mass,
        step,
        h0,
        rng,
        sum_accept: 0.0,
        n_steps: 0,
    };

    for depth in 0..max_depth {
        let forward = builder.rng.random::<bool>();
        let (edge, dir) = if forward {
            (&mut plus, 1.0)
        } else {
            (&mut minus, -1.0)
        };
        let sub = match builder.build(edge, depth, dir) {
            Built::Valid(t) => t,
            Built::Turning => break,
            Built::Divergent => {
                diverged = true;
                break;
            }
        };
        // biased progressive sampling favours the new half
        if builder.rng.random::<f64>().ln() < sub.log_weight - log_weight {
            sample = sub.sample;
        }
        log_weight = log_add_exp(log_weight, sub.log_weight);
        let (early, late) = if forward {
            (span, sub.span)
        } else {
            (sub.span, span)
        };
        let (merged, ok) = merge(early, late);
        span = merged;
        if !ok {
            break;
        }
    }

    let accept_stat = if builder.n_steps > 0 {
        builder.sum_accept / builder.n_steps as f64
    } else {
        0.0
    };
    sample.momentum.iter_mut().for_each(|r| *r = 0.0);
    Transition {
        point: sample,
        accept_stat,
        diverged,
    }
}
