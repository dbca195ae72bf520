use super::Target;

/// Position, momentum and cached log-density gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasePoint {
    pub position: Vec<f64>,
    pub momentum: Vec<f64>,
    pub grad: Vec<f64>,
    pub log_density: f64,
}

impl PhasePoint {
    /// Evaluates the target at `position`; momentum starts at zero.
    pub fn at<T: Target + ?Sized>(target: &T, position: Vec<f64>) -> crate::Result<Self> {
        let mut grad = vec![0.0; position.len()];
        let log_density = target.log_density_and_grad(&position, &mut grad)?;
        Ok(PhasePoint {
            momentum: vec![0.0; position.len()],
            position,
            grad,
            log_density,
        })
    }

    pub fn kinetic_energy(&self, inv_mass: &[f64]) -> f64 {
        kinetic_energy(&self.momentum, inv_mass)
    }

    /// `H = -log p(theta) + r^T M^{-1} r / 2`.
    pub fn hamiltonian(&self, inv_mass: &[f64]) -> f64 {
        -self.log_density + self.kinetic_energy(inv_mass)
    }

    pub fn is_finite(&self) -> bool {
        self.log_density.is_finite()
            && self.position.iter().all(|v| v.is_finite())
            && self.momentum.iter().all(|v| v.is_finite())
            && self.grad.iter().all(|v| v.is_finite())
    }
}

pub fn kinetic_energy(momentum: &[f64], inv_mass: &[f64]) -> f64 {
    0.5 * momentum
        .iter()
        .zip(inv_mass)
        .map(|(r, m)| r * r * m)
        .sum::<f64>()
}

/// One half-kick / drift / half-kick step in place. Returns `false` when the
/// state became non-finite or the target failed to evaluate; the point is then
/// unusable and the caller treats it as a divergence.
pub fn leapfrog_step<T: Target + ?Sized>(
    target: &T,
    point: &mut PhasePoint,
    step_size: f64,
    inv_mass: &[f64],
) -> bool {
    let half = 0.5 * step_size;
    for (r, g) in point.momentum.iter_mut().zip(&point.grad) {
        *r += half * g;
    }
    for ((q, r), m) in point.position.iter_mut().zip(&point.momentum).zip(inv_mass) {
        *q += step_size * m * r;
    }
    match target.log_density_and_grad(&point.position, &mut point.grad) {
        Ok(lp) => point.log_density = lp,
        Err(_) => {
            point.log_density = f64::NAN;
            return false;
        }
    }
    for (r, g) in point.momentum.iter_mut().zip(&point.grad) {
        *r += half * g;
    }
    point.is_finite()
}

/// `n_steps` leapfrog steps from `start`. `None` flags a divergence (a
/// non-finite state along the way).
pub fn leapfrog<T: Target + ?Sized>(
    target: &T,
    start: &PhasePoint,
    step_size: f64,
    n_steps: usize,
    inv_mass: &[f64],
) -> Option<PhasePoint> {
    let mut p = start.clone();
    for _ in 0..n_steps {
        if !leapfrog_step(target, &mut p, step_size, inv_mass) {
            return None;
        }
    }
    Some(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::FnTarget;

    fn gaussian(dim: usize) -> impl Target {
        FnTarget::new(
            dim,
            |x: &[f64]| -0.5 * x.iter().map(|v| v * v).sum::<f64>(),
            |x: &[f64], g: &mut [f64]| g.iter_mut().zip(x).for_each(|(g, v)| *g = -v),
        )
    }

    fn point(target: &impl Target, q: &[f64], r: &[f64]) -> PhasePoint {
        let mut p = PhasePoint::at(target, q.to_vec()).unwrap();
        p.momentum = r.to_vec();
        p
    }

    #[test]
    fn reversibility() {
        let t = FnTarget::new(
            3,
            |x: &[f64]| -(x[0].powi(4) + x[1] * x[1] * (1.0 + x[2] * x[2])),
            |x: &[f64], g: &mut [f64]| {
                g[0] = -4.0 * x[0].powi(3);
                g[1] = -2.0 * x[1] * (1.0 + x[2] * x[2]);
                g[2] = -2.0 * x[2] * x[1] * x[1];
            },
        );
        let inv_mass = [1.0, 0.5, 2.0];
        let start = point(&t, &[0.3, -0.7, 1.1], &[0.9, 0.2, -0.4]);
        let mid = leapfrog(&t, &start, 0.05, 25, &inv_mass).unwrap();
        let mut flipped = mid.clone();
        flipped.momentum.iter_mut().for_each(|r| *r = -*r);
        let back = leapfrog(&t, &flipped, 0.05, 25, &inv_mass).unwrap();
        for i in 0..3 {
            assert!((back.position[i] - start.position[i]).abs() < 1e-10);
            assert!((back.momentum[i] + start.momentum[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn energy_drift_on_standard_normal() {
        let t = gaussian(1);
        let start = point(&t, &[0.8], &[-1.2]);
        let end = leapfrog(&t, &start, 0.1, 10, &[1.0]).unwrap();
        let dh = end.hamiltonian(&[1.0]) - start.hamiltonian(&[1.0]);
        assert!(dh.abs() < 1e-3, "dH = {dh}");
    }

    #[test]
    fn small_step_moves_by_eps_times_momentum() {
        // theta' - theta = eps r + eps^2 grad / 2 exactly for one step; the
        // residual after removing eps r must shrink like eps^2.
        let t = gaussian(2);
        let start = point(&t, &[1.0, -0.5], &[0.3, 0.7]);
        let resid = |eps: f64| {
            let end = leapfrog(&t, &start, eps, 1, &[1.0, 1.0]).unwrap();
            (0..2)
                .map(|i| (end.position[i] - start.position[i] - eps * start.momentum[i]).abs())
                .fold(0.0, f64::max)
        };
        let (r1, r2) = (resid(1e-2), resid(5e-3));
        assert!(r1 < 1e-3);
        // quadratic convergence: halving eps quarters the residual
        assert!((r1 / r2 - 4.0).abs() < 1e-6, "ratio {}", r1 / r2);
    }

    #[test]
    fn linear_system_step_is_symplectic() {
        // For a quadratic target the step is a linear map; its 2x2 Jacobian
        // (estimated by finite differences, exact here) has unit determinant.
        let k = 2.5;
        let t = FnTarget::new(
            1,
            move |x: &[f64]| -0.5 * k * x[0] * x[0],
            move |x: &[f64], g: &mut [f64]| g[0] = -k * x[0],
        );
        let map = |q: f64, r: f64| {
            let end = leapfrog(&t, &point(&t, &[q], &[r]), 0.3, 1, &[1.0]).unwrap();
            (end.position[0], end.momentum[0])
        };
        let (q0, r0) = map(0.0, 0.0);
        let (qq, rq) = map(1.0, 0.0);
        let (qr, rr) = map(0.0, 1.0);
        let det = (qq - q0) * (rr - r0) - (qr - q0) * (rq - r0);
        assert!((det - 1.0).abs() < 1e-12);
    }

    #[test]
    fn non_finite_state_is_a_divergence() {
        let t = FnTarget::new(
            1,
            |x: &[f64]| x[0].powi(8),
            |x: &[f64], g: &mut [f64]| g[0] = 8.0 * x[0].powi(7),
        );
        let start = point(&t, &[3.0], &[1.0]);
        assert!(leapfrog(&t, &start, 1.0, 50, &[1.0]).is_none());
    }
}
