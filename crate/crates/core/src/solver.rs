//! Descent for smooth strongly convex problems.

use nalgebra::{DMatrix, DVector};

const ARMIJO_SLOPE: f64 = 1e-4;
const SHRINK: f64 = 0.5;
const MAX_BACKTRACKS: usize = 60;
const NOISE_BAND: f64 = 1e3;

pub(crate) struct Problem<'a> {
    pub value_grad: &'a dyn Fn(&DVector<f64>) -> (f64, DVector<f64>),
    pub hessian: Option<&'a dyn Fn(&DVector<f64>) -> DMatrix<f64>>,
}

#[derive(Debug, Clone)]
pub(crate) struct Minimized {
    pub z: DVector<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Armijo-backtracked descent from `z0`. Newton directions are used when a
/// Hessian is supplied and positive definite; otherwise the step starts at
/// `gd_step` along the negative gradient.
pub(crate) fn minimize(
    problem: &Problem<'_>,
    z0: DVector<f64>,
    gd_step: f64,
    grad_tol: f64,
    max_iter: usize,
) -> Minimized {
    let mut z = z0;
    let (mut f, mut g) = (problem.value_grad)(&z);
    let mut iterations = 0;
    loop {
        let grad_norm = g.norm();
        if grad_norm <= grad_tol || !f.is_finite() {
            return Minimized {
                z,
                value: f,
                grad_norm,
                iterations,
                converged: f.is_finite(),
            };
        }
        if iterations >= max_iter {
            return Minimized {
                z,
                value: f,
                grad_norm,
                iterations,
                converged: false,
            };
        }
        iterations += 1;

        let newton = problem
            .hessian
            .and_then(|h| h(&z).cholesky())
            .map(|c| -c.solve(&g));
        let (dir, mut t) = match newton {
            Some(d) if d.iter().all(|v| v.is_finite()) => (d, 1.0),
            _ => (-&g, gd_step),
        };
        let slope = g.dot(&dir);
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let cand = &z + &dir * t;
            let (fc, gc) = (problem.value_grad)(&cand);
            if fc.is_finite() {
                // Near the optimum the decrease drops below the resolution of f;
                // inside that band progress is measured by the gradient norm.
                let noisy = (fc - f).abs() <= NOISE_BAND * f64::EPSILON * (1.0 + f.abs());
                let ok = if noisy {
                    gc.norm() <= (1.0 - ARMIJO_SLOPE * t.min(1.0)) * grad_norm
                } else {
                    fc <= f + ARMIJO_SLOPE * t * slope
                };
                if ok {
                    accepted = Some((cand, fc, gc));
                    break;
                }
            }
            t *= SHRINK;
        }
        match accepted {
            Some((zc, fc, gc)) => {
                z = zc;
                f = fc;
                g = gc;
            }
            None => {
                return Minimized {
                    z,
                    value: f,
                    grad_norm,
                    iterations,
                    converged: false,
                };
            }
        }
    }
}
