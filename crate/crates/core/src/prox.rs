//! The generalized proximal operator
//!
//! `prox(x, q) = argminimax_{z, r} H_{x,q}(z, r)` with
//! `H_{x,q}(z, r) = r^T l(z) + |z - x|^2 / (2 lambda) - KL(r | q) / lambda`.
//!
//! The maximization over `r` has the closed form `r_s(z) ∝ q_s exp(lambda l_s(z))`.
//! Substituting it leaves the `1/lambda`-strongly convex problem
//! `min_z (1/lambda) log(sum_s q_s e^{lambda l_s(z)}) + |z - x|^2 / (2 lambda)`,
//! which is solved by backtracked descent; `q'` is then read off at `x'`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, NonConvergence, Result};
use crate::objectives::{barygradient, check_q, check_x, ObjectiveFamily};
use crate::simplex::{
    grad_negentropy, hybrid_bregman, kl, log_sum_exp, mirror_log_sum_exp, HybridPoint, SimplexPoint,
};
use crate::solver::{minimize, Minimized, Problem};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProxConfig {
    pub lambda: f64,
    pub inner_tol: f64,
    pub inner_max_iter: usize,
}

impl Default for ProxConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            inner_tol: 1e-10,
            inner_max_iter: 10_000,
        }
    }
}

impl ProxConfig {
    pub fn with_lambda(lambda: f64) -> Self {
        Self {
            lambda,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if !(self.inner_tol > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "inner_tol must be positive, got {}",
                self.inner_tol
            )));
        }
        if self.inner_max_iter == 0 {
            return Err(Error::InvalidArgument("inner_max_iter must be >= 1".into()));
        }
        Ok(())
    }
}

/// Residuals of the two stationarity blocks at the returned saddle point:
/// `|x - x' - lambda J(x')^T q'|` and
/// `min_c |grad h(q') - lambda l(x') - grad h(q) - c 1|_inf`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StationarityResidual {
    pub x: f64,
    pub q: f64,
}

impl StationarityResidual {
    pub fn max(&self) -> f64 {
        self.x.max(self.q)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProxResult {
    pub x_prime: DVector<f64>,
    pub q_prime: SimplexPoint,
    pub inner_iters: usize,
    pub residual: StationarityResidual,
}

impl ProxResult {
    pub fn point(&self) -> HybridPoint {
        HybridPoint::new(self.x_prime.clone(), self.q_prime.clone())
    }
}

fn finite_values(fam: &dyn ObjectiveFamily, z: &DVector<f64>) -> Result<DVector<f64>> {
    let l = fam.values(z);
    if l.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidDomain(format!(
            "non-finite loss value at x = {:?}",
            z.as_slice()
        )));
    }
    Ok(l)
}

/// `softargmax(log q + lambda l(z))`, the maximizer of `H_{x,q}(z, .)`.
pub fn reweight(q: &SimplexPoint, lambda: f64, losses: &DVector<f64>) -> Result<SimplexPoint> {
    SimplexPoint::from_log_weights(q.log_weights() + losses * lambda)
}

/// `H_{x,q}(z, r)`.
pub fn saddle_objective(
    fam: &dyn ObjectiveFamily,
    center: &HybridPoint,
    lambda: f64,
    z: &DVector<f64>,
    r: &SimplexPoint,
) -> Result<f64> {
    check_x(fam, z)?;
    check_q(fam, r)?;
    let l = fam.values(z);
    Ok(
        r.probabilities().dot(&l) + (z - &center.x).norm_squared() / (2.0 * lambda)
            - kl(r, &center.q)? / lambda,
    )
}

/// Value and gradient of `z -> max_r H_{x,q}(z, r)`.
fn envelope(
    fam: &dyn ObjectiveFamily,
    x: &DVector<f64>,
    q: &SimplexPoint,
    lambda: f64,
    z: &DVector<f64>,
) -> (f64, DVector<f64>) {
    let l = fam.values(z);
    if l.iter().any(|v| !v.is_finite()) {
        return (f64::INFINITY, DVector::zeros(z.len()));
    }
    let logits = q.log_weights() + &l * lambda;
    let lse = log_sum_exp(logits.as_slice());
    let r = logits.map(|a| (a - lse).exp());
    let value = lse / lambda + (z - x).norm_squared() / (2.0 * lambda);
    let grad = fam.jacobian(z).transpose() * r + (z - x) / lambda;
    (value, grad)
}

fn envelope_hessian(
    fam: &dyn ObjectiveFamily,
    q: &SimplexPoint,
    lambda: f64,
    z: &DVector<f64>,
    hessians: Vec<DMatrix<f64>>,
) -> DMatrix<f64> {
    let m = z.len();
    let l = fam.values(z);
    let r = reweight(q, lambda, &l)
        .map(|r| r.probabilities())
        .unwrap_or_else(|_| DVector::from_element(l.len(), 1.0 / l.len() as f64));
    let j = fam.jacobian(z);
    let mut h = DMatrix::identity(m, m) / lambda;
    for (s, hs) in hessians.iter().enumerate() {
        h += hs * r[s];
    }
    let cov = DMatrix::from_diagonal(&r) - &r * r.transpose();
    h += j.transpose() * cov * &j * lambda;
    h
}

fn residuals(
    fam: &dyn ObjectiveFamily,
    x: &DVector<f64>,
    q: &SimplexPoint,
    lambda: f64,
    x_prime: &DVector<f64>,
    q_prime: &SimplexPoint,
) -> StationarityResidual {
    let jq = fam.jacobian(x_prime).transpose() * q_prime.probabilities();
    let rx = (x - x_prime - jq * lambda).norm();
    let l = fam.values(x_prime);
    let v = q_prime.log_weights() - l * lambda - q.log_weights();
    let rq = 0.5 * (v.max() - v.min());
    StationarityResidual { x: rx, q: rq }
}

pub fn prox(
    fam: &dyn ObjectiveFamily,
    x: &DVector<f64>,
    q: &SimplexPoint,
    cfg: &ProxConfig,
) -> Result<ProxResult> {
    cfg.validate()?;
    check_x(fam, x)?;
    check_q(fam, q)?;
    finite_values(fam, x)?;
    let lambda = cfg.lambda;

    let value_grad = |z: &DVector<f64>| envelope(fam, x, q, lambda, z);
    let hess_fn = |z: &DVector<f64>| {
        let hs = fam.hessians(z).expect("checked before use");
        envelope_hessian(fam, q, lambda, z, hs)
    };
    let hessian: Option<&dyn Fn(&DVector<f64>) -> DMatrix<f64>> = if fam.hessians(x).is_some() {
        Some(&hess_fn)
    } else {
        None
    };
    // Stop once both |grad| and lambda |grad| = |x - x' - lambda J^T q'| are within tolerance.
    let grad_tol = cfg.inner_tol / lambda.max(1.0);
    let problem = Problem {
        value_grad: &value_grad,
        hessian,
    };
    let Minimized {
        z,
        iterations,
        converged,
        ..
    } = minimize(&problem, x.clone(), lambda, grad_tol, cfg.inner_max_iter);

    let l = finite_values(fam, &z)?;
    let q_prime = reweight(q, lambda, &l)?;
    let residual = residuals(fam, x, q, lambda, &z, &q_prime);
    if !converged || residual.max() > cfg.inner_tol {
        return Err(Error::NonConvergence(Box::new(NonConvergence {
            iterations,
            x: z.iter().copied().collect(),
            q: q_prime.probabilities().iter().copied().collect(),
            residual_x: residual.x,
            residual_q: residual.q,
        })));
    }
    Ok(ProxResult {
        x_prime: z,
        q_prime,
        inner_iters: iterations,
        residual,
    })
}

/// `A(x, q) = (J_l(x)^T q, -l(x))`.
pub fn monotone_operator_a(
    fam: &dyn ObjectiveFamily,
    x: &DVector<f64>,
    q: &SimplexPoint,
) -> Result<(DVector<f64>, DVector<f64>)> {
    Ok((barygradient(fam, x, q)?, -fam.values(x)))
}

/// Both sides of the Bregman firm nonexpansiveness inequality
/// `<Tu - Tv, grad f(Tu) - grad f(Tv)> <= <Tu - Tv, grad f(u) - grad f(v)>`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BfneGap {
    pub lhs: f64,
    pub rhs: f64,
    pub gap: f64,
}

/// Evaluates the BFNE inequality for an arbitrary operator given its images.
pub fn firmness_gap(
    tu: &HybridPoint,
    tv: &HybridPoint,
    u: &HybridPoint,
    v: &HybridPoint,
) -> BfneGap {
    let delta = tu.stacked() - tv.stacked();
    let lhs = delta.dot(&(tu.mirror_gradient() - tv.mirror_gradient()));
    let rhs = delta.dot(&(u.mirror_gradient() - v.mirror_gradient()));
    BfneGap {
        lhs,
        rhs,
        gap: rhs - lhs,
    }
}

pub fn bfne_gap(
    fam: &dyn ObjectiveFamily,
    u: &HybridPoint,
    v: &HybridPoint,
    cfg: &ProxConfig,
) -> Result<BfneGap> {
    let tu = prox(fam, &u.x, &u.q, cfg)?.point();
    let tv = prox(fam, &v.x, &v.q, cfg)?.point();
    Ok(firmness_gap(&tu, &tv, u, v))
}

/// Sup-norm violation of the f-resolvent identity
/// `grad f(x', q') + lambda A(x', q') - (0; LSE(grad h(q') - lambda l(x')) 1)
///  = grad f(x, q) - (0; LSE(grad h(q)) 1)`.
pub fn resolvent_residual(
    fam: &dyn ObjectiveFamily,
    x: &DVector<f64>,
    q: &SimplexPoint,
    result: &ProxResult,
    cfg: &ProxConfig,
) -> Result<f64> {
    let lambda = cfg.lambda;
    let (ax, aq) = monotone_operator_a(fam, &result.x_prime, &result.q_prime)?;
    let left_x = &result.x_prime + ax * lambda;
    let mirror = grad_negentropy(&result.q_prime) + aq * lambda;
    let left_q = mirror.add_scalar(-mirror_log_sum_exp(mirror.as_slice()));

    let hq = grad_negentropy(q);
    let right_q = hq.add_scalar(-mirror_log_sum_exp(hq.as_slice()));
    Ok((left_x - x).amax().max((left_q - right_q).amax()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointResidual {
    pub barygrad_norm: f64,
    pub loss_spread: f64,
    pub prox_displacement: f64,
}

pub fn fixed_point_residual(
    fam: &dyn ObjectiveFamily,
    x: &DVector<f64>,
    q: &SimplexPoint,
    cfg: &ProxConfig,
) -> Result<FixedPointResidual> {
    let barygrad_norm = barygradient(fam, x, q)?.norm();
    let l = finite_values(fam, x)?;
    let loss_spread = l.max() - l.min();
    let image = prox(fam, x, q, cfg)?.point();
    let prox_displacement = hybrid_bregman(&image, &HybridPoint::new(x.clone(), q.clone()))?;
    Ok(FixedPointResidual {
        barygrad_norm,
        loss_spread,
        prox_displacement,
    })
}

/// The two orders of the saddle problem evaluated at a prox output.
///
/// `min_max = max_r H(x', r)` uses the closed-form inner maximum;
/// `max_min = min_z H(z, q')` is re-solved by descent with `r = q'` fixed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaddleValues {
    pub min_max: f64,
    pub max_min: f64,
    pub at_saddle: f64,
}

pub fn saddle_values(
    fam: &dyn ObjectiveFamily,
    x: &DVector<f64>,
    q: &SimplexPoint,
    result: &ProxResult,
    cfg: &ProxConfig,
) -> Result<SaddleValues> {
    let lambda = cfg.lambda;
    let center = HybridPoint::new(x.clone(), q.clone());
    let min_max = envelope(fam, x, q, lambda, &result.x_prime).0;

    let r = result.q_prime.clone();
    let rp = r.probabilities();
    let kl_term = kl(&r, q)? / lambda;
    let value_grad = |z: &DVector<f64>| {
        let l = fam.values(z);
        let v = rp.dot(&l) + (z - x).norm_squared() / (2.0 * lambda) - kl_term;
        let g = fam.jacobian(z).transpose() * &rp + (z - x) / lambda;
        (v, g)
    };
    let hess_fn = |z: &DVector<f64>| {
        let hs = fam.hessians(z).expect("checked before use");
        let m = z.len();
        hs.iter()
            .enumerate()
            .fold(DMatrix::identity(m, m) / lambda, |acc, (s, h)| {
                acc + h * rp[s]
            })
    };
    let hessian: Option<&dyn Fn(&DVector<f64>) -> DMatrix<f64>> = if fam.hessians(x).is_some() {
        Some(&hess_fn)
    } else {
        None
    };
    let inner = minimize(
        &Problem {
            value_grad: &value_grad,
            hessian,
        },
        x.clone(),
        lambda,
        cfg.inner_tol / lambda.max(1.0),
        cfg.inner_max_iter,
    );
    if !inner.converged {
        return Err(Error::NonConvergence(Box::new(NonConvergence {
            iterations: inner.iterations,
            x: inner.z.iter().copied().collect(),
            q: rp.iter().copied().collect(),
            residual_x: inner.grad_norm,
            residual_q: 0.0,
        })));
    }
    let at_saddle = saddle_objective(fam, &center, lambda, &result.x_prime, &result.q_prime)?;
    Ok(SaddleValues {
        min_max,
        max_min: inner.value,
        at_saddle,
    })
}
