//! Simplex-side primitives.
//!
//! Probabilities live in log-space throughout: a [`SimplexPoint`] stores
//! `log q_s` normalized so that `sum_s exp(log q_s) = 1`. Linear-space
//! probabilities are only materialized at output boundaries.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Smallest linear-space probability accepted by [`SimplexPoint::from_probabilities`].
pub const MIN_PROBABILITY: f64 = 1e-300;

/// Max-shifted `log(sum_s exp(v_s))`.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + v.iter().map(|&a| (a - max).exp()).sum::<f64>().ln()
}

/// `log(sum_s exp(v_s - 1))`, the normalizer that pairs with the negentropy
/// mirror map `grad h(q) = 1 + log q`. For any simplex point this vanishes at
/// `v = grad h(q)`.
pub fn mirror_log_sum_exp(v: &[f64]) -> f64 {
    log_sum_exp(v) - 1.0
}

fn check_finite(v: &[f64], what: &str) -> Result<()> {
    if let Some(i) = v.iter().position(|a| !a.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "{what}: entry {i} is not finite ({})",
            v[i]
        )));
    }
    Ok(())
}

/// A strictly positive probability vector of length `S >= 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexPoint {
    log_weights: DVector<f64>,
}

impl SimplexPoint {
    /// Normalizes arbitrary finite log-weights onto the simplex.
    pub fn from_log_weights(log_weights: DVector<f64>) -> Result<Self> {
        if log_weights.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "simplex dimension must be at least 2, got {}",
                log_weights.len()
            )));
        }
        check_finite(log_weights.as_slice(), "log-weights")?;
        let lse = log_sum_exp(log_weights.as_slice());
        Ok(Self {
            log_weights: log_weights.map(|a| a - lse),
        })
    }

    /// Builds a point from linear-space probabilities that already sum to one.
    ///
    /// Entries below [`MIN_PROBABILITY`] are rejected rather than projected.
    pub fn from_probabilities(p: &[f64]) -> Result<Self> {
        check_finite(p, "probabilities")?;
        if let Some(i) = p.iter().position(|&a| a < MIN_PROBABILITY) {
            return Err(Error::InvalidDomain(format!(
                "probability {i} = {:e} is not strictly interior",
                p[i]
            )));
        }
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "probabilities sum to {total}, expected 1"
            )));
        }
        Self::from_log_weights(DVector::from_iterator(p.len(), p.iter().map(|a| a.ln())))
    }

    pub fn uniform(s: usize) -> Result<Self> {
        Self::from_log_weights(DVector::zeros(s))
    }

    pub fn len(&self) -> usize {
        self.log_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn log_weights(&self) -> &DVector<f64> {
        &self.log_weights
    }

    pub fn probabilities(&self) -> DVector<f64> {
        self.log_weights.map(f64::exp)
    }

    pub fn prob(&self, s: usize) -> f64 {
        self.log_weights[s].exp()
    }

    /// Largest weight, used as a vertex-drift indicator.
    pub fn max_weight(&self) -> f64 {
        self.log_weights.max().exp()
    }
}

/// Reduced logits `xi_bar in R^{S-1}`; the full logit is `xi = (xi_bar, 0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitVector(DVector<f64>);

impl LogitVector {
    pub fn new(xi_bar: DVector<f64>) -> Result<Self> {
        if xi_bar.is_empty() {
            return Err(Error::InvalidArgument(
                "reduced logits need at least one entry".into(),
            ));
        }
        check_finite(xi_bar.as_slice(), "reduced logits")?;
        Ok(Self(xi_bar))
    }

    pub fn zeros(s: usize) -> Self {
        Self(DVector::zeros(s - 1))
    }

    /// Chart `xi_bar_s = log(q_s / q_S)`.
    pub fn from_simplex(q: &SimplexPoint) -> Self {
        let lw = q.log_weights();
        let last = lw[lw.len() - 1];
        Self(DVector::from_iterator(
            lw.len() - 1,
            lw.iter().take(lw.len() - 1).map(|a| a - last),
        ))
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.0
    }

    /// Number of simplex coordinates `S`.
    pub fn simplex_dim(&self) -> usize {
        self.0.len() + 1
    }

    pub fn full_logits(&self) -> DVector<f64> {
        let mut xi = DVector::zeros(self.0.len() + 1);
        xi.rows_mut(0, self.0.len()).copy_from(&self.0);
        xi
    }

    pub fn to_simplex(&self) -> SimplexPoint {
        SimplexPoint::from_log_weights(self.full_logits())
            .expect("finite logits always map into the interior")
    }

    /// `sigma_bar`, the first `S-1` probabilities of `sigma(xi)`.
    pub fn sigma_bar(&self) -> DVector<f64> {
        let p = self.to_simplex().probabilities();
        p.rows(0, self.0.len()).into_owned()
    }
}

/// A point `(x, q)` of `R^m x int(Delta_S)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridPoint {
    pub x: DVector<f64>,
    pub q: SimplexPoint,
}

impl HybridPoint {
    pub fn new(x: DVector<f64>, q: SimplexPoint) -> Self {
        Self { x, q }
    }

    /// `grad f(x, q) = (x, grad h(q))` for `f = |x|^2 / 2 + h(q)`.
    pub fn mirror_gradient(&self) -> DVector<f64> {
        concat(&self.x, &grad_negentropy(&self.q))
    }

    /// Linear-space coordinates `(x, q)` stacked into one vector.
    pub fn stacked(&self) -> DVector<f64> {
        concat(&self.x, &self.q.probabilities())
    }
}

pub(crate) fn concat(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(a.len() + b.len(), a.iter().chain(b.iter()).copied())
}

/// `sigma(xi)_s = exp(xi_s) / sum_t exp(xi_t)`.
pub fn softargmax(xi: &DVector<f64>) -> Result<SimplexPoint> {
    SimplexPoint::from_log_weights(xi.clone())
}

/// Negative entropy `h(q) = sum_s q_s log q_s` and its gradient `1 + log q`.
pub fn negentropy(q: &SimplexPoint) -> (f64, DVector<f64>) {
    let value = q.log_weights().iter().map(|&lw| lw.exp() * lw).sum::<f64>();
    (value, grad_negentropy(q))
}

pub fn grad_negentropy(q: &SimplexPoint) -> DVector<f64> {
    q.log_weights().map(|lw| 1.0 + lw)
}

/// `(grad h)^{-1}(eta) = exp(eta - 1)`, defined when `eta` is the mirror image
/// of a simplex point, i.e. `mirror_log_sum_exp(eta) = 0`.
pub fn inverse_grad_negentropy(eta: &DVector<f64>) -> Result<SimplexPoint> {
    check_finite(eta.as_slice(), "mirror coordinates")?;
    let offset = mirror_log_sum_exp(eta.as_slice());
    if offset.abs() > 1e-10 {
        return Err(Error::InvalidDomain(format!(
            "mirror coordinates are off the simplex (normalizer {offset:e})"
        )));
    }
    SimplexPoint::from_log_weights(eta.map(|a| a - 1.0))
}

/// `KL(r | q) = sum_s r_s log(r_s / q_s)`.
///
/// Each term is evaluated as `r_s (d + e^{-d} - 1)` with `d = log(r_s/q_s)`,
/// which sums to the divergence on normalized inputs and is nonnegative
/// termwise.
pub fn kl(r: &SimplexPoint, q: &SimplexPoint) -> Result<f64> {
    if r.len() != q.len() {
        return Err(Error::dims("simplex points", r.len(), q.len()));
    }
    let total = r
        .log_weights()
        .iter()
        .zip(q.log_weights().iter())
        .map(|(&lr, &lq)| {
            let d = lr - lq;
            let rs = lr.exp();
            if d >= -1.0 {
                rs * (d + (-d).exp_m1())
            } else {
                rs * d + (lq.exp() - rs)
            }
        })
        .sum::<f64>();
    Ok(total.max(0.0))
}

/// `D_f(u, v) = |x_u - x_v|^2 / 2 + KL(q_u | q_v)`.
pub fn hybrid_bregman(u: &HybridPoint, v: &HybridPoint) -> Result<f64> {
    if u.x.len() != v.x.len() {
        return Err(Error::dims("hybrid point x", u.x.len(), v.x.len()));
    }
    Ok(0.5 * (&u.x - &v.x).norm_squared() + kl(&u.q, &v.q)?)
}

/// Fisher information of the categorical family in the reduced logit chart,
/// with its closed-form inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherInformation {
    pub matrix: DMatrix<f64>,
    pub inverse: DMatrix<f64>,
}

/// `I = Diag(sigma_bar) - sigma_bar sigma_bar^T`,
/// `I^{-1} = Diag(sigma_bar)^{-1} + 11^T / sigma_S`.
pub fn fisher_information(xi_bar: &LogitVector) -> FisherInformation {
    let q = xi_bar.to_simplex();
    let n = xi_bar.as_vector().len();
    let sb = q.probabilities().rows(0, n).into_owned();
    let last = q.prob(n);
    let matrix = DMatrix::from_diagonal(&sb) - &sb * sb.transpose();
    let mut inverse = DMatrix::from_element(n, n, 1.0 / last);
    for i in 0..n {
        inverse[(i, i)] += 1.0 / sb[i];
    }
    FisherInformation { matrix, inverse }
}

/// Dense `(S-1)^3` tensor indexed as `(k, i, j)` for the second kind and
/// `(i, j, k)` for the first kind.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    n: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    fn from_fn(n: usize, f: impl Fn(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(n * n * n);
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    data.push(f(a, b, c));
                }
            }
        }
        Self { n, data }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, a: usize, b: usize, c: usize) -> f64 {
        self.data[(a * self.n + b) * self.n + c]
    }
}

/// Levi-Civita connection of the Fisher-Rao metric in the reduced chart.
#[derive(Debug, Clone, PartialEq)]
pub struct Christoffel {
    symbols: Tensor3,
}

impl Christoffel {
    /// `Gamma^k_{ij}`.
    pub fn get(&self, k: usize, i: usize, j: usize) -> f64 {
        self.symbols.get(k, i, j)
    }

    pub fn dim(&self) -> usize {
        self.symbols.dim()
    }

    /// `[sum_k Gamma^k_{ij} g_k]_{ij}`, the correction that turns a Euclidean
    /// Hessian into a Riemannian one for a function with gradient `g`.
    pub fn contract(&self, g: &DVector<f64>) -> DMatrix<f64> {
        let n = self.dim();
        DMatrix::from_fn(n, n, |i, j| (0..n).map(|k| self.get(k, i, j) * g[k]).sum())
    }

    /// Lowers the upper index: `Gamma_{ijk} = sum_s I_{ks} Gamma^s_{ij}`.
    pub fn lower(&self, fisher: &DMatrix<f64>) -> Tensor3 {
        let n = self.dim();
        Tensor3::from_fn(n, |i, j, k| {
            (0..n).map(|s| fisher[(k, s)] * self.get(s, i, j)).sum()
        })
    }
}

/// Second-kind symbols `Gamma^k_{ij} = (d_ij d_ik - d_ik sb_j - d_jk sb_i) / 2`.
///
/// These are `I^{-1}` applied to the first-kind symbols
/// `Gamma_{ijk} = (1/2) dI_{ij}/dxi_bar_k`.
pub fn christoffel(xi_bar: &LogitVector) -> Christoffel {
    let sb = xi_bar.sigma_bar();
    let n = sb.len();
    let delta = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
    let symbols = Tensor3::from_fn(n, |k, i, j| {
        0.5 * (delta(i, j) * delta(i, k) - delta(i, k) * sb[j] - delta(j, k) * sb[i])
    });
    Christoffel { symbols }
}

/// First-kind symbols `Gamma_{ijk} = (1/2) d^3 psi / dxi_i dxi_j dxi_k` for the
/// log-partition `psi(xi_bar) = log(1 + sum_s exp(xi_bar_s))`.
pub fn christoffel_first_kind(xi_bar: &LogitVector) -> Tensor3 {
    let sb = xi_bar.sigma_bar();
    let n = sb.len();
    let delta = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
    Tensor3::from_fn(n, |i, j, k| {
        0.5 * (delta(i, j) * delta(i, k) * sb[i]
            - delta(i, j) * sb[i] * sb[k]
            - delta(i, k) * sb[i] * sb[j]
            - delta(j, k) * sb[i] * sb[j]
            + 2.0 * sb[i] * sb[j] * sb[k])
    })
}

/// Categorical covariance `Diag(q) - q q^T`, also the Jacobian of softargmax.
pub fn covariance(q: &SimplexPoint) -> DMatrix<f64> {
    let p = q.probabilities();
    DMatrix::from_diagonal(&p) - &p * p.transpose()
}
