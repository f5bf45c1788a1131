//! Seeded random instances used by the property suites.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::objectives::{QuadraticFamily, QuadraticLoss, SoftplusFamily};
use crate::simplex::{HybridPoint, SimplexPoint};

pub fn random_x<R: Rng + ?Sized>(rng: &mut R, m: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(m, |_, _| rng.random_range(-scale..scale))
}

/// Softargmax of uniform logits in `[-logit_scale, logit_scale]`.
pub fn random_simplex<R: Rng + ?Sized>(rng: &mut R, s: usize, logit_scale: f64) -> SimplexPoint {
    let xi = DVector::from_fn(s, |_, _| rng.random_range(-logit_scale..=logit_scale));
    SimplexPoint::from_log_weights(xi).expect("finite logits")
}

pub fn random_hybrid<R: Rng + ?Sized>(rng: &mut R, m: usize, s: usize) -> HybridPoint {
    HybridPoint::new(random_x(rng, m, 2.0), random_simplex(rng, s, 1.5))
}

fn random_psd<R: Rng + ?Sized>(rng: &mut R, m: usize, ridge: f64) -> DMatrix<f64> {
    let b = DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0));
    let mut a = &b * b.transpose() / m as f64;
    for i in 0..m {
        a[(i, i)] += ridge;
    }
    a
}

/// Random convex quadratics; `strict` adds a ridge so every loss is strictly convex.
pub fn random_quadratic<R: Rng + ?Sized>(
    rng: &mut R,
    m: usize,
    s: usize,
    strict: bool,
) -> QuadraticFamily {
    let ridge = if strict { 0.5 } else { 0.0 };
    let losses = (0..s)
        .map(|_| QuadraticLoss {
            a: random_psd(rng, m, ridge),
            b: random_x(rng, m, 2.0),
            c: rng.random_range(-1.0..1.0),
        })
        .collect();
    QuadraticFamily::new(losses).expect("PSD by construction")
}

/// Random softplus-plus-ridge family with every ridge in `[0.2, 1)`.
pub fn random_softplus<R: Rng + ?Sized>(rng: &mut R, m: usize, s: usize) -> SoftplusFamily {
    SoftplusFamily::new(
        (0..s).map(|_| random_x(rng, m, 2.0)).collect(),
        random_x(rng, s, 1.0),
        DVector::from_fn(s, |_, _| rng.random_range(0.2..1.0)),
        (0..s).map(|_| random_x(rng, m, 1.5)).collect(),
    )
    .expect("consistent dimensions")
}

/// Strictly convex quadratics built around a chosen fixed point `(x*, q*)`:
/// all losses equal a common value at `x*` and the `q*`-barygradient vanishes.
/// With `S - 1 <= m` the planted gradients are generically affinely
/// independent, so `(x*, q*)` is the unique fixed point.
pub fn planted_quadratic<R: Rng + ?Sized>(
    rng: &mut R,
    m: usize,
    s: usize,
) -> (QuadraticFamily, HybridPoint) {
    let x_star = random_x(rng, m, 1.5);
    let q_star = random_simplex(rng, s, 1.0);
    let p = q_star.probabilities();
    let mut grads: Vec<DVector<f64>> = (0..s).map(|_| random_x(rng, m, 2.0)).collect();
    let mean = grads
        .iter()
        .enumerate()
        .fold(DVector::zeros(m), |acc, (t, g)| acc + g * p[t]);
    for g in grads.iter_mut() {
        *g -= &mean;
    }
    let level = rng.random_range(-1.0..1.0);
    let losses = grads
        .into_iter()
        .map(|g| {
            let a = random_psd(rng, m, 0.3);
            let ax = &a * &x_star;
            QuadraticLoss {
                b: &g - &ax,
                c: 0.5 * x_star.dot(&ax) - g.dot(&x_star) + level,
                a,
            }
        })
        .collect();
    let fam = QuadraticFamily::new(losses).expect("PSD by construction");
    (fam, HybridPoint::new(x_star, q_star))
}
