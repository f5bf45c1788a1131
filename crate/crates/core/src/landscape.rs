//! The reduced function `F(x, xi_bar) = sigma(xi)^T l(x)` with `xi = (xi_bar, 0)`.
//!
//! Its critical points are exactly the fixed points of the prox, it has a
//! single critical value, and under the product metric
//! `M = diag(I_m, I(xi_bar))` every critical point with `B1 > 0` is a saddle.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, Inertia};
use crate::objectives::{check_x, ObjectiveFamily};
use crate::prox::{fixed_point_residual, ProxConfig};
use crate::simplex::{christoffel, concat, fisher_information, HybridPoint, LogitVector};

/// Gradient-norm threshold below which a point counts as critical.
pub const CRITICAL_TOL: f64 = 1e-8;
/// Relative eigenvalue threshold; the absolute cut is `EIG_REL_TOL (1 + rho)`.
pub const EIG_REL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct LandscapePoint {
    pub x: DVector<f64>,
    pub xi_bar: LogitVector,
}

impl LandscapePoint {
    pub fn new(x: DVector<f64>, xi_bar: LogitVector) -> Self {
        Self { x, xi_bar }
    }

    pub fn from_hybrid(p: &HybridPoint) -> Self {
        Self::new(p.x.clone(), LogitVector::from_simplex(&p.q))
    }

    pub fn to_hybrid(&self) -> HybridPoint {
        HybridPoint::new(self.x.clone(), self.xi_bar.to_simplex())
    }

    /// `(x, xi_bar)` as one vector of length `m + S - 1`.
    pub fn stacked(&self) -> DVector<f64> {
        concat(&self.x, self.xi_bar.as_vector())
    }

    pub fn from_stacked(m: usize, v: &DVector<f64>) -> Result<Self> {
        if v.len() <= m {
            return Err(Error::dims("stacked landscape point", m + 1, v.len()));
        }
        Ok(Self::new(
            v.rows(0, m).into_owned(),
            LogitVector::new(v.rows(m, v.len() - m).into_owned())?,
        ))
    }
}

fn check_point(fam: &dyn ObjectiveFamily, p: &LandscapePoint) -> Result<()> {
    check_x(fam, &p.x)?;
    if p.xi_bar.simplex_dim() != fam.num_losses() {
        return Err(Error::dims(
            "reduced logits",
            fam.num_losses() - 1,
            p.xi_bar.as_vector().len(),
        ));
    }
    Ok(())
}

/// `l_bar = (l_s - l_S)_{s < S}`.
pub fn reduced_losses(l: &DVector<f64>) -> DVector<f64> {
    let n = l.len() - 1;
    l.rows(0, n).add_scalar(-l[n])
}

/// Rows `grad l_s - grad l_S` for `s < S`.
fn reduced_jacobian(j: &DMatrix<f64>) -> DMatrix<f64> {
    let n = j.nrows() - 1;
    let last = j.row(n).into_owned();
    let mut out = j.rows(0, n).into_owned();
    for mut r in out.row_iter_mut() {
        r -= &last;
    }
    out
}

pub fn f_bar(fam: &dyn ObjectiveFamily, p: &LandscapePoint) -> Result<f64> {
    check_point(fam, p)?;
    Ok(p.xi_bar.to_simplex().probabilities().dot(&fam.values(&p.x)))
}

/// `(J_l(x)^T sigma(xi); I(xi_bar) l_bar(x))`.
pub fn grad_f_bar(fam: &dyn ObjectiveFamily, p: &LandscapePoint) -> Result<DVector<f64>> {
    check_point(fam, p)?;
    let sigma = p.xi_bar.to_simplex().probabilities();
    let gx = fam.jacobian(&p.x).transpose() * sigma;
    let gxi = fisher_information(&p.xi_bar).matrix * reduced_losses(&fam.values(&p.x));
    Ok(concat(&gx, &gxi))
}

/// `(T(p) x_2 v)_{ik} = d_ik (v_i - p^T v) - p_i v_k`.
pub fn tensor_mode2(p: &DVector<f64>, v: &DVector<f64>) -> DMatrix<f64> {
    let n = p.len();
    let pv = p.dot(v);
    DMatrix::from_fn(n, n, |i, k| {
        let d = if i == k { v[i] - pv } else { 0.0 };
        d - p[i] * v[k]
    })
}

/// `H = (Diag(sb) D - D sb sb^T - sb sb^T D) / 2` with `D = Diag(l_bar - 1 sb^T l_bar)`.
pub fn riemannian_logit_block(sigma_bar: &DVector<f64>, l_bar: &DVector<f64>) -> DMatrix<f64> {
    let d = DMatrix::from_diagonal(&l_bar.add_scalar(-sigma_bar.dot(l_bar)));
    let ss = sigma_bar * sigma_bar.transpose();
    (DMatrix::from_diagonal(sigma_bar) * &d - &d * &ss - &ss * &d) * 0.5
}

struct Blocks {
    b1: DMatrix<f64>,
    cross: DMatrix<f64>,
    logit: DMatrix<f64>,
    sigma_bar: DVector<f64>,
    l_bar: DVector<f64>,
    fisher: DMatrix<f64>,
}

fn blocks(fam: &dyn ObjectiveFamily, p: &LandscapePoint) -> Result<Blocks> {
    check_point(fam, p)?;
    let hs = fam.hessians(&p.x).ok_or(Error::MissingHessian)?;
    let m = fam.dim();
    let sigma = p.xi_bar.to_simplex().probabilities();
    let n = sigma.len() - 1;
    let b1 = hs
        .iter()
        .enumerate()
        .fold(DMatrix::zeros(m, m), |acc, (s, h)| acc + h * sigma[s]);
    let fisher = fisher_information(&p.xi_bar).matrix;
    let cross = &fisher * reduced_jacobian(&fam.jacobian(&p.x));
    let sigma_bar = sigma.rows(0, n).into_owned();
    let l_bar = reduced_losses(&fam.values(&p.x));
    let logit = tensor_mode2(&sigma_bar, &l_bar) * &fisher;
    Ok(Blocks {
        b1,
        cross,
        logit,
        sigma_bar,
        l_bar,
        fisher,
    })
}

fn assemble(b1: &DMatrix<f64>, cross: &DMatrix<f64>, logit: &DMatrix<f64>) -> DMatrix<f64> {
    let (m, n) = (b1.nrows(), logit.nrows());
    let mut h = DMatrix::zeros(m + n, m + n);
    h.view_mut((0, 0), (m, m)).copy_from(b1);
    h.view_mut((m, 0), (n, m)).copy_from(cross);
    h.view_mut((0, m), (m, n)).copy_from(&cross.transpose());
    h.view_mut((m, m), (n, n)).copy_from(logit);
    h
}

/// Euclidean Hessian
/// `[[sum_s sigma_s hess l_s, J_lbar^T I], [I J_lbar, (T(sb) x_2 l_bar) I]]`.
pub fn euclidean_hessian(fam: &dyn ObjectiveFamily, p: &LandscapePoint) -> Result<DMatrix<f64>> {
    let b = blocks(fam, p)?;
    Ok(assemble(&b.b1, &b.cross, &b.logit))
}

/// The product metric `M(x, xi_bar) = diag(I_m, I(xi_bar))`.
pub fn metric(p: &LandscapePoint) -> DMatrix<f64> {
    let m = p.x.len();
    let fisher = fisher_information(&p.xi_bar).matrix;
    let n = fisher.nrows();
    let mut out = DMatrix::zeros(m + n, m + n);
    out.view_mut((0, 0), (m, m)).fill_with_identity();
    out.view_mut((m, m), (n, n)).copy_from(&fisher);
    out
}

/// `[sum_k Gamma^k_ij dF/dxi_bar_k]_ij`, the Levi-Civita correction on the
/// logit block.
pub fn christoffel_correction(
    fam: &dyn ObjectiveFamily,
    p: &LandscapePoint,
) -> Result<DMatrix<f64>> {
    let g = grad_f_bar(fam, p)?;
    let m = fam.dim();
    let g_xi = g.rows(m, g.len() - m).into_owned();
    Ok(christoffel(&p.xi_bar).contract(&g_xi))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classification {
    Saddle,
    Degenerate,
    NotCritical,
}

impl Classification {
    pub fn label(&self) -> &'static str {
        match self {
            Classification::Saddle => "saddle",
            Classification::Degenerate => "degenerate",
            Classification::NotCritical => "not-critical",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HessianReport {
    pub euclidean: DMatrix<f64>,
    pub riemannian: DMatrix<f64>,
    pub metric: DMatrix<f64>,
    pub eigenvalues: DVector<f64>,
    pub inertia: Inertia,
    pub b1: DMatrix<f64>,
    pub schur_b2: DMatrix<f64>,
    pub b1_inertia: Inertia,
    pub b2_inertia: Inertia,
    pub grad_norm: f64,
    pub eig_threshold: f64,
    pub classification: Classification,
}

pub fn riemannian_hessian(fam: &dyn ObjectiveFamily, p: &LandscapePoint) -> Result<HessianReport> {
    let b = blocks(fam, p)?;
    let euclidean = assemble(&b.b1, &b.cross, &b.logit);
    let h = riemannian_logit_block(&b.sigma_bar, &b.l_bar);
    let mut riemannian = assemble(&b.b1, &b.cross, &h);
    linalg::symmetrize(&mut riemannian);

    let eigenvalues = linalg::symmetric_eigenvalues(&riemannian);
    let eig_threshold = EIG_REL_TOL * (1.0 + linalg::spectral_radius(&eigenvalues));
    let inertia = linalg::inertia(&eigenvalues, eig_threshold);

    let chol = b.b1.clone().cholesky().ok_or_else(|| {
        Error::DegenerateMetric(
            "B1 = sum_s sigma_s hess l_s is not positive definite; B2 unavailable".into(),
        )
    })?;
    let mut schur_b2 = &h - &b.cross * chol.solve(&b.cross.transpose());
    linalg::symmetrize(&mut schur_b2);
    let b1_inertia = linalg::inertia(&linalg::symmetric_eigenvalues(&b.b1), eig_threshold);
    let b2_eigs = linalg::symmetric_eigenvalues(&schur_b2);
    let b2_inertia = linalg::inertia(&b2_eigs, eig_threshold);

    let grad_norm = grad_f_bar(fam, p)?.norm();
    let classification = if grad_norm > CRITICAL_TOL {
        Classification::NotCritical
    } else if b2_inertia.negative > 0 {
        Classification::Saddle
    } else {
        Classification::Degenerate
    };
    let _ = &b.fisher;
    Ok(HessianReport {
        euclidean,
        riemannian,
        metric: metric(p),
        eigenvalues,
        inertia,
        b1: b.b1,
        schur_b2,
        b1_inertia,
        b2_inertia,
        grad_norm,
        eig_threshold,
        classification,
    })
}

/// Critical values found among candidate points.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticalValueReport {
    /// `(index, F value)` of the points passing the gradient filter.
    pub critical: Vec<(usize, f64)>,
    pub excluded: Vec<usize>,
    /// `max - min` of the critical values, `None` when no point passed.
    pub spread: Option<f64>,
    pub consistent: bool,
}

impl CriticalValueReport {
    pub fn is_empty(&self) -> bool {
        self.critical.is_empty()
    }
}

pub fn critical_value_scan(
    fam: &dyn ObjectiveFamily,
    points: &[LandscapePoint],
    tol: f64,
) -> Result<CriticalValueReport> {
    let mut critical = Vec::new();
    let mut excluded = Vec::new();
    for (i, p) in points.iter().enumerate() {
        if grad_f_bar(fam, p)?.norm() <= tol {
            critical.push((i, f_bar(fam, p)?));
        } else {
            excluded.push(i);
        }
    }
    let (spread, consistent) = if critical.is_empty() {
        (None, true)
    } else {
        let max = critical
            .iter()
            .map(|c| c.1)
            .fold(f64::NEG_INFINITY, f64::max);
        let min = critical.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
        let spread = max - min;
        (
            Some(spread),
            spread <= tol * (1.0 + max.abs().max(min.abs())),
        )
    };
    Ok(CriticalValueReport {
        critical,
        excluded,
        spread,
        consistent,
    })
}

/// Whether `|grad F| <= tol` and `D_f(prox(x, q), (x, q)) <= tol` agree at `p`.
pub fn fix_equals_critical_check(
    fam: &dyn ObjectiveFamily,
    p: &LandscapePoint,
    cfg: &ProxConfig,
    tol: f64,
) -> Result<bool> {
    let critical = grad_f_bar(fam, p)?.norm() <= tol;
    let h = p.to_hybrid();
    let fixed = fixed_point_residual(fam, &h.x, &h.q, cfg)?.prox_displacement <= tol;
    Ok(critical == fixed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::{ConstantFamily, QuadraticFamily};
    use approx::assert_relative_eq;
    use nalgebra::{dmatrix, dvector};

    fn origin() -> LandscapePoint {
        LandscapePoint::new(dvector![0.0], LogitVector::zeros(2))
    }

    #[test]
    fn f_bar_examples() {
        let fam = QuadraticFamily::symmetric_pair();
        for t in [-3.0, 0.0, 1.7] {
            let p = LandscapePoint::new(dvector![0.0], LogitVector::new(dvector![t]).unwrap());
            assert_relative_eq!(f_bar(&fam, &p).unwrap(), 0.5, epsilon = 1e-15);
        }
        let c = ConstantFamily::new(1, dvector![1.0, 2.0, 6.0]).unwrap();
        let p = LandscapePoint::new(dvector![0.0], LogitVector::zeros(3));
        assert_relative_eq!(f_bar(&c, &p).unwrap(), 3.0, epsilon = 1e-15);

        let x = dvector![0.8];
        let l1 = fam.values(&x)[0];
        let p = LandscapePoint::new(x, LogitVector::new(dvector![20.0]).unwrap());
        assert!((f_bar(&fam, &p).unwrap() - l1).abs() < 1e-8);
    }

    #[test]
    fn grad_examples() {
        let fam = QuadraticFamily::symmetric_pair();
        assert!(grad_f_bar(&fam, &origin()).unwrap().amax() < 1e-15);
        let p = LandscapePoint::new(dvector![2.0], LogitVector::zeros(2));
        let g = grad_f_bar(&fam, &p).unwrap();
        assert_relative_eq!(g, dvector![2.0, -1.0], epsilon = 1e-14);
    }

    #[test]
    fn hessians_at_symmetric_critical_point() {
        let fam = QuadraticFamily::symmetric_pair();
        let e = euclidean_hessian(&fam, &origin()).unwrap();
        assert_relative_eq!(e, dmatrix![1.0, -0.5; -0.5, 0.0], epsilon = 1e-15);

        let r = riemannian_hessian(&fam, &origin()).unwrap();
        assert_relative_eq!(
            r.riemannian,
            dmatrix![1.0, -0.5; -0.5, 0.0],
            epsilon = 1e-15
        );
        let mut eig: Vec<f64> = r.eigenvalues.iter().copied().collect();
        eig.sort_by(f64::total_cmp);
        assert_relative_eq!(eig[0], (1.0 - 2f64.sqrt()) / 2.0, epsilon = 1e-14);
        assert_relative_eq!(eig[1], (1.0 + 2f64.sqrt()) / 2.0, epsilon = 1e-14);
        assert_eq!(
            r.inertia,
            Inertia {
                positive: 1,
                negative: 1,
                zero: 0
            }
        );
        assert_relative_eq!(r.schur_b2[(0, 0)], -0.25, epsilon = 1e-15);
        assert_eq!(r.classification, Classification::Saddle);
    }

    #[test]
    fn non_critical_and_missing_hessian() {
        let fam = QuadraticFamily::symmetric_pair();
        let p = LandscapePoint::new(dvector![2.0], LogitVector::zeros(2));
        assert_eq!(
            riemannian_hessian(&fam, &p).unwrap().classification,
            Classification::NotCritical
        );

        let c = ConstantFamily::new(1, dvector![0.0, 0.0]).unwrap();
        assert!(matches!(
            riemannian_hessian(&c, &origin()),
            Err(Error::DegenerateMetric(_))
        ));

        struct NoHess;
        impl ObjectiveFamily for NoHess {
            fn dim(&self) -> usize {
                1
            }
            fn num_losses(&self) -> usize {
                2
            }
            fn values(&self, x: &DVector<f64>) -> DVector<f64> {
                dvector![x[0], -x[0]]
            }
            fn jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
                dmatrix![1.0; -1.0]
            }
        }
        assert!(matches!(
            euclidean_hessian(&NoHess, &origin()),
            Err(Error::MissingHessian)
        ));
        assert!(grad_f_bar(&NoHess, &origin()).is_ok());
    }

    #[test]
    fn contraction_is_twice_riemannian_block() {
        let xi = LogitVector::new(dvector![0.4, -1.1, 0.9]).unwrap();
        let sb = xi.sigma_bar();
        let lb = dvector![1.5, -0.3, 0.7];
        let fisher = fisher_information(&xi).matrix;
        let lhs = tensor_mode2(&sb, &lb) * fisher;
        let rhs = riemannian_logit_block(&sb, &lb) * 2.0;
        assert!((lhs - rhs).amax() < 1e-15);
    }

    #[test]
    fn critical_value_scan_examples() {
        let fam = QuadraticFamily::symmetric_pair();
        let single = critical_value_scan(&fam, &[origin()], 1e-6).unwrap();
        assert_eq!(single.spread, Some(0.0));
        let off = LandscapePoint::new(dvector![2.0], LogitVector::zeros(2));
        let mixed = critical_value_scan(&fam, &[origin(), off.clone()], 1e-6).unwrap();
        assert_eq!(mixed.excluded, vec![1]);
        assert_eq!(mixed.spread, Some(0.0));
        assert!(mixed.consistent);
        let none = critical_value_scan(&fam, &[off], 1e-6).unwrap();
        assert!(none.is_empty());
    }

    #[test]
    fn fix_critical_agreement_examples() {
        let fam = QuadraticFamily::symmetric_pair();
        let cfg = ProxConfig::default();
        assert!(fix_equals_critical_check(&fam, &origin(), &cfg, 1e-6).unwrap());
        let off = LandscapePoint::new(dvector![2.0], LogitVector::zeros(2));
        assert!(fix_equals_critical_check(&fam, &off, &cfg, 1e-6).unwrap());
    }

    #[test]
    fn chart_round_trip() {
        let h = HybridPoint::new(
            dvector![1.0, 2.0],
            crate::simplex::SimplexPoint::from_probabilities(&[0.2, 0.3, 0.5]).unwrap(),
        );
        let p = LandscapePoint::from_hybrid(&h);
        assert_relative_eq!(
            p.xi_bar.as_vector()[0],
            (0.2f64 / 0.5).ln(),
            epsilon = 1e-15
        );
        let back = p.to_hybrid();
        assert_relative_eq!(back.q.probabilities(), h.q.probabilities(), epsilon = 1e-15);
        let again = LandscapePoint::from_stacked(2, &p.stacked()).unwrap();
        assert_eq!(again, p);
    }
}
