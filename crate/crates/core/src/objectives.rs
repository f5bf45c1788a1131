//! Objective families `l = (l_1, ..., l_S) : R^m -> R^S`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::simplex::SimplexPoint;

/// A list of `S` differentiable convex losses on `R^m`.
///
/// Evaluation must be reentrant; families are shared across threads.
pub trait ObjectiveFamily: Send + Sync {
    fn dim(&self) -> usize;

    fn num_losses(&self) -> usize;

    /// `l(x)`, length `S`.
    fn values(&self, x: &DVector<f64>) -> DVector<f64>;

    /// `J_l(x)`, `S x m`, row `s` is `grad l_s(x)`.
    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64>;

    /// Per-loss Hessians, if the family provides them.
    fn hessians(&self, _x: &DVector<f64>) -> Option<Vec<DMatrix<f64>>> {
        None
    }
}

impl<T: ObjectiveFamily + ?Sized> ObjectiveFamily for Arc<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn num_losses(&self) -> usize {
        (**self).num_losses()
    }
    fn values(&self, x: &DVector<f64>) -> DVector<f64> {
        (**self).values(x)
    }
    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (**self).jacobian(x)
    }
    fn hessians(&self, x: &DVector<f64>) -> Option<Vec<DMatrix<f64>>> {
        (**self).hessians(x)
    }
}

impl<T: ObjectiveFamily + ?Sized> ObjectiveFamily for Box<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn num_losses(&self) -> usize {
        (**self).num_losses()
    }
    fn values(&self, x: &DVector<f64>) -> DVector<f64> {
        (**self).values(x)
    }
    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (**self).jacobian(x)
    }
    fn hessians(&self, x: &DVector<f64>) -> Option<Vec<DMatrix<f64>>> {
        (**self).hessians(x)
    }
}

pub(crate) fn check_x(fam: &dyn ObjectiveFamily, x: &DVector<f64>) -> Result<()> {
    if x.len() != fam.dim() {
        return Err(Error::dims("x", fam.dim(), x.len()));
    }
    Ok(())
}

pub(crate) fn check_q(fam: &dyn ObjectiveFamily, q: &SimplexPoint) -> Result<()> {
    if q.len() != fam.num_losses() {
        return Err(Error::dims("q", fam.num_losses(), q.len()));
    }
    Ok(())
}

/// One quadratic loss `x^T A x / 2 + b^T x + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticLoss {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: f64,
}

/// Quadratic losses with symmetric PSD curvature.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticFamily {
    dim: usize,
    losses: Vec<QuadraticLoss>,
}

impl QuadraticFamily {
    pub fn new(losses: Vec<QuadraticLoss>) -> Result<Self> {
        if losses.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "a family needs at least 2 losses, got {}",
                losses.len()
            )));
        }
        let dim = losses[0].b.len();
        if dim == 0 {
            return Err(Error::InvalidArgument(
                "input dimension must be >= 1".into(),
            ));
        }
        for (s, l) in losses.iter().enumerate() {
            if l.a.nrows() != dim || l.a.ncols() != dim {
                return Err(Error::dims("quadratic curvature", dim, l.a.nrows()));
            }
            if l.b.len() != dim {
                return Err(Error::dims("quadratic linear term", dim, l.b.len()));
            }
            let asym = (&l.a - l.a.transpose()).amax();
            if asym > 1e-12 * (1.0 + l.a.amax()) {
                return Err(Error::InvalidArgument(format!(
                    "loss {s}: curvature matrix is not symmetric"
                )));
            }
            let min_eig = l.a.clone().symmetric_eigenvalues().min();
            if min_eig < -1e-12 * (1.0 + l.a.amax()) {
                return Err(Error::InvalidArgument(format!(
                    "loss {s}: curvature matrix is not PSD (eigenvalue {min_eig:e})"
                )));
            }
            if !l.c.is_finite() || l.b.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "loss {s}: non-finite coefficients"
                )));
            }
        }
        Ok(Self { dim, losses })
    }

    /// `l_s(x) = |x - center_s|^2 / 2` on `R^m`.
    pub fn isotropic(centers: &[DVector<f64>]) -> Result<Self> {
        let losses = centers
            .iter()
            .map(|c| QuadraticLoss {
                a: DMatrix::identity(c.len(), c.len()),
                b: -c,
                c: 0.5 * c.norm_squared(),
            })
            .collect();
        Self::new(losses)
    }

    /// `l_1 = (x - 1)^2 / 2`, `l_2 = (x + 1)^2 / 2` on `R`: the fixed point is
    /// `(0, (1/2, 1/2))` by symmetry.
    pub fn symmetric_pair() -> Self {
        Self::isotropic(&[
            DVector::from_element(1, 1.0),
            DVector::from_element(1, -1.0),
        ])
        .expect("valid by construction")
    }

    pub fn losses(&self) -> &[QuadraticLoss] {
        &self.losses
    }
}

impl ObjectiveFamily for QuadraticFamily {
    fn dim(&self) -> usize {
        self.dim
    }

    fn num_losses(&self) -> usize {
        self.losses.len()
    }

    fn values(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.losses.len(),
            self.losses
                .iter()
                .map(|l| 0.5 * x.dot(&(&l.a * x)) + l.b.dot(x) + l.c),
        )
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(self.losses.len(), self.dim);
        for (s, l) in self.losses.iter().enumerate() {
            let g = &l.a * x + &l.b;
            j.row_mut(s).copy_from(&g.transpose());
        }
        j
    }

    fn hessians(&self, _x: &DVector<f64>) -> Option<Vec<DMatrix<f64>>> {
        Some(self.losses.iter().map(|l| l.a.clone()).collect())
    }
}

/// `l_s = c_s`, constant in `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantFamily {
    dim: usize,
    values: DVector<f64>,
}

impl ConstantFamily {
    pub fn new(dim: usize, values: DVector<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "a family needs at least 2 losses, got {}",
                values.len()
            )));
        }
        if dim == 0 {
            return Err(Error::InvalidArgument(
                "input dimension must be >= 1".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite constant".into()));
        }
        Ok(Self { dim, values })
    }
}

impl ObjectiveFamily for ConstantFamily {
    fn dim(&self) -> usize {
        self.dim
    }

    fn num_losses(&self) -> usize {
        self.values.len()
    }

    fn values(&self, _x: &DVector<f64>) -> DVector<f64> {
        self.values.clone()
    }

    fn jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(self.values.len(), self.dim)
    }

    fn hessians(&self, _x: &DVector<f64>) -> Option<Vec<DMatrix<f64>>> {
        Some(vec![DMatrix::zeros(self.dim, self.dim); self.values.len()])
    }
}

/// `l_s(x) = softplus(a_s^T x + b_s) + mu_s |x - c_s|^2 / 2` with `mu_s >= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftplusFamily {
    pub directions: Vec<DVector<f64>>,
    pub offsets: DVector<f64>,
    pub ridges: DVector<f64>,
    pub centers: Vec<DVector<f64>>,
}

fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

impl SoftplusFamily {
    pub fn new(
        directions: Vec<DVector<f64>>,
        offsets: DVector<f64>,
        ridges: DVector<f64>,
        centers: Vec<DVector<f64>>,
    ) -> Result<Self> {
        let s = directions.len();
        if s < 2 {
            return Err(Error::InvalidArgument(format!(
                "a family needs at least 2 losses, got {s}"
            )));
        }
        let m = directions[0].len();
        if m == 0 {
            return Err(Error::InvalidArgument(
                "input dimension must be >= 1".into(),
            ));
        }
        if offsets.len() != s || ridges.len() != s || centers.len() != s {
            return Err(Error::dims(
                "softplus parameters",
                s,
                offsets.len().min(ridges.len()).min(centers.len()),
            ));
        }
        if let Some(bad) = directions
            .iter()
            .chain(centers.iter())
            .find(|v| v.len() != m)
        {
            return Err(Error::dims("softplus vectors", m, bad.len()));
        }
        if ridges.iter().any(|&r| !(r >= 0.0 && r.is_finite())) {
            return Err(Error::InvalidArgument(
                "ridges must be finite and >= 0".into(),
            ));
        }
        Ok(Self {
            directions,
            offsets,
            ridges,
            centers,
        })
    }

    fn activation(&self, s: usize, x: &DVector<f64>) -> f64 {
        self.directions[s].dot(x) + self.offsets[s]
    }
}

impl ObjectiveFamily for SoftplusFamily {
    fn dim(&self) -> usize {
        self.directions[0].len()
    }

    fn num_losses(&self) -> usize {
        self.directions.len()
    }

    fn values(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.num_losses(), |s, _| {
            softplus(self.activation(s, x))
                + 0.5 * self.ridges[s] * (x - &self.centers[s]).norm_squared()
        })
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(self.num_losses(), self.dim());
        for s in 0..self.num_losses() {
            let g = &self.directions[s] * logistic(self.activation(s, x))
                + (x - &self.centers[s]) * self.ridges[s];
            j.row_mut(s).copy_from(&g.transpose());
        }
        j
    }

    fn hessians(&self, x: &DVector<f64>) -> Option<Vec<DMatrix<f64>>> {
        let m = self.dim();
        Some(
            (0..self.num_losses())
                .map(|s| {
                    let p = logistic(self.activation(s, x));
                    let a = &self.directions[s];
                    a * a.transpose() * (p * (1.0 - p)) + DMatrix::identity(m, m) * self.ridges[s]
                })
                .collect(),
        )
    }
}

/// `[l1 (+) l2]_{j,k} = l1_j + l2_k`, flattened row-major as `j * S2 + k`.
#[derive(Clone)]
pub struct OuterSum {
    first: Arc<dyn ObjectiveFamily>,
    second: Arc<dyn ObjectiveFamily>,
}

impl std::fmt::Debug for OuterSum {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OuterSum")
            .field("dim", &self.first.dim())
            .field("s1", &self.first.num_losses())
            .field("s2", &self.second.num_losses())
            .finish()
    }
}

pub fn outer_sum(
    first: Arc<dyn ObjectiveFamily>,
    second: Arc<dyn ObjectiveFamily>,
) -> Result<OuterSum> {
    if first.dim() != second.dim() {
        return Err(Error::dims(
            "outer sum input dimension",
            first.dim(),
            second.dim(),
        ));
    }
    Ok(OuterSum { first, second })
}

impl OuterSum {
    pub fn factor_sizes(&self) -> (usize, usize) {
        (self.first.num_losses(), self.second.num_losses())
    }
}

impl ObjectiveFamily for OuterSum {
    fn dim(&self) -> usize {
        self.first.dim()
    }

    fn num_losses(&self) -> usize {
        self.first.num_losses() * self.second.num_losses()
    }

    fn values(&self, x: &DVector<f64>) -> DVector<f64> {
        let a = self.first.values(x);
        let b = self.second.values(x);
        DVector::from_iterator(
            a.len() * b.len(),
            a.iter().flat_map(|&aj| b.iter().map(move |&bk| aj + bk)),
        )
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let ja = self.first.jacobian(x);
        let jb = self.second.jacobian(x);
        let (s1, s2) = (ja.nrows(), jb.nrows());
        let mut j = DMatrix::zeros(s1 * s2, self.dim());
        for a in 0..s1 {
            for b in 0..s2 {
                j.row_mut(a * s2 + b).copy_from(&(ja.row(a) + jb.row(b)));
            }
        }
        j
    }

    fn hessians(&self, x: &DVector<f64>) -> Option<Vec<DMatrix<f64>>> {
        let ha = self.first.hessians(x)?;
        let hb = self.second.hessians(x)?;
        Some(
            ha.iter()
                .flat_map(|a| hb.iter().map(move |b| a + b))
                .collect(),
        )
    }
}

/// `[q1 (x) q2]_{j,k} = q1_j q2_k` with the same flattening as [`outer_sum`].
pub fn outer_product(q1: &SimplexPoint, q2: &SimplexPoint) -> SimplexPoint {
    let (a, b) = (q1.log_weights(), q2.log_weights());
    let lw = DVector::from_iterator(
        a.len() * b.len(),
        a.iter().flat_map(|&aj| b.iter().map(move |&bk| aj + bk)),
    );
    SimplexPoint::from_log_weights(lw).expect("sum of finite log-weights")
}

/// Result of reshaping a simplex point into an `S1 x S2` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct RankOneCheck {
    pub is_rank_one: bool,
    pub singular_values: (f64, f64),
    pub factors: Option<(SimplexPoint, SimplexPoint)>,
}

pub fn rank_one_factor_check(
    q: &SimplexPoint,
    s1: usize,
    s2: usize,
    tol: f64,
) -> Result<RankOneCheck> {
    if s1 < 2 || s2 < 2 || s1 * s2 != q.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot reshape a point of length {} into {s1} x {s2}",
            q.len()
        )));
    }
    let p = q.probabilities();
    let mat = DMatrix::from_fn(s1, s2, |j, k| p[j * s2 + k]);
    let mut sv: Vec<f64> = mat.clone().singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let (first, second) = (sv[0], sv[1]);
    if second > tol * first {
        return Ok(RankOneCheck {
            is_rank_one: false,
            singular_values: (first, second),
            factors: None,
        });
    }
    let rows = DVector::from_iterator(s1, mat.row_iter().map(|r| r.sum()));
    let cols = DVector::from_iterator(s2, mat.column_iter().map(|c| c.sum()));
    let f1 = SimplexPoint::from_log_weights(rows.map(f64::ln))?;
    let f2 = SimplexPoint::from_log_weights(cols.map(f64::ln))?;
    let rebuilt = outer_product(&f1, &f2).probabilities();
    let ok = (rebuilt - p).amax() <= tol;
    Ok(RankOneCheck {
        is_rank_one: ok,
        singular_values: (first, second),
        factors: ok.then_some((f1, f2)),
    })
}

/// `J_l(x)^T q = sum_s q_s grad l_s(x)`.
pub fn barygradient(
    fam: &dyn ObjectiveFamily,
    x: &DVector<f64>,
    q: &SimplexPoint,
) -> Result<DVector<f64>> {
    check_x(fam, x)?;
    check_q(fam, q)?;
    Ok(fam.jacobian(x).transpose() * q.probabilities())
}

pub const FD_STEP: f64 = 1e-5;

/// Central finite-difference Jacobian of `values`.
pub fn fd_jacobian(fam: &dyn ObjectiveFamily, x: &DVector<f64>, step: f64) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(fam.num_losses(), fam.dim());
    for i in 0..fam.dim() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += step;
        xm[i] -= step;
        let col = (fam.values(&xp) - fam.values(&xm)) / (2.0 * step);
        j.column_mut(i).copy_from(&col);
    }
    j
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointDeviation {
    pub x: DVector<f64>,
    pub jacobian: f64,
    pub hessian: Option<f64>,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FiniteDiffReport {
    pub points: Vec<PointDeviation>,
}

impl FiniteDiffReport {
    pub fn any_flagged(&self) -> bool {
        self.points.iter().any(|p| p.flagged)
    }

    pub fn max_jacobian_deviation(&self) -> f64 {
        self.points.iter().fold(0.0, |m, p| m.max(p.jacobian))
    }
}

/// Compares analytic derivatives with central differences at `points`.
///
/// A point is flagged when a deviation exceeds `1e-5 (1 + |J_l(x)|_max)`.
pub fn finite_diff_check(fam: &dyn ObjectiveFamily, points: &[DVector<f64>]) -> FiniteDiffReport {
    let points = points
        .iter()
        .map(|x| {
            let analytic = fam.jacobian(x);
            let jac_dev = (&analytic - fd_jacobian(fam, x, FD_STEP)).amax();
            let hess_dev = fam.hessians(x).map(|hs| {
                let mut worst: f64 = 0.0;
                for i in 0..fam.dim() {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[i] += FD_STEP;
                    xm[i] -= FD_STEP;
                    let col = (fam.jacobian(&xp) - fam.jacobian(&xm)) / (2.0 * FD_STEP);
                    for (s, h) in hs.iter().enumerate() {
                        for r in 0..fam.dim() {
                            worst = worst.max((h[(r, i)] - col[(s, r)]).abs());
                        }
                    }
                }
                worst
            });
            let bound = 1e-5 * (1.0 + analytic.amax());
            let flagged = jac_dev > bound || hess_dev.is_some_and(|d| d > bound);
            PointDeviation {
                x: x.clone(),
                jacobian: jac_dev,
                hessian: hess_dev,
                flagged,
            }
        })
        .collect();
    FiniteDiffReport { points }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{dmatrix, dvector};
    use proptest::prelude::*;

    fn sp(p: &[f64]) -> SimplexPoint {
        SimplexPoint::from_probabilities(p).unwrap()
    }

    #[test]
    fn barygradient_examples() {
        let c = ConstantFamily::new(3, dvector![1.0, -2.0]).unwrap();
        let g = barygradient(&c, &dvector![1.0, 2.0, 3.0], &sp(&[0.3, 0.7])).unwrap();
        assert_eq!(g, DVector::zeros(3));

        let f = QuadraticFamily::symmetric_pair();
        let g = barygradient(&f, &dvector![0.0], &sp(&[0.5, 0.5])).unwrap();
        assert_relative_eq!(g[0], 0.0, epsilon = 1e-15);
        let g = barygradient(&f, &dvector![2.0], &sp(&[0.3, 0.7])).unwrap();
        assert_relative_eq!(g[0], 2.4, epsilon = 1e-14);

        assert!(barygradient(&f, &dvector![1.0, 2.0], &sp(&[0.5, 0.5])).is_err());
        assert!(barygradient(&f, &dvector![1.0], &SimplexPoint::uniform(3).unwrap()).is_err());
    }

    #[test]
    fn outer_sum_of_constants() {
        let (a, b) = (1.5, -0.25);
        let f1: Arc<dyn ObjectiveFamily> =
            Arc::new(ConstantFamily::new(1, dvector![0.0, a]).unwrap());
        let f2: Arc<dyn ObjectiveFamily> =
            Arc::new(ConstantFamily::new(1, dvector![0.0, b]).unwrap());
        let sum = outer_sum(f1, f2).unwrap();
        assert_eq!(sum.values(&dvector![0.0]), dvector![0.0, b, a, a + b]);
    }

    #[test]
    fn outer_sum_with_zero_family() {
        let f: Arc<dyn ObjectiveFamily> = Arc::new(QuadraticFamily::symmetric_pair());
        let zero: Arc<dyn ObjectiveFamily> =
            Arc::new(ConstantFamily::new(1, DVector::zeros(3)).unwrap());
        let sum = outer_sum(f.clone(), zero).unwrap();
        let x = dvector![0.7];
        let base = f.values(&x);
        let v = sum.values(&x);
        for j in 0..2 {
            for k in 0..3 {
                assert_eq!(v[j * 3 + k], base[j]);
            }
        }
    }

    #[test]
    fn outer_sum_jacobian_matches_fd() {
        let f1: Arc<dyn ObjectiveFamily> = Arc::new(
            QuadraticFamily::isotropic(&[dvector![1.0, 0.0], dvector![0.0, 2.0]]).unwrap(),
        );
        let f2: Arc<dyn ObjectiveFamily> = Arc::new(
            QuadraticFamily::new(vec![
                QuadraticLoss {
                    a: dmatrix![2.0, 0.5; 0.5, 1.0],
                    b: dvector![1.0, -1.0],
                    c: 0.0,
                },
                QuadraticLoss {
                    a: dmatrix![1.0, 0.0; 0.0, 3.0],
                    b: dvector![0.0, 0.5],
                    c: 1.0,
                },
                QuadraticLoss {
                    a: DMatrix::zeros(2, 2),
                    b: dvector![0.3, 0.2],
                    c: -1.0,
                },
            ])
            .unwrap(),
        );
        let sum = outer_sum(f1.clone(), f2.clone()).unwrap();
        let x = dvector![0.4, -1.3];
        let j = sum.jacobian(&x);
        assert!((&j - fd_jacobian(&sum, &x, FD_STEP)).amax() < 1e-6);
        let (j1, j2) = (f1.jacobian(&x), f2.jacobian(&x));
        assert_relative_eq!(
            j.row(5).into_owned(),
            (j1.row(1) + j2.row(2)).into_owned(),
            epsilon = 1e-15
        );
        assert!(!finite_diff_check(&sum, &[x]).any_flagged());

        let mismatched: Arc<dyn ObjectiveFamily> = Arc::new(QuadraticFamily::symmetric_pair());
        assert!(outer_sum(f1, mismatched).is_err());
    }

    #[test]
    fn outer_product_examples() {
        let u = outer_product(&sp(&[0.5, 0.5]), &sp(&[0.5, 0.5]));
        for s in 0..4 {
            assert_relative_eq!(u.prob(s), 0.25, epsilon = 1e-15);
        }
        let q = outer_product(&sp(&[0.2, 0.8]), &sp(&[0.1, 0.9]));
        let expected = [0.02, 0.18, 0.08, 0.72];
        for (s, e) in expected.iter().enumerate() {
            assert_relative_eq!(q.prob(s), *e, epsilon = 1e-15);
        }
    }

    #[test]
    fn rank_one_examples() {
        let q = sp(&[0.02, 0.18, 0.08, 0.72]);
        let check = rank_one_factor_check(&q, 2, 2, 1e-10).unwrap();
        assert!(check.is_rank_one);
        let (a, b) = check.factors.unwrap();
        assert_relative_eq!(a.probabilities(), dvector![0.2, 0.8], epsilon = 1e-12);
        assert_relative_eq!(b.probabilities(), dvector![0.1, 0.9], epsilon = 1e-12);

        let q = sp(&[0.4, 0.1, 0.1, 0.4]);
        let check = rank_one_factor_check(&q, 2, 2, 1e-6).unwrap();
        assert!(!check.is_rank_one);
        assert!(check.factors.is_none());
        assert_relative_eq!(check.singular_values.0, 0.5, epsilon = 1e-12);
        assert_relative_eq!(check.singular_values.1, 0.3, epsilon = 1e-12);

        assert!(rank_one_factor_check(&q, 3, 2, 1e-6).is_err());
    }

    #[test]
    fn finite_diff_on_builtins() {
        let f = QuadraticFamily::new(vec![
            QuadraticLoss {
                a: dmatrix![2.0, 0.5; 0.5, 1.0],
                b: dvector![1.0, -1.0],
                c: 0.0,
            },
            QuadraticLoss {
                a: dmatrix![1.0, 0.0; 0.0, 3.0],
                b: dvector![0.0, 0.5],
                c: 1.0,
            },
        ])
        .unwrap();
        let pts = [dvector![0.3, -2.0], dvector![5.0, 1.0], dvector![-1.0, 0.1]];
        let report = finite_diff_check(&f, &pts);
        assert!(!report.any_flagged());
        assert!(report.max_jacobian_deviation() < 1e-6);

        let c = ConstantFamily::new(2, dvector![1.0, 3.0]).unwrap();
        let report = finite_diff_check(&c, &pts);
        assert_eq!(report.max_jacobian_deviation(), 0.0);
        assert!(report.points.iter().all(|p| p.hessian == Some(0.0)));
    }

    struct Corrupted(QuadraticFamily);

    impl ObjectiveFamily for Corrupted {
        fn dim(&self) -> usize {
            self.0.dim()
        }
        fn num_losses(&self) -> usize {
            self.0.num_losses()
        }
        fn values(&self, x: &DVector<f64>) -> DVector<f64> {
            self.0.values(x)
        }
        fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
            let mut j = self.0.jacobian(x);
            j.row_mut(1).scale_mut(2.0);
            j
        }
    }

    #[test]
    fn finite_diff_flags_corrupted_jacobian() {
        let bad = Corrupted(QuadraticFamily::symmetric_pair());
        let report = finite_diff_check(&bad, &[dvector![0.5]]);
        assert!(report.any_flagged());
    }

    #[test]
    fn quadratic_family_validation() {
        let not_psd = QuadraticLoss {
            a: dmatrix![-1.0],
            b: dvector![0.0],
            c: 0.0,
        };
        let ok = QuadraticLoss {
            a: dmatrix![1.0],
            b: dvector![0.0],
            c: 0.0,
        };
        assert!(QuadraticFamily::new(vec![not_psd, ok.clone()]).is_err());
        assert!(QuadraticFamily::new(vec![ok.clone()]).is_err());
        let asym = QuadraticLoss {
            a: dmatrix![1.0, 2.0; 0.0, 1.0],
            b: dvector![0.0, 0.0],
            c: 0.0,
        };
        let ok2 = QuadraticLoss {
            a: DMatrix::identity(2, 2),
            b: dvector![0.0, 0.0],
            c: 0.0,
        };
        assert!(QuadraticFamily::new(vec![asym, ok2]).is_err());
    }

    proptest! {
        #[test]
        fn barygradient_is_linear_in_q(
            a in prop::collection::vec(-3.0f64..3.0, 3),
            b in prop::collection::vec(-3.0f64..3.0, 3),
            alpha in 0.0f64..1.0,
            x in -4.0f64..4.0,
        ) {
            let f = QuadraticFamily::isotropic(&[dvector![1.0], dvector![-2.0], dvector![0.5]]).unwrap();
            let q = crate::simplex::softargmax(&DVector::from_vec(a)).unwrap();
            let r = crate::simplex::softargmax(&DVector::from_vec(b)).unwrap();
            let mix = q.probabilities() * alpha + r.probabilities() * (1.0 - alpha);
            let m = SimplexPoint::from_log_weights(mix.map(f64::ln)).unwrap();
            let x = dvector![x];
            let lhs = barygradient(&f, &x, &m).unwrap();
            let rhs = barygradient(&f, &x, &q).unwrap() * alpha + barygradient(&f, &x, &r).unwrap() * (1.0 - alpha);
            prop_assert!((lhs - rhs).amax() <= 1e-12);
        }

        #[test]
        fn tensor_index_maps_agree(
            a in prop::collection::vec(-3.0f64..3.0, 2),
            b in prop::collection::vec(-3.0f64..3.0, 3),
            x in prop::collection::vec(-2.0f64..2.0, 2),
        ) {
            let f1: Arc<dyn ObjectiveFamily> = Arc::new(
                QuadraticFamily::isotropic(&[dvector![1.0, 0.0], dvector![0.0, -1.0]]).unwrap(),
            );
            let f2: Arc<dyn ObjectiveFamily> = Arc::new(
                QuadraticFamily::isotropic(&[dvector![2.0, 1.0], dvector![0.0, 0.0], dvector![-1.0, 3.0]]).unwrap(),
            );
            let q1 = crate::simplex::softargmax(&DVector::from_vec(a)).unwrap();
            let q2 = crate::simplex::softargmax(&DVector::from_vec(b)).unwrap();
            let x = DVector::from_vec(x);
            let sum = outer_sum(f1.clone(), f2.clone()).unwrap();
            let lhs = outer_product(&q1, &q2).probabilities().dot(&sum.values(&x));
            let rhs = q1.probabilities().dot(&f1.values(&x)) + q2.probabilities().dot(&f2.values(&x));
            prop_assert!((lhs - rhs).abs() <= 1e-10);
        }
    }
}
