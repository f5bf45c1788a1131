use nalgebra::{DMatrix, DVector};

/// Counts of positive, negative and zero eigenvalues of a symmetric matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Inertia {
    pub positive: usize,
    pub negative: usize,
    pub zero: usize,
}

impl std::ops::Add for Inertia {
    type Output = Inertia;

    fn add(self, rhs: Inertia) -> Inertia {
        Inertia {
            positive: self.positive + rhs.positive,
            negative: self.negative + rhs.negative,
            zero: self.zero + rhs.zero,
        }
    }
}

pub(crate) fn symmetric_eigenvalues(a: &DMatrix<f64>) -> DVector<f64> {
    if a.nrows() == 0 {
        return DVector::zeros(0);
    }
    a.clone().symmetric_eigenvalues()
}

pub(crate) fn spectral_radius(eigenvalues: &DVector<f64>) -> f64 {
    eigenvalues.iter().fold(0.0, |m, v| f64::max(m, v.abs()))
}

pub(crate) fn inertia(eigenvalues: &DVector<f64>, threshold: f64) -> Inertia {
    eigenvalues.iter().fold(Inertia::default(), |mut acc, &v| {
        if v > threshold {
            acc.positive += 1;
        } else if v < -threshold {
            acc.negative += 1;
        } else {
            acc.zero += 1;
        }
        acc
    })
}

/// Moore-Penrose pseudoinverse of a symmetric matrix, zeroing eigenvalues
/// whose magnitude is below `cutoff`.
pub(crate) fn symmetric_pinv(a: &DMatrix<f64>, cutoff: f64) -> DMatrix<f64> {
    let eig = a.clone().symmetric_eigen();
    let inv = eig
        .eigenvalues
        .map(|v| if v.abs() < cutoff { 0.0 } else { 1.0 / v });
    &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose()
}

pub(crate) fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in i + 1..n {
            let m = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = m;
            a[(j, i)] = m;
        }
    }
}
