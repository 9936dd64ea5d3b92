//! Small dense symmetric-matrix helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Relative eigenvalue cutoff for Moore–Penrose inverses.
pub const PINV_CUTOFF: f64 = 1e-12;

/// Eigenvalues in ascending order with matching eigenvector columns.
pub fn sorted_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(symmetrize(m));
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (j, &i) in order.iter().enumerate() {
        vectors.set_column(j, &eig.eigenvectors.column(i));
    }
    (values, vectors)
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sorted_eigen(m).0[0]
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Moore–Penrose inverse of a symmetric PSD matrix, dropping eigenvalues
/// below `PINV_CUTOFF * λ_max`.
pub fn pinv_symmetric(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let (values, vectors) = sorted_eigen(m);
    let lmax = values.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let mut out = DMatrix::zeros(n, n);
    if lmax == 0.0 {
        return out;
    }
    for j in 0..n {
        let v = values[j];
        if v.abs() > PINV_CUTOFF * lmax {
            let col = vectors.column(j);
            out += (col * col.transpose()) / v;
        }
    }
    out
}

/// Inverse of a symmetric positive definite matrix, `None` if Cholesky fails.
pub fn spd_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let chol = nalgebra::Cholesky::new(symmetrize(m))?;
    Some(chol.inverse())
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter()
        .zip(b.iter())
        .fold(0.0f64, |acc, (x, y)| acc.max((x - y).abs()))
}

/// `true` when `a · g · a = a` within `tol` (absolute, entrywise).
pub fn is_generalized_inverse(a: &DMatrix<f64>, g: &DMatrix<f64>, tol: f64) -> bool {
    a.shape().0 == g.shape().1 && max_abs_diff(&(a * g * a), a) <= tol
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_sorted_and_reconstructs() {
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 1.0]);
        let (vals, vecs) = sorted_eigen(&m);
        assert!(vals[0] <= vals[1] && vals[1] <= vals[2]);
        let recon = &vecs * DMatrix::from_diagonal(&vals) * vecs.transpose();
        assert!(max_abs_diff(&recon, &m) < 1e-12);
    }

    #[test]
    fn pinv_of_singular_projector() {
        // rank-1: 1 1^T / 2, its own MP inverse
        let p = DMatrix::from_element(2, 2, 0.5);
        let g = pinv_symmetric(&p);
        assert!(max_abs_diff(&g, &p) < 1e-12);
        assert!(is_generalized_inverse(&p, &g, 1e-12));
    }

    #[test]
    fn spd_inverse_rejects_indefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(spd_inverse(&m).is_none());
        let i = spd_inverse(&DMatrix::identity(3, 3)).unwrap();
        assert!(max_abs_diff(&i, &DMatrix::identity(3, 3)) < 1e-15);
    }
}
