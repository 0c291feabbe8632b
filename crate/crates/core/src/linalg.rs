//! Dense decompositions (SVD, QR, Hermitian eigenvalues) computed with faer
//! on nalgebra storage.

use faer::{Mat, MatRef, Side};
use nalgebra::DMatrix;

use crate::mats::C64;

fn to_faer(m: &DMatrix<C64>) -> Mat<C64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

fn from_faer(m: MatRef<'_, C64>) -> DMatrix<C64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Thin SVD `m = u diag(s) v*`, singular values nonincreasing.
pub(crate) struct Svd {
    pub u: DMatrix<C64>,
    pub s: Vec<f64>,
    pub v: DMatrix<C64>,
}

pub(crate) fn thin_svd(m: &DMatrix<C64>) -> Svd {
    if m.nrows().min(m.ncols()) == 0 {
        return Svd {
            u: DMatrix::zeros(m.nrows(), 0),
            s: Vec::new(),
            v: DMatrix::zeros(m.ncols(), 0),
        };
    }
    let svd = to_faer(m).thin_svd().expect("SVD of a finite matrix converges");
    let s = svd.S().column_vector().iter().map(|z| z.re).collect();
    Svd {
        u: from_faer(svd.U()),
        s,
        v: from_faer(svd.V()),
    }
}

/// Singular values, nonincreasing.
pub(crate) fn singular_values(m: &DMatrix<C64>) -> Vec<f64> {
    if m.nrows().min(m.ncols()) == 0 {
        return Vec::new();
    }
    to_faer(m)
        .singular_values()
        .expect("SVD of a finite matrix converges")
}

/// Eigenvalues of a Hermitian matrix (lower triangle is read), nondecreasing.
pub(crate) fn hermitian_eigenvalues(m: &DMatrix<C64>) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    to_faer(m)
        .self_adjoint_eigenvalues(Side::Lower)
        .expect("Hermitian eigensolver converges")
}

/// Thin QR factors `(q, r)` with `q` of shape `rows × min(rows, cols)`.
pub(crate) fn thin_qr(m: &DMatrix<C64>) -> (DMatrix<C64>, DMatrix<C64>) {
    let qr = to_faer(m).qr();
    (from_faer(qr.compute_thin_Q().as_ref()), from_faer(qr.thin_R()))
}

/// Upper-triangular `r` (`min(rows, cols) × cols`) with `r* r = m* m`.
pub(crate) fn thin_r(m: &DMatrix<C64>) -> DMatrix<C64> {
    from_faer(to_faer(m).qr().thin_R())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sample::{gaussian_matrix, rng_from_seed};

    #[test]
    fn svd_reconstructs_and_is_sorted() {
        let mut rng = rng_from_seed(1);
        for (r, c) in [(3, 5), (5, 3), (4, 4)] {
            let m = gaussian_matrix(r, c, &mut rng).into_matrix();
            let svd = thin_svd(&m);
            let sigma = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
                svd.s.len(),
                svd.s.iter().map(|&x| C64::new(x, 0.0)),
            ));
            assert!((&svd.u * sigma * svd.v.adjoint() - &m).norm() < 1e-12);
            assert!(svd.s.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn qr_factors() {
        let m = gaussian_matrix(5, 3, &mut rng_from_seed(2)).into_matrix();
        let (q, r) = thin_qr(&m);
        assert!((&q * &r - &m).norm() < 1e-12);
        assert!((q.adjoint() * &q - DMatrix::identity(3, 3)).norm() < 1e-12);
        assert!((thin_r(&m) - r).norm() < 1e-12);
    }

    #[test]
    fn hermitian_eigenvalues_of_diagonal() {
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            C64::new(3.0, 0.0),
            C64::new(-1.0, 0.0),
        ]));
        assert_eq!(hermitian_eigenvalues(&m).len(), 2);
        assert!((hermitian_eigenvalues(&m)[0] + 1.0).abs() < 1e-14);
    }
}
