//! Thin wrappers over the dense eigensolvers.

use faer::Mat;
use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::projective::C64;

/// Eigenvalues and right eigenvectors (as columns) of a general complex matrix.
pub fn eigen_complex(m: &DMatrix<C64>) -> Result<(Vec<C64>, DMatrix<C64>)> {
    let n = m.nrows();
    let f = Mat::<C64>::from_fn(n, n, |i, j| m[(i, j)]);
    let e = f
        .eigen()
        .map_err(|e| Error::Eigensolver(format!("{e:?}")))?;
    let s = e.S().column_vector();
    let u = e.U();
    let vals = (0..n).map(|i| s[i]).collect();
    let vecs = DMatrix::from_fn(n, n, |i, j| u[(i, j)]);
    Ok((vals, vecs))
}

/// Eigenvalues of a dense real matrix given in row-major order.
pub fn eigenvalues_real(n: usize, row_major: &[f64]) -> Result<Vec<C64>> {
    let f = Mat::<f64>::from_fn(n, n, |i, j| row_major[i * n + j]);
    f.eigenvalues()
        .map_err(|e| Error::Eigensolver(format!("{e:?}")))
}

/// Orthonormal basis of the numerical null space (singular values `<= tol`)
/// of a square matrix.
pub fn null_space(m: &DMatrix<C64>, tol: f64) -> DMatrix<C64> {
    let n = m.ncols();
    let svd = m.clone().svd(false, true);
    let vt = svd.v_t.expect("requested");
    let rows: Vec<usize> = (0..n).filter(|&i| svd.singular_values[i] <= tol).collect();
    DMatrix::from_fn(n, rows.len(), |i, j| vt[(rows[j], i)].conj())
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues descending.
pub fn hermitian_eigen(m: &DMatrix<C64>) -> (Vec<f64>, DMatrix<C64>) {
    let h = (m + m.adjoint()) * C64::new(0.5, 0.0);
    let eig = h.symmetric_eigen();
    let n = m.nrows();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let vals = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, idx[j])]);
    (vals, vecs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_of_rotation() {
        let m = DMatrix::from_row_slice(
            2,
            2,
            &[C64::new(0.0, 0.0), C64::new(-1.0, 0.0), C64::new(1.0, 0.0), C64::new(0.0, 0.0)],
        );
        let (vals, vecs) = eigen_complex(&m).unwrap();
        for (j, l) in vals.iter().enumerate() {
            assert!((l.norm() - 1.0).abs() < 1e-12 && l.re.abs() < 1e-12);
            let v = vecs.column(j).into_owned();
            assert!((&m * &v - v * *l).norm() < 1e-12);
        }
        let ev = eigenvalues_real(2, &[2.0, 0.0, 0.0, 3.0]).unwrap();
        let mut re: Vec<f64> = ev.iter().map(|z| z.re).collect();
        re.sort_by(f64::total_cmp);
        assert_eq!(re, vec![2.0, 3.0]);
    }

    #[test]
    fn null_space_dimension() {
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            C64::new(1.0, 0.0),
            C64::new(0.0, 0.0),
            C64::new(0.0, 0.0),
        ]));
        assert_eq!(null_space(&m, 1e-9).ncols(), 2);
    }
}
