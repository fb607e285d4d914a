//! Dense Hermitian eigenvalues through faer.
//!
//! faer runs single-threaded here; parallelism lives one level up, over
//! k-points, so results do not depend on the thread count.

use std::sync::Once;

use faer::{Mat, Par, Side};
use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

static SEQ: Once = Once::new();

fn ensure_sequential() {
    SEQ.call_once(|| faer::set_global_parallelism(Par::Seq));
}

/// Ascending eigenvalues of a Hermitian matrix (lower triangle is read).
pub fn eigvalsh(m: &DMatrix<Complex64>) -> Result<Vec<f64>> {
    ensure_sequential();
    let n = m.nrows();
    if n != m.ncols() {
        return Err(Error::Eigensolver(format!("matrix is {}×{}", n, m.ncols())));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let f = Mat::<faer::c64>::from_fn(n, n, |i, j| {
        let z = m[(i, j)];
        faer::c64::new(z.re, z.im)
    });
    let mut ev = f
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::Eigensolver(format!("{e:?}")))?;
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(ev)
}

/// Like [`eigvalsh`], panicking on solver failure.
pub fn eigvalsh_dense(m: &DMatrix<Complex64>) -> Vec<f64> {
    eigvalsh(m).expect("Hermitian eigensolver failed")
}

/// Eigenpairs of a real symmetric matrix: (values, columns of eigenvectors).
pub fn eigh_real(m: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    ensure_sequential();
    let n = m.nrows();
    if n != m.ncols() {
        return Err(Error::Eigensolver(format!("matrix is {}×{}", n, m.ncols())));
    }
    let f = Mat::<f64>::from_fn(n, n, |i, j| m[(i, j)]);
    let e = f.self_adjoint_eigen(Side::Lower).map_err(|e| Error::Eigensolver(format!("{e:?}")))?;
    let s = e.S().column_vector();
    let u = e.U();
    let values = (0..n).map(|i| s[i]).collect();
    Ok((values, DMatrix::from_fn(n, n, |i, j| u[(i, j)])))
}

/// Largest absolute entry of H − Hᴴ.
pub fn hermiticity_defect(m: &DMatrix<Complex64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in 0..=i {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn pauli_y_spectrum() {
        let i = Complex64::i();
        let m = DMatrix::from_row_slice(2, 2, &[Complex64::new(0.0, 0.0), -i, i, Complex64::new(0.0, 0.0)]);
        let e = eigvalsh(&m).unwrap();
        assert_relative_eq!(e[0], -1.0, epsilon = 1e-14);
        assert_relative_eq!(e[1], 1.0, epsilon = 1e-14);
        assert!(hermiticity_defect(&m) < 1e-15);
    }

    #[test]
    fn diagonal_is_sorted() {
        let d = [3.0, -1.0, 2.0, 0.5];
        let m = DMatrix::from_fn(4, 4, |i, j| if i == j { Complex64::new(d[i], 0.0) } else { Complex64::new(0.0, 0.0) });
        assert_eq!(eigvalsh(&m).unwrap(), vec![-1.0, 0.5, 2.0, 3.0]);
    }
}
