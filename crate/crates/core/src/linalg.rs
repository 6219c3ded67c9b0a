//! Small dense symmetric-matrix helpers on top of nalgebra.

use crate::{Error, Result};
use nalgebra::{DMatrix, SymmetricEigen};

/// Largest |M_ij - M_ji|.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in 0..i {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Rejects matrices whose asymmetry exceeds `tol * max(1, max |M_ij|)`.
pub fn check_symmetric(m: &DMatrix<f64>, tol: f64) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch(format!("{}x{} matrix is not square", m.nrows(), m.ncols())));
    }
    let scale = m.amax().max(1.0);
    let a = asymmetry(m);
    if a > tol * scale {
        return Err(Error::Asymmetric { asymmetry: a, tolerance: tol * scale });
    }
    Ok(())
}

/// Eigenvalues (descending) and matching eigenvectors (columns).
pub fn sym_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    if n == 0 {
        return (vec![], DMatrix::zeros(0, 0));
    }
    let e = SymmetricEigen::new(symmetrize(m));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| e.eigenvalues[b].partial_cmp(&e.eigenvalues[a]).unwrap_or(std::cmp::Ordering::Equal));
    let vals = order.iter().map(|&i| e.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(n, n, |r, c| e.eigenvectors[(r, order[c])]);
    (vals, vecs)
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigen(m).0.last().copied().unwrap_or(0.0)
}

/// Result of clipping negative eigenvalues at zero.
#[derive(Clone, Debug)]
pub struct PsdRoot {
    pub root: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    /// Sum of |negative eigenvalues| that were clipped.
    pub repair: f64,
}

/// Symmetric PSD square root via eigendecomposition with clipping at 0.
pub fn psd_sqrt(m: &DMatrix<f64>) -> PsdRoot {
    let (vals, vecs) = sym_eigen(m);
    let mut repair = 0.0;
    let roots: Vec<f64> = vals
        .iter()
        .map(|&v| {
            if v < 0.0 {
                repair += -v;
                0.0
            } else {
                v.sqrt()
            }
        })
        .collect();
    if repair > 0.0 {
        log::debug!("psd_sqrt clipped negative eigenvalue mass {repair:e}");
    }
    let n = m.nrows();
    let scaled = DMatrix::from_fn(n, n, |r, c| vecs[(r, c)] * roots[c]);
    let root = &scaled * vecs.transpose();
    PsdRoot { root: symmetrize(&root), eigenvalues: vals, repair }
}

/// Eigenvalue-clipped copy of a symmetric matrix and the clipped mass.
pub fn psd_repair(m: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let (vals, vecs) = sym_eigen(m);
    let repair: f64 = vals.iter().filter(|v| **v < 0.0).map(|v| -v).sum();
    if repair == 0.0 {
        return (symmetrize(m), 0.0);
    }
    let n = m.nrows();
    let scaled = DMatrix::from_fn(n, n, |r, c| vecs[(r, c)] * vals[c].max(0.0));
    (symmetrize(&(&scaled * vecs.transpose())), repair)
}

/// F with F F^T = S^+ (S with negative eigenvalues clipped): the columns
/// sqrt(lambda_k) v_k for lambda_k > 0. Tiny eigenvalues are kept, so the
/// factor is accurate to rounding across the whole spectrum.
pub fn psd_factor(s: &DMatrix<f64>) -> DMatrix<f64> {
    let (vals, vecs) = sym_eigen(s);
    let r = vals.iter().take_while(|v| **v > 0.0).count();
    DMatrix::from_fn(s.nrows(), r, |i, k| vecs[(i, k)] * vals[k].sqrt())
}

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sqrt_squares_back() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let r = psd_sqrt(&a);
        assert!(frobenius(&(&r.root * &r.root - &a)) < 1e-12);
        assert_eq!(r.repair, 0.0);
    }

    #[test]
    fn factor_handles_singular() {
        let v = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, -1.0]);
        let s = &v * v.transpose();
        let l = psd_factor(&s);
        assert!(frobenius(&(&l * l.transpose() - &s)) < 1e-12);
    }

    #[test]
    fn eigen_sorted_descending() {
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 5.0, 3.0]));
        let (v, _) = sym_eigen(&a);
        assert_eq!(v, vec![5.0, 3.0, 1.0]);
    }
}
