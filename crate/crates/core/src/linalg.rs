//! Symmetric eigendecomposition.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{NtkError, Result};

/// Full eigendecomposition of a symmetric row-major `n x n` matrix:
/// eigenvalues sorted descending with matching orthonormal eigenvector columns
/// (returned row-major, column `i` pairs with eigenvalue `i`).
pub fn symmetric_eigen(n: usize, entries: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if entries.len() != n * n {
        return Err(NtkError::Config(format!(
            "expected {} entries for a {n}x{n} matrix, got {}",
            n * n,
            entries.len()
        )));
    }
    let m = DMatrix::from_row_slice(n, n, entries);
    let eig = SymmetricEigen::try_new(m, f64::EPSILON, 10_000).ok_or_else(|| {
        NtkError::numerical("symmetric eigensolver", "did not converge")
    })?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = vec![0.0; n * n];
    for (col, &src) in order.iter().enumerate() {
        for row in 0..n {
            vectors[row * n + col] = eig.eigenvectors[(row, src)];
        }
    }
    if values_non_finite(&values) {
        return Err(NtkError::numerical("symmetric eigensolver", "non-finite eigenvalue"));
    }
    Ok((values, vectors))
}

fn values_non_finite(v: &[f64]) -> bool {
    v.iter().any(|x| !x.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_is_sorted() {
        let (vals, vecs) = symmetric_eigen(3, &[1.0, 0.0, 0.0, 0.0, 3.0, 0.0, 0.0, 0.0, 2.0]).unwrap();
        assert_eq!(vals, vec![3.0, 2.0, 1.0]);
        // first column is e_2 up to sign
        assert!((vecs[3].abs() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn wrong_size_is_rejected() {
        assert!(symmetric_eigen(2, &[1.0; 3]).is_err());
    }
}
