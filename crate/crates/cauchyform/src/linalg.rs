//! Dense linear algebra shared by the numerical modules.

use std::io::Write;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

pub fn cholesky(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m.clone()).ok_or_else(|| Error::Factorization(format!("{what} is not positive definite")))
}

/// Solve the symmetric-definite pencil A x = λ M x. Eigenvalues ascending,
/// eigenvectors M-orthonormal (columns).
pub fn generalized_eigen(a: &DMatrix<f64>, m: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = a.nrows();
    if n == 0 {
        return Ok((DVector::zeros(0), DMatrix::zeros(0, 0)));
    }
    let chol = cholesky(m, "mass matrix")?;
    let l = chol.l();
    let linv_a = l.solve_lower_triangular(a).ok_or_else(|| Error::Factorization("triangular solve".into()))?;
    let c = l
        .solve_lower_triangular(&linv_a.transpose())
        .ok_or_else(|| Error::Factorization("triangular solve".into()))?;
    let c = (&c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::try_new(c, f64::EPSILON, 0)
        .ok_or_else(|| Error::Convergence("symmetric eigensolver".into()))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].partial_cmp(&eig.eigenvalues[j]).unwrap().then(i.cmp(&j)));
    let vals = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut w = DMatrix::zeros(n, n);
    for (c_new, &c_old) in order.iter().enumerate() {
        w.set_column(c_new, &eig.eigenvectors.column(c_old));
    }
    let v = l.transpose().solve_upper_triangular(&w).ok_or_else(|| Error::Factorization("back substitution".into()))?;
    // deterministic sign: largest-magnitude entry positive
    let mut v = v;
    for j in 0..n {
        let col = v.column(j);
        let mut best = 0;
        for i in 0..n {
            if col[i].abs() > col[best].abs() + 1e-12 {
                best = i;
            }
        }
        if v[(best, j)] < 0.0 {
            v.column_mut(j).neg_mut();
        }
    }
    Ok((vals, v))
}

/// Orthonormal basis of the null space of `a` (columns), singular values
/// below `rel_tol * σ_max` count as zero.
pub fn null_space(a: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let ncols = a.ncols();
    if a.nrows() == 0 {
        return DMatrix::identity(ncols, ncols);
    }
    // pad to a square so the SVD returns a full right basis
    let mut padded = DMatrix::zeros(a.nrows().max(ncols), ncols);
    padded.rows_mut(0, a.nrows()).copy_from(a);
    let svd = padded.svd(false, true);
    let vt = svd.v_t.expect("requested V^T");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] <= rel_tol * smax.max(f64::MIN_POSITIVE))
        .collect();
    let mut z = DMatrix::zeros(ncols, keep.len());
    for (j, &i) in keep.iter().enumerate() {
        z.set_column(j, &vt.row(i).transpose());
    }
    z
}

/// Descending singular values.
pub fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = a.clone().svd(false, false).singular_values.iter().cloned().collect();
    s.sort_by(|x, y| y.partial_cmp(x).unwrap());
    s
}

pub fn numerical_rank(a: &DMatrix<f64>, rel_tol: f64) -> usize {
    let s = singular_values(a);
    let smax = s.first().cloned().unwrap_or(0.0);
    s.iter().filter(|&&x| x > rel_tol * smax && x > 0.0).count()
}

/// Minimum-norm least-squares solution of a x = b.
pub fn lstsq_min_norm(a: &DMatrix<f64>, b: &DVector<f64>, rel_tol: f64) -> DVector<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return DVector::zeros(a.ncols());
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    svd.solve(b, rel_tol * smax).unwrap_or_else(|_| DVector::zeros(a.ncols()))
}

/// Selection matrix picking `rows` out of `n` coordinates.
pub fn selection(rows: &[usize], n: usize) -> DMatrix<f64> {
    let mut s = DMatrix::zeros(rows.len(), n);
    for (r, &i) in rows.iter().enumerate() {
        s[(r, i)] = 1.0;
    }
    s
}

pub fn block_diag(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols() + b.ncols());
    m.view_mut((0, 0), (a.nrows(), a.ncols())).copy_from(a);
    m.view_mut((a.nrows(), a.ncols()), (b.nrows(), b.ncols())).copy_from(b);
    m
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Relative asymmetry ‖A − Aᵀ‖ / ‖A‖.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.norm();
    if n == 0.0 {
        0.0
    } else {
        (m - m.transpose()).norm() / n
    }
}

/// Write a matrix as coordinate-list text: a header line `rows cols nnz`
/// followed by one `row col value` line per nonzero (0-based).
pub fn write_coo<W: Write>(m: &DMatrix<f64>, mut w: W) -> std::io::Result<()> {
    let nnz = m.iter().filter(|x| **x != 0.0).count();
    writeln!(w, "{} {} {}", m.nrows(), m.ncols(), nnz)?;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            let v = m[(i, j)];
            if v != 0.0 {
                writeln!(w, "{i} {j} {v:e}")?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generalized_eigen_is_mass_orthonormal() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 2.0]);
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.0, 0.5, 2.0, 0.5, 0.0, 0.5, 2.0]);
        let (vals, v) = generalized_eigen(&a, &m).unwrap();
        let g = v.transpose() * &m * &v;
        assert!((g - DMatrix::identity(3, 3)).norm() < 1e-12);
        for j in 0..3 {
            let r = &a * v.column(j) - &m * v.column(j) * vals[j];
            assert!(r.norm() < 1e-12);
        }
        assert!(vals[0] <= vals[1] && vals[1] <= vals[2]);
    }

    #[test]
    fn null_space_of_rank_one() {
        let a = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 0.0]);
        let z = null_space(&a, 1e-12);
        assert_eq!(z.ncols(), 2);
        assert!((&a * &z).norm() < 1e-14);
    }
}
