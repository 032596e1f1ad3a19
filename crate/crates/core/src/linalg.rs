//! Dense matrix helpers shared across modules.

use nalgebra::{DMatrix, DVector};

pub fn block_diag(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(*b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

pub fn hstack(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks[0].nrows();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut c = 0;
    for b in blocks {
        assert_eq!(b.nrows(), rows, "hstack row mismatch");
        out.view_mut((0, c), (rows, b.ncols())).copy_from(*b);
        c += b.ncols();
    }
    out
}

pub fn vstack(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let cols = blocks[0].ncols();
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        assert_eq!(b.ncols(), cols, "vstack column mismatch");
        out.view_mut((r, 0), (b.nrows(), cols)).copy_from(*b);
        r += b.nrows();
    }
    out
}

pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// `1₂ ⊗ I_n`, the 2n×n stacking operator.
pub fn stack_twice(n: usize) -> DMatrix<f64> {
    vstack(&[&DMatrix::identity(n, n), &DMatrix::identity(n, n)])
}

pub fn sym_part(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Smallest and largest eigenvalue of the symmetric part of `m`.
pub fn sym_eig_range(m: &DMatrix<f64>) -> (f64, f64) {
    if m.nrows() == 0 {
        return (f64::INFINITY, f64::NEG_INFINITY);
    }
    let e = sym_part(m).symmetric_eigenvalues();
    let lo = e.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

pub fn lambda_max(m: &DMatrix<f64>) -> f64 {
    sym_eig_range(m).1
}

pub fn lambda_min(m: &DMatrix<f64>) -> f64 {
    sym_eig_range(m).0
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

pub fn max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}

pub fn is_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|x| x.is_finite())
}

pub fn from_rows(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let r = rows.len();
    let c = rows.first().map_or(0, |x| x.len());
    DMatrix::from_fn(r, c, |i, j| rows[i][j])
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_diag_places_blocks() {
        let a = DMatrix::from_element(1, 2, 1.0);
        let b = DMatrix::from_element(2, 1, 2.0);
        let d = block_diag(&[&a, &b]);
        assert_eq!(d.shape(), (3, 3));
        assert_eq!(d[(0, 1)], 1.0);
        assert_eq!(d[(2, 2)], 2.0);
        assert_eq!(d[(0, 2)], 0.0);
    }

    #[test]
    fn spectral_radius_of_rotation_is_one() {
        let r = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        assert!((spectral_radius(&r) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn stack_twice_shape() {
        let s = stack_twice(3);
        assert_eq!(s.shape(), (6, 3));
        assert_eq!(s[(4, 1)], 1.0);
    }
}
