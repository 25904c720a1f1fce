//! Small dense linear-algebra helpers.
//!
//! Symmetric eigenvalues come from a cyclic Jacobi sweep; it is deterministic
//! and plenty fast for the matrix sizes this crate works with (n up to ~50).

use nalgebra::{DMatrix, DVector};

const JACOBI_MAX_SWEEPS: usize = 100;

/// Eigenvalues of a symmetric matrix in ascending order.
///
/// Only the upper triangle is trusted; the input is symmetrized first.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    assert!(m.is_square(), "eigenvalues need a square matrix");
    let n = m.nrows();
    if n == 0 {
        return Vec::new();
    }
    let mut a = (m + m.transpose()) * 0.5;
    let scale = a.norm().max(f64::MIN_POSITIVE);

    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[(p, q)] * a[(p, q)];
            }
        }
        if off.sqrt() <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                rotate(&mut a, p, q, c, s);
            }
        }
    }

    let mut eig: Vec<f64> = (0..n).map(|k| a[(k, k)]).collect();
    eig.sort_by(|x, y| x.total_cmp(y));
    eig
}

// Applies J^T A J for the Givens rotation J acting on the (p, q) plane.
fn rotate(a: &mut DMatrix<f64>, p: usize, q: usize, c: f64, s: f64) {
    let n = a.nrows();
    for k in 0..n {
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        a[(k, p)] = c * akp - s * akq;
        a[(k, q)] = s * akp + c * akq;
    }
    for k in 0..n {
        let apk = a[(p, k)];
        let aqk = a[(q, k)];
        a[(p, k)] = c * apk - s * aqk;
        a[(q, k)] = s * apk + c * aqk;
    }
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    symmetric_eigenvalues(m).first().copied().unwrap_or(0.0)
}

pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    symmetric_eigenvalues(m).last().copied().unwrap_or(0.0)
}

/// Operator 2-norm, `sqrt(λ_max(MᵀM))`.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    max_eigenvalue(&(m.transpose() * m)).max(0.0).sqrt()
}

/// Orthonormal basis of the null space of `m`.
pub fn null_space(m: &DMatrix<f64>, tol: f64) -> Vec<DVector<f64>> {
    let cols = m.ncols();
    if cols == 0 {
        return Vec::new();
    }
    if m.nrows() == 0 {
        return (0..cols).map(|k| unit(cols, k)).collect();
    }
    // Pad to at least square so the SVD exposes a full right basis.
    let rows = m.nrows().max(cols);
    let mut padded = DMatrix::zeros(rows, cols);
    padded.view_mut((0, 0), (m.nrows(), cols)).copy_from(m);
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let smax = svd.singular_values.max().max(1.0);
    svd.singular_values
        .iter()
        .enumerate()
        .filter(|(_, s)| **s <= tol * smax)
        .map(|(k, _)| v_t.row(k).transpose().normalize())
        .collect()
}

pub fn rank(m: &DMatrix<f64>, tol: f64) -> usize {
    m.ncols() - null_space(m, tol).len()
}

pub fn unit(n: usize, k: usize) -> DVector<f64> {
    let mut e = DVector::zeros(n);
    e[k] = 1.0;
    e
}

/// Stacks row vectors into a matrix with `cols` columns.
pub fn stack_rows(rows: &[DVector<f64>], cols: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows.len(), cols);
    for (r, row) in rows.iter().enumerate() {
        m.row_mut(r).copy_from(&row.transpose());
    }
    m
}

/// Number of k-subsets of an m-set, saturating.
pub fn binomial(m: usize, k: usize) -> u128 {
    if k > m {
        return 0;
    }
    let k = k.min(m - k);
    let mut acc: u128 = 1;
    for j in 0..k {
        acc = acc.saturating_mul((m - j) as u128) / (j as u128 + 1);
    }
    acc
}

/// Visits every k-subset of `0..m` in lexicographic order.
pub fn for_each_subset(m: usize, k: usize, mut visit: impl FnMut(&[usize])) {
    if k > m {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        visit(&idx);
        let mut j = k;
        while j > 0 && idx[j - 1] == m - k + j - 1 {
            j -= 1;
        }
        if j == 0 {
            return;
        }
        idx[j - 1] += 1;
        for t in j..k {
            idx[t] = idx[t - 1] + 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn jacobi_two_by_two_by_hand() {
        // [[1, .5], [.5, 1]] has eigenvalues 0.5 and 1.5.
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let e = symmetric_eigenvalues(&m);
        assert_abs_diff_eq!(e[0], 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(e[1], 1.5, epsilon = 1e-14);
    }

    #[test]
    fn jacobi_agrees_with_nalgebra() {
        let m = DMatrix::from_row_slice(
            4,
            4,
            &[
                4.0, 1.0, -2.0, 0.5, 1.0, 3.0, 0.0, -1.0, -2.0, 0.0, 5.0, 2.0, 0.5, -1.0, 2.0, 1.0,
            ],
        );
        let mut reference: Vec<f64> = m.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
        reference.sort_by(|a, b| a.total_cmp(b));
        let mine = symmetric_eigenvalues(&m);
        for (a, b) in mine.iter().zip(&reference) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-11);
        }
    }

    #[test]
    fn null_space_of_single_row() {
        let m = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let ns = null_space(&m, 1e-10);
        assert_eq!(ns.len(), 1);
        assert_abs_diff_eq!(ns[0].dot(&DVector::from_vec(vec![1.0, 1.0])), 0.0, epsilon = 1e-14);
        assert_eq!(rank(&m, 1e-10), 1);
    }

    #[test]
    fn subsets_are_enumerated_once() {
        let mut seen = Vec::new();
        for_each_subset(5, 3, |s| seen.push(s.to_vec()));
        assert_eq!(seen.len() as u128, binomial(5, 3));
        assert_eq!(seen.first().unwrap(), &vec![0, 1, 2]);
        assert_eq!(seen.last().unwrap(), &vec![2, 3, 4]);
        let mut empty = 0;
        for_each_subset(3, 0, |_| empty += 1);
        assert_eq!(empty, 1);
    }
}
