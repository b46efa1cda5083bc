//! Sinkhorn-Knopp scaling of a positive matrix to doubly stochastic form.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Outcome of `R = diag(out_scale) · A · diag(in_scale)`.
#[derive(Clone, Debug)]
pub struct SinkhornScaling {
    /// Scale on the columns (input modes), normalized so `in_scale[0] = 1`.
    pub in_scale: DVector<f64>,
    /// Doubly stochastic core.
    pub stochastic: DMatrix<f64>,
    /// Scale on the rows (output modes).
    pub out_scale: DVector<f64>,
    pub iterations: usize,
    /// Largest |row sum - 1| or |column sum - 1| at exit.
    pub residual: f64,
}

fn marginal_residual(a: &DMatrix<f64>) -> f64 {
    let rows = a.row_iter().map(|r| (r.sum() - 1.0).abs());
    let cols = a.column_iter().map(|c| (c.sum() - 1.0).abs());
    rows.chain(cols).fold(0.0, f64::max)
}

/// Alternating row/column normalization until every marginal is within `tol` of 1.
pub fn sinkhorn_knopp(r: &DMatrix<f64>, tol: f64, max_iter: usize) -> Result<SinkhornScaling> {
    let n = r.nrows();
    if n == 0 || r.ncols() != n {
        return Err(Error::InvalidDimension(format!("{}x{} matrix", r.nrows(), r.ncols())));
    }
    if r.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidData("Sinkhorn scaling needs strictly positive entries".into()));
    }
    // rows: out, cols: in; A = diag(1/out) R diag(1/in)
    let mut out_scale = DVector::from_element(n, 1.0);
    let mut in_scale = DVector::from_element(n, 1.0);
    let mut a = r.clone();
    let mut residual = marginal_residual(&a);
    let mut iterations = 0;
    while residual > tol {
        if iterations >= max_iter {
            return Err(Error::SinkhornNotConverged { iterations, residual });
        }
        for row in 0..n {
            let s = a.row(row).sum();
            out_scale[row] *= s;
            a.row_mut(row).scale_mut(1.0 / s);
        }
        for col in 0..n {
            let s = a.column(col).sum();
            in_scale[col] *= s;
            a.column_mut(col).scale_mut(1.0 / s);
        }
        iterations += 1;
        residual = marginal_residual(&a);
    }
    let norm = in_scale[0];
    in_scale /= norm;
    out_scale *= norm;
    Ok(SinkhornScaling {
        in_scale,
        stochastic: a,
        out_scale,
        iterations,
        residual,
    })
}

/// Replace entries below `rel_floor · max(R)` by that floor; returns the count.
pub fn floor_entries(r: &mut DMatrix<f64>, rel_floor: f64) -> usize {
    let max = r.iter().copied().fold(0.0, f64::max);
    let floor = rel_floor * max;
    let mut count = 0;
    for v in r.iter_mut() {
        if !(*v >= floor) {
            *v = floor;
            count += 1;
        }
    }
    count
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::haar_random_unitary;

    #[test]
    fn doubly_stochastic_is_fixed_point() {
        let a = haar_random_unitary(5, 1).unwrap().power();
        let s = sinkhorn_knopp(&a, 1e-12, 1000).unwrap();
        for k in 0..5 {
            assert!((s.in_scale[k] - 1.0).abs() < 1e-10);
            assert!((s.out_scale[k] - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn recovers_known_scalings() {
        let a = haar_random_unitary(6, 2).unwrap().power();
        let d_in = DVector::from_vec(vec![0.9, 0.6, 0.75, 1.0, 0.55, 0.8]);
        let d_out = DVector::from_vec(vec![0.7, 1.0, 0.95, 0.85, 0.6, 0.65]);
        let r = DMatrix::from_fn(6, 6, |i, j| d_out[i] * a[(i, j)] * d_in[j]);
        let s = sinkhorn_knopp(&r, 1e-13, 100_000).unwrap();
        // one global scalar is free; in_scale[0] = 1 fixes it
        let lam = d_in[0];
        for k in 0..6 {
            assert!((s.in_scale[k] * lam - d_in[k]).abs() < 1e-8);
            assert!((s.out_scale[k] / lam - d_out[k]).abs() < 1e-8);
        }
        let rebuilt = DMatrix::from_fn(6, 6, |i, j| s.out_scale[i] * s.stochastic[(i, j)] * s.in_scale[j]);
        assert!((rebuilt - r).amax() < 1e-12);
    }

    #[test]
    fn two_by_two_example() {
        // Row/column normalization of [[4,1],[1,4]]/c in closed form: [[0.8,0.2],[0.2,0.8]].
        let r = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 4.0]) / 7.0;
        let s = sinkhorn_knopp(&r, 1e-12, 100).unwrap();
        assert!(s.residual <= 1e-10);
        assert!((s.stochastic[(0, 0)] - 0.8).abs() < 1e-12);
        assert!((s.stochastic[(0, 1)] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn reports_non_convergence() {
        let r = DMatrix::from_row_slice(2, 2, &[1.0, 1e-9, 1e-9, 1.0]) + DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 5.0, 0.0]);
        match sinkhorn_knopp(&r, 1e-15, 1) {
            Err(Error::SinkhornNotConverged { iterations, residual }) => {
                assert_eq!(iterations, 1);
                assert!(residual > 0.0);
            }
            other => panic!("expected failure, got {other:?}"),
        }
        assert!(sinkhorn_knopp(&DMatrix::zeros(2, 2), 1e-9, 10).is_err());
    }

    #[test]
    fn flooring_counts_entries() {
        let mut r = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.5, 0.0]);
        assert_eq!(floor_entries(&mut r, 1e-9), 2);
        assert_eq!(r[(0, 1)], 1e-9);
    }
}
