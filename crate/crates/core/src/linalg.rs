//! Dense solvers used by the warp and PCA code: LU with partial pivoting and a cyclic
//! Jacobi eigensolver for symmetric matrices.

use ndarray::{Array1, Array2, Axis};

use crate::{Error, Result, Scalar};

/// Solves `a · x = b` for every column of `b`.
///
/// Fails with [`Error::Singular`] when a pivot falls below `n · eps · max|a|`.
pub fn lu_solve<T: Scalar>(a: &Array2<T>, b: &Array2<T>) -> Result<Array2<T>> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n {
        return Err(Error::invalid(format!("lu_solve: shape mismatch {:?} vs {:?}", a.dim(), b.dim())));
    }
    let mut lu = a.clone();
    let mut x = b.clone();
    let scale = lu.iter().fold(T::zero(), |m, &v| m.max(v.abs()));
    let tol = T::epsilon() * T::from_usize_lossy(n.max(1)) * scale;
    for col in 0..n {
        let (pivot_row, pivot_abs) =
            (col..n)
                .map(|r| (r, lu[[r, col]].abs()))
                .fold((col, T::zero()), |best, cur| if cur.1 > best.1 { cur } else { best });
        if pivot_abs <= tol || pivot_abs == T::zero() {
            return Err(Error::Singular(format!("pivot {col} is {pivot_abs} (tolerance {tol})")));
        }
        if pivot_row != col {
            for j in 0..n {
                lu.swap([col, j], [pivot_row, j]);
            }
            for j in 0..x.ncols() {
                x.swap([col, j], [pivot_row, j]);
            }
        }
        let pivot = lu[[col, col]];
        for r in (col + 1)..n {
            let factor = lu[[r, col]] / pivot;
            if factor == T::zero() {
                continue;
            }
            lu[[r, col]] = factor;
            for j in (col + 1)..n {
                let v = lu[[col, j]];
                lu[[r, j]] -= factor * v;
            }
            for j in 0..x.ncols() {
                let v = x[[col, j]];
                x[[r, j]] -= factor * v;
            }
        }
    }
    for col in (0..n).rev() {
        let pivot = lu[[col, col]];
        for j in 0..x.ncols() {
            let mut acc = x[[col, j]];
            for k in (col + 1)..n {
                acc -= lu[[col, k]] * x[[k, j]];
            }
            x[[col, j]] = acc / pivot;
        }
    }
    Ok(x)
}

/// Eigen-decomposition of a symmetric matrix.
///
/// Returns eigenvalues sorted in descending order and the matching unit eigenvectors as
/// columns.
pub fn symmetric_eigen<T: Scalar>(a: &Array2<T>) -> (Array1<T>, Array2<T>) {
    let n = a.nrows();
    let mut m = a.clone();
    let mut v = Array2::<T>::eye(n);
    let two = T::lit(2.0);
    for _sweep in 0..100 {
        let off: T = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[[i, j]] * m[[i, j]])
            .sum();
        let diag: T = (0..n).map(|i| m[[i, i]] * m[[i, i]]).sum();
        if off <= T::epsilon() * T::epsilon() * diag || off == T::zero() {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                if apq == T::zero() {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (two * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[[j, j]].partial_cmp(&m[[i, i]]).unwrap_or(std::cmp::Ordering::Equal).then(i.cmp(&j)));
    let values = Array1::from_iter(order.iter().map(|&i| m[[i, i]]));
    let vectors = v.select(Axis(1), &order);
    (values, vectors)
}
