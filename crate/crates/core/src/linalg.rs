//! Small dense linear algebra for symmetric/Hermitian positive-definite
//! matrices. Dimensions in this crate stay in the tens, so everything is
//! hand-rolled over `ndarray` storage: Cholesky factorization, triangular
//! solves, batched quadratic forms and a Jacobi eigensolver for tests.

use crate::{Error, Result, Scalar};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

/// Lower Cholesky factor of a symmetric/Hermitian positive-definite matrix.
pub fn cholesky<T: Scalar>(a: &ArrayView2<'_, T>) -> Result<Array2<T>> {
    let p = a.nrows();
    if a.ncols() != p {
        return Err(Error::Domain(format!(
            "cholesky requires a square matrix, got {}x{}",
            p,
            a.ncols()
        )));
    }
    let mut l = Array2::<T>::zeros((p, p));
    for j in 0..p {
        let mut d = a[(j, j)].re();
        for k in 0..j {
            d -= l[(j, k)].abs_sq();
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite(format!(
                "pivot {j} = {d:.3e} in Cholesky"
            )));
        }
        let djj = d.sqrt();
        l[(j, j)] = T::from_re(djj);
        for i in (j + 1)..p {
            let mut s = a[(i, j)];
            for k in 0..j {
                s = s - l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = s.scale(1.0 / djj);
        }
    }
    Ok(l)
}

/// Solve `L y = x` for lower-triangular `L`.
pub fn solve_lower<T: Scalar>(l: &ArrayView2<'_, T>, x: &ArrayView1<'_, T>) -> Array1<T> {
    let p = l.nrows();
    let mut y = Array1::<T>::zeros(p);
    for i in 0..p {
        let mut s = x[i];
        for k in 0..i {
            s = s - l[(i, k)] * y[k];
        }
        y[i] = s.scale(1.0 / l[(i, i)].re());
    }
    y
}

/// Quadratic forms `t_i = x_i^H Sigma^{-1} x_i` for every row of `x`, given
/// the lower Cholesky factor of `Sigma`. Batched forward substitution over
/// the contiguous rows of `x^T`.
pub fn quad_forms<T: Scalar>(chol: &ArrayView2<'_, T>, x: &ArrayView2<'_, T>) -> Vec<f64> {
    let (n, p) = x.dim();
    // p x n in standard layout so rows are contiguous
    let mut y = Array2::<T>::zeros((p, n));
    y.assign(&x.t());
    for j in 0..p {
        let (done, mut rest) = y.view_mut().split_at(ndarray::Axis(0), j);
        let mut row_j = rest.row_mut(0);
        let row_j = row_j.as_slice_mut().expect("contiguous row");
        for k in 0..j {
            let l = chol[(j, k)];
            if l == T::zero() {
                continue;
            }
            let row_k = done.row(k);
            let row_k = row_k.to_slice().expect("contiguous row");
            for (a, &b) in row_j.iter_mut().zip(row_k) {
                *a = *a - l * b;
            }
        }
        let inv = 1.0 / chol[(j, j)].re();
        for a in row_j.iter_mut() {
            *a = a.scale(inv);
        }
    }
    let mut t = vec![0.0; n];
    for j in 0..p {
        let row = y.row(j);
        let row = row.to_slice().expect("contiguous row");
        for (ti, &v) in t.iter_mut().zip(row) {
            *ti += v.abs_sq();
        }
    }
    t
}

/// Weighted Gram matrix `(1/n) sum_i w_i x_i x_i^H` over the rows of `x`.
/// Real weights keep the result Hermitian; it is symmetrized exactly.
pub fn weighted_gram<T: Scalar>(x: &ArrayView2<'_, T>, w: &[f64]) -> Array2<T> {
    let (n, p) = x.dim();
    debug_assert_eq!(w.len(), n);
    // M[j,k] = sum_i w_i X[i,j] conj(X[i,k]) = (X^T . Xc)[j,k]
    let mut xc = Array2::<T>::zeros((n, p));
    for ((mut out, row), &wi) in xc.rows_mut().into_iter().zip(x.rows()).zip(w) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o = v.conj().scale(wi);
        }
    }
    let mut m = x.t().dot(&xc.view());
    let inv_n = 1.0 / n as f64;
    // exact Hermitian symmetrization
    for j in 0..p {
        m[(j, j)] = T::from_re(m[(j, j)].re() * inv_n);
        for k in 0..j {
            let v = (m[(j, k)] + m[(k, j)].conj()).scale(0.5 * inv_n);
            m[(j, k)] = v;
            m[(k, j)] = v.conj();
        }
    }
    m
}

/// Trace (real part; exact for Hermitian input).
pub fn trace_re<T: Scalar>(a: &ArrayView2<'_, T>) -> f64 {
    a.diag().iter().map(|v| v.re()).sum()
}

/// `tr(A^2)` for Hermitian `A`, computed as the squared Frobenius norm.
pub fn trace_sq_hermitian<T: Scalar>(a: &ArrayView2<'_, T>) -> f64 {
    a.iter().map(|v| v.abs_sq()).sum()
}

/// Squared Frobenius norm.
pub fn fro_norm_sq<T: Scalar>(a: &ArrayView2<'_, T>) -> f64 {
    a.iter().map(|v| v.abs_sq()).sum()
}

/// Squared Frobenius norm of `a - b`.
pub fn fro_dist_sq<T: Scalar>(a: &ArrayView2<'_, T>, b: &ArrayView2<'_, T>) -> f64 {
    debug_assert_eq!(a.dim(), b.dim());
    a.iter().zip(b.iter()).map(|(&u, &v)| (u - v).abs_sq()).sum()
}

/// Maximum deviation from Hermitian symmetry, `max |A - A^H|`.
pub fn hermitian_defect<T: Scalar>(a: &ArrayView2<'_, T>) -> f64 {
    let p = a.nrows();
    let mut worst = 0.0f64;
    for j in 0..p {
        worst = worst.max(a[(j, j)].im().abs());
        for k in 0..j {
            let d = (a[(j, k)] - a[(k, j)].conj()).abs_sq().sqrt();
            worst = worst.max(d);
        }
    }
    worst
}

/// Scaled identity `c * I`.
pub fn scaled_eye<T: Scalar>(p: usize, c: f64) -> Array2<T> {
    let mut m = Array2::<T>::zeros((p, p));
    for j in 0..p {
        m[(j, j)] = T::from_re(c);
    }
    m
}

/// Eigenvalues and eigenvectors of a real symmetric matrix via cyclic Jacobi
/// rotations, ascending eigenvalue order. Test and validation use only.
pub fn sym_eigen(a: &ArrayView2<'_, f64>) -> Result<(Vec<f64>, Array2<f64>)> {
    let p = a.nrows();
    if a.ncols() != p {
        return Err(Error::Domain("sym_eigen requires a square matrix".into()));
    }
    let mut m = a.to_owned();
    let mut v = Array2::<f64>::eye(p);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..p {
            for j in (i + 1)..p {
                off += m[(i, j)] * m[(i, j)];
            }
        }
        if off.sqrt() < 1e-14 * (1.0 + fro_norm_sq(&m.view()).sqrt()) {
            break;
        }
        for i in 0..p {
            for j in (i + 1)..p {
                let apq = m[(i, j)];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (m[(j, j)] - m[(i, i)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..p {
                    let mik = m[(i, k)];
                    let mjk = m[(j, k)];
                    m[(i, k)] = c * mik - s * mjk;
                    m[(j, k)] = s * mik + c * mjk;
                }
                for k in 0..p {
                    let mki = m[(k, i)];
                    let mkj = m[(k, j)];
                    m[(k, i)] = c * mki - s * mkj;
                    m[(k, j)] = s * mki + c * mkj;
                }
                for k in 0..p {
                    let vki = v[(k, i)];
                    let vkj = v[(k, j)];
                    v[(k, i)] = c * vki - s * vkj;
                    v[(k, j)] = s * vki + c * vkj;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&i, &j| m[(i, i)].partial_cmp(&m[(j, j)]).unwrap());
    let eigvals: Vec<f64> = order.iter().map(|&i| m[(i, i)]).collect();
    let mut eigvecs = Array2::<f64>::zeros((p, p));
    for (col, &src) in order.iter().enumerate() {
        for k in 0..p {
            eigvecs[(k, col)] = v[(k, src)];
        }
    }
    Ok((eigvals, eigvecs))
}
