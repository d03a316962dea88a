//! Straightforward loop nests. These double as the fail-safe implementations
//! and as the `cpu_naive` backend.

use crate::check;
use crate::matrix::{CsrRef, DenseMatrix, MatRef};
use crate::KernelError;

pub fn mmm<'a>(a: impl Into<MatRef<'a>>, b: impl Into<MatRef<'a>>) -> Result<DenseMatrix, KernelError> {
    let (a, b) = (a.into(), b.into());
    check::inner(&a, &b)?;
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let (ad, bd) = (a.data(), b.data());
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for l in 0..k {
                acc += ad[i * k + l] * bd[l * n + j];
            }
            c[i * n + j] = acc;
        }
    }
    DenseMatrix::new(m, n, c)
}

pub fn ewmm<'a>(a: impl Into<MatRef<'a>>, b: impl Into<MatRef<'a>>) -> Result<DenseMatrix, KernelError> {
    let (a, b) = (a.into(), b.into());
    check::same_shape(&a, &b)?;
    let (ad, bd) = (a.data(), b.data());
    let mut c = vec![0.0; ad.len()];
    for i in 0..ad.len() {
        c[i] = ad[i] * bd[i];
    }
    DenseMatrix::new(a.rows(), a.cols(), c)
}

pub fn ewmd<'a>(a: impl Into<MatRef<'a>>, b: impl Into<MatRef<'a>>) -> Result<DenseMatrix, KernelError> {
    let (a, b) = (a.into(), b.into());
    check::same_shape(&a, &b)?;
    let (ad, bd) = (a.data(), b.data());
    let mut c = vec![0.0; ad.len()];
    for i in 0..ad.len() {
        c[i] = ad[i] / bd[i];
    }
    DenseMatrix::new(a.rows(), a.cols(), c)
}

pub fn smmm<'a>(a: impl Into<CsrRef<'a>>, b: impl Into<MatRef<'a>>) -> Result<DenseMatrix, KernelError> {
    let (a, b) = (a.into(), b.into());
    check::sparse_inner(&a, &b)?;
    let (m, n) = (a.rows(), b.cols());
    let bd = b.data();
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let (cols, vals) = a.row(i);
        for j in 0..n {
            let mut acc = 0.0;
            for p in 0..cols.len() {
                acc += vals[p] * bd[cols[p] * n + j];
            }
            c[i * n + j] = acc;
        }
    }
    DenseMatrix::new(m, n, c)
}

pub fn mvm<'a>(a: impl Into<MatRef<'a>>, x: &[f64]) -> Result<Vec<f64>, KernelError> {
    let a = a.into();
    check::matvec(&a, x)?;
    let n = a.cols();
    let ad = a.data();
    let mut y = vec![0.0; a.rows()];
    for i in 0..a.rows() {
        let mut acc = 0.0;
        for j in 0..n {
            acc += ad[i * n + j] * x[j];
        }
        y[i] = acc;
    }
    Ok(y)
}

pub fn vdp(x: &[f64], y: &[f64]) -> Result<f64, KernelError> {
    check::same_len(x, y)?;
    let mut acc = 0.0;
    for i in 0..x.len() {
        acc += x[i] * y[i];
    }
    Ok(acc)
}

pub fn jacobi<'a>(
    a: impl Into<MatRef<'a>>,
    b: &[f64],
    iters: usize,
    tol: f64,
) -> Result<Vec<f64>, KernelError> {
    let a = a.into();
    check::jacobi(&a, b)?;
    let n = b.len();
    let ad = a.data();
    let mut x = vec![0.0; n];
    let mut next = vec![0.0; n];
    for _ in 0..iters {
        let mut delta: f64 = 0.0;
        for i in 0..n {
            let mut s = 0.0;
            for j in 0..n {
                if j != i {
                    s += ad[i * n + j] * x[j];
                }
            }
            next[i] = (b[i] - s) / ad[i * n + i];
            delta = delta.max((next[i] - x[i]).abs());
        }
        std::mem::swap(&mut x, &mut next);
        if delta < tol {
            break;
        }
    }
    Ok(x)
}

pub fn conv1d(signal: &[f64], kernel: &[f64]) -> Result<Vec<f64>, KernelError> {
    check::conv(kernel)?;
    let n = signal.len() as isize;
    let half = (kernel.len() / 2) as isize;
    let mut out = vec![0.0; signal.len()];
    for i in 0..n {
        let mut acc = 0.0;
        for (j, &w) in kernel.iter().enumerate() {
            let s = i + j as isize - half;
            if s >= 0 && s < n {
                acc += signal[s as usize] * w;
            }
        }
        out[i as usize] = acc;
    }
    Ok(out)
}
