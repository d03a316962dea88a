//! Cache-blocked and unrolled variants (the `cpu_opt` backend).
//!
//! MMM, SMMM, EWMM, EWMD and 1DConv keep the per-element summation order of
//! the naive loops and so agree bit for bit; VDP, MVM and Jacobi use four
//! accumulators and differ only by reassociation.

use crate::check;
use crate::matrix::{CsrRef, DenseMatrix, MatRef};
use crate::KernelError;

const BLOCK_K: usize = 64;
const BLOCK_N: usize = 256;

pub fn mmm<'a>(a: impl Into<MatRef<'a>>, b: impl Into<MatRef<'a>>) -> Result<DenseMatrix, KernelError> {
    let (a, b) = (a.into(), b.into());
    check::inner(&a, &b)?;
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let (ad, bd) = (a.data(), b.data());
    let mut c = vec![0.0; m * n];
    for jb in (0..n).step_by(BLOCK_N) {
        let je = (jb + BLOCK_N).min(n);
        for lb in (0..k).step_by(BLOCK_K) {
            let le = (lb + BLOCK_K).min(k);
            for i in 0..m {
                let crow = &mut c[i * n + jb..i * n + je];
                let arow = &ad[i * k..(i + 1) * k];
                for l in lb..le {
                    let s = arow[l];
                    let brow = &bd[l * n + jb..l * n + je];
                    for (cv, &bv) in crow.iter_mut().zip(brow) {
                        *cv += s * bv;
                    }
                }
            }
        }
    }
    DenseMatrix::new(m, n, c)
}

pub fn ewmm<'a>(a: impl Into<MatRef<'a>>, b: impl Into<MatRef<'a>>) -> Result<DenseMatrix, KernelError> {
    let (a, b) = (a.into(), b.into());
    check::same_shape(&a, &b)?;
    let c = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    DenseMatrix::new(a.rows(), a.cols(), c)
}

pub fn ewmd<'a>(a: impl Into<MatRef<'a>>, b: impl Into<MatRef<'a>>) -> Result<DenseMatrix, KernelError> {
    let (a, b) = (a.into(), b.into());
    check::same_shape(&a, &b)?;
    let c = a.data().iter().zip(b.data()).map(|(x, y)| x / y).collect();
    DenseMatrix::new(a.rows(), a.cols(), c)
}

pub fn smmm<'a>(a: impl Into<CsrRef<'a>>, b: impl Into<MatRef<'a>>) -> Result<DenseMatrix, KernelError> {
    let (a, b) = (a.into(), b.into());
    check::sparse_inner(&a, &b)?;
    let (m, n) = (a.rows(), b.cols());
    let bd = b.data();
    let mut c = vec![0.0; m * n];
    for (i, crow) in c.chunks_exact_mut(n.max(1)).enumerate().take(m) {
        let (cols, vals) = a.row(i);
        for (&l, &v) in cols.iter().zip(vals) {
            for (cv, &bv) in crow.iter_mut().zip(&bd[l * n..(l + 1) * n]) {
                *cv += v * bv;
            }
        }
    }
    DenseMatrix::new(m, n, c)
}

#[inline]
fn dot4(x: &[f64], y: &[f64]) -> f64 {
    let mut s = [0.0f64; 4];
    let xc = x.chunks_exact(4);
    let yc = y.chunks_exact(4);
    let (xr, yr) = (xc.remainder(), yc.remainder());
    for (a, b) in xc.zip(yc) {
        s[0] += a[0] * b[0];
        s[1] += a[1] * b[1];
        s[2] += a[2] * b[2];
        s[3] += a[3] * b[3];
    }
    let mut tail = 0.0;
    for (a, b) in xr.iter().zip(yr) {
        tail += a * b;
    }
    (s[0] + s[1]) + (s[2] + s[3]) + tail
}

pub fn mvm<'a>(a: impl Into<MatRef<'a>>, x: &[f64]) -> Result<Vec<f64>, KernelError> {
    let a = a.into();
    check::matvec(&a, x)?;
    Ok((0..a.rows()).map(|i| dot4(a.row(i), x)).collect())
}

pub fn vdp(x: &[f64], y: &[f64]) -> Result<f64, KernelError> {
    check::same_len(x, y)?;
    Ok(dot4(x, y))
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
    let mut x = vec![0.0; n];
    let mut next = vec![0.0; n];
    for _ in 0..iters {
        let mut delta: f64 = 0.0;
        for i in 0..n {
            let row = a.row(i);
            let s = dot4(&row[..i], &x[..i]) + dot4(&row[i + 1..], &x[i + 1..]);
            next[i] = (b[i] - s) / row[i];
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
    for (j, &w) in kernel.iter().enumerate() {
        let shift = j as isize - half;
        let lo = (-shift).clamp(0, n);
        let hi = (n - shift).clamp(0, n);
        if lo >= hi {
            continue;
        }
        let dst = &mut out[lo as usize..hi as usize];
        let src = &signal[(lo + shift) as usize..(hi + shift) as usize];
        for (o, &s) in dst.iter_mut().zip(src) {
            *o += s * w;
        }
    }
    Ok(out)
}
