//! Brute-force reference implementations and random instance generators.
//!
//! The references work on nested `Vec<Vec<f64>>` and never call into the
//! crate under test. Each returns the expected values together with the
//! matching sum of absolute terms, which bounds reassociation error.

#![allow(dead_code)]

use halo_kernels::{CsrMatrix, DenseMatrix, Kernel, Variant};
use rand::Rng;

pub type Rows = Vec<Vec<f64>>;

pub fn to_rows(m: &DenseMatrix) -> Rows {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

pub fn densify(a: &CsrMatrix) -> Rows {
    let mut d = vec![vec![0.0; a.cols()]; a.rows()];
    for i in 0..a.rows() {
        for p in a.row_ptr()[i]..a.row_ptr()[i + 1] {
            d[i][a.col_idx()[p]] = a.values()[p];
        }
    }
    d
}

/// Returns (C, |A|·|B|).
pub fn matmul(a: &Rows, b: &Rows) -> (Rows, Rows) {
    let n = b.first().map_or(0, |r| r.len());
    let mut c = vec![vec![0.0; n]; a.len()];
    let mut s = vec![vec![0.0; n]; a.len()];
    for i in 0..a.len() {
        for j in 0..n {
            for (l, brow) in b.iter().enumerate() {
                c[i][j] += a[i][l] * brow[j];
                s[i][j] += (a[i][l] * brow[j]).abs();
            }
        }
    }
    (c, s)
}

pub fn dot(x: &[f64], y: &[f64]) -> (f64, f64) {
    let mut v = 0.0;
    let mut s = 0.0;
    for i in 0..x.len() {
        v += x[i] * y[i];
        s += (x[i] * y[i]).abs();
    }
    (v, s)
}

/// Jacobi sweeps written directly from the update formula, plus the same
/// recurrence on absolute values as the error scale.
pub fn jacobi(a: &Rows, b: &[f64], iters: usize) -> (Vec<f64>, Vec<f64>) {
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut xa = vec![0.0; n];
    for _ in 0..iters {
        let mut nx = vec![0.0; n];
        let mut nxa = vec![0.0; n];
        for i in 0..n {
            let mut off = 0.0;
            let mut offa = 0.0;
            for j in 0..n {
                if j != i {
                    off += a[i][j] * x[j];
                    offa += (a[i][j] * xa[j]).abs();
                }
            }
            nx[i] = (b[i] - off) / a[i][i];
            nxa[i] = (b[i].abs() + offa) / a[i][i].abs();
        }
        x = nx;
        xa = nxa;
    }
    (x, xa)
}

/// Explicit zero padding, then a sliding window.
pub fn conv(signal: &[f64], kernel: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let half = kernel.len() / 2;
    let mut padded = vec![0.0; half];
    padded.extend_from_slice(signal);
    padded.resize(signal.len() + kernel.len(), 0.0);
    let mut out = Vec::new();
    let mut scale = Vec::new();
    for i in 0..signal.len() {
        let (v, s) = dot(&padded[i..i + kernel.len()], kernel);
        out.push(v);
        scale.push(s);
    }
    (out, scale)
}

pub fn residual_inf(a: &Rows, x: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(row, bi)| (dot(row, x).0 - bi).abs())
        .fold(0.0, f64::max)
}

fn uniform(rng: &mut impl Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-1.0..=1.0)).collect()
}

pub fn random_dense(rng: &mut impl Rng, rows: usize, cols: usize) -> DenseMatrix {
    DenseMatrix::new(rows, cols, uniform(rng, rows * cols)).unwrap()
}

pub fn random_csr(rng: &mut impl Rng, rows: usize, cols: usize, density: f64) -> CsrMatrix {
    let mut d = DenseMatrix::zeros(rows, cols);
    for v in d.data_mut() {
        if rng.gen_bool(density) {
            *v = rng.gen_range(-1.0..=1.0);
        }
    }
    CsrMatrix::from_dense(&d)
}

/// Strictly diagonally dominant: off-diagonals in [-1, 1], diagonal
/// magnitude in [n, 2n] with random sign.
pub fn random_sdd(rng: &mut impl Rng, n: usize) -> DenseMatrix {
    let mut a = random_dense(rng, n, n);
    for i in 0..n {
        let mag = rng.gen_range(n as f64..=2.0 * n as f64);
        a.data_mut()[i * n + i] = if rng.gen_bool(0.5) { mag } else { -mag };
    }
    a
}

pub enum Inputs {
    Dense(DenseMatrix, DenseMatrix),
    Sparse(CsrMatrix, DenseMatrix),
    Vectors(Vec<f64>, Vec<f64>),
    MatVec(DenseMatrix, Vec<f64>),
    Jacobi(DenseMatrix, Vec<f64>, usize),
}

pub struct Case {
    pub kernel: Kernel,
    pub inputs: Inputs,
}

pub fn random_case(kernel: Kernel, rng: &mut impl Rng, max_dim: usize) -> Case {
    let mut d = || rng.gen_range(1..=max_dim);
    let (p, q, r) = (d(), d(), d());
    let inputs = match kernel {
        Kernel::Mmm => Inputs::Dense(random_dense(rng, p, q), random_dense(rng, q, r)),
        Kernel::Ewmm | Kernel::Ewmd => Inputs::Dense(random_dense(rng, p, q), random_dense(rng, p, q)),
        Kernel::Smmm => {
            let density = rng.gen_range(0.0..=0.5);
            Inputs::Sparse(random_csr(rng, p, q, density), random_dense(rng, q, r))
        }
        Kernel::Vdp => Inputs::Vectors(uniform(rng, p), uniform(rng, p)),
        Kernel::Conv1d => Inputs::Vectors(uniform(rng, p), uniform(rng, q.min(17))),
        Kernel::Mvm => Inputs::MatVec(random_dense(rng, p, q), uniform(rng, q)),
        Kernel::Js => {
            let iters = rng.gen_range(1..=30);
            Inputs::Jacobi(random_sdd(rng, p), uniform(rng, p), iters)
        }
    };
    Case { kernel, inputs }
}

impl Case {
    pub fn run(&self, v: Variant) -> Vec<f64> {
        match (&self.inputs, self.kernel) {
            (Inputs::Dense(a, b), Kernel::Mmm) => v.mmm(a, b).unwrap().into_data(),
            (Inputs::Dense(a, b), Kernel::Ewmm) => v.ewmm(a, b).unwrap().into_data(),
            (Inputs::Dense(a, b), Kernel::Ewmd) => v.ewmd(a, b).unwrap().into_data(),
            (Inputs::Sparse(a, b), _) => v.smmm(a, b).unwrap().into_data(),
            (Inputs::Vectors(x, y), Kernel::Vdp) => vec![v.vdp(x, y).unwrap()],
            (Inputs::Vectors(s, k), _) => v.conv1d(s, k).unwrap(),
            (Inputs::MatVec(a, x), _) => v.mvm(a, x).unwrap(),
            (Inputs::Jacobi(a, b, it), _) => v.jacobi(a, b, *it, 0.0).unwrap(),
            _ => unreachable!(),
        }
    }

    /// Expected values and per-element error scale.
    pub fn oracle(&self) -> (Vec<f64>, Vec<f64>) {
        match (&self.inputs, self.kernel) {
            (Inputs::Dense(a, b), Kernel::Mmm) => {
                let (c, s) = matmul(&to_rows(a), &to_rows(b));
                (c.concat(), s.concat())
            }
            (Inputs::Dense(a, b), k) => a
                .data()
                .iter()
                .zip(b.data())
                .map(|(x, y)| {
                    let v = if k == Kernel::Ewmm { x * y } else { x / y };
                    (v, v.abs())
                })
                .unzip(),
            (Inputs::Sparse(a, b), _) => {
                let (c, s) = matmul(&densify(a), &to_rows(b));
                (c.concat(), s.concat())
            }
            (Inputs::Vectors(x, y), Kernel::Vdp) => {
                let (v, s) = dot(x, y);
                (vec![v], vec![s])
            }
            (Inputs::Vectors(s, k), _) => conv(s, k),
            (Inputs::MatVec(a, x), _) => to_rows(a).iter().map(|r| dot(r, x)).unzip(),
            (Inputs::Jacobi(a, b, it), _) => jacobi(&to_rows(a), b, *it),
        }
    }
}

/// `|got - want| <= rel * max(|want|, scale)` elementwise; non-finite
/// expectations must match exactly.
pub fn check_close(got: &[f64], want: &[f64], scale: &[f64], rel: f64) -> Result<(), String> {
    if got.len() != want.len() {
        return Err(format!("length {} != {}", got.len(), want.len()));
    }
    for i in 0..got.len() {
        let (g, w) = (got[i], want[i]);
        if !w.is_finite() {
            if !(g == w || (g.is_nan() && w.is_nan())) {
                return Err(format!("[{i}]: got {g}, want {w}"));
            }
            continue;
        }
        let bound = rel * w.abs().max(scale[i]);
        if (g - w).abs() > bound {
            return Err(format!("[{i}]: got {g:e}, want {w:e}, bound {bound:e}"));
        }
    }
    Ok(())
}
