//! Kernel inputs sized from a working-set size.
//!
//! The working set counts every array a kernel reads or writes, in bytes:
//!
//! | kernel         | dimensions          | working set          |
//! |----------------|---------------------|----------------------|
//! | MMM, EWMM, EWMD| n×n, n×n → n×n      | 24·n²                |
//! | SMMM           | 1% CSR n×n, n×n → n×n | 16.16·n² (+8n)     |
//! | MVM, JS        | n×n, n → n          | 8·n² (+16n)          |
//! | VDP            | n, n → 1            | 16·n                 |
//! | 1DConv         | n, 33 → n           | 16·n (+264)          |
//!
//! so `n = ⌊√(WSS/24)⌋` for the dense matrix kernels and so on. JS runs
//! [`JACOBI_SWEEPS`] sweeps with the tolerance test disabled.

use std::time::{Duration, Instant};

use halo_kernels::{CsrMatrix, DenseMatrix, Kernel, Variant};
use halo_runtime::{Argument, HaloError, MemRegion, Result, Scalar};
use rand::{rngs::StdRng, Rng, SeedableRng};

pub const SPARSE_DENSITY: f64 = 0.01;
pub const JACOBI_SWEEPS: u64 = 10;
pub const CONV_TAPS: usize = 33;

/// One kernel invocation's inputs.
#[derive(Debug, Clone)]
pub enum Input {
    /// MMM, EWMM or EWMD.
    Dense(Kernel, DenseMatrix, DenseMatrix),
    Sparse(CsrMatrix, DenseMatrix),
    Dot(Vec<f64>, Vec<f64>),
    Conv(Vec<f64>, Vec<f64>),
    MatVec(DenseMatrix, Vec<f64>),
    Jacobi {
        a: DenseMatrix,
        b: Vec<f64>,
        sweeps: u64,
        tol: f64,
    },
}

/// Dimension `n` for `kernel` at `wss` bytes.
pub fn dimension(kernel: Kernel, wss: u64) -> usize {
    let w = wss as f64;
    let n = match kernel {
        Kernel::Mmm | Kernel::Ewmm | Kernel::Ewmd => (w / 24.0).sqrt(),
        Kernel::Smmm => (w / (16.0 + 16.0 * SPARSE_DENSITY)).sqrt(),
        Kernel::Mvm | Kernel::Js => (w / 8.0).sqrt(),
        Kernel::Vdp | Kernel::Conv1d => w / 16.0,
    };
    (n as usize).max(2)
}

fn uniform(rng: &mut StdRng, len: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(lo..hi)).collect()
}

fn dense(rng: &mut StdRng, rows: usize, cols: usize) -> DenseMatrix {
    DenseMatrix::new(rows, cols, uniform(rng, rows * cols, -1.0, 1.0)).expect("sized to fit")
}

fn sparse(rng: &mut StdRng, n: usize, density: f64) -> CsrMatrix {
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut col_idx = Vec::new();
    let mut values = Vec::new();
    row_ptr.push(0);
    let per_row = ((n as f64 * density).round() as usize).clamp(1, n);
    for _ in 0..n {
        let mut cols: Vec<usize> = (0..per_row).map(|_| rng.gen_range(0..n)).collect();
        cols.sort_unstable();
        cols.dedup();
        for c in cols {
            col_idx.push(c);
            values.push(rng.gen_range(-1.0..1.0));
        }
        row_ptr.push(col_idx.len());
    }
    CsrMatrix::new(n, n, row_ptr, col_idx, values).expect("rows built in order")
}

/// Strictly diagonally dominant, so Jacobi converges.
fn dominant(rng: &mut StdRng, n: usize) -> DenseMatrix {
    let mut a = dense(rng, n, n);
    for i in 0..n {
        a.data_mut()[i * n + i] = n as f64 + rng.gen_range(0.0..n as f64);
    }
    a
}

impl Input {
    /// Deterministic random inputs for `kernel` at `wss` bytes.
    pub fn generate(kernel: Kernel, wss: u64, seed: u64) -> Input {
        let mut rng = StdRng::seed_from_u64(seed ^ kernel.sw_fid());
        let n = dimension(kernel, wss);
        match kernel {
            Kernel::Mmm | Kernel::Ewmm => Input::Dense(kernel, dense(&mut rng, n, n), dense(&mut rng, n, n)),
            Kernel::Ewmd => {
                let b = DenseMatrix::new(n, n, uniform(&mut rng, n * n, 0.5, 2.0)).expect("sized to fit");
                Input::Dense(kernel, dense(&mut rng, n, n), b)
            }
            Kernel::Smmm => Input::Sparse(sparse(&mut rng, n, SPARSE_DENSITY), dense(&mut rng, n, n)),
            Kernel::Vdp => Input::Dot(uniform(&mut rng, n, -1.0, 1.0), uniform(&mut rng, n, -1.0, 1.0)),
            Kernel::Conv1d => Input::Conv(
                uniform(&mut rng, n, -1.0, 1.0),
                uniform(&mut rng, CONV_TAPS, -1.0, 1.0),
            ),
            Kernel::Mvm => Input::MatVec(dense(&mut rng, n, n), uniform(&mut rng, n, -1.0, 1.0)),
            Kernel::Js => Input::Jacobi {
                a: dominant(&mut rng, n),
                b: uniform(&mut rng, n, -1.0, 1.0),
                sweeps: JACOBI_SWEEPS,
                tol: 0.0,
            },
        }
    }

    pub fn kernel(&self) -> Kernel {
        match self {
            Input::Dense(k, ..) => *k,
            Input::Sparse(..) => Kernel::Smmm,
            Input::Dot(..) => Kernel::Vdp,
            Input::Conv(..) => Kernel::Conv1d,
            Input::MatVec(..) => Kernel::Mvm,
            Input::Jacobi { .. } => Kernel::Js,
        }
    }

    /// Shape values as the kernel's leading `u64` argument, if it has one.
    pub fn dims(&self) -> Option<Vec<u64>> {
        let u = |v: usize| v as u64;
        match self {
            Input::Dense(Kernel::Mmm, a, b) => Some(vec![u(a.rows()), u(a.cols()), u(b.cols())]),
            Input::Dense(_, a, _) => Some(vec![u(a.rows()), u(a.cols())]),
            Input::Sparse(a, b) => Some(vec![u(a.rows()), u(a.cols()), u(b.cols()), u(a.nnz())]),
            Input::MatVec(a, _) => Some(vec![u(a.rows()), u(a.cols())]),
            Input::Jacobi { b, sweeps, .. } => Some(vec![u(b.len()), *sweeps]),
            Input::Dot(..) | Input::Conv(..) => None,
        }
    }

    /// The arrays passed by reference, in argument order after the shape.
    fn bulk(&self) -> Vec<(Scalar, &[u8])> {
        fn f(v: &[f64]) -> (Scalar, &[u8]) {
            (Scalar::F64, bytemuck::cast_slice(v))
        }
        fn us(v: &[usize]) -> (Scalar, &[u8]) {
            (Scalar::U64, bytemuck::cast_slice(v))
        }
        match self {
            Input::Dense(_, a, b) => vec![f(a.data()), f(b.data())],
            Input::Sparse(a, b) => vec![us(a.row_ptr()), us(a.col_idx()), f(a.values()), f(b.data())],
            Input::Dot(x, y) | Input::Conv(x, y) => vec![f(x), f(y)],
            Input::MatVec(a, x) => vec![f(a.data()), f(x)],
            Input::Jacobi { a, b, .. } => vec![f(a.data()), f(b)],
        }
    }

    /// Bytes of [`bulk`](Self::bulk) data, the size of region needed by
    /// [`arguments_in`](Self::arguments_in).
    pub fn bulk_bytes(&self) -> usize {
        self.bulk().iter().map(|(_, b)| b.len()).sum()
    }

    fn assemble(&self, mut bulk: Vec<Argument>) -> Vec<Argument> {
        let mut args: Vec<Argument> = self.dims().map(|d| Argument::from_u64(&d)).into_iter().collect();
        if let Input::Jacobi { tol, .. } = self {
            args.push(Argument::from_f64(&[*tol]));
        }
        args.append(&mut bulk);
        args
    }

    /// Arguments carrying all data inline.
    pub fn arguments(&self) -> Vec<Argument> {
        let bulk = self
            .bulk()
            .into_iter()
            .map(|(s, b)| Argument::inline(s, b.to_vec()).expect("whole elements"))
            .collect();
        self.assemble(bulk)
    }

    /// Writes the bulk arrays into `region` and returns arguments that
    /// reference them without copying.
    pub fn arguments_in(&self, region: &mut MemRegion) -> Result<Vec<Argument>> {
        if region.len() < self.bulk_bytes() {
            return Err(HaloError::BadArgument(format!(
                "{} bytes of input do not fit {region:?}",
                self.bulk_bytes()
            )));
        }
        let mut offset = 0;
        let mut bulk = Vec::new();
        for (scalar, bytes) in self.bulk() {
            region.write_at(offset, bytes)?;
            bulk.push(region.slice_arg(scalar, offset as u64, bytes.len() as u64)?);
            offset += bytes.len();
        }
        Ok(self.assemble(bulk))
    }

    /// Calls the kernel directly on borrowed inputs.
    pub fn call(&self, v: Variant) -> Result<Vec<f64>> {
        let bad = |e: halo_kernels::KernelError| HaloError::BadArgument(e.to_string());
        Ok(match self {
            Input::Dense(Kernel::Mmm, a, b) => v.mmm(a, b).map_err(bad)?.into_data(),
            Input::Dense(Kernel::Ewmm, a, b) => v.ewmm(a, b).map_err(bad)?.into_data(),
            Input::Dense(_, a, b) => v.ewmd(a, b).map_err(bad)?.into_data(),
            Input::Sparse(a, b) => v.smmm(a, b).map_err(bad)?.into_data(),
            Input::Dot(x, y) => vec![v.vdp(x, y).map_err(bad)?],
            Input::Conv(s, k) => v.conv1d(s, k).map_err(bad)?,
            Input::MatVec(a, x) => v.mvm(a, x).map_err(bad)?,
            Input::Jacobi { a, b, sweeps, tol } => v.jacobi(a, b, *sweeps as usize, *tol).map_err(bad)?,
        })
    }

    /// The direct baseline: the kernel call alone, timed on freshly copied
    /// inputs as an agent would see them after staging.
    pub fn baseline(&self, v: Variant) -> Result<(Duration, Vec<f64>)> {
        let fresh = self.clone();
        let start = Instant::now();
        let out = fresh.call(v);
        let t = start.elapsed();
        Ok((t, out?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dimensions_follow_the_working_set() {
        let mb = 1 << 20;
        assert_eq!(dimension(Kernel::Mmm, 24 * 1000 * 1000), 1000);
        assert_eq!(dimension(Kernel::Vdp, 16 * mb), mb as usize);
        assert_eq!(dimension(Kernel::Mvm, 8 * 4096 * 4096), 4096);
        assert_eq!(dimension(Kernel::Smmm, 1616 * 100 * 100 / 100), 100);
        assert_eq!(dimension(Kernel::Mmm, 0), 2);
    }

    #[test]
    fn generation_is_deterministic() {
        for k in Kernel::ALL {
            let a = Input::generate(k, 1 << 14, 9).arguments();
            let b = Input::generate(k, 1 << 14, 9).arguments();
            assert_eq!(a, b, "{k}");
        }
    }

    #[test]
    fn working_set_is_close_to_requested() {
        let wss = 4 << 20;
        for k in [Kernel::Mmm, Kernel::Ewmm, Kernel::Mvm, Kernel::Vdp] {
            let i = Input::generate(k, wss, 1);
            let out = i.call(Variant::Opt).unwrap().len() * 8;
            let total = (i.bulk_bytes() + out) as f64;
            assert!((total / wss as f64 - 1.0).abs() < 0.01, "{k}: {total}");
        }
    }
}
