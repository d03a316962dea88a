//! The eight HPC kernels served by HALO agents, each in a naive and an
//! optimized variant.
//!
//! | kernel | inputs                   | output        |
//! |--------|--------------------------|---------------|
//! | MMM    | dense m×k, dense k×n     | dense m×n     |
//! | EWMM   | dense r×c, dense r×c     | dense r×c     |
//! | SMMM   | CSR m×k, dense k×n       | dense m×n     |
//! | EWMD   | dense r×c, dense r×c     | dense r×c     |
//! | VDP    | vector n, vector n       | scalar        |
//! | JS     | dense n×n, vector n      | vector n      |
//! | MVM    | dense m×n, vector n      | vector m      |
//! | 1DConv | vector n, vector k       | vector n      |
//!
//! 1DConv is a zero-padded correlation with same-size output:
//! `out[i] = Σ_j signal[i + j - k/2] * kernel[j]`. EWMD follows IEEE-754 for
//! zero divisors. Jacobi starts from zero and stops after `iters` sweeps or
//! once the largest update falls below `tol`.

use thiserror::Error;

mod matrix;
pub mod naive;
pub mod opt;

pub use matrix::{CsrMatrix, CsrRef, DenseMatrix, MatRef, Vector};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KernelError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("malformed sparse matrix: {0}")]
    Malformed(String),
    #[error("zero diagonal entry in row {0}")]
    ZeroDiagonal(usize),
    #[error("empty {0}")]
    Empty(&'static str),
}

pub(crate) mod check {
    use super::{CsrRef, KernelError, MatRef};

    pub fn inner(a: &MatRef, b: &MatRef) -> Result<(), KernelError> {
        if a.cols() != b.rows() {
            return Err(KernelError::Shape(format!(
                "{}x{} times {}x{}",
                a.rows(),
                a.cols(),
                b.rows(),
                b.cols()
            )));
        }
        Ok(())
    }

    pub fn sparse_inner(a: &CsrRef, b: &MatRef) -> Result<(), KernelError> {
        if a.cols() != b.rows() {
            return Err(KernelError::Shape(format!(
                "sparse {}x{} times {}x{}",
                a.rows(),
                a.cols(),
                b.rows(),
                b.cols()
            )));
        }
        Ok(())
    }

    pub fn same_shape(a: &MatRef, b: &MatRef) -> Result<(), KernelError> {
        if (a.rows(), a.cols()) != (b.rows(), b.cols()) {
            return Err(KernelError::Shape(format!(
                "{}x{} against {}x{}",
                a.rows(),
                a.cols(),
                b.rows(),
                b.cols()
            )));
        }
        Ok(())
    }

    pub fn same_len(x: &[f64], y: &[f64]) -> Result<(), KernelError> {
        if x.len() != y.len() {
            return Err(KernelError::Shape(format!(
                "vectors of length {} and {}",
                x.len(),
                y.len()
            )));
        }
        Ok(())
    }

    pub fn matvec(a: &MatRef, x: &[f64]) -> Result<(), KernelError> {
        if a.cols() != x.len() {
            return Err(KernelError::Shape(format!(
                "{}x{} matrix times vector of length {}",
                a.rows(),
                a.cols(),
                x.len()
            )));
        }
        Ok(())
    }

    pub fn jacobi(a: &MatRef, b: &[f64]) -> Result<(), KernelError> {
        if a.rows() != a.cols() || a.rows() != b.len() {
            return Err(KernelError::Shape(format!(
                "system {}x{} with right-hand side of length {}",
                a.rows(),
                a.cols(),
                b.len()
            )));
        }
        match (0..b.len()).find(|&i| a.row(i)[i] == 0.0) {
            Some(i) => Err(KernelError::ZeroDiagonal(i)),
            None => Ok(()),
        }
    }

    pub fn conv(kernel: &[f64]) -> Result<(), KernelError> {
        if kernel.is_empty() {
            return Err(KernelError::Empty("convolution kernel"));
        }
        Ok(())
    }
}

/// Implementation flavour. Both compute the same function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Naive,
    Opt,
}

impl Variant {
    pub const ALL: [Variant; 2] = [Variant::Naive, Variant::Opt];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Naive => "naive",
            Variant::Opt => "opt",
        }
    }

    pub fn mmm<'a>(self, a: impl Into<MatRef<'a>>, b: impl Into<MatRef<'a>>) -> Result<DenseMatrix, KernelError> {
        match self {
            Variant::Naive => naive::mmm(a, b),
            Variant::Opt => opt::mmm(a, b),
        }
    }

    pub fn ewmm<'a>(self, a: impl Into<MatRef<'a>>, b: impl Into<MatRef<'a>>) -> Result<DenseMatrix, KernelError> {
        match self {
            Variant::Naive => naive::ewmm(a, b),
            Variant::Opt => opt::ewmm(a, b),
        }
    }

    pub fn ewmd<'a>(self, a: impl Into<MatRef<'a>>, b: impl Into<MatRef<'a>>) -> Result<DenseMatrix, KernelError> {
        match self {
            Variant::Naive => naive::ewmd(a, b),
            Variant::Opt => opt::ewmd(a, b),
        }
    }

    pub fn smmm<'a>(self, a: impl Into<CsrRef<'a>>, b: impl Into<MatRef<'a>>) -> Result<DenseMatrix, KernelError> {
        match self {
            Variant::Naive => naive::smmm(a, b),
            Variant::Opt => opt::smmm(a, b),
        }
    }

    pub fn mvm<'a>(self, a: impl Into<MatRef<'a>>, x: &[f64]) -> Result<Vec<f64>, KernelError> {
        match self {
            Variant::Naive => naive::mvm(a, x),
            Variant::Opt => opt::mvm(a, x),
        }
    }

    pub fn vdp(self, x: &[f64], y: &[f64]) -> Result<f64, KernelError> {
        match self {
            Variant::Naive => naive::vdp(x, y),
            Variant::Opt => opt::vdp(x, y),
        }
    }

    pub fn jacobi<'a>(self, a: impl Into<MatRef<'a>>, b: &[f64], iters: usize, tol: f64) -> Result<Vec<f64>, KernelError> {
        match self {
            Variant::Naive => naive::jacobi(a, b, iters, tol),
            Variant::Opt => opt::jacobi(a, b, iters, tol),
        }
    }

    pub fn conv1d(self, signal: &[f64], kernel: &[f64]) -> Result<Vec<f64>, KernelError> {
        match self {
            Variant::Naive => naive::conv1d(signal, kernel),
            Variant::Opt => opt::conv1d(signal, kernel),
        }
    }
}

/// The kernel catalogue with the function ids used in configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Kernel {
    Mmm,
    Ewmm,
    Smmm,
    Ewmd,
    Vdp,
    Js,
    Mvm,
    Conv1d,
}

impl Kernel {
    pub const ALL: [Kernel; 8] = [
        Kernel::Mmm,
        Kernel::Ewmm,
        Kernel::Smmm,
        Kernel::Ewmd,
        Kernel::Vdp,
        Kernel::Js,
        Kernel::Mvm,
        Kernel::Conv1d,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Kernel::Mmm => "MMM",
            Kernel::Ewmm => "EWMM",
            Kernel::Smmm => "SMMM",
            Kernel::Ewmd => "EWMD",
            Kernel::Vdp => "VDP",
            Kernel::Js => "JS",
            Kernel::Mvm => "MVM",
            Kernel::Conv1d => "1DConv",
        }
    }

    pub fn sw_fid(self) -> u64 {
        match self {
            Kernel::Mmm => 0x12345,
            Kernel::Ewmm => 0x123456,
            Kernel::Smmm => 0x1234567,
            Kernel::Ewmd => 0x12345678,
            Kernel::Vdp => 0x123456789,
            Kernel::Js => 0x123456789A,
            Kernel::Mvm => 0x123456789B,
            Kernel::Conv1d => 0x123456789C,
        }
    }

    /// Case-insensitive; "FC" names the matrix-vector kernel.
    pub fn from_name(s: &str) -> Option<Kernel> {
        let u = s.trim().to_ascii_uppercase();
        Some(match u.as_str() {
            "MMM" => Kernel::Mmm,
            "EWMM" => Kernel::Ewmm,
            "SMMM" => Kernel::Smmm,
            "EWMD" => Kernel::Ewmd,
            "VDP" => Kernel::Vdp,
            "JS" | "JACOBI" => Kernel::Js,
            "MVM" | "FC" => Kernel::Mvm,
            "1DCONV" | "CONV1D" => Kernel::Conv1d,
            _ => return None,
        })
    }

    pub fn from_fid(fid: u64) -> Option<Kernel> {
        Kernel::ALL.into_iter().find(|k| k.sw_fid() == fid)
    }
}

impl std::fmt::Display for Kernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> DenseMatrix {
        DenseMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn mmm_examples() {
        for v in Variant::ALL {
            let a = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
            let b = m(&[&[5.0, 6.0], &[7.0, 8.0]]);
            assert_eq!(v.mmm(&a, &b).unwrap(), m(&[&[19.0, 22.0], &[43.0, 50.0]]));
            assert_eq!(v.mmm(&DenseMatrix::identity(2), &a).unwrap(), a);
            let bad = DenseMatrix::zeros(2, 3);
            assert!(matches!(v.mmm(&bad, &a), Err(KernelError::Shape(_))));
        }
    }

    #[test]
    fn elementwise_examples() {
        for v in Variant::ALL {
            let a = m(&[&[1.0, 2.0]]);
            let b = m(&[&[3.0, 4.0]]);
            assert_eq!(v.ewmm(&a, &b).unwrap(), m(&[&[3.0, 8.0]]));
            let ones = m(&[&[1.0, 1.0]]);
            assert_eq!(v.ewmm(&ones, &a).unwrap(), a);
            assert!(v.ewmm(&a, &DenseMatrix::zeros(2, 1)).is_err());

            assert_eq!(
                v.ewmd(&m(&[&[4.0, 9.0]]), &m(&[&[2.0, 3.0]])).unwrap(),
                m(&[&[2.0, 3.0]])
            );
            assert_eq!(v.ewmd(&a, &ones).unwrap(), a);
            let q = v.ewmd(&m(&[&[1.0, 0.0, -1.0]]), &DenseMatrix::zeros(1, 3)).unwrap();
            assert_eq!(q.data()[0], f64::INFINITY);
            assert!(q.data()[1].is_nan());
            assert_eq!(q.data()[2], f64::NEG_INFINITY);
        }
    }

    #[test]
    fn smmm_examples() {
        for v in Variant::ALL {
            let ones = m(&[&[1.0, 1.0], &[1.0, 1.0]]);
            let a = CsrMatrix::from_dense(&m(&[&[1.0, 0.0], &[0.0, 2.0]]));
            assert_eq!(v.smmm(&a, &ones).unwrap(), m(&[&[1.0, 1.0], &[2.0, 2.0]]));
            assert_eq!(v.smmm(&CsrMatrix::identity(2), &ones).unwrap(), ones);
            assert!(v.smmm(&CsrMatrix::identity(3), &ones).is_err());
        }
    }

    #[test]
    fn vector_examples() {
        for v in Variant::ALL {
            assert_eq!(v.vdp(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
            assert_eq!(v.vdp(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap(), 32.0);
            assert!(v.vdp(&[1.0], &[]).is_err());

            let a = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
            assert_eq!(v.mvm(&a, &[1.0, 1.0]).unwrap(), vec![3.0, 7.0]);
            assert_eq!(v.mvm(&DenseMatrix::identity(2), &[5.0, -1.0]).unwrap(), vec![5.0, -1.0]);
            assert!(v.mvm(&a, &[1.0]).is_err());
        }
    }

    #[test]
    fn jacobi_examples() {
        for v in Variant::ALL {
            let b = [3.0, -2.0, 0.5];
            assert_eq!(v.jacobi(&DenseMatrix::identity(3), &b, 1, 0.0).unwrap(), b);
            let a = m(&[&[4.0, 1.0], &[1.0, 3.0]]);
            let x = v.jacobi(&a, &[1.0, 2.0], 1000, 1e-14).unwrap();
            assert!((x[0] - 1.0 / 11.0).abs() < 1e-12);
            assert!((x[1] - 7.0 / 11.0).abs() < 1e-12);
            let singular = m(&[&[0.0, 1.0], &[1.0, 3.0]]);
            assert_eq!(v.jacobi(&singular, &[1.0, 2.0], 5, 0.0), Err(KernelError::ZeroDiagonal(0)));
        }
    }

    #[test]
    fn conv_examples() {
        for v in Variant::ALL {
            assert_eq!(v.conv1d(&[1.0, 2.0, 3.0], &[1.0, 1.0, 1.0]).unwrap(), vec![3.0, 6.0, 5.0]);
            let s = [0.5, -1.0, 2.0, 7.0];
            assert_eq!(v.conv1d(&s, &[0.0, 1.0, 0.0]).unwrap(), s);
            assert_eq!(v.conv1d(&s, &[1.0]).unwrap(), s);
            assert_eq!(v.conv1d(&s, &[]), Err(KernelError::Empty("convolution kernel")));
            assert_eq!(v.conv1d(&[], &[1.0, 2.0]).unwrap(), Vec::<f64>::new());
        }
    }

    #[test]
    fn catalogue_ids() {
        assert_eq!(Kernel::Mmm.sw_fid(), 0x12345);
        assert_eq!(Kernel::from_name("fc"), Some(Kernel::Mvm));
        assert_eq!(Kernel::from_name("1DConv"), Some(Kernel::Conv1d));
        for k in Kernel::ALL {
            assert_eq!(Kernel::from_fid(k.sw_fid()), Some(k));
            assert_eq!(Kernel::from_name(k.name()), Some(k));
        }
    }
}
