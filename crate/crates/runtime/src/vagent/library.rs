//! Entry points that `.ha` kernel modules may export.
//!
//! Every kernel shares one binary interface: staged argument arrays in,
//! `f64` result arrays out. A module names its entry symbol; loading resolves
//! that name here. The table is seeded with the built-in kernels and can be
//! extended at run time.

use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock, RwLock};

use halo_core::{HaloError, Result, Scalar};
use halo_kernels::{CsrRef, Kernel, KernelError, MatRef, Variant};

/// One argument after staging into the backend's working memory.
#[derive(Debug, Clone, PartialEq)]
pub enum Staged {
    F64(Vec<f64>),
    U64(Vec<u64>),
    Raw(Scalar, Vec<u8>),
}

impl Staged {
    pub fn scalar(&self) -> Scalar {
        match self {
            Staged::F64(_) => Scalar::F64,
            Staged::U64(_) => Scalar::U64,
            Staged::Raw(s, _) => *s,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Staged::F64(v) => v.len(),
            Staged::U64(v) => v.len(),
            Staged::Raw(s, b) => b.len() / s.size(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn f64(&self) -> Result<&[f64]> {
        match self {
            Staged::F64(v) => Ok(v),
            other => Err(HaloError::BadArgument(format!(
                "expected f64 data, got {}",
                other.scalar().name()
            ))),
        }
    }

    pub fn u64(&self) -> Result<&[u64]> {
        match self {
            Staged::U64(v) => Ok(v),
            other => Err(HaloError::BadArgument(format!(
                "expected u64 data, got {}",
                other.scalar().name()
            ))),
        }
    }

    /// Copies raw little-endian element bytes into a typed array.
    pub fn from_bytes(scalar: Scalar, bytes: &[u8]) -> Staged {
        match scalar {
            Scalar::F64 => Staged::F64(copy_pod(bytes)),
            Scalar::U64 => Staged::U64(copy_pod(bytes)),
            s => Staged::Raw(s, bytes.to_vec()),
        }
    }

    /// Splits one array into `parts` equal consecutive arrays.
    pub fn split(self, parts: usize) -> Result<Vec<Staged>> {
        let n = self.len();
        if parts == 0 || n % parts != 0 {
            return Err(HaloError::BadArgument(format!(
                "packed input of {n} elements does not split into {parts} equal parts"
            )));
        }
        let chunk = n / parts;
        Ok(match self {
            Staged::F64(v) => v.chunks(chunk.max(1)).map(|c| Staged::F64(c.to_vec())).collect(),
            Staged::U64(v) => v.chunks(chunk.max(1)).map(|c| Staged::U64(c.to_vec())).collect(),
            Staged::Raw(s, b) => b
                .chunks((chunk * s.size()).max(1))
                .map(|c| Staged::Raw(s, c.to_vec()))
                .collect(),
        })
    }
}

fn copy_pod<T: bytemuck::Pod>(bytes: &[u8]) -> Vec<T> {
    let n = bytes.len() / std::mem::size_of::<T>();
    let mut v: Vec<T> = Vec::with_capacity(n);
    // SAFETY: capacity is n elements; every byte pattern is a valid T.
    unsafe {
        std::ptr::copy_nonoverlapping(bytes.as_ptr(), v.as_mut_ptr() as *mut u8, n * std::mem::size_of::<T>());
        v.set_len(n);
    }
    v
}

pub type KernelFn = Arc<dyn Fn(&[Staged]) -> Result<Vec<Vec<f64>>> + Send + Sync>;

pub struct KernelLibrary {
    symbols: RwLock<BTreeMap<String, KernelFn>>,
}

/// The process-wide symbol table.
pub fn library() -> &'static KernelLibrary {
    static LIB: OnceLock<KernelLibrary> = OnceLock::new();
    LIB.get_or_init(|| {
        let lib = KernelLibrary {
            symbols: RwLock::new(BTreeMap::new()),
        };
        for k in Kernel::ALL {
            for v in Variant::ALL {
                lib.register(&entry_symbol(k, v), builtin(k, v));
            }
        }
        lib
    })
}

impl KernelLibrary {
    /// Adds or replaces an exported symbol.
    pub fn register(&self, symbol: &str, f: KernelFn) {
        self.symbols.write().unwrap().insert(symbol.to_string(), f);
    }

    pub fn resolve(&self, symbol: &str) -> Option<KernelFn> {
        self.symbols.read().unwrap().get(symbol).cloned()
    }

    pub fn symbols(&self) -> Vec<String> {
        self.symbols.read().unwrap().keys().cloned().collect()
    }
}

pub fn kernel_key(k: Kernel) -> &'static str {
    match k {
        Kernel::Mmm => "mmm",
        Kernel::Ewmm => "ewmm",
        Kernel::Smmm => "smmm",
        Kernel::Ewmd => "ewmd",
        Kernel::Vdp => "vdp",
        Kernel::Js => "js",
        Kernel::Mvm => "mvm",
        Kernel::Conv1d => "conv1d",
    }
}

pub fn entry_symbol(k: Kernel, v: Variant) -> String {
    format!("halo_{}_{}", kernel_key(k), v.name())
}

/// Expected argument element types, in order.
pub fn signature(k: Kernel) -> Vec<Scalar> {
    use Scalar::{F64, U64};
    match k {
        Kernel::Mmm | Kernel::Ewmm | Kernel::Ewmd | Kernel::Mvm => vec![U64, F64, F64],
        Kernel::Smmm => vec![U64, U64, U64, F64, F64],
        Kernel::Js => vec![U64, F64, F64, F64],
        Kernel::Vdp | Kernel::Conv1d => vec![F64, F64],
    }
}

fn bad(e: KernelError) -> HaloError {
    HaloError::BadArgument(e.to_string())
}

fn dims(arg: &Staged, n: usize, what: &str) -> Result<Vec<usize>> {
    let d = arg.u64()?;
    if d.len() != n {
        return Err(HaloError::BadArgument(format!(
            "{what} expects {n} dimension values, got {}",
            d.len()
        )));
    }
    d.iter()
        .map(|&x| usize::try_from(x).map_err(|_| HaloError::BadArgument("dimension overflow".into())))
        .collect()
}

fn mat<'a>(rows: usize, cols: usize, arg: &'a Staged) -> Result<MatRef<'a>> {
    MatRef::new(rows, cols, arg.f64()?).map_err(bad)
}

fn builtin(k: Kernel, v: Variant) -> KernelFn {
    match k {
        Kernel::Mmm => Arc::new(move |a: &[Staged]| {
            let d = dims(&a[0], 3, "MMM")?;
            let x = mat(d[0], d[1], &a[1])?;
            let y = mat(d[1], d[2], &a[2])?;
            Ok(vec![v.mmm(x, y).map_err(bad)?.into_data()])
        }),
        Kernel::Ewmm | Kernel::Ewmd => Arc::new(move |a: &[Staged]| {
            let d = dims(&a[0], 2, k.name())?;
            let x = mat(d[0], d[1], &a[1])?;
            let y = mat(d[0], d[1], &a[2])?;
            let r = if k == Kernel::Ewmm { v.ewmm(x, y) } else { v.ewmd(x, y) };
            Ok(vec![r.map_err(bad)?.into_data()])
        }),
        Kernel::Smmm => Arc::new(move |a: &[Staged]| {
            let d = dims(&a[0], 4, "SMMM")?;
            let row_ptr: &[usize] = bytemuck::cast_slice(a[1].u64()?);
            let col_idx: &[usize] = bytemuck::cast_slice(a[2].u64()?);
            let values = a[3].f64()?;
            if values.len() != d[3] {
                return Err(HaloError::BadArgument(format!(
                    "SMMM declares {} nonzeros, got {}",
                    d[3],
                    values.len()
                )));
            }
            let s = CsrRef::new(d[0], d[1], row_ptr, col_idx, values).map_err(bad)?;
            let b = mat(d[1], d[2], &a[4])?;
            Ok(vec![v.smmm(s, b).map_err(bad)?.into_data()])
        }),
        Kernel::Vdp => Arc::new(move |a: &[Staged]| Ok(vec![vec![v.vdp(a[0].f64()?, a[1].f64()?).map_err(bad)?]])),
        Kernel::Js => Arc::new(move |a: &[Staged]| {
            let d = dims(&a[0], 2, "JS")?;
            let tol = match a[1].f64()? {
                [t] => *t,
                other => {
                    return Err(HaloError::BadArgument(format!(
                        "JS expects one tolerance value, got {}",
                        other.len()
                    )))
                }
            };
            let m = mat(d[0], d[0], &a[2])?;
            Ok(vec![v.jacobi(m, a[3].f64()?, d[1], tol).map_err(bad)?])
        }),
        Kernel::Mvm => Arc::new(move |a: &[Staged]| {
            let d = dims(&a[0], 2, "MVM")?;
            let m = mat(d[0], d[1], &a[1])?;
            Ok(vec![v.mvm(m, a[2].f64()?).map_err(bad)?])
        }),
        Kernel::Conv1d => Arc::new(move |a: &[Staged]| Ok(vec![v.conv1d(a[0].f64()?, a[1].f64()?).map_err(bad)?])),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_are_registered() {
        let syms = library().symbols();
        assert_eq!(syms.iter().filter(|s| s.starts_with("halo_")).count(), 16);
        assert!(library().resolve("halo_mmm_opt").is_some());
        assert!(library().resolve("nonexistent").is_none());
    }

    #[test]
    fn mmm_through_the_binary_interface() {
        let f = library().resolve("halo_mmm_naive").unwrap();
        let out = f(&[
            Staged::U64(vec![2, 2, 2]),
            Staged::F64(vec![1.0, 2.0, 3.0, 4.0]),
            Staged::F64(vec![5.0, 6.0, 7.0, 8.0]),
        ])
        .unwrap();
        assert_eq!(out, vec![vec![19.0, 22.0, 43.0, 50.0]]);
        let err = f(&[
            Staged::U64(vec![2, 2]),
            Staged::F64(vec![]),
            Staged::F64(vec![]),
        ])
        .unwrap_err();
        assert!(matches!(err, HaloError::BadArgument(_)));
    }

    #[test]
    fn staging_and_splitting() {
        let bytes: Vec<u8> = [1.0f64, 2.0, 3.0, 4.0].iter().flat_map(|x| x.to_le_bytes()).collect();
        let s = Staged::from_bytes(Scalar::F64, &bytes);
        assert_eq!(s.f64().unwrap(), &[1.0, 2.0, 3.0, 4.0]);
        let parts = s.clone().split(2).unwrap();
        assert_eq!(parts, vec![Staged::F64(vec![1.0, 2.0]), Staged::F64(vec![3.0, 4.0])]);
        assert!(s.split(3).is_err());
    }
}
