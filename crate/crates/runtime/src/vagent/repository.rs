//! Per-agent kernel repository: registered packages with their resolved
//! entry points.

use std::path::Path;
use std::sync::Arc;

use halo_core::types::WILDCARD64;
use halo_core::{HaloError, KernelAttributes, Result, Scalar};
use halo_kernels::Kernel;

use super::backend::Backend;
use super::library::{library, KernelFn};
use super::package::{HaPackage, KernelManifest, EXTENSION, MODULE_ABI};

pub struct RegisteredKernel {
    pub manifest: KernelManifest,
    pub signature: Vec<Scalar>,
    pub entry: KernelFn,
    /// A single packed argument may be split across the signature.
    pub split_single_input: bool,
}

impl std::fmt::Debug for RegisteredKernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RegisteredKernel")
            .field("manifest", &self.manifest)
            .finish_non_exhaustive()
    }
}

#[derive(Debug)]
pub struct KernelRepository {
    backend: String,
    kernels: Vec<Arc<RegisteredKernel>>,
}

impl KernelRepository {
    pub fn new(backend: &str) -> KernelRepository {
        KernelRepository {
            backend: backend.to_string(),
            kernels: Vec::new(),
        }
    }

    /// All eight built-in kernels for `backend`.
    pub fn builtin(backend: &Backend) -> KernelRepository {
        let mut r = KernelRepository::new(backend.id());
        for k in Kernel::ALL {
            r.register(HaPackage::builtin(k, backend))
                .expect("built-in packages are valid");
        }
        r
    }

    pub fn backend(&self) -> &str {
        &self.backend
    }

    /// Validates a package and loads its entry point eagerly.
    pub fn register(&mut self, pkg: HaPackage) -> Result<KernelManifest> {
        let m = &pkg.manifest;
        if m.backend_id != self.backend {
            return Err(HaloError::BadArgument(format!(
                "package {} targets backend {:?}, this repository serves {:?}",
                m.name, m.backend_id, self.backend
            )));
        }
        let fid = m.attributes.sw_fid;
        if fid == 0 || fid == WILDCARD64 {
            return Err(HaloError::BadArgument(format!(
                "package {} has no concrete sw_fid",
                m.name
            )));
        }
        if self.kernels.iter().any(|k| {
            k.manifest.attributes.sw_fid == fid
                && k.manifest.attributes.sw_verid == m.attributes.sw_verid
        }) {
            return Err(HaloError::BadArgument(format!(
                "kernel {fid:#x} version {} is already registered on {}",
                m.attributes.sw_verid, self.backend
            )));
        }
        if pkg.module.abi != MODULE_ABI {
            return Err(HaloError::BadArgument(format!(
                "module abi {:?} is not {MODULE_ABI:?}",
                pkg.module.abi
            )));
        }
        if !pkg.module.exports.contains(&m.entry_symbol) {
            return Err(HaloError::BadArgument(format!(
                "module does not export entry symbol {:?}",
                m.entry_symbol
            )));
        }
        let signature = m
            .signature
            .iter()
            .map(|s| {
                Scalar::parse(s)
                    .ok_or_else(|| HaloError::BadArgument(format!("unknown signature type {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if signature.is_empty() {
            return Err(HaloError::BadArgument(format!("package {} has an empty signature", m.name)));
        }
        let entry = library().resolve(&m.entry_symbol).ok_or_else(|| {
            HaloError::NoResource(format!("entry symbol {:?} cannot be resolved", m.entry_symbol))
        })?;
        let split_single_input = m.metadata.get("single_input").map(String::as_str) == Some("split")
            && signature.windows(2).all(|w| w[0] == w[1]);
        let manifest = pkg.manifest.clone();
        self.kernels.push(Arc::new(RegisteredKernel {
            manifest: pkg.manifest,
            signature,
            entry,
            split_single_input,
        }));
        Ok(manifest)
    }

    /// Registers every `.ha` file in `dir` that targets this backend.
    /// Returns the number registered.
    pub fn load_dir(&mut self, dir: &Path) -> Result<usize> {
        let rd = std::fs::read_dir(dir)
            .map_err(|e| HaloError::BadArgument(format!("kernel directory {}: {e}", dir.display())))?;
        let mut paths: Vec<_> = rd
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == EXTENSION))
            .collect();
        paths.sort();
        let mut n = 0;
        for p in paths {
            let pkg = HaPackage::read(&p)?;
            if pkg.manifest.backend_id != self.backend {
                tracing::debug!(path = %p.display(), "skipping package for another backend");
                continue;
            }
            self.register(pkg)?;
            n += 1;
        }
        Ok(n)
    }

    /// Best match: among kernels matching `attrs`, the highest `sw_verid`.
    pub fn lookup(&self, attrs: &KernelAttributes) -> Option<Arc<RegisteredKernel>> {
        self.kernels
            .iter()
            .filter(|k| k.manifest.attributes.matches(attrs))
            .max_by_key(|k| k.manifest.attributes.sw_verid)
            .cloned()
    }

    pub fn by_fid(&self, fid: u64) -> Option<Arc<RegisteredKernel>> {
        self.lookup(&KernelAttributes::with_fid(fid))
    }

    pub fn manifests(&self) -> Vec<KernelManifest> {
        self.kernels.iter().map(|k| k.manifest.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }
}
