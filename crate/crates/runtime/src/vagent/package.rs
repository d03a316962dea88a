//! `.ha` kernel packages.
//!
//! A package is a tar archive with two members:
//!
//! * `manifest.json`: attributes, entry symbol, backend id, signature and
//!   free-form metadata;
//! * `kernel.module`: the module descriptor, a line-oriented text file
//!
//! ```text
//! halo-module 1
//! abi halo-kernel-abi-1
//! export <symbol>
//! ```
//!
//! Exported symbols are resolved against the agent's kernel library when the
//! package is registered.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use halo_core::{HaloError, KernelAttributes, Result};
use halo_kernels::Kernel;
use serde::{Deserialize, Serialize};

use super::backend::Backend;
use super::library::{entry_symbol, signature};

pub const MODULE_ABI: &str = "halo-kernel-abi-1";
pub const EXTENSION: &str = "ha";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelManifest {
    pub name: String,
    pub attributes: KernelAttributes,
    pub entry_symbol: String,
    pub backend_id: String,
    /// Element type names of the expected arguments, in order.
    pub signature: Vec<String>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModuleDescriptor {
    pub abi: String,
    pub exports: Vec<String>,
}

impl ModuleDescriptor {
    pub fn render(&self) -> String {
        let mut s = format!("halo-module 1\nabi {}\n", self.abi);
        for e in &self.exports {
            s.push_str("export ");
            s.push_str(e);
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> Result<ModuleDescriptor> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
        if lines.next() != Some("halo-module 1") {
            return Err(HaloError::BadArgument("kernel.module: missing 'halo-module 1' header".into()));
        }
        let mut abi = None;
        let mut exports = Vec::new();
        for l in lines {
            match l.split_once(char::is_whitespace) {
                Some(("abi", v)) => abi = Some(v.trim().to_string()),
                Some(("export", v)) => exports.push(v.trim().to_string()),
                _ => {
                    return Err(HaloError::BadArgument(format!(
                        "kernel.module: unrecognised line {l:?}"
                    )))
                }
            }
        }
        Ok(ModuleDescriptor {
            abi: abi.ok_or_else(|| HaloError::BadArgument("kernel.module: no abi line".into()))?,
            exports,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HaPackage {
    pub manifest: KernelManifest,
    pub module: ModuleDescriptor,
}

impl HaPackage {
    /// Package for a built-in kernel as served by `backend`.
    pub fn builtin(kernel: Kernel, backend: &Backend) -> HaPackage {
        let symbol = entry_symbol(kernel, backend.variant());
        let mut metadata = BTreeMap::new();
        metadata.insert("version".into(), env!("CARGO_PKG_VERSION").into());
        metadata.insert("variant".into(), backend.variant().name().into());
        if kernel == Kernel::Vdp {
            metadata.insert("single_input".into(), "split".into());
        }
        HaPackage {
            manifest: KernelManifest {
                name: kernel.name().into(),
                attributes: KernelAttributes {
                    vid: backend.vid(),
                    pid: backend.pid(),
                    ss_vid: 0,
                    ss_pid: 0,
                    sw_pid: 1,
                    sw_vid: 1,
                    sw_fid: kernel.sw_fid(),
                    sw_verid: 1,
                },
                entry_symbol: symbol.clone(),
                backend_id: backend.id().into(),
                signature: signature(kernel).iter().map(|s| s.name().to_string()).collect(),
                metadata,
            },
            module: ModuleDescriptor {
                abi: MODULE_ABI.into(),
                exports: vec![symbol],
            },
        }
    }

    pub fn file_name(&self) -> String {
        format!(
            "{}-{}-v{}.{EXTENSION}",
            self.manifest.name.to_ascii_lowercase(),
            self.manifest.backend_id,
            self.manifest.attributes.sw_verid
        )
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let manifest = serde_json::to_vec_pretty(&self.manifest)
            .map_err(|e| HaloError::Serialization(e.to_string()))?;
        let module = self.module.render().into_bytes();
        let mut builder = tar::Builder::new(Vec::new());
        for (name, data) in [("manifest.json", &manifest), ("kernel.module", &module)] {
            let mut header = tar::Header::new_gnu();
            header.set_size(data.len() as u64);
            header.set_mode(0o644);
            header.set_cksum();
            builder.append_data(&mut header, name, data.as_slice())?;
        }
        Ok(builder.into_inner()?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<HaPackage> {
        let mut manifest = None;
        let mut module = None;
        let mut archive = tar::Archive::new(bytes);
        let entries = archive
            .entries()
            .map_err(|e| HaloError::BadArgument(format!("not a package archive: {e}")))?;
        for entry in entries {
            let mut entry = entry.map_err(|e| HaloError::BadArgument(format!("corrupt package: {e}")))?;
            let name = entry.path().map(|p| p.to_string_lossy().into_owned()).unwrap_or_default();
            let mut data = Vec::new();
            entry
                .read_to_end(&mut data)
                .map_err(|e| HaloError::BadArgument(format!("corrupt package member {name}: {e}")))?;
            match name.as_str() {
                "manifest.json" => manifest = Some(data),
                "kernel.module" => module = Some(data),
                _ => {}
            }
        }
        let manifest: KernelManifest = serde_json::from_slice(
            &manifest.ok_or_else(|| HaloError::BadArgument("package has no manifest.json".into()))?,
        )
        .map_err(|e| HaloError::BadArgument(format!("manifest.json: {e}")))?;
        let module = module.ok_or_else(|| HaloError::BadArgument("package has no kernel.module".into()))?;
        let module = ModuleDescriptor::parse(
            std::str::from_utf8(&module).map_err(|_| HaloError::BadArgument("kernel.module is not UTF-8".into()))?,
        )?;
        Ok(HaPackage { manifest, module })
    }

    pub fn read(path: &Path) -> Result<HaPackage> {
        let bytes = std::fs::read(path)
            .map_err(|e| HaloError::BadArgument(format!("cannot read {}: {e}", path.display())))?;
        HaPackage::from_bytes(&bytes)
            .map_err(|e| HaloError::BadArgument(format!("{}: {e}", path.display())))
    }

    pub fn write_to_dir(&self, dir: &Path) -> Result<std::path::PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(self.file_name());
        std::fs::write(&path, self.to_bytes()?)?;
        Ok(path)
    }
}
