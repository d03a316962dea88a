//! The unified configuration file: the legacy host list merged with the
//! accelerator function list and the platform section.
//!
//! All identifier strings (`sw_fid`, `vid`, ...) are read as base-16, with
//! or without a `0x` prefix. Numeric fields such as `port` may be given as
//! JSON numbers or as decimal strings. Keys that are not recognised are kept
//! in each record's `extra` map and reported with a warning.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{HaloError, Result};
use crate::types::{KernelAttributes, WILDCARD32, WILDCARD64};

/// Strategy token selecting round-robin placement; the only one accepted.
pub const ROUND_ROBIN: &str = "rr_scat";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HostEntry {
    pub host_name: String,
    pub port: u16,
    pub mode: String,
    pub max_slots: u32,
    pub extra: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FuncEntry {
    pub func_alias: String,
    pub sw_fid: u64,
    pub func_repl: u32,
    pub platform_id: String,
    /// Static attribute values beyond `sw_fid`; wildcard where unspecified.
    pub overrides: KernelAttributes,
    pub extra: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Launch {
    /// Agent runs as threads inside the parent's process.
    Thread,
    /// Agent runs as a separate `halo-vagent` process.
    Process,
}

/// One virtualization-agent deployment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlatformEntry {
    pub backend: String,
    pub replicas: u32,
    pub launch: Launch,
    pub endpoint: Option<String>,
    pub kernels: Option<String>,
    pub sim_t2_us: u64,
    pub sim_t3_us: u64,
    pub extra: BTreeMap<String, Value>,
}

impl PlatformEntry {
    pub fn new(backend: impl Into<String>) -> PlatformEntry {
        PlatformEntry {
            backend: backend.into(),
            replicas: 1,
            launch: Launch::Thread,
            endpoint: None,
            kernels: None,
            sim_t2_us: 0,
            sim_t3_us: 0,
            extra: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct HaloConfig {
    pub host_list: Vec<HostEntry>,
    pub func_list: Vec<FuncEntry>,
    pub platform_list: Vec<PlatformEntry>,
    pub extra: BTreeMap<String, Value>,
}

impl HaloConfig {
    pub fn from_path(path: impl AsRef<Path>) -> Result<HaloConfig> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| {
            HaloError::BadArgument(format!("cannot read config {}: {e}", path.display()))
        })?;
        parse_config(&bytes)
    }

    pub fn func(&self, alias: &str) -> Option<&FuncEntry> {
        self.func_list.iter().find(|f| f.func_alias == alias)
    }

    /// Attributes for `alias` with `runtime_overrides` applied field-wise.
    /// Unspecified fields are wildcards.
    pub fn resolve_alias(
        &self,
        alias: &str,
        runtime_overrides: Option<&KernelAttributes>,
    ) -> Result<KernelAttributes> {
        let base = match self.func(alias) {
            Some(f) => KernelAttributes {
                sw_fid: f.sw_fid,
                ..f.overrides
            },
            None => KernelAttributes::WILDCARD,
        };
        let attrs = match runtime_overrides {
            Some(o) => base.overridden_by(o),
            None => base,
        };
        if attrs.sw_fid == WILDCARD64 {
            return Err(HaloError::NoResource(format!(
                "alias {alias:?} is not configured and no sw_fid override was given"
            )));
        }
        Ok(attrs)
    }
}

pub fn resolve_alias(
    cfg: &HaloConfig,
    alias: &str,
    runtime_overrides: Option<&KernelAttributes>,
) -> Result<KernelAttributes> {
    cfg.resolve_alias(alias, runtime_overrides)
}

/// Parses and validates a configuration document.
pub fn parse_config(bytes: &[u8]) -> Result<HaloConfig> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| HaloError::BadArgument(format!("config is not UTF-8: {e}")))?;
    let root: Value = serde_json::from_str(text).map_err(|e| {
        HaloError::BadArgument(format!(
            "malformed config at line {}, column {}: {e}",
            e.line(),
            e.column()
        ))
    })?;
    let Value::Object(mut root) = root else {
        return Err(HaloError::BadArgument(
            "config root must be a JSON object".into(),
        ));
    };

    let mut cfg = HaloConfig::default();
    for (i, v) in take_list(&mut root, "host_list")?.into_iter().enumerate() {
        cfg.host_list.push(parse_host(v, i)?);
    }
    let mut seen = HashSet::new();
    for (i, v) in take_list(&mut root, "func_list")?.into_iter().enumerate() {
        let f = parse_func(v, i)?;
        if !seen.insert(f.func_alias.clone()) {
            let (line, col) = locate_nth(text, &format!("\"{}\"", f.func_alias), 2);
            return Err(HaloError::BadArgument(format!(
                "duplicate func_alias {:?} at line {line}, column {col}",
                f.func_alias
            )));
        }
        cfg.func_list.push(f);
    }
    for (i, v) in take_list(&mut root, "platform_list")?.into_iter().enumerate() {
        cfg.platform_list.push(parse_platform(v, i)?);
    }
    cfg.extra = leftovers(root, "config");
    Ok(cfg)
}

fn take_list(root: &mut Map<String, Value>, key: &str) -> Result<Vec<Value>> {
    match root.remove(key) {
        None => Ok(Vec::new()),
        Some(Value::Array(items)) => Ok(items),
        Some(_) => Err(HaloError::BadArgument(format!("{key} must be an array"))),
    }
}

fn leftovers(map: Map<String, Value>, ctx: &str) -> BTreeMap<String, Value> {
    for k in map.keys() {
        tracing::warn!(key = %k, "ignoring unknown key in {ctx}");
    }
    map.into_iter().collect()
}

fn as_object(v: Value, ctx: &str) -> Result<Map<String, Value>> {
    match v {
        Value::Object(m) => Ok(m),
        _ => Err(HaloError::BadArgument(format!("{ctx} must be an object"))),
    }
}

fn take_string(m: &mut Map<String, Value>, key: &str, ctx: &str) -> Result<Option<String>> {
    match m.remove(key) {
        None => Ok(None),
        Some(Value::String(s)) => Ok(Some(s)),
        Some(other) => Err(HaloError::BadArgument(format!(
            "{ctx}.{key} must be a string, got {other}"
        ))),
    }
}

fn take_uint(m: &mut Map<String, Value>, key: &str, ctx: &str) -> Result<Option<u64>> {
    match m.remove(key) {
        None => Ok(None),
        Some(Value::Number(n)) => n.as_u64().map(Some).ok_or_else(|| {
            HaloError::BadArgument(format!("{ctx}.{key} must be a non-negative integer"))
        }),
        Some(Value::String(s)) => s.trim().parse::<u64>().map(Some).map_err(|_| {
            HaloError::BadArgument(format!("{ctx}.{key}: {s:?} is not a decimal integer"))
        }),
        Some(other) => Err(HaloError::BadArgument(format!(
            "{ctx}.{key} must be an integer, got {other}"
        ))),
    }
}

/// Parses an identifier string as base-16.
pub fn parse_hex_id(s: &str) -> Result<u64> {
    let t = s.trim();
    let t = t
        .strip_prefix("0x")
        .or_else(|| t.strip_prefix("0X"))
        .unwrap_or(t);
    if t == "*" {
        return Ok(WILDCARD64);
    }
    u64::from_str_radix(t, 16)
        .map_err(|_| HaloError::BadArgument(format!("{s:?} is not a hexadecimal identifier")))
}

fn take_hex(m: &mut Map<String, Value>, key: &str, ctx: &str) -> Result<Option<u64>> {
    match m.remove(key) {
        None => Ok(None),
        Some(Value::String(s)) => parse_hex_id(&s)
            .map(Some)
            .map_err(|e| HaloError::BadArgument(format!("{ctx}.{key}: {e}"))),
        Some(other) => Err(HaloError::BadArgument(format!(
            "{ctx}.{key} must be a hexadecimal string, got {other}"
        ))),
    }
}

fn take_hex32(m: &mut Map<String, Value>, key: &str, ctx: &str) -> Result<u32> {
    match take_hex(m, key, ctx)? {
        None | Some(WILDCARD64) => Ok(WILDCARD32),
        Some(v) => u32::try_from(v)
            .map_err(|_| HaloError::BadArgument(format!("{ctx}.{key} exceeds 32 bits"))),
    }
}

fn is_token(s: &str) -> bool {
    !s.is_empty()
        && s
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

fn parse_host(v: Value, i: usize) -> Result<HostEntry> {
    let ctx = format!("host_list[{i}]");
    let mut m = as_object(v, &ctx)?;
    let host_name = take_string(&mut m, "host_name", &ctx)?
        .filter(|s| !s.is_empty())
        .ok_or_else(|| HaloError::BadArgument(format!("{ctx}.host_name is required")))?;
    let port = take_uint(&mut m, "port", &ctx)?
        .ok_or_else(|| HaloError::BadArgument(format!("{ctx}.port is required")))?;
    if !(1..=65535).contains(&port) {
        return Err(HaloError::BadArgument(format!(
            "{ctx}.port {port} outside [1, 65535]"
        )));
    }
    let mode = take_string(&mut m, "mode", &ctx)?
        .ok_or_else(|| HaloError::BadArgument(format!("{ctx}.mode is required")))?;
    if !is_token(&mode) {
        return Err(HaloError::BadArgument(format!(
            "{ctx}.mode {mode:?} is not a valid token"
        )));
    }
    let max_slots = take_uint(&mut m, "max_slots", &ctx)?.unwrap_or(1);
    if max_slots == 0 || max_slots > u32::MAX as u64 {
        return Err(HaloError::BadArgument(format!(
            "{ctx}.max_slots must be at least 1"
        )));
    }
    Ok(HostEntry {
        host_name,
        port: port as u16,
        mode,
        max_slots: max_slots as u32,
        extra: leftovers(m, &ctx),
    })
}

fn parse_func(v: Value, i: usize) -> Result<FuncEntry> {
    let ctx = format!("func_list[{i}]");
    let mut m = as_object(v, &ctx)?;
    let func_alias = take_string(&mut m, "func_alias", &ctx)?
        .filter(|s| !s.is_empty())
        .ok_or_else(|| HaloError::BadArgument(format!("{ctx}.func_alias is required")))?;
    let sw_fid = take_hex(&mut m, "sw_fid", &ctx)?
        .ok_or_else(|| HaloError::BadArgument(format!("{ctx}.sw_fid is required")))?;
    if sw_fid == 0 || sw_fid == WILDCARD64 {
        return Err(HaloError::BadArgument(format!(
            "{ctx}.sw_fid must be a concrete nonzero id"
        )));
    }
    let func_repl = take_uint(&mut m, "func_repl", &ctx)?.unwrap_or(1);
    if func_repl == 0 || func_repl > u32::MAX as u64 {
        return Err(HaloError::BadArgument(format!(
            "{ctx}.func_repl must be at least 1"
        )));
    }
    let platform_id =
        take_string(&mut m, "platform_id", &ctx)?.unwrap_or_else(|| ROUND_ROBIN.to_string());
    if platform_id != ROUND_ROBIN {
        return Err(HaloError::BadArgument(format!(
            "{ctx}.platform_id {platform_id:?} is not supported (only {ROUND_ROBIN:?})"
        )));
    }
    let overrides = KernelAttributes {
        vid: take_hex32(&mut m, "vid", &ctx)?,
        pid: take_hex32(&mut m, "pid", &ctx)?,
        ss_vid: take_hex32(&mut m, "ss_vid", &ctx)?,
        ss_pid: take_hex32(&mut m, "ss_pid", &ctx)?,
        sw_pid: take_hex(&mut m, "sw_pid", &ctx)?.unwrap_or(WILDCARD64),
        sw_vid: take_hex(&mut m, "sw_vid", &ctx)?.unwrap_or(WILDCARD64),
        sw_fid,
        sw_verid: take_hex(&mut m, "sw_verid", &ctx)?.unwrap_or(WILDCARD64),
    };
    Ok(FuncEntry {
        func_alias,
        sw_fid,
        func_repl: func_repl as u32,
        platform_id,
        overrides,
        extra: leftovers(m, &ctx),
    })
}

fn parse_platform(v: Value, i: usize) -> Result<PlatformEntry> {
    let ctx = format!("platform_list[{i}]");
    let mut m = as_object(v, &ctx)?;
    let backend = take_string(&mut m, "backend", &ctx)?
        .filter(|s| is_token(s))
        .ok_or_else(|| HaloError::BadArgument(format!("{ctx}.backend token is required")))?;
    let replicas = take_uint(&mut m, "replicas", &ctx)?.unwrap_or(1);
    if replicas == 0 || replicas > 1024 {
        return Err(HaloError::BadArgument(format!(
            "{ctx}.replicas must be in [1, 1024]"
        )));
    }
    let launch = match take_string(&mut m, "launch", &ctx)?.as_deref() {
        None | Some("thread") => Launch::Thread,
        Some("process") => Launch::Process,
        Some(other) => {
            return Err(HaloError::BadArgument(format!(
                "{ctx}.launch {other:?} must be \"thread\" or \"process\""
            )))
        }
    };
    Ok(PlatformEntry {
        backend,
        replicas: replicas as u32,
        launch,
        endpoint: take_string(&mut m, "endpoint", &ctx)?,
        kernels: take_string(&mut m, "kernels", &ctx)?,
        sim_t2_us: take_uint(&mut m, "sim_t2_us", &ctx)?.unwrap_or(0),
        sim_t3_us: take_uint(&mut m, "sim_t3_us", &ctx)?.unwrap_or(0),
        extra: leftovers(m, &ctx),
    })
}

/// 1-based line and column of the `nth` occurrence of `needle`.
fn locate_nth(text: &str, needle: &str, nth: usize) -> (usize, usize) {
    let Some((offset, _)) = text.match_indices(needle).nth(nth.saturating_sub(1)) else {
        return (0, 0);
    };
    let before = &text[..offset];
    let line = before.matches('\n').count() + 1;
    let col = offset - before.rfind('\n').map(|p| p + 1).unwrap_or(0) + 1;
    (line, col)
}
