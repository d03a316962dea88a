#![allow(dead_code)]

use std::time::Duration;

use halo_core::parse_config;
use halo_runtime::{Argument, HaloConfig, InitOptions, ParentContext};

pub const FUNCS: &str = r#"
 {"func_alias":"MMM","sw_fid":"12345","func_repl":"1","platform_id":"rr_scat"},
 {"func_alias":"EWMM","sw_fid":"123456","platform_id":"rr_scat"},
 {"func_alias":"SMMM","sw_fid":"1234567","platform_id":"rr_scat"},
 {"func_alias":"EWMD","sw_fid":"12345678","platform_id":"rr_scat"},
 {"func_alias":"VDP","sw_fid":"123456789","platform_id":"rr_scat"},
 {"func_alias":"JS","sw_fid":"123456789A","platform_id":"rr_scat"},
 {"func_alias":"FC","sw_fid":"123456789B","platform_id":"rr_scat"},
 {"func_alias":"MVM","sw_fid":"123456789B","platform_id":"rr_scat"},
 {"func_alias":"1DCONV","sw_fid":"123456789C","platform_id":"rr_scat"}"#;

/// A configuration with every kernel alias and the given platform entries.
pub fn config(platforms: &str) -> HaloConfig {
    config_with(FUNCS, platforms)
}

pub fn config_with(funcs: &str, platforms: &str) -> HaloConfig {
    let text = format!(
        r#"{{"host_list":[{{"host_name":"localhost","port":"8000","mode":"ads_accel","max_slots":"1"}}],
"func_list":[{funcs}],
"platform_list":[{platforms}]}}"#
    );
    parse_config(text.as_bytes()).expect("test config parses")
}

pub fn options() -> InitOptions {
    InitOptions {
        recv_timeout: Duration::from_secs(20),
        ..InitOptions::from_env()
    }
}

pub fn context(platforms: &str) -> ParentContext {
    ParentContext::initialize_with(config(platforms), options()).expect("context starts")
}

pub fn dims(d: &[u64]) -> Argument {
    Argument::from_u64(d)
}

pub fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for l in 0..k {
                s += a[i * k + l] * b[l * n + j];
            }
            c[i * n + j] = s;
        }
    }
    c
}

pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..x.len() {
        s += x[i] * y[i];
    }
    s
}

pub fn close(got: &[f64], want: &[f64], rel: f64) -> bool {
    got.len() == want.len()
        && got
            .iter()
            .zip(want)
            .all(|(g, w)| (g - w).abs() <= rel * w.abs().max(1.0))
}
