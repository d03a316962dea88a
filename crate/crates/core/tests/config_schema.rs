//! The shipped JSON Schema and the parser agree on which files are valid.

use std::path::Path;

use halo_core::parse_config;
use serde_json::{json, Value};

fn root() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../.."))
}

fn validator() -> jsonschema::Validator {
    let text = std::fs::read_to_string(root().join("docs/config.schema.json")).unwrap();
    jsonschema::validator_for(&serde_json::from_str(&text).unwrap()).unwrap()
}

fn with(path: &[&str], value: Value) -> Value {
    let mut doc = json!({
        "host_list": [{"host_name": "localhost", "port": "8000", "mode": "ads_accel", "max_slots": "1"}],
        "func_list": [{"func_alias": "MMM", "sw_fid": "12345", "func_repl": "1", "platform_id": "rr_scat"}],
        "platform_list": [{"backend": "cpu_opt", "replicas": 2}]
    });
    let mut at = &mut doc;
    for (i, key) in path.iter().enumerate() {
        if i + 1 == path.len() {
            at[*key] = value.clone();
        } else {
            at = match key.parse::<usize>() {
                Ok(n) => &mut at[n],
                Err(_) => &mut at[*key],
            };
        }
    }
    doc
}

#[test]
fn shipped_configs_are_valid() {
    let v = validator();
    for name in ["halo", "naive", "opt"] {
        let text = std::fs::read_to_string(root().join(format!("configs/{name}.json"))).unwrap();
        let doc: Value = serde_json::from_str(&text).unwrap();
        assert!(v.is_valid(&doc), "{name}: {:?}", v.iter_errors(&doc).map(|e| e.to_string()).collect::<Vec<_>>());
        parse_config(text.as_bytes()).unwrap();
    }
}

#[test]
fn schema_and_parser_agree() {
    let v = validator();
    let cases = vec![
        with(&["host_list", "0", "port"], json!(65535)),
        with(&["host_list", "0", "port"], json!("0")),
        with(&["host_list", "0", "port"], json!(70000)),
        with(&["host_list", "0", "max_slots"], json!("0")),
        with(&["host_list", "0", "mode"], json!("ads accel")),
        with(&["func_list", "0", "sw_fid"], json!("0x123456789A")),
        with(&["func_list", "0", "sw_fid"], json!("000")),
        with(&["func_list", "0", "sw_fid"], json!("12G")),
        with(&["func_list", "0", "sw_fid"], json!(12345)),
        with(&["func_list", "0", "func_repl"], json!(3)),
        with(&["func_list", "0", "func_repl"], json!(0)),
        with(&["func_list", "0", "platform_id"], json!("greedy")),
        with(&["func_list", "0", "vid"], json!("10EE")),
        with(&["func_list", "0", "vid"], json!("123456789")),
        with(&["func_list", "0", "func_alias"], json!("")),
        with(&["platform_list", "0", "replicas"], json!(1024)),
        with(&["platform_list", "0", "replicas"], json!(1025)),
        with(&["platform_list", "0", "launch"], json!("process")),
        with(&["platform_list", "0", "launch"], json!("fork")),
        with(&["platform_list", "0", "backend"], json!("")),
        with(&["platform_list"], json!([])),
        with(&["host_list"], json!({})),
        json!({}),
    ];
    for doc in cases {
        let parsed = parse_config(doc.to_string().as_bytes());
        assert_eq!(v.is_valid(&doc), parsed.is_ok(), "{doc}: {parsed:?}");
    }
}
