use halo_bench::report::{document, Document, CSV_HEADER, REPORT_SCHEMA};
use halo_bench::{bench_context, emit_report, run_bench_in, BenchReport, BenchSpec, Format};

fn reports() -> Vec<BenchReport> {
    let ctx = bench_context("cpu_opt").unwrap();
    let out = ["VDP", "EWMM"]
        .iter()
        .map(|k| run_bench_in(&ctx, &BenchSpec::new(*k, "cpu_opt", 64 << 10).reps(5).warmups(0)).unwrap())
        .collect();
    ctx.finalize().unwrap();
    out
}

#[test]
fn csv_has_the_fixed_header_and_one_row_per_report() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.csv");
    let reports = reports();
    emit_report(&reports, Format::Csv, &path).unwrap();
    let mut rd = csv::Reader::from_path(&path).unwrap();
    assert_eq!(rd.headers().unwrap().iter().collect::<Vec<_>>(), CSV_HEADER);
    let rows: Vec<_> = rd.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(&rows[0][0], "VDP");
    assert_eq!(&rows[1][1], "cpu_opt");
    let t4: f64 = rows[1][7].parse().unwrap();
    assert_eq!(t4, reports[1].median.t4);
}

#[test]
fn empty_csv_is_just_the_header() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.csv");
    emit_report(&[], Format::Csv, &path).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap(), format!("{}\n", CSV_HEADER.join(",")));
}

#[test]
fn json_validates_against_the_schema_and_roundtrips() {
    let schema: serde_json::Value = serde_json::from_str(REPORT_SCHEMA).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.json");
    let reports = reports();
    emit_report(&reports, Format::Json, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let value: serde_json::Value = serde_json::from_str(&text).unwrap();
    let errors: Vec<String> = validator.iter_errors(&value).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{errors:?}");
    let back: Document = serde_json::from_str(&text).unwrap();
    assert_eq!(back, document(&reports));

    emit_report(&[], Format::Json, &path).unwrap();
    let empty: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert!(validator.is_valid(&empty));
}

#[test]
fn schema_rejects_malformed_rows() {
    let schema: serde_json::Value = serde_json::from_str(REPORT_SCHEMA).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let mut doc = serde_json::to_value(document(&reports())).unwrap();
    doc["rows"][0]["portability_score"] = serde_json::json!(1.5);
    assert!(!validator.is_valid(&doc));
    doc["rows"][0]["portability_score"] = serde_json::json!(1.0);
    doc["rows"][0]["reps"] = serde_json::json!(2);
    assert!(!validator.is_valid(&doc));
}

#[test]
fn unwritable_path_surfaces_the_io_error() {
    let err = emit_report(&[], Format::Csv, std::path::Path::new("/nonexistent/dir/r.csv")).unwrap_err();
    assert_eq!(err.kind(), std::io::ErrorKind::NotFound);
}
