//! Exercises the exported C ABI exactly as a foreign caller would: through
//! the extern "C" functions, raw pointers, and status codes.

use std::ffi::{CStr, CString};
use std::os::raw::c_char;
use std::path::{Path, PathBuf};
use std::ptr;

use medigraph_ffi::{
    mg_diagnostic_score, mg_engine_build_graph, mg_engine_free, mg_engine_new,
    mg_engine_recommend, mg_last_error, mg_score_sets, mg_string_free, mg_version, MgEngine,
    MgStatus,
};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(mg_last_error()) }.to_string_lossy().into_owned()
}

fn take_string(ptr: *mut c_char) -> String {
    assert!(!ptr.is_null());
    let value = unsafe { CStr::from_ptr(ptr) }.to_string_lossy().into_owned();
    unsafe { mg_string_free(ptr) };
    value
}

// Record-mode config over the rule backends: self-contained, no network.
fn write_config(tmp: &Path) -> CString {
    let fixtures = fixtures();
    let config = format!(
        r#"
[paths]
kg_triples = "{fx}/kg_triples.tsv"
kg_synonyms = "{fx}/kg_synonyms.json"
kg_types = "{fx}/kg_types.json"
lexicon = "{fx}/lexicon.json"
search_fixtures = "{fx}/search_fixtures.json"

[clients]
cache_mode = "record"
cache_path = "{tmp}/cache.jsonl"

[output]
dir = "{tmp}/out"
"#,
        fx = fixtures.display(),
        tmp = tmp.display(),
    );
    let path = tmp.join("config.toml");
    std::fs::write(&path, config).unwrap();
    CString::new(path.to_str().unwrap()).unwrap()
}

fn new_engine(tmp: &Path) -> *mut MgEngine {
    let config_path = write_config(tmp);
    let mut engine: *mut MgEngine = ptr::null_mut();
    let status = unsafe { mg_engine_new(config_path.as_ptr(), &mut engine) };
    assert_eq!(status, MgStatus::Ok, "{}", last_error());
    assert!(!engine.is_null());
    engine
}

#[test]
fn version_is_a_static_string() {
    let version = unsafe { CStr::from_ptr(mg_version()) }.to_str().unwrap();
    assert_eq!(version, env!("CARGO_PKG_VERSION"));
}

#[test]
fn engine_lifecycle_and_recommendation() {
    let tmp = tempfile::tempdir().unwrap();
    let engine = new_engine(tmp.path());

    let dialogue = CString::new(
        r#"{"id":"ffi-1","department":"respiratory","turns":[{"role":"patient","text":"I caught a cold and I have had a cough for a week."},{"role":"doctor","text":"How severe?"},{"role":"patient","text":"Bad. What should I take for the cold?"}],"gold_medications":null}"#,
    )
    .unwrap();
    let mut out: *mut c_char = ptr::null_mut();
    let status = unsafe { mg_engine_recommend(engine, dialogue.as_ptr(), &mut out) };
    assert_eq!(status, MgStatus::Ok, "{}", last_error());
    let row: serde_json::Value = serde_json::from_str(&take_string(out)).unwrap();
    assert_eq!(row["id"], "ffi-1");
    let medications: Vec<&str> =
        row["medications"].as_array().unwrap().iter().map(|m| m.as_str().unwrap()).collect();
    assert!(medications.contains(&"Aspirin"), "{medications:?}");

    unsafe { mg_engine_free(engine) };
}

#[test]
fn graph_json_round_trips_through_the_boundary() {
    let tmp = tempfile::tempdir().unwrap();
    let engine = new_engine(tmp.path());
    let dialogue = CString::new(
        r#"{"id":"ffi-2","department":null,"turns":[{"role":"patient","text":"I am pregnant and my skin itching is unbearable."}],"gold_medications":null}"#,
    )
    .unwrap();
    let mut out: *mut c_char = ptr::null_mut();
    let status = unsafe { mg_engine_build_graph(engine, dialogue.as_ptr(), &mut out) };
    assert_eq!(status, MgStatus::Ok, "{}", last_error());
    let graph =
        medigraph_core::patient_graph::PatientGraph::from_json(&take_string(out)).unwrap();
    assert!(graph.concept_nodes().contains_key("pregnancy"));
    assert!(graph.concept_nodes().contains_key("itching"));
    unsafe { mg_engine_free(engine) };
}

#[test]
fn null_arguments_are_invalid_not_fatal() {
    let mut engine: *mut MgEngine = ptr::null_mut();
    let status = unsafe { mg_engine_new(ptr::null(), &mut engine) };
    assert_eq!(status, MgStatus::InvalidArgument);
    assert!(last_error().contains("config_path"));

    let mut out: *mut c_char = ptr::null_mut();
    let dialogue = CString::new("{}").unwrap();
    let status = unsafe { mg_engine_recommend(ptr::null(), dialogue.as_ptr(), &mut out) };
    assert_eq!(status, MgStatus::InvalidArgument);

    // Freeing nulls is a no-op.
    unsafe {
        mg_engine_free(ptr::null_mut());
        mg_string_free(ptr::null_mut());
    }
}

#[test]
fn bad_config_path_reports_config_error() {
    let missing = CString::new("/definitely/not/here.toml").unwrap();
    let mut engine: *mut MgEngine = ptr::null_mut();
    let status = unsafe { mg_engine_new(missing.as_ptr(), &mut engine) };
    assert_eq!(status, MgStatus::ConfigError);
    assert!(engine.is_null());
    assert!(last_error().contains("cannot read"), "{}", last_error());
}

#[test]
fn malformed_dialogue_json_is_invalid_argument() {
    let tmp = tempfile::tempdir().unwrap();
    let engine = new_engine(tmp.path());
    let broken = CString::new("not json at all").unwrap();
    let mut out: *mut c_char = ptr::null_mut();
    let status = unsafe { mg_engine_recommend(engine, broken.as_ptr(), &mut out) };
    assert_eq!(status, MgStatus::InvalidArgument);
    assert!(last_error().contains("dialogue json"), "{}", last_error());
    unsafe { mg_engine_free(engine) };
}

#[test]
fn score_sets_matches_known_values() {
    let gold = CString::new(r#"["A","B"]"#).unwrap();
    let predicted = CString::new(r#"["B","C"]"#).unwrap();
    let mut out: *mut c_char = ptr::null_mut();
    let status = unsafe { mg_score_sets(gold.as_ptr(), predicted.as_ptr(), false, &mut out) };
    assert_eq!(status, MgStatus::Ok, "{}", last_error());
    let score: serde_json::Value = serde_json::from_str(&take_string(out)).unwrap();
    assert!((score["jaccard"].as_f64().unwrap() - 1.0 / 3.0).abs() < 1e-12);
    assert!((score["f1"].as_f64().unwrap() - 0.5).abs() < 1e-12);

    // Strict mode refuses an empty gold set; lenient scores it 1.0.
    let empty = CString::new("[]").unwrap();
    let mut out: *mut c_char = ptr::null_mut();
    let status = unsafe { mg_score_sets(empty.as_ptr(), empty.as_ptr(), false, &mut out) };
    assert_eq!(status, MgStatus::PipelineError);
    let status = unsafe { mg_score_sets(empty.as_ptr(), empty.as_ptr(), true, &mut out) };
    assert_eq!(status, MgStatus::Ok);
    let score: serde_json::Value = serde_json::from_str(&take_string(out)).unwrap();
    assert_eq!(score["jaccard"], 1.0);
}

#[test]
fn diagnostic_score_through_the_boundary() {
    let mut score = 0.0f64;
    let status = unsafe { mg_diagnostic_score(2, 4, 2, 4, &mut score) };
    assert_eq!(status, MgStatus::Ok);
    assert!((score - 0.5).abs() < 1e-12);

    let status = unsafe { mg_diagnostic_score(5, 4, 0, 1, &mut score) };
    assert_eq!(status, MgStatus::InvalidArgument);
    assert!(last_error().contains("hits exceed totals"));
}

#[test]
fn generated_header_declares_the_surface() {
    let header_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/medigraph.h");
    let header = std::fs::read_to_string(&header_path).expect("header generated by build.rs");
    for declaration in [
        "typedef struct MgEngine MgEngine;",
        "mg_engine_new",
        "mg_engine_free",
        "mg_engine_recommend",
        "mg_score_sets",
        "mg_string_free",
        "mg_last_error",
        "MG_STATUS_OK",
    ] {
        assert!(header.contains(declaration), "header missing {declaration}");
    }
}
