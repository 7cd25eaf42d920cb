//! C ABI over the engine: opaque handles, status codes, and JSON strings at
//! the boundary so any language with a C FFI can drive the pipeline.
//!
//! Conventions:
//! - Functions return [`MgStatus`]; outputs go through out-pointers.
//! - Returned strings are NUL-terminated, owned by the caller, and must be
//!   released with [`mg_string_free`].
//! - On any non-OK status, [`mg_last_error`] yields a thread-local message
//!   valid until the next call on the same thread.

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use medigraph_core::config::PipelineConfig;
use medigraph_core::dialogue::load_dialogues;
use medigraph_core::eval::{diagnostic_score, score_dialogue, EvalMode};
use medigraph_core::pipeline::Engine;

/// Result of every FFI call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MgStatus {
    Ok = 0,
    /// A null pointer, malformed UTF-8, or otherwise unusable argument.
    InvalidArgument = 1,
    /// Configuration loading or validation failed.
    ConfigError = 2,
    /// The pipeline failed while processing the dialogue.
    PipelineError = 3,
    /// A panic was caught at the boundary.
    Panic = 4,
}

/// Opaque engine handle. Safe to share across threads; every exported
/// operation takes it by shared reference.
pub struct MgEngine {
    inner: Engine,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: impl AsRef<str>) {
    let sanitized = message.as_ref().replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn guard<F: FnOnce() -> MgStatus>(body: F) -> MgStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(panic) => {
            let message = panic
                .downcast_ref::<String>()
                .map(String::as_str)
                .or_else(|| panic.downcast_ref::<&str>().copied())
                .unwrap_or("panic at FFI boundary");
            set_error(message);
            MgStatus::Panic
        }
    }
}

// SAFETY: callers promise `ptr` is either null or a valid NUL-terminated
// string for the duration of the call.
unsafe fn required_str<'a>(ptr: *const c_char, name: &str) -> Result<&'a str, MgStatus> {
    if ptr.is_null() {
        set_error(format!("{name} must not be null"));
        return Err(MgStatus::InvalidArgument);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error(format!("{name} is not valid UTF-8"));
        MgStatus::InvalidArgument
    })
}

fn export_string(out: *mut *mut c_char, value: String) -> MgStatus {
    let Ok(c_string) = CString::new(value.replace('\0', " ")) else {
        set_error("output contained an interior NUL");
        return MgStatus::PipelineError;
    };
    unsafe { *out = c_string.into_raw() };
    MgStatus::Ok
}

fn parse_dialogue(json: &str) -> Result<medigraph_core::dialogue::Dialogue, MgStatus> {
    let mut dialogues = load_dialogues(json.as_bytes()).map_err(|e| {
        set_error(format!("dialogue json: {e}"));
        MgStatus::InvalidArgument
    })?;
    if dialogues.len() != 1 {
        set_error(format!("expected exactly one dialogue record, found {}", dialogues.len()));
        return Err(MgStatus::InvalidArgument);
    }
    Ok(dialogues.remove(0))
}

/// Load a pipeline engine from a TOML configuration file.
///
/// # Safety
/// `config_path` must be null or a valid NUL-terminated string;
/// `out_engine` must point to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn mg_engine_new(
    config_path: *const c_char,
    out_engine: *mut *mut MgEngine,
) -> MgStatus {
    guard(|| {
        if out_engine.is_null() {
            set_error("out_engine must not be null");
            return MgStatus::InvalidArgument;
        }
        *out_engine = ptr::null_mut();
        let path = match required_str(config_path, "config_path") {
            Ok(path) => path,
            Err(status) => return status,
        };
        let config = match PipelineConfig::load(path) {
            Ok(config) => config,
            Err(e) => {
                set_error(e.to_string());
                return MgStatus::ConfigError;
            }
        };
        match Engine::load(config) {
            Ok(engine) => {
                *out_engine = Box::into_raw(Box::new(MgEngine { inner: engine }));
                MgStatus::Ok
            }
            Err(e) => {
                set_error(e.to_string());
                MgStatus::ConfigError
            }
        }
    })
}

/// Release an engine handle. Null is a no-op.
///
/// # Safety
/// `engine` must be null or a pointer returned by [`mg_engine_new`] that has
/// not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn mg_engine_free(engine: *mut MgEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

unsafe fn engine_ref<'a>(engine: *const MgEngine) -> Result<&'a Engine, MgStatus> {
    if engine.is_null() {
        set_error("engine must not be null");
        return Err(MgStatus::InvalidArgument);
    }
    Ok(&(*engine).inner)
}

/// Run the full pipeline on one dialogue (a single JSON record in the
/// dialogue wire format). The result JSON carries `id`, `response`,
/// `medications`, and `warnings`.
///
/// # Safety
/// Pointer arguments follow the module conventions.
#[no_mangle]
pub unsafe extern "C" fn mg_engine_recommend(
    engine: *const MgEngine,
    dialogue_json: *const c_char,
    out_result_json: *mut *mut c_char,
) -> MgStatus {
    guard(|| {
        if out_result_json.is_null() {
            set_error("out_result_json must not be null");
            return MgStatus::InvalidArgument;
        }
        let engine = match engine_ref(engine) {
            Ok(engine) => engine,
            Err(status) => return status,
        };
        let json = match required_str(dialogue_json, "dialogue_json") {
            Ok(json) => json,
            Err(status) => return status,
        };
        let dialogue = match parse_dialogue(json) {
            Ok(dialogue) => dialogue,
            Err(status) => return status,
        };
        match recommend_row(engine, &dialogue) {
            Ok(row) => export_string(out_result_json, row),
            Err(e) => {
                set_error(e.to_string());
                MgStatus::PipelineError
            }
        }
    })
}

fn recommend_row(
    engine: &Engine,
    dialogue: &medigraph_core::dialogue::Dialogue,
) -> medigraph_core::error::Result<String> {
    let (result, _) = engine.recommend_dialogue(dialogue)?;
    Ok(serde_json::to_string(&serde_json::json!({
        "id": dialogue.id,
        "response": result.response_text,
        "medications": result.medications,
        "warnings": result.warnings,
    }))?)
}

/// Run stage-one extraction only; the output JSON carries the mentions,
/// slot values, and patient characteristics.
///
/// # Safety
/// Pointer arguments follow the module conventions.
#[no_mangle]
pub unsafe extern "C" fn mg_engine_extract(
    engine: *const MgEngine,
    dialogue_json: *const c_char,
    out_dump_json: *mut *mut c_char,
) -> MgStatus {
    guard(|| {
        if out_dump_json.is_null() {
            set_error("out_dump_json must not be null");
            return MgStatus::InvalidArgument;
        }
        let engine = match engine_ref(engine) {
            Ok(engine) => engine,
            Err(status) => return status,
        };
        let json = match required_str(dialogue_json, "dialogue_json") {
            Ok(json) => json,
            Err(status) => return status,
        };
        let dialogue = match parse_dialogue(json) {
            Ok(dialogue) => dialogue,
            Err(status) => return status,
        };
        match engine
            .extract_dialogue(&dialogue)
            .and_then(|dump| Ok(serde_json::to_string(&dump)?))
        {
            Ok(dump) => export_string(out_dump_json, dump),
            Err(e) => {
                set_error(e.to_string());
                MgStatus::PipelineError
            }
        }
    })
}

/// Build the patient-centric graph for one dialogue and return its JSON
/// serialization.
///
/// # Safety
/// Pointer arguments follow the module conventions.
#[no_mangle]
pub unsafe extern "C" fn mg_engine_build_graph(
    engine: *const MgEngine,
    dialogue_json: *const c_char,
    out_graph_json: *mut *mut c_char,
) -> MgStatus {
    guard(|| {
        if out_graph_json.is_null() {
            set_error("out_graph_json must not be null");
            return MgStatus::InvalidArgument;
        }
        let engine = match engine_ref(engine) {
            Ok(engine) => engine,
            Err(status) => return status,
        };
        let json = match required_str(dialogue_json, "dialogue_json") {
            Ok(json) => json,
            Err(status) => return status,
        };
        let dialogue = match parse_dialogue(json) {
            Ok(dialogue) => dialogue,
            Err(status) => return status,
        };
        let graph_json = engine
            .extract_dialogue(&dialogue)
            .map(|dump| engine.build_graph(&dump))
            .and_then(|graph| graph.to_json());
        match graph_json {
            Ok(graph) => export_string(out_graph_json, graph),
            Err(e) => {
                set_error(e.to_string());
                MgStatus::PipelineError
            }
        }
    })
}

/// Score a predicted medication set against a gold set. Inputs are JSON
/// string arrays; the output carries jaccard, precision, recall, and f1.
/// `lenient` accepts the empty/empty pair as a perfect score.
///
/// # Safety
/// Pointer arguments follow the module conventions.
#[no_mangle]
pub unsafe extern "C" fn mg_score_sets(
    gold_json: *const c_char,
    predicted_json: *const c_char,
    lenient: bool,
    out_score_json: *mut *mut c_char,
) -> MgStatus {
    guard(|| {
        if out_score_json.is_null() {
            set_error("out_score_json must not be null");
            return MgStatus::InvalidArgument;
        }
        let parse_set = |ptr: *const c_char, name: &str| -> Result<BTreeSet<String>, MgStatus> {
            let json = required_str(ptr, name)?;
            serde_json::from_str(json).map_err(|e| {
                set_error(format!("{name}: {e}"));
                MgStatus::InvalidArgument
            })
        };
        let gold = match parse_set(gold_json, "gold_json") {
            Ok(set) => set,
            Err(status) => return status,
        };
        let predicted = match parse_set(predicted_json, "predicted_json") {
            Ok(set) => set,
            Err(status) => return status,
        };
        let mode = if lenient { EvalMode::Lenient } else { EvalMode::Strict };
        match score_dialogue("ffi", &gold, &predicted, mode)
            .and_then(|score| Ok(serde_json::to_string(&score)?))
        {
            Ok(score) => export_string(out_score_json, score),
            Err(e) => {
                set_error(e.to_string());
                MgStatus::PipelineError
            }
        }
    })
}

/// Weighted diagnostic score over an interviewing checklist.
///
/// # Safety
/// `out_score` must point to writable storage for one double.
#[no_mangle]
pub unsafe extern "C" fn mg_diagnostic_score(
    aspects_hits: u32,
    aspects_total: u32,
    info_hits: u32,
    info_total: u32,
    out_score: *mut f64,
) -> MgStatus {
    guard(|| {
        if out_score.is_null() {
            set_error("out_score must not be null");
            return MgStatus::InvalidArgument;
        }
        match diagnostic_score(
            aspects_hits as usize,
            aspects_total as usize,
            info_hits as usize,
            info_total as usize,
        ) {
            Ok(result) => {
                *out_score = result.score;
                MgStatus::Ok
            }
            Err(e) => {
                set_error(e.to_string());
                MgStatus::InvalidArgument
            }
        }
    })
}

/// Release a string returned by this library. Null is a no-op.
///
/// # Safety
/// `s` must be null or a pointer previously returned through an out-param of
/// this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mg_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Message for the most recent failure on this thread. The pointer stays
/// valid until the next library call on the same thread; do not free it.
#[no_mangle]
pub extern "C" fn mg_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static string; do not free it.
#[no_mangle]
pub extern "C" fn mg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}
