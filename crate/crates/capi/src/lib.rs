//! C interface to the workbench so other languages can bind the pipeline.
//!
//! The contract, mirrored by `include/ulm.h`:
//! - Functions returning `int` yield `ULM_OK` (0) on success; any other code
//!   is a status constant and [`ulm_last_error`] holds a one-line message.
//! - The message buffer is thread-local and overwritten by the next failing
//!   call on the same thread.
//! - Strings handed out through `char **` out-parameters are released with
//!   [`ulm_string_free`]; handles with their matching `*_free`. Every free
//!   accepts a null pointer.
//! - No call unwinds across the boundary; a caught panic reports
//!   `ULM_ERR_PANIC`.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::os::raw::{c_char, c_int};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use ulm_core::cli::{init_threads, one_line};
use ulm_core::config::RunConfig;
use ulm_core::inference::Angiogram;
use ulm_core::pipeline::{read_angiogram_counts, Stage};
use ulm_core::Error;

pub const ULM_OK: c_int = 0;
pub const ULM_ERR_NULL_POINTER: c_int = 1;
pub const ULM_ERR_UTF8: c_int = 2;
pub const ULM_ERR_INVALID_ARGUMENT: c_int = 3;
pub const ULM_ERR_CONFIG: c_int = 4;
pub const ULM_ERR_IO: c_int = 5;
pub const ULM_ERR_FORMAT: c_int = 6;
pub const ULM_ERR_SHAPE: c_int = 7;
pub const ULM_ERR_GRAPH: c_int = 8;
pub const ULM_ERR_DIVERGENCE: c_int = 9;
pub const ULM_ERR_PANIC: c_int = 10;

pub const ULM_STAGE_GENVASC: c_int = 0;
pub const ULM_STAGE_DATASET: c_int = 1;
pub const ULM_STAGE_TRAIN: c_int = 2;
pub const ULM_STAGE_INFER: c_int = 3;
pub const ULM_STAGE_EXPERT: c_int = 4;
pub const ULM_STAGE_EVALUATE: c_int = 5;

/// Opaque run-configuration handle.
pub struct UlmConfig {
    inner: RunConfig,
}

/// Opaque accumulated-angiogram handle.
pub struct UlmAngiogram {
    inner: Angiogram,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn fail(code: c_int, message: impl Into<String>) -> c_int {
    let message = message.into().replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(message).expect("nul bytes stripped");
    });
    code
}

fn fail_with(err: &Error) -> c_int {
    fail(status_code(err), one_line(err))
}

fn status_code(err: &Error) -> c_int {
    match err {
        Error::ShapeMismatch { .. } => ULM_ERR_SHAPE,
        Error::InvalidArgument(_) => ULM_ERR_INVALID_ARGUMENT,
        Error::Config(_) => ULM_ERR_CONFIG,
        Error::GraphTargetUnreachable { .. } => ULM_ERR_GRAPH,
        Error::Divergence { .. } => ULM_ERR_DIVERGENCE,
        Error::Io { .. } => ULM_ERR_IO,
        Error::Format { .. } => ULM_ERR_FORMAT,
        Error::Block { source, .. } => status_code(source),
    }
}

fn guarded(body: impl FnOnce() -> c_int) -> c_int {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(code) => code,
        Err(_) => fail(ULM_ERR_PANIC, "internal panic"),
    }
}

/// # Safety
/// `ptr` must be null or point to a nul-terminated string.
unsafe fn text_arg<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, c_int> {
    if ptr.is_null() {
        return Err(fail(ULM_ERR_NULL_POINTER, format!("{what} is null")));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| fail(ULM_ERR_UTF8, format!("{what} is not valid UTF-8")))
}

fn export_string(text: String) -> *mut c_char {
    CString::new(text.replace('\0', " "))
        .expect("nul bytes stripped")
        .into_raw()
}

fn stage_of(code: c_int) -> Option<Stage> {
    match code {
        ULM_STAGE_GENVASC => Some(Stage::Genvasc),
        ULM_STAGE_DATASET => Some(Stage::Dataset),
        ULM_STAGE_TRAIN => Some(Stage::Train),
        ULM_STAGE_INFER => Some(Stage::Infer),
        ULM_STAGE_EXPERT => Some(Stage::Expert),
        ULM_STAGE_EVALUATE => Some(Stage::Evaluate),
        _ => None,
    }
}

/// Library version as a static nul-terminated string; never freed.
#[no_mangle]
pub extern "C" fn ulm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message for the most recent failure on this thread; the empty string
/// before any failure. The pointer stays valid until the next failing call
/// on the same thread.
#[no_mangle]
pub extern "C" fn ulm_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Releases a string returned through a `char **` out-parameter.
///
/// # Safety
/// `s` must be null or a pointer obtained from this library.
#[no_mangle]
pub unsafe extern "C" fn ulm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Pins the size of the global worker pool. Call at most once, before any
/// stage runs; 0 keeps the automatic size. One worker makes runs
/// bit-reproducible.
#[no_mangle]
pub extern "C" fn ulm_set_threads(n_threads: usize) -> c_int {
    guarded(|| match init_threads(n_threads) {
        Ok(()) => ULM_OK,
        Err(e) => fail_with(&e),
    })
}

/// Fresh configuration using the desk-scale defaults (minutes of compute).
#[no_mangle]
pub extern "C" fn ulm_config_desk() -> *mut UlmConfig {
    Box::into_raw(Box::new(UlmConfig { inner: RunConfig::desk() }))
}

/// Fresh configuration using the full-scale defaults (days of compute).
#[no_mangle]
pub extern "C" fn ulm_config_paper() -> *mut UlmConfig {
    Box::into_raw(Box::new(UlmConfig { inner: RunConfig::paper() }))
}

/// Parses and validates a configuration document.
///
/// # Safety
/// `text` must be null or nul-terminated; `out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn ulm_config_parse(
    text: *const c_char,
    out: *mut *mut UlmConfig,
) -> c_int {
    guarded(|| {
        if out.is_null() {
            return fail(ULM_ERR_NULL_POINTER, "out is null");
        }
        let text = match unsafe { text_arg(text, "text") } {
            Ok(t) => t,
            Err(code) => return code,
        };
        match RunConfig::from_toml_str(text, Path::new("(inline)")) {
            Ok(cfg) => {
                unsafe { *out = Box::into_raw(Box::new(UlmConfig { inner: cfg })) };
                ULM_OK
            }
            Err(e) => fail_with(&e),
        }
    })
}

/// Reads, parses, and validates a configuration file.
///
/// # Safety
/// `path` must be null or nul-terminated; `out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn ulm_config_load(
    path: *const c_char,
    out: *mut *mut UlmConfig,
) -> c_int {
    guarded(|| {
        if out.is_null() {
            return fail(ULM_ERR_NULL_POINTER, "out is null");
        }
        let path = match unsafe { text_arg(path, "path") } {
            Ok(p) => p,
            Err(code) => return code,
        };
        match RunConfig::load(Path::new(path)) {
            Ok(cfg) => {
                unsafe { *out = Box::into_raw(Box::new(UlmConfig { inner: cfg })) };
                ULM_OK
            }
            Err(e) => fail_with(&e),
        }
    })
}

/// # Safety
/// `cfg` must be null or a live configuration handle.
#[no_mangle]
pub unsafe extern "C" fn ulm_config_set_seed(cfg: *mut UlmConfig, seed: u64) -> c_int {
    guarded(|| match unsafe { cfg.as_mut() } {
        Some(handle) => {
            handle.inner.seed = seed;
            ULM_OK
        }
        None => fail(ULM_ERR_NULL_POINTER, "cfg is null"),
    })
}

/// # Safety
/// `cfg` must be null or a live handle; `dir` null or nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn ulm_config_set_out_dir(
    cfg: *mut UlmConfig,
    dir: *const c_char,
) -> c_int {
    guarded(|| {
        let dir = match unsafe { text_arg(dir, "dir") } {
            Ok(d) => d,
            Err(code) => return code,
        };
        match unsafe { cfg.as_mut() } {
            Some(handle) => {
                handle.inner.out_dir = PathBuf::from(dir);
                ULM_OK
            }
            None => fail(ULM_ERR_NULL_POINTER, "cfg is null"),
        }
    })
}

/// # Safety
/// `cfg` must be null or a live configuration handle.
#[no_mangle]
pub unsafe extern "C" fn ulm_config_validate(cfg: *const UlmConfig) -> c_int {
    guarded(|| match unsafe { cfg.as_ref() } {
        Some(handle) => match handle.inner.validate() {
            Ok(()) => ULM_OK,
            Err(e) => fail_with(&e),
        },
        None => fail(ULM_ERR_NULL_POINTER, "cfg is null"),
    })
}

/// Serializes the fully resolved configuration; feeding the text back
/// through `ulm_config_parse` reproduces the same handle.
///
/// # Safety
/// `cfg` must be null or a live handle; `out` null or writable.
#[no_mangle]
pub unsafe extern "C" fn ulm_config_to_toml(
    cfg: *const UlmConfig,
    out: *mut *mut c_char,
) -> c_int {
    guarded(|| {
        if out.is_null() {
            return fail(ULM_ERR_NULL_POINTER, "out is null");
        }
        match unsafe { cfg.as_ref() } {
            Some(handle) => {
                unsafe { *out = export_string(handle.inner.effective_toml()) };
                ULM_OK
            }
            None => fail(ULM_ERR_NULL_POINTER, "cfg is null"),
        }
    })
}

/// # Safety
/// `cfg` must be null or a live configuration handle; it is dead afterwards.
#[no_mangle]
pub unsafe extern "C" fn ulm_config_free(cfg: *mut UlmConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Runs one workflow stage (a `ULM_STAGE_*` code) against the configuration.
/// On success and a non-null `summary`, writes a one-line summary the caller
/// frees with `ulm_string_free`. A failing stage removes its partial outputs
/// before reporting, like the command-line front end.
///
/// # Safety
/// `cfg` must be null or a live handle; `summary` null or writable.
#[no_mangle]
pub unsafe extern "C" fn ulm_run_stage(
    cfg: *const UlmConfig,
    stage: c_int,
    summary: *mut *mut c_char,
) -> c_int {
    guarded(|| {
        let Some(handle) = (unsafe { cfg.as_ref() }) else {
            return fail(ULM_ERR_NULL_POINTER, "cfg is null");
        };
        let Some(stage) = stage_of(stage) else {
            return fail(ULM_ERR_INVALID_ARGUMENT, format!("unknown stage code {stage}"));
        };
        match stage.run(&handle.inner) {
            Ok(text) => {
                if !summary.is_null() {
                    unsafe { *summary = export_string(text) };
                }
                ULM_OK
            }
            Err(e) => {
                stage.remove_outputs(&handle.inner);
                fail_with(&e)
            }
        }
    })
}

/// Loads an accumulated angiogram from its plain-text counts file.
///
/// # Safety
/// `path` must be null or nul-terminated; `out` null or writable.
#[no_mangle]
pub unsafe extern "C" fn ulm_angiogram_read(
    path: *const c_char,
    out: *mut *mut UlmAngiogram,
) -> c_int {
    guarded(|| {
        if out.is_null() {
            return fail(ULM_ERR_NULL_POINTER, "out is null");
        }
        let path = match unsafe { text_arg(path, "path") } {
            Ok(p) => p,
            Err(code) => return code,
        };
        match read_angiogram_counts(Path::new(path)) {
            Ok(angio) => {
                unsafe { *out = Box::into_raw(Box::new(UlmAngiogram { inner: angio })) };
                ULM_OK
            }
            Err(e) => fail_with(&e),
        }
    })
}

/// # Safety
/// `a` must be null or a live angiogram handle.
#[no_mangle]
pub unsafe extern "C" fn ulm_angiogram_rows(a: *const UlmAngiogram) -> u32 {
    a.as_ref().map_or(0, |a| a.inner.n_z as u32)
}

/// # Safety
/// `a` must be null or a live angiogram handle.
#[no_mangle]
pub unsafe extern "C" fn ulm_angiogram_cols(a: *const UlmAngiogram) -> u32 {
    a.as_ref().map_or(0, |a| a.inner.n_x as u32)
}

/// Number of block masks accumulated into the map.
///
/// # Safety
/// `a` must be null or a live angiogram handle.
#[no_mangle]
pub unsafe extern "C" fn ulm_angiogram_blocks(a: *const UlmAngiogram) -> u32 {
    a.as_ref().map_or(0, |a| a.inner.n_blocks as u32)
}

/// Borrowed pointer to rows x cols accumulation counts in row-major order,
/// valid until the handle is freed. Null for a null handle.
///
/// # Safety
/// `a` must be null or a live angiogram handle.
#[no_mangle]
pub unsafe extern "C" fn ulm_angiogram_counts(a: *const UlmAngiogram) -> *const u32 {
    a.as_ref().map_or(std::ptr::null(), |a| a.inner.counts().as_ptr())
}

/// # Safety
/// `a` must be null or a live angiogram handle; it is dead afterwards.
#[no_mangle]
pub unsafe extern "C" fn ulm_angiogram_free(a: *mut UlmAngiogram) {
    if !a.is_null() {
        drop(Box::from_raw(a));
    }
}
