//! C interface to the modcl engine.
//!
//! Every function is safe to call from any thread.  Fallible calls return a
//! [`ModclStatus`]; on failure the message is kept per thread and can be
//! fetched with [`modcl_last_error`].  Strings handed out by this library are
//! owned by the caller and must be released with [`modcl_string_free`];
//! stream handles with [`modcl_stream_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use modcl::config::ExperimentConfig;
use modcl::error::Error;
use modcl::runner::run_experiment;
use modcl::streams::{
    build_stream_with_ways, generate_all, write_stream_dir, Scale, Stream, StreamKind,
};

/// Outcome of a fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModclStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// A value outside its documented domain (bad kind token, bad ways, ...).
    InvalidArgument = 3,
    /// The experiment configuration failed to parse or validate; the message
    /// lists every problem found.
    Config = 4,
    Io = 5,
    /// Training or evaluation failed after it started.
    Runtime = 6,
    /// A bug: the engine panicked behind the boundary.
    Panic = 7,
}

/// A generated task stream, opaque to C.
pub struct ModclStream {
    inner: Stream,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(err: &Error) -> ModclStatus {
    match err {
        Error::Config(_) | Error::Json(_) => ModclStatus::Config,
        Error::Invalid(_) | Error::Dimension(_) | Error::Path(_) => ModclStatus::InvalidArgument,
        Error::Io(_) => ModclStatus::Io,
        Error::Frozen(_) | Error::Protocol(_) | Error::Format { .. } => ModclStatus::Runtime,
    }
}

fn fail(err: &Error) -> ModclStatus {
    set_error(err.to_string());
    status_of(err)
}

/// Runs `f` with panics converted into `ModclStatus::Panic`.
fn guarded(f: impl FnOnce() -> ModclStatus) -> ModclStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".to_string());
            set_error(format!("internal panic: {msg}"));
            ModclStatus::Panic
        }
    }
}

/// Borrows a C string argument, recording an error on null or bad UTF-8.
unsafe fn utf8_arg<'a>(ptr: *const c_char, name: &str) -> Result<&'a str, ModclStatus> {
    if ptr.is_null() {
        set_error(format!("{name} is null"));
        return Err(ModclStatus::NullPointer);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error(format!("{name} is not valid UTF-8"));
        ModclStatus::InvalidUtf8
    })
}

fn give_string(out: *mut *mut c_char, s: String) -> ModclStatus {
    let c = CString::new(s.replace('\0', " ")).unwrap();
    unsafe { *out = c.into_raw() };
    ModclStatus::Ok
}

/// Version of the underlying engine, a static string; do not free.
#[no_mangle]
pub extern "C" fn modcl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message of the most recent failure on this thread, or null if the last
/// call succeeded.  The caller owns the returned string.
#[no_mangle]
pub extern "C" fn modcl_last_error() -> *mut c_char {
    LAST_ERROR.with(|e| match &*e.borrow() {
        Some(c) => c.clone().into_raw(),
        None => std::ptr::null_mut(),
    })
}

/// Releases a string obtained from this library.  Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn modcl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Synthesizes a task stream.
///
/// `kind` is one of `S-`, `S+`, `Sin`, `Sout`, `Spl`, `Slong`; `scale` is
/// `paper` or `desk`; `ways` is the classes per task.  On success `*out`
/// holds a handle the caller must release with [`modcl_stream_free`].
#[no_mangle]
pub unsafe extern "C" fn modcl_stream_generate(
    kind: *const c_char,
    scale: *const c_char,
    seed: u64,
    ways: usize,
    out: *mut *mut ModclStream,
) -> ModclStatus {
    guarded(|| {
        clear_error();
        if out.is_null() {
            set_error("out is null".to_string());
            return ModclStatus::NullPointer;
        }
        let kind = match utf8_arg(kind, "kind") {
            Ok(s) => s,
            Err(st) => return st,
        };
        let scale = match utf8_arg(scale, "scale") {
            Ok(s) => s,
            Err(st) => return st,
        };
        let kind = match StreamKind::parse(kind) {
            Ok(k) => k,
            Err(e) => return fail(&e),
        };
        let scale = match Scale::parse(scale) {
            Ok(s) => s,
            Err(e) => return fail(&e),
        };
        match build_stream_with_ways(kind, scale, seed, ways) {
            Ok(stream) => {
                *out = Box::into_raw(Box::new(ModclStream { inner: stream }));
                ModclStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Number of tasks in the stream; 0 if `stream` is null.
#[no_mangle]
pub unsafe extern "C" fn modcl_stream_task_count(stream: *const ModclStream) -> usize {
    if stream.is_null() {
        return 0;
    }
    (*stream).inner.tasks.len()
}

/// Serializes the stream manifest (kind, scale, seed, per-task specs) as
/// JSON into `*out_json`; free it with [`modcl_string_free`].
#[no_mangle]
pub unsafe extern "C" fn modcl_stream_manifest_json(
    stream: *const ModclStream,
    out_json: *mut *mut c_char,
) -> ModclStatus {
    guarded(|| {
        clear_error();
        if stream.is_null() || out_json.is_null() {
            set_error("stream or out_json is null".to_string());
            return ModclStatus::NullPointer;
        }
        match serde_json::to_string_pretty(&(*stream).inner) {
            Ok(json) => give_string(out_json, json),
            Err(e) => fail(&Error::Json(e)),
        }
    })
}

/// Materializes the stream's datasets and writes the manifest plus per-task
/// CSV files under `dir`, the same layout the CLI's `gen-stream` produces.
#[no_mangle]
pub unsafe extern "C" fn modcl_stream_write(
    stream: *const ModclStream,
    dir: *const c_char,
) -> ModclStatus {
    guarded(|| {
        clear_error();
        if stream.is_null() {
            set_error("stream is null".to_string());
            return ModclStatus::NullPointer;
        }
        let dir = match utf8_arg(dir, "dir") {
            Ok(s) => s,
            Err(st) => return st,
        };
        let inner = &(*stream).inner;
        let datasets = generate_all(inner);
        match write_stream_dir(Path::new(dir), inner, &datasets) {
            Ok(()) => ModclStatus::Ok,
            Err(e) => fail(&e),
        }
    })
}

/// Releases a stream handle.  Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn modcl_stream_free(stream: *mut ModclStream) {
    if !stream.is_null() {
        drop(Box::from_raw(stream));
    }
}

/// Runs one experiment from a JSON configuration (same schema as the CLI's
/// `run --config` file) and writes the run directory it names.  On success
/// `*out_summary_json` holds the run summary as JSON; free it with
/// [`modcl_string_free`].
#[no_mangle]
pub unsafe extern "C" fn modcl_run_experiment(
    config_json: *const c_char,
    out_summary_json: *mut *mut c_char,
) -> ModclStatus {
    guarded(|| {
        clear_error();
        if out_summary_json.is_null() {
            set_error("out_summary_json is null".to_string());
            return ModclStatus::NullPointer;
        }
        let text = match utf8_arg(config_json, "config_json") {
            Ok(s) => s,
            Err(st) => return st,
        };
        let cfg = match ExperimentConfig::from_json(text) {
            Ok(c) => c,
            Err(e) => return fail(&e),
        };
        let report = match run_experiment(&cfg) {
            Ok(r) => r,
            Err(e) => return fail(&e),
        };
        match serde_json::to_string_pretty(&report.summary) {
            Ok(json) => give_string(out_summary_json, json),
            Err(e) => fail(&Error::Json(e)),
        }
    })
}
