//! C ABI over the guided-co library.
//!
//! Instances and checkpoints are opaque handles created and freed here;
//! every fallible call returns a [`GcoStatus`] and stores a thread-local
//! message retrievable with [`gco_last_error`]. Solutions are written into
//! caller-provided buffers sized via [`gco_instance_edge_count`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::ptr;

use guided_co::harness::{solve, Checkpoint, DecoderSpec};
use guided_co::ProblemInstance;

/// Result codes of the C API.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GcoStatus {
    /// Success.
    Ok = 0,
    /// A pointer argument was null or otherwise unusable.
    InvalidArgument = 1,
    /// Input could not be parsed (instance JSON, decoder name).
    ParseError = 2,
    /// Files or contents were missing or inconsistent.
    DataError = 3,
    /// The solver or model failed.
    SolveError = 4,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(msg).unwrap_or_default();
    });
}

/// Message of the most recent failure on this thread. The pointer stays
/// valid until the next failing call on the same thread. Never null.
#[no_mangle]
pub extern "C" fn gco_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Opaque problem instance.
pub struct GcoInstance {
    inner: ProblemInstance,
}

/// Opaque model checkpoint.
pub struct GcoCheckpoint {
    inner: Checkpoint,
}

unsafe fn cstr_arg<'a>(ptr: *const c_char) -> Result<&'a str, GcoStatus> {
    if ptr.is_null() {
        set_error("null string argument");
        return Err(GcoStatus::InvalidArgument);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error("string argument is not valid UTF-8");
        GcoStatus::InvalidArgument
    })
}

/// Parses one dataset JSON line into an instance handle.
///
/// # Safety
/// `json` must be a valid NUL-terminated string and `out` a valid pointer.
/// A returned handle must be released with [`gco_instance_free`].
#[no_mangle]
pub unsafe extern "C" fn gco_instance_parse_json(
    json: *const c_char,
    out: *mut *mut GcoInstance,
) -> GcoStatus {
    if out.is_null() {
        set_error("null output pointer");
        return GcoStatus::InvalidArgument;
    }
    *out = ptr::null_mut();
    let text = match cstr_arg(json) {
        Ok(t) => t,
        Err(status) => return status,
    };
    match ProblemInstance::from_json_line(text) {
        Ok(inner) => {
            *out = Box::into_raw(Box::new(GcoInstance { inner }));
            GcoStatus::Ok
        }
        Err(err) => {
            set_error(err.to_string());
            GcoStatus::ParseError
        }
    }
}

/// # Safety
/// `inst` must be a handle from [`gco_instance_parse_json`] not yet freed,
/// or null (a no-op).
#[no_mangle]
pub unsafe extern "C" fn gco_instance_free(inst: *mut GcoInstance) {
    if !inst.is_null() {
        drop(Box::from_raw(inst));
    }
}

/// Number of edges (length of indicator buffers). Returns 0 on null.
///
/// # Safety
/// `inst` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn gco_instance_edge_count(inst: *const GcoInstance) -> usize {
    if inst.is_null() {
        return 0;
    }
    (*inst).inner.graph().edge_count()
}

/// Number of nodes. Returns 0 on null.
///
/// # Safety
/// `inst` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn gco_instance_node_count(inst: *const GcoInstance) -> usize {
    if inst.is_null() {
        return 0;
    }
    (*inst).inner.graph().node_count()
}

/// Loads a checkpoint file written by `guidedco train`.
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` a valid pointer.
/// A returned handle must be released with [`gco_checkpoint_free`].
#[no_mangle]
pub unsafe extern "C" fn gco_checkpoint_load(
    path: *const c_char,
    out: *mut *mut GcoCheckpoint,
) -> GcoStatus {
    if out.is_null() {
        set_error("null output pointer");
        return GcoStatus::InvalidArgument;
    }
    *out = ptr::null_mut();
    let path = match cstr_arg(path) {
        Ok(p) => p,
        Err(status) => return status,
    };
    match Checkpoint::load(Path::new(path)) {
        Ok(inner) => {
            *out = Box::into_raw(Box::new(GcoCheckpoint { inner }));
            GcoStatus::Ok
        }
        Err(err) => {
            set_error(err.to_string());
            GcoStatus::DataError
        }
    }
}

/// # Safety
/// `ckpt` must be a handle from [`gco_checkpoint_load`] not yet freed, or
/// null (a no-op).
#[no_mangle]
pub unsafe extern "C" fn gco_checkpoint_free(ckpt: *mut GcoCheckpoint) {
    if !ckpt.is_null() {
        drop(Box::from_raw(ckpt));
    }
}

/// Solves an instance with the named decoder (`unguided`,
/// `unguided-best-of-N`, `guided-single`, `guided-best-of-N`, `greedy`,
/// `beam-N`, optionally suffixed `+2opt`). `ckpt` may be null for unguided
/// decoders. Writes the objective to `out_objective` and, when
/// `out_selected` is non-null, one 0/1 byte per edge (canonical order,
/// buffer length `gco_instance_edge_count`).
///
/// # Safety
/// `inst` must be a live instance handle; `ckpt` a live checkpoint handle
/// or null; `decoder` a valid NUL-terminated string; `out_objective` a
/// valid pointer; `out_selected` null or valid for `edge_count` bytes.
#[no_mangle]
pub unsafe extern "C" fn gco_solve(
    inst: *const GcoInstance,
    ckpt: *const GcoCheckpoint,
    decoder: *const c_char,
    seed: u64,
    out_objective: *mut f64,
    out_selected: *mut u8,
) -> GcoStatus {
    if inst.is_null() || out_objective.is_null() {
        set_error("null instance or output pointer");
        return GcoStatus::InvalidArgument;
    }
    let decoder_str = match cstr_arg(decoder) {
        Ok(d) => d,
        Err(status) => return status,
    };
    let decoder: DecoderSpec = match decoder_str.parse() {
        Ok(d) => d,
        Err(err) => {
            set_error(err);
            return GcoStatus::ParseError;
        }
    };
    let instance = &(*inst).inner;
    let checkpoint = if ckpt.is_null() {
        None
    } else {
        Some(&(*ckpt).inner)
    };
    match solve(checkpoint, instance, &decoder, seed) {
        Ok(output) => {
            *out_objective = output.objective;
            if !out_selected.is_null() {
                let dst = std::slice::from_raw_parts_mut(out_selected, output.selected.len());
                dst.copy_from_slice(&output.selected);
            }
            GcoStatus::Ok
        }
        Err(err) => {
            set_error(err.to_string());
            GcoStatus::SolveError
        }
    }
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn gco_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}
