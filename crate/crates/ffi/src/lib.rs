//! C ABI over the napool library.
//!
//! Every function returns a status code (`NAPOOL_OK` on success) and writes
//! results through out-pointers. On failure, `napool_last_error` returns a
//! message for the calling thread. Strings and byte buffers handed out by
//! the library must be released with `napool_string_free` and
//! `napool_bytes_free`; models with `napool_model_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use napool::analysis::{scaling_probe, xor_normalized_demo, Aggregator, CSV_HEADER};
use napool::archzoo::{Model, ModelConfig};
use napool::harness::{read_summaries, render_grid, GridSpec};
use napool::rng::rng_from_seed;
use napool::taskgen::case_probabilities;
use napool::trainer::{train_run, RunConfig};
use napool::Error;

pub const NAPOOL_OK: i32 = 0;
/// Invalid configuration or arguments.
pub const NAPOOL_CONFIG_ERROR: i32 = 1;
/// The operation failed while running.
pub const NAPOOL_RUNTIME_ERROR: i32 = 2;
pub const NAPOOL_NULL_POINTER: i32 = 3;
/// An output buffer is too small; the required length was written back.
pub const NAPOOL_BUFFER_TOO_SMALL: i32 = 4;
/// A Rust panic was caught at the boundary.
pub const NAPOOL_PANIC: i32 = 5;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

enum Fail {
    Status(i32, String),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn null(what: &str) -> Fail {
    Fail::Status(NAPOOL_NULL_POINTER, format!("{what} is null"))
}

/// Runs `f`, mapping errors and panics to status codes.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            NAPOOL_OK
        }
        Ok(Err(Fail::Status(code, msg))) => {
            set_error(&msg);
            code
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(&e.to_string());
            if e.is_config() {
                NAPOOL_CONFIG_ERROR
            } else {
                NAPOOL_RUNTIME_ERROR
            }
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("panic: {msg}"));
            NAPOOL_PANIC
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail::Status(NAPOOL_CONFIG_ERROR, format!("{what} is not UTF-8")))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

fn into_c_string(s: String) -> Result<*mut c_char, Fail> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Fail::Status(NAPOOL_RUNTIME_ERROR, "output contains a NUL byte".into()))
}

/// Message describing the last failed call on this thread; empty after a
/// successful call. Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn napool_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn napool_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Frees a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn napool_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Frees a byte buffer returned by this library. Null is ignored.
///
/// # Safety
/// `data`/`len` must be exactly a pair returned by this library.
#[no_mangle]
pub unsafe extern "C" fn napool_bytes_free(data: *mut u8, len: usize) {
    if !data.is_null() {
        drop(Box::from_raw(ptr::slice_from_raw_parts_mut(data, len)));
    }
}

// ------------------------------------------------------------------ models

enum Inner {
    F32(Model<f32>),
    F64(Model<f64>),
}

/// Opaque model handle.
pub struct NapoolModel {
    inner: Inner,
}

/// Builds a freshly initialized model from a JSON model config, e.g.
/// `{"arch":"nap","d":128,"n_max":128,"vocab":100,"head":"per_token"}`.
/// `precision` is 32 or 64.
///
/// # Safety
/// `config_json` must be a valid C string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn napool_model_new(
    config_json: *const c_char,
    seed: u64,
    precision: u32,
    out: *mut *mut NapoolModel,
) -> i32 {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let cfg: ModelConfig = serde_json::from_str(str_arg(config_json, "config_json")?).map_err(Error::from)?;
        let mut rng = rng_from_seed(seed);
        let inner = match precision {
            32 => Inner::F32(Model::build(&cfg, &mut rng)?),
            64 => Inner::F64(Model::build(&cfg, &mut rng)?),
            p => return Err(Fail::Status(NAPOOL_CONFIG_ERROR, format!("precision must be 32 or 64, got {p}"))),
        };
        *out = Box::into_raw(Box::new(NapoolModel { inner }));
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from `napool_model_new` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn napool_model_free(model: *mut NapoolModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of trainable scalars.
///
/// # Safety
/// `model` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn napool_model_param_count(model: *const NapoolModel, out: *mut usize) -> i32 {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        *out_arg(out, "out")? = match &m.inner {
            Inner::F32(m) => m.param_count(),
            Inner::F64(m) => m.param_count(),
        };
        Ok(())
    })
}

/// Eval-mode logits for `batch` sequences of `n` tokens (row-major).
/// Writes `*written` values to `out`; if `capacity` is too small, returns
/// `NAPOOL_BUFFER_TOO_SMALL` with the required length in `*written`.
///
/// # Safety
/// `tokens` must hold `batch * n` values and `out` `capacity` values.
#[no_mangle]
pub unsafe extern "C" fn napool_model_forward(
    model: *const NapoolModel,
    tokens: *const u32,
    batch: usize,
    n: usize,
    out: *mut f64,
    capacity: usize,
    written: *mut usize,
) -> i32 {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let written = out_arg(written, "written")?;
        *written = 0;
        if tokens.is_null() {
            return Err(null("tokens"));
        }
        let ids: Vec<usize> =
            std::slice::from_raw_parts(tokens, batch.checked_mul(n).ok_or_else(|| Fail::Status(NAPOOL_CONFIG_ERROR, "batch * n overflows".into()))?)
                .iter()
                .map(|&t| t as usize)
                .collect();
        let logits = match &m.inner {
            Inner::F32(m) => m.logits(&ids, batch, n)?.to_f64_vec(),
            Inner::F64(m) => m.logits(&ids, batch, n)?.to_f64_vec(),
        };
        *written = logits.len();
        if capacity < logits.len() {
            return Err(Fail::Status(
                NAPOOL_BUFFER_TOO_SMALL,
                format!("output needs {} values, capacity {capacity}", logits.len()),
            ));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        std::slice::from_raw_parts_mut(out, logits.len()).copy_from_slice(&logits);
        Ok(())
    })
}

// ---------------------------------------------------------------- training

/// Trains one run from a JSON run config and returns the metric record as
/// a JSON string (free with `napool_string_free`).
///
/// # Safety
/// `config_json` must be a valid C string; `out_json` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn napool_train_run(config_json: *const c_char, out_json: *mut *mut c_char) -> i32 {
    guard(|| {
        let out = out_arg(out_json, "out_json")?;
        *out = ptr::null_mut();
        let cfg: RunConfig = serde_json::from_str(str_arg(config_json, "config_json")?).map_err(Error::from)?;
        let rec = train_run(&cfg)?;
        *out = into_c_string(serde_json::to_string(&rec).map_err(Error::from)?)?;
        Ok(())
    })
}

// ---------------------------------------------------------------- analysis

/// Probabilities of the argmin, first and argmax cases for vocabulary `s`
/// and length `n`, written to `out[0..3]`.
///
/// # Safety
/// `out` must hold three doubles.
#[no_mangle]
pub unsafe extern "C" fn napool_case_probabilities(s: usize, n: usize, out: *mut f64) -> i32 {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let (a, f, m) = case_probabilities(s, n)?;
        std::slice::from_raw_parts_mut(out, 3).copy_from_slice(&[a, f, m]);
        Ok(())
    })
}

/// Normalized two-token weighting of binary inputs; equals XOR.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn napool_xor_normalized(x1: u8, x2: u8, out: *mut f64) -> i32 {
    guard(|| {
        *out_arg(out, "out")? = xor_normalized_demo(x1, x2)?;
        Ok(())
    })
}

/// Output-scale probe as CSV (`aggregator,N,sigma,mean_norm` with header).
/// `aggregator` is one of attention, mean, sum, max, normalized.
///
/// # Safety
/// `aggregator` must be a valid C string, `ns` hold `ns_len` values and
/// `out_csv` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn napool_scaling_probe_csv(
    aggregator: *const c_char,
    ns: *const usize,
    ns_len: usize,
    d_h: usize,
    samples: usize,
    seed: u64,
    out_csv: *mut *mut c_char,
) -> i32 {
    guard(|| {
        let out = out_arg(out_csv, "out_csv")?;
        *out = ptr::null_mut();
        let agg: Aggregator = str_arg(aggregator, "aggregator")?.parse()?;
        if ns.is_null() {
            return Err(null("ns"));
        }
        let ns = std::slice::from_raw_parts(ns, ns_len);
        let report = scaling_probe(agg, ns, d_h, samples, &mut rng_from_seed(seed))?;
        *out = into_c_string(format!("{CSV_HEADER}{}", report.csv_rows()))?;
        Ok(())
    })
}

// --------------------------------------------------------------- rendering

/// Renders the summaries of a JSONL results file onto the grid described
/// by `spec_json` (`{"mode":"min_mean_max","metric":"train","upscale":8,
/// "lrs":[...],"xs":[...]}`). The records must hold one architecture.
/// `png` selects PNG over binary PPM. Free the result with
/// `napool_bytes_free`.
///
/// # Safety
/// String arguments must be valid C strings; out-pointers valid.
#[no_mangle]
pub unsafe extern "C" fn napool_render_grid(
    results_path: *const c_char,
    spec_json: *const c_char,
    png: bool,
    out_data: *mut *mut u8,
    out_len: *mut usize,
) -> i32 {
    guard(|| {
        let data = out_arg(out_data, "out_data")?;
        let len = out_arg(out_len, "out_len")?;
        *data = ptr::null_mut();
        *len = 0;
        let spec: GridSpec = serde_json::from_str(str_arg(spec_json, "spec_json")?).map_err(Error::from)?;
        let path = Path::new(str_arg(results_path, "results_path")?);
        if !path.exists() {
            return Err(Fail::Status(NAPOOL_CONFIG_ERROR, format!("{} does not exist", path.display())));
        }
        let img = render_grid(&read_summaries(path)?, &spec)?;
        let bytes = if png { img.to_png()? } else { img.to_ppm() };
        let boxed = bytes.into_boxed_slice();
        *len = boxed.len();
        *data = Box::into_raw(boxed).cast();
        Ok(())
    })
}
