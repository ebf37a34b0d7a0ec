//! C ABI over `semiflow`.
//!
//! Models and graphs cross the boundary as opaque handles. Every fallible
//! call returns an [`SfStatus`]; on failure a message is kept per thread and
//! read with [`sf_last_error_message`]. Strings returned through `out`
//! parameters are owned by the caller and released with [`sf_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use semiflow::config::Config;
use semiflow::flow::{self, OdeConfig};
use semiflow::generate::{generate, SizeChoice};
use semiflow::graph3d::Graph3D;
use semiflow::model::Model;
use semiflow::nnkit::Checkpoint;
use semiflow::train::DequantConfig;
use semiflow::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SfStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    /// Bad configuration, checkpoint or parameter value.
    Config = 3,
    /// Malformed or mis-shaped graph.
    InvalidGraph = 4,
    /// Solver failure or non-finite values.
    Numeric = 5,
    Io = 6,
    /// `out_len` too small; `written` holds the required length.
    BufferTooSmall = 7,
    Panic = 8,
}

/// Trained or randomly initialized model.
pub struct SfModel {
    inner: Model,
}

/// A 3D graph with vertex features, edges and global properties.
pub struct SfGraph {
    inner: Graph3D,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> SfStatus {
    match e {
        Error::Io { .. } => SfStatus::Io,
        Error::Config(_) | Error::Domain(_) | Error::Json(_) => SfStatus::Config,
        e if e.is_numeric() => SfStatus::Numeric,
        _ => SfStatus::InvalidGraph,
    }
}

struct Fail(SfStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SfStatus::Ok,
        Ok(Err(Fail(s, m))) => {
            set_error(m);
            s
        }
        Err(_) => {
            set_error("internal panic");
            SfStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(SfStatus::NullArgument, format!("`{what}` is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(SfStatus::InvalidUtf8, format!("`{what}` is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

fn out_arg<T>(p: *mut T, what: &str) -> Result<*mut T, Fail> {
    if p.is_null() {
        Err(null(what))
    } else {
        Ok(p)
    }
}

/// `rtol <= 0` selects fixed-step RK4 with `steps` steps; otherwise dopri5
/// with `rtol` and `atol`.
fn solver(rtol: f64, atol: f64, steps: u32) -> Result<OdeConfig, Fail> {
    let cfg = if rtol > 0.0 {
        OdeConfig::dopri5(rtol, atol)
    } else {
        OdeConfig::rk4(steps as usize)
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Loads a checkpoint file written by training.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sf_model_load(path: *const c_char, out: *mut *mut SfModel) -> SfStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let path = str_arg(path, "path")?;
        let ck = Checkpoint::load(Path::new(path))?;
        let m = Model::from_checkpoint(&ck)?;
        *out = Box::into_raw(Box::new(SfModel { inner: m }));
        Ok(())
    })
}

/// Builds a model with fresh parameters. `config_toml` may be null for the
/// default configuration; only its `[model]` section is used.
///
/// # Safety
/// `config_toml` must be null or NUL-terminated; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sf_model_random(config_toml: *const c_char, seed: u64, out: *mut *mut SfModel) -> SfStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let cfg = if config_toml.is_null() {
            Config::default()
        } else {
            Config::from_toml(str_arg(config_toml, "config_toml")?)?
        };
        let m = Model::new(cfg.model, seed)?;
        *out = Box::into_raw(Box::new(SfModel { inner: m }));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn sf_model_free(model: *mut SfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Parses a graph from its JSON form.
///
/// # Safety
/// `json` must be NUL-terminated; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sf_graph_from_json(json: *const c_char, out: *mut *mut SfGraph) -> SfStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let g = Graph3D::from_json(str_arg(json, "json")?)?;
        *out = Box::into_raw(Box::new(SfGraph { inner: g }));
        Ok(())
    })
}

/// Serializes a graph; free the result with [`sf_string_free`].
///
/// # Safety
/// `graph` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sf_graph_to_json(graph: *const SfGraph, out: *mut *mut c_char) -> SfStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let g = ref_arg(graph, "graph")?;
        let s = CString::new(g.inner.to_json()).map_err(|e| Fail(SfStatus::InvalidGraph, e.to_string()))?;
        *out = s.into_raw();
        Ok(())
    })
}

/// Vertex count of a graph, or 0 for a null handle.
///
/// # Safety
/// `graph` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sf_graph_vertex_count(graph: *const SfGraph) -> usize {
    graph.as_ref().map_or(0, |g| g.inner.n_vertices())
}

/// # Safety
/// `graph` must be null or a handle from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn sf_graph_free(graph: *mut SfGraph) {
    if !graph.is_null() {
        drop(Box::from_raw(graph));
    }
}

/// # Safety
/// `s` must be null or a string returned by this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn sf_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// `log p(complement | base)`. See [`solver`] for the tolerance arguments.
///
/// # Safety
/// Handles must be live; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sf_log_likelihood(
    model: *const SfModel,
    complement: *const SfGraph,
    base: *const SfGraph,
    rtol: f64,
    atol: f64,
    rk4_steps: u32,
    out: *mut f64,
) -> SfStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let m = &ref_arg(model, "model")?.inner;
        let g = &ref_arg(complement, "complement")?.inner;
        let b = &ref_arg(base, "base")?.inner;
        let ode = solver(rtol, atol, rk4_steps)?;
        *out = flow::log_likelihood(m, &g.vertex_vector(), b, &ode)?.log_p;
        Ok(())
    })
}

/// Samples a complement for `base`. `n = 0` takes the most probable size
/// from the number head. Features are rounded down to integers.
///
/// # Safety
/// Handles must be live; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sf_sample(
    model: *const SfModel,
    base: *const SfGraph,
    n: u32,
    seed: u64,
    rtol: f64,
    atol: f64,
    rk4_steps: u32,
    out: *mut *mut SfGraph,
) -> SfStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let m = &ref_arg(model, "model")?.inner;
        let b = &ref_arg(base, "base")?.inner;
        let ode = solver(rtol, atol, rk4_steps)?;
        let size = if n == 0 { SizeChoice::Argmax } else { SizeChoice::Fixed(n as usize) };
        let g = generate(m, b, size, seed, &ode, &DequantConfig::default())?;
        *out = Box::into_raw(Box::new(SfGraph { inner: g }));
        Ok(())
    })
}

/// Writes `p(N = k + 1 | base)` for `k < n_max` into `out`. `written`
/// receives `n_max` even when the buffer is too small.
///
/// # Safety
/// Handles must be live; `out` must hold `out_len` doubles; `written` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sf_number_distribution(
    model: *const SfModel,
    base: *const SfGraph,
    out: *mut f64,
    out_len: usize,
    written: *mut usize,
) -> SfStatus {
    guard(|| {
        let written = out_arg(written, "written")?;
        let m = &ref_arg(model, "model")?.inner;
        let b = &ref_arg(base, "base")?.inner;
        let p = m.number_distribution(b)?;
        *written = p.len();
        if out_len < p.len() {
            return Err(Fail(
                SfStatus::BufferTooSmall,
                format!("buffer holds {out_len} values, {} needed", p.len()),
            ));
        }
        let out = out_arg(out, "out")?;
        ptr::copy_nonoverlapping(p.as_ptr(), out, p.len());
        Ok(())
    })
}

/// Message of the last failure on this thread, or null. Valid until the
/// next failing call on the same thread; do not free.
#[no_mangle]
pub extern "C" fn sf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}
