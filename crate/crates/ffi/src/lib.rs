//! C ABI over the slm-eval core.
//!
//! Every function returns an [`SlmStatus`]; on failure the message is
//! available from [`slm_last_error`] on the same thread. Handles are opaque
//! and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use slm_eval::attribution::{self, CoalitionTable};
use slm_eval::benchmark::{self, Outcome};
use slm_eval::estimators::{self, EstimatorConfig, Method};
use slm_eval::trace::{self, ContrastivePair, TokenTrace};
use slm_eval::{judge, stats, EvalError};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Io = 4,
    Schema = 5,
    Invariant = 6,
    IncompleteTable = 7,
    TooManyPlayers = 8,
    DimensionMismatch = 9,
    Degenerate = 10,
    NoFramesInScope = 11,
    BufferTooSmall = 12,
    Internal = 13,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlmMethod {
    Global = 0,
    Localized = 1,
    Windowed = 2,
    NormalizedGlobal = 3,
    NormalizedLocalized = 4,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlmOutcome {
    Correct = 0,
    Incorrect = 1,
    Tie = 2,
}

/// Opaque handle to a validated trace.
pub struct SlmTrace(TokenTrace);

/// Opaque handle to a complete coalition table.
pub struct SlmTable(CoalitionTable);

struct Failure {
    status: SlmStatus,
    message: String,
}

impl Failure {
    fn new(status: SlmStatus, message: impl Into<String>) -> Self {
        Failure { status, message: message.into() }
    }
}

fn status_of(e: &EvalError) -> SlmStatus {
    match e {
        EvalError::Io { .. } | EvalError::Load { .. } => SlmStatus::Io,
        EvalError::Schema { .. } => SlmStatus::Schema,
        EvalError::Invariant { .. } => SlmStatus::Invariant,
        EvalError::IncompleteTable(_) => SlmStatus::IncompleteTable,
        EvalError::TooManyPlayers(_) => SlmStatus::TooManyPlayers,
        EvalError::DimensionMismatch(..) => SlmStatus::DimensionMismatch,
        EvalError::ZeroNorm | EvalError::DegenerateVariance(_) => SlmStatus::Degenerate,
        EvalError::NoFramesInScope(_) | EvalError::MissingPrompt(_) | EvalError::MissingUnconditional(_) => {
            SlmStatus::NoFramesInScope
        }
        EvalError::Pair { source, .. } => status_of(source),
        _ => SlmStatus::InvalidArgument,
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        Failure::new(status_of(&e), e.to_string())
    }
}

type FfiResult<T> = Result<T, Failure>;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: Option<String>) {
    let c = message.map(|m| CString::new(m.replace('\0', " ")).expect("no interior nul"));
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> FfiResult<()>) -> SlmStatus {
    let out = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| p.downcast_ref::<String>().cloned())
            .unwrap_or_else(|| "panic".into());
        Err(Failure::new(SlmStatus::Internal, msg))
    });
    match out {
        Ok(()) => {
            set_last_error(None);
            SlmStatus::Ok
        }
        Err(f) => {
            set_last_error(Some(f.message));
            f.status
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(Failure::new(SlmStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|e| Failure::new(SlmStatus::InvalidUtf8, format!("{what}: {e}")))
}

unsafe fn values<'a>(p: *const f64, n: usize, what: &str) -> FfiResult<&'a [f64]> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::new(SlmStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> FfiResult<&'a T> {
    p.as_ref().ok_or_else(|| Failure::new(SlmStatus::NullPointer, format!("{what} is null")))
}

unsafe fn store<T>(out: *mut T, value: T, what: &str) -> FfiResult<()> {
    if out.is_null() {
        return Err(Failure::new(SlmStatus::NullPointer, format!("{what} is null")));
    }
    out.write(value);
    Ok(())
}

unsafe fn store_boxed<T>(out: *mut *mut T, value: T) -> FfiResult<()> {
    if out.is_null() {
        return Err(Failure::new(SlmStatus::NullPointer, "out is null"));
    }
    out.write(Box::into_raw(Box::new(value)));
    Ok(())
}

unsafe fn store_slice(out: *mut f64, cap: usize, src: &[f64], what: &str) -> FfiResult<()> {
    if cap < src.len() {
        return Err(Failure::new(
            SlmStatus::BufferTooSmall,
            format!("{what} holds {cap} values, {} needed", src.len()),
        ));
    }
    if src.is_empty() {
        return Ok(());
    }
    if out.is_null() {
        return Err(Failure::new(SlmStatus::NullPointer, format!("{what} is null")));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    Ok(())
}

fn config(method: SlmMethod, window_seconds: f64) -> FfiResult<EstimatorConfig> {
    let m = match method {
        SlmMethod::Global => Method::Global,
        SlmMethod::Localized => Method::Localized,
        SlmMethod::Windowed => Method::Windowed,
        SlmMethod::NormalizedGlobal => Method::NormalizedGlobal,
        SlmMethod::NormalizedLocalized => Method::NormalizedLocalized,
    };
    let mut c = EstimatorConfig::new(m);
    if window_seconds > 0.0 {
        c = c.with_window_seconds(window_seconds);
    }
    c.validate()?;
    Ok(c)
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn slm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn slm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Parse one trace record.
///
/// # Safety
/// `json` must be a nul-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn slm_trace_from_json(json: *const c_char, out: *mut *mut SlmTrace) -> SlmStatus {
    guard(|| {
        let t = TokenTrace::from_json_line(text(json, "json")?, "<ffi>")?;
        store_boxed(out, SlmTrace(t))
    })
}

/// Load a trace file holding exactly one record.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn slm_trace_load(path: *const c_char, out: *mut *mut SlmTrace) -> SlmStatus {
    guard(|| {
        let t = trace::load_trace(text(path, "path")?)?;
        store_boxed(out, SlmTrace(t))
    })
}

/// # Safety
/// `trace` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn slm_trace_free(trace: *mut SlmTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}

/// Frame count and channel count of a trace.
///
/// # Safety
/// `trace` must be a live handle; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn slm_trace_shape(
    trace: *const SlmTrace,
    frames: *mut usize,
    channels: *mut usize,
) -> SlmStatus {
    guard(|| {
        let t = &handle(trace, "trace")?.0;
        store(frames, t.len(), "frames")?;
        store(channels, t.num_channels(), "channels")
    })
}

/// Score one trace. A non-positive `window_seconds` keeps the default window.
///
/// # Safety
/// `trace` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn slm_score(
    trace: *const SlmTrace,
    method: SlmMethod,
    window_seconds: f64,
    out: *mut f64,
) -> SlmStatus {
    guard(|| {
        let t = &handle(trace, "trace")?.0;
        let s = estimators::score(t, &config(method, window_seconds)?)?;
        store(out, s.value, "out")
    })
}

/// Decide a contrastive pair; the positive is correct when its score is lower.
///
/// # Safety
/// Both traces must be live handles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn slm_compare(
    positive: *const SlmTrace,
    negative: *const SlmTrace,
    method: SlmMethod,
    window_seconds: f64,
    out: *mut SlmOutcome,
) -> SlmStatus {
    guard(|| {
        let pos = handle(positive, "positive")?.0.clone();
        let neg = handle(negative, "negative")?.0.clone();
        let pair = ContrastivePair::new("ffi", "ffi", pos, neg, None, true)?;
        let r = benchmark::compare_pair(&pair, &config(method, window_seconds)?, None)?;
        let o = match r.outcome {
            Outcome::Correct => SlmOutcome::Correct,
            Outcome::Incorrect => SlmOutcome::Incorrect,
            Outcome::Tie => SlmOutcome::Tie,
        };
        store(out, o, "out")
    })
}

/// Parse a coalition table document.
///
/// # Safety
/// `json` must be a nul-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn slm_table_from_json(json: *const c_char, out: *mut *mut SlmTable) -> SlmStatus {
    guard(|| {
        let t = CoalitionTable::from_json(text(json, "json")?, "<ffi>")?;
        store_boxed(out, SlmTable(t))
    })
}

/// Load a coalition table file.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn slm_table_load(path: *const c_char, out: *mut *mut SlmTable) -> SlmStatus {
    guard(|| {
        let t = CoalitionTable::load(text(path, "path")?)?;
        store_boxed(out, SlmTable(t))
    })
}

/// # Safety
/// `table` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn slm_table_free(table: *mut SlmTable) {
    if !table.is_null() {
        drop(Box::from_raw(table));
    }
}

/// Player count and task count of a table.
///
/// # Safety
/// `table` must be a live handle; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn slm_table_shape(table: *const SlmTable, players: *mut usize, tasks: *mut usize) -> SlmStatus {
    guard(|| {
        let t = &handle(table, "table")?.0;
        store(players, t.players().len(), "players")?;
        store(tasks, t.tasks().len(), "tasks")
    })
}

/// Shapley values of a table. `per_task` receives tasks x players values in
/// task-major order and may be null when `per_task_len` is 0; `average`
/// receives one value per player.
///
/// # Safety
/// `table` must be a live handle; buffers must hold the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn slm_shapley(
    table: *const SlmTable,
    per_task: *mut f64,
    per_task_len: usize,
    average: *mut f64,
    average_len: usize,
) -> SlmStatus {
    guard(|| {
        let r = attribution::shapley(&handle(table, "table")?.0)?;
        if per_task_len > 0 || !per_task.is_null() {
            let flat: Vec<f64> = r.per_task.concat();
            store_slice(per_task, per_task_len, &flat, "per_task")?;
        }
        store_slice(average, average_len, &r.average, "average")
    })
}

/// Shapley values of a single game given as `2^n_players` values indexed by
/// coalition bitmask; index 0 is the empty coalition.
///
/// # Safety
/// `values` must hold `2^n_players` values and `out` `n_players`.
#[no_mangle]
pub unsafe extern "C" fn slm_shapley_game(n_players: usize, values: *const f64, out: *mut f64) -> SlmStatus {
    guard(|| {
        if n_players > attribution::MAX_PLAYERS {
            return Err(EvalError::TooManyPlayers(n_players).into());
        }
        let v = self::values(values, 1 << n_players, "values")?;
        let phi = attribution::shapley_values(n_players, v)?;
        store_slice(out, n_players, &phi, "out")
    })
}

/// # Safety
/// `x` and `y` must each hold `n` values and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn slm_pearson(x: *const f64, y: *const f64, n: usize, out: *mut f64) -> SlmStatus {
    guard(|| {
        let r = stats::pearson(values(x, n, "x")?, values(y, n, "y")?)?;
        store(out, r, "out")
    })
}

/// # Safety
/// `x` and `y` must each hold `n` values and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn slm_spearman(x: *const f64, y: *const f64, n: usize, out: *mut f64) -> SlmStatus {
    guard(|| {
        let r = stats::spearman(values(x, n, "x")?, values(y, n, "y")?)?;
        store(out, r, "out")
    })
}

/// # Safety
/// `a` and `b` must each hold `n` values and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn slm_cosine(a: *const f64, b: *const f64, n: usize, out: *mut f64) -> SlmStatus {
    guard(|| {
        let c = judge::cosine(values(a, n, "a")?, values(b, n, "b")?)?;
        store(out, c, "out")
    })
}
