//! C ABI over the alguide core.
//!
//! Every fallible function returns an [`AlgStatus`]; on failure the message
//! is available from [`alg_last_error`] on the same thread until the next
//! call. Runs live behind an opaque [`AlgRun`] handle released with
//! [`alg_run_free`]. Strings returned to the caller are released with
//! [`alg_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use alguide::corpus::{load_jsonl, Taxonomy};
use alguide::eval;
use alguide::learner::ClassProbabilities;
use alguide::orchestrate::{Run, RunConfig, ScriptedAnnotator};
use alguide::strategy;
use alguide::Error;

/// Result codes shared by every fallible function.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AlgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Http = 5,
    Invariant = 6,
    Checkpoint = 7,
    Annotation = 8,
    Panic = 9,
}

/// A run owned by the caller.
pub struct AlgRun {
    run: Run,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(err: &Error) -> AlgStatus {
    match err {
        Error::Io { .. } => AlgStatus::Io,
        Error::Parse { .. } | Error::Json(_) | Error::Unparseable => AlgStatus::Parse,
        Error::Http { .. } | Error::Protocol(_) => AlgStatus::Http,
        Error::Invariant(_) => AlgStatus::Invariant,
        Error::Checkpoint(_) => AlgStatus::Checkpoint,
        Error::Annotation(_) => AlgStatus::Annotation,
        _ => AlgStatus::InvalidArgument,
    }
}

struct Fail(AlgStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> AlgStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AlgStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            AlgStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(AlgStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(AlgStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn opt_path(p: *const c_char, what: &str) -> Result<Option<PathBuf>, Fail> {
    if p.is_null() {
        Ok(None)
    } else {
        str_arg(p, what).map(|s| Some(PathBuf::from(s)))
    }
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn run_ref<'a>(p: *const AlgRun) -> Result<&'a AlgRun, Fail> {
    p.as_ref().ok_or_else(|| null("run"))
}

unsafe fn run_mut<'a>(p: *mut AlgRun) -> Result<&'a mut AlgRun, Fail> {
    p.as_mut().ok_or_else(|| null("run"))
}

/// Message for the last failure on this thread, or null. The pointer stays
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn alg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn alg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Shannon entropy in nats of a probability row that sums to 1.
///
/// # Safety
/// `probs` must point to `len` doubles and `out` to a writable double.
#[no_mangle]
pub unsafe extern "C" fn alg_entropy(probs: *const f64, len: usize, out: *mut f64) -> AlgStatus {
    guard(|| {
        let row = slice_arg(probs, len, "probs")?;
        let out = out_arg(out, "out")?;
        let p = ClassProbabilities::from_untrusted(row.to_vec()).map_err(|e| Fail(AlgStatus::InvalidArgument, e.to_string()))?;
        *out = strategy::entropy(&p);
        Ok(())
    })
}

/// Sample standard deviation of per-class counts.
///
/// # Safety
/// `counts` must point to `len` values and `out` to a writable double.
#[no_mangle]
pub unsafe extern "C" fn alg_class_count_stddev(counts: *const u64, len: usize, out: *mut f64) -> AlgStatus {
    guard(|| {
        let counts = slice_arg(counts, len, "counts")?;
        *out_arg(out, "out")? = eval::class_count_stddev(counts)?;
        Ok(())
    })
}

/// Cohen's kappa between two label sequences of equal length.
///
/// # Safety
/// `a` and `b` must each point to `len` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn alg_cohen_kappa(a: *const *const c_char, b: *const *const c_char, len: usize, out: *mut f64) -> AlgStatus {
    guard(|| {
        let read = |p: *const *const c_char, what: &str| -> Result<Vec<&str>, Fail> {
            slice_arg(p, len, what)?.iter().map(|s| str_arg(*s, what)).collect()
        };
        let (x, y) = (read(a, "a")?, read(b, "b")?);
        *out_arg(out, "out")? = eval::cohen_kappa(&x, &y)?;
        Ok(())
    })
}

/// Starts a run from a JSON config (null for defaults) and JSONL corpus
/// files. A null taxonomy path selects the built-in six-class taxonomy.
///
/// # Safety
/// String arguments must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn alg_run_new(
    config_json: *const c_char,
    unlabeled_path: *const c_char,
    bootstrap_path: *const c_char,
    taxonomy_path: *const c_char,
    out: *mut *mut AlgRun,
) -> AlgStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let cfg: RunConfig = if config_json.is_null() {
            RunConfig::default()
        } else {
            serde_json::from_str(str_arg(config_json, "config_json")?).map_err(Error::from)?
        };
        let taxonomy = match opt_path(taxonomy_path, "taxonomy_path")? {
            Some(p) => Taxonomy::load(p)?,
            None => Taxonomy::safety_default(),
        };
        let u = load_jsonl(str_arg(unlabeled_path, "unlabeled_path")?, &taxonomy)?;
        let b = load_jsonl(str_arg(bootstrap_path, "bootstrap_path")?, &taxonomy)?;
        let run = Run::init(cfg, taxonomy, u, b, None)?;
        *out = Box::into_raw(Box::new(AlgRun { run }));
        Ok(())
    })
}

/// Restores a run from a checkpoint file.
///
/// # Safety
/// `path` must be NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn alg_run_resume(path: *const c_char, out: *mut *mut AlgRun) -> AlgStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let run = Run::resume(str_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(AlgRun { run }));
        Ok(())
    })
}

/// Runs one iteration, answering from a JSONL file of `{"id", "label"}`.
///
/// # Safety
/// `run` must come from this library; `answers_path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn alg_run_iterate(run: *mut AlgRun, answers_path: *const c_char) -> AlgStatus {
    guard(|| {
        let run = run_mut(run)?;
        let mut ann = ScriptedAnnotator::from_file(str_arg(answers_path, "answers_path")?)?;
        run.run.run_iteration(&mut ann)?;
        Ok(())
    })
}

/// Iterates until the budget is spent; writes the number of iterations run
/// to `iterations` when it is non-null.
///
/// # Safety
/// `run` must come from this library; `answers_path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn alg_run_until_budget(run: *mut AlgRun, answers_path: *const c_char, iterations: *mut usize) -> AlgStatus {
    guard(|| {
        let run = run_mut(run)?;
        let mut ann = ScriptedAnnotator::from_file(str_arg(answers_path, "answers_path")?)?;
        let n = run.run.run_until_budget(&mut ann)?;
        if let Some(o) = iterations.as_mut() {
            *o = n;
        }
        Ok(())
    })
}

/// Completed iterations.
///
/// # Safety
/// `run` must come from this library and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn alg_run_iteration(run: *const AlgRun, out: *mut u32) -> AlgStatus {
    guard(|| {
        *out_arg(out, "out")? = run_ref(run)?.run.state().iteration;
        Ok(())
    })
}

/// Human labels still available.
///
/// # Safety
/// `run` must come from this library and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn alg_run_remaining_budget(run: *const AlgRun, out: *mut usize) -> AlgStatus {
    guard(|| {
        *out_arg(out, "out")? = run_ref(run)?.run.state().remaining_budget;
        Ok(())
    })
}

/// Writes a checkpoint. Only valid between iterations.
///
/// # Safety
/// `run` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn alg_run_checkpoint(run: *const AlgRun, path: *const c_char) -> AlgStatus {
    guard(|| {
        run_ref(run)?.run.checkpoint(str_arg(path, "path")?)?;
        Ok(())
    })
}

/// Evaluates the run against a labeled JSONL test split and returns the
/// report as JSON in `out`, to be released with [`alg_string_free`].
///
/// # Safety
/// `run` must come from this library; `test_path` must be NUL-terminated;
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn alg_run_report_json(run: *const AlgRun, test_path: *const c_char, out: *mut *mut c_char) -> AlgStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let run = &run_ref(run)?.run;
        let test = load_jsonl(str_arg(test_path, "test_path")?, &run.state().taxonomy)?;
        let json = eval::report(run.state(), run.learner(), &test)?.to_json()?;
        let s = CString::new(json).map_err(|_| Fail(AlgStatus::Parse, "report contains NUL".into()))?;
        *out = s.into_raw();
        Ok(())
    })
}

/// Releases a run. Null is ignored.
///
/// # Safety
/// `run` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn alg_run_free(run: *mut AlgRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn alg_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
