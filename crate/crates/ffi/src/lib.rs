//! C interface to latentedit sessions.
//!
//! Every function returns an `LeStatus`; on failure the message is kept per
//! thread and can be read with `le_last_error`. Sessions are opaque handles
//! created by `le_session_load` or `le_session_pretrain_synthetic` and
//! released with `le_session_free`. Handles are not thread-safe.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::ops::ControlFlow;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use latentedit::dataset::{generate_synthetic, SyntheticConfig};
use latentedit::embedding::isomap;
use latentedit::feedback::{AnchorMode, EditSource, EditTransaction, Move};
use latentedit::matrix::Matrix;
use latentedit::session::{load_session, save_session, RetrainConfig, Session, SessionConfig};
use latentedit::Error;

/// Result codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    NotFound = 3,
    Io = 4,
    Format = 5,
    Rejected = 6,
    Precondition = 7,
    NothingToDo = 8,
    Diverged = 9,
    BufferTooSmall = 10,
    Panic = 11,
}

/// Opaque session handle.
pub struct LeSession {
    inner: Session,
}

/// Retrain parameters. Start from `le_retrain_params_default`.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct LeRetrainParams {
    pub epochs: usize,
    pub k: usize,
    pub delta: f64,
    pub w_cls: f64,
    pub w_dis: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Nonzero keeps anchors fixed at their pre-training values.
    pub frozen_anchors: u8,
    /// Nonzero allows retraining without pending edits.
    pub allow_empty: u8,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct LeMetrics {
    pub accuracy_before: f64,
    /// NaN until a retrain has run.
    pub accuracy_after: f64,
    pub auc: f64,
    /// Epochs recorded by the last training job.
    pub epochs: usize,
    /// Validation micro-F1 after the last epoch, NaN when none.
    pub last_micro_f1: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> LeStatus {
    match e {
        Error::Config(_) | Error::Shape(_) | Error::Input(_) | Error::EmptyClass(_) | Error::Degenerate(_) => {
            LeStatus::InvalidArgument
        }
        Error::NotFound(_) => LeStatus::NotFound,
        Error::Io(_) => LeStatus::Io,
        Error::Parse { .. }
        | Error::Schema(_)
        | Error::Format(_)
        | Error::Checksum(_)
        | Error::Migration { .. }
        | Error::Json(_) => LeStatus::Format,
        Error::Rejected(_) => LeStatus::Rejected,
        Error::Precondition(_) | Error::Busy | Error::Alignment(_) => LeStatus::Precondition,
        Error::NoOp(_) => LeStatus::NothingToDo,
        Error::Divergence { .. } | Error::NonFiniteGradient { .. } => LeStatus::Diverged,
    }
}

struct Fail(LeStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> LeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LeStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside latentedit".into());
            LeStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(LeStatus::NullPointer, format!("{what} is null"))
}

unsafe fn session_mut<'a>(handle: *mut LeSession) -> Result<&'a mut Session, Fail> {
    unsafe { handle.as_mut() }.map(|h| &mut h.inner).ok_or_else(|| null("session"))
}

unsafe fn path_arg(path: *const c_char) -> Result<PathBuf, Fail> {
    if path.is_null() {
        return Err(null("path"));
    }
    let s = unsafe { CStr::from_ptr(path) }
        .to_str()
        .map_err(|_| Fail(LeStatus::InvalidArgument, "path is not UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

unsafe fn out_slice<'a, T>(ptr: *mut T, len: usize, needed: usize) -> Result<&'a mut [T], Fail> {
    if ptr.is_null() {
        return Err(null("output buffer"));
    }
    if len < needed {
        return Err(Fail(
            LeStatus::BufferTooSmall,
            format!("buffer holds {len} values, {needed} needed"),
        ));
    }
    Ok(unsafe { std::slice::from_raw_parts_mut(ptr, needed) })
}

fn boxed(session: Session, out: *mut *mut LeSession) {
    unsafe { *out = Box::into_raw(Box::new(LeSession { inner: session })) };
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn le_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn le_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn le_retrain_params_default() -> LeRetrainParams {
    let d = RetrainConfig::default();
    LeRetrainParams {
        epochs: d.epochs,
        k: d.k,
        delta: d.delta,
        w_cls: d.w_cls,
        w_dis: d.w_dis,
        learning_rate: d.learning_rate,
        batch_size: d.batch_size,
        seed: d.seed,
        frozen_anchors: u8::from(d.anchor_mode == AnchorMode::Frozen),
        allow_empty: u8::from(d.allow_empty),
    }
}

/// Opens a session directory.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn le_session_load(path: *const c_char, out: *mut *mut LeSession) -> LeStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = unsafe { path_arg(path)? };
        boxed(load_session(&path)?, out);
        Ok(())
    })
}

/// Generates a synthetic dataset (4 classes, 16 features) and pretrains a
/// session on it.
///
/// # Safety
/// `out` must be a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn le_session_pretrain_synthetic(
    n: usize,
    epochs: usize,
    seed: u64,
    out: *mut *mut LeSession,
) -> LeStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let data = generate_synthetic(&SyntheticConfig {
            n,
            seed,
            ..SyntheticConfig::default()
        })?;
        let cfg = SessionConfig::new(data.input_dim(), data.num_classes(), epochs, seed);
        let (s, _) = Session::pretrain(data, cfg, |_| ControlFlow::Continue(()))?;
        boxed(s, out);
        Ok(())
    })
}

/// Releases a handle. NULL is ignored.
///
/// # Safety
/// `session` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn le_session_free(session: *mut LeSession) {
    if !session.is_null() {
        drop(unsafe { Box::from_raw(session) });
    }
}

/// # Safety
/// `session` must be a valid handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn le_session_save(session: *mut LeSession, path: *const c_char) -> LeStatus {
    guard(|| {
        let s = unsafe { session_mut(session)? };
        let path = unsafe { path_arg(path)? };
        save_session(s, &path)?;
        Ok(())
    })
}

/// Number of items, or 0 for a NULL handle.
///
/// # Safety
/// `session` must be a valid handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn le_session_len(session: *const LeSession) -> usize {
    unsafe { session.as_ref() }.map_or(0, |h| h.inner.dataset().len())
}

/// Writes the current layout as `x0, y0, x1, y1, ...` into `xy`, which must
/// hold at least `2 * le_session_len` values.
///
/// # Safety
/// `xy` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn le_session_layout(session: *mut LeSession, xy: *mut f64, len: usize) -> LeStatus {
    guard(|| {
        let s = unsafe { session_mut(session)? };
        let coords = &s.layout().coords;
        let out = unsafe { out_slice(xy, len, 2 * coords.len())? };
        for (dst, p) in out.chunks_exact_mut(2).zip(coords) {
            dst.copy_from_slice(p);
        }
        Ok(())
    })
}

/// Writes the predicted class of every item into `classes`.
///
/// # Safety
/// `classes` must point to `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn le_session_predictions(session: *mut LeSession, classes: *mut u32, len: usize) -> LeStatus {
    guard(|| {
        let s = unsafe { session_mut(session)? };
        let preds = s.predictions()?;
        let out = unsafe { out_slice(classes, len, preds.len())? };
        for (dst, &p) in out.iter_mut().zip(&preds) {
            *dst = p as u32;
        }
        Ok(())
    })
}

/// Moves `count` items in one undoable transaction. `xy` holds the new
/// positions as `x, y` pairs.
///
/// # Safety
/// `ids` must point to `count` values and `xy` to `2 * count` values.
#[no_mangle]
pub unsafe extern "C" fn le_session_move(
    session: *mut LeSession,
    ids: *const usize,
    xy: *const f64,
    count: usize,
) -> LeStatus {
    guard(|| {
        let s = unsafe { session_mut(session)? };
        if count == 0 {
            return Ok(());
        }
        if ids.is_null() || xy.is_null() {
            return Err(null("ids or xy"));
        }
        let ids = unsafe { std::slice::from_raw_parts(ids, count) };
        let xy = unsafe { std::slice::from_raw_parts(xy, 2 * count) };
        let moves = ids
            .iter()
            .zip(xy.chunks_exact(2))
            .map(|(&id, p)| Move {
                id,
                old: [0.0, 0.0],
                new: [p[0], p[1]],
            })
            .collect();
        s.apply_edits(EditTransaction::new(moves, EditSource::Human))?;
        Ok(())
    })
}

/// # Safety
/// `session` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn le_session_undo(session: *mut LeSession) -> LeStatus {
    guard(|| Ok(unsafe { session_mut(session)? }.undo()?))
}

/// # Safety
/// `session` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn le_session_redo(session: *mut LeSession) -> LeStatus {
    guard(|| Ok(unsafe { session_mut(session)? }.redo()?))
}

/// Drops edits made since the last retrain.
///
/// # Safety
/// `session` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn le_session_reset(session: *mut LeSession) -> LeStatus {
    guard(|| Ok(unsafe { session_mut(session)? }.reset()?))
}

/// Retrains on the pending edits, blocking until done. `params` may be NULL
/// for the defaults.
///
/// # Safety
/// `session` must be a valid handle; `params` NULL or valid.
#[no_mangle]
pub unsafe extern "C" fn le_session_retrain(session: *mut LeSession, params: *const LeRetrainParams) -> LeStatus {
    guard(|| {
        let s = unsafe { session_mut(session)? };
        let p = unsafe { params.as_ref() }.copied().unwrap_or_else(|| le_retrain_params_default());
        let config = RetrainConfig {
            epochs: p.epochs,
            k: p.k,
            delta: p.delta,
            w_cls: p.w_cls,
            w_dis: p.w_dis,
            learning_rate: p.learning_rate,
            batch_size: p.batch_size,
            seed: p.seed,
            anchor_mode: if p.frozen_anchors != 0 {
                AnchorMode::Frozen
            } else {
                AnchorMode::Live
            },
            allow_empty: p.allow_empty != 0,
            ..RetrainConfig::default()
        };
        s.retrain(&config, |_| ControlFlow::Continue(()))?;
        Ok(())
    })
}

/// # Safety
/// `session` must be a valid handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn le_session_metrics(session: *mut LeSession, out: *mut LeMetrics) -> LeStatus {
    guard(|| {
        let s = unsafe { session_mut(session)? };
        let out = unsafe { out.as_mut() }.ok_or_else(|| null("out"))?;
        let m = s.metrics();
        *out = LeMetrics {
            accuracy_before: m.accuracy_before,
            accuracy_after: m.accuracy_after.unwrap_or(f64::NAN),
            auc: m.auc,
            epochs: m.micro_f1_per_epoch.len(),
            last_micro_f1: m.micro_f1_per_epoch.last().copied().unwrap_or(f64::NAN),
        };
        Ok(())
    })
}

/// Isomap of `n` row-major points of dimension `dim` into 2D, written to
/// `out` as `n` pairs.
///
/// # Safety
/// `points` must hold `n * dim` values and `out` room for `out_len >= 2 * n`.
#[no_mangle]
pub unsafe extern "C" fn le_isomap(
    points: *const f64,
    n: usize,
    dim: usize,
    k: usize,
    out: *mut f64,
    out_len: usize,
) -> LeStatus {
    guard(|| {
        if points.is_null() {
            return Err(null("points"));
        }
        let total = n
            .checked_mul(dim)
            .ok_or_else(|| Fail(LeStatus::InvalidArgument, "n * dim overflows".into()))?;
        let data = unsafe { std::slice::from_raw_parts(points, total) }.to_vec();
        let dst = unsafe { out_slice(out, out_len, 2 * n)? };
        let result = isomap(&Matrix::from_vec(n, dim, data)?, k, 2)?;
        for (pair, p) in dst.chunks_exact_mut(2).zip(result.to_pairs()) {
            pair.copy_from_slice(&p);
        }
        Ok(())
    })
}
