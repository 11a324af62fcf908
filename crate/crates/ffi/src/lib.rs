//! C ABI over `pt_core`.
//!
//! Every fallible function returns a [`PtStatus`]. On failure the message is
//! kept per thread and can be read with [`pt_last_error_message`]. Results are
//! written through caller-provided out pointers; buffers are caller-owned.
//! Models are opaque handles created by `pt_model_new`/`pt_model_load` and
//! released with `pt_model_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::OnceLock;

use chrono::NaiveDate;
use pt_core::benchmarks::{mv_weights, MvConfig};
use pt_core::data::business_days;
use pt_core::metrics::{compute_metrics, EquityCurve};
use pt_core::model::{AllocationNetwork, Checkpoint};
use pt_core::objective::{sharpe_loss_of, CostModel, ReturnsWindow};
use pt_core::tensor::Tensor;
use pt_core::training::{Hyperparams, Network, Strategy};
use pt_core::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PtStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Numeric = 4,
    Data = 5,
    Io = 6,
    Checkpoint = 7,
    Panic = 8,
}

/// Network architecture for `pt_model_new`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PtModelKind {
    Transformer = 0,
    Lstm = 1,
    Mlp = 2,
}

/// Annualized performance statistics of a daily return series.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PtMetrics {
    pub returns: f64,
    pub vol: f64,
    pub sharpe: f64,
    pub sortino: f64,
    pub mdd: f64,
    pub calmar: f64,
    pub pct_positive: f64,
}

/// Opaque handle to a trained or freshly initialized allocation network.
pub struct PtModel {
    inner: Network,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(PtStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Shape { .. } => PtStatus::Shape,
            Error::Contract(_) | Error::Config(_) => PtStatus::InvalidArgument,
            Error::Numeric(_) => PtStatus::Numeric,
            Error::Data(_) | Error::Parse { .. } | Error::Alignment { .. } | Error::Csv(_) => PtStatus::Data,
            Error::Io(_) => PtStatus::Io,
            Error::Checkpoint(_) | Error::Json(_) => PtStatus::Checkpoint,
        };
        Failure(status, e.to_string())
    }
}

fn set_last_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(msg));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PtStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(format!("internal panic: {msg}"));
            PtStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(PtStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: String) -> Failure {
    Failure(PtStatus::InvalidArgument, msg)
}

unsafe fn input<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn output<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn model_ref<'a>(p: *const PtModel) -> Result<&'a PtModel, Failure> {
    p.as_ref().ok_or_else(|| null("model"))
}

unsafe fn path_arg(p: *const c_char) -> Result<String, Failure> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| invalid("path is not valid UTF-8".into()))
}

/// Metrics only depend on the return values; the calendar is nominal.
fn nominal_dates(n: usize) -> Vec<NaiveDate> {
    business_days(NaiveDate::from_ymd_opt(2000, 1, 3).expect("valid date"), n)
}

fn matrix(data: &[f64], rows: usize, cols: usize) -> Result<Tensor, Failure> {
    Ok(Tensor::matrix(rows, cols, data.to_vec())?)
}

/// Library version string. The pointer is static and must not be freed.
#[no_mangle]
pub extern "C" fn pt_version() -> *const c_char {
    static VERSION: OnceLock<CString> = OnceLock::new();
    VERSION
        .get_or_init(|| CString::new(pt_core::cli::VERSION).expect("no interior nul"))
        .as_ptr()
}

/// Message of the last failed call on this thread, or null if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn pt_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Negative Sharpe ratio of the cost-adjusted portfolio returns.
///
/// `weights` and `returns` are row-major `rows x n_assets` matrices; row `t`
/// of `weights` earns row `t` of `returns`. `prev_weights` holds the book
/// before the first row (`n_assets` values) or is null for an empty book.
///
/// # Safety
/// Non-null pointers must reference buffers of the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn pt_sharpe_loss(
    weights: *const f64,
    returns: *const f64,
    rows: usize,
    n_assets: usize,
    prev_weights: *const f64,
    cost_rate: f64,
    out_loss: *mut f64,
) -> PtStatus {
    guard(|| {
        let len = rows
            .checked_mul(n_assets)
            .ok_or_else(|| invalid("matrix size overflows".into()))?;
        let w = matrix(input(weights, len, "weights")?, rows, n_assets)?;
        let r = matrix(input(returns, len, "returns")?, rows, n_assets)?;
        let window = if prev_weights.is_null() {
            ReturnsWindow::new(r)
        } else {
            ReturnsWindow::with_prev(r, input(prev_weights, n_assets, "prev_weights")?.to_vec())
        };
        let out = out_ref(out_loss, "out_loss")?;
        *out = sharpe_loss_of(&w, &window, CostModel::new(cost_rate)?)?;
        Ok(())
    })
}

/// Performance statistics of `len` daily simple returns.
///
/// # Safety
/// `daily_returns` must reference `len` values and `out` one `PtMetrics`.
#[no_mangle]
pub unsafe extern "C" fn pt_compute_metrics(daily_returns: *const f64, len: usize, out: *mut PtMetrics) -> PtStatus {
    guard(|| {
        let r = input(daily_returns, len, "daily_returns")?;
        let out = out_ref(out, "out")?;
        let curve = EquityCurve::new(nominal_dates(len), r.to_vec())?;
        let m = compute_metrics(&curve)?;
        *out = PtMetrics {
            returns: m.returns,
            vol: m.vol,
            sharpe: m.sharpe,
            sortino: m.sortino,
            mdd: m.mdd,
            calmar: m.calmar,
            pct_positive: m.pct_positive,
        };
        Ok(())
    })
}

/// Tangency weights with unit gross exposure, estimated from the last
/// `lookback` rows of a row-major `rows x n_assets` return history. `ridge`
/// is relative to the average asset variance.
///
/// # Safety
/// `history` must reference `rows * n_assets` values and `out_weights`
/// `out_len` writable values.
#[no_mangle]
pub unsafe extern "C" fn pt_mv_weights(
    history: *const f64,
    rows: usize,
    n_assets: usize,
    lookback: usize,
    ridge: f64,
    out_weights: *mut f64,
    out_len: usize,
) -> PtStatus {
    guard(|| {
        if out_len != n_assets {
            return Err(invalid(format!("out_len {out_len} != n_assets {n_assets}")));
        }
        let len = rows
            .checked_mul(n_assets)
            .ok_or_else(|| invalid("matrix size overflows".into()))?;
        let h = matrix(input(history, len, "history")?, rows, n_assets)?;
        let w = mv_weights(&h, &MvConfig { lookback, ridge })?;
        output(out_weights, out_len, "out_weights")?.copy_from_slice(&w);
        Ok(())
    })
}

/// Creates a randomly initialized network. Attention settings (`n_heads`,
/// `t2v_k`) are ignored by the LSTM and MLP; `d_model` is their hidden width.
///
/// # Safety
/// `out_model` must be a valid pointer; on success it receives a handle that
/// must be released with `pt_model_free`.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn pt_model_new(
    kind: PtModelKind,
    n_assets: usize,
    window: usize,
    d_model: usize,
    n_heads: usize,
    t2v_k: usize,
    n_layers: usize,
    seed: u64,
    out_model: *mut *mut PtModel,
) -> PtStatus {
    guard(|| {
        let out = out_ref(out_model, "out_model")?;
        let strategy = match kind {
            PtModelKind::Transformer => Strategy::Pt,
            PtModelKind::Lstm => Strategy::Lstm,
            PtModelKind::Mlp => Strategy::Mlp,
        };
        let hp = Hyperparams {
            d_model,
            n_heads,
            t2v_k,
            batch_size: 1,
            learning_rate: 0.0,
            dropout: 0.0,
        };
        let inner = Network::build(strategy, &hp, n_assets, window, n_layers, seed)?;
        *out = Box::into_raw(Box::new(PtModel { inner }));
        Ok(())
    })
}

/// Loads a network from a checkpoint file.
///
/// # Safety
/// `path` must be a nul-terminated string and `out_model` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pt_model_load(path: *const c_char, out_model: *mut *mut PtModel) -> PtStatus {
    guard(|| {
        let path = path_arg(path)?;
        let out = out_ref(out_model, "out_model")?;
        let inner = Network::from_checkpoint(&Checkpoint::load(path)?)?;
        *out = Box::into_raw(Box::new(PtModel { inner }));
        Ok(())
    })
}

/// Writes the network to a checkpoint file.
///
/// # Safety
/// `model` must be a live handle and `path` a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn pt_model_save(model: *const PtModel, path: *const c_char) -> PtStatus {
    guard(|| {
        let model = model_ref(model)?;
        model.inner.to_checkpoint().save(path_arg(path)?)?;
        Ok(())
    })
}

/// Number of assets the network allocates over, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pt_model_n_assets(model: *const PtModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.n_assets())
}

/// Lookback window of the network, or 0 for a null handle. Predictions need
/// `2 * window` rows of history.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pt_model_window(model: *const PtModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.window())
}

/// Allocation for the day after the last history row. `history` is a
/// row-major `rows x n_assets` matrix of daily returns with
/// `rows == 2 * window`.
///
/// # Safety
/// `model` must be a live handle, `history` must reference
/// `rows * n_assets` values and `out_weights` `out_len` writable values.
#[no_mangle]
pub unsafe extern "C" fn pt_model_predict(
    model: *const PtModel,
    history: *const f64,
    rows: usize,
    n_assets: usize,
    out_weights: *mut f64,
    out_len: usize,
) -> PtStatus {
    guard(|| {
        let model = model_ref(model)?;
        if out_len != model.inner.n_assets() {
            return Err(invalid(format!(
                "out_len {out_len} != n_assets {}",
                model.inner.n_assets()
            )));
        }
        let len = rows
            .checked_mul(n_assets)
            .ok_or_else(|| invalid("matrix size overflows".into()))?;
        let h = matrix(input(history, len, "history")?, rows, n_assets)?;
        let w = model.inner.predict_next(&h)?;
        output(out_weights, out_len, "out_weights")?.copy_from_slice(&w);
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pt_model_free(model: *mut PtModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
