//! C ABI over `pricelab`.
//!
//! Conventions:
//! - Every fallible function returns a [`PlStatus`]; on failure the message
//!   is available from [`pl_last_error`] on the same thread.
//! - Strings going in are NUL-terminated UTF-8. Strings coming out are
//!   owned by the caller and released with [`pl_string_free`].
//! - Handles ([`PlLab`], [`PlTrace`]) are opaque and released with their
//!   `_free` function. Passing NULL to a `_free` function is a no-op.
//! - Markets use the default parameters (60 consumers, grid 0..=5).

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use pricelab::export::Table;
use pricelab::market::{self, MarketParams, Price};
use pricelab::qlearning::{train_selfplay, TrainerConfig};
use pricelab::service::{Action, ExportFormat, Lab, LabConfig, ServiceError};
use pricelab::session::SessionConfig;
use pricelab::strategy::{simulate_supergame, wsls_action, BotSpec, Player, PriceState, Trace};

/// Result codes shared by every function.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    NotFound = 4,
    Conflict = 5,
    Unauthorized = 6,
    BufferTooSmall = 7,
    Internal = 8,
}

/// A lab holding sessions, optionally persisted to a data directory.
pub struct PlLab {
    lab: Lab,
}

/// A simulated supergame.
pub struct PlTrace {
    trace: Trace,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(PlStatus, String);

impl From<ServiceError> for Failure {
    fn from(e: ServiceError) -> Self {
        let status = match &e {
            ServiceError::NotFound(_) => PlStatus::NotFound,
            ServiceError::Unauthorized => PlStatus::Unauthorized,
            ServiceError::Conflict(_) | ServiceError::IllegalPhase(_) => PlStatus::Conflict,
            ServiceError::Invalid(_) | ServiceError::Config(_) => PlStatus::InvalidArgument,
            _ => PlStatus::Internal,
        };
        Failure(status, e.to_string())
    }
}

fn invalid(e: impl std::fmt::Display) -> Failure {
    Failure(PlStatus::InvalidArgument, e.to_string())
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

/// Runs `f`, converting failures and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PlStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            PlStatus::Internal
        }
    }
}

/// # Safety
/// `p` must be NULL or a valid NUL-terminated string.
unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(PlStatus::NullPointer, format!("{name} is NULL")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(PlStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

/// # Safety
/// As [`str_arg`]; NULL maps to `None`.
unsafe fn opt_str_arg<'a>(p: *const c_char, name: &str) -> Result<Option<&'a str>, Failure> {
    if p.is_null() {
        Ok(None)
    } else {
        str_arg(p, name).map(Some)
    }
}

fn out_ptr<T>(p: *mut T, name: &str) -> Result<&'static mut T, Failure> {
    // SAFETY: callers pass writable out-pointers; NULL is rejected here.
    unsafe { p.as_mut() }.ok_or_else(|| Failure(PlStatus::NullPointer, format!("{name} is NULL")))
}

fn write_string(out: *mut *mut c_char, s: String) -> Result<(), Failure> {
    let slot = out_ptr(out, "out")?;
    let c = CString::new(s).map_err(|_| Failure(PlStatus::Internal, "output contains NUL".into()))?;
    *slot = c.into_raw();
    Ok(())
}

fn lab_ref<'a>(lab: *const PlLab) -> Result<&'a Lab, Failure> {
    // SAFETY: a non-NULL handle comes from `pl_lab_new` and is not yet freed.
    unsafe { lab.as_ref() }
        .map(|l| &l.lab)
        .ok_or_else(|| Failure(PlStatus::NullPointer, "lab is NULL".into()))
}

fn json<T: serde::Serialize>(v: &T) -> Result<String, Failure> {
    serde_json::to_string(v).map_err(|e| Failure(PlStatus::Internal, e.to_string()))
}

/// Message of the last failure on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn pl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must be NULL or a string returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn pl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Opens a lab. `data_dir` may be NULL for an in-memory lab; otherwise
/// existing event logs in it are replayed.
///
/// # Safety
/// `data_dir` must be NULL or a valid string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pl_lab_new(data_dir: *const c_char, out: *mut *mut PlLab) -> PlStatus {
    guard(|| {
        let slot = out_ptr(out, "out")?;
        let dir = opt_str_arg(data_dir, "data_dir")?.map(PathBuf::from);
        let lab = Lab::open(LabConfig {
            data_dir: dir,
            admin_secret: None,
        })?;
        *slot = Box::into_raw(Box::new(PlLab { lab }));
        Ok(())
    })
}

/// # Safety
/// `lab` must be NULL or a handle from [`pl_lab_new`], freed once.
#[no_mangle]
pub unsafe extern "C" fn pl_lab_free(lab: *mut PlLab) {
    if !lab.is_null() {
        drop(Box::from_raw(lab));
    }
}

/// Creates a session from a JSON configuration (`"{}"` for defaults) and
/// writes its id to `out_id`.
///
/// # Safety
/// Pointer arguments must be valid as documented in the crate conventions.
#[no_mangle]
pub unsafe extern "C" fn pl_lab_create_session(lab: *const PlLab, config_json: *const c_char, out_id: *mut *mut c_char) -> PlStatus {
    guard(|| {
        let lab = lab_ref(lab)?;
        let cfg: SessionConfig = serde_json::from_str(str_arg(config_json, "config_json")?).map_err(invalid)?;
        let id = lab.create_session(cfg, None, None)?;
        write_string(out_id, id)
    })
}

/// Seats a participant. `label` may be NULL. Writes
/// `{"token", "participant", "view"}` as JSON.
///
/// # Safety
/// Pointer arguments must be valid as documented in the crate conventions.
#[no_mangle]
pub unsafe extern "C" fn pl_lab_join(
    lab: *const PlLab,
    session_id: *const c_char,
    label: *const c_char,
    out_json: *mut *mut c_char,
) -> PlStatus {
    guard(|| {
        let lab = lab_ref(lab)?;
        let id = str_arg(session_id, "session_id")?;
        let label = opt_str_arg(label, "label")?.map(str::to_string);
        let (token, participant, view) = lab.join(id, label)?;
        write_string(
            out_json,
            json(&serde_json::json!({ "token": token, "participant": participant, "view": view }))?,
        )
    })
}

/// Submits a JSON action such as `{"type":"price","price":4}` and writes
/// the participant's new view.
///
/// # Safety
/// Pointer arguments must be valid as documented in the crate conventions.
#[no_mangle]
pub unsafe extern "C" fn pl_lab_submit(
    lab: *const PlLab,
    token: *const c_char,
    action_json: *const c_char,
    out_view: *mut *mut c_char,
) -> PlStatus {
    guard(|| {
        let lab = lab_ref(lab)?;
        let token = str_arg(token, "token")?;
        let action: Action = serde_json::from_str(str_arg(action_json, "action_json")?).map_err(invalid)?;
        let view = lab.submit(token, action, None)?;
        write_string(out_view, json(&view)?)
    })
}

/// Writes the participant's current view as JSON.
///
/// # Safety
/// Pointer arguments must be valid as documented in the crate conventions.
#[no_mangle]
pub unsafe extern "C" fn pl_lab_view(lab: *const PlLab, token: *const c_char, out_view: *mut *mut c_char) -> PlStatus {
    guard(|| {
        let lab = lab_ref(lab)?;
        let view = lab.view(str_arg(token, "token")?)?;
        write_string(out_view, json(&view)?)
    })
}

/// Exports a session. `table` is a table name (`rounds`, `adoptions`,
/// `beliefs`, `payouts`, `trials`) for CSV, or `jsonl` for the event log.
/// `out_partial` (may be NULL) is set to 1 while the session is running.
///
/// # Safety
/// Pointer arguments must be valid as documented in the crate conventions.
#[no_mangle]
pub unsafe extern "C" fn pl_lab_export(
    lab: *const PlLab,
    session_id: *const c_char,
    table: *const c_char,
    out: *mut *mut c_char,
    out_partial: *mut u8,
) -> PlStatus {
    guard(|| {
        let lab = lab_ref(lab)?;
        let id = str_arg(session_id, "session_id")?;
        let name = str_arg(table, "table")?;
        let format = if name == "jsonl" {
            ExportFormat::Jsonl
        } else {
            ExportFormat::Csv(Table::parse(name).ok_or_else(|| invalid(format!("unknown table {name}")))?)
        };
        let (bytes, partial) = lab.export(id, format)?;
        let text = String::from_utf8(bytes).map_err(|e| Failure(PlStatus::Internal, e.to_string()))?;
        write_string(out, text)?;
        if let Some(p) = unsafe { out_partial.as_mut() } {
            *p = u8::from(partial);
        }
        Ok(())
    })
}

fn price(v: u8, params: &MarketParams) -> Result<Price, Failure> {
    params.price(v.into()).map_err(invalid)
}

/// Profits and market price of one stage game.
///
/// # Safety
/// All out-pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn pl_stage_outcome(
    price_a: u8,
    price_b: u8,
    out_profit_a: *mut i64,
    out_profit_b: *mut i64,
    out_market_price: *mut u8,
) -> PlStatus {
    guard(|| {
        let params = MarketParams::default();
        let o = market::stage_outcome(price(price_a, &params)?, price(price_b, &params)?, &params).map_err(invalid)?;
        *out_ptr(out_profit_a, "out_profit_a")? = o.profits[0];
        *out_ptr(out_profit_b, "out_profit_b")? = o.profits[1];
        *out_ptr(out_market_price, "out_market_price")? = o.market_price.value();
        Ok(())
    })
}

/// Writes the pure Nash equilibria as flattened `(a, b)` pairs into
/// `out_pairs` (room for `capacity` pairs) and their count to `out_len`.
/// With too little room, `out_len` still receives the count.
///
/// # Safety
/// `out_pairs` must have room for `2 * capacity` bytes; `out_len` writable.
#[no_mangle]
pub unsafe extern "C" fn pl_pure_nash(out_pairs: *mut u8, capacity: usize, out_len: *mut usize) -> PlStatus {
    guard(|| {
        let set = market::enumerate_pure_nash(&MarketParams::default());
        *out_ptr(out_len, "out_len")? = set.len();
        if set.len() > capacity {
            return Err(Failure(PlStatus::BufferTooSmall, format!("{} equilibria, room for {capacity}", set.len())));
        }
        if out_pairs.is_null() && !set.is_empty() {
            return Err(Failure(PlStatus::NullPointer, "out_pairs is NULL".into()));
        }
        for (i, (a, b)) in set.iter().enumerate() {
            // SAFETY: i < set.len() <= capacity.
            *out_pairs.add(2 * i) = a.value();
            *out_pairs.add(2 * i + 1) = b.value();
        }
        Ok(())
    })
}

/// Smallest discount factor sustaining grim-trigger collusion at `price`,
/// as the fraction `num / den`.
///
/// # Safety
/// Out-pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn pl_grim_trigger_threshold(price_value: u8, out_num: *mut i64, out_den: *mut i64) -> PlStatus {
    guard(|| {
        let params = MarketParams::default();
        let r = market::grim_trigger_delta_min(price(price_value, &params)?, &params).map_err(invalid)?;
        *out_ptr(out_num, "out_num")? = *r.numer();
        *out_ptr(out_den, "out_den")? = *r.denom();
        Ok(())
    })
}

/// Smallest discount factor at which the one-period punishment strategy is
/// self-enforcing, as `num / den`.
///
/// # Safety
/// Out-pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn pl_wsls_threshold(out_num: *mut i64, out_den: *mut i64) -> PlStatus {
    guard(|| {
        let r = market::wsls_ic_delta_min(&MarketParams::default()).map_err(invalid)?;
        *out_ptr(out_num, "out_num")? = *r.numer();
        *out_ptr(out_den, "out_den")? = *r.denom();
        Ok(())
    })
}

/// The algorithm's price after last-round prices `(own, opponent)`. Pass
/// `-1` for both to ask for the opening price.
///
/// # Safety
/// `out_price` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pl_wsls_action(own: i32, opponent: i32, out_price: *mut u8) -> PlStatus {
    guard(|| {
        let params = MarketParams::default();
        let state = match (own, opponent) {
            (-1, -1) => PriceState::INITIAL,
            (o, p) => PriceState::after(params.price(o.into()).map_err(invalid)?, params.price(p.into()).map_err(invalid)?),
        };
        *out_ptr(out_price, "out_price")? = wsls_action(state, &params).value();
        Ok(())
    })
}

fn parse_bot(s: &str) -> Result<BotSpec, Failure> {
    let spec: BotSpec = if s.trim_start().starts_with('{') {
        serde_json::from_str(s)
    } else {
        serde_json::from_value(serde_json::json!({ "kind": s }))
    }
    .map_err(invalid)?;
    spec.validate(&MarketParams::default()).map_err(invalid)?;
    Ok(spec)
}

/// Plays `length` rounds between two bots given by name (`"wsls"`,
/// `"cyclic_undercut"`) or JSON spec.
///
/// # Safety
/// Pointer arguments must be valid as documented in the crate conventions.
#[no_mangle]
pub unsafe extern "C" fn pl_trace_simulate(
    bot_a: *const c_char,
    bot_b: *const c_char,
    length: usize,
    out: *mut *mut PlTrace,
) -> PlStatus {
    guard(|| {
        let slot = out_ptr(out, "out")?;
        let a = parse_bot(str_arg(bot_a, "bot_a")?)?;
        let b = parse_bot(str_arg(bot_b, "bot_b")?)?;
        let trace = simulate_supergame(&Player::Bot(a), &Player::Bot(b), length, &MarketParams::default()).map_err(invalid)?;
        *slot = Box::into_raw(Box::new(PlTrace { trace }));
        Ok(())
    })
}

/// Number of rounds in a trace; 0 for NULL.
///
/// # Safety
/// `trace` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pl_trace_len(trace: *const PlTrace) -> usize {
    trace.as_ref().map_or(0, |t| t.trace.len())
}

/// Prices and profits of round `index` (0-based).
///
/// # Safety
/// `trace` must be a live handle; `out_prices` and `out_profits` must each
/// have room for two elements.
#[no_mangle]
pub unsafe extern "C" fn pl_trace_round(trace: *const PlTrace, index: usize, out_prices: *mut u8, out_profits: *mut i64) -> PlStatus {
    guard(|| {
        let t = trace
            .as_ref()
            .ok_or_else(|| Failure(PlStatus::NullPointer, "trace is NULL".into()))?;
        let r = t
            .trace
            .rounds
            .get(index)
            .ok_or_else(|| invalid(format!("round {index} out of {}", t.trace.len())))?;
        if out_prices.is_null() || out_profits.is_null() {
            return Err(Failure(PlStatus::NullPointer, "output array is NULL".into()));
        }
        for i in 0..2 {
            *out_prices.add(i) = r.actions[i].value();
            *out_profits.add(i) = r.profits[i];
        }
        Ok(())
    })
}

/// The trace as CSV.
///
/// # Safety
/// `trace` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pl_trace_csv(trace: *const PlTrace, out: *mut *mut c_char) -> PlStatus {
    guard(|| {
        let t = trace
            .as_ref()
            .ok_or_else(|| Failure(PlStatus::NullPointer, "trace is NULL".into()))?;
        let mut buf = Vec::new();
        t.trace
            .write_csv(&mut buf, 1)
            .map_err(|e| Failure(PlStatus::Internal, e.to_string()))?;
        write_string(out, String::from_utf8(buf).map_err(|e| Failure(PlStatus::Internal, e.to_string()))?)
    })
}

/// # Safety
/// `trace` must be NULL or a handle from [`pl_trace_simulate`], freed once.
#[no_mangle]
pub unsafe extern "C" fn pl_trace_free(trace: *mut PlTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}

/// Trains one self-play run from a JSON trainer configuration (`"{}"` for
/// defaults) and writes its diagnostics as JSON.
///
/// # Safety
/// Pointer arguments must be valid as documented in the crate conventions.
#[no_mangle]
pub unsafe extern "C" fn pl_train_selfplay(config_json: *const c_char, out_json: *mut *mut c_char) -> PlStatus {
    guard(|| {
        let cfg: TrainerConfig = serde_json::from_str(str_arg(config_json, "config_json")?).map_err(invalid)?;
        let diag = train_selfplay(&cfg).map_err(invalid)?;
        write_string(out_json, json(&diag)?)
    })
}
