use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use pricelab_ffi::*;
use serde_json::{json, Value};

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn take(p: *mut c_char) -> String {
    assert!(!p.is_null());
    // SAFETY: p was returned by the library and is freed exactly once here.
    unsafe {
        let s = CStr::from_ptr(p).to_str().unwrap().to_string();
        pl_string_free(p);
        s
    }
}

fn last_error() -> String {
    let p = pl_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string()
}

struct Lab(*mut PlLab);

impl Lab {
    fn new() -> Lab {
        let mut out = ptr::null_mut();
        assert_eq!(unsafe { pl_lab_new(ptr::null(), &mut out) }, PlStatus::Ok);
        Lab(out)
    }

    fn submit(&self, token: &str, action: Value) -> Result<Value, PlStatus> {
        let mut out = ptr::null_mut();
        let status = unsafe { pl_lab_submit(self.0, c(token).as_ptr(), c(&action.to_string()).as_ptr(), &mut out) };
        if status == PlStatus::Ok {
            Ok(serde_json::from_str(&take(out)).unwrap())
        } else {
            Err(status)
        }
    }

    fn export(&self, id: &str, table: &str) -> (PlStatus, String, u8) {
        let mut out = ptr::null_mut();
        let mut partial = 9u8;
        let status = unsafe { pl_lab_export(self.0, c(id).as_ptr(), c(table).as_ptr(), &mut out, &mut partial) };
        let text = if status == PlStatus::Ok { take(out) } else { String::new() };
        (status, text, partial)
    }
}

impl Drop for Lab {
    fn drop(&mut self) {
        unsafe { pl_lab_free(self.0) }
    }
}

#[test]
fn stage_outcomes_match_the_market() {
    let (mut a, mut b, mut m) = (0i64, 0i64, 0u8);
    assert_eq!(unsafe { pl_stage_outcome(3, 4, &mut a, &mut b, &mut m) }, PlStatus::Ok);
    assert_eq!((a, b, m), (180, 0, 3));
    assert_eq!(unsafe { pl_stage_outcome(4, 4, &mut a, &mut b, &mut m) }, PlStatus::Ok);
    assert_eq!((a, b, m), (120, 120, 4));
    assert_eq!(unsafe { pl_stage_outcome(6, 4, &mut a, &mut b, &mut m) }, PlStatus::InvalidArgument);
    assert!(!last_error().is_empty());
    assert_eq!(unsafe { pl_stage_outcome(1, 1, ptr::null_mut(), &mut b, &mut m) }, PlStatus::NullPointer);
}

#[test]
fn pure_nash_reports_size_when_buffer_is_short() {
    let mut buf = [0u8; 2];
    let mut len = 0usize;
    assert_eq!(unsafe { pl_pure_nash(buf.as_mut_ptr(), 1, &mut len) }, PlStatus::BufferTooSmall);
    assert_eq!(len, 3);
    let mut buf = [0u8; 8];
    assert_eq!(unsafe { pl_pure_nash(buf.as_mut_ptr(), 4, &mut len) }, PlStatus::Ok);
    assert_eq!(&buf[..6], &[0, 0, 1, 1, 2, 2]);
}

#[test]
fn thresholds_are_exact_fractions() {
    let (mut n, mut d) = (0i64, 0i64);
    for (p, want) in [(4u8, (1, 3)), (3, (1, 4)), (2, (0, 1))] {
        assert_eq!(unsafe { pl_grim_trigger_threshold(p, &mut n, &mut d) }, PlStatus::Ok);
        assert_eq!((n, d), want, "price {p}");
    }
    assert_eq!(unsafe { pl_wsls_threshold(&mut n, &mut d) }, PlStatus::Ok);
    assert_eq!((n, d), (2, 3));
}

#[test]
fn wsls_action_follows_the_rule() {
    let mut p = 0u8;
    let cases = [((-1, -1), 4), ((4, 4), 4), ((4, 3), 1), ((1, 1), 4), ((1, 4), 1), ((3, 3), 1)];
    for ((own, opp), want) in cases {
        assert_eq!(unsafe { pl_wsls_action(own, opp, &mut p) }, PlStatus::Ok);
        assert_eq!(p, want, "after ({own}, {opp})");
    }
    assert_eq!(unsafe { pl_wsls_action(-1, 4, &mut p) }, PlStatus::InvalidArgument);
}

#[test]
fn trace_round_trip() {
    let mut t = ptr::null_mut();
    let status = unsafe { pl_trace_simulate(c("wsls").as_ptr(), c("wsls").as_ptr(), 5, &mut t) };
    assert_eq!(status, PlStatus::Ok);
    assert_eq!(unsafe { pl_trace_len(t) }, 5);
    let (mut prices, mut profits) = ([0u8; 2], [0i64; 2]);
    for i in 0..5 {
        assert_eq!(unsafe { pl_trace_round(t, i, prices.as_mut_ptr(), profits.as_mut_ptr()) }, PlStatus::Ok);
        assert_eq!((prices, profits), ([4, 4], [120, 120]));
    }
    assert_eq!(unsafe { pl_trace_round(t, 5, prices.as_mut_ptr(), profits.as_mut_ptr()) }, PlStatus::InvalidArgument);
    let mut csv = ptr::null_mut();
    assert_eq!(unsafe { pl_trace_csv(t, &mut csv) }, PlStatus::Ok);
    assert_eq!(take(csv).lines().count(), 6);
    unsafe { pl_trace_free(t) };
    assert_eq!(unsafe { pl_trace_len(ptr::null()) }, 0);
    unsafe { pl_trace_free(ptr::null_mut()) };

    let status = unsafe { pl_trace_simulate(c("nonsense").as_ptr(), c("wsls").as_ptr(), 5, &mut t) };
    assert_eq!(status, PlStatus::InvalidArgument);
    let json_bot = c(r#"{"kind":"always_price","price":2}"#);
    let status = unsafe { pl_trace_simulate(json_bot.as_ptr(), c("wsls").as_ptr(), 3, &mut t) };
    assert_eq!(status, PlStatus::Ok, "{}", last_error());
    unsafe { pl_trace_free(t) };
}

#[test]
fn invalid_utf8_is_reported() {
    let bad = [0xffu8, 0xfe, 0];
    let mut t = ptr::null_mut();
    let status = unsafe { pl_trace_simulate(bad.as_ptr().cast(), c("wsls").as_ptr(), 1, &mut t) };
    assert_eq!(status, PlStatus::InvalidUtf8);
}

#[test]
fn lab_session_through_the_abi() {
    let lab = Lab::new();
    let config = json!({
        "treatment": "baseline",
        "participants": 2,
        "matching_group_size": 2,
        "n_supergames": 1,
        "supergame_lengths": [1],
        "trial_plan": [1],
        "seed": 4
    });
    let mut id = ptr::null_mut();
    let status = unsafe { pl_lab_create_session(lab.0, c(&config.to_string()).as_ptr(), &mut id) };
    assert_eq!(status, PlStatus::Ok, "{}", last_error());
    let id = take(id);

    let mut tokens = Vec::new();
    for label in ["a", "b"] {
        let mut out = ptr::null_mut();
        let status = unsafe { pl_lab_join(lab.0, c(&id).as_ptr(), c(label).as_ptr(), &mut out) };
        assert_eq!(status, PlStatus::Ok, "{}", last_error());
        let v: Value = serde_json::from_str(&take(out)).unwrap();
        assert_eq!(v["view"]["label"], label);
        tokens.push(v["token"].as_str().unwrap().to_string());
    }
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { pl_lab_join(lab.0, c(&id).as_ptr(), ptr::null(), &mut out) }, PlStatus::Conflict);
    assert_eq!(unsafe { pl_lab_join(lab.0, c("nope").as_ptr(), ptr::null(), &mut out) }, PlStatus::NotFound);

    for t in &tokens {
        lab.submit(t, json!({"type": "continue"})).unwrap();
        for (q, a) in [(1, 60), (2, 240), (3, 0)] {
            lab.submit(t, json!({"type": "answer", "question": q, "answer": a})).unwrap();
        }
        lab.submit(t, json!({"type": "price", "price": 4})).unwrap();
    }
    assert_eq!(lab.submit(&tokens[0], json!({"type": "price", "price": 9})), Err(PlStatus::InvalidArgument));
    assert_eq!(lab.submit(&tokens[0], json!({"type": "bogus"})), Err(PlStatus::InvalidArgument));
    assert_eq!(lab.export(&id, "rounds").2, 1);
    lab.submit(&tokens[0], json!({"type": "price", "price": 3})).unwrap();
    let v = lab.submit(&tokens[1], json!({"type": "price", "price": 4})).unwrap();
    assert_eq!(v["feedback"]["own_profit"], 0);

    let mut view = ptr::null_mut();
    assert_eq!(unsafe { pl_lab_view(lab.0, c(&tokens[0]).as_ptr(), &mut view) }, PlStatus::Ok);
    let v: Value = serde_json::from_str(&take(view)).unwrap();
    assert_eq!(v["feedback"]["own_profit"], 180);
    assert_eq!(unsafe { pl_lab_view(lab.0, c("missing").as_ptr(), &mut view) }, PlStatus::NotFound);

    let (status, csv, partial) = lab.export(&id, "rounds");
    assert_eq!(status, PlStatus::Ok);
    assert_eq!(partial, 0, "baseline settles after the last round");
    assert_eq!(csv.lines().count(), 2, "header plus one market round");
    let (status, jsonl, _) = lab.export(&id, "jsonl");
    assert_eq!(status, PlStatus::Ok);
    assert!(jsonl.lines().all(|l| serde_json::from_str::<Value>(l).is_ok()));
    assert_eq!(lab.export(&id, "bogus").0, PlStatus::InvalidArgument);
    assert_eq!(lab.export("nope", "rounds").0, PlStatus::NotFound);
}

#[test]
fn bad_session_config_is_invalid_argument() {
    let lab = Lab::new();
    let mut id = ptr::null_mut();
    let cfg = c(r#"{"participants": 3, "matching_group_size": 2}"#);
    assert_eq!(unsafe { pl_lab_create_session(lab.0, cfg.as_ptr(), &mut id) }, PlStatus::InvalidArgument);
    assert!(last_error().contains("matching_group_size") || last_error().contains("participants"));
    let cfg = c("not json");
    assert_eq!(unsafe { pl_lab_create_session(lab.0, cfg.as_ptr(), &mut id) }, PlStatus::InvalidArgument);
    assert_eq!(unsafe { pl_lab_create_session(ptr::null(), cfg.as_ptr(), &mut id) }, PlStatus::NullPointer);
}

#[test]
fn short_training_run_returns_diagnostics() {
    let cfg = c(r#"{"max_periods": 2000, "convergence_window": 100, "seed": 7}"#);
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { pl_train_selfplay(cfg.as_ptr(), &mut out) }, PlStatus::Ok, "{}", last_error());
    let v: Value = serde_json::from_str(&take(out)).unwrap();
    assert_eq!(v["seed"], 7);
    assert!(v["periods_to_convergence"].as_u64().unwrap() <= 2000);
    let bad = c(r#"{"discount": 2.0}"#);
    assert_eq!(unsafe { pl_train_selfplay(bad.as_ptr(), &mut out) }, PlStatus::InvalidArgument);
}

#[test]
fn header_is_valid_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/pricelab.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for sym in ["pl_lab_new", "pl_lab_export", "pl_trace_simulate", "pl_last_error", "PL_STATUS_NOT_FOUND"] {
        assert!(text.contains(sym), "{sym} missing from header");
    }
    let Ok(status) = Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"])
        .arg(&header)
        .status()
    else {
        eprintln!("no C compiler; skipped syntax check");
        return;
    };
    assert!(status.success());
}
