use std::ffi::CStr;
use std::ptr;

use perfrec_ffi::*;

fn last_error() -> String {
    let p = perfrec_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn world(seed: u64) -> *mut PerfrecWorld {
    let mut w = ptr::null_mut();
    let s = unsafe { perfrec_world_new(6, 24, 3, 6, 1.0, 0.3, seed, &mut w) };
    assert_eq!(s, PerfrecStatus::Ok);
    w
}

fn run(w: *const PerfrecWorld, opts: &PerfrecRunOptions) -> Vec<PerfrecRound> {
    let mut recs = ptr::null_mut();
    assert_eq!(unsafe { perfrec_run(w, opts, &mut recs) }, PerfrecStatus::Ok, "{}", last_error());
    let out = (0..unsafe { perfrec_records_len(recs) })
        .map(|i| {
            let mut r = PerfrecRound::default();
            assert_eq!(unsafe { perfrec_records_get(recs, i, &mut r) }, PerfrecStatus::Ok);
            r
        })
        .collect();
    unsafe { perfrec_records_free(recs) };
    out
}

#[test]
fn world_shape_and_items() {
    let w = world(1);
    let (mut m, mut n, mut d) = (0, 0, 0);
    assert_eq!(unsafe { perfrec_world_shape(w, &mut m, &mut n, &mut d) }, PerfrecStatus::Ok);
    assert_eq!((m, n, d), (6, 24, 3));
    let mut items = vec![0.0; n * d];
    assert_eq!(
        unsafe { perfrec_world_items(w, items.as_mut_ptr(), items.len()) },
        PerfrecStatus::Ok
    );
    for row in items.chunks(d) {
        assert!((row.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-9);
    }
    assert_eq!(
        unsafe { perfrec_world_items(w, items.as_mut_ptr(), 3) },
        PerfrecStatus::InvalidArgument
    );
    assert!(last_error().contains("need 72"));
    unsafe { perfrec_world_free(w) };
}

#[test]
fn best_response_matches_closed_form() {
    let (x, v) = ([1.0, 0.0], [0.0, 1.0]);
    let mut out = [0.0; 2];
    let s = unsafe { perfrec_best_response(x.as_ptr(), v.as_ptr(), 2, 0.5, out.as_mut_ptr()) };
    assert_eq!(s, PerfrecStatus::Ok);
    let h = 0.5f64.sqrt();
    assert!((out[0] - h).abs() < 1e-12 && (out[1] - h).abs() < 1e-12);
    let s = unsafe { perfrec_best_response(x.as_ptr(), v.as_ptr(), 2, -1.0, out.as_mut_ptr()) };
    assert_eq!(s, PerfrecStatus::InvalidArgument);
}

#[test]
fn trajectories_are_reproducible() {
    let w = world(2);
    let opts = PerfrecRunOptions {
        method: PerfrecMethod::Strategic,
        lambda: 0.5,
        k: 3,
        rounds: 2,
        seed: 9,
        ..perfrec_run_options_default()
    };
    let a = run(w, &opts);
    assert_eq!(a.len(), 2);
    assert_eq!(a, run(w, &opts));
    assert!(a.iter().all(|r| (0.0..=1.0).contains(&r.ndcg_test) && r.lambda == 0.5));
    unsafe { perfrec_world_free(w) };
}

#[test]
fn invalid_input_reports_status_and_message() {
    let mut w = ptr::null_mut();
    assert_eq!(
        unsafe { perfrec_world_new(6, 24, 3, 30, 1.0, 0.3, 0, &mut w) },
        PerfrecStatus::InvalidArgument
    );
    assert!(w.is_null());
    assert!(!last_error().is_empty());

    assert_eq!(
        unsafe { perfrec_world_new(6, 24, 3, 6, 1.0, 0.3, 0, ptr::null_mut()) },
        PerfrecStatus::NullPointer
    );
    assert!(last_error().contains("out"));

    let w = world(3);
    let opts = PerfrecRunOptions {
        method: PerfrecMethod::Hybrid,
        switch_round: 7,
        k: 3,
        rounds: 2,
        ..perfrec_run_options_default()
    };
    let mut recs = ptr::null_mut();
    assert_eq!(unsafe { perfrec_run(w, &opts, &mut recs) }, PerfrecStatus::InvalidArgument);
    assert!(last_error().contains("switch_round"));
    let mut r = PerfrecRound::default();
    assert_eq!(unsafe { perfrec_records_get(ptr::null(), 0, &mut r) }, PerfrecStatus::NullPointer);
    assert_eq!(unsafe { perfrec_records_len(ptr::null()) }, 0);
    unsafe { perfrec_world_free(w) };
    unsafe { perfrec_world_free(ptr::null_mut()) };
}

#[test]
fn verify_suite_passes_through_the_abi() {
    let mut failures = usize::MAX;
    assert_eq!(unsafe { perfrec_verify(false, 0, &mut failures) }, PerfrecStatus::Ok);
    assert_eq!(failures, 0);
    let v = unsafe { CStr::from_ptr(perfrec_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/perfrec.h")).unwrap();
    for name in [
        "PERFREC_H",
        "typedef struct PerfrecWorld PerfrecWorld;",
        "PERFREC_STATUS_OK",
        "perfrec_world_new",
        "perfrec_run",
        "perfrec_records_get",
        "perfrec_last_error_message",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}

#[test]
fn header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/perfrec.h");
    match std::process::Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c", header])
        .output()
    {
        Ok(o) => assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr)),
        Err(_) => eprintln!("no C compiler; skipped"),
    }
}
