//! Exercises the C ABI from Rust: handle lifecycle, error reporting and
//! buffer-based solving.

use std::ffi::{CStr, CString};
use std::ptr;

use guided_co_ffi::{
    gco_instance_edge_count, gco_instance_free, gco_instance_node_count, gco_instance_parse_json,
    gco_last_error, gco_solve, gco_version, GcoInstance, GcoStatus,
};

fn sample_instance_json() -> CString {
    // Two triangles joined by a light bridge, k = 2.
    let line = r#"{"n":6,"edges":[[0,1,3.0],[0,2,3.0],[1,2,3.0],[2,3,0.5],[3,4,3.0],[3,5,3.0],[4,5,3.0]],"coords":null,"kind":"kcut","k":2,"label":null}"#;
    CString::new(line).unwrap()
}

#[test]
fn parse_solve_free_round_trip() {
    unsafe {
        let mut handle: *mut GcoInstance = ptr::null_mut();
        let status = gco_instance_parse_json(sample_instance_json().as_ptr(), &mut handle);
        assert_eq!(status, GcoStatus::Ok);
        assert!(!handle.is_null());
        assert_eq!(gco_instance_node_count(handle), 6);
        let edges = gco_instance_edge_count(handle);
        assert_eq!(edges, 7);

        let decoder = CString::new("unguided-best-of-20").unwrap();
        let mut objective = f64::NAN;
        let mut selected = vec![0u8; edges];
        let status = gco_solve(
            handle,
            ptr::null(),
            decoder.as_ptr(),
            42,
            &mut objective,
            selected.as_mut_ptr(),
        );
        assert_eq!(status, GcoStatus::Ok);
        assert_eq!(objective, 0.5, "best-of-20 finds the bridge cut");
        assert_eq!(selected.iter().filter(|&&b| b == 1).count(), 1);

        // Same seed, same answer.
        let mut objective2 = f64::NAN;
        let status = gco_solve(
            handle,
            ptr::null(),
            decoder.as_ptr(),
            42,
            &mut objective2,
            ptr::null_mut(),
        );
        assert_eq!(status, GcoStatus::Ok);
        assert_eq!(objective, objective2);

        gco_instance_free(handle);
    }
}

#[test]
fn errors_set_a_message() {
    unsafe {
        let mut handle: *mut GcoInstance = ptr::null_mut();
        let bad = CString::new("{not json").unwrap();
        let status = gco_instance_parse_json(bad.as_ptr(), &mut handle);
        assert_eq!(status, GcoStatus::ParseError);
        assert!(handle.is_null());
        let msg = CStr::from_ptr(gco_last_error()).to_string_lossy().into_owned();
        assert!(!msg.is_empty());

        let status = gco_instance_parse_json(ptr::null(), &mut handle);
        assert_eq!(status, GcoStatus::InvalidArgument);
    }
}

#[test]
fn guided_decoders_require_a_checkpoint() {
    unsafe {
        let mut handle: *mut GcoInstance = ptr::null_mut();
        gco_instance_parse_json(sample_instance_json().as_ptr(), &mut handle);
        let decoder = CString::new("guided-single").unwrap();
        let mut objective = f64::NAN;
        let status = gco_solve(
            handle,
            ptr::null(),
            decoder.as_ptr(),
            0,
            &mut objective,
            ptr::null_mut(),
        );
        assert_eq!(status, GcoStatus::SolveError);
        gco_instance_free(handle);
    }
}

#[test]
fn version_is_a_static_string() {
    let v = unsafe { CStr::from_ptr(gco_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
