use std::ffi::CString;
use std::process::Command;
use std::ptr;

use c2p_ffi::*;

fn grid() -> Vec<f64> {
    let mut v = Vec::new();
    for i in 0..12 {
        for j in 0..12 {
            for k in 0..3 {
                let (x, y, z) = (i as f64 * 0.7, j as f64 * 0.7, k as f64 * 0.9 + 0.1 * ((i * j) % 5) as f64);
                v.extend([x, y, z]);
            }
        }
    }
    v
}

fn last_error() -> String {
    let n = unsafe { c2p_last_error(ptr::null_mut(), 0) };
    let mut buf = vec![0u8; n + 1];
    unsafe { c2p_last_error(buf.as_mut_ptr().cast(), buf.len()) };
    buf.pop();
    String::from_utf8(buf).unwrap()
}

#[test]
fn icp_round_trip_through_handles() {
    let pts = grid();
    let n = pts.len() / 3;
    let shifted: Vec<f64> = pts.chunks(3).flat_map(|c| [c[0] + 0.2, c[1], c[2]]).collect();
    unsafe {
        let (mut src, mut tgt) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(c2p_cloud_from_points(pts.as_ptr(), n, &mut src), C2pStatus::Ok);
        assert_eq!(c2p_cloud_from_points(shifted.as_ptr(), n, &mut tgt), C2pStatus::Ok);
        assert_eq!(c2p_cloud_len(src), n);
        let mut res = ptr::null_mut();
        assert_eq!(c2p_register(src, tgt, C2pMethod::Icp, 0, &mut res), C2pStatus::Ok);
        assert_eq!(c2p_result_len(res), n);
        let mut field = vec![0.0; 3 * n];
        assert_eq!(c2p_result_field(res, field.as_mut_ptr(), field.len()), C2pStatus::Ok);
        assert!(field.chunks(3).all(|v| (v[0] - 0.2).abs() < 1e-6 && v[1].abs() < 1e-6));
        let mut m = [0.0; 12];
        assert_eq!(c2p_result_transform(res, m.as_mut_ptr()), C2pStatus::Ok);
        assert!((m[3] - 0.2).abs() < 1e-6);
        assert_eq!(c2p_result_field(res, field.as_mut_ptr(), 5), C2pStatus::BufferTooSmall);
        assert!(last_error().contains("need"));
        c2p_result_free(res);
        c2p_cloud_free(src);
        c2p_cloud_free(tgt);
    }
}

#[test]
fn null_and_bad_inputs_report_status() {
    unsafe {
        let mut cloud = ptr::null_mut();
        assert_eq!(c2p_cloud_from_points(ptr::null(), 3, &mut cloud), C2pStatus::NullPointer);
        assert!(cloud.is_null());
        let path = CString::new("/nonexistent/cloud.xyz").unwrap();
        assert_eq!(c2p_cloud_load(path.as_ptr(), &mut cloud), C2pStatus::Io);
        assert!(last_error().contains("/nonexistent/cloud.xyz"));
        let mut res = ptr::null_mut();
        assert_eq!(c2p_register(ptr::null(), ptr::null(), C2pMethod::C2p, 0, &mut res), C2pStatus::NullPointer);
        let one = [0.0, 0.0, 0.0];
        assert_eq!(c2p_cloud_from_points(one.as_ptr(), 1, &mut cloud), C2pStatus::Ok);
        assert_eq!(c2p_register(cloud, cloud, C2pMethod::Icp, 0, &mut res), C2pStatus::InvalidArgument);
        assert!(res.is_null());
        c2p_cloud_free(cloud);
        c2p_cloud_free(ptr::null_mut());
        c2p_result_free(ptr::null_mut());
        assert_eq!(c2p_cloud_len(ptr::null()), 0);
    }
}

#[test]
fn version_matches_crate() {
    let v = unsafe { std::ffi::CStr::from_ptr(c2p_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_api_and_compiles() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/c2p.h");
    let text = std::fs::read_to_string(header).unwrap();
    for f in ["c2p_register", "c2p_cloud_load", "c2p_result_field", "c2p_last_error", "C2P_STATUS_OK"] {
        assert!(text.contains(f), "{f} missing from header");
    }
    let status = Command::new("cc").args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c", header]).status().unwrap();
    assert!(status.success());
}
