use std::ffi::{CStr, CString};
use std::ptr;

use accel_diffeo_ffi::*;

fn square_image(n: u32, x0: u32, side: u32) -> Vec<f64> {
    let mut v = vec![0.0; (n * n) as usize];
    for j in (n - side) / 2..(n - side) / 2 + side {
        for i in x0..x0 + side {
            v[(j * n + i) as usize] = 1.0;
        }
    }
    v
}

unsafe fn image(n: u32, data: &[f64]) -> *mut AdImage {
    let mut out = ptr::null_mut();
    assert_eq!(ad_image_new(n, n, data.as_ptr(), &mut out), AdStatus::Ok);
    assert!(!out.is_null());
    out
}

unsafe fn last_error() -> String {
    let p = ad_last_error();
    assert!(!p.is_null());
    CStr::from_ptr(p).to_string_lossy().into_owned()
}

#[test]
fn identical_images_give_zero_flow() {
    unsafe {
        let data = square_image(16, 5, 6);
        let (a, b) = (image(16, &data), image(16, &data));
        let mut cfg = std::mem::zeroed::<AdConfig>();
        assert_eq!(ad_config_default(AdScheme::Agd, 1.0, &mut cfg), AdStatus::Ok);
        assert_eq!(cfg.p, 2);
        let mut reg = ptr::null_mut();
        assert_eq!(ad_register(a, b, &cfg, &mut reg), AdStatus::Ok);
        assert_eq!(ad_registration_converged(reg), 1);
        assert!(ad_registration_iterations(reg) <= 5);
        assert_eq!(ad_registration_potential(reg), 0.0);
        let mut ux = vec![1.0; 256];
        let mut uy = vec![1.0; 256];
        assert_eq!(ad_registration_displacement(reg, ux.as_mut_ptr(), uy.as_mut_ptr(), 256), AdStatus::Ok);
        assert!(ux.iter().chain(&uy).all(|&u| u == 0.0));
        ad_registration_free(reg);
        ad_image_free(a);
        ad_image_free(b);
    }
}

#[test]
fn gradient_descent_moves_toward_the_shift() {
    unsafe {
        let (a, b) = (image(24, &square_image(24, 8, 8)), image(24, &square_image(24, 10, 8)));
        let mut cfg = std::mem::zeroed::<AdConfig>();
        ad_config_default(AdScheme::Gd, 1.0, &mut cfg);
        cfg.max_iters = 200;
        let mut reg = ptr::null_mut();
        assert_eq!(ad_register(a, b, &cfg, &mut reg), AdStatus::Ok);
        assert_eq!(ad_registration_iterations(reg), 200);
        let mut ux = vec![0.0; 576];
        let mut uy = vec![0.0; 576];
        ad_registration_displacement(reg, ux.as_mut_ptr(), uy.as_mut_ptr(), 576);
        // Inside the square the map looks toward the shifted copy.
        assert!(ux[12 * 24 + 12] > 0.1, "{}", ux[12 * 24 + 12]);

        let dir = tempfile::tempdir().unwrap();
        let flow = CString::new(dir.path().join("f.dflo").to_str().unwrap()).unwrap();
        let warped = CString::new(dir.path().join("w.pgm").to_str().unwrap()).unwrap();
        assert_eq!(ad_registration_save_flow(reg, flow.as_ptr()), AdStatus::Ok);
        assert_eq!(ad_registration_save_warped(reg, warped.as_ptr()), AdStatus::Ok);
        assert_eq!(std::fs::metadata(dir.path().join("f.dflo")).unwrap().len(), 12 + 576 * 8);

        let mut back = ptr::null_mut();
        assert_eq!(ad_image_load_pgm(warped.as_ptr(), &mut back), AdStatus::Ok);
        let (mut w, mut h) = (0, 0);
        assert_eq!(ad_image_size(back, &mut w, &mut h), AdStatus::Ok);
        assert_eq!((w, h), (24, 24));
        ad_image_free(back);
        ad_registration_free(reg);
        ad_image_free(a);
        ad_image_free(b);
    }
}

#[test]
fn errors_are_reported_not_raised() {
    unsafe {
        let mut img = ptr::null_mut();
        assert_eq!(ad_image_new(16, 16, ptr::null(), &mut img), AdStatus::NullPointer);
        assert!(last_error().contains("data"));

        let tiny = [0.0; 4];
        assert_eq!(ad_image_new(2, 2, tiny.as_ptr(), &mut img), AdStatus::InvalidArgument);
        assert!(img.is_null());

        let missing = CString::new("/nonexistent/x.pgm").unwrap();
        assert_eq!(ad_image_load_pgm(missing.as_ptr(), &mut img), AdStatus::Io);

        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.pgm");
        std::fs::write(&bad, b"P5\n4 4\n999\n").unwrap();
        let bad = CString::new(bad.to_str().unwrap()).unwrap();
        assert_eq!(ad_image_load_pgm(bad.as_ptr(), &mut img), AdStatus::Format);
        assert!(last_error().contains("maxval"));

        let data = square_image(16, 5, 6);
        let a = image(16, &data);
        let b = image(20, &square_image(20, 5, 6));
        let mut cfg = std::mem::zeroed::<AdConfig>();
        ad_config_default(AdScheme::Agd, 1.0, &mut cfg);
        let mut reg = ptr::null_mut();
        assert_eq!(ad_register(a, b, &cfg, &mut reg), AdStatus::InvalidArgument);
        assert!(reg.is_null());
        cfg.safety = 3.0;
        assert_eq!(ad_register(a, a, &cfg, &mut reg), AdStatus::InvalidArgument);
        assert_eq!(ad_register(ptr::null(), a, &cfg, &mut reg), AdStatus::NullPointer);

        assert_eq!(ad_registration_iterations(ptr::null()), 0);
        assert!(ad_registration_potential(ptr::null()).is_nan());
        ad_registration_free(ptr::null_mut());
        ad_image_free(ptr::null_mut());
        ad_image_free(a);
        ad_image_free(b);
    }
}

#[test]
fn header_declares_the_exported_functions() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/accel_diffeo.h")).unwrap();
    for name in [
        "ad_last_error",
        "ad_image_new",
        "ad_image_load_pgm",
        "ad_image_free",
        "ad_image_size",
        "ad_config_default",
        "ad_register",
        "ad_registration_free",
        "ad_registration_iterations",
        "ad_registration_converged",
        "ad_registration_potential",
        "ad_registration_displacement",
        "ad_registration_save_flow",
        "ad_registration_save_warped",
        "typedef struct AdImage AdImage",
        "AD_STATUS_NUMERICAL = 5",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}

/// The header must be valid C on its own.
#[test]
fn header_compiles_as_c() {
    let Ok(status) = std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-x", "c"])
        .arg(concat!(env!("CARGO_MANIFEST_DIR"), "/include/accel_diffeo.h"))
        .status()
    else {
        eprintln!("no C compiler available; skipping");
        return;
    };
    assert!(status.success());
}
