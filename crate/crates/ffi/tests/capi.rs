use std::ffi::{CStr, CString};
use std::ptr;

use rotex::features::{extract_features, cpsd};
use rotex::net::{NetworkParams, Normalization, PoolGrid};
use rotex::rotconv::{Arch, FilterBank};
use rotex::tensor::Tensor;
use rotex_ffi::*;

fn params() -> NetworkParams {
    let n = 5;
    let canonical = (0..2 * n * n).map(|i| ((i * 37 % 11) as f64 - 5.0) / 7.0).collect();
    let bank = FilterBank::from_parts(Arch::Rotatable, 4, n, canonical, vec![0.1, -0.2]).unwrap();
    NetworkParams {
        bank,
        classes: 3,
        fc_weights: vec![0.5, -0.3, 0.2, 0.8, -0.6, 0.1],
        fc_biases: vec![0.0, 0.1, -0.1],
        grid: PoolGrid::new(2, 2),
        normalization: Normalization { mean: 0.25, std: 2.0 },
    }
}

fn image() -> Tensor {
    Tensor::from_fn(16, 14, |r, c| ((r * 3 + c * 5) % 7) as f64 / 7.0)
}

struct Fixture {
    _dir: tempfile::TempDir,
    handle: *mut RotexModel,
}

impl Drop for Fixture {
    fn drop(&mut self) {
        unsafe { rotex_model_free(self.handle) };
    }
}

fn load() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.bin");
    rotex::io::save_checkpoint(&path, &params()).unwrap();
    let c = CString::new(path.to_str().unwrap()).unwrap();
    let mut handle = ptr::null_mut();
    assert_eq!(unsafe { rotex_model_load(c.as_ptr(), &mut handle) }, RotexStatus::Ok);
    assert!(!handle.is_null());
    Fixture { _dir: dir, handle }
}

fn last_error() -> String {
    let p = rotex_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn info_and_dim() {
    let f = load();
    let (mut m, mut r, mut n, mut c, mut d) = (0, 0, 0, 0, 0);
    unsafe {
        assert_eq!(rotex_model_info(f.handle, &mut m, &mut r, &mut n, &mut c), RotexStatus::Ok);
        assert_eq!(rotex_feature_dim(f.handle, &mut d), RotexStatus::Ok);
    }
    assert_eq!((m, r, n, c, d), (2, 4, 5, 3, 16));
}

#[test]
fn features_match_library() {
    let f = load();
    let img = image();
    let mut out = vec![0.0; 16];
    let status = unsafe { rotex_extract_features(f.handle, img.data().as_ptr(), 16, 14, 8, 2, 2, out.as_mut_ptr(), out.len()) };
    assert_eq!(status, RotexStatus::Ok);
    let p = params();
    let want = extract_features(&p.normalization.apply(&img), &p.bank, 8, PoolGrid::new(2, 2)).unwrap();
    assert_eq!(out, want.values);
}

#[test]
fn predict_matches_library() {
    let f = load();
    let img = image();
    let mut probs = vec![0.0; 3];
    let mut label = usize::MAX;
    let status = unsafe { rotex_predict(f.handle, img.data().as_ptr(), 16, 14, probs.as_mut_ptr(), 3, &mut label) };
    assert_eq!(status, RotexStatus::Ok);
    let p = params();
    let net = rotex::net::Network::new(p.clone()).unwrap();
    let want = net.predict(&[p.normalization.apply(&img)]).unwrap();
    assert_eq!(label, want.predictions()[0]);
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    let mut label2 = 0;
    assert_eq!(unsafe { rotex_predict(f.handle, img.data().as_ptr(), 16, 14, ptr::null_mut(), 0, &mut label2) }, RotexStatus::Ok);
    assert_eq!(label, label2);
}

#[test]
fn cpsd_of_impulses() {
    let mut x = vec![0.0; 36];
    x[0] = 1.0;
    let mut s = 0.0;
    assert_eq!(unsafe { rotex_cpsd(x.as_ptr(), 6, 6, x.as_ptr(), 6, 6, &mut s) }, RotexStatus::Ok);
    assert!((s - 36.0).abs() < 1e-12);
    let img = image();
    let k = Tensor::from_fn(3, 3, |r, c| (r + 2 * c) as f64);
    assert_eq!(unsafe { rotex_cpsd(img.data().as_ptr(), 16, 14, k.data().as_ptr(), 3, 3, &mut s) }, RotexStatus::Ok);
    assert_eq!(s, cpsd(&img, &k).unwrap());
    assert_eq!(unsafe { rotex_cpsd(k.data().as_ptr(), 3, 3, img.data().as_ptr(), 16, 14, &mut s) }, RotexStatus::InvalidArgument);
}

#[test]
fn error_reporting() {
    let f = load();
    let img = image();
    let mut out = vec![0.0; 4];
    let status = unsafe { rotex_extract_features(f.handle, img.data().as_ptr(), 16, 14, 8, 2, 2, out.as_mut_ptr(), 4) };
    assert_eq!(status, RotexStatus::BufferTooSmall);
    assert!(last_error().contains("16"));
    let mut out = vec![0.0; 16];
    let status = unsafe { rotex_extract_features(f.handle, img.data().as_ptr(), 16, 14, 8, 20, 20, out.as_mut_ptr(), 16) };
    assert_eq!(status, RotexStatus::InvalidArgument);
    let mut d = 0;
    assert_eq!(unsafe { rotex_feature_dim(ptr::null(), &mut d) }, RotexStatus::NullPointer);
    assert_eq!(unsafe { rotex_feature_dim(f.handle, &mut d) }, RotexStatus::Ok);
    assert!(rotex_last_error().is_null());
}

#[test]
fn load_failures() {
    let mut handle = ptr::null_mut();
    let missing = CString::new("/nonexistent/model.bin").unwrap();
    assert_eq!(unsafe { rotex_model_load(missing.as_ptr(), &mut handle) }, RotexStatus::Io);
    assert!(handle.is_null());
    assert!(last_error().contains("missing"));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("junk.bin");
    std::fs::write(&path, b"not a checkpoint").unwrap();
    let c = CString::new(path.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { rotex_model_load(c.as_ptr(), &mut handle) }, RotexStatus::Io);
    assert_eq!(unsafe { rotex_model_load(ptr::null(), &mut handle) }, RotexStatus::NullPointer);
    unsafe { rotex_model_free(ptr::null_mut()) };
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/rotex.h")).unwrap();
    for name in [
        "typedef struct RotexModel RotexModel",
        "ROTEX_STATUS_OK = 0",
        "rotex_model_load",
        "rotex_model_free",
        "rotex_extract_features",
        "rotex_predict",
        "rotex_cpsd",
        "rotex_last_error",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
    let v = unsafe { CStr::from_ptr(rotex_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
