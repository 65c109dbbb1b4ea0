use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use pdploc_ffi::*;

fn last_error() -> String {
    let p = pdploc_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn generate(n: usize, seed: u64, sensors: usize) -> *mut PdpDataset {
    let mut ds = ptr::null_mut();
    assert_eq!(unsafe { pdploc_dataset_generate(n, seed, sensors, &mut ds) }, PdpStatus::Ok);
    assert!(!ds.is_null());
    ds
}

#[test]
fn dataset_round_trip_through_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("d.pdpd").to_str().unwrap()).unwrap();
    let ds = generate(4, 7, 8);
    unsafe {
        assert_eq!(pdploc_dataset_len(ds), 4);
        let (mut s, mut t) = (0, 0);
        assert_eq!(pdploc_dataset_shape(ds, &mut s, &mut t), PdpStatus::Ok);
        assert_eq!((s, t), (8, 128));
        assert_eq!(pdploc_dataset_write(ds, path.as_ptr()), PdpStatus::Ok);

        let mut back = ptr::null_mut();
        assert_eq!(pdploc_dataset_read(path.as_ptr(), &mut back), PdpStatus::Ok);
        let mut a = vec![0.0; s * t];
        let mut b = vec![0.0; s * t];
        let (mut la, mut lb) = ([0.0; 2], [0.0; 2]);
        for i in 0..4 {
            assert_eq!(pdploc_dataset_powers(ds, i, a.as_mut_ptr(), a.len()), PdpStatus::Ok);
            assert_eq!(pdploc_dataset_powers(back, i, b.as_mut_ptr(), b.len()), PdpStatus::Ok);
            assert_eq!(pdploc_dataset_label(ds, i, la.as_mut_ptr()), PdpStatus::Ok);
            assert_eq!(pdploc_dataset_label(back, i, lb.as_mut_ptr()), PdpStatus::Ok);
            assert_eq!(la, lb);
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() <= 1e-6 * x.abs());
            }
        }
        pdploc_dataset_free(back);
        pdploc_dataset_free(ds);
    }
}

#[test]
fn errors_carry_codes_and_messages() {
    unsafe {
        let mut ds = ptr::null_mut();
        assert_eq!(pdploc_dataset_generate(0, 1, 0, &mut ds), PdpStatus::InvalidArgument);
        assert!(last_error().contains("samples"));
        assert_eq!(pdploc_dataset_generate(1, 1, 0, ptr::null_mut()), PdpStatus::NullPointer);

        let missing = CString::new("/nonexistent/dir/x.pdpd").unwrap();
        assert_eq!(pdploc_dataset_read(missing.as_ptr(), &mut ds), PdpStatus::Io);
        assert!(ds.is_null());

        let ds = generate(2, 1, 0);
        let mut small = [0.0; 3];
        assert_eq!(
            pdploc_dataset_powers(ds, 0, small.as_mut_ptr(), small.len()),
            PdpStatus::BufferTooSmall
        );
        assert_eq!(pdploc_dataset_label(ds, 9, small.as_mut_ptr()), PdpStatus::InvalidArgument);
        assert!(last_error().contains("range"));
        pdploc_dataset_free(ds);

        let bad = CString::new("sst-huge").unwrap();
        let mut f = 0.0;
        assert_eq!(pdploc_flops(bad.as_ptr(), ptr::null(), 18, &mut f), PdpStatus::InvalidArgument);
        pdploc_dataset_free(ptr::null_mut());
        pdploc_checkpoint_free(ptr::null_mut());
    }
}

#[test]
fn flops_matches_core() {
    let preset = CString::new("sst-small").unwrap();
    let family = CString::new("vanilla").unwrap();
    let mut f = 0.0;
    assert_eq!(unsafe { pdploc_flops(preset.as_ptr(), family.as_ptr(), 18, &mut f) }, PdpStatus::Ok);
    let cfg = pdploc::model::ModelConfig::named_preset("sst-small", pdploc::model::Family::Vanilla).unwrap();
    assert_eq!(f, pdploc::model::count_flops(&cfg));
}

#[test]
fn train_predict_evaluate_and_reload() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.ckpt").to_str().unwrap()).unwrap();
    let preset = CString::new("sst-small").unwrap();
    let aug = CString::new("none").unwrap();
    let ds = generate(16, 3, 0);
    unsafe {
        let mut ck = ptr::null_mut();
        assert_eq!(
            pdploc_train(ds, preset.as_ptr(), ptr::null(), 2, 5, aug.as_ptr(), &mut ck),
            PdpStatus::Ok
        );
        let mut xy = vec![0.0; 32];
        assert_eq!(pdploc_checkpoint_predict(ck, ds, xy.as_mut_ptr(), xy.len()), PdpStatus::Ok);
        assert!(xy.iter().all(|v| v.is_finite()));

        let mut s = PdpErrorSummary::default();
        assert_eq!(pdploc_checkpoint_evaluate(ck, ds, &mut s), PdpStatus::Ok);
        assert!(s.p50 <= s.p90 && s.mean > 0.0);

        assert_eq!(pdploc_checkpoint_save(ck, path.as_ptr()), PdpStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(pdploc_checkpoint_load(path.as_ptr(), &mut back), PdpStatus::Ok);
        let mut xy2 = vec![0.0; 32];
        assert_eq!(pdploc_checkpoint_predict(back, ds, xy2.as_mut_ptr(), xy2.len()), PdpStatus::Ok);
        for (a, b) in xy.iter().zip(&xy2) {
            assert!((a - b).abs() < 1e-3);
        }
        pdploc_checkpoint_free(back);
        pdploc_checkpoint_free(ck);
        pdploc_dataset_free(ds);
    }
}

#[test]
fn version_is_cargo_version() {
    let v = unsafe { CStr::from_ptr(pdploc_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/pdploc.h");
    assert!(header.exists(), "build script writes the header");
    let Ok(status) = Command::new("cc").args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"]).arg(&header).status() else {
        eprintln!("no C compiler available; skipping");
        return;
    };
    assert!(status.success());
}
