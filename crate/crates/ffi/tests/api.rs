use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use dance_ffi::*;

fn last_error() -> String {
    let p = dance_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

/// Three well-separated classes on a line, interleaved by label.
fn blobs(n_per: usize, offset: f64) -> (Vec<f64>, Vec<u32>) {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n_per {
        for y in 0..3u32 {
            let t = i as f64 / n_per as f64 + offset;
            rows.extend([y as f64 * 4.0 + t, (t * 7.0).sin()]);
            labels.push(y);
        }
    }
    (rows, labels)
}

unsafe fn dataset(n_per: usize, offset: f64) -> *mut DanceDataset {
    let (rows, labels) = blobs(n_per, offset);
    let mut out = ptr::null_mut();
    let st = dance_dataset_new(rows.as_ptr(), labels.as_ptr(), labels.len(), 2, 3, &mut out);
    assert_eq!(st, DanceStatus::Ok);
    out
}

#[test]
fn end_to_end_through_the_c_abi() {
    unsafe {
        let support = dataset(40, 0.0);
        let cal = dataset(60, 0.013);
        let mut n = 0;
        let mut d = 0;
        let mut c = 0;
        assert_eq!(dance_dataset_shape(cal, &mut n, &mut d, &mut c), DanceStatus::Ok);
        assert_eq!((n, d, c), (180, 2, 3));

        let mut rfm = dance_rfm_config_default();
        rfm.tuning_budget = 4;
        let mut model = ptr::null_mut();
        assert_eq!(dance_model_fit(support, &rfm, &mut model), DanceStatus::Ok);
        let mut acc = 0.0;
        assert_eq!(
            dance_model_info(model, ptr::null_mut(), ptr::null_mut(), &mut acc),
            DanceStatus::Ok
        );
        assert!(acc > 0.9);

        let cfg = dance_score_config_default();
        let mut pred = ptr::null_mut();
        let st = dance_predictor_calibrate(model, cal, ptr::null(), 0.1, DANCE_LAMBDA_GRID, &cfg, &mut pred);
        assert_eq!(st, DanceStatus::Ok, "{}", last_error());
        let (mut lambda, mut q_knn, mut q_clr) = (f64::NAN, f64::NAN, f64::NAN);
        assert_eq!(
            dance_predictor_thresholds(pred, &mut lambda, &mut q_knn, &mut q_clr),
            DanceStatus::Ok
        );
        assert!((0.0..=1.0).contains(&lambda));
        assert!(!q_knn.is_nan() && !q_clr.is_nan());

        let mut mask = [9u8; 3];
        let z = [4.5, 0.2];
        assert_eq!(
            dance_predictor_predict(pred, z.as_ptr(), 2, 1, mask.as_mut_ptr(), 3),
            DanceStatus::Ok
        );
        assert!(mask.iter().all(|&m| m <= 1));
        assert_eq!(mask[1], 1, "point inside class 1 keeps its label");

        let queries = dataset(5, 0.05);
        let mut masks = vec![0u8; 45];
        assert_eq!(
            dance_predictor_predict_dataset(pred, queries, masks.as_mut_ptr(), masks.len()),
            DanceStatus::Ok
        );
        // row i carries label i % 3
        let covered = (0..15).filter(|&i| masks[i * 3 + i % 3] == 1).count();
        assert!(covered >= 12, "{covered} of 15 true labels covered");
        assert_eq!(
            dance_predictor_predict_dataset(pred, queries, masks.as_mut_ptr(), 44),
            DanceStatus::BufferTooSmall
        );

        let mut disjoint = ptr::null_mut();
        let st = dance_predictor_calibrate(model, cal, support, 0.1, 0.5, ptr::null(), &mut disjoint);
        assert_eq!(st, DanceStatus::Ok, "{}", last_error());
        let st = dance_predictor_calibrate(model, cal, cal, 0.1, 0.5, ptr::null(), &mut disjoint);
        assert_eq!(st, DanceStatus::InvalidArgument);
        assert!(!last_error().is_empty());

        dance_predictor_free(pred);
        dance_predictor_free(disjoint);
        dance_dataset_free(queries);
        dance_model_free(model);
        dance_dataset_free(cal);
        dance_dataset_free(support);
    }
}

#[test]
fn files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data_path = CString::new(dir.path().join("d.dnce").to_str().unwrap()).unwrap();
    let model_path = CString::new(dir.path().join("m.dncm").to_str().unwrap()).unwrap();
    let art_path = CString::new(dir.path().join("a.json").to_str().unwrap()).unwrap();
    unsafe {
        let data = dataset(40, 0.0);
        assert_eq!(dance_dataset_write(data, data_path.as_ptr()), DanceStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(dance_dataset_read(data_path.as_ptr(), &mut back), DanceStatus::Ok);
        let mut n = 0;
        assert_eq!(
            dance_dataset_shape(back, &mut n, ptr::null_mut(), ptr::null_mut()),
            DanceStatus::Ok
        );
        assert_eq!(n, 120);

        let rfm = DanceRfmConfig {
            iterations: 2,
            tuning_budget: 3,
            seed: 5,
        };
        let mut model = ptr::null_mut();
        assert_eq!(dance_model_fit(back, &rfm, &mut model), DanceStatus::Ok);
        assert_eq!(dance_model_write(model, model_path.as_ptr()), DanceStatus::Ok);
        let mut reread = ptr::null_mut();
        assert_eq!(dance_model_read(model_path.as_ptr(), &mut reread), DanceStatus::Ok);
        let (mut a, mut b) = (0.0, 0.0);
        dance_model_info(model, &mut a, ptr::null_mut(), ptr::null_mut());
        dance_model_info(reread, &mut b, ptr::null_mut(), ptr::null_mut());
        assert_eq!(a, b);

        let mut pred = ptr::null_mut();
        assert_eq!(
            dance_predictor_calibrate(reread, data, ptr::null(), 0.2, 0.5, ptr::null(), &mut pred),
            DanceStatus::Ok
        );
        assert_eq!(dance_predictor_write_artifact(pred, art_path.as_ptr()), DanceStatus::Ok);
        let text = std::fs::read_to_string(dir.path().join("a.json")).unwrap();
        assert!(text.contains("\"mode\": \"reuse\""));

        dance_predictor_free(pred);
        dance_model_free(reread);
        dance_model_free(model);
        dance_dataset_free(back);
        dance_dataset_free(data);
    }
}

#[test]
fn errors_map_to_status_codes() {
    unsafe {
        let mut out = ptr::null_mut();
        let missing = CString::new("/nonexistent/dir/x.dnce").unwrap();
        assert_eq!(dance_dataset_read(missing.as_ptr(), &mut out), DanceStatus::Io);
        assert!(out.is_null());
        assert_eq!(dance_dataset_read(ptr::null(), &mut out), DanceStatus::NullPointer);
        assert_eq!(last_error(), "path is null");

        let rows = [0.0, 1.0];
        let labels = [0u32, 7];
        assert_eq!(
            dance_dataset_new(rows.as_ptr(), labels.as_ptr(), 2, 1, 2, &mut out),
            DanceStatus::InvalidArgument
        );
        let rows = [0.0, f64::NAN];
        let labels = [0u32, 1];
        assert_eq!(
            dance_dataset_new(rows.as_ptr(), labels.as_ptr(), 2, 1, 2, &mut out),
            DanceStatus::Numerical
        );

        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.dnce");
        std::fs::write(&bad, b"NOPE").unwrap();
        let bad = CString::new(bad.to_str().unwrap()).unwrap();
        assert_eq!(dance_dataset_read(bad.as_ptr(), &mut out), DanceStatus::Format);

        assert_eq!(
            dance_predictor_thresholds(ptr::null(), ptr::null_mut(), ptr::null_mut(), ptr::null_mut()),
            DanceStatus::NullPointer
        );
        dance_dataset_free(ptr::null_mut());
        dance_model_free(ptr::null_mut());
        dance_predictor_free(ptr::null_mut());
    }
}

#[test]
fn version_is_nul_terminated() {
    let v = unsafe { CStr::from_ptr(dance_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_is_valid_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include").join("dance.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "dance_last_error_message",
        "dance_dataset_new",
        "dance_model_fit",
        "dance_predictor_calibrate",
        "dance_predictor_predict_dataset",
        "DANCE_STATUS_BUFFER_TOO_SMALL",
        "typedef struct DancePredictor DancePredictor;",
    ] {
        assert!(text.contains(name), "header lacks {name}");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("probe.c");
    std::fs::write(
        &src,
        "#include \"dance.h\"\nint main(void) { DanceScoreConfig c = dance_score_config_default(); return (int)c.smoothed - 1; }\n",
    )
    .unwrap();
    let status = Command::new("cc")
        .args([
            "-std=c11",
            "-Wall",
            "-Wextra",
            "-Werror",
            "-pedantic",
            "-fsyntax-only",
            "-I",
        ])
        .arg(header.parent().unwrap())
        .arg(&src)
        .status();
    match status {
        Ok(s) => assert!(s.success(), "dance.h does not compile as C11"),
        Err(e) => panic!("no C compiler available to check the header: {e}"),
    }
}
