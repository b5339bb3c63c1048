use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use revprobe_ffi::*;

fn last_error() -> String {
    let p = rp_last_error_message();
    assert!(!p.is_null());
    let s = unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned();
    unsafe { rp_string_free(p) };
    s
}

fn cpath(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn two_blobs() -> (Vec<f64>, Vec<u8>, usize) {
    let mut values = Vec::new();
    let mut bits = Vec::new();
    for i in 0..40 {
        let c = i % 2;
        let jitter = (i / 2) as f64 * 0.01;
        values.extend([c as f64 * 10.0 + jitter, jitter]);
        bits.extend([u8::from(c == 0), u8::from(c == 1)]);
    }
    (values, bits, 40)
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(rp_version()) }.to_str().unwrap();
    assert_eq!(v, revprobe::VERSION);
}

#[test]
fn kmeans_assign_and_persist() {
    let (values, _, n) = two_blobs();
    let dir = tempfile::tempdir().unwrap();
    unsafe {
        let mut f = ptr::null_mut();
        assert_eq!(rp_features_new(values.as_ptr(), n, 2, &mut f), RpStatus::Ok);
        assert_eq!((rp_features_n_samples(f), rp_features_dim(f)), (n, 2));
        let mut q = ptr::null_mut();
        assert_eq!(rp_kmeans_fit(f, 2, 100, 3, 7, &mut q), RpStatus::Ok);
        assert_eq!(rp_quantizer_k(q), 2);
        let mut labels = vec![usize::MAX; n];
        assert_eq!(rp_quantizer_assign(q, f, labels.as_mut_ptr()), RpStatus::Ok);
        for i in 0..n {
            assert_eq!(labels[i] == labels[0], i % 2 == 0);
        }

        let qp = cpath(&dir.path().join("q.rpkq"));
        assert_eq!(rp_quantizer_save(q, qp.as_ptr()), RpStatus::Ok);
        let mut q2 = ptr::null_mut();
        assert_eq!(rp_quantizer_load(qp.as_ptr(), &mut q2), RpStatus::Ok);
        assert_eq!(rp_quantizer_inertia(q2), rp_quantizer_inertia(q));

        let fp = cpath(&dir.path().join("f.rpfm"));
        assert_eq!(rp_features_save(f, fp.as_ptr()), RpStatus::Ok);
        let mut f2 = ptr::null_mut();
        assert_eq!(rp_features_load(fp.as_ptr(), &mut f2), RpStatus::Ok);
        assert_eq!(rp_features_n_samples(f2), n);

        rp_quantizer_free(q2);
        rp_quantizer_free(q);
        rp_features_free(f2);
        rp_features_free(f);
    }
}

#[test]
fn probe_train_predict_round_trip() {
    let (_, bits, n) = two_blobs();
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let cfg =
        CString::new(r#"{"probe": {"epochs": 30, "lr_drop_epochs": [20, 25], "batch_size": 8}}"#)
            .unwrap();
    let dir = tempfile::tempdir().unwrap();
    unsafe {
        let mut c = ptr::null_mut();
        assert_eq!(
            rp_concepts_new_dense(bits.as_ptr(), n, 2, &mut c),
            RpStatus::Ok
        );
        assert_eq!(rp_concepts_n_concepts(c), 2);
        let mut p = ptr::null_mut();
        assert_eq!(
            rp_probe_train(c, labels.as_ptr(), 2, cfg.as_ptr(), &mut p),
            RpStatus::Ok
        );
        let mut pred = vec![9; n];
        assert_eq!(rp_probe_predict(p, c, pred.as_mut_ptr()), RpStatus::Ok);
        assert_eq!(pred, labels);

        let pp = cpath(&dir.path().join("p.rplp"));
        assert_eq!(rp_probe_save(p, pp.as_ptr()), RpStatus::Ok);
        let mut p2 = ptr::null_mut();
        assert_eq!(rp_probe_load(pp.as_ptr(), &mut p2), RpStatus::Ok);
        let mut pred2 = vec![9; n];
        assert_eq!(rp_probe_predict(p2, c, pred2.as_mut_ptr()), RpStatus::Ok);
        assert_eq!(pred2, labels);
        rp_probe_free(p2);
        rp_probe_free(p);
        rp_concepts_free(c);
    }
}

#[test]
fn metric_entry_points() {
    let a = [0usize, 0, 1, 1];
    let b = [1usize, 1, 0, 0];
    let (mut mi, mut nmi, mut adj, mut h, mut emi) = (0.0, 0.0, 0.0, 0.0, -1.0);
    unsafe {
        assert_eq!(
            rp_mutual_info(
                a.as_ptr(),
                b.as_ptr(),
                4,
                RpNormalizer::Arithmetic,
                &mut mi,
                &mut nmi
            ),
            RpStatus::Ok
        );
        assert_eq!(
            rp_ami(a.as_ptr(), b.as_ptr(), 4, RpNormalizer::Max, &mut adj),
            RpStatus::Ok
        );
        assert_eq!(rp_entropy([2u64, 2].as_ptr(), 2, &mut h), RpStatus::Ok);
        assert_eq!(
            rp_expected_mi([3u64].as_ptr(), 1, [1u64, 2].as_ptr(), 2, &mut emi),
            RpStatus::Ok
        );
    }
    assert!((mi - 2f64.ln()).abs() < 1e-12);
    assert!((nmi - 1.0).abs() < 1e-12);
    assert!((adj - 1.0).abs() < 1e-12);
    assert!((h - 2f64.ln()).abs() < 1e-12);
    assert_eq!(emi, 0.0);
}

#[test]
fn errors_map_to_status_codes() {
    unsafe {
        let mut f = ptr::null_mut();
        let bad = [1.0, f64::NAN];
        assert_eq!(rp_features_new(bad.as_ptr(), 1, 2, &mut f), RpStatus::Data);
        assert!(f.is_null());
        assert!(last_error().contains("finite"), "message names the problem");

        assert_eq!(
            rp_features_new(ptr::null(), 1, 2, &mut f),
            RpStatus::NullPointer
        );

        let mut q = ptr::null_mut();
        let ok = [0.0, 1.0];
        assert_eq!(rp_features_new(ok.as_ptr(), 2, 1, &mut f), RpStatus::Ok);
        assert_eq!(
            rp_kmeans_fit(f, 5, 10, 1, 0, &mut q),
            RpStatus::InvalidArgument
        );
        rp_features_free(f);

        let missing = CString::new("/nonexistent/x.rpfm").unwrap();
        assert_eq!(rp_features_load(missing.as_ptr(), &mut f), RpStatus::Io);

        let dir = tempfile::tempdir().unwrap();
        let junk = dir.path().join("junk.rpcm");
        std::fs::write(&junk, b"NOPE\x01\x00\x00\x00").unwrap();
        let mut c = ptr::null_mut();
        assert_eq!(
            rp_concepts_load(cpath(&junk).as_ptr(), &mut c),
            RpStatus::Format
        );

        let bits = [1u8, 0, 0, 1];
        assert_eq!(
            rp_concepts_new_dense(bits.as_ptr(), 2, 2, &mut c),
            RpStatus::Ok
        );
        let labels = [0usize, 1];
        let cfg = CString::new(r#"{"probe": {"lr": 1e306, "epochs": 5, "lr_drop_epochs": []}, "test_ratio": 0.5, "val_ratio": 0.0}"#).unwrap();
        let mut p = ptr::null_mut();
        let status = rp_probe_train(c, labels.as_ptr(), 2, cfg.as_ptr(), &mut p);
        assert!(
            matches!(status, RpStatus::Divergence | RpStatus::Data),
            "got {status:?}: {}",
            last_error()
        );
        let cfg = CString::new(r#"{"nope": 1}"#).unwrap();
        assert_eq!(
            rp_probe_train(c, labels.as_ptr(), 2, cfg.as_ptr(), &mut p),
            RpStatus::Format
        );
        rp_concepts_free(c);
    }
}

#[test]
fn evaluate_json_is_deterministic() {
    let (values, bits, n) = two_blobs();
    let cfg = CString::new(r#"{"k": 2, "n_clusterings": 2, "probe": {"epochs": 10, "lr_drop_epochs": [6, 8], "batch_size": 8}}"#).unwrap();
    let run = || unsafe {
        let (mut f, mut c, mut out) = (ptr::null_mut(), ptr::null_mut(), ptr::null_mut());
        assert_eq!(rp_features_new(values.as_ptr(), n, 2, &mut f), RpStatus::Ok);
        assert_eq!(
            rp_concepts_new_dense(bits.as_ptr(), n, 2, &mut c),
            RpStatus::Ok
        );
        assert_eq!(rp_evaluate_json(f, c, cfg.as_ptr(), &mut out), RpStatus::Ok);
        let s = CStr::from_ptr(out).to_str().unwrap().to_owned();
        rp_string_free(out);
        rp_features_free(f);
        rp_concepts_free(c);
        s
    };
    let first = run();
    assert_eq!(first, run());
    let v: serde_json::Value = serde_json::from_str(&first).unwrap();
    assert_eq!(v["runs"].as_array().unwrap().len(), 2);
    assert_eq!(v["aggregate"]["top1"]["mean"], 1.0);
}

fn header_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include")
}

const C_PROGRAM: &str = r#"
#include <stdio.h>
#include <math.h>
#include "revprobe.h"

int main(void) {
    size_t a[6] = {0, 0, 1, 1, 2, 2};
    double mi = 0, nmi = 0, ami = 0;
    if (rp_mutual_info(a, a, 6, RP_NORMALIZER_ARITHMETIC, &mi, &nmi) != RP_STATUS_OK) return 1;
    if (rp_ami(a, a, 6, RP_NORMALIZER_ARITHMETIC, &ami) != RP_STATUS_OK) return 2;
    if (fabs(mi - log(3.0)) > 1e-12 || fabs(nmi - 1.0) > 1e-12 || fabs(ami - 1.0) > 1e-12) return 3;
    RpFeatures *f = NULL;
    double bad[1] = {NAN};
    if (rp_features_new(bad, 1, 1, &f) != RP_STATUS_DATA) return 4;
    char *msg = rp_last_error_message();
    if (msg == NULL) return 5;
    rp_string_free(msg);
    printf("%s\n", rp_version());
    return 0;
}
"#;

#[test]
fn header_compiles_as_c_and_cpp() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(&src, C_PROGRAM).unwrap();
    for (compiler, extra) in [("cc", vec!["-std=c99"]), ("c++", vec!["-x", "c++"])] {
        let status = Command::new(compiler)
            .args(&extra)
            .args(["-Wall", "-Werror", "-fsyntax-only", "-I"])
            .arg(header_dir())
            .arg(&src)
            .status()
            .unwrap_or_else(|e| panic!("{compiler} not runnable: {e}"));
        assert!(status.success(), "{compiler} rejected the header");
    }
}

/// Directory holding the shared library built alongside this test binary.
fn lib_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_links_and_runs() {
    let libdir = lib_dir();
    assert!(
        libdir.join("librevprobe_ffi.so").exists() || libdir.join("librevprobe_ffi.dylib").exists(),
        "shared library missing from {}",
        libdir.display()
    );
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    let exe = dir.path().join("main");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let status = Command::new("cc")
        .args(["-std=c99", "-I"])
        .arg(header_dir())
        .arg(&src)
        .arg("-o")
        .arg(&exe)
        .arg("-L")
        .arg(&libdir)
        .args(["-lrevprobe_ffi", "-lm"])
        .arg(format!("-Wl,-rpath,{}", libdir.display()))
        .status()
        .unwrap();
    assert!(status.success(), "link failed");
    let out = Command::new(&exe).output().unwrap();
    assert!(
        out.status.success(),
        "C program exited with {:?}",
        out.status
    );
    assert_eq!(
        String::from_utf8_lossy(&out.stdout).trim(),
        revprobe::VERSION
    );
}
