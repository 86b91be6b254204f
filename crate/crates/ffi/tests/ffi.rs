use std::ffi::CString;
use std::process::Command;
use std::ptr;

use sacnet_ffi::*;

fn sphere(n: usize) -> Vec<f64> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .flat_map(|i| {
            let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - y * y).sqrt();
            let t = golden * i as f64;
            [r * t.cos(), y, r * t.sin()]
        })
        .collect()
}

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 256];
    let n = unsafe { sacnet_last_error(buf.as_mut_ptr(), buf.len()) };
    let s: Vec<u8> = buf.iter().take(n.min(255)).map(|&c| c as u8).collect();
    String::from_utf8(s).unwrap()
}

fn new_model(task: SacnetTask, classes: usize, latent: usize, points: usize) -> *mut SacnetModel {
    let mut m = ptr::null_mut();
    assert_eq!(
        unsafe { sacnet_model_new(task, classes, latent, points, 7, &mut m) },
        SacnetStatus::Ok
    );
    assert!(!m.is_null());
    m
}

#[test]
fn classifier_counts_and_logits() {
    let m = new_model(SacnetTask::Classification, 40, 0, 0);
    let mut count = 0;
    let mut flops = 0;
    unsafe {
        assert_eq!(sacnet_model_param_count(m, &mut count), SacnetStatus::Ok);
        assert_eq!(sacnet_model_flops(m, 1024, &mut flops), SacnetStatus::Ok);
    }
    assert!((30_000..=50_000).contains(&count));
    assert!(flops > 4_000_000 && flops < 16_000_000);
    let pts = sphere(256);
    let mut logits = vec![0.0; 40];
    let st = unsafe { sacnet_classify(m, pts.as_ptr(), 256, logits.as_mut_ptr(), logits.len()) };
    assert_eq!(st, SacnetStatus::Ok);
    assert!(logits.iter().all(|x| x.is_finite()));
    let st = unsafe { sacnet_classify(m, pts.as_ptr(), 256, logits.as_mut_ptr(), 3) };
    assert_eq!(st, SacnetStatus::BufferTooSmall);
    assert!(last_error().contains("40"));
    let mut z = vec![0.0; 8];
    assert_eq!(
        unsafe { sacnet_encode(m, pts.as_ptr(), 256, z.as_mut_ptr(), 8) },
        SacnetStatus::WrongTask
    );
    unsafe { sacnet_model_free(m) };
}

#[test]
fn autoencoder_round_trip_through_a_file() {
    let m = new_model(SacnetTask::Autoencoder, 0, 16, 64);
    let pts = sphere(64);
    let mut z = vec![0.0; 16];
    let mut decoded = 0;
    unsafe {
        assert_eq!(sacnet_encode(m, pts.as_ptr(), 64, z.as_mut_ptr(), 16), SacnetStatus::Ok);
        assert_eq!(sacnet_model_decoded_points(m, &mut decoded), SacnetStatus::Ok);
    }
    assert_eq!(decoded, 64);
    let mut out_a = vec![0.0; 3 * decoded];
    let mut out_b = vec![0.0; 3 * decoded];
    unsafe {
        assert_eq!(
            sacnet_decode(m, z.as_ptr(), 16, 3, out_a.as_mut_ptr(), decoded),
            SacnetStatus::Ok
        );
        assert_eq!(
            sacnet_decode(m, z.as_ptr(), 15, 3, out_a.as_mut_ptr(), decoded),
            SacnetStatus::Dimension
        );
    }
    let dir = tempfile::tempdir().unwrap();
    let file = CString::new(dir.path().join("m.ckpt").to_str().unwrap()).unwrap();
    let mut loaded = ptr::null_mut();
    unsafe {
        assert_eq!(sacnet_model_save(m, file.as_ptr()), SacnetStatus::Ok);
        assert_eq!(sacnet_model_load(file.as_ptr(), &mut loaded), SacnetStatus::Ok);
        assert_eq!(
            sacnet_decode(loaded, z.as_ptr(), 16, 3, out_b.as_mut_ptr(), decoded),
            SacnetStatus::Ok
        );
        let mut task = SacnetTask::Classification;
        assert_eq!(sacnet_model_task(loaded, &mut task), SacnetStatus::Ok);
        assert_eq!(task, SacnetTask::Autoencoder);
        sacnet_model_free(loaded);
        sacnet_model_free(m);
    }
    assert_eq!(out_a, out_b);
}

#[test]
fn missing_or_corrupt_checkpoints_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.ckpt");
    std::fs::write(&p, b"SACN\x01\0\0\0\xff\0\0\0\0\0\0\0junk").unwrap();
    let file = CString::new(p.to_str().unwrap()).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(
        unsafe { sacnet_model_load(file.as_ptr(), &mut m) },
        SacnetStatus::Integrity
    );
    assert!(m.is_null());
    let missing = CString::new(dir.path().join("none").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { sacnet_model_load(missing.as_ptr(), &mut m) }, SacnetStatus::Io);
    assert_eq!(
        unsafe { sacnet_model_load(ptr::null(), &mut m) },
        SacnetStatus::NullPointer
    );
}

#[test]
fn geometry_entry_points() {
    let a = [0.0, 0.0, 0.0];
    let b = [1.0, 0.0, 0.0];
    let mut d = 0.0;
    assert_eq!(
        unsafe { sacnet_chamfer(a.as_ptr(), 1, b.as_ptr(), 1, &mut d) },
        SacnetStatus::Ok
    );
    assert_eq!(d, 2.0);
    assert_eq!(
        unsafe { sacnet_chamfer(a.as_ptr(), 0, b.as_ptr(), 1, &mut d) },
        SacnetStatus::InvalidArgument
    );

    let line: Vec<f64> = (0..5).flat_map(|i| [i as f64, 0.0, 0.0]).collect();
    let mut idx = [0usize; 2];
    let mut dist = [0.0; 2];
    let q = [1.2, 0.0, 0.0];
    assert_eq!(
        unsafe { sacnet_knn(q.as_ptr(), 1, line.as_ptr(), 5, 2, idx.as_mut_ptr(), dist.as_mut_ptr()) },
        SacnetStatus::Ok
    );
    assert_eq!(idx, [1, 2]);
    assert!((dist[0] - 0.2).abs() < 1e-12 && (dist[1] - 0.8).abs() < 1e-12);

    let mut s = [0usize; 3];
    assert_eq!(
        unsafe { sacnet_fps(line.as_ptr(), 5, 3, s.as_mut_ptr()) },
        SacnetStatus::Ok
    );
    let mut sorted = s;
    sorted.sort_unstable();
    assert_eq!(sorted, [0, 2, 4]);
    assert_ne!(
        unsafe { sacnet_fps(line.as_ptr(), 5, 6, s.as_mut_ptr()) },
        SacnetStatus::Ok
    );
}

#[test]
fn segmenter_labels_stay_in_category() {
    let m = new_model(SacnetTask::Segmentation, 0, 0, 0);
    let pts = sphere(512);
    let mut labels = vec![usize::MAX; 512];
    unsafe {
        assert_eq!(
            sacnet_segment(m, pts.as_ptr(), 512, 0, labels.as_mut_ptr(), 512),
            SacnetStatus::Ok
        );
        assert_eq!(
            sacnet_segment(m, pts.as_ptr(), 512, 99, labels.as_mut_ptr(), 512),
            SacnetStatus::InvalidArgument
        );
        sacnet_model_free(m);
    }
    assert!(labels.iter().all(|&l| l < 4));
}

/// Compiles a C program against the generated header and the static
/// library, then runs it.
#[test]
fn c_program_links_and_runs() {
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().unwrap().parent().unwrap();
    let lib = profile_dir.join("libsacnet_ffi.a");
    assert!(lib.exists(), "static library missing at {}", lib.display());
    let include = concat!(env!("CARGO_MANIFEST_DIR"), "/include");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(
        &src,
        r#"
#include <stdio.h>
#include "sacnet.h"
int main(void) {
    double a[3] = {0, 0, 0}, b[3] = {1, 0, 0}, d = -1;
    if (sacnet_chamfer(a, 1, b, 1, &d) != SACNET_STATUS_OK || d != 2.0) return 1;
    SacnetModel *m = NULL;
    if (sacnet_model_new(SACNET_TASK_CLASSIFICATION, 40, 0, 0, 1, &m) != SACNET_STATUS_OK) return 2;
    size_t count = 0;
    sacnet_model_param_count(m, &count);
    sacnet_model_free(m);
    if (sacnet_model_load(NULL, &m) != SACNET_STATUS_NULL_POINTER) return 3;
    char msg[64];
    sacnet_last_error(msg, sizeof msg);
    printf("%zu %s\n", count, msg);
    return 0;
}
"#,
    )
    .unwrap();
    let bin = dir.path().join("main");
    let status = Command::new("cc")
        .arg(&src)
        .arg(format!("-I{include}"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .expect("a C compiler named cc");
    assert!(status.success());
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "42982 path is null");
}
