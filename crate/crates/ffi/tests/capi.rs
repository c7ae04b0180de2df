use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use oavat::cli::{train_planner, TrainArgs};
use oavat_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 256];
    unsafe { oavat_last_error(buf.as_mut_ptr(), buf.len()) };
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(oavat_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn filter_lifecycle() {
    let start = [80.0, 60.0, 20.0, 50.0];
    let mut f = ptr::null_mut();
    assert_eq!(unsafe { oavat_filter_new(start.as_ptr(), 15.0, 0.4, 0.5, 0.01, &mut f) }, OAVAT_OK);
    assert!(!f.is_null());

    let mut out = [0.0; 4];
    let mut used = false;
    let z = [82.0, 60.0, 20.0, 50.0];
    assert_eq!(unsafe { oavat_filter_step(f, z.as_ptr(), 0.95, out.as_mut_ptr(), &mut used) }, OAVAT_OK);
    assert!(used);
    assert!((out[0] - 82.0).abs() < 0.1, "{out:?}");

    assert_eq!(unsafe { oavat_filter_step(f, z.as_ptr(), 0.2, out.as_mut_ptr(), &mut used) }, OAVAT_OK);
    assert!(!used, "below the gate");
    assert_eq!(unsafe { oavat_filter_step(f, ptr::null(), 0.0, out.as_mut_ptr(), ptr::null_mut()) }, OAVAT_OK);
    assert!(out.iter().all(|v| v.is_finite()));

    assert_eq!(unsafe { oavat_filter_step(f, z.as_ptr(), 0.9, ptr::null_mut(), ptr::null_mut()) }, OAVAT_ERR_ARGUMENT);
    assert!(last_error().contains("null"));
    unsafe { oavat_filter_free(f) };
    unsafe { oavat_filter_free(ptr::null_mut()) };
    assert_eq!(unsafe { oavat_filter_new(ptr::null(), 15.0, 0.4, 0.5, 0.01, &mut f) }, OAVAT_ERR_ARGUMENT);
}

#[test]
fn confidence_noise_crosses_one_half_at_gamma() {
    assert_eq!(oavat_confidence_noise(0.4, 15.0, 0.4), 0.5);
    assert!(oavat_confidence_noise(0.9, 15.0, 0.4) < oavat_confidence_noise(0.1, 15.0, 0.4));
}

#[test]
fn last_error_reports_full_length() {
    let mut f = ptr::null_mut();
    unsafe { oavat_filter_new(ptr::null(), 15.0, 0.4, 0.5, 0.01, &mut f) };
    let need = unsafe { oavat_last_error(ptr::null_mut(), 0) };
    let mut tiny = [0 as std::ffi::c_char; 4];
    assert_eq!(unsafe { oavat_last_error(tiny.as_mut_ptr(), 4) }, need);
    assert_eq!(unsafe { CStr::from_ptr(tiny.as_ptr()) }.to_bytes().len(), 3);
}

fn checkpoint(dir: &std::path::Path) -> CString {
    let args = TrainArgs {
        n: 16,
        epochs: 1,
        batch: 8,
        ..TrainArgs::default()
    };
    let (ckpt, _) = train_planner(&args, 3).unwrap();
    let path = dir.join("planner.bin");
    ckpt.save(&path).unwrap();
    CString::new(path.to_str().unwrap()).unwrap()
}

#[test]
fn planner_sampling() {
    let dir = tempfile::tempdir().unwrap();
    let path = checkpoint(dir.path());
    let mut p = ptr::null_mut();
    assert_eq!(unsafe { oavat_planner_load(path.as_ptr(), &mut p) }, OAVAT_OK);
    let (nc, nt) = unsafe { (oavat_planner_condition_len(p), oavat_planner_trajectory_len(p)) };
    assert_eq!((nc, nt), (260, 32));

    let cond = vec![0.0; nc];
    let mut a = vec![0.0; nt];
    let mut b = vec![0.0; nt];
    assert_eq!(unsafe { oavat_planner_sample(p, cond.as_ptr(), nc, 7, a.as_mut_ptr(), nt) }, OAVAT_OK);
    assert_eq!(unsafe { oavat_planner_sample(p, cond.as_ptr(), nc, 7, b.as_mut_ptr(), nt) }, OAVAT_OK);
    assert_eq!(a, b);
    assert!(a.iter().all(|v| (-1.0..=1.0).contains(v)));
    assert_eq!(
        unsafe { oavat_planner_sample(p, cond.as_ptr(), nc - 1, 7, a.as_mut_ptr(), nt) },
        OAVAT_ERR_ARGUMENT
    );
    unsafe { oavat_planner_free(p) };

    let missing = CString::new(dir.path().join("nope.bin").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { oavat_planner_load(missing.as_ptr(), &mut p) }, OAVAT_ERR_IO);
    std::fs::write(dir.path().join("junk.bin"), b"not a checkpoint").unwrap();
    let junk = CString::new(dir.path().join("junk.bin").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { oavat_planner_load(junk.as_ptr(), &mut p) }, OAVAT_ERR_IO);
    assert!(last_error().contains("checkpoint"));
}

#[test]
fn evaluation_is_deterministic() {
    let preset = CString::new("open").unwrap();
    let pid = CString::new("no_planner_pid").unwrap();
    let mut a = OavatMetrics::default();
    let mut b = OavatMetrics::default();
    let run = |out: &mut OavatMetrics| unsafe { oavat_evaluate(preset.as_ptr(), pid.as_ptr(), ptr::null(), 4, 60, 5, out) };
    assert_eq!(run(&mut a), OAVAT_OK);
    assert_eq!(run(&mut b), OAVAT_OK);
    assert_eq!(a.episodes, 4);
    assert_eq!((a.ar, a.el, a.sr), (b.ar, b.el, b.sr));

    let full = CString::new("full").unwrap();
    let code = unsafe { oavat_evaluate(preset.as_ptr(), full.as_ptr(), ptr::null(), 1, 10, 0, &mut a) };
    assert_eq!(code, OAVAT_ERR_ARGUMENT, "full needs a planner");
    let bad = CString::new("nowhere").unwrap();
    let code = unsafe { oavat_evaluate(bad.as_ptr(), pid.as_ptr(), ptr::null(), 1, 10, 0, &mut a) };
    assert_eq!(code, OAVAT_ERR_ARGUMENT);
    let code = unsafe { oavat_evaluate(preset.as_ptr(), pid.as_ptr(), ptr::null(), 0, 10, 0, &mut a) };
    assert_eq!(code, OAVAT_ERR_EMPTY);
}

fn header() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/oavat.h")
}

fn have(tool: &str) -> bool {
    Command::new(tool).arg("--version").output().is_ok_and(|o| o.status.success())
}

#[test]
fn header_compiles_as_c_and_cpp() {
    for (tool, lang) in [("cc", "c"), ("c++", "c++")] {
        if !have(tool) {
            eprintln!("skipping: no {tool}");
            continue;
        }
        let out = Command::new(tool)
            .args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang])
            .arg(header())
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
}

const C_PROGRAM: &str = r#"
#include <stdio.h>
#include "oavat.h"

int main(void) {
    double box[4] = {80.0, 60.0, 20.0, 50.0};
    double out[4];
    bool used = false;
    OavatFilter *f = NULL;
    if (oavat_filter_new(box, 15.0, 0.4, 0.5, 0.01, &f) != OAVAT_OK) return 10;
    if (oavat_filter_step(f, box, 0.9, out, &used) != OAVAT_OK || !used) return 11;
    oavat_filter_free(f);
    if (oavat_filter_new(NULL, 15.0, 0.4, 0.5, 0.01, &f) != OAVAT_ERR_ARGUMENT) return 12;
    char msg[64];
    oavat_last_error(msg, sizeof msg);
    printf("%s|%s|%.3f\n", oavat_version(), msg, out[0]);
    return 0;
}
"#;

#[test]
fn links_from_c() {
    // target/<profile>/deps/<this test> -> target/<profile>
    let profile_dir = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    let lib = profile_dir.join("liboavat_ffi.a");
    if !have("cc") || !lib.exists() {
        eprintln!("skipping: no cc or no static library at {}", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    let exe = dir.path().join("main");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let out = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(header().parent().unwrap())
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&exe).output().unwrap();
    assert!(run.status.success(), "exit {:?}", run.status.code());
    let text = String::from_utf8(run.stdout).unwrap();
    assert!(text.starts_with(env!("CARGO_PKG_VERSION")), "{text}");
    assert!(text.contains("null"), "{text}");
}
