use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::ptr;

use tradar::harness::{load_splits, train, RunConfig, TrainOptions};
use tradar::metrics::{write_predictions, PredictionRecord};
use tradar_ffi::*;

fn cstr(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn path(p: &Path) -> CString {
    cstr(p.to_str().unwrap())
}

fn last_error() -> Option<String> {
    let p = tradar_last_error();
    if p.is_null() {
        return None;
    }
    let s = unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string();
    unsafe { tradar_string_free(p) };
    Some(s)
}

fn take_string(p: *mut c_char) -> String {
    let s = unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string();
    unsafe { tradar_string_free(p) };
    s
}

fn bx(class_id: u32, x: f64, y: f64, l: f64, w: f64, yaw: f64) -> TradarBox {
    TradarBox {
        class_id,
        x,
        y,
        z: 0.5,
        l,
        w,
        h: 1.0,
        yaw,
    }
}

const TINY: &str = r#"
seed = 5
[model]
channels = 4
text_dim = 4
deform_groups = 2
backbone_blocks = [1, 1, 1]
[model.graph]
k = 3
[model.grid]
cell_size = 0.96
out_channels = 4
[optimizer]
epochs = 1
batch_size = 2
[data]
train_scenes = 3
val_scenes = 2
"#;

#[test]
fn iou_of_offset_squares() {
    // Two 2x2 squares shifted by 1 m share half their area: 2 / 6.
    let (a, b) = (bx(0, 0.0, 0.0, 2.0, 2.0, 0.0), bx(0, 1.0, 0.0, 2.0, 2.0, 0.0));
    let mut v = -1.0;
    assert_eq!(unsafe { tradar_iou_bev(&a, &b, &mut v) }, TradarStatus::Ok);
    assert!((v - 1.0 / 3.0).abs() < 1e-12);
    assert_eq!(unsafe { tradar_iou_3d(&a, &b, &mut v) }, TradarStatus::Ok);
    assert!((v - 1.0 / 3.0).abs() < 1e-12);
    assert_eq!(last_error(), None);
    // A quarter turn of a square is the same square.
    let c = bx(0, 0.0, 0.0, 2.0, 2.0, std::f64::consts::FRAC_PI_2);
    assert_eq!(unsafe { tradar_iou_bev(&a, &c, &mut v) }, TradarStatus::Ok);
    assert!((v - 1.0).abs() < 1e-12);
}

#[test]
fn bad_arguments_set_codes_and_messages() {
    let a = bx(0, 0.0, 0.0, 2.0, 2.0, 0.0);
    let mut v = 0.0;
    assert_eq!(unsafe { tradar_iou_bev(ptr::null(), &a, &mut v) }, TradarStatus::NullPointer);
    assert!(last_error().unwrap().contains("is null"));
    assert_eq!(unsafe { tradar_iou_bev(&a, &a, ptr::null_mut()) }, TradarStatus::NullPointer);
    let bad_class = bx(7, 0.0, 0.0, 2.0, 2.0, 0.0);
    assert_eq!(unsafe { tradar_iou_bev(&a, &bad_class, &mut v) }, TradarStatus::InvalidArgument);
    assert!(last_error().unwrap().contains("class id 7"));
    let flat = bx(0, 0.0, 0.0, 0.0, 2.0, 0.0);
    assert_eq!(unsafe { tradar_iou_3d(&a, &flat, &mut v) }, TradarStatus::InvalidArgument);

    let mut m: *mut TradarModel = ptr::null_mut();
    let missing = cstr("/definitely/not/here.json");
    assert_eq!(unsafe { tradar_model_load(missing.as_ptr(), &mut m) }, TradarStatus::NotFound);
    assert!(m.is_null());
    assert_eq!(unsafe { tradar_model_point_fields(ptr::null()) }, 0);
    assert_eq!(unsafe { tradar_predictions_len(ptr::null()) }, 0);
    unsafe {
        tradar_model_free(ptr::null_mut());
        tradar_predictions_free(ptr::null_mut());
        tradar_string_free(ptr::null_mut());
    }
    let bad_toml = cstr("[model]\nchannels = \"many\"\n");
    let out = cstr("/tmp/unused");
    assert_eq!(
        unsafe { tradar_synth_generate(bad_toml.as_ptr(), out.as_ptr(), 1, ptr::null_mut()) },
        TradarStatus::Parse
    );
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(tradar_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn model_predictions_match_the_rust_api() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::from_toml_str(TINY, Path::new("tiny.toml")).unwrap();
    let out = train(
        &cfg,
        TrainOptions {
            out_dir: Some(dir.path()),
            echo: false,
        },
    )
    .unwrap();
    let ck = path(&out.checkpoint.unwrap());

    let mut m: *mut TradarModel = ptr::null_mut();
    assert_eq!(unsafe { tradar_model_load(ck.as_ptr(), &mut m) }, TradarStatus::Ok);
    assert_eq!(unsafe { tradar_model_point_fields(m) }, 7);

    let val = load_splits(&cfg).unwrap().val;
    for s in &val {
        let prompt = cstr(&s.prompt);
        let pts = s.radar.data();
        let mut p: *mut TradarPredictions = ptr::null_mut();
        let st = unsafe { tradar_model_predict(m, pts.as_ptr(), pts.len() / 7, prompt.as_ptr(), &mut p) };
        assert_eq!(st, TradarStatus::Ok, "{:?}", last_error());
        let want = out.model.predict(&out.model.prepare(&s.radar, &s.prompt).unwrap()).unwrap();
        let n = unsafe { tradar_predictions_len(p) };
        assert_eq!(n, want.len());
        for (i, w) in want.iter().enumerate() {
            let mut b = TradarScoredBox {
                bbox: bx(0, 0.0, 0.0, 1.0, 1.0, 0.0),
                score: 0.0,
            };
            assert_eq!(unsafe { tradar_predictions_get(p, i, &mut b) }, TradarStatus::Ok);
            assert_eq!((b.score, b.bbox.x, b.bbox.yaw), (w.score, w.bbox.x, w.bbox.yaw));
            assert_eq!(b.bbox.class_id as usize, w.bbox.class.index());
        }
        let mut b = TradarScoredBox {
            bbox: bx(0, 0.0, 0.0, 1.0, 1.0, 0.0),
            score: 0.0,
        };
        assert_eq!(unsafe { tradar_predictions_get(p, n, &mut b) }, TradarStatus::InvalidArgument);
        unsafe { tradar_predictions_free(p) };
    }

    // Rows must be whole points.
    let prompt = cstr("the car");
    let mut p: *mut TradarPredictions = ptr::null_mut();
    assert_eq!(
        unsafe { tradar_model_predict(m, ptr::null(), 3, prompt.as_ptr(), &mut p) },
        TradarStatus::NullPointer
    );
    let nan = [f32::NAN; 7];
    assert_eq!(
        unsafe { tradar_model_predict(m, nan.as_ptr(), 1, prompt.as_ptr(), &mut p) },
        TradarStatus::InvalidArgument
    );
    unsafe { tradar_model_free(m) };
}

#[test]
fn synth_and_evaluation_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let toml = cstr(TINY);
    let mut written = 0usize;
    let st = unsafe { tradar_synth_generate(toml.as_ptr(), path(&data).as_ptr(), 2, &mut written) };
    assert_eq!(st, TradarStatus::Ok, "{:?}", last_error());
    assert_eq!(written, 2);

    // Perfect predictions score 100 in every region.
    let reader = tradar::scene::DatasetReader::open(&data).unwrap();
    let preds: Vec<PredictionRecord> = reader
        .sample_ids()
        .iter()
        .map(|id| PredictionRecord {
            sample_id: id.clone(),
            boxes: reader
                .load(id)
                .unwrap()
                .referred_boxes()
                .into_iter()
                .map(|b| tradar::metrics::ScoredBox { bbox: b, score: 0.9 })
                .collect(),
        })
        .collect();
    let pred_file = dir.path().join("preds.jsonl");
    write_predictions(&pred_file, &preds).unwrap();
    let mut report: *mut c_char = ptr::null_mut();
    let st = unsafe { tradar_evaluate_file(path(&pred_file).as_ptr(), path(&data).as_ptr(), &mut report) };
    assert_eq!(st, TradarStatus::Ok, "{:?}", last_error());
    let v: serde_json::Value = serde_json::from_str(&take_string(report)).unwrap();
    for r in v["regions"].as_array().unwrap() {
        assert_eq!(r["map"], 100.0, "{r}");
    }

    let cfg = RunConfig::from_toml_str(TINY, Path::new("tiny.toml")).unwrap();
    let run = dir.path().join("run");
    train(
        &cfg,
        TrainOptions {
            out_dir: Some(&run),
            echo: false,
        },
    )
    .unwrap();
    let ck = path(&run.join("checkpoint.json"));
    let (mut r1, mut r2): (*mut c_char, *mut c_char) = (ptr::null_mut(), ptr::null_mut());
    unsafe {
        assert_eq!(tradar_evaluate_checkpoint(ck.as_ptr(), path(&data).as_ptr(), &mut r1), TradarStatus::Ok);
        assert_eq!(tradar_evaluate_checkpoint(ck.as_ptr(), path(&data).as_ptr(), &mut r2), TradarStatus::Ok);
    }
    assert_eq!(take_string(r1), take_string(r2));
}

fn exported_functions() -> Vec<String> {
    let src = include_str!("../src/lib.rs");
    src.lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap().to_string())
        .collect()
}

#[test]
fn header_declares_every_export() {
    let header = include_str!("../include/tradar.h");
    let fns = exported_functions();
    assert!(fns.len() >= 14, "{fns:?}");
    for f in fns {
        assert!(header.contains(&format!("{f}(")), "{f} missing from header");
    }
    for ty in ["TradarStatus", "TradarBox", "TradarScoredBox", "TradarModel", "TradarPredictions"] {
        assert!(header.contains(ty), "{ty}");
    }
}

#[test]
fn c_program_links_and_runs() {
    let Some(cc) = ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| std::process::Command::new(c).arg("--version").output().is_ok())
    else {
        eprintln!("no C compiler; skipping");
        return;
    };
    // target/<profile>/deps/<test> -> target/<profile>/libtradar_ffi.a
    let exe = std::env::current_exe().unwrap();
    let lib_dir = exe.parent().unwrap().parent().unwrap();
    if !lib_dir.join("libtradar_ffi.a").exists() {
        eprintln!("static library not found in {}; skipping", lib_dir.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include "tradar.h"
int main(void) {
    TradarBox a = {TRADAR_CLASS_CAR, 0, 0, 0.5, 2, 2, 1, 0};
    TradarBox b = a;
    b.x = 1;
    double v = -1;
    if (tradar_iou_bev(&a, &b, &v) != TRADAR_STATUS_OK) return 1;
    if (tradar_iou_bev(NULL, &b, &v) != TRADAR_STATUS_NULL_POINTER) return 2;
    char *e = tradar_last_error();
    if (!e) return 3;
    tradar_string_free(e);
    printf("%.12f\n", v);
    return 0;
}
"#,
    )
    .unwrap();
    let bin = dir.path().join("main");
    let include = concat!(env!("CARGO_MANIFEST_DIR"), "/include");
    let st = std::process::Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-I", include])
        .arg(&src)
        .arg(lib_dir.join("libtradar_ffi.a"))
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(st.success());
    let out = std::process::Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "{:?}", out.status);
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), "0.333333333333");
}
