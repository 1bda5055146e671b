use std::ffi::{CStr, CString};
use std::ptr;

use racdnn::cli::{Checkpoint, RunConfig};
use racdnn::nn::ParamStore;
use racdnn::racdnn::{fit_image, initial_saliency, run_refinement, InitialNet, Preset, Refiner};
use racdnn::tensor::Tensor;
use racdnn_ffi::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny_checkpoint(dir: &std::path::Path, refined: bool) -> (CString, ParamStore) {
    let preset = Preset::tiny();
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    InitialNet::new(preset.clone())
        .unwrap()
        .init(&mut store, &mut rng)
        .unwrap();
    if refined {
        Refiner::new(preset).unwrap().init(&mut store, &mut rng).unwrap();
    }
    let config = RunConfig {
        preset: "tiny".into(),
        iterations: 3,
        ..RunConfig::default()
    };
    let path = dir.join("m.ckpt");
    Checkpoint {
        store: store.clone(),
        optimizer: None,
        config,
    }
    .save(&path)
    .unwrap();
    (CString::new(path.to_str().unwrap()).unwrap(), store)
}

fn last_error() -> String {
    let p = racdnn_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn rgb(w: usize, h: usize) -> Vec<u8> {
    (0..3 * w * h).map(|i| ((i * 37) % 251) as u8).collect()
}

#[test]
fn infer_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let (path, store) = tiny_checkpoint(dir.path(), true);
    let mut model = ptr::null_mut();
    assert_eq!(
        unsafe { racdnn_model_load(path.as_ptr(), &mut model) },
        RacdnnStatus::Ok
    );
    assert_eq!(unsafe { racdnn_model_is_refined(model) }, 1);
    let (w, h) = (20, 12);
    let pixels = rgb(w, h);
    let mut out = vec![-1.0; w * h];
    let status = unsafe { racdnn_model_infer(model, pixels.as_ptr(), w, h, 0, out.as_mut_ptr()) };
    assert_eq!(status, RacdnnStatus::Ok);
    unsafe { racdnn_model_free(model) };

    let n = w * h;
    let mut planar = vec![0.0; 3 * n];
    for (i, &b) in pixels.iter().enumerate() {
        planar[(i % 3) * n + i / 3] = f64::from(b) / 255.0;
    }
    let preset = Preset::tiny();
    let image = fit_image(&preset, &Tensor::from_vec(&[3, h, w], planar).unwrap()).unwrap();
    let (r0, _) = initial_saliency(&store, &preset, &image).unwrap();
    let (map, _) = run_refinement(&store, &preset, &image, &r0, 3).unwrap();
    let expected = racdnn::data::resize_bilinear(&map, h, w).unwrap();
    assert_eq!(out, expected.data());
    assert!(out.iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn initial_only_model() {
    let dir = tempfile::tempdir().unwrap();
    let (path, _) = tiny_checkpoint(dir.path(), false);
    let mut model = ptr::null_mut();
    assert_eq!(
        unsafe { racdnn_model_load(path.as_ptr(), &mut model) },
        RacdnnStatus::Ok
    );
    assert_eq!(unsafe { racdnn_model_is_refined(model) }, 0);
    let pixels = rgb(16, 16);
    let mut out = vec![0.0; 256];
    let status = unsafe { racdnn_model_infer(model, pixels.as_ptr(), 16, 16, 5, out.as_mut_ptr()) };
    assert_eq!(status, RacdnnStatus::Ok);
    unsafe { racdnn_model_free(model) };
}

#[test]
fn load_errors() {
    let mut model = ptr::null_mut();
    assert_eq!(
        unsafe { racdnn_model_load(ptr::null(), &mut model) },
        RacdnnStatus::NullPointer
    );
    assert!(last_error().contains("path"));

    let missing = CString::new("/nonexistent/m.ckpt").unwrap();
    assert_eq!(
        unsafe { racdnn_model_load(missing.as_ptr(), &mut model) },
        RacdnnStatus::Io
    );
    assert!(model.is_null());

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.ckpt");
    std::fs::write(&bad, b"RACD\x02\0\0\0").unwrap();
    let bad = CString::new(bad.to_str().unwrap()).unwrap();
    assert_eq!(
        unsafe { racdnn_model_load(bad.as_ptr(), &mut model) },
        RacdnnStatus::Format
    );
    assert!(last_error().contains("version"));
    unsafe { racdnn_model_free(ptr::null_mut()) };
}

#[test]
fn infer_argument_errors() {
    let dir = tempfile::tempdir().unwrap();
    let (path, _) = tiny_checkpoint(dir.path(), false);
    let mut model = ptr::null_mut();
    unsafe { racdnn_model_load(path.as_ptr(), &mut model) };
    let mut out = vec![0.0; 4];
    let px = [0u8; 12];
    let s = unsafe { racdnn_model_infer(ptr::null(), px.as_ptr(), 2, 2, 0, out.as_mut_ptr()) };
    assert_eq!(s, RacdnnStatus::NullPointer);
    let s = unsafe { racdnn_model_infer(model, px.as_ptr(), 0, 2, 0, out.as_mut_ptr()) };
    assert_eq!(s, RacdnnStatus::InvalidArgument);
    unsafe { racdnn_model_free(model) };
}

#[test]
fn metrics_of_perfect_and_inverted_maps() {
    let mask: Vec<u8> = (0..64).map(|i| u8::from(i % 3 == 0) * 255).collect();
    let pred: Vec<f64> = mask.iter().map(|&m| f64::from(m) / 255.0).collect();
    let (mut f, mut e) = (0.0, 0.0);
    let s = unsafe { racdnn_metrics(pred.as_ptr(), mask.as_ptr(), 64, &mut f, &mut e) };
    assert_eq!(s, RacdnnStatus::Ok);
    assert!((f - 1.0).abs() < 1e-12 && e == 0.0);
    let inv: Vec<f64> = pred.iter().map(|p| 1.0 - p).collect();
    unsafe { racdnn_metrics(inv.as_ptr(), mask.as_ptr(), 64, &mut f, &mut e) };
    assert_eq!(e, 1.0);
    let s = unsafe { racdnn_metrics(pred.as_ptr(), mask.as_ptr(), 0, &mut f, &mut e) };
    assert_eq!(s, RacdnnStatus::InvalidArgument);
}

#[test]
fn header_compiles_as_c() {
    let Ok(cc) = which_cc() else { return };
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"racdnn.h\"\nint main(void) { RacdnnModel *m = 0; \
         RacdnnStatus s = racdnn_model_load(\"x\", &m); racdnn_model_free(m); \
         return s == RACDNN_STATUS_OK ? 0 : (int)s; }\n",
    )
    .unwrap();
    let include = concat!(env!("CARGO_MANIFEST_DIR"), "/include");
    let status = std::process::Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I", include])
        .arg(&src)
        .status()
        .unwrap();
    assert!(status.success());
}

fn which_cc() -> Result<&'static str, ()> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| std::process::Command::new(c).arg("--version").output().is_ok())
        .ok_or(())
}
