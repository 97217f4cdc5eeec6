use std::ffi::{CStr, CString};
use std::ptr;

use surgecast::clips::{CONTEXT_LEN, HORIZON};
use surgecast::encode::{Colormap, Ranges};
use surgecast::nn::{save_checkpoint, Checkpoint, Model, NetworkConfig};
use surgecast_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(surgecast_last_error()) }.to_string_lossy().into_owned()
}

fn square_mesh() -> *mut SurgecastMesh {
    let lon = [0.0, 1.0, 1.0, 0.0];
    let lat = [0.0, 0.0, 1.0, 1.0];
    let depth = [5.0, 6.0, 7.0, 8.0];
    let tris = [0u32, 1, 2, 0, 2, 3];
    let mut mesh = ptr::null_mut();
    let st = unsafe { surgecast_mesh_new(4, lon.as_ptr(), lat.as_ptr(), depth.as_ptr(), 2, tris.as_ptr(), &mut mesh) };
    assert_eq!(st, SurgecastStatus::Ok, "{}", last_error());
    mesh
}

#[test]
fn clamp_scale_and_errors() {
    let mut out = -1.0;
    unsafe {
        assert_eq!(surgecast_clamp_scale(1.25, 0.0, 2.5, &mut out), SurgecastStatus::Ok);
        assert_eq!(out, 0.5);
        assert_eq!(surgecast_clamp_scale(3.0, 0.0, 2.5, &mut out), SurgecastStatus::Ok);
        assert_eq!(out, 1.0);
        assert_eq!(surgecast_clamp_scale(1.0, 2.0, 1.0, &mut out), SurgecastStatus::InvalidArgument);
        assert!(!last_error().is_empty());
        assert_eq!(surgecast_clamp_scale(f64::NAN, 0.0, 1.0, &mut out), SurgecastStatus::NonFinite);
        assert_eq!(surgecast_clamp_scale(1.0, 0.0, 1.0, ptr::null_mut()), SurgecastStatus::NullPointer);
        assert_eq!(surgecast_clamp_scale(1.0, 0.0, 1.0, &mut out), SurgecastStatus::Ok);
    }
    assert!(last_error().is_empty());
}

#[test]
fn rgb_round_trip() {
    for i in 0..=20 {
        let u = i as f64 / 20.0;
        let mut rgb = [0.0; 3];
        let mut back = -1.0;
        unsafe {
            assert_eq!(surgecast_rgb_encode(u, rgb.as_mut_ptr()), SurgecastStatus::Ok);
            assert_eq!(surgecast_rgb_decode(rgb.as_ptr(), &mut back), SurgecastStatus::Ok);
        }
        assert!((back - u).abs() < 1e-9);
    }
    let mut rgb = [0.0; 3];
    assert_eq!(unsafe { surgecast_rgb_encode(1.5, rgb.as_mut_ptr()) }, SurgecastStatus::InvalidArgument);
}

#[test]
fn rasterize_linear_field() {
    let mesh = square_mesh();
    assert_eq!(unsafe { surgecast_mesh_node_count(mesh) }, 4);
    let mut index = ptr::null_mut();
    let st = unsafe { surgecast_raster_index_build(mesh, 0.0, 1.0, 0.0, 1.0, 4, 4, &mut index) };
    assert_eq!(st, SurgecastStatus::Ok);
    let lon = [0.0, 1.0, 1.0, 0.0];
    let mut values = [0.0; 16];
    let mut mask = [0u8; 16];
    let st = unsafe {
        surgecast_rasterize(index, lon.as_ptr(), 4, -99999.0, 0.0, values.as_mut_ptr(), mask.as_mut_ptr(), 16)
    };
    assert_eq!(st, SurgecastStatus::Ok);
    assert!(mask.iter().all(|&m| m == 1));
    for (p, v) in values.iter().enumerate() {
        let col = p % 4;
        assert!((v - (col as f64 + 0.5) / 4.0).abs() < 1e-12);
    }
    let st = unsafe {
        surgecast_rasterize(index, lon.as_ptr(), 4, -99999.0, 0.0, values.as_mut_ptr(), mask.as_mut_ptr(), 9)
    };
    assert_eq!(st, SurgecastStatus::Shape);
    unsafe {
        surgecast_raster_index_free(index);
        surgecast_mesh_free(mesh);
        surgecast_mesh_free(ptr::null_mut());
    }
}

#[test]
fn mesh_load_missing_file() {
    let path = CString::new("/nonexistent/mesh.grd").unwrap();
    let mut mesh = ptr::null_mut();
    assert_eq!(unsafe { surgecast_mesh_load(path.as_ptr(), &mut mesh) }, SurgecastStatus::Io);
    assert!(mesh.is_null());
    assert!(last_error().contains("mesh.grd"));
}

#[test]
fn forecast_matches_core() {
    let (h, w) = (4, 5);
    let model = Model::<f32>::zeros(NetworkConfig::with_dims(vec![2])).unwrap();
    let ckpt = Checkpoint {
        model,
        ranges: Ranges::default(),
        colormap: Colormap::default(),
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&ckpt, &path).unwrap();
    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    let mut handle = ptr::null_mut();
    assert_eq!(unsafe { surgecast_model_load(cpath.as_ptr(), &mut handle) }, SurgecastStatus::Ok);

    let px = h * w;
    let context = vec![0.25f32; CONTEXT_LEN * 6 * px];
    let wind = vec![0.5f32; HORIZON * 2 * px];
    let bathy = vec![0.1f32; px];
    let mut out = vec![-1.0f32; HORIZON * 3 * px];
    let st = unsafe {
        surgecast_forecast(handle, context.as_ptr(), wind.as_ptr(), bathy.as_ptr(), h, w, out.as_mut_ptr())
    };
    assert_eq!(st, SurgecastStatus::Ok, "{}", last_error());
    // zero parameters: every output is the logistic of 0
    assert!(out.iter().all(|&v| v == 0.5));
    assert_eq!((surgecast_context_len(), surgecast_horizon()), (CONTEXT_LEN, HORIZON));

    let bad = vec![2.0f32; CONTEXT_LEN * 6 * px];
    let st = unsafe { surgecast_forecast(handle, bad.as_ptr(), wind.as_ptr(), bathy.as_ptr(), h, w, out.as_mut_ptr()) };
    assert_ne!(st, SurgecastStatus::Ok);
    unsafe { surgecast_model_free(handle) };
}

#[test]
fn frame_metrics() {
    let truth = [0.0f32, 0.5, 1.0, 0.5];
    let pred = [0.0f32, 0.5, 0.5, 0.5];
    let mut s = SurgecastScores::default();
    assert_eq!(unsafe { surgecast_frame_metrics(pred.as_ptr(), truth.as_ptr(), 4, &mut s) }, SurgecastStatus::Ok);
    assert!((s.mse - 0.0625).abs() < 1e-12);
    assert!((s.mae - 0.125).abs() < 1e-12);
    assert!((s.rmse - 0.25).abs() < 1e-12);
    assert_eq!(s.r2_defined, 1);
    assert!((s.r2 - 0.5).abs() < 1e-12);
    let flat = [0.3f32; 4];
    assert_eq!(unsafe { surgecast_frame_metrics(pred.as_ptr(), flat.as_ptr(), 4, &mut s) }, SurgecastStatus::Ok);
    assert_eq!(s.r2_defined, 0);
}

#[test]
fn header_is_generated() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/surgecast.h")).unwrap();
    for sym in ["surgecast_forecast", "surgecast_rasterize", "SURGECAST_STATUS_NULL_POINTER", "typedef struct SurgecastMesh"] {
        assert!(header.contains(sym), "{sym} missing from header");
    }
}

#[test]
fn header_compiles_as_c_and_cpp() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/surgecast.h");
    for (cc, lang) in [("cc", "c"), ("c++", "c++")] {
        let status = std::process::Command::new(cc)
            .args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang, header])
            .status();
        match status {
            Ok(s) => assert!(s.success(), "{cc} rejected the header"),
            Err(_) => eprintln!("{cc} not available, skipping"),
        }
    }
}
