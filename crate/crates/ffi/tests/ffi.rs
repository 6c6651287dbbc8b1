use std::ffi::{CStr, CString};
use std::ptr;

use semcom::channel::{ChannelConfig, ChannelKind};
use semcom::codec::Ratio;
use semcom::harness::eval::detect_batch;
use semcom::harness::{RunConfig, Workspace};
use semcom::numeric::Tensor;
use semcom_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 512];
    unsafe {
        semcom_last_error(buf.as_mut_ptr(), buf.len());
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

fn default_config() -> *mut SemcomConfig {
    let mut c = ptr::null_mut();
    assert_eq!(unsafe { semcom_config_default(&mut c) }, SemcomStatus::Ok);
    c
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(semcom_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn rate_accounting_through_the_abi() {
    let c = default_config();
    let mut r = SemcomRate::default();
    assert_eq!(unsafe { semcom_rate(c, 1, 6, &mut r) }, SemcomStatus::Ok);
    assert_eq!((r.channels, r.k, r.n), (48, 8184, 49152));
    assert_eq!(unsafe { semcom_rate(c, 0, 6, &mut r) }, SemcomStatus::InvalidInput);
    assert!(last_error().contains("0/6"), "{}", last_error());
    unsafe { semcom_config_free(c) };
}

#[test]
fn null_arguments_are_reported() {
    let mut r = SemcomRate::default();
    assert_eq!(unsafe { semcom_rate(ptr::null(), 1, 6, &mut r) }, SemcomStatus::NullPointer);
    assert!(last_error().contains("config"));
    assert_eq!(unsafe { semcom_config_default(ptr::null_mut()) }, SemcomStatus::NullPointer);
    unsafe {
        semcom_config_free(ptr::null_mut());
        semcom_channel_free(ptr::null_mut());
        semcom_pipeline_free(ptr::null_mut());
        assert_eq!(semcom_pipeline_image_size(ptr::null()), 0);
    }
}

#[test]
fn bad_toml_is_a_config_error() {
    let text = CString::new("[train]\nlr = \"fast\"\n").unwrap();
    let mut c = ptr::null_mut();
    let s = unsafe { semcom_config_from_toml(text.as_ptr(), &mut c) };
    assert_eq!(s, SemcomStatus::Config, "{}", last_error());
    assert!(c.is_null());
}

#[test]
fn config_round_trips_through_toml() {
    let text = CString::new("[data]\ntrain_scenes = 17\n").unwrap();
    let mut c = ptr::null_mut();
    assert_eq!(unsafe { semcom_config_from_toml(text.as_ptr(), &mut c) }, SemcomStatus::Ok);
    let mut needed = 0usize;
    let mut small = [0 as std::ffi::c_char; 8];
    let s = unsafe { semcom_config_to_toml(c, small.as_mut_ptr(), small.len(), &mut needed) };
    assert_eq!(s, SemcomStatus::BufferTooSmall);
    assert!(needed > small.len());
    let mut buf = vec![0 as std::ffi::c_char; needed];
    assert_eq!(unsafe { semcom_config_to_toml(c, buf.as_mut_ptr(), buf.len(), &mut needed) }, SemcomStatus::Ok);
    let toml = unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap().to_string();
    assert_eq!(RunConfig::from_toml(&toml).unwrap().data.train_scenes, 17);
    unsafe { semcom_config_free(c) };
}

#[test]
fn complexity_grows_with_the_graph_head() {
    let c = default_config();
    let (mut a, mut b) = (SemcomComplexity::default(), SemcomComplexity::default());
    unsafe {
        assert_eq!(semcom_complexity(c, SemcomMode::Msed, &mut a), SemcomStatus::Ok);
        assert_eq!(semcom_complexity(c, SemcomMode::MsedKg, &mut b), SemcomStatus::Ok);
        semcom_config_free(c);
    }
    assert!(b.parameters > a.parameters && b.multiplications > a.multiplications);
}

#[test]
fn quiet_channel_returns_normalized_input() {
    let mut ch = ptr::null_mut();
    assert_eq!(unsafe { semcom_channel_new(SemcomChannelKind::Awgn, 2.0, 200.0, &mut ch) }, SemcomStatus::Ok);
    let x = [1.0, -2.0, 0.5, 3.0, 1.5];
    let mut y = [0.0; 5];
    assert_eq!(unsafe { semcom_channel_transmit(ch, x.as_ptr(), x.len(), 9, y.as_mut_ptr()) }, SemcomStatus::Ok);
    // Five reals pack into three symbols, the last padded with zero.
    let energy: f64 = x.iter().map(|v| v * v).sum();
    let scale = (3.0 * 2.0 / energy).sqrt();
    for (a, b) in x.iter().zip(&y) {
        assert!((a * scale - b).abs() < 1e-8, "{a} {b}");
    }
    let zeros = [0.0; 4];
    assert_eq!(unsafe { semcom_channel_transmit(ch, zeros.as_ptr(), 4, 1, y.as_mut_ptr()) }, SemcomStatus::Numeric);
    assert_eq!(unsafe { semcom_channel_transmit(ch, x.as_ptr(), 0, 1, y.as_mut_ptr()) }, SemcomStatus::InvalidInput);
    unsafe { semcom_channel_free(ch) };
    let mut bad = ptr::null_mut();
    assert_eq!(unsafe { semcom_channel_new(SemcomChannelKind::Rayleigh, -1.0, 10.0, &mut bad) }, SemcomStatus::Numeric);
}

#[test]
fn missing_pipeline_is_a_data_error() {
    let c = default_config();
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().to_str().unwrap()).unwrap();
    let mut p = ptr::null_mut();
    let s = unsafe { semcom_pipeline_load(c, path.as_ptr(), 1, 6, 1, SemcomMode::MsedKg, &mut p) };
    assert_eq!(s, SemcomStatus::Data, "{}", last_error());
    assert!(p.is_null());
    unsafe { semcom_config_free(c) };
}

#[test]
fn detections_match_the_library() {
    let toml = "[data]\ntrain_scenes = 16\neval_scenes = 4\n[train]\ndetector_steps = 3\ncodec_steps = 2\nfusion_steps = 2\nrate = \"1/12\"\n";
    let dir = tempfile::tempdir().unwrap();
    let ws = Workspace::new(RunConfig::from_toml(toml).unwrap(), dir.path()).unwrap();
    let rate = Ratio::new(1, 12).unwrap();
    let tm = ws.trained(rate, 3).unwrap();
    let emb = ws.embeddings().unwrap();
    let scene = &ws.eval_data().unwrap().scenes[0];

    let text = CString::new(toml).unwrap();
    let path = CString::new(dir.path().to_str().unwrap()).unwrap();
    let (mut c, mut p, mut ch) = (ptr::null_mut(), ptr::null_mut(), ptr::null_mut());
    unsafe {
        assert_eq!(semcom_config_from_toml(text.as_ptr(), &mut c), SemcomStatus::Ok);
        let s = semcom_pipeline_load(c, path.as_ptr(), 1, 12, 3, SemcomMode::MsedKg, &mut p);
        assert_eq!(s, SemcomStatus::Ok, "{}", last_error());
        assert_eq!(semcom_pipeline_image_size(p), 128);
        assert_eq!(semcom_pipeline_classes(p), 6);
        assert_eq!(semcom_channel_new(SemcomChannelKind::Awgn, 1.0, 10.0, &mut ch), SemcomStatus::Ok);
    }
    let mut count = 0usize;
    let s = unsafe { semcom_pipeline_detect(p, scene.pixels.as_ptr(), ch, 5, ptr::null_mut(), 0, &mut count) };
    assert!(s == SemcomStatus::Ok || s == SemcomStatus::BufferTooSmall);
    let mut out = vec![SemcomDetection::default(); count];
    let s = unsafe { semcom_pipeline_detect(p, scene.pixels.as_ptr(), ch, 5, out.as_mut_ptr(), out.len(), &mut count) };
    assert_eq!(s, SemcomStatus::Ok, "{}", last_error());

    let image = Tensor::new(&[1, 3, 128, 128], scene.pixels.iter().map(|&v| v as f64 / 255.0).collect()).unwrap();
    let channel = ChannelConfig::from_snr_db(ChannelKind::Awgn, 1.0, 10.0, 0).unwrap();
    let (_, refined) = detect_batch(&tm.model, &tm.store, &image, &[0], &channel, &[5], Some(&emb)).unwrap();
    let want = refined.unwrap();
    assert_eq!(want.len(), count);
    for (a, b) in want.iter().zip(&out) {
        assert_eq!((a.class, a.score, a.bbox.x1, a.bbox.y2), (b.class_index, b.score, b.x1, b.y2));
    }
    unsafe {
        semcom_channel_free(ch);
        semcom_pipeline_free(p);
        semcom_config_free(c);
    }
}

#[test]
fn header_declares_every_entry_point() {
    let header = include_str!("../include/semcom.h");
    for f in [
        "semcom_version",
        "semcom_last_error",
        "semcom_config_default",
        "semcom_config_from_toml",
        "semcom_config_load",
        "semcom_config_to_toml",
        "semcom_config_free",
        "semcom_rate",
        "semcom_complexity",
        "semcom_channel_new",
        "semcom_channel_free",
        "semcom_channel_transmit",
        "semcom_pipeline_load",
        "semcom_pipeline_free",
        "semcom_pipeline_image_size",
        "semcom_pipeline_classes",
        "semcom_pipeline_detect",
    ] {
        assert!(header.contains(&format!("{f}(")), "{f} missing from header");
    }
    assert!(header.contains("size_t channels;"));
}

#[test]
fn c_example_compiles_against_header() {
    let dir = env!("CARGO_MANIFEST_DIR");
    let Ok(status) = std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(format!("{dir}/include"))
        .arg(format!("{dir}/examples/c/rate.c"))
        .status()
    else {
        eprintln!("no C compiler found, skipping");
        return;
    };
    assert!(status.success());
}
