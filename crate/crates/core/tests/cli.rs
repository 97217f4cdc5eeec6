use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use surgecast::clips::ClipDataset;
use surgecast::encode::{rgb_encode, Colormap, Ranges};
use surgecast::ingest::{save_mesh, save_series, Mesh, NodalSeries, DEFAULT_FILL};
use surgecast::nn::{save_checkpoint, Checkpoint, Model, NetworkConfig};
use surgecast::pipeline::read_gridded;

fn surgecast(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_surgecast"))
        .args(args)
        .env("SURGECAST_THREADS", "1")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) {
    let out = surgecast(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn p(dir: &Path, rel: &str) -> String {
    dir.join(rel).to_string_lossy().into_owned()
}

fn assert_error_line(out: &Output) {
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.lines().any(|l| l.starts_with("error: ")), "stderr: {err}");
}

fn zero_checkpoint(path: &Path) {
    let ckpt = Checkpoint {
        model: Model::zeros(NetworkConfig::with_dims(vec![2])).unwrap(),
        ranges: Ranges::default(),
        colormap: Colormap::default(),
    };
    save_checkpoint(&ckpt, path).unwrap();
}

/// Synthetic storms, rasterized and built into a clip dataset at `data/`.
fn dataset(root: &Path, storms: usize, frames: usize, peak: usize) {
    let (f, pk, n) = (frames.to_string(), peak.to_string(), storms.to_string());
    ok(&["synth", "--out", &p(root, "raw"), "--storms", &n, "--cells", "8", "--frames", &f, "--peak", &pk]);
    let mut grids = Vec::new();
    for i in 0..storms {
        let id = format!("storm_{i:03}");
        ok(&[
            "rasterize",
            "--mesh",
            &p(root, "raw/mesh.grd"),
            "--zeta",
            &p(root, &format!("raw/{id}/zeta.sfld")),
            "--windx",
            &p(root, &format!("raw/{id}/windx.sfld")),
            "--windy",
            &p(root, &format!("raw/{id}/windy.sfld")),
            "--roi",
            "0,1,0,1",
            "--size",
            "8x8",
            "--storm-id",
            &id,
            "--out",
            &p(root, &format!("grids/{id}")),
        ]);
        grids.push(p(root, &format!("grids/{id}")));
    }
    let data = p(root, "data");
    let mut args = vec!["build-clips", "--out", &data];
    args.extend(grids.iter().map(String::as_str));
    ok(&args);
}

#[test]
fn missing_mesh_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = surgecast(&[
        "rasterize",
        "--mesh",
        &p(dir.path(), "nope.grd"),
        "--zeta",
        "z",
        "--windx",
        "x",
        "--windy",
        "y",
        "--roi",
        "0,1,0,1",
        "--size",
        "4x4",
        "--storm-id",
        "s",
        "--out",
        &p(dir.path(), "out"),
    ]);
    assert_error_line(&out);
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.grd"));
}

#[test]
fn rasterize_two_step_series() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mesh = Mesh::new(
        "sq",
        vec![0.0, 1.0, 1.0, 0.0],
        vec![0.0, 0.0, 1.0, 1.0],
        vec![5.0; 4],
        vec![[0, 1, 2], [0, 2, 3]],
    )
    .unwrap();
    save_mesh(&mesh, d.join("m.grd")).unwrap();
    let series = |name: &str, v: f32| NodalSeries::new(name, vec![0.0, 3600.0], 4, vec![v; 8], DEFAULT_FILL).unwrap();
    save_series(&series("zeta", 0.5), d.join("z.sfld")).unwrap();
    save_series(&series("windx", 3.0), d.join("x.sfld")).unwrap();
    save_series(&series("windy", -1.0), d.join("y.sfld")).unwrap();
    ok(&[
        "rasterize",
        "--mesh",
        &p(d, "m.grd"),
        "--zeta",
        &p(d, "z.sfld"),
        "--windx",
        &p(d, "x.sfld"),
        "--windy",
        &p(d, "y.sfld"),
        "--roi",
        "0,1,0,1",
        "--size",
        "5x3",
        "--storm-id",
        "s1",
        "--out",
        &p(d, "grid"),
    ]);
    let g = read_gridded(&d.join("grid")).unwrap();
    assert_eq!(g.zeta.len(), 2);
    assert_eq!((g.roi.width, g.roi.height), (5, 3));
    assert!(g.zeta[1].values.iter().all(|&v| v == 0.5));
    assert!(d.join("grid/manifest.json").exists());
}

#[test]
fn build_clips_counts_and_short_storms() {
    let dir = tempfile::tempdir().unwrap();
    dataset(dir.path(), 2, 60, 30);
    let data = ClipDataset::open(dir.path().join("data")).unwrap();
    for storm in ["storm_000", "storm_001"] {
        assert_eq!(data.index.clips.iter().filter(|c| c.storm_id == storm).count(), 12);
    }

    // 29 usable frames: no clips, a warning, and evaluate has nothing to score
    let short = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_surgecast"))
        .args(["synth", "--out", &p(short.path(), "raw"), "--storms", "2", "--cells", "4"])
        .args(["--frames", "29", "--peak", "14"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let mut grids = Vec::new();
    for id in ["storm_000", "storm_001"] {
        ok(&[
            "rasterize",
            "--mesh",
            &p(short.path(), "raw/mesh.grd"),
            "--zeta",
            &p(short.path(), &format!("raw/{id}/zeta.sfld")),
            "--windx",
            &p(short.path(), &format!("raw/{id}/windx.sfld")),
            "--windy",
            &p(short.path(), &format!("raw/{id}/windy.sfld")),
            "--roi",
            "0,1,0,1",
            "--size",
            "4x4",
            "--storm-id",
            id,
            "--out",
            &p(short.path(), &format!("grids/{id}")),
        ]);
        grids.push(p(short.path(), &format!("grids/{id}")));
    }
    let data = p(short.path(), "data");
    let mut args = vec!["build-clips", "--out", &data];
    args.extend(grids.iter().map(String::as_str));
    let out = surgecast(&args);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no clips"));
    assert!(ClipDataset::open(&data).unwrap().index.clips.is_empty());

    let ckpt = p(short.path(), "m.ckpt");
    zero_checkpoint(Path::new(&ckpt));
    let out = surgecast(&["evaluate", "--checkpoint", &ckpt, "--data", &data, "--out", &p(short.path(), "eval")]);
    assert_error_line(&out);
}

#[test]
fn forecast_writes_24_pngs_and_export_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    dataset(d, 2, 60, 30);
    let ckpt = p(d, "m.ckpt");
    zero_checkpoint(Path::new(&ckpt));
    let data = ClipDataset::open(d.join("data")).unwrap();
    let clip = data.index.clips[0].clip_id.clone();
    ok(&["forecast", "--checkpoint", &ckpt, "--data", &p(d, "data"), "--clip", &clip, "--out", &p(d, "fc")]);
    let pngs: Vec<_> = fs::read_dir(d.join("fc"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".png"))
        .collect();
    assert_eq!(pngs.len(), 24);
    assert!(pngs.contains(&format!("{clip}_01.png")) && pngs.contains(&format!("{clip}_24.png")));

    // the zero model predicts 0.5 everywhere
    ok(&[
        "export-frames",
        "--forecast",
        &p(d, &format!("fc/{clip}.sfld")),
        "--out",
        &p(d, "export"),
    ]);
    let px = decode_png(&d.join(format!("export/{clip}_05.png")));
    assert!(px.chunks(3).all(|c| c == [128, 128, 128]));

    let out = surgecast(&["forecast", "--checkpoint", &ckpt, "--data", &p(d, "data"), "--clip", "nope", "--out", &p(d, "x")]);
    assert_error_line(&out);
}

#[test]
fn export_floor_colour() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let rgb = rgb_encode(0.0, &Colormap::default()).unwrap();
    let (h, w) = (3, 4);
    let frame: Vec<f32> = rgb.iter().flat_map(|&c| vec![c as f32; h * w]).collect();
    let series = NodalSeries::new("rgb", vec![1.0], 3 * h * w, frame, DEFAULT_FILL).unwrap();
    save_series(&series, d.join("c.sfld")).unwrap();
    fs::write(
        d.join("c.json"),
        r#"{"clip_id": "c", "height": 3, "width": 4, "channels": 3}"#,
    )
    .unwrap();
    ok(&["export-frames", "--forecast", &p(d, "c.sfld"), "--out", &p(d, "png")]);
    let px = decode_png(&d.join("png/c_01.png"));
    assert_eq!(px.len(), 3 * h * w);
    assert!(px.chunks(3).all(|c| c == [0, 0, 128]));
}

#[test]
fn train_writes_run_artefacts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    dataset(d, 4, 60, 30);
    fs::write(d.join("run.cfg"), "# tiny\nepochs = 1\nhidden_dims = 2\nlr = 0.01\n").unwrap();
    ok(&[
        "train",
        "--data",
        &p(d, "data"),
        "--out",
        &p(d, "run"),
        "--config",
        &p(d, "run.cfg"),
        "--lr",
        "0.002",
        "--seed",
        "3",
    ]);
    for f in ["best.ckpt", "last.ckpt", "epochs.csv", "run.cfg", "manifest.json"] {
        assert!(d.join("run").join(f).exists(), "{f} missing");
    }
    let cfg = fs::read_to_string(d.join("run/run.cfg")).unwrap();
    assert!(cfg.contains("lr = 0.002") && cfg.contains("seed = 3"), "{cfg}");
    ok(&[
        "evaluate",
        "--checkpoint",
        &p(d, "run/best.ckpt"),
        "--data",
        &p(d, "data"),
        "--out",
        &p(d, "eval"),
        "--split",
        "all",
    ]);
    let metrics = fs::read_to_string(d.join("eval/metrics.csv")).unwrap();
    assert!(metrics.starts_with("clip_id,region_id,step,mse,rmse,mae,r2\n"));
    assert_eq!(metrics.lines().count(), 1 + 48 * 24);

    let out = surgecast(&["train", "--data", &p(d, "data"), "--out", &p(d, "bad"), "--lr", "-1"]);
    assert_error_line(&out);
}

fn decode_png(path: &Path) -> Vec<u8> {
    let decoder = png::Decoder::new(std::io::BufReader::new(fs::File::open(path).unwrap()));
    let mut reader = decoder.read_info().unwrap();
    let mut buf = vec![0; reader.output_buffer_size().unwrap()];
    let info = reader.next_frame(&mut buf).unwrap();
    assert_eq!(info.color_type, png::ColorType::Rgb);
    buf.truncate(info.buffer_size());
    buf
}
