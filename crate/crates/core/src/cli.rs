//! Command-line front end.
//!
//! Every subcommand writes a `manifest.json` into its output directory
//! before doing any work. Failures surface as a single `error: ...` line.

use std::collections::BTreeSet;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::clips::{
    carve_validation, clips_for_storm, split_storms, write_dataset, Clip, ClipDataset, ClipSource, CLIP_LEN,
    DEFAULT_TEST_FRACTION,
};
use crate::config::RunConfig;
use crate::encode::{quantize, Colormap, Planes, Ranges};
use crate::error::{Error, Result};
use crate::forecast::forecast_clip;
use crate::ingest::{load_mesh, load_series, read_series_file, save_mesh, save_series, NodalSeries, DEFAULT_FILL};
use crate::metrics::{evaluate_run, write_evaluation};
use crate::nn::load_checkpoint;
use crate::pipeline::{encode_storm, rasterize_storm, read_gridded, write_gridded};
use crate::raster::Roi;
use crate::synth::{synth_mesh, synth_roi, synth_storms, SynthConfig};
use crate::train::{train_loop, write_text, RunOutput};

pub const THREADS_ENV: &str = "SURGECAST_THREADS";

#[derive(Debug, Parser)]
#[command(name = "surgecast", version, about = "Storm-surge rasterization, training and forecasting")]
pub struct Cli {
    /// Single-threaded, fully seeded execution.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Run seed; overrides any seed in a config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Log more (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Project a mesh and its nodal series onto a regular grid.
    Rasterize(RasterizeArgs),
    /// Encode gridded storms into clips and split them by storm.
    BuildClips(BuildClipsArgs),
    /// Train a forecaster on a clip dataset.
    Train(TrainArgs),
    /// Forecast one clip and write the frames.
    Forecast(ForecastArgs),
    /// Score a checkpoint on held-out clips.
    Evaluate(EvaluateArgs),
    /// Write clip target frames as PNG images.
    ExportFrames(ExportArgs),
    /// Generate synthetic storms on a synthetic mesh.
    Synth(SynthArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct RasterizeArgs {
    #[arg(long)]
    pub mesh: PathBuf,
    #[arg(long)]
    pub zeta: PathBuf,
    #[arg(long)]
    pub windx: PathBuf,
    #[arg(long)]
    pub windy: PathBuf,
    /// `lon_min,lon_max,lat_min,lat_max`.
    #[arg(long, value_parser = parse_bounds)]
    pub roi: [f64; 4],
    /// Grid size as `WIDTHxHEIGHT`.
    #[arg(long, value_parser = parse_size)]
    pub size: (usize, usize),
    #[arg(long)]
    pub storm_id: String,
    #[arg(long, default_value = "region")]
    pub region_id: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct BuildClipsArgs {
    /// Directories written by `rasterize`, one per storm.
    #[arg(required = true)]
    pub grids: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Colormap table (`t r g b` per line); the built-in map by default.
    #[arg(long)]
    pub colormap: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_TEST_FRACTION)]
    pub test_fraction: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Run directory for checkpoints and logs.
    #[arg(long)]
    pub out: PathBuf,
    /// `key = value` run configuration; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub teacher_forcing_p: Option<f64>,
    /// Comma-separated hidden widths, e.g. `128,128,64`.
    #[arg(long)]
    pub hidden_dims: Option<String>,
    #[arg(long)]
    pub dropout_p: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct ForecastArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Clip id as listed in the dataset index.
    #[arg(long)]
    pub clip: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitChoice {
    Train,
    Test,
    All,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitChoice::Test)]
    pub split: SplitChoice,
}

#[derive(Debug, Args, Serialize)]
pub struct ExportArgs {
    /// Forecast file written by `forecast`.
    #[arg(long, conflicts_with_all = ["data", "clip"])]
    pub forecast: Option<PathBuf>,
    #[arg(long, requires = "clip")]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub clip: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 30)]
    pub storms: usize,
    #[arg(long, default_value_t = 32)]
    pub cells: usize,
    #[arg(long, default_value_t = 60)]
    pub frames: usize,
    #[arg(long, default_value_t = 30)]
    pub peak: usize,
}

fn parse_bounds(s: &str) -> std::result::Result<[f64; 4], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| e.to_string()))
        .collect::<std::result::Result<_, _>>()?;
    v.try_into().map_err(|_| "expected four comma-separated numbers".to_string())
}

fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let (w, h) = s.split_once('x').ok_or("expected WIDTHxHEIGHT")?;
    Ok((
        w.parse().map_err(|e| format!("{e}"))?,
        h.parse().map_err(|e| format!("{e}"))?,
    ))
}

#[derive(Serialize)]
struct RunManifest<'a> {
    subcommand: &'a Command,
    config: Option<&'a RunConfig>,
    seed: u64,
    deterministic: bool,
    tool_version: &'static str,
}

fn write_manifest(cli: &Cli, dir: &Path, config: Option<&RunConfig>) -> Result<()> {
    let m = RunManifest {
        subcommand: &cli.command,
        config,
        seed: cli.seed.unwrap_or(0),
        deterministic: cli.deterministic,
        tool_version: env!("CARGO_PKG_VERSION"),
    };
    write_text(&dir.join("manifest.json"), &(serde_json::to_string_pretty(&m)? + "\n"))
}

/// Worker count from `SURGECAST_THREADS` (0 or unset = all cores); one
/// thread in deterministic mode.
pub fn thread_count(deterministic: bool) -> Result<usize> {
    if deterministic {
        return Ok(1);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::invalid(format!("{THREADS_ENV}={v:?} is not a thread count"))),
        Err(_) => Ok(0),
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let threads = thread_count(cli.deterministic)?;
    // a second initialisation (e.g. in tests) keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    let seed = cli.seed.unwrap_or(0);
    match &cli.command {
        Command::Rasterize(a) => cmd_rasterize(cli, a),
        Command::BuildClips(a) => cmd_build_clips(cli, a, seed),
        Command::Train(a) => cmd_train(cli, a),
        Command::Forecast(a) => cmd_forecast(cli, a),
        Command::Evaluate(a) => cmd_evaluate(cli, a),
        Command::ExportFrames(a) => cmd_export_frames(cli, a),
        Command::Synth(a) => cmd_synth(cli, a, seed),
    }
}

fn cmd_rasterize(cli: &Cli, a: &RasterizeArgs) -> Result<()> {
    let mesh = load_mesh(&a.mesh)?;
    let zeta = load_series(&a.zeta, &mesh)?;
    let windx = load_series(&a.windx, &mesh)?;
    let windy = load_series(&a.windy, &mesh)?;
    let [x0, x1, y0, y1] = a.roi;
    let roi = Roi::new(x0, x1, y0, y1, a.size.0, a.size.1)?;
    write_manifest(cli, &a.out, None)?;
    let grids = rasterize_storm(&a.storm_id, &a.region_id, &mesh, &zeta, &windx, &windy, &roi)?;
    write_gridded(&grids, &a.out)?;
    log::info!("rasterized {} frames to {}", grids.zeta.len(), a.out.display());
    Ok(())
}

fn cmd_build_clips(cli: &Cli, a: &BuildClipsArgs, seed: u64) -> Result<()> {
    let cmap = match &a.colormap {
        Some(p) => Colormap::load(p)?,
        None => Colormap::default(),
    };
    let ranges = Ranges::default();
    write_manifest(cli, &a.out, None)?;
    let mut clips: Vec<Clip> = Vec::new();
    let mut storms = Vec::new();
    for dir in &a.grids {
        let grids = read_gridded(dir)?;
        let frames = encode_storm(&grids, &ranges, &cmap)?;
        let made = clips_for_storm(&frames)?;
        if made.is_empty() {
            log::warn!(
                "storm {}: event window shorter than {CLIP_LEN} frames, no clips",
                grids.storm_id
            );
        }
        storms.push(grids.storm_id.clone());
        clips.extend(made);
    }
    let split = split_storms(&storms, seed, a.test_fraction)?;
    clips.sort_by_key(|c| (c.storm_id.clone(), c.start_frame));
    let index = write_dataset(&a.out, &clips, split, ranges, cmap)?;
    log::info!("{} clips from {} storms", index.clips.len(), storms.len());
    Ok(())
}

fn resolve_train_config(cli: &Cli, a: &TrainArgs) -> Result<RunConfig> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let mut set = |k: &str, v: Option<String>| v.map(|v| cfg.set(k, &v)).unwrap_or(Ok(()));
    set("epochs", a.epochs.map(|v| v.to_string()))?;
    set("lr", a.lr.map(|v| v.to_string()))?;
    set("batch_size", a.batch_size.map(|v| v.to_string()))?;
    set("teacher_forcing_p", a.teacher_forcing_p.map(|v| v.to_string()))?;
    set("hidden_dims", a.hidden_dims.clone())?;
    set("dropout_p", a.dropout_p.map(|v| v.to_string()))?;
    set("seed", cli.seed.map(|v| v.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_train(cli: &Cli, a: &TrainArgs) -> Result<()> {
    let cfg = resolve_train_config(cli, a)?;
    let data = ClipDataset::open(&a.data)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    write_manifest(cli, &a.out, Some(&cfg))?;
    write_text(&a.out.join("run.cfg"), &cfg.to_text())?;

    let (train_storms, val_storms) = carve_validation(&data.index.split.train_storms, cfg.train.seed)?;
    let train = data.indices_for(&train_storms);
    let val = data.indices_for(&val_storms);
    log::info!("{} training clips, {} validation clips", train.len(), val.len());
    let outcome = train_loop(
        &data,
        &train,
        &val,
        cfg.network.clone(),
        data.index.ranges,
        data.index.colormap.clone(),
        &cfg.train,
        Some(RunOutput { dir: &a.out }),
    )?;
    if let Some(last) = outcome.log.last() {
        log::info!("final validation loss {:.6}", last.val_loss);
    }
    Ok(())
}

fn find_clip(data: &ClipDataset, id: &str) -> Result<usize> {
    data.index
        .clips
        .iter()
        .position(|c| c.clip_id == id)
        .ok_or_else(|| Error::invalid(format!("no clip {id:?} in {}", data.dir.display())))
}

/// Writes RGB frames as 8-bit PNGs named `{clip}_{step:02}.png`, steps
/// counted from 1.
pub fn write_pngs(clip_id: &str, frames: &[Planes], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (t, f) in frames.iter().enumerate() {
        let path = dir.join(format!("{clip_id}_{:02}.png", t + 1));
        write_png(f, &path)?;
    }
    Ok(())
}

pub fn write_png(rgb: &Planes, path: &Path) -> Result<()> {
    if rgb.channels != 3 {
        return Err(Error::Shape(format!("PNG export needs 3 channels, got {}", rgb.channels)));
    }
    let n = rgb.plane_len();
    let mut pixels = Vec::with_capacity(3 * n);
    for p in 0..n {
        for c in 0..3 {
            pixels.push(quantize(rgb.data[c * n + p] as f64));
        }
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), rgb.width as u32, rgb.height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let png_err = |e: png::EncodingError| Error::Format {
        what: "PNG",
        detail: e.to_string(),
    };
    let mut w = enc.write_header().map_err(png_err)?;
    w.write_image_data(&pixels).map_err(png_err)?;
    w.finish().map_err(png_err)
}

#[derive(Debug, Serialize, serde::Deserialize)]
struct ForecastSidecar {
    clip_id: String,
    height: usize,
    width: usize,
    channels: usize,
}

fn cmd_forecast(cli: &Cli, a: &ForecastArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let data = ClipDataset::open(&a.data)?;
    let i = find_clip(&data, &a.clip)?;
    write_manifest(cli, &a.out, None)?;
    let clip = data.load(i)?;
    let preds = forecast_clip(&ckpt.model, &clip)?;
    let (h, w) = (clip.height(), clip.width());
    let values: Vec<f32> = preds.iter().flat_map(|p| p.data.iter().copied()).collect();
    let times = (1..=preds.len()).map(|t| t as f64).collect();
    let series = NodalSeries::new("rgb", times, 3 * h * w, values, DEFAULT_FILL)?;
    save_series(&series, a.out.join(format!("{}.sfld", a.clip)))?;
    let sidecar = ForecastSidecar {
        clip_id: a.clip.clone(),
        height: h,
        width: w,
        channels: 3,
    };
    write_text(
        &a.out.join(format!("{}.json", a.clip)),
        &(serde_json::to_string_pretty(&sidecar)? + "\n"),
    )?;
    write_pngs(&a.clip, &preds, &a.out)
}

fn cmd_evaluate(cli: &Cli, a: &EvaluateArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let data = ClipDataset::open(&a.data)?;
    if ckpt.ranges != data.index.ranges || ckpt.colormap != data.index.colormap {
        return Err(Error::invalid(
            "checkpoint was trained with a different encoding than this dataset",
        ));
    }
    let split = &data.index.split;
    let indices = match a.split {
        SplitChoice::Test => data.indices_for(&split.test_storms),
        SplitChoice::Train => data.indices_for(&split.train_storms),
        SplitChoice::All => (0..data.len()).collect(),
    };
    if indices.is_empty() {
        return Err(Error::invalid("no clips to evaluate"));
    }
    write_manifest(cli, &a.out, None)?;
    let eval = evaluate_run(&ckpt.model, ckpt.ranges.zeta, &ckpt.colormap, &data, &indices)?;
    write_evaluation(&eval, &a.out)?;
    log::info!("scored {} frames from {} clips", eval.rows.len(), indices.len());
    Ok(())
}

fn cmd_export_frames(cli: &Cli, a: &ExportArgs) -> Result<()> {
    write_manifest(cli, &a.out, None)?;
    if let Some(path) = &a.forecast {
        let sc_path = path.with_extension("json");
        let text = fs::read_to_string(&sc_path).map_err(|e| Error::io(&sc_path, e))?;
        let sc: ForecastSidecar = serde_json::from_str(&text)?;
        let series = read_series_file(path)?;
        let frames = (0..series.n_times())
            .map(|t| Planes::new(sc.channels, sc.height, sc.width, series.frame(t).to_vec()))
            .collect::<Result<Vec<_>>>()?;
        return write_pngs(&sc.clip_id, &frames, &a.out);
    }
    match (&a.data, &a.clip) {
        (Some(data), Some(id)) => {
            let data = ClipDataset::open(data)?;
            let clip = data.load(find_clip(&data, id)?)?;
            write_pngs(id, &clip.target, &a.out)
        }
        _ => Err(Error::invalid("export-frames needs --forecast or --data with --clip")),
    }
}

fn cmd_synth(cli: &Cli, a: &SynthArgs, seed: u64) -> Result<()> {
    let cfg = SynthConfig {
        cells: a.cells,
        n_frames: a.frames,
        peak_frame: a.peak,
        ..SynthConfig::default()
    };
    let mesh = synth_mesh(cfg.cells)?;
    synth_roi(cfg.cells)?;
    write_manifest(cli, &a.out, None)?;
    save_mesh(&mesh, a.out.join("mesh.grd"))?;
    let mut ids = BTreeSet::new();
    for s in synth_storms(a.storms, &mesh, &cfg, seed)? {
        let dir = a.out.join(&s.storm_id);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        save_series(&s.zeta, dir.join("zeta.sfld"))?;
        save_series(&s.windx, dir.join("windx.sfld"))?;
        save_series(&s.windy, dir.join("windy.sfld"))?;
        ids.insert(s.storm_id);
    }
    log::info!("wrote {} synthetic storms", ids.len());
    Ok(())
}
