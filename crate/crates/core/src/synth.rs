//! Synthetic storms for smoke tests and demos: a Gaussian surge bump that
//! drifts across a square basin, pushed by a uniform wind, over a linear
//! bathymetry ramp.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Mesh, NodalSeries, DEFAULT_FILL};
use crate::raster::Roi;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Mesh cells per side; the ROI has the same pixel count per side.
    pub cells: usize,
    pub n_frames: usize,
    pub peak_frame: usize,
    /// Bump radius in pixels.
    pub sigma_px: f64,
    /// Drift speed range in pixels per frame.
    pub speed: (f64, f64),
    /// Peak surge range in metres.
    pub amplitude: (f64, f64),
    /// Width of the amplitude envelope in frames.
    pub envelope_frames: f64,
    /// Wind speed (m/s) per pixel-per-frame of drift.
    pub wind_gain: f64,
    /// Largest offset of the bump from the basin centre at the peak, pixels.
    pub max_offset_px: f64,
    /// Seconds between frames.
    pub dt: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            cells: 32,
            n_frames: 60,
            peak_frame: 30,
            sigma_px: 4.0,
            speed: (0.3, 0.6),
            amplitude: (1.5, 2.2),
            envelope_frames: 10.0,
            wind_gain: 30.0,
            max_offset_px: 2.0,
            dt: 3600.0,
        }
    }
}

/// Regular triangulation of the unit square, `cells` squares per side,
/// each cut along its south-west to north-east diagonal. Depth ramps from
/// -10 m on the west edge to 30 m on the east edge.
pub fn synth_mesh(cells: usize) -> Result<Mesh> {
    if cells < 2 {
        return Err(Error::invalid("synthetic mesh needs >= 2 cells per side"));
    }
    let n = cells + 1;
    let mut lon = Vec::with_capacity(n * n);
    let mut lat = Vec::with_capacity(n * n);
    let mut depth = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            let x = i as f64 / cells as f64;
            lon.push(x);
            lat.push(j as f64 / cells as f64);
            depth.push(-10.0 + 40.0 * x);
        }
    }
    let mut tris = Vec::with_capacity(2 * cells * cells);
    for j in 0..cells {
        for i in 0..cells {
            let a = j * n + i;
            let (b, c, d) = (a + 1, a + n + 1, a + n);
            tris.push([a, b, c]);
            tris.push([a, c, d]);
        }
    }
    Mesh::new("synthetic basin", lon, lat, depth, tris)
}

/// The unit-square ROI at one pixel per mesh cell.
pub fn synth_roi(cells: usize) -> Result<Roi> {
    Roi::new(0.0, 1.0, 0.0, 1.0, cells, cells)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticStorm {
    pub storm_id: String,
    pub zeta: NodalSeries,
    pub windx: NodalSeries,
    pub windy: NodalSeries,
}

/// One storm; all randomness comes from `seed`.
pub fn synth_storm(storm_id: &str, mesh: &Mesh, cfg: &SynthConfig, seed: u64) -> Result<SyntheticStorm> {
    if cfg.peak_frame >= cfg.n_frames {
        return Err(Error::invalid("peak frame beyond the series"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let px = 1.0 / cfg.cells as f64;
    let heading = rng.gen_range(0.0..std::f64::consts::TAU);
    let speed = rng.gen_range(cfg.speed.0..=cfg.speed.1);
    let (vx, vy) = (speed * heading.cos(), speed * heading.sin());
    let amp = rng.gen_range(cfg.amplitude.0..=cfg.amplitude.1);
    let off = (
        rng.gen_range(-cfg.max_offset_px..=cfg.max_offset_px),
        rng.gen_range(-cfg.max_offset_px..=cfg.max_offset_px),
    );

    let nn = mesh.node_count();
    let times: Vec<f64> = (0..cfg.n_frames).map(|t| t as f64 * cfg.dt).collect();
    let mut zeta = Vec::with_capacity(cfg.n_frames * nn);
    let two_s2 = 2.0 * (cfg.sigma_px * px).powi(2);
    for t in 0..cfg.n_frames {
        let dt = t as f64 - cfg.peak_frame as f64;
        let a = amp * (-0.5 * (dt / cfg.envelope_frames).powi(2)).exp();
        let cx = 0.5 + (off.0 + vx * dt) * px;
        let cy = 0.5 + (off.1 + vy * dt) * px;
        for k in 0..nn {
            let r2 = (mesh.lon[k] - cx).powi(2) + (mesh.lat[k] - cy).powi(2);
            zeta.push((a * (-r2 / two_s2).exp()) as f32);
        }
    }
    let wind = |v: f64| vec![(cfg.wind_gain * v) as f32; cfg.n_frames * nn];
    Ok(SyntheticStorm {
        storm_id: storm_id.to_string(),
        zeta: NodalSeries::new("zeta", times.clone(), nn, zeta, DEFAULT_FILL)?,
        windx: NodalSeries::new("windx", times.clone(), nn, wind(vx), DEFAULT_FILL)?,
        windy: NodalSeries::new("windy", times, nn, wind(vy), DEFAULT_FILL)?,
    })
}

/// Storm ids `storm_000`, `storm_001`, ... with per-storm seeds derived
/// from `seed`.
pub fn synth_storms(count: usize, mesh: &Mesh, cfg: &SynthConfig, seed: u64) -> Result<Vec<SyntheticStorm>> {
    (0..count)
        .map(|i| {
            let s = seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
            synth_storm(&format!("storm_{i:03}"), mesh, cfg, s)
        })
        .collect()
}
