//! Glue between the stages: nodal series to grids, grids on disk, grids to
//! encoded storm frames.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clips::StormFrames;
use crate::encode::{assemble_frame, Colormap, Ranges};
use crate::error::{Error, Result};
use crate::ingest::{read_series_file, save_series, Mesh, NodalSeries, DEFAULT_FILL};
use crate::raster::{build_index, rasterize, GridField, Roi};

/// Rasterized inputs of one storm. Values are held at `f32` precision so
/// they survive the gridded file format unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct GriddedStorm {
    pub storm_id: String,
    pub region_id: String,
    pub roi: Roi,
    pub times: Vec<f64>,
    pub zeta: Vec<GridField>,
    pub windx: Vec<GridField>,
    pub windy: Vec<GridField>,
    pub depth: GridField,
    /// Mean zeta over wet nodes inside the ROI, per frame.
    pub mean_zeta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Sidecar {
    storm_id: String,
    region_id: String,
    roi: Roi,
    mean_zeta: Vec<f64>,
}

fn round_f32(mut g: GridField) -> GridField {
    g.values.iter_mut().for_each(|v| *v = *v as f32 as f64);
    g
}

/// Interpolates every frame of the three forcing series plus the static
/// depth onto `roi`.
pub fn rasterize_storm(
    storm_id: &str,
    region_id: &str,
    mesh: &Mesh,
    zeta: &NodalSeries,
    windx: &NodalSeries,
    windy: &NodalSeries,
    roi: &Roi,
) -> Result<GriddedStorm> {
    for s in [zeta, windx, windy] {
        if s.n_nodes != mesh.node_count() {
            return Err(Error::NodeCountMismatch {
                expected: mesh.node_count(),
                found: s.n_nodes,
            });
        }
        if s.times != zeta.times {
            return Err(Error::invalid(format!(
                "series {} has different times from zeta",
                s.variable
            )));
        }
    }
    let index = build_index(mesh, roi)?;
    let n = zeta.n_times();
    let grid = |s: &NodalSeries, t: usize| -> Result<GridField> {
        let vals: Vec<f64> = s.frame(t).iter().map(|&v| v as f64).collect();
        rasterize(&index, &vals, s.fill_value, 0.0).map(round_f32)
    };
    let frames = (0..n)
        .into_par_iter()
        .map(|t| Ok((grid(zeta, t)?, grid(windx, t)?, grid(windy, t)?)))
        .collect::<Result<Vec<_>>>()?;
    let (mut zs, mut xs, mut ys) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for (z, x, y) in frames {
        zs.push(z);
        xs.push(x);
        ys.push(y);
    }
    let depth = round_f32(rasterize(&index, &mesh.depth, f64::NAN, 0.0)?);

    let inside: Vec<usize> = (0..mesh.node_count())
        .filter(|&i| roi.contains(mesh.lon[i], mesh.lat[i]))
        .collect();
    let mean_zeta = (0..n)
        .map(|t| {
            let f = zeta.frame(t);
            let wet: Vec<f64> = inside
                .iter()
                .map(|&i| f[i])
                .filter(|&v| !zeta.is_fill(v))
                .map(|v| v as f64)
                .collect();
            if wet.is_empty() {
                0.0
            } else {
                wet.iter().sum::<f64>() / wet.len() as f64
            }
        })
        .collect();

    Ok(GriddedStorm {
        storm_id: storm_id.to_string(),
        region_id: region_id.to_string(),
        roi: *roi,
        times: zeta.times.clone(),
        zeta: zs,
        windx: xs,
        windy: ys,
        depth,
        mean_zeta,
    })
}

fn grids_to_series(variable: &str, times: Vec<f64>, grids: &[&GridField]) -> Result<NodalSeries> {
    let n_nodes = grids.first().map(|g| g.width * g.height).unwrap_or(0);
    let values = grids
        .iter()
        .flat_map(|g| {
            g.values
                .iter()
                .zip(&g.mask)
                .map(|(&v, &m)| if m { v as f32 } else { DEFAULT_FILL as f32 })
        })
        .collect();
    NodalSeries::new(variable, times, n_nodes, values, DEFAULT_FILL)
}

fn series_to_grids(s: &NodalSeries, roi: &Roi) -> Result<Vec<GridField>> {
    if s.n_nodes != roi.pixels() {
        return Err(Error::NodeCountMismatch {
            expected: roi.pixels(),
            found: s.n_nodes,
        });
    }
    (0..s.n_times())
        .map(|t| {
            let f = s.frame(t);
            let mask: Vec<bool> = f.iter().map(|&v| !s.is_fill(v)).collect();
            let values = f
                .iter()
                .zip(&mask)
                .map(|(&v, &m)| if m { v as f64 } else { 0.0 })
                .collect();
            GridField::new(roi.width, roi.height, values, mask)
        })
        .collect()
}

fn refs(v: &[GridField]) -> Vec<&GridField> {
    v.iter().collect()
}

pub const GRID_FILES: [&str; 4] = ["zeta.sfld", "windx.sfld", "windy.sfld", "depth.sfld"];
pub const SIDECAR_FILE: &str = "raster.json";

/// Writes the storm as gridded series (`n_nodes = H·W`, row-major) plus a
/// JSON sidecar with the ROI and per-frame mean zeta.
pub fn write_gridded(storm: &GriddedStorm, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let t = &storm.times;
    save_series(&grids_to_series("zeta", t.clone(), &refs(&storm.zeta))?, dir.join(GRID_FILES[0]))?;
    save_series(&grids_to_series("windx", t.clone(), &refs(&storm.windx))?, dir.join(GRID_FILES[1]))?;
    save_series(&grids_to_series("windy", t.clone(), &refs(&storm.windy))?, dir.join(GRID_FILES[2]))?;
    save_series(&grids_to_series("depth", vec![0.0], &[&storm.depth])?, dir.join(GRID_FILES[3]))?;
    let sidecar = Sidecar {
        storm_id: storm.storm_id.clone(),
        region_id: storm.region_id.clone(),
        roi: storm.roi,
        mean_zeta: storm.mean_zeta.clone(),
    };
    let path = dir.join(SIDECAR_FILE);
    let text = serde_json::to_string_pretty(&sidecar)? + "\n";
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn read_gridded(dir: &Path) -> Result<GriddedStorm> {
    let path = dir.join(SIDECAR_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let sc: Sidecar = serde_json::from_str(&text)?;
    let zeta = read_series_file(dir.join(GRID_FILES[0]))?;
    let windx = read_series_file(dir.join(GRID_FILES[1]))?;
    let windy = read_series_file(dir.join(GRID_FILES[2]))?;
    let depth = read_series_file(dir.join(GRID_FILES[3]))?;
    if windx.times != zeta.times || windy.times != zeta.times || sc.mean_zeta.len() != zeta.n_times() {
        return Err(Error::invalid(format!(
            "gridded files in {} disagree on frame count",
            dir.display()
        )));
    }
    let depth = series_to_grids(&depth, &sc.roi)?
        .into_iter()
        .next()
        .ok_or_else(|| Error::invalid("depth grid has no frame"))?;
    Ok(GriddedStorm {
        storm_id: sc.storm_id,
        region_id: sc.region_id,
        roi: sc.roi,
        times: zeta.times.clone(),
        zeta: series_to_grids(&zeta, &sc.roi)?,
        windx: series_to_grids(&windx, &sc.roi)?,
        windy: series_to_grids(&windy, &sc.roi)?,
        depth,
        mean_zeta: sc.mean_zeta,
    })
}

/// Encodes each frame into six channels.
pub fn encode_storm(storm: &GriddedStorm, ranges: &Ranges, cmap: &Colormap) -> Result<StormFrames> {
    let frames = (0..storm.zeta.len())
        .into_par_iter()
        .map(|t| {
            assemble_frame(
                &storm.zeta[t],
                &storm.windx[t],
                &storm.windy[t],
                &storm.depth,
                ranges,
                cmap,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    StormFrames::new(
        storm.storm_id.clone(),
        storm.region_id.clone(),
        frames,
        storm.mean_zeta.clone(),
    )
}
