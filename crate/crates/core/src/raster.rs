//! Projection of nodal fields onto a regular grid.
//!
//! [`build_index`] classifies every pixel centre once (covering triangle and
//! barycentric weights); [`rasterize`] is then a cheap gather per frame.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::Mesh;

/// Weight tolerance for point-in-triangle classification.
pub const WEIGHT_EPS: f64 = 1e-12;
pub const MISS: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Roi {
    pub lon_min: f64,
    pub lon_max: f64,
    pub lat_min: f64,
    pub lat_max: f64,
    pub width: usize,
    pub height: usize,
}

impl Roi {
    pub fn new(
        lon_min: f64,
        lon_max: f64,
        lat_min: f64,
        lat_max: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let roi = Roi {
            lon_min,
            lon_max,
            lat_min,
            lat_max,
            width,
            height,
        };
        roi.validate()?;
        Ok(roi)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.lon_min, self.lon_max, self.lat_min, self.lat_max]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.lon_min >= self.lon_max || self.lat_min >= self.lat_max {
            return Err(Error::invalid(format!("bad ROI bounds {self:?}")));
        }
        if self.width < 2 || self.height < 2 {
            return Err(Error::invalid("ROI must be at least 2x2 pixels"));
        }
        Ok(())
    }

    /// Geographic position of the centre of pixel `(row, col)`; row 0 is north.
    pub fn pixel_center(&self, row: usize, col: usize) -> (f64, f64) {
        let lon = self.lon_min + (col as f64 + 0.5) * (self.lon_max - self.lon_min) / self.width as f64;
        let lat = self.lat_max - (row as f64 + 0.5) * (self.lat_max - self.lat_min) / self.height as f64;
        (lon, lat)
    }

    pub fn contains(&self, lon: f64, lat: f64) -> bool {
        lon >= self.lon_min && lon <= self.lon_max && lat >= self.lat_min && lat <= self.lat_max
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }
}

/// Barycentric weights of `(x, y)` with respect to triangle `e`, or `None`
/// when the point lies outside (any weight below `-WEIGHT_EPS`).
///
/// Returned weights are clamped at zero and renormalised, so they form a
/// convex combination.
pub fn barycentric(mesh: &Mesh, e: usize, x: f64, y: f64) -> Option<[f64; 3]> {
    let [a, b, c] = mesh.triangles[e];
    let (xa, ya) = (mesh.lon[a], mesh.lat[a]);
    let (xb, yb) = (mesh.lon[b], mesh.lat[b]);
    let (xc, yc) = (mesh.lon[c], mesh.lat[c]);
    let det = (yb - yc) * (xa - xc) + (xc - xb) * (ya - yc);
    let w0 = ((yb - yc) * (x - xc) + (xc - xb) * (y - yc)) / det;
    let w1 = ((yc - ya) * (x - xc) + (xa - xc) * (y - yc)) / det;
    let w2 = 1.0 - w0 - w1;
    if w0 < -WEIGHT_EPS || w1 < -WEIGHT_EPS || w2 < -WEIGHT_EPS {
        return None;
    }
    let w = [w0.max(0.0), w1.max(0.0), w2.max(0.0)];
    let s = w[0] + w[1] + w[2];
    Some([w[0] / s, w[1] / s, w[2] / s])
}

/// Resolves a pixel claimed by several triangles: lowest id wins.
pub fn tie_break(candidates: &[usize]) -> Option<usize> {
    candidates.iter().copied().min()
}

/// Per-pixel covering triangle and barycentric weights, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterIndex {
    pub roi: Roi,
    pub node_count: usize,
    pub triangle: Vec<u32>,
    pub nodes: Vec<[u32; 3]>,
    pub weights: Vec<[f64; 3]>,
}

impl RasterIndex {
    pub fn covering(&self, pixel: usize) -> Option<usize> {
        match self.triangle[pixel] {
            MISS => None,
            t => Some(t as usize),
        }
    }

    pub fn miss_count(&self) -> usize {
        self.triangle.iter().filter(|&&t| t == MISS).count()
    }
}

/// Uniform grid of bins over the ROI; each bin lists (in id order) every
/// triangle whose bounding box overlaps it.
struct Bins {
    nx: usize,
    ny: usize,
    x0: f64,
    y0: f64,
    dx: f64,
    dy: f64,
    cells: Vec<Vec<u32>>,
}

impl Bins {
    fn new(mesh: &Mesh, roi: &Roi) -> Self {
        let boxes: Vec<(usize, [f64; 4])> = (0..mesh.element_count())
            .filter_map(|e| {
                let t = mesh.triangles[e];
                let xs = t.map(|i| mesh.lon[i]);
                let ys = t.map(|i| mesh.lat[i]);
                let bb = [
                    xs.iter().copied().fold(f64::INFINITY, f64::min),
                    xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    ys.iter().copied().fold(f64::INFINITY, f64::min),
                    ys.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                ];
                let overlaps = bb[1] >= roi.lon_min
                    && bb[0] <= roi.lon_max
                    && bb[3] >= roi.lat_min
                    && bb[2] <= roi.lat_max;
                overlaps.then_some((e, bb))
            })
            .collect();

        let side = ((boxes.len() as f64).sqrt().ceil() as usize).max(1);
        let nx = side.min(roi.width);
        let ny = side.min(roi.height);
        let dx = (roi.lon_max - roi.lon_min) / nx as f64;
        let dy = (roi.lat_max - roi.lat_min) / ny as f64;
        let mut bins = Bins {
            nx,
            ny,
            x0: roi.lon_min,
            y0: roi.lat_min,
            dx,
            dy,
            cells: vec![Vec::new(); nx * ny],
        };
        for (e, bb) in boxes {
            let (ix0, ix1) = (bins.bin_x(bb[0]), bins.bin_x(bb[1]));
            let (iy0, iy1) = (bins.bin_y(bb[2]), bins.bin_y(bb[3]));
            for iy in iy0..=iy1 {
                for ix in ix0..=ix1 {
                    bins.cells[iy * nx + ix].push(e as u32);
                }
            }
        }
        bins
    }

    fn bin_x(&self, x: f64) -> usize {
        (((x - self.x0) / self.dx).floor().max(0.0) as usize).min(self.nx - 1)
    }

    fn bin_y(&self, y: f64) -> usize {
        (((y - self.y0) / self.dy).floor().max(0.0) as usize).min(self.ny - 1)
    }

    fn candidates(&self, x: f64, y: f64) -> &[u32] {
        &self.cells[self.bin_y(y) * self.nx + self.bin_x(x)]
    }
}

/// Classifies every pixel centre of `roi` against `mesh`.
///
/// An ROI that misses the mesh entirely gives an all-MISS index.
pub fn build_index(mesh: &Mesh, roi: &Roi) -> Result<RasterIndex> {
    roi.validate()?;
    let bins = Bins::new(mesh, roi);
    let per_pixel: Vec<(u32, [u32; 3], [f64; 3])> = (0..roi.pixels())
        .into_par_iter()
        .map(|p| {
            let (x, y) = roi.pixel_center(p / roi.width, p % roi.width);
            // candidates are in ascending id order, so the first hit is the tie-break winner
            for &e in bins.candidates(x, y) {
                if let Some(w) = barycentric(mesh, e as usize, x, y) {
                    let t = mesh.triangles[e as usize];
                    return (e, t.map(|i| i as u32), w);
                }
            }
            (MISS, [0; 3], [0.0; 3])
        })
        .collect();

    let mut index = RasterIndex {
        roi: *roi,
        node_count: mesh.node_count(),
        triangle: Vec::with_capacity(per_pixel.len()),
        nodes: Vec::with_capacity(per_pixel.len()),
        weights: Vec::with_capacity(per_pixel.len()),
    };
    for (t, n, w) in per_pixel {
        index.triangle.push(t);
        index.nodes.push(n);
        index.weights.push(w);
    }
    Ok(index)
}

/// One rasterized frame; `mask` is true where the pixel is covered and wet.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
}

impl GridField {
    pub fn new(width: usize, height: usize, values: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        if values.len() != width * height || mask.len() != width * height {
            return Err(Error::Shape(format!(
                "grid {width}x{height} with {} values / {} mask entries",
                values.len(),
                mask.len()
            )));
        }
        Ok(GridField {
            width,
            height,
            values,
            mask,
        })
    }

    /// Every pixel valid.
    pub fn filled(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        Self::new(width, height, values, vec![true; n])
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }
}

/// Interpolates `node_values` onto the indexed grid.
pub fn rasterize(
    index: &RasterIndex,
    node_values: &[f64],
    fill_value: f64,
    background: f64,
) -> Result<GridField> {
    if node_values.len() != index.node_count {
        return Err(Error::LengthMismatch {
            what: "node values",
            expected: index.node_count,
            found: node_values.len(),
        });
    }
    let (values, mask): (Vec<f64>, Vec<bool>) = (0..index.triangle.len())
        .into_par_iter()
        .map(|p| {
            if index.triangle[p] == MISS {
                return (background, false);
            }
            let v = index.nodes[p].map(|i| node_values[i as usize]);
            if v.contains(&fill_value) {
                return (background, false);
            }
            let w = index.weights[p];
            // offset form keeps constant fields exact
            (v[0] + w[1] * (v[1] - v[0]) + w[2] * (v[2] - v[0]), true)
        })
        .unzip();
    GridField::new(index.roi.width, index.roi.height, values, mask)
}
