//! Value scaling, the elevation colormap and model-input assembly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::GridField;

pub const FRAME_CHANNELS: usize = 6;
pub const RGB_CHANNELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueRange {
    pub lo: f64,
    pub hi: f64,
}

impl ValueRange {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::invalid(format!("bad value range [{lo}, {hi}]")));
        }
        Ok(ValueRange { lo, hi })
    }

    /// Physical value corresponding to unit scalar `u`.
    pub fn unscale(&self, u: f64) -> f64 {
        self.lo + u * (self.hi - self.lo)
    }
}

/// Per-variable scaling ranges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ranges {
    pub zeta: ValueRange,
    pub windx: ValueRange,
    pub windy: ValueRange,
    pub depth: ValueRange,
}

impl Default for Ranges {
    fn default() -> Self {
        Ranges {
            zeta: ValueRange { lo: 0.0, hi: 2.5 },
            windx: ValueRange { lo: -40.0, hi: 20.0 },
            windy: ValueRange { lo: -30.0, hi: 30.0 },
            depth: ValueRange { lo: -20.0, hi: 50.0 },
        }
    }
}

/// `min(1, max(0, (value - lo) / (hi - lo)))`.
pub fn clamp_scale(value: f64, range: ValueRange) -> Result<f64> {
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("clamp_scale input {value}")));
    }
    Ok(((value - range.lo) / (range.hi - range.lo)).clamp(0.0, 1.0))
}

/// Piecewise-linear path through RGB space, parameterised by `t ∈ [0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Colormap {
    points: Vec<[f64; 4]>,
}

impl Default for Colormap {
    fn default() -> Self {
        Colormap {
            points: vec![
                [0.00, 0.0, 0.0, 0.5],
                [0.25, 0.0, 0.75, 1.0],
                [0.50, 0.5, 1.0, 0.5],
                [0.75, 1.0, 0.75, 0.0],
                [1.00, 0.5, 0.0, 0.0],
            ],
        }
    }
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Closest-approach distance between segments `p0-p1` and `q0-q1`.
fn segment_distance(p0: [f64; 3], p1: [f64; 3], q0: [f64; 3], q1: [f64; 3]) -> f64 {
    let d1 = sub(p1, p0);
    let d2 = sub(q1, q0);
    let r = sub(p0, q0);
    let a = dot(d1, d1);
    let e = dot(d2, d2);
    let f = dot(d2, r);
    let c = dot(d1, r);
    let b = dot(d1, d2);
    let denom = a * e - b * b;
    let mut s = if denom > 1e-15 {
        ((b * f - c * e) / denom).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let mut t = (b * s + f) / e;
    if t < 0.0 {
        t = 0.0;
        s = (-c / a).clamp(0.0, 1.0);
    } else if t > 1.0 {
        t = 1.0;
        s = ((b - c) / a).clamp(0.0, 1.0);
    }
    let cp = [p0[0] + d1[0] * s, p0[1] + d1[1] * s, p0[2] + d1[2] * s];
    let cq = [q0[0] + d2[0] * t, q0[1] + d2[1] * t, q0[2] + d2[2] * t];
    dot(sub(cp, cq), sub(cp, cq)).sqrt()
}

impl Colormap {
    /// Control points as `[t, r, g, b]`.
    pub fn new(points: Vec<[f64; 4]>) -> Result<Self> {
        let cmap = Colormap { points };
        cmap.validate()?;
        Ok(cmap)
    }

    pub fn points(&self) -> &[[f64; 4]] {
        &self.points
    }

    fn color(&self, k: usize) -> [f64; 3] {
        let p = self.points[k];
        [p[1], p[2], p[3]]
    }

    fn validate(&self) -> Result<()> {
        let pts = &self.points;
        if pts.len() < 2 {
            return Err(Error::invalid("colormap needs at least 2 control points"));
        }
        if pts.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("colormap has non-finite entries"));
        }
        if pts[0][0] != 0.0 || pts[pts.len() - 1][0] != 1.0 {
            return Err(Error::invalid("colormap t must start at 0 and end at 1"));
        }
        if pts.windows(2).any(|w| w[1][0] <= w[0][0]) {
            return Err(Error::invalid("colormap t not strictly increasing"));
        }
        if pts.iter().any(|p| p[1..].iter().any(|c| !(0.0..=1.0).contains(c))) {
            return Err(Error::invalid("colormap colors must lie in [0, 1]"));
        }
        let segs = pts.len() - 1;
        for i in 0..segs {
            let (a0, a1) = (self.color(i), self.color(i + 1));
            let len = dot(sub(a1, a0), sub(a1, a0)).sqrt();
            if len < 1e-9 {
                return Err(Error::invalid(format!("colormap segment {i} has zero length")));
            }
            // adjacent segments meet at a vertex; they must not fold back onto each other
            if i + 1 < segs {
                let a2 = self.color(i + 2);
                let u = sub(a1, a0);
                let v = sub(a2, a1);
                let cos = dot(u, v) / (len * dot(v, v).sqrt());
                if cos <= -1.0 + 1e-9 {
                    return Err(Error::invalid(format!(
                        "colormap segments {i} and {} overlap",
                        i + 1
                    )));
                }
            }
            for j in i + 2..segs {
                let d = segment_distance(a0, a1, self.color(j), self.color(j + 1));
                if d < 1e-9 {
                    return Err(Error::invalid(format!(
                        "colormap segments {i} and {j} intersect"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Reads a `t r g b` table, one control point per line. Blank lines and
    /// lines starting with `#` are ignored.
    pub fn from_table(text: &str) -> Result<Self> {
        let mut points = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse {
                    line: i + 1,
                    msg: e.to_string(),
                })?;
            if vals.len() != 4 {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("expected 4 columns, got {}", vals.len()),
                });
            }
            points.push([vals[0], vals[1], vals[2], vals[3]]);
        }
        Self::new(points)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_table(&text)
    }

    /// Largest change in `t` per unit RGB distance along any segment.
    pub fn max_inverse_slope(&self) -> f64 {
        (0..self.points.len() - 1)
            .map(|k| {
                let d = sub(self.color(k + 1), self.color(k));
                (self.points[k + 1][0] - self.points[k][0]) / dot(d, d).sqrt()
            })
            .fold(0.0, f64::max)
    }
}

/// Colour for unit scalar `u`.
pub fn rgb_encode(u: f64, cmap: &Colormap) -> Result<[f64; 3]> {
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::invalid(format!("rgb_encode input {u} outside [0, 1]")));
    }
    let pts = &cmap.points;
    let k = pts
        .windows(2)
        .position(|w| u <= w[1][0])
        .unwrap_or(pts.len() - 2);
    let (a, b) = (pts[k], pts[k + 1]);
    if u == a[0] {
        return Ok([a[1], a[2], a[3]]);
    }
    if u == b[0] {
        return Ok([b[1], b[2], b[3]]);
    }
    let s = (u - a[0]) / (b[0] - a[0]);
    Ok([
        a[1] + s * (b[1] - a[1]),
        a[2] + s * (b[2] - a[2]),
        a[3] + s * (b[3] - a[3]),
    ])
}

/// Inverse of [`rgb_encode`]: `t` of the nearest point on the colormap
/// polyline. Ties go to the smaller `t`.
pub fn rgb_decode(rgb: [f64; 3], cmap: &Colormap) -> f64 {
    let mut best_d2 = f64::INFINITY;
    let mut best_t = 0.0;
    for k in 0..cmap.points.len() - 1 {
        let (a, b) = (cmap.color(k), cmap.color(k + 1));
        let ab = sub(b, a);
        let s = (dot(sub(rgb, a), ab) / dot(ab, ab)).clamp(0.0, 1.0);
        let p = [a[0] + s * ab[0], a[1] + s * ab[1], a[2] + s * ab[2]];
        let d2 = dot(sub(rgb, p), sub(rgb, p));
        if d2 < best_d2 {
            best_d2 = d2;
            let (t0, t1) = (cmap.points[k][0], cmap.points[k + 1][0]);
            best_t = if s == 1.0 { t1 } else { t0 + s * (t1 - t0) };
        }
    }
    best_t
}

/// `round(v * 255)`, clamped to `0..=255`.
pub fn quantize(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Channel-major stack of `channels` planes of `height × width` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Planes {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Planes {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "{} values for {channels}x{height}x{width}",
                data.len()
            )));
        }
        Ok(Planes {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Planes {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    /// Copy of channels `range`.
    pub fn slice_channels(&self, range: std::ops::Range<usize>) -> Planes {
        let n = self.plane_len();
        Planes {
            channels: range.len(),
            height: self.height,
            width: self.width,
            data: self.data[range.start * n..range.end * n].to_vec(),
        }
    }

    /// Stacks planes along the channel axis.
    pub fn concat(parts: &[&Planes]) -> Result<Planes> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat of zero parts"))?;
        let (h, w) = (first.height, first.width);
        if parts.iter().any(|p| p.height != h || p.width != w) {
            return Err(Error::Shape("concat of differently sized planes".into()));
        }
        let mut data = Vec::with_capacity(parts.iter().map(|p| p.data.len()).sum());
        for p in parts {
            data.extend_from_slice(&p.data);
        }
        Planes::new(parts.iter().map(|p| p.channels).sum(), h, w, data)
    }

    pub fn in_unit_range(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }
}

/// Six-channel model input `[zeta-R, zeta-G, zeta-B, windx, windy, depth]`,
/// every entry in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelFrame(Planes);

impl ChannelFrame {
    pub fn new(planes: Planes) -> Result<Self> {
        if planes.channels != FRAME_CHANNELS {
            return Err(Error::Shape(format!(
                "channel frame needs {FRAME_CHANNELS} channels, got {}",
                planes.channels
            )));
        }
        if !planes.in_unit_range() {
            return Err(Error::invalid("channel frame entries must lie in [0, 1]"));
        }
        Ok(ChannelFrame(planes))
    }

    pub fn planes(&self) -> &Planes {
        &self.0
    }

    pub fn into_planes(self) -> Planes {
        self.0
    }

    pub fn rgb(&self) -> Planes {
        self.0.slice_channels(0..3)
    }

    pub fn wind(&self) -> Planes {
        self.0.slice_channels(3..5)
    }

    pub fn bathymetry(&self) -> Planes {
        self.0.slice_channels(5..6)
    }
}

impl std::ops::Deref for ChannelFrame {
    type Target = Planes;
    fn deref(&self) -> &Planes {
        &self.0
    }
}

/// Encodes a zeta grid into three RGB planes. Masked (dry or uncovered)
/// pixels take the colour for `u = 0`.
pub fn encode_zeta(zeta: &GridField, range: ValueRange, cmap: &Colormap) -> Result<Planes> {
    let n = zeta.width * zeta.height;
    let mut data = vec![0f32; 3 * n];
    let floor = rgb_encode(0.0, cmap)?;
    for p in 0..n {
        let rgb = if zeta.mask[p] {
            rgb_encode(clamp_scale(zeta.values[p], range)?, cmap)?
        } else {
            floor
        };
        for c in 0..3 {
            data[c * n + p] = rgb[c] as f32;
        }
    }
    Planes::new(3, zeta.height, zeta.width, data)
}

/// Clamp-scales a grid into a single grayscale plane.
pub fn encode_scalar(grid: &GridField, range: ValueRange) -> Result<Planes> {
    let data = grid
        .values
        .iter()
        .map(|&v| clamp_scale(v, range).map(|u| u as f32))
        .collect::<Result<Vec<_>>>()?;
    Planes::new(1, grid.height, grid.width, data)
}

/// Builds the six-channel frame `[zeta-RGB, windx, windy, depth]`.
pub fn assemble_frame(
    zeta: &GridField,
    windx: &GridField,
    windy: &GridField,
    depth: &GridField,
    ranges: &Ranges,
    cmap: &Colormap,
) -> Result<ChannelFrame> {
    for (name, g) in [("windx", windx), ("windy", windy), ("depth", depth)] {
        if g.width != zeta.width || g.height != zeta.height {
            return Err(Error::Shape(format!(
                "{name} grid is {}x{}, zeta is {}x{}",
                g.height, g.width, zeta.height, zeta.width
            )));
        }
    }
    let planes = Planes::concat(&[
        &encode_zeta(zeta, ranges.zeta, cmap)?,
        &encode_scalar(windx, ranges.windx)?,
        &encode_scalar(windy, ranges.windy)?,
        &encode_scalar(depth, ranges.depth)?,
    ])?;
    ChannelFrame::new(planes)
}

/// Converts zeta RGB planes back to meters through the colormap inverse.
pub fn decode_zeta(rgb: &Planes, range: ValueRange, cmap: &Colormap) -> Vec<f64> {
    let n = rgb.plane_len();
    (0..n)
        .map(|p| {
            let c = [
                rgb.data[p] as f64,
                rgb.data[n + p] as f64,
                rgb.data[2 * n + p] as f64,
            ];
            range.unscale(rgb_decode(c, cmap))
        })
        .collect()
}
