//! Mesh and nodal time-series ingestion.
//!
//! Two on-disk formats are understood:
//!
//! * an ADCIRC-style ASCII grid (title line, `<elements> <nodes>`, node
//!   records, element records, 1-based ids);
//! * `SFLD`, a little-endian binary container for one variable sampled at
//!   `n_times` instants over `n_nodes` locations.
//!
//! Everything returned from here is validated and read-only afterwards.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const SFLD_MAGIC: &[u8; 4] = b"SFLD";
pub const SFLD_VERSION: u32 = 1;
pub const DEFAULT_FILL: f64 = -99999.0;

/// Unstructured triangular mesh. Indices are 0-based.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub title: String,
    pub lon: Vec<f64>,
    pub lat: Vec<f64>,
    /// Meters, positive below datum.
    pub depth: Vec<f64>,
    pub triangles: Vec<[usize; 3]>,
}

impl Mesh {
    /// Builds a mesh from 0-based parts, enforcing the same invariants as
    /// [`load_mesh`].
    pub fn new(
        title: impl Into<String>,
        lon: Vec<f64>,
        lat: Vec<f64>,
        depth: Vec<f64>,
        triangles: Vec<[usize; 3]>,
    ) -> Result<Self> {
        let mesh = Mesh {
            title: title.into(),
            lon,
            lat,
            depth,
            triangles,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn node_count(&self) -> usize {
        self.lon.len()
    }

    pub fn element_count(&self) -> usize {
        self.triangles.len()
    }

    /// Signed area (counter-clockwise positive) of element `e`.
    pub fn signed_area(&self, e: usize) -> f64 {
        let [a, b, c] = self.triangles[e];
        0.5 * ((self.lon[b] - self.lon[a]) * (self.lat[c] - self.lat[a])
            - (self.lon[c] - self.lon[a]) * (self.lat[b] - self.lat[a]))
    }

    /// `(lon_min, lon_max, lat_min, lat_max)` over all nodes.
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        let fold = |v: &[f64]| {
            v.iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
                    (lo.min(x), hi.max(x))
                })
        };
        let (x0, x1) = fold(&self.lon);
        let (y0, y1) = fold(&self.lat);
        (x0, x1, y0, y1)
    }

    fn validate(&self) -> Result<()> {
        let n = self.node_count();
        if self.lat.len() != n || self.depth.len() != n {
            return Err(Error::invalid("lon/lat/depth lengths differ"));
        }
        if n < 3 {
            return Err(Error::invalid(format!("mesh needs >= 3 nodes, has {n}")));
        }
        if self.triangles.is_empty() {
            return Err(Error::invalid("mesh has no elements"));
        }
        for (name, v) in [("lon", &self.lon), ("lat", &self.lat), ("depth", &self.depth)] {
            if let Some(i) = v.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("{name} of node {}", i + 1)));
            }
        }
        for (e, tri) in self.triangles.iter().enumerate() {
            if let Some(&bad) = tri.iter().find(|&&i| i >= n) {
                return Err(Error::IndexOutOfRange {
                    element: e + 1,
                    node: bad as i64 + 1,
                    node_count: n,
                });
            }
        }
        let (x0, x1, y0, y1) = self.bounds();
        let scale2 = (x1 - x0).powi(2) + (y1 - y0).powi(2);
        let tol = 1e-12 * scale2.max(f64::MIN_POSITIVE);
        let degenerate: Vec<usize> = (0..self.element_count())
            .filter(|&e| self.signed_area(e).abs() <= tol)
            .map(|e| e + 1)
            .collect();
        if !degenerate.is_empty() {
            return Err(Error::DegenerateTriangles(degenerate));
        }
        Ok(())
    }
}

/// Reads an ASCII grid file.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<Mesh> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_mesh(BufReader::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

/// Parses an ASCII grid from any reader.
pub fn parse_mesh(reader: impl BufRead) -> Result<Mesh> {
    let mut lines = reader.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut next_line = |what: &str| -> Result<(usize, String)> {
        match lines.next() {
            Some((n, Ok(l))) => Ok((n, l)),
            Some((_, Err(e))) => Err(Error::io("<mesh>", e)),
            None => Err(Error::Parse {
                line: 0,
                msg: format!("unexpected end of file, expected {what}"),
            }),
        }
    };

    let (_, title) = next_line("title")?;
    let (ln, header) = next_line("element/node counts")?;
    let mut tok = header.split_whitespace();
    let element_count: usize = parse_tok(tok.next(), ln, "element count")?;
    let node_count: usize = parse_tok(tok.next(), ln, "node count")?;

    let mut lon = Vec::with_capacity(node_count);
    let mut lat = Vec::with_capacity(node_count);
    let mut depth = Vec::with_capacity(node_count);
    for i in 0..node_count {
        let (ln, line) = next_line("node record")?;
        let mut tok = line.split_whitespace();
        let id: usize = parse_tok(tok.next(), ln, "node id")?;
        if id != i + 1 {
            return Err(Error::Parse {
                line: ln,
                msg: format!("node id {id}, expected {}", i + 1),
            });
        }
        lon.push(parse_tok(tok.next(), ln, "lon")?);
        lat.push(parse_tok(tok.next(), ln, "lat")?);
        depth.push(parse_tok(tok.next(), ln, "depth")?);
    }

    let mut triangles = Vec::with_capacity(element_count);
    for e in 0..element_count {
        let (ln, line) = next_line("element record")?;
        let mut tok = line.split_whitespace();
        let id: usize = parse_tok(tok.next(), ln, "element id")?;
        if id != e + 1 {
            return Err(Error::Parse {
                line: ln,
                msg: format!("element id {id}, expected {}", e + 1),
            });
        }
        let nv: usize = parse_tok(tok.next(), ln, "vertex count")?;
        if nv != 3 {
            return Err(Error::Parse {
                line: ln,
                msg: format!("only triangles supported, got {nv} vertices"),
            });
        }
        let mut tri = [0usize; 3];
        for slot in tri.iter_mut() {
            let raw: i64 = parse_tok(tok.next(), ln, "node index")?;
            if raw < 1 || raw as usize > node_count {
                return Err(Error::IndexOutOfRange {
                    element: e + 1,
                    node: raw,
                    node_count,
                });
            }
            *slot = raw as usize - 1;
        }
        triangles.push(tri);
    }

    Mesh::new(title.trim_end(), lon, lat, depth, triangles)
}

fn parse_tok<T: std::str::FromStr>(tok: Option<&str>, line: usize, what: &str) -> Result<T> {
    let s = tok.ok_or_else(|| Error::Parse {
        line,
        msg: format!("missing {what}"),
    })?;
    s.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("bad {what} {s:?}"),
    })
}

/// Writes the ASCII grid layout read by [`load_mesh`]. Floats use the
/// shortest round-trip representation, so a reload is bit-identical.
pub fn write_mesh(mesh: &Mesh, mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "{}", mesh.title)?;
    writeln!(out, "{} {}", mesh.element_count(), mesh.node_count())?;
    for i in 0..mesh.node_count() {
        writeln!(
            out,
            "{} {:?} {:?} {:?}",
            i + 1,
            mesh.lon[i],
            mesh.lat[i],
            mesh.depth[i]
        )?;
    }
    for (e, [a, b, c]) in mesh.triangles.iter().enumerate() {
        writeln!(out, "{} 3 {} {} {}", e + 1, a + 1, b + 1, c + 1)?;
    }
    Ok(())
}

pub fn save_mesh(mesh: &Mesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    write_mesh(mesh, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// One variable over time, time-major `[n_times × n_nodes]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodalSeries {
    pub variable: String,
    /// Seconds since simulation start.
    pub times: Vec<f64>,
    pub n_nodes: usize,
    pub values: Vec<f32>,
    pub fill_value: f64,
}

impl NodalSeries {
    pub fn new(
        variable: impl Into<String>,
        times: Vec<f64>,
        n_nodes: usize,
        values: Vec<f32>,
        fill_value: f64,
    ) -> Result<Self> {
        let s = NodalSeries {
            variable: variable.into(),
            times,
            n_nodes,
            values,
            fill_value,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    /// Values at time index `t`.
    pub fn frame(&self, t: usize) -> &[f32] {
        &self.values[t * self.n_nodes..(t + 1) * self.n_nodes]
    }

    pub fn is_fill(&self, v: f32) -> bool {
        v as f64 == self.fill_value
    }

    fn validate(&self) -> Result<()> {
        let expected = self.times.len() * self.n_nodes;
        if self.values.len() != expected {
            return Err(Error::LengthMismatch {
                what: "series values",
                expected,
                found: self.values.len(),
            });
        }
        if let Some(i) = self.times.iter().position(|t| !t.is_finite()) {
            return Err(Error::NonFinite(format!("time index {i}")));
        }
        if let Some(i) = self.times.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::NonIncreasingTimes(i + 1));
        }
        if let Some(i) = self
            .values
            .iter()
            .position(|&v| !v.is_finite() && !self.is_fill(v))
        {
            return Err(Error::NonFinite(format!(
                "value at time {} node {}",
                i / self.n_nodes.max(1),
                i % self.n_nodes.max(1)
            )));
        }
        Ok(())
    }
}

/// Serialises a series in SFLD layout.
pub fn write_series(series: &NodalSeries, mut out: impl Write) -> std::io::Result<()> {
    let name = series.variable.as_bytes();
    out.write_all(SFLD_MAGIC)?;
    out.write_all(&SFLD_VERSION.to_le_bytes())?;
    out.write_all(&(name.len() as u16).to_le_bytes())?;
    out.write_all(name)?;
    out.write_all(&(series.n_times() as u64).to_le_bytes())?;
    out.write_all(&(series.n_nodes as u64).to_le_bytes())?;
    out.write_all(&series.fill_value.to_le_bytes())?;
    for t in &series.times {
        out.write_all(&t.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(series.values.len() * 4);
    for v in &series.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)
}

pub fn save_series(series: &NodalSeries, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    write_series(series, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Parses SFLD bytes without checking against a mesh.
pub fn read_series(mut input: impl Read) -> Result<NodalSeries> {
    let io = |e| Error::io("<sfld>", e);
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic).map_err(io)?;
    if &magic != SFLD_MAGIC {
        return Err(Error::Format {
            what: "SFLD",
            detail: format!("magic {magic:?}"),
        });
    }
    let version = u32::from_le_bytes(read_array(&mut input)?);
    if version != SFLD_VERSION {
        return Err(Error::Format {
            what: "SFLD",
            detail: format!("version {version}"),
        });
    }
    let name_len = u16::from_le_bytes(read_array(&mut input)?) as usize;
    let mut name = vec![0u8; name_len];
    input.read_exact(&mut name).map_err(io)?;
    let variable = String::from_utf8(name).map_err(|_| Error::Format {
        what: "SFLD",
        detail: "variable name is not UTF-8".into(),
    })?;
    let n_times = u64::from_le_bytes(read_array(&mut input)?) as usize;
    let n_nodes = u64::from_le_bytes(read_array(&mut input)?) as usize;
    let fill_value = f64::from_le_bytes(read_array(&mut input)?);

    let mut raw = vec![0u8; n_times * 8];
    input.read_exact(&mut raw).map_err(io)?;
    let times = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut raw = vec![0u8; n_times * n_nodes * 4];
    input.read_exact(&mut raw).map_err(io)?;
    let values = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    NodalSeries::new(variable, times, n_nodes, values, fill_value)
}

fn read_array<const N: usize>(input: &mut impl Read) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    input.read_exact(&mut b).map_err(|e| Error::io("<sfld>", e))?;
    Ok(b)
}

/// Reads an SFLD file from disk, no mesh check.
pub fn read_series_file(path: impl AsRef<Path>) -> Result<NodalSeries> {
    let path = path.as_ref();
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_series(BufReader::new(f)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

/// Reads an SFLD file and checks it against `mesh`.
pub fn load_series(path: impl AsRef<Path>, mesh: &Mesh) -> Result<NodalSeries> {
    let s = read_series_file(path)?;
    if s.n_nodes != mesh.node_count() {
        return Err(Error::NodeCountMismatch {
            expected: mesh.node_count(),
            found: s.n_nodes,
        });
    }
    Ok(s)
}
