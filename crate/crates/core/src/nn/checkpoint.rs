//! `SSCK` checkpoint files: magic, version, a length-prefixed JSON header
//! (network config, value ranges, colormap), then named `f32` tensors in
//! sorted-name order until end of file.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, NetworkConfig, Params};
use crate::encode::{Colormap, Ranges};
use crate::error::{Error, Result};

pub const SSCK_MAGIC: &[u8; 4] = b"SSCK";
pub const SSCK_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    network: NetworkConfig,
    ranges: Ranges,
    colormap: Vec<[f64; 4]>,
}

/// A model together with the encoding it was trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub ranges: Ranges,
    pub colormap: Colormap,
}

pub fn write_checkpoint(ckpt: &Checkpoint, mut out: impl Write) -> Result<()> {
    let header = Header {
        network: ckpt.model.config.clone(),
        ranges: ckpt.ranges,
        colormap: ckpt.colormap.points().to_vec(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::new();
    buf.extend_from_slice(SSCK_MAGIC);
    buf.extend_from_slice(&SSCK_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    for (name, dims, data) in ckpt.model.params.named() {
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(dims.len() as u8);
        for d in &dims {
            buf.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.write_all(&buf).map_err(|e| Error::io("<checkpoint>", e))
}

fn bad(detail: impl Into<String>) -> Error {
    Error::Format {
        what: "SSCK",
        detail: detail.into(),
    }
}

pub fn read_checkpoint(mut input: impl Read) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    input
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io("<checkpoint>", e))?;
    let mut r = Cursor { buf: &bytes, pos: 0 };
    if r.take(4)? != SSCK_MAGIC {
        return Err(bad("magic"));
    }
    let version = r.u32()?;
    if version != SSCK_VERSION {
        return Err(bad(format!("version {version}")));
    }
    let json_len = r.u32()? as usize;
    let header: Header = serde_json::from_slice(r.take(json_len)?)?;
    let colormap = Colormap::new(header.colormap)?;
    let mut model = Model::<f32>::zeros(header.network)?;
    let expected: Vec<(String, Vec<usize>)> = model
        .params
        .named()
        .into_iter()
        .map(|(n, d, _)| (n, d))
        .collect();
    let mut seen = 0;
    while r.pos < bytes.len() {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| bad("tensor name not UTF-8"))?
            .to_string();
        let rank = r.take(1)?[0] as usize;
        let dims = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        match expected.get(seen) {
            Some((n, d)) if *n == name && *d == dims => {}
            _ => return Err(bad(format!("unexpected tensor {name} {dims:?}"))),
        }
        let count: usize = dims.iter().product();
        let raw = r.take(count * 4)?;
        let slot = model
            .params
            .named_mut(&name)
            .ok_or_else(|| bad(format!("unknown tensor {name}")))?;
        for (dst, c) in slot.iter_mut().zip(raw.chunks_exact(4)) {
            *dst = f32::from_le_bytes(c.try_into().unwrap());
        }
        seen += 1;
    }
    if seen != expected.len() {
        return Err(bad(format!("{seen} tensors, expected {}", expected.len())));
    }
    Ok(Checkpoint {
        model,
        ranges: header.ranges,
        colormap,
    })
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| bad("truncated"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_checkpoint(ckpt, &mut buf)?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(std::io::BufReader::new(f))
}

impl Checkpoint {
    pub fn params(&self) -> &Params<f32> {
        &self.model.params
    }
}
