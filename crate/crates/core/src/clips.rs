//! Peak-centred clip extraction, storm-level splits and the on-disk clip
//! dataset (`index.json` plus one `SCLP` file per clip).

use std::borrow::Cow;
use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encode::{ChannelFrame, Colormap, Planes, Ranges};
use crate::error::{Error, Result};

pub const CONTEXT_LEN: usize = 6;
pub const HORIZON: usize = 24;
pub const CLIP_LEN: usize = CONTEXT_LEN + HORIZON;
/// Frames kept either side of the peak.
pub const PEAK_HALF_WIDTH: usize = 20;
pub const DEFAULT_TEST_FRACTION: f64 = 0.10;

pub const SCLP_MAGIC: &[u8; 4] = b"SCLP";
pub const SCLP_VERSION: u32 = 1;

/// Encoded frames of one storm over one region.
#[derive(Debug, Clone)]
pub struct StormFrames {
    pub storm_id: String,
    pub region_id: String,
    pub frames: Vec<ChannelFrame>,
    /// Mean physical zeta over sampled wet nodes, per frame.
    pub mean_zeta: Vec<f64>,
}

impl StormFrames {
    pub fn new(
        storm_id: impl Into<String>,
        region_id: impl Into<String>,
        frames: Vec<ChannelFrame>,
        mean_zeta: Vec<f64>,
    ) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::invalid("storm has no frames"));
        }
        if frames.len() != mean_zeta.len() {
            return Err(Error::LengthMismatch {
                what: "mean_zeta",
                expected: frames.len(),
                found: mean_zeta.len(),
            });
        }
        Ok(StormFrames {
            storm_id: storm_id.into(),
            region_id: region_id.into(),
            frames,
            mean_zeta,
        })
    }
}

/// One training/evaluation sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub storm_id: String,
    pub region_id: String,
    /// Index of the first context frame within the storm.
    pub start_frame: usize,
    pub context: Vec<ChannelFrame>,
    /// Zeta RGB, 3 channels each.
    pub target: Vec<Planes>,
    /// `(windx, windy)` aligned with each target step.
    pub future_wind: Vec<Planes>,
    pub bathymetry: Planes,
}

impl Clip {
    pub fn height(&self) -> usize {
        self.bathymetry.height
    }

    pub fn width(&self) -> usize {
        self.bathymetry.width
    }

    pub fn clip_id(&self) -> String {
        format!("{}_{:03}", self.storm_id, self.start_frame)
    }

    pub fn validate(&self) -> Result<()> {
        if self.context.len() != CONTEXT_LEN
            || self.target.len() != HORIZON
            || self.future_wind.len() != HORIZON
        {
            return Err(Error::Shape(format!(
                "clip lengths {}/{}/{}",
                self.context.len(),
                self.target.len(),
                self.future_wind.len()
            )));
        }
        let (h, w) = (self.height(), self.width());
        let dims_ok = self.bathymetry.channels == 1
            && self.context.iter().all(|f| f.height == h && f.width == w)
            && self.target.iter().all(|p| p.channels == 3 && p.height == h && p.width == w)
            && self.future_wind.iter().all(|p| p.channels == 2 && p.height == h && p.width == w);
        if !dims_ok {
            return Err(Error::Shape("clip frame dimensions disagree".into()));
        }
        if !self.target.iter().all(Planes::in_unit_range) {
            return Err(Error::invalid("clip target outside [0, 1]"));
        }
        Ok(())
    }
}

/// Index of the largest value; earliest wins on ties.
pub fn find_peak_frame(mean_zeta: &[f64]) -> Result<usize> {
    if mean_zeta.is_empty() {
        return Err(Error::invalid("peak search over an empty series"));
    }
    let mut best = 0;
    for (i, &v) in mean_zeta.iter().enumerate() {
        if v > mean_zeta[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Inclusive frame range `[peak - 20, peak + 20]` truncated to the series.
pub fn event_window(peak: usize, n_frames: usize) -> (usize, usize) {
    (
        peak.saturating_sub(PEAK_HALF_WIDTH),
        (peak + PEAK_HALF_WIDTH).min(n_frames.saturating_sub(1)),
    )
}

/// Stride-1 windows of 30 frames over `window`; `first_frame` is the storm
/// index of `window[0]`. Shorter windows yield no clips.
pub fn slide_windows(
    storm_id: &str,
    region_id: &str,
    window: &[ChannelFrame],
    first_frame: usize,
) -> Vec<Clip> {
    if window.len() < CLIP_LEN {
        return Vec::new();
    }
    (0..=window.len() - CLIP_LEN)
        .map(|s| {
            let frames = &window[s..s + CLIP_LEN];
            let (context, future) = frames.split_at(CONTEXT_LEN);
            Clip {
                storm_id: storm_id.to_string(),
                region_id: region_id.to_string(),
                start_frame: first_frame + s,
                context: context.to_vec(),
                target: future.iter().map(ChannelFrame::rgb).collect(),
                future_wind: future.iter().map(ChannelFrame::wind).collect(),
                bathymetry: frames[0].bathymetry(),
            }
        })
        .collect()
}

/// Peak search, event window and sliding windows for one storm.
pub fn clips_for_storm(storm: &StormFrames) -> Result<Vec<Clip>> {
    let peak = find_peak_frame(&storm.mean_zeta)?;
    let (start, end) = event_window(peak, storm.frames.len());
    Ok(slide_windows(
        &storm.storm_id,
        &storm.region_id,
        &storm.frames[start..=end],
        start,
    ))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub train_storms: BTreeSet<String>,
    pub test_storms: BTreeSet<String>,
}

/// `round(n * fraction)`, at least 1 and at most `n - 1`.
pub fn held_out_count(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction).round() as usize).clamp(1, n.saturating_sub(1).max(1))
}

fn seeded_partition(ids: &[String], seed: u64, fraction: f64) -> Result<(Vec<String>, Vec<String>)> {
    let mut unique: Vec<String> = ids.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    if unique.len() < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 storms to split, got {}",
            unique.len()
        )));
    }
    let k = held_out_count(unique.len(), fraction);
    unique.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let rest = unique.split_off(k);
    Ok((rest, unique))
}

/// Storm-level train/test split, deterministic in `seed`.
pub fn split_storms(storm_ids: &[String], seed: u64, test_fraction: f64) -> Result<SplitManifest> {
    let (train, test) = seeded_partition(storm_ids, seed, test_fraction)?;
    Ok(SplitManifest {
        seed,
        train_storms: train.into_iter().collect(),
        test_storms: test.into_iter().collect(),
    })
}

/// Carves a validation set out of the training storms.
pub fn carve_validation(
    train_storms: &BTreeSet<String>,
    seed: u64,
) -> Result<(BTreeSet<String>, BTreeSet<String>)> {
    let ids: Vec<String> = train_storms.iter().cloned().collect();
    let (train, val) = seeded_partition(&ids, seed ^ 0x5E_ED0F_0A11, DEFAULT_TEST_FRACTION)?;
    Ok((train.into_iter().collect(), val.into_iter().collect()))
}

/// Random access to clips, in memory or lazily from disk.
pub trait ClipSource: Sync {
    fn len(&self) -> usize;
    fn storm_id(&self, i: usize) -> &str;
    fn load(&self, i: usize) -> Result<Cow<'_, Clip>>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Indices of clips whose storm is in `storms`, ascending.
    fn indices_for(&self, storms: &BTreeSet<String>) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| storms.contains(self.storm_id(i)))
            .collect()
    }
}

impl ClipSource for Vec<Clip> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn storm_id(&self, i: usize) -> &str {
        &self[i].storm_id
    }

    fn load(&self, i: usize) -> Result<Cow<'_, Clip>> {
        self.get(i)
            .map(Cow::Borrowed)
            .ok_or_else(|| Error::invalid(format!("clip index {i} out of range")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipEntry {
    pub clip_id: String,
    pub storm_id: String,
    pub region_id: String,
    pub file: String,
    /// Inclusive storm frame range covered by the clip.
    pub frame_start: usize,
    pub frame_end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub height: usize,
    pub width: usize,
    pub ranges: Ranges,
    pub colormap: Colormap,
    pub split: SplitManifest,
    pub clips: Vec<ClipEntry>,
}

fn put_f32s(buf: &mut Vec<u8>, data: &[f32]) {
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

/// `SCLP` encoding of one clip.
pub fn encode_clip(clip: &Clip) -> Vec<u8> {
    let (h, w) = (clip.height(), clip.width());
    let mut buf = Vec::with_capacity(16 + (CONTEXT_LEN * 6 + HORIZON * 5 + 1) * h * w * 4);
    buf.extend_from_slice(SCLP_MAGIC);
    buf.extend_from_slice(&SCLP_VERSION.to_le_bytes());
    buf.extend_from_slice(&(h as u32).to_le_bytes());
    buf.extend_from_slice(&(w as u32).to_le_bytes());
    for f in &clip.context {
        put_f32s(&mut buf, &f.data);
    }
    for p in &clip.target {
        put_f32s(&mut buf, &p.data);
    }
    for p in &clip.future_wind {
        put_f32s(&mut buf, &p.data);
    }
    put_f32s(&mut buf, &clip.bathymetry.data);
    buf
}

/// Inverse of [`encode_clip`]. Identity fields come from the index entry.
/// A cached bathymetry plane, when given, replaces the stored one.
pub fn decode_clip(bytes: &[u8], entry: &ClipEntry, cached_bathy: Option<&Planes>) -> Result<Clip> {
    let mut r = bytes;
    let mut word = [0u8; 4];
    let mut next_u32 = |r: &mut &[u8]| -> Result<u32> {
        r.read_exact(&mut word).map_err(|e| Error::io(&entry.file, e))?;
        Ok(u32::from_le_bytes(word))
    };
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| Error::io(&entry.file, e))?;
    if &magic != SCLP_MAGIC {
        return Err(Error::Format {
            what: "SCLP",
            detail: format!("magic {magic:?}"),
        });
    }
    let version = next_u32(&mut r)?;
    if version != SCLP_VERSION {
        return Err(Error::Format {
            what: "SCLP",
            detail: format!("version {version}"),
        });
    }
    let h = next_u32(&mut r)? as usize;
    let w = next_u32(&mut r)? as usize;
    let n = h * w;
    let expected = (CONTEXT_LEN * 6 + HORIZON * 5 + 1) * n * 4;
    if r.len() != expected {
        return Err(Error::Format {
            what: "SCLP",
            detail: format!("payload {} bytes, expected {expected}", r.len()),
        });
    }
    let mut floats = r
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()));
    let mut take = |channels: usize| Planes::new(channels, h, w, floats.by_ref().take(channels * n).collect());
    let context = (0..CONTEXT_LEN)
        .map(|_| take(6).and_then(ChannelFrame::new))
        .collect::<Result<Vec<_>>>()?;
    let target = (0..HORIZON).map(|_| take(3)).collect::<Result<Vec<_>>>()?;
    let future_wind = (0..HORIZON).map(|_| take(2)).collect::<Result<Vec<_>>>()?;
    let bathymetry = match cached_bathy {
        Some(b) => b.clone(),
        None => take(1)?,
    };
    let clip = Clip {
        storm_id: entry.storm_id.clone(),
        region_id: entry.region_id.clone(),
        start_frame: entry.frame_start,
        context,
        target,
        future_wind,
        bathymetry,
    };
    clip.validate()?;
    Ok(clip)
}

/// Writes `clips` and `index.json` under `dir`. Clip files are named by
/// clip id, so reruns overwrite byte-identically.
pub fn write_dataset(
    dir: impl AsRef<Path>,
    clips: &[Clip],
    split: SplitManifest,
    ranges: Ranges,
    colormap: Colormap,
) -> Result<DatasetIndex> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (height, width) = clips
        .first()
        .map(|c| (c.height(), c.width()))
        .unwrap_or((0, 0));
    let mut entries = Vec::with_capacity(clips.len());
    for clip in clips {
        clip.validate()?;
        if clip.height() != height || clip.width() != width {
            return Err(Error::Shape("clips in one dataset must share H x W".into()));
        }
        let clip_id = clip.clip_id();
        let file = format!("{clip_id}.sclp");
        let path = dir.join(&file);
        fs::write(&path, encode_clip(clip)).map_err(|e| Error::io(&path, e))?;
        entries.push(ClipEntry {
            clip_id,
            storm_id: clip.storm_id.clone(),
            region_id: clip.region_id.clone(),
            file,
            frame_start: clip.start_frame,
            frame_end: clip.start_frame + CLIP_LEN - 1,
        });
    }
    let index = DatasetIndex {
        height,
        width,
        ranges,
        colormap,
        split,
        clips: entries,
    };
    let path = dir.join("index.json");
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::to_writer_pretty(&mut f, &index)?;
    f.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
    Ok(index)
}

/// Lazily loaded clip dataset. Bathymetry is cached per region after the
/// first read.
pub struct ClipDataset {
    pub dir: PathBuf,
    pub index: DatasetIndex,
    bathy_cache: Mutex<HashMap<String, Planes>>,
}

impl ClipDataset {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let path = dir.join("index.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let index: DatasetIndex = serde_json::from_str(&text)?;
        Ok(ClipDataset {
            dir,
            index,
            bathy_cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn entry(&self, i: usize) -> &ClipEntry {
        &self.index.clips[i]
    }
}

impl ClipSource for ClipDataset {
    fn len(&self) -> usize {
        self.index.clips.len()
    }

    fn storm_id(&self, i: usize) -> &str {
        &self.index.clips[i].storm_id
    }

    fn load(&self, i: usize) -> Result<Cow<'_, Clip>> {
        let entry = self
            .index
            .clips
            .get(i)
            .ok_or_else(|| Error::invalid(format!("clip index {i} out of range")))?;
        let path = self.dir.join(&entry.file);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let cached = self.bathy_cache.lock().unwrap().get(&entry.region_id).cloned();
        let clip = decode_clip(&bytes, entry, cached.as_ref())?;
        if cached.is_none() {
            self.bathy_cache
                .lock()
                .unwrap()
                .insert(entry.region_id.clone(), clip.bathymetry.clone());
        }
        Ok(Cow::Owned(clip))
    }
}
