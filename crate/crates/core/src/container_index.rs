//! Container metadata indexing.
//!
//! Reads the `moov` sample tables of an ISO-BMFF (MP4) file into a
//! [`VideoMeta`] without touching any `mdat` payload, and builds synthetic
//! [`VideoMeta`] values for simulation-only runs.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Upper bound on the number of samples accepted from a sample table.
/// Counts beyond this are treated as corrupt rather than allocated.
const MAX_SAMPLES: u64 = 1 << 26;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ContainerError {
    #[error("malformed `{box_type}` box: {reason}")]
    MalformedBox { box_type: String, reason: String },
    #[error("no video track found")]
    NoVideoTrack,
    #[error("unsupported feature: {0}")]
    UnsupportedFeature(String),
    #[error("invalid video metadata: {0}")]
    InvalidMeta(String),
    #[error("invalid synthetic video spec: {0}")]
    InvalidSpec(String),
}

fn malformed(box_type: FourCc, reason: impl Into<String>) -> ContainerError {
    ContainerError::MalformedBox {
        box_type: box_type.to_string(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Codec {
    H264,
    H265,
    Vp9,
    Other,
}

impl Codec {
    fn from_sample_entry(format: FourCc) -> Self {
        match &format.0 {
            b"avc1" | b"avc2" | b"avc3" | b"avc4" => Codec::H264,
            b"hvc1" | b"hev1" => Codec::H265,
            b"vp09" => Codec::Vp9,
            _ => Codec::Other,
        }
    }
}

/// Coarse resolution bucket used by the decode cost model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResolutionClass {
    /// Up to 480 lines.
    Sd,
    /// Up to 720 lines.
    Hd,
    /// Up to 1080 lines.
    FullHd,
    /// Anything larger.
    Uhd,
}

impl ResolutionClass {
    pub fn of(width: u32, height: u32) -> Self {
        // classify on the short side so portrait video lands in the same bucket
        let lines = width.min(height);
        match lines {
            0..=480 => ResolutionClass::Sd,
            481..=720 => ResolutionClass::Hd,
            721..=1080 => ResolutionClass::FullHd,
            _ => ResolutionClass::Uhd,
        }
    }
}

/// Frame timeline and GOP structure of one video.
///
/// Frames are indexed in presentation order. GOP `g` covers the frame range
/// `keyframe_indices[g]..keyframe_indices[g + 1]` (the last GOP runs to the
/// end of the video).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoMeta {
    pub codec: Codec,
    /// Ticks per second.
    pub timescale: u32,
    /// Presentation timestamps in ticks, strictly increasing.
    pub frame_pts: Vec<i64>,
    pub keyframe_indices: Vec<usize>,
    pub width: u32,
    pub height: u32,
    /// Seconds.
    pub duration: f64,
}

impl VideoMeta {
    pub fn frame_count(&self) -> usize {
        self.frame_pts.len()
    }

    pub fn gop_count(&self) -> usize {
        self.keyframe_indices.len()
    }

    pub fn resolution_class(&self) -> ResolutionClass {
        ResolutionClass::of(self.width, self.height)
    }

    /// Frame range of GOP `gop`.
    pub fn gop_range(&self, gop: usize) -> Range<usize> {
        let start = self.keyframe_indices[gop];
        let end = self
            .keyframe_indices
            .get(gop + 1)
            .copied()
            .unwrap_or(self.frame_count());
        start..end
    }

    pub fn gops(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        (0..self.gop_count()).map(|g| self.gop_range(g))
    }

    pub fn gop_sizes(&self) -> Vec<usize> {
        self.gops().map(|r| r.len()).collect()
    }

    /// Index of the GOP containing `frame`.
    pub fn gop_of(&self, frame: usize) -> usize {
        debug_assert!(frame < self.frame_count());
        self.keyframe_indices.partition_point(|&k| k <= frame) - 1
    }

    /// Presentation time of `frame` in seconds, relative to the first frame.
    pub fn frame_time(&self, frame: usize) -> f64 {
        (self.frame_pts[frame] - self.frame_pts[0]) as f64 / self.timescale as f64
    }

    /// Average source frame rate.
    pub fn fps(&self) -> f64 {
        if self.duration > 0.0 {
            self.frame_count() as f64 / self.duration
        } else {
            0.0
        }
    }

    pub fn validate(&self) -> Result<(), ContainerError> {
        let invalid = |m: &str| Err(ContainerError::InvalidMeta(m.to_string()));
        if self.frame_pts.is_empty() {
            return invalid("no frames");
        }
        if self.timescale == 0 {
            return invalid("timescale is zero");
        }
        if self.frame_pts.windows(2).any(|w| w[0] >= w[1]) {
            return invalid("frame_pts not strictly increasing");
        }
        if self.keyframe_indices.first() != Some(&0) {
            return invalid("keyframe_indices must begin with 0");
        }
        if self.keyframe_indices.windows(2).any(|w| w[0] >= w[1]) {
            return invalid("keyframe_indices not strictly increasing");
        }
        if self.keyframe_indices.last().copied().unwrap_or(0) >= self.frame_count() {
            return invalid("keyframe index out of range");
        }
        if !self.duration.is_finite() || self.duration < 0.0 {
            return invalid("duration must be finite and non-negative");
        }
        Ok(())
    }
}

/// GOP layout of a synthetic video: one fixed size, or a list of sizes that
/// repeats cyclically until all frames are placed (the final GOP may be cut
/// short).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GopLayout {
    Fixed(usize),
    PerGop(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticVideoSpec {
    pub num_frames: usize,
    pub gop_size: GopLayout,
    pub fps: f64,
    pub codec: Codec,
    pub width: u32,
    pub height: u32,
}

impl SyntheticVideoSpec {
    pub fn validate(&self) -> Result<(), ContainerError> {
        let invalid = |m: &str| Err(ContainerError::InvalidSpec(m.to_string()));
        if self.num_frames == 0 {
            return invalid("num_frames must be >= 1");
        }
        match &self.gop_size {
            GopLayout::Fixed(0) => return invalid("gop_size must be >= 1"),
            GopLayout::PerGop(sizes) if sizes.is_empty() => return invalid("per-GOP size list is empty"),
            GopLayout::PerGop(sizes) if sizes.contains(&0) => return invalid("every GOP size must be >= 1"),
            _ => {}
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return invalid("fps must be positive");
        }
        if (self.fps * 1000.0).round() > u32::MAX as f64 {
            return invalid("fps too large");
        }
        Ok(())
    }
}

/// Builds the [`VideoMeta`] described by `spec`.
///
/// The timescale is `round(fps * 1000)` so every frame lands exactly on
/// `i * 1000` ticks.
pub fn synthesize_meta(spec: &SyntheticVideoSpec) -> Result<VideoMeta, ContainerError> {
    spec.validate()?;
    let timescale = (spec.fps * 1000.0).round() as u32;
    let frame_pts = (0..spec.num_frames as i64).map(|i| i * 1000).collect();

    let sizes: &[usize] = match &spec.gop_size {
        GopLayout::Fixed(n) => std::slice::from_ref(n),
        GopLayout::PerGop(list) => list,
    };
    let mut keyframe_indices = Vec::new();
    let mut start = 0;
    for &size in sizes.iter().cycle() {
        if start >= spec.num_frames {
            break;
        }
        keyframe_indices.push(start);
        start += size;
    }

    Ok(VideoMeta {
        codec: spec.codec,
        timescale,
        frame_pts,
        keyframe_indices,
        width: spec.width,
        height: spec.height,
        duration: spec.num_frames as f64 / spec.fps,
    })
}

/// Four-character box type.
#[derive(Clone, Copy, PartialEq, Eq)]
struct FourCc([u8; 4]);

impl FourCc {
    const fn new(s: &[u8; 4]) -> Self {
        FourCc(*s)
    }
}

impl std::fmt::Display for FourCc {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for &b in &self.0 {
            let c = if b.is_ascii_graphic() || b == b' ' {
                b as char
            } else {
                '?'
            };
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

impl std::fmt::Debug for FourCc {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "FourCc({self})")
    }
}

const FILE: FourCc = FourCc::new(b"file");
const MOOV: FourCc = FourCc::new(b"moov");
const MOOF: FourCc = FourCc::new(b"moof");
const MVEX: FourCc = FourCc::new(b"mvex");
const TRAK: FourCc = FourCc::new(b"trak");
const EDTS: FourCc = FourCc::new(b"edts");
const ELST: FourCc = FourCc::new(b"elst");
const MDIA: FourCc = FourCc::new(b"mdia");
const MDHD: FourCc = FourCc::new(b"mdhd");
const HDLR: FourCc = FourCc::new(b"hdlr");
const MINF: FourCc = FourCc::new(b"minf");
const STBL: FourCc = FourCc::new(b"stbl");
const STSD: FourCc = FourCc::new(b"stsd");
const STTS: FourCc = FourCc::new(b"stts");
const CTTS: FourCc = FourCc::new(b"ctts");
const STSS: FourCc = FourCc::new(b"stss");
const STSZ: FourCc = FourCc::new(b"stsz");
const STZ2: FourCc = FourCc::new(b"stz2");
const VIDE: FourCc = FourCc::new(b"vide");

/// Bounds-checked big-endian reader over one box body.
struct Reader<'a> {
    box_type: FourCc,
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(box_type: FourCc, data: &'a [u8]) -> Self {
        Reader { box_type, data, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], ContainerError> {
        if self.remaining() < n {
            return Err(malformed(
                self.box_type,
                format!(
                    "needs {n} more bytes at offset {}, box body is {} bytes",
                    self.pos,
                    self.data.len()
                ),
            ));
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn skip(&mut self, n: usize) -> Result<(), ContainerError> {
        self.take(n).map(|_| ())
    }

    fn u8(&mut self) -> Result<u8, ContainerError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, ContainerError> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, ContainerError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64, ContainerError> {
        let b = self.take(8)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(u64::from_be_bytes(a))
    }

    fn fourcc(&mut self) -> Result<FourCc, ContainerError> {
        let b = self.take(4)?;
        Ok(FourCc([b[0], b[1], b[2], b[3]]))
    }

    /// Version byte followed by 24 bits of flags.
    fn full_box_header(&mut self) -> Result<u8, ContainerError> {
        let version = self.u8()?;
        self.skip(3)?;
        Ok(version)
    }

    /// Reads an entry count and checks that `count * entry_size` bytes remain.
    fn entry_count(&mut self, entry_size: usize) -> Result<usize, ContainerError> {
        let count = self.u32()? as usize;
        match count.checked_mul(entry_size) {
            Some(bytes) if bytes <= self.remaining() => Ok(count),
            _ => Err(malformed(
                self.box_type,
                format!("entry count {count} exceeds box size"),
            )),
        }
    }
}

struct RawBox<'a> {
    box_type: FourCc,
    body: &'a [u8],
}

/// Iterates the boxes packed in `data`, the body of `parent`.
struct BoxIter<'a> {
    parent: FourCc,
    data: &'a [u8],
    pos: usize,
}

fn children(parent: FourCc, data: &[u8]) -> BoxIter<'_> {
    BoxIter { parent, data, pos: 0 }
}

impl<'a> Iterator for BoxIter<'a> {
    type Item = Result<RawBox<'a>, ContainerError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.data.len() {
            return None;
        }
        Some(self.read_one())
    }
}

impl<'a> BoxIter<'a> {
    fn read_one(&mut self) -> Result<RawBox<'a>, ContainerError> {
        let rest = &self.data[self.pos..];
        let mut r = Reader::new(self.parent, rest);
        let size = r.u32().map_err(|_| truncated_header(self.parent, rest.len()))?;
        let box_type = r.fourcc().map_err(|_| truncated_header(self.parent, rest.len()))?;
        let (header, total) = match size {
            0 => (8, rest.len() as u64),
            1 => {
                let large = r.u64().map_err(|_| malformed(box_type, "truncated 64-bit size"))?;
                (16, large)
            }
            n => (8, n as u64),
        };
        if total < header as u64 {
            // the iterator is poisoned: stop after reporting
            self.pos = self.data.len();
            return Err(malformed(
                box_type,
                format!("declared size {total} smaller than header"),
            ));
        }
        if total > rest.len() as u64 {
            self.pos = self.data.len();
            return Err(malformed(
                box_type,
                format!(
                    "declared size {total} exceeds the {} bytes available in `{}`",
                    rest.len(),
                    self.parent
                ),
            ));
        }
        let total = total as usize;
        self.pos += total;
        Ok(RawBox {
            box_type,
            body: &rest[header..total],
        })
    }
}

fn truncated_header(parent: FourCc, available: usize) -> ContainerError {
    malformed(parent, format!("truncated box header ({available} trailing bytes)"))
}

/// Finds the first child of type `wanted`.
fn find_child(parent: FourCc, data: &[u8], wanted: FourCc) -> Result<Option<&[u8]>, ContainerError> {
    for b in children(parent, data) {
        let b = b?;
        if b.box_type == wanted {
            return Ok(Some(b.body));
        }
    }
    Ok(None)
}

fn require_child(parent: FourCc, data: &[u8], wanted: FourCc) -> Result<&[u8], ContainerError> {
    find_child(parent, data, wanted)?.ok_or_else(|| malformed(parent, format!("missing required `{wanted}` box")))
}

/// Parses the metadata of the first video track in an ISO-BMFF file.
pub fn parse_container(bytes: &[u8]) -> Result<VideoMeta, ContainerError> {
    let mut moov = None;
    for b in children(FILE, bytes) {
        let b = b?;
        if b.box_type == MOOF {
            return Err(ContainerError::UnsupportedFeature("fragmented MP4 (moof)".into()));
        }
        if b.box_type == MOOV && moov.is_none() {
            moov = Some(b.body);
        }
    }
    let moov = moov.ok_or_else(|| malformed(FILE, "missing `moov` box"))?;

    let mut video_trak = None;
    for b in children(MOOV, moov) {
        let b = b?;
        if b.box_type == MVEX {
            return Err(ContainerError::UnsupportedFeature("fragmented MP4 (mvex)".into()));
        }
        if b.box_type == TRAK && video_trak.is_none() && is_video_track(b.body)? {
            video_trak = Some(b.body);
        }
    }
    parse_video_track(video_trak.ok_or(ContainerError::NoVideoTrack)?)
}

fn is_video_track(trak: &[u8]) -> Result<bool, ContainerError> {
    let Some(mdia) = find_child(TRAK, trak, MDIA)? else {
        return Ok(false);
    };
    let Some(hdlr) = find_child(MDIA, mdia, HDLR)? else {
        return Ok(false);
    };
    let mut r = Reader::new(HDLR, hdlr);
    r.full_box_header()?;
    r.skip(4)?;
    Ok(r.fourcc()? == VIDE)
}

struct MediaHeader {
    timescale: u32,
    duration: u64,
}

fn parse_mdhd(body: &[u8]) -> Result<MediaHeader, ContainerError> {
    let mut r = Reader::new(MDHD, body);
    let version = r.full_box_header()?;
    let (timescale, duration) = match version {
        0 => {
            r.skip(8)?;
            let ts = r.u32()?;
            (ts, r.u32()? as u64)
        }
        1 => {
            r.skip(16)?;
            let ts = r.u32()?;
            (ts, r.u64()?)
        }
        v => return Err(malformed(MDHD, format!("unknown version {v}"))),
    };
    if timescale == 0 {
        return Err(malformed(MDHD, "timescale is zero"));
    }
    Ok(MediaHeader { timescale, duration })
}

/// Media time of the first non-empty edit, if any.
fn parse_elst_shift(body: &[u8]) -> Result<i64, ContainerError> {
    let mut r = Reader::new(ELST, body);
    let version = r.full_box_header()?;
    let entry_size = if version == 1 { 20 } else { 12 };
    let count = r.entry_count(entry_size)?;
    for _ in 0..count {
        let media_time = if version == 1 {
            r.skip(8)?;
            r.u64()? as i64
        } else {
            r.skip(4)?;
            r.u32()? as i32 as i64
        };
        r.skip(4)?;
        if media_time >= 0 {
            return Ok(media_time);
        }
    }
    Ok(0)
}

struct SampleEntry {
    codec: Codec,
    width: u32,
    height: u32,
}

fn parse_stsd(body: &[u8]) -> Result<SampleEntry, ContainerError> {
    let mut r = Reader::new(STSD, body);
    r.full_box_header()?;
    let count = r.u32()?;
    if count == 0 {
        return Err(malformed(STSD, "no sample entries"));
    }
    let entry = children(STSD, &body[r.pos..])
        .next()
        .ok_or_else(|| malformed(STSD, "no sample entries"))??;
    let mut e = Reader::new(entry.box_type, entry.body);
    // SampleEntry: reserved(6) data_reference_index(2)
    // VisualSampleEntry: pre_defined(2) reserved(2) pre_defined(12) width(2) height(2)
    e.skip(6 + 2 + 2 + 2 + 12)?;
    let width = e.u16()? as u32;
    let height = e.u16()? as u32;
    Ok(SampleEntry {
        codec: Codec::from_sample_entry(entry.box_type),
        width,
        height,
    })
}

fn parse_stts(body: &[u8]) -> Result<Vec<(u32, u32)>, ContainerError> {
    let mut r = Reader::new(STTS, body);
    r.full_box_header()?;
    let count = r.entry_count(8)?;
    (0..count).map(|_| Ok((r.u32()?, r.u32()?))).collect()
}

fn parse_ctts(body: &[u8]) -> Result<Vec<(u32, i64)>, ContainerError> {
    let mut r = Reader::new(CTTS, body);
    let version = r.full_box_header()?;
    let count = r.entry_count(8)?;
    (0..count)
        .map(|_| {
            let n = r.u32()?;
            let raw = r.u32()?;
            let offset = if version == 0 { raw as i64 } else { raw as i32 as i64 };
            Ok((n, offset))
        })
        .collect()
}

fn parse_stss(body: &[u8]) -> Result<Vec<u32>, ContainerError> {
    let mut r = Reader::new(STSS, body);
    r.full_box_header()?;
    let count = r.entry_count(4)?;
    (0..count).map(|_| r.u32()).collect()
}

fn parse_sample_count(stbl: &[u8]) -> Result<u64, ContainerError> {
    if let Some(body) = find_child(STBL, stbl, STSZ)? {
        let mut r = Reader::new(STSZ, body);
        r.full_box_header()?;
        let sample_size = r.u32()?;
        let count = r.u32()? as u64;
        if sample_size == 0 && count.saturating_mul(4) > r.remaining() as u64 {
            return Err(malformed(STSZ, format!("sample count {count} exceeds box size")));
        }
        return Ok(count);
    }
    if let Some(body) = find_child(STBL, stbl, STZ2)? {
        let mut r = Reader::new(STZ2, body);
        r.full_box_header()?;
        r.skip(3)?;
        let field_size = r.u8()? as u64;
        if !matches!(field_size, 4 | 8 | 16) {
            return Err(malformed(STZ2, format!("invalid field size {field_size}")));
        }
        let count = r.u32()? as u64;
        if (count * field_size).div_ceil(8) > r.remaining() as u64 {
            return Err(malformed(STZ2, format!("sample count {count} exceeds box size")));
        }
        return Ok(count);
    }
    Err(malformed(STBL, "missing `stsz`/`stz2` box"))
}

/// Expands run-length `(count, value)` entries to exactly `total` values.
fn expand_runs<T: Copy>(box_type: FourCc, runs: &[(u32, T)], total: usize) -> Result<Vec<T>, ContainerError> {
    let sum: u64 = runs.iter().map(|&(n, _)| n as u64).sum();
    if sum != total as u64 {
        return Err(malformed(
            box_type,
            format!("entries cover {sum} samples, track has {total}"),
        ));
    }
    let mut out = Vec::with_capacity(total);
    for &(n, v) in runs {
        out.extend(std::iter::repeat_n(v, n as usize));
    }
    Ok(out)
}

fn parse_video_track(trak: &[u8]) -> Result<VideoMeta, ContainerError> {
    let mdia = require_child(TRAK, trak, MDIA)?;
    let mdhd = parse_mdhd(require_child(MDIA, mdia, MDHD)?)?;
    let shift = match find_child(TRAK, trak, EDTS)? {
        Some(edts) => match find_child(EDTS, edts, ELST)? {
            Some(elst) => parse_elst_shift(elst)?,
            None => 0,
        },
        None => 0,
    };
    let minf = require_child(MDIA, mdia, MINF)?;
    let stbl = require_child(MINF, minf, STBL)?;
    let entry = parse_stsd(require_child(STBL, stbl, STSD)?)?;

    let count = parse_sample_count(stbl)?;
    if count == 0 {
        return Err(malformed(STSZ, "track has no samples"));
    }
    if count > MAX_SAMPLES {
        return Err(malformed(STSZ, format!("sample count {count} above supported maximum")));
    }
    let count = count as usize;

    let deltas = expand_runs(STTS, &parse_stts(require_child(STBL, stbl, STTS)?)?, count)?;
    let offsets = match find_child(STBL, stbl, CTTS)? {
        Some(body) => expand_runs(CTTS, &parse_ctts(body)?, count)?,
        None => vec![0; count],
    };

    let mut decode_pts = Vec::with_capacity(count);
    let mut dts: i64 = 0;
    for (delta, offset) in deltas.iter().zip(&offsets) {
        let pts = dts
            .checked_add(*offset)
            .and_then(|p| p.checked_sub(shift))
            .ok_or_else(|| malformed(CTTS, "timestamp overflow"))?;
        decode_pts.push(pts);
        dts = dts
            .checked_add(*delta as i64)
            .ok_or_else(|| malformed(STTS, "timestamp overflow"))?;
    }

    // presentation order: order[p] = decode index of the p-th presented frame
    let mut order: Vec<usize> = (0..count).collect();
    order.sort_by_key(|&i| decode_pts[i]);
    let frame_pts: Vec<i64> = order.iter().map(|&i| decode_pts[i]).collect();
    if frame_pts.windows(2).any(|w| w[0] == w[1]) {
        return Err(malformed(CTTS, "duplicate presentation timestamps"));
    }
    let mut presentation_index = vec![0usize; count];
    for (p, &d) in order.iter().enumerate() {
        presentation_index[d] = p;
    }

    let keyframe_indices = match find_child(STBL, stbl, STSS)? {
        None => (0..count).collect(),
        Some(body) => {
            let sync = parse_stss(body)?;
            if sync.is_empty() {
                return Err(ContainerError::UnsupportedFeature(
                    "track declares no sync samples".into(),
                ));
            }
            let mut keys = Vec::with_capacity(sync.len());
            let mut prev = 0u32;
            for &s in &sync {
                if s == 0 || s as usize > count || s <= prev {
                    return Err(malformed(
                        STSS,
                        format!("sync sample {s} out of order or outside 1..={count}"),
                    ));
                }
                prev = s;
                keys.push(presentation_index[s as usize - 1]);
            }
            keys.sort_unstable();
            keys
        }
    };
    if keyframe_indices[0] != 0 {
        return Err(ContainerError::UnsupportedFeature(
            "first presented frame is not a sync sample (open GOP)".into(),
        ));
    }

    let duration = if mdhd.duration > 0 {
        mdhd.duration as f64 / mdhd.timescale as f64
    } else {
        // end of the last frame in presentation order
        let last = order[count - 1];
        (frame_pts[count - 1] - frame_pts[0] + deltas[last] as i64) as f64 / mdhd.timescale as f64
    };

    let meta = VideoMeta {
        codec: entry.codec,
        timescale: mdhd.timescale,
        frame_pts,
        keyframe_indices,
        width: entry.width,
        height: entry.height,
        duration,
    };
    meta.validate()?;
    Ok(meta)
}
