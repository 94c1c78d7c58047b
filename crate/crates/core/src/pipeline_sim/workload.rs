//! Workload traces and the dataset-shaped presets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::container_index::{Codec, GopLayout, SyntheticVideoSpec};

use super::SimError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", deny_unknown_fields)]
pub enum VisualSpec {
    Image {
        images: usize,
        unit_patch_tokens: usize,
        unit_visual_tokens: usize,
        /// Seconds to decode and resize one image.
        decode_seconds: f64,
    },
    Video {
        video: SyntheticVideoSpec,
        /// Frames sampled per second of video, before the cap.
        sample_fps: f64,
        max_frames: usize,
        temporal_patch: usize,
        unit_patch_tokens: usize,
        unit_visual_tokens: usize,
    },
}

impl VisualSpec {
    /// Frames sampled from the video.
    pub fn sampled_frames(&self) -> usize {
        match self {
            VisualSpec::Image { .. } => 0,
            VisualSpec::Video {
                video,
                sample_fps,
                max_frames,
                ..
            } => {
                let seconds = video.num_frames as f64 / video.fps;
                ((seconds * sample_fps).floor() as usize)
                    .clamp(1, *max_frames)
                    .min(video.num_frames)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadItem {
    pub id: u64,
    pub arrival: f64,
    pub text_tokens: usize,
    pub output_tokens: usize,
    #[serde(default)]
    pub visual: Option<VisualSpec>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WorkloadTrace {
    pub items: Vec<WorkloadItem>,
}

impl WorkloadTrace {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        if self.items.windows(2).any(|w| w[1].arrival < w[0].arrival) {
            return bad("arrivals must be non-decreasing".into());
        }
        let mut ids: Vec<u64> = self.items.iter().map(|i| i.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return bad("request ids must be unique".into());
        }
        for it in &self.items {
            if !(it.arrival.is_finite() && it.arrival >= 0.0) {
                return bad(format!("request {}: bad arrival", it.id));
            }
            if it.output_tokens == 0 {
                return bad(format!("request {}: output_tokens must be >= 1", it.id));
            }
            match &it.visual {
                Some(VisualSpec::Video {
                    video,
                    temporal_patch,
                    max_frames,
                    sample_fps,
                    ..
                }) => {
                    video
                        .validate()
                        .map_err(|e| SimError::Config(format!("request {}: {e}", it.id)))?;
                    if *temporal_patch == 0 || *max_frames == 0 || !(*sample_fps > 0.0) {
                        return bad(format!("request {}: video sampling parameters must be positive", it.id));
                    }
                }
                Some(VisualSpec::Image {
                    images, decode_seconds, ..
                }) => {
                    if *images == 0 || !(*decode_seconds >= 0.0) {
                        return bad(format!("request {}: bad image spec", it.id));
                    }
                }
                None if it.text_tokens == 0 => return bad(format!("request {}: empty prompt", it.id)),
                None => {}
            }
        }
        Ok(())
    }

    /// One JSON object per line.
    pub fn from_json_lines(text: &str) -> Result<Self, SimError> {
        let mut items = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let item = serde_json::from_str(line).map_err(|e| SimError::Config(format!("line {}: {e}", n + 1)))?;
            items.push(item);
        }
        let trace = WorkloadTrace { items };
        trace.validate()?;
        Ok(trace)
    }

    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for it in &self.items {
            out.push_str(&serde_json::to_string(it).expect("workload items serialize"));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum ArrivalProcess {
    Poisson {
        rate: f64,
    },
    FixedRate {
        rate: f64,
    },
    /// Everything arrives at time zero.
    Burst,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PresetKind {
    Video,
    Image,
}

/// Statistics a synthetic workload is drawn from. Ranges are inclusive
/// `[min, max]` and sampled uniformly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Preset {
    pub name: String,
    pub kind: PresetKind,
    pub video_seconds: [f64; 2],
    pub fps: f64,
    pub gop_size: usize,
    pub codec: Codec,
    pub width: u32,
    pub height: u32,
    pub sample_fps: f64,
    pub max_frames: usize,
    pub temporal_patch: usize,
    pub images: [usize; 2],
    pub image_decode_seconds: f64,
    pub unit_patch_tokens: usize,
    pub unit_visual_tokens: usize,
    pub text_tokens: [usize; 2],
    pub output_tokens: [usize; 2],
    pub ttft_slo: f64,
    pub tbt_slo: f64,
    /// Whether the unified architecture decodes videos collaboratively.
    pub collaborative_decode: bool,
}

impl Default for Preset {
    fn default() -> Self {
        Preset::long_video()
    }
}

impl Preset {
    pub const NAMES: [&'static str; 3] = ["long-video", "short-video", "image"];

    /// 8 to 10 minute 720p H.264 videos.
    pub fn long_video() -> Self {
        Preset {
            name: "long-video".into(),
            kind: PresetKind::Video,
            video_seconds: [480.0, 600.0],
            fps: 30.0,
            gop_size: 30,
            codec: Codec::H264,
            width: 1280,
            height: 720,
            sample_fps: 2.0,
            max_frames: 768,
            temporal_patch: 2,
            images: [1, 1],
            image_decode_seconds: 0.0,
            unit_patch_tokens: 128,
            unit_visual_tokens: 32,
            text_tokens: [32, 128],
            output_tokens: [96, 256],
            ttft_slo: 80.0,
            tbt_slo: 0.7,
            collaborative_decode: true,
        }
    }

    /// 3 minute clips decoded without collaborative decoding.
    pub fn short_video() -> Self {
        Preset {
            name: "short-video".into(),
            video_seconds: [170.0, 190.0],
            ttft_slo: 80.0,
            tbt_slo: 0.6,
            collaborative_decode: false,
            ..Preset::long_video()
        }
    }

    /// Single 224x224 images.
    pub fn image() -> Self {
        Preset {
            name: "image".into(),
            kind: PresetKind::Image,
            images: [1, 2],
            image_decode_seconds: 0.004,
            text_tokens: [16, 96],
            output_tokens: [32, 128],
            ttft_slo: 0.25,
            tbt_slo: 0.05,
            collaborative_decode: false,
            ..Preset::long_video()
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "long-video" => Some(Self::long_video()),
            "short-video" => Some(Self::short_video()),
            "image" => Some(Self::image()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Config(format!("preset {}: {m}", self.name)));
        let ordered = |r: [usize; 2]| r[0] <= r[1];
        if !(self.video_seconds[0] > 0.0 && self.video_seconds[0] <= self.video_seconds[1]) {
            return bad("video_seconds must be a positive [min, max]");
        }
        if !ordered(self.images) || !ordered(self.text_tokens) || !ordered(self.output_tokens) {
            return bad("ranges must be [min, max]");
        }
        if self.output_tokens[0] == 0 || self.images[0] == 0 {
            return bad("output_tokens and images must be >= 1");
        }
        if self.gop_size == 0 || self.temporal_patch == 0 || self.max_frames == 0 {
            return bad("gop_size, temporal_patch and max_frames must be >= 1");
        }
        if !(self.fps > 0.0 && self.sample_fps > 0.0) {
            return bad("fps and sample_fps must be > 0");
        }
        if self.unit_patch_tokens == 0 || self.unit_patch_tokens < self.unit_visual_tokens {
            return bad("unit_patch_tokens must be >= max(1, unit_visual_tokens)");
        }
        if !(self.ttft_slo > 0.0 && self.tbt_slo > 0.0) {
            return bad("SLOs must be > 0");
        }
        Ok(())
    }

    fn draw_item(&self, id: u64, arrival: f64, rng: &mut ChaCha8Rng) -> WorkloadItem {
        let text_tokens = rng.gen_range(self.text_tokens[0]..=self.text_tokens[1]);
        let output_tokens = rng.gen_range(self.output_tokens[0]..=self.output_tokens[1]);
        let visual = match self.kind {
            PresetKind::Video => {
                let seconds = if self.video_seconds[0] < self.video_seconds[1] {
                    rng.gen_range(self.video_seconds[0]..=self.video_seconds[1])
                } else {
                    self.video_seconds[0]
                };
                VisualSpec::Video {
                    video: SyntheticVideoSpec {
                        num_frames: ((seconds * self.fps).round() as usize).max(1),
                        gop_size: GopLayout::Fixed(self.gop_size),
                        fps: self.fps,
                        codec: self.codec,
                        width: self.width,
                        height: self.height,
                    },
                    sample_fps: self.sample_fps,
                    max_frames: self.max_frames,
                    temporal_patch: self.temporal_patch,
                    unit_patch_tokens: self.unit_patch_tokens,
                    unit_visual_tokens: self.unit_visual_tokens,
                }
            }
            PresetKind::Image => VisualSpec::Image {
                images: rng.gen_range(self.images[0]..=self.images[1]),
                unit_patch_tokens: self.unit_patch_tokens,
                unit_visual_tokens: self.unit_visual_tokens,
                decode_seconds: self.image_decode_seconds,
            },
        };
        WorkloadItem {
            id,
            arrival,
            text_tokens,
            output_tokens,
            visual: Some(visual),
        }
    }

    /// `n` requests drawn from this preset with ids `0..n`.
    pub fn generate(&self, n: usize, arrivals: ArrivalProcess, seed: u64) -> Result<WorkloadTrace, SimError> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gap: Box<dyn Fn(&mut ChaCha8Rng) -> f64> = match arrivals {
            ArrivalProcess::Poisson { rate } => {
                if !(rate > 0.0 && rate.is_finite()) {
                    return Err(SimError::Config(format!("bad Poisson rate {rate}")));
                }
                let exp = Exp::new(rate).map_err(|_| SimError::Config(format!("bad Poisson rate {rate}")))?;
                Box::new(move |r| exp.sample(r))
            }
            ArrivalProcess::FixedRate { rate } => {
                if !(rate > 0.0 && rate.is_finite()) {
                    return Err(SimError::Config(format!("bad rate {rate}")));
                }
                Box::new(move |_| 1.0 / rate)
            }
            ArrivalProcess::Burst => Box::new(|_| 0.0),
        };
        let mut t = 0.0;
        let mut items = Vec::with_capacity(n);
        for id in 0..n as u64 {
            if id > 0 {
                t += gap(&mut rng);
            }
            items.push(self.draw_item(id, t, &mut rng));
        }
        Ok(WorkloadTrace { items })
    }
}
