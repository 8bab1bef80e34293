//! Orbit projection clips: rendering/ingestion, segment-based frame sampling,
//! front/back view selection and model preprocessing.
//!
//! Indices are 0-based throughout. The 1-based frame `P_1` of an orbit is
//! index 0 here and `P_{1+K/2}` is index `K/2`.

use std::ops::Range;
use std::path::{Path, PathBuf};
use std::process::Command;

use image::imageops::FilterType;
use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::AssetRecord;
use crate::error::{Error, Result};

pub const DEFAULT_SEGMENTS: usize = 12;
pub const DEFAULT_INPUT_SIZE: (u32, u32) = (224, 224);

/// Fixed-elevation circular camera path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraOrbit {
    pub n_steps: usize,
    pub elevation_deg: f64,
    /// Camera distance in units of the asset's bounding radius.
    pub radius: f64,
}

impl CameraOrbit {
    pub fn new(n_steps: usize) -> Self {
        CameraOrbit {
            n_steps,
            elevation_deg: 15.0,
            radius: 2.5,
        }
    }

    /// Azimuth of 0-based step `k`; steps are equally spaced over 360 degrees.
    pub fn azimuth_deg(&self, k: usize) -> f64 {
        360.0 * k as f64 / self.n_steps as f64
    }
}

#[derive(Debug, Clone)]
pub struct ProjectionClip {
    pub asset_id: String,
    pub frames: Vec<RgbImage>,
    pub fps: f64,
    pub orbit: CameraOrbit,
}

impl ProjectionClip {
    pub fn new(asset_id: impl Into<String>, frames: Vec<RgbImage>, fps: f64) -> Result<Self> {
        let asset_id = asset_id.into();
        let first = frames
            .first()
            .ok_or_else(|| Error::Validation(format!("clip for {asset_id} has no frames")))?;
        let dims = first.dimensions();
        if let Some(k) = frames.iter().position(|f| f.dimensions() != dims) {
            return Err(Error::Validation(format!(
                "clip for {asset_id}: frame {k} is {:?}, expected {:?}",
                frames[k].dimensions(),
                dims
            )));
        }
        let orbit = CameraOrbit::new(frames.len());
        Ok(ProjectionClip {
            asset_id,
            frames,
            fps,
            orbit,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn resolution(&self) -> (u32, u32) {
        self.frames[0].dimensions()
    }
}

/// Anything that can draw a view of an asset from a point on the orbit.
pub trait Renderer {
    fn render_view(
        &self,
        azimuth_deg: f64,
        orbit: &CameraOrbit,
        resolution: (u32, u32),
    ) -> std::result::Result<RgbImage, String>;
}

/// Renders `n_frames` equally spaced views over a full orbit.
pub fn render_orbit<R: Renderer + ?Sized>(
    asset_id: &str,
    renderer: &R,
    n_frames: usize,
    resolution: (u32, u32),
    elevation_deg: f64,
    radius: f64,
) -> Result<ProjectionClip> {
    if n_frames == 0 {
        return Err(Error::Config("n_frames must be positive".into()));
    }
    if resolution.0 == 0 || resolution.1 == 0 {
        return Err(Error::Config(format!(
            "zero-sized resolution {resolution:?}"
        )));
    }
    let orbit = CameraOrbit {
        n_steps: n_frames,
        elevation_deg,
        radius,
    };
    let frames = (0..n_frames)
        .map(|k| {
            renderer
                .render_view(orbit.azimuth_deg(k), &orbit, resolution)
                .map_err(|message| Error::Render { frame: k, message })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut clip = ProjectionClip::new(asset_id, frames, 30.0)?;
    clip.orbit = orbit;
    Ok(clip)
}

const IMAGE_EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "bmp"];

/// Loads the clip referenced by a manifest record. `video_path` is either a
/// directory of frame images (read in file-name order) or a video container
/// decoded through an `ffmpeg` executable on `PATH`. Relative paths resolve
/// against `base_dir`.
pub fn load_clip(asset: &AssetRecord, base_dir: &Path) -> Result<ProjectionClip> {
    let path = if asset.video_path.is_absolute() {
        asset.video_path.clone()
    } else {
        base_dir.join(&asset.video_path)
    };
    let frames = if path.is_dir() {
        read_frame_dir(&path)?
    } else {
        decode_with_ffmpeg(&path)?
    };
    if frames.len() != asset.frame_count {
        log::warn!(
            "{}: manifest lists {} frames, found {}",
            asset.asset_id,
            asset.frame_count,
            frames.len()
        );
    }
    // the released videos run 4 s
    let fps = frames.len() as f64 / 4.0;
    ProjectionClip::new(&asset.asset_id, frames, fps)
}

fn read_frame_dir(dir: &Path) -> Result<Vec<RgbImage>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    files.sort();
    files
        .iter()
        .map(|p| {
            image::open(p)
                .map(|img| img.to_rgb8())
                .map_err(|e| Error::Image(format!("{}: {e}", p.display())))
        })
        .collect()
}

fn decode_with_ffmpeg(video: &Path) -> Result<Vec<RgbImage>> {
    if !video.exists() {
        return Err(Error::io(
            video,
            std::io::Error::new(std::io::ErrorKind::NotFound, "video not found"),
        ));
    }
    let tmp = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
    let pattern = tmp.path().join("%06d.png");
    let status = Command::new("ffmpeg")
        .args(["-v", "error", "-nostdin", "-i"])
        .arg(video)
        .args(["-f", "image2"])
        .arg(&pattern)
        .status()
        .map_err(|e| {
            Error::Image(format!(
                "cannot decode {}: ffmpeg unavailable ({e}); extract frames to a directory instead",
                video.display()
            ))
        })?;
    if !status.success() {
        return Err(Error::Image(format!(
            "ffmpeg failed on {} ({status})",
            video.display()
        )));
    }
    read_frame_dir(tmp.path())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleMode {
    Train,
    Test,
}

impl std::str::FromStr for SampleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SampleMode::Train),
            "test" => Ok(SampleMode::Test),
            other => Err(Error::Config(format!("unknown sample mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameSample {
    pub mode: SampleMode,
    pub n_segments: usize,
    pub indices: Vec<usize>,
    pub crop_resize: (u32, u32),
}

/// Splits `n_frames` into `n_segments` contiguous ranges whose lengths differ
/// by at most one; the first `n_frames % n_segments` ranges are the longer ones.
pub fn segment_bounds(n_frames: usize, n_segments: usize) -> Result<Vec<Range<usize>>> {
    if n_segments == 0 {
        return Err(Error::Config("n_segments must be positive".into()));
    }
    if n_frames < n_segments {
        return Err(Error::InsufficientData(format!(
            "{n_frames} frames cannot fill {n_segments} segments"
        )));
    }
    let base = n_frames / n_segments;
    let extra = n_frames % n_segments;
    let mut start = 0;
    Ok((0..n_segments)
        .map(|i| {
            let len = base + usize::from(i < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect())
}

/// One index per segment: uniformly drawn in train mode, the segment's first
/// frame in test mode (where `seed` is ignored).
pub fn sample_indices(
    n_frames: usize,
    mode: SampleMode,
    n_segments: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    let segments = segment_bounds(n_frames, n_segments)?;
    Ok(match mode {
        SampleMode::Test => segments.iter().map(|r| r.start).collect(),
        SampleMode::Train => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            segments.into_iter().map(|r| rng.random_range(r)).collect()
        }
    })
}

pub fn sample_frames(
    clip: &ProjectionClip,
    mode: SampleMode,
    n_segments: usize,
    seed: u64,
) -> Result<FrameSample> {
    Ok(FrameSample {
        mode,
        n_segments,
        indices: sample_indices(clip.len(), mode, n_segments, seed)?,
        crop_resize: DEFAULT_INPUT_SIZE,
    })
}

/// 0-based indices of the front (`P_1`) and back (`P_{1+K/2}`) views.
pub fn front_back_indices(n_frames: usize) -> Result<(usize, usize)> {
    if n_frames < 2 || n_frames % 2 != 0 {
        return Err(Error::Validation(format!(
            "front/back pairing needs an even frame count, got {n_frames}"
        )));
    }
    Ok((0, n_frames / 2))
}

pub fn front_back_frames(clip: &ProjectionClip) -> Result<(&RgbImage, &RgbImage)> {
    let (f, b) = front_back_indices(clip.len())?;
    Ok((&clip.frames[f], &clip.frames[b]))
}

/// Resize target and per-channel normalization applied before the encoders.
/// Pixel values are scaled to `[0, 1]` and then standardized with `mean`/`std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub width: u32,
    pub height: u32,
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        // ImageNet statistics, as used by the transformer backbones
        PreprocessConfig {
            width: DEFAULT_INPUT_SIZE.0,
            height: DEFAULT_INPUT_SIZE.1,
            mean: [0.485, 0.456, 0.406],
            std: [0.229, 0.224, 0.225],
        }
    }
}

/// Channel-major (CHW) float image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    pub height: u32,
    pub width: u32,
    pub data: Vec<f32>,
}

impl ImageTensor {
    pub const CHANNELS: usize = 3;

    pub fn channel(&self, c: usize) -> &[f32] {
        let plane = (self.height * self.width) as usize;
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn at(&self, c: usize, y: u32, x: u32) -> f32 {
        self.channel(c)[(y * self.width + x) as usize]
    }
}

pub fn preprocess_image(img: &RgbImage, cfg: &PreprocessConfig) -> Result<ImageTensor> {
    let (w, h) = img.dimensions();
    if w == 0 || h == 0 {
        return Err(Error::Image("zero-sized image".into()));
    }
    if cfg.width == 0 || cfg.height == 0 {
        return Err(Error::Config("zero-sized preprocessing target".into()));
    }
    let resized;
    let src = if (w, h) == (cfg.width, cfg.height) {
        img
    } else {
        // Triangle is bilinear interpolation
        resized = image::imageops::resize(img, cfg.width, cfg.height, FilterType::Triangle);
        &resized
    };
    let plane = (cfg.width * cfg.height) as usize;
    let mut data = vec![0f32; 3 * plane];
    for (i, px) in src.pixels().enumerate() {
        for c in 0..3 {
            data[c * plane + i] = (px.0[c] as f32 / 255.0 - cfg.mean[c]) / cfg.std[c];
        }
    }
    Ok(ImageTensor {
        height: cfg.height,
        width: cfg.width,
        data,
    })
}

pub fn preprocess(images: &[&RgbImage], cfg: &PreprocessConfig) -> Result<Vec<ImageTensor>> {
    if images.is_empty() {
        return Err(Error::InsufficientData("no images to preprocess".into()));
    }
    images
        .iter()
        .map(|img| preprocess_image(img, cfg))
        .collect()
}

/// Writes the sampled frames of a clip as PNG files `NN_fIIII.png` into `dir`.
pub fn export_frames(
    clip: &ProjectionClip,
    sample: &FrameSample,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    sample
        .indices
        .iter()
        .enumerate()
        .map(|(seg, &idx)| {
            let path = dir.join(format!("{seg:02}_f{idx:04}.png"));
            clip.frames[idx].save(&path)?;
            Ok(path)
        })
        .collect()
}
