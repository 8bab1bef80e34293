//! Parametric stand-in assets for tests, demos and dry runs.
//!
//! A synthetic asset renders as a flat background whose hue rotates with the
//! camera azimuth, with a darker lobed blob in the centre whose silhouette
//! changes with the viewing angle. Every view has a closed-form mean hue:
//! background and blob share hue and saturation, so the average colour of a
//! frame has hue `base_hue + azimuth`.

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{write_manifest, write_ratings, AssetRecord, RatingRecord, KNOWN_GENERATORS};
use crate::error::{Error, Result};
use crate::projection::{render_orbit, CameraOrbit, Renderer};

const COLORS: [(&str, f64); 6] = [
    ("red", 0.0),
    ("yellow", 60.0),
    ("green", 120.0),
    ("cyan", 180.0),
    ("blue", 240.0),
    ("magenta", 300.0),
];
const OBJECTS: [&str; 8] = [
    "cube", "sphere", "teapot", "chair", "vase", "lamp", "boat", "robot",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticAsset {
    pub asset_id: String,
    pub prompt: String,
    pub generator: String,
    /// Hue at azimuth 0, degrees.
    pub base_hue: f64,
    pub saturation: f64,
    pub value: f64,
    /// Blob half-width over half-height at azimuth 0.
    pub aspect: f64,
    pub lobes: u32,
    /// Ground-truth (quality, authenticity, correspondence) on the 1..4 slider range.
    pub latent: [f64; 3],
}

pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = h.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    [r + m, g + m, b + m]
}

/// Hue in degrees of an RGB triple; 0 for greys.
pub fn rgb_hue(rgb: [f64; 3]) -> f64 {
    let [r, g, b] = rgb;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    if d <= 0.0 {
        return 0.0;
    }
    let h = if max == r {
        ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        (b - r) / d + 2.0
    } else {
        (r - g) / d + 4.0
    };
    60.0 * h
}

/// Hue of the mean colour of an image.
pub fn mean_hue(img: &RgbImage) -> f64 {
    let mut acc = [0.0f64; 3];
    for px in img.pixels() {
        for c in 0..3 {
            acc[c] += px.0[c] as f64;
        }
    }
    let n = (img.width() * img.height()) as f64;
    rgb_hue([acc[0] / n, acc[1] / n, acc[2] / n])
}

/// Smallest absolute difference between two angles in degrees.
pub fn hue_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

impl SyntheticAsset {
    pub fn hue_at(&self, azimuth_deg: f64) -> f64 {
        (self.base_hue + azimuth_deg).rem_euclid(360.0)
    }

    fn inside_blob(&self, azimuth_deg: f64, u: f64, v: f64) -> bool {
        let theta = azimuth_deg.to_radians();
        // apparent width shrinks as the long side turns away from the camera
        let half_w = 0.25 + 0.15 * self.aspect * theta.cos().abs();
        let half_h = 0.35;
        let r = ((u / half_w).powi(2) + (v / half_h).powi(2)).sqrt();
        let angle = v.atan2(u);
        let wobble = 0.12 * (self.lobes as f64 * angle + theta).sin();
        r < 1.0 + wobble
    }
}

impl Renderer for SyntheticAsset {
    fn render_view(
        &self,
        azimuth_deg: f64,
        _orbit: &CameraOrbit,
        (w, h): (u32, u32),
    ) -> std::result::Result<RgbImage, String> {
        let hue = self.hue_at(azimuth_deg);
        let to_px = |rgb: [f64; 3]| Rgb(rgb.map(|c| (c * 255.0).round().clamp(0.0, 255.0) as u8));
        let bg = to_px(hsv_to_rgb(hue, self.saturation, self.value));
        let fg = to_px(hsv_to_rgb(hue, self.saturation, self.value * 0.55));
        Ok(RgbImage::from_fn(w, h, |x, y| {
            let u = (x as f64 + 0.5) / w as f64 - 0.5;
            let v = (y as f64 + 0.5) / h as f64 - 0.5;
            if self.inside_blob(azimuth_deg, u, v) {
                fg
            } else {
                bg
            }
        }))
    }
}

/// Draws `n` assets with latent scores tied to their visual parameters:
/// quality follows brightness and saturation, authenticity follows the
/// smoothness of the silhouette, correspondence is high when the colour word
/// in the prompt matches the rendered hue.
pub fn synthetic_assets(n: usize, seed: u64) -> Vec<SyntheticAsset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let (color_name, color_hue) = COLORS[rng.random_range(0..COLORS.len())];
            let object = OBJECTS[rng.random_range(0..OBJECTS.len())];
            let matches = rng.random_bool(0.6);
            let base_hue = if matches {
                color_hue + rng.random_range(-10.0..10.0)
            } else {
                color_hue + rng.random_range(90.0..270.0)
            }
            .rem_euclid(360.0);
            let saturation = rng.random_range(0.35..0.95);
            let value = rng.random_range(0.4..0.95);
            let aspect = rng.random_range(0.0..1.0);
            let lobes = rng.random_range(2..9u32);

            let quality =
                1.0 + 3.0 * (0.6 * (value - 0.4) / 0.55 + 0.4 * (saturation - 0.35) / 0.6);
            let authenticity = 1.0 + 3.0 * (0.7 * (1.0 - (lobes - 2) as f64 / 6.0) + 0.3 * aspect);
            let hue_err = hue_distance(base_hue, color_hue) / 180.0;
            let correspondence = 1.0 + 3.0 * (1.0 - hue_err).powi(2);

            SyntheticAsset {
                asset_id: format!("syn{i:04}"),
                prompt: format!("a {color_name} {object}"),
                generator: KNOWN_GENERATORS[i % KNOWN_GENERATORS.len()].to_string(),
                base_hue,
                saturation,
                value,
                aspect,
                lobes,
                latent: [quality, authenticity, correspondence],
            }
        })
        .collect()
}

/// A scripted panel: subject `k` reports `a_k * latent + b_k + noise`,
/// snapped to the 0.1 slider grid and clipped to `[0, 5]`, with `noise`
/// drawn uniformly from `[-noise, noise]`.
pub fn scripted_ratings(
    assets: &[SyntheticAsset],
    n_subjects: usize,
    noise: f64,
    seed: u64,
) -> Vec<RatingRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let subjects: Vec<(f64, f64)> = (0..n_subjects)
        .map(|_| (rng.random_range(0.7..1.2), rng.random_range(-0.3..0.3)))
        .collect();
    let mut out = Vec::with_capacity(assets.len() * n_subjects);
    for (k, (gain, bias)) in subjects.iter().enumerate() {
        for (j, asset) in assets.iter().enumerate() {
            let scores = asset.latent.map(|t| {
                let raw = gain * (t - 2.5) + 2.5 + bias + rng.random_range(-noise..=noise);
                ((raw * 10.0).round() / 10.0).clamp(0.0, 5.0)
            });
            out.push(RatingRecord {
                subject_id: format!("subj{k:02}"),
                asset_id: asset.asset_id.clone(),
                scores,
                session: (j % 3) as u32 + 1,
            });
        }
    }
    out
}

pub struct SyntheticDataset {
    pub assets: Vec<SyntheticAsset>,
    pub manifest: Vec<AssetRecord>,
    pub ratings: Vec<RatingRecord>,
    pub manifest_path: PathBuf,
    pub ratings_path: PathBuf,
}

/// Renders a synthetic study into `dir`: one frame directory per asset under
/// `frames/`, `manifest.jsonl` and `ratings.csv`.
pub fn write_synthetic_dataset(
    dir: &Path,
    n_assets: usize,
    n_frames: usize,
    resolution: (u32, u32),
    n_subjects: usize,
    seed: u64,
) -> Result<SyntheticDataset> {
    if n_frames < 2 || n_frames % 2 != 0 {
        return Err(Error::Config(format!(
            "n_frames must be even and >= 2, got {n_frames}"
        )));
    }
    let assets = synthetic_assets(n_assets, seed);
    let frames_root = dir.join("frames");
    let mut manifest = Vec::with_capacity(n_assets);
    for asset in &assets {
        let clip = render_orbit(&asset.asset_id, asset, n_frames, resolution, 15.0, 2.5)?;
        let rel = PathBuf::from("frames").join(&asset.asset_id);
        let out = frames_root.join(&asset.asset_id);
        std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        for (k, frame) in clip.frames.iter().enumerate() {
            frame.save(out.join(format!("{k:04}.png")))?;
        }
        manifest.push(AssetRecord {
            asset_id: asset.asset_id.clone(),
            prompt: asset.prompt.clone(),
            generator: asset.generator.clone(),
            video_path: rel,
            frame_count: n_frames,
            width: resolution.0,
            height: resolution.1,
        });
    }
    let ratings = scripted_ratings(&assets, n_subjects, 0.2, seed);
    let manifest_path = dir.join("manifest.jsonl");
    let ratings_path = dir.join("ratings.csv");
    write_manifest(&manifest_path, &manifest)?;
    write_ratings(&ratings_path, &ratings)?;
    Ok(SyntheticDataset {
        assets,
        manifest,
        ratings,
        manifest_path,
        ratings_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hsv_round_trip_hue() {
        for h in [0.0, 33.0, 120.0, 200.0, 359.0] {
            let rgb = hsv_to_rgb(h, 0.8, 0.7);
            assert!(hue_distance(rgb_hue(rgb), h) < 1e-9, "{h}");
        }
    }

    #[test]
    fn orbit_frames_follow_closed_form_hue() {
        let asset = &synthetic_assets(3, 1)[2];
        let k_frames = 120;
        let clip = render_orbit(&asset.asset_id, asset, k_frames, (64, 64), 15.0, 2.5).unwrap();
        assert_eq!(clip.len(), k_frames);
        for (k, frame) in clip.frames.iter().enumerate() {
            let expected = asset.hue_at(360.0 * k as f64 / k_frames as f64);
            assert!(
                hue_distance(mean_hue(frame), expected) <= 3.6,
                "frame {k}: {} vs {expected}",
                mean_hue(frame)
            );
        }
    }

    #[test]
    fn two_frame_orbit_is_front_and_back() {
        let asset = &synthetic_assets(1, 4)[0];
        let clip = render_orbit("x", asset, 2, (16, 16), 15.0, 2.5).unwrap();
        assert_eq!(clip.orbit.azimuth_deg(0), 0.0);
        assert_eq!(clip.orbit.azimuth_deg(1), 180.0);
        assert!(hue_distance(mean_hue(&clip.frames[1]), asset.hue_at(180.0)) <= 3.6);
    }

    #[test]
    fn full_scale_render_request() {
        let asset = &synthetic_assets(1, 9)[0];
        let clip = render_orbit("x", asset, 120, (512, 512), 15.0, 2.5).unwrap();
        assert_eq!(clip.len(), 120);
        assert!(clip.frames.iter().all(|f| f.dimensions() == (512, 512)));
    }

    #[test]
    fn rendering_is_deterministic() {
        let a = synthetic_assets(2, 7);
        let b = synthetic_assets(2, 7);
        assert_eq!(a, b);
        let o = CameraOrbit::new(8);
        assert_eq!(
            a[1].render_view(45.0, &o, (20, 20)).unwrap(),
            b[1].render_view(45.0, &o, (20, 20)).unwrap()
        );
    }

    #[test]
    fn scripted_panel_is_on_grid() {
        let assets = synthetic_assets(10, 2);
        for r in scripted_ratings(&assets, 4, 0.2, 2) {
            for s in r.scores {
                assert!((0.0..=5.0).contains(&s));
                assert!(((s * 10.0).round() - s * 10.0).abs() < 1e-9);
            }
        }
    }
}
