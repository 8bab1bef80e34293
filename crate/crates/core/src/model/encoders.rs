//! The small "tiny-test" backbones.
//!
//! Every visual branch starts from the same parameter-free frame stem:
//! adaptive average pooling of each normalized channel onto a `g x g` grid,
//! plus the mean absolute horizontal and vertical gradient per channel. The
//! trainable layers sit on top of the stem, so stems can be computed once per
//! frame and reused across epochs.

use serde::{Deserialize, Serialize};

use super::nn::{relu, relu_backward, Linear, Mlp, MlpCache};
use crate::projection::ImageTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameStem {
    pub grid: usize,
}

impl FrameStem {
    pub fn out_dim(&self) -> usize {
        3 * self.grid * self.grid + 6
    }

    pub fn embed(&self, img: &ImageTensor) -> Vec<f64> {
        let g = self.grid;
        let (h, w) = (img.height as usize, img.width as usize);
        let mut out = Vec::with_capacity(self.out_dim());
        for c in 0..3 {
            let plane = img.channel(c);
            for gy in 0..g {
                let (y0, y1) = (gy * h / g, ((gy + 1) * h / g).max(gy * h / g + 1).min(h));
                for gx in 0..g {
                    let (x0, x1) = (gx * w / g, ((gx + 1) * w / g).max(gx * w / g + 1).min(w));
                    let mut acc = 0.0f64;
                    for y in y0..y1 {
                        acc += plane[y * w + x0..y * w + x1]
                            .iter()
                            .map(|&v| v as f64)
                            .sum::<f64>();
                    }
                    out.push(acc / ((y1 - y0) * (x1 - x0)) as f64);
                }
            }
        }
        for c in 0..3 {
            let plane = img.channel(c);
            let mut dx = 0.0f64;
            let mut dy = 0.0f64;
            for y in 0..h {
                for x in 0..w {
                    let v = plane[y * w + x] as f64;
                    if x + 1 < w {
                        dx += (plane[y * w + x + 1] as f64 - v).abs();
                    }
                    if y + 1 < h {
                        dy += (plane[(y + 1) * w + x] as f64 - v).abs();
                    }
                }
            }
            out.push(dx / (h * w.saturating_sub(1)).max(1) as f64);
            out.push(dy / (h.saturating_sub(1) * w).max(1) as f64);
        }
        out
    }
}

pub const TEXT_FEATURE_DIM: usize = 128;

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Lower-cased alphanumeric word tokens.
pub fn tokenize(prompt: &str) -> Vec<String> {
    prompt
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Signed feature hashing of word tokens and their character trigrams,
/// L2-normalized.
pub fn hashed_text_features(tokens: &[String]) -> Vec<f64> {
    let mut v = vec![0.0; TEXT_FEATURE_DIM];
    let mut add = |key: &[u8], weight: f64| {
        let h = fnv1a(key);
        let bucket = (h % TEXT_FEATURE_DIM as u64) as usize;
        let sign = if (h >> 63) == 0 { 1.0 } else { -1.0 };
        v[bucket] += sign * weight;
    };
    for tok in tokens {
        add(tok.as_bytes(), 1.0);
        let padded: Vec<u8> = [b"^", tok.as_bytes(), b"$"].concat();
        for tri in padded.windows(3) {
            add(tri, 0.5);
        }
    }
    l2_normalize(&mut v);
    v
}

pub fn l2_normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Shared per-frame projection followed by a temporal layer over the
/// concatenated frame features, so frame order matters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeEncoder {
    pub n_frames: usize,
    pub frame_proj: Linear,
    pub temporal: Linear,
}

#[derive(Debug, Clone)]
pub struct ShapeCache {
    frames: Vec<Vec<f64>>,
    frame_pre: Vec<Vec<f64>>,
    concat: Vec<f64>,
}

impl ShapeEncoder {
    pub fn new(stem_dim: usize, hidden: usize, n_frames: usize, out_dim: usize, seed: u64) -> Self {
        ShapeEncoder {
            n_frames,
            frame_proj: Linear::new(stem_dim, hidden, seed),
            temporal: Linear::new(hidden * n_frames, out_dim, seed.wrapping_add(1)),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.temporal.out_dim
    }

    pub fn forward_cached(&self, frames: &[Vec<f64>]) -> (Vec<f64>, ShapeCache) {
        let frame_pre: Vec<Vec<f64>> = frames.iter().map(|f| self.frame_proj.forward(f)).collect();
        let concat: Vec<f64> = frame_pre.iter().flat_map(|p| relu(p)).collect();
        let out = self.temporal.forward(&concat);
        (
            out,
            ShapeCache {
                frames: frames.to_vec(),
                frame_pre,
                concat,
            },
        )
    }

    pub fn backward(&mut self, cache: &ShapeCache, grad: &[f64]) {
        let g_concat = self.temporal.backward(&cache.concat, grad);
        let h = self.frame_proj.out_dim;
        for (t, frame) in cache.frames.iter().enumerate() {
            let g = relu_backward(&cache.frame_pre[t], &g_concat[t * h..(t + 1) * h]);
            self.frame_proj.backward(frame, &g);
        }
    }

    pub fn layers_mut(&mut self) -> [(&'static str, &mut Linear); 2] {
        [
            ("frame_proj", &mut self.frame_proj),
            ("temporal", &mut self.temporal),
        ]
    }

    pub fn layers(&self) -> [(&'static str, &Linear); 2] {
        [
            ("frame_proj", &self.frame_proj),
            ("temporal", &self.temporal),
        ]
    }
}

/// Separate (untied) front and back image encoders; their outputs are
/// concatenated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextureEncoder {
    pub front: Mlp,
    pub back: Mlp,
}

#[derive(Debug, Clone)]
pub struct TextureCache {
    front: MlpCache,
    back: MlpCache,
}

impl TextureEncoder {
    pub fn new(
        stem_dim: usize,
        hidden: usize,
        front_dim: usize,
        back_dim: usize,
        seed: u64,
    ) -> Self {
        TextureEncoder {
            front: Mlp::new(&[stem_dim, hidden, front_dim], seed),
            back: Mlp::new(&[stem_dim, hidden, back_dim], seed.wrapping_add(0x1000)),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.front.out_dim() + self.back.out_dim()
    }

    pub fn forward_cached(&self, front: &[f64], back: &[f64]) -> (Vec<f64>, TextureCache) {
        let (mut f, front_cache) = self.front.forward_cached(front);
        let (b, back_cache) = self.back.forward_cached(back);
        f.extend(b);
        (
            f,
            TextureCache {
                front: front_cache,
                back: back_cache,
            },
        )
    }

    pub fn backward(&mut self, cache: &TextureCache, grad: &[f64]) {
        let split = self.front.out_dim();
        self.front.backward(&cache.front, &grad[..split]);
        self.back.backward(&cache.back, &grad[split..]);
    }
}

/// Frozen image and text towers with a trainable fusion layer over
/// `[image, text, image * text]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentEncoder {
    pub image: Linear,
    pub text: Linear,
    pub fusion: Linear,
    pub context_len: usize,
}

#[derive(Debug, Clone)]
pub struct AlignmentCache {
    fused_input: Vec<f64>,
}

impl AlignmentEncoder {
    pub fn new(
        stem_dim: usize,
        image_dim: usize,
        text_dim: usize,
        out_dim: usize,
        context_len: usize,
        seed: u64,
    ) -> Self {
        let embed = image_dim.min(text_dim);
        AlignmentEncoder {
            image: Linear::new(stem_dim, image_dim, seed).frozen(),
            text: Linear::new(TEXT_FEATURE_DIM, text_dim, seed.wrapping_add(1)).frozen(),
            fusion: Linear::new(image_dim + text_dim + embed, out_dim, seed.wrapping_add(2)),
            context_len,
        }
    }

    pub fn out_dim(&self) -> usize {
        self.fusion.out_dim
    }

    pub fn image_feature(&self, stem: &[f64]) -> Vec<f64> {
        let mut v = self.image.forward(stem);
        l2_normalize(&mut v);
        v
    }

    /// Text tower output for already-validated, truncated tokens.
    pub fn text_feature(&self, tokens: &[String]) -> Vec<f64> {
        let mut v = self.text.forward(&hashed_text_features(tokens));
        l2_normalize(&mut v);
        v
    }

    pub fn fuse_input(image: &[f64], text: &[f64]) -> Vec<f64> {
        let mut x = Vec::with_capacity(image.len() + text.len() + image.len().min(text.len()));
        x.extend_from_slice(image);
        x.extend_from_slice(text);
        x.extend(image.iter().zip(text).map(|(a, b)| a * b));
        x
    }

    pub fn forward_cached(&self, image: &[f64], text: &[f64]) -> (Vec<f64>, AlignmentCache) {
        let fused_input = Self::fuse_input(image, text);
        (
            self.fusion.forward(&fused_input),
            AlignmentCache { fused_input },
        )
    }

    pub fn backward(&mut self, cache: &AlignmentCache, grad: &[f64]) {
        // gradient stops at the frozen towers
        self.fusion.backward(&cache.fused_input, grad);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tensor(h: u32, w: u32, f: impl Fn(usize, u32, u32) -> f32) -> ImageTensor {
        let mut data = Vec::new();
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    data.push(f(c, y, x));
                }
            }
        }
        ImageTensor {
            height: h,
            width: w,
            data,
        }
    }

    #[test]
    fn stem_pools_quadrants() {
        let stem = FrameStem { grid: 2 };
        let img = tensor(4, 4, |c, y, x| {
            (c as f32) + if y < 2 && x < 2 { 1.0 } else { 0.0 }
        });
        let e = stem.embed(&img);
        assert_eq!(e.len(), stem.out_dim());
        assert_eq!(&e[0..4], &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(&e[4..8], &[2.0, 1.0, 1.0, 1.0]);
        // edges: one vertical and one horizontal step of height 1 over 4 rows/cols
        assert!((e[12] - 2.0 / 12.0).abs() < 1e-12);
        assert!((e[13] - 2.0 / 12.0).abs() < 1e-12);
    }

    #[test]
    fn tokenizer_and_hashing() {
        assert_eq!(
            tokenize("A red, shiny Cube!"),
            vec!["a", "red", "shiny", "cube"]
        );
        let a = hashed_text_features(&tokenize("a red cube"));
        let b = hashed_text_features(&tokenize("a red cube"));
        let c = hashed_text_features(&tokenize("a green sphere"));
        assert_eq!(a, b);
        assert!(cosine(&a, &b) > cosine(&a, &c));
    }
}
