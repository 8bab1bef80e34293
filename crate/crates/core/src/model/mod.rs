//! The three-branch predictor.
//!
//! `f = concat(f_c, f_t, f_s)` over the enabled branches feeds a regression
//! head `affine(1024) -> ReLU -> affine(128) -> ReLU -> affine(3)` whose
//! outputs are the quality, authenticity and correspondence scores.

pub mod encoders;
pub mod nn;

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::path::Path;

use serde::{Deserialize, Serialize};

use self::encoders::{
    tokenize, AlignmentCache, AlignmentEncoder, FrameStem, ShapeCache, ShapeEncoder, TextureCache,
    TextureEncoder,
};
use self::nn::{Linear, Mlp, MlpCache};
use crate::dataset::ScoreTriple;
use crate::error::{Error, Result};
use crate::projection::{ImageTensor, PreprocessConfig, DEFAULT_SEGMENTS};

pub const TINY_TEST: &str = "tiny-test";
pub const OUTPUT_DIM: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    Shape,
    TextureFront,
    TextureBack,
    AlignImage,
    AlignText,
}

/// Pretrained backbones the architecture was designed around, with their
/// native feature widths.
pub const PRESETS: [(&str, EncoderKind, usize); 5] = [
    ("swin3d-s", EncoderKind::Shape, 768),
    ("swin-s", EncoderKind::TextureFront, 768),
    ("swin-s", EncoderKind::TextureBack, 768),
    ("clip-vit-b-32", EncoderKind::AlignImage, 512),
    ("clip-vit-b-32", EncoderKind::AlignText, 512),
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub kind: EncoderKind,
    pub identifier: String,
    pub output_dim: usize,
    pub frozen: bool,
}

impl EncoderSpec {
    pub fn tiny(kind: EncoderKind, output_dim: usize) -> Self {
        let frozen = matches!(kind, EncoderKind::AlignImage | EncoderKind::AlignText);
        EncoderSpec {
            kind,
            identifier: TINY_TEST.into(),
            output_dim,
            frozen,
        }
    }

    pub fn preset(kind: EncoderKind, identifier: &str) -> Result<Self> {
        let (_, _, dim) = PRESETS
            .iter()
            .find(|(id, k, _)| *id == identifier && *k == kind)
            .ok_or_else(|| Error::Config(format!("no preset {identifier:?} for {kind:?}")))?;
        Ok(EncoderSpec {
            kind,
            identifier: identifier.into(),
            output_dim: *dim,
            frozen: matches!(kind, EncoderKind::AlignImage | EncoderKind::AlignText),
        })
    }

    fn validate(&self, role: EncoderKind) -> Result<()> {
        if self.kind != role {
            return Err(Error::Config(format!(
                "encoder {:?} configured in the {role:?} slot",
                self.kind
            )));
        }
        if self.output_dim == 0 {
            return Err(Error::Config(format!(
                "{role:?} encoder has zero output_dim"
            )));
        }
        if matches!(role, EncoderKind::AlignImage | EncoderKind::AlignText) && !self.frozen {
            return Err(Error::Config(format!("{role:?} encoder must be frozen")));
        }
        if self.identifier == TINY_TEST {
            return Ok(());
        }
        if PRESETS
            .iter()
            .any(|(id, k, _)| *id == self.identifier && *k == role)
        {
            return Err(Error::WeightsUnavailable(format!(
                "{} ({role:?}) needs pretrained transformer weights; only {TINY_TEST} backbones \
                 can be built natively",
                self.identifier
            )));
        }
        Err(Error::Config(format!(
            "unknown encoder identifier {:?}",
            self.identifier
        )))
    }
}

/// Which branches contribute to the fused feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BranchSwitches {
    pub use_shape: bool,
    pub use_texture: bool,
    pub use_align: bool,
}

impl BranchSwitches {
    pub const ALL: BranchSwitches = BranchSwitches {
        use_shape: true,
        use_texture: true,
        use_align: true,
    };

    /// The ablation configurations `a` through `g`: alignment only, texture
    /// only, shape only, no shape, no texture, no alignment, everything.
    pub fn ablation(label: char) -> Result<Self> {
        let (s, t, a) = match label.to_ascii_lowercase() {
            'a' => (false, false, true),
            'b' => (false, true, false),
            'c' => (true, false, false),
            'd' => (false, true, true),
            'e' => (true, false, true),
            'f' => (true, true, false),
            'g' => (true, true, true),
            other => return Err(Error::Config(format!("unknown ablation config {other:?}"))),
        };
        Ok(BranchSwitches {
            use_shape: s,
            use_texture: t,
            use_align: a,
        })
    }

    pub fn any(&self) -> bool {
        self.use_shape || self.use_texture || self.use_align
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub shape: EncoderSpec,
    pub texture_front: EncoderSpec,
    pub texture_back: EncoderSpec,
    pub align_image: EncoderSpec,
    pub align_text: EncoderSpec,
    /// Output width of the trainable alignment fusion layer.
    pub align_fusion_dim: usize,
    pub head_hidden: Vec<usize>,
    pub branches: BranchSwitches,
    /// Frames per clip the shape encoder expects.
    pub n_frames: usize,
    pub stem_grid: usize,
    /// Hidden width inside the tiny backbones.
    pub tiny_hidden: usize,
    /// Maximum number of prompt tokens; longer prompts are truncated.
    pub text_context: usize,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            shape: EncoderSpec::tiny(EncoderKind::Shape, 64),
            texture_front: EncoderSpec::tiny(EncoderKind::TextureFront, 32),
            texture_back: EncoderSpec::tiny(EncoderKind::TextureBack, 32),
            align_image: EncoderSpec::tiny(EncoderKind::AlignImage, 32),
            align_text: EncoderSpec::tiny(EncoderKind::AlignText, 32),
            align_fusion_dim: 32,
            head_hidden: vec![1024, 128],
            branches: BranchSwitches::ALL,
            n_frames: DEFAULT_SEGMENTS,
            stem_grid: 4,
            tiny_hidden: 32,
            text_context: 77,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.branches.any() {
            return Err(Error::Config("at least one branch must be enabled".into()));
        }
        if self.head_hidden.iter().any(|&w| w == 0) {
            return Err(Error::Config("zero-width head layer".into()));
        }
        if self.n_frames == 0 || self.stem_grid == 0 || self.tiny_hidden == 0 {
            return Err(Error::Config(
                "n_frames, stem_grid and tiny_hidden must be positive".into(),
            ));
        }
        if self.align_fusion_dim == 0 || self.text_context == 0 {
            return Err(Error::Config(
                "align_fusion_dim and text_context must be positive".into(),
            ));
        }
        if self.branches.use_shape {
            self.shape.validate(EncoderKind::Shape)?;
        }
        if self.branches.use_texture {
            self.texture_front.validate(EncoderKind::TextureFront)?;
            self.texture_back.validate(EncoderKind::TextureBack)?;
        }
        if self.branches.use_align {
            self.align_image.validate(EncoderKind::AlignImage)?;
            self.align_text.validate(EncoderKind::AlignText)?;
        }
        Ok(())
    }

    pub fn shape_dim(&self) -> usize {
        self.shape.output_dim
    }

    pub fn texture_dim(&self) -> usize {
        self.texture_front.output_dim + self.texture_back.output_dim
    }

    pub fn align_dim(&self) -> usize {
        self.align_fusion_dim
    }

    /// Width of the fused feature for the enabled branches.
    pub fn feature_dim(&self) -> usize {
        let b = &self.branches;
        usize::from(b.use_align) * self.align_dim()
            + usize::from(b.use_texture) * self.texture_dim()
            + usize::from(b.use_shape) * self.shape_dim()
    }

    pub fn with_branches(mut self, branches: BranchSwitches) -> Self {
        self.branches = branches;
        self
    }
}

/// Per-branch features of one asset and their concatenation.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBundle {
    pub f_s: Vec<f64>,
    pub f_t: Vec<f64>,
    pub f_c: Vec<f64>,
    pub f: Vec<f64>,
}

/// Everything the model consumes for one asset, with frames already reduced
/// to stem embeddings (see [`T23daqaModel::embed_frame`]).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    pub asset_id: String,
    /// Stem embeddings of the sampled clip, in temporal order.
    pub clip: Vec<Vec<f64>>,
    pub front: Vec<f64>,
    pub back: Vec<f64>,
    pub prompt: String,
}

struct ForwardCache {
    shape: Option<ShapeCache>,
    texture: Option<TextureCache>,
    align: Option<AlignmentCache>,
    head: MlpCache,
}

/// Seed offsets per component so that switching a branch off leaves the
/// initialization of the others unchanged.
fn component_seed(base: u64, component: &str) -> u64 {
    base ^ encoders::fnv1a(component.as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct T23daqaModel {
    config: ModelConfig,
    stem: FrameStem,
    shape: Option<ShapeEncoder>,
    texture: Option<TextureEncoder>,
    align: Option<AlignmentEncoder>,
    head: Mlp,
}

impl T23daqaModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let stem = FrameStem {
            grid: config.stem_grid,
        };
        let seed = config.init_seed;
        let b = config.branches;
        let shape = b.use_shape.then(|| {
            ShapeEncoder::new(
                stem.out_dim(),
                config.tiny_hidden,
                config.n_frames,
                config.shape.output_dim,
                component_seed(seed, "shape"),
            )
        });
        let texture = b.use_texture.then(|| {
            TextureEncoder::new(
                stem.out_dim(),
                config.tiny_hidden,
                config.texture_front.output_dim,
                config.texture_back.output_dim,
                component_seed(seed, "texture"),
            )
        });
        let align = b.use_align.then(|| {
            AlignmentEncoder::new(
                stem.out_dim(),
                config.align_image.output_dim,
                config.align_text.output_dim,
                config.align_fusion_dim,
                config.text_context,
                component_seed(seed, "align"),
            )
        });
        let mut dims = vec![config.feature_dim()];
        dims.extend(&config.head_hidden);
        dims.push(OUTPUT_DIM);
        let head = Mlp::new(&dims, component_seed(seed, "head"));
        Ok(T23daqaModel {
            config,
            stem,
            shape,
            texture,
            align,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn stem(&self) -> FrameStem {
        self.stem
    }

    pub fn head(&self) -> &Mlp {
        &self.head
    }

    pub fn embed_frame(&self, img: &ImageTensor) -> Vec<f64> {
        self.stem.embed(img)
    }

    /// Tokens of `prompt`, truncated to the text context.
    pub fn prompt_tokens(&self, prompt: &str) -> Result<Vec<String>> {
        let mut tokens = tokenize(prompt);
        if tokens.is_empty() {
            return Err(Error::Validation("empty prompt".into()));
        }
        if tokens.len() > self.config.text_context {
            log::warn!(
                "prompt has {} tokens, truncating to {}",
                tokens.len(),
                self.config.text_context
            );
            tokens.truncate(self.config.text_context);
        }
        Ok(tokens)
    }

    fn check_shape_input(&self, clip: &[Vec<f64>]) -> Result<()> {
        if clip.len() != self.config.n_frames {
            return Err(Error::Validation(format!(
                "shape encoder expects {} frames, got {}",
                self.config.n_frames,
                clip.len()
            )));
        }
        Ok(())
    }

    fn branch<'a, T>(opt: &'a Option<T>, name: &str) -> Result<&'a T> {
        opt.as_ref()
            .ok_or_else(|| Error::Config(format!("{name} branch is disabled")))
    }

    /// Shape feature of a preprocessed sampled clip.
    pub fn encode_shape(&self, clip: &[ImageTensor]) -> Result<Vec<f64>> {
        let enc = Self::branch(&self.shape, "shape")?;
        let stems: Vec<Vec<f64>> = clip.iter().map(|t| self.embed_frame(t)).collect();
        self.check_shape_input(&stems)?;
        Ok(enc.forward_cached(&stems).0)
    }

    /// Texture feature `[E_front(front), E_back(back)]`.
    pub fn encode_texture(&self, front: &ImageTensor, back: &ImageTensor) -> Result<Vec<f64>> {
        let enc = Self::branch(&self.texture, "texture")?;
        if (front.width, front.height) != (back.width, back.height) {
            return Err(Error::Validation(format!(
                "front {}x{} and back {}x{} differ in resolution",
                front.width, front.height, back.width, back.height
            )));
        }
        Ok(enc
            .forward_cached(&self.embed_frame(front), &self.embed_frame(back))
            .0)
    }

    /// Frozen image and text tower outputs for the front view and prompt.
    pub fn alignment_towers(
        &self,
        front_stem: &[f64],
        prompt: &str,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let enc = Self::branch(&self.align, "alignment")?;
        let tokens = self.prompt_tokens(prompt)?;
        Ok((enc.image_feature(front_stem), enc.text_feature(&tokens)))
    }

    pub fn encode_alignment(&self, front: &ImageTensor, prompt: &str) -> Result<Vec<f64>> {
        let enc = Self::branch(&self.align, "alignment")?;
        let (img, txt) = self.alignment_towers(&self.embed_frame(front), prompt)?;
        Ok(enc.forward_cached(&img, &txt).0)
    }

    fn forward_one(&self, input: &ModelInput) -> Result<(FeatureBundle, ForwardCache, Vec<f64>)> {
        let mut bundle = FeatureBundle {
            f_s: Vec::new(),
            f_t: Vec::new(),
            f_c: Vec::new(),
            f: Vec::with_capacity(self.config.feature_dim()),
        };
        let mut cache = ForwardCache {
            shape: None,
            texture: None,
            align: None,
            head: MlpCache::default(),
        };
        if let Some(enc) = &self.align {
            let (img, txt) = self.alignment_towers(&input.front, &input.prompt)?;
            let (f_c, c) = enc.forward_cached(&img, &txt);
            bundle.f_c = f_c;
            cache.align = Some(c);
        }
        if let Some(enc) = &self.texture {
            let (f_t, c) = enc.forward_cached(&input.front, &input.back);
            bundle.f_t = f_t;
            cache.texture = Some(c);
        }
        if let Some(enc) = &self.shape {
            self.check_shape_input(&input.clip)?;
            let (f_s, c) = enc.forward_cached(&input.clip);
            bundle.f_s = f_s;
            cache.shape = Some(c);
        }
        bundle.f.extend(&bundle.f_c);
        bundle.f.extend(&bundle.f_t);
        bundle.f.extend(&bundle.f_s);
        if bundle.f.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite feature for asset {}",
                input.asset_id
            )));
        }
        let (out, head_cache) = self.head.forward_cached(&bundle.f);
        cache.head = head_cache;
        Ok((bundle, cache, out))
    }

    pub fn features(&self, input: &ModelInput) -> Result<FeatureBundle> {
        Ok(self.forward_one(input)?.0)
    }

    /// Evaluation-mode prediction; a pure function of inputs and weights.
    pub fn forward(&self, inputs: &[ModelInput]) -> Result<Vec<ScoreTriple>> {
        inputs
            .iter()
            .map(|input| {
                let (_, _, out) = self.forward_one(input)?;
                Ok(ScoreTriple::new(&input.asset_id, [out[0], out[1], out[2]]))
            })
            .collect()
    }

    /// Forward pass over a batch followed by backpropagation of `grad_fn`'s
    /// output gradient. `grad_fn` receives the `(batch x 3)` predictions and
    /// returns the loss value with `dL/dpred`. Parameter gradients are
    /// accumulated into the layers; call [`Self::zero_grad`] first.
    pub fn forward_backward<F>(
        &mut self,
        inputs: &[ModelInput],
        grad_fn: F,
    ) -> Result<(f64, Vec<[f64; 3]>)>
    where
        F: FnOnce(&[[f64; 3]]) -> Result<(f64, Vec<[f64; 3]>)>,
    {
        let mut caches = Vec::with_capacity(inputs.len());
        let mut preds = Vec::with_capacity(inputs.len());
        for input in inputs {
            let (_, cache, out) = self.forward_one(input)?;
            caches.push(cache);
            preds.push([out[0], out[1], out[2]]);
        }
        let (loss, grads) = grad_fn(&preds)?;
        for (cache, g) in caches.iter().zip(&grads) {
            self.backward_one(cache, g);
        }
        Ok((loss, preds))
    }

    fn backward_one(&mut self, cache: &ForwardCache, grad: &[f64; 3]) {
        let g_f = self.head.backward(&cache.head, grad);
        let mut offset = 0;
        if let (Some(enc), Some(c)) = (self.align.as_mut(), cache.align.as_ref()) {
            let n = enc.out_dim();
            enc.backward(c, &g_f[offset..offset + n]);
            offset += n;
        }
        if let (Some(enc), Some(c)) = (self.texture.as_mut(), cache.texture.as_ref()) {
            let n = enc.out_dim();
            enc.backward(c, &g_f[offset..offset + n]);
            offset += n;
        }
        if let (Some(enc), Some(c)) = (self.shape.as_mut(), cache.shape.as_ref()) {
            let n = enc.out_dim();
            enc.backward(c, &g_f[offset..offset + n]);
            offset += n;
        }
        debug_assert_eq!(offset, g_f.len());
    }

    /// Head output and `d(w . out)/df` for a fused feature, without touching
    /// parameter gradients.
    pub fn head_output_and_input_grad(
        &self,
        f: &[f64],
        weights: &[f64; 3],
    ) -> (Vec<f64>, Vec<f64>) {
        let (out, cache) = self.head.forward_cached(f);
        let g = self.head.input_grad(&cache, weights);
        (out, g)
    }

    pub fn layers(&self) -> Vec<(String, &Linear)> {
        let mut out: Vec<(String, &Linear)> = Vec::new();
        if let Some(a) = &self.align {
            out.push(("align.image".into(), &a.image));
            out.push(("align.text".into(), &a.text));
            out.push(("align.fusion".into(), &a.fusion));
        }
        if let Some(t) = &self.texture {
            for (i, l) in t.front.layers.iter().enumerate() {
                out.push((format!("texture.front.{i}"), l));
            }
            for (i, l) in t.back.layers.iter().enumerate() {
                out.push((format!("texture.back.{i}"), l));
            }
        }
        if let Some(s) = &self.shape {
            for (name, l) in s.layers() {
                out.push((format!("shape.{name}"), l));
            }
        }
        for (i, l) in self.head.layers.iter().enumerate() {
            out.push((format!("head.{i}"), l));
        }
        out
    }

    pub fn layers_mut(&mut self) -> Vec<(String, &mut Linear)> {
        let mut out: Vec<(String, &mut Linear)> = Vec::new();
        if let Some(a) = &mut self.align {
            out.push(("align.image".into(), &mut a.image));
            out.push(("align.text".into(), &mut a.text));
            out.push(("align.fusion".into(), &mut a.fusion));
        }
        if let Some(t) = &mut self.texture {
            for (i, l) in t.front.layers.iter_mut().enumerate() {
                out.push((format!("texture.front.{i}"), l));
            }
            for (i, l) in t.back.layers.iter_mut().enumerate() {
                out.push((format!("texture.back.{i}"), l));
            }
        }
        if let Some(s) = &mut self.shape {
            for (name, l) in s.layers_mut() {
                out.push((format!("shape.{name}"), l));
            }
        }
        for (i, l) in self.head.layers.iter_mut().enumerate() {
            out.push((format!("head.{i}"), l));
        }
        out
    }

    pub fn zero_grad(&mut self) {
        for (_, l) in self.layers_mut() {
            l.zero_grad();
        }
    }

    pub fn trainable_layer_names(&self) -> Vec<String> {
        self.layers()
            .into_iter()
            .filter(|(_, l)| !l.frozen)
            .map(|(n, _)| n)
            .collect()
    }

    pub fn n_trainable_params(&self) -> usize {
        self.layers()
            .iter()
            .filter(|(_, l)| !l.frozen)
            .map(|(_, l)| l.n_params())
            .sum()
    }

    /// Sum of squared gradients over frozen layers.
    pub fn frozen_grad_norm_sq(&self) -> f64 {
        self.layers()
            .iter()
            .filter(|(_, l)| l.frozen)
            .map(|(_, l)| l.grad_norm_sq())
            .sum()
    }

    /// Hash over the exact bits of every frozen parameter.
    pub fn frozen_checksum(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for (name, l) in self.layers().into_iter().filter(|(_, l)| l.frozen) {
            name.hash(&mut h);
            for v in l.weight.iter().chain(&l.bias) {
                v.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }

    /// Hash over the exact bits of every parameter.
    pub fn weights_checksum(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for (name, l) in self.layers() {
            name.hash(&mut h);
            for v in l.weight.iter().chain(&l.bias) {
                v.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }
}

/// Weights plus everything needed to rebuild the same inference pipeline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub model: T23daqaModel,
    pub preprocess: PreprocessConfig,
    /// Training settings, recorded for audit.
    #[serde(default)]
    pub training: serde_json::Value,
}

impl Checkpoint {
    pub const FORMAT_VERSION: u32 = 1;

    pub fn new(
        model: T23daqaModel,
        preprocess: PreprocessConfig,
        training: serde_json::Value,
    ) -> Self {
        Checkpoint {
            format_version: Self::FORMAT_VERSION,
            model,
            preprocess,
            training,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Loads a checkpoint; with `expected`, the stored architecture must match.
    pub fn load(path: &Path, expected: Option<&ModelConfig>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        if ckpt.format_version != Self::FORMAT_VERSION {
            return Err(Error::CheckpointMismatch(format!(
                "format version {} (expected {})",
                ckpt.format_version,
                Self::FORMAT_VERSION
            )));
        }
        if let Some(expected) = expected {
            let stored = ckpt.model.config();
            let mut a = stored.clone();
            let mut b = expected.clone();
            // initialization seed does not affect the architecture
            a.init_seed = 0;
            b.init_seed = 0;
            if a != b {
                return Err(Error::CheckpointMismatch(format!(
                    "stored architecture {stored:?} differs from requested {expected:?}"
                )));
            }
        }
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input(model: &T23daqaModel, id: &str, seed: u64) -> ModelInput {
        let dim = model.stem().out_dim();
        let v = |k: u64| -> Vec<f64> {
            (0..dim)
                .map(|i| (((i as u64 + 1) * (k + 3) * 2654435761) % 1000) as f64 / 500.0 - 1.0)
                .collect()
        };
        ModelInput {
            asset_id: id.into(),
            clip: (0..model.config().n_frames as u64)
                .map(|t| v(seed * 31 + t))
                .collect(),
            front: v(seed * 7 + 1),
            back: v(seed * 7 + 2),
            prompt: "a red cube".into(),
        }
    }

    #[test]
    fn ablation_labels() {
        let expect = [
            ('a', (false, false, true)),
            ('b', (false, true, false)),
            ('c', (true, false, false)),
            ('d', (false, true, true)),
            ('e', (true, false, true)),
            ('f', (true, true, false)),
            ('g', (true, true, true)),
        ];
        for (l, (s, t, a)) in expect {
            let b = BranchSwitches::ablation(l).unwrap();
            assert_eq!((b.use_shape, b.use_texture, b.use_align), (s, t, a));
        }
        assert!(BranchSwitches::ablation('h').is_err());
    }

    #[test]
    fn no_branch_is_a_config_error() {
        let cfg = ModelConfig::default().with_branches(BranchSwitches {
            use_shape: false,
            use_texture: false,
            use_align: false,
        });
        assert!(matches!(T23daqaModel::new(cfg), Err(Error::Config(_))));
    }

    #[test]
    fn presets_need_weights() {
        let mut cfg = ModelConfig::default();
        cfg.shape = EncoderSpec::preset(EncoderKind::Shape, "swin3d-s").unwrap();
        assert_eq!(cfg.shape.output_dim, 768);
        assert!(matches!(
            T23daqaModel::new(cfg),
            Err(Error::WeightsUnavailable(_))
        ));

        let mut cfg = ModelConfig::default();
        cfg.align_text.frozen = false;
        assert!(matches!(T23daqaModel::new(cfg), Err(Error::Config(_))));
    }

    #[test]
    fn forward_shapes_and_determinism() {
        let model = T23daqaModel::new(ModelConfig::default()).unwrap();
        let batch: Vec<_> = (0..4).map(|i| input(&model, &format!("a{i}"), i)).collect();
        let out = model.forward(&batch).unwrap();
        assert_eq!(out.len(), 4);
        assert!(out.iter().all(|s| s.values().iter().all(|v| v.is_finite())));
        let again = model.forward(&batch).unwrap();
        for (x, y) in out.iter().zip(&again) {
            assert_eq!(x.values().map(f64::to_bits), y.values().map(f64::to_bits));
        }
        let fb = model.features(&batch[0]).unwrap();
        assert_eq!(fb.f.len(), fb.f_s.len() + fb.f_t.len() + fb.f_c.len());
        assert_eq!(fb.f.len(), model.config().feature_dim());
    }

    #[test]
    fn wrong_clip_length_is_rejected() {
        let model = T23daqaModel::new(ModelConfig::default()).unwrap();
        let mut x = input(&model, "a", 0);
        x.clip.pop();
        assert!(model.forward(&[x]).is_err());
        let mut y = input(&model, "b", 0);
        y.prompt = "  ".into();
        assert!(model.forward(&[y]).is_err());
    }

    #[test]
    fn disabling_a_branch_drops_only_its_layers() {
        let full = T23daqaModel::new(ModelConfig::default()).unwrap();
        let no_shape = T23daqaModel::new(
            ModelConfig::default().with_branches(BranchSwitches::ablation('d').unwrap()),
        )
        .unwrap();
        let full_names = full.trainable_layer_names();
        let names = no_shape.trainable_layer_names();
        let dropped: Vec<_> = full_names.iter().filter(|n| !names.contains(n)).collect();
        assert_eq!(dropped, vec!["shape.frame_proj", "shape.temporal"]);
        // encoders keep their initialization; only the head input width changes
        let a = full
            .layers()
            .into_iter()
            .find(|(n, _)| n == "texture.front.0")
            .unwrap()
            .1
            .clone();
        let b = no_shape
            .layers()
            .into_iter()
            .find(|(n, _)| n == "texture.front.0")
            .unwrap()
            .1
            .clone();
        assert_eq!(a, b);
    }
}
