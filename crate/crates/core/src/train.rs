//! Training, inference and the branch ablation grid.

use std::collections::{HashMap, HashSet};
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{AssetRecord, Dimension, MosRecord, ScoreTriple, SplitSpec};
use crate::error::{Error, Result};
use crate::losses::{total_loss_grad, LossConfig, RankVariant};
use crate::metrics::{run_benchmark, FnScores};
use crate::model::encoders::FrameStem;
use crate::model::nn::Adam;
use crate::model::{BranchSwitches, Checkpoint, ModelConfig, ModelInput, T23daqaModel};
use crate::projection::{
    front_back_indices, load_clip, preprocess_image, sample_indices, PreprocessConfig, SampleMode,
};

/// Flat training configuration, loadable from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub lambda: f64,
    pub rank_variant: RankVariant,
    /// Ablation label `a`..`g`; `g` enables every branch.
    pub ablation: char,
    pub input_size: u32,
    pub n_segments: usize,
    pub head_hidden: Vec<usize>,
    pub stem_grid: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        TrainConfig {
            lr: 1e-4,
            batch_size: 4,
            epochs: 50,
            seed: 0,
            lambda: 0.3,
            rank_variant: RankVariant::PairwiseSignHinge,
            ablation: 'g',
            input_size: 224,
            n_segments: model.n_frames,
            head_hidden: model.head_hidden,
            stem_grid: model.stem_grid,
        }
    }
}

impl TrainConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(
                "batch_size must be at least 2 for the batch-level losses".into(),
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        if self.input_size == 0 {
            return Err(Error::Config("input_size must be positive".into()));
        }
        self.loss().validate()?;
        self.model()?.validate()
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig {
            lambda: self.lambda,
            rank_variant: self.rank_variant,
        }
    }

    pub fn model(&self) -> Result<ModelConfig> {
        Ok(ModelConfig {
            branches: BranchSwitches::ablation(self.ablation)?,
            n_frames: self.n_segments,
            head_hidden: self.head_hidden.clone(),
            stem_grid: self.stem_grid,
            init_seed: self.seed,
            ..ModelConfig::default()
        })
    }

    pub fn preprocess(&self) -> PreprocessConfig {
        PreprocessConfig {
            width: self.input_size,
            height: self.input_size,
            ..PreprocessConfig::default()
        }
    }
}

/// An asset with every frame already preprocessed and reduced to its stem
/// embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedAsset {
    pub asset_id: String,
    pub prompt: String,
    pub frame_stems: Vec<Vec<f64>>,
}

impl PreparedAsset {
    /// Model input built from the frames at `indices`, with the front and
    /// back views taken from the full clip.
    pub fn input(&self, indices: &[usize]) -> Result<ModelInput> {
        let (f, b) = front_back_indices(self.frame_stems.len())?;
        Ok(ModelInput {
            asset_id: self.asset_id.clone(),
            clip: indices
                .iter()
                .map(|&i| self.frame_stems[i].clone())
                .collect(),
            front: self.frame_stems[f].clone(),
            back: self.frame_stems[b].clone(),
            prompt: self.prompt.clone(),
        })
    }
}

fn prepare_one(
    asset: &AssetRecord,
    base_dir: &Path,
    preprocess: &PreprocessConfig,
    stem: FrameStem,
) -> Result<PreparedAsset> {
    let clip = load_clip(asset, base_dir)?;
    front_back_indices(clip.len())?;
    let frame_stems = clip
        .frames
        .iter()
        .map(|f| Ok(stem.embed(&preprocess_image(f, preprocess)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(PreparedAsset {
        asset_id: asset.asset_id.clone(),
        prompt: asset.prompt.clone(),
        frame_stems,
    })
}

/// Loads, preprocesses and stem-embeds the clips of `assets`, in parallel.
pub fn prepare_assets(
    assets: &[AssetRecord],
    base_dir: &Path,
    preprocess: &PreprocessConfig,
    stem: FrameStem,
) -> Result<Vec<PreparedAsset>> {
    let workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(assets.len().max(1));
    let chunk = assets.len().div_ceil(workers).max(1);
    std::thread::scope(|scope| {
        let handles: Vec<_> = assets
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || {
                    part.iter()
                        .map(|a| prepare_one(a, base_dir, preprocess, stem))
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        let mut out = Vec::with_capacity(assets.len());
        for h in handles {
            out.extend(h.join().expect("preparation worker panicked")?);
        }
        Ok(out)
    })
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub epoch: usize,
    pub dim: Dimension,
    pub lin: f64,
    pub rank: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: T23daqaModel,
    pub log: Vec<StepLog>,
    /// Mean batch loss per epoch.
    pub epoch_losses: Vec<f64>,
}

fn asset_seed(seed: u64, epoch: usize, asset_id: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in asset_id.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    seed ^ h ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Trains a fresh model on the assets listed in `train_ids`.
pub fn train(
    cfg: &TrainConfig,
    assets: &[PreparedAsset],
    mos: &[MosRecord],
    train_ids: &[String],
    log_out: Option<&mut dyn Write>,
) -> Result<TrainOutcome> {
    let model = T23daqaModel::new(cfg.model()?)?;
    train_from(cfg, model, assets, mos, train_ids, log_out)
}

/// Continues training `model`.
pub fn train_from(
    cfg: &TrainConfig,
    mut model: T23daqaModel,
    assets: &[PreparedAsset],
    mos: &[MosRecord],
    train_ids: &[String],
    mut log_out: Option<&mut dyn Write>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_ids.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "training needs at least 2 assets, got {}",
            train_ids.len()
        )));
    }
    let by_asset: HashMap<&str, &PreparedAsset> =
        assets.iter().map(|a| (a.asset_id.as_str(), a)).collect();
    let by_label: HashMap<&str, &MosRecord> =
        mos.iter().map(|m| (m.asset_id.as_str(), m)).collect();
    let no_frames: Vec<&str> = train_ids
        .iter()
        .map(String::as_str)
        .filter(|id| !by_asset.contains_key(id))
        .collect();
    if !no_frames.is_empty() {
        return Err(Error::Validation(format!(
            "no frames for training asset(s): {}",
            no_frames.join(", ")
        )));
    }
    let no_label: Vec<&str> = train_ids
        .iter()
        .map(String::as_str)
        .filter(|id| !by_label.contains_key(id))
        .collect();
    if !no_label.is_empty() {
        return Err(Error::Validation(format!(
            "no MOS label for training asset(s): {}",
            no_label.join(", ")
        )));
    }
    for id in train_ids {
        let n = by_asset[id.as_str()].frame_stems.len();
        if n < cfg.n_segments {
            return Err(Error::InsufficientData(format!(
                "asset {id} has {n} frames, fewer than {} segments",
                cfg.n_segments
            )));
        }
    }

    let loss_cfg = cfg.loss();
    let mut adam = Adam::new(cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<&str> = train_ids.iter().map(String::as_str).collect();
    let mut log = Vec::new();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut batches: Vec<&[&str]> = order.chunks(cfg.batch_size).collect();
        // a trailing single item cannot form a ranking; fold it into the previous batch
        if batches.len() > 1 && batches.last().is_some_and(|b| b.len() < 2) {
            let n = order.len();
            batches.pop();
            let last = batches.pop().expect("at least one batch");
            let start = n - last.len() - 1;
            batches.push(&order[start..]);
        }
        let mut sum = 0.0;
        let mut counted = 0usize;
        for batch in batches {
            let inputs = batch
                .iter()
                .map(|id| {
                    let a = by_asset[id];
                    let idx = sample_indices(
                        a.frame_stems.len(),
                        SampleMode::Train,
                        cfg.n_segments,
                        asset_seed(cfg.seed, epoch, id),
                    )?;
                    a.input(&idx)
                })
                .collect::<Result<Vec<_>>>()?;
            let labels: Vec<[f64; 3]> = batch.iter().map(|id| by_label[id].mos).collect();
            let constant = Dimension::ALL
                .iter()
                .any(|d| labels.iter().all(|l| l[d.index()] == labels[0][d.index()]));
            if constant {
                log::warn!("skipping batch with constant labels at epoch {epoch}");
                continue;
            }
            model.zero_grad();
            let mut breakdown = None;
            model.forward_backward(&inputs, |preds| {
                let (b, g) = total_loss_grad(preds, &labels, &loss_cfg)?;
                let total = b.total;
                breakdown = Some(b);
                Ok((total, g))
            })?;
            adam.step(model.layers_mut());
            let b = breakdown.expect("loss computed");
            if !b.total.is_finite() {
                return Err(Error::Validation(format!(
                    "loss diverged at step {}",
                    adam.steps()
                )));
            }
            for d in b.per_dim {
                let entry = StepLog {
                    step: adam.steps(),
                    epoch,
                    dim: d.dim,
                    lin: d.lin,
                    rank: d.rank,
                    total: d.total,
                };
                if let Some(out) = log_out.as_mut() {
                    serde_json::to_writer(&mut **out, &entry)?;
                    writeln!(out).map_err(|e| Error::io("<training log>", e))?;
                }
                log.push(entry);
            }
            sum += b.total;
            counted += 1;
        }
        let mean = if counted > 0 {
            sum / counted as f64
        } else {
            f64::NAN
        };
        log::info!("epoch {epoch}: mean loss {mean:.5}");
        epoch_losses.push(mean);
    }
    Ok(TrainOutcome {
        model,
        log,
        epoch_losses,
    })
}

/// Test-mode prediction for every asset in `ids` (all assets when `None`).
pub fn predict(
    model: &T23daqaModel,
    assets: &[PreparedAsset],
    ids: Option<&[String]>,
) -> Result<Vec<ScoreTriple>> {
    let n_segments = model.config().n_frames;
    let selected: Vec<&PreparedAsset> = match ids {
        None => assets.iter().collect(),
        Some(ids) => {
            let by_asset: HashMap<&str, &PreparedAsset> =
                assets.iter().map(|a| (a.asset_id.as_str(), a)).collect();
            ids.iter()
                .map(|id| {
                    by_asset
                        .get(id.as_str())
                        .copied()
                        .ok_or_else(|| Error::Validation(format!("no frames for asset {id}")))
                })
                .collect::<Result<_>>()?
        }
    };
    let inputs = selected
        .iter()
        .map(|a| {
            let idx = sample_indices(a.frame_stems.len(), SampleMode::Test, n_segments, 0)?;
            a.input(&idx)
        })
        .collect::<Result<Vec<_>>>()?;
    model.forward(&inputs)
}

pub fn save_checkpoint(model: &T23daqaModel, cfg: &TrainConfig, path: &Path) -> Result<()> {
    Checkpoint::new(model.clone(), cfg.preprocess(), serde_json::to_value(cfg)?).save(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: char,
    pub branches: BranchSwitches,
    /// Mean SRCC and PLCC per dimension over the splits, `None` on failure.
    pub srcc: Option<[f64; 3]>,
    pub plcc: Option<[f64; 3]>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seed: u64,
    pub n_splits: usize,
    pub rows: Vec<AblationRow>,
}

/// Trains and evaluates every listed branch configuration on every split.
/// A failing configuration is recorded and the remaining ones still run.
pub fn ablation_grid(
    cfg: &TrainConfig,
    labels: &[char],
    assets: &[PreparedAsset],
    mos: &[MosRecord],
    splits: &[SplitSpec],
) -> Result<AblationReport> {
    let mut seen = HashSet::new();
    let mut rows = Vec::with_capacity(labels.len());
    for &label in labels {
        if !seen.insert(label) {
            continue;
        }
        let branches = BranchSwitches::ablation(label)?;
        let run_cfg = TrainConfig {
            ablation: label,
            ..cfg.clone()
        };
        let mut method = FnScores {
            name: format!("config-{label}"),
            f: |split: &SplitSpec| {
                let outcome = train(&run_cfg, assets, mos, &split.train_ids, None)?;
                predict(&outcome.model, assets, Some(&split.test_ids))
            },
        };
        let row = match run_benchmark(&mut method, mos, splits) {
            Ok(res) => AblationRow {
                label,
                branches,
                srcc: Some(Dimension::ALL.map(|d| res.dim(d).srcc_mean)),
                plcc: Some(Dimension::ALL.map(|d| res.dim(d).plcc_mean)),
                error: None,
            },
            Err(e) => {
                log::error!("ablation config {label} failed: {e}");
                AblationRow {
                    label,
                    branches,
                    srcc: None,
                    plcc: None,
                    error: Some(e.to_string()),
                }
            }
        };
        rows.push(row);
    }
    Ok(AblationReport {
        seed: splits.first().map(|s| s.seed).unwrap_or(cfg.seed),
        n_splits: splits.len(),
        rows,
    })
}

/// Markdown table with one row per configuration.
pub fn ablation_markdown(report: &AblationReport) -> String {
    let mark = |b: bool| if b { "✓" } else { "" };
    let mut out = String::from(
        "| config | align | texture | shape | SRCC q | SRCC a | SRCC c | PLCC q | PLCC a | PLCC c |\n\
         |---|---|---|---|---|---|---|---|---|---|\n",
    );
    for row in &report.rows {
        let b = row.branches;
        out.push_str(&format!(
            "| {} | {} | {} | {} |",
            row.label,
            mark(b.use_align),
            mark(b.use_texture),
            mark(b.use_shape)
        ));
        match (row.srcc, row.plcc) {
            (Some(s), Some(p)) => {
                for v in s.iter().chain(&p) {
                    out.push_str(&format!(" {v:.4} |"));
                }
            }
            _ => out.push_str(&format!(
                " failed: {} | | | | | |",
                row.error.as_deref().unwrap_or("unknown error")
            )),
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_protocol() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.lr, 1e-4);
        assert_eq!(cfg.batch_size, 4);
        assert_eq!(cfg.epochs, 50);
        assert_eq!(cfg.lambda, 0.3);
        assert_eq!(cfg.n_segments, 12);
        assert_eq!(cfg.input_size, 224);
        cfg.validate().unwrap();
    }

    #[test]
    fn toml_round_trip_and_zero_epochs() {
        let cfg: TrainConfig = toml::from_str("epochs = 3\nablation = \"c\"\n").unwrap();
        assert_eq!(cfg.epochs, 3);
        assert!(cfg.model().unwrap().branches.use_shape);
        assert!(!cfg.model().unwrap().branches.use_align);
        let zero = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(matches!(zero.validate(), Err(Error::Config(_))));
        assert!(toml::from_str::<TrainConfig>("learning_rate = 1").is_err());
    }

    fn toy_assets(n: usize, frames: usize) -> (Vec<PreparedAsset>, Vec<MosRecord>) {
        let assets = (0..n)
            .map(|i| PreparedAsset {
                asset_id: format!("a{i}"),
                prompt: format!("object number {i}"),
                frame_stems: (0..frames)
                    .map(|t| {
                        (0..54)
                            .map(|k| ((i * 7 + t * 3 + k) % 11) as f64 / 11.0 - 0.5)
                            .collect()
                    })
                    .collect(),
            })
            .collect();
        let mos = (0..n)
            .map(|i| MosRecord {
                asset_id: format!("a{i}"),
                mos: [
                    i as f64 * 10.0,
                    100.0 - i as f64 * 5.0,
                    (i * 37 % 13) as f64,
                ],
                n_valid_subjects: 5,
                n_outliers_removed: [0; 3],
            })
            .collect();
        (assets, mos)
    }

    #[test]
    fn missing_label_fails_before_training() {
        let (assets, mut mos) = toy_assets(4, 12);
        mos.pop();
        let ids: Vec<String> = assets.iter().map(|a| a.asset_id.clone()).collect();
        let err = train(&TrainConfig::default(), &assets, &mos, &ids, None).unwrap_err();
        assert!(err.to_string().contains("a3"));
    }

    #[test]
    fn training_is_deterministic() {
        let (assets, mos) = toy_assets(6, 12);
        let ids: Vec<String> = assets.iter().map(|a| a.asset_id.clone()).collect();
        let cfg = TrainConfig {
            epochs: 2,
            head_hidden: vec![16, 8],
            ..TrainConfig::default()
        };
        let a = train(&cfg, &assets, &mos, &ids, None).unwrap();
        let b = train(&cfg, &assets, &mos, &ids, None).unwrap();
        assert_eq!(a.model.weights_checksum(), b.model.weights_checksum());
        assert_eq!(a.log, b.log);
        assert!(!a.log.is_empty());
    }
}
