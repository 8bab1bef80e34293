//! Data model shared across the crate and the file formats for manifests,
//! ratings, MOS labels, score files and splits.
//!
//! Manifests, MOS files and score files are JSON-lines. Ratings are read
//! from either CSV (`subject_id,asset_id,quality,authenticity,correspondence,session`)
//! or JSON-lines with the same field names.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper bound of the rating slider.
pub const MAX_RAW_SCORE: f64 = 5.0;

/// The six generators of the released database. Manifests may use any other tag.
pub const KNOWN_GENERATORS: [&str; 6] = [
    "dreamfusion",
    "latentnerf",
    "magic3d",
    "prolificdreamer",
    "sjc",
    "textmesh",
];

/// One of the three rated perceptual dimensions. The order is fixed everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dimension {
    Quality,
    Authenticity,
    Correspondence,
}

impl Dimension {
    pub const ALL: [Dimension; 3] = [
        Dimension::Quality,
        Dimension::Authenticity,
        Dimension::Correspondence,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Dimension::Quality => "quality",
            Dimension::Authenticity => "authenticity",
            Dimension::Correspondence => "correspondence",
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One generated asset and the location of its orbit projection video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetRecord {
    pub asset_id: String,
    pub prompt: String,
    pub generator: String,
    /// A video file, or a directory holding one image per frame.
    pub video_path: PathBuf,
    pub frame_count: usize,
    pub width: u32,
    pub height: u32,
}

impl AssetRecord {
    pub fn validate(&self) -> Result<()> {
        if self.asset_id.is_empty() {
            return Err(Error::Validation("empty asset_id".into()));
        }
        if self.frame_count < 2 || self.frame_count % 2 != 0 {
            return Err(Error::Validation(format!(
                "asset {}: frame_count must be even and at least 2, got {}",
                self.asset_id, self.frame_count
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Validation(format!(
                "asset {}: zero-sized resolution {}x{}",
                self.asset_id, self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn resolution(&self) -> (u32, u32) {
        (self.width, self.height)
    }
}

/// A single subject's raw slider triple for one asset.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingRecord {
    pub subject_id: String,
    pub asset_id: String,
    /// (quality, authenticity, correspondence), each in `[0, 5]`.
    pub scores: [f64; 3],
    pub session: u32,
}

impl RatingRecord {
    pub fn score(&self, dim: Dimension) -> f64 {
        self.scores[dim.index()]
    }

    pub fn validate(&self) -> Result<()> {
        for dim in Dimension::ALL {
            let s = self.score(dim);
            if !s.is_finite() || !(0.0..=MAX_RAW_SCORE).contains(&s) {
                return Err(Error::Range(format!(
                    "subject {} asset {}: {} score {} outside [0, {}]",
                    self.subject_id, self.asset_id, dim, s, MAX_RAW_SCORE
                )));
            }
        }
        Ok(())
    }
}

/// Flat on-disk form of a rating, shared by the CSV and JSON-lines readers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RatingRow {
    pub subject_id: String,
    pub asset_id: String,
    pub quality: f64,
    pub authenticity: f64,
    pub correspondence: f64,
    pub session: u32,
}

impl From<RatingRow> for RatingRecord {
    fn from(row: RatingRow) -> Self {
        RatingRecord {
            subject_id: row.subject_id,
            asset_id: row.asset_id,
            scores: [row.quality, row.authenticity, row.correspondence],
            session: row.session,
        }
    }
}

impl From<&RatingRecord> for RatingRow {
    fn from(r: &RatingRecord) -> Self {
        RatingRow {
            subject_id: r.subject_id.clone(),
            asset_id: r.asset_id.clone(),
            quality: r.scores[0],
            authenticity: r.scores[1],
            correspondence: r.scores[2],
            session: r.session,
        }
    }
}

/// Processed per-asset labels on the 0..100 scale.
///
/// Values are not clamped: ratings more than three standard deviations from
/// a subject's mean can push a MOS slightly outside `[0, 100]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MosRecord {
    pub asset_id: String,
    pub mos: [f64; 3],
    pub n_valid_subjects: usize,
    pub n_outliers_removed: [usize; 3],
}

impl MosRecord {
    pub fn value(&self, dim: Dimension) -> f64 {
        self.mos[dim.index()]
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_valid_subjects == 0 {
            return Err(Error::Validation(format!(
                "asset {}: no valid subjects",
                self.asset_id
            )));
        }
        if self.mos.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "asset {}: non-finite MOS",
                self.asset_id
            )));
        }
        Ok(())
    }
}

/// A predictor's output for one asset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTriple {
    pub asset_id: String,
    pub q: f64,
    pub a: f64,
    pub c: f64,
}

impl ScoreTriple {
    pub fn new(asset_id: impl Into<String>, values: [f64; 3]) -> Self {
        ScoreTriple {
            asset_id: asset_id.into(),
            q: values[0],
            a: values[1],
            c: values[2],
        }
    }

    pub fn value(&self, dim: Dimension) -> f64 {
        match dim {
            Dimension::Quality => self.q,
            Dimension::Authenticity => self.a,
            Dimension::Correspondence => self.c,
        }
    }

    pub fn values(&self) -> [f64; 3] {
        [self.q, self.a, self.c]
    }

    pub fn validate(&self) -> Result<()> {
        if self.values().iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Validation(format!(
                "asset {}: non-finite score",
                self.asset_id
            )))
        }
    }
}

/// One 4:1 train/test partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seed: u64,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub ratio: (u32, u32),
    #[serde(default)]
    pub group_by_prompt: bool,
}

impl SplitSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(value);
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, &item)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn is_csv(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

pub fn load_manifest(path: &Path) -> Result<Vec<AssetRecord>> {
    let records: Vec<AssetRecord> = read_jsonl(path)?;
    validate_manifest(&records)?;
    Ok(records)
}

pub fn validate_manifest(records: &[AssetRecord]) -> Result<()> {
    let mut seen = HashSet::new();
    for rec in records {
        rec.validate()?;
        if !seen.insert(rec.asset_id.as_str()) {
            return Err(Error::Validation(format!(
                "duplicate asset_id {}",
                rec.asset_id
            )));
        }
    }
    Ok(())
}

pub fn write_manifest(path: &Path, records: &[AssetRecord]) -> Result<()> {
    write_jsonl(path, records)
}

/// Reads ratings from CSV (by `.csv` extension) or JSON-lines.
pub fn load_ratings(path: &Path) -> Result<Vec<RatingRecord>> {
    let rows: Vec<RatingRow> = if is_csv(path) {
        let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
        let mut rows = Vec::new();
        for (i, row) in reader.deserialize().enumerate() {
            // header occupies line 1
            rows.push(row.map_err(|e: csv::Error| Error::Parse {
                path: path.to_path_buf(),
                line: e.position().map(|p| p.line() as usize).unwrap_or(i + 2),
                message: e.to_string(),
            })?);
        }
        rows
    } else {
        read_jsonl(path)?
    };
    let records: Vec<RatingRecord> = rows.into_iter().map(RatingRecord::from).collect();
    validate_ratings(&records)?;
    Ok(records)
}

fn csv_error(path: &Path, err: csv::Error) -> Error {
    match err.into_kind() {
        csv::ErrorKind::Io(e) => Error::io(path, e),
        other => Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: format!("{other:?}"),
        },
    }
}

pub fn validate_ratings(records: &[RatingRecord]) -> Result<()> {
    let mut seen = HashSet::new();
    for r in records {
        r.validate()?;
        if !seen.insert((r.subject_id.as_str(), r.asset_id.as_str())) {
            return Err(Error::Validation(format!(
                "duplicate rating for subject {} asset {}",
                r.subject_id, r.asset_id
            )));
        }
    }
    Ok(())
}

pub fn write_ratings_csv<W: Write>(out: W, records: &[RatingRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    // serialize() only emits the header once a row exists
    w.write_record([
        "subject_id",
        "asset_id",
        "quality",
        "authenticity",
        "correspondence",
        "session",
    ])
    .map_err(|e| Error::Validation(e.to_string()))?;
    for r in records {
        let row = RatingRow::from(r);
        w.write_record([
            row.subject_id,
            row.asset_id,
            row.quality.to_string(),
            row.authenticity.to_string(),
            row.correspondence.to_string(),
            row.session.to_string(),
        ])
        .map_err(|e| Error::Validation(e.to_string()))?;
    }
    w.flush()
        .map_err(|e| Error::io(PathBuf::from("<ratings csv>"), e))
}

/// Writes ratings as CSV or JSON-lines depending on the extension.
pub fn write_ratings(path: &Path, records: &[RatingRecord]) -> Result<()> {
    if is_csv(path) {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        write_ratings_csv(BufWriter::new(file), records)
    } else {
        write_jsonl(path, records.iter().map(RatingRow::from))
    }
}

pub fn load_mos(path: &Path) -> Result<Vec<MosRecord>> {
    let records: Vec<MosRecord> = read_jsonl(path)?;
    let mut seen = HashSet::new();
    for r in &records {
        r.validate()?;
        if !seen.insert(r.asset_id.as_str()) {
            return Err(Error::Validation(format!(
                "duplicate MOS for asset {}",
                r.asset_id
            )));
        }
    }
    Ok(records)
}

pub fn write_mos(path: &Path, records: &[MosRecord]) -> Result<()> {
    write_jsonl(path, records)
}

pub fn load_scores(path: &Path) -> Result<Vec<ScoreTriple>> {
    let records: Vec<ScoreTriple> = read_jsonl(path)?;
    let mut seen = HashSet::new();
    for r in &records {
        r.validate()?;
        if !seen.insert(r.asset_id.as_str()) {
            return Err(Error::Validation(format!(
                "duplicate score for asset {}",
                r.asset_id
            )));
        }
    }
    Ok(records)
}

pub fn write_scores(path: &Path, records: &[ScoreTriple]) -> Result<()> {
    write_jsonl(path, records)
}

/// Number of held-out assets for a 4:1 split.
pub fn test_size(n: usize) -> usize {
    (n as f64 / 5.0).round() as usize
}

/// Draws `n_splits` seeded 4:1 partitions of the manifest.
///
/// Split `k` uses an RNG seeded from `(seed, k)`, so the result only depends
/// on the arguments. Ids on each side keep manifest order. With
/// `group_by_prompt`, whole prompt groups are assigned to the test side until
/// it is full; groups that would overshoot the target are skipped, so the
/// test side can come out slightly smaller than `round(n/5)` when no exact
/// packing exists among the shuffled groups.
pub fn make_splits(
    manifest: &[AssetRecord],
    n_splits: usize,
    seed: u64,
    group_by_prompt: bool,
) -> Result<Vec<SplitSpec>> {
    make_splits_with_ratio(manifest, n_splits, seed, group_by_prompt, (4, 1))
}

/// As [`make_splits`] with a `train:test` ratio other than 4:1.
pub fn make_splits_with_ratio(
    manifest: &[AssetRecord],
    n_splits: usize,
    seed: u64,
    group_by_prompt: bool,
    ratio: (u32, u32),
) -> Result<Vec<SplitSpec>> {
    if n_splits == 0 {
        return Err(Error::Config("n_splits must be at least 1".into()));
    }
    if ratio.0 == 0 || ratio.1 == 0 {
        return Err(Error::Config(format!(
            "split ratio {}:{} needs both sides positive",
            ratio.0, ratio.1
        )));
    }
    let parts = (ratio.0 + ratio.1) as usize;
    if manifest.len() < parts {
        return Err(Error::InsufficientData(format!(
            "a {}:{} split needs at least {parts} assets, got {}",
            ratio.0,
            ratio.1,
            manifest.len()
        )));
    }
    let target = if ratio == (4, 1) {
        test_size(manifest.len())
    } else {
        (manifest.len() as f64 * ratio.1 as f64 / (ratio.0 + ratio.1) as f64).round() as usize
    };
    if target == 0 || target >= manifest.len() {
        return Err(Error::InsufficientData(format!(
            "a {}:{} split of {} assets leaves one side empty",
            ratio.0,
            ratio.1,
            manifest.len()
        )));
    }

    // groups of manifest indices; singleton groups when not grouping
    let groups: Vec<Vec<usize>> = if group_by_prompt {
        let mut by_prompt: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, a) in manifest.iter().enumerate() {
            by_prompt.entry(a.prompt.as_str()).or_default().push(i);
        }
        by_prompt.into_values().collect()
    } else {
        (0..manifest.len()).map(|i| vec![i]).collect()
    };

    let mut splits = Vec::with_capacity(n_splits);
    for k in 0..n_splits {
        let split_seed = seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(k as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(split_seed);
        let mut order: Vec<usize> = (0..groups.len()).collect();
        order.shuffle(&mut rng);

        let mut in_test = vec![false; manifest.len()];
        let mut filled = 0;
        for g in order {
            if filled == target {
                break;
            }
            let group = &groups[g];
            if filled + group.len() <= target {
                for &i in group {
                    in_test[i] = true;
                }
                filled += group.len();
            }
        }

        let (mut train_ids, mut test_ids) = (Vec::new(), Vec::new());
        for (a, &t) in manifest.iter().zip(&in_test) {
            if t {
                test_ids.push(a.asset_id.clone());
            } else {
                train_ids.push(a.asset_id.clone());
            }
        }
        splits.push(SplitSpec {
            seed: split_seed,
            train_ids,
            test_ids,
            ratio,
            group_by_prompt,
        });
    }
    Ok(splits)
}

/// Index from asset id to record, for joining files that share ids.
pub fn index_by_id<T, F>(items: &[T], key: F) -> HashMap<&str, &T>
where
    F: Fn(&T) -> &str,
{
    items.iter().map(|it| (key(it), it)).collect()
}
