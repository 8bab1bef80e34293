//! Append-only JSONL rating store and the session state derived from it.

use std::collections::{HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use t23daqa::dataset::{write_ratings_csv, MAX_RAW_SCORE};
use t23daqa::{AssetRecord, RatingRecord};

pub const N_SUBSETS: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("subject {0} is not on the participant list")]
    Forbidden(String),
    #[error("unknown asset {0}")]
    UnknownAsset(String),
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    NotFound(String),
    #[error("store I/O on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// One line of the store. `overwrite` marks a revision of an earlier rating.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreEntry {
    pub seq: u64,
    pub subject_id: String,
    pub asset_id: String,
    pub scores: [f64; 3],
    pub subset_index: u32,
    #[serde(default)]
    pub overwrite: bool,
    pub timestamp_ms: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SessionView {
    pub subject_id: String,
    /// 1-based index of the subset being rated; the last subset once complete.
    pub subset_index: u32,
    pub subset_sizes: [usize; N_SUBSETS],
    /// Presentation order of the current subset.
    pub order: Vec<String>,
    pub cursor: usize,
    pub completed: bool,
    pub total_rated: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ItemView {
    pub asset_id: String,
    pub prompt: String,
    pub media_url: String,
    pub subset_index: u32,
    pub position: usize,
    pub subset_len: usize,
    /// The stored rating, for items already rated.
    pub rating: Option<[f64; 3]>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RatingSubmission {
    pub asset_id: String,
    pub q: f64,
    pub a: f64,
    pub c: f64,
    #[serde(default)]
    pub overwrite: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Acknowledgment {
    pub accepted: bool,
    pub overwrite: bool,
    pub seq: u64,
    pub session: SessionView,
}

/// Checks a slider value against the 0..5 range and the 0.1 grid, returning
/// the value snapped to the grid.
pub fn check_slider(name: &str, v: f64) -> Result<f64, StoreError> {
    if !v.is_finite() || !(0.0..=MAX_RAW_SCORE).contains(&v) {
        return Err(StoreError::Invalid(format!(
            "{name} = {v} is outside [0, 5]"
        )));
    }
    let scaled = v * 10.0;
    if (scaled - scaled.round()).abs() > 1e-9 {
        return Err(StoreError::Invalid(format!(
            "{name} = {v} is not a multiple of 0.1"
        )));
    }
    Ok(scaled.round() / 10.0)
}

fn subject_seed(seed: u64, subject: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in subject.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    seed ^ h
}

/// The three subsets of `ids` for one subject: a seeded shuffle cut into
/// contiguous parts, earlier parts taking the remainder.
pub fn subject_subsets(ids: &[String], subject: &str, seed: u64) -> [Vec<String>; N_SUBSETS] {
    let mut order = ids.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(subject_seed(seed, subject)));
    let base = order.len() / N_SUBSETS;
    let extra = order.len() % N_SUBSETS;
    let mut out: [Vec<String>; N_SUBSETS] = Default::default();
    let mut start = 0;
    for (i, part) in out.iter_mut().enumerate() {
        let len = base + usize::from(i < extra);
        *part = order[start..start + len].to_vec();
        start += len;
    }
    out
}

pub struct StoreConfig {
    pub manifest: Vec<AssetRecord>,
    pub store_path: PathBuf,
    pub seed: u64,
    /// Participants allowed to rate; `None` admits anyone.
    pub allowed_subjects: Option<HashSet<String>>,
    pub allow_overwrite: bool,
}

struct SubjectState {
    subsets: [Vec<String>; N_SUBSETS],
    /// Latest scores per rated asset.
    rated: HashMap<String, [f64; 3]>,
}

impl SubjectState {
    fn current_subset(&self) -> Option<usize> {
        self.subsets
            .iter()
            .position(|s| s.iter().any(|id| !self.rated.contains_key(id)))
    }

    fn cursor(&self, subset: usize) -> usize {
        self.subsets[subset]
            .iter()
            .take_while(|id| self.rated.contains_key(*id))
            .count()
    }
}

pub struct RatingStore {
    cfg: StoreConfig,
    ids: Vec<String>,
    by_id: HashMap<String, AssetRecord>,
    subjects: HashMap<String, SubjectState>,
    entries: Vec<StoreEntry>,
    /// 1-based line numbers of entries that could not be parsed.
    corrupt_lines: Vec<usize>,
    file: File,
    next_seq: u64,
}

impl RatingStore {
    /// Opens (or creates) the store and replays it.
    pub fn open(cfg: StoreConfig) -> Result<Self, StoreError> {
        let io = |source| StoreError::Io {
            path: cfg.store_path.clone(),
            source,
        };
        if let Some(parent) = cfg.store_path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(io)?;
            }
        }
        let mut entries = Vec::new();
        let mut corrupt_lines = Vec::new();
        if cfg.store_path.exists() {
            let reader = BufReader::new(File::open(&cfg.store_path).map_err(io)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line.map_err(io)?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<StoreEntry>(&line) {
                    Ok(e) => entries.push(e),
                    Err(err) => {
                        log::warn!("skipping corrupt store line {}: {err}", i + 1);
                        corrupt_lines.push(i + 1);
                    }
                }
            }
        }
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&cfg.store_path)
            .map_err(io)?;
        // terminate a torn last line so the next append starts cleanly
        let existing = std::fs::read(&cfg.store_path).map_err(io)?;
        if existing.last().is_some_and(|&b| b != b'\n') {
            file.write_all(b"\n").map_err(io)?;
        }
        let ids: Vec<String> = cfg.manifest.iter().map(|a| a.asset_id.clone()).collect();
        let by_id = cfg
            .manifest
            .iter()
            .map(|a| (a.asset_id.clone(), a.clone()))
            .collect();
        let next_seq = entries.iter().map(|e| e.seq + 1).max().unwrap_or(0);
        let mut store = RatingStore {
            cfg,
            ids,
            by_id,
            subjects: HashMap::new(),
            entries: Vec::new(),
            corrupt_lines,
            file,
            next_seq,
        };
        for e in entries {
            if !store.by_id.contains_key(&e.asset_id) {
                log::warn!(
                    "store entry {} references unknown asset {}",
                    e.seq,
                    e.asset_id
                );
                continue;
            }
            store
                .subject_mut(&e.subject_id)
                .rated
                .insert(e.asset_id.clone(), e.scores);
            store.entries.push(e);
        }
        Ok(store)
    }

    pub fn corrupt_lines(&self) -> &[usize] {
        &self.corrupt_lines
    }

    pub fn entries(&self) -> &[StoreEntry] {
        &self.entries
    }

    pub fn asset(&self, asset_id: &str) -> Option<&AssetRecord> {
        self.by_id.get(asset_id)
    }

    fn authorize(&self, subject: &str) -> Result<(), StoreError> {
        if subject.is_empty() {
            return Err(StoreError::Invalid("empty subject id".into()));
        }
        match &self.cfg.allowed_subjects {
            Some(allowed) if !allowed.contains(subject) => {
                Err(StoreError::Forbidden(subject.to_string()))
            }
            _ => Ok(()),
        }
    }

    fn subject_mut(&mut self, subject: &str) -> &mut SubjectState {
        let (ids, seed) = (&self.ids, self.cfg.seed);
        self.subjects
            .entry(subject.to_string())
            .or_insert_with(|| SubjectState {
                subsets: subject_subsets(ids, subject, seed),
                rated: HashMap::new(),
            })
    }

    fn view(&mut self, subject: &str) -> SessionView {
        let st = self.subject_mut(subject);
        let sizes = [0, 1, 2].map(|i| st.subsets[i].len());
        let total_rated = st.rated.len();
        match st.current_subset() {
            Some(k) => SessionView {
                subject_id: subject.to_string(),
                subset_index: k as u32 + 1,
                subset_sizes: sizes,
                order: st.subsets[k].clone(),
                cursor: st.cursor(k),
                completed: false,
                total_rated,
            },
            None => SessionView {
                subject_id: subject.to_string(),
                subset_index: N_SUBSETS as u32,
                subset_sizes: sizes,
                order: st.subsets[N_SUBSETS - 1].clone(),
                cursor: sizes[N_SUBSETS - 1],
                completed: true,
                total_rated,
            },
        }
    }

    /// Session state for a subject; fails once all three subsets are done.
    pub fn session(&mut self, subject: &str) -> Result<SessionView, StoreError> {
        self.authorize(subject)?;
        let v = self.view(subject);
        if v.completed {
            return Err(StoreError::Conflict(format!(
                "subject {subject} has completed all {N_SUBSETS} subsets"
            )));
        }
        Ok(v)
    }

    /// Session state without the completion check.
    pub fn peek(&mut self, subject: &str) -> Result<SessionView, StoreError> {
        self.authorize(subject)?;
        Ok(self.view(subject))
    }

    fn item(&mut self, subject: &str, session: &SessionView, position: usize) -> ItemView {
        let asset_id = session.order[position].clone();
        let rating = self.subject_mut(subject).rated.get(&asset_id).copied();
        let prompt = self.by_id[&asset_id].prompt.clone();
        ItemView {
            media_url: format!("/media/{asset_id}"),
            asset_id,
            prompt,
            subset_index: session.subset_index,
            position,
            subset_len: session.order.len(),
            rating,
        }
    }

    pub fn current(&mut self, subject: &str) -> Result<ItemView, StoreError> {
        let s = self.session(subject)?;
        Ok(self.item(subject, &s, s.cursor))
    }

    /// The item before the cursor in the current subset, with its stored
    /// rating.
    pub fn previous(&mut self, subject: &str) -> Result<ItemView, StoreError> {
        let s = self.peek(subject)?;
        if s.cursor == 0 {
            return Err(StoreError::NotFound(
                "no previous item at the start of a subset".into(),
            ));
        }
        Ok(self.item(subject, &s, s.cursor - 1))
    }

    pub fn submit(
        &mut self,
        subject: &str,
        sub: &RatingSubmission,
    ) -> Result<Acknowledgment, StoreError> {
        self.authorize(subject)?;
        if !self.by_id.contains_key(&sub.asset_id) {
            return Err(StoreError::UnknownAsset(sub.asset_id.clone()));
        }
        let scores = [
            check_slider("q", sub.q)?,
            check_slider("a", sub.a)?,
            check_slider("c", sub.c)?,
        ];
        let session = self.view(subject);
        let already = self.subject_mut(subject).rated.contains_key(&sub.asset_id);
        let overwrite = if already {
            if !sub.overwrite {
                return Err(StoreError::Conflict(format!(
                    "{} is already rated; set overwrite to revise it",
                    sub.asset_id
                )));
            }
            if !self.cfg.allow_overwrite {
                return Err(StoreError::Conflict("rating revisions are disabled".into()));
            }
            true
        } else {
            let current = (!session.completed).then(|| &session.order[session.cursor]);
            if current != Some(&sub.asset_id) {
                return Err(StoreError::Conflict(format!(
                    "{} is not the current item (expected {})",
                    sub.asset_id,
                    current
                        .map(String::as_str)
                        .unwrap_or("none, session complete")
                )));
            }
            false
        };
        let subset_index = {
            let st = self.subject_mut(subject);
            st.subsets
                .iter()
                .position(|s| s.contains(&sub.asset_id))
                .expect("asset belongs to a subset") as u32
                + 1
        };
        let entry = StoreEntry {
            seq: self.next_seq,
            subject_id: subject.to_string(),
            asset_id: sub.asset_id.clone(),
            scores,
            subset_index,
            overwrite,
            timestamp_ms: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_millis() as u64)
                .unwrap_or(0),
        };
        self.append(&entry)?;
        self.next_seq += 1;
        self.subject_mut(subject)
            .rated
            .insert(entry.asset_id.clone(), scores);
        let seq = entry.seq;
        self.entries.push(entry);
        Ok(Acknowledgment {
            accepted: true,
            overwrite,
            seq,
            session: self.view(subject),
        })
    }

    fn append(&mut self, entry: &StoreEntry) -> Result<(), StoreError> {
        let mut line = serde_json::to_vec(entry).expect("entry serializes");
        line.push(b'\n');
        let io = |source| StoreError::Io {
            path: self.cfg.store_path.clone(),
            source,
        };
        // one write per line keeps appends atomic
        self.file.write_all(&line).map_err(io)?;
        self.file.sync_data().map_err(io)
    }

    /// Latest rating per (subject, asset), ordered by subject then first
    /// submission.
    pub fn latest_ratings(&self) -> Vec<RatingRecord> {
        let mut latest: HashMap<(&str, &str), &StoreEntry> = HashMap::new();
        let mut first_seen: Vec<(&str, &str)> = Vec::new();
        for e in &self.entries {
            let key = (e.subject_id.as_str(), e.asset_id.as_str());
            if latest.insert(key, e).is_none() {
                first_seen.push(key);
            }
        }
        first_seen.sort_by_key(|k| k.0);
        first_seen
            .into_iter()
            .map(|k| {
                let e = latest[&k];
                RatingRecord {
                    subject_id: e.subject_id.clone(),
                    asset_id: e.asset_id.clone(),
                    scores: e.scores,
                    session: e.subset_index,
                }
            })
            .collect()
    }

    /// Ratings in the CSV schema read by the subjective pipeline.
    pub fn export_csv(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        write_ratings_csv(&mut buf, &self.latest_ratings()).expect("in-memory CSV write");
        buf
    }

    pub fn media_path(&self, asset_id: &str, media_dir: &Path) -> Result<PathBuf, StoreError> {
        let asset = self
            .by_id
            .get(asset_id)
            .ok_or_else(|| StoreError::UnknownAsset(asset_id.to_string()))?;
        let path = if asset.video_path.is_absolute() {
            asset.video_path.clone()
        } else {
            media_dir.join(&asset.video_path)
        };
        if path.is_file() {
            Ok(path)
        } else {
            Err(StoreError::NotFound(format!(
                "no video file for {asset_id} at {}",
                path.display()
            )))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("a{i}")).collect()
    }

    #[test]
    fn subsets_partition_with_earlier_remainder() {
        let all = ids(969);
        let s = subject_subsets(&all, "alice", 1);
        assert_eq!(s.each_ref().map(Vec::len), [323, 323, 323]);
        let s = subject_subsets(&ids(8), "bob", 1);
        assert_eq!(s.each_ref().map(Vec::len), [3, 3, 2]);
        let mut joined: Vec<String> = s.concat();
        joined.sort();
        let mut expect = ids(8);
        expect.sort();
        assert_eq!(joined, expect);
        assert_eq!(
            subject_subsets(&all, "alice", 1),
            subject_subsets(&all, "alice", 1)
        );
        assert_ne!(
            subject_subsets(&all, "alice", 1),
            subject_subsets(&all, "carol", 1)
        );
    }

    #[test]
    fn slider_grid() {
        assert_eq!(check_slider("q", 3.2).unwrap(), 3.2);
        assert_eq!(check_slider("q", 0.30000000000000004).unwrap(), 0.3);
        assert!(check_slider("q", 3.25).is_err());
        assert!(check_slider("q", 5.1).is_err());
        assert!(check_slider("q", -0.1).is_err());
        assert!(check_slider("q", f64::NAN).is_err());
    }
}
