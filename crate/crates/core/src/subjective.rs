//! Raw ratings to MOS: outlier screening, subject rejection, per-subject
//! z-scoring, rescaling to 0..100 and averaging.
//!
//! Screening follows the usual BT.500 recipe: for every asset and dimension
//! the kurtosis of the panel's scores decides whether the distribution is
//! treated as Gaussian (`2 <= kurtosis <= 4`, outlier beyond 2 std) or not
//! (outlier beyond sqrt(20) std). A subject whose flagged fraction exceeds
//! the reject rate in any dimension is dropped entirely. Flagged ratings of
//! kept subjects are discarded before the subject means and deviations used
//! for z-scoring are computed.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::Serialize;

use crate::dataset::{AssetRecord, Dimension, MosRecord, RatingRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OutlierParams {
    pub gaussian_k: f64,
    pub non_gaussian_k: f64,
    pub subject_reject_rate: f64,
}

impl Default for OutlierParams {
    fn default() -> Self {
        OutlierParams {
            gaussian_k: 2.0,
            non_gaussian_k: 20f64.sqrt(),
            subject_reject_rate: 0.03,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DistributionClass {
    Gaussian,
    NonGaussian,
}

#[derive(Debug, Clone, Serialize)]
pub struct SubjectStats {
    pub subject_id: String,
    pub mean: [f64; 3],
    pub std: [f64; 3],
    pub outlier_rate: [f64; 3],
}

#[derive(Debug, Clone, Serialize)]
pub struct AssetDistribution {
    pub asset_id: String,
    pub dimension: Dimension,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub kurtosis: f64,
    pub class: DistributionClass,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct FlaggedRating {
    pub subject_id: String,
    pub asset_id: String,
    pub dimension: Dimension,
}

#[derive(Debug, Clone, Serialize)]
pub struct OutlierReport {
    pub params: OutlierParams,
    pub distributions: Vec<AssetDistribution>,
    pub flagged: Vec<FlaggedRating>,
    pub subject_stats: Vec<SubjectStats>,
    pub rejected_subjects: Vec<String>,
    /// Fraction of subjects rejected.
    pub subject_reject_fraction: f64,
    /// Per dimension, fraction of all ratings discarded (flagged or from a
    /// rejected subject).
    pub rating_discard_fraction: [f64; 3],
}

impl OutlierReport {
    pub fn is_flagged(&self, subject_id: &str, asset_id: &str, dim: Dimension) -> bool {
        self.flagged
            .iter()
            .any(|f| f.subject_id == subject_id && f.asset_id == asset_id && f.dimension == dim)
    }

    pub fn valid_subjects<'a>(&self, ratings: &'a [RatingRecord]) -> Vec<&'a str> {
        let rejected: HashSet<&str> = self.rejected_subjects.iter().map(String::as_str).collect();
        let subjects: BTreeSet<&str> = ratings
            .iter()
            .map(|r| r.subject_id.as_str())
            .filter(|s| !rejected.contains(s))
            .collect();
        subjects.into_iter().collect()
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample (n-1) standard deviation. Zero for fewer than two values.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}

/// Non-excess kurtosis `m4 / m2^2` from central moments. `None` when all
/// values coincide.
pub fn kurtosis(xs: &[f64]) -> Option<f64> {
    let m = mean(xs);
    let n = xs.len() as f64;
    let m2 = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    if m2 <= 0.0 {
        return None;
    }
    let m4 = xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
    Some(m4 / (m2 * m2))
}

pub fn classify(xs: &[f64]) -> (Option<f64>, DistributionClass) {
    let k = kurtosis(xs);
    let class = match k {
        Some(b2) if !(2.0..=4.0).contains(&b2) => DistributionClass::NonGaussian,
        _ => DistributionClass::Gaussian,
    };
    (k, class)
}

/// Marks each value further than `k` sample standard deviations from the mean.
pub fn flag_beyond(xs: &[f64], k: f64) -> Vec<bool> {
    let m = mean(xs);
    let sd = sample_std(xs);
    xs.iter().map(|x| (x - m).abs() > k * sd).collect()
}

fn check_rate(rate: f64) -> Result<()> {
    if (0.0..=1.0).contains(&rate) {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "subject_reject_rate {rate} outside [0, 1]"
        )))
    }
}

pub fn detect_outliers(ratings: &[RatingRecord], params: &OutlierParams) -> Result<OutlierReport> {
    check_rate(params.subject_reject_rate)?;

    let mut by_asset: BTreeMap<&str, Vec<&RatingRecord>> = BTreeMap::new();
    for r in ratings {
        by_asset.entry(r.asset_id.as_str()).or_default().push(r);
    }

    let mut distributions = Vec::new();
    let mut flagged = Vec::new();
    // (subject, dim) -> flagged count
    let mut flag_counts: HashMap<(&str, usize), usize> = HashMap::new();

    for (asset_id, recs) in &by_asset {
        if recs.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "asset {asset_id} has {} rating(s); outlier screening needs at least 2",
                recs.len()
            )));
        }
        for dim in Dimension::ALL {
            let xs: Vec<f64> = recs.iter().map(|r| r.score(dim)).collect();
            let (kurt, class) = classify(&xs);
            let k = match class {
                DistributionClass::Gaussian => params.gaussian_k,
                DistributionClass::NonGaussian => params.non_gaussian_k,
            };
            for (rec, out) in recs.iter().zip(flag_beyond(&xs, k)) {
                if out {
                    flagged.push(FlaggedRating {
                        subject_id: rec.subject_id.clone(),
                        asset_id: asset_id.to_string(),
                        dimension: dim,
                    });
                    *flag_counts
                        .entry((rec.subject_id.as_str(), dim.index()))
                        .or_default() += 1;
                }
            }
            distributions.push(AssetDistribution {
                asset_id: asset_id.to_string(),
                dimension: dim,
                n: xs.len(),
                mean: mean(&xs),
                std: sample_std(&xs),
                kurtosis: kurt.unwrap_or(f64::NAN),
                class,
            });
        }
    }
    flagged.sort();

    let mut by_subject: BTreeMap<&str, Vec<&RatingRecord>> = BTreeMap::new();
    for r in ratings {
        by_subject.entry(r.subject_id.as_str()).or_default().push(r);
    }
    let mut subject_stats = Vec::new();
    let mut rejected_subjects = Vec::new();
    for (subject, recs) in &by_subject {
        let mut stats = SubjectStats {
            subject_id: subject.to_string(),
            mean: [0.0; 3],
            std: [0.0; 3],
            outlier_rate: [0.0; 3],
        };
        for dim in Dimension::ALL {
            let d = dim.index();
            let xs: Vec<f64> = recs.iter().map(|r| r.score(dim)).collect();
            stats.mean[d] = mean(&xs);
            stats.std[d] = sample_std(&xs);
            let n_flagged = flag_counts.get(&(*subject, d)).copied().unwrap_or(0);
            stats.outlier_rate[d] = n_flagged as f64 / xs.len() as f64;
        }
        if stats
            .outlier_rate
            .iter()
            .any(|&rate| rate > params.subject_reject_rate)
        {
            rejected_subjects.push(subject.to_string());
        }
        subject_stats.push(stats);
    }

    let rejected: HashSet<&str> = rejected_subjects.iter().map(String::as_str).collect();
    let mut rating_discard_fraction = [0.0; 3];
    if !ratings.is_empty() {
        for dim in Dimension::ALL {
            let d = dim.index();
            let from_rejected = ratings
                .iter()
                .filter(|r| rejected.contains(r.subject_id.as_str()))
                .count();
            let flagged_kept = flagged
                .iter()
                .filter(|f| f.dimension == dim && !rejected.contains(f.subject_id.as_str()))
                .count();
            rating_discard_fraction[d] =
                (from_rejected + flagged_kept) as f64 / ratings.len() as f64;
        }
    }
    let subject_reject_fraction = if by_subject.is_empty() {
        0.0
    } else {
        rejected_subjects.len() as f64 / by_subject.len() as f64
    };

    Ok(OutlierReport {
        params: *params,
        distributions,
        flagged,
        subject_stats,
        rejected_subjects,
        subject_reject_fraction,
        rating_discard_fraction,
    })
}

/// Per-rating values after z-scoring and linear rescaling; `None` where the
/// rating was discarded in that dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct RescaledRating {
    pub subject_id: String,
    pub asset_id: String,
    pub values: [Option<f64>; 3],
}

/// Maps a z-score onto 0..100, with z = -3 and z = +3 landing on the ends.
pub fn rescale_z(z: f64) -> f64 {
    100.0 * (z + 3.0) / 6.0
}

/// z-scores each valid subject's ratings against that subject's own mean and
/// sample deviation per dimension, then rescales to 0..100.
pub fn zscore_rescale<S: AsRef<str>>(
    ratings: &[RatingRecord],
    valid_subjects: &[S],
) -> Result<Vec<RescaledRating>> {
    zscore_rescale_masked(ratings, valid_subjects, &HashSet::new())
}

/// As [`zscore_rescale`], skipping `(subject, asset, dimension)` triples in
/// `excluded` both when estimating subject statistics and in the output.
pub fn zscore_rescale_masked<S: AsRef<str>>(
    ratings: &[RatingRecord],
    valid_subjects: &[S],
    excluded: &HashSet<(String, String, Dimension)>,
) -> Result<Vec<RescaledRating>> {
    let valid: HashSet<&str> = valid_subjects.iter().map(AsRef::as_ref).collect();
    let kept = |r: &RatingRecord, dim: Dimension| {
        !excluded.contains(&(r.subject_id.clone(), r.asset_id.clone(), dim))
    };

    let mut by_subject: BTreeMap<&str, Vec<&RatingRecord>> = BTreeMap::new();
    for r in ratings
        .iter()
        .filter(|r| valid.contains(r.subject_id.as_str()))
    {
        by_subject.entry(r.subject_id.as_str()).or_default().push(r);
    }

    let mut out = Vec::new();
    for (subject, recs) in by_subject {
        let mut mu = [0.0; 3];
        let mut sigma = [0.0; 3];
        for dim in Dimension::ALL {
            let xs: Vec<f64> = recs
                .iter()
                .filter(|r| kept(r, dim))
                .map(|r| r.score(dim))
                .collect();
            let sd = sample_std(&xs);
            if xs.len() < 2 || !(sd > 0.0) {
                return Err(Error::InsufficientData(format!(
                    "subject {subject} has zero rating deviation in {dim} \
                     ({} usable ratings); reject this subject before z-scoring",
                    xs.len()
                )));
            }
            mu[dim.index()] = mean(&xs);
            sigma[dim.index()] = sd;
        }
        for r in recs {
            let mut values = [None; 3];
            for dim in Dimension::ALL {
                if kept(r, dim) {
                    let d = dim.index();
                    values[d] = Some(rescale_z((r.scores[d] - mu[d]) / sigma[d]));
                }
            }
            out.push(RescaledRating {
                subject_id: r.subject_id.clone(),
                asset_id: r.asset_id.clone(),
                values,
            });
        }
    }
    Ok(out)
}

/// Averages rescaled ratings over subjects, per asset and dimension.
/// Output is sorted by asset id; `n_outliers_removed` is left at zero.
pub fn compute_mos(z_primes: &[RescaledRating]) -> Result<Vec<MosRecord>> {
    struct Acc {
        sum: [f64; 3],
        n: [usize; 3],
        subjects: BTreeSet<String>,
    }
    let mut by_asset: BTreeMap<&str, Acc> = BTreeMap::new();
    for z in z_primes {
        let acc = by_asset.entry(z.asset_id.as_str()).or_insert_with(|| Acc {
            sum: [0.0; 3],
            n: [0; 3],
            subjects: BTreeSet::new(),
        });
        acc.subjects.insert(z.subject_id.clone());
        for (d, v) in z.values.iter().enumerate() {
            if let Some(v) = v {
                acc.sum[d] += v;
                acc.n[d] += 1;
            }
        }
    }

    let empty: Vec<&str> = by_asset
        .iter()
        .filter(|(_, acc)| acc.n.contains(&0))
        .map(|(id, _)| *id)
        .collect();
    if !empty.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no valid ratings left in some dimension for asset(s): {}",
            empty.join(", ")
        )));
    }

    Ok(by_asset
        .into_iter()
        .map(|(asset_id, acc)| {
            let mut mos = [0.0; 3];
            for d in 0..3 {
                mos[d] = acc.sum[d] / acc.n[d] as f64;
            }
            MosRecord {
                asset_id: asset_id.to_string(),
                mos,
                n_valid_subjects: acc.subjects.len(),
                n_outliers_removed: [0; 3],
            }
        })
        .collect())
}

/// The full ratings-to-MOS pipeline. With a manifest, every manifest asset
/// must be rated, every rated asset must be listed, and the output follows
/// manifest order.
pub fn process_ratings(
    ratings: &[RatingRecord],
    manifest: Option<&[AssetRecord]>,
    params: &OutlierParams,
) -> Result<(Vec<MosRecord>, OutlierReport)> {
    if let Some(manifest) = manifest {
        let listed: HashSet<&str> = manifest.iter().map(|a| a.asset_id.as_str()).collect();
        let rated: HashSet<&str> = ratings.iter().map(|r| r.asset_id.as_str()).collect();
        let mut unknown: Vec<&str> = rated.difference(&listed).copied().collect();
        if !unknown.is_empty() {
            unknown.sort_unstable();
            return Err(Error::Validation(format!(
                "ratings reference assets missing from the manifest: {}",
                unknown.join(", ")
            )));
        }
        let mut unrated: Vec<&str> = listed.difference(&rated).copied().collect();
        if !unrated.is_empty() {
            unrated.sort_unstable();
            return Err(Error::InsufficientData(format!(
                "manifest assets without ratings: {}",
                unrated.join(", ")
            )));
        }
    }

    let report = detect_outliers(ratings, params)?;
    let valid = report.valid_subjects(ratings);
    let excluded: HashSet<(String, String, Dimension)> = report
        .flagged
        .iter()
        .map(|f| (f.subject_id.clone(), f.asset_id.clone(), f.dimension))
        .collect();
    let rescaled = zscore_rescale_masked(ratings, &valid, &excluded)?;
    let mut mos = compute_mos(&rescaled)?;

    let valid_set: HashSet<&str> = valid.iter().copied().collect();
    for rec in &mut mos {
        for f in report
            .flagged
            .iter()
            .filter(|f| f.asset_id == rec.asset_id && valid_set.contains(f.subject_id.as_str()))
        {
            rec.n_outliers_removed[f.dimension.index()] += 1;
        }
    }

    if let Some(manifest) = manifest {
        let mut by_id: HashMap<String, MosRecord> =
            mos.into_iter().map(|m| (m.asset_id.clone(), m)).collect();
        let mut ordered = Vec::with_capacity(manifest.len());
        for a in manifest {
            match by_id.remove(&a.asset_id) {
                Some(m) => ordered.push(m),
                None => {
                    return Err(Error::InsufficientData(format!(
                        "asset {} lost all valid ratings",
                        a.asset_id
                    )))
                }
            }
        }
        mos = ordered;
    }
    Ok((mos, report))
}
