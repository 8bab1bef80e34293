use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use t23daqa::subjective::{
    compute_mos, detect_outliers, flag_beyond, process_ratings, zscore_rescale, OutlierParams,
};
use t23daqa::synthetic::{scripted_ratings, synthetic_assets};
use t23daqa::RatingRecord;

#[test]
fn gaussian_rule_flags_the_ninety() {
    let xs = [50.0, 51.0, 49.0, 50.0, 52.0, 90.0];
    assert_eq!(
        flag_beyond(&xs, 2.0),
        vec![false, false, false, false, false, true]
    );
}

fn perturb(ratings: &[RatingRecord], seed: u64) -> Vec<RatingRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = std::collections::HashMap::new();
    ratings
        .iter()
        .map(|r| {
            let (a, b) = *params
                .entry(r.subject_id.clone())
                .or_insert_with(|| (rng.random_range(0.2..3.0), rng.random_range(-5.0..5.0)));
            RatingRecord {
                scores: r.scores.map(|s| a * s + b),
                ..r.clone()
            }
        })
        .collect()
}

fn mos_of(ratings: &[RatingRecord]) -> Vec<[f64; 3]> {
    let mut subjects: Vec<&str> = ratings.iter().map(|r| r.subject_id.as_str()).collect();
    subjects.sort_unstable();
    subjects.dedup();
    compute_mos(&zscore_rescale(ratings, &subjects).unwrap())
        .unwrap()
        .into_iter()
        .map(|m| m.mos)
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn per_subject_affine_rescaling_leaves_mos_unchanged(seed in 0u64..1000) {
        let assets = synthetic_assets(15, seed);
        let ratings = scripted_ratings(&assets, 6, 0.4, seed);
        let base = mos_of(&ratings);
        let moved = mos_of(&perturb(&ratings, seed + 1));
        for (a, b) in base.iter().zip(&moved) {
            for d in 0..3 {
                prop_assert!((a[d] - b[d]).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn random_rater_is_rejected() {
    let mut rejected = 0;
    for seed in 0..20u64 {
        let assets = synthetic_assets(60, seed);
        let mut ratings = scripted_ratings(&assets, 16, 0.3, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xbad);
        for a in &assets {
            ratings.push(RatingRecord {
                subject_id: "random".into(),
                asset_id: a.asset_id.clone(),
                scores: [0; 3].map(|_| (rng.random_range(0..=50) as f64) / 10.0),
                session: 1,
            });
        }
        let report = detect_outliers(&ratings, &OutlierParams::default()).unwrap();
        if report.rejected_subjects.iter().any(|s| s == "random") {
            rejected += 1;
        }
    }
    assert!(
        rejected as f64 / 20.0 > 0.95,
        "rejected in {rejected}/20 runs"
    );
}

#[test]
fn scripted_panel_produces_ordered_mos() {
    let assets = synthetic_assets(30, 4);
    let ratings = scripted_ratings(&assets, 10, 0.2, 4);
    let (mos, report) = process_ratings(&ratings, None, &OutlierParams::default()).unwrap();
    assert_eq!(mos.len(), 30);
    // one flag in 30 assets already exceeds the 3% rate, so honest raters can
    // be dropped; enough of the panel must survive
    assert!(mos.iter().all(|m| m.n_valid_subjects >= 5));
    assert_eq!(report.rejected_subjects.len() + mos[0].n_valid_subjects, 10);
    let latent: Vec<f64> = assets.iter().map(|a| a.latent[0]).collect();
    let by_id: std::collections::HashMap<_, _> =
        mos.iter().map(|m| (m.asset_id.clone(), m.mos[0])).collect();
    let q: Vec<f64> = assets.iter().map(|a| by_id[&a.asset_id]).collect();
    assert!(t23daqa::metrics::srcc(&latent, &q).unwrap() > 0.95);
}
