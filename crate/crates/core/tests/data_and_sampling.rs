use std::collections::HashSet;

use proptest::prelude::*;

use t23daqa::dataset::{
    load_manifest, load_mos, load_ratings, load_scores, make_splits, write_manifest, write_mos,
    write_ratings, write_scores,
};
use t23daqa::metrics::{report_significance, run_benchmark, BenchmarkReport, StaticScores};
use t23daqa::plots::{mos_histograms, plot_all};
use t23daqa::projection::{front_back_indices, sample_indices, segment_bounds, SampleMode};
use t23daqa::subjective::{process_ratings, OutlierParams};
use t23daqa::synthetic::{scripted_ratings, synthetic_assets, write_synthetic_dataset};
use t23daqa::{AssetRecord, MosRecord, RatingRecord, ScoreTriple};

#[test]
fn test_mode_and_front_back_indices_for_120_frames() {
    let idx = sample_indices(120, SampleMode::Test, 12, 0).unwrap();
    assert_eq!(idx, (0..12).map(|i| i * 10).collect::<Vec<_>>());
    assert_eq!(front_back_indices(120).unwrap(), (0, 60));
}

#[test]
fn train_mode_stays_in_segments() {
    for k in [12usize, 13, 50, 120, 121] {
        let segs = segment_bounds(k, 12).unwrap();
        for seed in 0..100 {
            let idx = sample_indices(k, SampleMode::Train, 12, seed).unwrap();
            assert_eq!(idx.len(), 12);
            for (i, r) in idx.iter().zip(&segs) {
                assert!(r.contains(i));
            }
        }
    }
    assert!(sample_indices(11, SampleMode::Test, 12, 0).is_err());
}

fn asset_strategy() -> impl Strategy<Value = AssetRecord> {
    (
        "[a-z0-9_]{1,10}",
        "[a-zA-Z ,]{1,40}",
        1usize..60,
        1u32..2048,
        1u32..2048,
    )
        .prop_map(|(id, prompt, half, w, h)| AssetRecord {
            asset_id: id.clone(),
            prompt: format!("p {prompt}"),
            generator: "dreamfusion".into(),
            video_path: format!("videos/{id}.mp4").into(),
            frame_count: 2 * half,
            width: w,
            height: h,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn records_round_trip(
        assets in prop::collection::vec(asset_strategy(), 1..8),
        values in prop::collection::vec(prop::array::uniform3(-20.0f64..120.0), 8),
        raw in prop::collection::vec(prop::array::uniform3(0u8..=50), 8),
    ) {
        let mut seen = HashSet::new();
        let assets: Vec<AssetRecord> = assets.into_iter().filter(|a| seen.insert(a.asset_id.clone())).collect();
        let dir = tempfile::tempdir().unwrap();

        let mp = dir.path().join("m.jsonl");
        write_manifest(&mp, &assets).unwrap();
        prop_assert_eq!(&load_manifest(&mp).unwrap(), &assets);

        let mos: Vec<MosRecord> = assets.iter().zip(&values).map(|(a, v)| MosRecord {
            asset_id: a.asset_id.clone(),
            mos: *v,
            n_valid_subjects: 3,
            n_outliers_removed: [0, 1, 2],
        }).collect();
        let mosp = dir.path().join("mos.jsonl");
        write_mos(&mosp, &mos).unwrap();
        prop_assert_eq!(&load_mos(&mosp).unwrap(), &mos);

        let scores: Vec<ScoreTriple> = mos.iter().map(|m| ScoreTriple::new(&m.asset_id, m.mos)).collect();
        let sp = dir.path().join("s.jsonl");
        write_scores(&sp, &scores).unwrap();
        prop_assert_eq!(&load_scores(&sp).unwrap(), &scores);

        let ratings: Vec<RatingRecord> = assets.iter().zip(&raw).map(|(a, r)| RatingRecord {
            subject_id: "s1".into(),
            asset_id: a.asset_id.clone(),
            scores: r.map(|x| x as f64 / 10.0),
            session: 2,
        }).collect();
        for name in ["r.csv", "r.jsonl"] {
            let rp = dir.path().join(name);
            write_ratings(&rp, &ratings).unwrap();
            prop_assert_eq!(&load_ratings(&rp).unwrap(), &ratings);
        }
    }

    #[test]
    fn splits_partition_without_overlap(n in 5usize..200, seed in 0u64..500) {
        let manifest: Vec<AssetRecord> = (0..n).map(|i| AssetRecord {
            asset_id: format!("x{i:03}"),
            prompt: format!("prompt {}", i % 7),
            generator: "magic3d".into(),
            video_path: "v.mp4".into(),
            frame_count: 120,
            width: 512,
            height: 512,
        }).collect();
        for grouped in [false, true] {
            for s in make_splits(&manifest, 3, seed, grouped).unwrap() {
                let train: HashSet<&String> = s.train_ids.iter().collect();
                let test: HashSet<&String> = s.test_ids.iter().collect();
                prop_assert!(train.is_disjoint(&test));
                prop_assert_eq!(train.len() + test.len(), n);
                if grouped {
                    let tp: HashSet<String> = s.test_ids.iter().map(|id| manifest.iter().find(|a| &a.asset_id == id).unwrap().prompt.clone()).collect();
                    prop_assert!(s.train_ids.iter().all(|id| !tp.contains(&manifest.iter().find(|a| &a.asset_id == id).unwrap().prompt)));
                }
            }
        }
    }
}

#[test]
fn plots_are_written_and_empty_input_fails() {
    let dir = tempfile::tempdir().unwrap();
    let ds = write_synthetic_dataset(dir.path(), 12, 4, (16, 16), 6, 2).unwrap();
    let (mos, _) =
        process_ratings(&ds.ratings, Some(&ds.manifest), &OutlierParams::default()).unwrap();
    let out = dir.path().join("plots");
    let files = plot_all(&ds.manifest, &mos, &out).unwrap();
    assert_eq!(files.len(), 5);
    for f in &files {
        let text = std::fs::read_to_string(f).unwrap();
        assert!(text.starts_with("<svg"));
    }
    assert!(mos_histograms(&[], &out).is_err());
    assert_eq!(mos_histograms(&mos[..1], &out).unwrap().len(), 3);
}

#[test]
fn benchmark_with_static_scores_and_significance() {
    let assets = synthetic_assets(40, 8);
    let ratings = scripted_ratings(&assets, 8, 0.3, 8);
    let (mos, _) = process_ratings(&ratings, None, &OutlierParams::default()).unwrap();
    let manifest: Vec<AssetRecord> = assets
        .iter()
        .map(|a| AssetRecord {
            asset_id: a.asset_id.clone(),
            prompt: a.prompt.clone(),
            generator: a.generator.clone(),
            video_path: "v.mp4".into(),
            frame_count: 12,
            width: 64,
            height: 64,
        })
        .collect();
    let splits = make_splits(&manifest, 4, 1, false).unwrap();
    let latent: Vec<ScoreTriple> = assets
        .iter()
        .map(|a| ScoreTriple::new(&a.asset_id, a.latent))
        .collect();
    let noisy: Vec<ScoreTriple> = assets
        .iter()
        .enumerate()
        .map(|(i, a)| {
            ScoreTriple::new(
                &a.asset_id,
                a.latent.map(|v| v + ((i * 7919) % 13) as f64 / 4.0),
            )
        })
        .collect();
    let mut methods = Vec::new();
    for (name, scores) in [("oracle", latent), ("noisy", noisy)] {
        let mut m = StaticScores {
            name: name.into(),
            scores,
        };
        methods.push(run_benchmark(&mut m, &mos, &splits).unwrap());
    }
    assert!(methods[0].dims[0].srcc_mean > methods[1].dims[0].srcc_mean);
    assert_eq!(methods[0].dims[0].srcc.len(), 4);
    let report = BenchmarkReport {
        seed: 1,
        n_splits: 4,
        group_by_prompt: false,
        methods,
    };
    let matrices = report_significance(&report).unwrap();
    assert_eq!(matrices.len(), 3);
    assert_eq!(
        matrices[0].verdicts[0][1],
        matrices[0].verdicts[1][0].inverse()
    );
}
