use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use t23daqa::dataset::{
    load_manifest, load_mos, load_ratings, load_scores, make_splits_with_ratio, write_mos,
    write_scores,
};
use t23daqa::metrics::{
    evaluate, report_significance, run_benchmark, significance_csv, BenchmarkReport, Evaluation,
    StaticScores,
};
use t23daqa::model::encoders::FrameStem;
use t23daqa::model::Checkpoint;
use t23daqa::plots::plot_all;
use t23daqa::projection::{export_frames, load_clip, sample_frames, SampleMode};
use t23daqa::subjective::{process_ratings, OutlierParams};
use t23daqa::synthetic::write_synthetic_dataset;
use t23daqa::train::{
    ablation_grid, ablation_markdown, predict, prepare_assets, train, TrainConfig,
};
use t23daqa::{Error, Result, SplitSpec};
use t23daqa_service::{AppState, RatingStore, StoreConfig};

#[derive(Parser)]
#[command(
    name = "t23daqa",
    version,
    about = "Quality assessment for text-to-3D assets"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic study: frame directories, manifest and scripted ratings.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 12)]
        assets: usize,
        #[arg(long, default_value_t = 24)]
        frames: usize,
        #[arg(long, default_value_t = 64)]
        resolution: u32,
        #[arg(long, default_value_t = 8)]
        subjects: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Outlier screening, z-scoring and MOS computation.
    ProcessRatings {
        #[arg(long)]
        ratings: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Seeded train/test partitions, one JSON file per split.
    MakeSplits {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 10)]
        splits: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value = "4:1")]
        ratio: String,
        #[arg(long)]
        group_by_prompt: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Segment-sample each clip and write the frames as PNG files.
    SampleFrames {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "test")]
        mode: SampleMode,
        #[arg(long, default_value_t = 12)]
        segments: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and save a checkpoint.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Train on this split's train side; all MOS-labelled assets otherwise.
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        mos: PathBuf,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long, default_value = "model.json")]
        out: PathBuf,
        /// JSON-lines loss log.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Test-mode predictions from a checkpoint.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        /// Only score this split's test side.
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// SRCC, KRCC and PLCC of a score file against MOS.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        mos: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Repeated-split evaluation of every score file in a directory.
    Benchmark {
        #[arg(long)]
        methods: PathBuf,
        #[arg(long)]
        mos: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 10)]
        splits: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value = "4:1")]
        ratio: String,
        #[arg(long)]
        group_by_prompt: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pairwise F-test verdicts from a benchmark report.
    Significance {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate branch configurations on repeated splits.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "a,b,c,d,e,f,g")]
        grid: String,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        mos: PathBuf,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        splits: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value = "4:1")]
        ratio: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// MOS histograms and per-generator / per-prompt-length bar charts.
    Plot {
        #[arg(long)]
        mos: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the rating service.
    Serve {
        #[arg(long)]
        manifest: PathBuf,
        /// Directory that relative video paths resolve against.
        #[arg(long)]
        media_dir: Option<PathBuf>,
        #[arg(long, default_value = "ratings_store.jsonl")]
        store: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// File with one allowed subject id per line.
        #[arg(long)]
        subjects: Option<PathBuf>,
        #[arg(long)]
        no_overwrite: bool,
    },
}

fn parse_ratio(s: &str) -> Result<(u32, u32)> {
    let bad = || Error::Config(format!("ratio must look like 4:1, got {s:?}"));
    let (a, b) = s.split_once(':').ok_or_else(bad)?;
    Ok((
        a.trim().parse().map_err(|_| bad())?,
        b.trim().parse().map_err(|_| bad())?,
    ))
}

fn data_dir(explicit: Option<PathBuf>, manifest: &Path) -> PathBuf {
    explicit.unwrap_or_else(|| {
        manifest
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."))
    })
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            std::fs::create_dir_all(dir).map_err(|e| Error::Io {
                path: dir.to_path_buf(),
                source: e,
            })
        }
        _ => Ok(()),
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    ensure_parent(path)?;
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    ensure_parent(path)?;
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
}

fn load_config(path: Option<&Path>) -> Result<TrainConfig> {
    match path {
        Some(p) => TrainConfig::load(p),
        None => Ok(TrainConfig::default()),
    }
}

fn print_evaluation(eval: &Evaluation) {
    println!(
        "{:<15} {:>8} {:>8} {:>8}",
        "dimension", "SRCC", "KRCC", "PLCC"
    );
    for d in &eval.dims {
        println!(
            "{:<15} {:>8.4} {:>8.4} {:>8.4}",
            d.dim.name(),
            d.srcc,
            d.krcc,
            d.plcc
        );
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            out,
            assets,
            frames,
            resolution,
            subjects,
            seed,
        } => {
            let ds = write_synthetic_dataset(
                &out,
                assets,
                frames,
                (resolution, resolution),
                subjects,
                seed,
            )?;
            println!(
                "wrote {} assets and {} ratings to {}",
                ds.manifest.len(),
                ds.ratings.len(),
                out.display()
            );
        }
        Command::ProcessRatings {
            ratings,
            manifest,
            out,
            report,
        } => {
            let ratings = load_ratings(&ratings)?;
            let manifest = manifest.as_deref().map(load_manifest).transpose()?;
            let (mos, rep) =
                process_ratings(&ratings, manifest.as_deref(), &OutlierParams::default())?;
            ensure_parent(&out)?;
            write_mos(&out, &mos)?;
            if let Some(path) = report {
                write_json(&path, &rep)?;
            }
            println!(
                "{} MOS records; rejected subjects: {:?}",
                mos.len(),
                rep.rejected_subjects
            );
        }
        Command::MakeSplits {
            manifest,
            splits,
            seed,
            ratio,
            group_by_prompt,
            out,
        } => {
            let m = load_manifest(&manifest)?;
            let specs =
                make_splits_with_ratio(&m, splits, seed, group_by_prompt, parse_ratio(&ratio)?)?;
            std::fs::create_dir_all(&out).map_err(|e| Error::Io {
                path: out.clone(),
                source: e,
            })?;
            for (k, s) in specs.iter().enumerate() {
                s.save(&out.join(format!("split{k}.json")))?;
            }
            println!("wrote {} splits to {}", specs.len(), out.display());
        }
        Command::SampleFrames {
            manifest,
            mode,
            segments,
            seed,
            data_dir: dir,
            out,
        } => {
            let base = data_dir(dir, &manifest);
            let m = load_manifest(&manifest)?;
            let mut index = Vec::with_capacity(m.len());
            for asset in &m {
                let clip = load_clip(asset, &base)?;
                let sample = sample_frames(&clip, mode, segments, seed)?;
                let files = export_frames(&clip, &sample, &out.join(&asset.asset_id))?;
                index.push(json!({
                    "asset_id": asset.asset_id,
                    "indices": sample.indices,
                    "files": files,
                }));
            }
            write_json(&out.join("samples.json"), &index)?;
            println!("sampled {} clips into {}", m.len(), out.display());
        }
        Command::Train {
            config,
            split,
            manifest,
            mos,
            data_dir: dir,
            out,
            log,
        } => {
            let cfg = load_config(config.as_deref())?;
            cfg.validate()?;
            let base = data_dir(dir, &manifest);
            let m = load_manifest(&manifest)?;
            let labels = load_mos(&mos)?;
            let split = split.as_deref().map(SplitSpec::load).transpose()?;
            let train_ids: Vec<String> = match &split {
                Some(s) => s.train_ids.clone(),
                None => labels.iter().map(|l| l.asset_id.clone()).collect(),
            };
            let wanted: HashSet<&str> = train_ids
                .iter()
                .chain(split.iter().flat_map(|s| &s.test_ids))
                .map(String::as_str)
                .collect();
            let subset: Vec<_> = m
                .iter()
                .filter(|a| wanted.contains(a.asset_id.as_str()))
                .cloned()
                .collect();
            let assets = prepare_assets(
                &subset,
                &base,
                &cfg.preprocess(),
                FrameStem {
                    grid: cfg.stem_grid,
                },
            )?;
            let mut log_file = log.as_deref().map(create).transpose()?;
            let outcome = train(
                &cfg,
                &assets,
                &labels,
                &train_ids,
                log_file.as_mut().map(|w| w as &mut dyn Write),
            )?;
            if let Some(mut w) = log_file {
                w.flush().map_err(|e| Error::Io {
                    path: log.clone().unwrap_or_default(),
                    source: e,
                })?;
            }
            let eval_ids = split
                .as_ref()
                .map(|s| s.test_ids.clone())
                .unwrap_or(train_ids);
            let preds = predict(&outcome.model, &assets, Some(&eval_ids))?;
            let final_eval = match evaluate(&preds, &labels) {
                Ok(e) => {
                    print_evaluation(&e);
                    Some(e)
                }
                Err(e) => {
                    log::warn!("final evaluation skipped: {e}");
                    None
                }
            };
            let training = json!({
                "config": cfg,
                "split_seed": split.as_ref().map(|s| s.seed),
                "epoch_losses": outcome.epoch_losses,
                "final_eval_ids": eval_ids,
                "final_eval": final_eval,
            });
            ensure_parent(&out)?;
            Checkpoint::new(outcome.model, cfg.preprocess(), training).save(&out)?;
            println!("saved checkpoint to {}", out.display());
        }
        Command::Predict {
            checkpoint,
            manifest,
            data_dir: dir,
            split,
            out,
        } => {
            let ckpt = Checkpoint::load(&checkpoint, None)?;
            let base = data_dir(dir, &manifest);
            let mut m = load_manifest(&manifest)?;
            let split = split.as_deref().map(SplitSpec::load).transpose()?;
            if let Some(s) = &split {
                let keep: HashSet<&str> = s.test_ids.iter().map(String::as_str).collect();
                m.retain(|a| keep.contains(a.asset_id.as_str()));
            }
            let assets = prepare_assets(&m, &base, &ckpt.preprocess, ckpt.model.stem())?;
            let scores = predict(&ckpt.model, &assets, None)?;
            ensure_parent(&out)?;
            write_scores(&out, &scores)?;
            println!("wrote {} predictions to {}", scores.len(), out.display());
        }
        Command::Evaluate { pred, mos, out } => {
            let eval = evaluate(&load_scores(&pred)?, &load_mos(&mos)?)?;
            print_evaluation(&eval);
            if let Some(path) = out {
                write_json(&path, &eval)?;
            }
        }
        Command::Benchmark {
            methods,
            mos,
            manifest,
            splits,
            seed,
            ratio,
            group_by_prompt,
            out,
        } => {
            let labels = load_mos(&mos)?;
            let m = load_manifest(&manifest)?;
            let specs =
                make_splits_with_ratio(&m, splits, seed, group_by_prompt, parse_ratio(&ratio)?)?;
            let mut files: Vec<PathBuf> = std::fs::read_dir(&methods)
                .map_err(|e| Error::Io {
                    path: methods.clone(),
                    source: e,
                })?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
                .collect();
            files.sort();
            if files.is_empty() {
                return Err(Error::Config(format!(
                    "no .jsonl score files in {}",
                    methods.display()
                )));
            }
            let mut results = Vec::with_capacity(files.len());
            for f in files {
                let name = f
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
                let mut method = StaticScores {
                    name,
                    scores: load_scores(&f)?,
                };
                results.push(run_benchmark(&mut method, &labels, &specs)?);
            }
            println!(
                "{:<20} {:>8} {:>8} {:>8}",
                "method", "SRCC q", "SRCC a", "SRCC c"
            );
            for r in &results {
                println!(
                    "{:<20} {:>8.4} {:>8.4} {:>8.4}",
                    r.method, r.dims[0].srcc_mean, r.dims[1].srcc_mean, r.dims[2].srcc_mean
                );
            }
            let report = BenchmarkReport {
                seed,
                n_splits: splits,
                group_by_prompt,
                methods: results,
            };
            write_json(&out, &report)?;
        }
        Command::Significance { report, out } => {
            let text = std::fs::read_to_string(&report).map_err(|e| Error::Io {
                path: report.clone(),
                source: e,
            })?;
            let report: BenchmarkReport = serde_json::from_str(&text)?;
            let csv = significance_csv(&report_significance(&report)?);
            ensure_parent(&out)?;
            std::fs::write(&out, &csv).map_err(|e| Error::Io {
                path: out.clone(),
                source: e,
            })?;
            print!("{csv}");
        }
        Command::Ablate {
            config,
            grid,
            manifest,
            mos,
            data_dir: dir,
            splits,
            seed,
            ratio,
            out,
        } => {
            let cfg = load_config(config.as_deref())?;
            let labels: Vec<char> = grid
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| {
                    let mut chars = s.chars();
                    match (chars.next(), chars.next()) {
                        (Some(c), None) => Ok(c),
                        _ => Err(Error::Config(format!("bad grid entry {s:?}"))),
                    }
                })
                .collect::<Result<_>>()?;
            if labels.is_empty() {
                return Err(Error::Config("empty ablation grid".into()));
            }
            let base = data_dir(dir, &manifest);
            let m = load_manifest(&manifest)?;
            let mos = load_mos(&mos)?;
            let specs = make_splits_with_ratio(&m, splits, seed, false, parse_ratio(&ratio)?)?;
            let assets = prepare_assets(
                &m,
                &base,
                &cfg.preprocess(),
                FrameStem {
                    grid: cfg.stem_grid,
                },
            )?;
            let report = ablation_grid(&cfg, &labels, &assets, &mos, &specs)?;
            write_json(&out, &report)?;
            let md = ablation_markdown(&report);
            std::fs::write(out.with_extension("md"), &md).map_err(|e| Error::Io {
                path: out.with_extension("md"),
                source: e,
            })?;
            print!("{md}");
        }
        Command::Plot { mos, manifest, out } => {
            let files = plot_all(&load_manifest(&manifest)?, &load_mos(&mos)?, &out)?;
            for f in files {
                println!("{}", f.display());
            }
        }
        Command::Serve {
            manifest,
            media_dir,
            store,
            seed,
            addr,
            subjects,
            no_overwrite,
        } => {
            let media = data_dir(media_dir, &manifest);
            let allowed = subjects
                .map(|p| {
                    std::fs::read_to_string(&p)
                        .map(|t| {
                            t.lines()
                                .map(str::trim)
                                .filter(|l| !l.is_empty())
                                .map(String::from)
                                .collect::<HashSet<_>>()
                        })
                        .map_err(|e| Error::Io { path: p, source: e })
                })
                .transpose()?;
            let store = RatingStore::open(StoreConfig {
                manifest: load_manifest(&manifest)?,
                store_path: store,
                seed,
                allowed_subjects: allowed,
                allow_overwrite: !no_overwrite,
            })
            .map_err(|e| Error::Config(e.to_string()))?;
            if !store.corrupt_lines().is_empty() {
                log::warn!("skipped corrupt store lines {:?}", store.corrupt_lines());
            }
            let rt = tokio::runtime::Runtime::new().map_err(|e| Error::Io {
                path: PathBuf::from("<runtime>"),
                source: e,
            })?;
            rt.block_on(t23daqa_service::serve(addr, AppState::new(store, media)))
                .map_err(|e| Error::Io {
                    path: PathBuf::from(addr.to_string()),
                    source: e,
                })?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
