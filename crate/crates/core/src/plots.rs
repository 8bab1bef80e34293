//! SVG figures describing a MOS table: per-dimension histograms and mean
//! MOS broken down by generator and by prompt length.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use plotters::prelude::*;

use crate::dataset::{AssetRecord, Dimension, MosRecord};
use crate::error::{Error, Result};
use crate::model::encoders::tokenize;

const DIM_COLORS: [RGBColor; 3] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
];

fn render_err(e: impl std::fmt::Display) -> Error {
    Error::Render {
        frame: 0,
        message: format!("plot: {e}"),
    }
}

/// Writes `mos_<dimension>.svg` histograms (20 bins) into `dir`.
pub fn mos_histograms(mos: &[MosRecord], dir: &Path) -> Result<Vec<PathBuf>> {
    if mos.is_empty() {
        return Err(Error::InsufficientData("no MOS records to plot".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let n_bins = 20usize;
    let mut paths = Vec::new();
    for dim in Dimension::ALL {
        let values: Vec<f64> = mos.iter().map(|m| m.value(dim)).collect();
        let lo = values
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
            .min(0.0);
        let hi = values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
            .max(100.0);
        let width = (hi - lo) / n_bins as f64;
        let mut counts = vec![0u32; n_bins];
        for v in &values {
            let b = (((v - lo) / width) as usize).min(n_bins - 1);
            counts[b] += 1;
        }
        let path = dir.join(format!("mos_{}.svg", dim.name()));
        {
            let root = SVGBackend::new(&path, (640, 420)).into_drawing_area();
            root.fill(&WHITE).map_err(render_err)?;
            let y_max = counts.iter().copied().max().unwrap_or(1).max(1);
            let mut chart = ChartBuilder::on(&root)
                .caption(
                    format!("MOS distribution: {}", dim.name()),
                    ("sans-serif", 20),
                )
                .margin(10)
                .x_label_area_size(35)
                .y_label_area_size(45)
                .build_cartesian_2d(lo..hi, 0u32..y_max + 1)
                .map_err(render_err)?;
            chart
                .configure_mesh()
                .x_desc("MOS")
                .y_desc("assets")
                .draw()
                .map_err(render_err)?;
            chart
                .draw_series(counts.iter().enumerate().map(|(i, &c)| {
                    let x0 = lo + i as f64 * width;
                    Rectangle::new([(x0, 0), (x0 + width, c)], DIM_COLORS[dim.index()].filled())
                }))
                .map_err(render_err)?;
            root.present().map_err(render_err)?;
        }
        paths.push(path);
    }
    Ok(paths)
}

/// Grouped bar chart, one group per category and one bar per dimension.
fn grouped_bars(path: &Path, title: &str, groups: &[(String, [f64; 3])]) -> Result<()> {
    if groups.is_empty() {
        return Err(Error::InsufficientData(format!(
            "nothing to plot for {title}"
        )));
    }
    let root = SVGBackend::new(path, (760, 440)).into_drawing_area();
    root.fill(&WHITE).map_err(render_err)?;
    let y_max = groups
        .iter()
        .flat_map(|(_, v)| v.iter().copied())
        .fold(0.0f64, f64::max)
        .max(1.0)
        * 1.1;
    let n = groups.len();
    let labels: Vec<String> = groups.iter().map(|(l, _)| l.clone()).collect();
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(40)
        .y_label_area_size(45)
        .build_cartesian_2d(0.0..n as f64, 0.0..y_max)
        .map_err(render_err)?;
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(n)
        .x_label_formatter(&|x| {
            let i = x.floor() as usize;
            labels.get(i).cloned().unwrap_or_default()
        })
        .y_desc("mean MOS")
        .draw()
        .map_err(render_err)?;
    for dim in Dimension::ALL {
        let d = dim.index();
        chart
            .draw_series(groups.iter().enumerate().map(|(i, (_, v))| {
                let x0 = i as f64 + 0.15 + 0.23 * d as f64;
                Rectangle::new([(x0, 0.0), (x0 + 0.22, v[d])], DIM_COLORS[d].filled())
            }))
            .map_err(render_err)?
            .label(dim.name())
            .legend(move |(x, y)| {
                Rectangle::new([(x, y - 5), (x + 10, y + 5)], DIM_COLORS[d].filled())
            });
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(render_err)?;
    root.present().map_err(render_err)
}

fn joined<'a>(
    manifest: &'a [AssetRecord],
    mos: &'a [MosRecord],
) -> Result<Vec<(&'a AssetRecord, &'a MosRecord)>> {
    if mos.is_empty() {
        return Err(Error::InsufficientData("no MOS records to plot".into()));
    }
    let by_id: BTreeMap<&str, &AssetRecord> =
        manifest.iter().map(|a| (a.asset_id.as_str(), a)).collect();
    mos.iter()
        .map(|m| {
            by_id
                .get(m.asset_id.as_str())
                .map(|a| (*a, m))
                .ok_or_else(|| {
                    Error::Validation(format!("asset {} missing from manifest", m.asset_id))
                })
        })
        .collect()
}

fn group_means<K: Ord + Clone>(items: impl Iterator<Item = (K, [f64; 3])>) -> Vec<(K, [f64; 3])> {
    let mut acc: BTreeMap<K, ([f64; 3], usize)> = BTreeMap::new();
    for (k, v) in items {
        let e = acc.entry(k).or_insert(([0.0; 3], 0));
        for d in 0..3 {
            e.0[d] += v[d];
        }
        e.1 += 1;
    }
    acc.into_iter()
        .map(|(k, (s, n))| (k, s.map(|x| x / n as f64)))
        .collect()
}

/// Mean MOS per generator.
pub fn generator_means(
    manifest: &[AssetRecord],
    mos: &[MosRecord],
) -> Result<Vec<(String, [f64; 3])>> {
    Ok(group_means(
        joined(manifest, mos)?
            .into_iter()
            .map(|(a, m)| (a.generator.clone(), m.mos)),
    ))
}

/// Mean MOS over six equal-width prompt-length bins (in tokens). Empty bins
/// are left out.
pub fn prompt_length_means(
    manifest: &[AssetRecord],
    mos: &[MosRecord],
) -> Result<Vec<(String, [f64; 3])>> {
    let pairs = joined(manifest, mos)?;
    let lens: Vec<usize> = pairs
        .iter()
        .map(|(a, _)| tokenize(&a.prompt).len())
        .collect();
    let lo = *lens.iter().min().expect("non-empty");
    let hi = *lens.iter().max().expect("non-empty");
    let width = ((hi - lo + 1) as f64 / 6.0).max(1.0);
    let bins = group_means(
        pairs
            .iter()
            .zip(&lens)
            .map(|((_, m), &l)| ((((l - lo) as f64 / width) as usize).min(5), m.mos)),
    );
    Ok(bins
        .into_iter()
        .map(|(b, v)| {
            let start = lo as f64 + b as f64 * width;
            let end = (start + width).ceil() - 1.0;
            (format!("{}-{}", start.ceil(), end.max(start.ceil())), v)
        })
        .collect())
}

pub fn generator_bars(manifest: &[AssetRecord], mos: &[MosRecord], path: &Path) -> Result<()> {
    grouped_bars(
        path,
        "Mean MOS by generator",
        &generator_means(manifest, mos)?,
    )
}

pub fn prompt_length_bars(manifest: &[AssetRecord], mos: &[MosRecord], path: &Path) -> Result<()> {
    grouped_bars(
        path,
        "Mean MOS by prompt length (tokens)",
        &prompt_length_means(manifest, mos)?,
    )
}

/// All figures for a dataset, written into `dir`.
pub fn plot_all(manifest: &[AssetRecord], mos: &[MosRecord], dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths = mos_histograms(mos, dir)?;
    let gen = dir.join("mos_by_generator.svg");
    generator_bars(manifest, mos, &gen)?;
    let len = dir.join("mos_by_prompt_length.svg");
    prompt_length_bars(manifest, mos, &len)?;
    paths.push(gen);
    paths.push(len);
    Ok(paths)
}
