//! Evaluation criteria: SRCC, KRCC (tau-b), PLCC after a five-parameter
//! logistic mapping, repeated-split benchmarking and the pairwise
//! variance-ratio significance test.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use crate::dataset::{Dimension, MosRecord, ScoreTriple, SplitSpec};
use crate::error::{Error, Result};

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Validation(format!(
            "correlation inputs differ in length: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "correlation needs at least 2 points, got {}",
            x.len()
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Validation("non-finite correlation input".into()));
    }
    Ok(())
}

fn is_constant(x: &[f64]) -> bool {
    x.iter().all(|&v| v == x[0])
}

fn check_not_constant(x: &[f64], y: &[f64]) -> Result<()> {
    if is_constant(x) || is_constant(y) {
        Err(Error::InsufficientData(
            "correlation is undefined for a constant vector".into(),
        ))
    } else {
        Ok(())
    }
}

/// Pearson linear correlation.
pub fn plcc(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    check_not_constant(x, y)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks with ties sharing their average rank.
pub fn mid_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation: Pearson correlation of mid-ranks.
pub fn srcc(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    check_not_constant(x, y)?;
    plcc(&mid_ranks(x), &mid_ranks(y))
}

/// Counts inversions while merge-sorting `v` in place.
fn count_inversions(v: &mut [f64], buf: &mut Vec<f64>) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut inv = {
        let (left, right) = v.split_at_mut(mid);
        count_inversions(left, buf) + count_inversions(right, buf)
    };
    buf.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf.push(v[j]);
            inv += (mid - i) as u64;
            j += 1;
        } else {
            buf.push(v[i]);
            i += 1;
        }
    }
    buf.extend_from_slice(&v[i..mid]);
    buf.extend_from_slice(&v[j..n]);
    v.copy_from_slice(buf);
    inv
}

/// Number of pairs tied within runs of equal values of a sorted key.
fn tied_pairs<T: PartialEq>(sorted: impl Iterator<Item = T>) -> u64 {
    let mut total = 0u64;
    let mut run = 0u64;
    let mut prev: Option<T> = None;
    for v in sorted {
        if prev.as_ref() == Some(&v) {
            run += 1;
        } else {
            total += run * (run + 1) / 2;
            run = 0;
        }
        prev = Some(v);
    }
    total + run * (run + 1) / 2
}

/// Kendall tau-b, via Knight's O(n log n) algorithm.
pub fn krcc(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    check_not_constant(x, y)?;
    let n = x.len() as u64;
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(y[a].total_cmp(&y[b])));

    let n0 = n * (n - 1) / 2;
    let ties_x = tied_pairs(idx.iter().map(|&i| x[i].to_bits()));
    let ties_xy = tied_pairs(idx.iter().map(|&i| (x[i].to_bits(), y[i].to_bits())));

    let mut ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
    let mut buf = Vec::with_capacity(ys.len());
    let swaps = count_inversions(&mut ys, &mut buf);
    let ties_y = tied_pairs(ys.iter().map(|v| v.to_bits()));

    // concordant - discordant
    let s = n0 as i64 - ties_x as i64 - ties_y as i64 + ties_xy as i64 - 2 * swaps as i64;
    let denom = (((n0 - ties_x) as f64) * ((n0 - ties_y) as f64)).sqrt();
    Ok((s as f64 / denom).clamp(-1.0, 1.0))
}

/// `β1 (0.5 - 1/(1 + exp(β2 (y - β3)))) + β4 y + β5`.
pub fn logistic5(beta: &[f64; 5], y: f64) -> f64 {
    let z = beta[1] * (y - beta[2]);
    // 1/(1+e^z) without overflow
    let inv = if z >= 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    };
    beta[0] * (0.5 - inv) + beta[3] * y + beta[4]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticParams {
    pub beta: [f64; 5],
}

impl LogisticParams {
    pub fn apply(&self, y: f64) -> f64 {
        logistic5(&self.beta, y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub params: LogisticParams,
    pub mapped: Vec<f64>,
    pub sse: f64,
    /// False when the optimizer ran out of iterations before its tolerance
    /// was met; `params` is then the best point found.
    pub converged: bool,
}

fn sse(beta: &[f64; 5], pred: &[f64], mos: &[f64]) -> f64 {
    let v: f64 = pred
        .iter()
        .zip(mos)
        .map(|(&p, &m)| (logistic5(beta, p) - m).powi(2))
        .sum();
    if v.is_finite() {
        v
    } else {
        f64::INFINITY
    }
}

/// Least-squares line `mos ≈ slope * pred + intercept`.
pub fn affine_fit(pred: &[f64], mos: &[f64]) -> (f64, f64) {
    let n = pred.len() as f64;
    let mp = pred.iter().sum::<f64>() / n;
    let mm = mos.iter().sum::<f64>() / n;
    let sxy: f64 = pred.iter().zip(mos).map(|(p, m)| (p - mp) * (m - mm)).sum();
    let sxx: f64 = pred.iter().map(|p| (p - mp) * (p - mp)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, mm - slope * mp)
}

/// Nelder-Mead on `f`, starting from a simplex around `x0`. Returns the best
/// vertex, its value and whether the spread tolerance was met.
fn nelder_mead<F: Fn(&[f64; 5]) -> f64>(
    f: &F,
    x0: [f64; 5],
    scale: [f64; 5],
    max_iter: usize,
) -> ([f64; 5], f64, bool) {
    const N: usize = 5;
    let mut simplex: Vec<([f64; N], f64)> = Vec::with_capacity(N + 1);
    simplex.push((x0, f(&x0)));
    for i in 0..N {
        let mut x = x0;
        x[i] += if scale[i] != 0.0 { scale[i] } else { 1e-3 };
        simplex.push((x, f(&x)));
    }
    let tol = 1e-15;
    for _ in 0..max_iter {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[N].1;
        if (worst - best).abs() <= tol * (best.abs() + tol) {
            return (simplex[0].0, best, true);
        }
        let mut centroid = [0.0; N];
        for (x, _) in &simplex[..N] {
            for k in 0..N {
                centroid[k] += x[k] / N as f64;
            }
        }
        let along = |t: f64| {
            let mut x = [0.0; N];
            for k in 0..N {
                x[k] = centroid[k] + t * (simplex[N].0[k] - centroid[k]);
            }
            x
        };
        let xr = along(-1.0);
        let fr = f(&xr);
        if fr < simplex[0].1 {
            let xe = along(-2.0);
            let fe = f(&xe);
            simplex[N] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[N - 1].1 {
            simplex[N] = (xr, fr);
        } else {
            let (xc, fc) = if fr < worst {
                let x = along(-0.5);
                (x, f(&x))
            } else {
                let x = along(0.5);
                (x, f(&x))
            };
            if fc < worst.min(fr) {
                simplex[N] = (xc, fc);
            } else {
                let x_best = simplex[0].0;
                for (x, fx) in simplex.iter_mut().skip(1) {
                    for k in 0..N {
                        x[k] = x_best[k] + 0.5 * (x[k] - x_best[k]);
                    }
                    *fx = f(x);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    (simplex[0].0, simplex[0].1, false)
}

/// Fits the five-parameter logistic map from predictions to MOS by
/// least squares. Multi-start simplex descent (β3 at the min, mean and max of
/// the predictions, plus the pure affine fit) with restarts from the best
/// point until the simplex stops improving.
pub fn fit_logistic(pred: &[f64], mos: &[f64]) -> Result<LogisticFit> {
    check_pair(pred, mos)?;
    if pred.len() < 5 {
        return Err(Error::InsufficientData(format!(
            "logistic fitting needs at least 5 points, got {}",
            pred.len()
        )));
    }
    if is_constant(pred) {
        return Err(Error::InsufficientData(
            "cannot fit a logistic map to constant predictions".into(),
        ));
    }
    let n = pred.len() as f64;
    let p_min = pred.iter().copied().fold(f64::INFINITY, f64::min);
    let p_max = pred.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let p_mean = pred.iter().sum::<f64>() / n;
    let p_std = (pred.iter().map(|p| (p - p_mean).powi(2)).sum::<f64>() / n).sqrt();
    let m_min = mos.iter().copied().fold(f64::INFINITY, f64::min);
    let m_max = mos.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let m_range = (m_max - m_min).max(f64::EPSILON);
    let (slope, intercept) = affine_fit(pred, mos);

    let objective = |b: &[f64; 5]| sse(b, pred, mos);
    let scale = [
        0.1 * m_range,
        0.5 / p_std,
        0.1 * (p_max - p_min),
        0.1 * slope.abs().max(m_range / (p_max - p_min)),
        0.1 * m_range,
    ];

    let mut starts = vec![[0.0, 1.0 / p_std, p_mean, slope, intercept]];
    for b3 in [p_min, p_mean, p_max] {
        starts.push([m_range, 1.0 / p_std, b3, slope, intercept]);
    }

    let mut best: Option<([f64; 5], f64, bool)> = None;
    for start in starts {
        let mut x = start;
        let mut fx = objective(&x);
        let mut converged = false;
        for _ in 0..50 {
            let (xn, fxn, ok) = nelder_mead(&objective, x, scale, 4000);
            let improved = fxn < fx * (1.0 - 1e-12) || (fx > 0.0 && fxn == 0.0);
            if fxn <= fx {
                x = xn;
                fx = fxn;
            }
            converged = ok;
            if !improved {
                break;
            }
        }
        if best.as_ref().is_none_or(|b| fx < b.1) {
            best = Some((x, fx, converged));
        }
    }
    let (beta, fx, converged) = best.expect("at least one start");
    if !converged {
        log::warn!("logistic fit stopped before convergence (sse {fx:.3e})");
    }
    let params = LogisticParams { beta };
    Ok(LogisticFit {
        mapped: pred.iter().map(|&p| params.apply(p)).collect(),
        params,
        sse: fx,
        converged,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionEval {
    pub dim: Dimension,
    pub srcc: f64,
    pub krcc: f64,
    /// PLCC after logistic mapping.
    pub plcc: f64,
    pub plcc_raw: f64,
    pub logistic: LogisticParams,
    /// `mapped - mos` per item, in input order.
    pub residuals: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub asset_ids: Vec<String>,
    pub dims: Vec<DimensionEval>,
}

impl Evaluation {
    pub fn dim(&self, dim: Dimension) -> &DimensionEval {
        &self.dims[dim.index()]
    }
}

/// Pairs each prediction with its label. Every prediction needs a label;
/// extra labels are ignored.
pub fn align<'a>(
    preds: &'a [ScoreTriple],
    labels: &'a [MosRecord],
) -> Result<Vec<(&'a ScoreTriple, &'a MosRecord)>> {
    let by_id: HashMap<&str, &MosRecord> =
        labels.iter().map(|l| (l.asset_id.as_str(), l)).collect();
    let mut seen = HashSet::new();
    let mut missing = Vec::new();
    let mut pairs = Vec::with_capacity(preds.len());
    for p in preds {
        if !seen.insert(p.asset_id.as_str()) {
            return Err(Error::Validation(format!(
                "duplicate prediction for {}",
                p.asset_id
            )));
        }
        match by_id.get(p.asset_id.as_str()) {
            Some(l) => pairs.push((p, *l)),
            None => missing.push(p.asset_id.as_str()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Validation(format!(
            "no MOS label for: {}",
            missing.join(", ")
        )));
    }
    Ok(pairs)
}

/// SRCC and KRCC on raw predictions, PLCC after the logistic map.
pub fn evaluate(preds: &[ScoreTriple], labels: &[MosRecord]) -> Result<Evaluation> {
    let pairs = align(preds, labels)?;
    if pairs.len() < 5 {
        return Err(Error::InsufficientData(format!(
            "evaluation needs at least 5 items, got {}",
            pairs.len()
        )));
    }
    let mut dims = Vec::with_capacity(3);
    for dim in Dimension::ALL {
        let p: Vec<f64> = pairs.iter().map(|(s, _)| s.value(dim)).collect();
        let y: Vec<f64> = pairs.iter().map(|(_, l)| l.value(dim)).collect();
        let fit = fit_logistic(&p, &y)?;
        dims.push(DimensionEval {
            dim,
            srcc: srcc(&p, &y)?,
            krcc: krcc(&p, &y)?,
            plcc: plcc(&fit.mapped, &y)?,
            plcc_raw: plcc(&p, &y)?,
            logistic: fit.params,
            residuals: fit.mapped.iter().zip(&y).map(|(m, t)| m - t).collect(),
        });
    }
    Ok(Evaluation {
        asset_ids: pairs.iter().map(|(s, _)| s.asset_id.clone()).collect(),
        dims,
    })
}

/// Produces scores for the test side of a split.
pub trait ScoreProvider {
    fn name(&self) -> &str;
    fn scores(&mut self, split: &SplitSpec) -> Result<Vec<ScoreTriple>>;
}

/// Scores computed elsewhere, one triple per asset.
pub struct StaticScores {
    pub name: String,
    pub scores: Vec<ScoreTriple>,
}

impl ScoreProvider for StaticScores {
    fn name(&self) -> &str {
        &self.name
    }

    fn scores(&mut self, _split: &SplitSpec) -> Result<Vec<ScoreTriple>> {
        Ok(self.scores.clone())
    }
}

/// A scoring closure, e.g. one that trains on `split.train_ids` first.
pub struct FnScores<F> {
    pub name: String,
    pub f: F,
}

impl<F> ScoreProvider for FnScores<F>
where
    F: FnMut(&SplitSpec) -> Result<Vec<ScoreTriple>>,
{
    fn name(&self) -> &str {
        &self.name
    }

    fn scores(&mut self, split: &SplitSpec) -> Result<Vec<ScoreTriple>> {
        (self.f)(split)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionSummary {
    pub dim: Dimension,
    pub srcc_mean: f64,
    pub krcc_mean: f64,
    pub plcc_mean: f64,
    pub srcc: Vec<f64>,
    pub krcc: Vec<f64>,
    pub plcc: Vec<f64>,
    /// Post-mapping residuals pooled over the test sets of all splits, in
    /// split order then test-id order.
    pub residuals: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub method: String,
    pub split_seeds: Vec<u64>,
    pub group_by_prompt: bool,
    pub dims: Vec<DimensionSummary>,
    /// Asset id of every pooled residual.
    pub residual_ids: Vec<String>,
}

impl BenchmarkResult {
    pub fn dim(&self, dim: Dimension) -> &DimensionSummary {
        &self.dims[dim.index()]
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Evaluates `method` on the test side of each split.
pub fn run_benchmark(
    method: &mut dyn ScoreProvider,
    mos: &[MosRecord],
    splits: &[SplitSpec],
) -> Result<BenchmarkResult> {
    if splits.is_empty() {
        return Err(Error::Config("no splits to benchmark on".into()));
    }
    let mut per_dim: Vec<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> =
        vec![(Vec::new(), Vec::new(), Vec::new(), Vec::new()); 3];
    let mut residual_ids = Vec::new();

    for split in splits {
        let scores = method.scores(split)?;
        let by_id: HashMap<&str, &ScoreTriple> =
            scores.iter().map(|s| (s.asset_id.as_str(), s)).collect();
        let missing: Vec<&str> = split
            .test_ids
            .iter()
            .map(String::as_str)
            .filter(|id| !by_id.contains_key(id))
            .collect();
        if !missing.is_empty() {
            return Err(Error::Validation(format!(
                "{} produced no score for test asset(s): {}",
                method.name(),
                missing.join(", ")
            )));
        }
        let test_preds: Vec<ScoreTriple> = split
            .test_ids
            .iter()
            .map(|id| by_id[id.as_str()].clone())
            .collect();
        let eval = evaluate(&test_preds, mos)?;
        for d in &eval.dims {
            let acc = &mut per_dim[d.dim.index()];
            acc.0.push(d.srcc);
            acc.1.push(d.krcc);
            acc.2.push(d.plcc);
            acc.3.extend(&d.residuals);
        }
        residual_ids.extend(eval.asset_ids);
    }

    let dims = Dimension::ALL
        .iter()
        .zip(per_dim)
        .map(|(&dim, (s, k, p, r))| DimensionSummary {
            dim,
            srcc_mean: mean(&s),
            krcc_mean: mean(&k),
            plcc_mean: mean(&p),
            srcc: s,
            krcc: k,
            plcc: p,
            residuals: r,
        })
        .collect();
    Ok(BenchmarkResult {
        method: method.name().to_string(),
        split_seeds: splits.iter().map(|s| s.seed).collect(),
        group_by_prompt: splits[0].group_by_prompt,
        dims,
        residual_ids,
    })
}

/// Several methods benchmarked on the same splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub seed: u64,
    pub n_splits: usize,
    pub group_by_prompt: bool,
    pub methods: Vec<BenchmarkResult>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Superior,
    Inferior,
    Indistinguishable,
}

impl Verdict {
    pub fn inverse(self) -> Self {
        match self {
            Verdict::Superior => Verdict::Inferior,
            Verdict::Inferior => Verdict::Superior,
            Verdict::Indistinguishable => Verdict::Indistinguishable,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Verdict::Superior => "1",
            Verdict::Inferior => "0",
            Verdict::Indistinguishable => "-",
        }
    }
}

fn sample_variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64
}

/// Variance-ratio F-test on the residuals of two methods. The method with
/// the significantly smaller residual variance is superior.
pub fn f_test(a: &[f64], b: &[f64], confidence: f64) -> Result<Verdict> {
    if a.len() != b.len() {
        return Err(Error::Validation(format!(
            "residual lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::InsufficientData(
            "F-test needs at least 2 residuals".into(),
        ));
    }
    let (va, vb) = (sample_variance(a), sample_variance(b));
    if va == vb {
        return Ok(Verdict::Indistinguishable);
    }
    let df = (a.len() - 1) as f64;
    let dist = FisherSnedecor::new(df, df)
        .map_err(|e| Error::Validation(format!("F distribution: {e}")))?;
    let critical = dist.inverse_cdf(confidence);
    if vb == 0.0 || va / vb > critical {
        Ok(Verdict::Inferior)
    } else if va == 0.0 || vb / va > critical {
        Ok(Verdict::Superior)
    } else {
        Ok(Verdict::Indistinguishable)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceMatrix {
    pub dim: Dimension,
    pub methods: Vec<String>,
    /// `verdicts[i][j]`: row method `i` compared with column method `j`.
    pub verdicts: Vec<Vec<Verdict>>,
}

/// Pairwise F-test verdicts at 95% confidence.
pub fn significance_matrix(
    dim: Dimension,
    methods: &[(String, Vec<f64>)],
) -> Result<SignificanceMatrix> {
    if methods.len() < 2 {
        return Err(Error::InsufficientData(
            "significance testing needs at least 2 methods".into(),
        ));
    }
    let n = methods.len();
    let mut verdicts = vec![vec![Verdict::Indistinguishable; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let v = f_test(&methods[i].1, &methods[j].1, 0.95)?;
            verdicts[i][j] = v;
            verdicts[j][i] = v.inverse();
        }
    }
    Ok(SignificanceMatrix {
        dim,
        methods: methods.iter().map(|(m, _)| m.clone()).collect(),
        verdicts,
    })
}

/// One matrix per dimension from a benchmark report.
pub fn report_significance(report: &BenchmarkReport) -> Result<Vec<SignificanceMatrix>> {
    if let Some(first) = report.methods.first() {
        if let Some(m) = report
            .methods
            .iter()
            .find(|m| m.residual_ids != first.residual_ids)
        {
            return Err(Error::Validation(format!(
                "{} and {} were not evaluated on the same test items",
                first.method, m.method
            )));
        }
    }
    Dimension::ALL
        .iter()
        .map(|&dim| {
            let methods: Vec<(String, Vec<f64>)> = report
                .methods
                .iter()
                .map(|m| (m.method.clone(), m.dim(dim).residuals.clone()))
                .collect();
            significance_matrix(dim, &methods)
        })
        .collect()
}

/// CSV rendering: one block per dimension, `dimension,method,<methods...>`.
pub fn significance_csv(matrices: &[SignificanceMatrix]) -> String {
    let mut out = String::new();
    for m in matrices {
        out.push_str("dimension,method");
        for name in &m.methods {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (i, row) in m.verdicts.iter().enumerate() {
            out.push_str(m.dim.name());
            out.push(',');
            out.push_str(&m.methods[i]);
            for v in row {
                out.push(',');
                out.push_str(v.symbol());
            }
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn correlation_examples() {
        assert!((srcc(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((srcc(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        assert!(
            (krcc(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap() - 4.0 / 6.0).abs() < 1e-15
        );
        let x = [0.5, 1.5, -2.0, 3.0];
        assert_eq!(krcc(&x, &x).unwrap(), 1.0);
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        assert!((plcc(&x, &y).unwrap() - 1.0).abs() < 1e-15);
        let z: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((plcc(&x, &z).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn constant_input_is_an_error() {
        for f in [srcc, krcc, plcc] {
            assert!(f(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
            assert!(f(&[1.0], &[1.0]).is_err());
            assert!(f(&[1.0, 2.0], &[1.0, 2.0, 3.0]).is_err());
        }
    }

    #[test]
    fn mid_ranks_average_ties() {
        assert_eq!(mid_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn logistic_at_centre() {
        assert_eq!(logistic5(&[1.0, 1.0, 0.0, 0.0, 0.0], 0.0), 0.0);
        assert!(logistic5(&[1.0, 1e6, 0.0, 0.0, 0.0], 1.0).is_finite());
    }

    #[test]
    fn f_test_verdicts() {
        let a: Vec<f64> = (0..50).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        assert_eq!(f_test(&a, &a, 0.95).unwrap(), Verdict::Indistinguishable);
        let b: Vec<f64> = a.iter().map(|v| 3.0 * v).collect();
        assert_eq!(f_test(&a, &b, 0.95).unwrap(), Verdict::Superior);
        assert_eq!(f_test(&b, &a, 0.95).unwrap(), Verdict::Inferior);
        assert!(f_test(&a, &b[..10], 0.95).is_err());
    }
}
