//! Training objective: a linearity term on batch z-scores plus a rank term,
//! summed over the three dimensions as `L = sum_d (L_lin + lambda * L_rank)`.
//!
//! Every loss comes with its analytic gradient with respect to the
//! predictions.

use serde::{Deserialize, Serialize};

use crate::dataset::{Dimension, MosRecord, ScoreTriple};
use crate::error::{Error, Result};

/// Prediction deviations below this are treated as this value when
/// z-scoring, so a collapsed batch still yields a finite gradient.
const MIN_PRED_STD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankVariant {
    /// Mean over ordered pairs of `max(0, -(p_i - p_j) * sgn(y_i - y_j))`.
    PairwiseSignHinge,
    /// Mean of `|p_i - y_i|`, the rank term read literally as a per-item penalty.
    AbsoluteError,
}

impl std::str::FromStr for RankVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pairwise_sign_hinge" => Ok(RankVariant::PairwiseSignHinge),
            "absolute_error" => Ok(RankVariant::AbsoluteError),
            other => Err(Error::Config(format!("unknown rank variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda: f64,
    pub rank_variant: RankVariant,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: 0.3,
            rank_variant: RankVariant::PairwiseSignHinge,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda >= 0.0 && self.lambda.is_finite() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )))
        }
    }
}

fn check_batch(pred: &[f64], label: &[f64]) -> Result<()> {
    if pred.len() != label.len() {
        return Err(Error::Validation(format!(
            "prediction/label length mismatch: {} vs {}",
            pred.len(),
            label.len()
        )));
    }
    if pred.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "losses need a batch of at least 2, got {}",
            pred.len()
        )));
    }
    Ok(())
}

/// Population mean and standard deviation.
fn moments(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

fn zscore_label(label: &[f64]) -> Result<Vec<f64>> {
    let (m, sd) = moments(label);
    if !(sd > 0.0) {
        return Err(Error::InsufficientData(
            "constant label vector; z-score is undefined".into(),
        ));
    }
    Ok(label.iter().map(|v| (v - m) / sd).collect())
}

pub fn linearity_loss(pred: &[f64], label: &[f64]) -> Result<f64> {
    Ok(linearity_loss_grad(pred, label)?.0)
}

/// `((mean((Ŝ-S)^2) + mean((ρŜ-S)^2)) / 2` with `ρ = mean(Ŝ S)`, where Ŝ and
/// S are the population z-scores of the predictions and labels.
pub fn linearity_loss_grad(pred: &[f64], label: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_batch(pred, label)?;
    let s = zscore_label(label)?;
    let (m, sd) = moments(pred);
    let sd = sd.max(MIN_PRED_STD);
    let s_hat: Vec<f64> = pred.iter().map(|p| (p - m) / sd).collect();
    let n = pred.len() as f64;

    let rho = s_hat.iter().zip(&s).map(|(a, b)| a * b).sum::<f64>() / n;
    let first = s_hat
        .iter()
        .zip(&s)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / n;
    let second = s_hat
        .iter()
        .zip(&s)
        .map(|(a, b)| (rho * a - b).powi(2))
        .sum::<f64>()
        / n;
    let loss = 0.5 * (first + second);

    // dL/dŜ
    let cross = s_hat
        .iter()
        .zip(&s)
        .map(|(a, b)| (rho * a - b) * a)
        .sum::<f64>();
    let g_hat: Vec<f64> = s_hat
        .iter()
        .zip(&s)
        .map(|(a, b)| ((a - b) + (rho * a - b) * rho + b * cross / n) / n)
        .collect();

    // through the z-score: dŜ_i/dp_k = (δ_ik - 1/n - Ŝ_i Ŝ_k / n) / σ
    let g_mean = g_hat.iter().sum::<f64>() / n;
    let g_dot = g_hat.iter().zip(&s_hat).map(|(g, a)| g * a).sum::<f64>() / n;
    let grad = g_hat
        .iter()
        .zip(&s_hat)
        .map(|(g, a)| (g - g_mean - a * g_dot) / sd)
        .collect();
    Ok((loss, grad))
}

fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn rank_loss(pred: &[f64], label: &[f64], variant: RankVariant) -> Result<f64> {
    Ok(rank_loss_grad(pred, label, variant)?.0)
}

pub fn rank_loss_grad(
    pred: &[f64],
    label: &[f64],
    variant: RankVariant,
) -> Result<(f64, Vec<f64>)> {
    check_batch(pred, label)?;
    let n = pred.len();
    let mut grad = vec![0.0; n];
    let loss = match variant {
        RankVariant::PairwiseSignHinge => {
            let pairs = (n * (n - 1)) as f64;
            let mut total = 0.0;
            for i in 0..n {
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let dir = sgn(label[i] - label[j]);
                    let h = -(pred[i] - pred[j]) * dir;
                    if h > 0.0 {
                        total += h;
                        grad[i] -= dir / pairs;
                        grad[j] += dir / pairs;
                    }
                }
            }
            total / pairs
        }
        RankVariant::AbsoluteError => {
            let nf = n as f64;
            let mut total = 0.0;
            for i in 0..n {
                let d = pred[i] - label[i];
                total += d.abs();
                grad[i] = sgn(d) / nf;
            }
            total / nf
        }
    };
    Ok((loss, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DimensionLoss {
    pub dim: Dimension,
    pub lin: f64,
    pub rank: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub per_dim: [DimensionLoss; 3],
}

/// Loss and `dL/dpred` for a batch of `(q, a, c)` predictions and labels.
pub fn total_loss_grad(
    preds: &[[f64; 3]],
    labels: &[[f64; 3]],
    cfg: &LossConfig,
) -> Result<(LossBreakdown, Vec<[f64; 3]>)> {
    cfg.validate()?;
    if preds.len() != labels.len() {
        return Err(Error::Validation(format!(
            "batch mismatch: {} predictions, {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let mut grads = vec![[0.0; 3]; preds.len()];
    let mut per_dim = [DimensionLoss {
        dim: Dimension::Quality,
        lin: 0.0,
        rank: 0.0,
        total: 0.0,
    }; 3];
    let mut total = 0.0;
    for dim in Dimension::ALL {
        let d = dim.index();
        let p: Vec<f64> = preds.iter().map(|x| x[d]).collect();
        let y: Vec<f64> = labels.iter().map(|x| x[d]).collect();
        let (lin, g_lin) = linearity_loss_grad(&p, &y)?;
        let (rank, g_rank) = rank_loss_grad(&p, &y, cfg.rank_variant)?;
        for (k, g) in grads.iter_mut().enumerate() {
            g[d] = g_lin[k] + cfg.lambda * g_rank[k];
        }
        let dim_total = lin + cfg.lambda * rank;
        per_dim[d] = DimensionLoss {
            dim,
            lin,
            rank,
            total: dim_total,
        };
        total += dim_total;
    }
    Ok((LossBreakdown { total, per_dim }, grads))
}

/// Loss over score triples paired with MOS records by position; the asset
/// ids must agree.
pub fn total_loss(
    preds: &[ScoreTriple],
    labels: &[MosRecord],
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    if preds.len() != labels.len() {
        return Err(Error::Validation(format!(
            "batch mismatch: {} predictions, {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if let Some((p, l)) = preds
        .iter()
        .zip(labels)
        .find(|(p, l)| p.asset_id != l.asset_id)
    {
        return Err(Error::Validation(format!(
            "prediction for {} paired with label for {}",
            p.asset_id, l.asset_id
        )));
    }
    let p: Vec<[f64; 3]> = preds.iter().map(ScoreTriple::values).collect();
    let y: Vec<[f64; 3]> = labels.iter().map(|l| l.mos).collect();
    Ok(total_loss_grad(&p, &y, cfg)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_variance(x: &[f64]) -> Vec<f64> {
        let (m, sd) = moments(x);
        x.iter().map(|v| (v - m) / sd).collect()
    }

    #[test]
    fn linearity_zero_on_affine_copies() {
        let y = [1.0, 4.0, 2.5, 3.0, 9.0];
        assert!(linearity_loss(&y, &y).unwrap().abs() < 1e-15);
        let p: Vec<f64> = y.iter().map(|v| 3.5 * v - 7.0).collect();
        assert!(linearity_loss(&p, &y).unwrap().abs() < 1e-12);
    }

    #[test]
    fn linearity_of_negation_is_two() {
        let s = unit_variance(&[0.3, -1.0, 2.2, 0.7, -0.4, 1.1]);
        let neg: Vec<f64> = s.iter().map(|v| -v).collect();
        assert!((linearity_loss(&neg, &s).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn linearity_errors() {
        assert!(linearity_loss(&[1.0, 2.0], &[3.0, 3.0]).is_err());
        assert!(linearity_loss(&[1.0], &[3.0]).is_err());
    }

    #[test]
    fn rank_examples() {
        let v = RankVariant::PairwiseSignHinge;
        assert_eq!(rank_loss(&[1.0, 2.0], &[1.0, 2.0], v).unwrap(), 0.0);
        assert_eq!(rank_loss(&[2.0, 1.0], &[1.0, 2.0], v).unwrap(), 1.0);
        assert_eq!(rank_loss(&[5.0, -3.0], &[1.0, 1.0], v).unwrap(), 0.0);
        assert_eq!(
            rank_loss(&[1.0, 3.0], &[2.0, 2.0], RankVariant::AbsoluteError).unwrap(),
            1.0
        );
    }

    #[test]
    fn lambda_zero_is_pure_linearity() {
        let preds = [
            [1.0, 2.0, 0.5],
            [2.0, 0.0, 1.5],
            [0.5, 1.0, 3.0],
            [3.0, 2.5, 0.1],
        ];
        let labels = [
            [10.0, 20.0, 30.0],
            [40.0, 10.0, 35.0],
            [15.0, 50.0, 60.0],
            [70.0, 5.0, 20.0],
        ];
        let cfg = LossConfig {
            lambda: 0.0,
            ..LossConfig::default()
        };
        let (b, _) = total_loss_grad(&preds, &labels, &cfg).unwrap();
        let lin_sum: f64 = (0..3)
            .map(|d| {
                let p: Vec<f64> = preds.iter().map(|x| x[d]).collect();
                let y: Vec<f64> = labels.iter().map(|x| x[d]).collect();
                linearity_loss(&p, &y).unwrap()
            })
            .sum();
        assert!((b.total - lin_sum).abs() < 1e-15);
        assert!(LossConfig {
            lambda: -1.0,
            ..cfg
        }
        .validate()
        .is_err());
    }

    #[test]
    fn mismatched_ids_rejected() {
        let preds = vec![
            ScoreTriple::new("a", [1.0; 3]),
            ScoreTriple::new("b", [2.0; 3]),
        ];
        let labels = vec![
            MosRecord {
                asset_id: "b".into(),
                mos: [1.0; 3],
                n_valid_subjects: 1,
                n_outliers_removed: [0; 3],
            },
            MosRecord {
                asset_id: "a".into(),
                mos: [2.0; 3],
                n_valid_subjects: 1,
                n_outliers_removed: [0; 3],
            },
        ];
        assert!(total_loss(&preds, &labels, &LossConfig::default()).is_err());
    }
}
