//! GAN, auxiliary-classifier and subject-invariance losses with their
//! gradients with respect to the logits. All batch losses are means over the
//! batch.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GanVariant {
    DcGan,
    AcGan,
    SisGan,
}

impl GanVariant {
    pub fn name(self) -> &'static str {
        match self {
            GanVariant::DcGan => "dcgan",
            GanVariant::AcGan => "acgan",
            GanVariant::SisGan => "sisgan",
        }
    }

    pub fn conditional(self) -> bool {
        !matches!(self, GanVariant::DcGan)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GanLossWeights {
    pub lambda_a: f64,
    pub lambda_s: f64,
}

impl Default for GanLossWeights {
    fn default() -> Self {
        Self {
            lambda_a: 1.0,
            lambda_s: 0.3,
        }
    }
}

impl GanLossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_a", self.lambda_a), ("lambda_s", self.lambda_s)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} = {v} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// Binary cross-entropy of `sigmoid(logit)` against `target`, stable for
/// large `|logit|`.
pub fn bce_with_logits(logit: f64, target: f64) -> f64 {
    logit.max(0.0) - logit * target + (-logit.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean BCE over a batch and its gradient with respect to each logit.
pub fn bce_mean_grad(logits: &[f64], target: f64) -> (f64, Vec<f64>) {
    let n = logits.len() as f64;
    let loss = logits.iter().map(|&l| bce_with_logits(l, target)).sum::<f64>() / n;
    let grad = logits.iter().map(|&l| (sigmoid(l) - target) / n).collect();
    (loss, grad)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdversarialLosses {
    /// `BCE(D(x), 1) + BCE(D(x̃), 0)`.
    pub discriminator: f64,
    /// Non-saturating generator term `BCE(D(x̃), 1)`.
    pub generator: f64,
}

pub fn adversarial_losses(d_real_logits: &[f64], d_fake_logits: &[f64]) -> AdversarialLosses {
    let (real, _) = bce_mean_grad(d_real_logits, 1.0);
    let (fake, _) = bce_mean_grad(d_fake_logits, 0.0);
    let (gen, _) = bce_mean_grad(d_fake_logits, 1.0);
    AdversarialLosses {
        discriminator: real + fake,
        generator: gen,
    }
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Mean `-log softmax(logits)[label]` and its gradient.
pub fn cross_entropy_grad(logits: &Mat, labels: &[usize]) -> Result<(f64, Mat)> {
    if labels.len() != logits.rows {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {} rows of logits",
            labels.len(),
            logits.rows
        )));
    }
    let n = logits.rows as f64;
    let mut grad = Mat::zeros(logits.rows, logits.cols);
    let mut loss = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        if y >= logits.cols {
            return Err(Error::LabelOutOfRange {
                label: y,
                n_classes: logits.cols,
            });
        }
        let row = logits.row(r);
        loss += log_sum_exp(row) - row[y];
        let p = softmax(row);
        for (g, (k, pk)) in grad.row_mut(r).iter_mut().zip(p.into_iter().enumerate()) {
            *g = (pk - if k == y { 1.0 } else { 0.0 }) / n;
        }
    }
    Ok((loss / n, grad))
}

pub fn cross_entropy(logits: &Mat, labels: &[usize]) -> Result<f64> {
    cross_entropy_grad(logits, labels).map(|(l, _)| l)
}

/// Mean over the batch of the largest softmax probability, and its gradient.
/// Ties in the arg-max resolve to the lowest index.
pub fn subject_invariance_grad(logits: &Mat) -> (f64, Mat) {
    let n = logits.rows as f64;
    let mut grad = Mat::zeros(logits.rows, logits.cols);
    let mut loss = 0.0;
    for r in 0..logits.rows {
        let p = softmax(logits.row(r));
        let mut j = 0;
        for (k, &pk) in p.iter().enumerate() {
            if pk > p[j] {
                j = k;
            }
        }
        loss += p[j];
        for (k, g) in grad.row_mut(r).iter_mut().enumerate() {
            *g = p[j] * (if k == j { 1.0 } else { 0.0 } - p[k]) / n;
        }
    }
    (loss / n, grad)
}

pub fn subject_invariance_loss(logits: &Mat) -> f64 {
    subject_invariance_grad(logits).0
}

/// Generator objective: adversarial term plus the weighted auxiliary term
/// (AC-GAN, SIS-GAN) plus the weighted subject term (SIS-GAN only).
pub fn generator_total_loss(
    adversarial: f64,
    auxiliary: f64,
    subject: f64,
    weights: &GanLossWeights,
    variant: GanVariant,
) -> f64 {
    match variant {
        GanVariant::DcGan => adversarial,
        GanVariant::AcGan => adversarial + weights.lambda_a * auxiliary,
        GanVariant::SisGan => adversarial + weights.lambda_a * auxiliary + weights.lambda_s * subject,
    }
}
