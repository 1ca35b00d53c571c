//! Symmetric contrastive loss, claim-ranking loss and their combination.

use ndarray::{Array2, ArrayView2, Axis};

use crate::encoder::{HeadOutput, LossHead};
use crate::error::{Error, Result};

/// `log Σ exp(xᵢ)`, shifted for stability.
fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Symmetric cross-entropy over an `N×N` logit matrix with the diagonal as
/// targets: `½(mean row CE + mean column CE)`. Returns the loss and `∂loss/∂logits`.
pub fn contrastive_loss_from_logits(logits: ArrayView2<f64>) -> Result<(f64, Array2<f64>)> {
    let (n, m) = logits.dim();
    if n != m {
        return Err(Error::Shape(format!("contrastive logits must be square, got {n}×{m}")));
    }
    if n < 2 {
        return Err(Error::Contract(format!("contrastive batch needs at least 2 pairs, got {n}")));
    }
    let nf = n as f64;
    let mut grad = Array2::zeros((n, n));
    let mut loss = 0.0;
    for i in 0..n {
        let row = logits.row(i);
        let lse = log_sum_exp(row.iter().copied());
        loss += 0.5 * (lse - row[i]) / nf;
        for j in 0..n {
            grad[[i, j]] += 0.5 * ((row[j] - lse).exp() - if i == j { 1.0 } else { 0.0 }) / nf;
        }
    }
    for j in 0..n {
        let col = logits.column(j);
        let lse = log_sum_exp(col.iter().copied());
        loss += 0.5 * (lse - col[j]) / nf;
        for i in 0..n {
            grad[[i, j]] += 0.5 * ((col[i] - lse).exp() - if i == j { 1.0 } else { 0.0 }) / nf;
        }
    }
    Ok((loss, grad))
}

/// Mean negative log-likelihood of the correct claim:
/// `−(1/M) Σᵢ log softmax(ℓᵢ)[cᵢ]`. Returns the loss and per-row logit gradients.
pub fn claim_loss_from_logits(rows: &[Vec<f64>], correct: &[usize]) -> Result<(f64, Vec<Vec<f64>>)> {
    if rows.is_empty() {
        return Err(Error::Contract("claim batch is empty".into()));
    }
    if rows.len() != correct.len() {
        return Err(Error::Shape("one correct index per claim set is required".into()));
    }
    let mf = rows.len() as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(rows.len());
    for (row, &c) in rows.iter().zip(correct) {
        if row.len() < 2 {
            return Err(Error::Contract(format!("claim set needs K >= 2 claims, got {}", row.len())));
        }
        if c >= row.len() {
            return Err(Error::Index(format!("correct index {c} outside 0..{}", row.len())));
        }
        let lse = log_sum_exp(row.iter().copied());
        loss += (lse - row[c]) / mf;
        grads.push(
            row.iter()
                .enumerate()
                .map(|(j, &x)| ((x - lse).exp() - if j == c { 1.0 } else { 0.0 }) / mf)
                .collect(),
        );
    }
    Ok((loss, grads))
}

/// `λ·clip + (1−λ)·claim`.
pub fn combined_loss(clip: f64, claim: f64, lambda: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Contract(format!("lambda {lambda} outside [0, 1]")));
    }
    Ok(lambda * clip + (1.0 - lambda) * claim)
}

/// In-batch contrastive head: image `i` matches text `i`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ContrastiveHead;

impl LossHead for ContrastiveHead {
    fn evaluate(&self, images: ArrayView2<f64>, texts: ArrayView2<f64>, tau: f64) -> Result<HeadOutput> {
        if images.nrows() != texts.nrows() {
            return Err(Error::Shape(format!(
                "{} images but {} captions",
                images.nrows(),
                texts.nrows()
            )));
        }
        let logits = images.dot(&texts.t()) * tau;
        let (loss, ds) = contrastive_loss_from_logits(logits.view())?;
        let d_log_temperature = (&ds * &logits).sum();
        Ok(HeadOutput {
            loss,
            d_images: ds.dot(&texts) * tau,
            d_texts: ds.t().dot(&images) * tau,
            d_log_temperature,
        })
    }
}

/// Claim-ranking head. Texts are laid out set by set: set `i` owns
/// `texts[offset_i .. offset_i + sizes[i]]` and scores them against image `i`.
#[derive(Debug, Clone, Default)]
pub struct ClaimHead {
    pub sizes: Vec<usize>,
    pub correct: Vec<usize>,
}

impl LossHead for ClaimHead {
    fn evaluate(&self, images: ArrayView2<f64>, texts: ArrayView2<f64>, tau: f64) -> Result<HeadOutput> {
        let total: usize = self.sizes.iter().sum();
        if images.nrows() != self.sizes.len() || texts.nrows() != total {
            return Err(Error::Shape("claim head layout does not match the batch".into()));
        }
        let mut rows = Vec::with_capacity(self.sizes.len());
        let mut offset = 0;
        for (i, &k) in self.sizes.iter().enumerate() {
            let block = texts.slice(ndarray::s![offset..offset + k, ..]);
            rows.push((block.dot(&images.row(i)) * tau).to_vec());
            offset += k;
        }
        let (loss, dl) = claim_loss_from_logits(&rows, &self.correct)?;
        let mut d_images = Array2::zeros(images.raw_dim());
        let mut d_texts = Array2::zeros(texts.raw_dim());
        let mut d_log_temperature = 0.0;
        let mut offset = 0;
        for (i, (g, row)) in dl.iter().zip(&rows).enumerate() {
            for (j, (&gj, &lj)) in g.iter().zip(row).enumerate() {
                d_images.row_mut(i).scaled_add(gj * tau, &texts.row(offset + j));
                d_texts.row_mut(offset + j).scaled_add(gj * tau, &images.row(i));
                d_log_temperature += gj * lj;
            }
            offset += g.len();
        }
        debug_assert_eq!(d_texts.len_of(Axis(0)), offset);
        Ok(HeadOutput {
            loss,
            d_images,
            d_texts,
            d_log_temperature,
        })
    }
}
