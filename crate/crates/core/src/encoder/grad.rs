//! Batched forward/backward through both towers and a loss head.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use super::model::{DualEncoder, ImagePass, TextPass};
use super::params::{GradMode, GradientMap, Params};
use super::tokenizer::TokenSequence;
use crate::error::{Error, Result};

/// Output of a loss head evaluated on embeddings.
#[derive(Debug, Clone)]
pub struct HeadOutput {
    pub loss: f64,
    /// `∂loss/∂image_embedding`, one row per image.
    pub d_images: Array2<f64>,
    /// `∂loss/∂text_embedding`, one row per text.
    pub d_texts: Array2<f64>,
    /// `∂loss/∂log τ`.
    pub d_log_temperature: f64,
}

/// A differentiable loss over unit-norm image and text embeddings at logit scale `tau`.
pub trait LossHead: Sync {
    fn evaluate(&self, images: ArrayView2<f64>, texts: ArrayView2<f64>, tau: f64) -> Result<HeadOutput>;
}

/// Sequences per gradient chunk; chunks are summed in index order so results
/// do not depend on the thread count.
const CHUNK: usize = 8;

fn stack(rows: impl ExactSizeIterator<Item = ndarray::Array1<f64>>, width: usize) -> Array2<f64> {
    let n = rows.len();
    let mut out = Array2::zeros((n, width));
    for (i, r) in rows.enumerate() {
        out.row_mut(i).assign(&r);
    }
    out
}

impl DualEncoder {
    /// Loss and gradients for the groups trained under `mode`. Parameters outside
    /// those groups are absent from the returned map.
    pub fn forward_backward(
        &self,
        images: &[&[f64]],
        texts: &[&TokenSequence],
        head: &dyn LossHead,
        mode: GradMode,
    ) -> Result<(f64, GradientMap)> {
        let image_passes: Vec<ImagePass> = images
            .par_iter()
            .map(|f| self.image_forward(f))
            .collect::<Result<_>>()?;
        let text_passes: Vec<TextPass> = texts
            .par_iter()
            .map(|t| self.text_forward(t, &[]))
            .collect::<Result<_>>()?;
        let e = self.config().embed_dim;
        let img = stack(image_passes.iter().map(|p| p.embedding.clone()), e);
        let txt = stack(text_passes.iter().map(|p| p.embedding.clone()), e);
        let out = head.evaluate(img.view(), txt.view(), self.temperature())?;
        if !out.loss.is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }

        let zero = self.params.zeros_like();
        let text_chunks: Vec<Params> = text_passes
            .par_chunks(CHUNK)
            .enumerate()
            .map(|(ci, chunk)| {
                let mut g = zero.clone();
                for (j, pass) in chunk.iter().enumerate() {
                    self.text_backward(pass, out.d_texts.row(ci * CHUNK + j), &mut g, mode);
                }
                g
            })
            .collect();
        let image_chunks: Vec<Params> = image_passes
            .par_chunks(CHUNK)
            .enumerate()
            .map(|(ci, chunk)| {
                let mut g = zero.clone();
                for (j, pass) in chunk.iter().enumerate() {
                    self.image_backward(pass, out.d_images.row(ci * CHUNK + j), &mut g, mode);
                }
                g
            })
            .collect();
        let mut grads = zero;
        for g in text_chunks.iter().chain(&image_chunks) {
            grads.add_assign(g);
        }
        grads.data_mut(self.log_temperature_id())[0] += out.d_log_temperature;

        let map = grads.into_gradient_map(mode);
        map.check_finite()?;
        Ok((out.loss, map))
    }

    /// Loss only, no gradients.
    pub fn loss(&self, images: &[&[f64]], texts: &[&TokenSequence], head: &dyn LossHead) -> Result<f64> {
        let img: Vec<_> = images
            .par_iter()
            .map(|f| self.encode_image(f))
            .collect::<Result<_>>()?;
        let txt: Vec<_> = texts
            .par_iter()
            .map(|t| self.text_forward(t, &[]).map(|p| p.embedding))
            .collect::<Result<_>>()?;
        let e = self.config().embed_dim;
        let out = head.evaluate(
            stack(img.into_iter(), e).view(),
            stack(txt.into_iter(), e).view(),
            self.temperature(),
        )?;
        Ok(out.loss)
    }
}
