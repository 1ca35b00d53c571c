//! Scoring: MCQ accuracy per polarity variant, the affirmative–negation gap,
//! retrieval recall and claim-ranking accuracy.

use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::McqPair;
use crate::data::StudyRecord;
use crate::encoder::{DualEncoder, Vocab};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Negated,
    Affirmative,
}

/// Anything that can score caption options against an image.
pub trait OptionScorer: Sync {
    fn score(&self, image: &[f64], options: &[&str]) -> Result<Vec<f64>>;
}

pub struct ModelScorer<'a> {
    pub model: &'a DualEncoder,
    pub vocab: &'a Vocab,
}

impl OptionScorer for ModelScorer<'_> {
    fn score(&self, image: &[f64], options: &[&str]) -> Result<Vec<f64>> {
        let img = self.model.encode_image(image)?;
        let max_len = self.model.config().max_seq_len;
        options
            .iter()
            .map(|o| {
                let (t, _) = self.model.encode_text(&self.vocab.tokenize(o, max_len)?, &[], false)?;
                Ok(self.model.similarity(img.view(), t.view())?.value())
            })
            .collect()
    }
}

/// First index of the maximum and whether the maximum was shared.
fn argmax(scores: &[f64]) -> (usize, bool) {
    let mut best = 0;
    let mut tied = false;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
            tied = false;
        } else if s == scores[best] {
            tied = true;
        }
    }
    (best, tied)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McqAccuracy {
    pub variant: Variant,
    /// Percent.
    pub accuracy: f64,
    pub n: usize,
    pub correct: usize,
    /// Pairs whose top score was shared; resolved to the lowest index.
    pub ties: usize,
}

pub fn evaluate_mcq(scorer: &dyn OptionScorer, pairs: &[McqPair], variant: Variant) -> Result<McqAccuracy> {
    if pairs.is_empty() {
        return Err(Error::Contract("no MCQ pairs to evaluate".into()));
    }
    let outcomes: Vec<(bool, bool)> = pairs
        .par_iter()
        .map(|p| {
            let opts: Vec<&str> = p.options(variant).iter().map(|o| o.text.as_str()).collect();
            let scores = scorer.score(&p.image_features, &opts)?;
            let (pick, tied) = argmax(&scores);
            Ok((pick == p.answer_index, tied))
        })
        .collect::<Result<_>>()?;
    let correct = outcomes.iter().filter(|o| o.0).count();
    let ties = outcomes.iter().filter(|o| o.1).count();
    if ties > 0 {
        log::info!("{ties} {variant:?} MCQs had tied top scores; lowest index chosen");
    }
    Ok(McqAccuracy {
        variant,
        accuracy: 100.0 * correct as f64 / pairs.len() as f64,
        n: pairs.len(),
        correct,
        ties,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub seed: u64,
    pub acc_affirmative: f64,
    pub acc_negated: f64,
    /// `acc_affirmative − acc_negated`.
    pub gap: f64,
    pub n_affirmative: usize,
    pub n_negated: usize,
}

impl GapReport {
    pub fn new(seed: u64, affirmative: &McqAccuracy, negated: &McqAccuracy) -> Self {
        GapReport {
            seed,
            acc_affirmative: affirmative.accuracy,
            acc_negated: negated.accuracy,
            gap: affirmative.accuracy - negated.accuracy,
            n_affirmative: affirmative.n,
            n_negated: negated.n,
        }
    }
}

pub fn gap_report(scorer: &dyn OptionScorer, pairs: &[McqPair], seed: u64) -> Result<GapReport> {
    let aff = evaluate_mcq(scorer, pairs, Variant::Affirmative)?;
    let neg = evaluate_mcq(scorer, pairs, Variant::Negated)?;
    Ok(GapReport::new(seed, &aff, &neg))
}

/// Unit text embeddings as rows.
pub fn embed_texts(model: &DualEncoder, vocab: &Vocab, texts: &[&str]) -> Result<Array2<f64>> {
    let max_len = model.config().max_seq_len;
    let rows: Vec<_> = texts
        .par_iter()
        .map(|t| Ok(model.encode_text(&vocab.tokenize(t, max_len)?, &[], false)?.0))
        .collect::<Result<_>>()?;
    stack(rows, model.config().embed_dim)
}

fn embed_images(model: &DualEncoder, images: &[&[f64]]) -> Result<Array2<f64>> {
    let rows: Vec<_> = images.par_iter().map(|x| model.encode_image(x)).collect::<Result<_>>()?;
    stack(rows, model.config().embed_dim)
}

fn stack(rows: Vec<ndarray::Array1<f64>>, dim: usize) -> Result<Array2<f64>> {
    let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
    if views.is_empty() {
        return Ok(Array2::zeros((0, dim)));
    }
    ndarray::stack(Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))
}

/// Image-to-text recall: row `i` of `sim` scores image `i` against every
/// caption, and caption `i` is its match. A hit at `k` means fewer than `k`
/// captions score strictly higher than the match. Percent.
pub fn recall_at_k(sim: &Array2<f64>, k: usize) -> Result<f64> {
    let n = sim.nrows();
    if n == 0 || sim.ncols() != n {
        return Err(Error::Shape(format!("similarity matrix must be square and nonempty, got {:?}", sim.dim())));
    }
    let hits = sim
        .outer_iter()
        .enumerate()
        .filter(|(i, row)| row.iter().filter(|&&s| s > row[*i]).count() < k)
        .count();
    Ok(100.0 * hits as f64 / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub r_at_1: f64,
    pub r_at_5: f64,
    pub n: usize,
}

/// Every image queries the pool of all single captions.
pub fn retrieval_report(model: &DualEncoder, vocab: &Vocab, records: &[StudyRecord]) -> Result<RetrievalReport> {
    let imgs: Vec<&[f64]> = records.iter().map(|r| r.image_features.as_slice()).collect();
    let caps: Vec<&str> = records.iter().map(|r| r.caption.as_str()).collect();
    let sim = embed_images(model, &imgs)?.dot(&embed_texts(model, vocab, &caps)?.t());
    Ok(RetrievalReport {
        r_at_1: recall_at_k(&sim, 1)?,
        r_at_5: recall_at_k(&sim, 5)?,
        n: records.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimReport {
    /// Percent of claim sets whose true claim scores highest.
    pub accuracy: f64,
    pub n: usize,
    pub ties: usize,
}

pub fn claim_accuracy(scorer: &dyn OptionScorer, records: &[StudyRecord]) -> Result<ClaimReport> {
    let sets: Vec<_> = records.iter().filter(|r| r.claim_set.k() >= 2).collect();
    if sets.is_empty() {
        return Err(Error::Contract("no claim sets to evaluate".into()));
    }
    let outcomes: Vec<(bool, bool)> = sets
        .par_iter()
        .map(|r| {
            let opts: Vec<&str> = r.claim_set.claims.iter().map(String::as_str).collect();
            let (pick, tied) = argmax(&scorer.score(&r.image_features, &opts)?);
            Ok((pick == r.claim_set.correct_index, tied))
        })
        .collect::<Result<_>>()?;
    let correct = outcomes.iter().filter(|o| o.0).count();
    Ok(ClaimReport {
        accuracy: 100.0 * correct as f64 / sets.len() as f64,
        n: sets.len(),
        ties: outcomes.iter().filter(|o| o.1).count(),
    })
}
