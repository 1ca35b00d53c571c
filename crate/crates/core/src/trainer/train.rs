//! The fine-tuning loop: seeded batches, combined loss, scaled gradients, AdamW.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::loss::{combined_loss, ClaimHead, ContrastiveHead};
use super::optim::{AdamW, AdamWConfig};
use super::scale::{bucket_of, scale_gradients, Bucket};
use crate::causal::LayerWeights;
use crate::data::StudyRecord;
use crate::encoder::{DualEncoder, GradMode, GradientMap, TokenSequence, Vocab};
use crate::error::{Error, Result};
use crate::util::{self, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta: f64,
    pub lambda_mix: f64,
    /// Image–caption pairs per contrastive batch.
    pub batch_size: usize,
    /// Claim sets per claim batch.
    pub claim_batch_size: usize,
    pub steps: usize,
    pub weight_decay: f64,
    pub adam_betas: [f64; 2],
    pub adam_eps: f64,
    pub seed: u64,
    pub with_replacement: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 2e-3,
            beta: 2.0,
            lambda_mix: 0.5,
            batch_size: 32,
            claim_batch_size: 8,
            steps: 300,
            weight_decay: 0.0,
            adam_betas: [0.9, 0.999],
            adam_eps: 1e-8,
            seed: 0,
            with_replacement: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be finite and >= 0, got {}", self.beta));
        }
        if !(0.0..=1.0).contains(&self.lambda_mix) {
            return bad(format!("lambda_mix must lie in [0, 1], got {}", self.lambda_mix));
        }
        if self.steps == 0 {
            return bad("steps must be >= 1".into());
        }
        if self.lambda_mix > 0.0 && self.batch_size < 2 {
            return bad("batch_size must be >= 2 for the contrastive loss".into());
        }
        if self.lambda_mix < 1.0 && self.claim_batch_size == 0 {
            return bad("claim_batch_size must be >= 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive".into());
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be >= 0".into());
        }
        if self.adam_betas.iter().any(|b| !(0.0..1.0).contains(b)) || !(self.adam_eps > 0.0) {
            return bad("adam betas must lie in [0, 1) and eps must be positive".into());
        }
        Ok(())
    }

    fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_betas[0],
            beta2: self.adam_betas[1],
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaptionItem {
    pub image: usize,
    pub text: String,
    pub tokens: TokenSequence,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClaimItem {
    pub image: usize,
    pub claims: Vec<TokenSequence>,
    pub correct: usize,
}

/// Which caption of each study feeds the contrastive loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaptionSource {
    /// The single-fact caption.
    Single,
    /// The multi-finding base-alignment summary.
    Base,
}

/// Pre-tokenized training data.
#[derive(Debug, Clone, Default)]
pub struct TrainData {
    pub features: Vec<Vec<f64>>,
    pub captions: Vec<CaptionItem>,
    pub claims: Vec<ClaimItem>,
}

impl TrainData {
    pub fn from_records(records: &[StudyRecord], vocab: &Vocab, max_len: usize, source: CaptionSource) -> Result<Self> {
        let mut d = TrainData::default();
        for (i, r) in records.iter().enumerate() {
            d.features.push(r.image_features.clone());
            let text = match source {
                CaptionSource::Single => &r.caption,
                CaptionSource::Base => &r.base_caption,
            };
            d.captions.push(CaptionItem {
                image: i,
                text: text.clone(),
                tokens: vocab.tokenize(text, max_len)?,
            });
            if r.claim_set.k() >= 2 {
                d.claims.push(ClaimItem {
                    image: i,
                    claims: r
                        .claim_set
                        .claims
                        .iter()
                        .map(|c| vocab.tokenize(c, max_len))
                        .collect::<Result<_>>()?,
                    correct: r.claim_set.correct_index,
                });
            }
        }
        Ok(d)
    }
}

/// Draws indices either with replacement or from one seeded permutation.
struct Sampler {
    n: usize,
    with_replacement: bool,
    order: Vec<usize>,
    cursor: usize,
    rng: Rng,
}

impl Sampler {
    fn new(n: usize, with_replacement: bool, mut rng: Rng) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        if !with_replacement {
            order.shuffle(&mut rng);
        }
        Sampler {
            n,
            with_replacement,
            order,
            cursor: 0,
            rng,
        }
    }

    fn next(&mut self, what: &str) -> Result<usize> {
        if self.n == 0 {
            return Err(Error::Data(format!("no {what} to sample from")));
        }
        if self.with_replacement {
            return Ok(self.rng.gen_range(0..self.n));
        }
        let i = *self
            .order
            .get(self.cursor)
            .ok_or_else(|| Error::Data(format!("{what} exhausted after {} draws without replacement", self.n)))?;
        self.cursor += 1;
        Ok(i)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub loss_total: f64,
    pub loss_clip: Option<f64>,
    pub loss_claim: Option<f64>,
}

/// Cumulative `Σ_t ‖Δθ‖₂` per text layer plus one bucket for everything else.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateNormLog {
    pub layers: Vec<f64>,
    pub other: f64,
    pub steps: usize,
}

impl UpdateNormLog {
    pub fn new(layers: usize) -> Self {
        UpdateNormLog {
            layers: vec![0.0; layers],
            other: 0.0,
            steps: 0,
        }
    }

    pub fn to_csv(&self) -> String {
        let total: f64 = self.layers.iter().sum();
        let mut s = String::from("bucket,cumulative_norm,share_of_text_layers\n");
        for (i, v) in self.layers.iter().enumerate() {
            let share = if total > 0.0 { v / total } else { 0.0 };
            s.push_str(&format!("layer_{},{v},{share}\n", i + 1));
        }
        s.push_str(&format!("other,{},\n", self.other));
        s
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: UpdateNormLog,
    pub curve: Vec<StepMetrics>,
    /// Scale factor applied to each trainable tensor on the last step.
    pub factors: BTreeMap<String, f64>,
}

fn caption_batch(data: &TrainData, sampler: &mut Sampler, n: usize) -> Result<Vec<usize>> {
    let mut seen = HashSet::with_capacity(n);
    let mut out = Vec::with_capacity(n);
    let limit = 1000 * n.max(1);
    for _ in 0..limit {
        if out.len() == n {
            break;
        }
        let i = sampler.next("captions")?;
        if seen.insert(data.captions[i].text.as_str()) {
            out.push(i);
        }
    }
    if out.len() < n {
        return Err(Error::Data(format!("could not draw {n} distinct captions")));
    }
    Ok(out)
}

/// Run `cfg.steps` optimizer steps. `weights` must have one α per text layer;
/// the uniform arm passes all ones.
pub fn train(
    model: &mut DualEncoder,
    data: &TrainData,
    weights: &LayerWeights,
    cfg: &TrainConfig,
    mode: GradMode,
    mut on_step: impl FnMut(&StepMetrics),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if weights.layers() != model.n_layers() {
        return Err(Error::Config(format!(
            "alpha has {} layers but the model has {}",
            weights.layers(),
            model.n_layers()
        )));
    }
    let use_clip = cfg.lambda_mix > 0.0;
    let use_claim = cfg.lambda_mix < 1.0;
    let mut cap_sampler = Sampler::new(data.captions.len(), cfg.with_replacement, util::rng_for(cfg.seed, "caption-batches", 0));
    let mut claim_sampler = Sampler::new(data.claims.len(), cfg.with_replacement, util::rng_for(cfg.seed, "claim-batches", 0));
    let mut opt = AdamW::new(cfg.adamw());
    let mut log = UpdateNormLog::new(model.n_layers());
    let mut curve = Vec::with_capacity(cfg.steps);
    let mut factors = BTreeMap::new();

    for step in 0..cfg.steps {
        let (loss_clip, g_clip) = if use_clip {
            let idx = caption_batch(data, &mut cap_sampler, cfg.batch_size)?;
            let imgs: Vec<&[f64]> = idx.iter().map(|&i| data.features[data.captions[i].image].as_slice()).collect();
            let txts: Vec<&TokenSequence> = idx.iter().map(|&i| &data.captions[i].tokens).collect();
            let (l, g) = model.forward_backward(&imgs, &txts, &ContrastiveHead, mode)?;
            (Some(l), g)
        } else {
            (None, GradientMap::default())
        };
        let (loss_claim, g_claim) = if use_claim {
            let mut imgs = Vec::with_capacity(cfg.claim_batch_size);
            let mut txts = Vec::new();
            let mut head = ClaimHead::default();
            for _ in 0..cfg.claim_batch_size {
                let item = &data.claims[claim_sampler.next("claim sets")?];
                imgs.push(data.features[item.image].as_slice());
                txts.extend(item.claims.iter());
                head.sizes.push(item.claims.len());
                head.correct.push(item.correct);
            }
            let (l, g) = model.forward_backward(&imgs, &txts, &head, mode)?;
            (Some(l), g)
        } else {
            (None, GradientMap::default())
        };
        let loss_total = combined_loss(loss_clip.unwrap_or(0.0), loss_claim.unwrap_or(0.0), cfg.lambda_mix)?;
        let grads = match (use_clip, use_claim) {
            (true, true) => g_clip.combine(cfg.lambda_mix, &g_claim, 1.0 - cfg.lambda_mix),
            (true, false) => g_clip,
            _ => g_claim,
        };
        let (scaled, f) = scale_gradients(&grads, model.params(), weights, cfg.beta)?;
        factors = f;

        let before: Vec<(usize, Vec<f64>)> = scaled
            .entries
            .keys()
            .map(|n| {
                let id = model.params().id(n).expect("checked by scaling");
                (id, model.params().data(id).to_vec())
            })
            .collect();
        opt.step(model.params_mut(), &scaled)?;
        let mut sq: BTreeMap<Bucket, f64> = BTreeMap::new();
        for (id, old) in &before {
            let new = model.params().data(*id);
            let d2: f64 = new.iter().zip(old).map(|(a, b)| (a - b) * (a - b)).sum();
            *sq.entry(bucket_of(model.params().specs()[*id].group)).or_default() += d2;
        }
        for (b, v) in sq {
            match b {
                Bucket::Layer(l) => log.layers[l - 1] += v.sqrt(),
                Bucket::Other => log.other += v.sqrt(),
            }
        }
        log.steps += 1;

        let m = StepMetrics {
            step,
            loss_total,
            loss_clip,
            loss_claim,
        };
        on_step(&m);
        curve.push(m);
    }
    Ok(TrainOutcome { log, curve, factors })
}

/// Percent of the text-layer update magnitude that landed in the `k`
/// highest-α layers (ties by lower index). The other bucket is excluded.
pub fn concentration_report(log: &UpdateNormLog, weights: &LayerWeights, k: usize) -> Result<f64> {
    if k == 0 || k > log.layers.len() || weights.layers() != log.layers.len() {
        return Err(Error::Contract(format!(
            "k = {k} must lie in 1..={} and match the alpha layers",
            log.layers.len()
        )));
    }
    let total: f64 = log.layers.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Contract("update norms are all zero; concentration is undefined".into()));
    }
    let top: f64 = weights.ranking().into_iter().take(k).map(|l| log.layers[l - 1]).sum();
    Ok(100.0 * top / total)
}
