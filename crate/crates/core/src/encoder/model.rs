//! The dual encoder: a bidirectional transformer text tower and a bottleneck
//! image tower projected into a shared embedding space.

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::layers::{self, LayerNormCache, LinearCache, LinearIds};
use super::params::{GradMode, ParamGroup, Params};
use super::tokenizer::TokenSequence;
use crate::error::{Error, Result};
use crate::util;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    /// Number of text transformer blocks.
    pub n_layers: usize,
    pub max_seq_len: usize,
    pub image_feature_dim: usize,
    pub embed_dim: usize,
    pub lora_rank: usize,
    /// Adapter output is multiplied by `lora_scale / lora_rank`.
    pub lora_scale: f64,
    /// Initial logit scale; the model stores its logarithm.
    pub temperature_init: f64,
    pub seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("n_layers", self.n_layers),
            ("max_seq_len", self.max_seq_len),
            ("image_feature_dim", self.image_feature_dim),
            ("embed_dim", self.embed_dim),
            ("lora_rank", self.lora_rank),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.lora_rank > self.d_model {
            return Err(Error::Config(format!(
                "lora_rank {} exceeds d_model {}",
                self.lora_rank, self.d_model
            )));
        }
        if self.max_seq_len < 2 {
            return Err(Error::Config("max_seq_len must be at least 2".into()));
        }
        if !(self.temperature_init > 0.0 && self.temperature_init.is_finite()) {
            return Err(Error::Config("temperature_init must be positive".into()));
        }
        if !self.lora_scale.is_finite() {
            return Err(Error::Config("lora_scale must be finite".into()));
        }
        Ok(())
    }

    pub fn adapter_scale(&self) -> f64 {
        self.lora_scale / self.lora_rank as f64
    }

    pub fn d_ff(&self) -> usize {
        4 * self.d_model
    }
}

#[derive(Debug, Clone)]
pub(crate) struct BlockIds {
    pub ln1: (usize, usize),
    pub q: LinearIds,
    pub k: LinearIds,
    pub v: LinearIds,
    pub o: LinearIds,
    pub ln2: (usize, usize),
    pub fc1: LinearIds,
    pub fc2: LinearIds,
}

#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub token_embedding: usize,
    pub position_embedding: usize,
    pub blocks: Vec<BlockIds>,
    pub ln_final: (usize, usize),
    pub text_projection: LinearIds,
    pub image_adapter: (usize, usize),
    pub image_projection: LinearIds,
    pub log_temperature: usize,
}

/// Replace the block-`layer` output at `position` before the next block reads it.
#[derive(Debug, Clone, PartialEq)]
pub struct Intervention {
    /// 1-based block index.
    pub layer: usize,
    pub position: usize,
    pub replacement: Array1<f64>,
}

/// Residual-stream states: entry 0 is the embedding output, entry `ℓ` the
/// output of block `ℓ`. Each entry is `tokens × d_model`.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenStateTrace {
    pub states: Vec<Array2<f64>>,
}

impl HiddenStateTrace {
    pub fn n_layers(&self) -> usize {
        self.states.len() - 1
    }

    pub fn len(&self) -> usize {
        self.states[0].nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn state(&self, layer: usize, position: usize) -> ArrayView1<'_, f64> {
        self.states[layer].row(position)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct BlockCache {
    ln1: LayerNormCache,
    h1: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    q_cache: LinearCache,
    k_cache: LinearCache,
    v_cache: LinearCache,
    pub(crate) probs: Vec<Array2<f64>>,
    attn: Array2<f64>,
    o_cache: LinearCache,
    ln2: LayerNormCache,
    h2: Array2<f64>,
    a1: Array2<f64>,
    g1: Array2<f64>,
    fc1_cache: LinearCache,
    fc2_cache: LinearCache,
}

/// Everything a text forward pass produced; enough to run its backward pass.
#[derive(Debug, Clone)]
pub struct TextPass {
    tokens: TokenSequence,
    states: Vec<Array2<f64>>,
    pub(crate) blocks: Vec<BlockCache>,
    patched: Vec<(usize, usize)>,
    lnf: LayerNormCache,
    pooled: Array2<f64>,
    proj_cache: LinearCache,
    norm: f64,
    pub embedding: Array1<f64>,
}

impl TextPass {
    pub fn trace(&self) -> HiddenStateTrace {
        HiddenStateTrace {
            states: self.states.clone(),
        }
    }

    pub fn into_trace(self) -> HiddenStateTrace {
        HiddenStateTrace { states: self.states }
    }

    /// Attention matrices of block `layer` (1-based), one per head.
    pub fn attention(&self, layer: usize) -> &[Array2<f64>] {
        &self.blocks[layer - 1].probs
    }
}

#[derive(Debug, Clone)]
pub struct ImagePass {
    x: Array1<f64>,
    z: Array1<f64>,
    a: Array1<f64>,
    norm: f64,
    pub embedding: Array1<f64>,
}

/// `τ·cos(image, text)` with `τ = exp(log_temperature)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimilarityScore(pub f64);

impl SimilarityScore {
    pub fn value(self) -> f64 {
        self.0
    }
}

pub const UNIT_NORM_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct DualEncoder {
    config: ModelConfig,
    pub(crate) params: Params,
    pub(crate) layout: Layout,
}

impl DualEncoder {
    /// Seeded initialization. Adapter up-projections start at zero.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = util::rng_for(config.seed, "model-init", 0);
        let mut p = Params::new();
        let d = config.d_model;
        let r = config.lora_rank;
        let f = config.image_feature_dim;
        let e = config.embed_dim;
        let ff = config.d_ff();

        let normal = |rng: &mut util::Rng, n: usize, std: f64| -> Vec<f64> {
            let dist = Normal::new(0.0, std).expect("valid std");
            (0..n).map(|_| dist.sample(rng)).collect()
        };
        let bb = ParamGroup::Backbone;

        let token_embedding = p.push("text.token_embedding".into(), vec![config.vocab_size, d], bb, normal(&mut rng, config.vocab_size * d, 1.0));
        let position_embedding = p.push("text.position_embedding".into(), vec![config.max_seq_len, d], bb, normal(&mut rng, config.max_seq_len * d, 0.5));

        let mut blocks = Vec::with_capacity(config.n_layers);
        for l in 1..=config.n_layers {
            let pre = format!("text.block.{l}");
            let ln1 = (
                p.push(format!("{pre}.ln1.gain"), vec![d], bb, vec![1.0; d]),
                p.push(format!("{pre}.ln1.bias"), vec![d], bb, vec![0.0; d]),
            );
            let linear = |p: &mut Params, rng: &mut util::Rng, name: &str, d_out: usize, d_in: usize, adapter: bool| {
                let w = p.push(format!("{pre}.{name}.weight"), vec![d_out, d_in], bb, normal(rng, d_out * d_in, 1.0 / (d_in as f64).sqrt()));
                let b = p.push(format!("{pre}.{name}.bias"), vec![d_out], bb, vec![0.0; d_out]);
                let lora = adapter.then(|| {
                    let g = ParamGroup::TextLora { layer: l };
                    let down = p.push(format!("{pre}.{name}.lora.down"), vec![r, d_in], g, normal(rng, r * d_in, 1.0 / (d_in as f64).sqrt()));
                    let up = p.push(format!("{pre}.{name}.lora.up"), vec![d_out, r], g, vec![0.0; d_out * r]);
                    (down, up)
                });
                LinearIds { weight: w, bias: Some(b), lora }
            };
            let q = linear(&mut p, &mut rng, "attn.q", d, d, true);
            let k = linear(&mut p, &mut rng, "attn.k", d, d, false);
            let v = linear(&mut p, &mut rng, "attn.v", d, d, true);
            let o = linear(&mut p, &mut rng, "attn.o", d, d, false);
            let ln2 = (
                p.push(format!("{pre}.ln2.gain"), vec![d], bb, vec![1.0; d]),
                p.push(format!("{pre}.ln2.bias"), vec![d], bb, vec![0.0; d]),
            );
            let fc1 = linear(&mut p, &mut rng, "mlp.fc1", ff, d, false);
            let fc2 = linear(&mut p, &mut rng, "mlp.fc2", d, ff, false);
            blocks.push(BlockIds { ln1, q, k, v, o, ln2, fc1, fc2 });
        }
        let ln_final = (
            p.push("text.ln_final.gain".into(), vec![d], bb, vec![1.0; d]),
            p.push("text.ln_final.bias".into(), vec![d], bb, vec![0.0; d]),
        );
        let head = ParamGroup::Head;
        let text_projection = LinearIds {
            weight: p.push("text.projection.weight".into(), vec![e, d], head, normal(&mut rng, e * d, 1.0 / (d as f64).sqrt())),
            bias: None,
            lora: None,
        };
        let image_adapter = (
            p.push("image.adapter.lora.down".into(), vec![r, f], ParamGroup::ImageLora, normal(&mut rng, r * f, 1.0 / (f as f64).sqrt())),
            p.push("image.adapter.lora.up".into(), vec![f, r], ParamGroup::ImageLora, vec![0.0; f * r]),
        );
        let image_projection = LinearIds {
            weight: p.push("image.projection.weight".into(), vec![e, f], head, normal(&mut rng, e * f, 1.0 / (f as f64).sqrt())),
            bias: Some(p.push("image.projection.bias".into(), vec![e], head, normal(&mut rng, e, 0.1))),
            lora: None,
        };
        let log_temperature = p.push("log_temperature".into(), vec![1], head, vec![config.temperature_init.ln()]);

        Ok(DualEncoder {
            config,
            params: p,
            layout: Layout {
                token_embedding,
                position_embedding,
                blocks,
                ln_final,
                text_projection,
                image_adapter,
                image_projection,
                log_temperature,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Redraw every adapter down-projection from `seed` and zero every
    /// up-projection, leaving all other tensors untouched.
    pub fn reset_adapters(&mut self, seed: u64) {
        let mut rng = util::rng_for(seed, "adapter-init", 0);
        for id in 0..self.params.len() {
            let spec = &self.params.specs()[id];
            if !matches!(spec.group, ParamGroup::TextLora { .. } | ParamGroup::ImageLora) {
                continue;
            }
            let fan_in = spec.shape[1];
            let down = spec.name.ends_with(".down");
            let data = self.params.data_mut(id);
            if down {
                let dist = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).expect("valid std");
                data.iter_mut().for_each(|v| *v = dist.sample(&mut rng));
            } else {
                data.fill(0.0);
            }
        }
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub fn n_layers(&self) -> usize {
        self.config.n_layers
    }

    pub fn temperature(&self) -> f64 {
        self.params.data(self.layout.log_temperature)[0].exp()
    }

    /// Digest of the frozen backbone tensors.
    pub fn backbone_digest(&self) -> String {
        self.params.digest(|g| g == ParamGroup::Backbone)
    }

    pub fn tokens_fit(&self, tokens: &TokenSequence) -> Result<()> {
        if tokens.len() > self.config.max_seq_len {
            return Err(Error::SequenceTooLong {
                len: tokens.len(),
                max: self.config.max_seq_len,
            });
        }
        if let Some(bad) = tokens.ids().iter().find(|&&i| i as usize >= self.config.vocab_size) {
            return Err(Error::Index(format!("token id {bad} >= vocab size {}", self.config.vocab_size)));
        }
        Ok(())
    }

    /// Text forward with optional residual-stream interventions.
    pub fn text_forward(&self, tokens: &TokenSequence, interventions: &[Intervention]) -> Result<TextPass> {
        self.tokens_fit(tokens)?;
        let t = tokens.len();
        let d = self.config.d_model;
        for iv in interventions {
            if iv.layer == 0 || iv.layer > self.config.n_layers {
                return Err(Error::Index(format!("intervention layer {} outside 1..={}", iv.layer, self.config.n_layers)));
            }
            if iv.position >= t {
                return Err(Error::Index(format!("intervention position {} outside 0..{t}", iv.position)));
            }
            if iv.replacement.len() != d {
                return Err(Error::Shape(format!("replacement has {} values, expected {d}", iv.replacement.len())));
            }
        }
        let p = &self.params;
        let lay = &self.layout;
        let scale = self.config.adapter_scale();

        let tok = p.mat(lay.token_embedding);
        let pos = p.mat(lay.position_embedding);
        let mut x0 = Array2::zeros((t, d));
        for (i, &id) in tokens.ids().iter().enumerate() {
            let mut row = x0.row_mut(i);
            row.assign(&tok.row(id as usize));
            row += &pos.row(i);
        }

        let mut states = Vec::with_capacity(self.config.n_layers + 1);
        states.push(x0);
        let mut blocks = Vec::with_capacity(self.config.n_layers);
        let mut patched = Vec::new();
        for (li, b) in lay.blocks.iter().enumerate() {
            let x = &states[li];
            let (h1, ln1) = layers::layer_norm_forward(x.view(), p.vec(b.ln1.0), p.vec(b.ln1.1));
            let (q, q_cache) = layers::linear_forward(p, &b.q, h1.view(), scale);
            let (k, k_cache) = layers::linear_forward(p, &b.k, h1.view(), scale);
            let (v, v_cache) = layers::linear_forward(p, &b.v, h1.view(), scale);
            let (attn, probs) = layers::attention_forward(q.view(), k.view(), v.view(), self.config.n_heads);
            let (ao, o_cache) = layers::linear_forward(p, &b.o, attn.view(), scale);
            let x_mid = x + &ao;
            let (h2, ln2) = layers::layer_norm_forward(x_mid.view(), p.vec(b.ln2.0), p.vec(b.ln2.1));
            let (a1, fc1_cache) = layers::linear_forward(p, &b.fc1, h2.view(), scale);
            let g1 = a1.mapv(layers::gelu);
            let (m, fc2_cache) = layers::linear_forward(p, &b.fc2, g1.view(), scale);
            let mut x_out = x_mid + &m;
            for iv in interventions.iter().filter(|iv| iv.layer == li + 1) {
                x_out.row_mut(iv.position).assign(&iv.replacement);
                patched.push((iv.layer, iv.position));
            }
            states.push(x_out);
            blocks.push(BlockCache {
                ln1,
                h1,
                q,
                k,
                v,
                q_cache,
                k_cache,
                v_cache,
                probs,
                attn,
                o_cache,
                ln2,
                h2,
                a1,
                g1,
                fc1_cache,
                fc2_cache,
            });
        }

        let eos = tokens.eos_position();
        let last = states.last().expect("at least the embedding state");
        let eos_state = last.slice(s![eos..eos + 1, ..]);
        let (pooled, lnf) = layers::layer_norm_forward(eos_state, p.vec(lay.ln_final.0), p.vec(lay.ln_final.1));
        let (u, proj_cache) = layers::linear_forward(p, &lay.text_projection, pooled.view(), scale);
        let (embedding, norm) = layers::l2_normalize(u.row(0));
        if !(norm.is_finite() && norm > 0.0) || embedding.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("text encoder activations".into()));
        }
        Ok(TextPass {
            tokens: tokens.clone(),
            states,
            blocks,
            patched,
            lnf,
            pooled,
            proj_cache,
            norm,
            embedding,
        })
    }

    /// Unit-norm text embedding; also returns the hidden-state trace if `record`.
    pub fn encode_text(
        &self,
        tokens: &TokenSequence,
        interventions: &[Intervention],
        record: bool,
    ) -> Result<(Array1<f64>, Option<HiddenStateTrace>)> {
        let pass = self.text_forward(tokens, interventions)?;
        let trace = record.then(|| pass.trace());
        Ok((pass.embedding, trace))
    }

    /// Backward from `d_embedding`, accumulating into `grads` (a zeroed copy of the params).
    pub fn text_backward(&self, pass: &TextPass, d_embedding: ArrayView1<f64>, grads: &mut Params, mode: GradMode) {
        let p = &self.params;
        let lay = &self.layout;
        let scale = self.config.adapter_scale();
        let d = self.config.d_model;
        let t = pass.tokens.len();

        let du = layers::l2_normalize_backward(pass.embedding.view(), pass.norm, d_embedding);
        let du = du.insert_axis(Axis(0));
        let d_pooled = layers::linear_backward(p, &lay.text_projection, pass.pooled.view(), &pass.proj_cache, du.view(), scale, grads, mode);
        let (d_eos, dg, db) = layers::layer_norm_backward(d_pooled.view(), &pass.lnf, p.vec(lay.ln_final.0));
        if mode.trains(ParamGroup::Backbone) {
            grads.vec_mut(lay.ln_final.0).scaled_add(1.0, &dg);
            grads.vec_mut(lay.ln_final.1).scaled_add(1.0, &db);
        }
        let mut dx = Array2::zeros((t, d));
        dx.row_mut(pass.tokens.eos_position()).assign(&d_eos.row(0));

        for li in (0..lay.blocks.len()).rev() {
            for &(layer, pos) in &pass.patched {
                if layer == li + 1 {
                    dx.row_mut(pos).fill(0.0);
                }
            }
            dx = self.block_backward(li, &pass.blocks[li], dx, grads, mode);
        }

        if mode.trains(ParamGroup::Backbone) {
            for (i, &id) in pass.tokens.ids().iter().enumerate() {
                grads.mat_mut(lay.token_embedding).row_mut(id as usize).scaled_add(1.0, &dx.row(i));
                grads.mat_mut(lay.position_embedding).row_mut(i).scaled_add(1.0, &dx.row(i));
            }
        }
    }

    fn block_backward(&self, li: usize, c: &BlockCache, dx_out: Array2<f64>, grads: &mut Params, mode: GradMode) -> Array2<f64> {
        let p = &self.params;
        let b = &self.layout.blocks[li];
        let scale = self.config.adapter_scale();
        let train_bb = mode.trains(ParamGroup::Backbone);

        let dg1 = layers::linear_backward(p, &b.fc2, c.g1.view(), &c.fc2_cache, dx_out.view(), scale, grads, mode);
        let mut da1 = dg1;
        da1.zip_mut_with(&c.a1, |g, &a| *g *= layers::gelu_grad(a));
        let dh2 = layers::linear_backward(p, &b.fc1, c.h2.view(), &c.fc1_cache, da1.view(), scale, grads, mode);
        let (dmid_ln, dg, db) = layers::layer_norm_backward(dh2.view(), &c.ln2, p.vec(b.ln2.0));
        if train_bb {
            grads.vec_mut(b.ln2.0).scaled_add(1.0, &dg);
            grads.vec_mut(b.ln2.1).scaled_add(1.0, &db);
        }
        let d_mid = dx_out + &dmid_ln;

        let d_attn = layers::linear_backward(p, &b.o, c.attn.view(), &c.o_cache, d_mid.view(), scale, grads, mode);
        let (dq, dk, dv) = layers::attention_backward(c.q.view(), c.k.view(), c.v.view(), &c.probs, d_attn.view());
        let mut dh1 = layers::linear_backward(p, &b.q, c.h1.view(), &c.q_cache, dq.view(), scale, grads, mode);
        dh1 += &layers::linear_backward(p, &b.k, c.h1.view(), &c.k_cache, dk.view(), scale, grads, mode);
        dh1 += &layers::linear_backward(p, &b.v, c.h1.view(), &c.v_cache, dv.view(), scale, grads, mode);
        let (dx_ln, dg, db) = layers::layer_norm_backward(dh1.view(), &c.ln1, p.vec(b.ln1.0));
        if train_bb {
            grads.vec_mut(b.ln1.0).scaled_add(1.0, &dg);
            grads.vec_mut(b.ln1.1).scaled_add(1.0, &db);
        }
        d_mid + &dx_ln
    }

    pub fn image_forward(&self, features: &[f64]) -> Result<ImagePass> {
        let f = self.config.image_feature_dim;
        if features.len() != f {
            return Err(Error::Shape(format!("image features have {} values, expected {f}", features.len())));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("image features".into()));
        }
        let p = &self.params;
        let lay = &self.layout;
        let scale = self.config.adapter_scale();
        let x = Array1::from(features.to_vec());
        let (down, up) = lay.image_adapter;
        let z = p.mat(down).dot(&x);
        let h = &x + &(p.mat(up).dot(&z) * scale);
        let a = h.mapv(f64::tanh);
        let mut u = p.mat(lay.image_projection.weight).dot(&a);
        if let Some(b) = lay.image_projection.bias {
            u += &p.vec(b);
        }
        let (embedding, norm) = layers::l2_normalize(u.view());
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::NonFinite("image encoder activations".into()));
        }
        Ok(ImagePass { x, z, a, norm, embedding })
    }

    pub fn encode_image(&self, features: &[f64]) -> Result<Array1<f64>> {
        Ok(self.image_forward(features)?.embedding)
    }

    pub fn image_backward(&self, pass: &ImagePass, d_embedding: ArrayView1<f64>, grads: &mut Params, mode: GradMode) {
        let p = &self.params;
        let lay = &self.layout;
        let scale = self.config.adapter_scale();
        let du = layers::l2_normalize_backward(pass.embedding.view(), pass.norm, d_embedding);
        let w = lay.image_projection.weight;
        if mode.trains(ParamGroup::Head) {
            let outer = du.view().insert_axis(Axis(1)).dot(&pass.a.view().insert_axis(Axis(0)));
            grads.mat_mut(w).scaled_add(1.0, &outer);
            if let Some(b) = lay.image_projection.bias {
                grads.vec_mut(b).scaled_add(1.0, &du);
            }
        }
        if !mode.trains(ParamGroup::ImageLora) {
            return;
        }
        let da = p.mat(w).t().dot(&du);
        let dh = &da * &pass.a.mapv(|a| 1.0 - a * a);
        let (down, up) = lay.image_adapter;
        let d_up = dh.view().insert_axis(Axis(1)).dot(&pass.z.view().insert_axis(Axis(0))) * scale;
        grads.mat_mut(up).scaled_add(1.0, &d_up);
        let dz = p.mat(up).t().dot(&dh) * scale;
        let d_down = dz.view().insert_axis(Axis(1)).dot(&pass.x.view().insert_axis(Axis(0)));
        grads.mat_mut(down).scaled_add(1.0, &d_down);
    }

    /// `τ·⟨img, txt⟩` for unit-norm embeddings.
    pub fn similarity(&self, img: ArrayView1<f64>, txt: ArrayView1<f64>) -> Result<SimilarityScore> {
        similarity_with_temperature(img, txt, self.temperature())
    }

    pub(crate) fn log_temperature_id(&self) -> usize {
        self.layout.log_temperature
    }
}

/// Similarity at an explicit temperature; rejects non-unit inputs.
pub fn similarity_with_temperature(img: ArrayView1<f64>, txt: ArrayView1<f64>, tau: f64) -> Result<SimilarityScore> {
    if img.len() != txt.len() {
        return Err(Error::Shape(format!("embedding lengths {} and {} differ", img.len(), txt.len())));
    }
    for (name, n) in [("image", img.dot(&img).sqrt()), ("text", txt.dot(&txt).sqrt())] {
        if (n - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::Contract(format!("{name} embedding has norm {n}, expected 1")));
        }
    }
    Ok(SimilarityScore(tau * img.dot(&txt)))
}
