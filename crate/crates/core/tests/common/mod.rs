//! Shared fixtures: a hand-weighted 2-layer model, an independent plain-Vec
//! forward pass, and a finite-difference gradient checker.

#![allow(dead_code)]

use std::collections::BTreeSet;

use nast::encoder::{DualEncoder, GradMode, LossHead, ModelConfig, TokenSequence, Vocab};

pub fn probe_vocab() -> Vocab {
    let lex: BTreeSet<String> = ["there", "is", "no", "severe", "edema", "a", "small", "left", "effusion"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    Vocab::from_lexicon(&lex)
}

pub fn hand_config() -> ModelConfig {
    ModelConfig {
        vocab_size: probe_vocab().len(),
        d_model: 8,
        n_heads: 2,
        n_layers: 2,
        max_seq_len: 8,
        image_feature_dim: 5,
        embed_dim: 4,
        lora_rank: 2,
        lora_scale: 2.0,
        temperature_init: 4.0,
        seed: 0,
    }
}

/// Every tensor overwritten with a fixed trigonometric pattern, adapters included.
pub fn hand_weight_model() -> DualEncoder {
    let mut m = DualEncoder::new(hand_config()).unwrap();
    let names: Vec<(String, usize)> = m.params().specs().iter().map(|s| (s.name.clone(), s.numel())).collect();
    for (k, (name, _)) in names.iter().enumerate() {
        let data = m.params_mut().get_mut(name).unwrap();
        for (i, v) in data.iter_mut().enumerate() {
            let x = 0.37 * (1.3 * i as f64 + 0.71 * k as f64 + 0.2).sin();
            *v = if name.ends_with("gain") { 1.0 + 0.5 * x } else { x };
        }
        if name == "log_temperature" {
            data[0] = 4.0_f64.ln();
        }
    }
    m
}

// ---- independent forward ----

fn param<'a>(m: &'a DualEncoder, name: &str) -> &'a [f64] {
    m.params().get(name).unwrap_or_else(|| panic!("no tensor {name}"))
}

/// `y = W x + b` with `W` stored row-major as `[out, in]`.
fn affine(w: &[f64], b: Option<&[f64]>, x: &[f64]) -> Vec<f64> {
    let d_in = x.len();
    let d_out = w.len() / d_in;
    (0..d_out)
        .map(|o| {
            let mut s = b.map_or(0.0, |b| b[o]);
            for i in 0..d_in {
                s += w[o * d_in + i] * x[i];
            }
            s
        })
        .collect()
}

fn layer_norm(x: &[f64], g: &[f64], b: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mu = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
    let is = 1.0 / (var + 1e-5).sqrt();
    x.iter().zip(g).zip(b).map(|((v, g), b)| (v - mu) * is * g + b).collect()
}

fn gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x.powi(3))).tanh())
}

fn linear(m: &DualEncoder, prefix: &str, x: &[f64], adapter: bool) -> Vec<f64> {
    let mut y = affine(param(m, &format!("{prefix}.weight")), Some(param(m, &format!("{prefix}.bias"))), x);
    if adapter {
        let s = m.config().lora_scale / m.config().lora_rank as f64;
        let z = affine(param(m, &format!("{prefix}.lora.down")), None, x);
        let u = affine(param(m, &format!("{prefix}.lora.up")), None, &z);
        for (a, b) in y.iter_mut().zip(u) {
            *a += s * b;
        }
    }
    y
}

fn normalize(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// Residual-stream states per layer (`states[0]` is the embedding sum) and the
/// unit text embedding. `patch` overwrites `(layer, position)` after that block.
pub fn oracle_text(m: &DualEncoder, ids: &[u32], patch: Option<(usize, usize, &[f64])>) -> (Vec<Vec<Vec<f64>>>, Vec<f64>) {
    let cfg = m.config();
    let d = cfg.d_model;
    let tok = param(m, "text.token_embedding");
    let pos = param(m, "text.position_embedding");
    let mut x: Vec<Vec<f64>> = ids
        .iter()
        .enumerate()
        .map(|(p, &id)| (0..d).map(|j| tok[id as usize * d + j] + pos[p * d + j]).collect())
        .collect();
    let mut states = vec![x.clone()];
    let t = ids.len();
    let dh = d / cfg.n_heads;
    for l in 1..=cfg.n_layers {
        let pre = format!("text.block.{l}");
        let h1: Vec<Vec<f64>> = x
            .iter()
            .map(|r| layer_norm(r, param(m, &format!("{pre}.ln1.gain")), param(m, &format!("{pre}.ln1.bias"))))
            .collect();
        let q: Vec<_> = h1.iter().map(|r| linear(m, &format!("{pre}.attn.q"), r, true)).collect();
        let k: Vec<_> = h1.iter().map(|r| linear(m, &format!("{pre}.attn.k"), r, false)).collect();
        let v: Vec<_> = h1.iter().map(|r| linear(m, &format!("{pre}.attn.v"), r, true)).collect();
        let mut attn = vec![vec![0.0; d]; t];
        for h in 0..cfg.n_heads {
            let cols = h * dh..(h + 1) * dh;
            for i in 0..t {
                let scores: Vec<f64> = (0..t)
                    .map(|j| cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dh as f64).sqrt())
                    .collect();
                let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
                let z: f64 = e.iter().sum();
                for c in cols.clone() {
                    attn[i][c] = (0..t).map(|j| e[j] / z * v[j][c]).sum();
                }
            }
        }
        let mut next = Vec::with_capacity(t);
        for i in 0..t {
            let o = linear(m, &format!("{pre}.attn.o"), &attn[i], false);
            let mid: Vec<f64> = x[i].iter().zip(&o).map(|(a, b)| a + b).collect();
            let h2 = layer_norm(&mid, param(m, &format!("{pre}.ln2.gain")), param(m, &format!("{pre}.ln2.bias")));
            let a: Vec<f64> = linear(m, &format!("{pre}.mlp.fc1"), &h2, false).into_iter().map(gelu).collect();
            let f = linear(m, &format!("{pre}.mlp.fc2"), &a, false);
            next.push(mid.iter().zip(&f).map(|(a, b)| a + b).collect());
        }
        x = next;
        if let Some((pl, pp, rep)) = patch {
            if pl == l {
                x[pp] = rep.to_vec();
            }
        }
        states.push(x.clone());
    }
    let pooled = layer_norm(&x[t - 1], param(m, "text.ln_final.gain"), param(m, "text.ln_final.bias"));
    let emb = normalize(affine(param(m, "text.projection.weight"), None, &pooled));
    (states, emb)
}

pub fn oracle_image(m: &DualEncoder, x: &[f64]) -> Vec<f64> {
    let s = m.config().lora_scale / m.config().lora_rank as f64;
    let z = affine(param(m, "image.adapter.lora.down"), None, x);
    let u = affine(param(m, "image.adapter.lora.up"), None, &z);
    let a: Vec<f64> = x.iter().zip(u).map(|(x, u)| (x + s * u).tanh()).collect();
    normalize(affine(param(m, "image.projection.weight"), Some(param(m, "image.projection.bias")), &a))
}

pub fn oracle_similarity(m: &DualEncoder, img: &[f64], txt: &[f64]) -> f64 {
    param(m, "log_temperature")[0].exp() * img.iter().zip(txt).map(|(a, b)| a * b).sum::<f64>()
}

/// Brute-force CTE matrix: rows `0..=L`, row 0 zeros.
pub fn oracle_cte(m: &DualEncoder, image: &[f64], correct: &[u32], foil: &[u32]) -> (f64, Vec<Vec<f64>>) {
    let img = oracle_image(m, image);
    let (_, e_corr) = oracle_text(m, correct, None);
    let (foil_states, e_foil) = oracle_text(m, foil, None);
    let s_corr = oracle_similarity(m, &img, &e_corr);
    let d = s_corr - oracle_similarity(m, &img, &e_foil);
    let l = m.config().n_layers;
    let t = correct.len();
    let mut cte = vec![vec![0.0; t]; l + 1];
    for layer in 1..=l {
        for p in 0..t {
            let (_, e) = oracle_text(m, correct, Some((layer, p, &foil_states[layer][p])));
            cte[layer][p] = (s_corr - oracle_similarity(m, &img, &e)) / d;
        }
    }
    (d, cte)
}

// ---- finite differences ----

pub struct FdOutcome {
    pub checked: usize,
    pub worst_rel: f64,
    pub failures: Vec<String>,
}

/// Central differences (h = 1e-5) on every trainable scalar, compared at
/// `|fd − g| ≤ rel_tol·max(|fd|, |g|) + 1e-8`.
pub fn check_gradients(
    model: &DualEncoder,
    head: &dyn LossHead,
    images: &[Vec<f64>],
    texts: &[TokenSequence],
    mode: GradMode,
    rel_tol: f64,
) -> FdOutcome {
    let img: Vec<&[f64]> = images.iter().map(|v| v.as_slice()).collect();
    let txt: Vec<&TokenSequence> = texts.iter().collect();
    let (_, grads) = model.forward_backward(&img, &txt, head, mode).unwrap();
    let h = 1e-5;
    let mut out = FdOutcome {
        checked: 0,
        worst_rel: 0.0,
        failures: Vec::new(),
    };
    for spec in model.params().specs() {
        if !mode.trains(spec.group) {
            if grads.contains(&spec.name) {
                out.failures.push(format!("frozen {} has a gradient", spec.name));
            }
            continue;
        }
        let Some(g) = grads.get(&spec.name) else {
            out.failures.push(format!("missing gradient {}", spec.name));
            continue;
        };
        for i in 0..spec.numel() {
            let mut plus = model.clone();
            plus.params_mut().get_mut(&spec.name).unwrap()[i] += h;
            let mut minus = model.clone();
            minus.params_mut().get_mut(&spec.name).unwrap()[i] -= h;
            let fd = (plus.loss(&img, &txt, head).unwrap() - minus.loss(&img, &txt, head).unwrap()) / (2.0 * h);
            let err = (fd - g[i]).abs();
            let scale = fd.abs().max(g[i].abs());
            if scale > 1e-6 {
                out.worst_rel = out.worst_rel.max(err / scale);
            }
            if err > rel_tol * scale + 1e-8 {
                out.failures.push(format!("{}[{i}]: analytic {} vs numeric {fd}", spec.name, g[i]));
            }
            out.checked += 1;
        }
    }
    out
}
