//! Causal tracing of polarity information through the text encoder and the
//! per-layer weights derived from it.

mod artifacts;
mod attention;

pub use artifacts::{heatmap_svg, mean_cte_matrix, write_cte_csv, AlphaFile};
pub use attention::{negator_attention_report, AttentionReport};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Ontology, StructuredFact};
use crate::encoder::{DualEncoder, Intervention, TokenSequence, Vocab};
use crate::error::{Error, Result};

pub const DEFAULT_D_MIN: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbePair {
    pub image_features: Vec<f64>,
    pub correct_caption: String,
    pub foil_caption: String,
    pub correct_tokens: TokenSequence,
    pub foil_tokens: TokenSequence,
    /// Positions of the polarity token ("severe" / "no").
    pub negator_positions: Vec<usize>,
    pub condition: String,
    /// Whether the correct caption is the affirmative one.
    pub present: bool,
}

impl ProbePair {
    pub fn len(&self) -> usize {
        self.correct_tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.correct_tokens.len() == 0
    }

    /// The caption that carries the negation cue.
    pub fn negated_tokens(&self) -> &TokenSequence {
        if self.present {
            &self.foil_tokens
        } else {
            &self.correct_tokens
        }
    }
}

pub const AFFIRMATIVE_PROBE: &str = "severe";
pub const NEGATED_PROBE: &str = "no";

/// "there is severe {finding}" / "there is no {finding}".
pub fn probe_captions(ontology: &Ontology, condition: &str) -> Result<(String, String)> {
    let c = ontology.get(condition)?;
    Ok((
        format!("there is {AFFIRMATIVE_PROBE} {}", c.short_name),
        format!("there is {NEGATED_PROBE} {}", c.short_name),
    ))
}

/// One probe pair for a definitive fact. Present facts take the affirmative
/// caption as correct and the negated one as foil; absent facts swap roles.
pub fn probe_pair(
    fact: &StructuredFact,
    image_features: &[f64],
    ontology: &Ontology,
    vocab: &Vocab,
    max_len: usize,
) -> Result<ProbePair> {
    let (aff, neg) = probe_captions(ontology, &fact.condition)?;
    let present = fact.existence.is_present();
    let (correct, foil) = if present { (aff, neg) } else { (neg, aff) };
    let ct = vocab.tokenize(&correct, max_len)?;
    let ft = vocab.tokenize(&foil, max_len)?;
    if ct.len() != ft.len() {
        return Err(Error::Construction(format!(
            "probe captions {correct:?} and {foil:?} have different token lengths"
        )));
    }
    let polarity = [vocab.id(AFFIRMATIVE_PROBE), vocab.id(NEGATED_PROBE)];
    let negator_positions: Vec<usize> = (0..ct.len())
        .filter(|&p| ct.ids()[p] != ft.ids()[p])
        .collect();
    if negator_positions.is_empty()
        || negator_positions
            .iter()
            .any(|&p| !polarity.contains(&Some(ct.ids()[p])) || !polarity.contains(&Some(ft.ids()[p])))
    {
        return Err(Error::Construction(format!(
            "probe captions {correct:?} and {foil:?} do not differ exactly at the polarity token"
        )));
    }
    Ok(ProbePair {
        image_features: image_features.to_vec(),
        correct_caption: correct,
        foil_caption: foil,
        correct_tokens: ct,
        foil_tokens: ft,
        negator_positions,
        condition: fact.condition.clone(),
        present,
    })
}

/// Probe pairs for every definitive fact, in input order. Uncertain facts are skipped.
pub fn build_probe_set<'a>(
    facts: impl IntoIterator<Item = (&'a StructuredFact, &'a [f64])>,
    ontology: &Ontology,
    vocab: &Vocab,
    max_len: usize,
) -> Result<Vec<ProbePair>> {
    facts
        .into_iter()
        .filter(|(f, _)| f.is_definitive())
        .map(|(f, x)| probe_pair(f, x, ontology, vocab, max_len))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceResult {
    pub s_corr: f64,
    pub s_foil: f64,
    pub d: f64,
    pub valid: bool,
    /// `(L+1) × length`; row 0 (embedding output) is not patched and stays zero.
    pub cte: Option<Vec<Vec<f64>>>,
    pub negator_positions: Vec<usize>,
    pub patched_forwards: usize,
}

/// Patch every `(ℓ, p)` of the correct caption with the foil's state and
/// measure the fraction of the polarity signal removed.
pub fn trace_pair(model: &DualEncoder, pair: &ProbePair, d_min: f64) -> Result<TraceResult> {
    if !(d_min > 0.0) {
        return Err(Error::Contract(format!("d_min must be positive, got {d_min}")));
    }
    if pair.correct_tokens.len() != pair.foil_tokens.len() {
        return Err(Error::Construction("probe pair token lengths differ".into()));
    }
    let img = model.encode_image(&pair.image_features)?;
    let (corr, _) = model.encode_text(&pair.correct_tokens, &[], false)?;
    let (foil, trace) = model.encode_text(&pair.foil_tokens, &[], true)?;
    let trace = trace.expect("trace requested");
    let s_corr = model.similarity(img.view(), corr.view())?.value();
    let s_foil = model.similarity(img.view(), foil.view())?.value();
    let d = s_corr - s_foil;
    let mut out = TraceResult {
        s_corr,
        s_foil,
        d,
        valid: d.abs() >= d_min,
        cte: None,
        negator_positions: pair.negator_positions.clone(),
        patched_forwards: 0,
    };
    if !out.valid {
        return Ok(out);
    }
    let l = model.n_layers();
    let t = pair.len();
    let mut cte = vec![vec![0.0; t]; l + 1];
    for (layer, row) in cte.iter_mut().enumerate().skip(1) {
        for (p, v) in row.iter_mut().enumerate() {
            let iv = Intervention {
                layer,
                position: p,
                replacement: trace.state(layer, p).to_owned(),
            };
            let (e, _) = model.encode_text(&pair.correct_tokens, &[iv], false)?;
            let s = model.similarity(img.view(), e.view())?.value();
            *v = (s_corr - s) / d;
            out.patched_forwards += 1;
        }
    }
    if cte.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("causal tracing effect".into()));
    }
    out.cte = Some(cte);
    Ok(out)
}

/// Trace every pair in parallel; results keep input order.
pub fn trace_all(model: &DualEncoder, pairs: &[ProbePair], d_min: f64) -> Result<Vec<TraceResult>> {
    pairs.par_iter().map(|p| trace_pair(model, p, d_min)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CteSummary {
    /// `CTE_ℓ` for `ℓ = 1..=L`.
    pub cte_layer: Vec<f64>,
    pub num_pairs: usize,
    pub num_filtered: usize,
}

/// Per-layer mean over valid samples of the mean CTE at negator positions.
pub fn aggregate_cte(results: &[TraceResult]) -> Result<CteSummary> {
    let valid: Vec<&TraceResult> = results.iter().filter(|r| r.valid && r.cte.is_some()).collect();
    if valid.is_empty() {
        return Err(Error::EmptyInput(format!(
            "no valid trace results among {} pairs",
            results.len()
        )));
    }
    let layers = valid[0].cte.as_ref().expect("valid").len() - 1;
    let mut sum = vec![0.0; layers];
    for r in &valid {
        let cte = r.cte.as_ref().expect("valid");
        if cte.len() != layers + 1 {
            return Err(Error::Shape("trace results disagree on layer count".into()));
        }
        if r.negator_positions.is_empty() {
            return Err(Error::Contract("trace result without negator positions".into()));
        }
        for (l, s) in sum.iter_mut().enumerate() {
            let row = &cte[l + 1];
            let m: f64 = r.negator_positions.iter().map(|&p| row[p]).sum::<f64>() / r.negator_positions.len() as f64;
            *s += m;
        }
    }
    let n = valid.len() as f64;
    Ok(CteSummary {
        cte_layer: sum.into_iter().map(|s| s / n).collect(),
        num_pairs: results.len(),
        num_filtered: results.len() - valid.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerWeights {
    pub cte_layer: Vec<f64>,
    pub alpha: Vec<f64>,
}

impl LayerWeights {
    /// Every layer weighted 1.
    pub fn uniform(layers: usize) -> Self {
        LayerWeights {
            cte_layer: vec![0.0; layers],
            alpha: vec![1.0; layers],
        }
    }

    pub fn layers(&self) -> usize {
        self.alpha.len()
    }

    /// 1-based layer indices sorted by decreasing α, ties by lower index.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.alpha.len()).collect();
        idx.sort_by(|&a, &b| self.alpha[b].total_cmp(&self.alpha[a]).then(a.cmp(&b)));
        idx.into_iter().map(|i| i + 1).collect()
    }
}

/// Min–max normalization to `[0, 1]`; all-equal scores map to all ones.
pub fn normalize_weights(cte_layer: &[f64]) -> Result<LayerWeights> {
    if cte_layer.len() < 2 {
        return Err(Error::Contract("normalization needs at least two layers".into()));
    }
    if cte_layer.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("layer CTE".into()));
    }
    let min = cte_layer.iter().copied().fold(f64::INFINITY, f64::min);
    let max = cte_layer.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let alpha = if max == min {
        vec![1.0; cte_layer.len()]
    } else {
        cte_layer.iter().map(|v| (v - min) / (max - min)).collect()
    };
    Ok(LayerWeights {
        cte_layer: cte_layer.to_vec(),
        alpha,
    })
}
