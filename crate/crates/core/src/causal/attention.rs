//! Diagnostic: how much attention each head pays to the negator token.

use serde::{Deserialize, Serialize};

use super::ProbePair;
use crate::encoder::DualEncoder;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionReport {
    /// `selectivity[ℓ-1][h]`.
    pub selectivity: Vec<Vec<f64>>,
    pub layer_means: Vec<f64>,
    pub num_probes: usize,
}

/// Mean attention (over query positions) received by the negator token minus
/// that received by the token just before it, on each probe's negated caption,
/// averaged over probes.
pub fn negator_attention_report(model: &DualEncoder, probes: &[ProbePair]) -> Result<AttentionReport> {
    if probes.is_empty() {
        return Err(Error::EmptyInput("attention report needs probes".into()));
    }
    let l = model.n_layers();
    let h = model.config().n_heads;
    let mut sel = vec![vec![0.0; h]; l];
    let mut count = 0usize;
    for pr in probes {
        let tokens = pr.negated_tokens();
        let pass = model.text_forward(tokens, &[])?;
        for &neg in &pr.negator_positions {
            if neg == 0 {
                continue;
            }
            let control = neg - 1;
            for (layer, row) in sel.iter_mut().enumerate() {
                for (head, probs) in pass.attention(layer + 1).iter().enumerate() {
                    let t = probs.nrows() as f64;
                    let recv = |j: usize| probs.column(j).sum() / t;
                    row[head] += recv(neg) - recv(control);
                }
            }
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyInput("no probe has a negator after position 0".into()));
    }
    for row in &mut sel {
        for v in row.iter_mut() {
            *v /= count as f64;
        }
    }
    let layer_means = sel.iter().map(|r| r.iter().sum::<f64>() / h as f64).collect();
    Ok(AttentionReport {
        selectivity: sel,
        layer_means,
        num_probes: probes.len(),
    })
}
