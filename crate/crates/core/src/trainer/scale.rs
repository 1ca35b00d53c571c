//! Layer-weighted gradient scaling `g̃ = αᵝ·g`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::causal::LayerWeights;
use crate::encoder::{GradientMap, ParamGroup, Params};
use crate::error::{Error, Result};

/// Where a tensor's update magnitude is booked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bucket {
    /// Adapter of text block `ℓ` (1-based).
    Layer(usize),
    /// Everything unscaled: image adapter, projections, log-temperature, backbone.
    Other,
}

pub fn bucket_of(group: ParamGroup) -> Bucket {
    match group {
        ParamGroup::TextLora { layer } => Bucket::Layer(layer),
        _ => Bucket::Other,
    }
}

/// `αᵝ`, with `0⁰ = 1`.
pub fn layer_factor(alpha: f64, beta: f64) -> f64 {
    if beta == 0.0 {
        1.0
    } else {
        alpha.powf(beta)
    }
}

/// Multiply each text-layer adapter gradient by `α_ℓ^β`; every other trainable
/// gradient is left as is. Returns the scaled map and the factor applied per tensor.
pub fn scale_gradients(
    grads: &GradientMap,
    params: &Params,
    weights: &LayerWeights,
    beta: f64,
) -> Result<(GradientMap, BTreeMap<String, f64>)> {
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::Config(format!("beta must be finite and >= 0, got {beta}")));
    }
    let mut out = BTreeMap::new();
    let mut factors = BTreeMap::new();
    for (name, g) in &grads.entries {
        let id = params
            .id(name)
            .ok_or_else(|| Error::Wiring(format!("gradient {name} maps to no parameter")))?;
        let factor = match bucket_of(params.specs()[id].group) {
            Bucket::Layer(l) => {
                let a = *weights
                    .alpha
                    .get(l.wrapping_sub(1))
                    .ok_or_else(|| Error::Wiring(format!("gradient {name} is in layer {l}, but alpha has {} layers", weights.alpha.len())))?;
                layer_factor(a, beta)
            }
            Bucket::Other => 1.0,
        };
        out.insert(name.clone(), g.iter().map(|x| factor * x).collect());
        factors.insert(name.clone(), factor);
    }
    Ok((GradientMap { entries: out }, factors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{DualEncoder, ModelConfig};

    fn model() -> DualEncoder {
        DualEncoder::new(ModelConfig {
            vocab_size: 6,
            d_model: 8,
            n_heads: 2,
            n_layers: 2,
            max_seq_len: 6,
            image_feature_dim: 3,
            embed_dim: 4,
            lora_rank: 2,
            lora_scale: 1.0,
            temperature_init: 1.0,
            seed: 0,
        })
        .unwrap()
    }

    fn map(entries: &[(&str, f64)]) -> GradientMap {
        GradientMap {
            entries: entries.iter().map(|(n, g)| (n.to_string(), vec![*g])).collect(),
        }
    }

    fn weights(alpha: Vec<f64>) -> LayerWeights {
        LayerWeights {
            cte_layer: alpha.clone(),
            alpha,
        }
    }

    #[test]
    fn examples() {
        let m = model();
        let g = map(&[("text.block.1.attn.q.lora.down", 4.0), ("text.block.2.attn.v.lora.up", 3.0), ("log_temperature", 5.0)]);
        let (s, f) = scale_gradients(&g, m.params(), &weights(vec![0.5, 0.0]), 2.0).unwrap();
        assert_eq!(s.get("text.block.1.attn.q.lora.down").unwrap(), &[1.0]);
        assert_eq!(s.get("text.block.2.attn.v.lora.up").unwrap(), &[0.0]);
        assert_eq!(s.get("log_temperature").unwrap(), &[5.0]);
        assert_eq!(f["log_temperature"], 1.0);
        let (s, _) = scale_gradients(&g, m.params(), &weights(vec![1.0, 1.0]), 7.0).unwrap();
        assert_eq!(s, g);
    }

    #[test]
    fn beta_zero_is_identity_even_at_alpha_zero() {
        let m = model();
        let g = map(&[("text.block.1.attn.q.lora.down", 0.3), ("text.block.2.attn.q.lora.down", -1.7)]);
        let (s, _) = scale_gradients(&g, m.params(), &weights(vec![0.0, 0.25]), 0.0).unwrap();
        assert_eq!(s, g);
    }

    #[test]
    fn unmapped_gradients_are_wiring_errors() {
        let m = model();
        assert!(matches!(
            scale_gradients(&map(&[("text.block.9.attn.q.lora.down", 1.0)]), m.params(), &weights(vec![1.0, 1.0]), 2.0),
            Err(Error::Wiring(_))
        ));
        assert!(matches!(
            scale_gradients(&map(&[("text.block.2.attn.q.lora.down", 1.0)]), m.params(), &weights(vec![1.0]), 2.0),
            Err(Error::Wiring(_))
        ));
    }
}
