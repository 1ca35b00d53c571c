//! AdamW with bias correction and decoupled weight decay.

use std::collections::BTreeMap;

use crate::encoder::{GradientMap, Params};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        AdamW {
            config,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Update every tensor named in `grads`; nothing else is touched.
    ///
    /// `θ ← θ − lr·(m̂ / (√v̂ + ε) + wd·θ)` with bias-corrected moments.
    pub fn step(&mut self, params: &mut Params, grads: &GradientMap) -> Result<()> {
        let c = self.config;
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let mut updated: Vec<(usize, Vec<f64>)> = Vec::with_capacity(grads.len());
        for (name, g) in &grads.entries {
            let id = params
                .id(name)
                .ok_or_else(|| Error::Wiring(format!("gradient for unknown tensor {name}")))?;
            let theta = params.data(id);
            if theta.len() != g.len() {
                return Err(Error::Shape(format!("gradient of {name} has the wrong length")));
            }
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            let mut out = theta.to_vec();
            for i in 0..g.len() {
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                out[i] -= c.learning_rate * (mhat / (vhat.sqrt() + c.eps) + c.weight_decay * theta[i]);
            }
            if out.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("update of {name}")));
            }
            updated.push((id, out));
        }
        for (id, out) in updated {
            params.data_mut(id).copy_from_slice(&out);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{DualEncoder, ModelConfig};

    fn scalar_model() -> (DualEncoder, String) {
        let m = DualEncoder::new(ModelConfig {
            vocab_size: 4,
            d_model: 4,
            n_heads: 1,
            n_layers: 1,
            max_seq_len: 4,
            image_feature_dim: 2,
            embed_dim: 2,
            lora_rank: 1,
            lora_scale: 1.0,
            temperature_init: 1.0,
            seed: 0,
        })
        .unwrap();
        (m, "log_temperature".to_string())
    }

    fn cfg(wd: f64) -> AdamWConfig {
        AdamWConfig {
            learning_rate: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: wd,
        }
    }

    fn grads(name: &str, g: f64) -> GradientMap {
        GradientMap {
            entries: [(name.to_string(), vec![g])].into_iter().collect(),
        }
    }

    #[test]
    fn first_step_moves_by_lr() {
        let (mut m, name) = scalar_model();
        m.params_mut().get_mut(&name).unwrap()[0] = 0.0;
        let mut opt = AdamW::new(cfg(0.0));
        opt.step(m.params_mut(), &grads(&name, 1.0)).unwrap();
        let theta = m.params().get(&name).unwrap()[0];
        // m̂ = 1, v̂ = 1, so Δ = −lr·1/(1 + ε)
        let oracle = -0.1 / (1.0 + 1e-8);
        assert!((theta - oracle).abs() < 1e-15);
        assert!((theta + 0.1).abs() < 1e-8);
    }

    #[test]
    fn zero_gradient_zero_decay_is_identity() {
        let (mut m, name) = scalar_model();
        let before = m.params().clone();
        let mut opt = AdamW::new(cfg(0.0));
        for _ in 0..5 {
            opt.step(m.params_mut(), &grads(&name, 0.0)).unwrap();
        }
        assert_eq!(m.params(), &before);
    }

    #[test]
    fn decoupled_decay_shrinks() {
        let (mut m, name) = scalar_model();
        m.params_mut().get_mut(&name).unwrap()[0] = 2.0;
        let mut opt = AdamW::new(cfg(0.1));
        opt.step(m.params_mut(), &grads(&name, 0.0)).unwrap();
        let theta = m.params().get(&name).unwrap()[0];
        assert!((theta - (2.0 - 0.1 * 0.1 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn unknown_tensor_is_a_wiring_error() {
        let (mut m, _) = scalar_model();
        let mut opt = AdamW::new(cfg(0.0));
        assert!(matches!(
            opt.step(m.params_mut(), &grads("nope", 1.0)),
            Err(Error::Wiring(_))
        ));
    }
}
