use std::collections::BTreeSet;

use ndarray::Array1;
use rand_distr::{Distribution, Normal};

use super::*;
use crate::error::Error;
use crate::trainer::loss::{ClaimHead, ContrastiveHead};
use crate::util;

fn vocab() -> Vocab {
    let lex: BTreeSet<String> = ["there", "is", "no", "severe", "edema", "a", "small", "left", "effusion"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    Vocab::from_lexicon(&lex)
}

fn micro_config(seed: u64) -> ModelConfig {
    ModelConfig {
        vocab_size: vocab().len(),
        d_model: 16,
        n_heads: 2,
        n_layers: 3,
        max_seq_len: 8,
        image_feature_dim: 6,
        embed_dim: 8,
        lora_rank: 2,
        lora_scale: 2.0,
        temperature_init: 3.0,
        seed,
    }
}

/// Micro-model with nonzero adapter up-projections so every path carries gradient.
fn micro_model(seed: u64) -> DualEncoder {
    let mut m = DualEncoder::new(micro_config(seed)).unwrap();
    let mut rng = util::rng_for(seed, "test-lora-up", 0);
    let dist = Normal::new(0.0, 0.3).unwrap();
    let names: Vec<String> = m
        .params()
        .specs()
        .iter()
        .filter(|s| s.name.ends_with("lora.up"))
        .map(|s| s.name.clone())
        .collect();
    for n in names {
        for v in m.params_mut().get_mut(&n).unwrap() {
            *v = dist.sample(&mut rng);
        }
    }
    m
}

fn tok(s: &str) -> TokenSequence {
    vocab().tokenize(s, 8).unwrap()
}

fn features(seed: u64, n: usize) -> Vec<Vec<f64>> {
    let mut rng = util::rng_for(seed, "test-features", 0);
    let dist = Normal::new(0.0, 1.0).unwrap();
    (0..n).map(|_| (0..6).map(|_| dist.sample(&mut rng)).collect()).collect()
}

fn check_gradients(model: &DualEncoder, head: &dyn LossHead, images: &[Vec<f64>], texts: &[TokenSequence], mode: GradMode) {
    let img: Vec<&[f64]> = images.iter().map(|v| v.as_slice()).collect();
    let txt: Vec<&TokenSequence> = texts.iter().collect();
    let (_, grads) = model.forward_backward(&img, &txt, head, mode).unwrap();
    let h = 1e-5;
    let mut checked = 0;
    for spec in model.params().specs() {
        if !mode.trains(spec.group) {
            assert!(!grads.contains(&spec.name), "frozen {} has a gradient", spec.name);
            continue;
        }
        let g = grads.get(&spec.name).unwrap_or_else(|| panic!("missing gradient {}", spec.name));
        for i in 0..spec.numel() {
            let mut plus = model.clone();
            plus.params_mut().get_mut(&spec.name).unwrap()[i] += h;
            let mut minus = model.clone();
            minus.params_mut().get_mut(&spec.name).unwrap()[i] -= h;
            let fd = (plus.loss(&img, &txt, head).unwrap() - minus.loss(&img, &txt, head).unwrap()) / (2.0 * h);
            let tol = 1e-4 * fd.abs().max(g[i].abs()) + 1e-8;
            assert!((fd - g[i]).abs() <= tol, "{}[{i}]: analytic {} vs numeric {fd}", spec.name, g[i]);
            checked += 1;
        }
    }
    assert!(checked > 0);
}

#[test]
fn finetune_gradients_match_finite_differences() {
    let m = micro_model(7);
    let texts = [tok("there is no edema"), tok("there is severe edema"), tok("there is a small left effusion")];
    check_gradients(&m, &ContrastiveHead, &features(1, 3), &texts, GradMode::Finetune);
    let claims = [
        tok("there is no edema"),
        tok("there is severe edema"),
        tok("there is a small left effusion"),
        tok("there is no effusion"),
        tok("there is a left effusion"),
    ];
    let head = ClaimHead {
        sizes: vec![2, 3],
        correct: vec![1, 0],
    };
    check_gradients(&m, &head, &features(2, 2), &claims, GradMode::Finetune);
}

#[test]
fn base_alignment_gradients_match_finite_differences() {
    let m = micro_model(11);
    let texts = [tok("there is no edema"), tok("there is severe edema"), tok("a small effusion")];
    check_gradients(&m, &ContrastiveHead, &features(3, 3), &texts, GradMode::BaseAlignment);
}

#[test]
fn frozen_backbone_has_no_gradient_entries() {
    let m = micro_model(3);
    let texts = [tok("there is no edema"), tok("there is severe edema")];
    let imgs = features(4, 2);
    let img: Vec<&[f64]> = imgs.iter().map(|v| v.as_slice()).collect();
    let (_, g) = m
        .forward_backward(&img, &texts.iter().collect::<Vec<_>>(), &ContrastiveHead, GradMode::Finetune)
        .unwrap();
    assert!(!g.contains("text.block.1.attn.q.weight"));
    assert!(!g.contains("text.token_embedding"));
    assert!(g.contains("text.block.1.attn.q.lora.down"));
    assert!(g.contains("image.adapter.lora.up"));
    assert!(g.contains("log_temperature"));
}

#[test]
fn self_patch_is_neutral() {
    let m = micro_model(5);
    let t = tok("there is severe edema");
    let (base, trace) = m.encode_text(&t, &[], true).unwrap();
    let trace = trace.unwrap();
    assert_eq!(trace.states.len(), 4);
    for l in 1..=3 {
        for p in 0..t.len() {
            let iv = Intervention {
                layer: l,
                position: p,
                replacement: trace.state(l, p).to_owned(),
            };
            let (e, _) = m.encode_text(&t, &[iv], false).unwrap();
            assert_eq!(e, base);
        }
    }
}

#[test]
fn final_eos_patch_reproduces_foil_embedding() {
    let m = micro_model(5);
    let correct = tok("there is severe edema");
    let foil = tok("there is no edema");
    let (foil_emb, trace) = m.encode_text(&foil, &[], true).unwrap();
    let trace = trace.unwrap();
    let iv = Intervention {
        layer: 3,
        position: foil.eos_position(),
        replacement: trace.state(3, foil.eos_position()).to_owned(),
    };
    let (patched, _) = m.encode_text(&correct, &[iv], false).unwrap();
    let diff = (&patched - &foil_emb).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
    assert!(diff < 1e-12, "{diff}");
}

#[test]
fn recording_does_not_change_the_forward() {
    let m = micro_model(5);
    let t = tok("there is a small left effusion");
    let (a, none) = m.encode_text(&t, &[], false).unwrap();
    let (b, some) = m.encode_text(&t, &[], true).unwrap();
    assert!(none.is_none());
    assert_eq!(a, b);
    let trace = some.unwrap();
    assert_eq!(trace, m.text_forward(&t, &[]).unwrap().trace());
    assert_eq!(trace.len(), t.len());
    assert!(trace.states.iter().all(|s| s.ncols() == 16 && s.iter().all(|v| v.is_finite())));
}

#[test]
fn zero_up_adapters_are_transparent() {
    let a = DualEncoder::new(micro_config(9)).unwrap();
    let mut b = a.clone();
    let downs: Vec<String> = b
        .params()
        .specs()
        .iter()
        .filter(|s| s.name.ends_with("lora.down"))
        .map(|s| s.name.clone())
        .collect();
    for n in downs {
        for (i, v) in b.params_mut().get_mut(&n).unwrap().iter_mut().enumerate() {
            *v = 3.0 + i as f64;
        }
    }
    let t = tok("there is no edema");
    assert_eq!(a.encode_text(&t, &[], false).unwrap().0, b.encode_text(&t, &[], false).unwrap().0);
    let f = features(8, 1).remove(0);
    assert_eq!(a.encode_image(&f).unwrap(), b.encode_image(&f).unwrap());
}

#[test]
fn intervention_bounds_are_checked() {
    let m = micro_model(1);
    let t = tok("there is no edema");
    let bad = |layer, position, d| Intervention {
        layer,
        position,
        replacement: Array1::zeros(d),
    };
    assert!(matches!(m.encode_text(&t, &[bad(0, 0, 16)], false), Err(Error::Index(_))));
    assert!(matches!(m.encode_text(&t, &[bad(4, 0, 16)], false), Err(Error::Index(_))));
    assert!(matches!(m.encode_text(&t, &[bad(1, 6, 16)], false), Err(Error::Index(_))));
    assert!(matches!(m.encode_text(&t, &[bad(1, 0, 15)], false), Err(Error::Shape(_))));
}

#[test]
fn image_encoder_is_deterministic_and_unit_norm() {
    let m = micro_model(2);
    let zero = vec![0.0; 6];
    let a = m.encode_image(&zero).unwrap();
    let b = m.encode_image(&zero).unwrap();
    assert_eq!(a, b);
    assert!((a.dot(&a).sqrt() - 1.0).abs() < UNIT_NORM_TOL);
    assert!(matches!(m.encode_image(&[0.0; 5]), Err(Error::Shape(_))));
}

#[test]
fn similarity_contract() {
    let e = Array1::from(vec![0.6, 0.8]);
    let o = Array1::from(vec![-0.8, 0.6]);
    assert!((similarity_with_temperature(e.view(), e.view(), 1.0).unwrap().value() - 1.0).abs() < 1e-15);
    assert!(similarity_with_temperature(e.view(), o.view(), 1.0).unwrap().value().abs() < 1e-15);
    let s = similarity_with_temperature(e.view(), e.view(), 10f64.ln().exp()).unwrap().value();
    assert!((s - 10.0).abs() < 1e-12);
    let long = Array1::from(vec![1.0, 1.0]);
    assert!(matches!(
        similarity_with_temperature(long.view(), e.view(), 1.0),
        Err(Error::Contract(_))
    ));
}

#[test]
fn same_seed_same_parameters() {
    let a = DualEncoder::new(micro_config(4)).unwrap();
    let b = DualEncoder::new(micro_config(4)).unwrap();
    let c = DualEncoder::new(micro_config(5)).unwrap();
    assert_eq!(a.params(), b.params());
    assert_ne!(a.params(), c.params());
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let m = micro_model(6);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    m.save(&path).unwrap();
    let back = DualEncoder::load(&path).unwrap();
    assert_eq!(back.params(), m.params());
    let t = tok("there is severe edema");
    assert_eq!(back.encode_text(&t, &[], false).unwrap().0, m.encode_text(&t, &[], false).unwrap().0);
}

#[test]
fn checkpoint_rejects_shape_mismatch() {
    let m = micro_model(6);
    let mut ckpt = m.to_checkpoint();
    ckpt.tensors.get_mut("log_temperature").unwrap().shape = vec![2];
    assert!(matches!(DualEncoder::from_checkpoint(ckpt), Err(Error::Shape(_))));
}
