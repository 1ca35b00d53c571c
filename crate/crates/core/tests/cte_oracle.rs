mod common;

use common::{hand_weight_model, oracle_cte, oracle_image, oracle_similarity, oracle_text, probe_vocab};
use nast::causal::{trace_pair, ProbePair};
use nast::encoder::Intervention;
use ndarray::Array1;

fn pair() -> ProbePair {
    let v = probe_vocab();
    let correct = v.tokenize("there is no edema", 8).unwrap();
    let foil = v.tokenize("there is severe edema", 8).unwrap();
    ProbePair {
        image_features: vec![0.3, -0.2, 0.0, 0.9, -0.5],
        correct_caption: "there is no edema".into(),
        foil_caption: "there is severe edema".into(),
        correct_tokens: correct,
        foil_tokens: foil,
        negator_positions: vec![3],
        condition: "edema".into(),
        present: false,
    }
}

#[test]
fn independent_forward_agrees_with_the_model() {
    let m = hand_weight_model();
    let p = pair();
    let (states, emb) = oracle_text(&m, p.correct_tokens.ids(), None);
    let (e, trace) = m.encode_text(&p.correct_tokens, &[], true).unwrap();
    let trace = trace.unwrap();
    for (a, b) in emb.iter().zip(e.iter()) {
        assert!((a - b).abs() < 1e-12);
    }
    for l in 0..=2 {
        for t in 0..p.len() {
            for (a, b) in states[l][t].iter().zip(trace.state(l, t).iter()) {
                assert!((a - b).abs() < 1e-12, "state ({l},{t})");
            }
        }
    }
    let img = m.encode_image(&p.image_features).unwrap();
    let oi = oracle_image(&m, &p.image_features);
    let s = m.similarity(img.view(), e.view()).unwrap().value();
    assert!((s - oracle_similarity(&m, &oi, &emb)).abs() < 1e-12);
}

#[test]
fn trace_pair_matches_the_independent_oracle() {
    let m = hand_weight_model();
    let p = pair();
    let r = trace_pair(&m, &p, 1e-3).unwrap();
    assert!(r.valid, "d = {}", r.d);
    let (d, oracle) = oracle_cte(&m, &p.image_features, p.correct_tokens.ids(), p.foil_tokens.ids());
    assert!((r.d - d).abs() < 1e-12);
    let cte = r.cte.unwrap();
    assert_eq!(cte.len(), 3);
    assert_eq!(r.patched_forwards, 2 * p.len());
    for (row, orow) in cte.iter().zip(&oracle) {
        for (a, b) in row.iter().zip(orow) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
    assert!(cte[0].iter().all(|&v| v == 0.0));
}

#[test]
fn trace_pair_matches_brute_force_patching_exactly() {
    let m = hand_weight_model();
    let p = pair();
    let r = trace_pair(&m, &p, 1e-3).unwrap();
    let img = m.encode_image(&p.image_features).unwrap();
    let (corr, _) = m.encode_text(&p.correct_tokens, &[], false).unwrap();
    let (_, foil_trace) = m.encode_text(&p.foil_tokens, &[], true).unwrap();
    let foil_trace = foil_trace.unwrap();
    let s_corr = m.similarity(img.view(), corr.view()).unwrap().value();
    let cte = r.cte.unwrap();
    for layer in 1..=2 {
        for pos in 0..p.len() {
            let iv = Intervention {
                layer,
                position: pos,
                replacement: Array1::from(foil_trace.state(layer, pos).to_vec()),
            };
            let (e, _) = m.encode_text(&p.correct_tokens, &[iv], false).unwrap();
            let s = m.similarity(img.view(), e.view()).unwrap().value();
            assert_eq!(cte[layer][pos], (s_corr - s) / r.d);
        }
    }
    // the final-layer EOS patch swaps the whole embedding
    let eos = p.len() - 1;
    assert!((cte[2][eos] - 1.0).abs() < 1e-9);
}
