//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits nonzero if any fails. Criteria 5, 6 and 8 share one full desk-scale
//! experiment (20k studies, 5 seeds, both arms).

mod common;

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::time::Instant;

use nast::benchmark::McqPair;
use nast::causal::{build_probe_set, trace_pair, LayerWeights};
use nast::data::corpus::write_corpus;
use nast::data::{generate_corpus, CaptionValidator, DataConfig, LinearProbe, Ontology, Split};
use nast::encoder::{DualEncoder, GradMode, Intervention, ModelConfig, Vocab};
use nast::pipeline::{self, Arm, RunConfig};
use nast::trainer::{
    claim_loss_from_logits, contrastive_loss_from_logits, train, CaptionSource, ClaimHead, ContrastiveHead,
    TrainConfig, TrainData,
};
use nast::util;
use ndarray::{Array1, Array2};
use rand_distr::{Distribution, Normal};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

// ---------- 1. gradients ----------

fn micro_model() -> (DualEncoder, Vocab) {
    let vocab = common::probe_vocab();
    let mut m = DualEncoder::new(ModelConfig {
        vocab_size: vocab.len(),
        d_model: 16,
        n_heads: 2,
        n_layers: 3,
        max_seq_len: 8,
        image_feature_dim: 6,
        embed_dim: 8,
        lora_rank: 2,
        lora_scale: 2.0,
        temperature_init: 3.0,
        seed: 17,
    })
    .unwrap();
    // nonzero adapter ups so every path carries gradient
    let mut rng = util::rng_for(17, "acceptance-lora", 0);
    let dist = Normal::new(0.0, 0.3).unwrap();
    let ups: Vec<String> = m
        .params()
        .specs()
        .iter()
        .filter(|s| s.name.ends_with("lora.up"))
        .map(|s| s.name.clone())
        .collect();
    for n in ups {
        m.params_mut().get_mut(&n).unwrap().iter_mut().for_each(|v| *v = dist.sample(&mut rng));
    }
    (m, vocab)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let (m, vocab) = micro_model();
    let tok = |s: &str| vocab.tokenize(s, 8).unwrap();
    let mut rng = util::rng_for(3, "acceptance-features", 0);
    let n = Normal::new(0.0, 1.0).unwrap();
    let mut feats = |k: usize| -> Vec<Vec<f64>> { (0..k).map(|_| (0..6).map(|_| n.sample(&mut rng)).collect()).collect() };
    let caps = [tok("there is no edema"), tok("there is severe edema"), tok("there is a small left effusion")];
    let claims = [
        tok("there is no edema"),
        tok("there is severe edema"),
        tok("there is a small left effusion"),
        tok("there is no effusion"),
        tok("there is a left effusion"),
    ];
    let claim_head = ClaimHead {
        sizes: vec![2, 3],
        correct: vec![1, 0],
    };
    let runs = [
        common::check_gradients(&m, &ContrastiveHead, &feats(3), &caps, GradMode::Finetune, 1e-4),
        common::check_gradients(&m, &claim_head, &feats(2), &claims, GradMode::Finetune, 1e-4),
        common::check_gradients(&m, &ContrastiveHead, &feats(3), &caps, GradMode::BaseAlignment, 1e-4),
    ];
    let secs = start.elapsed().as_secs_f64();
    let checked: usize = runs.iter().map(|r| r.checked).sum();
    let worst = runs.iter().map(|r| r.worst_rel).fold(0.0, f64::max);
    let failures: Vec<&String> = runs.iter().flat_map(|r| &r.failures).collect();
    outcome(
        failures.is_empty() && secs < 60.0,
        format!(
            "{checked} scalars checked, worst rel err {worst:.2e}, {} failures{}, {secs:.1}s",
            failures.len(),
            failures.first().map_or(String::new(), |f| format!(" (first: {f})"))
        ),
    )
}

// ---------- 2. CTE invariants ----------

fn criterion_2() -> Outcome {
    let onto = Ontology::chexpert();
    let vocab = Vocab::from_lexicon(&onto.lexicon());
    let corpus = generate_corpus(&DataConfig { n_studies: 200, seed: 5, ..Default::default() }, &onto).unwrap();
    let layout = nast::data::FeatureLayout::new(&onto);
    let spec = pipeline::ModelSpec::default();
    let mut model = DualEncoder::new(spec.model_config(&vocab, &layout)).unwrap();
    // exercise the adapter path too
    let mut rng = util::rng_for(5, "acceptance-lora", 0);
    let dist = Normal::new(0.0, 0.2).unwrap();
    let ups: Vec<String> = model
        .params()
        .specs()
        .iter()
        .filter(|s| s.name.ends_with("lora.up"))
        .map(|s| s.name.clone())
        .collect();
    for n in ups {
        model.params_mut().get_mut(&n).unwrap().iter_mut().for_each(|v| *v = dist.sample(&mut rng));
    }
    let facts = corpus.records.iter().flat_map(|r| r.definitive_facts().map(move |f| (f, r.image_features.as_slice())));
    let probes = build_probe_set(facts, &onto, &vocab, spec.max_seq_len).unwrap();
    let l = model.n_layers();
    let mut pairs = 0;
    let mut worst_self: f64 = 0.0;
    let mut worst_eos: f64 = 0.0;
    for p in &probes {
        if pairs == 100 {
            break;
        }
        let r = trace_pair(&model, p, 1e-3).unwrap();
        let Some(cte) = r.cte else { continue };
        pairs += 1;
        let eos = p.len() - 1;
        worst_eos = worst_eos.max((cte[l][eos] - 1.0).abs());
        let img = model.encode_image(&p.image_features).unwrap();
        let (_, trace) = model.encode_text(&p.correct_tokens, &[], true).unwrap();
        let trace = trace.unwrap();
        for layer in 1..=l {
            for pos in 0..p.len() {
                let iv = Intervention {
                    layer,
                    position: pos,
                    replacement: trace.state(layer, pos).to_owned(),
                };
                let (e, _) = model.encode_text(&p.correct_tokens, &[iv], false).unwrap();
                let s = model.similarity(img.view(), e.view()).unwrap().value();
                worst_self = worst_self.max(((r.s_corr - s) / r.d).abs());
            }
        }
    }

    // hand-weight oracle
    let hm = common::hand_weight_model();
    let hv = common::probe_vocab();
    let ct = hv.tokenize("there is no edema", 8).unwrap();
    let ft = hv.tokenize("there is severe edema", 8).unwrap();
    let hp = nast::causal::ProbePair {
        image_features: vec![0.3, -0.2, 0.0, 0.9, -0.5],
        correct_caption: "there is no edema".into(),
        foil_caption: "there is severe edema".into(),
        correct_tokens: ct.clone(),
        foil_tokens: ft.clone(),
        negator_positions: vec![3],
        condition: "edema".into(),
        present: false,
    };
    let hr = trace_pair(&hm, &hp, 1e-3).unwrap();
    let (_, oracle) = common::oracle_cte(&hm, &hp.image_features, ct.ids(), ft.ids());
    let hcte = hr.cte.clone().unwrap_or_default();
    let oracle_err = hcte
        .iter()
        .flatten()
        .zip(oracle.iter().flatten())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    // brute force through the model's own patched forward: exact
    let img = hm.encode_image(&hp.image_features).unwrap();
    let (corr, _) = hm.encode_text(&ct, &[], false).unwrap();
    let (_, ftrace) = hm.encode_text(&ft, &[], true).unwrap();
    let ftrace = ftrace.unwrap();
    let s_corr = hm.similarity(img.view(), corr.view()).unwrap().value();
    let mut exact = hcte.len() == 3;
    for layer in 1..=2 {
        for pos in 0..ct.len() {
            let iv = Intervention {
                layer,
                position: pos,
                replacement: Array1::from(ftrace.state(layer, pos).to_vec()),
            };
            let (e, _) = hm.encode_text(&ct, &[iv], false).unwrap();
            let s = hm.similarity(img.view(), e.view()).unwrap().value();
            exact &= hcte.get(layer).and_then(|r| r.get(pos)) == Some(&((s_corr - s) / hr.d));
        }
    }
    outcome(
        pairs == 100 && worst_self <= 1e-9 && worst_eos <= 1e-9 && exact && oracle_err < 1e-12,
        format!(
            "{pairs} pairs: max |self-patch CTE| {worst_self:.1e}, max |EOS CTE - 1| {worst_eos:.1e}; \
             hand-weight model: brute force exact = {exact}, independent oracle err {oracle_err:.1e}"
        ),
    )
}

// ---------- 3. loss closed forms ----------

fn criterion_3() -> Outcome {
    let mut worst: f64 = 0.0;
    for n in 2..=8usize {
        let (l, _) = contrastive_loss_from_logits(Array2::from_elem((n, n), 0.7).view()).unwrap();
        worst = worst.max((l - (n as f64).ln()).abs());
        let (l, _) = claim_loss_from_logits(&[vec![-1.3; n]], &[0]).unwrap();
        worst = worst.max((l - (n as f64).ln()).abs());
    }
    let (l, _) = claim_loss_from_logits(&[vec![2.0, 1.0, 0.0]], &[0]).unwrap();
    let z: f64 = [2.0f64, 1.0, 0.0].iter().map(|v| v.exp()).sum();
    let oracle = -(2.0f64.exp() / z).ln();
    let ok = worst <= 1e-9 && (l - oracle).abs() < 1e-12 && (l - 0.4076).abs() < 1e-4;
    outcome(ok, format!("max |L - ln N| {worst:.1e}; claim [2,1,0] = {l:.6} (oracle {oracle:.6})"))
}

// ---------- 4. reduction identities ----------

fn small_training_setup() -> (DualEncoder, TrainData) {
    let onto = Ontology::chexpert();
    let vocab = Vocab::from_lexicon(&onto.lexicon());
    let layout = nast::data::FeatureLayout::new(&onto);
    let corpus = generate_corpus(&DataConfig { n_studies: 600, seed: 8, ..Default::default() }, &onto).unwrap();
    let spec = pipeline::ModelSpec::default();
    let data = TrainData::from_records(&corpus.records, &vocab, spec.max_seq_len, CaptionSource::Single).unwrap();
    (DualEncoder::new(spec.model_config(&vocab, &layout)).unwrap(), data)
}

fn criterion_4() -> Outcome {
    let (base, data) = small_training_setup();
    let l = base.n_layers();
    let alpha = LayerWeights {
        cte_layer: vec![0.0; l],
        alpha: (0..l).map(|i| [0.0, 1.0, 0.35, 0.0, 0.7, 0.2][i % 6]).collect(),
    };
    let run = |w: &LayerWeights, beta: f64, steps: usize| {
        let mut m = base.clone();
        m.reset_adapters(11);
        let before = m.clone();
        let cfg = TrainConfig {
            beta,
            steps,
            seed: 11,
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        train(&mut m, &data, w, &cfg, GradMode::Finetune, |_| {}).unwrap();
        (before, m)
    };
    let (_, nast_b0) = run(&alpha, 0.0, 20);
    let (_, uniform) = run(&LayerWeights::uniform(l), 2.0, 20);
    let ckpt = |m: &DualEncoder| serde_json::to_string(&m.to_checkpoint()).unwrap();
    let identical = ckpt(&nast_b0) == ckpt(&uniform);

    let (before, after) = run(&alpha, 2.0, 100);
    let zero_layers: Vec<usize> = (1..=l).filter(|&i| alpha.alpha[i - 1] == 0.0).collect();
    let mut frozen = true;
    let mut moved_other = false;
    for spec in before.params().specs() {
        if let nast::encoder::ParamGroup::TextLora { layer } = spec.group {
            let same = before.params().get(&spec.name) == after.params().get(&spec.name);
            if zero_layers.contains(&layer) {
                frozen &= same;
            } else {
                moved_other |= !same;
            }
        }
    }
    outcome(
        identical && frozen && moved_other,
        format!(
            "beta=0 vs uniform checkpoints identical: {identical}; alpha=0 layers {zero_layers:?} bit-identical after 100 steps: {frozen}"
        ),
    )
}

// ---------- 5, 6, 8. full desk experiment ----------

struct Experiment {
    report: pipeline::Report,
    records: Vec<pipeline::EvalRecord>,
    train_secs: BTreeMap<&'static str, f64>,
    pairs: Vec<McqPair>,
}

fn full_experiment(root: &Path) -> Experiment {
    let cfg = RunConfig {
        out_root: root.to_path_buf(),
        ..RunConfig::default()
    };
    let arms = [Arm::Nast, Arm::Uniform];
    pipeline::cmd_gen_data(&cfg).unwrap();
    pipeline::cmd_gen_benchmark(&cfg).unwrap();
    pipeline::cmd_pretrain(&cfg).unwrap();
    pipeline::cmd_trace(&cfg).unwrap();
    let mut train_secs = BTreeMap::new();
    for arm in arms {
        let t = Instant::now();
        pipeline::cmd_train(&cfg, &[arm], &cfg.seeds).unwrap();
        train_secs.insert(arm.name(), t.elapsed().as_secs_f64());
    }
    let records = pipeline::cmd_eval(&cfg, &arms, &cfg.seeds).unwrap();
    let report = pipeline::cmd_report(&cfg, &arms, &cfg.seeds).unwrap();
    let pairs = pipeline::Workspace::open(&cfg).unwrap().benchmark().unwrap();
    Experiment {
        report,
        records,
        train_secs,
        pairs,
    }
}

fn column(report: &pipeline::Report, arm: &str, name: &str) -> Vec<f64> {
    let c = report.columns.iter().position(|x| x == name).unwrap();
    report
        .rows
        .iter()
        .filter(|r| r.arm == arm)
        .filter_map(|r| r.values[c])
        .collect()
}

fn criterion_5(e: &Experiment) -> Outcome {
    let n = column(&e.report, "nast", "top_3_share");
    let u = column(&e.report, "uniform", "top_3_share");
    let every = n.len() == 5 && u.len() == 5 && n.iter().zip(&u).all(|(a, b)| a > b);
    let fast = e.train_secs.values().all(|&s| s < 900.0);
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.1}")).collect::<Vec<_>>().join("/");
    outcome(
        every && fast,
        format!(
            "top-3 share NAST {} vs uniform {} (%); train time nast {:.0}s, uniform {:.0}s",
            fmt(&n),
            fmt(&u),
            e.train_secs["nast"],
            e.train_secs["uniform"]
        ),
    )
}

fn criterion_6(e: &Experiment) -> Outcome {
    let gap_n = util::mean(&column(&e.report, "nast", "gap"));
    let gap_u = util::mean(&column(&e.report, "uniform", "gap"));
    let neg_n = util::mean(&column(&e.report, "nast", "mcq_negated"));
    let neg_u = util::mean(&column(&e.report, "uniform", "mcq_negated"));
    outcome(
        gap_n < gap_u && neg_n >= neg_u,
        format!(
            "mean gap NAST {gap_n:.2} vs uniform {gap_u:.2}; mean negated acc NAST {neg_n:.2} vs uniform {neg_u:.2} ({} MCQs)",
            e.pairs.len()
        ),
    )
}

// ---------- 7. data integrity ----------

fn criterion_7(e: &Experiment, root: &Path) -> Outcome {
    let onto = Ontology::chexpert();
    let cfg = DataConfig::default();
    let corpus = generate_corpus(&cfg, &onto).unwrap();
    let v = CaptionValidator::new(&onto);
    let mut bad_sets = 0;
    for r in &corpus.records {
        let truth = &r.claim_set.facts[r.claim_set.correct_index];
        let valid: Vec<usize> = (0..r.claim_set.k()).filter(|&i| v.validate(&r.claim_set.claims[i], truth).passed()).collect();
        if valid != vec![r.claim_set.correct_index] {
            bad_sets += 1;
        }
    }
    let bad_mcq = e.pairs.iter().filter(|p| p.verify().is_err()).count();

    let mut split_of: HashMap<&str, Split> = HashMap::new();
    let mut leaks = 0;
    for r in &corpus.records {
        if let Some(s) = split_of.insert(&r.patient_id, r.split) {
            leaks += (s != r.split) as usize;
        }
    }
    let a = root.join("regen-a");
    let b = root.join("regen-b");
    write_corpus(&a, &corpus, &cfg, &onto).unwrap();
    write_corpus(&b, &generate_corpus(&cfg, &onto).unwrap(), &cfg, &onto).unwrap();
    let identical = ["ontology.json", "train.jsonl", "val.jsonl", "test.jsonl", "MANIFEST.json"]
        .iter()
        .all(|f| std::fs::read(a.join(f)).unwrap() == std::fs::read(b.join(f)).unwrap());
    outcome(
        bad_sets == 0 && bad_mcq == 0 && leaks == 0 && corpus.n_patients >= 5000 && identical,
        format!(
            "{} claim sets, {bad_sets} without exactly one valid claim; {} MCQs, {bad_mcq} failing the span diff; \
             {} patients, {leaks} split leaks; regeneration byte-identical: {identical}",
            corpus.records.len(),
            e.pairs.len(),
            corpus.n_patients
        ),
    )
}

// ---------- 8. retrieval sanity ----------

fn criterion_8(e: &Experiment) -> Outcome {
    let monotone = e.records.iter().all(|r| r.retrieval.r_at_5 >= r.retrieval.r_at_1);
    let onto = Ontology::chexpert();
    let corpus = generate_corpus(
        &DataConfig {
            n_studies: 3000,
            noise_sigma: 0.0,
            ..Default::default()
        },
        &onto,
    )
    .unwrap();
    let feats: Vec<&[f64]> = corpus.records.iter().map(|r| r.image_features.as_slice()).collect();
    let mut worst: f64 = 1.0;
    for c in &onto.conditions {
        let labels: Vec<bool> = corpus
            .records
            .iter()
            .map(|r| r.facts.iter().any(|f| f.condition == c.id && f.existence.is_present()))
            .collect();
        let probe = LinearProbe::fit(&feats, &labels).unwrap();
        worst = worst.min(probe.accuracy(&feats, &labels));
    }
    outcome(
        monotone && worst == 1.0,
        format!(
            "R@5 >= R@1 for all {} evaluated models: {monotone}; worst per-condition probe accuracy at sigma=0: {:.2}%",
            e.records.len(),
            100.0 * worst
        ),
    )
}

// ---------- 9. determinism ----------

fn digest_tree(dir: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(
                    p.strip_prefix(dir).unwrap().to_string_lossy().into_owned(),
                    util::sha256_hex(&std::fs::read(&p).unwrap()),
                );
            }
        }
    }
    out
}

fn criterion_9(root: &Path) -> Outcome {
    let mut cfg = RunConfig {
        seeds: vec![0, 1],
        ..RunConfig::default()
    };
    cfg.data.n_studies = 2000;
    cfg.pretrain.steps = 80;
    cfg.train.steps = 40;
    cfg.trace.n_probes = 60;
    let arms = [Arm::Nast, Arm::Uniform];
    let seeds = cfg.seeds.clone();
    let run_phase = |cfg: &RunConfig, phase: usize| match phase {
        0 => pipeline::cmd_gen_data(cfg).map(|_| ()),
        1 => pipeline::cmd_gen_benchmark(cfg).map(|_| ()),
        2 => pipeline::cmd_pretrain(cfg),
        3 => pipeline::cmd_trace(cfg).map(|_| ()),
        4 => pipeline::cmd_train(cfg, &arms, &seeds),
        5 => pipeline::cmd_eval(cfg, &arms, &seeds).map(|_| ()),
        _ => pipeline::cmd_report(cfg, &arms, &seeds).map(|_| ()),
    };
    let names = ["gen-data", "gen-benchmark", "pretrain", "trace", "train", "eval", "report"];
    let a = RunConfig {
        out_root: root.join("det-a"),
        ..cfg.clone()
    };
    let b = RunConfig {
        out_root: root.join("det-b"),
        ..cfg
    };
    let mut differing = Vec::new();
    let mut files = 0;
    for (i, name) in names.iter().enumerate() {
        run_phase(&a, i).unwrap();
        let first = digest_tree(a.run_dir().root());
        // rerun in place, and from scratch in a second root
        run_phase(&a, i).unwrap();
        run_phase(&b, i).unwrap();
        let again = digest_tree(a.run_dir().root());
        let other = digest_tree(b.run_dir().root());
        for (f, h) in &first {
            if again.get(f) != Some(h) || other.get(f) != Some(h) {
                differing.push(format!("{name}: {f}"));
            }
        }
        files = first.len();
    }
    outcome(
        differing.is_empty(),
        format!("7 subcommands rerun in place and in a fresh root; {files} artifacts; differing: {differing:?}"),
    )
}

fn main() {
    let root = tempfile::tempdir().unwrap();
    let started = Instant::now();
    let mut results: Vec<(u8, &str, Outcome)> = vec![
        (1, "gradient suite", criterion_1()),
        (2, "CTE invariants", criterion_2()),
        (3, "loss closed forms", criterion_3()),
        (4, "reduction identity", criterion_4()),
    ];
    let e = full_experiment(&root.path().join("full"));
    results.push((5, "concentration ordering", criterion_5(&e)));
    results.push((6, "gap ordering", criterion_6(&e)));
    results.push((7, "data integrity", criterion_7(&e, root.path())));
    results.push((8, "retrieval sanity", criterion_8(&e)));
    results.push((9, "determinism", criterion_9(root.path())));

    println!();
    for (id, name, o) in &results {
        println!("[{}] criterion {id} ({name}): {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    let failed = results.iter().filter(|r| !r.2.pass).count();
    println!(
        "\nacceptance: {} passed, {failed} failed in {:.0}s",
        results.len() - failed,
        started.elapsed().as_secs_f64()
    );
    println!("\n{}", e.report.to_markdown());
    if failed > 0 {
        std::process::exit(1);
    }
}
