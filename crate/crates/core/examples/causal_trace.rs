//! Trace a handful of negation probes through an untrained text encoder and
//! turn the per-layer effects into selective training weights.

use nast::causal::{aggregate_cte, build_probe_set, normalize_weights, trace_all, DEFAULT_D_MIN};
use nast::data::{generate_corpus, DataConfig, FeatureLayout, Ontology};
use nast::encoder::{DualEncoder, Vocab};
use nast::pipeline::ModelSpec;

fn main() -> nast::Result<()> {
    let onto = Ontology::chexpert();
    let vocab = Vocab::from_lexicon(&onto.lexicon());
    let spec = ModelSpec::default();
    let model = DualEncoder::new(spec.model_config(&vocab, &FeatureLayout::new(&onto)))?;

    let corpus = generate_corpus(&DataConfig { n_studies: 60, ..DataConfig::default() }, &onto)?;
    let facts = corpus
        .records
        .iter()
        .flat_map(|r| r.definitive_facts().map(move |f| (f, r.image_features.as_slice())));
    let probes = build_probe_set(facts, &onto, &vocab, spec.max_seq_len)?;
    let probes = &probes[..probes.len().min(40)];
    println!("e.g. {:?} vs {:?}", probes[0].correct_caption, probes[0].foil_caption);

    let results = trace_all(&model, probes, DEFAULT_D_MIN)?;
    let summary = aggregate_cte(&results)?;
    let weights = normalize_weights(&summary.cte_layer)?;
    println!("{} pairs, {} filtered (|d| below threshold)", summary.num_pairs, summary.num_filtered);
    for (l, (c, a)) in summary.cte_layer.iter().zip(&weights.alpha).enumerate() {
        println!("layer {}: CTE {c:+.4}  alpha {a:.3}", l + 1);
    }
    println!("ranking: {:?}", weights.ranking());
    Ok(())
}
