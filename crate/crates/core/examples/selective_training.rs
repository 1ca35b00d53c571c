//! Fine-tune the adapters twice from the same start, once with CTE-derived
//! layer weights and once uniformly, and compare where the updates land.

use nast::causal::LayerWeights;
use nast::data::{generate_corpus, DataConfig, FeatureLayout, Ontology};
use nast::encoder::{DualEncoder, GradMode, Vocab};
use nast::pipeline::ModelSpec;
use nast::trainer::{concentration_report, train, CaptionSource, TrainConfig, TrainData};

fn main() -> nast::Result<()> {
    let onto = Ontology::chexpert();
    let vocab = Vocab::from_lexicon(&onto.lexicon());
    let spec = ModelSpec::default();
    let corpus = generate_corpus(&DataConfig { n_studies: 800, ..DataConfig::default() }, &onto)?;
    let data = TrainData::from_records(&corpus.records, &vocab, spec.max_seq_len, CaptionSource::Single)?;
    let base = DualEncoder::new(spec.model_config(&vocab, &FeatureLayout::new(&onto)))?;

    // weights as a trace might produce them
    let alpha = LayerWeights {
        cte_layer: vec![-0.02, 0.31, 0.24, 0.09, 0.10, 0.16],
        alpha: vec![0.0, 1.0, 0.79, 0.33, 0.36, 0.54],
    };
    let cfg = TrainConfig { steps: 40, ..TrainConfig::default() };

    for (name, w) in [("selective", &alpha), ("uniform", &LayerWeights::uniform(6))] {
        let mut m = base.clone();
        m.reset_adapters(cfg.seed);
        let out = train(&mut m, &data, w, &cfg, GradMode::Finetune, |_| {})?;
        let first = &out.curve[0];
        let last = out.curve.last().expect("steps > 0");
        println!(
            "{name:<9} loss {:.3} -> {:.3}; top-3 share of adapter updates {:.1}%",
            first.loss_total,
            last.loss_total,
            concentration_report(&out.log, &alpha, 3)?
        );
    }
    Ok(())
}
