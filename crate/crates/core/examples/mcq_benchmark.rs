//! Build polarity-paired multiple-choice questions and score an untrained
//! model on both phrasings.

use nast::benchmark::{build_benchmark, gap_report, ModelScorer, Variant};
use nast::data::{generate_corpus, DataConfig, FeatureLayout, Ontology};
use nast::encoder::{DualEncoder, Vocab};
use nast::pipeline::ModelSpec;

fn main() -> nast::Result<()> {
    let onto = Ontology::chexpert();
    let corpus = generate_corpus(&DataConfig { n_studies: 3000, ..DataConfig::default() }, &onto)?;
    let (pairs, summary) = build_benchmark(&corpus.records, &onto, 0)?;
    println!("{} eligible studies, {} questions", summary.n_eligible, summary.n_pairs);

    let q = &pairs[0];
    println!("\n{}", q.stem);
    for (i, (neg, aff)) in q.options(Variant::Negated).iter().zip(q.options(Variant::Affirmative)).enumerate() {
        let mark = if i == q.answer_index { '*' } else { ' ' };
        println!(" {mark} {}\n     {}", neg.text, aff.text);
    }

    let vocab = Vocab::from_lexicon(&onto.lexicon());
    let model = DualEncoder::new(ModelSpec::default().model_config(&vocab, &FeatureLayout::new(&onto)))?;
    let g = gap_report(&ModelScorer { model: &model, vocab: &vocab }, &pairs, 0)?;
    println!(
        "\naffirmative {:.1}%  negated {:.1}%  gap {:.1}",
        g.acc_affirmative, g.acc_negated, g.gap
    );
    Ok(())
}
