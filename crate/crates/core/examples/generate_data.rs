//! Generate a small synthetic corpus and look at one study: its facts, the
//! single caption, the claim set and the summary used for base alignment.

use nast::data::{generate_corpus, CaptionValidator, DataConfig, Ontology, Split};

fn main() -> nast::Result<()> {
    let onto = Ontology::chexpert();
    let cfg = DataConfig {
        n_studies: 500,
        ..DataConfig::default()
    };
    let corpus = generate_corpus(&cfg, &onto)?;
    println!("{} studies from {} patients", corpus.records.len(), corpus.n_patients);
    for split in [Split::Train, Split::Val, Split::Test] {
        println!("  {:<5} {}", split.name(), corpus.split(split).count());
    }

    let r = &corpus.records[0];
    println!("\nstudy {} (patient {})", r.study_id, r.patient_id);
    for f in &r.facts {
        println!("  fact: {f:?}");
    }
    println!("caption: {}", r.caption);
    println!("base caption: {}", r.base_caption);

    let v = CaptionValidator::new(&onto);
    let truth = &r.claim_set.facts[r.claim_set.correct_index];
    for (i, claim) in r.claim_set.claims.iter().enumerate() {
        let mark = if v.validate(claim, truth).passed() { "valid" } else { "foil " };
        println!("  [{mark}] {:<12?} {claim}", r.claim_set.negation_types[i]);
    }
    Ok(())
}
