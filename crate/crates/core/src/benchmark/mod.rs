//! Polarity-paired multiple-choice benchmark: negated options and their
//! affirmative rewrites, built from study labels.

mod eval;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::summary::{check_polarity_diff, realize_negated, rewrite_affirmative, RealizedOption, STEM};
use crate::data::{Existence, Ontology, StudyRecord};
use crate::error::{Error, Result};
use crate::util::{self, Rng};

pub use eval::{
    claim_accuracy, embed_texts, evaluate_mcq, gap_report, recall_at_k, retrieval_report, ClaimReport, GapReport,
    McqAccuracy, ModelScorer, OptionScorer, RetrievalReport, Variant,
};

pub const OPTIONS: usize = 4;
pub const CONDITIONS_PER_MCQ: usize = 3;
pub const MIN_PRESENT: usize = 2;
pub const MIN_ABSENT: usize = 3;

/// Presence flags for three conditions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelConfig {
    pub conditions: Vec<String>,
    pub values: Vec<bool>,
}

impl LabelConfig {
    fn items(&self) -> Vec<(String, bool)> {
        self.conditions.iter().cloned().zip(self.values.iter().copied()).collect()
    }

    /// Whether the flags agree with the study's definitive facts.
    pub fn matches(&self, record: &StudyRecord) -> bool {
        self.conditions.iter().zip(&self.values).all(|(c, v)| {
            record
                .definitive_facts()
                .any(|f| &f.condition == c && f.existence.is_present() == *v)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McqPair {
    pub study_id: String,
    pub image_features: Vec<f64>,
    pub stem: String,
    pub negated_options: Vec<RealizedOption>,
    pub affirmative_options: Vec<RealizedOption>,
    pub answer_index: usize,
    pub configs: Vec<LabelConfig>,
}

impl McqPair {
    /// Structural checks plus the span-restricted diff on every option.
    pub fn verify(&self) -> Result<()> {
        let n = self.negated_options.len();
        if n != OPTIONS || self.affirmative_options.len() != n || self.configs.len() != n || self.answer_index >= n {
            return Err(Error::Construction(format!("{}: malformed MCQ", self.study_id)));
        }
        for i in 0..n {
            for j in i + 1..n {
                if self.configs[i] == self.configs[j] {
                    return Err(Error::Construction(format!("{}: duplicate configs", self.study_id)));
                }
            }
        }
        for (a, b) in self.negated_options.iter().zip(&self.affirmative_options) {
            check_polarity_diff(a, b)?;
        }
        Ok(())
    }

    pub fn options(&self, variant: Variant) -> &[RealizedOption] {
        match variant {
            Variant::Negated => &self.negated_options,
            Variant::Affirmative => &self.affirmative_options,
        }
    }
}

/// Studies with enough positive and negative labels to pose a question.
pub fn filter_eligible(records: &[StudyRecord]) -> Vec<&StudyRecord> {
    records
        .iter()
        .filter(|r| r.count(Existence::Present) >= MIN_PRESENT && r.count(Existence::Absent) >= MIN_ABSENT)
        .collect()
}

/// The study's true config on three sampled conditions (at least one absent),
/// followed by three distinct other flag vectors, in shuffled order. Returns
/// the configs and the index of the truth.
pub fn make_configs(record: &StudyRecord, rng: &mut Rng) -> Result<(Vec<LabelConfig>, usize)> {
    let facts: Vec<_> = record.definitive_facts().collect();
    if facts.len() < CONDITIONS_PER_MCQ || record.count(Existence::Absent) == 0 {
        return Err(Error::Construction(format!(
            "{}: needs {CONDITIONS_PER_MCQ} definitive conditions with one absent",
            record.study_id
        )));
    }
    let chosen = loop {
        let pick: Vec<_> = facts.choose_multiple(rng, CONDITIONS_PER_MCQ).copied().collect();
        if pick.iter().any(|f| !f.existence.is_present()) {
            break pick;
        }
    };
    let conditions: Vec<String> = chosen.iter().map(|f| f.condition.clone()).collect();
    let truth: Vec<bool> = chosen.iter().map(|f| f.existence.is_present()).collect();
    let code = |v: &[bool]| v.iter().enumerate().fold(0u8, |acc, (i, b)| acc | ((*b as u8) << i));
    let truth_code = code(&truth);
    let mut others: Vec<u8> = (0..1u8 << CONDITIONS_PER_MCQ).filter(|&c| c != truth_code).collect();
    others.shuffle(rng);
    let mut codes = vec![truth_code];
    codes.extend_from_slice(&others[..OPTIONS - 1]);
    codes.shuffle(rng);
    let answer = codes.iter().position(|&c| c == truth_code).expect("truth is among the codes");
    let configs = codes
        .into_iter()
        .map(|c| LabelConfig {
            conditions: conditions.clone(),
            values: (0..CONDITIONS_PER_MCQ).map(|i| c >> i & 1 == 1).collect(),
        })
        .collect();
    Ok((configs, answer))
}

pub fn build_mcq(record: &StudyRecord, ontology: &Ontology, rng: &mut Rng) -> Result<McqPair> {
    let (configs, answer_index) = make_configs(record, rng)?;
    let mut negated_options = Vec::with_capacity(OPTIONS);
    let mut affirmative_options = Vec::with_capacity(OPTIONS);
    for c in &configs {
        let neg = realize_negated(&c.items(), ontology, rng)?;
        affirmative_options.push(rewrite_affirmative(&neg, ontology)?);
        negated_options.push(neg);
    }
    let pair = McqPair {
        study_id: record.study_id.clone(),
        image_features: record.image_features.clone(),
        stem: STEM.to_string(),
        negated_options,
        affirmative_options,
        answer_index,
        configs,
    };
    pair.verify()?;
    Ok(pair)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkSummary {
    pub seed: u64,
    pub n_input: usize,
    pub n_eligible: usize,
    pub n_pairs: usize,
    pub n_skipped: usize,
}

/// One MCQ per eligible study, built in parallel with a per-study stream.
pub fn build_benchmark(records: &[StudyRecord], ontology: &Ontology, seed: u64) -> Result<(Vec<McqPair>, BenchmarkSummary)> {
    let eligible = filter_eligible(records);
    let built: Vec<Result<McqPair>> = eligible
        .par_iter()
        .enumerate()
        .map(|(i, r)| build_mcq(r, ontology, &mut util::rng_for(seed, "mcq", i as u64)))
        .collect();
    let mut pairs = Vec::with_capacity(built.len());
    let mut skipped = 0;
    for (r, b) in eligible.iter().zip(built) {
        match b {
            Ok(p) => pairs.push(p),
            Err(Error::Construction(m)) if !m.starts_with("polarity diff") => {
                log::warn!("skipping {}: {m}", r.study_id);
                skipped += 1;
            }
            Err(e) => return Err(e),
        }
    }
    let summary = BenchmarkSummary {
        seed,
        n_input: records.len(),
        n_eligible: eligible.len(),
        n_pairs: pairs.len(),
        n_skipped: skipped,
    };
    Ok((pairs, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_corpus, DataConfig, StructuredFact};
    use crate::data::summary::PhraseKind;

    fn record(facts: Vec<StructuredFact>) -> StudyRecord {
        let corpus = generate_corpus(&DataConfig { n_studies: 1, ..Default::default() }, &Ontology::chexpert()).unwrap();
        StudyRecord {
            facts,
            ..corpus.records[0].clone()
        }
    }

    fn p(c: &str) -> StructuredFact {
        StructuredFact::present(c)
    }
    fn a(c: &str) -> StructuredFact {
        StructuredFact::absent(c)
    }

    #[test]
    fn eligibility_threshold() {
        let keep = record(vec![p("edema"), p("fracture"), a("pneumonia"), a("cardiomegaly"), a("lung_lesion")]);
        let one_present = record(vec![p("edema"), a("fracture"), a("pneumonia"), a("cardiomegaly"), a("lung_lesion")]);
        let normal = record(vec![a("edema"), a("fracture"), a("pneumonia")]);
        let uncertain = record(vec![p("edema"), p("fracture").uncertain(), a("pneumonia"), a("cardiomegaly"), a("lung_lesion")]);
        let recs = vec![keep.clone(), one_present, normal, uncertain];
        let kept = filter_eligible(&recs);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0], &keep);
    }

    #[test]
    fn configs_are_distinct_and_truth_has_an_absent() {
        let r = record(vec![p("edema"), p("fracture"), a("pneumonia"), a("cardiomegaly"), a("lung_lesion")]);
        for i in 0..300 {
            let (cs, ans) = make_configs(&r, &mut util::rng_for(1, "t", i)).unwrap();
            assert_eq!(cs.len(), 4);
            for x in 0..4 {
                for y in x + 1..4 {
                    assert_ne!(cs[x], cs[y]);
                }
                assert_eq!(cs[x].conditions, cs[0].conditions);
            }
            assert!(cs[ans].values.contains(&false));
            let matching: Vec<usize> = (0..4).filter(|&k| cs[k].matches(&r)).collect();
            assert_eq!(matching, vec![ans]);
        }
        let (a1, i1) = make_configs(&r, &mut util::rng_for(2, "t", 0)).unwrap();
        let (a2, i2) = make_configs(&r, &mut util::rng_for(2, "t", 0)).unwrap();
        assert_eq!((a1, i1), (a2, i2));
    }

    #[test]
    fn all_present_study_cannot_pose_a_question() {
        let r = record(vec![p("edema"), p("fracture"), p("pneumonia")]);
        assert!(matches!(make_configs(&r, &mut util::rng_for(0, "t", 0)), Err(Error::Construction(_))));
    }

    #[test]
    fn built_pairs_verify() {
        let o = Ontology::chexpert();
        let corpus = generate_corpus(&DataConfig { n_studies: 400, ..Default::default() }, &o).unwrap();
        let (pairs, s) = build_benchmark(&corpus.records, &o, 9).unwrap();
        assert!(s.n_pairs > 10, "{s:?}");
        assert_eq!(s.n_pairs + s.n_skipped, s.n_eligible);
        for pr in &pairs {
            pr.verify().unwrap();
            let truth = &pr.negated_options[pr.answer_index];
            assert!(truth.spans.iter().any(|s| s.kind == PhraseKind::Negation));
        }
        let (again, _) = build_benchmark(&corpus.records, &o, 9).unwrap();
        assert_eq!(pairs, again);
    }
}
