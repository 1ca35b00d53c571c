//! Study generation, patient-level splits and the on-disk corpus.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::{IteratorRandom, SliceRandom};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::captions::{realize_caption_form, CaptionValidator, ABSENT_FORMS};
use super::claims::{build_claim_set, ClaimSet};
use super::facts::{Certainty, Existence, StructuredFact};
use super::image::{render_image, FeatureLayout};
use super::ontology::Ontology;
use super::summary::{realize_negated, rewrite_spans, PhraseKind};
use crate::error::{Error, Result};
use crate::util::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub seed: u64,
    pub n_studies: usize,
    pub noise_sigma: f64,
    /// Train, validation, test.
    pub split_ratios: [f64; 3],
    pub min_conditions: usize,
    pub max_conditions: usize,
    pub max_studies_per_patient: usize,
    pub p_present: f64,
    pub p_location: f64,
    pub p_severity: f64,
    pub p_uncertain: f64,
    pub k_min: usize,
    pub k_max: usize,
    /// Conditions per base-alignment summary.
    pub base_conditions: usize,
    /// Probability that an absent finding in a base summary keeps its negation phrase.
    pub base_negation_rate: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            seed: 0,
            n_studies: 20_000,
            noise_sigma: 0.1,
            split_ratios: [0.8, 0.1, 0.1],
            min_conditions: 3,
            max_conditions: 6,
            max_studies_per_patient: 4,
            p_present: 0.5,
            p_location: 0.7,
            p_severity: 0.7,
            p_uncertain: 0.1,
            k_min: 5,
            k_max: 7,
            base_conditions: 3,
            base_negation_rate: 0.1,
        }
    }
}

impl DataConfig {
    pub fn validate(&self, ontology: &Ontology) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_studies == 0 {
            return bad("n_studies must be positive");
        }
        if self.min_conditions == 0 || self.min_conditions > self.max_conditions || self.max_conditions > ontology.len() {
            return bad("need 1 <= min_conditions <= max_conditions <= number of conditions");
        }
        if self.max_studies_per_patient == 0 {
            return bad("max_studies_per_patient must be positive");
        }
        if (self.split_ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 || self.split_ratios.iter().any(|r| *r < 0.0) {
            return bad("split ratios must be nonnegative and sum to 1");
        }
        for (name, p) in [
            ("p_present", self.p_present),
            ("p_location", self.p_location),
            ("p_severity", self.p_severity),
            ("p_uncertain", self.p_uncertain),
            ("base_negation_rate", self.base_negation_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        if self.k_min < 2 || self.k_min > self.k_max {
            return bad("need 2 <= k_min <= k_max");
        }
        if self.base_conditions == 0 {
            return bad("base_conditions must be positive");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be finite and >= 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRecord {
    pub patient_id: String,
    pub study_id: String,
    pub split: Split,
    pub facts: Vec<StructuredFact>,
    pub image_features: Vec<f64>,
    /// Single-caption supervision: one definitive fact realized as a sentence.
    pub caption: String,
    pub caption_fact: usize,
    pub claim_set: ClaimSet,
    /// Multi-finding summary, mostly affirmative, used for base alignment.
    pub base_caption: String,
}

impl StudyRecord {
    pub fn definitive_facts(&self) -> impl Iterator<Item = &StructuredFact> {
        self.facts.iter().filter(|f| f.is_definitive())
    }

    pub fn count(&self, existence: Existence) -> usize {
        self.definitive_facts().filter(|f| f.existence == existence).count()
    }
}

/// Outcome details that go into the manifest.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StudyStats {
    pub claim_set_reduced: bool,
}

/// Generate one study. The split is filled in later from the patient id.
pub fn gen_study(
    ontology: &Ontology,
    layout: &FeatureLayout,
    validator: &CaptionValidator,
    cfg: &DataConfig,
    rng: &mut Rng,
    patient_id: &str,
    study_id: &str,
) -> Result<(StudyRecord, StudyStats)> {
    let n = rng.gen_range(cfg.min_conditions..=cfg.max_conditions);
    let mut conditions = ontology.conditions.iter().choose_multiple(rng, n);
    conditions.shuffle(rng);
    let mut facts = Vec::with_capacity(n);
    for c in conditions {
        let existence = if rng.gen_bool(cfg.p_present) {
            Existence::Present
        } else {
            Existence::Absent
        };
        let mut f = StructuredFact::new(&c.id, existence);
        if existence.is_present() {
            if c.has_locations() && rng.gen_bool(cfg.p_location) {
                f.location = c.locations.choose(rng).cloned();
            }
            if c.has_severities() && rng.gen_bool(cfg.p_severity) {
                f.severity = c.severities.choose(rng).cloned();
            }
        }
        if rng.gen_bool(cfg.p_uncertain) {
            f.certainty = Certainty::Uncertain;
        }
        facts.push(f);
    }
    if facts.iter().all(|f| !f.is_definitive()) {
        facts[0].certainty = Certainty::Confident;
    }
    let image_features = render_image(&facts, ontology, layout, rng, cfg.noise_sigma)?;

    let definitive: Vec<usize> = (0..facts.len()).filter(|&i| facts[i].is_definitive()).collect();
    let caption_fact = *definitive.choose(rng).expect("at least one definitive fact");
    let form = rng.gen_range(0..ABSENT_FORMS);
    let caption = realize_caption_form(&facts[caption_fact], ontology, form)?;
    if !validator.validate(&caption, &facts[caption_fact]).passed() {
        return Err(Error::Construction(format!("template caption {caption:?} failed validation")));
    }

    let claim_fact = &facts[*definitive.choose(rng).expect("nonempty")];
    let k = rng.gen_range(cfg.k_min..=cfg.k_max);
    let (claim_set, reduced) = build_claim_set(study_id, claim_fact, ontology, rng, k)?;
    let n_valid = claim_set
        .claims
        .iter()
        .filter(|c| validator.validate(c, claim_fact).passed())
        .count();
    if n_valid != 1 {
        return Err(Error::Construction(format!("claim set for {study_id} has {n_valid} validating claims")));
    }

    let mut base_items: Vec<(String, bool)> = definitive
        .iter()
        .map(|&i| (facts[i].condition.clone(), facts[i].existence.is_present()))
        .collect();
    base_items.shuffle(rng);
    base_items.truncate(cfg.base_conditions);
    let summary = realize_negated(&base_items, ontology, rng)?;
    let keep: Vec<bool> = summary
        .spans
        .iter()
        .map(|s| s.kind == PhraseKind::Negation && rng.gen_bool(cfg.base_negation_rate))
        .collect();
    let base_caption = rewrite_spans(&summary, ontology, |i| !keep[i])?.text;

    Ok((
        StudyRecord {
            patient_id: patient_id.to_string(),
            study_id: study_id.to_string(),
            split: Split::Train,
            facts,
            image_features,
            caption,
            caption_fact,
            claim_set,
            base_caption,
        },
        StudyStats {
            claim_set_reduced: reduced,
        },
    ))
}

/// Split for one patient: a seeded hash of the id mapped to `[0, 1)` and
/// bucketed by cumulative ratio.
pub fn split_for(patient_id: &str, ratios: &[f64; 3], seed: u64) -> Split {
    let h = util::derive_seed(seed, &format!("split/{patient_id}"), 0);
    let u = (h >> 11) as f64 / (1u64 << 53) as f64;
    if u < ratios[0] {
        Split::Train
    } else if u < ratios[0] + ratios[1] {
        Split::Val
    } else {
        Split::Test
    }
}

/// Assign every record the split of its patient.
pub fn split_patients(records: &mut [StudyRecord], ratios: &[f64; 3], seed: u64) -> Result<()> {
    if (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config("split ratios must sum to 1".into()));
    }
    for r in records {
        r.split = split_for(&r.patient_id, ratios, seed);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub studies: usize,
    pub patients: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub lines: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub n_studies: usize,
    pub n_patients: usize,
    pub split_ratios: [f64; 3],
    pub splits: BTreeMap<String, SplitCounts>,
    pub feature_dim: usize,
    pub noise_sigma: f64,
    pub n_claim_sets: usize,
    pub n_reduced_claim_sets: usize,
    pub files: BTreeMap<String, FileEntry>,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub records: Vec<StudyRecord>,
    pub n_patients: usize,
    pub n_reduced_claim_sets: usize,
}

impl Corpus {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &StudyRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }
}

/// Generate the full corpus. Studies are generated in parallel from per-index
/// seeds; the result does not depend on the thread count.
pub fn generate_corpus(cfg: &DataConfig, ontology: &Ontology) -> Result<Corpus> {
    cfg.validate(ontology)?;
    ontology.validate()?;
    let layout = FeatureLayout::new(ontology);
    let validator = CaptionValidator::new(ontology);

    let mut owner = Vec::with_capacity(cfg.n_studies);
    let mut sizes = util::rng_for(cfg.seed, "patient-sizes", 0);
    let mut patient = 0usize;
    while owner.len() < cfg.n_studies {
        let k = sizes.gen_range(1..=cfg.max_studies_per_patient).min(cfg.n_studies - owner.len());
        owner.extend(std::iter::repeat(patient).take(k));
        patient += 1;
    }
    let width = (cfg.n_studies.max(patient)).to_string().len();

    let generated: Vec<(StudyRecord, StudyStats)> = owner
        .par_iter()
        .enumerate()
        .map(|(i, &p)| {
            let mut rng = util::rng_for(cfg.seed, "study", i as u64);
            gen_study(
                ontology,
                &layout,
                &validator,
                cfg,
                &mut rng,
                &format!("p{p:0width$}"),
                &format!("s{i:0width$}"),
            )
        })
        .collect::<Result<_>>()?;
    let n_reduced = generated.iter().filter(|(_, s)| s.claim_set_reduced).count();
    let mut records: Vec<StudyRecord> = generated.into_iter().map(|(r, _)| r).collect();
    split_patients(&mut records, &cfg.split_ratios, cfg.seed)?;
    Ok(Corpus {
        records,
        n_patients: patient,
        n_reduced_claim_sets: n_reduced,
    })
}

pub const ONTOLOGY_FILE: &str = "ontology.json";
pub const MANIFEST_FILE: &str = "MANIFEST.json";

pub fn split_file(split: Split) -> String {
    format!("{}.jsonl", split.name())
}

fn jsonl_bytes(records: &[&StudyRecord]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for r in records {
        out.extend(serde_json::to_vec(r)?);
        out.push(b'\n');
    }
    Ok(out)
}

/// Write the ontology, one JSONL file per split and the manifest.
pub fn write_corpus(dir: &Path, corpus: &Corpus, cfg: &DataConfig, ontology: &Ontology) -> Result<Manifest> {
    util::ensure_dir(dir)?;
    ontology.save(&dir.join(ONTOLOGY_FILE))?;
    let mut files = BTreeMap::new();
    let mut splits = BTreeMap::new();
    for s in Split::ALL {
        let recs: Vec<&StudyRecord> = corpus.split(s).collect();
        let bytes = jsonl_bytes(&recs)?;
        let name = split_file(s);
        util::write_bytes(&dir.join(&name), &bytes)?;
        files.insert(
            name,
            FileEntry {
                lines: recs.len(),
                sha256: util::sha256_hex(&bytes),
            },
        );
        let mut patients: Vec<&str> = recs.iter().map(|r| r.patient_id.as_str()).collect();
        patients.dedup();
        patients.sort_unstable();
        patients.dedup();
        splits.insert(
            s.name().to_string(),
            SplitCounts {
                studies: recs.len(),
                patients: patients.len(),
            },
        );
    }
    let manifest = Manifest {
        seed: cfg.seed,
        n_studies: corpus.records.len(),
        n_patients: corpus.n_patients,
        split_ratios: cfg.split_ratios,
        splits,
        feature_dim: FeatureLayout::new(ontology).dim,
        noise_sigma: cfg.noise_sigma,
        n_claim_sets: corpus.records.len(),
        n_reduced_claim_sets: corpus.n_reduced_claim_sets,
        files,
    };
    util::write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

pub fn read_split(dir: &Path, split: Split) -> Result<Vec<StudyRecord>> {
    util::read_jsonl(&dir.join(split_file(split)))
}
