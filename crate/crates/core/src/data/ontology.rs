//! Condition ontology: names, attribute values and affirmative alternatives.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::words;
use crate::error::{Error, Result};
use crate::util;

/// Negation cue lexicon. Multi-word cues match as contiguous word sequences.
pub const NEGATION_CUES: [&str; 5] = ["no", "without", "absent", "free of", "lacking"];

/// Whether `text` contains any negation cue at word level.
pub fn contains_negation_cue(text: &str) -> bool {
    let ws = words(text);
    NEGATION_CUES.iter().any(|cue| {
        let cue: Vec<&str> = cue.split(' ').collect();
        ws.windows(cue.len()).any(|w| w.iter().zip(&cue).all(|(a, b)| a == b))
    })
}

/// How a condition's location is verbalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocationKind {
    /// "there is consolidation in the right lower lobe"
    Lobe,
    /// "there is a left pneumothorax"
    Side,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub id: String,
    /// Phrase used in captions and MCQ options.
    pub name: String,
    /// Phrase used in causal-tracing probes.
    pub short_name: String,
    pub location_kind: LocationKind,
    pub locations: Vec<String>,
    /// Ordered from mildest to most severe.
    pub severities: Vec<String>,
    /// Negation-free description of the condition's absence.
    pub affirmative: String,
}

impl Condition {
    pub fn has_locations(&self) -> bool {
        !self.locations.is_empty()
    }

    pub fn has_severities(&self) -> bool {
        !self.severities.is_empty()
    }

    pub fn severity_rank(&self, severity: &str) -> Option<usize> {
        self.severities.iter().position(|s| s == severity)
    }

    /// The left/right mirror of a location, if it has one.
    pub fn mirror_location(&self, location: &str) -> Option<String> {
        let swapped = if let Some(rest) = location.strip_prefix("left") {
            format!("right{rest}")
        } else if let Some(rest) = location.strip_prefix("right") {
            format!("left{rest}")
        } else {
            return None;
        };
        self.locations.contains(&swapped).then_some(swapped)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ontology {
    pub conditions: Vec<Condition>,
}

const LOBES: [&str; 4] = ["right upper lobe", "right lower lobe", "left upper lobe", "left lower lobe"];
const SIDES: [&str; 2] = ["left", "right"];

impl Ontology {
    /// Thirteen CheXpert-style findings with their affirmative alternatives.
    pub fn chexpert() -> Self {
        let c = |id: &str, name: &str, short: &str, kind: LocationKind, sev: &[&str], aff: &str| Condition {
            id: id.into(),
            name: name.into(),
            short_name: short.into(),
            location_kind: kind,
            locations: match kind {
                LocationKind::Lobe => LOBES.iter().map(|s| s.to_string()).collect(),
                LocationKind::Side => SIDES.iter().map(|s| s.to_string()).collect(),
                LocationKind::None => Vec::new(),
            },
            severities: sev.iter().map(|s| s.to_string()).collect(),
            affirmative: aff.into(),
        };
        let graded = ["mild", "moderate", "severe"];
        let sized = ["small", "moderate", "large"];
        use LocationKind::*;
        Ontology {
            conditions: vec![
                c("atelectasis", "atelectasis", "atelectasis", Lobe, &graded, "well-aerated expanded lungs"),
                c("cardiomegaly", "cardiomegaly", "cardiomegaly", None, &graded, "normal heart size"),
                c("consolidation", "consolidation", "consolidation", Lobe, &[], "clear lung parenchyma"),
                c("edema", "pulmonary edema", "edema", None, &graded, "normal pulmonary vascularity"),
                c(
                    "enlarged_cardiomediastinum",
                    "enlarged cardiomediastinum",
                    "cardiomediastinal enlargement",
                    None,
                    &[],
                    "normal mediastinal contours",
                ),
                c("fracture", "fracture", "fracture", Side, &[], "intact bony structures"),
                c("lung_lesion", "lung lesion", "lesion", Lobe, &sized, "homogeneous lung parenchyma"),
                c("lung_opacity", "lung opacity", "opacity", Lobe, &[], "well-aerated lung fields"),
                c("pleural_effusion", "pleural effusion", "effusion", Side, &sized, "sharp costophrenic angles"),
                c("pleural_other", "pleural abnormality", "pleural thickening", Side, &[], "smooth pleural surfaces"),
                c("pneumonia", "pneumonia", "pneumonia", Lobe, &[], "aerated alveoli"),
                c("pneumothorax", "pneumothorax", "pneumothorax", Side, &sized, "fully expanded lungs"),
                c("support_devices", "support devices", "devices", None, &[], "device-free chest"),
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.conditions.is_empty() {
            return Err(Error::Data("ontology has no conditions".into()));
        }
        let mut ids = BTreeSet::new();
        for c in &self.conditions {
            if !ids.insert(&c.id) {
                return Err(Error::Data(format!("duplicate condition id {}", c.id)));
            }
            if c.name.trim().is_empty() || c.short_name.trim().is_empty() {
                return Err(Error::Data(format!("condition {} has an empty name", c.id)));
            }
            if c.affirmative.trim().is_empty() {
                return Err(Error::Data(format!("condition {} lacks an affirmative alternative", c.id)));
            }
            if (c.location_kind == LocationKind::None) != c.locations.is_empty() {
                return Err(Error::Data(format!("condition {} has inconsistent locations", c.id)));
            }
            let phrases = std::iter::once(&c.name)
                .chain([&c.short_name, &c.affirmative])
                .chain(&c.locations)
                .chain(&c.severities);
            for p in phrases {
                if contains_negation_cue(p) {
                    return Err(Error::Data(format!("phrase {p:?} of {} contains a negation cue", c.id)));
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Result<&Condition> {
        self.conditions
            .iter()
            .find(|c| c.id == id)
            .ok_or_else(|| Error::Data(format!("unknown condition {id:?}")))
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.conditions.iter().position(|c| c.id == id)
    }

    pub fn len(&self) -> usize {
        self.conditions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.conditions.is_empty()
    }

    /// Every word any template can emit for this ontology.
    pub fn lexicon(&self) -> BTreeSet<String> {
        let mut lex: BTreeSet<String> = super::captions::TEMPLATE_WORDS
            .iter()
            .chain(super::summary::TEMPLATE_WORDS)
            .map(|s| s.to_string())
            .collect();
        for c in &self.conditions {
            let phrases = [&c.name, &c.short_name, &c.affirmative]
                .into_iter()
                .chain(&c.locations)
                .chain(&c.severities);
            for p in phrases {
                lex.extend(words(p));
            }
        }
        lex
    }

    pub fn load(path: &Path) -> Result<Self> {
        let o: Ontology = util::read_json(path)?;
        o.validate()?;
        Ok(o)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        util::write_json(path, self)
    }
}
