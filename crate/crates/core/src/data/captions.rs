//! Template realization of facts and the three-criterion caption validator.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::facts::StructuredFact;
use super::ontology::{contains_negation_cue, Condition, LocationKind, Ontology};
use crate::encoder::words;
use crate::error::Result;

pub(crate) const TEMPLATE_WORDS: &[&str] = &[
    "there", "is", "a", "in", "the", "no", "severe", "absent", "chest", "free", "of", "without", "lacking",
];

/// Surface forms for an absent finding; index 0 is the canonical one.
pub const ABSENT_FORMS: usize = 5;

fn absent_form(name: &str, form: usize) -> String {
    match form % ABSENT_FORMS {
        0 => format!("there is no {name}"),
        1 => format!("{name} is absent"),
        2 => format!("chest free of {name}"),
        3 => format!("chest without {name}"),
        _ => format!("chest lacking {name}"),
    }
}

fn present_caption(c: &Condition, fact: &StructuredFact) -> String {
    let name = &c.name;
    let loc = fact.location.as_deref();
    let sev = fact.severity.as_deref();
    match (c.location_kind, loc, sev) {
        (LocationKind::Lobe, Some(l), Some(s)) => format!("there is {s} {name} in the {l}"),
        (LocationKind::Lobe, Some(l), None) => format!("there is {name} in the {l}"),
        (LocationKind::Side, Some(l), Some(s)) => format!("there is a {s} {l} {name}"),
        (LocationKind::Side, Some(l), None) => format!("there is a {l} {name}"),
        (_, _, Some(s)) => format!("there is {s} {name}"),
        _ => format!("there is {name}"),
    }
}

/// Canonical sentence for a fact.
pub fn realize_caption(fact: &StructuredFact, ontology: &Ontology) -> Result<String> {
    realize_caption_form(fact, ontology, 0)
}

/// Sentence for a fact using absent-form `form` when the finding is absent.
pub fn realize_caption_form(fact: &StructuredFact, ontology: &Ontology, form: usize) -> Result<String> {
    fact.validate(ontology)?;
    let c = ontology.get(&fact.condition)?;
    Ok(if fact.existence.is_present() {
        present_caption(c, fact)
    } else {
        absent_form(&c.name, form)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribute {
    Existence,
    Location,
    Severity,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Failure {
    /// The condition is not named.
    Condition,
    /// These attributes are expressed incorrectly. An existence mismatch is reported alone.
    Attribute(Vec<Attribute>),
    /// A word outside the ontology lexicon.
    Vocabulary(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Validation {
    Pass,
    Fail(Failure),
}

impl Validation {
    pub fn passed(&self) -> bool {
        matches!(self, Validation::Pass)
    }
}

fn contains_phrase(ws: &[String], phrase: &str) -> bool {
    let p = words(phrase);
    !p.is_empty() && ws.windows(p.len()).any(|w| w == p.as_slice())
}

/// Validator with the ontology lexicon precomputed.
#[derive(Debug, Clone)]
pub struct CaptionValidator<'a> {
    ontology: &'a Ontology,
    lexicon: BTreeSet<String>,
}

impl<'a> CaptionValidator<'a> {
    pub fn new(ontology: &'a Ontology) -> Self {
        CaptionValidator {
            ontology,
            lexicon: ontology.lexicon(),
        }
    }

    /// Checks, in order: the condition is named, its attributes are expressed
    /// as the fact states, and every word belongs to the lexicon.
    pub fn validate(&self, caption: &str, fact: &StructuredFact) -> Validation {
        let Ok(c) = self.ontology.get(&fact.condition) else {
            return Validation::Fail(Failure::Condition);
        };
        let ws = words(caption);
        if !(contains_phrase(&ws, &c.name) || contains_phrase(&ws, &c.short_name)) {
            return Validation::Fail(Failure::Condition);
        }
        let negated = contains_negation_cue(caption);
        if negated == fact.existence.is_present() {
            return Validation::Fail(Failure::Attribute(vec![Attribute::Existence]));
        }
        let loc = c.locations.iter().find(|l| contains_phrase(&ws, l)).map(|s| s.as_str());
        let sev = c.severities.iter().find(|s| ws.contains(s)).map(|s| s.as_str());
        let mut wrong = Vec::new();
        if loc != fact.expressed_location() {
            wrong.push(Attribute::Location);
        }
        if sev != fact.expressed_severity() {
            wrong.push(Attribute::Severity);
        }
        if !wrong.is_empty() {
            return Validation::Fail(Failure::Attribute(wrong));
        }
        if let Some(w) = ws.iter().find(|w| !self.lexicon.contains(*w)) {
            return Validation::Fail(Failure::Vocabulary(w.clone()));
        }
        Validation::Pass
    }
}

pub fn validate_caption(caption: &str, fact: &StructuredFact, ontology: &Ontology) -> Validation {
    CaptionValidator::new(ontology).validate(caption, fact)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn o() -> Ontology {
        Ontology::chexpert()
    }

    #[test]
    fn appendix_style_examples() {
        let o = o();
        assert_eq!(realize_caption(&StructuredFact::absent("edema"), &o).unwrap(), "there is no pulmonary edema");
        assert_eq!(
            realize_caption(&StructuredFact::present("consolidation").at("right lower lobe"), &o).unwrap(),
            "there is consolidation in the right lower lobe"
        );
        assert_eq!(
            realize_caption(&StructuredFact::present("pneumothorax").at("left").with_severity("small"), &o).unwrap(),
            "there is a small left pneumothorax"
        );
    }

    #[test]
    fn template_outputs_pass() {
        let o = o();
        let v = CaptionValidator::new(&o);
        for c in &o.conditions {
            let mut facts = vec![StructuredFact::absent(&c.id), StructuredFact::present(&c.id)];
            for l in &c.locations {
                facts.push(StructuredFact::present(&c.id).at(l));
                for s in &c.severities {
                    facts.push(StructuredFact::present(&c.id).at(l).with_severity(s));
                }
            }
            for s in &c.severities {
                facts.push(StructuredFact::present(&c.id).with_severity(s));
            }
            for f in facts {
                for form in 0..ABSENT_FORMS {
                    let cap = realize_caption_form(&f, &o, form).unwrap();
                    assert_eq!(v.validate(&cap, &f), Validation::Pass, "{cap}");
                }
            }
        }
    }

    #[test]
    fn wrong_location_fails_attribute() {
        let o = o();
        let f = StructuredFact::present("consolidation").at("right lower lobe");
        assert_eq!(
            validate_caption("there is consolidation in the left lower lobe", &f, &o),
            Validation::Fail(Failure::Attribute(vec![Attribute::Location]))
        );
    }

    #[test]
    fn out_of_lexicon_word_fails_vocabulary() {
        let o = o();
        let f = StructuredFact::absent("edema");
        assert_eq!(
            validate_caption("there is no pulmonary edema bilaterally", &f, &o),
            Validation::Fail(Failure::Vocabulary("bilaterally".into()))
        );
    }

    #[test]
    fn missing_condition_and_polarity() {
        let o = o();
        let f = StructuredFact::absent("edema");
        assert_eq!(validate_caption("there is no pneumonia", &f, &o), Validation::Fail(Failure::Condition));
        assert_eq!(
            validate_caption("there is pulmonary edema", &f, &o),
            Validation::Fail(Failure::Attribute(vec![Attribute::Existence]))
        );
    }

    #[test]
    fn cues_only_in_absent_captions() {
        let o = o();
        for c in &o.conditions {
            let p = realize_caption(&StructuredFact::present(&c.id), &o).unwrap();
            assert!(!contains_negation_cue(&p), "{p}");
            for form in 0..ABSENT_FORMS {
                let a = realize_caption_form(&StructuredFact::absent(&c.id), &o, form).unwrap();
                assert!(contains_negation_cue(&a), "{a}");
            }
        }
    }
}
