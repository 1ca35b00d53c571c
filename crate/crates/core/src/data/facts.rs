//! Structured facts and single-attribute counterfactuals.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::ontology::Ontology;
use crate::error::{Error, Result};
use crate::util::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Existence {
    Present,
    Absent,
}

impl Existence {
    pub fn flipped(self) -> Self {
        match self {
            Existence::Present => Existence::Absent,
            Existence::Absent => Existence::Present,
        }
    }

    pub fn is_present(self) -> bool {
        self == Existence::Present
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Certainty {
    Confident,
    Uncertain,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StructuredFact {
    pub condition: String,
    pub existence: Existence,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub severity: Option<String>,
    pub certainty: Certainty,
}

impl StructuredFact {
    pub fn new(condition: &str, existence: Existence) -> Self {
        StructuredFact {
            condition: condition.into(),
            existence,
            location: None,
            severity: None,
            certainty: Certainty::Confident,
        }
    }

    pub fn present(condition: &str) -> Self {
        Self::new(condition, Existence::Present)
    }

    pub fn absent(condition: &str) -> Self {
        Self::new(condition, Existence::Absent)
    }

    pub fn at(mut self, location: &str) -> Self {
        self.location = Some(location.into());
        self
    }

    pub fn with_severity(mut self, severity: &str) -> Self {
        self.severity = Some(severity.into());
        self
    }

    pub fn uncertain(mut self) -> Self {
        self.certainty = Certainty::Uncertain;
        self
    }

    pub fn is_definitive(&self) -> bool {
        self.certainty == Certainty::Confident
    }

    /// Location as it would be expressed in text; absent findings have none.
    pub fn expressed_location(&self) -> Option<&str> {
        self.existence.is_present().then_some(()).and(self.location.as_deref())
    }

    pub fn expressed_severity(&self) -> Option<&str> {
        self.existence.is_present().then_some(()).and(self.severity.as_deref())
    }

    pub fn validate(&self, ontology: &Ontology) -> Result<()> {
        let c = ontology.get(&self.condition)?;
        if let Some(l) = &self.location {
            if !c.locations.contains(l) {
                return Err(Error::Data(format!("{l:?} is not a location of {}", c.id)));
            }
        }
        if let Some(s) = &self.severity {
            if c.severity_rank(s).is_none() {
                return Err(Error::Data(format!("{s:?} is not a severity of {}", c.id)));
            }
        }
        Ok(())
    }
}

/// Number of fields in which two facts differ.
pub fn field_diff(a: &StructuredFact, b: &StructuredFact) -> usize {
    [
        a.condition != b.condition,
        a.existence != b.existence,
        a.location != b.location,
        a.severity != b.severity,
        a.certainty != b.certainty,
    ]
    .iter()
    .filter(|&&d| d)
    .count()
}

/// Claim tag: the true claim or the attribute a hard negative flips.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NegationType {
    True,
    ExistenceFlip,
    LocationFlip,
    SeverityFlip,
}

impl NegationType {
    pub const FLIPS: [NegationType; 3] = [
        NegationType::ExistenceFlip,
        NegationType::LocationFlip,
        NegationType::SeverityFlip,
    ];
}

/// Whether `ty` can perturb `fact`. Location and severity flips need a present
/// finding that carries the attribute, since absent findings do not express it.
pub fn applicable(fact: &StructuredFact, ty: NegationType) -> bool {
    match ty {
        NegationType::True => false,
        NegationType::ExistenceFlip => true,
        NegationType::LocationFlip => fact.expressed_location().is_some(),
        NegationType::SeverityFlip => fact.expressed_severity().is_some(),
    }
}

/// Every single-attribute counterfactual of type `ty`, canonical choice first.
///
/// Location: the left/right mirror, then the remaining values in ontology order.
/// Severity: values ordered by decreasing rank distance; equal distances keep ontology order.
pub fn alternatives(fact: &StructuredFact, ty: NegationType, ontology: &Ontology) -> Result<Vec<StructuredFact>> {
    if !applicable(fact, ty) {
        return Err(Error::Contract(format!("{ty:?} does not apply to {fact:?}")));
    }
    let c = ontology.get(&fact.condition)?;
    let with = |f: &dyn Fn(&mut StructuredFact)| {
        let mut g = fact.clone();
        f(&mut g);
        g
    };
    Ok(match ty {
        NegationType::ExistenceFlip => vec![with(&|g| g.existence = g.existence.flipped())],
        NegationType::LocationFlip => {
            let loc = fact.location.as_deref().expect("checked");
            let mirror = c.mirror_location(loc);
            let mut locs: Vec<&String> = mirror.iter().collect();
            locs.extend(c.locations.iter().filter(|l| *l != loc && Some(*l) != mirror.as_ref()));
            locs.into_iter().map(|l| with(&|g| g.location = Some(l.clone()))).collect()
        }
        NegationType::SeverityFlip => {
            let sev = fact.severity.as_deref().expect("checked");
            let rank = c
                .severity_rank(sev)
                .ok_or_else(|| Error::Data(format!("{sev:?} is not a severity of {}", c.id)))?;
            let mut others: Vec<(usize, &String)> = c
                .severities
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != rank)
                .map(|(i, s)| (i.abs_diff(rank), s))
                .collect();
            others.sort_by(|a, b| b.0.cmp(&a.0));
            others.into_iter().map(|(_, s)| with(&|g| g.severity = Some(s.clone()))).collect()
        }
        NegationType::True => unreachable!(),
    })
}

/// One counterfactual differing from `fact` in exactly the targeted attribute.
///
/// Location flips take the mirror side when one exists. Severity flips take the
/// farthest rank, breaking ties with `rng`.
pub fn perturb(fact: &StructuredFact, ty: NegationType, ontology: &Ontology, rng: &mut Rng) -> Result<StructuredFact> {
    let alts = alternatives(fact, ty, ontology)?;
    match ty {
        NegationType::LocationFlip => {
            let c = ontology.get(&fact.condition)?;
            let has_mirror = c.mirror_location(fact.location.as_deref().expect("checked")).is_some();
            if has_mirror {
                Ok(alts[0].clone())
            } else {
                Ok(alts.choose(rng).expect("nonempty").clone())
            }
        }
        NegationType::SeverityFlip => {
            let c = ontology.get(&fact.condition)?;
            let rank_of = |f: &StructuredFact| c.severity_rank(f.severity.as_deref().unwrap_or_default()).unwrap_or(0);
            let base = rank_of(fact);
            let best = alts.iter().map(|f| rank_of(f).abs_diff(base)).max().expect("nonempty");
            let tied: Vec<&StructuredFact> = alts.iter().filter(|f| rank_of(f).abs_diff(base) == best).collect();
            Ok(tied[rng.gen_range(0..tied.len())].clone())
        }
        _ => Ok(alts[0].clone()),
    }
}
