//! Claim sets: one true caption and hard negatives that flip one attribute.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::captions::realize_caption;
use super::facts::{alternatives, applicable, NegationType, StructuredFact};
use super::ontology::Ontology;
use crate::error::{Error, Result};
use crate::util::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimSet {
    pub image_id: String,
    pub claims: Vec<String>,
    pub correct_index: usize,
    pub negation_types: Vec<NegationType>,
    /// The fact each claim realizes, aligned with `claims`.
    pub facts: Vec<StructuredFact>,
}

impl ClaimSet {
    pub fn k(&self) -> usize {
        self.claims.len()
    }
}

/// Build a claim set of size `k` around `true_fact`.
///
/// The first alternative of every applicable flip type is always included;
/// remaining slots are filled from the other alternatives in seeded order.
/// Returns the set and whether `k` had to be reduced for lack of distinct negatives.
pub fn build_claim_set(
    image_id: &str,
    true_fact: &StructuredFact,
    ontology: &Ontology,
    rng: &mut Rng,
    k: usize,
) -> Result<(ClaimSet, bool)> {
    if k < 2 {
        return Err(Error::Contract(format!("claim sets need K >= 2, got {k}")));
    }
    if !true_fact.is_definitive() {
        return Err(Error::Contract("claim sets are built from definitive facts only".into()));
    }
    let true_caption = realize_caption(true_fact, ontology)?;
    let mut chosen: Vec<(NegationType, StructuredFact, String)> = Vec::new();
    let mut pool = Vec::new();
    for ty in NegationType::FLIPS {
        if !applicable(true_fact, ty) {
            continue;
        }
        for (i, f) in alternatives(true_fact, ty, ontology)?.into_iter().enumerate() {
            let cap = realize_caption(&f, ontology)?;
            if i == 0 {
                chosen.push((ty, f, cap));
            } else {
                pool.push((ty, f, cap));
            }
        }
    }
    pool.shuffle(rng);
    chosen.extend(pool);
    let mut seen = vec![true_caption.clone()];
    chosen.retain(|(_, _, c)| {
        let fresh = !seen.contains(c);
        if fresh {
            seen.push(c.clone());
        }
        fresh
    });
    let reduced = chosen.len() < k - 1;
    if reduced {
        log::debug!("claim set for {image_id}: K reduced from {k} to {}", chosen.len() + 1);
    }
    chosen.truncate(k - 1);

    let mut entries = vec![(NegationType::True, true_fact.clone(), true_caption)];
    entries.extend(chosen);
    entries.shuffle(rng);
    let correct_index = entries
        .iter()
        .position(|(t, _, _)| *t == NegationType::True)
        .expect("true claim present");
    Ok((
        ClaimSet {
            image_id: image_id.to_string(),
            claims: entries.iter().map(|e| e.2.clone()).collect(),
            correct_index,
            negation_types: entries.iter().map(|e| e.0).collect(),
            facts: entries.into_iter().map(|e| e.1).collect(),
        },
        reduced,
    ))
}
