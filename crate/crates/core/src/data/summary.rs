//! Multi-condition report summaries with phrase spans, and their
//! affirmative rewrites.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::ontology::Ontology;
use crate::error::{Error, Result};
use crate::util::Rng;

pub(crate) const TEMPLATE_WORDS: &[&str] = &[
    "present", "noted", "evidence", "of", "showing", "with", "no", "absent", "free", "lacking", "without", "and",
];

pub const STEM: &str =
    "which of the following radiology report summaries best describes the findings on this chest radiograph?";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhraseKind {
    Presence,
    Negation,
    Affirmative,
}

/// Byte range of one condition's phrase inside an option.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub condition: String,
    pub kind: PhraseKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RealizedOption {
    pub text: String,
    pub spans: Vec<Span>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PresenceForm {
    Present,
    Noted,
    EvidenceOf,
    Showing,
    With,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum NegationForm {
    No,
    Absent,
    FreeOf,
    Lacking,
    Without,
}

const PRESENCE: [PresenceForm; 5] = [
    PresenceForm::Present,
    PresenceForm::Noted,
    PresenceForm::EvidenceOf,
    PresenceForm::Showing,
    PresenceForm::With,
];
const NEGATION: [NegationForm; 5] = [
    NegationForm::No,
    NegationForm::Absent,
    NegationForm::FreeOf,
    NegationForm::Lacking,
    NegationForm::Without,
];

fn presence_phrase(name: &str, f: PresenceForm) -> String {
    match f {
        PresenceForm::Present => format!("{name} present"),
        PresenceForm::Noted => format!("{name} noted"),
        PresenceForm::EvidenceOf => format!("evidence of {name}"),
        PresenceForm::Showing => format!("showing {name}"),
        PresenceForm::With => format!("with {name}"),
    }
}

fn negation_phrase(name: &str, f: NegationForm) -> String {
    match f {
        NegationForm::No => format!("no {name}"),
        NegationForm::Absent => format!("{name} absent"),
        NegationForm::FreeOf => format!("free of {name}"),
        NegationForm::Lacking => format!("lacking {name}"),
        NegationForm::Without => format!("without {name}"),
    }
}

enum Segment {
    Text(String),
    Phrase { condition: String, kind: PhraseKind, text: String },
}

fn assemble(segments: Vec<Segment>) -> RealizedOption {
    let mut text = String::new();
    let mut spans = Vec::new();
    for s in segments {
        match s {
            Segment::Text(t) => text.push_str(&t),
            Segment::Phrase { condition, kind, text: t } => {
                let start = text.len();
                text.push_str(&t);
                spans.push(Span {
                    start,
                    end: text.len(),
                    condition,
                    kind,
                });
            }
        }
    }
    RealizedOption { text, spans }
}

/// "a, b and c"
fn join(phrases: Vec<Segment>) -> Vec<Segment> {
    let n = phrases.len();
    let mut out = Vec::with_capacity(2 * n);
    for (i, p) in phrases.into_iter().enumerate() {
        if i > 0 {
            out.push(Segment::Text(if i + 1 == n { " and ".into() } else { ", ".into() }));
        }
        out.push(p);
    }
    out
}

/// Sentence stating presence or absence of each `(condition id, present)` item,
/// with a seeded choice of phrase forms and connective pattern:
///
/// * `"P, with A"`: present findings, then absent ones as "no X" / "X absent";
/// * `"A, with P"`: absent findings first;
/// * a plain list of all phrases in the given order.
pub fn realize_negated(items: &[(String, bool)], ontology: &Ontology, rng: &mut Rng) -> Result<RealizedOption> {
    if items.is_empty() {
        return Err(Error::Contract("a summary needs at least one condition".into()));
    }
    let mut names = Vec::with_capacity(items.len());
    for (id, _) in items {
        names.push(ontology.get(id)?.name.clone());
    }
    let has_present = items.iter().any(|(_, p)| *p);
    let has_absent = items.iter().any(|(_, p)| !*p);
    let pattern = if has_present && has_absent { rng.gen_range(0..3) } else { 2 };

    let phrase = |i: usize, rng: &mut Rng, presence: &[PresenceForm], negation: &[NegationForm]| {
        let (id, present) = &items[i];
        if *present {
            Segment::Phrase {
                condition: id.clone(),
                kind: PhraseKind::Presence,
                text: presence_phrase(&names[i], *presence.choose(rng).expect("nonempty pool")),
            }
        } else {
            Segment::Phrase {
                condition: id.clone(),
                kind: PhraseKind::Negation,
                text: negation_phrase(&names[i], *negation.choose(rng).expect("nonempty pool")),
            }
        }
    };
    let no_with = &PRESENCE[..4];
    let after_with = &PRESENCE[..3];
    let short_neg = &NEGATION[..2];
    let present: Vec<usize> = (0..items.len()).filter(|&i| items[i].1).collect();
    let absent: Vec<usize> = (0..items.len()).filter(|&i| !items[i].1).collect();
    let segments = match pattern {
        0 => {
            let mut s = join(present.iter().map(|&i| phrase(i, rng, no_with, short_neg)).collect());
            s.push(Segment::Text(", with ".into()));
            s.extend(join(absent.iter().map(|&i| phrase(i, rng, no_with, short_neg)).collect()));
            s
        }
        1 => {
            let mut s = join(absent.iter().map(|&i| phrase(i, rng, no_with, &NEGATION)).collect());
            s.push(Segment::Text(", with ".into()));
            s.extend(join(present.iter().map(|&i| phrase(i, rng, after_with, &NEGATION)).collect()));
            s
        }
        _ => join((0..items.len()).map(|i| phrase(i, rng, &PRESENCE, &NEGATION)).collect()),
    };
    Ok(assemble(segments))
}

/// Affirmative replacement for one negation phrase. "without X" keeps its
/// preposition as "with"; every other form is replaced whole.
fn affirmative_for(phrase: &str, name: &str, alternative: &str) -> Result<String> {
    if phrase == format!("without {name}") {
        Ok(format!("with {alternative}"))
    } else if NEGATION
        .iter()
        .filter(|f| **f != NegationForm::Without)
        .any(|f| negation_phrase(name, *f) == phrase)
    {
        Ok(alternative.to_string())
    } else {
        Err(Error::Construction(format!("unrecognized negation phrase {phrase:?}")))
    }
}

/// Rewrite the negation spans selected by `select` (by span index) with
/// affirmative alternatives; everything else is copied byte for byte.
pub fn rewrite_spans(
    option: &RealizedOption,
    ontology: &Ontology,
    select: impl Fn(usize) -> bool,
) -> Result<RealizedOption> {
    let mut segments = Vec::with_capacity(2 * option.spans.len() + 1);
    let mut cursor = 0;
    for (i, s) in option.spans.iter().enumerate() {
        if s.start < cursor || s.end > option.text.len() || s.start > s.end {
            return Err(Error::Construction("spans are not ordered and in bounds".into()));
        }
        segments.push(Segment::Text(option.text[cursor..s.start].to_string()));
        let phrase = &option.text[s.start..s.end];
        if s.kind == PhraseKind::Negation && select(i) {
            let c = ontology.get(&s.condition)?;
            segments.push(Segment::Phrase {
                condition: s.condition.clone(),
                kind: PhraseKind::Affirmative,
                text: affirmative_for(phrase, &c.name, &c.affirmative)?,
            });
        } else {
            segments.push(Segment::Phrase {
                condition: s.condition.clone(),
                kind: s.kind,
                text: phrase.to_string(),
            });
        }
        cursor = s.end;
    }
    segments.push(Segment::Text(option.text[cursor..].to_string()));
    Ok(assemble(segments))
}

/// Replace every negation phrase with its affirmative alternative, then
/// confirm the two texts differ only inside negation spans.
pub fn rewrite_affirmative(option: &RealizedOption, ontology: &Ontology) -> Result<RealizedOption> {
    let out = rewrite_spans(option, ontology, |_| true)?;
    check_polarity_diff(option, &out)?;
    Ok(out)
}

fn gaps(o: &RealizedOption) -> Result<Vec<&str>> {
    let mut out = Vec::with_capacity(o.spans.len() + 1);
    let mut cursor = 0;
    for s in &o.spans {
        let gap = o
            .text
            .get(cursor..s.start)
            .ok_or_else(|| Error::Construction("span outside text".into()))?;
        out.push(gap);
        cursor = s.end;
    }
    out.push(o.text.get(cursor..).unwrap_or(""));
    Ok(out)
}

/// Span-restricted diff: same span sequence, identical text between spans,
/// identical presence phrases, and changes only where a negation span became
/// affirmative.
pub fn check_polarity_diff(negated: &RealizedOption, affirmative: &RealizedOption) -> Result<()> {
    let fail = |m: String| Err(Error::Construction(format!("polarity diff: {m}")));
    if negated.spans.len() != affirmative.spans.len() {
        return fail("span counts differ".into());
    }
    if gaps(negated)? != gaps(affirmative)? {
        return fail(format!("{:?} and {:?} differ outside spans", negated.text, affirmative.text));
    }
    for (a, b) in negated.spans.iter().zip(&affirmative.spans) {
        if a.condition != b.condition {
            return fail("span conditions differ".into());
        }
        let ta = &negated.text[a.start..a.end];
        let tb = &affirmative.text[b.start..b.end];
        match (a.kind, b.kind) {
            (PhraseKind::Presence, PhraseKind::Presence) if ta == tb => {}
            (PhraseKind::Negation, PhraseKind::Affirmative) => {
                if super::ontology::contains_negation_cue(tb) {
                    return fail(format!("{tb:?} still carries a negation cue"));
                }
            }
            _ => return fail(format!("span {ta:?} -> {tb:?} is not a polarity rewrite")),
        }
    }
    Ok(())
}
