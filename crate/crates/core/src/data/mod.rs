//! Synthetic contextual-negation corpus.

pub mod captions;
pub mod claims;
pub mod corpus;
pub mod facts;
pub mod image;
pub mod ontology;
pub mod summary;

pub use captions::{realize_caption, validate_caption, Attribute, CaptionValidator, Failure, Validation};
pub use claims::{build_claim_set, ClaimSet};
pub use corpus::{gen_study, generate_corpus, split_patients, Corpus, DataConfig, Manifest, Split, StudyRecord};
pub use facts::{perturb, Certainty, Existence, NegationType, StructuredFact};
pub use image::{render_image, FeatureLayout, LinearProbe};
pub use ontology::{contains_negation_cue, Condition, LocationKind, Ontology, NEGATION_CUES};
