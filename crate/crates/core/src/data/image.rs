//! Procedural image features: one disjoint block of channels per condition.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::facts::StructuredFact;
use super::ontology::Ontology;
use crate::error::{Error, Result};
use crate::util::Rng;

/// Channel offsets of one condition's block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionBlock {
    pub condition: String,
    pub presence: usize,
    /// One channel per location value, in ontology order.
    pub locations: Vec<usize>,
    pub severity: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub blocks: Vec<ConditionBlock>,
    pub dim: usize,
}

impl FeatureLayout {
    pub fn new(ontology: &Ontology) -> Self {
        let mut next = 0;
        let mut blocks = Vec::with_capacity(ontology.len());
        for c in &ontology.conditions {
            let presence = next;
            next += 1;
            let locations = (next..next + c.locations.len()).collect();
            next += c.locations.len();
            let severity = c.has_severities().then(|| {
                next += 1;
                next - 1
            });
            blocks.push(ConditionBlock {
                condition: c.id.clone(),
                presence,
                locations,
                severity,
            });
        }
        FeatureLayout { blocks, dim: next }
    }

    pub fn block(&self, condition: &str) -> Option<&ConditionBlock> {
        self.blocks.iter().find(|b| b.condition == condition)
    }
}

/// Feature vector for a study. A present finding sets its presence channel to
/// `0.5 + 0.5·(rank+1)/n` when graded (1 otherwise), its severity channel to
/// `(rank+1)/n`, and its location channel to 1. Absent and unmentioned
/// findings leave their block at zero. Gaussian noise `σ` is added to every channel.
pub fn render_image(
    facts: &[StructuredFact],
    ontology: &Ontology,
    layout: &FeatureLayout,
    rng: &mut Rng,
    noise_sigma: f64,
) -> Result<Vec<f64>> {
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::Config(format!("noise sigma {noise_sigma} must be finite and >= 0")));
    }
    let mut x = vec![0.0; layout.dim];
    for f in facts.iter().filter(|f| f.existence.is_present()) {
        let c = ontology.get(&f.condition)?;
        let b = layout
            .block(&f.condition)
            .ok_or_else(|| Error::Data(format!("no feature block for {}", f.condition)))?;
        let grade = match f.severity.as_deref() {
            Some(s) => {
                let rank = c
                    .severity_rank(s)
                    .ok_or_else(|| Error::Data(format!("{s:?} is not a severity of {}", c.id)))?;
                Some((rank + 1) as f64 / c.severities.len() as f64)
            }
            None => None,
        };
        x[b.presence] = grade.map_or(1.0, |g| 0.5 + 0.5 * g);
        if let (Some(ch), Some(g)) = (b.severity, grade) {
            x[ch] = g;
        }
        if let Some(l) = &f.location {
            let i = c
                .locations
                .iter()
                .position(|v| v == l)
                .ok_or_else(|| Error::Data(format!("{l:?} is not a location of {}", c.id)))?;
            x[b.locations[i]] = 1.0;
        }
    }
    if noise_sigma > 0.0 {
        let n = Normal::new(0.0, noise_sigma).expect("valid sigma");
        for v in &mut x {
            *v += n.sample(rng);
        }
    }
    Ok(x)
}

/// Ordinary least-squares linear probe with intercept, targets ±1.
#[derive(Debug, Clone)]
pub struct LinearProbe {
    pub weights: DVector<f64>,
}

impl LinearProbe {
    pub fn fit(features: &[&[f64]], labels: &[bool]) -> Result<Self> {
        if features.is_empty() || features.len() != labels.len() {
            return Err(Error::EmptyInput("probe needs one label per feature vector".into()));
        }
        let d = features[0].len();
        let x = DMatrix::from_fn(features.len(), d + 1, |i, j| if j == d { 1.0 } else { features[i][j] });
        let y = DVector::from_iterator(labels.len(), labels.iter().map(|&b| if b { 1.0 } else { -1.0 }));
        let weights = x
            .svd(true, true)
            .solve(&y, 1e-10)
            .map_err(|e| Error::Data(format!("least squares failed: {e}")))?;
        Ok(LinearProbe { weights })
    }

    pub fn predict(&self, features: &[f64]) -> bool {
        let d = features.len();
        let s: f64 = features.iter().zip(self.weights.iter()).map(|(a, b)| a * b).sum::<f64>() + self.weights[d];
        s > 0.0
    }

    pub fn accuracy(&self, features: &[&[f64]], labels: &[bool]) -> f64 {
        let hits = features
            .iter()
            .zip(labels)
            .filter(|(f, &l)| self.predict(f) == l)
            .count();
        hits as f64 / labels.len().max(1) as f64
    }
}
