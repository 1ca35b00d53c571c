//! Flat, named parameter storage shared by the model, its gradients and the
//! optimizer.

use std::collections::{BTreeMap, HashMap};

use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which part of the model a tensor belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamGroup {
    /// Frozen during fine-tuning; only base alignment touches it.
    Backbone,
    /// Query/value adapter of text block `layer` (1-based).
    TextLora { layer: usize },
    /// Bottleneck adapter of the image encoder.
    ImageLora,
    /// Projection heads and the log-temperature.
    Head,
}

/// Which groups receive gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradMode {
    /// Adapters and heads; the backbone is frozen.
    Finetune,
    /// Backbone and heads; adapters stay at their zero-output init.
    BaseAlignment,
}

impl GradMode {
    pub fn trains(self, group: ParamGroup) -> bool {
        match (self, group) {
            (_, ParamGroup::Head) => true,
            (GradMode::Finetune, ParamGroup::TextLora { .. } | ParamGroup::ImageLora) => true,
            (GradMode::BaseAlignment, ParamGroup::Backbone) => true,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub group: ParamGroup,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Tensors stored row-major as flat `f64` buffers, addressed by index or name.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    specs: Vec<ParamSpec>,
    values: Vec<Vec<f64>>,
    index: HashMap<String, usize>,
}

impl Params {
    pub fn new() -> Self {
        Params {
            specs: Vec::new(),
            values: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub(crate) fn push(&mut self, name: String, shape: Vec<usize>, group: ParamGroup, data: Vec<f64>) -> usize {
        let spec = ParamSpec { name, shape, group };
        assert_eq!(spec.numel(), data.len(), "tensor {} has wrong length", spec.name);
        assert!(!self.index.contains_key(&spec.name), "duplicate tensor {}", spec.name);
        let id = self.specs.len();
        self.index.insert(spec.name.clone(), id);
        self.specs.push(spec);
        self.values.push(data);
        id
    }

    /// Zero-filled tensors with identical layout.
    pub fn zeros_like(&self) -> Self {
        Params {
            specs: self.specs.clone(),
            values: self.values.iter().map(|v| vec![0.0; v.len()]).collect(),
            index: self.index.clone(),
        }
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.id(name).map(|i| self.values[i].as_slice())
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        match self.id(name) {
            Some(i) => Some(self.values[i].as_mut_slice()),
            None => None,
        }
    }

    pub fn data(&self, id: usize) -> &[f64] {
        &self.values[id]
    }

    pub fn data_mut(&mut self, id: usize) -> &mut [f64] {
        &mut self.values[id]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ParamSpec, &[f64])> {
        self.specs.iter().zip(self.values.iter().map(|v| v.as_slice()))
    }

    pub fn mat(&self, id: usize) -> ArrayView2<'_, f64> {
        let s = &self.specs[id].shape;
        ArrayView2::from_shape((s[0], s[1]), &self.values[id]).expect("matrix shape")
    }

    pub fn mat_mut(&mut self, id: usize) -> ArrayViewMut2<'_, f64> {
        let s = &self.specs[id].shape;
        ArrayViewMut2::from_shape((s[0], s[1]), &mut self.values[id]).expect("matrix shape")
    }

    pub fn vec(&self, id: usize) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.values[id][..])
    }

    pub fn vec_mut(&mut self, id: usize) -> ArrayViewMut1<'_, f64> {
        ArrayViewMut1::from(&mut self.values[id][..])
    }

    /// `self += other`, element-wise. Layouts must match.
    pub fn add_assign(&mut self, other: &Params) {
        debug_assert_eq!(self.specs.len(), other.specs.len());
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    /// Bit-exact digest over every tensor in `group`-filtered order.
    pub fn digest(&self, filter: impl Fn(ParamGroup) -> bool) -> String {
        crate::util::hash_f64(
            self.specs
                .iter()
                .zip(&self.values)
                .filter(|(s, _)| filter(s.group))
                .map(|(_, v)| v.as_slice()),
        )
    }

    /// Keep only the groups trained under `mode`, keyed by name.
    pub fn into_gradient_map(self, mode: GradMode) -> GradientMap {
        let entries = self
            .specs
            .into_iter()
            .zip(self.values)
            .filter(|(s, _)| mode.trains(s.group))
            .map(|(s, v)| (s.name, v))
            .collect();
        GradientMap { entries }
    }

    /// Replace every tensor's data from a name-keyed map; names and lengths must match exactly.
    pub(crate) fn load_from(&mut self, mut tensors: BTreeMap<String, Vec<f64>>) -> Result<()> {
        for (spec, values) in self.specs.iter().zip(self.values.iter_mut()) {
            let data = tensors
                .remove(&spec.name)
                .ok_or_else(|| Error::Data(format!("checkpoint lacks tensor {}", spec.name)))?;
            if data.len() != values.len() {
                return Err(Error::Shape(format!(
                    "tensor {}: expected {} values, found {}",
                    spec.name,
                    values.len(),
                    data.len()
                )));
            }
            *values = data;
        }
        if let Some(extra) = tensors.keys().next() {
            return Err(Error::Data(format!("checkpoint has unexpected tensor {extra}")));
        }
        Ok(())
    }
}

impl Default for Params {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of the trainable tensors only, keyed by parameter name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradientMap {
    pub entries: BTreeMap<String, Vec<f64>>,
}

impl GradientMap {
    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.entries.get(name).map(|v| v.as_slice())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `a·self + b·other`, over the union of names (missing entries count as zero).
    pub fn combine(&self, a: f64, other: &GradientMap, b: f64) -> GradientMap {
        let mut out = BTreeMap::new();
        for (k, v) in &self.entries {
            out.insert(k.clone(), v.iter().map(|x| a * x).collect::<Vec<_>>());
        }
        for (k, v) in &other.entries {
            let e = out.entry(k.clone()).or_insert_with(|| vec![0.0; v.len()]);
            for (x, y) in e.iter_mut().zip(v) {
                *x += b * y;
            }
        }
        GradientMap { entries: out }
    }

    pub fn check_finite(&self) -> Result<()> {
        for (k, v) in &self.entries {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of {k}")));
            }
        }
        Ok(())
    }
}
