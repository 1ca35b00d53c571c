//! Run configuration and the on-disk layout of a run directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::causal::DEFAULT_D_MIN;
use crate::data::{DataConfig, FeatureLayout, Ontology};
use crate::encoder::{ModelConfig, Vocab};
use crate::error::{Error, Result};
use crate::trainer::TrainConfig;
use crate::util;

/// Model shape; vocabulary size and image feature width come from the ontology.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSpec {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub max_seq_len: usize,
    pub embed_dim: usize,
    pub lora_rank: usize,
    pub lora_scale: f64,
    pub temperature_init: f64,
    pub seed: u64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            d_model: 32,
            n_heads: 4,
            n_layers: 6,
            max_seq_len: 32,
            embed_dim: 32,
            lora_rank: 4,
            lora_scale: 8.0,
            temperature_init: 10.0,
            seed: 0,
        }
    }
}

impl ModelSpec {
    pub fn model_config(&self, vocab: &Vocab, layout: &FeatureLayout) -> ModelConfig {
        ModelConfig {
            vocab_size: vocab.len(),
            d_model: self.d_model,
            n_heads: self.n_heads,
            n_layers: self.n_layers,
            max_seq_len: self.max_seq_len,
            image_feature_dim: layout.dim,
            embed_dim: self.embed_dim,
            lora_rank: self.lora_rank,
            lora_scale: self.lora_scale,
            temperature_init: self.temperature_init,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TraceConfig {
    pub d_min: f64,
    /// Probe pairs drawn from validation-split facts.
    pub n_probes: usize,
}

impl Default for TraceConfig {
    fn default() -> Self {
        TraceConfig {
            d_min: DEFAULT_D_MIN,
            n_probes: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Nast,
    Uniform,
}

impl Arm {
    pub fn name(self) -> &'static str {
        match self {
            Arm::Nast => "nast",
            Arm::Uniform => "uniform",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArmSelection {
    Nast,
    Uniform,
    Both,
}

impl ArmSelection {
    pub fn arms(self) -> Vec<Arm> {
        match self {
            ArmSelection::Nast => vec![Arm::Nast],
            ArmSelection::Uniform => vec![Arm::Uniform],
            ArmSelection::Both => vec![Arm::Nast, Arm::Uniform],
        }
    }
}

impl std::str::FromStr for ArmSelection {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nast" => Ok(ArmSelection::Nast),
            "uniform" => Ok(ArmSelection::Uniform),
            "both" => Ok(ArmSelection::Both),
            _ => Err(Error::Config(format!("unknown arm {s:?}; expected nast, uniform or both"))),
        }
    }
}

fn default_pretrain() -> TrainConfig {
    TrainConfig {
        learning_rate: 3e-3,
        lambda_mix: 1.0,
        beta: 0.0,
        steps: 600,
        ..TrainConfig::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Parent of the run directory; not part of the config hash.
    pub out_root: PathBuf,
    /// Load the ontology from this file instead of the built-in one.
    pub ontology: Option<PathBuf>,
    pub data: DataConfig,
    pub benchmark_seed: u64,
    pub model: ModelSpec,
    /// Base alignment of the backbone on summary captions.
    pub pretrain: TrainConfig,
    /// Adapter fine-tuning; `seed` is replaced per run by the seeds list.
    pub train: TrainConfig,
    pub trace: TraceConfig,
    pub arms: ArmSelection,
    pub seeds: Vec<u64>,
    pub top_k: Vec<usize>,
    /// Run seeds of one arm concurrently.
    pub parallel_seeds: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            out_root: PathBuf::from("runs"),
            ontology: None,
            data: DataConfig::default(),
            benchmark_seed: 0,
            model: ModelSpec::default(),
            pretrain: default_pretrain(),
            train: TrainConfig::default(),
            trace: TraceConfig::default(),
            arms: ArmSelection::Both,
            seeds: vec![0, 1, 2, 3, 4],
            top_k: vec![3, 5],
            parallel_seeds: false,
        }
    }
}

impl RunConfig {
    /// JSON if the file parses as JSON, otherwise flat `key = value` lines
    /// (dotted keys address nested sections, e.g. `train.beta = 2.0`).
    pub fn load(path: &Path) -> Result<Self> {
        let text = util::read_to_string(path)?;
        let cfg: RunConfig = if path.extension().is_some_and(|e| e == "json") || text.trim_start().starts_with('{') {
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must be nonempty".into()));
        }
        if self.top_k.iter().any(|&k| k == 0 || k > self.model.n_layers) {
            return Err(Error::Config(format!("top_k values must lie in 1..={}", self.model.n_layers)));
        }
        if !(self.trace.d_min > 0.0) || self.trace.n_probes == 0 {
            return Err(Error::Config("trace.d_min and trace.n_probes must be positive".into()));
        }
        self.pretrain.validate()?;
        self.train.validate()
    }

    pub fn ontology(&self) -> Result<Ontology> {
        match &self.ontology {
            Some(p) => {
                if !p.exists() {
                    return Err(Error::MissingArtifact {
                        path: p.clone(),
                        reason: "ontology file not found".into(),
                    });
                }
                Ontology::load(p)
            }
            None => Ok(Ontology::chexpert()),
        }
    }

    /// The config with `out_root` cleared, so the same experiment hashes and
    /// records identically wherever it is written.
    pub fn portable(&self) -> RunConfig {
        let mut c = self.clone();
        c.out_root = PathBuf::new();
        c
    }

    /// First 16 hex digits of the SHA-256 of the portable canonical JSON.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(&self.portable()).expect("config serializes");
        util::sha256_hex(json.as_bytes())[..16].to_string()
    }

    pub fn run_dir(&self) -> RunDir {
        RunDir(self.out_root.join(self.hash()))
    }
}

/// Paths inside one run directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunDir(pub PathBuf);

impl RunDir {
    pub fn root(&self) -> &Path {
        &self.0
    }
    pub fn data(&self) -> PathBuf {
        self.0.join("data")
    }
    pub fn benchmark(&self) -> PathBuf {
        self.0.join("benchmark")
    }
    pub fn mcq_file(&self) -> PathBuf {
        self.benchmark().join("mcq.jsonl")
    }
    pub fn base(&self) -> PathBuf {
        self.0.join("base")
    }
    pub fn base_checkpoint(&self) -> PathBuf {
        self.base().join("model.json")
    }
    pub fn trace(&self) -> PathBuf {
        self.0.join("trace")
    }
    pub fn alpha_file(&self) -> PathBuf {
        self.trace().join("alpha.json")
    }
    pub fn train(&self, arm: Arm, seed: u64) -> PathBuf {
        self.0.join("train").join(arm.name()).join(format!("seed_{seed}"))
    }
    pub fn eval(&self, arm: Arm, seed: u64) -> PathBuf {
        self.0.join("eval").join(arm.name()).join(format!("seed_{seed}"))
    }
    pub fn report(&self) -> PathBuf {
        self.0.join("report")
    }
}
