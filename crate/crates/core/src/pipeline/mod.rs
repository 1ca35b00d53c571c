//! The experiment pipeline behind the `nast` subcommands. Every command reads
//! and writes artifacts under one run directory, so phases can run as separate
//! processes and every intermediate result is on disk.

mod config;
mod report;

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{Arm, ArmSelection, ModelSpec, RunConfig, RunDir, TraceConfig};
pub use report::{cmd_report, Report, ReportRow, PAPER_REFERENCE};

use crate::benchmark::{self, ClaimReport, GapReport, McqAccuracy, McqPair, ModelScorer, RetrievalReport, Variant};
use crate::causal::{self, AlphaFile, LayerWeights};
use crate::data::corpus::{read_split, write_corpus, ONTOLOGY_FILE};
use crate::data::{generate_corpus, FeatureLayout, Manifest, Ontology, Split, StudyRecord};
use crate::encoder::{DualEncoder, GradMode, Vocab, BOS, EOS};
use crate::error::{Error, Result};
use crate::trainer::{self, CaptionSource, StepMetrics, TrainConfig, TrainData, UpdateNormLog};
use crate::util;

/// Shared state for commands that run after `gen-data`.
pub struct Workspace {
    pub config: RunConfig,
    pub run: RunDir,
    pub ontology: Ontology,
    pub vocab: Vocab,
    pub layout: FeatureLayout,
}

fn require(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingArtifact {
            path: path.to_path_buf(),
            reason: format!("{what} not found; run the earlier phase first"),
        })
    }
}

impl Workspace {
    /// Open an existing run: the ontology comes from the generated corpus.
    pub fn open(config: &RunConfig) -> Result<Self> {
        let run = config.run_dir();
        let onto_path = run.data().join(ONTOLOGY_FILE);
        require(&onto_path, "corpus ontology")?;
        Ok(Self::with_ontology(config, Ontology::load(&onto_path)?))
    }

    fn with_ontology(config: &RunConfig, ontology: Ontology) -> Self {
        Workspace {
            config: config.clone(),
            run: config.run_dir(),
            vocab: Vocab::from_lexicon(&ontology.lexicon()),
            layout: FeatureLayout::new(&ontology),
            ontology,
        }
    }

    pub fn split(&self, split: Split) -> Result<Vec<StudyRecord>> {
        read_split(&self.run.data(), split)
    }

    pub fn fresh_model(&self) -> Result<DualEncoder> {
        DualEncoder::new(self.config.model.model_config(&self.vocab, &self.layout))
    }

    pub fn base_model(&self) -> Result<DualEncoder> {
        let p = self.run.base_checkpoint();
        require(&p, "base checkpoint")?;
        DualEncoder::load(&p)
    }

    pub fn benchmark(&self) -> Result<Vec<McqPair>> {
        let p = self.run.mcq_file();
        require(&p, "benchmark")?;
        util::read_jsonl(&p)
    }

    pub fn alpha(&self) -> Result<AlphaFile> {
        let p = self.run.alpha_file();
        require(&p, "alpha file")?;
        AlphaFile::load(&p)
    }

    pub fn checkpoint(&self, arm: Arm, seed: u64) -> Result<DualEncoder> {
        let p = self.run.train(arm, seed).join("model.json");
        require(&p, "fine-tuned checkpoint")?;
        DualEncoder::load(&p)
    }
}

fn write_config(config: &RunConfig) -> Result<()> {
    util::write_json(&config.run_dir().root().join("config.json"), &config.portable())
}

pub fn cmd_gen_data(config: &RunConfig) -> Result<Manifest> {
    let ontology = config.ontology()?;
    let ws = Workspace::with_ontology(config, ontology);
    write_config(config)?;
    let corpus = generate_corpus(&config.data, &ws.ontology)?;
    let manifest = write_corpus(&ws.run.data(), &corpus, &config.data, &ws.ontology)?;
    log::info!(
        "wrote {} studies from {} patients to {}",
        manifest.n_studies,
        manifest.n_patients,
        ws.run.data().display()
    );
    Ok(manifest)
}

/// MCQs from the test split, which no training phase reads.
pub fn cmd_gen_benchmark(config: &RunConfig) -> Result<benchmark::BenchmarkSummary> {
    let ws = Workspace::open(config)?;
    let test = ws.split(Split::Test)?;
    let (pairs, summary) = benchmark::build_benchmark(&test, &ws.ontology, config.benchmark_seed)?;
    if pairs.is_empty() {
        return Err(Error::EmptyInput("no eligible test studies for the benchmark".into()));
    }
    util::write_jsonl(&ws.run.mcq_file(), &pairs)?;
    util::write_json(&ws.run.benchmark().join("summary.json"), &summary)?;
    log::info!("{} MCQ pairs from {} eligible test studies", summary.n_pairs, summary.n_eligible);
    Ok(summary)
}

fn write_training_outputs(dir: &Path, model: &DualEncoder, curve: &[StepMetrics], log: &UpdateNormLog) -> Result<()> {
    model.save(&dir.join("model.json"))?;
    util::write_jsonl(&dir.join("metrics.jsonl"), curve)?;
    util::write_json(&dir.join("update_norms.json"), log)?;
    util::write_bytes(&dir.join("update_norms.csv"), log.to_csv().as_bytes())
}

/// Align the whole backbone on the mostly affirmative summary captions of the
/// training split. This stands in for a pretrained checkpoint.
pub fn cmd_pretrain(config: &RunConfig) -> Result<()> {
    let ws = Workspace::open(config)?;
    write_config(config)?;
    let train = ws.split(Split::Train)?;
    let data = TrainData::from_records(&train, &ws.vocab, config.model.max_seq_len, CaptionSource::Base)?;
    let mut model = ws.fresh_model()?;
    let weights = LayerWeights::uniform(model.n_layers());
    let out = trainer::train(&mut model, &data, &weights, &config.pretrain, GradMode::BaseAlignment, |m| {
        if m.step % 100 == 0 {
            log::info!("pretrain step {} loss {:.4}", m.step, m.loss_total);
        }
    })?;
    write_training_outputs(&ws.run.base(), &model, &out.curve, &out.log)
}

/// Human-readable column labels for the mean CTE heatmap.
fn heatmap_labels(probes: &[causal::ProbePair], vocab: &Vocab, len: usize) -> Vec<String> {
    let Some(p) = probes.iter().find(|p| p.len() == len) else {
        return (0..len).map(|i| i.to_string()).collect();
    };
    let words = vocab.decode(&p.correct_tokens);
    let neg = p.negator_positions.first().copied().unwrap_or(len);
    words
        .iter()
        .enumerate()
        .map(|(i, w)| {
            if p.negator_positions.contains(&i) {
                "no|severe".to_string()
            } else if i > neg && *w != EOS && *w != BOS {
                "finding".to_string()
            } else {
                w.to_string()
            }
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceSummary {
    pub model: String,
    pub num_probes: usize,
    pub num_valid: usize,
    pub patched_forwards: usize,
    pub ranking: Vec<usize>,
}

/// Trace the base model (or a fresh seeded init if none exists) on probe
/// pairs from validation facts.
pub fn cmd_trace(config: &RunConfig) -> Result<AlphaFile> {
    let ws = Workspace::open(config)?;
    let (model, source) = if ws.run.base_checkpoint().exists() {
        (ws.base_model()?, "base")
    } else {
        log::warn!("no base checkpoint; tracing a fresh seeded model");
        (ws.fresh_model()?, "fresh")
    };
    let val = ws.split(Split::Val)?;
    let facts = val
        .iter()
        .flat_map(|r| r.definitive_facts().map(move |f| (f, r.image_features.as_slice())))
        .take(config.trace.n_probes);
    let probes = causal::build_probe_set(facts, &ws.ontology, &ws.vocab, config.model.max_seq_len)?;
    let results = causal::trace_all(&model, &probes, config.trace.d_min)?;
    let summary = causal::aggregate_cte(&results)?;
    let weights = causal::normalize_weights(&summary.cte_layer)?;
    let alpha = AlphaFile::new(&summary, &weights);

    let dir = ws.run.trace();
    util::write_json(&ws.run.alpha_file(), &alpha)?;
    causal::write_cte_csv(&dir.join("cte.csv"), &results)?;
    if let Some(mean) = causal::mean_cte_matrix(&results) {
        let labels = heatmap_labels(&probes, &ws.vocab, mean[0].len());
        util::write_bytes(&dir.join("heatmap.svg"), causal::heatmap_svg(&mean, &labels).as_bytes())?;
    }
    let mut table = String::from("layer,cte,alpha,rank\n");
    let ranking = weights.ranking();
    for l in 1..=weights.layers() {
        let rank = ranking.iter().position(|&r| r == l).expect("every layer is ranked") + 1;
        table.push_str(&format!("{l},{},{},{rank}\n", weights.cte_layer[l - 1], weights.alpha[l - 1]));
    }
    util::write_bytes(&dir.join("layers.csv"), table.as_bytes())?;
    util::write_json(&dir.join("attention.json"), &causal::negator_attention_report(&model, &probes)?)?;
    util::write_json(
        &dir.join("summary.json"),
        &TraceSummary {
            model: source.into(),
            num_probes: probes.len(),
            num_valid: summary.num_pairs - summary.num_filtered,
            patched_forwards: results.iter().map(|r| r.patched_forwards).sum(),
            ranking,
        },
    )?;
    log::info!("alpha = {:?}", alpha.alpha);
    Ok(alpha)
}

fn arm_weights(ws: &Workspace, arm: Arm) -> Result<LayerWeights> {
    match arm {
        Arm::Nast => Ok(ws.alpha()?.weights()),
        Arm::Uniform => Ok(LayerWeights::uniform(ws.config.model.n_layers)),
    }
}

/// Fine-tune one arm for one seed from the base checkpoint.
pub fn train_one(ws: &Workspace, data: &TrainData, base: &DualEncoder, arm: Arm, seed: u64) -> Result<UpdateNormLog> {
    let weights = arm_weights(ws, arm)?;
    let mut model = base.clone();
    model.reset_adapters(seed);
    let cfg = TrainConfig {
        seed,
        ..ws.config.train.clone()
    };
    let out = trainer::train(&mut model, data, &weights, &cfg, GradMode::Finetune, |_| {}).inspect_err(|e| {
        log::error!("arm {} seed {seed} aborted: {e}", arm.name());
    })?;
    write_training_outputs(&ws.run.train(arm, seed), &model, &out.curve, &out.log)?;
    log::info!(
        "arm {} seed {seed}: final loss {:.4}",
        arm.name(),
        out.curve.last().map_or(f64::NAN, |m| m.loss_total)
    );
    Ok(out.log)
}

pub fn cmd_train(config: &RunConfig, arms: &[Arm], seeds: &[u64]) -> Result<()> {
    let ws = Workspace::open(config)?;
    let base = ws.base_model()?;
    let train = ws.split(Split::Train)?;
    let data = TrainData::from_records(&train, &ws.vocab, config.model.max_seq_len, CaptionSource::Single)?;
    for &arm in arms {
        arm_weights(&ws, arm)?;
        if config.parallel_seeds {
            seeds
                .par_iter()
                .map(|&s| train_one(&ws, &data, &base, arm, s).map(|_| ()))
                .collect::<Result<Vec<()>>>()?;
        } else {
            for &s in seeds {
                train_one(&ws, &data, &base, arm, s)?;
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub model: String,
    pub seed: Option<u64>,
    pub retrieval: RetrievalReport,
    pub claims: ClaimReport,
    pub mcq: Vec<McqAccuracy>,
    pub gap: GapReport,
    /// Top-k share (percent) of text-layer update magnitude, keyed by k.
    pub concentration: BTreeMap<usize, f64>,
}

pub fn evaluate_model(
    ws: &Workspace,
    model: &DualEncoder,
    test: &[StudyRecord],
    pairs: &[McqPair],
    name: &str,
    seed: Option<u64>,
) -> Result<EvalRecord> {
    let scorer = ModelScorer {
        model,
        vocab: &ws.vocab,
    };
    let retrieval = benchmark::retrieval_report(model, &ws.vocab, test)?;
    let claims = benchmark::claim_accuracy(&scorer, test)?;
    let aff = benchmark::evaluate_mcq(&scorer, pairs, Variant::Affirmative)?;
    let neg = benchmark::evaluate_mcq(&scorer, pairs, Variant::Negated)?;
    let gap = GapReport::new(seed.unwrap_or(ws.config.benchmark_seed), &aff, &neg);
    Ok(EvalRecord {
        model: name.into(),
        seed,
        retrieval,
        claims,
        mcq: vec![aff, neg],
        gap,
        concentration: BTreeMap::new(),
    })
}

/// Evaluate the base model and every requested fine-tuned checkpoint.
pub fn cmd_eval(config: &RunConfig, arms: &[Arm], seeds: &[u64]) -> Result<Vec<EvalRecord>> {
    let ws = Workspace::open(config)?;
    let test = ws.split(Split::Test)?;
    let pairs = ws.benchmark()?;
    let alpha = ws.alpha()?.weights();
    let mut out = Vec::new();

    let base = evaluate_model(&ws, &ws.base_model()?, &test, &pairs, "base", None)?;
    util::write_json(&ws.run.root().join("eval").join("base").join("eval.json"), &base)?;
    out.push(base);

    for &arm in arms {
        for &seed in seeds {
            let model = ws.checkpoint(arm, seed)?;
            let mut rec = evaluate_model(&ws, &model, &test, &pairs, arm.name(), Some(seed))?;
            let norms_path = ws.run.train(arm, seed).join("update_norms.json");
            require(&norms_path, "update-norm log")?;
            let norms: UpdateNormLog = util::read_json(&norms_path)?;
            for &k in &config.top_k {
                rec.concentration.insert(k, trainer::concentration_report(&norms, &alpha, k)?);
            }
            let dir = ws.run.eval(arm, seed);
            util::write_json(&dir.join("eval.json"), &rec)?;
            for m in &rec.mcq {
                let v = match m.variant {
                    Variant::Negated => "negated",
                    Variant::Affirmative => "affirmative",
                };
                util::write_json(&dir.join(format!("mcq_{v}.json")), m)?;
            }
            let mut csv = String::from("metric,value\n");
            csv.push_str(&format!("r_at_1,{}\nr_at_5,{}\n", rec.retrieval.r_at_1, rec.retrieval.r_at_5));
            csv.push_str(&format!("claim_accuracy,{}\n", rec.claims.accuracy));
            csv.push_str(&format!(
                "mcq_affirmative,{}\nmcq_negated,{}\ngap,{}\n",
                rec.gap.acc_affirmative, rec.gap.acc_negated, rec.gap.gap
            ));
            for (k, v) in &rec.concentration {
                csv.push_str(&format!("top_{k}_share,{v}\n"));
            }
            util::write_bytes(&dir.join("eval.csv"), csv.as_bytes())?;
            log::info!(
                "{} seed {seed}: R@1 {:.1} claim {:.1} gap {:.1} (neg {:.1})",
                arm.name(),
                rec.retrieval.r_at_1,
                rec.claims.accuracy,
                rec.gap.gap,
                rec.gap.acc_negated
            );
            out.push(rec);
        }
    }
    Ok(out)
}

/// Every phase in order.
pub fn run_all(config: &RunConfig, arms: &[Arm], seeds: &[u64]) -> Result<Report> {
    cmd_gen_data(config)?;
    cmd_gen_benchmark(config)?;
    cmd_pretrain(config)?;
    cmd_trace(config)?;
    cmd_train(config, arms, seeds)?;
    cmd_eval(config, arms, seeds)?;
    cmd_report(config, arms, seeds)
}
