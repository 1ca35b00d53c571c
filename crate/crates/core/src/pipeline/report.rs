//! Consolidated arm comparison: per-seed rows, per-arm means and the
//! ordering checks, as JSON, CSV and markdown.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{Arm, EvalRecord, RunConfig, Workspace};
use crate::error::Result;
use crate::util;

/// Published full-scale numbers, shown next to desk results for orientation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaperReference {
    pub label: String,
    pub gap_clip: f64,
    pub gap_nast: f64,
    pub top3_uniform: f64,
    pub top3_nast: f64,
    pub top5_uniform: f64,
    pub top5_nast: f64,
}

pub const PAPER_REFERENCE: (f64, f64, f64, f64, f64, f64) = (21.6, 4.2, 28.4, 52.6, 41.7, 69.3);

fn reference() -> PaperReference {
    let (gap_clip, gap_nast, top3_uniform, top3_nast, top5_uniform, top5_nast) = PAPER_REFERENCE;
    PaperReference {
        label: "published full-scale values; not a target".into(),
        gap_clip,
        gap_nast,
        top3_uniform,
        top3_nast,
        top5_uniform,
        top5_nast,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub arm: String,
    /// `None` for the mean row.
    pub seed: Option<u64>,
    /// Seeds contributing (1 for a seed row, 0 if absent).
    pub n: usize,
    /// Aligned with `Report::columns`; `None` marks a missing result.
    pub values: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    /// Per seed: NAST top-3 share strictly above uniform's.
    pub concentration_per_seed: Vec<(u64, Option<bool>)>,
    /// Mean gap under NAST strictly below uniform's.
    pub gap_smaller: Option<bool>,
    /// Mean negated accuracy under NAST at least uniform's.
    pub negated_not_lower: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config_hash: String,
    pub columns: Vec<String>,
    pub base: Option<Vec<Option<f64>>>,
    pub rows: Vec<ReportRow>,
    pub means: Vec<ReportRow>,
    pub comparison: Comparison,
    pub reference: PaperReference,
}

fn columns(top_k: &[usize]) -> Vec<String> {
    let mut c: Vec<String> = ["r_at_1", "r_at_5", "claim_accuracy", "mcq_affirmative", "mcq_negated", "gap"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    c.extend(top_k.iter().map(|k| format!("top_{k}_share")));
    c
}

fn values(rec: &EvalRecord, top_k: &[usize]) -> Vec<Option<f64>> {
    let mut v = vec![
        Some(rec.retrieval.r_at_1),
        Some(rec.retrieval.r_at_5),
        Some(rec.claims.accuracy),
        Some(rec.gap.acc_affirmative),
        Some(rec.gap.acc_negated),
        Some(rec.gap.gap),
    ];
    v.extend(top_k.iter().map(|k| rec.concentration.get(k).copied()));
    v
}

/// Column means over the rows that have a value.
pub fn mean_row(arm: &str, rows: &[&ReportRow], width: usize) -> ReportRow {
    let present: Vec<&&ReportRow> = rows.iter().filter(|r| r.n > 0).collect();
    let values = (0..width)
        .map(|c| {
            let xs: Vec<f64> = present.iter().filter_map(|r| r.values[c]).collect();
            (!xs.is_empty()).then(|| util::mean(&xs))
        })
        .collect();
    ReportRow {
        arm: arm.into(),
        seed: None,
        n: present.len(),
        values,
    }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "absent".into(), |x| format!("{x:.2}"))
}

impl Report {
    fn col(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("arm,seed,{}\n", self.columns.join(","));
        for r in self.rows.iter().chain(&self.means) {
            let seed = r.seed.map_or_else(|| "mean".into(), |s| s.to_string());
            let vals: Vec<String> = r.values.iter().map(|v| v.map_or_else(|| "absent".into(), |x| x.to_string())).collect();
            writeln!(s, "{},{seed},{}", r.arm, vals.join(",")).unwrap();
        }
        s
    }

    pub fn to_markdown(&self) -> String {
        let mut s = format!("# Run {}\n\n## Per seed and mean\n\n", self.config_hash);
        writeln!(s, "| arm | seed | {} |", self.columns.join(" | ")).unwrap();
        writeln!(s, "|{}", "---|".repeat(self.columns.len() + 2)).unwrap();
        if let Some(b) = &self.base {
            let vals: Vec<String> = b.iter().map(|v| cell(*v)).collect();
            writeln!(s, "| base | - | {} |", vals.join(" | ")).unwrap();
        }
        for r in self.rows.iter().chain(&self.means) {
            let seed = r.seed.map_or_else(|| format!("mean (n={})", r.n), |s| s.to_string());
            let vals: Vec<String> = r.values.iter().map(|v| cell(*v)).collect();
            writeln!(s, "| {} | {seed} | {} |", r.arm, vals.join(" | ")).unwrap();
        }
        let yn = |b: Option<bool>| b.map_or("absent", |b| if b { "yes" } else { "no" });
        s.push_str("\n## Orderings\n\n");
        for (seed, ok) in &self.comparison.concentration_per_seed {
            writeln!(s, "- seed {seed}: NAST top-3 share above uniform: {}", yn(*ok)).unwrap();
        }
        writeln!(s, "- mean gap smaller under NAST: {}", yn(self.comparison.gap_smaller)).unwrap();
        writeln!(s, "- mean negated accuracy not lower under NAST: {}", yn(self.comparison.negated_not_lower)).unwrap();
        let r = &self.reference;
        write!(
            s,
            "\n## Reference ({})\n\n| quantity | uniform / CLIP | NAST |\n|---|---|---|\n\
             | gap (claim accuracy) | {} | {} |\n| top-3 share | {} | {} |\n| top-5 share | {} | {} |\n",
            r.label, r.gap_clip, r.gap_nast, r.top3_uniform, r.top3_nast, r.top5_uniform, r.top5_nast
        )
        .unwrap();
        s
    }
}

pub fn build_report(config: &RunConfig, base: Option<&EvalRecord>, records: &[(Arm, u64, Option<EvalRecord>)]) -> Report {
    let columns = columns(&config.top_k);
    let rows: Vec<ReportRow> = records
        .iter()
        .map(|(arm, seed, rec)| ReportRow {
            arm: arm.name().into(),
            seed: Some(*seed),
            n: rec.is_some() as usize,
            values: rec.as_ref().map_or_else(|| vec![None; columns.len()], |r| values(r, &config.top_k)),
        })
        .collect();
    let mut arms: Vec<Arm> = records.iter().map(|r| r.0).collect();
    arms.dedup();
    let means: Vec<ReportRow> = arms
        .iter()
        .map(|a| {
            let rs: Vec<&ReportRow> = rows.iter().filter(|r| r.arm == a.name()).collect();
            mean_row(a.name(), &rs, columns.len())
        })
        .collect();
    let mut report = Report {
        config_hash: config.hash(),
        columns,
        base: base.map(|b| values(b, &config.top_k)),
        rows,
        means,
        comparison: Comparison {
            concentration_per_seed: Vec::new(),
            gap_smaller: None,
            negated_not_lower: None,
        },
        reference: reference(),
    };
    let value = |rows: &[ReportRow], arm: Arm, seed: Option<u64>, col: Option<usize>| {
        rows.iter()
            .find(|r| r.arm == arm.name() && r.seed == seed)
            .and_then(|r| col.and_then(|c| r.values[c]))
    };
    let top3 = report.col("top_3_share");
    let mut seeds: Vec<u64> = records.iter().map(|r| r.1).collect();
    seeds.sort_unstable();
    seeds.dedup();
    report.comparison.concentration_per_seed = seeds
        .iter()
        .map(|&s| {
            let n = value(&report.rows, Arm::Nast, Some(s), top3);
            let u = value(&report.rows, Arm::Uniform, Some(s), top3);
            (s, n.zip(u).map(|(n, u)| n > u))
        })
        .collect();
    let gap = report.col("gap");
    let neg = report.col("mcq_negated");
    let both = |col| value(&report.means, Arm::Nast, None, col).zip(value(&report.means, Arm::Uniform, None, col));
    report.comparison.gap_smaller = both(gap).map(|(n, u)| n < u);
    report.comparison.negated_not_lower = both(neg).map(|(n, u)| n >= u);
    report
}

/// Tabulate whatever eval outputs exist; missing (arm, seed) cells are marked
/// absent rather than failing.
pub fn cmd_report(config: &RunConfig, arms: &[Arm], seeds: &[u64]) -> Result<Report> {
    let ws = Workspace::open(config)?;
    let read = |p: std::path::PathBuf| -> Result<Option<EvalRecord>> {
        if p.exists() {
            util::read_json(&p).map(Some)
        } else {
            log::warn!("{} missing; marked absent", p.display());
            Ok(None)
        }
    };
    let base = read(ws.run.root().join("eval").join("base").join("eval.json"))?;
    let mut records = Vec::new();
    for &arm in arms {
        for &seed in seeds {
            records.push((arm, seed, read(ws.run.eval(arm, seed).join("eval.json"))?));
        }
    }
    let report = build_report(config, base.as_ref(), &records);
    let dir = ws.run.report();
    util::write_json(&dir.join("report.json"), &report)?;
    util::write_bytes(&dir.join("report.csv"), report.to_csv().as_bytes())?;
    util::write_bytes(&dir.join("report.md"), report.to_markdown().as_bytes())?;
    Ok(report)
}
