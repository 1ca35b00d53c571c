//! Serialized tracing outputs: alpha JSON, per-pair CSV and an SVG heatmap.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CteSummary, LayerWeights, TraceResult};
use crate::error::{Error, Result};
use crate::util;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaFile {
    pub layers: usize,
    pub cte_layer: Vec<f64>,
    pub alpha: Vec<f64>,
    pub num_pairs: usize,
    pub num_filtered: usize,
}

impl AlphaFile {
    pub fn new(summary: &CteSummary, weights: &LayerWeights) -> Self {
        AlphaFile {
            layers: weights.alpha.len(),
            cte_layer: summary.cte_layer.clone(),
            alpha: weights.alpha.clone(),
            num_pairs: summary.num_pairs,
            num_filtered: summary.num_filtered,
        }
    }

    pub fn weights(&self) -> LayerWeights {
        LayerWeights {
            cte_layer: self.cte_layer.clone(),
            alpha: self.alpha.clone(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let a: AlphaFile = util::read_json(path)?;
        if a.alpha.len() != a.layers || a.cte_layer.len() != a.layers {
            return Err(Error::Data(format!("{}: alpha and layer count disagree", path.display())));
        }
        Ok(a)
    }
}

/// Mean CTE matrix over valid results whose token length is the most common
/// one (ties to the shorter length).
pub fn mean_cte_matrix(results: &[TraceResult]) -> Option<Vec<Vec<f64>>> {
    let mats: Vec<&Vec<Vec<f64>>> = results.iter().filter_map(|r| r.cte.as_ref()).collect();
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for m in &mats {
        *counts.entry(m[0].len()).or_default() += 1;
    }
    let (&len, _) = counts.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))?;
    let same: Vec<_> = mats.into_iter().filter(|m| m[0].len() == len).collect();
    let mut mean = vec![vec![0.0; len]; same[0].len()];
    for m in &same {
        for (row, src) in mean.iter_mut().zip(m.iter()) {
            for (a, b) in row.iter_mut().zip(src) {
                *a += b;
            }
        }
    }
    let n = same.len() as f64;
    mean.iter_mut().flatten().for_each(|v| *v /= n);
    Some(mean)
}

/// One line per `(pair, layer, position)` of every valid result.
pub fn write_cte_csv(path: &Path, results: &[TraceResult]) -> Result<()> {
    let mut s = String::from("pair,layer,position,cte\n");
    for (i, r) in results.iter().enumerate() {
        if let Some(m) = &r.cte {
            for (l, row) in m.iter().enumerate() {
                for (p, v) in row.iter().enumerate() {
                    writeln!(s, "{i},{l},{p},{v}").expect("string write");
                }
            }
        }
    }
    util::write_bytes(path, s.as_bytes())
}

/// Diverging palette: blue (-1) through white (0) to red (+1), clipped.
fn color(v: f64) -> String {
    let t = v.clamp(-1.0, 1.0);
    let (r, g, b) = if t >= 0.0 {
        (255.0, 255.0 * (1.0 - t), 255.0 * (1.0 - t))
    } else {
        (255.0 * (1.0 + t), 255.0 * (1.0 + t), 255.0)
    };
    format!("#{:02x}{:02x}{:02x}", r.round() as u8, g.round() as u8, b.round() as u8)
}

/// Layers × positions grid (layer 0 at the bottom) with a colour legend.
pub fn heatmap_svg(matrix: &[Vec<f64>], labels: &[String]) -> String {
    let rows = matrix.len();
    let cols = matrix.first().map_or(0, |r| r.len());
    let cell = 36.0;
    let left = 70.0;
    let top = 20.0;
    let legend_w = 20.0;
    let width = left + cols as f64 * cell + 90.0;
    let height = top + rows as f64 * cell + 70.0;
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="monospace" font-size="10">"#
    )
    .unwrap();
    writeln!(s, r#"<g class="grid" data-rows="{rows}" data-cols="{cols}">"#).unwrap();
    for (l, row) in matrix.iter().enumerate() {
        let y = top + (rows - 1 - l) as f64 * cell;
        for (p, v) in row.iter().enumerate() {
            let x = left + p as f64 * cell;
            writeln!(
                s,
                r#"<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="{}" data-layer="{l}" data-position="{p}"><title>{v:.4}</title></rect>"#,
                color(*v)
            )
            .unwrap();
        }
        writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">layer {l}</text>"#, left - 6.0, y + cell / 2.0 + 3.0).unwrap();
    }
    writeln!(s, "</g>").unwrap();
    for p in 0..cols {
        let label = labels.get(p).map_or_else(|| p.to_string(), |w| w.clone());
        writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            left + p as f64 * cell + cell / 2.0,
            top + rows as f64 * cell + 14.0,
            escape(&label)
        )
        .unwrap();
    }
    let lx = left + cols as f64 * cell + 30.0;
    let steps = 20;
    let lh = rows as f64 * cell / steps as f64;
    for i in 0..steps {
        let v = 1.0 - 2.0 * i as f64 / (steps - 1) as f64;
        writeln!(
            s,
            r#"<rect class="legend" x="{lx}" y="{}" width="{legend_w}" height="{lh}" fill="{}"/>"#,
            top + i as f64 * lh,
            color(v)
        )
        .unwrap();
    }
    for (v, y) in [(1.0, top + 8.0), (0.0, top + rows as f64 * cell / 2.0), (-1.0, top + rows as f64 * cell)] {
        writeln!(s, r#"<text x="{}" y="{y}">{v:+.1}</text>"#, lx + legend_w + 4.0).unwrap();
    }
    writeln!(
        s,
        r#"<text x="{left}" y="{}">CTE by layer and token position</text>"#,
        top + rows as f64 * cell + 40.0
    )
    .unwrap();
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
