//! Evaluation protocol: per-sample distance tables with the 0/infinity
//! conventions, threshold accuracies, per-norm aggregation, medians, minimal
//! accuracy, report rendering, and latent-space clustering.

mod latent;
mod report;
mod scatter;
mod tsne;

pub use latent::{class_silhouette, extract_latents};
pub use report::{emit_report, parse_report_csv, render_csv, render_markdown, ParsedReport};
pub use scatter::{emit_scatter, render_points_csv, render_svg};
pub use tsne::{tsne_embed, LatentEmbedding, TsneConfig};

use crate::attacks::{AttackArchive, Norm};
use crate::error::{DimError, Result};

/// Accuracy thresholds per norm (fractions of robust samples are measured
/// at distance strictly greater than these).
#[derive(Debug, Clone, Copy)]
pub struct Thresholds {
    pub l0: f32,
    pub l1: f32,
    pub l2: f32,
    pub linf: f32,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds { l0: 12.0, l1: 8.0, l2: 1.5, linf: 0.3 }
    }
}

impl Thresholds {
    pub fn get(&self, norm: Norm) -> f32 {
        match norm {
            Norm::L0 => self.l0,
            Norm::L1 => self.l1,
            Norm::L2 => self.l2,
            Norm::Linf => self.linf,
        }
    }
}

/// One attack row of the report: a named attack evaluated in one norm.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackRow {
    pub attack: String,
    pub norm: Norm,
    pub epsilon: f32,
}

/// Per-sample adversarial distances for every (model, attack) pair, with
/// clean-misclassified samples pinned to 0 and failed attacks to infinity.
#[derive(Debug, Clone)]
pub struct DistanceTable {
    pub models: Vec<String>,
    pub rows: Vec<AttackRow>,
    /// `cells[model][row]` is `None` when that pair was never run.
    pub cells: Vec<Vec<Option<Vec<f32>>>>,
    pub n: usize,
    pub clean_correct: Vec<Vec<bool>>,
}

/// Paper table order.
pub const NORM_ORDER: [Norm; 4] = [Norm::L2, Norm::Linf, Norm::L0, Norm::L1];

impl DistanceTable {
    /// Assemble a table from archives. Every archive must cover the same
    /// evaluation subset (same sample count, ordered by sample index).
    pub fn from_archives(
        models: Vec<(String, Vec<bool>)>,
        archives: &[AttackArchive],
        thresholds: &Thresholds,
    ) -> Result<DistanceTable> {
        let n = models
            .first()
            .map(|(_, c)| c.len())
            .ok_or_else(|| DimError::Invalid("table needs at least one model".into()))?;
        if models.iter().any(|(_, c)| c.len() != n) {
            return Err(DimError::Invalid("models disagree on sample count".into()));
        }
        let mut rows: Vec<AttackRow> = Vec::new();
        for a in archives {
            let row = AttackRow {
                attack: a.attack.clone(),
                norm: a.norm,
                epsilon: a.epsilon.unwrap_or_else(|| thresholds.get(a.norm)),
            };
            if !rows.iter().any(|r| r.attack == row.attack && r.norm == row.norm) {
                rows.push(row);
            }
        }
        // Group rows by norm in paper order, stable within each norm.
        rows.sort_by_key(|r| NORM_ORDER.iter().position(|&n| n == r.norm).unwrap_or(4));

        let mut cells: Vec<Vec<Option<Vec<f32>>>> = vec![vec![None; rows.len()]; models.len()];
        for a in archives {
            let Some(m) = models.iter().position(|(name, _)| *name == a.model) else {
                return Err(DimError::Invalid(format!(
                    "archive for unknown model '{}'",
                    a.model
                )));
            };
            let r = rows
                .iter()
                .position(|r| r.attack == a.attack && r.norm == a.norm)
                .expect("row registered above");
            if a.records.len() != n {
                return Err(DimError::Invalid(format!(
                    "archive {}/{} holds {} samples, expected {n}",
                    a.model,
                    a.attack,
                    a.records.len()
                )));
            }
            let clean = &models[m].1;
            let mut dists = Vec::with_capacity(n);
            for (s, rec) in a.records.iter().enumerate() {
                let d = if !clean[s] {
                    0.0
                } else if rec.success {
                    rec.distances.get(a.norm)
                } else {
                    f32::INFINITY
                };
                dists.push(d);
            }
            cells[m][r] = Some(dists);
        }
        let (names, clean_correct): (Vec<_>, Vec<_>) = models.into_iter().unzip();
        Ok(DistanceTable { models: names, rows, cells, n, clean_correct })
    }

    pub fn model_index(&self, name: &str) -> Option<usize> {
        self.models.iter().position(|m| m == name)
    }

    pub fn distances(&self, model: usize, row: usize) -> Option<&[f32]> {
        self.cells[model][row].as_deref()
    }
}

/// Fraction of samples whose distance strictly exceeds `eps` (an attack
/// succeeding exactly at the threshold counts as successful).
pub fn accuracy_at_threshold(dists: &[f32], eps: f32) -> f64 {
    if dists.is_empty() {
        return 0.0;
    }
    dists.iter().filter(|&&d| d > eps).count() as f64 / dists.len() as f64
}

/// Per-sample minimum across all of a norm's attacks for one model; `None`
/// when the table holds no attack of that norm for the model.
pub fn aggregate_over_attacks(table: &DistanceTable, model: usize, norm: Norm) -> Option<Vec<f32>> {
    let mut agg: Option<Vec<f32>> = None;
    for (r, row) in table.rows.iter().enumerate() {
        if row.norm != norm {
            continue;
        }
        let Some(dists) = table.distances(model, r) else { continue };
        match &mut agg {
            None => agg = Some(dists.to_vec()),
            Some(a) => {
                for (acc, &d) in a.iter_mut().zip(dists) {
                    if d < *acc {
                        *acc = d;
                    }
                }
            }
        }
    }
    agg
}

/// Lower median with infinity sorting above every finite value.
pub fn median_distance(dists: &[f32]) -> f32 {
    assert!(!dists.is_empty(), "median of an empty table");
    let mut sorted = dists.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("distances are never NaN"));
    sorted[(sorted.len() - 1) / 2]
}

/// Summary of one norm for one model.
#[derive(Debug, Clone)]
pub struct PerNormSummary {
    pub norm: Norm,
    pub epsilon: f32,
    /// (attack name, accuracy at the norm threshold)
    pub per_attack: Vec<(String, f64)>,
    pub aggregate_accuracy: f64,
    pub median: f32,
}

/// Full summary of one model column.
#[derive(Debug, Clone)]
pub struct ModelSummary {
    pub model: String,
    pub norms: Vec<PerNormSummary>,
}

impl ModelSummary {
    pub fn minimal_accuracy(&self) -> f64 {
        minimal_accuracy(self)
    }
}

/// Minimum per-attack threshold accuracy across every attack of every norm.
pub fn minimal_accuracy(summary: &ModelSummary) -> f64 {
    summary
        .norms
        .iter()
        .flat_map(|n| n.per_attack.iter().map(|(_, a)| *a))
        .fold(f64::INFINITY, f64::min)
}

/// Build per-model summaries at the given thresholds.
pub fn summarize(table: &DistanceTable, thresholds: &Thresholds) -> Vec<ModelSummary> {
    let mut out = Vec::with_capacity(table.models.len());
    for (m, model) in table.models.iter().enumerate() {
        let mut norms = Vec::new();
        for &norm in &NORM_ORDER {
            let eps = thresholds.get(norm);
            let mut per_attack = Vec::new();
            for (r, row) in table.rows.iter().enumerate() {
                if row.norm != norm {
                    continue;
                }
                if let Some(dists) = table.distances(m, r) {
                    per_attack.push((row.attack.clone(), accuracy_at_threshold(dists, eps)));
                }
            }
            if per_attack.is_empty() {
                continue;
            }
            let agg = aggregate_over_attacks(table, m, norm).expect("norm has rows");
            norms.push(PerNormSummary {
                norm,
                epsilon: eps,
                aggregate_accuracy: accuracy_at_threshold(&agg, eps),
                median: median_distance(&agg),
                per_attack,
            });
        }
        out.push(ModelSummary { model: model.clone(), norms });
    }
    out
}

#[cfg(test)]
mod tests;
