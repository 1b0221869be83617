//! Report rendering: a machine CSV and a human Markdown table, rows grouped
//! by norm with "all attacks" and minimal-accuracy summary lines.
//!
//! CSV grammar: header `attack,norm,epsilon,<model...>`; attack rows carry
//! accuracy percentages; `ALL_*` rows carry `median/accuracy` cells (median
//! `inf` when most samples resisted every attack); the final row is
//! `MINIMAL_ACCURACY`. Missing (model, attack) cells are empty.

use super::{DistanceTable, ModelSummary, Norm, Thresholds, NORM_ORDER};
use crate::error::{DimError, Result};
use std::fmt::Write as _;
use std::path::Path;

fn all_row_name(norm: Norm) -> &'static str {
    match norm {
        Norm::L0 => "ALL_L0",
        Norm::L1 => "ALL_L1",
        Norm::L2 => "ALL_L2",
        Norm::Linf => "ALL_LINF",
    }
}

fn fmt_pct(a: f64) -> String {
    format!("{:.4}", a * 100.0)
}

fn fmt_median(m: f32) -> String {
    if m.is_infinite() {
        "inf".into()
    } else {
        format!("{m:.6}")
    }
}

pub fn render_csv(table: &DistanceTable, summaries: &[ModelSummary], thresholds: &Thresholds) -> String {
    let mut out = String::new();
    out.push_str("attack,norm,epsilon");
    for m in &table.models {
        write!(out, ",{m}").unwrap();
    }
    out.push('\n');
    for &norm in &NORM_ORDER {
        let mut wrote_any = false;
        for (r, row) in table.rows.iter().enumerate() {
            if row.norm != norm {
                continue;
            }
            wrote_any = true;
            write!(out, "{},{},{}", row.attack, norm.as_str(), thresholds.get(norm)).unwrap();
            for (m, summary) in summaries.iter().enumerate() {
                let cell = match table.distances(m, r) {
                    Some(_) => {
                        let s = summary
                            .norms
                            .iter()
                            .find(|s| s.norm == norm)
                            .expect("summary covers rendered norms");
                        let (_, acc) = s
                            .per_attack
                            .iter()
                            .find(|(name, _)| *name == row.attack)
                            .expect("summary covers rendered attacks");
                        fmt_pct(*acc)
                    }
                    None => String::new(),
                };
                write!(out, ",{cell}").unwrap();
            }
            out.push('\n');
        }
        if wrote_any {
            write!(out, "{},{},{}", all_row_name(norm), norm.as_str(), thresholds.get(norm)).unwrap();
            for summary in summaries {
                match summary.norms.iter().find(|s| s.norm == norm) {
                    Some(s) => write!(out, ",{}/{}", fmt_median(s.median), fmt_pct(s.aggregate_accuracy)).unwrap(),
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
    }
    out.push_str("MINIMAL_ACCURACY,,");
    for summary in summaries {
        write!(out, ",{}", fmt_pct(summary.minimal_accuracy())).unwrap();
    }
    out.push('\n');
    out
}

pub fn render_markdown(table: &DistanceTable, summaries: &[ModelSummary], thresholds: &Thresholds) -> String {
    let mut out = String::new();
    write!(out, "| attack |").unwrap();
    for m in &table.models {
        write!(out, " {m} |").unwrap();
    }
    out.push('\n');
    write!(out, "|---|").unwrap();
    for _ in &table.models {
        write!(out, "---|").unwrap();
    }
    out.push('\n');
    for &norm in &NORM_ORDER {
        let rows: Vec<usize> = (0..table.rows.len())
            .filter(|&r| table.rows[r].norm == norm)
            .collect();
        if rows.is_empty() {
            continue;
        }
        write!(out, "| **{}-metric (eps = {})** |", norm.as_str(), thresholds.get(norm)).unwrap();
        for _ in &table.models {
            write!(out, " |").unwrap();
        }
        out.push('\n');
        for r in rows {
            let row = &table.rows[r];
            write!(out, "| {} {} |", norm.as_str(), row.attack).unwrap();
            for (m, summary) in summaries.iter().enumerate() {
                match table.distances(m, r) {
                    Some(_) => {
                        let s = summary.norms.iter().find(|s| s.norm == norm).unwrap();
                        let (_, acc) = s.per_attack.iter().find(|(n, _)| *n == row.attack).unwrap();
                        write!(out, " {:.0}% |", acc * 100.0).unwrap();
                    }
                    None => write!(out, " - |").unwrap(),
                }
            }
            out.push('\n');
        }
        write!(out, "| All {} attacks |", norm.as_str()).unwrap();
        for summary in summaries {
            match summary.norms.iter().find(|s| s.norm == norm) {
                Some(s) => {
                    let med = if s.median.is_infinite() {
                        "inf".to_string()
                    } else {
                        format!("{:.2}", s.median)
                    };
                    write!(out, " {}/{:.0}% |", med, s.aggregate_accuracy * 100.0).unwrap();
                }
                None => write!(out, " - |").unwrap(),
            }
        }
        out.push('\n');
    }
    write!(out, "| **Minimal Accuracy** |").unwrap();
    for summary in summaries {
        write!(out, " {:.0}% |", summary.minimal_accuracy() * 100.0).unwrap();
    }
    out.push('\n');
    out
}

/// Write `report.csv` and `report.md` into `dir`.
pub fn emit_report(
    table: &DistanceTable,
    summaries: &[ModelSummary],
    thresholds: &Thresholds,
    dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| DimError::io(dir.display().to_string(), e))?;
    let csv = render_csv(table, summaries, thresholds);
    let md = render_markdown(table, summaries, thresholds);
    std::fs::write(dir.join("report.csv"), csv)
        .map_err(|e| DimError::io(dir.join("report.csv").display().to_string(), e))?;
    std::fs::write(dir.join("report.md"), md)
        .map_err(|e| DimError::io(dir.join("report.md").display().to_string(), e))
}

/// Parsed-back CSV for round-trip checks and downstream tooling.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedReport {
    pub models: Vec<String>,
    /// (attack, norm, epsilon, per-model accuracy percent)
    pub attack_rows: Vec<(String, String, f32, Vec<Option<f64>>)>,
    /// (row name, per-model (median, accuracy percent))
    pub all_rows: Vec<(String, Vec<Option<(f32, f64)>>)>,
    pub minimal_accuracy: Vec<f64>,
}

pub fn parse_report_csv(text: &str) -> Result<ParsedReport> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| DimError::Invalid("empty report".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 4 || cols[0] != "attack" {
        return Err(DimError::Invalid("bad report header".into()));
    }
    let models: Vec<String> = cols[3..].iter().map(|s| s.to_string()).collect();
    let mut attack_rows = Vec::new();
    let mut all_rows = Vec::new();
    let mut minimal = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        let name = cells[0];
        if name == "MINIMAL_ACCURACY" {
            for c in &cells[3..] {
                minimal.push(c.parse::<f64>().map_err(|_| {
                    DimError::Invalid(format!("bad minimal accuracy cell '{c}'"))
                })?);
            }
        } else if name.starts_with("ALL_") {
            let mut row = Vec::new();
            for c in &cells[3..] {
                if c.is_empty() {
                    row.push(None);
                } else {
                    let (med, acc) = c
                        .split_once('/')
                        .ok_or_else(|| DimError::Invalid(format!("bad ALL cell '{c}'")))?;
                    let med = if med == "inf" { f32::INFINITY } else { med.parse().map_err(|_| DimError::Invalid(format!("bad median '{med}'")))? };
                    let acc = acc.parse().map_err(|_| DimError::Invalid(format!("bad accuracy '{acc}'")))?;
                    row.push(Some((med, acc)));
                }
            }
            all_rows.push((name.to_string(), row));
        } else {
            let eps: f32 = cells[2]
                .parse()
                .map_err(|_| DimError::Invalid(format!("bad epsilon '{}'", cells[2])))?;
            let mut row = Vec::new();
            for c in &cells[3..] {
                if c.is_empty() {
                    row.push(None);
                } else {
                    row.push(Some(c.parse::<f64>().map_err(|_| {
                        DimError::Invalid(format!("bad accuracy cell '{c}'"))
                    })?));
                }
            }
            attack_rows.push((name.to_string(), cells[1].to_string(), eps, row));
        }
    }
    Ok(ParsedReport { models, attack_rows, all_rows, minimal_accuracy: minimal })
}
