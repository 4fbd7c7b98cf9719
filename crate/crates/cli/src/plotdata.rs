//! Plain-data emission for the report types: enough structure for any
//! plotting tool, no rendering here.

use std::path::Path;

use anyhow::{Context, Result};
use serde::Deserialize;
use styleforge_core::synfeat::Histogram;
use styleforge_core::util;
use styleforge_core::xai::AttributionMatrix;

use crate::errors::config_err;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum PlotKind {
    AgreementBubbles,
    Histograms,
    EnrichmentTable,
    IgHeatmap,
    TopTokens,
}

pub fn emit_plot_data(kind: PlotKind, report: &Path, out_dir: &Path) -> Result<()> {
    if !report.is_file() {
        return Err(config_err(format!(
            "missing report file {}",
            report.display()
        )));
    }
    std::fs::create_dir_all(out_dir)?;
    match kind {
        PlotKind::AgreementBubbles => agreement_bubbles(report, out_dir),
        PlotKind::Histograms => histograms(report, out_dir),
        PlotKind::EnrichmentTable => enrichment_table(report, out_dir),
        PlotKind::IgHeatmap => ig_heatmap(report, out_dir),
        PlotKind::TopTokens => top_tokens(report, out_dir),
    }
}

#[derive(Deserialize)]
struct AgreementReport {
    authors: Vec<String>,
    counts: Vec<Vec<u64>>,
}

/// Long-format rows (expected, predicted, count) for bubble charts.
fn agreement_bubbles(report: &Path, out_dir: &Path) -> Result<()> {
    let data: AgreementReport = util::read_json(report).context("reading agreement report")?;
    let mut rows = vec!["expected,predicted,count".to_string()];
    for (e, row) in data.counts.iter().enumerate() {
        for (p, &count) in row.iter().enumerate() {
            rows.push(format!("{},{},{count}", data.authors[e], data.authors[p]));
        }
    }
    std::fs::write(
        out_dir.join("agreement_bubbles.csv"),
        rows.join("\n") + "\n",
    )?;
    Ok(())
}

fn histograms(report: &Path, out_dir: &Path) -> Result<()> {
    let data: Vec<Histogram> = util::read_json(report).context("reading histograms")?;
    let mut rows = vec!["feature,author,population,bin_lo,bin_hi,count".to_string()];
    for h in &data {
        for (i, &count) in h.counts.iter().enumerate() {
            rows.push(format!(
                "{},{},{},{},{},{count}",
                h.feature,
                h.author,
                h.population,
                h.edges[i],
                h.edges[i + 1]
            ));
        }
    }
    std::fs::write(out_dir.join("histograms.csv"), rows.join("\n") + "\n")?;
    Ok(())
}

/// Rebuilds the wide per-layer table: one row per layer, one column per tag,
/// cells rendered as `mass (xEnrichment)`.
fn enrichment_table(report: &Path, out_dir: &Path) -> Result<()> {
    let text = std::fs::read_to_string(report)?;
    struct Row {
        tag: String,
        layer: usize,
        mass: f64,
        enrichment: f64,
    }
    let mut rows = Vec::new();
    for line in text.lines().skip(1) {
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() < 5 {
            continue;
        }
        rows.push(Row {
            tag: parts[0].to_string(),
            layer: parts[1].parse()?,
            mass: parts[2].parse()?,
            enrichment: parts[3].parse()?,
        });
    }
    let mut tags: Vec<String> = rows.iter().map(|r| r.tag.clone()).collect();
    tags.sort();
    tags.dedup();
    let layers = rows.iter().map(|r| r.layer).max().map_or(0, |m| m + 1);
    let mut out = vec![format!("layer,{}", tags.join(","))];
    for layer in 0..layers {
        let mut cells = vec![format!("{layer:02}")];
        for tag in &tags {
            match rows.iter().find(|r| r.layer == layer && &r.tag == tag) {
                Some(r) => cells.push(format!("{:.2} (x{:.1})", r.mass, r.enrichment)),
                None => cells.push(String::new()),
            }
        }
        out.push(cells.join(","));
    }
    std::fs::write(out_dir.join("enrichment_table.csv"), out.join("\n") + "\n")?;
    Ok(())
}

/// CSV matrix: rows are prompt tokens, columns are generated tokens.
fn ig_heatmap(report: &Path, out_dir: &Path) -> Result<()> {
    let data: AttributionMatrix = util::read_json(report).context("reading attribution matrix")?;
    let quote = |s: &str| format!("\"{}\"", s.replace('"', "\"\""));
    let header = std::iter::once("prompt_token".to_string())
        .chain(data.generated_tokens.iter().map(|t| quote(t)))
        .collect::<Vec<_>>()
        .join(",");
    let mut rows = vec![header];
    for (i, token) in data.prompt_tokens.iter().enumerate() {
        let mut cells = vec![quote(token)];
        for j in 0..data.values.cols {
            cells.push(format!("{}", data.values.at(i, j)));
        }
        rows.push(cells.join(","));
    }
    let name = report
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_default();
    std::fs::write(out_dir.join(format!("{name}.csv")), rows.join("\n") + "\n")?;
    Ok(())
}

fn top_tokens(report: &Path, out_dir: &Path) -> Result<()> {
    let data: serde_json::Value = util::read_json(report)?;
    let map = data
        .as_object()
        .ok_or_else(|| config_err("top_tokens report is not an object"))?;
    let mut rows = vec!["author,rank,token,mean_attribution,support".to_string()];
    for (author, ranking) in map {
        let entries = ranking
            .get("entries")
            .and_then(|e| e.as_array())
            .ok_or_else(|| config_err("ranking without entries"))?;
        for (rank, entry) in entries.iter().enumerate() {
            let token = entry
                .get("token")
                .and_then(|t| t.as_str())
                .unwrap_or_default();
            let mean = entry
                .get("mean_attribution")
                .and_then(|v| v.as_f64())
                .unwrap_or(0.0);
            let support = entry.get("support").and_then(|v| v.as_u64()).unwrap_or(0);
            rows.push(format!(
                "{author},{},\"{}\",{mean},{support}",
                rank + 1,
                token.replace('"', "\"\"")
            ));
        }
    }
    std::fs::write(out_dir.join("top_tokens.csv"), rows.join("\n") + "\n")?;
    Ok(())
}
