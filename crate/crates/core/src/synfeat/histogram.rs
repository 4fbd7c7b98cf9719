//! Shared-bin histograms and Jensen-Shannon divergence between populations.

use serde::{Deserialize, Serialize};

use super::features::FeatureVector;
use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub feature: String,
    /// Strictly increasing bin edges, `len = counts.len() + 1`.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    /// Which population the counts describe, e.g. "real" or "generated".
    pub population: String,
    /// Author name or "all".
    pub author: String,
}

impl Histogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    fn normalized(&self) -> Vec<f64> {
        let total = self.total() as f64;
        self.counts.iter().map(|&c| c as f64 / total).collect()
    }
}

/// Equal-width edges spanning the pooled range of both populations.
pub fn shared_edges(a: &[f64], b: &[f64], bins: usize) -> Vec<f64> {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for &v in a.iter().chain(b) {
        min = min.min(v);
        max = max.max(v);
    }
    if min == max {
        // Degenerate range: widen symmetrically so every value lands inside.
        min -= 0.5;
        max += 0.5;
    }
    let width = (max - min) / bins as f64;
    (0..=bins).map(|i| min + i as f64 * width).collect()
}

/// Bins `values` against `edges`. Values at the top edge fall into the last
/// bin, so the histogram always conserves the population size.
pub fn bin_values(
    values: &[f64],
    edges: &[f64],
    feature: &str,
    population: &str,
    author: &str,
) -> Histogram {
    let bins = edges.len() - 1;
    let min = edges[0];
    let max = edges[bins];
    let width = (max - min) / bins as f64;
    let mut counts = vec![0u64; bins];
    for &v in values {
        let idx = (((v - min) / width).floor() as i64).clamp(0, bins as i64 - 1) as usize;
        counts[idx] += 1;
    }
    Histogram {
        feature: feature.to_string(),
        edges: edges.to_vec(),
        counts,
        population: population.to_string(),
        author: author.to_string(),
    }
}

/// Jensen-Shannon divergence (natural log) between two histograms over
/// identical edges. Ranges over `[0, ln 2]` and is symmetric.
pub fn jensen_shannon(a: &Histogram, b: &Histogram) -> Result<f64> {
    if a.edges != b.edges {
        return Err(Error::ShapeMismatch(
            "histograms use different edges".into(),
        ));
    }
    if a.total() == 0 || b.total() == 0 {
        return Err(Error::InvalidConfig("empty histogram".into()));
    }
    let p = a.normalized();
    let q = b.normalized();
    let mut div = 0.0;
    for (pi, qi) in p.iter().zip(&q) {
        let m = 0.5 * (pi + qi);
        if *pi > 0.0 {
            div += 0.5 * pi * (pi / m).ln();
        }
        if *qi > 0.0 {
            div += 0.5 * qi * (qi / m).ln();
        }
    }
    Ok(div)
}

/// Extracts `feature` from both populations, bins them over shared edges, and
/// reports the Jensen-Shannon divergence.
pub fn compare(
    real: &[FeatureVector],
    generated: &[FeatureVector],
    feature: &str,
    bins: usize,
) -> Result<(Histogram, Histogram, f64)> {
    let real_vals: Vec<f64> = real.iter().filter_map(|fv| fv.get(feature)).collect();
    let gen_vals: Vec<f64> = generated.iter().filter_map(|fv| fv.get(feature)).collect();
    if real_vals.is_empty() || gen_vals.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "feature {feature} absent from one population"
        )));
    }
    let edges = shared_edges(&real_vals, &gen_vals, bins.max(1));
    let real_hist = bin_values(&real_vals, &edges, feature, "real", "all");
    let gen_hist = bin_values(&gen_vals, &edges, feature, "generated", "all");
    let divergence = jensen_shannon(&real_hist, &gen_hist)?;
    Ok((real_hist, gen_hist, divergence))
}
