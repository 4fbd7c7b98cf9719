//! Attention enrichment: how much attention later tokens devote to the tag
//! span, normalized by the chance expectation `tag_len / T`.

use serde::{Deserialize, Serialize};

use crate::backend::model::ForwardTrace;
use crate::backend::tensor::Mat;
use crate::error::{Error, Result};

/// Half-open token range `[start, end)` of the author tag in a sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagSpan {
    pub start: usize,
    pub end: usize,
}

impl TagSpan {
    pub fn new(start: usize, end: usize) -> Result<TagSpan> {
        if start >= end {
            return Err(Error::InvalidConfig(format!(
                "empty tag span {start}..{end}"
            )));
        }
        Ok(TagSpan { start, end })
    }

    /// The usual case: a single-token tag at the head of the sequence.
    pub fn leading_tag() -> TagSpan {
        TagSpan { start: 0, end: 1 }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

/// Mean over heads and over query positions `q >= span.end` of the attention
/// mass the query row places on the tag span.
pub fn to_tag_mass(attn: &[Mat], span: &TagSpan, valid_len: usize) -> Result<f64> {
    if attn.is_empty() {
        return Err(Error::ShapeMismatch("no attention heads".into()));
    }
    if span.end > valid_len {
        return Err(Error::ShapeMismatch(format!(
            "tag span ends at {} beyond {valid_len} valid tokens",
            span.end
        )));
    }
    if span.end >= valid_len {
        return Err(Error::EmptyQuerySet);
    }
    let queries = valid_len - span.end;
    let mut total = 0.0;
    for head in attn {
        if head.rows < valid_len || head.cols < valid_len {
            return Err(Error::ShapeMismatch(
                "attention matrix smaller than valid length".into(),
            ));
        }
        for q in span.end..valid_len {
            let row = head.row(q);
            total += row[span.start..span.end].iter().sum::<f64>();
        }
    }
    Ok(total / (attn.len() * queries) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerEnrichment {
    pub to_tag_mass: f64,
    /// `to_tag_mass / (tag_len / T)`; 1.0 means chance-level attention.
    pub enrichment: f64,
}

/// Per-layer to-tag mass and enrichment for one forward trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnrichmentProfile {
    pub layers: Vec<LayerEnrichment>,
    pub valid_len: usize,
    pub tag_len: usize,
}

pub fn enrichment_profile(trace: &ForwardTrace, span: &TagSpan) -> Result<EnrichmentProfile> {
    let attentions = trace
        .attentions
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("trace captured without attentions".into()))?;
    let t = trace.valid_len;
    let baseline = span.len() as f64 / t as f64;
    let layers = attentions
        .iter()
        .map(|heads| {
            let mass = to_tag_mass(heads, span, t)?;
            Ok(LayerEnrichment {
                to_tag_mass: mass,
                enrichment: mass / baseline,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EnrichmentProfile {
        layers,
        valid_len: t,
        tag_len: span.len(),
    })
}

/// Equal-weight mean of per-layer mass and enrichment across traces
/// (generation steps or whole generations).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateEnrichment {
    pub layers: Vec<LayerEnrichment>,
    pub samples: usize,
}

pub fn aggregate_profiles(profiles: &[EnrichmentProfile]) -> Result<AggregateEnrichment> {
    let first = profiles
        .first()
        .ok_or_else(|| Error::InvalidConfig("no profiles to aggregate".into()))?;
    let layer_count = first.layers.len();
    let mut sums = vec![
        LayerEnrichment {
            to_tag_mass: 0.0,
            enrichment: 0.0
        };
        layer_count
    ];
    for profile in profiles {
        if profile.layers.len() != layer_count {
            return Err(Error::ShapeMismatch(
                "profiles span different layer counts".into(),
            ));
        }
        for (acc, layer) in sums.iter_mut().zip(&profile.layers) {
            acc.to_tag_mass += layer.to_tag_mass;
            acc.enrichment += layer.enrichment;
        }
    }
    let n = profiles.len() as f64;
    for acc in sums.iter_mut() {
        acc.to_tag_mass /= n;
        acc.enrichment /= n;
    }
    Ok(AggregateEnrichment {
        layers: sums,
        samples: profiles.len(),
    })
}
