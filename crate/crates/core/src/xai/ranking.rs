//! Corpus-level aggregation of signed classifier token attributions.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ig::{integrated_gradients, BaselineSpec, ModelTarget};
use crate::author::AuthorId;
use crate::backend::model::LogitTarget;
use crate::backend::tokenizer::UNK_TOKEN;
use crate::corpus::SentenceRecord;
use crate::detector::Detector;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenAttribution {
    pub token: String,
    /// Mean signed contribution toward the author logit across sentences.
    pub mean_attribution: f64,
    /// Number of sentences the token appeared in.
    pub support: u64,
}

/// Tokens ranked by absolute mean attribution toward one author's logit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenRanking {
    pub author: AuthorId,
    pub entries: Vec<TokenAttribution>,
    pub sentences: usize,
    pub steps: usize,
}

/// Per sentence, runs IG toward `author`'s class logit from a zero-embedding
/// baseline, sums each token's attributions across embedding dimensions
/// (keeping the sign for direction), then aggregates by token string. Entries
/// come back sorted by absolute mean attribution, largest first.
pub fn classifier_token_ranking(
    detector: &Detector,
    records: &[SentenceRecord],
    author: AuthorId,
    steps: usize,
    top_k: usize,
) -> Result<TokenRanking> {
    let per_sentence: Vec<Result<BTreeMap<String, f64>>> = records
        .par_iter()
        .map(|record| {
            let mut ids = detector.tokenizer.encode(&record.text);
            ids.truncate(detector.model.config.context);
            let mut token_values: BTreeMap<String, f64> = BTreeMap::new();
            if ids.is_empty() {
                return Ok(token_values);
            }
            let embeddings = detector.model.token_embeddings(&ids)?;
            let baseline = BaselineSpec::zero_all(ids.len()).build(&embeddings);
            let target = ModelTarget {
                model: &detector.model,
                target: LogitTarget::ClassLogit {
                    class: author.index(),
                },
            };
            let ig = integrated_gradients(&target, &embeddings, &baseline, steps)?;
            for (t, &id) in ids.iter().enumerate() {
                let token = detector.tokenizer.token(id).trim().to_string();
                if token.is_empty() || token == UNK_TOKEN {
                    continue;
                }
                let signed: f64 = ig.attributions.row(t).iter().sum();
                *token_values.entry(token).or_insert(0.0) += signed;
            }
            Ok(token_values)
        })
        .collect();

    // Ordered fold keeps the aggregation deterministic.
    let mut sums: BTreeMap<String, (f64, u64)> = BTreeMap::new();
    for sentence in per_sentence {
        for (token, value) in sentence? {
            let slot = sums.entry(token).or_insert((0.0, 0));
            slot.0 += value;
            slot.1 += 1;
        }
    }
    let mut entries: Vec<TokenAttribution> = sums
        .into_iter()
        .map(|(token, (sum, support))| TokenAttribution {
            token,
            mean_attribution: sum / support as f64,
            support,
        })
        .collect();
    entries.sort_by(|a, b| {
        b.mean_attribution
            .abs()
            .partial_cmp(&a.mean_attribution.abs())
            .unwrap()
            .then_with(|| a.token.cmp(&b.token))
    });
    entries.truncate(top_k);
    Ok(TokenRanking {
        author,
        entries,
        sentences: records.len(),
        steps,
    })
}
