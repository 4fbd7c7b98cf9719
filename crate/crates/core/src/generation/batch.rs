//! Plan-driven batch generation with retries and acceptance reporting.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::finetune::{FineTuneMethod, StyleGenerator};
use super::postprocess::postprocess;
use super::sample::{generate, GenerationConfig, Seed};
use crate::author::{AuthorId, AUTHOR_COUNT};
use crate::corpus::{Corpus, Split};
use crate::error::Result;
use crate::util;

/// Requested accepted-sentence counts per author.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationPlan {
    pub per_author: [usize; AUTHOR_COUNT],
}

impl GenerationPlan {
    pub fn uniform(count: usize) -> GenerationPlan {
        GenerationPlan {
            per_author: [count; AUTHOR_COUNT],
        }
    }

    pub fn total(&self) -> usize {
        self.per_author.iter().sum()
    }
}

/// One accepted generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedSentence {
    pub seed: String,
    pub author: AuthorId,
    pub method: FineTuneMethod,
    pub text: String,
    /// Rejected attempts before this sentence was accepted.
    pub retry_count: u32,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct BatchReport {
    pub attempts: u64,
    pub accepted: u64,
    pub rejections: BTreeMap<String, u64>,
    pub per_author_attempts: BTreeMap<String, u64>,
    pub warnings: Vec<String>,
}

impl BatchReport {
    pub fn acceptance_rate(&self) -> f64 {
        if self.attempts == 0 {
            0.0
        } else {
            self.accepted as f64 / self.attempts as f64
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratedSet {
    pub items: Vec<GeneratedSentence>,
    pub method: FineTuneMethod,
    pub per_author_counts: BTreeMap<String, u64>,
    pub report: BatchReport,
}

impl GeneratedSet {
    pub fn save(&self, jsonl_path: &Path) -> Result<()> {
        util::write_jsonl(jsonl_path, &self.items)?;
        let report_path = jsonl_path.with_extension("report.json");
        #[derive(Serialize)]
        struct Sidecar<'a> {
            method: FineTuneMethod,
            per_author_counts: &'a BTreeMap<String, u64>,
            report: &'a BatchReport,
        }
        util::write_json_pretty(
            &report_path,
            &Sidecar {
                method: self.method,
                per_author_counts: &self.per_author_counts,
                report: &self.report,
            },
        )?;
        Ok(())
    }

    pub fn load(jsonl_path: &Path, method: FineTuneMethod) -> Result<GeneratedSet> {
        let items: Vec<GeneratedSentence> = util::read_jsonl(jsonl_path)?;
        let mut per_author: BTreeMap<String, u64> = BTreeMap::new();
        for item in &items {
            *per_author.entry(item.author.to_string()).or_insert(0) += 1;
        }
        Ok(GeneratedSet {
            method,
            per_author_counts: per_author,
            report: BatchReport {
                accepted: items.len() as u64,
                ..Default::default()
            },
            items,
        })
    }
}

/// The most frequent sentence-initial words of the train split, for seeding
/// generation with one or two extra words.
pub fn seed_vocabulary(corpus: &Corpus, limit: usize) -> Vec<String> {
    let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
    for record in corpus.split_records(Split::Train) {
        if let Some(first) = record.text.split_whitespace().next() {
            let word: &str = first.trim_matches(|c: char| !c.is_alphanumeric() && c != '\'');
            if !word.is_empty() {
                *counts.entry(word).or_insert(0) += 1;
            }
        }
    }
    let mut ranked: Vec<(&str, u64)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked
        .into_iter()
        .take(limit)
        .map(|(w, _)| w.to_string())
        .collect()
}

fn derive_seed(base: u64, parts: [u64; 3]) -> u64 {
    let mut state = base ^ 0x9e37_79b9_7f4a_7c15;
    for p in parts {
        state = state.wrapping_add(p).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        state ^= state >> 27;
        state = state.wrapping_mul(0x94d0_49bb_1331_11eb);
        state ^= state >> 31;
    }
    state
}

fn build_seed(author: AuthorId, seed_vocab: &[String], rng: &mut impl Rng) -> Seed {
    if seed_vocab.is_empty() {
        return Seed::tag_only(author);
    }
    let extra = rng.gen_range(0..=2usize);
    let words = (0..extra)
        .map(|_| seed_vocab[rng.gen_range(0..seed_vocab.len())].clone())
        .collect();
    Seed {
        author,
        extra_tokens: words,
    }
}

const RETRIES_PER_ITEM: u32 = 10;

/// Generates exactly `plan` accepted sentences per author, retrying rejected
/// generations with fresh RNG draws. Items are independent: the RNG stream of
/// item `i` derives from `(config.rng_seed, author, i, attempt)`, so parallel
/// and serial runs agree. An exhausted retry budget yields a partial set with
/// a warning.
pub fn generate_batch(
    generator: &StyleGenerator,
    plan: &GenerationPlan,
    seed_vocab: &[String],
    config: &GenerationConfig,
) -> Result<GeneratedSet> {
    struct ItemOutcome {
        sentence: Option<GeneratedSentence>,
        attempts: u64,
        rejections: Vec<&'static str>,
    }

    let jobs: Vec<(AuthorId, usize)> = AuthorId::all()
        .flat_map(|a| (0..plan.per_author[a.index()]).map(move |i| (a, i)))
        .collect();

    let outcomes: Vec<Result<ItemOutcome>> = jobs
        .par_iter()
        .map(|&(author, item)| {
            let mut rejections = Vec::new();
            for attempt in 0..RETRIES_PER_ITEM {
                let item_seed = derive_seed(
                    config.rng_seed,
                    [author.index() as u64, item as u64, attempt as u64],
                );
                let mut rng = ChaCha20Rng::seed_from_u64(item_seed);
                let seed = build_seed(author, seed_vocab, &mut rng);
                let item_config = GenerationConfig {
                    rng_seed: derive_seed(item_seed, [1, 2, 3]),
                    capture_trace: false,
                    ..*config
                };
                let raw = generate(
                    &generator.model,
                    &generator.tokenizer,
                    &generator.scheme,
                    &seed,
                    &item_config,
                )?;
                match postprocess(&raw.text, &generator.scheme) {
                    Ok(text) => {
                        return Ok(ItemOutcome {
                            sentence: Some(GeneratedSentence {
                                seed: seed.render(&generator.scheme),
                                author,
                                method: generator.method,
                                text,
                                retry_count: attempt,
                            }),
                            attempts: attempt as u64 + 1,
                            rejections,
                        });
                    }
                    Err(reason) => {
                        rejections.push(match reason {
                            super::postprocess::Rejection::Incomplete => "incomplete",
                            super::postprocess::Rejection::EmptyAfterStrip => "empty_after_strip",
                            super::postprocess::Rejection::ContainsTag => "contains_tag",
                        });
                    }
                }
            }
            Ok(ItemOutcome {
                sentence: None,
                attempts: RETRIES_PER_ITEM as u64,
                rejections,
            })
        })
        .collect();

    let mut items = Vec::with_capacity(plan.total());
    let mut report = BatchReport::default();
    for (job, outcome) in jobs.iter().zip(outcomes) {
        let outcome = outcome?;
        report.attempts += outcome.attempts;
        *report
            .per_author_attempts
            .entry(generator.scheme.name_for(job.0).to_string())
            .or_insert(0) += outcome.attempts;
        for reason in outcome.rejections {
            *report.rejections.entry(reason.to_string()).or_insert(0) += 1;
        }
        match outcome.sentence {
            Some(s) => {
                report.accepted += 1;
                items.push(s);
            }
            None => report.warnings.push(format!(
                "retry budget exhausted for {} item {}",
                generator.scheme.name_for(job.0),
                job.1
            )),
        }
    }

    let mut per_author_counts = BTreeMap::new();
    for author in AuthorId::all() {
        per_author_counts.insert(
            generator.scheme.name_for(author).to_string(),
            items.iter().filter(|s| s.author == author).count() as u64,
        );
    }
    Ok(GeneratedSet {
        items,
        method: generator.method,
        per_author_counts,
        report,
    })
}
