//! Autoregressive sampling from a single-token seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::author::{AuthorId, TagScheme};
use crate::backend::model::{Capture, ReferenceModel};
use crate::backend::tensor::softmax;
use crate::backend::tokenizer::{TokenId, Tokenizer};
use crate::backend::ForwardTrace;
use crate::error::Result;

/// A generation prompt: an author tag optionally followed by a few words.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seed {
    pub author: AuthorId,
    pub extra_tokens: Vec<String>,
}

impl Seed {
    pub fn tag_only(author: AuthorId) -> Seed {
        Seed {
            author,
            extra_tokens: Vec::new(),
        }
    }

    pub fn with_words(author: AuthorId, words: &[&str]) -> Seed {
        Seed {
            author,
            extra_tokens: words.iter().map(|w| w.to_string()).collect(),
        }
    }

    /// `"<0> When"` for Dickens with one extra word, `"<0>"` when tag-only.
    pub fn render(&self, scheme: &TagScheme) -> String {
        let tag = scheme.tag_for(self.author);
        if self.extra_tokens.is_empty() {
            tag.to_string()
        } else {
            format!("{tag} {}", self.extra_tokens.join(" "))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub temperature: f64,
    pub max_new_tokens: usize,
    pub sample: bool,
    pub rng_seed: u64,
    /// Retain a full-capture forward trace of the finished sequence.
    pub capture_trace: bool,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            temperature: 0.9,
            max_new_tokens: 64,
            sample: true,
            rng_seed: 0,
            capture_trace: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RawGeneration {
    pub seed: Seed,
    pub token_ids: Vec<TokenId>,
    /// Rendered text including the seed prefix and any sampled tags.
    pub text: String,
    /// Number of prompt tokens at the head of `token_ids`.
    pub prompt_len: usize,
    pub trace: Option<ForwardTrace>,
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn sample_index(probs: &[f64], rng: &mut impl Rng) -> usize {
    let mut dart: f64 = rng.gen_range(0.0..1.0);
    for (i, &p) in probs.iter().enumerate() {
        dart -= p;
        if dart <= 0.0 {
            return i;
        }
    }
    probs.len() - 1
}

/// Samples until the end tag or `max_new_tokens`, deterministic in
/// `config.rng_seed`. A zero temperature or `sample = false` decodes greedily.
pub fn generate(
    model: &ReferenceModel,
    tokenizer: &Tokenizer,
    scheme: &TagScheme,
    seed: &Seed,
    config: &GenerationConfig,
) -> Result<RawGeneration> {
    let rendered = seed.render(scheme);
    let mut ids = tokenizer.encode(&rendered);
    let prompt_len = ids.len();
    let end_id = tokenizer.tag_id(&scheme.end_tag)?;
    let mut rng = ChaCha20Rng::seed_from_u64(config.rng_seed);
    let budget = config
        .max_new_tokens
        .min(model.config.context.saturating_sub(prompt_len));
    let greedy = !config.sample || config.temperature == 0.0;

    for _ in 0..budget {
        let trace = model.forward(&ids, Capture::logits_only())?;
        let logits = trace.logits.expect("logits requested");
        let last = logits.row(logits.rows - 1);
        let next = if greedy {
            argmax(last) as TokenId
        } else {
            let scaled: Vec<f64> = last.iter().map(|v| v / config.temperature).collect();
            sample_index(&softmax(&scaled), &mut rng) as TokenId
        };
        ids.push(next);
        if next == end_id {
            break;
        }
    }

    let trace = if config.capture_trace {
        Some(model.forward(&ids, Capture::all())?)
    } else {
        None
    };
    Ok(RawGeneration {
        seed: seed.clone(),
        text: tokenizer.decode(&ids),
        token_ids: ids,
        prompt_len,
        trace,
    })
}
