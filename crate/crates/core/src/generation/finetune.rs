//! Full fine-tuning and LoRA fine-tuning of the causal backend on tagged
//! sentences.

use serde::{Deserialize, Serialize};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::author::TagScheme;
use crate::backend::model::{LoraConfig, ModelKind, ReferenceModel};
use crate::backend::optim::{AdamHyper, AdamState};
use crate::backend::tokenizer::{TokenId, Tokenizer};
use crate::backend::train::{train_step, Batch};
use crate::corpus::{format_example, Corpus, Split};
use crate::error::{Error, Result};
use crate::AuthorId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FineTuneMethod {
    Fft,
    Lora,
}

impl std::fmt::Display for FineTuneMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FineTuneMethod::Fft => "fft",
            FineTuneMethod::Lora => "lora",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineTuneHyper {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamHyper,
    pub lora: LoraConfig,
    pub shuffle_seed: u64,
}

impl Default for FineTuneHyper {
    fn default() -> Self {
        FineTuneHyper {
            epochs: 3,
            batch_size: 16,
            adam: AdamHyper::with_lr(3e-3),
            lora: LoraConfig::default(),
            shuffle_seed: 0,
        }
    }
}

/// Loss curve and parameter accounting from one fine-tuning run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingReport {
    pub method: FineTuneMethod,
    pub epochs: usize,
    pub steps: u64,
    pub epoch_losses: Vec<f64>,
    pub total_parameters: usize,
    pub trainable_parameters: usize,
    pub sequences: usize,
    pub skipped_too_long: usize,
}

/// A fine-tuned causal model bundled with its tokenizer and tag scheme.
#[derive(Debug, Clone)]
pub struct StyleGenerator {
    pub model: ReferenceModel,
    pub tokenizer: Tokenizer,
    pub scheme: TagScheme,
    pub method: FineTuneMethod,
}

fn encoded_sequences(
    texts: impl Iterator<Item = String>,
    tokenizer: &Tokenizer,
    context: usize,
) -> (Vec<Vec<TokenId>>, usize) {
    let mut seqs = Vec::new();
    let mut skipped = 0;
    for text in texts {
        let ids = tokenizer.encode(&text);
        if ids.len() < 2 {
            continue;
        }
        if ids.len() > context {
            skipped += 1;
            continue;
        }
        seqs.push(ids);
    }
    (seqs, skipped)
}

fn run_epochs(
    model: &mut ReferenceModel,
    sequences: &[Vec<TokenId>],
    hyper: &FineTuneHyper,
) -> Result<(Vec<f64>, u64)> {
    let mut state = AdamState::new();
    let mut epoch_losses = Vec::with_capacity(hyper.epochs);
    let mut order: Vec<usize> = (0..sequences.len()).collect();
    for epoch in 0..hyper.epochs {
        let mut rng = ChaCha20Rng::seed_from_u64(hyper.shuffle_seed.wrapping_add(epoch as u64));
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(hyper.batch_size.max(1)) {
            let batch = Batch::NextToken(chunk.iter().map(|&i| sequences[i].clone()).collect());
            loss_sum += train_step(model, &batch, &mut state, &hyper.adam)?;
            batches += 1;
        }
        epoch_losses.push(loss_sum / batches.max(1) as f64);
    }
    Ok((epoch_losses, state.step_count()))
}

/// Next-token pretraining on untagged train-split sentences. Gives LoRA a
/// meaningful frozen base at desk scale, standing in for a pretrained
/// checkpoint.
pub fn pretrain_base(
    model: &mut ReferenceModel,
    corpus: &Corpus,
    tokenizer: &Tokenizer,
    hyper: &FineTuneHyper,
) -> Result<TrainingReport> {
    if model.config.kind != ModelKind::CausalLm {
        return Err(Error::InvalidConfig(
            "pretraining needs a causal model".into(),
        ));
    }
    let (sequences, skipped) = encoded_sequences(
        corpus.split_records(Split::Train).map(|r| r.text.clone()),
        tokenizer,
        model.config.context,
    );
    if sequences.is_empty() {
        return Err(Error::InvalidConfig("no training sequences".into()));
    }
    let (epoch_losses, steps) = run_epochs(model, &sequences, hyper)?;
    Ok(TrainingReport {
        method: FineTuneMethod::Fft,
        epochs: hyper.epochs,
        steps,
        epoch_losses,
        total_parameters: model.parameter_count(),
        trainable_parameters: model.trainable_parameter_count(),
        sequences: sequences.len(),
        skipped_too_long: skipped,
    })
}

/// Fine-tunes `base` on `"<tag> sentence <end>"` strings from the train split.
/// FFT trains every parameter; LoRA freezes the base and trains adapters.
pub fn fine_tune(
    base: &ReferenceModel,
    tokenizer: &Tokenizer,
    train: &Corpus,
    method: FineTuneMethod,
    hyper: &FineTuneHyper,
) -> Result<(StyleGenerator, TrainingReport)> {
    if base.config.kind != ModelKind::CausalLm {
        return Err(Error::InvalidConfig(
            "fine-tuning needs a causal model".into(),
        ));
    }
    for author in AuthorId::all() {
        if train.records_for(author, Split::Train).next().is_none() {
            return Err(Error::AuthorWithoutDocuments(
                train.scheme.name_for(author).to_string(),
            ));
        }
    }
    // The scheme tags must each be a single vocabulary token.
    for tag in train.scheme.all_tags() {
        tokenizer.tag_id(tag)?;
    }

    let mut model = base.clone();
    model.lora = None;
    if method == FineTuneMethod::Lora {
        model = model.with_lora(hyper.lora.clone(), hyper.shuffle_seed.wrapping_add(0x10ad))?;
    }

    let (sequences, skipped) = encoded_sequences(
        train
            .split_records(Split::Train)
            .map(|r| format_example(r, &train.scheme)),
        tokenizer,
        model.config.context,
    );
    if sequences.is_empty() {
        return Err(Error::InvalidConfig("no training sequences".into()));
    }

    let (epoch_losses, steps) = run_epochs(&mut model, &sequences, hyper)?;
    let report = TrainingReport {
        method,
        epochs: hyper.epochs,
        steps,
        epoch_losses,
        total_parameters: model.parameter_count(),
        trainable_parameters: model.trainable_parameter_count(),
        sequences: sequences.len(),
        skipped_too_long: skipped,
    };
    let generator = StyleGenerator {
        model,
        tokenizer: tokenizer.clone(),
        scheme: train.scheme.clone(),
        method,
    };
    Ok((generator, report))
}
