//! Training objectives and the batched optimizer step.

use std::collections::BTreeMap;

use rayon::prelude::*;

use super::model::{accumulate, BackwardOpts, ForwardInput, Gradients, ModelKind, ReferenceModel};
use super::optim::{AdamHyper, AdamState};
use super::tensor::{log_sum_exp, softmax, Mat};
use super::tokenizer::TokenId;
use crate::error::{Error, Result};

/// One training batch. The variant selects the objective: next-token
/// cross-entropy for causal models, label cross-entropy for classifiers.
#[derive(Debug, Clone)]
pub enum Batch {
    NextToken(Vec<Vec<TokenId>>),
    ClassLabel(Vec<(Vec<TokenId>, u8)>),
}

impl Batch {
    pub fn len(&self) -> usize {
        match self {
            Batch::NextToken(seqs) => seqs.len(),
            Batch::ClassLabel(items) => items.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Mean next-token loss over one sequence, with gradients scaled by `scale`.
pub(crate) fn next_token_loss_grads(
    model: &ReferenceModel,
    ids: &[TokenId],
    scale: f64,
    param_grads: bool,
) -> Result<(f64, Gradients)> {
    if ids.len() < 2 {
        return Err(Error::InvalidConfig(
            "next-token sequence needs >= 2 tokens".into(),
        ));
    }
    let cache = model.forward_cache(ForwardInput::Ids(ids))?;
    let t_len = ids.len();
    let vocab = model.config.vocab;
    let mut d_logits = Mat::zeros(t_len, vocab);
    let mut loss = 0.0;
    for t in 0..t_len - 1 {
        let row = cache.logits.row(t);
        let target = ids[t + 1] as usize;
        let lse = log_sum_exp(row);
        loss += (lse - row[target]) * scale;
        let d_row = d_logits.row_mut(t);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = row.iter().map(|v| (v - max).exp()).sum();
        for (j, d) in d_row.iter_mut().enumerate() {
            *d = (row[j] - max).exp() / denom * scale;
        }
        d_row[target] -= scale;
    }
    let grads = model.backward(
        &cache,
        &d_logits,
        BackwardOpts {
            param_grads,
            input_grads: false,
        },
    );
    Ok((loss, grads))
}

/// Class cross-entropy for one labeled sequence, scaled by `scale`.
pub(crate) fn class_loss_grads(
    model: &ReferenceModel,
    ids: &[TokenId],
    label: usize,
    scale: f64,
    param_grads: bool,
) -> Result<(f64, Gradients)> {
    if label >= model.config.classes {
        return Err(Error::InvalidConfig(format!(
            "label {label} outside classes"
        )));
    }
    let cache = model.forward_cache(ForwardInput::Ids(ids))?;
    let row = cache.logits.row(0);
    let lse = log_sum_exp(row);
    let loss = (lse - row[label]) * scale;
    let probs = softmax(row);
    let mut d_logits = Mat::zeros(1, model.config.classes);
    for (j, d) in d_logits.row_mut(0).iter_mut().enumerate() {
        *d = probs[j] * scale;
    }
    *d_logits.row_mut(0).get_mut(label).unwrap() -= scale;
    let grads = model.backward(
        &cache,
        &d_logits,
        BackwardOpts {
            param_grads,
            input_grads: false,
        },
    );
    Ok((loss, grads))
}

/// Runs one optimizer step over `batch` and returns the mean loss (per token
/// for next-token batches, per example for labeled batches). Only trainable
/// parameters change: all of them under full fine-tuning, adapters only when
/// LoRA is attached.
pub fn train_step(
    model: &mut ReferenceModel,
    batch: &Batch,
    state: &mut AdamState,
    hyper: &AdamHyper,
) -> Result<f64> {
    let parts: Vec<Result<(f64, Gradients)>> = match batch {
        Batch::NextToken(seqs) => {
            if model.config.kind != ModelKind::CausalLm {
                return Err(Error::InvalidConfig(
                    "next-token batch needs a causal model".into(),
                ));
            }
            let total: usize = seqs.iter().map(|s| s.len().saturating_sub(1)).sum();
            if total == 0 {
                return Err(Error::InvalidConfig(
                    "batch has no predictable tokens".into(),
                ));
            }
            let scale = 1.0 / total as f64;
            seqs.par_iter()
                .map(|ids| next_token_loss_grads(model, ids, scale, true))
                .collect()
        }
        Batch::ClassLabel(items) => {
            if model.config.kind != ModelKind::Classifier {
                return Err(Error::InvalidConfig(
                    "labeled batch needs a classifier".into(),
                ));
            }
            if items.is_empty() {
                return Err(Error::InvalidConfig("empty batch".into()));
            }
            let scale = 1.0 / items.len() as f64;
            items
                .par_iter()
                .map(|(ids, label)| class_loss_grads(model, ids, *label as usize, scale, true))
                .collect()
        }
    };

    // Ordered reduction keeps results identical under any thread count.
    let mut iter = parts.into_iter();
    let (mut loss, mut total) = iter.next().expect("non-empty batch")?;
    for part in iter {
        let (l, g) = part?;
        loss += l;
        accumulate(&mut total, &g);
    }
    if !loss.is_finite() {
        return Err(Error::Divergence(format!(
            "non-finite loss {loss} at optimizer step {}",
            state.step_count() + 1
        )));
    }

    apply_updates(model, total, state, hyper);
    Ok(loss)
}

fn apply_updates(
    model: &mut ReferenceModel,
    grads: Gradients,
    state: &mut AdamState,
    hyper: &AdamHyper,
) {
    state.begin_step();
    if let Some(base) = grads.base {
        let mut by_name: BTreeMap<String, Mat> = BTreeMap::new();
        base.visit(|name, mat| {
            by_name.insert(name, mat.clone());
        });
        model.params.visit_mut(|name, mat| {
            let grad = by_name.get(&name).expect("gradient tensor present");
            state.update_tensor(&name, hyper, &mut mat.data, &grad.data);
        });
    }
    if let Some(lora) = grads.lora {
        let mut by_name: BTreeMap<String, Mat> = BTreeMap::new();
        lora.visit(|name, mat| {
            by_name.insert(name, mat.clone());
        });
        if let Some(model_lora) = model.lora.as_mut() {
            model_lora.visit_mut(|name, mat| {
                let grad = by_name.get(&name).expect("gradient tensor present");
                state.update_tensor(&name, hyper, &mut mat.data, &grad.data);
            });
        }
    }
}

/// Mean loss over `batch` without updating anything.
pub fn batch_loss(model: &ReferenceModel, batch: &Batch) -> Result<f64> {
    let losses: Vec<Result<f64>> = match batch {
        Batch::NextToken(seqs) => {
            let total: usize = seqs.iter().map(|s| s.len().saturating_sub(1)).sum();
            let scale = 1.0 / total.max(1) as f64;
            seqs.par_iter()
                .map(|ids| next_token_loss_grads_value_only(model, ids, scale))
                .collect()
        }
        Batch::ClassLabel(items) => {
            let scale = 1.0 / items.len().max(1) as f64;
            items
                .par_iter()
                .map(|(ids, label)| {
                    let cache = model.forward_cache(ForwardInput::Ids(ids))?;
                    let row = cache.logits.row(0);
                    Ok((log_sum_exp(row) - row[*label as usize]) * scale)
                })
                .collect()
        }
    };
    losses.into_iter().sum()
}

fn next_token_loss_grads_value_only(
    model: &ReferenceModel,
    ids: &[TokenId],
    scale: f64,
) -> Result<f64> {
    if ids.len() < 2 {
        return Err(Error::InvalidConfig(
            "next-token sequence needs >= 2 tokens".into(),
        ));
    }
    let cache = model.forward_cache(ForwardInput::Ids(ids))?;
    let mut loss = 0.0;
    for t in 0..ids.len() - 1 {
        let row = cache.logits.row(t);
        loss += (log_sum_exp(row) - row[ids[t + 1] as usize]) * scale;
    }
    Ok(loss)
}
