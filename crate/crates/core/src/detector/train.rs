//! Classifier training with per-epoch test metrics and early stopping.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{macro_f1, Detector, Prediction};
use crate::author::AuthorId;
use crate::backend::model::{ModelKind, ReferenceModel};
use crate::backend::optim::{AdamHyper, AdamState};
use crate::backend::tokenizer::{TokenId, Tokenizer};
use crate::backend::train::{train_step, Batch};
use crate::corpus::{Corpus, Split};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorHyper {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamHyper,
    /// Early stop after this many epochs without test-accuracy improvement.
    pub patience: usize,
    pub shuffle_seed: u64,
}

impl Default for DetectorHyper {
    fn default() -> Self {
        DetectorHyper {
            epochs: 9,
            batch_size: 16,
            adam: AdamHyper::with_lr(1e-3),
            patience: 3,
            shuffle_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectorReport {
    pub epoch_losses: Vec<f64>,
    pub epoch_accuracy: Vec<f64>,
    pub epoch_f1: Vec<f64>,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub train_sequences: usize,
    pub test_sequences: usize,
}

fn labeled_sequences(
    corpus: &Corpus,
    tokenizer: &Tokenizer,
    split: Split,
    context: usize,
) -> Vec<(Vec<TokenId>, u8)> {
    corpus
        .split_records(split)
        .filter_map(|r| {
            let mut ids = tokenizer.encode(&r.text);
            ids.truncate(context);
            (!ids.is_empty()).then_some((ids, r.author.0))
        })
        .collect()
}

/// Evaluates test-split accuracy and macro F1 for the current weights.
fn test_metrics(detector: &Detector, corpus: &Corpus) -> Result<(f64, f64, Vec<Prediction>)> {
    let records: Vec<_> = corpus.split_records(Split::Test).collect();
    let preds: Vec<Result<Prediction>> = records
        .par_iter()
        .enumerate()
        .map(|(i, r)| detector.predict(&format!("test-{i}"), &r.text, r.author))
        .collect();
    let preds: Vec<Prediction> = preds.into_iter().collect::<Result<_>>()?;
    let acc = super::evaluate::accuracy(&preds);
    Ok((acc, macro_f1(&preds), preds))
}

/// Trains the 5-way style classifier on tag-free train-split sentences,
/// tracking accuracy and macro F1 on the test split each epoch. Stops at
/// `hyper.epochs` or when accuracy fails to improve for `hyper.patience`
/// epochs, and keeps the best-accuracy weights.
pub fn train_detector(
    model: ReferenceModel,
    tokenizer: Tokenizer,
    corpus: &Corpus,
    hyper: &DetectorHyper,
) -> Result<(Detector, DetectorReport)> {
    if model.config.kind != ModelKind::Classifier {
        return Err(Error::InvalidConfig(
            "detector training needs a classifier model".into(),
        ));
    }
    for author in AuthorId::all() {
        if corpus.records_for(author, Split::Train).next().is_none() {
            return Err(Error::AuthorWithoutDocuments(
                corpus.scheme.name_for(author).to_string(),
            ));
        }
    }
    let train = labeled_sequences(corpus, &tokenizer, Split::Train, model.config.context);
    let test_count = corpus.split_records(Split::Test).count();
    if train.is_empty() {
        return Err(Error::InvalidConfig("no training sequences".into()));
    }

    let mut detector = Detector::new(model, tokenizer, corpus.scheme.clone())?;
    let mut state = AdamState::new();
    let mut report = DetectorReport {
        epoch_losses: Vec::new(),
        epoch_accuracy: Vec::new(),
        epoch_f1: Vec::new(),
        best_epoch: 0,
        stopped_early: false,
        train_sequences: train.len(),
        test_sequences: test_count,
    };
    let mut best_accuracy = f64::NEG_INFINITY;
    let mut best_model = detector.model.clone();
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..hyper.epochs {
        let mut rng = ChaCha20Rng::seed_from_u64(hyper.shuffle_seed.wrapping_add(epoch as u64));
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(hyper.batch_size.max(1)) {
            let batch = Batch::ClassLabel(chunk.iter().map(|&i| train[i].clone()).collect());
            loss_sum += train_step(&mut detector.model, &batch, &mut state, &hyper.adam)?;
            batches += 1;
        }
        report.epoch_losses.push(loss_sum / batches.max(1) as f64);

        let (acc, f1, _) = if test_count > 0 {
            test_metrics(&detector, corpus)?
        } else {
            (0.0, 0.0, Vec::new())
        };
        report.epoch_accuracy.push(acc);
        report.epoch_f1.push(f1);
        if acc > best_accuracy {
            best_accuracy = acc;
            best_model = detector.model.clone();
            report.best_epoch = epoch;
        } else if epoch - report.best_epoch >= hyper.patience {
            report.stopped_early = true;
            break;
        }
    }

    detector.model = best_model;
    Ok((detector, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::author::TagScheme;
    use crate::backend::model::ModelConfig;
    use crate::corpus::{build_corpus, split_corpus, CorpusConfig, NoParses, RawDoc};
    use crate::detector::evaluate::{confusion_matrix, macro_f1_from_confusion};

    /// Five authors with disjoint signature words.
    fn planted_corpus(per_author: usize) -> Corpus {
        let signatures = [
            ["fog", "Oliver", "counting-house"],
            ["ballroom", "Elizabeth", "propriety"],
            ["raft", "Huck", "reckon"],
            ["garret", "Amy", "mended"],
            ["whale", "Captain", "harpoon"],
        ];
        let docs: Vec<RawDoc> = (0..5)
            .map(|a| {
                let lines: Vec<String> = (0..per_author)
                    .map(|i| {
                        let sig = signatures[a][i % 3];
                        format!("The {sig} waited near the {sig} at hour {i}.")
                    })
                    .collect();
                RawDoc {
                    author: AuthorId::new(a).unwrap(),
                    source: format!("d{a}"),
                    text: lines.join(" "),
                }
            })
            .collect();
        let (corpus, _) = build_corpus(
            &docs,
            &TagScheme::default_scheme(),
            &CorpusConfig::default(),
            &NoParses,
        )
        .unwrap();
        split_corpus(corpus, 0.25, 13).unwrap()
    }

    #[test]
    fn detector_learns_planted_signatures() {
        let corpus = planted_corpus(24);
        let texts: Vec<String> = corpus
            .split_records(Split::Train)
            .map(|r| r.text.clone())
            .collect();
        let tokenizer = Tokenizer::from_texts(texts.iter().map(|s| s.as_str()), 200);
        let model = ReferenceModel::new(
            ModelConfig::classifier(1, 2, 24, tokenizer.vocab_size(), 32, 5).with_seed(7),
        )
        .unwrap();
        let hyper = DetectorHyper {
            epochs: 9,
            batch_size: 20,
            ..Default::default()
        };
        let (detector, report) = train_detector(model, tokenizer, &corpus, &hyper).unwrap();
        let final_acc = report.epoch_accuracy[report.best_epoch];
        assert!(
            final_acc >= 0.8,
            "planted signal should be learnable, got {report:?}"
        );

        // Macro F1 cross-check against the confusion-matrix route.
        let (_, _, preds) = test_metrics(&detector, &corpus).unwrap();
        assert_eq!(
            macro_f1(&preds),
            macro_f1_from_confusion(&confusion_matrix(&preds))
        );
    }

    #[test]
    fn patience_stops_training() {
        let corpus = planted_corpus(8);
        let texts: Vec<String> = corpus
            .split_records(Split::Train)
            .map(|r| r.text.clone())
            .collect();
        let tokenizer = Tokenizer::from_texts(texts.iter().map(|s| s.as_str()), 100);
        let model = ReferenceModel::new(
            ModelConfig::classifier(1, 2, 16, tokenizer.vocab_size(), 32, 5).with_seed(1),
        )
        .unwrap();
        // Zero learning rate: accuracy can never improve after epoch 0.
        let hyper = DetectorHyper {
            epochs: 30,
            batch_size: 10,
            adam: AdamHyper::with_lr(0.0),
            patience: 3,
            shuffle_seed: 0,
        };
        let (_, report) = train_detector(model, tokenizer, &corpus, &hyper).unwrap();
        assert!(report.stopped_early);
        assert!(report.epoch_accuracy.len() <= 5);
    }
}
