//! Style detector: classifier training on real sentences, agreement
//! evaluation of generated sentences, and confidence-filtered accuracy.

mod evaluate;
mod train;

pub use evaluate::{
    agreement_matrix, confidence_filter, confusion_matrix, macro_f1, macro_f1_from_confusion,
    AgreementMatrix, AuthorFilterStats, EvaluationOutcome, FilteredReport,
};
pub use train::{train_detector, DetectorHyper, DetectorReport};

use serde::{Deserialize, Serialize};

use crate::author::{AuthorId, TagScheme, AUTHOR_COUNT};
use crate::backend::model::{Capture, ModelKind, ReferenceModel};
use crate::backend::tensor::softmax;
use crate::backend::tokenizer::Tokenizer;
use crate::error::{Error, Result};

/// Default confidence threshold for filtered evaluation.
pub const CONFIDENCE_THRESHOLD: f64 = 0.93;

/// Softmax scores for one sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub probs: [f64; AUTHOR_COUNT],
    pub predicted: AuthorId,
    pub confidence: f64,
    /// True when the argmax was tied and broken toward the lowest index.
    pub tie: bool,
}

/// One classified sentence together with its expected author.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub sentence_id: String,
    pub probs: [f64; AUTHOR_COUNT],
    pub predicted: AuthorId,
    pub confidence: f64,
    pub expected: AuthorId,
}

impl Prediction {
    pub fn correct(&self) -> bool {
        self.predicted == self.expected
    }
}

/// Argmax with ties broken toward the lowest author index.
pub fn scores_from_probs(probs: [f64; AUTHOR_COUNT]) -> ClassScores {
    let mut best = 0;
    let mut tie = false;
    for (i, &p) in probs.iter().enumerate().skip(1) {
        if p > probs[best] {
            best = i;
            tie = false;
        } else if p == probs[best] {
            tie = true;
        }
    }
    ClassScores {
        probs,
        predicted: AuthorId(best as u8),
        confidence: probs[best],
        tie,
    }
}

/// Scores straight from raw logits.
pub fn scores_from_logits(logits: &[f64]) -> ClassScores {
    let probs_vec = softmax(logits);
    let mut probs = [0.0; AUTHOR_COUNT];
    probs.copy_from_slice(&probs_vec);
    scores_from_probs(probs)
}

/// Classifies sentences by author; keeps evaluation independent of the
/// concrete backend.
pub trait StyleClassifier {
    fn classify(&self, sentence: &str) -> Result<ClassScores>;
}

/// A trained classifier bundled with its tokenizer.
#[derive(Debug, Clone)]
pub struct Detector {
    pub model: ReferenceModel,
    pub tokenizer: Tokenizer,
    pub scheme: TagScheme,
}

impl Detector {
    pub fn new(model: ReferenceModel, tokenizer: Tokenizer, scheme: TagScheme) -> Result<Detector> {
        if model.config.kind != ModelKind::Classifier || model.config.classes != AUTHOR_COUNT {
            return Err(Error::InvalidConfig(
                "detector needs a 5-way classifier model".into(),
            ));
        }
        Ok(Detector {
            model,
            tokenizer,
            scheme,
        })
    }

    fn encode_clipped(&self, sentence: &str) -> Result<Vec<u32>> {
        if sentence.trim().is_empty() {
            return Err(Error::EmptySentence);
        }
        let mut ids = self.tokenizer.encode(sentence);
        ids.truncate(self.model.config.context);
        Ok(ids)
    }

    /// Wraps a classified sentence with its expected label for reporting.
    pub fn predict(
        &self,
        sentence_id: &str,
        sentence: &str,
        expected: AuthorId,
    ) -> Result<Prediction> {
        let scores = self.classify(sentence)?;
        Ok(Prediction {
            sentence_id: sentence_id.to_string(),
            probs: scores.probs,
            predicted: scores.predicted,
            confidence: scores.confidence,
            expected,
        })
    }
}

impl StyleClassifier for Detector {
    fn classify(&self, sentence: &str) -> Result<ClassScores> {
        let ids = self.encode_clipped(sentence)?;
        let trace = self.model.forward(&ids, Capture::logits_only())?;
        let logits = trace.logits.expect("logits requested");
        Ok(scores_from_logits(logits.row(0)))
    }
}
