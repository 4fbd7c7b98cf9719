//! Integrated gradients over input token embeddings, with the completeness
//! gap tracked for every run.

use serde::{Deserialize, Serialize};

use crate::backend::model::{LogitTarget, ReferenceModel};
use crate::backend::tensor::Mat;
use crate::error::{Error, Result};
use crate::generation::RawGeneration;

/// A scalar function of the input embeddings with an exact gradient.
pub trait DifferentiableTarget: Sync {
    fn value_and_grad(&self, embeddings: &Mat) -> Result<(f64, Mat)>;

    fn value(&self, embeddings: &Mat) -> Result<f64> {
        Ok(self.value_and_grad(embeddings)?.0)
    }
}

/// A logit-derived target evaluated through the reference model.
pub struct ModelTarget<'a> {
    pub model: &'a ReferenceModel,
    pub target: LogitTarget,
}

impl DifferentiableTarget for ModelTarget<'_> {
    fn value_and_grad(&self, embeddings: &Mat) -> Result<(f64, Mat)> {
        self.model.value_and_input_grad(embeddings, self.target)
    }

    fn value(&self, embeddings: &Mat) -> Result<f64> {
        self.model.value_at(embeddings, self.target)
    }
}

/// Which embedding rows the baseline zeroes; the rest keep their actual
/// values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaselineSpec {
    pub zero_positions: Vec<usize>,
}

impl BaselineSpec {
    /// Zero the prompt rows `0..prompt_len`.
    pub fn zero_prompt(prompt_len: usize) -> BaselineSpec {
        BaselineSpec {
            zero_positions: (0..prompt_len).collect(),
        }
    }

    /// Zero every row (whole-sentence baseline for classifier attribution).
    pub fn zero_all(len: usize) -> BaselineSpec {
        BaselineSpec {
            zero_positions: (0..len).collect(),
        }
    }

    pub fn build(&self, embeddings: &Mat) -> Mat {
        let mut baseline = embeddings.clone();
        for &pos in &self.zero_positions {
            if pos < baseline.rows {
                baseline.row_mut(pos).fill(0.0);
            }
        }
        baseline
    }
}

/// Per-dimension attributions `[T, embed_dim]` plus the bookkeeping needed to
/// audit them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IgResult {
    pub attributions: Mat,
    pub steps: usize,
    pub value_input: f64,
    pub value_baseline: f64,
    /// `|sum(attributions) - (f(e) - f(e'))|`.
    pub completeness_gap: f64,
}

impl IgResult {
    pub fn attribution_sum(&self) -> f64 {
        self.attributions.data.iter().sum()
    }

    /// Gap relative to `|f(e) - f(e')|`.
    pub fn relative_gap(&self) -> f64 {
        let delta = (self.value_input - self.value_baseline).abs();
        if delta == 0.0 {
            self.completeness_gap
        } else {
            self.completeness_gap / delta
        }
    }
}

/// Midpoint-rule integrated gradients from `baseline` to `embeddings`:
/// `IG = (e - e') * mean_s grad f(e' + alpha_s (e - e'))` with
/// `alpha_s = (s + 0.5) / steps`.
pub fn integrated_gradients(
    target: &dyn DifferentiableTarget,
    embeddings: &Mat,
    baseline: &Mat,
    steps: usize,
) -> Result<IgResult> {
    if steps == 0 {
        return Err(Error::InvalidConfig(
            "integrated gradients needs steps >= 1".into(),
        ));
    }
    if embeddings.rows != baseline.rows || embeddings.cols != baseline.cols {
        return Err(Error::ShapeMismatch(
            "baseline shape differs from input".into(),
        ));
    }
    let mut grad_sum = Mat::zeros(embeddings.rows, embeddings.cols);
    let mut point = Mat::zeros(embeddings.rows, embeddings.cols);
    for s in 0..steps {
        let alpha = (s as f64 + 0.5) / steps as f64;
        for i in 0..point.data.len() {
            point.data[i] = baseline.data[i] + alpha * (embeddings.data[i] - baseline.data[i]);
        }
        let (_, grad) = target.value_and_grad(&point)?;
        if grad.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalFailure { alpha });
        }
        grad_sum.add_assign(&grad);
    }
    let mut attributions = Mat::zeros(embeddings.rows, embeddings.cols);
    for i in 0..attributions.data.len() {
        attributions.data[i] =
            (embeddings.data[i] - baseline.data[i]) * grad_sum.data[i] / steps as f64;
    }
    let value_input = target.value(embeddings)?;
    let value_baseline = target.value(baseline)?;
    let sum: f64 = attributions.data.iter().sum();
    let completeness_gap = (sum - (value_input - value_baseline)).abs();
    Ok(IgResult {
        attributions,
        steps,
        value_input,
        value_baseline,
        completeness_gap,
    })
}

/// Collapses per-dimension attributions to one non-negative importance per
/// prompt token via the L2 norm across embedding dimensions.
pub fn token_attributions(ig: &Mat, prompt_span: std::ops::Range<usize>) -> Vec<f64> {
    prompt_span
        .map(|i| ig.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect()
}

/// IG importance of each prompt token (rows) for each generated token
/// (columns), with a completeness gap recorded per column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionMatrix {
    /// `[prompt_len, generated_len]`.
    pub values: Mat,
    pub steps: usize,
    pub completeness_gaps: Vec<f64>,
    /// Prompt token surface strings for labeling.
    pub prompt_tokens: Vec<String>,
    /// Generated token surface strings.
    pub generated_tokens: Vec<String>,
}

/// For each generated token, attributes its log-probability back to the
/// prompt tokens. The baseline zeroes prompt-position embeddings only.
pub fn tag_attribution_heatmap(
    model: &ReferenceModel,
    tokenizer: &crate::backend::Tokenizer,
    generation: &RawGeneration,
    steps: usize,
) -> Result<AttributionMatrix> {
    let ids = &generation.token_ids;
    let prompt_len = generation.prompt_len;
    if prompt_len == 0 || ids.len() <= prompt_len {
        return Err(Error::InvalidConfig(
            "generation has no generated tokens".into(),
        ));
    }
    let gen_len = ids.len() - prompt_len;
    let mut values = Mat::zeros(prompt_len, gen_len);
    let mut gaps = Vec::with_capacity(gen_len);
    for j in 0..gen_len {
        let pos = prompt_len + j;
        // Causal model: the distribution for token `pos` is read at `pos - 1`
        // over the prefix, so the pass only needs the first `pos` tokens.
        let prefix = &ids[..pos];
        let embeddings = model.token_embeddings(prefix)?;
        let baseline = BaselineSpec::zero_prompt(prompt_len).build(&embeddings);
        let target = ModelTarget {
            model,
            target: LogitTarget::LogProb {
                position: pos - 1,
                token: ids[pos],
            },
        };
        let ig = integrated_gradients(&target, &embeddings, &baseline, steps)?;
        let column = token_attributions(&ig.attributions, 0..prompt_len);
        for (i, v) in column.into_iter().enumerate() {
            values.set(i, j, v);
        }
        gaps.push(ig.completeness_gap);
    }
    Ok(AttributionMatrix {
        values,
        steps,
        completeness_gaps: gaps,
        prompt_tokens: ids[..prompt_len]
            .iter()
            .map(|&id| tokenizer.token(id).to_string())
            .collect(),
        generated_tokens: ids[prompt_len..]
            .iter()
            .map(|&id| tokenizer.token(id).to_string())
            .collect(),
    })
}
