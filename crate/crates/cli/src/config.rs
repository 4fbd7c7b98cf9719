//! Declarative pipeline configuration with per-stage sections. Every field
//! has a default, so a minimal file only names the input and output paths.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

fn default_test_fraction() -> f64 {
    0.2
}
fn default_min_words() -> usize {
    3
}
fn default_max_words() -> usize {
    128
}
fn default_layers() -> usize {
    2
}
fn default_heads() -> usize {
    4
}
fn default_embed_dim() -> usize {
    64
}
fn default_context() -> usize {
    64
}
fn default_vocab_words() -> usize {
    2000
}
fn default_ft_epochs() -> usize {
    3
}
fn default_batch_size() -> usize {
    16
}
fn default_ft_lr() -> f64 {
    3e-3
}
fn default_pretrain_epochs() -> usize {
    1
}
fn default_lora_rank() -> usize {
    8
}
fn default_lora_alpha() -> f64 {
    16.0
}
fn default_det_epochs() -> usize {
    9
}
fn default_det_lr() -> f64 {
    1e-3
}
fn default_patience() -> usize {
    3
}
fn default_det_embed_dim() -> usize {
    48
}
fn default_per_author() -> usize {
    50
}
fn default_temperature() -> f64 {
    0.9
}
fn default_max_new_tokens() -> usize {
    64
}
fn default_seed_words() -> usize {
    500
}
fn default_threshold() -> f64 {
    0.93
}
fn default_bins() -> usize {
    20
}
fn default_features() -> String {
    "all".to_string()
}
fn default_steps() -> usize {
    64
}
fn default_ae_samples() -> usize {
    100
}
fn default_ig_samples() -> usize {
    5
}
fn default_cls_sentences() -> usize {
    40
}
fn default_top_k() -> usize {
    25
}
fn default_backend() -> String {
    "reference".to_string()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSection {
    pub out_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_backend")]
    pub backend: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    pub input_dir: PathBuf,
    #[serde(default)]
    pub scheme: Option<PathBuf>,
    #[serde(default)]
    pub parses: Option<PathBuf>,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default = "default_min_words")]
    pub min_words: usize,
    #[serde(default = "default_max_words")]
    pub max_words: usize,
    #[serde(default)]
    pub strict_markers: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "default_layers")]
    pub layers: usize,
    #[serde(default = "default_heads")]
    pub heads: usize,
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
    #[serde(default = "default_context")]
    pub context: usize,
    #[serde(default = "default_vocab_words")]
    pub vocab_words: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            layers: default_layers(),
            heads: default_heads(),
            embed_dim: default_embed_dim(),
            context: default_context(),
            vocab_words: default_vocab_words(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneSection {
    #[serde(default = "default_ft_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_ft_lr")]
    pub lr: f64,
    #[serde(default = "default_pretrain_epochs")]
    pub pretrain_epochs: usize,
    #[serde(default = "default_lora_rank")]
    pub lora_rank: usize,
    #[serde(default = "default_lora_alpha")]
    pub lora_alpha: f64,
}

impl Default for FinetuneSection {
    fn default() -> Self {
        FinetuneSection {
            epochs: default_ft_epochs(),
            batch_size: default_batch_size(),
            lr: default_ft_lr(),
            pretrain_epochs: default_pretrain_epochs(),
            lora_rank: default_lora_rank(),
            lora_alpha: default_lora_alpha(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSection {
    #[serde(default = "default_det_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_det_lr")]
    pub lr: f64,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_layers")]
    pub layers: usize,
    #[serde(default = "default_heads")]
    pub heads: usize,
    #[serde(default = "default_det_embed_dim")]
    pub embed_dim: usize,
    #[serde(default = "default_context")]
    pub context: usize,
    #[serde(default = "default_vocab_words")]
    pub vocab_words: usize,
}

impl Default for DetectorSection {
    fn default() -> Self {
        DetectorSection {
            epochs: default_det_epochs(),
            batch_size: default_batch_size(),
            lr: default_det_lr(),
            patience: default_patience(),
            layers: default_layers(),
            heads: default_heads(),
            embed_dim: default_det_embed_dim(),
            context: default_context(),
            vocab_words: default_vocab_words(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateSection {
    #[serde(default = "default_per_author")]
    pub per_author: usize,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_new_tokens")]
    pub max_new_tokens: usize,
    #[serde(default = "default_seed_words")]
    pub seed_words: usize,
}

impl Default for GenerateSection {
    fn default() -> Self {
        GenerateSection {
            per_author: default_per_author(),
            temperature: default_temperature(),
            max_new_tokens: default_max_new_tokens(),
            seed_words: default_seed_words(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateSection {
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        EvaluateSection {
            threshold: default_threshold(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynfeatSection {
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default = "default_features")]
    pub features: String,
}

impl Default for SynfeatSection {
    fn default() -> Self {
        SynfeatSection {
            bins: default_bins(),
            features: default_features(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplainSection {
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_ae_samples")]
    pub ae_samples: usize,
    #[serde(default = "default_ig_samples")]
    pub ig_samples: usize,
    #[serde(default = "default_cls_sentences")]
    pub cls_sentences: usize,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
}

impl Default for ExplainSection {
    fn default() -> Self {
        ExplainSection {
            steps: default_steps(),
            ae_samples: default_ae_samples(),
            ig_samples: default_ig_samples(),
            cls_sentences: default_cls_sentences(),
            top_k: default_top_k(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub pipeline: PipelineSection,
    pub corpus: CorpusSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub finetune: FinetuneSection,
    #[serde(default)]
    pub detector: DetectorSection,
    #[serde(default)]
    pub generate: GenerateSection,
    #[serde(default)]
    pub evaluate: EvaluateSection,
    #[serde(default)]
    pub synfeat: SynfeatSection,
    #[serde(default)]
    pub explain: ExplainSection,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> anyhow::Result<PipelineConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
        let config: PipelineConfig = toml::from_str(&text)
            .map_err(|e| anyhow::anyhow!("cannot parse config {}: {e}", path.display()))?;
        Ok(config)
    }
}
