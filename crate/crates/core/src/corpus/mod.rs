//! Corpus ingestion: cleaning, segmentation, labeled sentence records,
//! deterministic train/test splits, and tagged training strings.

mod clean;
mod segment;

pub use clean::{clean_text, CleanConfig};
pub use segment::segment;

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::author::{AuthorId, TagScheme, AUTHOR_COUNT};
use crate::error::{Error, Result};
use crate::util;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One cleaned sentence with its author label and split assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceRecord {
    pub text: String,
    pub author: AuthorId,
    pub split: Split,
    pub source_doc: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parse: Option<String>,
    pub word_count: usize,
}

/// A raw input document attributed to one author.
#[derive(Debug, Clone)]
pub struct RawDoc {
    pub author: AuthorId,
    pub source: String,
    pub text: String,
}

#[derive(Debug, Clone)]
pub struct CorpusConfig {
    /// Sentences with fewer words are dropped.
    pub min_words: usize,
    /// Sentences with more words are dropped.
    pub max_words: usize,
    pub clean: CleanConfig,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            min_words: 3,
            max_words: 128,
            clean: CleanConfig::default(),
        }
    }
}

/// Supplies bracketed parse annotations for sentences, keyed by exact text.
pub trait ParseProvider {
    fn parse_for(&self, text: &str) -> Option<String>;
}

/// No annotations available.
pub struct NoParses;

impl ParseProvider for NoParses {
    fn parse_for(&self, _text: &str) -> Option<String> {
        None
    }
}

/// Annotations loaded from a sidecar map of sentence text to tree string.
pub struct SidecarParses(pub BTreeMap<String, String>);

impl SidecarParses {
    pub fn from_jsonl(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            text: String,
            parse: String,
        }
        let rows: Vec<Row> = util::read_jsonl(path)?;
        Ok(SidecarParses(
            rows.into_iter().map(|r| (r.text, r.parse)).collect(),
        ))
    }
}

impl ParseProvider for SidecarParses {
    fn parse_for(&self, text: &str) -> Option<String> {
        self.0.get(text).cloned()
    }
}

/// Tallies of sentences dropped during corpus construction, keyed by reason.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RejectionReport {
    pub counts: BTreeMap<String, u64>,
}

impl RejectionReport {
    fn bump(&mut self, reason: &str) {
        *self.counts.entry(reason.to_string()).or_insert(0) += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Corpus {
    pub records: Vec<SentenceRecord>,
    pub scheme: TagScheme,
    /// Source file identifier to content hash.
    pub provenance: BTreeMap<String, String>,
}

/// Per-author counts, rejection tallies, and content hashes for one build.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub total_records: u64,
    /// Author name to sentence count.
    pub per_author_counts: BTreeMap<String, u64>,
    pub per_author_test_counts: BTreeMap<String, u64>,
    pub rejections: RejectionReport,
    pub provenance: BTreeMap<String, String>,
    pub scheme_hash: String,
}

impl Corpus {
    pub fn per_author_counts(&self) -> [usize; AUTHOR_COUNT] {
        let mut counts = [0usize; AUTHOR_COUNT];
        for r in &self.records {
            counts[r.author.index()] += 1;
        }
        counts
    }

    pub fn records_for(
        &self,
        author: AuthorId,
        split: Split,
    ) -> impl Iterator<Item = &SentenceRecord> {
        self.records
            .iter()
            .filter(move |r| r.author == author && r.split == split)
    }

    pub fn split_records(&self, split: Split) -> impl Iterator<Item = &SentenceRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn manifest(&self, rejections: &RejectionReport) -> CorpusManifest {
        let mut per_author = BTreeMap::new();
        let mut per_author_test = BTreeMap::new();
        for author in AuthorId::all() {
            let name = self.scheme.name_for(author).to_string();
            per_author.insert(
                name.clone(),
                self.records.iter().filter(|r| r.author == author).count() as u64,
            );
            per_author_test.insert(name, self.records_for(author, Split::Test).count() as u64);
        }
        CorpusManifest {
            total_records: self.records.len() as u64,
            per_author_counts: per_author,
            per_author_test_counts: per_author_test,
            rejections: rejections.clone(),
            provenance: self.provenance.clone(),
            scheme_hash: scheme_hash(&self.scheme),
        }
    }

    /// Writes `corpus.jsonl` and `manifest.json` into `dir`. Identical inputs
    /// and seeds produce byte-identical files.
    pub fn save(&self, dir: &Path, rejections: &RejectionReport) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        util::write_jsonl(&dir.join("corpus.jsonl"), &self.records)?;
        util::write_json_pretty(&dir.join("manifest.json"), &self.manifest(rejections))?;
        let scheme_path = dir.join("scheme.json");
        util::write_json_pretty(&scheme_path, &self.scheme)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Corpus> {
        let records: Vec<SentenceRecord> = util::read_jsonl(&dir.join("corpus.jsonl"))?;
        let scheme: TagScheme = util::read_json(&dir.join("scheme.json"))?;
        let manifest: CorpusManifest = util::read_json(&dir.join("manifest.json"))?;
        Ok(Corpus {
            records,
            scheme,
            provenance: manifest.provenance,
        })
    }
}

pub fn scheme_hash(scheme: &TagScheme) -> String {
    util::content_hash(
        serde_json::to_string(scheme)
            .expect("scheme serializes")
            .as_bytes(),
    )
}

/// Cleans and segments `docs` into labeled records, dropping sentences outside
/// the configured length bounds and any sentence that contains a scheme tag.
pub fn build_corpus(
    docs: &[RawDoc],
    scheme: &TagScheme,
    config: &CorpusConfig,
    parses: &dyn ParseProvider,
) -> Result<(Corpus, RejectionReport)> {
    scheme.validate()?;
    for author in AuthorId::all() {
        if !docs.iter().any(|d| d.author == author) {
            return Err(Error::AuthorWithoutDocuments(
                scheme.name_for(author).to_string(),
            ));
        }
    }

    let mut records = Vec::new();
    let mut rejections = RejectionReport::default();
    let mut provenance = BTreeMap::new();

    for doc in docs {
        provenance.insert(doc.source.clone(), util::content_hash(doc.text.as_bytes()));
        let cleaned = clean_text(&doc.text, &config.clean)?;
        for sentence in segment(&cleaned) {
            let text = sentence.trim().to_string();
            if text.is_empty() {
                continue;
            }
            let words = util::word_count(&text);
            if words < config.min_words {
                rejections.bump("too_short");
                continue;
            }
            if words > config.max_words {
                rejections.bump("too_long");
                continue;
            }
            if scheme.text_contains_tag(&text) {
                rejections.bump("contains_tag");
                continue;
            }
            let parse = parses.parse_for(&text);
            records.push(SentenceRecord {
                text,
                author: doc.author,
                split: Split::Train,
                source_doc: doc.source.clone(),
                parse,
                word_count: words,
            });
        }
    }

    let corpus = Corpus {
        records,
        scheme: scheme.clone(),
        provenance,
    };
    for count in corpus.per_author_counts() {
        if count == 0 {
            return Err(Error::AuthorWithoutDocuments(
                "an author has documents but no surviving sentences".into(),
            ));
        }
    }
    Ok((corpus, rejections))
}

/// Assigns a stratified train/test split. Per author, `round(test_fraction *
/// count)` records go to the test set; the assignment is a pure function of
/// `rng_seed`.
pub fn split_corpus(mut corpus: Corpus, test_fraction: f64, rng_seed: u64) -> Result<Corpus> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "test_fraction must be in (0, 1), got {test_fraction}"
        )));
    }
    for author in AuthorId::all() {
        let indices: Vec<usize> = corpus
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.author == author)
            .map(|(i, _)| i)
            .collect();
        let mut shuffled = indices.clone();
        let mut rng = ChaCha20Rng::seed_from_u64(rng_seed.wrapping_add(author.index() as u64));
        shuffled.shuffle(&mut rng);
        let n_test = (test_fraction * indices.len() as f64).round() as usize;
        for (rank, &idx) in shuffled.iter().enumerate() {
            corpus.records[idx].split = if rank < n_test {
                Split::Test
            } else {
                Split::Train
            };
        }
    }
    Ok(corpus)
}

/// Renders the training string `"<tag> text <end>"`.
pub fn format_example(record: &SentenceRecord, scheme: &TagScheme) -> String {
    format!(
        "{} {} {}",
        scheme.tag_for(record.author),
        record.text,
        scheme.end_tag
    )
}

/// Inverse of [`format_example`]: removes the leading author tag and the
/// trailing end tag.
pub fn strip_tags(formatted: &str, scheme: &TagScheme) -> String {
    let mut s = formatted.trim();
    for tag in &scheme.tags {
        if let Some(rest) = s.strip_prefix(tag.as_str()) {
            s = rest.trim_start();
            break;
        }
    }
    if let Some(rest) = s.strip_suffix(scheme.end_tag.as_str()) {
        s = rest.trim_end();
    }
    s.to_string()
}
