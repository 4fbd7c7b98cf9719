//! The versioned 16-feature registry and per-sentence extraction.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::tree::{longest_path, parse_tree_from_bracketed, pp_percentage, ParseTree};
use crate::corpus::SentenceRecord;
use crate::util;

/// The registry is versioned so downstream comparisons can detect accidental
/// feature redefinition.
pub const FEATURE_REGISTRY_VERSION: u32 = 1;

pub const FEATURE_NAMES: [&str; 16] = [
    "words_per_sentence",
    "pp_percentage",
    "longest_parse_path",
    "sentence_length_chars",
    "clause_count",
    "np_percentage",
    "vp_percentage",
    "adjp_percentage",
    "advp_percentage",
    "sbar_percentage",
    "mean_branching_factor",
    "tree_node_count",
    "preterminal_count",
    "comma_count",
    "quote_count",
    "type_token_ratio",
];

/// Stable digest over the registry version and ordered feature names.
pub fn registry_hash() -> String {
    let joined = format!("v{FEATURE_REGISTRY_VERSION}:{}", FEATURE_NAMES.join(","));
    util::content_hash(joined.as_bytes())
}

/// Feature name to value. Tree-derived features are absent for records
/// without a parse annotation.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: BTreeMap<String, f64>,
}

impl FeatureVector {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.get(name).copied()
    }
}

fn is_quote(c: char) -> bool {
    matches!(
        c,
        '"' | '\u{201c}' | '\u{201d}' | '\u{2018}' | '\u{2019}' | '\u{00ab}' | '\u{00bb}'
    )
}

fn phrasal_percentage(tree: &ParseTree, label: &str) -> f64 {
    let mut phrasal = 0u64;
    let mut hits = 0u64;
    tree.walk(&mut |node| {
        if node.is_phrasal() {
            phrasal += 1;
            if node.base_label() == Some(label) {
                hits += 1;
            }
        }
    });
    if phrasal == 0 {
        0.0
    } else {
        100.0 * hits as f64 / phrasal as f64
    }
}

fn tree_features(tree: &ParseTree, out: &mut BTreeMap<String, f64>) {
    out.insert("longest_parse_path".into(), longest_path(tree) as f64);
    out.insert("pp_percentage".into(), pp_percentage(tree));
    out.insert("np_percentage".into(), phrasal_percentage(tree, "NP"));
    out.insert("vp_percentage".into(), phrasal_percentage(tree, "VP"));
    out.insert("adjp_percentage".into(), phrasal_percentage(tree, "ADJP"));
    out.insert("advp_percentage".into(), phrasal_percentage(tree, "ADVP"));
    out.insert("sbar_percentage".into(), phrasal_percentage(tree, "SBAR"));

    let clause_labels: BTreeSet<&str> = ["S", "SBAR", "SBARQ", "SINV", "SQ"].into();
    let mut clauses = 0u64;
    let mut nodes = 0u64;
    let mut preterminals = 0u64;
    let mut internal = 0u64;
    let mut child_sum = 0u64;
    tree.walk(&mut |node| {
        nodes += 1;
        if node.is_preterminal() {
            preterminals += 1;
        }
        if !node.is_leaf() {
            internal += 1;
            child_sum += node.children().len() as u64;
        }
        if node.is_phrasal() && node.base_label().is_some_and(|l| clause_labels.contains(l)) {
            clauses += 1;
        }
    });
    out.insert("clause_count".into(), clauses as f64);
    out.insert("tree_node_count".into(), nodes as f64);
    out.insert("preterminal_count".into(), preterminals as f64);
    out.insert(
        "mean_branching_factor".into(),
        if internal == 0 {
            0.0
        } else {
            child_sum as f64 / internal as f64
        },
    );
}

/// Computes the registry features for one record. Text-derived features are
/// always present; the tree-derived ones require a well-formed parse
/// annotation and are otherwise absent.
pub fn feature_vector(record: &SentenceRecord) -> FeatureVector {
    let text = record.text.as_str();
    let mut values: BTreeMap<String, f64> = BTreeMap::new();

    values.insert("words_per_sentence".into(), util::word_count(text) as f64);
    values.insert("sentence_length_chars".into(), text.chars().count() as f64);
    values.insert(
        "comma_count".into(),
        text.chars().filter(|&c| c == ',').count() as f64,
    );
    values.insert(
        "quote_count".into(),
        text.chars().filter(|&c| is_quote(c)).count() as f64,
    );

    let words: Vec<String> = text
        .split_whitespace()
        .filter(|tok| tok.chars().any(|c| c.is_alphanumeric()))
        .map(|tok| {
            tok.trim_matches(|c: char| !c.is_alphanumeric() && c != '\'')
                .to_lowercase()
        })
        .collect();
    let distinct: BTreeSet<&String> = words.iter().collect();
    values.insert(
        "type_token_ratio".into(),
        if words.is_empty() {
            0.0
        } else {
            distinct.len() as f64 / words.len() as f64
        },
    );

    if let Some(parse) = &record.parse {
        if let Ok(tree) = parse_tree_from_bracketed(parse) {
            tree_features(&tree, &mut values);
        }
    }
    FeatureVector { values }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::author::AuthorId;
    use crate::corpus::Split;

    fn record(text: &str, parse: Option<&str>) -> SentenceRecord {
        SentenceRecord {
            text: text.to_string(),
            author: AuthorId(0),
            split: Split::Train,
            source_doc: "t".into(),
            parse: parse.map(str::to_string),
            word_count: util::word_count(text),
        }
    }

    #[test]
    fn words_per_sentence_excludes_punctuation_tokens() {
        let fv = feature_vector(&record("She sat down again.", None));
        assert_eq!(fv.get("words_per_sentence"), Some(4.0));
    }

    #[test]
    fn treeless_records_lack_tree_features() {
        let fv = feature_vector(&record("No parse here.", None));
        assert_eq!(fv.get("longest_parse_path"), None);
        assert_eq!(fv.get("pp_percentage"), None);
        assert!(fv.get("sentence_length_chars").is_some());
        assert!(fv.get("type_token_ratio").is_some());
        // Exactly the text-derived subset is present.
        assert_eq!(fv.values.len(), 5);
    }

    #[test]
    fn full_vector_has_all_sixteen_features() {
        let fv = feature_vector(&record(
            "The dog ran over the lazy fence.",
            Some("(S (NP (DT The) (NN dog)) (VP (VBD ran) (PP (IN over) (NP (DT the) (JJ lazy) (NN fence)))))"),
        ));
        for name in FEATURE_NAMES {
            assert!(fv.get(name).is_some(), "missing {name}");
            assert!(fv.get(name).unwrap().is_finite());
        }
        assert_eq!(fv.values.len(), 16);
    }

    #[test]
    fn extraction_is_deterministic() {
        let rec = record(
            "A small test, with \"quotes\" and words.",
            Some("(S (NP (DT A) (NN test)) (VP (VBD ran)))"),
        );
        assert_eq!(feature_vector(&rec), feature_vector(&rec));
    }

    #[test]
    fn registry_hash_is_pinned() {
        // Guards against accidental feature renames/reordering.
        assert_eq!(registry_hash(), "ac1c9a6e213d60b5");
        assert_eq!(FEATURE_NAMES.len(), 16);
    }

    #[test]
    fn counts_and_ratios() {
        let fv = feature_vector(&record("the the dog, \u{201c}barked\u{201d}, twice,", None));
        assert_eq!(fv.get("comma_count"), Some(3.0));
        assert_eq!(fv.get("quote_count"), Some(2.0));
        // words: the, the, dog, barked, twice -> 4 distinct of 5.
        assert_eq!(fv.get("type_token_ratio"), Some(0.8));
    }

    #[test]
    fn malformed_parse_degrades_to_text_features() {
        let fv = feature_vector(&record("Bad parse here.", Some("((")));
        assert_eq!(fv.get("longest_parse_path"), None);
        assert_eq!(fv.values.len(), 5);
    }
}
