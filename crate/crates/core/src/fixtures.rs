//! Deterministic sample corpus: five synthetic novelists with disjoint
//! character names, themes, and sentence shapes, plus aligned constituency
//! parses derived from the generating templates. Used by tests, benchmarks,
//! and demo pipelines in place of full novel texts.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::author::{AuthorId, TagScheme, AUTHOR_COUNT};
use crate::corpus::{
    build_corpus, split_corpus, Corpus, CorpusConfig, RawDoc, RejectionReport, SidecarParses,
};
use crate::error::Result;
use crate::synfeat::ParseTree;

fn pre(label: &str, word: &str) -> ParseTree {
    ParseTree::Node {
        label: label.to_string(),
        children: vec![ParseTree::Leaf {
            token: word.to_string(),
        }],
    }
}

fn node(label: &str, children: Vec<ParseTree>) -> ParseTree {
    ParseTree::Node {
        label: label.to_string(),
        children,
    }
}

struct Lexicon {
    names: &'static [&'static str],
    nouns: &'static [&'static str],
    places: &'static [&'static str],
    verbs: &'static [&'static str],
    adjectives: &'static [&'static str],
    speech_verbs: &'static [&'static str],
    exclaims: &'static [&'static str],
}

fn lexicon(author: AuthorId) -> Lexicon {
    match author.index() {
        0 => Lexicon {
            names: &["Oliver", "Pip", "Dora", "Nell", "Bumble", "Wemmick"],
            nouns: &["fog", "ledger", "coach", "fire", "shilling", "parcel"],
            places: &["street", "chambers", "marshes", "courtyard", "inn"],
            verbs: &["trudged", "pondered", "beheld", "clutched", "followed"],
            adjectives: &["dismal", "wretched", "cheerful", "smoky", "threadbare"],
            speech_verbs: &["said", "cried", "whispered", "returned"],
            exclaims: &["indeed", "bless my soul", "upon my word"],
        },
        1 => Lexicon {
            names: &[
                "Elizabeth",
                "Emma",
                "Catherine",
                "Knightley",
                "Crawford",
                "Wentworth",
            ],
            nouns: &[
                "letter",
                "ball",
                "visit",
                "fortune",
                "acquaintance",
                "engagement",
            ],
            places: &["parlour", "garden", "park", "assembly", "cottage"],
            verbs: &["danced", "remarked", "considered", "declined", "admired"],
            adjectives: &["agreeable", "prudent", "amiable", "handsome", "civil"],
            speech_verbs: &["observed", "replied", "declared", "owned"],
            exclaims: &["to be sure", "I dare say", "upon my honour"],
        },
        2 => Lexicon {
            names: &["Tom", "Huck", "Jim", "Becky", "Sid", "Joe Harper"],
            nouns: &["river", "raft", "cave", "fence", "island", "treasure"],
            places: &["woods", "sandbar", "village", "bluff", "shanty"],
            verbs: &["reckoned", "paddled", "hollered", "snuck", "loafed"],
            adjectives: &["mighty", "lazy", "muddy", "rascally", "ornery"],
            speech_verbs: &["says", "allowed", "hollered", "reckoned"],
            exclaims: &["by jings", "shucks", "dog my cats"],
        },
        3 => Lexicon {
            names: &["Amy", "Meg", "Laurie", "Beth", "Marmee", "Hannah"],
            nouns: &[
                "bundle",
                "sewing",
                "supper",
                "pickle",
                "blancmange",
                "slipper",
            ],
            places: &["garret", "parlor", "garden", "kitchen", "nursery"],
            verbs: &["mended", "bustled", "scolded", "hugged", "tidied"],
            adjectives: &["little", "tidy", "merry", "gentle", "motherly"],
            speech_verbs: &["said", "laughed", "begged", "sighed"],
            exclaims: &["dear me", "bless you", "how splendid"],
        },
        _ => Lexicon {
            names: &["Ahab", "Queequeg", "Starbuck", "Ishmael", "Stubb", "Flask"],
            nouns: &["whale", "harpoon", "mast", "hull", "compass", "try-works"],
            places: &["sea", "forecastle", "quarter-deck", "horizon", "deep"],
            verbs: &["sailed", "lowered", "bellowed", "watched", "sounded"],
            adjectives: &["white", "vast", "weathered", "briny", "unfathomed"],
            speech_verbs: &["cried", "muttered", "thundered", "mused"],
            exclaims: &["aye", "avast", "by the masthead"],
        },
    }
}

fn pick<'a>(rng: &mut ChaCha20Rng, pool: &[&'a str]) -> &'a str {
    pool[rng.gen_range(0..pool.len())]
}

fn np_name(lex: &Lexicon, rng: &mut ChaCha20Rng) -> ParseTree {
    node("NP", vec![pre("NNP", pick(rng, lex.names))])
}

fn np_thing(lex: &Lexicon, rng: &mut ChaCha20Rng, with_adj: bool) -> ParseTree {
    let mut children = vec![pre("DT", "the")];
    if with_adj {
        children.push(pre("JJ", pick(rng, lex.adjectives)));
    }
    children.push(pre("NN", pick(rng, lex.nouns)));
    node("NP", children)
}

fn pp_place(lex: &Lexicon, rng: &mut ChaCha20Rng) -> ParseTree {
    let prep = pick(rng, &["in", "by", "near", "beyond", "under"]);
    node(
        "PP",
        vec![
            pre("IN", prep),
            node(
                "NP",
                vec![pre("DT", "the"), pre("NN", pick(rng, lex.places))],
            ),
        ],
    )
}

/// Simple declarative: Name verbed the (adj) noun (place).
fn declarative(lex: &Lexicon, rng: &mut ChaCha20Rng) -> ParseTree {
    let with_adj = rng.gen_bool(0.6);
    let mut vp = vec![
        pre("VBD", pick(rng, lex.verbs)),
        np_thing(lex, rng, with_adj),
    ];
    if rng.gen_bool(0.6) {
        vp.push(pp_place(lex, rng));
    }
    node("S", vec![np_name(lex, rng), node("VP", vp), pre(".", ".")])
}

/// Dialogue: " exclaim , " said Name (place).
fn dialogue(lex: &Lexicon, rng: &mut ChaCha20Rng) -> ParseTree {
    let quoted = node(
        "S",
        vec![node("INTJ", vec![pre("UH", pick(rng, lex.exclaims))])],
    );
    let mut vp = vec![pre("VBD", pick(rng, lex.speech_verbs)), np_name(lex, rng)];
    if rng.gen_bool(0.4) {
        vp.push(pp_place(lex, rng));
    }
    node(
        "S",
        vec![
            pre("``", "\u{201c}"),
            quoted,
            pre(",", ","),
            pre("''", "\u{201d}"),
            node("VP", vp),
            pre(".", "."),
        ],
    )
}

/// Subordinate opener: When Name verbed , Name verbed the noun .
fn subordinate(lex: &Lexicon, rng: &mut ChaCha20Rng) -> ParseTree {
    let sbar = node(
        "SBAR",
        vec![
            pre("WHADVP", "When"),
            node(
                "S",
                vec![
                    np_name(lex, rng),
                    node("VP", vec![pre("VBD", pick(rng, lex.verbs))]),
                ],
            ),
        ],
    );
    node(
        "S",
        vec![
            sbar,
            pre(",", ","),
            np_name(lex, rng),
            {
                let with_adj = rng.gen_bool(0.5);
                node(
                    "VP",
                    vec![
                        pre("VBD", pick(rng, lex.verbs)),
                        np_thing(lex, rng, with_adj),
                    ],
                )
            },
            pre(".", "."),
        ],
    )
}

/// Coordination: Name verbed the noun and Name verbed the noun (place).
fn coordination(lex: &Lexicon, rng: &mut ChaCha20Rng) -> ParseTree {
    let left = node(
        "S",
        vec![
            np_name(lex, rng),
            node(
                "VP",
                vec![pre("VBD", pick(rng, lex.verbs)), np_thing(lex, rng, false)],
            ),
        ],
    );
    let with_adj = rng.gen_bool(0.5);
    let mut right_vp = vec![
        pre("VBD", pick(rng, lex.verbs)),
        np_thing(lex, rng, with_adj),
    ];
    if rng.gen_bool(0.5) {
        right_vp.push(pp_place(lex, rng));
    }
    let right = node("S", vec![np_name(lex, rng), node("VP", right_vp)]);
    node("S", vec![left, pre("CC", "and"), right, pre(".", ".")])
}

/// Renders tree leaves with treebank-style punctuation attachment.
fn render(tree: &ParseTree) -> String {
    let leaves = tree.leaves();
    let mut out = String::new();
    for leaf in leaves {
        let no_space_before = matches!(leaf, "." | "," | "!" | "?" | ";" | ":" | "\u{201d}");
        if !out.is_empty() && !no_space_before && !out.ends_with('\u{201c}') {
            out.push(' ');
        }
        out.push_str(leaf);
    }
    out
}

fn sentence(author: AuthorId, rng: &mut ChaCha20Rng) -> (String, String) {
    let lex = lexicon(author);
    // Template mix differs by author: Twain favors short declaratives, the
    // dialogue-heavy styles lean on quoted speech.
    let roll = rng.gen_range(0..100u32);
    let tree = match author.index() {
        0 => match roll {
            0..=39 => dialogue(&lex, rng),
            40..=69 => subordinate(&lex, rng),
            _ => coordination(&lex, rng),
        },
        1 => match roll {
            0..=29 => dialogue(&lex, rng),
            30..=69 => subordinate(&lex, rng),
            _ => declarative(&lex, rng),
        },
        2 => match roll {
            0..=59 => declarative(&lex, rng),
            60..=79 => dialogue(&lex, rng),
            _ => coordination(&lex, rng),
        },
        3 => match roll {
            0..=34 => dialogue(&lex, rng),
            35..=69 => declarative(&lex, rng),
            _ => coordination(&lex, rng),
        },
        _ => match roll {
            0..=39 => subordinate(&lex, rng),
            40..=74 => declarative(&lex, rng),
            _ => dialogue(&lex, rng),
        },
    };
    (render(&tree), tree.serialize())
}

/// A deterministic synthetic corpus: one document per author plus a sidecar
/// map from sentence text to its bracketed parse.
pub struct SynthCorpus {
    pub docs: Vec<RawDoc>,
    pub parses: BTreeMap<String, String>,
}

pub fn synth_corpus(per_author: usize, seed: u64) -> SynthCorpus {
    let mut docs = Vec::with_capacity(AUTHOR_COUNT);
    let mut parses = BTreeMap::new();
    for author in AuthorId::all() {
        let mut rng = ChaCha20Rng::seed_from_u64(seed.wrapping_add(author.index() as u64 * 7919));
        let mut sentences = Vec::with_capacity(per_author);
        for _ in 0..per_author {
            let (text, parse) = sentence(author, &mut rng);
            parses.insert(text.clone(), parse);
            sentences.push(text);
        }
        docs.push(RawDoc {
            author,
            source: format!("synth-{}", author.index()),
            text: sentences.join(" "),
        });
    }
    SynthCorpus { docs, parses }
}

/// Builds and splits a ready-to-train corpus from the synthetic documents.
pub fn synth_split_corpus(
    per_author: usize,
    seed: u64,
    test_fraction: f64,
    split_seed: u64,
) -> Result<(Corpus, RejectionReport)> {
    let synth = synth_corpus(per_author, seed);
    let provider = SidecarParses(synth.parses);
    let (corpus, rejections) = build_corpus(
        &synth.docs,
        &TagScheme::default_scheme(),
        &CorpusConfig::default(),
        &provider,
    )?;
    let corpus = split_corpus(corpus, test_fraction, split_seed)?;
    Ok((corpus, rejections))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Split;

    #[test]
    fn synth_corpus_is_deterministic() {
        let a = synth_corpus(20, 42);
        let b = synth_corpus(20, 42);
        for (da, db) in a.docs.iter().zip(&b.docs) {
            assert_eq!(da.text, db.text);
        }
        let c = synth_corpus(20, 43);
        assert_ne!(a.docs[0].text, c.docs[0].text);
    }

    #[test]
    fn sentences_survive_the_corpus_pipeline() {
        let (corpus, rejections) = synth_split_corpus(50, 7, 0.2, 11).unwrap();
        assert_eq!(
            rejections.total(),
            0,
            "synthetic sentences should pass every filter"
        );
        assert_eq!(corpus.records.len(), 250);
        for author in AuthorId::all() {
            assert_eq!(corpus.records_for(author, Split::Test).count(), 10);
        }
        // Parses survived the text-keyed sidecar join.
        let with_parse = corpus.records.iter().filter(|r| r.parse.is_some()).count();
        assert_eq!(with_parse, 250);
    }

    #[test]
    fn parses_are_well_formed() {
        let synth = synth_corpus(30, 3);
        for (text, parse) in &synth.parses {
            let tree = crate::synfeat::parse_tree_from_bracketed(parse)
                .unwrap_or_else(|e| panic!("bad parse for {text:?}: {e}"));
            assert!(crate::synfeat::longest_path(&tree) >= 2);
        }
    }

    #[test]
    fn author_vocabularies_are_distinct() {
        let synth = synth_corpus(40, 9);
        let texts: Vec<&str> = synth.docs.iter().map(|d| d.text.as_str()).collect();
        assert!(
            texts[4].contains("whale") || texts[4].contains("harpoon") || texts[4].contains("mast")
        );
        assert!(!texts[0].contains("whale"));
        assert!(texts[2].contains("Tom") || texts[2].contains("Huck") || texts[2].contains("raft"));
    }
}
