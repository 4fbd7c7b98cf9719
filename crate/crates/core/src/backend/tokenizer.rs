//! Word-level tokenizer with leading-space word forms, character fallback,
//! and single-token specials for scheme tags.
//!
//! Tokens carry their own surface text (a word form may include its leading
//! space), so decoding is plain concatenation and `decode(encode(text)) ==
//! text` whenever every character of `text` is covered by the vocabulary.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::author::TagScheme;
use crate::error::{Error, Result};

pub type TokenId = u32;

pub const UNK_TOKEN: &str = "<unk>";

fn is_word_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '\'' || c == '\u{2019}'
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Tokenizer {
    /// Token id to surface string.
    vocab: Vec<String>,
    /// Ids of special tokens (tags, unk). Specials match before anything else.
    special: BTreeSet<TokenId>,
    #[serde(skip)]
    lookup: HashMap<String, TokenId>,
}

impl PartialEq for Tokenizer {
    fn eq(&self, other: &Self) -> bool {
        self.vocab == other.vocab && self.special == other.special
    }
}

impl Tokenizer {
    fn new(vocab: Vec<String>, special: BTreeSet<TokenId>) -> Self {
        let lookup = vocab
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i as TokenId))
            .collect();
        Tokenizer {
            vocab,
            special,
            lookup,
        }
    }

    /// Rebuilds the internal lookup after deserialization.
    pub fn reindex(&mut self) {
        self.lookup = self
            .vocab
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i as TokenId))
            .collect();
    }

    /// Builds a vocabulary from `texts`: the unk token, every character seen
    /// (plus printable ASCII), and the `max_words` most frequent word forms.
    /// Word forms are counted separately with and without a leading space.
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>, max_words: usize) -> Self {
        let mut chars: BTreeSet<char> = (' '..='~').collect();
        let mut word_counts: BTreeMap<String, u64> = BTreeMap::new();

        for text in texts {
            for c in text.chars() {
                chars.insert(c);
            }
            let cs: Vec<char> = text.chars().collect();
            let mut i = 0;
            while i < cs.len() {
                if is_word_char(cs[i]) {
                    let start = i;
                    while i < cs.len() && is_word_char(cs[i]) {
                        i += 1;
                    }
                    let word: String = cs[start..i].iter().collect();
                    let spaced = start > 0 && cs[start - 1] == ' ';
                    let form = if spaced { format!(" {word}") } else { word };
                    *word_counts.entry(form).or_insert(0) += 1;
                } else {
                    i += 1;
                }
            }
        }

        let mut vocab: Vec<String> = vec![UNK_TOKEN.to_string()];
        let mut special = BTreeSet::new();
        special.insert(0);
        vocab.extend(chars.iter().map(|c| c.to_string()));

        let mut ranked: Vec<(&String, &u64)> = word_counts.iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(a.1).then_with(|| a.0.cmp(b.0)));
        let existing: BTreeSet<&String> = vocab.iter().collect();
        let mut selected: Vec<String> = ranked
            .into_iter()
            .filter(|(form, _)| !existing.contains(form))
            .take(max_words)
            .map(|(form, _)| form.clone())
            .collect();
        // Id assignment is frequency-ranked but stored sorted for stability.
        selected.sort();
        vocab.extend(selected);

        Tokenizer::new(vocab, special)
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.vocab[id as usize]
    }

    pub fn id_for(&self, token: &str) -> Option<TokenId> {
        self.lookup.get(token).copied()
    }

    pub fn is_special(&self, id: TokenId) -> bool {
        self.special.contains(&id)
    }

    pub fn unk_id(&self) -> TokenId {
        0
    }

    /// The single token id for a scheme tag. Errors if the tag is missing or
    /// spans multiple tokens.
    pub fn tag_id(&self, tag: &str) -> Result<TokenId> {
        match self.id_for(tag) {
            Some(id) if self.is_special(id) => Ok(id),
            _ => Err(Error::TagNotSingleToken(tag.to_string())),
        }
    }

    fn longest_special_at(&self, text: &str) -> Option<(TokenId, usize)> {
        let mut best: Option<(TokenId, usize)> = None;
        for &id in &self.special {
            let tok = &self.vocab[id as usize];
            if !tok.is_empty() && text.starts_with(tok.as_str())
                && best.is_none_or(|(_, len)| tok.len() > len) {
                    best = Some((id, tok.len()));
                }
        }
        best
    }

    fn push_word(&self, word: &str, out: &mut Vec<TokenId>) {
        if let Some(id) = self.id_for(word) {
            out.push(id);
            return;
        }
        for c in word.chars() {
            out.push(self.id_for(&c.to_string()).unwrap_or(self.unk_id()));
        }
    }

    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        let mut out = Vec::new();
        let mut rest = text;
        while !rest.is_empty() {
            if let Some((id, len)) = self.longest_special_at(rest) {
                out.push(id);
                rest = &rest[len..];
                continue;
            }
            let mut it = rest.char_indices();
            let (_, first) = it.next().unwrap();
            if is_word_char(first) {
                let end = rest.find(|c: char| !is_word_char(c)).unwrap_or(rest.len());
                self.push_word(&rest[..end], &mut out);
                rest = &rest[end..];
            } else if first == ' ' && rest[1..].chars().next().is_some_and(is_word_char) {
                let word_end = 1 + rest[1..]
                    .find(|c: char| !is_word_char(c))
                    .unwrap_or(rest.len() - 1);
                let spaced = &rest[..word_end];
                if let Some(id) = self.id_for(spaced) {
                    out.push(id);
                } else {
                    out.push(self.id_for(" ").unwrap_or(self.unk_id()));
                    self.push_word(&rest[1..word_end], &mut out);
                }
                rest = &rest[word_end..];
            } else {
                let len = first.len_utf8();
                out.push(self.id_for(&rest[..len]).unwrap_or(self.unk_id()));
                rest = &rest[len..];
            }
        }
        out
    }

    /// Decoding concatenates token surface strings.
    pub fn decode(&self, ids: &[TokenId]) -> String {
        ids.iter().map(|&id| self.token(id)).collect()
    }
}

/// Adds every scheme tag (author tags and the end tag) as a single-token
/// special. Existing token ids are untouched, so encodings of tag-free text
/// are unchanged. A tag that already exists as a regular token is rejected.
pub fn extend_tokenizer(base: &Tokenizer, scheme: &TagScheme) -> Result<Tokenizer> {
    scheme.validate()?;
    let mut vocab = base.vocab.clone();
    let mut special = base.special.clone();
    for tag in scheme.all_tags() {
        match base.id_for(tag) {
            Some(id) if base.is_special(id) => {}
            Some(_) => return Err(Error::TagNotSingleToken(tag.to_string())),
            None => {
                vocab.push(tag.to_string());
                special.insert((vocab.len() - 1) as TokenId);
            }
        }
    }
    Ok(Tokenizer::new(vocab, special))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_tokenizer() -> Tokenizer {
        Tokenizer::from_texts(
            [
                "I left the house early.",
                "She stayed behind with the boys.",
                "A few boys ran to the river!",
                "hello there, hello again.",
            ],
            200,
        )
    }

    #[test]
    fn tags_encode_to_single_tokens() {
        let base = sample_tokenizer();
        let tok = extend_tokenizer(&base, &TagScheme::default_scheme()).unwrap();
        for tag in ["<0>", "<1>", "<2>", "<3>", "<4>", "<end>"] {
            let ids = tok.encode(tag);
            assert_eq!(ids.len(), 1, "{tag} should be one token");
            assert!(tok.is_special(ids[0]));
        }
    }

    #[test]
    fn extension_does_not_change_existing_encodings() {
        let base = sample_tokenizer();
        let extended = extend_tokenizer(&base, &TagScheme::default_scheme()).unwrap();
        for text in [
            "hello",
            "She stayed behind.",
            "A few boys ran to the river!",
        ] {
            assert_eq!(base.encode(text), extended.encode(text));
        }
    }

    #[test]
    fn tag_colliding_with_regular_token_is_rejected() {
        let base = sample_tokenizer();
        let mut scheme = TagScheme::default_scheme();
        scheme.tags[2] = "hello".into();
        let err = extend_tokenizer(&base, &scheme).unwrap_err();
        assert!(err.to_string().contains("tag not single-token"));
    }

    #[test]
    fn round_trip_on_tagged_strings() {
        let base = sample_tokenizer();
        let tok = extend_tokenizer(&base, &TagScheme::default_scheme()).unwrap();
        let words = [
            "A",
            "few",
            "boys",
            "ran",
            "river",
            "hello",
            "the",
            "unseenword",
        ];
        let mut state = 0x9e3779b97f4a7c15_u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            state
        };
        for _ in 0..1000 {
            let tag = format!("<{}>", next() % 5);
            let n = 1 + (next() % 5) as usize;
            let body: Vec<&str> = (0..n)
                .map(|_| words[(next() % words.len() as u64) as usize])
                .collect();
            let text = format!("{tag} {} <end>", body.join(" "));
            assert_eq!(tok.decode(&tok.encode(&text)), text);
        }
    }

    #[test]
    fn round_trip_preserves_punctuation_and_case() {
        let tok = sample_tokenizer();
        for text in [
            "She stayed behind with the boys.",
            "\"Aha!\" said the spy -- twice.",
            "don't stop; won't stop.",
            "Unknown Wordforms survive, too?",
        ] {
            assert_eq!(tok.decode(&tok.encode(text)), text);
        }
    }

    #[test]
    fn unknown_characters_map_to_unk() {
        let tok = sample_tokenizer();
        let ids = tok.encode("\u{4e16}");
        assert_eq!(ids, vec![tok.unk_id()]);
    }

    #[test]
    fn serde_round_trip_reindexes() {
        let base = sample_tokenizer();
        let json = serde_json::to_string(&base).unwrap();
        let mut back: Tokenizer = serde_json::from_str(&json).unwrap();
        back.reindex();
        assert_eq!(back, base);
        assert_eq!(back.encode("hello there"), base.encode("hello there"));
    }
}
