//! Rule-based sentence segmentation over whitespace-normalized text.
//!
//! Splits after terminal punctuation (`.`, `!`, `?`), optionally followed by
//! closing quotes or brackets, when the next token looks like a sentence
//! start. An abbreviation guard list (shipped as a data file) and a
//! single-letter-initial guard suppress false splits. Joining the output with
//! single spaces reconstructs the input exactly.

use std::collections::BTreeSet;
use std::sync::OnceLock;

const ABBREVIATIONS: &str = include_str!("abbreviations.txt");

fn abbreviation_set() -> &'static BTreeSet<String> {
    static SET: OnceLock<BTreeSet<String>> = OnceLock::new();
    SET.get_or_init(|| {
        ABBREVIATIONS
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_lowercase)
            .collect()
    })
}

fn is_terminal(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

fn is_closing(c: char) -> bool {
    matches!(
        c,
        '"' | '\'' | '\u{201d}' | '\u{2019}' | ')' | ']' | '\u{00bb}'
    )
}

fn is_opening(c: char) -> bool {
    matches!(
        c,
        '"' | '\'' | '\u{201c}' | '\u{2018}' | '(' | '[' | '\u{00ab}'
    )
}

/// True when the character can begin a new sentence.
fn starts_sentence(c: char) -> bool {
    c.is_uppercase() || c.is_ascii_digit() || is_opening(c)
}

/// The word immediately before byte offset `end`, stripped of leading
/// punctuation, without its final period.
fn word_before(text: &str, end: usize) -> &str {
    let head = &text[..end];
    let start = head.rfind(' ').map_or(0, |i| i + 1);
    head[start..].trim_start_matches(|c: char| !c.is_alphanumeric())
}

fn guard_blocks_split(text: &str, period_at: usize) -> bool {
    let word = word_before(text, period_at);
    if word.is_empty() {
        return false;
    }
    // Single-letter initials: "A. Dent", "F. M. Last".
    if word.chars().count() == 1 && word.chars().next().unwrap().is_alphabetic() {
        return true;
    }
    abbreviation_set().contains(&word.to_lowercase())
}

/// Splits `clean` into sentences. Text with no terminal punctuation yields a
/// single sentence. Joining the results with single spaces reconstructs the
/// input.
pub fn segment(clean: &str) -> Vec<String> {
    let chars: Vec<(usize, char)> = clean.char_indices().collect();
    let mut sentences = Vec::new();
    let mut sent_start = 0usize;
    let mut i = 0usize;

    while i < chars.len() {
        let (pos, c) = chars[i];
        if !is_terminal(c) {
            i += 1;
            continue;
        }
        // Consume the full run of terminal punctuation ("?!", "...").
        let mut j = i;
        while j + 1 < chars.len() && is_terminal(chars[j + 1].1) {
            j += 1;
        }
        // Guard applies to the word before the first '.' of a plain period.
        let guarded = c == '.' && j == i && guard_blocks_split(clean, pos);
        // Consume closing quotes/brackets after the terminal run.
        let mut k = j;
        while k + 1 < chars.len() && is_closing(chars[k + 1].1) {
            k += 1;
        }
        // Split requires: a single space, then a sentence-start character.
        let can_split =
            k + 2 < chars.len() && chars[k + 1].1 == ' ' && starts_sentence(chars[k + 2].1);
        if can_split && !guarded {
            let sent_end = chars[k + 1].0;
            sentences.push(clean[sent_start..sent_end].to_string());
            sent_start = chars[k + 2].0;
        }
        i = k + 1;
    }

    if sent_start < clean.len() {
        sentences.push(clean[sent_start..].to_string());
    } else if sentences.is_empty() && !clean.is_empty() {
        sentences.push(clean.to_string());
    }
    sentences
}
