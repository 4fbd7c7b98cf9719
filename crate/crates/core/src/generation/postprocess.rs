//! Raw generation cleanup: tag stripping, repetition collapse, and the
//! completeness check.

use serde::{Deserialize, Serialize};

use crate::author::TagScheme;

/// Why a generation was rejected instead of cleaned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rejection {
    /// No terminal punctuation at the end.
    Incomplete,
    EmptyAfterStrip,
    /// A scheme tag survived inside the sentence body.
    ContainsTag,
}

impl std::fmt::Display for Rejection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Rejection::Incomplete => "incomplete",
            Rejection::EmptyAfterStrip => "empty_after_strip",
            Rejection::ContainsTag => "contains_tag",
        };
        f.write_str(s)
    }
}

fn is_closing_quote(c: char) -> bool {
    matches!(c, '"' | '\'' | '\u{201d}' | '\u{2019}' | '\u{00bb}')
}

fn ends_terminal(text: &str) -> bool {
    let trimmed = text.trim_end_matches(is_closing_quote);
    trimmed.ends_with(['.', '!', '?'])
}

/// Collapses immediate runs of a repeated n-gram (n <= 3) that occur three or
/// more times in a row down to a single occurrence.
fn collapse_repetitions(tokens: Vec<String>) -> Vec<String> {
    let mut tokens = tokens;
    loop {
        let mut changed = false;
        for n in 1..=3usize {
            let mut out: Vec<String> = Vec::with_capacity(tokens.len());
            let mut i = 0;
            while i < tokens.len() {
                let mut reps = 1;
                if i + n <= tokens.len() {
                    while i + (reps + 1) * n <= tokens.len()
                        && tokens[i + reps * n..i + (reps + 1) * n] == tokens[i..i + n]
                    {
                        reps += 1;
                    }
                }
                if reps >= 3 {
                    out.extend_from_slice(&tokens[i..i + n]);
                    i += reps * n;
                    changed = true;
                } else {
                    out.push(tokens[i].clone());
                    i += 1;
                }
            }
            tokens = out;
        }
        if !changed {
            return tokens;
        }
    }
}

/// Turns raw generated text into a clean sentence: removes the leading author
/// tag and everything at or after the first end tag, collapses trailing
/// repetition runs, and requires terminal punctuation.
pub fn postprocess(raw_text: &str, scheme: &TagScheme) -> Result<String, Rejection> {
    let mut text = raw_text.trim();
    for tag in &scheme.tags {
        if let Some(rest) = text.strip_prefix(tag.as_str()) {
            text = rest;
            break;
        }
    }
    let body = match text.find(scheme.end_tag.as_str()) {
        Some(pos) => &text[..pos],
        None => text,
    };
    if scheme.text_contains_tag(body) {
        return Err(Rejection::ContainsTag);
    }
    let tokens: Vec<String> = body.split_whitespace().map(str::to_string).collect();
    if tokens.is_empty() {
        return Err(Rejection::EmptyAfterStrip);
    }
    let sentence = collapse_repetitions(tokens).join(" ");
    if !ends_terminal(&sentence) {
        return Err(Rejection::Incomplete);
    }
    Ok(sentence)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scheme() -> TagScheme {
        TagScheme::default_scheme()
    }

    #[test]
    fn strips_at_first_end_tag() {
        assert_eq!(
            postprocess("<0> I left. <end> <end> the the the", &scheme()),
            Ok("I left.".to_string())
        );
    }

    #[test]
    fn missing_terminal_punctuation_is_incomplete() {
        assert_eq!(
            postprocess("<1> She walked and walked and", &scheme()),
            Err(Rejection::Incomplete)
        );
    }

    #[test]
    fn collapses_repeated_tokens() {
        assert_eq!(
            postprocess("<2> He ran ran ran ran home.", &scheme()),
            Ok("He ran home.".to_string())
        );
    }

    #[test]
    fn collapses_repeated_bigrams() {
        assert_eq!(
            postprocess(
                "<3> so it goes so it goes so it goes in the end.",
                &scheme()
            ),
            Ok("so it goes in the end.".to_string())
        );
    }

    #[test]
    fn two_repeats_are_kept() {
        assert_eq!(
            postprocess("<1> she walked and walked away.", &scheme()),
            Ok("she walked and walked away.".to_string())
        );
    }

    #[test]
    fn empty_after_strip() {
        assert_eq!(
            postprocess("<0> <end> leftover", &scheme()),
            Err(Rejection::EmptyAfterStrip)
        );
    }

    #[test]
    fn interior_tag_is_rejected() {
        assert_eq!(
            postprocess("<0> I saw <3> in the margin.", &scheme()),
            Err(Rejection::ContainsTag)
        );
    }

    #[test]
    fn closing_quote_after_terminal_is_complete() {
        assert_eq!(
            postprocess("<4> \u{201c}Call me Ishmael.\u{201d} <end>", &scheme()),
            Ok("\u{201c}Call me Ishmael.\u{201d}".to_string())
        );
    }

    #[test]
    fn idempotent_on_accepted_outputs() {
        let scheme = scheme();
        let words = [
            "the", "a", "ran", "ran", "boys", "whale", "said", "Mr", "walked", "and",
        ];
        let tails = [".", "!", "?", "", " <end> junk", " ran ran ran.", "\n"];
        let mut state = 0x1234_5678_9abc_def0_u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            state
        };
        let mut accepted = 0;
        for _ in 0..1000 {
            let tag = format!("<{}>", next() % 5);
            let n = 1 + (next() % 8) as usize;
            let mut body: Vec<&str> = (0..n)
                .map(|_| words[(next() % words.len() as u64) as usize])
                .collect();
            // Occasionally inject a long repetition run.
            if next() % 3 == 0 {
                let w = words[(next() % words.len() as u64) as usize];
                for _ in 0..(3 + next() % 4) {
                    body.push(w);
                }
            }
            let tail = tails[(next() % tails.len() as u64) as usize];
            let raw = format!("{tag} {}{tail}", body.join(" "));
            if let Ok(once) = postprocess(&raw, &scheme) {
                accepted += 1;
                let twice = postprocess(&once, &scheme)
                    .unwrap_or_else(|r| panic!("accepted output re-rejected ({r}): {once:?}"));
                assert_eq!(once, twice, "postprocess not idempotent on {raw:?}");
            }
        }
        assert!(
            accepted > 100,
            "fixture should accept a healthy share, got {accepted}"
        );
    }
}
