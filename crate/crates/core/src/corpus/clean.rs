//! Document cleaning: front/back matter stripping and whitespace normalization.

use crate::error::{Error, Result};

/// Controls boundary-marker stripping. The defaults recognize the
/// `*** START ... ***` / `*** END ... ***` banner lines used by Project
/// Gutenberg plain-text editions.
#[derive(Debug, Clone)]
pub struct CleanConfig {
    /// Literal prefix that opens the start banner, e.g. `*** START`.
    pub start_marker: String,
    /// Literal prefix that opens the end banner, e.g. `*** END`.
    pub end_marker: String,
    /// Banner terminator, e.g. `***`.
    pub marker_close: String,
    /// When true, a missing start marker is an error instead of
    /// "take the whole document".
    pub strict: bool,
}

impl Default for CleanConfig {
    fn default() -> Self {
        CleanConfig {
            start_marker: "*** START".into(),
            end_marker: "*** END".into(),
            marker_close: "***".into(),
            strict: false,
        }
    }
}

impl CleanConfig {
    pub fn strict() -> Self {
        CleanConfig {
            strict: true,
            ..Default::default()
        }
    }
}

/// Finds `prefix ... close` starting at or after `from`; returns the byte
/// range of the whole banner.
fn find_banner(text: &str, prefix: &str, close: &str, from: usize) -> Option<(usize, usize)> {
    let rel = text[from..].find(prefix)?;
    let start = from + rel;
    let after_prefix = start + prefix.len();
    let rel_close = text[after_prefix..].find(close)?;
    let end = after_prefix + rel_close + close.len();
    Some((start, end))
}

/// Strips front/back matter per the configured boundary markers and collapses
/// every whitespace run (including line breaks inside paragraphs) to a single
/// space.
pub fn clean_text(raw: &str, config: &CleanConfig) -> Result<String> {
    let body = match find_banner(raw, &config.start_marker, &config.marker_close, 0) {
        Some((_, banner_end)) => {
            let tail = &raw[banner_end..];
            match find_banner(tail, &config.end_marker, &config.marker_close, 0) {
                Some((end_start, _)) => &tail[..end_start],
                None => tail,
            }
        }
        None if config.strict => {
            return Err(Error::NoContent("start marker not found".into()));
        }
        None => raw,
    };

    let collapsed = body.split_whitespace().collect::<Vec<_>>().join(" ");
    if collapsed.is_empty() {
        return Err(Error::NoContent("document empty after stripping".into()));
    }
    Ok(collapsed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strips_markers_and_collapses_whitespace() {
        let raw = "TITLE PAGE\n\n*** START ***\nIt was   the best.\n*** END ***";
        let cleaned = clean_text(raw, &CleanConfig::default()).unwrap();
        assert_eq!(cleaned, "It was the best.");
    }

    #[test]
    fn strict_mode_requires_markers() {
        let err = clean_text("a\n\nb", &CleanConfig::strict()).unwrap_err();
        assert!(err.to_string().contains("no content between markers"));
    }

    #[test]
    fn lenient_mode_takes_whole_document() {
        let cleaned = clean_text("a\n\nb", &CleanConfig::default()).unwrap();
        assert_eq!(cleaned, "a b");
    }

    #[test]
    fn empty_body_between_markers_is_error() {
        let raw = "junk *** START ***   \n\t  *** END *** junk";
        assert!(clean_text(raw, &CleanConfig::default()).is_err());
    }

    #[test]
    fn gutenberg_style_banner() {
        let raw = "The Project Gutenberg eBook of X\n\
                   *** START OF THE PROJECT GUTENBERG EBOOK X ***\n\
                   Call me Ishmael.\n\
                   *** END OF THE PROJECT GUTENBERG EBOOK X ***\nlicense text";
        let cleaned = clean_text(raw, &CleanConfig::strict()).unwrap();
        assert_eq!(cleaned, "Call me Ishmael.");
    }

    #[test]
    fn cleaning_is_idempotent() {
        // Lenient mode: the first pass may remove banner text, after which a
        // second pass must be a no-op.
        let mut seed = 0x243f_6a88_85a3_08d3_u64;
        let mut next = move || {
            seed = seed
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            seed
        };
        let words = [
            "It", "was", "the", "best", "of", "times,", "worst", "\n", "\t", "  ",
        ];
        for _ in 0..100 {
            let len = (next() % 40 + 1) as usize;
            let doc: String = (0..len)
                .map(|_| words[(next() % words.len() as u64) as usize])
                .collect::<Vec<_>>()
                .join(" ");
            let config = CleanConfig::default();
            match clean_text(&doc, &config) {
                Ok(once) => {
                    let twice = clean_text(&once, &config).unwrap();
                    assert_eq!(once, twice);
                }
                Err(_) => {
                    // Whitespace-only document; nothing to check.
                }
            }
        }
    }
}
