//! Author identities and the tag scheme that binds them to vocabulary tokens.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const AUTHOR_COUNT: usize = 5;

/// One of the five authors, identified by a stable index in `0..5`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AuthorId(pub u8);

impl AuthorId {
    pub fn new(index: usize) -> Result<Self> {
        if index < AUTHOR_COUNT {
            Ok(AuthorId(index as u8))
        } else {
            Err(Error::InvalidScheme(format!(
                "author index {index} out of range 0..{AUTHOR_COUNT}"
            )))
        }
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn all() -> impl Iterator<Item = AuthorId> {
        (0..AUTHOR_COUNT).map(|i| AuthorId(i as u8))
    }
}

impl std::fmt::Display for AuthorId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Bijection between authors and single-token tags, plus the end-of-sentence tag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagScheme {
    /// Display names indexed by author, e.g. `names[0] = "Dickens"`.
    pub names: Vec<String>,
    /// Tag strings indexed by author, e.g. `tags[0] = "<0>"`.
    pub tags: Vec<String>,
    /// Marks the end of a training sentence, e.g. `"<end>"`.
    pub end_tag: String,
}

impl TagScheme {
    /// The default five-author scheme.
    pub fn default_scheme() -> Self {
        TagScheme {
            names: ["Dickens", "Austen", "Twain", "Alcott", "Melville"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            tags: (0..AUTHOR_COUNT).map(|i| format!("<{i}>")).collect(),
            end_tag: "<end>".to_string(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.names.len() != AUTHOR_COUNT || self.tags.len() != AUTHOR_COUNT {
            return Err(Error::InvalidScheme(format!(
                "scheme must define exactly {AUTHOR_COUNT} authors"
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for tag in self.tags.iter().chain(std::iter::once(&self.end_tag)) {
            if tag.is_empty() {
                return Err(Error::InvalidScheme("empty tag".into()));
            }
            if !seen.insert(tag.clone()) {
                return Err(Error::InvalidScheme(format!("duplicate tag {tag:?}")));
            }
        }
        Ok(())
    }

    pub fn tag_for(&self, author: AuthorId) -> &str {
        &self.tags[author.index()]
    }

    pub fn name_for(&self, author: AuthorId) -> &str {
        &self.names[author.index()]
    }

    /// Looks up the author owning `tag`, if any.
    pub fn author_for_tag(&self, tag: &str) -> Option<AuthorId> {
        self.tags
            .iter()
            .position(|t| t == tag)
            .map(|i| AuthorId(i as u8))
    }

    /// All tag strings including the end tag.
    pub fn all_tags(&self) -> impl Iterator<Item = &str> {
        self.tags
            .iter()
            .map(|s| s.as_str())
            .chain(std::iter::once(self.end_tag.as_str()))
    }

    /// True if `text` contains any scheme tag as a substring.
    pub fn text_contains_tag(&self, text: &str) -> bool {
        self.all_tags().any(|t| text.contains(t))
    }
}

impl Default for TagScheme {
    fn default() -> Self {
        Self::default_scheme()
    }
}
