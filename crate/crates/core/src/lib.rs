//! Style-conditioned sentence generation with a built-in reference transformer,
//! plus the evaluation and attribution tooling that goes with it: a style
//! detector, syntactic feature comparison, attention enrichment, and
//! integrated-gradients analysis.

pub mod author;
pub mod backend;
pub mod corpus;
pub mod detector;
pub mod error;
pub mod fixtures;
pub mod generation;
pub mod synfeat;
pub mod util;
pub mod xai;

pub use author::{AuthorId, TagScheme};
pub use error::{Error, Result};
