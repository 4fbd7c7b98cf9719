//! Explanation tooling: attention enrichment over generation traces,
//! integrated gradients for generator and classifier attribution, and
//! corpus-level token rankings.

mod enrichment;
mod ig;
mod ranking;

pub use enrichment::{
    aggregate_profiles, enrichment_profile, to_tag_mass, AggregateEnrichment, EnrichmentProfile,
    LayerEnrichment, TagSpan,
};
pub use ig::{
    integrated_gradients, tag_attribution_heatmap, token_attributions, AttributionMatrix,
    BaselineSpec, DifferentiableTarget, IgResult, ModelTarget,
};
pub use ranking::{classifier_token_ranking, TokenAttribution, TokenRanking};
