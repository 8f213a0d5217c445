//! The closed synthetic world: a url universe with category-conditioned
//! embeddings and the ground-truth tracker oracles.

mod oracle;
mod text;
mod universe;

pub use oracle::{random_persona_window, BidderOracle, OracleConfig, OracleSet, SegmentOracle};
pub use text::HashedTextEmbedder;
pub use universe::{cosine, SyntheticEmbedder, UniverseConfig, UrlId, UrlKind, UrlUniverse};
