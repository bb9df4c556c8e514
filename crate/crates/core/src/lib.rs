//! Diversification re-ranking of top-n recommendation lists.
//!
//! The crate covers the whole offline pipeline: loading and preprocessing
//! rating data ([`corpus`]), a matrix-factorization relevance baseline that
//! produces candidate lists ([`mf`]), greedy diversification re-rankers
//! ([`greedy`]), zero-shot listwise re-ranking through a chat-completion
//! endpoint ([`llm`]), the relevance/diversity metric suite ([`metrics`]) and
//! a config-driven experiment harness ([`experiment`]).

pub mod corpus;
pub mod experiment;
pub mod greedy;
pub mod ids;
pub mod llm;
pub mod metrics;
pub mod mf;
pub mod seed;

pub use corpus::{Interaction, InteractionLog, Item, ItemCatalog, LogRole, SplitSpec};
pub use greedy::{Origin, RecEntry, RecList, RerankParams};
pub use ids::{ItemId, UserId};
pub use mf::{CandidateEntry, CandidateList, MfConfig, MfModel};
