//! Product attribute-value identification (PAVI) with LLM prompting.
//!
//! The crate covers the whole experiment loop: dataset ingestion and
//! splitting ([`corpus`]), demonstration retrieval ([`retrieval`]), prompt
//! rendering ([`prompting`]), a cached chat-completion client
//! ([`gateway`]), completion parsing ([`parsing`]), scoring
//! ([`evaluation`]) and orchestration ([`pipeline`]).

pub mod corpus;
pub mod retrieval;
pub mod parsing;
pub mod prompting;
pub mod gateway;
pub mod evaluation;
pub mod pipeline;
