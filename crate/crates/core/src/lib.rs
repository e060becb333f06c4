//! Pool-based batch active learning with an instruction-tuned chat model as
//! the query strategy.
//!
//! The pieces, bottom up:
//!
//! * [`corpus`] loads the unlabeled pool.
//! * [`promptkit`] renders selection prompts, [`oracle_llm`] sends them and
//!   [`selection_parser`] turns the reply into pool indices.
//! * [`strategies`] holds the LLM adapter, the classical baselines and the
//!   cold-start hybrid.
//! * [`session`] is the labeling loop and its persisted state.
//! * [`harness`] runs simulated experiments with a perfect annotator.

pub mod clock;
pub mod corpus;
pub mod harness;
pub mod oracle_llm;
pub mod promptkit;
pub mod seeds;
pub mod selection_parser;
pub mod session;
pub mod strategies;

pub use clock::{Clock, FixedClock, SystemClock};
pub use corpus::{load_pool, subsample, Instance, LoadOptions, Manifest, Pool};
pub use oracle_llm::{ChatEndpoint, ChatExchange, GenerationSettings, LlmClient, LlmError};
pub use promptkit::{build_prompt, name_config, CotMode, PromptArtifact, PromptConfig, RecapMode};
pub use selection_parser::{parse_selection, Diagnostic, SelectionResult, SelectionStatus};
pub use session::{Annotator, IterationRecord, Session, SessionConfig, SessionError, SessionHistory};
pub use strategies::{build_strategy, EmbeddingMatrix, QueryStrategy, StrategyId, StrategyResources, StrategySpec};
