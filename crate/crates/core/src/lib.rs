//! Self-evolution engine for a frozen language-model learner.
//!
//! All learning lives outside the model weights, in a co-evolving knowledge
//! graph with four typed subgraphs (capabilities, task types, experience,
//! environment). A guidance-tier model writes to the graph during evolution;
//! a frozen execution-tier model only reads from it through task-filtered
//! success/failure exemplar retrieval.
//!
//! Module map:
//!
//! - [`graph`]: the knowledge graph, append-only protected memory, pruning,
//!   snapshot/rollback of mutable slots and the replayable event log.
//! - [`curriculum`]: learnable frontier, recency-weighted round-robin
//!   selector, asymmetric mastery ratchet and their executable bounds.
//! - [`memory`]: dual embedding stores, format-conditional bundle retrieval,
//!   prompt rendering, success harvest, retrieval-error measurement and the
//!   cascade extensions.
//! - [`bandit`]: Beta-Bernoulli Thompson sampling with warm-up.
//! - [`backend`]: model backends, agent roster and call accounting.
//! - [`engine`]: the iteration loop and its phases.
//! - [`env`]: synthetic environments.
//! - [`run`]: run directories, persistence, audit and growth statistics.

pub mod backend;
pub mod bandit;
pub mod config;
pub mod curriculum;
pub mod engine;
pub mod env;
pub mod exec;
pub mod graph;
pub mod ids;
pub mod memory;
pub mod run;

pub use config::EngineConfig;
pub use engine::{Engine, IterationReport};
pub use graph::KnowledgeGraph;
pub use ids::NodeId;
