//! Object-state-sensitive tabletop clearing: scene model, ground-truth
//! oracle, plan parsing, planning backends, the clarification agent and
//! the evaluation bench.

pub mod agent;
pub mod backends;
pub mod catalog;
pub mod eval;
pub mod gen;
pub mod labels;
pub mod oracle;
pub mod plan;
pub mod rng;
pub mod scene;
