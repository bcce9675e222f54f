//! Dynamic knowledge-graph maintenance from text: belief graphs and their
//! update commands, a deterministic cooking text-world that produces
//! training transitions, and the evaluation protocols.

pub mod corpus;
pub mod dsl;
pub mod eval;
pub mod examples;
pub mod graph;
pub mod world;

pub use dsl::{parse_op, parse_sequence, render_op, render_sequence, tokenize, Token, Vocabulary};
pub use graph::{BeliefGraph, Entity, EntityKind, Relation, RelationRegistry, Triple, UpdateOp, UpdateSequence, Verb};
pub use world::{Game, Transition, WorldConfig};
