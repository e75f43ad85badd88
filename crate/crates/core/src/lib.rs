//! Research assistant for water-gas-shift catalyst design: routed chat over
//! a literature corpus plus a thermodynamically bounded inverse design search.

pub mod assistant;
pub mod catalog;
pub mod config;
pub mod corpus;
pub mod index;
pub mod inverse;
pub mod llm;
pub mod pso;
pub mod query;
pub mod rag;
pub mod router;
pub mod service;
pub mod surrogate;
pub mod thermo;
