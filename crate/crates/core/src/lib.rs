//! Natural-language-to-SQL semantic parsing over single tables: query trees
//! and linearizations, a grammar-constrained pointer-generator model, the
//! teacher-forcing / dynamic-oracle / REINFORCE training regimes, and the
//! sequence/query/execution accuracy metrics.

pub mod evaluator;
pub mod grammar;
pub mod model;
pub mod query_ast;
pub mod synth;
pub mod table_store;
pub mod trainer;
pub mod vocab;
