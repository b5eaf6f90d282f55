//! Satisfiability and verification for quantized graph neural networks.
//!
//! Formulas over aggregate-combine expressions are decided by a tableau
//! search over a finite saturating arithmetic. GNNs with linear input and
//! output constraints compile to such formulas; a satisfying model is a
//! counterexample graph.

pub mod arith;
pub mod cli;
pub mod compile;
pub mod formula;
pub mod fuzz;
pub mod gnn;
pub mod graph;
pub mod semantics;
pub mod tableau;
