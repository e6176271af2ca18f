//! Sum-product networks over continuous variables with Gaussian leaves.
//!
//! An [`SpnGraph`] is a rooted DAG stored as a dense node table. Validity
//! (acyclicity, completeness, decomposability) is checked by
//! [`SpnGraph::validate`]; inference runs a single bottom-up pass in the log
//! domain and supports partial evidence where each variable is observed,
//! missing, or upper-bounded.

mod evidence;
mod graph;
mod inference;

pub use evidence::{Evidence, EvidenceState};
pub use graph::{GaussianLeaf, NodeId, SpnGraph, SpnNode, ValidityReport};
