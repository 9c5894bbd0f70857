//! Self-aligning reward learning.
//!
//! An outer loop fits the parameters of a declarative reward template so
//! that trajectory rankings under the learned reward agree with rankings
//! from an oracle, while an inner loop trains an off-policy actor-critic on
//! rewards relabeled from stored features.

pub mod alignment;
pub mod envkit;
pub mod harness;
pub mod oracle;
pub mod policy;
pub mod replay;
pub mod reward;
