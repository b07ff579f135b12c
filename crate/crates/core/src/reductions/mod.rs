//! Known objectives recovered as PDG inconsistency or as LIR runs.

pub mod decision;
pub mod gan;
pub mod transformer;
pub mod gfn_identity;
pub mod em;
pub mod bp;
pub mod oracle;
pub mod triad;
pub mod verify;
