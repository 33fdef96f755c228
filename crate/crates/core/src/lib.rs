//! Cascaded max-marginal decoding for bounded-order linear-chain CRFs.

pub mod analysis;
pub mod cascade;
pub mod length_relax;
pub mod potentials;
pub mod semiring_chain;
pub mod vocab;
