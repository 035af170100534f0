//! Edit-chain re-alignment toolkit.
//!
//! The pipeline: infer minimum-cost token edit scripts between an unaligned
//! *source* response and an aligned *target* ([`edit`]), render them in a
//! parseable natural-language grammar ([`decipher`]), assemble augmented
//! training corpora ([`augment`]), train a small autoregressive policy on
//! them ([`policy`], [`train`]), refine it with adversarial-imitation and
//! value-modeling objectives ([`refine`]), and score the result ([`eval`]).

pub mod augment;
pub mod ckpt;
pub mod corpus;
pub mod decipher;
pub mod edit;
pub mod eval;
pub mod policy;
pub mod refine;
pub mod train;

pub use corpus::{AlignmentOracle, AlignmentSample, Split, Token, Vocab};
pub use edit::{CostSet, EditOp, EditScript};
