//! Frame-synchronous source-channel decoding with word-level rescoring.
//!
//! The pipeline mirrors a conventional hybrid recogniser: frame posteriors are
//! turned into pseudo log-likelihoods ([`acoustic`]), searched over a lexical
//! prefix tree with an n-gram language model ([`decoder`], [`lm`]), and the
//! resulting n-best lists are rescored with label-synchronous scorers summed
//! over pronunciations ([`isca`]). Interpolation weights are tuned against
//! word error rate ([`eval`]) with CMA-ES.

pub mod acoustic;
pub mod decoder;
pub mod error;
pub mod eval;
pub mod io;
pub mod isca;
pub mod lm;
pub mod math;
pub mod topology;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    Hypothesis, Lexicon, NBestList, PosteriorMatrix, Pronunciation, ScoreWeights, UnitInventory,
    UnitKind, UnitPrior,
};
