//! Frame-synchronous decoding over a lexical prefix tree.

mod exhaustive;
mod search;
mod tree;

pub use exhaustive::{exhaustive_decode, word_sequence_graphs, AcousticMode, ENUMERATION_LIMIT};
pub use search::{beam_decode, DecodeOutput};
pub use tree::{build_prefix_tree, PrefixTree, TreeNode, WordEnd};

use crate::error::{Error, Result};
use crate::types::ScoreWeights;

/// HMM topology used to expand each unit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TopologyKind {
    /// CTC-equivalent topology with a shared, optional blank.
    Ctc,
    /// Left-to-right chain of `states_per_unit` states per unit.
    Hmm { states_per_unit: usize },
}

impl std::str::FromStr for TopologyKind {
    type Err = Error;

    /// `ctc`, `hmm` (one state per unit) or `hmm:N`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ctc" => Ok(TopologyKind::Ctc),
            "hmm" => Ok(TopologyKind::Hmm { states_per_unit: 1 }),
            _ => {
                let n = s
                    .strip_prefix("hmm:")
                    .and_then(|n| n.parse::<usize>().ok())
                    .filter(|n| *n >= 1)
                    .ok_or_else(|| Error::invalid(format!("unknown topology {s:?}")))?;
                Ok(TopologyKind::Hmm { states_per_unit: n })
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecodeConfig {
    /// Maximum live tokens per frame.
    pub beam_width: usize,
    /// Tokens worse than the frame's best by more than this are pruned.
    pub score_margin: f64,
    pub nbest: usize,
    pub weights: ScoreWeights,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            beam_width: 10_000,
            score_margin: 50.0,
            nbest: 20,
            weights: ScoreWeights::default(),
        }
    }
}

impl DecodeConfig {
    /// No pruning at all: the search is exact.
    pub fn exact(nbest: usize, weights: ScoreWeights) -> Self {
        Self {
            beam_width: usize::MAX,
            score_margin: f64::INFINITY,
            nbest,
            weights,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beam_width == 0 {
            return Err(Error::invalid("beam width must be positive"));
        }
        if self.nbest == 0 {
            return Err(Error::invalid("n-best size must be positive"));
        }
        if self.score_margin.is_nan() || self.score_margin < 0.0 {
            return Err(Error::invalid("score margin must be non-negative"));
        }
        self.weights.validate()
    }
}

/// Partial-path score used for pruning and ranking during search:
/// `ac + α·lm + penalty·words`.
pub(crate) fn search_score(acoustic: f64, lm: f64, words: usize, weights: &ScoreWeights) -> f64 {
    acoustic + weights.lm_scale * lm + weights.insertion_penalty * words as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn topology_parsing() {
        assert_eq!("ctc".parse::<TopologyKind>().unwrap(), TopologyKind::Ctc);
        assert_eq!("hmm".parse::<TopologyKind>().unwrap(), TopologyKind::Hmm { states_per_unit: 1 });
        assert_eq!("hmm:3".parse::<TopologyKind>().unwrap(), TopologyKind::Hmm { states_per_unit: 3 });
        assert!("hmm:0".parse::<TopologyKind>().is_err());
        assert!("wfst".parse::<TopologyKind>().is_err());
    }

    #[test]
    fn config_validation() {
        assert!(DecodeConfig::default().validate().is_ok());
        let bad = DecodeConfig {
            nbest: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(DecodeConfig::exact(5, ScoreWeights::default()).validate().is_ok());
    }
}
