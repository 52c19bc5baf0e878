//! Reference decoder that scores every word sequence independently.

use crate::acoustic::{forward_loglik, viterbi_loglik, ScoredFrames};
use crate::error::{Error, Result};
use crate::lm::NGramLM;
use crate::math::log_sum_exp;
use crate::topology::{build_ctc_sequence_graph, build_hmm_sequence_graph, StateGraph};
use crate::types::{rank_order, Hypothesis, Lexicon, ScoreWeights, UnitInventory};

use super::{search_score, TopologyKind};

/// Upper bound on the number of word sequences enumerated.
pub const ENUMERATION_LIMIT: usize = 1_000_000;

/// How the acoustic score of a word sequence pools its pronunciations and paths.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AcousticMode {
    /// Best single path over all pronunciation combinations.
    Viterbi,
    /// Log-sum over all paths and pronunciation combinations.
    ForwardSum,
}

/// One graph per pronunciation combination of `words`. An empty sequence
/// yields a single all-blank CTC graph, and no graph under an HMM topology.
pub fn word_sequence_graphs<S: AsRef<str>>(
    words: &[S],
    lexicon: &Lexicon,
    inventory: &UnitInventory,
    kind: TopologyKind,
) -> Result<Vec<StateGraph>> {
    let mut combos: Vec<Vec<usize>> = vec![Vec::new()];
    for w in words {
        let prons = lexicon
            .pronunciations(w.as_ref())
            .ok_or_else(|| Error::UnknownWord(w.as_ref().to_string()))?;
        combos = combos
            .iter()
            .flat_map(|prefix| {
                prons.iter().map(move |p| {
                    let mut units = prefix.clone();
                    units.extend_from_slice(p);
                    units
                })
            })
            .collect();
    }
    match kind {
        TopologyKind::Ctc => combos.iter().map(|u| build_ctc_sequence_graph(u, inventory)).collect(),
        TopologyKind::Hmm { .. } if words.is_empty() => Ok(Vec::new()),
        TopologyKind::Hmm { states_per_unit } => combos
            .iter()
            .map(|u| build_hmm_sequence_graph(u, states_per_unit))
            .collect(),
    }
}

/// Scores every word sequence of at most `max_words` words and returns the
/// `nbest` best feasible ones, ranked like the beam decoder.
#[allow(clippy::too_many_arguments)]
pub fn exhaustive_decode(
    frames: &ScoredFrames,
    lexicon: &Lexicon,
    inventory: &UnitInventory,
    lm: &NGramLM,
    weights: &ScoreWeights,
    max_words: usize,
    kind: TopologyKind,
    mode: AcousticMode,
    nbest: usize,
) -> Result<Vec<Hypothesis>> {
    weights.validate()?;
    if lexicon.is_empty() {
        return Err(Error::invalid("empty lexicon"));
    }
    let vocab: Vec<&str> = lexicon.words().collect();
    let frames_per_unit = match kind {
        TopologyKind::Ctc => 1,
        TopologyKind::Hmm { states_per_unit } => states_per_unit,
    };
    // Fewest frames any pronunciation of each word can occupy.
    let min_frames: Vec<usize> = vocab
        .iter()
        .map(|w| {
            lexicon.pronunciations(w).unwrap().iter().map(Vec::len).min().unwrap() * frames_per_unit
        })
        .collect();
    let max_words = max_words.min(frames.num_frames());
    let mut total = 0usize;
    let mut layer = 1usize;
    for _ in 0..=max_words {
        total = total.saturating_add(layer);
        layer = layer.saturating_mul(vocab.len());
    }
    if total > ENUMERATION_LIMIT {
        return Err(Error::invalid(format!(
            "{} words up to length {max_words} exceeds the enumeration limit",
            vocab.len()
        )));
    }

    let mut scored: Vec<(f64, Vec<String>, f64, f64)> = Vec::new();
    let mut stack: Vec<(Vec<usize>, usize)> = vec![(Vec::new(), 0)];
    while let Some((seq, used)) = stack.pop() {
        let words: Vec<String> = seq.iter().map(|&i| vocab[i].to_string()).collect();
        let graphs = word_sequence_graphs(&words, lexicon, inventory, kind)?;
        let mut per_graph = Vec::with_capacity(graphs.len());
        for g in &graphs {
            per_graph.push(match mode {
                AcousticMode::Viterbi => viterbi_loglik(g, frames)?,
                AcousticMode::ForwardSum => forward_loglik(g, frames)?,
            });
        }
        let acoustic = match mode {
            AcousticMode::Viterbi => per_graph.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            AcousticMode::ForwardSum => log_sum_exp(per_graph),
        };
        if acoustic > f64::NEG_INFINITY {
            let lm_score = lm.score_sequence(&words);
            let score = search_score(acoustic, lm_score, words.len(), weights);
            if score > f64::NEG_INFINITY {
                scored.push((score, words, acoustic, lm_score));
            }
        }
        if seq.len() < max_words {
            for (i, &need) in min_frames.iter().enumerate().rev() {
                if used + need <= frames.num_frames() {
                    let mut next = seq.clone();
                    next.push(i);
                    stack.push((next, used + need));
                }
            }
        }
    }
    scored.sort_by(|a, b| rank_order(a.0, &a.1, b.0, &b.1));
    scored.truncate(nbest);
    Ok(scored
        .into_iter()
        .map(|(_, words, ac, lm_score)| Hypothesis::new(words, ac, lm_score))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acoustic::log_posteriors;
    use crate::lm::train_ngram;
    use crate::types::{PosteriorMatrix, UnitKind};

    fn setup() -> (UnitInventory, Lexicon, NGramLM) {
        let labels = ["<b>", "a", "b"].iter().map(|s| s.to_string()).collect();
        let inv = UnitInventory::new(labels, Some(0), UnitKind::Graphemic).unwrap();
        let mut lex = Lexicon::new();
        lex.add("A", vec![1], &inv).unwrap();
        let lm = train_ngram(&[vec!["A"]], 1, 0.5).unwrap();
        (inv, lex, lm)
    }

    #[test]
    fn empty_and_single_word() {
        let (inv, lex, lm) = setup();
        let post = PosteriorMatrix::new("u", vec![vec![0.5, 0.4, 0.1]]).unwrap();
        let w = ScoreWeights { lm_scale: 0.0, ..Default::default() };
        let hyps =
            exhaustive_decode(&log_posteriors(&post), &lex, &inv, &lm, &w, 1, TopologyKind::Ctc, AcousticMode::Viterbi, 10)
                .unwrap();
        assert_eq!(hyps.len(), 2);
        assert!(hyps[0].words.is_empty());
        assert!((hyps[0].acoustic_logp - 0.5f64.ln()).abs() < 1e-12);
        assert_eq!(hyps[1].words, vec!["A"]);
    }

    #[test]
    fn forward_sum_pools_pronunciations() {
        let (inv, mut lex, lm) = setup();
        lex.add("A", vec![2], &inv).unwrap();
        let post = PosteriorMatrix::new("u", vec![vec![0.2, 0.5, 0.3]]).unwrap();
        let hyps = exhaustive_decode(
            &log_posteriors(&post),
            &lex,
            &inv,
            &lm,
            &ScoreWeights::default(),
            1,
            TopologyKind::Ctc,
            AcousticMode::ForwardSum,
            10,
        )
        .unwrap();
        let a = hyps.iter().find(|h| h.words == vec!["A"]).unwrap();
        assert!((a.acoustic_logp - 0.8f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn hmm_has_no_empty_hypothesis() {
        let (inv, lex, _) = setup();
        assert!(word_sequence_graphs::<&str>(&[], &lex, &inv, TopologyKind::Hmm { states_per_unit: 1 })
            .unwrap()
            .is_empty());
        assert_eq!(word_sequence_graphs::<&str>(&[], &lex, &inv, TopologyKind::Ctc).unwrap().len(), 1);
    }

    #[test]
    fn ties_break_lexicographically() {
        let labels = ["<b>", "a", "b"].iter().map(|s| s.to_string()).collect();
        let inv = UnitInventory::new(labels, Some(0), UnitKind::Graphemic).unwrap();
        let mut lex = Lexicon::new();
        lex.add("B", vec![2], &inv).unwrap();
        lex.add("A", vec![1], &inv).unwrap();
        let lm = train_ngram(&[vec!["A"], vec!["B"]], 1, 0.5).unwrap();
        let post = PosteriorMatrix::new("u", vec![vec![0.0, 0.5, 0.5]]).unwrap();
        let hyps = exhaustive_decode(
            &log_posteriors(&post),
            &lex,
            &inv,
            &lm,
            &ScoreWeights::default(),
            1,
            TopologyKind::Ctc,
            AcousticMode::Viterbi,
            2,
        )
        .unwrap();
        assert_eq!(hyps[0].words, vec!["A"]);
        assert_eq!(hyps[1].words, vec!["B"]);
    }
}
