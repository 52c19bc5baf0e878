//! Extended source-channel rescoring.
//!
//! Each n-best word sequence `W` gains a label-synchronous score
//! `ln Σ_C P(C|O)`, summed over the unit sequences `C` the lexicon maps `W`
//! to, and the list is re-ranked by
//! `ac + α·lm + β·scorer + penalty·words (+ aux_scale·aux)`.

mod cmaes;
mod scorer;
mod tune;

pub use cmaes::{CmaEs, CmaEsParams};
pub use scorer::{
    ctc_prefix_label_scorer, format_scorer_table, load_scorer_table, load_word_score_table,
    parse_scorer_table, parse_word_score_table, CtcSequenceScorer, FileScorerTable, LabelScorer,
    WordScoreTable,
};
pub use tune::{dev_wer, tune_weights, DevUtterance, GenerationRecord, TuneConfig, TuneResult};

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::math::log_sum_exp;
use crate::types::{rank_order, Hypothesis, Lexicon, NBestList, ScoreWeights};

/// Default maximum number of unit sequences summed per hypothesis.
pub const DEFAULT_PRONUNCIATION_CAP: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SumOptions {
    /// Maximum number of pronunciation combinations summed.
    pub cap: usize,
    /// Divide each sequence score by its length before summing.
    pub length_normalize: bool,
}

impl Default for SumOptions {
    fn default() -> Self {
        Self {
            cap: DEFAULT_PRONUNCIATION_CAP,
            length_normalize: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PronunciationSum {
    pub log_prob: f64,
    /// Unit sequences actually scored.
    pub sequences: usize,
    /// Set when the Cartesian product exceeded the cap.
    pub truncated: bool,
}

/// `ln Σ_C exp(score(C))` over the concatenated per-word pronunciations.
pub fn pronunciation_sum<S: AsRef<str>>(
    lexicon: &Lexicon,
    words: &[S],
    scorer: &dyn LabelScorer,
    utterance_id: &str,
    cap: usize,
) -> Result<PronunciationSum> {
    pronunciation_sum_with(
        lexicon,
        words,
        scorer,
        utterance_id,
        &SumOptions {
            cap,
            ..Default::default()
        },
    )
}

/// Candidate combination: total units, then pronunciation indices.
type Combo = (usize, Vec<usize>);

/// When the product exceeds the cap, keeps the `cap` combinations with the
/// fewest total units, ties broken by the pronunciation-index tuple. Pruning
/// after each word is exact: a kept combination's prefix is always kept.
pub fn pronunciation_sum_with<S: AsRef<str>>(
    lexicon: &Lexicon,
    words: &[S],
    scorer: &dyn LabelScorer,
    utterance_id: &str,
    options: &SumOptions,
) -> Result<PronunciationSum> {
    if options.cap == 0 {
        return Err(Error::invalid("pronunciation cap must be at least 1"));
    }
    let prons: Vec<_> = words
        .iter()
        .map(|w| {
            lexicon
                .pronunciations(w.as_ref())
                .ok_or_else(|| Error::UnknownWord(w.as_ref().to_string()))
        })
        .collect::<Result<_>>()?;

    let mut truncated = false;
    let mut combos: Vec<Combo> = vec![(0, Vec::new())];
    for word_prons in &prons {
        let mut next: Vec<Combo> = Vec::with_capacity(combos.len() * word_prons.len());
        for (len, idx) in &combos {
            for (p, pron) in word_prons.iter().enumerate() {
                let mut i = idx.clone();
                i.push(p);
                next.push((len + pron.len(), i));
            }
        }
        if next.len() > options.cap {
            next.sort();
            next.truncate(options.cap);
            truncated = true;
        }
        combos = next;
    }

    let scores: Vec<f64> = combos
        .iter()
        .map(|(len, idx)| {
            let units: Vec<usize> = idx
                .iter()
                .zip(&prons)
                .flat_map(|(&p, word_prons)| word_prons[p].iter().copied())
                .collect();
            let s = scorer.score(utterance_id, &units);
            if options.length_normalize && *len > 0 {
                s / *len as f64
            } else {
                s
            }
        })
        .collect();
    Ok(PronunciationSum {
        log_prob: log_sum_exp(scores),
        sequences: combos.len(),
        truncated,
    })
}

/// `weight · value`, with a zero weight silencing the term even when the
/// value is infinite or absent.
fn scaled(weight: f64, value: Option<f64>) -> f64 {
    match value {
        Some(v) if weight != 0.0 => weight * v,
        _ => 0.0,
    }
}

/// `ac + α·lm + β·scorer + penalty·words + aux_scale·aux`. A missing scorer
/// or auxiliary score contributes nothing.
pub fn combine_scores(h: &Hypothesis, weights: &ScoreWeights) -> f64 {
    h.acoustic_logp
        + scaled(weights.lm_scale, Some(h.lm_logp))
        + scaled(weights.scorer_scale, h.scorer_logp)
        + weights.insertion_penalty * h.word_count() as f64
        + scaled(weights.aux_scale, h.aux_logp)
}

/// Best-first order under `combine_scores`; ties broken lexicographically.
pub fn rerank(hypotheses: &mut [Hypothesis], weights: &ScoreWeights) {
    let mut keyed: Vec<(f64, Hypothesis)> = hypotheses
        .iter()
        .cloned()
        .map(|h| (combine_scores(&h, weights), h))
        .collect();
    keyed.sort_by(|a, b| compare_ranked(a.0, &a.1, b.0, &b.1));
    for (slot, (_, h)) in hypotheses.iter_mut().zip(keyed) {
        *slot = h;
    }
}

fn compare_ranked(a_score: f64, a: &Hypothesis, b_score: f64, b: &Hypothesis) -> Ordering {
    rank_order(a_score, &a.words, b_score, &b.words)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RescoreOutput {
    pub nbest: NBestList,
    /// Hypotheses whose pronunciation sum hit the cap.
    pub truncated: usize,
}

/// Annotates each hypothesis with its pronunciation-summed scorer score and
/// re-ranks the list. Hypotheses are never added or removed.
pub fn rescore_nbest(
    nbest: &NBestList,
    scorer: &dyn LabelScorer,
    lexicon: &Lexicon,
    weights: &ScoreWeights,
    cap: usize,
) -> Result<NBestList> {
    let options = SumOptions {
        cap,
        ..Default::default()
    };
    Ok(rescore_nbest_with(nbest, scorer, lexicon, weights, &options)?.nbest)
}

pub fn rescore_nbest_with(
    nbest: &NBestList,
    scorer: &dyn LabelScorer,
    lexicon: &Lexicon,
    weights: &ScoreWeights,
    options: &SumOptions,
) -> Result<RescoreOutput> {
    if nbest.is_empty() {
        return Err(Error::invalid(format!("n-best list for {:?} is empty", nbest.utterance_id)));
    }
    weights.validate()?;
    let mut truncated = 0;
    let mut hypotheses = nbest.hypotheses.clone();
    for h in &mut hypotheses {
        let sum = pronunciation_sum_with(lexicon, &h.words, scorer, &nbest.utterance_id, options)?;
        truncated += usize::from(sum.truncated);
        h.scorer_logp = Some(sum.log_prob);
    }
    rerank(&mut hypotheses, weights);
    Ok(RescoreOutput {
        nbest: NBestList::new(nbest.utterance_id.clone(), hypotheses),
        truncated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{UnitInventory, UnitKind};
    use std::collections::HashMap;

    struct MapScorer(HashMap<Vec<usize>, f64>);

    impl LabelScorer for MapScorer {
        fn score(&self, _utterance_id: &str, units: &[usize]) -> f64 {
            self.0.get(units).copied().unwrap_or(f64::NEG_INFINITY)
        }
    }

    fn inventory() -> UnitInventory {
        let labels = ["<b>", "a", "b", "c"].iter().map(|s| s.to_string()).collect();
        UnitInventory::new(labels, Some(0), UnitKind::Phonetic).unwrap()
    }

    fn hyp(words: &[&str], ac: f64, lm: f64, scorer: Option<f64>) -> Hypothesis {
        let mut h = Hypothesis::new(words.iter().map(|w| w.to_string()).collect(), ac, lm);
        h.scorer_logp = scorer;
        h
    }

    #[test]
    fn two_pronunciations_log_sum() {
        let inv = inventory();
        let mut lex = Lexicon::new();
        lex.add("A", vec![1], &inv).unwrap();
        lex.add("A", vec![2], &inv).unwrap();
        let scorer = MapScorer([(vec![1], -1.0), (vec![2], -2.0)].into_iter().collect());
        let s = pronunciation_sum(&lex, &["A"], &scorer, "u", 64).unwrap();
        // ln(e^-1 + e^-2) = -0.686738.
        assert!((s.log_prob - (-0.686738)).abs() < 1e-6);
        assert_eq!(s.sequences, 2);
        assert!(!s.truncated);
    }

    #[test]
    fn single_pronunciation_is_lookup() {
        let inv = inventory();
        let mut lex = Lexicon::new();
        lex.add("A", vec![1, 2], &inv).unwrap();
        lex.add("B", vec![3], &inv).unwrap();
        let scorer = MapScorer([(vec![1, 2, 3], -4.25)].into_iter().collect());
        let s = pronunciation_sum(&lex, &["A", "B"], &scorer, "u", 64).unwrap();
        assert_eq!(s.log_prob, -4.25);
    }

    #[test]
    fn infinite_sentinels_are_absorbed() {
        let inv = inventory();
        let mut lex = Lexicon::new();
        lex.add("A", vec![1], &inv).unwrap();
        lex.add("A", vec![2], &inv).unwrap();
        let scorer = MapScorer([(vec![1], -3.0)].into_iter().collect());
        assert_eq!(pronunciation_sum(&lex, &["A"], &scorer, "u", 64).unwrap().log_prob, -3.0);
        let none = MapScorer(HashMap::new());
        assert_eq!(pronunciation_sum(&lex, &["A"], &none, "u", 64).unwrap().log_prob, f64::NEG_INFINITY);
        assert!(matches!(pronunciation_sum(&lex, &["Z"], &none, "u", 64), Err(Error::UnknownWord(_))));
    }

    #[test]
    fn cap_keeps_shortest_sequences() {
        let inv = inventory();
        let mut lex = Lexicon::new();
        lex.add("A", vec![1, 1, 1], &inv).unwrap();
        lex.add("A", vec![2], &inv).unwrap();
        lex.add("B", vec![3], &inv).unwrap();
        lex.add("B", vec![1, 2], &inv).unwrap();
        // Lengths: [1,1,1]+[3]=4, [1,1,1]+[1,2]=5, [2]+[3]=2, [2]+[1,2]=3.
        let scores = [(vec![2, 3], -1.0), (vec![2, 1, 2], -2.0), (vec![1, 1, 1, 3], -0.5)];
        let scorer = MapScorer(scores.into_iter().collect());
        let s = pronunciation_sum(&lex, &["A", "B"], &scorer, "u", 2).unwrap();
        assert!(s.truncated);
        assert_eq!(s.sequences, 2);
        assert!((s.log_prob - log_sum_exp([-1.0, -2.0])).abs() < 1e-12);
    }

    #[test]
    fn length_normalisation() {
        let inv = inventory();
        let mut lex = Lexicon::new();
        lex.add("A", vec![1, 2], &inv).unwrap();
        let scorer = MapScorer([(vec![1, 2], -3.0)].into_iter().collect());
        let opts = SumOptions {
            length_normalize: true,
            ..Default::default()
        };
        assert_eq!(pronunciation_sum_with(&lex, &["A"], &scorer, "u", &opts).unwrap().log_prob, -1.5);
    }

    #[test]
    fn combine_examples() {
        let h = hyp(&["A"], -10.0, -2.0, Some(-3.0));
        let w = |a, b| ScoreWeights {
            lm_scale: a,
            scorer_scale: b,
            ..Default::default()
        };
        assert_eq!(combine_scores(&h, &w(1.0, 1.0)), -15.0);
        assert_eq!(combine_scores(&h, &w(0.5, 2.0)), -17.0);
        assert_eq!(combine_scores(&h, &w(0.7, 0.0)), -10.0 + 0.7 * -2.0);
        let missing = hyp(&["A"], -10.0, -2.0, None);
        assert_eq!(combine_scores(&missing, &w(1.0, 1.0)), -12.0);
        let infinite = hyp(&["A"], -10.0, -2.0, Some(f64::NEG_INFINITY));
        assert_eq!(combine_scores(&infinite, &w(1.0, 0.0)), -12.0);
    }

    #[test]
    fn rescoring_flips_ranking() {
        let inv = inventory();
        let mut lex = Lexicon::new();
        lex.add("A", vec![1], &inv).unwrap();
        lex.add("B", vec![2], &inv).unwrap();
        let scorer = MapScorer([(vec![1], -5.0), (vec![2], -1.0)].into_iter().collect());
        let nbest = NBestList::new("u", vec![hyp(&["A"], -10.0, 0.0, None), hyp(&["B"], -11.0, 0.0, None)]);
        let flip = ScoreWeights {
            lm_scale: 0.0,
            scorer_scale: 1.0,
            ..Default::default()
        };
        let out = rescore_nbest(&nbest, &scorer, &lex, &flip, 64).unwrap();
        assert_eq!(out.hypotheses[0].words, vec!["B"]);
        assert_eq!(out.hypotheses[0].scorer_logp, Some(-1.0));
        let keep = ScoreWeights {
            lm_scale: 0.0,
            ..Default::default()
        };
        let out = rescore_nbest(&nbest, &scorer, &lex, &keep, 64).unwrap();
        assert_eq!(out.hypotheses[0].words, vec!["A"]);
        assert_eq!(out.len(), 2);
        assert!(rescore_nbest(&NBestList::new("u", vec![]), &scorer, &lex, &keep, 64).is_err());
    }
}
