use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::acoustic::{forward_loglik, log_posteriors, ScoredFrames};
use crate::error::{Error, Result};
use crate::io::read_text;
use crate::math::LOG_ZERO;
use crate::topology::build_ctc_sequence_graph;
use crate::types::{Hypothesis, PosteriorMatrix, UnitInventory};

/// Label-synchronous sequence scorer: `ln P(C|O)` for a whole unit sequence.
///
/// Implementations are deterministic and total. A sequence that cannot be
/// scored gets `-inf`, never an error.
pub trait LabelScorer: Send + Sync {
    fn score(&self, utterance_id: &str, units: &[usize]) -> f64;
}

/// Externally computed scores keyed by utterance and unit sequence.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FileScorerTable {
    entries: HashMap<String, HashMap<Vec<usize>, f64>>,
}

impl FileScorerTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rejects non-finite scores and duplicate keys.
    pub fn insert(&mut self, utterance_id: &str, units: Vec<usize>, log_prob: f64) -> Result<()> {
        if !log_prob.is_finite() {
            return Err(Error::invalid(format!("scorer entry for {utterance_id:?} is not finite")));
        }
        let per_utt = self.entries.entry(utterance_id.to_string()).or_default();
        if per_utt.contains_key(&units) {
            return Err(Error::invalid(format!("duplicate scorer entry for {utterance_id:?} {units:?}")));
        }
        per_utt.insert(units, log_prob);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(HashMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn utterances(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Entries sorted by utterance id, then unit sequence.
    pub fn sorted_entries(&self) -> Vec<(&str, &[usize], f64)> {
        let mut out: Vec<_> = self
            .entries
            .iter()
            .flat_map(|(utt, m)| m.iter().map(move |(u, &p)| (utt.as_str(), u.as_slice(), p)))
            .collect();
        out.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        out
    }
}

impl LabelScorer for FileScorerTable {
    fn score(&self, utterance_id: &str, units: &[usize]) -> f64 {
        self.entries
            .get(utterance_id)
            .and_then(|m| m.get(units))
            .copied()
            .unwrap_or(LOG_ZERO)
    }
}

/// `utt <tab> logp <tab> unit unit ...`; the unit field may be empty.
pub fn parse_scorer_table(text: &str, inventory: &UnitInventory, source: &str) -> Result<FileScorerTable> {
    let mut table = FileScorerTable::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 && fields.len() != 3 {
            return Err(Error::parse(source, lineno, format!("expected 3 tab-separated fields, found {}", fields.len())));
        }
        let log_prob: f64 = fields[1]
            .parse()
            .map_err(|_| Error::parse(source, lineno, format!("not a number: {:?}", fields[1])))?;
        let labels: Vec<&str> = fields.get(2).map_or_else(Vec::new, |f| f.split_whitespace().collect());
        let units = inventory
            .resolve(&labels)
            .map_err(|e| Error::parse(source, lineno, e.to_string()))?;
        table
            .insert(fields[0], units, log_prob)
            .map_err(|e| Error::parse(source, lineno, e.to_string()))?;
    }
    Ok(table)
}

pub fn load_scorer_table(path: &Path, inventory: &UnitInventory) -> Result<FileScorerTable> {
    parse_scorer_table(&read_text(path)?, inventory, &path.display().to_string())
}

pub fn format_scorer_table(table: &FileScorerTable, inventory: &UnitInventory) -> String {
    let mut out = String::new();
    for (utt, units, p) in table.sorted_entries() {
        let labels: Vec<&str> = units.iter().map(|&u| inventory.label(u)).collect();
        let _ = writeln!(out, "{utt}\t{p}\t{}", labels.join(" "));
    }
    out
}

/// Word-level auxiliary scores, such as an external neural LM:
/// `utt <tab> logp <tab> word word ...`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WordScoreTable {
    entries: HashMap<(String, Vec<String>), f64>,
}

impl WordScoreTable {
    pub fn get<S: AsRef<str>>(&self, utterance_id: &str, words: &[S]) -> Option<f64> {
        let key = (
            utterance_id.to_string(),
            words.iter().map(|w| w.as_ref().to_string()).collect(),
        );
        self.entries.get(&key).copied()
    }

    /// Fills `aux_logp`, using `-inf` for sequences absent from the table.
    pub fn annotate(&self, utterance_id: &str, hypotheses: &mut [Hypothesis]) {
        for h in hypotheses {
            h.aux_logp = Some(self.get(utterance_id, &h.words).unwrap_or(LOG_ZERO));
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn parse_word_score_table(text: &str, source: &str) -> Result<WordScoreTable> {
    let mut table = WordScoreTable::default();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 && fields.len() != 3 {
            return Err(Error::parse(source, lineno, format!("expected 3 tab-separated fields, found {}", fields.len())));
        }
        let log_prob: f64 = fields[1]
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| Error::parse(source, lineno, format!("invalid score {:?}", fields[1])))?;
        let words = fields
            .get(2)
            .map_or_else(Vec::new, |f| f.split_whitespace().map(str::to_uppercase).collect());
        if table.entries.insert((fields[0].to_string(), words), log_prob).is_some() {
            return Err(Error::parse(source, lineno, "duplicate entry"));
        }
    }
    Ok(table)
}

pub fn load_word_score_table(path: &Path) -> Result<WordScoreTable> {
    parse_word_score_table(&read_text(path)?, &path.display().to_string())
}

/// Scores `C` by its complete CTC probability under per-utterance posteriors.
#[derive(Clone, Debug)]
pub struct CtcSequenceScorer {
    inventory: UnitInventory,
    frames: HashMap<String, ScoredFrames>,
}

impl CtcSequenceScorer {
    pub fn new(posteriors: impl IntoIterator<Item = PosteriorMatrix>, inventory: &UnitInventory) -> Result<Self> {
        if inventory.blank().is_none() {
            return Err(Error::invalid("CTC scorer needs an inventory with a blank"));
        }
        let mut frames = HashMap::new();
        for p in posteriors {
            if p.num_units() != inventory.len() {
                return Err(Error::invalid(format!(
                    "posteriors for {:?} have {} units, inventory has {}",
                    p.utterance_id,
                    p.num_units(),
                    inventory.len()
                )));
            }
            if frames.insert(p.utterance_id.clone(), log_posteriors(&p)).is_some() {
                return Err(Error::invalid(format!("duplicate posteriors for {:?}", p.utterance_id)));
            }
        }
        Ok(Self {
            inventory: inventory.clone(),
            frames,
        })
    }
}

impl LabelScorer for CtcSequenceScorer {
    fn score(&self, utterance_id: &str, units: &[usize]) -> f64 {
        let Some(frames) = self.frames.get(utterance_id) else {
            return LOG_ZERO;
        };
        match build_ctc_sequence_graph(units, &self.inventory) {
            Ok(graph) => forward_loglik(&graph, frames).unwrap_or(LOG_ZERO),
            Err(_) => LOG_ZERO,
        }
    }
}

/// CTC scorer for a single utterance.
pub fn ctc_prefix_label_scorer(posteriors: PosteriorMatrix, inventory: &UnitInventory) -> Result<CtcSequenceScorer> {
    CtcSequenceScorer::new([posteriors], inventory)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::UnitKind;

    fn inventory() -> UnitInventory {
        let labels = ["<b>", "a", "b"].iter().map(|s| s.to_string()).collect();
        UnitInventory::new(labels, Some(0), UnitKind::Graphemic).unwrap()
    }

    #[test]
    fn table_round_trip() {
        let inv = inventory();
        let text = "u1\t-1.5\ta b\nu1\t-0.25\tb\nu2\t-3\t\n";
        let table = parse_scorer_table(text, &inv, "t").unwrap();
        assert_eq!(table.len(), 3);
        assert_eq!(table.score("u1", &[1, 2]), -1.5);
        assert_eq!(table.score("u2", &[]), -3.0);
        assert_eq!(table.score("u2", &[1]), f64::NEG_INFINITY);
        assert_eq!(table.score("zz", &[1]), f64::NEG_INFINITY);
        let again = parse_scorer_table(&format_scorer_table(&table, &inv), &inv, "t").unwrap();
        assert_eq!(again, table);
    }

    #[test]
    fn table_errors() {
        let inv = inventory();
        let dup = parse_scorer_table("u\t-1\ta\nu\t-2\ta\n", &inv, "t").unwrap_err();
        assert!(dup.to_string().contains("2"), "{dup}");
        assert!(parse_scorer_table("u\tinf\ta\n", &inv, "t").is_err());
        assert!(parse_scorer_table("u\t-1\tq\n", &inv, "t").is_err());
        assert!(parse_scorer_table("u -1 a\n", &inv, "t").is_err());
    }

    #[test]
    fn word_table_annotation() {
        let table = parse_word_score_table("u\t-2\ta b\nu\t-1\t\n", "t").unwrap();
        let mut hyps = vec![
            Hypothesis::new(vec!["A".into(), "B".into()], 0.0, 0.0),
            Hypothesis::new(vec![], 0.0, 0.0),
            Hypothesis::new(vec!["C".into()], 0.0, 0.0),
        ];
        table.annotate("u", &mut hyps);
        assert_eq!(hyps[0].aux_logp, Some(-2.0));
        assert_eq!(hyps[1].aux_logp, Some(-1.0));
        assert_eq!(hyps[2].aux_logp, Some(f64::NEG_INFINITY));
    }

    #[test]
    fn ctc_scorer_matches_forward() {
        let inv = inventory();
        let post = PosteriorMatrix::new("u", vec![vec![0.25, 0.5, 0.25], vec![0.5, 0.25, 0.25]]).unwrap();
        let scorer = ctc_prefix_label_scorer(post.clone(), &inv).unwrap();
        let g = build_ctc_sequence_graph(&[1], &inv).unwrap();
        let expected = forward_loglik(&g, &log_posteriors(&post)).unwrap();
        assert_eq!(scorer.score("u", &[1]), expected);
        assert_eq!(scorer.score("u", &[1, 2, 1]), f64::NEG_INFINITY);
        assert_eq!(scorer.score("other", &[1]), f64::NEG_INFINITY);
        assert_eq!(scorer.score("u", &[0]), f64::NEG_INFINITY);
    }

    #[test]
    fn ctc_scores_are_subnormalised() {
        let inv = inventory();
        let rows = vec![vec![0.2, 0.5, 0.3], vec![0.6, 0.1, 0.3], vec![0.3, 0.3, 0.4]];
        let scorer = ctc_prefix_label_scorer(PosteriorMatrix::new("u", rows).unwrap(), &inv).unwrap();
        let mut total = scorer.score("u", &[]).exp();
        for a in 1..3 {
            total += scorer.score("u", &[a]).exp();
            for b in 1..3 {
                total += scorer.score("u", &[a, b]).exp();
            }
        }
        assert!(total <= 1.0 + 1e-12, "{total}");
    }
}
