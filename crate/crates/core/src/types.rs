//! Domain types shared across the decoding pipeline.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};

/// Tolerance for row-stochasticity of posterior frames and prior vectors.
pub const STOCHASTIC_TOLERANCE: f64 = 1e-6;

/// Default floor applied to unit priors before taking logs.
pub const DEFAULT_PRIOR_FLOOR: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum UnitKind {
    Graphemic,
    Phonetic,
}

/// Ordered set of context-independent subword units, optionally with a CTC
/// blank.
#[derive(Clone, Debug)]
pub struct UnitInventory {
    labels: Vec<String>,
    index: HashMap<String, usize>,
    blank: Option<usize>,
    kind: UnitKind,
}

impl PartialEq for UnitInventory {
    fn eq(&self, other: &Self) -> bool {
        self.labels == other.labels && self.blank == other.blank && self.kind == other.kind
    }
}

impl UnitInventory {
    pub fn new(labels: Vec<String>, blank: Option<usize>, kind: UnitKind) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::invalid("unit inventory is empty"));
        }
        let mut index = HashMap::with_capacity(labels.len());
        for (i, label) in labels.iter().enumerate() {
            if label.is_empty() || label.chars().any(char::is_whitespace) {
                return Err(Error::invalid(format!("invalid unit label {label:?}")));
            }
            if index.insert(label.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate unit label {label:?}")));
            }
        }
        if let Some(b) = blank {
            if b >= labels.len() {
                return Err(Error::invalid(format!(
                    "blank index {b} out of range for {} units",
                    labels.len()
                )));
            }
        }
        Ok(Self {
            labels,
            index,
            blank,
            kind,
        })
    }

    /// Like [`UnitInventory::new`] but names the blank by label.
    pub fn with_blank_label(
        labels: Vec<String>,
        blank_label: Option<&str>,
        kind: UnitKind,
    ) -> Result<Self> {
        let blank = match blank_label {
            Some(b) => Some(
                labels
                    .iter()
                    .position(|l| l == b)
                    .ok_or_else(|| Error::UnknownUnit(b.to_string()))?,
            ),
            None => None,
        };
        Self::new(labels, blank, kind)
    }

    /// Blank at index 0 followed by one unit per character of `alphabet`.
    pub fn graphemic(blank_label: &str, alphabet: &str) -> Result<Self> {
        let mut labels = vec![blank_label.to_string()];
        labels.extend(alphabet.chars().map(String::from));
        Self::new(labels, Some(0), UnitKind::Graphemic)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, unit: usize) -> &str {
        &self.labels[unit]
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn blank(&self) -> Option<usize> {
        self.blank
    }

    pub fn is_blank(&self, unit: usize) -> bool {
        self.blank == Some(unit)
    }

    pub fn kind(&self) -> UnitKind {
        self.kind
    }

    /// Resolve a sequence of labels to unit indices.
    pub fn resolve<S: AsRef<str>>(&self, labels: &[S]) -> Result<Vec<usize>> {
        labels
            .iter()
            .map(|l| {
                self.index_of(l.as_ref())
                    .ok_or_else(|| Error::UnknownUnit(l.as_ref().to_string()))
            })
            .collect()
    }
}

/// Per-frame posterior distributions `P(s_t = u | o_t)`, T rows by U columns.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorMatrix {
    pub utterance_id: String,
    num_units: usize,
    data: Vec<f64>,
}

impl PosteriorMatrix {
    /// Validates every row; rows within [`STOCHASTIC_TOLERANCE`] of summing to
    /// one are renormalised, anything further off is rejected.
    pub fn new(utterance_id: impl Into<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let num_units = rows.first().map_or(0, Vec::len);
        if num_units == 0 {
            return Err(Error::invalid("posterior matrix has no units"));
        }
        let mut data = Vec::with_capacity(rows.len() * num_units);
        for (t, row) in rows.into_iter().enumerate() {
            let row = normalize_row(row, num_units).map_err(|m| Error::invalid(format!("frame {t}: {m}")))?;
            data.extend(row);
        }
        Ok(Self {
            utterance_id: utterance_id.into(),
            num_units,
            data,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.data.len() / self.num_units
    }

    pub fn num_units(&self) -> usize {
        self.num_units
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.num_units..(t + 1) * self.num_units]
    }

    pub fn get(&self, t: usize, unit: usize) -> f64 {
        self.data[t * self.num_units + unit]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.num_units)
    }
}

/// Checks one frame and renormalises it. Errors are plain messages so the
/// caller can attach a location.
pub(crate) fn normalize_row(mut row: Vec<f64>, width: usize) -> std::result::Result<Vec<f64>, String> {
    if row.len() != width {
        return Err(format!("expected {width} values, found {}", row.len()));
    }
    if let Some(v) = row.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(format!("invalid probability {v}"));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > STOCHASTIC_TOLERANCE {
        return Err(format!("row sum {sum} is not 1"));
    }
    // Rows already stochastic to rounding are kept bit-exact.
    if (sum - 1.0).abs() > 1e-12 {
        for v in &mut row {
            *v /= sum;
        }
    }
    Ok(row)
}

/// Unit prior probabilities `P(s)`.
#[derive(Clone, Debug, PartialEq)]
pub struct UnitPrior {
    priors: Vec<f64>,
    floor: f64,
}

impl UnitPrior {
    /// `priors` must sum to one; entries below `floor` are raised to it and the
    /// remaining entries scaled down so the vector still sums to one.
    pub fn new(priors: Vec<f64>, floor: f64) -> Result<Self> {
        if floor.is_nan() || floor <= 0.0 {
            return Err(Error::invalid(format!("prior floor must be positive, got {floor}")));
        }
        if priors.is_empty() {
            return Err(Error::invalid("prior vector is empty"));
        }
        if floor * priors.len() as f64 >= 1.0 {
            return Err(Error::invalid("prior floor too large for the number of units"));
        }
        if priors.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::invalid("priors must be finite and non-negative"));
        }
        let sum: f64 = priors.iter().sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOLERANCE {
            return Err(Error::invalid(format!("priors sum to {sum}, not 1")));
        }
        Ok(Self {
            priors: apply_floor(priors, floor),
            floor,
        })
    }

    pub fn priors(&self) -> &[f64] {
        &self.priors
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn len(&self) -> usize {
        self.priors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.priors.is_empty()
    }
}

fn apply_floor(mut priors: Vec<f64>, floor: f64) -> Vec<f64> {
    let total: f64 = priors.iter().sum();
    for p in &mut priors {
        *p /= total;
    }
    let mut pinned = vec![false; priors.len()];
    // Raising one entry can push a scaled entry below the floor, so repeat
    // until no entry moves. Terminates in at most U rounds.
    loop {
        let mut changed = false;
        for (p, pin) in priors.iter_mut().zip(pinned.iter_mut()) {
            if !*pin && *p < floor {
                *p = floor;
                *pin = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let pinned_mass = floor * pinned.iter().filter(|p| **p).count() as f64;
        let free_mass: f64 = priors
            .iter()
            .zip(&pinned)
            .filter(|(_, pin)| !**pin)
            .map(|(p, _)| *p)
            .sum();
        let scale = (1.0 - pinned_mass) / free_mass;
        for (p, pin) in priors.iter_mut().zip(&pinned) {
            if !*pin {
                *p *= scale;
            }
        }
    }
    priors
}

/// A pronunciation is a non-empty sequence of unit indices.
pub type Pronunciation = Vec<usize>;

/// Word to pronunciations map. Words iterate in lexicographic order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Lexicon {
    entries: BTreeMap<String, Vec<Pronunciation>>,
}

impl Lexicon {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds one pronunciation for `word`, validated against `inventory`.
    pub fn add(&mut self, word: &str, pron: Pronunciation, inventory: &UnitInventory) -> Result<()> {
        if word.is_empty() || word.chars().any(char::is_whitespace) {
            return Err(Error::invalid(format!("invalid word {word:?}")));
        }
        if pron.is_empty() {
            return Err(Error::invalid(format!("empty pronunciation for {word:?}")));
        }
        for &u in &pron {
            if u >= inventory.len() {
                return Err(Error::invalid(format!("unit index {u} out of range in {word:?}")));
            }
            if inventory.is_blank(u) {
                return Err(Error::invalid(format!("blank used in pronunciation of {word:?}")));
            }
        }
        let prons = self.entries.entry(word.to_string()).or_default();
        if prons.contains(&pron) {
            return Err(Error::invalid(format!("duplicate pronunciation for {word:?}")));
        }
        prons.push(pron);
        Ok(())
    }

    pub fn pronunciations(&self, word: &str) -> Option<&[Pronunciation]> {
        self.entries.get(word).map(Vec::as_slice)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.entries.contains_key(word)
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[Pronunciation])> {
        self.entries.iter().map(|(w, p)| (w.as_str(), p.as_slice()))
    }

    /// Number of distinct words.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Builds a graphemic lexicon: each word (upper-cased) spells itself.
    ///
    /// Characters are looked up in the inventory as written after folding,
    /// then in lower case, so a lower-case alphabet works with upper-case
    /// word lists.
    pub fn graphemic<S: AsRef<str>>(words: &[S], inventory: &UnitInventory) -> Result<Self> {
        let mut lexicon = Self::new();
        for word in words {
            let word = word.as_ref().to_uppercase();
            if lexicon.contains(&word) {
                continue;
            }
            let mut pron = Vec::with_capacity(word.len());
            for ch in word.chars() {
                let s = ch.to_string();
                let unit = inventory
                    .index_of(&s)
                    .or_else(|| inventory.index_of(&s.to_lowercase()))
                    .ok_or(Error::UnknownUnit(s))?;
                pron.push(unit);
            }
            lexicon.add(&word, pron, inventory)?;
        }
        Ok(lexicon)
    }
}

/// Interpolation weights of the combined decoding score.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoreWeights {
    /// α, the language model scale.
    pub lm_scale: f64,
    /// β, the label-synchronous scorer scale.
    pub scorer_scale: f64,
    /// γ, subtracted from the blank log posterior.
    pub blank_penalty: f64,
    /// Added once per hypothesised word.
    pub insertion_penalty: f64,
    /// Scale for an optional second, auxiliary scorer. Zero disables it.
    pub aux_scale: f64,
}

impl Default for ScoreWeights {
    fn default() -> Self {
        Self {
            lm_scale: 1.0,
            scorer_scale: 0.0,
            blank_penalty: 0.0,
            insertion_penalty: 0.0,
            aux_scale: 0.0,
        }
    }
}

impl ScoreWeights {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("lm_scale", self.lm_scale),
            ("scorer_scale", self.scorer_scale),
            ("blank_penalty", self.blank_penalty),
            ("insertion_penalty", self.insertion_penalty),
            ("aux_scale", self.aux_scale),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be finite, got {v}")));
            }
        }
        for (name, v) in [
            ("lm_scale", self.lm_scale),
            ("scorer_scale", self.scorer_scale),
            ("aux_scale", self.aux_scale),
        ] {
            if v < 0.0 {
                return Err(Error::invalid(format!("{name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

/// One decoded word sequence with its separated log scores.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub words: Vec<String>,
    /// `ln p(O|W)`.
    pub acoustic_logp: f64,
    /// `ln P(W)`.
    pub lm_logp: f64,
    /// `ln Σ_C P(C|W,O)` once rescored.
    pub scorer_logp: Option<f64>,
    /// Score from an auxiliary scorer, e.g. an external neural LM.
    pub aux_logp: Option<f64>,
}

impl Hypothesis {
    pub fn new(words: Vec<String>, acoustic_logp: f64, lm_logp: f64) -> Self {
        Self {
            words,
            acoustic_logp,
            lm_logp,
            scorer_logp: None,
            aux_logp: None,
        }
    }

    pub fn word_count(&self) -> usize {
        self.words.len()
    }

    pub fn text(&self) -> String {
        self.words.join(" ")
    }
}

/// Ranking order used everywhere: higher score first, then lexicographic word
/// order.
pub fn rank_order(a_score: f64, a_words: &[String], b_score: f64, b_words: &[String]) -> Ordering {
    b_score
        .partial_cmp(&a_score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a_words.cmp(b_words))
}

/// Ranked hypotheses for one utterance, best first.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NBestList {
    pub utterance_id: String,
    pub hypotheses: Vec<Hypothesis>,
}

impl NBestList {
    pub fn new(utterance_id: impl Into<String>, hypotheses: Vec<Hypothesis>) -> Self {
        Self {
            utterance_id: utterance_id.into(),
            hypotheses,
        }
    }

    pub fn len(&self) -> usize {
        self.hypotheses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hypotheses.is_empty()
    }

    pub fn best(&self) -> Option<&Hypothesis> {
        self.hypotheses.first()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn letters() -> UnitInventory {
        UnitInventory::graphemic("<b>", "abcdefghijklmnopqrstuvwxyz").unwrap()
    }

    #[test]
    fn inventory_rejects_duplicates_and_bad_blank() {
        let dup = vec!["a".to_string(), "a".to_string()];
        assert!(UnitInventory::new(dup, None, UnitKind::Phonetic).is_err());
        let labels = vec!["a".to_string(), "b".to_string()];
        assert!(UnitInventory::new(labels.clone(), Some(2), UnitKind::Phonetic).is_err());
        assert!(UnitInventory::new(vec![String::new()], None, UnitKind::Phonetic).is_err());
        let inv = UnitInventory::with_blank_label(labels, Some("b"), UnitKind::Phonetic).unwrap();
        assert_eq!(inv.blank(), Some(1));
    }

    #[test]
    fn posterior_rows_are_validated() {
        let m = PosteriorMatrix::new("u", vec![vec![0.6, 0.4], vec![0.2, 0.8]]).unwrap();
        assert_eq!(m.num_frames(), 2);
        assert_eq!(m.get(1, 1), 0.8);
        assert!(PosteriorMatrix::new("u", vec![vec![0.7, 0.7]]).is_err());
        assert!(PosteriorMatrix::new("u", vec![vec![1.2, -0.2]]).is_err());
        assert!(PosteriorMatrix::new("u", vec![vec![0.5, 0.5], vec![1.0]]).is_err());
        let near = PosteriorMatrix::new("u", vec![vec![0.5, 0.5 + 5e-7]]).unwrap();
        assert!((near.row(0).iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn prior_floor_keeps_vector_normalised() {
        let p = UnitPrior::new(vec![1.0, 0.0], 1e-8).unwrap();
        assert_eq!(p.priors()[1], 1e-8);
        assert!((p.priors()[0] - (1.0 - 1e-8)).abs() < 1e-15);
        let p = UnitPrior::new(vec![0.5, 0.5 - 1e-9, 1e-9, 0.0], 1e-3).unwrap();
        assert!(p.priors().iter().all(|v| *v >= 1e-3));
        assert!((p.priors().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(UnitPrior::new(vec![0.5, 0.6], 1e-8).is_err());
    }

    #[test]
    fn graphemic_lexicon_spells_words() {
        let inv = letters();
        let lex = Lexicon::graphemic(&["cat", "A"], &inv).unwrap();
        let c = inv.index_of("c").unwrap();
        let a = inv.index_of("a").unwrap();
        let t = inv.index_of("t").unwrap();
        assert_eq!(lex.pronunciations("CAT").unwrap(), &[vec![c, a, t]]);
        assert_eq!(lex.pronunciations("A").unwrap(), &[vec![a]]);
        match Lexicon::graphemic(&["CAFÉ"], &inv) {
            Err(Error::UnknownUnit(u)) => assert_eq!(u, "É"),
            other => panic!("expected unknown unit, got {other:?}"),
        }
    }

    #[test]
    fn lexicon_rejects_blank_and_duplicates() {
        let inv = letters();
        let mut lex = Lexicon::new();
        lex.add("A", vec![1], &inv).unwrap();
        lex.add("A", vec![2], &inv).unwrap();
        assert_eq!(lex.pronunciations("A").unwrap().len(), 2);
        assert!(lex.add("A", vec![1], &inv).is_err());
        assert!(lex.add("B", vec![0], &inv).is_err());
        assert!(lex.add("B", vec![], &inv).is_err());
    }

    #[test]
    fn weights_validation() {
        assert!(ScoreWeights::default().validate().is_ok());
        let bad = ScoreWeights {
            lm_scale: -1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = ScoreWeights {
            insertion_penalty: f64::NAN,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
