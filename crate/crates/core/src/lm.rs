//! Back-off n-gram language models.
//!
//! Probabilities are stored as log10 values, as in ARPA files. Every public
//! scoring function returns natural logs.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{read_text, write_atomic};

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";

/// log10 probability used for impossible events, per ARPA convention.
pub const LOG10_ZERO: f64 = -99.0;

pub type WordId = u32;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NGramEntry {
    pub log10_prob: f64,
    pub log10_backoff: Option<f64>,
}

/// Language-model context: the most recent `order - 1` word ids.
pub type LmState = Vec<WordId>;

#[derive(Clone, Debug, PartialEq)]
pub struct NGramLM {
    order: usize,
    vocab: Vec<String>,
    index: HashMap<String, WordId>,
    /// `tables[k]` holds the (k+1)-grams.
    tables: Vec<HashMap<Vec<WordId>, NGramEntry>>,
}

impl NGramLM {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocabulary(&self) -> &[String] {
        &self.vocab
    }

    pub fn word_id(&self, word: &str) -> Option<WordId> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: WordId) -> &str {
        &self.vocab[id as usize]
    }

    pub fn entry(&self, ngram: &[WordId]) -> Option<&NGramEntry> {
        self.tables.get(ngram.len().checked_sub(1)?)?.get(ngram)
    }

    pub fn num_ngrams(&self, n: usize) -> usize {
        self.tables.get(n - 1).map_or(0, HashMap::len)
    }

    /// Word id used for scoring `word`: itself if known, else `<unk>`.
    /// Returns `None` only if the word is unknown and the model has no
    /// `<unk>`.
    pub fn lookup(&self, word: &str) -> Option<WordId> {
        self.word_id(word).or_else(|| self.word_id(UNK))
    }

    /// Whether the model predicts sentence ends.
    pub fn models_eos(&self) -> bool {
        self.word_id(EOS).and_then(|id| self.entry(&[id])).is_some()
    }

    /// log10 P(word | history) with ARPA back-off semantics. Only the last
    /// `order - 1` history words are used.
    pub fn log10_prob(&self, history: &[WordId], word: Option<WordId>) -> f64 {
        let Some(word) = word else { return LOG10_ZERO };
        let max_ctx = history.len().min(self.order - 1);
        let mut backoff = 0.0;
        let mut key = Vec::with_capacity(max_ctx + 1);
        for ctx_len in (0..=max_ctx).rev() {
            let ctx = &history[history.len() - ctx_len..];
            key.clear();
            key.extend_from_slice(ctx);
            key.push(word);
            if let Some(e) = self.tables[ctx_len].get(&key) {
                return backoff + e.log10_prob;
            }
            if ctx_len > 0 {
                if let Some(h) = self.tables[ctx_len - 1].get(ctx) {
                    backoff += h.log10_backoff.unwrap_or(0.0);
                }
            }
        }
        backoff + LOG10_ZERO
    }

    /// Natural-log conditional probability.
    pub fn log_prob(&self, history: &[WordId], word: Option<WordId>) -> f64 {
        self.log10_prob(history, word) * std::f64::consts::LN_10
    }

    pub fn initial_state(&self) -> LmState {
        match self.word_id(BOS) {
            Some(bos) if self.order > 1 => vec![bos],
            _ => Vec::new(),
        }
    }

    /// Scores `word` in `state` and returns the successor state.
    pub fn advance(&self, state: &[WordId], word: &str) -> (f64, LmState) {
        let id = self.lookup(word);
        let logp = self.log_prob(state, id);
        let mut next: LmState = state.to_vec();
        if self.order > 1 {
            // An unknown word without <unk> still occupies a history slot;
            // u32::MAX never matches a table key.
            next.push(id.unwrap_or(WordId::MAX));
            if next.len() > self.order - 1 {
                next.remove(0);
            }
        }
        (logp, next)
    }

    /// `ln P(</s> | state)`, or zero when the model has no sentence-end token.
    pub fn final_log_prob(&self, state: &[WordId]) -> f64 {
        if self.models_eos() {
            self.log_prob(state, self.word_id(EOS))
        } else {
            0.0
        }
    }

    /// `ln P(w_1 .. w_n </s>)` with an implicit `<s>` context.
    pub fn score_sequence<S: AsRef<str>>(&self, words: &[S]) -> f64 {
        let mut state = self.initial_state();
        let mut total = 0.0;
        for w in words {
            let (logp, next) = self.advance(&state, w.as_ref());
            total += logp;
            state = next;
        }
        total + self.final_log_prob(&state)
    }

    /// Words that can follow a history, i.e. everything except `<s>`.
    pub fn predictable_words(&self) -> impl Iterator<Item = WordId> + '_ {
        let bos = self.word_id(BOS);
        (0..self.vocab.len() as WordId).filter(move |&id| Some(id) != bos)
    }

    /// Every history the model stores, including the empty one.
    pub fn histories(&self) -> Vec<Vec<WordId>> {
        let mut out = vec![Vec::new()];
        for table in &self.tables[..self.order - 1] {
            out.extend(table.keys().cloned());
        }
        out.sort();
        out
    }
}

/// Trains an absolute-discounting back-off model.
///
/// Seen n-grams get `(c - d) / c(h)`; the freed mass `d · N1+(h) / c(h)` is
/// spread over unseen words in proportion to the lower-order distribution.
/// At the unigram level the freed mass goes to `<unk>`.
pub fn train_ngram<S: AsRef<str>>(corpus: &[Vec<S>], order: usize, discount: f64) -> Result<NGramLM> {
    if corpus.is_empty() {
        return Err(Error::invalid("cannot train on an empty corpus"));
    }
    if !(1..=4).contains(&order) {
        return Err(Error::invalid(format!("order must be in 1..=4, got {order}")));
    }
    if !(discount > 0.0 && discount < 1.0) {
        return Err(Error::invalid(format!("discount must be in (0, 1), got {discount}")));
    }

    let mut words: Vec<&str> = corpus.iter().flatten().map(AsRef::as_ref).collect();
    if let Some(w) = words.iter().find(|w| **w == BOS || **w == EOS) {
        return Err(Error::invalid(format!("corpus contains reserved token {w}")));
    }
    words.retain(|w| *w != UNK);
    words.sort_unstable();
    words.dedup();
    let mut vocab: Vec<String> = vec![BOS.into(), EOS.into(), UNK.into()];
    vocab.extend(words.into_iter().map(String::from));
    let index: HashMap<String, WordId> = vocab
        .iter()
        .enumerate()
        .map(|(i, w)| (w.clone(), i as WordId))
        .collect();
    let (bos, eos, unk) = (0, 1, 2);

    // counts[k]: (k+1)-gram -> count.
    let mut counts: Vec<HashMap<Vec<WordId>, u64>> = vec![HashMap::new(); order];
    for sentence in corpus {
        let mut ids = vec![bos];
        ids.extend(sentence.iter().map(|w| index[w.as_ref()]));
        ids.push(eos);
        for end in 1..ids.len() {
            for n in 1..=order.min(end + 1) {
                *counts[n - 1].entry(ids[end + 1 - n..=end].to_vec()).or_default() += 1;
            }
        }
    }

    let mut lm = NGramLM {
        order,
        vocab,
        index,
        tables: vec![HashMap::new(); order],
    };

    let total: u64 = counts[0].values().sum();
    let seen_types = counts[0].len() as f64;
    let unk_count = counts[0].get(&vec![unk]).copied().unwrap_or(0) as f64;
    for (ngram, &c) in &counts[0] {
        if ngram[0] != unk {
            let p = (c as f64 - discount) / total as f64;
            lm.tables[0].insert(ngram.clone(), entry(p.log10()));
        }
    }
    let unk_p = ((unk_count - discount).max(0.0) + discount * seen_types) / total as f64;
    lm.tables[0].insert(vec![unk], entry(unk_p.log10()));
    lm.tables[0].insert(vec![bos], entry(LOG10_ZERO));

    for n in 2..=order {
        let mut by_history: HashMap<Vec<WordId>, Vec<(WordId, u64)>> = HashMap::new();
        for (ngram, &c) in &counts[n - 1] {
            by_history
                .entry(ngram[..n - 1].to_vec())
                .or_default()
                .push((ngram[n - 1], c));
        }
        let mut histories: Vec<_> = by_history.into_iter().collect();
        histories.sort();
        for (history, followers) in histories {
            let c_h: u64 = followers.iter().map(|f| f.1).sum();
            let lower_seen: f64 = followers
                .iter()
                .map(|&(w, _)| 10f64.powf(lm.log10_prob(&history[1..], Some(w))))
                .sum();
            let lower_rest = 1.0 - lower_seen;
            let (d, backoff) = if lower_rest > 1e-12 {
                let freed = discount * followers.len() as f64 / c_h as f64;
                (discount, freed / lower_rest)
            } else {
                // Every predictable word was seen after this history; there
                // is nowhere to put freed mass, so do not discount.
                (0.0, 1.0)
            };
            for (w, c) in followers {
                let mut key = history.clone();
                key.push(w);
                let p = (c as f64 - d) / c_h as f64;
                lm.tables[n - 1].insert(key, entry(p.log10()));
            }
            let h = lm.tables[n - 2]
                .get_mut(&history)
                .ok_or_else(|| Error::Invariant(format!("history {history:?} missing")))?;
            h.log10_backoff = Some(backoff.log10());
        }
    }
    // Lower-order entries that are never histories back off with weight 1.
    for table in &mut lm.tables[..order - 1] {
        for e in table.values_mut() {
            e.log10_backoff.get_or_insert(0.0);
        }
    }
    Ok(lm)
}

fn entry(log10_prob: f64) -> NGramEntry {
    NGramEntry {
        log10_prob,
        log10_backoff: None,
    }
}

// ARPA

pub fn format_arpa(lm: &NGramLM) -> String {
    let mut out = String::from("\n\\data\\\n");
    for n in 1..=lm.order {
        let _ = writeln!(out, "ngram {n}={}", lm.num_ngrams(n));
    }
    for n in 1..=lm.order {
        let _ = write!(out, "\n\\{n}-grams:\n");
        let mut rows: Vec<(Vec<&str>, &NGramEntry)> = lm.tables[n - 1]
            .iter()
            .map(|(k, e)| (k.iter().map(|&id| lm.word(id)).collect(), e))
            .collect();
        rows.sort_by(|a, b| a.0.cmp(&b.0));
        for (words, e) in rows {
            let _ = write!(out, "{}\t{}", e.log10_prob, words.join(" "));
            if let Some(bo) = e.log10_backoff {
                let _ = write!(out, "\t{bo}");
            }
            out.push('\n');
        }
    }
    out.push_str("\n\\end\\\n");
    out
}

pub fn write_arpa(lm: &NGramLM, path: &Path) -> Result<()> {
    write_atomic(path, &format_arpa(lm))
}

pub fn read_arpa(path: &Path) -> Result<NGramLM> {
    parse_arpa(&read_text(path)?, &path.display().to_string())
}

pub fn parse_arpa(text: &str, source: &str) -> Result<NGramLM> {
    enum Section {
        Preamble,
        Data,
        Grams(usize),
        End,
    }
    let mut section = Section::Preamble;
    let mut declared: Vec<usize> = Vec::new();
    let mut vocab: Vec<String> = Vec::new();
    let mut index: HashMap<String, WordId> = HashMap::new();
    let mut tables: Vec<HashMap<Vec<WordId>, NGramEntry>> = Vec::new();
    // Line of each n-gram, for history errors.
    let mut lines_of: Vec<HashMap<Vec<WordId>, usize>> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if line == "\\data\\" {
            section = Section::Data;
            continue;
        }
        if line == "\\end\\" {
            section = Section::End;
            continue;
        }
        if let Some(n) = line
            .strip_prefix('\\')
            .and_then(|l| l.strip_suffix("-grams:"))
        {
            let n: usize = n
                .parse()
                .map_err(|_| Error::parse(source, lineno, format!("bad section header {line:?}")))?;
            if n == 0 || n > declared.len() {
                return Err(Error::parse(source, lineno, format!("section {n}-grams not declared")));
            }
            if tables.len() != n - 1 {
                return Err(Error::parse(source, lineno, format!("section {n}-grams out of order")));
            }
            tables.push(HashMap::new());
            lines_of.push(HashMap::new());
            section = Section::Grams(n);
            continue;
        }
        match section {
            Section::Preamble => {}
            Section::End => return Err(Error::parse(source, lineno, "content after \\end\\")),
            Section::Data => {
                let rest = line
                    .strip_prefix("ngram ")
                    .ok_or_else(|| Error::parse(source, lineno, format!("expected \"ngram N=count\", got {line:?}")))?;
                let (n, count) = rest
                    .split_once('=')
                    .and_then(|(n, c)| Some((n.trim().parse::<usize>().ok()?, c.trim().parse::<usize>().ok()?)))
                    .ok_or_else(|| Error::parse(source, lineno, format!("malformed count line {line:?}")))?;
                if n != declared.len() + 1 {
                    return Err(Error::parse(source, lineno, "n-gram counts must be listed in order"));
                }
                declared.push(count);
            }
            Section::Grams(n) => {
                let fields: Vec<&str> = line.split_whitespace().collect();
                if fields.len() != n + 1 && fields.len() != n + 2 {
                    return Err(Error::parse(source, lineno, format!("malformed {n}-gram line")));
                }
                let log10_prob: f64 = fields[0]
                    .parse()
                    .map_err(|_| Error::parse(source, lineno, format!("bad probability {:?}", fields[0])))?;
                let log10_backoff = match fields.get(n + 1) {
                    Some(f) => Some(
                        f.parse::<f64>()
                            .map_err(|_| Error::parse(source, lineno, format!("bad back-off {f:?}")))?,
                    ),
                    None => None,
                };
                if !log10_prob.is_finite() || log10_prob > 0.0 || log10_backoff.is_some_and(|b| !b.is_finite()) {
                    return Err(Error::parse(source, lineno, "log10 values must be finite, probabilities <= 0"));
                }
                let mut key = Vec::with_capacity(n);
                for w in &fields[1..=n] {
                    let id = match index.get(*w) {
                        Some(&id) => id,
                        None if n == 1 => {
                            vocab.push(w.to_string());
                            index.insert(w.to_string(), (vocab.len() - 1) as WordId);
                            (vocab.len() - 1) as WordId
                        }
                        None => {
                            return Err(Error::parse(source, lineno, format!("word {w:?} has no unigram")));
                        }
                    };
                    key.push(id);
                }
                let table = &mut tables[n - 1];
                if table.contains_key(&key) {
                    return Err(Error::parse(source, lineno, "duplicate n-gram"));
                }
                table.insert(key.clone(), NGramEntry { log10_prob, log10_backoff });
                lines_of[n - 1].insert(key, lineno);
            }
        }
    }
    if !matches!(section, Section::End) {
        return Err(Error::parse(source, text.lines().count(), "missing \\end\\"));
    }
    if declared.is_empty() {
        return Err(Error::parse(source, 1, "missing \\data\\ section"));
    }
    if tables.len() != declared.len() {
        return Err(Error::parse(source, text.lines().count(), format!("declared {} orders, found {}", declared.len(), tables.len())));
    }
    for (k, (table, &count)) in tables.iter().zip(&declared).enumerate() {
        if table.len() != count {
            return Err(Error::parse(
                source,
                text.lines().count(),
                format!("declared {count} {}-grams, found {}", k + 1, table.len()),
            ));
        }
    }
    for k in 1..tables.len() {
        for (key, &lineno) in &lines_of[k] {
            let history = &key[..k];
            match tables[k - 1].get(history) {
                Some(e) if e.log10_backoff.is_some() => {}
                Some(_) => {
                    return Err(Error::parse(source, lineno, "history of this n-gram has no back-off weight"));
                }
                None => return Err(Error::parse(source, lineno, "history of this n-gram is missing")),
            }
        }
    }
    Ok(NGramLM {
        order: tables.len(),
        vocab,
        index,
        tables,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(lines: &[&str]) -> Vec<Vec<String>> {
        lines
            .iter()
            .map(|l| l.split_whitespace().map(String::from).collect())
            .collect()
    }

    fn p(lm: &NGramLM, history: &[&str], word: &str) -> f64 {
        let h: Vec<WordId> = history.iter().map(|w| lm.word_id(w).unwrap()).collect();
        lm.log_prob(&h, lm.word_id(word)).exp()
    }

    #[test]
    fn unigram_counts() {
        let lm = train_ngram(&corpus(&["a b", "a b"]), 1, 0.5).unwrap();
        // Counts 2,2,2 over 6 tokens; each loses 0.5 to <unk>.
        for w in ["a", "b", EOS, UNK] {
            assert!((p(&lm, &[], w) - 0.25).abs() < 1e-12, "{w}");
        }
        assert_eq!(lm.initial_state(), Vec::<WordId>::new());
    }

    #[test]
    fn bigram_single_sentence() {
        let d = 0.5;
        let lm = train_ngram(&corpus(&["a"]), 2, d).unwrap();
        assert!((p(&lm, &[BOS], "a") - (1.0 - d)).abs() < 1e-12);
        let bos = lm.entry(&[lm.word_id(BOS).unwrap()]).unwrap();
        assert!((10f64.powf(bos.log10_backoff.unwrap()) - 2.0 * d / (1.0 + d)).abs() < 1e-12);
        // P(</s>|<s>) backs off to the unigram (1-d)/2.
        let expected = 2.0 * d / (1.0 + d) * (1.0 - d) / 2.0;
        assert!((p(&lm, &[BOS], EOS) - expected).abs() < 1e-12);
    }

    #[test]
    fn single_sentence_normalises() {
        let lm = train_ngram(&corpus(&["a"]), 1, 0.5).unwrap();
        let total: f64 = lm.predictable_words().map(|w| lm.log_prob(&[], Some(w)).exp()).sum();
        assert!((total - 1.0).abs() < 1e-4);
    }

    #[test]
    fn training_errors() {
        assert!(train_ngram::<String>(&[], 2, 0.5).is_err());
        assert!(train_ngram(&corpus(&["a"]), 2, 0.0).is_err());
        assert!(train_ngram(&corpus(&["a"]), 2, 1.0).is_err());
        assert!(train_ngram(&corpus(&["a"]), 5, 0.5).is_err());
        assert!(train_ngram(&corpus(&["a </s>"]), 2, 0.5).is_err());
    }

    #[test]
    fn uniform_unigram_without_eos() {
        let arpa = "\\data\\\nngram 1=2\n\n\\1-grams:\n-0.30102999566398120 a\n-0.30102999566398120 b\n\n\\end\\\n";
        let lm = parse_arpa(arpa, "t").unwrap();
        assert!(!lm.models_eos());
        assert!((lm.score_sequence(&["a", "b"]) - 0.25f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn empty_sequence_scores_eos() {
        let lm = train_ngram(&corpus(&["a b", "b"]), 2, 0.5).unwrap();
        let bos = lm.word_id(BOS).unwrap();
        let expected = lm.log_prob(&[bos], lm.word_id(EOS));
        assert_eq!(lm.score_sequence::<&str>(&[]), expected);
    }

    #[test]
    fn oov_maps_to_unk() {
        let lm = train_ngram(&corpus(&["a b"]), 3, 0.5).unwrap();
        let s = lm.score_sequence(&["zzz", "a"]);
        assert!(s.is_finite());
        assert_eq!(s, lm.score_sequence(&[UNK, "a"]));
    }

    #[test]
    fn hand_written_bigram_arpa() {
        let arpa = "
\\data\\
ngram 1=4
ngram 2=2

\\1-grams:
-99\t<s>\t-0.2
-0.5\ta\t-0.1
-0.7\tb
-0.6\t</s>

\\2-grams:
-0.3\t<s> a
-0.4\ta b

\\end\\
";
        let lm = parse_arpa(arpa, "t").unwrap();
        // P(a|<s>) = 10^-0.3; P(b|a) = 10^-0.4; P(</s>|b): b has no back-off,
        // so the unigram 10^-0.6 applies.
        let expected = (-0.3 - 0.4 - 0.6) * std::f64::consts::LN_10;
        assert!((lm.score_sequence(&["a", "b"]) - expected).abs() < 1e-12);
        // b a: P(b|<s>) backs off through <s>, P(a|b) has no back-off
        // weight to apply, P(</s>|a) backs off through a.
        let b_then_a = (-0.2 - 0.7) + (-0.5) + (-0.1 - 0.6);
        assert!((lm.score_sequence(&["b", "a"]) - b_then_a * std::f64::consts::LN_10).abs() < 1e-12);
    }

    #[test]
    fn arpa_missing_backoff_is_rejected() {
        let arpa = "\\data\\\nngram 1=2\nngram 2=1\n\n\\1-grams:\n-1\t<s>\n-0.5\ta\n\n\\2-grams:\n-0.2\t<s> a\n\n\\end\\\n";
        match parse_arpa(arpa, "t") {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 10);
                assert!(message.contains("back-off"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn arpa_count_mismatch_is_rejected() {
        let arpa = "\\data\\\nngram 1=3\n\n\\1-grams:\n-1\t<s>\n-0.5\ta\n\n\\end\\\n";
        assert!(parse_arpa(arpa, "t").is_err());
        let arpa = "\\data\\\nngram 1=1\n\n\\1-grams:\n-1\n\n\\end\\\n";
        assert!(matches!(parse_arpa(arpa, "t"), Err(Error::Parse { line: 5, .. })));
    }

    #[test]
    fn arpa_round_trip_is_exact() {
        let lm = train_ngram(&corpus(&["a b c", "b c", "c a b a", "a"]), 3, 0.4).unwrap();
        let again = parse_arpa(&format_arpa(&lm), "t").unwrap();
        for s in [vec!["a", "b"], vec!["c", "c", "a"], vec![], vec!["x", "b"]] {
            assert_eq!(lm.score_sequence(&s), again.score_sequence(&s));
        }
    }
}
