//! Word error rate and Levenshtein alignment.

use std::fmt::Write as _;
use std::ops::{Add, AddAssign};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EditStats {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub reference_length: usize,
}

impl EditStats {
    pub fn errors(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }

    /// `(S + I + D) / N`. With an empty reference this is 0 for an empty
    /// hypothesis and `+inf` otherwise.
    pub fn wer(&self) -> f64 {
        if self.reference_length == 0 {
            if self.insertions > 0 {
                f64::INFINITY
            } else {
                0.0
            }
        } else {
            self.errors() as f64 / self.reference_length as f64
        }
    }
}

impl Add for EditStats {
    type Output = EditStats;

    fn add(self, rhs: Self) -> Self {
        EditStats {
            substitutions: self.substitutions + rhs.substitutions,
            insertions: self.insertions + rhs.insertions,
            deletions: self.deletions + rhs.deletions,
            reference_length: self.reference_length + rhs.reference_length,
        }
    }
}

impl AddAssign for EditStats {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EditOp {
    Match,
    Substitution,
    Insertion,
    Deletion,
}

/// Minimum-edit alignment with unit costs. Ties during traceback prefer a
/// substitution (or match), then an insertion, then a deletion.
pub fn align_words<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> (EditStats, Vec<EditOp>) {
    let (n, m) = (reference.len(), hypothesis.len());
    let width = m + 1;
    let mut cost = vec![0u32; (n + 1) * width];
    for (j, c) in cost[..width].iter_mut().enumerate() {
        *c = j as u32;
    }
    for (i, r) in reference.iter().enumerate() {
        let (done, rest) = cost.split_at_mut((i + 1) * width);
        let prev = &done[i * width..];
        let row = &mut rest[..width];
        let mut left = i as u32 + 1;
        row[0] = left;
        for ((slot, h), diag_up) in row[1..].iter_mut().zip(hypothesis).zip(prev.windows(2)) {
            let diag = diag_up[0] + u32::from(r != h);
            left = diag.min(left + 1).min(diag_up[1] + 1);
            *slot = left;
        }
    }

    let mut ops = Vec::with_capacity(n + m);
    let mut stats = EditStats {
        reference_length: n,
        ..Default::default()
    };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let at = i * width + j;
        let here = cost[at];
        if i > 0 && j > 0 {
            let same = reference[i - 1] == hypothesis[j - 1];
            if here == cost[at - width - 1] + u32::from(!same) {
                if same {
                    ops.push(EditOp::Match);
                } else {
                    ops.push(EditOp::Substitution);
                    stats.substitutions += 1;
                }
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if j > 0 && here == cost[at - 1] + 1 {
            ops.push(EditOp::Insertion);
            stats.insertions += 1;
            j -= 1;
        } else {
            ops.push(EditOp::Deletion);
            stats.deletions += 1;
            i -= 1;
        }
    }
    ops.reverse();
    (stats, ops)
}

/// Pooled statistics over a corpus of `(reference, hypothesis)` pairs.
pub fn corpus_wer<T: PartialEq, R: AsRef<[T]>, H: AsRef<[T]>>(pairs: &[(R, H)]) -> Result<EditStats> {
    if pairs.is_empty() {
        return Err(Error::invalid("corpus WER needs at least one utterance"));
    }
    Ok(pairs
        .iter()
        .map(|(r, h)| align_words(r.as_ref(), h.as_ref()).0)
        .fold(EditStats::default(), Add::add))
}

/// Aligns hypotheses to references by utterance id and formats the report:
/// one `id WER S I D N` line per utterance and a final `TOTAL` line.
pub fn wer_report(
    references: &[(String, Vec<String>)],
    hypotheses: &[(String, Vec<String>)],
) -> Result<(String, EditStats)> {
    if references.is_empty() {
        return Err(Error::invalid("no reference utterances"));
    }
    let hyp: std::collections::HashMap<&str, &Vec<String>> =
        hypotheses.iter().map(|(id, w)| (id.as_str(), w)).collect();
    for (id, _) in hypotheses {
        if !references.iter().any(|(r, _)| r == id) {
            return Err(Error::invalid(format!("hypothesis utterance {id:?} has no reference")));
        }
    }
    let mut out = String::new();
    let mut total = EditStats::default();
    for (id, reference) in references {
        let words = hyp
            .get(id.as_str())
            .ok_or_else(|| Error::invalid(format!("utterance {id:?} missing from hypotheses")))?;
        let (stats, _) = align_words(reference, words);
        write_report_line(&mut out, id, &stats);
        total += stats;
    }
    write_report_line(&mut out, "TOTAL", &total);
    Ok((out, total))
}

fn write_report_line(out: &mut String, id: &str, s: &EditStats) {
    let _ = writeln!(
        out,
        "{id} {:.4} {} {} {} {}",
        s.wer(),
        s.substitutions,
        s.insertions,
        s.deletions,
        s.reference_length
    );
}
