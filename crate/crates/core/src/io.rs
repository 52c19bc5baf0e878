//! Readers and writers for the plain-text file formats.
//!
//! | file         | layout                                                        |
//! |--------------|---------------------------------------------------------------|
//! | posteriors   | `T U` header, then T lines of U probabilities                 |
//! | units        | one unit label per line                                       |
//! | lexicon      | `WORD unit unit ...`, one pronunciation per line              |
//! | priors       | `label probability` per line                                  |
//! | n-best       | tab-separated `id rank ac lm scorer|NA count words [aux]`     |
//! | transcripts  | `id word word ...`                                            |
//! | weights      | `key=value` lines                                             |
//!
//! Every `parse_*` function takes the text plus a name used in error
//! messages; `load_*` wraps it with file reading.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{
    normalize_row, Hypothesis, Lexicon, NBestList, PosteriorMatrix, ScoreWeights, UnitInventory,
    UnitKind, UnitPrior,
};

/// Reserved prefix for a future binary posterior format.
pub const BINARY_POSTERIOR_MAGIC: &[u8] = b"ISCAPOST";

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", file_name.to_string_lossy()));
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn source_name(path: &Path) -> String {
    path.display().to_string()
}

fn utterance_id_from_path(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn parse_f64(field: &str, source: &str, line: usize) -> Result<f64> {
    field
        .parse::<f64>()
        .map_err(|_| Error::parse(source, line, format!("not a number: {field:?}")))
}

// Posteriors

pub fn parse_posteriors(text: &str, utterance_id: &str, source: &str) -> Result<PosteriorMatrix> {
    if text.as_bytes().starts_with(BINARY_POSTERIOR_MAGIC) {
        return Err(Error::parse(source, 1, "binary posterior format is not supported"));
    }
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (header_idx, header) = lines
        .next()
        .ok_or_else(|| Error::parse(source, 1, "missing \"T U\" header"))?;
    let dims: Vec<&str> = header.split_whitespace().collect();
    let parse_dim = |s: &str| s.parse::<usize>().ok();
    let (frames, units) = match dims.as_slice() {
        [t, u] => match (parse_dim(t), parse_dim(u)) {
            (Some(t), Some(u)) if u > 0 => (t, u),
            _ => return Err(Error::parse(source, header_idx + 1, "malformed \"T U\" header")),
        },
        _ => return Err(Error::parse(source, header_idx + 1, "malformed \"T U\" header")),
    };
    let mut rows = Vec::with_capacity(frames);
    for (idx, line) in lines {
        let lineno = idx + 1;
        if rows.len() == frames {
            return Err(Error::parse(source, lineno, format!("more than {frames} frames")));
        }
        let row = line
            .split_whitespace()
            .map(|f| parse_f64(f, source, lineno))
            .collect::<Result<Vec<_>>>()?;
        let row = normalize_row(row, units).map_err(|m| Error::parse(source, lineno, m))?;
        rows.push(row);
    }
    if rows.len() != frames {
        return Err(Error::parse(
            source,
            text.lines().count(),
            format!("expected {frames} frames, found {}", rows.len()),
        ));
    }
    if frames == 0 {
        return Err(Error::parse(source, header_idx + 1, "posterior file has no frames"));
    }
    PosteriorMatrix::new(utterance_id, rows)
}

/// Utterance id is the file stem.
pub fn load_posteriors(path: &Path) -> Result<PosteriorMatrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(BINARY_POSTERIOR_MAGIC) {
        return Err(Error::parse(&source_name(path), 1, "binary posterior format is not supported"));
    }
    let text = String::from_utf8(bytes)
        .map_err(|_| Error::parse(&source_name(path), 1, "file is not valid UTF-8"))?;
    parse_posteriors(&text, &utterance_id_from_path(path), &source_name(path))
}

pub fn format_posteriors(matrix: &PosteriorMatrix) -> String {
    let mut out = format!("{} {}\n", matrix.num_frames(), matrix.num_units());
    for row in matrix.rows() {
        let fields: Vec<String> = row.iter().map(f64::to_string).collect();
        out.push_str(&fields.join(" "));
        out.push('\n');
    }
    out
}

pub fn write_posteriors(matrix: &PosteriorMatrix, path: &Path) -> Result<()> {
    write_atomic(path, &format_posteriors(matrix))
}

// Unit inventory

pub fn parse_units(text: &str, blank_label: Option<&str>, kind: UnitKind, source: &str) -> Result<UnitInventory> {
    let mut labels = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line.split_whitespace().count() != 1 {
            return Err(Error::parse(source, idx + 1, "expected a single unit label"));
        }
        labels.push(line.to_string());
    }
    UnitInventory::with_blank_label(labels, blank_label, kind)
}

pub fn load_units(path: &Path, blank_label: Option<&str>, kind: UnitKind) -> Result<UnitInventory> {
    parse_units(&read_text(path)?, blank_label, kind, &source_name(path))
}

// Lexicon

/// Words are upper-cased; repeated words accumulate pronunciations.
pub fn parse_lexicon(text: &str, inventory: &UnitInventory, source: &str) -> Result<Lexicon> {
    let mut lexicon = Lexicon::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let mut fields = line.split_whitespace();
        let Some(word) = fields.next() else { continue };
        let labels: Vec<&str> = fields.collect();
        if labels.is_empty() {
            return Err(Error::parse(source, lineno, format!("empty pronunciation for {word:?}")));
        }
        let pron = inventory.resolve(&labels).map_err(|e| match e {
            Error::UnknownUnit(u) => Error::parse(source, lineno, format!("unknown unit {u:?}")),
            other => other,
        })?;
        lexicon
            .add(&word.to_uppercase(), pron, inventory)
            .map_err(|e| Error::parse(source, lineno, e.to_string()))?;
    }
    Ok(lexicon)
}

pub fn load_lexicon(path: &Path, inventory: &UnitInventory) -> Result<Lexicon> {
    parse_lexicon(&read_text(path)?, inventory, &source_name(path))
}

pub fn format_lexicon(lexicon: &Lexicon, inventory: &UnitInventory) -> String {
    let mut out = String::new();
    for (word, prons) in lexicon.iter() {
        for pron in prons {
            let labels: Vec<&str> = pron.iter().map(|&u| inventory.label(u)).collect();
            let _ = writeln!(out, "{word} {}", labels.join(" "));
        }
    }
    out
}

pub fn write_lexicon(lexicon: &Lexicon, inventory: &UnitInventory, path: &Path) -> Result<()> {
    write_atomic(path, &format_lexicon(lexicon, inventory))
}

// Priors

pub fn parse_priors(text: &str, inventory: &UnitInventory, floor: f64, source: &str) -> Result<UnitPrior> {
    let mut values = vec![None; inventory.len()];
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.as_slice() {
            [] => continue,
            [label, p] => {
                let unit = inventory
                    .index_of(label)
                    .ok_or_else(|| Error::parse(source, lineno, format!("unknown unit {label:?}")))?;
                if values[unit].is_some() {
                    return Err(Error::parse(source, lineno, format!("duplicate prior for {label:?}")));
                }
                values[unit] = Some(parse_f64(p, source, lineno)?);
            }
            _ => return Err(Error::parse(source, lineno, "expected \"label probability\"")),
        }
    }
    let priors = values
        .into_iter()
        .enumerate()
        .map(|(u, v)| v.ok_or_else(|| Error::invalid(format!("{source}: no prior for unit {:?}", inventory.label(u)))))
        .collect::<Result<Vec<_>>>()?;
    UnitPrior::new(priors, floor)
}

pub fn load_priors(path: &Path, inventory: &UnitInventory, floor: f64) -> Result<UnitPrior> {
    parse_priors(&read_text(path)?, inventory, floor, &source_name(path))
}

pub fn format_priors(priors: &UnitPrior, inventory: &UnitInventory) -> String {
    let mut out = String::new();
    for (u, p) in priors.priors().iter().enumerate() {
        let _ = writeln!(out, "{} {}", inventory.label(u), p);
    }
    out
}

// N-best lists

fn format_score(v: f64) -> String {
    v.to_string()
}

fn parse_score(field: &str, source: &str, line: usize) -> Result<f64> {
    let v = parse_f64(field, source, line)?;
    if v.is_nan() || v == f64::INFINITY {
        return Err(Error::parse(source, line, format!("invalid log score {field:?}")));
    }
    Ok(v)
}

pub fn format_nbest(nbest: &NBestList) -> String {
    let mut out = String::new();
    for (rank, h) in nbest.hypotheses.iter().enumerate() {
        let scorer = h.scorer_logp.map_or_else(|| "NA".to_string(), format_score);
        let _ = write!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            nbest.utterance_id,
            rank + 1,
            format_score(h.acoustic_logp),
            format_score(h.lm_logp),
            scorer,
            h.word_count(),
            h.words.join(" ")
        );
        if let Some(aux) = h.aux_logp {
            let _ = write!(out, "\t{}", format_score(aux));
        }
        out.push('\n');
    }
    out
}

/// Parses one utterance's n-best list. An empty text gives an empty list with
/// `fallback_id` as its id.
pub fn parse_nbest(text: &str, fallback_id: &str, source: &str) -> Result<NBestList> {
    let mut utterance_id: Option<String> = None;
    let mut hypotheses = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 7 && fields.len() != 8 {
            return Err(Error::parse(source, lineno, format!("expected 7 or 8 tab-separated fields, found {}", fields.len())));
        }
        match &utterance_id {
            None => utterance_id = Some(fields[0].to_string()),
            Some(id) if id != fields[0] => {
                return Err(Error::parse(source, lineno, format!("utterance id {:?} differs from {id:?}", fields[0])))
            }
            _ => {}
        }
        let rank: usize = fields[1]
            .parse()
            .map_err(|_| Error::parse(source, lineno, format!("bad rank {:?}", fields[1])))?;
        if rank != hypotheses.len() + 1 {
            return Err(Error::parse(source, lineno, format!("rank {rank} out of sequence")));
        }
        let acoustic_logp = parse_score(fields[2], source, lineno)?;
        let lm_logp = parse_score(fields[3], source, lineno)?;
        let scorer_logp = match fields[4] {
            "NA" => None,
            f => Some(parse_score(f, source, lineno)?),
        };
        let count: usize = fields[5]
            .parse()
            .map_err(|_| Error::parse(source, lineno, format!("bad word count {:?}", fields[5])))?;
        let words: Vec<String> = fields[6].split_whitespace().map(str::to_string).collect();
        if words.len() != count {
            return Err(Error::parse(source, lineno, format!("word count {count} but {} words", words.len())));
        }
        let aux_logp = match fields.get(7) {
            Some(f) => Some(parse_score(f, source, lineno)?),
            None => None,
        };
        hypotheses.push(Hypothesis {
            words,
            acoustic_logp,
            lm_logp,
            scorer_logp,
            aux_logp,
        });
    }
    Ok(NBestList::new(utterance_id.unwrap_or_else(|| fallback_id.to_string()), hypotheses))
}

pub fn load_nbest(path: &Path) -> Result<NBestList> {
    parse_nbest(&read_text(path)?, &utterance_id_from_path(path), &source_name(path))
}

pub fn write_nbest(nbest: &NBestList, path: &Path) -> Result<()> {
    write_atomic(path, &format_nbest(nbest))
}

// Transcripts

/// One `(utterance id, words)` pair per line, words upper-cased.
pub fn parse_transcripts(text: &str, source: &str) -> Result<Vec<(String, Vec<String>)>> {
    let mut out: Vec<(String, Vec<String>)> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (idx, line) in text.lines().enumerate() {
        let mut fields = line.split_whitespace();
        let Some(id) = fields.next() else { continue };
        if !seen.insert(id.to_string()) {
            return Err(Error::parse(source, idx + 1, format!("duplicate utterance id {id:?}")));
        }
        out.push((id.to_string(), fields.map(str::to_uppercase).collect()));
    }
    Ok(out)
}

pub fn load_transcripts(path: &Path) -> Result<Vec<(String, Vec<String>)>> {
    parse_transcripts(&read_text(path)?, &source_name(path))
}

pub fn format_transcripts<S: AsRef<str>>(items: &[(S, Vec<String>)]) -> String {
    let mut out = String::new();
    for (id, words) in items {
        out.push_str(id.as_ref());
        for w in words {
            out.push(' ');
            out.push_str(w);
        }
        out.push('\n');
    }
    out
}

// Weights

pub fn format_weights(w: &ScoreWeights) -> String {
    let mut out = format!(
        "alpha={}\nbeta={}\ninsertion_penalty={}\nblank_penalty={}\n",
        w.lm_scale, w.scorer_scale, w.insertion_penalty, w.blank_penalty
    );
    if w.aux_scale != 0.0 {
        let _ = writeln!(out, "aux_scale={}", w.aux_scale);
    }
    out
}

/// Keys absent from the file keep their values from `base`.
pub fn parse_weights(text: &str, base: ScoreWeights, source: &str) -> Result<ScoreWeights> {
    let mut w = base;
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(source, lineno, "expected key=value"))?;
        let v = parse_f64(value.trim(), source, lineno)?;
        match key.trim() {
            "alpha" => w.lm_scale = v,
            "beta" => w.scorer_scale = v,
            "insertion_penalty" => w.insertion_penalty = v,
            "blank_penalty" => w.blank_penalty = v,
            "aux_scale" => w.aux_scale = v,
            other => return Err(Error::parse(source, lineno, format!("unknown weight {other:?}"))),
        }
    }
    w.validate()?;
    Ok(w)
}

pub fn load_weights(path: &Path) -> Result<ScoreWeights> {
    parse_weights(&read_text(path)?, ScoreWeights::default(), &source_name(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn phones() -> UnitInventory {
        let labels = ["<b>", "ey", "ah", "c", "a", "t", "d", "o"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        UnitInventory::new(labels, Some(0), UnitKind::Phonetic).unwrap()
    }

    #[test]
    fn posterior_examples() {
        let m = parse_posteriors("2 2\n0.6 0.4\n0.2 0.8\n", "u", "t").unwrap();
        assert_eq!((m.num_frames(), m.num_units()), (2, 2));
        assert_eq!(m.row(1), &[0.2, 0.8]);
        let m = parse_posteriors("1 3\n1.0 0.0 0.0\n", "u", "t").unwrap();
        assert_eq!(m.row(0), &[1.0, 0.0, 0.0]);
        let err = parse_posteriors("1 2\n0.7 0.7\n", "u", "t").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        assert!(err.to_string().contains("1.4"), "{err}");
    }

    #[test]
    fn posterior_errors_carry_line_numbers() {
        let cases = [
            ("two\n0.5 0.5\n", 1),
            ("1 2\n0.5\n", 2),
            ("2 2\n0.5 0.5\n-0.5 1.5\n", 3),
            ("1 2\n0.5 0.5\n0.5 0.5\n", 3),
            ("2 2\n0.5 0.5\n", 2),
        ];
        for (text, line) in cases {
            match parse_posteriors(text, "u", "t") {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
        assert!(parse_posteriors("ISCAPOST\x01", "u", "t").is_err());
    }

    #[test]
    fn lexicon_examples() {
        let inv = phones();
        let lex = parse_lexicon("A ey\nA ah\n", &inv, "t").unwrap();
        assert_eq!(lex.pronunciations("A").unwrap().len(), 2);
        let lex = parse_lexicon("CAT c a t\n", &inv, "t").unwrap();
        assert_eq!(lex.len(), 1);
        let err = parse_lexicon("DOG d o q\n", &inv, "t").unwrap_err();
        assert!(err.to_string().contains("\"q\""), "{err}");
        assert!(parse_lexicon("A\n", &inv, "t").is_err());
        assert!(parse_lexicon("A ey\nA ey\n", &inv, "t").is_err());
        assert!(parse_lexicon("A <b>\n", &inv, "t").is_err());
    }

    #[test]
    fn lexicon_round_trip() {
        let inv = phones();
        let lex = parse_lexicon("A ey\nA ah\nCAT c a t\nDOG d o\n", &inv, "t").unwrap();
        let again = parse_lexicon(&format_lexicon(&lex, &inv), &inv, "t").unwrap();
        assert_eq!(lex, again);
    }

    #[test]
    fn nbest_with_empty_words_and_na() {
        let mut h = Hypothesis::new(vec![], -3.25, f64::NEG_INFINITY);
        h.aux_logp = Some(-1.0);
        let mut g = Hypothesis::new(vec!["A".into(), "B".into()], -1.0 / 3.0, -2.0);
        g.scorer_logp = Some(-0.1);
        let list = NBestList::new("utt1", vec![g, h]);
        let text = format_nbest(&list);
        assert!(text.starts_with("utt1\t1\t"));
        assert!(text.contains("\tNA\t0\t\t-1\n"));
        assert_eq!(parse_nbest(&text, "x", "t").unwrap(), list);
    }

    #[test]
    fn nbest_rejects_bad_lines() {
        assert!(parse_nbest("u\t1\t-1\t-1\tNA\t2\tA\n", "u", "t").is_err());
        assert!(parse_nbest("u\t2\t-1\t-1\tNA\t1\tA\n", "u", "t").is_err());
        assert!(parse_nbest("u\t1\t-1\tNA\t1\tA\n", "u", "t").is_err());
        assert!(parse_nbest("u\t1\tnan\t-1\tNA\t1\tA\n", "u", "t").is_err());
        assert!(parse_nbest("", "u", "t").unwrap().is_empty());
    }

    #[test]
    fn transcripts_are_uppercased() {
        let t = parse_transcripts("u1 a b\nu2\n", "t").unwrap();
        assert_eq!(t[0], ("u1".to_string(), vec!["A".to_string(), "B".to_string()]));
        assert!(t[1].1.is_empty());
        assert!(parse_transcripts("u1 a\nu1 b\n", "t").is_err());
    }

    #[test]
    fn weights_round_trip() {
        let w = ScoreWeights {
            lm_scale: 0.7,
            scorer_scale: 1.3,
            blank_penalty: 0.25,
            insertion_penalty: -0.5,
            aux_scale: 0.0,
        };
        let text = format_weights(&w);
        assert_eq!(text, "alpha=0.7\nbeta=1.3\ninsertion_penalty=-0.5\nblank_penalty=0.25\n");
        assert_eq!(parse_weights(&text, ScoreWeights::default(), "t").unwrap(), w);
        assert!(parse_weights("alpha=-1\n", ScoreWeights::default(), "t").is_err());
        assert!(parse_weights("gamma=1\n", ScoreWeights::default(), "t").is_err());
    }

    #[test]
    fn priors_file() {
        let labels = vec!["<b>".to_string(), "a".to_string()];
        let inv = UnitInventory::new(labels, Some(0), UnitKind::Graphemic).unwrap();
        let p = parse_priors("<b> 0.43\na 0.57\n", &inv, 1e-8, "t").unwrap();
        assert_eq!(p.priors(), &[0.43, 0.57]);
        assert!(parse_priors("<b> 1.0\n", &inv, 1e-8, "t").is_err());
        assert!(parse_priors("<b> 0.5\nz 0.5\n", &inv, 1e-8, "t").is_err());
        let again = parse_priors(&format_priors(&p, &inv), &inv, 1e-8, "t").unwrap();
        assert_eq!(again, p);
    }
}
