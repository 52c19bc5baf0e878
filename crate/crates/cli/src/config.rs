//! Run configuration: a `key=value` file overlaid with command-line values.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use isca_core::decoder::{DecodeConfig, TopologyKind};
use isca_core::io::{load_weights, read_text};
use isca_core::isca::DEFAULT_PRONUNCIATION_CAP;
use isca_core::{Error, Result, ScoreWeights, UnitKind};

/// Every key accepted in a config file or via `--set`.
pub const KEYS: &[&str] = &[
    "posteriors_dir",
    "posteriors",
    "units",
    "blank",
    "unit_kind",
    "lexicon",
    "lm",
    "priors",
    "scorer",
    "scorer_table",
    "aux_table",
    "references",
    "hypotheses",
    "nbest_dir",
    "output_dir",
    "output",
    "weights",
    "dump_graph",
    "words",
    "labels",
    "topology",
    "beam_width",
    "score_margin",
    "nbest",
    "alpha",
    "beta",
    "insertion_penalty",
    "blank_penalty",
    "aux_scale",
    "prior_scale",
    "population",
    "generations",
    "seed",
    "sigma",
    "tune_insertion_penalty",
    "tune_aux_scale",
    "length_normalize",
    "cap",
    "jobs",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScorerKind {
    File,
    CtcPrefix,
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
    pub weights: ScoreWeights,
    pub decode: DecodeConfig,
    pub topology: TopologyKind,
    pub unit_kind: UnitKind,
    pub blank: String,
    pub prior_scale: f64,
    pub population: Option<usize>,
    pub generations: usize,
    pub seed: u64,
    pub sigma: f64,
    pub tune_insertion_penalty: bool,
    pub tune_aux_scale: bool,
    pub length_normalize: bool,
    pub cap: usize,
    pub jobs: usize,
    pub scorer: ScorerKind,
}

/// Parses `key=value` lines; `#` starts a comment.
pub fn parse_config_text(text: &str, source: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| invalid(format!("{source}:{}: expected key=value", idx + 1)))?;
        let key = key.trim();
        check_key(key).map_err(|e| invalid(format!("{source}:{}: {e}", idx + 1)))?;
        out.insert(key.to_string(), value.trim().to_string());
    }
    Ok(out)
}

pub fn invalid(message: impl Into<String>) -> Error {
    Error::InvalidInput(message.into())
}

fn check_key(key: &str) -> Result<()> {
    if KEYS.contains(&key) {
        Ok(())
    } else {
        Err(invalid(format!("unknown config key {key:?}")))
    }
}

fn parsed<T: FromStr>(values: &BTreeMap<String, String>, key: &str) -> Result<Option<T>> {
    values
        .get(key)
        .map(|v| {
            v.parse::<T>()
                .map_err(|_| invalid(format!("invalid value {v:?} for {key}")))
        })
        .transpose()
}

fn flag(values: &BTreeMap<String, String>, key: &str) -> Result<bool> {
    match values.get(key).map(String::as_str) {
        None | Some("false") | Some("0") | Some("no") => Ok(false),
        Some("true") | Some("1") | Some("yes") => Ok(true),
        Some(v) => Err(invalid(format!("invalid boolean {v:?} for {key}"))),
    }
}

impl RunConfig {
    /// Layers: built-in defaults, then the config file, then `overrides`
    /// in order.
    pub fn resolve(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut values = match file {
            Some(p) => parse_config_text(&read_text(p)?, &p.display().to_string())?,
            None => BTreeMap::new(),
        };
        for (k, v) in overrides {
            check_key(k)?;
            values.insert(k.clone(), v.clone());
        }
        Self::from_values(values)
    }

    fn from_values(values: BTreeMap<String, String>) -> Result<Self> {
        let mut weights = match values.get("weights") {
            Some(p) => load_weights(Path::new(p))?,
            None => ScoreWeights::default(),
        };
        if let Some(v) = parsed(&values, "alpha")? {
            weights.lm_scale = v;
        }
        if let Some(v) = parsed(&values, "beta")? {
            weights.scorer_scale = v;
        }
        if let Some(v) = parsed(&values, "insertion_penalty")? {
            weights.insertion_penalty = v;
        }
        if let Some(v) = parsed(&values, "blank_penalty")? {
            weights.blank_penalty = v;
        }
        if let Some(v) = parsed(&values, "aux_scale")? {
            weights.aux_scale = v;
        }
        weights.validate()?;

        let defaults = DecodeConfig::default();
        let decode = DecodeConfig {
            beam_width: parsed(&values, "beam_width")?.unwrap_or(defaults.beam_width),
            score_margin: parsed(&values, "score_margin")?.unwrap_or(defaults.score_margin),
            nbest: parsed(&values, "nbest")?.unwrap_or(defaults.nbest),
            weights,
        };
        decode.validate()?;

        let topology = match values.get("topology") {
            Some(t) => t.parse()?,
            None => TopologyKind::Ctc,
        };
        let unit_kind = match values.get("unit_kind").map(String::as_str) {
            None | Some("phonetic") => UnitKind::Phonetic,
            Some("graphemic") => UnitKind::Graphemic,
            Some(v) => return Err(invalid(format!("unknown unit_kind {v:?}"))),
        };
        let scorer = match values.get("scorer").map(String::as_str) {
            None | Some("file") => ScorerKind::File,
            Some("ctc-prefix") => ScorerKind::CtcPrefix,
            Some(v) => return Err(invalid(format!("unknown scorer {v:?}; use file or ctc-prefix"))),
        };
        let prior_scale = parsed(&values, "prior_scale")?.unwrap_or(0.0);
        let population = parsed(&values, "population")?;
        if population.is_some_and(|p: usize| p < 4) {
            return Err(invalid("population must be at least 4"));
        }
        let cap = parsed(&values, "cap")?.unwrap_or(DEFAULT_PRONUNCIATION_CAP);
        if cap == 0 {
            return Err(invalid("cap must be at least 1"));
        }
        let jobs = parsed(&values, "jobs")?.unwrap_or(1);
        if jobs == 0 {
            return Err(invalid("jobs must be at least 1"));
        }
        let sigma = parsed(&values, "sigma")?.unwrap_or(0.5);
        Ok(Self {
            weights,
            decode,
            topology,
            unit_kind,
            blank: values.get("blank").cloned().unwrap_or_else(|| "<b>".to_string()),
            prior_scale,
            population,
            generations: parsed(&values, "generations")?.unwrap_or(50),
            seed: parsed(&values, "seed")?.unwrap_or(0),
            sigma,
            tune_insertion_penalty: flag(&values, "tune_insertion_penalty")?,
            tune_aux_scale: flag(&values, "tune_aux_scale")?,
            length_normalize: flag(&values, "length_normalize")?,
            cap,
            jobs,
            scorer,
            values,
        })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// A path that must be configured and must exist.
    pub fn existing_path(&self, key: &str) -> Result<PathBuf> {
        let p = self.required(key)?;
        let path = PathBuf::from(p);
        if !path.exists() {
            return Err(invalid(format!("{key}: {} does not exist", path.display())));
        }
        Ok(path)
    }

    pub fn optional_path(&self, key: &str) -> Result<Option<PathBuf>> {
        match self.get(key) {
            None => Ok(None),
            Some(_) => self.existing_path(key).map(Some),
        }
    }

    pub fn required(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| invalid(format!("missing required setting {key} (config key or --{})", key.replace('_', "-"))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(items: &[(&str, &str)]) -> Vec<(String, String)> {
        items.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn file_then_overrides() {
        let dir = std::env::temp_dir().join(format!("isca-config-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("run.cfg");
        std::fs::write(&path, "# experiment\nalpha = 0.5\nbeta=2\nnbest=7\ntopology=hmm:2\n").unwrap();
        let cfg = RunConfig::resolve(Some(&path), &pairs(&[("alpha", "0.8")])).unwrap();
        assert_eq!(cfg.weights.lm_scale, 0.8);
        assert_eq!(cfg.weights.scorer_scale, 2.0);
        assert_eq!(cfg.decode.nbest, 7);
        assert_eq!(cfg.topology, TopologyKind::Hmm { states_per_unit: 2 });
        std::fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn rejects_bad_values() {
        assert!(RunConfig::resolve(None, &pairs(&[("alpha", "x")])).is_err());
        assert!(RunConfig::resolve(None, &pairs(&[("alpha", "-1")])).is_err());
        assert!(RunConfig::resolve(None, &pairs(&[("colour", "red")])).is_err());
        assert!(RunConfig::resolve(None, &pairs(&[("population", "3")])).is_err());
        assert!(parse_config_text("alpha 1\n", "c").is_err());
        let cfg = RunConfig::resolve(None, &[]).unwrap();
        assert_eq!(cfg.weights, ScoreWeights::default());
        assert!(cfg.required("lexicon").unwrap_err().to_string().contains("--lexicon"));
    }
}
