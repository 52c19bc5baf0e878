use crate::error::{Error, Result};
use crate::eval::{align_words, EditStats};
use crate::types::{rank_order, NBestList, ScoreWeights};

use super::cmaes::{CmaEs, CmaEsParams};
use super::combine_scores;

/// One development utterance: its rescored n-best list and reference.
#[derive(Clone, Debug, PartialEq)]
pub struct DevUtterance {
    pub nbest: NBestList,
    pub reference: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TuneConfig {
    /// `None` uses the default population for the search dimension.
    pub population: Option<usize>,
    pub generations: usize,
    pub seed: u64,
    pub initial_sigma: f64,
    /// Also search the (unconstrained) insertion penalty.
    pub tune_insertion_penalty: bool,
    /// Also search the auxiliary scorer weight.
    pub tune_aux_scale: bool,
}

impl Default for TuneConfig {
    fn default() -> Self {
        Self {
            population: None,
            generations: 50,
            seed: 0,
            initial_sigma: 0.5,
            tune_insertion_penalty: false,
            tune_aux_scale: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GenerationRecord {
    pub generation: usize,
    /// Best WER among this generation's candidates.
    pub generation_wer: f64,
    /// Best WER seen so far, including the initial weights.
    pub best_wer: f64,
    pub sigma: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TuneResult {
    pub weights: ScoreWeights,
    pub wer: f64,
    pub initial_wer: f64,
    pub history: Vec<GenerationRecord>,
}

struct Candidate {
    words: Vec<String>,
    errors: usize,
    hypothesis: crate::types::Hypothesis,
}

/// Per-hypothesis edit counts, computed once.
struct Objective {
    utterances: Vec<Vec<Candidate>>,
    reference_words: usize,
    /// Reference length of utterances with empty n-best lists, counted as
    /// deletions.
    unanswered: usize,
}

impl Objective {
    fn new(dev: &[DevUtterance]) -> Self {
        let mut reference_words = 0;
        let mut unanswered = 0;
        let utterances = dev
            .iter()
            .map(|u| {
                reference_words += u.reference.len();
                if u.nbest.is_empty() {
                    unanswered += u.reference.len();
                }
                u.nbest
                    .hypotheses
                    .iter()
                    .map(|h| Candidate {
                        words: h.words.clone(),
                        errors: align_words(&u.reference, &h.words).0.errors(),
                        hypothesis: h.clone(),
                    })
                    .collect()
            })
            .collect();
        Self {
            utterances,
            reference_words,
            unanswered,
        }
    }

    fn errors(&self, weights: &ScoreWeights) -> usize {
        let mut total = self.unanswered;
        for cands in &self.utterances {
            let mut best: Option<(f64, &Candidate)> = None;
            for c in cands {
                let s = combine_scores(&c.hypothesis, weights);
                let better = match best {
                    None => true,
                    Some((bs, b)) => rank_order(s, &c.words, bs, &b.words).is_lt(),
                };
                if better {
                    best = Some((s, c));
                }
            }
            if let Some((_, c)) = best {
                total += c.errors;
            }
        }
        total
    }

    fn wer(&self, weights: &ScoreWeights) -> f64 {
        let errors = self.errors(weights);
        if self.reference_words == 0 {
            return if errors == 0 { 0.0 } else { f64::INFINITY };
        }
        errors as f64 / self.reference_words as f64
    }
}

/// Pooled statistics of the re-ranked 1-best hypotheses under `weights`.
pub fn dev_wer(dev: &[DevUtterance], weights: &ScoreWeights) -> Result<EditStats> {
    if dev.is_empty() {
        return Err(Error::invalid("empty development set"));
    }
    let mut total = EditStats::default();
    for u in dev {
        let best = u
            .nbest
            .hypotheses
            .iter()
            .map(|h| (combine_scores(h, weights), h))
            .min_by(|a, b| rank_order(a.0, &a.1.words, b.0, &b.1.words));
        let words: &[String] = best.map_or(&[], |(_, h)| &h.words);
        total += align_words(&u.reference, words).0;
    }
    Ok(total)
}

/// Search-space layout: `[√α, √β, penalty?, √aux?]`.
struct Encoding {
    base: ScoreWeights,
    penalty: bool,
    aux: bool,
}

impl Encoding {
    fn dimension(&self) -> usize {
        2 + usize::from(self.penalty) + usize::from(self.aux)
    }

    fn encode(&self, w: &ScoreWeights) -> Vec<f64> {
        let mut x = vec![w.lm_scale.sqrt(), w.scorer_scale.sqrt()];
        if self.penalty {
            x.push(w.insertion_penalty);
        }
        if self.aux {
            x.push(w.aux_scale.sqrt());
        }
        x
    }

    fn decode(&self, x: &[f64]) -> ScoreWeights {
        let mut w = ScoreWeights {
            lm_scale: x[0] * x[0],
            scorer_scale: x[1] * x[1],
            ..self.base
        };
        let mut i = 2;
        if self.penalty {
            w.insertion_penalty = x[i];
            i += 1;
        }
        if self.aux {
            w.aux_scale = x[i] * x[i];
        }
        w
    }
}

/// Minimises dev WER of the re-ranked 1-best over (α, β) and optionally the
/// insertion penalty and auxiliary weight. The result is the best weights
/// ever evaluated, starting from `init`, so its WER never exceeds that of
/// `init`. Deterministic for a given seed.
pub fn tune_weights(dev: &[DevUtterance], init: ScoreWeights, config: &TuneConfig) -> Result<TuneResult> {
    if dev.is_empty() {
        return Err(Error::invalid("empty development set"));
    }
    init.validate()?;
    let objective = Objective::new(dev);
    let encoding = Encoding {
        base: init,
        penalty: config.tune_insertion_penalty,
        aux: config.tune_aux_scale,
    };
    let initial_wer = objective.wer(&init);
    let mut best = (initial_wer, init);
    let mut history = Vec::with_capacity(config.generations);
    if config.generations == 0 {
        return Ok(TuneResult {
            weights: init,
            wer: initial_wer,
            initial_wer,
            history,
        });
    }

    let mut es = CmaEs::new(
        &encoding.encode(&init),
        &CmaEsParams {
            dimension: encoding.dimension(),
            population: config.population,
            initial_sigma: config.initial_sigma,
            seed: config.seed,
        },
    )?;
    for generation in 0..config.generations {
        let candidates = es.ask();
        let decoded: Vec<ScoreWeights> = candidates.iter().map(|x| encoding.decode(x)).collect();
        let fitness: Vec<f64> = decoded.iter().map(|w| objective.wer(w)).collect();
        let mut generation_wer = f64::INFINITY;
        for (w, &f) in decoded.iter().zip(&fitness) {
            generation_wer = generation_wer.min(f);
            if f < best.0 {
                best = (f, *w);
            }
        }
        es.tell(&candidates, &fitness)?;
        history.push(GenerationRecord {
            generation: generation + 1,
            generation_wer,
            best_wer: best.0,
            sigma: es.sigma(),
        });
    }
    Ok(TuneResult {
        weights: best.1,
        wer: best.0,
        initial_wer,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Hypothesis;

    fn words(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    fn hyp(text: &str, ac: f64, lm: f64, scorer: f64) -> Hypothesis {
        let mut h = Hypothesis::new(words(text), ac, lm);
        h.scorer_logp = Some(scorer);
        h
    }

    fn scorer_only_dev() -> Vec<DevUtterance> {
        vec![DevUtterance {
            nbest: NBestList::new(
                "u",
                vec![hyp("A B", -10.0, -1.0, -8.0), hyp("A C", -10.5, -1.5, -1.0)],
            ),
            reference: words("A C"),
        }]
    }

    #[test]
    fn zero_generations_returns_init() {
        let init = ScoreWeights::default();
        let config = TuneConfig {
            generations: 0,
            ..Default::default()
        };
        let r = tune_weights(&scorer_only_dev(), init, &config).unwrap();
        assert_eq!(r.weights, init);
        assert_eq!(r.wer, 0.5);
        assert!(r.history.is_empty());
    }

    #[test]
    fn finds_scorer_driven_optimum() {
        let r = tune_weights(&scorer_only_dev(), ScoreWeights::default(), &TuneConfig::default()).unwrap();
        assert_eq!(r.initial_wer, 0.5);
        assert_eq!(r.wer, 0.0);
        assert_eq!(dev_wer(&scorer_only_dev(), &r.weights).unwrap().wer(), 0.0);
        assert!(r.history.windows(2).all(|w| w[1].best_wer <= w[0].best_wer));
    }

    #[test]
    fn deterministic_and_never_worse() {
        let dev = scorer_only_dev();
        let init = ScoreWeights {
            scorer_scale: 1.0,
            ..Default::default()
        };
        let config = TuneConfig {
            seed: 11,
            tune_insertion_penalty: true,
            ..Default::default()
        };
        let a = tune_weights(&dev, init, &config).unwrap();
        let b = tune_weights(&dev, init, &config).unwrap();
        assert_eq!(a, b);
        assert!(a.wer <= a.initial_wer);
    }

    #[test]
    fn empty_dev_is_rejected() {
        assert!(tune_weights(&[], ScoreWeights::default(), &TuneConfig::default()).is_err());
        assert!(dev_wer(&[], &ScoreWeights::default()).is_err());
    }

    #[test]
    fn objective_matches_dev_wer() {
        let dev = scorer_only_dev();
        let objective = Objective::new(&dev);
        for (a, b) in [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (2.0, 0.3)] {
            let w = ScoreWeights {
                lm_scale: a,
                scorer_scale: b,
                ..Default::default()
            };
            assert_eq!(objective.wer(&w), dev_wer(&dev, &w).unwrap().wer());
        }
    }
}
