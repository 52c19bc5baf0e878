//! Python bindings. Unit sequences cross the boundary as label strings and
//! are resolved against a `UnitInventory`; all scores are natural logs.

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use isca_core::acoustic::{self, score_frames};
use isca_core::decoder::{self, AcousticMode, DecodeConfig, TopologyKind};
use isca_core::eval::{self, EditOp};
use isca_core::io;
use isca_core::isca::{self as rescoring, DevUtterance, LabelScorer, SumOptions, TuneConfig};
use isca_core::lm::{self, NGramLM};
use isca_core::topology;
use isca_core::{Error, UnitKind, UnitPrior};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        Error::Invariant(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for isca_core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

fn topology_kind(name: &str) -> PyResult<TopologyKind> {
    name.parse().py()
}

#[pyclass(module = "isca")]
struct UnitInventory(isca_core::UnitInventory);

#[pymethods]
impl UnitInventory {
    /// `blank` names the blank label, or `None` for a blank-free inventory.
    #[new]
    #[pyo3(signature = (labels, blank = Some("<b>".to_string()), kind = "phonetic"))]
    fn new(labels: Vec<String>, blank: Option<String>, kind: &str) -> PyResult<Self> {
        let kind = match kind {
            "phonetic" => UnitKind::Phonetic,
            "graphemic" => UnitKind::Graphemic,
            other => return Err(PyValueError::new_err(format!("unknown unit kind {other:?}"))),
        };
        isca_core::UnitInventory::with_blank_label(labels, blank.as_deref(), kind).py().map(Self)
    }

    #[getter]
    fn labels(&self) -> Vec<String> {
        self.0.labels().to_vec()
    }

    #[getter]
    fn blank(&self) -> Option<String> {
        self.0.blank().map(|b| self.0.label(b).to_string())
    }

    fn index_of(&self, label: &str) -> Option<usize> {
        self.0.index_of(label)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __repr__(&self) -> String {
        format!("UnitInventory({:?})", self.0.labels())
    }
}

impl UnitInventory {
    fn resolve(&self, labels: &[String]) -> PyResult<Vec<usize>> {
        self.0.resolve(labels).py()
    }
}

#[pyclass(module = "isca")]
struct Lexicon(isca_core::Lexicon);

#[pymethods]
impl Lexicon {
    /// `entries` maps each word to a list of pronunciations, each a list of
    /// unit labels.
    #[new]
    fn new(entries: Vec<(String, Vec<Vec<String>>)>, inventory: &UnitInventory) -> PyResult<Self> {
        let mut lex = isca_core::Lexicon::new();
        for (word, prons) in entries {
            for p in prons {
                lex.add(&word.to_uppercase(), inventory.resolve(&p)?, &inventory.0).py()?;
            }
        }
        Ok(Self(lex))
    }

    #[staticmethod]
    fn from_text(text: &str, inventory: &UnitInventory) -> PyResult<Self> {
        io::parse_lexicon(text, &inventory.0, "<string>").py().map(Self)
    }

    fn to_text(&self, inventory: &UnitInventory) -> String {
        io::format_lexicon(&self.0, &inventory.0)
    }

    fn words(&self) -> Vec<String> {
        self.0.words().map(str::to_string).collect()
    }

    fn pronunciations(&self, word: &str, inventory: &UnitInventory) -> Option<Vec<Vec<String>>> {
        self.0.pronunciations(&word.to_uppercase()).map(|prons| {
            prons
                .iter()
                .map(|p| p.iter().map(|&u| inventory.0.label(u).to_string()).collect())
                .collect()
        })
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

#[pyclass(module = "isca")]
struct PosteriorMatrix(isca_core::PosteriorMatrix);

#[pymethods]
impl PosteriorMatrix {
    #[new]
    fn new(utterance_id: String, rows: Vec<Vec<f64>>) -> PyResult<Self> {
        isca_core::PosteriorMatrix::new(utterance_id, rows).py().map(Self)
    }

    #[staticmethod]
    fn from_text(text: &str, utterance_id: &str) -> PyResult<Self> {
        io::parse_posteriors(text, utterance_id, "<string>").py().map(Self)
    }

    fn to_text(&self) -> String {
        io::format_posteriors(&self.0)
    }

    #[getter]
    fn utterance_id(&self) -> String {
        self.0.utterance_id.clone()
    }

    #[getter]
    fn num_frames(&self) -> usize {
        self.0.num_frames()
    }

    #[getter]
    fn num_units(&self) -> usize {
        self.0.num_units()
    }

    fn rows(&self) -> Vec<Vec<f64>> {
        self.0.rows().map(<[f64]>::to_vec).collect()
    }
}

#[pyclass(module = "isca")]
struct LanguageModel(NGramLM);

#[pymethods]
impl LanguageModel {
    #[staticmethod]
    #[pyo3(signature = (corpus, order = 3, discount = 0.5))]
    fn train(corpus: Vec<Vec<String>>, order: usize, discount: f64) -> PyResult<Self> {
        lm::train_ngram(&corpus, order, discount).py().map(Self)
    }

    #[staticmethod]
    fn from_arpa(text: &str) -> PyResult<Self> {
        lm::parse_arpa(text, "<string>").py().map(Self)
    }

    fn to_arpa(&self) -> String {
        lm::format_arpa(&self.0)
    }

    #[getter]
    fn order(&self) -> usize {
        self.0.order()
    }

    fn vocabulary(&self) -> Vec<String> {
        self.0.vocabulary().to_vec()
    }

    /// Natural-log probability of a full sentence, including the end marker.
    fn score(&self, words: Vec<String>) -> f64 {
        self.0.score_sequence(&words)
    }
}

#[pyclass(module = "isca", get_all, set_all, skip_from_py_object)]
#[derive(Clone)]
struct ScoreWeights {
    alpha: f64,
    beta: f64,
    blank_penalty: f64,
    insertion_penalty: f64,
    aux_scale: f64,
}

#[pymethods]
impl ScoreWeights {
    #[new]
    #[pyo3(signature = (alpha = 1.0, beta = 0.0, blank_penalty = 0.0, insertion_penalty = 0.0, aux_scale = 0.0))]
    fn new(alpha: f64, beta: f64, blank_penalty: f64, insertion_penalty: f64, aux_scale: f64) -> PyResult<Self> {
        let w = Self { alpha, beta, blank_penalty, insertion_penalty, aux_scale };
        w.core().validate().py()?;
        Ok(w)
    }

    fn __repr__(&self) -> String {
        format!(
            "ScoreWeights(alpha={}, beta={}, blank_penalty={}, insertion_penalty={}, aux_scale={})",
            self.alpha, self.beta, self.blank_penalty, self.insertion_penalty, self.aux_scale
        )
    }
}

impl ScoreWeights {
    fn core(&self) -> isca_core::ScoreWeights {
        isca_core::ScoreWeights {
            lm_scale: self.alpha,
            scorer_scale: self.beta,
            blank_penalty: self.blank_penalty,
            insertion_penalty: self.insertion_penalty,
            aux_scale: self.aux_scale,
        }
    }

    fn from_core(w: &isca_core::ScoreWeights) -> Self {
        Self {
            alpha: w.lm_scale,
            beta: w.scorer_scale,
            blank_penalty: w.blank_penalty,
            insertion_penalty: w.insertion_penalty,
            aux_scale: w.aux_scale,
        }
    }
}

fn weights_or_default(w: Option<PyRef<'_, ScoreWeights>>) -> isca_core::ScoreWeights {
    w.map_or_else(isca_core::ScoreWeights::default, |w| w.core())
}

#[pyclass(module = "isca", get_all, set_all, skip_from_py_object)]
#[derive(Clone)]
struct Hypothesis {
    words: Vec<String>,
    acoustic_logp: f64,
    lm_logp: f64,
    scorer_logp: Option<f64>,
    aux_logp: Option<f64>,
}

#[pymethods]
impl Hypothesis {
    #[new]
    #[pyo3(signature = (words, acoustic_logp, lm_logp, scorer_logp = None, aux_logp = None))]
    fn new(words: Vec<String>, acoustic_logp: f64, lm_logp: f64, scorer_logp: Option<f64>, aux_logp: Option<f64>) -> Self {
        Self { words, acoustic_logp, lm_logp, scorer_logp, aux_logp }
    }

    fn __repr__(&self) -> String {
        format!(
            "Hypothesis({:?}, ac={}, lm={}, scorer={:?})",
            self.words.join(" "),
            self.acoustic_logp,
            self.lm_logp,
            self.scorer_logp
        )
    }
}

impl Hypothesis {
    fn core(&self) -> isca_core::Hypothesis {
        isca_core::Hypothesis {
            words: self.words.iter().map(|w| w.to_uppercase()).collect(),
            acoustic_logp: self.acoustic_logp,
            lm_logp: self.lm_logp,
            scorer_logp: self.scorer_logp,
            aux_logp: self.aux_logp,
        }
    }

    fn from_core(h: &isca_core::Hypothesis) -> Self {
        Self {
            words: h.words.clone(),
            acoustic_logp: h.acoustic_logp,
            lm_logp: h.lm_logp,
            scorer_logp: h.scorer_logp,
            aux_logp: h.aux_logp,
        }
    }
}

#[pyclass(module = "isca")]
struct NBestList(isca_core::NBestList);

#[pymethods]
impl NBestList {
    #[new]
    fn new(utterance_id: String, hypotheses: Vec<PyRef<'_, Hypothesis>>) -> Self {
        Self(isca_core::NBestList::new(utterance_id, hypotheses.iter().map(|h| h.core()).collect()))
    }

    #[staticmethod]
    #[pyo3(signature = (text, utterance_id = "utt"))]
    fn from_text(text: &str, utterance_id: &str) -> PyResult<Self> {
        io::parse_nbest(text, utterance_id, "<string>").py().map(Self)
    }

    fn to_text(&self) -> String {
        io::format_nbest(&self.0)
    }

    #[getter]
    fn utterance_id(&self) -> String {
        self.0.utterance_id.clone()
    }

    /// Copies of the hypotheses, best first.
    #[getter]
    fn hypotheses(&self) -> Vec<Hypothesis> {
        self.0.hypotheses.iter().map(Hypothesis::from_core).collect()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

/// Unit-sequence scores read from a table; missing sequences score −inf.
#[pyclass(module = "isca")]
struct ScorerTable(rescoring::FileScorerTable);

#[pymethods]
impl ScorerTable {
    #[new]
    fn new() -> Self {
        Self(rescoring::FileScorerTable::new())
    }

    #[staticmethod]
    fn from_text(text: &str, inventory: &UnitInventory) -> PyResult<Self> {
        rescoring::parse_scorer_table(text, &inventory.0, "<string>").py().map(Self)
    }

    fn to_text(&self, inventory: &UnitInventory) -> String {
        rescoring::format_scorer_table(&self.0, &inventory.0)
    }

    fn insert(&mut self, utterance_id: &str, labels: Vec<String>, log_prob: f64, inventory: &UnitInventory) -> PyResult<()> {
        self.0.insert(utterance_id, inventory.resolve(&labels)?, log_prob).py()
    }

    fn score(&self, utterance_id: &str, labels: Vec<String>, inventory: &UnitInventory) -> PyResult<f64> {
        Ok(self.0.score(utterance_id, &inventory.resolve(&labels)?))
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

/// Scores complete unit sequences by CTC forward probability under
/// per-utterance posteriors.
#[pyclass(module = "isca")]
struct CtcScorer(rescoring::CtcSequenceScorer);

#[pymethods]
impl CtcScorer {
    #[new]
    fn new(posteriors: Vec<PyRef<'_, PosteriorMatrix>>, inventory: &UnitInventory) -> PyResult<Self> {
        rescoring::CtcSequenceScorer::new(posteriors.iter().map(|p| p.0.clone()), &inventory.0).py().map(Self)
    }

    fn score(&self, utterance_id: &str, labels: Vec<String>, inventory: &UnitInventory) -> PyResult<f64> {
        Ok(self.0.score(utterance_id, &inventory.resolve(&labels)?))
    }
}

fn with_scorer<T>(scorer: &Bound<'_, PyAny>, f: impl FnOnce(&dyn LabelScorer) -> PyResult<T>) -> PyResult<T> {
    if let Ok(t) = scorer.extract::<PyRef<'_, ScorerTable>>() {
        return f(&t.0);
    }
    if let Ok(c) = scorer.extract::<PyRef<'_, CtcScorer>>() {
        return f(&c.0);
    }
    Err(PyValueError::new_err("scorer must be a ScorerTable or CtcScorer"))
}

fn graph_for(labels: &[String], inventory: &UnitInventory, kind: &str) -> PyResult<topology::StateGraph> {
    let units = inventory.resolve(labels)?;
    match topology_kind(kind)? {
        TopologyKind::Ctc => topology::build_ctc_sequence_graph(&units, &inventory.0).py(),
        TopologyKind::Hmm { states_per_unit } => topology::build_hmm_sequence_graph(&units, states_per_unit).py(),
    }
}

fn frames_for(
    posteriors: &PosteriorMatrix,
    inventory: &UnitInventory,
    weights: &isca_core::ScoreWeights,
    priors: Option<Vec<f64>>,
    prior_scale: f64,
) -> PyResult<acoustic::ScoredFrames> {
    let priors = priors.map(|p| UnitPrior::new(p, 1e-8)).transpose().py()?;
    score_frames(&posteriors.0, priors.as_ref(), &inventory.0, weights, prior_scale).py()
}

/// Total log-likelihood of a label sequence, summed over all alignments.
#[pyfunction]
#[pyo3(signature = (posteriors, labels, inventory, topology = "ctc"))]
fn forward_loglik(posteriors: &PosteriorMatrix, labels: Vec<String>, inventory: &UnitInventory, topology: &str) -> PyResult<f64> {
    let graph = graph_for(&labels, inventory, topology)?;
    acoustic::forward_loglik(&graph, &acoustic::log_posteriors(&posteriors.0)).py()
}

/// Log-likelihood of the best single alignment of a label sequence.
#[pyfunction]
#[pyo3(signature = (posteriors, labels, inventory, topology = "ctc"))]
fn viterbi_loglik(posteriors: &PosteriorMatrix, labels: Vec<String>, inventory: &UnitInventory, topology: &str) -> PyResult<f64> {
    let graph = graph_for(&labels, inventory, topology)?;
    acoustic::viterbi_loglik(&graph, &acoustic::log_posteriors(&posteriors.0)).py()
}

/// Log probability that the CTC output starts with `prefix`.
#[pyfunction]
fn ctc_prefix_score(posteriors: &PosteriorMatrix, prefix: Vec<String>, inventory: &UnitInventory) -> PyResult<f64> {
    acoustic::ctc_prefix_score(&posteriors.0, &inventory.resolve(&prefix)?, &inventory.0).py()
}

/// Per-unit average posterior over a collection of utterances.
#[pyfunction]
fn estimate_priors(posteriors: Vec<PyRef<'_, PosteriorMatrix>>) -> PyResult<Vec<f64>> {
    let mats: Vec<_> = posteriors.iter().map(|p| p.0.clone()).collect();
    acoustic::estimate_priors(&mats).py().map(|p| p.priors().to_vec())
}

/// Beam search over the lexical prefix tree. Returns the n-best list and
/// the live token count after pruning at each frame.
#[pyfunction]
#[pyo3(signature = (
    posteriors, lexicon, inventory, lm, weights = None, beam_width = 10_000, score_margin = 50.0,
    nbest = 20, topology = "ctc", priors = None, prior_scale = 0.0,
))]
#[allow(clippy::too_many_arguments)]
fn decode(
    py: Python<'_>,
    posteriors: &PosteriorMatrix,
    lexicon: &Lexicon,
    inventory: &UnitInventory,
    lm: &LanguageModel,
    weights: Option<PyRef<'_, ScoreWeights>>,
    beam_width: usize,
    score_margin: f64,
    nbest: usize,
    topology: &str,
    priors: Option<Vec<f64>>,
    prior_scale: f64,
) -> PyResult<(NBestList, Vec<usize>)> {
    let weights = weights_or_default(weights);
    let frames = frames_for(posteriors, inventory, &weights, priors, prior_scale)?;
    let tree = decoder::build_prefix_tree(&lexicon.0, &inventory.0, topology_kind(topology)?).py()?;
    let config = DecodeConfig { beam_width, score_margin, nbest, weights };
    let id = posteriors.0.utterance_id.clone();
    let out = py.detach(|| decoder::beam_decode(&frames, &tree, &lm.0, &config, &id)).py()?;
    Ok((NBestList(out.nbest), out.live_tokens))
}

/// Reference decoder: scores every word sequence of up to `max_words` words.
#[pyfunction]
#[pyo3(signature = (posteriors, lexicon, inventory, lm, max_words, weights = None, nbest = 5, topology = "ctc", mode = "viterbi"))]
#[allow(clippy::too_many_arguments)]
fn exhaustive_decode(
    posteriors: &PosteriorMatrix,
    lexicon: &Lexicon,
    inventory: &UnitInventory,
    lm: &LanguageModel,
    max_words: usize,
    weights: Option<PyRef<'_, ScoreWeights>>,
    nbest: usize,
    topology: &str,
    mode: &str,
) -> PyResult<NBestList> {
    let weights = weights_or_default(weights);
    let mode = match mode {
        "viterbi" => AcousticMode::Viterbi,
        "forward" => AcousticMode::ForwardSum,
        other => return Err(PyValueError::new_err(format!("unknown mode {other:?}; use viterbi or forward"))),
    };
    let frames = frames_for(posteriors, inventory, &weights, None, 0.0)?;
    let hyps = decoder::exhaustive_decode(
        &frames,
        &lexicon.0,
        &inventory.0,
        &lm.0,
        &weights,
        max_words,
        topology_kind(topology)?,
        mode,
        nbest,
    )
    .py()?;
    Ok(NBestList(isca_core::NBestList::new(posteriors.0.utterance_id.clone(), hyps)))
}

/// `ln Σ` of the scorer over the pronunciation combinations of `words`.
/// Returns `(log_prob, sequences_summed, truncated)`.
#[pyfunction]
#[pyo3(signature = (lexicon, words, scorer, utterance_id, cap = rescoring::DEFAULT_PRONUNCIATION_CAP))]
fn pronunciation_sum(
    lexicon: &Lexicon,
    words: Vec<String>,
    scorer: &Bound<'_, PyAny>,
    utterance_id: &str,
    cap: usize,
) -> PyResult<(f64, usize, bool)> {
    let words: Vec<String> = words.iter().map(|w| w.to_uppercase()).collect();
    with_scorer(scorer, |s| {
        let r = rescoring::pronunciation_sum(&lexicon.0, &words, s, utterance_id, cap).py()?;
        Ok((r.log_prob, r.sequences, r.truncated))
    })
}

#[pyfunction]
fn combine_scores(hypothesis: &Hypothesis, weights: &ScoreWeights) -> f64 {
    rescoring::combine_scores(&hypothesis.core(), &weights.core())
}

/// Fills the scorer column and re-ranks by the combined score.
#[pyfunction]
#[pyo3(signature = (nbest, scorer, lexicon, weights, cap = rescoring::DEFAULT_PRONUNCIATION_CAP, length_normalize = false))]
fn rescore(
    nbest: &NBestList,
    scorer: &Bound<'_, PyAny>,
    lexicon: &Lexicon,
    weights: &ScoreWeights,
    cap: usize,
    length_normalize: bool,
) -> PyResult<NBestList> {
    let options = SumOptions { cap, length_normalize };
    with_scorer(scorer, |s| {
        rescoring::rescore_nbest_with(&nbest.0, s, &lexicon.0, &weights.core(), &options)
            .py()
            .map(|r| NBestList(r.nbest))
    })
}

/// CMA-ES search of the weights minimising pooled dev WER. `dev` pairs each
/// rescored n-best list with its reference words. Returns
/// `(weights, wer, initial_wer, best_wer_per_generation)`.
#[pyfunction]
#[pyo3(signature = (dev, init = None, generations = 50, seed = 0, population = None, sigma = 0.5,
    tune_insertion_penalty = false, tune_aux_scale = false))]
#[allow(clippy::too_many_arguments)]
fn tune(
    py: Python<'_>,
    dev: Vec<(PyRef<'_, NBestList>, Vec<String>)>,
    init: Option<PyRef<'_, ScoreWeights>>,
    generations: usize,
    seed: u64,
    population: Option<usize>,
    sigma: f64,
    tune_insertion_penalty: bool,
    tune_aux_scale: bool,
) -> PyResult<(ScoreWeights, f64, f64, Vec<f64>)> {
    let dev: Vec<DevUtterance> = dev
        .iter()
        .map(|(n, r)| DevUtterance { nbest: n.0.clone(), reference: r.iter().map(|w| w.to_uppercase()).collect() })
        .collect();
    let init = weights_or_default(init);
    let config = TuneConfig {
        population,
        generations,
        seed,
        initial_sigma: sigma,
        tune_insertion_penalty,
        tune_aux_scale,
    };
    let r = py.detach(|| rescoring::tune_weights(&dev, init, &config)).py()?;
    let history = r.history.iter().map(|g| g.best_wer).collect();
    Ok((ScoreWeights::from_core(&r.weights), r.wer, r.initial_wer, history))
}

/// Minimum edit alignment. Returns `(substitutions, insertions, deletions,
/// reference_length, ops)` with ops drawn from `match`, `sub`, `ins`, `del`.
#[pyfunction]
fn align_words(reference: Vec<String>, hypothesis: Vec<String>) -> (usize, usize, usize, usize, Vec<&'static str>) {
    let (s, ops) = eval::align_words(&reference, &hypothesis);
    let ops = ops
        .iter()
        .map(|op| match op {
            EditOp::Match => "match",
            EditOp::Substitution => "sub",
            EditOp::Insertion => "ins",
            EditOp::Deletion => "del",
        })
        .collect();
    (s.substitutions, s.insertions, s.deletions, s.reference_length, ops)
}

/// Per-utterance and TOTAL report lines; returns `(report, total_wer)`.
#[pyfunction]
fn wer_report(references: Vec<(String, Vec<String>)>, hypotheses: Vec<(String, Vec<String>)>) -> PyResult<(String, f64)> {
    let upper = |items: Vec<(String, Vec<String>)>| -> Vec<(String, Vec<String>)> {
        items
            .into_iter()
            .map(|(id, w)| (id, w.iter().map(|x| x.to_uppercase()).collect()))
            .collect()
    };
    let (report, total) = eval::wer_report(&upper(references), &upper(hypotheses)).py()?;
    Ok((report, total.wer()))
}

#[pymodule]
fn isca(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<UnitInventory>()?;
    m.add_class::<Lexicon>()?;
    m.add_class::<PosteriorMatrix>()?;
    m.add_class::<LanguageModel>()?;
    m.add_class::<ScoreWeights>()?;
    m.add_class::<Hypothesis>()?;
    m.add_class::<NBestList>()?;
    m.add_class::<ScorerTable>()?;
    m.add_class::<CtcScorer>()?;
    m.add_function(wrap_pyfunction!(forward_loglik, m)?)?;
    m.add_function(wrap_pyfunction!(viterbi_loglik, m)?)?;
    m.add_function(wrap_pyfunction!(ctc_prefix_score, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_priors, m)?)?;
    m.add_function(wrap_pyfunction!(decode, m)?)?;
    m.add_function(wrap_pyfunction!(exhaustive_decode, m)?)?;
    m.add_function(wrap_pyfunction!(pronunciation_sum, m)?)?;
    m.add_function(wrap_pyfunction!(combine_scores, m)?)?;
    m.add_function(wrap_pyfunction!(rescore, m)?)?;
    m.add_function(wrap_pyfunction!(tune, m)?)?;
    m.add_function(wrap_pyfunction!(align_words, m)?)?;
    m.add_function(wrap_pyfunction!(wer_report, m)?)?;
    Ok(())
}
