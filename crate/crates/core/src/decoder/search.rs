//! Token-passing Viterbi beam search.
//!
//! A token is a partial hypothesis: the words completed so far, the language
//! model context, and separate acoustic and LM log scores. Tokens live in
//! buckets keyed by (search state, LM context). Two tokens in the same bucket
//! have identical futures, so keeping the best `nbest` distinct word
//! sequences per bucket loses nothing from the final n-best list.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};

use crate::acoustic::ScoredFrames;
use crate::error::{Error, Result};
use crate::lm::{LmState, NGramLM};
use crate::types::{Hypothesis, NBestList};

use super::tree::PrefixTree;
use super::{search_score, DecodeConfig, TopologyKind};

#[derive(Clone, Debug, Default)]
pub struct DecodeOutput {
    pub nbest: NBestList,
    /// Live tokens after pruning, per frame.
    pub live_tokens: Vec<usize>,
    /// Set when no complete hypothesis survived.
    pub warning: Option<String>,
}

/// One arc of the expanded search graph.
#[derive(Clone, Copy, Debug)]
struct Arc {
    to: u32,
    /// Word completed when taking this arc.
    word: Option<u32>,
}

/// Search states expanded from the prefix tree.
struct SearchGraph {
    emission: Vec<Option<usize>>,
    arcs: Vec<Vec<Arc>>,
    initial: Vec<u32>,
    /// Ways to end the utterance in each state: `None` ends without
    /// completing a word.
    exits: Vec<Vec<Option<u32>>>,
}

impl SearchGraph {
    fn build(tree: &PrefixTree) -> Self {
        match tree.kind() {
            TopologyKind::Ctc => Self::ctc(tree),
            TopologyKind::Hmm { states_per_unit } => Self::hmm(tree, states_per_unit),
        }
    }

    /// State `2n` is the unit state of node `n`; `2n + 1` is the blank that
    /// follows it. The root's blank is the word-boundary blank.
    fn ctc(tree: &PrefixTree) -> Self {
        let blank = tree.blank().expect("CTC prefix tree has a blank");
        let nodes = tree.nodes();
        let n = nodes.len() * 2;
        let unit_state = |node: usize| (2 * node) as u32;
        let blank_state = |node: usize| (2 * node + 1) as u32;
        let root = PrefixTree::ROOT;
        let mut g = SearchGraph {
            emission: vec![None; n],
            arcs: vec![Vec::new(); n],
            initial: Vec::new(),
            exits: vec![Vec::new(); n],
        };
        let root_children = &nodes[root].children;

        g.emission[blank_state(root) as usize] = Some(blank);
        g.initial.push(blank_state(root));
        g.initial.extend(root_children.iter().map(|&c| unit_state(c)));
        let root_blank = &mut g.arcs[blank_state(root) as usize];
        root_blank.push(Arc { to: blank_state(root), word: None });
        root_blank.extend(root_children.iter().map(|&c| Arc { to: unit_state(c), word: None }));
        g.exits[blank_state(root) as usize].push(None);

        for (id, node) in nodes.iter().enumerate().skip(1) {
            let unit = node.unit.expect("non-root nodes carry a unit");
            let us = unit_state(id) as usize;
            g.emission[us] = Some(unit);
            let arcs = &mut g.arcs[us];
            arcs.push(Arc { to: unit_state(id), word: None });
            if !node.children.is_empty() {
                arcs.push(Arc { to: blank_state(id), word: None });
            }
            for &c in &node.children {
                if nodes[c].unit != Some(unit) {
                    arcs.push(Arc { to: unit_state(c), word: None });
                }
            }
            for end in &node.word_ends {
                arcs.push(Arc { to: blank_state(root), word: Some(end.word) });
                for &c in root_children {
                    if nodes[c].unit != Some(unit) {
                        arcs.push(Arc { to: unit_state(c), word: Some(end.word) });
                    }
                }
                g.exits[us].push(Some(end.word));
            }
            if !node.children.is_empty() {
                let bs = blank_state(id) as usize;
                g.emission[bs] = Some(blank);
                g.arcs[bs].push(Arc { to: blank_state(id), word: None });
                g.arcs[bs].extend(node.children.iter().map(|&c| Arc { to: unit_state(c), word: None }));
            }
        }
        g
    }

    /// State `n * S + k` is sub-state `k` of node `n`.
    fn hmm(tree: &PrefixTree, states_per_unit: usize) -> Self {
        let nodes = tree.nodes();
        let s = states_per_unit;
        let n = nodes.len() * s;
        let state = |node: usize, k: usize| (node * s + k) as u32;
        let mut g = SearchGraph {
            emission: vec![None; n],
            arcs: vec![Vec::new(); n],
            initial: Vec::new(),
            exits: vec![Vec::new(); n],
        };
        let root_children = &nodes[PrefixTree::ROOT].children;
        g.initial.extend(root_children.iter().map(|&c| state(c, 0)));
        for (id, node) in nodes.iter().enumerate().skip(1) {
            for k in 0..s {
                let st = state(id, k) as usize;
                g.emission[st] = node.unit;
                let arcs = &mut g.arcs[st];
                arcs.push(Arc { to: state(id, k), word: None });
                if k + 1 < s {
                    arcs.push(Arc { to: state(id, k + 1), word: None });
                    continue;
                }
                arcs.extend(node.children.iter().map(|&c| Arc { to: state(c, 0), word: None }));
                for end in &node.word_ends {
                    arcs.extend(root_children.iter().map(|&c| Arc { to: state(c, 0), word: Some(end.word) }));
                    g.exits[st].push(Some(end.word));
                }
            }
        }
        g
    }
}

#[derive(Clone, Debug)]
struct Token {
    words: Vec<u32>,
    acoustic: f64,
    lm: f64,
    score: f64,
}

/// Higher score first, then lexicographically smaller word sequence.
fn token_order(a: &Token, b: &Token) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.words.cmp(&b.words))
}

/// Keeps at most `capacity` distinct word sequences, best first.
fn insert_token(bucket: &mut Vec<Token>, token: Token, capacity: usize) {
    if let Some(existing) = bucket.iter_mut().find(|t| t.words == token.words) {
        if token.score > existing.score {
            *existing = token;
        }
    } else {
        bucket.push(token);
    }
    bucket.sort_by(token_order);
    bucket.truncate(capacity);
}

/// Interned LM contexts with memoised transitions.
struct LmCache<'a> {
    lm: &'a NGramLM,
    words: &'a [String],
    states: Vec<LmState>,
    ids: HashMap<LmState, u32>,
    transitions: HashMap<(u32, u32), (f64, u32)>,
    finals: HashMap<u32, f64>,
}

impl<'a> LmCache<'a> {
    fn new(lm: &'a NGramLM, words: &'a [String]) -> Self {
        let mut cache = Self {
            lm,
            words,
            states: Vec::new(),
            ids: HashMap::new(),
            transitions: HashMap::new(),
            finals: HashMap::new(),
        };
        cache.intern(lm.initial_state());
        cache
    }

    fn intern(&mut self, state: LmState) -> u32 {
        if let Some(&id) = self.ids.get(&state) {
            return id;
        }
        let id = self.states.len() as u32;
        self.states.push(state.clone());
        self.ids.insert(state, id);
        id
    }

    fn advance(&mut self, state: u32, word: u32) -> (f64, u32) {
        if let Some(&hit) = self.transitions.get(&(state, word)) {
            return hit;
        }
        let (logp, next) = self.lm.advance(&self.states[state as usize], &self.words[word as usize]);
        let next = self.intern(next);
        self.transitions.insert((state, word), (logp, next));
        (logp, next)
    }

    fn final_log_prob(&mut self, state: u32) -> f64 {
        if let Some(&hit) = self.finals.get(&state) {
            return hit;
        }
        let p = self.lm.final_log_prob(&self.states[state as usize]);
        self.finals.insert(state, p);
        p
    }
}

type Buckets = BTreeMap<(u32, u32), Vec<Token>>;

/// Token-passing Viterbi search. At every word end the token gains
/// `α · ln P(word | history)` and the insertion penalty. The returned list
/// holds distinct word sequences ranked by `ac + α·lm + penalty·words`, with
/// `scorer_logp` unset.
pub fn beam_decode(
    frames: &ScoredFrames,
    tree: &PrefixTree,
    lm: &NGramLM,
    config: &DecodeConfig,
    utterance_id: &str,
) -> Result<DecodeOutput> {
    config.validate()?;
    if frames.num_frames() == 0 {
        return Err(Error::invalid("cannot decode zero frames"));
    }
    let graph = SearchGraph::build(tree);
    if let Some(u) = graph.emission.iter().flatten().find(|&&u| u >= frames.num_units()) {
        return Err(Error::invalid(format!("tree uses unit {u}, frames have {} units", frames.num_units())));
    }
    let weights = config.weights;
    let capacity = config.nbest;
    let mut cache = LmCache::new(lm, tree.words());
    let mut live_tokens = Vec::with_capacity(frames.num_frames());

    let mut current: Buckets = BTreeMap::new();
    for &s in &graph.initial {
        let unit = graph.emission[s as usize].expect("initial states emit");
        let acoustic = frames.get(0, unit);
        let token = Token {
            words: Vec::new(),
            acoustic,
            lm: 0.0,
            score: search_score(acoustic, 0.0, 0, &weights),
        };
        insert_token(current.entry((s, 0)).or_default(), token, capacity);
    }
    prune(&mut current, config);
    live_tokens.push(count(&current));

    for t in 1..frames.num_frames() {
        let row = frames.row(t);
        let mut next: Buckets = BTreeMap::new();
        for (&(state, lm_state), tokens) in &current {
            for arc in &graph.arcs[state as usize] {
                let unit = graph.emission[arc.to as usize].expect("arcs lead to emitting states");
                let emit = row[unit];
                // Word transitions are shared by every token in the bucket.
                let (lm_gain, next_lm) = match arc.word {
                    Some(w) => cache.advance(lm_state, w),
                    None => (0.0, lm_state),
                };
                let bucket = next.entry((arc.to, next_lm)).or_default();
                for tok in tokens {
                    let mut words = tok.words.clone();
                    let mut lm_score = tok.lm;
                    if let Some(w) = arc.word {
                        words.push(w);
                        lm_score += lm_gain;
                    }
                    let acoustic = tok.acoustic + emit;
                    let score = search_score(acoustic, lm_score, words.len(), &weights);
                    insert_token(bucket, Token { words, acoustic, lm: lm_score, score }, capacity);
                }
            }
        }
        prune(&mut next, config);
        live_tokens.push(count(&next));
        current = next;
    }

    let mut finished: HashMap<Vec<u32>, Token> = HashMap::new();
    for (&(state, lm_state), tokens) in &current {
        for exit in &graph.exits[state as usize] {
            let (gain, end_lm) = match *exit {
                Some(w) => cache.advance(lm_state, w),
                None => (0.0, lm_state),
            };
            let final_lp = cache.final_log_prob(end_lm);
            for tok in tokens {
                let mut words = tok.words.clone();
                let mut lm_score = tok.lm;
                if let Some(w) = *exit {
                    words.push(w);
                    lm_score += gain;
                }
                lm_score += final_lp;
                let score = search_score(tok.acoustic, lm_score, words.len(), &weights);
                if score.is_nan() || score == f64::NEG_INFINITY {
                    continue;
                }
                let done = Token {
                    words: words.clone(),
                    acoustic: tok.acoustic,
                    lm: lm_score,
                    score,
                };
                match finished.get_mut(&words) {
                    Some(existing) if existing.score >= score => {}
                    Some(existing) => *existing = done,
                    None => {
                        finished.insert(words, done);
                    }
                }
            }
        }
    }
    let mut ranked: Vec<Token> = finished.into_values().collect();
    ranked.sort_by(token_order);
    ranked.truncate(config.nbest);

    let hypotheses: Vec<Hypothesis> = ranked
        .into_iter()
        .map(|tok| {
            let words = tok.words.iter().map(|&w| tree.words()[w as usize].clone()).collect();
            Hypothesis::new(words, tok.acoustic, tok.lm)
        })
        .collect();
    let warning = hypotheses
        .is_empty()
        .then(|| "no hypothesis survived decoding".to_string());
    Ok(DecodeOutput {
        nbest: NBestList::new(utterance_id, hypotheses),
        live_tokens,
        warning,
    })
}

fn count(buckets: &Buckets) -> usize {
    buckets.values().map(Vec::len).sum()
}

fn prune(buckets: &mut Buckets, config: &DecodeConfig) {
    buckets.retain(|_, tokens| {
        tokens.retain(|t| t.score > f64::NEG_INFINITY);
        !tokens.is_empty()
    });
    let best = buckets
        .values()
        .flat_map(|b| b.iter().map(|t| t.score))
        .fold(f64::NEG_INFINITY, f64::max);
    if config.score_margin.is_finite() {
        let threshold = best - config.score_margin;
        buckets.retain(|_, tokens| {
            tokens.retain(|t| t.score >= threshold);
            !tokens.is_empty()
        });
    }
    let total = count(buckets);
    if total <= config.beam_width {
        return;
    }
    let mut all: Vec<((u32, u32), Token)> = std::mem::take(buckets)
        .into_iter()
        .flat_map(|(k, ts)| ts.into_iter().map(move |t| (k, t)))
        .collect();
    all.sort_by(|a, b| token_order(&a.1, &b.1).then(a.0.cmp(&b.0)));
    all.truncate(config.beam_width);
    for (key, tok) in all {
        buckets.entry(key).or_default().push(tok);
    }
}
