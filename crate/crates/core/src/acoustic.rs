//! Pseudo log-likelihoods from frame posteriors, and dynamic programming over
//! state graphs.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::math::{log_add, LOG_ZERO};
use crate::topology::StateGraph;
use crate::types::{PosteriorMatrix, ScoreWeights, UnitInventory, UnitPrior, DEFAULT_PRIOR_FLOOR};

/// Posteriors are floored to this before taking logs.
pub const POSTERIOR_FLOOR: f64 = 1e-10;

/// T×U matrix of log-domain acoustic scores `ln p̂(o_t | u)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredFrames {
    num_units: usize,
    data: Vec<f64>,
}

impl ScoredFrames {
    /// Wraps precomputed log scores, one row per frame.
    pub fn from_log_scores(rows: Vec<Vec<f64>>) -> Result<Self> {
        let num_units = rows.first().map_or(0, Vec::len);
        if num_units == 0 {
            return Err(Error::invalid("scored frames need at least one unit"));
        }
        let mut data = Vec::with_capacity(rows.len() * num_units);
        for row in rows {
            if row.len() != num_units {
                return Err(Error::invalid("ragged score matrix"));
            }
            if row.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
                return Err(Error::invalid("scores must be finite or -inf"));
            }
            data.extend(row);
        }
        Ok(Self { num_units, data })
    }

    pub fn num_frames(&self) -> usize {
        self.data.len() / self.num_units
    }

    pub fn num_units(&self) -> usize {
        self.num_units
    }

    pub fn get(&self, t: usize, unit: usize) -> f64 {
        self.data[t * self.num_units + unit]
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.num_units..(t + 1) * self.num_units]
    }
}

/// Column means of all frames, floored at [`DEFAULT_PRIOR_FLOOR`].
pub fn estimate_priors(posteriors: &[PosteriorMatrix]) -> Result<UnitPrior> {
    estimate_priors_with_floor(posteriors, DEFAULT_PRIOR_FLOOR)
}

pub fn estimate_priors_with_floor(posteriors: &[PosteriorMatrix], floor: f64) -> Result<UnitPrior> {
    let first = posteriors
        .first()
        .ok_or_else(|| Error::invalid("cannot estimate priors from an empty collection"))?;
    let num_units = first.num_units();
    let mut sums = vec![0.0; num_units];
    let mut frames = 0usize;
    for m in posteriors {
        if m.num_units() != num_units {
            return Err(Error::invalid(format!(
                "utterance {:?} has {} units, expected {num_units}",
                m.utterance_id,
                m.num_units()
            )));
        }
        for row in m.rows() {
            for (s, p) in sums.iter_mut().zip(row) {
                *s += p;
            }
        }
        frames += m.num_frames();
    }
    if frames == 0 {
        return Err(Error::invalid("no frames to estimate priors from"));
    }
    let priors = sums.into_iter().map(|s| s / frames as f64).collect();
    UnitPrior::new(priors, floor)
}

/// `ln P(u|o_t) − κ·ln P(u) − γ·[u is blank]`. The observation prior
/// `ln p(o_t)` is constant per frame and omitted. `priors` may be `None` only
/// when `prior_scale` is zero.
pub fn score_frames(
    posteriors: &PosteriorMatrix,
    priors: Option<&UnitPrior>,
    inventory: &UnitInventory,
    weights: &ScoreWeights,
    prior_scale: f64,
) -> Result<ScoredFrames> {
    if !prior_scale.is_finite() || prior_scale < 0.0 {
        return Err(Error::invalid(format!("prior scale must be non-negative, got {prior_scale}")));
    }
    let num_units = posteriors.num_units();
    if num_units != inventory.len() {
        return Err(Error::invalid(format!(
            "posteriors have {num_units} units, inventory has {}",
            inventory.len()
        )));
    }
    let log_priors: Vec<f64> = match priors {
        Some(p) if p.len() == num_units => p.priors().iter().map(|v| v.ln()).collect(),
        Some(p) => {
            return Err(Error::invalid(format!("priors have {} units, posteriors have {num_units}", p.len())))
        }
        None if prior_scale == 0.0 => vec![0.0; num_units],
        None => return Err(Error::invalid("prior subtraction requested without priors")),
    };
    let blank = inventory.blank();
    let mut data = Vec::with_capacity(posteriors.num_frames() * num_units);
    for row in posteriors.rows() {
        for (u, &p) in row.iter().enumerate() {
            let mut score = p.max(POSTERIOR_FLOOR).ln();
            if prior_scale != 0.0 {
                score -= prior_scale * log_priors[u];
            }
            if blank == Some(u) {
                score -= weights.blank_penalty;
            }
            data.push(score);
        }
    }
    Ok(ScoredFrames { num_units, data })
}

/// `ln P(u|o_t)` with no prior subtraction and no blank penalty.
pub fn log_posteriors(posteriors: &PosteriorMatrix) -> ScoredFrames {
    let data = posteriors
        .rows()
        .flat_map(|row| row.iter().map(|p| p.max(POSTERIOR_FLOOR).ln()))
        .collect();
    ScoredFrames {
        num_units: posteriors.num_units(),
        data,
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Semiring {
    LogSum,
    Max,
}

impl Semiring {
    fn plus(self, a: f64, b: f64) -> f64 {
        match self {
            Semiring::LogSum => log_add(a, b),
            Semiring::Max => a.max(b),
        }
    }
}

/// A state graph with the non-emitting states folded into direct arcs between
/// emitting states.
struct Trellis {
    /// Graph state id of each emitting state, in id order.
    emitting: Vec<usize>,
    units: Vec<usize>,
    entry: Vec<f64>,
    /// Incoming arcs per destination: `(source, log weight)`.
    incoming: Vec<Vec<(usize, f64)>>,
    exit: Vec<f64>,
}

impl Trellis {
    fn compile(graph: &StateGraph, num_units: usize, semiring: Semiring) -> Result<Self> {
        let n = graph.states().len();
        let mut slot = vec![usize::MAX; n];
        let mut emitting = Vec::new();
        let mut units = Vec::new();
        for (id, s) in graph.states().iter().enumerate() {
            if let Some(u) = s.emission {
                if u >= num_units {
                    return Err(Error::invalid(format!(
                        "state {id} emits unit {u}, but frames have {num_units} units"
                    )));
                }
                slot[id] = emitting.len();
                emitting.push(id);
                units.push(u);
            }
        }
        let mut out: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for t in graph.transitions() {
            out[t.from].push((t.to, t.log_prob));
        }
        let finals: Vec<bool> = (0..n).map(|s| graph.is_final(s)).collect();

        // Weight of reaching each emitting state, or a final state, from `src`
        // through non-emitting states only.
        let closure = |src: usize| -> Result<(Vec<(usize, f64)>, f64)> {
            let mut targets: Vec<(usize, f64)> = Vec::new();
            let mut final_weight = LOG_ZERO;
            let mut stack: Vec<(usize, f64, usize)> = out[src].iter().map(|&(to, w)| (to, w, 0)).collect();
            while let Some((state, w, depth)) = stack.pop() {
                if depth > n {
                    return Err(Error::invalid("cycle through non-emitting states"));
                }
                if graph.states()[state].emission.is_some() {
                    match targets.iter_mut().find(|(s, _)| *s == slot[state]) {
                        Some(entry) => entry.1 = semiring.plus(entry.1, w),
                        None => targets.push((slot[state], w)),
                    }
                    continue;
                }
                if finals[state] {
                    final_weight = semiring.plus(final_weight, w);
                }
                for &(to, tw) in &out[state] {
                    stack.push((to, w + tw, depth + 1));
                }
            }
            Ok((targets, final_weight))
        };

        let m = emitting.len();
        let mut entry = vec![LOG_ZERO; m];
        for (s, w) in closure(graph.start())?.0 {
            entry[s] = w;
        }
        let mut incoming = vec![Vec::new(); m];
        let mut exit = vec![LOG_ZERO; m];
        for (src_slot, &src) in emitting.iter().enumerate() {
            let (targets, final_weight) = closure(src)?;
            for (dst, w) in targets {
                incoming[dst].push((src_slot, w));
            }
            exit[src_slot] = if finals[src] { semiring.plus(final_weight, 0.0) } else { final_weight };
        }
        for arcs in &mut incoming {
            arcs.sort_by_key(|a| a.0);
        }
        Ok(Self {
            emitting,
            units,
            entry,
            incoming,
            exit,
        })
    }
}

fn check_frames(frames: &ScoredFrames) -> Result<()> {
    if frames.num_frames() == 0 {
        return Err(Error::invalid("need at least one frame"));
    }
    Ok(())
}

/// `ln Σ_paths Π transition · emission` over all length-T paths from the
/// start to a final state. Returns `LOG_ZERO` if no path exists.
pub fn forward_loglik(graph: &StateGraph, frames: &ScoredFrames) -> Result<f64> {
    check_frames(frames)?;
    let trellis = Trellis::compile(graph, frames.num_units(), Semiring::LogSum)?;
    let mut alpha: Vec<f64> = trellis
        .entry
        .iter()
        .zip(&trellis.units)
        .map(|(w, &u)| w + frames.get(0, u))
        .collect();
    let mut next = vec![LOG_ZERO; alpha.len()];
    for t in 1..frames.num_frames() {
        for (j, arcs) in trellis.incoming.iter().enumerate() {
            let mut acc = LOG_ZERO;
            for &(i, w) in arcs {
                acc = log_add(acc, alpha[i] + w);
            }
            next[j] = acc + frames.get(t, trellis.units[j]);
        }
        std::mem::swap(&mut alpha, &mut next);
    }
    let total = alpha
        .iter()
        .zip(&trellis.exit)
        .fold(LOG_ZERO, |acc, (a, e)| log_add(acc, a + e));
    Ok(if total.is_nan() { LOG_ZERO } else { total })
}

/// Score of the best single path, or `LOG_ZERO` if none exists.
pub fn viterbi_loglik(graph: &StateGraph, frames: &ScoredFrames) -> Result<f64> {
    check_frames(frames)?;
    let trellis = Trellis::compile(graph, frames.num_units(), Semiring::Max)?;
    let mut delta: Vec<f64> = trellis
        .entry
        .iter()
        .zip(&trellis.units)
        .map(|(w, &u)| w + frames.get(0, u))
        .collect();
    let mut next = vec![LOG_ZERO; delta.len()];
    for t in 1..frames.num_frames() {
        for (j, arcs) in trellis.incoming.iter().enumerate() {
            let best = arcs.iter().fold(LOG_ZERO, |acc, &(i, w)| acc.max(delta[i] + w));
            next[j] = best + frames.get(t, trellis.units[j]);
        }
        std::mem::swap(&mut delta, &mut next);
    }
    let best = delta
        .iter()
        .zip(&trellis.exit)
        .fold(LOG_ZERO, |acc, (d, e)| acc.max(d + e));
    Ok(if best.is_nan() { LOG_ZERO } else { best })
}

/// Best single path through a graph.
#[derive(Clone, Debug, PartialEq)]
pub struct Alignment {
    /// Emitting graph state occupied at each frame.
    pub states: Vec<usize>,
    pub log_prob: f64,
}

/// Highest-scoring path. Among equal-scoring paths the one that emits a
/// non-blank label earliest wins; remaining ties go to the lower state id at
/// the first frame where the paths differ.
pub fn viterbi_align(graph: &StateGraph, frames: &ScoredFrames, blank: Option<usize>) -> Result<Alignment> {
    check_frames(frames)?;
    let trellis = Trellis::compile(graph, frames.num_units(), Semiring::Max)?;
    let m = trellis.emitting.len();
    let big_t = frames.num_frames();

    // Preference among states at one frame: non-blank before blank, then id.
    let state_key = |j: usize| (blank == Some(trellis.units[j]), trellis.emitting[j]);

    let mut delta: Vec<f64> = (0..m).map(|j| trellis.entry[j] + frames.get(0, trellis.units[j])).collect();
    // `rank[j]` orders the best prefixes ending in each state under the
    // preference above, so comparing ranks compares whole prefixes.
    let mut rank = prefix_ranks(&delta, &vec![0; m], &state_key);
    let mut back = vec![vec![usize::MAX; m]; big_t];

    for (t, back_t) in back.iter_mut().enumerate().skip(1) {
        let mut next = vec![LOG_ZERO; m];
        let mut pred_rank = vec![usize::MAX; m];
        for (j, arcs) in trellis.incoming.iter().enumerate() {
            let mut best: Option<(f64, usize)> = None;
            for &(i, w) in arcs {
                let score = delta[i] + w;
                if score == LOG_ZERO {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((bs, bi)) => score > bs || (score == bs && rank[i] < rank[bi]),
                };
                if better {
                    best = Some((score, i));
                }
            }
            if let Some((score, i)) = best {
                next[j] = score + frames.get(t, trellis.units[j]);
                back_t[j] = i;
                pred_rank[j] = rank[i];
            }
        }
        rank = prefix_ranks(&next, &pred_rank, &state_key);
        delta = next;
    }

    let mut best: Option<(f64, usize)> = None;
    for j in 0..m {
        let score = delta[j] + trellis.exit[j];
        if score == LOG_ZERO || score.is_nan() {
            continue;
        }
        let better = match best {
            None => true,
            Some((bs, bj)) => score > bs || (score == bs && rank[j] < rank[bj]),
        };
        if better {
            best = Some((score, j));
        }
    }
    let (log_prob, mut j) = best.ok_or_else(|| Error::invalid("no feasible alignment"))?;
    let mut states = vec![0; big_t];
    for t in (0..big_t).rev() {
        states[t] = trellis.emitting[j];
        if t > 0 {
            j = back[t][j];
        }
    }
    Ok(Alignment { states, log_prob })
}

fn prefix_ranks<K: Ord>(scores: &[f64], pred_rank: &[usize], key: &impl Fn(usize) -> K) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        let live_a = scores[a] != LOG_ZERO;
        let live_b = scores[b] != LOG_ZERO;
        live_b
            .cmp(&live_a)
            .then(pred_rank[a].cmp(&pred_rank[b]))
            .then_with(|| key(a).cmp(&key(b)))
    });
    let mut rank = vec![0; scores.len()];
    for (r, j) in order.into_iter().enumerate() {
        rank[j] = r;
    }
    rank
}

/// Log probability, under CTC, that the T-frame output collapses to a label
/// sequence starting with `prefix`.
///
/// Uses the blank-ending / label-ending two-stream recursion over the prefix
/// with its last label removed, then sums the mass of first emitting the last
/// label at each frame.
pub fn ctc_prefix_score(posteriors: &PosteriorMatrix, prefix: &[usize], inventory: &UnitInventory) -> Result<f64> {
    let blank = inventory
        .blank()
        .ok_or_else(|| Error::invalid("CTC prefix score needs an inventory with a blank"))?;
    if posteriors.num_units() != inventory.len() {
        return Err(Error::invalid("posterior and inventory sizes differ"));
    }
    if let Some(&u) = prefix.iter().find(|&&u| u == blank || u >= inventory.len()) {
        return Err(Error::invalid(format!("invalid prefix unit {u}")));
    }
    let Some((&last, head)) = prefix.split_last() else {
        return Ok(0.0);
    };
    let big_t = posteriors.num_frames();
    if prefix.len() > big_t {
        return Ok(LOG_ZERO);
    }
    let y = |t: usize, u: usize| posteriors.get(t, u).max(POSTERIOR_FLOOR).ln();

    // gamma_b[t] / gamma_n[t]: mass of the first t frames collapsing to the
    // current prefix, ending in blank / in its last label. Index 0 is before
    // any frame.
    let mut gamma_b = vec![0.0; big_t + 1];
    let mut gamma_n = vec![LOG_ZERO; big_t + 1];
    for t in 1..=big_t {
        gamma_b[t] = gamma_b[t - 1] + y(t - 1, blank);
    }
    let mut prev_label: Option<usize> = None;
    for &c in head {
        let (nb, nn) = extend_prefix(&gamma_b, &gamma_n, prev_label, c, &y, blank);
        gamma_b = nb;
        gamma_n = nn;
        prev_label = Some(c);
    }
    let mut total = LOG_ZERO;
    for t in 1..=big_t {
        let mut start = gamma_b[t - 1];
        if prev_label != Some(last) {
            start = log_add(start, gamma_n[t - 1]);
        }
        total = log_add(total, start + y(t - 1, last));
    }
    Ok(total)
}

fn extend_prefix(
    gamma_b: &[f64],
    gamma_n: &[f64],
    prev_label: Option<usize>,
    c: usize,
    y: &impl Fn(usize, usize) -> f64,
    blank: usize,
) -> (Vec<f64>, Vec<f64>) {
    let len = gamma_b.len();
    let mut nb = vec![LOG_ZERO; len];
    let mut nn = vec![LOG_ZERO; len];
    for t in 1..len {
        let mut enter = gamma_b[t - 1];
        if prev_label != Some(c) {
            enter = log_add(enter, gamma_n[t - 1]);
        }
        nn[t] = log_add(nn[t - 1], enter) + y(t - 1, c);
        nb[t] = log_add(nb[t - 1], nn[t - 1]) + y(t - 1, blank);
    }
    (nb, nn)
}

/// Total order on Viterbi scores usable in sorts.
pub fn cmp_scores(a: f64, b: f64) -> Ordering {
    a.partial_cmp(&b).unwrap_or(Ordering::Equal)
}
