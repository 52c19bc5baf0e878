//! HMM state graphs for unit sequences.
//!
//! Every graph has one non-emitting start state and one non-emitting end
//! state. Emitting states carry a unit index. Two transition conventions are
//! supported: the uniform-1.0 convention where every arc has log-probability
//! 0, and normalised uniform transitions where the arcs leaving a state share
//! probability mass equally.

use std::collections::VecDeque;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::types::UnitInventory;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct State {
    pub emission: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transition {
    pub from: usize,
    pub to: usize,
    pub log_prob: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum TransitionMode {
    /// Every transition probability is forced to 1.0.
    #[default]
    Unit,
    /// Outgoing arcs of each state are uniformly normalised.
    Normalized,
}

/// Transition probabilities for left-to-right HMM chains.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum HmmTransitions {
    Mode(TransitionMode),
    /// Self-loop probability of every emitting state; the forward arc gets the
    /// remainder.
    Estimated { self_loop: f64 },
}

impl Default for HmmTransitions {
    fn default() -> Self {
        HmmTransitions::Mode(TransitionMode::Unit)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StateGraph {
    states: Vec<State>,
    transitions: Vec<Transition>,
    start: usize,
    finals: Vec<usize>,
    unit_transitions: bool,
}

impl StateGraph {
    pub fn states(&self) -> &[State] {
        &self.states
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn finals(&self) -> &[usize] {
        &self.finals
    }

    pub fn is_final(&self, state: usize) -> bool {
        self.finals.contains(&state)
    }

    pub fn num_emitting(&self) -> usize {
        self.states.iter().filter(|s| s.emission.is_some()).count()
    }

    /// Whether all transitions follow the uniform-1.0 convention.
    pub fn has_unit_transitions(&self) -> bool {
        self.unit_transitions
    }

    pub fn outgoing(&self, state: usize) -> impl Iterator<Item = &Transition> {
        self.transitions.iter().filter(move |t| t.from == state)
    }

    /// Checks the structural invariants: non-emitting start, valid log
    /// probabilities, normalisation (unless the uniform-1.0 convention is
    /// active), and that every state lies on some start-to-final path.
    pub fn validate(&self) -> Result<()> {
        let n = self.states.len();
        if self.start >= n || self.states[self.start].emission.is_some() {
            return Err(Error::Invariant("start state must exist and be non-emitting".into()));
        }
        if self.finals.is_empty() || self.finals.iter().any(|&f| f >= n) {
            return Err(Error::Invariant("invalid final state set".into()));
        }
        for t in &self.transitions {
            if t.from >= n || t.to >= n {
                return Err(Error::Invariant(format!("transition {}->{} out of range", t.from, t.to)));
            }
            let ok = if self.unit_transitions { t.log_prob == 0.0 } else { t.log_prob <= 0.0 };
            if !ok || t.log_prob.is_nan() {
                return Err(Error::Invariant(format!("bad log probability {} on {}->{}", t.log_prob, t.from, t.to)));
            }
        }
        if !self.unit_transitions {
            for s in 0..n {
                let out: Vec<f64> = self.outgoing(s).map(|t| t.log_prob.exp()).collect();
                if !out.is_empty() && (out.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
                    return Err(Error::Invariant(format!("outgoing mass of state {s} is not 1")));
                }
            }
        }
        let forward = self.reachable(&[self.start], false);
        let backward = self.reachable(&self.finals, true);
        if let Some(s) = (0..n).find(|&s| !forward[s] || !backward[s]) {
            return Err(Error::Invariant(format!("state {s} is not on any start-to-final path")));
        }
        Ok(())
    }

    fn reachable(&self, seeds: &[usize], reverse: bool) -> Vec<bool> {
        let mut seen = vec![false; self.states.len()];
        let mut queue: VecDeque<usize> = seeds.iter().copied().collect();
        for &s in seeds {
            seen[s] = true;
        }
        while let Some(s) = queue.pop_front() {
            for t in &self.transitions {
                let (a, b) = if reverse { (t.to, t.from) } else { (t.from, t.to) };
                if a == s && !seen[b] {
                    seen[b] = true;
                    queue.push_back(b);
                }
            }
        }
        seen
    }

    /// Debug dump, one line per transition: `from to logp emission-label`,
    /// where the label is that of the destination state.
    pub fn dump(&self, inventory: Option<&UnitInventory>) -> String {
        let mut out = String::new();
        for t in &self.transitions {
            let label = match (self.states[t.to].emission, inventory) {
                (None, _) => "<eps>".to_string(),
                (Some(u), Some(inv)) if u < inv.len() => inv.label(u).to_string(),
                (Some(u), _) => u.to_string(),
            };
            let _ = writeln!(out, "{} {} {} {}", t.from, t.to, t.log_prob, label);
        }
        out
    }
}

struct GraphBuilder {
    states: Vec<State>,
    arcs: Vec<(usize, usize, Option<f64>)>,
}

impl GraphBuilder {
    fn new() -> Self {
        Self {
            states: Vec::new(),
            arcs: Vec::new(),
        }
    }

    fn state(&mut self, emission: Option<usize>) -> usize {
        self.states.push(State { emission });
        self.states.len() - 1
    }

    fn arc(&mut self, from: usize, to: usize) {
        self.arcs.push((from, to, None));
    }

    fn weighted_arc(&mut self, from: usize, to: usize, log_prob: f64) {
        self.arcs.push((from, to, Some(log_prob)));
    }

    fn finish(self, start: usize, end: usize, mode: TransitionMode) -> StateGraph {
        let mut out_degree = vec![0usize; self.states.len()];
        for &(from, _, _) in &self.arcs {
            out_degree[from] += 1;
        }
        let mut unit_transitions = true;
        let transitions = self
            .arcs
            .into_iter()
            .map(|(from, to, weight)| {
                let log_prob = match (weight, mode) {
                    (Some(w), _) => w,
                    (None, TransitionMode::Unit) => 0.0,
                    (None, TransitionMode::Normalized) => -(out_degree[from] as f64).ln(),
                };
                if log_prob != 0.0 || mode == TransitionMode::Normalized {
                    unit_transitions = false;
                }
                Transition { from, to, log_prob }
            })
            .collect();
        StateGraph {
            states: self.states,
            transitions,
            start,
            finals: vec![end],
            unit_transitions,
        }
    }
}

/// CTC-equivalent topology: optional, self-looping blank states interleaved
/// with self-looping unit states, giving `2L+1` emitting states for `L`
/// units. A blank may be skipped except between two identical units.
pub fn build_ctc_sequence_graph(units: &[usize], inventory: &UnitInventory) -> Result<StateGraph> {
    build_ctc_sequence_graph_with(units, inventory, TransitionMode::Unit)
}

pub fn build_ctc_sequence_graph_with(
    units: &[usize],
    inventory: &UnitInventory,
    mode: TransitionMode,
) -> Result<StateGraph> {
    if inventory.is_empty() {
        return Err(Error::invalid("empty unit inventory"));
    }
    let blank = inventory
        .blank()
        .ok_or_else(|| Error::invalid("CTC topology needs an inventory with a blank"))?;
    for &u in units {
        if u == blank {
            return Err(Error::invalid("unit sequence contains the blank"));
        }
        if u >= inventory.len() {
            return Err(Error::invalid(format!("unit index {u} out of range")));
        }
    }

    let mut g = GraphBuilder::new();
    let start = g.state(None);
    // Emitting positions in trellis order: blank, u1, blank, u2, ..., blank.
    let positions: Vec<usize> = (0..2 * units.len() + 1)
        .map(|p| g.state(Some(if p % 2 == 0 { blank } else { units[p / 2] })))
        .collect();
    let end = g.state(None);

    g.arc(start, positions[0]);
    if !units.is_empty() {
        g.arc(start, positions[1]);
    }
    for (p, &state) in positions.iter().enumerate() {
        g.arc(state, state);
        if p + 1 < positions.len() {
            g.arc(state, positions[p + 1]);
        }
        // Skip over the next blank to the next unit, unless the labels repeat.
        if p % 2 == 1 && p + 2 < positions.len() && units[p / 2] != units[p / 2 + 1] {
            g.arc(state, positions[p + 2]);
        }
    }
    let last = positions.len() - 1;
    g.arc(positions[last], end);
    if last > 0 {
        g.arc(positions[last - 1], end);
    }
    Ok(g.finish(start, end, mode))
}

/// Left-to-right chain with `states_per_unit` self-looping emitting states per
/// unit.
pub fn build_hmm_sequence_graph(units: &[usize], states_per_unit: usize) -> Result<StateGraph> {
    build_hmm_sequence_graph_with(units, states_per_unit, HmmTransitions::default())
}

pub fn build_hmm_sequence_graph_with(
    units: &[usize],
    states_per_unit: usize,
    transitions: HmmTransitions,
) -> Result<StateGraph> {
    if units.is_empty() {
        return Err(Error::invalid("HMM sequence graph needs at least one unit"));
    }
    if states_per_unit == 0 {
        return Err(Error::invalid("states_per_unit must be at least 1"));
    }
    let (mode, weights) = match transitions {
        HmmTransitions::Mode(m) => (m, None),
        HmmTransitions::Estimated { self_loop } => {
            if !(self_loop > 0.0 && self_loop < 1.0) {
                return Err(Error::invalid(format!("self-loop probability {self_loop} not in (0,1)")));
            }
            (TransitionMode::Unit, Some((self_loop.ln(), (1.0 - self_loop).ln())))
        }
    };

    let mut g = GraphBuilder::new();
    let start = g.state(None);
    let chain: Vec<usize> = units
        .iter()
        .flat_map(|&u| std::iter::repeat_n(u, states_per_unit))
        .map(|u| g.state(Some(u)))
        .collect();
    let end = g.state(None);

    match weights {
        None => {
            g.arc(start, chain[0]);
            for (i, &s) in chain.iter().enumerate() {
                g.arc(s, s);
                g.arc(s, chain.get(i + 1).copied().unwrap_or(end));
            }
        }
        Some((stay, advance)) => {
            g.weighted_arc(start, chain[0], 0.0);
            for (i, &s) in chain.iter().enumerate() {
                g.weighted_arc(s, s, stay);
                g.weighted_arc(s, chain.get(i + 1).copied().unwrap_or(end), advance);
            }
        }
    }
    Ok(g.finish(start, end, mode))
}
