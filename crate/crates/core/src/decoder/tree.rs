use crate::error::{Error, Result};
use crate::types::{Lexicon, UnitInventory};

use super::TopologyKind;

/// A word ending at a tree node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WordEnd {
    /// Index into [`PrefixTree::words`].
    pub word: u32,
    pub pronunciation: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TreeNode {
    /// `None` only for the root.
    pub unit: Option<usize>,
    pub parent: Option<usize>,
    /// Sorted by unit.
    pub children: Vec<usize>,
    pub word_ends: Vec<WordEnd>,
}

/// Trie over pronunciations. Word ids follow the lexicon's lexicographic word
/// order, so comparing id sequences compares word sequences.
#[derive(Clone, Debug)]
pub struct PrefixTree {
    nodes: Vec<TreeNode>,
    words: Vec<String>,
    kind: TopologyKind,
    blank: Option<usize>,
}

impl PrefixTree {
    pub const ROOT: usize = 0;

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &TreeNode {
        &self.nodes[id]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn kind(&self) -> TopologyKind {
        self.kind
    }

    pub fn blank(&self) -> Option<usize> {
        self.blank
    }

    fn child_with_unit(&self, node: usize, unit: usize) -> Option<usize> {
        self.nodes[node]
            .children
            .iter()
            .copied()
            .find(|&c| self.nodes[c].unit == Some(unit))
    }

    /// Node reached by following `units` from the root.
    pub fn find(&self, units: &[usize]) -> Option<usize> {
        units
            .iter()
            .try_fold(Self::ROOT, |node, &u| self.child_with_unit(node, u))
    }
}

pub fn build_prefix_tree(lexicon: &Lexicon, inventory: &UnitInventory, kind: TopologyKind) -> Result<PrefixTree> {
    if lexicon.is_empty() {
        return Err(Error::invalid("cannot build a prefix tree from an empty lexicon"));
    }
    match kind {
        TopologyKind::Ctc if inventory.blank().is_none() => {
            return Err(Error::invalid("CTC topology needs an inventory with a blank"));
        }
        TopologyKind::Hmm { states_per_unit: 0 } => {
            return Err(Error::invalid("states_per_unit must be at least 1"));
        }
        _ => {}
    }
    let mut tree = PrefixTree {
        nodes: vec![TreeNode {
            unit: None,
            parent: None,
            children: Vec::new(),
            word_ends: Vec::new(),
        }],
        words: Vec::with_capacity(lexicon.len()),
        kind,
        blank: inventory.blank(),
    };
    for (word_id, (word, prons)) in lexicon.iter().enumerate() {
        tree.words.push(word.to_string());
        for (p, pron) in prons.iter().enumerate() {
            let mut node = PrefixTree::ROOT;
            for &u in pron {
                if u >= inventory.len() || inventory.is_blank(u) {
                    return Err(Error::invalid(format!("invalid unit {u} in pronunciation of {word:?}")));
                }
                node = match tree.child_with_unit(node, u) {
                    Some(c) => c,
                    None => {
                        tree.nodes.push(TreeNode {
                            unit: Some(u),
                            parent: Some(node),
                            children: Vec::new(),
                            word_ends: Vec::new(),
                        });
                        let c = tree.nodes.len() - 1;
                        tree.nodes[node].children.push(c);
                        c
                    }
                };
            }
            tree.nodes[node].word_ends.push(WordEnd {
                word: word_id as u32,
                pronunciation: p,
            });
        }
    }
    let units: Vec<Option<usize>> = tree.nodes.iter().map(|n| n.unit).collect();
    for node in &mut tree.nodes {
        node.children.sort_by_key(|&c| units[c]);
    }
    Ok(tree)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::UnitKind;

    fn inventory() -> UnitInventory {
        let labels = ["<b>", "a", "b", "c"].iter().map(|s| s.to_string()).collect();
        UnitInventory::new(labels, Some(0), UnitKind::Phonetic).unwrap()
    }

    #[test]
    fn shared_prefix() {
        let inv = inventory();
        let mut lex = Lexicon::new();
        lex.add("A", vec![1], &inv).unwrap();
        lex.add("AB", vec![1, 2], &inv).unwrap();
        let tree = build_prefix_tree(&lex, &inv, TopologyKind::Ctc).unwrap();
        assert_eq!(tree.nodes().len(), 3);
        assert_eq!(tree.node(PrefixTree::ROOT).children.len(), 1);
        let a = tree.find(&[1]).unwrap();
        let ab = tree.find(&[1, 2]).unwrap();
        assert_eq!(tree.node(a).word_ends, vec![WordEnd { word: 0, pronunciation: 0 }]);
        assert_eq!(tree.node(ab).word_ends, vec![WordEnd { word: 1, pronunciation: 0 }]);
        assert_eq!(tree.node(ab).parent, Some(a));
    }

    #[test]
    fn single_unit_word() {
        let inv = inventory();
        let mut lex = Lexicon::new();
        lex.add("C", vec![3], &inv).unwrap();
        let tree = build_prefix_tree(&lex, &inv, TopologyKind::Hmm { states_per_unit: 2 }).unwrap();
        assert_eq!(tree.nodes().len(), 2);
        assert!(tree.node(1).children.is_empty());
    }

    #[test]
    fn homophone_pronunciations() {
        let inv = inventory();
        let mut lex = Lexicon::new();
        lex.add("X", vec![1, 2], &inv).unwrap();
        lex.add("X", vec![3], &inv).unwrap();
        let tree = build_prefix_tree(&lex, &inv, TopologyKind::Ctc).unwrap();
        let ends: Vec<_> = tree.nodes().iter().flat_map(|n| n.word_ends.clone()).collect();
        assert_eq!(ends.len(), 2);
        assert!(ends.iter().all(|e| e.word == 0));
        let mut prons: Vec<_> = ends.iter().map(|e| e.pronunciation).collect();
        prons.sort();
        assert_eq!(prons, vec![0, 1]);
    }

    #[test]
    fn empty_lexicon_is_rejected() {
        assert!(build_prefix_tree(&Lexicon::new(), &inventory(), TopologyKind::Ctc).is_err());
    }
}
