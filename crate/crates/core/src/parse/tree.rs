//! Validated dependency trees.
//!
//! Nodes are addressed by *slot* (position in token-id order); token ids
//! themselves stay untouched through pruning so a pruned tree still
//! serializes with its original ids.

use std::collections::{BTreeMap, HashSet};

use crate::error::{Error, Result};
use crate::parse::conllu::{serialize_tokens, Token};

/// POS tags removed by default: determiners, punctuation, symbols.
pub const DEFAULT_PRUNE_POS: [&str; 3] = ["DET", "PUNCT", "SYM"];

#[derive(Debug, Clone, PartialEq)]
pub struct ParseTree {
    nodes: Vec<Token>,
    root: usize,
    children: Vec<Vec<usize>>,
    parent: Vec<Option<usize>>,
}

impl ParseTree {
    /// Builds and validates a tree: exactly one root, no cycles, every
    /// node reachable from the root.
    pub fn build(mut tokens: Vec<Token>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::InvalidTree("no tokens".into()));
        }
        tokens.sort_by_key(|t| t.id);
        let mut slot_of: BTreeMap<usize, usize> = BTreeMap::new();
        for (slot, t) in tokens.iter().enumerate() {
            if slot_of.insert(t.id, slot).is_some() {
                return Err(Error::InvalidTree(format!("duplicate token id {}", t.id)));
            }
        }
        let mut root = None;
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); tokens.len()];
        let mut parent: Vec<Option<usize>> = vec![None; tokens.len()];
        for (slot, t) in tokens.iter().enumerate() {
            if t.head == 0 {
                if root.replace(slot).is_some() {
                    return Err(Error::InvalidTree("multiple roots".into()));
                }
                continue;
            }
            if t.head == t.id {
                return Err(Error::InvalidTree(format!("token {} is its own head", t.id)));
            }
            let head_slot = *slot_of
                .get(&t.head)
                .ok_or_else(|| Error::InvalidTree(format!("token {} has unknown head {}", t.id, t.head)))?;
            parent[slot] = Some(head_slot);
            children[head_slot].push(slot);
        }
        let root = root.ok_or_else(|| Error::InvalidTree("no root (head 0) token".into()))?;
        // Children lists are already in token-id order because slots are.
        let tree = ParseTree { nodes: tokens, root, children, parent };
        let reached = tree.post_order().len();
        if reached != tree.nodes.len() {
            return Err(Error::InvalidTree(format!(
                "{} of {} nodes unreachable from root (cycle or disconnected)",
                tree.nodes.len() - reached,
                tree.nodes.len()
            )));
        }
        Ok(tree)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn node(&self, slot: usize) -> &Token {
        &self.nodes[slot]
    }

    pub fn nodes(&self) -> &[Token] {
        &self.nodes
    }

    pub fn children(&self, slot: usize) -> &[usize] {
        &self.children[slot]
    }

    pub fn parent(&self, slot: usize) -> Option<usize> {
        self.parent[slot]
    }

    pub fn is_leaf(&self, slot: usize) -> bool {
        self.children[slot].is_empty()
    }

    /// Slots in post order (children before their parent).
    pub fn post_order(&self) -> Vec<usize> {
        let mut order = Vec::with_capacity(self.nodes.len());
        // Explicit stack; the second visit emits the node.
        let mut stack = vec![(self.root, false)];
        while let Some((slot, expanded)) = stack.pop() {
            if expanded {
                order.push(slot);
            } else {
                stack.push((slot, true));
                for &c in self.children[slot].iter().rev() {
                    stack.push((c, false));
                }
            }
        }
        order
    }

    /// Slots in pre order (parent before its children).
    pub fn pre_order(&self) -> Vec<usize> {
        let mut order = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![self.root];
        while let Some(slot) = stack.pop() {
            order.push(slot);
            for &c in self.children[slot].iter().rev() {
                stack.push(c);
            }
        }
        order
    }

    /// The node set of `slot`: itself plus all descendants, in ascending
    /// token-id order.
    pub fn subtree(&self, slot: usize) -> Vec<usize> {
        let mut set = Vec::new();
        let mut stack = vec![slot];
        while let Some(s) = stack.pop() {
            set.push(s);
            stack.extend_from_slice(&self.children[s]);
        }
        set.sort_unstable();
        set
    }

    /// Removes every non-root node whose POS tag is in `prune_pos`,
    /// reattaching orphaned children to their nearest surviving ancestor.
    /// If the root itself carries a prunable tag the tree is returned
    /// unchanged.
    pub fn prune(&self, prune_pos: &HashSet<String>) -> ParseTree {
        if prune_pos.contains(&self.nodes[self.root].upos) {
            return self.clone();
        }
        let pruned: Vec<bool> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(slot, t)| slot != self.root && prune_pos.contains(&t.upos))
            .collect();
        if pruned.iter().all(|p| !p) {
            return self.clone();
        }
        let mut tokens = Vec::new();
        for (slot, t) in self.nodes.iter().enumerate() {
            if pruned[slot] {
                continue;
            }
            let mut anc = self.parent[slot];
            while let Some(a) = anc {
                if !pruned[a] {
                    break;
                }
                anc = self.parent[a];
            }
            let mut t = t.clone();
            t.head = match anc {
                Some(a) => self.nodes[a].id,
                None => 0,
            };
            tokens.push(t);
        }
        ParseTree::build(tokens).expect("pruning preserves validity")
    }

    /// Emits the tree in the CoNLL-U subset, tokens in id order.
    pub fn serialize(&self) -> String {
        serialize_tokens(&self.nodes)
    }
}

/// Structural equality ignoring token ids: same form/POS/deprel at every
/// node and identically ordered children.
pub fn trees_isomorphic(a: &ParseTree, b: &ParseTree) -> bool {
    fn eq(a: &ParseTree, sa: usize, b: &ParseTree, sb: usize) -> bool {
        let (ta, tb) = (a.node(sa), b.node(sb));
        if ta.form != tb.form || ta.upos != tb.upos || ta.deprel != tb.deprel {
            return false;
        }
        let (ca, cb) = (a.children(sa), b.children(sb));
        ca.len() == cb.len() && ca.iter().zip(cb).all(|(&x, &y)| eq(a, x, b, y))
    }
    a.len() == b.len() && eq(a, a.root(), b, b.root())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parse::conllu::parse_conllu;

    fn prune_set() -> HashSet<String> {
        DEFAULT_PRUNE_POS.iter().map(|s| s.to_string()).collect()
    }

    fn chain3() -> ParseTree {
        ParseTree::build(vec![
            Token::new(1, "a", "NOUN", 2, "dep"),
            Token::new(2, "b", "NOUN", 3, "dep"),
            Token::new(3, "c", "NOUN", 0, "root"),
        ])
        .unwrap()
    }

    #[test]
    fn chain_has_forced_structure() {
        let t = chain3();
        assert_eq!(t.len(), 3);
        assert_eq!(t.node(t.root()).form, "c");
        assert_eq!(t.subtree(t.root()).len(), 3);
        assert_eq!(t.post_order().iter().map(|&s| t.node(s).form.as_str()).collect::<Vec<_>>(), ["a", "b", "c"]);
    }

    #[test]
    fn single_token_tree() {
        let t = ParseTree::build(vec![Token::new(1, "dog", "NOUN", 0, "root")]).unwrap();
        assert_eq!(t.len(), 1);
        assert!(t.is_leaf(t.root()));
    }

    #[test]
    fn cycle_rejected() {
        let r = ParseTree::build(vec![
            Token::new(1, "a", "NOUN", 2, "dep"),
            Token::new(2, "b", "NOUN", 1, "dep"),
        ]);
        assert!(matches!(r, Err(Error::InvalidTree(_))));
    }

    #[test]
    fn self_head_rejected() {
        let r = ParseTree::build(vec![
            Token::new(1, "a", "NOUN", 0, "root"),
            Token::new(2, "b", "NOUN", 2, "dep"),
        ]);
        assert!(matches!(r, Err(Error::InvalidTree(_))));
    }

    #[test]
    fn zero_and_multiple_roots_rejected() {
        assert!(ParseTree::build(vec![Token::new(1, "a", "NOUN", 2, "dep"), Token::new(2, "b", "NOUN", 1, "dep")]).is_err());
        assert!(ParseTree::build(vec![Token::new(1, "a", "NOUN", 0, "root"), Token::new(2, "b", "NOUN", 0, "root")]).is_err());
    }

    #[test]
    fn unreachable_island_rejected() {
        let r = ParseTree::build(vec![
            Token::new(1, "a", "NOUN", 0, "root"),
            Token::new(2, "b", "NOUN", 3, "dep"),
            Token::new(3, "c", "NOUN", 2, "dep"),
        ]);
        assert!(matches!(r, Err(Error::InvalidTree(_))));
    }

    #[test]
    fn prune_leaf_determiner() {
        let t = ParseTree::build(vec![
            Token::new(1, "the", "DET", 2, "det"),
            Token::new(2, "dog", "NOUN", 0, "root"),
        ])
        .unwrap();
        let p = t.prune(&prune_set());
        assert_eq!(p.len(), 1);
        assert_eq!(p.node(p.root()).form, "dog");
    }

    #[test]
    fn prune_without_prunable_pos_is_identity() {
        let t = chain3();
        assert_eq!(t.prune(&prune_set()), t);
    }

    #[test]
    fn prune_reattaches_children_of_internal_node() {
        // dog ← the(DET) ← {big, red}: pruning `the` moves both under dog.
        let t = ParseTree::build(vec![
            Token::new(1, "big", "ADJ", 2, "amod"),
            Token::new(2, "the", "DET", 4, "det"),
            Token::new(3, "red", "ADJ", 2, "amod"),
            Token::new(4, "dog", "NOUN", 0, "root"),
        ])
        .unwrap();
        let p = t.prune(&prune_set());
        assert_eq!(p.len(), t.len() - 1);
        // Re-validated by construction; surviving forms and order intact.
        let forms: Vec<&str> = p.nodes().iter().map(|t| t.form.as_str()).collect();
        assert_eq!(forms, ["big", "red", "dog"]);
        assert_eq!(p.children(p.root()).len(), 2);
    }

    #[test]
    fn prunable_root_skips_pruning() {
        let t = ParseTree::build(vec![
            Token::new(1, "!", "PUNCT", 0, "root"),
            Token::new(2, "dog", "NOUN", 1, "dep"),
        ])
        .unwrap();
        assert_eq!(t.prune(&prune_set()), t);
    }

    #[test]
    fn prune_is_idempotent() {
        let t = ParseTree::build(vec![
            Token::new(1, "the", "DET", 2, "det"),
            Token::new(2, "dog", "NOUN", 4, "nsubj"),
            Token::new(3, ".", "PUNCT", 4, "punct"),
            Token::new(4, "runs", "VERB", 0, "root"),
        ])
        .unwrap();
        let once = t.prune(&prune_set());
        let twice = once.prune(&prune_set());
        assert_eq!(once, twice);
    }

    #[test]
    fn subtree_sizes_decompose() {
        let t = ParseTree::build(vec![
            Token::new(1, "a", "ADJ", 3, "amod"),
            Token::new(2, "b", "ADJ", 3, "amod"),
            Token::new(3, "c", "NOUN", 0, "root"),
            Token::new(4, "d", "ADP", 3, "prep"),
            Token::new(5, "e", "NOUN", 4, "pobj"),
        ])
        .unwrap();
        for slot in 0..t.len() {
            let expect: usize = 1 + t.children(slot).iter().map(|&c| t.subtree(c).len()).sum::<usize>();
            assert_eq!(t.subtree(slot).len(), expect);
        }
    }

    #[test]
    fn serialize_reparse_is_isomorphic() {
        let t = chain3();
        let text = t.serialize();
        let back = ParseTree::build(parse_conllu(&text).unwrap().remove(0)).unwrap();
        assert!(trees_isomorphic(&t, &back));
    }

    #[test]
    fn pruned_tree_keeps_original_ids_in_serialization() {
        let t = ParseTree::build(vec![
            Token::new(1, "the", "DET", 2, "det"),
            Token::new(2, "dog", "NOUN", 0, "root"),
            Token::new(3, "barks", "VERB", 2, "acl"),
        ])
        .unwrap();
        let p = t.prune(&prune_set());
        let text = p.serialize();
        assert!(text.contains("2\tdog"));
        assert!(text.contains("3\tbarks"));
        assert!(!text.contains("the"));
    }
}
