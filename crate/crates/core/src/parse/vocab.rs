//! Word / POS-tag / dependency-label vocabularies.
//!
//! Index 0 of every map is reserved for out-of-vocabulary strings. Items
//! are ordered by descending corpus count with lexicographic tie-breaks,
//! so the same corpus always yields the same vocabulary.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::parse::tree::ParseTree;
use crate::parse::Token;

pub const OOV_INDEX: usize = 0;
const OOV_SYMBOL: &str = "<unk>";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    words: Vec<String>,
    pos_tags: Vec<String>,
    dep_labels: Vec<String>,
    #[serde(skip)]
    word_index: HashMap<String, usize>,
    #[serde(skip)]
    pos_index: HashMap<String, usize>,
    #[serde(skip)]
    dep_index: HashMap<String, usize>,
}

fn ranked(counts: HashMap<String, usize>, min_count: usize) -> Vec<String> {
    let mut items: Vec<(String, usize)> =
        counts.into_iter().filter(|(_, c)| *c >= min_count).collect();
    items.sort_by(|(wa, ca), (wb, cb)| cb.cmp(ca).then_with(|| wa.cmp(wb)));
    let mut list = vec![OOV_SYMBOL.to_string()];
    list.extend(items.into_iter().map(|(w, _)| w));
    list
}

fn index_of(list: &[String]) -> HashMap<String, usize> {
    list.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect()
}

impl Vocabulary {
    /// Counts forms, POS tags, and dependency labels over the corpus and
    /// keeps those with count ≥ `min_count`.
    pub fn build(corpus: &[ParseTree], min_count: usize) -> Self {
        let mut words = HashMap::new();
        let mut pos = HashMap::new();
        let mut deps = HashMap::new();
        for tree in corpus {
            for t in tree.nodes() {
                *words.entry(t.form.clone()).or_insert(0) += 1;
                *pos.entry(t.upos.clone()).or_insert(0) += 1;
                *deps.entry(t.deprel.clone()).or_insert(0) += 1;
            }
        }
        Vocabulary::from_lists(ranked(words, min_count), ranked(pos, min_count), ranked(deps, min_count))
    }

    /// Rebuilds a vocabulary from its serialized index lists.
    pub fn from_lists(words: Vec<String>, pos_tags: Vec<String>, dep_labels: Vec<String>) -> Self {
        let word_index = index_of(&words);
        let pos_index = index_of(&pos_tags);
        let dep_index = index_of(&dep_labels);
        Vocabulary { words, pos_tags, dep_labels, word_index, pos_index, dep_index }
    }

    /// Restores the lookup maps after serde deserialization.
    pub fn rebuild_maps(&mut self) {
        self.word_index = index_of(&self.words);
        self.pos_index = index_of(&self.pos_tags);
        self.dep_index = index_of(&self.dep_labels);
    }

    pub fn word_count(&self) -> usize {
        self.words.len()
    }

    pub fn pos_count(&self) -> usize {
        self.pos_tags.len()
    }

    pub fn dep_count(&self) -> usize {
        self.dep_labels.len()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn pos_tags(&self) -> &[String] {
        &self.pos_tags
    }

    pub fn dep_labels(&self) -> &[String] {
        &self.dep_labels
    }

    pub fn word_id(&self, form: &str) -> usize {
        *self.word_index.get(form).unwrap_or(&OOV_INDEX)
    }

    pub fn pos_id(&self, upos: &str) -> usize {
        *self.pos_index.get(upos).unwrap_or(&OOV_INDEX)
    }

    pub fn dep_id(&self, deprel: &str) -> usize {
        *self.dep_index.get(deprel).unwrap_or(&OOV_INDEX)
    }

    /// (word, POS, dep) indices for one token; unknown strings map to 0.
    pub fn encode(&self, token: &Token) -> (usize, usize, usize) {
        (self.word_id(&token.form), self.pos_id(&token.upos), self.dep_id(&token.deprel))
    }
}
