//! Dependency-parse ingestion: CoNLL-U subset reading/writing, validated
//! trees with pruning, and vocabulary construction.

mod conllu;
mod tree;
mod vocab;

pub use conllu::{parse_conllu, serialize_tokens, Token};
pub use tree::{trees_isomorphic, ParseTree, DEFAULT_PRUNE_POS};
pub use vocab::{Vocabulary, OOV_INDEX};
