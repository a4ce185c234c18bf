//! Shared helpers for integration tests: an independent scalar
//! re-implementation of the grounding pipeline, a random-tree generator,
//! and token-level editing utilities.

// Each test binary uses its own subset of these helpers.
#![allow(dead_code)]

use rand::Rng;
use treeground::assembler::ModuleKind;
use treeground::model::Model;
use treeground::parse::{ParseTree, Token};

// ── independent scalar grounding oracle ─────────────────────────────
//
// Straight-line f64 loops over raw parameter slices; shares no code
// with the graph implementation it cross-checks.

pub struct Head2 {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
    pub hidden: usize,
}

pub struct Score2 {
    pub w_in: Vec<f64>,
    pub b_in: Vec<f64>,
    pub w_out: Vec<f64>,
    pub b_out: f64,
    pub out_dim: usize,
}

pub struct OracleParams {
    pub attn_s: Head2,
    pub attn_p: Head2,
    pub single: Score2,
    pub pair: Score2,
}

fn tensor_of(model: &Model<f64>, name: &str) -> Vec<f64> {
    model.store.get(name).unwrap_or_else(|| panic!("parameter {name}")).data().to_vec()
}

pub fn oracle_params(model: &Model<f64>) -> OracleParams {
    let head = |prefix: &str| Head2 {
        w1: tensor_of(model, &format!("attn.{prefix}.hidden_w")),
        b1: tensor_of(model, &format!("attn.{prefix}.hidden_b")),
        w2: tensor_of(model, &format!("attn.{prefix}.out_w")),
        b2: tensor_of(model, &format!("attn.{prefix}.out_b"))[0],
        hidden: model.dims.attn_hidden,
    };
    let score = |prefix: &str| Score2 {
        w_in: tensor_of(model, &format!("score.{prefix}.inner_w")),
        b_in: tensor_of(model, &format!("score.{prefix}.inner_b")),
        w_out: tensor_of(model, &format!("score.{prefix}.outer_w")),
        b_out: tensor_of(model, &format!("score.{prefix}.outer_b"))[0],
        out_dim: model.dims.embed_total(),
    };
    OracleParams { attn_s: head("s"), attn_p: head("p"), single: score("single"), pair: score("pair") }
}

fn matvec(w: &[f64], x: &[f64], rows: usize) -> Vec<f64> {
    let cols = x.len();
    (0..rows).map(|i| (0..cols).map(|j| w[i * cols + j] * x[j]).sum()).collect()
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn attention_raw(head: &Head2, h: &[f64]) -> f64 {
    let pre = matvec(&head.w1, h, head.hidden);
    let act: Vec<f64> = pre.iter().zip(&head.b1).map(|(a, b)| (a + b).tanh()).collect();
    act.iter().zip(&head.w2).map(|(a, b)| a * b).sum::<f64>() + head.b2
}

fn score_fn(score: &Score2, x: &[f64], y: &[f64]) -> f64 {
    let mapped: Vec<f64> = matvec(&score.w_in, x, score.out_dim)
        .iter()
        .zip(&score.b_in)
        .map(|(a, b)| a + b)
        .collect();
    let prod: Vec<f64> = mapped.iter().zip(y).map(|(a, b)| a * b).collect();
    let norm = prod.iter().map(|v| v * v).sum::<f64>().sqrt();
    let denom = if norm > 1e-12 { norm } else { 1e-12 };
    let unit: Vec<f64> = prod.iter().map(|v| v / denom).collect();
    unit.iter().zip(&score.w_out).map(|(a, b)| a * b).sum::<f64>() + score.b_out
}

/// Language vector of node `slot` under one attention head: softmax of
/// per-node attention scores over the node set, applied to embeddings.
fn language_vector(
    head: &Head2,
    tree: &ParseTree,
    slot: usize,
    embeddings: &[Vec<f64>],
    contexts: &[Vec<f64>],
) -> Vec<f64> {
    let subtree = tree.subtree(slot);
    let raw: Vec<f64> = subtree.iter().map(|&s| attention_raw(head, &contexts[s])).collect();
    let alpha = softmax(&raw);
    let dim = embeddings[0].len();
    let mut y = vec![0.0; dim];
    for (a, &s) in alpha.iter().zip(&subtree) {
        for (o, v) in y.iter_mut().zip(&embeddings[s]) {
            *o += a * v;
        }
    }
    y
}

/// Bottom-up scalar evaluation of the grounding pipeline over a tree
/// with fixed module kinds. Returns the root's per-region scores.
pub fn oracle_ground(
    params: &OracleParams,
    tree: &ParseTree,
    kinds: &[ModuleKind],
    embeddings: &[Vec<f64>],
    contexts: &[Vec<f64>],
    regions: &[Vec<f64>],
) -> Vec<f64> {
    let k = regions.len();
    let mut outputs: Vec<Option<Vec<f64>>> = vec![None; tree.len()];
    for slot in tree.post_order() {
        let children: Vec<Vec<f64>> = tree
            .children(slot)
            .iter()
            .map(|&c| outputs[c].clone().expect("post order"))
            .collect();
        let out = match kinds[slot] {
            ModuleKind::Single => {
                let y_s = language_vector(&params.attn_s, tree, slot, embeddings, contexts);
                (0..k)
                    .map(|i| {
                        score_fn(&params.single, &regions[i], &y_s)
                            + children.iter().map(|c| c[i]).sum::<f64>()
                    })
                    .collect()
            }
            ModuleKind::Sum => {
                (0..k).map(|i| children.iter().map(|c| c[i]).sum::<f64>()).collect()
            }
            ModuleKind::Comp => {
                let y_s = language_vector(&params.attn_s, tree, slot, embeddings, contexts);
                let y_p = language_vector(&params.attn_p, tree, slot, embeddings, contexts);
                let evidence: Vec<f64> = (0..k)
                    .map(|i| {
                        score_fn(&params.single, &regions[i], &y_s)
                            + children.iter().map(|c| c[i]).sum::<f64>()
                    })
                    .collect();
                let beta = softmax(&evidence);
                let d_x = regions[0].len();
                let mut context = vec![0.0; d_x];
                for (b, r) in beta.iter().zip(regions) {
                    for (o, v) in context.iter_mut().zip(r) {
                        *o += b * v;
                    }
                }
                (0..k)
                    .map(|i| {
                        let joint: Vec<f64> =
                            regions[i].iter().chain(&context).cloned().collect();
                        score_fn(&params.pair, &joint, &y_p)
                    })
                    .collect()
            }
        };
        outputs[slot] = Some(out);
    }
    outputs[tree.root()].clone().expect("root visited")
}

// ── random trees and token edits ────────────────────────────────────

/// Random recursive tree over `n` nodes with ids `1..=n`: node i hangs
/// off a uniformly random earlier node.
pub fn random_tree<R: Rng>(rng: &mut R, n: usize) -> ParseTree {
    let words = ["man", "dog", "horse", "hat", "ball", "riding", "wearing", "near"];
    let pos = ["NOUN", "VERB", "ADJ", "ADP"];
    let deps = ["nsubj", "dobj", "amod", "prep", "pobj"];
    let tokens: Vec<Token> = (1..=n)
        .map(|id| {
            let head = if id == 1 { 0 } else { rng.random_range(1..id) };
            let deprel = if id == 1 { "root" } else { deps[rng.random_range(0..deps.len())] };
            Token::new(
                id,
                words[rng.random_range(0..words.len())],
                pos[rng.random_range(0..pos.len())],
                head,
                deprel,
            )
        })
        .collect();
    ParseTree::build(tokens).expect("random recursive trees are valid")
}

/// Relabels token ids by a permutation, shuffling sibling order while
/// preserving the abstract structure. Returns the rebuilt tree and, for
/// each original slot, the slot of the same node in the new tree.
pub fn relabel_tree<R: Rng>(rng: &mut R, tree: &ParseTree) -> (ParseTree, Vec<usize>) {
    use rand::seq::SliceRandom;
    let n = tree.len();
    let mut new_ids: Vec<usize> = (1..=n).collect();
    new_ids.shuffle(rng);
    let old_ids: Vec<usize> = tree.nodes().iter().map(|t| t.id).collect();
    let id_map = |old: usize| -> usize {
        let pos = old_ids.iter().position(|&x| x == old).expect("known id");
        new_ids[pos]
    };
    let tokens: Vec<Token> = tree
        .nodes()
        .iter()
        .map(|t| {
            let head = if t.head == 0 { 0 } else { id_map(t.head) };
            Token::new(id_map(t.id), &t.form, &t.upos, head, &t.deprel)
        })
        .collect();
    let relabeled = ParseTree::build(tokens).expect("relabeling preserves validity");
    // Old slot → new slot, matched through the id permutation.
    let mapping: Vec<usize> = (0..n)
        .map(|slot| {
            let new_id = id_map(tree.node(slot).id);
            (0..n).find(|&s| relabeled.node(s).id == new_id).expect("id present")
        })
        .collect();
    (relabeled, mapping)
}

/// Inserts a determiner ("the", DET) as the first token, attached to the
/// root, shifting every other id up by one.
pub fn inject_determiner(tokens: &[Token]) -> Vec<Token> {
    let root_id = tokens.iter().find(|t| t.head == 0).expect("rooted sentence").id;
    let mut out = vec![Token::new(1, "the", "DET", root_id + 1, "det")];
    for t in tokens {
        let head = if t.head == 0 { 0 } else { t.head + 1 };
        out.push(Token::new(t.id + 1, &t.form, &t.upos, head, &t.deprel));
    }
    out
}
