//! Grounding-score computation over an assembled tree.
//!
//! Per node, attention over its node set builds two language vectors
//! (one for single-region scores, one for region pairs). The scoring
//! module adds a fresh per-region score to its children's, the additive
//! module just sums children, and the relational module re-grounds: it
//! softmaxes the accumulated evidence into a contextual "average region"
//! and scores every region against that context. Scores accumulate
//! bottom-up; the root's vector ranks the regions.

use crate::assembler::{Decision, Mode, ModuleAssignment, ModuleKind, COMP_INDEX, SUM_INDEX};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::parse::ParseTree;
use crate::tensor::Real;

/// Two-layer attention head: `fc₂(tanh(fc₁(h)))` per node.
#[derive(Debug, Clone, Copy)]
pub struct AttentionHead {
    pub hidden_w: Var,
    pub hidden_b: Var,
    pub out_w: Var,
    pub out_b: Var,
}

/// `fc_out(L2norm(fc_in(x) ⊙ y))`.
#[derive(Debug, Clone, Copy)]
pub struct ScoreHead {
    pub inner_w: Var,
    pub inner_b: Var,
    pub outer_w: Var,
    pub outer_b: Var,
}

/// All grounding parameters: independent attention heads for the single
/// and pairwise language vectors, and the two score functions.
#[derive(Debug, Clone, Copy)]
pub struct GroundingVars {
    pub attn_s: AttentionHead,
    pub attn_p: AttentionHead,
    pub single: ScoreHead,
    pub pair: ScoreHead,
}

/// Raw (pre-softmax) attention scalar for every slot under one head.
pub fn attention_scores<F: Real>(
    g: &mut Graph<F>,
    head: &AttentionHead,
    contexts: &[Var],
) -> Result<Vec<Var>> {
    contexts
        .iter()
        .map(|&h| {
            let pre = g.linear(h, head.hidden_w, head.hidden_b)?;
            let act = g.tanh(pre);
            g.linear(act, head.out_w, head.out_b)
        })
        .collect()
}

/// Softmax of one head's raw scores restricted to a node set.
pub fn node_attention<F: Real>(
    g: &mut Graph<F>,
    raw_scores: &[Var],
    subtree: &[usize],
) -> Result<Var> {
    let picked: Vec<Var> = subtree.iter().map(|&s| raw_scores[s]).collect();
    let stacked = g.stack(&picked)?;
    g.softmax(stacked)
}

/// Attention-weighted sum of the node set's embeddings.
pub fn language_rep<F: Real>(
    g: &mut Graph<F>,
    alpha: Var,
    embeddings: &[Var],
    subtree: &[usize],
) -> Result<Var> {
    let items: Vec<Var> = subtree.iter().map(|&s| embeddings[s]).collect();
    g.weighted_sum(alpha, &items)
}

/// Similarity of one region with a language vector.
pub fn score_single<F: Real>(g: &mut Graph<F>, head: &ScoreHead, x: Var, y: Var) -> Result<Var> {
    let mapped = g.linear(x, head.inner_w, head.inner_b)?;
    let prod = g.mul(mapped, y)?;
    let normed = g.l2_normalize(prod)?;
    g.linear(normed, head.outer_w, head.outer_b)
}

/// Similarity of an ordered region pair (candidate first, context
/// second) with a language vector. Not symmetric in the pair.
pub fn score_pair<F: Real>(
    g: &mut Graph<F>,
    head: &ScoreHead,
    x1: Var,
    x2: Var,
    y: Var,
) -> Result<Var> {
    let joint = g.concat(&[x1, x2])?;
    let mapped = g.linear(joint, head.inner_w, head.inner_b)?;
    let prod = g.mul(mapped, y)?;
    let normed = g.l2_normalize(prod)?;
    g.linear(normed, head.outer_w, head.outer_b)
}

/// Scoring module (leaves and root): fresh per-region scores plus the
/// children's accumulated scores.
pub fn run_single<F: Real>(
    g: &mut Graph<F>,
    head: &ScoreHead,
    regions: &[Var],
    y_s: Var,
    children_scores: &[Var],
) -> Result<Var> {
    let singles: Vec<Var> = regions
        .iter()
        .map(|&x| score_single(g, head, x, y_s))
        .collect::<Result<_>>()?;
    let own = g.stack(&singles)?;
    if children_scores.is_empty() {
        return Ok(own);
    }
    let mut terms = vec![own];
    terms.extend_from_slice(children_scores);
    g.add_n(&terms)
}

/// Additive module: elementwise sum of the children's score vectors.
/// No parameters.
pub fn run_sum<F: Real>(g: &mut Graph<F>, children_scores: &[Var]) -> Result<Var> {
    if children_scores.is_empty() {
        return Err(Error::EmptyInput { op: "run_sum" });
    }
    g.add_n(children_scores)
}

/// Relational module output plus its per-region simplex weights.
pub struct CompOutput {
    pub scores: Var,
    pub beta: Var,
}

/// Relational module: grounds the accumulated evidence into a contextual
/// region `x̄ = Σ β_i x_i` and scores every region paired with it. The
/// children's scores reach the output only through `β`.
pub fn run_comp<F: Real>(
    g: &mut Graph<F>,
    vars: &GroundingVars,
    regions: &[Var],
    y_s: Var,
    y_p: Var,
    children_scores: &[Var],
) -> Result<CompOutput> {
    let singles: Vec<Var> = regions
        .iter()
        .map(|&x| score_single(g, &vars.single, x, y_s))
        .collect::<Result<_>>()?;
    let own = g.stack(&singles)?;
    let evidence = if children_scores.is_empty() {
        own
    } else {
        let mut terms = vec![own];
        terms.extend_from_slice(children_scores);
        g.add_n(&terms)?
    };
    let beta = g.softmax(evidence)?;
    let context = g.weighted_sum(beta, regions)?;
    let pairs: Vec<Var> = regions
        .iter()
        .map(|&x| score_pair(g, &vars.pair, x, context, y_p))
        .collect::<Result<_>>()?;
    let scores = g.stack(&pairs)?;
    Ok(CompOutput { scores, beta })
}

/// Everything recorded about one node during grounding, for dumps.
#[derive(Debug, Clone)]
pub struct NodeTrace {
    pub subtree: Vec<usize>,
    pub alpha_s: Option<Var>,
    pub alpha_p: Option<Var>,
    pub beta: Option<Var>,
    pub scores: Var,
}

pub struct GroundOutput {
    pub root_scores: Var,
    pub nodes: Vec<NodeTrace>,
}

struct RepCache {
    alpha_s: Vec<Option<Var>>,
    y_s: Vec<Option<Var>>,
    alpha_p: Vec<Option<Var>>,
    y_p: Vec<Option<Var>>,
}

/// Bottom-up evaluation of the assembled tree; returns the root's
/// K-vector of grounding scores.
///
/// Training computes both the additive and relational branch at every
/// sampled node and combines them hard-forward/soft-backward; the soft
/// mode mixes them with the relaxed weights (fully differentiable); at
/// inference only the chosen branch runs.
pub fn ground_tree<F: Real>(
    g: &mut Graph<F>,
    tree: &ParseTree,
    embeddings: &[Var],
    contexts: &[Var],
    regions: &[Var],
    vars: &GroundingVars,
    assignment: &ModuleAssignment,
    mode: Mode,
) -> Result<GroundOutput> {
    check_assignment(tree, assignment, mode)?;
    let raw_s = attention_scores(g, &vars.attn_s, contexts)?;
    let mut raw_p: Option<Vec<Var>> = None;

    let mut cache = RepCache {
        alpha_s: vec![None; tree.len()],
        y_s: vec![None; tree.len()],
        alpha_p: vec![None; tree.len()],
        y_p: vec![None; tree.len()],
    };
    let mut subtrees: Vec<Option<Vec<usize>>> = vec![None; tree.len()];
    let mut traces: Vec<Option<NodeTrace>> = vec![None; tree.len()];
    let mut outputs: Vec<Option<Var>> = vec![None; tree.len()];

    for slot in tree.post_order() {
        let subtree = subtrees[slot].get_or_insert_with(|| tree.subtree(slot)).clone();
        let children_scores: Vec<Var> = tree
            .children(slot)
            .iter()
            .map(|&c| outputs[c].expect("post order"))
            .collect();

        let ensure_s = |g: &mut Graph<F>, cache: &mut RepCache| -> Result<(Var, Var)> {
            if cache.y_s[slot].is_none() {
                let alpha = node_attention(g, &raw_s, &subtree)?;
                let y = language_rep(g, alpha, embeddings, &subtree)?;
                cache.alpha_s[slot] = Some(alpha);
                cache.y_s[slot] = Some(y);
            }
            Ok((cache.alpha_s[slot].unwrap(), cache.y_s[slot].unwrap()))
        };

        let kind = assignment.kinds[slot];
        let (scores, beta) = match kind {
            ModuleKind::Single => {
                let (_, y_s) = ensure_s(g, &mut cache)?;
                (run_single(g, &vars.single, regions, y_s, &children_scores)?, None)
            }
            ModuleKind::Sum | ModuleKind::Comp => {
                let decision = assignment.decisions[slot].as_ref();
                let both_branches = matches!(mode, Mode::Train | Mode::Soft);
                let want_comp = both_branches || kind == ModuleKind::Comp;
                let mut beta = None;
                let comp_out = if want_comp {
                    if raw_p.is_none() {
                        raw_p = Some(attention_scores(g, &vars.attn_p, contexts)?);
                    }
                    let (_, y_s) = ensure_s(g, &mut cache)?;
                    if cache.y_p[slot].is_none() {
                        let alpha = node_attention(g, raw_p.as_ref().unwrap(), &subtree)?;
                        let y = language_rep(g, alpha, embeddings, &subtree)?;
                        cache.alpha_p[slot] = Some(alpha);
                        cache.y_p[slot] = Some(y);
                    }
                    let y_p = cache.y_p[slot].unwrap();
                    let out = run_comp(g, vars, regions, y_s, y_p, &children_scores)?;
                    beta = Some(out.beta);
                    Some(out.scores)
                } else {
                    None
                };
                let scores = if both_branches {
                    let decision = decision.ok_or_else(|| {
                        Error::InvalidTree("internal node lacks an assembler decision".into())
                    })?;
                    let sum_out = run_sum(g, &children_scores)?;
                    let branches = [sum_out, comp_out.expect("computed in sampling modes")];
                    mix_branches(g, decision, &branches, mode)?
                } else if kind == ModuleKind::Sum {
                    run_sum(g, &children_scores)?
                } else {
                    comp_out.expect("comp branch requested")
                };
                (scores, beta)
            }
        };

        traces[slot] = Some(NodeTrace {
            subtree,
            alpha_s: cache.alpha_s[slot],
            alpha_p: cache.alpha_p[slot],
            beta,
            scores,
        });
        outputs[slot] = Some(scores);
    }

    Ok(GroundOutput {
        root_scores: outputs[tree.root()].expect("root visited"),
        nodes: traces.into_iter().map(|t| t.expect("all slots visited")).collect(),
    })
}

fn mix_branches<F: Real>(
    g: &mut Graph<F>,
    decision: &Decision,
    branches: &[Var; 2],
    mode: Mode,
) -> Result<Var> {
    let soft = decision
        .soft
        .ok_or_else(|| Error::InvalidTree("sampling modes require relaxed weights".into()))?;
    debug_assert!(decision.hard == SUM_INDEX || decision.hard == COMP_INDEX);
    match mode {
        Mode::Train => g.hard_mix(soft, branches, decision.hard),
        Mode::Soft => g.weighted_sum(soft, branches),
        Mode::Infer => unreachable!("infer runs a single branch"),
    }
}

fn check_assignment(tree: &ParseTree, assignment: &ModuleAssignment, mode: Mode) -> Result<()> {
    if assignment.kinds.len() != tree.len() || assignment.decisions.len() != tree.len() {
        return Err(Error::InvalidTree(format!(
            "module assignment covers {} nodes, tree has {}",
            assignment.kinds.len(),
            tree.len()
        )));
    }
    for slot in 0..tree.len() {
        let fixed = slot == tree.root() || tree.is_leaf(slot);
        let kind = assignment.kinds[slot];
        if fixed && kind != ModuleKind::Single {
            return Err(Error::InvalidTree(format!(
                "slot {slot} must run the scoring module (leaf or root), got {}",
                kind.name()
            )));
        }
        if !fixed && kind == ModuleKind::Single {
            return Err(Error::InvalidTree(format!(
                "internal slot {slot} cannot run the scoring module"
            )));
        }
        if !fixed && mode != Mode::Infer && assignment.decisions[slot].is_none() {
            return Err(Error::InvalidTree(format!(
                "internal slot {slot} lacks a sampled decision"
            )));
        }
    }
    Ok(())
}
