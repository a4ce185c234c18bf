//! Node embeddings and the bidirectional child-sum tree LSTM.
//!
//! Bottom-up, a node consumes the states of all its children; top-down
//! it consumes its parent's state (the root starts from zeros). The two
//! directions carry independent parameters, and a node's final context
//! is the concatenation `[h↑; h↓]`.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::parse::ParseTree;
use crate::tensor::Real;

/// `[E_w row; E_p row; E_d row]` for one token.
pub fn embed_node<F: Real>(
    g: &mut Graph<F>,
    tables: (Var, Var, Var),
    indices: (usize, usize, usize),
) -> Result<Var> {
    let w = g.row(tables.0, indices.0)?;
    let p = g.row(tables.1, indices.1)?;
    let d = g.row(tables.2, indices.2)?;
    g.concat(&[w, p, d])
}

/// The gate parameters of one direction's transition.
#[derive(Debug, Clone, Copy)]
pub struct TreeLstmCell {
    pub w_input: Var,
    pub u_input: Var,
    pub b_input: Var,
    pub w_output: Var,
    pub u_output: Var,
    pub b_output: Var,
    pub w_cand: Var,
    pub u_cand: Var,
    pub b_cand: Var,
    pub w_forget: Var,
    pub u_forget: Var,
    pub b_forget: Var,
    pub d_h: usize,
}

impl TreeLstmCell {
    /// One child-sum transition. `children` holds `(cell, hidden)` pairs;
    /// an empty list is the leaf case (zero states).
    ///
    /// With `h̃ = Σ_j h_j`:
    ///   i = σ(Wⁱe + Uⁱh̃ + bⁱ), o and the tanh candidate likewise,
    ///   f_j = σ(Wᶠe + Uᶠh_j + bᶠ) per child,
    ///   c = i⊙cand + Σ_j f_j⊙c_j,  h = o⊙tanh(c).
    pub fn step<F: Real>(
        &self,
        g: &mut Graph<F>,
        e: Var,
        children: &[(Var, Var)],
    ) -> Result<(Var, Var)> {
        let h_sum = match children.len() {
            0 => None,
            1 => Some(children[0].1),
            _ => {
                let hs: Vec<Var> = children.iter().map(|(_, h)| *h).collect();
                Some(g.add_n(&hs)?)
            }
        };
        let gate = |g: &mut Graph<F>, w: Var, u: Var, b: Var| -> Result<Var> {
            let wx = g.linear(e, w, b)?;
            match h_sum {
                Some(h) => {
                    let uh = g.matvec(u, h)?;
                    g.add(wx, uh)
                }
                None => Ok(wx),
            }
        };
        let input = {
            let pre = gate(g, self.w_input, self.u_input, self.b_input)?;
            g.sigmoid(pre)
        };
        let output = {
            let pre = gate(g, self.w_output, self.u_output, self.b_output)?;
            g.sigmoid(pre)
        };
        let cand = {
            let pre = gate(g, self.w_cand, self.u_cand, self.b_cand)?;
            g.tanh(pre)
        };
        let mut cell_terms = vec![g.mul(input, cand)?];
        if !children.is_empty() {
            let forget_e = g.linear(e, self.w_forget, self.b_forget)?;
            for (c_j, h_j) in children {
                let uh = g.matvec(self.u_forget, *h_j)?;
                let pre = g.add(forget_e, uh)?;
                let f_j = g.sigmoid(pre);
                cell_terms.push(g.mul(f_j, *c_j)?);
            }
        }
        let cell = g.add_n(&cell_terms)?;
        let tc = g.tanh(cell);
        let hidden = g.mul(output, tc)?;
        Ok((cell, hidden))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    BottomUp,
    TopDown,
}

/// Runs one direction over the whole tree; returns `(cell, hidden)` per
/// slot. Bottom-up visits children first; top-down feeds each node its
/// parent's state, the root getting zeros.
pub fn encode_tree<F: Real>(
    g: &mut Graph<F>,
    cell: &TreeLstmCell,
    tree: &ParseTree,
    embeddings: &[Var],
    direction: Direction,
) -> Result<Vec<(Var, Var)>> {
    let mut states: Vec<Option<(Var, Var)>> = vec![None; tree.len()];
    match direction {
        Direction::BottomUp => {
            for slot in tree.post_order() {
                let child_states: Vec<(Var, Var)> = tree
                    .children(slot)
                    .iter()
                    .map(|&c| states[c].expect("post order visits children first"))
                    .collect();
                states[slot] = Some(cell.step(g, embeddings[slot], &child_states)?);
            }
        }
        Direction::TopDown => {
            for slot in tree.pre_order() {
                let sources: Vec<(Var, Var)> = tree
                    .parent(slot)
                    .map(|p| states[p].expect("pre order visits parents first"))
                    .into_iter()
                    .collect();
                states[slot] = Some(cell.step(g, embeddings[slot], &sources)?);
            }
        }
    }
    Ok(states.into_iter().map(|s| s.expect("all slots visited")).collect())
}

/// `h_t = [h↑; h↓]`.
pub fn node_context<F: Real>(g: &mut Graph<F>, h_up: Var, h_down: Var) -> Result<Var> {
    g.concat(&[h_up, h_down])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{finite_diff_grad, max_rel_error};
    use crate::parse::Token;
    use rand::Rng;

    const D_H: usize = 4;
    const E_DIM: usize = 6;

    fn random_vec<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-0.8..0.8)).collect()
    }

    fn cell_from(g: &mut Graph<f64>, params: &[Vec<f64>]) -> TreeLstmCell {
        let mat = |g: &mut Graph<f64>, d: &Vec<f64>, rows: usize, cols: usize| {
            g.leaf(vec![rows, cols], d.clone())
        };
        TreeLstmCell {
            w_input: mat(g, &params[0], D_H, E_DIM),
            u_input: mat(g, &params[1], D_H, D_H),
            b_input: g.leaf(vec![D_H], params[2].clone()),
            w_output: mat(g, &params[3], D_H, E_DIM),
            u_output: mat(g, &params[4], D_H, D_H),
            b_output: g.leaf(vec![D_H], params[5].clone()),
            w_cand: mat(g, &params[6], D_H, E_DIM),
            u_cand: mat(g, &params[7], D_H, D_H),
            b_cand: g.leaf(vec![D_H], params[8].clone()),
            w_forget: mat(g, &params[9], D_H, E_DIM),
            u_forget: mat(g, &params[10], D_H, D_H),
            b_forget: g.leaf(vec![D_H], params[11].clone()),
            d_h: D_H,
        }
    }

    fn random_params<R: Rng>(rng: &mut R) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        for _ in 0..4 {
            out.push(random_vec(rng, D_H * E_DIM));
            out.push(random_vec(rng, D_H * D_H));
            out.push(random_vec(rng, D_H));
        }
        out
    }

    #[test]
    fn zero_everything_gives_zero_state() {
        let mut g = Graph::<f64>::new();
        let zeros = vec![vec![0.0; D_H * E_DIM], vec![0.0; D_H * D_H], vec![0.0; D_H]]
            .into_iter()
            .cycle()
            .take(12)
            .collect::<Vec<_>>();
        let cell = cell_from(&mut g, &zeros);
        let e = g.leaf(vec![E_DIM], vec![0.0; E_DIM]);
        let (c, h) = cell.step(&mut g, e, &[]).unwrap();
        assert!(g.value(c).iter().all(|v| *v == 0.0));
        assert!(g.value(h).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn children_permutation_leaves_state_unchanged() {
        let mut rng = crate::rng::stream_rng(3, &[1]);
        let params = random_params(&mut rng);
        let e_data = random_vec(&mut rng, E_DIM);
        let kids: Vec<(Vec<f64>, Vec<f64>)> = (0..4)
            .map(|_| (random_vec(&mut rng, D_H), random_vec(&mut rng, D_H)))
            .collect();

        let eval = |order: &[usize]| {
            let mut g = Graph::<f64>::new();
            let cell = cell_from(&mut g, &params);
            let e = g.leaf(vec![E_DIM], e_data.clone());
            let children: Vec<(Var, Var)> = order
                .iter()
                .map(|&i| {
                    let c = g.leaf(vec![D_H], kids[i].0.clone());
                    let h = g.leaf(vec![D_H], kids[i].1.clone());
                    (c, h)
                })
                .collect();
            let (c, h) = cell.step(&mut g, e, &children).unwrap();
            (g.value(c).to_vec(), g.value(h).to_vec())
        };

        let (c0, h0) = eval(&[0, 1, 2, 3]);
        for order in [[3, 1, 0, 2], [2, 3, 1, 0], [1, 0, 3, 2]] {
            let (c, h) = eval(&order);
            for (a, b) in c.iter().zip(&c0).chain(h.iter().zip(&h0)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    /// Independent sequential LSTM cell in plain scalar code.
    fn sequential_lstm(
        params: &[Vec<f64>],
        x: &[f64],
        h_prev: &[f64],
        c_prev: &[f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let matvec = |m: &[f64], v: &[f64], rows: usize| -> Vec<f64> {
            let cols = v.len();
            (0..rows)
                .map(|i| (0..cols).map(|j| m[i * cols + j] * v[j]).sum())
                .collect()
        };
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let gate = |wi: usize, ui: usize, bi: usize, act: &dyn Fn(f64) -> f64| -> Vec<f64> {
            let wx = matvec(&params[wi], x, D_H);
            let uh = matvec(&params[ui], h_prev, D_H);
            (0..D_H).map(|k| act(wx[k] + uh[k] + params[bi][k])).collect()
        };
        let i = gate(0, 1, 2, &sig);
        let o = gate(3, 4, 5, &sig);
        let u = gate(6, 7, 8, &|v| v.tanh());
        let f = gate(9, 10, 11, &sig);
        let c: Vec<f64> = (0..D_H).map(|k| i[k] * u[k] + f[k] * c_prev[k]).collect();
        let h: Vec<f64> = (0..D_H).map(|k| o[k] * c[k].tanh()).collect();
        (c, h)
    }

    #[test]
    fn single_child_equals_sequential_cell() {
        let mut rng = crate::rng::stream_rng(4, &[2]);
        let params = random_params(&mut rng);
        let e_data = random_vec(&mut rng, E_DIM);
        let c_prev = random_vec(&mut rng, D_H);
        let h_prev = random_vec(&mut rng, D_H);

        let mut g = Graph::<f64>::new();
        let cell = cell_from(&mut g, &params);
        let e = g.leaf(vec![E_DIM], e_data.clone());
        let cp = g.leaf(vec![D_H], c_prev.clone());
        let hp = g.leaf(vec![D_H], h_prev.clone());
        let (c, h) = cell.step(&mut g, e, &[(cp, hp)]).unwrap();

        let (c_ref, h_ref) = sequential_lstm(&params, &e_data, &h_prev, &c_prev);
        for (a, b) in g.value(c).iter().zip(&c_ref) {
            assert!((a - b).abs() < 1e-12, "cell mismatch: {a} vs {b}");
        }
        for (a, b) in g.value(h).iter().zip(&h_ref) {
            assert!((a - b).abs() < 1e-12, "hidden mismatch: {a} vs {b}");
        }
    }

    fn chain_tree() -> ParseTree {
        ParseTree::build(vec![
            Token::new(1, "a", "NOUN", 2, "dep"),
            Token::new(2, "b", "NOUN", 3, "dep"),
            Token::new(3, "c", "NOUN", 0, "root"),
        ])
        .unwrap()
    }

    fn embed_all(g: &mut Graph<f64>, data: &[Vec<f64>]) -> Vec<Var> {
        data.iter().map(|d| g.leaf(vec![E_DIM], d.clone())).collect()
    }

    #[test]
    fn single_node_tree_matches_leaf_step_in_both_directions() {
        let mut rng = crate::rng::stream_rng(5, &[3]);
        let params = random_params(&mut rng);
        let e_data = random_vec(&mut rng, E_DIM);
        let tree = ParseTree::build(vec![Token::new(1, "x", "NOUN", 0, "root")]).unwrap();

        let mut g = Graph::<f64>::new();
        let cell = cell_from(&mut g, &params);
        let e = g.leaf(vec![E_DIM], e_data.clone());
        let up = encode_tree(&mut g, &cell, &tree, &[e], Direction::BottomUp).unwrap();
        let down = encode_tree(&mut g, &cell, &tree, &[e], Direction::TopDown).unwrap();
        let (_, h_leaf) = cell.step(&mut g, e, &[]).unwrap();
        assert_eq!(g.value(up[0].1), g.value(h_leaf));
        assert_eq!(g.value(down[0].1), g.value(h_leaf));
    }

    #[test]
    fn chain_bottom_up_composes_in_order() {
        let mut rng = crate::rng::stream_rng(6, &[4]);
        let params = random_params(&mut rng);
        let e_data: Vec<Vec<f64>> = (0..3).map(|_| random_vec(&mut rng, E_DIM)).collect();
        let tree = chain_tree();

        let mut g = Graph::<f64>::new();
        let cell = cell_from(&mut g, &params);
        let embeds = embed_all(&mut g, &e_data);
        let states = encode_tree(&mut g, &cell, &tree, &embeds, Direction::BottomUp).unwrap();

        // Manual composition: slot 0 (token 1, leaf) → slot 1 → slot 2 (root).
        let s0 = cell.step(&mut g, embeds[0], &[]).unwrap();
        let s1 = cell.step(&mut g, embeds[1], &[s0]).unwrap();
        let s2 = cell.step(&mut g, embeds[2], &[s1]).unwrap();
        assert_eq!(g.value(states[2].1), g.value(s2.1));
        assert_eq!(g.value(states[2].0), g.value(s2.0));
    }

    #[test]
    fn star_root_state_invariant_under_leaf_relabeling() {
        let mut rng = crate::rng::stream_rng(7, &[5]);
        let params = random_params(&mut rng);
        let shared = random_vec(&mut rng, E_DIM);
        let root_e = random_vec(&mut rng, E_DIM);

        let star = |leaf_order: [usize; 4]| {
            let mut tokens = vec![Token::new(1, "r", "NOUN", 0, "root")];
            for (pos, _label) in leaf_order.iter().enumerate() {
                tokens.push(Token::new(pos + 2, "leaf", "ADJ", 1, "amod"));
            }
            let tree = ParseTree::build(tokens).unwrap();
            let mut g = Graph::<f64>::new();
            let cell = cell_from(&mut g, &params);
            let mut embeds = vec![g.leaf(vec![E_DIM], root_e.clone())];
            for _ in 0..4 {
                embeds.push(g.leaf(vec![E_DIM], shared.clone()));
            }
            let states = encode_tree(&mut g, &cell, &tree, &embeds, Direction::BottomUp).unwrap();
            g.value(states[tree.root()].1).to_vec()
        };

        let a = star([0, 1, 2, 3]);
        let b = star([3, 2, 1, 0]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    /// Tree used for locality: c(root) ── b ── a, and c ── d.
    fn branch_tree() -> ParseTree {
        ParseTree::build(vec![
            Token::new(1, "a", "NOUN", 2, "dep"),
            Token::new(2, "b", "NOUN", 3, "dep"),
            Token::new(3, "c", "NOUN", 0, "root"),
            Token::new(4, "d", "NOUN", 3, "dep"),
        ])
        .unwrap()
    }

    #[test]
    fn locality_of_embedding_changes() {
        let mut rng = crate::rng::stream_rng(8, &[6]);
        let params = random_params(&mut rng);
        let base: Vec<Vec<f64>> = (0..4).map(|_| random_vec(&mut rng, E_DIM)).collect();
        let tree = branch_tree();

        let eval = |data: &[Vec<f64>], dir: Direction| -> Vec<Vec<f64>> {
            let mut g = Graph::<f64>::new();
            let cell = cell_from(&mut g, &params);
            let embeds = embed_all(&mut g, data);
            let states = encode_tree(&mut g, &cell, &tree, &embeds, dir).unwrap();
            states.iter().map(|(_, h)| g.value(*h).to_vec()).collect()
        };

        // Perturb slot 1 ("b"): ancestors-and-self = {b, c}; descendants-and-self = {a, b}.
        let mut changed = base.clone();
        changed[1] = random_vec(&mut rng, E_DIM);

        let up0 = eval(&base, Direction::BottomUp);
        let up1 = eval(&changed, Direction::BottomUp);
        let differs =
            |a: &Vec<f64>, b: &Vec<f64>| a.iter().zip(b).any(|(x, y)| (x - y).abs() > 1e-9);
        assert!(!differs(&up0[0], &up1[0]), "bottom-up: sibling subtree must not change");
        assert!(differs(&up0[1], &up1[1]));
        assert!(differs(&up0[2], &up1[2]), "bottom-up: ancestor must change");
        assert!(!differs(&up0[3], &up1[3]));

        let down0 = eval(&base, Direction::TopDown);
        let down1 = eval(&changed, Direction::TopDown);
        assert!(differs(&down0[0], &down1[0]), "top-down: descendant must change");
        assert!(differs(&down0[1], &down1[1]));
        assert!(!differs(&down0[2], &down1[2]), "top-down: ancestor must not change");
        assert!(!differs(&down0[3], &down1[3]));
    }

    #[test]
    fn node_context_concatenates() {
        let mut g = Graph::<f64>::new();
        let up = g.leaf(vec![1], vec![1.0]);
        let down = g.leaf(vec![1], vec![2.0]);
        let h = node_context(&mut g, up, down).unwrap();
        assert_eq!(g.value(h), &[1.0, 2.0]);
        assert_eq!(g.shape(h), &[2]);
    }

    #[test]
    fn root_state_gradient_wrt_leaf_embedding_matches_fd() {
        let mut rng = crate::rng::stream_rng(9, &[7]);
        let params = random_params(&mut rng);
        let e_data: Vec<Vec<f64>> = (0..3).map(|_| random_vec(&mut rng, E_DIM)).collect();
        let proj = random_vec(&mut rng, D_H);
        let tree = chain_tree();

        let eval = |leaf: &[f64]| -> f64 {
            let mut g = Graph::<f64>::new();
            let cell = cell_from(&mut g, &params);
            let mut data = e_data.clone();
            data[0] = leaf.to_vec();
            let embeds = embed_all(&mut g, &data);
            let states = encode_tree(&mut g, &cell, &tree, &embeds, Direction::BottomUp).unwrap();
            let r = g.constant_vector(proj.clone());
            let s = g.mul(states[2].1, r).unwrap();
            let out = g.sum(s);
            g.scalar(out)
        };
        let numeric = finite_diff_grad(eval, &e_data[0], 1e-4);

        let mut g = Graph::<f64>::new();
        let cell = cell_from(&mut g, &params);
        let embeds = embed_all(&mut g, &e_data);
        let states = encode_tree(&mut g, &cell, &tree, &embeds, Direction::BottomUp).unwrap();
        let r = g.constant_vector(proj.clone());
        let s = g.mul(states[2].1, r).unwrap();
        let out = g.sum(s);
        g.backward(out).unwrap();
        let err = max_rel_error(g.grad(embeds[0]).unwrap(), &numeric);
        assert!(err < 1e-3, "gradient through the tree: max relative error {err}");
    }
}
