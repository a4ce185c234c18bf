//! Finite-difference gradient verification.
//!
//! Central differences with h = 1e-4 in f64, compared against the tape's
//! analytic gradients by relative error. [`model_suite`] runs the check
//! over every parameter of a small fixed model in the soft (fully
//! differentiable) regime with frozen Gumbel noise; it backs the
//! `gradcheck` subcommand.

use rand::Rng;

use crate::assembler::Mode;
use crate::config::Config;
use crate::error::Result;
use crate::graph::Graph;
use crate::model::{grounding_loss, Model};
use crate::optim::ParameterStore;
use crate::parse::{ParseTree, Token, Vocabulary};
use crate::rng::{stream, stream_rng};

/// Central finite differences of a scalar function at `point`.
pub fn finite_diff_grad<Fun>(f: Fun, point: &[f64], h: f64) -> Vec<f64>
where
    Fun: Fn(&[f64]) -> f64,
{
    let mut grads = Vec::with_capacity(point.len());
    let mut probe = point.to_vec();
    for i in 0..point.len() {
        probe[i] = point[i] + h;
        let plus = f(&probe);
        probe[i] = point[i] - h;
        let minus = f(&probe);
        probe[i] = point[i];
        grads.push((plus - minus) / (2.0 * h));
    }
    grads
}

/// Relative error with a floored denominator so near-zero pairs compare
/// absolutely instead of dividing by noise.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-4);
    (analytic - numeric).abs() / denom
}

/// Largest elementwise relative error between two gradient vectors.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| rel_error(*a, *n))
        .fold(0.0, f64::max)
}

/// Outcome of the whole-model check.
#[derive(Debug, Clone)]
pub struct ModelCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub parameter_count: usize,
    pub scalar_count: usize,
}

/// Threshold the `gradcheck` subcommand gates on.
pub const MODEL_CHECK_TOLERANCE: f64 = 1e-3;

const FD_STEP: f64 = 1e-4;

/// The fixed small profile the suite runs at: d_x = 8, d_h = 16,
/// embeddings 8/4/4, K = 3 regions, a five-node tree.
fn check_config(seed: u64, tau: f64) -> Config {
    let mut c = Config::default();
    c.d_x = 8;
    c.d_h = 16;
    c.embed_word = 8;
    c.embed_pos = 4;
    c.embed_dep = 4;
    c.attn_hidden = 8;
    c.seed = seed;
    c.tau = tau;
    c
}

fn check_tree() -> ParseTree {
    ParseTree::build(vec![
        Token::new(1, "red", "ADJ", 2, "amod"),
        Token::new(2, "ball", "NOUN", 0, "root"),
        Token::new(3, "left-of", "ADP", 2, "prep"),
        Token::new(4, "blue", "ADJ", 5, "amod"),
        Token::new(5, "box", "NOUN", 3, "pobj"),
    ])
    .expect("fixed tree is valid")
}

fn flatten(store: &ParameterStore<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(store.scalar_count());
    for (_, t) in store.iter() {
        out.extend_from_slice(t.data());
    }
    out
}

fn flat_grads(store: &ParameterStore<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(store.scalar_count());
    for (_, t) in store.iter() {
        match t.grad() {
            Some(g) => out.extend_from_slice(g),
            None => out.extend(std::iter::repeat(0.0).take(t.len())),
        }
    }
    out
}

fn set_flat(store: &mut ParameterStore<f64>, flat: &[f64]) {
    let names: Vec<String> = store.names().map(str::to_string).collect();
    let mut offset = 0;
    for name in names {
        let t = store.get_mut(&name).expect("name from iteration");
        let n = t.len();
        t.data_mut().copy_from_slice(&flat[offset..offset + n]);
        offset += n;
    }
}

/// (parameter name, element index) owning a flat offset.
fn locate(store: &ParameterStore<f64>, mut offset: usize) -> (String, usize) {
    for (name, t) in store.iter() {
        if offset < t.len() {
            return (name.to_string(), offset);
        }
        offset -= t.len();
    }
    unreachable!("offset within scalar count")
}

/// Soft-mode loss of Eq-style cross-entropy on the fixed instance with
/// frozen Gumbel noise: same seed, same draws every evaluation.
fn check_loss(model: &Model<f64>, tree: &ParseTree, regions: &[Vec<f64>], seed: u64) -> f64 {
    let mut g = Graph::new();
    let params = model.bind(&mut g);
    let mut rng = stream_rng(seed, &[stream::GUMBEL, 0, 0]);
    let pass = model
        .forward(&mut g, &params, tree, regions, Mode::Soft, Some(&mut rng))
        .expect("fixed instance evaluates");
    let loss = grounding_loss(&mut g, pass.root_scores(), 0).expect("target in range");
    g.scalar(loss)
}

/// Checks analytic gradients of the training loss against central finite
/// differences for every parameter scalar of the fixed small model.
pub fn model_suite(seed: u64, tau: f64) -> Result<ModelCheckReport> {
    let config = check_config(seed, tau);
    let tree = check_tree();
    let vocab = Vocabulary::build(&[tree.clone()], 1);
    let mut model: Model<f64> = Model::new(&config, vocab)?;

    let mut scene_rng = stream_rng(seed, &[stream::SCENE]);
    let regions: Vec<Vec<f64>> = (0..3)
        .map(|_| (0..config.d_x).map(|_| scene_rng.random_range(-1.0..1.0)).collect())
        .collect();

    // Analytic gradients at the initialization point.
    let point = flatten(&model.store);
    {
        let mut g = Graph::new();
        let params = model.bind(&mut g);
        let mut rng = stream_rng(seed, &[stream::GUMBEL, 0, 0]);
        let pass = model.forward(&mut g, &params, &tree, &regions, Mode::Soft, Some(&mut rng))?;
        let loss = grounding_loss(&mut g, pass.root_scores(), 0)?;
        g.backward(loss)?;
        model.store.zero_grads();
        model.harvest_grads(&g, &params);
    }
    let analytic = flat_grads(&model.store);

    let mut worst = (0.0f64, 0usize);
    let mut probe = point.clone();
    for i in 0..point.len() {
        probe[i] = point[i] + FD_STEP;
        set_flat(&mut model.store, &probe);
        let plus = check_loss(&model, &tree, &regions, seed);
        probe[i] = point[i] - FD_STEP;
        set_flat(&mut model.store, &probe);
        let minus = check_loss(&model, &tree, &regions, seed);
        probe[i] = point[i];
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        let err = rel_error(analytic[i], numeric);
        if err > worst.0 {
            worst = (err, i);
        }
    }
    set_flat(&mut model.store, &point);

    let (worst_param, _) = locate(&model.store, worst.1);
    Ok(ModelCheckReport {
        max_rel_error: worst.0,
        worst_param,
        parameter_count: model.store.len(),
        scalar_count: point.len(),
    })
}


#[cfg(test)]
mod model_suite_tests {
    use super::*;

    #[test]
    fn whole_model_soft_gradients_match_finite_differences() {
        let report = model_suite(42, 1.0).unwrap();
        assert!(
            report.max_rel_error < MODEL_CHECK_TOLERANCE,
            "max relative error {} at {}",
            report.max_rel_error,
            report.worst_param
        );
        assert!(report.scalar_count > 1000, "suite must cover the full parameter set");
    }
}
