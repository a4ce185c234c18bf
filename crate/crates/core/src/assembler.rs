//! Per-node module selection.
//!
//! Leaves and the root always get the scoring module; every other node
//! chooses between the additive and the relational module from a 2-way
//! linear head over `[e_t, h_t]`. Training samples the choice with
//! Gumbel noise on the log-probabilities (hard forward, soft backward
//! through the temperature softmax); inference drops the noise and takes
//! the argmax.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{argmax, Graph, Var};
use crate::parse::ParseTree;
use crate::tensor::Real;

/// Which computation a node runs during grounding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModuleKind {
    Single,
    Sum,
    Comp,
}

impl ModuleKind {
    pub fn name(self) -> &'static str {
        match self {
            ModuleKind::Single => "single",
            ModuleKind::Sum => "sum",
            ModuleKind::Comp => "comp",
        }
    }
}

/// Decision index 0 selects `Sum`, index 1 selects `Comp`.
pub const SUM_INDEX: usize = 0;
pub const COMP_INDEX: usize = 1;

/// Forward/backward regime for one pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Sampled hard selection, straight-through gradients.
    Train,
    /// Sampled soft mixture; fully differentiable (gradient checking).
    Soft,
    /// Deterministic argmax, no noise, only the selected branch runs.
    Infer,
}

impl Mode {
    pub fn samples_noise(self) -> bool {
        matches!(self, Mode::Train | Mode::Soft)
    }
}

/// One recorded assembler decision.
#[derive(Debug, Clone)]
pub struct Decision {
    /// Raw 2-way scores from the linear head.
    pub logits: Var,
    /// `log_softmax(logits)`.
    pub log_probs: Var,
    /// Gumbel draws added to the log-probabilities (zeros at inference).
    pub gumbel: [f64; 2],
    /// Hard one-hot choice.
    pub hard: usize,
    /// Relaxed weights `softmax((log_probs + G)/τ)`; `None` at inference
    /// where the relaxation collapses onto the one-hot choice.
    pub soft: Option<Var>,
}

impl Decision {
    pub fn one_hot(&self) -> [f64; 2] {
        let mut z = [0.0; 2];
        z[self.hard] = 1.0;
        z
    }
}

/// Modules chosen for every slot of a tree, with the sampled decisions
/// kept for the backward pass and for explainability dumps.
#[derive(Debug, Clone)]
pub struct ModuleAssignment {
    pub kinds: Vec<ModuleKind>,
    pub decisions: Vec<Option<Decision>>,
}

impl ModuleAssignment {
    pub fn sampled_count(&self) -> usize {
        self.decisions.iter().filter(|d| d.is_some()).count()
    }
}

/// Standard-Gumbel sample via `−log(−log U)` with `U` clamped away from
/// the endpoints.
pub fn gumbel_from_uniform(u: f64) -> f64 {
    let u = u.clamp(1e-10, 1.0 - 1e-10);
    -(-u.ln()).ln()
}

pub fn sample_gumbel<R: Rng>(rng: &mut R) -> f64 {
    gumbel_from_uniform(rng.random::<f64>())
}

/// The 2-way head: `fc([e_t, h_t])`.
pub fn assembler_logits<F: Real>(
    g: &mut Graph<F>,
    weight: Var,
    bias: Var,
    e_t: Var,
    h_t: Var,
) -> Result<Var> {
    let joint = g.concat(&[e_t, h_t])?;
    g.linear(joint, weight, bias)
}

/// Turns raw logits into a decision. Training adds the provided Gumbel
/// pair to `log_softmax(logits)`, takes the hard argmax, and keeps the
/// temperature-softmax relaxation for the backward pass; inference takes
/// the noiseless argmax.
pub fn gumbel_decision<F: Real>(
    g: &mut Graph<F>,
    logits: Var,
    gumbel: [f64; 2],
    tau: f64,
    mode: Mode,
) -> Result<Decision> {
    if !(tau > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }
    let log_probs = g.log_softmax(logits)?;
    if mode.samples_noise() {
        let noise = g.constant_vector(vec![F::from_f64(gumbel[0]), F::from_f64(gumbel[1])]);
        let perturbed = g.add(log_probs, noise)?;
        let hard = argmax(g.value(perturbed));
        let scaled = g.scale(perturbed, F::from_f64(1.0 / tau));
        let soft = g.softmax(scaled)?;
        Ok(Decision { logits, log_probs, gumbel, hard, soft: Some(soft) })
    } else {
        let hard = argmax(g.value(log_probs));
        Ok(Decision { logits, log_probs, gumbel: [0.0, 0.0], hard, soft: None })
    }
}

/// Assigns a module to every slot: `Single` at leaves and the root,
/// a sampled `Sum`/`Comp` decision everywhere else.
pub fn assign_modules<F: Real, R: Rng>(
    g: &mut Graph<F>,
    tree: &ParseTree,
    embeddings: &[Var],
    contexts: &[Var],
    assembler_weight: Var,
    assembler_bias: Var,
    tau: f64,
    rng: &mut Option<&mut R>,
    mode: Mode,
) -> Result<ModuleAssignment> {
    let mut kinds = vec![ModuleKind::Single; tree.len()];
    let mut decisions: Vec<Option<Decision>> = vec![None; tree.len()];
    for slot in 0..tree.len() {
        if slot == tree.root() || tree.is_leaf(slot) {
            continue;
        }
        let logits =
            assembler_logits(g, assembler_weight, assembler_bias, embeddings[slot], contexts[slot])?;
        let gumbel = if mode.samples_noise() {
            let rng = rng
                .as_mut()
                .ok_or_else(|| Error::Config("sampling mode requires an rng".into()))?;
            [sample_gumbel(rng), sample_gumbel(rng)]
        } else {
            [0.0, 0.0]
        };
        let decision = gumbel_decision(g, logits, gumbel, tau, mode)?;
        kinds[slot] = if decision.hard == SUM_INDEX { ModuleKind::Sum } else { ModuleKind::Comp };
        decisions[slot] = Some(decision);
    }
    Ok(ModuleAssignment { kinds, decisions })
}
