//! The full grounding model: parameter registration, the end-to-end
//! forward pass (embed → encode → assemble → ground), the training
//! loss, and explainability dumps.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::assembler::{assign_modules, Mode, ModuleAssignment};
use crate::config::Config;
use crate::encoder::{embed_node, encode_tree, node_context, Direction, TreeLstmCell};
use crate::error::{Error, Result};
use crate::graph::{argmax, Graph, Var};
use crate::grounding::{ground_tree, AttentionHead, GroundOutput, GroundingVars, ScoreHead};
use crate::optim::{init_bias, init_embedding, init_matrix, ParameterStore};
use crate::parse::{ParseTree, Vocabulary};
use crate::rng::{stream, stream_rng};
use crate::tensor::Real;

/// Layer dimensions, fixed at model construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub d_x: usize,
    pub d_h: usize,
    pub embed_word: usize,
    pub embed_pos: usize,
    pub embed_dep: usize,
    pub attn_hidden: usize,
}

impl Dims {
    pub fn from_config(config: &Config) -> Self {
        Dims {
            d_x: config.d_x,
            d_h: config.d_h,
            embed_word: config.embed_word,
            embed_pos: config.embed_pos,
            embed_dep: config.embed_dep,
            attn_hidden: config.attn_hidden,
        }
    }

    pub fn embed_total(&self) -> usize {
        self.embed_word + self.embed_pos + self.embed_dep
    }

    /// Width of `h_t = [h↑; h↓]`.
    pub fn context(&self) -> usize {
        2 * self.d_h
    }
}

#[derive(Debug, Clone)]
pub struct Model<F: Real> {
    pub dims: Dims,
    pub vocab: Vocabulary,
    pub store: ParameterStore<F>,
    pub tau: f64,
}

const DIRECTIONS: [&str; 2] = ["up", "down"];
const GATES: [&str; 4] = ["input", "output", "cand", "forget"];

/// How one parameter is shaped and initialized.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParamSpec {
    /// Uniform ±1/√fan_in.
    Matrix { rows: usize, cols: usize },
    /// Zeros.
    Bias { len: usize },
    /// Uniform ±0.1.
    Embedding { rows: usize, cols: usize },
}

impl ParamSpec {
    pub fn shape(&self) -> Vec<usize> {
        match *self {
            ParamSpec::Matrix { rows, cols } | ParamSpec::Embedding { rows, cols } => vec![rows, cols],
            ParamSpec::Bias { len } => vec![len],
        }
    }
}

/// Every parameter the model owns, in registration (and thus rng
/// consumption) order. Checkpoint loading validates against this.
pub fn parameter_specs(dims: &Dims, vocab: &Vocabulary) -> Vec<(String, ParamSpec)> {
    let e = dims.embed_total();
    let mut specs: Vec<(String, ParamSpec)> = vec![
        ("embed.word".into(), ParamSpec::Embedding { rows: vocab.word_count(), cols: dims.embed_word }),
        ("embed.pos".into(), ParamSpec::Embedding { rows: vocab.pos_count(), cols: dims.embed_pos }),
        ("embed.dep".into(), ParamSpec::Embedding { rows: vocab.dep_count(), cols: dims.embed_dep }),
    ];
    for dir in DIRECTIONS {
        for gate in GATES {
            specs.push((format!("lstm.{dir}.w_{gate}"), ParamSpec::Matrix { rows: dims.d_h, cols: e }));
            specs.push((format!("lstm.{dir}.u_{gate}"), ParamSpec::Matrix { rows: dims.d_h, cols: dims.d_h }));
            specs.push((format!("lstm.{dir}.b_{gate}"), ParamSpec::Bias { len: dims.d_h }));
        }
    }
    specs.push(("assembler.w".into(), ParamSpec::Matrix { rows: 2, cols: e + dims.context() }));
    specs.push(("assembler.b".into(), ParamSpec::Bias { len: 2 }));
    for head in ["s", "p"] {
        specs.push((format!("attn.{head}.hidden_w"), ParamSpec::Matrix { rows: dims.attn_hidden, cols: dims.context() }));
        specs.push((format!("attn.{head}.hidden_b"), ParamSpec::Bias { len: dims.attn_hidden }));
        specs.push((format!("attn.{head}.out_w"), ParamSpec::Matrix { rows: 1, cols: dims.attn_hidden }));
        specs.push((format!("attn.{head}.out_b"), ParamSpec::Bias { len: 1 }));
    }
    for (name, in_dim) in [("single", dims.d_x), ("pair", 2 * dims.d_x)] {
        specs.push((format!("score.{name}.inner_w"), ParamSpec::Matrix { rows: e, cols: in_dim }));
        specs.push((format!("score.{name}.inner_b"), ParamSpec::Bias { len: e }));
        specs.push((format!("score.{name}.outer_w"), ParamSpec::Matrix { rows: 1, cols: e }));
        specs.push((format!("score.{name}.outer_b"), ParamSpec::Bias { len: 1 }));
    }
    specs
}

impl<F: Real> Model<F> {
    /// Fresh model with seeded initialization.
    pub fn new(config: &Config, vocab: Vocabulary) -> Result<Self> {
        let dims = Dims::from_config(config);
        let mut rng = stream_rng(config.seed, &[stream::INIT]);
        let mut store = ParameterStore::new();
        for (name, spec) in parameter_specs(&dims, &vocab) {
            let tensor = match spec {
                ParamSpec::Matrix { rows, cols } => init_matrix(&mut rng, rows, cols),
                ParamSpec::Bias { len } => init_bias(len),
                ParamSpec::Embedding { rows, cols } => init_embedding(&mut rng, rows, cols),
            };
            store.insert(&name, tensor)?;
        }
        Ok(Model { dims, vocab, store, tau: config.tau })
    }

    /// Reassembles a model from checkpointed parts.
    pub fn from_parts(dims: Dims, vocab: Vocabulary, store: ParameterStore<F>, tau: f64) -> Self {
        Model { dims, vocab, store, tau }
    }

    /// Copies every parameter onto a graph as differentiable leaves.
    pub fn bind(&self, g: &mut Graph<F>) -> BoundParams {
        let mut all = Vec::with_capacity(self.store.len());
        let mut leaf = |name: &str| -> Var {
            let t = self.store.get(name).expect("registered parameter");
            let v = g.leaf(t.shape().to_vec(), t.data().to_vec());
            all.push((name.to_string(), v));
            v
        };
        let tables = (leaf("embed.word"), leaf("embed.pos"), leaf("embed.dep"));
        let mut cells = Vec::new();
        for dir in DIRECTIONS {
            cells.push(TreeLstmCell {
                w_input: leaf(&format!("lstm.{dir}.w_input")),
                u_input: leaf(&format!("lstm.{dir}.u_input")),
                b_input: leaf(&format!("lstm.{dir}.b_input")),
                w_output: leaf(&format!("lstm.{dir}.w_output")),
                u_output: leaf(&format!("lstm.{dir}.u_output")),
                b_output: leaf(&format!("lstm.{dir}.b_output")),
                w_cand: leaf(&format!("lstm.{dir}.w_cand")),
                u_cand: leaf(&format!("lstm.{dir}.u_cand")),
                b_cand: leaf(&format!("lstm.{dir}.b_cand")),
                w_forget: leaf(&format!("lstm.{dir}.w_forget")),
                u_forget: leaf(&format!("lstm.{dir}.u_forget")),
                b_forget: leaf(&format!("lstm.{dir}.b_forget")),
                d_h: self.dims.d_h,
            });
        }
        let lstm_down = cells.pop().expect("two directions");
        let lstm_up = cells.pop().expect("two directions");
        let assembler_w = leaf("assembler.w");
        let assembler_b = leaf("assembler.b");
        let mut heads = Vec::new();
        for head in ["s", "p"] {
            heads.push(AttentionHead {
                hidden_w: leaf(&format!("attn.{head}.hidden_w")),
                hidden_b: leaf(&format!("attn.{head}.hidden_b")),
                out_w: leaf(&format!("attn.{head}.out_w")),
                out_b: leaf(&format!("attn.{head}.out_b")),
            });
        }
        let attn_p = heads.pop().expect("two heads");
        let attn_s = heads.pop().expect("two heads");
        let grounding = GroundingVars {
            attn_s,
            attn_p,
            single: ScoreHead {
                inner_w: leaf("score.single.inner_w"),
                inner_b: leaf("score.single.inner_b"),
                outer_w: leaf("score.single.outer_w"),
                outer_b: leaf("score.single.outer_b"),
            },
            pair: ScoreHead {
                inner_w: leaf("score.pair.inner_w"),
                inner_b: leaf("score.pair.inner_b"),
                outer_w: leaf("score.pair.outer_w"),
                outer_b: leaf("score.pair.outer_b"),
            },
        };
        BoundParams { tables, lstm_up, lstm_down, assembler_w, assembler_b, grounding, all }
    }

    /// Runs the whole pipeline for one example on an existing graph.
    pub fn forward<R: Rng>(
        &self,
        g: &mut Graph<F>,
        params: &BoundParams,
        tree: &ParseTree,
        region_features: &[Vec<F>],
        mode: Mode,
        mut rng: Option<&mut R>,
    ) -> Result<ForwardPass> {
        if region_features.is_empty() {
            return Err(Error::EmptyInput { op: "forward (no regions)" });
        }
        let mut embeddings = Vec::with_capacity(tree.len());
        for token in tree.nodes() {
            let ids = self.vocab.encode(token);
            embeddings.push(embed_node(g, params.tables, ids)?);
        }
        let up = encode_tree(g, &params.lstm_up, tree, &embeddings, Direction::BottomUp)?;
        let down = encode_tree(g, &params.lstm_down, tree, &embeddings, Direction::TopDown)?;
        let contexts: Vec<Var> = up
            .iter()
            .zip(&down)
            .map(|((_, h_up), (_, h_down))| node_context(g, *h_up, *h_down))
            .collect::<Result<_>>()?;
        let assignment = assign_modules(
            g,
            tree,
            &embeddings,
            &contexts,
            params.assembler_w,
            params.assembler_b,
            self.tau,
            &mut rng,
            mode,
        )?;
        let regions: Vec<Var> = region_features
            .iter()
            .map(|x| g.constant_vector(x.clone()))
            .collect();
        let ground = ground_tree(
            g,
            tree,
            &embeddings,
            &contexts,
            &regions,
            &params.grounding,
            &assignment,
            mode,
        )?;
        Ok(ForwardPass { assignment, ground, embeddings, contexts })
    }

    /// Adds every graph gradient into the store's parameter gradients.
    pub fn harvest_grads(&mut self, g: &Graph<F>, params: &BoundParams) {
        for (name, var) in &params.all {
            if let Some(grad) = g.grad(*var) {
                self.store
                    .get_mut(name)
                    .expect("bound parameters exist in the store")
                    .accumulate_grad(grad);
            }
        }
    }
}

/// Per-parameter graph leaves for one forward/backward cycle.
pub struct BoundParams {
    pub tables: (Var, Var, Var),
    pub lstm_up: TreeLstmCell,
    pub lstm_down: TreeLstmCell,
    pub assembler_w: Var,
    pub assembler_b: Var,
    pub grounding: GroundingVars,
    pub all: Vec<(String, Var)>,
}

pub struct ForwardPass {
    pub assignment: ModuleAssignment,
    pub ground: GroundOutput,
    pub embeddings: Vec<Var>,
    pub contexts: Vec<Var>,
}

impl ForwardPass {
    pub fn root_scores(&self) -> Var {
        self.ground.root_scores
    }
}

/// Cross-entropy over the K regions: `−log softmax(scores)[target]`.
pub fn grounding_loss<F: Real>(g: &mut Graph<F>, root_scores: Var, target: usize) -> Result<Var> {
    let k = g.value(root_scores).len();
    if target >= k {
        return Err(Error::Dataset(format!("target index {target} out of range for {k} regions")));
    }
    let log_probs = g.log_softmax(root_scores)?;
    let picked = g.pick(log_probs, target)?;
    Ok(g.scale(picked, F::from_f64(-1.0)))
}

// ── explainability dump ─────────────────────────────────────────────

#[derive(Debug, Serialize, Deserialize)]
pub struct NodeDump {
    pub id: usize,
    pub form: String,
    pub upos: String,
    pub deprel: String,
    pub head: usize,
    pub module: String,
    /// Token ids of the node set the attentions range over.
    pub attention_nodes: Vec<usize>,
    pub alpha_s: Option<Vec<f64>>,
    pub alpha_p: Option<Vec<f64>>,
    pub beta: Option<Vec<f64>>,
    pub scores: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GroundDump {
    pub example_index: usize,
    pub predicted: usize,
    pub target: Option<usize>,
    pub root_scores: Vec<f64>,
    pub nodes: Vec<NodeDump>,
}

/// Collects per-node values out of a finished forward pass.
pub fn ground_dump<F: Real>(
    g: &Graph<F>,
    tree: &ParseTree,
    pass: &ForwardPass,
    example_index: usize,
    target: Option<usize>,
) -> GroundDump {
    let values = |v: Var| -> Vec<f64> { g.value(v).iter().map(|x| x.to_f64_lossy()).collect() };
    let nodes = (0..tree.len())
        .map(|slot| {
            let token = tree.node(slot);
            let trace = &pass.ground.nodes[slot];
            NodeDump {
                id: token.id,
                form: token.form.clone(),
                upos: token.upos.clone(),
                deprel: token.deprel.clone(),
                head: token.head,
                module: pass.assignment.kinds[slot].name().to_string(),
                attention_nodes: trace.subtree.iter().map(|&s| tree.node(s).id).collect(),
                alpha_s: trace.alpha_s.map(&values),
                alpha_p: trace.alpha_p.map(&values),
                beta: trace.beta.map(&values),
                scores: values(trace.scores),
            }
        })
        .collect();
    let root_scores = values(pass.root_scores());
    GroundDump {
        example_index,
        predicted: argmax(g.value(pass.root_scores())),
        target,
        root_scores,
        nodes,
    }
}
