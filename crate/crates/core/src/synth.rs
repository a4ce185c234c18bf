//! Synthetic compositional grounding task.
//!
//! Scenes are sets of attributed regions (category, color, size,
//! position); expressions are generated dependency trees over those
//! attributes plus spatial relations, rejection-sampled until they
//! denote exactly one region under the set-semantics oracle. The oracle
//! is the ground truth the learned model is measured against.
//!
//! Geometric conventions: `left-of`/`right-of` compare x strictly,
//! `above`/`below` compare y strictly with larger y meaning higher,
//! `nearest-to` keeps the candidate closest to the object (the object
//! itself never competes).

use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::parse::{serialize_tokens, ParseTree, Token};
use crate::rng::{stream, stream_rng};
use crate::tensor::Real;

pub const SIZES: [&str; 2] = ["small", "large"];

/// (form, UPOS, deprel) of every relation word.
pub const RELATIONS: [(&str, &str, &str); 5] = [
    ("left-of", "ADP", "prep"),
    ("right-of", "ADP", "prep"),
    ("above", "ADP", "prep"),
    ("below", "ADP", "prep"),
    ("nearest-to", "VERB", "acl"),
];

/// Minimum pairwise distance between region centers.
pub const MIN_DISTANCE: f64 = 0.05;

const MAX_EXPRESSION_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub category: String,
    pub color: String,
    pub size: String,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub regions: Vec<Region>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Expression {
    pub tokens: Vec<Token>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub depth: usize,
    pub relations: usize,
    /// Per-example seed; feature noise derives from it.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthExample {
    pub scene: Scene,
    pub expression: Expression,
    pub target: usize,
    pub metadata: Metadata,
}

/// Positions are pinned to 9 significant decimal digits so generated
/// datasets serialize identically across runs and platforms.
pub fn quantize_position(v: f64) -> f64 {
    format!("{v:.8e}").parse().expect("formatted float parses")
}

/// K regions with independent attributes and positions kept at least
/// [`MIN_DISTANCE`] apart (single-point rejection).
pub fn gen_scene<R: Rng>(rng: &mut R, k: usize, config: &Config) -> Result<Scene> {
    if k < 2 {
        return Err(Error::Config(format!("a scene needs at least 2 regions, got {k}")));
    }
    let mut regions: Vec<Region> = Vec::with_capacity(k);
    for _ in 0..k {
        let category = config.categories[rng.random_range(0..config.categories.len())].clone();
        let color = config.colors[rng.random_range(0..config.colors.len())].clone();
        let size = SIZES[rng.random_range(0..SIZES.len())].to_string();
        let (mut x, mut y);
        let mut attempts = 0usize;
        loop {
            x = quantize_position(rng.random_range(0.0..1.0));
            y = quantize_position(rng.random_range(0.0..1.0));
            let ok = regions
                .iter()
                .all(|r| ((r.x - x).powi(2) + (r.y - y).powi(2)).sqrt() >= MIN_DISTANCE);
            if ok {
                break;
            }
            attempts += 1;
            if attempts > 100_000 {
                return Err(Error::Config(format!(
                    "cannot place {k} regions at separation {MIN_DISTANCE}"
                )));
            }
        }
        regions.push(Region { category, color, size, x, y });
    }
    Ok(Scene { regions })
}

/// Expression denotation under set semantics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resolution {
    Unique(usize),
    Ambiguous,
}

struct Lexicon<'a> {
    config: &'a Config,
}

impl Lexicon<'_> {
    fn is_category(&self, w: &str) -> bool {
        self.config.categories.iter().any(|c| c == w)
    }
    fn is_color(&self, w: &str) -> bool {
        self.config.colors.iter().any(|c| c == w)
    }
    fn is_size(&self, w: &str) -> bool {
        SIZES.contains(&w)
    }
    fn is_relation(&self, w: &str) -> bool {
        RELATIONS.iter().any(|(r, _, _)| *r == w)
    }
}

fn relation_holds(relation: &str, candidate: &Region, object: &Region) -> bool {
    match relation {
        "left-of" => candidate.x < object.x,
        "right-of" => candidate.x > object.x,
        "above" => candidate.y > object.y,
        "below" => candidate.y < object.y,
        _ => unreachable!("nearest-to is handled as an argmin, not a predicate"),
    }
}

fn distance(a: &Region, b: &Region) -> f64 {
    ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt()
}

/// Recursive set-semantics evaluation of an expression tree against a
/// scene: attribute modifiers intersect candidate sets, relation nodes
/// filter geometrically against their object's unique denotation.
/// Returns the unique survivor or [`Resolution::Ambiguous`].
pub fn oracle_resolve(tree: &ParseTree, scene: &Scene, config: &Config) -> Result<Resolution> {
    let lex = Lexicon { config };
    match denote(tree, tree.root(), scene, &lex)? {
        Some(set) if set.len() == 1 => Ok(Resolution::Unique(set[0])),
        _ => Ok(Resolution::Ambiguous),
    }
}

/// `None` propagates "a nested object was not unique".
fn denote(tree: &ParseTree, slot: usize, scene: &Scene, lex: &Lexicon) -> Result<Option<Vec<usize>>> {
    let noun = tree.node(slot);
    if !lex.is_category(&noun.form) {
        return Err(Error::Dataset(format!("unknown category word `{}`", noun.form)));
    }
    let mut candidates: Vec<usize> = (0..scene.regions.len())
        .filter(|&i| scene.regions[i].category == noun.form)
        .collect();

    // Attribute modifiers first, then relations in child order.
    for &child in tree.children(slot) {
        let token = tree.node(child);
        if token.upos == "ADJ" {
            if lex.is_color(&token.form) {
                candidates.retain(|&i| scene.regions[i].color == token.form);
            } else if lex.is_size(&token.form) {
                candidates.retain(|&i| scene.regions[i].size == token.form);
            } else {
                return Err(Error::Dataset(format!("unknown modifier word `{}`", token.form)));
            }
        }
    }
    for &child in tree.children(slot) {
        let token = tree.node(child);
        if token.upos == "ADJ" {
            continue;
        }
        if !lex.is_relation(&token.form) {
            return Err(Error::Dataset(format!("unknown relation word `{}`", token.form)));
        }
        let object_slots = tree.children(child);
        if object_slots.len() != 1 {
            return Err(Error::Dataset(format!(
                "relation `{}` must have exactly one object, got {}",
                token.form,
                object_slots.len()
            )));
        }
        let object = match denote(tree, object_slots[0], scene, lex)? {
            Some(set) if set.len() == 1 => set[0],
            _ => return Ok(None),
        };
        candidates.retain(|&i| i != object);
        if token.form == "nearest-to" {
            let nearest = candidates.iter().copied().min_by(|&a, &b| {
                let da = distance(&scene.regions[a], &scene.regions[object]);
                let db = distance(&scene.regions[b], &scene.regions[object]);
                da.partial_cmp(&db).unwrap().then(a.cmp(&b))
            });
            candidates = nearest.into_iter().collect();
        } else {
            candidates
                .retain(|&i| relation_holds(&token.form, &scene.regions[i], &scene.regions[object]));
        }
    }
    Ok(Some(candidates))
}

/// Accumulates tokens in surface order with correct head indices.
struct ExprBuilder {
    tokens: Vec<Token>,
}

impl ExprBuilder {
    /// Appends `[size?] [color?] noun`; returns the noun's token id.
    /// `head` is the relation the noun hangs from (`None` for the root).
    fn push_np(&mut self, region: &Region, with_color: bool, with_size: bool, head: Option<usize>) -> usize {
        let mods = usize::from(with_size) + usize::from(with_color);
        let noun_id = self.tokens.len() + mods + 1;
        if with_size {
            let id = self.tokens.len() + 1;
            self.tokens.push(Token::new(id, &region.size, "ADJ", noun_id, "amod"));
        }
        if with_color {
            let id = self.tokens.len() + 1;
            self.tokens.push(Token::new(id, &region.color, "ADJ", noun_id, "amod"));
        }
        match head {
            None => self.tokens.push(Token::new(noun_id, &region.category, "NOUN", 0, "root")),
            Some(h) => self.tokens.push(Token::new(noun_id, &region.category, "NOUN", h, "pobj")),
        }
        noun_id
    }

    /// Appends a relation token hanging from `head_noun`.
    fn push_relation(&mut self, relation: (&str, &str, &str), head_noun: usize) -> usize {
        let id = self.tokens.len() + 1;
        self.tokens.push(Token::new(id, relation.0, relation.1, head_noun, relation.2));
        id
    }
}

/// Relations that actually hold between `subject` and `object` in the
/// scene (used to bias sampling toward satisfiable expressions).
fn true_relations(scene: &Scene, subject: usize, object: usize) -> Vec<usize> {
    RELATIONS
        .iter()
        .enumerate()
        .filter(|(_, (name, _, _))| {
            if *name == "nearest-to" {
                let nearest = (0..scene.regions.len())
                    .filter(|&i| i != object)
                    .min_by(|&a, &b| {
                        let da = distance(&scene.regions[a], &scene.regions[object]);
                        let db = distance(&scene.regions[b], &scene.regions[object]);
                        da.partial_cmp(&db).unwrap().then(a.cmp(&b))
                    });
                nearest == Some(subject)
            } else {
                relation_holds(name, &scene.regions[subject], &scene.regions[object])
            }
        })
        .map(|(i, _)| i)
        .collect()
}

/// One attempt at an expression of exactly `depth` noun phrases chained
/// by `depth − 1` relations, targeting a random region.
fn try_expression<R: Rng>(rng: &mut R, scene: &Scene, depth: usize, config: &Config) -> Option<(Vec<Token>, usize)> {
    let k = scene.regions.len();
    let target = rng.random_range(0..k);
    let mut builder = ExprBuilder { tokens: Vec::new() };
    let mut noun_id =
        builder.push_np(&scene.regions[target], rng.random_bool(0.5), rng.random_bool(0.5), None);
    let mut subject = target;
    for _ in 1..depth {
        let object = {
            let pick = rng.random_range(0..k - 1);
            if pick >= subject {
                pick + 1
            } else {
                pick
            }
        };
        let holding = true_relations(scene, subject, object);
        if holding.is_empty() {
            return None;
        }
        let relation = RELATIONS[holding[rng.random_range(0..holding.len())]];
        let rel_id = builder.push_relation(relation, noun_id);
        noun_id = builder.push_np(
            &scene.regions[object],
            rng.random_bool(0.5),
            rng.random_bool(0.5),
            Some(rel_id),
        );
        subject = object;
    }
    let tree = ParseTree::build(builder.tokens.clone()).expect("generated trees are valid");
    match oracle_resolve(&tree, scene, config) {
        Ok(Resolution::Unique(idx)) if idx == target => Some((builder.tokens, target)),
        _ => None,
    }
}

/// Rejection-samples an expression over the scene until it denotes
/// exactly one region. `None` after 1000 attempts: regenerate the scene.
pub fn gen_expression<R: Rng>(
    rng: &mut R,
    scene: &Scene,
    max_depth: usize,
    config: &Config,
) -> Option<(Vec<Token>, usize, usize)> {
    for _ in 0..MAX_EXPRESSION_ATTEMPTS {
        let depth = rng.random_range(1..=max_depth);
        if let Some((tokens, target)) = try_expression(rng, scene, depth, config) {
            return Some((tokens, target, depth));
        }
    }
    None
}

/// Seed of example `index` within a dataset stream.
pub fn example_seed(dataset_seed: u64, index: u64) -> u64 {
    stream_rng(dataset_seed, &[stream::SCENE, index]).random()
}

/// One full example: scene plus resolving expression. Regenerates the
/// scene whenever expression sampling exhausts its attempts.
pub fn gen_example(dataset_seed: u64, index: u64, config: &Config) -> Result<SynthExample> {
    let seed = example_seed(dataset_seed, index);
    let mut rng = stream_rng(seed, &[stream::SCENE]);
    loop {
        let scene = gen_scene(&mut rng, config.regions, config)?;
        if let Some((tokens, target, depth)) = gen_expression(&mut rng, &scene, config.max_depth, config) {
            return Ok(SynthExample {
                scene,
                expression: Expression { tokens },
                target,
                metadata: Metadata { depth, relations: depth - 1, seed },
            });
        }
    }
}

/// Deterministic dataset: example `i` depends only on `(seed, i, config)`.
pub fn gen_dataset(seed: u64, count: usize, config: &Config) -> Result<Vec<SynthExample>> {
    (0..count).map(|i| gen_example(seed, i as u64, config)).collect()
}

/// Region feature layout: one-hot category, one-hot color, one-hot size,
/// then `(x, y)`, zero-padded to `d_x`, plus Gaussian noise everywhere.
pub fn featurize_region<F: Real, R: Rng>(
    region: &Region,
    d_x: usize,
    sigma: f64,
    rng: &mut R,
    config: &Config,
) -> Result<Vec<F>> {
    let c = config.categories.len();
    let l = config.colors.len();
    let base = c + l + SIZES.len() + 2;
    if d_x < base {
        return Err(Error::Config(format!(
            "d_x = {d_x} too small: features need at least {base} dimensions"
        )));
    }
    let mut out = vec![0.0f64; d_x];
    let cat = config
        .categories
        .iter()
        .position(|x| *x == region.category)
        .ok_or_else(|| Error::Dataset(format!("unknown category `{}`", region.category)))?;
    let col = config
        .colors
        .iter()
        .position(|x| *x == region.color)
        .ok_or_else(|| Error::Dataset(format!("unknown color `{}`", region.color)))?;
    let size = SIZES
        .iter()
        .position(|x| *x == region.size)
        .ok_or_else(|| Error::Dataset(format!("unknown size `{}`", region.size)))?;
    out[cat] = 1.0;
    out[c + col] = 1.0;
    out[c + l + size] = 1.0;
    out[c + l + SIZES.len()] = region.x;
    out[c + l + SIZES.len() + 1] = region.y;
    if sigma > 0.0 {
        for v in out.iter_mut() {
            let noise: f64 = rng.sample::<f64, _>(rand_distr::StandardNormal) * sigma;
            *v += noise;
        }
    }
    Ok(out.into_iter().map(F::from_f64).collect())
}

/// Deterministic features for a whole example, derived from its stored
/// metadata seed.
pub fn example_features<F: Real>(example: &SynthExample, config: &Config) -> Result<Vec<Vec<F>>> {
    let mut rng = stream_rng(example.metadata.seed, &[stream::FEATURES]);
    example
        .scene
        .regions
        .iter()
        .map(|r| featurize_region(r, config.d_x, config.noise_sigma, &mut rng, config))
        .collect()
}

// ── dataset IO ──────────────────────────────────────────────────────

pub fn write_jsonl(path: &Path, examples: &[SynthExample]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut out = BufWriter::new(file);
    for example in examples {
        serde_json::to_writer(&mut out, example)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<SynthExample>> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut examples = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let example: SynthExample = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno + 1,
            message: format!("bad dataset line: {e}"),
        })?;
        examples.push(example);
    }
    Ok(examples)
}

/// Cross-checks every stored target against the oracle and the tree
/// against the parser contract; flags the first offending example.
pub fn validate_examples(examples: &[SynthExample], config: &Config) -> Result<()> {
    for (i, example) in examples.iter().enumerate() {
        let tree = ParseTree::build(example.expression.tokens.clone())
            .map_err(|e| Error::Dataset(format!("example {i}: {e}")))?;
        if example.target >= example.scene.regions.len() {
            return Err(Error::Dataset(format!(
                "example {i}: target {} out of range",
                example.target
            )));
        }
        match oracle_resolve(&tree, &example.scene, config)? {
            Resolution::Unique(idx) if idx == example.target => {}
            Resolution::Unique(idx) => {
                return Err(Error::Dataset(format!(
                    "example {i}: oracle resolves to {idx}, dataset says {}",
                    example.target
                )));
            }
            Resolution::Ambiguous => {
                return Err(Error::Dataset(format!("example {i}: expression is ambiguous")));
            }
        }
    }
    Ok(())
}

/// All expressions in the CoNLL-U subset, blank-line separated.
pub fn export_conllu(examples: &[SynthExample]) -> String {
    examples.iter().map(|e| serialize_tokens(&e.expression.tokens)).collect()
}
