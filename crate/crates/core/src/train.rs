//! Training loop, Top-1 evaluation, and the module-assignment report.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::assembler::{Mode, ModuleKind};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::graph::{argmax, Graph};
use crate::model::{grounding_loss, Model};
use crate::parse::{ParseTree, Vocabulary};
use crate::rng::{stream, stream_rng};
use crate::synth::{example_features, SynthExample};
use crate::tensor::Real;

/// A training/eval item: pruned tree, region features, target index.
#[derive(Debug, Clone)]
pub struct PreparedExample<F: Real> {
    pub tree: ParseTree,
    pub features: Vec<Vec<F>>,
    pub target: usize,
    /// Position in the source dataset, for diagnostics.
    pub index: usize,
}

/// Builds trees (validated, pruned) and deterministic features for a
/// whole dataset.
pub fn prepare_dataset<F: Real>(
    examples: &[SynthExample],
    config: &Config,
) -> Result<Vec<PreparedExample<F>>> {
    let prune: HashSet<String> = config.prune_pos.iter().cloned().collect();
    examples
        .iter()
        .enumerate()
        .map(|(index, example)| {
            let tree = ParseTree::build(example.expression.tokens.clone())
                .map_err(|e| Error::Dataset(format!("example {index}: {e}")))?
                .prune(&prune);
            let features = example_features(example, config)?;
            if example.target >= features.len() {
                return Err(Error::Dataset(format!(
                    "example {index}: target {} out of range",
                    example.target
                )));
            }
            Ok(PreparedExample { tree, features, target: example.target, index })
        })
        .collect()
}

/// Vocabulary over the (already pruned) training trees.
pub fn build_vocab<F: Real>(prepared: &[PreparedExample<F>], min_count: usize) -> Vocabulary {
    let trees: Vec<ParseTree> = prepared.iter().map(|p| p.tree.clone()).collect();
    Vocabulary::build(&trees, min_count)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub mean_loss: f64,
    pub accuracy: f64,
}

/// One pass over the dataset: seeded shuffle, mini-batches, one
/// adaptive-moment step per batch on the mean per-example gradient.
pub fn train_epoch<F: Real>(
    model: &mut Model<F>,
    data: &[PreparedExample<F>],
    config: &Config,
    epoch: usize,
) -> Result<EpochStats> {
    if data.is_empty() {
        return Err(Error::EmptyInput { op: "train_epoch" });
    }
    let lr = F::from_f64(config.lr_at_epoch(epoch));
    let mut order: Vec<usize> = (0..data.len()).collect();
    {
        use rand::seq::SliceRandom;
        let mut rng = stream_rng(config.seed, &[stream::SHUFFLE, epoch as u64]);
        order.shuffle(&mut rng);
    }
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    for batch in order.chunks(config.batch_size) {
        let mut g = Graph::new();
        let params = model.bind(&mut g);
        let mut losses = Vec::with_capacity(batch.len());
        for &i in batch {
            let example = &data[i];
            let mut rng =
                stream_rng(config.seed, &[stream::GUMBEL, epoch as u64, example.index as u64]);
            let pass = model.forward(
                &mut g,
                &params,
                &example.tree,
                &example.features,
                Mode::Train,
                Some(&mut rng),
            )?;
            if argmax(g.value(pass.root_scores())) == example.target {
                correct += 1;
            }
            let loss = grounding_loss(&mut g, pass.root_scores(), example.target)?;
            let value = g.scalar(loss).to_f64_lossy();
            if !value.is_finite() {
                return Err(Error::NanLoss { example: example.index });
            }
            loss_sum += value;
            losses.push(loss);
        }
        let total = g.add_n(&losses)?;
        let batch_loss = g.scale(total, F::from_f64(1.0 / batch.len() as f64));
        g.backward(batch_loss)?;
        model.store.zero_grads();
        model.harvest_grads(&g, &params);
        model.store.adam_step(lr)?;
    }
    Ok(EpochStats { mean_loss: loss_sum / data.len() as f64, accuracy: correct as f64 / data.len() as f64 })
}

/// Counts of (single, sum, comp) assignments keyed by POS tag and by
/// dependency label over an evaluation run.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AssignmentReport {
    pub by_pos: BTreeMap<String, [usize; 3]>,
    pub by_dep: BTreeMap<String, [usize; 3]>,
}

fn kind_slot(kind: ModuleKind) -> usize {
    match kind {
        ModuleKind::Single => 0,
        ModuleKind::Sum => 1,
        ModuleKind::Comp => 2,
    }
}

impl AssignmentReport {
    fn record(&mut self, upos: &str, deprel: &str, kind: ModuleKind) {
        self.by_pos.entry(upos.to_string()).or_default()[kind_slot(kind)] += 1;
        self.by_dep.entry(deprel.to_string()).or_default()[kind_slot(kind)] += 1;
    }

    /// Fraction of decided (non-fixed) nodes with one of `pos_tags` that
    /// chose the relational module; `None` when no such node exists.
    pub fn comp_fraction(&self, pos_tags: &[&str]) -> Option<f64> {
        let mut comp = 0usize;
        let mut decided = 0usize;
        for tag in pos_tags {
            if let Some([_, sum, cmp]) = self.by_pos.get(*tag) {
                comp += cmp;
                decided += sum + cmp;
            }
        }
        (decided > 0).then(|| comp as f64 / decided as f64)
    }

    /// Human-readable table (single/sum/comp counts per label).
    pub fn render(&self) -> String {
        let mut out = String::from("module assignment frequencies\n");
        let section = |title: &str, map: &BTreeMap<String, [usize; 3]>, out: &mut String| {
            out.push_str(&format!("  by {title}:\n"));
            out.push_str(&format!("    {:<12} {:>8} {:>8} {:>8}\n", title, "single", "sum", "comp"));
            for (label, [single, sum, comp]) in map {
                out.push_str(&format!("    {label:<12} {single:>8} {sum:>8} {comp:>8}\n"));
            }
        };
        section("POS", &self.by_pos, &mut out);
        section("dep", &self.by_dep, &mut out);
        if let Some(fraction) = self.comp_fraction(&["ADP", "VERB"]) {
            out.push_str(&format!(
                "  fraction of ADP/VERB relation nodes assigned comp: {fraction:.3}\n"
            ));
        }
        out
    }
}

/// Top-1 accuracy in inference mode (no noise, ties take the lowest
/// region index), plus the assignment report.
pub fn evaluate_with_report<F: Real>(
    model: &Model<F>,
    data: &[PreparedExample<F>],
) -> Result<(f64, AssignmentReport)> {
    if data.is_empty() {
        return Err(Error::EmptyInput { op: "evaluate_top1" });
    }
    let mut report = AssignmentReport::default();
    let mut correct = 0usize;
    for example in data {
        let (predicted, kinds) = predict(model, example)?;
        if predicted == example.target {
            correct += 1;
        }
        for (slot, kind) in kinds.iter().enumerate() {
            let token = example.tree.node(slot);
            report.record(&token.upos, &token.deprel, *kind);
        }
    }
    Ok((correct as f64 / data.len() as f64, report))
}

pub fn evaluate_top1<F: Real>(model: &Model<F>, data: &[PreparedExample<F>]) -> Result<f64> {
    evaluate_with_report(model, data).map(|(acc, _)| acc)
}

fn predict<F: Real>(
    model: &Model<F>,
    example: &PreparedExample<F>,
) -> Result<(usize, Vec<ModuleKind>)> {
    let mut g = Graph::new();
    let params = model.bind(&mut g);
    let pass = model.forward::<rand_chacha::ChaCha8Rng>(
        &mut g,
        &params,
        &example.tree,
        &example.features,
        Mode::Infer,
        None,
    )?;
    Ok((argmax(g.value(pass.root_scores())), pass.assignment.kinds))
}

/// Read-only parallel evaluation over a fixed thread count.
pub fn evaluate_top1_parallel<F: Real>(
    model: &Model<F>,
    data: &[PreparedExample<F>],
    threads: usize,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyInput { op: "evaluate_top1" });
    }
    let threads = threads.max(1).min(data.len());
    if threads == 1 {
        return evaluate_top1(model, data);
    }
    let chunk = data.len().div_ceil(threads);
    let correct = std::thread::scope(|scope| -> Result<usize> {
        let mut handles = Vec::new();
        for part in data.chunks(chunk) {
            handles.push(scope.spawn(move || -> Result<usize> {
                let mut correct = 0usize;
                for example in part {
                    if predict(model, example)?.0 == example.target {
                        correct += 1;
                    }
                }
                Ok(correct)
            }));
        }
        let mut total = 0usize;
        for handle in handles {
            total += handle.join().expect("evaluation thread panicked")?;
        }
        Ok(total)
    })?;
    Ok(correct as f64 / data.len() as f64)
}

/// One line of the training log (line-delimited JSON). `epoch` is
/// 1-based in the log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_acc: f64,
    pub val_acc: Option<f64>,
    pub lr: f64,
}

/// Runs the configured number of epochs, reporting each epoch's log
/// record. With `early_stop`, training stops once validation accuracy
/// has not improved for `early_stop_patience` epochs (off by default).
pub fn train_model<F: Real>(
    model: &mut Model<F>,
    train_data: &[PreparedExample<F>],
    val_data: Option<&[PreparedExample<F>]>,
    config: &Config,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    let mut logs = Vec::with_capacity(config.epochs);
    let mut best_val = f64::NEG_INFINITY;
    let mut since_best = 0usize;
    for epoch in 0..config.epochs {
        let stats = train_epoch(model, train_data, config, epoch)?;
        let val_acc = match val_data {
            Some(val) => Some(evaluate_top1(model, val)?),
            None => None,
        };
        let log = EpochLog {
            epoch: epoch + 1,
            mean_loss: stats.mean_loss,
            train_acc: stats.accuracy,
            val_acc,
            lr: config.lr_at_epoch(epoch),
        };
        on_epoch(&log);
        logs.push(log);
        if config.early_stop {
            if let Some(acc) = val_acc {
                if acc > best_val {
                    best_val = acc;
                    since_best = 0;
                } else {
                    since_best += 1;
                    if since_best >= config.early_stop_patience {
                        break;
                    }
                }
            }
        }
    }
    Ok(logs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::gen_dataset;

    fn small_config() -> Config {
        let mut c = Config::default();
        c.d_x = 16;
        c.d_h = 8;
        c.embed_word = 8;
        c.embed_pos = 4;
        c.embed_dep = 4;
        c.attn_hidden = 4;
        c.min_count = 1;
        c.batch_size = 4;
        c.max_depth = 1;
        c.regions = 4;
        c.seed = 3;
        c
    }

    fn small_setup(n: usize) -> (Model<f64>, Vec<PreparedExample<f64>>, Config) {
        let config = small_config();
        let examples = gen_dataset(config.seed, n, &config).unwrap();
        let prepared = prepare_dataset::<f64>(&examples, &config).unwrap();
        let vocab = build_vocab(&prepared, config.min_count);
        let model = Model::new(&config, vocab).unwrap();
        (model, prepared, config)
    }

    #[test]
    fn zero_lr_step_keeps_parameters() {
        let (mut model, data, mut config) = small_setup(6);
        config.lr = 0.0;
        let before: Vec<(String, Vec<f64>)> = model
            .store
            .iter()
            .map(|(n, t)| (n.to_string(), t.data().to_vec()))
            .collect();
        let stats = train_epoch(&mut model, &data, &config, 0).unwrap();
        assert!(stats.mean_loss.is_finite());
        for (name, data_before) in before {
            assert_eq!(model.store.get(&name).unwrap().data(), data_before.as_slice(), "{name}");
        }
    }

    #[test]
    fn one_example_one_step() {
        let (mut model, data, config) = small_setup(1);
        train_epoch(&mut model, &data, &config, 0).unwrap();
        assert_eq!(model.store.optimizer_state("assembler.w").unwrap().step_count(), 1);
    }

    #[test]
    fn step_count_is_ceil_of_batches() {
        let (mut model, data, mut config) = small_setup(5);
        config.batch_size = 2;
        train_epoch(&mut model, &data, &config, 0).unwrap();
        // ⌈5/2⌉ = 3 optimizer steps.
        assert_eq!(model.store.optimizer_state("assembler.w").unwrap().step_count(), 3);
    }

    #[test]
    fn fixed_seed_reproduces_stats() {
        let (mut m1, data, config) = small_setup(8);
        let (mut m2, _, _) = small_setup(8);
        let s1 = train_epoch(&mut m1, &data, &config, 0).unwrap();
        let s2 = train_epoch(&mut m2, &data, &config, 0).unwrap();
        assert_eq!(s1, s2);
    }

    #[test]
    fn nan_parameter_aborts_with_example_id() {
        let (mut model, data, config) = small_setup(3);
        model.store.get_mut("score.single.outer_b").unwrap().data_mut()[0] = f64::NAN;
        match train_epoch(&mut model, &data, &config, 0) {
            Err(Error::NanLoss { .. }) => {}
            other => panic!("expected NaN-loss abort, got {other:?}"),
        }
    }

    #[test]
    fn loss_decreases_on_tiny_task() {
        let (mut model, data, mut config) = small_setup(40);
        config.lr = 5e-3;
        let first = train_epoch(&mut model, &data, &config, 0).unwrap();
        let mut last = first;
        for epoch in 1..6 {
            last = train_epoch(&mut model, &data, &config, epoch).unwrap();
        }
        assert!(
            last.mean_loss < first.mean_loss,
            "loss should fall: {} → {}",
            first.mean_loss,
            last.mean_loss
        );
    }

    #[test]
    fn evaluation_contract() {
        let (model, data, _) = small_setup(4);
        let empty: Vec<PreparedExample<f64>> = Vec::new();
        assert!(evaluate_top1(&model, &empty).is_err());

        // Repeated evaluation consumes no randomness.
        let a = evaluate_top1(&model, &data).unwrap();
        let b = evaluate_top1(&model, &data).unwrap();
        assert_eq!(a, b);
        assert!((0.0..=1.0).contains(&a));

        // Parallel evaluation agrees with sequential.
        let p = evaluate_top1_parallel(&model, &data, 3).unwrap();
        assert_eq!(a, p);
    }

    #[test]
    fn forced_targets_give_exact_accuracies() {
        let (model, mut data, _) = small_setup(2);
        // Pin targets to the model's own predictions → accuracy 1.0.
        for example in data.iter_mut() {
            let (predicted, _) = predict(&model, example).unwrap();
            example.target = predicted;
        }
        assert_eq!(evaluate_top1(&model, &data).unwrap(), 1.0);
        // Break one of two → 0.5.
        data[1].target = (data[1].target + 1) % data[1].features.len();
        assert_eq!(evaluate_top1(&model, &data).unwrap(), 0.5);
    }

    #[test]
    fn report_counts_modules_by_label() {
        let mut config = small_config();
        config.max_depth = 2;
        config.seed = 11;
        let examples = gen_dataset(config.seed, 12, &config).unwrap();
        let prepared = prepare_dataset::<f64>(&examples, &config).unwrap();
        let vocab = build_vocab(&prepared, config.min_count);
        let model = Model::new(&config, vocab).unwrap();
        let (_, report) = evaluate_with_report(&model, &prepared).unwrap();
        let nouns = report.by_pos.get("NOUN").map(|c| c[0]).unwrap_or(0);
        assert!(nouns > 0, "nouns are always scoring nodes");
        let table = report.render();
        assert!(table.contains("NOUN"));
        if let Some(f) = report.comp_fraction(&["ADP", "VERB"]) {
            assert!((0.0..=1.0).contains(&f));
        }
    }

    #[test]
    fn train_model_logs_every_epoch() {
        let (mut model, data, mut config) = small_setup(6);
        config.epochs = 3;
        let mut seen = 0;
        let logs = train_model(&mut model, &data, Some(&data), &config, |_| seen += 1).unwrap();
        assert_eq!(logs.len(), 3);
        assert_eq!(seen, 3);
        assert_eq!(logs[0].epoch, 1);
        assert!(logs.iter().all(|l| l.val_acc.is_some()));
        assert!((logs[0].lr - config.lr).abs() < 1e-15);
    }
}
