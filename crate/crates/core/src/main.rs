//! Command-line interface: dataset generation, training, evaluation,
//! per-example grounding dumps, and gradient checking.
//!
//! Machine-readable output goes to stdout as JSON; human summaries go to
//! stderr. Exit codes: 0 success, 1 runtime failure, 2 usage error.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use treeground::assembler::Mode;
use treeground::checkpoint;
use treeground::config::{Config, Precision};
use treeground::error::{Error, Result};
use treeground::gradcheck::{model_suite, MODEL_CHECK_TOLERANCE};
use treeground::graph::Graph;
use treeground::model::{ground_dump, Model};
use treeground::synth;
use treeground::tensor::Real;
use treeground::train::{
    build_vocab, evaluate_top1_parallel, evaluate_with_report, prepare_dataset, train_model,
    PreparedExample,
};

#[derive(Parser)]
#[command(
    name = "treeground",
    version,
    about = "Tree-structured modular grounding over dependency parses"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Config file plus per-key override flags (same names as the JSON keys).
#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// JSON config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long = "lr_decay")]
    lr_decay: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long = "batch_size")]
    batch_size: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// f32 or f64.
    #[arg(long)]
    precision: Option<String>,
    #[arg(long = "early_stop")]
    early_stop: Option<bool>,
    #[arg(long = "early_stop_patience")]
    early_stop_patience: Option<usize>,
    #[arg(long = "d_x")]
    d_x: Option<usize>,
    #[arg(long = "d_h")]
    d_h: Option<usize>,
    #[arg(long = "embed_word")]
    embed_word: Option<usize>,
    #[arg(long = "embed_pos")]
    embed_pos: Option<usize>,
    #[arg(long = "embed_dep")]
    embed_dep: Option<usize>,
    #[arg(long = "attn_hidden")]
    attn_hidden: Option<usize>,
    #[arg(long = "min_count")]
    min_count: Option<usize>,
    #[arg(long = "prune_pos", value_delimiter = ',')]
    prune_pos: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    categories: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    colors: Option<Vec<String>>,
    #[arg(long)]
    regions: Option<usize>,
    #[arg(long = "max_depth")]
    max_depth: Option<usize>,
    #[arg(long = "noise_sigma")]
    noise_sigma: Option<f64>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    val: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<Config> {
        let mut config = match &self.config {
            Some(path) => Config::load(path)?,
            None => Config::default(),
        };
        macro_rules! apply {
            ($($field:ident),*) => {
                $(if let Some(v) = &self.$field { config.$field = v.clone(); })*
            };
        }
        apply!(
            lr, lr_decay, epochs, batch_size, tau, seed, early_stop, early_stop_patience, d_x,
            d_h, embed_word, embed_pos, embed_dep, attn_hidden, min_count, prune_pos, categories,
            colors, regions, max_depth, noise_sigma
        );
        if let Some(p) = &self.precision {
            config.precision = match p.as_str() {
                "f32" => Precision::F32,
                "f64" => Precision::F64,
                other => return Err(Error::Config(format!("precision must be f32 or f64, got {other}"))),
            };
        }
        for (flag, slot) in [(&self.data, &mut config.data), (&self.val, &mut config.val), (&self.out, &mut config.out)] {
            if let Some(path) = flag {
                *slot = Some(path.to_string_lossy().into_owned());
            }
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic grounding dataset (JSON lines).
    Synth {
        #[command(flatten)]
        config: ConfigArgs,
        /// Number of examples.
        #[arg(long, default_value_t = 1000)]
        num: usize,
    },
    /// Train a model and write a checkpoint plus a JSON-lines log.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Log path; defaults to `<out>.log.jsonl`.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Evaluate a checkpoint: prints {"top1": r} and an assignment table.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Read-only parallel evaluation threads.
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// Per-node explainability dump for one example.
    Ground {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// 0-based example index.
        #[arg(long, default_value_t = 0)]
        index: usize,
    },
    /// Finite-difference gradient check; exit 0 iff max relative error < 1e-3.
    Gradcheck {
        #[command(flatten)]
        config: ConfigArgs,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        // Clap exits 2 on usage errors and 0 for --help/--version.
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn usage_error(message: &str) -> ExitCode {
    eprintln!("usage error: {message}");
    ExitCode::from(2)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Synth { config, num } => {
            let resolved = config.resolve()?;
            let Some(out) = resolved.out.clone() else {
                return Ok(usage_error("synth requires --out (or `out` in the config)"));
            };
            let examples = synth::gen_dataset(resolved.seed, num, &resolved)?;
            synth::validate_examples(&examples, &resolved)?;
            synth::write_jsonl(Path::new(&out), &examples)?;
            eprintln!("wrote {} examples to {}", examples.len(), out);
            println!("{}", serde_json::json!({ "count": examples.len() }));
            Ok(ExitCode::SUCCESS)
        }
        Command::Train { config, log } => {
            let resolved = config.resolve()?;
            let Some(data) = resolved.data.clone() else {
                return Ok(usage_error("train requires --data (or `data` in the config)"));
            };
            let Some(out) = resolved.out.clone() else {
                return Ok(usage_error("train requires --out (or `out` in the config)"));
            };
            let log_path = log.unwrap_or_else(|| PathBuf::from(format!("{out}.log.jsonl")));
            match resolved.precision {
                Precision::F64 => run_train::<f64>(&resolved, &data, Path::new(&out), &log_path),
                Precision::F32 => run_train::<f32>(&resolved, &data, Path::new(&out), &log_path),
            }?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval { ckpt, data, threads } => {
            match checkpoint::stored_dtype(&ckpt)?.as_str() {
                "f32" => run_eval::<f32>(&ckpt, &data, threads),
                _ => run_eval::<f64>(&ckpt, &data, threads),
            }?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Ground { ckpt, data, index } => {
            match checkpoint::stored_dtype(&ckpt)?.as_str() {
                "f32" => run_ground::<f32>(&ckpt, &data, index),
                _ => run_ground::<f64>(&ckpt, &data, index),
            }?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Gradcheck { config } => {
            let resolved = config.resolve()?;
            let report = model_suite(resolved.seed, resolved.tau)?;
            eprintln!(
                "checked {} parameters ({} scalars); worst: {}",
                report.parameter_count, report.scalar_count, report.worst_param
            );
            println!(
                "{}",
                serde_json::json!({
                    "max_rel_error": report.max_rel_error,
                    "worst_param": report.worst_param,
                    "tolerance": MODEL_CHECK_TOLERANCE,
                })
            );
            if report.max_rel_error < MODEL_CHECK_TOLERANCE {
                Ok(ExitCode::SUCCESS)
            } else {
                Ok(ExitCode::from(1))
            }
        }
    }
}

fn load_prepared<F: Real>(path: &Path, config: &Config) -> Result<Vec<PreparedExample<F>>> {
    let examples = synth::read_jsonl(path)?;
    prepare_dataset(&examples, config)
}

fn run_train<F: Real>(config: &Config, data: &str, out: &Path, log_path: &Path) -> Result<()> {
    let train_data = load_prepared::<F>(Path::new(data), config)?;
    let val_data = match &config.val {
        Some(path) => Some(load_prepared::<F>(Path::new(path), config)?),
        None => None,
    };
    let vocab = build_vocab(&train_data, config.min_count);
    let mut model: Model<F> = Model::new(config, vocab)?;
    let log_file = std::fs::File::create(log_path)?;
    let mut log_out = std::io::BufWriter::new(log_file);
    let logs = train_model(&mut model, &train_data, val_data.as_deref(), config, |entry| {
        let line = serde_json::to_string(entry).expect("log entries serialize");
        writeln!(log_out, "{line}").expect("log file writable");
        match entry.val_acc {
            Some(val) => eprintln!(
                "epoch {:>3}  loss {:.4}  train_acc {:.3}  val_acc {:.3}  lr {:.2e}",
                entry.epoch, entry.mean_loss, entry.train_acc, val, entry.lr
            ),
            None => eprintln!(
                "epoch {:>3}  loss {:.4}  train_acc {:.3}  lr {:.2e}",
                entry.epoch, entry.mean_loss, entry.train_acc, entry.lr
            ),
        }
    })?;
    log_out.flush()?;
    checkpoint::save(out, &model, config, logs.len())?;
    eprintln!("checkpoint written to {}", out.display());
    let last = logs.last();
    println!(
        "{}",
        serde_json::json!({
            "epochs_run": logs.len(),
            "final_loss": last.map(|l| l.mean_loss),
            "final_train_acc": last.map(|l| l.train_acc),
            "final_val_acc": last.and_then(|l| l.val_acc),
            "checkpoint": out.to_string_lossy(),
        })
    );
    Ok(())
}

fn run_eval<F: Real>(ckpt: &Path, data: &Path, threads: usize) -> Result<()> {
    let (model, config, _) = checkpoint::load::<F>(ckpt)?;
    let prepared = load_prepared::<F>(data, &config)?;
    let (top1, report) = evaluate_with_report(&model, &prepared)?;
    if threads > 1 {
        // Sanity: parallel evaluation must agree exactly.
        let parallel = evaluate_top1_parallel(&model, &prepared, threads)?;
        debug_assert_eq!(parallel, top1);
    }
    eprint!("{}", report.render());
    println!("{}", serde_json::json!({ "top1": top1 }));
    Ok(())
}

fn run_ground<F: Real>(ckpt: &Path, data: &Path, index: usize) -> Result<()> {
    let (model, config, _) = checkpoint::load::<F>(ckpt)?;
    let examples = synth::read_jsonl(data)?;
    let prepared = prepare_dataset::<F>(&examples, &config)?;
    let example = prepared
        .get(index)
        .ok_or_else(|| Error::Dataset(format!("index {index} out of range ({} examples)", prepared.len())))?;
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
    let dump = ground_dump(&g, &example.tree, &pass, index, Some(example.target));
    println!("{}", serde_json::to_string_pretty(&dump)?);
    Ok(())
}
