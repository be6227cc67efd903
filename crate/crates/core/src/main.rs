use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use relmod::data::{generate_synthetic, load_dataset, write_jsonl, Example, SyntheticConfig};
use relmod::harness::gradcheck::DEFAULT_STEP;
use relmod::harness::load_data;
use relmod::harness::{
    ablate, evaluate_full, gradcheck, inspect, mean_metrics, render_table, sweep_tau, train, Checkpoint, Metrics,
    RunConfig, DEFAULT_TOP_K,
};
use relmod::{Error, Result};

#[derive(Parser)]
#[command(
    name = "relmod",
    version,
    about = "Relation-module reader: data, training, evaluation and diagnostics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic train and dev sets as JSON lines.
    GenData {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        dev_out: Option<PathBuf>,
    },
    /// Train one model per seed and save the best-dev checkpoints.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Checkpoint path; with several seeds `-seed<N>` is inserted before the extension.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
    /// Score a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Defaults to the threshold stored in the checkpoint.
        #[arg(long, allow_hyphen_values = true)]
        tau: Option<f64>,
        /// Also report metrics at every threshold where a decision flips.
        #[arg(long)]
        sweep_tau: bool,
        /// Write per-example predictions as JSON lines.
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Train the head-count and baseline variants and tabulate their metrics.
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_delimiter = ',', default_value = "4,16,64")]
        heads: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Dump the top-k attention weights of every head as JSON lines.
    Inspect {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TOP_K)]
        k: usize,
        /// Only this example.
        #[arg(long)]
        id: Option<String>,
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Compare analytic and finite-difference gradients on the micro model.
    Gradcheck {
        #[arg(long, default_value_t = DEFAULT_STEP)]
        step: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

/// Run configuration: a key=value file, then individual overrides.
#[derive(Args)]
struct ConfigArgs {
    /// Flat `key = value` file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Any config key, e.g. `--set hidden=32`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long)]
    hidden: Option<String>,
    #[arg(long)]
    embed: Option<String>,
    #[arg(long)]
    context_heads: Option<String>,
    #[arg(long)]
    question_heads: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    aux_weight: Option<String>,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    baseline_fc_na: Option<String>,
    #[arg(long)]
    use_pooled_summary: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    tau: Option<String>,
    #[arg(long)]
    train: Option<String>,
    #[arg(long)]
    dev: Option<String>,
    #[arg(long)]
    synthetic_train: Option<String>,
    #[arg(long)]
    synthetic_dev: Option<String>,
    #[arg(long)]
    data_seed: Option<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut config = RunConfig::default();
        if let Some(path) = &self.config {
            config.apply_key_values(&std::fs::read_to_string(path)?)?;
        }
        let flags = [
            ("hidden", &self.hidden),
            ("embed", &self.embed),
            ("context_heads", &self.context_heads),
            ("question_heads", &self.question_heads),
            ("alpha", &self.alpha),
            ("aux_weight", &self.aux_weight),
            ("variant", &self.variant),
            ("baseline_fc_na", &self.baseline_fc_na),
            ("use_pooled_summary", &self.use_pooled_summary),
            ("lr", &self.lr),
            ("batch_size", &self.batch_size),
            ("epochs", &self.epochs),
            ("seed", &self.seed),
            ("tau", &self.tau),
            ("train", &self.train),
            ("dev", &self.dev),
            ("synthetic_train", &self.synthetic_train),
            ("synthetic_dev", &self.synthetic_dev),
            ("data_seed", &self.data_seed),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                config.set(key, v)?;
            }
        }
        for kv in &self.sets {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            config.set(k.trim(), v)?;
        }
        config.validate()?;
        Ok(config)
    }
}

fn write_json<T: serde::Serialize>(value: &T) -> Result<()> {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn seeded_path(path: &Path, seed: u64) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    let name = match path.extension().and_then(|e| e.to_str()) {
        Some(ext) => format!("{stem}-seed{seed}.{ext}"),
        None => format!("{stem}-seed{seed}"),
    };
    path.with_file_name(name)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { config, out, dev_out } => {
            let config = config.resolve()?;
            let train_set = generate_synthetic(&config.synthetic)?;
            write_jsonl(BufWriter::new(File::create(&out)?), &train_set)?;
            eprintln!("wrote {} examples to {}", train_set.len(), out.display());
            if let Some(dev_out) = dev_out {
                let dev = generate_synthetic(&SyntheticConfig {
                    num_examples: config.synthetic_dev_examples,
                    rng_seed: config.synthetic.rng_seed.wrapping_add(1),
                    ..config.synthetic.clone()
                })?;
                write_jsonl(BufWriter::new(File::create(&dev_out)?), &dev)?;
                eprintln!("wrote {} examples to {}", dev.len(), dev_out.display());
            }
        }
        Command::Train { config, out, seeds } => {
            let config = config.resolve()?;
            let (train_set, dev_set) = load_data(&config)?;
            let seeds = if seeds.is_empty() { vec![config.seed] } else { seeds };
            let mut summaries = Vec::new();
            for &seed in &seeds {
                let mut c = config.clone();
                c.seed = seed;
                let ck = train(&c, &train_set, &dev_set, |r| {
                    eprintln!(
                        "seed {seed} epoch {:>2}  lr {:.2e}  train {:.4}  dev {:.4}  F1 {:.2}  NA {:.2}  HasAns {:.2}",
                        r.epoch, r.lr, r.train_loss, r.dev_loss, r.dev.f1, r.dev.na_accuracy, r.dev.answerable_accuracy
                    );
                })?;
                let path = if seeds.len() == 1 {
                    out.clone()
                } else {
                    seeded_path(&out, seed)
                };
                ck.save(&path)?;
                let best = ck.history.iter().find(|r| r.epoch == ck.epoch).map(|r| r.dev);
                summaries.push(serde_json::json!({
                    "seed": seed,
                    "checkpoint": path,
                    "best_epoch": ck.epoch,
                    "dev": best,
                }));
            }
            let devs: Vec<Metrics> = summaries
                .iter()
                .filter_map(|s| serde_json::from_value(s["dev"].clone()).ok())
                .collect();
            write_json(&serde_json::json!({ "runs": summaries, "mean": mean_metrics(&devs) }))?;
        }
        Command::Eval {
            checkpoint,
            data,
            tau,
            sweep_tau: sweep,
            predictions,
        } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let examples = load_dataset(&data)?;
            let tau = tau.unwrap_or(ck.config.tau);
            let eval = evaluate_full(&ck, &examples, tau)?;
            if let Some(path) = predictions {
                let mut out = BufWriter::new(File::create(path)?);
                for p in &eval.predictions {
                    serde_json::to_writer(&mut out, p)?;
                    writeln!(out)?;
                }
            }
            let mut report = serde_json::json!({ "tau": tau, "metrics": eval.metrics, "loss": eval.loss });
            if sweep {
                let (curve, best) = sweep_tau(&examples, &eval.decisions)?;
                report["best_tau"] = serde_json::to_value(&curve[best])?;
                report["sweep"] = serde_json::to_value(&curve)?;
            }
            write_json(&report)?;
        }
        Command::Ablate {
            config,
            heads,
            seeds,
            out_dir,
        } => {
            let config = config.resolve()?;
            let (train_set, dev_set) = load_data(&config)?;
            let seeds = if seeds.is_empty() { vec![config.seed] } else { seeds };
            std::fs::create_dir_all(&out_dir)?;
            let report = ablate(&config, &heads, &seeds, &train_set, &dev_set, Some(&out_dir))?;
            let table = render_table(&report);
            std::fs::write(out_dir.join("report.json"), serde_json::to_vec_pretty(&report)?)?;
            std::fs::write(out_dir.join("table.txt"), &table)?;
            print!("{table}");
        }
        Command::Inspect {
            checkpoint,
            data,
            k,
            id,
            limit,
        } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let mut examples: Vec<Example> = load_dataset(&data)?;
            if let Some(id) = &id {
                examples.retain(|e| &e.id == id);
                if examples.is_empty() {
                    return Err(Error::Config(format!("no example with id {id:?}")));
                }
            }
            if let Some(limit) = limit {
                examples.truncate(limit);
            }
            let stdout = io::stdout();
            let mut out = stdout.lock();
            for record in inspect(&ck, &examples, k)? {
                serde_json::to_writer(&mut out, &record)?;
                writeln!(out)?;
            }
        }
        Command::Gradcheck { step, seed, tolerance } => {
            let report = gradcheck(step, seed)?;
            write_json(&report)?;
            let worst = report.max_rel_error();
            if worst >= tolerance {
                return Err(Error::Config(format!(
                    "max relative error {worst:.3e} ≥ {tolerance:.0e}"
                )));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
