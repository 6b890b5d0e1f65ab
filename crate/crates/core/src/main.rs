use std::collections::BTreeSet;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use dsir::baselines::{ParetoConfig, TrainConfig};
use dsir::pipeline::{self, PipelineConfig, SelectOptions, WORKERS_ENV};
use dsir::SelectionMethod;

/// Importance-resampling data selection over hashed n-gram features.
#[derive(Parser)]
#[command(name = "dsir", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit target and raw bag-of-ngrams models.
    Fit {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, num_args = 1.., required = true)]
        raw: Vec<PathBuf>,
        #[arg(long, num_args = 1.., required = true)]
        target: Vec<PathBuf>,
        #[arg(long)]
        target_model: PathBuf,
        #[arg(long)]
        raw_model: PathBuf,
    },
    /// Compute a log importance weight for every raw document.
    Weights {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, num_args = 1.., required = true)]
        raw: Vec<PathBuf>,
        #[arg(long)]
        target_model: PathBuf,
        #[arg(long)]
        raw_model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Select documents from a weight or score table and write a manifest.
    Select {
        /// Weight table (dsir, classifier_ir, random) or score table
        /// (heuristic, topk_heuristic).
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 0)]
        k: usize,
        /// Defaults to the seed recorded in the input table.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "dsir")]
        method: SelectionMethod,
        #[arg(long, default_value_t = ParetoConfig::default().shape_alpha)]
        pareto_alpha: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the original lines of the manifest's documents, in manifest order.
    Extract {
        #[arg(long, num_args = 1.., required = true)]
        raw: Vec<PathBuf>,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// KL divergence to the target before and after selection, as CSV.
    KlReport {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, num_args = 1.., required = true)]
        target: Vec<PathBuf>,
        #[arg(long, num_args = 1.., required = true)]
        raw: Vec<PathBuf>,
        /// Selected dataset; repeat for one row each.
        #[arg(long, required = true)]
        selected: Vec<PathBuf>,
        /// Defaults to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the n-gram logistic classifier used by the baselines.
    TrainClassifier {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, num_args = 1.., required = true)]
        raw: Vec<PathBuf>,
        #[arg(long, num_args = 1.., required = true)]
        target: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = TrainConfig::default().l2)]
        l2: f64,
        #[arg(long, default_value_t = TrainConfig::default().epochs)]
        epochs: usize,
        #[arg(long, default_value_t = TrainConfig::default().learning_rate)]
        learning_rate: f64,
        #[arg(long, default_value_t = TrainConfig::default().batch_size)]
        batch_size: usize,
        /// Fraction held out for Platt calibration; 0 disables calibration.
        #[arg(long, default_value_t = 0.0)]
        calibrate_frac: f64,
    },
    /// Score raw documents with a trained classifier.
    Score {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, num_args = 1.., required = true)]
        raw: Vec<PathBuf>,
        #[arg(long)]
        classifier: PathBuf,
        /// Probability table for heuristic and topk_heuristic selection.
        #[arg(long)]
        scores_out: Option<PathBuf>,
        /// Log-odds weight table for classifier_ir selection.
        #[arg(long)]
        weights_out: Option<PathBuf>,
    },
    /// Drop short and repetitive documents.
    Filter {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, num_args = 1.., required = true)]
        input: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// JSONL log of dropped ids and reasons.
        #[arg(long)]
        drop_log: Option<PathBuf>,
    },
    /// fit, weights, select and extract in one go.
    RunAll {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, num_args = 1.., required = true)]
        raw: Vec<PathBuf>,
        #[arg(long, num_args = 1.., required = true)]
        target: Vec<PathBuf>,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        work_dir: PathBuf,
    },
}

/// Pipeline settings. A JSON config file is read first; flags override it.
#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    num_buckets: Option<u32>,
    /// Comma-separated n-gram orders, e.g. 1,2.
    #[arg(long, value_delimiter = ',')]
    orders: Option<Vec<usize>>,
    #[arg(long)]
    no_lowercase: bool,
    #[arg(long)]
    hash_seed: Option<u64>,
    #[arg(long)]
    smoothing_alpha: Option<f64>,
    #[arg(long)]
    min_words: Option<usize>,
    #[arg(long)]
    max_top_token_frac: Option<f64>,
    #[arg(long)]
    min_distinct_frac: Option<f64>,
    #[arg(long)]
    no_quality_filter: bool,
    #[arg(long)]
    filter_target: bool,
    #[arg(long)]
    sample_cap: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, env = WORKERS_ENV)]
    workers: Option<usize>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<PipelineConfig> {
        let mut c: PipelineConfig = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                serde_json::from_str(&text)
                    .with_context(|| format!("parsing {}", path.display()))?
            }
            None => PipelineConfig {
                workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
                ..PipelineConfig::default()
            },
        };
        if let Some(v) = self.num_buckets {
            c.featurizer.num_buckets = v;
        }
        if let Some(v) = &self.orders {
            c.featurizer.orders = v.iter().copied().collect::<BTreeSet<_>>();
        }
        if self.no_lowercase {
            c.featurizer.lowercase = false;
        }
        if let Some(v) = self.hash_seed {
            c.featurizer.hash_seed = v;
        }
        if let Some(v) = self.smoothing_alpha {
            c.smoothing_alpha = v;
        }
        if let Some(v) = self.min_words {
            c.quality.min_words = v;
        }
        if let Some(v) = self.max_top_token_frac {
            c.quality.max_top_token_frac = v;
        }
        if let Some(v) = self.min_distinct_frac {
            c.quality.min_distinct_frac = v;
        }
        if self.no_quality_filter {
            c.quality_filter = false;
        }
        if self.filter_target {
            c.filter_target = true;
        }
        if let Some(v) = self.sample_cap {
            c.sample_cap = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.workers {
            c.workers = v;
        }
        c.validate()?;
        Ok(c)
    }
}

fn print_summary<T: Serialize>(summary: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(summary)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit {
            config,
            raw,
            target,
            target_model,
            raw_model,
        } => {
            let c = config.resolve()?;
            print_summary(&pipeline::cmd_fit(
                &raw,
                &target,
                &c,
                &target_model,
                &raw_model,
            )?)
        }
        Command::Weights {
            config,
            raw,
            target_model,
            raw_model,
            out,
        } => {
            let c = config.resolve()?;
            print_summary(&pipeline::cmd_weights(
                &raw,
                &target_model,
                &raw_model,
                &c,
                &out,
            )?)
        }
        Command::Select {
            input,
            k,
            seed,
            method,
            pareto_alpha,
            out,
        } => {
            let options = SelectOptions {
                k,
                seed,
                method,
                pareto: ParetoConfig {
                    shape_alpha: pareto_alpha,
                },
                created_at: pipeline::timestamp_now(),
            };
            let m = pipeline::cmd_select(&input, &options, &out)?;
            print_summary(&serde_json::json!({
                "stage": "select",
                "method": m.method,
                "k": m.k,
                "selected": m.selected_ids.len(),
                "short_pool": m.short_pool,
                "seed": m.seed,
            }))
        }
        Command::Extract { raw, manifest, out } => {
            print_summary(&pipeline::cmd_extract(&raw, &manifest, &out)?)
        }
        Command::KlReport {
            config,
            target,
            raw,
            selected,
            out,
        } => {
            let c = config.resolve()?;
            let sets: Vec<Vec<PathBuf>> = selected.into_iter().map(|p| vec![p]).collect();
            let rows = pipeline::cmd_kl_report(&target, &raw, &sets, &c)?;
            match out {
                Some(path) => write_csv_file(&rows, &path),
                None => Ok(pipeline::write_kl_csv(&rows, io::stdout().lock())?),
            }
        }
        Command::TrainClassifier {
            config,
            raw,
            target,
            out,
            l2,
            epochs,
            learning_rate,
            batch_size,
            calibrate_frac,
        } => {
            let c = config.resolve()?;
            let train = TrainConfig {
                l2,
                epochs,
                learning_rate,
                batch_size,
                seed: c.seed,
            };
            print_summary(&pipeline::cmd_train_classifier(
                &raw,
                &target,
                &c,
                &train,
                calibrate_frac,
                &out,
            )?)
        }
        Command::Score {
            config,
            raw,
            classifier,
            scores_out,
            weights_out,
        } => {
            let c = config.resolve()?;
            print_summary(&pipeline::cmd_score(
                &raw,
                &classifier,
                &c,
                scores_out.as_deref(),
                weights_out.as_deref(),
            )?)
        }
        Command::Filter {
            config,
            input,
            out,
            drop_log,
        } => {
            let c = config.resolve()?;
            print_summary(&pipeline::cmd_filter(
                &input,
                &c.quality,
                &out,
                drop_log.as_deref(),
            )?)
        }
        Command::RunAll {
            config,
            raw,
            target,
            k,
            work_dir,
        } => {
            let c = config.resolve()?;
            let created_at = pipeline::timestamp_now();
            print_summary(&pipeline::run_all(
                &raw,
                &target,
                &c,
                k,
                &created_at,
                &work_dir,
            )?)
        }
    }
}

fn write_csv_file(rows: &[pipeline::KlRow], path: &Path) -> Result<()> {
    let f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    pipeline::write_kl_csv(rows, io::BufWriter::new(f))?;
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
