//! `swca`: generate synthetic data, train, evaluate, ablate, gradient-check and plot.

mod plot;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use swca::config::RunConfig;
use swca::eval::{self, ablate_alpha, embed_split, evaluate_pools, kmeans_order, reports_to_csv, PoolSelection};
use swca::gradcheck::{run_with_defect, GradcheckOptions};
use swca::io::write_atomic;
use swca::loss::{cross_modal_similarity, Defect};
use swca::numerics::l2_normalize_rows;
use swca::train::{metrics_from_jsonl, metrics_to_jsonl, train};
use swca::{checkpoint, data, Error, LossMode};

#[derive(Parser)]
#[command(name = "swca", version, about = "Soft-weighted contrastive alignment toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset file and print a JSON summary.
    GenData {
        #[command(flatten)]
        config: ConfigArg,
        /// Output dataset file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a dual encoder; writes checkpoint.bin and metrics.jsonl into the output directory.
    Train {
        #[command(flatten)]
        config: ConfigArg,
        /// Dataset file produced by gen-data.
        #[arg(long)]
        data: PathBuf,
        /// Output directory (created if missing).
        #[arg(long)]
        out: PathBuf,
        /// Overrides train.objective.loss_mode from the config
        /// (binary, swca_intra, swca_spatial, swca_knowledge, swca_full).
        #[arg(long)]
        loss_mode: Option<LossMode>,
    },
    /// Retrieval evaluation on the test split; writes a CSV with one row per pool and direction.
    Eval {
        #[command(flatten)]
        config: ConfigArg,
        /// Checkpoint written by train.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset file produced by gen-data.
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        pools: PoolArgs,
        /// Output CSV file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one full-mode model per mixing weight and write one CSV per pool size.
    Ablate {
        #[command(flatten)]
        config: ConfigArg,
        /// Dataset file produced by gen-data.
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated mixing weights [default: eval.alphas from the config, 0.3,0.4,0.5,0.6]
        #[arg(long, value_delimiter = ',')]
        alphas: Option<Vec<f64>>,
        #[command(flatten)]
        pools: PoolArgs,
        /// Output directory; receives ablation_pool<N>.csv files.
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference and reference-value check of every loss mode; exit 1 on failure.
    Gradcheck {
        #[command(flatten)]
        config: ConfigArg,
        /// Number of random configurations, each checked in every loss mode.
        #[arg(long, default_value_t = 20)]
        trials: usize,
        /// Largest accepted relative gradient error.
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        /// Seed of the random configurations.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, hide = true, value_parser = parse_defect)]
        inject_defect: Option<Defect>,
    },
    /// Render a recall-vs-epoch chart from a metrics log, or a cluster-ordered similarity heatmap.
    Plot {
        /// Metrics log written by train.
        #[arg(long, conflicts_with = "similarity", required_unless_present = "similarity")]
        metrics: Option<PathBuf>,
        /// Heatmap of test-split cosine similarities (needs --checkpoint and --data).
        #[arg(long, requires_all = ["checkpoint", "data"])]
        similarity: bool,
        /// Checkpoint for --similarity.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Dataset file for --similarity.
        #[arg(long)]
        data: Option<PathBuf>,
        /// k-means clusters used to order the heatmap [default: eval.heatmap_clusters, 8]
        #[arg(long)]
        clusters: Option<usize>,
        #[command(flatten)]
        config: ConfigArg,
        /// Output SVG path; heatmaps also write a CSV next to it.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ConfigArg {
    /// JSON run configuration; every field is optional [default: built-in defaults]
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<RunConfig, Error> {
        match &self.config {
            Some(p) => RunConfig::load(p),
            None => Ok(RunConfig::default()),
        }
    }
}

#[derive(Args)]
struct PoolArgs {
    /// Comma-separated pool sizes [default: eval.pools from the config, 100]
    #[arg(long, value_delimiter = ',')]
    pools: Option<Vec<usize>>,
    /// Evaluate a seeded random subset per pool instead of the first N test samples.
    #[arg(long)]
    random_pool_seed: Option<u64>,
}

impl PoolArgs {
    fn resolve(&self, cfg: &RunConfig) -> Result<(Vec<usize>, PoolSelection), Error> {
        let pools = self.pools.clone().unwrap_or_else(|| cfg.eval.pools.clone());
        if pools.is_empty() || pools.contains(&0) {
            return Err(Error::InvalidConfig {
                field: "pools".into(),
                reason: "needs at least one positive pool size".into(),
            });
        }
        let selection = match self.random_pool_seed {
            Some(seed) => PoolSelection::Random { seed },
            None => cfg.eval.pool_selection,
        };
        Ok((pools, selection))
    }
}

fn parse_defect(s: &str) -> Result<Defect, String> {
    match s {
        "flip_grad_sign" => Ok(Defect::FlipGradSign),
        "drop_pair_weight" => Ok(Defect::DropPairWeight),
        "wrong_prefactor" => Ok(Defect::WrongPrefactor),
        _ => Err(format!("unknown defect `{s}`")),
    }
}

/// Outcome of a command that ran to completion but whose check failed.
struct CheckFailed;

enum Failure {
    Check,
    Error(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

impl From<CheckFailed> for Failure {
    fn from(_: CheckFailed) -> Self {
        Failure::Check
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } => 3,
        Error::NonFinite { .. } => 1,
        _ => 2,
    }
}

fn pool_check(pools: &[usize], available: usize) -> Result<(), Error> {
    match pools.iter().find(|&&p| p > available) {
        Some(&pool) => Err(Error::PoolTooLarge { pool, available }),
        None => Ok(()),
    }
}

fn ensure_dir(dir: &Path) -> Result<(), Error> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json"));
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::GenData { config, out } => {
            let cfg = config.load()?;
            let ds = data::generate(&cfg.data)?;
            let checksum = data::save(&ds, &out)?;
            let d = &cfg.data;
            print_json(&json!({
                "path": out,
                "checksum_sha256": checksum,
                "counts": {"train": ds.train.len(), "val": ds.val.len(), "test": ds.test.len()},
                "dims": {
                    "volume": d.dim_volume, "text": d.dim_text, "knowledge": d.dim_knowledge,
                    "latent": d.latent_dim, "patches": d.patches,
                },
                "num_clusters": d.num_clusters,
                "seed": d.seed,
            }));
        }
        Command::Train {
            config,
            data: data_path,
            out,
            loss_mode,
        } => {
            let mut cfg = config.load()?;
            if let Some(m) = loss_mode {
                cfg.train.objective.loss_mode = m;
            }
            let ds = data::load(&data_path)?;
            cfg.train.validate_for(&ds)?;
            let outcome = train(&ds, &cfg.train)?;
            ensure_dir(&out)?;
            let ckpt = out.join("checkpoint.bin");
            let log = out.join("metrics.jsonl");
            checkpoint::save(&outcome.params, &ckpt)?;
            write_atomic(&log, metrics_to_jsonl(&outcome.metrics).as_bytes())?;
            print_json(&json!({
                "checkpoint": ckpt,
                "metrics": log,
                "loss_mode": cfg.train.objective.loss_mode,
                "epochs": outcome.metrics.len(),
                "final": outcome.metrics.last(),
            }));
        }
        Command::Eval {
            config,
            checkpoint: ckpt,
            data: data_path,
            pools,
            out,
        } => {
            let cfg = config.load()?;
            let (pools, selection) = pools.resolve(&cfg)?;
            let ds = data::load(&data_path)?;
            pool_check(&pools, ds.test.len())?;
            let params = checkpoint::load(&ckpt)?;
            let (v, t) = embed_split(&params, &ds.test)?;
            let reports = evaluate_pools(&v, &t, params.log_tau, &pools, selection)?;
            write_atomic(&out, reports_to_csv(&reports).as_bytes())?;
            print_json(&json!({ "out": out, "reports": reports }));
        }
        Command::Ablate {
            config,
            data: data_path,
            alphas,
            pools,
            out,
        } => {
            let cfg = config.load()?;
            let (pools, selection) = pools.resolve(&cfg)?;
            let alphas = alphas.unwrap_or_else(|| cfg.eval.alphas.clone());
            if alphas.is_empty() || alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
                return Err(Error::InvalidConfig {
                    field: "alphas".into(),
                    reason: "need a non-empty grid inside [0, 1]".into(),
                }
                .into());
            }
            let ds = data::load(&data_path)?;
            cfg.train.validate_for(&ds)?;
            pool_check(&pools, ds.test.len())?;
            let tables = ablate_alpha(&ds, &cfg.train, &alphas, &pools, selection)?;
            ensure_dir(&out)?;
            let mut files = Vec::new();
            for table in &tables {
                let path = out.join(format!("ablation_pool{}.csv", table.pool));
                write_atomic(&path, table.to_csv().as_bytes())?;
                files.push(path);
            }
            print_json(&json!({ "files": files, "alphas": alphas }));
        }
        Command::Gradcheck {
            config,
            trials,
            tolerance,
            seed,
            inject_defect,
        } => {
            let cfg = config.load()?;
            let opts = GradcheckOptions {
                trials,
                tolerance,
                seed,
                objective: cfg.train.objective,
            };
            let report = run_with_defect(&opts, inject_defect.unwrap_or_default())?;
            print_json(&serde_json::to_value(&report).expect("json"));
            eprintln!(
                "max relative gradient error {:.3e} (tolerance {:.1e}); max value error {:.3e}",
                report.max_rel_error, report.tolerance, report.max_value_error
            );
            if !report.passed {
                return Err(CheckFailed.into());
            }
        }
        Command::Plot {
            metrics,
            similarity,
            checkpoint: ckpt,
            data: data_path,
            clusters,
            config,
            out,
        } => {
            let cfg = config.load()?;
            if let (Some(path), false) = (metrics, similarity) {
                let text = fs::read_to_string(&path).map_err(|source| Error::Io {
                    path: path.clone(),
                    source,
                })?;
                let rows = metrics_from_jsonl(&text)?;
                if rows.is_empty() {
                    return Err(Error::InvalidConfig {
                        field: "metrics".into(),
                        reason: format!("{} holds no metric records", path.display()),
                    }
                    .into());
                }
                write_atomic(&out, plot::metrics_chart_svg(&rows).as_bytes())?;
                print_json(&json!({ "svg": out, "epochs": rows.len() }));
            } else {
                let (ckpt, data_path) = (ckpt.expect("required by clap"), data_path.expect("required by clap"));
                let k = clusters.unwrap_or(cfg.eval.heatmap_clusters);
                let ds = data::load(&data_path)?;
                if k == 0 || k > ds.test.len() {
                    return Err(Error::KTooLarge { k, pool: ds.test.len() }.into());
                }
                let params = checkpoint::load(&ckpt)?;
                let (v, t) = embed_split(&params, &ds.test)?;
                // τ = 1 so the heatmap shows plain cosines on the fixed [-1, 1] color scale
                let s = cross_modal_similarity(&v, &t, 0.0)?.s;
                let (v_unit, _) = l2_normalize_rows(&v)?;
                let ordering = kmeans_order(&v_unit, k, cfg.train.seed)?;
                let (csv, svg) = eval::export_similarity_heatmap(&s, &ordering, &out)?;
                print_json(&json!({ "svg": svg, "csv": csv, "clusters": k }));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check) => ExitCode::from(1),
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
