use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use kernelcf_core::layout::{export_energy_trace, import_layout, run_layout, write_layout_to};
use kernelcf_core::ratings::{load_ratings, split, RatingsMatrix};
use kernelcf_core::similarity::{build_similarity_graph, GraphMode};
use kernelcf_core::{evaluate, CfModel, Config, Method};

#[derive(Debug, Parser)]
#[command(name = "kernelcf", version, about = "Collaborative filtering as kernel regression over a graph layout")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Seed for splitting and layout placement; overrides the config file.
    #[arg(long)]
    seed: Option<u64>,

    /// Flat key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Output file; standard output when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load a ratings file, report its shape and optionally write a train/test split.
    Ingest {
        #[arg(long)]
        ratings: PathBuf,
        /// Write train.csv and test.csv into this directory.
        #[arg(long)]
        split_dir: Option<PathBuf>,
        #[arg(long)]
        holdout: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Compute the force-directed layout of the similarity graph.
    Layout {
        #[arg(long)]
        ratings: PathBuf,
        #[arg(long, default_value = "user")]
        mode: GraphMode,
        #[arg(long)]
        iterations: Option<usize>,
        /// Also write the per-iteration energy trace here.
        #[arg(long)]
        energy: Option<PathBuf>,
        /// Also write the similarity edge list here.
        #[arg(long)]
        edges: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Predict one rating.
    Predict {
        #[arg(long)]
        ratings: PathBuf,
        #[arg(long)]
        user: String,
        #[arg(long)]
        item: String,
        #[arg(long, default_value = "kernel-cf")]
        method: Method,
        /// Precomputed layout for kernel methods.
        #[arg(long)]
        layout: Option<PathBuf>,
        #[arg(long)]
        iterations: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Rank unrated items for a user.
    Recommend {
        #[arg(long)]
        ratings: PathBuf,
        #[arg(long)]
        user: String,
        #[arg(long, default_value_t = 10)]
        top_n: usize,
        #[arg(long, default_value = "kernel-cf")]
        method: Method,
        #[arg(long)]
        layout: Option<PathBuf>,
        #[arg(long)]
        iterations: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Hold out part of the ratings and report prediction error.
    Evaluate {
        #[arg(long)]
        ratings: PathBuf,
        #[arg(long, default_value = "kernel-cf")]
        method: Method,
        #[arg(long)]
        holdout: Option<f64>,
        #[arg(long)]
        iterations: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Dump graph, layout and bandwidth diagnostics.
    Diagnose {
        #[arg(long)]
        ratings: PathBuf,
        #[arg(long, default_value = "user")]
        mode: GraphMode,
        #[arg(long)]
        layout: Option<PathBuf>,
        #[arg(long)]
        iterations: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
}

fn load_config(common: &Common, iterations: Option<usize>, holdout: Option<f64>) -> Result<Config> {
    let mut config = match &common.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(seed) = common.seed {
        config.layout.seed = seed;
    }
    if let Some(n) = iterations {
        config.layout.max_iterations = n;
    }
    if let Some(h) = holdout {
        config.holdout = h;
    }
    config.validate()?;
    Ok(config)
}

fn load(path: &Path) -> Result<RatingsMatrix> {
    let report = load_ratings(path)?;
    if !report.malformed.is_empty() {
        warn!("{} malformed lines skipped in {}", report.malformed.len(), path.display());
    }
    Ok(report.matrix)
}

fn emit(output: Option<&Path>, content: &[u8]) -> Result<()> {
    match output {
        Some(path) => fs::write(path, content).with_context(|| format!("writing {}", path.display())),
        None => {
            let mut stdout = io::stdout().lock();
            stdout.write_all(content)?;
            stdout.flush()?;
            Ok(())
        }
    }
}

fn fit(train: &RatingsMatrix, method: Method, config: &Config, layout: Option<&Path>) -> Result<CfModel> {
    match layout {
        Some(path) if method.is_kernel() => {
            Ok(CfModel::with_layout(train, method.mode(), config, import_layout(path)?)?)
        }
        Some(_) => bail!("--layout only applies to kernel methods"),
        None => Ok(CfModel::fit(train, method, config)?),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest {
            ratings,
            split_dir,
            holdout,
            common,
        } => {
            let config = load_config(&common, None, holdout)?;
            let report = load_ratings(&ratings)?;
            let m = &report.matrix;
            let mut out = String::new();
            writeln!(out, "users={}", m.n_users())?;
            writeln!(out, "items={}", m.n_items())?;
            writeln!(out, "entries={}", m.len())?;
            writeln!(out, "duplicates={}", report.duplicates)?;
            writeln!(out, "malformed={}", report.malformed.len())?;
            for e in &report.malformed {
                writeln!(out, "malformed_line={}: {}", e.line, e.message)?;
            }
            if let Some((lo, hi)) = m.value_range() {
                writeln!(out, "rating_min={lo}")?;
                writeln!(out, "rating_max={hi}")?;
            }
            if let Some(dir) = split_dir {
                let s = split(m, config.holdout, config.layout.seed)?;
                fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
                s.write(dir.join("train.csv"), dir.join("test.csv"))?;
                writeln!(out, "train_entries={}", s.train.len())?;
                writeln!(out, "test_entries={}", s.test.len())?;
                writeln!(out, "seed={}", s.seed)?;
            }
            emit(common.output.as_deref(), out.as_bytes())
        }
        Command::Layout {
            ratings,
            mode,
            iterations,
            energy,
            edges,
            common,
        } => {
            let config = load_config(&common, iterations, None)?;
            let matrix = load(&ratings)?;
            let graph = build_similarity_graph(&matrix, &config.similarity(mode))?;
            if let Some(path) = edges {
                graph.write_edge_list(path)?;
            }
            let state = run_layout(&graph, &config.layout)?;
            info!(
                "layout of {} nodes: {} iterations, converged: {}",
                state.len(),
                state.iteration,
                state.converged
            );
            if let Some(path) = energy {
                export_energy_trace(&state, path)?;
            }
            let mut buf = Vec::new();
            write_layout_to(&state, &mut buf)?;
            emit(common.output.as_deref(), &buf)
        }
        Command::Predict {
            ratings,
            user,
            item,
            method,
            layout,
            iterations,
            common,
        } => {
            let config = load_config(&common, iterations, None)?;
            let matrix = load(&ratings)?;
            let model = fit(&matrix, method, &config, layout.as_deref())?;
            let p = model.predict(&user, &item)?;
            let score = p.score.map_or_else(|| "none".to_owned(), |s| s.to_string());
            let fallback = p.fallback.map_or_else(|| "none".to_owned(), |f| f.to_string());
            let out = format!(
                "user_id,item_id,score,method,neighborhood_size,fallback\n{},{},{},{},{},{}\n",
                p.user_id, p.item_id, score, p.method, p.neighborhood_size, fallback
            );
            emit(common.output.as_deref(), out.as_bytes())
        }
        Command::Recommend {
            ratings,
            user,
            top_n,
            method,
            layout,
            iterations,
            common,
        } => {
            let config = load_config(&common, iterations, None)?;
            let matrix = load(&ratings)?;
            let model = fit(&matrix, method, &config, layout.as_deref())?;
            let mut out = String::from("rank,item_id,score\n");
            for (rank, p) in model.recommend(&user, top_n)?.iter().enumerate() {
                writeln!(out, "{},{},{}", rank + 1, p.item_id, p.score.expect("ranked items have scores"))?;
            }
            emit(common.output.as_deref(), out.as_bytes())
        }
        Command::Evaluate {
            ratings,
            method,
            holdout,
            iterations,
            common,
        } => {
            let config = load_config(&common, iterations, holdout)?;
            let matrix = load(&ratings)?;
            let s = split(&matrix, config.holdout, config.layout.seed)?;
            let report = evaluate(&s, method, &config)?;
            emit(common.output.as_deref(), report.to_key_value().as_bytes())
        }
        Command::Diagnose {
            ratings,
            mode,
            layout,
            iterations,
            common,
        } => {
            let config = load_config(&common, iterations, None)?;
            let matrix = load(&ratings)?;
            let method = match mode {
                GraphMode::User => Method::KernelCf,
                GraphMode::Item => Method::KernelCfItem,
            };
            let model = fit(&matrix, method, &config, layout.as_deref())?;
            let graph = model.graph();
            let state = model.layout().expect("kernel models carry a layout");
            let mut out = String::new();
            writeln!(out, "mode={mode}")?;
            writeln!(out, "nodes={}", graph.n_nodes())?;
            writeln!(out, "edges={}", graph.n_edges())?;
            writeln!(out, "isolated={}", graph.degrees().iter().filter(|&&d| d == 0).count())?;
            writeln!(out, "layout_iterations={}", state.iteration)?;
            writeln!(out, "layout_converged={}", state.converged)?;
            writeln!(out, "kernel={}", config.kernel)?;
            out.push_str(&model.bandwidth().expect("kernel models carry bandwidths").to_key_value());
            emit(common.output.as_deref(), out.as_bytes())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
