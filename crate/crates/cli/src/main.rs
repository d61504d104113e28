//! Command-line entry point: data generation, training, evaluation,
//! sweeps, and discrepancy analysis.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use betadpo_cli::config::{load_gen_config, load_train_config, save_toml};
use betadpo_cli::sweep::{format_summaries, report, run_sweep, write_summary, SweepSpec};
use betadpo_core::eval::{discrepancy_histogram, exact_win_rate, win_rate_vs_chosen_empirical};
use betadpo_core::policy::PolicyParams;
use betadpo_core::reward::{ExplicitScores, GroundTruthReward};
use betadpo_core::synth::{generate, make_ground_truth};
use betadpo_core::trainer::{save_checkpoint, train, write_metrics_csv, TrainOptions};
use betadpo_core::types::PreferenceDataset;

#[derive(Parser)]
#[command(name = "betadpo", about = "Preference-optimization lab on an enumerable toy policy")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic preference dataset and its reward table.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a generated dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Explicit scores file (JSONL) for the explicit discrepancy source.
        #[arg(long)]
        scores: Option<PathBuf>,
        /// Resume from a checkpoint file.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Exact win rate of a finished run against a baseline.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, value_enum, default_value_t = Baseline::Sft)]
        baseline: Baseline,
        /// Override the data directory recorded in the run manifest.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Run a grid sweep from a spec file.
    Sweep {
        #[arg(long)]
        spec: PathBuf,
    },
    /// Discrepancy histogram of a finished run over its training data.
    Analyze {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value_t = 40)]
        hist_bins: usize,
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Baseline {
    Sft,
    ChosenEmpirical,
}

#[derive(Serialize, Deserialize)]
struct RunManifest {
    data_dir: PathBuf,
    dataset_digest: String,
    steps: u64,
}

fn dataset_file(data_dir: &Path) -> PathBuf {
    data_dir.join("dataset.jsonl")
}

fn ground_truth_file(data_dir: &Path) -> PathBuf {
    data_dir.join("ground_truth.json")
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::GenData { config, out } => gen_data(&config, &out),
        Command::Train {
            data,
            config,
            out,
            scores,
            resume,
        } => train_cmd(&data, &config, &out, scores.as_deref(), resume),
        Command::Eval {
            run,
            baseline,
            data,
        } => eval_cmd(&run, baseline, data.as_deref()),
        Command::Sweep { spec } => sweep_cmd(&spec),
        Command::Analyze {
            run,
            hist_bins,
            data,
        } => analyze_cmd(&run, hist_bins, data.as_deref()),
    }
}

fn gen_data(config: &Path, out: &Path) -> Result<()> {
    let cfg = load_gen_config(config)?;
    std::fs::create_dir_all(out)?;
    let gt = make_ground_truth(cfg.shape, cfg.seed)?;
    let ds = generate(&cfg, &gt)?;
    let violations = ds.validate();
    if !violations.is_empty() {
        bail!("generated dataset is invalid: {violations:?}");
    }
    ds.write_jsonl_file(dataset_file(out))?;
    gt.save_json(ground_truth_file(out))?;
    save_toml(&cfg, out.join("gen_config.toml"))?;
    println!(
        "wrote {} triplets (digest {}) to {}",
        ds.len(),
        ds.generator_config_digest,
        out.display()
    );
    Ok(())
}

fn train_cmd(
    data: &Path,
    config: &Path,
    out: &Path,
    scores: Option<&Path>,
    resume: Option<PathBuf>,
) -> Result<()> {
    let cfg = load_train_config(config)?;
    let ds = PreferenceDataset::read_jsonl_file(dataset_file(data))
        .with_context(|| format!("loading dataset from {}", data.display()))?;
    let scores_loaded = match scores {
        Some(path) => Some(ExplicitScores::read_jsonl_file(path)?),
        None => None,
    };
    std::fs::create_dir_all(out)?;
    let opts = TrainOptions {
        scores: scores_loaded.as_ref(),
        checkpoint_dir: Some(out.join("checkpoints")),
        resume_from: resume,
        max_steps: None,
    };
    let (state, reports) = train(&ds, &cfg, &opts)?;

    state.theta.save_json(out.join("policy_final.json"))?;
    state.reference.save_json(out.join("policy_sft.json"))?;
    save_checkpoint(&state, out.join("checkpoint_final.json"))?;
    write_metrics_csv(&reports, std::fs::File::create(out.join("metrics.csv"))?)?;
    save_toml(&cfg, out.join("train_config.toml"))?;
    let manifest = RunManifest {
        data_dir: data.to_path_buf(),
        dataset_digest: ds.generator_config_digest.clone(),
        steps: state.step,
    };
    serde_json::to_writer_pretty(std::fs::File::create(out.join("manifest.json"))?, &manifest)?;
    println!(
        "trained {} steps; final loss {:.6}",
        state.step,
        reports.last().map(|r| r.loss).unwrap_or(f64::NAN)
    );
    Ok(())
}

fn load_run(
    run: &Path,
    data_override: Option<&Path>,
) -> Result<(PolicyParams, PolicyParams, GroundTruthReward, PathBuf)> {
    let manifest: RunManifest =
        serde_json::from_reader(std::fs::File::open(run.join("manifest.json"))?)
            .context("reading run manifest")?;
    let data_dir = data_override
        .map(Path::to_path_buf)
        .unwrap_or(manifest.data_dir);
    let theta = PolicyParams::load_json(run.join("policy_final.json"))?;
    let reference = PolicyParams::load_json(run.join("policy_sft.json"))?;
    let gt = GroundTruthReward::load_json(ground_truth_file(&data_dir))?;
    Ok((theta, reference, gt, data_dir))
}

fn eval_cmd(run: &Path, baseline: Baseline, data_override: Option<&Path>) -> Result<()> {
    let (theta, reference, gt, data_dir) = load_run(run, data_override)?;
    let result = match baseline {
        Baseline::Sft => exact_win_rate(&theta, &reference, &gt)?,
        Baseline::ChosenEmpirical => {
            let ds = PreferenceDataset::read_jsonl_file(dataset_file(&data_dir))?;
            win_rate_vs_chosen_empirical(&theta, &gt, &ds)?
        }
    };
    serde_json::to_writer_pretty(std::fs::File::create(run.join("result.json"))?, &result)?;
    println!(
        "win_rate {:.4}  tie_rate {:.4}  (ties split: {:.4})",
        result.win_rate,
        result.tie_rate,
        result.win_rate_ties_split()
    );
    Ok(())
}

fn sweep_cmd(spec_path: &Path) -> Result<()> {
    let spec = SweepSpec::load(spec_path)?;
    let outcome = run_sweep(&spec)?;
    println!(
        "sweep finished: {} executed, {} skipped (cached)",
        outcome.executed, outcome.skipped
    );
    let summaries = report(&outcome.rows, "cell")?;
    write_summary(&spec, &summaries)?;
    print!("{}", format_summaries(&summaries));
    Ok(())
}

fn analyze_cmd(run: &Path, hist_bins: usize, data_override: Option<&Path>) -> Result<()> {
    let (theta, reference, _, data_dir) = load_run(run, data_override)?;
    let train_cfg = load_train_config(run.join("train_config.toml"))?;
    let ds = PreferenceDataset::read_jsonl_file(dataset_file(&data_dir))?;
    let hist = discrepancy_histogram(&theta, &reference, &ds, train_cfg.beta_cfg.beta0, hist_bins)?;
    hist.write_csv(std::fs::File::create(run.join("hist.csv"))?)?;
    println!(
        "discrepancies: mean {:.5}  std {:.5}  p05 {:.5}  p95 {:.5}  ({} bins -> hist.csv)",
        hist.mean, hist.std, hist.p05, hist.p95, hist_bins
    );
    Ok(())
}
