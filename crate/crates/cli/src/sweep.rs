//! Seeded, resumable grid sweeps over generator and training parameters.
//!
//! A sweep takes base configs, a list of axes (parameter path plus values),
//! and a replicate count. Cells are the Cartesian product of the axes; each
//! cell runs `replicates` times with the seeds offset by the replicate
//! index, so different methods compare on identical datasets rep by rep.
//! Datasets are cached by generator-config digest and shared across cells.
//!
//! Rows land in `results.csv` incrementally, in cell order, so an
//! interrupted sweep resumes by skipping finished `(cell, rep)` pairs and
//! produces the same file an uninterrupted run would. A failing cell is
//! recorded in its row and the sweep continues.

use std::collections::{BTreeMap, HashSet};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use betadpo_core::eval::exact_win_rate;
use betadpo_core::synth::{generate, make_ground_truth, GenConfig};
use betadpo_core::trainer::{train, TrainConfig, TrainOptions};
use betadpo_core::types::PreferenceDataset;

/// One sweep axis: a dotted parameter path (`gen.` or `train.` prefix) and
/// the values to grid over.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    pub path: String,
    pub values: Vec<toml::Value>,
}

/// Full sweep description, loadable from a TOML file.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub base_train: TrainConfig,
    pub base_gen: GenConfig,
    #[serde(default)]
    pub axes: Vec<SweepAxis>,
    pub replicates: usize,
    pub outputs_dir: PathBuf,
}

impl SweepSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .with_context(|| format!("reading sweep spec {}", path.as_ref().display()))?;
        let spec: SweepSpec = toml::from_str(&text).context("parsing sweep spec")?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            bail!("replicates must be >= 1");
        }
        self.base_gen.validate()?;
        self.base_train.validate()?;
        // every path must resolve against the base configs
        for axis in &self.axes {
            if axis.values.is_empty() {
                bail!("axis {} has no values", axis.path);
            }
            resolve_cell(&self.base_gen, &self.base_train, &[(
                axis.path.clone(),
                axis.values[0].clone(),
            )])?;
        }
        Ok(())
    }
}

/// One row of the results table.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepRow {
    pub cell_id: String,
    pub rep: usize,
    pub gen_seed: u64,
    pub train_seed: u64,
    pub win_rate: Option<f64>,
    pub tie_rate: Option<f64>,
    pub final_loss: Option<f64>,
    pub mean_beta: Option<f64>,
    pub runtime_s: f64,
    pub params_json: String,
    pub error: String,
}

/// Outcome of a sweep run: the full table plus how much work happened.
#[derive(Debug)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub executed: usize,
    pub skipped: usize,
}

/// Execution knobs that are not part of the sweep definition.
#[derive(Default)]
pub struct SweepOptions {
    /// Stop after this many newly executed cells (for interrupt testing).
    pub max_cells: Option<usize>,
}

#[derive(Clone, Debug)]
struct Cell {
    id: String,
    assignments: Vec<(String, toml::Value)>,
    gen: GenConfig,
    train: TrainConfig,
}

/// Replace the value at a dotted path inside a TOML tree. Intermediate
/// segments must already exist; the final segment may be inserted (it is
/// validated by the typed deserialization that follows).
fn set_path(root: &mut toml::Value, path: &str, value: toml::Value) -> Result<()> {
    let segments: Vec<&str> = path.split('.').collect();
    if segments.is_empty() {
        bail!("empty parameter path");
    }
    let mut node = root;
    for seg in &segments[..segments.len() - 1] {
        node = node
            .get_mut(seg)
            .ok_or_else(|| anyhow!("path segment `{seg}` not found in `{path}`"))?;
    }
    let last = segments[segments.len() - 1];
    let table = node
        .as_table_mut()
        .ok_or_else(|| anyhow!("parent of `{last}` in `{path}` is not a table"))?;
    table.insert(last.to_string(), value);
    Ok(())
}

/// Apply axis assignments to the base configs. Paths are rooted at `gen.`
/// or `train.`; anything else, or anything that does not deserialize back
/// into the typed configs, is a hard error.
fn resolve_cell(
    base_gen: &GenConfig,
    base_train: &TrainConfig,
    assignments: &[(String, toml::Value)],
) -> Result<(GenConfig, TrainConfig)> {
    let mut gen_value = toml::Value::try_from(base_gen).context("serializing gen config")?;
    let mut train_value = toml::Value::try_from(base_train).context("serializing train config")?;
    for (path, value) in assignments {
        match path.split_once('.') {
            Some(("gen", rest)) => set_path(&mut gen_value, rest, value.clone())?,
            Some(("train", rest)) => set_path(&mut train_value, rest, value.clone())?,
            _ => bail!("parameter path `{path}` must start with `gen.` or `train.`"),
        }
    }
    let gen: GenConfig = gen_value
        .try_into()
        .map_err(|e| anyhow!("path produced an invalid gen config: {e}"))?;
    let train: TrainConfig = train_value
        .try_into()
        .map_err(|e| anyhow!("path produced an invalid train config: {e}"))?;
    gen.validate()?;
    train.validate()?;
    Ok((gen, train))
}

fn toml_value_to_string(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn enumerate_cells(spec: &SweepSpec) -> Result<Vec<Cell>> {
    let mut combos: Vec<Vec<(String, toml::Value)>> = vec![Vec::new()];
    for axis in &spec.axes {
        let mut next = Vec::with_capacity(combos.len() * axis.values.len());
        for combo in &combos {
            for value in &axis.values {
                let mut c = combo.clone();
                c.push((axis.path.clone(), value.clone()));
                next.push(c);
            }
        }
        combos = next;
    }
    combos
        .into_iter()
        .map(|assignments| {
            let (gen, train) = resolve_cell(&spec.base_gen, &spec.base_train, &assignments)?;
            let id = if assignments.is_empty() {
                "base".to_string()
            } else {
                assignments
                    .iter()
                    .map(|(p, v)| format!("{p}={}", toml_value_to_string(v)))
                    .collect::<Vec<_>>()
                    .join("|")
            };
            Ok(Cell {
                id,
                assignments,
                gen,
                train,
            })
        })
        .collect()
}

/// Seed offsets per replicate keep datasets paired across cells that share
/// a generator config while keeping replicates independent.
fn configs_for_rep(cell: &Cell, rep: usize) -> (GenConfig, TrainConfig) {
    let mut gen = cell.gen.clone();
    gen.seed += rep as u64;
    let mut train = cell.train.clone();
    train.seed += rep as u64;
    (gen, train)
}

fn dataset_paths(dir: &Path, digest: &str) -> (PathBuf, PathBuf) {
    (
        dir.join(format!("{digest}.jsonl")),
        dir.join(format!("{digest}.gt.json")),
    )
}

/// Generate (or reuse) the dataset and reward table for one gen config.
pub fn ensure_dataset(
    datasets_dir: &Path,
    gen: &GenConfig,
) -> Result<(PreferenceDataset, betadpo_core::reward::GroundTruthReward)> {
    std::fs::create_dir_all(datasets_dir)?;
    let digest = gen.digest();
    let (ds_path, gt_path) = dataset_paths(datasets_dir, &digest);
    if ds_path.exists() && gt_path.exists() {
        let ds = PreferenceDataset::read_jsonl_file(&ds_path)?;
        let gt = betadpo_core::reward::GroundTruthReward::load_json(&gt_path)?;
        return Ok((ds, gt));
    }
    let gt = make_ground_truth(gen.shape, gen.seed)?;
    let ds = generate(gen, &gt)?;
    ds.write_jsonl_file(&ds_path)?;
    gt.save_json(&gt_path)?;
    Ok((ds, gt))
}

fn run_cell(datasets_dir: &Path, cell: &Cell, rep: usize) -> SweepRow {
    let (gen, train_cfg) = configs_for_rep(cell, rep);
    let params_json = serde_json::to_string(
        &cell
            .assignments
            .iter()
            .map(|(p, v)| (p.clone(), toml_value_to_string(v)))
            .collect::<BTreeMap<_, _>>(),
    )
    .unwrap_or_default();
    let started = Instant::now();
    let result = (|| -> Result<(f64, f64, Option<f64>, Option<f64>)> {
        let (ds, gt) = ensure_dataset(datasets_dir, &gen)?;
        let (state, reports) = train(&ds, &train_cfg, &TrainOptions::default())?;
        let wr = exact_win_rate(&state.theta, &state.reference, &gt)?;
        let final_loss = reports.last().map(|r| r.loss);
        let mean_beta = if reports.is_empty() {
            None
        } else {
            Some(reports.iter().map(|r| r.effective_beta).sum::<f64>() / reports.len() as f64)
        };
        Ok((wr.win_rate, wr.tie_rate, final_loss, mean_beta))
    })();
    let runtime_s = started.elapsed().as_secs_f64();
    match result {
        Ok((win, tie, final_loss, mean_beta)) => SweepRow {
            cell_id: cell.id.clone(),
            rep,
            gen_seed: gen.seed,
            train_seed: train_cfg.seed,
            win_rate: Some(win),
            tie_rate: Some(tie),
            final_loss,
            mean_beta,
            runtime_s,
            params_json,
            error: String::new(),
        },
        Err(e) => SweepRow {
            cell_id: cell.id.clone(),
            rep,
            gen_seed: gen.seed,
            train_seed: train_cfg.seed,
            win_rate: None,
            tie_rate: None,
            final_loss: None,
            mean_beta: None,
            runtime_s,
            params_json,
            error: format!("{e:#}"),
        },
    }
}

fn results_path(spec: &SweepSpec) -> PathBuf {
    spec.outputs_dir.join("results.csv")
}

fn read_existing_rows(path: &Path) -> Result<Vec<SweepRow>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut reader = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for rec in reader.deserialize() {
        rows.push(rec?);
    }
    Ok(rows)
}

pub fn run_sweep(spec: &SweepSpec) -> Result<SweepOutcome> {
    run_sweep_with(spec, &SweepOptions::default())
}

pub fn run_sweep_with(spec: &SweepSpec, opts: &SweepOptions) -> Result<SweepOutcome> {
    spec.validate()?;
    std::fs::create_dir_all(&spec.outputs_dir)?;
    let datasets_dir = spec.outputs_dir.join("datasets");
    let cells = enumerate_cells(spec)?;

    let csv_path = results_path(spec);
    let existing = read_existing_rows(&csv_path)?;
    let done: HashSet<(String, usize)> = existing
        .iter()
        .map(|r| (r.cell_id.clone(), r.rep))
        .collect();

    // work items in canonical (cell, rep) order
    let mut pending: Vec<(usize, &Cell, usize)> = Vec::new();
    let mut order = 0usize;
    for cell in &cells {
        for rep in 0..spec.replicates {
            if !done.contains(&(cell.id.clone(), rep)) {
                pending.push((order, cell, rep));
                order += 1;
            }
        }
    }
    if let Some(cap) = opts.max_cells {
        pending.truncate(cap);
    }
    let skipped = done.len();
    let executed = pending.len();

    // Generate shared datasets up front, sequentially, so parallel cells
    // only ever read the cache.
    let mut seen = HashSet::new();
    for (_, cell, rep) in &pending {
        let (gen, _) = configs_for_rep(cell, *rep);
        if seen.insert(gen.digest()) {
            ensure_dataset(&datasets_dir, &gen)?;
        }
    }

    let write_header = !csv_path.exists();
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&csv_path)?;
    let mut writer = csv::WriterBuilder::new()
        .has_headers(write_header)
        .from_writer(file);

    // Cells run in a worker pool; rows flush in submission order so the
    // file is deterministic and an interrupt loses only unflushed cells.
    let (tx, rx) = std::sync::mpsc::channel::<(usize, SweepRow)>();
    let mut new_rows: Vec<SweepRow> = Vec::with_capacity(pending.len());
    std::thread::scope(|scope| -> Result<()> {
        let writer_handle = scope.spawn(move || -> Result<Vec<SweepRow>> {
            let mut buffer: BTreeMap<usize, SweepRow> = BTreeMap::new();
            let mut next = 0usize;
            let mut out = Vec::new();
            while let Ok((idx, row)) = rx.recv() {
                buffer.insert(idx, row);
                while let Some(row) = buffer.remove(&next) {
                    writer.serialize(&row)?;
                    writer.flush()?;
                    out.push(row);
                    next += 1;
                }
            }
            Ok(out)
        });

        pending
            .par_iter()
            .for_each_with(tx, |tx, (idx, cell, rep)| {
                let row = run_cell(&datasets_dir, cell, *rep);
                // receiver outlives all senders inside the scope
                let _ = tx.send((*idx, row));
            });

        new_rows = writer_handle
            .join()
            .map_err(|_| anyhow!("results writer panicked"))??;
        Ok(())
    })?;

    let mut rows = existing;
    rows.extend(new_rows);
    sort_rows(&cells, &mut rows);
    Ok(SweepOutcome {
        rows,
        executed,
        skipped,
    })
}

fn sort_rows(cells: &[Cell], rows: &mut [SweepRow]) {
    let index: BTreeMap<&str, usize> = cells
        .iter()
        .enumerate()
        .map(|(i, c)| (c.id.as_str(), i))
        .collect();
    rows.sort_by_key(|r| (index.get(r.cell_id.as_str()).copied().unwrap_or(usize::MAX), r.rep));
}

/// Per-group mean and spread over replicates.
#[derive(Clone, Debug, Serialize)]
pub struct GroupSummary {
    pub key: String,
    pub n: usize,
    pub mean_win_rate: f64,
    pub std_win_rate: f64,
    pub mean_final_loss: f64,
    pub mean_beta: f64,
    pub errors: usize,
}

/// Summarize rows grouped by `grouping`: either `"cell"` or one axis path.
pub fn report(rows: &[SweepRow], grouping: &str) -> Result<Vec<GroupSummary>> {
    if rows.is_empty() {
        bail!("results table is empty");
    }
    let key_of = |row: &SweepRow| -> Result<String> {
        if grouping == "cell" {
            return Ok(row.cell_id.clone());
        }
        let params: BTreeMap<String, String> =
            serde_json::from_str(&row.params_json).unwrap_or_default();
        params
            .get(grouping)
            .cloned()
            .ok_or_else(|| anyhow!("unknown grouping key `{grouping}`"))
    };

    let mut groups: BTreeMap<String, Vec<&SweepRow>> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    for row in rows {
        let key = key_of(row)?;
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(row);
    }

    let mut out = Vec::with_capacity(order.len());
    for key in order {
        let members = &groups[&key];
        let wins: Vec<f64> = members.iter().filter_map(|r| r.win_rate).collect();
        let errors = members.iter().filter(|r| !r.error.is_empty()).count();
        let n = wins.len();
        let mean = if n > 0 {
            wins.iter().sum::<f64>() / n as f64
        } else {
            f64::NAN
        };
        let std = if n > 0 {
            (wins.iter().map(|w| (w - mean) * (w - mean)).sum::<f64>() / n as f64).sqrt()
        } else {
            f64::NAN
        };
        let mean_of = |f: fn(&SweepRow) -> Option<f64>| {
            let v: Vec<f64> = members.iter().filter_map(|r| f(r)).collect();
            if v.is_empty() {
                f64::NAN
            } else {
                v.iter().sum::<f64>() / v.len() as f64
            }
        };
        out.push(GroupSummary {
            key,
            n,
            mean_win_rate: mean,
            std_win_rate: std,
            mean_final_loss: mean_of(|r| r.final_loss),
            mean_beta: mean_of(|r| r.mean_beta),
            errors,
        });
    }
    Ok(out)
}

/// Paired comparison of two cells: sign of the mean win-rate difference and
/// a two-sided exact sign-test p-value over replicate pairs.
#[derive(Clone, Debug)]
pub struct SignTest {
    pub mean_diff: f64,
    pub wins_a: usize,
    pub wins_b: usize,
    pub ties: usize,
    pub p_value: f64,
}

pub fn paired_sign_test(rows: &[SweepRow], cell_a: &str, cell_b: &str) -> Result<SignTest> {
    let by_rep = |cell: &str| -> BTreeMap<usize, f64> {
        rows.iter()
            .filter(|r| r.cell_id == cell)
            .filter_map(|r| r.win_rate.map(|w| (r.rep, w)))
            .collect()
    };
    let a = by_rep(cell_a);
    let b = by_rep(cell_b);
    if a.is_empty() || b.is_empty() {
        bail!("no rows for one of the cells `{cell_a}`, `{cell_b}`");
    }
    let mut diffs = Vec::new();
    for (rep, wa) in &a {
        if let Some(wb) = b.get(rep) {
            diffs.push(wa - wb);
        }
    }
    if diffs.is_empty() {
        bail!("cells share no replicate indices");
    }
    let wins_a = diffs.iter().filter(|&&d| d > 0.0).count();
    let wins_b = diffs.iter().filter(|&&d| d < 0.0).count();
    let ties = diffs.len() - wins_a - wins_b;
    let mean_diff = diffs.iter().sum::<f64>() / diffs.len() as f64;
    Ok(SignTest {
        mean_diff,
        wins_a,
        wins_b,
        ties,
        p_value: sign_test_p(wins_a, wins_b),
    })
}

/// Two-sided exact binomial sign test, ties dropped.
fn sign_test_p(wins_a: usize, wins_b: usize) -> f64 {
    let n = wins_a + wins_b;
    if n == 0 {
        return 1.0;
    }
    let k = wins_a.max(wins_b);
    // P(X >= k) for X ~ Binomial(n, 1/2), doubled and capped.
    let mut tail = 0.0f64;
    for i in k..=n {
        tail += binomial(n, i);
    }
    let p = 2.0 * tail / 2f64.powi(n as i32);
    p.min(1.0)
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    let mut c = 1.0f64;
    for i in 0..k {
        c = c * (n - i) as f64 / (i + 1) as f64;
    }
    c
}

/// Plain-text rendering of a summary table.
pub fn format_summaries(summaries: &[GroupSummary]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<58} {:>3} {:>10} {:>10} {:>10} {:>6}\n",
        "group", "n", "win_rate", "std", "mean_beta", "errs"
    ));
    for s in summaries {
        out.push_str(&format!(
            "{:<58} {:>3} {:>10.4} {:>10.4} {:>10.4} {:>6}\n",
            s.key, s.n, s.mean_win_rate, s.std_win_rate, s.mean_beta, s.errors
        ));
    }
    out
}

/// Write a summary table next to the results file.
pub fn write_summary(spec: &SweepSpec, summaries: &[GroupSummary]) -> Result<()> {
    let path = spec.outputs_dir.join("summary.txt");
    let mut f = std::fs::File::create(path)?;
    f.write_all(format_summaries(summaries).as_bytes())?;
    Ok(())
}
