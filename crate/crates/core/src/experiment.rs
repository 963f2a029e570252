//! Config-driven experiment runner: sweeps peer counts, shared-set sizes,
//! bin counts and share proportions, and compares DRL with every peer and
//! with the Oracle on shared outer folds.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{apply_bins, fit_bins, load_csv, split_peers, Dataset, LabeledRows};
use crate::error::{Error, Result};
use crate::eval::{
    benjamini_hochberg, delta_metric, paired_t_test_less, q_metric, FoldErrors, ResultRecord,
    DEFAULT_ALPHA,
};
use crate::folds::{fold_count, split_fold, stratified_folds};
use crate::learner::{
    cv_gamma_rados, error_rate, fit_examples_cv, make_drl_regularizer, solve_rados, Examples,
    DEFAULT_GAMMA_GRID,
};
use crate::protocol::{radocraft_traced, CommLedger, TraceEvent};

fn default_grid() -> Vec<f64> {
    DEFAULT_GAMMA_GRID.to_vec()
}

fn default_folds() -> usize {
    10
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

/// Experiment description, read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub domain: String,
    /// CSV path; [`ExperimentConfig::load`] resolves it, like `out_dir`,
    /// relative to the config file.
    pub dataset: PathBuf,
    pub label_column: String,
    pub positive_label: String,
    pub peers: Vec<usize>,
    pub shared_dims: Vec<usize>,
    pub bins: Vec<usize>,
    pub share_proportions: Vec<f64>,
    #[serde(default = "default_grid")]
    pub gamma_grid: Vec<f64>,
    #[serde(default = "default_folds")]
    pub folds: usize,
    pub seeds: Vec<u64>,
    /// Feature names in the order they become shared; `dim(J) = k` shares
    /// the first `k`. Defaults to ascending variance after scaling.
    #[serde(default)]
    pub shared_candidates: Option<Vec<String>>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config: Self =
            serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(dir) = path.parent() {
            if config.dataset.is_relative() {
                config.dataset = dir.join(&config.dataset);
            }
            if let Some(out) = config.out_dir.as_mut().filter(|o| o.is_relative()) {
                *out = dir.join(&*out);
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.peers.is_empty() || self.shared_dims.is_empty() || self.bins.is_empty() {
            return bad("peers, shared_dims and bins must be non-empty");
        }
        if self.share_proportions.is_empty() || self.seeds.is_empty() {
            return bad("share_proportions and seeds must be non-empty");
        }
        if self.peers.iter().any(|&p| p < 2) {
            return bad("every peer count must be >= 2");
        }
        if self.bins.iter().any(|&b| b < 2) {
            return bad("every bin count must be >= 2");
        }
        if self
            .share_proportions
            .iter()
            .any(|p| !(0.0..=1.0).contains(p))
        {
            return bad("share proportions must lie in [0, 1]");
        }
        if self.gamma_grid.is_empty() || self.gamma_grid.iter().any(|&g| g.is_nan() || g <= 0.0) {
            return bad("gamma grid must be non-empty and positive");
        }
        if self.folds < 2 {
            return bad("folds must be >= 2");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0, 1)");
        }
        Ok(())
    }

    /// Grid cells in a fixed order: share proportion, bins, peers, dim(J).
    pub fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for &p_s in &self.share_proportions {
            for &b in &self.bins {
                for &p in &self.peers {
                    for &dim_j in &self.shared_dims {
                        cells.push(Cell { p, dim_j, b, p_s });
                    }
                }
            }
        }
        cells
    }
}

/// One point of the parameter grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub p: usize,
    pub dim_j: usize,
    pub b: usize,
    pub p_s: f64,
}

/// A grid cell that cannot be run on the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedCell {
    pub cell: Cell,
    pub reason: String,
}

/// Protocol trace of one crafting session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionTrace {
    pub cell: Cell,
    pub seed: u64,
    pub fold: usize,
    pub events: Vec<TraceEvent>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
    pub trace_protocol: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentOutput {
    pub records: Vec<ResultRecord>,
    pub skipped: Vec<SkippedCell>,
    pub traces: Vec<SessionTrace>,
}

/// splitmix64 finalizer, used to derive independent stream seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix(base), |acc, &p| mix(acc ^ p))
}

/// Features ordered by ascending variance after min-max scaling to
/// `[-1, 1]`, ties by index.
pub fn variance_order(data: &Dataset) -> Vec<usize> {
    let mut keyed: Vec<(f64, usize)> = (0..data.d())
        .map(|k| {
            let col = data.rows().column(k);
            let (lo, hi) = (col.min(), col.max());
            let scaled: Vec<f64> = col
                .iter()
                .map(|&v| {
                    if hi > lo {
                        2.0 * (v - lo) / (hi - lo) - 1.0
                    } else {
                        0.0
                    }
                })
                .collect();
            let mean = scaled.iter().sum::<f64>() / scaled.len() as f64;
            let var = scaled.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / scaled.len() as f64;
            (var, k)
        })
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    keyed.into_iter().map(|(_, k)| k).collect()
}

fn shared_order(config: &ExperimentConfig, data: &Dataset) -> Result<Vec<usize>> {
    match &config.shared_candidates {
        None => Ok(variance_order(data)),
        Some(names) => names
            .iter()
            .map(|name| {
                data.feature_names()
                    .iter()
                    .position(|n| n == name)
                    .ok_or_else(|| Error::Config(format!("unknown shared candidate `{name}`")))
            })
            .collect(),
    }
}

fn feasibility(cell: &Cell, d: usize, candidates: usize) -> Option<String> {
    if cell.dim_j == 0 || cell.dim_j >= d {
        return Some(format!(
            "dim(J) = {} must lie in [1, {}]",
            cell.dim_j,
            d - 1
        ));
    }
    if cell.dim_j > candidates {
        return Some(format!("only {candidates} shared candidates"));
    }
    if cell.p > d - cell.dim_j {
        return Some(format!(
            "{} peers but {} non-shared features",
            cell.p,
            d - cell.dim_j
        ));
    }
    None
}

/// Loads the configured dataset and runs every feasible cell and seed.
pub fn run_experiment(config: &ExperimentConfig, options: &RunOptions) -> Result<ExperimentOutput> {
    config.validate()?;
    let data = load_csv(
        &config.dataset,
        &config.label_column,
        &config.positive_label,
    )?;
    run_on_dataset(config, &data, options)
}

/// As [`run_experiment`], on an already loaded dataset.
pub fn run_on_dataset(
    config: &ExperimentConfig,
    data: &Dataset,
    options: &RunOptions,
) -> Result<ExperimentOutput> {
    config.validate()?;
    let order = shared_order(config, data)?;
    let mut jobs = Vec::new();
    let mut skipped = Vec::new();
    for cell in config.cells() {
        match feasibility(&cell, data.d(), order.len()) {
            Some(reason) => {
                warn!("skipping cell {cell:?}: {reason}");
                skipped.push(SkippedCell { cell, reason });
            }
            None => jobs.extend(config.seeds.iter().map(|&seed| (cell, seed))),
        }
    }
    info!(
        "{} runs over {} cells ({} skipped)",
        jobs.len(),
        jobs.len() / config.seeds.len().max(1),
        skipped.len()
    );

    let work = || {
        jobs.par_iter()
            .map(|&(cell, seed)| run_cell(config, data, &order, cell, seed, options.trace_protocol))
            .collect::<Result<Vec<_>>>()
    };
    let results = match options.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?
            .install(work)?,
        None => work()?,
    };
    let mut output = ExperimentOutput {
        skipped,
        ..Default::default()
    };
    for (record, traces) in results {
        output.records.push(record);
        output.traces.extend(traces);
    }
    Ok(output)
}

struct FoldOutcome {
    drl: f64,
    oracle: f64,
    peers: Vec<f64>,
    gamma: f64,
    blocks: usize,
    ledger: CommLedger,
    comm_ok: bool,
    trace: Option<SessionTrace>,
}

/// Runs one cell for one seed over the shared outer folds.
pub fn run_cell(
    config: &ExperimentConfig,
    data: &Dataset,
    shared_order: &[usize],
    cell: Cell,
    seed: u64,
    trace: bool,
) -> Result<(ResultRecord, Vec<SessionTrace>)> {
    let data = data
        .clone()
        .with_shared(shared_order[..cell.dim_j].to_vec())?;
    // the outer split depends on the seed only, so every learner and every
    // cell sees the same folds
    let outer = stratified_folds(data.labels(), config.folds, derive_seed(seed, &[0]));
    let cell_key = [
        cell.p as u64,
        cell.dim_j as u64,
        cell.b as u64,
        cell.p_s.to_bits(),
    ];

    let outcomes = (0..fold_count(&outer))
        .map(|f| {
            let mut parts = cell_key.to_vec();
            parts.push(f as u64);
            run_fold(
                config,
                &data,
                &outer,
                f,
                cell,
                seed,
                derive_seed(seed, &parts),
                trace,
            )
        })
        .collect::<Result<Vec<_>>>()?;

    let p = cell.p;
    let drl = FoldErrors::new("drl", outcomes.iter().map(|o| o.drl).collect())?;
    let oracle = FoldErrors::new("oracle", outcomes.iter().map(|o| o.oracle).collect())?;
    let peers = (0..p)
        .map(|j| {
            FoldErrors::new(
                format!("peer{j}"),
                outcomes.iter().map(|o| o.peers[j]).collect(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let peer_means: Vec<f64> = peers.iter().map(FoldErrors::mean).collect();
    let delta = delta_metric(drl.mean(), &peer_means)?;
    let q = q_metric(&drl, &peers, config.alpha)?;
    let beats = |a: &FoldErrors, b: &FoldErrors| -> Result<bool> {
        Ok(benjamini_hochberg(&[paired_t_test_less(&a.errors, &b.errors)?], config.alpha)[0])
    };
    let drl_beats_oracle = beats(&drl, &oracle)?;
    let oracle_beats_drl = beats(&oracle, &drl)?;

    let mut ledger = CommLedger::default();
    for o in &outcomes {
        ledger.absorb(&o.ledger);
    }
    let mut fold_errors = vec![drl.clone(), oracle.clone()];
    fold_errors.extend(peers);
    let record = ResultRecord {
        domain: config.domain.clone(),
        p,
        dim_j: cell.dim_j,
        b: cell.b,
        p_s: cell.p_s,
        seed,
        m: data.m(),
        d: data.d(),
        drl_error: drl.mean(),
        oracle_error: oracle.mean(),
        best_peer_error: peer_means.iter().copied().fold(f64::INFINITY, f64::min),
        peer_errors: peer_means,
        delta,
        q,
        drl_beats_oracle,
        oracle_beats_drl,
        mean_blocks: outcomes.iter().map(|o| o.blocks as f64).sum::<f64>() / outcomes.len() as f64,
        ledger,
        comm_bound_holds: outcomes.iter().all(|o| o.comm_ok),
        gammas: outcomes.iter().map(|o| o.gamma).collect(),
        fold_errors,
    };
    let traces = outcomes.into_iter().filter_map(|o| o.trace).collect();
    Ok((record, traces))
}

#[allow(clippy::too_many_arguments)]
fn run_fold(
    config: &ExperimentConfig,
    data: &Dataset,
    outer: &[usize],
    fold: usize,
    cell: Cell,
    seed: u64,
    fold_seed: u64,
    trace: bool,
) -> Result<FoldOutcome> {
    let (train_idx, test_idx) = split_fold(outer, fold);
    let train_raw = data.subset(&train_idx);
    let rule = fit_bins(&train_raw, cell.b)?;
    let train = apply_bins(&train_raw, &rule)?;
    let test = apply_bins(&data.subset(&test_idx), &rule)?;

    let peers = split_peers(&train, cell.p, cell.p_s, derive_seed(fold_seed, &[1]))?;
    let (rados, ledger, events) = radocraft_traced_opt(&peers, &rule, trace)?;

    let m = train.m() as u64;
    let d = train.d() as u64;
    let blocks = rados.len() as u64;
    let comm_ok = ledger.scalars_sent <= blocks * d && (blocks >= m || ledger.scalars_sent < m * d);
    if !comm_ok {
        warn!(
            "communication bound violated: {} scalars for m* = {blocks}, m = {m}, d = {d}",
            ledger.scalars_sent
        );
    }

    let gamma = cv_gamma_rados(
        &rados,
        &config.gamma_grid,
        config.folds,
        derive_seed(fold_seed, &[2]),
    )?;
    let theta = solve_rados(
        &rados,
        &make_drl_regularizer(train.d(), train.shared_idx(), gamma)?,
    )?;
    let drl = error_rate(&theta, &test)?;

    let peer_errors = peers
        .iter()
        .map(|view| {
            let (theta, _) = fit_examples_cv(
                view,
                &config.gamma_grid,
                config.folds,
                derive_seed(fold_seed, &[3, view.peer_id() as u64]),
            )?;
            let local_test = Examples {
                rows: test.select_columns(view.feature_idx()),
                labels: test.labels().to_vec(),
            };
            error_rate(&theta, &local_test)
        })
        .collect::<Result<Vec<_>>>()?;

    let (oracle_theta, _) = fit_examples_cv(
        &train,
        &config.gamma_grid,
        config.folds,
        derive_seed(fold_seed, &[4]),
    )?;
    let oracle = error_rate(&oracle_theta, &test)?;

    Ok(FoldOutcome {
        drl,
        oracle,
        peers: peer_errors,
        gamma,
        blocks: rados.len(),
        ledger,
        comm_ok,
        trace: trace.then_some(SessionTrace {
            cell,
            seed,
            fold,
            events,
        }),
    })
}

fn radocraft_traced_opt(
    peers: &[crate::dataset::PeerView],
    rule: &crate::dataset::BinningRule,
    trace: bool,
) -> Result<(crate::rado::RadoSet, CommLedger, Vec<TraceEvent>)> {
    if trace {
        radocraft_traced(peers, rule)
    } else {
        let (set, ledger) = crate::protocol::radocraft(peers, rule)?;
        Ok((set, ledger, Vec::new()))
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn join(values: &[f64]) -> String {
    values
        .iter()
        .map(f64::to_string)
        .collect::<Vec<_>>()
        .join(";")
}

/// Column names of `results.csv`.
pub const RESULT_COLUMNS: [&str; 22] = [
    "domain",
    "p",
    "dim_j",
    "b",
    "p_s",
    "seed",
    "m",
    "d",
    "drl_error",
    "oracle_error",
    "best_peer_error",
    "delta",
    "q",
    "drl_beats_oracle",
    "oracle_beats_drl",
    "mean_blocks",
    "scalars_sent",
    "counter_values_sent",
    "messages_sent",
    "comm_bound_holds",
    "gammas",
    "peer_errors",
];

/// Writes `results.csv`, `results.json`, the long-format `delta_surface.csv`
/// and `q_surface.csv` (averaged over seeds), and `oracle_comparison.csv`.
/// Returns the written paths.
pub fn emit_tables(records: &[ResultRecord], out_dir: &Path) -> Result<Vec<PathBuf>> {
    if records.is_empty() {
        return Err(Error::Empty("result records"));
    }
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut written = Vec::new();

    let path = out_dir.join("results.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(RESULT_COLUMNS)?;
    for r in records {
        w.write_record([
            r.domain.clone(),
            r.p.to_string(),
            r.dim_j.to_string(),
            r.b.to_string(),
            r.p_s.to_string(),
            r.seed.to_string(),
            r.m.to_string(),
            r.d.to_string(),
            r.drl_error.to_string(),
            r.oracle_error.to_string(),
            r.best_peer_error.to_string(),
            r.delta.to_string(),
            r.q.to_string(),
            r.drl_beats_oracle.to_string(),
            r.oracle_beats_drl.to_string(),
            r.mean_blocks.to_string(),
            r.ledger.scalars_sent.to_string(),
            r.ledger.counter_values_sent.to_string(),
            r.ledger.messages_sent().to_string(),
            r.comm_bound_holds.to_string(),
            join(&r.gammas),
            join(&r.peer_errors),
        ])?;
    }
    w.flush().map_err(io_err(&path))?;
    written.push(path);

    let path = out_dir.join("results.json");
    let file = fs::File::create(&path).map_err(io_err(&path))?;
    let mut buf = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut buf, records)?;
    buf.write_all(b"\n").map_err(io_err(&path))?;
    buf.flush().map_err(io_err(&path))?;
    written.push(path);

    // (p_s, b, p, dim_j) -> (sum delta, sum q, count)
    type Key = (u64, usize, usize, usize);
    let mut surface: BTreeMap<Key, (f64, f64, usize)> = BTreeMap::new();
    for r in records {
        let e = surface
            .entry((r.p_s.to_bits(), r.b, r.p, r.dim_j))
            .or_default();
        e.0 += r.delta;
        e.1 += r.q;
        e.2 += 1;
    }
    for (name, pick) in [("delta_surface.csv", 0usize), ("q_surface.csv", 1)] {
        let path = out_dir.join(name);
        let mut w = csv::Writer::from_path(&path)?;
        let metric = if pick == 0 { "delta" } else { "q" };
        w.write_record(["p_s", "b", "p", "dim_j", metric, "seeds"])?;
        for (&(p_s, b, p, dim_j), &(sd, sq, n)) in &surface {
            let value = if pick == 0 { sd } else { sq } / n as f64;
            w.write_record([
                f64::from_bits(p_s).to_string(),
                b.to_string(),
                p.to_string(),
                dim_j.to_string(),
                value.to_string(),
                n.to_string(),
            ])?;
        }
        w.flush().map_err(io_err(&path))?;
        written.push(path);
    }

    let path = out_dir.join("oracle_comparison.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record([
        "domain",
        "p",
        "dim_j",
        "b",
        "p_s",
        "seed",
        "drl_error",
        "oracle_error",
        "significant",
    ])?;
    for r in records {
        let flag = if r.drl_beats_oracle {
            "drl"
        } else if r.oracle_beats_drl {
            "oracle"
        } else {
            "none"
        };
        w.write_record([
            r.domain.clone(),
            r.p.to_string(),
            r.dim_j.to_string(),
            r.b.to_string(),
            r.p_s.to_string(),
            r.seed.to_string(),
            r.drl_error.to_string(),
            r.oracle_error.to_string(),
            flag.to_string(),
        ])?;
    }
    w.flush().map_err(io_err(&path))?;
    written.push(path);
    Ok(written)
}

/// Writes `skipped.csv` listing infeasible cells.
pub fn emit_skipped(skipped: &[SkippedCell], out_dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let path = out_dir.join("skipped.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["p", "dim_j", "b", "p_s", "reason"])?;
    for s in skipped {
        w.write_record([
            s.cell.p.to_string(),
            s.cell.dim_j.to_string(),
            s.cell.b.to_string(),
            s.cell.p_s.to_string(),
            s.reason.clone(),
        ])?;
    }
    w.flush().map_err(io_err(&path))?;
    Ok(path)
}

/// Writes every session's protocol events as JSON lines tagged with the
/// session they belong to.
pub fn emit_traces(traces: &[SessionTrace], path: &Path) -> Result<()> {
    #[derive(Serialize)]
    struct Line<'a> {
        cell: &'a Cell,
        seed: u64,
        fold: usize,
        event: &'a TraceEvent,
    }
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    for t in traces {
        for event in &t.events {
            serde_json::to_writer(
                &mut out,
                &Line {
                    cell: &t.cell,
                    seed: t.seed,
                    fold: t.fold,
                    event,
                },
            )?;
            out.write_all(b"\n").map_err(io_err(path))?;
        }
    }
    out.flush().map_err(io_err(path))
}
