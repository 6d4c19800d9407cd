//! Config-driven phase sweeps.
//!
//! Each `(d, fraction, trial)` task gets its seed from
//! `derive_trial_seed(master_seed, cell_index * trials_per_cell + trial)`,
//! so records do not depend on scheduling. Rows are appended to
//! `<output>.partial` as they finish; on completion the canonical CSV, sorted
//! by `(d, n, trial_index)`, replaces it.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::{check_events, Cutoffs, EventReport};
use crate::ellipsoid::{fit_ellipsoid_detailed, FitStatus, MAX_GRAM_ORDER};
use crate::sampling::{derive_trial_seed, sample_cloud};

pub const CSV_HEADER: [&str; 13] = [
    "d",
    "n",
    "n_fraction",
    "trial_index",
    "seed",
    "status",
    "max_residual",
    "q_min_eig",
    "perturbation_norm",
    "m_min_eig",
    "eps_inf",
    "delta_inf",
    "wall_time_ms",
];
pub const WORKERS_ENV: &str = "ELLIPSOID_WORKERS";
pub const CONJECTURED_THRESHOLD: f64 = 0.25;
pub const THRESHOLD_DEFINITION: &str = "smallest n/d^2 at which the per-cell success rate, \
linearly interpolated between scanned fractions, first drops from >= 1/2 to < 1/2; \
undefined when the scanned curve never crosses 1/2";
pub const MIN_SWEEP_DIMENSION: usize = 5;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config field `{field}`: {reason}")]
    ConfigInvalid { field: &'static str, reason: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("CSV error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("malformed config {path}: {source}")]
    ConfigParse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("dimension {0} is not part of the sweep")]
    UnknownDimension(usize),
    #[error("trial d = {d}, n = {n}, index {trial} failed: {reason}")]
    Trial {
        d: usize,
        n: usize,
        trial: usize,
        reason: String,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> HarnessError + '_ {
    move |source| HarnessError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub d_values: Vec<usize>,
    /// `n = round(fraction · d²)`.
    pub n_fractions: Vec<f64>,
    pub trials_per_cell: usize,
    pub master_seed: u64,
    pub diagnostics_enabled: bool,
    pub output_path: PathBuf,
    pub worker_count: usize,
}

/// One `(d, fraction)` cell of the grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub index: usize,
    pub d: usize,
    pub n_fraction: f64,
    pub n: usize,
}

pub fn cell_size(d: usize, fraction: f64) -> usize {
    (fraction * (d * d) as f64).round() as usize
}

impl SweepConfig {
    pub fn from_json_file(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|source| HarnessError::ConfigParse {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Replaces `worker_count` with `$ELLIPSOID_WORKERS` when that is set.
    pub fn apply_env_overrides(&mut self) -> Result<(), HarnessError> {
        if let Ok(raw) = std::env::var(WORKERS_ENV) {
            self.worker_count = raw
                .trim()
                .parse()
                .map_err(|_| HarnessError::ConfigInvalid {
                    field: "worker_count",
                    reason: format!("{WORKERS_ENV}={raw:?} is not a positive integer"),
                })?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let invalid = |field, reason: String| Err(HarnessError::ConfigInvalid { field, reason });
        if self.d_values.is_empty() {
            return invalid("d_values", "must not be empty".into());
        }
        if self.n_fractions.is_empty() {
            return invalid("n_fractions", "must not be empty".into());
        }
        if let Some(&d) = self.d_values.iter().find(|&&d| d < MIN_SWEEP_DIMENSION) {
            return invalid(
                "d_values",
                format!("d = {d} is below {MIN_SWEEP_DIMENSION}"),
            );
        }
        let mut seen_d = self.d_values.clone();
        seen_d.sort_unstable();
        if seen_d.windows(2).any(|w| w[0] == w[1]) {
            return invalid("d_values", "contains duplicates".into());
        }
        if let Some(f) = self.n_fractions.iter().find(|f| !(**f > 0.0 && **f <= 0.5)) {
            return invalid("n_fractions", format!("{f} is outside (0, 0.5]"));
        }
        if self.trials_per_cell == 0 {
            return invalid("trials_per_cell", "must be at least 1".into());
        }
        if self.worker_count == 0 {
            return invalid("worker_count", "must be at least 1".into());
        }
        for &d in &self.d_values {
            let mut sizes = Vec::with_capacity(self.n_fractions.len());
            for &f in &self.n_fractions {
                let n = cell_size(d, f);
                if !(1..=MAX_GRAM_ORDER).contains(&n) {
                    return invalid(
                        "n_fractions",
                        format!(
                            "d = {d}, fraction {f} gives n = {n}, outside [1, {MAX_GRAM_ORDER}]"
                        ),
                    );
                }
                if n >= d * (d + 1) / 2 {
                    return invalid(
                        "n_fractions",
                        format!("d = {d}, fraction {f} gives n = {n} >= d(d+1)/2"),
                    );
                }
                sizes.push(n);
            }
            sizes.sort_unstable();
            if let Some(w) = sizes.windows(2).find(|w| w[0] == w[1]) {
                return invalid(
                    "n_fractions",
                    format!("two fractions round to the same n = {} at d = {d}", w[0]),
                );
            }
        }
        Ok(())
    }

    /// Cells in ordinal order: `d_values` outer, `n_fractions` inner.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &d in &self.d_values {
            for &f in &self.n_fractions {
                out.push(Cell {
                    index: out.len(),
                    d,
                    n_fraction: f,
                    n: cell_size(d, f),
                });
            }
        }
        out
    }

    pub fn trial_seed(&self, cell: &Cell, trial: usize) -> u64 {
        derive_trial_seed(
            self.master_seed,
            (cell.index * self.trials_per_cell + trial) as u64,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub d: usize,
    pub n: usize,
    pub n_fraction: f64,
    pub trial_index: usize,
    pub seed: u64,
    pub status: FitStatus,
    pub max_residual: f64,
    pub q_min_eig: f64,
    pub perturbation_norm: f64,
    pub m_min_eig: f64,
    pub eps_inf: f64,
    pub delta_inf: f64,
    pub wall_time_ms: f64,
}

fn float_field(x: f64) -> String {
    format!("{x:.16e}")
}

impl TrialRecord {
    pub fn key(&self) -> (usize, usize, usize) {
        (self.d, self.n, self.trial_index)
    }

    pub fn csv_fields(&self) -> [String; 13] {
        [
            self.d.to_string(),
            self.n.to_string(),
            float_field(self.n_fraction),
            self.trial_index.to_string(),
            self.seed.to_string(),
            self.status.to_string(),
            float_field(self.max_residual),
            float_field(self.q_min_eig),
            float_field(self.perturbation_norm),
            float_field(self.m_min_eig),
            float_field(self.eps_inf),
            float_field(self.delta_inf),
            float_field(self.wall_time_ms),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub d: usize,
    pub n: usize,
    pub n_fraction: f64,
    pub trials: usize,
    pub successes: usize,
    pub success_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    /// Sorted by `(d, n, trial_index)`.
    pub records: Vec<TrialRecord>,
    /// Sorted by `(d, n)`.
    pub cells: Vec<CellSummary>,
    pub thresholds: BTreeMap<usize, Option<f64>>,
    pub events: Vec<TrialEvents>,
    pub wall_time_ms: f64,
}

impl SweepResult {
    /// Rebuilds per-cell summaries and thresholds from records alone.
    pub fn from_records(mut records: Vec<TrialRecord>) -> Self {
        records.sort_by_key(TrialRecord::key);
        let mut cells: Vec<CellSummary> = Vec::new();
        for r in &records {
            match cells.last_mut() {
                Some(c) if c.d == r.d && c.n == r.n => {
                    c.trials += 1;
                    c.successes += usize::from(r.status.is_success());
                }
                _ => cells.push(CellSummary {
                    d: r.d,
                    n: r.n,
                    n_fraction: r.n_fraction,
                    trials: 1,
                    successes: usize::from(r.status.is_success()),
                    success_rate: 0.0,
                }),
            }
        }
        for c in &mut cells {
            c.success_rate = c.successes as f64 / c.trials as f64;
        }
        let mut result = Self {
            records,
            cells,
            thresholds: BTreeMap::new(),
            events: Vec::new(),
            wall_time_ms: 0.0,
        };
        let dims: Vec<usize> = result.cells.iter().map(|c| c.d).collect();
        for d in dims {
            let t = estimate_threshold(&result, d).expect("dimension taken from cells");
            result.thresholds.insert(d, t);
        }
        result
    }

    pub fn success_rate(&self, d: usize, n_fraction: f64) -> Option<f64> {
        self.cells
            .iter()
            .find(|c| c.d == d && c.n_fraction == n_fraction)
            .map(|c| c.success_rate)
    }

    /// `(fraction, rate)` pairs for one dimension, by increasing fraction.
    pub fn curve(&self, d: usize) -> Vec<(f64, f64)> {
        self.cells
            .iter()
            .filter(|c| c.d == d)
            .map(|c| (c.n_fraction, c.success_rate))
            .collect()
    }
}

/// Linear interpolation of the success curve at level 1/2, between the first
/// pair of consecutive fractions where it falls from `>= 1/2` to `< 1/2`.
pub fn estimate_threshold(result: &SweepResult, d: usize) -> Result<Option<f64>, HarnessError> {
    let curve = result.curve(d);
    if curve.is_empty() {
        return Err(HarnessError::UnknownDimension(d));
    }
    Ok(curve.windows(2).find_map(|w| {
        let ((f0, r0), (f1, r1)) = (w[0], w[1]);
        (r0 >= 0.5 && r1 < 0.5).then(|| f0 + (r0 - 0.5) / (r0 - r1) * (f1 - f0))
    }))
}

/// Per-trial event report, written when `diagnostics_enabled` is set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialEvents {
    pub d: usize,
    pub n: usize,
    pub trial_index: usize,
    pub events: EventReport,
}

/// Knobs that are not part of the experiment definition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    /// When false, `wall_time_ms` is written as 0 so the CSV is a pure
    /// function of the config.
    pub record_timing: bool,
    pub cutoffs: Cutoffs,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            record_timing: true,
            cutoffs: Cutoffs::default(),
        }
    }
}

pub fn partial_path(output: &Path) -> PathBuf {
    suffixed(output, ".partial")
}

pub fn meta_path(output: &Path) -> PathBuf {
    suffixed(output, ".meta.json")
}

pub fn diagnostics_path(output: &Path) -> PathBuf {
    suffixed(output, ".diagnostics.jsonl")
}

fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn run_sweep(config: &SweepConfig) -> Result<SweepResult, HarnessError> {
    run_sweep_with(config, &RunOptions::default())
}

fn run_trial(
    config: &SweepConfig,
    cell: &Cell,
    trial: usize,
    opts: &RunOptions,
) -> Result<(TrialRecord, Option<TrialEvents>), HarnessError> {
    let start = Instant::now();
    let seed = config.trial_seed(cell, trial);
    let fail = |reason: String| HarnessError::Trial {
        d: cell.d,
        n: cell.n,
        trial,
        reason,
    };
    let cloud = sample_cloud(cell.d, cell.n, seed).map_err(|e| fail(e.to_string()))?;
    let fit = fit_ellipsoid_detailed(&cloud).map_err(|e| fail(e.to_string()))?;
    let r = &fit.result;
    let delta_inf = if r.delta.is_empty() {
        f64::NAN
    } else {
        r.delta.iter().fold(0.0, |m: f64, v| m.max(v.abs()))
    };
    let events = if config.diagnostics_enabled {
        let events = check_events(&cloud, &fit.gram, &fit.deviations, &r.delta, opts.cutoffs)
            .map_err(|e| fail(e.to_string()))?;
        Some(TrialEvents {
            d: cell.d,
            n: cell.n,
            trial_index: trial,
            events,
        })
    } else {
        None
    };
    let wall_time_ms = if opts.record_timing {
        start.elapsed().as_secs_f64() * 1e3
    } else {
        0.0
    };
    let record = TrialRecord {
        d: cell.d,
        n: cell.n,
        n_fraction: cell.n_fraction,
        trial_index: trial,
        seed,
        status: r.status,
        max_residual: r.max_residual,
        q_min_eig: r.q_min_eig,
        perturbation_norm: r.perturbation_norm,
        m_min_eig: r.m_min_eig,
        eps_inf: fit.deviations.inf_norm(),
        delta_inf,
        wall_time_ms,
    };
    Ok((record, events))
}

/// Runs every trial, writes the sorted CSV to `config.output_path` (plus the
/// meta JSON and, with diagnostics, a JSON-lines event file) and returns the
/// summary.
pub fn run_sweep_with(
    config: &SweepConfig,
    opts: &RunOptions,
) -> Result<SweepResult, HarnessError> {
    config.validate()?;
    let started = Instant::now();
    let output = config.output_path.as_path();
    if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let partial = partial_path(output);
    let mut sink = csv::Writer::from_path(&partial).map_err(csv_err(&partial))?;
    sink.write_record(CSV_HEADER).map_err(csv_err(&partial))?;
    sink.flush().map_err(io_err(&partial))?;
    let sink = Mutex::new(sink);

    let tasks: Vec<(Cell, usize)> = config
        .cells()
        .into_iter()
        .flat_map(|c| (0..config.trials_per_cell).map(move |t| (c, t)))
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.worker_count)
        .build()
        .map_err(|e| HarnessError::ConfigInvalid {
            field: "worker_count",
            reason: e.to_string(),
        })?;
    let outcomes: Vec<(TrialRecord, Option<TrialEvents>)> = pool.install(|| {
        tasks
            .par_iter()
            .map(|(cell, trial)| {
                let outcome = run_trial(config, cell, *trial, opts)?;
                let mut w = sink.lock().unwrap_or_else(|p| p.into_inner());
                w.write_record(outcome.0.csv_fields())
                    .map_err(csv_err(&partial))?;
                w.flush().map_err(io_err(&partial))?;
                Ok(outcome)
            })
            .collect::<Result<_, HarnessError>>()
    })?;
    drop(sink);

    let (records, events): (Vec<_>, Vec<_>) = outcomes.into_iter().unzip();
    let mut result = SweepResult::from_records(records);
    let mut events: Vec<TrialEvents> = events.into_iter().flatten().collect();
    events.sort_by_key(|e| (e.d, e.n, e.trial_index));
    result.events = events;

    write_csv(output, &result.records)?;
    fs::remove_file(&partial).map_err(io_err(&partial))?;
    if config.diagnostics_enabled {
        write_events(&diagnostics_path(output), &result.events)?;
    }
    result.wall_time_ms = started.elapsed().as_secs_f64() * 1e3;
    write_meta(&meta_path(output), config, &result)?;
    Ok(result)
}

pub fn write_csv(path: &Path, records: &[TrialRecord]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(CSV_HEADER).map_err(csv_err(path))?;
    for r in records {
        w.write_record(r.csv_fields()).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_csv(path: &Path) -> Result<Vec<TrialRecord>, HarnessError> {
    let mut rd = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let headers = rd.headers().map_err(csv_err(path))?.clone();
    if headers.iter().ne(CSV_HEADER) {
        return Err(HarnessError::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::InvalidData, "unexpected CSV header"),
        });
    }
    rd.deserialize()
        .collect::<Result<Vec<TrialRecord>, _>>()
        .map_err(csv_err(path))
}

fn write_events(path: &Path, events: &[TrialEvents]) -> Result<(), HarnessError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for e in events {
        let line = serde_json::to_string(e).expect("event reports serialize");
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

#[derive(Debug, Serialize)]
pub struct SweepMeta<'a> {
    pub config: &'a SweepConfig,
    /// Keyed by `d`; `null` when the curve does not cross 1/2.
    pub threshold_estimates: BTreeMap<String, Option<f64>>,
    pub conjectured_threshold: f64,
    pub threshold_definition: &'static str,
    pub cells: &'a [CellSummary],
    pub total_records: usize,
    pub total_wall_time_ms: f64,
    pub version: &'static str,
}

pub fn write_meta(
    path: &Path,
    config: &SweepConfig,
    result: &SweepResult,
) -> Result<(), HarnessError> {
    let meta = SweepMeta {
        config,
        threshold_estimates: result
            .thresholds
            .iter()
            .map(|(d, t)| (d.to_string(), *t))
            .collect(),
        conjectured_threshold: CONJECTURED_THRESHOLD,
        threshold_definition: THRESHOLD_DEFINITION,
        cells: &result.cells,
        total_records: result.records.len(),
        total_wall_time_ms: result.wall_time_ms,
        version: crate::VERSION,
    };
    let text = serde_json::to_string_pretty(&meta).expect("meta serializes");
    fs::write(path, text + "\n").map_err(io_err(path))
}
