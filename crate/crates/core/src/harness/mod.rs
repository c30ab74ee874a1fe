//! Experiment configs, deterministic seeding, parameter sweeps and result files.
//!
//! A run is a pure function of its config and cell index: every random draw
//! comes from `RngStream::new(seed) / id / cell / ...`, results are collected
//! in order before anything is written, and the only nondeterministic number
//! (wall time) goes to `manifest.json`, never to a data file.

mod kinds;
mod schema;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::coarse_grain::{read_round_records, read_statuses, replay_statuses, TrajCache};
use crate::error::{invalid, Error, Result};
use crate::lattice_core::Dim;
use crate::length_law::LengthDistribution;
use crate::rng::{label_hash, RngStream};

pub use kinds::{AlgorithmSpec, TypicalitySpec};
pub use schema::{validate_schema, Schema, EXPERIMENT_SCHEMA, SWEEP_SCHEMA};

pub const RESULTS_FILE: &str = "results.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const THREADS_ENV: &str = "FRILAB_THREADS";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Capacity,
    FriSample,
    Threshold,
    Explore,
    Algorithm,
    Chain,
    Epsilon,
}

impl Kind {
    pub fn label(self) -> &'static str {
        match self {
            Kind::Capacity => "capacity",
            Kind::FriSample => "fri-sample",
            Kind::Threshold => "threshold",
            Kind::Explore => "explore",
            Kind::Algorithm => "algorithm",
            Kind::Chain => "chain",
            Kind::Epsilon => "epsilon",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Experiment id; defaults to the kind label. Part of every stream path.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub kind: Kind,
    pub d: usize,
    /// Length law in the `LengthDistribution::from_json` format.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<Value>,
    pub replicas: usize,
    pub seed: u64,
    /// Kind-specific parameters.
    #[serde(default)]
    pub params: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_value(v: Value) -> Result<Self> {
        validate_schema(&v, Schema::Experiment)?;
        let cfg: ExperimentConfig = serde_json::from_value(v).map_err(|e| Error::Validation(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(text).map_err(|e| Error::Validation(format!("config is not JSON: {e}")))?;
        Self::from_value(v)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn id(&self) -> String {
        self.id.clone().unwrap_or_else(|| self.kind.label().to_string())
    }

    pub fn dim(&self) -> Result<Dim> {
        Dim::new(self.d)
    }

    pub fn length_law(&self) -> Result<Option<LengthDistribution>> {
        self.rho.as_ref().map(LengthDistribution::from_json).transpose()
    }

    /// Checks everything that can be checked without running.
    pub fn validate(&self) -> Result<()> {
        self.dim()?;
        if self.replicas == 0 {
            return invalid("replicas must be ≥ 1");
        }
        if self.id.as_deref().is_some_and(str::is_empty) {
            return invalid("id must be nonempty");
        }
        self.length_law()?;
        kinds::check_params(self)
    }

    /// Root of every stream used by cell `cell` of this experiment.
    pub fn stream(&self, cell: usize) -> RngStream {
        RngStream::new(self.seed).child(label_hash(&self.id())).child(cell as u64)
    }
}

/// One long-format CSV row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub cell: usize,
    pub quantity: String,
    pub d: usize,
    pub params: String,
    pub estimate: f64,
    pub stderr: f64,
    pub bias_bound: f64,
    pub n_samples: u64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputFile {
    pub name: String,
    pub bytes: Vec<u8>,
}

#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub rows: Vec<ResultRow>,
    /// Extra data files (per-kind records), written next to `results.csv`.
    pub files: Vec<OutputFile>,
    pub wall_time: f64,
}

impl ExperimentOutput {
    pub fn results_csv(&self) -> Result<Vec<u8>> {
        rows_to_csv(&self.rows)
    }

    pub fn file(&self, name: &str) -> Option<&[u8]> {
        self.files.iter().find(|f| f.name == name).map(|f| f.bytes.as_slice())
    }

    pub fn row(&self, quantity: &str) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.quantity == quantity)
    }
}

pub fn rows_to_csv(rows: &[ResultRow]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(["experiment", "cell", "quantity", "d", "params", "estimate", "stderr", "bias_bound", "n_samples", "seed"])?;
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn read_results(bytes: &[u8]) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_reader(bytes);
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Machine-readable error record, also written as `error.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub code: i32,
    pub kind: String,
    pub message: String,
}

impl From<&Error> for ErrorRecord {
    fn from(e: &Error) -> Self {
        let kind = match e {
            Error::Validation(_) | Error::Json(_) => "validation",
            Error::Budget(_) => "budget",
            Error::Invariant(_) => "invariant",
            Error::Io(_) | Error::Csv(_) => "io",
        };
        ErrorRecord { code: e.exit_code(), kind: kind.into(), message: e.to_string() }
    }
}

/// Thread count from `FRILAB_THREADS`, if set.
pub fn env_threads() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => invalid(format!("{THREADS_ENV} must be a positive integer, got {s:?}")),
        },
    }
}

/// Run `f` on a dedicated pool of `threads` workers (the global pool if None).
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Validation(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    run_cell(cfg, 0)
}

/// One experiment as cell `cell` of a sweep.
pub fn run_cell(cfg: &ExperimentConfig, cell: usize) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let start = Instant::now();
    let (rows, files) = kinds::dispatch(cfg, cell)?;
    Ok(ExperimentOutput { rows, files, wall_time: start.elapsed().as_secs_f64() })
}

/// Write to a sibling temporary file, then rename over the target.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Serialize)]
struct Manifest<'a> {
    experiment: String,
    kind: &'static str,
    seed: u64,
    cell: usize,
    wall_time_s: f64,
    files: Vec<&'a str>,
    config: &'a ExperimentConfig,
}

/// Writes the data files first and `results.csv` last, so its presence marks
/// a complete directory.
pub fn write_output(dir: &Path, cfg: &ExperimentConfig, cell: usize, out: &ExperimentOutput) -> Result<()> {
    fs::create_dir_all(dir)?;
    for f in &out.files {
        write_atomic(&dir.join(&f.name), &f.bytes)?;
    }
    let mut names: Vec<&str> = out.files.iter().map(|f| f.name.as_str()).collect();
    names.push(RESULTS_FILE);
    let manifest = Manifest {
        experiment: cfg.id(),
        kind: cfg.kind.label(),
        seed: cfg.seed,
        cell,
        wall_time_s: out.wall_time,
        files: names,
        config: cfg,
    };
    write_atomic(&dir.join(MANIFEST_FILE), &serde_json::to_vec_pretty(&manifest)?)?;
    write_atomic(&dir.join(RESULTS_FILE), &out.results_csv()?)
}

pub fn write_error(dir: &Path, e: &Error) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_atomic(&dir.join("error.json"), &serde_json::to_vec(&ErrorRecord::from(e))?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// An experiment config; grid keys are dotted paths into it.
    pub template: Value,
    pub grid: BTreeMap<String, Vec<Value>>,
}

impl SweepConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(text).map_err(|e| Error::Validation(format!("sweep is not JSON: {e}")))?;
        validate_schema(&v, Schema::Sweep)?;
        serde_json::from_value(v).map_err(|e| Error::Validation(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// Cross product of the grid, last key fastest, as (assignment, config).
    /// A cell whose substituted config is invalid carries its error.
    pub fn cells(&self) -> Result<Vec<(BTreeMap<String, Value>, Result<ExperimentConfig>)>> {
        if self.grid.is_empty() || self.grid.values().any(Vec::is_empty) {
            return invalid("sweep grid must be nonempty in every key");
        }
        let mut combos: Vec<BTreeMap<String, Value>> = vec![BTreeMap::new()];
        for (k, vals) in &self.grid {
            combos = combos
                .into_iter()
                .flat_map(|c| {
                    vals.iter().map(move |v| {
                        let mut c = c.clone();
                        c.insert(k.clone(), v.clone());
                        c
                    })
                })
                .collect();
        }
        Ok(combos
            .into_iter()
            .map(|assign| {
                let mut v = self.template.clone();
                let cfg = assign
                    .iter()
                    .try_for_each(|(k, x)| set_path(&mut v, k, x.clone()))
                    .and_then(|_| ExperimentConfig::from_value(v));
                (assign, cfg)
            })
            .collect())
    }
}

fn set_path(v: &mut Value, path: &str, x: Value) -> Result<()> {
    let mut cur = v;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, p) in parts.iter().enumerate() {
        if cur.is_null() {
            *cur = Value::Object(Default::default());
        }
        let Value::Object(map) = cur else {
            return invalid(format!("grid path {path}: {p} is not inside an object"));
        };
        if i + 1 == parts.len() {
            map.insert(p.to_string(), x);
            return Ok(());
        }
        cur = map.entry(p.to_string()).or_insert(Value::Null);
    }
    invalid("empty grid path")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "kebab-case")]
pub enum CellState {
    Done,
    /// Completed by an earlier invocation with the same config.
    Resumed,
    Failed { code: i32, message: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellStatus {
    pub cell: usize,
    pub assignment: BTreeMap<String, Value>,
    #[serde(flatten)]
    pub state: CellState,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub cells: Vec<CellStatus>,
}

impl SweepReport {
    pub fn failed(&self) -> impl Iterator<Item = &CellStatus> {
        self.cells.iter().filter(|c| matches!(c.state, CellState::Failed { .. }))
    }

    /// Exit code of the first failed cell, 0 if none failed.
    pub fn exit_code(&self) -> i32 {
        self.failed()
            .find_map(|c| match c.state {
                CellState::Failed { code, .. } => Some(code),
                _ => None,
            })
            .unwrap_or(0)
    }
}

pub fn cell_dir(out: &Path, cell: usize) -> PathBuf {
    out.join("cells").join(format!("cell-{cell:04}"))
}

/// Runs every cell not already complete in `out`, then writes the aggregated
/// `results.csv` (rows of completed cells, in cell order) and `sweep.json`.
/// A failing cell is recorded and the sweep continues.
pub fn sweep(sw: &SweepConfig, out: &Path) -> Result<SweepReport> {
    let cells = sw.cells()?;
    fs::create_dir_all(out)?;
    let statuses: Vec<CellStatus> = cells
        .par_iter()
        .enumerate()
        .map(|(i, (assignment, cfg))| -> Result<CellStatus> {
            let dir = cell_dir(out, i);
            let cfg = match cfg {
                Ok(c) => c,
                Err(e) => {
                    write_error(&dir, e)?;
                    let state = CellState::Failed { code: e.exit_code(), message: e.to_string() };
                    return Ok(CellStatus { cell: i, assignment: assignment.clone(), state });
                }
            };
            let cfg_bytes = serde_json::to_vec_pretty(cfg)?;
            let state = if cell_complete(&dir, &cfg_bytes) {
                CellState::Resumed
            } else {
                fs::create_dir_all(&dir)?;
                write_atomic(&dir.join("config.json"), &cfg_bytes)?;
                match run_cell(cfg, i) {
                    Ok(o) => {
                        write_output(&dir, cfg, i, &o)?;
                        let _ = fs::remove_file(dir.join("error.json"));
                        CellState::Done
                    }
                    Err(e) => {
                        write_error(&dir, &e)?;
                        CellState::Failed { code: e.exit_code(), message: e.to_string() }
                    }
                }
            };
            Ok(CellStatus { cell: i, assignment: assignment.clone(), state })
        })
        .collect::<Result<_>>()?;
    let mut agg = rows_to_csv(&[])?;
    for s in &statuses {
        if !matches!(s.state, CellState::Failed { .. }) {
            let bytes = fs::read(cell_dir(out, s.cell).join(RESULTS_FILE))?;
            let body = bytes.iter().position(|&b| b == b'\n').map_or(&[][..], |p| &bytes[p + 1..]);
            agg.extend_from_slice(body);
        }
    }
    write_atomic(&out.join(RESULTS_FILE), &agg)?;
    let report = SweepReport { cells: statuses };
    write_atomic(&out.join("sweep.json"), &serde_json::to_vec_pretty(&report)?)?;
    Ok(report)
}

fn cell_complete(dir: &Path, cfg_bytes: &[u8]) -> bool {
    dir.join(RESULTS_FILE).is_file() && fs::read(dir.join("config.json")).is_ok_and(|b| b == cfg_bytes)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifyReport {
    pub replicas: usize,
    pub rounds: usize,
}

/// Replays every `rounds-<r>.ndjson` in `dir` through the state machine and
/// compares with `statuses-<r>.csv`; a mismatch is an invariant error.
pub fn verify_algorithm(cfg: &ExperimentConfig, dir: &Path) -> Result<VerifyReport> {
    cfg.validate()?;
    if cfg.kind != Kind::Algorithm {
        return invalid("verify needs an algorithm config");
    }
    let (spec, typ) = kinds::algorithm_setup(cfg)?;
    let alg = spec.params(&typ)?;
    let cache = TrajCache::new(typ, RngStream::new(cfg.seed));
    let mut rounds = 0;
    for r in 0..cfg.replicas {
        let rec_path = dir.join(kinds::rounds_file(r));
        let records = read_round_records(std::io::BufReader::new(fs::File::open(&rec_path)?))?;
        let want = read_statuses(std::io::BufReader::new(fs::File::open(dir.join(kinds::statuses_file(r)))?))?;
        let got = replay_statuses(cfg.dim()?, spec.window, &alg, &cache, &records)?;
        if got != want {
            let diff = got.iter().filter(|(k, v)| want.get(*k) != Some(*v)).count();
            return Err(Error::Invariant(format!("replica {r}: replay differs from the stored status map at {diff} vertices")));
        }
        rounds += records.iter().filter(|x| x.position.is_some()).count();
    }
    Ok(VerifyReport { replicas: cfg.replicas, rounds })
}
