//! Declarative experiment runner: specs, replicate ensembles, result tables.
//!
//! A run is described by a flat [`ExperimentSpec`] and produces one or more
//! [`ResultTable`]s plus, for `verify-bounds`, concentration reports and, for
//! `oracle-equivalence`, two-sample tests. Every replicate draws its own
//! seed from `(master seed, kind, n, replicate)`, so tables do not depend on
//! the thread count or the execution order.

use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::concentration::{
    self, azuma_ensemble, cluster_sizes, domination_check, envelope_check, last_passage_check, poisson_tail_check,
    simulate_coupled, BranchingVariant, ConcError, LastPassageConfig, PoissonCounter, ReducedChain, TailBoundReport,
};
use crate::model::{
    early_phase_agent_clock, early_phase_graphical, simulate_agent_clock, AgentClock, Configuration, InteractionEvent,
    NoObserver, Observer, Simulator, DEFAULT_GRAPHICAL_CAP,
};
use crate::observables::{Cadence, Observables, SeriesRow};
use crate::ode::{integrate, OdeError, OdeSystem, Trajectory, DEFAULT_STEP};
use crate::reduced::{gillespie_step, simulate_to_consensus, two_word_configuration, RateMode, ReducedState, Winner};
use crate::rng::{labelled_seed, replicate_seed, rng_from_seed, GENERATOR_NAME};
use crate::stats::{self, fit_log_slope, LogFit, StatsError, Summary};

/// Environment variable holding the worker count (0 or unset: all cores).
pub const THREADS_ENV: &str = "NG_THREADS";

/// Significance level of the equivalence tests.
pub const EQUIVALENCE_ALPHA: f64 = 0.01;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("no column named {0:?}")]
    MissingColumn(String),
    #[error("malformed table: {0}")]
    MalformedTable(String),
    #[error("thread pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Concentration(#[from] ConcError),
    #[error(transparent)]
    Ode(#[from] OdeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    /// Full model from all-mute agents until nobody is mute.
    EarlyPhase,
    /// Full model on a fixed horizon with word counts and snapshots.
    MiddlePhase,
    /// Two-word chain until consensus.
    FinalPhase,
    /// Two-word chain against the mean-field ODE.
    OdeCompare,
    /// Concentration and branching checks.
    VerifyBounds,
    /// Scheduler and projection equivalence tests.
    OracleEquivalence,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 6] = [
        ExperimentKind::EarlyPhase,
        ExperimentKind::MiddlePhase,
        ExperimentKind::FinalPhase,
        ExperimentKind::OdeCompare,
        ExperimentKind::VerifyBounds,
        ExperimentKind::OracleEquivalence,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::EarlyPhase => "early-phase",
            ExperimentKind::MiddlePhase => "middle-phase",
            ExperimentKind::FinalPhase => "final-phase",
            ExperimentKind::OdeCompare => "ode-compare",
            ExperimentKind::VerifyBounds => "verify-bounds",
            ExperimentKind::OracleEquivalence => "oracle-equivalence",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentKind {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| HarnessError::InvalidSpec(format!("unknown experiment kind {s:?}")))
    }
}

fn half() -> f64 {
    0.5
}

/// Flat key/value description of one experiment.
///
/// | key | meaning | default |
/// |---|---|---|
/// | `kind` | experiment kind | required |
/// | `n_grid` | strictly increasing population sizes | required |
/// | `reps` | replicates per n (paths per cell for `verify-bounds`) | required |
/// | `seed` | master seed | required |
/// | `mode` | `exact` or `normalized` rate denominator | `exact` |
/// | `x0`, `y0` | initial fractions of A-only and B-only agents | `0.5`, `0.5` |
/// | `horizon` | time horizon | per kind |
/// | `window_start` | start of the middle-phase window | `0.6 ln n` |
/// | `snapshot_dt` | snapshot spacing for middle-phase series | none |
/// | `out` | output directory | none |
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub n_grid: Vec<u64>,
    pub reps: u64,
    pub seed: u64,
    #[serde(default)]
    pub mode: RateMode,
    #[serde(default = "half")]
    pub x0: f64,
    #[serde(default = "half")]
    pub y0: f64,
    #[serde(default)]
    pub horizon: Option<f64>,
    #[serde(default)]
    pub window_start: Option<f64>,
    #[serde(default)]
    pub snapshot_dt: Option<f64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

impl ExperimentSpec {
    pub fn new(kind: ExperimentKind, n_grid: Vec<u64>, reps: u64, seed: u64) -> Self {
        Self {
            kind,
            n_grid,
            reps,
            seed,
            mode: RateMode::default(),
            x0: 0.5,
            y0: 0.5,
            horizon: None,
            window_start: None,
            snapshot_dt: None,
            out: None,
        }
    }

    pub fn from_json(s: &str) -> Result<Self, HarnessError> {
        let spec: Self = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::InvalidSpec(m));
        if self.reps == 0 {
            return bad("reps must be at least 1".into());
        }
        if self.n_grid.is_empty() {
            return bad("n_grid is empty".into());
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("n_grid must be strictly increasing, got {:?}", self.n_grid));
        }
        if self.n_grid[0] < 2 {
            return bad(format!("population sizes must be at least 2, got {}", self.n_grid[0]));
        }
        if !(self.x0 >= 0.0 && self.y0 >= 0.0 && self.x0 + self.y0 <= 1.0) {
            return bad(format!("initial fractions ({}, {}) must be non-negative with sum <= 1", self.x0, self.y0));
        }
        for (key, v) in
            [("horizon", self.horizon), ("window_start", self.window_start), ("snapshot_dt", self.snapshot_dt)]
        {
            if let Some(v) = v {
                if !(v.is_finite() && v >= 0.0) {
                    return bad(format!("{key} must be finite and non-negative, got {v}"));
                }
            }
        }
        if self.snapshot_dt == Some(0.0) {
            return bad("snapshot_dt must be positive".into());
        }
        Ok(())
    }

    /// SHA-256 of the compact JSON form, hex encoded.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("spec serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Initial two-word state at size `n`; `(X, Y)` are rounded, `Z` takes the rest.
    pub fn initial_state(&self, n: u64) -> ReducedState {
        let x = ((self.x0 * n as f64).round() as u64).min(n);
        let y = ((self.y0 * n as f64).round() as u64).min(n - x);
        ReducedState::new(x, y, n - x - y)
    }
}

/// One table row; `values` follows the table's `columns`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub seed: u64,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Row>,
}

impl ResultTable {
    pub fn new(name: impl Into<String>, columns: &[&str]) -> Self {
        Self { name: name.into(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, seed: u64, values: Vec<f64>) {
        debug_assert_eq!(values.len(), self.columns.len());
        self.rows.push(Row { seed, values });
    }

    pub fn column_index(&self, name: &str) -> Result<usize, HarnessError> {
        self.columns.iter().position(|c| c == name).ok_or_else(|| HarnessError::MissingColumn(name.into()))
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>, HarnessError> {
        let i = self.column_index(name)?;
        Ok(self.rows.iter().map(|r| r.values[i]).collect())
    }

    /// Rows whose column `name` equals `value`.
    pub fn filter_eq(&self, name: &str, value: f64) -> Result<ResultTable, HarnessError> {
        let i = self.column_index(name)?;
        Ok(ResultTable {
            name: self.name.clone(),
            columns: self.columns.clone(),
            rows: self.rows.iter().filter(|r| r.values[i] == value).cloned().collect(),
        })
    }

    /// CSV with a leading `seed` column.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), HarnessError> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["seed".to_string()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header)?;
        for row in &self.rows {
            let mut rec = vec![row.seed.to_string()];
            rec.extend(row.values.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(name: impl Into<String>, input: R) -> Result<Self, HarnessError> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.clone();
        if header.get(0) != Some("seed") {
            return Err(HarnessError::MalformedTable("first column must be `seed`".into()));
        }
        let mut table = ResultTable {
            name: name.into(),
            columns: header.iter().skip(1).map(String::from).collect(),
            rows: Vec::new(),
        };
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let parse_err =
                |field: &str| HarnessError::MalformedTable(format!("row {}: cannot parse {field:?}", line + 1));
            let seed = rec[0].parse::<u64>().map_err(|_| parse_err(&rec[0]))?;
            let values = rec
                .iter()
                .skip(1)
                .map(|f| f.parse::<f64>().map_err(|_| parse_err(f)))
                .collect::<Result<Vec<_>, _>>()?;
            table.rows.push(Row { seed, values });
        }
        Ok(table)
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }
}

/// Least squares of `mean(y | x)` against `ln x` over the table.
pub fn fit_table(table: &ResultTable, x: &str, y: &str) -> Result<LogFit, HarnessError> {
    let xs = table.column(x)?;
    let ys = table.column(y)?;
    let points: Vec<(f64, f64)> = xs.into_iter().zip(ys).filter(|(_, y)| y.is_finite()).collect();
    Ok(fit_log_slope(&points)?)
}

/// Summary statistics of each named column.
pub fn summarize_table(table: &ResultTable, columns: &[&str]) -> Result<Vec<(String, Summary)>, HarnessError> {
    if columns.is_empty() {
        return Err(StatsError::Empty.into());
    }
    columns
        .iter()
        .map(|&c| {
            let v = table.column(c)?;
            Ok((c.to_string(), stats::summarize(&v)?))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub n: u64,
    pub replicate: u64,
    pub seed: u64,
    pub error: String,
}

/// A two-sample test between two oracles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatTest {
    pub name: String,
    pub n: u64,
    pub statistic: f64,
    pub p_value: f64,
    pub samples: u64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub spec: ExperimentSpec,
    pub spec_digest: String,
    pub seed: u64,
    pub build_id: String,
    pub generator: String,
    pub threads: usize,
    pub created_unix: u64,
    pub failures: Vec<ReplicateFailure>,
    pub tests: Vec<StatTest>,
}

/// Everything produced by [`run`].
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub meta: RunMeta,
    pub tables: Vec<ResultTable>,
    /// Reports whose violations fail the run.
    pub reports: Vec<TailBoundReport>,
    /// Reports printed for reference only.
    pub informational: Vec<TailBoundReport>,
    pub trajectory: Option<Trajectory>,
}

impl RunOutput {
    pub fn table(&self, name: &str) -> Option<&ResultTable> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn passed(&self) -> bool {
        self.meta.failures.is_empty()
            && self.meta.tests.iter().all(|t| t.pass)
            && self.reports.iter().all(TailBoundReport::all_pass)
    }

    /// Writes every artifact into `dir`, each file atomically.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
        std::fs::create_dir_all(dir)?;
        let kind = self.meta.spec.kind.as_str();
        let mut written = Vec::new();
        for (i, table) in self.tables.iter().enumerate() {
            let file = if i == 0 { format!("{kind}.csv") } else { format!("{kind}-{}.csv", table.name) };
            written.push(write_atomic(&dir.join(file), |w| table.write_csv(w))?);
        }
        written.push(write_atomic(&dir.join(format!("{kind}.meta.json")), |w| {
            Ok(serde_json::to_writer_pretty(w, &self.meta)?)
        })?);
        if !self.reports.is_empty() || !self.informational.is_empty() {
            #[derive(Serialize)]
            struct Reports<'a> {
                gating: &'a [TailBoundReport],
                informational: &'a [TailBoundReport],
            }
            let body = Reports { gating: &self.reports, informational: &self.informational };
            written.push(write_atomic(&dir.join(format!("{kind}-reports.json")), |w| {
                Ok(serde_json::to_writer_pretty(w, &body)?)
            })?);
        }
        if let Some(traj) = &self.trajectory {
            written.push(write_atomic(&dir.join(format!("{kind}-ode.csv")), |w| Ok(traj.write_csv(w)?))?);
        }
        Ok(written)
    }
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(
    path: &Path,
    body: impl FnOnce(&mut std::io::BufWriter<&mut tempfile::NamedTempFile>) -> Result<(), HarnessError>,
) -> Result<PathBuf, HarnessError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = std::io::BufWriter::new(&mut tmp);
        body(&mut w)?;
        w.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(path.to_path_buf())
}

pub fn build_id() -> String {
    let base = format!("{}-{}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION"));
    match option_env!("NG_BUILD_ID") {
        Some(id) => format!("{base}+{id}"),
        None => base,
    }
}

/// Worker count from [`THREADS_ENV`].
pub fn configured_threads() -> Result<usize, HarnessError> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(0),
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| HarnessError::InvalidSpec(format!("{THREADS_ENV} must be a non-negative integer, got {v:?}"))),
    }
}

/// Runs the experiment, writing outputs when `spec.out` is set.
pub fn run(spec: &ExperimentSpec) -> Result<RunOutput, HarnessError> {
    spec.validate()?;
    let threads = configured_threads()?;
    let pool =
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| HarnessError::Pool(e.to_string()))?;
    let mut output = pool.install(|| execute(spec))?;
    output.meta.threads = pool.current_num_threads();
    if let Some(dir) = &spec.out {
        output.write(dir)?;
    }
    Ok(output)
}

fn execute(spec: &ExperimentSpec) -> Result<RunOutput, HarnessError> {
    let meta = RunMeta {
        spec: spec.clone(),
        spec_digest: spec.digest(),
        seed: spec.seed,
        build_id: build_id(),
        generator: GENERATOR_NAME.into(),
        threads: 0,
        created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        failures: Vec::new(),
        tests: Vec::new(),
    };
    let mut out =
        RunOutput { meta, tables: Vec::new(), reports: Vec::new(), informational: Vec::new(), trajectory: None };
    match spec.kind {
        ExperimentKind::EarlyPhase => early_phase(spec, &mut out),
        ExperimentKind::MiddlePhase => middle_phase(spec, &mut out),
        ExperimentKind::FinalPhase => final_phase(spec, &mut out),
        ExperimentKind::OdeCompare => ode_compare(spec, &mut out)?,
        ExperimentKind::VerifyBounds => verify_bounds(spec, &mut out)?,
        ExperimentKind::OracleEquivalence => oracle_equivalence(spec, &mut out),
    }
    Ok(out)
}

struct Replicate<T> {
    n: u64,
    replicate: u64,
    seed: u64,
    result: Result<T, String>,
}

/// Seed of replicate `rep` at size `n` for stream `label`.
pub fn stream_seed(master: u64, label: &str, n: u64, rep: u64) -> u64 {
    replicate_seed(labelled_seed(master, &format!("{label}/n={n}")), rep)
}

fn ensemble<T: Send>(
    spec: &ExperimentSpec,
    label: &str,
    f: impl Fn(u64, u64, u64) -> Result<T, String> + Sync,
) -> Vec<Replicate<T>> {
    let jobs: Vec<(u64, u64)> = spec.n_grid.iter().flat_map(|&n| (0..spec.reps).map(move |r| (n, r))).collect();
    jobs.into_par_iter()
        .map(|(n, replicate)| {
            let seed = stream_seed(spec.seed, label, n, replicate);
            Replicate { n, replicate, seed, result: f(n, replicate, seed) }
        })
        .collect()
}

fn record_failure<T>(out: &mut RunOutput, r: &Replicate<T>) -> bool {
    match &r.result {
        Ok(_) => true,
        Err(e) => {
            out.meta.failures.push(ReplicateFailure { n: r.n, replicate: r.replicate, seed: r.seed, error: e.clone() });
            false
        }
    }
}

fn early_phase(spec: &ExperimentSpec, out: &mut RunOutput) {
    let reps = ensemble(spec, "early-phase", |n, _, seed| {
        early_phase_agent_clock(n as usize, seed).map_err(|e| e.to_string())
    });
    let mut table = ResultTable::new("early-phase", &["n", "replicate", "X", "T_o", "events"]);
    for r in &reps {
        if record_failure(out, r) {
            let e = r.result.as_ref().unwrap();
            table.push(
                r.seed,
                vec![r.n as f64, r.replicate as f64, e.words_created as f64, e.all_speak_time, e.events as f64],
            );
        }
    }
    out.tables.push(table);
}

/// Tracks `sup | |V_t| − n/2 |` over a closed time window.
struct WindowWatch {
    obs: Observables,
    half: f64,
    start: f64,
    end: f64,
    sup: f64,
}

impl WindowWatch {
    fn deviation(&self) -> f64 {
        (self.obs.ledger().alive_count() as f64 - self.half).abs()
    }
}

impl Observer for WindowWatch {
    fn on_event(&mut self, before: &Configuration, ev: &InteractionEvent) {
        // the pre-event count holds up to ev.time
        if ev.time > self.start {
            self.sup = self.sup.max(self.deviation());
        }
        self.obs.on_event(before, ev);
        if ev.time >= self.start && ev.time <= self.end {
            self.sup = self.sup.max(self.deviation());
        }
    }

    fn on_advance(&mut self, config: &Configuration, t: f64) {
        self.obs.on_advance(config, t);
        if t >= self.start {
            self.sup = self.sup.max(self.deviation());
        }
    }
}

/// Default middle-phase horizon `n^{0.4}`.
pub fn middle_horizon(n: u64) -> f64 {
    (n as f64).powf(0.4)
}

/// Default middle-phase window start `0.6 ln n`.
pub fn middle_window_start(n: u64) -> f64 {
    0.6 * (n as f64).ln()
}

fn middle_phase(spec: &ExperimentSpec, out: &mut RunOutput) {
    let reps = ensemble(spec, "middle-phase", |n, _, seed| {
        let horizon = spec.horizon.unwrap_or_else(|| middle_horizon(n));
        let start = spec.window_start.unwrap_or_else(|| middle_window_start(n));
        let mute = Configuration::mute(n as usize).map_err(|e| e.to_string())?;
        let obs = match spec.snapshot_dt {
            Some(dt) => Observables::with_series(&mute, Cadence::Grid { dt }),
            None => Observables::new(&mute),
        };
        let mut watch = WindowWatch { obs, half: n as f64 / 2.0, start, end: horizon, sup: f64::NAN };
        let cfg = simulate_agent_clock(n as usize, horizon, seed, &mut watch).map_err(|e| e.to_string())?;
        let last = watch.obs.snapshot(cfg.time());
        let series = watch.obs.take_series();
        let sup = if start <= horizon { watch.sup } else { f64::NAN };
        Ok((start, horizon, sup, last, series))
    });
    let mut table = ResultTable::new(
        "middle-phase",
        &["n", "replicate", "window_start", "window_end", "sup_dev", "V", "Vo", "Vx", "S", "A", "Z"],
    );
    let mut snaps = ResultTable::new("snapshots", &["n", "replicate", "t", "V", "Vo", "Vx", "S", "A", "Z"]);
    let row = |r: &SeriesRow| {
        [r.alive as f64, r.created as f64, r.deleted as f64, r.max_cluster as f64, r.agreements as f64, r.mute as f64]
    };
    for r in &reps {
        if !record_failure(out, r) {
            continue;
        }
        let (start, end, sup, last, series) = r.result.as_ref().unwrap();
        let mut v = vec![r.n as f64, r.replicate as f64, *start, *end, *sup];
        v.extend(row(last));
        table.push(r.seed, v);
        for s in series {
            let mut v = vec![r.n as f64, r.replicate as f64, s.t];
            v.extend(row(s));
            snaps.push(r.seed, v);
        }
    }
    out.tables.push(table);
    if spec.snapshot_dt.is_some() {
        out.tables.push(snaps);
    }
}

/// Grid spacing of the cumulative `∫ z` record used for the plateau average.
const PLATEAU_GRID: f64 = 0.01;

/// Cumulative integral of a piecewise-constant path, sampled on a uniform grid.
struct CumulativeIntegral {
    grid: Vec<f64>,
    total: f64,
    last_t: f64,
    last_v: f64,
}

impl CumulativeIntegral {
    fn new(v0: f64) -> Self {
        Self { grid: vec![0.0], total: 0.0, last_t: 0.0, last_v: v0 }
    }

    /// The path jumps to `v` at time `t`.
    fn jump(&mut self, t: f64, v: f64) {
        let mut g = self.grid.len() as f64 * PLATEAU_GRID;
        while g <= t {
            self.grid.push(self.total + self.last_v * (g - self.last_t));
            g = self.grid.len() as f64 * PLATEAU_GRID;
        }
        self.total += self.last_v * (t - self.last_t);
        self.last_t = t;
        self.last_v = v;
    }

    fn at(&self, t: f64) -> f64 {
        let k = (t / PLATEAU_GRID).floor() as usize;
        if k + 1 >= self.grid.len() {
            return self.total + self.last_v * (t - self.last_t);
        }
        let w = t / PLATEAU_GRID - k as f64;
        self.grid[k] + w * (self.grid[k + 1] - self.grid[k])
    }
}

/// Time average of the mixed fraction `z` over the middle third of `[0, T_c]`.
pub fn plateau_average(init: ReducedState, mode: RateMode, seed: u64) -> Result<(f64, f64, Winner, u64), String> {
    let mut integral = CumulativeIntegral::new(init.z_frac());
    let run = simulate_to_consensus(init, mode, &mut rng_from_seed(seed), None, |t, s| {
        if t > 0.0 {
            integral.jump(t, s.z_frac());
        }
    })
    .map_err(|e| e.to_string())?;
    let (a, b) = (run.time / 3.0, 2.0 * run.time / 3.0);
    let avg = if b > a { (integral.at(b) - integral.at(a)) / (b - a) } else { f64::NAN };
    Ok((run.time, avg, run.winner, run.steps))
}

fn final_phase(spec: &ExperimentSpec, out: &mut RunOutput) {
    let reps = ensemble(spec, "final-phase", |n, _, seed| plateau_average(spec.initial_state(n), spec.mode, seed));
    let mut table =
        ResultTable::new("final-phase", &["n", "replicate", "X0", "Y0", "Z0", "T_c", "winner", "steps", "z_mid"]);
    for r in &reps {
        if record_failure(out, r) {
            let (tc, z_mid, winner, steps) = r.result.as_ref().unwrap();
            let s = spec.initial_state(r.n);
            let w = if *winner == Winner::A { 0.0 } else { 1.0 };
            table.push(
                r.seed,
                vec![r.n as f64, r.replicate as f64, s.x as f64, s.y as f64, s.z as f64, *tc, w, *steps as f64, *z_mid],
            );
        }
    }
    out.tables.push(table);
}

/// Default horizon of the ODE comparison.
pub const ODE_COMPARE_HORIZON: f64 = 10.0;

fn fraction_distance(s: &ReducedState, ode: [f64; 2]) -> f64 {
    let n = s.n() as f64;
    let (x, y) = (s.x as f64 / n, s.y as f64 / n);
    let dz = (x + y) - (ode[0] + ode[1]);
    (x - ode[0]).abs().max((y - ode[1]).abs()).max(dz.abs())
}

/// Sup over `[0, horizon]` of the coordinate-wise distance between the chain's
/// type fractions and the `(x, y)` ODE, with the absorption time if reached.
pub fn ode_distance(
    init: ReducedState,
    mode: RateMode,
    traj: &Trajectory,
    horizon: f64,
    seed: u64,
) -> Result<(f64, Option<f64>), String> {
    let mut rng = rng_from_seed(seed);
    let mut s = init;
    let mut t = 0.0;
    let mut sup = fraction_distance(&s, traj.at(0.0));
    while !s.is_absorbing() {
        let before = s;
        let (dt, _) = gillespie_step(&mut s, mode, &mut rng).map_err(|e| e.to_string())?;
        if t + dt > horizon {
            return Ok((sup.max(fraction_distance(&before, traj.at(horizon))), None));
        }
        t += dt;
        let ode = traj.at(t);
        sup = sup.max(fraction_distance(&before, ode)).max(fraction_distance(&s, ode));
    }
    let absorbed = t;
    let mut g = t;
    while g < horizon {
        sup = sup.max(fraction_distance(&s, traj.at(g)));
        g += PLATEAU_GRID;
    }
    Ok((sup.max(fraction_distance(&s, traj.at(horizon))), Some(absorbed)))
}

fn ode_compare(spec: &ExperimentSpec, out: &mut RunOutput) -> Result<(), HarnessError> {
    let horizon = spec.horizon.unwrap_or(ODE_COMPARE_HORIZON);
    let mut trajectories = Vec::new();
    for &n in &spec.n_grid {
        let s = spec.initial_state(n);
        let nf = n as f64;
        trajectories.push(integrate(OdeSystem::Xy, [s.x as f64 / nf, s.y as f64 / nf], DEFAULT_STEP, horizon, 1)?);
    }
    let reps = ensemble(spec, "ode-compare", |n, _, seed| {
        let k = spec.n_grid.iter().position(|&m| m == n).unwrap();
        ode_distance(spec.initial_state(n), spec.mode, &trajectories[k], horizon, seed)
    });
    let mut table = ResultTable::new("ode-compare", &["n", "replicate", "sup_dist", "T_c"]);
    for r in &reps {
        if record_failure(out, r) {
            let (sup, tc) = r.result.as_ref().unwrap();
            table.push(r.seed, vec![r.n as f64, r.replicate as f64, *sup, tc.unwrap_or(f64::NAN)]);
        }
    }
    out.tables.push(table);
    out.trajectory = Some(integrate(OdeSystem::Xy, [spec.x0, spec.y0], DEFAULT_STEP, horizon, 10)?);
    Ok(())
}

/// Parameters of the branching envelope check.
pub const ENVELOPE_M: f64 = 1.0;
pub const ENVELOPE_X: f64 = 16.0;
pub const ENVELOPE_HORIZON: f64 = 100.0;
pub const ENVELOPE_RATES: [f64; 3] = [0.5, 0.9, 1.0];
pub const ENVELOPE_LIMIT: f64 = 0.05;
/// Immigration constant of the dominator.
pub const DOMINATOR_B: f64 = 2.0;
pub const DOMINATION_TIMES: [f64; 2] = [1.0, 5.0];
pub const DOMINATION_PROBS: [f64; 3] = [0.5, 0.9, 0.95];
const BRANCHING_CAP: usize = 10_000_000;

/// Environment clock rate of the cluster-size dominator at size `n`.
pub fn dominator_rate(n: u64) -> f64 {
    1.0 - 2.0 / (n as f64 - 1.0)
}

fn branching_paths(
    variant: BranchingVariant,
    horizon: f64,
    paths: u64,
    seed: u64,
) -> Result<Vec<concentration::BranchingPath>, ConcError> {
    (0..paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_from_seed(replicate_seed(seed, i));
            Ok(simulate_coupled(&[variant], horizon, BRANCHING_CAP, &mut rng)?.pop().unwrap())
        })
        .collect()
}

/// Branching envelope cells for `b = 2` and each clock rate.
pub fn envelope_report(paths: u64, seed: u64) -> Result<TailBoundReport, ConcError> {
    let mut report = TailBoundReport::new("branching-envelope");
    for (i, &r) in ENVELOPE_RATES.iter().enumerate() {
        let ps = branching_paths(
            BranchingVariant::new(DOMINATOR_B, r, false),
            ENVELOPE_HORIZON,
            paths,
            replicate_seed(seed, i as u64),
        )?;
        report.cells.push(envelope_check(&ps, ENVELOPE_M, ENVELOPE_X, ENVELOPE_LIMIT));
    }
    Ok(report)
}

/// Quantile comparison of alive cluster sizes in the full model with dominator populations.
pub fn domination_report(ns: &[u64], runs: u64, seed: u64) -> Result<TailBoundReport, ConcError> {
    let mut report = TailBoundReport::new("cluster-domination");
    for &n in ns {
        let variant = BranchingVariant::new(DOMINATOR_B, dominator_rate(n), false);
        for &t in &DOMINATION_TIMES {
            let s = labelled_seed(seed, &format!("domination/n={n}/t={t}"));
            let clusters: Vec<Vec<u32>> = (0..runs)
                .into_par_iter()
                .map(|i| {
                    let cfg = simulate_agent_clock(n as usize, t, replicate_seed(s, 2 * i), &mut NoObserver)
                        .expect("valid size and horizon");
                    cluster_sizes(&cfg).into_iter().filter(|&c| c > 0).collect()
                })
                .collect();
            let dom: Vec<u64> =
                branching_paths(variant, t, runs, replicate_seed(s, 1))?.iter().map(|p| p.population_at(t)).collect();
            report.cells.extend(domination_check(&clusters, &dom, &DOMINATION_PROBS, t, n as usize)?);
        }
    }
    Ok(report)
}

/// Poisson means and deviations of the tail check.
pub const POISSON_LAMBDAS: [f64; 4] = [1.0, 10.0, 100.0, 1000.0];
pub const POISSON_XS: [f64; 3] = [0.5, 1.0, 2.0];
/// Last-passage times.
pub const LAST_PASSAGE_TIMES: [f64; 3] = [8.0, 12.0, 16.0];

/// Gating and informational concentration reports with `paths` per Monte Carlo cell.
pub fn concentration_suite(
    paths: u64,
    domination_ns: &[u64],
    seed: u64,
) -> Result<(Vec<TailBoundReport>, Vec<TailBoundReport>), ConcError> {
    let mut gating = Vec::new();
    let mut info = Vec::new();

    let mut azuma = TailBoundReport::new("azuma-poisson");
    azuma.cells = azuma_ensemble(
        &PoissonCounter { rate: 1.0 },
        0u64,
        10.0,
        |&k| k as f64,
        1.0,
        &[(0.4, 5.0), (0.25, 4.0), (0.5, 2.0)],
        paths,
        labelled_seed(seed, "azuma-poisson"),
    )?;
    gating.push(azuma);

    let n = 1000u64;
    let nf = n as f64;
    let mut chain = TailBoundReport::new("azuma-reduced-u");
    for (k, init) in [ReducedState::new(n / 2, n / 2, 0), ReducedState::new(400, 300, 300)].into_iter().enumerate() {
        chain.cells.extend(azuma_ensemble(
            &ReducedChain { mode: RateMode::Normalized },
            init,
            5.0,
            |s| s.u(),
            2.0 / nf,
            &[(nf / 8.0, 10.0 / nf), (nf / 4.0, 4.0 / nf)],
            paths,
            replicate_seed(labelled_seed(seed, "azuma-reduced"), k as u64),
        )?);
    }
    gating.push(chain);

    gating.push(poisson_tail_check(&POISSON_LAMBDAS, &POISSON_XS, true, paths, labelled_seed(seed, "poisson-tail"))?);

    let lp_seed = labelled_seed(seed, "last-passage");
    gating.push(last_passage_check(&LastPassageConfig::new(1.0, 0.5, LAST_PASSAGE_TIMES.to_vec(), paths, lp_seed))?);
    let mut wide = LastPassageConfig::new(1.0, 0.5, LAST_PASSAGE_TIMES.to_vec(), paths, lp_seed);
    wide.kappa = 1.0;
    let mut wide_report = last_passage_check(&wide)?;
    wide_report.check = "last-passage-kappa-1".into();
    info.push(wide_report);

    for report in concentration::appendix_inequality_checks() {
        if report.check.ends_with("-corrected") {
            info.push(report);
        } else {
            gating.push(report);
        }
    }

    gating.push(envelope_report(paths.min(1000), labelled_seed(seed, "envelope"))?);
    gating.push(domination_report(domination_ns, paths.min(1000), labelled_seed(seed, "domination"))?);
    Ok((gating, info))
}

fn verify_bounds(spec: &ExperimentSpec, out: &mut RunOutput) -> Result<(), HarnessError> {
    let (gating, info) = concentration_suite(spec.reps, &spec.n_grid, spec.seed)?;
    let mut table = ResultTable::new("verify-bounds", &["report", "gating", "cells", "violations"]);
    for (i, (r, g)) in gating.iter().map(|r| (r, 1.0)).chain(info.iter().map(|r| (r, 0.0))).enumerate() {
        table.push(spec.seed, vec![i as f64, g, r.cells.len() as f64, r.violations() as f64]);
    }
    out.tables.push(table);
    out.reports = gating;
    out.informational = info;
    Ok(())
}

/// Consensus time of the full model started from the two-word configuration of `init`.
pub fn full_model_consensus(init: ReducedState, seed: u64) -> Result<f64, String> {
    let (cfg, _, _) = two_word_configuration(init).map_err(|e| e.to_string())?;
    let clock = AgentClock::new(cfg.n(), rng_from_seed(seed)).map_err(|e| e.to_string())?;
    let mut sim = Simulator::new(cfg, clock);
    sim.run_to_consensus(f64::INFINITY, &mut NoObserver).map(|c| c.time).map_err(|e| e.to_string())
}

fn oracle_equivalence(spec: &ExperimentSpec, out: &mut RunOutput) {
    let reps = ensemble(spec, "oracle-equivalence", |n, rep, _| {
        let agent = early_phase_agent_clock(n as usize, stream_seed(spec.seed, "agent-clock", n, rep))
            .map_err(|e| e.to_string())?;
        let graph =
            early_phase_graphical(n as usize, stream_seed(spec.seed, "graphical", n, rep), DEFAULT_GRAPHICAL_CAP)
                .map_err(|e| e.to_string())?;
        let init = spec.initial_state(n);
        let full = full_model_consensus(init, stream_seed(spec.seed, "full-consensus", n, rep))?;
        let reduced = simulate_to_consensus(
            init,
            spec.mode,
            &mut rng_from_seed(stream_seed(spec.seed, "reduced-consensus", n, rep)),
            None,
            |_, _| {},
        )
        .map_err(|e| e.to_string())?;
        Ok([agent.words_created as f64, graph.words_created as f64, full, reduced.time])
    });
    let mut table = ResultTable::new(
        "oracle-equivalence",
        &["n", "replicate", "X_agent", "X_graphical", "T_c_full", "T_c_reduced"],
    );
    for r in &reps {
        if record_failure(out, r) {
            let mut v = vec![r.n as f64, r.replicate as f64];
            v.extend(r.result.as_ref().unwrap());
            table.push(r.seed, v);
        }
    }
    for &n in &spec.n_grid {
        let sub = table.filter_eq("n", n as f64).expect("column exists");
        let col = |c: &str| sub.column(c).expect("column exists");
        let (xa, xg) = (col("X_agent"), col("X_graphical"));
        let samples = xa.len() as u64;
        let ca = stats::counts(xa.iter().map(|&v| v as usize));
        let cg = stats::counts(xg.iter().map(|&v| v as usize));
        let push = |out: &mut RunOutput, name: &str, res: Result<stats::TestResult, StatsError>| {
            let (statistic, p_value) = res.map(|r| (r.statistic, r.p_value)).unwrap_or((f64::NAN, f64::NAN));
            out.meta.tests.push(StatTest {
                name: name.into(),
                n,
                statistic,
                p_value,
                samples,
                pass: p_value > EQUIVALENCE_ALPHA,
            });
        };
        push(out, "words-created-agent-vs-graphical", stats::chi_square_two_sample(&ca, &cg));
        push(out, "consensus-time-full-vs-reduced", stats::ks_two_sample(&col("T_c_full"), &col("T_c_reduced")));
    }
    out.tables.push(table);
}
