//! Long-running experiment service.
//!
//! Every experiment owns an append-only JSONL event log `<data_dir>/<id>.jsonl`.
//! An event is written (and optionally synced) before the in-memory state
//! moves, so a snapshot never reflects an event that is not in the log, and
//! replaying the log rebuilds the live state bit for bit. Periodic snapshot
//! files `<id>.snapshot.json` record the state together with the log offset
//! they cover, which keeps recovery fast on long logs.
//!
//! Writes to one experiment are serialized. Reads take a short read lock on
//! the committed state, so they never observe a half-applied batch.
//! [`Service::overview`] reads each experiment's committed snapshot in turn:
//! every row is consistent, but rows may come from slightly different moments.

mod config;
mod http;
mod log;

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard, PoisonError, RwLock, RwLockReadGuard, RwLockWriteGuard};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::avcore::{
    chance_to_beat, update_state, validate_levels, Arm, AvState, CiBand, LevelBand, MixtureSpec, Observation,
    StreamModel, DEFAULT_LEVELS,
};
use crate::multitest::{fcr_adjusted_levels, qvalues, PValueVector, Procedure};

pub use config::{ConfigError, ServeConfig, ENV_DATA_DIR, ENV_LISTEN};
pub use http::{router, serve, serve_on, ServeError};
pub use log::{replay_log, LogPosition, ReplayError, ReplayErrorKind, Replayed};

/// Printed in every overview response.
pub const OVERVIEW_WARNING: &str = "Corrections are computed from the current p-values of all experiments. \
No stopping rule is enforced across experiments: stopping experiments at data-dependent times can move \
the realized error rate above the nominal level for the sequential procedures.";

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("experiment {0:?} not found")]
    NotFound(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {source}")]
    Corrupt {
        path: String,
        #[source]
        source: ReplayError,
    },
}

impl From<crate::Error> for ServiceError {
    fn from(e: crate::Error) -> Self {
        ServiceError::Validation(e.to_string())
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ServiceError + '_ {
    move |source| ServiceError::Io { path: path.to_path_buf(), source }
}

/// Identifiers double as file names: ASCII letters, digits, `-`, `_` and `.`,
/// not starting with `.`, at most 128 bytes.
pub fn validate_id(id: &str) -> Result<(), ServiceError> {
    let ok = !id.is_empty()
        && id.len() <= 128
        && !id.starts_with('.')
        && id.bytes().all(|b| b.is_ascii_alphanumeric() || matches!(b, b'-' | b'_' | b'.'));
    if ok {
        Ok(())
    } else {
        Err(ServiceError::Validation(format!(
            "experiment id {id:?} must be 1-128 characters of [A-Za-z0-9._-] and not start with '.'"
        )))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub id: String,
    pub model: StreamModel,
    pub mixture: MixtureSpec,
    pub levels: Vec<f64>,
    pub created_at: DateTime<Utc>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ServiceError> {
        validate_id(&self.id)?;
        self.model.validate()?;
        self.mixture.validate()?;
        validate_levels(&self.levels)?;
        Ok(())
    }
}

/// Creation request. Missing fields take the service defaults; `mixture`
/// wins over `tau_sq`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewExperiment {
    pub id: String,
    pub model: StreamModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixture: Option<MixtureSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_sq: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_at: Option<DateTime<Utc>>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl NewExperiment {
    pub fn new(id: impl Into<String>, model: StreamModel) -> Self {
        Self {
            id: id.into(),
            model,
            mixture: None,
            tau_sq: None,
            levels: None,
            created_at: None,
            metadata: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub seq: u64,
    pub experiment_id: String,
    pub event: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    Created { config: ExperimentConfig },
    Observations { batch: Vec<Observation> },
    Stopped { decision: DecisionRecord },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Running,
    Stopped,
}

/// Point-in-time view of one experiment, derived from its event prefix up to `as_of`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub experiment_id: String,
    pub status: Status,
    pub as_of: u64,
    pub m: u64,
    pub n: u64,
    pub control_mean: Option<f64>,
    pub treatment_mean: Option<f64>,
    /// `None` until the variance estimate is defined ("no data"); the
    /// intervals stay unbounded until then.
    pub effect_estimate: Option<f64>,
    pub p_value: f64,
    pub chance_to_beat: f64,
    pub ci_by_level: Vec<LevelBand>,
    pub empty_ci: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub experiment_id: String,
    /// Sequence number of the stop event.
    pub stopped_at: u64,
    pub alpha: f64,
    pub rejected: bool,
    pub actor: String,
    pub reason: String,
    pub decided_at: DateTime<Utc>,
    pub snapshot: Snapshot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryPoint {
    pub seq: u64,
    pub p_value: f64,
    pub chance_to_beat: f64,
    pub ci_by_level: Vec<LevelBand>,
}

/// Everything replay reconstructs for one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentState {
    pub config: ExperimentConfig,
    pub av: AvState,
    pub status: Status,
    pub as_of: u64,
    pub decision: Option<DecisionRecord>,
    pub history: Vec<HistoryPoint>,
}

/// A validated event whose effect has been computed but not yet committed.
enum Pending {
    Observations(AvState),
    Stopped(Box<DecisionRecord>),
}

impl ExperimentState {
    fn created(seq: u64, config: &ExperimentConfig) -> Result<Self, ServiceError> {
        if seq != 1 {
            return Err(ServiceError::Validation(format!("created event must have seq 1, got {seq}")));
        }
        config.validate()?;
        let av = AvState::new(&config.levels)?;
        let mut state = Self {
            config: config.clone(),
            av,
            status: Status::Running,
            as_of: seq,
            decision: None,
            history: Vec::new(),
        };
        state.history.push(state.history_point());
        Ok(state)
    }

    pub fn id(&self) -> &str {
        &self.config.id
    }

    pub fn snapshot(&self) -> Snapshot {
        let stats = &self.av.stats;
        Snapshot {
            experiment_id: self.config.id.clone(),
            status: self.status,
            as_of: self.as_of,
            m: stats.m,
            n: stats.n,
            control_mean: stats.control_mean(),
            treatment_mean: stats.treatment_mean(),
            effect_estimate: stats.effect_and_variance(&self.config.model).map(|(e, _)| e),
            p_value: self.av.p_value,
            chance_to_beat: chance_to_beat(self.av.p_value),
            ci_by_level: self.av.ci_by_level.clone(),
            empty_ci: self.av.has_empty_ci(),
        }
    }

    fn history_point(&self) -> HistoryPoint {
        HistoryPoint {
            seq: self.as_of,
            p_value: self.av.p_value,
            chance_to_beat: chance_to_beat(self.av.p_value),
            ci_by_level: self.av.ci_by_level.clone(),
        }
    }

    fn ensure_running(&self) -> Result<(), ServiceError> {
        match self.status {
            Status::Running => Ok(()),
            Status::Stopped => Err(ServiceError::Conflict(format!("experiment {:?} is stopped", self.config.id))),
        }
    }

    /// The decision a stop at `alpha` would record as event `seq`.
    fn decision(&self, seq: u64, alpha: f64, actor: String, reason: String, now: DateTime<Utc>) -> DecisionRecord {
        let mut frozen = self.snapshot();
        frozen.status = Status::Stopped;
        frozen.as_of = seq;
        DecisionRecord {
            experiment_id: self.config.id.clone(),
            stopped_at: seq,
            alpha,
            rejected: self.av.p_value <= alpha,
            actor,
            reason,
            decided_at: now,
            snapshot: frozen,
        }
    }

    fn prepare(&self, seq: u64, event: &EventKind) -> Result<Pending, ServiceError> {
        if seq != self.as_of + 1 {
            return Err(ServiceError::Validation(format!("expected seq {}, got {seq}", self.as_of + 1)));
        }
        match event {
            EventKind::Created { .. } => {
                Err(ServiceError::Conflict(format!("experiment {:?} already exists", self.id())))
            }
            EventKind::Observations { batch } => {
                self.ensure_running()?;
                Ok(Pending::Observations(update_state(&self.av, batch, &self.config.model, &self.config.mixture)?))
            }
            EventKind::Stopped { decision } => {
                self.ensure_running()?;
                let expected = self.decision(
                    seq,
                    decision.alpha,
                    decision.actor.clone(),
                    decision.reason.clone(),
                    decision.decided_at,
                );
                if *decision != expected {
                    return Err(ServiceError::Validation("stop decision does not match the experiment state".into()));
                }
                Ok(Pending::Stopped(Box::new(expected)))
            }
        }
    }

    fn commit(&mut self, seq: u64, pending: Pending) {
        self.as_of = seq;
        match pending {
            Pending::Observations(av) => {
                self.av = av;
                self.history.push(self.history_point());
            }
            Pending::Stopped(decision) => {
                self.status = Status::Stopped;
                self.decision = Some(*decision);
            }
        }
    }

    /// Applies a logged event during replay; `state` is untouched on error.
    fn apply(state: &mut Option<Self>, record: &EventRecord) -> Result<(), ServiceError> {
        match (state.as_mut(), &record.event) {
            (None, EventKind::Created { config }) => {
                if config.id != record.experiment_id {
                    return Err(ServiceError::Validation("created event id does not match its config".into()));
                }
                *state = Some(Self::created(record.seq, config)?);
                Ok(())
            }
            (None, _) => Err(ServiceError::Validation("log must start with a created event".into())),
            (Some(current), event) => {
                if record.experiment_id != current.config.id {
                    return Err(ServiceError::Validation(format!(
                        "event for {:?} in the log of {:?}",
                        record.experiment_id, current.config.id
                    )));
                }
                let pending = current.prepare(record.seq, event)?;
                current.commit(record.seq, pending);
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryPage {
    pub experiment_id: String,
    pub after: u64,
    pub points: Vec<HistoryPoint>,
    /// Pass back as `after` to fetch only newer points.
    pub cursor: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverviewQuery {
    pub alpha: f64,
    pub procedure: Procedure,
    pub fcr: bool,
    /// Experiments whose intervals are reported whatever the rejections (the set J).
    pub select: Vec<String>,
}

impl OverviewQuery {
    pub fn new(alpha: f64, procedure: Procedure) -> Self {
        Self { alpha, procedure, fcr: false, select: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverviewRow {
    pub id: String,
    pub status: Status,
    pub p_value: f64,
    pub q_value: f64,
    pub rejected: bool,
    /// In J or rejected.
    pub selected: bool,
    /// `1 − α` without FCR correction, the corrected level with it.
    pub required_level: f64,
    /// Nearest stored level at or above `required_level`; `None` when every
    /// stored level is lower.
    pub ci_level: Option<f64>,
    pub ci: Option<CiBand>,
    pub as_of: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Overview {
    pub alpha: f64,
    pub procedure: Procedure,
    pub fcr: bool,
    pub m: usize,
    pub warning: String,
    pub rows: Vec<OverviewRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceOptions {
    pub data_dir: PathBuf,
    pub default_levels: Vec<f64>,
    pub default_tau_sq: f64,
    /// Write a snapshot file after this many events per experiment; 0 disables.
    pub snapshot_every: u64,
    /// `fsync` each appended event.
    pub sync: bool,
}

impl ServiceOptions {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        Self {
            data_dir: data_dir.into(),
            default_levels: DEFAULT_LEVELS.to_vec(),
            default_tau_sq: 1.0,
            snapshot_every: 1000,
            sync: true,
        }
    }
}

struct LogWriter {
    file: File,
    path: PathBuf,
    len: u64,
    since_snapshot: u64,
}

impl LogWriter {
    fn append(&mut self, record: &EventRecord, sync: bool) -> Result<(), ServiceError> {
        let mut line = serde_json::to_vec(record).map_err(|e| ServiceError::Validation(e.to_string()))?;
        line.push(b'\n');
        let written = self.file.write_all(&line).and_then(|_| if sync { self.file.sync_data() } else { Ok(()) });
        if let Err(e) = written {
            // Leave no partial record behind; recovery would trim it anyway.
            let _ = self.file.set_len(self.len);
            return Err(io_err(&self.path)(e));
        }
        self.len += line.len() as u64;
        self.since_snapshot += 1;
        Ok(())
    }
}

struct Experiment {
    writer: Mutex<LogWriter>,
    state: RwLock<ExperimentState>,
}

#[derive(Serialize, Deserialize)]
struct SnapshotFile {
    log_offset: u64,
    state: ExperimentState,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(PoisonError::into_inner)
}

fn read<T>(l: &RwLock<T>) -> RwLockReadGuard<'_, T> {
    l.read().unwrap_or_else(PoisonError::into_inner)
}

fn write<T>(l: &RwLock<T>) -> RwLockWriteGuard<'_, T> {
    l.write().unwrap_or_else(PoisonError::into_inner)
}

pub struct Service {
    opts: ServiceOptions,
    experiments: RwLock<BTreeMap<String, Arc<Experiment>>>,
}

impl Service {
    /// Opens the data directory and recovers every experiment in it.
    ///
    /// A torn final record (no trailing newline, as left by a crash mid-write)
    /// is cut off. Any other damage fails with its position.
    pub fn open(opts: ServiceOptions) -> Result<Self, ServiceError> {
        validate_levels(&opts.default_levels)?;
        MixtureSpec::centered(opts.default_tau_sq)?;
        let dir = opts.data_dir.clone();
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let mut experiments = BTreeMap::new();
        let mut entries: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(io_err(&dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        entries.sort();
        for path in entries {
            let Some(id) = path.file_stem().and_then(|s| s.to_str()).map(str::to_string) else { continue };
            if let Some(exp) = Self::recover(&dir, &id, &path)? {
                experiments.insert(id, Arc::new(exp));
            }
        }
        Ok(Self { opts, experiments: RwLock::new(experiments) })
    }

    pub fn options(&self) -> &ServiceOptions {
        &self.opts
    }

    fn log_path(&self, id: &str) -> PathBuf {
        self.opts.data_dir.join(format!("{id}.jsonl"))
    }

    fn snapshot_path(dir: &Path, id: &str) -> PathBuf {
        dir.join(format!("{id}.snapshot.json"))
    }

    fn recover(dir: &Path, id: &str, path: &Path) -> Result<Option<Experiment>, ServiceError> {
        let bytes = fs::read(path).map_err(io_err(path))?;
        let from_snapshot = fs::read(Self::snapshot_path(dir, id))
            .ok()
            .and_then(|b| serde_json::from_slice::<SnapshotFile>(&b).ok())
            .filter(|s| s.state.config.id == id)
            .and_then(|s| log::replay_from(Some(s.state), &bytes, s.log_offset).ok())
            .filter(|r| r.valid_len == bytes.len() as u64);
        let replayed = match from_snapshot {
            Some(r) => r,
            None => match replay_log(&bytes) {
                Ok(r) => r,
                Err(e) if e.kind == ReplayErrorKind::Truncated => {
                    tracing::warn!(log = %path.display(), at = e.position.byte_offset, "cutting torn final record");
                    let f = OpenOptions::new().write(true).open(path).map_err(io_err(path))?;
                    f.set_len(e.valid_len).and_then(|_| f.sync_all()).map_err(io_err(path))?;
                    Replayed { state: e.recovered.map(|b| *b), events: e.events, valid_len: e.valid_len }
                }
                Err(e) => return Err(ServiceError::Corrupt { path: path.display().to_string(), source: e }),
            },
        };
        let Some(state) = replayed.state else {
            // Crash between creating the file and writing the first record.
            fs::remove_file(path).map_err(io_err(path))?;
            return Ok(None);
        };
        if state.config.id != id {
            return Err(ServiceError::Validation(format!(
                "log {} holds experiment {:?}",
                path.display(),
                state.config.id
            )));
        }
        let file = OpenOptions::new().append(true).open(path).map_err(io_err(path))?;
        let writer = LogWriter { file, path: path.to_path_buf(), len: replayed.valid_len, since_snapshot: 0 };
        Ok(Some(Experiment { writer: Mutex::new(writer), state: RwLock::new(state) }))
    }

    fn get(&self, id: &str) -> Result<Arc<Experiment>, ServiceError> {
        read(&self.experiments).get(id).cloned().ok_or_else(|| ServiceError::NotFound(id.to_string()))
    }

    pub fn ids(&self) -> Vec<String> {
        read(&self.experiments).keys().cloned().collect()
    }

    pub fn create_experiment(&self, req: NewExperiment) -> Result<Snapshot, ServiceError> {
        let mixture = match (req.mixture, req.tau_sq) {
            (Some(m), _) => m,
            (None, Some(t)) => MixtureSpec::centered(t)?,
            (None, None) => MixtureSpec::centered(self.opts.default_tau_sq)?,
        };
        let config = ExperimentConfig {
            id: req.id,
            model: req.model,
            mixture,
            levels: req.levels.unwrap_or_else(|| self.opts.default_levels.clone()),
            created_at: req.created_at.unwrap_or_else(Utc::now),
            metadata: req.metadata,
        };
        let record = EventRecord { seq: 1, experiment_id: config.id.clone(), event: EventKind::Created { config } };
        let EventKind::Created { config } = &record.event else { unreachable!() };
        let state = ExperimentState::created(1, config)?;

        let mut map = write(&self.experiments);
        let id = state.config.id.clone();
        if map.contains_key(&id) {
            return Err(ServiceError::Conflict(format!("experiment {id:?} already exists")));
        }
        let path = self.log_path(&id);
        let file = match OpenOptions::new().append(true).create_new(true).open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
                return Err(ServiceError::Conflict(format!("a log for {id:?} already exists")))
            }
            Err(e) => return Err(io_err(&path)(e)),
        };
        let mut writer = LogWriter { file, path: path.clone(), len: 0, since_snapshot: 0 };
        if let Err(e) = writer.append(&record, self.opts.sync) {
            let _ = fs::remove_file(&path);
            return Err(e);
        }
        let snapshot = state.snapshot();
        map.insert(id, Arc::new(Experiment { writer: Mutex::new(writer), state: RwLock::new(state) }));
        Ok(snapshot)
    }

    /// Validates, logs, then applies one event built from the current state.
    fn append<F>(&self, id: &str, build: F) -> Result<ExperimentState, ServiceError>
    where
        F: FnOnce(&ExperimentState, u64) -> Result<EventKind, ServiceError>,
    {
        let exp = self.get(id)?;
        let mut writer = lock(&exp.writer);
        let (record, pending) = {
            let state = read(&exp.state);
            let seq = state.as_of + 1;
            let event = build(&state, seq)?;
            let pending = state.prepare(seq, &event)?;
            (EventRecord { seq, experiment_id: id.to_string(), event }, pending)
        };
        writer.append(&record, self.opts.sync)?;
        let committed = {
            let mut state = write(&exp.state);
            state.commit(record.seq, pending);
            state.clone_head()
        };
        if self.opts.snapshot_every > 0 && writer.since_snapshot >= self.opts.snapshot_every {
            self.write_snapshot_file(&exp, &mut writer)?;
        }
        Ok(committed)
    }

    pub fn ingest_batch(&self, id: &str, batch: Vec<Observation>) -> Result<Snapshot, ServiceError> {
        let committed = self.append(id, |_, _| Ok(EventKind::Observations { batch }))?;
        Ok(committed.snapshot())
    }

    pub fn get_snapshot(&self, id: &str) -> Result<Snapshot, ServiceError> {
        Ok(read(&self.get(id)?.state).snapshot())
    }

    /// History points with `seq > after`.
    pub fn history(&self, id: &str, after: u64) -> Result<HistoryPage, ServiceError> {
        let exp = self.get(id)?;
        let state = read(&exp.state);
        let start = state.history.partition_point(|h| h.seq <= after);
        let points = state.history[start..].to_vec();
        let cursor = points.last().map_or(after, |p| p.seq);
        Ok(HistoryPage { experiment_id: id.to_string(), after, points, cursor })
    }

    pub fn stop_experiment(
        &self,
        id: &str,
        alpha: f64,
        actor: &str,
        reason: &str,
    ) -> Result<DecisionRecord, ServiceError> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(ServiceError::Validation(format!("alpha must lie in (0, 1), got {alpha}")));
        }
        if actor.trim().is_empty() {
            return Err(ServiceError::Validation("actor must not be empty".into()));
        }
        let committed = self.append(id, |state, seq| {
            state.ensure_running()?;
            let decision = state.decision(seq, alpha, actor.to_string(), reason.to_string(), Utc::now());
            Ok(EventKind::Stopped { decision })
        })?;
        Ok(committed.decision.expect("stop just committed"))
    }

    pub fn decision(&self, id: &str) -> Result<Option<DecisionRecord>, ServiceError> {
        Ok(read(&self.get(id)?.state).decision.clone())
    }

    /// Full state of one experiment, as replay would rebuild it.
    pub fn state(&self, id: &str) -> Result<ExperimentState, ServiceError> {
        Ok(read(&self.get(id)?.state).clone())
    }

    pub fn overview(&self, query: &OverviewQuery) -> Result<Overview, ServiceError> {
        let experiments: Vec<Arc<Experiment>> = read(&self.experiments).values().cloned().collect();
        let snapshots = experiments.iter().map(|e| read(&e.state).snapshot()).collect();
        compute_overview(snapshots, query)
    }

    fn write_snapshot_file(&self, exp: &Experiment, writer: &mut LogWriter) -> Result<(), ServiceError> {
        let file = SnapshotFile { log_offset: writer.len, state: read(&exp.state).clone() };
        let id = file.state.config.id.clone();
        let path = Self::snapshot_path(&self.opts.data_dir, &id);
        let tmp = path.with_extension("json.tmp");
        let bytes = serde_json::to_vec(&file).map_err(|e| ServiceError::Validation(e.to_string()))?;
        fs::write(&tmp, bytes).and_then(|_| fs::rename(&tmp, &path)).map_err(io_err(&path))?;
        writer.since_snapshot = 0;
        Ok(())
    }

    /// Flushes every log and writes a snapshot file per experiment.
    pub fn checkpoint(&self) -> Result<(), ServiceError> {
        let experiments: Vec<Arc<Experiment>> = read(&self.experiments).values().cloned().collect();
        for exp in experiments {
            let mut writer = lock(&exp.writer);
            writer.file.sync_all().map_err(io_err(&writer.path))?;
            self.write_snapshot_file(&exp, &mut writer)?;
        }
        Ok(())
    }
}

impl ExperimentState {
    /// Clone without the history, for returning from the write path.
    fn clone_head(&self) -> ExperimentState {
        ExperimentState {
            config: self.config.clone(),
            av: self.av.clone(),
            status: self.status,
            as_of: self.as_of,
            decision: self.decision.clone(),
            history: Vec::new(),
        }
    }
}

/// Corrected overview over committed snapshots, in the given order.
///
/// Rejections and q-values follow `query.procedure`. With `fcr` the required
/// levels come from the BH-I selection rule; otherwise every row asks for
/// `1 − α`. Intervals are read at the nearest stored level at or above the
/// required one.
pub fn compute_overview(snapshots: Vec<Snapshot>, query: &OverviewQuery) -> Result<Overview, ServiceError> {
    let alpha = query.alpha;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(ServiceError::Validation(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let mut out = Overview {
        alpha,
        procedure: query.procedure,
        fcr: query.fcr,
        m: snapshots.len(),
        warning: OVERVIEW_WARNING.to_string(),
        rows: Vec::new(),
    };
    if snapshots.is_empty() {
        return Ok(out);
    }
    let p = PValueVector::new(snapshots.iter().map(|s| s.p_value).collect())?;
    let rejected = query.procedure.apply(&p, alpha)?;
    let q = qvalues(&p, query.procedure);
    let levels = if query.fcr { fcr_adjusted_levels(&p, alpha)?.levels } else { vec![1.0 - alpha; snapshots.len()] };
    for (i, s) in snapshots.into_iter().enumerate() {
        let required = levels[i];
        let band = s.ci_by_level.iter().filter(|b| b.level >= required).min_by(|a, b| a.level.total_cmp(&b.level));
        let (ci_level, ci) = (band.map(|b| b.level), band.map(|b| b.band));
        out.rows.push(OverviewRow {
            selected: rejected.contains(i) || query.select.contains(&s.experiment_id),
            rejected: rejected.contains(i),
            p_value: s.p_value,
            q_value: q.values[i],
            required_level: required,
            ci_level,
            ci,
            as_of: s.as_of,
            status: s.status,
            id: s.experiment_id,
        });
    }
    Ok(out)
}

/// One parsed row of the ingestion CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    /// 1-based line number in the input.
    pub line: u64,
    pub timestamp: String,
    pub observation: Observation,
}

/// Error in the ingestion CSV, with its 1-based line number.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct CsvError {
    pub line: u64,
    pub message: String,
}

/// Header of the ingestion CSV, byte for byte.
pub const CSV_HEADER: &str = "timestamp,variation,value";

/// Parses `timestamp,variation,value` rows. The header must match exactly;
/// `variation` is `control` or `treatment`; `value` must be a finite number.
pub fn parse_observations_csv<R: io::Read>(input: R) -> Result<Vec<CsvRow>, CsvError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(input);
    let mut rows = Vec::new();
    let mut record = csv::StringRecord::new();
    let mut seen_header = false;
    loop {
        let line = rdr.position().line();
        let more = rdr
            .read_record(&mut record)
            .map_err(|e| CsvError { line: e.position().map_or(line, |p| p.line()), message: e.to_string() })?;
        if !more {
            break;
        }
        let line = record.position().map_or(line, |p| p.line());
        if !seen_header {
            if record.iter().collect::<Vec<_>>() != CSV_HEADER.split(',').collect::<Vec<_>>() {
                return Err(CsvError { line, message: format!("header must be exactly {CSV_HEADER:?}") });
            }
            seen_header = true;
            continue;
        }
        if record.len() != 3 {
            return Err(CsvError { line, message: format!("expected 3 fields, found {}", record.len()) });
        }
        let arm: Arm = record[1].parse().map_err(|e: crate::Error| CsvError { line, message: e.to_string() })?;
        let value: f64 = record[2]
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| CsvError { line, message: format!("value {:?} is not a finite number", &record[2]) })?;
        rows.push(CsvRow { line, timestamp: record[0].to_string(), observation: Observation { arm, value } });
    }
    if !seen_header {
        return Err(CsvError { line: 1, message: format!("missing header {CSV_HEADER:?}") });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests;
