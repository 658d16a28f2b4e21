//! Annotation waves over HTTP.
//!
//! All state changes are [`Event`]s appended to a line-delimited log; the
//! current [`State`] is the fold of the log, optionally starting from a
//! periodic snapshot. Writes go through one lock and the log writer, so
//! submissions are ordered by server receipt.
//!
//! Log layout:
//!
//! ```text
//! {"format":"humbench-annotation-log","version":1}
//! {"seq":1,"event":{"type":"wave_created",...}}
//! ```
//!
//! The snapshot lives next to the log as `<log>.snapshot.json` and holds
//! `{"seq": n, "state": {...}}` for the state after event `n`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::{Path as UrlPath, Query, Request, State as AxState};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use log::info;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::codebook::{Codebook, RemapTable, Revision};
use crate::corpus::AnnotationTarget;
use crate::error::{Error, Result};
use crate::metrics::{cohen_kappa, interpret_kappa};
use crate::rng;

pub const LOG_FORMAT: &str = "humbench-annotation-log";
pub const LOG_VERSION: u32 = 1;
pub const DEFAULT_SNAPSHOT_EVERY: u64 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaveStatus {
    Open,
    Reconciling,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Submission {
    pub annotator: String,
    pub target_id: String,
    pub labels: BTreeSet<String>,
    pub submitted_at: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Wave {
    pub wave_id: String,
    pub target_ids: Vec<String>,
    pub annotators: Vec<String>,
    pub status: WaveStatus,
    pub codebook_version: u32,
    pub blind: bool,
    pub seed: u64,
    /// Presentation order per annotator.
    pub order: BTreeMap<String, Vec<String>>,
    /// Live submission per annotator and target.
    pub submissions: BTreeMap<String, BTreeMap<String, Submission>>,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl Wave {
    pub fn pending(&self, annotator: &str) -> usize {
        let done = self.submissions.get(annotator).map_or(0, BTreeMap::len);
        self.target_ids.len() - done
    }

    pub fn total_pending(&self) -> usize {
        self.annotators.iter().map(|a| self.pending(a)).sum()
    }

    /// Targets both annotators have submitted, in wave order.
    pub fn dual_completed(&self) -> Vec<&str> {
        let a = self.submissions.get(&self.annotators[0]);
        let b = self.submissions.get(&self.annotators[1]);
        self.target_ids
            .iter()
            .filter(|t| a.is_some_and(|m| m.contains_key(*t)) && b.is_some_and(|m| m.contains_key(*t)))
            .map(String::as_str)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    WaveCreated {
        wave_id: String,
        target_ids: Vec<String>,
        annotators: Vec<String>,
        codebook_version: u32,
        blind: bool,
        seed: u64,
    },
    Submitted {
        wave_id: String,
        submission: Submission,
    },
    StatusChanged {
        wave_id: String,
        status: WaveStatus,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        note: Option<String>,
    },
    NoteAdded {
        wave_id: String,
        note: String,
    },
    CodebookRevised {
        wave_id: String,
        revision: Revision,
        new_version: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub codebooks: BTreeMap<u32, Codebook>,
    pub waves: BTreeMap<String, Wave>,
    /// Wave holding each target.
    pub assigned: BTreeMap<String, String>,
    /// Every submission ever received, superseded ones included.
    pub audit: Vec<Submission>,
    pub seq: u64,
}

/// Failure with an HTTP status attached.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub status: u16,
    pub message: String,
}

impl ApiError {
    fn bad(m: impl Into<String>) -> Self {
        ApiError { status: 400, message: m.into() }
    }
    fn forbidden(m: impl Into<String>) -> Self {
        ApiError { status: 403, message: m.into() }
    }
    fn not_found(m: impl Into<String>) -> Self {
        ApiError { status: 404, message: m.into() }
    }
    fn conflict(m: impl Into<String>) -> Self {
        ApiError { status: 409, message: m.into() }
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} ({})", self.message, self.status)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        match e {
            Error::Io { .. } => ApiError { status: 500, message: e.to_string() },
            _ => ApiError::bad(e.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

impl State {
    pub fn new(base: Codebook) -> Self {
        State {
            codebooks: [(base.version, base)].into(),
            waves: BTreeMap::new(),
            assigned: BTreeMap::new(),
            audit: Vec::new(),
            seq: 0,
        }
    }

    pub fn latest_version(&self) -> u32 {
        *self.codebooks.keys().next_back().expect("state holds a codebook")
    }

    pub fn wave(&self, id: &str) -> ApiResult<&Wave> {
        self.waves.get(id).ok_or_else(|| ApiError::not_found(format!("no wave `{id}`")))
    }

    /// Applies an event that has already been validated.
    pub fn apply(&mut self, event: &Event) -> Result<()> {
        match event {
            Event::WaveCreated { wave_id, target_ids, annotators, codebook_version, blind, seed } => {
                let mut order = BTreeMap::new();
                for a in annotators {
                    let mut o = target_ids.clone();
                    o.shuffle(&mut rng::scoped(*seed, &format!("wave/{wave_id}/{a}")));
                    order.insert(a.clone(), o);
                }
                for t in target_ids {
                    self.assigned.insert(t.clone(), wave_id.clone());
                }
                self.waves.insert(
                    wave_id.clone(),
                    Wave {
                        wave_id: wave_id.clone(),
                        target_ids: target_ids.clone(),
                        annotators: annotators.clone(),
                        status: WaveStatus::Open,
                        codebook_version: *codebook_version,
                        blind: *blind,
                        seed: *seed,
                        order,
                        submissions: BTreeMap::new(),
                        notes: Vec::new(),
                    },
                );
            }
            Event::Submitted { wave_id, submission } => {
                let wave = self.waves.get_mut(wave_id).ok_or_else(|| Error::Service(format!("no wave {wave_id}")))?;
                wave.submissions
                    .entry(submission.annotator.clone())
                    .or_default()
                    .insert(submission.target_id.clone(), submission.clone());
                self.audit.push(submission.clone());
            }
            Event::StatusChanged { wave_id, status, note } => {
                let wave = self.waves.get_mut(wave_id).ok_or_else(|| Error::Service(format!("no wave {wave_id}")))?;
                wave.status = *status;
                wave.notes.extend(note.clone());
            }
            Event::NoteAdded { wave_id, note } => {
                let wave = self.waves.get_mut(wave_id).ok_or_else(|| Error::Service(format!("no wave {wave_id}")))?;
                wave.notes.push(note.clone());
            }
            Event::CodebookRevised { revision, new_version, .. } => {
                let latest = &self.codebooks[&self.latest_version()];
                let (next, _) = latest.apply_revision(revision)?;
                if next.version != *new_version {
                    return Err(Error::Service(format!("revision produced v{} not v{new_version}", next.version)));
                }
                self.codebooks.insert(next.version, next);
            }
        }
        self.seq += 1;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateWave {
    #[serde(default)]
    pub wave_id: Option<String>,
    pub target_ids: Vec<String>,
    pub annotators: Vec<String>,
    #[serde(default)]
    pub codebook_version: Option<u32>,
    #[serde(default)]
    pub blind: Option<bool>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitRequest {
    pub annotator: String,
    pub target_id: String,
    pub labels: Vec<String>,
    /// Codebook version the client rendered; must equal the wave's.
    #[serde(default)]
    pub codebook_version: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitAck {
    pub accepted: bool,
    pub superseded: bool,
    pub pending: usize,
    pub audit_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextItem {
    pub wave_id: String,
    pub annotator: String,
    pub codebook_version: u32,
    pub remaining: usize,
    pub target: Option<AnnotationTarget>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelStats {
    pub label: String,
    pub kappa: f64,
    pub band: String,
    /// At least one annotator applied the label on a dually completed target.
    pub applied: bool,
    pub agreed: usize,
    /// Targets where either annotator applied the label.
    pub samples: usize,
    pub positives: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Disagreement {
    pub target_id: String,
    pub labels: BTreeMap<String, BTreeSet<String>>,
    /// Size of the symmetric difference of the two label sets.
    pub distance: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveStats {
    pub wave_id: String,
    pub status: WaveStatus,
    pub codebook_version: u32,
    pub dual_completed: usize,
    pub per_label: Vec<LabelStats>,
    /// Mean over labels applied at least once.
    pub average_kappa: f64,
    pub average_band: String,
    pub completion: BTreeMap<String, f64>,
    /// Omitted while a blind wave is open.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disagreements: Option<Vec<Disagreement>>,
}

pub fn compute_stats(state: &State, wave_id: &str) -> ApiResult<WaveStats> {
    let wave = state.wave(wave_id)?;
    let codebook = &state.codebooks[&wave.codebook_version];
    let done = wave.dual_completed();
    if done.is_empty() {
        return Err(ApiError::conflict("insufficient overlap: no target completed by both annotators"));
    }
    let (a, b) = (&wave.annotators[0], &wave.annotators[1]);
    let sets = |who: &String| -> Vec<&BTreeSet<String>> {
        done.iter().map(|t| &wave.submissions[who][*t].labels).collect()
    };
    let (sa, sb) = (sets(a), sets(b));
    let mut per_label = Vec::new();
    let mut applied_kappas = Vec::new();
    for l in codebook.abbrevs() {
        let va: Vec<bool> = sa.iter().map(|s| s.contains(l)).collect();
        let vb: Vec<bool> = sb.iter().map(|s| s.contains(l)).collect();
        let kappa = cohen_kappa(&va, &vb)?;
        let pa = va.iter().filter(|x| **x).count();
        let pb = vb.iter().filter(|x| **x).count();
        let agreed = va.iter().zip(&vb).filter(|(x, y)| **x && **y).count();
        let samples = va.iter().zip(&vb).filter(|(x, y)| **x || **y).count();
        let applied = samples > 0;
        if applied {
            applied_kappas.push(kappa);
        }
        per_label.push(LabelStats {
            label: l.to_string(),
            kappa,
            band: interpret_kappa(kappa)?.as_str().to_string(),
            applied,
            agreed,
            samples,
            positives: [(a.clone(), pa), (b.clone(), pb)].into(),
        });
    }
    let average_kappa = if applied_kappas.is_empty() {
        1.0
    } else {
        applied_kappas.iter().sum::<f64>() / applied_kappas.len() as f64
    };
    let completion = wave
        .annotators
        .iter()
        .map(|who| {
            let n = wave.submissions.get(who).map_or(0, BTreeMap::len);
            (who.clone(), n as f64 / wave.target_ids.len() as f64)
        })
        .collect();
    let disagreements = if wave.blind && wave.status == WaveStatus::Open {
        None
    } else {
        let mut d: Vec<Disagreement> = done
            .iter()
            .zip(sa.iter().zip(&sb))
            .filter(|(_, (x, y))| x != y)
            .map(|(t, (x, y))| Disagreement {
                target_id: t.to_string(),
                distance: x.symmetric_difference(y).count(),
                labels: [(a.clone(), (*x).clone()), (b.clone(), (*y).clone())].into(),
            })
            .collect();
        d.sort_by(|p, q| q.distance.cmp(&p.distance).then_with(|| p.target_id.cmp(&q.target_id)));
        Some(d)
    };
    Ok(WaveStats {
        wave_id: wave_id.to_string(),
        status: wave.status,
        codebook_version: wave.codebook_version,
        dual_completed: done.len(),
        per_label,
        average_kappa,
        average_band: interpret_kappa(average_kappa)?.as_str().to_string(),
        completion,
        disagreements,
    })
}

struct EventLog {
    path: PathBuf,
    file: File,
    snapshot_every: u64,
}

impl EventLog {
    fn snapshot_path(path: &Path) -> PathBuf {
        let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(".snapshot.json");
        path.with_file_name(name)
    }

    fn append(&mut self, seq: u64, event: &Event) -> Result<()> {
        let line = serde_json::to_string(&json!({ "seq": seq, "event": event }))?;
        writeln!(self.file, "{line}").map_err(|e| Error::io(&self.path, e))?;
        self.file.flush().map_err(|e| Error::io(&self.path, e))
    }

    fn snapshot(&self, state: &State) -> Result<()> {
        let target = Self::snapshot_path(&self.path);
        let tmp = target.with_extension("tmp");
        let body = serde_json::to_string(&json!({ "seq": state.seq, "state": state }))?;
        std::fs::write(&tmp, body).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, &target).map_err(|e| Error::io(&target, e))
    }
}

/// Reads the log, starting from the snapshot when one exists.
pub fn replay_log(path: &Path, base: Codebook, use_snapshot: bool) -> Result<State> {
    let mut state = State::new(base);
    let snap = EventLog::snapshot_path(path);
    if use_snapshot && snap.exists() {
        let text = std::fs::read_to_string(&snap).map_err(|e| Error::io(&snap, e))?;
        let v: serde_json::Value = serde_json::from_str(&text)?;
        state = serde_json::from_value(v["state"].clone())?;
    }
    if !path.exists() {
        return Ok(state);
    }
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| Error::Parse(format!("{}:{}: {e}", path.display(), i + 1)))?;
        if v.get("format").is_some() {
            if v["format"] != LOG_FORMAT || v["version"] != LOG_VERSION {
                return Err(Error::Parse(format!("{}: unsupported log header", path.display())));
            }
            continue;
        }
        let seq = v["seq"].as_u64().ok_or_else(|| Error::Parse(format!("line {} lacks seq", i + 1)))?;
        if seq <= state.seq {
            continue;
        }
        if seq != state.seq + 1 {
            return Err(Error::Integrity(format!("event log gap: expected seq {}, found {seq}", state.seq + 1)));
        }
        let event: Event = serde_json::from_value(v["event"].clone())?;
        state.apply(&event)?;
    }
    Ok(state)
}

struct Inner {
    state: State,
    log: Option<EventLog>,
}

/// Thread-safe annotation store; the HTTP layer is a thin wrapper over it.
pub struct AnnotationStore {
    inner: Mutex<Inner>,
    catalogue: BTreeMap<String, AnnotationTarget>,
}

fn now_secs() -> i64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs() as i64).unwrap_or(0)
}

impl AnnotationStore {
    /// In-memory store without persistence.
    pub fn in_memory(base: Codebook, targets: Vec<AnnotationTarget>) -> Self {
        Self::from_parts(State::new(base), None, targets)
    }

    /// Opens (or creates) a persistent store backed by the log at `path`.
    pub fn open(path: impl AsRef<Path>, base: Codebook, targets: Vec<AnnotationTarget>) -> Result<Self> {
        Self::open_with(path, base, targets, DEFAULT_SNAPSHOT_EVERY)
    }

    pub fn open_with(
        path: impl AsRef<Path>,
        base: Codebook,
        targets: Vec<AnnotationTarget>,
        snapshot_every: u64,
    ) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let fresh = !path.exists() || std::fs::metadata(&path).map(|m| m.len() == 0).unwrap_or(true);
        let state = replay_log(&path, base, true)?;
        let mut file = OpenOptions::new().create(true).append(true).open(&path).map_err(|e| Error::io(&path, e))?;
        if fresh {
            writeln!(file, "{}", json!({ "format": LOG_FORMAT, "version": LOG_VERSION }))
                .map_err(|e| Error::io(&path, e))?;
        }
        info!("annotation log {} at seq {}", path.display(), state.seq);
        Ok(Self::from_parts(state, Some(EventLog { path, file, snapshot_every: snapshot_every.max(1) }), targets))
    }

    fn from_parts(state: State, log: Option<EventLog>, targets: Vec<AnnotationTarget>) -> Self {
        let catalogue = targets.into_iter().map(|t| (t.target_id.clone(), t)).collect();
        AnnotationStore { inner: Mutex::new(Inner { state, log }), catalogue }
    }

    pub fn state(&self) -> State {
        self.inner.lock().expect("store lock").state.clone()
    }

    fn commit(inner: &mut Inner, event: Event) -> ApiResult<()> {
        let seq = inner.state.seq + 1;
        if let Some(log) = inner.log.as_mut() {
            log.append(seq, &event)?;
        }
        inner.state.apply(&event)?;
        if let Some(log) = inner.log.as_ref() {
            if seq % log.snapshot_every == 0 {
                log.snapshot(&inner.state)?;
            }
        }
        Ok(())
    }

    pub fn create_wave(&self, req: CreateWave) -> ApiResult<Wave> {
        let mut inner = self.inner.lock().expect("store lock");
        let st = &inner.state;
        let distinct: BTreeSet<&String> = req.annotators.iter().collect();
        if req.annotators.len() != 2 || distinct.len() != 2 {
            return Err(ApiError::bad("a wave needs exactly two distinct annotators"));
        }
        if req.target_ids.is_empty() {
            return Err(ApiError::bad("a wave needs at least one target"));
        }
        let mut seen = BTreeSet::new();
        for t in &req.target_ids {
            if !self.catalogue.is_empty() && !self.catalogue.contains_key(t) {
                return Err(ApiError::bad(format!("unknown target `{t}`")));
            }
            if let Some(w) = st.assigned.get(t) {
                return Err(ApiError::conflict(format!("target `{t}` already belongs to wave `{w}`")));
            }
            if !seen.insert(t) {
                return Err(ApiError::bad(format!("target `{t}` listed twice")));
            }
        }
        let version = req.codebook_version.unwrap_or_else(|| st.latest_version());
        if !st.codebooks.contains_key(&version) {
            return Err(ApiError::bad(format!("no codebook version {version}")));
        }
        let wave_id = req.wave_id.unwrap_or_else(|| format!("w{}", st.waves.len() + 1));
        if st.waves.contains_key(&wave_id) {
            return Err(ApiError::conflict(format!("wave `{wave_id}` exists")));
        }
        let seed = req.seed.unwrap_or(st.seq);
        let event = Event::WaveCreated {
            wave_id: wave_id.clone(),
            target_ids: req.target_ids,
            annotators: req.annotators,
            codebook_version: version,
            blind: req.blind.unwrap_or(true),
            seed,
        };
        Self::commit(&mut inner, event)?;
        Ok(inner.state.waves[&wave_id].clone())
    }

    pub fn next(&self, wave_id: &str, annotator: &str) -> ApiResult<NextItem> {
        let inner = self.inner.lock().expect("store lock");
        let wave = inner.state.wave(wave_id)?;
        let order = wave
            .order
            .get(annotator)
            .ok_or_else(|| ApiError::forbidden(format!("`{annotator}` is not assigned to wave `{wave_id}`")))?;
        let done = wave.submissions.get(annotator);
        let next = order.iter().find(|t| !done.is_some_and(|m| m.contains_key(*t)));
        let target = next.map(|t| {
            self.catalogue.get(t).cloned().unwrap_or_else(|| AnnotationTarget::new(t.clone(), "", "", "", None, ""))
        });
        Ok(NextItem {
            wave_id: wave_id.to_string(),
            annotator: annotator.to_string(),
            codebook_version: wave.codebook_version,
            remaining: wave.pending(annotator),
            target,
        })
    }

    pub fn submit(&self, wave_id: &str, req: SubmitRequest) -> ApiResult<SubmitAck> {
        let mut inner = self.inner.lock().expect("store lock");
        let wave = inner.state.wave(wave_id)?;
        if wave.status != WaveStatus::Open {
            return Err(ApiError::conflict(format!("wave `{wave_id}` is {:?}", wave.status)));
        }
        if !wave.annotators.contains(&req.annotator) {
            return Err(ApiError::forbidden(format!("`{}` is not assigned to wave `{wave_id}`", req.annotator)));
        }
        if !wave.target_ids.contains(&req.target_id) {
            return Err(ApiError::bad(format!("target `{}` is not in wave `{wave_id}`", req.target_id)));
        }
        if let Some(v) = req.codebook_version {
            if v != wave.codebook_version {
                return Err(ApiError::bad(format!(
                    "wave `{wave_id}` is pinned to codebook v{}, submission uses v{v}",
                    wave.codebook_version
                )));
            }
        }
        let codebook = &inner.state.codebooks[&wave.codebook_version];
        let mut labels = BTreeSet::new();
        for l in &req.labels {
            let found = codebook.resolve(l).ok_or_else(|| {
                ApiError::bad(format!("label `{l}` is not in codebook v{}", wave.codebook_version))
            })?;
            labels.insert(found.abbrev.clone());
        }
        let superseded = wave.submissions.get(&req.annotator).is_some_and(|m| m.contains_key(&req.target_id));
        let submission = Submission {
            annotator: req.annotator.clone(),
            target_id: req.target_id,
            labels,
            submitted_at: now_secs(),
        };
        Self::commit(&mut inner, Event::Submitted { wave_id: wave_id.to_string(), submission })?;
        let wave = &inner.state.waves[wave_id];
        Ok(SubmitAck {
            accepted: true,
            superseded,
            pending: wave.total_pending(),
            audit_len: inner.state.audit.len(),
        })
    }

    pub fn set_status(&self, wave_id: &str, status: WaveStatus, note: Option<String>) -> ApiResult<Wave> {
        let mut inner = self.inner.lock().expect("store lock");
        let current = inner.state.wave(wave_id)?.status;
        let legal = matches!(
            (current, status),
            (WaveStatus::Open, WaveStatus::Reconciling)
                | (WaveStatus::Open, WaveStatus::Closed)
                | (WaveStatus::Reconciling, WaveStatus::Closed)
        );
        if !legal {
            return Err(ApiError::conflict(format!("cannot move wave `{wave_id}` from {current:?} to {status:?}")));
        }
        Self::commit(&mut inner, Event::StatusChanged { wave_id: wave_id.to_string(), status, note })?;
        Ok(inner.state.waves[wave_id].clone())
    }

    pub fn add_note(&self, wave_id: &str, note: String) -> ApiResult<()> {
        let mut inner = self.inner.lock().expect("store lock");
        inner.state.wave(wave_id)?;
        Self::commit(&mut inner, Event::NoteAdded { wave_id: wave_id.to_string(), note })
    }

    pub fn stats(&self, wave_id: &str) -> ApiResult<WaveStats> {
        compute_stats(&self.inner.lock().expect("store lock").state, wave_id)
    }

    pub fn disagreements(&self, wave_id: &str) -> ApiResult<Vec<Disagreement>> {
        let inner = self.inner.lock().expect("store lock");
        let wave = inner.state.wave(wave_id)?;
        if wave.blind && wave.status == WaveStatus::Open {
            return Err(ApiError::forbidden("disagreements are hidden while a blind wave is open"));
        }
        Ok(compute_stats(&inner.state, wave_id)?.disagreements.unwrap_or_default())
    }

    pub fn revise_codebook(&self, wave_id: &str, revision: Revision) -> ApiResult<(Codebook, RemapTable)> {
        let mut inner = self.inner.lock().expect("store lock");
        let wave = inner.state.wave(wave_id)?;
        if wave.status == WaveStatus::Open {
            return Err(ApiError::conflict(format!("wave `{wave_id}` is open; close or reconcile it first")));
        }
        let latest = &inner.state.codebooks[&inner.state.latest_version()];
        let (next, remap) = latest.apply_revision(&revision)?;
        let new_version = next.version;
        Self::commit(&mut inner, Event::CodebookRevised { wave_id: wave_id.to_string(), revision, new_version })?;
        Ok((inner.state.codebooks[&new_version].clone(), remap))
    }

    pub fn codebook(&self, version: u32) -> ApiResult<Codebook> {
        let inner = self.inner.lock().expect("store lock");
        inner
            .state
            .codebooks
            .get(&version)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("no codebook version {version}")))
    }

    pub fn latest_codebook(&self) -> Codebook {
        let inner = self.inner.lock().expect("store lock");
        inner.state.codebooks[&inner.state.latest_version()].clone()
    }

    /// Wave summary with submissions stripped.
    pub fn wave_summary(&self, wave_id: &str) -> ApiResult<serde_json::Value> {
        let inner = self.inner.lock().expect("store lock");
        let w = inner.state.wave(wave_id)?;
        let done: BTreeMap<&String, usize> =
            w.annotators.iter().map(|a| (a, w.submissions.get(a).map_or(0, BTreeMap::len))).collect();
        Ok(json!({
            "wave_id": w.wave_id,
            "status": w.status,
            "codebook_version": w.codebook_version,
            "blind": w.blind,
            "annotators": w.annotators,
            "targets": w.target_ids.len(),
            "submitted": done,
            "pending": w.total_pending(),
            "notes": w.notes,
        }))
    }
}

// HTTP layer

#[derive(Clone)]
struct AppState {
    store: Arc<AnnotationStore>,
    token: Option<Arc<str>>,
}

#[derive(Debug, Deserialize)]
struct AnnotatorQuery {
    annotator: String,
}

#[derive(Debug, Deserialize)]
struct StatusRequest {
    status: WaveStatus,
    #[serde(default)]
    note: Option<String>,
}

#[derive(Debug, Deserialize)]
struct NoteRequest {
    note: String,
}

#[derive(Debug, Deserialize)]
struct RevisionRequest {
    wave_id: String,
    revision: Revision,
}

async fn auth(AxState(app): AxState<AppState>, req: Request, next: Next) -> Response {
    if let Some(token) = &app.token {
        let ok = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|t| t == &**token);
        if !ok {
            return ApiError { status: 401, message: "missing or wrong bearer token".into() }.into_response();
        }
    }
    next.run(req).await
}

async fn h_create(AxState(app): AxState<AppState>, Json(body): Json<CreateWave>) -> ApiResult<(StatusCode, Json<serde_json::Value>)> {
    let w = app.store.create_wave(body)?;
    Ok((StatusCode::CREATED, Json(app.store.wave_summary(&w.wave_id)?)))
}

async fn h_wave(AxState(app): AxState<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<serde_json::Value>> {
    Ok(Json(app.store.wave_summary(&id)?))
}

async fn h_next(
    AxState(app): AxState<AppState>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<AnnotatorQuery>,
) -> ApiResult<Json<NextItem>> {
    Ok(Json(app.store.next(&id, &q.annotator)?))
}

async fn h_submit(
    AxState(app): AxState<AppState>,
    UrlPath(id): UrlPath<String>,
    Json(body): Json<SubmitRequest>,
) -> ApiResult<Json<SubmitAck>> {
    Ok(Json(app.store.submit(&id, body)?))
}

async fn h_stats(AxState(app): AxState<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<WaveStats>> {
    Ok(Json(app.store.stats(&id)?))
}

async fn h_disagreements(
    AxState(app): AxState<AppState>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Json<Vec<Disagreement>>> {
    Ok(Json(app.store.disagreements(&id)?))
}

async fn h_status(
    AxState(app): AxState<AppState>,
    UrlPath(id): UrlPath<String>,
    Json(body): Json<StatusRequest>,
) -> ApiResult<Json<serde_json::Value>> {
    app.store.set_status(&id, body.status, body.note)?;
    Ok(Json(app.store.wave_summary(&id)?))
}

async fn h_note(
    AxState(app): AxState<AppState>,
    UrlPath(id): UrlPath<String>,
    Json(body): Json<NoteRequest>,
) -> ApiResult<StatusCode> {
    app.store.add_note(&id, body.note)?;
    Ok(StatusCode::NO_CONTENT)
}

async fn h_revise(
    AxState(app): AxState<AppState>,
    Json(body): Json<RevisionRequest>,
) -> ApiResult<(StatusCode, Json<serde_json::Value>)> {
    let (cb, remap) = app.store.revise_codebook(&body.wave_id, body.revision)?;
    Ok((StatusCode::CREATED, Json(json!({ "version": cb.version, "codebook": cb, "remap": remap }))))
}

async fn h_codebook(AxState(app): AxState<AppState>, UrlPath(v): UrlPath<String>) -> ApiResult<Json<Codebook>> {
    if v == "latest" {
        return Ok(Json(app.store.latest_codebook()));
    }
    let version: u32 = v.parse().map_err(|_| ApiError::bad(format!("bad codebook version `{v}`")))?;
    Ok(Json(app.store.codebook(version)?))
}

/// API router; static files from `static_dir` are served for other paths.
pub fn router(store: Arc<AnnotationStore>, token: Option<String>, static_dir: Option<PathBuf>) -> Router {
    let app = AppState { store, token: token.map(Arc::from) };
    let api = Router::new()
        .route("/waves", post(h_create))
        .route("/waves/{id}", get(h_wave))
        .route("/waves/{id}/next", get(h_next))
        .route("/waves/{id}/submissions", post(h_submit))
        .route("/waves/{id}/stats", get(h_stats))
        .route("/waves/{id}/disagreements", get(h_disagreements))
        .route("/waves/{id}/status", post(h_status))
        .route("/waves/{id}/notes", post(h_note))
        .route("/codebook/revisions", post(h_revise))
        .route("/codebook/{version}", get(h_codebook))
        .route_layer(middleware::from_fn_with_state(app.clone(), auth))
        .with_state(app);
    match static_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api,
    }
}

pub async fn serve(addr: SocketAddr, app: Router) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| Error::Service(format!("bind {addr}: {e}")))?;
    info!("annotation service listening on {addr}");
    axum::serve(listener, app).await.map_err(|e| Error::Service(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn targets(n: usize) -> Vec<AnnotationTarget> {
        (0..n).map(|i| AnnotationTarget::new(format!("t{i}"), "p", "title", "body", None, format!("c{i}"))).collect()
    }

    fn create(store: &AnnotationStore, ids: &[&str]) -> Wave {
        store
            .create_wave(CreateWave {
                wave_id: None,
                target_ids: ids.iter().map(|s| s.to_string()).collect(),
                annotators: vec!["ann_a".into(), "ann_b".into()],
                codebook_version: None,
                blind: None,
                seed: Some(3),
            })
            .unwrap()
    }

    fn submit(store: &AnnotationStore, wave: &str, who: &str, t: &str, labels: &[&str]) -> ApiResult<SubmitAck> {
        store.submit(
            wave,
            SubmitRequest {
                annotator: who.into(),
                target_id: t.into(),
                labels: labels.iter().map(|s| s.to_string()).collect(),
                codebook_version: None,
            },
        )
    }

    #[test]
    fn wave_creation_rules() {
        let store = AnnotationStore::in_memory(Codebook::default_codebook(), targets(100));
        let ids: Vec<String> = (0..100).map(|i| format!("t{i}")).collect();
        let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
        let w = create(&store, &refs);
        assert_eq!(w.status, WaveStatus::Open);
        assert_eq!(w.total_pending(), 200);
        assert!(w.blind);
        assert_ne!(w.order["ann_a"], w.order["ann_b"]);
        let again = store.create_wave(CreateWave {
            wave_id: None,
            target_ids: vec!["t0".into()],
            annotators: vec!["x".into(), "y".into()],
            codebook_version: None,
            blind: None,
            seed: None,
        });
        assert_eq!(again.unwrap_err().status, 409);
        let single = store.create_wave(CreateWave {
            wave_id: None,
            target_ids: vec!["t5".into()],
            annotators: vec!["x".into()],
            codebook_version: None,
            blind: None,
            seed: None,
        });
        assert_eq!(single.unwrap_err().status, 400);
    }

    #[test]
    fn submissions_supersede_and_audit() {
        let store = AnnotationStore::in_memory(Codebook::default_codebook(), targets(3));
        create(&store, &["t0", "t1"]);
        let ack = submit(&store, "w1", "ann_a", "t0", &["APB"]).unwrap();
        assert_eq!(ack.pending, 3);
        let ack = submit(&store, "w1", "ann_a", "t0", &["SO", "Ad Hominem"]).unwrap();
        assert!(ack.superseded);
        assert_eq!(ack.audit_len, 2);
        let st = store.state();
        let live = &st.waves["w1"].submissions["ann_a"]["t0"].labels;
        assert_eq!(live.iter().map(String::as_str).collect::<Vec<_>>(), vec!["AH", "SO"]);
        let err = submit(&store, "w1", "ann_a", "t1", &["ZZZ"]).unwrap_err();
        assert!(err.message.contains("ZZZ"));
        assert_eq!(submit(&store, "w1", "intruder", "t1", &[]).unwrap_err().status, 403);
    }

    #[test]
    fn stats_need_overlap_and_hide_disagreements() {
        let store = AnnotationStore::in_memory(Codebook::default_codebook(), targets(3));
        create(&store, &["t0", "t1"]);
        submit(&store, "w1", "ann_a", "t0", &["APB"]).unwrap();
        assert_eq!(store.stats("w1").unwrap_err().status, 409);
        submit(&store, "w1", "ann_b", "t0", &["APB", "SO"]).unwrap();
        let s = store.stats("w1").unwrap();
        assert_eq!(s.dual_completed, 1);
        assert!(s.disagreements.is_none());
        assert_eq!(store.disagreements("w1").unwrap_err().status, 403);
        store.set_status("w1", WaveStatus::Reconciling, Some("discussed SO".into())).unwrap();
        let d = store.disagreements("w1").unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].distance, 1);
        assert_eq!(submit(&store, "w1", "ann_a", "t1", &[]).unwrap_err().status, 409);
    }

    #[test]
    fn identical_annotators_give_unit_kappa() {
        let store = AnnotationStore::in_memory(Codebook::default_codebook(), targets(4));
        create(&store, &["t0", "t1", "t2", "t3"]);
        for (t, l) in [("t0", vec!["APB"]), ("t1", vec![]), ("t2", vec!["CA", "AH"]), ("t3", vec!["APB"])] {
            submit(&store, "w1", "ann_a", t, &l).unwrap();
            submit(&store, "w1", "ann_b", t, &l).unwrap();
        }
        let s = store.stats("w1").unwrap();
        assert!(s.per_label.iter().all(|l| l.kappa == 1.0));
        assert_eq!(s.average_kappa, 1.0);
    }

    #[test]
    fn revisions_only_after_open() {
        let store = AnnotationStore::in_memory(Codebook::default_codebook(), targets(3));
        create(&store, &["t0"]);
        assert_eq!(store.revise_codebook("w1", Revision::default()).unwrap_err().status, 409);
        store.set_status("w1", WaveStatus::Closed, None).unwrap();
        let (cb, _) = store.revise_codebook("w1", Revision::default()).unwrap();
        assert_eq!(cb.version, 2);
        assert_eq!(cb.labels, Codebook::default_codebook().labels);
        let w2 = create(&store, &["t1"]);
        assert_eq!(w2.codebook_version, 2);
        assert_eq!(store.state().waves["w1"].codebook_version, 1);
        let err = store
            .submit(
                "w2",
                SubmitRequest { annotator: "ann_a".into(), target_id: "t1".into(), labels: vec![], codebook_version: Some(1) },
            )
            .unwrap_err();
        assert_eq!(err.status, 400);
    }

    #[test]
    fn log_replay_reconstructs_state() {
        let dir = tempfile::tempdir().unwrap();
        let log = dir.path().join("events.jsonl");
        let live = AnnotationStore::open_with(&log, Codebook::default_codebook(), targets(6), 4).unwrap();
        create(&live, &["t0", "t1", "t2"]);
        submit(&live, "w1", "ann_a", "t0", &["APB"]).unwrap();
        submit(&live, "w1", "ann_b", "t0", &["APB"]).unwrap();
        submit(&live, "w1", "ann_a", "t1", &["CA"]).unwrap();
        submit(&live, "w1", "ann_b", "t1", &[]).unwrap();
        submit(&live, "w1", "ann_a", "t1", &["DAL"]).unwrap();
        live.set_status("w1", WaveStatus::Closed, None).unwrap();
        live.revise_codebook("w1", Revision::default()).unwrap();
        let expected = live.state();
        let stats = live.stats("w1").unwrap();
        drop(live);

        let full = replay_log(&log, Codebook::default_codebook(), false).unwrap();
        assert_eq!(full, expected);
        assert!(EventLog::snapshot_path(&log).exists());
        let reopened = AnnotationStore::open(&log, Codebook::default_codebook(), targets(6)).unwrap();
        assert_eq!(reopened.state(), expected);
        assert_eq!(reopened.stats("w1").unwrap(), stats);
    }
}
