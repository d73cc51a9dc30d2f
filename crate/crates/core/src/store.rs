//! Session persistence, group assignment and export.
//!
//! The file store is a single append-only JSONL file. Each line wraps one
//! session log together with the SHA-256 of its compact JSON:
//!
//! ```text
//! {"log":{...},"digest":"<hex>"}
//! ```
//!
//! A trailing line without a newline is an interrupted write and is dropped
//! when the store is opened. A committed line whose digest does not match is
//! reported as corruption.
//!
//! Export produces either one session log per line (`jsonl`, lossless) or a
//! CSV table with one row per choice (`table`).

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use chrono::{DateTime, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dialogue::{ChoiceRecord, ParticipantId, SessionId};
use crate::tasks::{BiasKind, Condition, PROBES_PER_BIAS, TURNS};
use crate::SCHEMA_VERSION;

/// Persisted record of one participant's conversation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionLog {
    pub schema_version: u32,
    pub session_id: SessionId,
    pub participant_id: ParticipantId,
    pub condition: Condition,
    pub seed: u64,
    pub catalog_version: String,
    pub started: DateTime<Utc>,
    pub completed: Option<DateTime<Utc>>,
    pub records: Vec<ChoiceRecord>,
    pub complete: bool,
}

impl SessionLog {
    pub fn validate(&self) -> Result<(), StoreError> {
        let bad = |why: String| StoreError::InvalidLog {
            session_id: self.session_id.0.clone(),
            reason: why,
        };
        if self.schema_version != SCHEMA_VERSION {
            return Err(bad(format!("unsupported schema_version {}", self.schema_version)));
        }
        if self.session_id.0.is_empty() || self.participant_id.0.is_empty() {
            return Err(bad("empty session or participant id".into()));
        }
        if !self.records.windows(2).all(|w| w[0].turn_index < w[1].turn_index) {
            return Err(bad("records not sorted by turn_index".into()));
        }
        if self.records.len() > TURNS {
            return Err(bad(format!("{} records exceed {TURNS} turns", self.records.len())));
        }
        if self.complete {
            if self.records.len() != TURNS {
                return Err(bad(format!("complete log has {} records", self.records.len())));
            }
            for bias in BiasKind::ALL {
                let n = self.records.iter().filter(|r| r.bias_kind == bias).count();
                if n != PROBES_PER_BIAS {
                    return Err(bad(format!("complete log has {n} {bias} records")));
                }
            }
        }
        for r in &self.records {
            if self.condition == Condition::Control && r.chose_framed {
                return Err(bad(format!("control record at turn {} marked framed", r.turn_index)));
            }
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("session log serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("session '{0}' already stored with different content")]
    Conflict(String),
    #[error("invalid session log '{session_id}': {reason}")]
    InvalidLog { session_id: String, reason: String },
    #[error("storage unavailable: {0}")]
    Unavailable(#[from] io::Error),
    #[error("corrupt store {path} line {line}: {reason}")]
    Corrupt { path: PathBuf, line: usize, reason: String },
    #[error("line {line}: {reason}")]
    Import { line: usize, reason: String },
    #[error("unknown export format '{0}' (expected jsonl or table)")]
    UnknownFormat(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PersistOutcome {
    Stored,
    /// Identical content was already present.
    Duplicate,
}

/// Append-only storage of session logs.
pub trait SessionStore: Send + Sync {
    fn persist(&self, log: &SessionLog) -> Result<PersistOutcome, StoreError>;
    fn load(&self, id: &SessionId) -> Option<SessionLog>;
    /// Every stored log, in commit order.
    fn all(&self) -> Vec<SessionLog>;

    fn len(&self) -> usize {
        self.all().len()
    }

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn export(&self, filter: &ExportFilter, format: ExportFormat, out: &mut dyn Write) -> Result<(), StoreError> {
        export(&self.all(), filter, format, out)
    }
}

#[derive(Default)]
struct Index {
    logs: Vec<SessionLog>,
    by_id: HashMap<SessionId, usize>,
}

impl Index {
    fn check(&self, log: &SessionLog) -> Result<Option<PersistOutcome>, StoreError> {
        log.validate()?;
        match self.by_id.get(&log.session_id) {
            Some(&i) if self.logs[i] == *log => Ok(Some(PersistOutcome::Duplicate)),
            Some(_) => Err(StoreError::Conflict(log.session_id.0.clone())),
            None => Ok(None),
        }
    }

    fn push(&mut self, log: SessionLog) {
        self.by_id.insert(log.session_id.clone(), self.logs.len());
        self.logs.push(log);
    }
}

/// In-process store, mostly for tests and simulation.
#[derive(Default)]
pub struct MemoryStore {
    index: RwLock<Index>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl SessionStore for MemoryStore {
    fn persist(&self, log: &SessionLog) -> Result<PersistOutcome, StoreError> {
        let mut index = self.index.write().expect("store lock");
        if let Some(outcome) = index.check(log)? {
            return Ok(outcome);
        }
        index.push(log.clone());
        Ok(PersistOutcome::Stored)
    }

    fn load(&self, id: &SessionId) -> Option<SessionLog> {
        let index = self.index.read().expect("store lock");
        index.by_id.get(id).map(|&i| index.logs[i].clone())
    }

    fn all(&self) -> Vec<SessionLog> {
        self.index.read().expect("store lock").logs.clone()
    }
}

#[derive(Serialize)]
struct StoredLineRef<'a> {
    log: &'a SessionLog,
    digest: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StoredLine {
    log: SessionLog,
    digest: String,
}

/// Single-file, append-only JSONL store.
pub struct FileStore {
    path: PathBuf,
    writer: Mutex<File>,
    index: RwLock<Index>,
}

impl FileStore {
    /// Opens (creating if needed) the store at `path`.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut index = Index::default();
        let mut committed = 0u64;
        if path.exists() {
            let (logs, len) = read_committed(&path)?;
            logs.into_iter().for_each(|l| index.push(l));
            committed = len;
        }
        let file = OpenOptions::new()
            .create(true)
            .read(true)
            .write(true)
            .truncate(false)
            .open(&path)?;
        // drop a torn final write
        if file.metadata()?.len() != committed {
            file.set_len(committed)?;
        }
        let mut writer = file;
        use std::io::Seek;
        writer.seek(io::SeekFrom::End(0))?;
        Ok(FileStore {
            path,
            writer: Mutex::new(writer),
            index: RwLock::new(index),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

fn corrupt(path: &Path, line: usize, reason: String) -> StoreError {
    StoreError::Corrupt {
        path: path.to_path_buf(),
        line,
        reason,
    }
}

impl SessionStore for FileStore {
    fn persist(&self, log: &SessionLog) -> Result<PersistOutcome, StoreError> {
        let mut writer = self.writer.lock().expect("writer lock");
        if let Some(outcome) = self.index.read().expect("store lock").check(log)? {
            return Ok(outcome);
        }
        let mut line = serde_json::to_string(&StoredLineRef {
            log,
            digest: log.digest(),
        })
        .expect("session log serializes");
        line.push('\n');
        writer.write_all(line.as_bytes())?;
        writer.flush()?;
        writer.sync_data()?;
        self.index.write().expect("store lock").push(log.clone());
        Ok(PersistOutcome::Stored)
    }

    fn load(&self, id: &SessionId) -> Option<SessionLog> {
        let index = self.index.read().expect("store lock");
        index.by_id.get(id).map(|&i| index.logs[i].clone())
    }

    fn all(&self) -> Vec<SessionLog> {
        self.index.read().expect("store lock").logs.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Jsonl,
    Table,
}

impl std::str::FromStr for ExportFormat {
    type Err = StoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "jsonl" => Ok(ExportFormat::Jsonl),
            "table" => Ok(ExportFormat::Table),
            other => Err(StoreError::UnknownFormat(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Completeness {
    #[default]
    Any,
    CompleteOnly,
    PartialOnly,
}

/// Restricts exported sessions. `bias` only narrows table rows; jsonl lines are
/// always whole sessions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ExportFilter {
    pub condition: Option<Condition>,
    pub bias: Option<BiasKind>,
    pub completeness: Completeness,
}

impl ExportFilter {
    pub fn accepts(&self, log: &SessionLog) -> bool {
        self.condition.is_none_or(|c| c == log.condition)
            && match self.completeness {
                Completeness::Any => true,
                Completeness::CompleteOnly => log.complete,
                Completeness::PartialOnly => !log.complete,
            }
    }
}

/// Column order of the tabular export.
pub const TABLE_COLUMNS: [&str; 7] = [
    "session_id",
    "participant_id",
    "condition",
    "turn_index",
    "bias_kind",
    "chose_suboptimal",
    "chose_framed",
];

pub fn export(
    logs: &[SessionLog],
    filter: &ExportFilter,
    format: ExportFormat,
    out: &mut dyn Write,
) -> Result<(), StoreError> {
    let selected = logs.iter().filter(|l| filter.accepts(l));
    match format {
        ExportFormat::Jsonl => {
            for log in selected {
                serde_json::to_writer(&mut *out, log).map_err(io::Error::from)?;
                out.write_all(b"\n")?;
            }
        }
        ExportFormat::Table => {
            let mut w = csv::Writer::from_writer(out);
            w.write_record(TABLE_COLUMNS)?;
            for log in selected {
                for r in log
                    .records
                    .iter()
                    .filter(|r| filter.bias.is_none_or(|b| b == r.bias_kind))
                {
                    w.write_record([
                        log.session_id.0.as_str(),
                        log.participant_id.0.as_str(),
                        log.condition.as_str(),
                        &r.turn_index.to_string(),
                        r.bias_kind.as_str(),
                        if r.chose_suboptimal { "true" } else { "false" },
                        if r.chose_framed { "true" } else { "false" },
                    ])?;
                }
            }
            w.flush()?;
        }
    }
    Ok(())
}

/// Parses a jsonl export back into logs.
pub fn import_jsonl(reader: impl BufRead) -> Result<Vec<SessionLog>, StoreError> {
    let mut logs = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let log: SessionLog = serde_json::from_str(&line).map_err(|e| StoreError::Import {
            line: n + 1,
            reason: e.to_string(),
        })?;
        log.validate().map_err(|e| StoreError::Import {
            line: n + 1,
            reason: e.to_string(),
        })?;
        logs.push(log);
    }
    Ok(logs)
}

/// Reads sessions from either a store file or a jsonl export.
pub fn read_sessions(path: impl AsRef<Path>) -> Result<Vec<SessionLog>, StoreError> {
    let path = path.as_ref();
    let file = File::open(path)?;
    let mut reader = BufReader::new(file);
    let mut first = String::new();
    while first.trim().is_empty() {
        first.clear();
        if reader.read_line(&mut first)? == 0 {
            return Ok(Vec::new());
        }
    }
    let is_store_line = serde_json::from_str::<serde_json::Value>(&first)
        .ok()
        .and_then(|v| v.as_object().map(|o| o.contains_key("digest") && o.contains_key("log")))
        .unwrap_or(false);
    drop(reader);
    if is_store_line {
        Ok(read_committed(path)?.0)
    } else {
        import_jsonl(BufReader::new(File::open(path)?))
    }
}

/// Parses every newline-terminated line of a store file. Returns the logs and
/// the byte length of the committed prefix.
fn read_committed(path: &Path) -> Result<(Vec<SessionLog>, u64), StoreError> {
    let bytes = std::fs::read(path)?;
    let mut logs = Vec::new();
    let mut offset = 0usize;
    for (n, chunk) in bytes.split_inclusive(|b| *b == b'\n').enumerate() {
        if !chunk.ends_with(b"\n") {
            break;
        }
        offset += chunk.len();
        let line = std::str::from_utf8(chunk).map_err(|e| corrupt(path, n + 1, e.to_string()))?;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let parsed: StoredLine = serde_json::from_str(line).map_err(|e| corrupt(path, n + 1, e.to_string()))?;
        if parsed.log.digest() != parsed.digest {
            return Err(corrupt(path, n + 1, "digest mismatch".into()));
        }
        logs.push(parsed.log);
    }
    Ok((logs, offset as u64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "strategy", content = "condition")]
pub enum AssignmentStrategy {
    /// Experimental, control, experimental, ...
    Alternating,
    /// Coin flip while groups are level, otherwise the smaller group.
    RandomBalanced,
    /// Everyone to one group.
    Fixed(Condition),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AssignmentPolicy {
    pub strategy: AssignmentStrategy,
    pub seed: u64,
}

struct AssignState {
    by_participant: HashMap<ParticipantId, Condition>,
    experimental: usize,
    control: usize,
    rng: ChaCha8Rng,
}

/// Idempotent participant-to-condition mapping. Thread safe; the balance
/// counters are updated under the same lock as the mapping.
pub struct Assigner {
    policy: AssignmentPolicy,
    state: Mutex<AssignState>,
}

impl Assigner {
    pub fn new(policy: AssignmentPolicy) -> Self {
        Assigner {
            policy,
            state: Mutex::new(AssignState {
                by_participant: HashMap::new(),
                experimental: 0,
                control: 0,
                rng: ChaCha8Rng::seed_from_u64(policy.seed),
            }),
        }
    }

    /// Rebuilds from previously stored assignments (e.g. after a restart).
    pub fn restore<'a>(
        policy: AssignmentPolicy,
        prior: impl IntoIterator<Item = (&'a ParticipantId, Condition)>,
    ) -> Self {
        let assigner = Self::new(policy);
        {
            let mut st = assigner.state.lock().expect("assign lock");
            for (p, c) in prior {
                if st.by_participant.insert(p.clone(), c).is_none() {
                    match c {
                        Condition::Experimental => st.experimental += 1,
                        Condition::Control => st.control += 1,
                    }
                }
            }
        }
        assigner
    }

    pub fn policy(&self) -> AssignmentPolicy {
        self.policy
    }

    pub fn assign(&self, participant: &ParticipantId) -> Condition {
        let mut st = self.state.lock().expect("assign lock");
        if let Some(c) = st.by_participant.get(participant) {
            return *c;
        }
        let c = match self.policy.strategy {
            AssignmentStrategy::Fixed(c) => c,
            AssignmentStrategy::Alternating => {
                if st.experimental <= st.control {
                    Condition::Experimental
                } else {
                    Condition::Control
                }
            }
            AssignmentStrategy::RandomBalanced => match st.experimental.cmp(&st.control) {
                std::cmp::Ordering::Less => Condition::Experimental,
                std::cmp::Ordering::Greater => Condition::Control,
                std::cmp::Ordering::Equal => {
                    if st.rng.random_bool(0.5) {
                        Condition::Experimental
                    } else {
                        Condition::Control
                    }
                }
            },
        };
        match c {
            Condition::Experimental => st.experimental += 1,
            Condition::Control => st.control += 1,
        }
        st.by_participant.insert(participant.clone(), c);
        c
    }

    pub fn counts(&self) -> (usize, usize) {
        let st = self.state.lock().expect("assign lock");
        (st.experimental, st.control)
    }
}

/// Deterministic per-participant seed under a fixed base.
pub fn derive_seed(base: u64, participant: &ParticipantId) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update(participant.0.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}
