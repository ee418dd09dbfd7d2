//! File-backed persistence for schemas, extraction sets and pipeline runs.
//!
//! Layout under the data directory:
//!
//! ```text
//! schemas/<id>/index.json   version, history, lock
//! schemas/<id>/v<n>.sdf     immutable snapshot per version
//! extractions/<id>.json
//! runs/<id>.json
//! audit.jsonl               one line per mutation
//! ```
//!
//! Every file is written to a temporary sibling and renamed into place.
//! Mutations on one schema go through that schema's mutex.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Duration, Utc};
use parking_lot::Mutex;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::ingest::{load_extractions, save_extractions, ExtractedEvent};
use crate::schema::{parse_sdf, serialize_sdf_pretty, validate, SchemaLibrary, ValidationReport};

pub const DEFAULT_LOCK_TTL_SECS: i64 = 600;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StoreError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("locked by {holder} until {expires_at}")]
    Locked { holder: String, expires_at: DateTime<Utc> },
    #[error("token is not valid for this schema")]
    BadToken,
    #[error("library failed validation")]
    ValidationFailed(ValidationReport),
    #[error("invalid id {0:?}")]
    InvalidId(String),
    #[error("io: {0}")]
    Io(String),
    #[error("corrupt store file {path}: {reason}")]
    Corrupt { path: String, reason: String },
}

impl From<std::io::Error> for StoreError {
    fn from(e: std::io::Error) -> Self {
        StoreError::Io(e.to_string())
    }
}

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// Settable clock for tests.
#[derive(Debug)]
pub struct ManualClock(Mutex<DateTime<Utc>>);

impl ManualClock {
    pub fn new(start: DateTime<Utc>) -> Self {
        Self(Mutex::new(start))
    }

    pub fn advance(&self, by: Duration) {
        *self.0.lock() += by;
    }
}

impl Clock for ManualClock {
    fn now(&self) -> DateTime<Utc> {
        *self.0.lock()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub version: u32,
    pub timestamp: DateTime<Utc>,
    pub editor: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LockRecord {
    pub token: String,
    pub holder: String,
    pub expires_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct SchemaIndex {
    id: String,
    version: u32,
    history: Vec<HistoryEntry>,
    lock: Option<LockRecord>,
}

/// Public view of a lock; the token is never exposed after issue.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LockInfo {
    pub holder: String,
    pub expires_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredSchema {
    pub id: String,
    /// Version of `library`; the latest unless an older one was requested.
    pub version: u32,
    pub latest_version: u32,
    pub library: SchemaLibrary,
    pub history: Vec<HistoryEntry>,
    pub lock: Option<LockInfo>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LockGrant {
    pub token: String,
    pub holder: String,
    pub expires_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PutOutcome {
    pub version: u32,
    /// A fresh token when the lock was kept; tokens are single use.
    pub token: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub timestamp: DateTime<Utc>,
    pub schema_id: String,
    pub action: String,
    pub version: u32,
    pub holder: String,
}

pub struct Store {
    root: PathBuf,
    clock: Arc<dyn Clock>,
    lock_ttl: Duration,
    writers: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    audit: Mutex<()>,
}

fn check_id(id: &str) -> Result<(), StoreError> {
    let ok = !id.is_empty()
        && id.len() <= 128
        && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
        && !id.starts_with('-');
    if ok {
        Ok(())
    } else {
        Err(StoreError::InvalidId(id.to_string()))
    }
}

fn new_id() -> String {
    uuid::Uuid::new_v4().simple().to_string()
}

/// Writes to a temporary sibling, syncs, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let dir = path.parent().ok_or_else(|| StoreError::Io(format!("no parent for {}", path.display())))?;
    fs::create_dir_all(dir)?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("file");
    let tmp = dir.join(format!(".{name}.{}.tmp", new_id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    if let Err(e) = fs::rename(&tmp, path) {
        let _ = fs::remove_file(&tmp);
        return Err(e.into());
    }
    Ok(())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, StoreError> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| StoreError::Corrupt {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("store records serialize");
    s.push('\n');
    s.into_bytes()
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        Self::open_with_clock(root, Arc::new(SystemClock))
    }

    pub fn open_with_clock(root: impl Into<PathBuf>, clock: Arc<dyn Clock>) -> Result<Self, StoreError> {
        let root = root.into();
        for sub in ["schemas", "extractions", "runs"] {
            fs::create_dir_all(root.join(sub))?;
        }
        Ok(Self {
            root,
            clock,
            lock_ttl: Duration::seconds(DEFAULT_LOCK_TTL_SECS),
            writers: Mutex::new(HashMap::new()),
            audit: Mutex::new(()),
        })
    }

    pub fn with_lock_ttl(mut self, ttl: Duration) -> Self {
        self.lock_ttl = ttl;
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn now(&self) -> DateTime<Utc> {
        self.clock.now()
    }

    fn schema_dir(&self, id: &str) -> PathBuf {
        self.root.join("schemas").join(id)
    }

    fn writer(&self, id: &str) -> Arc<Mutex<()>> {
        self.writers.lock().entry(id.to_string()).or_default().clone()
    }

    fn load_index(&self, id: &str) -> Result<SchemaIndex, StoreError> {
        check_id(id)?;
        let path = self.schema_dir(id).join("index.json");
        if !path.exists() {
            return Err(StoreError::NotFound(format!("schema {id}")));
        }
        read_json(&path)
    }

    fn save_index(&self, index: &SchemaIndex) -> Result<(), StoreError> {
        write_atomic(&self.schema_dir(&index.id).join("index.json"), &to_json(index))
    }

    fn write_snapshot(&self, id: &str, version: u32, lib: &SchemaLibrary) -> Result<(), StoreError> {
        let mut text = serialize_sdf_pretty(lib);
        text.push('\n');
        write_atomic(&self.schema_dir(id).join(format!("v{version}.sdf")), text.as_bytes())
    }

    fn audit(&self, schema_id: &str, action: &str, version: u32, holder: &str) -> Result<(), StoreError> {
        let rec = AuditRecord {
            timestamp: self.now(),
            schema_id: schema_id.to_string(),
            action: action.to_string(),
            version,
            holder: holder.to_string(),
        };
        let mut line = serde_json::to_string(&rec).expect("audit record serializes");
        line.push('\n');
        let _guard = self.audit.lock();
        let mut f = fs::OpenOptions::new().create(true).append(true).open(self.root.join("audit.jsonl"))?;
        f.write_all(line.as_bytes())?;
        f.sync_data()?;
        Ok(())
    }

    pub fn audit_log(&self) -> Result<Vec<AuditRecord>, StoreError> {
        let path = self.root.join("audit.jsonl");
        if !path.exists() {
            return Ok(Vec::new());
        }
        fs::read_to_string(&path)?
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                serde_json::from_str(l).map_err(|e| StoreError::Corrupt {
                    path: path.display().to_string(),
                    reason: e.to_string(),
                })
            })
            .collect()
    }

    pub fn list_schemas(&self) -> Result<Vec<String>, StoreError> {
        let mut ids: Vec<String> = fs::read_dir(self.root.join("schemas"))?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().join("index.json").exists())
            .filter_map(|e| e.file_name().into_string().ok())
            .collect();
        ids.sort();
        Ok(ids)
    }

    pub fn create_schema(&self, library: &SchemaLibrary, editor: &str) -> Result<StoredSchema, StoreError> {
        self.create_schema_with_id(&new_id(), library, editor)
    }

    pub fn create_schema_with_id(
        &self,
        id: &str,
        library: &SchemaLibrary,
        editor: &str,
    ) -> Result<StoredSchema, StoreError> {
        check_id(id)?;
        let report = validate(library);
        if !report.is_valid() {
            return Err(StoreError::ValidationFailed(report));
        }
        let writer = self.writer(id);
        let _guard = writer.lock();
        if self.schema_dir(id).join("index.json").exists() {
            return Err(StoreError::InvalidId(format!("{id} already exists")));
        }
        let index = SchemaIndex {
            id: id.to_string(),
            version: 1,
            history: vec![HistoryEntry { version: 1, timestamp: self.now(), editor: editor.to_string() }],
            lock: None,
        };
        self.write_snapshot(id, 1, library)?;
        self.save_index(&index)?;
        self.audit(id, "create", 1, editor)?;
        Ok(StoredSchema {
            id: id.to_string(),
            version: 1,
            latest_version: 1,
            library: library.clone(),
            history: index.history,
            lock: None,
        })
    }

    pub fn snapshot(&self, id: &str, version: u32) -> Result<SchemaLibrary, StoreError> {
        check_id(id)?;
        let path = self.schema_dir(id).join(format!("v{version}.sdf"));
        if !path.exists() {
            return Err(StoreError::NotFound(format!("schema {id} version {version}")));
        }
        parse_sdf(&fs::read_to_string(&path)?).map_err(|e| StoreError::Corrupt {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }

    pub fn get_schema(&self, id: &str, version: Option<u32>) -> Result<StoredSchema, StoreError> {
        let index = self.load_index(id)?;
        let version = version.unwrap_or(index.version);
        if version == 0 || version > index.version {
            return Err(StoreError::NotFound(format!("schema {id} version {version}")));
        }
        let now = self.now();
        Ok(StoredSchema {
            id: index.id.clone(),
            version,
            latest_version: index.version,
            library: self.snapshot(id, version)?,
            history: index.history,
            lock: index
                .lock
                .filter(|l| l.expires_at > now)
                .map(|l| LockInfo { holder: l.holder, expires_at: l.expires_at }),
        })
    }

    pub fn acquire_lock(&self, id: &str, holder: &str) -> Result<LockGrant, StoreError> {
        let writer = self.writer(id);
        let _guard = writer.lock();
        let mut index = self.load_index(id)?;
        let now = self.now();
        if let Some(l) = index.lock.as_ref().filter(|l| l.expires_at > now) {
            return Err(StoreError::Locked { holder: l.holder.clone(), expires_at: l.expires_at });
        }
        let rec = LockRecord {
            token: new_id(),
            holder: holder.to_string(),
            expires_at: now + self.lock_ttl,
        };
        index.lock = Some(rec.clone());
        self.save_index(&index)?;
        self.audit(id, "lock", index.version, holder)?;
        Ok(LockGrant { token: rec.token, holder: rec.holder, expires_at: rec.expires_at })
    }

    /// Returns the live lock if `token` matches it.
    fn check_token(&self, index: &SchemaIndex, token: &str) -> Result<LockRecord, StoreError> {
        match &index.lock {
            Some(l) if l.token == token && l.expires_at > self.now() => Ok(l.clone()),
            _ => Err(StoreError::BadToken),
        }
    }

    pub fn release_lock(&self, id: &str, token: &str) -> Result<(), StoreError> {
        let writer = self.writer(id);
        let _guard = writer.lock();
        let mut index = self.load_index(id)?;
        let lock = self.check_token(&index, token)?;
        index.lock = None;
        self.save_index(&index)?;
        self.audit(id, "unlock", index.version, &lock.holder)
    }

    pub fn put_schema(
        &self,
        id: &str,
        library: &SchemaLibrary,
        token: &str,
        keep_lock: bool,
    ) -> Result<PutOutcome, StoreError> {
        let writer = self.writer(id);
        let _guard = writer.lock();
        let mut index = self.load_index(id)?;
        let lock = self.check_token(&index, token)?;
        let report = validate(library);
        if !report.is_valid() {
            return Err(StoreError::ValidationFailed(report));
        }
        let version = index.version + 1;
        self.write_snapshot(id, version, library)?;
        index.version = version;
        index.history.push(HistoryEntry { version, timestamp: self.now(), editor: lock.holder.clone() });
        let token = if keep_lock {
            let fresh = new_id();
            index.lock = Some(LockRecord { token: fresh.clone(), ..lock.clone() });
            Some(fresh)
        } else {
            index.lock = None;
            None
        };
        self.save_index(&index)?;
        self.audit(id, "put", version, &lock.holder)?;
        Ok(PutOutcome { version, token })
    }

    pub fn save_extractions(&self, events: &[ExtractedEvent]) -> Result<String, StoreError> {
        let id = new_id();
        let mut text = save_extractions(events);
        text.push('\n');
        write_atomic(&self.root.join("extractions").join(format!("{id}.json")), text.as_bytes())?;
        Ok(id)
    }

    pub fn load_extractions(&self, id: &str) -> Result<Vec<ExtractedEvent>, StoreError> {
        check_id(id)?;
        let path = self.root.join("extractions").join(format!("{id}.json"));
        if !path.exists() {
            return Err(StoreError::NotFound(format!("extraction set {id}")));
        }
        load_extractions(&fs::read_to_string(&path)?, None).map_err(|e| StoreError::Corrupt {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }

    pub fn save_run<T: Serialize>(&self, id: &str, run: &T) -> Result<(), StoreError> {
        check_id(id)?;
        write_atomic(&self.root.join("runs").join(format!("{id}.json")), &to_json(run))
    }

    pub fn load_run<T: DeserializeOwned>(&self, id: &str) -> Result<T, StoreError> {
        check_id(id)?;
        let path = self.root.join("runs").join(format!("{id}.json"));
        if !path.exists() {
            return Err(StoreError::NotFound(format!("run {id}")));
        }
        read_json(&path)
    }
}

/// Every file under `root` with its bytes, sorted by relative path.
pub fn snapshot_tree(root: &Path) -> Result<Vec<(PathBuf, Vec<u8>)>, StoreError> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).expect("under root").to_path_buf();
                out.push((rel, fs::read(&path)?));
            }
        }
    }
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::fixtures::RECYCLING_TEXT;
    use crate::schema::{parse_hierarchy_text, EventId, IssueCode, TemporalRelation};

    fn recycling() -> SchemaLibrary {
        parse_hierarchy_text(RECYCLING_TEXT).unwrap().library
    }

    fn setup() -> (tempfile::TempDir, Arc<ManualClock>, Store) {
        let dir = tempfile::tempdir().unwrap();
        let clock = Arc::new(ManualClock::new("2025-01-01T00:00:00Z".parse().unwrap()));
        let store = Store::open_with_clock(dir.path(), clock.clone()).unwrap();
        (dir, clock, store)
    }

    #[test]
    fn lock_lifecycle() {
        let (_d, clock, store) = setup();
        let s = store.create_schema(&recycling(), "alice").unwrap();
        let grant = store.acquire_lock(&s.id, "alice").unwrap();
        match store.acquire_lock(&s.id, "bob") {
            Err(StoreError::Locked { holder, .. }) => assert_eq!(holder, "alice"),
            other => panic!("{other:?}"),
        }
        clock.advance(Duration::seconds(DEFAULT_LOCK_TTL_SECS + 1));
        let bob = store.acquire_lock(&s.id, "bob").unwrap();
        assert_eq!(store.put_schema(&s.id, &recycling(), &grant.token, false), Err(StoreError::BadToken));
        store.release_lock(&s.id, &bob.token).unwrap();
        assert!(store.acquire_lock("missing", "x").is_err());
    }

    #[test]
    fn put_versions_and_history() {
        let (_d, _c, store) = setup();
        let s = store.create_schema(&recycling(), "alice").unwrap();
        let mut lib = recycling();
        lib.events.get_mut(&EventId::parse("ev1.2").unwrap()).unwrap().description = "edited".into();
        let t = store.acquire_lock(&s.id, "bob").unwrap().token;
        let out = store.put_schema(&s.id, &lib, &t, false).unwrap();
        assert_eq!(out, PutOutcome { version: 2, token: None });
        // the token was consumed
        assert_eq!(store.put_schema(&s.id, &lib, &t, false), Err(StoreError::BadToken));
        let got = store.get_schema(&s.id, None).unwrap();
        assert_eq!((got.version, got.history.len()), (2, 2));
        assert_eq!(got.library, lib);
        assert_eq!(store.get_schema(&s.id, Some(1)).unwrap().library, recycling());
        assert!(store.get_schema(&s.id, Some(3)).is_err());
        let log = store.audit_log().unwrap();
        let actions: Vec<&str> = log.iter().map(|r| r.action.as_str()).collect();
        assert_eq!(actions, ["create", "lock", "put"]);
    }

    #[test]
    fn keep_lock_rotates_token() {
        let (_d, _c, store) = setup();
        let s = store.create_schema(&recycling(), "a").unwrap();
        let t = store.acquire_lock(&s.id, "a").unwrap().token;
        let out = store.put_schema(&s.id, &recycling(), &t, true).unwrap();
        let fresh = out.token.unwrap();
        assert_ne!(fresh, t);
        assert!(store.get_schema(&s.id, None).unwrap().lock.is_some());
        assert_eq!(store.put_schema(&s.id, &recycling(), &fresh, false).unwrap().version, 3);
    }

    #[test]
    fn invalid_edit_is_rejected_without_change() {
        let (dir, _c, store) = setup();
        let s = store.create_schema(&recycling(), "a").unwrap();
        let t = store.acquire_lock(&s.id, "a").unwrap().token;
        let before = snapshot_tree(dir.path()).unwrap();
        let mut lib = recycling();
        lib.relations.push(TemporalRelation::new(EventId::parse("ev1.1").unwrap(), EventId::parse("ev9").unwrap()));
        match store.put_schema(&s.id, &lib, &t, false) {
            Err(StoreError::ValidationFailed(r)) => assert!(r.error_codes().contains(&IssueCode::DanglingReference)),
            other => panic!("{other:?}"),
        }
        assert_eq!(snapshot_tree(dir.path()).unwrap(), before);
    }

    #[test]
    fn restart_preserves_bytes() {
        let (dir, clock, store) = setup();
        let s = store.create_schema(&recycling(), "a").unwrap();
        let t = store.acquire_lock(&s.id, "a").unwrap().token;
        store.put_schema(&s.id, &recycling(), &t, false).unwrap();
        let before = snapshot_tree(dir.path()).unwrap();
        let view = store.get_schema(&s.id, None).unwrap();
        drop(store);
        let reopened = Store::open_with_clock(dir.path(), clock).unwrap();
        assert_eq!(snapshot_tree(dir.path()).unwrap(), before);
        assert_eq!(reopened.get_schema(&s.id, None).unwrap(), view);
    }

    #[test]
    fn extraction_and_run_round_trip() {
        let (_d, _c, store) = setup();
        let events = vec![ExtractedEvent::new("x1", "d1", "strike").with_parameters(["actor=union"])];
        let id = store.save_extractions(&events).unwrap();
        assert_eq!(store.load_extractions(&id).unwrap(), events);
        store.save_run("r1", &serde_json::json!({"k": 1})).unwrap();
        assert_eq!(store.load_run::<serde_json::Value>("r1").unwrap()["k"], 1);
        assert!(matches!(store.load_run::<serde_json::Value>("r2"), Err(StoreError::NotFound(_))));
        assert!(matches!(store.load_run::<serde_json::Value>("../x"), Err(StoreError::InvalidId(_))));
    }
}
