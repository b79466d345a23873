//! Append-only per-user snapshot and tweet store.
//!
//! Layout of a store directory:
//!
//! ```text
//! <root>/MANIFEST                 "repurpose-store <version> <partitions>"
//! <root>/snapshots/p00.jsonl ...  one ProfileSnapshot per line
//! <root>/tweets/p00.jsonl ...     one TweetObservation per line
//! ```
//!
//! Records are routed to a partition by a hash of `user_id`. The in-memory
//! index is rebuilt from the partition files on open. Snapshots are keyed by
//! `(user_id, observed_at, screen_name)` and tweets by `(user_id, tweet_id)`;
//! when two different records share a key the one with the smaller
//! `(capture time, canonical JSON)` wins, so the logical contents never
//! depend on append order.

mod events;
mod types;

pub use events::{change_events_from_timeline, ChangeScan};
pub use types::{ChangeEvent, ProfileSnapshot, TweetObservation};

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use thiserror::Error;

use crate::features::hash::fnv1a64;

pub const STORE_FORMAT_VERSION: u32 = 1;
pub const PARTITIONS: usize = 16;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("invalid record: {0}")]
    Validation(String),
    #[error("corrupt store file {path} line {line}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("store format version {found} is not supported (expected {STORE_FORMAT_VERSION})")]
    Version { found: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Destination for parsed archive records.
///
/// Returns `true` when the record was not already present.
pub trait RecordSink: Sync {
    fn put_snapshot(&self, snapshot: ProfileSnapshot) -> Result<bool, StoreError>;
    fn put_tweet(&self, tweet: TweetObservation) -> Result<bool, StoreError>;
}

#[derive(Debug, Default, Clone)]
struct UserRecords {
    snapshots: BTreeMap<(i64, String), ProfileSnapshot>,
    tweets: BTreeMap<String, TweetObservation>,
}

impl UserRecords {
    fn timeline(&self) -> Vec<ProfileSnapshot> {
        let mut out: Vec<ProfileSnapshot> = self.snapshots.values().cloned().collect();
        sort_timeline(&mut out);
        out
    }

    fn tweets(&self) -> Vec<TweetObservation> {
        let mut out: Vec<TweetObservation> = self.tweets.values().cloned().collect();
        out.sort_by(|a, b| (a.posted_at, &a.tweet_id).cmp(&(b.posted_at, &b.tweet_id)));
        out
    }

    /// Inserts with the collision rule. Returns (key was new, record must be persisted).
    fn insert_snapshot(&mut self, s: ProfileSnapshot) -> (bool, bool) {
        let key = (s.observed_at, s.screen_name.clone());
        match self.snapshots.get(&key) {
            None => {
                self.snapshots.insert(key, s);
                (true, true)
            }
            Some(existing) if existing == &s => (false, false),
            Some(existing) => {
                if snapshot_rank(&s) < snapshot_rank(existing) {
                    self.snapshots.insert(key, s);
                    (false, true)
                } else {
                    (false, false)
                }
            }
        }
    }

    fn insert_tweet(&mut self, t: TweetObservation) -> (bool, bool) {
        match self.tweets.get(&t.tweet_id) {
            None => {
                self.tweets.insert(t.tweet_id.clone(), t);
                (true, true)
            }
            Some(existing) if existing == &t => (false, false),
            Some(existing) => {
                if tweet_rank(&t) < tweet_rank(existing) {
                    self.tweets.insert(t.tweet_id.clone(), t);
                    (false, true)
                } else {
                    (false, false)
                }
            }
        }
    }
}

fn snapshot_rank(s: &ProfileSnapshot) -> (i64, String) {
    (s.captured_at, serde_json::to_string(s).unwrap_or_default())
}

fn tweet_rank(t: &TweetObservation) -> (i64, String) {
    (t.posted_at, serde_json::to_string(t).unwrap_or_default())
}

/// Timeline order: captured_at, then observed_at, then screen_name.
pub fn sort_timeline(snapshots: &mut [ProfileSnapshot]) {
    snapshots.sort_by(|a, b| {
        (a.captured_at, a.observed_at, &a.screen_name).cmp(&(
            b.captured_at,
            b.observed_at,
            &b.screen_name,
        ))
    });
}

fn partition_of(user_id: &str) -> usize {
    (fnv1a64(0, user_id.as_bytes()) % PARTITIONS as u64) as usize
}

struct Inner {
    users: HashMap<String, UserRecords>,
    snapshot_files: Vec<BufWriter<File>>,
    tweet_files: Vec<BufWriter<File>>,
}

/// Durable snapshot store rooted at a directory.
pub struct SnapshotStore {
    root: PathBuf,
    inner: Mutex<Inner>,
}

impl SnapshotStore {
    /// Opens (or creates) a store directory and rebuilds the index.
    pub fn open(root: impl AsRef<Path>) -> Result<Self, StoreError> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(root.join("snapshots")).map_err(io_err(&root))?;
        fs::create_dir_all(root.join("tweets")).map_err(io_err(&root))?;

        let manifest = root.join("MANIFEST");
        let expected = format!("repurpose-store {STORE_FORMAT_VERSION} {PARTITIONS}");
        if manifest.exists() {
            let found = fs::read_to_string(&manifest).map_err(io_err(&manifest))?;
            if found.trim() != expected {
                return Err(StoreError::Version {
                    found: found.trim().to_string(),
                });
            }
        } else {
            fs::write(&manifest, format!("{expected}\n")).map_err(io_err(&manifest))?;
        }

        let mut users: HashMap<String, UserRecords> = HashMap::new();
        let mut snapshot_files = Vec::with_capacity(PARTITIONS);
        let mut tweet_files = Vec::with_capacity(PARTITIONS);
        for p in 0..PARTITIONS {
            let spath = root.join("snapshots").join(format!("p{p:02x}.jsonl"));
            load_lines(&spath, |s: ProfileSnapshot| {
                users.entry(s.user_id.clone()).or_default().insert_snapshot(s);
            })?;
            let tpath = root.join("tweets").join(format!("p{p:02x}.jsonl"));
            load_lines(&tpath, |t: TweetObservation| {
                users.entry(t.user_id.clone()).or_default().insert_tweet(t);
            })?;
            snapshot_files.push(open_append(&spath)?);
            tweet_files.push(open_append(&tpath)?);
        }

        Ok(Self {
            root,
            inner: Mutex::new(Inner {
                users,
                snapshot_files,
                tweet_files,
            }),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn append_snapshot(&self, snapshot: ProfileSnapshot) -> Result<bool, StoreError> {
        snapshot.validate().map_err(StoreError::Validation)?;
        let part = partition_of(&snapshot.user_id);
        let line = serde_json::to_string(&snapshot).map_err(|e| StoreError::Validation(e.to_string()))?;
        let mut inner = self.inner.lock().unwrap();
        let (is_new, persist) = inner
            .users
            .entry(snapshot.user_id.clone())
            .or_default()
            .insert_snapshot(snapshot);
        if persist {
            let path = self.partition_path("snapshots", part);
            writeln!(inner.snapshot_files[part], "{line}").map_err(io_err(&path))?;
        }
        Ok(is_new)
    }

    pub fn append_tweet(&self, tweet: TweetObservation) -> Result<bool, StoreError> {
        if tweet.user_id.is_empty() || tweet.tweet_id.is_empty() {
            return Err(StoreError::Validation("tweet without user_id or tweet_id".into()));
        }
        let part = partition_of(&tweet.user_id);
        let line = serde_json::to_string(&tweet).map_err(|e| StoreError::Validation(e.to_string()))?;
        let mut inner = self.inner.lock().unwrap();
        let (is_new, persist) = inner
            .users
            .entry(tweet.user_id.clone())
            .or_default()
            .insert_tweet(tweet);
        if persist {
            let path = self.partition_path("tweets", part);
            writeln!(inner.tweet_files[part], "{line}").map_err(io_err(&path))?;
        }
        Ok(is_new)
    }

    pub fn flush(&self) -> Result<(), StoreError> {
        let mut inner = self.inner.lock().unwrap();
        let Inner {
            snapshot_files,
            tweet_files,
            ..
        } = &mut *inner;
        for (p, f) in snapshot_files.iter_mut().enumerate() {
            f.flush().map_err(io_err(&self.partition_path("snapshots", p)))?;
        }
        for (p, f) in tweet_files.iter_mut().enumerate() {
            f.flush().map_err(io_err(&self.partition_path("tweets", p)))?;
        }
        Ok(())
    }

    /// Snapshots of one user in timeline order; unknown users yield an empty list.
    pub fn timeline(&self, user_id: &str) -> Vec<ProfileSnapshot> {
        let inner = self.inner.lock().unwrap();
        inner
            .users
            .get(user_id)
            .map(UserRecords::timeline)
            .unwrap_or_default()
    }

    pub fn tweets(&self, user_id: &str) -> Vec<TweetObservation> {
        let inner = self.inner.lock().unwrap();
        inner
            .users
            .get(user_id)
            .map(UserRecords::tweets)
            .unwrap_or_default()
    }

    pub fn extract_change_events(&self, user_id: &str) -> Vec<ChangeEvent> {
        let (timeline, tweets) = {
            let inner = self.inner.lock().unwrap();
            match inner.users.get(user_id) {
                Some(u) => (u.timeline(), u.tweets()),
                None => return Vec::new(),
            }
        };
        change_events_from_timeline(user_id, &timeline, &tweets)
    }

    /// Immutable copy of the current contents.
    pub fn view(&self) -> StoreView {
        let inner = self.inner.lock().unwrap();
        StoreView {
            users: inner
                .users
                .iter()
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    fn partition_path(&self, kind: &str, p: usize) -> PathBuf {
        self.root.join(kind).join(format!("p{p:02x}.jsonl"))
    }
}

impl Drop for SnapshotStore {
    fn drop(&mut self) {
        if let Err(e) = self.flush() {
            log::error!("failed to flush store {}: {e}", self.root.display());
        }
    }
}

impl RecordSink for SnapshotStore {
    fn put_snapshot(&self, snapshot: ProfileSnapshot) -> Result<bool, StoreError> {
        self.append_snapshot(snapshot)
    }

    fn put_tweet(&self, tweet: TweetObservation) -> Result<bool, StoreError> {
        self.append_tweet(tweet)
    }
}

/// Point-in-time, read-only view of a store.
#[derive(Debug, Clone, Default)]
pub struct StoreView {
    users: BTreeMap<String, UserRecords>,
}

impl StoreView {
    pub fn user_ids(&self) -> impl Iterator<Item = &str> {
        self.users.keys().map(String::as_str)
    }

    pub fn user_count(&self) -> usize {
        self.users.len()
    }

    pub fn snapshot_count(&self) -> usize {
        self.users.values().map(|u| u.snapshots.len()).sum()
    }

    pub fn tweet_count(&self) -> usize {
        self.users.values().map(|u| u.tweets.len()).sum()
    }

    pub fn timeline(&self, user_id: &str) -> Vec<ProfileSnapshot> {
        self.users
            .get(user_id)
            .map(UserRecords::timeline)
            .unwrap_or_default()
    }

    pub fn tweets(&self, user_id: &str) -> Vec<TweetObservation> {
        self.users
            .get(user_id)
            .map(UserRecords::tweets)
            .unwrap_or_default()
    }

    pub fn extract_change_events(&self, user_id: &str) -> Vec<ChangeEvent> {
        match self.users.get(user_id) {
            Some(u) => change_events_from_timeline(user_id, &u.timeline(), &u.tweets()),
            None => Vec::new(),
        }
    }

    /// Users with at least one change event, plus global counts.
    pub fn scan_changed_users(&self) -> ChangeScan {
        let mut scan = ChangeScan {
            total_users: self.users.len(),
            ..ChangeScan::default()
        };
        for (user_id, records) in &self.users {
            let n = events::count_changes(&records.timeline());
            if n > 0 {
                scan.users.push(user_id.clone());
                scan.events += n;
            }
        }
        scan
    }

    /// All change events of all users, ordered by user id then timeline.
    pub fn all_change_events(&self) -> Vec<ChangeEvent> {
        self.scan_changed_users()
            .changed_users()
            .flat_map(|u| self.extract_change_events(u))
            .collect()
    }
}

fn open_append(path: &Path) -> Result<BufWriter<File>, StoreError> {
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err(path))?;
    Ok(BufWriter::new(file))
}

fn load_lines<T: serde::de::DeserializeOwned>(
    path: &Path,
    mut apply: impl FnMut(T),
) -> Result<(), StoreError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(()),
        Err(e) => return Err(io_err(path)(e)),
    };
    let mut reader = BufReader::new(file);
    let mut buf = String::new();
    let mut line_no = 0;
    loop {
        buf.clear();
        let n = reader.read_line(&mut buf).map_err(io_err(path))?;
        if n == 0 {
            break;
        }
        line_no += 1;
        if !buf.ends_with('\n') {
            // interrupted write of the final record
            log::warn!("{}: ignoring truncated final line {line_no}", path.display());
            break;
        }
        let record = serde_json::from_str(buf.trim_end()).map_err(|e| StoreError::Corrupt {
            path: path.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        })?;
        apply(record);
    }
    Ok(())
}
