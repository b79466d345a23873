//! Streaming parser for line-delimited tweet archives.
//!
//! Each line is one tweet object in the v1.1 API shape. A tweet yields a
//! profile snapshot of its author and, when it embeds a `retweeted_status`,
//! a second snapshot of the original author. Only the profile fields used
//! downstream are kept.

use std::borrow::Cow;
use std::collections::HashSet;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Read};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use chrono::DateTime;
use flate2::read::MultiGzDecoder;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::store::{ProfileSnapshot, RecordSink, TweetObservation};

const ARCHIVE_TIME_FORMAT: &str = "%a %b %d %H:%M:%S %z %Y";

/// One raw line of an archive file.
#[derive(Debug, Clone, Copy)]
pub struct RawRecord<'a> {
    pub line_number: u64,
    pub payload: &'a str,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MalformedRecord {
    #[error("line {line}: not a JSON object: {message}")]
    Unparseable { line: u64, message: String },
    #[error("line {line}: missing user id")]
    MissingUserId { line: u64 },
    #[error("line {line}: missing or invalid timestamp")]
    MissingTimestamp { line: u64 },
    #[error("line {line}: invalid profile: {message}")]
    InvalidProfile { line: u64, message: String },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FileFailure {
    pub path: PathBuf,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestStats {
    pub records_read: u64,
    pub records_malformed: u64,
    /// Snapshots produced by the parser, before deduplication.
    pub snapshots_parsed: u64,
    /// Snapshots the sink accepted as new.
    pub snapshots_emitted: u64,
    /// Tweets the sink accepted as new.
    pub tweets_emitted: u64,
    pub distinct_users: u64,
    pub bytes_processed: u64,
    pub elapsed: f64,
    pub failed_files: Vec<FileFailure>,
}

impl IngestStats {
    /// Megabytes (10^6 bytes) of uncompressed input per second.
    pub fn throughput_mb_s(&self) -> f64 {
        if self.elapsed <= 0.0 {
            return 0.0;
        }
        self.bytes_processed as f64 / 1e6 / self.elapsed
    }

    fn absorb(&mut self, other: &IngestStats) {
        self.records_read += other.records_read;
        self.records_malformed += other.records_malformed;
        self.snapshots_parsed += other.snapshots_parsed;
        self.snapshots_emitted += other.snapshots_emitted;
        self.tweets_emitted += other.tweets_emitted;
        self.bytes_processed += other.bytes_processed;
        self.failed_files.extend(other.failed_files.iter().cloned());
    }
}

#[derive(Deserialize)]
struct RawTweet<'a> {
    #[serde(borrow, default)]
    id_str: Option<Cow<'a, str>>,
    #[serde(default)]
    id: Option<u64>,
    #[serde(borrow, default)]
    created_at: Option<Cow<'a, str>>,
    #[serde(borrow, default)]
    text: Option<Cow<'a, str>>,
    #[serde(borrow, default)]
    source: Option<Cow<'a, str>>,
    #[serde(borrow, default)]
    lang: Option<Cow<'a, str>>,
    #[serde(borrow, default)]
    entities: Option<RawEntities<'a>>,
    #[serde(borrow, default)]
    user: Option<RawUser<'a>>,
    #[serde(borrow, default)]
    retweeted_status: Option<Box<RawTweet<'a>>>,
}

#[derive(Deserialize)]
struct RawEntities<'a> {
    #[serde(borrow, default)]
    hashtags: Vec<RawHashtag<'a>>,
}

#[derive(Deserialize)]
struct RawHashtag<'a> {
    #[serde(borrow)]
    text: Cow<'a, str>,
}

#[derive(Deserialize)]
struct RawUser<'a> {
    #[serde(borrow, default)]
    id_str: Option<Cow<'a, str>>,
    #[serde(default)]
    id: Option<u64>,
    #[serde(borrow, default)]
    screen_name: Option<Cow<'a, str>>,
    #[serde(borrow, default)]
    name: Option<Cow<'a, str>>,
    #[serde(borrow, default)]
    description: Option<Cow<'a, str>>,
    #[serde(borrow, default)]
    location: Option<Cow<'a, str>>,
    #[serde(borrow, default)]
    url: Option<Cow<'a, str>>,
    #[serde(borrow, default)]
    lang: Option<Cow<'a, str>>,
    #[serde(default)]
    followers_count: Option<u64>,
    #[serde(default)]
    friends_count: Option<u64>,
    #[serde(default)]
    statuses_count: Option<u64>,
    #[serde(default)]
    favourites_count: Option<u64>,
    #[serde(borrow, default)]
    created_at: Option<Cow<'a, str>>,
    #[serde(borrow, default)]
    profile_image_url_https: Option<Cow<'a, str>>,
    #[serde(borrow, default)]
    profile_image_url: Option<Cow<'a, str>>,
}

/// Parses an archive timestamp such as `Wed Oct 10 20:19:24 +0000 2018`
/// into UTC seconds.
pub fn parse_archive_time(s: &str) -> Option<i64> {
    DateTime::parse_from_str(s, ARCHIVE_TIME_FORMAT)
        .ok()
        .map(|t| t.timestamp())
}

pub fn format_archive_time(secs: i64) -> String {
    DateTime::from_timestamp(secs, 0)
        .unwrap_or_default()
        .format("%a %b %d %H:%M:%S +0000 %Y")
        .to_string()
}

/// Client label from the `source` field, which the API wraps in an anchor
/// element (`<a href="...">Twitter for iPhone</a>`).
pub fn source_label(source: &str) -> &str {
    if let Some(start) = source.find('>') {
        if let Some(end) = source[start + 1..].find('<') {
            return &source[start + 1..start + 1 + end];
        }
    }
    source
}

fn text(v: &Option<Cow<'_, str>>) -> String {
    v.as_deref().unwrap_or("").to_string()
}

fn id_of(id_str: &Option<Cow<'_, str>>, id: Option<u64>) -> Option<String> {
    match id_str.as_deref() {
        Some(s) if !s.is_empty() => Some(s.to_string()),
        _ => id.map(|n| n.to_string()),
    }
}

fn observe(
    tweet: &RawTweet<'_>,
    captured_at: Option<i64>,
    line: u64,
) -> Result<(ProfileSnapshot, Option<TweetObservation>), MalformedRecord> {
    let user = tweet
        .user
        .as_ref()
        .ok_or(MalformedRecord::MissingUserId { line })?;
    let user_id = id_of(&user.id_str, user.id).ok_or(MalformedRecord::MissingUserId { line })?;
    let posted_at = tweet
        .created_at
        .as_deref()
        .and_then(parse_archive_time)
        .ok_or(MalformedRecord::MissingTimestamp { line })?;
    let account_created_at = match user.created_at.as_deref() {
        Some(s) => parse_archive_time(s).ok_or(MalformedRecord::MissingTimestamp { line })?,
        None => posted_at,
    };
    let snapshot = ProfileSnapshot {
        user_id: user_id.clone(),
        observed_at: posted_at,
        captured_at: captured_at.unwrap_or(posted_at),
        screen_name: text(&user.screen_name),
        name: text(&user.name),
        description: text(&user.description),
        location: text(&user.location),
        url: text(&user.url),
        profile_language: text(&user.lang),
        followers_count: user.followers_count.unwrap_or(0),
        friends_count: user.friends_count.unwrap_or(0),
        statuses_count: user.statuses_count.unwrap_or(0),
        favourites_count: user.favourites_count.unwrap_or(0),
        account_created_at,
        profile_image_url: user
            .profile_image_url_https
            .as_deref()
            .or(user.profile_image_url.as_deref())
            .map(str::to_string),
    };
    snapshot
        .validate()
        .map_err(|message| MalformedRecord::InvalidProfile { line, message })?;

    let observation = id_of(&tweet.id_str, tweet.id).map(|tweet_id| TweetObservation {
        user_id,
        tweet_id,
        posted_at,
        text: text(&tweet.text),
        hashtags: tweet
            .entities
            .as_ref()
            .map(|e| e.hashtags.iter().map(|h| h.text.to_lowercase()).collect())
            .unwrap_or_default(),
        source: source_label(tweet.source.as_deref().unwrap_or("")).to_string(),
        language: text(&tweet.lang),
    });
    Ok((snapshot, observation))
}

/// Parses one archive line into the author's snapshot (and tweet) and, for
/// retweets, the original author's snapshot timestamped with the original
/// tweet's creation time and captured at the retweet's time.
pub fn parse_record(
    record: RawRecord<'_>,
) -> Result<Vec<(ProfileSnapshot, Option<TweetObservation>)>, MalformedRecord> {
    let line = record.line_number;
    let tweet: RawTweet<'_> =
        serde_json::from_str(record.payload).map_err(|e| MalformedRecord::Unparseable {
            line,
            message: e.to_string(),
        })?;
    let outer = observe(&tweet, None, line)?;
    let mut out = Vec::with_capacity(2);
    let captured_at = outer.0.captured_at;
    out.push(outer);
    if let Some(inner) = tweet.retweeted_status.as_deref() {
        out.push(observe(inner, Some(captured_at), line)?);
    }
    Ok(out)
}

/// Sink that stores nothing; every record counts as new. Used to measure the
/// parser path in isolation.
#[derive(Debug, Default)]
pub struct CountingSink {
    pub snapshots: AtomicUsize,
    pub tweets: AtomicUsize,
}

impl RecordSink for CountingSink {
    fn put_snapshot(&self, _: ProfileSnapshot) -> Result<bool, crate::store::StoreError> {
        self.snapshots.fetch_add(1, Ordering::Relaxed);
        Ok(true)
    }

    fn put_tweet(&self, _: TweetObservation) -> Result<bool, crate::store::StoreError> {
        self.tweets.fetch_add(1, Ordering::Relaxed);
        Ok(true)
    }
}

/// Parses every line of `reader` into `sink`. Malformed lines are counted
/// and skipped; a sink failure stops the stream and is returned.
pub fn ingest_reader<R: BufRead>(
    mut reader: R,
    sink: &dyn RecordSink,
    stats: &mut IngestStats,
    users: &mut HashSet<String>,
) -> io::Result<()> {
    let mut buf = Vec::with_capacity(8 * 1024);
    let mut line_number = 0u64;
    loop {
        buf.clear();
        let n = reader.read_until(b'\n', &mut buf)?;
        if n == 0 {
            break;
        }
        line_number += 1;
        stats.bytes_processed += n as u64;
        stats.records_read += 1;

        let mut bytes = buf.as_slice();
        if let Some(stripped) = bytes.strip_suffix(b"\n") {
            bytes = stripped;
        }
        if let Some(stripped) = bytes.strip_suffix(b"\r") {
            bytes = stripped;
        }
        let parsed = std::str::from_utf8(bytes)
            .map_err(|e| MalformedRecord::Unparseable {
                line: line_number,
                message: e.to_string(),
            })
            .and_then(|payload| {
                parse_record(RawRecord {
                    line_number,
                    payload,
                })
            });
        let items = match parsed {
            Ok(items) => items,
            Err(e) => {
                log::debug!("{e}");
                stats.records_malformed += 1;
                continue;
            }
        };
        for (snapshot, tweet) in items {
            stats.snapshots_parsed += 1;
            if !users.contains(&snapshot.user_id) {
                users.insert(snapshot.user_id.clone());
            }
            if sink.put_snapshot(snapshot).map_err(io::Error::other)? {
                stats.snapshots_emitted += 1;
            }
            if let Some(tweet) = tweet {
                if sink.put_tweet(tweet).map_err(io::Error::other)? {
                    stats.tweets_emitted += 1;
                }
            }
        }
    }
    Ok(())
}

/// Opens a plain or gzip-compressed file, detected by its magic bytes.
pub fn open_archive(path: &Path) -> io::Result<Box<dyn BufRead + Send>> {
    let mut reader = BufReader::with_capacity(1 << 20, File::open(path)?);
    let magic = reader.fill_buf()?;
    if magic.starts_with(&[0x1f, 0x8b]) {
        Ok(Box::new(BufReader::with_capacity(
            1 << 20,
            MultiGzDecoder::new(reader),
        )))
    } else {
        Ok(Box::new(reader))
    }
}

fn ingest_file(path: &Path, sink: &dyn RecordSink, users: &mut HashSet<String>) -> IngestStats {
    let mut stats = IngestStats::default();
    let result = open_archive(path).and_then(|r| ingest_reader(r, sink, &mut stats, users));
    if let Err(e) = result {
        log::error!("{}: {e}", path.display());
        stats.failed_files.push(FileFailure {
            path: path.to_path_buf(),
            error: e.to_string(),
        });
    }
    stats
}

/// Ingests all `sources` into `sink` with up to `workers` files parsed in
/// parallel. Unreadable files are reported in `failed_files`; the others are
/// still processed.
pub fn ingest_stream(sources: &[PathBuf], sink: &dyn RecordSink, workers: usize) -> IngestStats {
    let start = Instant::now();
    let next = AtomicUsize::new(0);
    let merged = Mutex::new((IngestStats::default(), HashSet::<String>::new()));
    let workers = workers.max(1).min(sources.len().max(1));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| {
                let mut users = HashSet::new();
                let mut local = IngestStats::default();
                loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(path) = sources.get(i) else { break };
                    local.absorb(&ingest_file(path, sink, &mut users));
                }
                let mut guard = merged.lock().unwrap();
                guard.0.absorb(&local);
                guard.1.extend(users);
            });
        }
    });

    let (mut stats, users) = merged.into_inner().unwrap();
    stats.distinct_users = users.len() as u64;
    stats.failed_files.sort_by(|a, b| a.path.cmp(&b.path));
    stats.elapsed = start.elapsed().as_secs_f64();
    stats
}

/// Expands glob patterns into a sorted, de-duplicated file list. A pattern
/// without wildcards that names an existing file is taken literally.
pub fn expand_inputs(patterns: &[String]) -> Result<Vec<PathBuf>, String> {
    let mut out = Vec::new();
    for pattern in patterns {
        let paths = glob::glob(pattern).map_err(|e| format!("bad pattern {pattern}: {e}"))?;
        for p in paths {
            let p = p.map_err(|e| e.to_string())?;
            if p.is_file() {
                out.push(p);
            }
        }
    }
    out.sort();
    out.dedup();
    Ok(out)
}

/// Reads an entire file through the archive reader; handy for tests.
pub fn read_archive_to_string(path: &Path) -> io::Result<String> {
    let mut s = String::new();
    open_archive(path)?.read_to_string(&mut s)?;
    Ok(s)
}
