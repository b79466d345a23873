mod common;

use std::fs;
use std::io::Write;
use std::path::PathBuf;

use flate2::write::GzEncoder;
use flate2::Compression;
use repurpose::fixture::AccountKind;
use repurpose::ingest::{ingest_stream, CountingSink};
use repurpose::SnapshotStore;

const TWEET: &str = r#"{"created_at":"Wed Mar 01 10:00:00 +0000 2017","id_str":"11","text":"Hello #FF world","source":"<a href=\"x\">Buffer</a>","lang":"en","entities":{"hashtags":[{"text":"FF"}]},"user":{"id_str":"77","screen_name":"alpha","name":"Alpha","description":"first","location":"","url":null,"lang":"en","followers_count":10,"friends_count":2,"statuses_count":5,"favourites_count":1,"created_at":"Sun Jan 01 00:00:00 +0000 2017"}}"#;

#[test]
fn fixture_ingest_counts_and_planted_events() {
    let dir = tempfile::tempdir().unwrap();
    let summary = common::small_fixture(&dir.path().join("fixture"), 200);
    assert!(summary.files.iter().any(|p| p.extension().is_some_and(|e| e == "gz")));
    let store = SnapshotStore::open(dir.path().join("store")).unwrap();
    let stats = ingest_stream(&summary.files, &store, 2);
    assert!(stats.failed_files.is_empty());
    assert_eq!(stats.records_read, summary.lines);
    assert_eq!(stats.records_malformed, summary.malformed_lines);
    let view = store.view();
    assert_eq!(view.user_count(), 200);

    let events: std::collections::HashSet<String> =
        view.all_change_events().into_iter().map(|e| e.event_ref).collect();
    for account in &summary.accounts {
        match account.kind {
            AccountKind::Stable => assert!(account.event_ref.is_none()),
            _ => assert!(events.contains(account.event_ref.as_ref().unwrap()), "{:?}", account),
        }
    }
}

#[test]
fn unreadable_files_are_reported_and_others_continue() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.jsonl.gz");
    let mut gz = GzEncoder::new(fs::File::create(&good).unwrap(), Compression::default());
    writeln!(gz, "{TWEET}").unwrap();
    gz.finish().unwrap();
    let bad = dir.path().join("bad.jsonl.gz");
    fs::write(&bad, [0x1f, 0x8b, 0x08, 0x00, 0xde, 0xad]).unwrap();
    let missing = dir.path().join("missing.jsonl");

    let sink = CountingSink::default();
    let stats = ingest_stream(&[good, bad.clone(), missing.clone()], &sink, 1);
    let failed: Vec<PathBuf> = stats.failed_files.iter().map(|f| f.path.clone()).collect();
    assert!(failed.contains(&missing));
    assert!(failed.contains(&bad));
    assert_eq!(stats.snapshots_parsed, 1);
    assert_eq!(sink.snapshots.load(std::sync::atomic::Ordering::Relaxed), 1);
}

#[test]
fn malformed_lines_are_counted_not_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mixed.jsonl");
    let body = format!(
        "{TWEET}\nnot json\n{{\"id_str\":\"1\"}}\n\n{}\n",
        TWEET.replace("\"id_str\":\"11\"", "\"id_str\":\"12\"")
    );
    fs::write(&path, body).unwrap();
    let store = SnapshotStore::open(dir.path().join("store")).unwrap();
    let stats = ingest_stream(&[path], &store, 1);
    // the blank line counts as malformed too
    assert_eq!(stats.records_malformed, 3);
    assert_eq!(stats.snapshots_parsed, 2);
    // same user, time and handle: one snapshot kept
    assert_eq!(stats.snapshots_emitted, 1);
    assert_eq!(stats.tweets_emitted, 2);
    let timeline = store.timeline("77");
    assert_eq!(timeline.len(), 1);
    assert_eq!(timeline[0].screen_name, "alpha");
    assert_eq!(timeline[0].url, "");
}
