mod common;

use std::collections::BTreeMap;

use indexmap::IndexMap;
use proptest::prelude::*;

use repurpose::annotation::{
    cohen_kappa, fleiss_kappa, AnnotationStore, ExportFilter, Label, LabelRecord, Sampler, Stratum, UnsureMode,
};
use repurpose::classifier::{
    baseline_classify, evaluate, predict, predict_label, train_forest, ForestConfig, ModelArtifact,
};
use repurpose::features::embedding::HashedNgramEmbedding;
use repurpose::features::{self, change_ratio, Family, FeatureConfig};
use repurpose::ingest::{format_archive_time, ingest_stream};
use repurpose::stats::deletion_comparison;
use repurpose::store::sort_timeline;
use repurpose::{ChangeEvent, FeatureVector, ProfileSnapshot, SnapshotStore};

fn snap_strategy() -> impl Strategy<Value = ProfileSnapshot> {
    (0..3u8, 0..20i64, 0..3i64, prop::sample::select(vec!["a", "b", "A", "c"]), 0..3u64).prop_map(
        |(u, observed, lag, handle, followers)| {
            let mut s = common::snapshot(&format!("u{u}"), handle, followers, observed);
            s.captured_at = observed + lag;
            s
        },
    )
}

/// Dedup on (user, observed_at, screen_name), keeping the earliest capture
/// and then the smallest serialized form.
fn oracle_timeline(snaps: &[ProfileSnapshot], user: &str) -> Vec<ProfileSnapshot> {
    let mut best: BTreeMap<(i64, String), ProfileSnapshot> = BTreeMap::new();
    for s in snaps.iter().filter(|s| s.user_id == user) {
        let key = (s.observed_at, s.screen_name.clone());
        let rank = |x: &ProfileSnapshot| (x.captured_at, serde_json::to_string(x).unwrap());
        match best.get(&key) {
            Some(cur) if rank(cur) <= rank(s) => {}
            _ => {
                best.insert(key, s.clone());
            }
        }
    }
    let mut out: Vec<_> = best.into_values().collect();
    sort_timeline(&mut out);
    out
}

fn handle_runs(timeline: &[ProfileSnapshot]) -> usize {
    let mut runs = 0;
    let mut last: Option<String> = None;
    for s in timeline {
        let h = s.screen_name.to_lowercase();
        if last.as_ref() != Some(&h) {
            runs += 1;
            last = Some(h);
        }
    }
    runs
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn store_round_trip_and_event_count(snaps in prop::collection::vec(snap_strategy(), 0..40)) {
        let dir = tempfile::tempdir().unwrap();
        {
            let store = SnapshotStore::open(dir.path()).unwrap();
            for s in &snaps {
                store.append_snapshot(s.clone()).unwrap();
            }
            store.flush().unwrap();
        }
        let store = SnapshotStore::open(dir.path()).unwrap();
        for u in ["u0", "u1", "u2"] {
            let expected = oracle_timeline(&snaps, u);
            let timeline = store.timeline(u);
            prop_assert_eq!(&timeline, &expected);
            let events = store.extract_change_events(u);
            prop_assert_eq!(events.len(), handle_runs(&timeline).saturating_sub(1));
        }
    }

    #[test]
    fn change_ratio_sign_follows_loss(a in 0u64..1_000_000, b in 0u64..1_000_000) {
        let r = change_ratio(a, b);
        prop_assert!((-1.0..=1.0).contains(&r));
        prop_assert_eq!(r > 0.0, a > b);
        prop_assert_eq!(r < 0.0, a < b);
    }

    #[test]
    fn assembled_features_finite_and_ordered(
        name in "\\PC{0,30}",
        desc in "\\PC{0,60}",
        counters in prop::array::uniform4(0u64..u64::from(u32::MAX)),
        dormancy in 0i64..100_000_000,
    ) {
        let mut e = common::event(1, counters[0]);
        e.next.name = name;
        e.next.description = desc;
        e.next.statuses_count = counters[1];
        e.next.friends_count = counters[2];
        e.prev.favourites_count = counters[3];
        e.dormancy = dormancy;
        let config = FeatureConfig::new(&Family::ALL);
        let emb = HashedNgramEmbedding::default();
        let fv = features::assemble(&e, &config, &emb).unwrap();
        prop_assert!(fv.values.values().all(|v| v.is_finite()));
        let reference = features::assemble(&common::event(2, 0), &config, &emb).unwrap();
        prop_assert!(fv.names().eq(reference.names()));
    }

    #[test]
    fn evaluate_threshold_extremes(data in prop::collection::vec((0.0..=1.0f64, any::<bool>()), 1..60)) {
        let (scores, labels): (Vec<f64>, Vec<bool>) = data.into_iter().unzip();
        let low = evaluate(&scores, &labels, 0.0).unwrap();
        if labels.iter().any(|y| *y) {
            prop_assert_eq!(low.recall, 1.0);
        }
        let high = evaluate(&scores, &labels, 1.0 + 1e-9).unwrap();
        prop_assert_eq!(high.fpr, 0.0);
    }

    #[test]
    fn baseline_model_matches_rule(n in 0.0..=1.0f64, d in 0.0..=1.0f64) {
        let mut values = IndexMap::new();
        values.insert("nld_name".to_string(), n);
        values.insert("nld_description".to_string(), d);
        let fv = FeatureVector { event_ref: "x".into(), values, families: vec![] };
        let model = ModelArtifact::baseline();
        prop_assert_eq!(baseline_classify(&fv).unwrap(), predict_label(&model, &fv, 0.5).unwrap());
    }

    #[test]
    fn cohen_kappa_at_most_one_and_one_iff_identical(
        pairs in prop::collection::vec((0..3usize, 0..3usize), 1..40)
    ) {
        let a: Vec<Label> = pairs.iter().map(|p| Label::ALL[p.0]).collect();
        let b: Vec<Label> = pairs.iter().map(|p| Label::ALL[p.1]).collect();
        if let Ok(k) = cohen_kappa(&a, &b, UnsureMode::IncludeUnsure) {
            prop_assert!(k <= 1.0 + 1e-12);
            prop_assert_eq!(k == 1.0, a == b);
        }
    }

    #[test]
    fn fleiss_kappa_at_most_one_and_one_iff_unanimous(
        rows in prop::collection::vec(prop::array::uniform3(0..4usize), 1..30)
    ) {
        let matrix: Vec<Vec<usize>> = rows.iter().map(|r| r.to_vec()).collect();
        if let Ok(k) = fleiss_kappa(&matrix) {
            prop_assert!(k <= 1.0 + 1e-12);
            let unanimous = matrix
                .iter()
                .filter(|r| r.iter().sum::<usize>() >= 2)
                .all(|r| r.iter().filter(|c| **c > 0).count() == 1);
            prop_assert_eq!((k - 1.0).abs() < 1e-12, unanimous);
        }
    }

    #[test]
    fn deletion_margins_equal_label_counts(
        data in prop::collection::vec((0u64..50, 0u64..50, any::<bool>()), 1..50)
    ) {
        let mut events = Vec::new();
        let mut labels = Vec::new();
        for (i, (before, after, y)) in data.iter().enumerate() {
            let mut e = common::event(i, 10);
            e.prev.statuses_count = *before;
            e.next.statuses_count = *after;
            events.push(e);
            labels.push(*y);
        }
        let cmp = deletion_comparison(&events, &labels).unwrap();
        let included: Vec<bool> = events
            .iter()
            .zip(&labels)
            .filter(|(e, _)| !cmp.excluded.contains(&e.event_ref))
            .map(|(_, y)| *y)
            .collect();
        let t = cmp.table;
        prop_assert_eq!((t.a + t.b) as usize, included.iter().filter(|y| **y).count());
        prop_assert_eq!((t.c + t.d) as usize, included.iter().filter(|y| !**y).count());
    }
}

#[derive(Debug, Clone)]
enum Op {
    Enqueue { start: usize, len: usize, stratum: u8, seed: u64 },
    Label { pick: usize, annotator: u8, label: u8 },
    Skip { pick: usize },
}

fn op_strategy() -> impl Strategy<Value = Op> {
    prop_oneof![
        (0..30usize, 1..10usize, 0..3u8, any::<u64>())
            .prop_map(|(start, len, stratum, seed)| Op::Enqueue { start, len, stratum, seed }),
        (any::<usize>(), 0..3u8, 0..3u8).prop_map(|(pick, annotator, label)| Op::Label { pick, annotator, label }),
        any::<usize>().prop_map(|pick| Op::Skip { pick }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn queue_conservation_gate_and_export(ops in prop::collection::vec(op_strategy(), 1..40), required in 1..3usize) {
        let events: Vec<ChangeEvent> = (0..40).map(|i| common::event(i, (i as u64 * 397) % 9_000)).collect();
        let dir = tempfile::tempdir().unwrap();
        let mut store = AnnotationStore::open(dir.path()).unwrap();
        store.set_required_annotators(required).unwrap();
        for a in ["a0", "a1", "a2"] {
            store.register_annotator(a).unwrap();
        }
        for op in ops {
            match op {
                Op::Enqueue { start, len, stratum, seed } => {
                    let slice = &events[start..(start + len).min(events.len())];
                    let (stratum, sampler) = match stratum {
                        0 => (Stratum::TopFollowers, Sampler::TopKFollowers { k: 3 }),
                        1 => (Stratum::RandomPopular, Sampler::Uniform { n: 2, seed }),
                        _ => (Stratum::Integrity, Sampler::Uniform { n: 4, seed }),
                    };
                    store.enqueue(slice, stratum, sampler).unwrap();
                }
                Op::Label { pick, annotator, label } => {
                    let ids: Vec<String> = store.state().candidates.keys().cloned().collect();
                    if ids.is_empty() {
                        continue;
                    }
                    let _ = store.submit_label(LabelRecord {
                        candidate_id: ids[pick % ids.len()].clone(),
                        annotator_id: format!("a{annotator}"),
                        label: Label::ALL[label as usize],
                        coded_case: None,
                        confident: None,
                        submitted_at: 0,
                    });
                }
                Op::Skip { pick } => {
                    let ids: Vec<String> = store.state().candidates.keys().cloned().collect();
                    if !ids.is_empty() {
                        let _ = store.skip(&ids[pick % ids.len()]);
                    }
                }
            }
            let q = store.queue_counts();
            prop_assert_eq!(q.enqueued, q.pending + q.labeled + q.skipped);
            prop_assert!(store.gate_violations().is_empty());
        }
        let filter = ExportFilter::default();
        let first = store.export_training_set(&filter);
        prop_assert_eq!(&first, &store.export_training_set(&filter));
        let reopened = AnnotationStore::open(dir.path()).unwrap();
        prop_assert_eq!(&first, &reopened.export_training_set(&filter));
    }
}

#[test]
fn forest_score_is_mean_of_tree_scores() {
    let mut examples = Vec::new();
    for i in 0..120 {
        let y = i % 3 == 0;
        let mut values = IndexMap::new();
        values.insert("a".to_string(), (i % 7) as f64 + if y { 3.0 } else { 0.0 });
        values.insert("b".to_string(), (i % 5) as f64);
        examples.push((
            FeatureVector {
                event_ref: format!("e{i}"),
                values,
                families: vec![],
            },
            y,
        ));
    }
    let config = ForestConfig {
        n_trees: 12,
        ..ForestConfig::default()
    };
    let model = train_forest(&examples, &config).unwrap();
    let single = |k: usize| ModelArtifact {
        trees: vec![model.trees[k].clone()],
        ..model.clone()
    };
    let without = |k: usize| ModelArtifact {
        trees: model.trees.iter().enumerate().filter(|(i, _)| *i != k).map(|(_, t)| t.clone()).collect(),
        ..model.clone()
    };
    for (fv, _) in &examples {
        let score = predict(&model, fv).unwrap();
        assert!((0.0..=1.0).contains(&score));
        let per_tree: Vec<f64> = (0..model.trees.len()).map(|k| predict(&single(k), fv).unwrap()).collect();
        let mean = per_tree.iter().sum::<f64>() / per_tree.len() as f64;
        assert!((score - mean).abs() < 1e-12);
        for k in 0..model.trees.len() {
            let rest = predict(&without(k), fv).unwrap();
            // leaf scores lie in [0, 1], so one tree moves the mean by at most 1/n
            assert!((score - rest).abs() <= 1.0 / model.trees.len() as f64 + 1e-12);
        }
    }
}

fn tweet_line(user: &str, handle: &str, id: u64, at: i64, retweet_of: Option<(&str, &str, i64)>) -> String {
    let user_obj = |u: &str, h: &str| {
        serde_json::json!({
            "id_str": u, "screen_name": h, "name": h, "description": "", "location": "",
            "url": null, "lang": "en", "followers_count": 1, "friends_count": 1,
            "statuses_count": 1, "favourites_count": 0,
            "created_at": format_archive_time(0),
        })
    };
    let mut v = serde_json::json!({
        "created_at": format_archive_time(at),
        "id_str": id.to_string(),
        "text": "hello",
        "source": "web",
        "lang": "en",
        "entities": { "hashtags": [] },
        "user": user_obj(user, handle),
    });
    if let Some((ou, oh, oat)) = retweet_of {
        v["retweeted_status"] = serde_json::json!({
            "created_at": format_archive_time(oat),
            "id_str": (id + 1_000_000).to_string(),
            "text": "original",
            "source": "web",
            "lang": "en",
            "entities": { "hashtags": [] },
            "user": user_obj(ou, oh),
        });
    }
    v.to_string()
}

#[test]
fn snapshots_emitted_counts_tweets_plus_retweeted_authors() {
    let dir = tempfile::tempdir().unwrap();
    let (k, r) = (60usize, 17usize);
    let mut lines = Vec::new();
    for i in 0..k {
        let rt = (i < r).then(|| ("9000", "orig", 1_000 + i as i64));
        lines.push(tweet_line(&format!("{}", 100 + i % 9), &format!("h{}", i % 9), i as u64, 50_000 + i as i64 * 10, rt));
    }
    // an exact duplicate line collides on every key
    lines.push(lines[0].clone());
    let path = dir.path().join("a.jsonl");
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();
    let store = SnapshotStore::open(dir.path().join("store")).unwrap();
    let stats = ingest_stream(&[path], &store, 1);
    assert_eq!(stats.records_malformed, 0);
    assert_eq!(stats.snapshots_parsed as usize, k + r + 2);
    assert_eq!(stats.snapshots_emitted as usize, k + r);
    // the embedded original counts as a tweet of its author
    assert_eq!(stats.tweets_emitted as usize, k + r);
    let author: Vec<ProfileSnapshot> = store.timeline("9000");
    assert_eq!(author.len(), r);
    assert!(author.iter().all(|s| s.captured_at > s.observed_at));
}
