use serde::Serialize;

use super::types::{ChangeEvent, ProfileSnapshot, TweetObservation};

/// Result of scanning a store for screen-name changes.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ChangeScan {
    /// Users with at least one change, sorted.
    pub users: Vec<String>,
    pub events: usize,
    pub total_users: usize,
}

impl ChangeScan {
    pub fn changed_users(&self) -> impl Iterator<Item = &str> {
        self.users.iter().map(String::as_str)
    }
}

/// Index ranges of maximal runs of equal (case-folded) screen names.
fn runs(timeline: &[ProfileSnapshot]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=timeline.len() {
        if i == timeline.len() || timeline[i].handle_key() != timeline[start].handle_key() {
            if i > start {
                out.push((start, i - 1));
            }
            start = i;
        }
    }
    out
}

pub(crate) fn count_changes(timeline: &[ProfileSnapshot]) -> usize {
    runs(timeline).len().saturating_sub(1)
}

/// Builds one event per boundary between consecutive screen-name runs of a
/// sorted timeline: the last snapshot of the earlier run paired with the
/// first snapshot of the later run.
///
/// `tweets` holds all stored tweets of the user; each side gets every tweet
/// posted at or before `prev.captured_at` (resp. at or after
/// `next.captured_at`).
pub fn change_events_from_timeline(
    user_id: &str,
    timeline: &[ProfileSnapshot],
    tweets: &[TweetObservation],
) -> Vec<ChangeEvent> {
    let runs = runs(timeline);
    runs.windows(2)
        .enumerate()
        .map(|(k, pair)| {
            let prev = timeline[pair[0].1].clone();
            let next = timeline[pair[1].0].clone();
            let tweets_before = tweets
                .iter()
                .filter(|t| t.posted_at <= prev.captured_at)
                .cloned()
                .collect();
            let tweets_after = tweets
                .iter()
                .filter(|t| t.posted_at >= next.captured_at)
                .cloned()
                .collect();
            ChangeEvent {
                event_ref: format!("{user_id}:{k}"),
                user_id: user_id.to_string(),
                dormancy: (next.captured_at - prev.captured_at).max(0),
                prev,
                next,
                tweets_before,
                tweets_after,
            }
        })
        .collect()
}
