use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    chi_squared_2x2, welch_t_test, ChiSquaredResult, ContingencyTable2x2, GroupStats, StatsError,
    WelchResult,
};
use crate::store::{ChangeEvent, TweetObservation};

/// Dormancy histogram bin width: 90 days.
pub const QUARTER_SECONDS: i64 = 90 * 86_400;

pub const DEFAULT_FOLLOWBACK_TAGS: [&str; 4] = ["ff", "follow", "ifollowback", "teamfollowback"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FollowerComparison {
    pub repurposed: GroupStats,
    pub other: GroupStats,
    pub mean_difference: f64,
    pub welch: WelchResult,
}

fn split_by_label<'a>(
    events: &'a [ChangeEvent],
    labels: &[bool],
) -> Result<(Vec<&'a ChangeEvent>, Vec<&'a ChangeEvent>), StatsError> {
    if events.len() != labels.len() {
        return Err(StatsError::InvalidInput(format!(
            "{} events but {} labels",
            events.len(),
            labels.len()
        )));
    }
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (e, &y) in events.iter().zip(labels) {
        if y {
            pos.push(e);
        } else {
            neg.push(e);
        }
    }
    Ok((pos, neg))
}

/// Followers before the change, repurposed versus not.
pub fn follower_comparison(
    events: &[ChangeEvent],
    labels: &[bool],
) -> Result<FollowerComparison, StatsError> {
    let (pos, neg) = split_by_label(events, labels)?;
    let followers = |v: &[&ChangeEvent]| -> Vec<f64> {
        v.iter().map(|e| e.prev.followers_count as f64).collect()
    };
    let (x, y) = (followers(&pos), followers(&neg));
    let welch = welch_t_test(&x, &y)?;
    let repurposed = GroupStats::from_sample(&x)?;
    let other = GroupStats::from_sample(&y)?;
    Ok(FollowerComparison {
        mean_difference: repurposed.mean - other.mean,
        repurposed,
        other,
        welch,
    })
}

/// `next.statuses_count / prev.statuses_count`; `None` when prev is 0.
pub fn deletion_ratio(event: &ChangeEvent) -> Option<f64> {
    match event.prev.statuses_count {
        0 => None,
        prev => Some(event.next.statuses_count as f64 / prev as f64),
    }
}

/// Whether the status count dropped across the change; `None` when prev is 0.
pub fn deleted_tweets(event: &ChangeEvent) -> Option<bool> {
    match event.prev.statuses_count {
        0 => None,
        prev => Some(event.next.statuses_count < prev),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeletionComparison {
    /// Rows: repurposed, other. Columns: deleted, not deleted.
    pub table: ContingencyTable2x2,
    pub chi_squared: Option<ChiSquaredResult>,
    pub repurposed_fraction: f64,
    pub other_fraction: f64,
    /// Events without a usable status count.
    pub excluded: Vec<String>,
}

pub fn deletion_comparison(
    events: &[ChangeEvent],
    labels: &[bool],
) -> Result<DeletionComparison, StatsError> {
    if events.len() != labels.len() {
        return Err(StatsError::InvalidInput(format!(
            "{} events but {} labels",
            events.len(),
            labels.len()
        )));
    }
    let mut rows = [[0u64; 2]; 2];
    let mut excluded = Vec::new();
    for (e, &y) in events.iter().zip(labels) {
        match deleted_tweets(e) {
            Some(deleted) => rows[usize::from(!y)][usize::from(!deleted)] += 1,
            None => {
                log::warn!("{}: no prior status count, excluded from deletion analysis", e.event_ref);
                excluded.push(e.event_ref.clone());
            }
        }
    }
    let table = ContingencyTable2x2::new(rows);
    let chi_squared = match chi_squared_2x2(&table) {
        Ok(r) => Some(r),
        Err(e) => {
            log::warn!("deletion chi-squared not computed: {e}");
            None
        }
    };
    let frac = |r: [u64; 2]| {
        let n = r[0] + r[1];
        if n == 0 {
            0.0
        } else {
            r[0] as f64 / n as f64
        }
    };
    Ok(DeletionComparison {
        table,
        chi_squared,
        repurposed_fraction: frac(rows[0]),
        other_fraction: frac(rows[1]),
        excluded,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdfPoint {
    /// 1-based bin index; bin k covers `[(k-1)*width, k*width)`.
    pub bin: usize,
    pub upper_bound: i64,
    pub cumulative_fraction: f64,
}

/// Empirical CDF of durations (seconds) over fixed-width bins, one point per
/// bin from the first to the last occupied one.
pub fn dormancy_cdf(durations: &[i64], bin_width: i64) -> Result<Vec<CdfPoint>, StatsError> {
    if bin_width <= 0 {
        return Err(StatsError::InvalidInput("bin width must be positive".into()));
    }
    if let Some(d) = durations.iter().find(|d| **d < 0) {
        return Err(StatsError::InvalidInput(format!("negative duration {d}")));
    }
    let Some(max) = durations.iter().max() else {
        return Ok(Vec::new());
    };
    let bins = (max / bin_width) as usize + 1;
    let mut counts = vec![0usize; bins];
    for d in durations {
        counts[(d / bin_width) as usize] += 1;
    }
    let n = durations.len();
    let mut cumulative = 0;
    Ok(counts
        .iter()
        .enumerate()
        .map(|(i, c)| {
            cumulative += c;
            CdfPoint {
                bin: i + 1,
                upper_bound: (i as i64 + 1) * bin_width,
                cumulative_fraction: cumulative as f64 / n as f64,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FollowbackCount {
    pub repurposed: usize,
    pub other: usize,
}

/// Distinct users per hashtag, split by the user's label. Tweets of
/// unlabeled users are ignored.
pub fn followback_counts<S: AsRef<str>>(
    tweets: &[TweetObservation],
    user_labels: &HashMap<String, bool>,
    hashtags: &[S],
) -> BTreeMap<String, FollowbackCount> {
    let mut users: BTreeMap<String, (BTreeSet<&str>, BTreeSet<&str>)> = hashtags
        .iter()
        .map(|h| (h.as_ref().to_lowercase(), Default::default()))
        .collect();
    for t in tweets {
        let Some(&label) = user_labels.get(&t.user_id) else {
            continue;
        };
        for tag in &t.hashtags {
            if let Some((pos, neg)) = users.get_mut(tag.as_str()) {
                if label {
                    pos.insert(&t.user_id);
                } else {
                    neg.insert(&t.user_id);
                }
            }
        }
    }
    users
        .into_iter()
        .map(|(tag, (pos, neg))| {
            (
                tag,
                FollowbackCount {
                    repurposed: pos.len(),
                    other: neg.len(),
                },
            )
        })
        .collect()
}

/// All characterization statistics for a labeled event set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharacterizationReport {
    pub events: usize,
    pub repurposed: usize,
    pub followers: Option<FollowerComparison>,
    pub followers_error: Option<String>,
    pub deletions: DeletionComparison,
    pub dormancy_cdf_repurposed: Vec<CdfPoint>,
    pub dormancy_cdf_other: Vec<CdfPoint>,
    pub followback: BTreeMap<String, FollowbackCount>,
}

impl CharacterizationReport {
    pub fn build(events: &[ChangeEvent], labels: &[bool]) -> Result<Self, StatsError> {
        let (followers, followers_error) = match follower_comparison(events, labels) {
            Ok(f) => (Some(f), None),
            Err(e) => (None, Some(e.to_string())),
        };
        let deletions = deletion_comparison(events, labels)?;
        let dormancy = |want: bool| -> Result<Vec<CdfPoint>, StatsError> {
            let d: Vec<i64> = events
                .iter()
                .zip(labels)
                .filter(|(_, &y)| y == want)
                .map(|(e, _)| e.dormancy)
                .collect();
            dormancy_cdf(&d, QUARTER_SECONDS)
        };

        // a user counts as repurposed if any of their events is
        let mut user_labels: HashMap<String, bool> = HashMap::new();
        let mut tweets: BTreeMap<(String, String), TweetObservation> = BTreeMap::new();
        for (e, &y) in events.iter().zip(labels) {
            *user_labels.entry(e.user_id.clone()).or_default() |= y;
            for t in e.tweets_before.iter().chain(&e.tweets_after) {
                tweets.insert((t.user_id.clone(), t.tweet_id.clone()), t.clone());
            }
        }
        let tweets: Vec<TweetObservation> = tweets.into_values().collect();

        Ok(Self {
            events: events.len(),
            repurposed: labels.iter().filter(|y| **y).count(),
            followers,
            followers_error,
            deletions,
            dormancy_cdf_repurposed: dormancy(true)?,
            dormancy_cdf_other: dormancy(false)?,
            followback: followback_counts(&tweets, &user_labels, &DEFAULT_FOLLOWBACK_TAGS),
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "events: {} ({} repurposed)", self.events, self.repurposed);
        match (&self.followers, &self.followers_error) {
            (Some(f), _) => {
                let _ = writeln!(
                    s,
                    "followers before change: mean {:.1} repurposed vs {:.1} other (difference {:.1}); Welch t = {:.4}, df = {:.2}, p = {:.3e}",
                    f.repurposed.mean, f.other.mean, f.mean_difference, f.welch.t, f.welch.df, f.welch.p_two_sided
                );
            }
            (None, Some(e)) => {
                let _ = writeln!(s, "followers: not computed ({e})");
            }
            _ => {}
        }
        let d = &self.deletions;
        let _ = writeln!(
            s,
            "status count dropped: {}/{} repurposed ({:.1}%) vs {}/{} other ({:.1}%)",
            d.table.a,
            d.table.a + d.table.b,
            100.0 * d.repurposed_fraction,
            d.table.c,
            d.table.c + d.table.d,
            100.0 * d.other_fraction
        );
        if let Some(chi) = &d.chi_squared {
            let _ = writeln!(s, "chi-squared = {:.4}, p = {:.3e}", chi.statistic, chi.p);
        }
        if !d.excluded.is_empty() {
            let _ = writeln!(s, "excluded from deletion analysis: {}", d.excluded.len());
        }
        for (tag, c) in &self.followback {
            let _ = writeln!(s, "#{tag}: {} repurposed users, {} other users", c.repurposed, c.other);
        }
        s
    }

    /// Writes `characterization.txt`, `characterization.json` and the
    /// plot-ready CSVs into `dir`.
    pub fn write(&self, dir: &Path, events: &[ChangeEvent], labels: &[bool]) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("characterization.txt"), self.to_text())?;
        fs::write(
            dir.join("characterization.json"),
            serde_json::to_string_pretty(self).map_err(std::io::Error::other)? + "\n",
        )?;

        let mut followers = String::from("event_ref,label,followers_prev\n");
        let mut deletions = String::from("event_ref,label,deletion_ratio\n");
        for (e, &y) in events.iter().zip(labels) {
            let label = if y { "repurposed" } else { "other" };
            let _ = writeln!(followers, "{},{label},{}", e.event_ref, e.prev.followers_count);
            if let Some(r) = deletion_ratio(e) {
                let _ = writeln!(deletions, "{},{label},{r}", e.event_ref);
            }
        }
        fs::write(dir.join("followers.csv"), followers)?;
        fs::write(dir.join("deletion_ratios.csv"), deletions)?;

        let mut cdf = String::from("group,bin,upper_bound_seconds,cumulative_fraction\n");
        for (group, points) in [
            ("repurposed", &self.dormancy_cdf_repurposed),
            ("other", &self.dormancy_cdf_other),
        ] {
            for p in points {
                let _ = writeln!(cdf, "{group},{},{},{}", p.bin, p.upper_bound, p.cumulative_fraction);
            }
        }
        fs::write(dir.join("dormancy_cdf.csv"), cdf)
    }
}
