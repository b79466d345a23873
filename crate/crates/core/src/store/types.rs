use serde::{Deserialize, Serialize};

/// One observation of an account's profile, taken from an archived tweet.
///
/// `observed_at` is the creation time of the tweet that carried the profile;
/// `captured_at` is when the archive saw it. The two differ for retweeted
/// authors, whose embedded profile reflects their state at retweet time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileSnapshot {
    pub user_id: String,
    pub observed_at: i64,
    pub captured_at: i64,
    pub screen_name: String,
    pub name: String,
    pub description: String,
    pub location: String,
    pub url: String,
    pub profile_language: String,
    pub followers_count: u64,
    pub friends_count: u64,
    pub statuses_count: u64,
    pub favourites_count: u64,
    pub account_created_at: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile_image_url: Option<String>,
}

impl ProfileSnapshot {
    pub fn validate(&self) -> Result<(), String> {
        if self.user_id.is_empty() {
            return Err("empty user_id".into());
        }
        if self.screen_name.is_empty() {
            return Err(format!("user {}: empty screen_name", self.user_id));
        }
        if self.observed_at < self.account_created_at {
            return Err(format!(
                "user {}: observed_at {} precedes account creation {}",
                self.user_id, self.observed_at, self.account_created_at
            ));
        }
        Ok(())
    }

    /// Case-folded screen name; handles are case-insensitive.
    pub fn handle_key(&self) -> String {
        self.screen_name.to_lowercase()
    }
}

/// One sampled tweet attributed to a user.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TweetObservation {
    pub user_id: String,
    pub tweet_id: String,
    pub posted_at: i64,
    pub text: String,
    pub hashtags: Vec<String>,
    pub source: String,
    pub language: String,
}

/// The (last snapshot with the old handle, first snapshot with the new
/// handle) pair for one screen-name change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeEvent {
    pub event_ref: String,
    pub user_id: String,
    pub prev: ProfileSnapshot,
    pub next: ProfileSnapshot,
    /// Seconds between the two captures.
    pub dormancy: i64,
    pub tweets_before: Vec<TweetObservation>,
    pub tweets_after: Vec<TweetObservation>,
}

impl ChangeEvent {
    pub fn dormancy_days(&self) -> f64 {
        self.dormancy as f64 / 86_400.0
    }

    /// Most frequent tweet client on one side; ties go to the
    /// lexicographically smallest label.
    pub fn top_source(tweets: &[TweetObservation]) -> String {
        most_common(tweets.iter().map(|t| t.source.as_str()))
    }

    pub fn top_language(tweets: &[TweetObservation]) -> String {
        most_common(tweets.iter().map(|t| t.language.as_str()))
    }
}

fn most_common<'a>(items: impl Iterator<Item = &'a str>) -> String {
    let mut counts = std::collections::BTreeMap::<&str, usize>::new();
    for item in items.filter(|s| !s.is_empty()) {
        *counts.entry(item).or_default() += 1;
    }
    let mut best: Option<(&str, usize)> = None;
    for (k, c) in counts {
        if best.is_none_or(|(_, bc)| c > bc) {
            best = Some((k, c));
        }
    }
    best.map(|(k, _)| k.to_string()).unwrap_or_default()
}
