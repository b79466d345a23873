//! Seeded synthetic archive with planted repurposing.
//!
//! Every account belongs to one of three kinds. Stable accounts never change
//! their handle. Benign accounts change it once with a small edit, or
//! rebrand while naming the old handle in the new description. Repurposed
//! accounts change it once with a new name and description, a mass deletion
//! of tweets, a long dormancy gap and a new tweeting topic.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use flate2::write::GzEncoder;
use flate2::Compression;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::features::nld;
use crate::ingest::format_archive_time;

const DAY: i64 = 86_400;
const EPOCH: i64 = 1_451_606_400; // 2016-01-01

const GIVEN: &[&str] = &[
    "Maria", "James", "Aisha", "Chen", "Lukas", "Sofia", "Omar", "Priya", "Diego", "Hannah",
    "Kenji", "Fatima", "Noah", "Elena", "Tariq", "Grace", "Mateo", "Ingrid", "Kwame", "Yara",
];
const FAMILY: &[&str] = &[
    "Okafor", "Lindqvist", "Moreau", "Tanaka", "Haddad", "Novak", "Ferreira", "Kowalski",
    "Nguyen", "Brennan", "Castillo", "Duarte", "Rahman", "Petrov", "Albers", "Quinlan",
];
const ORG_HEAD: &[&str] = &[
    "Daily", "Global", "Urban", "Prime", "Crypto", "Royal", "Bright", "Metro", "Golden", "Rapid",
];
const ORG_TAIL: &[&str] = &[
    "Deals", "News Network", "Giveaways", "Fan Club", "Traders", "Media", "Followers Hub",
    "Coupons", "Updates", "Collective",
];

const TOPICS: &[&[&str]] = &[
    &["match", "goal", "league", "coach", "season", "striker", "stadium", "transfer"],
    &["recipe", "oven", "garlic", "dinner", "bake", "flavor", "kitchen", "spice"],
    &["code", "compiler", "release", "bug", "server", "deploy", "kernel", "library"],
    &["album", "concert", "guitar", "lyrics", "tour", "studio", "vinyl", "chorus"],
    &["election", "policy", "senate", "vote", "campaign", "debate", "reform", "ballot"],
    &["giveaway", "discount", "bitcoin", "profit", "offer", "winner", "promo", "signal"],
    &["trail", "summit", "camp", "forest", "river", "hike", "backpack", "sunrise"],
    &["painting", "canvas", "gallery", "sketch", "palette", "museum", "portrait", "ink"],
];
const PROMO_TOPIC: usize = 5;

const SOURCES: &[&str] = &[
    "<a href=\"http://twitter.com/download/iphone\" rel=\"nofollow\">Twitter for iPhone</a>",
    "<a href=\"http://twitter.com/download/android\" rel=\"nofollow\">Twitter for Android</a>",
    "<a href=\"https://mobile.twitter.com\" rel=\"nofollow\">Twitter Web App</a>",
    "<a href=\"https://buffer.com\" rel=\"nofollow\">Buffer</a>",
];
const LANGS: &[&str] = &["en", "es", "fr", "de", "pt", "tr"];
const FOLLOWBACK: &[&str] = &["FF", "Follow", "IFollowBack", "TeamFollowBack"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccountKind {
    Stable,
    Benign,
    Repurposed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureConfig {
    pub accounts: usize,
    pub seed: u64,
    pub repurposed_fraction: f64,
    pub benign_fraction: f64,
    /// Share of repurposed accounts whose name and description barely change.
    pub subtle_fraction: f64,
    /// Output is split round-robin over this many files; odd-numbered
    /// files are gzip-compressed.
    pub files: usize,
    pub malformed_lines: usize,
    pub retweet_rate: f64,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        Self {
            accounts: 1_000,
            seed: 2022,
            repurposed_fraction: 0.25,
            benign_fraction: 0.35,
            subtle_fraction: 0.05,
            files: 4,
            malformed_lines: 20,
            retweet_rate: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedAccount {
    pub user_id: String,
    pub kind: AccountKind,
    pub subtle: bool,
    /// Reference of the planted change event, if any.
    pub event_ref: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureSummary {
    pub files: Vec<PathBuf>,
    pub labels_path: PathBuf,
    pub accounts: Vec<PlantedAccount>,
    pub lines: u64,
    pub malformed_lines: u64,
}

impl FixtureSummary {
    pub fn planted_positives(&self) -> Vec<String> {
        self.accounts
            .iter()
            .filter(|a| a.kind == AccountKind::Repurposed)
            .filter_map(|a| a.event_ref.clone())
            .collect()
    }
}

#[derive(Clone)]
struct Profile {
    screen_name: String,
    name: String,
    description: String,
    location: String,
    url: String,
    lang: String,
    image: String,
    followers: u64,
    friends: u64,
    statuses: u64,
    favourites: u64,
    topic: usize,
    tweet_lang: String,
    source: usize,
}

struct Line {
    at: i64,
    seq: u64,
    text: String,
}

fn person(rng: &mut ChaCha8Rng) -> String {
    format!("{} {}", GIVEN.choose(rng).unwrap(), FAMILY.choose(rng).unwrap())
}

fn org(rng: &mut ChaCha8Rng) -> String {
    format!("{} {}", ORG_HEAD.choose(rng).unwrap(), ORG_TAIL.choose(rng).unwrap())
}

fn handle_for(name: &str, rng: &mut ChaCha8Rng) -> String {
    let base: String = name
        .chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .take(11)
        .collect::<String>()
        .to_lowercase();
    format!("{base}{}", rng.random_range(10..9999))
}

fn sentence(topic: usize, rng: &mut ChaCha8Rng, words: usize) -> String {
    let vocab = TOPICS[topic];
    let mut out: Vec<&str> = (0..words).map(|_| *vocab.choose(rng).unwrap()).collect();
    out.dedup();
    let mut s = out.join(" ");
    if let Some(first) = s.get(..1) {
        s = first.to_uppercase() + &s[1..];
    }
    s
}

fn description(topic: usize, rng: &mut ChaCha8Rng) -> String {
    format!("{}. {}.", sentence(topic, rng, 4), sentence(topic, rng, 5))
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> u64 {
    (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp() as u64
}

fn new_profile(rng: &mut ChaCha8Rng) -> Profile {
    let topic = rng.random_range(0..TOPICS.len());
    let name = if rng.random_bool(0.7) { person(rng) } else { org(rng) };
    Profile {
        screen_name: handle_for(&name, rng),
        description: description(topic, rng),
        name,
        location: ["London", "Lagos", "Austin", "Madrid", "Pune", ""].choose(rng).unwrap().to_string(),
        url: String::new(),
        lang: "en".into(),
        image: format!("https://pbs.example/img/{}.jpg", rng.random::<u32>()),
        followers: log_uniform(rng, 20.0, 2_000_000.0),
        friends: rng.random_range(10..3_000),
        statuses: rng.random_range(200..40_000),
        favourites: rng.random_range(0..20_000),
        topic,
        tweet_lang: LANGS.choose(rng).unwrap().to_string(),
        source: rng.random_range(0..SOURCES.len()),
    }
}

fn tweet_value(user_id: &str, p: &Profile, created: i64, tweet_id: u64, text: &str, tags: &[&str], account_created: i64) -> Value {
    let hashtags: Vec<Value> = tags.iter().map(|t| json!({ "text": t })).collect();
    json!({
        "created_at": format_archive_time(created),
        "id_str": tweet_id.to_string(),
        "text": text,
        "source": SOURCES[p.source],
        "lang": p.tweet_lang,
        "entities": { "hashtags": hashtags },
        "user": {
            "id_str": user_id,
            "screen_name": p.screen_name,
            "name": p.name,
            "description": p.description,
            "location": p.location,
            "url": if p.url.is_empty() { Value::Null } else { Value::String(p.url.clone()) },
            "lang": p.lang,
            "followers_count": p.followers,
            "friends_count": p.friends,
            "statuses_count": p.statuses,
            "favourites_count": p.favourites,
            "created_at": format_archive_time(account_created),
            "profile_image_url_https": p.image,
        }
    })
}

/// Draws a replacement identity far from `old` under normalized edit distance.
fn distant_identity(old: &Profile, rng: &mut ChaCha8Rng) -> (String, String, usize) {
    loop {
        let topic = (old.topic + rng.random_range(1..TOPICS.len())) % TOPICS.len();
        let name = if rng.random_bool(0.6) { org(rng) } else { person(rng) };
        let desc = description(topic, rng);
        if nld(&name, &old.name) > 0.8 && nld(&desc, &old.description) > 0.8 {
            return (name, desc, topic);
        }
    }
}

struct Account {
    user_id: String,
    created: i64,
    kind: AccountKind,
    subtle: bool,
    changes: bool,
    phases: Vec<(i64, Profile, usize)>,
}

fn plan_account(i: usize, config: &FixtureConfig, rng: &mut ChaCha8Rng) -> Account {
    let user_id = format!("{}", 100_000_000 + i as u64 * 7 + 3);
    let roll: f64 = rng.random();
    let kind = if roll < config.repurposed_fraction {
        AccountKind::Repurposed
    } else if roll < config.repurposed_fraction + config.benign_fraction {
        AccountKind::Benign
    } else {
        AccountKind::Stable
    };
    let created = EPOCH - rng.random_range(100..2_000) * DAY;
    let start = EPOCH + rng.random_range(0..200) * DAY;
    let mut before = new_profile(rng);
    if kind == AccountKind::Repurposed {
        // repurposed accounts skew towards larger audiences
        before.followers = log_uniform(rng, 2_000.0, 3_000_000.0);
    }
    let n_before = rng.random_range(3..7);
    let mut subtle = false;
    let phases = match kind {
        AccountKind::Stable => vec![(start, before, n_before + 3)],
        AccountKind::Benign => {
            let mut after = before.clone();
            after.screen_name = format!("{}_{}", before.screen_name, ["hq", "real", "tv", "x"].choose(rng).unwrap());
            if rng.random_bool(0.3) {
                // rebrand that names its old handle
                after.name = org(rng);
                after.description = format!("Formerly @{}. {}", before.screen_name, description(before.topic, rng));
            } else {
                after.name = format!("{} {}", before.name, ["PhD", "MD", "Official", "Jr"].choose(rng).unwrap());
                after.description = format!("{} New account avatar.", before.description);
            }
            after.followers = before.followers + rng.random_range(0..before.followers / 5 + 10);
            after.statuses = before.statuses + rng.random_range(5..400);
            if rng.random_bool(0.05) {
                after.statuses = (before.statuses as f64 * rng.random_range(0.85..1.0)) as u64;
            }
            let gap = if rng.random_bool(0.05) {
                rng.random_range(90..200)
            } else {
                rng.random_range(1..60)
            };
            let change_at = start + (n_before as i64 + 1) * 3 * DAY + gap * DAY;
            vec![(start, before, n_before), (change_at, after, rng.random_range(3..7))]
        }
        AccountKind::Repurposed => {
            let mut after = before.clone();
            subtle = rng.random_bool(config.subtle_fraction);
            if subtle {
                after.name = format!("{}.", before.name);
                after.description = format!("{} Now with more updates.", before.description);
                after.topic = (before.topic + 1) % TOPICS.len();
            } else {
                let (name, desc, topic) = distant_identity(&before, rng);
                after.name = name;
                after.description = desc;
                after.topic = topic;
            }
            after.screen_name = handle_for(&after.name, rng);
            if rng.random_bool(0.4) {
                after.topic = PROMO_TOPIC;
            }
            if rng.random_bool(0.3) {
                after.lang = LANGS[rng.random_range(1..LANGS.len())].to_string();
            }
            after.tweet_lang = LANGS.choose(rng).unwrap().to_string();
            after.location = String::new();
            after.url = format!("https://promo.example/{}", rng.random::<u16>());
            after.image = format!("https://pbs.example/img/{}.jpg", rng.random::<u32>());
            after.source = rng.random_range(0..SOURCES.len());
            after.statuses = (before.statuses as f64 * rng.random_range(0.0..0.3)) as u64;
            after.followers = (before.followers as f64 * rng.random_range(0.6..1.2)) as u64;
            let gap = rng.random_range(90..800);
            let change_at = start + (n_before as i64 + 1) * 3 * DAY + gap * DAY;
            vec![(start, before, n_before), (change_at, after, rng.random_range(3..7))]
        }
    };
    Account {
        user_id,
        created,
        kind,
        subtle,
        changes: kind != AccountKind::Stable,
        phases,
    }
}

/// Writes the fixture archive and `labels.csv` into `dir`.
pub fn generate(dir: &Path, config: &FixtureConfig) -> io::Result<FixtureSummary> {
    fs::create_dir_all(dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let accounts: Vec<Account> = (0..config.accounts)
        .map(|i| plan_account(i, config, &mut rng))
        .collect();

    let mut lines: Vec<Line> = Vec::new();
    let mut tweet_id = 900_000_000_000u64;
    let mut seq = 0u64;
    let stable: Vec<usize> = accounts
        .iter()
        .enumerate()
        .filter(|(_, a)| a.kind == AccountKind::Stable)
        .map(|(i, _)| i)
        .collect();
    for a in &accounts {
        for (start, profile, n) in &a.phases {
            let mut p = profile.clone();
            for k in 0..*n {
                let at = start + k as i64 * 3 * DAY + rng.random_range(0..DAY / 2);
                tweet_id += 1;
                seq += 1;
                let mut tags = Vec::new();
                let promo = a.kind == AccountKind::Repurposed && a.phases[0].1.topic != p.topic;
                if rng.random_bool(if promo { 0.4 } else { 0.04 }) {
                    tags.push(*FOLLOWBACK.choose(&mut rng).unwrap());
                }
                let text = format!(
                    "{}. {}! {}",
                    sentence(p.topic, &mut rng, 5),
                    sentence(p.topic, &mut rng, 4),
                    tags.iter().map(|t| format!("#{t}")).collect::<Vec<_>>().join(" ")
                );
                let tweet = tweet_value(&a.user_id, &p, at, tweet_id, text.trim(), &tags, a.created);
                if !stable.is_empty() && rng.random_bool(config.retweet_rate) {
                    let r = &accounts[*stable.choose(&mut rng).unwrap()];
                    let rp = &r.phases[0].1;
                    let rt_at = at + 60;
                    tweet_id += 1;
                    let mut outer = tweet_value(&r.user_id, rp, rt_at, tweet_id, &format!("RT @{}: {}", p.screen_name, text.trim()), &[], r.created);
                    outer["retweeted_status"] = tweet.clone();
                    seq += 1;
                    lines.push(Line { at: rt_at, seq, text: outer.to_string() });
                }
                lines.push(Line { at, seq, text: tweet.to_string() });
                p.statuses += 1;
                p.followers += rng.random_range(0..5);
            }
        }
    }
    lines.sort_by_key(|l| (l.at, l.seq));

    let files = config.files.max(1);
    let mut paths = Vec::new();
    let mut writers: Vec<Box<dyn Write>> = Vec::new();
    for f in 0..files {
        let gz = f % 2 == 1;
        let path = dir.join(format!("archive-{f:02}.jsonl{}", if gz { ".gz" } else { "" }));
        let file = BufWriter::new(File::create(&path)?);
        writers.push(if gz {
            Box::new(GzEncoder::new(file, Compression::fast()))
        } else {
            Box::new(file)
        });
        paths.push(path);
    }
    let mut count = 0u64;
    for (i, l) in lines.iter().enumerate() {
        writeln!(writers[i % files], "{}", l.text)?;
        count += 1;
    }
    let broken = [
        "{\"created_at\": \"Mon Jan 04 10:00:00 +0000 2016\", \"user\": {\"screen_name\": \"x\"}}",
        "not json at all",
        "{\"id_str\": \"1\", \"created_at\": \"yesterday\", \"user\": {\"id_str\": \"5\", \"screen_name\": \"y\"}}",
        "{\"truncated\": ",
    ];
    for m in 0..config.malformed_lines {
        writeln!(writers[m % files], "{}", broken[m % broken.len()])?;
        count += 1;
    }
    drop(writers);

    let labels_path = dir.join("labels.csv");
    let mut labels = String::from("event_ref,label\n");
    let mut planted = Vec::new();
    for a in &accounts {
        let event_ref = a.changes.then(|| format!("{}:0", a.user_id));
        if let Some(r) = &event_ref {
            let label = if a.kind == AccountKind::Repurposed { "positive" } else { "negative" };
            labels.push_str(&format!("{r},{label}\n"));
        }
        planted.push(PlantedAccount {
            user_id: a.user_id.clone(),
            kind: a.kind,
            subtle: a.subtle,
            event_ref,
        });
    }
    fs::write(&labels_path, labels)?;
    Ok(FixtureSummary {
        files: paths,
        labels_path,
        accounts: planted,
        lines: count,
        malformed_lines: config.malformed_lines as u64,
    })
}

/// Writes a plain line-delimited archive of roughly `target_bytes` for
/// throughput measurement. Lines come from a small pool of distinct
/// records so generation stays cheap.
pub fn bulk_archive(path: &Path, target_bytes: u64, seed: u64) -> io::Result<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool: Vec<String> = (0..512)
        .map(|i| {
            let p = new_profile(&mut rng);
            let text = format!("{}. {}", sentence(p.topic, &mut rng, 6), sentence(p.topic, &mut rng, 6));
            let mut v = tweet_value(&format!("{}", 5_000_000 + i), &p, EPOCH + i as i64 * 60, 7_000_000 + i as u64, &text, &["FF"], EPOCH - 400 * DAY);
            if i % 8 == 0 {
                v["retweeted_status"] = tweet_value("42", &p, EPOCH, 1, &text, &[], EPOCH - 900 * DAY);
            }
            v.to_string()
        })
        .collect();
    let mut w = BufWriter::with_capacity(1 << 20, File::create(path)?);
    let mut written = 0u64;
    let mut i = 0usize;
    while written < target_bytes {
        let line = &pool[i % pool.len()];
        w.write_all(line.as_bytes())?;
        w.write_all(b"\n")?;
        written += line.len() as u64 + 1;
        i += 1;
    }
    w.flush()?;
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let config = FixtureConfig {
            accounts: 40,
            ..FixtureConfig::default()
        };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let sa = generate(a.path(), &config).unwrap();
        let sb = generate(b.path(), &config).unwrap();
        assert_eq!(sa.accounts, sb.accounts);
        for (x, y) in sa.files.iter().zip(&sb.files) {
            assert_eq!(
                crate::ingest::read_archive_to_string(x).unwrap(),
                crate::ingest::read_archive_to_string(y).unwrap()
            );
        }
        assert_eq!(
            fs::read_to_string(&sa.labels_path).unwrap(),
            fs::read_to_string(&sb.labels_path).unwrap()
        );
    }

    #[test]
    fn distant_identity_is_far() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let p = new_profile(&mut rng);
            let (name, desc, topic) = distant_identity(&p, &mut rng);
            assert!(nld(&name, &p.name) > 0.8 && nld(&desc, &p.description) > 0.8);
            assert_ne!(topic, p.topic);
        }
    }
}
