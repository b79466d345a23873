#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use repurpose::fixture::{self, FixtureConfig, FixtureSummary};
use repurpose::{ChangeEvent, ProfileSnapshot};

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_repurpose"))
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn repurpose")
}

pub fn snapshot(user: &str, handle: &str, followers: u64, t: i64) -> ProfileSnapshot {
    ProfileSnapshot {
        user_id: user.into(),
        observed_at: t,
        captured_at: t,
        screen_name: handle.into(),
        name: handle.to_uppercase(),
        description: format!("about {handle}"),
        location: String::new(),
        url: String::new(),
        profile_language: "en".into(),
        followers_count: followers,
        friends_count: 10,
        statuses_count: 100,
        favourites_count: 5,
        account_created_at: 0,
        profile_image_url: None,
    }
}

/// Event `u{i}:0` renaming `old{i}` to `new{i}`.
pub fn event(i: usize, followers: u64) -> ChangeEvent {
    let user = format!("u{i}");
    ChangeEvent {
        event_ref: format!("{user}:0"),
        user_id: user.clone(),
        prev: snapshot(&user, &format!("old{i}"), followers, 100),
        next: snapshot(&user, &format!("new{i}"), followers, 200),
        dormancy: 100,
        tweets_before: vec![],
        tweets_after: vec![],
    }
}

pub fn small_fixture(dir: &Path, accounts: usize) -> FixtureSummary {
    let config = FixtureConfig {
        accounts,
        ..FixtureConfig::default()
    };
    fixture::generate(dir, &config).expect("fixture")
}

pub fn glob_of(dir: &Path) -> String {
    format!("{}/archive-*", dir.display())
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

pub fn read_json(path: &PathBuf) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).expect("read json")).expect("parse json")
}
