//! Hypothesis tests and the characterization of labeled change events.

mod characterize;
pub mod special;

pub use characterize::{
    deleted_tweets, deletion_comparison, deletion_ratio, dormancy_cdf, follower_comparison,
    followback_counts, CdfPoint, CharacterizationReport, DeletionComparison, FollowbackCount,
    FollowerComparison, DEFAULT_FOLLOWBACK_TAGS, QUARTER_SECONDS,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("sample needs at least {needed} values, got {got}")]
    SampleTooSmall { needed: usize, got: usize },
    #[error("both samples have zero variance")]
    ZeroVariance,
    #[error("contingency table has a zero expected count")]
    ZeroExpected,
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Summary of one sample; `variance` is the unbiased estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
    pub min: f64,
    pub max: f64,
}

impl GroupStats {
    pub fn from_sample(xs: &[f64]) -> Result<Self, StatsError> {
        if xs.is_empty() {
            return Err(StatsError::SampleTooSmall { needed: 1, got: 0 });
        }
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let variance = if n > 1 {
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Ok(Self {
            n,
            mean,
            variance,
            min: xs.iter().copied().fold(f64::INFINITY, f64::min),
            max: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub t: f64,
    pub df: f64,
    pub p_two_sided: f64,
}

/// Welch's unequal-variance t-test with Welch–Satterthwaite degrees of freedom.
pub fn welch_t_test(x: &[f64], y: &[f64]) -> Result<WelchResult, StatsError> {
    for s in [x, y] {
        if s.len() < 2 {
            return Err(StatsError::SampleTooSmall {
                needed: 2,
                got: s.len(),
            });
        }
    }
    let gx = GroupStats::from_sample(x)?;
    let gy = GroupStats::from_sample(y)?;
    let vx = gx.variance / gx.n as f64;
    let vy = gy.variance / gy.n as f64;
    let se2 = vx + vy;
    if se2 <= 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    let t = (gx.mean - gy.mean) / se2.sqrt();
    let df = se2 * se2 / (vx * vx / (gx.n - 1) as f64 + vy * vy / (gy.n - 1) as f64);
    Ok(WelchResult {
        t,
        df,
        p_two_sided: special::student_t_two_sided(t, df),
    })
}

/// 2x2 table: rows are groups, columns are outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyTable2x2 {
    pub a: u64,
    pub b: u64,
    pub c: u64,
    pub d: u64,
}

impl ContingencyTable2x2 {
    pub fn new(rows: [[u64; 2]; 2]) -> Self {
        Self {
            a: rows[0][0],
            b: rows[0][1],
            c: rows[1][0],
            d: rows[1][1],
        }
    }

    pub fn total(&self) -> u64 {
        self.a + self.b + self.c + self.d
    }

    pub fn rows(&self) -> [[u64; 2]; 2] {
        [[self.a, self.b], [self.c, self.d]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquaredResult {
    pub statistic: f64,
    pub p: f64,
}

/// Pearson's chi-squared test of independence, no continuity correction.
pub fn chi_squared_2x2(table: &ContingencyTable2x2) -> Result<ChiSquaredResult, StatsError> {
    let n = table.total() as f64;
    if n == 0.0 {
        return Err(StatsError::ZeroExpected);
    }
    let rows = table.rows();
    let row_sums = [rows[0][0] + rows[0][1], rows[1][0] + rows[1][1]];
    let col_sums = [rows[0][0] + rows[1][0], rows[0][1] + rows[1][1]];
    let mut statistic = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            let expected = row_sums[i] as f64 * col_sums[j] as f64 / n;
            if expected <= 0.0 {
                return Err(StatsError::ZeroExpected);
            }
            statistic += (rows[i][j] as f64 - expected).powi(2) / expected;
        }
    }
    Ok(ChiSquaredResult {
        statistic,
        p: special::chi_squared_sf(statistic, 1.0),
    })
}
