use serde::{Deserialize, Serialize};

use super::{AnnotationError, Label};

/// How `unsure` labels enter agreement statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnsureMode {
    /// `unsure` is a category of its own.
    IncludeUnsure,
    /// Items where any rater said `unsure` are dropped.
    ExcludeUnsure,
}

impl std::str::FromStr for UnsureMode {
    type Err = AnnotationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "include_unsure" => Ok(Self::IncludeUnsure),
            "exclude_unsure" => Ok(Self::ExcludeUnsure),
            other => Err(AnnotationError::Invalid(format!(
                "mode must be include_unsure or exclude_unsure, got {other:?}"
            ))),
        }
    }
}

/// Cohen's kappa for two raters over the same items.
pub fn cohen_kappa(a: &[Label], b: &[Label], mode: UnsureMode) -> Result<f64, AnnotationError> {
    if a.len() != b.len() {
        return Err(AnnotationError::Invalid(format!(
            "rater label lists differ in length ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let pairs: Vec<(Label, Label)> = a
        .iter()
        .zip(b)
        .filter(|(x, y)| {
            mode == UnsureMode::IncludeUnsure || (**x != Label::Unsure && **y != Label::Unsure)
        })
        .map(|(x, y)| (*x, *y))
        .collect();
    if pairs.is_empty() {
        return Err(AnnotationError::Invalid("no items to compare".into()));
    }
    let n = pairs.len() as f64;
    let p_o = pairs.iter().filter(|(x, y)| x == y).count() as f64 / n;
    let p_e: f64 = Label::ALL
        .iter()
        .map(|c| {
            let pa = pairs.iter().filter(|(x, _)| x == c).count() as f64 / n;
            let pb = pairs.iter().filter(|(_, y)| y == c).count() as f64 / n;
            pa * pb
        })
        .sum();
    if (1.0 - p_e).abs() < 1e-15 {
        return if p_o == 1.0 {
            Ok(1.0)
        } else {
            Err(AnnotationError::Invalid("chance agreement is 1".into()))
        };
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

/// Fleiss' kappa over an item-by-category count matrix. Items with fewer
/// than two ratings are skipped. Rater counts may vary per item; each item's
/// agreement uses its own count.
pub fn fleiss_kappa(matrix: &[Vec<usize>]) -> Result<f64, AnnotationError> {
    let items: Vec<&Vec<usize>> = matrix
        .iter()
        .filter(|row| {
            let n: usize = row.iter().sum();
            if n < 2 {
                log::warn!("item with {n} rating(s) excluded from Fleiss' kappa");
            }
            n >= 2
        })
        .collect();
    if items.is_empty() {
        return Err(AnnotationError::Invalid("no item has two or more ratings".into()));
    }
    let categories = items.iter().map(|r| r.len()).max().unwrap_or(0);
    let mut totals = vec![0usize; categories];
    let mut ratings = 0usize;
    let mut p_bar = 0.0;
    for row in &items {
        let n: usize = row.iter().sum();
        ratings += n;
        for (j, c) in row.iter().enumerate() {
            totals[j] += c;
        }
        let agree: usize = row.iter().map(|c| c * c).sum::<usize>() - n;
        p_bar += agree as f64 / (n * (n - 1)) as f64;
    }
    p_bar /= items.len() as f64;
    let p_e: f64 = totals
        .iter()
        .map(|t| (*t as f64 / ratings as f64).powi(2))
        .sum();
    if (1.0 - p_e).abs() < 1e-15 {
        return if (p_bar - 1.0).abs() < 1e-15 {
            Ok(1.0)
        } else {
            Err(AnnotationError::Invalid("chance agreement is 1".into()))
        };
    }
    Ok((p_bar - p_e) / (1.0 - p_e))
}
