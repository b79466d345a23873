use crate::store::{ChangeEvent, TweetObservation};

use super::embedding::{cosine, euclidean, EmbeddingProvider};
use super::FeatureError;

/// Splits text into sentences at newlines and after `.`, `!` or `?` when
/// followed by whitespace. Pieces are trimmed; empty pieces are dropped.
pub fn split_sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    for line in text.split('\n') {
        let mut start = 0;
        let mut iter = line.char_indices().peekable();
        while let Some((i, c)) = iter.next() {
            if matches!(c, '.' | '!' | '?') {
                if let Some((_, next)) = iter.peek() {
                    if next.is_whitespace() {
                        let end = i + c.len_utf8();
                        out.push(&line[start..end]);
                        start = end;
                    }
                }
            }
        }
        out.push(&line[start..]);
    }
    out.into_iter()
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect()
}

/// Sum of the sentence embeddings of a side's tweets joined with newlines.
pub fn document_vector(
    tweets: &[TweetObservation],
    provider: &dyn EmbeddingProvider,
) -> Result<Vec<f64>, FeatureError> {
    let joined = tweets
        .iter()
        .map(|t| t.text.as_str())
        .collect::<Vec<_>>()
        .join("\n");
    let mut sum = vec![0.0; provider.dimension()];
    for sentence in split_sentences(&joined) {
        let v = provider.embed(sentence)?;
        if v.len() != sum.len() {
            return Err(FeatureError::Provider(format!(
                "provider returned dimension {}, declared {}",
                v.len(),
                sum.len()
            )));
        }
        for (s, x) in sum.iter_mut().zip(v) {
            *s += x;
        }
    }
    Ok(sum)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StyleVectors {
    pub before: Vec<f64>,
    pub after: Vec<f64>,
    pub cosine: f64,
    pub euclidean: f64,
}

impl StyleVectors {
    /// Element-wise average of the two sides.
    pub fn fused(&self) -> Vec<f64> {
        self.before
            .iter()
            .zip(&self.after)
            .map(|(a, b)| (a + b) / 2.0)
            .collect()
    }
}

pub fn style_vectors(
    event: &ChangeEvent,
    provider: &dyn EmbeddingProvider,
) -> Result<StyleVectors, FeatureError> {
    if event.tweets_before.is_empty() || event.tweets_after.is_empty() {
        return Err(FeatureError::StyleUnavailable(event.event_ref.clone()));
    }
    let before = document_vector(&event.tweets_before, provider)?;
    let after = document_vector(&event.tweets_after, provider)?;
    Ok(StyleVectors {
        cosine: cosine(&before, &after),
        euclidean: euclidean(&before, &after),
        before,
        after,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sentence_rules() {
        assert_eq!(
            split_sentences("Hi there. How are you?\nfine!ok  \n\n3.14 is pi"),
            vec!["Hi there.", "How are you?", "fine!ok", "3.14 is pi"]
        );
        assert!(split_sentences("  \n ").is_empty());
        assert_eq!(split_sentences("end."), vec!["end."]);
    }
}
