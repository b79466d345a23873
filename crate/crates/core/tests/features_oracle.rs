mod common;

use repurpose::features::embedding::{cosine, EmbeddingProvider, HashedNgramEmbedding};
use repurpose::features::style::{document_vector, split_sentences};
use repurpose::features::{self, Family, FeatureConfig};
use repurpose::TweetObservation;

#[test]
fn cosine_of_reference_phrases_is_frozen() {
    let e = HashedNgramEmbedding::default();
    let a = e.embed("cat videos daily").unwrap();
    let b = e.embed("dog videos daily").unwrap();
    assert!((cosine(&a, &b) - 0.75).abs() < 1e-12);
}

#[test]
fn document_vector_is_sum_of_sentence_embeddings() {
    let e = HashedNgramEmbedding::default();
    let text = "Goal in the match. Coach is happy!";
    let sentences = split_sentences(text);
    assert_eq!(sentences, ["Goal in the match.", "Coach is happy!"]);
    let tweet = TweetObservation {
        user_id: "u".into(),
        tweet_id: "1".into(),
        posted_at: 0,
        text: text.into(),
        hashtags: vec![],
        source: String::new(),
        language: "en".into(),
    };
    let doc = document_vector(&[tweet], &e).unwrap();
    let a = e.embed("Goal in the match.").unwrap();
    let b = e.embed("Coach is happy!").unwrap();
    for i in 0..doc.len() {
        assert_eq!(doc[i], a[i] + b[i]);
    }
    assert_eq!(doc.iter().sum::<f64>(), 33.0);
    let nonzero: Vec<(usize, f64)> = doc.iter().copied().enumerate().filter(|(_, v)| *v != 0.0).take(6).collect();
    assert_eq!(nonzero, [(0, 1.0), (19, 1.0), (21, 1.0), (58, 1.0), (63, 1.0), (69, 1.0)]);
}

#[test]
fn feature_families_have_documented_widths() {
    let event = common::event(1, 500);
    let emb = HashedNgramEmbedding::default();
    let widths: Vec<usize> = [Family::Edt, Family::Dsim, Family::Md, Family::Sty]
        .iter()
        .map(|f| features::assemble(&event, &FeatureConfig::new(&[*f]), &emb).unwrap().values.len())
        .collect();
    let all = features::assemble(
        &event,
        &FeatureConfig::new(&[Family::Edt, Family::Dsim, Family::Md, Family::Sty]),
        &emb,
    )
    .unwrap();
    assert_eq!(all.values.len(), widths.iter().sum::<usize>());
    assert_eq!(all.values.len(), 35);
    assert_eq!(widths[0], 3);
}

#[test]
fn renamed_handle_drives_edit_distance_features() {
    let event = common::event(3, 10);
    let emb = HashedNgramEmbedding::default();
    let fv = features::assemble(&event, &FeatureConfig::new(&[Family::Edt]), &emb).unwrap();
    // OLD3 -> NEW3 and "about old3" -> "about new3"
    assert_eq!(fv.get("nld_name"), Some(3.0 / 4.0));
    assert_eq!(fv.get("nld_description"), Some(3.0 / 10.0));
}
