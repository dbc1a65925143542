mod support;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::oracles::{best_overlap, planted_corpus};
use vhb_core::county::CountyId;
use vhb_core::text::{grid_search_lda, score_sentiment, Corpus, Document, Lexicon, Prior, SentimentRules};

fn fuzz_doc(rng: &mut ChaCha8Rng, words: &[&str]) -> Document {
    let n = rng.random_range(0..25);
    let text: Vec<&str> = (0..n).map(|_| words[rng.random_range(0..words.len())]).collect();
    Document {
        id: String::new(),
        county: CountyId::parse("06037").unwrap(),
        text: text.join(" "),
        likes: rng.random_range(0..100),
        retweets: rng.random_range(0..100),
        replies: 0,
    }
}

#[test]
fn compound_antisymmetric_and_bounded() {
    let lex = Lexicon::default();
    let neg = lex.negated();
    let rules = SentimentRules::default();
    let words = [
        "good",
        "bad",
        "not",
        "very",
        "slightly",
        "horrible",
        "love",
        "the",
        "vaccine",
        "never",
        "don't",
        "extremely",
        "hate",
        "safe",
        "#fear",
        "@who",
        "https://t.co/x",
        "Great!!",
        "barely",
        "trust",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..1000 {
        let d = fuzz_doc(&mut rng, &words);
        let a = score_sentiment(&d, &lex, &rules, &Default::default());
        let b = score_sentiment(&d, &neg, &rules, &Default::default());
        assert_eq!(a.compound, -b.compound, "{}", d.text);
        assert!(a.compound > -1.0 && a.compound < 1.0);
        assert_eq!(
            a.compound.signum() * f64::from(u8::from(a.compound != 0.0)),
            a.sum.signum() * f64::from(u8::from(a.sum != 0.0))
        );
        assert!(a.engagement_weight >= 1.0);
    }
}

#[test]
fn grid_search_recovers_planted_topics() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (docs, planted) = planted_corpus(&mut rng, 600, 200, 4);
    let corpus = Corpus::from_tokens(&docs);
    let g = grid_search_lda(
        &corpus,
        &[2, 4, 8],
        &[Prior::Value(0.1)],
        &[Prior::Value(0.01)],
        60,
        3,
        10,
    )
    .unwrap();
    assert_eq!(g.best.k, 4, "{:?}", g.table);
    let recovered: Vec<Vec<String>> = (0..4)
        .map(|t| g.best.top_words(t, 5).into_iter().map(|p| p.0).collect())
        .collect();
    assert!(best_overlap(&recovered, &planted).iter().all(|&o| o >= 3));
}
