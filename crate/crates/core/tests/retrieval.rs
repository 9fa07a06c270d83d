//! Index ranking against a score-every-document oracle.

mod common;

use prca_core::retrieval::InvertedIndex;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn topk_equals_full_scan(seed in any::<u64>(), k in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (corpus, query) = common::random_corpus(&mut rng, 40);
        let index = InvertedIndex::build(&corpus).unwrap();
        let got = index.retrieve_topk(&query, k).unwrap();
        let want = common::brute_bm25(&corpus, &query);
        prop_assert_eq!(got.ranked.len(), k.min(corpus.len()));
        for ((gid, gs), (wid, ws)) in got.ranked.iter().zip(&want) {
            prop_assert_eq!(gid, wid);
            prop_assert!((gs - ws).abs() < 1e-12, "{} vs {}", gs, ws);
        }
    }

    #[test]
    fn scores_are_non_negative(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (corpus, query) = common::random_corpus(&mut rng, 20);
        let index = InvertedIndex::build(&corpus).unwrap();
        let q = prca_core::retrieval::tokenize(&query);
        for doc in corpus.iter() {
            let base = index.bm25_score(&q, &doc.id).unwrap();
            prop_assert!(base >= 0.0);
        }
    }
}
