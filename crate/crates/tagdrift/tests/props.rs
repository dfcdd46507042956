//! Property tests for the structural invariants: split partitioning, tag
//! encoding, deletion draws, rerank prefix stability, store persistence.

use std::collections::HashSet;

use proptest::prelude::*;

use tagdrift::corpus::{assign_splits, bucketize, filter_top_tags, Sample};
use tagdrift::datastore::{
    decode_tag, encode_tag, Datastore, DEFAULT_BATCH_SIZE, DEFAULT_VALUE_WIDTH,
};
use tagdrift::embed::{EmbeddingSpec, TextEmbedder};
use tagdrift::eval::deletion_draw;
use tagdrift::index::FlatIndex;
use tagdrift::predict::{rerank_actual_resolved, rerank_default, rerank_frequency};

fn sample_strategy(weeks: u32) -> impl Strategy<Value = Vec<Sample>> {
    let tag_pool = ["alpha", "bravo", "charlie", "delta", "echo", "foxtrot"];
    proptest::collection::vec(
        (
            1..=weeks,
            proptest::collection::btree_set(0..tag_pool.len(), 1..=3),
            "[a-z ]{5,30}",
        ),
        1..80,
    )
    .prop_map(move |rows| {
        rows.into_iter()
            .enumerate()
            .map(|(i, (week, tags, text))| {
                let tags: Vec<String> = tags.into_iter().map(|t| tag_pool[t].to_string()).collect();
                Sample::new(format!("s{i}"), format!("{text} {i}"), week, tags).unwrap()
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Every sample lands in exactly one bucket (as train or test week) and
    /// exactly one split.
    #[test]
    fn buckets_and_splits_partition_the_corpus(
        mut samples in sample_strategy(8),
        seed in 0u64..1000,
    ) {
        // Pin the max week so the horizon divides into whole buckets.
        samples.push(
            Sample::new("anchor".into(), "anchor text".into(), 8, vec!["alpha".into()]).unwrap(),
        );
        let buckets = bucketize(&samples, 2).unwrap();
        for s in &samples {
            let holders = buckets
                .iter()
                .filter(|b| b.train_weeks.contains(&s.week) || b.test_week == s.week)
                .count();
            prop_assert_eq!(holders, 1);
        }
        let splits = assign_splits(&samples, seed);
        prop_assert_eq!(splits.len(), samples.len());
        for s in &samples {
            prop_assert!(splits.get(&s.id).is_some());
        }
        // Same seed, same assignment.
        let again = assign_splits(&samples, seed);
        for s in &samples {
            prop_assert_eq!(splits.get(&s.id), again.get(&s.id));
        }
    }

    /// Capping tags is idempotent: a second pass with the same cap is a
    /// no-op.
    #[test]
    fn filter_top_tags_is_idempotent(samples in sample_strategy(4), cap in 1usize..6) {
        let once = filter_top_tags(samples, cap).unwrap();
        let twice = filter_top_tags(once.clone(), cap).unwrap();
        prop_assert_eq!(once, twice);
    }

    /// Tags round-trip through the fixed-width u16 encoding; NUL bytes and
    /// overlong tags are rejected.
    #[test]
    fn tag_encoding_round_trips(tag in "\\PC{1,60}") {
        let encoded = encode_tag(&tag, DEFAULT_VALUE_WIDTH).unwrap();
        prop_assert_eq!(encoded.len(), DEFAULT_VALUE_WIDTH);
        prop_assert_eq!(decode_tag(&encoded).unwrap(), tag);
    }

    #[test]
    fn tag_encoding_rejects_nul_and_overflow(prefix in "[a-z]{0,5}", suffix in "[a-z]{0,5}") {
        let with_nul = format!("{prefix}\0{suffix}");
        prop_assert!(encode_tag(&with_nul, DEFAULT_VALUE_WIDTH).is_err());
        let overlong = "x".repeat(DEFAULT_VALUE_WIDTH + 1);
        prop_assert!(encode_tag(&overlong, DEFAULT_VALUE_WIDTH).is_err());
    }

    /// Deletion draws are sized by rounding and nest as the fraction grows.
    #[test]
    fn deletion_draws_nest(
        n in 1usize..200,
        seed in 0u64..1000,
        f1 in 0.0f64..=1.0,
        f2 in 0.0f64..=1.0,
    ) {
        let (lo, hi) = if f1 <= f2 { (f1, f2) } else { (f2, f1) };
        let mut ids: Vec<String> = (0..n).map(|i| format!("id{i}")).collect();
        let small: HashSet<String> = deletion_draw(&mut ids, seed, lo).into_iter().collect();
        let large: HashSet<String> = deletion_draw(&mut ids, seed, hi).into_iter().collect();
        prop_assert_eq!(small.len(), (lo * n as f64).round() as usize);
        prop_assert_eq!(large.len(), (hi * n as f64).round() as usize);
        prop_assert!(small.is_subset(&large));
    }
}

proptest! {
    // Store-building cases are heavier; keep the count low.
    #![proptest_config(ProptestConfig::with_cases(16))]

    /// The ranked list at depth R is a prefix of the list at R+1, for all
    /// three rerank methods, and save/load preserves the store exactly.
    #[test]
    fn rerank_prefix_and_store_round_trip(
        samples in sample_strategy(4),
        query_text in "[a-z ]{8,40}",
    ) {
        let embedder = TextEmbedder::hashed(EmbeddingSpec {
            dimension: 16,
            ..EmbeddingSpec::default()
        })
        .unwrap();
        let store = Datastore::build(
            samples.iter(),
            |s| embedder.embed(&s.id, &s.text),
            16,
            DEFAULT_VALUE_WIDTH,
            DEFAULT_BATCH_SIZE,
        )
        .unwrap();

        let dir = tempfile::tempdir().unwrap();
        store.save(dir.path()).unwrap();
        prop_assert_eq!(&Datastore::load(dir.path()).unwrap(), &store);

        let query = embedder.embed("q", &query_text).unwrap();
        let resolved = FlatIndex::build(&store)
            .search(&store, &query, store.len())
            .unwrap()
            .resolve(&store)
            .unwrap();
        for r in 1..6usize {
            for (smaller, larger) in [
                (rerank_default(&resolved, r), rerank_default(&resolved, r + 1)),
                (
                    rerank_actual_resolved(&query, &resolved, &store, r),
                    rerank_actual_resolved(&query, &resolved, &store, r + 1),
                ),
                (rerank_frequency(&resolved, r), rerank_frequency(&resolved, r + 1)),
            ] {
                prop_assert!(smaller.len() <= larger.len());
                prop_assert_eq!(&larger.items()[..smaller.len()], smaller.items());
            }
        }
    }
}
