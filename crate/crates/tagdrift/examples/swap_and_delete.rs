//! The two operations that replace retraining: swapping the active store
//! (temporal adaptation) and deleting a user's samples (right to erasure).
//! Both bump the generation; stale indexes are refused rather than serving
//! wrong rows.
//!
//! Run with: cargo run --example swap_and_delete

use std::collections::HashSet;

use tagdrift::corpus::{synth_generate, SynthConfig};
use tagdrift::datastore::{Datastore, StoreHandle, DEFAULT_BATCH_SIZE, DEFAULT_VALUE_WIDTH};
use tagdrift::embed::{EmbeddingSpec, TextEmbedder};
use tagdrift::index::{AnnIndex, FlatIndex};
use tagdrift::Error;

fn main() -> tagdrift::Result<()> {
    let samples = synth_generate(&SynthConfig {
        weeks: 8,
        tags_per_week: 40,
        churn_rate: 0.3,
        samples_per_week: 300,
        tags_per_sample_mean: 2.0,
        vocab_size: 1200,
        seed: 13,
    })?;
    let embedder = TextEmbedder::hashed(EmbeddingSpec {
        dimension: 128,
        ..EmbeddingSpec::default()
    })?;
    let build = |weeks: std::ops::RangeInclusive<u32>| -> tagdrift::Result<Datastore> {
        Datastore::build(
            samples.iter().filter(|s| weeks.contains(&s.week)),
            |s| embedder.embed(&s.id, &s.text),
            embedder.dimension(),
            DEFAULT_VALUE_WIDTH,
            DEFAULT_BATCH_SIZE,
        )
    };

    // Serve weeks 1-4, then adapt to weeks 5-8 by swapping the handle.
    // Readers pin a generation with current(); a swap never disturbs them.
    let handle = StoreHandle::new(build(1..=4)?);
    let pinned = handle.current();
    println!(
        "serving generation {} with {} entries (weeks 1-4)",
        pinned.generation(),
        pinned.len()
    );
    handle.swap(build(5..=8)?)?;
    let fresh = handle.current();
    println!(
        "swapped in {} entries (weeks 5-8); pinned reader still sees {} entries",
        fresh.len(),
        pinned.len()
    );

    // Delete one author's samples. The compacted store is a new
    // generation; the old index must be rebuilt, not reused.
    let victim: HashSet<String> = samples
        .iter()
        .filter(|s| (5..=8).contains(&s.week))
        .take(25)
        .map(|s| s.id.clone())
        .collect();
    let stale_index = AnnIndex::Flat(FlatIndex::build(&fresh));
    let (compacted, report) = fresh.delete_samples(&victim);
    println!(
        "\ndeleted {} of {} requested ids: {} entries removed, {} remain, generation {} -> {}",
        report.matched_sources,
        report.requested,
        report.removed_entries,
        report.remaining_entries,
        fresh.generation(),
        compacted.generation()
    );

    // The hard guarantee: no surviving row references a deleted sample.
    let survivors = (0..compacted.len()).filter(|&r| victim.contains(&compacted.meta(r).source_id));
    assert_eq!(survivors.count(), 0);
    println!("no surviving entry references a deleted sample");

    let query = embedder.embed("probe", "some probe text")?;
    match stale_index.search(&compacted, &query, 5, None) {
        Err(Error::StaleGeneration { index, store }) => {
            println!("stale index refused: index generation {index} vs store {store}")
        }
        other => panic!("expected stale-generation error, got {other:?}"),
    }
    let rebuilt = AnnIndex::Flat(FlatIndex::build(&compacted));
    let hits = rebuilt.search(&compacted, &query, 5, None)?;
    println!("rebuilt index serves generation {}", hits.generation());

    // Stores round-trip through their four-file directory format.
    let dir = tempfile::tempdir().expect("tempdir");
    compacted.save(dir.path())?;
    let reloaded = Datastore::load(dir.path())?;
    assert_eq!(reloaded, compacted);
    println!("save/load round trip is exact ({} entries)", reloaded.len());
    Ok(())
}
