//! Approximate search with an inverted-file index: train a coarse k-means
//! quantizer, probe only the nearest posting lists, and watch recall climb
//! to exact-search parity as nprobe grows.
//!
//! Run with: cargo run --example ivf_search

use std::collections::HashSet;
use std::time::Instant;

use tagdrift::corpus::{synth_generate, SynthConfig};
use tagdrift::datastore::{Datastore, DEFAULT_BATCH_SIZE, DEFAULT_VALUE_WIDTH};
use tagdrift::embed::{EmbeddingSpec, TextEmbedder};
use tagdrift::index::{default_nlist, search_exact, IvfIndex};

fn main() -> tagdrift::Result<()> {
    let samples = synth_generate(&SynthConfig {
        weeks: 4,
        tags_per_week: 80,
        churn_rate: 0.2,
        samples_per_week: 2500,
        tags_per_sample_mean: 2.0,
        vocab_size: 2000,
        seed: 3,
    })?;
    let embedder = TextEmbedder::hashed(EmbeddingSpec {
        dimension: 128,
        ..EmbeddingSpec::default()
    })?;
    let store = Datastore::build(
        samples.iter(),
        |s| embedder.embed(&s.id, &s.text),
        embedder.dimension(),
        DEFAULT_VALUE_WIDTH,
        DEFAULT_BATCH_SIZE,
    )?;

    let nlist = default_nlist(store.len());
    let built = Instant::now();
    let index = IvfIndex::build(&store, nlist, 11)?;
    println!(
        "store: {} entries; ivf: nlist={nlist}, trained in {} ms",
        store.len(),
        built.elapsed().as_millis()
    );

    // Queries are embeddings of fresh texts from the same generator family.
    let queries: Vec<Vec<f32>> = samples
        .iter()
        .rev()
        .take(200)
        .map(|s| embedder.embed(&s.id, &s.text))
        .collect::<tagdrift::Result<_>>()?;
    let k = 10;

    let exact_started = Instant::now();
    let exact: Vec<HashSet<u32>> = queries
        .iter()
        .map(|q| search_exact(&store, q, k).map(|r| r.neighbors().iter().map(|n| n.row).collect()))
        .collect::<tagdrift::Result<_>>()?;
    let exact_ms = exact_started.elapsed().as_millis();

    println!("\n{:>8} {:>10} {:>10}", "nprobe", "recall@10", "ms/query");
    for nprobe in [1, nlist / 16, nlist / 4, nlist] {
        let nprobe = nprobe.max(1);
        let started = Instant::now();
        let mut overlap = 0usize;
        let mut total = 0usize;
        for (q, truth) in queries.iter().zip(&exact) {
            let got = index.search(&store, q, k, nprobe)?;
            overlap += got
                .neighbors()
                .iter()
                .filter(|n| truth.contains(&n.row))
                .count();
            total += truth.len();
        }
        println!(
            "{:>8} {:>10.4} {:>10.3}",
            nprobe,
            overlap as f64 / total as f64,
            started.elapsed().as_secs_f64() * 1000.0 / queries.len() as f64
        );
    }
    println!(
        "{:>8} {:>10} {:>10.3}   (exact scan for comparison)",
        "exact",
        "1.0000",
        exact_ms as f64 / queries.len() as f64
    );
    println!("\nnprobe=nlist probes every list: identical results to exact search");
    Ok(())
}
