//! The core loop end to end: embed texts, build a datastore (one entry per
//! (sample, tag) pair), search it exactly, and turn neighbors into ranked
//! tags with each rerank method.
//!
//! Run with: cargo run --example build_and_query

use tagdrift::corpus::{synth_generate, SynthConfig};
use tagdrift::datastore::{Datastore, DEFAULT_BATCH_SIZE, DEFAULT_VALUE_WIDTH};
use tagdrift::embed::{EmbeddingSpec, TextEmbedder};
use tagdrift::index::{AnnIndex, FlatIndex};
use tagdrift::predict::{frequency_baseline, predict, QueryParams, RerankMethod};

fn main() -> tagdrift::Result<()> {
    let samples = synth_generate(&SynthConfig {
        weeks: 4,
        tags_per_week: 40,
        churn_rate: 0.2,
        samples_per_week: 500,
        tags_per_sample_mean: 2.5,
        vocab_size: 1200,
        seed: 21,
    })?;

    let embedder = TextEmbedder::hashed(EmbeddingSpec {
        dimension: 256,
        ..EmbeddingSpec::default()
    })?;

    // Hold the last few samples out as queries; the store never sees them.
    let (train, held_out) = samples.split_at(samples.len() - 3);
    let store = Datastore::build(
        train.iter(),
        |s| embedder.embed(&s.id, &s.text),
        embedder.dimension(),
        DEFAULT_VALUE_WIDTH,
        DEFAULT_BATCH_SIZE,
    )?;
    println!(
        "store: {} entries from {} samples (entries repeat one key per tag)",
        store.len(),
        train.len()
    );

    let index = AnnIndex::Flat(FlatIndex::build(&store));
    for sample in held_out {
        println!("\nquery text: {:?}", sample.text);
        println!("gold tags:  {:?}", sample.tags);
        for method in RerankMethod::ALL {
            let params = QueryParams {
                k: 50,
                r: 5,
                method,
                nprobe: None,
            };
            let prediction = predict(&sample.id, &sample.text, &store, &index, &embedder, &params)?;
            let rendered: Vec<String> = prediction
                .items()
                .iter()
                .map(|t| format!("{}({:.3})", t.tag, t.score))
                .collect();
            println!("  {:>17}: {}", method.name(), rendered.join(" "));
        }
    }

    // The query-independent baseline the retrieval methods are measured
    // against: the R globally most frequent training tags.
    let baseline = frequency_baseline(train.iter(), 5)?;
    let tags: Vec<&str> = baseline.tags().collect();
    println!("\nfrequency baseline (same answer for every query): {tags:?}");
    Ok(())
}
