//! Sweep retrieval depth K for all three rerank methods under the
//! with-adaptation regime. Each query is searched once at the largest K
//! and every smaller K is scored on a prefix of that result, which is
//! exactly what a fresh search at that K would return.
//!
//! Run with: cargo run --example ablate_k

use tagdrift::corpus::{assign_splits, bucketize, synth_generate, SynthConfig};
use tagdrift::embed::{EmbeddingSpec, TextEmbedder};
use tagdrift::eval::{ablate_k, EvalContext, IndexSpec};
use tagdrift::predict::RerankMethod;

fn main() -> tagdrift::Result<()> {
    let config = SynthConfig {
        weeks: 8,
        tags_per_week: 60,
        churn_rate: 0.3,
        samples_per_week: 400,
        tags_per_sample_mean: 3.0,
        vocab_size: 1500,
        seed: 7,
    };
    let samples = synth_generate(&config)?;
    let buckets = bucketize(&samples, 4)?;
    let splits = assign_splits(&samples, config.seed);
    let embedder = TextEmbedder::hashed(EmbeddingSpec {
        dimension: 256,
        ..EmbeddingSpec::default()
    })?;
    let ctx = EvalContext {
        samples: &samples,
        buckets: &buckets,
        splits: &splits,
        embedder: &embedder,
        index: IndexSpec::Flat,
    };

    let k_values = [1usize, 20, 50, 100, 400];
    let table = ablate_k(&ctx, &k_values, 5)?;

    print!("{:>18}", "recall@5");
    for k in &table.k_values {
        print!(" {:>8}", format!("K={k}"));
    }
    println!();
    for method in RerankMethod::ALL {
        print!("{:>18}", method.name());
        for &k in &table.k_values {
            print!(" {:>8.4}", table.cell(method, k).unwrap().recall());
        }
        println!();
    }

    println!("\nat K=1 all methods collapse to the single nearest neighbor's tag;");
    println!("frequency-based peaks at moderate K, then dilutes as far neighbors");
    println!("outvote near ones; distance-based methods barely move with K");
    Ok(())
}
