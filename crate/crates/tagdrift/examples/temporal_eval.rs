//! The three evaluation regimes side by side on a drifting corpus:
//! non-temporal (no shift), without adaptation (bucket-1 store frozen
//! forever) and with adaptation (store swapped every bucket). The gap
//! between the last two is the value of swapping the datastore.
//!
//! Run with: cargo run --example temporal_eval

use tagdrift::corpus::{assign_splits, bucketize, synth_generate, SynthConfig};
use tagdrift::embed::{EmbeddingSpec, TextEmbedder};
use tagdrift::eval::{evaluate, EvalContext, IndexSpec, SetupKind};
use tagdrift::predict::QueryParams;

fn main() -> tagdrift::Result<()> {
    let config = SynthConfig {
        weeks: 16,
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
    let params = QueryParams::default();
    println!(
        "{} weeks, churn {}, K={} R={} method={}",
        config.weeks,
        config.churn_rate,
        params.k,
        params.r,
        params.method.name()
    );

    let mut rows: Vec<Vec<String>> = Vec::new();
    for setup in [
        SetupKind::NonTemporal,
        SetupKind::WithoutAdaptation,
        SetupKind::WithAdaptation,
    ] {
        let run = evaluate(&ctx, setup, &params)?;
        let mut row = vec![format!("{:>20}", setup.name())];
        for (_, counts) in &run.report.per_week {
            row.push(format!("{:>8.4}", counts.micro_at_r()));
        }
        row.push(format!("{:>8.4}", run.report.total.micro_at_r()));
        rows.push(row);
    }

    print!("{:>20}", "micro recall@5");
    for b in &buckets {
        print!(" {:>8}", format!("week {}", b.test_week));
    }
    println!(" {:>8}", "all");
    for row in rows {
        println!("{}", row.join(" "));
    }
    println!("\nwithout-adaptation decays with drift; with-adaptation holds level");
    println!("(non-temporal rows are keyed by the bucket whose train weeks they query)");
    Ok(())
}
