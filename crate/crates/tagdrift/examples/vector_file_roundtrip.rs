//! Bring your own encoder: export per-sample vectors to the portable
//! vector file format, import them back (bit-identical), and build a store
//! from the imported table instead of the built-in hasher.
//!
//! Run with: cargo run --example vector_file_roundtrip

use tagdrift::corpus::{synth_generate, SynthConfig};
use tagdrift::datastore::{Datastore, DEFAULT_BATCH_SIZE, DEFAULT_VALUE_WIDTH};
use tagdrift::embed::{
    embed_text, export_vectors, import_vectors, EmbeddingSpec, TextEmbedder, VectorTable,
};

fn main() -> tagdrift::Result<()> {
    let samples = synth_generate(&SynthConfig {
        weeks: 2,
        tags_per_week: 20,
        churn_rate: 0.2,
        samples_per_week: 100,
        tags_per_sample_mean: 2.0,
        vocab_size: 600,
        seed: 5,
    })?;

    // Stand-in for an external encoder: any process that can write
    // (id, E floats) rows. Here we just reuse the built-in hasher.
    let spec = EmbeddingSpec {
        dimension: 64,
        ..EmbeddingSpec::default()
    };
    let mut table = VectorTable::new(spec.dimension)?;
    for s in &samples {
        table.push(s.id.clone(), &embed_text(&s.text, &spec))?;
    }

    let dir = tempfile::tempdir().expect("tempdir");
    let path = dir.path().join("vectors.tsv1");
    export_vectors(&table, &path)?;
    let bytes = std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0);
    println!(
        "exported {} vectors of dimension {} ({bytes} bytes)",
        table.len(),
        table.dimension()
    );

    let imported = import_vectors(&path, spec.dimension)?;
    for s in &samples {
        assert_eq!(imported.get(&s.id), table.get(&s.id), "vector for {}", s.id);
    }
    println!("import matches export bit for bit");

    // Importing with the wrong expected dimension is refused up front.
    assert!(import_vectors(&path, 1024).is_err());
    println!("dimension mismatch (expected 1024, file has 64) is rejected");

    // The imported table drops in wherever the hasher would go.
    let embedder = TextEmbedder::imported(imported);
    let store = Datastore::build(
        samples.iter(),
        |s| embedder.embed(&s.id, &s.text),
        embedder.dimension(),
        DEFAULT_VALUE_WIDTH,
        DEFAULT_BATCH_SIZE,
    )?;
    println!(
        "store built from imported vectors: {} entries, E={}",
        store.len(),
        store.dimension()
    );
    Ok(())
}
