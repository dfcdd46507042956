//! Temporal evaluation harness: the three setups, micro/macro recall with
//! OOV decomposition, the deletion sweep and the K/rerank ablation grid.

use std::collections::{BTreeSet, HashSet};
use std::time::Instant;

use rayon::prelude::*;

use crate::corpus::{Sample, Split, SplitAssignment, TimeBucket};
use crate::datastore::{Datastore, DEFAULT_BATCH_SIZE, DEFAULT_VALUE_WIDTH};
use crate::embed::TextEmbedder;
use crate::error::{Error, Result};
use crate::hash::fnv1a64;
use crate::index::{default_nlist, AnnIndex, FlatIndex, IvfIndex};
use crate::predict::{
    predict_vector, rerank_actual_resolved, rerank_default, rerank_frequency, Prediction,
    QueryParams, RerankMethod,
};

/// The three evaluation regimes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SetupKind {
    /// Store and queries drawn from the same weeks: no distribution shift.
    NonTemporal,
    /// Bucket 1's store serves every later test week unchanged.
    WithoutAdaptation,
    /// Each test week queries its own bucket's store.
    WithAdaptation,
}

impl SetupKind {
    pub fn name(&self) -> &'static str {
        match self {
            SetupKind::NonTemporal => "non-temporal",
            SetupKind::WithoutAdaptation => "without-adaptation",
            SetupKind::WithAdaptation => "with-adaptation",
        }
    }
}

impl std::str::FromStr for SetupKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "non-temporal" => Ok(SetupKind::NonTemporal),
            "without-adaptation" => Ok(SetupKind::WithoutAdaptation),
            "with-adaptation" => Ok(SetupKind::WithAdaptation),
            other => Err(Error::InvalidParameter(format!(
                "unknown setup: {other} (expected non-temporal, without-adaptation or with-adaptation)"
            ))),
        }
    }
}

/// Which search backend evaluation builds over each store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IndexSpec {
    #[default]
    Flat,
    Ivf {
        /// None picks ⌈√N⌉.
        nlist: Option<usize>,
        seed: u64,
    },
}

impl IndexSpec {
    pub fn build(&self, store: &Datastore) -> Result<AnnIndex> {
        match *self {
            IndexSpec::Flat => Ok(AnnIndex::Flat(FlatIndex::build(store))),
            IndexSpec::Ivf { nlist, seed } => {
                let nlist = nlist.unwrap_or_else(|| default_nlist(store.len()));
                Ok(AnnIndex::Ivf(IvfIndex::build(store, nlist, seed)?))
            }
        }
    }
}

/// Everything an evaluation run reads: the corpus, its bucketing and
/// splits, the embedder, and the index backend to build per store.
pub struct EvalContext<'a> {
    pub samples: &'a [Sample],
    pub buckets: &'a [TimeBucket],
    pub splits: &'a SplitAssignment,
    pub embedder: &'a TextEmbedder,
    pub index: IndexSpec,
}

/// Pooled recall counters. Micro recall divides summed hits by summed gold
/// tags; macro averages per-query recall.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RecallCounts {
    pub queries: usize,
    pub gold: usize,
    pub hits_at_1: usize,
    pub hits_at_r: usize,
    macro_sum_at_1: f64,
    macro_sum_at_r: f64,
}

impl RecallCounts {
    fn add_query(&mut self, hits_at_1: usize, hits_at_r: usize, gold: usize) {
        self.queries += 1;
        self.gold += gold;
        self.hits_at_1 += hits_at_1;
        self.hits_at_r += hits_at_r;
        self.macro_sum_at_1 += hits_at_1 as f64 / gold as f64;
        self.macro_sum_at_r += hits_at_r as f64 / gold as f64;
    }

    pub fn merge(&mut self, other: &RecallCounts) {
        self.queries += other.queries;
        self.gold += other.gold;
        self.hits_at_1 += other.hits_at_1;
        self.hits_at_r += other.hits_at_r;
        self.macro_sum_at_1 += other.macro_sum_at_1;
        self.macro_sum_at_r += other.macro_sum_at_r;
    }

    pub fn micro_at_1(&self) -> f64 {
        if self.gold == 0 {
            0.0
        } else {
            self.hits_at_1 as f64 / self.gold as f64
        }
    }

    pub fn micro_at_r(&self) -> f64 {
        if self.gold == 0 {
            0.0
        } else {
            self.hits_at_r as f64 / self.gold as f64
        }
    }

    pub fn macro_at_1(&self) -> f64 {
        if self.queries == 0 {
            0.0
        } else {
            self.macro_sum_at_1 / self.queries as f64
        }
    }

    pub fn macro_at_r(&self) -> f64 {
        if self.queries == 0 {
            0.0
        } else {
            self.macro_sum_at_r / self.queries as f64
        }
    }
}

/// Recall per test week plus the pooled aggregate.
#[derive(Debug, Clone, PartialEq)]
pub struct RecallReport {
    pub setup: SetupKind,
    pub k: usize,
    pub r: usize,
    pub method: RerankMethod,
    /// (test week, counts), ascending by week. Non-temporal rows are keyed
    /// by the bucket's test week even though their queries come from the
    /// training weeks.
    pub per_week: Vec<(u32, RecallCounts)>,
    pub total: RecallCounts,
}

/// Everything observed for one query, kept so OOV decomposition and audits
/// can run after the fact.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryOutcome {
    pub bucket: usize,
    /// Week the report row is keyed by (the bucket's test week).
    pub label_week: u32,
    /// Week the query sample actually lives in.
    pub week: u32,
    pub sample_id: String,
    pub gold: BTreeSet<String>,
    pub predicted: Vec<String>,
    pub hits_at_1: usize,
    pub hits_at_r: usize,
}

/// One (week, split) consumed while building a store.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StoreRead {
    pub bucket: usize,
    pub week: u32,
    pub split: Split,
}

/// A full evaluation run: the report plus per-query outcomes and the store
/// construction audit trail.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRun {
    pub report: RecallReport,
    pub outcomes: Vec<QueryOutcome>,
    pub store_reads: Vec<StoreRead>,
}

/// Hits of a prediction's top-`r` prefix against a gold set.
pub fn recall_at(
    prediction: &Prediction,
    gold: &BTreeSet<String>,
    r: usize,
) -> Result<(usize, usize)> {
    if gold.is_empty() {
        return Err(Error::InvalidParameter("empty gold set".to_string()));
    }
    let hits = prediction
        .items()
        .iter()
        .take(r)
        .filter(|t| gold.contains(&t.tag))
        .count();
    Ok((hits, gold.len()))
}

fn train_samples_of<'a>(ctx: &EvalContext<'a>, bucket: &TimeBucket) -> Vec<&'a Sample> {
    ctx.samples
        .iter()
        .filter(|s| {
            bucket.train_weeks.contains(&s.week) && ctx.splits.get(&s.id) == Some(Split::Train)
        })
        .collect()
}

fn test_samples_in_week<'a>(ctx: &EvalContext<'a>, week: u32) -> Vec<&'a Sample> {
    ctx.samples
        .iter()
        .filter(|s| s.week == week && ctx.splits.get(&s.id) == Some(Split::Test))
        .collect()
}

/// Build a bucket's training store, recording each (week, split) read.
fn build_bucket_store(
    ctx: &EvalContext<'_>,
    bucket: &TimeBucket,
    reads: &mut Vec<StoreRead>,
) -> Result<Datastore> {
    let selected = train_samples_of(ctx, bucket);
    let weeks: BTreeSet<u32> = selected.iter().map(|s| s.week).collect();
    for week in weeks {
        reads.push(StoreRead {
            bucket: bucket.index,
            week,
            split: Split::Train,
        });
    }
    Datastore::build(
        selected,
        |s| ctx.embedder.embed(&s.id, &s.text),
        ctx.embedder.dimension(),
        DEFAULT_VALUE_WIDTH,
        DEFAULT_BATCH_SIZE,
    )
}

/// Fan queries out across workers against one immutable store generation.
/// Aggregation downstream is integer sums, so scheduling cannot change the
/// result; outcome order follows query order.
fn run_queries(
    ctx: &EvalContext<'_>,
    store: &Datastore,
    index: &AnnIndex,
    params: &QueryParams,
    bucket: usize,
    label_week: u32,
    queries: &[&Sample],
) -> Result<Vec<QueryOutcome>> {
    queries
        .par_iter()
        .map(|s| {
            let vector = ctx.embedder.embed(&s.id, &s.text)?;
            let prediction = predict_vector(&vector, store, index, params)?;
            let (hits_at_r, _) = recall_at(&prediction, &s.tags, params.r)?;
            let (hits_at_1, _) = recall_at(&prediction, &s.tags, 1)?;
            Ok(QueryOutcome {
                bucket,
                label_week,
                week: s.week,
                sample_id: s.id.clone(),
                gold: s.tags.clone(),
                predicted: prediction.tags().map(str::to_owned).collect(),
                hits_at_1,
                hits_at_r,
            })
        })
        .collect()
}

fn counts_of(outcomes: &[QueryOutcome]) -> RecallCounts {
    let mut counts = RecallCounts::default();
    for o in outcomes {
        counts.add_query(o.hits_at_1, o.hits_at_r, o.gold.len());
    }
    counts
}

fn bucket_by_index(buckets: &[TimeBucket], index: usize) -> Result<&TimeBucket> {
    buckets
        .iter()
        .find(|b| b.index == index)
        .ok_or(Error::MissingBucket(index))
}

/// Run one setup over every bucket and pool micro/macro recall per test
/// week. Stores hold only training-split data; which weeks feed each store
/// is recorded in the returned audit trail.
pub fn evaluate(ctx: &EvalContext<'_>, setup: SetupKind, params: &QueryParams) -> Result<EvalRun> {
    params.validate()?;
    if ctx.buckets.is_empty() {
        return Err(Error::MissingBucket(1));
    }
    let mut store_reads = Vec::new();
    let mut outcomes: Vec<QueryOutcome> = Vec::new();
    let mut per_week: Vec<(u32, RecallCounts)> = Vec::new();
    let mut total = RecallCounts::default();

    let shared: Option<(Datastore, AnnIndex)> = match setup {
        SetupKind::WithoutAdaptation => {
            let first = bucket_by_index(ctx.buckets, 1)?;
            let store = build_bucket_store(ctx, first, &mut store_reads)?;
            let index = ctx.index.build(&store)?;
            Some((store, index))
        }
        _ => None,
    };

    for bucket in ctx.buckets {
        let owned: Option<(Datastore, AnnIndex)> = if shared.is_some() {
            None
        } else {
            let store = build_bucket_store(ctx, bucket, &mut store_reads)?;
            let index = ctx.index.build(&store)?;
            Some((store, index))
        };
        let (store, index) = shared
            .as_ref()
            .or(owned.as_ref())
            .map(|(s, i)| (s, i))
            .expect("one of shared/owned is set");

        let queries: Vec<&Sample> = match setup {
            SetupKind::NonTemporal => bucket
                .train_weeks
                .iter()
                .flat_map(|&w| test_samples_in_week(ctx, w))
                .collect(),
            _ => test_samples_in_week(ctx, bucket.test_week),
        };
        let round = run_queries(
            ctx,
            store,
            index,
            params,
            bucket.index,
            bucket.test_week,
            &queries,
        )?;
        let counts = counts_of(&round);
        per_week.push((bucket.test_week, counts));
        total.merge(&counts);
        outcomes.extend(round);
    }

    Ok(EvalRun {
        report: RecallReport {
            setup,
            k: params.k,
            r: params.r,
            method: params.method,
            per_week,
            total,
        },
        outcomes,
        store_reads,
    })
}

/// Distinct training-split tags of one bucket.
pub fn bucket_train_vocab(
    samples: &[Sample],
    bucket: &TimeBucket,
    splits: &SplitAssignment,
) -> HashSet<String> {
    let mut vocab = HashSet::new();
    for s in samples {
        if bucket.train_weeks.contains(&s.week) && splits.get(&s.id) == Some(Split::Train) {
            vocab.extend(s.tags.iter().cloned());
        }
    }
    vocab
}

/// Per-week recall decomposition by gold-tag vocabulary membership.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OovRow {
    pub week: u32,
    pub gold_iv: usize,
    pub hits_iv: usize,
    pub gold_oov: usize,
    pub hits_oov: usize,
}

impl OovRow {
    /// None when no gold tag of the week is in-vocabulary.
    pub fn iv_recall(&self) -> Option<f64> {
        (self.gold_iv > 0).then(|| self.hits_iv as f64 / self.gold_iv as f64)
    }

    /// None when no gold tag of the week is out-of-vocabulary.
    pub fn oov_recall(&self) -> Option<f64> {
        (self.gold_oov > 0).then(|| self.hits_oov as f64 / self.gold_oov as f64)
    }

    /// Micro recall over both classes; equals the plain micro recall of the
    /// same queries by integer arithmetic.
    pub fn total_recall(&self) -> f64 {
        let gold = self.gold_iv + self.gold_oov;
        if gold == 0 {
            0.0
        } else {
            (self.hits_iv + self.hits_oov) as f64 / gold as f64
        }
    }

    /// Fraction of gold tags that are out-of-vocabulary.
    pub fn oov_share(&self) -> f64 {
        let gold = self.gold_iv + self.gold_oov;
        if gold == 0 {
            0.0
        } else {
            self.gold_oov as f64 / gold as f64
        }
    }
}

/// OOV/IV breakdown of a run, one row per test week, membership taken
/// against a reference vocabulary (conventionally bucket 1's training
/// tags).
#[derive(Debug, Clone, PartialEq)]
pub struct OovReport {
    pub rows: Vec<OovRow>,
}

pub fn oov_breakdown(run: &EvalRun, vocab: &HashSet<String>) -> OovReport {
    let mut rows: Vec<OovRow> = Vec::new();
    for o in &run.outcomes {
        let row = match rows.iter_mut().find(|r| r.week == o.label_week) {
            Some(row) => row,
            None => {
                rows.push(OovRow {
                    week: o.label_week,
                    gold_iv: 0,
                    hits_iv: 0,
                    gold_oov: 0,
                    hits_oov: 0,
                });
                rows.last_mut().unwrap()
            }
        };
        let top_r: HashSet<&str> = o.predicted.iter().map(String::as_str).collect();
        for tag in &o.gold {
            let hit = top_r.contains(tag.as_str()) as usize;
            if vocab.contains(tag) {
                row.gold_iv += 1;
                row.hits_iv += hit;
            } else {
                row.gold_oov += 1;
                row.hits_oov += hit;
            }
        }
    }
    rows.sort_by_key(|r| r.week);
    OovReport { rows }
}

/// One deletion fraction's outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct DeletionRow {
    pub fraction: f64,
    pub deleted_samples: usize,
    /// The exact training sample ids removed (empty at fraction 0).
    pub deleted_ids: Vec<String>,
    /// Wall-clock for delete + index rebuild; 0 at fraction 0.
    pub wall_ms: u64,
    pub per_week: Vec<(u32, RecallCounts)>,
    pub total: RecallCounts,
}

/// Deletion sweep over bucket 3: per fraction, recall on every future test
/// week against the compacted store.
#[derive(Debug, Clone, PartialEq)]
pub struct DeletionReport {
    pub bucket: usize,
    pub r: usize,
    pub rows: Vec<DeletionRow>,
}

/// Rank ids by a seeded hash so deletion draws are deterministic and
/// independent of corpus order; the fraction-f draw is the first
/// round(f * n) ids. Draws for growing f are nested, which keeps the sweep
/// comparable across fractions.
pub fn deletion_draw(ids: &mut [String], seed: u64, fraction: f64) -> Vec<String> {
    ids.sort_by_cached_key(|id| {
        let mut bytes = Vec::with_capacity(8 + id.len());
        bytes.extend_from_slice(&seed.to_le_bytes());
        bytes.extend_from_slice(id.as_bytes());
        (fnv1a64(&bytes), id.clone())
    });
    let count = (fraction * ids.len() as f64).round() as usize;
    ids[..count.min(ids.len())].to_vec()
}

/// Delete growing fractions of bucket 3's training samples and evaluate
/// every later bucket's test week against the compacted store (bucket-3
/// store held fixed, as in the without-adaptation regime).
pub fn deletion_experiment(
    ctx: &EvalContext<'_>,
    fractions: &[f64],
    seed: u64,
    params: &QueryParams,
) -> Result<DeletionReport> {
    params.validate()?;
    for &f in fractions {
        if !(0.0..=1.0).contains(&f) {
            return Err(Error::InvalidParameter(format!(
                "deletion fraction must be in [0, 1], got {f}"
            )));
        }
    }
    const DELETION_BUCKET: usize = 3;
    let bucket = bucket_by_index(ctx.buckets, DELETION_BUCKET)?;
    let future: Vec<&TimeBucket> = ctx
        .buckets
        .iter()
        .filter(|b| b.index >= DELETION_BUCKET)
        .collect();

    let mut reads = Vec::new();
    let base_store = build_bucket_store(ctx, bucket, &mut reads)?;
    let base_index = ctx.index.build(&base_store)?;
    let mut train_ids: Vec<String> = train_samples_of(ctx, bucket)
        .iter()
        .map(|s| s.id.clone())
        .collect();

    let mut rows = Vec::with_capacity(fractions.len());
    for &fraction in fractions {
        let deleted_ids = deletion_draw(&mut train_ids, seed, fraction);
        let owned: Option<(Datastore, AnnIndex)>;
        let (store, index, wall_ms) = if deleted_ids.is_empty() {
            (&base_store, &base_index, 0u64)
        } else {
            let id_set: HashSet<String> = deleted_ids.iter().cloned().collect();
            let started = Instant::now();
            let (next, _) = base_store.delete_samples(&id_set);
            let next_index = ctx.index.build(&next)?;
            let wall_ms = started.elapsed().as_millis() as u64;
            owned = Some((next, next_index));
            let pair = owned.as_ref().unwrap();
            (&pair.0, &pair.1, wall_ms)
        };

        let mut per_week = Vec::with_capacity(future.len());
        let mut total = RecallCounts::default();
        for b in &future {
            let queries = test_samples_in_week(ctx, b.test_week);
            let round = run_queries(ctx, store, index, params, b.index, b.test_week, &queries)?;
            let counts = counts_of(&round);
            per_week.push((b.test_week, counts));
            total.merge(&counts);
        }
        rows.push(DeletionRow {
            fraction,
            deleted_samples: deleted_ids.len(),
            deleted_ids,
            wall_ms,
            per_week,
            total,
        });
    }
    Ok(DeletionReport {
        bucket: DELETION_BUCKET,
        r: params.r,
        rows,
    })
}

/// One cell of the ablation grid: pooled micro recall@R over all test
/// weeks under the with-adaptation regime.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationCell {
    pub method: RerankMethod,
    pub k: usize,
    pub hits: usize,
    pub gold: usize,
}

impl AblationCell {
    pub fn recall(&self) -> f64 {
        if self.gold == 0 {
            0.0
        } else {
            self.hits as f64 / self.gold as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub r: usize,
    pub k_values: Vec<usize>,
    pub cells: Vec<AblationCell>,
}

impl AblationTable {
    pub fn cell(&self, method: RerankMethod, k: usize) -> Option<&AblationCell> {
        self.cells.iter().find(|c| c.method == method && c.k == k)
    }
}

/// Full K × rerank-method grid under with-adaptation. Each query is
/// searched once at the largest K; since exact and candidate-set searches
/// order results identically for any K, every smaller K is evaluated on a
/// prefix of that one result, giving the same predictions a fresh search
/// at that K would.
pub fn ablate_k(ctx: &EvalContext<'_>, k_values: &[usize], r: usize) -> Result<AblationTable> {
    if r < 1 || k_values.is_empty() || k_values.iter().any(|&k| k < 1) {
        return Err(Error::InvalidParameter(
            "ablation needs R >= 1 and K values >= 1".to_string(),
        ));
    }
    if ctx.buckets.is_empty() {
        return Err(Error::MissingBucket(1));
    }
    let k_max = *k_values.iter().max().unwrap();
    let methods = RerankMethod::ALL;
    let mut grid = vec![(0usize, 0usize); methods.len() * k_values.len()];

    for bucket in ctx.buckets {
        let mut reads = Vec::new();
        let store = build_bucket_store(ctx, bucket, &mut reads)?;
        let index = ctx.index.build(&store)?;
        let queries = test_samples_in_week(ctx, bucket.test_week);
        let partials: Vec<Vec<(usize, usize)>> = queries
            .par_iter()
            .map(|s| {
                let vector = ctx.embedder.embed(&s.id, &s.text)?;
                let result = index.search(&store, &vector, k_max, None)?;
                let resolved = result.resolve(&store)?;
                let mut cells = Vec::with_capacity(grid.len());
                for (mi, method) in methods.iter().enumerate() {
                    for (ki, &k) in k_values.iter().enumerate() {
                        let prefix = &resolved[..k.min(resolved.len())];
                        let prediction = match method {
                            RerankMethod::DefaultDistance => rerank_default(prefix, r),
                            RerankMethod::ActualDistance => {
                                rerank_actual_resolved(&vector, prefix, &store, r)
                            }
                            RerankMethod::FrequencyBased => rerank_frequency(prefix, r),
                        };
                        let (hits, gold) = recall_at(&prediction, &s.tags, r)?;
                        debug_assert_eq!(mi * k_values.len() + ki, cells.len());
                        cells.push((hits, gold));
                    }
                }
                Ok(cells)
            })
            .collect::<Result<_>>()?;
        for cells in partials {
            for (slot, (hits, gold)) in grid.iter_mut().zip(cells) {
                slot.0 += hits;
                slot.1 += gold;
            }
        }
    }

    let mut cells = Vec::with_capacity(grid.len());
    for (mi, method) in methods.iter().enumerate() {
        for (ki, &k) in k_values.iter().enumerate() {
            let (hits, gold) = grid[mi * k_values.len() + ki];
            cells.push(AblationCell {
                method: *method,
                k,
                hits,
                gold,
            });
        }
    }
    Ok(AblationTable {
        r,
        k_values: k_values.to_vec(),
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{assign_splits, bucketize, synth_generate, SynthConfig};
    use crate::embed::EmbeddingSpec;
    use crate::predict::PredictedTag;

    fn prediction(tags: &[&str]) -> Prediction {
        // Scores are irrelevant to recall.
        let mut p = Prediction::default();
        for (i, t) in tags.iter().enumerate() {
            p.push_for_test(PredictedTag {
                tag: t.to_string(),
                score: i as f64,
            });
        }
        p
    }

    fn gold(tags: &[&str]) -> BTreeSet<String> {
        tags.iter().map(|t| t.to_string()).collect()
    }

    #[test]
    fn recall_counts_hits_over_gold() {
        let p = prediction(&["a", "x", "y", "z", "w"]);
        let (hits, count) = recall_at(&p, &gold(&["a", "b"]), 5).unwrap();
        assert_eq!((hits, count), (1, 2));
    }

    #[test]
    fn recall_is_one_when_prediction_covers_gold() {
        let p = prediction(&["a", "b", "c"]);
        let (hits, count) = recall_at(&p, &gold(&["a", "b"]), 5).unwrap();
        assert_eq!(hits, count);
    }

    #[test]
    fn recall_zero_on_miss() {
        let p = prediction(&["b"]);
        let (hits, count) = recall_at(&p, &gold(&["a"]), 1).unwrap();
        assert_eq!((hits, count), (0, 1));
    }

    #[test]
    fn recall_rejects_empty_gold() {
        let p = prediction(&["a"]);
        assert!(recall_at(&p, &BTreeSet::new(), 1).is_err());
    }

    fn small_ctx(
        churn: f64,
        weeks: u32,
        seed: u64,
    ) -> (Vec<Sample>, Vec<TimeBucket>, SplitAssignment, TextEmbedder) {
        let config = SynthConfig {
            weeks,
            tags_per_week: 12,
            churn_rate: churn,
            samples_per_week: 120,
            tags_per_sample_mean: 2.0,
            vocab_size: 300,
            seed,
        };
        let samples = synth_generate(&config).unwrap();
        let buckets = bucketize(&samples, 4).unwrap();
        let splits = assign_splits(&samples, seed);
        let embedder = TextEmbedder::hashed(EmbeddingSpec {
            dimension: 128,
            ..EmbeddingSpec::default()
        })
        .unwrap();
        (samples, buckets, splits, embedder)
    }

    #[test]
    fn without_adaptation_cannot_hit_unseen_tags() {
        // Full churn: every tag in later weeks is new, so the bucket-1
        // store can never produce them.
        let (samples, buckets, splits, embedder) = small_ctx(1.0, 8, 4);
        let ctx = EvalContext {
            samples: &samples,
            buckets: &buckets,
            splits: &splits,
            embedder: &embedder,
            index: IndexSpec::Flat,
        };
        let run = evaluate(&ctx, SetupKind::WithoutAdaptation, &QueryParams::default()).unwrap();
        let vocab = bucket_train_vocab(&samples, &buckets[0], &splits);
        let report = oov_breakdown(&run, &vocab);
        for row in &report.rows {
            if row.week > buckets[0].test_week {
                assert_eq!(row.hits_oov, 0, "week {}", row.week);
                assert_eq!(row.gold_iv, 0, "week {}", row.week);
            }
        }
        // Later weeks still have gold tags, all OOV.
        assert!(report.rows.iter().any(|r| r.gold_oov > 0));
    }

    #[test]
    fn oov_identity_is_exact() {
        let (samples, buckets, splits, embedder) = small_ctx(0.4, 8, 7);
        let ctx = EvalContext {
            samples: &samples,
            buckets: &buckets,
            splits: &splits,
            embedder: &embedder,
            index: IndexSpec::Flat,
        };
        let run = evaluate(&ctx, SetupKind::WithAdaptation, &QueryParams::default()).unwrap();
        let vocab = bucket_train_vocab(&samples, &buckets[0], &splits);
        let report = oov_breakdown(&run, &vocab);
        for (row, (week, counts)) in report.rows.iter().zip(&run.report.per_week) {
            assert_eq!(row.week, *week);
            assert_eq!(row.gold_iv + row.gold_oov, counts.gold);
            assert_eq!(row.hits_iv + row.hits_oov, counts.hits_at_r);
            assert_eq!(row.total_recall(), counts.micro_at_r());
        }
    }

    #[test]
    fn non_temporal_store_never_reads_test_weeks() {
        let (samples, buckets, splits, embedder) = small_ctx(0.3, 8, 9);
        let ctx = EvalContext {
            samples: &samples,
            buckets: &buckets,
            splits: &splits,
            embedder: &embedder,
            index: IndexSpec::Flat,
        };
        let run = evaluate(&ctx, SetupKind::NonTemporal, &QueryParams::default()).unwrap();
        let test_weeks: HashSet<u32> = buckets.iter().map(|b| b.test_week).collect();
        for read in &run.store_reads {
            assert!(!test_weeks.contains(&read.week), "read {read:?}");
            assert_eq!(read.split, Split::Train);
        }
    }

    #[test]
    fn with_adaptation_never_reads_the_future() {
        let (samples, buckets, splits, embedder) = small_ctx(0.3, 8, 10);
        let ctx = EvalContext {
            samples: &samples,
            buckets: &buckets,
            splits: &splits,
            embedder: &embedder,
            index: IndexSpec::Flat,
        };
        let run = evaluate(&ctx, SetupKind::WithAdaptation, &QueryParams::default()).unwrap();
        for read in &run.store_reads {
            let bucket = &buckets[read.bucket - 1];
            assert!(
                read.week <= bucket.last_train_week(),
                "bucket {} read week {}",
                read.bucket,
                read.week
            );
            assert_eq!(read.split, Split::Train);
        }
    }

    #[test]
    fn without_adaptation_builds_only_bucket_one() {
        let (samples, buckets, splits, embedder) = small_ctx(0.3, 8, 11);
        let ctx = EvalContext {
            samples: &samples,
            buckets: &buckets,
            splits: &splits,
            embedder: &embedder,
            index: IndexSpec::Flat,
        };
        let run = evaluate(&ctx, SetupKind::WithoutAdaptation, &QueryParams::default()).unwrap();
        assert!(run.store_reads.iter().all(|r| r.bucket == 1));
        // Still one report row per bucket.
        assert_eq!(run.report.per_week.len(), buckets.len());
    }

    #[test]
    fn recall_at_r_dominates_recall_at_1() {
        let (samples, buckets, splits, embedder) = small_ctx(0.3, 8, 12);
        let ctx = EvalContext {
            samples: &samples,
            buckets: &buckets,
            splits: &splits,
            embedder: &embedder,
            index: IndexSpec::Flat,
        };
        for setup in [
            SetupKind::NonTemporal,
            SetupKind::WithoutAdaptation,
            SetupKind::WithAdaptation,
        ] {
            let run = evaluate(&ctx, setup, &QueryParams::default()).unwrap();
            for (week, counts) in &run.report.per_week {
                assert!(
                    counts.hits_at_r >= counts.hits_at_1,
                    "{} week {week}",
                    setup.name()
                );
            }
            assert!(run.report.total.micro_at_r() >= run.report.total.micro_at_1());
        }
    }

    #[test]
    fn deletion_fraction_zero_is_the_baseline() {
        let (samples, buckets, splits, embedder) = small_ctx(0.3, 12, 13);
        let ctx = EvalContext {
            samples: &samples,
            buckets: &buckets,
            splits: &splits,
            embedder: &embedder,
            index: IndexSpec::Flat,
        };
        let a = deletion_experiment(&ctx, &[0.0], 5, &QueryParams::default()).unwrap();
        let b = deletion_experiment(&ctx, &[0.0, 0.5], 5, &QueryParams::default()).unwrap();
        assert_eq!(a.rows[0].per_week, b.rows[0].per_week);
        assert_eq!(a.rows[0].deleted_samples, 0);
        assert_eq!(a.rows[0].wall_ms, 0);
    }

    #[test]
    fn deletion_fraction_one_zeroes_recall() {
        let (samples, buckets, splits, embedder) = small_ctx(0.3, 12, 14);
        let ctx = EvalContext {
            samples: &samples,
            buckets: &buckets,
            splits: &splits,
            embedder: &embedder,
            index: IndexSpec::Flat,
        };
        let report = deletion_experiment(&ctx, &[1.0], 5, &QueryParams::default()).unwrap();
        let row = &report.rows[0];
        assert_eq!(row.total.hits_at_r, 0);
        assert!(row.total.gold > 0);
    }

    #[test]
    fn deletion_draws_are_nested_and_deterministic() {
        let mut ids: Vec<String> = (0..100).map(|i| format!("id{i}")).collect();
        let small = deletion_draw(&mut ids, 3, 0.2);
        let mut ids2: Vec<String> = (0..100).rev().map(|i| format!("id{i}")).collect();
        let large = deletion_draw(&mut ids2, 3, 0.5);
        assert_eq!(small.len(), 20);
        assert_eq!(large.len(), 50);
        let large_set: HashSet<&String> = large.iter().collect();
        assert!(small.iter().all(|id| large_set.contains(id)));
    }

    #[test]
    fn deletion_requires_bucket_three() {
        let (samples, buckets, splits, embedder) = small_ctx(0.3, 8, 15);
        let ctx = EvalContext {
            samples: &samples,
            buckets: &buckets[..2],
            splits: &splits,
            embedder: &embedder,
            index: IndexSpec::Flat,
        };
        assert!(matches!(
            deletion_experiment(&ctx, &[0.2], 1, &QueryParams::default()),
            Err(Error::MissingBucket(3))
        ));
        let ctx_bad = EvalContext {
            samples: &samples,
            buckets: &buckets,
            splits: &splits,
            embedder: &embedder,
            index: IndexSpec::Flat,
        };
        assert!(matches!(
            deletion_experiment(&ctx_bad, &[1.5], 1, &QueryParams::default()),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn ablation_prefix_matches_fresh_search() {
        let (samples, buckets, splits, embedder) = small_ctx(0.3, 4, 16);
        let ctx = EvalContext {
            samples: &samples,
            buckets: &buckets,
            splits: &splits,
            embedder: &embedder,
            index: IndexSpec::Flat,
        };
        let table = ablate_k(&ctx, &[5, 20], 5).unwrap();
        for method in RerankMethod::ALL {
            for k in [5usize, 20] {
                let params = QueryParams {
                    k,
                    r: 5,
                    method,
                    nprobe: None,
                };
                let run = evaluate(&ctx, SetupKind::WithAdaptation, &params).unwrap();
                let cell = table.cell(method, k).unwrap();
                assert_eq!(
                    (cell.hits, cell.gold),
                    (run.report.total.hits_at_r, run.report.total.gold),
                    "{} K={k}",
                    method.name()
                );
            }
        }
    }

    #[test]
    fn ablation_k1_methods_coincide() {
        let (samples, buckets, splits, embedder) = small_ctx(0.3, 4, 17);
        let ctx = EvalContext {
            samples: &samples,
            buckets: &buckets,
            splits: &splits,
            embedder: &embedder,
            index: IndexSpec::Flat,
        };
        let table = ablate_k(&ctx, &[1], 5).unwrap();
        let recalls: Vec<f64> = RerankMethod::ALL
            .iter()
            .map(|m| table.cell(*m, 1).unwrap().recall())
            .collect();
        assert_eq!(recalls[0], recalls[1]);
        assert_eq!(recalls[1], recalls[2]);
    }
}
