//! Corpus handling: ingestion, per-week tag filtering, train/val/test splits,
//! time bucketing, synthetic drift corpora, and corpus-level statistics.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::fnv1a64;

/// Maximum text length, in characters.
pub const MAX_TEXT_CHARS: usize = 280;

/// One tagged post: id, text, week index and its gold tag set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub id: String,
    pub text: String,
    pub week: u32,
    /// Non-empty, deduplicated, no leading '#'. Ordered for determinism.
    pub tags: BTreeSet<String>,
}

impl Sample {
    /// Validate and construct a sample. Tags are normalized (a single leading
    /// '#' is stripped); empty tags are rejected here, not dropped.
    pub fn new(id: String, text: String, week: u32, tags: Vec<String>) -> Result<Self> {
        if week < 1 {
            return Err(Error::InvalidParameter(format!(
                "sample {id}: week must be >= 1, got {week}"
            )));
        }
        if text.chars().count() > MAX_TEXT_CHARS {
            return Err(Error::InvalidParameter(format!(
                "sample {id}: text exceeds {MAX_TEXT_CHARS} characters"
            )));
        }
        let tags = normalize_tags(tags);
        if tags.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "sample {id}: tag set is empty"
            )));
        }
        Ok(Sample {
            id,
            text,
            week,
            tags,
        })
    }
}

fn normalize_tags(tags: Vec<String>) -> BTreeSet<String> {
    tags.into_iter()
        .map(|t| t.strip_prefix('#').map(str::to_owned).unwrap_or(t))
        .filter(|t| !t.is_empty())
        .collect()
}

/// Supported on-disk corpus formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    /// Newline-delimited JSON objects: {"id", "text", "week", "tags"}.
    Jsonl,
}

impl std::str::FromStr for CorpusFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" => Ok(CorpusFormat::Jsonl),
            other => Err(Error::UnknownFormat(other.to_string())),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct RawRecord {
    id: String,
    text: String,
    week: i64,
    tags: Vec<String>,
}

/// Result of an ingestion pass.
#[derive(Debug)]
pub struct Ingested {
    pub samples: Vec<Sample>,
    /// Records whose tag set was empty after normalization, dropped with a warning.
    pub dropped_empty_tags: usize,
}

/// Read and validate a corpus file. Records with an empty tag set after
/// normalization are dropped and counted; structural problems are errors
/// that name the offending line.
pub fn ingest(path: &Path, format: CorpusFormat) -> Result<Ingested> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    match format {
        CorpusFormat::Jsonl => ingest_jsonl(reader),
    }
}

fn ingest_jsonl<R: BufRead>(reader: R) -> Result<Ingested> {
    let mut samples = Vec::new();
    let mut seen_ids = HashSet::new();
    let mut dropped = 0usize;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
            line: lineno,
            message: e.to_string(),
        })?;
        if raw.week < 1 {
            return Err(Error::MalformedRecord {
                line: lineno,
                message: format!("week must be >= 1, got {}", raw.week),
            });
        }
        if raw.text.chars().count() > MAX_TEXT_CHARS {
            return Err(Error::MalformedRecord {
                line: lineno,
                message: format!("text exceeds {MAX_TEXT_CHARS} characters"),
            });
        }
        if !seen_ids.insert(raw.id.clone()) {
            return Err(Error::DuplicateId(raw.id));
        }
        let tags = normalize_tags(raw.tags);
        if tags.is_empty() {
            dropped += 1;
            continue;
        }
        samples.push(Sample {
            id: raw.id,
            text: raw.text,
            week: raw.week as u32,
            tags,
        });
    }
    Ok(Ingested {
        samples,
        dropped_empty_tags: dropped,
    })
}

/// Write samples as newline-delimited JSON, one record per line.
pub fn write_jsonl(samples: &[Sample], path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for s in samples {
        let raw = RawRecord {
            id: s.id.clone(),
            text: s.text.clone(),
            week: s.week as i64,
            tags: s.tags.iter().cloned().collect(),
        };
        serde_json::to_writer(&mut out, &raw).map_err(|e| Error::Config(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Keep, per week, only the `per_week_cap` most frequent tags of that week
/// (frequency counts one occurrence per (sample, tag) pair; ties at the cap
/// boundary are broken lexicographically). Samples left with no surviving
/// tags are removed. Idempotent.
pub fn filter_top_tags(samples: Vec<Sample>, per_week_cap: usize) -> Result<Vec<Sample>> {
    if per_week_cap < 1 {
        return Err(Error::InvalidParameter(
            "per_week_cap must be >= 1".to_string(),
        ));
    }
    let mut counts: HashMap<u32, HashMap<&str, usize>> = HashMap::new();
    for s in &samples {
        let week_counts = counts.entry(s.week).or_default();
        for t in &s.tags {
            *week_counts.entry(t.as_str()).or_insert(0) += 1;
        }
    }
    let mut survivors: HashMap<u32, HashSet<String>> = HashMap::new();
    for (week, week_counts) in &counts {
        let mut ranked: Vec<(&str, usize)> = week_counts.iter().map(|(t, c)| (*t, *c)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        survivors.insert(
            *week,
            ranked
                .into_iter()
                .take(per_week_cap)
                .map(|(t, _)| t.to_string())
                .collect(),
        );
    }
    Ok(samples
        .into_iter()
        .filter_map(|mut s| {
            let keep = &survivors[&s.week];
            s.tags.retain(|t| keep.contains(t));
            if s.tags.is_empty() {
                None
            } else {
                Some(s)
            }
        })
        .collect())
}

/// Train / validation / test membership.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidParameter(format!("unknown split: {other}"))),
        }
    }
}

/// Per-sample split assignment, 80/10/10 within each week (±1 sample).
#[derive(Debug, Clone)]
pub struct SplitAssignment {
    by_id: HashMap<String, Split>,
}

impl SplitAssignment {
    pub fn get(&self, id: &str) -> Option<Split> {
        self.by_id.get(id).copied()
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }
}

const SPLIT_QUOTAS: [(Split, f64); 3] = [
    (Split::Train, 0.80),
    (Split::Val, 0.10),
    (Split::Test, 0.10),
];

/// Assign 80/10/10 splits per week. Samples are ranked within their week by
/// a seeded hash of their id, so the assignment depends only on the week's
/// id set and the seed, never on ingestion order. Counts follow
/// largest-remainder rounding, so every split is within one sample of its
/// exact quota.
pub fn assign_splits(samples: &[Sample], seed: u64) -> SplitAssignment {
    let mut weeks: BTreeMap<u32, Vec<&str>> = BTreeMap::new();
    for s in samples {
        weeks.entry(s.week).or_default().push(s.id.as_str());
    }
    let mut by_id = HashMap::with_capacity(samples.len());
    for ids in weeks.values_mut() {
        ids.sort_by_key(|id| (split_rank(seed, id), *id));
        let counts = largest_remainder(ids.len());
        let mut cursor = 0usize;
        for ((split, _), count) in SPLIT_QUOTAS.iter().zip(counts) {
            for id in &ids[cursor..cursor + count] {
                by_id.insert((*id).to_string(), *split);
            }
            cursor += count;
        }
    }
    SplitAssignment { by_id }
}

fn split_rank(seed: u64, id: &str) -> u64 {
    let mut bytes = Vec::with_capacity(8 + id.len());
    bytes.extend_from_slice(&seed.to_le_bytes());
    bytes.extend_from_slice(id.as_bytes());
    fnv1a64(&bytes)
}

fn largest_remainder(n: usize) -> [usize; 3] {
    let mut counts = [0usize; 3];
    let mut remainders: Vec<(usize, f64)> = Vec::with_capacity(3);
    let mut assigned = 0usize;
    for (i, (_, quota)) in SPLIT_QUOTAS.iter().enumerate() {
        let exact = n as f64 * quota;
        counts[i] = exact.floor() as usize;
        assigned += counts[i];
        remainders.push((i, exact - exact.floor()));
    }
    // Hand out leftovers by largest fractional part; ties favor Train first.
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    for (i, _) in remainders.into_iter().take(n - assigned) {
        counts[i] += 1;
    }
    counts
}

/// A unit of `w` consecutive weeks; the first `w - 1` weeks supply training
/// data and the last week supplies the temporally shifted test queries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimeBucket {
    /// 1-based bucket index.
    pub index: usize,
    pub train_weeks: Vec<u32>,
    pub test_week: u32,
}

impl TimeBucket {
    /// Last training week (the latest data a store may contain).
    pub fn last_train_week(&self) -> u32 {
        *self.train_weeks.last().expect("buckets span >= 2 weeks")
    }
}

/// Tile weeks 1..=max_week into buckets of `weeks_per_bucket` weeks each.
/// Errors if the corpus span is not a whole number of buckets.
pub fn bucketize(samples: &[Sample], weeks_per_bucket: u32) -> Result<Vec<TimeBucket>> {
    if weeks_per_bucket < 2 {
        return Err(Error::InvalidParameter(
            "weeks_per_bucket must be >= 2".to_string(),
        ));
    }
    let max_week = samples
        .iter()
        .map(|s| s.week)
        .max()
        .ok_or(Error::EmptyCorpus)?;
    if max_week % weeks_per_bucket != 0 {
        return Err(Error::UnevenBuckets {
            weeks: max_week,
            weeks_per_bucket,
        });
    }
    let count = (max_week / weeks_per_bucket) as usize;
    Ok((1..=count)
        .map(|i| {
            let first = (i as u32 - 1) * weeks_per_bucket + 1;
            let last = i as u32 * weeks_per_bucket;
            TimeBucket {
                index: i,
                train_weeks: (first..last).collect(),
                test_week: last,
            }
        })
        .collect())
}

/// Configuration for the synthetic drift corpus generator.
#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub weeks: u32,
    pub tags_per_week: usize,
    /// Fraction of the tag inventory replaced with fresh tags each week.
    pub churn_rate: f64,
    pub samples_per_week: usize,
    pub tags_per_sample_mean: f64,
    /// Size of the shared token vocabulary texts are drawn from.
    pub vocab_size: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            weeks: 48,
            tags_per_week: 200,
            churn_rate: 0.3,
            samples_per_week: 5000,
            tags_per_sample_mean: 3.0,
            vocab_size: 4000,
            seed: 7,
        }
    }
}

// Text model constants: tokens per text, signal tokens owned by each tag,
// probability a token is drawn from a tag's signal set rather than the
// shared background vocabulary, and the Zipf exponent for tag popularity.
const TEXT_TOKENS: usize = 12;
const SIGNAL_TOKENS_PER_TAG: usize = 6;
const SIGNAL_PROB: f64 = 0.85;
const TAG_ZIPF_EXPONENT: f64 = 1.1;

struct TagInfo {
    name: String,
    signal: Vec<usize>,
}

/// Generate a deterministic synthetic corpus with weekly tag churn.
///
/// Week 1 draws a fresh tag inventory; each later week replaces a
/// `churn_rate` fraction (randomly chosen positions) with new tags. Every
/// tag owns a fixed set of signal tokens; a sample's text is drawn from the
/// mixture of its tags' signal sets plus background noise, so text carries a
/// retrievable tag signal. Tag popularity within a week is Zipf-distributed.
pub fn synth_generate(config: &SynthConfig) -> Result<Vec<Sample>> {
    if config.weeks < 1
        || config.tags_per_week < 1
        || config.samples_per_week < 1
        || config.vocab_size < 1
        || config.tags_per_sample_mean < 1.0
    {
        return Err(Error::InvalidParameter(
            "synth counts must be >= 1".to_string(),
        ));
    }
    if !(0.0..=1.0).contains(&config.churn_rate) {
        return Err(Error::InvalidParameter(format!(
            "churn_rate must be in [0, 1], got {}",
            config.churn_rate
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut registry: Vec<TagInfo> = Vec::new();
    let fresh_tag = |rng: &mut ChaCha8Rng, registry: &mut Vec<TagInfo>| -> usize {
        let id = registry.len();
        let signal = (0..SIGNAL_TOKENS_PER_TAG)
            .map(|_| rng.gen_range(0..config.vocab_size))
            .collect();
        registry.push(TagInfo {
            name: format!("tag{id:06}"),
            signal,
        });
        id
    };

    // Zipf weights by inventory position; cumulative sums for sampling.
    let weights: Vec<f64> = (0..config.tags_per_week)
        .map(|r| 1.0 / ((r + 1) as f64).powf(TAG_ZIPF_EXPONENT))
        .collect();
    let cumulative: Vec<f64> = weights
        .iter()
        .scan(0.0, |acc, w| {
            *acc += w;
            Some(*acc)
        })
        .collect();
    let total_weight = *cumulative.last().unwrap();

    let mut current: Vec<usize> = (0..config.tags_per_week)
        .map(|_| fresh_tag(&mut rng, &mut registry))
        .collect();
    let replace_count = (config.churn_rate * config.tags_per_week as f64).round() as usize;
    let replace_count = replace_count.min(config.tags_per_week);

    let mut samples = Vec::with_capacity(config.weeks as usize * config.samples_per_week);
    let mut sample_counter = 0usize;
    for week in 1..=config.weeks {
        if week > 1 && replace_count > 0 {
            let positions = rand::seq::index::sample(&mut rng, config.tags_per_week, replace_count);
            for pos in positions.iter() {
                current[pos] = fresh_tag(&mut rng, &mut registry);
            }
        }
        for _ in 0..config.samples_per_week {
            let want = poisson_knuth(&mut rng, config.tags_per_sample_mean)
                .max(1)
                .min(config.tags_per_week);
            let mut chosen: Vec<usize> = Vec::with_capacity(want);
            while chosen.len() < want {
                let x = rng.gen::<f64>() * total_weight;
                let pos = cumulative
                    .partition_point(|c| *c < x)
                    .min(config.tags_per_week - 1);
                let tag_id = current[pos];
                if !chosen.contains(&tag_id) {
                    chosen.push(tag_id);
                }
            }
            let mut tokens = Vec::with_capacity(TEXT_TOKENS);
            for _ in 0..TEXT_TOKENS {
                let token_id = if rng.gen::<f64>() < SIGNAL_PROB {
                    let tag = &registry[chosen[rng.gen_range(0..chosen.len())]];
                    tag.signal[rng.gen_range(0..tag.signal.len())]
                } else {
                    rng.gen_range(0..config.vocab_size)
                };
                tokens.push(token_name(token_id));
            }
            samples.push(Sample {
                id: format!("s{sample_counter:07}"),
                text: tokens.join(" "),
                week,
                tags: chosen.iter().map(|&t| registry[t].name.clone()).collect(),
            });
            sample_counter += 1;
        }
    }
    Ok(samples)
}

/// Five lowercase letters per token, base-26 from the token id.
fn token_name(mut id: usize) -> String {
    let mut chars = [b'a'; 5];
    for c in chars.iter_mut().rev() {
        *c = b'a' + (id % 26) as u8;
        id /= 26;
    }
    String::from_utf8_lossy(&chars).into_owned()
}

fn poisson_knuth(rng: &mut ChaCha8Rng, lambda: f64) -> usize {
    let limit = (-lambda).exp();
    let mut k = 0usize;
    let mut p = 1.0f64;
    loop {
        p *= rng.gen::<f64>();
        if p <= limit {
            return k;
        }
        k += 1;
    }
}

/// Bucket-by-bucket tag-set overlap; entry (i, j) = |V_i ∩ V_j| / |V_j|
/// where V_k is the distinct tag set of bucket k's training-split samples.
/// Generally asymmetric.
#[derive(Debug, Clone)]
pub struct OverlapMatrix {
    size: usize,
    values: Vec<f64>,
}

impl OverlapMatrix {
    pub fn size(&self) -> usize {
        self.size
    }

    /// Entry at 0-based (row, column).
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.size + j]
    }
}

/// Compute the bucket overlap matrix over training-split tags.
pub fn overlap_matrix(
    buckets: &[TimeBucket],
    samples: &[Sample],
    splits: &SplitAssignment,
) -> Result<OverlapMatrix> {
    if buckets.is_empty() {
        return Err(Error::InvalidParameter("no buckets".to_string()));
    }
    let mut vocabs: Vec<HashSet<&str>> = vec![HashSet::new(); buckets.len()];
    for s in samples {
        if splits.get(&s.id) != Some(Split::Train) {
            continue;
        }
        for (i, b) in buckets.iter().enumerate() {
            if b.train_weeks.contains(&s.week) {
                for t in &s.tags {
                    vocabs[i].insert(t.as_str());
                }
            }
        }
    }
    for (i, v) in vocabs.iter().enumerate() {
        if v.is_empty() {
            return Err(Error::EmptyBucketVocab(i + 1));
        }
    }
    let size = buckets.len();
    let mut values = vec![0.0; size * size];
    for i in 0..size {
        for j in 0..size {
            let inter = vocabs[i].intersection(&vocabs[j]).count();
            values[i * size + j] = inter as f64 / vocabs[j].len() as f64;
        }
    }
    Ok(OverlapMatrix { size, values })
}

/// Unit used for tag/text length statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LengthUnit {
    Chars,
    #[default]
    Tokens,
}

impl std::str::FromStr for LengthUnit {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chars" => Ok(LengthUnit::Chars),
            "tokens" => Ok(LengthUnit::Tokens),
            other => Err(Error::InvalidParameter(format!(
                "unknown length unit: {other}"
            ))),
        }
    }
}

/// Corpus-level summary statistics, averaged across weeks where applicable.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusStats {
    pub weeks: usize,
    pub total_samples: usize,
    pub samples_per_week: f64,
    pub avg_tags_per_sample: f64,
    pub distinct_tags_per_week: f64,
    /// Mean tag length over (sample, tag) occurrences, in the configured unit.
    pub avg_tag_len: f64,
    pub avg_text_len: f64,
}

fn length_of(text: &str, unit: LengthUnit) -> usize {
    match unit {
        LengthUnit::Chars => text.chars().count(),
        LengthUnit::Tokens => text.split_whitespace().count(),
    }
}

pub fn corpus_stats(samples: &[Sample], unit: LengthUnit) -> Result<CorpusStats> {
    if samples.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut week_tags: BTreeMap<u32, HashSet<&str>> = BTreeMap::new();
    let mut tag_occurrences = 0usize;
    let mut tag_len_sum = 0usize;
    let mut text_len_sum = 0usize;
    for s in samples {
        let bucket = week_tags.entry(s.week).or_default();
        for t in &s.tags {
            bucket.insert(t.as_str());
            tag_occurrences += 1;
            tag_len_sum += length_of(t, unit).max(1);
        }
        text_len_sum += length_of(&s.text, unit);
    }
    let weeks = week_tags.len();
    let n = samples.len();
    Ok(CorpusStats {
        weeks,
        total_samples: n,
        samples_per_week: n as f64 / weeks as f64,
        avg_tags_per_sample: tag_occurrences as f64 / n as f64,
        distinct_tags_per_week: week_tags.values().map(|v| v.len()).sum::<usize>() as f64
            / weeks as f64,
        avg_tag_len: tag_len_sum as f64 / tag_occurrences as f64,
        avg_text_len: text_len_sum as f64 / n as f64,
    })
}
