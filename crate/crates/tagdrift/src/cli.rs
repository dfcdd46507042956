//! Command-line pipeline: synthesize or ingest a corpus, bucket it, build
//! stores and indexes on disk, query them, and run the temporal
//! evaluation experiments with machine-readable results files.

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::corpus::synth_generate;
use crate::corpus::{
    assign_splits, bucketize, corpus_stats, filter_top_tags, ingest, overlap_matrix, write_jsonl,
    CorpusFormat, LengthUnit, Sample, Split, SplitAssignment, SynthConfig, TimeBucket,
};
use crate::datastore::{Datastore, DEFAULT_BATCH_SIZE, DEFAULT_VALUE_WIDTH};
use crate::embed::{import_vectors, EmbeddingSpec, TextEmbedder};
use crate::error::{Error, Result};
use crate::eval::{
    ablate_k, bucket_train_vocab, deletion_experiment, evaluate, oov_breakdown, EvalContext,
    IndexSpec, RecallReport, SetupKind,
};
use crate::index::{default_nlist, AnnIndex, FlatIndex, IvfIndex};
use crate::predict::{predict_vector, QueryParams, RerankMethod};

/// Environment variable supplying the default output directory.
pub const OUT_DIR_ENV: &str = "TAGDRIFT_OUT";

/// Entry point with exit-code conventions: 0 on success (including help and
/// version output), 2 on usage errors, 1 on runtime failures with a
/// one-line diagnostic on stderr.
pub fn run<I: IntoIterator<Item = String>>(argv: I) -> i32 {
    let merged = match merge_config(argv.into_iter().collect()) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    let cli = match Cli::try_parse_from(&merged) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// Parse and execute, surfacing the error to the caller; `run` wraps this
/// with exit codes. Intended for in-process tests.
pub fn try_run<I: IntoIterator<Item = String>>(argv: I) -> Result<()> {
    let merged = merge_config(argv.into_iter().collect())?;
    let cli = Cli::try_parse_from(&merged).map_err(|e| Error::Config(e.to_string()))?;
    dispatch(cli)
}

/// Inject `key=value` lines from the `--config` file as long flags, only
/// for keys not already present in argv, so explicit flags always win.
/// `key=true` injects a switch, `key=false` is a no-op.
fn merge_config(argv: Vec<String>) -> Result<Vec<String>> {
    let mut path: Option<String> = None;
    let mut iter = argv.iter().peekable();
    while let Some(arg) = iter.next() {
        if arg == "--config" {
            path = iter.peek().map(|s| s.to_string());
        } else if let Some(rest) = arg.strip_prefix("--config=") {
            path = Some(rest.to_string());
        }
    }
    let Some(path) = path else { return Ok(argv) };
    let text = std::fs::read_to_string(&path)?;
    let mut merged = argv;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("{path}:{}: expected key=value", lineno + 1)))?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() {
            return Err(Error::Config(format!("{path}:{}: empty key", lineno + 1)));
        }
        if key == "config" {
            return Err(Error::Config(format!(
                "{path}:{}: config files cannot set config",
                lineno + 1
            )));
        }
        let flag = format!("--{key}");
        let assigned = format!("{flag}=");
        if merged
            .iter()
            .any(|a| *a == flag || a.starts_with(&assigned))
        {
            continue;
        }
        match value {
            "true" => merged.push(flag),
            "false" => {}
            other => {
                merged.push(flag);
                merged.push(other.to_string());
            }
        }
    }
    Ok(merged)
}

#[derive(Parser)]
#[command(
    name = "tagdrift",
    version,
    about = "Retrieval-based tag prediction over swappable vector datastores"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus with weekly tag churn.
    Synth(SynthArgs),
    /// Validate and normalize a corpus file.
    Ingest(IngestArgs),
    /// Report time buckets and split sizes; write bucket/split artifacts.
    Bucketize(BucketizeArgs),
    /// Embed samples and write a datastore directory.
    BuildStore(BuildStoreArgs),
    /// Build an IVF index file over a datastore.
    BuildIndex(BuildIndexArgs),
    /// Predict ranked tags for query texts.
    Query(QueryArgs),
    /// Run one evaluation setup over all time buckets.
    Evaluate(EvaluateArgs),
    /// Sweep retrieval depth K across all rerank methods.
    AblateK(AblateKArgs),
    /// Delete growing fractions of bucket 3's training data and re-evaluate.
    DeleteSweep(DeleteSweepArgs),
    /// Split recall by membership in bucket 1's training vocabulary.
    Oov(OovArgs),
    /// Print the bucket tag-overlap matrix.
    Overlap(OverlapArgs),
    /// Print corpus summary statistics.
    Stats(StatsArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Key=value file supplying defaults for any long flag of this
    /// subcommand; explicit flags override the file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for output artifacts (default: $TAGDRIFT_OUT, else ".").
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Bound worker parallelism.
    #[arg(long)]
    threads: Option<usize>,
    /// Write wall-clock fields as zero so repeated runs are byte-identical.
    #[arg(long)]
    zero_timings: bool,
}

impl CommonArgs {
    fn init(&self) {
        if let Some(n) = self.threads {
            // The global pool is set once per process; later calls keep the
            // first configuration. Results are scheduling-invariant, so a
            // pool-size mismatch cannot change any output.
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global();
        }
    }

    fn out_dir(&self) -> PathBuf {
        self.out_dir
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("."))
    }

    fn resolve(&self, explicit: &Option<PathBuf>, default_name: &str) -> PathBuf {
        match explicit {
            Some(p) => p.clone(),
            None => self.out_dir().join(default_name),
        }
    }

    fn wall_ms(&self, started: Instant) -> u64 {
        if self.zero_timings {
            0
        } else {
            started.elapsed().as_millis() as u64
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum EmbedKind {
    Hashed,
    Imported,
}

impl std::str::FromStr for EmbedKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hashed" => Ok(EmbedKind::Hashed),
            "imported" => Ok(EmbedKind::Imported),
            other => Err(Error::InvalidParameter(format!(
                "unknown embedder: {other} (expected hashed or imported)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum IndexKind {
    Flat,
    Ivf,
}

impl std::str::FromStr for IndexKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flat" => Ok(IndexKind::Flat),
            "ivf" => Ok(IndexKind::Ivf),
            other => Err(Error::InvalidParameter(format!(
                "unknown index kind: {other} (expected flat or ivf)"
            ))),
        }
    }
}

#[derive(Args)]
struct EmbedArgs {
    /// Embedding provider: hashed (built-in n-gram hasher) or imported
    /// (vector file from an external encoder).
    #[arg(long, default_value = "hashed")]
    embedder: EmbedKind,
    /// Embedding dimension.
    #[arg(long, default_value_t = 1024)]
    dim: usize,
    /// Vector file for the imported provider.
    #[arg(long)]
    vectors: Option<PathBuf>,
}

impl EmbedArgs {
    fn build(&self) -> Result<TextEmbedder> {
        match self.embedder {
            EmbedKind::Hashed => TextEmbedder::hashed(EmbeddingSpec {
                dimension: self.dim,
                ..EmbeddingSpec::default()
            }),
            EmbedKind::Imported => {
                let path = self.vectors.as_ref().ok_or_else(|| {
                    Error::Config("--vectors is required with --embedder imported".to_string())
                })?;
                Ok(TextEmbedder::imported(import_vectors(path, self.dim)?))
            }
        }
    }
}

#[derive(Args)]
struct DataArgs {
    /// Corpus file (JSONL).
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 4)]
    weeks_per_bucket: u32,
    /// Split-assignment seed.
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[command(flatten)]
    embed: EmbedArgs,
}

struct LoadedData {
    samples: Vec<Sample>,
    buckets: Vec<TimeBucket>,
    splits: SplitAssignment,
    embedder: TextEmbedder,
}

impl DataArgs {
    fn load(&self) -> Result<LoadedData> {
        let samples = load_corpus(&self.corpus)?;
        let buckets = bucketize(&samples, self.weeks_per_bucket)?;
        let splits = assign_splits(&samples, self.seed);
        let embedder = self.embed.build()?;
        Ok(LoadedData {
            samples,
            buckets,
            splits,
            embedder,
        })
    }
}

impl LoadedData {
    fn ctx(&self, index: IndexSpec) -> EvalContext<'_> {
        EvalContext {
            samples: &self.samples,
            buckets: &self.buckets,
            splits: &self.splits,
            embedder: &self.embedder,
            index,
        }
    }
}

#[derive(Args)]
struct BackendArgs {
    /// Search backend built over each store: flat or ivf.
    #[arg(long, default_value = "flat")]
    index: IndexKind,
    /// IVF cluster count (default: ⌈√N⌉ per store).
    #[arg(long)]
    nlist: Option<usize>,
    /// IVF k-means seed.
    #[arg(long, default_value_t = 11)]
    index_seed: u64,
    /// IVF probe count at query time (default: the index's own default).
    #[arg(long)]
    nprobe: Option<usize>,
}

impl BackendArgs {
    fn spec(&self) -> IndexSpec {
        match self.index {
            IndexKind::Flat => IndexSpec::Flat,
            IndexKind::Ivf => IndexSpec::Ivf {
                nlist: self.nlist,
                seed: self.index_seed,
            },
        }
    }
}

#[derive(Args)]
struct ParamArgs {
    /// Neighbors retrieved per query.
    #[arg(long, default_value_t = 50)]
    k: usize,
    /// Ranked tags returned per query.
    #[arg(long, default_value_t = 5)]
    r: usize,
    /// Rerank method: default-distance, actual-distance or frequency.
    #[arg(long, default_value = "frequency")]
    method: RerankMethod,
}

impl ParamArgs {
    fn to_query(&self, nprobe: Option<usize>) -> QueryParams {
        QueryParams {
            k: self.k,
            r: self.r,
            method: self.method,
            nprobe,
        }
    }
}

#[derive(Args)]
struct ReportArgs {
    /// Machine-readable results file; default name varies per subcommand.
    #[arg(long)]
    results: Option<PathBuf>,
    /// Also write per-week series for external plotting.
    #[arg(long)]
    plot_data: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, default_value_t = 48)]
    weeks: u32,
    #[arg(long, default_value_t = 200)]
    tags_per_week: usize,
    /// Fraction of the tag inventory replaced each week.
    #[arg(long, default_value_t = 0.3)]
    churn: f64,
    #[arg(long, default_value_t = 5000)]
    samples_per_week: usize,
    /// Mean tags per sample (clipped Poisson).
    #[arg(long, default_value_t = 3.0)]
    tags_mean: f64,
    /// Background token vocabulary size.
    #[arg(long, default_value_t = 4000)]
    vocab_size: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Output corpus path (default: <out-dir>/corpus.jsonl).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct IngestArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Input corpus file.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "jsonl")]
    format: CorpusFormat,
    /// Keep only the N most frequent tags per week.
    #[arg(long)]
    top_tags: Option<usize>,
    /// Normalized output path (default: <out-dir>/corpus.jsonl).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BucketizeArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 4)]
    weeks_per_bucket: u32,
    /// Split-assignment seed.
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Args)]
struct BuildStoreArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    corpus: PathBuf,
    /// Weeks to include, e.g. "1-3" or "1,2,5" (default: all).
    #[arg(long)]
    weeks: Option<String>,
    /// Restrict to one split: train, val or test (default: all samples).
    #[arg(long)]
    split: Option<Split>,
    /// Split-assignment seed (used with --split).
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[command(flatten)]
    embed: EmbedArgs,
    #[arg(long, default_value_t = DEFAULT_VALUE_WIDTH)]
    value_width: usize,
    #[arg(long, default_value_t = DEFAULT_BATCH_SIZE)]
    batch_size: usize,
    /// Store directory (default: <out-dir>/store).
    #[arg(long)]
    store: Option<PathBuf>,
}

#[derive(Args)]
struct BuildIndexArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Store directory.
    #[arg(long)]
    store: PathBuf,
    /// Index kind: ivf writes an index file; flat needs no artifact.
    #[arg(long, default_value = "ivf")]
    kind: IndexKind,
    /// Cluster count (default: ⌈√N⌉).
    #[arg(long)]
    nlist: Option<usize>,
    #[arg(long, default_value_t = 11)]
    seed: u64,
    /// Index output path (default: <out-dir>/index.tix).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct QueryArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Store directory.
    #[arg(long)]
    store: PathBuf,
    /// IVF index file; omitted = exact flat search.
    #[arg(long)]
    index: Option<PathBuf>,
    #[command(flatten)]
    embed: EmbedArgs,
    #[command(flatten)]
    params: ParamArgs,
    /// IVF probe count.
    #[arg(long)]
    nprobe: Option<usize>,
    /// Query file, one text per line (default: stdin). With the imported
    /// embedder each line is a sample id.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output path (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    params: ParamArgs,
    #[command(flatten)]
    report: ReportArgs,
    /// non-temporal, without-adaptation or with-adaptation.
    #[arg(long, default_value = "with-adaptation")]
    setup: SetupKind,
}

#[derive(Args)]
struct AblateKArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    report: ReportArgs,
    /// Comma-separated retrieval depths.
    #[arg(long, default_value = "20,50,100,1024,2048")]
    k_list: String,
    /// Ranked tags returned per query.
    #[arg(long, default_value_t = 5)]
    r: usize,
}

#[derive(Args)]
struct DeleteSweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    params: ParamArgs,
    #[command(flatten)]
    report: ReportArgs,
    /// Comma-separated deletion fractions.
    #[arg(long, default_value = "0,0.017,0.2,0.5,0.8")]
    fractions: String,
    /// Seed for the deletion draw.
    #[arg(long, default_value_t = 17)]
    delete_seed: u64,
}

#[derive(Args)]
struct OovArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    params: ParamArgs,
    #[command(flatten)]
    report: ReportArgs,
    /// Setup whose predictions are decomposed.
    #[arg(long, default_value = "with-adaptation")]
    setup: SetupKind,
}

#[derive(Args)]
struct OverlapArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 4)]
    weeks_per_bucket: u32,
    /// Split-assignment seed.
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Matrix output path (default: <out-dir>/overlap.tsv).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct StatsArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    corpus: PathBuf,
    /// Unit for tag/text lengths: chars or tokens.
    #[arg(long, default_value = "tokens")]
    length_unit: LengthUnit,
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Ingest(args) => cmd_ingest(args),
        Command::Bucketize(args) => cmd_bucketize(args),
        Command::BuildStore(args) => cmd_build_store(args),
        Command::BuildIndex(args) => cmd_build_index(args),
        Command::Query(args) => cmd_query(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::AblateK(args) => cmd_ablate_k(args),
        Command::DeleteSweep(args) => cmd_delete_sweep(args),
        Command::Oov(args) => cmd_oov(args),
        Command::Overlap(args) => cmd_overlap(args),
        Command::Stats(args) => cmd_stats(args),
    }
}

fn load_corpus(path: &Path) -> Result<Vec<Sample>> {
    let ingested = ingest(path, CorpusFormat::Jsonl)?;
    if ingested.samples.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(ingested.samples)
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    Ok(())
}

fn write_text(path: &Path, content: &str) -> Result<()> {
    ensure_parent(path)?;
    std::fs::write(path, content)?;
    Ok(())
}

/// Parse "1-3,5" into a week set.
fn parse_weeks(s: &str) -> Result<BTreeSet<u32>> {
    let mut weeks = BTreeSet::new();
    for part in s.split(',') {
        let part = part.trim();
        let bad =
            |detail: &str| Error::InvalidParameter(format!("bad week selector {part:?}: {detail}"));
        if part.is_empty() {
            return Err(bad("empty item"));
        }
        match part.split_once('-') {
            Some((a, b)) => {
                let lo: u32 = a.trim().parse().map_err(|_| bad("not a number"))?;
                let hi: u32 = b.trim().parse().map_err(|_| bad("not a number"))?;
                if lo < 1 || hi < lo {
                    return Err(bad("range must be 1 <= lo <= hi"));
                }
                weeks.extend(lo..=hi);
            }
            None => {
                let w: u32 = part.parse().map_err(|_| bad("not a number"))?;
                if w < 1 {
                    return Err(bad("weeks start at 1"));
                }
                weeks.insert(w);
            }
        }
    }
    Ok(weeks)
}

fn parse_usize_list(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|p| {
            p.trim().parse().map_err(|_| {
                Error::InvalidParameter(format!("bad list item {:?}: not a number", p.trim()))
            })
        })
        .collect()
}

fn parse_f64_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|p| {
            p.trim().parse().map_err(|_| {
                Error::InvalidParameter(format!("bad list item {:?}: not a number", p.trim()))
            })
        })
        .collect()
}

fn split_name(split: Split) -> &'static str {
    match split {
        Split::Train => "train",
        Split::Val => "val",
        Split::Test => "test",
    }
}

/// One line of the machine-readable results file.
#[derive(Serialize)]
struct ResultRecord {
    setup: String,
    /// Test week the row aggregates; 0 means pooled over all weeks.
    week: u32,
    k: usize,
    method: String,
    r: usize,
    hits: usize,
    gold: usize,
    /// Absent (null) when the row's gold count is zero.
    recall: Option<f64>,
    wall_ms: u64,
}

#[allow(clippy::too_many_arguments)]
fn record(
    setup: &str,
    week: u32,
    k: usize,
    method: &str,
    r: usize,
    hits: usize,
    gold: usize,
    wall_ms: u64,
) -> ResultRecord {
    ResultRecord {
        setup: setup.to_string(),
        week,
        k,
        method: method.to_string(),
        r,
        hits,
        gold,
        recall: (gold > 0).then(|| hits as f64 / gold as f64),
        wall_ms,
    }
}

fn write_results(path: &Path, records: &[ResultRecord]) -> Result<()> {
    ensure_parent(path)?;
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| Error::Config(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn print_recall_table(report: &RecallReport) {
    println!(
        "setup={} K={} R={} method={}",
        report.setup.name(),
        report.k,
        report.r,
        report.method.name()
    );
    println!(
        "{:>6} {:>8} {:>8} {:>9} {:>9} {:>9} {:>9}",
        "week", "queries", "gold", "micro@1", "micro@R", "macro@1", "macro@R"
    );
    for (week, c) in &report.per_week {
        println!(
            "{:>6} {:>8} {:>8} {:>9.4} {:>9.4} {:>9.4} {:>9.4}",
            week,
            c.queries,
            c.gold,
            c.micro_at_1(),
            c.micro_at_r(),
            c.macro_at_1(),
            c.macro_at_r()
        );
    }
    let t = &report.total;
    println!(
        "{:>6} {:>8} {:>8} {:>9.4} {:>9.4} {:>9.4} {:>9.4}",
        "all",
        t.queries,
        t.gold,
        t.micro_at_1(),
        t.micro_at_r(),
        t.macro_at_1(),
        t.macro_at_r()
    );
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    args.common.init();
    let config = SynthConfig {
        weeks: args.weeks,
        tags_per_week: args.tags_per_week,
        churn_rate: args.churn,
        samples_per_week: args.samples_per_week,
        tags_per_sample_mean: args.tags_mean,
        vocab_size: args.vocab_size,
        seed: args.seed,
    };
    let samples = synth_generate(&config)?;
    let out = args.common.resolve(&args.out, "corpus.jsonl");
    ensure_parent(&out)?;
    write_jsonl(&samples, &out)?;
    println!(
        "wrote {} samples over {} weeks to {}",
        samples.len(),
        args.weeks,
        out.display()
    );
    Ok(())
}

fn cmd_ingest(args: IngestArgs) -> Result<()> {
    args.common.init();
    let ingested = ingest(&args.input, args.format)?;
    let dropped = ingested.dropped_empty_tags;
    let mut samples = ingested.samples;
    if let Some(cap) = args.top_tags {
        samples = filter_top_tags(samples, cap)?;
    }
    let out = args.common.resolve(&args.out, "corpus.jsonl");
    ensure_parent(&out)?;
    write_jsonl(&samples, &out)?;
    println!(
        "ingested {} samples ({} dropped for empty tags) to {}",
        samples.len(),
        dropped,
        out.display()
    );
    Ok(())
}

fn cmd_bucketize(args: BucketizeArgs) -> Result<()> {
    args.common.init();
    let samples = load_corpus(&args.corpus)?;
    let buckets = bucketize(&samples, args.weeks_per_bucket)?;
    let splits = assign_splits(&samples, args.seed);

    println!(
        "{:>6} {:>12} {:>9} {:>8} {:>8} {:>8}",
        "bucket", "train-weeks", "test-week", "train", "val", "test"
    );
    for b in &buckets {
        let mut counts = [0usize; 3];
        for s in &samples {
            if !b.train_weeks.contains(&s.week) && s.week != b.test_week {
                continue;
            }
            match splits.get(&s.id) {
                Some(Split::Train) => counts[0] += 1,
                Some(Split::Val) => counts[1] += 1,
                Some(Split::Test) => counts[2] += 1,
                None => {}
            }
        }
        println!(
            "{:>6} {:>12} {:>9} {:>8} {:>8} {:>8}",
            b.index,
            format!("{}-{}", b.train_weeks[0], b.last_train_week()),
            b.test_week,
            counts[0],
            counts[1],
            counts[2]
        );
    }

    let out_dir = args.common.out_dir();
    let bucket_values: Vec<serde_json::Value> = buckets
        .iter()
        .map(|b| {
            serde_json::json!({
                "index": b.index,
                "train_weeks": b.train_weeks,
                "test_week": b.test_week,
            })
        })
        .collect();
    let buckets_path = out_dir.join("buckets.json");
    write_text(
        &buckets_path,
        &format!(
            "{}\n",
            serde_json::to_string_pretty(&bucket_values)
                .map_err(|e| Error::Config(e.to_string()))?
        ),
    )?;

    let mut ids: Vec<&str> = samples.iter().map(|s| s.id.as_str()).collect();
    ids.sort_unstable();
    let mut lines = String::new();
    for id in ids {
        let split = splits.get(id).expect("every sample is assigned");
        lines.push_str(&format!("{id}\t{}\n", split_name(split)));
    }
    let splits_path = out_dir.join("splits.tsv");
    write_text(&splits_path, &lines)?;
    println!(
        "artifacts: {} {}",
        buckets_path.display(),
        splits_path.display()
    );
    Ok(())
}

fn cmd_build_store(args: BuildStoreArgs) -> Result<()> {
    args.common.init();
    let samples = load_corpus(&args.corpus)?;
    let weeks = args.weeks.as_deref().map(parse_weeks).transpose()?;
    let splits = args.split.map(|_| assign_splits(&samples, args.seed));
    let embedder = args.embed.build()?;
    let selected = samples.iter().filter(|s| {
        weeks.as_ref().is_none_or(|w| w.contains(&s.week))
            && args
                .split
                .is_none_or(|want| splits.as_ref().unwrap().get(&s.id) == Some(want))
    });
    let store = Datastore::build(
        selected,
        |s| embedder.embed(&s.id, &s.text),
        embedder.dimension(),
        args.value_width,
        args.batch_size,
    )?;
    let dir = args.common.resolve(&args.store, "store");
    store.save(&dir)?;
    println!(
        "store: {} entries (E={}, V={}), generation {}, at {}",
        store.len(),
        store.dimension(),
        store.value_width(),
        store.generation(),
        dir.display()
    );
    Ok(())
}

fn cmd_build_index(args: BuildIndexArgs) -> Result<()> {
    args.common.init();
    let store = Datastore::load(&args.store)?;
    match args.kind {
        IndexKind::Flat => {
            println!("flat search needs no index artifact; omit --index at query time");
        }
        IndexKind::Ivf => {
            let nlist = args.nlist.unwrap_or_else(|| default_nlist(store.len()));
            let started = Instant::now();
            let index = IvfIndex::build(&store, nlist, args.seed)?;
            let wall_ms = args.common.wall_ms(started);
            let out = args.common.resolve(&args.out, "index.tix");
            ensure_parent(&out)?;
            index.save(&out)?;
            println!(
                "ivf index: nlist={nlist}, default nprobe={}, generation {}, built in {wall_ms} ms, at {}",
                index.default_nprobe(),
                index.generation(),
                out.display()
            );
        }
    }
    Ok(())
}

fn cmd_query(args: QueryArgs) -> Result<()> {
    args.common.init();
    let store = Datastore::load(&args.store)?;
    let index = match &args.index {
        Some(path) => AnnIndex::Ivf(IvfIndex::load(path, &store)?),
        None => AnnIndex::Flat(FlatIndex::build(&store)),
    };
    let embedder = args.embed.build()?;
    let params = args.params.to_query(args.nprobe);
    params.validate()?;

    let lines: Vec<String> = match &args.input {
        Some(p) => BufReader::new(std::fs::File::open(p)?)
            .lines()
            .collect::<std::io::Result<_>>()?,
        None => std::io::stdin()
            .lock()
            .lines()
            .collect::<std::io::Result<_>>()?,
    };
    let mut out: Box<dyn Write> = match &args.out {
        Some(p) => {
            ensure_parent(p)?;
            Box::new(BufWriter::new(std::fs::File::create(p)?))
        }
        None => Box::new(std::io::stdout().lock()),
    };
    for line in &lines {
        let vector = embedder.embed(line, line)?;
        let prediction = predict_vector(&vector, &store, &index, &params)?;
        let fields: Vec<String> = prediction
            .items()
            .iter()
            .flat_map(|t| [t.tag.clone(), format!("{}", t.score)])
            .collect();
        writeln!(out, "{}", fields.join("\t"))?;
    }
    out.flush()?;
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    args.common.init();
    let data = args.data.load()?;
    let params = args.params.to_query(args.backend.nprobe);
    let started = Instant::now();
    let run = evaluate(&data.ctx(args.backend.spec()), args.setup, &params)?;
    let wall_ms = args.common.wall_ms(started);

    print_recall_table(&run.report);

    let mut records = Vec::new();
    for (week, c) in &run.report.per_week {
        let name = args.setup.name();
        let method = params.method.name();
        records.push(record(
            name,
            *week,
            params.k,
            method,
            1,
            c.hits_at_1,
            c.gold,
            wall_ms,
        ));
        records.push(record(
            name,
            *week,
            params.k,
            method,
            params.r,
            c.hits_at_r,
            c.gold,
            wall_ms,
        ));
    }
    let results_path = args.common.resolve(&args.report.results, "results.jsonl");
    write_results(&results_path, &records)?;
    println!("results: {}", results_path.display());

    if args.report.plot_data {
        let mut text = String::from("week\trecall_at_1\trecall_at_r\n");
        for (week, c) in &run.report.per_week {
            text.push_str(&format!(
                "{week}\t{:.6}\t{:.6}\n",
                c.micro_at_1(),
                c.micro_at_r()
            ));
        }
        let plot = args
            .common
            .out_dir()
            .join(format!("plot_{}.tsv", args.setup.name()));
        write_text(&plot, &text)?;
        println!("plot data: {}", plot.display());
    }
    Ok(())
}

fn cmd_ablate_k(args: AblateKArgs) -> Result<()> {
    args.common.init();
    let data = args.data.load()?;
    let k_values = parse_usize_list(&args.k_list)?;
    let started = Instant::now();
    let table = ablate_k(&data.ctx(args.backend.spec()), &k_values, args.r)?;
    let wall_ms = args.common.wall_ms(started);

    print!("{:>18}", "method");
    for k in &table.k_values {
        print!(" {:>9}", format!("K={k}"));
    }
    println!();
    for method in RerankMethod::ALL {
        print!("{:>18}", method.name());
        for &k in &table.k_values {
            let cell = table.cell(method, k).expect("full grid");
            print!(" {:>9.4}", cell.recall());
        }
        println!();
    }

    let mut records = Vec::new();
    for cell in &table.cells {
        records.push(record(
            "ablate",
            0,
            cell.k,
            cell.method.name(),
            table.r,
            cell.hits,
            cell.gold,
            wall_ms,
        ));
    }
    let results_path = args.common.resolve(&args.report.results, "ablate.jsonl");
    write_results(&results_path, &records)?;
    println!("results: {}", results_path.display());

    if args.report.plot_data {
        let mut text = String::from("method\tk\trecall\n");
        for cell in &table.cells {
            text.push_str(&format!(
                "{}\t{}\t{:.6}\n",
                cell.method.name(),
                cell.k,
                cell.recall()
            ));
        }
        let plot = args.common.out_dir().join("plot_ablate.tsv");
        write_text(&plot, &text)?;
        println!("plot data: {}", plot.display());
    }
    Ok(())
}

fn cmd_delete_sweep(args: DeleteSweepArgs) -> Result<()> {
    args.common.init();
    let data = args.data.load()?;
    let params = args.params.to_query(args.backend.nprobe);
    let fractions = parse_f64_list(&args.fractions)?;
    let report = deletion_experiment(
        &data.ctx(args.backend.spec()),
        &fractions,
        args.delete_seed,
        &params,
    )?;

    let mut records = Vec::new();
    for row in &report.rows {
        let wall_ms = if args.common.zero_timings {
            0
        } else {
            row.wall_ms
        };
        println!(
            "fraction {:>6}: deleted {} samples, delete+reindex {} ms",
            row.fraction, row.deleted_samples, wall_ms
        );
        let setup = format!("delete@{}", row.fraction);
        for (week, c) in &row.per_week {
            println!(
                "  week {:>3}: recall@{} {:>9.4} ({}/{})",
                week,
                report.r,
                c.micro_at_r(),
                c.hits_at_r,
                c.gold
            );
            records.push(record(
                &setup,
                *week,
                params.k,
                params.method.name(),
                report.r,
                c.hits_at_r,
                c.gold,
                wall_ms,
            ));
        }
    }
    let results_path = args.common.resolve(&args.report.results, "delete.jsonl");
    write_results(&results_path, &records)?;
    println!("results: {}", results_path.display());

    if args.report.plot_data {
        let mut text = String::from("fraction\tweek\trecall\n");
        for row in &report.rows {
            for (week, c) in &row.per_week {
                text.push_str(&format!(
                    "{}\t{week}\t{:.6}\n",
                    row.fraction,
                    c.micro_at_r()
                ));
            }
        }
        let plot = args.common.out_dir().join("plot_delete.tsv");
        write_text(&plot, &text)?;
        println!("plot data: {}", plot.display());
    }
    Ok(())
}

fn cmd_oov(args: OovArgs) -> Result<()> {
    args.common.init();
    let data = args.data.load()?;
    let params = args.params.to_query(args.backend.nprobe);
    let started = Instant::now();
    let run = evaluate(&data.ctx(args.backend.spec()), args.setup, &params)?;
    let wall_ms = args.common.wall_ms(started);
    let first = data.buckets.first().ok_or(Error::MissingBucket(1))?;
    let vocab = bucket_train_vocab(&data.samples, first, &data.splits);
    let breakdown = oov_breakdown(&run, &vocab);

    let fmt_opt = |v: Option<f64>| match v {
        Some(v) => format!("{v:.4}"),
        None => "absent".to_string(),
    };
    println!(
        "setup={} (membership: bucket-1 training vocabulary, {} tags)",
        args.setup.name(),
        vocab.len()
    );
    println!(
        "{:>6} {:>8} {:>9} {:>8} {:>9} {:>9} {:>9}",
        "week", "gold-iv", "iv@R", "gold-oov", "oov@R", "oov-share", "total@R"
    );
    let mut records = Vec::new();
    for row in &breakdown.rows {
        println!(
            "{:>6} {:>8} {:>9} {:>8} {:>9} {:>9.4} {:>9.4}",
            row.week,
            row.gold_iv,
            fmt_opt(row.iv_recall()),
            row.gold_oov,
            fmt_opt(row.oov_recall()),
            row.oov_share(),
            row.total_recall()
        );
        let method = params.method.name();
        let iv_setup = format!("{}+iv", args.setup.name());
        let oov_setup = format!("{}+oov", args.setup.name());
        records.push(record(
            &iv_setup,
            row.week,
            params.k,
            method,
            params.r,
            row.hits_iv,
            row.gold_iv,
            wall_ms,
        ));
        records.push(record(
            &oov_setup,
            row.week,
            params.k,
            method,
            params.r,
            row.hits_oov,
            row.gold_oov,
            wall_ms,
        ));
    }
    let results_path = args.common.resolve(&args.report.results, "oov.jsonl");
    write_results(&results_path, &records)?;
    println!("results: {}", results_path.display());

    if args.report.plot_data {
        let fmt_nan = |v: Option<f64>| match v {
            Some(v) => format!("{v:.6}"),
            None => "nan".to_string(),
        };
        let mut text = String::from("week\toov_share\tiv_recall\toov_recall\n");
        for row in &breakdown.rows {
            text.push_str(&format!(
                "{}\t{:.6}\t{}\t{}\n",
                row.week,
                row.oov_share(),
                fmt_nan(row.iv_recall()),
                fmt_nan(row.oov_recall())
            ));
        }
        let plot = args.common.out_dir().join("plot_oov.tsv");
        write_text(&plot, &text)?;
        println!("plot data: {}", plot.display());
    }
    Ok(())
}

fn cmd_overlap(args: OverlapArgs) -> Result<()> {
    args.common.init();
    let samples = load_corpus(&args.corpus)?;
    let buckets = bucketize(&samples, args.weeks_per_bucket)?;
    let splits = assign_splits(&samples, args.seed);
    let matrix = overlap_matrix(&buckets, &samples, &splits)?;

    print!("{:>8}", "");
    for j in 0..matrix.size() {
        print!(" {:>7}", format!("b{}", j + 1));
    }
    println!();
    let mut text = String::new();
    for i in 0..matrix.size() {
        print!("{:>8}", format!("b{}", i + 1));
        let mut row = Vec::with_capacity(matrix.size());
        for j in 0..matrix.size() {
            print!(" {:>7.4}", matrix.get(i, j));
            row.push(format!("{:.6}", matrix.get(i, j)));
        }
        println!();
        text.push_str(&row.join("\t"));
        text.push('\n');
    }
    let out = args.common.resolve(&args.out, "overlap.tsv");
    write_text(&out, &text)?;
    println!("matrix: {}", out.display());
    Ok(())
}

fn cmd_stats(args: StatsArgs) -> Result<()> {
    args.common.init();
    let samples = load_corpus(&args.corpus)?;
    let stats = corpus_stats(&samples, args.length_unit)?;
    let unit = match args.length_unit {
        LengthUnit::Chars => "chars",
        LengthUnit::Tokens => "tokens",
    };
    println!("weeks:                 {}", stats.weeks);
    println!("samples:               {}", stats.total_samples);
    println!("samples/week:          {:.2}", stats.samples_per_week);
    println!("avg tags/sample:       {:.3}", stats.avg_tags_per_sample);
    println!("distinct tags/week:    {:.1}", stats.distinct_tags_per_week);
    println!("avg tag length ({unit}):  {:.2}", stats.avg_tag_len);
    println!("avg text length ({unit}): {:.2}", stats.avg_text_len);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argv(parts: &[&str]) -> Vec<String> {
        std::iter::once("tagdrift")
            .chain(parts.iter().copied())
            .map(str::to_string)
            .collect()
    }

    #[test]
    fn config_file_supplies_missing_flags() {
        let dir = tempfile::tempdir().unwrap();
        let config = dir.path().join("run.conf");
        std::fs::write(&config, "weeks=6\nseed=9\nzero-timings=true\n").unwrap();
        let merged = merge_config(argv(&[
            "synth",
            "--config",
            config.to_str().unwrap(),
            "--seed",
            "3",
        ]))
        .unwrap();
        // weeks comes from the file, seed stays from argv, the boolean
        // switch is injected bare.
        assert!(merged.iter().any(|a| a == "--weeks"));
        assert!(merged.iter().any(|a| a == "--zero-timings"));
        let seed_pos = merged.iter().position(|a| a == "--seed").unwrap();
        assert_eq!(merged[seed_pos + 1], "3");
        assert_eq!(merged.iter().filter(|a| *a == "--seed").count(), 1);
    }

    #[test]
    fn config_file_rejects_malformed_lines() {
        let dir = tempfile::tempdir().unwrap();
        let config = dir.path().join("run.conf");
        std::fs::write(&config, "weeks 6\n").unwrap();
        let err = merge_config(argv(&["synth", "--config", config.to_str().unwrap()]));
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn config_false_boolean_is_a_no_op() {
        let dir = tempfile::tempdir().unwrap();
        let config = dir.path().join("run.conf");
        std::fs::write(&config, "zero-timings=false\n").unwrap();
        let merged = merge_config(argv(&["synth", "--config", config.to_str().unwrap()])).unwrap();
        assert!(!merged.iter().any(|a| a == "--zero-timings"));
    }

    #[test]
    fn week_selector_grammar() {
        assert_eq!(
            parse_weeks("1-3,5")
                .unwrap()
                .into_iter()
                .collect::<Vec<_>>(),
            vec![1, 2, 3, 5]
        );
        assert_eq!(parse_weeks(" 2 ").unwrap().len(), 1);
        assert!(parse_weeks("3-1").is_err());
        assert!(parse_weeks("0").is_err());
        assert!(parse_weeks("a").is_err());
        assert!(parse_weeks("1,,2").is_err());
    }

    #[test]
    fn numeric_list_grammar() {
        assert_eq!(parse_usize_list("20, 50,100").unwrap(), vec![20, 50, 100]);
        assert!(parse_usize_list("20,x").is_err());
        assert_eq!(parse_f64_list("0,0.017").unwrap(), vec![0.0, 0.017]);
        assert!(parse_f64_list("0..1").is_err());
    }

    #[test]
    fn synth_is_byte_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.jsonl");
        let b = dir.path().join("b.jsonl");
        for out in [&a, &b] {
            try_run(argv(&[
                "synth",
                "--weeks",
                "2",
                "--tags-per-week",
                "8",
                "--samples-per-week",
                "30",
                "--seed",
                "7",
                "--out",
                out.to_str().unwrap(),
            ]))
            .unwrap();
        }
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn unknown_subcommand_is_a_usage_error() {
        assert!(try_run(argv(&["frobnicate"])).is_err());
        assert_eq!(run(argv(&["frobnicate"])), 2);
    }

    #[test]
    fn runtime_failures_exit_one() {
        assert_eq!(
            run(argv(&["stats", "--corpus", "/nonexistent/corpus.jsonl"])),
            1
        );
    }
}
