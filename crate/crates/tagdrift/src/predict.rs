//! Turn a raw neighbor list into a ranked list of R unique tags. Three
//! re-ranking strategies plus the query-independent frequency baseline.

use crate::corpus::Sample;
use crate::datastore::Datastore;
use crate::embed::TextEmbedder;
use crate::error::{Error, Result};
use crate::index::{l2_sq, AnnIndex, ResolvedNeighbor, SearchResult};

/// How the K retrieved neighbors become R output tags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RerankMethod {
    /// Keep retrieval order, emit each tag on first occurrence.
    DefaultDistance,
    /// Re-sort neighbors by recomputed exact distance, then dedup-scan.
    ActualDistance,
    /// Rank tags by occurrence count among the neighbors.
    FrequencyBased,
}

impl RerankMethod {
    pub const ALL: [RerankMethod; 3] = [
        RerankMethod::DefaultDistance,
        RerankMethod::ActualDistance,
        RerankMethod::FrequencyBased,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            RerankMethod::DefaultDistance => "default-distance",
            RerankMethod::ActualDistance => "actual-distance",
            RerankMethod::FrequencyBased => "frequency",
        }
    }
}

impl std::str::FromStr for RerankMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "default-distance" => Ok(RerankMethod::DefaultDistance),
            "actual-distance" => Ok(RerankMethod::ActualDistance),
            "frequency" => Ok(RerankMethod::FrequencyBased),
            other => Err(Error::InvalidParameter(format!(
                "unknown rerank method: {other} (expected default-distance, actual-distance or frequency)"
            ))),
        }
    }
}

/// Retrieval depth K, output size R, re-ranking method and (for IVF) probe
/// count. K must cover R.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryParams {
    pub k: usize,
    pub r: usize,
    pub method: RerankMethod,
    /// IVF probe count; None uses the index default.
    pub nprobe: Option<usize>,
}

impl Default for QueryParams {
    fn default() -> Self {
        QueryParams {
            k: 50,
            r: 5,
            method: RerankMethod::FrequencyBased,
            nprobe: None,
        }
    }
}

impl QueryParams {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 || self.r < 1 {
            return Err(Error::InvalidParameter("K and R must be >= 1".to_string()));
        }
        if self.k < self.r {
            return Err(Error::InvalidParameter(format!(
                "K ({}) must be >= R ({})",
                self.k, self.r
            )));
        }
        Ok(())
    }
}

/// One output tag with its ranking score: a squared distance for the
/// distance methods, an occurrence count for the frequency method.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictedTag {
    pub tag: String,
    pub score: f64,
}

/// Ranked list of at most R pairwise-distinct tags; shorter only when the
/// neighbors carry fewer distinct tags.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Prediction {
    items: Vec<PredictedTag>,
}

impl Prediction {
    pub fn items(&self) -> &[PredictedTag] {
        &self.items
    }

    pub fn tags(&self) -> impl Iterator<Item = &str> {
        self.items.iter().map(|t| t.tag.as_str())
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn contains(&self, tag: &str) -> bool {
        self.items.iter().any(|t| t.tag == tag)
    }

    #[cfg(test)]
    pub(crate) fn push_for_test(&mut self, item: PredictedTag) {
        self.items.push(item);
    }
}

/// Method 1: scan neighbors nearest to furthest, emit each distinct tag at
/// its first occurrence, stop at R.
pub fn rerank_default(neighbors: &[ResolvedNeighbor<'_>], r: usize) -> Prediction {
    let mut items: Vec<PredictedTag> = Vec::with_capacity(r);
    for n in neighbors {
        if items.len() == r {
            break;
        }
        if !items.iter().any(|t| t.tag == n.tag) {
            items.push(PredictedTag {
                tag: n.tag.to_string(),
                score: n.distance as f64,
            });
        }
    }
    Prediction { items }
}

/// Method 2 on an already-resolved neighbor list: recompute the exact
/// squared L2 against each stored key, re-sort ascending (ties by row),
/// then dedup-scan.
pub fn rerank_actual_resolved(
    query: &[f32],
    neighbors: &[ResolvedNeighbor<'_>],
    store: &Datastore,
    r: usize,
) -> Prediction {
    let mut resorted = neighbors.to_vec();
    for n in resorted.iter_mut() {
        n.distance = l2_sq(query, store.key(n.row as usize));
    }
    resorted.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.row.cmp(&b.row)));
    rerank_default(&resorted, r)
}

/// Method 2: recompute the exact squared L2 between the query and every
/// neighbor's stored key, re-sort ascending (ties by row), then dedup-scan.
pub fn rerank_actual(
    query: &[f32],
    result: &SearchResult,
    store: &Datastore,
    r: usize,
) -> Result<Prediction> {
    let resolved = result.resolve(store)?;
    Ok(rerank_actual_resolved(query, &resolved, store, r))
}

/// Method 3: count occurrences of each distinct tag among the neighbors and
/// rank by count descending; ties go to the smaller minimum distance, then
/// lexicographic.
pub fn rerank_frequency(neighbors: &[ResolvedNeighbor<'_>], r: usize) -> Prediction {
    let mut stats: std::collections::HashMap<&str, (usize, f32)> = std::collections::HashMap::new();
    for n in neighbors {
        let entry = stats.entry(n.tag).or_insert((0, f32::INFINITY));
        entry.0 += 1;
        if n.distance < entry.1 {
            entry.1 = n.distance;
        }
    }
    let mut ranked: Vec<(&str, (usize, f32))> = stats.into_iter().collect();
    ranked.sort_by(|a, b| {
        b.1 .0
            .cmp(&a.1 .0)
            .then(a.1 .1.total_cmp(&b.1 .1))
            .then(a.0.cmp(b.0))
    });
    Prediction {
        items: ranked
            .into_iter()
            .take(r)
            .map(|(tag, (count, _))| PredictedTag {
                tag: tag.to_string(),
                score: count as f64,
            })
            .collect(),
    }
}

/// Full pipeline for a pre-embedded query: search, then rerank per params.
pub fn predict_vector(
    query: &[f32],
    store: &Datastore,
    index: &AnnIndex,
    params: &QueryParams,
) -> Result<Prediction> {
    params.validate()?;
    let result = index.search(store, query, params.k, params.nprobe)?;
    match params.method {
        RerankMethod::DefaultDistance => Ok(rerank_default(&result.resolve(store)?, params.r)),
        RerankMethod::ActualDistance => rerank_actual(query, &result, store, params.r),
        RerankMethod::FrequencyBased => Ok(rerank_frequency(&result.resolve(store)?, params.r)),
    }
}

/// Embed a text (by id for imported vectors) and predict its tags.
pub fn predict(
    id: &str,
    text: &str,
    store: &Datastore,
    index: &AnnIndex,
    embedder: &TextEmbedder,
    params: &QueryParams,
) -> Result<Prediction> {
    let query = embedder.embed(id, text)?;
    predict_vector(&query, store, index, params)
}

/// Query-independent baseline: the R globally most frequent training tags
/// (one count per (sample, tag) pair), ties lexicographic.
pub fn frequency_baseline<'a, I>(train_samples: I, r: usize) -> Result<Prediction>
where
    I: IntoIterator<Item = &'a Sample>,
{
    if r < 1 {
        return Err(Error::InvalidParameter("R must be >= 1".to_string()));
    }
    let mut counts: std::collections::HashMap<&str, usize> = std::collections::HashMap::new();
    let mut any = false;
    for sample in train_samples {
        any = true;
        for tag in &sample.tags {
            *counts.entry(tag.as_str()).or_insert(0) += 1;
        }
    }
    if !any {
        return Err(Error::EmptyCorpus);
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    Ok(Prediction {
        items: ranked
            .into_iter()
            .take(r)
            .map(|(tag, count)| PredictedTag {
                tag: tag.to_string(),
                score: count as f64,
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::{embed_text, EmbeddingSpec};
    use crate::index::{search_exact, FlatIndex, Neighbor};

    fn neighbors<'a>(spec: &[(u32, f32, &'a str)]) -> Vec<ResolvedNeighbor<'a>> {
        spec.iter()
            .map(|&(row, distance, tag)| ResolvedNeighbor {
                row,
                distance,
                source_id: "src",
                tag,
            })
            .collect()
    }

    #[test]
    fn default_dedups_in_order() {
        let ns = neighbors(&[(0, 0.1, "a"), (1, 0.2, "a"), (2, 0.3, "b"), (3, 0.4, "c")]);
        let p = rerank_default(&ns, 2);
        assert_eq!(p.tags().collect::<Vec<_>>(), vec!["a", "b"]);
    }

    #[test]
    fn default_r1_takes_nearest() {
        let ns = neighbors(&[(0, 0.1, "a"), (1, 0.2, "b")]);
        let p = rerank_default(&ns, 1);
        assert_eq!(p.tags().collect::<Vec<_>>(), vec!["a"]);
    }

    #[test]
    fn default_collapses_identical_tags() {
        let ns = neighbors(&[(0, 0.1, "t"), (1, 0.2, "t"), (2, 0.3, "t")]);
        let p = rerank_default(&ns, 5);
        assert_eq!(p.len(), 1);
        assert_eq!(p.items()[0].tag, "t");
    }

    #[test]
    fn frequency_counts_then_distance_ties() {
        // a twice; b and c once each, b nearer.
        let ns = neighbors(&[(0, 0.1, "a"), (1, 0.2, "a"), (2, 0.3, "b"), (3, 0.4, "c")]);
        let p = rerank_frequency(&ns, 2);
        assert_eq!(p.tags().collect::<Vec<_>>(), vec!["a", "b"]);
        assert_eq!(p.items()[0].score, 2.0);
    }

    #[test]
    fn frequency_all_distinct_is_distance_order() {
        let ns = neighbors(&[(0, 0.1, "x"), (1, 0.2, "y"), (2, 0.3, "z")]);
        let p = rerank_frequency(&ns, 3);
        assert_eq!(p.tags().collect::<Vec<_>>(), vec!["x", "y", "z"]);
    }

    #[test]
    fn frequency_breaks_full_ties_lexicographically() {
        let ns = neighbors(&[(0, 0.5, "zz"), (1, 0.5, "aa")]);
        let p = rerank_frequency(&ns, 2);
        assert_eq!(p.tags().collect::<Vec<_>>(), vec!["aa", "zz"]);
    }

    #[test]
    fn frequency_equals_default_at_k1() {
        let ns = neighbors(&[(4, 0.7, "only")]);
        assert_eq!(
            rerank_frequency(&ns, 3).tags().collect::<Vec<_>>(),
            rerank_default(&ns, 3).tags().collect::<Vec<_>>()
        );
    }

    fn tiny_store(texts_tags: &[(&str, &str)]) -> (Datastore, EmbeddingSpec) {
        let spec = EmbeddingSpec {
            dimension: 64,
            ..EmbeddingSpec::default()
        };
        let samples: Vec<Sample> = texts_tags
            .iter()
            .enumerate()
            .map(|(i, (text, tag))| {
                Sample::new(format!("s{i}"), text.to_string(), 1, vec![tag.to_string()]).unwrap()
            })
            .collect();
        let store = Datastore::build(
            &samples,
            |s| Ok(embed_text(&s.text, &spec)),
            64,
            32,
            500_000,
        )
        .unwrap();
        (store, spec)
    }

    #[test]
    fn actual_equals_default_after_exact_search() {
        let (store, spec) = tiny_store(&[
            ("alpha beta gamma", "t1"),
            ("delta epsilon zeta", "t2"),
            ("eta theta iota", "t3"),
        ]);
        let query = embed_text("alpha beta gamma delta", &spec);
        let result = search_exact(&store, &query, 3).unwrap();
        let default = rerank_default(&result.resolve(&store).unwrap(), 2);
        let actual = rerank_actual(&query, &result, &store, 2).unwrap();
        assert_eq!(
            default.tags().collect::<Vec<_>>(),
            actual.tags().collect::<Vec<_>>()
        );
    }

    #[test]
    fn actual_sorts_unordered_neighbors() {
        let (store, spec) = tiny_store(&[
            ("alpha beta gamma", "t1"),
            ("delta epsilon zeta", "t2"),
            ("eta theta iota", "t3"),
        ]);
        let query = embed_text("eta theta iota", &spec);
        let exact = search_exact(&store, &query, 3).unwrap();
        // Reverse the exact result to mimic an unordered approximate list.
        let mut shuffled: Vec<Neighbor> = exact.neighbors().to_vec();
        shuffled.reverse();
        let unordered = SearchResult::new(store.generation(), shuffled);
        let p = rerank_actual(&query, &unordered, &store, 3).unwrap();
        let want = rerank_default(&exact.resolve(&store).unwrap(), 3);
        assert_eq!(
            p.tags().collect::<Vec<_>>(),
            want.tags().collect::<Vec<_>>()
        );
        assert_eq!(p.items()[0].tag, "t3");
    }

    #[test]
    fn actual_single_neighbor() {
        let (store, spec) = tiny_store(&[("solo text here", "only")]);
        let query = embed_text("solo text here", &spec);
        let result = search_exact(&store, &query, 1).unwrap();
        let p = rerank_actual(&query, &result, &store, 5).unwrap();
        assert_eq!(p.tags().collect::<Vec<_>>(), vec!["only"]);
    }

    #[test]
    fn predict_self_match() {
        let (store, spec) = tiny_store(&[("hello", "x")]);
        let index = AnnIndex::Flat(FlatIndex::build(&store));
        let embedder = TextEmbedder::hashed(spec).unwrap();
        let p = predict(
            "q",
            "hello",
            &store,
            &index,
            &embedder,
            &QueryParams::default(),
        )
        .unwrap();
        assert_eq!(p.tags().collect::<Vec<_>>(), vec!["x"]);
        assert_eq!(p.items()[0].score, 1.0);
    }

    #[test]
    fn predict_on_empty_store_is_empty() {
        let (store, spec) = tiny_store(&[]);
        let index = AnnIndex::Flat(FlatIndex::build(&store));
        let embedder = TextEmbedder::hashed(spec).unwrap();
        let p = predict(
            "q",
            "anything",
            &store,
            &index,
            &embedder,
            &QueryParams::default(),
        )
        .unwrap();
        assert!(p.is_empty());
    }

    #[test]
    fn params_enforce_k_at_least_r() {
        let params = QueryParams {
            k: 3,
            r: 5,
            ..QueryParams::default()
        };
        assert!(matches!(params.validate(), Err(Error::InvalidParameter(_))));
        assert!(QueryParams::default().validate().is_ok());
    }

    #[test]
    fn baseline_picks_most_frequent() {
        let samples = vec![
            Sample::new("1".into(), "t".into(), 1, vec!["a".into(), "b".into()]).unwrap(),
            Sample::new("2".into(), "t".into(), 1, vec!["a".into()]).unwrap(),
            Sample::new("3".into(), "t".into(), 1, vec!["a".into()]).unwrap(),
        ];
        let p = frequency_baseline(&samples, 1).unwrap();
        assert_eq!(p.tags().collect::<Vec<_>>(), vec!["a"]);
        assert_eq!(p.items()[0].score, 3.0);
    }

    #[test]
    fn baseline_r_beyond_distinct_returns_all() {
        let samples =
            vec![Sample::new("1".into(), "t".into(), 1, vec!["a".into(), "b".into()]).unwrap()];
        let p = frequency_baseline(&samples, 10).unwrap();
        assert_eq!(p.len(), 2);
    }

    #[test]
    fn baseline_rejects_empty_training_set() {
        assert!(matches!(
            frequency_baseline(&[], 5),
            Err(Error::EmptyCorpus)
        ));
    }

    #[test]
    fn prediction_prefix_property() {
        let ns = neighbors(&[
            (0, 0.1, "a"),
            (1, 0.15, "b"),
            (2, 0.2, "a"),
            (3, 0.3, "c"),
            (4, 0.4, "d"),
            (5, 0.5, "b"),
        ]);
        for r in 1..5 {
            let smaller: Vec<_> = rerank_default(&ns, r).tags().map(str::to_owned).collect();
            let larger: Vec<_> = rerank_default(&ns, r + 1)
                .tags()
                .map(str::to_owned)
                .collect();
            assert_eq!(smaller[..], larger[..smaller.len()]);
            let smaller: Vec<_> = rerank_frequency(&ns, r).tags().map(str::to_owned).collect();
            let larger: Vec<_> = rerank_frequency(&ns, r + 1)
                .tags()
                .map(str::to_owned)
                .collect();
            assert_eq!(smaller[..], larger[..smaller.len()]);
        }
    }
}
