//! Nearest-neighbor search over datastore keys: exact flat scan and an
//! inverted-file approximation. Distances are squared L2 throughout (order
//! equivalent to L2, cheaper); ties break toward the lower row id.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::datastore::Datastore;
use crate::error::{Error, Result};

pub const DEFAULT_KMEANS_ITERATIONS: usize = 25;

/// nlist heuristic: ⌈√N⌉, at least 1.
pub fn default_nlist(rows: usize) -> usize {
    (rows as f64).sqrt().ceil().max(1.0) as usize
}

/// nprobe heuristic: nlist/16, at least 1.
pub fn default_nprobe(nlist: usize) -> usize {
    (nlist / 16).max(1)
}

/// One retrieved entry: row id and its true squared L2 distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub row: u32,
    pub distance: f32,
}

/// A neighbor joined with its store entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolvedNeighbor<'a> {
    pub row: u32,
    pub distance: f32,
    pub source_id: &'a str,
    pub tag: &'a str,
}

/// Ordered neighbor list from one search, pinned to a store generation.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    generation: u64,
    neighbors: Vec<Neighbor>,
}

impl SearchResult {
    pub fn new(generation: u64, neighbors: Vec<Neighbor>) -> Self {
        SearchResult {
            generation,
            neighbors,
        }
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn neighbors(&self) -> &[Neighbor] {
        &self.neighbors
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    /// Join neighbors with source ids and decoded tags. Fails if the store
    /// has moved to another generation since the search ran.
    pub fn resolve<'a>(&self, store: &'a Datastore) -> Result<Vec<ResolvedNeighbor<'a>>> {
        if self.generation != store.generation() {
            return Err(Error::StaleGeneration {
                index: self.generation,
                store: store.generation(),
            });
        }
        Ok(self
            .neighbors
            .iter()
            .map(|n| {
                let row = n.row as usize;
                ResolvedNeighbor {
                    row: n.row,
                    distance: n.distance,
                    source_id: &store.meta(row).source_id,
                    tag: store.tag(row),
                }
            })
            .collect())
    }
}

/// Squared L2 distance between two equal-length vectors.
pub fn l2_sq(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0f32;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

/// Max-heap entry ordered by (distance, row) so the worst candidate
/// surfaces; distances are finite by construction.
#[derive(PartialEq)]
struct Cand {
    distance: f32,
    row: u32,
}

impl Eq for Cand {}

impl Ord for Cand {
    fn cmp(&self, other: &Self) -> Ordering {
        self.distance
            .total_cmp(&other.distance)
            .then(self.row.cmp(&other.row))
    }
}

impl PartialOrd for Cand {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Top-k over a set of candidate rows, ascending (distance, row).
fn top_k_rows<I>(store: &Datastore, query: &[f32], k: usize, rows: I) -> Vec<Neighbor>
where
    I: IntoIterator<Item = u32>,
{
    let mut heap: BinaryHeap<Cand> = BinaryHeap::with_capacity(k + 1);
    for row in rows {
        let distance = l2_sq(query, store.key(row as usize));
        let cand = Cand { distance, row };
        if heap.len() < k {
            heap.push(cand);
        } else if let Some(worst) = heap.peek() {
            if cand.cmp(worst) == Ordering::Less {
                heap.pop();
                heap.push(cand);
            }
        }
    }
    let mut out: Vec<Cand> = heap.into_vec();
    out.sort_unstable();
    out.into_iter()
        .map(|c| Neighbor {
            row: c.row,
            distance: c.distance,
        })
        .collect()
}

fn check_query(store: &Datastore, query: &[f32], k: usize) -> Result<()> {
    if k < 1 {
        return Err(Error::InvalidParameter("K must be >= 1".to_string()));
    }
    if query.len() != store.dimension() {
        return Err(Error::DimensionMismatch {
            expected: store.dimension(),
            actual: query.len(),
        });
    }
    Ok(())
}

/// Exact top-k by squared L2 over every row of the store. Independent of
/// any built index so re-rankers can always recompute true distances.
pub fn search_exact(store: &Datastore, query: &[f32], k: usize) -> Result<SearchResult> {
    check_query(store, query, k)?;
    let neighbors = top_k_rows(store, query, k, 0..store.len() as u32);
    Ok(SearchResult::new(store.generation(), neighbors))
}

/// Exact search index; holds nothing but the generation it is valid for.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlatIndex {
    generation: u64,
}

impl FlatIndex {
    pub fn build(store: &Datastore) -> FlatIndex {
        FlatIndex {
            generation: store.generation(),
        }
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn search(&self, store: &Datastore, query: &[f32], k: usize) -> Result<SearchResult> {
        if self.generation != store.generation() {
            return Err(Error::StaleGeneration {
                index: self.generation,
                store: store.generation(),
            });
        }
        search_exact(store, query, k)
    }
}

/// Lloyd k-means over row vectors: seeded distinct-row initialization,
/// parallel assignment, empty clusters re-seeded from the farthest point of
/// the largest cluster. Deterministic given the seed. Returns nlist
/// centroids, row-major.
pub fn kmeans(
    keys: &[f32],
    dimension: usize,
    nlist: usize,
    iterations: usize,
    seed: u64,
) -> Result<Vec<f32>> {
    if dimension < 1 || !keys.len().is_multiple_of(dimension) {
        return Err(Error::InvalidParameter(
            "keys length must be a multiple of dimension".to_string(),
        ));
    }
    if iterations < 1 {
        return Err(Error::InvalidParameter(
            "iterations must be >= 1".to_string(),
        ));
    }
    let rows = keys.len() / dimension;
    if nlist < 1 || nlist > rows {
        return Err(Error::NlistTooLarge { nlist, rows });
    }
    let row = |r: usize| &keys[r * dimension..(r + 1) * dimension];

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut init = rand::seq::index::sample(&mut rng, rows, nlist).into_vec();
    init.sort_unstable();
    let mut centroids: Vec<f32> = Vec::with_capacity(nlist * dimension);
    for &r in &init {
        centroids.extend_from_slice(row(r));
    }

    // Sentinel assignment; real cluster ids are always < nlist.
    let mut assignment: Vec<u32> = vec![u32::MAX; rows];
    for _ in 0..iterations {
        let mut next: Vec<u32> = (0..rows)
            .into_par_iter()
            .map(|r| nearest_centroid(&centroids, dimension, row(r)).0 as u32)
            .collect();

        let mut counts = vec![0usize; nlist];
        for &a in &next {
            counts[a as usize] += 1;
        }
        // Re-seed each empty cluster from the farthest member of the
        // currently largest cluster (ties: lower cluster, lower row).
        while let Some(empty) = counts.iter().position(|&c| c == 0) {
            let largest = counts
                .iter()
                .enumerate()
                .max_by_key(|(i, &c)| (c, usize::MAX - i))
                .map(|(i, _)| i)
                .unwrap();
            let centroid = &centroids[largest * dimension..(largest + 1) * dimension];
            let farthest = next
                .iter()
                .enumerate()
                .filter(|(_, &a)| a as usize == largest)
                .map(|(r, _)| (r, l2_sq(row(r), centroid)))
                .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
                .map(|(r, _)| r)
                .unwrap();
            next[farthest] = empty as u32;
            counts[largest] -= 1;
            counts[empty] += 1;
        }

        // Means in f64, accumulated in row order for determinism.
        let mut sums = vec![0.0f64; nlist * dimension];
        for (r, &a) in next.iter().enumerate() {
            let base = a as usize * dimension;
            for (d, &x) in row(r).iter().enumerate() {
                sums[base + d] += x as f64;
            }
        }
        for c in 0..nlist {
            let count = counts[c] as f64;
            for d in 0..dimension {
                centroids[c * dimension + d] = (sums[c * dimension + d] / count) as f32;
            }
        }
        let converged = next == assignment;
        assignment = next;
        if converged {
            break;
        }
    }
    Ok(centroids)
}

fn nearest_centroid(centroids: &[f32], dimension: usize, point: &[f32]) -> (usize, f32) {
    let mut best = 0usize;
    let mut best_dist = f32::INFINITY;
    for (c, centroid) in centroids.chunks_exact(dimension).enumerate() {
        let d = l2_sq(point, centroid);
        if d < best_dist {
            best = c;
            best_dist = d;
        }
    }
    (best, best_dist)
}

/// Inverted-file index: a coarse k-means quantizer plus one posting list of
/// row ids per centroid. Searches scan only the nprobe nearest lists, with
/// exact distances inside them, so the approximation is purely in candidate
/// selection.
#[derive(Debug, Clone, PartialEq)]
pub struct IvfIndex {
    dimension: usize,
    centroids: Vec<f32>,
    lists: Vec<Vec<u32>>,
    default_nprobe: usize,
    generation: u64,
    /// Seed the quantizer was trained with; not persisted (affects only
    /// rebuilds, never searches).
    seed: u64,
}

impl IvfIndex {
    /// Train the quantizer on the store's keys and assign every row to its
    /// nearest centroid's posting list.
    pub fn build(store: &Datastore, nlist: usize, seed: u64) -> Result<IvfIndex> {
        let dimension = store.dimension();
        let centroids = kmeans(
            store.keys(),
            dimension,
            nlist,
            DEFAULT_KMEANS_ITERATIONS,
            seed,
        )?;
        let assignments: Vec<u32> = (0..store.len())
            .into_par_iter()
            .map(|r| nearest_centroid(&centroids, dimension, store.key(r)).0 as u32)
            .collect();
        let mut lists: Vec<Vec<u32>> = vec![Vec::new(); nlist];
        for (r, &a) in assignments.iter().enumerate() {
            lists[a as usize].push(r as u32);
        }
        Ok(IvfIndex {
            dimension,
            centroids,
            lists,
            default_nprobe: default_nprobe(nlist),
            generation: store.generation(),
            seed,
        })
    }

    pub fn nlist(&self) -> usize {
        self.lists.len()
    }

    pub fn default_nprobe(&self) -> usize {
        self.default_nprobe
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn posting_list(&self, list: usize) -> &[u32] {
        &self.lists[list]
    }

    /// Approximate top-k: rank centroids by distance to the query, take the
    /// nprobe nearest lists, and run exact top-k over their union.
    pub fn search(
        &self,
        store: &Datastore,
        query: &[f32],
        k: usize,
        nprobe: usize,
    ) -> Result<SearchResult> {
        if self.generation != store.generation() {
            return Err(Error::StaleGeneration {
                index: self.generation,
                store: store.generation(),
            });
        }
        check_query(store, query, k)?;
        if nprobe < 1 || nprobe > self.nlist() {
            return Err(Error::InvalidParameter(format!(
                "nprobe must be in 1..={}, got {nprobe}",
                self.nlist()
            )));
        }
        let mut ranked: Vec<(f32, usize)> = self
            .centroids
            .chunks_exact(self.dimension)
            .enumerate()
            .map(|(c, centroid)| (l2_sq(query, centroid), c))
            .collect();
        ranked.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let candidates = ranked[..nprobe]
            .iter()
            .flat_map(|&(_, c)| self.lists[c].iter().copied());
        let neighbors = top_k_rows(store, query, k, candidates);
        Ok(SearchResult::new(store.generation(), neighbors))
    }

    /// Persist to a TIX1 file (little-endian).
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(std::fs::File::create(path)?);
        out.write_all(INDEX_MAGIC)?;
        out.write_all(&(self.nlist() as u32).to_le_bytes())?;
        out.write_all(&(self.dimension as u32).to_le_bytes())?;
        out.write_all(&self.generation.to_le_bytes())?;
        for x in &self.centroids {
            out.write_all(&x.to_le_bytes())?;
        }
        for list in &self.lists {
            out.write_all(&(list.len() as u32).to_le_bytes())?;
            for &r in list {
                out.write_all(&r.to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    /// Load a TIX1 file and verify it against the store: matching
    /// generation and dimension, every row covered exactly once.
    pub fn load(path: &Path, store: &Datastore) -> Result<IvfIndex> {
        let corrupt = |message: &str| Error::CorruptFile {
            path: path.display().to_string(),
            message: message.to_string(),
        };
        let mut reader = BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 4];
        reader
            .read_exact(&mut magic)
            .map_err(|_| corrupt("missing header"))?;
        if &magic != INDEX_MAGIC {
            return Err(corrupt("bad magic, expected TIX1"));
        }
        let nlist = read_u32(&mut reader).map_err(|_| corrupt("missing nlist"))? as usize;
        let dimension = read_u32(&mut reader).map_err(|_| corrupt("missing dimension"))? as usize;
        let generation = read_u64(&mut reader).map_err(|_| corrupt("missing generation"))?;
        if generation != store.generation() {
            return Err(Error::StaleGeneration {
                index: generation,
                store: store.generation(),
            });
        }
        if dimension != store.dimension() {
            return Err(Error::DimensionMismatch {
                expected: store.dimension(),
                actual: dimension,
            });
        }
        if nlist < 1 {
            return Err(corrupt("nlist must be >= 1"));
        }
        let mut centroids = vec![0.0f32; nlist * dimension];
        let mut buf = [0u8; 4];
        for x in centroids.iter_mut() {
            reader
                .read_exact(&mut buf)
                .map_err(|_| corrupt("truncated centroid matrix"))?;
            *x = f32::from_le_bytes(buf);
        }
        let mut lists = Vec::with_capacity(nlist);
        let mut covered = vec![false; store.len()];
        let mut total = 0usize;
        for _ in 0..nlist {
            let len =
                read_u32(&mut reader).map_err(|_| corrupt("truncated posting lists"))? as usize;
            let mut list = Vec::with_capacity(len);
            for _ in 0..len {
                let r = read_u32(&mut reader).map_err(|_| corrupt("truncated posting lists"))?;
                let row = r as usize;
                if row >= store.len() {
                    return Err(corrupt("posting list row out of range"));
                }
                if std::mem::replace(&mut covered[row], true) {
                    return Err(corrupt("row appears in two posting lists"));
                }
                list.push(r);
            }
            total += len;
            lists.push(list);
        }
        if total != store.len() {
            return Err(corrupt("posting lists do not cover the store"));
        }
        Ok(IvfIndex {
            dimension,
            centroids,
            lists,
            default_nprobe: default_nprobe(nlist),
            generation,
            seed: 0,
        })
    }
}

const INDEX_MAGIC: &[u8; 4] = b"TIX1";

fn read_u32<R: Read>(reader: &mut R) -> std::io::Result<u32> {
    let mut buf = [0u8; 4];
    reader.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(reader: &mut R) -> std::io::Result<u64> {
    let mut buf = [0u8; 8];
    reader.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

/// Either search backend behind one dispatch point.
#[derive(Debug, Clone, PartialEq)]
pub enum AnnIndex {
    Flat(FlatIndex),
    Ivf(IvfIndex),
}

impl AnnIndex {
    pub fn generation(&self) -> u64 {
        match self {
            AnnIndex::Flat(i) => i.generation(),
            AnnIndex::Ivf(i) => i.generation(),
        }
    }

    /// Search with k results; nprobe applies to the IVF backend only and
    /// falls back to the index default when absent.
    pub fn search(
        &self,
        store: &Datastore,
        query: &[f32],
        k: usize,
        nprobe: Option<usize>,
    ) -> Result<SearchResult> {
        match self {
            AnnIndex::Flat(i) => i.search(store, query, k),
            AnnIndex::Ivf(i) => i.search(store, query, k, nprobe.unwrap_or(i.default_nprobe())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Sample;
    use rand::Rng;

    /// Store whose rows carry the given key vectors; tags are synthetic.
    fn store_from_keys(keys: Vec<Vec<f32>>) -> Datastore {
        let dimension = keys.first().map(|k| k.len()).unwrap_or(1);
        let samples: Vec<Sample> = (0..keys.len())
            .map(|i| {
                Sample::new(
                    format!("s{i}"),
                    format!("text {i}"),
                    1,
                    vec![format!("tag{i}")],
                )
                .unwrap()
            })
            .collect();
        let keys_ref = &keys;
        Datastore::build(
            &samples,
            |s| {
                let i: usize = s.id[1..].parse().unwrap();
                Ok(keys_ref[i].clone())
            },
            dimension,
            16,
            100_000,
        )
        .unwrap()
    }

    fn random_keys(rng: &mut ChaCha8Rng, n: usize, dimension: usize) -> Vec<Vec<f32>> {
        (0..n)
            .map(|_| (0..dimension).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect()
    }

    /// Brute-force oracle: full sort by (distance, row).
    fn oracle(store: &Datastore, query: &[f32], k: usize) -> Vec<(u32, f32)> {
        let mut all: Vec<(u32, f32)> = (0..store.len())
            .map(|r| (r as u32, l2_sq(query, store.key(r))))
            .collect();
        all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        all.truncate(k);
        all
    }

    #[test]
    fn hand_checked_two_point_store() {
        let store = store_from_keys(vec![vec![0.0, 0.0], vec![3.0, 4.0]]);
        let result = search_exact(&store, &[0.0, 0.0], 2).unwrap();
        let n = result.neighbors();
        assert_eq!(n.len(), 2);
        assert_eq!((n[0].row, n[0].distance), (0, 0.0));
        assert_eq!((n[1].row, n[1].distance), (1, 25.0));
    }

    #[test]
    fn k_larger_than_store_returns_all_sorted() {
        let store = store_from_keys(vec![vec![1.0], vec![5.0], vec![2.0]]);
        let result = search_exact(&store, &[0.0], 10).unwrap();
        let rows: Vec<u32> = result.neighbors().iter().map(|n| n.row).collect();
        assert_eq!(rows, vec![0, 2, 1]);
    }

    #[test]
    fn empty_store_returns_empty() {
        let store = store_from_keys(vec![]);
        let result = search_exact(&store, &[0.0], 5).unwrap();
        assert!(result.is_empty());
    }

    #[test]
    fn single_row_store_always_returns_it() {
        let store = store_from_keys(vec![vec![7.0, 7.0]]);
        for q in [[0.0, 0.0], [100.0, -3.0]] {
            let result = search_exact(&store, &q, 3).unwrap();
            assert_eq!(result.len(), 1);
            assert_eq!(result.neighbors()[0].row, 0);
        }
    }

    #[test]
    fn flat_matches_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let store = store_from_keys(random_keys(&mut rng, 500, 12));
        for _ in 0..25 {
            let query: Vec<f32> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
            for k in [1, 7, 50] {
                let got = search_exact(&store, &query, k).unwrap();
                let want = oracle(&store, &query, k);
                let got: Vec<(u32, f32)> = got
                    .neighbors()
                    .iter()
                    .map(|n| (n.row, n.distance))
                    .collect();
                assert_eq!(got, want);
            }
        }
    }

    #[test]
    fn distances_sorted_nondecreasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let store = store_from_keys(random_keys(&mut rng, 200, 6));
        let query: Vec<f32> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let result = search_exact(&store, &query, 50).unwrap();
        for pair in result.neighbors().windows(2) {
            assert!(pair[0].distance <= pair[1].distance);
            assert!(pair[0].distance >= 0.0);
        }
    }

    #[test]
    fn rejects_zero_k_and_wrong_dimension() {
        let store = store_from_keys(vec![vec![0.0, 0.0]]);
        assert!(matches!(
            search_exact(&store, &[0.0, 0.0], 0),
            Err(Error::InvalidParameter(_))
        ));
        assert!(matches!(
            search_exact(&store, &[0.0], 2),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn flat_index_rejects_stale_generation() {
        let store = store_from_keys(vec![vec![0.0], vec![1.0]]);
        let index = FlatIndex::build(&store);
        let (next, _) = store.delete_samples(&std::collections::HashSet::new());
        assert!(index.search(&store, &[0.0], 1).is_ok());
        assert!(matches!(
            index.search(&next, &[0.0], 1),
            Err(Error::StaleGeneration { .. })
        ));
    }

    #[test]
    fn kmeans_nlist_equals_rows() {
        let keys = vec![0.0f32, 0.0, 10.0, 0.0, 0.0, 10.0, 10.0, 10.0];
        let centroids = kmeans(&keys, 2, 4, 5, 1).unwrap();
        // Every point is its own centroid: within-cluster distance 0.
        for point in keys.chunks_exact(2) {
            let (_, d) = nearest_centroid(&centroids, 2, point);
            assert_eq!(d, 0.0);
        }
    }

    #[test]
    fn kmeans_single_cluster_is_mean() {
        let keys = vec![1.0f32, 2.0, 3.0, 6.0, 5.0, 4.0];
        let centroids = kmeans(&keys, 3, 1, 3, 9).unwrap();
        assert_eq!(centroids.len(), 3);
        let expected = [3.5, 3.5, 3.5];
        for (got, want) in centroids.iter().zip(expected) {
            assert!((got - want).abs() < 1e-6, "got {got}, want {want}");
        }
    }

    #[test]
    fn kmeans_recovers_separated_blobs() {
        let means = [[0.0f32, 0.0], [20.0, 0.0], [0.0, 20.0]];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut keys = Vec::new();
        for mean in &means {
            for _ in 0..200 {
                keys.push(mean[0] + rng.gen_range(-0.3..0.3));
                keys.push(mean[1] + rng.gen_range(-0.3..0.3));
            }
        }
        let centroids = kmeans(&keys, 2, 3, 25, 0).unwrap();
        for mean in &means {
            let closest = centroids
                .chunks_exact(2)
                .map(|c| l2_sq(c, mean).sqrt())
                .fold(f32::INFINITY, f32::min);
            assert!(closest < 0.1, "no centroid within 0.1 of {mean:?}");
        }
    }

    #[test]
    fn kmeans_rejects_nlist_above_rows() {
        let keys = vec![0.0f32; 10];
        assert!(matches!(
            kmeans(&keys, 2, 6, 3, 0),
            Err(Error::NlistTooLarge { nlist: 6, rows: 5 })
        ));
    }

    #[test]
    fn ivf_posting_lists_partition_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let store = store_from_keys(random_keys(&mut rng, 300, 8));
        let index = IvfIndex::build(&store, 12, 4).unwrap();
        let mut seen = vec![false; store.len()];
        for list in 0..index.nlist() {
            for &r in index.posting_list(list) {
                assert!(!seen[r as usize], "row {r} in two lists");
                seen[r as usize] = true;
            }
        }
        assert!(seen.into_iter().all(|s| s));
    }

    #[test]
    fn ivf_single_list_equals_flat() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let store = store_from_keys(random_keys(&mut rng, 150, 6));
        let index = IvfIndex::build(&store, 1, 0).unwrap();
        for _ in 0..10 {
            let query: Vec<f32> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let ivf = index.search(&store, &query, 10, 1).unwrap();
            let flat = search_exact(&store, &query, 10).unwrap();
            assert_eq!(ivf, flat);
        }
    }

    #[test]
    fn ivf_full_probe_equals_flat() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let store = store_from_keys(random_keys(&mut rng, 1000, 8));
        let nlist = default_nlist(store.len());
        let index = IvfIndex::build(&store, nlist, 2).unwrap();
        for _ in 0..50 {
            let query: Vec<f32> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let ivf = index.search(&store, &query, 20, nlist).unwrap();
            let flat = search_exact(&store, &query, 20).unwrap();
            assert_eq!(ivf, flat);
        }
    }

    #[test]
    fn ivf_recall_nondecreasing_in_nprobe() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let store = store_from_keys(random_keys(&mut rng, 2000, 8));
        let nlist = default_nlist(store.len());
        let index = IvfIndex::build(&store, nlist, 2).unwrap();
        let queries: Vec<Vec<f32>> = (0..40)
            .map(|_| (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let mut last = 0.0f64;
        for nprobe in [1, (nlist / 16).max(1), (nlist / 4).max(1), nlist] {
            let mut hits = 0usize;
            let mut total = 0usize;
            for query in &queries {
                let exact: std::collections::HashSet<u32> = search_exact(&store, query, 10)
                    .unwrap()
                    .neighbors()
                    .iter()
                    .map(|n| n.row)
                    .collect();
                let approx = index.search(&store, query, 10, nprobe).unwrap();
                hits += approx
                    .neighbors()
                    .iter()
                    .filter(|n| exact.contains(&n.row))
                    .count();
                total += exact.len();
            }
            let recall = hits as f64 / total as f64;
            assert!(
                recall >= last - 1e-9,
                "recall {recall} dropped below {last} at nprobe {nprobe}"
            );
            last = recall;
        }
        assert!((last - 1.0).abs() < 1e-9, "full probe recall must be 1.0");
    }

    #[test]
    fn ivf_rejects_bad_nprobe() {
        let store = store_from_keys(vec![vec![0.0], vec![1.0], vec![2.0]]);
        let index = IvfIndex::build(&store, 2, 0).unwrap();
        assert!(index.search(&store, &[0.0], 1, 0).is_err());
        assert!(index.search(&store, &[0.0], 1, 3).is_err());
    }

    #[test]
    fn tix1_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let store = store_from_keys(random_keys(&mut rng, 200, 4));
        let index = IvfIndex::build(&store, 9, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.tix1");
        index.save(&path).unwrap();
        let back = IvfIndex::load(&path, &store).unwrap();
        // The seed is not persisted; everything else must match.
        assert_eq!(back.centroids, index.centroids);
        assert_eq!(back.lists, index.lists);
        assert_eq!(back.generation(), index.generation());
        let query: Vec<f32> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        assert_eq!(
            back.search(&store, &query, 5, 9).unwrap(),
            index.search(&store, &query, 5, 9).unwrap()
        );
    }

    #[test]
    fn tix1_load_rejects_stale_generation() {
        let store = store_from_keys(vec![vec![0.0], vec![1.0]]);
        let index = IvfIndex::build(&store, 2, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.tix1");
        index.save(&path).unwrap();
        let (next, _) = store.delete_samples(&std::collections::HashSet::new());
        assert!(matches!(
            IvfIndex::load(&path, &next),
            Err(Error::StaleGeneration { .. })
        ));
    }

    #[test]
    fn resolve_rejects_stale_generation() {
        let store = store_from_keys(vec![vec![0.0], vec![1.0]]);
        let result = search_exact(&store, &[0.0], 2).unwrap();
        assert_eq!(result.resolve(&store).unwrap()[0].tag, "tag0");
        let (next, _) = store.delete_samples(&std::collections::HashSet::new());
        assert!(matches!(
            result.resolve(&next),
            Err(Error::StaleGeneration { .. })
        ));
    }
}
