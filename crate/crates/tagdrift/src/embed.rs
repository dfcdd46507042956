//! Text-to-vector mapping. The built-in embedder is signed feature hashing
//! over character n-grams; precomputed vectors can be imported instead, so
//! the rest of the system never cares where keys come from.

use std::collections::HashMap;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::hash::{fnv1a64, FNV_PRIME};

/// Seed mixed into every n-gram hash; "tagdrift" in ASCII. Changing it
/// changes every embedding, so it is part of the on-disk compatibility
/// contract.
pub const EMBED_SEED: u64 = 0x7461676472696674;

/// Parameters of the hashed n-gram embedder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmbeddingSpec {
    pub dimension: usize,
    /// Inclusive range of character n-gram lengths.
    pub ngram_range: (usize, usize),
    /// L2-normalize nonzero vectors.
    pub normalize: bool,
}

impl Default for EmbeddingSpec {
    fn default() -> Self {
        EmbeddingSpec {
            dimension: 1024,
            ngram_range: (2, 4),
            normalize: true,
        }
    }
}

impl EmbeddingSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dimension < 1 {
            return Err(Error::InvalidParameter(
                "embedding dimension must be >= 1".to_string(),
            ));
        }
        let (lo, hi) = self.ngram_range;
        if lo < 1 || hi < lo {
            return Err(Error::InvalidParameter(format!(
                "invalid n-gram range ({lo}, {hi})"
            )));
        }
        Ok(())
    }
}

/// Embed text by signed feature hashing: every character n-gram hashes
/// (seeded FNV-1a) to a bucket `h % dimension` with sign taken from the top
/// hash bit, and the vector is L2-normalized unless it is all zeros.
/// Depends only on the text and spec.
pub fn embed_text(text: &str, spec: &EmbeddingSpec) -> Vec<f32> {
    let mut v = vec![0.0f32; spec.dimension];
    let chars: Vec<char> = text.chars().collect();
    let (lo, hi) = spec.ngram_range;
    let mut buf = [0u8; 4];
    for n in lo..=hi {
        if chars.len() < n {
            break;
        }
        for window in chars.windows(n) {
            let mut h = seeded_state();
            for &c in window {
                let bytes = c.encode_utf8(&mut buf).as_bytes();
                for &b in bytes {
                    h ^= b as u64;
                    h = h.wrapping_mul(FNV_PRIME);
                }
            }
            let bucket = (h % spec.dimension as u64) as usize;
            v[bucket] += if h >> 63 == 0 { 1.0 } else { -1.0 };
        }
    }
    if spec.normalize {
        let norm = v
            .iter()
            .map(|x| (*x as f64) * (*x as f64))
            .sum::<f64>()
            .sqrt();
        if norm > 0.0 {
            for x in &mut v {
                *x = (*x as f64 / norm) as f32;
            }
        }
    }
    v
}

/// FNV-1a state after absorbing the seed's little-endian bytes.
fn seeded_state() -> u64 {
    fnv1a64(&EMBED_SEED.to_le_bytes())
}

/// Precomputed vectors keyed by sample id, all of one dimension.
#[derive(Debug, Clone)]
pub struct VectorTable {
    dimension: usize,
    ids: Vec<String>,
    data: Vec<f32>,
    index: HashMap<String, usize>,
}

impl VectorTable {
    pub fn new(dimension: usize) -> Result<Self> {
        if dimension < 1 {
            return Err(Error::InvalidParameter(
                "vector dimension must be >= 1".to_string(),
            ));
        }
        Ok(VectorTable {
            dimension,
            ids: Vec::new(),
            data: Vec::new(),
            index: HashMap::new(),
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn push(&mut self, id: String, vector: &[f32]) -> Result<()> {
        if vector.len() != self.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.dimension,
                actual: vector.len(),
            });
        }
        if vector.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteVector(id));
        }
        if self.index.contains_key(&id) {
            return Err(Error::DuplicateId(id));
        }
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.data.extend_from_slice(vector);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.index
            .get(id)
            .map(|&i| &self.data[i * self.dimension..(i + 1) * self.dimension])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.ids.iter().enumerate().map(move |(i, id)| {
            (
                id.as_str(),
                &self.data[i * self.dimension..(i + 1) * self.dimension],
            )
        })
    }
}

const VECTOR_MAGIC: &[u8; 4] = b"TSV1";

/// Write a vector table: magic "TSV1", row count, dimension, then per row a
/// length-prefixed id and the raw little-endian f32s.
pub fn export_vectors(table: &VectorTable, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    out.write_all(VECTOR_MAGIC)?;
    out.write_all(&(table.len() as u32).to_le_bytes())?;
    out.write_all(&(table.dimension() as u32).to_le_bytes())?;
    for (id, vector) in table.iter() {
        let id_bytes = id.as_bytes();
        if id_bytes.len() > u16::MAX as usize {
            return Err(Error::InvalidParameter(format!(
                "id too long for vector file: {} bytes",
                id_bytes.len()
            )));
        }
        out.write_all(&(id_bytes.len() as u16).to_le_bytes())?;
        out.write_all(id_bytes)?;
        for x in vector {
            out.write_all(&x.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Read a vector table written by `export_vectors`, verifying the magic,
/// row count, expected dimension, id uniqueness and value finiteness.
pub fn import_vectors(path: &Path, expected_dimension: usize) -> Result<VectorTable> {
    let mut reader = BufReader::new(std::fs::File::open(path)?);
    let corrupt = |message: &str| Error::CorruptFile {
        path: path.display().to_string(),
        message: message.to_string(),
    };
    let mut magic = [0u8; 4];
    reader
        .read_exact(&mut magic)
        .map_err(|_| corrupt("missing header"))?;
    if &magic != VECTOR_MAGIC {
        return Err(corrupt("bad magic, expected TSV1"));
    }
    let rows = read_u32(&mut reader).map_err(|_| corrupt("missing row count"))? as usize;
    let dimension = read_u32(&mut reader).map_err(|_| corrupt("missing dimension"))? as usize;
    if dimension < 1 {
        return Err(corrupt("dimension must be >= 1"));
    }
    if dimension != expected_dimension {
        return Err(Error::DimensionMismatch {
            expected: expected_dimension,
            actual: dimension,
        });
    }
    let mut table = VectorTable::new(dimension)?;
    let mut vector = vec![0.0f32; dimension];
    for row in 0..rows {
        let truncated = || Error::Truncated {
            path: path.display().to_string(),
            expected: rows as u64,
            actual: row as u64,
            unit: "records",
        };
        let id_len = read_u16(&mut reader).map_err(|_| truncated())? as usize;
        let mut id_bytes = vec![0u8; id_len];
        reader.read_exact(&mut id_bytes).map_err(|_| truncated())?;
        let id = String::from_utf8(id_bytes).map_err(|_| corrupt("id is not UTF-8"))?;
        let mut buf = [0u8; 4];
        for x in vector.iter_mut() {
            reader.read_exact(&mut buf).map_err(|_| truncated())?;
            *x = f32::from_le_bytes(buf);
        }
        table.push(id, &vector)?;
    }
    Ok(table)
}

fn read_u32<R: Read>(reader: &mut R) -> std::io::Result<u32> {
    let mut buf = [0u8; 4];
    reader.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u16<R: Read>(reader: &mut R) -> std::io::Result<u16> {
    let mut buf = [0u8; 2];
    reader.read_exact(&mut buf)?;
    Ok(u16::from_le_bytes(buf))
}

/// Where a sample's key vector comes from.
#[derive(Debug, Clone)]
pub enum TextEmbedder {
    HashedNgram(EmbeddingSpec),
    Imported(VectorTable),
}

impl TextEmbedder {
    pub fn hashed(spec: EmbeddingSpec) -> Result<Self> {
        spec.validate()?;
        Ok(TextEmbedder::HashedNgram(spec))
    }

    pub fn imported(table: VectorTable) -> Self {
        TextEmbedder::Imported(table)
    }

    pub fn dimension(&self) -> usize {
        match self {
            TextEmbedder::HashedNgram(spec) => spec.dimension,
            TextEmbedder::Imported(table) => table.dimension(),
        }
    }

    /// Key vector for a sample: hashed from its text, or looked up by id.
    pub fn embed(&self, id: &str, text: &str) -> Result<Vec<f32>> {
        match self {
            TextEmbedder::HashedNgram(spec) => Ok(embed_text(text, spec)),
            TextEmbedder::Imported(table) => table
                .get(id)
                .map(<[f32]>::to_vec)
                .ok_or_else(|| Error::MissingEmbedding(id.to_string())),
        }
    }
}
