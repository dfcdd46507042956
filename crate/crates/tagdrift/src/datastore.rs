//! The unrolled key-value store: one entry per (sample, tag) pair, keys as
//! an N×E float32 matrix and values as an N×V u16 tag encoding. Stores are
//! immutable once built; deletion compacts into a new store with a bumped
//! generation, and a handle swaps generations under concurrent readers.

use std::collections::HashSet;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::{Arc, RwLock};

use crate::corpus::Sample;
use crate::error::{Error, Result};

/// Value width upper bound: a text is at most 280 characters, so any of its
/// tags fits in 280 bytes.
pub const DEFAULT_VALUE_WIDTH: usize = 280;

/// Entries are appended in batches of at most this many keys.
pub const DEFAULT_BATCH_SIZE: usize = 500_000;

/// Per-entry provenance: the contributing sample and its week.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntryMeta {
    pub source_id: String,
    pub week: u32,
}

/// Encode a tag into V u16 slots: UTF-8 bytes one per slot, zero-padded.
pub fn encode_tag(tag: &str, width: usize) -> Result<Vec<u16>> {
    if tag.is_empty() {
        return Err(Error::InvalidTagEncoding("tag is empty".to_string()));
    }
    let bytes = tag.as_bytes();
    if bytes.len() > width {
        return Err(Error::TagTooLong {
            tag: tag.to_string(),
            len: bytes.len(),
            width,
        });
    }
    if bytes.contains(&0) {
        return Err(Error::InvalidTagEncoding(
            "tag contains a NUL byte".to_string(),
        ));
    }
    let mut row = vec![0u16; width];
    for (slot, &b) in row.iter_mut().zip(bytes) {
        *slot = b as u16;
    }
    Ok(row)
}

/// Decode a value row: UTF-8 bytes up to the first zero slot. Rejects empty
/// rows, content after padding, slots that are not bytes, and invalid UTF-8.
pub fn decode_tag(row: &[u16]) -> Result<String> {
    let content_len = row.iter().position(|&s| s == 0).unwrap_or(row.len());
    if content_len == 0 {
        return Err(Error::InvalidTagEncoding("all-zero value row".to_string()));
    }
    if row[content_len..].iter().any(|&s| s != 0) {
        return Err(Error::InvalidTagEncoding(
            "content after zero padding".to_string(),
        ));
    }
    let mut bytes = Vec::with_capacity(content_len);
    for &slot in &row[..content_len] {
        if slot > u8::MAX as u16 {
            return Err(Error::InvalidTagEncoding(format!(
                "slot value {slot} is not a byte"
            )));
        }
        bytes.push(slot as u8);
    }
    String::from_utf8(bytes).map_err(|e| Error::InvalidTagEncoding(e.to_string()))
}

/// Report from a deletion pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeleteReport {
    /// Ids asked for, present or not.
    pub requested: usize,
    /// Ids that actually had entries in the store.
    pub matched_sources: usize,
    pub removed_entries: usize,
    pub remaining_entries: usize,
}

/// Immutable unrolled datastore for one generation.
#[derive(Debug, Clone, PartialEq)]
pub struct Datastore {
    dimension: usize,
    value_width: usize,
    keys: Vec<f32>,
    values: Vec<u16>,
    meta: Vec<EntryMeta>,
    generation: u64,
    /// Decoded copy of `values`, rebuilt on load; never persisted.
    tags: Vec<String>,
}

impl Datastore {
    /// Build a store from samples: each sample contributes one entry per
    /// tag, all sharing the sample's key vector, appended in input order in
    /// batches of at most `batch_size` keys.
    pub fn build<'a, I, F>(
        samples: I,
        mut embed: F,
        dimension: usize,
        value_width: usize,
        batch_size: usize,
    ) -> Result<Datastore>
    where
        I: IntoIterator<Item = &'a Sample>,
        F: FnMut(&Sample) -> Result<Vec<f32>>,
    {
        if dimension < 1 || value_width < 1 || batch_size < 1 {
            return Err(Error::InvalidParameter(
                "dimension, value_width and batch_size must be >= 1".to_string(),
            ));
        }
        let mut store = Datastore {
            dimension,
            value_width,
            keys: Vec::new(),
            values: Vec::new(),
            meta: Vec::new(),
            generation: 1,
            tags: Vec::new(),
        };
        // One pending batch of unrolled entries, flushed at the size cap.
        let mut batch: Vec<(Vec<f32>, String, EntryMeta)> = Vec::new();
        for sample in samples {
            let key = embed(sample)?;
            if key.len() != dimension {
                return Err(Error::DimensionMismatch {
                    expected: dimension,
                    actual: key.len(),
                });
            }
            for tag in &sample.tags {
                // Validate the encoding up front so a flush cannot fail.
                encode_tag(tag, value_width)?;
                batch.push((
                    key.clone(),
                    tag.clone(),
                    EntryMeta {
                        source_id: sample.id.clone(),
                        week: sample.week,
                    },
                ));
                if batch.len() == batch_size {
                    store.flush_batch(&mut batch)?;
                }
            }
        }
        store.flush_batch(&mut batch)?;
        Ok(store)
    }

    fn flush_batch(&mut self, batch: &mut Vec<(Vec<f32>, String, EntryMeta)>) -> Result<()> {
        self.keys.reserve(batch.len() * self.dimension);
        self.values.reserve(batch.len() * self.value_width);
        self.meta.reserve(batch.len());
        self.tags.reserve(batch.len());
        for (key, tag, meta) in batch.drain(..) {
            self.keys.extend_from_slice(&key);
            self.values
                .extend_from_slice(&encode_tag(&tag, self.value_width)?);
            self.meta.push(meta);
            self.tags.push(tag);
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.meta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn value_width(&self) -> usize {
        self.value_width
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    /// Key vector of one entry row.
    pub fn key(&self, row: usize) -> &[f32] {
        &self.keys[row * self.dimension..(row + 1) * self.dimension]
    }

    /// All keys, row-major.
    pub fn keys(&self) -> &[f32] {
        &self.keys
    }

    /// Encoded value row.
    pub fn value(&self, row: usize) -> &[u16] {
        &self.values[row * self.value_width..(row + 1) * self.value_width]
    }

    /// Decoded tag of one entry row.
    pub fn tag(&self, row: usize) -> &str {
        &self.tags[row]
    }

    pub fn meta(&self, row: usize) -> &EntryMeta {
        &self.meta[row]
    }

    /// Remove every entry whose source sample is in `ids` and compact the
    /// survivors into a new store with the next generation. Unknown ids are
    /// no-ops; the generation advances even for an empty deletion.
    pub fn delete_samples(&self, ids: &HashSet<String>) -> (Datastore, DeleteReport) {
        let mut matched: HashSet<&str> = HashSet::new();
        let mut keep_rows = Vec::with_capacity(self.len());
        for (row, meta) in self.meta.iter().enumerate() {
            if ids.contains(&meta.source_id) {
                matched.insert(meta.source_id.as_str());
            } else {
                keep_rows.push(row);
            }
        }
        let mut next = Datastore {
            dimension: self.dimension,
            value_width: self.value_width,
            keys: Vec::with_capacity(keep_rows.len() * self.dimension),
            values: Vec::with_capacity(keep_rows.len() * self.value_width),
            meta: Vec::with_capacity(keep_rows.len()),
            generation: self.generation + 1,
            tags: Vec::with_capacity(keep_rows.len()),
        };
        for &row in &keep_rows {
            next.keys.extend_from_slice(self.key(row));
            next.values.extend_from_slice(self.value(row));
            next.meta.push(self.meta[row].clone());
            next.tags.push(self.tags[row].clone());
        }
        let report = DeleteReport {
            requested: ids.len(),
            matched_sources: matched.len(),
            removed_entries: self.len() - keep_rows.len(),
            remaining_entries: keep_rows.len(),
        };
        (next, report)
    }

    /// Persist to a directory: header, keys, values and meta files, all
    /// little-endian.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut header = BufWriter::new(std::fs::File::create(dir.join(HEADER_FILE))?);
        header.write_all(STORE_MAGIC)?;
        header.write_all(&(self.dimension as u32).to_le_bytes())?;
        header.write_all(&(self.value_width as u32).to_le_bytes())?;
        header.write_all(&(self.len() as u64).to_le_bytes())?;
        header.write_all(&self.generation.to_le_bytes())?;
        header.flush()?;

        let mut keys = BufWriter::new(std::fs::File::create(dir.join(KEYS_FILE))?);
        for x in &self.keys {
            keys.write_all(&x.to_le_bytes())?;
        }
        keys.flush()?;

        let mut values = BufWriter::new(std::fs::File::create(dir.join(VALUES_FILE))?);
        for v in &self.values {
            values.write_all(&v.to_le_bytes())?;
        }
        values.flush()?;

        let mut meta = BufWriter::new(std::fs::File::create(dir.join(META_FILE))?);
        for m in &self.meta {
            let id = m.source_id.as_bytes();
            if id.len() > u16::MAX as usize {
                return Err(Error::InvalidParameter(format!(
                    "sample id too long to persist: {} bytes",
                    id.len()
                )));
            }
            meta.write_all(&(id.len() as u16).to_le_bytes())?;
            meta.write_all(id)?;
            meta.write_all(&m.week.to_le_bytes())?;
        }
        meta.flush()?;
        Ok(())
    }

    /// Load a store saved by `save`, verifying magic, dimensions and exact
    /// matrix sizes.
    pub fn load(dir: &Path) -> Result<Datastore> {
        let header_path = dir.join(HEADER_FILE);
        let corrupt = |path: &Path, message: &str| Error::CorruptFile {
            path: path.display().to_string(),
            message: message.to_string(),
        };
        let mut header = BufReader::new(std::fs::File::open(&header_path)?);
        let mut magic = [0u8; 4];
        header
            .read_exact(&mut magic)
            .map_err(|_| corrupt(&header_path, "missing header"))?;
        if &magic != STORE_MAGIC {
            return Err(corrupt(&header_path, "bad magic, expected TDS1"));
        }
        let dimension =
            read_u32(&mut header).map_err(|_| corrupt(&header_path, "missing dimension"))? as usize;
        let value_width = read_u32(&mut header)
            .map_err(|_| corrupt(&header_path, "missing value width"))?
            as usize;
        let rows =
            read_u64(&mut header).map_err(|_| corrupt(&header_path, "missing row count"))? as usize;
        let generation =
            read_u64(&mut header).map_err(|_| corrupt(&header_path, "missing generation"))?;
        if dimension < 1 || value_width < 1 {
            return Err(corrupt(
                &header_path,
                "dimension and value width must be >= 1",
            ));
        }

        let keys_path = dir.join(KEYS_FILE);
        let keys_bytes = std::fs::read(&keys_path)?;
        let expected = rows as u64 * dimension as u64 * 4;
        if keys_bytes.len() as u64 != expected {
            return Err(Error::Truncated {
                path: keys_path.display().to_string(),
                expected,
                actual: keys_bytes.len() as u64,
                unit: "bytes",
            });
        }
        let keys: Vec<f32> = keys_bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();

        let values_path = dir.join(VALUES_FILE);
        let values_bytes = std::fs::read(&values_path)?;
        let expected = rows as u64 * value_width as u64 * 2;
        if values_bytes.len() as u64 != expected {
            return Err(Error::Truncated {
                path: values_path.display().to_string(),
                expected,
                actual: values_bytes.len() as u64,
                unit: "bytes",
            });
        }
        let values: Vec<u16> = values_bytes
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes(c.try_into().unwrap()))
            .collect();

        let meta_path = dir.join(META_FILE);
        let mut meta_reader = BufReader::new(std::fs::File::open(&meta_path)?);
        let mut meta = Vec::with_capacity(rows);
        for row in 0..rows {
            let truncated = || Error::Truncated {
                path: meta_path.display().to_string(),
                expected: rows as u64,
                actual: row as u64,
                unit: "records",
            };
            let id_len = read_u16(&mut meta_reader).map_err(|_| truncated())? as usize;
            let mut id = vec![0u8; id_len];
            meta_reader.read_exact(&mut id).map_err(|_| truncated())?;
            let source_id =
                String::from_utf8(id).map_err(|_| corrupt(&meta_path, "sample id is not UTF-8"))?;
            let week = read_u32(&mut meta_reader).map_err(|_| truncated())?;
            meta.push(EntryMeta { source_id, week });
        }

        let mut tags = Vec::with_capacity(rows);
        for row in 0..rows {
            tags.push(decode_tag(
                &values[row * value_width..(row + 1) * value_width],
            )?);
        }
        Ok(Datastore {
            dimension,
            value_width,
            keys,
            values,
            meta,
            generation,
            tags,
        })
    }
}

const STORE_MAGIC: &[u8; 4] = b"TDS1";
const HEADER_FILE: &str = "header.bin";
const KEYS_FILE: &str = "keys.f32";
const VALUES_FILE: &str = "values.u16";
const META_FILE: &str = "meta.bin";

fn read_u16<R: Read>(reader: &mut R) -> std::io::Result<u16> {
    let mut buf = [0u8; 2];
    reader.read_exact(&mut buf)?;
    Ok(u16::from_le_bytes(buf))
}

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

/// Single-writer, many-reader handle over the active store generation.
/// Readers clone the current Arc and keep querying the generation they
/// started with; a swap installs the replacement for later readers.
pub struct StoreHandle {
    active: RwLock<Arc<Datastore>>,
}

impl StoreHandle {
    pub fn new(store: Datastore) -> Self {
        StoreHandle {
            active: RwLock::new(Arc::new(store)),
        }
    }

    /// Pin the current generation.
    pub fn current(&self) -> Arc<Datastore> {
        self.active.read().expect("store lock poisoned").clone()
    }

    /// Install a replacement store. The replacement must keep the key
    /// dimension, since the encoder in use does not change.
    pub fn swap(&self, replacement: Datastore) -> Result<()> {
        let mut guard = self.active.write().expect("store lock poisoned");
        if replacement.dimension() != guard.dimension() {
            return Err(Error::DimensionMismatch {
                expected: guard.dimension(),
                actual: replacement.dimension(),
            });
        }
        *guard = Arc::new(replacement);
        Ok(())
    }
}
