//! Exact cosine-similarity index over chunk embeddings, with an optional
//! per-article filter and a fixed little-endian file format.
//!
//! File layout (all integers little-endian):
//!
//! ```text
//! "AWVX" | u32 version=1 | u32 dimension | u64 count
//! per entry: f32 x dimension | u32 len + ref_id bytes | u32 seq
//!            | u64 char_start | u64 char_end | u32 len + text bytes
//! ```

use std::cmp::Ordering;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::corpus::Chunk;

const MAGIC: &[u8; 4] = b"AWVX";
const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum IndexError {
    #[error("vector dimension {got} does not match index dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("zero-norm or non-finite vector")]
    ZeroVector,
    #[error("index holds no entries matching the request")]
    EmptyIndex,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("index file format error: {0}")]
    Format(String),
    #[error("index file is truncated")]
    TruncatedFile,
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexedEntry {
    pub chunk: Chunk,
    pub vector: Vec<f32>,
    /// L2 norm of `vector`, computed in f64.
    pub norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchHit {
    pub chunk: Chunk,
    pub similarity: f64,
}

fn l2_norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum()
}

/// Descending similarity, ties by `(ref_id, seq)` ascending.
fn rank_order(a: &SearchHit, b: &SearchHit) -> Ordering {
    b.similarity
        .total_cmp(&a.similarity)
        .then_with(|| a.chunk.ref_id.cmp(&b.chunk.ref_id))
        .then_with(|| a.chunk.seq.cmp(&b.chunk.seq))
}

/// Full-scan index. Callers wrap it in a `RwLock` for the
/// single-writer/multi-reader contract.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VectorIndex {
    dimension: Option<usize>,
    entries: Vec<IndexedEntry>,
}

impl VectorIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn dimension(&self) -> Option<usize> {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[IndexedEntry] {
        &self.entries
    }

    pub fn count_for(&self, ref_id: &str) -> usize {
        self.entries.iter().filter(|e| e.chunk.ref_id == ref_id).count()
    }

    pub fn contains_article(&self, ref_id: &str) -> bool {
        self.entries.iter().any(|e| e.chunk.ref_id == ref_id)
    }

    fn check_vector(&self, v: &[f32]) -> Result<f64, IndexError> {
        if let Some(d) = self.dimension {
            if v.len() != d {
                return Err(IndexError::DimensionMismatch { expected: d, got: v.len() });
            }
        }
        let norm = l2_norm(v);
        if norm == 0.0 || !norm.is_finite() {
            return Err(IndexError::ZeroVector);
        }
        Ok(norm)
    }

    /// The first add fixes the index dimension.
    pub fn add(&mut self, chunk: Chunk, vector: Vec<f32>) -> Result<(), IndexError> {
        if vector.is_empty() {
            return Err(IndexError::DimensionMismatch { expected: self.dimension.unwrap_or(0), got: 0 });
        }
        let norm = self.check_vector(&vector)?;
        self.dimension.get_or_insert(vector.len());
        self.entries.push(IndexedEntry { chunk, vector, norm });
        Ok(())
    }

    /// Drops every entry of `ref_id`; returns how many were removed.
    pub fn remove_article(&mut self, ref_id: &str) -> usize {
        let before = self.entries.len();
        self.entries.retain(|e| e.chunk.ref_id != ref_id);
        before - self.entries.len()
    }

    /// Replaces all entries of `ref_id` in one step. Nothing changes if any
    /// new vector is rejected.
    pub fn replace_article(&mut self, ref_id: &str, items: Vec<(Chunk, Vec<f32>)>) -> Result<usize, IndexError> {
        let mut staged = self.clone();
        staged.remove_article(ref_id);
        if staged.entries.is_empty() {
            staged.dimension = None;
        }
        let n = items.len();
        for (chunk, vector) in items {
            staged.add(chunk, vector)?;
        }
        *self = staged;
        Ok(n)
    }

    /// Exact top-`k` by cosine similarity, optionally restricted to one
    /// article.
    pub fn search(&self, query: &[f32], k: usize, filter: Option<&str>) -> Result<Vec<SearchHit>, IndexError> {
        if k == 0 {
            return Err(IndexError::InvalidK);
        }
        let Some(dim) = self.dimension else { return Err(IndexError::EmptyIndex) };
        if query.len() != dim {
            return Err(IndexError::DimensionMismatch { expected: dim, got: query.len() });
        }
        let qnorm = self.check_vector(query)?;
        let mut hits: Vec<SearchHit> = self
            .entries
            .iter()
            .filter(|e| filter.is_none_or(|r| e.chunk.ref_id == r))
            .map(|e| SearchHit { chunk: e.chunk.clone(), similarity: dot(query, &e.vector) / (qnorm * e.norm) })
            .collect();
        if hits.is_empty() {
            return Err(IndexError::EmptyIndex);
        }
        hits.sort_by(rank_order);
        hits.truncate(k);
        Ok(hits)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + self.entries.len() * (self.dimension.unwrap_or(0) * 4 + 64));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dimension.unwrap_or(0) as u32).to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for e in &self.entries {
            for v in &e.vector {
                out.extend_from_slice(&v.to_le_bytes());
            }
            put_str(&mut out, &e.chunk.ref_id);
            out.extend_from_slice(&e.chunk.seq.to_le_bytes());
            out.extend_from_slice(&e.chunk.char_start.to_le_bytes());
            out.extend_from_slice(&e.chunk.char_end.to_le_bytes());
            put_str(&mut out, &e.chunk.text);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, IndexError> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(IndexError::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(IndexError::Format(format!("unsupported version {version}")));
        }
        let dim = r.u32()? as usize;
        let count = r.u64()?;
        if count > 0 && dim == 0 {
            return Err(IndexError::Format("entries with zero dimension".into()));
        }
        let mut index = VectorIndex::new();
        for _ in 0..count {
            let raw = r.take(dim * 4)?;
            let vector: Vec<f32> = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
            let ref_id = r.string()?;
            let seq = r.u32()?;
            let char_start = r.u64()?;
            let char_end = r.u64()?;
            let text = r.string()?;
            let chunk = Chunk { ref_id, seq, text, char_start, char_end };
            index.add(chunk, vector).map_err(|e| IndexError::Format(e.to_string()))?;
        }
        if r.pos != bytes.len() {
            return Err(IndexError::Format("trailing bytes after last entry".into()));
        }
        Ok(index)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), IndexError> {
        let path = path.as_ref();
        let io_err = |source| IndexError::Io { path: path.to_path_buf(), source };
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp).map_err(io_err)?;
        f.write_all(&self.to_bytes()).map_err(io_err)?;
        f.sync_all().map_err(io_err)?;
        fs::rename(&tmp, path).map_err(io_err)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, IndexError> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|source| IndexError::Io { path: path.to_path_buf(), source })?;
        Self::from_bytes(&bytes)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], IndexError> {
        let end = self.pos.checked_add(n).ok_or(IndexError::TruncatedFile)?;
        let s = self.buf.get(self.pos..end).ok_or(IndexError::TruncatedFile)?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, IndexError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, IndexError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, IndexError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| IndexError::Format("invalid UTF-8".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chunk(ref_id: &str, seq: u32) -> Chunk {
        Chunk { ref_id: ref_id.into(), seq, text: format!("{ref_id}-{seq}"), char_start: 0, char_end: 5 }
    }

    #[test]
    fn first_add_fixes_dimension() {
        let mut idx = VectorIndex::new();
        idx.add(chunk("R1", 0), vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(idx.dimension(), Some(4));
        let err = idx.add(chunk("R1", 1), vec![1.0; 5]).unwrap_err();
        assert!(matches!(err, IndexError::DimensionMismatch { expected: 4, got: 5 }));
    }

    #[test]
    fn zero_vectors_are_rejected() {
        let mut idx = VectorIndex::new();
        assert!(matches!(idx.add(chunk("R1", 0), vec![0.0; 3]), Err(IndexError::ZeroVector)));
        idx.add(chunk("R1", 0), vec![1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(idx.search(&[0.0; 3], 1, None), Err(IndexError::ZeroVector)));
    }

    #[test]
    fn self_similarity_is_one() {
        let mut idx = VectorIndex::new();
        let v = vec![0.3, -1.2, 4.5, 0.01];
        idx.add(chunk("R1", 0), vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        idx.add(chunk("R2", 0), v.clone()).unwrap();
        let hits = idx.search(&v, 1, None).unwrap();
        assert_eq!(hits[0].chunk.ref_id, "R2");
        assert!((hits[0].similarity - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn orthogonal_similarity_is_zero() {
        let mut idx = VectorIndex::new();
        idx.add(chunk("R1", 0), vec![1.0, 0.0]).unwrap();
        let hits = idx.search(&[0.0, 2.0], 3, None).unwrap();
        assert_eq!(hits.len(), 1);
        assert!(hits[0].similarity.abs() <= 1e-12);
    }

    #[test]
    fn filter_and_ties() {
        let mut idx = VectorIndex::new();
        idx.add(chunk("R71", 1), vec![1.0, 0.0]).unwrap();
        idx.add(chunk("R51", 0), vec![1.0, 0.0]).unwrap();
        idx.add(chunk("R71", 0), vec![1.0, 0.0]).unwrap();
        let all = idx.search(&[1.0, 0.0], 3, None).unwrap();
        let order: Vec<_> = all.iter().map(|h| (h.chunk.ref_id.as_str(), h.chunk.seq)).collect();
        assert_eq!(order, vec![("R51", 0), ("R71", 0), ("R71", 1)]);
        let only = idx.search(&[1.0, 0.0], 10, Some("R71")).unwrap();
        assert!(only.iter().all(|h| h.chunk.ref_id == "R71"));
        assert!(matches!(idx.search(&[1.0, 0.0], 1, Some("R9")), Err(IndexError::EmptyIndex)));
        assert!(matches!(idx.search(&[1.0, 0.0], 0, None), Err(IndexError::InvalidK)));
    }

    #[test]
    fn empty_index_round_trips() {
        let idx = VectorIndex::new();
        let back = VectorIndex::from_bytes(&idx.to_bytes()).unwrap();
        assert!(back.is_empty());
        assert!(matches!(back.search(&[1.0], 1, None), Err(IndexError::EmptyIndex)));
    }

    #[test]
    fn corrupt_and_truncated_files() {
        let mut idx = VectorIndex::new();
        idx.add(chunk("R1", 0), vec![1.5, -2.25]).unwrap();
        let bytes = idx.to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(VectorIndex::from_bytes(&bad), Err(IndexError::Format(_))));
        assert!(matches!(VectorIndex::from_bytes(&bytes[..bytes.len() - 1]), Err(IndexError::TruncatedFile)));
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(matches!(VectorIndex::from_bytes(&v2), Err(IndexError::Format(_))));
    }

    #[test]
    fn replace_article_is_atomic() {
        let mut idx = VectorIndex::new();
        idx.add(chunk("R1", 0), vec![1.0, 0.0]).unwrap();
        idx.add(chunk("R2", 0), vec![0.0, 1.0]).unwrap();
        let n = idx.replace_article("R1", vec![(chunk("R1", 0), vec![1.0, 1.0]), (chunk("R1", 1), vec![2.0, 1.0])]).unwrap();
        assert_eq!(n, 2);
        assert_eq!(idx.count_for("R1"), 2);
        let before = idx.clone();
        assert!(idx.replace_article("R1", vec![(chunk("R1", 0), vec![1.0, 1.0, 1.0])]).is_err());
        assert_eq!(idx, before);
    }

    proptest::proptest! {
        #[test]
        fn save_load_is_bit_exact(vals in proptest::collection::vec(proptest::num::f32::NORMAL, 3..40)) {
            let mut idx = VectorIndex::new();
            for (i, w) in vals.chunks_exact(3).enumerate() {
                let _ = idx.add(chunk("R7", i as u32), w.to_vec());
            }
            let back = VectorIndex::from_bytes(&idx.to_bytes()).unwrap();
            proptest::prop_assert_eq!(back.entries.len(), idx.entries.len());
            for (a, b) in back.entries.iter().zip(&idx.entries) {
                let ab: Vec<u32> = a.vector.iter().map(|x| x.to_bits()).collect();
                let bb: Vec<u32> = b.vector.iter().map(|x| x.to_bits()).collect();
                proptest::prop_assert_eq!(ab, bb);
                proptest::prop_assert_eq!(&a.chunk, &b.chunk);
            }
        }
    }
}
