//! Article manifest and full-text store, plus the sliding-window chunker
//! that feeds the retrieval pipeline.
//!
//! On-disk layout of a corpus directory:
//!
//! ```text
//! <dir>/manifest.csv      ref_id,year,title,abstract,journal,authors,doi
//! <dir>/corpus/<ref>.txt  pre-extracted plain text, one file per article
//! ```
//!
//! Authors are `;`-separated inside their CSV cell.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub const DEFAULT_CHUNK_SIZE: usize = 1000;
pub const DEFAULT_CHUNK_OVERLAP: usize = 150;

const MANIFEST_HEADER: [&str; 7] = ["ref_id", "year", "title", "abstract", "journal", "authors", "doi"];

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("manifest parse error at line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("duplicate ref_id {0} in manifest")]
    DuplicateRefId(String),
    #[error("missing field `{field}` at line {line}")]
    MissingField { line: u64, field: String },
    #[error("invalid chunking parameters: overlap {overlap} must be smaller than size {size}")]
    InvalidParams { size: usize, overlap: usize },
    #[error("no full text for article {0}")]
    MissingText(String),
    #[error("unknown article {0}")]
    UnknownArticle(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// One row of the article manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArticleMeta {
    pub ref_id: String,
    pub year: i64,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    pub journal: String,
    pub authors: Vec<String>,
    pub doi: String,
}

/// A character window of one article's text. Offsets count Unicode scalar
/// values, not bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub ref_id: String,
    pub seq: u32,
    pub text: String,
    pub char_start: u64,
    pub char_end: u64,
}

fn is_valid_ref_id(s: &str) -> bool {
    s.len() > 1 && s.starts_with('R') && s[1..].bytes().all(|b| b.is_ascii_digit())
}

/// Parses a manifest from CSV text. An empty input yields an empty list.
pub fn parse_manifest(input: &str) -> Result<Vec<ArticleMeta>, CorpusError> {
    if input.trim().is_empty() {
        return Ok(Vec::new());
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(input.as_bytes());

    let headers = reader
        .headers()
        .map_err(|e| CorpusError::Parse { line: 1, message: e.to_string() })?
        .clone();
    let mut columns = [usize::MAX; 7];
    for (slot, name) in columns.iter_mut().zip(MANIFEST_HEADER) {
        *slot = headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| CorpusError::MissingField { line: 1, field: name.to_string() })?;
    }

    let mut seen = HashSet::new();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| CorpusError::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let cell = |idx: usize| -> Result<&str, CorpusError> {
            let name = MANIFEST_HEADER[idx];
            record
                .get(columns[idx])
                .ok_or_else(|| CorpusError::MissingField { line, field: name.to_string() })
        };

        let ref_id = cell(0)?.trim().to_string();
        if ref_id.is_empty() {
            return Err(CorpusError::MissingField { line, field: "ref_id".into() });
        }
        if !is_valid_ref_id(&ref_id) {
            return Err(CorpusError::Parse {
                line,
                message: format!("ref_id `{ref_id}` does not match R<number>"),
            });
        }
        let year_raw = cell(1)?.trim();
        if year_raw.is_empty() {
            return Err(CorpusError::MissingField { line, field: "year".into() });
        }
        let year: i64 = year_raw.parse().map_err(|_| CorpusError::Parse {
            line,
            message: format!("year `{year_raw}` is not an integer"),
        })?;
        if !(1900..=2100).contains(&year) {
            return Err(CorpusError::Parse { line, message: format!("year {year} outside [1900, 2100]") });
        }
        if !seen.insert(ref_id.clone()) {
            return Err(CorpusError::DuplicateRefId(ref_id));
        }
        let authors = cell(5)?
            .split(';')
            .map(str::trim)
            .filter(|a| !a.is_empty())
            .map(String::from)
            .collect();
        rows.push(ArticleMeta {
            ref_id,
            year,
            title: cell(2)?.trim().to_string(),
            abstract_text: cell(3)?.trim().to_string(),
            journal: cell(4)?.trim().to_string(),
            authors,
            doi: cell(6)?.trim().to_string(),
        });
    }
    Ok(rows)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ArticleMeta>, CorpusError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io { path: path.to_path_buf(), source })?;
    parse_manifest(&text)
}

/// Splits `text` into windows of `size` characters whose starts advance by
/// `size - overlap`. The final window may be shorter.
pub fn chunk_document(ref_id: &str, text: &str, size: usize, overlap: usize) -> Result<Vec<Chunk>, CorpusError> {
    if size == 0 || overlap >= size {
        return Err(CorpusError::InvalidParams { size, overlap });
    }
    // byte offset of every char boundary, plus the end
    let mut bounds: Vec<usize> = text.char_indices().map(|(i, _)| i).collect();
    let len = bounds.len();
    bounds.push(text.len());

    let step = size - overlap;
    let mut chunks = Vec::new();
    let mut start = 0usize;
    while start < len {
        let end = (start + size).min(len);
        chunks.push(Chunk {
            ref_id: ref_id.to_string(),
            seq: chunks.len() as u32,
            text: text[bounds[start]..bounds[end]].to_string(),
            char_start: start as u64,
            char_end: end as u64,
        });
        if end == len {
            break;
        }
        start += step;
    }
    Ok(chunks)
}

/// Inverse of [`chunk_document`]: drops each chunk's leading overlap
/// (except the first) and concatenates.
pub fn reconstruct(chunks: &[Chunk], overlap: usize) -> String {
    let mut out = String::new();
    for (i, chunk) in chunks.iter().enumerate() {
        if i == 0 {
            out.push_str(&chunk.text);
        } else {
            out.extend(chunk.text.chars().skip(overlap));
        }
    }
    out
}

/// The manifest plus a handle on the full-text directory. Immutable after
/// load.
#[derive(Debug, Clone)]
pub struct Corpus {
    articles: Vec<ArticleMeta>,
    by_ref: HashMap<String, usize>,
    text_dir: Option<PathBuf>,
}

impl Corpus {
    pub fn from_articles(articles: Vec<ArticleMeta>, text_dir: Option<PathBuf>) -> Self {
        let by_ref = articles.iter().enumerate().map(|(i, a)| (a.ref_id.clone(), i)).collect();
        Self { articles, by_ref, text_dir }
    }

    /// Opens `<dir>/manifest.csv` with texts under `<dir>/corpus/`.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let dir = dir.as_ref();
        let articles = load_manifest(dir.join("manifest.csv"))?;
        Ok(Self::from_articles(articles, Some(dir.join("corpus"))))
    }

    /// Articles in manifest order.
    pub fn articles(&self) -> &[ArticleMeta] {
        &self.articles
    }

    pub fn get(&self, ref_id: &str) -> Option<&ArticleMeta> {
        self.by_ref.get(ref_id).map(|&i| &self.articles[i])
    }

    pub fn contains(&self, ref_id: &str) -> bool {
        self.by_ref.contains_key(ref_id)
    }

    pub fn len(&self) -> usize {
        self.articles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.articles.is_empty()
    }

    pub fn ref_ids(&self) -> impl Iterator<Item = &str> {
        self.articles.iter().map(|a| a.ref_id.as_str())
    }

    pub fn text_path(&self, ref_id: &str) -> Option<PathBuf> {
        self.text_dir.as_ref().map(|d| d.join(format!("{ref_id}.txt")))
    }

    pub fn read_text(&self, ref_id: &str) -> Result<String, CorpusError> {
        if !self.contains(ref_id) {
            return Err(CorpusError::UnknownArticle(ref_id.to_string()));
        }
        let path = self.text_path(ref_id).ok_or_else(|| CorpusError::MissingText(ref_id.to_string()))?;
        match fs::read_to_string(&path) {
            Ok(text) => Ok(text),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(CorpusError::MissingText(ref_id.to_string())),
            Err(source) => Err(CorpusError::Io { path, source }),
        }
    }
}

/// Summary of `acewgs ingest`.
#[derive(Debug, Clone, Default, Serialize)]
pub struct IngestReport {
    pub articles: usize,
    pub with_text: usize,
    pub missing_text: Vec<String>,
    pub orphan_texts: Vec<String>,
}

/// Validates the corpus directory layout without modifying anything.
pub fn validate_layout(dir: impl AsRef<Path>) -> Result<IngestReport, CorpusError> {
    let dir = dir.as_ref();
    let corpus = Corpus::open(dir)?;
    let mut report = IngestReport { articles: corpus.len(), ..Default::default() };
    for ref_id in corpus.ref_ids() {
        match corpus.text_path(ref_id) {
            Some(p) if p.is_file() => report.with_text += 1,
            _ => report.missing_text.push(ref_id.to_string()),
        }
    }
    let text_dir = dir.join("corpus");
    if let Ok(entries) = fs::read_dir(&text_dir) {
        let mut orphans: Vec<String> = entries
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let name = e.file_name().into_string().ok()?;
                let stem = name.strip_suffix(".txt")?.to_string();
                (!corpus.contains(&stem)).then_some(stem)
            })
            .collect();
        orphans.sort();
        report.orphan_texts = orphans;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const HEADER: &str = "ref_id,year,title,abstract,journal,authors,doi\n";

    #[test]
    fn manifest_rows_parse() {
        let rows = parse_manifest(&format!(
            "{HEADER}R1,2019,\"Au, on CeO2\",An abstract.,Catalysts,A. One; B. Two ;,10.1/x\nR2,2021,T,,Heliyon,,\n"
        ))
        .unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].title, "Au, on CeO2");
        assert_eq!(rows[0].authors, vec!["A. One", "B. Two"]);
        assert!(rows[1].authors.is_empty());
        assert_eq!(rows[1].abstract_text, "");
        assert!(parse_manifest("").unwrap().is_empty());
    }

    #[test]
    fn manifest_errors_carry_the_line() {
        let dup = parse_manifest(&format!("{HEADER}R1,2019,a,b,c,d,e\nR1,2020,a,b,c,d,e\n"));
        assert!(matches!(dup, Err(CorpusError::DuplicateRefId(r)) if r == "R1"));
        let year = parse_manifest(&format!("{HEADER}R1,20x9,a,b,c,d,e\n"));
        assert!(matches!(year, Err(CorpusError::Parse { line: 2, .. })));
        let missing = parse_manifest(&format!("{HEADER}R1,,a,b,c,d,e\n"));
        assert!(matches!(missing, Err(CorpusError::MissingField { field, .. }) if field == "year"));
        let bad_ref = parse_manifest(&format!("{HEADER}X1,2019,a,b,c,d,e\n"));
        assert!(matches!(bad_ref, Err(CorpusError::Parse { .. })));
        let no_doi = parse_manifest("ref_id,year,title,abstract,journal,authors\nR1,2019,a,b,c,d\n");
        assert!(matches!(no_doi, Err(CorpusError::MissingField { line: 1, field }) if field == "doi"));
    }

    #[test]
    fn chunk_edges() {
        assert!(chunk_document("R1", "", 1000, 150).unwrap().is_empty());
        let one = chunk_document("R1", &"a".repeat(1000), 1000, 150).unwrap();
        assert_eq!(one.len(), 1);
        let two = chunk_document("R1", &"a".repeat(1001), 1000, 150).unwrap();
        assert_eq!((two[1].char_start, two[1].char_end), (850, 1001));
        assert!(matches!(chunk_document("R1", "abc", 10, 10), Err(CorpusError::InvalidParams { .. })));
    }

    #[test]
    fn offsets_count_characters() {
        let text = "α".repeat(30);
        let chunks = chunk_document("R1", &text, 20, 5).unwrap();
        assert_eq!(chunks[0].text.chars().count(), 20);
        assert_eq!(chunks[1].char_start, 15);
        assert_eq!(reconstruct(&chunks, 5), text);
    }

    #[test]
    fn missing_text_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("manifest.csv"), format!("{HEADER}R1,2019,a,b,c,d,e\nR2,2019,a,b,c,d,e\n")).unwrap();
        fs::create_dir(dir.path().join("corpus")).unwrap();
        fs::write(dir.path().join("corpus/R1.txt"), "full text").unwrap();
        fs::write(dir.path().join("corpus/R9.txt"), "orphan").unwrap();
        let corpus = Corpus::open(dir.path()).unwrap();
        assert_eq!(corpus.read_text("R1").unwrap(), "full text");
        assert!(matches!(corpus.read_text("R2"), Err(CorpusError::MissingText(_))));
        let report = validate_layout(dir.path()).unwrap();
        assert_eq!((report.articles, report.with_text), (2, 1));
        assert_eq!(report.missing_text, vec!["R2"]);
        assert_eq!(report.orphan_texts, vec!["R9"]);
    }

    proptest! {
        #[test]
        fn windows_reconstruct(text in "\\PC{0,3000}", size in 2usize..400, overlap_frac in 0.0f64..0.9) {
            let overlap = ((size as f64) * overlap_frac) as usize;
            let chunks = chunk_document("R1", &text, size, overlap).unwrap();
            for c in &chunks {
                prop_assert!(c.text.chars().count() <= size);
            }
            for w in chunks.windows(2) {
                prop_assert_eq!(w[0].char_end - w[1].char_start, overlap as u64);
            }
            prop_assert_eq!(reconstruct(&chunks, overlap), text);
        }
    }
}
