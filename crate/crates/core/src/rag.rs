//! Question answering over a single article: embed the question, retrieve
//! that article's closest chunks and prompt the model with them.

use std::collections::HashSet;
use std::path::Path;
use std::sync::{RwLock, RwLockReadGuard};

use serde::{Deserialize, Serialize};

use crate::corpus::{chunk_document, Chunk, Corpus, CorpusError, DEFAULT_CHUNK_OVERLAP, DEFAULT_CHUNK_SIZE};
use crate::index::{IndexError, SearchHit, VectorIndex};
use crate::llm::{LanguageModel, LlmError};

pub const COMPREHEND_PROMPT: &str = include_str!("../../../prompts/comprehend.txt");
pub const DEFAULT_K: usize = 4;
pub const NOT_FOUND: &str = "not found in the article";

#[derive(Debug, thiserror::Error)]
pub enum RagError {
    #[error("article {0} has not been indexed")]
    ArticleNotIndexed(String),
    #[error("article {0} has no indexed text")]
    EmptyRetrieval(String),
    #[error("question is empty")]
    EmptyQuestion,
    #[error("k must be at least 1")]
    InvalidK,
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Index(#[from] IndexError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComprehensionRequest {
    pub ref_id: String,
    pub question: String,
    #[serde(default = "default_k")]
    pub k: usize,
}

fn default_k() -> usize {
    DEFAULT_K
}

impl ComprehensionRequest {
    pub fn new(ref_id: impl Into<String>, question: impl Into<String>) -> Self {
        Self { ref_id: ref_id.into(), question: question.into(), k: DEFAULT_K }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Source {
    pub seq: u32,
    pub char_start: u64,
    pub char_end: u64,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComprehensionAnswer {
    pub text: String,
    /// In retrieval order.
    pub sources: Vec<Source>,
    pub model_name: String,
}

/// Fills the template with numbered excerpts.
pub fn build_prompt(template: &str, ref_id: &str, question: &str, hits: &[SearchHit]) -> String {
    let excerpts = hits
        .iter()
        .enumerate()
        .map(|(i, h)| format!("[{}] (characters {}-{})\n{}", i + 1, h.chunk.char_start, h.chunk.char_end, h.chunk.text))
        .collect::<Vec<_>>()
        .join("\n\n");
    template.replace("{ref_id}", ref_id).replace("{excerpts}", &excerpts).replace("{question}", question.trim())
}

/// Embeds every chunk of one article's text.
pub async fn embed_chunks(chunks: Vec<Chunk>, llm: &dyn LanguageModel) -> Result<Vec<(Chunk, Vec<f32>)>, LlmError> {
    let mut items = Vec::with_capacity(chunks.len());
    for chunk in chunks {
        let v = llm.embed(&chunk.text).await?.into_inner();
        items.push((chunk, v));
    }
    Ok(items)
}

/// The article index plus bookkeeping for articles indexed with no text.
/// Index writes are short critical sections; embedding happens outside the
/// lock.
#[derive(Debug)]
pub struct Comprehender {
    index: RwLock<VectorIndex>,
    empty: RwLock<HashSet<String>>,
    template: String,
    chunk_size: usize,
    chunk_overlap: usize,
}

impl Default for Comprehender {
    fn default() -> Self {
        Self::new(VectorIndex::new())
    }
}

impl Comprehender {
    pub fn new(index: VectorIndex) -> Self {
        Self {
            index: RwLock::new(index),
            empty: RwLock::new(HashSet::new()),
            template: COMPREHEND_PROMPT.to_string(),
            chunk_size: DEFAULT_CHUNK_SIZE,
            chunk_overlap: DEFAULT_CHUNK_OVERLAP,
        }
    }

    pub fn with_template(mut self, template: impl Into<String>) -> Self {
        self.template = template.into();
        self
    }

    pub fn with_chunking(mut self, size: usize, overlap: usize) -> Self {
        self.chunk_size = size;
        self.chunk_overlap = overlap;
        self
    }

    pub fn index(&self) -> RwLockReadGuard<'_, VectorIndex> {
        self.index.read().expect("index lock poisoned")
    }

    pub fn is_indexed(&self, ref_id: &str) -> bool {
        self.index().contains_article(ref_id) || self.empty.read().expect("lock poisoned").contains(ref_id)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), IndexError> {
        self.index().save(path)
    }

    /// Chunks, embeds and (re)places one article. Returns the chunk count.
    pub async fn index_text(&self, ref_id: &str, text: &str, llm: &dyn LanguageModel) -> Result<usize, RagError> {
        let chunks = chunk_document(ref_id, text, self.chunk_size, self.chunk_overlap)?;
        if chunks.is_empty() {
            tracing::warn!(ref_id, "article text is empty; nothing indexed");
        }
        let items = embed_chunks(chunks, llm).await?;
        let n = self.index.write().expect("index lock poisoned").replace_article(ref_id, items)?;
        let mut empty = self.empty.write().expect("lock poisoned");
        if n == 0 {
            empty.insert(ref_id.to_string());
        } else {
            empty.remove(ref_id);
        }
        Ok(n)
    }

    pub async fn index_article(&self, ref_id: &str, corpus: &Corpus, llm: &dyn LanguageModel) -> Result<usize, RagError> {
        let text = corpus.read_text(ref_id)?;
        self.index_text(ref_id, &text, llm).await
    }

    pub async fn answer(&self, req: &ComprehensionRequest, llm: &dyn LanguageModel) -> Result<ComprehensionAnswer, RagError> {
        if req.question.trim().is_empty() {
            return Err(RagError::EmptyQuestion);
        }
        if req.k == 0 {
            return Err(RagError::InvalidK);
        }
        if !self.is_indexed(&req.ref_id) {
            return Err(RagError::ArticleNotIndexed(req.ref_id.clone()));
        }
        if self.index().count_for(&req.ref_id) == 0 {
            return Err(RagError::EmptyRetrieval(req.ref_id.clone()));
        }
        let q = llm.embed(&req.question).await?;
        let hits = self.index().search(q.values(), req.k, Some(&req.ref_id))?;
        if hits.is_empty() {
            return Err(RagError::EmptyRetrieval(req.ref_id.clone()));
        }
        let prompt = build_prompt(&self.template, &req.ref_id, &req.question, &hits);
        let out = llm.generate(&prompt).await?;
        Ok(ComprehensionAnswer {
            text: out.text,
            sources: hits
                .iter()
                .map(|h| Source { seq: h.chunk.seq, char_start: h.chunk.char_start, char_end: h.chunk.char_end, similarity: h.similarity })
                .collect(),
            model_name: out.model_name,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{mock_embedding, EmbeddingVector, GenerationResult};
    use async_trait::async_trait;
    use std::sync::Mutex;

    #[derive(Default)]
    struct Echo {
        prompts: Mutex<Vec<String>>,
    }

    #[async_trait]
    impl LanguageModel for Echo {
        async fn generate(&self, prompt: &str) -> Result<GenerationResult, LlmError> {
            self.prompts.lock().unwrap().push(prompt.to_string());
            Ok(GenerationResult { text: format!("ECHO: {prompt}"), model_name: "echo".into(), latency_ms: 0 })
        }
        async fn embed(&self, text: &str) -> Result<EmbeddingVector, LlmError> {
            EmbeddingVector::new(mock_embedding(text, 64))
        }
        async fn health(&self) -> Result<(), LlmError> {
            Ok(())
        }
        fn model_name(&self) -> &str {
            "echo"
        }
    }

    fn filler(tag: &str, len: usize) -> String {
        let unit = format!("{tag} lorem ipsum catalyst support ");
        unit.repeat(len / unit.len() + 1)[..len].to_string()
    }

    #[tokio::test]
    async fn chunk_counts_and_reindexing() {
        let llm = Echo::default();
        let c = Comprehender::default();
        assert_eq!(c.index_text("R1", &filler("a", 1850), &llm).await.unwrap(), 2);
        assert_eq!(c.index_text("R1", &filler("b", 1850), &llm).await.unwrap(), 2);
        assert_eq!(c.index().count_for("R1"), 2);
        assert_eq!(c.index_text("R2", "", &llm).await.unwrap(), 0);
        assert!(c.is_indexed("R2"));
        let err = c.answer(&ComprehensionRequest::new("R2", "anything?"), &llm).await.unwrap_err();
        assert!(matches!(err, RagError::EmptyRetrieval(_)));
    }

    #[tokio::test]
    async fn prompt_carries_only_the_selected_article() {
        let llm = Echo::default();
        let c = Comprehender::default();
        let r1 = format!("{} SENTINELALPHA synthesis by impregnation. {}", filler("x", 600), filler("y", 900));
        let r2 = format!("{} SENTINELBETA synthesis by impregnation. {}", filler("x", 600), filler("y", 900));
        c.index_text("R1", &r1, &llm).await.unwrap();
        c.index_text("R2", &r2, &llm).await.unwrap();
        let ans = c.answer(&ComprehensionRequest::new("R1", "How was it synthesized?"), &llm).await.unwrap();
        assert!(ans.text.contains("SENTINELALPHA"));
        assert!(!ans.text.contains("SENTINELBETA"));
        assert!(ans.sources.len() <= DEFAULT_K);
        let prompt = llm.prompts.lock().unwrap().last().cloned().unwrap();
        assert!(prompt.starts_with("Answer only from the provided article excerpts"));
        assert!(prompt.len() <= DEFAULT_K * 1000 * 4 + COMPREHEND_PROMPT.len() + 200);
        let again = c.answer(&ComprehensionRequest::new("R1", "How was it synthesized?"), &llm).await.unwrap();
        assert_eq!(again.sources, ans.sources);
    }

    #[tokio::test]
    async fn unknown_article_is_not_indexed() {
        let llm = Echo::default();
        let c = Comprehender::default();
        let err = c.answer(&ComprehensionRequest::new("R99", "q"), &llm).await.unwrap_err();
        assert!(matches!(err, RagError::ArticleNotIndexed(r) if r == "R99"));
    }
}
