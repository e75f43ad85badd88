//! Chat front door: routes each query and hands it to the matching feature.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, CorpusError};
use crate::llm::{LanguageModel, LlmError};
use crate::query::{self, ExtractError, ResultTable};
use crate::rag::{ComprehensionRequest, Comprehender, RagError, Source};
use crate::router::{update_session, FeatureKind, ModeCommand, QueryRouter, RouterError, SessionState};

pub const GENERAL_PROMPT: &str = include_str!("../../../prompts/general.txt");
pub const INVERSE_INSTRUCTIONS: &str = "Inverse model selected. Set catalyst design parameters in the Parameter Settings panel \
(base metal, support, promoter, preparation method and reaction temperature range) and submit them to start the search. \
It might take a while to finish.";

#[derive(Debug, thiserror::Error)]
pub enum AssistantError {
    #[error(transparent)]
    Route(#[from] RouterError),
    #[error(transparent)]
    Extract(#[from] ExtractError),
    #[error(transparent)]
    Comprehend(#[from] RagError),
    #[error(transparent)]
    Llm(#[from] LlmError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub session_id: String,
    pub query: String,
    pub routed_kind: FeatureKind,
    pub answer: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sources: Option<Vec<Source>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dsl: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub table: Option<ResultTable>,
    pub active_article: Option<String>,
    pub timing_ms: u64,
}

struct Session {
    state: SessionState,
    last_seen: Instant,
}

/// Server-side sessions keyed by the client's id, each behind its own lock
/// so one session's requests run in order.
struct Sessions {
    map: Mutex<HashMap<String, Arc<tokio::sync::Mutex<Session>>>>,
    ttl: Duration,
}

impl Sessions {
    fn get(&self, id: &str) -> Arc<tokio::sync::Mutex<Session>> {
        let mut map = self.map.lock().expect("session map poisoned");
        let now = Instant::now();
        let ttl = self.ttl;
        map.retain(|_, s| s.try_lock().map(|s| now.duration_since(s.last_seen) < ttl).unwrap_or(true));
        Arc::clone(
            map.entry(id.to_string())
                .or_insert_with(|| Arc::new(tokio::sync::Mutex::new(Session { state: SessionState::default(), last_seen: now }))),
        )
    }
}

pub struct Assistant {
    corpus: Arc<Corpus>,
    router: QueryRouter,
    comprehender: Arc<Comprehender>,
    llm: Arc<dyn LanguageModel>,
    k: usize,
    sessions: Sessions,
    activation: Regex,
}

impl Assistant {
    pub fn new(
        corpus: Arc<Corpus>,
        router: QueryRouter,
        comprehender: Arc<Comprehender>,
        llm: Arc<dyn LanguageModel>,
        k: usize,
        session_ttl: Duration,
    ) -> Self {
        Self {
            corpus,
            router,
            comprehender,
            llm,
            k,
            sessions: Sessions { map: Mutex::new(HashMap::new()), ttl: session_ttl },
            activation: Regex::new(r"(?i)^\s*(please\s+)?(comprehend|open|select|load|use)\b|^\s*[Rr]\d+\s*[.!]?\s*$")
                .expect("activation pattern compiles"),
        }
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    pub fn comprehender(&self) -> &Comprehender {
        &self.comprehender
    }

    pub fn llm(&self) -> &dyn LanguageModel {
        self.llm.as_ref()
    }

    pub async fn session_state(&self, session_id: &str) -> SessionState {
        self.sessions.get(session_id).lock().await.state.clone()
    }

    /// Indexes an article on first use.
    pub async fn ensure_indexed(&self, ref_id: &str) -> Result<(), RagError> {
        if self.comprehender.is_indexed(ref_id) {
            return Ok(());
        }
        if !self.corpus.contains(ref_id) {
            return Err(RagError::ArticleNotIndexed(ref_id.to_string()));
        }
        match self.comprehender.index_article(ref_id, &self.corpus, self.llm.as_ref()).await {
            Err(RagError::Corpus(CorpusError::MissingText(_))) => Err(RagError::ArticleNotIndexed(ref_id.to_string())),
            other => other.map(|_| ()),
        }
    }

    pub async fn comprehend(&self, req: &ComprehensionRequest) -> Result<crate::rag::ComprehensionAnswer, RagError> {
        self.ensure_indexed(&req.ref_id).await?;
        self.comprehender.answer(req, self.llm.as_ref()).await
    }

    pub async fn chat(&self, session_id: &str, query: &str) -> Result<ChatTurn, AssistantError> {
        let started = Instant::now();
        let session = self.sessions.get(session_id);
        let mut session = session.lock().await;
        session.last_seen = Instant::now();

        let routed = self.router.route(query, &session.state)?;
        let mut turn = ChatTurn {
            session_id: session_id.to_string(),
            query: query.to_string(),
            routed_kind: routed.kind,
            answer: String::new(),
            sources: None,
            dsl: None,
            table: None,
            active_article: None,
            timing_ms: 0,
        };

        if let Some(cmd) = routed.command {
            turn.answer = match cmd {
                ModeCommand::Lock(kind) => format!("Mode locked to {kind}. Send /mode auto to return to automatic routing."),
                ModeCommand::Auto => "Automatic routing restored.".to_string(),
            };
        } else {
            match routed.kind {
                FeatureKind::General => {
                    let prompt = GENERAL_PROMPT.replace("{question}", query.trim());
                    turn.answer = self.llm.generate(&prompt).await?.text;
                }
                FeatureKind::Extract => {
                    let ans = query::answer_question(query, self.llm.as_ref(), self.corpus.articles()).await?;
                    turn.answer = ans.table.to_text();
                    turn.dsl = Some(ans.dsl);
                    turn.table = Some(ans.table);
                }
                FeatureKind::Inverse => turn.answer = INVERSE_INSTRUCTIONS.to_string(),
                FeatureKind::Comprehend => {
                    let ref_id = routed
                        .ref_id()
                        .map(str::to_string)
                        .or_else(|| session.state.active_article.clone())
                        .ok_or(RouterError::NoActiveArticle)?;
                    self.ensure_indexed(&ref_id).await?;
                    if routed.ref_id().is_some() && self.activation.is_match(query) {
                        let title = self.corpus.get(&ref_id).map(|a| a.title.as_str()).unwrap_or_default();
                        turn.answer = format!("Ready to retrieve information from the article {ref_id}. Title: {title}");
                    } else {
                        let req = ComprehensionRequest { ref_id: ref_id.clone(), question: query.to_string(), k: self.k };
                        let ans = self.comprehender.answer(&req, self.llm.as_ref()).await?;
                        turn.answer = ans.text;
                        turn.sources = Some(ans.sources);
                    }
                }
            }
        }

        session.state = update_session(&session.state, &routed);
        turn.active_article = session.state.active_article.clone();
        turn.timing_ms = started.elapsed().as_millis() as u64;
        Ok(turn)
    }
}
