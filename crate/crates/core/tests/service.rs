use std::path::{Path, PathBuf};
use std::time::Duration;

use acewgs_core::assistant::INVERSE_INSTRUCTIONS;
use acewgs_core::config::AppConfig;
use acewgs_core::llm::{MockScript, MockServer};
use acewgs_core::service::{self, RunningService};
use reqwest::StatusCode;
use serde_json::{json, Value};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

struct Harness {
    svc: RunningService,
    mock: MockServer,
    http: reqwest::Client,
    _dir: tempfile::TempDir,
}

impl Harness {
    async fn start(script: MockScript) -> Self {
        let mock = MockServer::start(script, 0).await.unwrap();
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = AppConfig::default();
        cfg.llm.base_url = mock.base_url();
        cfg.corpus.dir = fixtures();
        cfg.corpus.index_path = dir.path().join("index.awvx");
        cfg.pso.swarm_size = 10;
        cfg.pso.max_iters = 20;
        cfg.service.bind = "127.0.0.1:0".into();
        let svc = service::start(&cfg).await.unwrap();
        Self { svc, mock, http: reqwest::Client::builder().no_proxy().build().unwrap(), _dir: dir }
    }

    fn url(&self, path: &str) -> String {
        format!("{}/api/v1{path}", self.svc.base_url())
    }

    async fn get(&self, path: &str) -> (StatusCode, Value) {
        let resp = self.http.get(self.url(path)).send().await.unwrap();
        (resp.status(), resp.json().await.unwrap())
    }

    async fn post(&self, path: &str, body: &Value) -> (StatusCode, Value) {
        let resp = self.http.post(self.url(path)).json(body).send().await.unwrap();
        (resp.status(), resp.json().await.unwrap())
    }

    async fn chat(&self, session: &str, query: &str) -> Value {
        let (status, body) = self.post("/chat", &json!({ "session_id": session, "query": query })).await;
        assert_eq!(status, StatusCode::OK, "{body}");
        body
    }
}

#[tokio::test]
async fn health_reports_backend_and_index() {
    let h = Harness::start(MockScript::echo()).await;
    let (status, body) = h.get("/health").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["llm"], "ok");
    assert_eq!(body["index"], "ok");
    assert!(body["index_entries"].as_u64().unwrap() > 0);

    h.mock.stop().await;
    let resp = h.http.get(format!("{}/api/v1/health", h.svc.base_url())).send().await.unwrap();
    assert_eq!(resp.status(), StatusCode::SERVICE_UNAVAILABLE);
}

#[tokio::test]
async fn inverse_chat_and_job_lifecycle() {
    let h = Harness::start(MockScript::echo()).await;
    let turn = h.chat("s1", "Run inverse model.").await;
    assert_eq!(turn["routed_kind"], "Inverse");
    assert_eq!(turn["answer"], INVERSE_INSTRUCTIONS);

    let settings = json!({
        "base_metal": "Pt", "support": "CeO2", "promoter": "Ni",
        "prep_method": "wi", "temperature_range": [300.0, 350.0]
    });
    let (status, body) = h.post("/inverse/jobs", &settings).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    let id = body["job_id"].as_str().unwrap().to_string();

    let mut seen = Vec::new();
    let job = loop {
        let (status, job) = h.get(&format!("/inverse/jobs/{id}")).await;
        assert_eq!(status, StatusCode::OK);
        let s = job["status"].as_str().unwrap().to_string();
        if seen.last() != Some(&s) {
            seen.push(s.clone());
        }
        if s == "Finished" || s == "Failed" {
            break job;
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    };
    assert_eq!(job["status"], "Finished", "{job}");
    let order = ["Queued", "Running", "Finished"];
    let ranks: Vec<usize> = seen.iter().map(|s| order.iter().position(|o| o == s).unwrap()).collect();
    assert!(ranks.windows(2).all(|w| w[0] < w[1]), "{seen:?}");
    let report = &job["result"];
    assert!(report["conversion"].as_f64().unwrap() <= report["x_eq"].as_f64().unwrap());
    assert!(report["narrative"].as_str().unwrap().starts_with("ECHO: "));
}

#[tokio::test]
async fn structured_errors() {
    let h = Harness::start(MockScript::echo()).await;
    let inverted = json!({ "base_metal": "Pt", "support": "CeO2", "prep_method": "wi", "temperature_range": [350.0, 300.0] });
    let (status, body) = h.post("/inverse/jobs", &inverted).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["code"], "InvalidSettings");
    assert!(body["message"].is_string());

    let (status, body) = h.post("/inverse/jobs", &json!({ "base_metal": "Pt" })).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["code"], "InvalidSettings");

    let (status, body) = h.get("/inverse/jobs/nope").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["code"], "UnknownJob");

    let (status, body) = h.get("/no/such/endpoint").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["code"], "NotFound");

    let resp = h.http.post(h.url("/chat")).body("{not json").header("content-type", "application/json").send().await.unwrap();
    assert_eq!(resp.status(), StatusCode::BAD_REQUEST);
    let body: Value = resp.json().await.unwrap();
    assert_eq!(body["code"], "BadRequest");

    let (status, body) = h.post("/comprehend", &json!({ "ref_id": "R30", "question": "What?" })).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["code"], "ArticleNotIndexed");

    let (status, body) = h.get("/articles?dsl=SELECT%20nothing").await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["code"], "InvalidQuery");
}

#[tokio::test]
async fn articles_catalog_and_direct_comprehension() {
    let h = Harness::start(MockScript::echo()).await;
    let (status, body) = h.get("/articles").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["articles"].as_array().unwrap().len(), 82);

    let (_, body) = h.get("/articles?dsl=SELECT%20ref_id%20WHERE%20abstract%20CONTAINS%20'MoC'").await;
    assert_eq!(body["rows"], json!([["R51"], ["R71"]]));
    assert_eq!(body["columns"], json!(["ref_id"]));

    let (status, cat) = h.get("/catalog").await;
    assert_eq!(status, StatusCode::OK);
    for group in ["base_metals", "supports", "promoters", "prep_methods"] {
        assert!(!cat[group].as_array().unwrap().is_empty(), "{group}");
    }

    let (status, ans) = h.post("/comprehend", &json!({ "ref_id": "R71", "question": "Which support is used?", "k": 2 })).await;
    assert_eq!(status, StatusCode::OK, "{ans}");
    assert_eq!(ans["sources"].as_array().unwrap().len(), 2);
    assert!(ans["text"].as_str().unwrap().contains("Which support is used?"));
}

#[tokio::test]
async fn sessions_keep_their_own_active_article() {
    let script = MockScript::echo();
    let h = Harness::start(script).await;
    let a = h.chat("a", "Comprehend the article of reference ID R71.").await;
    assert_eq!(a["active_article"], "R71");
    assert!(a["answer"].as_str().unwrap().starts_with("Ready to retrieve information from the article R71."));
    let b = h.chat("b", "Comprehend the article of reference ID R51.").await;
    assert_eq!(b["active_article"], "R51");

    let follow = h.chat("a", "Extract the name of the catalysts mentioned in the article.").await;
    assert_eq!(follow["routed_kind"], "Comprehend");
    assert_eq!(follow["active_article"], "R71");
    let prompt = h.mock.prompts().pop().unwrap();
    assert!(prompt.contains("Article: R71"), "{prompt}");
    assert!(!follow["sources"].as_array().unwrap().is_empty());

    let in_context = h.chat("b", "What is the water-gas shift reaction?").await;
    assert_eq!(in_context["routed_kind"], "Comprehend");
    assert_eq!(in_context["active_article"], "R51");

    let general = h.chat("c", "What is the water-gas shift reaction?").await;
    assert_eq!(general["routed_kind"], "General");
    assert!(general["timing_ms"].is_u64());
}

#[tokio::test]
async fn extract_turn_returns_dsl_and_table() {
    let script = MockScript::echo().with_rule("published in the year 2021", "SELECT ref_id WHERE year EQ 2021 LIMIT 3");
    let h = Harness::start(script).await;
    let turn = h.chat("x", "Extract the references for all papers that were published in the year 2021.").await;
    assert_eq!(turn["routed_kind"], "Extract");
    assert_eq!(turn["dsl"], "SELECT ref_id WHERE year EQ 2021 LIMIT 3");
    assert_eq!(turn["table"]["rows"], json!([["R71"], ["R72"], ["R73"]]));
}
