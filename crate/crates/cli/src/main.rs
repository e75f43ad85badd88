use std::fmt::Display;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use acewgs_core::catalog::Catalog;
use acewgs_core::config::AppConfig;
use acewgs_core::corpus::{self, Corpus};
use acewgs_core::index::VectorIndex;
use acewgs_core::inverse::{self, InverseJob, JobStatus, ParameterSettings};
use acewgs_core::llm::{LanguageModel, LlmClient, MockScript, MockServer};
use acewgs_core::query;
use acewgs_core::rag::{ComprehensionRequest, Comprehender};
use acewgs_core::service::{self, AppState};
use acewgs_core::surrogate::{reference_bundle, ModelBundle, Surrogate};
use clap::{Parser, Subcommand};
use serde_json::json;

#[derive(Parser)]
#[command(name = "acewgs", version, about = "Literature assistant and inverse catalyst design for the water-gas shift reaction")]
struct Cli {
    /// Config file; falls back to $ACEWGS_CONFIG, then built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a corpus directory (manifest.csv plus corpus/<ref_id>.txt).
    Ingest { dir: PathBuf },
    #[command(subcommand)]
    Index(IndexCommand),
    /// Run a DSL query against the manifest without the model.
    Query { dsl: String },
    /// Answer a question about one article.
    Comprehend { ref_id: String, question: String },
    /// Search for the best catalyst design.
    Inverse {
        #[arg(long)]
        settings: PathBuf,
        /// Poll until the job finishes and print it.
        #[arg(long)]
        wait: bool,
        /// Run in this process instead of submitting to a server.
        #[arg(long)]
        local: bool,
        /// Server base URL; defaults to the configured bind address.
        #[arg(long)]
        server: Option<String>,
        #[arg(long, default_value_t = 600)]
        timeout_secs: u64,
    },
    /// Start the HTTP service.
    Serve {
        #[arg(long)]
        bind: Option<String>,
    },
    /// Answer every line of a question file, one JSON line per answer.
    EvalRun {
        questions: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve a scripted model backend.
    MockLlm {
        #[arg(long, default_value_t = 11434)]
        port: u16,
        /// Tab-separated `pattern<TAB>response` rules.
        #[arg(long)]
        script: Option<PathBuf>,
        /// Reply to unmatched prompts with this text instead of echoing.
        #[arg(long)]
        canned: Option<String>,
    },
    /// Write the reference surrogate bundle.
    GenBundle {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        catalog: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum IndexCommand {
    /// Embed every article with text and write the index file.
    Build,
    /// Nearest chunks to a text.
    Search {
        #[arg(long = "ref")]
        ref_id: Option<String>,
        #[arg(short, default_value_t = 4)]
        k: usize,
        text: String,
    },
}

struct CliError {
    code: &'static str,
    message: String,
}

fn err(code: &'static str) -> impl FnOnce(&dyn Display) -> CliError {
    move |e| CliError { code, message: e.to_string() }
}

macro_rules! tryc {
    ($code:literal, $e:expr) => {
        $e.map_err(|e| err($code)(&e))?
    };
}

type CliResult = Result<(), CliError>;

fn llm_client(cfg: &AppConfig) -> Result<Arc<dyn LanguageModel>, CliError> {
    Ok(Arc::new(tryc!("LlmConfig", LlmClient::new(cfg.llm.clone()))))
}

fn print_json(v: &impl serde::Serialize) -> CliResult {
    println!("{}", tryc!("Output", serde_json::to_string(v)));
    Ok(())
}

fn load_catalog(path: Option<&Path>) -> Result<Catalog, CliError> {
    Ok(match path {
        Some(p) => tryc!("Catalog", Catalog::load(p)),
        None => Catalog::default(),
    })
}

async fn run(cli: Cli) -> CliResult {
    let cfg = || AppConfig::resolve(cli.config.as_deref()).map_err(|e| err("Config")(&e));
    match cli.command {
        Command::Ingest { dir } => print_json(&tryc!("Corpus", corpus::validate_layout(&dir))),
        Command::Index(IndexCommand::Build) => {
            let cfg = cfg()?;
            let llm = llm_client(&cfg)?;
            let corpus = tryc!("Corpus", Corpus::open(&cfg.corpus.dir));
            let comprehender = Comprehender::default().with_chunking(cfg.corpus.chunk_size, cfg.corpus.chunk_overlap);
            let articles = tryc!("Index", service::build_index(&comprehender, &corpus, llm.as_ref()).await);
            if let Some(dir) = cfg.corpus.index_path.parent() {
                tryc!("Io", std::fs::create_dir_all(dir));
            }
            tryc!("Index", comprehender.save(&cfg.corpus.index_path));
            print_json(&json!({
                "articles": articles,
                "entries": comprehender.index().len(),
                "path": cfg.corpus.index_path,
            }))
        }
        Command::Index(IndexCommand::Search { ref_id, k, text }) => {
            let cfg = cfg()?;
            let llm = llm_client(&cfg)?;
            let index = tryc!("Index", VectorIndex::load(&cfg.corpus.index_path));
            let q = tryc!("Llm", llm.embed(&text).await);
            for hit in tryc!("Index", index.search(q.values(), k, ref_id.as_deref())) {
                print_json(&hit)?;
            }
            Ok(())
        }
        Command::Query { dsl } => {
            let cfg = cfg()?;
            let plan = tryc!("InvalidQuery", query::parse_dsl(&dsl));
            let corpus = tryc!("Corpus", Corpus::open(&cfg.corpus.dir));
            let table = query::execute(&plan, corpus.articles());
            if !table.rows.is_empty() {
                println!("{}", table.to_text());
            }
            Ok(())
        }
        Command::Comprehend { ref_id, question } => {
            let cfg = cfg()?;
            let llm = llm_client(&cfg)?;
            let corpus = tryc!("Corpus", Corpus::open(&cfg.corpus.dir));
            let index = if cfg.corpus.index_path.is_file() {
                tryc!("Index", VectorIndex::load(&cfg.corpus.index_path))
            } else {
                VectorIndex::new()
            };
            let comprehender = Comprehender::new(index).with_chunking(cfg.corpus.chunk_size, cfg.corpus.chunk_overlap);
            if !comprehender.is_indexed(&ref_id) {
                tryc!("ArticleNotIndexed", comprehender.index_article(&ref_id, &corpus, llm.as_ref()).await);
            }
            let req = ComprehensionRequest { ref_id, question, k: cfg.corpus.k };
            print_json(&tryc!("Comprehend", comprehender.answer(&req, llm.as_ref()).await))
        }
        Command::Inverse { settings, wait, local, server, timeout_secs } => {
            let cfg = cfg()?;
            let settings = tryc!("InvalidSettings", ParameterSettings::load(&settings));
            if local {
                let catalog = load_catalog(cfg.corpus.catalog.as_deref())?;
                let bundle = match &cfg.corpus.model_bundle {
                    Some(p) => tryc!("Bundle", ModelBundle::load(p)),
                    None => reference_bundle(&catalog),
                };
                let surrogate = tryc!("Bundle", Surrogate::new(bundle));
                let llm = llm_client(&cfg)?;
                let report = tryc!(
                    "InvalidSettings",
                    inverse::run_inverse(&settings, &catalog, &surrogate, &cfg.pso, Some(llm.as_ref())).await
                );
                return print_json(&report);
            }
            let base = server.unwrap_or_else(|| format!("http://{}", cfg.service.bind));
            submit_remote(&base, &settings, wait, Duration::from_secs(timeout_secs)).await
        }
        Command::Serve { bind } => {
            let mut cfg = cfg()?;
            if let Some(b) = bind {
                cfg.service.bind = b;
            }
            let svc = tryc!("Startup", service::start(&cfg).await);
            print_json(&json!({ "listening": svc.base_url() }))?;
            tryc!("Io", tokio::signal::ctrl_c().await);
            svc.stop().await;
            Ok(())
        }
        Command::EvalRun { questions, out } => {
            let cfg = cfg()?;
            let text = tryc!("Io", std::fs::read_to_string(&questions));
            let llm = llm_client(&cfg)?;
            let state = tryc!("Startup", AppState::build(&cfg, llm).await);
            let file = tryc!("Io", std::fs::File::create(&out));
            let mut w = BufWriter::new(file);
            let session = eval_session();
            for q in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
                let started = Instant::now();
                let line = match state.assistant.chat(&session, q).await {
                    Ok(turn) => json!({
                        "question": q,
                        "model": cfg.llm.model_name,
                        "routed_kind": turn.routed_kind,
                        "text": turn.answer,
                        "latency_ms": started.elapsed().as_millis() as u64,
                    }),
                    Err(e) => json!({
                        "question": q,
                        "model": cfg.llm.model_name,
                        "text": "",
                        "error": e.to_string(),
                        "latency_ms": started.elapsed().as_millis() as u64,
                    }),
                };
                tryc!("Io", writeln!(w, "{line}"));
            }
            tryc!("Io", w.flush());
            Ok(())
        }
        Command::MockLlm { port, script, canned } => {
            let mut s = match canned {
                Some(text) => MockScript::canned(text),
                None => MockScript::echo(),
            };
            if let Some(p) = script {
                s.rules = tryc!("Io", MockScript::from_pairs_file(&p)).rules;
            }
            let server = tryc!("Startup", MockServer::start(s, port).await);
            print_json(&json!({ "listening": server.base_url() }))?;
            tryc!("Io", tokio::signal::ctrl_c().await);
            server.stop().await;
            Ok(())
        }
        Command::GenBundle { out, catalog } => {
            let catalog = load_catalog(catalog.as_deref())?;
            let bundle = reference_bundle(&catalog);
            tryc!("Bundle", bundle.save(&out));
            print_json(&json!({ "path": out, "features": bundle.feature_schema.len(), "members": bundle.ensemble.len() }))
        }
    }
}

fn eval_session() -> String {
    format!("eval-{}", std::process::id())
}

async fn submit_remote(base: &str, settings: &ParameterSettings, wait: bool, timeout: Duration) -> CliResult {
    let http = tryc!("Http", reqwest::Client::builder().no_proxy().build());
    let base = base.trim_end_matches('/');
    let resp = tryc!("ConnectionFailed", http.post(format!("{base}/api/v1/inverse/jobs")).json(settings).send().await);
    let status = resp.status();
    let body: serde_json::Value = tryc!("Http", resp.json().await);
    if !status.is_success() {
        return Err(CliError {
            code: "Server",
            message: body.get("message").and_then(|m| m.as_str()).unwrap_or("request failed").to_string(),
        });
    }
    let Some(job_id) = body.get("job_id").and_then(|j| j.as_str()).map(str::to_string) else {
        return Err(CliError { code: "Server", message: "reply has no job_id".into() });
    };
    if !wait {
        return print_json(&body);
    }
    let deadline = Instant::now() + timeout;
    loop {
        let job: InverseJob =
            tryc!("Http", tryc!("ConnectionFailed", http.get(format!("{base}/api/v1/inverse/jobs/{job_id}")).send().await).json().await);
        match job.status {
            JobStatus::Finished => return print_json(&job),
            JobStatus::Failed => {
                return Err(CliError { code: "JobFailed", message: job.error.unwrap_or_default() });
            }
            _ if Instant::now() >= deadline => {
                return Err(CliError { code: "Timeout", message: format!("job {job_id} still {:?}", job.status) });
            }
            _ => tokio::time::sleep(Duration::from_millis(250)).await,
        }
    }
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({ "error": { "code": e.code, "message": e.message } }));
            ExitCode::FAILURE
        }
    }
}
