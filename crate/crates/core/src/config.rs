//! Service configuration: one TOML file with `[llm]`, `[corpus]`, `[pso]`
//! and `[service]` sections. Relative paths resolve against the file's
//! directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{DEFAULT_CHUNK_OVERLAP, DEFAULT_CHUNK_SIZE};
use crate::inverse::{DEFAULT_JOB_CAPACITY, DEFAULT_MAX_CONCURRENT_JOBS};
use crate::llm::LlmConfig;
use crate::pso::PsoConfig;
use crate::rag::DEFAULT_K;

pub const CONFIG_ENV: &str = "ACEWGS_CONFIG";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    /// Holds `manifest.csv` and `corpus/<ref_id>.txt`.
    pub dir: PathBuf,
    pub index_path: PathBuf,
    pub chunk_size: usize,
    pub chunk_overlap: usize,
    /// Retrieved chunks per comprehension question.
    pub k: usize,
    pub rules: Option<PathBuf>,
    pub catalog: Option<PathBuf>,
    pub model_bundle: Option<PathBuf>,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("fixtures"),
            index_path: PathBuf::from("data/index.awvx"),
            chunk_size: DEFAULT_CHUNK_SIZE,
            chunk_overlap: DEFAULT_CHUNK_OVERLAP,
            k: DEFAULT_K,
            rules: None,
            catalog: None,
            model_bundle: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind: String,
    pub max_concurrent_jobs: usize,
    pub job_capacity: usize,
    pub session_ttl_secs: u64,
    /// Built web client, served at `/` when set.
    pub static_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            max_concurrent_jobs: DEFAULT_MAX_CONCURRENT_JOBS,
            job_capacity: DEFAULT_JOB_CAPACITY,
            session_ttl_secs: 24 * 3600,
            static_dir: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub llm: LlmConfig,
    pub corpus: CorpusConfig,
    pub pso: PsoConfig,
    pub service: ServiceConfig,
}

fn rebase(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl AppConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    /// Reads `path`, resolves relative paths against its directory, applies
    /// `ACEWGS_LLM_URL` and validates.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.rebase(&base);
        cfg.llm = cfg.llm.with_env_override();
        cfg.validate()?;
        Ok(cfg)
    }

    /// `path` if given, else `$ACEWGS_CONFIG`, else defaults relative to the
    /// working directory.
    pub fn resolve(path: Option<&Path>) -> Result<Self, ConfigError> {
        match path.map(Path::to_path_buf).or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from)) {
            Some(p) => Self::load(p),
            None => {
                let mut cfg = Self::default();
                cfg.llm = cfg.llm.with_env_override();
                cfg.validate()?;
                Ok(cfg)
            }
        }
    }

    pub fn rebase(&mut self, base: &Path) {
        let c = &mut self.corpus;
        rebase(base, &mut c.dir);
        rebase(base, &mut c.index_path);
        for p in [&mut c.rules, &mut c.catalog, &mut c.model_bundle].into_iter().flatten() {
            rebase(base, p);
        }
        if let Some(p) = &mut self.service.static_dir {
            rebase(base, p);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.llm.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.pso.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let c = &self.corpus;
        if c.chunk_size == 0 || c.chunk_overlap >= c.chunk_size {
            return Err(ConfigError::Invalid(format!("chunk overlap {} must be below chunk size {}", c.chunk_overlap, c.chunk_size)));
        }
        if c.k == 0 {
            return Err(ConfigError::Invalid("corpus.k must be at least 1".into()));
        }
        if self.service.max_concurrent_jobs == 0 || self.service.job_capacity == 0 {
            return Err(ConfigError::Invalid("job limits must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_parse_and_paths_rebase() {
        let mut cfg = AppConfig::parse(
            "[llm]\nmodel = 'llama3'\ntop_k = 5\n[corpus]\ndir = 'data'\n[pso]\nswarm_size = 10\n[service]\nbind = '0.0.0.0:9000'\n",
        )
        .unwrap();
        cfg.rebase(Path::new("/srv/acewgs"));
        assert_eq!(cfg.llm.model_name, "llama3");
        assert_eq!(cfg.llm.top_p, 0.5);
        assert_eq!(cfg.corpus.dir, PathBuf::from("/srv/acewgs/data"));
        assert_eq!(cfg.pso.swarm_size, 10);
        assert_eq!(cfg.pso.inertia, 0.729);
        assert_eq!(cfg.service.session_ttl_secs, 86_400);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(AppConfig::parse("[corpus]\nfolder = 'x'\n").is_err());
        let cfg = AppConfig::parse("[llm]\ntop_p = 0.0\n").unwrap();
        assert!(matches!(cfg.validate(), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn missing_file_is_an_io_error() {
        assert!(matches!(AppConfig::load("/nonexistent/acewgs.toml"), Err(ConfigError::Io { .. })));
    }
}
