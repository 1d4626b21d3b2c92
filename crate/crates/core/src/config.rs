//! Service configuration, read from a TOML file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::asymmetry::Stopwords;
use crate::domain::CaseScenario;
use crate::prompts::PromptTemplates;
use crate::provider::ProviderConfig;
use crate::session::SessionOptions;

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parsing {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub data_dir: PathBuf,
    pub cases_dir: PathBuf,
    pub bind: String,
    pub max_upload_bytes: usize,
    /// Turns processed at once across all sessions.
    pub max_concurrent_turns: usize,
    /// Environment variable holding a static bearer token. Requests are
    /// unauthenticated when unset.
    pub bearer_token_env: Option<String>,
    /// Overrides for the built-in prompt templates and stopword list.
    pub prompts_path: Option<PathBuf>,
    pub stopwords_path: Option<PathBuf>,
    pub session: SessionOptions,
    pub provider: ProviderConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            data_dir: PathBuf::from("data"),
            cases_dir: PathBuf::from("cases"),
            bind: "127.0.0.1:8080".into(),
            max_upload_bytes: 10 * 1024 * 1024,
            max_concurrent_turns: 16,
            bearer_token_env: None,
            prompts_path: None,
            stopwords_path: None,
            session: SessionOptions::default(),
            provider: ProviderConfig::default(),
        }
    }
}

impl Config {
    pub fn parse(src: &str) -> Result<Self, String> {
        let c: Config = toml::from_str(src).map_err(|e| e.to_string())?;
        if c.max_concurrent_turns == 0 {
            return Err("max_concurrent_turns must be positive".into());
        }
        if c.session.window == 0 || c.session.turn_budget == 0 {
            return Err("session.window and session.turn_budget must be positive".into());
        }
        Ok(c)
    }

    /// Loads `path`; relative paths inside the file resolve against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self, LoadError> {
        let src = std::fs::read_to_string(path).map_err(|source| LoadError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut c = Self::parse(&src).map_err(|message| LoadError::Parse {
            path: path.to_path_buf(),
            message,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        rebase(&mut c.data_dir);
        rebase(&mut c.cases_dir);
        for p in [&mut c.prompts_path, &mut c.stopwords_path, &mut c.provider.fixture_path]
            .into_iter()
            .flatten()
        {
            rebase(p);
        }
        Ok(c)
    }

    pub fn templates(&self) -> Result<PromptTemplates, LoadError> {
        match &self.prompts_path {
            None => Ok(PromptTemplates::builtin().clone()),
            Some(p) => PromptTemplates::load(p).map_err(|e| LoadError::Invalid {
                path: p.clone(),
                message: e.to_string(),
            }),
        }
    }

    pub fn stopwords(&self) -> Result<Stopwords, LoadError> {
        match &self.stopwords_path {
            None => Ok(Stopwords::builtin().clone()),
            Some(p) => Stopwords::load(p).map_err(|source| LoadError::Io { path: p.clone(), source }),
        }
    }

    pub fn bearer_token(&self) -> Option<String> {
        self.bearer_token_env.as_ref().and_then(|v| std::env::var(v).ok())
    }
}

pub fn load_case(path: &Path) -> Result<CaseScenario, LoadError> {
    let src = std::fs::read_to_string(path).map_err(|source| LoadError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let case: CaseScenario = serde_json::from_str(&src).map_err(|e| LoadError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    case.validate().map_err(|e| LoadError::Invalid {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(case)
}

/// Every `*.json` case in `dir`, sorted by case id.
pub fn load_case_library(dir: &Path) -> Result<Vec<CaseScenario>, LoadError> {
    let rd = std::fs::read_dir(dir).map_err(|source| LoadError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut cases = Vec::new();
    for entry in rd {
        let path = entry
            .map_err(|source| LoadError::Io {
                path: dir.to_path_buf(),
                source,
            })?
            .path();
        if path.extension().is_some_and(|e| e == "json") {
            cases.push(load_case(&path)?);
        }
    }
    cases.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    Ok(cases)
}
