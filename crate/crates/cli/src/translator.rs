//! Translator backends selectable from the command line.

use std::collections::HashMap;
use std::path::Path;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use patimt_core::corpus::LangPair;
use patimt_core::instruct::{DictionaryTranslator, TranslateError, Translator};

pub const TOKEN_ENV: &str = "PATIMT_TRANSLATOR_TOKEN";

/// JSON-over-HTTP client. Sends `{"text", "source", "target"}` and expects
/// `{"translation"}` back. A bearer token is taken from the environment.
pub struct HttpTranslator {
    endpoint: String,
    token: Option<String>,
    agent: ureq::Agent,
    serial: bool,
}

#[derive(Deserialize)]
struct Reply {
    translation: String,
}

impl HttpTranslator {
    pub fn new(endpoint: impl Into<String>, token: Option<String>, timeout: Duration, serial: bool) -> Self {
        let agent = ureq::Agent::config_builder().timeout_global(Some(timeout)).build().new_agent();
        Self {
            endpoint: endpoint.into(),
            token,
            agent,
            serial,
        }
    }
}

impl Translator for HttpTranslator {
    fn translate(&self, text: &str, pair: LangPair) -> Result<String, TranslateError> {
        let body = serde_json::json!({
            "text": text,
            "source": pair.source_name(),
            "target": pair.target_name(),
        })
        .to_string();
        let mut req = self.agent.post(&self.endpoint).header("Content-Type", "application/json");
        if let Some(t) = &self.token {
            req = req.header("Authorization", format!("Bearer {t}"));
        }
        let mut resp = req.send(body).map_err(|e| match e {
            ureq::Error::Timeout(_) => TranslateError::Timeout,
            ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => TranslateError::Timeout,
            other => TranslateError::Service(other.to_string()),
        })?;
        let raw = resp.body_mut().read_to_string().map_err(|e| TranslateError::Service(e.to_string()))?;
        let reply: Reply = serde_json::from_str(&raw).map_err(|e| TranslateError::Service(format!("bad reply: {e}")))?;
        Ok(reply.translation)
    }

    fn is_serial(&self) -> bool {
        self.serial
    }
}

/// Dictionary stub that also reports itself serial when asked to.
struct SerialWrapper<T: Translator>(T, bool);

impl<T: Translator> Translator for SerialWrapper<T> {
    fn translate(&self, text: &str, pair: LangPair) -> Result<String, TranslateError> {
        self.0.translate(text, pair)
    }

    fn is_serial(&self) -> bool {
        self.1
    }
}

/// Builds a translator from `dict:PATH` (a JSON object of source → target)
/// or an `http://` / `https://` endpoint.
pub fn from_spec(spec: &str, serial: bool, timeout: Duration) -> Result<Box<dyn Translator>> {
    if let Some(path) = spec.strip_prefix("dict:") {
        let text = std::fs::read_to_string(Path::new(path)).with_context(|| format!("reading dictionary {path}"))?;
        let entries: HashMap<String, String> = serde_json::from_str(&text).with_context(|| format!("parsing dictionary {path}"))?;
        return Ok(Box::new(SerialWrapper(DictionaryTranslator::new(entries), serial)));
    }
    if spec.starts_with("http://") || spec.starts_with("https://") {
        let token = std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty());
        return Ok(Box::new(HttpTranslator::new(spec, token, timeout, serial)));
    }
    bail!("translator must be dict:PATH or an http(s) URL, got {spec:?}")
}
