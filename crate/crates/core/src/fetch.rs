//! Page fetching: live HTTP and a directory-backed corpus.
//!
//! Corpus layout: `<root>/<host>/<encoded>.html` serves `http://<host>/<path>`,
//! where `<encoded>` is the path (without its leading `/`, plus `?query`
//! when present) percent-encoded with every byte outside `A-Za-z0-9-._~`
//! escaped. The root path maps to `index`. Missing files answer 404.

use std::path::{Path, PathBuf};
use std::time::Duration;

use percent_encoding::{utf8_percent_encode, AsciiSet, NON_ALPHANUMERIC};

use crate::site::{parse_url, Url};

const PATH_ESCAPE: &AsciiSet = &NON_ALPHANUMERIC
    .remove(b'-')
    .remove(b'.')
    .remove(b'_')
    .remove(b'~');

pub const MAX_REDIRECTS: u32 = 5;

#[derive(Debug, Clone)]
pub struct FetchResponse {
    /// URL after following redirects.
    pub final_url: Url,
    pub status: u16,
    pub content_type: Option<String>,
    pub body: Vec<u8>,
}

impl FetchResponse {
    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }

    pub fn is_html(&self) -> bool {
        self.content_type
            .as_deref()
            .map(|ct| ct.to_ascii_lowercase().starts_with("text/html"))
            .unwrap_or(false)
    }
}

/// Transport-level failure: DNS, connection, timeout, too many redirects.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("fetch failed for {url}: {reason}")]
pub struct FetchError {
    pub url: String,
    pub reason: String,
}

pub trait Fetcher: Send + Sync {
    fn fetch(&self, url: &Url) -> Result<FetchResponse, FetchError>;
}

/// Relative file path serving `url` inside a corpus directory.
pub fn corpus_relative_path(url: &Url) -> PathBuf {
    let mut target = url.path().trim_start_matches('/').to_string();
    if let Some(q) = url.query() {
        target.push('?');
        target.push_str(q);
    }
    if target.is_empty() {
        target = "index".to_string();
    }
    let encoded = utf8_percent_encode(&target, PATH_ESCAPE).to_string();
    let mut host = url.host().to_string();
    if let Some(port) = url.port() {
        host = format!("{host}%3A{port}");
    }
    PathBuf::from(host).join(format!("{encoded}.html"))
}

#[derive(Debug, Clone)]
pub struct CorpusFetcher {
    root: PathBuf,
}

impl CorpusFetcher {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        CorpusFetcher { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }
}

impl Fetcher for CorpusFetcher {
    fn fetch(&self, url: &Url) -> Result<FetchResponse, FetchError> {
        let path = self.root.join(corpus_relative_path(url));
        match std::fs::read(&path) {
            Ok(body) => Ok(FetchResponse {
                final_url: url.clone(),
                status: 200,
                content_type: Some("text/html; charset=utf-8".into()),
                body,
            }),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(FetchResponse {
                final_url: url.clone(),
                status: 404,
                content_type: None,
                body: Vec::new(),
            }),
            Err(e) => Err(FetchError {
                url: url.to_string(),
                reason: e.to_string(),
            }),
        }
    }
}

/// Blocking HTTP fetcher. Follows up to [`MAX_REDIRECTS`] redirects.
pub struct HttpFetcher {
    agent: ureq::Agent,
}

impl HttpFetcher {
    pub fn new(user_agent: &str, timeout: Duration) -> Self {
        let agent = ureq::AgentBuilder::new()
            .user_agent(user_agent)
            .timeout(timeout)
            .redirects(MAX_REDIRECTS)
            .build();
        HttpFetcher { agent }
    }
}

impl Fetcher for HttpFetcher {
    fn fetch(&self, url: &Url) -> Result<FetchResponse, FetchError> {
        let fail = |reason: String| FetchError {
            url: url.to_string(),
            reason,
        };
        let response = match self.agent.get(url.as_str()).call() {
            Ok(r) => r,
            Err(ureq::Error::Status(_, r)) => r,
            Err(e) => return Err(fail(e.to_string())),
        };
        let final_url = parse_url(response.get_url()).unwrap_or_else(|_| url.clone());
        let status = response.status();
        let content_type = response.header("content-type").map(str::to_string);
        let mut body = Vec::new();
        std::io::Read::read_to_end(&mut response.into_reader(), &mut body)
            .map_err(|e| fail(e.to_string()))?;
        Ok(FetchResponse {
            final_url,
            status,
            content_type,
            body,
        })
    }
}
