//! Link providers: answer "who links to site X" and "whom does X link to".
//!
//! Providers cap each answer (`max_results`) and report truncation.
//! [`query_all_links`] works around the cap by re-issuing the query with
//! every counterpart site seen so far added as an exclusion, until the
//! provider stops reporting truncation.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Clock;
use crate::crawler::CrawlResult;
use crate::links::{LinkRecord, ProviderTag};
use crate::site::{parse_url, reduce_host, Granularity, SiteKey, SuffixTable, Url};

pub const DEFAULT_MAX_RESULTS: usize = 1000;
pub const MAX_SPLIT_ROUNDS: usize = 50;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProviderError {
    /// Retryable: network failure, rate limiting, server error.
    #[error("provider {provider} unavailable: {reason}")]
    Unavailable { provider: String, reason: String },
    #[error("provider {provider} cannot answer: {reason}")]
    Capability { provider: String, reason: String },
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("link index io: {0}")]
    Io(String),
}

impl ProviderError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, ProviderError::Unavailable { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Inlinks,
    Outlinks,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkQuery {
    /// Target site for inlinks, source site for outlinks.
    pub key: SiteKey,
    pub direction: Direction,
    pub granularity: Granularity,
    /// Counterpart sites to leave out of the answer.
    pub exclusions: Vec<SiteKey>,
    pub max_results: usize,
}

impl LinkQuery {
    pub fn new(key: SiteKey, direction: Direction, granularity: Granularity) -> Self {
        LinkQuery {
            key,
            direction,
            granularity,
            exclusions: Vec::new(),
            max_results: DEFAULT_MAX_RESULTS,
        }
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.max_results < 1 {
            return Err(ProviderError::InvalidQuery("max_results must be >= 1".into()));
        }
        let distinct: BTreeSet<&SiteKey> = self.exclusions.iter().collect();
        if distinct.len() != self.exclusions.len() {
            return Err(ProviderError::InvalidQuery("duplicate exclusion".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryPage {
    pub records: Vec<LinkRecord>,
    pub truncated: bool,
}

/// How far a provider supports one direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Support {
    None,
    /// Only registrable-domain keys can be queried.
    Domain,
    Full,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub inlinks: Support,
    pub outlinks: Support,
    /// Whether exclusion refinement (needed for query splitting) works.
    #[serde(default = "yes")]
    pub exclusions: bool,
    #[serde(default)]
    pub max_exclusions: Option<usize>,
}

fn yes() -> bool {
    true
}

impl Capabilities {
    pub fn full() -> Self {
        Capabilities {
            inlinks: Support::Full,
            outlinks: Support::Full,
            exclusions: true,
            max_exclusions: None,
        }
    }

    pub fn support(&self, direction: Direction) -> Support {
        match direction {
            Direction::Inlinks => self.inlinks,
            Direction::Outlinks => self.outlinks,
        }
    }

    /// Whether a query for `key` in `direction` can be answered.
    pub fn can_answer(&self, key: &SiteKey, direction: Direction, table: &SuffixTable) -> bool {
        match self.support(direction) {
            Support::None => false,
            Support::Full => true,
            Support::Domain => table.registrable_domain(key.as_str()) == Some(key.as_str()),
        }
    }
}

pub trait LinkProvider: Send + Sync {
    fn name(&self) -> &str;
    /// Answered from static configuration; never touches the backend.
    fn capabilities(&self) -> Capabilities;
    fn query_links(&self, q: &LinkQuery) -> Result<QueryPage, ProviderError>;
}

pub fn provider_capabilities(provider: &dyn LinkProvider) -> Capabilities {
    provider.capabilities()
}

fn counterpart(r: &LinkRecord, direction: Direction) -> &SiteKey {
    match direction {
        Direction::Inlinks => &r.source,
        Direction::Outlinks => &r.target,
    }
}

/// Result of an exhaustive, split harvest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Harvest {
    /// Unique by (source, target), sorted.
    pub records: Vec<LinkRecord>,
    pub rounds: usize,
    /// Records returned across all rounds before deduplication.
    pub hits: usize,
    /// Set when splitting stopped while the provider still reported truncation.
    pub partial: Option<String>,
}

impl Harvest {
    pub fn is_complete(&self) -> bool {
        self.partial.is_none()
    }
}

/// Query with automatic splitting; see the module docs.
pub fn query_all_links(
    provider: &dyn LinkProvider,
    key: &SiteKey,
    direction: Direction,
    granularity: Granularity,
    cap: usize,
) -> Result<Harvest, ProviderError> {
    query_all_links_with_rounds(provider, key, direction, granularity, cap, MAX_SPLIT_ROUNDS)
}

pub fn query_all_links_with_rounds(
    provider: &dyn LinkProvider,
    key: &SiteKey,
    direction: Direction,
    granularity: Granularity,
    cap: usize,
    max_rounds: usize,
) -> Result<Harvest, ProviderError> {
    let caps = provider.capabilities();
    let mut query = LinkQuery {
        key: key.clone(),
        direction,
        granularity,
        exclusions: Vec::new(),
        max_results: cap,
    };
    let mut excluded: BTreeSet<SiteKey> = BTreeSet::new();
    let mut found: BTreeMap<(SiteKey, SiteKey), LinkRecord> = BTreeMap::new();
    let mut rounds = 0;
    let mut hits = 0;

    let partial = loop {
        let page = provider.query_links(&query)?;
        rounds += 1;
        hits += page.records.len();
        let mut fresh: BTreeSet<SiteKey> = BTreeSet::new();
        for r in page.records {
            let other = counterpart(&r, direction).clone();
            if !excluded.contains(&other) {
                fresh.insert(other);
            }
            found
                .entry((r.source.clone(), r.target.clone()))
                .or_insert(r);
        }
        if !page.truncated {
            break None;
        }
        if fresh.is_empty() {
            break Some(format!(
                "{}: truncated answer for {key} contained no new sites",
                provider.name()
            ));
        }
        if !caps.exclusions {
            break Some(format!("{}: cannot refine queries by exclusion", provider.name()));
        }
        excluded.extend(fresh);
        if let Some(max) = caps.max_exclusions {
            if excluded.len() > max {
                break Some(format!(
                    "{}: exclusion capacity {max} exhausted for {key}",
                    provider.name()
                ));
            }
        }
        if rounds >= max_rounds {
            break Some(format!(
                "{}: still truncated for {key} after {rounds} rounds",
                provider.name()
            ));
        }
        query.exclusions = excluded.iter().cloned().collect();
    };

    Ok(Harvest {
        records: found.into_values().collect(),
        rounds,
        hits,
        partial,
    })
}

#[derive(Debug, Clone)]
struct IndexedLink {
    source_url: Url,
    target_url: Url,
    // [domain, subdomain] keys
    source_keys: [SiteKey; 2],
    target_keys: [SiteKey; 2],
}

fn gidx(g: Granularity) -> usize {
    match g {
        Granularity::Domain => 0,
        Granularity::Subdomain => 1,
    }
}

/// Offline link index over URL-level links, answering both directions at
/// both granularities. Immutable after construction.
#[derive(Debug, Clone)]
pub struct LocalIndex {
    name: String,
    retrieved_at: u64,
    links: Vec<IndexedLink>,
    by_target: [HashMap<SiteKey, Vec<usize>>; 2],
    by_source: [HashMap<SiteKey, Vec<usize>>; 2],
}

impl LocalIndex {
    /// Build from URL-level links. Links whose hosts cannot be reduced (a
    /// bare public suffix) are dropped; duplicates collapse.
    pub fn from_links(
        name: impl Into<String>,
        retrieved_at: u64,
        links: impl IntoIterator<Item = (Url, Url)>,
        table: &SuffixTable,
    ) -> LocalIndex {
        let unique: BTreeSet<(Url, Url)> = links.into_iter().collect();
        let keys = |u: &Url| -> Option<[SiteKey; 2]> {
            Some([
                reduce_host(u.host(), Granularity::Domain, table).ok()?,
                reduce_host(u.host(), Granularity::Subdomain, table).ok()?,
            ])
        };
        let mut index = LocalIndex {
            name: name.into(),
            retrieved_at,
            links: Vec::new(),
            by_target: Default::default(),
            by_source: Default::default(),
        };
        for (source_url, target_url) in unique {
            let (Some(source_keys), Some(target_keys)) = (keys(&source_url), keys(&target_url))
            else {
                continue;
            };
            let i = index.links.len();
            for g in 0..2 {
                index.by_source[g].entry(source_keys[g].clone()).or_default().push(i);
                index.by_target[g].entry(target_keys[g].clone()).or_default().push(i);
            }
            index.links.push(IndexedLink {
                source_url,
                target_url,
                source_keys,
                target_keys,
            });
        }
        index
    }

    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    /// URL-level links, sorted by (source, target).
    pub fn links(&self) -> impl Iterator<Item = (&Url, &Url)> {
        self.links.iter().map(|l| (&l.source_url, &l.target_url))
    }

    /// Every cross-site link at `granularity`, as (source, target) keys.
    pub fn site_links(&self, granularity: Granularity) -> BTreeSet<(SiteKey, SiteKey)> {
        let g = gidx(granularity);
        self.links
            .iter()
            .filter(|l| l.source_keys[g] != l.target_keys[g])
            .map(|l| (l.source_keys[g].clone(), l.target_keys[g].clone()))
            .collect()
    }

    /// Write `forward.tsv` (sorted by source) and `reverse.tsv` (sorted by
    /// target), both with columns `source_url<TAB>target_url`.
    pub fn save(&self, dir: &Path) -> Result<(), ProviderError> {
        let io = |e: std::io::Error| ProviderError::Io(e.to_string());
        std::fs::create_dir_all(dir).map_err(io)?;
        let mut forward: Vec<(&Url, &Url)> = self.links().collect();
        forward.sort();
        let mut reverse = forward.clone();
        reverse.sort_by(|a, b| (a.1, a.0).cmp(&(b.1, b.0)));
        for (file, rows) in [("forward.tsv", forward), ("reverse.tsv", reverse)] {
            let mut out = std::io::BufWriter::new(std::fs::File::create(dir.join(file)).map_err(io)?);
            for (s, t) in rows {
                writeln!(out, "{s}\t{t}").map_err(io)?;
            }
            out.flush().map_err(io)?;
        }
        Ok(())
    }

    /// Load from a directory written by [`LocalIndex::save`]. The reverse
    /// file must hold the same link set as the forward file.
    pub fn load(
        dir: &Path,
        name: impl Into<String>,
        retrieved_at: u64,
        table: &SuffixTable,
    ) -> Result<LocalIndex, ProviderError> {
        let forward = read_tsv(&dir.join("forward.tsv"))?;
        let reverse_path = dir.join("reverse.tsv");
        if reverse_path.exists() {
            let reverse = read_tsv(&reverse_path)?;
            let a: BTreeSet<_> = forward.iter().collect();
            let b: BTreeSet<_> = reverse.iter().collect();
            if a != b {
                return Err(ProviderError::Io(format!(
                    "{} disagrees with forward.tsv",
                    reverse_path.display()
                )));
            }
        }
        Ok(LocalIndex::from_links(name, retrieved_at, forward, table))
    }
}

fn read_tsv(path: &Path) -> Result<Vec<(Url, Url)>, ProviderError> {
    let file = std::fs::File::open(path)
        .map_err(|e| ProviderError::Io(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| ProviderError::Io(e.to_string()))?;
        if line.is_empty() {
            continue;
        }
        let bad = || ProviderError::Io(format!("{}:{}: malformed row", path.display(), n + 1));
        let (s, t) = line.split_once('\t').ok_or_else(bad)?;
        let s = parse_url(s).map_err(|_| bad())?;
        let t = parse_url(t).map_err(|_| bad())?;
        out.push((s, t));
    }
    Ok(out)
}

/// Build a local index named `crawl` from crawl results' site outlinks.
pub fn build_inverted_index(results: &[CrawlResult], table: &SuffixTable) -> LocalIndex {
    build_inverted_index_named(crate::crawler::CRAWL_PROVIDER, results, table)
}

pub fn build_inverted_index_named(
    name: &str,
    results: &[CrawlResult],
    table: &SuffixTable,
) -> LocalIndex {
    let retrieved_at = results
        .iter()
        .filter_map(|r| r.site_outlinks.first().map(|l| l.provider.retrieved_at))
        .min()
        .unwrap_or(0);
    let links = results.iter().flat_map(|r| {
        r.site_outlinks.iter().filter_map(|l| {
            let s = l
                .source_url
                .clone()
                .or_else(|| parse_url(l.source.as_str()).ok())?;
            let t = l
                .target_url
                .clone()
                .or_else(|| parse_url(l.target.as_str()).ok())?;
            Some((s, t))
        })
    });
    LocalIndex::from_links(name, retrieved_at, links, table)
}

impl LinkProvider for LocalIndex {
    fn name(&self) -> &str {
        &self.name
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities::full()
    }

    fn query_links(&self, q: &LinkQuery) -> Result<QueryPage, ProviderError> {
        q.validate()?;
        let g = gidx(q.granularity);
        let bucket = match q.direction {
            Direction::Inlinks => self.by_target[g].get(&q.key),
            Direction::Outlinks => self.by_source[g].get(&q.key),
        };
        let excluded: BTreeSet<&SiteKey> = q.exclusions.iter().collect();
        let mut hits: Vec<&IndexedLink> = bucket
            .into_iter()
            .flatten()
            .map(|&i| &self.links[i])
            .filter(|l| l.source_keys[g] != l.target_keys[g])
            .filter(|l| {
                let other = match q.direction {
                    Direction::Inlinks => &l.source_keys[g],
                    Direction::Outlinks => &l.target_keys[g],
                };
                !excluded.contains(other)
            })
            .collect();
        hits.sort_by(|a, b| {
            let ka = (&a.source_keys[g], &a.target_keys[g], &a.source_url, &a.target_url);
            let kb = (&b.source_keys[g], &b.target_keys[g], &b.source_url, &b.target_url);
            ka.cmp(&kb)
        });
        let truncated = hits.len() > q.max_results;
        let tag = ProviderTag::new(self.name.clone(), self.retrieved_at);
        let records = hits
            .into_iter()
            .take(q.max_results)
            .map(|l| LinkRecord {
                source: l.source_keys[g].clone(),
                target: l.target_keys[g].clone(),
                provider: tag.clone(),
                source_url: Some(l.source_url.clone()),
                target_url: Some(l.target_url.clone()),
            })
            .collect();
        Ok(QueryPage { records, truncated })
    }
}

/// Configuration of an external backlink index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalAdapterConfig {
    pub name: String,
    pub endpoint: String,
    /// Environment variable holding the API key, if the service needs one.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_max_results")]
    pub max_results: usize,
    #[serde(default = "default_rate")]
    pub rate_per_minute: u32,
    pub capabilities: Capabilities,
}

fn default_max_results() -> usize {
    DEFAULT_MAX_RESULTS
}

fn default_rate() -> u32 {
    60
}

/// One request to an external index, in transport-neutral form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExternalRequest {
    pub endpoint: String,
    pub site: String,
    pub direction: Direction,
    pub exclude: Vec<String>,
    pub max: usize,
    pub api_key: Option<String>,
}

/// Response body: `{"links": [{"source_url", "target_url"}], "truncated": bool}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalResponse {
    pub links: Vec<ExternalLink>,
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalLink {
    pub source_url: String,
    pub target_url: String,
}

pub trait Transport: Send + Sync {
    fn send(&self, req: &ExternalRequest) -> Result<ExternalResponse, ProviderError>;
}

/// `GET {endpoint}?site=..&direction=..&max=..&exclude=a,b` with an optional
/// bearer token.
pub struct HttpTransport {
    agent: ureq::Agent,
    provider: String,
}

impl HttpTransport {
    pub fn new(provider: &str, timeout: Duration) -> Self {
        HttpTransport {
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
            provider: provider.to_string(),
        }
    }
}

impl Transport for HttpTransport {
    fn send(&self, req: &ExternalRequest) -> Result<ExternalResponse, ProviderError> {
        let direction = match req.direction {
            Direction::Inlinks => "inlinks",
            Direction::Outlinks => "outlinks",
        };
        let mut call = self
            .agent
            .get(&req.endpoint)
            .query("site", &req.site)
            .query("direction", direction)
            .query("max", &req.max.to_string());
        if !req.exclude.is_empty() {
            call = call.query("exclude", &req.exclude.join(","));
        }
        if let Some(key) = &req.api_key {
            call = call.set("Authorization", &format!("Bearer {key}"));
        }
        let unavailable = |reason: String| ProviderError::Unavailable {
            provider: self.provider.clone(),
            reason,
        };
        match call.call() {
            Ok(resp) => {
                let body = resp
                    .into_string()
                    .map_err(|e| unavailable(format!("reading body: {e}")))?;
                serde_json::from_str(&body)
                    .map_err(|e| unavailable(format!("bad response body: {e}")))
            }
            Err(ureq::Error::Status(code, _)) if code == 429 || code >= 500 => {
                Err(unavailable(format!("HTTP {code}")))
            }
            Err(ureq::Error::Status(code, _)) => Err(ProviderError::Capability {
                provider: self.provider.clone(),
                reason: format!("HTTP {code}"),
            }),
            Err(e) => Err(unavailable(e.to_string())),
        }
    }
}

/// Rate-limited adapter for an external backlink index.
pub struct ExternalProvider {
    config: ExternalAdapterConfig,
    transport: Box<dyn Transport>,
    clock: Arc<dyn Clock>,
    table: Arc<SuffixTable>,
    last_request: Mutex<Option<u64>>,
}

impl ExternalProvider {
    pub fn new(
        config: ExternalAdapterConfig,
        transport: Box<dyn Transport>,
        clock: Arc<dyn Clock>,
        table: Arc<SuffixTable>,
    ) -> Self {
        ExternalProvider {
            config,
            transport,
            clock,
            table,
            last_request: Mutex::new(None),
        }
    }

    pub fn config(&self) -> &ExternalAdapterConfig {
        &self.config
    }

    fn min_interval_ms(&self) -> u64 {
        if self.config.rate_per_minute == 0 {
            0
        } else {
            60_000_u64.div_ceil(self.config.rate_per_minute as u64)
        }
    }
}

impl LinkProvider for ExternalProvider {
    fn name(&self) -> &str {
        &self.config.name
    }

    fn capabilities(&self) -> Capabilities {
        self.config.capabilities.clone()
    }

    fn query_links(&self, q: &LinkQuery) -> Result<QueryPage, ProviderError> {
        q.validate()?;
        if !self.config.capabilities.can_answer(&q.key, q.direction, &self.table) {
            return Err(ProviderError::Capability {
                provider: self.config.name.clone(),
                reason: format!("{:?} for {} not supported", q.direction, q.key),
            });
        }
        let api_key = match &self.config.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| ProviderError::Unavailable {
                provider: self.config.name.clone(),
                reason: format!("environment variable {var} not set"),
            })?),
            None => None,
        };
        let max = q.max_results.min(self.config.max_results.max(1));
        let request = ExternalRequest {
            endpoint: self.config.endpoint.clone(),
            site: q.key.to_string(),
            direction: q.direction,
            exclude: q.exclusions.iter().map(|k| k.to_string()).collect(),
            max,
            api_key,
        };

        // requests are serialized per provider under the rate limit
        let mut last = self.last_request.lock().expect("rate limiter poisoned");
        if let Some(prev) = *last {
            let due = prev + self.min_interval_ms();
            let now = self.clock.now_ms();
            if now < due {
                self.clock.sleep(Duration::from_millis(due - now));
            }
        }
        let sent_at = self.clock.now_ms();
        *last = Some(sent_at);
        let response = self.transport.send(&request)?;
        drop(last);

        let tag = ProviderTag::new(self.config.name.clone(), sent_at);
        let excluded: BTreeSet<&SiteKey> = q.exclusions.iter().collect();
        let mut records = Vec::new();
        for link in response.links {
            let (Ok(s), Ok(t)) = (parse_url(&link.source_url), parse_url(&link.target_url)) else {
                continue;
            };
            let (Ok(source), Ok(target)) = (
                reduce_host(s.host(), q.granularity, &self.table),
                reduce_host(t.host(), q.granularity, &self.table),
            ) else {
                continue;
            };
            let other = match q.direction {
                Direction::Inlinks => &source,
                Direction::Outlinks => &target,
            };
            if excluded.contains(other) {
                continue;
            }
            records.push(LinkRecord {
                source,
                target,
                provider: tag.clone(),
                source_url: Some(s),
                target_url: Some(t),
            });
        }
        let truncated = response.truncated || records.len() > max;
        records.truncate(max);
        Ok(QueryPage { records, truncated })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::VirtualClock;

    fn u(s: &str) -> Url {
        parse_url(s).unwrap()
    }

    fn k(s: &str) -> SiteKey {
        SiteKey::new(s).unwrap()
    }

    fn index(links: &[(&str, &str)]) -> LocalIndex {
        LocalIndex::from_links(
            "index-A",
            0,
            links.iter().map(|(s, t)| (u(s), u(t))),
            &SuffixTable::bundled(),
        )
    }

    /// `n` inlinks to t.com, each from its own source domain.
    fn wide_index(n: usize) -> LocalIndex {
        let links: Vec<(Url, Url)> = (0..n)
            .map(|i| (u(&format!("http://s{i:05}.com/p")), u("http://t.com/")))
            .collect();
        LocalIndex::from_links("synthetic", 0, links, &SuffixTable::bundled())
    }

    #[test]
    fn single_edge_both_directions() {
        let idx = index(&[("http://a.com/x", "http://b.com/y")]);
        let q = LinkQuery::new(k("b.com"), Direction::Inlinks, Granularity::Domain);
        let page = idx.query_links(&q).unwrap();
        assert_eq!(page.records.len(), 1);
        assert_eq!(page.records[0].source, k("a.com"));
        assert!(!page.truncated);
        let q = LinkQuery::new(k("a.com"), Direction::Outlinks, Granularity::Domain);
        assert_eq!(idx.query_links(&q).unwrap().records[0].target, k("b.com"));
    }

    #[test]
    fn empty_index_answers_nothing() {
        let idx = index(&[]);
        let q = LinkQuery::new(k("b.com"), Direction::Inlinks, Granularity::Domain);
        assert_eq!(idx.query_links(&q).unwrap(), QueryPage { records: vec![], truncated: false });
    }

    #[test]
    fn cap_and_truncation() {
        let idx = index(&[
            ("http://a.com/", "http://t.com/"),
            ("http://b.com/", "http://t.com/"),
            ("http://c.com/", "http://t.com/"),
        ]);
        let q = LinkQuery::new(k("t.com"), Direction::Inlinks, Granularity::Domain);
        let page = idx.query_links(&q).unwrap();
        assert_eq!((page.records.len(), page.truncated), (3, false));

        let idx = wide_index(1500);
        let page = idx.query_links(&q).unwrap();
        assert_eq!((page.records.len(), page.truncated), (1000, true));
    }

    #[test]
    fn exclusions_filter_counterparts() {
        let idx = index(&[("http://a.com/", "http://t.com/"), ("http://b.com/", "http://t.com/")]);
        let mut q = LinkQuery::new(k("t.com"), Direction::Inlinks, Granularity::Domain);
        q.exclusions = vec![k("a.com"), k("b.com")];
        assert!(idx.query_links(&q).unwrap().records.is_empty());
        q.exclusions = vec![k("a.com"), k("a.com")];
        assert!(idx.query_links(&q).is_err());
    }

    #[test]
    fn splitting_recovers_everything() {
        let idx = wide_index(1500);
        let h = query_all_links(&idx, &k("t.com"), Direction::Inlinks, Granularity::Domain, 1000).unwrap();
        assert_eq!(h.records.len(), 1500);
        assert!(h.rounds >= 2);
        assert!(h.is_complete());
    }

    #[test]
    fn splitting_small_answer_is_single_query() {
        let idx = wide_index(5);
        let q = LinkQuery::new(k("t.com"), Direction::Inlinks, Granularity::Domain);
        let single = idx.query_links(&q).unwrap();
        let h = query_all_links(&idx, &k("t.com"), Direction::Inlinks, Granularity::Domain, 1000).unwrap();
        assert_eq!(h.rounds, 1);
        assert_eq!(h.records, single.records);
    }

    #[test]
    fn splitting_one_source_domain_cap_one() {
        let idx = index(&[
            ("http://a.com/1", "http://t.com/"),
            ("http://a.com/2", "http://t.com/x"),
            ("http://www.a.com/3", "http://t.com/y"),
        ]);
        let h = query_all_links(&idx, &k("t.com"), Direction::Inlinks, Granularity::Domain, 1).unwrap();
        assert_eq!(h.records.len(), 1);
        assert_eq!(h.rounds, 2);
        assert!(h.is_complete());
    }

    #[test]
    fn splitting_round_cap_gives_partial() {
        let idx = wide_index(10);
        let h = query_all_links_with_rounds(&idx, &k("t.com"), Direction::Inlinks, Granularity::Domain, 1, 3).unwrap();
        assert_eq!(h.records.len(), 3);
        assert!(h.partial.is_some());
    }

    #[test]
    fn subdomain_granularity_and_self_links() {
        let idx = index(&[
            ("http://cyber.wlv.ac.uk/", "http://wlv.ac.uk/"),
            ("http://x.org/", "http://cyber.wlv.ac.uk/a"),
        ]);
        let q = LinkQuery::new(k("wlv.ac.uk"), Direction::Inlinks, Granularity::Domain);
        let recs = idx.query_links(&q).unwrap().records;
        assert_eq!(recs.len(), 1, "intra-domain link is a self link at domain level");
        let q = LinkQuery::new(k("wlv.ac.uk"), Direction::Inlinks, Granularity::Subdomain);
        assert_eq!(idx.query_links(&q).unwrap().records[0].source, k("cyber.wlv.ac.uk"));
    }

    #[test]
    fn persistence_round_trip() {
        let idx = index(&[("http://a.com/x", "http://b.com/y"), ("http://c.com/", "http://a.com/")]);
        let dir = tempfile::tempdir().unwrap();
        idx.save(dir.path()).unwrap();
        let fwd = std::fs::read_to_string(dir.path().join("forward.tsv")).unwrap();
        assert_eq!(fwd, "http://a.com/x\thttp://b.com/y\nhttp://c.com/\thttp://a.com/\n");
        let rev = std::fs::read_to_string(dir.path().join("reverse.tsv")).unwrap();
        assert_eq!(rev, "http://c.com/\thttp://a.com/\nhttp://a.com/x\thttp://b.com/y\n");
        let back = LocalIndex::load(dir.path(), "index-A", 0, &SuffixTable::bundled()).unwrap();
        assert_eq!(back.site_links(Granularity::Domain), idx.site_links(Granularity::Domain));
    }

    struct CannedTransport {
        log: Mutex<Vec<ExternalRequest>>,
    }

    impl Transport for CannedTransport {
        fn send(&self, req: &ExternalRequest) -> Result<ExternalResponse, ProviderError> {
            self.log.lock().unwrap().push(req.clone());
            let links = ["http://a.com/1", "http://b.com/2", "http://www.c.com/"]
                .iter()
                .filter(|s| !req.exclude.iter().any(|e| s.contains(e.as_str())))
                .map(|s| ExternalLink {
                    source_url: s.to_string(),
                    target_url: format!("http://{}/", req.site),
                })
                .collect();
            Ok(ExternalResponse { links, truncated: false })
        }
    }

    fn adapter(caps: Capabilities, clock: Arc<VirtualClock>) -> ExternalProvider {
        ExternalProvider::new(
            ExternalAdapterConfig {
                name: "index-B".into(),
                endpoint: "http://api.invalid/links".into(),
                api_key_env: None,
                max_results: 2,
                rate_per_minute: 30,
                capabilities: caps,
            },
            Box::new(CannedTransport { log: Mutex::new(vec![]) }),
            clock,
            SuffixTable::bundled(),
        )
    }

    #[test]
    fn external_adapter_caps_and_rate_limits() {
        let clock = Arc::new(VirtualClock::default());
        let p = adapter(Capabilities::full(), clock.clone());
        let q = LinkQuery::new(k("t.com"), Direction::Inlinks, Granularity::Domain);
        let page = p.query_links(&q).unwrap();
        assert_eq!(page.records.len(), 2);
        assert!(page.truncated);
        let t0 = clock.now_ms();
        let h = query_all_links(&p, &k("t.com"), Direction::Inlinks, Granularity::Domain, 1000).unwrap();
        assert_eq!(h.records.len(), 3);
        // 30 per minute: at least 2 s between requests
        assert!(clock.now_ms() - t0 >= 2 * 2000);
    }

    #[test]
    fn capabilities_are_static_and_enforced() {
        let clock = Arc::new(VirtualClock::default());
        let caps = Capabilities {
            inlinks: Support::Full,
            outlinks: Support::Domain,
            exclusions: true,
            max_exclusions: Some(100),
        };
        let p = adapter(caps.clone(), clock);
        assert_eq!(provider_capabilities(&p), caps);
        let q = LinkQuery::new(k("cyber.wlv.ac.uk"), Direction::Outlinks, Granularity::Subdomain);
        assert!(matches!(p.query_links(&q), Err(ProviderError::Capability { .. })));
        let q = LinkQuery::new(k("wlv.ac.uk"), Direction::Outlinks, Granularity::Subdomain);
        assert!(p.query_links(&q).is_ok());
        assert_eq!(provider_capabilities(&index(&[])), Capabilities::full());
    }

    #[test]
    fn adapter_config_json() {
        let json = r#"{"name":"index-B","endpoint":"https://x.invalid/api","api_key_env":"IDX_KEY",
            "max_results":1000,"rate_per_minute":10,
            "capabilities":{"inlinks":"full","outlinks":"domain"}}"#;
        let cfg: ExternalAdapterConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg.capabilities.outlinks, Support::Domain);
        assert!(cfg.capabilities.exclusions);
    }
}
