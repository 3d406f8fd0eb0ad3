//! URL parsing and reduction of hosts to site keys.
//!
//! A [`SiteKey`] is the identity of an organisation's web presence: either
//! the registrable domain (`wlv.ac.uk`) or the full host
//! (`cybermetrics.wlv.ac.uk`). Registrable-domain boundaries come from a
//! public-suffix table; a snapshot is bundled with the crate so that
//! reductions are reproducible across machines.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Bundled public-suffix list snapshot (publicsuffix.org, 2019-12-21, MPL-2.0).
pub const BUNDLED_SUFFIX_LIST: &str = include_str!("../data/public_suffix_list.dat");
pub const BUNDLED_SUFFIX_VERSION: &str = "psl-2019-12-21";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SiteError {
    #[error("cannot parse URL {0:?}")]
    Parse(String),
    #[error("host {0:?} is a public suffix and has no registrable domain")]
    PublicSuffix(String),
    #[error("invalid site key {0:?}")]
    InvalidKey(String),
    #[error("alias rules: {0}")]
    AliasConfig(String),
    #[error("no alias carries any evidence; choose the canonical domain manually")]
    NoEvidence,
    #[error("public suffix table line {line}: {reason}")]
    SuffixTable { line: usize, reason: String },
    #[error("io error on {path}: {reason}")]
    Io { path: String, reason: String },
}

/// Site key granularity.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    #[default]
    Domain,
    Subdomain,
}

impl FromStr for Granularity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "domain" => Ok(Granularity::Domain),
            "subdomain" => Ok(Granularity::Subdomain),
            other => Err(format!("unknown granularity {other:?}")),
        }
    }
}

/// A normalized absolute URL.
///
/// Host is lowercase and in ASCII-compatible form, fragments are dropped and
/// a missing scheme defaults to `http`. Equality and ordering use the
/// normalized form; the original text is kept in [`Url::raw`].
#[derive(Clone)]
pub struct Url {
    inner: url::Url,
    raw: String,
}

impl Url {
    pub fn scheme(&self) -> &str {
        self.inner.scheme()
    }

    pub fn host(&self) -> &str {
        // parse_url guarantees a host
        self.inner.host_str().unwrap_or_default()
    }

    pub fn port(&self) -> Option<u16> {
        self.inner.port()
    }

    pub fn path(&self) -> &str {
        self.inner.path()
    }

    pub fn query(&self) -> Option<&str> {
        self.inner.query()
    }

    pub fn raw(&self) -> &str {
        &self.raw
    }

    pub fn as_str(&self) -> &str {
        self.inner.as_str()
    }

    /// Resolve a possibly relative reference against this URL.
    pub fn join(&self, reference: &str) -> Result<Url, SiteError> {
        let joined = self
            .inner
            .join(reference.trim())
            .map_err(|_| SiteError::Parse(reference.to_string()))?;
        Url::from_inner(joined, reference.to_string())
    }

    fn from_inner(mut inner: url::Url, raw: String) -> Result<Url, SiteError> {
        inner.set_fragment(None);
        match inner.host_str() {
            Some(h) if !h.is_empty() => {}
            _ => return Err(SiteError::Parse(raw)),
        }
        Ok(Url { inner, raw })
    }

    pub fn is_http(&self) -> bool {
        matches!(self.scheme(), "http" | "https")
    }
}

impl PartialEq for Url {
    fn eq(&self, other: &Self) -> bool {
        self.inner.as_str() == other.inner.as_str()
    }
}

impl Eq for Url {}

impl std::hash::Hash for Url {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.inner.as_str().hash(state)
    }
}

impl PartialOrd for Url {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Url {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.inner.as_str().cmp(other.inner.as_str())
    }
}

impl fmt::Debug for Url {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Url({})", self.inner)
    }
}

impl fmt::Display for Url {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.inner.as_str())
    }
}

impl FromStr for Url {
    type Err = SiteError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_url(s)
    }
}

impl Serialize for Url {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Url {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        parse_url(&s).map_err(serde::de::Error::custom)
    }
}

fn has_scheme(s: &str) -> bool {
    match s.find("://") {
        Some(pos) => {
            let scheme = &s[..pos];
            !scheme.is_empty()
                && scheme.starts_with(|c: char| c.is_ascii_alphabetic())
                && scheme
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || matches!(c, '+' | '-' | '.'))
        }
        None => false,
    }
}

// `mailto:x@y`, `javascript:void(0)`; `host:8080` is a port, not a scheme
fn has_opaque_scheme(s: &str) -> bool {
    match s.split_once(':') {
        Some((scheme, rest)) => {
            scheme.starts_with(|c: char| c.is_ascii_alphabetic())
                && scheme
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || matches!(c, '+' | '-' | '.'))
                && !rest.starts_with(|c: char| c.is_ascii_digit())
        }
        None => false,
    }
}

/// Parse and normalize a URL. Text without a scheme is treated as `http://`.
pub fn parse_url(raw: &str) -> Result<Url, SiteError> {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return Err(SiteError::Parse(raw.to_string()));
    }
    let candidate = if has_scheme(trimmed) || has_opaque_scheme(trimmed) {
        trimmed.to_string()
    } else if let Some(rest) = trimmed.strip_prefix("//") {
        format!("http://{rest}")
    } else {
        format!("http://{trimmed}")
    };
    let inner = url::Url::parse(&candidate).map_err(|_| SiteError::Parse(raw.to_string()))?;
    if inner.cannot_be_a_base() {
        return Err(SiteError::Parse(raw.to_string()));
    }
    Url::from_inner(inner, raw.to_string())
}

/// Canonical identity of a website at domain or subdomain granularity.
///
/// The value is a lowercase ASCII hostname with no scheme, port, path or
/// userinfo.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SiteKey(String);

impl SiteKey {
    /// Validate and normalize hostname text into a key. A leading `www.`
    /// label is not stripped here; use [`SiteKey::parse`] for user input.
    pub fn new(value: impl Into<String>) -> Result<SiteKey, SiteError> {
        let value: String = value.into();
        let ascii = idna::domain_to_ascii(value.trim())
            .map_err(|_| SiteError::InvalidKey(value.clone()))?;
        let ascii = ascii.trim_end_matches('.').to_string();
        let valid = !ascii.is_empty()
            && ascii.split('.').all(|label| {
                !label.is_empty()
                    && label
                        .chars()
                        .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
            });
        if !valid {
            return Err(SiteError::InvalidKey(value));
        }
        Ok(SiteKey(ascii))
    }

    /// Parse user-supplied key text, accepting URLs or bare hosts, and
    /// dropping scheme, port, path and a leading `www.`.
    pub fn parse(text: &str) -> Result<SiteKey, SiteError> {
        let url = parse_url(text).map_err(|_| SiteError::InvalidKey(text.to_string()))?;
        SiteKey::new(strip_www(url.host()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// True when `self` equals `other` or is a subdomain of it.
    pub fn is_within(&self, other: &SiteKey) -> bool {
        self.0 == other.0
            || (self.0.len() > other.0.len()
                && self.0.ends_with(&other.0)
                && self.0.as_bytes()[self.0.len() - other.0.len() - 1] == b'.')
    }
}

impl fmt::Display for SiteKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for SiteKey {
    type Err = SiteError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SiteKey::parse(s)
    }
}

impl Serialize for SiteKey {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for SiteKey {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        SiteKey::parse(&s).map_err(serde::de::Error::custom)
    }
}

fn strip_www(host: &str) -> &str {
    host.strip_prefix("www.").filter(|rest| !rest.is_empty()).unwrap_or(host)
}

/// Public-suffix rules in the publicsuffix.org text format.
#[derive(Debug, Clone, Default)]
pub struct SuffixTable {
    exact: HashSet<String>,
    wildcard: HashSet<String>,
    exception: HashSet<String>,
}

impl SuffixTable {
    /// Parse a table: one rule per line, `//` comments, `*.` wildcards and
    /// `!` exceptions.
    pub fn parse(text: &str) -> Result<SuffixTable, SiteError> {
        let mut table = SuffixTable::default();
        for (idx, line) in text.lines().enumerate() {
            let rule = line.split_whitespace().next().unwrap_or("");
            if rule.is_empty() || rule.starts_with("//") {
                continue;
            }
            let err = |reason: &str| SiteError::SuffixTable {
                line: idx + 1,
                reason: reason.to_string(),
            };
            let (set, body) = if let Some(rest) = rule.strip_prefix('!') {
                (&mut table.exception, rest)
            } else if let Some(rest) = rule.strip_prefix("*.") {
                (&mut table.wildcard, rest)
            } else {
                (&mut table.exact, rule)
            };
            let ascii = idna::domain_to_ascii(body).map_err(|_| err("not a valid domain"))?;
            if ascii.is_empty() || ascii.contains('*') {
                return Err(err("unsupported rule"));
            }
            set.insert(ascii);
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<SuffixTable, SiteError> {
        let text = std::fs::read_to_string(path).map_err(|e| SiteError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        SuffixTable::parse(&text)
    }

    /// The bundled snapshot, parsed once.
    pub fn bundled() -> Arc<SuffixTable> {
        static TABLE: OnceLock<Arc<SuffixTable>> = OnceLock::new();
        TABLE
            .get_or_init(|| {
                Arc::new(SuffixTable::parse(BUNDLED_SUFFIX_LIST).expect("bundled table parses"))
            })
            .clone()
    }

    pub fn len(&self) -> usize {
        self.exact.len() + self.wildcard.len() + self.exception.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of trailing labels of `host` forming its public suffix.
    fn suffix_labels(&self, host: &str) -> usize {
        let labels: Vec<&str> = host.split('.').collect();
        let n = labels.len();
        let mut best = 1; // implicit "*" rule
        for k in 1..=n {
            let candidate = labels[n - k..].join(".");
            if self.exception.contains(&candidate) {
                // an exception always wins and removes its leftmost label
                return k - 1;
            }
            if self.exact.contains(&candidate) {
                best = best.max(k);
            }
            if k < n {
                let parent = labels[n - k..].join(".");
                if self.wildcard.contains(&parent) {
                    best = best.max(k + 1);
                }
            }
        }
        best
    }

    /// Public suffix of `host` (e.g. `ac.uk` for `cybermetrics.wlv.ac.uk`).
    pub fn public_suffix<'a>(&self, host: &'a str) -> &'a str {
        tail_labels(host, self.suffix_labels(host))
    }

    /// Registrable domain of `host`, or `None` if the host is itself a
    /// public suffix.
    pub fn registrable_domain<'a>(&self, host: &'a str) -> Option<&'a str> {
        let k = self.suffix_labels(host);
        let n = host.split('.').count();
        (n > k).then(|| tail_labels(host, k + 1))
    }

    pub fn is_public_suffix(&self, host: &str) -> bool {
        self.registrable_domain(host).is_none()
    }
}

fn tail_labels(host: &str, k: usize) -> &str {
    if k == 0 {
        return "";
    }
    let mut seen = 0;
    for (i, b) in host.bytes().enumerate().rev() {
        if b == b'.' {
            seen += 1;
            if seen == k {
                return &host[i + 1..];
            }
        }
    }
    host
}

fn is_ip_literal(host: &str) -> bool {
    host.starts_with('[') || host.parse::<std::net::Ipv4Addr>().is_ok()
}

/// Reduce a URL's host to a site key at the requested granularity.
pub fn reduce_to_site_key(
    url: &Url,
    granularity: Granularity,
    table: &SuffixTable,
) -> Result<SiteKey, SiteError> {
    reduce_host(url.host(), granularity, table)
}

/// Host-level form of [`reduce_to_site_key`].
pub fn reduce_host(
    host: &str,
    granularity: Granularity,
    table: &SuffixTable,
) -> Result<SiteKey, SiteError> {
    let host = host.trim_end_matches('.').to_ascii_lowercase();
    if is_ip_literal(&host) {
        return Ok(SiteKey(host));
    }
    if table.is_public_suffix(&host) {
        return Err(SiteError::PublicSuffix(host));
    }
    // www.ck style exceptions: keep www when the rest is a public suffix
    let host = match host.strip_prefix("www.") {
        Some(rest) if !table.is_public_suffix(rest) => rest.to_string(),
        _ => host,
    };
    let value = match granularity {
        Granularity::Subdomain => host,
        Granularity::Domain => table
            .registrable_domain(&host)
            .map(str::to_string)
            .ok_or_else(|| SiteError::PublicSuffix(host.clone()))?,
    };
    SiteKey::new(value)
}

/// Evidence used to pick one canonical domain among several aliases.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AliasEvidence {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pages: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inlinks: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outlinks: Option<u64>,
    /// ISO `YYYY-MM-DD` date of first observed activity.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_seen: Option<String>,
}

impl AliasEvidence {
    pub fn is_empty(&self) -> bool {
        self.pages.is_none()
            && self.inlinks.is_none()
            && self.outlinks.is_none()
            && self.first_seen.is_none()
    }
}

/// A group of domain names belonging to one organisation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AliasRule {
    pub aliases: Vec<SiteKey>,
    pub canonical: SiteKey,
    #[serde(default)]
    pub evidence: BTreeMap<SiteKey, AliasEvidence>,
}

/// A validated, consistent set of alias rules.
#[derive(Debug, Clone, Default)]
pub struct AliasSet {
    rules: Vec<AliasRule>,
    map: HashMap<SiteKey, SiteKey>,
}

impl AliasSet {
    pub fn new(rules: Vec<AliasRule>) -> Result<AliasSet, SiteError> {
        let mut map = HashMap::new();
        for (i, rule) in rules.iter().enumerate() {
            if !rule.aliases.contains(&rule.canonical) {
                return Err(SiteError::AliasConfig(format!(
                    "rule {i}: canonical {} is not among its aliases",
                    rule.canonical
                )));
            }
            let mut local = HashSet::new();
            for alias in &rule.aliases {
                if !local.insert(alias) {
                    return Err(SiteError::AliasConfig(format!(
                        "rule {i}: alias {alias} listed twice"
                    )));
                }
                if map.insert(alias.clone(), rule.canonical.clone()).is_some() {
                    return Err(SiteError::AliasConfig(format!(
                        "{alias} appears in more than one rule"
                    )));
                }
            }
            for key in rule.evidence.keys() {
                if !rule.aliases.contains(key) {
                    return Err(SiteError::AliasConfig(format!(
                        "rule {i}: evidence for {key}, which is not an alias"
                    )));
                }
            }
            for evidence in rule.evidence.values() {
                if let Some(date) = &evidence.first_seen {
                    if !is_iso_date(date) {
                        return Err(SiteError::AliasConfig(format!(
                            "rule {i}: first_seen {date:?} is not YYYY-MM-DD"
                        )));
                    }
                }
            }
        }
        Ok(AliasSet { rules, map })
    }

    pub fn from_json(text: &str) -> Result<AliasSet, SiteError> {
        let rules: Vec<AliasRule> =
            serde_json::from_str(text).map_err(|e| SiteError::AliasConfig(e.to_string()))?;
        AliasSet::new(rules)
    }

    pub fn load(path: &Path) -> Result<AliasSet, SiteError> {
        let text = std::fs::read_to_string(path).map_err(|e| SiteError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        AliasSet::from_json(&text)
    }

    pub fn rules(&self) -> &[AliasRule] {
        &self.rules
    }

    /// Map a key to its rule's canonical key; keys without a rule pass through.
    pub fn canonicalize(&self, key: &SiteKey) -> SiteKey {
        self.map.get(key).cloned().unwrap_or_else(|| key.clone())
    }
}

fn is_iso_date(s: &str) -> bool {
    let b = s.as_bytes();
    b.len() == 10
        && b[4] == b'-'
        && b[7] == b'-'
        && b.iter()
            .enumerate()
            .all(|(i, c)| i == 4 || i == 7 || c.is_ascii_digit())
}

/// Order aliases by (pages desc, inlinks desc, outlinks desc, earliest
/// first-seen). Missing values sort last within their tier; the first
/// element is the suggested canonical name.
pub fn rank_alias_candidates(
    candidates: &[(SiteKey, AliasEvidence)],
) -> Result<Vec<SiteKey>, SiteError> {
    if candidates.iter().all(|(_, e)| e.is_empty()) {
        return Err(SiteError::NoEvidence);
    }
    fn desc(v: Option<u64>) -> (bool, std::cmp::Reverse<u64>) {
        (v.is_none(), std::cmp::Reverse(v.unwrap_or(0)))
    }
    let mut ranked: Vec<&(SiteKey, AliasEvidence)> = candidates.iter().collect();
    ranked.sort_by(|(ka, a), (kb, b)| {
        desc(a.pages)
            .cmp(&desc(b.pages))
            .then(desc(a.inlinks).cmp(&desc(b.inlinks)))
            .then(desc(a.outlinks).cmp(&desc(b.outlinks)))
            .then(
                (a.first_seen.is_none(), &a.first_seen).cmp(&(b.first_seen.is_none(), &b.first_seen)),
            )
            .then(ka.cmp(kb))
    });
    Ok(ranked.into_iter().map(|(k, _)| k.clone()).collect())
}

/// Reduction plus alias canonicalization, the full URL → site key mapping.
#[derive(Debug, Clone)]
pub struct SiteResolver {
    pub table: Arc<SuffixTable>,
    pub granularity: Granularity,
    pub aliases: AliasSet,
}

impl SiteResolver {
    pub fn new(table: Arc<SuffixTable>, granularity: Granularity, aliases: AliasSet) -> Self {
        SiteResolver {
            table,
            granularity,
            aliases,
        }
    }

    /// Bundled suffix table, no aliases.
    pub fn bundled(granularity: Granularity) -> Self {
        SiteResolver::new(SuffixTable::bundled(), granularity, AliasSet::default())
    }

    pub fn key_of(&self, url: &Url) -> Result<SiteKey, SiteError> {
        let key = reduce_to_site_key(url, self.granularity, &self.table)?;
        Ok(self.aliases.canonicalize(&key))
    }

    pub fn key_of_host(&self, host: &str) -> Result<SiteKey, SiteError> {
        let key = reduce_host(host, self.granularity, &self.table)?;
        Ok(self.aliases.canonicalize(&key))
    }

    /// Reduce an already-formed key (at either granularity) and canonicalize it.
    pub fn rekey(&self, key: &SiteKey) -> Result<SiteKey, SiteError> {
        self.key_of_host(key.as_str())
    }
}
