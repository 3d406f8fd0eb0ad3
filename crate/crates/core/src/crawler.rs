//! Depth-limited, polite, breadth-first site crawler.
//!
//! The seed page is depth 0. Pages whose site key equals the seed's are
//! followed up to `max_depth` link hops; anchors into any other site are
//! recorded as site outlinks and never fetched.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::io::{BufRead, Write};
use std::time::Duration;

use scraper::{Html, Selector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Clock;
use crate::fetch::{FetchResponse, Fetcher};
use crate::links::{LinkRecord, ProviderTag};
use crate::robots::RobotsRules;
use crate::site::{parse_url, SiteError, SiteKey, SiteResolver, Url};

pub const CRAWL_PROVIDER: &str = "crawl";

#[derive(Debug, Error)]
pub enum CrawlError {
    #[error("seed {seed} unreachable: {reason}")]
    SeedUnreachable { seed: String, reason: String },
    #[error("seed {0}: {1}")]
    Seed(String, SiteError),
    #[error("invalid crawl config: {0}")]
    Config(String),
    #[error("crawl result io: {0}")]
    Io(#[from] std::io::Error),
    #[error("crawl result format: {0}")]
    Format(String),
}

fn default_depth() -> u32 {
    2
}
fn default_delay() -> u64 {
    1000
}
fn default_max_pages() -> usize {
    10_000
}
fn default_timeout() -> u64 {
    30_000
}
fn default_user_agent() -> String {
    concat!("sitenet/", env!("CARGO_PKG_VERSION")).to_string()
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrawlConfig {
    #[serde(default)]
    pub seeds: Vec<Url>,
    #[serde(default = "default_depth")]
    pub max_depth: u32,
    #[serde(default = "default_delay")]
    pub per_host_delay_ms: u64,
    #[serde(default = "default_max_pages")]
    pub max_pages_per_site: usize,
    #[serde(default = "default_timeout")]
    pub fetch_timeout_ms: u64,
    #[serde(default = "default_user_agent")]
    pub user_agent: String,
    #[serde(default = "default_true")]
    pub respect_robots: bool,
    /// Count non-HTML responses as pages (they are never parsed).
    #[serde(default)]
    pub count_non_html: bool,
}

impl Default for CrawlConfig {
    fn default() -> Self {
        CrawlConfig {
            seeds: Vec::new(),
            max_depth: default_depth(),
            per_host_delay_ms: default_delay(),
            max_pages_per_site: default_max_pages(),
            fetch_timeout_ms: default_timeout(),
            user_agent: default_user_agent(),
            respect_robots: true,
            count_non_html: false,
        }
    }
}

impl CrawlConfig {
    pub fn validate(&self) -> Result<(), CrawlError> {
        if self.max_pages_per_site < 1 {
            return Err(CrawlError::Config("max_pages_per_site must be >= 1".into()));
        }
        if self.user_agent.trim().is_empty() {
            return Err(CrawlError::Config("user_agent must be non-empty".into()));
        }
        Ok(())
    }

    pub fn per_host_delay(&self) -> Duration {
        Duration::from_millis(self.per_host_delay_ms)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FetchStatus {
    Http(u16),
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Page {
    pub url: Url,
    pub site: SiteKey,
    pub depth: u32,
    pub status: FetchStatus,
    pub out_anchors: Vec<Url>,
    pub fetched_at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrawlResult {
    pub seed: Url,
    pub site: SiteKey,
    pub pages: Vec<Page>,
    pub site_outlinks: Vec<LinkRecord>,
    pub page_count_per_site: BTreeMap<SiteKey, usize>,
}

/// Anchor `href` targets resolved against `base`, deduplicated in first
/// occurrence order. Only http(s) targets are kept; a `<base href>` element
/// overrides `base`.
pub fn extract_anchors(html: &[u8], base: &Url) -> Vec<Url> {
    let text = String::from_utf8_lossy(html);
    let doc = Html::parse_document(&text);
    let anchor_sel = Selector::parse("a[href], area[href]").expect("static selector");
    let base_sel = Selector::parse("base[href]").expect("static selector");

    let effective_base = doc
        .select(&base_sel)
        .next()
        .and_then(|b| b.value().attr("href"))
        .and_then(|href| base.join(href).ok())
        .unwrap_or_else(|| base.clone());

    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for el in doc.select(&anchor_sel) {
        let Some(href) = el.value().attr("href") else {
            continue;
        };
        let href = href.trim();
        if href.is_empty() || href.starts_with('#') {
            continue;
        }
        let Ok(url) = effective_base.join(href) else {
            continue;
        };
        if url.is_http() && seen.insert(url.clone()) {
            out.push(url);
        }
    }
    out
}

struct Politeness<'a> {
    clock: &'a dyn Clock,
    delay: Duration,
    last: HashMap<String, u64>,
}

impl Politeness<'_> {
    fn wait(&mut self, host: &str) -> u64 {
        if let Some(&last) = self.last.get(host) {
            let due = last + self.delay.as_millis() as u64;
            let now = self.clock.now_ms();
            if now < due {
                self.clock.sleep(Duration::from_millis(due - now));
            }
        }
        let now = self.clock.now_ms();
        self.last.insert(host.to_string(), now);
        now
    }
}

/// Crawl one seed site breadth-first.
pub fn crawl_site(
    seed: &Url,
    cfg: &CrawlConfig,
    fetcher: &dyn Fetcher,
    clock: &dyn Clock,
    resolver: &SiteResolver,
) -> Result<CrawlResult, CrawlError> {
    cfg.validate()?;
    let site = resolver
        .key_of(seed)
        .map_err(|e| CrawlError::Seed(seed.to_string(), e))?;
    let tag = ProviderTag::new(CRAWL_PROVIDER, clock.now_ms());
    let mut polite = Politeness {
        clock,
        delay: cfg.per_host_delay(),
        last: HashMap::new(),
    };
    let mut robots: HashMap<String, RobotsRules> = HashMap::new();

    let mut pages: Vec<Page> = Vec::new();
    let mut outlinks: BTreeSet<(Url, Url)> = BTreeSet::new();
    let mut outlink_records: Vec<LinkRecord> = Vec::new();
    let mut queued: HashSet<Url> = HashSet::from([seed.clone()]);
    let mut queue: VecDeque<(Url, u32)> = VecDeque::from([(seed.clone(), 0)]);

    let mut record_outlink = |from: &Url, to: &Url, target: SiteKey| {
        if outlinks.insert((from.clone(), to.clone())) {
            outlink_records.push(LinkRecord {
                source: site.clone(),
                target,
                provider: tag.clone(),
                source_url: Some(from.clone()),
                target_url: Some(to.clone()),
            });
        }
    };

    while let Some((url, depth)) = queue.pop_front() {
        if pages.len() >= cfg.max_pages_per_site {
            break;
        }
        let is_seed = depth == 0;
        if cfg.respect_robots {
            let host = url.host().to_string();
            if !robots.contains_key(&host) {
                let rules = fetch_robots(&url, cfg, fetcher, &mut polite);
                robots.insert(host.clone(), rules);
            }
            if !robots[&host].is_allowed(url.path()) {
                if is_seed {
                    return Err(CrawlError::SeedUnreachable {
                        seed: seed.to_string(),
                        reason: "disallowed by robots.txt".into(),
                    });
                }
                continue;
            }
        }

        let fetched_at = polite.wait(url.host());
        let response = match fetcher.fetch(&url) {
            Ok(r) => r,
            Err(e) if is_seed => {
                return Err(CrawlError::SeedUnreachable {
                    seed: seed.to_string(),
                    reason: e.reason,
                })
            }
            Err(e) => {
                pages.push(Page {
                    url,
                    site: site.clone(),
                    depth,
                    status: FetchStatus::Failed(e.reason),
                    out_anchors: Vec::new(),
                    fetched_at,
                });
                continue;
            }
        };
        if is_seed && !response.is_success() {
            return Err(CrawlError::SeedUnreachable {
                seed: seed.to_string(),
                reason: format!("HTTP {}", response.status),
            });
        }

        // a redirect off-site makes this an outlink, not a page
        if response.final_url != url {
            if let Ok(final_site) = resolver.key_of(&response.final_url) {
                if final_site != site {
                    if is_seed {
                        return Err(CrawlError::SeedUnreachable {
                            seed: seed.to_string(),
                            reason: format!("redirected off-site to {}", response.final_url),
                        });
                    }
                    record_outlink(&url, &response.final_url, final_site);
                    continue;
                }
            }
        }

        let parse = response.is_success() && response.is_html();
        if !parse && response.is_success() && !cfg.count_non_html {
            continue;
        }
        let anchors = if parse {
            extract_anchors(&response.body, &response.final_url)
        } else {
            Vec::new()
        };

        for anchor in &anchors {
            let Ok(target) = resolver.key_of(anchor) else {
                continue;
            };
            if target == site {
                if depth < cfg.max_depth && queued.insert(anchor.clone()) {
                    queue.push_back((anchor.clone(), depth + 1));
                }
            } else {
                record_outlink(&response.final_url, anchor, target);
            }
        }

        pages.push(page_from(&response, url, &site, depth, anchors, fetched_at));
    }

    pages.sort_by(|a, b| (a.depth, &a.url).cmp(&(b.depth, &b.url)));
    outlink_records.sort_by(|a, b| (&a.source_url, &a.target_url).cmp(&(&b.source_url, &b.target_url)));
    let page_count_per_site = BTreeMap::from([(site.clone(), pages.len())]);
    Ok(CrawlResult {
        seed: seed.clone(),
        site,
        pages,
        site_outlinks: outlink_records,
        page_count_per_site,
    })
}

fn page_from(
    response: &FetchResponse,
    url: Url,
    site: &SiteKey,
    depth: u32,
    out_anchors: Vec<Url>,
    fetched_at: u64,
) -> Page {
    Page {
        url,
        site: site.clone(),
        depth,
        status: FetchStatus::Http(response.status),
        out_anchors,
        fetched_at,
    }
}

fn fetch_robots(
    url: &Url,
    cfg: &CrawlConfig,
    fetcher: &dyn Fetcher,
    polite: &mut Politeness<'_>,
) -> RobotsRules {
    let Ok(robots_url) = url.join("/robots.txt") else {
        return RobotsRules::allow_all();
    };
    polite.wait(url.host());
    match fetcher.fetch(&robots_url) {
        Ok(r) if r.is_success() => {
            RobotsRules::parse(&String::from_utf8_lossy(&r.body), &cfg.user_agent)
        }
        _ => RobotsRules::allow_all(),
    }
}

/// Crawl several seeds. Seeds on distinct hosts run concurrently, each with
/// a forked clock; seeds sharing a host are crawled in sequence. Results come
/// back in seed order.
pub fn crawl_many(
    seeds: &[Url],
    cfg: &CrawlConfig,
    fetcher: &dyn Fetcher,
    clock: &dyn Clock,
    resolver: &SiteResolver,
) -> Vec<Result<CrawlResult, CrawlError>> {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, seed) in seeds.iter().enumerate() {
        groups.entry(seed.host()).or_default().push(i);
    }
    let mut slots: Vec<Option<Result<CrawlResult, CrawlError>>> =
        (0..seeds.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = groups
            .values()
            .map(|idxs| {
                let worker_clock = clock.fork();
                scope.spawn(move || {
                    idxs.iter()
                        .map(|&i| {
                            (i, crawl_site(&seeds[i], cfg, fetcher, worker_clock.as_ref(), resolver))
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("crawl worker panicked") {
                slots[i] = Some(r);
            }
        }
    });
    slots.into_iter().map(|s| s.expect("every seed crawled")).collect()
}

/// Distinct external site keys linked from a crawl, sorted.
pub fn site_outlink_targets(result: &CrawlResult, resolver: &SiteResolver) -> Vec<SiteKey> {
    let source = resolver.rekey(&result.site).unwrap_or_else(|_| result.site.clone());
    let keys: BTreeSet<SiteKey> = result
        .site_outlinks
        .iter()
        .filter_map(|r| match &r.target_url {
            Some(u) => resolver.key_of(u).ok(),
            None => resolver.rekey(&r.target).ok(),
        })
        .filter(|k| *k != source)
        .collect();
    keys.into_iter().collect()
}

#[derive(Serialize, Deserialize)]
struct Summary {
    summary: SummaryBody,
}

#[derive(Serialize, Deserialize)]
struct SummaryBody {
    seed: Url,
    site: SiteKey,
    pages: usize,
    site_outlinks: Vec<LinkRecord>,
    page_count_per_site: BTreeMap<SiteKey, usize>,
}

/// One JSON page object per line, then a trailing summary object.
pub fn write_jsonl(result: &CrawlResult, mut out: impl Write) -> Result<(), CrawlError> {
    for page in &result.pages {
        serde_json::to_writer(&mut out, page).map_err(|e| CrawlError::Format(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    let summary = Summary {
        summary: SummaryBody {
            seed: result.seed.clone(),
            site: result.site.clone(),
            pages: result.pages.len(),
            site_outlinks: result.site_outlinks.clone(),
            page_count_per_site: result.page_count_per_site.clone(),
        },
    };
    serde_json::to_writer(&mut out, &summary).map_err(|e| CrawlError::Format(e.to_string()))?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn read_jsonl(input: impl BufRead) -> Result<CrawlResult, CrawlError> {
    let mut pages = Vec::new();
    let mut summary: Option<SummaryBody> = None;
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if summary.is_some() {
            return Err(CrawlError::Format(format!("line {}: data after summary", n + 1)));
        }
        if line.starts_with("{\"summary\"") {
            let s: Summary = serde_json::from_str(&line)
                .map_err(|e| CrawlError::Format(format!("line {}: {e}", n + 1)))?;
            summary = Some(s.summary);
        } else {
            let page: Page = serde_json::from_str(&line)
                .map_err(|e| CrawlError::Format(format!("line {}: {e}", n + 1)))?;
            pages.push(page);
        }
    }
    let s = summary.ok_or_else(|| CrawlError::Format("missing summary line".into()))?;
    if s.pages != pages.len() {
        return Err(CrawlError::Format(format!(
            "summary counts {} pages, found {}",
            s.pages,
            pages.len()
        )));
    }
    Ok(CrawlResult {
        seed: s.seed,
        site: s.site,
        pages,
        site_outlinks: s.site_outlinks,
        page_count_per_site: s.page_count_per_site,
    })
}

/// Parse seed text, rejecting anything that is not an http(s) URL.
pub fn parse_seed(text: &str) -> Result<Url, CrawlError> {
    let url = parse_url(text).map_err(|e| CrawlError::Seed(text.to_string(), e))?;
    if !url.is_http() {
        return Err(CrawlError::Config(format!("seed {text:?} is not http(s)")));
    }
    Ok(url)
}
