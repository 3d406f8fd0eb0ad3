//! Organisation registry, samples and the two unidirectional link datasets.
//!
//! In-data holds the inlinks of every sample member, out-data their
//! outlinks. Records from all providers are reduced to canonical site keys,
//! stripped of self-links and deduplicated by (source, target).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crawler::{site_outlink_targets, CrawlResult};
use crate::link_index::{query_all_links, Direction, LinkProvider, ProviderError, DEFAULT_MAX_RESULTS};
use crate::site::{Granularity, SiteError, SiteKey, SiteResolver};

pub const REGISTRY_HEADER: [&str; 5] = ["key", "name", "sector", "relationship", "category"];

const PROVIDER_ATTEMPTS: usize = 3;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("registry row {row}: {reason}")]
    Registry { row: usize, reason: String },
    #[error("registry row {row}: duplicate key {key}")]
    DuplicateKey { row: usize, key: SiteKey },
    #[error("unclassified sites: {}", join_keys(.0))]
    Unclassified(Vec<SiteKey>),
    #[error("sample: {0}")]
    Sample(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Site(#[from] SiteError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("format: {0}")]
    Format(String),
}

fn join_keys(keys: &[SiteKey]) -> String {
    keys.iter().map(SiteKey::as_str).collect::<Vec<_>>().join(", ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sector {
    Industry,
    Academia,
    Government,
}

impl Sector {
    pub const ALL: [Sector; 3] = [Sector::Industry, Sector::Academia, Sector::Government];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Sector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for Sector {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Sector::ALL
            .into_iter()
            .find(|v| v.to_string().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown sector {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Relationship {
    Tenant,
    Information,
    Support,
    Partnership,
    Membership,
    Incubator,
    Other,
}

impl Relationship {
    pub const ALL: [Relationship; 7] = [
        Relationship::Tenant,
        Relationship::Information,
        Relationship::Support,
        Relationship::Partnership,
        Relationship::Other,
        Relationship::Membership,
        Relationship::Incubator,
    ];
}

impl fmt::Display for Relationship {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for Relationship {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Relationship::ALL
            .into_iter()
            .find(|v| v.to_string().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown relationship {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Organization {
    pub key: SiteKey,
    pub name: String,
    pub sector: Sector,
    pub relationship: Relationship,
    pub category: String,
}

/// Classified organisations keyed by canonical site key.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Registry {
    orgs: BTreeMap<SiteKey, Organization>,
}

impl Registry {
    pub fn from_orgs(orgs: impl IntoIterator<Item = Organization>) -> Result<Registry, DatasetError> {
        let mut map = BTreeMap::new();
        for (i, org) in orgs.into_iter().enumerate() {
            if map.contains_key(&org.key) {
                return Err(DatasetError::DuplicateKey { row: i + 1, key: org.key });
            }
            map.insert(org.key.clone(), org);
        }
        Ok(Registry { orgs: map })
    }

    pub fn get(&self, key: &SiteKey) -> Option<&Organization> {
        self.orgs.get(key)
    }

    pub fn len(&self) -> usize {
        self.orgs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.orgs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Organization> {
        self.orgs.values()
    }
}

/// Parse a registry CSV (`key,name,sector,relationship,category`). Keys are
/// normalized and canonicalized; a key seen twice after canonicalization is
/// rejected. Rows are numbered from 1, excluding the header.
pub fn read_registry(input: impl Read, resolver: &SiteResolver) -> Result<Registry, DatasetError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let header = reader
        .headers()
        .map_err(|e| DatasetError::Registry { row: 0, reason: e.to_string() })?
        .clone();
    if header.iter().collect::<Vec<_>>() != REGISTRY_HEADER {
        return Err(DatasetError::Registry {
            row: 0,
            reason: format!("header must be exactly {}", REGISTRY_HEADER.join(",")),
        });
    }
    let mut orgs: BTreeMap<SiteKey, Organization> = BTreeMap::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 1;
        let err = |reason: String| DatasetError::Registry { row, reason };
        let rec = rec.map_err(|e| err(e.to_string()))?;
        if rec.len() != 5 {
            return Err(err(format!("expected 5 fields, found {}", rec.len())));
        }
        let key = SiteKey::parse(&rec[0]).map_err(|e| err(e.to_string()))?;
        let key = resolver.aliases.canonicalize(&key);
        let sector: Sector = rec[2].parse().map_err(err)?;
        let relationship: Relationship = rec[3].parse().map_err(err)?;
        if orgs.contains_key(&key) {
            return Err(DatasetError::DuplicateKey { row, key });
        }
        orgs.insert(
            key.clone(),
            Organization {
                key,
                name: rec[1].to_string(),
                sector,
                relationship,
                category: rec[4].to_string(),
            },
        );
    }
    Ok(Registry { orgs })
}

pub fn load_registry(path: &Path, resolver: &SiteResolver) -> Result<Registry, DatasetError> {
    let file = std::fs::File::open(path)?;
    read_registry(file, resolver)
}

/// The seed organisation and every organisation in its network, ordered by key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub seed: SiteKey,
    pub members: Vec<Organization>,
    pub granularity: Granularity,
}

impl Sample {
    pub fn new(
        seed: SiteKey,
        members: impl IntoIterator<Item = Organization>,
        granularity: Granularity,
    ) -> Result<Sample, DatasetError> {
        let mut by_key: BTreeMap<SiteKey, Organization> = BTreeMap::new();
        for org in members {
            if let Some(prev) = by_key.get(&org.key) {
                if *prev != org {
                    return Err(DatasetError::Sample(format!("conflicting entries for {}", org.key)));
                }
            }
            by_key.insert(org.key.clone(), org);
        }
        if !by_key.contains_key(&seed) {
            return Err(DatasetError::Sample(format!("seed {seed} is not a member")));
        }
        Ok(Sample {
            seed,
            members: by_key.into_values().collect(),
            granularity,
        })
    }

    /// Every registry organisation, with `seed` as the seed.
    pub fn from_registry(
        seed: &SiteKey,
        registry: &Registry,
        granularity: Granularity,
    ) -> Result<Sample, DatasetError> {
        Sample::new(seed.clone(), registry.iter().cloned(), granularity)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &SiteKey> {
        self.members.iter().map(|o| &o.key)
    }

    pub fn get(&self, key: &SiteKey) -> Option<&Organization> {
        self.members
            .binary_search_by(|o| o.key.cmp(key))
            .ok()
            .map(|i| &self.members[i])
    }

    pub fn contains(&self, key: &SiteKey) -> bool {
        self.get(key).is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleBuild {
    pub sample: Sample,
    pub warnings: Vec<String>,
    /// External site keys found by the crawl before classification.
    pub external_keys: usize,
}

fn unclassified(key: &SiteKey) -> Organization {
    Organization {
        key: key.clone(),
        name: key.to_string(),
        sector: Sector::Industry,
        relationship: Relationship::Other,
        category: "unclassified".into(),
    }
}

/// Sample made of the crawled seed plus every site it links to.
///
/// In strict mode every key must be in the registry. Otherwise missing
/// sites join as `Industry`/`Other` and each one produces a warning.
pub fn sample_from_seed_crawl(
    crawl: &CrawlResult,
    registry: &Registry,
    resolver: &SiteResolver,
    strict: bool,
) -> Result<SampleBuild, DatasetError> {
    let seed = resolver.rekey(&crawl.site)?;
    let targets = site_outlink_targets(crawl, resolver);
    let mut warnings = Vec::new();
    let mut missing = Vec::new();
    let mut members = Vec::new();
    for key in std::iter::once(&seed).chain(targets.iter()) {
        match registry.get(key) {
            Some(org) => members.push(org.clone()),
            None if strict => missing.push(key.clone()),
            None => {
                warnings.push(format!("{key} is not in the registry; classified as Industry/Other"));
                members.push(unclassified(key));
            }
        }
    }
    if !missing.is_empty() {
        return Err(DatasetError::Unclassified(missing));
    }
    Ok(SampleBuild {
        sample: Sample::new(seed, members, resolver.granularity)?,
        warnings,
        external_keys: targets.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DataDirection {
    InData,
    OutData,
}

impl DataDirection {
    pub fn query_direction(self) -> Direction {
        match self {
            DataDirection::InData => Direction::Inlinks,
            DataDirection::OutData => Direction::Outlinks,
        }
    }
}

/// A deduplicated site-level link, with every provider that reported it.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DatasetLink {
    pub source: SiteKey,
    pub target: SiteKey,
    pub providers: BTreeSet<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderContribution {
    /// URL-level records returned, before reduction.
    pub hits: usize,
    /// Site-level records after the provider's own deduplication.
    pub site_records: usize,
    /// Distinct (source, target) pairs this provider supported in the final set.
    pub kept: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedQuery {
    pub member: SiteKey,
    pub provider: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkDataset {
    pub direction: DataDirection,
    /// Sorted by (source, target); no self-links, no duplicate pairs.
    pub records: Vec<DatasetLink>,
    /// URL-level records returned by all providers.
    pub raw_count: usize,
    /// Site-level records summed over providers, before merging.
    pub site_level_count: usize,
    pub self_links_dropped: usize,
    pub deduped_count: usize,
    pub provider_names: Vec<String>,
    pub contributions: BTreeMap<String, ProviderContribution>,
    pub skipped: Vec<SkippedQuery>,
    /// Harvests that stopped while still truncated.
    pub partial: Vec<String>,
}

impl LinkDataset {
    pub fn pairs(&self) -> BTreeSet<(SiteKey, SiteKey)> {
        self.records
            .iter()
            .map(|r| (r.source.clone(), r.target.clone()))
            .collect()
    }

    pub fn warnings(&self) -> Vec<String> {
        self.skipped
            .iter()
            .map(|s| format!("{} skipped for {}: {}", s.provider, s.member, s.reason))
            .chain(self.partial.iter().cloned())
            .collect()
    }
}

/// Keys to query for a member: its own key plus its alias domains.
fn query_keys(member: &SiteKey, resolver: &SiteResolver) -> Vec<SiteKey> {
    let mut keys = vec![member.clone()];
    for rule in resolver.aliases.rules() {
        if &rule.canonical == member {
            keys.extend(rule.aliases.iter().filter(|a| *a != member).cloned());
        }
    }
    keys
}

/// Harvest one direction for every sample member from every provider.
pub fn build_dataset(
    direction: DataDirection,
    providers: &[&dyn LinkProvider],
    sample: &Sample,
    resolver: &SiteResolver,
) -> Result<LinkDataset, DatasetError> {
    build_dataset_with_cap(direction, providers, sample, resolver, DEFAULT_MAX_RESULTS)
}

pub fn build_dataset_with_cap(
    direction: DataDirection,
    providers: &[&dyn LinkProvider],
    sample: &Sample,
    resolver: &SiteResolver,
    cap: usize,
) -> Result<LinkDataset, DatasetError> {
    let qdir = direction.query_direction();
    let mut merged: BTreeMap<(SiteKey, SiteKey), BTreeSet<String>> = BTreeMap::new();
    let mut contributions: BTreeMap<String, ProviderContribution> = BTreeMap::new();
    let mut skipped = Vec::new();
    let mut partial = Vec::new();
    let mut raw_count = 0;
    let mut site_level_count = 0;
    let mut self_links_dropped = 0;

    for provider in providers {
        let caps = provider.capabilities();
        let contribution = contributions.entry(provider.name().to_string()).or_default();
        for member in sample.keys() {
            for key in query_keys(member, resolver) {
                if !caps.can_answer(&key, qdir, &resolver.table) {
                    skipped.push(SkippedQuery {
                        member: key.clone(),
                        provider: provider.name().to_string(),
                        reason: format!("{:?} not supported for this key", qdir),
                    });
                    continue;
                }
                let harvest = with_retries(|| {
                    query_all_links(*provider, &key, qdir, sample.granularity, cap)
                })?;
                if let Some(p) = harvest.partial {
                    partial.push(p);
                }
                raw_count += harvest.hits;
                contribution.hits += harvest.hits;
                site_level_count += harvest.records.len();
                contribution.site_records += harvest.records.len();
                for r in harvest.records {
                    let source = resolver.aliases.canonicalize(&r.source);
                    let target = resolver.aliases.canonicalize(&r.target);
                    if source == target {
                        self_links_dropped += 1;
                        continue;
                    }
                    merged
                        .entry((source, target))
                        .or_default()
                        .insert(provider.name().to_string());
                }
            }
        }
    }

    for providers in merged.values() {
        for name in providers {
            if let Some(c) = contributions.get_mut(name) {
                c.kept += 1;
            }
        }
    }
    let records: Vec<DatasetLink> = merged
        .into_iter()
        .map(|((source, target), providers)| DatasetLink { source, target, providers })
        .collect();
    let mut provider_names: Vec<String> = providers.iter().map(|p| p.name().to_string()).collect();
    provider_names.sort();
    provider_names.dedup();
    Ok(LinkDataset {
        direction,
        deduped_count: records.len(),
        records,
        raw_count,
        site_level_count,
        self_links_dropped,
        provider_names,
        contributions,
        skipped,
        partial,
    })
}

fn with_retries<T>(mut f: impl FnMut() -> Result<T, ProviderError>) -> Result<T, ProviderError> {
    let mut attempt = 1;
    loop {
        match f() {
            Err(e) if e.is_retryable() && attempt < PROVIDER_ATTEMPTS => {
                log::warn!("{e}; retrying ({attempt}/{PROVIDER_ATTEMPTS})");
                attempt += 1;
            }
            other => return other,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapStats {
    pub a: usize,
    pub b: usize,
    pub intersection: usize,
    pub union: usize,
    pub jaccard: f64,
    /// Intersection as a percentage of the union.
    pub overlap_percent: f64,
}

/// Set overlap of two site-level link sets. Two empty sets count as identical.
pub fn overlap_stats<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> OverlapStats {
    let intersection = a.intersection(b).count();
    let union = a.len() + b.len() - intersection;
    let jaccard = if union == 0 {
        1.0
    } else {
        intersection as f64 / union as f64
    };
    OverlapStats {
        a: a.len(),
        b: b.len(),
        intersection,
        union,
        jaccard,
        overlap_percent: 100.0 * jaccard,
    }
}

#[derive(Serialize, Deserialize)]
struct DatasetCounters {
    direction: DataDirection,
    raw_count: usize,
    site_level_count: usize,
    self_links_dropped: usize,
    deduped_count: usize,
    provider_names: Vec<String>,
    contributions: BTreeMap<String, ProviderContribution>,
    skipped: Vec<SkippedQuery>,
    partial: Vec<String>,
}

/// Write `<stem>.tsv` (`source<TAB>target<TAB>providers`) and `<stem>.json`
/// with the counters.
pub fn save_dataset(ds: &LinkDataset, dir: &Path, stem: &str) -> Result<(), DatasetError> {
    std::fs::create_dir_all(dir)?;
    let mut tsv = std::io::BufWriter::new(std::fs::File::create(dir.join(format!("{stem}.tsv")))?);
    for r in &ds.records {
        let providers: Vec<&str> = r.providers.iter().map(String::as_str).collect();
        writeln!(tsv, "{}\t{}\t{}", r.source, r.target, providers.join(","))?;
    }
    tsv.flush()?;
    let counters = DatasetCounters {
        direction: ds.direction,
        raw_count: ds.raw_count,
        site_level_count: ds.site_level_count,
        self_links_dropped: ds.self_links_dropped,
        deduped_count: ds.deduped_count,
        provider_names: ds.provider_names.clone(),
        contributions: ds.contributions.clone(),
        skipped: ds.skipped.clone(),
        partial: ds.partial.clone(),
    };
    let mut json = serde_json::to_string_pretty(&counters).map_err(|e| DatasetError::Format(e.to_string()))?;
    json.push('\n');
    std::fs::write(dir.join(format!("{stem}.json")), json)?;
    Ok(())
}

pub fn load_dataset(dir: &Path, stem: &str) -> Result<LinkDataset, DatasetError> {
    let counters: DatasetCounters = serde_json::from_str(&std::fs::read_to_string(
        dir.join(format!("{stem}.json")),
    )?)
    .map_err(|e| DatasetError::Format(e.to_string()))?;
    let text = std::fs::read_to_string(dir.join(format!("{stem}.tsv")))?;
    let mut records = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(DatasetError::Format(format!("{stem}.tsv:{}: expected 3 columns", n + 1)));
        }
        records.push(DatasetLink {
            source: SiteKey::new(cols[0])?,
            target: SiteKey::new(cols[1])?,
            providers: cols[2].split(',').filter(|s| !s.is_empty()).map(str::to_string).collect(),
        });
    }
    if records.len() != counters.deduped_count {
        return Err(DatasetError::Format(format!(
            "{stem}: sidecar says {} records, TSV has {}",
            counters.deduped_count,
            records.len()
        )));
    }
    Ok(LinkDataset {
        direction: counters.direction,
        records,
        raw_count: counters.raw_count,
        site_level_count: counters.site_level_count,
        self_links_dropped: counters.self_links_dropped,
        deduped_count: counters.deduped_count,
        provider_names: counters.provider_names,
        contributions: counters.contributions,
        skipped: counters.skipped,
        partial: counters.partial,
    })
}
