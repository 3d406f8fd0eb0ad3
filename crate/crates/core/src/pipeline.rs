//! Config-driven pipeline: crawl, harvest, analyze, export.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{Clock, SystemClock, VirtualClock};
use crate::crawler::{self, CrawlConfig, CrawlResult};
use crate::dataset::{self, DataDirection, LinkDataset, Registry, Sample};
use crate::fetch::{CorpusFetcher, Fetcher, HttpFetcher};
use crate::link_index::{
    build_inverted_index_named, Direction, ExternalAdapterConfig, ExternalProvider, HttpTransport,
    LinkProvider, LocalIndex, Support,
};
use crate::metrics::{self, CentralityTable, GiniBasis, GiniEntry, GiniVariant, ReciprocityMethod};
use crate::network::{self, InterlinkNetwork, Provenance};
use crate::report::{self, AnalysisReport, CohesionRows, GraphFormat, RunManifest, SampleReport, StageCounts, TableStyle};
use crate::site::{parse_url, AliasSet, Granularity, SiteKey, SiteResolver, SuffixTable, Url};

/// Name of the provider backed by the pipeline's own crawl.
pub const CRAWL_INDEX: &str = "crawl";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("validation failed:\n{}", .0.iter().map(|d| format!("  {d}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<Diagnostic>),
    #[error(transparent)]
    Dataset(#[from] dataset::DatasetError),
    #[error("{0}")]
    Runtime(String),
}

impl PipelineError {
    /// Process exit code: 1 for configuration or classification problems,
    /// 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_)
            | PipelineError::Invalid(_)
            | PipelineError::Dataset(dataset::DatasetError::Unclassified(_)) => 1,
            _ => 2,
        }
    }
}

fn runtime<E: std::fmt::Display>(context: &str) -> impl FnOnce(E) -> PipelineError + '_ {
    move |e| PipelineError::Runtime(format!("{context}: {e}"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub level: Level,
    pub message: String,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let level = match self.level {
            Level::Error => "error",
            Level::Warning => "warning",
        };
        write!(f, "{level}: {}", self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ProviderConfig {
    /// Inverted index over crawled pages; `index_dir` loads a saved index
    /// instead of the pipeline's own crawl.
    Local {
        name: String,
        #[serde(default)]
        index_dir: Option<PathBuf>,
    },
    External(ExternalAdapterConfig),
}

impl ProviderConfig {
    pub fn name(&self) -> &str {
        match self {
            ProviderConfig::Local { name, .. } => name,
            ProviderConfig::External(c) => &c.name,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleSource {
    /// Seed plus every registered site it links to.
    #[default]
    Crawl,
    /// Every registry row.
    Registry,
}

fn default_true() -> bool {
    true
}

fn default_styles() -> Vec<TableStyle> {
    vec![TableStyle::Csv, TableStyle::Text]
}

fn default_formats() -> Vec<GraphFormat> {
    GraphFormat::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisFlags {
    #[serde(default)]
    pub reciprocity: ReciprocityMethod,
    #[serde(default)]
    pub gini_variant: GiniVariant,
    #[serde(default = "default_true")]
    pub exclude_seed_outlinks: bool,
    /// Seeds whose local analysis drops the seed's own outlinks.
    #[serde(default)]
    pub prune_seed: Vec<String>,
    /// TSV `key<TAB>pages` overriding crawled page counts.
    #[serde(default)]
    pub page_sizes: Option<PathBuf>,
    #[serde(default = "default_styles")]
    pub table_styles: Vec<TableStyle>,
    #[serde(default = "default_formats")]
    pub graph_formats: Vec<GraphFormat>,
}

impl Default for AnalysisFlags {
    fn default() -> Self {
        AnalysisFlags {
            reciprocity: ReciprocityMethod::Arc,
            gini_variant: GiniVariant::Population,
            exclude_seed_outlinks: true,
            prune_seed: Vec::new(),
            page_sizes: None,
            table_styles: default_styles(),
            graph_formats: default_formats(),
        }
    }
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seeds: Vec<String>,
    /// Display names by seed site key.
    #[serde(default)]
    pub labels: BTreeMap<String, String>,
    #[serde(default)]
    pub granularity: Granularity,
    #[serde(default)]
    pub crawl: CrawlConfig,
    /// Serve pages from a directory instead of the network.
    #[serde(default)]
    pub corpus: Option<PathBuf>,
    /// Also crawl every sample member so the crawl index holds their links.
    #[serde(default = "default_true")]
    pub crawl_members: bool,
    #[serde(default)]
    pub providers: Vec<ProviderConfig>,
    #[serde(default)]
    pub in_providers: Vec<String>,
    #[serde(default)]
    pub out_providers: Vec<String>,
    pub registry: PathBuf,
    #[serde(default)]
    pub aliases: Option<PathBuf>,
    #[serde(default)]
    pub suffix_table: Option<PathBuf>,
    #[serde(default)]
    pub sample_source: SampleSource,
    /// Reject sites missing from the registry instead of defaulting them.
    #[serde(default)]
    pub strict: bool,
    #[serde(default)]
    pub analysis: AnalysisFlags,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<PipelineConfig, PipelineError> {
        serde_json::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    /// Load and resolve relative paths against the config file's directory.
    pub fn load(path: &Path) -> Result<PipelineConfig, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = PipelineConfig::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.registry);
        fix(&mut self.output_dir);
        for p in [&mut self.aliases, &mut self.suffix_table, &mut self.corpus, &mut self.analysis.page_sizes]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        for p in &mut self.providers {
            if let ProviderConfig::Local { index_dir: Some(dir), .. } = p {
                fix(dir);
            }
        }
    }

    /// Providers used for one direction: the named ones, or all of them.
    /// With no providers configured the crawl index serves both directions.
    fn provider_names(&self, direction: DataDirection) -> Vec<String> {
        let chosen = match direction {
            DataDirection::InData => &self.in_providers,
            DataDirection::OutData => &self.out_providers,
        };
        if !chosen.is_empty() {
            chosen.clone()
        } else if self.providers.is_empty() {
            vec![CRAWL_INDEX.to_string()]
        } else {
            self.providers.iter().map(|p| p.name().to_string()).collect()
        }
    }

    fn provider_configs(&self) -> Vec<ProviderConfig> {
        if self.providers.is_empty() {
            vec![ProviderConfig::Local {
                name: CRAWL_INDEX.into(),
                index_dir: None,
            }]
        } else {
            self.providers.clone()
        }
    }

    fn label(&self, seed: &SiteKey) -> String {
        self.labels.get(seed.as_str()).cloned().unwrap_or_else(|| seed.to_string())
    }
}

/// Parsed config plus its loaded inputs.
pub struct Context {
    pub config: PipelineConfig,
    pub resolver: SiteResolver,
    pub registry: Registry,
    pub seeds: Vec<Url>,
    config_digest: String,
}

impl Context {
    pub fn new(config: PipelineConfig) -> Result<Context, PipelineError> {
        let diagnostics = validate_config(&config);
        if diagnostics.iter().any(|d| d.level == Level::Error) {
            return Err(PipelineError::Invalid(diagnostics));
        }
        for d in &diagnostics {
            log::warn!("{}", d.message);
        }
        let resolver = load_resolver(&config).map_err(PipelineError::Config)?;
        let registry = dataset::load_registry(&config.registry, &resolver)?;
        let seeds = config
            .seeds
            .iter()
            .map(|s| crawler::parse_seed(s).map_err(|e| PipelineError::Config(e.to_string())))
            .collect::<Result<_, _>>()?;
        let config_digest =
            report::digest_bytes(serde_json::to_string(&config).expect("config serializes").as_bytes());
        Ok(Context {
            config,
            resolver,
            registry,
            seeds,
            config_digest,
        })
    }

    pub fn load(path: &Path) -> Result<Context, PipelineError> {
        Context::new(PipelineConfig::load(path)?)
    }

    fn out(&self, parts: &[&str]) -> PathBuf {
        parts.iter().fold(self.config.output_dir.clone(), |p, s| p.join(s))
    }
}

fn load_resolver(config: &PipelineConfig) -> Result<SiteResolver, String> {
    let table = match &config.suffix_table {
        Some(p) => Arc::new(SuffixTable::load(p).map_err(|e| e.to_string())?),
        None => SuffixTable::bundled(),
    };
    let aliases = match &config.aliases {
        Some(p) => AliasSet::load(p).map_err(|e| e.to_string())?,
        None => AliasSet::default(),
    };
    Ok(SiteResolver::new(table, config.granularity, aliases))
}

/// Check a config without touching the output directory.
pub fn validate_config(config: &PipelineConfig) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut error = |m: String| out.push(Diagnostic { level: Level::Error, message: m });
    if config.seeds.is_empty() {
        error("no seeds configured".into());
    }
    for s in &config.seeds {
        if let Err(e) = crawler::parse_seed(s) {
            error(e.to_string());
        }
    }
    if !config.crawl.seeds.is_empty() {
        error("crawl.seeds must be empty; list seeds at the top level".into());
    }
    if let Err(e) = config.crawl.validate() {
        error(e.to_string());
    }
    for (what, path) in [
        ("registry", Some(&config.registry)),
        ("aliases", config.aliases.as_ref()),
        ("suffix_table", config.suffix_table.as_ref()),
        ("corpus", config.corpus.as_ref()),
        ("analysis.page_sizes", config.analysis.page_sizes.as_ref()),
    ] {
        if let Some(p) = path {
            if !p.exists() {
                error(format!("{what} {} does not exist", p.display()));
            }
        }
    }
    let providers = config.provider_configs();
    let mut names = BTreeSet::new();
    for p in &providers {
        if !names.insert(p.name()) {
            error(format!("provider {} defined twice", p.name()));
        }
        if let ProviderConfig::Local { index_dir: Some(dir), .. } = p {
            if !dir.join("forward.tsv").exists() {
                error(format!("provider {}: {} has no forward.tsv", p.name(), dir.display()));
            }
        }
    }
    for direction in [DataDirection::InData, DataDirection::OutData] {
        for name in config.provider_names(direction) {
            if !names.contains(name.as_str()) {
                error(format!("{direction:?} provider {name} is not defined"));
            }
        }
    }
    let prune: Vec<String> = config.analysis.prune_seed.clone();
    let resolver = match load_resolver(config) {
        Ok(r) => Some(r),
        Err(e) => {
            error(e);
            None
        }
    };
    let mut warnings = Vec::new();
    if let Some(resolver) = &resolver {
        let seed_keys: BTreeSet<SiteKey> = config
            .seeds
            .iter()
            .filter_map(|s| crawler::parse_seed(s).ok())
            .filter_map(|u| resolver.key_of(&u).ok())
            .collect();
        for p in &prune {
            match resolver.key_of_host(p) {
                Ok(k) if seed_keys.contains(&k) => {}
                _ => error(format!("analysis.prune_seed {p} is not a seed")),
            }
        }
        if config.registry.exists() {
            match dataset::load_registry(&config.registry, resolver) {
                Ok(reg) => {
                    if config.strict {
                        for k in &seed_keys {
                            if reg.get(k).is_none() {
                                error(format!("seed {k} is not in the registry"));
                            }
                        }
                    }
                }
                Err(e) => error(e.to_string()),
            }
        }
        // capability gaps
        let out_names = config.provider_names(DataDirection::OutData);
        let in_names = config.provider_names(DataDirection::InData);
        for p in &providers {
            let ProviderConfig::External(c) = p else { continue };
            let check = |direction: Direction, used: bool, warnings: &mut Vec<String>| {
                if !used {
                    return;
                }
                let support = c.capabilities.support(direction);
                let fallback = "the crawl index still covers sample sites it crawled";
                match support {
                    Support::None => warnings.push(format!(
                        "provider {} cannot answer {direction:?}; {fallback}",
                        c.name
                    )),
                    Support::Domain if config.granularity == Granularity::Subdomain => warnings.push(format!(
                        "provider {} answers {direction:?} for registrable domains only; subdomain members are skipped and {fallback}",
                        c.name
                    )),
                    _ => {}
                }
            };
            check(Direction::Inlinks, in_names.iter().any(|n| n == &c.name), &mut warnings);
            check(Direction::Outlinks, out_names.iter().any(|n| n == &c.name), &mut warnings);
        }
    }
    out.extend(warnings.into_iter().map(|m| Diagnostic { level: Level::Warning, message: m }));
    out
}

pub fn cmd_validate(config_path: &Path) -> Vec<Diagnostic> {
    match PipelineConfig::load(config_path) {
        Ok(cfg) => validate_config(&cfg),
        Err(e) => vec![Diagnostic {
            level: Level::Error,
            message: e.to_string(),
        }],
    }
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

fn file_stem(key: &SiteKey) -> String {
    key.as_str().replace(|c: char| !(c.is_ascii_alphanumeric() || c == '.' || c == '-'), "_")
}

/// Digest of every file under `dir`, by relative path.
fn digest_tree(dir: &Path) -> Result<String, PipelineError> {
    fn walk(dir: &Path, base: &Path, out: &mut Vec<(String, String)>) -> std::io::Result<()> {
        let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<Result<_, _>>()?;
        entries.sort_by_key(|e| e.file_name());
        for e in entries {
            let path = e.path();
            if e.file_type()?.is_dir() {
                walk(&path, base, out)?;
            } else {
                let rel = path.strip_prefix(base).unwrap_or(&path).to_string_lossy().replace('\\', "/");
                out.push((rel, report::digest_bytes(&fs::read(&path)?)));
            }
        }
        Ok(())
    }
    let mut files = Vec::new();
    walk(dir, dir, &mut files).map_err(runtime("reading corpus"))?;
    let listing: String = files.iter().map(|(p, d)| format!("{p}\t{d}\n")).collect();
    Ok(report::digest_bytes(listing.as_bytes()))
}

/// Per-seed crawl status.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedStatus {
    pub seed: String,
    pub ok: bool,
    pub pages: usize,
    pub site_outlinks: usize,
    pub message: Option<String>,
}

#[derive(Debug, Clone)]
pub struct CrawlOutcome {
    pub seeds: Vec<SeedStatus>,
    /// Seed crawls in seed order, then member crawls.
    pub results: Vec<CrawlResult>,
    pub cached: bool,
    pub warnings: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct CrawlCache {
    digest: String,
    files: Vec<String>,
    seeds: Vec<SeedStatus>,
    warnings: Vec<String>,
}

/// Crawl `seeds` and write one JSONL file per site plus the crawl index
/// under `dir`. A corpus crawl runs on a virtual clock.
pub fn crawl_to_dir(
    seeds: &[Url],
    cfg: &CrawlConfig,
    corpus: Option<&Path>,
    resolver: &SiteResolver,
    dir: &Path,
) -> Result<(Vec<SeedStatus>, Vec<CrawlResult>), PipelineError> {
    let (fetcher, clock) = fetcher_for(cfg, corpus);
    let mut statuses = Vec::new();
    let mut results = Vec::new();
    for (seed, res) in seeds.iter().zip(crawler::crawl_many(seeds, cfg, fetcher.as_ref(), clock.as_ref(), resolver)) {
        match res {
            Ok(r) => {
                statuses.push(SeedStatus {
                    seed: seed.to_string(),
                    ok: true,
                    pages: r.pages.len(),
                    site_outlinks: r.site_outlinks.len(),
                    message: None,
                });
                results.push(r);
            }
            Err(e) => statuses.push(SeedStatus {
                seed: seed.to_string(),
                ok: false,
                pages: 0,
                site_outlinks: 0,
                message: Some(e.to_string()),
            }),
        }
    }
    write_crawls(&results, resolver, dir)?;
    Ok((statuses, results))
}

fn fetcher_for(cfg: &CrawlConfig, corpus: Option<&Path>) -> (Box<dyn Fetcher>, Box<dyn Clock>) {
    match corpus {
        Some(root) => (Box::new(CorpusFetcher::new(root)), Box::new(VirtualClock::starting_at(0))),
        None => (
            Box::new(HttpFetcher::new(&cfg.user_agent, Duration::from_millis(cfg.fetch_timeout_ms))),
            Box::new(SystemClock),
        ),
    }
}

fn write_crawls(results: &[CrawlResult], resolver: &SiteResolver, dir: &Path) -> Result<Vec<String>, PipelineError> {
    fs::create_dir_all(dir).map_err(runtime("creating crawl dir"))?;
    let mut files = Vec::new();
    for r in results {
        let name = format!("{}.jsonl", file_stem(&r.site));
        let file = fs::File::create(dir.join(&name)).map_err(runtime("writing crawl"))?;
        crawler::write_jsonl(r, BufWriter::new(file)).map_err(runtime("writing crawl"))?;
        files.push(name);
    }
    let index = build_inverted_index_named(CRAWL_INDEX, results, &resolver.table);
    index.save(&dir.join("index")).map_err(runtime("writing crawl index"))?;
    Ok(files)
}

fn crawl_digest(ctx: &Context) -> Result<String, PipelineError> {
    let c = &ctx.config;
    let mut parts = vec![
        serde_json::to_string(&c.seeds).unwrap(),
        serde_json::to_string(&c.crawl).unwrap(),
        serde_json::to_string(&c.granularity).unwrap(),
        c.crawl_members.to_string(),
        c.strict.to_string(),
        serde_json::to_string(&c.sample_source).unwrap(),
        report::digest_file(&c.registry).map_err(runtime("registry"))?,
    ];
    for p in [&c.aliases, &c.suffix_table].into_iter().flatten() {
        parts.push(report::digest_file(p).map_err(runtime("input"))?);
    }
    parts.push(match &c.corpus {
        Some(root) => digest_tree(root)?,
        None => "live".into(),
    });
    Ok(report::digest_bytes(parts.join("\n").as_bytes()))
}

/// Crawl the seeds (and, if configured, the members they link to). Reuses
/// the previous crawl when its inputs are unchanged.
pub fn cmd_crawl(ctx: &Context) -> Result<CrawlOutcome, PipelineError> {
    let dir = ctx.out(&["crawl"]);
    let digest = crawl_digest(ctx)?;
    let cache_path = dir.join("cache.json");
    if let Ok(text) = fs::read_to_string(&cache_path) {
        if let Ok(cache) = serde_json::from_str::<CrawlCache>(&text) {
            if cache.digest == digest {
                if let Ok(results) = cache
                    .files
                    .iter()
                    .map(|f| {
                        let file = fs::File::open(dir.join(f))?;
                        crawler::read_jsonl(BufReader::new(file)).map_err(|e| std::io::Error::other(e.to_string()))
                    })
                    .collect::<Result<Vec<_>, _>>()
                {
                    log::info!("crawl inputs unchanged; reusing {}", dir.display());
                    return Ok(CrawlOutcome {
                        seeds: cache.seeds,
                        results,
                        cached: true,
                        warnings: cache.warnings,
                    });
                }
            }
        }
    }

    let cfg = &ctx.config;
    let (fetcher, clock) = fetcher_for(&cfg.crawl, cfg.corpus.as_deref());
    let mut statuses = Vec::new();
    let mut results = Vec::new();
    let crawls = crawler::crawl_many(&ctx.seeds, &cfg.crawl, fetcher.as_ref(), clock.as_ref(), &ctx.resolver);
    for (seed, res) in ctx.seeds.iter().zip(crawls) {
        let status = match &res {
            Ok(r) => SeedStatus {
                seed: seed.to_string(),
                ok: true,
                pages: r.pages.len(),
                site_outlinks: r.site_outlinks.len(),
                message: None,
            },
            Err(e) => SeedStatus {
                seed: seed.to_string(),
                ok: false,
                pages: 0,
                site_outlinks: 0,
                message: Some(e.to_string()),
            },
        };
        statuses.push(status);
        if let Ok(r) = res {
            results.push(r);
        }
    }
    if statuses.iter().any(|s| !s.ok) {
        return Err(PipelineError::Runtime(
            statuses
                .iter()
                .map(|s| match &s.message {
                    None => format!("{}: ok ({} pages)", s.seed, s.pages),
                    Some(m) => format!("{}: FAILED: {m}", s.seed),
                })
                .collect::<Vec<_>>()
                .join("\n"),
        ));
    }

    let mut warnings = Vec::new();
    if cfg.crawl_members {
        let crawled: BTreeSet<SiteKey> = results.iter().map(|r| r.site.clone()).collect();
        let mut members = BTreeSet::new();
        for sample in build_samples(ctx, &results)?.0 {
            members.extend(sample.keys().filter(|k| !crawled.contains(*k)).cloned());
        }
        let member_seeds: Vec<Url> = members
            .iter()
            .map(|k| parse_url(&format!("http://{k}/")).map_err(runtime("member url")))
            .collect::<Result<_, _>>()?;
        let crawls = crawler::crawl_many(&member_seeds, &cfg.crawl, fetcher.as_ref(), clock.as_ref(), &ctx.resolver);
        for (seed, res) in member_seeds.iter().zip(crawls) {
            match res {
                Ok(r) => results.push(r),
                Err(e) => warnings.push(format!("member {seed} not crawled: {e}")),
            }
        }
    }

    let files = write_crawls(&results, &ctx.resolver, &dir)?;
    let cache = CrawlCache {
        digest,
        files,
        seeds: statuses.clone(),
        warnings: warnings.clone(),
    };
    fs::write(&cache_path, serde_json::to_string_pretty(&cache).unwrap() + "\n").map_err(runtime("writing crawl cache"))?;
    Ok(CrawlOutcome {
        seeds: statuses,
        results,
        cached: false,
        warnings,
    })
}

/// One sample per seed crawl (the first `seeds.len()` results).
fn build_samples(ctx: &Context, results: &[CrawlResult]) -> Result<(Vec<Sample>, Vec<String>), PipelineError> {
    let mut samples = Vec::new();
    let mut warnings = Vec::new();
    for crawl in results.iter().take(ctx.seeds.len()) {
        match ctx.config.sample_source {
            SampleSource::Crawl => {
                let built = dataset::sample_from_seed_crawl(crawl, &ctx.registry, &ctx.resolver, ctx.config.strict)?;
                warnings.extend(built.warnings);
                samples.push(built.sample);
            }
            SampleSource::Registry => {
                let seed = ctx.resolver.rekey(&crawl.site).map_err(runtime("seed"))?;
                samples.push(Sample::from_registry(&seed, &ctx.registry, ctx.resolver.granularity)?);
            }
        }
    }
    Ok((samples, warnings))
}

fn make_providers(ctx: &Context, crawls: &[CrawlResult]) -> Result<Vec<Box<dyn LinkProvider>>, PipelineError> {
    let mut out: Vec<Box<dyn LinkProvider>> = Vec::new();
    for p in ctx.config.provider_configs() {
        match p {
            ProviderConfig::Local { name, index_dir: None } => {
                out.push(Box::new(build_inverted_index_named(&name, crawls, &ctx.resolver.table)));
            }
            ProviderConfig::Local { name, index_dir: Some(dir) } => {
                let retrieved_at = fs::metadata(dir.join("forward.tsv"))
                    .and_then(|m| m.modified())
                    .ok()
                    .and_then(|t| t.duration_since(UNIX_EPOCH).ok())
                    .map_or(0, |d| d.as_millis() as u64);
                let index = LocalIndex::load(&dir, name, retrieved_at, &ctx.resolver.table).map_err(runtime("index"))?;
                out.push(Box::new(index));
            }
            ProviderConfig::External(c) => {
                let transport = HttpTransport::new(&c.name, Duration::from_millis(ctx.config.crawl.fetch_timeout_ms));
                out.push(Box::new(ExternalProvider::new(
                    c,
                    Box::new(transport),
                    Arc::new(SystemClock),
                    ctx.resolver.table.clone(),
                )));
            }
        }
    }
    Ok(out)
}

/// Datasets for one sample.
#[derive(Debug, Clone)]
pub struct SampleData {
    pub label: String,
    pub sample: Sample,
    pub seed_crawl: CrawlResult,
    pub in_data: LinkDataset,
    pub out_data: LinkDataset,
}

#[derive(Debug, Clone)]
pub struct HarvestOutcome {
    pub crawl: CrawlOutcome,
    pub samples: Vec<SampleData>,
    /// Partial results, skipped queries, defaulted classifications.
    pub warnings: Vec<String>,
}

/// Build samples and both data sets per seed, writing them under
/// `samples/` and `datasets/`.
pub fn cmd_harvest(ctx: &Context) -> Result<HarvestOutcome, PipelineError> {
    let crawl = cmd_crawl(ctx)?;
    let (samples, mut warnings) = build_samples(ctx, &crawl.results)?;
    warnings.extend(crawl.warnings.iter().cloned());
    let providers = make_providers(ctx, &crawl.results)?;
    let pick = |direction: DataDirection| -> Vec<&dyn LinkProvider> {
        let names = ctx.config.provider_names(direction);
        providers.iter().filter(|p| names.iter().any(|n| n == p.name())).map(|p| p.as_ref()).collect()
    };
    let (in_providers, out_providers) = (pick(DataDirection::InData), pick(DataDirection::OutData));
    let mut out = Vec::new();
    for (sample, crawl_result) in samples.into_iter().zip(&crawl.results) {
        let in_data = dataset::build_dataset(DataDirection::InData, &in_providers, &sample, &ctx.resolver)?;
        let out_data = dataset::build_dataset(DataDirection::OutData, &out_providers, &sample, &ctx.resolver)?;
        warnings.extend(in_data.warnings());
        warnings.extend(out_data.warnings());
        let stem = file_stem(&sample.seed);
        let dir = ctx.out(&["datasets", &stem]);
        dataset::save_dataset(&in_data, &dir, "in")?;
        dataset::save_dataset(&out_data, &dir, "out")?;
        write_json(&ctx.out(&["samples", &format!("{stem}.json")]), &sample)?;
        out.push(SampleData {
            label: ctx.config.label(&sample.seed),
            sample,
            seed_crawl: crawl_result.clone(),
            in_data,
            out_data,
        });
    }
    Ok(HarvestOutcome {
        crawl,
        samples: out,
        warnings,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(runtime("creating output dir"))?;
    }
    let text = serde_json::to_string_pretty(value).map_err(runtime("serializing"))? + "\n";
    fs::write(path, text).map_err(runtime("writing output"))
}

fn write_text(path: &Path, text: &str) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(runtime("creating output dir"))?;
    }
    fs::write(path, text).map_err(runtime("writing output"))
}

/// Site sizes: crawled page counts, overridden by the size file.
fn page_sizes(ctx: &Context, crawls: &[CrawlResult]) -> Result<BTreeMap<SiteKey, u64>, PipelineError> {
    let mut sizes = BTreeMap::new();
    for r in crawls {
        for (k, &n) in &r.page_count_per_site {
            let k = ctx.resolver.rekey(k).unwrap_or_else(|_| k.clone());
            let e = sizes.entry(k).or_insert(0);
            *e = (*e).max(n as u64);
        }
    }
    if let Some(path) = &ctx.config.analysis.page_sizes {
        let text = fs::read_to_string(path).map_err(runtime("page sizes"))?;
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#')) {
            let bad = || PipelineError::Config(format!("{}:{}: expected key<TAB>pages", path.display(), i + 1));
            let (k, n) = line.split_once('\t').ok_or_else(bad)?;
            let key = SiteKey::parse(k.trim()).map_err(|_| bad())?;
            let key = ctx.resolver.rekey(&key).unwrap_or(key);
            sizes.insert(key, n.trim().parse().map_err(|_| bad())?);
        }
    }
    Ok(sizes)
}

/// Counts of harvested site-level links per member, as (inlinks, outlinks).
fn harvested_counts(ds: &LinkDataset, sample: &Sample) -> (Vec<f64>, Vec<f64>) {
    let mut ins = BTreeMap::new();
    let mut outs = BTreeMap::new();
    for r in &ds.records {
        *ins.entry(&r.target).or_insert(0.0) += 1.0;
        *outs.entry(&r.source).or_insert(0.0) += 1.0;
    }
    sample
        .keys()
        .map(|k| (ins.get(k).copied().unwrap_or(0.0), outs.get(k).copied().unwrap_or(0.0)))
        .unzip()
}

/// Networks derived for one sample.
#[derive(Debug, Clone)]
pub struct SampleNetworks {
    pub in_net: InterlinkNetwork,
    pub out_net: InterlinkNetwork,
    pub combined: InterlinkNetwork,
    /// Network used for centrality and exports: the combined network,
    /// pruned of the seed's outlinks when configured.
    pub local: InterlinkNetwork,
}

pub fn sample_networks(data: &SampleData, prune: bool) -> Result<SampleNetworks, PipelineError> {
    let in_net = network::interlink(&data.in_data, &data.sample);
    let out_net = network::interlink(&data.out_data, &data.sample);
    let combined = network::combine(&in_net, &out_net).map_err(runtime("combine"))?;
    let local = if prune {
        network::prune_seed_outlinks(&combined, &data.sample.seed).map_err(runtime("prune"))?
    } else {
        combined.clone()
    };
    Ok(SampleNetworks {
        in_net,
        out_net,
        combined,
        local,
    })
}

/// Build the report for one sample.
pub fn analyze_sample(
    data: &SampleData,
    nets: &SampleNetworks,
    flags: &AnalysisFlags,
    sizes: &BTreeMap<SiteKey, u64>,
) -> Result<SampleReport, PipelineError> {
    let m = |e: metrics::MetricsError| PipelineError::Runtime(format!("{}: {e}", data.label));
    let both = nets.combined.arc_count();
    let cohesion = CohesionRows {
        in_data: metrics::cohesion(&nets.in_net, Some(both), flags.reciprocity).map_err(m)?,
        out_data: metrics::cohesion(&nets.out_net, Some(both), flags.reciprocity).map_err(m)?,
        both: metrics::cohesion(&nets.combined, None, flags.reciprocity).map_err(m)?,
    };
    let correlation = metrics::correlation_report(&nets.in_net, &nets.out_net, &nets.local, sizes).map_err(m)?;

    let mut gini = Vec::new();
    for (label, net, ds) in [("in", &nets.in_net, &data.in_data), ("out", &nets.out_net, &data.out_data)] {
        let (gi, go) = metrics::degree_gini(net, flags.gini_variant).map_err(m)?;
        gini.push(GiniEntry {
            network: label.into(),
            basis: GiniBasis::Interlink,
            inlinks: gi,
            outlinks: go,
        });
        let (hi, ho) = harvested_counts(ds, &data.sample);
        gini.push(GiniEntry {
            network: label.into(),
            basis: GiniBasis::Harvested,
            inlinks: metrics::gini_with(&hi, flags.gini_variant).map_err(m)?,
            outlinks: metrics::gini_with(&ho, flags.gini_variant).map_err(m)?,
        });
    }

    let external: BTreeSet<&Url> = data.seed_crawl.site_outlinks.iter().filter_map(|r| r.target_url.as_ref()).collect();
    Ok(SampleReport {
        name: data.label.clone(),
        seed: data.sample.seed.clone(),
        external_links: Some(external.len()),
        organisations: data.sample.len() - 1,
        relationships: SampleReport::relationship_counts(&data.sample),
        cohesion,
        correlation,
        gini,
        centrality: CentralityTable::compute(&nets.local),
        sectors: metrics::sector_matrix(&nets.combined, &data.sample, flags.exclude_seed_outlinks).map_err(m)?,
    })
}

#[derive(Debug, Clone)]
pub struct AnalyzeOutcome {
    pub report: AnalysisReport,
    pub manifest: RunManifest,
    pub warnings: Vec<String>,
    pub files: Vec<PathBuf>,
}

/// Everything: harvest, networks, metrics, tables, exports, manifest.
pub fn cmd_analyze(ctx: &Context) -> Result<AnalyzeOutcome, PipelineError> {
    let mut manifest = RunManifest::new(ctx.config_digest.clone(), now_ms());
    let result = analyze_into(ctx, &mut manifest);
    manifest.finished_at_ms = now_ms();
    manifest.status = if result.is_ok() { "completed".into() } else { "failed".into() };
    let manifest_path = ctx.out(&["manifest.json"]);
    fs::create_dir_all(&ctx.config.output_dir).map_err(runtime("creating output dir"))?;
    report::write_manifest(&manifest, &manifest_path).map_err(runtime("manifest"))?;
    let (report, warnings, mut files) = result?;
    files.push(manifest_path);
    Ok(AnalyzeOutcome {
        report,
        manifest,
        warnings,
        files,
    })
}

type Analysis = (AnalysisReport, Vec<String>, Vec<PathBuf>);

fn analyze_into(ctx: &Context, manifest: &mut RunManifest) -> Result<Analysis, PipelineError> {
    let c = &ctx.config;
    for p in [Some(&c.registry), c.aliases.as_ref(), c.suffix_table.as_ref(), c.analysis.page_sizes.as_ref()]
        .into_iter()
        .flatten()
    {
        manifest.add_input(p).map_err(runtime("input digest"))?;
    }
    if let Some(root) = &c.corpus {
        manifest.inputs.insert(root.display().to_string(), digest_tree(root)?);
    }

    let harvest = cmd_harvest(ctx)?;
    let sizes = page_sizes(ctx, &harvest.crawl.results)?;
    let prune: BTreeSet<SiteKey> = c
        .analysis
        .prune_seed
        .iter()
        .filter_map(|p| ctx.resolver.key_of_host(p).ok())
        .collect();

    let mut files = Vec::new();
    let mut samples = Vec::new();
    for data in &harvest.samples {
        let nets = sample_networks(data, prune.contains(&data.sample.seed))?;
        let stem = file_stem(&data.sample.seed);
        for (name, net) in [("in", &nets.in_net), ("out", &nets.out_net), ("combined", &nets.combined), ("local", &nets.local)] {
            let path = ctx.out(&["networks", &stem, &format!("{name}.matrix.tsv")]);
            write_text(&path, &network::write_matrix(net))?;
            files.push(path);
        }
        let sample_report = analyze_sample(data, &nets, &c.analysis, &sizes)?;
        files.extend(write_graphs(ctx, &stem, &nets.local, &data.sample, &sample_report.centrality)?);
        manifest.counts.insert(
            data.sample.seed.to_string(),
            StageCounts {
                in_raw_links: data.in_data.raw_count,
                out_raw_links: data.out_data.raw_count,
                in_deduped: data.in_data.deduped_count,
                out_deduped: data.out_data.deduped_count,
                in_interlinked: nets.in_net.arc_count(),
                out_interlinked: nets.out_net.arc_count(),
                combined: nets.combined.arc_count(),
            },
        );
        samples.push(sample_report);
    }

    let report = AnalysisReport {
        reciprocity: c.analysis.reciprocity,
        gini_variant: c.analysis.gini_variant,
        exclude_seed_outlinks: c.analysis.exclude_seed_outlinks,
        samples,
    };
    let tables_dir = ctx.out(&["tables"]);
    for style in &c.analysis.table_styles {
        files.extend(report::write_tables(&report, *style, &tables_dir).map_err(runtime("tables"))?);
    }
    let reports_dir = ctx.out(&["reports"]);
    let correlations: BTreeMap<&str, _> = report.samples.iter().map(|s| (s.seed.as_str(), &s.correlation)).collect();
    let gini: BTreeMap<&str, _> = report.samples.iter().map(|s| (s.seed.as_str(), &s.gini)).collect();
    for (name, json) in [
        ("analysis.json", serde_json::to_value(&report)),
        ("correlations.json", serde_json::to_value(&correlations)),
        ("gini.json", serde_json::to_value(&gini)),
    ] {
        let path = reports_dir.join(name);
        write_json(&path, &json.map_err(runtime("serializing"))?)?;
        files.push(path);
    }
    let out_root = &c.output_dir;
    for f in &files {
        let rel = f.strip_prefix(out_root).unwrap_or(f).to_string_lossy().replace('\\', "/");
        manifest.outputs.insert(rel, report::digest_file(f).map_err(runtime("output digest"))?);
    }
    Ok((report, harvest.warnings, files))
}

fn write_graphs(
    ctx: &Context,
    stem: &str,
    net: &InterlinkNetwork,
    sample: &Sample,
    centrality: &CentralityTable,
) -> Result<Vec<PathBuf>, PipelineError> {
    let mut files = Vec::new();
    for format in &ctx.config.analysis.graph_formats {
        let path = ctx.out(&["graphs", &format!("{stem}.{}", format.extension())]);
        write_text(&path, &report::export_graph(net, sample, centrality, *format))?;
        files.push(path);
    }
    Ok(files)
}

/// Re-export graphs from the networks and samples written by `analyze`.
pub fn cmd_export(ctx: &Context, formats: &[GraphFormat]) -> Result<Vec<PathBuf>, PipelineError> {
    let mut files = Vec::new();
    for seed in &ctx.seeds {
        let key = ctx.resolver.key_of(seed).map_err(runtime("seed"))?;
        let stem = file_stem(&key);
        let sample_path = ctx.out(&["samples", &format!("{stem}.json")]);
        let net_path = ctx.out(&["networks", &stem, "local.matrix.tsv"]);
        let missing = |p: &Path| PipelineError::Runtime(format!("{} missing; run analyze first", p.display()));
        let sample: Sample = serde_json::from_str(&fs::read_to_string(&sample_path).map_err(|_| missing(&sample_path))?)
            .map_err(runtime("sample"))?;
        let matrix = fs::read_to_string(&net_path).map_err(|_| missing(&net_path))?;
        let net = network::read_matrix(&matrix, Provenance::Combined, sample.seed.clone()).map_err(runtime("network"))?;
        let centrality = CentralityTable::compute(&net);
        for format in formats {
            let path = ctx.out(&["graphs", &format!("{stem}.{}", format.extension())]);
            write_text(&path, &report::export_graph(&net, &sample, &centrality, *format))?;
            files.push(path);
        }
    }
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults() {
        let cfg = PipelineConfig::from_json(r#"{"seeds":["http://a.com/"],"registry":"r.csv"}"#).unwrap();
        assert_eq!(cfg.granularity, Granularity::Domain);
        assert!(cfg.analysis.exclude_seed_outlinks);
        assert_eq!(cfg.analysis.reciprocity, ReciprocityMethod::Arc);
        assert_eq!(cfg.analysis.gini_variant, GiniVariant::Population);
        assert_eq!(cfg.crawl.max_depth, 2);
        assert_eq!(cfg.provider_names(DataDirection::InData), vec![CRAWL_INDEX]);
    }

    #[test]
    fn unknown_keys_and_bad_enums_are_rejected() {
        assert!(PipelineConfig::from_json(r#"{"seeds":[],"registry":"r","colour":1}"#).is_err());
        let bad = r#"{"seeds":[],"registry":"r","analysis":{"reciprocity":"weird"}}"#;
        assert!(PipelineConfig::from_json(bad).is_err());
    }

    #[test]
    fn provider_configs_parse() {
        let cfg = PipelineConfig::from_json(
            r#"{"seeds":["http://a.com/"],"registry":"r.csv","providers":[
                {"kind":"local","name":"crawl"},
                {"kind":"external","name":"idx","endpoint":"https://x.invalid/",
                 "capabilities":{"inlinks":"full","outlinks":"domain","exclusions":true,"max_exclusions":10}}]}"#,
        )
        .unwrap();
        assert_eq!(cfg.providers.len(), 2);
        assert_eq!(cfg.provider_names(DataDirection::OutData), vec!["crawl", "idx"]);
    }

    #[test]
    fn validation_reports_missing_paths_and_seeds() {
        let cfg = PipelineConfig::from_json(r#"{"seeds":["mailto:x@y.com"],"registry":"/nonexistent/r.csv"}"#).unwrap();
        let d = validate_config(&cfg);
        assert!(d.iter().any(|d| d.message.contains("does not exist")));
        assert!(d.iter().filter(|d| d.level == Level::Error).count() >= 2);
    }
}
