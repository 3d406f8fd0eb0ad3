use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sitenet::crawler::{self, CrawlConfig};
use sitenet::pipeline::{self, Context, Level, PipelineConfig, PipelineError};
use sitenet::report::GraphFormat;
use sitenet::site::{Granularity, SiteResolver};

/// Build and measure hyperlink interlinking networks between websites.
#[derive(Parser)]
#[command(name = "sitenet", version)]
struct Cli {
    /// Pipeline configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding the configured one.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Treat partial-data warnings as failures (exit code 3).
    #[arg(long, global = true)]
    strict: bool,
    /// More log output; repeat for debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the configuration, registry, aliases and providers.
    Validate,
    /// Crawl seeds. Without --config, crawls the given --seed URLs.
    Crawl {
        #[arg(long)]
        seed: Vec<String>,
        #[arg(long)]
        depth: Option<u32>,
        /// Serve pages from a fixture corpus directory.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Per-host delay in milliseconds.
        #[arg(long)]
        delay: Option<u64>,
        #[arg(long, default_value = "domain")]
        granularity: Granularity,
        /// Ignore robots.txt.
        #[arg(long)]
        ignore_robots: bool,
    },
    /// Build samples and in/out data sets.
    Harvest,
    /// Run the whole pipeline and write tables, reports and graphs.
    Analyze,
    /// Re-export graphs from a previous analyze run.
    Export {
        #[arg(long = "format", value_parser = parse_format)]
        formats: Vec<GraphFormat>,
    },
}

fn parse_format(s: &str) -> Result<GraphFormat, String> {
    s.parse().map_err(|e: sitenet::report::ReportError| e.to_string())
}

const EXIT_VALIDATION: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_PARTIAL: u8 = 3;

enum Failure {
    Pipeline(PipelineError),
    Other(u8, anyhow::Error),
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure::Pipeline(e)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_VALIDATION) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match run(&cli) {
        Ok(warnings) => {
            for w in &warnings {
                eprintln!("warning: {w}");
            }
            if cli.strict && !warnings.is_empty() {
                eprintln!("{} warning(s) with --strict", warnings.len());
                ExitCode::from(EXIT_PARTIAL)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(Failure::Pipeline(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
        Err(Failure::Other(code, e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}

fn context(cli: &Cli) -> Result<Context, Failure> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Failure::Other(EXIT_VALIDATION, anyhow::anyhow!("--config is required")))?;
    let mut cfg = PipelineConfig::load(path)?;
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    Ok(Context::new(cfg)?)
}

/// Runs a command and returns its warnings.
fn run(cli: &Cli) -> Result<Vec<String>, Failure> {
    match &cli.command {
        Command::Validate => {
            let path = cli
                .config
                .as_ref()
                .ok_or_else(|| Failure::Other(EXIT_VALIDATION, anyhow::anyhow!("--config is required")))?;
            let diagnostics = pipeline::cmd_validate(path);
            for d in &diagnostics {
                println!("{d}");
            }
            let errors = diagnostics.iter().filter(|d| d.level == Level::Error).count();
            println!("{} finding(s), {errors} error(s)", diagnostics.len());
            if errors > 0 {
                return Err(Failure::Other(EXIT_VALIDATION, anyhow::anyhow!("configuration is invalid")));
            }
            Ok(diagnostics.into_iter().filter(|d| d.level == Level::Warning).map(|d| d.message).collect())
        }
        Command::Crawl {
            seed,
            depth,
            corpus,
            delay,
            granularity,
            ignore_robots,
        } if !seed.is_empty() => {
            let out = cli
                .out
                .as_ref()
                .ok_or_else(|| Failure::Other(EXIT_VALIDATION, anyhow::anyhow!("--out is required with --seed")))?;
            let seeds = seed
                .iter()
                .map(|s| crawler::parse_seed(s))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| Failure::Other(EXIT_VALIDATION, e.into()))?;
            let mut cfg = CrawlConfig::default();
            if let Some(d) = depth {
                cfg.max_depth = *d;
            }
            if let Some(d) = delay {
                cfg.per_host_delay_ms = *d;
            }
            cfg.respect_robots = !ignore_robots;
            let resolver = SiteResolver::bundled(*granularity);
            let (statuses, _) = pipeline::crawl_to_dir(&seeds, &cfg, corpus.as_deref(), &resolver, out)?;
            report_statuses(&statuses)?;
            Ok(Vec::new())
        }
        Command::Crawl { .. } => {
            let ctx = context(cli)?;
            let outcome = pipeline::cmd_crawl(&ctx)?;
            report_statuses(&outcome.seeds)?;
            println!(
                "{} site crawl(s){}",
                outcome.results.len(),
                if outcome.cached { " (cached)" } else { "" }
            );
            Ok(outcome.warnings)
        }
        Command::Harvest => {
            let ctx = context(cli)?;
            let h = pipeline::cmd_harvest(&ctx)?;
            for s in &h.samples {
                println!(
                    "{}: {} members, in-data {} links ({} raw), out-data {} links ({} raw)",
                    s.label,
                    s.sample.len(),
                    s.in_data.deduped_count,
                    s.in_data.raw_count,
                    s.out_data.deduped_count,
                    s.out_data.raw_count
                );
            }
            Ok(h.warnings)
        }
        Command::Analyze => {
            let ctx = context(cli)?;
            let a = pipeline::cmd_analyze(&ctx)?;
            for s in &a.report.samples {
                let c = &s.cohesion;
                println!(
                    "{}: n={} ties in/out/both {}/{}/{}",
                    s.name, c.both.n, c.in_data.ties, c.out_data.ties, c.both.ties
                );
            }
            println!("wrote {} file(s) to {}", a.files.len(), ctx.config.output_dir.display());
            Ok(a.warnings)
        }
        Command::Export { formats } => {
            let ctx = context(cli)?;
            let formats = if formats.is_empty() { GraphFormat::ALL.to_vec() } else { formats.clone() };
            let files = pipeline::cmd_export(&ctx, &formats)?;
            for f in files {
                println!("{}", f.display());
            }
            Ok(Vec::new())
        }
    }
}

fn report_statuses(statuses: &[pipeline::SeedStatus]) -> Result<(), Failure> {
    for s in statuses {
        match &s.message {
            None => println!("{}: ok, {} pages, {} site outlinks", s.seed, s.pages, s.site_outlinks),
            Some(m) => println!("{}: failed: {m}", s.seed),
        }
    }
    let failed = statuses.iter().filter(|s| !s.ok).count();
    if failed > 0 {
        return Err(Failure::Other(EXIT_RUNTIME, anyhow::anyhow!("{failed} seed(s) failed")));
    }
    Ok(())
}
