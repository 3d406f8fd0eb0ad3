//! Table rendering, graph export and run manifests.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::{Relationship, Sample, Sector};
use crate::metrics::{
    CentralityTable, CohesionReport, CorrelationReport, GiniBasis, GiniEntry, GiniVariant,
    ReciprocityMethod, SectorMatrix,
};
use crate::network::{InterlinkNetwork, Provenance};
use crate::site::SiteKey;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("unknown {kind} {value:?}")]
    UnknownFormat { kind: &'static str, value: String },
    #[error("edgelist line {line}: {reason}")]
    Edgelist { line: usize, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("manifest: {0}")]
    Manifest(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ReportError + '_ {
    move |source| ReportError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Half away from zero at two decimals, printed with exactly two digits.
pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0 + 0.0
}

pub fn fmt2(x: f64) -> String {
    format!("{:.2}", round2(x))
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt2).unwrap_or_else(|| "-".into())
}

/// `count (pct%)` with the percentage rounded half away from zero.
pub fn count_with_percent(count: usize, of: usize) -> String {
    if of == 0 {
        return format!("{count}");
    }
    let pct = (count as f64 * 100.0 / of as f64).round();
    format!("{count} ({pct}%)")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableStyle {
    Csv,
    Text,
}

impl TableStyle {
    pub fn extension(self) -> &'static str {
        match self {
            TableStyle::Csv => "csv",
            TableStyle::Text => "txt",
        }
    }
}

impl FromStr for TableStyle {
    type Err = ReportError;
    fn from_str(s: &str) -> Result<Self, ReportError> {
        match s {
            "csv" => Ok(TableStyle::Csv),
            "text" | "txt" => Ok(TableStyle::Text),
            _ => Err(ReportError::UnknownFormat {
                kind: "table style",
                value: s.into(),
            }),
        }
    }
}

/// Cohesion rows for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohesionRows {
    pub in_data: CohesionReport,
    pub out_data: CohesionReport,
    pub both: CohesionReport,
}

/// Everything computed for one seed's sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleReport {
    pub name: String,
    pub seed: SiteKey,
    /// Distinct external URLs linked from the seed crawl, when crawled.
    pub external_links: Option<usize>,
    /// Members other than the seed.
    pub organisations: usize,
    /// Counts in [`Relationship::ALL`] order.
    pub relationships: Vec<usize>,
    pub cohesion: CohesionRows,
    pub correlation: CorrelationReport,
    pub gini: Vec<GiniEntry>,
    pub centrality: CentralityTable,
    pub sectors: SectorMatrix,
}

impl SampleReport {
    pub fn relationship_counts(sample: &Sample) -> Vec<usize> {
        let mut counts = vec![0; Relationship::ALL.len()];
        for org in sample.members.iter().filter(|o| o.key != sample.seed) {
            let i = Relationship::ALL.iter().position(|r| *r == org.relationship).unwrap();
            counts[i] += 1;
        }
        counts
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub reciprocity: ReciprocityMethod,
    pub gini_variant: GiniVariant,
    pub exclude_seed_outlinks: bool,
    pub samples: Vec<SampleReport>,
}

impl AnalysisReport {
    /// Sector matrices summed over samples.
    pub fn sector_totals(&self) -> SectorMatrix {
        let mut m = SectorMatrix {
            counts: [[0; 3]; 3],
            org_counts: [0; 3],
            excluded_seed_arcs: 0,
        };
        for s in &self.samples {
            for i in 0..3 {
                m.org_counts[i] += s.sectors.org_counts[i];
                for j in 0..3 {
                    m.counts[i][j] += s.sectors.counts[i][j];
                }
            }
            m.excluded_seed_arcs += s.sectors.excluded_seed_arcs;
        }
        m
    }
}

/// A rendered table: file name and contents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedTable {
    pub file_name: String,
    pub contents: String,
}

type Rows = Vec<Vec<String>>;

fn row<I: IntoIterator<Item = S>, S: Into<String>>(cells: I) -> Vec<String> {
    cells.into_iter().map(Into::into).collect()
}

fn to_csv(rows: &Rows) -> String {
    let mut w = csv::WriterBuilder::new()
        .flexible(true)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    for r in rows {
        w.write_record(r).expect("writing to memory");
    }
    String::from_utf8(w.into_inner().expect("flush to memory")).expect("utf-8 cells")
}

/// Columns padded to a common width, two-space gutter. Rows starting with
/// an empty marker row (length 1) are printed verbatim as section titles.
fn to_text(title: &str, rows: &Rows) -> String {
    let width = rows.iter().filter(|r| r.len() > 1).map(Vec::len).max().unwrap_or(0);
    let mut widths = vec![0; width];
    for r in rows.iter().filter(|r| r.len() > 1) {
        for (i, c) in r.iter().enumerate() {
            widths[i] = widths[i].max(c.chars().count());
        }
    }
    let mut out = format!("{title}\n\n");
    for r in rows {
        if r.len() == 1 {
            out.push_str(&r[0]);
        } else {
            let mut line = String::new();
            for (i, c) in r.iter().enumerate() {
                if i > 0 {
                    line.push_str("  ");
                }
                let _ = write!(line, "{:<w$}", c, w = widths[i]);
            }
            out.push_str(line.trim_end());
        }
        out.push('\n');
    }
    out
}

fn emit(name: &str, title: &str, style: TableStyle, text_rows: &Rows, csv_rows: &Rows) -> RenderedTable {
    RenderedTable {
        file_name: format!("{name}.{}", style.extension()),
        contents: match style {
            TableStyle::Csv => to_csv(csv_rows),
            TableStyle::Text => to_text(title, text_rows),
        },
    }
}

fn table_relationships(report: &AnalysisReport, style: TableStyle) -> RenderedTable {
    let samples = &report.samples;
    let mut header = row([""]);
    header.extend(samples.iter().map(|s| s.name.clone()));
    header.push("Total".into());

    let ext_total: Option<usize> = samples.iter().map(|s| s.external_links).sum();
    let mut ext = row(["External links"]);
    ext.extend(samples.iter().map(|s| s.external_links.map_or("-".into(), |n| n.to_string())));
    ext.push(ext_total.map_or("-".into(), |n| n.to_string()));

    let org_total: usize = samples.iter().map(|s| s.organisations).sum();
    let mut orgs = row(["Organisations"]);
    orgs.extend(samples.iter().map(|s| s.organisations.to_string()));
    orgs.push(org_total.to_string());

    let mut text = vec![header.clone(), ext.clone(), orgs.clone(), row(["Type of relationship"])];
    let mut csv_rows = vec![header, ext, orgs];
    for (i, rel) in Relationship::ALL.iter().enumerate() {
        let total: usize = samples.iter().map(|s| s.relationships[i]).sum();
        let mut t = row([rel.to_string()]);
        let mut c = row([rel.to_string()]);
        for s in samples {
            let n = s.relationships[i];
            t.push(if n == 0 { String::new() } else { count_with_percent(n, s.organisations) });
            c.push(n.to_string());
        }
        t.push(if total == 0 { String::new() } else { count_with_percent(total, org_total) });
        c.push(total.to_string());
        text.push(t);
        csv_rows.push(c);
    }
    emit("table1_relationships", "Websites linked to by each seed, by relationship", style, &text, &csv_rows)
}

fn cohesion_cells(c: &CohesionReport) -> [String; 6] {
    [
        c.inclusiveness_count.to_string(),
        format!("({})", fmt2(c.inclusiveness_ratio)),
        c.ties.to_string(),
        c.connectivity_gap.map(fmt2).unwrap_or_default(),
        fmt2(c.density),
        fmt2(c.reciprocity),
    ]
}

fn table_cohesion(report: &AnalysisReport, style: TableStyle) -> RenderedTable {
    let mut text = Vec::new();
    let mut csv_rows = vec![row([
        "sample",
        "network",
        "inclusiveness",
        "inclusiveness_ratio",
        "ties",
        "connectivity_gap",
        "density",
        "reciprocity",
    ])];
    for (k, s) in report.samples.iter().enumerate() {
        if k > 0 {
            text.push(row([""]));
        }
        text.push(row([format!("{}) {}", k + 1, s.name)]));
        text.push(row(["", "Inclusiveness", "Ties", "Connectivity Gap", "Density", "Reciprocity"]));
        for (label, c) in [("in", &s.cohesion.in_data), ("out", &s.cohesion.out_data), ("both", &s.cohesion.both)] {
            let cells = cohesion_cells(c);
            text.push(row([
                label.to_string(),
                format!("{} {}", cells[0], cells[1]),
                cells[2].clone(),
                cells[3].clone(),
                cells[4].clone(),
                cells[5].clone(),
            ]));
            let mut r = row([s.name.as_str(), label]);
            r.push(cells[0].clone());
            r.push(fmt2(c.inclusiveness_ratio));
            r.extend(cells[2..].iter().cloned());
            csv_rows.push(r);
        }
    }
    emit("table2_cohesion", "Structural cohesion of the in- and out-data networks", style, &text, &csv_rows)
}

fn table_pearson(report: &AnalysisReport, style: TableStyle) -> RenderedTable {
    let mut text = vec![row(["", "Inlinks", "Outlinks"])];
    let mut csv_rows = vec![row(["sample", "pearson_in", "pearson_out"])];
    for (k, s) in report.samples.iter().enumerate() {
        let cells = [fmt_opt(s.correlation.pearson_in), fmt_opt(s.correlation.pearson_out)];
        text.push(row([format!("{}) {}", k + 1, s.name), cells[0].clone(), cells[1].clone()]));
        csv_rows.push(row([s.name.clone(), cells[0].clone(), cells[1].clone()]));
    }
    emit("table3_pearson", "Pearson correlation of degrees across the two data sets", style, &text, &csv_rows)
}

fn gini_cells(entries: &[GiniEntry], basis: GiniBasis) -> [String; 4] {
    let find = |net: &str| entries.iter().find(|e| e.basis == basis && e.network == net);
    let pair = |e: Option<&GiniEntry>| match e {
        Some(e) => [fmt2(e.inlinks), fmt2(e.outlinks)],
        None => ["-".into(), "-".into()],
    };
    let [a, b] = pair(find("in"));
    let [c, d] = pair(find("out"));
    [a, b, c, d]
}

fn table_gini(report: &AnalysisReport, style: TableStyle) -> RenderedTable {
    let mut text = Vec::new();
    let mut csv_rows = vec![row([
        "sample",
        "basis",
        "in_data_inlinks",
        "in_data_outlinks",
        "out_data_inlinks",
        "out_data_outlinks",
    ])];
    for (basis, label) in [(GiniBasis::Interlink, "interlink"), (GiniBasis::Harvested, "harvested")] {
        if !text.is_empty() {
            text.push(row([""]));
        }
        text.push(row([format!("Basis: {label}")]));
        text.push(row(["", "IN Inlinks", "IN Outlinks", "OUT Inlinks", "OUT Outlinks"]));
        for (k, s) in report.samples.iter().enumerate() {
            let cells = gini_cells(&s.gini, basis);
            let mut t = row([format!("{}) {}", k + 1, s.name)]);
            t.extend(cells.iter().cloned());
            text.push(t);
            let mut c = row([s.name.as_str(), label]);
            c.extend(cells);
            csv_rows.push(c);
        }
    }
    emit("table4_gini", "Gini coefficients of in- and outlinks per data set", style, &text, &csv_rows)
}

/// Sector interconnection table for one matrix.
pub fn sector_rows(m: &SectorMatrix) -> Rows {
    let mut rows = vec![row(["Websites", "Outlinks / Inlinks", "Industry", "Academia", "Government", "Total", "Mean"])];
    for s in Sector::ALL {
        let mut r = row([m.org_counts[s.index()].to_string(), s.to_string()]);
        r.extend(m.counts[s.index()].iter().map(|c| c.to_string()));
        r.push(m.row_total(s).to_string());
        r.push(fmt_opt(m.row_mean(s)));
        rows.push(r);
    }
    let mut total = row([m.total_orgs().to_string(), "Total".into()]);
    total.extend(Sector::ALL.iter().map(|&s| m.col_total(s).to_string()));
    total.push(m.grand_total().to_string());
    total.push(fmt_opt(m.grand_mean()));
    rows.push(total);
    let mut mean = row(["", "Mean"]);
    mean.extend(Sector::ALL.iter().map(|&s| fmt_opt(m.col_mean(s))));
    mean.push(fmt_opt(m.grand_mean()));
    mean.push(String::new());
    rows.push(mean);
    rows
}

fn table_sectors(report: &AnalysisReport, style: TableStyle) -> RenderedTable {
    let rows = sector_rows(&report.sector_totals());
    emit("table5_sectors", "Interconnections between institutional sectors", style, &rows, &rows)
}

fn table_centrality(report: &AnalysisReport, style: TableStyle) -> RenderedTable {
    const TOP: usize = 5;
    let mut text = Vec::new();
    let mut csv_rows = vec![row(["sample", "rank", "in_node", "in_degree", "out_node", "out_degree", "btw_node", "betweenness"])];
    for (k, s) in report.samples.iter().enumerate() {
        let c = &s.centrality;
        let by_in = c.top_by(TOP, |i| c.in_degree[i] as f64);
        let by_out = c.top_by(TOP, |i| c.out_degree[i] as f64);
        let by_btw = c.top_by(TOP, |i| c.betweenness[i]);
        if k > 0 {
            text.push(row([""]));
        }
        text.push(row([format!("{}) {}", k + 1, s.name)]));
        text.push(row(["Organisations", "InDeg", "Organisations", "OutDeg", "Organisations", "Betweenness"]));
        for r in 0..by_in.len() {
            let cells = row([
                c.nodes[by_in[r]].to_string(),
                c.in_degree[by_in[r]].to_string(),
                c.nodes[by_out[r]].to_string(),
                c.out_degree[by_out[r]].to_string(),
                c.nodes[by_btw[r]].to_string(),
                fmt2(c.betweenness[by_btw[r]]),
            ]);
            let mut csv_row = row([s.name.clone(), (r + 1).to_string()]);
            csv_row.extend(cells.iter().cloned());
            csv_rows.push(csv_row);
            text.push(cells);
        }
    }
    emit("table6_centrality", "Highest centrality scores per sample", style, &text, &csv_rows)
}

/// One rendered file per table.
pub fn render_tables(report: &AnalysisReport, style: TableStyle) -> Vec<RenderedTable> {
    vec![
        table_relationships(report, style),
        table_cohesion(report, style),
        table_pearson(report, style),
        table_gini(report, style),
        table_sectors(report, style),
        table_centrality(report, style),
    ]
}

pub fn write_tables(report: &AnalysisReport, style: TableStyle, dir: &Path) -> Result<Vec<PathBuf>, ReportError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    render_tables(report, style)
        .into_iter()
        .map(|t| {
            let path = dir.join(&t.file_name);
            fs::write(&path, t.contents).map_err(io_err(&path))?;
            Ok(path)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphFormat {
    Gexf,
    Dot,
    Edgelist,
}

impl GraphFormat {
    pub const ALL: [GraphFormat; 3] = [GraphFormat::Gexf, GraphFormat::Dot, GraphFormat::Edgelist];

    pub fn extension(self) -> &'static str {
        match self {
            GraphFormat::Gexf => "gexf",
            GraphFormat::Dot => "dot",
            GraphFormat::Edgelist => "tsv",
        }
    }
}

impl FromStr for GraphFormat {
    type Err = ReportError;
    fn from_str(s: &str) -> Result<Self, ReportError> {
        match s {
            "gexf" => Ok(GraphFormat::Gexf),
            "dot" => Ok(GraphFormat::Dot),
            "edgelist" | "tsv" => Ok(GraphFormat::Edgelist),
            _ => Err(ReportError::UnknownFormat {
                kind: "graph format",
                value: s.into(),
            }),
        }
    }
}

struct NodeAttrs {
    name: String,
    sector: String,
    relationship: String,
}

fn node_attrs(net: &InterlinkNetwork, sample: &Sample) -> Vec<NodeAttrs> {
    net.nodes()
        .iter()
        .map(|k| match sample.get(k) {
            Some(o) => NodeAttrs {
                name: o.name.clone(),
                sector: o.sector.to_string(),
                relationship: o.relationship.to_string(),
            },
            None => NodeAttrs {
                name: k.to_string(),
                sector: String::new(),
                relationship: String::new(),
            },
        })
        .collect()
}

pub const MUTUAL_PENWIDTH: &str = "2.5";
pub const SINGLE_PENWIDTH: &str = "1.0";

/// Serialize a network with node attributes and per-edge mutuality.
/// `centrality` must have been computed on `net`.
pub fn export_graph(
    net: &InterlinkNetwork,
    sample: &Sample,
    centrality: &CentralityTable,
    format: GraphFormat,
) -> String {
    match format {
        GraphFormat::Edgelist => write_edgelist(net),
        GraphFormat::Dot => write_dot(net, sample, centrality),
        GraphFormat::Gexf => write_gexf(net, sample, centrality),
    }
}

fn dot_quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

fn write_dot(net: &InterlinkNetwork, sample: &Sample, c: &CentralityTable) -> String {
    let attrs = node_attrs(net, sample);
    let mut out = String::from("digraph interlink {\n");
    for (i, key) in net.nodes().iter().enumerate() {
        let a = &attrs[i];
        let _ = writeln!(
            out,
            "  {} [label={}, name={}, sector={}, relationship={}, in_degree={}, out_degree={}, betweenness={}];",
            dot_quote(key.as_str()),
            dot_quote(key.as_str()),
            dot_quote(&a.name),
            dot_quote(&a.sector),
            dot_quote(&a.relationship),
            c.in_degree[i],
            c.out_degree[i],
            c.betweenness[i],
        );
    }
    for (i, j) in net.arcs() {
        let mutual = net.has_arc(j, i);
        let _ = writeln!(
            out,
            "  {} -> {} [mutual={}, penwidth={}];",
            dot_quote(net.nodes()[i].as_str()),
            dot_quote(net.nodes()[j].as_str()),
            mutual,
            if mutual { MUTUAL_PENWIDTH } else { SINGLE_PENWIDTH },
        );
    }
    out.push_str("}\n");
    out
}

fn xml(s: &str) -> std::borrow::Cow<'_, str> {
    quick_xml::escape::escape(s)
}

fn write_gexf(net: &InterlinkNetwork, sample: &Sample, c: &CentralityTable) -> String {
    let attrs = node_attrs(net, sample);
    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    out.push_str("<gexf xmlns=\"http://www.gexf.net/1.2draft\" version=\"1.2\">\n");
    out.push_str("  <graph mode=\"static\" defaultedgetype=\"directed\">\n");
    out.push_str("    <attributes class=\"node\">\n");
    for (id, (title, ty)) in [
        ("name", "string"),
        ("sector", "string"),
        ("relationship", "string"),
        ("in_degree", "integer"),
        ("out_degree", "integer"),
        ("betweenness", "double"),
    ]
    .iter()
    .enumerate()
    {
        let _ = writeln!(out, "      <attribute id=\"{id}\" title=\"{title}\" type=\"{ty}\"/>");
    }
    out.push_str("    </attributes>\n");
    out.push_str("    <attributes class=\"edge\">\n");
    out.push_str("      <attribute id=\"0\" title=\"mutual\" type=\"boolean\"/>\n");
    out.push_str("    </attributes>\n");
    out.push_str("    <nodes>\n");
    for (i, key) in net.nodes().iter().enumerate() {
        let a = &attrs[i];
        let _ = writeln!(out, "      <node id=\"{}\" label=\"{}\">", xml(key.as_str()), xml(key.as_str()));
        out.push_str("        <attvalues>\n");
        let values = [
            xml(&a.name).into_owned(),
            xml(&a.sector).into_owned(),
            xml(&a.relationship).into_owned(),
            c.in_degree[i].to_string(),
            c.out_degree[i].to_string(),
            c.betweenness[i].to_string(),
        ];
        for (id, v) in values.iter().enumerate() {
            let _ = writeln!(out, "          <attvalue for=\"{id}\" value=\"{v}\"/>");
        }
        out.push_str("        </attvalues>\n");
        out.push_str("      </node>\n");
    }
    out.push_str("    </nodes>\n");
    out.push_str("    <edges>\n");
    for (n, (i, j)) in net.arcs().enumerate() {
        let _ = writeln!(
            out,
            "      <edge id=\"{n}\" source=\"{}\" target=\"{}\">",
            xml(net.nodes()[i].as_str()),
            xml(net.nodes()[j].as_str())
        );
        let _ = writeln!(
            out,
            "        <attvalues><attvalue for=\"0\" value=\"{}\"/></attvalues>",
            net.has_arc(j, i)
        );
        out.push_str("      </edge>\n");
    }
    out.push_str("    </edges>\n");
    out.push_str("  </graph>\n");
    out.push_str("</gexf>\n");
    out
}

/// Edge list TSV. Node declarations (`#node`, `#seed`) come first so that
/// isolates survive a round trip.
pub fn write_edgelist(net: &InterlinkNetwork) -> String {
    let mut out = format!("#seed\t{}\n", net.seed);
    for key in net.nodes() {
        let _ = writeln!(out, "#node\t{key}");
    }
    out.push_str("source\ttarget\tmutual\n");
    for (i, j) in net.arcs() {
        let _ = writeln!(out, "{}\t{}\t{}", net.nodes()[i], net.nodes()[j], net.has_arc(j, i));
    }
    out
}

pub fn read_edgelist(text: &str, provenance: Provenance) -> Result<InterlinkNetwork, ReportError> {
    let bad = |line: usize, reason: String| ReportError::Edgelist { line, reason };
    let key = |line: usize, s: &str| SiteKey::new(s).map_err(|e| bad(line, e.to_string()));
    let mut seed = None;
    let mut nodes = Vec::new();
    let mut edges: Vec<(SiteKey, SiteKey, bool, usize)> = Vec::new();
    let mut header = false;
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        let cells: Vec<&str> = line.split('\t').collect();
        match cells.as_slice() {
            ["#seed", k] => seed = Some(key(n, k)?),
            ["#node", k] => nodes.push(key(n, k)?),
            ["source", "target", "mutual"] => header = true,
            [s, t, m] if header => {
                let mutual = m.parse::<bool>().map_err(|_| bad(n, format!("mutual must be true/false, got {m:?}")))?;
                edges.push((key(n, s)?, key(n, t)?, mutual, n));
            }
            _ if line.is_empty() => {}
            _ => return Err(bad(n, format!("unexpected line {line:?}"))),
        }
    }
    let seed = seed.ok_or_else(|| bad(0, "missing #seed line".into()))?;
    let net = InterlinkNetwork::from_arcs(nodes, edges.iter().map(|(s, t, _, _)| (s, t)), provenance, seed)
        .map_err(|e| bad(0, e.to_string()))?;
    for (s, t, mutual, n) in &edges {
        let (i, j) = (net.index_of(s).unwrap(), net.index_of(t).unwrap());
        if net.has_arc(j, i) != *mutual {
            return Err(bad(*n, format!("mutual flag for {s} -> {t} disagrees with the edges")));
        }
    }
    Ok(net)
}

/// Lowercase hex SHA-256.
pub fn digest_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn digest_file(path: &Path) -> Result<String, ReportError> {
    Ok(digest_bytes(&fs::read(path).map_err(io_err(path))?))
}

/// Record counts of one sample through the pipeline.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts {
    pub in_raw_links: usize,
    pub out_raw_links: usize,
    pub in_deduped: usize,
    pub out_deduped: usize,
    pub in_interlinked: usize,
    pub out_interlinked: usize,
    pub combined: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub toolkit_version: String,
    pub status: String,
    pub config_digest: String,
    /// Input path to content digest.
    pub inputs: BTreeMap<String, String>,
    /// Output file name to content digest.
    pub outputs: BTreeMap<String, String>,
    pub started_at_ms: u64,
    pub finished_at_ms: u64,
    pub counts: BTreeMap<String, StageCounts>,
}

impl RunManifest {
    pub fn new(config_digest: String, started_at_ms: u64) -> Self {
        RunManifest {
            toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
            status: "running".into(),
            config_digest,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            started_at_ms,
            finished_at_ms: started_at_ms,
            counts: BTreeMap::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<(), ReportError> {
        let digest = digest_file(path)?;
        self.inputs.insert(path.display().to_string(), digest);
        Ok(())
    }
}

pub fn write_manifest(manifest: &RunManifest, path: &Path) -> Result<(), ReportError> {
    let text = serde_json::to_string_pretty(manifest).map_err(|e| ReportError::Manifest(e.to_string()))?;
    fs::write(path, text + "\n").map_err(io_err(path))
}

pub fn read_manifest(path: &Path) -> Result<RunManifest, ReportError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| ReportError::Manifest(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Organization;
    use crate::metrics::{cohesion, CentralityTable};
    use crate::site::Granularity;

    fn k(s: &str) -> SiteKey {
        SiteKey::new(s).unwrap()
    }

    fn sample(keys: &[&str]) -> Sample {
        let orgs = keys.iter().map(|key| Organization {
            key: k(key),
            name: key.to_uppercase(),
            sector: Sector::Academia,
            relationship: Relationship::Tenant,
            category: "x".into(),
        });
        Sample::new(k(keys[0]), orgs, Granularity::Domain).unwrap()
    }

    fn abc() -> InterlinkNetwork {
        let keys = [k("a.com"), k("b.com"), k("c.com")];
        InterlinkNetwork::from_arcs(
            keys.clone(),
            [(&keys[0], &keys[1]), (&keys[1], &keys[0]), (&keys[0], &keys[2])],
            Provenance::Combined,
            keys[0].clone(),
        )
        .unwrap()
    }

    #[test]
    fn rounding_is_half_away_from_zero() {
        assert_eq!(fmt2(0.125), "0.13");
        assert_eq!(fmt2(-0.125), "-0.13");
        assert_eq!(fmt2(-0.001), "0.00");
        assert_eq!(fmt2(63.0 / (33.0 * 32.0)), "0.06");
        assert_eq!(count_with_percent(26, 32), "26 (81%)");
        assert_eq!(count_with_percent(1, 200), "1 (1%)");
    }

    #[test]
    fn edgelist_marks_mutual_arcs() {
        let text = write_edgelist(&abc());
        let edges: Vec<&str> = text.lines().skip_while(|l| !l.starts_with("source")).skip(1).collect();
        assert_eq!(edges, ["a.com\tb.com\ttrue", "a.com\tc.com\tfalse", "b.com\ta.com\ttrue"]);
        let back = read_edgelist(&text, Provenance::Combined).unwrap();
        assert_eq!(back, abc());
    }

    #[test]
    fn edgelist_rejects_inconsistent_mutual_flags() {
        let text = write_edgelist(&abc()).replace("a.com\tc.com\tfalse", "a.com\tc.com\ttrue");
        assert!(matches!(read_edgelist(&text, Provenance::Combined), Err(ReportError::Edgelist { .. })));
    }

    #[test]
    fn dot_weights_mutual_edges() {
        let net = abc();
        let c = CentralityTable::compute(&net);
        let dot = export_graph(&net, &sample(&["a.com", "b.com", "c.com"]), &c, GraphFormat::Dot);
        assert!(dot.contains("\"a.com\" -> \"b.com\" [mutual=true, penwidth=2.5];"));
        assert!(dot.contains("\"a.com\" -> \"c.com\" [mutual=false, penwidth=1.0];"));
        assert!(dot.contains("name=\"B.COM\", sector=\"Academia\""));
    }

    #[test]
    fn gexf_carries_attributes() {
        let net = abc();
        let c = CentralityTable::compute(&net);
        let gexf = export_graph(&net, &sample(&["a.com", "b.com", "c.com"]), &c, GraphFormat::Gexf);
        assert_eq!(gexf.matches("<node ").count(), 3);
        assert_eq!(gexf.matches("<edge ").count(), 3);
        assert!(gexf.contains("title=\"betweenness\""));
        // b reaches c only through a
        assert!(gexf.contains("<attvalue for=\"5\" value=\"1\"/>"));
    }

    #[test]
    fn unknown_formats_are_rejected() {
        assert!("graphml".parse::<GraphFormat>().is_err());
        assert!("html".parse::<TableStyle>().is_err());
        assert_eq!("edgelist".parse::<GraphFormat>().unwrap(), GraphFormat::Edgelist);
    }

    #[test]
    fn cohesion_row_format() {
        // AMP in-network shape: 33 nodes, 63 arcs, 7 isolates
        let keys: Vec<SiteKey> = (0..33).map(|i| k(&format!("n{i:02}.com"))).collect();
        let mut arcs = Vec::new();
        'outer: for i in 0..26 {
            for j in 0..26 {
                if i != j {
                    arcs.push((i, j));
                    if arcs.len() == 63 {
                        break 'outer;
                    }
                }
            }
        }
        let net = InterlinkNetwork::from_arcs(
            keys.clone(),
            arcs.iter().map(|&(a, b)| (&keys[a], &keys[b])),
            Provenance::InData,
            keys[0].clone(),
        )
        .unwrap();
        let c = cohesion(&net, Some(117), ReciprocityMethod::Arc).unwrap();
        let cells = cohesion_cells(&c);
        assert_eq!(&cells[..5], ["26", "(0.79)", "63", "0.46", "0.06"]);
    }

    #[test]
    fn empty_report_renders() {
        let report = AnalysisReport {
            reciprocity: ReciprocityMethod::Arc,
            gini_variant: GiniVariant::Population,
            exclude_seed_outlinks: true,
            samples: Vec::new(),
        };
        let tables = render_tables(&report, TableStyle::Csv);
        assert_eq!(tables.len(), 6);
        let sectors = &tables[4].contents;
        assert!(sectors.contains("0,Total,0,0,0,0,-"), "{sectors}");
    }

    #[test]
    fn digests_are_content_hashes() {
        assert_eq!(
            digest_bytes(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
