//! Cohesion, centrality, inequality and correlation measures.
//!
//! All values are computed at full precision; rounding happens only when
//! reports are rendered.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Sample, Sector};
use crate::network::{InterlinkNetwork, Provenance};
use crate::site::SiteKey;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("density is undefined for fewer than 2 nodes (n = {0})")]
    TooFewNodes(usize),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("correlation undefined: {0}")]
    Undefined(String),
    #[error("networks have different node lists")]
    NodeMismatch,
    #[error("unclassified nodes: {}", .0.iter().map(SiteKey::as_str).collect::<Vec<_>>().join(", "))]
    Unclassified(Vec<SiteKey>),
}

/// How reciprocity is counted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReciprocityMethod {
    /// Reciprocated arcs / all arcs.
    #[default]
    Arc,
    /// Mutual dyads / connected dyads.
    Dyad,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GiniVariant {
    /// Mean absolute difference over 2·mean, no correction.
    #[default]
    Population,
    /// Population value times n/(n−1).
    Sample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohesionReport {
    pub n: usize,
    pub isolates: usize,
    pub inclusiveness_count: usize,
    pub inclusiveness_ratio: f64,
    pub ties: usize,
    /// Share of the combined network's arcs missing here. Absent for
    /// combined networks.
    pub connectivity_gap: Option<f64>,
    pub density: f64,
    pub reciprocity: f64,
}

pub fn cohesion(
    net: &InterlinkNetwork,
    combined_ties: Option<usize>,
    method: ReciprocityMethod,
) -> Result<CohesionReport, MetricsError> {
    let n = net.n();
    if n < 2 {
        return Err(MetricsError::TooFewNodes(n));
    }
    let ties = net.arc_count();
    let isolates = net.isolates().len();
    let connectivity_gap = match (net.provenance, combined_ties) {
        (Provenance::Combined, _) | (_, None) => None,
        (_, Some(total)) if total < ties => {
            return Err(MetricsError::Argument(format!(
                "combined ties {total} < network ties {ties}"
            )))
        }
        (_, Some(0)) => Some(0.0),
        (_, Some(total)) => Some((total - ties) as f64 / total as f64),
    };
    Ok(CohesionReport {
        n,
        isolates,
        inclusiveness_count: n - isolates,
        inclusiveness_ratio: (n - isolates) as f64 / n as f64,
        ties,
        connectivity_gap,
        density: ties as f64 / (n * (n - 1)) as f64,
        reciprocity: reciprocity(net, method),
    })
}

pub fn reciprocity(net: &InterlinkNetwork, method: ReciprocityMethod) -> f64 {
    let ties = net.arc_count();
    if ties == 0 {
        return 0.0;
    }
    let reciprocated = net.arcs().filter(|&(i, j)| net.has_arc(j, i)).count();
    match method {
        ReciprocityMethod::Arc => reciprocated as f64 / ties as f64,
        ReciprocityMethod::Dyad => {
            let mutual = reciprocated / 2;
            let asymmetric = ties - reciprocated;
            mutual as f64 / (mutual + asymmetric) as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentralityTable {
    pub nodes: Vec<SiteKey>,
    pub in_degree: Vec<usize>,
    pub out_degree: Vec<usize>,
    pub betweenness: Vec<f64>,
}

impl CentralityTable {
    pub fn compute(net: &InterlinkNetwork) -> Self {
        let (in_degree, out_degree) = degree(net);
        CentralityTable {
            nodes: net.nodes().to_vec(),
            in_degree,
            out_degree,
            betweenness: betweenness(net),
        }
    }

    /// Indices of the `k` highest values, ties broken by node order.
    pub fn top_by<F: Fn(usize) -> f64>(&self, k: usize, score: F) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.nodes.len()).collect();
        idx.sort_by(|&a, &b| score(b).total_cmp(&score(a)).then(a.cmp(&b)));
        idx.truncate(k);
        idx
    }
}

/// (in-degree, out-degree) per node: column and row sums.
pub fn degree(net: &InterlinkNetwork) -> (Vec<usize>, Vec<usize>) {
    let n = net.n();
    let mut indeg = vec![0; n];
    let mut outdeg = vec![0; n];
    for (i, j) in net.arcs() {
        outdeg[i] += 1;
        indeg[j] += 1;
    }
    (indeg, outdeg)
}

/// Unnormalized directed shortest-path betweenness (Brandes).
pub fn betweenness(net: &InterlinkNetwork) -> Vec<f64> {
    let n = net.n();
    let succ: Vec<Vec<usize>> = (0..n).map(|i| net.successors(i).collect()).collect();
    let mut score = vec![0.0; n];

    let mut stack = Vec::with_capacity(n);
    let mut queue = VecDeque::with_capacity(n);
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut sigma = vec![0.0f64; n];
    let mut dist = vec![usize::MAX; n];
    let mut delta = vec![0.0f64; n];

    for s in 0..n {
        stack.clear();
        for p in preds.iter_mut() {
            p.clear();
        }
        sigma.fill(0.0);
        dist.fill(usize::MAX);
        delta.fill(0.0);
        sigma[s] = 1.0;
        dist[s] = 0;
        queue.push_back(s);

        while let Some(v) = queue.pop_front() {
            stack.push(v);
            for &w in &succ[v] {
                if dist[w] == usize::MAX {
                    dist[w] = dist[v] + 1;
                    queue.push_back(w);
                }
                if dist[w] == dist[v] + 1 {
                    sigma[w] += sigma[v];
                    preds[w].push(v);
                }
            }
        }

        while let Some(w) = stack.pop() {
            for &v in &preds[w] {
                delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w]);
            }
            if w != s {
                score[w] += delta[w];
            }
        }
    }
    score
}

/// Gini coefficient Σᵢⱼ|xᵢ−xⱼ| / (2n²·mean), computed from sorted values.
/// An all-zero vector has Gini 0.
pub fn gini(values: &[f64]) -> Result<f64, MetricsError> {
    gini_with(values, GiniVariant::Population)
}

pub fn gini_with(values: &[f64], variant: GiniVariant) -> Result<f64, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::Argument("gini of an empty vector".into()));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(MetricsError::Argument(format!("gini needs non-negative values, got {v}")));
    }
    let n = values.len();
    let total: f64 = values.iter().sum();
    if total == 0.0 {
        return Ok(0.0);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    // Σᵢⱼ|xᵢ−xⱼ| = 2 Σᵢ (2i − n − 1)·x₍ᵢ₎ with 1-based ranks
    let weighted: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, x)| (2.0 * (i + 1) as f64 - n as f64 - 1.0) * x)
        .sum();
    let g = (weighted / (n as f64 * total)).clamp(0.0, 1.0);
    Ok(match variant {
        GiniVariant::Population => g,
        GiniVariant::Sample if n > 1 => (g * n as f64 / (n - 1) as f64).min(1.0),
        GiniVariant::Sample => 0.0,
    })
}

/// Pearson product-moment correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, MetricsError> {
    if x.len() != y.len() {
        return Err(MetricsError::Argument(format!(
            "lengths differ: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(MetricsError::Argument("need at least 2 observations".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricsError::Undefined("constant vector".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks with ties given their average rank.
pub fn mid_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman correlation: Pearson over mid-ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, MetricsError> {
    if x.len() != y.len() {
        return Err(MetricsError::Argument(format!(
            "lengths differ: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    pearson(&mid_ranks(x), &mid_ranks(y))
}

fn as_f64(v: &[usize]) -> Vec<f64> {
    v.iter().map(|&d| d as f64).collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub pearson_in: Option<f64>,
    pub pearson_out: Option<f64>,
    pub spearman_indeg_pages: Option<f64>,
    pub spearman_outdeg_pages: Option<f64>,
    /// Why a coefficient is absent.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

/// Pearson correlations between the in-degree vectors (and out-degree
/// vectors) of two networks over the same nodes.
pub fn degree_correlations(
    net_in: &InterlinkNetwork,
    net_out: &InterlinkNetwork,
) -> Result<(f64, f64), MetricsError> {
    if net_in.nodes() != net_out.nodes() {
        return Err(MetricsError::NodeMismatch);
    }
    let (in_a, out_a) = degree(net_in);
    let (in_b, out_b) = degree(net_out);
    Ok((
        pearson(&as_f64(&in_a), &as_f64(&in_b))?,
        pearson(&as_f64(&out_a), &as_f64(&out_b))?,
    ))
}

/// Spearman correlations of in- and out-degree with site size, over the
/// nodes that have a size.
pub fn size_correlations(
    net: &InterlinkNetwork,
    sizes: &BTreeMap<SiteKey, u64>,
) -> (Result<f64, MetricsError>, Result<f64, MetricsError>) {
    let (indeg, outdeg) = degree(net);
    let mut pages = Vec::new();
    let mut ins = Vec::new();
    let mut outs = Vec::new();
    for (i, key) in net.nodes().iter().enumerate() {
        if let Some(&size) = sizes.get(key) {
            pages.push(size as f64);
            ins.push(indeg[i] as f64);
            outs.push(outdeg[i] as f64);
        }
    }
    (spearman(&ins, &pages), spearman(&outs, &pages))
}

pub fn correlation_report(
    net_in: &InterlinkNetwork,
    net_out: &InterlinkNetwork,
    combined: &InterlinkNetwork,
    sizes: &BTreeMap<SiteKey, u64>,
) -> Result<CorrelationReport, MetricsError> {
    if net_in.nodes() != net_out.nodes() {
        return Err(MetricsError::NodeMismatch);
    }
    let mut report = CorrelationReport::default();
    let (in_a, out_a) = degree(net_in);
    let (in_b, out_b) = degree(net_out);
    let keep = |label: &str, r: Result<f64, MetricsError>, notes: &mut Vec<String>| match r {
        Ok(v) => Some(v),
        Err(e) => {
            notes.push(format!("{label}: {e}"));
            None
        }
    };
    let mut notes = Vec::new();
    report.pearson_in = keep("pearson_in", pearson(&as_f64(&in_a), &as_f64(&in_b)), &mut notes);
    report.pearson_out = keep("pearson_out", pearson(&as_f64(&out_a), &as_f64(&out_b)), &mut notes);
    let (si, so) = size_correlations(combined, sizes);
    report.spearman_indeg_pages = keep("spearman_indeg_pages", si, &mut notes);
    report.spearman_outdeg_pages = keep("spearman_outdeg_pages", so, &mut notes);
    report.notes = notes;
    Ok(report)
}

/// What a Gini value was computed over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GiniBasis {
    /// Degrees in the interlinking network.
    Interlink,
    /// Raw link counts per member in the harvested dataset.
    Harvested,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GiniEntry {
    pub network: String,
    pub basis: GiniBasis,
    pub inlinks: f64,
    pub outlinks: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GiniReport {
    pub variant: GiniVariant,
    pub entries: Vec<GiniEntry>,
}

/// Gini of the in- and out-degree distributions of a network.
pub fn degree_gini(
    net: &InterlinkNetwork,
    variant: GiniVariant,
) -> Result<(f64, f64), MetricsError> {
    let (indeg, outdeg) = degree(net);
    Ok((gini_with(&as_f64(&indeg), variant)?, gini_with(&as_f64(&outdeg), variant)?))
}

/// Arc counts by (source sector, target sector).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectorMatrix {
    /// `counts[source][target]`, indexed by [`Sector::index`].
    pub counts: [[usize; 3]; 3],
    pub org_counts: [usize; 3],
    pub excluded_seed_arcs: usize,
}

impl SectorMatrix {
    pub fn row_total(&self, s: Sector) -> usize {
        self.counts[s.index()].iter().sum()
    }

    pub fn col_total(&self, s: Sector) -> usize {
        self.counts.iter().map(|row| row[s.index()]).sum()
    }

    pub fn grand_total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn total_orgs(&self) -> usize {
        self.org_counts.iter().sum()
    }

    /// Out-links per organisation of the sector.
    pub fn row_mean(&self, s: Sector) -> Option<f64> {
        ratio(self.row_total(s), self.org_counts[s.index()])
    }

    /// In-links per organisation of the sector.
    pub fn col_mean(&self, s: Sector) -> Option<f64> {
        ratio(self.col_total(s), self.org_counts[s.index()])
    }

    pub fn grand_mean(&self) -> Option<f64> {
        ratio(self.grand_total(), self.total_orgs())
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Sector interconnection counts. With `exclude_seed_outlinks`, arcs
/// leaving the seed are not counted.
pub fn sector_matrix(
    net: &InterlinkNetwork,
    sample: &Sample,
    exclude_seed_outlinks: bool,
) -> Result<SectorMatrix, MetricsError> {
    let mut missing = Vec::new();
    let sectors: Vec<Option<Sector>> = net
        .nodes()
        .iter()
        .map(|k| {
            let s = sample.get(k).map(|o| o.sector);
            if s.is_none() {
                missing.push(k.clone());
            }
            s
        })
        .collect();
    if !missing.is_empty() {
        return Err(MetricsError::Unclassified(missing));
    }
    let sectors: Vec<Sector> = sectors.into_iter().flatten().collect();
    let mut m = SectorMatrix {
        counts: [[0; 3]; 3],
        org_counts: [0; 3],
        excluded_seed_arcs: 0,
    };
    for s in &sectors {
        m.org_counts[s.index()] += 1;
    }
    let seed = net.seed_index();
    for (i, j) in net.arcs() {
        if exclude_seed_outlinks && i == seed {
            m.excluded_seed_arcs += 1;
            continue;
        }
        m.counts[sectors[i].index()][sectors[j].index()] += 1;
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::site::SiteKey;

    fn net(n: usize, arcs: &[(usize, usize)]) -> InterlinkNetwork {
        let keys: Vec<SiteKey> = (0..n).map(|i| SiteKey::new(format!("n{i}.com")).unwrap()).collect();
        InterlinkNetwork::from_arcs(
            keys.clone(),
            arcs.iter().map(|&(a, b)| (&keys[a], &keys[b])),
            Provenance::InData,
            keys[0].clone(),
        )
        .unwrap()
    }

    fn complete(n: usize) -> InterlinkNetwork {
        let arcs: Vec<(usize, usize)> =
            (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).collect();
        net(n, &arcs)
    }

    #[test]
    fn complete_digraph_cohesion() {
        let c = complete(3);
        let r = cohesion(&c, Some(6), ReciprocityMethod::Arc).unwrap();
        assert_eq!(r.density, 1.0);
        assert_eq!(r.reciprocity, 1.0);
        assert_eq!(r.connectivity_gap, Some(0.0));
        assert_eq!(r.inclusiveness_count, 3);
        assert_eq!(reciprocity(&c, ReciprocityMethod::Dyad), 1.0);
    }

    #[test]
    fn cohesion_errors() {
        assert_eq!(
            cohesion(&net(1, &[]), None, ReciprocityMethod::Arc),
            Err(MetricsError::TooFewNodes(1))
        );
        assert!(matches!(
            cohesion(&complete(3), Some(2), ReciprocityMethod::Arc),
            Err(MetricsError::Argument(_))
        ));
    }

    #[test]
    fn reciprocity_methods_differ() {
        // a<->b, a->c: 2 of 3 arcs reciprocated; 1 of 2 dyads mutual
        let n = net(3, &[(0, 1), (1, 0), (0, 2)]);
        assert!((reciprocity(&n, ReciprocityMethod::Arc) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(reciprocity(&n, ReciprocityMethod::Dyad), 0.5);
        assert_eq!(reciprocity(&net(3, &[]), ReciprocityMethod::Arc), 0.0);
    }

    #[test]
    fn combined_network_has_no_gap() {
        let c = complete(3).with_provenance(Provenance::Combined);
        assert_eq!(cohesion(&c, Some(6), ReciprocityMethod::Arc).unwrap().connectivity_gap, None);
    }

    #[test]
    fn degrees() {
        let (i, o) = degree(&net(2, &[(0, 1)]));
        assert_eq!((i, o), (vec![0, 1], vec![1, 0]));
        let (i, o) = degree(&net(4, &[]));
        assert_eq!((i, o), (vec![0; 4], vec![0; 4]));
    }

    #[test]
    fn betweenness_small_cases() {
        assert_eq!(betweenness(&net(3, &[(0, 1), (1, 2)])), vec![0.0, 1.0, 0.0]);
        assert!(betweenness(&complete(5)).iter().all(|&b| b == 0.0));
        assert_eq!(betweenness(&net(2, &[(0, 1)])), vec![0.0, 0.0]);
        // two geodesics 0->1->3 and 0->2->3 split the credit
        assert_eq!(betweenness(&net(4, &[(0, 1), (0, 2), (1, 3), (2, 3)])), vec![0.0, 0.5, 0.5, 0.0]);
    }

    #[test]
    fn gini_examples() {
        assert_eq!(gini(&[5.0, 5.0, 5.0, 5.0]).unwrap(), 0.0);
        assert_eq!(gini(&[0.0, 0.0, 0.0, 12.0]).unwrap(), 0.75);
        assert_eq!(gini(&[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(gini(&[7.0]).unwrap(), 0.0);
        assert!(gini(&[1.0, -1.0]).is_err());
        assert!(gini(&[]).is_err());
        assert_eq!(gini_with(&[0.0, 0.0, 0.0, 12.0], GiniVariant::Sample).unwrap(), 1.0);
    }

    #[test]
    fn pearson_examples() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        // 102 / sqrt(42 * 258)
        let r = pearson(&[1.0, 2.0, 4.0], &[2.0, 3.0, 9.0]).unwrap();
        assert!((r - 0.979_863_710_097_199_4).abs() < 1e-12, "{r}");
        assert!(matches!(pearson(&[1.0, 1.0], &[1.0, 2.0]), Err(MetricsError::Undefined(_))));
        assert!(pearson(&[1.0], &[1.0]).is_err());
        assert!(pearson(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn spearman_examples() {
        let r = spearman(&[1.0, 2.0, 3.0, 4.0], &[10.0, 100.0, 1000.0, 10000.0]).unwrap();
        assert!((r - 1.0).abs() < 1e-15);
        let r = spearman(&[1.0, 2.0, 3.0, 4.0], &[4.0, 3.0, 2.0, 1.0]).unwrap();
        assert!((r + 1.0).abs() < 1e-15);
        assert_eq!(mid_ranks(&[1.0, 2.0, 2.0, 3.0]), vec![1.0, 2.5, 2.5, 4.0]);
        let r = spearman(&[1.0, 2.0, 2.0, 3.0], &[10.0, 20.0, 20.0, 40.0]).unwrap();
        assert!((r - 1.0).abs() < 1e-15);
        // scipy.stats.spearmanr
        let r = spearman(&[3.0, 1.0, 4.0, 1.0, 5.0], &[9.0, 2.0, 6.0, 5.0, 3.0]).unwrap();
        assert!((r - 0.205_195_670_417_030_85).abs() < 1e-12);
    }

    #[test]
    fn degree_correlation_fixture() {
        // in-degrees [1,1,2,0] vs [1,2,0,0]; out-degrees [2,1,1,0] vs [1,1,1,0]
        let a = net(4, &[(0, 1), (1, 2), (2, 0), (0, 2)]);
        let b = net(4, &[(0, 1), (1, 0), (2, 1)]);
        let (pin, pout) = degree_correlations(&a, &b).unwrap();
        assert!(pin.abs() < 1e-15);
        assert!((pout - (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
        let (pin, pout) = degree_correlations(&a, &a).unwrap();
        assert!((pin - 1.0).abs() < 1e-12 && (pout - 1.0).abs() < 1e-12);
        assert_eq!(degree_correlations(&a, &net(3, &[])), Err(MetricsError::NodeMismatch));
    }
}
