//! Brute-force oracles and fixture builders shared by integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use sitenet::dataset::{DataDirection, DatasetLink, LinkDataset, Organization, Relationship, Sample, Sector};
use sitenet::network::{InterlinkNetwork, Provenance};
use sitenet::site::{Granularity, SiteKey};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("fixtures")
}

pub fn key(s: &str) -> SiteKey {
    SiteKey::new(s).unwrap()
}

/// Keys `n000.com`, `n001.com`, ... so that index order equals key order.
pub fn node_keys(n: usize) -> Vec<SiteKey> {
    (0..n).map(|i| key(&format!("n{i:03}.com"))).collect()
}

pub fn network(n: usize, arcs: &[(usize, usize)], provenance: Provenance) -> InterlinkNetwork {
    let keys = node_keys(n);
    InterlinkNetwork::from_arcs(
        keys.clone(),
        arcs.iter().map(|&(a, b)| (&keys[a], &keys[b])),
        provenance,
        keys[0].clone(),
    )
    .unwrap()
}

pub fn org(k: &SiteKey, sector: Sector) -> Organization {
    Organization {
        key: k.clone(),
        name: k.to_string(),
        sector,
        relationship: Relationship::Tenant,
        category: "test".into(),
    }
}

pub fn sample_of(keys: &[SiteKey], sectors: &[Sector]) -> Sample {
    Sample::new(
        keys[0].clone(),
        keys.iter().zip(sectors).map(|(k, s)| org(k, *s)),
        Granularity::Domain,
    )
    .unwrap()
}

pub fn dataset(direction: DataDirection, pairs: &[(SiteKey, SiteKey)]) -> LinkDataset {
    let records: BTreeSet<(SiteKey, SiteKey)> = pairs.iter().cloned().collect();
    let records: Vec<DatasetLink> = records
        .into_iter()
        .map(|(source, target)| DatasetLink {
            source,
            target,
            providers: ["test".to_string()].into_iter().collect(),
        })
        .collect();
    LinkDataset {
        direction,
        raw_count: pairs.len(),
        site_level_count: pairs.len(),
        self_links_dropped: 0,
        deduped_count: records.len(),
        records,
        provider_names: vec!["test".into()],
        contributions: BTreeMap::new(),
        skipped: Vec::new(),
        partial: Vec::new(),
    }
}

/// Σᵢ Σⱼ |xᵢ − xⱼ| / (2 n² x̄), zero for an all-zero vector.
pub fn gini_oracle(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return 0.0;
    }
    let mut s = 0.0;
    for a in x {
        for b in x {
            s += (a - b).abs();
        }
    }
    s / (2.0 * n * n * mean)
}

/// r = (nΣxy − ΣxΣy) / √((nΣx² − (Σx)²)(nΣy² − (Σy)²))
pub fn pearson_oracle(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let sx: f64 = x.iter().sum();
    let sy: f64 = y.iter().sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx) * (n * syy - sy * sy)).sqrt()
}

/// Rank = (count below) + (count equal + 1) / 2.
pub fn rank_oracle(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|a| {
            let below = x.iter().filter(|b| *b < a).count() as f64;
            let equal = x.iter().filter(|b| *b == a).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

pub fn spearman_oracle(x: &[f64], y: &[f64]) -> f64 {
    pearson_oracle(&rank_oracle(x), &rank_oracle(y))
}

/// Betweenness by enumerating every simple path between every ordered pair
/// and keeping the shortest ones.
pub fn betweenness_oracle(n: usize, arcs: &[(usize, usize)]) -> Vec<f64> {
    let adj: BTreeSet<(usize, usize)> = arcs.iter().copied().collect();
    let mut score = vec![0.0; n];
    for s in 0..n {
        for t in 0..n {
            if s == t {
                continue;
            }
            let mut paths: Vec<Vec<usize>> = Vec::new();
            let mut path = vec![s];
            simple_paths(&adj, n, t, &mut path, &mut paths);
            let Some(min) = paths.iter().map(Vec::len).min() else { continue };
            let shortest: Vec<&Vec<usize>> = paths.iter().filter(|p| p.len() == min).collect();
            for v in 0..n {
                if v == s || v == t {
                    continue;
                }
                let through = shortest.iter().filter(|p| p.contains(&v)).count();
                score[v] += through as f64 / shortest.len() as f64;
            }
        }
    }
    score
}

fn simple_paths(adj: &BTreeSet<(usize, usize)>, n: usize, t: usize, path: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    let last = *path.last().unwrap();
    if last == t {
        out.push(path.clone());
        return;
    }
    for next in 0..n {
        if adj.contains(&(last, next)) && !path.contains(&next) {
            path.push(next);
            simple_paths(adj, n, t, path, out);
            path.pop();
        }
    }
}

/// In- and out-degree by scanning the arc list.
pub fn degree_oracle(n: usize, arcs: &BTreeSet<(usize, usize)>) -> (Vec<usize>, Vec<usize>) {
    let indeg = (0..n).map(|v| arcs.iter().filter(|a| a.1 == v).count()).collect();
    let outdeg = (0..n).map(|v| arcs.iter().filter(|a| a.0 == v).count()).collect();
    (indeg, outdeg)
}

/// Two networks over `n` nodes with prescribed arc counts, node coverage
/// and union size. Ring arcs come first so the spans are fully covered.
pub fn cohesion_fixture(
    n: usize,
    in_span: usize,
    in_ties: usize,
    out_span: usize,
    out_ties: usize,
    both_ties: usize,
) -> (Vec<(usize, usize)>, Vec<(usize, usize)>) {
    fn pool(span: usize) -> Vec<(usize, usize)> {
        let mut arcs: Vec<(usize, usize)> = (0..span).map(|i| (i, (i + 1) % span)).collect();
        let ring: BTreeSet<_> = arcs.iter().copied().collect();
        for i in 0..span {
            for j in 0..span {
                if i != j && !ring.contains(&(i, j)) {
                    arcs.push((i, j));
                }
            }
        }
        arcs
    }
    assert!(in_span <= n && out_span <= n);
    let overlap = in_ties + out_ties - both_ties;
    let in_arcs: Vec<(usize, usize)> = pool(in_span).into_iter().take(in_ties).collect();
    let in_set: BTreeSet<_> = in_arcs.iter().copied().collect();
    let mut out_arcs: Vec<(usize, usize)> = in_arcs[..overlap].to_vec();
    out_arcs.extend(pool(out_span).into_iter().filter(|a| !in_set.contains(a)).take(out_ties - overlap));
    (in_arcs, out_arcs)
}
