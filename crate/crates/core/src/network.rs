//! Dichotomized interlinking networks over a sample.
//!
//! Nodes are the sample's site keys in lexicographic order; `adjacency[s][t]`
//! is true iff at least one link s→t was observed between two distinct
//! members. The diagonal is always false.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{LinkDataset, Sample};
use crate::site::SiteKey;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NetworkError {
    #[error("networks have different node lists")]
    NodeMismatch,
    #[error("seed {0} is not a node")]
    UnknownSeed(SiteKey),
    #[error("arc references unknown node {0}")]
    UnknownNode(String),
    #[error("matrix: {0}")]
    Matrix(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Provenance {
    InData,
    OutData,
    Combined,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InterlinkNetwork {
    nodes: Vec<SiteKey>,
    adjacency: Vec<bool>,
    pub provenance: Provenance,
    pub seed: SiteKey,
}

impl InterlinkNetwork {
    /// Network over `nodes` (sorted and deduplicated here) with the given
    /// arcs. Self-arcs are ignored.
    pub fn from_arcs<'a>(
        nodes: impl IntoIterator<Item = SiteKey>,
        arcs: impl IntoIterator<Item = (&'a SiteKey, &'a SiteKey)>,
        provenance: Provenance,
        seed: SiteKey,
    ) -> Result<InterlinkNetwork, NetworkError> {
        let nodes: Vec<SiteKey> = nodes.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
        if nodes.binary_search(&seed).is_err() {
            return Err(NetworkError::UnknownSeed(seed));
        }
        let n = nodes.len();
        let mut net = InterlinkNetwork {
            nodes,
            adjacency: vec![false; n * n],
            provenance,
            seed,
        };
        for (s, t) in arcs {
            let i = net.index_of(s).ok_or_else(|| NetworkError::UnknownNode(s.to_string()))?;
            let j = net.index_of(t).ok_or_else(|| NetworkError::UnknownNode(t.to_string()))?;
            if i != j {
                net.adjacency[i * n + j] = true;
            }
        }
        Ok(net)
    }

    /// Network with no arcs.
    pub fn empty(
        nodes: impl IntoIterator<Item = SiteKey>,
        provenance: Provenance,
        seed: SiteKey,
    ) -> Result<InterlinkNetwork, NetworkError> {
        InterlinkNetwork::from_arcs(nodes, std::iter::empty(), provenance, seed)
    }

    pub fn nodes(&self) -> &[SiteKey] {
        &self.nodes
    }

    pub fn n(&self) -> usize {
        self.nodes.len()
    }

    pub fn index_of(&self, key: &SiteKey) -> Option<usize> {
        self.nodes.binary_search(key).ok()
    }

    pub fn seed_index(&self) -> usize {
        self.index_of(&self.seed).expect("seed is a node")
    }

    pub fn has_arc(&self, source: usize, target: usize) -> bool {
        self.adjacency[source * self.n() + target]
    }

    /// Arcs as (source, target) index pairs in row-major order.
    pub fn arcs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.n();
        self.adjacency
            .iter()
            .enumerate()
            .filter(|(_, &a)| a)
            .map(move |(idx, _)| (idx / n, idx % n))
    }

    pub fn arc_keys(&self) -> BTreeSet<(SiteKey, SiteKey)> {
        self.arcs()
            .map(|(i, j)| (self.nodes[i].clone(), self.nodes[j].clone()))
            .collect()
    }

    pub fn arc_count(&self) -> usize {
        self.adjacency.iter().filter(|&&a| a).count()
    }

    /// Out-neighbours of node `i`, ascending.
    pub fn successors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let n = self.n();
        (0..n).filter(move |&j| self.adjacency[i * n + j])
    }

    pub fn is_isolated(&self, i: usize) -> bool {
        let n = self.n();
        (0..n).all(|j| !self.adjacency[i * n + j] && !self.adjacency[j * n + i])
    }

    pub fn isolates(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.is_isolated(i)).collect()
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }
}

/// Restrict a dataset to sample-internal links and dichotomize.
pub fn interlink(dataset: &LinkDataset, sample: &Sample) -> InterlinkNetwork {
    let provenance = match dataset.direction {
        crate::dataset::DataDirection::InData => Provenance::InData,
        crate::dataset::DataDirection::OutData => Provenance::OutData,
    };
    let arcs = dataset
        .records
        .iter()
        .filter(|r| sample.contains(&r.source) && sample.contains(&r.target))
        .map(|r| (&r.source, &r.target));
    InterlinkNetwork::from_arcs(sample.keys().cloned(), arcs, provenance, sample.seed.clone())
        .expect("sample contains its seed and every filtered endpoint")
}

/// Elementwise OR of two networks over the same nodes.
pub fn combine(a: &InterlinkNetwork, b: &InterlinkNetwork) -> Result<InterlinkNetwork, NetworkError> {
    if a.nodes != b.nodes || a.seed != b.seed {
        return Err(NetworkError::NodeMismatch);
    }
    Ok(InterlinkNetwork {
        nodes: a.nodes.clone(),
        adjacency: a
            .adjacency
            .iter()
            .zip(&b.adjacency)
            .map(|(x, y)| *x || *y)
            .collect(),
        provenance: Provenance::Combined,
        seed: a.seed.clone(),
    })
}

/// Remove every arc leaving `seed`, then drop nodes left with no arcs at
/// all. The seed itself is always kept.
pub fn prune_seed_outlinks(
    net: &InterlinkNetwork,
    seed: &SiteKey,
) -> Result<InterlinkNetwork, NetworkError> {
    let s = net
        .index_of(seed)
        .ok_or_else(|| NetworkError::UnknownSeed(seed.clone()))?;
    let kept_arcs: Vec<(usize, usize)> = net.arcs().filter(|&(i, _)| i != s).collect();
    let mut touched = vec![false; net.n()];
    touched[s] = true;
    for &(i, j) in &kept_arcs {
        touched[i] = true;
        touched[j] = true;
    }
    let nodes = net
        .nodes
        .iter()
        .zip(&touched)
        .filter(|(_, &t)| t)
        .map(|(k, _)| k.clone());
    let arcs = kept_arcs.iter().map(|&(i, j)| (&net.nodes[i], &net.nodes[j]));
    InterlinkNetwork::from_arcs(nodes, arcs, net.provenance, seed.clone())
}

/// Unordered pairs linked in both directions, as (smaller, larger) keys.
pub fn mutual_arcs(net: &InterlinkNetwork) -> BTreeSet<(SiteKey, SiteKey)> {
    net.arcs()
        .filter(|&(i, j)| i < j && net.has_arc(j, i))
        .map(|(i, j)| (net.nodes[i].clone(), net.nodes[j].clone()))
        .collect()
}

/// Adjacency as TSV: a header row of keys, then one `key<TAB>0/1...` row per
/// node.
pub fn write_matrix(net: &InterlinkNetwork) -> String {
    let mut out = String::new();
    for key in &net.nodes {
        out.push('\t');
        out.push_str(key.as_str());
    }
    out.push('\n');
    let n = net.n();
    for (i, key) in net.nodes.iter().enumerate() {
        out.push_str(key.as_str());
        for j in 0..n {
            let _ = write!(out, "\t{}", u8::from(net.adjacency[i * n + j]));
        }
        out.push('\n');
    }
    out
}

pub fn read_matrix(
    text: &str,
    provenance: Provenance,
    seed: SiteKey,
) -> Result<InterlinkNetwork, NetworkError> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| NetworkError::Matrix("empty input".into()))?;
    let mut cols = header.split('\t');
    if cols.next() != Some("") {
        return Err(NetworkError::Matrix("header must start with an empty cell".into()));
    }
    let nodes: Vec<SiteKey> = cols
        .map(|c| SiteKey::new(c).map_err(|e| NetworkError::Matrix(e.to_string())))
        .collect::<Result<_, _>>()?;
    let mut arcs = Vec::new();
    let mut rows = 0;
    for (i, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split('\t').collect();
        if cells.len() != nodes.len() + 1 || cells[0] != nodes.get(i).map_or("", |k| k.as_str()) {
            return Err(NetworkError::Matrix(format!("row {} malformed", i + 1)));
        }
        for (j, cell) in cells[1..].iter().enumerate() {
            match *cell {
                "0" => {}
                "1" if i != j => arcs.push((i, j)),
                "1" => return Err(NetworkError::Matrix(format!("self-link at row {}", i + 1))),
                other => return Err(NetworkError::Matrix(format!("bad cell {other:?}"))),
            }
        }
        rows += 1;
    }
    if rows != nodes.len() {
        return Err(NetworkError::Matrix(format!("{} rows for {} columns", rows, nodes.len())));
    }
    let arc_refs = arcs.iter().map(|&(i, j)| (&nodes[i], &nodes[j]));
    let net = InterlinkNetwork::from_arcs(nodes.iter().cloned(), arc_refs, provenance, seed)?;
    if net.nodes != nodes {
        return Err(NetworkError::Matrix("header keys must be sorted and distinct".into()));
    }
    Ok(net)
}
