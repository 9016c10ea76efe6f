//! Simple undirected graphs, edge-list ingestion, connectivity-preserving
//! train/test splits and non-edge sampling.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::index;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_for;

/// Canonical node pair with `i < j`.
pub type Pair = (usize, usize);

#[inline]
pub fn canonical(i: usize, j: usize) -> Pair {
    if i < j {
        (i, j)
    } else {
        (j, i)
    }
}

/// Immutable simple undirected graph.
///
/// Edges are stored canonically (`i < j`), sorted and deduplicated; the
/// adjacency index holds sorted neighbour lists for both endpoints.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n_nodes: usize,
    edges: Vec<Pair>,
    adjacency: Vec<Vec<usize>>,
}

impl Graph {
    /// Builds a graph from arbitrary pairs. Pairs are canonicalized, self-loops
    /// dropped and duplicates merged. Endpoints outside `0..n_nodes` are an error.
    pub fn new(n_nodes: usize, pairs: impl IntoIterator<Item = Pair>) -> Result<Self> {
        if n_nodes == 0 {
            return Err(Error::InvalidGraph("graph must have at least one node".into()));
        }
        let mut edges = Vec::new();
        for (i, j) in pairs {
            if i >= n_nodes || j >= n_nodes {
                return Err(Error::InvalidGraph(format!(
                    "edge ({i}, {j}) out of range for {n_nodes} nodes"
                )));
            }
            if i != j {
                edges.push(canonical(i, j));
            }
        }
        edges.sort_unstable();
        edges.dedup();

        let mut adjacency = vec![Vec::new(); n_nodes];
        for &(i, j) in &edges {
            adjacency[i].push(j);
            adjacency[j].push(i);
        }
        for nbrs in &mut adjacency {
            nbrs.sort_unstable();
        }
        Ok(Graph {
            n_nodes,
            edges,
            adjacency,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Pair] {
        &self.edges
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    /// Number of unordered node pairs, `n(n-1)/2`.
    pub fn n_pairs(&self) -> usize {
        self.n_nodes * (self.n_nodes - 1) / 2
    }

    pub fn density(&self) -> f64 {
        match self.n_pairs() {
            0 => 0.0,
            p => self.edges.len() as f64 / p as f64,
        }
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        if i == j || i >= self.n_nodes || j >= self.n_nodes {
            return false;
        }
        // search the shorter list
        let (a, b) = if self.adjacency[i].len() <= self.adjacency[j].len() {
            (i, j)
        } else {
            (j, i)
        };
        self.adjacency[a].binary_search(&b).is_ok()
    }

    /// Component id per node, numbered in order of first node.
    pub fn components(&self) -> Vec<usize> {
        let mut uf = UnionFind::new(self.n_nodes);
        for &(i, j) in &self.edges {
            uf.union(i, j);
        }
        let mut ids = HashMap::new();
        (0..self.n_nodes)
            .map(|v| {
                let root = uf.find(v);
                let next = ids.len();
                *ids.entry(root).or_insert(next)
            })
            .collect()
    }

    pub fn n_components(&self) -> usize {
        self.components().into_iter().max().map_or(0, |m| m + 1)
    }

    pub fn is_connected(&self) -> bool {
        self.n_components() == 1
    }

    /// Restricts the graph to its largest connected component (ties go to the
    /// component containing the smallest node). Returns the subgraph and, for
    /// each new node, its index in `self`.
    pub fn largest_component(&self) -> (Graph, Vec<usize>) {
        let comp = self.components();
        let n_comp = comp.iter().max().map_or(0, |m| m + 1);
        let mut sizes = vec![0usize; n_comp];
        for &c in &comp {
            sizes[c] += 1;
        }
        let best = (0..n_comp).max_by_key(|&c| (sizes[c], std::cmp::Reverse(c))).unwrap_or(0);
        let kept: Vec<usize> = (0..self.n_nodes).filter(|&v| comp[v] == best).collect();
        let mut remap = vec![usize::MAX; self.n_nodes];
        for (new, &old) in kept.iter().enumerate() {
            remap[old] = new;
        }
        let edges = self
            .edges
            .iter()
            .filter(|&&(i, _)| comp[i] == best)
            .map(|&(i, j)| (remap[i], remap[j]));
        let g = Graph::new(kept.len(), edges).expect("component subgraph is valid");
        (g, kept)
    }
}

/// Disjoint-set forest with path halving and union by size.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Returns `true` if the two sets were distinct.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        true
    }
}

// ---------------------------------------------------------------------------
// Ingestion
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeListFormat {
    Whitespace,
    Csv,
}

/// A graph together with the original node labels (index -> label).
#[derive(Debug, Clone)]
pub struct LabeledGraph {
    pub graph: Graph,
    pub labels: Vec<String>,
}

impl LabeledGraph {
    /// Largest connected component, carrying labels along.
    pub fn largest_component(&self) -> LabeledGraph {
        let (graph, kept) = self.graph.largest_component();
        let labels = kept.iter().map(|&v| self.labels[v].clone()).collect();
        LabeledGraph { graph, labels }
    }
}

pub fn load_edge_list(path: impl AsRef<Path>, format: EdgeListFormat) -> Result<LabeledGraph> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_edge_list(BufReader::new(file), format).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

/// Parses an edge list: one edge per line, two tokens, `#` comments and
/// blank lines ignored. Labels are assigned dense indices in order of first
/// appearance (including labels seen only in self-loops).
pub fn parse_edge_list(reader: impl BufRead, format: EdgeListFormat) -> Result<LabeledGraph> {
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut labels: Vec<String> = Vec::new();
    let mut pairs = Vec::new();

    let mut intern = |tok: &str| -> usize {
        if let Some(&i) = index.get(tok) {
            return i;
        }
        let i = labels.len();
        labels.push(tok.to_string());
        index.insert(tok.to_string(), i);
        i
    };

    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<reader>", e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = match format {
            EdgeListFormat::Whitespace => trimmed.split_whitespace().collect(),
            EdgeListFormat::Csv => trimmed.split(',').map(str::trim).collect(),
        };
        if tokens.len() != 2 || tokens.iter().any(|t| t.is_empty()) {
            return Err(Error::MalformedLine {
                line: lineno + 1,
                reason: format!("expected two node tokens, found {:?}", tokens),
            });
        }
        let a = intern(tokens[0]);
        let b = intern(tokens[1]);
        pairs.push((a, b));
    }

    if pairs.iter().all(|&(a, b)| a == b) {
        return Err(Error::EmptyGraph);
    }
    let graph = Graph::new(labels.len(), pairs)?;
    Ok(LabeledGraph { graph, labels })
}

// ---------------------------------------------------------------------------
// Negative sampling
// ---------------------------------------------------------------------------

/// Node count below which the sampler may enumerate the complement.
const ENUMERATION_MAX_NODES: usize = 2000;
/// Rejection rate above which enumeration replaces rejection.
const MAX_REJECTION_RATE: f64 = 0.99;

/// Uniform sampler over node pairs absent from a graph (and an optional
/// exclusion set).
pub struct NegativeSampler<'a> {
    graph: &'a Graph,
    exclude: Option<&'a HashSet<Pair>>,
    available: usize,
    complement: Option<Vec<Pair>>,
}

impl<'a> NegativeSampler<'a> {
    pub fn new(graph: &'a Graph, exclude: Option<&'a HashSet<Pair>>) -> Self {
        let extra = exclude.map_or(0, |ex| {
            ex.iter()
                .filter(|&&(i, j)| i != j && i < graph.n_nodes() && j < graph.n_nodes())
                .filter(|&&(i, j)| !graph.has_edge(i, j))
                .count()
        });
        let available = graph.n_pairs() - graph.n_edges() - extra;
        NegativeSampler {
            graph,
            exclude,
            available,
            complement: None,
        }
    }

    /// Number of pairs eligible as negatives.
    pub fn available(&self) -> usize {
        self.available
    }

    fn rejection_rate(&self) -> f64 {
        match self.graph.n_pairs() {
            0 => 1.0,
            p => 1.0 - self.available as f64 / p as f64,
        }
    }

    fn is_negative(&self, p: Pair) -> bool {
        !self.graph.has_edge(p.0, p.1) && !self.exclude.is_some_and(|ex| ex.contains(&p))
    }

    fn complement(&mut self) -> &[Pair] {
        if self.complement.is_none() {
            let n = self.graph.n_nodes();
            let mut out = Vec::with_capacity(self.available);
            for i in 0..n {
                for j in (i + 1)..n {
                    if self.is_negative((i, j)) {
                        out.push((i, j));
                    }
                }
            }
            self.complement = Some(out);
        }
        self.complement.as_deref().unwrap()
    }

    /// Draws `count` pairs. With `distinct = false` draws are i.i.d. and may
    /// repeat; with `distinct = true` all returned pairs differ.
    pub fn sample<R: Rng + ?Sized>(
        &mut self,
        rng: &mut R,
        count: usize,
        distinct: bool,
    ) -> Result<Vec<Pair>> {
        if count == 0 {
            return Ok(Vec::new());
        }
        if self.available == 0 || (distinct && count > self.available) {
            return Err(Error::InsufficientNonEdges {
                requested: count,
                available: self.available,
            });
        }
        let n = self.graph.n_nodes();
        let enumerate = n <= ENUMERATION_MAX_NODES
            && (self.rejection_rate() > MAX_REJECTION_RATE
                || (distinct && 2 * count > self.available));
        if enumerate {
            let pool = self.complement();
            return Ok(if distinct {
                index::sample(rng, pool.len(), count)
                    .into_iter()
                    .map(|k| pool[k])
                    .collect()
            } else {
                (0..count).map(|_| pool[rng.random_range(0..pool.len())]).collect()
            });
        }

        let mut out = Vec::with_capacity(count);
        let mut seen = HashSet::new();
        while out.len() < count {
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..n);
            if i == j {
                continue;
            }
            let p = canonical(i, j);
            if !self.is_negative(p) {
                continue;
            }
            if distinct && !seen.insert(p) {
                continue;
            }
            out.push(p);
        }
        Ok(out)
    }
}

/// Samples `count` uniform non-edges of `g`, avoiding `exclude`.
pub fn sample_negatives(
    g: &Graph,
    count: usize,
    seed: u64,
    exclude: Option<&HashSet<Pair>>,
    distinct: bool,
) -> Result<Vec<Pair>> {
    let mut rng = rng_for(seed, "negatives");
    NegativeSampler::new(g, exclude).sample(&mut rng, count, distinct)
}

// ---------------------------------------------------------------------------
// Splitting
// ---------------------------------------------------------------------------

/// Held-out link-prediction split of a connected graph.
#[derive(Debug, Clone)]
pub struct EdgeSplit {
    pub train_graph: Graph,
    pub test_edges: Vec<Pair>,
    pub test_non_edges: Vec<Pair>,
    pub seed: u64,
    pub requested_fraction: f64,
    pub achieved_fraction: f64,
    /// Set when the non-tree pool was smaller than the requested removal.
    pub pool_exhausted: bool,
    /// Set when the graph had fewer non-edges than held-out edges.
    pub negatives_short: bool,
}

/// Removes `⌊fraction·|E|⌋` edges uniformly from the edges outside a random
/// spanning tree, so the training graph stays connected, and draws an equal
/// number of distinct non-edges of the original graph.
pub fn split_edges(g: &Graph, holdout_fraction: f64, seed: u64) -> Result<EdgeSplit> {
    if !(holdout_fraction > 0.0 && holdout_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "holdout fraction must lie in (0, 1), got {holdout_fraction}"
        )));
    }
    let requested = (holdout_fraction * g.n_edges() as f64).floor() as usize;
    if requested == 0 {
        return Err(Error::InvalidArgument(
            "holdout fraction removes zero edges".into(),
        ));
    }
    let components = g.n_components();
    if components != 1 {
        return Err(Error::Disconnected { components });
    }

    let mut rng = rng_for(seed, "split");

    // random-order Kruskal: uniform shuffle, keep edges joining components
    let mut order: Vec<usize> = (0..g.n_edges()).collect();
    order.shuffle(&mut rng);
    let mut uf = UnionFind::new(g.n_nodes());
    let mut in_tree = vec![false; g.n_edges()];
    for &e in &order {
        let (i, j) = g.edges()[e];
        in_tree[e] = uf.union(i, j);
    }

    let pool: Vec<usize> = (0..g.n_edges()).filter(|&e| !in_tree[e]).collect();
    let pool_exhausted = pool.len() < requested;
    let take = requested.min(pool.len());
    if pool_exhausted {
        log::warn!(
            "split: only {} removable edges for a request of {}; achieved fraction {:.4}",
            pool.len(),
            requested,
            take as f64 / g.n_edges() as f64
        );
    }
    let mut held_out = vec![false; g.n_edges()];
    for k in index::sample(&mut rng, pool.len(), take) {
        held_out[pool[k]] = true;
    }

    let mut test_edges = Vec::with_capacity(take);
    let mut train_edges = Vec::with_capacity(g.n_edges() - take);
    for (e, &p) in g.edges().iter().enumerate() {
        if held_out[e] {
            test_edges.push(p);
        } else {
            train_edges.push(p);
        }
    }

    let mut sampler = NegativeSampler::new(g, None);
    let n_neg = take.min(sampler.available());
    let negatives_short = n_neg < take;
    if negatives_short {
        log::warn!("split: graph has only {n_neg} non-edges for {take} held-out edges");
    }
    let mut test_non_edges = sampler.sample(&mut rng, n_neg, true)?;
    test_non_edges.sort_unstable();

    Ok(EdgeSplit {
        train_graph: Graph::new(g.n_nodes(), train_edges)?,
        test_edges,
        test_non_edges,
        seed,
        requested_fraction: holdout_fraction,
        achieved_fraction: take as f64 / g.n_edges() as f64,
        pool_exhausted,
        negatives_short,
    })
}

/// On-disk split format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitFile {
    pub n_nodes: usize,
    pub train_edges: Vec<Pair>,
    pub test_edges: Vec<Pair>,
    pub test_non_edges: Vec<Pair>,
    pub seed: u64,
    pub achieved_fraction: f64,
    #[serde(default)]
    pub requested_fraction: Option<f64>,
    #[serde(default)]
    pub pool_exhausted: bool,
    #[serde(default)]
    pub negatives_short: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_labels: Option<Vec<String>>,
}

impl EdgeSplit {
    pub fn to_file(&self, node_labels: Option<Vec<String>>) -> SplitFile {
        SplitFile {
            n_nodes: self.train_graph.n_nodes(),
            train_edges: self.train_graph.edges().to_vec(),
            test_edges: self.test_edges.clone(),
            test_non_edges: self.test_non_edges.clone(),
            seed: self.seed,
            achieved_fraction: self.achieved_fraction,
            requested_fraction: Some(self.requested_fraction),
            pool_exhausted: self.pool_exhausted,
            negatives_short: self.negatives_short,
            node_labels,
        }
    }

    /// Rebuilds a split from its file form, validating disjointness.
    pub fn from_file(f: &SplitFile) -> Result<EdgeSplit> {
        let train_graph = Graph::new(f.n_nodes, f.train_edges.iter().copied())?;
        for &(i, j) in f.test_edges.iter().chain(&f.test_non_edges) {
            if i >= j || j >= f.n_nodes {
                return Err(Error::InvalidGraph(format!("invalid pair ({i}, {j}) in split")));
            }
        }
        if f.test_edges.iter().any(|&(i, j)| train_graph.has_edge(i, j)) {
            return Err(Error::InvalidGraph("test edge also present in training graph".into()));
        }
        let positives: HashSet<Pair> = f.test_edges.iter().copied().collect();
        if f
            .test_non_edges
            .iter()
            .any(|&(i, j)| train_graph.has_edge(i, j) || positives.contains(&(i, j)))
        {
            return Err(Error::InvalidGraph("test non-edge present in the graph".into()));
        }
        if let Some(labels) = &f.node_labels {
            if labels.len() != f.n_nodes {
                return Err(Error::InvalidGraph("node label count mismatch".into()));
            }
        }
        Ok(EdgeSplit {
            train_graph,
            test_edges: f.test_edges.clone(),
            test_non_edges: f.test_non_edges.clone(),
            seed: f.seed,
            requested_fraction: f.requested_fraction.unwrap_or(f.achieved_fraction),
            achieved_fraction: f.achieved_fraction,
            pool_exhausted: f.pool_exhausted,
            negatives_short: f.negatives_short,
        })
    }
}
