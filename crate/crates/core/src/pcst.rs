//! Prize-collecting Steiner tree subgraph selection.
//!
//! [`solve_pcst`] is a greedy accretion heuristic followed by leaf pruning.
//! [`brute_force_pcst`] enumerates every connected node subset and is only
//! meant for graphs of at most [`BRUTE_FORCE_LIMIT`] nodes.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::model::{DialogueSenseGraph, ScoredTriple, Variant};

pub const BRUTE_FORCE_LIMIT: usize = 12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PcstError {
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error("graph has {0} nodes, brute force supports at most {BRUTE_FORCE_LIMIT}")]
    TooLarge(usize),
    #[error("node prize must be finite and >= 0, got {0}")]
    BadPrize(f64),
    #[error("edge cost must be finite and > 0, got {0}")]
    BadCost(f64),
    #[error("edge ({0}, {1}) is a self loop, out of range or duplicated")]
    BadEdge(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    pub cost: f64,
}

impl Edge {
    /// The endpoint that is not `node`.
    pub fn opposite(&self, node: usize) -> usize {
        if self.u == node {
            self.v
        } else {
            self.u
        }
    }
}

/// Simple undirected graph with non-negative node prizes and positive edge costs.
#[derive(Debug, Clone, PartialEq)]
pub struct PrizedGraph {
    labels: Vec<String>,
    prizes: Vec<f64>,
    edges: Vec<Edge>,
    adjacency: Vec<Vec<usize>>,
    /// Pool positions of the triples that map onto each edge.
    edge_sources: Vec<Vec<usize>>,
}

impl PrizedGraph {
    pub fn new(labels: Vec<String>, prizes: Vec<f64>, edges: Vec<Edge>) -> Result<Self, PcstError> {
        let edge_sources = vec![Vec::new(); edges.len()];
        Self::with_sources(labels, prizes, edges, edge_sources)
    }

    fn with_sources(
        labels: Vec<String>,
        prizes: Vec<f64>,
        edges: Vec<Edge>,
        edge_sources: Vec<Vec<usize>>,
    ) -> Result<Self, PcstError> {
        assert_eq!(labels.len(), prizes.len(), "one prize per node");
        if let Some(&p) = prizes.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
            return Err(PcstError::BadPrize(p));
        }
        let n = labels.len();
        let mut adjacency = vec![Vec::new(); n];
        let mut seen = BTreeMap::new();
        for (i, e) in edges.iter().enumerate() {
            if !(e.cost.is_finite() && e.cost > 0.0) {
                return Err(PcstError::BadCost(e.cost));
            }
            let key = (e.u.min(e.v), e.u.max(e.v));
            if e.u == e.v || e.u >= n || e.v >= n || seen.insert(key, i).is_some() {
                return Err(PcstError::BadEdge(e.u, e.v));
            }
            adjacency[e.u].push(i);
            adjacency[e.v].push(i);
        }
        Ok(PrizedGraph { labels, prizes, edges, adjacency, edge_sources })
    }

    pub fn node_count(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn prizes(&self) -> &[f64] {
        &self.prizes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge_sources(&self, edge: usize) -> &[usize] {
        &self.edge_sources[edge]
    }

    pub fn node_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn prize_of(&self, label: &str) -> Option<f64> {
        self.node_index(label).map(|i| self.prizes[i])
    }

    /// Edges touching `node`.
    pub fn incident(&self, node: usize) -> &[usize] {
        &self.adjacency[node]
    }

    /// `Σ prizes(nodes) − Σ costs(edges)`, summed in the given order.
    pub fn objective_of(&self, nodes: &[usize], edges: &[usize]) -> f64 {
        let prize: f64 = nodes.iter().map(|&v| self.prizes[v]).sum();
        let cost: f64 = edges.iter().map(|&e| self.edges[e].cost).sum();
        prize - cost
    }

    /// True when `edges` spans exactly `nodes` as a single tree.
    pub fn is_tree(&self, nodes: &[usize], edges: &[usize]) -> bool {
        if nodes.is_empty() || edges.len() + 1 != nodes.len() {
            return false;
        }
        let mut member = vec![false; self.node_count()];
        for &v in nodes {
            if v >= member.len() || member[v] {
                return false;
            }
            member[v] = true;
        }
        let mut dsu = DisjointSet::new(self.node_count());
        for &e in edges {
            let Edge { u, v, .. } = self.edges[e];
            if !member[u] || !member[v] || !dsu.union(u, v) {
                return false;
            }
        }
        true
    }
}

/// Selected tree: sorted node and edge indices plus its objective.
#[derive(Debug, Clone, PartialEq)]
pub struct SubgraphResult {
    pub nodes: Vec<usize>,
    pub edges: Vec<usize>,
    pub objective: f64,
}

impl SubgraphResult {
    fn from_parts(g: &PrizedGraph, mut nodes: Vec<usize>, mut edges: Vec<usize>) -> Self {
        nodes.sort_unstable();
        edges.sort_unstable();
        let objective = g.objective_of(&nodes, &edges);
        SubgraphResult { nodes, edges, objective }
    }

    pub fn node_labels<'g>(&self, g: &'g PrizedGraph) -> Vec<&'g str> {
        self.nodes.iter().map(|&v| g.labels[v].as_str()).collect()
    }
}

fn rank_order(a: &ScoredTriple, b: &ScoredTriple) -> Ordering {
    b.score.partial_cmp(&a.score).unwrap_or(Ordering::Equal).then(a.source_index.cmp(&b.source_index))
}

/// Builds the prized graph for a scored pool.
///
/// Nodes are all subjects and objects in order of first appearance. The `k`
/// best triples give their subject a prize of `k − rank` (rank 0-based, the
/// maximum wins when a subject recurs); all other nodes get 0. Every triple is
/// a unit-cost edge; parallel triples between the same pair share one edge and
/// self loops carry no edge.
pub fn assign_prizes(scored: &[ScoredTriple], k: usize) -> PrizedGraph {
    let mut labels: Vec<String> = Vec::new();
    let mut index: BTreeMap<String, usize> = BTreeMap::new();
    let mut node = |label: &str, labels: &mut Vec<String>| -> usize {
        if let Some(&i) = index.get(label) {
            return i;
        }
        labels.push(label.into());
        index.insert(label.into(), labels.len() - 1);
        labels.len() - 1
    };

    let mut edges: Vec<Edge> = Vec::new();
    let mut edge_sources: Vec<Vec<usize>> = Vec::new();
    let mut edge_of: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for st in scored {
        let u = node(&st.triple.subject, &mut labels);
        let v = node(&st.triple.object, &mut labels);
        if u == v {
            continue;
        }
        let key = (u.min(v), u.max(v));
        match edge_of.get(&key) {
            Some(&e) => edge_sources[e].push(st.source_index),
            None => {
                edge_of.insert(key, edges.len());
                edges.push(Edge { u, v, cost: 1.0 });
                edge_sources.push(vec![st.source_index]);
            }
        }
    }

    let mut prizes = vec![0.0; labels.len()];
    let mut ranked: Vec<&ScoredTriple> = scored.iter().collect();
    ranked.sort_by(|a, b| rank_order(a, b));
    for (rank, st) in ranked.iter().take(k).enumerate() {
        let i = index[&st.triple.subject];
        let prize = (k - rank) as f64;
        if prize > prizes[i] {
            prizes[i] = prize;
        }
    }

    PrizedGraph::with_sources(labels, prizes, edges, edge_sources)
        .expect("unit costs, rank prizes and deduplicated edges are valid")
}

/// Greedy accretion from the highest-prize node, then leaf pruning.
///
/// Each round attaches the cheapest path from the current tree to some
/// outside node, choosing the path whose collected prizes minus its cost is
/// largest, and stops once no path has a positive marginal. With single-edge
/// paths this is plain frontier-edge accretion; longer paths let the tree
/// cross zero-prize nodes towards a distant prize.
pub fn solve_pcst(g: &PrizedGraph) -> Result<SubgraphResult, PcstError> {
    let n = g.node_count();
    if n == 0 {
        return Err(PcstError::EmptyGraph);
    }
    let mut root = 0;
    for v in 1..n {
        if g.prizes[v] > g.prizes[root] {
            root = v;
        }
    }

    let mut in_tree = vec![false; n];
    let mut tree_edges: Vec<usize> = Vec::new();
    in_tree[root] = true;
    while let Some(path) = best_attachment(g, &in_tree) {
        for e in path {
            let edge = g.edges[e];
            in_tree[edge.u] = true;
            in_tree[edge.v] = true;
            tree_edges.push(e);
        }
    }

    // Strip leaves that cost more to attach than they collect.
    loop {
        let mut degree = vec![0usize; n];
        for &e in &tree_edges {
            degree[g.edges[e].u] += 1;
            degree[g.edges[e].v] += 1;
        }
        let prune = tree_edges.iter().enumerate().find_map(|(pos, &e)| {
            let edge = g.edges[e];
            [edge.u, edge.v]
                .into_iter()
                .find(|&leaf| degree[leaf] == 1 && g.prizes[leaf] < edge.cost)
                .map(|leaf| (pos, leaf))
        });
        match prune {
            Some((pos, leaf)) => {
                tree_edges.remove(pos);
                in_tree[leaf] = false;
            }
            None => break,
        }
    }

    let nodes = (0..n).filter(|&v| in_tree[v]).collect();
    Ok(SubgraphResult::from_parts(g, nodes, tree_edges))
}

/// Multi-source cheapest paths from the tree through outside nodes, ordered
/// by (cost asc, collected prize desc). Returns the edges of the path with
/// the largest positive `prize − cost`, ties to the cheaper path then the
/// lower node index.
fn best_attachment(g: &PrizedGraph, in_tree: &[bool]) -> Option<Vec<usize>> {
    let n = g.node_count();
    // (cost, prize) of the best known path to each outside node
    let mut label: Vec<Option<(f64, f64)>> = vec![None; n];
    let mut via: Vec<Option<usize>> = vec![None; n];
    let mut settled = vec![false; n];
    let better = |a: (f64, f64), b: (f64, f64)| a.0 < b.0 || (a.0 == b.0 && a.1 > b.1);

    let relax_from = |from: usize,
                      base: (f64, f64),
                      label: &mut Vec<Option<(f64, f64)>>,
                      via: &mut Vec<Option<usize>>,
                      settled: &[bool]| {
        for &e in &g.adjacency[from] {
            let to = g.edges[e].opposite(from);
            if in_tree[to] || settled[to] {
                continue;
            }
            let cand = (base.0 + g.edges[e].cost, base.1 + g.prizes[to]);
            if label[to].is_none_or(|cur| better(cand, cur)) {
                label[to] = Some(cand);
                via[to] = Some(e);
            }
        }
    };
    for v in (0..n).filter(|&v| in_tree[v]) {
        relax_from(v, (0.0, 0.0), &mut label, &mut via, &settled);
    }

    let mut best: Option<(f64, f64, usize)> = None;
    loop {
        let next = (0..n).filter(|&v| !settled[v] && label[v].is_some()).min_by(|&a, &b| {
            let (la, lb) = (label[a].unwrap(), label[b].unwrap());
            if better(la, lb) {
                Ordering::Less
            } else if better(lb, la) {
                Ordering::Greater
            } else {
                a.cmp(&b)
            }
        });
        let Some(v) = next else { break };
        settled[v] = true;
        let (cost, prize) = label[v].unwrap();
        let gain = prize - cost;
        if gain > 0.0
            && best.is_none_or(|(bg, bc, bv)| gain > bg || (gain == bg && (cost < bc || (cost == bc && v < bv))))
        {
            best = Some((gain, cost, v));
        }
        relax_from(v, (cost, prize), &mut label, &mut via, &settled);
    }

    let (_, _, target) = best?;
    let mut path = Vec::new();
    let mut v = target;
    while !in_tree[v] {
        let e = via[v].expect("settled outside node has a predecessor edge");
        path.push(e);
        v = g.edges[e].opposite(v);
    }
    path.reverse();
    Some(path)
}

/// Exact optimum by enumerating every connected node subset and pricing it
/// with a minimum spanning tree of its induced subgraph. Ties keep the subset
/// with the smallest bitmask.
pub fn brute_force_pcst(g: &PrizedGraph) -> Result<SubgraphResult, PcstError> {
    let n = g.node_count();
    if n == 0 {
        return Err(PcstError::EmptyGraph);
    }
    if n > BRUTE_FORCE_LIMIT {
        return Err(PcstError::TooLarge(n));
    }
    let mut best: Option<SubgraphResult> = None;
    for mask in 1u32..(1u32 << n) {
        let Some(edges) = induced_mst(g, mask) else { continue };
        let nodes: Vec<usize> = (0..n).filter(|&v| mask & (1 << v) != 0).collect();
        let candidate = SubgraphResult::from_parts(g, nodes, edges);
        if best.as_ref().is_none_or(|b| candidate.objective > b.objective) {
            best = Some(candidate);
        }
    }
    Ok(best.expect("at least one single-node subset"))
}

/// Kruskal over the edges induced by `mask`; `None` when disconnected.
fn induced_mst(g: &PrizedGraph, mask: u32) -> Option<Vec<usize>> {
    let inside = |v: usize| mask & (1 << v) != 0;
    let mut candidates: Vec<usize> =
        (0..g.edges.len()).filter(|&e| inside(g.edges[e].u) && inside(g.edges[e].v)).collect();
    candidates
        .sort_by(|&a, &b| g.edges[a].cost.partial_cmp(&g.edges[b].cost).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
    let mut dsu = DisjointSet::new(g.node_count());
    let mut tree = Vec::new();
    for e in candidates {
        if dsu.union(g.edges[e].u, g.edges[e].v) {
            tree.push(e);
        }
    }
    (tree.len() + 1 == mask.count_ones() as usize).then_some(tree)
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        DisjointSet { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra] = rb;
        true
    }
}

/// Runs prize assignment and [`solve_pcst`] on a scored pool and returns the
/// tree as a sense graph.
///
/// Each tree edge is represented by its best-ranked triple. A tree with no
/// edges keeps the best-ranked triple touching its node. Triples come out in
/// rank order and `n` is the number emitted.
pub fn pcst_sense_graph(dialogue_id: &str, variant: Variant, scored: &[ScoredTriple], k: usize) -> DialogueSenseGraph {
    let g = assign_prizes(scored, k);
    let tree = match solve_pcst(&g) {
        Ok(t) => t,
        Err(_) => return DialogueSenseGraph::empty(dialogue_id, variant, 0),
    };
    let by_source: BTreeMap<usize, &ScoredTriple> = scored.iter().map(|s| (s.source_index, s)).collect();
    let best = |cands: &mut dyn Iterator<Item = &ScoredTriple>| -> Option<ScoredTriple> {
        cands.min_by(|a, b| rank_order(a, b)).cloned()
    };
    let mut picked: Vec<ScoredTriple> = tree
        .edges
        .iter()
        .filter_map(|&e| best(&mut g.edge_sources(e).iter().filter_map(|i| by_source.get(i).copied())))
        .collect();
    if picked.is_empty() {
        let label = g.labels()[tree.nodes[0]].as_str();
        picked.extend(best(&mut scored.iter().filter(|s| s.triple.subject == label || s.triple.object == label)));
    }
    picked.sort_by(rank_order);
    DialogueSenseGraph { dialogue_id: dialogue_id.into(), variant, n: picked.len(), triples: picked }
}
