//! Pre-training graphs, local consistency, edge noise, and radius-NN
//! recovery diagnostics.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("edge ({u}, {v}) out of range for {num_nodes} nodes")]
    EdgeOutOfRange { u: u32, v: u32, num_nodes: usize },
    #[error("self-loop at node {0}")]
    SelfLoop(u32),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(u32, u32),
    #[error("labeling covers {got} nodes but the graph has {expected}")]
    LabelingMismatch { got: usize, expected: usize },
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: u32, num_classes: u32 },
    #[error("local consistency is undefined: every node is isolated")]
    AllIsolated,
    #[error("clique assignment covers {got} nodes but the labeling has {expected}")]
    CliqueMismatch { got: usize, expected: usize },
    #[error("noise rate {0} outside [0, 1]")]
    InvalidRate(f64),
    #[error("cannot add {requested} edges: only {available} non-edges exist")]
    Saturated { requested: usize, available: usize },
    #[error("point {index} has dimension {got}, expected {expected}")]
    DimensionMismatch { index: usize, got: usize, expected: usize },
    #[error("radius must be positive for {0} distance")]
    NonPositiveRadius(&'static str),
    #[error("recovery margin needs at least one edge and one non-edge")]
    TrivialGraph,
    #[error("graph io: {0}")]
    Io(#[from] std::io::Error),
    #[error("graph file line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// An undirected simple graph over nodes 0..num_nodes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Graph {
    num_nodes: usize,
    edges: Vec<(u32, u32)>,
    adjacency: Vec<Vec<u32>>,
}

impl Graph {
    /// Builds a graph, normalizing each pair to (min, max) and sorting the
    /// edge set. Rejects self-loops, out-of-range endpoints, and duplicates.
    pub fn from_edges(num_nodes: usize, edges: &[(u32, u32)]) -> Result<Self, GraphError> {
        let mut normalized: Vec<(u32, u32)> = Vec::with_capacity(edges.len());
        for &(a, b) in edges {
            if a as usize >= num_nodes || b as usize >= num_nodes {
                return Err(GraphError::EdgeOutOfRange { u: a, v: b, num_nodes });
            }
            if a == b {
                return Err(GraphError::SelfLoop(a));
            }
            normalized.push((a.min(b), a.max(b)));
        }
        normalized.sort_unstable();
        if let Some(w) = normalized.windows(2).find(|w| w[0] == w[1]) {
            return Err(GraphError::DuplicateEdge(w[0].0, w[0].1));
        }
        let mut adjacency = vec![Vec::new(); num_nodes];
        for &(u, v) in &normalized {
            adjacency[u as usize].push(v);
            adjacency[v as usize].push(u);
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        Ok(Graph { num_nodes, edges: normalized, adjacency })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Sorted normalized edge list.
    pub fn edges(&self) -> &[(u32, u32)] {
        &self.edges
    }

    /// Sorted neighbor list of `node`.
    pub fn neighbors(&self, node: usize) -> &[u32] {
        &self.adjacency[node]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.adjacency[node].len()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        if u == v {
            return false;
        }
        self.adjacency[u].binary_search(&(v as u32)).is_ok()
    }

    /// Writes the edge-list format: a "num_nodes N" header, then one "u v"
    /// line per edge with u < v.
    pub fn write_edges(&self, path: &Path) -> Result<(), GraphError> {
        let mut out = format!("num_nodes {}\n", self.num_nodes);
        for &(u, v) in &self.edges {
            out.push_str(&format!("{u} {v}\n"));
        }
        crate::fsutil::write_atomic(path, out.as_bytes())?;
        Ok(())
    }

    pub fn read_edges(path: &Path) -> Result<Self, GraphError> {
        let text = fs::read_to_string(path)?;
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(GraphError::Parse {
            line: 1,
            message: "empty file".into(),
        })?;
        let num_nodes = header
            .strip_prefix("num_nodes ")
            .and_then(|s| s.trim().parse::<usize>().ok())
            .ok_or(GraphError::Parse { line: 1, message: format!("bad header {header:?}") })?;
        let mut edges = Vec::new();
        for (i, line) in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let parse = |s: Option<&str>| {
                s.and_then(|t| t.parse::<u32>().ok()).ok_or(GraphError::Parse {
                    line: i + 1,
                    message: format!("bad edge line {line:?}"),
                })
            };
            let u = parse(parts.next())?;
            let v = parse(parts.next())?;
            edges.push((u, v));
        }
        Graph::from_edges(num_nodes, &edges)
    }
}

/// A per-node class labeling.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Labeling {
    pub labels: Vec<u32>,
    pub num_classes: u32,
}

impl Labeling {
    pub fn new(labels: Vec<u32>, num_classes: u32) -> Result<Self, GraphError> {
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(GraphError::LabelOutOfRange { label: bad, num_classes });
        }
        Ok(Labeling { labels, num_classes })
    }

    /// Infers num_classes as max label + 1.
    pub fn from_labels(labels: Vec<u32>) -> Self {
        let num_classes = labels.iter().max().map_or(0, |&m| m + 1);
        Labeling { labels, num_classes }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Writes the labeling as a JSON array of integers.
    pub fn write_json(&self, path: &Path) -> Result<(), GraphError> {
        let text = serde_json::to_string(&self.labels)
            .expect("serializing integers cannot fail");
        crate::fsutil::write_atomic(path, text.as_bytes())?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self, GraphError> {
        let text = fs::read_to_string(path)?;
        let labels: Vec<u32> = serde_json::from_str(&text)
            .map_err(|e| GraphError::Parse { line: 1, message: e.to_string() })?;
        Ok(Labeling::from_labels(labels))
    }
}

/// Distances available to the radius-NN machinery.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistanceName {
    Euclidean,
    Cosine,
    NegativeInnerProduct,
}

impl DistanceName {
    pub fn eval(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            DistanceName::Euclidean => {
                a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
            }
            DistanceName::Cosine => {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
                if na == 0.0 || nb == 0.0 {
                    1.0
                } else {
                    1.0 - dot / (na * nb)
                }
            }
            DistanceName::NegativeInnerProduct => {
                -a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
            }
        }
    }

    fn name(self) -> &'static str {
        match self {
            DistanceName::Euclidean => "euclidean",
            DistanceName::Cosine => "cosine",
            DistanceName::NegativeInnerProduct => "negative-inner-product",
        }
    }

    /// Negative inner product is a legitimate "distance" for recovery even
    /// when negative, so only the metrics proper require r > 0.
    fn requires_positive_radius(self) -> bool {
        !matches!(self, DistanceName::NegativeInnerProduct)
    }
}

/// Recovery rule: connect pairs closer than `radius` under `distance`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct RecoveryCriterion {
    pub distance: DistanceName,
    pub radius: f64,
    /// Loss level below which recovery is expected to hold; carried for
    /// reporting, not used by the connectivity rule itself.
    pub loss_threshold: f64,
}

/// Fraction of non-isolated nodes whose own label attains the maximum
/// neighbor-label count (ties inclusive). Isolated nodes are excluded.
pub fn local_consistency(g: &Graph, y: &Labeling) -> Result<f64, GraphError> {
    if y.len() != g.num_nodes() {
        return Err(GraphError::LabelingMismatch { got: y.len(), expected: g.num_nodes() });
    }
    if g.num_edges() == 0 {
        return Err(GraphError::AllIsolated);
    }
    let mut consistent = 0usize;
    let mut counted = 0usize;
    let mut counts: HashMap<u32, usize> = HashMap::new();
    for node in 0..g.num_nodes() {
        let nbrs = g.neighbors(node);
        if nbrs.is_empty() {
            continue;
        }
        counted += 1;
        counts.clear();
        for &n in nbrs {
            *counts.entry(y.labels[n as usize]).or_insert(0) += 1;
        }
        let max = counts.values().copied().max().unwrap();
        if counts.get(&y.labels[node]) == Some(&max) {
            consistent += 1;
        }
    }
    Ok(consistent as f64 / counted as f64)
}

/// Closed-form LC for a disjoint-cliques graph: sum over cliques of
/// P(clique) * P(own label = clique majority), majority ties resolved to the
/// smallest label.
pub fn clique_lc_prediction(clique_assignment: &[u32], y: &Labeling) -> Result<f64, GraphError> {
    if clique_assignment.len() != y.len() {
        return Err(GraphError::CliqueMismatch { got: clique_assignment.len(), expected: y.len() });
    }
    let mut members: std::collections::BTreeMap<u32, Vec<usize>> = std::collections::BTreeMap::new();
    for (node, &c) in clique_assignment.iter().enumerate() {
        members.entry(c).or_default().push(node);
    }
    // Hits are accumulated as integers and divided once, so the result is
    // bit-identical to a direct per-node consistency count.
    let mut hits = 0usize;
    let mut counts: HashMap<u32, usize> = HashMap::new();
    for nodes in members.values() {
        counts.clear();
        for &n in nodes {
            *counts.entry(y.labels[n]).or_insert(0) += 1;
        }
        let majority = counts
            .iter()
            .map(|(&label, &count)| (count, std::cmp::Reverse(label)))
            .max()
            .map(|(_, std::cmp::Reverse(label))| label)
            .unwrap();
        hits += counts[&majority];
    }
    Ok(hits as f64 / clique_assignment.len() as f64)
}

/// Adds ceil(rate * |E|) uniformly chosen absent edges.
pub fn add_edge_noise(g: &Graph, rate: f64, seed: u64) -> Result<Graph, GraphError> {
    if !(0.0..=1.0).contains(&rate) || rate.is_nan() {
        return Err(GraphError::InvalidRate(rate));
    }
    let to_add = (rate * g.num_edges() as f64).ceil() as usize;
    if to_add == 0 {
        return Ok(g.clone());
    }
    let n = g.num_nodes();
    let mut non_edges: Vec<(u32, u32)> = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            if !g.has_edge(u, v) {
                non_edges.push((u as u32, v as u32));
            }
        }
    }
    if non_edges.len() < to_add {
        return Err(GraphError::Saturated { requested: to_add, available: non_edges.len() });
    }
    let mut rng = rng::stream(seed, "edge-noise");
    // Partial Fisher-Yates: the first to_add slots become the sample.
    for i in 0..to_add {
        let j = rng.random_range(i..non_edges.len());
        non_edges.swap(i, j);
    }
    let mut edges = g.edges.clone();
    edges.extend_from_slice(&non_edges[..to_add]);
    Graph::from_edges(n, &edges)
}

/// Connects i != j iff d(points[i], points[j]) < criterion.radius.
pub fn radius_nn_graph(points: &[Vec<f64>], criterion: &RecoveryCriterion) -> Result<Graph, GraphError> {
    check_dimensions(points)?;
    if criterion.distance.requires_positive_radius() && criterion.radius <= 0.0 {
        return Err(GraphError::NonPositiveRadius(criterion.distance.name()));
    }
    let n = points.len();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if criterion.distance.eval(&points[i], &points[j]) < criterion.radius {
                edges.push((i as u32, j as u32));
            }
        }
    }
    Graph::from_edges(n, &edges)
}

fn check_dimensions(points: &[Vec<f64>]) -> Result<(), GraphError> {
    if let Some(first) = points.first() {
        for (i, p) in points.iter().enumerate() {
            if p.len() != first.len() {
                return Err(GraphError::DimensionMismatch {
                    index: i,
                    got: p.len(),
                    expected: first.len(),
                });
            }
        }
    }
    Ok(())
}

/// Outcome of the recovery-margin diagnostic.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct MarginReport {
    /// (min non-edge distance) − (max edge distance); positive iff some
    /// radius reproduces the graph exactly.
    pub margin: f64,
    pub best_radius: f64,
    pub edge_f1: f64,
}

/// Measures how recoverable `g` is from `points` under a radius rule.
///
/// With a positive margin the best radius is the midpoint of the gap and F1
/// is 1. Otherwise the radius sweeps the sorted pairwise distances (breaks
/// between distinct values, where F1 is piecewise constant) and reports the
/// best F1 found, preferring smaller radii on ties.
pub fn recovery_margin(
    g: &Graph,
    points: &[Vec<f64>],
    distance: DistanceName,
) -> Result<MarginReport, GraphError> {
    if points.len() != g.num_nodes() {
        return Err(GraphError::LabelingMismatch { got: points.len(), expected: g.num_nodes() });
    }
    check_dimensions(points)?;
    let n = g.num_nodes();
    let total_pairs = n * (n - 1) / 2;
    if g.num_edges() == 0 || g.num_edges() == total_pairs {
        return Err(GraphError::TrivialGraph);
    }

    // (distance, is_edge) for every unordered pair.
    let mut pairs: Vec<(f64, bool)> = Vec::with_capacity(total_pairs);
    let mut max_edge = f64::NEG_INFINITY;
    let mut min_non_edge = f64::INFINITY;
    for i in 0..n {
        for j in (i + 1)..n {
            let d = distance.eval(&points[i], &points[j]);
            let is_edge = g.has_edge(i, j);
            if is_edge {
                max_edge = max_edge.max(d);
            } else {
                min_non_edge = min_non_edge.min(d);
            }
            pairs.push((d, is_edge));
        }
    }
    let margin = min_non_edge - max_edge;
    if margin > 0.0 {
        return Ok(MarginReport { margin, best_radius: max_edge + margin / 2.0, edge_f1: 1.0 });
    }

    // Sweep radii in increasing order. Prediction sets only change between
    // distinct distances, so each break's midpoint is a candidate.
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("distances must not be NaN"));
    let num_edges = g.num_edges() as f64;
    let mut best_f1 = 0.0;
    let mut best_radius = pairs[0].0 - 1.0;
    let mut predicted = 0usize;
    let mut true_pos = 0usize;
    let mut idx = 0;
    while idx < pairs.len() {
        let d = pairs[idx].0;
        while idx < pairs.len() && pairs[idx].0 == d {
            predicted += 1;
            if pairs[idx].1 {
                true_pos += 1;
            }
            idx += 1;
        }
        let radius = if idx < pairs.len() { (d + pairs[idx].0) / 2.0 } else { d + 1.0 };
        let precision = true_pos as f64 / predicted as f64;
        let recall = true_pos as f64 / num_edges;
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        if f1 > best_f1 {
            best_f1 = f1;
            best_radius = radius;
        }
    }
    Ok(MarginReport { margin, best_radius, edge_f1: best_f1 })
}

/// Breadth-first components; ids are dense, ordered by smallest member.
pub fn connected_components(g: &Graph) -> Vec<u32> {
    let n = g.num_nodes();
    let mut comp = vec![u32::MAX; n];
    let mut next = 0u32;
    let mut queue = std::collections::VecDeque::new();
    for start in 0..n {
        if comp[start] != u32::MAX {
            continue;
        }
        comp[start] = next;
        queue.push_back(start);
        while let Some(u) = queue.pop_front() {
            for &v in g.neighbors(u) {
                if comp[v as usize] == u32::MAX {
                    comp[v as usize] = next;
                    queue.push_back(v as usize);
                }
            }
        }
        next += 1;
    }
    comp
}
