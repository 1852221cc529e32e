//! Cycle+motif graphs and their three labelings: neighborhood (distance-3
//! homophily), motif membership, and structural (order-4 graphlet degree
//! vectors fed through k-means).

use std::collections::{HashSet, VecDeque};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::corpus::Sample;
use crate::graph::{connected_components, Graph, GraphError, Labeling};
use crate::rng;

#[derive(Debug, Error)]
pub enum MechanisticError {
    #[error("bad motif template {name:?}: {reason}")]
    BadTemplate { name: String, reason: String },
    #[error("cycle of length {cycle_len} cannot host {total} motifs")]
    SpacingError { cycle_len: usize, total: usize },
    #[error("homophily labeling requires a connected graph")]
    Disconnected,
    #[error("k-means needs k <= distinct feature vectors: k={k}, distinct={distinct}")]
    DegenerateK { k: usize, distinct: usize },
    #[error("label {label} needs {needed} samples with the matching topic, corpus has {available}")]
    InsufficientSamples { label: u32, needed: usize, available: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("gdv io: {0}")]
    Io(#[from] std::io::Error),
}

/// A small connected graph attached to the base cycle. Node 0 is the bridge
/// node that connects to the cycle.
#[derive(Clone, Debug)]
pub struct MotifTemplate {
    pub name: String,
    pub size: usize,
    pub edges: Vec<(usize, usize)>,
}

impl MotifTemplate {
    pub fn triangle() -> Self {
        MotifTemplate { name: "triangle".into(), size: 3, edges: vec![(0, 1), (1, 2), (0, 2)] }
    }

    pub fn four_cycle() -> Self {
        MotifTemplate {
            name: "four-cycle".into(),
            size: 4,
            edges: vec![(0, 1), (1, 2), (2, 3), (0, 3)],
        }
    }

    pub fn four_clique() -> Self {
        MotifTemplate {
            name: "four-clique".into(),
            size: 4,
            edges: vec![(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)],
        }
    }

    pub fn three_star() -> Self {
        MotifTemplate { name: "three-star".into(), size: 4, edges: vec![(0, 1), (0, 2), (0, 3)] }
    }

    /// The default template set.
    pub fn defaults() -> Vec<Self> {
        vec![Self::triangle(), Self::four_cycle(), Self::four_clique(), Self::three_star()]
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "triangle" => Some(Self::triangle()),
            "four-cycle" => Some(Self::four_cycle()),
            "four-clique" => Some(Self::four_clique()),
            "three-star" => Some(Self::three_star()),
            _ => None,
        }
    }

    fn validate(&self) -> Result<(), MechanisticError> {
        let bad = |reason: &str| MechanisticError::BadTemplate {
            name: self.name.clone(),
            reason: reason.into(),
        };
        if !(3..=8).contains(&self.size) {
            return Err(bad("size must be between 3 and 8"));
        }
        let edges: Vec<(u32, u32)> =
            self.edges.iter().map(|&(a, b)| (a as u32, b as u32)).collect();
        let g = Graph::from_edges(self.size, &edges)
            .map_err(|e| bad(&format!("invalid edges: {e}")))?;
        let comps = connected_components(&g);
        if comps.iter().any(|&c| c != 0) {
            return Err(bad("template must be connected"));
        }
        Ok(())
    }
}

/// A base cycle with motif copies hanging off evenly spaced cycle nodes.
#[derive(Clone, Debug)]
pub struct MotifGraph {
    pub graph: Graph,
    /// Base cycle nodes are 0..cycle_len.
    pub cycle_len: usize,
    /// Node -> motif copy index; None for base-cycle nodes.
    pub motif_of_node: Vec<Option<usize>>,
    /// Motif copy -> template index.
    pub template_of_motif: Vec<usize>,
    /// Motif copy -> cycle node it bridges to.
    pub attachment_points: Vec<usize>,
    /// Number of distinct templates used at build time.
    pub num_templates: usize,
}

/// Builds the cycle, spreads template copies at evenly spaced attachment
/// points (spacing = floor(cycle_len / total copies)), and bridges each copy
/// through its template's node 0. The seed shuffles which copy lands on which
/// attachment point.
pub fn build_motif_graph(
    cycle_len: usize,
    templates: &[MotifTemplate],
    copies_per_shape: usize,
    seed: u64,
) -> Result<MotifGraph, MechanisticError> {
    for t in templates {
        t.validate()?;
    }
    let total = templates.len() * copies_per_shape;
    if total > 0 && cycle_len < total {
        return Err(MechanisticError::SpacingError { cycle_len, total });
    }
    assert!(cycle_len >= 3, "cycle needs at least 3 nodes");

    let mut edges: Vec<(u32, u32)> = (0..cycle_len)
        .map(|i| (i as u32, ((i + 1) % cycle_len) as u32))
        .collect();

    // Which template copy sits at which attachment slot.
    let mut copy_templates: Vec<usize> = (0..templates.len())
        .flat_map(|t| std::iter::repeat(t).take(copies_per_shape))
        .collect();
    copy_templates.shuffle(&mut rng::stream(seed, "motif-order"));

    let spacing = if total == 0 { 0 } else { cycle_len / total };
    let mut motif_of_node: Vec<Option<usize>> = vec![None; cycle_len];
    let mut template_of_motif = Vec::with_capacity(total);
    let mut attachment_points = Vec::with_capacity(total);
    let mut next_node = cycle_len;
    for (copy, &t) in copy_templates.iter().enumerate() {
        let attach = copy * spacing;
        let template = &templates[t];
        for &(a, b) in &template.edges {
            edges.push(((next_node + a) as u32, (next_node + b) as u32));
        }
        edges.push((attach as u32, next_node as u32));
        motif_of_node.extend(std::iter::repeat(Some(copy)).take(template.size));
        template_of_motif.push(t);
        attachment_points.push(attach);
        next_node += template.size;
    }

    let graph = Graph::from_edges(next_node, &edges)?;
    Ok(MotifGraph {
        graph,
        cycle_len,
        motif_of_node,
        template_of_motif,
        attachment_points,
        num_templates: templates.len(),
    })
}

/// Label 0 for base-cycle nodes, template id + 1 for motif nodes.
pub fn motif_labels(mg: &MotifGraph) -> Labeling {
    let labels = mg
        .motif_of_node
        .iter()
        .map(|m| match m {
            None => 0,
            Some(copy) => mg.template_of_motif[*copy] as u32 + 1,
        })
        .collect();
    Labeling { labels, num_classes: mg.num_templates as u32 + 1 }
}

/// K-means over 0/1 indicators of "within shortest-path distance 3".
pub fn homophily_labels(
    g: &Graph,
    k_clusters: usize,
    seed: u64,
) -> Result<Labeling, MechanisticError> {
    if connected_components(g).iter().any(|&c| c != 0) {
        return Err(MechanisticError::Disconnected);
    }
    let n = g.num_nodes();
    let features: Vec<Vec<f64>> = (0..n)
        .map(|v| {
            let mut feat = vec![0.0; n];
            for u in nodes_within(g, v, 3) {
                feat[u] = 1.0;
            }
            feat
        })
        .collect();
    let assignment = kmeans_clamped(&features, k_clusters, seed)?;
    Ok(Labeling::from_labels(assignment))
}

/// Nodes within BFS distance `radius` of v, self included.
fn nodes_within(g: &Graph, v: usize, radius: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; g.num_nodes()];
    let mut queue = VecDeque::new();
    dist[v] = 0;
    queue.push_back(v);
    let mut out = vec![v];
    while let Some(u) = queue.pop_front() {
        if dist[u] == radius {
            continue;
        }
        for &w in g.neighbors(u) {
            if dist[w as usize] == usize::MAX {
                dist[w as usize] = dist[u] + 1;
                out.push(w as usize);
                queue.push_back(w as usize);
            }
        }
    }
    out
}

/// Graphlet degree vector over orbits 0-14 (connected graphlets on 2-4
/// nodes, standard orbit numbering).
pub type Gdv = [u64; 15];

/// Counts, for every connected induced subgraph on 2-4 nodes containing v,
/// the automorphism orbit v occupies.
pub fn gdv(g: &Graph, v: usize) -> Gdv {
    let mut counts = [0u64; 15];
    counts[0] = g.degree(v) as u64;
    for subset in connected_subsets_through(g, v, 4) {
        match subset.len() {
            3 => counts[orbit3(g, v, &subset)] += 1,
            4 => counts[orbit4(g, v, &subset)] += 1,
            _ => {}
        }
    }
    counts
}

/// GDVs for every node.
pub fn gdv_all(g: &Graph) -> Vec<Gdv> {
    (0..g.num_nodes()).map(|v| gdv(g, v)).collect()
}

/// All connected induced subsets of size 3..=max_size containing v,
/// deduplicated by sorted membership.
fn connected_subsets_through(g: &Graph, v: usize, max_size: usize) -> Vec<Vec<usize>> {
    let mut seen: HashSet<Vec<usize>> = HashSet::new();
    let mut out = Vec::new();
    let mut cur = vec![v];
    grow(g, &mut cur, max_size, &mut seen, &mut out);
    out
}

fn grow(
    g: &Graph,
    cur: &mut Vec<usize>,
    max_size: usize,
    seen: &mut HashSet<Vec<usize>>,
    out: &mut Vec<Vec<usize>>,
) {
    if cur.len() == max_size {
        return;
    }
    // Frontier: neighbors of the current set, outside it.
    let mut frontier: Vec<usize> = cur
        .iter()
        .flat_map(|&u| g.neighbors(u).iter().map(|&w| w as usize))
        .filter(|w| !cur.contains(w))
        .collect();
    frontier.sort_unstable();
    frontier.dedup();
    for w in frontier {
        cur.push(w);
        let mut key = cur.clone();
        key.sort_unstable();
        if seen.insert(key.clone()) {
            if key.len() >= 3 {
                out.push(key);
            }
            grow(g, cur, max_size, seen, out);
        }
        cur.pop();
    }
}

fn degree_in(g: &Graph, v: usize, subset: &[usize]) -> usize {
    subset.iter().filter(|&&u| u != v && g.has_edge(v, u)).count()
}

fn edges_in(g: &Graph, subset: &[usize]) -> usize {
    let mut e = 0;
    for (i, &a) in subset.iter().enumerate() {
        for &b in &subset[i + 1..] {
            if g.has_edge(a, b) {
                e += 1;
            }
        }
    }
    e
}

fn orbit3(g: &Graph, v: usize, subset: &[usize]) -> usize {
    match edges_in(g, subset) {
        3 => 3,
        2 => {
            if degree_in(g, v, subset) == 2 {
                2
            } else {
                1
            }
        }
        e => unreachable!("connected 3-set with {e} edges"),
    }
}

fn orbit4(g: &Graph, v: usize, subset: &[usize]) -> usize {
    let e = edges_in(g, subset);
    let dv = degree_in(g, v, subset);
    let max_deg = subset.iter().map(|&u| degree_in(g, u, subset)).max().unwrap();
    match e {
        3 => {
            if max_deg == 3 {
                // Claw.
                if dv == 3 {
                    7
                } else {
                    6
                }
            } else {
                // Path.
                if dv == 2 {
                    5
                } else {
                    4
                }
            }
        }
        4 => {
            if max_deg == 2 {
                8 // 4-cycle
            } else {
                // Paw: pendant 9, triangle degree-2 nodes 10, hub 11.
                match dv {
                    1 => 9,
                    2 => 10,
                    _ => 11,
                }
            }
        }
        5 => {
            if dv == 2 {
                12
            } else {
                13
            }
        }
        6 => 14,
        e => unreachable!("connected 4-set with {e} edges"),
    }
}

/// K-means over log(1+count)-scaled GDVs.
pub fn structural_labels(
    g: &Graph,
    k_clusters: usize,
    seed: u64,
) -> Result<Labeling, MechanisticError> {
    let features: Vec<Vec<f64>> = gdv_all(g)
        .iter()
        .map(|counts| counts.iter().map(|&c| (1.0 + c as f64).ln()).collect())
        .collect();
    let assignment = kmeans_clamped(&features, k_clusters, seed)?;
    Ok(Labeling::from_labels(assignment))
}

/// Label-pipeline entry: clamps k to the number of distinct features, so
/// symmetric graphs (all features identical) yield one cluster rather than an
/// error.
fn kmeans_clamped(
    features: &[Vec<f64>],
    k: usize,
    seed: u64,
) -> Result<Vec<u32>, MechanisticError> {
    let distinct = count_distinct(features);
    kmeans(features, k.min(distinct).max(1), seed)
}

fn count_distinct(features: &[Vec<f64>]) -> usize {
    let mut sorted: Vec<&Vec<f64>> = features.iter().collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    sorted.dedup();
    sorted.len()
}

/// Lloyd's algorithm with farthest-point seeding.
pub fn kmeans(features: &[Vec<f64>], k: usize, seed: u64) -> Result<Vec<u32>, MechanisticError> {
    kmeans_capped(features, k, seed, 100)
}

/// K-means with an iteration cap (exposed so tests can check monotone
/// descent of the objective).
pub fn kmeans_capped(
    features: &[Vec<f64>],
    k: usize,
    seed: u64,
    max_iters: usize,
) -> Result<Vec<u32>, MechanisticError> {
    assert!(k >= 1, "k must be positive");
    let distinct = count_distinct(features);
    if k > distinct {
        return Err(MechanisticError::DegenerateK { k, distinct });
    }
    let n = features.len();
    let mut rng = rng::stream(seed, "kmeans");

    // Farthest-point seeding: random first center, then repeatedly the point
    // farthest from its nearest chosen center (smallest index on ties).
    let mut centers: Vec<Vec<f64>> = vec![features[rng.random_range(0..n)].clone()];
    while centers.len() < k {
        let mut best = (f64::NEG_INFINITY, 0);
        for (i, f) in features.iter().enumerate() {
            let d = centers.iter().map(|c| sq_dist(f, c)).fold(f64::INFINITY, f64::min);
            if d > best.0 {
                best = (d, i);
            }
        }
        centers.push(features[best.1].clone());
    }

    let mut assignment = vec![0u32; n];
    let mut last_objective = f64::INFINITY;
    for _ in 0..max_iters {
        let mut changed = false;
        let mut objective = 0.0;
        for (i, f) in features.iter().enumerate() {
            let mut best = (f64::INFINITY, 0u32);
            for (c, center) in centers.iter().enumerate() {
                let d = sq_dist(f, center);
                if d < best.0 {
                    best = (d, c as u32);
                }
            }
            objective += best.0;
            if assignment[i] != best.1 {
                assignment[i] = best.1;
                changed = true;
            }
        }
        debug_assert!(
            objective <= last_objective + 1e-9,
            "k-means objective increased: {last_objective} -> {objective}"
        );
        last_objective = objective;
        if !changed {
            break;
        }
        // Update step; empty clusters keep their previous center.
        let dim = features[0].len();
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (i, f) in features.iter().enumerate() {
            let c = assignment[i] as usize;
            counts[c] += 1;
            for (s, x) in sums[c].iter_mut().zip(f) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for (ctr, s) in centers[c].iter_mut().zip(&sums[c]) {
                    *ctr = s / counts[c] as f64;
                }
            }
        }
    }
    Ok(assignment)
}

/// Squared-Euclidean k-means objective of an assignment (centroids = class
/// means of the assignment itself).
pub fn kmeans_objective(features: &[Vec<f64>], assignment: &[u32]) -> f64 {
    let k = assignment.iter().copied().max().map_or(0, |m| m as usize + 1);
    let dim = features[0].len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (f, &a) in features.iter().zip(assignment) {
        counts[a as usize] += 1;
        for (s, x) in sums[a as usize].iter_mut().zip(f) {
            *s += x;
        }
    }
    for c in 0..k {
        if counts[c] > 0 {
            for s in &mut sums[c] {
                *s /= counts[c] as f64;
            }
        }
    }
    features.iter().zip(assignment).map(|(f, &a)| sq_dist(f, &sums[a as usize])).sum()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Assigns a distinct corpus sample to every node, uniformly without
/// replacement within each label class. Node labels map to topics by rank:
/// the i-th smallest node label draws from topic i.
pub fn assign_corpus_to_nodes(
    corpus: &[Sample],
    node_labels: &Labeling,
    seed: u64,
) -> Result<Vec<usize>, MechanisticError> {
    let mut distinct: Vec<u32> = node_labels.labels.clone();
    distinct.sort_unstable();
    distinct.dedup();

    let mut rng = rng::stream(seed, "node-assignment");
    let mut assignment = vec![usize::MAX; node_labels.len()];
    for (rank, &label) in distinct.iter().enumerate() {
        let nodes: Vec<usize> = (0..node_labels.len())
            .filter(|&i| node_labels.labels[i] == label)
            .collect();
        let mut pool: Vec<usize> = corpus
            .iter()
            .filter(|s| s.topic_label == rank as u32)
            .map(|s| s.id)
            .collect();
        if pool.len() < nodes.len() {
            return Err(MechanisticError::InsufficientSamples {
                label,
                needed: nodes.len(),
                available: pool.len(),
            });
        }
        for i in 0..nodes.len() {
            let j = rng.random_range(i..pool.len());
            pool.swap(i, j);
        }
        for (node, &sample_id) in nodes.iter().zip(&pool) {
            assignment[*node] = sample_id;
        }
    }
    Ok(assignment)
}

/// Writes GDVs as CSV: node index then the 15 orbit counts.
pub fn write_gdv_csv(path: &Path, gdvs: &[Gdv]) -> Result<(), MechanisticError> {
    let mut text = String::from(
        "node,o0,o1,o2,o3,o4,o5,o6,o7,o8,o9,o10,o11,o12,o13,o14\n",
    );
    for (node, counts) in gdvs.iter().enumerate() {
        text.push_str(&node.to_string());
        for c in counts {
            text.push(',');
            text.push_str(&c.to_string());
        }
        text.push('\n');
    }
    crate::fsutil::write_atomic(path, text.as_bytes())?;
    Ok(())
}
