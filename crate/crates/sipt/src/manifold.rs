//! Triangulated surfaces, topic assignment, simplex sample placement, and
//! on-surface geodesics.
//!
//! Surfaces are pure combinatorics (vertex ids + triangle triples); metric
//! structure enters only when geodesics realize every triangle as a unit-side
//! equilateral triangle. Geodesics run Dijkstra over a waypoint graph built
//! from placed samples, triangle vertices, and edge midpoints, with
//! adjacent-triangle hops measured after unfolding the pair into a plane.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{self, CorpusError, Sample};
use crate::graph::{Graph, GraphError};
use crate::rng;

/// Side length of every realized triangle.
const EDGE_LEN: f64 = 1.0;
/// Height of a unit equilateral triangle.
const TRI_HEIGHT: f64 = 0.8660254037844386; // sqrt(3)/2

#[derive(Debug, Error)]
pub enum ManifoldError {
    #[error("resolution {resolution} too small for {topology:?}: need >= {min}")]
    ResolutionTooSmall { topology: Topology, resolution: usize, min: usize },
    #[error("topic assignment needs K >= 3, got {0}")]
    TooFewTopics(usize),
    #[error("no triangle-distinct topic assignment found within the backtracking budget")]
    InfeasibleColoring,
    #[error("surface has no topic assignment yet")]
    TopicsUnassigned,
    #[error("triangle {triangle} has no unplaced matching sample left (topic triple {triple:?})")]
    InsufficientDensity { triangle: usize, triple: [u32; 3] },
    #[error("radius must be positive")]
    NonPositiveRadius,
    #[error("placement references sample {0} outside the corpus")]
    UnknownSample(usize),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("surface io: {0}")]
    Io(#[from] std::io::Error),
    #[error("surface parse: {0}")]
    Parse(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    Plane,
    Moebius,
    Sphere,
    Torus,
}

/// A triangulated surface; topics may be unassigned.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimplicialSurface {
    pub topology: Topology,
    pub num_vertices: usize,
    pub triangles: Vec<[usize; 3]>,
    pub topic_of_vertex: Option<Vec<u32>>,
}

/// A corpus sample localized on a triangle.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PlacedSample {
    pub sample_id: usize,
    pub triangle: usize,
    pub barycentric: [f64; 3],
}

impl SimplicialSurface {
    /// Sorted list of distinct undirected edges.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut edges: Vec<(usize, usize)> = self
            .triangles
            .iter()
            .flat_map(|t| triangle_edges(t))
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges().len()
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.num_vertices as i64 - self.num_edges() as i64 + self.triangles.len() as i64
    }

    /// Map from each edge to the triangles containing it.
    pub fn edge_triangles(&self) -> BTreeMap<(usize, usize), Vec<usize>> {
        let mut map: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        for (t, tri) in self.triangles.iter().enumerate() {
            for e in triangle_edges(tri) {
                map.entry(e).or_default().push(t);
            }
        }
        map
    }

    /// The 1-skeleton as a graph (for coloring and degree bounds).
    pub fn skeleton(&self) -> Graph {
        let edges: Vec<(u32, u32)> =
            self.edges().iter().map(|&(u, v)| (u as u32, v as u32)).collect();
        Graph::from_edges(self.num_vertices, &edges).expect("surface edges are valid")
    }

    /// Sorted topic triple of a triangle's vertices.
    pub fn triangle_topic_triple(&self, t: usize) -> Result<[u32; 3], ManifoldError> {
        let topics = self.topic_of_vertex.as_ref().ok_or(ManifoldError::TopicsUnassigned)?;
        let tri = &self.triangles[t];
        let mut triple = [topics[tri[0]], topics[tri[1]], topics[tri[2]]];
        triple.sort_unstable();
        Ok(triple)
    }

    pub fn write_json(&self, path: &Path) -> Result<(), ManifoldError> {
        let text = serde_json::to_string(self)?;
        crate::fsutil::write_atomic(path, text.as_bytes())?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self, ManifoldError> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

fn triangle_edges(t: &[usize; 3]) -> [(usize, usize); 3] {
    let e = |a: usize, b: usize| (a.min(b), a.max(b));
    [e(t[0], t[1]), e(t[1], t[2]), e(t[0], t[2])]
}

/// Builds the tiling for a topology. Plane and torus triangulate a
/// resolution x resolution vertex grid (the torus with both wraparounds); the
/// Möbius band is a 2 x 2*resolution strip glued with a flip; the sphere is
/// an icosahedron subdivided (resolution - 1) times.
pub fn build_tiling(topology: Topology, resolution: usize) -> Result<SimplicialSurface, ManifoldError> {
    let min = match topology {
        Topology::Sphere => 1,
        Topology::Plane | Topology::Moebius => 2,
        // Below 3 the wrapped grid would identify distinct edges.
        Topology::Torus => 3,
    };
    if resolution < min {
        return Err(ManifoldError::ResolutionTooSmall { topology, resolution, min });
    }
    let surface = match topology {
        Topology::Plane => plane_grid(resolution),
        Topology::Torus => torus_grid(resolution),
        Topology::Moebius => moebius_strip(resolution),
        Topology::Sphere => sphere(resolution),
    };
    debug_assert!(surface
        .edge_triangles()
        .values()
        .all(|ts| ts.len() <= 2));
    Ok(surface)
}

fn plane_grid(r: usize) -> SimplicialSurface {
    let v = |i: usize, j: usize| i * r + j;
    let mut triangles = Vec::new();
    for i in 0..r - 1 {
        for j in 0..r - 1 {
            let (a, b, c, d) = (v(i, j), v(i, j + 1), v(i + 1, j), v(i + 1, j + 1));
            triangles.push([a, b, d]);
            triangles.push([a, d, c]);
        }
    }
    SimplicialSurface {
        topology: Topology::Plane,
        num_vertices: r * r,
        triangles,
        topic_of_vertex: None,
    }
}

fn torus_grid(r: usize) -> SimplicialSurface {
    let v = |i: usize, j: usize| (i % r) * r + (j % r);
    let mut triangles = Vec::new();
    for i in 0..r {
        for j in 0..r {
            let (a, b, c, d) = (v(i, j), v(i, j + 1), v(i + 1, j), v(i + 1, j + 1));
            triangles.push([a, b, d]);
            triangles.push([a, d, c]);
        }
    }
    SimplicialSurface {
        topology: Topology::Torus,
        num_vertices: r * r,
        triangles,
        topic_of_vertex: None,
    }
}

fn moebius_strip(resolution: usize) -> SimplicialSurface {
    // Two vertex rows, 2*resolution columns, right edge glued to the left
    // edge upside down.
    let cols = 2 * resolution;
    let v = |row: usize, col: usize| row * cols + col;
    let mut triangles = Vec::new();
    for c in 0..cols {
        let (a, c_) = (v(0, c), v(1, c));
        let (b, d) = if c + 1 < cols {
            (v(0, c + 1), v(1, c + 1))
        } else {
            (v(1, 0), v(0, 0))
        };
        triangles.push([a, b, d]);
        triangles.push([a, d, c_]);
    }
    SimplicialSurface {
        topology: Topology::Moebius,
        num_vertices: 2 * cols,
        triangles,
        topic_of_vertex: None,
    }
}

fn sphere(resolution: usize) -> SimplicialSurface {
    // Icosahedron connectivity: apex 0, upper ring 1-5, lower ring 6-10,
    // antipode 11.
    let mut triangles: Vec<[usize; 3]> = vec![
        [0, 1, 2], [0, 2, 3], [0, 3, 4], [0, 4, 5], [0, 5, 1],
        [1, 6, 2], [2, 7, 3], [3, 8, 4], [4, 9, 5], [5, 10, 1],
        [6, 7, 2], [7, 8, 3], [8, 9, 4], [9, 10, 5], [10, 6, 1],
        [6, 11, 7], [7, 11, 8], [8, 11, 9], [9, 11, 10], [10, 11, 6],
    ];
    let mut num_vertices = 12;
    for _ in 1..resolution {
        let mut midpoint: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        let mut mid = |a: usize, b: usize, n: &mut usize| {
            *midpoint.entry((a.min(b), a.max(b))).or_insert_with(|| {
                let id = *n;
                *n += 1;
                id
            })
        };
        let mut next = Vec::with_capacity(triangles.len() * 4);
        for [a, b, c] in triangles {
            let ab = mid(a, b, &mut num_vertices);
            let bc = mid(b, c, &mut num_vertices);
            let ac = mid(a, c, &mut num_vertices);
            next.push([a, ab, ac]);
            next.push([b, bc, ab]);
            next.push([c, ac, bc]);
            next.push([ab, bc, ac]);
        }
        triangles = next;
    }
    SimplicialSurface {
        topology: Topology::Sphere,
        num_vertices,
        triangles,
        topic_of_vertex: None,
    }
}

/// Budget of color-placement steps before assign_topics gives up.
const COLORING_BUDGET: usize = 1_000_000;

/// Assigns a topic to every vertex so each triangle sees 3 distinct topics.
///
/// Greedy in descending-degree order with backtracking; color preference
/// order is shuffled per vertex from the seed, so different seeds give
/// different (valid) assignments.
pub fn assign_topics(
    surface: &SimplicialSurface,
    num_topics: usize,
    seed: u64,
) -> Result<SimplicialSurface, ManifoldError> {
    if num_topics < 3 {
        return Err(ManifoldError::TooFewTopics(num_topics));
    }
    let skeleton = surface.skeleton();
    let n = surface.num_vertices;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&v| (std::cmp::Reverse(skeleton.degree(v)), v));

    let mut rng = rng::stream(seed, "topic-coloring");
    let preferences: Vec<Vec<u32>> = (0..n)
        .map(|_| {
            let mut colors: Vec<u32> = (0..num_topics as u32).collect();
            colors.shuffle(&mut rng);
            colors
        })
        .collect();

    let mut assignment: Vec<Option<u32>> = vec![None; n];
    let mut budget = COLORING_BUDGET;
    if !color_vertex(0, &order, &skeleton, &preferences, &mut assignment, &mut budget) {
        return Err(ManifoldError::InfeasibleColoring);
    }
    let topics: Vec<u32> = assignment.into_iter().map(|c| c.unwrap()).collect();
    let mut out = surface.clone();
    out.topic_of_vertex = Some(topics);
    debug_assert!(out
        .triangles
        .iter()
        .enumerate()
        .all(|(t, _)| {
            let triple = out.triangle_topic_triple(t).unwrap();
            triple[0] != triple[1] && triple[1] != triple[2]
        }));
    Ok(out)
}

fn color_vertex(
    pos: usize,
    order: &[usize],
    skeleton: &Graph,
    preferences: &[Vec<u32>],
    assignment: &mut Vec<Option<u32>>,
    budget: &mut usize,
) -> bool {
    if pos == order.len() {
        return true;
    }
    let v = order[pos];
    for &color in &preferences[v] {
        if *budget == 0 {
            return false;
        }
        *budget -= 1;
        let clash = skeleton
            .neighbors(v)
            .iter()
            .any(|&u| assignment[u as usize] == Some(color));
        if clash {
            continue;
        }
        assignment[v] = Some(color);
        if color_vertex(pos + 1, order, skeleton, preferences, assignment, budget) {
            return true;
        }
        assignment[v] = None;
    }
    false
}

/// Places `per_triangle_quota` samples on every triangle: the entropy bin is
/// drawn uniformly among bins that still have matching samples, then a sample
/// uniformly within the bin. Each sample is placed at most once. The result
/// is sorted by sample id, which is also the node order of downstream graphs.
pub fn localize_samples(
    surface: &SimplicialSurface,
    corpus: &[Sample],
    per_triangle_quota: usize,
    n_entropy_bins: usize,
    seed: u64,
) -> Result<Vec<PlacedSample>, ManifoldError> {
    if surface.topic_of_vertex.is_none() {
        return Err(ManifoldError::TopicsUnassigned);
    }
    // Pools: topic triple -> entropy bin -> sample indices (corpus order).
    let mut pools: BTreeMap<[u32; 3], BTreeMap<usize, Vec<usize>>> = BTreeMap::new();
    for (i, s) in corpus.iter().enumerate() {
        match corpus::top3_simplex_coords(s) {
            Ok((idxs, coords)) => {
                let mut triple = [idxs[0] as u32, idxs[1] as u32, idxs[2] as u32];
                triple.sort_unstable();
                let bin = corpus::entropy_bin_of_coords(&coords, n_entropy_bins)?;
                pools.entry(triple).or_default().entry(bin).or_default().push(i);
            }
            // Samples concentrated on fewer than 3 topics match no triangle.
            Err(CorpusError::DegenerateMixture) => {}
            Err(e) => return Err(e.into()),
        }
    }

    let mut rng = rng::stream(seed, "localize");
    let mut placements = Vec::with_capacity(surface.triangles.len() * per_triangle_quota);
    for t in 0..surface.triangles.len() {
        let triple = surface.triangle_topic_triple(t)?;
        for _ in 0..per_triangle_quota {
            let Some(bins) = pools.get_mut(&triple) else {
                return Err(ManifoldError::InsufficientDensity { triangle: t, triple });
            };
            bins.retain(|_, v| !v.is_empty());
            if bins.is_empty() {
                return Err(ManifoldError::InsufficientDensity { triangle: t, triple });
            }
            let bin_keys: Vec<usize> = bins.keys().copied().collect();
            let bin = bin_keys[rng.random_range(0..bin_keys.len())];
            let pool = bins.get_mut(&bin).unwrap();
            let sample_idx = pool.remove(rng.random_range(0..pool.len()));
            let sample = &corpus[sample_idx];
            placements.push(place_sample(surface, t, sample)?);
        }
    }
    placements.sort_by_key(|p| p.sample_id);
    Ok(placements)
}

/// Aligns a sample's renormalized top-3 coords to a triangle's vertex order.
fn place_sample(
    surface: &SimplicialSurface,
    t: usize,
    sample: &Sample,
) -> Result<PlacedSample, ManifoldError> {
    let topics = surface.topic_of_vertex.as_ref().ok_or(ManifoldError::TopicsUnassigned)?;
    let (idxs, coords) = corpus::top3_simplex_coords(sample)?;
    let tri = &surface.triangles[t];
    let mut barycentric = [0.0; 3];
    for p in 0..3 {
        let topic = topics[tri[p]] as usize;
        let pos = idxs
            .iter()
            .position(|&i| i == topic)
            .expect("sample triple must match the triangle triple");
        barycentric[p] = coords[pos];
    }
    Ok(PlacedSample { sample_id: sample.id, triangle: t, barycentric })
}

pub fn write_placements(path: &Path, placements: &[PlacedSample]) -> Result<(), ManifoldError> {
    let mut buf = Vec::new();
    for p in placements {
        serde_json::to_writer(&mut buf, p)?;
        buf.push(b'\n');
    }
    crate::fsutil::write_atomic(path, &buf)?;
    Ok(())
}

pub fn read_placements(path: &Path) -> Result<Vec<PlacedSample>, ManifoldError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

/// Precomputed waypoint graph for geodesic queries.
///
/// Waypoints are all triangle vertices, all edge midpoints, and all placed
/// samples. Two waypoints are connected iff they lie in a common triangle
/// (straight-line distance in its realization) or in edge-adjacent triangles
/// (straight-line distance after unfolding the pair into a common plane).
pub struct GeodesicIndex {
    num_placements: usize,
    /// Waypoint adjacency: (neighbor, weight).
    adjacency: Vec<Vec<(u32, f64)>>,
    /// Waypoint id of each placement.
    placement_waypoint: Vec<usize>,
}

/// 2D positions of a triangle's three vertex slots in its realization.
const SLOT_POS: [[f64; 2]; 3] = [[0.0, 0.0], [EDGE_LEN, 0.0], [EDGE_LEN / 2.0, TRI_HEIGHT]];

impl GeodesicIndex {
    pub fn new(surface: &SimplicialSurface, placements: &[PlacedSample]) -> Self {
        let edges = surface.edges();
        let edge_id: BTreeMap<(usize, usize), usize> =
            edges.iter().enumerate().map(|(i, &e)| (e, i)).collect();
        let nv = surface.num_vertices;
        let ne = edges.len();
        let num_waypoints = nv + ne + placements.len();

        // Members of each triangle: (waypoint id, barycentric coords).
        let mut members: Vec<Vec<(usize, [f64; 3])>> = vec![Vec::new(); surface.triangles.len()];
        for (t, tri) in surface.triangles.iter().enumerate() {
            for (slot, &v) in tri.iter().enumerate() {
                let mut b = [0.0; 3];
                b[slot] = 1.0;
                members[t].push((v, b));
            }
            let pairs = [(0, 1), (1, 2), (0, 2)];
            for &(i, j) in &pairs {
                let e = (tri[i].min(tri[j]), tri[i].max(tri[j]));
                let mut b = [0.0; 3];
                b[i] = 0.5;
                b[j] = 0.5;
                members[t].push((nv + edge_id[&e], b));
            }
        }
        let mut placement_waypoint = Vec::with_capacity(placements.len());
        for (p, placed) in placements.iter().enumerate() {
            let id = nv + ne + p;
            placement_waypoint.push(id);
            members[placed.triangle].push((id, placed.barycentric));
        }

        let mut adjacency: Vec<Vec<(u32, f64)>> = vec![Vec::new(); num_waypoints];
        let connect = |adj: &mut Vec<Vec<(u32, f64)>>, a: usize, b: usize, w: f64| {
            adj[a].push((b as u32, w));
            adj[b].push((a as u32, w));
        };

        // Same-triangle hops.
        for tri_members in &members {
            for (i, &(a, ba)) in tri_members.iter().enumerate() {
                let pa = realize(&ba);
                for &(b, bb) in &tri_members[i + 1..] {
                    let pb = realize(&bb);
                    connect(&mut adjacency, a, b, dist2d(pa, pb));
                }
            }
        }

        // Adjacent-triangle hops through each interior edge.
        for (&(u, v), tris) in surface.edge_triangles().iter() {
            if tris.len() != 2 {
                continue;
            }
            let (t1, t2) = (tris[0], tris[1]);
            // Positions of t2's vertices in t1's frame: shared vertices keep
            // their t1 slots, the opposite vertex reflects across the edge.
            let tri1 = &surface.triangles[t1];
            let tri2 = &surface.triangles[t2];
            let slot_of = |tri: &[usize; 3], x: usize| tri.iter().position(|&y| y == x).unwrap();
            let pu = SLOT_POS[slot_of(tri1, u)];
            let pv = SLOT_POS[slot_of(tri1, v)];
            let w1 = tri1.iter().copied().find(|&x| x != u && x != v).unwrap();
            let pw1 = SLOT_POS[slot_of(tri1, w1)];
            let pw2 = reflect(pw1, pu, pv);
            let pos_in_t1 = |x: usize| -> [f64; 2] {
                if x == u {
                    pu
                } else if x == v {
                    pv
                } else {
                    pw2
                }
            };
            let unfolded: [[f64; 2]; 3] =
                [pos_in_t1(tri2[0]), pos_in_t1(tri2[1]), pos_in_t1(tri2[2])];
            for &(a, ba) in &members[t1] {
                let pa = realize(&ba);
                for &(b, bb) in &members[t2] {
                    if a == b {
                        continue;
                    }
                    let pb = combine(&unfolded, &bb);
                    connect(&mut adjacency, a, b, dist2d(pa, pb));
                }
            }
        }

        GeodesicIndex { num_placements: placements.len(), adjacency, placement_waypoint }
    }

    pub fn num_placements(&self) -> usize {
        self.num_placements
    }

    /// Geodesic distance between two placements (by placement index).
    pub fn distance(&self, a: usize, b: usize) -> f64 {
        if a == b {
            return 0.0;
        }
        let target = self.placement_waypoint[b];
        self.dijkstra(self.placement_waypoint[a], Some(target))[target]
    }

    /// Full placement-to-placement distance matrix.
    pub fn all_placement_distances(&self) -> Vec<Vec<f64>> {
        (0..self.num_placements)
            .map(|p| {
                let dist = self.dijkstra(self.placement_waypoint[p], None);
                self.placement_waypoint.iter().map(|&w| dist[w]).collect()
            })
            .collect()
    }

    fn dijkstra(&self, source: usize, target: Option<usize>) -> Vec<f64> {
        #[derive(PartialEq)]
        struct Entry(f64, u32);
        impl Eq for Entry {}
        impl PartialOrd for Entry {
            fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
                Some(self.cmp(other))
            }
        }
        impl Ord for Entry {
            fn cmp(&self, other: &Self) -> Ordering {
                // Reverse on distance: BinaryHeap is a max-heap.
                other.0.partial_cmp(&self.0).expect("distances are not NaN")
            }
        }

        let mut dist = vec![f64::INFINITY; self.adjacency.len()];
        let mut heap = std::collections::BinaryHeap::new();
        dist[source] = 0.0;
        heap.push(Entry(0.0, source as u32));
        while let Some(Entry(d, u)) = heap.pop() {
            let u = u as usize;
            if d > dist[u] {
                continue;
            }
            if target == Some(u) {
                break;
            }
            for &(v, w) in &self.adjacency[u] {
                let nd = d + w;
                if nd < dist[v as usize] {
                    dist[v as usize] = nd;
                    heap.push(Entry(nd, v));
                }
            }
        }
        dist
    }
}

fn realize(b: &[f64; 3]) -> [f64; 2] {
    combine(&SLOT_POS, b)
}

fn combine(pos: &[[f64; 2]; 3], b: &[f64; 3]) -> [f64; 2] {
    [
        b[0] * pos[0][0] + b[1] * pos[1][0] + b[2] * pos[2][0],
        b[0] * pos[0][1] + b[1] * pos[1][1] + b[2] * pos[2][1],
    ]
}

fn dist2d(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Reflects point p across the line through a and b.
fn reflect(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    let dx = b[0] - a[0];
    let dy = b[1] - a[1];
    let len2 = dx * dx + dy * dy;
    let t = ((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2;
    let foot = [a[0] + t * dx, a[1] + t * dy];
    [2.0 * foot[0] - p[0], 2.0 * foot[1] - p[1]]
}

/// Geodesic distance between two placed samples (builds a fresh index; use
/// [`GeodesicIndex`] directly for many queries).
pub fn geodesic_distance(
    surface: &SimplicialSurface,
    placements: &[PlacedSample],
    a: usize,
    b: usize,
) -> f64 {
    GeodesicIndex::new(surface, placements).distance(a, b)
}

/// Radius-NN graph over placements: edge iff geodesic distance < r. Node i
/// is placements[i] (placements are sorted by sample id, so node order is the
/// dense sample-id remapping).
pub fn manifold_rnn_graph(
    surface: &SimplicialSurface,
    placements: &[PlacedSample],
    r: f64,
) -> Result<Graph, ManifoldError> {
    if r <= 0.0 {
        return Err(ManifoldError::NonPositiveRadius);
    }
    let dists = GeodesicIndex::new(surface, placements).all_placement_distances();
    graph_from_distances(&dists, r)
}

/// Thresholds a precomputed distance matrix into a graph.
pub fn graph_from_distances(dists: &[Vec<f64>], r: f64) -> Result<Graph, ManifoldError> {
    if r <= 0.0 {
        return Err(ManifoldError::NonPositiveRadius);
    }
    let n = dists.len();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if dists[i][j] < r {
                edges.push((i as u32, j as u32));
            }
        }
    }
    Ok(Graph::from_edges(n, &edges)?)
}

/// Radius whose strict-< rule gives a median node degree near `target`:
/// the median over nodes of the target-th nearest-neighbor distance, nudged
/// up so the median node itself reaches the target.
pub fn radius_for_target_degree(dists: &[Vec<f64>], target: usize) -> f64 {
    let n = dists.len();
    assert!(target >= 1 && target < n, "target degree must be in [1, n)");
    let mut kth: Vec<f64> = (0..n)
        .map(|i| {
            let mut row: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| dists[i][j]).collect();
            row.sort_by(|a, b| a.partial_cmp(b).unwrap());
            row[target - 1]
        })
        .collect();
    kth.sort_by(|a, b| a.partial_cmp(b).unwrap());
    kth[(n - 1) / 2] * (1.0 + 1e-9)
}
