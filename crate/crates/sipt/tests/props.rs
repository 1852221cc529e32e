//! Randomized checks of the library's documented invariants. The unit tests
//! pin behavior on hand-checked examples; these properties assert the same
//! contracts over generated instances.

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

use sipt::corpus::{
    entropy_bin_of_coords, generate_topic_model, sample_corpus, top3_simplex_coords,
};
use sipt::graph::{
    add_edge_noise, clique_lc_prediction, local_consistency, radius_nn_graph, recovery_margin,
    DistanceName, Graph, Labeling, RecoveryCriterion,
};
use sipt::losses::{ContrastiveParams, SiLossKind};
use sipt::manifold::{assign_topics, build_tiling, localize_samples, Topology};
use sipt::rng;
use sipt::train::exhaustive_si_loss;

fn random_graph(n: usize, edges_in_1000: u32, seed: u64) -> Graph {
    let mut r = rng::stream(seed, "props-graph");
    let mut edges = Vec::new();
    for u in 0..n as u32 {
        for v in (u + 1)..n as u32 {
            if r.random_range(0..1000) < edges_in_1000 {
                edges.push((u, v));
            }
        }
    }
    Graph::from_edges(n, &edges).unwrap()
}

fn random_labels(n: usize, num_classes: u32, seed: u64) -> Vec<u32> {
    let mut r = rng::stream(seed, "props-labels");
    (0..n).map(|_| r.random_range(0..num_classes)).collect()
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    /// Local consistency only compares label counts, so renaming the class
    /// ids through any bijection must not change it at all.
    #[test]
    fn lc_is_invariant_under_class_relabeling(
        n in 2usize..40,
        density in 50u32..900,
        num_classes in 2u32..6,
        seed in any::<u64>(),
    ) {
        let g = random_graph(n, density, seed);
        prop_assume!(g.num_edges() > 0);
        let labels = random_labels(n, num_classes, seed);
        let y = Labeling::new(labels.clone(), num_classes).unwrap();
        let base = local_consistency(&g, &y).unwrap();

        let mut bijection: Vec<u32> = (0..num_classes).collect();
        bijection.shuffle(&mut rng::stream(seed, "props-relabel"));
        let renamed: Vec<u32> = labels.iter().map(|&l| bijection[l as usize]).collect();
        let y2 = Labeling::new(renamed, num_classes).unwrap();
        prop_assert_eq!(base, local_consistency(&g, &y2).unwrap());
    }

    /// Renumbering the nodes (and carrying the labels along) permutes the
    /// per-node consistency bits without changing their mean.
    #[test]
    fn lc_is_invariant_under_node_permutation(
        n in 2usize..40,
        density in 50u32..900,
        num_classes in 2u32..6,
        seed in any::<u64>(),
    ) {
        let g = random_graph(n, density, seed);
        prop_assume!(g.num_edges() > 0);
        let labels = random_labels(n, num_classes, seed);
        let y = Labeling::new(labels.clone(), num_classes).unwrap();
        let base = local_consistency(&g, &y).unwrap();

        let mut sigma: Vec<usize> = (0..n).collect();
        sigma.shuffle(&mut rng::stream(seed, "props-sigma"));
        let mapped: Vec<(u32, u32)> = g
            .edges()
            .iter()
            .map(|&(u, v)| (sigma[u as usize] as u32, sigma[v as usize] as u32))
            .collect();
        let g2 = Graph::from_edges(n, &mapped).unwrap();
        let mut moved = vec![0u32; n];
        for v in 0..n {
            moved[sigma[v]] = labels[v];
        }
        let y2 = Labeling::new(moved, num_classes).unwrap();
        prop_assert_eq!(base, local_consistency(&g2, &y2).unwrap());
    }

    /// Edge noise only ever adds: the output contains every input edge plus
    /// exactly ceil(rate * |E|) new ones, the same seed reproduces the same
    /// graph, and a request beyond the available non-edges is refused.
    #[test]
    fn noise_is_a_monotone_superset_with_exact_count(
        n in 2usize..30,
        density in 0u32..1000,
        rate_in_100 in 0u32..=100,
        seed in any::<u64>(),
    ) {
        let g = random_graph(n, density, seed);
        let rate = rate_in_100 as f64 / 100.0;
        let requested = (rate * g.num_edges() as f64).ceil() as usize;
        let available = n * (n - 1) / 2 - g.num_edges();
        match add_edge_noise(&g, rate, seed) {
            Ok(noised) => {
                prop_assert!(requested <= available);
                for &(u, v) in g.edges() {
                    prop_assert!(noised.has_edge(u as usize, v as usize));
                }
                prop_assert_eq!(noised.num_edges(), g.num_edges() + requested);
                let again = add_edge_noise(&g, rate, seed).unwrap();
                prop_assert_eq!(noised.edges(), again.edges());
            }
            Err(_) => prop_assert!(requested > available),
        }
    }

    /// The contrastive loss over an exhaustive batch is exactly zero iff
    /// every edge sits within mu_plus and every non-edge at least mu_minus
    /// apart -- the recoverability condition itself.
    #[test]
    fn contrastive_loss_is_zero_iff_margins_are_met(
        n in 2usize..10,
        density in 100u32..900,
        dim in 1usize..4,
        spread_in_10 in 1u32..=15,
        seed in any::<u64>(),
    ) {
        let g = random_graph(n, density, seed);
        prop_assume!(g.num_edges() > 0);
        let p = ContrastiveParams::default();
        let mut r = rng::stream(seed, "props-embed");
        let spread = spread_in_10 as f64 / 10.0;
        let z: Vec<Vec<f64>> =
            (0..n).map(|_| (0..dim).map(|_| r.random::<f64>() * spread).collect()).collect();

        let loss = exhaustive_si_loss(&z, &g, &SiLossKind::Contrastive(p)).unwrap();
        prop_assert!(loss >= 0.0);
        let mut margins_met = true;
        for u in 0..n {
            for v in (u + 1)..n {
                let d = euclidean(&z[u], &z[v]);
                if g.has_edge(u, v) {
                    margins_met &= d <= p.mu_plus;
                } else {
                    margins_met &= d >= p.mu_minus;
                }
            }
        }
        prop_assert_eq!(loss == 0.0, margins_met);
    }

    /// Whenever the margin is positive, rebuilding the radius graph at the
    /// reported radius reproduces the original edge set exactly.
    #[test]
    fn positive_margin_radius_reproduces_the_graph(
        n in 2usize..15,
        dim in 1usize..4,
        radius_in_100 in 10u32..200,
        seed in any::<u64>(),
    ) {
        let mut r = rng::stream(seed, "props-points");
        let points: Vec<Vec<f64>> =
            (0..n).map(|_| (0..dim).map(|_| r.random::<f64>() * 2.0).collect()).collect();
        let radius = radius_in_100 as f64 / 100.0;
        let g = radius_nn_graph(
            &points,
            &RecoveryCriterion { distance: DistanceName::Euclidean, radius, loss_threshold: 0.0 },
        )
        .unwrap();
        prop_assume!(g.num_edges() > 0 && g.num_edges() < n * (n - 1) / 2);
        let report = recovery_margin(&g, &points, DistanceName::Euclidean).unwrap();
        prop_assume!(report.margin > 0.0);
        prop_assert_eq!(report.edge_f1, 1.0);
        let rebuilt = radius_nn_graph(
            &points,
            &RecoveryCriterion {
                distance: DistanceName::Euclidean,
                radius: report.best_radius,
                loss_threshold: 0.0,
            },
        )
        .unwrap();
        prop_assert_eq!(rebuilt.edges(), g.edges());
    }

    /// On disjoint cliques whose per-clique majorities lead every other
    /// label by at least two, the closed-form prediction equals the measured
    /// local consistency bit for bit.
    #[test]
    fn clique_closed_form_matches_measured_lc(seed in any::<u64>()) {
        let mut r = rng::stream(seed, "props-cliques");
        let num_cliques = r.random_range(2..=5);
        let mut assignment: Vec<u32> = Vec::new();
        let mut labels: Vec<u32> = Vec::new();
        let mut edges: Vec<(u32, u32)> = Vec::new();
        for c in 0..num_cliques {
            let size = r.random_range(2usize..=12);
            let clique_labels = loop {
                let candidate: Vec<u32> = (0..size).map(|_| r.random_range(0..4)).collect();
                let mut counts = [0usize; 4];
                for &l in &candidate {
                    counts[l as usize] += 1;
                }
                let mut sorted = counts;
                sorted.sort_unstable_by(|a, b| b.cmp(a));
                if sorted[0] >= sorted[1] + 2 {
                    break candidate;
                }
            };
            let base = assignment.len() as u32;
            for i in 0..size as u32 {
                for j in (i + 1)..size as u32 {
                    edges.push((base + i, base + j));
                }
            }
            assignment.extend(std::iter::repeat(c as u32).take(size));
            labels.extend(clique_labels);
        }
        let g = Graph::from_edges(assignment.len(), &edges).unwrap();
        let y = Labeling::new(labels, 4).unwrap();
        prop_assert_eq!(
            local_consistency(&g, &y).unwrap(),
            clique_lc_prediction(&assignment, &y).unwrap()
        );
    }
}

/// Entropy-uniform localization draws bins uniformly among the non-empty
/// pools, so over a large placed corpus the realized bin histogram stays
/// within 0.1 total-variation distance of uniform.
#[test]
fn entropy_bins_stay_near_uniform_at_scale() {
    let n_bins = 3;
    let tiling = build_tiling(Topology::Plane, 11).unwrap();
    let colored = assign_topics(&tiling, 12, 0).unwrap();
    let mut model = generate_topic_model(12, 48, 0.2, 0).unwrap();
    // Spiky mixtures populate all three entropy bins; flatter ones would
    // leave the low-entropy pools empty and the draw nothing to equalize.
    model.mixture_concentration = 0.08;
    let samples = sample_corpus(&model, 30_000, 8, 0).unwrap();
    let placed = localize_samples(&colored, &samples, 10, n_bins, 0).unwrap();
    assert!(placed.len() >= 2000, "need at least 2000 placements, got {}", placed.len());

    let mut counts = vec![0usize; n_bins];
    for p in &placed {
        let (_, coords) = top3_simplex_coords(&samples[p.sample_id]).unwrap();
        counts[entropy_bin_of_coords(&coords, n_bins).unwrap()] += 1;
    }
    let total = placed.len() as f64;
    let tv: f64 = counts
        .iter()
        .map(|&c| (c as f64 / total - 1.0 / n_bins as f64).abs())
        .sum::<f64>()
        / 2.0;
    assert!(tv <= 0.1, "bin histogram {counts:?} is {tv:.3} from uniform in total variation");
}
