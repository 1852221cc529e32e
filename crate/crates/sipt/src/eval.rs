//! Nearest-neighbor classification scores, macro AUROC, link-retrieval
//! metrics, and the report tying measured accuracy back to local
//! consistency.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{
    local_consistency, recovery_margin, DistanceName, Graph, GraphError, Labeling,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("k-NN needs a non-empty training set")]
    EmptyTrain,
    #[error("k={k} outside 1..={train} training points")]
    BadK { k: usize, train: usize },
    #[error("AUROC needs at least two classes present in the truth labels")]
    SingleClass,
    #[error("retrieval metrics need a graph with at least one edge")]
    NoEdges,
    #[error(transparent)]
    Graph(#[from] GraphError),
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Vote-fraction class scores of the k nearest training points under
/// euclidean distance; distance ties prefer the smaller training index.
pub fn knn_scores(
    train: &[Vec<f64>],
    labels: &Labeling,
    queries: &[Vec<f64>],
    k: usize,
) -> Result<Vec<Vec<f64>>, EvalError> {
    if train.is_empty() {
        return Err(EvalError::EmptyTrain);
    }
    if k < 1 || k > train.len() {
        return Err(EvalError::BadK { k, train: train.len() });
    }
    let num_classes = labels.num_classes as usize;
    let mut out = Vec::with_capacity(queries.len());
    for q in queries {
        let mut order: Vec<usize> = (0..train.len()).collect();
        let dists: Vec<f64> = train.iter().map(|t| euclidean(q, t)).collect();
        order.sort_by(|&a, &b| dists[a].partial_cmp(&dists[b]).unwrap().then(a.cmp(&b)));
        let mut scores = vec![0.0; num_classes];
        for &i in &order[..k] {
            scores[labels.labels[i] as usize] += 1.0 / k as f64;
        }
        out.push(scores);
    }
    Ok(out)
}

/// Leave-one-out k-NN scores: each point is classified by its k nearest
/// *other* points.
pub fn loo_knn_scores(
    embeddings: &[Vec<f64>],
    labels: &Labeling,
    k: usize,
) -> Result<Vec<Vec<f64>>, EvalError> {
    if embeddings.is_empty() {
        return Err(EvalError::EmptyTrain);
    }
    if k < 1 || k + 1 > embeddings.len() {
        return Err(EvalError::BadK { k, train: embeddings.len().saturating_sub(1) });
    }
    let num_classes = labels.num_classes as usize;
    let mut out = Vec::with_capacity(embeddings.len());
    for (qi, q) in embeddings.iter().enumerate() {
        let mut order: Vec<usize> = (0..embeddings.len()).filter(|&i| i != qi).collect();
        let dists: Vec<f64> = embeddings.iter().map(|t| euclidean(q, t)).collect();
        order.sort_by(|&a, &b| dists[a].partial_cmp(&dists[b]).unwrap().then(a.cmp(&b)));
        let mut scores = vec![0.0; num_classes];
        for &i in &order[..k] {
            scores[labels.labels[i] as usize] += 1.0 / k as f64;
        }
        out.push(scores);
    }
    Ok(out)
}

/// Argmax per row, smaller class index on ties.
pub fn predictions(scores: &[Vec<f64>]) -> Vec<u32> {
    scores.iter().map(|row| crate::corpus::argmax(row) as u32).collect()
}

pub fn accuracy(preds: &[u32], truth: &Labeling) -> f64 {
    let hits = preds.iter().zip(&truth.labels).filter(|(p, t)| p == t).count();
    hits as f64 / preds.len() as f64
}

/// One-vs-rest AUROC per class present in the truth, via the Mann-Whitney
/// rank formulation with midranks for ties, macro-averaged.
pub fn macro_auroc(scores: &[Vec<f64>], truth: &Labeling) -> Result<f64, EvalError> {
    let mut present: Vec<u32> = truth.labels.clone();
    present.sort_unstable();
    present.dedup();
    if present.len() < 2 {
        return Err(EvalError::SingleClass);
    }
    let n = scores.len();
    let mut total = 0.0;
    for &c in &present {
        let s: Vec<f64> = scores.iter().map(|row| row[c as usize]).collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| s[a].partial_cmp(&s[b]).unwrap());
        // Midranks: tied scores share the average of their 1-based ranks.
        let mut ranks = vec![0.0; n];
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j + 1 < n && s[order[j + 1]] == s[order[i]] {
                j += 1;
            }
            let mid = (i + j) as f64 / 2.0 + 1.0;
            for &idx in &order[i..=j] {
                ranks[idx] = mid;
            }
            i = j + 1;
        }
        let n_pos = truth.labels.iter().filter(|&&l| l == c).count() as f64;
        let n_neg = n as f64 - n_pos;
        let rank_sum: f64 = (0..n).filter(|&i| truth.labels[i] == c).map(|i| ranks[i]).sum();
        total += (rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);
    }
    Ok(total / present.len() as f64)
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub lrap: f64,
    pub ndcg: f64,
    pub ap: f64,
    pub mrr: f64,
    /// Nodes without neighbors, excluded from the averages.
    pub skipped_nodes: usize,
}

/// Ranks all other nodes by euclidean distance per node (ties by node
/// index); neighbors in `g` are the relevant items.
pub fn retrieval_metrics(embeddings: &[Vec<f64>], g: &Graph) -> Result<RetrievalReport, EvalError> {
    if g.num_edges() == 0 {
        return Err(EvalError::NoEdges);
    }
    let n = g.num_nodes();
    let mut sums = RetrievalReport { lrap: 0.0, ndcg: 0.0, ap: 0.0, mrr: 0.0, skipped_nodes: 0 };
    let mut included = 0usize;
    for v in 0..n {
        if g.degree(v) == 0 {
            sums.skipped_nodes += 1;
            continue;
        }
        let dists: Vec<f64> = embeddings.iter().map(|e| euclidean(&embeddings[v], e)).collect();
        let mut order: Vec<usize> = (0..n).filter(|&u| u != v).collect();
        order.sort_by(|&a, &b| dists[a].partial_cmp(&dists[b]).unwrap().then(a.cmp(&b)));
        let relevant: Vec<bool> = {
            let mut flags = vec![false; n];
            for &u in g.neighbors(v) {
                flags[u as usize] = true;
            }
            flags
        };
        let num_relevant = g.degree(v);

        // AP: precision accumulated while walking the ranking.
        let mut hits = 0usize;
        let mut ap = 0.0;
        let mut mrr = 0.0;
        let mut dcg = 0.0;
        for (pos, &u) in order.iter().enumerate() {
            let rank = pos + 1;
            if relevant[u] {
                hits += 1;
                ap += hits as f64 / rank as f64;
                if hits == 1 {
                    mrr = 1.0 / rank as f64;
                }
                dcg += 1.0 / ((rank + 1) as f64).log2();
            }
        }
        ap /= num_relevant as f64;

        // LRAP, per its own definition: for each relevant item, the
        // fraction of at-or-above-ranked items that are relevant.
        let ranks_of_relevant: Vec<usize> = order
            .iter()
            .enumerate()
            .filter(|(_, &u)| relevant[u])
            .map(|(pos, _)| pos + 1)
            .collect();
        let lrap: f64 = ranks_of_relevant
            .iter()
            .map(|&r| {
                let above = ranks_of_relevant.iter().filter(|&&s| s <= r).count();
                above as f64 / r as f64
            })
            .sum::<f64>()
            / num_relevant as f64;

        let ideal: f64 = (1..=num_relevant).map(|r| 1.0 / ((r + 1) as f64).log2()).sum();
        sums.lrap += lrap;
        sums.ap += ap;
        sums.mrr += mrr;
        sums.ndcg += dcg / ideal;
        included += 1;
    }
    let k = included as f64;
    Ok(RetrievalReport {
        lrap: sums.lrap / k,
        ndcg: sums.ndcg / k,
        ap: sums.ap / k,
        mrr: sums.mrr / k,
        skipped_nodes: sums.skipped_nodes,
    })
}

/// Everything the experiment harness reports per arm.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub lc: f64,
    pub knn_macro_auroc: f64,
    pub knn_accuracy: f64,
    pub margin: f64,
    pub best_radius: f64,
    pub edge_f1: f64,
    pub retrieval: RetrievalReport,
    pub k: usize,
    pub slack: f64,
    pub distance: DistanceName,
    pub margin_positive: bool,
    /// Some(accuracy >= lc - slack) when the margin is positive; the bound
    /// only applies to recoverable embeddings, so otherwise None.
    pub theorem_check: Option<bool>,
}

/// Assembles the full report: LC of the labeling, leave-one-out k-NN
/// accuracy and macro AUROC, recovery margin under `distance`, and the
/// retrieval metrics.
pub fn theory_report(
    g: &Graph,
    ft_labels: &Labeling,
    embeddings: &[Vec<f64>],
    k: usize,
    slack: f64,
    distance: DistanceName,
) -> Result<EvalReport, EvalError> {
    let lc = local_consistency(g, ft_labels)?;
    let scores = loo_knn_scores(embeddings, ft_labels, k)?;
    let knn_macro_auroc = macro_auroc(&scores, ft_labels)?;
    let knn_accuracy = accuracy(&predictions(&scores), ft_labels);
    let margin_report = recovery_margin(g, embeddings, distance)?;
    let retrieval = retrieval_metrics(embeddings, g)?;
    let margin_positive = margin_report.margin > 0.0;
    Ok(EvalReport {
        lc,
        knn_macro_auroc,
        knn_accuracy,
        margin: margin_report.margin,
        best_radius: margin_report.best_radius,
        edge_f1: margin_report.edge_f1,
        retrieval,
        k,
        slack,
        distance,
        margin_positive,
        theorem_check: if margin_positive { Some(knn_accuracy >= lc - slack) } else { None },
    })
}

/// Paired t statistic across seeds; None when fewer than 2 pairs or the
/// differences have zero variance.
pub fn paired_t(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let diffs: Vec<f64> = xs.iter().zip(ys).map(|(a, b)| a - b).collect();
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0);
    if var <= 0.0 {
        return None;
    }
    Some(mean / (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn knn_vote_fractions() {
        // Nearest three training labels (a, a, b) -> scores 2/3, 1/3.
        let train = vec![vec![0.0], vec![0.1], vec![0.2], vec![5.0]];
        let labels = Labeling::from_labels(vec![0, 0, 1, 1]);
        let scores = knn_scores(&train, &labels, &[vec![0.0]], 3).unwrap();
        assert_eq!(scores[0], vec![2.0 / 3.0, 1.0 / 3.0]);
    }

    #[test]
    fn knn_k1_is_one_hot() {
        let train = vec![vec![0.0], vec![1.0]];
        let labels = Labeling::from_labels(vec![1, 0]);
        let scores = knn_scores(&train, &labels, &[vec![0.2]], 1).unwrap();
        assert_eq!(scores[0], vec![0.0, 1.0]);
    }

    #[test]
    fn knn_coincident_query_ranks_its_twin_first() {
        let train = vec![vec![3.0, 4.0], vec![0.0, 0.0]];
        let labels = Labeling::from_labels(vec![1, 0]);
        let scores = knn_scores(&train, &labels, &[vec![3.0, 4.0]], 1).unwrap();
        assert_eq!(scores[0], vec![0.0, 1.0]);
    }

    #[test]
    fn knn_distance_ties_prefer_smaller_index() {
        let train = vec![vec![1.0], vec![-1.0], vec![-1.0]];
        let labels = Labeling::from_labels(vec![0, 1, 2]);
        let scores = knn_scores(&train, &labels, &[vec![0.0]], 1).unwrap();
        assert_eq!(scores[0], vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn knn_rows_sum_to_one() {
        let mut rng = crate::rng::stream(1, "knn-sum");
        let train: Vec<Vec<f64>> =
            (0..20).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let labels =
            Labeling::from_labels((0..20).map(|_| rng.random_range(0..4u32)).collect());
        let queries: Vec<Vec<f64>> =
            (0..10).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        for k in [1, 3, 7] {
            for row in knn_scores(&train, &labels, &queries, k).unwrap() {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn loo_excludes_self() {
        // Two tight pairs with opposite labels: LOO must classify each
        // point by its partner, not itself.
        let emb = vec![vec![0.0], vec![0.01], vec![5.0], vec![5.01]];
        let labels = Labeling::from_labels(vec![0, 0, 1, 1]);
        let scores = loo_knn_scores(&emb, &labels, 1).unwrap();
        assert_eq!(predictions(&scores), vec![0, 0, 1, 1]);
    }

    #[test]
    fn auroc_perfect_and_uninformative() {
        let truth = Labeling::from_labels(vec![0, 0, 1, 1]);
        let perfect = vec![
            vec![0.9, 0.1],
            vec![0.8, 0.2],
            vec![0.1, 0.9],
            vec![0.2, 0.8],
        ];
        assert_eq!(macro_auroc(&perfect, &truth).unwrap(), 1.0);
        let flat = vec![vec![0.5, 0.5]; 4];
        assert_eq!(macro_auroc(&flat, &truth).unwrap(), 0.5);
    }

    #[test]
    fn auroc_four_query_frozen_example() {
        // Scores for class + are (0.9, 0.8, 0.3, 0.4), truth (+,-,+,-):
        // pairwise wins 2 of 4 -> 0.5; symmetric for class -.
        let truth = Labeling::from_labels(vec![0, 1, 0, 1]);
        let scores = vec![
            vec![0.9, 0.1],
            vec![0.8, 0.2],
            vec![0.3, 0.7],
            vec![0.4, 0.6],
        ];
        assert!((macro_auroc(&scores, &truth).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn auroc_rejects_single_class() {
        let truth = Labeling::from_labels(vec![2, 2, 2]);
        let scores = vec![vec![0.1; 3]; 3];
        assert!(matches!(macro_auroc(&scores, &truth), Err(EvalError::SingleClass)));
    }

    /// Brute-force one-vs-rest AUROC by direct pairwise comparison.
    fn auroc_oracle(scores: &[Vec<f64>], truth: &Labeling) -> f64 {
        let mut present: Vec<u32> = truth.labels.clone();
        present.sort_unstable();
        present.dedup();
        let mut total = 0.0;
        for &c in &present {
            let pos: Vec<f64> = (0..scores.len())
                .filter(|&i| truth.labels[i] == c)
                .map(|i| scores[i][c as usize])
                .collect();
            let neg: Vec<f64> = (0..scores.len())
                .filter(|&i| truth.labels[i] != c)
                .map(|i| scores[i][c as usize])
                .collect();
            let mut wins = 0.0;
            for &p in &pos {
                for &q in &neg {
                    if p > q {
                        wins += 1.0;
                    } else if p == q {
                        wins += 0.5;
                    }
                }
            }
            total += wins / (pos.len() as f64 * neg.len() as f64);
        }
        total / present.len() as f64
    }

    #[test]
    fn auroc_matches_pairwise_oracle() {
        let mut rng = crate::rng::stream(2, "auroc-oracle");
        for trial in 0..50 {
            let n = rng.random_range(4..=30);
            let classes = rng.random_range(2..=4u32);
            let mut labels: Vec<u32> = (0..n).map(|i| i as u32 % classes).collect();
            // Guarantee at least two classes then shuffle in ties.
            labels[0] = 0;
            labels[1] = 1;
            let truth = Labeling::from_labels(labels);
            let scores: Vec<Vec<f64>> = (0..n)
                .map(|_| {
                    (0..classes)
                        .map(|_| (rng.random_range(0..5) as f64) / 4.0)
                        .collect()
                })
                .collect();
            let fast = macro_auroc(&scores, &truth).unwrap();
            let slow = auroc_oracle(&scores, &truth);
            assert!((fast - slow).abs() < 1e-9, "trial {trial}: {fast} vs {slow}");
        }
    }

    #[test]
    fn retrieval_perfect_ranking() {
        // Two tight pairs, edges within pairs.
        let g = Graph::from_edges(4, &[(0, 1), (2, 3)]).unwrap();
        let emb = vec![vec![0.0], vec![0.1], vec![10.0], vec![10.1]];
        let r = retrieval_metrics(&emb, &g).unwrap();
        assert_eq!(r.lrap, 1.0);
        assert_eq!(r.ndcg, 1.0);
        assert_eq!(r.ap, 1.0);
        assert_eq!(r.mrr, 1.0);
        assert_eq!(r.skipped_nodes, 0);
    }

    #[test]
    fn retrieval_neighbor_ranked_second() {
        // Nodes 0 and 1 are each other's single neighbor but a decoy sits
        // between them; contribution per node: mrr = ap = 1/2.
        let g = Graph::from_edges(4, &[(0, 1)]).unwrap();
        let emb = vec![vec![0.0], vec![1.0], vec![0.4], vec![9.0]];
        let r = retrieval_metrics(&emb, &g).unwrap();
        assert!((r.mrr - 0.5).abs() < 1e-12);
        assert!((r.ap - 0.5).abs() < 1e-12);
        assert_eq!(r.skipped_nodes, 2);
        let expected_ndcg = 1.0 / 3.0f64.log2();
        assert!((r.ndcg - expected_ndcg).abs() < 1e-12);
    }

    /// Independent implementation working from explicit rank lists.
    fn retrieval_oracle(embeddings: &[Vec<f64>], g: &Graph) -> RetrievalReport {
        let n = g.num_nodes();
        let mut reports = Vec::new();
        let mut skipped = 0;
        for v in 0..n {
            let nbrs: Vec<usize> = g.neighbors(v).iter().map(|&u| u as usize).collect();
            if nbrs.is_empty() {
                skipped += 1;
                continue;
            }
            let mut others: Vec<usize> = (0..n).filter(|&u| u != v).collect();
            others.sort_by(|&a, &b| {
                let da = euclidean(&embeddings[v], &embeddings[a]);
                let db = euclidean(&embeddings[v], &embeddings[b]);
                da.partial_cmp(&db).unwrap().then(a.cmp(&b))
            });
            let rank_of = |u: usize| others.iter().position(|&x| x == u).unwrap() + 1;
            let mut ranks: Vec<usize> = nbrs.iter().map(|&u| rank_of(u)).collect();
            ranks.sort_unstable();
            let ap: f64 = ranks
                .iter()
                .enumerate()
                .map(|(i, &r)| (i + 1) as f64 / r as f64)
                .sum::<f64>()
                / ranks.len() as f64;
            let mrr = 1.0 / ranks[0] as f64;
            let dcg: f64 = ranks.iter().map(|&r| 1.0 / ((r + 1) as f64).log2()).sum();
            let idcg: f64 = (1..=ranks.len()).map(|r| 1.0 / ((r + 1) as f64).log2()).sum();
            reports.push((ap, dcg / idcg, mrr));
        }
        let k = reports.len() as f64;
        RetrievalReport {
            lrap: reports.iter().map(|r| r.0).sum::<f64>() / k,
            ndcg: reports.iter().map(|r| r.1).sum::<f64>() / k,
            ap: reports.iter().map(|r| r.0).sum::<f64>() / k,
            mrr: reports.iter().map(|r| r.2).sum::<f64>() / k,
            skipped_nodes: skipped,
        }
    }

    #[test]
    fn retrieval_matches_oracle_on_random_instances() {
        let mut rng = crate::rng::stream(3, "retrieval-oracle");
        for trial in 0..40 {
            let n = 10;
            let mut edges = Vec::new();
            for a in 0..n as u32 {
                for b in (a + 1)..n as u32 {
                    if rng.random_range(0.0..1.0) < 0.3 {
                        edges.push((a, b));
                    }
                }
            }
            if edges.is_empty() {
                edges.push((0, 1));
            }
            let g = Graph::from_edges(n, &edges).unwrap();
            let emb: Vec<Vec<f64>> =
                (0..n).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let fast = retrieval_metrics(&emb, &g).unwrap();
            let slow = retrieval_oracle(&emb, &g);
            assert!((fast.lrap - slow.lrap).abs() < 1e-9, "trial {trial} lrap");
            assert!((fast.ndcg - slow.ndcg).abs() < 1e-9, "trial {trial} ndcg");
            assert!((fast.ap - slow.ap).abs() < 1e-9, "trial {trial} ap");
            assert!((fast.mrr - slow.mrr).abs() < 1e-9, "trial {trial} mrr");
            assert_eq!(fast.skipped_nodes, slow.skipped_nodes);
        }
    }

    #[test]
    fn retrieval_range_and_errors() {
        let empty = Graph::from_edges(3, &[]).unwrap();
        let emb = vec![vec![0.0]; 3];
        assert!(matches!(retrieval_metrics(&emb, &empty), Err(EvalError::NoEdges)));
    }

    #[test]
    fn theory_report_on_separated_cliques() {
        // Two cliques, labels matching: recoverable embeddings, LC = 1.
        let g = Graph::from_edges(6, &[(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)]).unwrap();
        let y = Labeling::from_labels(vec![0, 0, 0, 1, 1, 1]);
        let emb = vec![
            vec![0.0, 0.0],
            vec![0.1, 0.0],
            vec![0.0, 0.1],
            vec![5.0, 5.0],
            vec![5.1, 5.0],
            vec![5.0, 5.1],
        ];
        let report = theory_report(&g, &y, &emb, 2, 0.05, DistanceName::Euclidean).unwrap();
        assert_eq!(report.lc, 1.0);
        assert!(report.margin_positive);
        assert_eq!(report.theorem_check, Some(true));
        assert_eq!(report.knn_accuracy, 1.0);
        assert_eq!(report.lc, local_consistency(&g, &y).unwrap());
    }

    #[test]
    fn theory_check_disabled_without_positive_margin() {
        // Interleaved embeddings cannot recover the clique structure.
        let g = Graph::from_edges(4, &[(0, 1), (2, 3)]).unwrap();
        let y = Labeling::from_labels(vec![0, 0, 1, 1]);
        let emb = vec![vec![0.0], vec![2.0], vec![1.0], vec![3.0]];
        let report = theory_report(&g, &y, &emb, 1, 0.05, DistanceName::Euclidean).unwrap();
        assert!(!report.margin_positive);
        assert_eq!(report.theorem_check, None);
    }

    #[test]
    fn paired_t_basics() {
        assert!(paired_t(&[1.0], &[0.5]).is_none());
        assert!(paired_t(&[1.0, 1.0], &[0.5, 0.5]).is_none(), "zero variance");
        let t = paired_t(&[0.9, 0.8, 0.95], &[0.6, 0.65, 0.7]).unwrap();
        assert!(t > 0.0);
    }
}
