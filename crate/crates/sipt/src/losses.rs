//! Training objectives: masked-token cross-entropy, the two
//! structure-inducing losses, their combination, and graph-aware batch
//! sampling with positive/negative mappings.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::{BatchEncoding, BoundEncoder, EncoderError, EncoderParameters};
use crate::graph::{connected_components, DistanceName, Graph};
use crate::rng;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("bad loss parameters: {0}")]
    BadParams(String),
    #[error("masked loss needs at least one masked position")]
    EmptyMask,
    #[error("mask position {pos} out of range for sequence of length {len}")]
    MaskOutOfRange { pos: usize, len: usize },
    #[error("no node has both a neighbor and an admissible non-neighbor")]
    NoAdmissibleAnchor,
    #[error("batch anchor/positive/negative lists have mismatched lengths")]
    RaggedBatch,
    #[error("loss input is not finite")]
    NonFinite,
    #[error(transparent)]
    Encoder(#[from] EncoderError),
}

pub const DEFAULT_MASK_FRACTION: f64 = 0.15;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiSimilarityParams {
    pub w_plus: f64,
    pub w_minus: f64,
    pub threshold: f64,
}

impl Default for MultiSimilarityParams {
    fn default() -> Self {
        MultiSimilarityParams { w_plus: 2.0, w_minus: 40.0, threshold: 0.5 }
    }
}

impl MultiSimilarityParams {
    fn validate(&self) -> Result<(), LossError> {
        if self.w_plus > 0.0 && self.w_minus > 0.0 && self.threshold.is_finite() {
            Ok(())
        } else {
            Err(LossError::BadParams("w_plus and w_minus must be positive".into()))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveParams {
    pub mu_plus: f64,
    pub mu_minus: f64,
}

impl Default for ContrastiveParams {
    fn default() -> Self {
        ContrastiveParams { mu_plus: 0.1, mu_minus: 1.0 }
    }
}

impl ContrastiveParams {
    fn validate(&self) -> Result<(), LossError> {
        if 0.0 <= self.mu_plus && self.mu_plus < self.mu_minus {
            Ok(())
        } else {
            Err(LossError::BadParams("need mu_minus > mu_plus >= 0".into()))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum SiLossKind {
    Contrastive(ContrastiveParams),
    MultiSim(MultiSimilarityParams),
}

impl SiLossKind {
    /// The distance under which a trained embedding should recover the
    /// graph: contrastive optimizes euclidean distances, multi-similarity
    /// inner products.
    pub fn recovery_distance(&self) -> DistanceName {
        match self {
            SiLossKind::Contrastive(_) => DistanceName::Euclidean,
            SiLossKind::MultiSim(_) => DistanceName::NegativeInnerProduct,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_si: f64,
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), LossError> {
        if self.lambda_si > 0.0 && self.lambda_si < 1.0 {
            Ok(())
        } else {
            Err(LossError::BadParams(format!(
                "lambda_si must lie strictly between 0 and 1, got {}",
                self.lambda_si
            )))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NegStrategy {
    UniformNonneighbor,
    SameComponent,
}

/// A sampled batch of anchors with their positive/negative images, plus the
/// edge and non-edge pair lists induced among all distinct batch members.
/// Pair lists and the *_idx arrays index into `members`.
#[derive(Clone, Debug)]
pub struct SiBatch {
    pub anchors: Vec<u32>,
    pub positives: Vec<u32>,
    pub negatives: Vec<u32>,
    /// Sorted distinct node ids appearing anywhere in the batch.
    pub members: Vec<u32>,
    pub anchor_idx: Vec<usize>,
    pub pos_idx: Vec<usize>,
    pub neg_idx: Vec<usize>,
    pub edge_pairs: Vec<(usize, usize)>,
    pub nonedge_pairs: Vec<(usize, usize)>,
}

impl SiBatch {
    pub fn num_anchors(&self) -> usize {
        self.anchors.len()
    }
}

/// Draws anchors uniformly among nodes that have at least one neighbor and
/// one admissible non-neighbor, then one positive (uniform neighbor) and one
/// negative (uniform admissible non-neighbor) per anchor. If fewer than
/// `anchor_count` nodes qualify, the batch holds all of them.
pub fn sample_si_batch(
    g: &Graph,
    anchor_count: usize,
    strategy: NegStrategy,
    seed: u64,
) -> Result<SiBatch, LossError> {
    assert!(anchor_count >= 1, "anchor_count must be positive");
    let n = g.num_nodes();
    let comp = match strategy {
        NegStrategy::SameComponent => Some(connected_components(g)),
        NegStrategy::UniformNonneighbor => None,
    };
    let comp_size: Vec<usize> = comp.as_ref().map_or_else(Vec::new, |c| {
        let mut sizes = vec![0usize; c.iter().map(|&x| x as usize + 1).max().unwrap_or(0)];
        for &x in c {
            sizes[x as usize] += 1;
        }
        sizes
    });

    let pool_size = |v: usize| match &comp {
        None => n - 1 - g.degree(v),
        Some(c) => comp_size[c[v] as usize] - 1 - g.degree(v),
    };
    let mut admissible: Vec<u32> =
        (0..n).filter(|&v| g.degree(v) >= 1 && pool_size(v) >= 1).map(|v| v as u32).collect();
    if admissible.is_empty() {
        return Err(LossError::NoAdmissibleAnchor);
    }

    let mut rng = rng::stream(seed, "si-batch");
    let take = anchor_count.min(admissible.len());
    for i in 0..take {
        let j = rng.random_range(i..admissible.len());
        admissible.swap(i, j);
    }
    let anchors: Vec<u32> = admissible[..take].to_vec();

    let mut positives = Vec::with_capacity(take);
    let mut negatives = Vec::with_capacity(take);
    for &a in &anchors {
        let nbrs = g.neighbors(a as usize);
        positives.push(nbrs[rng.random_range(0..nbrs.len())]);
        let candidates: Vec<u32> = (0..n as u32)
            .filter(|&u| {
                u != a
                    && !g.has_edge(a as usize, u as usize)
                    && comp.as_ref().is_none_or(|c| c[u as usize] == c[a as usize])
            })
            .collect();
        negatives.push(candidates[rng.random_range(0..candidates.len())]);
    }

    let mut members: Vec<u32> = anchors
        .iter()
        .chain(&positives)
        .chain(&negatives)
        .copied()
        .collect();
    members.sort_unstable();
    members.dedup();
    let index_of = |node: u32| members.binary_search(&node).unwrap();

    let mut edge_pairs = Vec::new();
    let mut nonedge_pairs = Vec::new();
    for i in 0..members.len() {
        for j in i + 1..members.len() {
            if g.has_edge(members[i] as usize, members[j] as usize) {
                edge_pairs.push((i, j));
            } else {
                nonedge_pairs.push((i, j));
            }
        }
    }

    Ok(SiBatch {
        anchor_idx: anchors.iter().map(|&a| index_of(a)).collect(),
        pos_idx: positives.iter().map(|&p| index_of(p)).collect(),
        neg_idx: negatives.iter().map(|&x| index_of(x)).collect(),
        anchors,
        positives,
        negatives,
        members,
        edge_pairs,
        nonedge_pairs,
    })
}

/// An "exhaustive batch" over the whole graph: every edge and every
/// non-edge, members = all nodes. Used by free-embedding training and the
/// recoverability checks.
pub fn exhaustive_batch(g: &Graph) -> SiBatch {
    let n = g.num_nodes();
    let mut edge_pairs = Vec::with_capacity(g.num_edges());
    let mut nonedge_pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if g.has_edge(i, j) {
                edge_pairs.push((i, j));
            } else {
                nonedge_pairs.push((i, j));
            }
        }
    }
    SiBatch {
        anchors: (0..n as u32).collect(),
        positives: Vec::new(),
        negatives: Vec::new(),
        members: (0..n as u32).collect(),
        anchor_idx: (0..n).collect(),
        pos_idx: Vec::new(),
        neg_idx: Vec::new(),
        edge_pairs,
        nonedge_pairs,
    }
}

/// Inner products of the given member-index pairs, as a (pairs x 1) node.
fn pair_inner_products(tape: &mut Tape, z: NodeId, pairs: &[(usize, usize)]) -> NodeId {
    let (ai, bi): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
    let za = tape.gather_rows(z, ai);
    let zb = tape.gather_rows(z, bi);
    let prod = tape.mul(za, zb);
    tape.row_sums(prod)
}

/// Euclidean distances of the given member-index pairs, (pairs x 1).
fn pair_distances(tape: &mut Tape, z: NodeId, pairs: &[(usize, usize)]) -> NodeId {
    let (ai, bi): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
    let za = tape.gather_rows(z, ai);
    let zb = tape.gather_rows(z, bi);
    let diff = tape.sub(za, zb);
    let sq = tape.square(diff);
    let sums = tape.row_sums(sq);
    tape.sqrt(sums)
}

/// (1/(N w+)) log(1 + sum_E exp(-w+ (<zi,zj> - t)))
///   + (1/(N w-)) log(1 + sum_notE exp(w- (<zi,zj> - t))),
/// N = anchor count, log-sum-exp stabilized. `z` holds one row per batch
/// member.
pub fn multi_similarity_loss_on_tape(
    tape: &mut Tape,
    z: NodeId,
    batch: &SiBatch,
    p: &MultiSimilarityParams,
) -> Result<NodeId, LossError> {
    p.validate()?;
    let n = batch.num_anchors().max(1) as f64;
    let mut total = tape.leaf(Tensor::zeros(1, 1));
    if !batch.edge_pairs.is_empty() {
        let prods = pair_inner_products(tape, z, &batch.edge_pairs);
        let shifted = tape.add_scalar(prods, -p.threshold);
        let scaled = tape.scale(shifted, -p.w_plus);
        let lse = tape.log1p_sum_exp(scaled);
        let term = tape.scale(lse, 1.0 / (n * p.w_plus));
        total = tape.add(total, term);
    }
    if !batch.nonedge_pairs.is_empty() {
        let prods = pair_inner_products(tape, z, &batch.nonedge_pairs);
        let shifted = tape.add_scalar(prods, -p.threshold);
        let scaled = tape.scale(shifted, p.w_minus);
        let lse = tape.log1p_sum_exp(scaled);
        let term = tape.scale(lse, 1.0 / (n * p.w_minus));
        total = tape.add(total, term);
    }
    Ok(total)
}

/// (1/N) sum_i max(D(z_a, z_pos) - mu+, 0) + (1/N) sum_i max(mu- - D(z_a, z_neg), 0)
/// over the anchor/pos/neg triples; euclidean D.
pub fn contrastive_loss_on_tape(
    tape: &mut Tape,
    z: NodeId,
    batch: &SiBatch,
    p: &ContrastiveParams,
) -> Result<NodeId, LossError> {
    p.validate()?;
    if batch.anchor_idx.len() != batch.pos_idx.len()
        || batch.anchor_idx.len() != batch.neg_idx.len()
    {
        return Err(LossError::RaggedBatch);
    }
    let n = batch.num_anchors().max(1) as f64;
    let pos_pairs: Vec<(usize, usize)> =
        batch.anchor_idx.iter().copied().zip(batch.pos_idx.iter().copied()).collect();
    let neg_pairs: Vec<(usize, usize)> =
        batch.anchor_idx.iter().copied().zip(batch.neg_idx.iter().copied()).collect();
    let mut total = tape.leaf(Tensor::zeros(1, 1));
    if !pos_pairs.is_empty() {
        let d = pair_distances(tape, z, &pos_pairs);
        let margin = tape.add_scalar(d, -p.mu_plus);
        let hinge = tape.relu(margin);
        let sum = tape.sum_all(hinge);
        let term = tape.scale(sum, 1.0 / n);
        total = tape.add(total, term);
    }
    if !neg_pairs.is_empty() {
        let d = pair_distances(tape, z, &neg_pairs);
        let neg_d = tape.scale(d, -1.0);
        let margin = tape.add_scalar(neg_d, p.mu_minus);
        let hinge = tape.relu(margin);
        let sum = tape.sum_all(hinge);
        let term = tape.scale(sum, 1.0 / n);
        total = tape.add(total, term);
    }
    Ok(total)
}

/// Contrastive hinges over explicit pair lists instead of anchor triples:
/// (1/|E|) sum max(D - mu+, 0) + (1/|nonE|) sum max(mu- - D, 0). This is the
/// free-embedding / recoverability objective, where batches cover the whole
/// graph.
pub fn exhaustive_contrastive_on_tape(
    tape: &mut Tape,
    z: NodeId,
    batch: &SiBatch,
    p: &ContrastiveParams,
) -> Result<NodeId, LossError> {
    p.validate()?;
    let mut total = tape.leaf(Tensor::zeros(1, 1));
    if !batch.edge_pairs.is_empty() {
        let d = pair_distances(tape, z, &batch.edge_pairs);
        let margin = tape.add_scalar(d, -p.mu_plus);
        let hinge = tape.relu(margin);
        let sum = tape.sum_all(hinge);
        let term = tape.scale(sum, 1.0 / batch.edge_pairs.len() as f64);
        total = tape.add(total, term);
    }
    if !batch.nonedge_pairs.is_empty() {
        let d = pair_distances(tape, z, &batch.nonedge_pairs);
        let neg_d = tape.scale(d, -1.0);
        let margin = tape.add_scalar(neg_d, p.mu_minus);
        let hinge = tape.relu(margin);
        let sum = tape.sum_all(hinge);
        let term = tape.scale(sum, 1.0 / batch.nonedge_pairs.len() as f64);
        total = tape.add(total, term);
    }
    Ok(total)
}

/// Dispatches on the loss kind; multi-similarity uses the pair lists either
/// way, so exhaustive batches need no special casing there.
pub fn si_loss_on_tape(
    tape: &mut Tape,
    z: NodeId,
    batch: &SiBatch,
    kind: &SiLossKind,
    exhaustive: bool,
) -> Result<NodeId, LossError> {
    match kind {
        SiLossKind::MultiSim(p) => multi_similarity_loss_on_tape(tape, z, batch, p),
        SiLossKind::Contrastive(p) => {
            if exhaustive {
                exhaustive_contrastive_on_tape(tape, z, batch, p)
            } else {
                contrastive_loss_on_tape(tape, z, batch, p)
            }
        }
    }
}

fn member_rows(embeddings: &[Vec<f64>], members: &[u32]) -> Tensor {
    let dim = embeddings.first().map_or(0, |e| e.len());
    let mut t = Tensor::zeros(members.len(), dim);
    for (r, &m) in members.iter().enumerate() {
        t.data[r * dim..(r + 1) * dim].copy_from_slice(&embeddings[m as usize]);
    }
    t
}

/// Value-level multi-similarity loss; `embeddings` is indexed by node id.
pub fn multi_similarity_loss(
    embeddings: &[Vec<f64>],
    batch: &SiBatch,
    p: &MultiSimilarityParams,
) -> Result<f64, LossError> {
    let mut tape = Tape::new();
    let z = tape.leaf(member_rows(embeddings, &batch.members));
    let loss = multi_similarity_loss_on_tape(&mut tape, z, batch, p)?;
    Ok(tape.scalar_value(loss))
}

/// Value-level contrastive loss; `embeddings` is indexed by node id.
pub fn contrastive_loss(
    embeddings: &[Vec<f64>],
    batch: &SiBatch,
    p: &ContrastiveParams,
) -> Result<f64, LossError> {
    let mut tape = Tape::new();
    let z = tape.leaf(member_rows(embeddings, &batch.members));
    let loss = contrastive_loss_on_tape(&mut tape, z, batch, p)?;
    Ok(tape.scalar_value(loss))
}

/// (1 - lambda) l_m + lambda l_si.
pub fn combined_loss(l_m: f64, l_si: f64, w: &LossWeights) -> Result<f64, LossError> {
    w.validate()?;
    if !l_m.is_finite() || !l_si.is_finite() {
        return Err(LossError::NonFinite);
    }
    Ok((1.0 - w.lambda_si) * l_m + w.lambda_si * l_si)
}

pub fn combined_loss_on_tape(
    tape: &mut Tape,
    l_m: NodeId,
    l_si: NodeId,
    w: &LossWeights,
) -> Result<NodeId, LossError> {
    w.validate()?;
    let a = tape.scale(l_m, 1.0 - w.lambda_si);
    let b = tape.scale(l_si, w.lambda_si);
    Ok(tape.add(a, b))
}

/// ceil(fraction * len) distinct positions, sorted ascending.
pub fn choose_mask_positions(
    len: usize,
    fraction: f64,
    rng: &mut impl rand::Rng,
) -> Vec<usize> {
    assert!(len >= 1 && fraction > 0.0 && fraction <= 1.0);
    let count = ((fraction * len as f64).ceil() as usize).clamp(1, len);
    let mut positions: Vec<usize> = (0..len).collect();
    for i in 0..count {
        let j = rng.random_range(i..len);
        positions.swap(i, j);
    }
    let mut chosen = positions[..count].to_vec();
    chosen.sort_unstable();
    chosen
}

/// Copies of the sequences with the chosen positions replaced by MASK.
pub fn apply_masks(
    sequences: &[&[u32]],
    mask_positions: &[Vec<usize>],
    mask_token: u32,
) -> Vec<Vec<u32>> {
    sequences
        .iter()
        .zip(mask_positions)
        .map(|(seq, masks)| {
            let mut s = seq.to_vec();
            for &p in masks {
                s[p] = mask_token;
            }
            s
        })
        .collect()
}

/// Mean cross-entropy of the output head against the true token at every
/// masked position. `encoding` must come from encoding the *masked*
/// sequences; `originals` supplies the targets.
pub fn masked_imputation_loss_on_tape(
    tape: &mut Tape,
    enc: &BoundEncoder,
    encoding: &BatchEncoding,
    originals: &[&[u32]],
    mask_positions: &[Vec<usize>],
) -> Result<NodeId, LossError> {
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    for (s, masks) in mask_positions.iter().enumerate() {
        let (c0, c1) = encoding.content_rows[s];
        let len = c1 - c0;
        for &p in masks {
            if p >= len {
                return Err(LossError::MaskOutOfRange { pos: p, len });
            }
            rows.push(c0 + p);
            targets.push(originals[s][p] as usize);
        }
    }
    if rows.is_empty() {
        return Err(LossError::EmptyMask);
    }
    let states = tape.gather_rows(encoding.hidden, rows);
    let logits0 = tape.matmul(states, enc.head_weight);
    let logits = tape.add_row(logits0, enc.head_bias);
    let logp = tape.log_softmax_rows(logits);
    let picked = tape.pick_per_row(logp, targets);
    let mean = tape.mean_all(picked);
    Ok(tape.scale(mean, -1.0))
}

/// Single-sequence convenience wrapper: masks, encodes, and evaluates the
/// loss value.
pub fn masked_imputation_loss(
    params: &EncoderParameters,
    tokens: &[u32],
    mask_positions: &[usize],
) -> Result<f64, LossError> {
    if let Some(&pos) = mask_positions.iter().find(|&&p| p >= tokens.len()) {
        return Err(LossError::MaskOutOfRange { pos, len: tokens.len() });
    }
    let mut tape = Tape::new();
    let enc = BoundEncoder::bind(&mut tape, params);
    let masks = vec![mask_positions.to_vec()];
    let masked = apply_masks(&[tokens], &masks, params.config.mask_token());
    let refs: Vec<&[u32]> = masked.iter().map(|s| s.as_slice()).collect();
    let encoding = crate::encoder::encode_batch(&mut tape, &enc, &refs)?;
    let loss = masked_imputation_loss_on_tape(&mut tape, &enc, &encoding, &[tokens], &masks)?;
    Ok(tape.scalar_value(loss))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{init_parameters, EncoderConfig};
    use rand::Rng;

    fn batch_over(members: Vec<u32>, edges: Vec<(usize, usize)>, non: Vec<(usize, usize)>) -> SiBatch {
        SiBatch {
            anchors: vec![members[0]],
            positives: Vec::new(),
            negatives: Vec::new(),
            members,
            anchor_idx: vec![0],
            pos_idx: Vec::new(),
            neg_idx: Vec::new(),
            edge_pairs: edges,
            nonedge_pairs: non,
        }
    }

    #[test]
    fn multisim_empty_pairs_is_zero() {
        let z = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let batch = batch_over(vec![0, 1], vec![], vec![]);
        let loss = multi_similarity_loss(&z, &batch, &MultiSimilarityParams::default()).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn multisim_single_positive_pair() {
        // <z0, z1> = 0.5, w+ = 2, t = 1: loss = 0.5 ln(1 + e).
        let z = vec![vec![1.0, 0.0], vec![0.5, 0.0]];
        let batch = batch_over(vec![0, 1], vec![(0, 1)], vec![]);
        let p = MultiSimilarityParams { w_plus: 2.0, w_minus: 40.0, threshold: 1.0 };
        let loss = multi_similarity_loss(&z, &batch, &p).unwrap();
        let expect = 0.5 * (1.0 + std::f64::consts::E).ln();
        assert!((loss - expect).abs() < 1e-12, "{loss} vs {expect}");
        assert!((loss - 0.6566).abs() < 1e-3);
    }

    #[test]
    fn multisim_negative_pair_at_threshold() {
        let z = vec![vec![1.0, 0.0], vec![0.5, 0.0]];
        let batch = batch_over(vec![0, 1], vec![], vec![(0, 1)]);
        let p = MultiSimilarityParams { w_plus: 2.0, w_minus: 40.0, threshold: 0.5 };
        let loss = multi_similarity_loss(&z, &batch, &p).unwrap();
        let expect = (2.0f64).ln() / 40.0;
        assert!((loss - expect).abs() < 1e-12);
    }

    #[test]
    fn multisim_monotone_in_pair_similarity() {
        let mut rng = crate::rng::stream(3, "multisim-mono");
        for _ in 0..20 {
            // Positive coordinates keep both exponential terms well above
            // f64 resolution so the strict inequalities are meaningful.
            let mut z: Vec<Vec<f64>> =
                (0..5).map(|_| (0..3).map(|_| rng.random_range(0.2..1.0)).collect()).collect();
            let batch = batch_over(vec![0, 1, 2, 3, 4], vec![(0, 1)], vec![(2, 3)]);
            let p = MultiSimilarityParams::default();
            let base = multi_similarity_loss(&z, &batch, &p).unwrap();
            // Raise <z0,z1> by stretching z1 along z0.
            let z0 = z[0].clone();
            for (a, b) in z[1].iter_mut().zip(&z0) {
                *a += 0.05 * b;
            }
            let closer = multi_similarity_loss(&z, &batch, &p).unwrap();
            assert!(closer < base, "positive pair closer must lower the loss");
            // Raise <z2,z3> the same way.
            let z2 = z[2].clone();
            for (a, b) in z[3].iter_mut().zip(&z2) {
                *a += 0.05 * b;
            }
            let worse = multi_similarity_loss(&z, &batch, &p).unwrap();
            assert!(worse > closer, "negative pair closer must raise the loss");
        }
    }

    #[test]
    fn multisim_pair_order_invariant() {
        let mut rng = crate::rng::stream(4, "multisim-perm");
        let z: Vec<Vec<f64>> =
            (0..6).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let edges = vec![(0, 1), (1, 2), (2, 3)];
        let non = vec![(3, 4), (4, 5), (0, 5)];
        let batch = batch_over((0..6).collect(), edges.clone(), non.clone());
        let a = multi_similarity_loss(&z, &batch, &MultiSimilarityParams::default()).unwrap();
        let batch2 = batch_over(
            (0..6).collect(),
            vec![edges[2], edges[0], edges[1]],
            vec![non[1], non[2], non[0]],
        );
        let b = multi_similarity_loss(&z, &batch2, &MultiSimilarityParams::default()).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn multisim_lse_is_stable_for_extreme_products() {
        let z = vec![vec![100.0, 0.0], vec![100.0, 0.0]];
        let batch = batch_over(vec![0, 1], vec![], vec![(0, 1)]);
        // w- (10000 - t) overflows exp; the shifted form must stay finite.
        let loss =
            multi_similarity_loss(&z, &batch, &MultiSimilarityParams::default()).unwrap();
        assert!(loss.is_finite());
        let expect = 10000.0 - 0.5; // log(1+e^x) ~ x for huge x; the 1/w- cancels w-
        assert!((loss - expect).abs() < 1e-6);
    }

    fn triple_batch() -> SiBatch {
        SiBatch {
            anchors: vec![0],
            positives: vec![1],
            negatives: vec![2],
            members: vec![0, 1, 2],
            anchor_idx: vec![0],
            pos_idx: vec![1],
            neg_idx: vec![2],
            edge_pairs: vec![(0, 1)],
            nonedge_pairs: vec![(0, 2)],
        }
    }

    #[test]
    fn contrastive_hinge_arithmetic() {
        // D(anchor, pos) = 0.3 inactive under mu+ = 0.5; D(anchor, neg) = 0.2
        // against mu- = 1.0 contributes 0.8.
        let z = vec![vec![0.0, 0.0], vec![0.3, 0.0], vec![0.2, 0.0]];
        let p = ContrastiveParams { mu_plus: 0.5, mu_minus: 1.0 };
        let loss = contrastive_loss(&z, &triple_batch(), &p).unwrap();
        assert!((loss - 0.8).abs() < 1e-12);
    }

    #[test]
    fn contrastive_zero_when_margins_met() {
        let z = vec![vec![0.0, 0.0], vec![0.05, 0.0], vec![5.0, 0.0]];
        let loss = contrastive_loss(&z, &triple_batch(), &ContrastiveParams::default()).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn contrastive_collapsed_embeddings_cost_mu_minus() {
        let z = vec![vec![0.0, 0.0], vec![0.0, 0.0], vec![0.0, 0.0]];
        let p = ContrastiveParams::default();
        let loss = contrastive_loss(&z, &triple_batch(), &p).unwrap();
        assert!((loss - p.mu_minus).abs() < 1e-12);
    }

    #[test]
    fn contrastive_rejects_bad_params() {
        let z = vec![vec![0.0], vec![1.0], vec![2.0]];
        let p = ContrastiveParams { mu_plus: 1.0, mu_minus: 0.5 };
        assert!(matches!(
            contrastive_loss(&z, &triple_batch(), &p),
            Err(LossError::BadParams(_))
        ));
    }

    #[test]
    fn combined_weighting() {
        let w = LossWeights { lambda_si: 0.1 };
        let v = combined_loss(2.0, 0.5, &w).unwrap();
        assert!((v - 1.85).abs() < 1e-12);
        let mean = combined_loss(2.0, 0.5, &LossWeights { lambda_si: 0.5 }).unwrap();
        assert!((mean - 1.25).abs() < 1e-12);
        assert!(combined_loss(f64::NAN, 0.5, &w).is_err());
        assert!(combined_loss(1.0, 1.0, &LossWeights { lambda_si: 0.0 }).is_err());
        assert!(combined_loss(1.0, 1.0, &LossWeights { lambda_si: 1.0 }).is_err());
    }

    #[test]
    fn si_gradients_match_finite_differences() {
        let mut rng = crate::rng::stream(6, "si-fd");
        let n = 5;
        let dim = 3;
        let z0 = Tensor::randn(n, dim, 1.0, &mut rng);
        let batch = SiBatch {
            anchors: vec![0, 1],
            positives: vec![1, 2],
            negatives: vec![3, 4],
            members: (0..n as u32).collect(),
            anchor_idx: vec![0, 1],
            pos_idx: vec![1, 2],
            neg_idx: vec![3, 4],
            edge_pairs: vec![(0, 1), (1, 2)],
            nonedge_pairs: vec![(0, 3), (1, 4), (2, 4)],
        };
        for kind in [
            SiLossKind::MultiSim(MultiSimilarityParams::default()),
            SiLossKind::Contrastive(ContrastiveParams::default()),
        ] {
            let value = |t: &Tensor| -> f64 {
                let mut tape = Tape::new();
                let z = tape.leaf(t.clone());
                let loss = si_loss_on_tape(&mut tape, z, &batch, &kind, false).unwrap();
                tape.scalar_value(loss)
            };
            let mut tape = Tape::new();
            let z = tape.leaf(z0.clone());
            let loss = si_loss_on_tape(&mut tape, z, &batch, &kind, false).unwrap();
            let grads = tape.backward(loss);
            let g = grads.get(z, n, dim);

            let dir = Tensor::randn(n, dim, 1.0, &mut rng);
            let dot: f64 = g.data.iter().zip(&dir.data).map(|(a, b)| a * b).sum();
            let eps = 1e-6;
            let mut plus = z0.clone();
            let mut minus = z0.clone();
            for ((p, m), u) in plus.data.iter_mut().zip(&mut minus.data).zip(&dir.data) {
                *p += eps * u;
                *m -= eps * u;
            }
            let fd = (value(&plus) - value(&minus)) / (2.0 * eps);
            let denom = fd.abs().max(dot.abs()).max(1e-10);
            assert!((fd - dot).abs() / denom < 1e-4, "{kind:?}: fd {fd} vs {dot}");
        }
    }

    #[test]
    fn sample_batch_forced_choices_on_path() {
        let g = Graph::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let batch = sample_si_batch(&g, 2, NegStrategy::UniformNonneighbor, 0).unwrap();
        // Node 1 neighbors everyone, so only 0 and 2 are admissible.
        assert_eq!(batch.anchors.len(), 2);
        for (i, &a) in batch.anchors.iter().enumerate() {
            assert!(a == 0 || a == 2);
            assert_eq!(batch.positives[i], 1, "pos of endpoint is the middle");
            assert_eq!(batch.negatives[i], 2 - a, "neg is the far endpoint");
        }
    }

    #[test]
    fn sample_batch_same_component_on_cliques_errors() {
        // Two disjoint triangles: within a component every pair is an edge.
        let g = Graph::from_edges(6, &[(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)]).unwrap();
        assert!(matches!(
            sample_si_batch(&g, 4, NegStrategy::SameComponent, 0),
            Err(LossError::NoAdmissibleAnchor)
        ));
        // Uniform strategy happily crosses components.
        let batch = sample_si_batch(&g, 4, NegStrategy::UniformNonneighbor, 0).unwrap();
        assert_eq!(batch.anchors.len(), 4);
    }

    #[test]
    fn sample_batch_invariants_on_random_graphs() {
        let mut rng = crate::rng::stream(7, "si-batch-audit");
        let mut draws = 0;
        while draws < 200 {
            let n = rng.random_range(4..12);
            let mut edges = Vec::new();
            for a in 0..n as u32 {
                for b in (a + 1)..n as u32 {
                    if rng.random_range(0.0..1.0) < 0.4 {
                        edges.push((a, b));
                    }
                }
            }
            let g = Graph::from_edges(n, &edges).unwrap();
            let strategy = if draws % 2 == 0 {
                NegStrategy::UniformNonneighbor
            } else {
                NegStrategy::SameComponent
            };
            let Ok(batch) = sample_si_batch(&g, 3, strategy, draws as u64) else {
                draws += 1;
                continue;
            };
            for (i, &a) in batch.anchors.iter().enumerate() {
                assert!(g.has_edge(a as usize, batch.positives[i] as usize));
                assert!(!g.has_edge(a as usize, batch.negatives[i] as usize));
                assert_ne!(a, batch.negatives[i]);
            }
            for &(i, j) in &batch.edge_pairs {
                assert!(g.has_edge(batch.members[i] as usize, batch.members[j] as usize));
            }
            for &(i, j) in &batch.nonedge_pairs {
                assert!(!g.has_edge(batch.members[i] as usize, batch.members[j] as usize));
            }
            let total = batch.members.len() * (batch.members.len() - 1) / 2;
            assert_eq!(batch.edge_pairs.len() + batch.nonedge_pairs.len(), total);
            draws += 1;
        }
    }

    #[test]
    fn sample_batch_deterministic() {
        let g = Graph::from_edges(8, &[(0, 1), (1, 2), (2, 3), (4, 5), (5, 6), (6, 7), (0, 7)])
            .unwrap();
        let a = sample_si_batch(&g, 4, NegStrategy::UniformNonneighbor, 42).unwrap();
        let b = sample_si_batch(&g, 4, NegStrategy::UniformNonneighbor, 42).unwrap();
        assert_eq!(a.anchors, b.anchors);
        assert_eq!(a.positives, b.positives);
        assert_eq!(a.negatives, b.negatives);
    }

    #[test]
    fn exhaustive_batch_covers_all_pairs() {
        let g = Graph::from_edges(4, &[(0, 1), (2, 3)]).unwrap();
        let b = exhaustive_batch(&g);
        assert_eq!(b.edge_pairs.len(), 2);
        assert_eq!(b.nonedge_pairs.len(), 4);
        assert_eq!(b.members, vec![0, 1, 2, 3]);
    }

    #[test]
    fn mask_positions_distinct_and_counted() {
        let mut rng = crate::rng::stream(8, "mask-test");
        for len in [1usize, 5, 20, 32] {
            let pos = choose_mask_positions(len, DEFAULT_MASK_FRACTION, &mut rng);
            assert_eq!(pos.len(), ((0.15 * len as f64).ceil() as usize).max(1));
            let mut sorted = pos.clone();
            sorted.dedup();
            assert_eq!(sorted.len(), pos.len());
            assert!(pos.iter().all(|&p| p < len));
        }
    }

    #[test]
    fn masked_loss_uniform_head_is_ln_vocab() {
        let cfg = EncoderConfig::reference(12, 9);
        let mut params = init_parameters(&cfg, 9).unwrap();
        params.head_weight = Tensor::zeros(10, 12);
        params.head_bias = Tensor::zeros(1, 12);
        let loss = masked_imputation_loss(&params, &[1, 2, 3, 4], &[0, 2]).unwrap();
        assert!((loss - (12.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn masked_loss_confident_head_tends_to_zero() {
        let cfg = EncoderConfig::reference(12, 9);
        let mut params = init_parameters(&cfg, 10).unwrap();
        // Bias drives probability of token 3 toward 1 regardless of state.
        params.head_weight = Tensor::zeros(10, 12);
        let mut bias = Tensor::zeros(1, 12);
        *bias.at_mut(0, 3) = 50.0;
        params.head_bias = bias;
        let loss = masked_imputation_loss(&params, &[3, 3, 3], &[1]).unwrap();
        assert!(loss < 1e-9);
    }

    #[test]
    fn masked_loss_matches_hand_evaluated_cross_entropy() {
        // Two-token vocabulary (ids 0 and 1) plus MASK=2, CLS=3.
        let cfg = EncoderConfig {
            vocab_size: 4,
            embed_dim: 10,
            num_layers: 2,
            num_heads: 1,
            max_seq_len: 6,
            pooling: crate::encoder::Pooling::Cls,
        };
        let params = init_parameters(&cfg, 11).unwrap();
        let tokens = [0u32, 1, 0];
        let mask = [1usize];

        // Hand path: encode the masked sequence, multiply the masked state
        // by the head, and evaluate softmax cross-entropy directly.
        let masked = [0u32, cfg.mask_token(), 0];
        let out = crate::encoder::encode(&params, &masked).unwrap();
        let state: Vec<f64> = (0..10).map(|c| out.per_token.at(1, c)).collect();
        let logits: Vec<f64> = (0..4)
            .map(|v| {
                params.head_bias.at(0, v)
                    + (0..10).map(|c| state[c] * params.head_weight.at(c, v)).sum::<f64>()
            })
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let logz = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        let hand = logz - logits[tokens[mask[0]] as usize];

        let loss = masked_imputation_loss(&params, &tokens, &mask).unwrap();
        assert!((loss - hand).abs() < 1e-9, "{loss} vs {hand}");
    }

    #[test]
    fn masked_loss_requires_masks_in_range() {
        let cfg = EncoderConfig::reference(12, 9);
        let params = init_parameters(&cfg, 12).unwrap();
        assert!(matches!(
            masked_imputation_loss(&params, &[1, 2], &[]),
            Err(LossError::EmptyMask)
        ));
        assert!(matches!(
            masked_imputation_loss(&params, &[1, 2], &[5]),
            Err(LossError::MaskOutOfRange { pos: 5, len: 2 })
        ));
    }

    #[test]
    fn masked_loss_gradient_matches_finite_differences() {
        let cfg = EncoderConfig::reference(12, 9);
        let params = init_parameters(&cfg, 13).unwrap();
        let seqs: Vec<Vec<u32>> = vec![vec![1, 2, 3, 4], vec![5, 6, 7]];
        let masks = vec![vec![0usize, 3], vec![1usize]];

        let loss_of = |p: &EncoderParameters| -> f64 {
            let mut tape = Tape::new();
            let enc = BoundEncoder::bind(&mut tape, p);
            let refs: Vec<&[u32]> = seqs.iter().map(|s| s.as_slice()).collect();
            let masked = apply_masks(&refs, &masks, p.config.mask_token());
            let mrefs: Vec<&[u32]> = masked.iter().map(|s| s.as_slice()).collect();
            let encoding = crate::encoder::encode_batch(&mut tape, &enc, &mrefs).unwrap();
            let loss =
                masked_imputation_loss_on_tape(&mut tape, &enc, &encoding, &refs, &masks).unwrap();
            tape.scalar_value(loss)
        };

        let mut tape = Tape::new();
        let enc = BoundEncoder::bind(&mut tape, &params);
        let refs: Vec<&[u32]> = seqs.iter().map(|s| s.as_slice()).collect();
        let masked = apply_masks(&refs, &masks, params.config.mask_token());
        let mrefs: Vec<&[u32]> = masked.iter().map(|s| s.as_slice()).collect();
        let encoding = crate::encoder::encode_batch(&mut tape, &enc, &mrefs).unwrap();
        let loss =
            masked_imputation_loss_on_tape(&mut tape, &enc, &encoding, &refs, &masks).unwrap();
        let grads = crate::encoder::parameter_gradients(&tape, loss, &enc, &params).unwrap();

        let mut dir_rng = crate::rng::stream(14, "mlm-fd");
        let direction: Vec<Tensor> = params
            .tensors()
            .iter()
            .map(|t| Tensor::randn(t.rows, t.cols, 1.0, &mut dir_rng))
            .collect();
        let dot: f64 = grads
            .iter()
            .zip(&direction)
            .map(|(g, u)| g.data.iter().zip(&u.data).map(|(a, b)| a * b).sum::<f64>())
            .sum();
        let eps = 1e-5;
        let shifted = |sign: f64| {
            let mut p = params.clone();
            for (t, u) in p.tensors_mut().into_iter().zip(&direction) {
                for (x, ux) in t.data.iter_mut().zip(&u.data) {
                    *x += sign * eps * ux;
                }
            }
            p
        };
        let fd = (loss_of(&shifted(1.0)) - loss_of(&shifted(-1.0))) / (2.0 * eps);
        let denom = fd.abs().max(dot.abs()).max(1e-10);
        assert!((fd - dot).abs() / denom < 1e-4, "fd {fd} vs grad {dot}");
    }
}
