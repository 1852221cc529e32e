//! Seeded pre-training loops. The MPT-only arm partitions each epoch into
//! shuffled masked batches; the combined arm draws one graph-aware SI batch
//! per step and evaluates both losses on the same forward pass.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::{
    encode_batch, init_parameters, parameter_gradients, BoundEncoder, EncoderConfig,
    EncoderError, EncoderParameters,
};
use crate::graph::Graph;
use crate::losses::{
    apply_masks, choose_mask_positions, combined_loss_on_tape, exhaustive_batch,
    masked_imputation_loss_on_tape, sample_si_batch, si_loss_on_tape, LossError, LossWeights,
    NegStrategy, SiLossKind,
};
use crate::rng;
use crate::tape::Tape;
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("bad train config: {0}")]
    BadConfig(String),
    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: usize, loss: f64 },
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error("history io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Which objective the arm optimizes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TrainWeights {
    MptOnly,
    Combined(LossWeights),
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub weights: TrainWeights,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 32,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            weights: TrainWeights::Combined(LossWeights { lambda_si: 0.1 }),
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), TrainError> {
        if self.epochs < 1 {
            return Err(TrainError::BadConfig("epochs must be at least 1".into()));
        }
        if self.batch_size < 2 && matches!(self.weights, TrainWeights::Combined(_)) {
            return Err(TrainError::BadConfig(
                "SI batches need batch_size of at least 2".into(),
            ));
        }
        if self.batch_size < 1 {
            return Err(TrainError::BadConfig("batch_size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::BadConfig("learning_rate must be finite and >= 0".into()));
        }
        if let TrainWeights::Combined(w) = &self.weights {
            w.validate()?;
        }
        Ok(())
    }
}

/// What the trainer needs from the loss configuration.
#[derive(Clone, Debug)]
pub struct SiSpec {
    pub kind: SiLossKind,
    pub strategy: NegStrategy,
    pub mask_fraction: f64,
}

impl Default for SiSpec {
    fn default() -> Self {
        SiSpec {
            kind: SiLossKind::Contrastive(Default::default()),
            strategy: NegStrategy::UniformNonneighbor,
            mask_fraction: crate::losses::DEFAULT_MASK_FRACTION,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_m: f64,
    pub l_si: f64,
    pub combined: f64,
    pub wall_clock_secs: f64,
}

#[derive(Clone, Debug, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// How many SI batches were drawn; exactly 0 in MPT-only mode.
    pub si_batches_sampled: usize,
}

/// CSV without the wall clock, so reruns byte-match.
pub fn write_history_csv(path: &Path, history: &TrainHistory) -> Result<(), TrainError> {
    let mut text = String::from("epoch,l_m,l_si,combined\n");
    for r in &history.epochs {
        text.push_str(&format!("{},{},{},{}\n", r.epoch, r.l_m, r.l_si, r.combined));
    }
    crate::fsutil::write_atomic(path, text.as_bytes())?;
    Ok(())
}

const DIVERGENCE_CAP: f64 = 1e6;

struct Optimizer {
    kind: OptimizerKind,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: usize,
}

impl Optimizer {
    fn new(kind: OptimizerKind, shapes: &[&Tensor]) -> Optimizer {
        let zeros: Vec<Tensor> = shapes.iter().map(|t| Tensor::zeros(t.rows, t.cols)).collect();
        Optimizer { kind, m: zeros.clone(), v: zeros, t: 0 }
    }

    fn step(&mut self, params: Vec<&mut Tensor>, grads: &[Tensor], cfg: &TrainConfig) {
        let lr = cfg.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.into_iter().zip(grads) {
                    for (x, gx) in p.data.iter_mut().zip(&g.data) {
                        *x -= lr * gx;
                    }
                }
            }
            OptimizerKind::Adam => {
                self.t += 1;
                let b1 = cfg.adam_beta1;
                let b2 = cfg.adam_beta2;
                let bc1 = 1.0 - b1.powi(self.t as i32);
                let bc2 = 1.0 - b2.powi(self.t as i32);
                for ((p, g), (m, v)) in
                    params.into_iter().zip(grads).zip(self.m.iter_mut().zip(&mut self.v))
                {
                    for ((x, gx), (mx, vx)) in
                        p.data.iter_mut().zip(&g.data).zip(m.data.iter_mut().zip(&mut v.data))
                    {
                        *mx = b1 * *mx + (1.0 - b1) * gx;
                        *vx = b2 * *vx + (1.0 - b2) * gx * gx;
                        let mh = *mx / bc1;
                        let vh = *vx / bc2;
                        *x -= lr * mh / (vh.sqrt() + cfg.adam_epsilon);
                    }
                }
            }
        }
    }
}

/// Pre-trains the encoder over the node sequences. Node i of `g` owns
/// `sequences[i]`; the combined arm's per-sample embeddings feed the SI loss
/// through the pre-training graph.
pub fn pretrain(
    sequences: &[Vec<u32>],
    g: &Graph,
    si: &SiSpec,
    enc_config: &EncoderConfig,
    cfg: &TrainConfig,
) -> Result<(EncoderParameters, TrainHistory), TrainError> {
    cfg.validate()?;
    if g.num_nodes() != sequences.len() {
        return Err(TrainError::BadConfig(format!(
            "graph has {} nodes but corpus has {} sequences",
            g.num_nodes(),
            sequences.len()
        )));
    }
    let n = sequences.len();
    if n == 0 {
        return Err(TrainError::BadConfig("empty corpus".into()));
    }

    let mut params = init_parameters(enc_config, cfg.seed)?;
    let mut opt = Optimizer::new(cfg.optimizer, &params.tensors());
    let mut rng = rng::stream(cfg.seed, "train-batches");
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let mut history = TrainHistory::default();
    let mut global_step = 0usize;

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..n).collect();
        if matches!(cfg.weights, TrainWeights::MptOnly) {
            order.shuffle(&mut rng);
        }
        let mut sums = (0.0, 0.0, 0.0);
        for step in 0..steps_per_epoch {
            let (nodes, si_batch) = match cfg.weights {
                TrainWeights::MptOnly => {
                    let lo = step * cfg.batch_size;
                    let hi = ((step + 1) * cfg.batch_size).min(n);
                    (order[lo..hi].to_vec(), None)
                }
                TrainWeights::Combined(_) => {
                    let batch_seed = rng.next_u64();
                    let batch = sample_si_batch(g, cfg.batch_size, si.strategy, batch_seed)?;
                    history.si_batches_sampled += 1;
                    (batch.members.iter().map(|&m| m as usize).collect(), Some(batch))
                }
            };

            let originals: Vec<&[u32]> = nodes.iter().map(|&i| sequences[i].as_slice()).collect();
            let masks: Vec<Vec<usize>> = originals
                .iter()
                .map(|s| choose_mask_positions(s.len(), si.mask_fraction, &mut rng))
                .collect();
            let masked = apply_masks(&originals, &masks, enc_config.mask_token());
            let masked_refs: Vec<&[u32]> = masked.iter().map(|s| s.as_slice()).collect();

            let mut tape = Tape::new();
            let enc = BoundEncoder::bind(&mut tape, &params);
            let encoding = encode_batch(&mut tape, &enc, &masked_refs)?;
            let l_m = masked_imputation_loss_on_tape(&mut tape, &enc, &encoding, &originals, &masks)?;

            let (total, l_m_val, l_si_val) = match (&cfg.weights, &si_batch) {
                (TrainWeights::Combined(w), Some(batch)) => {
                    let l_si = si_loss_on_tape(&mut tape, encoding.pooled, batch, &si.kind, false)?;
                    let total = combined_loss_on_tape(&mut tape, l_m, l_si, w)?;
                    (total, tape.scalar_value(l_m), tape.scalar_value(l_si))
                }
                _ => (l_m, tape.scalar_value(l_m), 0.0),
            };

            let loss_val = tape.scalar_value(total);
            if !loss_val.is_finite() || loss_val > DIVERGENCE_CAP {
                return Err(TrainError::Diverged { step: global_step, loss: loss_val });
            }
            let grads = parameter_gradients(&tape, total, &enc, &params)?;
            opt.step(params.tensors_mut(), &grads, cfg);

            sums.0 += l_m_val;
            sums.1 += l_si_val;
            sums.2 += loss_val;
            global_step += 1;
        }
        let k = steps_per_epoch as f64;
        history.epochs.push(EpochRecord {
            epoch,
            l_m: sums.0 / k,
            l_si: sums.1 / k,
            combined: sums.2 / k,
            wall_clock_secs: started.elapsed().as_secs_f64(),
        });
    }
    Ok((params, history))
}

/// Optimizes one free vector per node directly against the SI loss over the
/// exhaustive edge/non-edge pair lists — no encoder involved. Each epoch is
/// one full-graph step.
pub fn pretrain_free_embeddings(
    g: &Graph,
    dim: usize,
    kind: &SiLossKind,
    cfg: &TrainConfig,
) -> Result<(Vec<Vec<f64>>, TrainHistory), TrainError> {
    cfg.validate()?;
    if dim < 2 {
        return Err(TrainError::BadConfig("free embeddings need dim >= 2".into()));
    }
    let n = g.num_nodes();
    let mut z = Tensor::randn(n, dim, 1.0, &mut rng::stream(cfg.seed, "free-embed-init"));
    let batch = exhaustive_batch(g);
    let mut opt = Optimizer::new(cfg.optimizer, &[&z]);
    let mut history = TrainHistory::default();

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let mut tape = Tape::new();
        let leaf = tape.leaf(z.clone());
        let loss = si_loss_on_tape(&mut tape, leaf, &batch, kind, true)?;
        let loss_val = tape.scalar_value(loss);
        if !loss_val.is_finite() || loss_val > DIVERGENCE_CAP {
            return Err(TrainError::Diverged { step: epoch, loss: loss_val });
        }
        let grads = tape.backward(loss);
        let g_z = grads.get(leaf, n, dim);
        opt.step(vec![&mut z], &[g_z], cfg);
        history.epochs.push(EpochRecord {
            epoch,
            l_m: 0.0,
            l_si: loss_val,
            combined: loss_val,
            wall_clock_secs: started.elapsed().as_secs_f64(),
        });
    }
    Ok(((0..n).map(|r| z.row_slice(r).to_vec()).collect(), history))
}

/// The free-embedding objective evaluated on given embeddings: contrastive
/// hinges (or the multi-similarity sums) over every edge and non-edge.
pub fn exhaustive_si_loss(
    embeddings: &[Vec<f64>],
    g: &Graph,
    kind: &SiLossKind,
) -> Result<f64, LossError> {
    let batch = exhaustive_batch(g);
    let dim = embeddings.first().map_or(0, |e| e.len());
    let mut t = Tensor::zeros(embeddings.len(), dim);
    for (r, e) in embeddings.iter().enumerate() {
        t.data[r * dim..(r + 1) * dim].copy_from_slice(e);
    }
    let mut tape = Tape::new();
    let z = tape.leaf(t);
    let loss = si_loss_on_tape(&mut tape, z, &batch, kind, true)?;
    Ok(tape.scalar_value(loss))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::ContrastiveParams;

    /// Disjoint cliques of the given sizes.
    fn cliques(sizes: &[usize]) -> Graph {
        let mut edges = Vec::new();
        let mut base = 0u32;
        for &s in sizes {
            for a in 0..s as u32 {
                for b in (a + 1)..s as u32 {
                    edges.push((base + a, base + b));
                }
            }
            base += s as u32;
        }
        Graph::from_edges(sizes.iter().sum(), &edges).unwrap()
    }

    fn toy_corpus(n: usize, len: usize, vocab: usize, seed: u64) -> Vec<Vec<u32>> {
        use rand::Rng;
        let mut rng = crate::rng::stream(seed, "toy-corpus");
        (0..n)
            .map(|_| (0..len).map(|_| rng.random_range(0..vocab as u32)).collect())
            .collect()
    }

    fn tiny_setup() -> (Vec<Vec<u32>>, Graph, EncoderConfig) {
        let g = cliques(&[6, 6]);
        let corpus = toy_corpus(12, 5, 8, 1);
        let cfg = EncoderConfig::reference(10, 8);
        (corpus, g, cfg)
    }

    #[test]
    fn mpt_only_never_samples_si_batches() {
        let (corpus, g, enc) = tiny_setup();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 4,
            weights: TrainWeights::MptOnly,
            ..Default::default()
        };
        let (_, history) = pretrain(&corpus, &g, &SiSpec::default(), &enc, &cfg).unwrap();
        assert_eq!(history.si_batches_sampled, 0);
        assert!(history.epochs.iter().all(|r| r.l_si == 0.0));
    }

    #[test]
    fn combined_mode_samples_si_every_step() {
        let (corpus, g, enc) = tiny_setup();
        let cfg = TrainConfig { epochs: 2, batch_size: 4, ..Default::default() };
        let (_, history) = pretrain(&corpus, &g, &SiSpec::default(), &enc, &cfg).unwrap();
        assert_eq!(history.si_batches_sampled, 2 * 12usize.div_ceil(4));
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_at_init() {
        let (corpus, g, enc) = tiny_setup();
        let cfg = TrainConfig { epochs: 1, learning_rate: 0.0, ..Default::default() };
        let (params, _) = pretrain(&corpus, &g, &SiSpec::default(), &enc, &cfg).unwrap();
        let init = init_parameters(&enc, cfg.seed).unwrap();
        for (a, b) in params.tensors().iter().zip(init.tensors()) {
            assert_eq!(a.data, b.data);
        }
    }

    #[test]
    fn training_is_reproducible() {
        let (corpus, g, enc) = tiny_setup();
        let cfg = TrainConfig { epochs: 2, batch_size: 4, seed: 9, ..Default::default() };
        let (p1, h1) = pretrain(&corpus, &g, &SiSpec::default(), &enc, &cfg).unwrap();
        let (p2, h2) = pretrain(&corpus, &g, &SiSpec::default(), &enc, &cfg).unwrap();
        for (a, b) in p1.tensors().iter().zip(p2.tensors()) {
            assert_eq!(a.data, b.data);
        }
        for (a, b) in h1.epochs.iter().zip(&h2.epochs) {
            assert_eq!(a.combined, b.combined);
        }
    }

    #[test]
    fn combined_loss_trends_downward() {
        let (corpus, g, enc) = tiny_setup();
        let cfg = TrainConfig { epochs: 12, batch_size: 6, seed: 3, ..Default::default() };
        let (_, history) = pretrain(&corpus, &g, &SiSpec::default(), &enc, &cfg).unwrap();
        let vals: Vec<f64> = history.epochs.iter().map(|r| r.combined).collect();
        let quarter = vals.len() / 4;
        let median = |xs: &[f64]| {
            let mut s = xs.to_vec();
            s.sort_by(|a, b| a.partial_cmp(b).unwrap());
            s[s.len() / 2]
        };
        assert!(
            median(&vals[..quarter]) > median(&vals[vals.len() - quarter..]),
            "combined loss should trend down: {vals:?}"
        );
    }

    #[test]
    fn divergence_guard_trips_on_absurd_learning_rate() {
        let g = cliques(&[3, 3]);
        let cfg = TrainConfig {
            epochs: 50,
            learning_rate: 1e8,
            optimizer: OptimizerKind::Sgd,
            ..Default::default()
        };
        let kind = SiLossKind::Contrastive(ContrastiveParams::default());
        assert!(matches!(
            pretrain_free_embeddings(&g, 2, &kind, &cfg),
            Err(TrainError::Diverged { .. })
        ));
    }

    #[test]
    fn free_embeddings_respect_single_edge_geometry() {
        let single = Graph::from_edges(2, &[(0, 1)]).unwrap();
        let cfg = TrainConfig {
            epochs: 800,
            learning_rate: 0.01,
            seed: 4,
            ..Default::default()
        };
        let p = ContrastiveParams::default();
        let kind = SiLossKind::Contrastive(p);
        let (z, _) = pretrain_free_embeddings(&single, 2, &kind, &cfg).unwrap();
        let d = dist(&z[0], &z[1]);
        assert!(d <= p.mu_plus + 0.01, "edge endpoints should sit within mu_plus, got {d}");

        let empty = Graph::from_edges(2, &[]).unwrap();
        let (z, _) = pretrain_free_embeddings(&empty, 2, &kind, &cfg).unwrap();
        let d = dist(&z[0], &z[1]);
        assert!(d >= p.mu_minus - 0.01, "non-edge should sit past mu_minus, got {d}");
    }

    #[test]
    fn free_embeddings_deterministic() {
        let g = cliques(&[4, 4]);
        let cfg = TrainConfig { epochs: 50, seed: 5, ..Default::default() };
        let kind = SiLossKind::Contrastive(ContrastiveParams::default());
        let (a, _) = pretrain_free_embeddings(&g, 3, &kind, &cfg).unwrap();
        let (b, _) = pretrain_free_embeddings(&g, 3, &kind, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn free_embeddings_reach_low_loss_and_positive_margin_on_cliques() {
        let g = cliques(&[5, 5, 5, 5]);
        let cfg = TrainConfig {
            epochs: 500,
            learning_rate: 0.02,
            seed: 6,
            ..Default::default()
        };
        let kind = SiLossKind::Contrastive(ContrastiveParams::default());
        let (z, history) = pretrain_free_embeddings(&g, 4, &kind, &cfg).unwrap();
        let final_loss = history.epochs.last().unwrap().l_si;
        assert!(final_loss < 0.01, "exhaustive contrastive loss stuck at {final_loss}");
        assert!((final_loss - exhaustive_si_loss(&z, &g, &kind).unwrap()).abs() < 1e-9);
        let report =
            crate::graph::recovery_margin(&g, &z, crate::graph::DistanceName::Euclidean).unwrap();
        assert!(report.margin > 0.0, "expected positive recovery margin");
        assert_eq!(report.edge_f1, 1.0);
    }

    #[test]
    fn history_csv_omits_wall_clock() {
        let mut history = TrainHistory::default();
        history.epochs.push(EpochRecord {
            epoch: 0,
            l_m: 1.5,
            l_si: 0.25,
            combined: 1.375,
            wall_clock_secs: 123.0,
        });
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("history.csv");
        write_history_csv(&path, &history).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "epoch,l_m,l_si,combined\n0,1.5,0.25,1.375\n");
    }

    fn dist(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
    }
}
