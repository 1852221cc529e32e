//! Config-driven experiment harness: generate a corpus, build the chosen
//! pre-training graph, run the MPT-only and SIPT arms under a shared seed,
//! evaluate both latent spaces, and leave a reproducible artifact trail.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::builders::{class_node_sequences, classification_graph, cliques_graph};
use crate::corpus::{self, sample_corpus, write_corpus, Sample};
use crate::encoder::{
    encode_all, read_checkpoint, write_checkpoint, EncoderConfig, EncoderParameters, Pooling,
};
use crate::eval::{theory_report, EvalReport};
use crate::fsutil::write_atomic;
use crate::graph::{add_edge_noise, Graph, Labeling};
use crate::losses::{
    ContrastiveParams, LossWeights, MultiSimilarityParams, NegStrategy, SiLossKind,
    DEFAULT_MASK_FRACTION,
};
use crate::manifold::{
    assign_topics, build_tiling, graph_from_distances, localize_samples, radius_for_target_degree,
    write_placements, GeodesicIndex, PlacedSample, SimplicialSurface, Topology,
};
use crate::mechanistic::{
    assign_corpus_to_nodes, build_motif_graph, homophily_labels, motif_labels, structural_labels,
    MotifTemplate,
};
use crate::rng;
use crate::train::{
    pretrain, write_history_csv, OptimizerKind, SiSpec, TrainConfig, TrainWeights,
};

/// Any module error, tagged with the pipeline stage that raised it.
#[derive(Debug, Error)]
#[error("{stage}: {source}")]
pub struct StageError {
    pub stage: &'static str,
    #[source]
    pub source: Box<dyn std::error::Error + Send + Sync + 'static>,
}

fn at<T, E>(stage: &'static str, result: Result<T, E>) -> Result<T, StageError>
where
    E: Into<Box<dyn std::error::Error + Send + Sync + 'static>>,
{
    result.map_err(|e| StageError { stage, source: e.into() })
}

fn fail(stage: &'static str, message: String) -> StageError {
    StageError { stage, source: message.into() }
}

/// Which pre-training graph the experiment runs on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Cliques,
    Plane,
    Moebius,
    Sphere,
    Torus,
    Neighborhood,
    Motif,
    Structural,
    Classification,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Cliques => "cliques",
            Variant::Plane => "plane",
            Variant::Moebius => "moebius",
            Variant::Sphere => "sphere",
            Variant::Torus => "torus",
            Variant::Neighborhood => "neighborhood",
            Variant::Motif => "motif",
            Variant::Structural => "structural",
            Variant::Classification => "classification",
        }
    }

    fn topology(self) -> Option<Topology> {
        match self {
            Variant::Plane => Some(Topology::Plane),
            Variant::Moebius => Some(Topology::Moebius),
            Variant::Sphere => Some(Topology::Sphere),
            Variant::Torus => Some(Topology::Torus),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusBlock {
    /// Number of topics.
    pub k: usize,
    /// Vocabulary size (reserved MASK/CLS slots are added on top).
    pub vocab: usize,
    /// Corpus size.
    pub n: usize,
    pub seq_len: usize,
    /// Dirichlet parameter of the topic-token distributions; smaller is
    /// spikier.
    pub sharpness: f64,
    /// Dirichlet parameter of per-sample topic mixtures.
    pub mixture_concentration: f64,
}

impl Default for CorpusBlock {
    fn default() -> Self {
        CorpusBlock {
            k: 12,
            vocab: 32,
            n: 1200,
            seq_len: 16,
            sharpness: 0.2,
            mixture_concentration: corpus::DEFAULT_MIXTURE_CONCENTRATION,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphBlock {
    pub variant: Variant,
    /// Fraction of |E| spurious edges added before training.
    pub noise_rate: f64,
    // Manifold variants.
    pub resolution: usize,
    pub per_triangle_quota: usize,
    pub n_entropy_bins: usize,
    pub target_degree: usize,
    // Mechanistic variants.
    pub cycle_len: usize,
    pub copies_per_shape: usize,
    pub k_clusters: usize,
    // Classification variant.
    pub multi_task: bool,
}

impl Default for GraphBlock {
    fn default() -> Self {
        GraphBlock {
            variant: Variant::Cliques,
            noise_rate: 0.0,
            resolution: 6,
            per_triangle_quota: 2,
            n_entropy_bins: 4,
            target_degree: 8,
            cycle_len: 48,
            copies_per_shape: 4,
            k_clusters: 12,
            multi_task: false,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderBlock {
    pub num_layers: usize,
    pub embed_dim: usize,
    pub num_heads: usize,
    pub pooling: Pooling,
}

impl Default for EncoderBlock {
    fn default() -> Self {
        EncoderBlock { num_layers: 2, embed_dim: 10, num_heads: 1, pooling: Pooling::Cls }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossName {
    Contrastive,
    Multisim,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossBlock {
    pub loss: LossName,
    pub lambda_si: f64,
    pub w_plus: f64,
    pub w_minus: f64,
    pub t: f64,
    pub mu_plus: f64,
    pub mu_minus: f64,
    pub neg_strategy: NegStrategy,
    pub mask_fraction: f64,
}

impl Default for LossBlock {
    fn default() -> Self {
        let ms = MultiSimilarityParams::default();
        let c = ContrastiveParams::default();
        LossBlock {
            loss: LossName::Contrastive,
            lambda_si: 0.1,
            w_plus: ms.w_plus,
            w_minus: ms.w_minus,
            t: ms.threshold,
            mu_plus: c.mu_plus,
            mu_minus: c.mu_minus,
            neg_strategy: NegStrategy::UniformNonneighbor,
            mask_fraction: DEFAULT_MASK_FRACTION,
        }
    }
}

impl LossBlock {
    pub fn si_kind(&self) -> SiLossKind {
        match self.loss {
            LossName::Contrastive => SiLossKind::Contrastive(ContrastiveParams {
                mu_plus: self.mu_plus,
                mu_minus: self.mu_minus,
            }),
            LossName::Multisim => SiLossKind::MultiSim(MultiSimilarityParams {
                w_plus: self.w_plus,
                w_minus: self.w_minus,
                threshold: self.t,
            }),
        }
    }

    pub fn si_spec(&self) -> SiSpec {
        SiSpec {
            kind: self.si_kind(),
            strategy: self.neg_strategy,
            mask_fraction: self.mask_fraction,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainBlock {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
}

impl Default for TrainBlock {
    // Plain SGD at a high rate is the regime where the two arms separate
    // cleanly: adaptive optimizers polish the masked objective enough that
    // its latent space passively absorbs most of what the graph would have
    // taught, while under noisy SGD only the SIPT arm organizes the pooled
    // space. Chosen from a sweep over optimizer/lr/batch/epochs on the
    // cliques reference setup.
    fn default() -> Self {
        TrainBlock { epochs: 200, batch_size: 16, learning_rate: 0.5, optimizer: OptimizerKind::Sgd }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalBlock {
    pub k: usize,
    pub slack: f64,
}

impl Default for EvalBlock {
    fn default() -> Self {
        EvalBlock { k: 3, slack: 0.05 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub corpus: CorpusBlock,
    pub graph: GraphBlock,
    pub encoder: EncoderBlock,
    pub loss: LossBlock,
    pub train: TrainBlock,
    pub eval: EvalBlock,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            corpus: CorpusBlock::default(),
            graph: GraphBlock::default(),
            encoder: EncoderBlock::default(),
            loss: LossBlock::default(),
            train: TrainBlock::default(),
            eval: EvalBlock::default(),
            seed: 0,
            out_dir: PathBuf::from("runs"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_file(path: &Path) -> Result<Self, StageError> {
        let text = at("config", std::fs::read_to_string(path))?;
        at("config", serde_json::from_str(&text))
    }

    fn train_config(&self, weights: TrainWeights) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            learning_rate: self.train.learning_rate,
            optimizer: self.train.optimizer,
            weights,
            seed: self.seed,
            ..TrainConfig::default()
        }
    }
}

/// Everything derived from the config before training: the corpus, the
/// training graph (noise already applied), per-node token sequences, and
/// the fine-tuning labels the evaluation grades against.
pub struct PreparedExperiment {
    pub corpus: Vec<Sample>,
    pub graph: Graph,
    pub ft_labels: Labeling,
    pub sequences: Vec<Vec<u32>>,
    pub encoder_config: EncoderConfig,
    pub surface: Option<SimplicialSurface>,
    pub placements: Option<Vec<PlacedSample>>,
}

/// Builds corpus, graph, labels, and node sequences for the configured
/// variant. Deterministic in the config.
pub fn prepare(config: &ExperimentConfig) -> Result<PreparedExperiment, StageError> {
    let c = &config.corpus;
    let mut model = at(
        "corpus",
        corpus::generate_topic_model(c.k, c.vocab, c.sharpness, rng::sub_seed(config.seed, "model")),
    )?;
    model.mixture_concentration = c.mixture_concentration;
    let samples =
        at("corpus", sample_corpus(&model, c.n, c.seq_len, rng::sub_seed(config.seed, "samples")))?;

    let g = &config.graph;
    let mut surface = None;
    let mut placements = None;
    let mut base_vocab = c.vocab;
    let (graph, ft_labels, sequences) = match g.variant {
        Variant::Cliques => {
            let graph = at("graph", cliques_graph(&samples))?;
            let labels = samples.iter().map(|s| s.topic_label).collect();
            let ft = at("graph", Labeling::new(labels, c.k as u32))?;
            let seqs = samples.iter().map(|s| s.tokens.clone()).collect();
            (graph, ft, seqs)
        }
        Variant::Plane | Variant::Moebius | Variant::Sphere | Variant::Torus => {
            let tiling = at("graph", build_tiling(g.variant.topology().unwrap(), g.resolution))?;
            let colored = at("graph", assign_topics(&tiling, c.k, config.seed))?;
            let placed = at(
                "graph",
                localize_samples(&colored, &samples, g.per_triangle_quota, g.n_entropy_bins, config.seed),
            )?;
            let dists = GeodesicIndex::new(&colored, &placed).all_placement_distances();
            if dists.len() < 2 {
                return Err(fail("graph", format!("only {} samples were placed", dists.len())));
            }
            let r = radius_for_target_degree(&dists, g.target_degree.min(dists.len() - 1));
            let graph = at("graph", graph_from_distances(&dists, r))?;
            let labels = placed.iter().map(|p| samples[p.sample_id].topic_label).collect();
            let ft = at("graph", Labeling::new(labels, c.k as u32))?;
            let seqs = placed.iter().map(|p| samples[p.sample_id].tokens.clone()).collect();
            surface = Some(colored);
            placements = Some(placed);
            (graph, ft, seqs)
        }
        Variant::Neighborhood | Variant::Motif | Variant::Structural => {
            let mg = at(
                "graph",
                build_motif_graph(g.cycle_len, &MotifTemplate::defaults(), g.copies_per_shape, config.seed),
            )?;
            let ft = match g.variant {
                Variant::Neighborhood => {
                    at("graph", homophily_labels(&mg.graph, g.k_clusters, config.seed))?
                }
                Variant::Motif => motif_labels(&mg),
                _ => at("graph", structural_labels(&mg.graph, g.k_clusters, config.seed))?,
            };
            let assignment = at("graph", assign_corpus_to_nodes(&samples, &ft, config.seed))?;
            let seqs = assignment.iter().map(|&i| samples[i].tokens.clone()).collect();
            (mg.graph, ft, seqs)
        }
        Variant::Classification => {
            let label_sets: Vec<Vec<u32>> = samples.iter().map(|s| vec![s.topic_label]).collect();
            let aug = at("graph", classification_graph(&label_sets, g.multi_task))?;
            let (class_seqs, ext_vocab) = class_node_sequences(&aug, c.vocab);
            base_vocab = ext_vocab;
            let mut seqs: Vec<Vec<u32>> = samples.iter().map(|s| s.tokens.clone()).collect();
            seqs.extend(class_seqs);
            let mut labels: Vec<u32> = samples.iter().map(|s| s.topic_label).collect();
            labels.extend(aug.class_ids.iter().copied());
            let ft = at("graph", Labeling::new(labels, c.k as u32))?;
            (aug.graph, ft, seqs)
        }
    };

    let graph = if g.noise_rate > 0.0 {
        at("noise", add_edge_noise(&graph, g.noise_rate, config.seed))?
    } else {
        graph
    };

    let e = &config.encoder;
    let encoder_config = EncoderConfig {
        vocab_size: base_vocab + 2,
        embed_dim: e.embed_dim,
        num_layers: e.num_layers,
        num_heads: e.num_heads,
        max_seq_len: c.seq_len + 1,
        pooling: e.pooling,
    };
    at("encoder", encoder_config.validate())?;

    Ok(PreparedExperiment {
        corpus: samples,
        graph,
        ft_labels,
        sequences,
        encoder_config,
        surface,
        placements,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Arm {
    Mpt,
    Sipt,
}

impl Arm {
    pub fn dir_name(self) -> &'static str {
        match self {
            Arm::Mpt => "mpt",
            Arm::Sipt => "sipt",
        }
    }

    fn stage(self) -> &'static str {
        match self {
            Arm::Mpt => "pretrain-mpt",
            Arm::Sipt => "pretrain-sipt",
        }
    }
}

/// Writes the shared input artifacts: config echo, corpus, edge list,
/// labels, and (for manifold variants) surface and placements.
pub fn write_inputs(prepared: &PreparedExperiment, config: &ExperimentConfig) -> Result<(), StageError> {
    let out = &config.out_dir;
    at("artifacts", std::fs::create_dir_all(out))?;
    let echo = serde_json::to_string_pretty(config).expect("config serialization cannot fail");
    at("artifacts", write_atomic(&out.join("config.json"), echo.as_bytes()))?;
    at("artifacts", write_corpus(&out.join("corpus.jsonl"), &prepared.corpus))?;
    at("artifacts", prepared.graph.write_edges(&out.join("graph.edges")))?;
    at("artifacts", prepared.ft_labels.write_json(&out.join("labels.json")))?;
    if let Some(surface) = &prepared.surface {
        at("artifacts", surface.write_json(&out.join("surface.json")))?;
    }
    if let Some(placed) = &prepared.placements {
        at("artifacts", write_placements(&out.join("placements.json"), placed))?;
    }
    Ok(())
}

/// Trains one arm and writes its checkpoint, history, and embeddings under
/// `out_dir/{mpt,sipt}/`. Returns the trained parameters and embeddings.
pub fn train_arm(
    prepared: &PreparedExperiment,
    config: &ExperimentConfig,
    arm: Arm,
) -> Result<(EncoderParameters, Vec<Vec<f64>>), StageError> {
    let weights = match arm {
        Arm::Mpt => TrainWeights::MptOnly,
        Arm::Sipt => TrainWeights::Combined(LossWeights { lambda_si: config.loss.lambda_si }),
    };
    let tc = config.train_config(weights);
    let si = config.loss.si_spec();
    let (params, history) = at(
        arm.stage(),
        pretrain(&prepared.sequences, &prepared.graph, &si, &prepared.encoder_config, &tc),
    )?;
    let dir = config.out_dir.join(arm.dir_name());
    at(arm.stage(), std::fs::create_dir_all(&dir))?;
    at(arm.stage(), write_checkpoint(&dir.join("checkpoint.json"), &params))?;
    at(arm.stage(), write_history_csv(&dir.join("history.csv"), &history))?;
    let embeddings = at(arm.stage(), encode_all(&params, &prepared.sequences))?;
    at(arm.stage(), write_embeddings_csv(&dir.join("embeddings.csv"), &embeddings))?;
    Ok((params, embeddings))
}

/// Per-sample embeddings as CSV with header e0..e{d-1}.
pub fn write_embeddings_csv(path: &Path, embeddings: &[Vec<f64>]) -> std::io::Result<()> {
    let dim = embeddings.first().map_or(0, Vec::len);
    let mut text = String::new();
    let header: Vec<String> = (0..dim).map(|i| format!("e{i}")).collect();
    text.push_str(&header.join(","));
    text.push('\n');
    for row in embeddings {
        let cells: Vec<String> = row.iter().map(f64::to_string).collect();
        text.push_str(&cells.join(","));
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())
}

pub fn read_embeddings_csv(path: &Path) -> std::io::Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path)?;
    let bad = |msg: String| std::io::Error::new(std::io::ErrorKind::InvalidData, msg);
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let row: Result<Vec<f64>, _> = line.split(',').map(str::parse::<f64>).collect();
        rows.push(row.map_err(|e| bad(format!("{}:{}: {e}", path.display(), i + 1)))?);
    }
    Ok(rows)
}

/// One line of comparison.csv.
#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub variant: Variant,
    pub lc: f64,
    pub mpt_auroc: f64,
    pub sipt_auroc: f64,
}

impl ComparisonRow {
    pub fn delta(&self) -> f64 {
        self.sipt_auroc - self.mpt_auroc
    }
}

pub const COMPARISON_HEADER: &str = "variant,lc,mpt_auroc,sipt_auroc,delta";

pub fn write_comparison_csv(path: &Path, rows: &[ComparisonRow]) -> std::io::Result<()> {
    let mut text = String::from(COMPARISON_HEADER);
    text.push('\n');
    for r in rows {
        writeln!(
            text,
            "{},{},{},{},{}",
            r.variant.name(),
            r.lc,
            r.mpt_auroc,
            r.sipt_auroc,
            r.delta()
        )
        .expect("string write");
    }
    write_atomic(path, text.as_bytes())
}

/// Both arms' evaluation reports.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentOutcome {
    pub mpt: EvalReport,
    pub sipt: EvalReport,
}

/// Evaluates both arms against the training graph and fine-tuning labels,
/// and writes report.json plus comparison.csv.
pub fn evaluate_arms(
    prepared: &PreparedExperiment,
    config: &ExperimentConfig,
    mpt_embeddings: &[Vec<f64>],
    sipt_embeddings: &[Vec<f64>],
) -> Result<ExperimentOutcome, StageError> {
    let distance = config.loss.si_kind().recovery_distance();
    let mpt = at(
        "evaluate",
        theory_report(
            &prepared.graph,
            &prepared.ft_labels,
            mpt_embeddings,
            config.eval.k,
            config.eval.slack,
            distance,
        ),
    )?;
    let sipt = at(
        "evaluate",
        theory_report(
            &prepared.graph,
            &prepared.ft_labels,
            sipt_embeddings,
            config.eval.k,
            config.eval.slack,
            distance,
        ),
    )?;
    let outcome = ExperimentOutcome { mpt, sipt };
    let report = serde_json::to_string_pretty(&outcome).expect("report serialization cannot fail");
    at("evaluate", write_atomic(&config.out_dir.join("report.json"), report.as_bytes()))?;
    let row = ComparisonRow {
        variant: config.graph.variant,
        lc: outcome.mpt.lc,
        mpt_auroc: outcome.mpt.knn_macro_auroc,
        sipt_auroc: outcome.sipt.knn_macro_auroc,
    };
    at("evaluate", write_comparison_csv(&config.out_dir.join("comparison.csv"), &[row]))?;
    Ok(outcome)
}

/// The full pipeline: prepare, write inputs, train both arms, evaluate.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome, StageError> {
    let prepared = prepare(config)?;
    write_inputs(&prepared, config)?;
    let (_, mpt_embeddings) = train_arm(&prepared, config, Arm::Mpt)?;
    let (_, sipt_embeddings) = train_arm(&prepared, config, Arm::Sipt)?;
    evaluate_arms(&prepared, config, &mpt_embeddings, &sipt_embeddings)
}

/// Re-evaluates existing checkpoints under the config's output directory
/// (the deterministic inputs are rebuilt in memory).
pub fn evaluate_from_dir(config: &ExperimentConfig) -> Result<ExperimentOutcome, StageError> {
    let prepared = prepare(config)?;
    let mut embeddings = Vec::new();
    for arm in [Arm::Mpt, Arm::Sipt] {
        let path = config.out_dir.join(arm.dir_name()).join("checkpoint.json");
        let params = at("evaluate", read_checkpoint(&path))?;
        embeddings.push(at("evaluate", encode_all(&params, &prepared.sequences))?);
    }
    evaluate_arms(&prepared, config, &embeddings[0], &embeddings[1])
}

/// One row of the noise-sweep CSV.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRow {
    pub rate: f64,
    pub mpt_auroc: f64,
    pub sipt_auroc: f64,
}

pub const SWEEP_HEADER: &str = "rate,mpt_auroc,sipt_auroc";

/// Default noise rates for the sweep.
pub const DEFAULT_NOISE_RATES: [f64; 5] = [0.0, 0.05, 0.10, 0.15, 0.50];

/// Noise sweep on the cliques variant: the MPT arm is trained once (its
/// objective never reads the graph), the SIPT arm re-trains per rate on a
/// freshly noised graph. Writes per-rate artifact directories plus a
/// plot-ready noise_sweep.csv at the sweep root.
pub fn run_noise_sweep(
    config: &ExperimentConfig,
    rates: &[f64],
) -> Result<Vec<SweepRow>, StageError> {
    if config.graph.variant != Variant::Cliques {
        return Err(fail(
            "noise-sweep",
            format!("noise sweep requires the cliques variant, got {}", config.graph.variant.name()),
        ));
    }
    let root = config.out_dir.clone();

    // Shared MPT arm at the sweep root.
    let mut base = config.clone();
    base.graph.noise_rate = 0.0;
    let prepared_base = prepare(&base)?;
    at("artifacts", std::fs::create_dir_all(&root))?;
    let mut base_root = base.clone();
    base_root.out_dir = root.clone();
    let (_, mpt_embeddings) = train_arm(&prepared_base, &base_root, Arm::Mpt)?;

    let mut rows = Vec::with_capacity(rates.len());
    for &rate in rates {
        let mut cfg = config.clone();
        cfg.graph.noise_rate = rate;
        cfg.out_dir = root.join(format!("rate-{rate}"));
        let prepared = prepare(&cfg)?;
        write_inputs(&prepared, &cfg)?;
        let (_, sipt_embeddings) = train_arm(&prepared, &cfg, Arm::Sipt)?;
        let outcome = evaluate_arms(&prepared, &cfg, &mpt_embeddings, &sipt_embeddings)?;
        rows.push(SweepRow {
            rate,
            mpt_auroc: outcome.mpt.knn_macro_auroc,
            sipt_auroc: outcome.sipt.knn_macro_auroc,
        });
    }

    let mut text = String::from(SWEEP_HEADER);
    text.push('\n');
    for r in &rows {
        writeln!(text, "{},{},{}", r.rate, r.mpt_auroc, r.sipt_auroc).expect("string write");
    }
    at("artifacts", write_atomic(&root.join("noise_sweep.csv"), text.as_bytes()))?;
    Ok(rows)
}
