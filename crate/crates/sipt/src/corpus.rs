//! Synthetic topic-model corpora with exact topic mixtures.
//!
//! A generative stand-in for fitted topic models: topic-token distributions
//! are symmetric Dirichlet draws, per-sample mixtures are Dirichlet draws, and
//! tokens come i.i.d. from the mixture. Because the mixture is known exactly,
//! downstream constructions that consume topic probabilities (labels, simplex
//! coordinates, entropy bins) need no inference step.

use std::fs;
use std::io::{BufRead, BufReader, Write as _};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

/// Natural-log entropy of the uniform distribution on 3 outcomes; the top of
/// the entropy binning range.
pub const LN_3: f64 = 1.0986122886681098;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid dimensions: need K >= 3 and V >= K, got K={k}, V={v}")]
    InvalidDimension { k: usize, v: usize },
    #[error("invalid corpus request: need N >= 1 and seq_len >= 2, got N={n}, seq_len={seq_len}")]
    InvalidRequest { n: usize, seq_len: usize },
    #[error("degenerate mixture: fewer than 3 strictly positive topic probabilities")]
    DegenerateMixture,
    #[error("entropy binning needs at least 1 bin")]
    NoBins,
    #[error("corpus io: {0}")]
    Io(#[from] std::io::Error),
    #[error("corpus line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
}

/// A known generative topic model.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TopicModel {
    pub num_topics: usize,
    pub vocab_size: usize,
    /// One probability vector over the vocabulary per topic.
    pub topic_token_dists: Vec<Vec<f64>>,
    /// Dirichlet parameter for per-sample mixtures.
    pub mixture_concentration: f64,
}

/// One corpus entry: a token sequence plus its exact topic mixture.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Sample {
    pub id: usize,
    pub tokens: Vec<u32>,
    pub theta: Vec<f64>,
    #[serde(rename = "label")]
    pub topic_label: u32,
}

/// Draws the topic-token distributions from a symmetric Dirichlet.
pub fn generate_topic_model(
    num_topics: usize,
    vocab_size: usize,
    topic_sharpness: f64,
    seed: u64,
) -> Result<TopicModel, CorpusError> {
    if num_topics < 3 || vocab_size < num_topics {
        return Err(CorpusError::InvalidDimension { k: num_topics, v: vocab_size });
    }
    assert!(topic_sharpness > 0.0, "topic_sharpness must be positive");
    let mut rng = rng::stream(seed, "topic-model");
    let topic_token_dists =
        (0..num_topics).map(|_| dirichlet(topic_sharpness, vocab_size, &mut rng)).collect();
    Ok(TopicModel {
        num_topics,
        vocab_size,
        topic_token_dists,
        mixture_concentration: DEFAULT_MIXTURE_CONCENTRATION,
    })
}

/// Default Dirichlet parameter for per-sample topic mixtures. Small enough
/// that most samples concentrate on a few topics (giving a clear argmax
/// label), large enough that the top-3 entropy spectrum is well populated.
pub const DEFAULT_MIXTURE_CONCENTRATION: f64 = 0.4;

/// Draws N samples from the model: mixture, then i.i.d. tokens.
pub fn sample_corpus(
    model: &TopicModel,
    n: usize,
    seq_len: usize,
    seed: u64,
) -> Result<Vec<Sample>, CorpusError> {
    if n < 1 || seq_len < 2 {
        return Err(CorpusError::InvalidRequest { n, seq_len });
    }
    let mut rng = rng::stream(seed, "corpus-samples");
    let mut out = Vec::with_capacity(n);
    for id in 0..n {
        let theta = dirichlet(model.mixture_concentration, model.num_topics, &mut rng);
        let tokens = (0..seq_len)
            .map(|_| {
                let topic = categorical(&theta, &mut rng);
                categorical(&model.topic_token_dists[topic], &mut rng) as u32
            })
            .collect();
        let topic_label = argmax(&theta) as u32;
        out.push(Sample { id, tokens, theta, topic_label });
    }
    Ok(out)
}

/// Indices of the 3 largest mixture entries (ties to the smallest index) and
/// their probabilities renormalized to sum 1.
pub fn top3_simplex_coords(s: &Sample) -> Result<([usize; 3], [f64; 3]), CorpusError> {
    if s.theta.iter().filter(|&&p| p > 0.0).count() < 3 {
        return Err(CorpusError::DegenerateMixture);
    }
    let mut order: Vec<usize> = (0..s.theta.len()).collect();
    order.sort_by(|&a, &b| {
        s.theta[b].partial_cmp(&s.theta[a]).expect("theta must not contain NaN").then(a.cmp(&b))
    });
    let triple = [order[0], order[1], order[2]];
    let total: f64 = triple.iter().map(|&i| s.theta[i]).sum();
    let coords = [s.theta[triple[0]] / total, s.theta[triple[1]] / total, s.theta[triple[2]] / total];
    Ok((triple, coords))
}

/// Entropy bin of the renormalized top-3 coords: [0, ln 3] mapped linearly
/// onto `n_bins` bins, with entropy exactly ln 3 landing in the last bin.
pub fn entropy_bin(s: &Sample, n_bins: usize) -> Result<usize, CorpusError> {
    let (_, coords) = top3_simplex_coords(s)?;
    entropy_bin_of_coords(&coords, n_bins)
}

/// Same binning applied to already-extracted top-3 coords.
pub fn entropy_bin_of_coords(coords: &[f64; 3], n_bins: usize) -> Result<usize, CorpusError> {
    if n_bins == 0 {
        return Err(CorpusError::NoBins);
    }
    let h: f64 = coords.iter().map(|&p| if p > 0.0 { -p * p.ln() } else { 0.0 }).sum();
    let h = h.max(0.0);
    let bin = (h / LN_3 * n_bins as f64).floor() as usize;
    Ok(bin.min(n_bins - 1))
}

/// Writes the corpus as JSON lines.
pub fn write_corpus(path: &Path, corpus: &[Sample]) -> Result<(), CorpusError> {
    let mut buf = Vec::new();
    for s in corpus {
        serde_json::to_writer(&mut buf, s).map_err(|source| CorpusError::Parse { line: s.id + 1, source })?;
        buf.write_all(b"\n")?;
    }
    crate::fsutil::write_atomic(path, &buf)?;
    Ok(())
}

/// Reads a JSON-lines corpus.
pub fn read_corpus(path: &Path) -> Result<Vec<Sample>, CorpusError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s = serde_json::from_str(&line).map_err(|source| CorpusError::Parse { line: i + 1, source })?;
        out.push(s);
    }
    Ok(out)
}

/// Symmetric Dirichlet(alpha) draw of the given dimension.
///
/// Sampled in log space via the Gamma(alpha+1) boost: if G ~ Gamma(alpha+1)
/// and U ~ Uniform(0,1), then G * U^(1/alpha) ~ Gamma(alpha). Working with
/// ln G + ln(U)/alpha and normalizing through a shifted exp keeps tiny alpha
/// (e.g. 1e-3) from underflowing every coordinate to zero.
fn dirichlet<R: Rng>(alpha: f64, dim: usize, rng: &mut R) -> Vec<f64> {
    let gamma = Gamma::new(alpha + 1.0, 1.0).expect("alpha must be positive");
    let logs: Vec<f64> = (0..dim)
        .map(|_| {
            let g: f64 = gamma.sample(rng);
            let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            g.ln() + u.ln() / alpha
        })
        .collect();
    let mx = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logs.iter().map(|&l| (l - mx).exp()).collect();
    let total: f64 = out.iter().sum();
    for v in &mut out {
        *v /= total;
    }
    out
}

/// Inverse-CDF draw from a probability vector.
fn categorical<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Argmax with ties broken by the smallest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
