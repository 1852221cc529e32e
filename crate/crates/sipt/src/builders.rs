//! Cliques graphs and classification graphs with auxiliary class nodes.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Sample;
use crate::graph::{Graph, GraphError};

#[derive(Debug, Error)]
pub enum BuilderError {
    #[error("cliques graph needs a nonempty corpus")]
    EmptyCorpus,
    #[error("sample {0} has {1} labels; single-task mode requires exactly one")]
    MultiLabelInSingleTask(usize, usize),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// A graph over sample nodes followed by auxiliary class nodes.
#[derive(Clone, Debug)]
pub struct AugmentedGraph {
    pub graph: Graph,
    /// Sample nodes are 0..num_samples; class nodes fill the rest.
    pub num_samples: usize,
    /// Class id of each class node, indexed from num_samples upward.
    pub class_ids: Vec<u32>,
}

impl AugmentedGraph {
    pub fn num_class_nodes(&self) -> usize {
        self.class_ids.len()
    }

    /// Class id of an absolute node index, if it is a class node.
    pub fn class_of_node(&self, node: usize) -> Option<u32> {
        node.checked_sub(self.num_samples).map(|i| self.class_ids[i])
    }

    /// Writes the sidecar mapping class-node index -> class id.
    pub fn write_class_sidecar(&self, path: &Path) -> Result<(), BuilderError> {
        #[derive(Serialize)]
        struct Sidecar<'a> {
            num_samples: usize,
            class_of_node: &'a BTreeMap<String, u32>,
        }
        let map: BTreeMap<String, u32> = self
            .class_ids
            .iter()
            .enumerate()
            .map(|(i, &c)| ((self.num_samples + i).to_string(), c))
            .collect();
        let text = serde_json::to_string_pretty(&Sidecar {
            num_samples: self.num_samples,
            class_of_node: &map,
        })
        .expect("sidecar serialization cannot fail");
        crate::fsutil::write_atomic(path, text.as_bytes())
            .map_err(GraphError::from)?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskMode {
    SingleTask,
    MultiTask,
}

/// Connects samples that share a topic label into disjoint cliques.
pub fn cliques_graph(corpus: &[Sample]) -> Result<Graph, BuilderError> {
    if corpus.is_empty() {
        return Err(BuilderError::EmptyCorpus);
    }
    let mut by_label: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for s in corpus {
        by_label.entry(s.topic_label).or_default().push(s.id as u32);
    }
    let mut edges = Vec::new();
    for nodes in by_label.values() {
        for (i, &u) in nodes.iter().enumerate() {
            for &v in &nodes[i + 1..] {
                edges.push((u, v));
            }
        }
    }
    Ok(Graph::from_edges(corpus.len(), &edges)?)
}

/// Bipartite sample-to-class graph with one auxiliary node per distinct class.
pub fn classification_graph(
    labels: &[Vec<u32>],
    multi_task: bool,
) -> Result<AugmentedGraph, BuilderError> {
    if !multi_task {
        if let Some((i, ls)) = labels.iter().enumerate().find(|(_, ls)| ls.len() != 1) {
            return Err(BuilderError::MultiLabelInSingleTask(i, ls.len()));
        }
    }
    let mut distinct: Vec<u32> = labels.iter().flatten().copied().collect();
    distinct.sort_unstable();
    distinct.dedup();
    let class_node: BTreeMap<u32, u32> = distinct
        .iter()
        .enumerate()
        .map(|(i, &c)| (c, (labels.len() + i) as u32))
        .collect();
    let mut edges = Vec::new();
    for (sample, ls) in labels.iter().enumerate() {
        let mut seen = Vec::new();
        for &l in ls {
            if seen.contains(&l) {
                continue;
            }
            seen.push(l);
            edges.push((sample as u32, class_node[&l]));
        }
    }
    let graph = Graph::from_edges(labels.len() + distinct.len(), &edges)?;
    Ok(AugmentedGraph { graph, num_samples: labels.len(), class_ids: distinct })
}

/// Token sequences standing in for class nodes: each class node becomes a
/// single reserved token appended after the corpus vocabulary. Returns the
/// sequences (one per class node, in class-node order) and the extended
/// vocabulary size.
pub fn class_node_sequences(aug: &AugmentedGraph, base_vocab: usize) -> (Vec<Vec<u32>>, usize) {
    let seqs = (0..aug.class_ids.len()).map(|i| vec![(base_vocab + i) as u32]).collect();
    (seqs, base_vocab + aug.class_ids.len())
}
