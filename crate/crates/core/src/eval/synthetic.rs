//! Planted-cluster session generator and its cluster-vote oracle.

use crate::data::{build_corpus, Example, RawEvent, SessionCorpus};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_items: usize,
    pub n_clusters: usize,
    pub n_sessions: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Probability that an event stays inside the session's cluster.
    pub intra_cluster_prob: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_items: 200,
            n_clusters: 10,
            n_sessions: 5000,
            min_len: 3,
            max_len: 10,
            intra_cluster_prob: 1.0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_items == 0 || self.n_clusters == 0 || self.n_items % self.n_clusters != 0 {
            return Err(Error::Config(format!(
                "{} items cannot be divided into {} equal clusters",
                self.n_items, self.n_clusters
            )));
        }
        if self.n_sessions == 0 {
            return Err(Error::Config("need at least one session".into()));
        }
        if self.min_len < 2 || self.min_len > self.max_len {
            return Err(Error::Config(format!(
                "session length range {}..={} must satisfy 2 ≤ min ≤ max",
                self.min_len, self.max_len
            )));
        }
        if !(0.0..=1.0).contains(&self.intra_cluster_prob) {
            return Err(Error::Config(format!(
                "intra-cluster probability must be in [0, 1], got {}",
                self.intra_cluster_prob
            )));
        }
        Ok(())
    }

    pub fn cluster_size(&self) -> usize {
        self.n_items / self.n_clusters
    }
}

/// Raw id of generated item `i`; its cluster is `i / cluster_size`.
pub fn synthetic_item_id(i: usize) -> String {
    format!("item{i}")
}

/// Each session picks a cluster uniformly and a length uniformly in range;
/// every event is an in-cluster item with probability `intra_cluster_prob`,
/// otherwise a uniform catalog item. Timestamps increase with event order.
pub fn make_synthetic_corpus<R: Rng + ?Sized>(cfg: &SyntheticConfig, rng: &mut R) -> Result<SessionCorpus> {
    cfg.validate()?;
    let size = cfg.cluster_size();
    let mut events = Vec::new();
    let mut clock = 0u64;
    for s in 0..cfg.n_sessions {
        let cluster = rng.random_range(0..cfg.n_clusters);
        let len = rng.random_range(cfg.min_len..=cfg.max_len);
        for _ in 0..len {
            let item = if rng.random::<f64>() < cfg.intra_cluster_prob {
                cluster * size + rng.random_range(0..size)
            } else {
                rng.random_range(0..cfg.n_items)
            };
            events.push(RawEvent {
                session_id: format!("s{s}"),
                item_id: synthetic_item_id(item),
                timestamp: clock,
            });
            clock += 1;
        }
    }
    build_corpus(&events, 1, 2)
}

/// Scores every item by how many prefix items share its planted cluster.
/// With `intra_cluster_prob = 1` this is Bayes-optimal for Recall@K when
/// `K ≥ cluster_size`.
pub struct ClusterOracle {
    /// Cluster of each corpus item index.
    cluster_of: Vec<usize>,
    n_clusters: usize,
}

impl ClusterOracle {
    pub fn new(corpus: &SessionCorpus, cfg: &SyntheticConfig) -> Result<Self> {
        let size = cfg.cluster_size();
        let cluster_of = corpus
            .vocab
            .raw_ids()
            .iter()
            .map(|raw| {
                raw.strip_prefix("item")
                    .and_then(|n| n.parse::<usize>().ok())
                    .filter(|&i| i < cfg.n_items)
                    .map(|i| i / size)
                    .ok_or_else(|| Error::Format(format!("{raw:?} is not a generated item id")))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            cluster_of,
            n_clusters: cfg.n_clusters,
        })
    }

    pub fn scores(&self, examples: &[Example]) -> Tensor {
        let m = self.cluster_of.len();
        let mut out = Vec::with_capacity(examples.len() * m);
        for e in examples {
            let mut votes = vec![0.0; self.n_clusters];
            for &i in &e.prefix {
                votes[self.cluster_of[i]] += 1.0;
            }
            out.extend(self.cluster_of.iter().map(|&c| votes[c]));
        }
        Tensor::from_vec(vec![examples.len(), m], out).expect("finite votes")
    }
}
