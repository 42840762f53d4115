use crate::data::{Batch, Example, Split};
use crate::error::{Error, Result};
use crate::model::{encode, score_all, ModelState};
use crate::tensor::Tensor;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub k: usize,
    pub recall_at_k: f64,
    pub mrr_at_k: f64,
    pub n_examples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl MetricsReport {
    /// Aggregates 1-based ranks; ranks beyond `k` count as misses.
    pub fn from_ranks(ranks: &[usize], k: usize) -> Self {
        let mut hits = 0usize;
        let mut rr = 0.0;
        for &r in ranks {
            if r <= k {
                hits += 1;
                rr += 1.0 / r as f64;
            }
        }
        let n = ranks.len();
        let denom = n.max(1) as f64;
        Self {
            k,
            recall_at_k: hits as f64 / denom,
            mrr_at_k: rr / denom,
            n_examples: n,
            split: None,
            label: String::new(),
            seed: None,
        }
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = Some(split);
        self
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }
}

/// 1-based rank of `target`: items scoring strictly higher, plus tied items
/// with a smaller index, plus one.
pub fn rank_of(scores: &[f64], target: usize) -> usize {
    let st = scores[target];
    let above = scores.iter().filter(|&&s| s > st).count();
    let tied_before = scores[..target].iter().filter(|&&s| s == st).count();
    1 + above + tied_before
}

fn check_k(k: usize, m: usize) -> Result<()> {
    if k == 0 || k > m {
        return Err(Error::Config(format!("cutoff k={k} must be in 1..={m} (catalog size)")));
    }
    Ok(())
}

/// Recall@K and MRR@K of `scores` (`[B, m]`) against `targets`.
pub fn rank_metrics(scores: &Tensor, targets: &[usize], k: usize) -> Result<MetricsReport> {
    let s = scores.shape();
    if s.len() != 2 || s[0] != targets.len() {
        return Err(Error::dim("rank_metrics", format!("scores {:?} for {} targets", s, targets.len())));
    }
    let m = s[1];
    check_k(k, m)?;
    if let Some(&bad) = targets.iter().find(|&&t| t >= m) {
        return Err(Error::Index {
            op: "rank_metrics",
            index: bad,
            bound: m,
        });
    }
    let ranks: Vec<usize> = targets.iter().enumerate().map(|(b, &t)| rank_of(scores.row(b), t)).collect();
    Ok(MetricsReport::from_ranks(&ranks, k))
}

/// Target ranks for every example, scored in batches of `batch_size`.
/// Batches run on the current rayon pool; results are in example order and
/// independent of the thread count.
pub fn example_ranks(state: &ModelState, examples: &[Example], batch_size: usize) -> Result<Vec<usize>> {
    let chunks: Vec<Result<Vec<usize>>> = examples
        .par_chunks(batch_size.max(1))
        .map(|chunk| {
            let batch = Batch::from_examples(chunk, state.pad_index());
            let enc = encode(state, &batch)?;
            let scores = score_all(state, &enc.h_s)?;
            Ok(batch.targets.iter().enumerate().map(|(b, &t)| rank_of(scores.row(b), t)).collect())
        })
        .collect();
    let mut out = Vec::with_capacity(examples.len());
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

/// Full-catalog Recall@K / MRR@K of a model over prefix examples.
pub fn evaluate(state: &ModelState, examples: &[Example], k: usize, batch_size: usize) -> Result<MetricsReport> {
    check_k(k, state.n_items)?;
    if examples.is_empty() {
        return Err(Error::EmptyCorpus("no examples to evaluate".into()));
    }
    let ranks = example_ranks(state, examples, batch_size)?;
    Ok(MetricsReport::from_ranks(&ranks, k))
}
