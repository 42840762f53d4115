//! Ranking metrics, the loss-rewrite harness, consistency probes and
//! synthetic corpora.

mod consistency;
mod lemma;
mod metrics;
mod synthetic;

pub use consistency::{choose_probes, consistency_report, ConsistencyReport, EncoderConsistency, DEFAULT_K_MAX, DEFAULT_PROBES};
pub use lemma::{pearson, verify_lemma, LemmaInstance, LemmaReport, LemmaStratum, NormMode};
pub use metrics::{evaluate, example_ranks, rank_metrics, rank_of, MetricsReport};
pub use synthetic::{make_synthetic_corpus, synthetic_item_id, ClusterOracle, SyntheticConfig};
