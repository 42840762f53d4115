//! From raw click logs to padded training batches.
//!
//! The flow is [`ingest`] → [`build_corpus`] → [`temporal_split`] →
//! [`expand_prefixes`] → [`batch_iter`]. A prepared corpus can be cached
//! on disk with [`write_corpus`] / [`read_corpus`].

mod batch;
mod cache;
mod corpus;
mod ingest;

pub use batch::{batch_iter, expand_prefixes, Batch, BatchIter, Example};
pub use cache::{decode_corpus, encode_corpus, read_corpus, write_corpus, CORPUS_MAGIC};
pub use corpus::{build_corpus, temporal_split, CorpusStats, Session, SessionCorpus, Split, Vocab};
pub use ingest::{ingest, parse_events, InputFormat, IngestReport, RawEvent};
