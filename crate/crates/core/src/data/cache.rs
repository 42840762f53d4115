//! Binary corpus cache.
//!
//! ```text
//! magic        5 bytes  "CORC1"
//! n_items      u64
//! n_items ×    { len u64, UTF-8 raw item id }
//! n_sessions   u64
//! n_sessions × { len u64, UTF-8 session id,
//!                start u64,
//!                split u8   (0 unassigned, 1 train, 2 valid, 3 test),
//!                n u64, n × item index u64 }
//! ```
//! All integers little-endian. Decoding rejects trailing bytes and
//! out-of-range item indices.

use super::{Session, SessionCorpus, Split, Vocab};
use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use std::path::Path;

pub const CORPUS_MAGIC: &[u8; 5] = b"CORC1";

pub fn encode_corpus(corpus: &SessionCorpus) -> Vec<u8> {
    let mut w = Writer::default();
    w.bytes(CORPUS_MAGIC);
    w.u64(corpus.vocab.len() as u64);
    for id in corpus.vocab.raw_ids() {
        w.str(id);
    }
    w.u64(corpus.sessions.len() as u64);
    for s in &corpus.sessions {
        w.str(&s.id);
        w.u64(s.start);
        w.u8(match s.split {
            None => 0,
            Some(Split::Train) => 1,
            Some(Split::Valid) => 2,
            Some(Split::Test) => 3,
        });
        w.u64(s.items.len() as u64);
        for &i in &s.items {
            w.u64(i as u64);
        }
    }
    w.buf
}

pub fn decode_corpus(bytes: &[u8]) -> Result<SessionCorpus> {
    let mut r = Reader::new(bytes, "corpus cache");
    r.magic(CORPUS_MAGIC)?;
    let n_items = r.len(8)?;
    let raw = (0..n_items).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
    let vocab = Vocab::from_raw(raw)?;
    let n_sessions = r.len(8)?;
    let mut sessions = Vec::with_capacity(n_sessions);
    for _ in 0..n_sessions {
        let id = r.str()?;
        let start = r.u64()?;
        let split = match r.u8()? {
            0 => None,
            1 => Some(Split::Train),
            2 => Some(Split::Valid),
            3 => Some(Split::Test),
            other => return Err(Error::Format(format!("corpus cache: unknown split tag {other}"))),
        };
        let n = r.len(8)?;
        let mut items = Vec::with_capacity(n);
        for _ in 0..n {
            let i = r.u64()? as usize;
            if i >= n_items {
                return Err(Error::Format(format!(
                    "corpus cache: item index {i} out of range for {n_items} items"
                )));
            }
            items.push(i);
        }
        sessions.push(Session { id, items, start, split });
    }
    r.finish()?;
    Ok(SessionCorpus { vocab, sessions })
}

pub fn write_corpus(path: &Path, corpus: &SessionCorpus) -> Result<()> {
    std::fs::write(path, encode_corpus(corpus)).map_err(|e| Error::io(path, e))
}

pub fn read_corpus(path: &Path) -> Result<SessionCorpus> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_corpus(&bytes)
}
