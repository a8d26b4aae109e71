//! Binary persistence of precomputed embeddings (`S3MAEMB1`) and the word
//! embedding table (`S3MAVOC1`).
//!
//! Values are f32 on disk and f64 in memory. Both formats are little-endian:
//!
//! ```text
//! S3MAEMB1 | u32 version=1 | u32 d | u32 n_frame | u64 item_count
//!   item*: u32 id_len, id bytes | u32 n_tokens, u32 token* |
//!          n_frame*d f32 frames | d f32 sentence
//! S3MAVOC1 | u32 version=1 | u32 d | u64 n_words
//!   token*: u32 len, UTF-8 bytes | n_words*d f32 embeddings
//! ```

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;

use crate::codec::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Vector};

pub const EMBEDDINGS_MAGIC: &[u8; 8] = b"S3MAEMB1";
pub const VOCAB_MAGIC: &[u8; 8] = b"S3MAVOC1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingItem {
    pub id: String,
    pub caption_token_ids: Vec<u32>,
    /// `n_frame × d`
    pub frame_embeddings: Matrix,
    pub sentence_embedding: Vector,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSet {
    pub d: usize,
    pub n_frame: usize,
    pub items: Vec<EmbeddingItem>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    pub tokens: Vec<String>,
    /// `n_words × d`
    pub embeddings: Matrix,
}

/// One broken invariant. `item` is `None` for set-level rules.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub item: Option<String>,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.item {
            Some(id) => write!(f, "item {id:?}: {}", self.rule),
            None => write!(f, "{}", self.rule),
        }
    }
}

impl EmbeddingSet {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Splits off the items from `at` onwards into a second set.
    pub fn split_at(mut self, at: usize) -> (EmbeddingSet, EmbeddingSet) {
        let tail = self.items.split_off(at.min(self.items.len()));
        let rest = EmbeddingSet {
            d: self.d,
            n_frame: self.n_frame,
            items: tail,
        };
        (self, rest)
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.items.iter().position(|it| it.id == id)
    }
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.tokens.len() != self.embeddings.rows() {
            out.push(Violation {
                item: None,
                rule: format!(
                    "token count {} != embedding rows {}",
                    self.tokens.len(),
                    self.embeddings.rows()
                ),
            });
        }
        let mut seen = HashSet::new();
        for t in &self.tokens {
            if !seen.insert(t.as_str()) {
                out.push(Violation {
                    item: Some(t.clone()),
                    rule: "duplicate token".into(),
                });
            }
        }
        if !self.embeddings.is_finite() {
            out.push(Violation {
                item: None,
                rule: "non-finite embedding value".into(),
            });
        }
        out
    }
}

/// Checks every invariant of `set`. Token ids are bounds-checked only when
/// `vocab_size` is known.
pub fn validate(set: &EmbeddingSet, vocab_size: Option<usize>) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for it in &set.items {
        let mut push = |rule: String| {
            out.push(Violation {
                item: Some(it.id.clone()),
                rule,
            })
        };
        if !seen.insert(it.id.as_str()) {
            push("duplicate id".into());
        }
        let (r, c) = it.frame_embeddings.shape();
        if r != set.n_frame || c != set.d {
            push(format!(
                "frame embeddings are {r}x{c}, expected {}x{}",
                set.n_frame, set.d
            ));
        }
        if it.sentence_embedding.dim() != set.d {
            push(format!(
                "sentence embedding has dim {}, expected {}",
                it.sentence_embedding.dim(),
                set.d
            ));
        }
        if !it.frame_embeddings.is_finite() {
            push("non-finite frame value".into());
        }
        if !it.sentence_embedding.iter().all(|x| x.is_finite()) {
            push("non-finite sentence value".into());
        }
        if let Some(n) = vocab_size {
            if let Some(bad) = it.caption_token_ids.iter().find(|&&t| t as usize >= n) {
                push(format!("token id {bad} >= vocabulary size {n}"));
            }
        }
    }
    out
}

fn ensure_valid(v: Vec<Violation>) -> Result<()> {
    if v.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(v))
    }
}

pub fn encode_embeddings(set: &EmbeddingSet) -> Result<Vec<u8>> {
    ensure_valid(validate(set, None))?;
    let mut w = ByteWriter::with_magic(EMBEDDINGS_MAGIC);
    w.u32(FORMAT_VERSION);
    w.len_u32(set.d)?;
    w.len_u32(set.n_frame)?;
    w.u64(set.items.len() as u64);
    for it in &set.items {
        w.str(&it.id);
        w.len_u32(it.caption_token_ids.len())?;
        for t in &it.caption_token_ids {
            w.u32(*t);
        }
        w.f32s(it.frame_embeddings.data());
        w.f32s(&it.sentence_embedding);
    }
    Ok(w.finish())
}

pub fn decode_embeddings(bytes: &[u8]) -> Result<EmbeddingSet> {
    let mut r = ByteReader::with_magic(bytes, EMBEDDINGS_MAGIC)?;
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let d = r.u32()? as usize;
    let n_frame = r.u32()? as usize;
    let count = r.u64()?;
    let mut items = Vec::new();
    for _ in 0..count {
        let id = r.str()?;
        let n_tokens = r.u32()? as usize;
        let caption_token_ids = r.u32s(n_tokens)?;
        let frames = r.f32s(n_frame * d)?;
        let sentence = r.f32s(d)?;
        items.push(EmbeddingItem {
            id,
            caption_token_ids,
            frame_embeddings: Matrix::from_vec(n_frame, d, frames)?,
            sentence_embedding: Vector(sentence),
        });
    }
    r.finish()?;
    let set = EmbeddingSet { d, n_frame, items };
    ensure_valid(validate(&set, None))?;
    Ok(set)
}

pub fn write_embeddings(set: &EmbeddingSet, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_embeddings(set)?)?;
    Ok(())
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingSet> {
    decode_embeddings(&fs::read(path)?)
}

pub fn encode_vocabulary(vocab: &Vocabulary) -> Result<Vec<u8>> {
    ensure_valid(vocab.validate())?;
    let mut w = ByteWriter::with_magic(VOCAB_MAGIC);
    w.u32(FORMAT_VERSION);
    w.len_u32(vocab.dim())?;
    w.u64(vocab.tokens.len() as u64);
    for t in &vocab.tokens {
        w.str(t);
    }
    w.f32s(vocab.embeddings.data());
    Ok(w.finish())
}

pub fn decode_vocabulary(bytes: &[u8]) -> Result<Vocabulary> {
    let mut r = ByteReader::with_magic(bytes, VOCAB_MAGIC)?;
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let d = r.u32()? as usize;
    let n_words = r.u64()? as usize;
    // each token costs at least its 4-byte length prefix
    if n_words > bytes.len() / 4 {
        return Err(Error::TruncatedFile);
    }
    let mut tokens = Vec::with_capacity(n_words);
    for _ in 0..n_words {
        tokens.push(r.str()?);
    }
    let values = r.f32s(n_words * d)?;
    r.finish()?;
    let vocab = Vocabulary {
        tokens,
        embeddings: Matrix::from_vec(n_words, d, values)?,
    };
    ensure_valid(vocab.validate())?;
    Ok(vocab)
}

pub fn write_vocabulary(vocab: &Vocabulary, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_vocabulary(vocab)?)?;
    Ok(())
}

pub fn read_vocabulary(path: impl AsRef<Path>) -> Result<Vocabulary> {
    decode_vocabulary(&fs::read(path)?)
}
