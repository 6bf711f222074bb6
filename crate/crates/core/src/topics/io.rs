//! `LDA1` binary model files.
//!
//! Layout, all little-endian:
//!
//! | field            | type          |
//! |------------------|---------------|
//! | magic            | `b"LDA1"`     |
//! | topics `H`       | u32           |
//! | vocabulary `V`   | u32           |
//! | alpha            | f64           |
//! | beta             | f64           |
//! | trained sweeps   | u32           |
//! | fold-in sweeps   | u32           |
//! | fold-in seed     | u64           |
//! | counts           | `H*V` × u32, topic-major |
//!
//! The vocabulary itself is stored separately (one token per line).

use std::io::{Read, Write};
use std::sync::Arc;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde_json::json;

use super::LdaModel;
use crate::corpus::Vocabulary;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"LDA1";

pub fn write_lda<W: Write>(model: &LdaModel, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(to_u32(model.topics)?)?;
    w.write_u32::<LittleEndian>(to_u32(model.vocab.len())?)?;
    w.write_f64::<LittleEndian>(model.alpha)?;
    w.write_f64::<LittleEndian>(model.beta)?;
    w.write_u32::<LittleEndian>(to_u32(model.trained_sweeps)?)?;
    w.write_u32::<LittleEndian>(to_u32(model.fold_in_sweeps)?)?;
    w.write_u64::<LittleEndian>(model.seed)?;
    for &c in &model.topic_word {
        w.write_u32::<LittleEndian>(c)?;
    }
    Ok(())
}

pub fn read_lda<R: Read>(mut r: R, vocab: Arc<Vocabulary>) -> Result<LdaModel> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::BadMagic {
            path: "<lda stream>".into(),
            expected: "LDA1",
        });
    }
    let topics = r.read_u32::<LittleEndian>()? as usize;
    let v = r.read_u32::<LittleEndian>()? as usize;
    if v != vocab.len() {
        return Err(Error::DimensionMismatch {
            expected: vocab.len(),
            found: v,
        });
    }
    let alpha = r.read_f64::<LittleEndian>()?;
    let beta = r.read_f64::<LittleEndian>()?;
    let trained_sweeps = r.read_u32::<LittleEndian>()? as usize;
    let fold_in_sweeps = r.read_u32::<LittleEndian>()? as usize;
    let seed = r.read_u64::<LittleEndian>()?;
    let mut counts = vec![vec![0u32; v]; topics];
    for row in &mut counts {
        r.read_u32_into::<LittleEndian>(row)?;
    }
    let mut model = LdaModel::from_counts(vocab, counts, alpha, beta, fold_in_sweeps, seed)?;
    model.trained_sweeps = trained_sweeps;
    Ok(model)
}

/// Human-readable sidecar: the top `n` words of every topic.
pub fn top_words_json(model: &LdaModel, n: usize) -> serde_json::Value {
    let topics: Vec<Vec<&str>> = (0..model.topics)
        .map(|k| {
            model
                .top_words(k, n)
                .into_iter()
                .filter(|&w| model.count(k, w) > 0)
                .map(|w| model.vocab.token(w))
                .collect()
        })
        .collect();
    json!({ "topics": topics, "alpha": model.alpha, "beta": model.beta })
}

fn to_u32(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::invalid(format!("{n} does not fit in u32")))
}
