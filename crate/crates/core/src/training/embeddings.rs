//! `EMB1` precomputed encoder vectors.
//!
//! Layout, little-endian: magic `b"EMB1"`, u32 record count, u32 dim, then
//! per record a u32 id byte length, the UTF-8 id, a u32 token count `T` and
//! `T * dim` f32 values. Row 0 of every record is the pooled vector; a
//! record with `T = 1` is pooled-only. Targets use ids `target:<name>` and
//! labels `label:<favor|none|against>`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2, ArrayView2};

use crate::corpus::{Dataset, Stance};
use crate::error::{Error, Result};

/// Width of the encoder vectors this pipeline expects.
pub const ENCODER_DIM: usize = 768;

const MAGIC: &[u8; 4] = b"EMB1";

pub fn target_key(target: &str) -> String {
    format!("target:{target}")
}

pub fn label_key(stance: Stance) -> String {
    format!("label:{}", stance.key())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderStore {
    dim: usize,
    records: BTreeMap<String, Array2<f32>>,
}

impl EncoderStore {
    pub fn new(dim: usize) -> Self {
        EncoderStore {
            dim,
            records: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn insert(&mut self, id: impl Into<String>, vectors: Array2<f32>) -> Result<()> {
        let id = id.into();
        if vectors.nrows() == 0 {
            return Err(Error::invalid(format!("record {id:?} has no vectors")));
        }
        if vectors.ncols() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: vectors.ncols(),
            });
        }
        if self.records.contains_key(&id) {
            return Err(Error::DuplicateId(id));
        }
        self.records.insert(id, vectors);
        Ok(())
    }

    pub fn contains(&self, id: &str) -> bool {
        self.records.contains_key(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.records.keys().map(String::as_str)
    }

    pub fn record(&self, id: &str) -> Result<ArrayView2<'_, f32>> {
        self.records
            .get(id)
            .map(|a| a.view())
            .ok_or_else(|| Error::MissingIds(vec![id.to_string()]))
    }

    pub fn pooled(&self, id: &str) -> Result<Array1<f64>> {
        Ok(self.record(id)?.row(0).mapv(f64::from))
    }

    /// All token rows of a record as f64.
    pub fn token_matrix(&self, id: &str) -> Result<Array2<f64>> {
        Ok(self.record(id)?.mapv(f64::from))
    }

    pub fn target(&self, target: &str) -> Result<Array1<f64>> {
        self.pooled(&target_key(target))
    }

    pub fn label(&self, stance: Stance) -> Result<Array1<f64>> {
        self.pooled(&label_key(stance))
    }

    /// Lists every example, target and label id the dataset needs that the
    /// store lacks.
    pub fn check_coverage(&self, ds: &Dataset) -> Result<()> {
        let mut missing: Vec<String> = ds
            .examples
            .iter()
            .map(|e| e.id.clone())
            .chain(ds.targets.iter().map(|t| target_key(t)))
            .chain(Stance::ALL.iter().map(|&s| label_key(s)))
            .filter(|id| !self.contains(id))
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            missing.sort();
            missing.dedup();
            Err(Error::MissingIds(missing))
        }
    }
}

pub fn read_embeddings<R: Read>(mut r: R, expected_dim: usize) -> Result<EncoderStore> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::BadMagic {
            path: "<embedding stream>".into(),
            expected: "EMB1",
        });
    }
    let count = r.read_u32::<LittleEndian>()? as usize;
    let dim = r.read_u32::<LittleEndian>()? as usize;
    if dim != expected_dim {
        return Err(Error::DimensionMismatch {
            expected: expected_dim,
            found: dim,
        });
    }
    let mut store = EncoderStore::new(dim);
    for _ in 0..count {
        let len = r.read_u32::<LittleEndian>()? as usize;
        let mut id = vec![0u8; len];
        r.read_exact(&mut id)?;
        let id = String::from_utf8(id).map_err(|e| Error::Corrupt {
            path: "<embedding stream>".into(),
            message: format!("record id is not UTF-8: {e}"),
        })?;
        let t = r.read_u32::<LittleEndian>()? as usize;
        let mut values = vec![0f32; t * dim];
        r.read_f32_into::<LittleEndian>(&mut values)?;
        let vectors = Array2::from_shape_vec((t, dim), values).expect("length matches shape");
        store.insert(id, vectors)?;
    }
    Ok(store)
}

pub fn write_embeddings<W: Write>(store: &EncoderStore, mut w: W) -> Result<()> {
    let u32_of = |n: usize| u32::try_from(n).map_err(|_| Error::invalid(format!("{n} does not fit in u32")));
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(u32_of(store.len())?)?;
    w.write_u32::<LittleEndian>(u32_of(store.dim)?)?;
    for (id, vectors) in &store.records {
        w.write_u32::<LittleEndian>(u32_of(id.len())?)?;
        w.write_all(id.as_bytes())?;
        w.write_u32::<LittleEndian>(u32_of(vectors.nrows())?)?;
        for &v in vectors.iter() {
            w.write_f32::<LittleEndian>(v)?;
        }
    }
    Ok(())
}

pub fn load_embeddings(path: &Path, expected_dim: usize) -> Result<EncoderStore> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_embeddings(BufReader::new(file), expected_dim).map_err(|e| match e {
        Error::BadMagic { expected, .. } => Error::BadMagic {
            path: path.to_path_buf(),
            expected,
        },
        Error::RawIo(source) => Error::io(path, source),
        other => other,
    })
}

pub fn save_embeddings(store: &EncoderStore, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_embeddings(store, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_pooled_record() {
        let mut store = EncoderStore::new(ENCODER_DIM);
        store.insert("a", Array2::from_elem((1, ENCODER_DIM), 0.5)).unwrap();
        let mut buf = Vec::new();
        write_embeddings(&store, &mut buf).unwrap();
        let back = read_embeddings(buf.as_slice(), ENCODER_DIM).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back.pooled("a").unwrap().len(), ENCODER_DIM);
    }

    #[test]
    fn wrong_dimension_rejected() {
        let mut store = EncoderStore::new(300);
        store.insert("a", Array2::zeros((2, 300))).unwrap();
        let mut buf = Vec::new();
        write_embeddings(&store, &mut buf).unwrap();
        assert!(matches!(
            read_embeddings(buf.as_slice(), ENCODER_DIM),
            Err(Error::DimensionMismatch { expected: 768, found: 300 })
        ));
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let mut store = EncoderStore::new(4);
        store
            .insert("x", Array2::from_shape_fn((3, 4), |(i, j)| (i as f32 - j as f32) / 3.0))
            .unwrap();
        store.insert("label:favor", Array2::from_elem((1, 4), f32::MIN_POSITIVE)).unwrap();
        store.insert("ünï", Array2::from_elem((1, 4), -0.0)).unwrap();
        let mut buf = Vec::new();
        write_embeddings(&store, &mut buf).unwrap();
        let back = read_embeddings(buf.as_slice(), 4).unwrap();
        let mut again = Vec::new();
        write_embeddings(&back, &mut again).unwrap();
        assert_eq!(buf, again);
        for id in store.ids() {
            let a = store.record(id).unwrap();
            let b = back.record(id).unwrap();
            assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn bad_magic_and_truncation() {
        let mut store = EncoderStore::new(2);
        store.insert("x", Array2::zeros((1, 2))).unwrap();
        let mut buf = Vec::new();
        write_embeddings(&store, &mut buf).unwrap();
        assert!(read_embeddings(&buf[..buf.len() - 2], 2).is_err());
        buf[0] = b'Z';
        assert!(matches!(read_embeddings(buf.as_slice(), 2), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn duplicate_and_missing_ids() {
        let mut store = EncoderStore::new(2);
        store.insert("x", Array2::zeros((1, 2))).unwrap();
        assert!(matches!(store.insert("x", Array2::zeros((1, 2))), Err(Error::DuplicateId(_))));
        assert!(matches!(store.pooled("y"), Err(Error::MissingIds(ids)) if ids == ["y"]));
    }
}
