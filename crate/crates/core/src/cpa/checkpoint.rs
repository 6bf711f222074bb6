//! `CPA1` binary checkpoints.
//!
//! Little-endian layout: magic `b"CPA1"`, then `d0`, `d1`, hops, `H` and the
//! number of text rows as u32, then the embedding table (row-major f64),
//! every `W1` in hop order, then every `W2` in hop order. Text row order
//! matches the training id list stored beside the checkpoint.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;

use super::{CpaDims, CpaModel};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"CPA1";

pub fn write_checkpoint<W: Write>(model: &CpaModel, mut w: W) -> Result<()> {
    let d = model.dims;
    w.write_all(MAGIC)?;
    for n in [d.embed_dim, d.hidden_dim, d.hops, d.topics_per_stance, d.n_texts] {
        let n = u32::try_from(n).map_err(|_| Error::invalid(format!("{n} does not fit in u32")))?;
        w.write_u32::<LittleEndian>(n)?;
    }
    let mut put = |m: &Array2<f64>| -> Result<()> {
        for &v in m.iter() {
            w.write_f64::<LittleEndian>(v)?;
        }
        Ok(())
    };
    put(model.table())?;
    for id in model.w1.iter().chain(&model.w2) {
        put(&model.params.get(*id).data)?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R, leaky_slope: f64) -> Result<CpaModel> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::BadMagic {
            path: "<checkpoint stream>".into(),
            expected: "CPA1",
        });
    }
    let mut header = [0u32; 5];
    r.read_u32_into::<LittleEndian>(&mut header)?;
    let [d0, d1, hops, h, n_texts] = header.map(|v| v as usize);
    let dims = CpaDims {
        embed_dim: d0,
        hidden_dim: d1,
        hops,
        topics_per_stance: h,
        n_texts,
    };
    let mut take = |rows: usize, cols: usize| -> Result<Array2<f64>> {
        let mut buf = vec![0f64; rows * cols];
        r.read_f64_into::<LittleEndian>(&mut buf)?;
        Ok(Array2::from_shape_vec((rows, cols), buf).expect("length matches shape"))
    };
    let table = take(dims.n_nodes(), d0)?;
    let mut w1 = Vec::with_capacity(hops);
    for k in 0..hops {
        let (a, b) = dims.layer_shape(k);
        w1.push(take(a, b)?);
    }
    let mut w2 = Vec::with_capacity(hops);
    for k in 0..hops {
        let (a, b) = dims.layer_shape(k);
        w2.push(take(a, b)?);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Corrupt {
            path: "<checkpoint stream>".into(),
            message: "trailing bytes after weights".into(),
        });
    }
    CpaModel::from_parts(dims, table, w1, w2, leaky_slope)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn round_trip_preserves_bits() {
        let texts = Array2::from_shape_fn((3, 4), |(i, j)| (i * 4 + j) as f64 / 7.0);
        let labels = Array2::from_shape_fn((3, 4), |(i, j)| -((i + j) as f64) / 3.0);
        let m = CpaModel::new(texts.view(), labels.view(), 2, 3, 2, 0.01, 9).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&m, &mut buf).unwrap();
        let n = m.dims.n_nodes();
        assert_eq!(buf.len(), 4 + 20 + 8 * (n * 4 + 2 * (4 * 3 + 3 * 3)));
        let back = read_checkpoint(buf.as_slice(), 0.01).unwrap();
        assert_eq!(back.dims, m.dims);
        assert_eq!(back.table(), m.table());
        assert_eq!(back.weights(), m.weights());

        let mut bad = buf.clone();
        bad[3] = b'0';
        assert!(matches!(
            read_checkpoint(bad.as_slice(), 0.01),
            Err(Error::BadMagic { .. })
        ));
        assert!(read_checkpoint(&buf[..buf.len() - 1], 0.01).is_err());
        buf.push(0);
        assert!(matches!(
            read_checkpoint(buf.as_slice(), 0.01),
            Err(Error::Corrupt { .. })
        ));
    }
}
