//! Binary checkpoint format.
//!
//! ```text
//! magic        8 bytes   "ARNNCKPT"
//! version      u32 LE    CHECKPOINT_VERSION
//! header_len   u32 LE    byte length of the header text
//! header       UTF-8     "key=value\n" lines: kind, hidden, embed, vocab,
//!                        topics, vocab_hash, arrays
//! then `arrays` times:
//!   name_len   u16 LE
//!   name       UTF-8
//!   rows       u64 LE
//!   cols       u64 LE
//!   data       rows*cols f64 LE, row-major
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};

use super::{Model, ModelDims, ModelKind};
use crate::error::{Error, Result};
use crate::numeric::Parameters;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ARNNCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CheckpointHeader {
    pub version: u32,
    pub kind: ModelKind,
    pub dims: ModelDims,
    pub vocab_hash: String,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn write_checkpoint<W: Write>(mut w: W, model: &Model, vocab_hash: &str) -> Result<()> {
    let arrays = model.params.arrays();
    let header = format!(
        "kind={}\nhidden={}\nembed={}\nvocab={}\ntopics={}\nvocab_hash={}\narrays={}\n",
        model.kind,
        model.dims.hidden,
        model.dims.embed,
        model.dims.vocab,
        model.dims.topics,
        vocab_hash,
        arrays.len()
    );
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(header.len() as u32).to_le_bytes())?;
    w.write_all(header.as_bytes())?;
    for (name, m) in arrays {
        w.write_all(&(name.len() as u16).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(m.rows() as u64).to_le_bytes())?;
        w.write_all(&(m.cols() as u64).to_le_bytes())?;
        for v in m.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u16<R: Read>(r: &mut R) -> Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(CheckpointHeader, Model)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported format version {version}")));
    }
    let len = read_u32(&mut r)? as usize;
    let mut text = vec![0u8; len];
    r.read_exact(&mut text)?;
    let text = String::from_utf8(text).map_err(|_| bad("header is not UTF-8"))?;
    let fields: BTreeMap<&str, &str> = text.lines().filter_map(|l| l.split_once('=')).collect();
    let get = |k: &str| fields.get(k).copied().ok_or_else(|| bad(format!("missing header key {k}")));
    let num = |k: &str| -> Result<usize> {
        get(k)?
            .parse()
            .map_err(|_| bad(format!("header key {k} is not a count")))
    };
    let kind: ModelKind = get("kind")?.parse()?;
    let dims = ModelDims {
        hidden: num("hidden")?,
        embed: num("embed")?,
        vocab: num("vocab")?,
        topics: num("topics")?,
    };
    let header = CheckpointHeader {
        version,
        kind,
        dims,
        vocab_hash: get("vocab_hash")?.to_string(),
    };
    let n_arrays = num("arrays")?;
    let mut model = Model::with_scale(kind, dims, 0, 0.0)?;
    let expected: Vec<(&'static str, (usize, usize))> = model
        .params
        .arrays()
        .iter()
        .map(|(n, m)| (*n, m.shape()))
        .collect();
    if expected.len() != n_arrays {
        return Err(bad(format!(
            "{} arrays stored, {} expected for {kind}",
            n_arrays,
            expected.len()
        )));
    }
    let mut slots = model.params.arrays_mut();
    for (i, (name, shape)) in expected.into_iter().enumerate() {
        let nlen = read_u16(&mut r)? as usize;
        let mut nb = vec![0u8; nlen];
        r.read_exact(&mut nb)?;
        if nb != name.as_bytes() {
            return Err(bad(format!(
                "array {i} is {:?}, expected {name}",
                String::from_utf8_lossy(&nb)
            )));
        }
        let rows = read_u64(&mut r)? as usize;
        let cols = read_u64(&mut r)? as usize;
        if (rows, cols) != shape {
            return Err(bad(format!("array {name} is {rows}x{cols}, expected {shape:?}")));
        }
        let dst = slots[i].1.data_mut();
        let mut b = [0u8; 8];
        for v in dst.iter_mut() {
            r.read_exact(&mut b)?;
            *v = f64::from_le_bytes(b);
        }
        if dst.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("checkpoint array {name}")));
        }
    }
    drop(slots);
    Ok((header, model))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_every_kind() {
        let dims = ModelDims::new(3, 2, 8).with_topics(2);
        for kind in ModelKind::ALL {
            let m = Model::new(kind, dims, 17).unwrap();
            let mut buf = Vec::new();
            write_checkpoint(&mut buf, &m, "abc123").unwrap();
            assert_eq!(&buf[..8], CHECKPOINT_MAGIC);
            let (h, back) = read_checkpoint(buf.as_slice()).unwrap();
            assert_eq!(h.kind, kind);
            assert_eq!(h.vocab_hash, "abc123");
            assert_eq!(back, m);
        }
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let m = Model::new(ModelKind::Rnn, ModelDims::new(2, 2, 7), 1).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &m, "h").unwrap();
        assert!(read_checkpoint(&buf[..buf.len() - 3]).is_err());
        let mut wrong = buf.clone();
        wrong[0] = b'X';
        assert!(matches!(read_checkpoint(wrong.as_slice()), Err(Error::Checkpoint(_))));
        let mut v2 = buf.clone();
        v2[8] = 2;
        assert!(matches!(read_checkpoint(v2.as_slice()), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn layout_is_little_endian_f64() {
        let mut m = Model::with_scale(ModelKind::Rnn, ModelDims::new(1, 1, 7), 0, 0.0).unwrap();
        if let super::super::ModelParams::Lm(p) = &mut m.params {
            p.rnn.h.set(0, 0, 1.5);
        }
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &m, "x").unwrap();
        let hlen = u32::from_le_bytes(buf[12..16].try_into().unwrap()) as usize;
        let first = 16 + hlen;
        assert_eq!(u16::from_le_bytes(buf[first..first + 2].try_into().unwrap()), 1);
        assert_eq!(&buf[first + 2..first + 3], b"H");
        let data = first + 3 + 16;
        assert_eq!(f64::from_le_bytes(buf[data..data + 8].try_into().unwrap()), 1.5);
    }
}
