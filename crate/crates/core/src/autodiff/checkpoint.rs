//! Parameter checkpoints: JSON-text header plus a flat little-endian
//! binary blob. Round-trips bit-for-bit.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::store::ParamStore;
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"AFCK";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct BlockHeader {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    step: u64,
    blocks: Vec<BlockHeader>,
}

pub fn save_checkpoint(store: &ParamStore, step: u64, path: &Path) -> Result<()> {
    let header = Header {
        step,
        blocks: store
            .iter()
            .map(|(name, b)| BlockHeader {
                name: name.to_string(),
                shape: b.shape().to_vec(),
                trainable: b.trainable(),
                len: b.values().len(),
            })
            .collect(),
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| Error::Format(format!("checkpoint header encode: {e}")))?;

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(header_json.len() as u64).to_le_bytes())?;
    w.write_all(&header_json)?;
    for (_, block) in store.iter() {
        for v in block.values() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ParamStore, u64)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a checkpoint file".into()));
    }
    let mut buf4 = [0u8; 4];
    r.read_exact(&mut buf4)?;
    let version = u32::from_le_bytes(buf4);
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let mut buf8 = [0u8; 8];
    r.read_exact(&mut buf8)?;
    let header_len = u64::from_le_bytes(buf8) as usize;
    let mut header_json = vec![0u8; header_len];
    r.read_exact(&mut header_json)?;
    let header: Header = serde_json::from_slice(&header_json)
        .map_err(|e| Error::Format(format!("checkpoint header decode: {e}")))?;

    let mut store = ParamStore::new();
    for bh in &header.blocks {
        let mut values = vec![0.0f64; bh.len];
        for v in values.iter_mut() {
            r.read_exact(&mut buf8)?;
            *v = f64::from_le_bytes(buf8);
        }
        store.add_block(&bh.name, bh.shape.clone(), values, bh.trainable)?;
    }
    Ok((store, header.step))
}

/// Copy blocks with the given prefix from `src` over matching blocks in
/// `dst`; used to overlay a stage checkpoint onto a full field store.
pub fn overlay_blocks(dst: &mut ParamStore, src: &ParamStore, prefix: &str) -> Result<()> {
    let names: Vec<String> = src
        .names()
        .filter(|n| n.starts_with(prefix))
        .map(|s| s.to_string())
        .collect();
    for name in names {
        let values = src.values(&name)?.to_vec();
        if !dst.contains(&name) {
            let shape = src.block(&name)?.shape().to_vec();
            let trainable = src.block(&name)?.trainable();
            dst.add_block(&name, shape, values, trainable)?;
            continue;
        }
        let slot = dst.values_mut(&name)?;
        if slot.len() != values.len() {
            return Err(Error::Shape(format!(
                "overlay: block `{name}` length mismatch"
            )));
        }
        slot.copy_from_slice(&values);
    }
    Ok(())
}

/// A store restricted to blocks with the given prefix.
pub fn filter_blocks(src: &ParamStore, prefix: &str) -> Result<ParamStore> {
    let mut out = ParamStore::new();
    for (name, b) in src.iter() {
        if name.starts_with(prefix) {
            out.add_block(name, b.shape().to_vec(), b.values().to_vec(), b.trainable())?;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn bit_exact_round_trip() {
        let mut store = ParamStore::new();
        let mut rng = Rng::new(17);
        let vals: Vec<f64> = (0..257).map(|_| rng.normal() * 1e3).collect();
        store.add_block("a.w", vec![257], vals, true).unwrap();
        store
            .add_block("b.w", vec![2, 3], vec![0.1, -0.0, f64::MIN_POSITIVE, 1e300, -7.0, 3.5], false)
            .unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("test.ckpt");
        save_checkpoint(&store, 12345, &path).unwrap();
        let (loaded, step) = load_checkpoint(&path).unwrap();
        assert_eq!(step, 12345);
        for (name, block) in store.iter() {
            let lb = loaded.block(name).unwrap();
            assert_eq!(lb.shape(), block.shape());
            assert_eq!(lb.trainable(), block.trainable());
            let bits_a: Vec<u64> = block.values().iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u64> = lb.values().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
        }
    }

    #[test]
    fn rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"not a checkpoint").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Format(_))));
    }
}
