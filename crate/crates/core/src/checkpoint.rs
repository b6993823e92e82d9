//! Versioned binary checkpoint: magic, version, model config echo, a free
//! JSON metadata blob (the harness stores the full RunConfig and seed), and
//! the named parameter arrays with shapes. Little-endian f64 throughout, so
//! save/load round-trips bit-exactly and identical models produce identical
//! bytes.

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"LOGLINCK";
const VERSION: u32 = 1;

fn write_bytes<W: Write>(out: &mut W, bytes: &[u8]) -> Result<()> {
    out.write_all(&(bytes.len() as u64).to_le_bytes())?;
    out.write_all(bytes)?;
    Ok(())
}

fn read_bytes<R: Read>(input: &mut R) -> Result<Vec<u8>> {
    let mut len8 = [0u8; 8];
    input.read_exact(&mut len8)?;
    let len = u64::from_le_bytes(len8) as usize;
    let mut buf = vec![0u8; len];
    input.read_exact(&mut buf)?;
    Ok(buf)
}

pub fn save_to<W: Write>(out: &mut W, model: &Model, extra: &serde_json::Value) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    write_bytes(out, &serde_json::to_vec(&model.cfg)?)?;
    write_bytes(out, &serde_json::to_vec(extra)?)?;
    let params = model.named_params();
    out.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, tensor) in params {
        write_bytes(out, name.as_bytes())?;
        let shape = tensor.shape();
        out.write_all(&(shape.len() as u32).to_le_bytes())?;
        for &d in shape {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in tensor.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn save(path: &Path, model: &Model, extra: &serde_json::Value) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    save_to(&mut file, model, extra)?;
    file.flush()?;
    Ok(())
}

pub fn load_from<R: Read>(input: &mut R) -> Result<(Model, serde_json::Value)> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic {:?}, expected {:?}",
            magic, MAGIC
        )));
    }
    let mut ver = [0u8; 4];
    input.read_exact(&mut ver)?;
    let version = u32::from_le_bytes(ver);
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version}, expected {VERSION}"
        )));
    }
    let cfg: ModelConfig = serde_json::from_slice(&read_bytes(input)?)?;
    let extra: serde_json::Value = serde_json::from_slice(&read_bytes(input)?)?;
    let mut model = Model::build(&cfg)?;

    let mut count4 = [0u8; 4];
    input.read_exact(&mut count4)?;
    let count = u32::from_le_bytes(count4) as usize;
    let expected = model.named_params().len();
    if count != expected {
        return Err(Error::Checkpoint(format!(
            "parameter count {count} does not match config ({expected})"
        )));
    }
    for (name, tensor) in model.named_params_mut() {
        let stored_name = String::from_utf8(read_bytes(input)?)
            .map_err(|e| Error::Checkpoint(format!("bad parameter name: {e}")))?;
        if stored_name != name {
            return Err(Error::Checkpoint(format!(
                "parameter order mismatch: stored `{stored_name}`, expected `{name}`"
            )));
        }
        let mut rank4 = [0u8; 4];
        input.read_exact(&mut rank4)?;
        let rank = u32::from_le_bytes(rank4) as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut d8 = [0u8; 8];
            input.read_exact(&mut d8)?;
            shape.push(u64::from_le_bytes(d8) as usize);
        }
        if shape != tensor.shape() {
            return Err(Error::Checkpoint(format!(
                "shape mismatch for `{name}`: stored {shape:?}, expected {:?}",
                tensor.shape()
            )));
        }
        let data = tensor.data_mut();
        let mut v8 = [0u8; 8];
        for slot in data.iter_mut() {
            input.read_exact(&mut v8)?;
            *slot = f64::from_le_bytes(v8);
        }
    }
    Ok((model, extra))
}

pub fn load(path: &Path) -> Result<(Model, serde_json::Value)> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    load_from(&mut file)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lambda::LambdaMode;
    use crate::model::ModelConfig;

    fn cfg() -> ModelConfig {
        ModelConfig {
            vocab_size: 17,
            d_model: 8,
            n_layers: 2,
            heads: 2,
            d_head: 4,
            t_max: 16,
            lambda_mode: LambdaMode::MlpSoftplus,
            d_h: 5,
            ffn_mult: 2,
            seed: 42,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut model = Model::build(&cfg()).unwrap();
        // Make the state distinguishable from a fresh build.
        for (_, t) in model.named_params_mut() {
            for v in t.data_mut() {
                *v += 0.125;
            }
        }
        let extra = serde_json::json!({"seed": 3, "note": "round trip"});
        let mut buf = Vec::new();
        save_to(&mut buf, &model, &extra).unwrap();
        let (loaded, extra_back) = load_from(&mut buf.as_slice()).unwrap();
        assert_eq!(extra_back, extra);
        for ((na, ta), (nb, tb)) in model
            .named_params()
            .iter()
            .zip(loaded.named_params().iter())
        {
            assert_eq!(na, nb);
            assert_eq!(ta.data(), tb.data());
        }
        // Identical state twice gives identical bytes.
        let mut buf2 = Vec::new();
        save_to(&mut buf2, &model, &extra).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        let model = Model::build(&cfg()).unwrap();
        let mut buf = Vec::new();
        save_to(&mut buf, &model, &serde_json::Value::Null).unwrap();

        let mut garbled = buf.clone();
        garbled[0] = b'X';
        assert!(matches!(
            load_from(&mut garbled.as_slice()),
            Err(Error::Checkpoint(_))
        ));

        let mut future = buf.clone();
        future[8] = 99;
        assert!(matches!(
            load_from(&mut future.as_slice()),
            Err(Error::Checkpoint(_))
        ));
    }
}
