//! Binary model checkpoints.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic        8 bytes   "ESNNETCK"
//! version      u32       FORMAT_VERSION
//! config_len   u32
//! config       config_len bytes of UTF-8 JSON (ModelConfig)
//! config_crc   u32       CRC-32 of the config bytes
//! seed         u64
//! count        u32       number of tensor records
//! record * count:
//!   name_len   u16
//!   name       name_len bytes of UTF-8
//!   kind       u8        0 trainable parameter, 1 fixed parameter, 2 buffer
//!   rank       u8
//!   dims       u32 * rank
//!   data       f64 * product(dims)
//!   crc        u32       CRC-32 of the data bytes
//! ```
//!
//! Records appear in model parameter order followed by the batch-norm
//! running statistics. Loading rebuilds the architecture from the stored
//! config and then overwrites every tensor, so values are bit-exact.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{build, EsnNet, ModelConfig};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"ESNNETCK";
pub const FORMAT_VERSION: u32 = 1;

const KIND_TRAINABLE: u8 = 0;
const KIND_FIXED: u8 = 1;
const KIND_BUFFER: u8 = 2;

pub fn encode(model: &EsnNet) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let config = serde_json::to_vec(model.config())
        .map_err(|e| Error::Format(format!("cannot serialize config: {e}")))?;
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(&config);
    out.extend_from_slice(&crc32fast::hash(&config).to_le_bytes());
    out.extend_from_slice(&model.seed().to_le_bytes());

    let mut records: Vec<(&str, u8, &Tensor)> = model
        .parameters()
        .into_iter()
        .map(|p| {
            let kind = if p.trainable { KIND_TRAINABLE } else { KIND_FIXED };
            (p.name.as_str(), kind, &p.value)
        })
        .collect();
    let buffers = model.buffers();
    records.extend(buffers.iter().map(|(n, t)| (n.as_str(), KIND_BUFFER, *t)));
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for (name, kind, tensor) in records {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(kind);
        out.push(tensor.shape().len() as u8);
        for &d in tensor.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        let start = out.len();
        for v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let crc = crc32fast::hash(&out[start..]);
        out.extend_from_slice(&crc.to_le_bytes());
    }
    Ok(out)
}

pub fn save_checkpoint(model: &EsnNet, path: &Path) -> Result<()> {
    let bytes = encode(model)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    f.sync_all()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<EsnNet> {
    decode(&fs::read(path)?)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format(format!("truncated checkpoint while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<EsnNet> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(Error::Format("not an ESNNet checkpoint (bad magic bytes)".into()));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "checkpoint version {version} is not supported (expected {FORMAT_VERSION})"
        )));
    }
    let config_len = r.u32("config length")? as usize;
    let config_bytes = r.take(config_len, "config")?;
    if r.u32("config checksum")? != crc32fast::hash(config_bytes) {
        return Err(Error::Format("config checksum mismatch".into()));
    }
    let config: ModelConfig = serde_json::from_slice(config_bytes)
        .map_err(|e| Error::Format(format!("invalid config in checkpoint: {e}")))?;
    let seed = r.u64("seed")?;
    let mut model = build(&config, seed)?;

    let count = r.u32("record count")? as usize;
    let n_params = model.parameters().len();
    let n_buffers = model.buffers().len();
    if count != n_params + n_buffers {
        return Err(Error::Format(format!(
            "checkpoint holds {count} tensors, model layout needs {}",
            n_params + n_buffers
        )));
    }
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
            .to_string();
        let kind = r.u8("kind")?;
        if kind > KIND_BUFFER {
            return Err(Error::Format(format!("{name}: unknown record kind {kind}")));
        }
        let rank = r.u8("rank")? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32("dims")? as usize);
        }
        let n: usize = dims.iter().product();
        let raw = r.take(n * 8, &name)?;
        if r.u32("tensor checksum")? != crc32fast::hash(raw) {
            return Err(Error::Format(format!("checksum mismatch in tensor {name}")));
        }
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push((name, kind, Tensor::from_vec(&dims, data)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after the last tensor".into()));
    }

    let (params, buffers) = tensors.split_at(n_params);
    for (p, (name, kind, t)) in model.parameters_mut().into_iter().zip(params) {
        let expected = if p.trainable { KIND_TRAINABLE } else { KIND_FIXED };
        if &p.name != name || *kind != expected {
            return Err(Error::Format(format!("expected parameter {}, found {name}", p.name)));
        }
        if p.value.shape() != t.shape() {
            return Err(Error::Format(format!(
                "{name}: stored shape {:?}, model expects {:?}",
                t.shape(),
                p.value.shape()
            )));
        }
        p.value = t.clone();
    }
    for ((bname, b), (name, kind, t)) in model.buffers_mut().into_iter().zip(buffers) {
        if &bname != name || *kind != KIND_BUFFER || b.shape() != t.shape() {
            return Err(Error::Format(format!("expected buffer {bname}, found {name}")));
        }
        *b = t.clone();
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Mode;
    use crate::model::Variant;
    use crate::rng::RngStream;
    use crate::tensor::Distribution;

    fn trained_micro(variant: Variant) -> (EsnNet, Tensor) {
        let mut cfg = ModelConfig::micro();
        cfg.model.variant = variant;
        let mut model = build(&cfg, 11).unwrap();
        let x = Tensor::sample(&[4, 4, 20], Distribution::Normal { mean: 0.0, std: 1.0 }, &mut RngStream::new(2))
            .unwrap();
        let mut adam = crate::optim::AdamState::new(0.01);
        for _ in 0..3 {
            model.loss_and_backward(&x, &[0, 1, 2, 0]).unwrap();
            adam.step(&mut model.parameters_mut()).unwrap();
        }
        (model, x)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for variant in [Variant::Full, Variant::ConvOnly] {
            let (mut model, x) = trained_micro(variant);
            let mut loaded = decode(&encode(&model).unwrap()).unwrap();
            assert_eq!(loaded.snapshot(), model.snapshot());
            assert_eq!(loaded.config(), model.config());
            let a = model.forward(&x, Mode::Infer).unwrap();
            let b = loaded.forward(&x, Mode::Infer).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn file_round_trip() {
        let (model, _) = trained_micro(Variant::Full);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&model, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.reservoir_digest(), model.reservoir_digest());
    }

    #[test]
    fn bad_magic() {
        let (model, _) = trained_micro(Variant::Full);
        let mut bytes = encode(&model).unwrap();
        bytes[0] ^= 0xff;
        let err = decode(&bytes).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
        assert!(err.to_string().contains("magic"));
    }

    #[test]
    fn version_truncation_and_corruption() {
        let (model, _) = trained_micro(Variant::Full);
        let bytes = encode(&model).unwrap();

        let mut v = bytes.clone();
        v[8] = 9;
        assert!(decode(&v).unwrap_err().to_string().contains("version"));

        for cut in [4, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(decode(&bytes[..cut]), Err(Error::Format(_))), "cut {cut}");
        }

        let mut c = bytes.clone();
        let at = bytes.len() - 20;
        c[at] ^= 1;
        assert!(decode(&c).unwrap_err().to_string().contains("checksum"));
    }
}
