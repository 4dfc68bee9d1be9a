//! Bit-exact model checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic           b"SNRV"
//! version         u16
//! payload_len     u64
//! payload:
//!   config_len    u32, then config text (key=value lines)
//!   tensor_count  u32
//!   per tensor:   name_len u16 + name bytes
//!                 ndim u8 + dims (u32 each)
//!                 values (f32 little-endian)
//! crc32           u32 over the payload bytes
//! ```
//!
//! Loading verifies magic, version and checksum, rebuilds the model
//! from the embedded config, and requires the tensor set to match the
//! model's parameters exactly.

use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ModelConfig, SnervModel};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"SNRV";
pub const VERSION: u16 = 1;

/// Standard CRC-32 (IEEE, reflected, polynomial 0xEDB88320).
pub fn crc32(bytes: &[u8]) -> u32 {
    // Table-driven, table built on the fly (cheap relative to I/O).
    let mut table = [0u32; 256];
    for (i, entry) in table.iter_mut().enumerate() {
        let mut c = i as u32;
        for _ in 0..8 {
            c = if c & 1 != 0 { 0xEDB8_8320 ^ (c >> 1) } else { c >> 1 };
        }
        *entry = c;
    }
    let mut crc = 0xFFFF_FFFFu32;
    for &b in bytes {
        crc = table[((crc ^ b as u32) & 0xFF) as usize] ^ (crc >> 8);
    }
    crc ^ 0xFFFF_FFFF
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::corrupt(
                "checkpoint",
                format!(
                    "truncated: wanted {} bytes at offset {}, file has {}",
                    n,
                    self.pos,
                    self.bytes.len()
                ),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn encode_payload<S: Scalar>(model: &SnervModel<S>) -> Vec<u8> {
    let config = model.config().to_key_values();
    let tensors: Vec<(&str, &Tensor<S>)> = model.tensors().collect();
    let mut out = Vec::new();
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(config.as_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.shape().len() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
        }
    }
    out
}

/// Serialize a model to bytes (values stored as f32).
pub fn to_bytes<S: Scalar>(model: &SnervModel<S>) -> Vec<u8> {
    let payload = encode_payload(model);
    let mut out = Vec::with_capacity(payload.len() + 18);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    out.extend_from_slice(&crc32(&payload).to_le_bytes());
    out
}

/// Deserialize a model. Every tensor named in the file must exist in
/// the rebuilt model with the same shape, and vice versa.
pub fn from_bytes(bytes: &[u8]) -> Result<SnervModel<f32>> {
    let mut c = Cursor { bytes, pos: 0 };
    let magic = c.take(4)?;
    if magic != MAGIC {
        return Err(Error::corrupt(
            "checkpoint",
            format!("bad magic {:02x?}", magic),
        ));
    }
    let version = c.u16()?;
    if version != VERSION {
        return Err(Error::Version {
            kind: "checkpoint",
            found: version,
            expected: VERSION,
        });
    }
    let payload_len = c.u64()? as usize;
    let payload = c.take(payload_len)?;
    let stored_crc = c.u32()?;
    let actual_crc = crc32(payload);
    if stored_crc != actual_crc {
        return Err(Error::corrupt(
            "checkpoint",
            format!("checksum mismatch: stored {:08x}, computed {:08x}", stored_crc, actual_crc),
        ));
    }

    let mut p = Cursor { bytes: payload, pos: 0 };
    let config_len = p.u32()? as usize;
    let config_text = std::str::from_utf8(p.take(config_len)?)
        .map_err(|e| Error::corrupt("checkpoint", format!("config not utf-8: {}", e)))?;
    let cfg = ModelConfig::from_key_values(config_text)?;
    let mut model = SnervModel::<f32>::new(cfg)?;

    let count = p.u32()? as usize;
    let expected: usize = model.tensors().count();
    if count != expected {
        return Err(Error::corrupt(
            "checkpoint",
            format!("file holds {} tensors, model defines {}", count, expected),
        ));
    }
    let mut seen = HashSet::new();
    for _ in 0..count {
        let name_len = p.u16()? as usize;
        let name = std::str::from_utf8(p.take(name_len)?)
            .map_err(|e| Error::corrupt("checkpoint", format!("name not utf-8: {}", e)))?
            .to_string();
        if !seen.insert(name.clone()) {
            return Err(Error::corrupt(
                "checkpoint",
                format!("duplicate tensor {}", name),
            ));
        }
        let ndim = p.take(1)?[0] as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(p.u32()? as usize);
        }
        let numel: usize = dims.iter().product();
        let raw = p.take(numel * 4)?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        model.set_tensor(&name, Tensor::new(dims, data)?).map_err(|e| {
            Error::corrupt("checkpoint", format!("tensor {}: {}", name, e))
        })?;
    }
    if p.pos != payload.len() {
        return Err(Error::corrupt(
            "checkpoint",
            format!("{} trailing payload bytes", payload.len() - p.pos),
        ));
    }
    Ok(model)
}

pub fn save<S: Scalar>(model: &SnervModel<S>, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(model)).map_err(Error::Io)
}

pub fn load(path: &Path) -> Result<SnervModel<f32>> {
    let bytes = std::fs::read(path).map_err(Error::Io)?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> SnervModel<f32> {
        SnervModel::new(ModelConfig {
            c0: 12,
            n_rb: 1,
            seed: 42,
            ..ModelConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn crc32_matches_known_vectors() {
        // Published IEEE CRC-32 check values.
        assert_eq!(crc32(b"123456789"), 0xCBF4_3926);
        assert_eq!(crc32(b""), 0);
        assert_eq!(crc32(b"The quick brown fox jumps over the lazy dog"), 0x414F_A339);
    }

    #[test]
    fn round_trip_is_bitwise() {
        let m = model();
        let bytes = to_bytes(&m);
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(m.config(), back.config());
        for ((na, ta), (nb, tb)) in m.tensors().zip(back.tensors()) {
            assert_eq!(na, nb);
            assert_eq!(ta.shape(), tb.shape());
            assert_eq!(ta.data(), tb.data(), "tensor {} not bitwise equal", na);
        }
        // And the serialization itself is deterministic.
        assert_eq!(bytes, to_bytes(&back));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.snrv");
        let m = model();
        save(&m, &path).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(to_bytes(&m), to_bytes(&back));
    }

    #[test]
    fn truncation_is_a_corruption_error_not_a_crash() {
        let bytes = to_bytes(&model());
        for cut in [0, 3, 5, 10, bytes.len() / 2, bytes.len() - 1] {
            let err = from_bytes(&bytes[..cut]).unwrap_err();
            assert!(
                matches!(err, Error::Corrupt { .. }),
                "cut at {} gave {:?}",
                cut,
                err
            );
        }
    }

    #[test]
    fn bit_flip_fails_the_checksum() {
        let mut bytes = to_bytes(&model());
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x01;
        let err = from_bytes(&bytes).unwrap_err();
        assert!(matches!(err, Error::Corrupt { .. }) || matches!(err, Error::Config(_)));
    }

    #[test]
    fn unknown_version_is_rejected() {
        let mut bytes = to_bytes(&model());
        bytes[4] = 0xFF;
        bytes[5] = 0xFF;
        let err = from_bytes(&bytes).unwrap_err();
        match err {
            Error::Version { found, expected, .. } => {
                assert_eq!(found, 0xFFFF);
                assert_eq!(expected, VERSION);
            }
            other => panic!("expected version error, got {:?}", other),
        }
    }

    #[test]
    fn bad_magic_is_rejected() {
        let mut bytes = to_bytes(&model());
        bytes[0] = b'X';
        assert!(matches!(from_bytes(&bytes).unwrap_err(), Error::Corrupt { .. }));
    }

    #[test]
    fn f64_models_save_as_f32() {
        let m64 = SnervModel::<f64>::new(ModelConfig {
            c0: 12,
            n_rb: 1,
            ..ModelConfig::default()
        })
        .unwrap();
        let back = from_bytes(&to_bytes(&m64)).unwrap();
        for ((_, ta), (_, tb)) in m64.tensors().zip(back.tensors()) {
            for (a, b) in ta.data().iter().zip(tb.data()) {
                assert_eq!(*a as f32, *b);
            }
        }
    }
}
