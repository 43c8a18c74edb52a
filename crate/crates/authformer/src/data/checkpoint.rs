//! Model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic     4 bytes  "AFCK"
//! version   u32
//! elem      1 byte   0 = f32, 1 = f64
//! cfg_len   u32
//! config    cfg_len bytes of JSON
//! n_params  u32
//! entries   n_params x { name_len u32, name bytes, blob_len u32, tensor blob }
//! checksum  u32, CRC-32 of everything above
//! ```

use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::params::ParamSet;
use super::blob::{decode_blob, encode_blob, write_atomic, BlobElem};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"AFCK";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn save_checkpoint<T: BlobElem>(
    path: &Path,
    config: &ModelConfig,
    params: &ParamSet<T>,
) -> Result<()> {
    let display = path.display().to_string();
    let cfg = serde_json::to_vec(config)
        .map_err(|e| Error::Json { path: display.clone(), source: e })?;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.push(T::CODE);
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(&cfg);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, p) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let blob = encode_blob(&p.shape, &p.data)?;
        out.extend_from_slice(&(blob.len() as u32).to_le_bytes());
        out.extend_from_slice(&blob);
    }
    let checksum = crc32fast::hash(&out);
    out.extend_from_slice(&checksum.to_le_bytes());
    write_atomic(path, &out)
}

pub fn load_checkpoint<T: BlobElem>(path: &Path) -> Result<(ModelConfig, ParamSet<T>)> {
    let display = path.display().to_string();
    let fail = |reason: String| Error::format(display.clone(), reason);
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(&display, e))?;
    if bytes.len() < 17 {
        return Err(fail("truncated header".into()));
    }
    if &bytes[0..4] != CHECKPOINT_MAGIC {
        return Err(fail(format!("bad magic {:?}", &bytes[0..4])));
    }
    let body_end = bytes.len() - 4;
    let stored = u32::from_le_bytes(bytes[body_end..].try_into().unwrap());
    let actual = crc32fast::hash(&bytes[..body_end]);
    if stored != actual {
        return Err(fail(format!(
            "checksum mismatch (stored {stored:#010x}, computed {actual:#010x}); file is corrupted"
        )));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(fail(format!("unsupported checkpoint version {version}")));
    }
    if bytes[8] != T::CODE {
        return Err(fail(format!(
            "element type code {} does not match requested type (code {})",
            bytes[8],
            T::CODE
        )));
    }
    let mut pos = 9usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        if pos + n > body_end {
            return Err(Error::format(display.clone(), "truncated body"));
        }
        let s = &bytes[pos..pos + n];
        pos += n;
        Ok(s)
    };
    let cfg_len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let config: ModelConfig = serde_json::from_slice(take(cfg_len)?)
        .map_err(|e| Error::Json { path: display.clone(), source: e })?;
    let n_params = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let mut params = ParamSet::new();
    for _ in 0..n_params {
        let name_len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(take(name_len)?)
            .map_err(|_| Error::format(display.clone(), "parameter name is not UTF-8"))?
            .to_string();
        let blob_len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let (shape, data) = decode_blob::<T>(take(blob_len)?, &format!("{display}:{name}"))?;
        params.insert(&name, shape, data)?;
    }
    if pos != body_end {
        return Err(fail("trailing bytes after last parameter".into()));
    }
    Ok((config, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;
    use crate::router::ModalityCombo;
    use tempfile::tempdir;

    fn small_config() -> ModelConfig {
        let combo = ModalityCombo::parse("face,voice").unwrap();
        let mut cfg = ModelConfig::new(combo, 3);
        cfg.embed.patch_size = 4;
        cfg.embed.image_h = 8;
        cfg.embed.image_w = 8;
        cfg.embed.seq_len = 16;
        cfg.embed.frame = 4;
        cfg.embed.hop = 4;
        cfg.embed.model_dim = 8;
        cfg.embed.seq_dim = 4;
        cfg.embed.tcn_kernel = 2;
        cfg.embed.tcn_dilations = vec![1, 2];
        cfg.embed.tcn_channels = vec![4, 8];
        cfg.heads = 2;
        cfg.encoder_layers = 1;
        cfg
    }

    #[test]
    fn round_trip_is_bitwise_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let config = small_config();
        let params = init_params::<f32>(&config, 9).unwrap();
        save_checkpoint(&path, &config, &params).unwrap();
        let (c2, p2) = load_checkpoint::<f32>(&path).unwrap();
        assert_eq!(config, c2);
        assert_eq!(params.len(), p2.len());
        for ((n1, a), (n2, b)) in params.iter().zip(p2.iter()) {
            assert_eq!(n1, n2);
            assert_eq!(a.shape, b.shape);
            let ab: Vec<u32> = a.data.iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u32> = b.data.iter().map(|v| v.to_bits()).collect();
            assert_eq!(ab, bb, "parameter {n1} not bitwise identical");
        }
    }

    #[test]
    fn corrupted_byte_fails_checksum() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let config = small_config();
        let params = init_params::<f32>(&config, 9).unwrap();
        save_checkpoint(&path, &config, &params).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        std::fs::write(&path, &bytes).unwrap();
        let err = load_checkpoint::<f32>(&path).unwrap_err().to_string();
        assert!(err.contains("checksum"), "{err}");
    }

    #[test]
    fn rejects_bad_magic_and_future_version() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let config = small_config();
        let params = init_params::<f32>(&config, 9).unwrap();
        save_checkpoint(&path, &config, &params).unwrap();
        let good = std::fs::read(&path).unwrap();

        let mut bad = good.clone();
        bad[0] = b'Z';
        std::fs::write(&path, &bad).unwrap();
        let err = load_checkpoint::<f32>(&path).unwrap_err().to_string();
        assert!(err.contains("magic"), "{err}");

        let mut future = good.clone();
        future[4..8].copy_from_slice(&99u32.to_le_bytes());
        let end = future.len() - 4;
        let crc = crc32fast::hash(&future[..end]);
        future[end..].copy_from_slice(&crc.to_le_bytes());
        std::fs::write(&path, &future).unwrap();
        let err = load_checkpoint::<f32>(&path).unwrap_err().to_string();
        assert!(err.contains("version"), "{err}");
    }

    #[test]
    fn wrong_element_type_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let config = small_config();
        let params = init_params::<f32>(&config, 9).unwrap();
        save_checkpoint(&path, &config, &params).unwrap();
        assert!(load_checkpoint::<f64>(&path).is_err());
    }
}
