use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BackboneError, BackboneModel, ModelConfig, Result};

const FORMAT_VERSION: u32 = 1;
const KIND: &str = "backbone-checkpoint";

/// Single-line JSON header; the weight blob follows the newline.
#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    kind: String,
    config: ModelConfig,
    n_params: usize,
    blob_len_bytes: u64,
}

impl BackboneModel {
    /// Writes header + little-endian f64 weights in registry order. The
    /// same weights always produce the same bytes.
    pub fn save(&self, path: &Path) -> Result<()> {
        let blob_len: usize = self.params.iter().map(|p| p.value.numel() * 8).sum();
        let header = Header {
            format_version: FORMAT_VERSION,
            kind: KIND.to_string(),
            config: self.config.clone(),
            n_params: self.params.len(),
            blob_len_bytes: blob_len as u64,
        };
        let mut out = Vec::with_capacity(blob_len + 512);
        serde_json::to_writer(&mut out, &header)
            .map_err(|e| BackboneError::Checkpoint(e.to_string()))?;
        out.push(b'\n');
        for p in &self.params {
            for v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut f = fs::File::create(path)?;
        f.write_all(&out)?;
        Ok(())
    }

    /// Bit-exact inverse of `save`.
    pub fn load(path: &Path) -> Result<Self> {
        let buf = fs::read(path)?;
        let nl = buf
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| BackboneError::Checkpoint("missing header line".to_string()))?;
        let header: Header = serde_json::from_slice(&buf[..nl])
            .map_err(|e| BackboneError::Checkpoint(format!("bad header: {e}")))?;
        if header.kind != KIND {
            return Err(BackboneError::Checkpoint(format!(
                "expected a {KIND} file, found kind `{}`",
                header.kind
            )));
        }
        if header.format_version != FORMAT_VERSION {
            return Err(BackboneError::Checkpoint(format!(
                "format version {} unsupported (this build reads {FORMAT_VERSION})",
                header.format_version
            )));
        }

        let mut model = BackboneModel::new(header.config)?;
        if model.params.len() != header.n_params {
            return Err(BackboneError::Checkpoint(format!(
                "header claims {} parameters, config implies {}",
                header.n_params,
                model.params.len()
            )));
        }
        let blob = &buf[nl + 1..];
        if blob.len() as u64 != header.blob_len_bytes {
            return Err(BackboneError::Checkpoint(format!(
                "weight blob is {} bytes, header claims {}",
                blob.len(),
                header.blob_len_bytes
            )));
        }
        let expected: usize = model.params.iter().map(|p| p.value.numel() * 8).sum();
        if blob.len() != expected {
            return Err(BackboneError::Checkpoint(format!(
                "weight blob is {} bytes, model needs {expected}",
                blob.len()
            )));
        }

        let mut offset = 0usize;
        for p in &mut model.params {
            for v in p.value.data_mut() {
                let bytes: [u8; 8] = blob[offset..offset + 8].try_into().unwrap();
                *v = f64::from_le_bytes(bytes);
                offset += 8;
            }
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::super::ModelConfig;
    use super::*;

    fn small() -> BackboneModel {
        BackboneModel::new(ModelConfig {
            vocab_size: 12,
            d_model: 8,
            n_layers: 2,
            n_heads: 2,
            mlp_hidden: 16,
            d_img: 3,
            n_img_prefix_tokens: 2,
            max_seq_len: 10,
            editable_layer: 0,
            seed: 42,
        })
        .unwrap()
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        let m = small();
        m.save(&p1).unwrap();
        let loaded = BackboneModel::load(&p1).unwrap();
        assert_eq!(m.weights_fingerprint(), loaded.weights_fingerprint());
        assert_eq!(m.config, loaded.config);
        loaded.save(&p2).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.ckpt");
        let m = small();
        m.save(&p).unwrap();
        let mut bytes = fs::read(&p).unwrap();
        bytes.truncate(bytes.len() - 9);
        fs::write(&p, &bytes).unwrap();
        let err = BackboneModel::load(&p).unwrap_err();
        assert!(matches!(err, BackboneError::Checkpoint(_)));
    }

    #[test]
    fn wrong_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.ckpt");
        small().save(&p).unwrap();
        let bytes = fs::read(&p).unwrap();
        let nl = bytes.iter().position(|&b| b == b'\n').unwrap();
        let doctored = String::from_utf8(bytes[..nl].to_vec())
            .unwrap()
            .replace("\"format_version\":1", "\"format_version\":9");
        let mut out = doctored.into_bytes();
        out.push(b'\n');
        out.extend_from_slice(&bytes[nl + 1..]);
        fs::write(&p, &out).unwrap();
        let err = BackboneModel::load(&p).unwrap_err();
        assert!(err.to_string().contains("version"));
    }
}
