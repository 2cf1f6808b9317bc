//! Weight checkpoints: a little-endian container holding the model
//! configuration followed by every parameter tensor in name order.

use super::model::{init_params, ModelConfig, ModelParams};
use super::tensor::Tensor;
use crate::{Error, Result};
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ULMW";
pub const CHECKPOINT_VERSION: u16 = 1;

fn push_u32(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&u32::try_from(v).expect("field fits u32").to_le_bytes());
}

fn push_vec(buf: &mut Vec<u8>, v: &[usize]) {
    push_u32(buf, v.len());
    for &x in v {
        push_u32(buf, x);
    }
}

fn encode_config(cfg: &ModelConfig, buf: &mut Vec<u8>) {
    push_u32(buf, cfg.in_channels);
    push_vec(buf, &cfg.encoder_channels);
    push_vec(buf, &cfg.decoder_channels);
    push_vec(buf, &cfg.upsampler_channels);
    push_u32(buf, cfg.temporal_pool);
    push_u32(buf, cfg.spatial_pool);
    push_vec(buf, &cfg.decoder_t_pool);
    push_u32(buf, cfg.kernel);
    buf.extend_from_slice(&cfg.upscale.to_le_bytes());
    push_u32(buf, cfg.n_t);
    push_u32(buf, cfg.n_z);
    push_u32(buf, cfg.n_x);
    buf.extend_from_slice(&cfg.threshold.to_le_bytes());
}

pub fn save_checkpoint(path: &Path, cfg: &ModelConfig, params: &ModelParams<f32>) -> Result<()> {
    cfg.validate()?;
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    encode_config(cfg, &mut buf);
    push_u32(&mut buf, params.len());
    for (name, tensor) in params.iter() {
        push_u32(&mut buf, name.len());
        buf.extend_from_slice(name.as_bytes());
        push_vec(&mut buf, tensor.shape());
        for &v in tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelConfig, ModelParams<f32>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut cursor = 0usize;
    let take = |cursor: &mut usize, n: usize| -> Result<&[u8]> {
        let end = cursor.checked_add(n).ok_or_else(|| Error::format(path, "length overflow"))?;
        if end > bytes.len() {
            return Err(Error::format(path, "truncated checkpoint"));
        }
        let slice = &bytes[*cursor..end];
        *cursor = end;
        Ok(slice)
    };
    let read_u32 = |cursor: &mut usize| -> Result<usize> {
        Ok(u32::from_le_bytes(take(cursor, 4)?.try_into().expect("4 bytes")) as usize)
    };
    let read_vec = |cursor: &mut usize| -> Result<Vec<usize>> {
        let n = read_u32(cursor)?;
        (0..n).map(|_| read_u32(cursor)).collect()
    };

    if take(&mut cursor, 4)? != CHECKPOINT_MAGIC {
        return Err(Error::format(path, "bad magic, not a weight checkpoint"));
    }
    let version = u16::from_le_bytes(take(&mut cursor, 2)?.try_into().expect("2 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }

    let cfg = ModelConfig {
        in_channels: read_u32(&mut cursor)?,
        encoder_channels: read_vec(&mut cursor)?,
        decoder_channels: read_vec(&mut cursor)?,
        upsampler_channels: read_vec(&mut cursor)?,
        temporal_pool: read_u32(&mut cursor)?,
        spatial_pool: read_u32(&mut cursor)?,
        decoder_t_pool: read_vec(&mut cursor)?,
        kernel: read_u32(&mut cursor)?,
        upscale: u32::from_le_bytes(take(&mut cursor, 4)?.try_into().expect("4 bytes")),
        n_t: read_u32(&mut cursor)?,
        n_z: read_u32(&mut cursor)?,
        n_x: read_u32(&mut cursor)?,
        threshold: f32::from_le_bytes(take(&mut cursor, 4)?.try_into().expect("4 bytes")),
    };
    cfg.validate().map_err(|e| Error::format(path, format!("invalid stored config: {e}")))?;

    let n_tensors = read_u32(&mut cursor)?;
    let mut params = ModelParams::<f32>::empty();
    for _ in 0..n_tensors {
        let name_len = read_u32(&mut cursor)?;
        let name = std::str::from_utf8(take(&mut cursor, name_len)?)
            .map_err(|_| Error::format(path, "tensor name is not UTF-8"))?
            .to_string();
        let shape = read_vec(&mut cursor)?;
        let len: usize = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).ok_or_else(
            || Error::format(path, format!("tensor {name} dimensions overflow")),
        )?;
        let mut data = Vec::with_capacity(len);
        let raw = take(&mut cursor, len.checked_mul(4).ok_or_else(|| {
            Error::format(path, format!("tensor {name} payload overflows"))
        })?)?;
        for chunk in raw.chunks_exact(4) {
            data.push(f32::from_le_bytes(chunk.try_into().expect("4 bytes")));
        }
        params.insert(name, Tensor::from_vec(&shape, data)?);
    }
    if cursor != bytes.len() {
        return Err(Error::format(path, "trailing bytes after the last tensor"));
    }

    // The stored tensors must agree exactly with what the stored config
    // would create: same names, same shapes.
    let expected = init_params(&cfg, 0)?;
    if expected.len() != params.len() {
        return Err(Error::format(
            path,
            format!("expected {} tensors, found {}", expected.len(), params.len()),
        ));
    }
    for ((en, et), (sn, st)) in expected.iter().zip(params.iter()) {
        if en != sn || et.shape() != st.shape() {
            return Err(Error::format(
                path,
                format!("tensor {sn} {:?} does not match the config ({en} {:?})", st.shape(), et.shape()),
            ));
        }
    }
    Ok((cfg, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::model::model_forward;
    use crate::neural::Tensor;

    fn test_dir(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(name);
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    fn small_config() -> ModelConfig {
        ModelConfig {
            in_channels: 2,
            encoder_channels: vec![2, 3],
            decoder_channels: vec![2, 2],
            upsampler_channels: vec![1],
            temporal_pool: 2,
            spatial_pool: 2,
            decoder_t_pool: vec![1, 1],
            kernel: 3,
            upscale: 2,
            n_t: 8,
            n_z: 4,
            n_x: 4,
            threshold: 0.5,
        }
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = test_dir("ulm_checkpoint_test");
        let path = dir.join("weights.ulmw");
        let cfg = small_config();
        let params = init_params(&cfg, 21).unwrap();
        save_checkpoint(&path, &cfg, &params).unwrap();
        let (cfg2, params2) = load_checkpoint(&path).unwrap();
        assert_eq!(cfg, cfg2);
        assert_eq!(params, params2);

        let mut input = Tensor::zeros(&[1, 2, 8, 4, 4]);
        for (i, v) in input.data_mut().iter_mut().enumerate() {
            *v = ((i % 13) as f32 - 6.0) / 6.0;
        }
        let (a, _) = model_forward(&params, &cfg, &input).unwrap();
        let (b, _) = model_forward(&params2, &cfg2, &input).unwrap();
        let same = a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits());
        assert!(same, "forward outputs must match bit for bit");

        save_checkpoint(&path, &cfg, &params).unwrap();
        let second = std::fs::read(&path).unwrap();
        save_checkpoint(&path, &cfg, &params2).unwrap();
        assert_eq!(second, std::fs::read(&path).unwrap());
    }

    #[test]
    fn corrupt_checkpoints_are_rejected() {
        let dir = test_dir("ulm_checkpoint_corrupt_test");
        let path = dir.join("weights.ulmw");
        let cfg = small_config();
        let params = init_params(&cfg, 3).unwrap();
        save_checkpoint(&path, &cfg, &params).unwrap();
        let good = std::fs::read(&path).unwrap();

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        std::fs::write(&path, &bad_magic).unwrap();
        assert!(load_checkpoint(&path).is_err());

        std::fs::write(&path, &good[..good.len() - 3]).unwrap();
        assert!(load_checkpoint(&path).is_err());

        let mut trailing = good.clone();
        trailing.push(0);
        std::fs::write(&path, &trailing).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }

    #[test]
    fn tensor_set_must_match_the_stored_config() {
        let dir = test_dir("ulm_checkpoint_mismatch_test");
        let path = dir.join("weights.ulmw");
        let cfg = small_config();
        let mut params = init_params(&cfg, 4).unwrap();
        params.insert("stray.weight".into(), Tensor::zeros(&[1]));
        save_checkpoint(&path, &cfg, &params).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
