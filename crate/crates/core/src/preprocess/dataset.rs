//! Block container and manifest.
//!
//! Container (little-endian): magic `ULMB`, version u16, then N_t, N_z, N_x,
//! r as u32, density f64, seed u64. Payload: the correlation block as
//! interleaved (re, im) f32 in (t, z, x) order, then the mask as bit-packed
//! rows (r N_z rows of ceil(r N_x / 8) bytes, MSB first). One block per
//! file. The manifest is one `<split> <relative path>` line per block.

use super::{CorrelationBlock, DatasetRecord};
use crate::vasculature::{BlockGeometry, TrackMask};
use crate::{Error, Result};
use num_complex::Complex32;
use std::io::{Read as _, Write as _};
use std::path::{Path, PathBuf};

const MAGIC: &[u8; 4] = b"ULMB";
const VERSION: u16 = 1;

pub const MANIFEST_NAME: &str = "manifest.txt";
const MANIFEST_HEADER: &str = "ulmmanifest v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }

    fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "validation" => Some(Split::Validation),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

pub fn write_record(path: &Path, record: &DatasetRecord) -> Result<()> {
    record.validate()?;
    let chi = &record.chi;
    let mut buf = Vec::with_capacity(38 + chi.data().len() * 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    for dim in [chi.n_t as u32, chi.geom.n_z as u32, chi.geom.n_x as u32, record.upscale] {
        buf.extend_from_slice(&dim.to_le_bytes());
    }
    buf.extend_from_slice(&record.density_per_mm3.to_le_bytes());
    buf.extend_from_slice(&record.seed.to_le_bytes());
    for c in chi.data() {
        buf.extend_from_slice(&c.re.to_le_bytes());
        buf.extend_from_slice(&c.im.to_le_bytes());
    }
    buf.extend_from_slice(&record.psi.to_packed_rows());
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_record(path: &Path) -> Result<DatasetRecord> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let mut at = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        if at + n > bytes.len() {
            return Err(Error::format(path, "truncated block file"));
        }
        let s = &bytes[at..at + n];
        at += n;
        Ok(s)
    };

    if take(4)? != MAGIC {
        return Err(Error::format(path, "bad magic"));
    }
    let version = u16::from_le_bytes(take(2)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let mut dims = [0u32; 4];
    for d in &mut dims {
        *d = u32::from_le_bytes(take(4)?.try_into().unwrap());
    }
    let [n_t, n_z, n_x, upscale] = dims.map(|d| d as usize);
    let density = f64::from_le_bytes(take(8)?.try_into().unwrap());
    let seed = u64::from_le_bytes(take(8)?.try_into().unwrap());

    let n_voxels = n_t
        .checked_mul(n_z)
        .and_then(|v| v.checked_mul(n_x))
        .ok_or_else(|| Error::format(path, "dimension overflow"))?;
    let mut data = Vec::with_capacity(n_voxels);
    for _ in 0..n_voxels {
        let re = f32::from_le_bytes(take(4)?.try_into().unwrap());
        let im = f32::from_le_bytes(take(4)?.try_into().unwrap());
        data.push(Complex32::new(re, im));
    }
    let geom = BlockGeometry { origin_z_um: 0.0, origin_x_um: 0.0, n_z, n_x, pitch_um: 25.0 };
    let chi = CorrelationBlock::from_data(n_t, geom, data)?;

    let mask_rows = upscale * n_z;
    let mask_bytes = mask_rows * (upscale * n_x).div_ceil(8);
    let psi = TrackMask::from_packed_rows(mask_rows, upscale * n_x, take(mask_bytes)?)?;
    if at != bytes.len() {
        return Err(Error::format(path, "trailing bytes after mask payload"));
    }

    let record = DatasetRecord {
        chi,
        psi,
        density_per_mm3: density,
        seed,
        upscale: upscale as u32,
    };
    record.validate()?;
    Ok(record)
}

pub fn write_manifest(dir: &Path, entries: &[(Split, PathBuf)]) -> Result<()> {
    let path = dir.join(MANIFEST_NAME);
    let mut text = String::from(MANIFEST_HEADER);
    text.push('\n');
    for (split, file) in entries {
        text.push_str(split.as_str());
        text.push(' ');
        text.push_str(&file.display().to_string());
        text.push('\n');
    }
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn read_manifest(dir: &Path) -> Result<Vec<(Split, PathBuf)>> {
    let path = dir.join(MANIFEST_NAME);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(MANIFEST_HEADER) {
        return Err(Error::format(&path, "missing manifest header"));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let (split, file) = line
                .split_once(' ')
                .ok_or_else(|| Error::format(&path, format!("line {}: expected two fields", i + 2)))?;
            let split = Split::parse(split)
                .ok_or_else(|| Error::format(&path, format!("line {}: unknown split `{split}`", i + 2)))?;
            Ok((split, PathBuf::from(file)))
        })
        .collect()
}
