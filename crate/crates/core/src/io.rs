//! On-disk formats: binary clouds, dataset indexes, checkpoints and manifests.
//!
//! A cloud file is `PCF1`, then `u32 N`, `u32 C`, `i32 label` (−1 for none)
//! and `N × (3 + C)` f64 values, all little-endian. A dataset directory holds
//! `index.csv` with columns `path,label,family,seed`; paths are relative to
//! the directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Point3, PointCloud};
use crate::model::{Model, ModelConfig};
use crate::nn::checkpoint::{decode_checkpoint, encode_checkpoint};
use crate::nn::{AdamState, Matrix};
use crate::rng::sha256_hex;
use crate::synth::Sample;

pub const PCF_MAGIC: &[u8; 4] = b"PCF1";
pub const INDEX_FILE: &str = "index.csv";

pub fn encode_pcf(cloud: &PointCloud) -> Vec<u8> {
    let c = cloud.feat_channels();
    let mut out = Vec::with_capacity(16 + cloud.len() * (3 + c) * 8);
    out.extend_from_slice(PCF_MAGIC);
    out.extend_from_slice(&(cloud.len() as u32).to_le_bytes());
    out.extend_from_slice(&(c as u32).to_le_bytes());
    let label = cloud.label().map_or(-1, |l| l as i32);
    out.extend_from_slice(&label.to_le_bytes());
    for (i, p) in cloud.coords().iter().enumerate() {
        for v in p {
            out.extend_from_slice(&v.to_le_bytes());
        }
        if let Some(f) = cloud.feats() {
            for v in f.row(i) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

pub fn decode_pcf(bytes: &[u8]) -> Result<PointCloud> {
    let bad = |detail: String| Error::Format { what: "PCF1 cloud", detail };
    if bytes.len() < 16 || &bytes[..4] != PCF_MAGIC {
        return Err(bad("missing PCF1 header".into()));
    }
    let word = |i: usize| <[u8; 4]>::try_from(&bytes[i..i + 4]).expect("4 bytes");
    let n = u32::from_le_bytes(word(4)) as usize;
    let c = u32::from_le_bytes(word(8)) as usize;
    let label = i32::from_le_bytes(word(12));
    let expected = n
        .checked_mul(3 + c)
        .and_then(|v| v.checked_mul(8))
        .and_then(|v| v.checked_add(16))
        .ok_or_else(|| bad("size overflow".into()))?;
    if bytes.len() != expected {
        return Err(bad(format!("{} bytes, expected {expected} for N={n}, C={c}", bytes.len())));
    }
    if label < -1 {
        return Err(bad(format!("label {label}")));
    }
    let values: Vec<f64> = bytes[16..]
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
        .collect();
    let width = 3 + c;
    let coords: Vec<Point3> = values.chunks_exact(width).map(|r| [r[0], r[1], r[2]]).collect();
    let feats = if c > 0 {
        Some(Matrix::new(n, c, values.chunks_exact(width).flat_map(|r| r[3..].iter().copied()).collect())?)
    } else {
        None
    };
    let label = usize::try_from(label).ok();
    PointCloud::new(coords, feats, label)
}

/// Writes to a sibling temporary file, then renames it over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp-{}", std::process::id()));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_pcf(path: &Path, cloud: &PointCloud) -> Result<()> {
    atomic_write(path, &encode_pcf(cloud))
}

pub fn read_pcf(path: &Path) -> Result<PointCloud> {
    decode_pcf(&read_bytes(path)?)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    atomic_write(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&read_bytes(path)?)?)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexRow {
    pub path: String,
    pub label: i64,
    pub family: String,
    pub seed: u64,
}

pub fn write_index(dir: &Path, rows: &[IndexRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format { what: "index.csv", detail: e.to_string() })?;
    atomic_write(&dir.join(INDEX_FILE), &bytes)
}

pub fn read_index(dir: &Path) -> Result<Vec<IndexRow>> {
    let path = dir.join(INDEX_FILE);
    let bytes = read_bytes(&path)?;
    let mut rd = csv::Reader::from_reader(bytes.as_slice());
    let rows = rd.deserialize().collect::<std::result::Result<Vec<IndexRow>, _>>()?;
    Ok(rows)
}

/// Writes each sample to `clouds/NNNNN.pcf` under `dir` and the matching index.
pub fn save_samples(dir: &Path, samples: &[Sample]) -> Result<Vec<IndexRow>> {
    let rows: Vec<IndexRow> = samples
        .iter()
        .enumerate()
        .map(|(i, s)| IndexRow {
            path: format!("clouds/{i:05}.pcf"),
            label: s.cloud.label().map_or(-1, |l| l as i64),
            family: s.family.name().to_string(),
            seed: s.seed,
        })
        .collect();
    let jobs: Vec<(&Sample, PathBuf)> = samples.iter().zip(&rows).map(|(s, r)| (s, dir.join(&r.path))).collect();
    crate::par::map(&jobs, |(s, p)| write_pcf(p, &s.cloud)).into_iter().collect::<Result<()>>()?;
    write_index(dir, &rows)?;
    Ok(rows)
}

/// Clouds of a dataset directory in index order. The index label overrides the file label.
pub fn load_split(dir: &Path) -> Result<(Vec<IndexRow>, Vec<PointCloud>)> {
    let rows = read_index(dir)?;
    let clouds = crate::par::map(&rows, |r| {
        let cloud = read_pcf(&dir.join(&r.path))?;
        Ok(cloud.with_label(usize::try_from(r.label).ok()))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok((rows, clouds))
}

/// SHA-256 over the index and every listed cloud file, in index order.
pub fn dataset_hash(dir: &Path) -> Result<String> {
    let mut all = read_bytes(&dir.join(INDEX_FILE))?;
    for r in read_index(dir)? {
        all.extend(read_bytes(&dir.join(&r.path))?);
    }
    Ok(sha256_hex(&all))
}

/// Provenance record written when a command finishes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: Option<String>,
    pub dataset_hash: Option<String>,
    pub seeds: Vec<u64>,
    pub hyperparameters: serde_json::Value,
    pub wall_clock_secs: f64,
    pub git_describe: String,
    pub metrics_paths: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: ModelConfig,
    pub config_hash: String,
    #[serde(default)]
    pub epochs: usize,
    #[serde(default)]
    pub optimizer: Option<AdamState>,
}

pub fn encode_model(model: &Model, epochs: usize, optimizer: Option<&AdamState>) -> Result<Vec<u8>> {
    let meta = CheckpointMeta {
        config: model.config().clone(),
        config_hash: model.config().hash(),
        epochs,
        optimizer: optimizer.cloned(),
    };
    encode_checkpoint(model.params(), &serde_json::to_value(&meta)?)
}

/// Rebuilds a model from checkpoint bytes, verifying the stored config hash.
pub fn decode_model(bytes: &[u8]) -> Result<(Model, CheckpointMeta)> {
    let (params, trailer) = decode_checkpoint(bytes)?;
    let meta: CheckpointMeta = serde_json::from_value(trailer)?;
    let actual = meta.config.hash();
    if actual != meta.config_hash {
        return Err(Error::ChecksumMismatch { expected: meta.config_hash.clone(), found: actual });
    }
    let mut model = Model::new(meta.config.clone(), 0)?;
    model.params_mut().load_from(&params)?;
    Ok((model, meta))
}

pub fn save_model(path: &Path, model: &Model, epochs: usize, optimizer: Option<&AdamState>) -> Result<()> {
    atomic_write(path, &encode_model(model, epochs, optimizer)?)
}

pub fn load_model(path: &Path) -> Result<(Model, CheckpointMeta)> {
    decode_model(&read_bytes(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pcf_round_trip_with_features() {
        let feats = Matrix::from_fn(3, 2, |r, c| (r * 10 + c) as f64 + 0.5);
        let cloud = PointCloud::new(vec![[0.1, 0.2, 0.3], [-1.0, 0.0, 1e-300], [3.0, 2.0, 1.0]], Some(feats), Some(7))
            .unwrap();
        let bytes = encode_pcf(&cloud);
        assert_eq!(bytes.len(), 16 + 3 * 5 * 8);
        assert_eq!(decode_pcf(&bytes).unwrap(), cloud);
    }

    #[test]
    fn pcf_rejects_truncation_and_bad_magic() {
        let cloud = PointCloud::from_coords(vec![[0.0; 3]; 4]).unwrap();
        let bytes = encode_pcf(&cloud);
        assert_eq!(&bytes[12..16], &(-1i32).to_le_bytes());
        assert!(decode_pcf(&bytes[..bytes.len() - 1]).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(decode_pcf(&wrong).is_err());
    }
}
