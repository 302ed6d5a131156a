//! Single-file binary checkpoints.
//!
//! ```text
//! offset  size  field
//! 0       8     magic "MMSVCKPT"
//! 8       4     format version, u32 LE
//! 12      4     flags, u32 LE (reserved, 0)
//! 16      8     metadata length L, u64 LE
//! 24      L     metadata, UTF-8 JSON
//! ..      8     tensor count T, u64 LE
//! then T records:
//!         4     name length N, u32 LE
//!         N     name, UTF-8
//!         8     rows, u64 LE
//!         8     cols, u64 LE
//!         8*r*c values, f64 LE, row-major
//! last    32    SHA-256 of every preceding byte
//! ```
//!
//! Tensors appear in model order: every encoder (trunk layers, mu head,
//! logvar head; weight then bias), then every decoder, then the per-modality
//! standardization means and standard deviations as `1 x width` rows.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Architecture, Model};
use crate::dataio::{DatasetHeader, StandardizationStats};
use crate::error::{Error, Result};
use crate::fsio::write_atomic;
use crate::fusion::FusionSpec;
use crate::numkit::Matrix;
use crate::objective::LossHyper;

pub const MAGIC: &[u8; 8] = b"MMSVCKPT";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

/// Everything needed to score new subjects with a trained model.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub standardization: StandardizationStats,
    pub meta: CheckpointMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub architecture: Architecture,
    pub fusion: FusionSpec,
    pub hyper: LossHyper,
    pub dataset: DatasetHeader,
    /// Training configuration and summary, stored verbatim.
    pub training: serde_json::Value,
}

fn tensor_names(arch: &Architecture) -> Vec<String> {
    let mut names = Vec::new();
    let mut lin = |prefix: String| {
        names.push(format!("{prefix}.weight"));
        names.push(format!("{prefix}.bias"));
    };
    for m in 0..arch.n_modalities() {
        for i in 0..arch.encoder_hidden.len() {
            lin(format!("encoder{m}.trunk{i}"));
        }
        lin(format!("encoder{m}.mu_head"));
        lin(format!("encoder{m}.logvar_head"));
    }
    for m in 0..arch.n_modalities() {
        for i in 0..=arch.decoder_hidden.len() {
            lin(format!("decoder{m}.layer{i}"));
        }
    }
    for m in 0..arch.n_modalities() {
        names.push(format!("standardization{m}.mean"));
        names.push(format!("standardization{m}.sd"));
    }
    names
}

impl Checkpoint {
    fn tensors(&self) -> Vec<Matrix> {
        let mut out: Vec<Matrix> = self
            .model
            .encoder_tensors()
            .into_iter()
            .chain(self.model.decoder_tensors())
            .cloned()
            .collect();
        for (mu, sd) in self
            .standardization
            .mean
            .iter()
            .zip(&self.standardization.sd)
        {
            out.push(Matrix::row_vector(mu.clone()));
            out.push(Matrix::row_vector(sd.clone()));
        }
        out
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&self.meta)?;
        let names = tensor_names(&self.model.arch);
        let tensors = self.tensors();
        debug_assert_eq!(names.len(), tensors.len());
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&0u32.to_le_bytes());
        buf.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        buf.extend_from_slice(&meta);
        buf.extend_from_slice(&(tensors.len() as u64).to_le_bytes());
        for (name, t) in names.iter().zip(&tensors) {
            buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            buf.extend_from_slice(&(t.rows() as u64).to_le_bytes());
            buf.extend_from_slice(&(t.cols() as u64).to_le_bytes());
            for v in t.as_slice() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&buf);
        buf.extend_from_slice(&digest);
        Ok(buf)
    }

    /// Parses a checkpoint image; `path` is only used in error messages.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let corrupt = |reason: &str| Error::Corrupt {
            path: path.to_path_buf(),
            reason: reason.to_owned(),
        };
        if bytes.len() < 24 + DIGEST_LEN || &bytes[..8] != MAGIC {
            return Err(corrupt("missing checkpoint magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(corrupt("checksum mismatch (truncated or modified)"));
        }

        let mut r = Reader { buf: body, pos: 16 };
        let meta_len = r.u64().ok_or_else(|| corrupt("short header"))? as usize;
        let meta_bytes = r.take(meta_len).ok_or_else(|| corrupt("short metadata"))?;
        let meta: CheckpointMeta = serde_json::from_slice(meta_bytes)
            .map_err(|e| corrupt(&format!("bad metadata: {e}")))?;
        meta.architecture
            .validate()
            .map_err(|e| corrupt(&format!("bad architecture: {e}")))?;

        let names = tensor_names(&meta.architecture);
        let count = r.u64().ok_or_else(|| corrupt("short tensor table"))? as usize;
        if count != names.len() {
            return Err(corrupt(&format!(
                "expected {} tensors, found {count}",
                names.len()
            )));
        }
        let mut tensors = Vec::with_capacity(count);
        for expected in &names {
            let name_len = r.u32().ok_or_else(|| corrupt("short tensor record"))? as usize;
            let name = r
                .take(name_len)
                .ok_or_else(|| corrupt("short tensor name"))?;
            if name != expected.as_bytes() {
                return Err(corrupt(&format!("expected tensor {expected}")));
            }
            let rows = r.u64().ok_or_else(|| corrupt("short tensor shape"))? as usize;
            let cols = r.u64().ok_or_else(|| corrupt("short tensor shape"))? as usize;
            let n = rows
                .checked_mul(cols)
                .ok_or_else(|| corrupt("tensor too large"))?;
            let raw = r
                .take(
                    n.checked_mul(8)
                        .ok_or_else(|| corrupt("tensor too large"))?,
                )
                .ok_or_else(|| corrupt("short tensor data"))?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.push(Matrix::new(rows, cols, data)?);
        }
        if r.pos != body.len() {
            return Err(corrupt("trailing bytes after tensors"));
        }

        let mut model = Model::zeros(meta.architecture.clone())?;
        let mut it = tensors.into_iter();
        let mut name_it = names.iter();
        let slots: Vec<&mut Matrix> = {
            let Model {
                encoders, decoders, ..
            } = &mut model;
            encoders
                .iter_mut()
                .flat_map(|e| e.tensors_mut())
                .chain(decoders.iter_mut().flat_map(|d| d.tensors_mut()))
                .collect()
        };
        for dst in slots {
            let src = it.next().expect("count checked");
            let name = name_it.next().expect("count checked");
            if src.shape() != dst.shape() {
                return Err(corrupt(&format!("tensor {name} has wrong shape")));
            }
            *dst = src;
        }
        let mut mean = Vec::new();
        let mut sd = Vec::new();
        for (m, &w) in meta.architecture.modality_widths.iter().enumerate() {
            for (dst, src) in [(&mut mean, it.next()), (&mut sd, it.next())] {
                let src = src.expect("count checked");
                if src.shape() != (1, w) {
                    return Err(corrupt(&format!(
                        "standardization tensor {m} has wrong shape"
                    )));
                }
                dst.push(src.into_vec());
            }
        }
        Ok(Self {
            model,
            standardization: StandardizationStats { mean, sd },
            meta,
        })
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let out = self.buf.get(self.pos..end)?;
        self.pos = end;
        Some(out)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4)
            .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8)
            .map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    write_atomic(path, &ckpt.to_bytes()?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&fs::read(path)?, path)
}
