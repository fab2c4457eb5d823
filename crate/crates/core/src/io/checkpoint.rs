//! Versioned binary checkpoints.
//!
//! Layout (all little-endian):
//!
//! | offset | size | field |
//! |---|---|---|
//! | 0 | 8 | magic `ADSPLAT\0` |
//! | 8 | 4 | version (u32, currently 1) |
//! | 12 | 4 | SH degree (u32) |
//! | 16 | 8 | Gaussian count N (u64) |
//! | 24 | 8 | iteration (u64) |
//! | 32 | 12 | background RGB (3 x f32) |
//! | 44 | 4 | flags (u32, bit 0: optimizer moments follow) |
//! | 48 | N x R | records, R = (11 + 3C) x 4 bytes of f32 in parameter order, C = (degree + 1)^2 |
//!
//! When bit 0 is set the records are followed by the optimizer step (u64),
//! then the N x (11 + 3C) first moments and the same number of second
//! moments, all f64.

use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::scene::{sh_coeff_count, Gaussian3D, GaussianCloud, MAX_SH_DEGREE};
use crate::train::OptimizerState;

pub const MAGIC: [u8; 8] = *b"ADSPLAT\0";
pub const VERSION: u32 = 1;
pub const HEADER_BYTES: usize = 48;

/// Bytes per Gaussian record at the given SH degree.
pub fn record_bytes(sh_degree: usize) -> usize {
    (11 + 3 * sh_coeff_count(sh_degree)) * 4
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub cloud: GaussianCloud,
    pub optimizer: Option<OptimizerState>,
    pub iteration: u64,
}

pub fn encode_checkpoint(cloud: &GaussianCloud, optimizer: Option<&OptimizerState>, iteration: u64) -> Result<Vec<u8>> {
    cloud.validate()?;
    let row = 11 + 3 * sh_coeff_count(cloud.sh_degree);
    if let Some(opt) = optimizer {
        if opt.row_len != row || opt.rows() != cloud.len() {
            return Err(Error::Shape(format!(
                "optimizer holds {} rows of {}, cloud has {} rows of {row}",
                opt.rows(),
                opt.row_len,
                cloud.len()
            )));
        }
    }
    let mut out = Vec::with_capacity(HEADER_BYTES + cloud.len() * row * 4);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(cloud.sh_degree as u32).to_le_bytes());
    out.extend_from_slice(&(cloud.len() as u64).to_le_bytes());
    out.extend_from_slice(&iteration.to_le_bytes());
    for v in cloud.background.iter() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out.extend_from_slice(&(optimizer.is_some() as u32).to_le_bytes());
    let mut p = Vec::with_capacity(row);
    for g in &cloud.gaussians {
        p.clear();
        g.write_params(&mut p);
        for v in &p {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    if let Some(opt) = optimizer {
        out.extend_from_slice(&opt.step.to_le_bytes());
        for v in opt.m.iter().chain(&opt.v) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let s = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f32(&mut self) -> std::result::Result<f64, String> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as f64)
    }

    fn f64(&mut self) -> std::result::Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let bad = |m: String| Error::Load {
        path: "<checkpoint>".into(),
        reason: m,
    };
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8).map_err(bad)? != MAGIC {
        return Err(bad("bad magic".into()));
    }
    let version = r.u32().map_err(bad)?;
    if version != VERSION {
        return Err(Error::Version {
            found: version,
            expected: VERSION,
        });
    }
    let degree = r.u32().map_err(bad)? as usize;
    if degree > MAX_SH_DEGREE {
        return Err(bad(format!("SH degree {degree} exceeds {MAX_SH_DEGREE}")));
    }
    let n = usize::try_from(r.u64().map_err(bad)?).map_err(|_| bad("count overflow".into()))?;
    let iteration = r.u64().map_err(bad)?;
    let bg = Vector3::new(r.f32().map_err(bad)?, r.f32().map_err(bad)?, r.f32().map_err(bad)?);
    let flags = r.u32().map_err(bad)?;
    if flags > 1 {
        return Err(bad(format!("unknown flags {flags:#x}")));
    }
    let row = 11 + 3 * sh_coeff_count(degree);
    if bytes.len() < HEADER_BYTES + n.saturating_mul(row * 4) {
        return Err(bad(format!(
            "truncated: {n} records need more than {} bytes",
            bytes.len()
        )));
    }
    let mut gaussians = Vec::with_capacity(n);
    let mut p = vec![0.0; row];
    for _ in 0..n {
        for v in p.iter_mut() {
            *v = r.f32().map_err(bad)?;
        }
        gaussians.push(Gaussian3D::from_params(&p)?);
    }
    let optimizer = if flags & 1 == 1 {
        let step = r.u64().map_err(bad)?;
        let mut read = |len: usize| -> Result<Vec<f64>> { (0..len).map(|_| r.f64().map_err(bad)).collect() };
        let m = read(n * row)?;
        let v = read(n * row)?;
        Some(OptimizerState {
            step,
            row_len: row,
            m,
            v,
        })
    } else {
        None
    };
    if r.pos != bytes.len() {
        return Err(bad(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(Checkpoint {
        cloud: GaussianCloud::with_gaussians(gaussians, degree, bg)?,
        optimizer,
        iteration,
    })
}

pub fn save_checkpoint(
    path: &Path,
    cloud: &GaussianCloud,
    optimizer: Option<&OptimizerState>,
    iteration: u64,
) -> Result<()> {
    std::fs::write(path, encode_checkpoint(cloud, optimizer, iteration)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::load(path, e.to_string()))?;
    decode_checkpoint(&bytes).map_err(|e| match e {
        Error::Load { reason, .. } => Error::load(path, reason),
        other => other,
    })
}

/// Serialized size of a model without optimizer state.
pub fn model_bytes(cloud: &GaussianCloud) -> usize {
    HEADER_BYTES + cloud.len() * record_bytes(cloud.sh_degree)
}
