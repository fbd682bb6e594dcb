//! Vector-quantization math, the three-term codec objective and a
//! deterministic pooling codec that compresses blocks by a factor of 4 per
//! axis.
//!
//! Stop-gradient operators in the commitment objective are evaluated as
//! plain values: nothing here trains, so `sg(x)` is `x`.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::io::{expect_header, read_f32, read_u32, write_f32, write_header, write_u32};
use crate::voxgrid::{BlockFrame, LocalBlock, STATE_TARGET};

pub const DEFAULT_LATENT_CHANNELS: usize = 8;
pub const DEFAULT_CODEBOOK_SIZE: usize = 512;
pub const DEFAULT_COMMITMENT: f64 = 0.25;

/// Spatial downsampling factor of the codec, per axis.
pub const POOL: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    dim: usize,
    entries: Vec<f64>,
}

impl Codebook {
    /// `entries` is row-major, `V × dim`.
    pub fn new(dim: usize, entries: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("codebook dimension must be positive"));
        }
        if entries.is_empty() || !entries.len().is_multiple_of(dim) {
            return Err(Error::invalid(format!(
                "codebook needs a positive multiple of {dim} values, got {}",
                entries.len()
            )));
        }
        if !entries.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("codebook entries must be finite"));
        }
        Ok(Codebook { dim, entries })
    }

    /// Standard-normal entries, for reference runs without a trained codebook.
    pub fn random(size: usize, dim: usize, rng: &mut impl Rng) -> Result<Self> {
        let entries = (0..size * dim).map(|_| rng.sample(StandardNormal)).collect();
        Codebook::new(dim, entries)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, i: usize) -> &[f64] {
        &self.entries[i * self.dim..(i + 1) * self.dim]
    }

    /// Index of the closest entry; ties go to the lower index.
    pub fn nearest(&self, v: &[f64]) -> usize {
        let mut best = (0, f64::INFINITY);
        for i in 0..self.len() {
            let d: f64 = self.entry(i).iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best.1 {
                best = (i, d);
            }
        }
        best.0
    }
}

pub const CODEBOOK_MAGIC: &[u8; 4] = b"VQC1";
pub const CODEBOOK_VERSION: u8 = 1;

pub fn write_codebook(cb: &Codebook, mut w: impl Write) -> Result<()> {
    write_header(&mut w, CODEBOOK_MAGIC, CODEBOOK_VERSION)?;
    write_u32(&mut w, cb.len() as u32)?;
    write_u32(&mut w, cb.dim as u32)?;
    for &v in &cb.entries {
        write_f32(&mut w, v as f32)?;
    }
    Ok(())
}

pub fn read_codebook(mut r: impl Read) -> Result<Codebook> {
    expect_header(&mut r, CODEBOOK_MAGIC, CODEBOOK_VERSION, "VQC1")?;
    let v = read_u32(&mut r)? as usize;
    let dim = read_u32(&mut r)? as usize;
    let mut entries = Vec::with_capacity(v.saturating_mul(dim).min(1 << 24));
    for _ in 0..v * dim {
        entries.push(read_f32(&mut r)? as f64);
    }
    Codebook::new(dim, entries).map_err(|e| Error::format("VQC1", e.to_string()))
}

/// Latent features on an R³ grid, `channels` values per cell, cell-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGrid {
    resolution: usize,
    channels: usize,
    values: Vec<f64>,
    indices: Option<Vec<u32>>,
}

impl LatentGrid {
    pub fn new(resolution: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        if resolution == 0 || channels == 0 {
            return Err(Error::invalid("latent grid needs positive resolution and channels"));
        }
        let want = resolution.pow(3) * channels;
        if values.len() != want {
            return Err(Error::invalid(format!("latent grid expects {want} values, got {}", values.len())));
        }
        Ok(LatentGrid {
            resolution,
            channels,
            values,
            indices: None,
        })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn cells(&self) -> usize {
        self.resolution.pow(3)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn cell(&self, i: usize) -> &[f64] {
        &self.values[i * self.channels..(i + 1) * self.channels]
    }

    pub fn indices(&self) -> Option<&[u32]> {
        self.indices.as_deref()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Quantized {
    pub indices: Vec<u32>,
    pub z_q: LatentGrid,
    /// `‖sg(E) − z_q‖² + λ_c‖E − sg(z_q)‖²`, each as a mean over elements.
    pub loss: f64,
}

pub fn quantize(features: &LatentGrid, cb: &Codebook, commitment: f64) -> Result<Quantized> {
    if features.channels != cb.dim {
        return Err(Error::invalid(format!(
            "feature dimension {} does not match codebook dimension {}",
            features.channels, cb.dim
        )));
    }
    let mut indices = Vec::with_capacity(features.cells());
    let mut values = Vec::with_capacity(features.values.len());
    let mut sq = 0.0;
    for i in 0..features.cells() {
        let f = features.cell(i);
        let k = cb.nearest(f);
        indices.push(k as u32);
        for (a, b) in f.iter().zip(cb.entry(k)) {
            sq += (a - b) * (a - b);
            values.push(*b);
        }
    }
    let mse = sq / features.values.len() as f64;
    let mut z_q = LatentGrid::new(features.resolution, features.channels, values)?;
    z_q.indices = Some(indices.clone());
    Ok(Quantized {
        indices,
        z_q,
        loss: mse + commitment * mse,
    })
}

/// Mean categorical cross-entropy of per-voxel 3-way state scores.
pub fn state_ce_loss(logits: &[[f64; 3]], target: &[u8]) -> Result<f64> {
    if logits.len() != target.len() || logits.is_empty() {
        return Err(Error::invalid(format!(
            "logit count {} and target count {} must match and be nonzero",
            logits.len(),
            target.len()
        )));
    }
    let mut total = 0.0;
    for (l, &t) in logits.iter().zip(target) {
        if !l.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("state logits must be finite"));
        }
        if t > STATE_TARGET {
            return Err(Error::invalid(format!("state label {t} out of range")));
        }
        let m = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + l.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - l[t as usize];
    }
    Ok(total / logits.len() as f64)
}

/// Mean absolute difference.
pub fn sdf_l1_loss(pred: &[f32], target: &[f32]) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::invalid("SDF grids must have equal, nonzero size"));
    }
    let s: f64 = pred.iter().zip(target).map(|(a, b)| (*a as f64 - *b as f64).abs()).sum();
    Ok(s / pred.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub state_ce: f64,
    pub quantization: f64,
    pub sdf_l1: f64,
}

pub fn composite_loss(parts: LossParts) -> f64 {
    parts.state_ce + parts.quantization + parts.sdf_l1
}

/// Per 4³ cell: the τ frequency vector (3 channels) and, when the block
/// carries an SDF, its mean as a fourth channel.
pub fn pooling_encode(block: &LocalBlock) -> Result<LatentGrid> {
    let k = block.resolution();
    if !k.is_multiple_of(POOL) {
        return Err(Error::invalid(format!("block resolution {k} is not divisible by {POOL}")));
    }
    let r = k / POOL;
    let channels = if block.sdf().is_some() { 4 } else { 3 };
    let mut values = vec![0.0; r * r * r * channels];
    let frame = block.frame();
    let norm = (POOL * POOL * POOL) as f64;
    for l in 0..frame.len() {
        let a = frame.coords(l);
        let cell = (a[0] / POOL) + r * ((a[1] / POOL) + r * (a[2] / POOL));
        values[cell * channels + block.state(l) as usize] += 1.0 / norm;
        if let Some(sdf) = block.sdf() {
            values[cell * channels + 3] += sdf[l] as f64 / norm;
        }
    }
    LatentGrid::new(r, channels, values)
}

/// Nearest-neighbour upsampling with argmax state (ties to the lower state).
/// Context semantics are not carried by the latent and decode as 0.
pub fn pooling_decode(latent: &LatentGrid, frame: BlockFrame) -> Result<LocalBlock> {
    if !(latent.channels == 3 || latent.channels == 4) {
        return Err(Error::invalid(format!("pooling latent needs 3 or 4 channels, got {}", latent.channels)));
    }
    let k = frame.resolution();
    if k != latent.resolution * POOL {
        return Err(Error::invalid(format!(
            "latent resolution {} does not match block resolution {k}",
            latent.resolution
        )));
    }
    let r = latent.resolution;
    let mut state = vec![0u8; frame.len()];
    let mut sdf = (latent.channels == 4).then(|| vec![0f32; frame.len()]);
    for l in 0..frame.len() {
        let a = frame.coords(l);
        let c = latent.cell((a[0] / POOL) + r * ((a[1] / POOL) + r * (a[2] / POOL)));
        let mut best = 0;
        for s in 1..3 {
            if c[s] > c[best] {
                best = s;
            }
        }
        state[l] = best as u8;
        if let Some(sdf) = sdf.as_mut() {
            sdf[l] = c[3] as f32;
        }
    }
    let block = LocalBlock::new(frame, state, vec![0; frame.len()])?;
    Ok(match sdf {
        Some(s) => block.with_sdf(s),
        None => block,
    })
}
