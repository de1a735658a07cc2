//! Binary checkpoints: a small text header (config, seed, step) followed by
//! the concatenated little-endian f32 payloads in parameter declaration
//! order, then the Adam moment buffers when present.

use std::fs;
use std::path::Path;

use super::adam::AdamState;
use super::unet::{UNetConfig, UNetParams};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"DFREGCK1";

/// Training provenance stored alongside the parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub step: u64,
    pub epoch: u64,
    pub lr: f64,
}

pub fn save_checkpoint(
    path: &Path,
    params: &UNetParams<f32>,
    adam: Option<&AdamState<f32>>,
    meta: &CheckpointMeta,
) -> Result<()> {
    let cfg = &params.config;
    let widths: Vec<String> = cfg.enc_widths.iter().map(|w| w.to_string()).collect();
    let mut header = String::new();
    header.push_str(&format!("levels = {}\n", cfg.levels));
    header.push_str(&format!("enc_widths = {}\n", widths.join(" ")));
    header.push_str(&format!("leaky_slope = {}\n", cfg.leaky_slope));
    header.push_str(&format!("in_channels = {}\n", cfg.in_channels));
    header.push_str(&format!("seed = {}\n", meta.seed));
    header.push_str(&format!("step = {}\n", meta.step));
    header.push_str(&format!("epoch = {}\n", meta.epoch));
    header.push_str(&format!("lr = {}\n", meta.lr));
    header.push_str(&format!("has_adam = {}\n", adam.is_some() as u8));
    if let Some(a) = adam {
        header.push_str(&format!("adam_step = {}\n", a.step));
    }

    let flat = params.flatten();
    let mut bytes = Vec::with_capacity(16 + header.len() + flat.len() * 4);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(header.len() as u32).to_le_bytes());
    bytes.extend_from_slice(header.as_bytes());
    for v in &flat {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(a) = adam {
        for v in a.m.iter().chain(a.v.iter()) {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(
    path: &Path,
) -> Result<(UNetParams<f32>, Option<AdamState<f32>>, CheckpointMeta)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: &str| Error::Header {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let hlen = u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize;
    if bytes.len() < 12 + hlen {
        return Err(bad("truncated header"));
    }
    let header =
        std::str::from_utf8(&bytes[12..12 + hlen]).map_err(|_| bad("header is not UTF-8"))?;
    let mut kv = std::collections::HashMap::new();
    for line in header.lines() {
        if let Some((k, v)) = line.split_once('=') {
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    let get = |k: &str| -> Result<&String> { kv.get(k).ok_or_else(|| bad(&format!("missing {k}"))) };
    let levels: usize = get("levels")?.parse().map_err(|_| bad("bad levels"))?;
    let enc_widths: Vec<usize> = get("enc_widths")?
        .split_whitespace()
        .map(|t| t.parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| bad("bad enc_widths"))?;
    let config = UNetConfig {
        levels,
        enc_widths,
        leaky_slope: get("leaky_slope")?.parse().map_err(|_| bad("bad slope"))?,
        in_channels: get("in_channels")?.parse().map_err(|_| bad("bad in_channels"))?,
    };
    let meta = CheckpointMeta {
        seed: get("seed")?.parse().map_err(|_| bad("bad seed"))?,
        step: get("step")?.parse().map_err(|_| bad("bad step"))?,
        epoch: get("epoch")?.parse().map_err(|_| bad("bad epoch"))?,
        lr: get("lr")?.parse().map_err(|_| bad("bad lr"))?,
    };
    let has_adam = get("has_adam")?.as_str() == "1";

    let mut params = UNetParams::<f32>::init(config, meta.seed)?;
    let count = params.param_count();
    let expected = count * 4 * if has_adam { 3 } else { 1 };
    let payload = &bytes[12 + hlen..];
    if payload.len() != expected {
        return Err(Error::SizeMismatch {
            expected,
            found: payload.len(),
        });
    }
    let read_f32s = |chunk: &[u8]| -> Vec<f32> {
        chunk
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect()
    };
    params.unflatten(&read_f32s(&payload[..count * 4]))?;
    let adam = if has_adam {
        let m = read_f32s(&payload[count * 4..count * 8]);
        let v = read_f32s(&payload[count * 8..]);
        let step: u64 = get("adam_step")?.parse().map_err(|_| bad("bad adam_step"))?;
        Some(AdamState { step, m, v })
    } else {
        None
    };
    Ok((params, adam, meta))
}
