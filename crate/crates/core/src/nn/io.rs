//! `DWFC` checkpoint files.
//!
//! Layout (little-endian): magic `DWFC`, `u32` version, `u32` length plus the
//! UTF-8 architecture descriptor, the flat parameter vector as `f32`, then
//! for each BN layer its running mean and variance (`f64`) and sample count
//! (`u64`), and finally the metadata seed (`u64`) and metric (`f64`).

use std::path::Path;

use super::arch::ArchitectureSpec;
use super::checkpoint::{Metadata, WeightCheckpoint};
use crate::binio::{read_file, Reader, Writer};
use crate::Result;

const MAGIC: &[u8; 4] = b"DWFC";
const VERSION: u32 = 1;

pub fn encode_checkpoint(ckpt: &WeightCheckpoint) -> Vec<u8> {
    let mut w = Writer::default();
    w.bytes(MAGIC);
    w.u32(VERSION);
    w.text(&ckpt.arch().descriptor());
    w.f32s(&ckpt.flatten());
    for stats in ckpt.bn_stats() {
        w.f64s(&stats.mean);
        w.f64s(&stats.var);
        w.u64(stats.count);
    }
    w.u64(ckpt.meta.seed);
    w.f64(ckpt.meta.metric);
    w.buf
}

pub fn save_checkpoint(ckpt: &WeightCheckpoint, path: &Path) -> Result<()> {
    Writer {
        buf: encode_checkpoint(ckpt),
    }
    .save(path)
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<WeightCheckpoint> {
    let mut r = Reader::new(path, bytes);
    r.magic(MAGIC)?;
    r.version(VERSION)?;
    let at = r.pos();
    let descriptor = r.text("architecture descriptor")?;
    let arch = ArchitectureSpec::from_descriptor(&descriptor).map_err(|e| r.error_at(at, e.to_string()))?;
    let flat = r.f32s(arch.param_count(), "parameters")?;
    let mut ckpt = WeightCheckpoint::unflatten(&flat, &arch)?;
    for bn in ckpt.norms.iter_mut().flatten() {
        let d = bn.gamma.len();
        bn.stats.mean = r.f64s(d, "running mean")?;
        bn.stats.var = r.f64s(d, "running variance")?;
        bn.stats.count = r.u64("running count")?;
    }
    let seed = r.u64("seed")?;
    let metric = r.f64("metric")?;
    r.finish()?;
    ckpt.meta = Metadata { seed, metric };
    Ok(ckpt)
}

pub fn load_checkpoint(path: &Path) -> Result<WeightCheckpoint> {
    decode_checkpoint(&read_file(path)?, path)
}
