//! `DWFF` files: magic, `u32` version, the flow configuration as a
//! length-prefixed TOML block, then the parameters as little-endian `f32`.

use std::path::Path;

use super::config::FlowConfig;
use super::model::FlowModel;
use crate::binio::{read_file, Reader, Writer};
use crate::Result;

const MAGIC: &[u8; 4] = b"DWFF";
const VERSION: u32 = 1;

pub fn save_flow(model: &FlowModel, path: &Path) -> Result<()> {
    let mut w = Writer::default();
    w.bytes(MAGIC);
    w.u32(VERSION);
    w.text(&model.config().to_text());
    let params: Vec<f32> = model.params().iter().map(|&v| v as f32).collect();
    w.f32s(&params);
    w.save(path)
}

pub fn load_flow(path: &Path) -> Result<FlowModel> {
    let bytes = read_file(path)?;
    let mut r = Reader::new(path, &bytes);
    r.magic(MAGIC)?;
    r.version(VERSION)?;
    let at = r.pos();
    let text = r.text("flow config")?;
    let cfg = FlowConfig::from_text(&text).map_err(|e| r.error_at(at, e.to_string()))?;
    let count = FlowModel::init(&cfg, &mut crate::rng::rng_from(0))?.param_count();
    let params = r.f32s(count, "flow parameters")?;
    r.finish()?;
    FlowModel::from_parts(cfg, params.into_iter().map(f64::from).collect())
}
